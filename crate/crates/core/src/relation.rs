//! Channel and spatial relation-propagation (CSRP) fusion.
//!
//! For each modality `M` in {RGB, thermal} a feature map `F^M` (`c x h x w`)
//! is projected into `Q^M`, `K^M`, `V^M` by three 1x1 convolutions. Relation
//! matrices compare channels (`c x c`) or pixels (`hw x hw`) of `Q` against
//! `K`; the two modalities' relations are multiplied element-wise and
//! row-normalised into a shared relation `P`, which then aggregates each
//! modality's `V`. The aggregated features of one modality are added, scaled
//! by learnable scalars, to the *other* modality's input:
//!
//! ```text
//! F^R_enhance = F^R + l^T_ch * S^T_ch + l^T_sp * S^T_sp
//! F^T_enhance = F^T + l^R_ch * S^R_ch + l^R_sp * S^R_sp
//! F^C         = F^R_enhance + F^T_enhance
//! ```
//!
//! With the Gaussian relation `exp(x . y)` the product of the two relation
//! matrices is `exp(D^R + D^T)` for dot-product score matrices `D`, so the
//! shared relation is a row softmax of `D^R + D^T`. Row normalisation cancels
//! any positive per-row factor, which is what makes subtracting the row
//! maximum exact.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::{Bound, ConvVars, Init, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RelationFn {
    /// `f(x, y) = x . y`
    DotProduct,
    /// `f(x, y) = exp(x . y)`
    Gaussian,
}

impl fmt::Display for RelationFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationFn::DotProduct => "dot",
            RelationFn::Gaussian => "gaussian",
        })
    }
}

impl FromStr for RelationFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" | "dot_product" => Ok(RelationFn::DotProduct),
            "gaussian" => Ok(RelationFn::Gaussian),
            other => Err(Error::Config(format!(
                "unknown relation function `{other}` (expected dot|gaussian)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// `c x c`, channels against channels.
    Channel,
    /// `hw x hw`, pixels against pixels.
    Spatial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Repr {
    Values,
    /// The matrix is `exp` of the recorded tensor.
    LogValues,
}

/// A square relation matrix recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct RelationMatrix {
    pub scope: Scope,
    repr: Repr,
    var: Var,
}

impl RelationMatrix {
    pub fn from_values(scope: Scope, var: Var) -> Self {
        RelationMatrix {
            scope,
            repr: Repr::Values,
            var,
        }
    }

    /// A matrix given by the logarithm of its entries.
    pub fn from_log_values(scope: Scope, var: Var) -> Self {
        RelationMatrix {
            scope,
            repr: Repr::LogValues,
            var,
        }
    }

    /// The recorded tensor: entries for value matrices, log-entries otherwise.
    pub fn var(&self) -> Var {
        self.var
    }

    pub fn is_log_domain(&self) -> bool {
        self.repr == Repr::LogValues
    }

    /// Side length of the square matrix.
    pub fn extent(&self, tape: &Tape) -> usize {
        tape.dims(self.var)[0]
    }

    /// Materialises the matrix entries; log-domain matrices whose entries
    /// overflow `f64` yield [`Error::NumericRange`].
    pub fn values(&self, tape: &Tape) -> Result<Tensor> {
        let v = tape.value(self.var);
        match self.repr {
            Repr::Values => Ok(v),
            Repr::LogValues => v.exp(),
        }
    }
}

/// Which relation-propagation blocks a CSRP instance runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Blocks {
    pub channel: bool,
    pub spatial: bool,
}

impl Blocks {
    pub const BOTH: Blocks = Blocks {
        channel: true,
        spatial: true,
    };
    pub const CHANNEL: Blocks = Blocks {
        channel: true,
        spatial: false,
    };
    pub const SPATIAL: Blocks = Blocks {
        channel: false,
        spatial: true,
    };
}

/// The Q/K/V 1x1 projections of one modality.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionSet {
    pub q: ConvVars,
    pub k: ConvVars,
    pub v: ConvVars,
}

#[derive(Clone, Copy, Debug)]
pub struct Qkv {
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

/// Learnable aggregation scales; `rgb_*` scale the features extracted from
/// the RGB stream (which enhance the thermal stream) and vice versa.
#[derive(Clone, Copy, Debug)]
pub struct Lambdas {
    pub rgb_ch: Var,
    pub rgb_sp: Var,
    pub thermal_ch: Var,
    pub thermal_sp: Var,
}

/// All parameters of one CSRP instance.
#[derive(Clone, Copy, Debug)]
pub struct CsrpVars {
    pub rgb: ProjectionSet,
    pub thermal: ProjectionSet,
    pub lambdas: Lambdas,
}

impl CsrpVars {
    /// Looks up `{prefix}.{rgb,thermal}.{q,k,v}.*` and `{prefix}.lambda.*`.
    pub fn bind(bound: &Bound, prefix: &str) -> Result<Self> {
        let proj = |m: &str| -> Result<ProjectionSet> {
            Ok(ProjectionSet {
                q: bound.conv(&format!("{prefix}.{m}.q"))?,
                k: bound.conv(&format!("{prefix}.{m}.k"))?,
                v: bound.conv(&format!("{prefix}.{m}.v"))?,
            })
        };
        let lam = |n: &str| bound.var(&format!("{prefix}.lambda.{n}"));
        Ok(CsrpVars {
            rgb: proj("rgb")?,
            thermal: proj("thermal")?,
            lambdas: Lambdas {
                rgb_ch: lam("rgb_ch")?,
                rgb_sp: lam("rgb_sp")?,
                thermal_ch: lam("thermal_ch")?,
                thermal_sp: lam("thermal_sp")?,
            },
        })
    }
}

pub const LAMBDA_NAMES: [&str; 4] = ["rgb_ch", "rgb_sp", "thermal_ch", "thermal_sp"];

/// Value projections start at this fraction of their He-normal draw, so a
/// fresh module perturbs its input streams only slightly. At full scale the
/// propagated terms dominate the enhanced features and plain SGD diverges.
pub const VALUE_INIT_SCALE: f64 = 0.1;

/// Adds a freshly initialised CSRP instance for `channels`-channel features:
/// He-normal query/key projections, down-scaled value projections
/// ([`VALUE_INIT_SCALE`]) and all scales set to 1.
pub fn init_csrp(store: &mut ParamStore, init: &mut Init, prefix: &str, channels: usize) {
    for m in ["rgb", "thermal"] {
        for p in ["q", "k", "v"] {
            init.conv(store, &format!("{prefix}.{m}.{p}"), channels, channels, 1);
        }
        let name = format!("{prefix}.{m}.v.weight");
        let scaled = store
            .get(&name)
            .expect("just initialised")
            .scale(VALUE_INIT_SCALE);
        store.insert(name, scaled);
    }
    for n in LAMBDA_NAMES {
        store.insert(format!("{prefix}.lambda.{n}"), Tensor::scalar(1.0));
    }
}

/// Output of [`csrp_forward`] / [`interactive_fuse`].
#[derive(Clone, Copy, Debug)]
pub struct FusionState {
    pub rgb_enhanced: Var,
    pub thermal_enhanced: Var,
    pub fused: Var,
    /// Shared channel relation, when the channel block ran.
    pub shared_channel: Option<RelationMatrix>,
    /// Shared spatial relation, when the spatial block ran.
    pub shared_spatial: Option<RelationMatrix>,
}

/// Modality-shared features captured from each stream; absent blocks are `None`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SharedFeatures {
    pub rgb_ch: Option<Var>,
    pub rgb_sp: Option<Var>,
    pub thermal_ch: Option<Var>,
    pub thermal_sp: Option<Var>,
}

fn chw(tape: &Tape, x: Var, what: &str) -> Result<(usize, usize, usize)> {
    match tape.dims(x)[..] {
        [c, h, w] => Ok((c, h, w)),
        ref d => Err(Error::shape(format!("{what} must be c x h x w, got {d:?}"))),
    }
}

fn same_dims(tape: &Tape, a: Var, b: Var, what: &str) -> Result<()> {
    let (da, db) = (tape.dims(a), tape.dims(b));
    if da != db {
        return Err(Error::shape(format!("{what}: dims {da:?} vs {db:?}")));
    }
    Ok(())
}

/// Three independent 1x1 convolutions of `f`.
pub fn project(tape: &Tape, f: Var, p: &ProjectionSet) -> Result<Qkv> {
    let qkv = Qkv {
        q: p.q.apply(tape, f, 1)?,
        k: p.k.apply(tape, f, 1)?,
        v: p.v.apply(tape, f, 1)?,
    };
    for out in [qkv.q, qkv.k, qkv.v] {
        same_dims(tape, f, out, "projection output")?;
    }
    Ok(qkv)
}

fn flatten(tape: &Tape, x: Var) -> Result<Var> {
    let (c, h, w) = chw(tape, x, "relation input")?;
    tape.reshape(x, &[c, h * w])
}

/// Dot-product scores are the relation itself; Gaussian scores are its log.
fn relation(scores: Var, scope: Scope, f: RelationFn) -> RelationMatrix {
    match f {
        RelationFn::DotProduct => RelationMatrix::from_values(scope, scores),
        RelationFn::Gaussian => RelationMatrix::from_log_values(scope, scores),
    }
}

/// `W[m, n] = f(q_m, k_n)` over the `hw`-length channel vectors of `Q` and `K`.
pub fn channel_relation(tape: &Tape, q: Var, k: Var, f: RelationFn) -> Result<RelationMatrix> {
    same_dims(tape, q, k, "channel_relation")?;
    let (qf, kf) = (flatten(tape, q)?, flatten(tape, k)?);
    let kt = tape.transpose(kf)?;
    let scores = tape.matmul(qf, kt)?;
    Ok(relation(scores, Scope::Channel, f))
}

/// `W[u, v] = f(q_u, k_v)` over the `c`-length pixel vectors of `Q` and `K`.
pub fn spatial_relation(tape: &Tape, q: Var, k: Var, f: RelationFn) -> Result<RelationMatrix> {
    same_dims(tape, q, k, "spatial_relation")?;
    let (qf, kf) = (flatten(tape, q)?, flatten(tape, k)?);
    let qt = tape.transpose(qf)?;
    let scores = tape.matmul(qt, kf)?;
    Ok(relation(scores, Scope::Spatial, f))
}

/// Shared relation of the two modalities' relation matrices.
///
/// Dot product: `row_normalize(relu(W_R) * relu(W_T))`. Gaussian:
/// `row_normalize(W_R * W_T)`, evaluated as a max-shifted row softmax of
/// `log W_R + log W_T` when the inputs are held in the log domain. Rows
/// with pre-normalisation mass `<= 1e-12` come out as zero rows.
pub fn shared_relation(
    tape: &Tape,
    w_rgb: &RelationMatrix,
    w_thermal: &RelationMatrix,
    f: RelationFn,
) -> Result<RelationMatrix> {
    if w_rgb.scope != w_thermal.scope {
        return Err(Error::shape(format!(
            "shared_relation scope mismatch: {:?} vs {:?}",
            w_rgb.scope, w_thermal.scope
        )));
    }
    same_dims(tape, w_rgb.var, w_thermal.var, "shared_relation")?;
    let scope = w_rgb.scope;
    let p = match (f, w_rgb.repr, w_thermal.repr) {
        (RelationFn::Gaussian, Repr::LogValues, Repr::LogValues) => {
            let logits = tape.add(w_rgb.var, w_thermal.var)?;
            tape.row_softmax(logits)?
        }
        (RelationFn::Gaussian, Repr::Values, Repr::Values) => {
            let prod = tape.mul(w_rgb.var, w_thermal.var)?;
            tape.row_normalize(prod)?
        }
        (RelationFn::DotProduct, Repr::Values, Repr::Values) => {
            let (r, t) = (tape.relu(w_rgb.var)?, tape.relu(w_thermal.var)?);
            let prod = tape.mul(r, t)?;
            tape.row_normalize(prod)?
        }
        _ => {
            return Err(Error::contract(format!(
                "shared_relation({f}) got relation matrices built for another relation function"
            )))
        }
    };
    Ok(RelationMatrix::from_values(scope, p))
}

fn check_extent(tape: &Tape, p: &RelationMatrix, scope: Scope, expected: usize) -> Result<()> {
    if p.scope != scope || p.is_log_domain() {
        return Err(Error::shape(format!(
            "expected a {scope:?} shared relation, got {:?}",
            p.scope
        )));
    }
    let d = tape.dims(p.var);
    if d != [expected, expected] {
        return Err(Error::shape(format!(
            "{scope:?} relation must be {expected}x{expected}, got {d:?}"
        )));
    }
    Ok(())
}

/// `S_ch = P_ch V` with `V` viewed as `c x hw`.
pub fn propagate_channel(tape: &Tape, p_ch: &RelationMatrix, v: Var) -> Result<Var> {
    let (c, h, w) = chw(tape, v, "propagate_channel value")?;
    check_extent(tape, p_ch, Scope::Channel, c)?;
    let vf = tape.reshape(v, &[c, h * w])?;
    let s = tape.matmul(p_ch.var, vf)?;
    tape.reshape(s, &[c, h, w])
}

/// `S_sp = V P_sp` with `V` viewed as `c x hw`.
pub fn propagate_spatial(tape: &Tape, v: Var, p_sp: &RelationMatrix) -> Result<Var> {
    let (c, h, w) = chw(tape, v, "propagate_spatial value")?;
    check_extent(tape, p_sp, Scope::Spatial, h * w)?;
    let vf = tape.reshape(v, &[c, h * w])?;
    let s = tape.matmul(vf, p_sp.var)?;
    tape.reshape(s, &[c, h, w])
}

fn add_scaled(tape: &Tape, acc: Var, s: Option<Var>, lambda: Var) -> Result<Var> {
    match s {
        None => Ok(acc),
        Some(s) => {
            same_dims(tape, acc, s, "interactive_fuse")?;
            let scaled = tape.scale_by(s, lambda)?;
            tape.add(acc, scaled)
        }
    }
}

/// Cross-modal aggregation: thermal shared features enhance the RGB input
/// and vice versa; the fused feature is the sum of both enhanced maps.
pub fn interactive_fuse(
    tape: &Tape,
    f_rgb: Var,
    f_thermal: Var,
    shared: &SharedFeatures,
    lambdas: &Lambdas,
) -> Result<FusionState> {
    same_dims(tape, f_rgb, f_thermal, "interactive_fuse")?;
    let r = add_scaled(tape, f_rgb, shared.thermal_ch, lambdas.thermal_ch)?;
    let r = add_scaled(tape, r, shared.thermal_sp, lambdas.thermal_sp)?;
    let t = add_scaled(tape, f_thermal, shared.rgb_ch, lambdas.rgb_ch)?;
    let t = add_scaled(tape, t, shared.rgb_sp, lambdas.rgb_sp)?;
    let fused = tape.add(r, t)?;
    Ok(FusionState {
        rgb_enhanced: r,
        thermal_enhanced: t,
        fused,
        shared_channel: None,
        shared_spatial: None,
    })
}

/// The full CSRP module on one pair of same-sized feature maps.
pub fn csrp_forward(
    tape: &Tape,
    f_rgb: Var,
    f_thermal: Var,
    params: &CsrpVars,
    f: RelationFn,
    blocks: Blocks,
) -> Result<FusionState> {
    same_dims(tape, f_rgb, f_thermal, "csrp_forward")?;
    let r = project(tape, f_rgb, &params.rgb)?;
    let t = project(tape, f_thermal, &params.thermal)?;

    let mut shared = SharedFeatures::default();
    let mut p_ch = None;
    let mut p_sp = None;
    if blocks.channel {
        let w_r = channel_relation(tape, r.q, r.k, f)?;
        let w_t = channel_relation(tape, t.q, t.k, f)?;
        let p = shared_relation(tape, &w_r, &w_t, f)?;
        shared.rgb_ch = Some(propagate_channel(tape, &p, r.v)?);
        shared.thermal_ch = Some(propagate_channel(tape, &p, t.v)?);
        p_ch = Some(p);
    }
    if blocks.spatial {
        let w_r = spatial_relation(tape, r.q, r.k, f)?;
        let w_t = spatial_relation(tape, t.q, t.k, f)?;
        let p = shared_relation(tape, &w_r, &w_t, f)?;
        shared.rgb_sp = Some(propagate_spatial(tape, r.v, &p)?);
        shared.thermal_sp = Some(propagate_spatial(tape, t.v, &p)?);
        p_sp = Some(p);
    }
    let mut state = interactive_fuse(tape, f_rgb, f_thermal, &shared, &params.lambdas)?;
    state.shared_channel = p_ch;
    state.shared_spatial = p_sp;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{identity_conv1x1, zero_conv};

    fn mat(tape: &Tape, rows: usize, cols: usize, data: &[f64]) -> Var {
        tape.constant(Tensor::new(&[rows, cols], data.to_vec()).unwrap())
    }

    fn feat(tape: &Tape, dims: &[usize], data: &[f64]) -> Var {
        tape.constant(Tensor::new(dims, data.to_vec()).unwrap())
    }

    #[test]
    fn channel_relation_orthonormal_rows_gives_identity() {
        let tape = Tape::new();
        // 3 channels over a 2x2 map; rows are orthonormal in R^4
        let q = feat(
            &tape,
            &[3, 2, 2],
            &[1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 0., 1.],
        );
        let w = channel_relation(&tape, q, q, RelationFn::DotProduct).unwrap();
        assert_eq!(w.values(&tape).unwrap(), Tensor::identity(3));
    }

    #[test]
    fn channel_relation_hand_values() {
        let tape = Tape::new();
        // c = 2 channels of a 1x2 map
        let q = feat(&tape, &[2, 1, 2], &[1., 0., 0., 1.]);
        let k = feat(&tape, &[2, 1, 2], &[2., 3., 4., 5.]);
        let w = channel_relation(&tape, q, k, RelationFn::DotProduct).unwrap();
        // W[m,n] = q_m . k_n
        assert_eq!(w.values(&tape).unwrap().data(), &[2., 4., 3., 5.]);
    }

    #[test]
    fn gaussian_of_zeros_is_all_ones() {
        let tape = Tape::new();
        let z = feat(&tape, &[2, 2, 2], &[0.0; 8]);
        let w = channel_relation(&tape, z, z, RelationFn::Gaussian).unwrap();
        assert_eq!(w.values(&tape).unwrap(), Tensor::ones(&[2, 2]));
        let s = spatial_relation(&tape, z, z, RelationFn::Gaussian).unwrap();
        assert_eq!(s.values(&tape).unwrap(), Tensor::ones(&[4, 4]));
    }

    #[test]
    fn gaussian_materialisation_overflow_is_reported() {
        let tape = Tape::new();
        let q = feat(&tape, &[1, 1, 1], &[30.0]);
        let w = channel_relation(&tape, q, q, RelationFn::Gaussian).unwrap();
        assert!(matches!(w.values(&tape), Err(Error::NumericRange(_))));
        // the shared path stays finite
        let p = shared_relation(&tape, &w, &w, RelationFn::Gaussian).unwrap();
        assert_eq!(p.values(&tape).unwrap().data(), &[1.0]);
    }

    #[test]
    fn spatial_relation_single_pixel_and_two_pixels() {
        let tape = Tape::new();
        let q = feat(&tape, &[3, 1, 1], &[1., 2., 3.]);
        let k = feat(&tape, &[3, 1, 1], &[-1., 0.5, 2.]);
        let w = spatial_relation(&tape, q, k, RelationFn::DotProduct).unwrap();
        assert_eq!(w.values(&tape).unwrap().data(), &[-1. + 1. + 6.]);

        // c = 1, two pixels: W[u,v] = q_u k_v
        let q = feat(&tape, &[1, 1, 2], &[2., -3.]);
        let k = feat(&tape, &[1, 1, 2], &[5., 7.]);
        let w = spatial_relation(&tape, q, k, RelationFn::DotProduct).unwrap();
        assert_eq!(w.values(&tape).unwrap().data(), &[10., 14., -15., -21.]);
    }

    #[test]
    fn shared_relation_identity_and_relu_annihilation() {
        let tape = Tape::new();
        let eye = RelationMatrix::from_values(Scope::Channel, tape.constant(Tensor::identity(3)));
        let p = shared_relation(&tape, &eye, &eye, RelationFn::DotProduct).unwrap();
        assert_eq!(p.values(&tape).unwrap(), Tensor::identity(3));

        let w_r =
            RelationMatrix::from_values(Scope::Channel, mat(&tape, 2, 2, &[-1., -2., 1., 3.]));
        let w_t = RelationMatrix::from_values(Scope::Channel, mat(&tape, 2, 2, &[5., 5., 2., 1.]));
        let p = shared_relation(&tape, &w_r, &w_t, RelationFn::DotProduct)
            .unwrap()
            .values(&tape)
            .unwrap();
        assert_eq!(&p.data()[..2], &[0., 0.]);
        assert!((p.data()[2] - 0.4).abs() < 1e-15 && (p.data()[3] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn shared_relation_scope_mismatch() {
        let tape = Tape::new();
        let a = RelationMatrix::from_values(Scope::Channel, tape.constant(Tensor::identity(2)));
        let b = RelationMatrix::from_values(Scope::Spatial, tape.constant(Tensor::identity(2)));
        assert!(matches!(
            shared_relation(&tape, &a, &b, RelationFn::DotProduct),
            Err(Error::Shape(_))
        ));
        let c = RelationMatrix::from_values(Scope::Channel, tape.constant(Tensor::identity(3)));
        assert!(matches!(
            shared_relation(&tape, &a, &c, RelationFn::DotProduct),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn propagation_identity_and_uniform() {
        let tape = Tape::new();
        let vt = Tensor::from_fn(&[3, 2, 2], |i| i as f64 * 0.5 - 2.0);
        let v = tape.constant(vt.clone());
        let eye = RelationMatrix::from_values(Scope::Channel, tape.constant(Tensor::identity(3)));
        let s = propagate_channel(&tape, &eye, v).unwrap();
        assert_eq!(tape.value(s), vt);

        let uni = RelationMatrix::from_values(
            Scope::Channel,
            tape.constant(Tensor::full(&[3, 3], 1.0 / 3.0)),
        );
        let s = tape.value(propagate_channel(&tape, &uni, v).unwrap());
        for px in 0..4 {
            let mean = (0..3).map(|c| vt.data()[c * 4 + px]).sum::<f64>() / 3.0;
            for c in 0..3 {
                assert!((s.data()[c * 4 + px] - mean).abs() < 1e-14);
            }
        }

        let eye4 = RelationMatrix::from_values(Scope::Spatial, tape.constant(Tensor::identity(4)));
        assert_eq!(tape.value(propagate_spatial(&tape, v, &eye4).unwrap()), vt);
        let uni4 =
            RelationMatrix::from_values(Scope::Spatial, tape.constant(Tensor::full(&[4, 4], 0.25)));
        let s = tape.value(propagate_spatial(&tape, v, &uni4).unwrap());
        for c in 0..3 {
            let mean = vt.data()[c * 4..c * 4 + 4].iter().sum::<f64>() / 4.0;
            for px in 0..4 {
                assert!((s.data()[c * 4 + px] - mean).abs() < 1e-14);
            }
        }
        // wrong extent
        assert!(matches!(
            propagate_spatial(&tape, v, &eye),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            propagate_channel(&tape, &eye4, v),
            Err(Error::Shape(_))
        ));
    }

    fn lambdas(tape: &Tape, value: f64) -> Lambdas {
        Lambdas {
            rgb_ch: tape.constant(Tensor::scalar(value)),
            rgb_sp: tape.constant(Tensor::scalar(value)),
            thermal_ch: tape.constant(Tensor::scalar(value)),
            thermal_sp: tape.constant(Tensor::scalar(value)),
        }
    }

    #[test]
    fn fuse_with_zero_lambdas_passes_inputs_through() {
        let tape = Tape::new();
        let fr = Tensor::from_fn(&[2, 2, 2], |i| i as f64);
        let ft = Tensor::from_fn(&[2, 2, 2], |i| 1.0 - i as f64 * 0.3);
        let s = |k: f64| Some(tape.constant(Tensor::full(&[2, 2, 2], k)));
        let shared = SharedFeatures {
            rgb_ch: s(1.0),
            rgb_sp: s(2.0),
            thermal_ch: s(3.0),
            thermal_sp: s(4.0),
        };
        let (r, t) = (tape.constant(fr.clone()), tape.constant(ft.clone()));
        let st = interactive_fuse(&tape, r, t, &shared, &lambdas(&tape, 0.0)).unwrap();
        assert_eq!(tape.value(st.rgb_enhanced), fr);
        assert_eq!(tape.value(st.thermal_enhanced), ft);
        assert_eq!(tape.value(st.fused), fr.add(&ft).unwrap());

        // all shared features zero behaves like lambda = 0
        let zero = Some(tape.constant(Tensor::zeros(&[2, 2, 2])));
        let shared = SharedFeatures {
            rgb_ch: zero,
            rgb_sp: zero,
            thermal_ch: zero,
            thermal_sp: zero,
        };
        let st = interactive_fuse(&tape, r, t, &shared, &lambdas(&tape, 1.0)).unwrap();
        assert_eq!(tape.value(st.rgb_enhanced), fr);
        assert_eq!(tape.value(st.thermal_enhanced), ft);
    }

    #[test]
    fn fuse_cross_modal_sum() {
        let tape = Tape::new();
        let g = |seed: usize| Tensor::from_fn(&[1, 2, 2], move |i| ((i + seed) as f64 * 1.7).sin());
        let (fr, ft, rc, rs, tc, ts) = (g(0), g(1), g(2), g(3), g(4), g(5));
        let c = |t: &Tensor| tape.constant(t.clone());
        let shared = SharedFeatures {
            rgb_ch: Some(c(&rc)),
            rgb_sp: Some(c(&rs)),
            thermal_ch: Some(c(&tc)),
            thermal_sp: Some(c(&ts)),
        };
        let st = interactive_fuse(&tape, c(&fr), c(&ft), &shared, &lambdas(&tape, 1.0)).unwrap();
        for i in 0..4 {
            let r = fr.data()[i] + tc.data()[i] + ts.data()[i];
            let t = ft.data()[i] + rc.data()[i] + rs.data()[i];
            assert!((tape.value(st.rgb_enhanced).data()[i] - r).abs() < 1e-15);
            assert!((tape.value(st.thermal_enhanced).data()[i] - t).abs() < 1e-15);
            assert!((tape.value(st.fused).data()[i] - (r + t)).abs() < 1e-14);
        }
    }

    fn identity_projections(c: usize) -> ParamStore {
        let mut store = ParamStore::new();
        for m in ["rgb", "thermal"] {
            for p in ["q", "k", "v"] {
                identity_conv1x1(&mut store, &format!("x.{m}.{p}"), c);
            }
        }
        for n in LAMBDA_NAMES {
            store.insert(format!("x.lambda.{n}"), Tensor::scalar(1.0));
        }
        store
    }

    #[test]
    fn project_identity_and_zero() {
        let tape = Tape::new();
        let mut store = identity_projections(2);
        let f = Tensor::from_fn(&[2, 3, 3], |i| i as f64 - 4.0);
        let bound = store.bind_frozen(&tape);
        let vars = CsrpVars::bind(&bound, "x").unwrap();
        let fv = tape.constant(f.clone());
        let qkv = project(&tape, fv, &vars.rgb).unwrap();
        for v in [qkv.q, qkv.k, qkv.v] {
            assert_eq!(tape.value(v), f);
        }
        for p in ["q", "k", "v"] {
            zero_conv(&mut store, &format!("x.rgb.{p}"), 2, 2, 1);
        }
        let bound = store.bind_frozen(&tape);
        let vars = CsrpVars::bind(&bound, "x").unwrap();
        let qkv = project(&tape, fv, &vars.rgb).unwrap();
        for v in [qkv.q, qkv.k, qkv.v] {
            assert_eq!(tape.value(v), Tensor::zeros(&[2, 3, 3]));
        }
        // channel mismatch
        let bad = tape.constant(Tensor::zeros(&[3, 3, 3]));
        assert!(matches!(
            project(&tape, bad, &vars.rgb),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_value_projections_reduce_to_lambda_zero() {
        let mut store = identity_projections(2);
        for m in ["rgb", "thermal"] {
            zero_conv(&mut store, &format!("x.{m}.v"), 2, 2, 1);
        }
        let tape = Tape::new();
        let vars = CsrpVars::bind(&store.bind_frozen(&tape), "x").unwrap();
        let fr = Tensor::from_fn(&[2, 2, 2], |i| (i as f64).cos());
        let ft = Tensor::from_fn(&[2, 2, 2], |i| (i as f64 * 0.3).sin());
        for f in [RelationFn::DotProduct, RelationFn::Gaussian] {
            let st = csrp_forward(
                &tape,
                tape.constant(fr.clone()),
                tape.constant(ft.clone()),
                &vars,
                f,
                Blocks::BOTH,
            )
            .unwrap();
            assert_eq!(tape.value(st.rgb_enhanced), fr);
            assert_eq!(tape.value(st.thermal_enhanced), ft);
        }
    }

    #[test]
    fn relation_fn_parsing() {
        assert_eq!("dot".parse::<RelationFn>().unwrap(), RelationFn::DotProduct);
        assert_eq!(
            "gaussian".parse::<RelationFn>().unwrap(),
            RelationFn::Gaussian
        );
        assert!("cosine".parse::<RelationFn>().is_err());
    }
}
