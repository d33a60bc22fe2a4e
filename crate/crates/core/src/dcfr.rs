//! Dual-path cascaded feature refinement and the two classifier heads.
//!
//! The auxiliary path runs merging blocks over the shallow fused features,
//! deepest first:
//!
//! ```text
//! adj   = conv1(F_C)                       1x1, reduce channels
//! e     = conv2(concat(adj, up(prev))) + adj   (first block: conv2(adj) + adj)
//! merge = relu(conv3(e)) + e               3x3
//! ```
//!
//! The main path starts at the deepest fused feature and cascades Upception
//! blocks (`relu(conv3x3(up(x))) + conv1x1(up(x))`, halving channels). After
//! each block the fused feature of the matching layer is added, and
//! optionally a 1x1 projection of that layer's merged auxiliary feature.

use crate::error::{Error, Result};
use crate::params::{Bound, ConvVars, Init, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct MergingBlock {
    pub conv1: ConvVars,
    pub conv2: ConvVars,
    pub conv3: ConvVars,
}

impl MergingBlock {
    pub fn bind(bound: &Bound, prefix: &str) -> Result<Self> {
        Ok(MergingBlock {
            conv1: bound.conv(&format!("{prefix}.conv1"))?,
            conv2: bound.conv(&format!("{prefix}.conv2"))?,
            conv3: bound.conv(&format!("{prefix}.conv3"))?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Upception {
    pub conv: ConvVars,
    pub res: ConvVars,
}

impl Upception {
    pub fn bind(bound: &Bound, prefix: &str) -> Result<Self> {
        Ok(Upception {
            conv: bound.conv(&format!("{prefix}.conv"))?,
            res: bound.conv(&format!("{prefix}.res"))?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundaryHead {
    pub conv1: ConvVars,
    pub conv2: ConvVars,
}

fn spatial(tape: &Tape, x: Var) -> Result<(usize, usize)> {
    match tape.dims(x)[..] {
        [_, h, w] => Ok((h, w)),
        ref d => Err(Error::shape(format!(
            "expected a c x h x w feature, got {d:?}"
        ))),
    }
}

/// One merging block; `prev` is the previous (coarser) block's output.
pub fn merging_block(tape: &Tape, f_c: Var, prev: Option<Var>, p: &MergingBlock) -> Result<Var> {
    let adj = p.conv1.apply(tape, f_c, 1)?;
    let mixed_in = match prev {
        None => adj,
        Some(prev) => {
            let (h, w) = spatial(tape, f_c)?;
            let (ph, pw) = spatial(tape, prev)?;
            if (2 * ph, 2 * pw) != (h, w) {
                return Err(Error::shape(format!(
                    "previous merge {ph}x{pw} is not half of {h}x{w}"
                )));
            }
            let up = tape.upsample2x(prev)?;
            tape.concat_channels(adj, up)?
        }
    };
    let e = p.conv2.apply(tape, mixed_in, 1)?;
    let e = tape.add(e, adj)?;
    let r = p.conv3.apply(tape, e, 1)?;
    let r = tape.relu(r)?;
    tape.add(r, e)
}

/// Merging-block cascade over `fused` (deepest layer first); returns every
/// block's output in the same order, the last one being the boundary feature.
pub fn auxiliary_path(tape: &Tape, fused: &[Var], blocks: &[MergingBlock]) -> Result<Vec<Var>> {
    if fused.len() != blocks.len() {
        return Err(Error::contract(format!(
            "{} auxiliary features for {} merging blocks",
            fused.len(),
            blocks.len()
        )));
    }
    let mut merges: Vec<Var> = Vec::with_capacity(fused.len());
    for (&f, block) in fused.iter().zip(blocks) {
        let m = merging_block(tape, f, merges.last().copied(), block)?;
        merges.push(m);
    }
    Ok(merges)
}

/// Doubles the spatial extent and maps channels through two parallel branches.
pub fn upception(tape: &Tape, x: Var, p: &Upception) -> Result<Var> {
    let up = tape.upsample2x(x)?;
    let main = p.conv.apply(tape, up, 1)?;
    let main = tape.relu(main)?;
    let res = p.res.apply(tape, up, 1)?;
    tape.add(main, res)
}

/// Main refinement path.
#[derive(Clone, Debug)]
pub struct MainPath {
    /// `ups[k]` produces the extent of layer `L - 1 - k` (1-based layers).
    pub ups: Vec<Upception>,
    /// Per reached layer (same order as `ups`), an optional 1x1 projection
    /// of the auxiliary merge at that layer.
    pub skips: Vec<Option<ConvVars>>,
}

/// Runs the main path. `fused` lists the fused features shallow to deep;
/// `aux_merges` lists auxiliary outputs deepest first and is consulted only
/// for layers with a skip projection.
pub fn main_path(tape: &Tape, fused: &[Var], aux_merges: &[Var], p: &MainPath) -> Result<Var> {
    let layers = fused.len();
    if layers == 0 || p.ups.len() != layers - 1 || p.skips.len() != p.ups.len() {
        return Err(Error::contract(format!(
            "main path with {} blocks / {} skips cannot refine {layers} layers",
            p.ups.len(),
            p.skips.len()
        )));
    }
    let mut x = fused[layers - 1];
    for (k, up) in p.ups.iter().enumerate() {
        x = upception(tape, x, up)?;
        // 0-based index of the layer whose extent x now has
        let layer = layers - 2 - k;
        x = tape.add(x, fused[layer])?;
        if let Some(skip) = &p.skips[k] {
            // aux merges are deepest first and end at the shallowest layer
            let idx = aux_merges.len().checked_sub(layer + 1).ok_or_else(|| {
                Error::contract(format!("no auxiliary feature for layer {}", layer + 1))
            })?;
            let s = skip.apply(tape, aux_merges[idx], 1)?;
            x = tape.add(x, s)?;
        }
    }
    Ok(x)
}

/// Nearest-neighbour upsampling by powers of two until `x` reaches `h x w`.
pub fn upsample_to(tape: &Tape, x: Var, h: usize, w: usize) -> Result<Var> {
    let mut x = x;
    loop {
        let (xh, xw) = spatial(tape, x)?;
        if (xh, xw) == (h, w) {
            return Ok(x);
        }
        if xh == 0 || xw == 0 || xh * 2 > h || xw * 2 > w {
            return Err(Error::shape(format!(
                "{xh}x{xw} does not reach {h}x{w} by doubling"
            )));
        }
        x = tape.upsample2x(x)?;
    }
}

/// `conv2(relu(conv1(F_bdr)))`, two channels, upsampled to `h x w`.
pub fn boundary_classifier(
    tape: &Tape,
    f_bdr: Var,
    p: &BoundaryHead,
    h: usize,
    w: usize,
) -> Result<Var> {
    let x = p.conv1.apply(tape, f_bdr, 1)?;
    let x = tape.relu(x)?;
    let x = p.conv2.apply(tape, x, 1)?;
    upsample_to(tape, x, h, w)
}

/// One Upception stage emitting the class logits.
pub fn semantic_classifier(tape: &Tape, f_seg: Var, p: &Upception) -> Result<Var> {
    upception(tape, f_seg, p)
}

/// Channel counts of the four fused layers, shallow to deep.
pub type LayerChannels = [usize; 4];

fn half(c: usize) -> usize {
    (c / 2).max(1)
}

/// Adds an Upception block mapping `c_in` to `c_out` channels.
pub fn init_upception(
    store: &mut ParamStore,
    init: &mut Init,
    prefix: &str,
    c_in: usize,
    c_out: usize,
) {
    init.conv(store, &format!("{prefix}.conv"), c_out, c_in, 3);
    init.conv(store, &format!("{prefix}.res"), c_out, c_in, 1);
}

/// Main-path parameters `dcfr.main.up{1,2,3}.*`; block `k` halves the
/// channels of layer `5 - k` down to those of layer `4 - k`. With
/// `aux_skips`, each block also gets a `skip` projection from the merged
/// width (`channels[0]`).
pub fn init_main_path(
    store: &mut ParamStore,
    init: &mut Init,
    channels: LayerChannels,
    aux_skips: bool,
) {
    for k in 1..=3 {
        let (c_in, c_out) = (channels[4 - k], channels[3 - k]);
        debug_assert_eq!(half(c_in), c_out);
        let prefix = format!("dcfr.main.up{k}");
        init_upception(store, init, &prefix, c_in, c_out);
        if aux_skips {
            init.conv(store, &format!("{prefix}.skip"), c_out, channels[0], 1);
        }
    }
}

/// Auxiliary-path parameters `dcfr.aux.l{3,2,1}.conv{1,2,3}.*`; every block
/// works at the layer-1 width.
pub fn init_aux_path(store: &mut ParamStore, init: &mut Init, channels: LayerChannels) {
    let width = channels[0];
    for l in [3usize, 2, 1] {
        let prefix = format!("dcfr.aux.l{l}");
        init.conv(store, &format!("{prefix}.conv1"), width, channels[l - 1], 1);
        let concat = if l == 3 { width } else { 2 * width };
        init.conv(store, &format!("{prefix}.conv2"), width, concat, 1);
        init.conv(store, &format!("{prefix}.conv3"), width, width, 3);
    }
}

/// `cls.bdr.conv{1,2}.*` on the layer-1 width.
pub fn init_boundary_head(store: &mut ParamStore, init: &mut Init, width: usize) {
    init.conv(store, "cls.bdr.conv1", width, width, 1);
    init.conv(store, "cls.bdr.conv2", 2, width, 3);
}

/// `cls.seg.{conv,res}.*` from the layer-1 width to `classes` logits.
pub fn init_semantic_head(store: &mut ParamStore, init: &mut Init, width: usize, classes: usize) {
    init_upception(store, init, "cls.seg", width, classes);
}

/// Bound auxiliary path, deepest block first.
pub fn bind_aux_path(bound: &Bound) -> Result<Vec<MergingBlock>> {
    [3, 2, 1]
        .iter()
        .map(|l| MergingBlock::bind(bound, &format!("dcfr.aux.l{l}")))
        .collect()
}

pub fn bind_main_path(bound: &Bound, aux_skips: bool) -> Result<MainPath> {
    let mut ups = Vec::new();
    let mut skips = Vec::new();
    for k in 1..=3 {
        let prefix = format!("dcfr.main.up{k}");
        ups.push(Upception::bind(bound, &prefix)?);
        skips.push(if aux_skips {
            Some(bound.conv(&format!("{prefix}.skip"))?)
        } else {
            None
        });
    }
    Ok(MainPath { ups, skips })
}

pub fn bind_boundary_head(bound: &Bound) -> Result<BoundaryHead> {
    Ok(BoundaryHead {
        conv1: bound.conv("cls.bdr.conv1")?,
        conv2: bound.conv("cls.bdr.conv2")?,
    })
}

pub fn bind_semantic_head(bound: &Bound) -> Result<Upception> {
    Upception::bind(bound, "cls.seg")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{identity_conv1x1, zero_conv};
    use crate::tensor::Tensor;

    fn random_store(channels: LayerChannels, classes: usize, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        init_aux_path(&mut store, &mut init, channels);
        init_main_path(&mut store, &mut init, channels, true);
        init_boundary_head(&mut store, &mut init, channels[0]);
        init_semantic_head(&mut store, &mut init, channels[0], classes);
        // non-zero biases so the oracle exercises them
        let names: Vec<String> = store
            .names()
            .filter(|n| n.ends_with(".bias"))
            .map(String::from)
            .collect();
        for (i, n) in names.iter().enumerate() {
            let b = store.get(n).unwrap().map(|_| 0.0);
            let b = Tensor::from_fn(b.dims(), |j| ((i * 5 + j) as f64 * 0.61).sin() * 0.1);
            store.insert(n.clone(), b);
        }
        store
    }

    fn conv(store: &ParamStore, prefix: &str, x: &Tensor) -> Tensor {
        let w = store.get(&format!("{prefix}.weight")).unwrap();
        let b = store.get(&format!("{prefix}.bias")).unwrap();
        x.conv2d(w, b, 1, w.dims()[2] / 2).unwrap()
    }

    /// Straight-line merging block on plain tensors.
    fn merge_oracle(store: &ParamStore, prefix: &str, f: &Tensor, prev: Option<&Tensor>) -> Tensor {
        let adj = conv(store, &format!("{prefix}.conv1"), f);
        let cat = match prev {
            Some(p) => adj.concat_channels(&p.upsample2x().unwrap()).unwrap(),
            None => adj.clone(),
        };
        let e = conv(store, &format!("{prefix}.conv2"), &cat)
            .add(&adj)
            .unwrap();
        conv(store, &format!("{prefix}.conv3"), &e)
            .relu()
            .add(&e)
            .unwrap()
    }

    fn upception_oracle(store: &ParamStore, prefix: &str, x: &Tensor) -> Tensor {
        let up = x.upsample2x().unwrap();
        conv(store, &format!("{prefix}.conv"), &up)
            .relu()
            .add(&conv(store, &format!("{prefix}.res"), &up))
            .unwrap()
    }

    fn features(channels: LayerChannels, size: usize) -> Vec<Tensor> {
        (0..4)
            .map(|l| {
                let s = size >> l;
                Tensor::from_fn(&[channels[l], s, s], |i| {
                    ((i * (l + 3)) as f64 * 0.37).sin()
                })
            })
            .collect()
    }

    #[test]
    fn merging_block_zero_and_skip_only() {
        let tape = Tape::new();
        let f = Tensor::from_fn(&[3, 4, 4], |i| i as f64 - 20.0);
        let fv = tape.constant(f.clone());

        let mut store = ParamStore::new();
        for c in ["conv1", "conv2"] {
            zero_conv(&mut store, &format!("m.{c}"), 3, 3, 1);
        }
        zero_conv(&mut store, "m.conv3", 3, 3, 3);
        let b = MergingBlock::bind(&store.bind_frozen(&tape), "m").unwrap();
        assert_eq!(
            tape.value(merging_block(&tape, fv, None, &b).unwrap()),
            Tensor::zeros(&[3, 4, 4])
        );

        identity_conv1x1(&mut store, "m.conv1", 3);
        let b = MergingBlock::bind(&store.bind_frozen(&tape), "m").unwrap();
        assert_eq!(tape.value(merging_block(&tape, fv, None, &b).unwrap()), f);
    }

    #[test]
    fn merging_block_rejects_bad_ratio() {
        let channels = [2, 4, 8, 16];
        let store = random_store(channels, 3, 1);
        let tape = Tape::new();
        let blocks = bind_aux_path(&store.bind_frozen(&tape)).unwrap();
        let f = tape.constant(Tensor::zeros(&[4, 8, 8]));
        let prev = tape.constant(Tensor::zeros(&[2, 3, 3]));
        assert!(matches!(
            merging_block(&tape, f, Some(prev), &blocks[1]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn paths_match_oracles() {
        let channels = [2, 4, 8, 16];
        let store = random_store(channels, 3, 9);
        let feats = features(channels, 16);
        let tape = Tape::new();
        let bound = store.bind_frozen(&tape);
        let fv: Vec<Var> = feats.iter().map(|t| tape.constant(t.clone())).collect();

        let blocks = bind_aux_path(&bound).unwrap();
        let merges = auxiliary_path(&tape, &[fv[2], fv[1], fv[0]], &blocks).unwrap();
        let m3 = merge_oracle(&store, "dcfr.aux.l3", &feats[2], None);
        let m2 = merge_oracle(&store, "dcfr.aux.l2", &feats[1], Some(&m3));
        let m1 = merge_oracle(&store, "dcfr.aux.l1", &feats[0], Some(&m2));
        assert_eq!(tape.value(merges[0]), m3);
        assert_eq!(tape.value(merges[1]), m2);
        assert_eq!(tape.value(merges[2]), m1);

        let main = bind_main_path(&bound, true).unwrap();
        let seg = main_path(&tape, &fv, &merges, &main).unwrap();
        let mut x = feats[3].clone();
        for (k, m) in [(1, &m3), (2, &m2), (3, &m1)] {
            x = upception_oracle(&store, &format!("dcfr.main.up{k}"), &x)
                .add(&feats[3 - k])
                .unwrap()
                .add(&conv(&store, &format!("dcfr.main.up{k}.skip"), m))
                .unwrap();
        }
        assert_eq!(tape.value(seg), x);

        let logits = semantic_classifier(&tape, seg, &bind_semantic_head(&bound).unwrap()).unwrap();
        assert_eq!(tape.value(logits), upception_oracle(&store, "cls.seg", &x));
        assert_eq!(tape.dims(logits), vec![3, 32, 32]);

        let bdr = boundary_classifier(
            &tape,
            merges[2],
            &bind_boundary_head(&bound).unwrap(),
            32,
            32,
        )
        .unwrap();
        let expected = conv(
            &store,
            "cls.bdr.conv2",
            &conv(&store, "cls.bdr.conv1", &m1).relu(),
        )
        .upsample2x()
        .unwrap();
        assert_eq!(tape.value(bdr), expected);
    }

    #[test]
    fn single_block_cascade_is_one_merge() {
        let channels = [2, 4, 8, 16];
        let store = random_store(channels, 3, 4);
        let tape = Tape::new();
        let blocks = bind_aux_path(&store.bind_frozen(&tape)).unwrap();
        let f = tape.constant(features(channels, 8)[2].clone());
        let out = auxiliary_path(&tape, &[f], &blocks[..1]).unwrap();
        let direct = merging_block(&tape, f, None, &blocks[0]).unwrap();
        assert_eq!(tape.value(out[0]), tape.value(direct));
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let channels = [2, 4, 8, 16];
        let mut store = random_store(channels, 3, 2);
        let zeroed: Vec<(String, Tensor)> = store
            .iter()
            .map(|(n, t)| (n.to_string(), Tensor::zeros(t.dims())))
            .collect();
        for (n, t) in zeroed {
            store.insert(n, t);
        }
        let tape = Tape::new();
        let bound = store.bind_frozen(&tape);
        let fv: Vec<Var> = features(channels, 16)
            .iter()
            .map(|t| tape.constant(Tensor::zeros(t.dims())))
            .collect();
        let merges = auxiliary_path(
            &tape,
            &[fv[2], fv[1], fv[0]],
            &bind_aux_path(&bound).unwrap(),
        )
        .unwrap();
        let seg = main_path(&tape, &fv, &merges, &bind_main_path(&bound, true).unwrap()).unwrap();
        let bdr = boundary_classifier(
            &tape,
            merges[2],
            &bind_boundary_head(&bound).unwrap(),
            32,
            32,
        )
        .unwrap();
        let logits = semantic_classifier(&tape, seg, &bind_semantic_head(&bound).unwrap()).unwrap();
        for v in [seg, bdr, logits] {
            assert!(tape.value(v).data().iter().all(|&x| x == 0.0));
        }
        assert_eq!(tape.dims(bdr), vec![2, 32, 32]);
    }

    #[test]
    fn upsample_to_rejects_unreachable_extent() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 3]));
        assert!(matches!(upsample_to(&tape, x, 8, 8), Err(Error::Shape(_))));
        assert_eq!(
            tape.dims(upsample_to(&tape, x, 12, 12).unwrap()),
            vec![1, 12, 12]
        );
    }
}
