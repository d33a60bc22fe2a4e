//! Two-stream backbone with CSRP fusion, decoder and classifier heads.
//!
//! Extents for an `H x W` input with channels `(c1, c2, c3, c4)`:
//!
//! | feature            | channels | extent        |
//! |--------------------|----------|---------------|
//! | layer `l` streams  | `c_l`    | `H/2^l x W/2^l` |
//! | `F_C_l`            | `c_l`    | `H/2^l x W/2^l` |
//! | auxiliary merges   | `c1`     | layer extent  |
//! | `F_seg`            | `c1`     | `H/2 x W/2`   |
//! | semantic logits    | `N`      | `H x W`       |
//! | boundary logits    | `2`      | `H x W`       |

use crate::dcfr::{self, MainPath};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamStore};
use crate::pipeline::config::{Decoder, ModelConfig};
use crate::relation::{self, CsrpVars, FusionState};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Features of one backbone layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerFeatures {
    /// Stream outputs before fusion.
    pub rgb: Var,
    pub thermal: Var,
    /// `F_C_l`.
    pub fused: Var,
    /// Present at CSRP layers.
    pub fusion: Option<FusionState>,
}

/// Which heads to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub semantic: bool,
    pub boundary: bool,
}

impl Heads {
    pub const ALL: Heads = Heads {
        semantic: true,
        boundary: true,
    };
    pub const SEMANTIC: Heads = Heads {
        semantic: true,
        boundary: false,
    };
    pub const BOUNDARY: Heads = Heads {
        semantic: false,
        boundary: true,
    };
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub layers: Vec<LayerFeatures>,
    pub seg_logits: Option<Var>,
    pub bdr_logits: Option<Var>,
}

/// Configuration plus parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn stream_in_channels(stream: &str) -> usize {
    if stream == "rgb" {
        3
    } else {
        1
    }
}

/// Parameter groups: stage 1 trains everything on the semantic route.
pub fn is_stage1_param(name: &str) -> bool {
    name.starts_with("enc.")
        || name.starts_with("csrp.")
        || name.starts_with("dcfr.main.")
        || name.starts_with("cls.seg.")
}

/// Stage 2 trains the auxiliary path and the boundary head.
pub fn is_stage2_param(name: &str) -> bool {
    name.starts_with("dcfr.aux.") || name.starts_with("cls.bdr.")
}

impl Model {
    /// Random initialisation: He-normal convolutions, zero biases, unit scales.
    pub fn init(config: ModelConfig, seed: u64) -> Model {
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let ch = config.backbone.channels;
        for stream in ["rgb", "thermal"] {
            let mut c_in = stream_in_channels(stream);
            for (l, &c) in ch.iter().enumerate() {
                let prefix = format!("enc.{stream}.l{}", l + 1);
                init.conv(&mut store, &format!("{prefix}.conv1"), c, c_in, 3);
                init.conv(&mut store, &format!("{prefix}.conv2"), c, c, 3);
                c_in = c;
            }
        }
        for &l in &config.backbone.csrp_layers {
            relation::init_csrp(&mut store, &mut init, &format!("csrp.l{l}"), ch[l - 1]);
        }
        dcfr::init_main_path(&mut store, &mut init, ch, config.aux_skips);
        dcfr::init_semantic_head(&mut store, &mut init, ch[0], config.classes);
        // drawn last so the semantic path does not depend on the decoder choice
        if config.decoder == Decoder::Dcfr {
            dcfr::init_aux_path(&mut store, &mut init, ch);
            dcfr::init_boundary_head(&mut store, &mut init, ch[0]);
        }
        Model {
            config,
            params: store,
        }
    }

    /// Rebuilds a model from a configuration and stored parameters,
    /// checking that the parameters fit the configured architecture.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Model> {
        let reference = Model::init(config.clone(), 0);
        for (name, value) in reference.params.iter() {
            let got = params.get(name)?;
            if got.dims() != value.dims() {
                return Err(Error::contract(format!(
                    "parameter `{name}` has dims {:?}, architecture expects {:?}",
                    got.dims(),
                    value.dims()
                )));
            }
        }
        if let Some(extra) = params.names().find(|n| !reference.params.contains(n)) {
            return Err(Error::contract(format!("unexpected parameter `{extra}`")));
        }
        Ok(Model { config, params })
    }

    pub fn has_boundary_path(&self) -> bool {
        self.config.decoder == Decoder::Dcfr
    }

    /// Class count implied by the semantic head.
    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn forward(
        &self,
        tape: &Tape,
        bound: &Bound,
        rgb: Var,
        thermal: Var,
        heads: Heads,
    ) -> Result<ForwardOutput> {
        let layers = backbone_forward(tape, bound, &self.config, rgb, thermal)?;
        let fused: Vec<Var> = layers.iter().map(|l| l.fused).collect();
        let (h, w) = (self.config.backbone.height, self.config.backbone.width);

        let needs_aux = self.config.decoder == Decoder::Dcfr
            && (heads.boundary || (heads.semantic && self.config.aux_skips));
        let merges = if needs_aux {
            let blocks = dcfr::bind_aux_path(bound)?;
            dcfr::auxiliary_path(tape, &[fused[2], fused[1], fused[0]], &blocks)?
        } else {
            Vec::new()
        };

        let bdr_logits = if heads.boundary && self.has_boundary_path() {
            let head = dcfr::bind_boundary_head(bound)?;
            Some(dcfr::boundary_classifier(tape, merges[2], &head, h, w)?)
        } else {
            None
        };

        let seg_logits = if heads.semantic {
            let main: MainPath = dcfr::bind_main_path(bound, self.config.aux_skips)?;
            let f_seg = dcfr::main_path(tape, &fused, &merges, &main)?;
            let head = dcfr::bind_semantic_head(bound)?;
            Some(dcfr::semantic_classifier(tape, f_seg, &head)?)
        } else {
            None
        };
        Ok(ForwardOutput {
            layers,
            seg_logits,
            bdr_logits,
        })
    }

    /// Semantic logits of one image, evaluated without gradient tracking.
    pub fn predict_logits(&self, rgb: &Tensor, thermal: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.params.bind_frozen(&tape);
        let out = self.forward(
            &tape,
            &bound,
            tape.constant(rgb.clone()),
            tape.constant(thermal.clone()),
            Heads::SEMANTIC,
        )?;
        Ok(tape.value(out.seg_logits.expect("semantic head requested")))
    }

    /// Boundary logits of one image, when the model has a boundary path.
    pub fn predict_boundary_logits(
        &self,
        rgb: &Tensor,
        thermal: &Tensor,
    ) -> Result<Option<Tensor>> {
        if !self.has_boundary_path() {
            return Ok(None);
        }
        let tape = Tape::new();
        let bound = self.params.bind_frozen(&tape);
        let out = self.forward(
            &tape,
            &bound,
            tape.constant(rgb.clone()),
            tape.constant(thermal.clone()),
            Heads::BOUNDARY,
        )?;
        Ok(out.bdr_logits.map(|v| tape.value(v)))
    }
}

/// Runs both streams through the four stages, fusing with CSRP after the
/// configured layers and feeding the enhanced features onward. Layers
/// without CSRP fuse by summation.
pub fn backbone_forward(
    tape: &Tape,
    bound: &Bound,
    cfg: &ModelConfig,
    rgb: Var,
    thermal: Var,
) -> Result<Vec<LayerFeatures>> {
    let b = &cfg.backbone;
    let (h, w) = (b.height, b.width);
    if h % 16 != 0 || w % 16 != 0 {
        return Err(Error::shape(format!(
            "input {h}x{w} is not divisible by 16"
        )));
    }
    for (x, c, what) in [(rgb, 3, "rgb"), (thermal, 1, "thermal")] {
        if tape.dims(x) != [c, h, w] {
            return Err(Error::shape(format!(
                "{what} input {:?} does not match the configured {c}x{h}x{w}",
                tape.dims(x)
            )));
        }
    }

    let stage = |x: Var, stream: &str, l: usize| -> Result<Var> {
        let prefix = format!("enc.{stream}.l{l}");
        let y = bound.conv(&format!("{prefix}.conv1"))?.apply(tape, x, 2)?;
        let y = tape.relu(y)?;
        let y = bound.conv(&format!("{prefix}.conv2"))?.apply(tape, y, 1)?;
        tape.relu(y)
    };

    let (mut r, mut t) = (rgb, thermal);
    let mut layers = Vec::with_capacity(4);
    for l in 1..=4 {
        let fr = stage(r, "rgb", l)?;
        let ft = stage(t, "thermal", l)?;
        let features = if b.csrp_layers.contains(&l) {
            let vars = CsrpVars::bind(bound, &format!("csrp.l{l}"))?;
            let st = relation::csrp_forward(tape, fr, ft, &vars, b.relation, b.blocks)?;
            r = st.rgb_enhanced;
            t = st.thermal_enhanced;
            LayerFeatures {
                rgb: fr,
                thermal: ft,
                fused: st.fused,
                fusion: Some(st),
            }
        } else {
            r = fr;
            t = ft;
            LayerFeatures {
                rgb: fr,
                thermal: ft,
                fused: tape.add(fr, ft)?,
                fusion: None,
            }
        };
        layers.push(features);
    }
    Ok(layers)
}

/// Per-pixel argmax over the class axis of `n x h x w` logits (ties go to
/// the lower class id).
pub fn argmax_labels(logits: &Tensor) -> Result<crate::supervision::LabelMap> {
    let [n, h, w] = logits.dims()[..] else {
        return Err(Error::shape(format!(
            "logits must be n x h x w, got {:?}",
            logits.dims()
        )));
    };
    let d = logits.data();
    let labels = (0..h * w)
        .map(|p| {
            let mut best = 0;
            for c in 1..n {
                if d[c * h * w + p] > d[best * h * w + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    crate::supervision::LabelMap::new(h, w, labels)
}
