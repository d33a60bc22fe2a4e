//! Datasets, SGD and the two-stage training loop.
//!
//! Stage 1 minimises the semantic loss over the encoder, the CSRP modules,
//! the main refinement path and the semantic head. Stage 2 minimises the
//! boundary loss over the auxiliary path and boundary head, with the stage-1
//! parameters recorded as constants: they still run, but never change.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::params::ParamStore;
use crate::pipeline::config::{Config, DataConfig, TrainConfig};
use crate::pipeline::model::{argmax_labels, is_stage1_param, is_stage2_param, Heads, Model};
use crate::pipeline::scene::{generate_scene, SceneSpec, SyntheticScene};
use crate::supervision::{self, boundary_class_weights, boundary_labels, BoundaryMap};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// A list of synthetic scenes with their boundary targets.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub scenes: Vec<SyntheticScene>,
    pub boundaries: Vec<BoundaryMap>,
}

/// Seed of scene `index` of a split; train and val never share seeds.
pub fn scene_seed(data_seed: u64, split: Split, index: usize) -> u64 {
    let tag = match split {
        Split::Train => 0x5452_4149_4e00_0000u64,
        Split::Val => 0x5641_4c00_0000_0000u64,
    };
    data_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag ^ index as u64
}

impl Dataset {
    pub fn from_scenes(scenes: Vec<SyntheticScene>) -> Result<Dataset> {
        let boundaries = scenes
            .iter()
            .map(|s| boundary_labels(&s.gt, 5))
            .collect::<Result<_>>()?;
        Ok(Dataset { scenes, boundaries })
    }

    pub fn generate(
        height: usize,
        width: usize,
        classes: usize,
        data: &DataConfig,
        split: Split,
    ) -> Result<Dataset> {
        let spec = SceneSpec {
            height,
            width,
            classes,
            objects: data.objects,
            rgb_only: data.rgb_only,
            thermal_only: data.thermal_only,
        };
        let count = match split {
            Split::Train => data.train_images,
            Split::Val => data.val_images,
        };
        let scenes = (0..count)
            .map(|i| generate_scene(scene_seed(data.data_seed, split, i), &spec))
            .collect::<Result<_>>()?;
        Dataset::from_scenes(scenes)
    }

    /// The split described by a full configuration.
    pub fn for_config(cfg: &Config, split: Split) -> Result<Dataset> {
        let b = &cfg.model.backbone;
        Dataset::generate(b.height, b.width, cfg.model.classes, &cfg.data, split)
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// `[non-boundary, boundary]` pixel totals.
    pub fn boundary_counts(&self) -> [usize; 2] {
        self.boundaries.iter().fold([0, 0], |[a, b], m| {
            let [x, y] = m.counts();
            [a + x, b + y]
        })
    }
}

/// `lr0 * decay^epoch`.
pub fn learning_rate(lr0: f64, decay: f64, epoch: usize) -> f64 {
    lr0 * decay.powi(epoch as i32)
}

/// SGD with momentum; weight decay is added to the gradient.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    /// `g += wd * theta; v = mu * v + g; theta -= lr * v` for every named gradient.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            let theta = params.get(name)?;
            if theta.dims() != g.dims() {
                return Err(Error::shape(format!(
                    "gradient of `{name}` has dims {:?}, parameter {:?}",
                    g.dims(),
                    theta.dims()
                )));
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.numel()]);
            let mut updated = theta.to_vec();
            for ((t, vi), gi) in updated.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                let gi = gi + self.weight_decay * *t;
                *vi = self.momentum * *vi + gi;
                *t -= lr * *vi;
            }
            params.insert(name.clone(), Tensor::new(theta.dims(), updated)?);
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_macc: f64,
    pub val_miou: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} lr={:.6} loss={:.6} val_mAcc={:.6} val_mIoU={:.6}",
            self.epoch, self.lr, self.loss, self.val_macc, self.val_miou
        )
    }
}

/// Loss and parameter gradients of one sample for a training stage.
pub fn sample_gradients(
    model: &Model,
    scene: &SyntheticScene,
    boundary: &BoundaryMap,
    stage: u8,
    train: &TrainConfig,
    boundary_weights: [f64; 2],
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let trainable: fn(&str) -> bool = if stage == 1 {
        is_stage1_param
    } else {
        is_stage2_param
    };
    let tape = Tape::new();
    let bound = model.params.bind(&tape, trainable);
    let rgb = tape.constant(scene.rgb.clone());
    let thermal = tape.constant(scene.thermal.clone());
    let heads = if stage == 1 {
        Heads::SEMANTIC
    } else {
        Heads::BOUNDARY
    };
    let out = model.forward(&tape, &bound, rgb, thermal, heads)?;
    let loss = if stage == 1 {
        let l = supervision::cross_entropy(
            &tape,
            out.seg_logits.expect("semantic head"),
            &scene.gt,
            None,
        )?;
        tape.scale(l, train.lambda_semantic)?
    } else {
        let logits = out
            .bdr_logits
            .ok_or_else(|| Error::contract("stage 2 needs a model with a boundary path"))?;
        let l = supervision::boundary_loss(&tape, logits, boundary, boundary_weights)?;
        tape.scale(l, train.lambda_boundary)?
    };
    let value = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    let mut out = BTreeMap::new();
    for (name, var) in bound.iter() {
        if trainable(name) {
            let g = grads
                .get(var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(&tape.dims(var)));
            out.insert(name.to_string(), g);
        }
    }
    Ok((value, out))
}

fn accumulate(sum: &mut BTreeMap<String, Tensor>, g: BTreeMap<String, Tensor>) -> Result<()> {
    for (name, t) in g {
        match sum.get_mut(&name) {
            Some(acc) => *acc = acc.add(&t)?,
            None => {
                sum.insert(name, t);
            }
        }
    }
    Ok(())
}

/// L2 norm over every entry of every gradient.
pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Confusion matrix of the model's argmax predictions over a dataset.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.classes());
    for scene in &data.scenes {
        let logits = model.predict_logits(&scene.rgb, &scene.thermal)?;
        cm.accumulate(&argmax_labels(&logits)?, &scene.gt)?;
    }
    Ok(cm)
}

/// Mean semantic loss over a dataset (no parameter updates).
pub fn semantic_loss(model: &Model, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for scene in &data.scenes {
        let tape = Tape::new();
        let bound = model.params.bind_frozen(&tape);
        let out = model.forward(
            &tape,
            &bound,
            tape.constant(scene.rgb.clone()),
            tape.constant(scene.thermal.clone()),
            Heads::SEMANTIC,
        )?;
        let l = supervision::cross_entropy(
            &tape,
            out.seg_logits.expect("semantic head"),
            &scene.gt,
            None,
        )?;
        total += tape.value(l).item()?;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Runs one training stage for `train.epochs(stage)` epochs, calling `log`
/// after each epoch.
pub fn train_stage(
    model: &mut Model,
    train: &TrainConfig,
    stage: u8,
    train_set: &Dataset,
    val_set: &Dataset,
    mut log: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if !(1..=2).contains(&stage) {
        return Err(Error::contract(format!("unknown training stage {stage}")));
    }
    if stage == 2 && !model.has_boundary_path() {
        return Err(Error::contract(
            "stage 2 needs a model with a boundary path",
        ));
    }
    if train_set.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    let boundary_weights = boundary_class_weights(train_set.boundary_counts())?;
    let mut sgd = Sgd::new(train.momentum, train.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed.wrapping_mul(31).wrapping_add(stage as u64));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut logs = Vec::new();

    for epoch in 0..train.epochs(stage) {
        let lr = learning_rate(train.lr0, train.lr_decay, epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train.batch_size) {
            let mut sum = BTreeMap::new();
            for &i in batch {
                let flipped;
                let (scene, bmap) = if train.flip && rng.gen_bool(0.5) {
                    flipped = train_set.scenes[i].flipped();
                    (&flipped, boundary_labels(&flipped.gt, 5)?)
                } else {
                    (&train_set.scenes[i], train_set.boundaries[i].clone())
                };
                let (loss, g) =
                    sample_gradients(model, scene, &bmap, stage, train, boundary_weights)?;
                epoch_loss += loss;
                accumulate(&mut sum, g)?;
            }
            let mut scale = 1.0 / batch.len() as f64;
            if train.grad_clip > 0.0 {
                let norm = scale * global_norm(&sum);
                if norm > train.grad_clip {
                    scale *= train.grad_clip / norm;
                }
            }
            let mean: BTreeMap<String, Tensor> =
                sum.into_iter().map(|(k, v)| (k, v.scale(scale))).collect();
            sgd.step(&mut model.params, &mean, lr)?;
        }
        let loss = epoch_loss / train_set.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NumericRange(format!(
                "training loss diverged at epoch {epoch}"
            )));
        }
        let cm = evaluate(model, val_set)?;
        let entry = EpochLog {
            epoch,
            lr,
            loss,
            val_macc: cm.mean_accuracy(),
            val_miou: cm.mean_iou(),
        };
        log(&entry);
        logs.push(entry);
    }
    Ok(logs)
}

/// Outcome of a full training run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub model: Model,
    pub stage1: Vec<EpochLog>,
    pub stage2: Vec<EpochLog>,
    pub confusion: ConfusionMatrix,
}

/// Initialises a model from `cfg`, trains stage 1 and, for models with a
/// boundary path and `epochs_stage2 > 0`, stage 2; then evaluates on the
/// validation split.
pub fn train_and_evaluate(cfg: &Config, mut log: impl FnMut(u8, &EpochLog)) -> Result<RunResult> {
    cfg.validate()?;
    let train_set = Dataset::for_config(cfg, Split::Train)?;
    let val_set = Dataset::for_config(cfg, Split::Val)?;
    let mut model = Model::init(cfg.model.clone(), cfg.train.seed);
    let stage1 = train_stage(&mut model, &cfg.train, 1, &train_set, &val_set, |e| {
        log(1, e)
    })?;
    let stage2 = if model.has_boundary_path() && cfg.train.epochs_stage2 > 0 {
        train_stage(&mut model, &cfg.train, 2, &train_set, &val_set, |e| {
            log(2, e)
        })?
    } else {
        Vec::new()
    };
    let confusion = evaluate(&model, &val_set)?;
    Ok(RunResult {
        model,
        stage1,
        stage2,
        confusion,
    })
}
