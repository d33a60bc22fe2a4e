//! Line-oriented `key = value` configuration.
//!
//! Blank lines and lines starting with `#` are ignored; unknown keys and
//! repeated keys are errors. [`Config::to_text`] writes every key, so a
//! checkpoint's `config.txt` fully describes the model that produced it.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::relation::{Blocks, RelationFn};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoder {
    /// Main path only: an Upception cascade adding each layer's fused feature.
    Plain,
    /// Main path plus the auxiliary merging path and boundary head.
    Dcfr,
}

impl FromStr for Decoder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Decoder::Plain),
            "dcfr" => Ok(Decoder::Dcfr),
            _ => Err(Error::Config(format!(
                "unknown decoder `{s}` (expected plain|dcfr)"
            ))),
        }
    }
}

impl std::fmt::Display for Decoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decoder::Plain => "plain",
            Decoder::Dcfr => "dcfr",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub height: usize,
    pub width: usize,
    /// Output channels of the four stages; each stage doubles the previous.
    pub channels: [usize; 4],
    /// Stages (1-based) followed by a CSRP module; subset of {2, 3, 4}.
    pub csrp_layers: BTreeSet<usize>,
    pub relation: RelationFn,
    pub blocks: Blocks,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            height: 64,
            width: 64,
            channels: [16, 32, 64, 128],
            csrp_layers: [2, 3, 4].into_iter().collect(),
            relation: RelationFn::DotProduct,
            blocks: Blocks::BOTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub classes: usize,
    pub decoder: Decoder,
    /// Feed the auxiliary merges into the main path. Off by default: with
    /// the skips in place, training the auxiliary path in stage 2 moves the
    /// semantic output that stage 1 froze.
    pub aux_skips: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            classes: 5,
            decoder: Decoder::Dcfr,
            aux_skips: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: u8,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda_boundary: f64,
    pub lambda_semantic: f64,
    pub flip: bool,
    /// Rescale each batch gradient to at most this global L2 norm; 0 disables.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: 1,
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_decay: 0.95,
            epochs_stage1: 30,
            epochs_stage2: 10,
            batch_size: 8,
            seed: 1,
            lambda_boundary: 1.0,
            lambda_semantic: 1.0,
            flip: false,
            grad_clip: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn epochs(&self, stage: u8) -> usize {
        if stage == 1 {
            self.epochs_stage1
        } else {
            self.epochs_stage2
        }
    }
}

/// Synthetic dataset description.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub train_images: usize,
    pub val_images: usize,
    /// Objects drawn per image.
    pub objects: usize,
    /// Fraction of objects visible only in RGB.
    pub rgb_only: f64,
    /// Fraction of objects visible only in thermal; the rest are visible in both.
    pub thermal_only: f64,
    pub data_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_images: 256,
            val_images: 64,
            objects: 4,
            rgb_only: 0.5,
            thermal_only: 0.5,
            data_seed: 7,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

fn parse_layers(value: &str) -> Result<BTreeSet<usize>> {
    if value == "none" || value.is_empty() {
        return Ok(BTreeSet::new());
    }
    value
        .split(',')
        .map(|s| parse::<usize>("csrp_layers", s.trim()))
        .collect()
}

fn parse_blocks(value: &str) -> Result<Blocks> {
    match value {
        "both" => Ok(Blocks::BOTH),
        "channel" => Ok(Blocks::CHANNEL),
        "spatial" => Ok(Blocks::SPATIAL),
        _ => Err(Error::Config(format!(
            "bad csrp_blocks `{value}` (expected both|channel|spatial)"
        ))),
    }
}

pub fn blocks_name(b: Blocks) -> &'static str {
    match (b.channel, b.spatial) {
        (true, true) => "both",
        (true, false) => "channel",
        (false, true) => "spatial",
        (false, false) => "none",
    }
}

pub fn layers_text(layers: &BTreeSet<usize>) -> String {
    if layers.is_empty() {
        "none".into()
    } else {
        layers
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t, d) = (&mut self.model, &mut self.train, &mut self.data);
        match key {
            "height" => m.backbone.height = parse(key, value)?,
            "width" => m.backbone.width = parse(key, value)?,
            "channels" => {
                let v: Vec<usize> = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?;
                m.backbone.channels = v
                    .try_into()
                    .map_err(|_| Error::Config("`channels` needs four values".into()))?;
            }
            "csrp_layers" => m.backbone.csrp_layers = parse_layers(value)?,
            "relation" => m.backbone.relation = value.parse()?,
            "csrp_blocks" => m.backbone.blocks = parse_blocks(value)?,
            "classes" => m.classes = parse(key, value)?,
            "decoder" => m.decoder = value.parse()?,
            "aux_skips" => m.aux_skips = parse_bool(key, value)?,
            "stage" => t.stage = parse(key, value)?,
            "lr0" => t.lr0 = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "lr_decay" => t.lr_decay = parse(key, value)?,
            "epochs_stage1" => t.epochs_stage1 = parse(key, value)?,
            "epochs_stage2" => t.epochs_stage2 = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "lambda_boundary" => t.lambda_boundary = parse(key, value)?,
            "lambda_semantic" => t.lambda_semantic = parse(key, value)?,
            "flip" => t.flip = parse_bool(key, value)?,
            "grad_clip" => t.grad_clip = parse(key, value)?,
            "train_images" => d.train_images = parse(key, value)?,
            "val_images" => d.val_images = parse(key, value)?,
            "objects" => d.objects = parse(key, value)?,
            "rgb_only" => d.rgb_only = parse(key, value)?,
            "thermal_only" => d.thermal_only = parse(key, value)?,
            "data_seed" => d.data_seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.model.backbone;
        if b.height == 0
            || b.width == 0
            || !b.height.is_multiple_of(16)
            || !b.width.is_multiple_of(16)
        {
            return Err(Error::Config(format!(
                "image extent {}x{} must be a positive multiple of 16",
                b.height, b.width
            )));
        }
        if b.channels[0] == 0 || b.channels.windows(2).any(|p| p[1] != 2 * p[0]) {
            return Err(Error::Config(format!(
                "channels {:?} must start positive and double at every stage",
                b.channels
            )));
        }
        if let Some(l) = b.csrp_layers.iter().find(|l| !(2..=4).contains(*l)) {
            return Err(Error::Config(format!("csrp layer {l} outside {{2,3,4}}")));
        }
        if !b.blocks.channel && !b.blocks.spatial {
            return Err(Error::Config(
                "csrp_blocks must enable at least one block".into(),
            ));
        }
        if self.model.classes < 2 || self.model.classes > 256 {
            return Err(Error::Config(format!(
                "classes = {} outside 2..=256",
                self.model.classes
            )));
        }
        if self.model.aux_skips && self.model.decoder != Decoder::Dcfr {
            return Err(Error::Config("aux_skips requires decoder = dcfr".into()));
        }
        let t = &self.train;
        if !(1..=2).contains(&t.stage) {
            return Err(Error::Config(format!(
                "stage must be 1 or 2, got {}",
                t.stage
            )));
        }
        if t.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for (k, v) in [
            ("lr0", t.lr0),
            ("momentum", t.momentum),
            ("weight_decay", t.weight_decay),
            ("lr_decay", t.lr_decay),
            ("lambda_boundary", t.lambda_boundary),
            ("lambda_semantic", t.lambda_semantic),
            ("grad_clip", t.grad_clip),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "`{k}` must be finite and non-negative"
                )));
            }
        }
        let d = &self.data;
        if d.rgb_only < 0.0 || d.thermal_only < 0.0 || d.rgb_only + d.thermal_only > 1.0 + 1e-12 {
            return Err(Error::Config(
                "rgb_only and thermal_only must be non-negative and sum to at most 1".into(),
            ));
        }
        Ok(())
    }

    /// Every key with its current value, parseable by [`Config::parse`].
    pub fn to_text(&self) -> String {
        let (m, t, d) = (&self.model, &self.train, &self.data);
        let b = &m.backbone;
        let mut s = String::new();
        let c = b.channels;
        let lines: Vec<(&str, String)> = vec![
            ("height", b.height.to_string()),
            ("width", b.width.to_string()),
            ("channels", format!("{},{},{},{}", c[0], c[1], c[2], c[3])),
            ("csrp_layers", layers_text(&b.csrp_layers)),
            ("relation", b.relation.to_string()),
            ("csrp_blocks", blocks_name(b.blocks).into()),
            ("classes", m.classes.to_string()),
            ("decoder", m.decoder.to_string()),
            ("aux_skips", m.aux_skips.to_string()),
            ("stage", t.stage.to_string()),
            ("lr0", format!("{:?}", t.lr0)),
            ("momentum", format!("{:?}", t.momentum)),
            ("weight_decay", format!("{:?}", t.weight_decay)),
            ("lr_decay", format!("{:?}", t.lr_decay)),
            ("epochs_stage1", t.epochs_stage1.to_string()),
            ("epochs_stage2", t.epochs_stage2.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("seed", t.seed.to_string()),
            ("lambda_boundary", format!("{:?}", t.lambda_boundary)),
            ("lambda_semantic", format!("{:?}", t.lambda_semantic)),
            ("flip", t.flip.to_string()),
            ("grad_clip", format!("{:?}", t.grad_clip)),
            ("train_images", d.train_images.to_string()),
            ("val_images", d.val_images.to_string()),
            ("objects", d.objects.to_string()),
            ("rgb_only", format!("{:?}", d.rgb_only)),
            ("thermal_only", format!("{:?}", d.thermal_only)),
            ("data_seed", d.data_seed.to_string()),
        ];
        for (k, v) in lines {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_recipe() {
        let t = TrainConfig::default();
        assert_eq!(
            (t.lr0, t.momentum, t.weight_decay, t.lr_decay),
            (0.01, 0.9, 0.0005, 0.95)
        );
        assert_eq!((t.lambda_boundary, t.lambda_semantic), (1.0, 1.0));
        assert!(Config::default().validate().is_ok());
    }

    #[test]
    fn text_roundtrip() {
        let mut cfg = Config::default();
        cfg.set("csrp_layers", "2,4").unwrap();
        cfg.set("relation", "gaussian").unwrap();
        cfg.set("csrp_blocks", "spatial").unwrap();
        cfg.set("lr0", "0.02").unwrap();
        assert_eq!(Config::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn parse_errors() {
        for bad in [
            "bogus = 1",
            "height = 1\nheight = 2",
            "height = abc",
            "no equals",
            "csrp_layers = 1,2",
            "channels = 8,16,32",
            "channels = 8,16,30,60",
            "height = 40",
            "classes = 1",
            "stage = 3",
            "rgb_only = 0.7\nthermal_only = 0.7",
            "decoder = plain\naux_skips = true",
        ] {
            assert!(matches!(Config::parse(bad), Err(Error::Config(_))), "{bad}");
        }
        let cfg = Config::parse("# comment\n\ncsrp_layers = none\n").unwrap();
        assert!(cfg.model.backbone.csrp_layers.is_empty());
    }
}
