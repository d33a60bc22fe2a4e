//! Variant sweeps under identical data, seeds and budgets.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pipeline::config::{layers_text, Config, Decoder};
use crate::pipeline::train::{train_and_evaluate, EpochLog};
use crate::relation::Blocks;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Two independent streams summed per layer, main-path decoder.
    Baseline,
    /// Spatial relation-propagation only, main-path decoder.
    Srp,
    /// Channel relation-propagation only, main-path decoder.
    Crp,
    /// Both blocks, main-path decoder.
    Csrp,
    /// Both blocks, refinement decoder, both training stages.
    CsrpDcfr,
    /// Refinement decoder trained without the boundary stage.
    NoBoundary,
    /// Full model with CSRP at the given layers only.
    Layers(BTreeSet<usize>),
}

impl Variant {
    pub const TABLE: [Variant; 6] = [
        Variant::Baseline,
        Variant::Srp,
        Variant::Crp,
        Variant::Csrp,
        Variant::CsrpDcfr,
        Variant::NoBoundary,
    ];

    /// `base` with the variant's architecture and stage toggles applied.
    pub fn apply(&self, base: &Config) -> Config {
        let mut cfg = base.clone();
        let all: BTreeSet<usize> = [2, 3, 4].into();
        let m = &mut cfg.model;
        m.aux_skips = false;
        let (layers, blocks, decoder, stage2) = match self {
            Variant::Baseline => (BTreeSet::new(), Blocks::BOTH, Decoder::Plain, false),
            Variant::Srp => (all, Blocks::SPATIAL, Decoder::Plain, false),
            Variant::Crp => (all, Blocks::CHANNEL, Decoder::Plain, false),
            Variant::Csrp => (all, Blocks::BOTH, Decoder::Plain, false),
            Variant::CsrpDcfr => (all, Blocks::BOTH, Decoder::Dcfr, true),
            Variant::NoBoundary => (all, Blocks::BOTH, Decoder::Dcfr, false),
            Variant::Layers(l) => (l.clone(), Blocks::BOTH, Decoder::Dcfr, true),
        };
        m.backbone.csrp_layers = layers;
        m.backbone.blocks = blocks;
        m.decoder = decoder;
        if !stage2 {
            cfg.train.epochs_stage2 = 0;
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Baseline => f.write_str("baseline"),
            Variant::Srp => f.write_str("srp"),
            Variant::Crp => f.write_str("crp"),
            Variant::Csrp => f.write_str("csrp"),
            Variant::CsrpDcfr => f.write_str("csrp-dcfr"),
            Variant::NoBoundary => f.write_str("no-boundary"),
            Variant::Layers(l) if l.is_empty() => f.write_str("layers:none"),
            Variant::Layers(l) => {
                let s: Vec<String> = l.iter().map(|x| x.to_string()).collect();
                write!(f, "layers:{}", s.join("+"))
            }
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "baseline" => Variant::Baseline,
            "srp" => Variant::Srp,
            "crp" => Variant::Crp,
            "csrp" => Variant::Csrp,
            "csrp-dcfr" => Variant::CsrpDcfr,
            "no-boundary" => Variant::NoBoundary,
            _ => {
                let layers = s.strip_prefix("layers:").ok_or_else(|| {
                    Error::Config(format!(
                        "unknown variant `{s}` (expected baseline, srp, crp, csrp, csrp-dcfr, no-boundary or layers:L+L)"
                    ))
                })?;
                let set: BTreeSet<usize> = if layers == "none" {
                    BTreeSet::new()
                } else {
                    layers
                        .split('+')
                        .map(|x| {
                            x.parse::<usize>()
                                .ok()
                                .filter(|l| (2..=4).contains(l))
                                .ok_or_else(|| Error::Config(format!("bad layer `{x}` in `{s}`")))
                        })
                        .collect::<Result<_>>()?
                };
                Variant::Layers(set)
            }
        })
    }
}

/// Comma-separated variant list; `all` expands to the six table variants.
pub fn parse_variants(list: &str) -> Result<Vec<Variant>> {
    if list.trim() == "all" {
        return Ok(Variant::TABLE.to_vec());
    }
    list.split(',').map(|s| s.trim().parse()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub csrp_layers: BTreeSet<usize>,
    pub macc: f64,
    pub miou: f64,
}

/// Trains and evaluates every variant from the same base configuration.
pub fn ablation_run(
    base: &Config,
    variants: &[Variant],
    mut log: impl FnMut(&Variant, u8, &EpochLog),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let cfg = v.apply(base);
        let run = train_and_evaluate(&cfg, |stage, e| log(v, stage, e))?;
        rows.push(AblationRow {
            variant: v.clone(),
            csrp_layers: cfg.model.backbone.csrp_layers.clone(),
            macc: run.confusion.mean_accuracy(),
            miou: run.confusion.mean_iou(),
        });
    }
    Ok(rows)
}

pub fn format_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant        csrp_layers   mAcc      mIoU\n");
    for r in rows {
        writeln!(
            s,
            "{:<14} {:<13} {:.4}    {:.4}",
            r.variant.to_string(),
            layers_text(&r.csrp_layers),
            r.macc,
            r.miou
        )
        .unwrap();
    }
    s
}
