//! Command-line front end for the `csrp` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::io;
use crate::metrics::ConfusionMatrix;
use crate::params::{Init, ParamStore};
use crate::pipeline::{
    self, argmax_labels, evaluate, parse_variants, train_stage, Config, Dataset, Model, Split,
};
use crate::relation::{self, Blocks, CsrpVars, RelationFn};
use crate::supervision::boundary_labels;
use crate::tape::Tape;

pub const CONFIG_FILE: &str = "config.txt";

#[derive(Parser, Debug)]
#[command(
    name = "csrp",
    version,
    about = "RGB-thermal relation-propagation fusion toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one stage on the synthetic benchmark and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a synthetic validation split.
    Eval(EvalArgs),
    /// Run one CSRP module on a pair of feature tensors.
    Fuse(FuseArgs),
    /// Derive a boundary map from a label map.
    Boundary(BoundaryArgs),
    /// Score directories of predicted label maps against ground truth.
    Metrics(MetricsArgs),
    /// Train and evaluate a list of model variants.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint to continue from (required for stage 2).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output checkpoint directory.
    #[arg(long, default_value = "checkpoint")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Configuration file describing the dataset to evaluate on.
    #[arg(long)]
    pub data: PathBuf,
    /// Write the key=value report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Dump predicted boundary maps (BND1 files) into this directory.
    #[arg(long)]
    pub boundary_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// RGB feature tensor (c x h x w, DTF).
    #[arg(long)]
    pub rgb: PathBuf,
    /// Thermal feature tensor (c x h x w, DTF).
    #[arg(long)]
    pub thermal: PathBuf,
    /// Checkpoint directory holding the CSRP parameters; random if absent.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Parameter name prefix of the CSRP instance.
    #[arg(long, default_value = "csrp.l2")]
    pub prefix: String,
    #[arg(long, default_value = "dot")]
    pub relation: RelationFn,
    /// Seed for random parameters when `--params` is absent.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "fused")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BoundaryArgs {
    /// Input label map (LBL1).
    pub input: PathBuf,
    /// Output boundary map (BND1).
    pub output: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Directory of predicted label maps (`*.lbl`).
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth label maps with matching file names.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub classes: usize,
    /// Write the key=value report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Comma-separated variants, or `all`.
    #[arg(long, default_value = "all")]
    pub variants: String,
    /// Base configuration; built-in defaults if absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the table here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_config(path: &Path) -> Result<Config> {
    Config::parse(&io::read_text(path)?)
}

/// Loads `config.txt` and the parameters of a checkpoint directory.
pub fn load_model(dir: &Path) -> Result<(Config, Model)> {
    let cfg = load_config(&dir.join(CONFIG_FILE))?;
    let params = io::load_checkpoint(dir)?;
    let model = Model::from_params(cfg.model.clone(), params)?;
    Ok((cfg, model))
}

pub fn save_model(dir: &Path, cfg: &Config, model: &Model) -> Result<()> {
    io::save_checkpoint(dir, &model.params)?;
    io::write_text(dir.join(CONFIG_FILE), &cfg.to_text())
}

fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    cfg.train.stage = args.stage;
    let mut model = match (&args.resume, args.stage) {
        (Some(dir), _) => {
            let (saved, model) = load_model(dir)?;
            if saved.model != cfg.model {
                return Err(Error::contract(format!(
                    "checkpoint {} was trained with a different model configuration",
                    dir.display()
                )));
            }
            model
        }
        (None, 2) => {
            return Err(Error::contract(
                "stage 2 requires a stage-1 checkpoint (--resume)",
            ))
        }
        (None, _) => Model::init(cfg.model.clone(), cfg.train.seed),
    };
    let train_set = Dataset::for_config(&cfg, Split::Train)?;
    let val_set = Dataset::for_config(&cfg, Split::Val)?;
    let mut lines = String::new();
    train_stage(
        &mut model,
        &cfg.train,
        args.stage,
        &train_set,
        &val_set,
        |e| {
            println!("{e}");
            lines.push_str(&format!("{e}\n"));
        },
    )?;
    save_model(&args.out, &cfg, &model)?;
    io::write_text(
        args.out.join(format!("train_stage{}.log", args.stage)),
        &lines,
    )
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (_, model) = load_model(&args.ckpt)?;
    let data_cfg = load_config(&args.data)?;
    if data_cfg.model.classes != model.classes() {
        return Err(Error::contract(format!(
            "checkpoint predicts {} classes, dataset has {}",
            model.classes(),
            data_cfg.model.classes
        )));
    }
    let b = &model.config.backbone;
    let data = Dataset::generate(
        b.height,
        b.width,
        model.classes(),
        &data_cfg.data,
        Split::Val,
    )?;
    let cm = evaluate(&model, &data)?;
    print!("{}", cm.report_text());
    if let Some(path) = &args.report {
        io::write_text(path, &cm.report_kv())?;
    }
    if let Some(dir) = &args.boundary_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, scene) in data.scenes.iter().enumerate() {
            let Some(logits) = model.predict_boundary_logits(&scene.rgb, &scene.thermal)? else {
                return Err(Error::contract("this checkpoint has no boundary path"));
            };
            let pred = argmax_labels(&logits)?;
            let map = crate::supervision::BoundaryMap::new(
                pred.height(),
                pred.width(),
                pred.data().to_vec(),
            )?;
            io::write_boundary_map(dir.join(format!("{i:04}.bnd")), &map)?;
        }
    }
    Ok(())
}

fn fuse(args: &FuseArgs) -> Result<()> {
    let rgb = io::read_tensor(&args.rgb)?;
    let thermal = io::read_tensor(&args.thermal)?;
    let store = match &args.params {
        Some(dir) => io::load_checkpoint(dir)?,
        None => {
            let c = *rgb
                .dims()
                .first()
                .ok_or_else(|| Error::shape("feature tensors must be c x h x w"))?;
            let mut store = ParamStore::new();
            relation::init_csrp(&mut store, &mut Init::new(args.seed), &args.prefix, c);
            store
        }
    };
    let tape = Tape::new();
    let bound = store.bind_frozen(&tape);
    let vars = CsrpVars::bind(&bound, &args.prefix)?;
    let st = relation::csrp_forward(
        &tape,
        tape.constant(rgb),
        tape.constant(thermal),
        &vars,
        args.relation,
        Blocks::BOTH,
    )?;
    let out = &args.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    io::write_tensor(out.join("rgb_enhanced.dtf"), &tape.value(st.rgb_enhanced))?;
    io::write_tensor(
        out.join("thermal_enhanced.dtf"),
        &tape.value(st.thermal_enhanced),
    )?;
    io::write_tensor(out.join("fused.dtf"), &tape.value(st.fused))?;
    let mut dump = String::new();
    for (name, p) in [
        ("channel", st.shared_channel),
        ("spatial", st.shared_spatial),
    ] {
        let Some(p) = p else { continue };
        let sums = p.values(&tape)?.row_sums()?;
        dump.push_str(&format!("# {name} relation row sums\n"));
        for (i, s) in sums.iter().enumerate() {
            dump.push_str(&format!("{name}.{i}={s:?}\n"));
        }
    }
    io::write_text(out.join("row_sums.txt"), &dump)
}

fn boundary(args: &BoundaryArgs) -> Result<()> {
    let gt = io::read_label_map(&args.input)?;
    io::write_boundary_map(&args.output, &boundary_labels(&gt, args.window)?)
}

fn metrics(args: &MetricsArgs) -> Result<()> {
    let mut cm = ConfusionMatrix::new(args.classes);
    let preds = io::list_files(&args.pred, "lbl")?;
    if preds.is_empty() {
        return Err(Error::contract(format!(
            "no .lbl files in {}",
            args.pred.display()
        )));
    }
    for p in preds {
        let name = p.file_name().expect("listed file has a name");
        let pred = io::read_label_map(&p)?;
        let gt = io::read_label_map(args.gt.join(name))?;
        cm.accumulate(&pred, &gt)?;
    }
    print!("{}", cm.report_text());
    if let Some(out) = &args.out {
        io::write_text(out, &cm.report_kv())?;
    }
    Ok(())
}

fn ablate(args: &AblateArgs) -> Result<()> {
    let base = match &args.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    let variants = parse_variants(&args.variants)?;
    let rows = pipeline::ablation_run(&base, &variants, |v, stage, e| {
        eprintln!("[{v} stage {stage}] {e}");
    })?;
    let table = pipeline::format_table(&rows);
    print!("{table}");
    if let Some(out) = &args.out {
        io::write_text(out, &table)?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Fuse(a) => fuse(a),
        Command::Boundary(a) => boundary(a),
        Command::Metrics(a) => metrics(a),
        Command::Ablate(a) => ablate(a),
    }
}
