//! Two-stage training on a small synthetic benchmark, with a checkpoint
//! written between the stages.
//!
//! Stage 1 fits the encoder, the CSRP modules, the main refinement path and
//! the semantic head. Stage 2 reloads that checkpoint and fits only the
//! auxiliary path and boundary head; the semantic output cannot move.
//!
//! ```text
//! cargo run --release --example train -- [out_dir]
//! ```

use std::path::PathBuf;

use csrp::cli::{load_model, save_model};
use csrp::pipeline::model::is_stage2_param;
use csrp::pipeline::{
    argmax_labels, evaluate, semantic_loss, train_stage, Config, Dataset, Model, Split,
};

const CONFIG: &str = "\
height = 32
width = 32
channels = 8,16,32,64
classes = 4
epochs_stage1 = 8
epochs_stage2 = 3
batch_size = 8
train_images = 64
val_images = 16
objects = 3
";

fn main() -> csrp::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("csrp-train-example"));
    let cfg = Config::parse(CONFIG)?;
    let train = Dataset::for_config(&cfg, Split::Train)?;
    let val = Dataset::for_config(&cfg, Split::Val)?;

    let mut model = Model::init(cfg.model.clone(), cfg.train.seed);
    println!("{} parameters", model.params.numel());
    train_stage(&mut model, &cfg.train, 1, &train, &val, |e| {
        println!("stage 1 {e}")
    })?;
    let stage1_dir = out.join("stage1");
    save_model(&stage1_dir, &cfg, &model)?;
    println!("checkpoint written to {}", stage1_dir.display());

    let (_, mut model) = load_model(&stage1_dir)?;
    let before = model.clone();
    let seg_before = semantic_loss(&model, &val)?;
    train_stage(&mut model, &cfg.train, 2, &train, &val, |e| {
        println!("stage 2 {e}")
    })?;
    let seg_after = semantic_loss(&model, &val)?;
    let moved = model
        .params
        .iter()
        .filter(|(n, t)| before.params.get(n).ok() != Some(*t))
        .inspect(|(n, _)| assert!(is_stage2_param(n), "{n} moved in stage 2"))
        .count();
    println!(
        "stage 2 moved {moved} tensors, all on the boundary route; val L_seg {seg_before:.6} -> {seg_after:.6} (bit-identical: {})",
        seg_before.to_bits() == seg_after.to_bits()
    );
    save_model(&out.join("stage2"), &cfg, &model)?;

    print!("{}", evaluate(&model, &val)?.report_text());

    let scene = &val.scenes[0];
    let pred = argmax_labels(&model.predict_logits(&scene.rgb, &scene.thermal)?)?;
    println!("\nground truth                      prediction");
    for r in 0..pred.height() {
        let row = |m: &csrp::supervision::LabelMap| -> String {
            (0..m.width())
                .map(|c| match m.at(r, c) {
                    0 => '.',
                    k => (b'0' + k) as char,
                })
                .collect()
        };
        println!("{}  {}", row(&scene.gt), row(&pred));
    }
    Ok(())
}
