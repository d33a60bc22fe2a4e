//! Shape walk through the full network: two-stream backbone with CSRP at
//! layers 2-4, the auxiliary merging path, the main Upception path and both
//! heads. Also shows which parameters each training stage owns.
//!
//! ```text
//! cargo run --release --example decoder
//! ```

use csrp::dcfr;
use csrp::pipeline::model::{is_stage1_param, is_stage2_param};
use csrp::pipeline::{generate_scene, Heads, Model, ModelConfig, SceneSpec};
use csrp::Tape;

fn main() -> csrp::Result<()> {
    let cfg = ModelConfig::default();
    let b = &cfg.backbone;
    let model = Model::init(cfg.clone(), 1);
    let scene = generate_scene(
        2,
        &SceneSpec {
            height: b.height,
            width: b.width,
            classes: cfg.classes,
            objects: 4,
            rgb_only: 0.5,
            thermal_only: 0.5,
        },
    )?;

    let tape = Tape::new();
    let bound = model.params.bind_frozen(&tape);
    let (rgb, thermal) = (tape.constant(scene.rgb), tape.constant(scene.thermal));
    let out = model.forward(&tape, &bound, rgb, thermal, Heads::ALL)?;

    for (l, f) in out.layers.iter().enumerate() {
        let how = if f.fusion.is_some() { "CSRP" } else { "sum" };
        println!(
            "layer {}: streams {:?}, F_C {:?} ({how})",
            l + 1,
            tape.dims(f.rgb),
            tape.dims(f.fused)
        );
    }

    // The auxiliary path runs deepest first over layers 3, 2, 1.
    let fused: Vec<_> = out.layers.iter().map(|l| l.fused).collect();
    let merges = dcfr::auxiliary_path(
        &tape,
        &[fused[2], fused[1], fused[0]],
        &dcfr::bind_aux_path(&bound)?,
    )?;
    for (m, l) in merges.iter().zip([3, 2, 1]) {
        println!("aux merge at layer {l}: {:?}", tape.dims(*m));
    }
    let f_seg = dcfr::main_path(&tape, &fused, &[], &dcfr::bind_main_path(&bound, false)?)?;
    println!("main path output: {:?}", tape.dims(f_seg));
    println!(
        "semantic logits: {:?}",
        tape.dims(out.seg_logits.expect("requested"))
    );
    println!(
        "boundary logits: {:?}",
        tape.dims(out.bdr_logits.expect("requested"))
    );

    let count = |pred: fn(&str) -> bool| -> usize {
        model
            .params
            .iter()
            .filter(|(n, _)| pred(n))
            .map(|(_, t)| t.numel())
            .sum()
    };
    println!(
        "\n{} parameters: {} trained in stage 1, {} in stage 2",
        model.params.numel(),
        count(is_stage1_param),
        count(is_stage2_param)
    );
    Ok(())
}
