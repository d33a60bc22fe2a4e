//! Boundary targets and the two supervision losses.
//!
//! A pixel is a boundary pixel when its odd window sees more than one class.
//! The boundary class is rare, so its loss weight is derived from the pixel
//! counts.
//!
//! ```text
//! cargo run --release --example boundary
//! ```

use csrp::pipeline::{generate_scene, SceneSpec};
use csrp::supervision::{boundary_class_weights, boundary_labels, total_loss, LossWeights};
use csrp::{Tape, Tensor};

fn main() -> csrp::Result<()> {
    let spec = SceneSpec {
        height: 24,
        width: 48,
        classes: 3,
        objects: 3,
        rgb_only: 0.0,
        thermal_only: 0.0,
    };
    let gt = generate_scene(4, &spec)?.gt;

    for window in [3, 5, 7] {
        let b = boundary_labels(&gt, window)?;
        let [plain, edge] = b.counts();
        println!("window {window}: {edge} boundary pixels, {plain} interior");
    }

    let b5 = boundary_labels(&gt, 5)?;
    for r in 0..gt.height() {
        let row: String = (0..gt.width())
            .map(|c| match (b5.at(r, c), gt.at(r, c)) {
                (1, _) => '#',
                (_, 0) => '.',
                (_, k) => (b'0' + k) as char,
            })
            .collect();
        println!("{row}");
    }

    let weights = boundary_class_weights(b5.counts())?;
    println!(
        "class weights [interior, boundary] = [{:.3}, {:.3}]",
        weights[0], weights[1]
    );

    // Uniform logits: both terms equal ln(classes) before weighting.
    let tape = Tape::new();
    let (h, w) = (gt.height(), gt.width());
    let seg = tape.leaf(Tensor::zeros(&[spec.classes, h, w]));
    let bdr = tape.leaf(Tensor::zeros(&[2, h, w]));
    let lw = LossWeights {
        boundary_classes: weights,
        ..LossWeights::default()
    };
    let terms = total_loss(&tape, bdr, seg, &gt, &lw)?;
    println!(
        "L_seg = {:.4} (ln 3 = {:.4}), L_bdr = {:.4}, total = {:.4}",
        tape.value(terms.semantic).item()?,
        3f64.ln(),
        tape.value(terms.boundary).item()?,
        tape.value(terms.total).item()?
    );
    Ok(())
}
