//! The reverse-mode tape on a two-layer conv net, checked against central
//! differences coordinate by coordinate and along random directions.
//!
//! ```text
//! cargo run --release --example autodiff
//! ```

use csrp::gradcheck::{directional_check, finite_diff_check, Resolution};
use csrp::{Tape, Tensor, Var};

fn net(tape: &Tape, x: Var, w1: &Tensor, w2: &Tensor) -> csrp::Result<Var> {
    let zero = |c| tape.constant(Tensor::zeros(&[c]));
    let h = tape.conv2d(x, tape.constant(w1.clone()), zero(4), 1, 1)?;
    let h = tape.relu(h)?;
    let y = tape.conv2d(h, tape.constant(w2.clone()), zero(3), 2, 1)?;
    let labels: Vec<u8> = (0..16).map(|i| (i % 3) as u8).collect();
    tape.cross_entropy(y, &labels, None)
}

fn main() -> csrp::Result<()> {
    let x = Tensor::from_fn(&[2, 8, 8], |i| (i as f64 * 0.37).sin());
    let w1 = Tensor::from_fn(&[4, 2, 3, 3], |i| 0.3 * (i as f64 * 0.71).cos());
    let w2 = Tensor::from_fn(&[3, 4, 3, 3], |i| 0.2 * (i as f64 * 0.53).sin());

    // forward, then one backward sweep
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let loss = net(&tape, xv, &w1, &w2)?;
    println!(
        "loss = {:.6}, {} nodes on the tape",
        tape.value(loss).item()?,
        tape.len()
    );
    let grads = tape.backward(loss)?;
    let g = grads.get(xv).expect("input is a leaf");
    println!(
        "|dL/dx|_max = {:.3e}",
        g.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    );

    // A second backward on the same tape is refused.
    println!("second backward: {}", tape.backward(loss).unwrap_err());

    let f = |t: &Tape, x: Var| net(t, x, &w1, &w2);
    let per_coord = finite_diff_check(f, &x, 1e-5)?;
    println!(
        "per coordinate: max rel err {:.2e} over {} coordinates, {} straddled a ReLU kink",
        per_coord.max_rel_error, per_coord.checked, per_coord.straddled
    );

    let dirs: Vec<Tensor> = (0..8)
        .map(|k| Tensor::from_fn(x.dims(), |i| ((i * 7 + k * 13) as f64).sin()))
        .collect();
    let directional = directional_check(f, &x, &dirs, &Resolution::default())?;
    println!(
        "directional: max rel err {:.2e} over {} directions",
        directional.max_rel_error, directional.checked
    );
    Ok(())
}
