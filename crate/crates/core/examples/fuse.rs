//! One CSRP module applied to a pair of RGB/thermal feature maps.
//!
//! Shows the shared channel and spatial relations for both relation
//! functions, how much each stream moves, and the `lambda = 0` identity.
//!
//! ```text
//! cargo run --release --example fuse
//! ```

use csrp::params::{Init, ParamStore};
use csrp::relation::{self, Blocks, CsrpVars, RelationFn, LAMBDA_NAMES};
use csrp::{Tape, Tensor};

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn main() -> csrp::Result<()> {
    let (c, h, w) = (8, 6, 6);
    // two views of one scene: a shared blob plus modality-specific texture
    let blob = |i: usize| {
        let (y, x) = ((i / w) % h, i % w);
        if (2..5).contains(&y) && (1..4).contains(&x) {
            1.0
        } else {
            0.0
        }
    };
    let rgb = Tensor::from_fn(&[c, h, w], |i| blob(i) + 0.3 * (i as f64 * 0.9).sin());
    let thermal = Tensor::from_fn(&[c, h, w], |i| blob(i) + 0.3 * (i as f64 * 1.7).cos());

    let mut store = ParamStore::new();
    relation::init_csrp(&mut store, &mut Init::new(3), "m", c);

    for f in [RelationFn::DotProduct, RelationFn::Gaussian] {
        let tape = Tape::new();
        let vars = CsrpVars::bind(&store.bind_frozen(&tape), "m")?;
        let st = relation::csrp_forward(
            &tape,
            tape.constant(rgb.clone()),
            tape.constant(thermal.clone()),
            &vars,
            f,
            Blocks::BOTH,
        )?;
        println!("{f:?}");
        for (name, p) in [
            ("channel", st.shared_channel),
            ("spatial", st.shared_spatial),
        ] {
            let p = p.expect("both blocks ran").values(&tape)?;
            let sums = p.row_sums()?;
            let zero_rows = sums.iter().filter(|&&s| s == 0.0).count();
            let worst = sums
                .iter()
                .filter(|&&s| s != 0.0)
                .map(|s| (s - 1.0).abs())
                .fold(0.0, f64::max);
            println!(
                "  {name:<7} relation {}x{}: {zero_rows} zero rows, worst row-sum error {worst:.1e}",
                p.dims()[0],
                p.dims()[1]
            );
        }
        println!(
            "  rgb moved by {:.3}, thermal by {:.3}",
            max_abs_diff(&tape.value(st.rgb_enhanced), &rgb),
            max_abs_diff(&tape.value(st.thermal_enhanced), &thermal)
        );
    }

    // With every lambda at zero the module passes both streams through untouched.
    for n in LAMBDA_NAMES {
        store.insert(format!("m.lambda.{n}"), Tensor::scalar(0.0));
    }
    let tape = Tape::new();
    let vars = CsrpVars::bind(&store.bind_frozen(&tape), "m")?;
    let st = relation::csrp_forward(
        &tape,
        tape.constant(rgb.clone()),
        tape.constant(thermal.clone()),
        &vars,
        RelationFn::Gaussian,
        Blocks::BOTH,
    )?;
    println!(
        "lambda = 0: rgb identical {}, thermal identical {}",
        tape.value(st.rgb_enhanced) == rgb,
        tape.value(st.thermal_enhanced) == thermal
    );
    Ok(())
}
