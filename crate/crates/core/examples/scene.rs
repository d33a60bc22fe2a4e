//! Draws one synthetic RGB-thermal scene as text.
//!
//! Half the objects exist only in RGB and half only in thermal, so neither
//! image alone shows every labelled object.
//!
//! ```text
//! cargo run --release --example scene -- [seed]
//! ```

use csrp::pipeline::{generate_scene, SceneSpec};

const SHADES: &[u8] = b" .:-=+*#%@";

fn shade(v: f64, lo: f64, hi: f64) -> char {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    SHADES[(t * (SHADES.len() - 1) as f64).round() as usize] as char
}

fn main() -> csrp::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(18);
    let spec = SceneSpec {
        height: 24,
        width: 32,
        classes: 4,
        objects: 4,
        rgb_only: 0.5,
        thermal_only: 0.5,
    };
    let scene = generate_scene(seed, &spec)?;
    for o in &scene.objects {
        println!(
            "class {} {:?} {:?} at ({}, {}) {}x{}",
            o.class, o.visibility, o.shape, o.top, o.left, o.height, o.width
        );
    }

    let n = spec.height * spec.width;
    let rgb = scene.rgb.data();
    let thermal = scene.thermal.data();
    println!("\n{:<34}{:<34}labels", "rgb (colour magnitude)", "thermal");
    for r in 0..spec.height {
        let mut line = String::new();
        for c in 0..spec.width {
            let p = r * spec.width + c;
            let mag = (0..3).map(|k| rgb[k * n + p].powi(2)).sum::<f64>().sqrt();
            line.push(shade(mag, 0.15, 0.6));
        }
        line.push_str("  ");
        for c in 0..spec.width {
            line.push(shade(thermal[r * spec.width + c], 0.0, 0.8));
        }
        line.push_str("  ");
        for c in 0..spec.width {
            let k = scene.gt.at(r, c);
            line.push(if k == 0 { '.' } else { (b'0' + k) as char });
        }
        println!("{line}");
    }
    Ok(())
}
