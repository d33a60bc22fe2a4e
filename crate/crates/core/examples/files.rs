//! Writes the files the `csrp` binary reads: DTF feature tensors for
//! `fuse`, label maps for `boundary` and `metrics`, and a checkpoint
//! directory. Prints the commands that consume them.
//!
//! ```text
//! cargo run --release --example files -- [dir]
//! ```

use std::path::PathBuf;

use csrp::io;
use csrp::params::{Init, ParamStore};
use csrp::pipeline::{generate_scene, SceneSpec};
use csrp::relation::init_csrp;
use csrp::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("csrp-files"));
    for sub in ["pred", "gt"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }

    // DTF: magic, rank, extents, then little-endian f64s
    let rgb = Tensor::from_fn(&[8, 6, 6], |i| (i as f64 * 0.37).sin());
    let thermal = Tensor::from_fn(&[8, 6, 6], |i| (i as f64 * 0.21).cos());
    io::write_tensor(dir.join("rgb.dtf"), &rgb)?;
    io::write_tensor(dir.join("thermal.dtf"), &thermal)?;
    let bytes = io::encode_tensor(&rgb);
    println!(
        "rgb.dtf: {} bytes, header {:02x?}",
        bytes.len(),
        &bytes[..20]
    );
    assert_eq!(io::read_tensor(dir.join("rgb.dtf"))?, rgb);

    // One CSRP instance as a checkpoint directory: one DTF per parameter
    // plus a manifest.
    let mut store = ParamStore::new();
    init_csrp(&mut store, &mut Init::new(9), "csrp.l2", 8);
    let ckpt = dir.join("csrp_params");
    io::save_checkpoint(&ckpt, &store)?;
    let manifest = io::read_text(ckpt.join(io::MANIFEST))?;
    println!(
        "manifest: {} entries, first `{}`",
        manifest.lines().count(),
        manifest.lines().next().unwrap_or("")
    );

    // Label maps: ground truth from synthetic scenes and a "prediction"
    // that shifts every row one pixel right.
    let spec = SceneSpec {
        height: 32,
        width: 32,
        classes: 3,
        objects: 3,
        rgb_only: 0.5,
        thermal_only: 0.5,
    };
    for i in 0..4 {
        let gt = generate_scene(100 + i, &spec)?.gt;
        let shifted: Vec<u8> = (0..32 * 32)
            .map(|p| {
                if p % 32 == 0 {
                    gt.data()[p]
                } else {
                    gt.data()[p - 1]
                }
            })
            .collect();
        let pred = csrp::supervision::LabelMap::new(32, 32, shifted)?;
        io::write_label_map(dir.join("gt").join(format!("{i:02}.lbl")), &gt)?;
        io::write_label_map(dir.join("pred").join(format!("{i:02}.lbl")), &pred)?;
    }

    let d = dir.display();
    println!("\ntry:");
    println!("  csrp fuse --rgb {d}/rgb.dtf --thermal {d}/thermal.dtf --params {d}/csrp_params --out {d}/fused");
    println!("  csrp boundary {d}/gt/00.lbl {d}/00.bnd --window 5");
    println!("  csrp metrics --pred {d}/pred --gt {d}/gt --classes 3 --out {d}/metrics.txt");
    Ok(())
}
