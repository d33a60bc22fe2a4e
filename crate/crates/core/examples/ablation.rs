//! Trains the table variants on a small modality-complementary benchmark
//! and prints mAcc/mIoU per variant.
//!
//! ```text
//! cargo run --release --example ablation -- [config.txt] [variants]
//! ```

use std::time::Instant;

use csrp::pipeline::{ablation_run, format_table, parse_variants, Config};

fn main() -> csrp::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(path) => Config::parse(&csrp::io::read_text(path)?)?,
        None => Config::parse(include_str!("desk.cfg"))?,
    };
    let variants = parse_variants(&args.next().unwrap_or_else(|| "all".into()))?;
    let start = Instant::now();
    let rows = ablation_run(&cfg, &variants, |v, stage, e| {
        eprintln!("[{v} s{stage}] {e}");
    })?;
    print!("{}", format_table(&rows));
    eprintln!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
