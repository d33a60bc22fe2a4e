//! Confusion-matrix metrics: accumulate over images, merge partial
//! matrices, print both report formats.
//!
//! ```text
//! cargo run --release --example metrics
//! ```

use csrp::metrics::ConfusionMatrix;
use csrp::supervision::LabelMap;

fn main() -> csrp::Result<()> {
    // Rows are ground truth, columns predictions.
    let hand = ConfusionMatrix::from_counts(2, vec![3, 1, 0, 4])?;
    println!(
        "hand-checked matrix: mAcc {} mIoU {}",
        hand.mean_accuracy(),
        hand.mean_iou()
    );

    // Two images scored separately, then merged.
    let gt_a = LabelMap::new(2, 3, vec![0, 0, 1, 1, 2, 2])?;
    let pr_a = LabelMap::new(2, 3, vec![0, 1, 1, 1, 2, 0])?;
    let gt_b = LabelMap::new(2, 3, vec![2, 2, 2, 0, 0, 1])?;
    let pr_b = LabelMap::new(2, 3, vec![2, 2, 1, 0, 0, 1])?;

    let mut a = ConfusionMatrix::new(3);
    a.accumulate(&pr_a, &gt_a)?;
    let mut b = ConfusionMatrix::new(3);
    b.accumulate(&pr_b, &gt_b)?;
    let mut merged = a.clone();
    merged.merge(&b)?;

    let mut sequential = ConfusionMatrix::new(3);
    sequential.accumulate(&pr_a, &gt_a)?;
    sequential.accumulate(&pr_b, &gt_b)?;
    assert_eq!(merged, sequential);

    print!("{}", merged.report_text());
    println!("---");
    print!("{}", merged.report_kv());

    // A class absent from both ground truth and predictions scores zero and
    // still counts in the means.
    let mut sparse = ConfusionMatrix::new(4);
    sparse.accumulate(&pr_a, &gt_a)?;
    println!(
        "---\nwith an unused fourth class: mIoU {:.4}",
        sparse.mean_iou()
    );
    Ok(())
}
