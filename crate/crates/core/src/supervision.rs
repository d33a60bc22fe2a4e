//! Boundary labels, class-weighted cross-entropy and the composite loss
//! `lambda_bdr * L_bdr + lambda_seg * L_seg`.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// Per-pixel class ids of an `H x W` image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(format!(
                "label map {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        Ok(LabelMap { h, w, data })
    }

    pub fn filled(h: usize, w: usize, class: u8) -> Self {
        LabelMap {
            h,
            w,
            data: vec![class; h * w],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.w + col]
    }

    /// Largest class id plus one (0 for an empty map).
    pub fn class_bound(&self) -> usize {
        self.data.iter().max().map_or(0, |&m| m as usize + 1)
    }

    /// Errors unless every id is below `classes`.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.data.iter().find(|&&c| c as usize >= classes) {
            Some(&c) => Err(Error::contract(format!(
                "class id {c} out of range for {classes} classes"
            ))),
            None => Ok(()),
        }
    }

    /// Mirror image along the vertical axis.
    pub fn flip_horizontal(&self) -> LabelMap {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.w.max(1)) {
            row.reverse();
        }
        LabelMap { data, ..*self }
    }
}

/// Binary map: 1 marks a boundary pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryMap {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl BoundaryMap {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(format!(
                "boundary map {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::contract("boundary map values must be 0 or 1"));
        }
        Ok(BoundaryMap { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.w + col]
    }

    /// `[non-boundary, boundary]` pixel counts.
    pub fn counts(&self) -> [usize; 2] {
        let ones = self.data.iter().filter(|&&v| v == 1).count();
        [self.data.len() - ones, ones]
    }
}

/// Marks every pixel whose `window x window` neighbourhood, clamped to the
/// image, contains at least two distinct class ids.
pub fn boundary_labels(gt: &LabelMap, window: usize) -> Result<BoundaryMap> {
    if window.is_multiple_of(2) {
        return Err(Error::contract(format!(
            "boundary window must be odd, got {window}"
        )));
    }
    let r = window / 2;
    let (h, w) = (gt.h, gt.w);
    // Per row, the min and max class over the horizontal window; a 2-D
    // window holds two classes exactly when its min differs from its max.
    let mut row_min = vec![0u8; h * w];
    let mut row_max = vec![0u8; h * w];
    for i in 0..h {
        let row = &gt.data[i * w..(i + 1) * w];
        for j in 0..w {
            let span = &row[j.saturating_sub(r)..(j + r + 1).min(w)];
            row_min[i * w + j] = *span.iter().min().unwrap();
            row_max[i * w + j] = *span.iter().max().unwrap();
        }
    }
    let mut data = vec![0u8; h * w];
    for i in 0..h {
        for j in 0..w {
            let rows = i.saturating_sub(r)..(i + r + 1).min(h);
            let lo = rows.clone().map(|k| row_min[k * w + j]).min().unwrap();
            let hi = rows.map(|k| row_max[k * w + j]).max().unwrap();
            data[i * w + j] = u8::from(lo != hi);
        }
    }
    Ok(BoundaryMap { h, w, data })
}

/// ENet-style class weights `1 / ln(1.02 + f_k)` from `[non-boundary,
/// boundary]` pixel counts.
pub fn boundary_class_weights(counts: [usize; 2]) -> Result<[f64; 2]> {
    let total = counts[0] + counts[1];
    if total == 0 {
        return Err(Error::contract(
            "boundary class weights need at least one pixel",
        ));
    }
    Ok(counts.map(|c| 1.0 / (1.02 + c as f64 / total as f64).ln()))
}

/// Balance weights of the two loss terms and the boundary class weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub boundary: f64,
    pub semantic: f64,
    pub boundary_classes: [f64; 2],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            boundary: 1.0,
            semantic: 1.0,
            boundary_classes: [1.0, 1.0],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.boundary,
            self.semantic,
            self.boundary_classes[0],
            self.boundary_classes[1],
        ];
        // a zero balance weight switches a term off; class weights must be positive
        if all.iter().any(|w| !w.is_finite() || *w < 0.0)
            || self.boundary_classes.iter().any(|&w| w <= 0.0)
        {
            return Err(Error::contract(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

fn check_extent(tape: &Tape, logits: Var, h: usize, w: usize) -> Result<()> {
    let d = tape.dims(logits);
    if d.len() != 3 || d[1] != h || d[2] != w {
        return Err(Error::shape(format!(
            "logits {d:?} do not cover a {h}x{w} label map"
        )));
    }
    Ok(())
}

/// Mean over pixels of the weighted negative log-softmax at the true class.
pub fn cross_entropy(
    tape: &Tape,
    logits: Var,
    gt: &LabelMap,
    class_weights: Option<&[f64]>,
) -> Result<Var> {
    check_extent(tape, logits, gt.h, gt.w)?;
    tape.cross_entropy(logits, &gt.data, class_weights)
}

/// Weighted two-class cross-entropy of boundary logits against a boundary map.
pub fn boundary_loss(
    tape: &Tape,
    logits: Var,
    target: &BoundaryMap,
    class_weights: [f64; 2],
) -> Result<Var> {
    check_extent(tape, logits, target.h, target.w)?;
    tape.cross_entropy(logits, &target.data, Some(&class_weights))
}

/// The two loss terms and their weighted sum.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub boundary: Var,
    pub semantic: Var,
    pub total: Var,
}

/// `weights.boundary * L_bdr + weights.semantic * L_seg`, with the boundary
/// target derived from `gt` by a 5x5 window.
pub fn total_loss(
    tape: &Tape,
    bdr_logits: Var,
    seg_logits: Var,
    gt: &LabelMap,
    weights: &LossWeights,
) -> Result<LossTerms> {
    let target = boundary_labels(gt, 5)?;
    total_loss_with_boundary(tape, bdr_logits, seg_logits, gt, &target, weights)
}

/// [`total_loss`] with a precomputed boundary target.
pub fn total_loss_with_boundary(
    tape: &Tape,
    bdr_logits: Var,
    seg_logits: Var,
    gt: &LabelMap,
    target: &BoundaryMap,
    weights: &LossWeights,
) -> Result<LossTerms> {
    weights.validate()?;
    let boundary = boundary_loss(tape, bdr_logits, target, weights.boundary_classes)?;
    let semantic = cross_entropy(tape, seg_logits, gt, None)?;
    let a = tape.scale(boundary, weights.boundary)?;
    let b = tape.scale(semantic, weights.semantic)?;
    let total = tape.add(a, b)?;
    Ok(LossTerms {
        boundary,
        semantic,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    /// Direct window scan.
    fn oracle(gt: &LabelMap, window: usize) -> Vec<u8> {
        let r = window as isize / 2;
        let (h, w) = (gt.h as isize, gt.w as isize);
        let mut out = Vec::new();
        for i in 0..h {
            for j in 0..w {
                let mut seen = std::collections::BTreeSet::new();
                for di in -r..=r {
                    for dj in -r..=r {
                        let (y, x) = (i + di, j + dj);
                        if y >= 0 && y < h && x >= 0 && x < w {
                            seen.insert(gt.at(y as usize, x as usize));
                        }
                    }
                }
                out.push(u8::from(seen.len() >= 2));
            }
        }
        out
    }

    #[test]
    fn split_map_band() {
        let gt = LabelMap::new(8, 8, (0..64).map(|i| u8::from(i % 8 >= 4)).collect()).unwrap();
        let b = boundary_labels(&gt, 5).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(b.at(i, j), u8::from((2..=5).contains(&j)), "({i},{j})");
            }
        }
        assert_eq!(b.data(), oracle(&gt, 5));
    }

    #[test]
    fn uniform_and_window_one() {
        let gt = LabelMap::filled(5, 7, 3);
        assert!(boundary_labels(&gt, 5)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0));
        let gt = LabelMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        assert!(boundary_labels(&gt, 1)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0));
        assert_eq!(boundary_labels(&gt, 3).unwrap().data(), &[1, 1, 1, 1]);
    }

    #[test]
    fn even_window_is_rejected() {
        let gt = LabelMap::filled(3, 3, 0);
        assert!(matches!(boundary_labels(&gt, 4), Err(Error::Contract(_))));
        assert!(matches!(boundary_labels(&gt, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn class_weights() {
        let [w0, w1] = boundary_class_weights([10, 10]).unwrap();
        assert_eq!(w0, w1);
        assert!((w0 - 1.0 / 1.52f64.ln()).abs() < 1e-15);
        let [_, w1] = boundary_class_weights([1_000_000, 0]).unwrap();
        assert!((w1 - 1.0 / 1.02f64.ln()).abs() < 1e-12);
        assert!((w1 - 50.5).abs() < 0.01);
        let [w0, w1] = boundary_class_weights([90, 10]).unwrap();
        assert!(w1 > w0 && w0 > 0.0);
        assert!(matches!(
            boundary_class_weights([0, 0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn uniform_logits_give_ln_n() {
        for n in [2usize, 3, 9] {
            let tape = Tape::new();
            let logits = tape.leaf(Tensor::zeros(&[n, 3, 2]));
            let gt = LabelMap::new(3, 2, (0..6).map(|i| (i % n) as u8).collect()).unwrap();
            let l = cross_entropy(&tape, logits, &gt, None).unwrap();
            assert_eq!(tape.value(l).item().unwrap(), (n as f64).ln());
        }
    }

    #[test]
    fn confident_correct_limit() {
        let mut last = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 50.0] {
            let tape = Tape::new();
            let logits = tape.leaf(Tensor::from_fn(&[2, 2, 2], |i| {
                if i < 4 {
                    margin
                } else {
                    0.0
                }
            }));
            let l = tape
                .value(cross_entropy(&tape, logits, &LabelMap::filled(2, 2, 0), None).unwrap())
                .item()
                .unwrap();
            assert!(l >= 0.0 && l < last);
            last = l;
        }
        assert!(last < 1e-20);
    }

    #[test]
    fn cross_entropy_matches_direct_softmax() {
        let n = 3;
        let vals: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.9).collect();
        let gt = LabelMap::new(2, 2, vec![2, 0, 1, 1]).unwrap();
        let weights = [0.5, 2.0, 1.5];
        let tape = Tape::new();
        let logits = tape.constant(Tensor::new(&[n, 2, 2], vals.clone()).unwrap());
        let got = tape
            .value(cross_entropy(&tape, logits, &gt, Some(&weights)).unwrap())
            .item()
            .unwrap();
        let mut expected = 0.0;
        for p in 0..4 {
            let z: f64 = (0..n).map(|c| vals[c * 4 + p].exp()).sum();
            let t = gt.data()[p] as usize;
            expected -= weights[t] * (vals[t * 4 + p].exp() / z).ln();
        }
        expected /= 4.0;
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
    }

    #[test]
    fn extent_mismatch_is_shape_error() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(&[2, 3, 3]));
        assert!(matches!(
            cross_entropy(&tape, logits, &LabelMap::filled(3, 2, 0), None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn total_loss_linearity() {
        let gt = LabelMap::new(4, 4, (0..16).map(|i| (i / 6) as u8).collect()).unwrap();
        let bdr = Tensor::from_fn(&[2, 4, 4], |i| (i as f64 * 0.37).sin());
        let seg = Tensor::from_fn(&[3, 4, 4], |i| (i as f64 * 0.11).cos());
        let bmap = boundary_labels(&gt, 5).unwrap();
        let cw = boundary_class_weights(bmap.counts()).unwrap();
        let tape = Tape::new();
        let (b, s) = (tape.constant(bdr), tape.constant(seg));
        let w = LossWeights {
            boundary: 1.0,
            semantic: 1.0,
            boundary_classes: cw,
        };
        let terms = total_loss(&tape, b, s, &gt, &w).unwrap();
        let lb = tape
            .value(boundary_loss(&tape, b, &bmap, cw).unwrap())
            .item()
            .unwrap();
        let ls = tape
            .value(cross_entropy(&tape, s, &gt, None).unwrap())
            .item()
            .unwrap();
        assert!((tape.value(terms.total).item().unwrap() - (lb + ls)).abs() < 1e-12);

        let w0 = LossWeights {
            boundary: 0.0,
            semantic: 2.0,
            ..w
        };
        let terms = total_loss(&tape, b, s, &gt, &w0).unwrap();
        assert_eq!(tape.value(terms.total).item().unwrap(), 2.0 * ls);
    }

    #[test]
    fn flip_reverses_rows() {
        let m = LabelMap::new(2, 3, vec![0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(m.flip_horizontal().data(), &[2, 1, 0, 5, 4, 3]);
        assert_eq!(m.class_bound(), 6);
        assert!(m.check_classes(6).is_ok());
        assert!(matches!(m.check_classes(5), Err(Error::Contract(_))));
    }

    #[test]
    fn random_maps_match_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let gt = LabelMap::new(6, 9, (0..54).map(|_| rng.gen_range(0..3)).collect()).unwrap();
            for window in [1, 3, 5, 7] {
                assert_eq!(
                    boundary_labels(&gt, window).unwrap().data(),
                    oracle(&gt, window)
                );
            }
        }
    }
}
