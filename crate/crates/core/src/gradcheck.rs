//! Central-difference gradient checking against tape gradients.
//!
//! The comparison metric for one coordinate is
//! `|g_fd - g_tape| / max(1e-12, |g_fd| + |g_tape|)`.
//!
//! Piecewise-linear ops (ReLU, the zero-row cut of the row normalisations)
//! make the central difference meaningless when `x - h` and `x + h` sit on
//! different pieces. Every probe therefore reports the tape's
//! [`Tape::kink_pattern`]; coordinates whose perturbed patterns differ from
//! the unperturbed one are counted as `straddled` and left out of the
//! maximum.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Loss value and kink pattern of one forward evaluation.
#[derive(Clone, Debug)]
pub struct Probe {
    pub loss: f64,
    pub pattern: Vec<bool>,
}

impl Probe {
    /// Reads the scalar `loss` and the kink pattern off a recorded tape.
    pub fn from_tape(tape: &Tape, loss: Var) -> Result<Probe> {
        Ok(Probe {
            loss: tape.value(loss).item()?,
            pattern: tape.kink_pattern(),
        })
    }
}

/// Outcome of checking a set of coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub straddled: usize,
    /// Coordinate (in caller numbering) with the largest error, if any was checked.
    pub worst: Option<usize>,
    /// Checks where both derivatives were below the resolution floor.
    pub unresolved: usize,
    /// Unresolved checks that disagreed by more than the absolute floor.
    pub unresolved_mismatch: usize,
}

impl GradCheckReport {
    pub fn record(&mut self, coord: usize, outcome: Option<f64>) {
        match outcome {
            None => self.straddled += 1,
            Some(err) => {
                self.checked += 1;
                if self.worst.is_none() || err > self.max_rel_error {
                    self.max_rel_error = err;
                    self.worst = Some(coord);
                }
            }
        }
    }

    /// Records a numeric/tape pair under `floor`. `None` marks a straddle.
    pub fn record_pair(&mut self, coord: usize, fd: Option<f64>, tape: f64, floor: &Resolution) {
        match fd {
            Some(g) if g.abs() < floor.relative && tape.abs() < floor.relative => {
                self.unresolved += 1;
                if (g - tape).abs() > floor.absolute {
                    self.unresolved_mismatch += 1;
                }
            }
            _ => self.record(coord, fd.map(|g| relative_error(g, tape))),
        }
    }

    /// True when every resolved check is within `tol` and no unresolved one mismatched.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol && self.unresolved_mismatch == 0
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        if let Some(w) = other.worst {
            if self.worst.is_none() || other.max_rel_error > self.max_rel_error {
                self.max_rel_error = other.max_rel_error;
                self.worst = Some(w);
            }
        }
        self.checked += other.checked;
        self.straddled += other.straddled;
        self.unresolved += other.unresolved;
        self.unresolved_mismatch += other.unresolved_mismatch;
    }
}

/// Below `relative` in magnitude a difference quotient cannot be trusted to a
/// relative tolerance: rounding in the loss dominates. Such pairs must agree
/// to `absolute` instead.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resolution {
    pub relative: f64,
    pub absolute: f64,
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution {
            relative: 1e-8,
            absolute: 1e-10,
        }
    }
}

pub fn relative_error(fd: f64, tape: f64) -> f64 {
    (fd - tape).abs() / (fd.abs() + tape.abs()).max(1e-12)
}

/// Central difference of `eval` at offset 0, or `None` when either probe
/// lands on a different linear piece than `base`.
pub fn central_difference(
    base: &Probe,
    step: f64,
    mut eval: impl FnMut(f64) -> Result<Probe>,
) -> Result<Option<f64>> {
    let plus = eval(step)?;
    let minus = eval(-step)?;
    if plus.pattern != base.pattern || minus.pattern != base.pattern {
        return Ok(None);
    }
    Ok(Some((plus.loss - minus.loss) / (2.0 * step)))
}

/// Richardson extrapolation of two central differences at `step` and
/// `step / 2`. The truncation error drops from O(step^2) to O(step^4), so a
/// larger step can be used and rounding noise in the loss matters less.
pub fn extrapolated_difference(
    base: &Probe,
    step: f64,
    mut eval: impl FnMut(f64) -> Result<Probe>,
) -> Result<Option<f64>> {
    let Some(coarse) = central_difference(base, step, &mut eval)? else {
        return Ok(None);
    };
    let Some(fine) = central_difference(base, step / 2.0, &mut eval)? else {
        return Ok(None);
    };
    Ok(Some((4.0 * fine - coarse) / 3.0))
}

/// Derivative estimate from a ladder of halving steps.
///
/// Central differences are taken at `coarsest / 2^k` for `k < levels`, and
/// each adjacent pair is Richardson-extrapolated. Large steps suffer
/// truncation where curvature is high, small ones suffer rounding where the
/// slope is small. The two adjacent extrapolations that agree best sit
/// between the regimes; the coarser of them has the least rounding and a
/// truncation error bounded by the disagreement. Straddled steps drop out.
/// `None` when no extrapolation survives.
pub fn swept_difference(
    base: &Probe,
    ladder: &StepLadder,
    mut eval: impl FnMut(f64) -> Result<Probe>,
) -> Result<Option<f64>> {
    let mut differences = Vec::with_capacity(ladder.levels);
    let mut h = ladder.coarsest;
    for _ in 0..ladder.levels {
        differences.push(central_difference(base, h, &mut eval)?);
        h /= 2.0;
    }
    let estimates: Vec<Option<f64>> = differences
        .windows(2)
        .map(|w| Some((4.0 * w[1]? - w[0]?) / 3.0))
        .collect();
    let best = estimates
        .windows(2)
        .filter_map(|w| Some((w[0]?, w[1]?)))
        .min_by(|a, b| (a.0 - a.1).abs().total_cmp(&(b.0 - b.1).abs()))
        .map(|(coarse, _)| coarse);
    Ok(best.or_else(|| estimates.iter().flatten().next().copied()))
}

/// Halving step sequence for [`swept_difference`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLadder {
    pub coarsest: f64,
    pub levels: usize,
}

impl Default for StepLadder {
    /// 3e-3 down to about 1.2e-5.
    fn default() -> Self {
        StepLadder {
            coarsest: 3e-3,
            levels: 9,
        }
    }
}

/// Checks the tape gradient of a scalar function of one tensor at `x`.
///
/// `f` records the function on the tape it is given, starting from the
/// supplied input handle, and returns the scalar output handle.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape, Var) -> Result<Var>,
{
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&tape, xv)?;
    let base = Probe::from_tape(&tape, out)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.dims()));

    let eval_at = |perturbed: Tensor| -> Result<Probe> {
        let tape = Tape::new();
        let input = tape.constant(perturbed);
        let out = f(&tape, input)?;
        Probe::from_tape(&tape, out)
    };

    let mut report = GradCheckReport::default();
    for i in 0..x.numel() {
        let fd = central_difference(&base, step, |delta| {
            let mut data = x.to_vec();
            data[i] += delta;
            eval_at(Tensor::new(x.dims(), data)?)
        })?;
        report.record(i, fd.map(|g| relative_error(g, analytic.data()[i])));
    }
    Ok(report)
}

/// Checks directional derivatives of a scalar function of one tensor.
///
/// For every direction `u` the extrapolated difference of `f(x + t u)` is
/// compared with `<grad, u>`. A direction spanning many coordinates keeps
/// the probed derivative well above the rounding noise that swamps single
/// small coordinates. Each derivative comes from [`swept_difference`].
/// Report coordinates are direction indices.
pub fn directional_check<F>(
    f: F,
    x: &Tensor,
    directions: &[Tensor],
    floor: &Resolution,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape, Var) -> Result<Var>,
{
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&tape, xv)?;
    let base = Probe::from_tape(&tape, out)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport::default();
    for (k, u) in directions.iter().enumerate() {
        if u.dims() != x.dims() {
            return Err(Error::shape(format!(
                "direction dims {:?} vs input {:?}",
                u.dims(),
                x.dims()
            )));
        }
        let analytic = grads.get(xv).map_or(0.0, |g| {
            g.data().iter().zip(u.data()).map(|(a, b)| a * b).sum()
        });
        let fd = swept_difference(&base, &StepLadder::default(), |delta| {
            let data = x
                .data()
                .iter()
                .zip(u.data())
                .map(|(a, b)| a + delta * b)
                .collect();
            let tape = Tape::new();
            let input = tape.constant(Tensor::new(x.dims(), data)?);
            let out = f(&tape, input)?;
            Probe::from_tape(&tape, out)
        })?;
        report.record_pair(k, fd, analytic, floor);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        let x = Tensor::from_fn(&[3, 4], |i| (i as f64).sin());
        let r = finite_diff_check(|t, x| t.sum(x), &x, 1e-5).unwrap();
        assert_eq!(r.checked, 12);
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn relu_away_from_kink() {
        let x = Tensor::from_fn(&[6], |i| {
            if i % 2 == 0 {
                0.5 + i as f64
            } else {
                -0.3 - i as f64
            }
        });
        let r = finite_diff_check(
            |t, x| {
                let y = t.relu(x)?;
                t.sum(y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(r.straddled, 0);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn relu_at_kink_is_reported_as_straddled() {
        let x = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        let r = finite_diff_check(
            |t, x| {
                let y = t.relu(x)?;
                t.sum(y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(r.straddled, 1);
        assert_eq!(r.checked, 1);
    }

    #[test]
    fn directional_check_on_a_quadratic() {
        let x = Tensor::from_fn(&[5], |i| i as f64 - 2.0);
        let dirs: Vec<Tensor> = (0..3)
            .map(|k| Tensor::from_fn(&[5], |i| ((i + k) as f64).cos()))
            .collect();
        let r = directional_check(
            |t, x| {
                let y = t.mul(x, x)?;
                t.sum(y)
            },
            &x,
            &dirs,
            &Resolution::default(),
        )
        .unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.passes(1e-10), "{r:?}");
    }

    #[test]
    fn sweep_picks_the_consistent_pair() {
        // exp has every derivative equal to 1 at 0
        let base = Probe {
            loss: 1.0,
            pattern: vec![],
        };
        let g = swept_difference(&base, &StepLadder::default(), |d| {
            Ok(Probe {
                loss: d.exp(),
                pattern: vec![],
            })
        })
        .unwrap()
        .unwrap();
        assert!((g - 1.0).abs() < 1e-10, "{g}");
    }

    #[test]
    fn tiny_pairs_count_as_unresolved() {
        let mut r = GradCheckReport::default();
        let floor = Resolution::default();
        r.record_pair(0, Some(1e-9), 1.05e-9, &floor);
        r.record_pair(1, Some(2e-9), 5e-9, &floor);
        assert_eq!((r.checked, r.unresolved, r.unresolved_mismatch), (0, 2, 1));
        assert!(!r.passes(1.0));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // the checker must notice when analytic and numeric slopes disagree
        assert!(relative_error(1.0, 1.1) > 0.04);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }
}
