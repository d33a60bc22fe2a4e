//! Reverse-mode differentiation over the op set of [`crate::tensor`].
//!
//! A [`Tape`] records every op applied to its [`Var`] handles in append
//! order, which is also a valid topological order. [`Tape::backward`] walks
//! the records in strict reverse order and accumulates vector-Jacobian
//! products. A tape is single-use: once `backward` has run it refuses to run
//! again, and a new forward pass needs a new tape.
//!
//! Constants (inputs, frozen parameters) are recorded too so one forward
//! code path serves training and evaluation; gradients are only propagated
//! into nodes that depend on a [`Tape::leaf`].

use std::cell::{Cell, Ref, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{matmul_acc, transpose_raw, ConvGeometry, Tensor};

/// Rows whose pre-normalisation mass is at or below this are emitted as zero rows.
pub const ZERO_ROW_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Relu(Var),
    Exp(Var),
    Conv2d {
        x: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Upsample2x(Var),
    ConcatChannels(Var, Var),
    Sum(Var),
    RowNormalize(Var),
    RowSoftmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<u8>,
        weights: Option<Vec<f64>>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Result of [`Tape::backward`]: one optional gradient per recorded node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if `var` is on the loss's
    /// dependency path and tracks gradients.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a value that gradients should flow into.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Records a value that is treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn value(&self, var: Var) -> Tensor {
        self.nodes.borrow()[var.0].value.clone()
    }

    pub fn dims(&self, var: Var) -> Vec<usize> {
        self.nodes.borrow()[var.0].value.dims().to_vec()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes.borrow()[var.0].requires_grad
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn nodes(&self) -> Ref<'_, Vec<Node>> {
        self.nodes.borrow()
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    fn unary(&self, a: Var, f: impl FnOnce(&Tensor) -> Result<Tensor>, op: Op) -> Result<Var> {
        let value = f(&self.nodes()[a.0].value)?;
        Ok(self.push(value, op, self.tracked(&[a])))
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
        op: Op,
    ) -> Result<Var> {
        let value = {
            let nodes = self.nodes();
            f(&nodes[a.0].value, &nodes[b.0].value)?
        };
        Ok(self.push(value, op, self.tracked(&[a, b])))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.matmul(y), Op::Matmul(a, b))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.transpose(), Op::Transpose(a))
    }

    pub fn reshape(&self, a: Var, dims: &[usize]) -> Result<Var> {
        self.unary(a, |x| x.reshape(dims), Op::Reshape(a))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.add(y), Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.sub(y), Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.mul(y), Op::Mul(a, b))
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, |x| Ok(x.scale(s)), Op::Scale(a, s))
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// `s * a` for a one-element tensor `s` (a learnable scalar).
    pub fn scale_by(&self, a: Var, s: Var) -> Result<Var> {
        self.binary(a, s, |x, s| Ok(x.scale(s.item()?)), Op::ScaleBy(a, s))
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary(a, |x| Ok(x.relu()), Op::Relu(a))
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn conv2d(&self, x: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (value, geom) = {
            let nodes = self.nodes();
            let (xv, wv, bv) = (
                &nodes[x.0].value,
                &nodes[weight.0].value,
                &nodes[bias.0].value,
            );
            let geom = ConvGeometry::new(xv, wv, bv, stride, pad)?;
            (xv.conv2d(wv, bv, stride, pad)?, geom)
        };
        let requires_grad = self.tracked(&[x, weight, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
            },
            requires_grad,
        ))
    }

    pub fn upsample2x(&self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.upsample2x(), Op::Upsample2x(a))
    }

    pub fn concat_channels(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.concat_channels(y), Op::ConcatChannels(a, b))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&self, a: Var) -> Result<Var> {
        self.unary(a, |x| Ok(Tensor::scalar(x.sum())), Op::Sum(a))
    }

    /// Divides each row of a non-negative matrix by its sum. Rows whose sum
    /// is `<= ZERO_ROW_EPS` become zero rows.
    pub fn row_normalize(&self, a: Var) -> Result<Var> {
        self.unary(a, row_normalize_value, Op::RowNormalize(a))
    }

    /// Row-wise `exp(x) / sum(exp(x))` evaluated after subtracting each row's
    /// maximum. A row whose exponential mass `sum(exp(x))` is `<= ZERO_ROW_EPS`
    /// becomes a zero row, matching [`Tape::row_normalize`] applied to `exp(x)`.
    pub fn row_softmax(&self, a: Var) -> Result<Var> {
        self.unary(a, row_softmax_value, Op::RowSoftmax(a))
    }

    /// Mean over pixels of the (optionally class-weighted) negative
    /// log-softmax of `logits` (`n x h x w`) at the target class of each pixel.
    pub fn cross_entropy(
        &self,
        logits: Var,
        targets: &[u8],
        weights: Option<&[f64]>,
    ) -> Result<Var> {
        let (loss, probs) = {
            let nodes = self.nodes();
            let lv = &nodes[logits.0].value;
            let [n, h, w] = lv.dims()[..] else {
                return Err(Error::shape(format!(
                    "cross_entropy logits must be n x h x w, got {:?}",
                    lv.dims()
                )));
            };
            if targets.len() != h * w {
                return Err(Error::shape(format!(
                    "cross_entropy: {} targets for a {h}x{w} logit map",
                    targets.len()
                )));
            }
            if let Some(wts) = weights {
                if wts.len() != n {
                    return Err(Error::shape(format!(
                        "cross_entropy: {} class weights for {n} classes",
                        wts.len()
                    )));
                }
            }
            if let Some(&bad) = targets.iter().find(|&&t| t as usize >= n) {
                return Err(Error::contract(format!(
                    "cross_entropy target {bad} >= class count {n}"
                )));
            }
            cross_entropy_value(lv.data(), n, h * w, targets, weights)
        };
        let requires_grad = self.tracked(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.map(<[f64]>::to_vec),
                probs,
            },
            requires_grad,
        ))
    }

    /// Sign pattern of every non-differentiable point the recorded forward
    /// pass passed near: ReLU inputs and the zero-row cut of the row
    /// normalisations. Two evaluations with equal patterns lie on the same
    /// smooth piece of the function.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let nodes = self.nodes();
        let mut pattern = Vec::new();
        for node in nodes.iter() {
            match node.op {
                Op::Relu(a) => pattern.extend(nodes[a.0].value.data().iter().map(|&x| x > 0.0)),
                Op::RowNormalize(a) => {
                    let v = &nodes[a.0].value;
                    let cols = v.dims()[1];
                    pattern.extend(
                        v.data()
                            .chunks(cols.max(1))
                            .map(|r| r.iter().sum::<f64>() > ZERO_ROW_EPS),
                    );
                }
                Op::RowSoftmax(a) => {
                    let v = &nodes[a.0].value;
                    let cols = v.dims()[1];
                    pattern.extend(
                        v.data()
                            .chunks(cols.max(1))
                            .map(|r| log_sum_exp(r) > ZERO_ROW_EPS.ln()),
                    );
                }
                _ => {}
            }
        }
        pattern
    }

    /// Gradients of the scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.consumed.replace(true) {
            return Err(Error::contract(
                "backward already ran on this tape; record a new forward pass",
            ));
        }
        let nodes = self.nodes();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got dims {:?}",
                nodes[loss.0].value.dims()
            )));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            propagate(&nodes, node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads: grads
                .into_iter()
                .zip(nodes.iter())
                .map(|(g, n)| {
                    g.filter(|_| n.requires_grad)
                        .map(|g| Tensor::new(n.value.dims(), g).expect("gradient dims"))
                })
                .collect(),
        })
    }
}

/// Adds `contrib` into the gradient slot of `var` when `var` tracks gradients.
fn accumulate(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    var: Var,
    contrib: impl FnOnce(&mut [f64]),
) {
    if !nodes[var.0].requires_grad {
        return;
    }
    let slot = grads[var.0].get_or_insert_with(|| vec![0.0; nodes[var.0].value.numel()]);
    contrib(slot);
}

fn add_into(dst: &mut [f64], src: impl IntoIterator<Item = f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Input => {}
        Op::Matmul(a, b) => {
            let (p, q) = (val(*a).dims()[0], val(*a).dims()[1]);
            let r = val(*b).dims()[1];
            // dA = G B^T, dB = A^T G
            accumulate(nodes, grads, *a, |ga| {
                let bt = transpose_raw(val(*b).data(), q, r);
                matmul_acc(g, &bt, ga, p, r, q);
            });
            accumulate(nodes, grads, *b, |gb| {
                let at = transpose_raw(val(*a).data(), p, q);
                matmul_acc(&at, g, gb, q, p, r);
            });
        }
        Op::Transpose(a) => {
            let d = val(*a).dims();
            let (r, c) = (d[0], d[1]);
            accumulate(nodes, grads, *a, |ga| add_into(ga, transpose_raw(g, c, r)));
        }
        Op::Reshape(a) => accumulate(nodes, grads, *a, |ga| add_into(ga, g.iter().copied())),
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g.iter().copied()));
            accumulate(nodes, grads, *b, |gb| add_into(gb, g.iter().copied()));
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g.iter().copied()));
            accumulate(nodes, grads, *b, |gb| add_into(gb, g.iter().map(|x| -x)));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            accumulate(nodes, grads, *a, |ga| {
                add_into(ga, g.iter().zip(bv).map(|(g, b)| g * b))
            });
            accumulate(nodes, grads, *b, |gb| {
                add_into(gb, g.iter().zip(av).map(|(g, a)| g * a))
            });
        }
        Op::Scale(a, s) => accumulate(nodes, grads, *a, |ga| add_into(ga, g.iter().map(|x| x * s))),
        Op::ScaleBy(a, s) => {
            let sv = val(*s).data()[0];
            accumulate(nodes, grads, *a, |ga| {
                add_into(ga, g.iter().map(|x| x * sv))
            });
            accumulate(nodes, grads, *s, |gs| {
                gs[0] += g
                    .iter()
                    .zip(val(*a).data())
                    .map(|(g, x)| g * x)
                    .sum::<f64>()
            });
        }
        Op::Relu(a) => accumulate(nodes, grads, *a, |ga| {
            add_into(
                ga,
                g.iter()
                    .zip(val(*a).data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }),
            )
        }),
        Op::Exp(a) => accumulate(nodes, grads, *a, |ga| {
            add_into(ga, g.iter().zip(node.value.data()).map(|(g, y)| g * y))
        }),
        Op::Conv2d {
            x,
            weight,
            bias,
            geom,
        } => {
            let (xv, wv) = (val(*x).data(), val(*weight).data());
            let mut gx = nodes[x.0].requires_grad.then(|| vec![0.0; xv.len()]);
            let mut gw = nodes[weight.0].requires_grad.then(|| vec![0.0; wv.len()]);
            let mut gb = nodes[bias.0].requires_grad.then(|| vec![0.0; geom.c_out]);
            geom.backward(
                xv,
                wv,
                g,
                gx.as_deref_mut(),
                gw.as_deref_mut(),
                gb.as_deref_mut(),
            );
            for (var, part) in [(*x, gx), (*weight, gw), (*bias, gb)] {
                if let Some(part) = part {
                    accumulate(nodes, grads, var, |dst| add_into(dst, part));
                }
            }
        }
        Op::Upsample2x(a) => {
            let d = val(*a).dims();
            let (c, h, w) = (d[0], d[1], d[2]);
            accumulate(nodes, grads, *a, |ga| {
                let w2 = 2 * w;
                for ch in 0..c {
                    for y in 0..2 * h {
                        for x in 0..w2 {
                            ga[(ch * h + y / 2) * w + x / 2] += g[(ch * 2 * h + y) * w2 + x];
                        }
                    }
                }
            });
        }
        Op::ConcatChannels(a, b) => {
            let split = val(*a).numel();
            accumulate(nodes, grads, *a, |ga| {
                add_into(ga, g[..split].iter().copied())
            });
            accumulate(nodes, grads, *b, |gb| {
                add_into(gb, g[split..].iter().copied())
            });
        }
        Op::Sum(a) => accumulate(nodes, grads, *a, |ga| {
            ga.iter_mut().for_each(|x| *x += g[0])
        }),
        Op::RowNormalize(a) => {
            let input = val(*a);
            let cols = input.dims()[1];
            accumulate(nodes, grads, *a, |ga| {
                for ((gi, xi), (gy, y)) in ga
                    .chunks_mut(cols)
                    .zip(input.data().chunks(cols))
                    .zip(g.chunks(cols).zip(node.value.data().chunks(cols)))
                {
                    let s: f64 = xi.iter().sum();
                    if s <= ZERO_ROW_EPS {
                        continue;
                    }
                    let dot: f64 = gy.iter().zip(y).map(|(a, b)| a * b).sum();
                    add_into(gi, gy.iter().map(|gv| (gv - dot) / s));
                }
            });
        }
        Op::RowSoftmax(a) => {
            let cols = val(*a).dims()[1];
            accumulate(nodes, grads, *a, |ga| {
                for (gi, (gy, y)) in ga
                    .chunks_mut(cols)
                    .zip(g.chunks(cols).zip(node.value.data().chunks(cols)))
                {
                    let dot: f64 = gy.iter().zip(y).map(|(a, b)| a * b).sum();
                    add_into(gi, gy.iter().zip(y).map(|(gv, yv)| yv * (gv - dot)));
                }
            });
        }
        Op::CrossEntropy {
            logits,
            targets,
            weights,
            probs,
        } => {
            let pixels = targets.len();
            let n = probs.len() / pixels.max(1);
            let scale = g[0] / pixels as f64;
            accumulate(nodes, grads, *logits, |gl| {
                for (p, &t) in targets.iter().enumerate() {
                    let wt = weights.as_ref().map_or(1.0, |w| w[t as usize]) * scale;
                    for c in 0..n {
                        let onehot = if c == t as usize { 1.0 } else { 0.0 };
                        gl[c * pixels + p] += wt * (probs[c * pixels + p] - onehot);
                    }
                }
            });
        }
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn matrix_cols(x: &Tensor, op: &str) -> Result<usize> {
    match x.dims() {
        [_, c] => Ok(*c),
        d => Err(Error::shape(format!(
            "{op} expects a matrix, got dims {d:?}"
        ))),
    }
}

fn row_normalize_value(x: &Tensor) -> Result<Tensor> {
    let cols = matrix_cols(x, "row_normalize")?;
    let mut out = x.to_vec();
    for row in out.chunks_mut(cols.max(1)) {
        let s: f64 = row.iter().sum();
        if s <= ZERO_ROW_EPS {
            row.fill(0.0);
        } else {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    Tensor::new(x.dims(), out)
}

fn row_softmax_value(x: &Tensor) -> Result<Tensor> {
    let cols = matrix_cols(x, "row_softmax")?;
    let mut out = x.to_vec();
    let cut = ZERO_ROW_EPS.ln();
    for row in out.chunks_mut(cols.max(1)) {
        let lse = log_sum_exp(row);
        if lse <= cut || !lse.is_finite() {
            row.fill(0.0);
        } else {
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
    }
    Tensor::new(x.dims(), out)
}

/// Returns the weighted mean NLL and the softmax probabilities (class-major).
fn cross_entropy_value(
    logits: &[f64],
    n: usize,
    pixels: usize,
    targets: &[u8],
    weights: Option<&[f64]>,
) -> (f64, Vec<f64>) {
    let mut probs = vec![0.0; n * pixels];
    let mut total = 0.0;
    let mut column = vec![0.0; n];
    for p in 0..pixels {
        for c in 0..n {
            column[c] = logits[c * pixels + p];
        }
        let lse = log_sum_exp(&column);
        for c in 0..n {
            probs[c * pixels + p] = (column[c] - lse).exp();
        }
        let t = targets[p] as usize;
        let w = weights.map_or(1.0, |w| w[t]);
        total += w * (lse - column[t]);
    }
    (total / pixels.max(1) as f64, probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5));
        let loss = tape.sum(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn grad_of_square_sum_is_twice_x() {
        let tape = Tape::new();
        let xv = Tensor::from_fn(&[4], |i| i as f64 * 0.7 - 1.0);
        let x = tape.leaf(xv.clone());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &xv.scale(2.0));
    }

    #[test]
    fn backward_twice_is_a_contract_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Contract(_))));
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[3]));
        let c = tape.constant(Tensor::full(&[3], 2.0));
        let y = tape.mul(x, c).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap(), &Tensor::full(&[3], 2.0));
    }

    #[test]
    fn unreachable_leaf_has_no_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[3]));
        let unused = tape.leaf(Tensor::ones(&[2]));
        let loss = tape.sum(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(unused).is_none());
    }

    #[test]
    fn row_normalize_zero_row() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[2, 2], vec![1.0, 3.0, 0.0, 0.0]).unwrap());
        let y = tape.row_normalize(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25, 0.75, 0.0, 0.0]);
    }

    #[test]
    fn row_softmax_matches_direct_and_cuts_tiny_rows() {
        let tape = Tape::new();
        let x =
            tape.constant(Tensor::new(&[2, 3], vec![0.1, -0.4, 1.3, -40.0, -41.0, -40.5]).unwrap());
        let y = tape.value(tape.row_softmax(x).unwrap());
        let e: Vec<f64> = [0.1f64, -0.4, 1.3].iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        for (got, ej) in y.data().iter().zip(&e) {
            assert!((got - ej / s).abs() < 1e-15);
        }
        // exp(-40) ~ 4e-18: total mass is below the zero-row cut
        assert_eq!(&y.data()[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_n() {
        for n in [2usize, 3, 9] {
            let tape = Tape::new();
            let logits = tape.constant(Tensor::zeros(&[n, 2, 3]));
            let targets = [0u8, 1, 1, 0, 1, 0];
            let loss = tape.cross_entropy(logits, &targets, None).unwrap();
            assert!((tape.value(loss).item().unwrap() - (n as f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn kink_pattern_tracks_relu_signs() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[3], vec![-1.0, 2.0, 0.0]).unwrap());
        tape.relu(x).unwrap();
        assert_eq!(tape.kink_pattern(), vec![false, true, false]);
    }
}
