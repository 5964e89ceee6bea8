//! Reverse-mode differentiation tape.
//!
//! Every forward operation appends a node holding its value and the context
//! its backward rule needs. Parents always precede children, so one reverse
//! sweep in tape order accumulates the chain rule. A node consumed by several
//! children (skip connections, the shift tap) receives the sum of all incoming
//! gradients.

use alloc::format;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use crate::error::{shape_err, Error, Result};
use crate::ops::activation::Activation;
use crate::ops::conv::{self, Geometry};
use crate::ops::norm;
use crate::real::Real;
use crate::shift::{self, ShiftAssignment};
use crate::tensor::{self, Tensor};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Lower clamp applied inside the adversarial log terms.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Which axis of a weight tensor [`Tape::zero_channels`] masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Dim0,
    Dim1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        g: Geometry,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        g: Geometry,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Concat {
        parts: Vec<Var>,
    },
    Shift {
        x: Var,
        assignment: ShiftAssignment,
    },
    ZeroChannels {
        x: Var,
        axis: Axis,
        start: usize,
        end: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        k: T,
    },
    WeightedSum {
        x: Var,
        weights: Tensor<T>,
    },
    L1 {
        x: Var,
        target: Tensor<T>,
        reduction: Reduction,
    },
    MaskedSqDist {
        x: Var,
        target: Tensor<T>,
        positions: Vec<usize>,
        reduction: Reduction,
    },
    NegLog {
        x: Var,
        complement: bool,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<T: Real = f64> {
    id: u32,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Accumulated gradients, one optional tensor per tape node.
pub struct Grads<T> {
    tape: u32,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(Option::take)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// A value with no parents: inputs, parameters, or constants.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf")
    }

    /// Copies a value into a fresh leaf so no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        self.check(v)?;
        let value = self.nodes[v.index].value.clone();
        self.leaf(value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, g: Geometry) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = b {
            self.check(b)?;
        }
        let value = conv::conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            g,
        )?;
        self.push(value, Op::Conv { x, w, b, g }, "conv2d")
    }

    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        g: Geometry,
    ) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = b {
            self.check(b)?;
        }
        let value = conv::conv2d_transpose(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            g,
        )?;
        self.push(value, Op::ConvTranspose { x, w, b, g }, "conv2d_transpose")
    }

    pub fn instance_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        self.check(x)?;
        let out = norm::instance_norm(self.value(x), eps)?;
        self.push(
            out.normalized,
            Op::InstanceNorm {
                x,
                inv_std: out.inv_std,
            },
            "instance_norm",
        )
    }

    /// Which side of its kink every piecewise-linear input sits on (ReLU and
    /// leaky ReLU inputs, l1 residuals). Two evaluations with equal
    /// signatures lie on the same linear piece of those ops.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Act {
                    x,
                    kind: Activation::Relu | Activation::LeakyRelu,
                } => sig.extend(self.value(*x).data().iter().map(|&v| v > T::zero())),
                Op::L1 { x, target, .. } => sig.extend(
                    self.value(*x)
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&a, &b)| a > b),
                ),
                _ => {}
            }
        }
        sig
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).map(|v| kind.apply(v));
        self.push(value, Op::Act { x, kind }, "activation")
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        for &p in parts {
            self.check(p)?;
        }
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = tensor::concat_channels(&refs)?;
        self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
            "concat_channels",
        )
    }

    /// Rearranges `x` by a fixed assignment; backward applies the transpose.
    pub fn shift(&mut self, x: Var, assignment: ShiftAssignment) -> Result<Var> {
        self.check(x)?;
        let value = shift::apply_assignment(self.value(x), &assignment)?;
        self.push(value, Op::Shift { x, assignment }, "shift")
    }

    /// Zeroes the index range `[start, end)` along one axis of a rank-4
    /// tensor; the masked entries receive no gradient.
    pub fn zero_channels(&mut self, x: Var, axis: Axis, start: usize, end: usize) -> Result<Var> {
        self.check(x)?;
        let mut value = self.value(x).clone();
        mask_axis(&mut value, axis, start, end)?;
        self.push(value, Op::ZeroChannels { x, axis, start, end }, "zero_channels")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let value = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        self.push(value, Op::Add { a, b }, "add")
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).scale(k);
        self.push(value, Op::Scale { x, k }, "scale")
    }

    /// Scalar `Σ x ⊙ weights`. With all-ones weights this is a plain sum.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        self.check(x)?;
        let value = Tensor::scalar(self.value(x).dot(&weights)?);
        self.push(value, Op::WeightedSum { x, weights }, "weighted_sum")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let ones = Tensor::full(self.value(x).shape().to_vec(), T::one());
        self.weighted_sum(x, ones)
    }

    /// `Σ|x − target|`, optionally divided by the element count.
    pub fn l1(&mut self, x: Var, target: Tensor<T>, reduction: Reduction) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        v.expect_same_shape(&target, "l1_loss")?;
        let mut total: T = v
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        if reduction == Reduction::Mean {
            total = total / T::lit(v.len() as f64);
        }
        self.push(
            Tensor::scalar(total),
            Op::L1 {
                x,
                target,
                reduction,
            },
            "l1_loss",
        )
    }

    /// Squared l2 distance between the channel vectors of `x` and `target`
    /// at the given raster positions of an NCHW map, summed (or averaged over
    /// positions).
    pub fn masked_sq_dist(
        &mut self,
        x: Var,
        target: Tensor<T>,
        positions: Vec<usize>,
        reduction: Reduction,
    ) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        v.expect_same_shape(&target, "guidance_loss")?;
        let (n, c, h, w) = v.dims4()?;
        let plane = h * w;
        if let Some(&p) = positions.iter().find(|&&p| p >= plane) {
            return Err(shape_err(
                "guidance_loss",
                format!("position {p} outside {h}x{w} map"),
            ));
        }
        let mut total = T::zero();
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                for &p in &positions {
                    let d = v.data()[base + p] - target.data()[base + p];
                    total = total + d * d;
                }
            }
        }
        if reduction == Reduction::Mean && !positions.is_empty() {
            total = total / T::lit((positions.len() * n) as f64);
        }
        self.push(
            Tensor::scalar(total),
            Op::MaskedSqDist {
                x,
                target,
                positions,
                reduction,
            },
            "guidance_loss",
        )
    }

    /// `−mean log(max(x, ε))`, or `−mean log(max(1 − x, ε))` when
    /// `complement` is set.
    pub fn neg_log_mean(&mut self, x: Var, complement: bool) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        let clamp = T::lit(LOG_CLAMP);
        let total: T = v
            .data()
            .iter()
            .map(|&p| {
                let q = if complement { T::one() - p } else { p };
                -(q.max(clamp)).ln()
            })
            .sum();
        let value = Tensor::scalar(total / T::lit(v.len() as f64));
        self.push(value, Op::NegLog { x, complement }, "neg_log_mean")
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        self.check(loss)?;
        let lv = &self.nodes[loss.index].value;
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(Tensor::full(lv.shape().to_vec(), T::one()));

        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Conv { x, w, b, g: geo } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (_, _, h, wd) = xv.dims4()?;
                    let k = wv.shape()[2];
                    accumulate(&mut grads, *x, conv::conv2d_backward_input(&g, wv, h, wd, *geo)?)?;
                    accumulate(&mut grads, *w, conv::conv2d_backward_weight(xv, &g, k, *geo)?)?;
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, conv::channel_sums(&g)?)?;
                    }
                }
                Op::ConvTranspose { x, w, b, g: geo } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let k = wv.shape()[2];
                    accumulate(&mut grads, *x, conv::conv2d(&g, wv, None, *geo)?)?;
                    accumulate(&mut grads, *w, conv::conv2d_backward_weight(&g, xv, k, *geo)?)?;
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, conv::channel_sums(&g)?)?;
                    }
                }
                Op::InstanceNorm { x, inv_std } => {
                    let gx = norm::instance_norm_backward(&g, &node.value, inv_std)?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Act { x, kind } => {
                    let xv = self.value(*x);
                    let mut gx = g.clone();
                    for ((gi, &xi), &yi) in gx
                        .data_mut()
                        .iter_mut()
                        .zip(xv.data())
                        .zip(node.value.data())
                    {
                        *gi = *gi * kind.derivative(xi, yi);
                    }
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Concat { parts } => {
                    let mut start = 0;
                    for &p in parts {
                        let c = self.value(p).shape()[1];
                        accumulate(&mut grads, p, g.slice_channels(start, start + c)?)?;
                        start += c;
                    }
                }
                Op::Shift { x, assignment } => {
                    accumulate(&mut grads, *x, shift::transpose_assignment(&g, assignment)?)?;
                }
                Op::ZeroChannels { x, axis, start, end } => {
                    let mut gx = g.clone();
                    mask_axis(&mut gx, *axis, *start, *end)?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::Scale { x, k } => accumulate(&mut grads, *x, g.scale(*k))?,
                Op::WeightedSum { x, weights } => {
                    let s = g.item();
                    accumulate(&mut grads, *x, weights.scale(s))?;
                }
                Op::L1 {
                    x,
                    target,
                    reduction,
                } => {
                    let xv = self.value(*x);
                    let mut s = g.item();
                    if *reduction == Reduction::Mean {
                        s = s / T::lit(xv.len() as f64);
                    }
                    let gx = xv.zip_map(target, |a, b| {
                        let d = a - b;
                        if d > T::zero() {
                            s
                        } else if d < T::zero() {
                            -s
                        } else {
                            T::zero()
                        }
                    })?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::MaskedSqDist {
                    x,
                    target,
                    positions,
                    reduction,
                } => {
                    let xv = self.value(*x);
                    let (n, c, h, w) = xv.dims4()?;
                    let plane = h * w;
                    let mut s = g.item() * T::lit(2.0);
                    if *reduction == Reduction::Mean && !positions.is_empty() {
                        s = s / T::lit((positions.len() * n) as f64);
                    }
                    let mut gx = Tensor::zeros(xv.shape().to_vec());
                    let gd = gx.data_mut();
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * plane;
                            for &p in positions {
                                gd[base + p] = s * (xv.data()[base + p] - target.data()[base + p]);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::NegLog { x, complement } => {
                    let xv = self.value(*x);
                    let s = g.item() / T::lit(xv.len() as f64);
                    let clamp = T::lit(LOG_CLAMP);
                    let gx = xv.map(|p| {
                        let q = if *complement { T::one() - p } else { p };
                        if q <= clamp {
                            T::zero()
                        } else if *complement {
                            s / q
                        } else {
                            -s / q
                        }
                    });
                    accumulate(&mut grads, *x, gx)?;
                }
            }
            grads[i] = Some(g);
        }
        Ok(Grads {
            tape: self.id,
            grads,
        })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[v.index] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn mask_axis<T: Real>(t: &mut Tensor<T>, axis: Axis, start: usize, end: usize) -> Result<()> {
    let (a, b, h, w) = t.dims4()?;
    let extent = match axis {
        Axis::Dim0 => a,
        Axis::Dim1 => b,
    };
    if start > end || end > extent {
        return Err(shape_err(
            "zero_channels",
            format!("range {start}..{end} outside axis of length {extent}"),
        ));
    }
    let plane = h * w;
    let data = t.data_mut();
    for i in 0..a {
        for j in 0..b {
            let hit = match axis {
                Axis::Dim0 => i,
                Axis::Dim1 => j,
            };
            if hit >= start && hit < end {
                let base = (i * b + j) * plane;
                data[base..base + plane].iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }
    Ok(())
}
