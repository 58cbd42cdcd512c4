//! Wengert tape: every primitive applied during the forward pass is appended
//! to a linear list together with its output value, then replayed in reverse
//! to accumulate gradients.
//!
//! One tape belongs to one forward/backward pass. `Var`s carry the id of the
//! tape that created them so that mixing tapes is caught as a usage error.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{config_err, Error, Result};
use crate::footprint::Component;
use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Constant,
    Conv2d,
    BilinearResize,
    GridSample,
    PixelShuffle,
    Add,
    Mul,
    Concat,
    Relu,
    Sigmoid,
    Scale,
    Sum,
    Mean,
    MaskedL1,
}

enum Op<T> {
    Leaf,
    Constant,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    BilinearResize(Var),
    GridSample {
        x: Var,
        coords: Var,
    },
    PixelShuffle(Var, usize),
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    MaskedL1 {
        pred: Var,
        target: Tensor<T>,
        mask: Tensor<T>,
        count: usize,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Constant => OpKind::Constant,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::BilinearResize(_) => OpKind::BilinearResize,
            Op::GridSample { .. } => OpKind::GridSample,
            Op::PixelShuffle(..) => OpKind::PixelShuffle,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Concat(..) => OpKind::Concat,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Scale(..) => OpKind::Scale,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::MaskedL1 { .. } => OpKind::MaskedL1,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::GridSample { x, coords } => vec![*x, *coords],
            Op::Add(a, b) | Op::Mul(a, b) | Op::Concat(a, b) => vec![*a, *b],
            Op::BilinearResize(x)
            | Op::PixelShuffle(x, _)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
            Op::MaskedL1 { pred, .. } => vec![*pred],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    component: Component,
    flops: u64,
}

pub struct Tape<T> {
    id: u32,
    nodes: Vec<Node<T>>,
    component: Component,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            component: Component::Other,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Attribute subsequently recorded ops to `component`; returns the
    /// previous attribution.
    pub fn set_component(&mut self, component: Component) -> Component {
        std::mem::replace(&mut self.component, component)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Usage(format!("{v:?} is not recorded on tape {}", self.id)));
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, flops: u64) -> Var {
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            op => op.inputs().iter().any(|v| self.nodes[v.index].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            component: self.component,
            flops,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Differentiable input (parameter or checked input).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, 0)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, 0)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "{v:?} belongs to another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.value(v).shape()
    }

    /// Handle to node `index`, as returned by [`Tape::ancestors`].
    pub fn var_at(&self, index: usize) -> Var {
        assert!(index < self.nodes.len(), "node {index} is not on this tape");
        Var { tape: self.id, index }
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.index].op.kind()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.index].op.inputs()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    /// Every node index reachable backwards from `v`, including `v`.
    pub fn ancestors(&self, v: Var) -> HashSet<usize> {
        let mut seen = HashSet::new();
        let mut stack = vec![v];
        while let Some(cur) = stack.pop() {
            if seen.insert(cur.index) {
                stack.extend(self.nodes[cur.index].op.inputs());
            }
        }
        seen
    }

    /// FLOPs recorded per component, in declaration order of `Component`.
    pub fn flops_by_component(&self) -> Vec<(Component, u64)> {
        Component::ALL
            .iter()
            .map(|&c| {
                let total = self
                    .nodes
                    .iter()
                    .filter(|n| n.component == c)
                    .map(|n| n.flops)
                    .sum();
                (c, total)
            })
            .collect()
    }

    pub fn total_flops(&self) -> u64 {
        self.nodes.iter().map(|n| n.flops).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.nodes.iter().all(|n| n.value.is_finite())
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = b {
            self.check(b)?;
        }
        let out = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let ws = self.shape(w);
        let os = out.shape();
        let px = (os.n * os.plane()) as u64;
        let mut flops = 2 * (ws.n * ws.c * ws.h * ws.w) as u64 * px;
        if b.is_some() {
            flops += ws.n as u64 * px;
        }
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, flops))
    }

    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        self.check(x)?;
        let out = kernels::bilinear_resize_forward(self.value(x), out_h, out_w)?;
        let flops = 8 * out.numel() as u64;
        Ok(self.push(out, Op::BilinearResize(x), flops))
    }

    pub fn grid_sample(&mut self, x: Var, coords: Var) -> Result<Var> {
        self.check(x)?;
        self.check(coords)?;
        let out = kernels::grid_sample_forward(self.value(x), self.value(coords))?;
        let flops = 9 * out.numel() as u64;
        Ok(self.push(out, Op::GridSample { x, coords }, flops))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        self.check(x)?;
        let out = kernels::pixel_shuffle_forward(self.value(x), r)?;
        Ok(self.push(out, Op::PixelShuffle(x, r), 0))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(config_err!("{what}: shape mismatch {sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        let flops = out.numel() as u64;
        Ok(self.push(out, Op::Add(a, b), flops))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        let flops = out.numel() as u64;
        Ok(self.push(out, Op::Mul(a, b), flops))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = kernels::concat_channels_forward(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Concat(a, b), 0))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| v.max(T::zero()));
        let flops = out.numel() as u64;
        Ok(self.push(out, Op::Relu(x), flops))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let flops = out.numel() as u64;
        Ok(self.push(out, Op::Sigmoid(x), flops))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| v * s);
        let flops = out.numel() as u64;
        Ok(self.push(out, Op::Scale(x, s), flops))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = Tensor::scalar(self.value(x).sum());
        Ok(self.push(out, Op::Sum(x), 0))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / T::of_usize(v.numel()));
        Ok(self.push(out, Op::Mean(x), 0))
    }

    /// Mean absolute error over pixels where `mask` is non-zero.
    pub fn masked_l1(&mut self, pred: Var, target: &Tensor<T>, mask: &Tensor<T>) -> Result<Var> {
        self.check(pred)?;
        let p = self.value(pred);
        if p.shape() != target.shape() || p.shape() != mask.shape() {
            return Err(config_err!(
                "l1 loss shape mismatch: pred {:?}, target {:?}, mask {:?}",
                p.shape(),
                target.shape(),
                mask.shape()
            ));
        }
        let count = mask.data().iter().filter(|&&m| m != T::zero()).count();
        if count == 0 {
            return Err(Error::Eval("l1 loss over an empty mask".into()));
        }
        let total: T = p
            .data()
            .iter()
            .zip(target.data())
            .zip(mask.data())
            .filter(|(_, &m)| m != T::zero())
            .map(|((&a, &b), _)| (a - b).abs())
            .sum();
        let out = Tensor::scalar(total / T::of_usize(count));
        let op = Op::MaskedL1 {
            pred,
            target: target.clone(),
            mask: mask.clone(),
            count,
        };
        Ok(self.push(out, op, 0))
    }

    /// Reverse sweep from a scalar `loss`. Each node is visited once, in
    /// reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(Tensor::ones(lv.shape()));

        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let needs = |v: Var| self.nodes[v.index].requires_grad;
            match &node.op {
                Op::Leaf | Op::Constant => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv2d { x, w, b, stride, pad } => {
                    let cg = kernels::conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        &g,
                        *stride,
                        *pad,
                        needs(*x),
                        needs(*w),
                        b.is_some_and(needs),
                    );
                    accumulate(&mut grads, *x, cg.input);
                    accumulate(&mut grads, *w, cg.weight);
                    if let Some(b) = b {
                        let gb = cg.bias.map(|t| t.reshape(self.shape(*b)).unwrap());
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::BilinearResize(x) => {
                    let gx = kernels::bilinear_resize_backward(self.value(*x), &g);
                    accumulate(&mut grads, *x, Some(gx));
                }
                Op::GridSample { x, coords } => {
                    let (gx, gc) = kernels::grid_sample_backward(
                        self.value(*x),
                        self.value(*coords),
                        &g,
                        needs(*x),
                        needs(*coords),
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *coords, gc);
                }
                Op::PixelShuffle(x, r) => {
                    let gx = kernels::pixel_unshuffle(&g, *r).expect("shape recorded in forward");
                    accumulate(&mut grads, *x, Some(gx));
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        accumulate(&mut grads, *a, Some(g.clone()));
                    }
                    accumulate(&mut grads, *b, Some(g));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if needs(*a) {
                        let ga = zip_map(&g, vb, |g, y| g * y);
                        accumulate(&mut grads, *a, Some(ga));
                    }
                    if needs(*b) {
                        let gb = zip_map(&g, va, |g, x| g * x);
                        accumulate(&mut grads, *b, Some(gb));
                    }
                }
                Op::Concat(a, b) => {
                    let (ga, gb) = kernels::split_channels(&g, self.shape(*a).c);
                    accumulate(&mut grads, *a, Some(ga));
                    accumulate(&mut grads, *b, Some(gb));
                }
                Op::Relu(x) => {
                    let gx = zip_map(&g, &node.value, |g, y| if y > T::zero() { g } else { T::zero() });
                    accumulate(&mut grads, *x, Some(gx));
                }
                Op::Sigmoid(x) => {
                    let gx = zip_map(&g, &node.value, |g, y| g * y * (T::one() - y));
                    accumulate(&mut grads, *x, Some(gx));
                }
                Op::Scale(x, s) => {
                    let s = *s;
                    accumulate(&mut grads, *x, Some(g.map(|v| v * s)));
                }
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads, *x, Some(Tensor::full(self.shape(*x), gv)));
                }
                Op::Mean(x) => {
                    let s = self.shape(*x);
                    let gv = g.data()[0] / T::of_usize(s.numel());
                    accumulate(&mut grads, *x, Some(Tensor::full(s, gv)));
                }
                Op::MaskedL1 {
                    pred,
                    target,
                    mask,
                    count,
                } => {
                    let scale = g.data()[0] / T::of_usize(*count);
                    let p = self.value(*pred);
                    let data = p
                        .data()
                        .iter()
                        .zip(target.data())
                        .zip(mask.data())
                        .map(|((&a, &b), &m)| {
                            if m == T::zero() || a == b {
                                T::zero()
                            } else {
                                (a - b).signum() * scale
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *pred, Some(Tensor::from_vec(p.shape(), data)?));
                }
            }
        }

        // Keep gradients only for leaves.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).unwrap()
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Option<Tensor<T>>) {
    let Some(g) = g else { return };
    match &mut grads[v.index] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Gradients of a scalar with respect to every leaf on the tape.
pub struct Gradients<T> {
    tape: u32,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: Shape) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = tape.leaf(Tensor::uniform(shape(2, 3, 4, 4), -1.0, 1.0, &mut rng));
        let l = tape.sum(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn half_square_gives_identity() {
        let mut tape = Tape::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xv = Tensor::uniform(shape(1, 2, 3, 3), -1.0, 1.0, &mut rng);
        let x = tape.leaf(xv.clone());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let l = tape.scale(s, 0.5).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(x).unwrap().max_abs_diff(&xv) < 1e-15);
    }

    #[test]
    fn foreign_and_non_scalar_loss_rejected() {
        let mut a = Tape::<f64>::new();
        let mut b = Tape::<f64>::new();
        let xa = a.leaf(Tensor::scalar(1.0));
        let _ = b.leaf(Tensor::scalar(1.0));
        assert!(matches!(b.backward(xa), Err(Error::Usage(_))));
        assert!(b.relu(xa).is_err());
        let v = a.leaf(Tensor::zeros(shape(1, 1, 2, 2)));
        assert!(matches!(a.backward(v), Err(Error::Usage(_))));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(shape(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x).unwrap();
        let l = tape.sum(y).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(shape(1, 1, 2, 2)));
        let b = tape.leaf(Tensor::zeros(shape(1, 2, 2, 2)));
        assert!(matches!(tape.add(a, b), Err(Error::Config(_))));
        assert!(matches!(tape.mul(a, b), Err(Error::Config(_))));
        let c = tape.leaf(Tensor::zeros(shape(1, 1, 3, 2)));
        assert!(matches!(tape.concat_channels(a, c), Err(Error::Config(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(shape(1, 1, 2, 2), 2.0));
        let c = tape.constant(Tensor::full(shape(1, 1, 2, 2), 3.0));
        let y = tape.mul(x, c).unwrap();
        let l = tape.sum(y).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 3.0));
        assert!(!tape.requires_grad(c));
    }

    #[test]
    fn masked_l1_values_and_errors() {
        let mut tape = Tape::<f64>::new();
        let gt = Tensor::from_vec(shape(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mask = Tensor::from_vec(shape(1, 1, 2, 2), vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let p = tape.leaf(gt.map(|v| v + 0.5));
        let l = tape.masked_l1(p, &gt, &mask).unwrap();
        assert!((tape.value(l).item().unwrap() - 0.5).abs() < 1e-15);
        let same = tape.leaf(gt.clone());
        let l0 = tape.masked_l1(same, &gt, &mask).unwrap();
        assert_eq!(tape.value(l0).item().unwrap(), 0.0);
        let empty = Tensor::zeros(shape(1, 1, 2, 2));
        assert!(matches!(tape.masked_l1(p, &gt, &empty), Err(Error::Eval(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn l1_is_non_negative_and_zero_only_on_agreement(
                pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, proptest::bool::ANY), 1..32),
            ) {
                prop_assume!(pairs.iter().any(|p| p.2));
                let n = pairs.len();
                let s = shape(1, 1, 1, n);
                let pred = Tensor::from_vec(s, pairs.iter().map(|p| p.0).collect()).unwrap();
                let gt = Tensor::from_vec(s, pairs.iter().map(|p| p.1).collect()).unwrap();
                let mask = Tensor::from_vec(s, pairs.iter().map(|p| if p.2 { 1.0 } else { 0.0 }).collect()).unwrap();
                let mut tape = Tape::<f64>::new();
                let v = tape.leaf(pred);
                let l = tape.masked_l1(v, &gt, &mask).unwrap();
                let loss = tape.value(l).item().unwrap();
                prop_assert!(loss >= 0.0);
                let agree = pairs.iter().all(|p| !p.2 || p.0 == p.1);
                prop_assert_eq!(loss == 0.0, agree);
                let same = tape.leaf(gt.clone());
                let l0 = tape.masked_l1(same, &gt, &mask).unwrap();
                prop_assert_eq!(tape.value(l0).item().unwrap(), 0.0);
            }
        }
    }
}
