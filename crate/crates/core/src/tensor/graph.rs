use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    /// Natural log; the input must be strictly positive.
    Log,
}

impl Activation {
    pub const LEAKY_RELU: Activation = Activation::LeakyRelu(0.01);
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Clamp(Var, T, T),
    Act(Var, Activation),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    PoolAvg2(Var),
    Upsample2(Var),
    Concat(Var, Var),
    SliceChannels {
        input: Var,
        start: usize,
    },
    Reduce {
        input: Var,
        axes: Vec<usize>,
        mean: bool,
    },
    InstanceNorm {
        input: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Concat(a, b) => {
                vec![a, b]
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Clamp(a, _, _)
            | Op::Act(a, _)
            | Op::PoolAvg2(a)
            | Op::Upsample2(a)
            | Op::SliceChannels { input: a, .. }
            | Op::Reduce { input: a, .. } => vec![a],
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => vec![input, kernel, bias],
            Op::InstanceNorm {
                input, gain, bias, ..
            } => vec![input, gain, bias],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Append-only record of tensor operations.
///
/// Nodes are stored in creation order, which is a topological order: every
/// op's inputs already exist when it is recorded. Leaf gradients accumulate
/// across [`Graph::backward`] calls until [`Graph::zero_grad`].
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// A leaf whose gradient is accumulated by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf created with [`Graph::param`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        rec: fn(Var, Var) -> Op<T>,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(op, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, rec(a, b)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let va = self.value(a);
        let out = Tensor {
            shape: va.shape().to_vec(),
            data: va.data().iter().map(|&x| f(x)).collect(),
        };
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Elementwise quotient. The divisor must be nonzero everywhere.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().contains(&T::ZERO) {
            return Err(Error::Domain {
                op: "div",
                msg: "division by zero".into(),
            });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    /// Clamp to `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let f: Box<dyn Fn(T) -> T> = match kind {
            Activation::Relu => Box::new(|x: T| x.max(T::ZERO)),
            Activation::LeakyRelu(slope) => {
                let s = T::from_f64(slope);
                Box::new(move |x: T| if x > T::ZERO { x } else { x * s })
            }
            Activation::Sigmoid => Box::new(sigmoid::<T>),
            Activation::Log => {
                if let Some(bad) = self.value(a).data().iter().find(|&&v| !(v > T::ZERO)) {
                    return Err(Error::Domain {
                        op: "log",
                        msg: format!("non-positive input {bad}"),
                    });
                }
                Box::new(|x: T| x.ln())
            }
        };
        Ok(self.unary(a, f, Op::Act(a, kind)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu).expect("relu is total")
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::LEAKY_RELU)
            .expect("leaky relu is total")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
            .expect("sigmoid is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Log)
    }

    /// Cross-correlation of `[B,Cin,H,W]` with `[Cout,Cin,k,k]` plus a per-channel bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let kt = self.value(kernel);
        let bt = self.value(bias);
        let (batch, cin, h, w) = x
            .dims4()
            .ok_or_else(|| Error::invalid("conv2d", format!("input must be rank 4, got {:?}", x.shape())))?;
        let (cout, kcin, kh, kw) = kt
            .dims4()
            .ok_or_else(|| Error::invalid("conv2d", format!("kernel must be rank 4, got {:?}", kt.shape())))?;
        if kcin != cin {
            return Err(Error::shape("conv2d", x.shape(), kt.shape()));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::invalid("conv2d", format!("kernel must be square and odd, got {kh}x{kw}")));
        }
        if bt.shape() != [cout] {
            return Err(Error::shape("conv2d", bt.shape(), &[cout]));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        if h + 2 * padding < kh || w + 2 * padding < kh {
            return Err(Error::invalid(
                "conv2d",
                format!("{h}x{w} input with padding {padding} is smaller than kernel {kh}"),
            ));
        }
        let geom = ConvGeom {
            batch,
            cin,
            h,
            w,
            cout,
            k: kh,
            stride,
            pad: padding,
        };
        let data = kernels::conv2d_forward(&geom, x.data(), kt.data(), bt.data());
        let out = Tensor::new([batch, cout, geom.out_h(), geom.out_w()], data)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
        ))
    }

    fn spatial(&self, op: &'static str, a: Var) -> Result<(usize, usize, usize, usize)> {
        self.value(a)
            .dims4()
            .ok_or_else(|| Error::invalid(op, format!("expected rank 4, got {:?}", self.shape(a))))
    }

    /// 2×2 average pooling with stride 2.
    pub fn pool_avg2(&mut self, a: Var) -> Result<Var> {
        let (b, c, h, w) = self.spatial("pool_avg2", a)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid("pool_avg2", format!("odd spatial dims {h}x{w}")));
        }
        let data = kernels::pool_avg2_forward(b * c, h, w, self.value(a).data());
        let out = Tensor::new([b, c, h / 2, w / 2], data)?;
        Ok(self.push(out, Op::PoolAvg2(a)))
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample_nearest2(&mut self, a: Var) -> Result<Var> {
        let (b, c, h, w) = self.spatial("upsample_nearest2", a)?;
        let data = kernels::upsample2_forward(b * c, h, w, self.value(a).data());
        let out = Tensor::new([b, c, 2 * h, 2 * w], data)?;
        Ok(self.push(out, Op::Upsample2(a)))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, ca, ha, wa) = self.spatial("concat_channels", a)?;
        let (bb, cb, hb, wb) = self.spatial("concat_channels", b)?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(Error::shape("concat_channels", self.shape(a), self.shape(b)));
        }
        let plane = ha * wa;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(ba * (ca + cb) * plane);
        for n in 0..ba {
            data.extend_from_slice(&da[n * ca * plane..(n + 1) * ca * plane]);
            data.extend_from_slice(&db[n * cb * plane..(n + 1) * cb * plane]);
        }
        let out = Tensor::new([ba, ca + cb, ha, wa], data)?;
        Ok(self.push(out, Op::Concat(a, b)))
    }

    /// Channels `start..start + len` of a rank-4 tensor.
    pub fn slice_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (b, c, h, w) = self.spatial("slice_channels", a)?;
        if len == 0 || start + len > c {
            return Err(Error::invalid(
                "slice_channels",
                format!("range {start}..{} outside {c} channels", start + len),
            ));
        }
        let plane = h * w;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(b * len * plane);
        for n in 0..b {
            let off = (n * c + start) * plane;
            data.extend_from_slice(&src[off..off + len * plane]);
        }
        let out = Tensor::new([b, len, h, w], data)?;
        Ok(self.push(out, Op::SliceChannels { input: a, start }))
    }

    fn reduce(&mut self, a: Var, axes: &[usize], mean: bool) -> Result<Var> {
        let op = if mean { "mean" } else { "sum" };
        let shape = self.shape(a).to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if axes.is_empty() {
            return Err(Error::invalid(op, "empty reduction set"));
        }
        if let Some(&bad) = axes.iter().find(|&&ax| ax >= shape.len()) {
            return Err(Error::invalid(op, format!("axis {bad} out of range for {shape:?}")));
        }
        let count: usize = axes.iter().map(|&ax| shape[ax]).product();
        if count == 0 {
            return Err(Error::invalid(op, "reduction over zero elements"));
        }
        let map = ReduceMap::new(&shape, &axes);
        let mut out = vec![T::ZERO; map.out_len];
        for (i, &v) in self.value(a).data().iter().enumerate() {
            out[map.out_index(i)] += v;
        }
        if mean {
            let inv = T::ONE / T::from_f64(count as f64);
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let out = Tensor::new(map.out_shape.clone(), out)?;
        Ok(self.push(out, Op::Reduce { input: a, axes, mean }))
    }

    /// Sum over `axes`, removing them from the shape.
    pub fn sum(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(a, axes, false)
    }

    pub fn mean(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(a, axes, true)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        if axes.is_empty() {
            return Ok(a);
        }
        self.sum(a, &axes)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        if axes.is_empty() {
            return Ok(a);
        }
        self.mean(a, &axes)
    }

    /// Per-(sample, channel) normalization over the spatial plane followed by
    /// a per-channel affine map.
    pub fn instance_norm(&mut self, input: Var, gain: Var, bias: Var) -> Result<Var> {
        let (b, c, h, w) = self.spatial("instance_norm", input)?;
        if h * w < 2 {
            return Err(Error::invalid("instance_norm", format!("plane {h}x{w} has fewer than 2 pixels")));
        }
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(Error::shape("instance_norm", self.shape(gain), &[c]));
        }
        let (out, xhat, inv_std) = kernels::instance_norm_forward(
            b,
            c,
            h * w,
            self.value(input).data(),
            self.value(gain).data(),
            self.value(bias).data(),
        );
        let out = Tensor::new([b, c, h, w], out)?;
        Ok(self.push(
            out,
            Op::InstanceNorm {
                input,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Reverse-mode accumulation from a single-element root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = self.value(root);
        if root_value.numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("root must be scalar, got shape {:?}", root_value.shape()),
            ));
        }
        let mut local: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        local[root.0] = Some(Tensor::full(root_value.shape().to_vec(), T::ONE));

        for i in (0..=root.0).rev() {
            let Some(g) = local[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            for (input, contrib) in self.input_grads(i, &g) {
                match &mut local[input.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `i` to each of its inputs that needs one.
    fn input_grads(&self, i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let like = |v: Var, data: Vec<T>| Tensor {
            shape: self.shape(v).to_vec(),
            data,
        };
        let map = |f: &dyn Fn(usize, T) -> T| -> Vec<T> {
            g.data().iter().enumerate().map(|(k, &gv)| f(k, gv)).collect()
        };
        let mut out = Vec::new();
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(a) {
                    out.push((a, g.clone()));
                }
                if needs(b) {
                    out.push((b, g.clone()));
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    out.push((a, g.clone()));
                }
                if needs(b) {
                    out.push((b, like(b, map(&|_, gv| -gv))));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                if needs(a) {
                    out.push((a, like(a, map(&|k, gv| gv * vb[k]))));
                }
                if needs(b) {
                    out.push((b, like(b, map(&|k, gv| gv * va[k]))));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                if needs(a) {
                    out.push((a, like(a, map(&|k, gv| gv / vb[k]))));
                }
                if needs(b) {
                    out.push((b, like(b, map(&|k, gv| -gv * va[k] / (vb[k] * vb[k])))));
                }
            }
            Op::Scale(a, s) => out.push((a, like(a, map(&|_, gv| gv * s)))),
            Op::AddScalar(a) => out.push((a, g.clone())),
            Op::Clamp(a, lo, hi) => {
                let va = self.value(a).data();
                out.push((
                    a,
                    like(a, map(&|k, gv| if va[k] < lo || va[k] > hi { T::ZERO } else { gv })),
                ));
            }
            Op::Act(a, kind) => {
                let va = self.value(a).data();
                let y = node.value.data();
                let d = match kind {
                    Activation::Relu => map(&|k, gv| if va[k] > T::ZERO { gv } else { T::ZERO }),
                    Activation::LeakyRelu(slope) => {
                        let s = T::from_f64(slope);
                        map(&|k, gv| if va[k] > T::ZERO { gv } else { gv * s })
                    }
                    Activation::Sigmoid => map(&|k, gv| gv * y[k] * (T::ONE - y[k])),
                    Activation::Log => map(&|k, gv| gv / va[k]),
                };
                out.push((a, like(a, d)));
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let grads = kernels::conv2d_backward(
                    &geom,
                    self.value(input).data(),
                    self.value(kernel).data(),
                    g.data(),
                    [needs(input), needs(kernel), needs(bias)],
                );
                if let Some(d) = grads.input {
                    out.push((input, like(input, d)));
                }
                if let Some(d) = grads.kernel {
                    out.push((kernel, like(kernel, d)));
                }
                if let Some(d) = grads.bias {
                    out.push((bias, like(bias, d)));
                }
            }
            Op::PoolAvg2(a) => {
                let (b, c, h, w) = self.value(a).dims4().expect("rank 4");
                out.push((a, like(a, kernels::pool_avg2_backward(b * c, h, w, g.data()))));
            }
            Op::Upsample2(a) => {
                let (b, c, h, w) = self.value(a).dims4().expect("rank 4");
                out.push((a, like(a, kernels::upsample2_backward(b * c, h, w, g.data()))));
            }
            Op::Concat(a, b) => {
                let (n, ca, h, w) = self.value(a).dims4().expect("rank 4");
                let cb = self.shape(b)[1];
                let plane = h * w;
                let mut ga = Vec::with_capacity(n * ca * plane);
                let mut gb = Vec::with_capacity(n * cb * plane);
                for s in g.data().chunks((ca + cb) * plane) {
                    ga.extend_from_slice(&s[..ca * plane]);
                    gb.extend_from_slice(&s[ca * plane..]);
                }
                if needs(a) {
                    out.push((a, like(a, ga)));
                }
                if needs(b) {
                    out.push((b, like(b, gb)));
                }
            }
            Op::SliceChannels { input, start } => {
                let (n, c, h, w) = self.value(input).dims4().expect("rank 4");
                let len = node.value.shape()[1];
                let plane = h * w;
                let mut d = vec![T::ZERO; n * c * plane];
                for s in 0..n {
                    let off = (s * c + start) * plane;
                    d[off..off + len * plane]
                        .copy_from_slice(&g.data()[s * len * plane..(s + 1) * len * plane]);
                }
                out.push((input, like(input, d)));
            }
            Op::Reduce {
                input,
                ref axes,
                mean,
            } => {
                let shape = self.shape(input);
                let map = ReduceMap::new(shape, axes);
                let scale = if mean {
                    T::ONE / T::from_f64(axes.iter().map(|&ax| shape[ax]).product::<usize>() as f64)
                } else {
                    T::ONE
                };
                let n: usize = shape.iter().product();
                let d = (0..n).map(|k| g.data()[map.out_index(k)] * scale).collect();
                out.push((input, like(input, d)));
            }
            Op::InstanceNorm {
                input,
                gain,
                bias,
                ref xhat,
                ref inv_std,
            } => {
                let (b, c, h, w) = self.value(input).dims4().expect("rank 4");
                let grads = kernels::instance_norm_backward(
                    b,
                    c,
                    h * w,
                    xhat,
                    inv_std,
                    self.value(gain).data(),
                    g.data(),
                );
                if needs(input) {
                    out.push((input, like(input, grads.input)));
                }
                if needs(gain) {
                    out.push((gain, like(gain, grads.gain)));
                }
                if needs(bias) {
                    out.push((bias, like(bias, grads.bias)));
                }
            }
        }
        out
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

/// Flat input index → flat output index for a reduction over sorted axes.
struct ReduceMap {
    in_strides: Vec<usize>,
    shape: Vec<usize>,
    out_strides: Vec<Option<usize>>,
    out_shape: Vec<usize>,
    out_len: usize,
}

impl ReduceMap {
    fn new(shape: &[usize], axes: &[usize]) -> Self {
        let rank = shape.len();
        let mut in_strides = vec![1; rank];
        for d in (0..rank.saturating_sub(1)).rev() {
            in_strides[d] = in_strides[d + 1] * shape[d + 1];
        }
        let out_shape: Vec<usize> = (0..rank)
            .filter(|d| !axes.contains(d))
            .map(|d| shape[d])
            .collect();
        let mut out_strides = vec![None; rank];
        let mut stride = 1;
        for d in (0..rank).rev() {
            if !axes.contains(&d) {
                out_strides[d] = Some(stride);
                stride *= shape[d];
            }
        }
        ReduceMap {
            in_strides,
            shape: shape.to_vec(),
            out_strides,
            out_len: stride,
            out_shape,
        }
    }

    fn out_index(&self, flat: usize) -> usize {
        let mut o = 0;
        for d in 0..self.shape.len() {
            if let Some(s) = self.out_strides[d] {
                o += (flat / self.in_strides[d]) % self.shape[d] * s;
            }
        }
        o
    }
}
