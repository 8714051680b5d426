use super::conv::{self, ConvGeom};
use super::shadow;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(super) enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, geom: ConvGeom },
    ChannelBias { input: Var, bias: Var },
    Upsample { input: Var, factor: usize },
    LeakyRelu { input: Var, slope: f32 },
    Sigmoid { input: Var },
    Dense { input: Var, weight: Var, bias: Var },
    Reshape { input: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale { input: Var, factor: f32 },
    AddScalar { input: Var, value: f32 },
    Abs { input: Var },
    Square { input: Var },
    Exp { input: Var },
    Log { input: Var },
    Clamp { input: Var, lo: f32, hi: f32 },
    Sum { input: Var },
    Mean { input: Var },
    GlobalAvgPool { input: Var },
}

#[derive(Debug)]
pub(super) struct Node {
    pub(super) value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Full-precision value for scalar nodes built from reductions.
    exact: Option<f64>,
    /// f64 forward value, on precise tapes only.
    pub(super) shadow: Option<Vec<f64>>,
}

/// Append-only record of a differentiable computation.
///
/// Node ids increase in creation order, so every op's inputs precede it and
/// a reverse sweep over ids visits each node once after all of its consumers.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    precise: bool,
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::dim(format!(
            "{what}: operand shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )))
    }
}

fn rank(what: &str, t: &Tensor, expected: usize, axes: &str) -> Result<()> {
    if t.shape().len() == expected {
        Ok(())
    } else {
        Err(Error::dim(format!(
            "{what}: expected rank-{expected} tensor [{axes}], got shape {:?}",
            t.shape()
        )))
    }
}

fn stable_sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that also evaluates every op in f64, so [`Tape::scalar`]
    /// reports objectives free of f32 rounding. Slow; meant for gradient
    /// checks.
    pub fn precise() -> Self {
        Tape {
            precise: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, exact: Option<f64>) -> Var {
        let shadow = self.precise.then(|| shadow::eval(&self.nodes, &op, &value));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            exact,
            shadow,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    /// Registers an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad, None)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A gradient-free copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.node(v).value.clone();
        let shadow = self.node(v).shadow.clone();
        let out = self.constant(value);
        self.nodes[out.0].shadow = shadow;
        out
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Gradient populated by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Value of a one-element node in f64; reductions keep their f64
    /// accumulator instead of the rounded f32.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let node = self.node(v);
        if let Some(s) = &node.shadow {
            node.value.item()?;
            return Ok(s[0]);
        }
        match node.exact {
            Some(x) => Ok(x),
            None => node.value.item().map(f64::from),
        }
    }

    fn exact_of(&self, v: Var) -> Option<f64> {
        let node = self.node(v);
        match node.exact {
            Some(x) => Some(x),
            None if node.value.numel() == 1 => Some(f64::from(node.value.data()[0])),
            None => None,
        }
    }

    fn unary(&mut self, input: Var, op: Op, f: impl Fn(f32) -> f32) -> Var {
        let src = self.value(input);
        let out = Tensor {
            shape: src.shape().to_vec(),
            data: src.data().iter().map(|&x| f(x)).collect(),
        };
        let rg = self.needs(&[input]);
        self.push(out, op, rg, None)
    }

    /// 2D cross-correlation of `input [N,C,H,W]` with `kernel [F,C,k,k]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, k) = (self.value(input), self.value(kernel));
        rank("conv2d input", x, 4, "N,C,H,W")?;
        rank("conv2d kernel", k, 4, "F,C,k,k")?;
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (f, kc, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
        if kc != c {
            return Err(Error::dim(format!(
                "conv2d: input channel axis C={c} does not match kernel channel axis {kc}"
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::dim(format!(
                "conv2d: kernel spatial axes must be square and odd, got {kh}x{kw}"
            )));
        }
        if stride == 0 {
            return Err(Error::param("conv2d: stride must be positive"));
        }
        let out_dim = |len: usize, axis: &str| -> Result<usize> {
            let span = len + 2 * padding;
            if span < kh {
                return Err(Error::dim(format!(
                    "conv2d: axis {axis}={len} with padding {padding} is smaller than kernel {kh}"
                )));
            }
            Ok((span - kh) / stride + 1)
        };
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            filters: f,
            ksize: kh,
            stride,
            padding,
            out_h: out_dim(h, "H")?,
            out_w: out_dim(w, "W")?,
        };
        let data = conv::forward(&geom, n, x.data(), k.data());
        let out = Tensor {
            shape: vec![n, f, geom.out_h, geom.out_w],
            data,
        };
        let rg = self.needs(&[input, kernel]);
        Ok(self.push(out, Op::Conv2d { input, kernel, geom }, rg, None))
    }

    /// Adds `bias [C]` to every position of channel `c` in `input [N,C,H,W]`.
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(input), self.value(bias));
        rank("channel_bias input", x, 4, "N,C,H,W")?;
        if b.shape() != [x.shape()[1]] {
            return Err(Error::dim(format!(
                "channel_bias: bias shape {:?} does not match channel axis C={}",
                b.shape(),
                x.shape()[1]
            )));
        }
        let plane = x.shape()[2] * x.shape()[3];
        let channels = x.shape()[1];
        let mut data = x.data().to_vec();
        for (i, chunk) in data.chunks_mut(plane).enumerate() {
            let bv = b.data()[i % channels];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let out = Tensor {
            shape: x.shape().to_vec(),
            data,
        };
        let rg = self.needs(&[input, bias]);
        Ok(self.push(out, Op::ChannelBias { input, bias }, rg, None))
    }

    /// Nearest-neighbour upsampling of `[N,C,H,W]` by an integer factor.
    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::param("upsample_nearest: factor must be at least 1"));
        }
        let x = self.value(input);
        rank("upsample_nearest", x, 4, "N,C,H,W")?;
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (h * factor, w * factor);
        let mut data = vec![0.0; n * c * oh * ow];
        for (src, dst) in x.data().chunks(h * w).zip(data.chunks_mut(oh * ow)) {
            for oy in 0..oh {
                let row = &src[(oy / factor) * w..(oy / factor + 1) * w];
                for (ox, v) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                    *v = row[ox / factor];
                }
            }
        }
        let out = Tensor {
            shape: vec![n, c, oh, ow],
            data,
        };
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::Upsample { input, factor }, rg, None))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f32) -> Var {
        self.unary(input, Op::LeakyRelu { input, slope }, |x| {
            if x >= 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.unary(input, Op::Sigmoid { input }, stable_sigmoid)
    }

    /// Affine map `input [N,D] · weight [D,E] + bias [E]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, wt, b) = (self.value(input), self.value(weight), self.value(bias));
        rank("dense input", x, 2, "N,D")?;
        rank("dense weight", wt, 2, "D,E")?;
        let (n, d, e) = (x.shape()[0], x.shape()[1], wt.shape()[1]);
        if wt.shape()[0] != d {
            return Err(Error::dim(format!(
                "dense: input axis D={d} does not match weight rows {}",
                wt.shape()[0]
            )));
        }
        if b.shape() != [e] {
            return Err(Error::dim(format!(
                "dense: bias shape {:?} does not match weight columns E={e}",
                b.shape()
            )));
        }
        let mut data: Vec<f32> = (0..n).flat_map(|_| b.data().iter().copied()).collect();
        conv::gemm(n, d, e, x.data(), (d, 1), wt.data(), (e, 1), 1.0, &mut data, (e, 1));
        let out = Tensor {
            shape: vec![n, e],
            data,
        };
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(out, Op::Dense { input, weight, bias }, rg, None))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape.to_vec())?;
        let rg = self.needs(&[input]);
        let exact = self.node(input).exact;
        Ok(self.push(out, Op::Reshape { input }, rg, exact))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f32, f32) -> f32) -> Result<(Tensor, bool)> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(what, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((
            Tensor {
                shape: ta.shape().to_vec(),
                data,
            },
            self.needs(&[a, b]),
        ))
    }

    fn scalar_exact(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Option<f64> {
        Some(f(self.exact_of(a)?, self.exact_of(b)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "add", |x, y| x + y)?;
        let exact = self.scalar_exact(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), rg, exact))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "sub", |x, y| x - y)?;
        let exact = self.scalar_exact(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), rg, exact))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "mul", |x, y| x * y)?;
        let exact = self.scalar_exact(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), rg, exact))
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Var {
        let exact = self.exact_of(input).map(|x| x * f64::from(factor));
        let v = self.unary(input, Op::Scale { input, factor }, |x| x * factor);
        self.nodes[v.0].exact = exact;
        v
    }

    pub fn add_scalar(&mut self, input: Var, value: f32) -> Var {
        let exact = self.exact_of(input).map(|x| x + f64::from(value));
        let v = self.unary(input, Op::AddScalar { input, value }, |x| x + value);
        self.nodes[v.0].exact = exact;
        v
    }

    pub fn abs(&mut self, input: Var) -> Var {
        self.unary(input, Op::Abs { input }, f32::abs)
    }

    pub fn square(&mut self, input: Var) -> Var {
        self.unary(input, Op::Square { input }, |x| x * x)
    }

    pub fn exp(&mut self, input: Var) -> Var {
        self.unary(input, Op::Exp { input }, f32::exp)
    }

    /// Natural log; callers clamp the operand away from zero first.
    pub fn ln(&mut self, input: Var) -> Var {
        self.unary(input, Op::Log { input }, f32::ln)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, input: Var, lo: f32, hi: f32) -> Var {
        self.unary(input, Op::Clamp { input, lo, hi }, |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total: f64 = self.value(input).data().iter().map(|&x| f64::from(x)).sum();
        let rg = self.needs(&[input]);
        self.push(Tensor::scalar(total as f32), Op::Sum { input }, rg, Some(total))
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let mean = t.data().iter().map(|&x| f64::from(x)).sum::<f64>() / t.numel() as f64;
        let rg = self.needs(&[input]);
        self.push(Tensor::scalar(mean as f32), Op::Mean { input }, rg, Some(mean))
    }

    /// Spatial mean `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        rank("global_avg_pool", x, 4, "N,C,H,W")?;
        let plane = x.shape()[2] * x.shape()[3];
        let data = x
            .data()
            .chunks(plane)
            .map(|c| (c.iter().map(|&v| f64::from(v)).sum::<f64>() / plane as f64) as f32)
            .collect();
        let out = Tensor {
            shape: vec![x.shape()[0], x.shape()[1]],
            data,
        };
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::GlobalAvgPool { input }, rg, None))
    }

    /// Reverse sweep from a one-element `loss`, replacing any gradients left
    /// by a previous call. Fan-out contributions are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(Error::contract(format!(
                "backward called on non-scalar tensor of shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.node(loss).requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), 1.0));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(upstream) = self.grads[id].take() else {
                continue;
            };
            propagate(&self.nodes, &mut self.grads, id, &upstream);
            self.grads[id] = Some(upstream);
        }
        Ok(())
    }

}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], target: Var, f: impl FnOnce(&Tensor, &mut [f32])) {
    let node = &nodes[target.0];
    if !node.requires_grad {
        return;
    }
    let slot = grads[target.0].get_or_insert_with(|| Tensor::zeros(node.value.shape().to_vec()));
    f(&node.value, slot.data_mut());
}

fn elementwise(
    nodes: &[Node],
    grads: &mut [Option<Tensor>],
    target: Var,
    upstream: &[f32],
    dfdx: impl Fn(usize, f32) -> f32,
) {
    accumulate(nodes, grads, target, |x, g| {
        for (i, ((gi, &u), &xv)) in g.iter_mut().zip(upstream).zip(x.data()).enumerate() {
            *gi += u * dfdx(i, xv);
        }
    });
}

/// Pushes the upstream gradient of node `id` into its inputs.
fn propagate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, upstream: &Tensor) {
    let g = upstream.data();
    let value = |v: Var| &nodes[v.0].value;
    let out = &nodes[id].value;
    match nodes[id].op {
        Op::Leaf => {}
        Op::Conv2d { input, kernel, geom } => {
            let batch = value(input).shape()[0];
            let (x, k) = (value(input).data(), value(kernel).data());
            accumulate(nodes, grads, kernel, |_, gk| {
                conv::backward(&geom, batch, x, k, g, None, Some(gk));
            });
            accumulate(nodes, grads, input, |_, gx| {
                conv::backward(&geom, batch, x, k, g, Some(gx), None);
            });
        }
        Op::ChannelBias { input, bias } => {
            let shape = value(input).shape();
            let (channels, plane) = (shape[1], shape[2] * shape[3]);
            elementwise(nodes, grads, input, g, |_, _| 1.0);
            accumulate(nodes, grads, bias, |_, gb| {
                for (i, chunk) in g.chunks(plane).enumerate() {
                    let s: f64 = chunk.iter().map(|&v| f64::from(v)).sum();
                    gb[i % channels] += s as f32;
                }
            });
        }
        Op::Upsample { input, factor } => {
            let shape = value(input).shape();
            let (h, w) = (shape[2], shape[3]);
            let (oh, ow) = (h * factor, w * factor);
            accumulate(nodes, grads, input, |_, gx| {
                for (src, dst) in g.chunks(oh * ow).zip(gx.chunks_mut(h * w)) {
                    for oy in 0..oh {
                        let row = &mut dst[(oy / factor) * w..(oy / factor + 1) * w];
                        for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                            row[ox / factor] += v;
                        }
                    }
                }
            });
        }
        Op::LeakyRelu { input, slope } => {
            elementwise(nodes, grads, input, g, |_, x| if x >= 0.0 { 1.0 } else { slope });
        }
        Op::Sigmoid { input } => {
            let y = out.data();
            elementwise(nodes, grads, input, g, |i, _| y[i] * (1.0 - y[i]));
        }
        Op::Dense { input, weight, bias } => {
            let (n, d) = (value(input).shape()[0], value(input).shape()[1]);
            let e = value(weight).shape()[1];
            let (x, wt) = (value(input).data(), value(weight).data());
            accumulate(nodes, grads, input, |_, gx| {
                // dX[N,D] += dY[N,E] * W^T
                conv::gemm(n, e, d, g, (e, 1), wt, (1, e), 1.0, gx, (d, 1));
            });
            accumulate(nodes, grads, weight, |_, gw| {
                // dW[D,E] += X^T * dY
                conv::gemm(d, n, e, x, (1, d), g, (e, 1), 1.0, gw, (e, 1));
            });
            accumulate(nodes, grads, bias, |_, gb| {
                for row in g.chunks(e) {
                    gb.iter_mut().zip(row).for_each(|(b, &v)| *b += v);
                }
            });
        }
        Op::Reshape { input } | Op::AddScalar { input, .. } => {
            elementwise(nodes, grads, input, g, |_, _| 1.0);
        }
        Op::Add(a, b) => {
            elementwise(nodes, grads, a, g, |_, _| 1.0);
            elementwise(nodes, grads, b, g, |_, _| 1.0);
        }
        Op::Sub(a, b) => {
            elementwise(nodes, grads, a, g, |_, _| 1.0);
            elementwise(nodes, grads, b, g, |_, _| -1.0);
        }
        Op::Mul(a, b) => {
            let (va, vb) = (value(a).data(), value(b).data());
            elementwise(nodes, grads, a, g, |i, _| vb[i]);
            elementwise(nodes, grads, b, g, |i, _| va[i]);
        }
        Op::Scale { input, factor } => {
            elementwise(nodes, grads, input, g, |_, _| factor);
        }
        Op::Abs { input } => {
            elementwise(nodes, grads, input, g, |_, x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            });
        }
        Op::Square { input } => {
            elementwise(nodes, grads, input, g, |_, x| 2.0 * x);
        }
        Op::Exp { input } => {
            let y = out.data();
            elementwise(nodes, grads, input, g, |i, _| y[i]);
        }
        Op::Log { input } => {
            elementwise(nodes, grads, input, g, |_, x| 1.0 / x);
        }
        Op::Clamp { input, lo, hi } => {
            elementwise(nodes, grads, input, g, |_, x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 });
        }
        Op::Sum { input } => {
            let u = g[0];
            accumulate(nodes, grads, input, |_, gx| gx.iter_mut().for_each(|v| *v += u));
        }
        Op::Mean { input } => {
            let u = g[0] / value(input).numel() as f32;
            accumulate(nodes, grads, input, |_, gx| gx.iter_mut().for_each(|v| *v += u));
        }
        Op::GlobalAvgPool { input } => {
            let shape = value(input).shape();
            let plane = shape[2] * shape[3];
            let inv = 1.0 / plane as f32;
            accumulate(nodes, grads, input, |_, gx| {
                for (chunk, &u) in gx.chunks_mut(plane).zip(g) {
                    chunk.iter_mut().for_each(|v| *v += u * inv);
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_1x1_conv() {
        let mut tape = Tape::new();
        let data: Vec<f32> = (0..2 * 5 * 4).map(|i| i as f32 * 0.25 - 3.0).collect();
        let x = tape.constant(t(&[2, 1, 5, 4], &data));
        let k = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn ones_kernel_on_constant_image() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![1, 1, 3, 3], 2.0));
        let k = tape.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[18.0]);
    }

    #[test]
    fn strided_conv_halves_spatial_size() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![1, 1, 64, 64]));
        let k = tape.constant(Tensor::zeros(vec![4, 1, 3, 3]));
        let y = tape.conv2d(x, k, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 4, 32, 32]);
    }

    #[test]
    fn conv_rejects_mismatched_channels() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![1, 2, 8, 8]));
        let k = tape.constant(Tensor::zeros(vec![4, 3, 3, 3]));
        let err = tape.conv2d(x, k, 1, 1).unwrap_err();
        assert!(matches!(err, Error::Dimension(ref m) if m.contains("C=2")), "{err}");
        let k = tape.constant(Tensor::zeros(vec![4, 2, 2, 2]));
        assert!(tape.conv2d(x, k, 1, 0).is_err());
        let k = tape.constant(Tensor::zeros(vec![4, 2, 9, 9]));
        assert!(tape.conv2d(x, k, 1, 0).is_err());
    }

    #[test]
    fn upsample_replicates_blocks() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let same = tape.upsample_nearest(x, 1).unwrap();
        assert_eq!(tape.value(same), tape.value(x));
        let y = tape.upsample_nearest(x, 2).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(tape.value(y).data(), &expected);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0; 4]);
        assert!(matches!(tape.upsample_nearest(x, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn leaky_relu_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.0, -2.0, 3.5]));
        let y = tape.leaky_relu(x, 0.2);
        let out = tape.value(y).data();
        assert_eq!(out[0], 0.0);
        assert!((out[1] + 0.4).abs() < 1e-7);
        assert_eq!(out[2], 3.5);
    }

    #[test]
    fn sigmoid_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[4], &[0.0, 100.0, 3f32.ln(), -100.0]));
        let y = tape.sigmoid(x);
        let out = tape.value(y).data();
        assert_eq!(out[0], 0.5);
        assert!(out[1] > 1.0 - 1e-6 && out[1] <= 1.0);
        assert!((out[2] - 0.75).abs() < 1e-6);
        assert!(out[3].is_finite() && out[3] >= 0.0);
    }

    #[test]
    fn dense_values_and_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.constant(t(&[2], &[3.0, 4.0]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, 6.0]);

        let x = tape.constant(Tensor::zeros(vec![8, 4096]));
        let w = tape.constant(Tensor::zeros(vec![4096, 512]));
        let b = tape.constant(Tensor::zeros(vec![512]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.shape(y), &[8, 512]);

        let bad = tape.constant(Tensor::zeros(vec![8, 100]));
        assert!(matches!(tape.dense(bad, w, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, -1.0, 2.0, 0.5, 0.0, 7.0]), true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 6]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, -2.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.add(a, a).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[2.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![2]), true);
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn no_grad_for_constants() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(vec![3], 2.0), true);
        let c = tape.constant(Tensor::full(vec![3], 5.0));
        let p = tape.mul(x, c).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[5.0; 3]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn reductions_keep_f64_accumulator() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![3], 1.0 / 3.0));
        let s = tape.sum(x);
        let m = tape.scale(s, 2.0);
        let exact = tape.scalar(m).unwrap();
        assert!((exact - 2.0 * 3.0 * f64::from(1.0f32 / 3.0)).abs() < 1e-15);
    }
}
