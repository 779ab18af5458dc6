//! Primitive operations with hand-written backward passes.
//!
//! Each `foo` has a matching `foo_backward` that takes whatever the forward
//! needs (inputs or outputs) plus the upstream gradient and returns the
//! gradient with respect to every input.

use super::Tensor;
use crate::{Error, Result};

/// Default negative slope for [`leaky_relu`].
pub const LEAKY_SLOPE: f64 = 0.01;

/// `a (m×k) · b (k×n)`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::contract(format!(
            "matmul: inner dims {k} and {k2} differ"
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

/// Returns `(dL/da, dL/db)` for `c = a·b`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, _) = a.dims2("matmul_backward")?;
    let (_, n) = b.dims2("matmul_backward")?;
    if g.shape() != [m, n] {
        return Err(Error::contract(format!(
            "matmul_backward: upstream {:?} != [{m}, {n}]",
            g.shape()
        )));
    }
    let ga = matmul(g, &b.transpose()?)?;
    let gb = matmul(&a.transpose()?, g)?;
    Ok((ga, gb))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of ReLU, taken as 0 at exactly 0.
pub fn relu_backward(x: &Tensor, g: &Tensor) -> Result<Tensor> {
    x.same_shape(g, "relu_backward")?;
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data)
}

/// `max(0, x) + slope·min(0, x)`.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

pub fn leaky_relu_backward(x: &Tensor, g: &Tensor, slope: f64) -> Result<Tensor> {
    x.same_shape(g, "leaky_relu_backward")?;
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&v, &gv)| if v > 0.0 { gv } else { slope * gv })
        .collect();
    Tensor::new(x.shape(), data)
}

/// Softmax over the last axis of a matrix, max-shifted for stability.
pub fn row_softmax(x: &Tensor) -> Result<Tensor> {
    let (r, c) = x.dims2("row_softmax")?;
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c.max(1)).take(r) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor::new(&[r, c], out)
}

/// Takes the softmax *output* `y`.
pub fn row_softmax_backward(y: &Tensor, g: &Tensor) -> Result<Tensor> {
    let (_, c) = y.dims2("row_softmax_backward")?;
    y.same_shape(g, "row_softmax_backward")?;
    let mut out = vec![0.0; y.len()];
    for ((o, yr), gr) in out
        .chunks_mut(c)
        .zip(y.data().chunks(c))
        .zip(g.data().chunks(c))
    {
        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((ov, yv), gv) in o.iter_mut().zip(yr).zip(gr) {
            *ov = yv * (gv - inner);
        }
    }
    Tensor::new(y.shape(), out)
}

fn bin(i: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let start = i * n_in / n_out;
    let end = ((i + 1) * n_in).div_ceil(n_out);
    (start, end)
}

/// Adaptive average pooling of a `C×H×W` tensor down to `C×oh×ow`.
///
/// Output cell `i` averages input rows `floor(i·H/oh) .. ceil((i+1)·H/oh)`,
/// so any `oh ≤ H` is accepted and bins overlap when `oh` does not divide `H`.
pub fn avg_pool_2d(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3("avg_pool_2d")?;
    if oh == 0 || ow == 0 || oh > h || ow > w {
        return Err(Error::contract(format!(
            "avg_pool_2d: cannot pool {h}×{w} to {oh}×{ow}"
        )));
    }
    let xd = x.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let plane = &xd[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            let (r0, r1) = bin(i, h, oh);
            for j in 0..ow {
                let (c0, c1) = bin(j, w, ow);
                // Averaging deviations from the bin's first value keeps
                // constant inputs bit-exact.
                let base = plane[r0 * w + c0];
                let mut s = 0.0;
                for r in r0..r1 {
                    s += plane[r * w + c0..r * w + c1]
                        .iter()
                        .map(|v| v - base)
                        .sum::<f64>();
                }
                out[(ch * oh + i) * ow + j] = base + s / ((r1 - r0) * (c1 - c0)) as f64;
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

pub fn avg_pool_2d_backward(g: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, oh, ow) = g.dims3("avg_pool_2d_backward")?;
    if oh == 0 || ow == 0 || oh > h || ow > w {
        return Err(Error::contract(format!(
            "avg_pool_2d_backward: {oh}×{ow} is not a pooling of {h}×{w}"
        )));
    }
    let gd = g.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for i in 0..oh {
            let (r0, r1) = bin(i, h, oh);
            for j in 0..ow {
                let (c0, c1) = bin(j, w, ow);
                let share = gd[(ch * oh + i) * ow + j] / ((r1 - r0) * (c1 - c0)) as f64;
                for r in r0..r1 {
                    for v in &mut out[ch * h * w + r * w + c0..ch * h * w + r * w + c1] {
                        *v += share;
                    }
                }
            }
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// Nearest-neighbor upsampling of `C×h×w` to `C×oh×ow`; output row `i`
/// reads input row `floor(i·h/oh)`.
pub fn upsample_nearest_2d(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3("upsample_nearest_2d")?;
    if oh < h || ow < w {
        return Err(Error::contract(format!(
            "upsample_nearest_2d: cannot upsample {h}×{w} to {oh}×{ow}"
        )));
    }
    let xd = x.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for i in 0..oh {
            let si = i * h / oh;
            for j in 0..ow {
                out[(ch * oh + i) * ow + j] = xd[(ch * h + si) * w + j * w / ow];
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

pub fn upsample_nearest_2d_backward(g: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, oh, ow) = g.dims3("upsample_nearest_2d_backward")?;
    if oh < h || ow < w || h == 0 || w == 0 {
        return Err(Error::contract(format!(
            "upsample_nearest_2d_backward: {oh}×{ow} is not an upsampling of {h}×{w}"
        )));
    }
    let gd = g.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for i in 0..oh {
            let si = i * h / oh;
            for j in 0..ow {
                out[(ch * h + si) * w + j * w / ow] += gd[(ch * oh + i) * ow + j];
            }
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// Stacks two `·×H×W` tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, h, w) = a.dims3("concat_channels")?;
    let (cb, h2, w2) = b.dims3("concat_channels")?;
    if (h, w) != (h2, w2) {
        return Err(Error::contract(format!(
            "concat_channels: spatial dims {h}×{w} vs {h2}×{w2}"
        )));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new(&[ca + cb, h, w], data)
}

/// Splits the upstream gradient back into the first `ca` channels and the rest.
pub fn concat_channels_backward(g: &Tensor, ca: usize) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = g.dims3("concat_channels_backward")?;
    if ca > c {
        return Err(Error::contract(format!(
            "concat_channels_backward: split {ca} > {c} channels"
        )));
    }
    let (ga, gb) = g.data().split_at(ca * h * w);
    Ok((
        Tensor::new(&[ca, h, w], ga.to_vec())?,
        Tensor::new(&[c - ca, h, w], gb.to_vec())?,
    ))
}

/// Fully connected layer `y = x·Wᵀ + b` on a batch of row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`.
    pub weight: Tensor,
    /// `out`.
    pub bias: Tensor,
}

/// Gradients of a layer's loss with respect to its input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (out, _) = weight.dims2("Linear")?;
        if bias.shape() != [out] {
            return Err(Error::contract(format!(
                "Linear: bias {:?} for {out} outputs",
                bias.shape()
            )));
        }
        Ok(Linear { weight, bias })
    }

    /// Uniform ±1/√in initialization for weights and bias.
    pub fn init<R: rand::Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Linear {
            weight: Tensor::uniform(&[outputs, inputs], bound, rng),
            bias: Tensor::uniform(&[outputs], bound, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, i) = x.dims2("Linear::forward")?;
        if i != self.inputs() {
            return Err(Error::contract(format!(
                "Linear: input width {i}, expected {}",
                self.inputs()
            )));
        }
        let o = self.outputs();
        let (xd, wd, bd) = (x.data(), self.weight.data(), self.bias.data());
        let mut out = Vec::with_capacity(n * o);
        for r in 0..n {
            let xr = &xd[r * i..(r + 1) * i];
            for k in 0..o {
                let wr = &wd[k * i..(k + 1) * i];
                out.push(bd[k] + xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        Tensor::new(&[n, o], out)
    }

    pub fn backward(&self, x: &Tensor, g: &Tensor) -> Result<LayerGrads> {
        let (n, i) = x.dims2("Linear::backward")?;
        let o = self.outputs();
        if g.shape() != [n, o] || i != self.inputs() {
            return Err(Error::contract(format!(
                "Linear::backward: input {:?}, upstream {:?}",
                x.shape(),
                g.shape()
            )));
        }
        let input = matmul(g, &self.weight)?;
        let weight = matmul(&g.transpose()?, x)?;
        let mut bias = vec![0.0; o];
        for row in g.data().chunks(o) {
            for (b, v) in bias.iter_mut().zip(row) {
                *b += v;
            }
        }
        Ok(LayerGrads {
            input,
            weight,
            bias: Tensor::new(&[o], bias)?,
        })
    }
}

/// Per-pixel channel mixing `y[o,h,w] = b[o] + Σ_c W[o,c]·x[c,h,w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1x1 {
    /// `out × in`.
    pub weight: Tensor,
    /// `out`.
    pub bias: Tensor,
}

impl Conv1x1 {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (out, _) = weight.dims2("Conv1x1")?;
        if bias.shape() != [out] {
            return Err(Error::contract(format!(
                "Conv1x1: bias {:?} for {out} outputs",
                bias.shape()
            )));
        }
        Ok(Conv1x1 { weight, bias })
    }

    pub fn init<R: rand::Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let l = Linear::init(inputs, outputs, rng);
        Conv1x1 {
            weight: l.weight,
            bias: l.bias,
        }
    }

    /// Identity mixing with zero bias.
    pub fn identity(channels: usize) -> Self {
        Conv1x1 {
            weight: Tensor::eye(channels),
            bias: Tensor::zeros(&[channels]),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Conv1x1 {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (c, h, w) = x.dims3("Conv1x1::forward")?;
        let (o, ci) = (self.weight.shape()[0], self.weight.shape()[1]);
        if c != ci {
            return Err(Error::contract(format!(
                "Conv1x1: {c} input channels, expected {ci}"
            )));
        }
        let hw = h * w;
        let flat = x.reshape(&[c, hw])?;
        let mixed = matmul(&self.weight, &flat)?;
        let mut data = mixed.into_data();
        for (k, plane) in data.chunks_mut(hw.max(1)).enumerate().take(o) {
            let b = self.bias.data()[k];
            for v in plane {
                *v += b;
            }
        }
        Tensor::new(&[o, h, w], data)
    }

    pub fn backward(&self, x: &Tensor, g: &Tensor) -> Result<LayerGrads> {
        let (c, h, w) = x.dims3("Conv1x1::backward")?;
        let o = self.weight.shape()[0];
        if g.shape() != [o, h, w] || c != self.weight.shape()[1] {
            return Err(Error::contract(format!(
                "Conv1x1::backward: input {:?}, upstream {:?}",
                x.shape(),
                g.shape()
            )));
        }
        let hw = h * w;
        let gf = g.reshape(&[o, hw])?;
        let xf = x.reshape(&[c, hw])?;
        let input = matmul(&self.weight.transpose()?, &gf)?.reshape(&[c, h, w])?;
        let weight = matmul(&gf, &xf.transpose()?)?;
        let bias = gf
            .data()
            .chunks(hw.max(1))
            .take(o)
            .map(|p| p.iter().sum())
            .collect();
        Ok(LayerGrads {
            input,
            weight,
            bias: Tensor::new(&[o], bias)?,
        })
    }
}
