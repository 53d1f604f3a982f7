//! Differentiable primitives recorded on a [`Tape`].

use crate::error::{Axis, Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Geometry of a 2-D convolution with zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// 3x3 kernel, stride 1, padding equal to the dilation (size preserving).
    pub fn same3x3(in_channels: usize, out_channels: usize, dilation: usize) -> Self {
        ConvSpec { in_channels, out_channels, kernel: (3, 3), stride: 1, padding: dilation, dilation }
    }

    pub fn strided3x3(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec { in_channels, out_channels, kernel: (3, 3), stride: 2, padding: 1, dilation: 1 }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec { in_channels, out_channels, kernel: (1, 1), stride: 1, padding: 0, dilation: 1 }
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel.0, self.kernel.1)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }

    /// Number of trainable scalars (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + self.out_channels
    }

    fn out_len(&self, len: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = len + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    /// Output (height, width) for an input of the given spatial size.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 || self.dilation == 0 || self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::invalid("conv2d", "stride, dilation and kernel must be positive"));
        }
        match (self.out_len(h, self.kernel.0), self.out_len(w, self.kernel.1)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::invalid("conv2d", format!("kernel larger than padded input {h}x{w}"))),
        }
    }

    fn cols_rows(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    fn is_identity_gather(&self) -> bool {
        self.kernel == (1, 1) && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds one batch item into a `(c*kh*kw) x (oh*ow)` matrix.
fn im2col<T: Scalar>(item: &[T], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, cols: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let p = oh * ow;
    for ci in 0..spec.in_channels {
        let plane = &item[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                        *out = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image.
fn col2im<T: Scalar>(cols: &[T], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, item: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let p = oh * ow;
    for ci in 0..spec.in_channels {
        let plane = &mut item[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Plain convolution on tensors, no tape involved.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let s = input.shape();
    s.expect_axis("conv2d", Axis::Channels, spec.in_channels)?;
    let ws = weight.shape();
    ws.expect_axis("conv2d weight", Axis::Batch, spec.out_channels)?;
    ws.expect_axis("conv2d weight", Axis::Channels, spec.in_channels)?;
    ws.expect_axis("conv2d weight", Axis::Height, spec.kernel.0)?;
    ws.expect_axis("conv2d weight", Axis::Width, spec.kernel.1)?;
    if bias.len() != spec.out_channels {
        return Err(Error::AxisMismatch {
            op: "conv2d bias",
            axis: Axis::Channels,
            expected: spec.out_channels,
            got: bias.len(),
        });
    }
    let (oh, ow) = spec.output_hw(s.h, s.w)?;
    let out_shape = Shape::new(s.n, spec.out_channels, oh, ow);
    let p = oh * ow;
    let k = spec.cols_rows();
    let mut out = Tensor::zeros(out_shape);
    let mut cols = if spec.is_identity_gather() { Vec::new() } else { vec![T::zero(); k * p] };
    for n in 0..s.n {
        let dst = out.item_mut(n);
        for (co, plane) in dst.chunks_mut(p).enumerate() {
            plane.fill(bias.data()[co]);
        }
        let cols_ref: &[T] = if spec.is_identity_gather() {
            input.item(n)
        } else {
            im2col(input.item(n), s.h, s.w, spec, oh, ow, &mut cols);
            &cols
        };
        gemm(MatRef::new(weight.data(), spec.out_channels, k), MatRef::new(cols_ref, k, p), T::one(), dst);
    }
    Ok(out)
}

struct Conv2dRule {
    spec: ConvSpec,
}

impl<T: Scalar> Backward<T> for Conv2dRule {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (input, weight) = (inputs[0], inputs[1]);
        let spec = &self.spec;
        let s = input.shape();
        let os = output.shape();
        let (oh, ow) = (os.h, os.w);
        let p = oh * ow;
        let k = spec.cols_rows();
        let identity = spec.is_identity_gather();

        let mut dx = needs[0].then(|| Tensor::zeros(s));
        let mut dw = needs[1].then(|| Tensor::zeros(weight.shape()));
        let mut db = needs[2].then(|| Tensor::zeros(spec.bias_shape()));
        let mut cols = if identity { Vec::new() } else { vec![T::zero(); k * p] };
        let mut dcols = vec![T::zero(); if identity { 0 } else { k * p }];

        for n in 0..s.n {
            let g = grad.item(n);
            if let Some(db) = db.as_mut() {
                for (co, plane) in g.chunks(p).enumerate() {
                    db.data_mut()[co] += plane.iter().copied().sum::<T>();
                }
            }
            if let Some(dw) = dw.as_mut() {
                let cols_ref: &[T] = if identity {
                    input.item(n)
                } else {
                    im2col(input.item(n), s.h, s.w, spec, oh, ow, &mut cols);
                    &cols
                };
                gemm(
                    MatRef::new(g, spec.out_channels, p),
                    MatRef::new(cols_ref, k, p).t(),
                    T::one(),
                    dw.data_mut(),
                );
            }
            if let Some(dx) = dx.as_mut() {
                let wt = MatRef::new(weight.data(), spec.out_channels, k).t();
                if identity {
                    gemm(wt, MatRef::new(g, spec.out_channels, p), T::one(), dx.item_mut(n));
                } else {
                    gemm(wt, MatRef::new(g, spec.out_channels, p), T::zero(), &mut dcols);
                    col2im(&dcols, s.h, s.w, spec, oh, ow, dx.item_mut(n));
                }
            }
        }
        vec![dx, dw, db]
    }
}

struct LeakyReluRule<T> {
    slope: T,
}

impl<T: Scalar> Backward<T> for LeakyReluRule<T> {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let slope = self.slope;
        vec![Some(inputs[0].zip_map(grad, |x, g| if x >= T::zero() { g } else { g * slope }))]
    }
}

struct SigmoidRule;

impl<T: Scalar> Backward<T> for SigmoidRule {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, _: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(output.zip_map(grad, |y, g| g * y * (T::one() - y)))]
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Source taps of align-corners-false upsampling along one axis:
/// `(lower index, upper index, weight of upper)` per output index.
fn upsample_taps<T: Scalar>(len: usize, factor: usize) -> Vec<(usize, usize, T)> {
    let f = factor as f64;
    (0..len * factor)
        .map(|i| {
            let src = ((i as f64 + 0.5) / f - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, T::of(src - lo as f64))
        })
        .collect()
}

/// Bilinear upsampling by an integer factor on plain tensors.
pub fn upsample_forward<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let s = x.shape();
    let ty = upsample_taps::<T>(s.h, factor);
    let tx = upsample_taps::<T>(s.w, factor);
    let os = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let r0 = &src[y0 * s.w..(y0 + 1) * s.w];
                let r1 = &src[y1 * s.w..(y1 + 1) * s.w];
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                    let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
                    dst[oy * os.w + ox] = top + (bottom - top) * fy;
                }
            }
        }
    }
    out
}

struct UpsampleRule {
    factor: usize,
}

impl<T: Scalar> Backward<T> for UpsampleRule {
    fn name(&self) -> &'static str {
        "upsample_bilinear"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let s = inputs[0].shape();
        let ty = upsample_taps::<T>(s.h, self.factor);
        let tx = upsample_taps::<T>(s.w, self.factor);
        let ow = s.w * self.factor;
        let mut dx = Tensor::zeros(s);
        for n in 0..s.n {
            for c in 0..s.c {
                let g = grad.plane(n, c);
                let dst = dx.plane_mut(n, c);
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let v = g[oy * ow + ox];
                        let top = v * (T::one() - fy);
                        let bottom = v * fy;
                        dst[y0 * s.w + x0] += top * (T::one() - fx);
                        dst[y0 * s.w + x1] += top * fx;
                        dst[y1 * s.w + x0] += bottom * (T::one() - fx);
                        dst[y1 * s.w + x1] += bottom * fx;
                    }
                }
            }
        }
        vec![Some(dx)]
    }
}

struct ConcatRule {
    channels: Vec<usize>,
}

impl<T: Scalar> Backward<T> for ConcatRule {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let mut start = 0;
        self.channels
            .iter()
            .zip(needs)
            .map(|(&c, &need)| {
                let part = need.then(|| grad.channels(start, c).expect("concat slice in range"));
                start += c;
                part
            })
            .collect()
    }
}

struct SliceRule {
    start: usize,
    channels: usize,
}

impl<T: Scalar> Backward<T> for SliceRule {
    fn name(&self) -> &'static str {
        "slice_channels"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let mut dx = Tensor::zeros(inputs[0].shape());
        let len = grad.shape().c;
        for n in 0..grad.shape().n {
            for c in 0..len {
                dx.plane_mut(n, self.start + c).copy_from_slice(grad.plane(n, c));
            }
        }
        debug_assert_eq!(len, self.channels);
        vec![Some(dx)]
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    /// Equal shapes.
    Same,
    /// Right operand has one channel, shared by every channel of the left.
    Channel,
}

fn broadcast_kind(op: &'static str, a: Shape, b: Shape) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::Same)
    } else if b.c == 1 && a.same_grid(&b) {
        Ok(Broadcast::Channel)
    } else {
        Err(Error::IncompatibleShapes { op, lhs: a, rhs: b })
    }
}

fn broadcast_binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, kind: Broadcast, f: impl Fn(T, T) -> T) -> Tensor<T> {
    match kind {
        Broadcast::Same => a.zip_map(b, f),
        Broadcast::Channel => {
            let s = a.shape();
            let mut out = a.clone();
            for n in 0..s.n {
                let bp = b.plane(n, 0);
                for c in 0..s.c {
                    for (o, &bv) in out.plane_mut(n, c).iter_mut().zip(bp) {
                        *o = f(*o, bv);
                    }
                }
            }
            out
        }
    }
}

/// Sums a full-shape gradient down to a single channel.
fn reduce_channels<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let s = g.shape();
    let mut out = Tensor::zeros(s.with_channels(1));
    for n in 0..s.n {
        for c in 0..s.c {
            for (o, &v) in out.plane_mut(n, 0).iter_mut().zip(g.plane(n, c)) {
                *o += v;
            }
        }
    }
    out
}

struct AddRule {
    kind: Broadcast,
    rhs_sign: f64,
}

impl<T: Scalar> Backward<T> for AddRule {
    fn name(&self) -> &'static str {
        if self.rhs_sign > 0.0 {
            "add"
        } else {
            "sub"
        }
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let da = needs[0].then(|| grad.clone());
        let db = needs[1].then(|| {
            let g = if self.rhs_sign > 0.0 { grad.clone() } else { grad.scaled(-T::one()) };
            match self.kind {
                Broadcast::Same => g,
                Broadcast::Channel => reduce_channels(&g),
            }
        });
        vec![da, db]
    }
}

struct MulRule {
    kind: Broadcast,
}

impl<T: Scalar> Backward<T> for MulRule {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let da = needs[0].then(|| broadcast_binary(grad, b, self.kind, |g, bv| g * bv));
        let db = needs[1].then(|| {
            let full = grad.zip_map(a, |g, av| g * av);
            match self.kind {
                Broadcast::Same => full,
                Broadcast::Channel => reduce_channels(&full),
            }
        });
        vec![da, db]
    }
}

struct ScaleRule<T> {
    k: T,
}

impl<T: Scalar> Backward<T> for ScaleRule<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.scaled(self.k))]
    }
}

struct SumAllRule;

impl<T: Scalar> Backward<T> for SumAllRule {
    fn name(&self) -> &'static str {
        "sum_all"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::full(inputs[0].shape(), grad.data()[0]))]
    }
}

struct SqrtRule;

impl<T: Scalar> Backward<T> for SqrtRule {
    fn name(&self) -> &'static str {
        "sqrt"
    }

    fn backward(&self, _: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let half = T::of(0.5);
        vec![Some(output.zip_map(grad, |y, g| if y > T::zero() { g * half / y } else { T::zero() }))]
    }
}

impl<T: Scalar> Tape<T> {
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let out = conv2d_forward(self.value(input), self.value(weight), self.value(bias), &spec)?;
        Ok(self.record(out, &[input, weight, bias], Conv2dRule { spec }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let k = T::of(slope);
        let out = self.value(x).map(|v| if v >= T::zero() { v } else { v * k });
        self.record(out, &[x], LeakyReluRule { slope: k })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid_scalar);
        self.record(out, &[x], SigmoidRule)
    }

    /// Bilinear upsampling, align-corners false with edge clamping.
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        if !matches!(factor, 2 | 4) {
            return Err(Error::invalid("upsample_bilinear", format!("factor must be 2 or 4, got {factor}")));
        }
        let out = upsample_forward(self.value(x), factor);
        Ok(self.record(out, &[x], UpsampleRule { factor }))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.len() == 1 {
            return Ok(xs[0]);
        }
        let parts: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat_channels(&parts)?;
        let channels = parts.iter().map(|p| p.shape().c).collect();
        Ok(self.record(out, xs, ConcatRule { channels }))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, channels: usize) -> Result<Var> {
        let out = self.value(x).channels(start, channels)?;
        Ok(self.record(out, &[x], SliceRule { start, channels }))
    }

    /// `x + y`; `y` may have a single channel broadcast over `x`'s channels.
    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        let kind = broadcast_kind("add", self.shape(x), self.shape(y))?;
        let out = broadcast_binary(self.value(x), self.value(y), kind, |a, b| a + b);
        Ok(self.record(out, &[x, y], AddRule { kind, rhs_sign: 1.0 }))
    }

    pub fn sub(&mut self, x: Var, y: Var) -> Result<Var> {
        let kind = broadcast_kind("sub", self.shape(x), self.shape(y))?;
        let out = broadcast_binary(self.value(x), self.value(y), kind, |a, b| a - b);
        Ok(self.record(out, &[x, y], AddRule { kind, rhs_sign: -1.0 }))
    }

    /// Elementwise product; `y` may have a single channel broadcast over `x`.
    pub fn mul(&mut self, x: Var, y: Var) -> Result<Var> {
        let kind = broadcast_kind("mul", self.shape(x), self.shape(y))?;
        let out = broadcast_binary(self.value(x), self.value(y), kind, |a, b| a * b);
        Ok(self.record(out, &[x, y], MulRule { kind }))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let k = T::of(k);
        let out = self.value(x).scaled(k);
        self.record(out, &[x], ScaleRule { k })
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.record(out, &[x], SumAllRule)
    }

    /// Elementwise square root; derivative taken as 0 at 0.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.sqrt());
        self.record(out, &[x], SqrtRule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, spec: &ConvSpec) -> Tensor<f64> {
        let s = x.shape();
        let (oh, ow) = spec.output_hw(s.h, s.w).unwrap();
        let mut out = Tensor::zeros(Shape::new(s.n, spec.out_channels, oh, ow));
        for n in 0..s.n {
            for co in 0..spec.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[co];
                        for ci in 0..spec.in_channels {
                            for ky in 0..spec.kernel.0 {
                                for kx in 0..spec.kernel.1 {
                                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                                    let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                                        acc += w.at(co, ci, ky, kx) * x.at(n, ci, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        *out.at_mut(n, co, oy, ox) = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_of_ones_center_and_corner() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(Shape::new(1, 1, 3, 3)));
        let w = tape.constant(Tensor::ones(Shape::new(1, 1, 3, 3)));
        let b = tape.constant(Tensor::zeros(Shape::new(1, 1, 1, 1)));
        let y = tape.conv2d(x, w, b, ConvSpec::same3x3(1, 1, 1)).unwrap();
        let out = tape.value(y);
        assert_eq!(out.shape(), Shape::new(1, 1, 3, 3));
        assert_eq!(out.at(0, 0, 1, 1), 9.0);
        assert_eq!(out.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn conv_dilated_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec { in_channels: 2, out_channels: 3, kernel: (3, 3), stride: 1, padding: 2, dilation: 2 };
        let x = Tensor::<f64>::uniform(Shape::new(1, 2, 5, 5), -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(spec.bias_shape(), -1.0, 1.0, &mut rng);
        let fast = conv2d_forward(&x, &w, &b, &spec).unwrap();
        let slow = naive_conv(&x, &w, &b, &spec);
        assert_eq!(fast.shape(), slow.shape());
        for (a, e) in fast.data().iter().zip(slow.data()) {
            assert!((a - e).abs() <= 1e-6);
        }
    }

    #[test]
    fn conv_names_offending_axis() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4));
        let spec = ConvSpec::same3x3(2, 4, 1);
        let w = Tensor::zeros(spec.weight_shape());
        let b = Tensor::zeros(spec.bias_shape());
        let err = conv2d_forward(&x, &w, &b, &spec).unwrap_err();
        assert!(matches!(err, Error::AxisMismatch { axis: Axis::Channels, expected: 2, got: 3, .. }));
    }

    #[test]
    fn output_size_formula() {
        let spec = ConvSpec { in_channels: 1, out_channels: 1, kernel: (3, 3), stride: 2, padding: 1, dilation: 1 };
        assert_eq!(spec.output_hw(64, 128).unwrap(), (32, 64));
        assert_eq!(spec.output_hw(1, 2).unwrap(), (1, 1));
        let big = ConvSpec { padding: 0, dilation: 4, ..spec };
        assert!(big.output_hw(4, 4).is_err());
    }

    #[test]
    fn leaky_relu_and_sigmoid_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![2.0, -1.0, 0.0]).unwrap());
        let y = tape.leaky_relu(x, 0.1);
        assert_eq!(tape.value(y).data(), &[2.0, -0.1, 0.0]);
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).data()[2], 0.5);

        let mut t32 = Tape::<f32>::new();
        let big = t32.constant(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![40.0, -200.0]).unwrap());
        let sb = t32.sigmoid(big);
        assert_eq!(t32.value(sb).data()[0], 1.0);
        assert!(t32.value(sb).data()[1] >= 0.0 && t32.value(sb).is_finite());
    }

    #[test]
    fn upsample_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap());
        let y = tape.upsample_bilinear(x, 2).unwrap();
        assert_eq!(tape.value(y).shape(), Shape::new(1, 1, 2, 4));
        assert_eq!(&tape.value(y).data()[..4], &[0.0, 0.25, 0.75, 1.0]);

        let c = tape.constant(Tensor::full(Shape::new(1, 2, 3, 5), 7.0));
        let u = tape.upsample_bilinear(c, 4).unwrap();
        assert!(tape.value(u).data().iter().all(|&v| v == 7.0));
        assert!(tape.upsample_bilinear(c, 3).is_err());
    }

    #[test]
    fn broadcast_mul_and_scale() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(Shape::new(1, 3, 2, 2)));
        let m = tape.constant(Tensor::full(Shape::new(1, 1, 2, 2), 0.5));
        let y = tape.mul(x, m).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.5));
        let z = tape.scale(x, 0.0);
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
        let bad = tape.constant(Tensor::ones(Shape::new(1, 2, 2, 2)));
        assert!(tape.mul(x, bad).is_err());
    }

    #[test]
    fn backward_simple_identities() {
        let mut tape = Tape::<f64>::new();
        let xv = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let x = tape.variable(xv.clone());
        let l1 = tape.sum_all(x);
        let g = tape.backward(l1).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));

        let xx = tape.mul(x, x).unwrap();
        let l2 = tape.sum_all(xx);
        let g = tape.backward(l2).unwrap();
        assert_eq!(g.get(x).unwrap(), &xv.scaled(2.0));

        assert!(matches!(tape.backward(xx), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn concat_backward_splits_ones() {
        let mut tape = Tape::<f64>::new();
        let a = tape.variable(Tensor::zeros(Shape::new(1, 2, 4, 4)));
        let b = tape.variable(Tensor::zeros(Shape::new(1, 3, 4, 4)));
        let c = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), Shape::new(1, 5, 4, 4));
        assert_eq!(tape.concat_channels(&[a]).unwrap(), a);
        let l = tape.sum_all(c);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap(), &Tensor::ones(Shape::new(1, 2, 4, 4)));
        assert_eq!(g.get(b).unwrap(), &Tensor::ones(Shape::new(1, 3, 4, 4)));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::ones(Shape::new(1, 1, 2, 2)));
        let v = tape.variable(Tensor::ones(Shape::new(1, 1, 2, 2)));
        let p = tape.mul(c, v).unwrap();
        let l = tape.sum_all(p);
        let g = tape.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(v).is_some());
    }
}
