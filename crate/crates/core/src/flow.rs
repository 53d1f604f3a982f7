//! Geometric operators of the pipeline: feature warping along disparity and
//! flow, occlusion masking and partial correlation cost volumes.
//!
//! Scene flow is carried in *scaled units* everywhere (full-resolution pixels
//! divided by [`FLOW_SCALE`]); [`level_factor`] converts to pixels of a given
//! pyramid level right before sampling.

use crate::error::{Axis, Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Ground truth and predictions are divided by this before training.
pub const FLOW_SCALE: f64 = 20.0;

/// Channel order of a scene flow field.
pub const U: usize = 0;
pub const V: usize = 1;
pub const D0: usize = 2;
pub const D1: usize = 3;

/// Multiplier taking scaled units to pixels of pyramid `level`.
pub fn level_factor(level: u32) -> f64 {
    FLOW_SCALE / f64::from(1u32 << level)
}

/// Four-channel `(u, v, d0, d1)` field in scaled units.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFlowField<T>(Tensor<T>);

impl<T: Scalar> SceneFlowField<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        t.shape().expect_axis("scene flow", Axis::Channels, 4)?;
        Ok(SceneFlowField(t))
    }

    pub fn zeros(n: usize, h: usize, w: usize) -> Self {
        SceneFlowField(Tensor::zeros(Shape::new(n, 4, h, w)))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    /// One component (`U`, `V`, `D0` or `D1`) as a single-channel tensor.
    pub fn component(&self, channel: usize) -> Tensor<T> {
        self.0.channels(channel, 1).expect("scene flow has four channels")
    }

    /// `(u, v)` as a two-channel tensor.
    pub fn optical_flow(&self) -> Tensor<T> {
        self.0.channels(U, 2).expect("scene flow has four channels")
    }

    /// Same field with every value multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        SceneFlowField(self.0.scaled(T::of(k)))
    }
}

/// Single-channel visibility field, 1 = visible and 0 = occluded.
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionMap<T>(Tensor<T>);

impl<T: Scalar> OcclusionMap<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        t.shape().expect_axis("occlusion map", Axis::Channels, 1)?;
        if t.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::invalid("occlusion map", "values must lie in [0, 1]"));
        }
        Ok(OcclusionMap(t))
    }

    pub fn visible(n: usize, h: usize, w: usize) -> Self {
        OcclusionMap(Tensor::ones(Shape::new(n, 1, h, w)))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

#[derive(Clone, Copy)]
struct Tap<T> {
    index: usize,
    weight: T,
}

/// Up to four in-range bilinear taps around `(x, y)`, plus the horizontal and
/// vertical weight derivatives for each.
fn bilinear_taps<T: Scalar>(x: T, y: T, h: usize, w: usize) -> [(Option<Tap<T>>, T, T); 4] {
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let one = T::one();
    let x0 = x0f.to_i64().unwrap_or(i64::MIN / 2);
    let y0 = y0f.to_i64().unwrap_or(i64::MIN / 2);
    let corners = [
        (x0, y0, (one - fx) * (one - fy), -(one - fy), -(one - fx)),
        (x0 + 1, y0, fx * (one - fy), one - fy, -fx),
        (x0, y0 + 1, (one - fx) * fy, -fy, one - fx),
        (x0 + 1, y0 + 1, fx * fy, fy, fx),
    ];
    corners.map(|(cx, cy, wgt, dwx, dwy)| {
        let inside = cx >= 0 && cy >= 0 && (cx as usize) < w && (cy as usize) < h;
        let tap = inside.then(|| Tap { index: cy as usize * w + cx as usize, weight: wgt });
        (tap, dwx, dwy)
    })
}

fn sample_forward<T: Scalar>(features: &Tensor<T>, cx: &Tensor<T>, cy: &Tensor<T>) -> Tensor<T> {
    let fs = features.shape();
    let cs = cx.shape();
    let mut out = Tensor::zeros(Shape::new(fs.n, fs.c, cs.h, cs.w));
    let plane_out = cs.plane();
    for n in 0..fs.n {
        let xs = cx.plane(n, 0);
        let ys = cy.plane(n, 0);
        let taps: Vec<_> = xs.iter().zip(ys).map(|(&x, &y)| bilinear_taps(x, y, fs.h, fs.w)).collect();
        for c in 0..fs.c {
            let src = features.plane(n, c);
            let dst = &mut out.item_mut(n)[c * plane_out..(c + 1) * plane_out];
            for (o, t) in dst.iter_mut().zip(&taps) {
                *o = t.iter().filter_map(|(tap, _, _)| tap.map(|tp| tp.weight * src[tp.index])).sum();
            }
        }
    }
    out
}

struct SampleRule;

impl<T: Scalar> Backward<T> for SampleRule {
    fn name(&self) -> &'static str {
        "bilinear_sample"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (features, cx, cy) = (inputs[0], inputs[1], inputs[2]);
        let fs = features.shape();
        let cs = cx.shape();
        let mut dfeat = needs[0].then(|| Tensor::zeros(fs));
        let mut dcx = (needs[1] || needs[2]).then(|| Tensor::zeros(cs));
        let mut dcy = (needs[1] || needs[2]).then(|| Tensor::zeros(cs));
        for n in 0..fs.n {
            let xs = cx.plane(n, 0);
            let ys = cy.plane(n, 0);
            let taps: Vec<_> = xs.iter().zip(ys).map(|(&x, &y)| bilinear_taps(x, y, fs.h, fs.w)).collect();
            for c in 0..fs.c {
                let src = features.plane(n, c);
                let g = grad.plane(n, c);
                if let Some(df) = dfeat.as_mut() {
                    let dst = df.plane_mut(n, c);
                    for (t, &gv) in taps.iter().zip(g) {
                        for tap in t.iter().filter_map(|(tap, _, _)| *tap) {
                            dst[tap.index] += tap.weight * gv;
                        }
                    }
                }
                if let (Some(dx), Some(dy)) = (dcx.as_mut(), dcy.as_mut()) {
                    let dxp = dx.plane_mut(n, 0);
                    for (p, (t, &gv)) in taps.iter().zip(g).enumerate() {
                        let sx: T = t.iter().filter_map(|(tap, dwx, _)| tap.map(|tp| *dwx * src[tp.index])).sum();
                        dxp[p] += gv * sx;
                    }
                    let dyp = dy.plane_mut(n, 0);
                    for (p, (t, &gv)) in taps.iter().zip(g).enumerate() {
                        let sy: T = t.iter().filter_map(|(tap, _, dwy)| tap.map(|tp| *dwy * src[tp.index])).sum();
                        dyp[p] += gv * sy;
                    }
                }
            }
        }
        vec![dfeat, dcx.filter(|_| needs[1]), dcy.filter(|_| needs[2])]
    }
}

/// Samples `features` at continuous pixel positions `(coords_x, coords_y)`.
///
/// Taps outside the feature map read as zero and receive no gradient.
pub fn bilinear_sample<T: Scalar>(tape: &mut Tape<T>, features: Var, coords_x: Var, coords_y: Var) -> Result<Var> {
    let fs = tape.shape(features);
    let xs = tape.shape(coords_x);
    let ys = tape.shape(coords_y);
    xs.expect_axis("bilinear_sample coords_x", Axis::Channels, 1)?;
    ys.expect_axis("bilinear_sample coords_y", Axis::Channels, 1)?;
    xs.expect_axis("bilinear_sample coords_x", Axis::Batch, fs.n)?;
    ys.expect_grid("bilinear_sample coords_y", &xs)?;
    let out = sample_forward(tape.value(features), tape.value(coords_x), tape.value(coords_y));
    Ok(tape.record(out, &[features, coords_x, coords_y], SampleRule))
}

fn pixel_grid<T: Scalar>(tape: &mut Tape<T>, s: Shape) -> (Var, Var) {
    let g = s.with_channels(1);
    (tape.constant(Tensor::grid_x(g)), tape.constant(Tensor::grid_y(g)))
}

fn expect_single_channel<T: Scalar>(tape: &Tape<T>, op: &'static str, field: Var, feat: Var) -> Result<()> {
    let s = tape.shape(field);
    s.expect_axis(op, Axis::Channels, 1)?;
    s.expect_grid(op, &tape.shape(feat))
}

/// Horizontal warp by disparity: samples `feat` at `(x - a*d0, y)`.
pub fn warp_disparity_1d<T: Scalar>(tape: &mut Tape<T>, feat: Var, d0_up: Var, level: u32) -> Result<Var> {
    expect_single_channel(tape, "warp_disparity_1d", d0_up, feat)?;
    let (gx, gy) = pixel_grid(tape, tape.shape(feat));
    let shift = tape.scale(d0_up, level_factor(level));
    let cx = tape.sub(gx, shift)?;
    bilinear_sample(tape, feat, cx, gy)
}

/// Optical flow warp: samples `feat` at `x + a*(u, v)`.
pub fn warp_flow_2d<T: Scalar>(tape: &mut Tape<T>, feat: Var, uv_up: Var, level: u32) -> Result<Var> {
    let s = tape.shape(uv_up);
    s.expect_axis("warp_flow_2d", Axis::Channels, 2)?;
    s.expect_grid("warp_flow_2d", &tape.shape(feat))?;
    let a = level_factor(level);
    let (gx, gy) = pixel_grid(tape, tape.shape(feat));
    let u = tape.slice_channels(uv_up, 0, 1)?;
    let v = tape.slice_channels(uv_up, 1, 1)?;
    let du = tape.scale(u, a);
    let dv = tape.scale(v, a);
    let cx = tape.add(gx, du)?;
    let cy = tape.add(gy, dv)?;
    bilinear_sample(tape, feat, cx, cy)
}

/// Flow plus disparity warp: samples `feat` at `(x - a*d1 + a*u, y + a*v)`.
pub fn warp_flow_disparity_2d<T: Scalar>(
    tape: &mut Tape<T>,
    feat: Var,
    uv_up: Var,
    d1_up: Var,
    level: u32,
) -> Result<Var> {
    let s = tape.shape(uv_up);
    s.expect_axis("warp_flow_disparity_2d", Axis::Channels, 2)?;
    s.expect_grid("warp_flow_disparity_2d", &tape.shape(feat))?;
    expect_single_channel(tape, "warp_flow_disparity_2d", d1_up, feat)?;
    let a = level_factor(level);
    let (gx, gy) = pixel_grid(tape, tape.shape(feat));
    let u = tape.slice_channels(uv_up, 0, 1)?;
    let v = tape.slice_channels(uv_up, 1, 1)?;
    let horizontal = tape.sub(u, d1_up)?;
    let dx = tape.scale(horizontal, a);
    let dv = tape.scale(v, a);
    let cx = tape.add(gx, dx)?;
    let cy = tape.add(gy, dv)?;
    bilinear_sample(tape, feat, cx, cy)
}

/// Multiplies warped features by a one-channel visibility map.
pub fn apply_occlusion_mask<T: Scalar>(tape: &mut Tape<T>, warped: Var, occ: Var) -> Result<Var> {
    let os = tape.shape(occ);
    os.expect_axis("apply_occlusion_mask", Axis::Channels, 1)?;
    os.expect_grid("apply_occlusion_mask", &tape.shape(warped))?;
    tape.mul(warped, occ)
}

/// Number of displacement channels of a 2-D volume with search radius `d_max`.
pub fn cost_channels_2d(d_max: usize) -> usize {
    (2 * d_max + 1).pow(2)
}

/// Displacements `(dx, dy)` of each cost-volume channel, in channel order.
pub fn displacements(d_max: usize, two_d: bool) -> Vec<(isize, isize)> {
    let d = d_max as isize;
    if two_d {
        (-d..=d).flat_map(|q0| (-d..=d).map(move |q1| (q0, q1))).collect()
    } else {
        (-d..=d).map(|q0| (q0, 0)).collect()
    }
}

/// Valid output range `[lo, hi)` along an axis of length `len` for offset `q`.
fn valid_range(len: usize, q: isize) -> (usize, usize) {
    let lo = (-q).max(0) as usize;
    let hi = (len as isize - q.max(0)).max(0) as usize;
    (lo.min(len), hi.max(lo.min(len)))
}

fn correlate<T: Scalar>(reference: &Tensor<T>, target: &Tensor<T>, offsets: &[(isize, isize)]) -> Tensor<T> {
    let s = reference.shape();
    let inv_c = T::one() / T::of(s.c as f64);
    let mut out = Tensor::zeros(Shape::new(s.n, offsets.len(), s.h, s.w));
    for n in 0..s.n {
        for (k, &(dx, dy)) in offsets.iter().enumerate() {
            let (y_lo, y_hi) = valid_range(s.h, dy);
            let (x_lo, x_hi) = valid_range(s.w, dx);
            let mut acc = vec![T::zero(); s.plane()];
            for c in 0..s.c {
                let r = reference.plane(n, c);
                let t = target.plane(n, c);
                for y in y_lo..y_hi {
                    let ty = (y as isize + dy) as usize;
                    let rrow = &r[y * s.w..(y + 1) * s.w];
                    let trow = &t[ty * s.w..(ty + 1) * s.w];
                    let arow = &mut acc[y * s.w..(y + 1) * s.w];
                    for x in x_lo..x_hi {
                        arow[x] += rrow[x] * trow[(x as isize + dx) as usize];
                    }
                }
            }
            for (o, a) in out.plane_mut(n, k).iter_mut().zip(acc) {
                *o = a * inv_c;
            }
        }
    }
    out
}

struct CorrelationRule {
    offsets: Vec<(isize, isize)>,
}

impl<T: Scalar> Backward<T> for CorrelationRule {
    fn name(&self) -> &'static str {
        "cost_volume"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (reference, target) = (inputs[0], inputs[1]);
        let s = reference.shape();
        let inv_c = T::one() / T::of(s.c as f64);
        let mut dref = needs[0].then(|| Tensor::zeros(s));
        let mut dtgt = needs[1].then(|| Tensor::zeros(s));
        for n in 0..s.n {
            for (k, &(dx, dy)) in self.offsets.iter().enumerate() {
                let (y_lo, y_hi) = valid_range(s.h, dy);
                let (x_lo, x_hi) = valid_range(s.w, dx);
                let g: Vec<T> = grad.plane(n, k).iter().map(|&v| v * inv_c).collect();
                for c in 0..s.c {
                    if let Some(dr) = dref.as_mut() {
                        let t = target.plane(n, c);
                        let d = dr.plane_mut(n, c);
                        for y in y_lo..y_hi {
                            let ty = (y as isize + dy) as usize;
                            for x in x_lo..x_hi {
                                d[y * s.w + x] += g[y * s.w + x] * t[ty * s.w + (x as isize + dx) as usize];
                            }
                        }
                    }
                    if let Some(dt) = dtgt.as_mut() {
                        let r = reference.plane(n, c);
                        let d = dt.plane_mut(n, c);
                        for y in y_lo..y_hi {
                            let ty = (y as isize + dy) as usize;
                            for x in x_lo..x_hi {
                                d[ty * s.w + (x as isize + dx) as usize] += g[y * s.w + x] * r[y * s.w + x];
                            }
                        }
                    }
                }
            }
        }
        vec![dref, dtgt]
    }
}

fn cost_volume<T: Scalar>(tape: &mut Tape<T>, reference: Var, masked: Var, d_max: usize, two_d: bool) -> Result<Var> {
    let op = if two_d { "cost_volume_2d" } else { "cost_volume_1d" };
    if d_max < 1 {
        return Err(Error::invalid(op, "d_max must be at least 1"));
    }
    let rs = tape.shape(reference);
    let ms = tape.shape(masked);
    if rs != ms {
        return Err(Error::IncompatibleShapes { op, lhs: rs, rhs: ms });
    }
    let offsets = displacements(d_max, two_d);
    let out = correlate(tape.value(reference), tape.value(masked), &offsets);
    Ok(tape.record(out, &[reference, masked], CorrelationRule { offsets }))
}

/// Horizontal-only correlation: `2*d_max + 1` channels, channel `k` holds the
/// cost of offset `k - d_max`.
pub fn cost_volume_1d<T: Scalar>(tape: &mut Tape<T>, reference: Var, masked: Var, d_max: usize) -> Result<Var> {
    cost_volume(tape, reference, masked, d_max, false)
}

/// Full 2-D correlation: `(2*d_max + 1)^2` channels ordered by horizontal
/// offset first, then vertical offset, both ascending.
pub fn cost_volume_2d<T: Scalar>(tape: &mut Tape<T>, reference: Var, masked: Var, d_max: usize) -> Result<Var> {
    cost_volume(tape, reference, masked, d_max, true)
}

/// Converts a scaled-unit field to pixels of pyramid `level`.
pub fn rescale_flow_for_level<T: Scalar>(tape: &mut Tape<T>, s: Var, level: u32) -> Var {
    tape.scale(s, level_factor(level))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 1, values.len()), values.to_vec()).unwrap()
    }

    #[test]
    fn identity_coords_reproduce_features() {
        let mut tape = Tape::<f64>::new();
        let f = tape.constant(Tensor::from_fn(Shape::new(1, 3, 4, 5), |_, c, y, x| (c * 20 + y * 5 + x) as f64));
        let s = Shape::new(1, 1, 4, 5);
        let gx = tape.constant(Tensor::grid_x(s));
        let gy = tape.constant(Tensor::grid_y(s));
        let out = bilinear_sample(&mut tape, f, gx, gy).unwrap();
        assert_eq!(tape.value(out), tape.value(f));
    }

    #[test]
    fn half_pixel_shift_zero_fills_border() {
        let mut tape = Tape::<f64>::new();
        let f = tape.constant(row(&[0.0, 1.0, 2.0, 3.0]));
        let cx = tape.constant(row(&[-0.5, 0.5, 1.5, 2.5]));
        let cy = tape.constant(row(&[0.0; 4]));
        let out = bilinear_sample(&mut tape, f, cx, cy).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 0.5, 1.5, 2.5]);
    }

    #[test]
    fn fully_outside_samples_are_zero() {
        let mut tape = Tape::<f64>::new();
        let f = tape.constant(row(&[5.0, 5.0]));
        let cx = tape.constant(row(&[-3.0, 7.5]));
        let cy = tape.constant(row(&[0.0, 0.0]));
        let out = bilinear_sample(&mut tape, f, cx, cy).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn integer_disparity_shift() {
        let mut tape = Tape::<f64>::new();
        let f = tape.constant(row(&[0.0, 1.0, 2.0, 3.0]));
        // level 2: factor 5, so d = 0.2 is one pixel
        let d = tape.constant(row(&[0.2; 4]));
        let out = warp_disparity_1d(&mut tape, f, d, 2).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 0.0, 1.0, 2.0]);
        let half = tape.constant(row(&[0.1; 4]));
        let out = warp_disparity_1d(&mut tape, f, half, 2).unwrap();
        assert_eq!(&tape.value(out).data()[1..], &[0.5, 1.5, 2.5]);
    }

    #[test]
    fn rescale_factor() {
        assert_eq!(level_factor(2), 5.0);
        assert_eq!(level_factor(6), 0.3125);
        let mut tape = Tape::<f64>::new();
        let s = tape.constant(Tensor::from_fn(Shape::new(1, 4, 2, 2), |_, c, y, x| (c + y + x) as f64 * 0.3));
        let px = rescale_flow_for_level(&mut tape, s, 3);
        let back = tape.scale(px, 1.0 / level_factor(3));
        for (a, b) in tape.value(back).data().iter().zip(tape.value(s).data()) {
            assert!((a - b).abs() <= 1e-6);
        }
        let z = tape.constant(Tensor::zeros(Shape::new(1, 4, 2, 2)));
        let zr = rescale_flow_for_level(&mut tape, z, 4);
        assert!(tape.value(zr).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_features_center_cost() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::ones(Shape::new(1, 2, 3, 6)));
        let cv = cost_volume_1d(&mut tape, a, a, 2).unwrap();
        let v = tape.value(cv);
        assert_eq!(v.shape().c, 5);
        for y in 0..3 {
            for x in 0..6 {
                assert_eq!(v.at(0, 2, y, x), 1.0);
            }
        }
        // offset +2 runs off the right edge for the last two columns
        assert_eq!(v.at(0, 4, 1, 5), 0.0);
        assert_eq!(v.at(0, 4, 1, 3), 1.0);
    }

    #[test]
    fn one_hot_target_enumerates_offsets() {
        let mut tape = Tape::<f64>::new();
        let r = tape.constant(Tensor::ones(Shape::new(1, 1, 3, 3)));
        let m = tape.constant(Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, y, x| if (y, x) == (1, 1) { 1.0 } else { 0.0 }));
        let cv = cost_volume_2d(&mut tape, r, m, 1).unwrap();
        let v = tape.value(cv);
        assert_eq!(v.shape().c, 9);
        for y in 0..3 {
            for x in 0..3 {
                let nonzero: Vec<usize> = (0..9).filter(|&k| v.at(0, k, y, x) != 0.0).collect();
                let q0 = 1 - x as isize;
                let q1 = 1 - y as isize;
                let expected = ((q0 + 1) * 3 + (q1 + 1)) as usize;
                assert_eq!(nonzero, vec![expected], "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn cost_volume_rejects_bad_radius_and_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::ones(Shape::new(1, 2, 3, 3)));
        let b = tape.constant(Tensor::ones(Shape::new(1, 3, 3, 3)));
        assert!(cost_volume_1d(&mut tape, a, a, 0).is_err());
        assert!(cost_volume_2d(&mut tape, a, b, 1).is_err());
    }

    #[test]
    fn occlusion_map_validates_range() {
        assert!(OcclusionMap::new(Tensor::<f32>::full(Shape::new(1, 1, 2, 2), 1.5)).is_err());
        assert!(OcclusionMap::new(Tensor::<f32>::full(Shape::new(1, 2, 2, 2), 0.5)).is_err());
        assert!(OcclusionMap::new(Tensor::<f32>::full(Shape::new(1, 1, 2, 2), 0.5)).is_ok());
    }
}
