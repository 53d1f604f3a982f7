//! Middlebury colour-wheel rendering of optical flow.

use std::f64::consts::PI;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Segment lengths red-yellow, yellow-green, green-cyan, cyan-blue,
/// blue-magenta, magenta-red.
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(SEGMENTS.iter().sum());
    let ramp = |i: usize, n: usize| i as f64 / n as f64;
    let [ry, yg, gc, cb, bm, mr] = SEGMENTS;
    wheel.extend((0..ry).map(|i| [1.0, ramp(i, ry), 0.0]));
    wheel.extend((0..yg).map(|i| [1.0 - ramp(i, yg), 1.0, 0.0]));
    wheel.extend((0..gc).map(|i| [0.0, 1.0, ramp(i, gc)]));
    wheel.extend((0..cb).map(|i| [0.0, 1.0 - ramp(i, cb), 1.0]));
    wheel.extend((0..bm).map(|i| [ramp(i, bm), 0.0, 1.0]));
    wheel.extend((0..mr).map(|i| [1.0, 0.0, 1.0 - ramp(i, mr)]));
    wheel
}

/// Continuous wheel index of direction `(u, v)`, in `[0, ncols - 1]`.
pub(crate) fn wheel_position(u: f64, v: f64, ncols: usize) -> f64 {
    let a = (-v).atan2(-u) / PI;
    (a + 1.0) / 2.0 * (ncols - 1) as f64
}

fn encode(u: f64, v: f64, max_mag: f64, wheel: &[[f64; 3]]) -> [f64; 3] {
    let n = wheel.len();
    let rad = u.hypot(v) / max_mag;
    let fk = wheel_position(u, v, n);
    let k0 = fk.floor() as usize % n;
    let k1 = (k0 + 1) % n;
    let f = fk - fk.floor();
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
        *o = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
    }
    out
}

/// 99th-percentile flow magnitude of a `(n, 2, h, w)` field.
pub fn percentile_magnitude<T: Scalar>(flow: &Tensor<T>, q: f64) -> f64 {
    let s = flow.shape();
    let mut mags: Vec<f64> = (0..s.n)
        .flat_map(|n| flow.plane(n, 0).iter().zip(flow.plane(n, 1)).map(|(u, v)| u.as_f64().hypot(v.as_f64())))
        .filter(|m| m.is_finite())
        .collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    let idx = ((q * mags.len() as f64).ceil() as usize).clamp(1, mags.len()) - 1;
    mags[idx]
}

/// Colour image of `flow`, `(1, 2, h, w)` in any unit. Magnitudes are
/// normalised by `max_mag`, by default the 99th-percentile magnitude.
/// Zero flow is white; vectors beyond `max_mag` are darkened.
pub fn flow_to_color<T: Scalar>(flow: &Tensor<T>, max_mag: Option<f64>) -> Result<Tensor<T>> {
    let s = flow.shape();
    crate::io::expect_single("flow_to_color", s, 2)?;
    let max_mag = max_mag.unwrap_or_else(|| percentile_magnitude(flow, 0.99));
    let max_mag = if max_mag > 0.0 && max_mag.is_finite() { max_mag } else { 1.0 };
    let wheel = color_wheel();
    let mut out = Tensor::zeros(Shape::new(1, 3, s.h, s.w));
    for y in 0..s.h {
        for x in 0..s.w {
            let (u, v) = (flow.at(0, 0, y, x).as_f64(), flow.at(0, 1, y, x).as_f64());
            let rgb = if u.is_finite() && v.is_finite() { encode(u, v, max_mag, &wheel) } else { [0.0; 3] };
            for (c, val) in rgb.into_iter().enumerate() {
                *out.at_mut(0, c, y, x) = T::of(val);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_vector(u: f64, v: f64) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![u, v]).unwrap()
    }

    #[test]
    fn zero_flow_is_white() {
        let img = flow_to_color(&Tensor::<f32>::zeros(Shape::new(1, 2, 3, 4)), None).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unit_rightward_flow_is_saturated_red() {
        let img = flow_to_color(&one_vector(2.0, 0.0), Some(2.0)).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn opposite_vectors_sit_half_a_wheel_apart() {
        let n = color_wheel().len();
        assert_eq!(n, 55);
        for (u, v) in [(1.0, 0.3), (-0.2, 1.0), (0.5, -0.7)] {
            let a = wheel_position(u, v, n);
            let b = wheel_position(-u, -v, n);
            assert!(((a - b).abs() - (n - 1) as f64 / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn percentile_ignores_outliers() {
        let mut data = vec![1.0; 200];
        data[0] = 1e6;
        let flow = Tensor::from_vec(Shape::new(1, 2, 10, 10), data).unwrap();
        assert!(percentile_magnitude(&flow, 0.99) < 2.0);
    }
}
