//! Naive reference implementations shared by the integration tests.
#![allow(dead_code)]

use pwoc_core::{Scalar, Shape, Tensor};

/// Per-pixel correlation written directly from the definition: channel `k`
/// of a 1-D volume holds offset `k - d`; a 2-D volume walks the horizontal
/// offset in the outer position and the vertical offset in the inner one.
pub fn naive_cost<T: Scalar>(reference: &Tensor<T>, target: &Tensor<T>, d_max: usize, two_d: bool) -> Tensor<T> {
    let s = reference.shape();
    let d = d_max as isize;
    let side = 2 * d_max + 1;
    let k_count = if two_d { side * side } else { side };
    Tensor::from_fn(Shape::new(s.n, k_count, s.h, s.w), |n, k, y, x| {
        let (q0, q1) = if two_d { ((k / side) as isize - d, (k % side) as isize - d) } else { (k as isize - d, 0) };
        let (tx, ty) = (x as isize + q0, y as isize + q1);
        if tx < 0 || ty < 0 || tx >= s.w as isize || ty >= s.h as isize {
            return T::zero();
        }
        let mut acc = 0.0;
        for c in 0..s.c {
            acc += reference.at(n, c, y, x).as_f64() * target.at(n, c, ty as usize, tx as usize).as_f64();
        }
        T::of(acc / s.c as f64)
    })
}

/// Bilinear lookup with zero-valued taps outside the map.
pub fn naive_sample(feat: &Tensor<f64>, n: usize, c: usize, sx: f64, sy: f64) -> f64 {
    let s = feat.shape();
    let (x0, y0) = (sx.floor(), sy.floor());
    let (fx, fy) = (sx - x0, sy - y0);
    let tap = |x: f64, y: f64| {
        if x < 0.0 || y < 0.0 || x > (s.w - 1) as f64 || y > (s.h - 1) as f64 {
            0.0
        } else {
            feat.at(n, c, y as usize, x as usize)
        }
    };
    tap(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + tap(x0 + 1.0, y0) * fx * (1.0 - fy)
        + tap(x0, y0 + 1.0) * (1.0 - fx) * fy
        + tap(x0 + 1.0, y0 + 1.0) * fx * fy
}

pub fn max_abs_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).fold(0.0, f64::max)
}

pub fn bits<T: Scalar>(t: &Tensor<T>) -> Vec<u64> {
    t.data().iter().map(|v| v.as_f64().to_bits()).collect()
}
