//! Endpoint errors and outlier rates in full-resolution pixels.
//!
//! A pixel is an outlier for a quantity when its error exceeds both 3 px and
//! 5% of the ground-truth magnitude. `d1`, `d2` and `fl` are the outlier
//! rates of the first disparity, second disparity and optical flow; `sf`
//! counts pixels that fail any of the three.

use std::fmt;

use crate::error::{Error, Result};
use crate::flow::{SceneFlowField, D0, D1, U, V};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const OUTLIER_PIXELS: f64 = 3.0;
pub const OUTLIER_RELATIVE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub epe_flow: f64,
    pub epe_d0: f64,
    pub epe_d1: f64,
    pub d1: f64,
    pub d2: f64,
    pub fl: f64,
    pub sf: f64,
    pub valid_pixels: usize,
    pub total_pixels: usize,
}

pub fn is_outlier(error: f64, gt_magnitude: f64) -> bool {
    error > OUTLIER_PIXELS && error > OUTLIER_RELATIVE * gt_magnitude
}

/// Compares `pred` with `gt` (both in pixels) over pixels where `valid > 0.5`.
pub fn compute_metrics<T: Scalar>(pred: &SceneFlowField<T>, gt: &SceneFlowField<T>, valid: &Tensor<T>) -> Result<MetricsReport> {
    let s = gt.shape();
    if pred.shape() != s {
        return Err(Error::IncompatibleShapes { op: "compute_metrics", lhs: s, rhs: pred.shape() });
    }
    if valid.shape() != s.with_channels(1) {
        return Err(Error::IncompatibleShapes { op: "compute_metrics", lhs: s.with_channels(1), rhs: valid.shape() });
    }
    let (p, g) = (pred.tensor(), gt.tensor());
    let (mut epe, mut e0, mut e1) = (0.0, 0.0, 0.0);
    let (mut o_d1, mut o_d2, mut o_fl, mut o_sf) = (0usize, 0usize, 0usize, 0usize);
    let mut count = 0usize;
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                if valid.at(n, 0, y, x).as_f64() <= 0.5 {
                    continue;
                }
                count += 1;
                let at = |t: &Tensor<T>, c| t.at(n, c, y, x).as_f64();
                let flow_err = (at(p, U) - at(g, U)).hypot(at(p, V) - at(g, V));
                let flow_mag = at(g, U).hypot(at(g, V));
                let err0 = (at(p, D0) - at(g, D0)).abs();
                let err1 = (at(p, D1) - at(g, D1)).abs();
                epe += flow_err;
                e0 += err0;
                e1 += err1;
                let a = is_outlier(err0, at(g, D0).abs());
                let b = is_outlier(err1, at(g, D1).abs());
                let c = is_outlier(flow_err, flow_mag);
                o_d1 += a as usize;
                o_d2 += b as usize;
                o_fl += c as usize;
                o_sf += (a || b || c) as usize;
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("compute_metrics", "no valid pixels"));
    }
    let k = count as f64;
    Ok(MetricsReport {
        epe_flow: epe / k,
        epe_d0: e0 / k,
        epe_d1: e1 / k,
        d1: o_d1 as f64 / k,
        d2: o_d2 as f64 / k,
        fl: o_fl as f64 / k,
        sf: o_sf as f64 / k,
        valid_pixels: count,
        total_pixels: s.n * s.plane(),
    })
}

impl MetricsReport {
    fn rows(&self) -> [(&'static str, f64); 9] {
        [
            ("epe_flow", self.epe_flow),
            ("epe_d0", self.epe_d0),
            ("epe_d1", self.epe_d1),
            ("d1", self.d1),
            ("d2", self.d2),
            ("fl", self.fl),
            ("sf", self.sf),
            ("valid_pixels", self.valid_pixels as f64),
            ("total_pixels", self.total_pixels as f64),
        ]
    }

    /// `key=value` lines for scripts, values printed exactly.
    pub fn key_values(&self) -> String {
        self.rows().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Aligned table for humans.
impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.rows() {
            if k.ends_with("pixels") {
                writeln!(f, "{k:<14}{v:>12}")?;
            } else {
                writeln!(f, "{k:<14}{v:>12.4}")?;
            }
        }
        Ok(())
    }
}

/// Probability that a random occluded pixel (`gt < 0.5`) scores lower than a
/// random visible one, ties counting half. `None` when either class is empty.
pub fn occlusion_ranking_accuracy<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Option<f64>> {
    if pred.shape() != gt.shape() {
        return Err(Error::IncompatibleShapes { op: "occlusion_ranking_accuracy", lhs: gt.shape(), rhs: pred.shape() });
    }
    let mut scored: Vec<(f64, bool)> = pred.data().iter().zip(gt.data()).map(|(p, g)| (p.as_f64(), g.as_f64() >= 0.5)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut occluded_below, mut pairs_won) = (0.0, 0.0);
    let (mut n_occ, mut n_vis) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        let occ = scored[i..j].iter().filter(|s| !s.1).count();
        let vis = (j - i) - occ;
        pairs_won += vis as f64 * (occluded_below + 0.5 * occ as f64);
        occluded_below += occ as f64;
        n_occ += occ;
        n_vis += vis;
        i = j;
    }
    if n_occ == 0 || n_vis == 0 {
        return Ok(None);
    }
    Ok(Some(pairs_won / (n_occ as f64 * n_vis as f64)))
}
