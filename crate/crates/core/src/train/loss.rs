//! Multi-scale endpoint loss with intermediate supervision.

use crate::error::{Error, Result};
use crate::net::{ForwardOutput, ParamVars, BOTTOM_LEVEL, TOP_LEVEL};
use crate::scalar::Scalar;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Smoothing inside the square root of the norm derivative.
const NORM_EPS: f64 = 1e-9;

/// Per-level weights `alpha_2..alpha_6` and the weight-norm coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub alphas: [f64; 5],
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alphas: [0.32, 0.08, 0.02, 0.01, 0.005], gamma: 0.0 }
    }
}

impl LossWeights {
    pub fn alpha(&self, level: u32) -> f64 {
        self.alphas[(level - BOTTOM_LEVEL) as usize]
    }
}

/// Averages `gt` over `2^level` blocks using only valid pixels.
///
/// Returns the pooled field and a mask that is 1 wherever at least one source
/// pixel was valid. Values are not rescaled: scaled units do not depend on
/// resolution.
pub fn downsample_gt<T: Scalar>(gt: &Tensor<T>, valid: &Tensor<T>, level: u32) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = gt.shape();
    let vs = valid.shape();
    if vs != s.with_channels(1) {
        return Err(Error::IncompatibleShapes { op: "downsample_gt", lhs: s, rhs: vs });
    }
    let f = 1usize << level;
    if s.h % f != 0 || s.w % f != 0 {
        return Err(Error::invalid("downsample_gt", format!("{}x{} is not divisible by {f}", s.h, s.w)));
    }
    let (oh, ow) = (s.h / f, s.w / f);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let mut mask = Tensor::zeros(Shape::new(s.n, 1, oh, ow));
    for n in 0..s.n {
        for by in 0..oh {
            for bx in 0..ow {
                let mut count = T::zero();
                let mut sums = vec![T::zero(); s.c];
                for y in by * f..(by + 1) * f {
                    for x in bx * f..(bx + 1) * f {
                        let m = valid.at(n, 0, y, x);
                        if m > T::zero() {
                            count += T::one();
                            for (c, acc) in sums.iter_mut().enumerate() {
                                *acc += gt.at(n, c, y, x);
                            }
                        }
                    }
                }
                if count > T::zero() {
                    *mask.at_mut(n, 0, by, bx) = T::one();
                    for (c, acc) in sums.into_iter().enumerate() {
                        *out.at_mut(n, c, by, bx) = acc / count;
                    }
                }
            }
        }
    }
    Ok((out, mask))
}

struct MaskedNormRule;

impl<T: Scalar> Backward<T> for MaskedNormRule {
    fn name(&self) -> &'static str {
        "masked_l2_sum"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (pred, gt, mask) = (inputs[0], inputs[1], inputs[2]);
        let s = pred.shape();
        let g = grad.data()[0];
        let eps = T::of(NORM_EPS);
        let mut dpred = Tensor::zeros(s);
        let mut dmask = Tensor::zeros(mask.shape());
        for n in 0..s.n {
            for y in 0..s.h {
                for x in 0..s.w {
                    let m = mask.at(n, 0, y, x);
                    let sq: T = (0..s.c).map(|c| (pred.at(n, c, y, x) - gt.at(n, c, y, x)).powi(2)).sum();
                    *dmask.at_mut(n, 0, y, x) = g * sq.sqrt();
                    if sq == T::zero() || m == T::zero() {
                        continue;
                    }
                    let k = g * m / (sq + eps).sqrt();
                    for c in 0..s.c {
                        *dpred.at_mut(n, c, y, x) = k * (pred.at(n, c, y, x) - gt.at(n, c, y, x));
                    }
                }
            }
        }
        let dgt = needs[1].then(|| dpred.scaled(-T::one()));
        vec![needs[0].then_some(dpred), dgt, needs[2].then_some(dmask)]
    }
}

/// `sum_x mask(x) * |pred(x) - gt(x)|_2` with the norm taken over channels.
///
/// The derivative is defined as zero where the residual vanishes.
pub fn masked_l2_sum<T: Scalar>(tape: &mut Tape<T>, pred: Var, gt: Var, mask: Var) -> Result<Var> {
    let ps = tape.shape(pred);
    let gs = tape.shape(gt);
    let ms = tape.shape(mask);
    if ps != gs {
        return Err(Error::IncompatibleShapes { op: "masked_l2_sum", lhs: ps, rhs: gs });
    }
    if ms != ps.with_channels(1) {
        return Err(Error::IncompatibleShapes { op: "masked_l2_sum", lhs: ps, rhs: ms });
    }
    let (p, g, m) = (tape.value(pred), tape.value(gt), tape.value(mask));
    let mut total = T::zero();
    for n in 0..ps.n {
        for y in 0..ps.h {
            for x in 0..ps.w {
                let mv = m.at(n, 0, y, x);
                if mv == T::zero() {
                    continue;
                }
                let sq: T = (0..ps.c).map(|c| (p.at(n, c, y, x) - g.at(n, c, y, x)).powi(2)).sum();
                total += mv * sq.sqrt();
            }
        }
    }
    Ok(tape.record(Tensor::scalar(total), &[pred, gt, mask], MaskedNormRule))
}

/// Ground truth pooled to every supervised level.
#[derive(Clone, Debug)]
pub struct GtPyramid<T> {
    levels: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> GtPyramid<T> {
    pub fn new(gt: &Tensor<T>, valid: &Tensor<T>) -> Result<Self> {
        let levels = (BOTTOM_LEVEL..=TOP_LEVEL).map(|l| downsample_gt(gt, valid, l)).collect::<Result<_>>()?;
        Ok(GtPyramid { levels })
    }

    /// `(flow, mask)` at `level`.
    pub fn level(&self, level: u32) -> (&Tensor<T>, &Tensor<T>) {
        let (f, m) = &self.levels[(level - BOTTOM_LEVEL) as usize];
        (f, m)
    }
}

/// Total loss and the unweighted per-level terms (index 0 = level 2).
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub per_level: [Var; 5],
}

/// Predictions entering the loss: `s^l` for the upper levels and the refined
/// field in place of `s^2`.
pub struct LevelPredictions {
    pub refined: Var,
    pub upper: Vec<(u32, Var)>,
}

impl From<&ForwardOutput> for LevelPredictions {
    fn from(out: &ForwardOutput) -> Self {
        LevelPredictions {
            refined: out.refined,
            upper: out.levels.iter().filter(|l| l.level > BOTTOM_LEVEL).map(|l| (l.level, l.s)).collect(),
        }
    }
}

/// Weighted sum of per-level endpoint norms plus `gamma * |theta|_2`.
pub fn multiscale_loss<T: Scalar>(
    tape: &mut Tape<T>,
    preds: &LevelPredictions,
    gt: &GtPyramid<T>,
    weights: &LossWeights,
    params: Option<&ParamVars>,
) -> Result<LossTerms> {
    let mut per_level: [Option<Var>; 5] = [None; 5];
    let mut total: Option<Var> = None;
    let mut entries = vec![(BOTTOM_LEVEL, preds.refined)];
    entries.extend(preds.upper.iter().copied());
    for (level, pred) in entries {
        let (g, m) = gt.level(level);
        let gv = tape.constant(g.clone());
        let mv = tape.constant(m.clone());
        let term = masked_l2_sum(tape, pred, gv, mv)?;
        per_level[(level - BOTTOM_LEVEL) as usize] = Some(term);
        let weighted = tape.scale(term, weights.alpha(level));
        total = Some(match total {
            Some(t) => tape.add(t, weighted)?,
            None => weighted,
        });
    }
    let per_level: Vec<Var> = per_level
        .iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| missing(BOTTOM_LEVEL + i as u32)))
        .collect::<Result<_>>()?;
    let per_level: [Var; 5] = per_level.try_into().expect("five supervised levels");
    let mut total = total.expect("level 2 always present");
    if weights.gamma > 0.0 {
        let params = params.ok_or_else(|| Error::invalid("multiscale_loss", "gamma > 0 needs the parameters"))?;
        let norm = weight_norm(tape, params)?;
        let reg = tape.scale(norm, weights.gamma);
        total = tape.add(total, reg)?;
    }
    Ok(LossTerms { total, per_level })
}

fn missing(level: u32) -> Error {
    Error::Missing { kind: "prediction for level", name: level.to_string() }
}

/// Euclidean norm over every parameter scalar.
pub fn weight_norm<T: Scalar>(tape: &mut Tape<T>, params: &ParamVars) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (_, v) in params.iter() {
        let sq = tape.mul(v, v)?;
        let s = tape.sum_all(sq);
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    let acc = acc.ok_or_else(|| Error::invalid("weight_norm", "no parameters"))?;
    Ok(tape.sqrt(acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_gt_survives_pooling() {
        let gt = Tensor::<f64>::full(Shape::new(1, 4, 64, 64), 0.7);
        let valid = Tensor::ones(Shape::new(1, 1, 64, 64));
        for level in 2..=6 {
            let (g, m) = downsample_gt(&gt, &valid, level).unwrap();
            assert_eq!(g.shape().h, 64 >> level);
            assert!(g.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
            assert!(m.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn checkerboard_pools_to_half() {
        let gt = Tensor::<f64>::from_fn(Shape::new(1, 1, 8, 8), |_, _, y, x| ((x + y) % 2) as f64);
        let valid = Tensor::ones(Shape::new(1, 1, 8, 8));
        let (g, _) = downsample_gt(&gt, &valid, 2).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn invalid_block_masked_out() {
        let gt = Tensor::<f64>::full(Shape::new(1, 1, 8, 8), 3.0);
        let valid = Tensor::from_fn(Shape::new(1, 1, 8, 8), |_, _, y, x| if x < 4 && y < 4 { 0.0 } else { 1.0 });
        let (g, m) = downsample_gt(&gt, &valid, 2).unwrap();
        assert_eq!(m.data(), &[0.0, 1.0, 1.0, 1.0]);
        assert_eq!(g.data(), &[0.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn three_four_five() {
        let mut tape = Tape::<f64>::new();
        let mut p = Tensor::zeros(Shape::new(1, 4, 2, 2));
        *p.at_mut(0, 0, 1, 0) = 3.0;
        *p.at_mut(0, 1, 1, 0) = 4.0;
        let pred = tape.variable(p);
        let gt = tape.constant(Tensor::zeros(Shape::new(1, 4, 2, 2)));
        let mask = tape.constant(Tensor::ones(Shape::new(1, 1, 2, 2)));
        let l = masked_l2_sum(&mut tape, pred, gt, mask).unwrap();
        assert_eq!(tape.value(l).data()[0], 5.0);
        let g = tape.backward(l).unwrap();
        let d = g.get(pred).unwrap();
        assert!((d.at(0, 0, 1, 0) - 0.6).abs() < 1e-9);
        // zero residual pixels get zero gradient
        assert_eq!(d.at(0, 0, 0, 0), 0.0);
    }
}
