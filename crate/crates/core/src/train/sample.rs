use crate::error::{Error, Result};
use crate::flow::{OcclusionMap, SceneFlowField};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Scene flow ground truth relative to one reference view.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<T> {
    /// `(u, v, d0, d1)` in scaled units.
    pub flow: SceneFlowField<T>,
    /// 1 where `flow` is defined, 0 elsewhere.
    pub valid: Tensor<T>,
    /// Analytic visibility of the three partner views. Used for evaluation
    /// only; training never reads it.
    pub occlusion: Option<[OcclusionMap<T>; 3]>,
}

/// Four views plus ground truth. Views are left t, right t, left t+1,
/// right t+1, each `(n, 3, h, w)` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub images: [Tensor<T>; 4],
    pub truth: GroundTruth<T>,
    /// Ground truth for the time-reversed sequence, when known.
    pub backward: Option<GroundTruth<T>>,
}

impl<T: Scalar> Sample<T> {
    pub fn shape(&self) -> Shape {
        self.images[0].shape()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.shape();
        if s.c != 3 {
            return Err(Error::invalid("sample", "images must have three channels"));
        }
        for im in &self.images[1..] {
            if im.shape() != s {
                return Err(Error::IncompatibleShapes { op: "sample", lhs: s, rhs: im.shape() });
            }
        }
        for truth in std::iter::once(&self.truth).chain(self.backward.as_ref()) {
            let fs = truth.flow.shape();
            if !fs.same_grid(&s) {
                return Err(Error::IncompatibleShapes { op: "sample", lhs: s, rhs: fs });
            }
            if truth.valid.shape() != s.with_channels(1) {
                return Err(Error::IncompatibleShapes { op: "sample", lhs: s, rhs: truth.valid.shape() });
            }
            let flow = truth.flow.tensor();
            for n in 0..s.n {
                for y in 0..s.h {
                    for x in 0..s.w {
                        if truth.valid.at(n, 0, y, x) > T::zero() && (0..4).any(|c| !flow.at(n, c, y, x).is_finite()) {
                            return Err(Error::NonFinite(format!("ground truth at ({x}, {y})")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Concatenates samples along the batch axis. Backward truth and
    /// occlusion maps are kept only when every sample has them.
    pub fn stack(samples: &[&Sample<T>]) -> Result<Sample<T>> {
        let first = samples.first().ok_or_else(|| Error::invalid("stack", "no samples"))?;
        if samples.len() == 1 {
            return Ok((*first).clone());
        }
        let images: Vec<Tensor<T>> =
            (0..4).map(|i| stack_batch(samples.iter().map(|s| &s.images[i]))).collect::<Result<_>>()?;
        let images: [Tensor<T>; 4] = images.try_into().expect("four views");
        let truth = stack_truth(samples.iter().map(|s| &s.truth))?;
        let backward = if samples.iter().all(|s| s.backward.is_some()) {
            Some(stack_truth(samples.iter().map(|s| s.backward.as_ref().expect("checked")))?)
        } else {
            None
        };
        Ok(Sample { images, truth, backward })
    }
}

fn stack_truth<'a, T: Scalar>(truths: impl Iterator<Item = &'a GroundTruth<T>> + Clone) -> Result<GroundTruth<T>> {
    let flow = SceneFlowField::new(stack_batch(truths.clone().map(|t| t.flow.tensor()))?)?;
    let valid = stack_batch(truths.clone().map(|t| &t.valid))?;
    let occlusion = if truths.clone().all(|t| t.occlusion.is_some()) {
        let maps = [0, 1, 2].map(|i| {
            stack_batch(truths.clone().map(move |t| t.occlusion.as_ref().expect("checked")[i].tensor()))
                .and_then(OcclusionMap::new)
        });
        let [a, b, c] = maps;
        Some([a?, b?, c?])
    } else {
        None
    };
    Ok(GroundTruth { flow, valid, occlusion })
}

/// Concatenates tensors of equal per-item shape along the batch axis.
pub fn stack_batch<'a, T: Scalar>(parts: impl Iterator<Item = &'a Tensor<T>>) -> Result<Tensor<T>> {
    let mut data = Vec::new();
    let mut shape: Option<Shape> = None;
    let mut n = 0;
    for p in parts {
        let s = p.shape();
        match shape {
            Some(first) if (first.c, first.h, first.w) != (s.c, s.h, s.w) => {
                return Err(Error::IncompatibleShapes { op: "stack_batch", lhs: first, rhs: s });
            }
            None => shape = Some(s),
            _ => {}
        }
        n += s.n;
        data.extend_from_slice(p.data());
    }
    let s = shape.ok_or_else(|| Error::invalid("stack_batch", "no tensors"))?;
    Tensor::from_vec(Shape { n, ..s }, data)
}
