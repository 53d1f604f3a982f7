//! Data augmentation. Photometric changes touch the images only; geometric
//! ones keep images and ground truth consistent.

use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::{OcclusionMap, SceneFlowField, V};
use crate::scalar::Scalar;
use crate::train::sample::{GroundTruth, Sample};

/// One photometric transform, applied identically to all four views.
#[derive(Clone, Debug, PartialEq)]
pub struct Photometric {
    pub brightness: f64,
    pub contrast: f64,
    pub gamma: f64,
    pub color: [f64; 3],
    pub noise_std: f64,
}

impl Photometric {
    pub fn identity() -> Self {
        Photometric { brightness: 0.0, contrast: 1.0, gamma: 1.0, color: [1.0; 3], noise_std: 0.0 }
    }

    pub fn random<R: Rng>(rng: &mut R) -> Self {
        Photometric {
            brightness: rng.random_range(-0.2..0.2),
            contrast: rng.random_range(0.8..1.25),
            gamma: rng.random_range(0.8..1.25),
            color: [0; 3].map(|_| rng.random_range(0.9..1.1)),
            noise_std: rng.random_range(0.0..0.02),
        }
    }

    fn apply_pixel(&self, v: f64, c: usize) -> f64 {
        let v = v.clamp(0.0, 1.0).powf(self.gamma);
        let v = (v - 0.5) * self.contrast + 0.5 + self.brightness;
        v * self.color[c]
    }
}

/// Applies `p` to every view and clamps to `[0, 1]`. Noise is drawn per
/// pixel from `rng`.
pub fn augment_photometric<T: Scalar, R: Rng>(sample: &Sample<T>, p: &Photometric, rng: &mut R) -> Sample<T> {
    let normal = rand_distr::Normal::new(0.0, p.noise_std.max(0.0)).expect("finite std");
    let mut out = sample.clone();
    for im in &mut out.images {
        let s = im.shape();
        for n in 0..s.n {
            for c in 0..s.c {
                for v in im.plane_mut(n, c) {
                    let mut x = p.apply_pixel(v.as_f64(), c % 3);
                    if p.noise_std > 0.0 {
                        x += rng.sample(normal);
                    }
                    *v = T::of(x.clamp(0.0, 1.0));
                }
            }
        }
    }
    out
}

fn flip_truth<T: Scalar>(truth: &GroundTruth<T>) -> GroundTruth<T> {
    let mut flow = truth.flow.tensor().flip_vertical();
    for n in 0..flow.shape().n {
        for v in flow.plane_mut(n, V) {
            *v = -*v;
        }
    }
    GroundTruth {
        flow: SceneFlowField::new(flow).expect("four channels"),
        valid: truth.valid.flip_vertical(),
        occlusion: truth
            .occlusion
            .as_ref()
            .map(|maps| maps.clone().map(|m| OcclusionMap::new(m.tensor().flip_vertical()).expect("valid map"))),
    }
}

/// Mirrors every view upside down and negates the vertical flow.
pub fn augment_vertical_flip<T: Scalar>(sample: &Sample<T>) -> Sample<T> {
    Sample {
        images: sample.images.clone().map(|im| im.flip_vertical()),
        truth: flip_truth(&sample.truth),
        backward: sample.backward.as_ref().map(flip_truth),
    }
}

/// Plays the sequence backwards: views become `(Lt+1, Rt+1, Lt, Rt)` and the
/// forward and backward ground truth swap places.
pub fn augment_temporal_flip<T: Scalar>(sample: &Sample<T>) -> Result<Sample<T>> {
    let backward = sample
        .backward
        .clone()
        .ok_or_else(|| Error::invalid("augment_temporal_flip", "sample has no backward ground truth"))?;
    let [lt, rt, lt1, rt1] = sample.images.clone();
    Ok(Sample { images: [lt1, rt1, lt, rt], truth: backward, backward: Some(sample.truth.clone()) })
}

/// Which augmentations the trainer applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentConfig {
    pub photometric: bool,
    pub vertical_flip: bool,
    pub temporal_flip: bool,
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig { photometric: false, vertical_flip: false, temporal_flip: false }
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { photometric: true, vertical_flip: true, temporal_flip: true }
    }
}

/// Randomly applies the enabled augmentations, each flip with probability 1/2.
/// Temporal flips are skipped for samples without backward truth.
pub fn augment<T: Scalar, R: Rng>(sample: &Sample<T>, cfg: &AugmentConfig, rng: &mut R) -> Sample<T> {
    let mut s = sample.clone();
    if cfg.temporal_flip && s.backward.is_some() && rng.random_bool(0.5) {
        s = augment_temporal_flip(&s).expect("backward truth present");
    }
    if cfg.vertical_flip && rng.random_bool(0.5) {
        s = augment_vertical_flip(&s);
    }
    if cfg.photometric {
        let p = Photometric::random(rng);
        s = augment_photometric(&s, &p, rng);
    }
    s
}
