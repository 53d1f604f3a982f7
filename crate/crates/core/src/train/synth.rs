//! Layered synthetic stereo sequences with closed-form scene flow.
//!
//! A scene is a textured fronto-parallel background plus textured rectangles
//! in front of it. Every layer has a disparity `d`, a disparity change `dd`
//! and an image-plane motion `(u, v)`. A layer point at left-t position `p`
//! appears at
//!
//! ```text
//! left  t   : p
//! right t   : p - (d, 0)
//! left  t+1 : p + (u, v)
//! right t+1 : p + (u, v) - (d + dd, 0)
//! ```
//!
//! Later layers occlude earlier ones in every view.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{OcclusionMap, SceneFlowField, FLOW_SCALE};
use crate::net::PwocConfig;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};
use crate::train::sample::{GroundTruth, Sample};

/// Margin of texture around the frame, in pixels.
const TEXTURE_MARGIN: usize = 48;
/// Blur widths of the noise octaves summed into a texture, each at unit
/// variance so every pyramid level sees structure.
const TEXTURE_SCALES: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

/// Sampling ranges for scene parameters, all in full-resolution pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub bg_disparity: (f64, f64),
    /// Extra disparity of each object over the layer behind it.
    pub object_disparity_step: (f64, f64),
    pub bg_motion: f64,
    pub object_motion: f64,
    pub disparity_change: f64,
    /// Object side lengths as fractions of the frame side.
    pub object_size: (f64, f64),
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            bg_disparity: (1.0, 8.0),
            object_disparity_step: (2.0, 5.0),
            bg_motion: 4.0,
            object_motion: 8.0,
            disparity_change: 1.5,
            object_size: (0.15, 0.4),
        }
    }
}

impl SceneConfig {
    /// No disparity and no motion anywhere.
    pub fn still() -> Self {
        SceneConfig {
            bg_disparity: (0.0, 0.0),
            object_disparity_step: (0.0, 0.0),
            bg_motion: 0.0,
            object_motion: 0.0,
            disparity_change: 0.0,
            ..SceneConfig::default()
        }
    }
}

/// Continuous RGB texture: smoothed noise sampled bilinearly.
#[derive(Clone, Debug)]
struct Texture {
    w: usize,
    h: usize,
    data: Vec<[f64; 3]>,
}

fn blur_1d(src: &[f64], w: usize, h: usize, sigma: f64, horizontal: bool) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, &kv) in kernel.iter().enumerate() {
                let o = k as isize - r;
                let (sx, sy) = if horizontal { (x as isize + o, y as isize) } else { (x as isize, y as isize + o) };
                if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                    acc += kv * src[sy as usize * w + sx as usize];
                    norm += kv;
                }
            }
            out[y * w + x] = acc / norm;
        }
    }
    out
}

fn smooth_noise<R: Rng>(w: usize, h: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    let noise: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
    let b = blur_1d(&noise, w, h, sigma, true);
    blur_1d(&b, w, h, sigma, false)
}

fn stretch(v: &mut [f64], lo: f64, hi: f64) {
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-12);
    for x in v {
        *x = lo + (hi - lo) * (*x - min) / span;
    }
}

impl Texture {
    fn random<R: Rng>(frame_w: usize, frame_h: usize, rng: &mut R) -> Self {
        let w = frame_w + 2 * TEXTURE_MARGIN;
        let h = frame_h + 2 * TEXTURE_MARGIN;
        let base: [f64; 3] = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
        let channels: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                let mut mix = vec![0.0; w * h];
                for sigma in TEXTURE_SCALES {
                    let octave = smooth_noise(w, h, sigma, rng);
                    let mean = octave.iter().sum::<f64>() / octave.len() as f64;
                    let std = (octave.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / octave.len() as f64).sqrt().max(1e-12);
                    for (m, o) in mix.iter_mut().zip(&octave) {
                        *m += (o - mean) / std;
                    }
                }
                let amp = 0.3;
                stretch(&mut mix, (base[c] - amp).max(0.0), (base[c] + amp).min(1.0));
                mix
            })
            .collect();
        let data = (0..w * h).map(|i| [channels[0][i], channels[1][i], channels[2][i]]).collect();
        Texture { w, h, data }
    }

    /// Colour at frame coordinates `(x, y)`, clamped to the texture domain.
    fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let m = TEXTURE_MARGIN as f64;
        let tx = (x + m).clamp(0.0, (self.w - 1) as f64);
        let ty = (y + m).clamp(0.0, (self.h - 1) as f64);
        let x0 = tx.floor() as usize;
        let y0 = ty.floor() as usize;
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let fx = tx - x0 as f64;
        let fy = ty - y0 as f64;
        let at = |xx: usize, yy: usize| self.data[yy * self.w + xx];
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = at(x0, y0)[c] * (1.0 - fx) + at(x1, y0)[c] * fx;
            let bottom = at(x0, y1)[c] * (1.0 - fx) + at(x1, y1)[c] * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
        out
    }
}

/// One rigidly moving layer.
#[derive(Clone, Debug)]
pub struct Layer {
    /// Extent in left-t coordinates; `None` covers the whole plane.
    pub rect: Option<[f64; 4]>,
    pub disparity: f64,
    pub disparity_change: f64,
    pub motion: (f64, f64),
    texture: Texture,
}

impl Layer {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self.rect {
            None => true,
            Some([x0, y0, w, h]) => x >= x0 && x < x0 + w && y >= y0 && y < y0 + h,
        }
    }

    fn disparity_at(&self, time: usize) -> f64 {
        self.disparity + self.disparity_change * time as f64
    }
}

/// Camera and time of a view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ViewId {
    right: bool,
    time: usize,
}

/// Views in sample order: left t, right t, left t+1, right t+1.
const VIEWS: [ViewId; 4] = [
    ViewId { right: false, time: 0 },
    ViewId { right: true, time: 0 },
    ViewId { right: false, time: 1 },
    ViewId { right: true, time: 1 },
];

/// A layered scene that can render views and derive exact ground truth.
#[derive(Clone, Debug)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    /// Back to front.
    pub layers: Vec<Layer>,
}

impl Scene {
    pub fn random(seed: u64, width: usize, height: usize, n_objects: usize, cfg: &SceneConfig) -> Result<Self> {
        let m = PwocConfig::size_multiple();
        if width == 0 || height == 0 || width % m != 0 || height % m != 0 {
            return Err(Error::invalid(
                "gen_synthetic_scene",
                format!("{width}x{height} must be a positive multiple of {m} in both dimensions"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let range = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let sym = |rng: &mut ChaCha8Rng, a: f64| if a > 0.0 { rng.random_range(-a..a) } else { 0.0 };

        let mut layers = Vec::with_capacity(n_objects + 1);
        let bg_d = range(&mut rng, cfg.bg_disparity);
        let bg_motion = (sym(&mut rng, cfg.bg_motion), sym(&mut rng, cfg.bg_motion));
        let bg_dd = sym(&mut rng, cfg.disparity_change);
        layers.push(Layer {
            rect: None,
            disparity: bg_d,
            disparity_change: bg_dd,
            motion: bg_motion,
            texture: Texture::random(width, height, &mut rng),
        });
        let mut d = bg_d;
        for _ in 0..n_objects {
            d += range(&mut rng, cfg.object_disparity_step);
            let rw = range(&mut rng, cfg.object_size) * width as f64;
            let rh = range(&mut rng, cfg.object_size) * height as f64;
            let x0 = rng.random_range(0.0..(width as f64 - rw).max(1.0));
            let y0 = rng.random_range(0.0..(height as f64 - rh).max(1.0));
            let motion = (sym(&mut rng, cfg.object_motion), sym(&mut rng, cfg.object_motion));
            let dd = sym(&mut rng, cfg.disparity_change);
            layers.push(Layer {
                rect: Some([x0.round(), y0.round(), rw.round().max(1.0), rh.round().max(1.0)]),
                disparity: d,
                disparity_change: dd,
                motion,
                texture: Texture::random(width, height, &mut rng),
            });
        }
        Ok(Scene { width, height, layers })
    }

    /// Builds a scene from explicit layers.
    pub fn with_layers(width: usize, height: usize, seed: u64, specs: &[LayerSpec]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|s| Layer {
                rect: s.rect,
                disparity: s.disparity,
                disparity_change: s.disparity_change,
                motion: s.motion,
                texture: Texture::random(width, height, &mut rng),
            })
            .collect();
        Scene { width, height, layers }
    }

    fn offset(&self, layer: &Layer, view: ViewId) -> (f64, f64) {
        let t = view.time as f64;
        let mut ox = layer.motion.0 * t;
        if view.right {
            ox -= layer.disparity_at(view.time);
        }
        (ox, layer.motion.1 * t)
    }

    /// Index of the front-most layer covering `(x, y)` in `view`.
    fn front_layer(&self, view: ViewId, x: f64, y: f64) -> usize {
        self.layers
            .iter()
            .enumerate()
            .rev()
            .find(|(_, l)| {
                let (ox, oy) = self.offset(l, view);
                l.contains(x - ox, y - oy)
            })
            .map_or(0, |(i, _)| i)
    }

    fn render(&self, view: ViewId) -> Tensor<f64> {
        let mut out = Tensor::zeros(Shape::new(1, 3, self.height, self.width));
        for y in 0..self.height {
            for x in 0..self.width {
                let (xf, yf) = (x as f64, y as f64);
                let layer = &self.layers[self.front_layer(view, xf, yf)];
                let (ox, oy) = self.offset(layer, view);
                let rgb = layer.texture.sample(xf - ox, yf - oy);
                for (c, v) in rgb.into_iter().enumerate() {
                    *out.at_mut(0, c, y, x) = v;
                }
            }
        }
        out
    }

    /// Ground truth relative to `reference`, with visibility in `partners`.
    fn truth(&self, reference: ViewId, partners: [ViewId; 3]) -> (Tensor<f64>, [Tensor<f64>; 3]) {
        let (h, w) = (self.height, self.width);
        let mut flow = Tensor::zeros(Shape::new(1, 4, h, w));
        let mut occ = [0; 3].map(|_| Tensor::zeros(Shape::new(1, 1, h, w)));
        let other_time = 1 - reference.time;
        let same_camera_later = ViewId { right: reference.right, time: other_time };
        for y in 0..h {
            for x in 0..w {
                let (xf, yf) = (x as f64, y as f64);
                let li = self.front_layer(reference, xf, yf);
                let layer = &self.layers[li];
                let (rx, ry) = self.offset(layer, reference);
                let (tx, ty) = self.offset(layer, same_camera_later);
                let values = [tx - rx, ty - ry, layer.disparity_at(reference.time), layer.disparity_at(other_time)];
                for (c, v) in values.into_iter().enumerate() {
                    *flow.at_mut(0, c, y, x) = v;
                }
                for (k, &view) in partners.iter().enumerate() {
                    let (ox, oy) = self.offset(layer, view);
                    let (qx, qy) = (xf - rx + ox, yf - ry + oy);
                    let inside = qx >= -0.5 && qy >= -0.5 && qx < w as f64 - 0.5 && qy < h as f64 - 0.5;
                    let visible = inside && self.front_layer(view, qx, qy) == li;
                    *occ[k].at_mut(0, 0, y, x) = if visible { 1.0 } else { 0.0 };
                }
            }
        }
        (flow, occ)
    }

    /// Renders all four views with forward and backward ground truth.
    pub fn to_sample<T: Scalar>(&self) -> Sample<T> {
        let images = VIEWS.map(|v| self.render(v).cast());
        let scale = 1.0 / FLOW_SCALE;
        let wrap = |(flow, occ): (Tensor<f64>, [Tensor<f64>; 3])| GroundTruth {
            flow: SceneFlowField::new(flow.scaled(scale).cast()).expect("four channels"),
            valid: Tensor::ones(Shape::new(1, 1, self.height, self.width)),
            occlusion: Some(occ.map(|o| OcclusionMap::new(o.cast()).expect("binary map"))),
        };
        let truth = wrap(self.truth(VIEWS[0], [VIEWS[1], VIEWS[2], VIEWS[3]]));
        let backward = wrap(self.truth(VIEWS[2], [VIEWS[3], VIEWS[0], VIEWS[1]]));
        Sample { images, truth, backward: Some(backward) }
    }
}

/// Explicit layer description for [`Scene::with_layers`].
#[derive(Clone, Debug, Default)]
pub struct LayerSpec {
    pub rect: Option<[f64; 4]>,
    pub disparity: f64,
    pub disparity_change: f64,
    pub motion: (f64, f64),
}

/// Random scene with default parameter ranges.
pub fn gen_synthetic_scene<T: Scalar>(seed: u64, width: usize, height: usize, n_objects: usize) -> Result<Sample<T>> {
    gen_synthetic_scene_with(seed, width, height, n_objects, &SceneConfig::default())
}

pub fn gen_synthetic_scene_with<T: Scalar>(
    seed: u64,
    width: usize,
    height: usize,
    n_objects: usize,
    cfg: &SceneConfig,
) -> Result<Sample<T>> {
    Ok(Scene::random(seed, width, height, n_objects, cfg)?.to_sample())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn still_scene_is_trivial() {
        let s: Sample<f64> = gen_synthetic_scene_with(3, 128, 64, 0, &SceneConfig::still()).unwrap();
        for im in &s.images[1..] {
            assert_eq!(im, &s.images[0]);
        }
        assert_eq!(s.truth.flow.tensor().max_abs(), 0.0);
        for occ in s.truth.occlusion.as_ref().unwrap() {
            assert!(occ.tensor().data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a: Sample<f32> = gen_synthetic_scene(11, 128, 64, 2).unwrap();
        let b: Sample<f32> = gen_synthetic_scene(11, 128, 64, 2).unwrap();
        let c: Sample<f32> = gen_synthetic_scene(12, 128, 64, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.images[0], c.images[0]);
        a.validate().unwrap();
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(gen_synthetic_scene::<f32>(0, 100, 64, 1).is_err());
        assert!(gen_synthetic_scene::<f32>(0, 128, 0, 1).is_err());
    }

    #[test]
    fn right_view_is_shifted_left_view() {
        let scene = Scene::with_layers(128, 64, 5, &[LayerSpec { disparity: 3.0, ..LayerSpec::default() }]);
        let s: Sample<f64> = scene.to_sample();
        let (l, r) = (&s.images[0], &s.images[1]);
        for y in 0..64 {
            for x in 0..125 {
                for c in 0..3 {
                    assert_eq!(r.at(0, c, y, x), l.at(0, c, y, x + 3));
                }
            }
        }
    }

    #[test]
    fn moving_rectangle_covers_background_on_its_leading_side() {
        let specs = [
            LayerSpec::default(),
            LayerSpec { rect: Some([40.0, 20.0, 20.0, 16.0]), disparity: 0.0, motion: (4.0, 0.0), ..LayerSpec::default() },
        ];
        let s: Sample<f64> = Scene::with_layers(128, 64, 9, &specs).to_sample();
        let occ_lt1 = s.truth.occlusion.as_ref().unwrap()[1].tensor();
        for y in 0..64 {
            for x in 0..128 {
                let covered = (20..36).contains(&y) && (60..64).contains(&x);
                assert_eq!(occ_lt1.at(0, 0, y, x) == 0.0, covered, "({x}, {y})");
            }
        }
        // the rectangle itself carries its motion
        let flow = s.truth.flow.tensor();
        assert!((flow.at(0, 0, 25, 45) - 4.0 / FLOW_SCALE).abs() < 1e-12);
        assert_eq!(flow.at(0, 0, 25, 10), 0.0);
    }

    #[test]
    fn disparity_change_holds_on_objects() {
        let s: Sample<f64> = gen_synthetic_scene(21, 128, 64, 3).unwrap();
        let scene = Scene::random(21, 128, 64, 3, &SceneConfig::default()).unwrap();
        let flow = s.truth.flow.tensor();
        for y in 0..64 {
            for x in 0..128 {
                let layer = &scene.layers[scene.front_layer(VIEWS[0], x as f64, y as f64)];
                let d0 = flow.at(0, 2, y, x);
                let d1 = flow.at(0, 3, y, x);
                assert!((d0 - layer.disparity / FLOW_SCALE).abs() < 1e-12);
                assert!((d1 - (d0 + layer.disparity_change / FLOW_SCALE)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_truth_reverses_motion() {
        let specs = [LayerSpec { disparity: 2.0, disparity_change: 1.0, motion: (3.0, -2.0), ..LayerSpec::default() }];
        let s: Sample<f64> = Scene::with_layers(128, 64, 1, &specs).to_sample();
        let b = s.backward.as_ref().unwrap().flow.tensor();
        assert!((b.at(0, 0, 10, 10) - -3.0 / FLOW_SCALE).abs() < 1e-12);
        assert!((b.at(0, 1, 10, 10) - 2.0 / FLOW_SCALE).abs() < 1e-12);
        assert!((b.at(0, 2, 10, 10) - 3.0 / FLOW_SCALE).abs() < 1e-12);
        assert!((b.at(0, 3, 10, 10) - 2.0 / FLOW_SCALE).abs() < 1e-12);
    }
}
