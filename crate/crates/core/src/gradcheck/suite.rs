//! Finite-difference checks of every differentiable operation of the
//! pipeline on small random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, GradCheckConfig, GradCheckReport};
use crate::error::Result;
use crate::flow::{
    apply_occlusion_mask, bilinear_sample, cost_volume_1d, cost_volume_2d, level_factor, warp_disparity_1d, warp_flow_2d,
    warp_flow_disparity_2d,
};
use crate::net::ParamVars;
use crate::ops::ConvSpec;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};
use crate::train::{masked_l2_sum, weight_norm};

/// Outcome of one operation's check.
#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

struct Case {
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    build: Build,
}

/// Reduces `out` to a scalar through fixed random weights so that every
/// output element gets a distinct upstream gradient.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let r = Tensor::uniform(tape.shape(out), -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let r = tape.constant(r);
    let p = tape.mul(out, r)?;
    Ok(tape.sum_all(p))
}

fn case(name: &'static str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Case {
    Case { name, inputs, build: Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
        let out = f(t, v)?;
        project(t, out, name.len() as u64)
    }) }
}

fn scalar_case(name: &'static str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Case {
    Case { name, inputs, build: Box::new(f) }
}

/// Per-pixel target positions whose bilinear taps all lie inside a `h x w`
/// grid and whose fractional parts stay in `[0.25, 0.75]`, away from the
/// kinks of bilinear interpolation.
fn interior_targets(s: Shape, rng: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>) {
    let g = s.with_channels(1);
    let mut pick = |len: usize| rng.random_range(0..len - 1) as f64 + rng.random_range(0.25..0.75);
    let tx = Tensor::from_fn(g, |_, _, _, _| pick(s.w));
    let ty = Tensor::from_fn(g, |_, _, _, _| pick(s.h));
    (tx, ty)
}

fn rand(rng: &mut ChaCha8Rng, s: Shape) -> Tensor<f64> {
    Tensor::uniform(s, -1.0, 1.0, rng)
}

fn cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    for (name, spec, hw) in [
        ("conv2d 3x3", ConvSpec::same3x3(2, 3, 1), (6, 7)),
        ("conv2d 3x3 dilation 2", ConvSpec::same3x3(2, 3, 2), (7, 8)),
        ("conv2d 3x3 stride 2", ConvSpec::strided3x3(3, 2), (8, 7)),
        ("conv2d 1x1", ConvSpec::pointwise(3, 4), (5, 6)),
    ] {
        let inputs = vec![rand(&mut rng, Shape::new(2, spec.in_channels, hw.0, hw.1)), rand(&mut rng, spec.weight_shape()), rand(&mut rng, spec.bias_shape())];
        out.push(case(name, inputs, move |t, v| t.conv2d(v[0], v[1], v[2], spec)));
    }

    // keep inputs clear of the kink at zero
    let away = rand(&mut rng, Shape::new(1, 3, 4, 5)).map(|x| if x.abs() < 0.05 { x + 0.1f64.copysign(x) } else { x });
    out.push(case("leaky_relu", vec![away], |t, v| Ok(t.leaky_relu(v[0], 0.1))));
    out.push(case("sigmoid", vec![rand(&mut rng, Shape::new(1, 3, 4, 5)).scaled(4.0)], |t, v| Ok(t.sigmoid(v[0]))));
    out.push(case("upsample x2", vec![rand(&mut rng, Shape::new(1, 2, 3, 4))], |t, v| t.upsample_bilinear(v[0], 2)));
    out.push(case("upsample x4", vec![rand(&mut rng, Shape::new(1, 2, 2, 2))], |t, v| t.upsample_bilinear(v[0], 4)));
    out.push(case("concat + slice", vec![rand(&mut rng, Shape::new(1, 2, 3, 3)), rand(&mut rng, Shape::new(1, 3, 3, 3))], |t, v| {
        let c = t.concat_channels(&[v[0], v[1]])?;
        t.slice_channels(c, 1, 3)
    }));
    out.push(case(
        "add/sub/mul with channel broadcast",
        vec![rand(&mut rng, Shape::new(2, 3, 4, 4)), rand(&mut rng, Shape::new(2, 1, 4, 4)), rand(&mut rng, Shape::new(2, 3, 4, 4))],
        |t, v| {
            let a = t.add(v[0], v[1])?;
            let b = t.sub(a, v[2])?;
            let c = t.mul(b, v[1])?;
            let d = t.mul(c, v[2])?;
            Ok(t.scale(d, -1.7))
        },
    ));
    let positive = rand(&mut rng, Shape::new(1, 2, 3, 3)).map(|x| x.abs() + 0.2);
    out.push(case("sqrt", vec![positive], |t, v| Ok(t.sqrt(v[0]))));

    let fs = Shape::new(1, 3, 6, 7);
    let (tx, ty) = interior_targets(fs, &mut rng);
    out.push(case("bilinear_sample", vec![rand(&mut rng, fs), tx.clone(), ty.clone()], |t, v| bilinear_sample(t, v[0], v[1], v[2])));

    // Flow fields that land on the interior targets at level 3.
    let level = 3;
    let a = level_factor(level);
    let g = fs.with_channels(1);
    let (gx, gy) = (Tensor::<f64>::grid_x(g), Tensor::<f64>::grid_y(g));
    let d0 = gx.zip_map(&tx, |x, t| (x - t) / a);
    out.push(case("warp_disparity_1d", vec![rand(&mut rng, fs), d0], move |t, v| warp_disparity_1d(t, v[0], v[1], level)));
    let u = tx.zip_map(&gx, |t, x| (t - x) / a);
    let v_flow = ty.zip_map(&gy, |t, y| (t - y) / a);
    let uv = Tensor::concat_channels(&[&u, &v_flow]).expect("same grid");
    out.push(case("warp_flow_2d", vec![rand(&mut rng, fs), uv], move |t, v| warp_flow_2d(t, v[0], v[1], level)));
    let d1 = rand(&mut rng, g).scaled(0.05);
    let uv_d = Tensor::concat_channels(&[&u.zip_map(&d1, |u, d| u + d), &v_flow]).expect("same grid");
    out.push(case("warp_flow_disparity_2d", vec![rand(&mut rng, fs), uv_d, d1], move |t, v| {
        warp_flow_disparity_2d(t, v[0], v[1], v[2], level)
    }));

    let occ = rand(&mut rng, g).map(|x| 0.5 + 0.5 * x);
    out.push(case("occlusion mask", vec![rand(&mut rng, fs), occ], |t, v| apply_occlusion_mask(t, v[0], v[1])));

    let cs = Shape::new(1, 4, 7, 8);
    out.push(case("cost_volume_1d", vec![rand(&mut rng, cs), rand(&mut rng, cs)], |t, v| cost_volume_1d(t, v[0], v[1], 2)));
    out.push(case("cost_volume_2d", vec![rand(&mut rng, cs), rand(&mut rng, cs)], |t, v| cost_volume_2d(t, v[0], v[1], 2)));

    let ls = Shape::new(2, 4, 5, 6);
    let mask = Tensor::from_fn(ls.with_channels(1), |_, _, y, x| if (x + y) % 4 == 0 { 0.0 } else { 1.0 });
    out.push(scalar_case("masked_l2_sum", vec![rand(&mut rng, ls), rand(&mut rng, ls)], move |t, v| {
        let m = t.constant(mask.clone());
        masked_l2_sum(t, v[0], v[1], m)
    }));
    out.push(scalar_case("weight_norm", vec![rand(&mut rng, Shape::new(1, 2, 3, 3)), rand(&mut rng, Shape::new(1, 4, 1, 1))], |t, v| {
        let vars = ParamVars::from_pairs([("a", v[0]), ("b", v[1])]);
        weight_norm(t, &vars)
    }));
    out
}

/// Runs every case in 64-bit and returns the reports in a fixed order.
pub fn run_suite(cfg: &GradCheckConfig) -> Result<Vec<SuiteCase>> {
    cases(cfg.seed)
        .into_iter()
        .map(|c| Ok(SuiteCase { name: c.name, report: grad_check(&*c.build, &c.inputs, cfg)? }))
        .collect()
}
