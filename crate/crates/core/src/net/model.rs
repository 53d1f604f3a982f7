//! Feature pyramids, per-level estimators, context refinement and the
//! coarse-to-fine forward pass.

use crate::error::{Axis, Error, Result};
use crate::flow::{
    apply_occlusion_mask, cost_volume_1d, cost_volume_2d, warp_disparity_1d, warp_flow_2d,
    warp_flow_disparity_2d,
};
use crate::net::config::{PwocConfig, BOTTOM_LEVEL, TOP_LEVEL};
use crate::net::params::ParamVars;
use crate::ops::ConvSpec;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// FPN outputs for levels `BOTTOM_LEVEL..=TOP_LEVEL`.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    levels: Vec<Var>,
}

impl FeaturePyramid {
    pub fn level(&self, level: u32) -> Var {
        self.levels[(level - BOTTOM_LEVEL) as usize]
    }
}

/// Which of the three non-reference views a branch belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    /// Right image, time t.
    RightT,
    /// Left image, time t+1.
    LeftT1,
    /// Right image, time t+1.
    RightT1,
}

impl View {
    pub const ALL: [View; 3] = [View::RightT, View::LeftT1, View::RightT1];

    pub fn tag(self) -> &'static str {
        match self {
            View::RightT => "rt",
            View::LeftT1 => "lt1",
            View::RightT1 => "rt1",
        }
    }
}

/// Everything produced at one pyramid level.
#[derive(Clone, Debug)]
pub struct LevelOutput {
    pub level: u32,
    /// Upsampled flow from the level above (zeros at the top).
    pub s_up: Var,
    /// Scene flow estimate `s^l`, scaled units.
    pub s: Var,
    /// Warped features, occlusion maps, penultimate occlusion features and
    /// cost volumes, indexed like [`View::ALL`].
    pub warped: [Var; 3],
    pub occ: [Var; 3],
    pub g: [Var; 3],
    pub cost: [Var; 3],
    /// Penultimate scene flow features.
    pub h: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Levels from `TOP_LEVEL` down to `BOTTOM_LEVEL`.
    pub levels: Vec<LevelOutput>,
    /// Context-refined flow at the bottom level.
    pub refined: Var,
    /// `refined` upsampled to the input resolution, still in scaled units.
    pub full_res: Var,
}

impl ForwardOutput {
    pub fn level(&self, level: u32) -> &LevelOutput {
        &self.levels[(TOP_LEVEL - level) as usize]
    }
}

/// The network bound to a configuration and a set of parameter handles.
pub struct PwocNet<'a> {
    pub config: &'a PwocConfig,
    pub params: &'a ParamVars,
}

impl<'a> PwocNet<'a> {
    pub fn new(config: &'a PwocConfig, params: &'a ParamVars) -> Self {
        PwocNet { config, params }
    }

    fn conv<T: Scalar>(&self, tape: &mut Tape<T>, name: &str, x: Var, spec: ConvSpec) -> Result<Var> {
        let w = self.params.get(&format!("{name}.weight"))?;
        let b = self.params.get(&format!("{name}.bias"))?;
        tape.conv2d(x, w, b, spec)
    }

    fn conv_act<T: Scalar>(&self, tape: &mut Tape<T>, name: &str, x: Var, spec: ConvSpec) -> Result<Var> {
        let y = self.conv(tape, name, x, spec)?;
        Ok(tape.leaky_relu(y, self.config.leaky_slope))
    }

    /// Runs a stack of size-preserving 3x3 convolutions. Returns the output of
    /// the last layer (no activation applied) and the activated features of the
    /// layer before it.
    fn stack<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        prefix: &str,
        input: Var,
        channels: &[usize],
        dilations: Option<&[usize]>,
    ) -> Result<(Var, Var)> {
        let mut x = input;
        let mut prev = tape.shape(input).c;
        let mut penultimate = input;
        for (i, &c) in channels.iter().enumerate() {
            let d = dilations.map_or(1, |d| d[i]);
            let spec = ConvSpec::same3x3(prev, c, d);
            let name = format!("{prefix}.conv{}", i + 1);
            if i + 1 == channels.len() {
                x = self.conv(tape, &name, x, spec)?;
            } else {
                x = self.conv_act(tape, &name, x, spec)?;
                penultimate = x;
            }
            prev = c;
        }
        Ok((x, penultimate))
    }

    /// Bottom-up strided encoder followed by the top-down pathway with lateral
    /// 1x1 projections and 3x3 smoothing.
    pub fn build_feature_pyramid<T: Scalar>(&self, tape: &mut Tape<T>, image: Var) -> Result<FeaturePyramid> {
        let s = tape.shape(image);
        s.expect_axis("build_feature_pyramid", Axis::Channels, 3)?;
        check_divisible(s)?;
        let mut bottom_up = Vec::with_capacity(TOP_LEVEL as usize);
        // Centre intensities so the features do not inherit the image's DC level.
        let offset = tape.constant(Tensor::full(s, T::of(-0.5)));
        let mut x = tape.add(image, offset)?;
        let mut prev = 3;
        for (i, &c) in self.config.bottom_up_channels.iter().enumerate() {
            let stage = i + 1;
            x = self.conv_act(tape, &format!("fpn.down{stage}.conv1"), x, ConvSpec::strided3x3(prev, c))?;
            x = self.conv_act(tape, &format!("fpn.down{stage}.conv2"), x, ConvSpec::same3x3(c, c, 1))?;
            bottom_up.push(x);
            prev = c;
        }
        let p = self.config.pyramid_channels;
        let mut levels = Vec::with_capacity((TOP_LEVEL - BOTTOM_LEVEL + 1) as usize);
        let mut merged: Option<Var> = None;
        for level in (BOTTOM_LEVEL..=TOP_LEVEL).rev() {
            let c = bottom_up[level as usize - 1];
            let cin = self.config.bottom_up_channels[level as usize - 1];
            let lateral = self.conv(tape, &format!("fpn.lateral{level}"), c, ConvSpec::pointwise(cin, p))?;
            let m = match merged {
                Some(upper) => {
                    let up = tape.upsample_bilinear(upper, 2)?;
                    tape.add(lateral, up)?
                }
                None => lateral,
            };
            merged = Some(m);
            levels.push(self.conv(tape, &format!("fpn.smooth{level}"), m, ConvSpec::same3x3(p, p, 1))?);
        }
        levels.reverse();
        Ok(FeaturePyramid { levels })
    }

    /// Predicts a visibility map from reference and warped features.
    ///
    /// `upper` carries the occlusion features and map of the level above,
    /// already upsampled to this level's grid.
    pub fn occlusion_estimator<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        level: u32,
        reference: Var,
        warped: Var,
        upper: Option<(Var, Var)>,
    ) -> Result<(Var, Var)> {
        let mut parts = vec![reference, warped];
        if let Some((g, o)) = upper {
            parts.extend([g, o]);
        }
        let input = tape.concat_channels(&parts)?;
        tape.shape(input).expect_axis("occlusion_estimator", Axis::Channels, self.config.occ_input_channels(level))?;
        let (logits, g) = self.stack(tape, &format!("occ{level}"), input, &self.config.occ_channels, None)?;
        Ok((tape.sigmoid(logits), g))
    }

    /// Predicts `s^l` from the three cost volumes and, below the top level,
    /// the features and upsampled flow of the level above.
    pub fn sceneflow_estimator<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        level: u32,
        cost: [Var; 3],
        upper: Option<(Var, Var)>,
    ) -> Result<(Var, Var)> {
        let mut parts = cost.to_vec();
        if let Some((h, s)) = upper {
            parts.extend([h, s]);
        }
        let input = tape.concat_channels(&parts)?;
        tape.shape(input).expect_axis("sceneflow_estimator", Axis::Channels, self.config.sf_input_channels(level))?;
        self.stack(tape, &format!("sf{level}"), input, &self.config.sf_channels, None)
    }

    /// Dilated refinement: returns `s2 + residual(s2, f2)`.
    pub fn context_refine<T: Scalar>(&self, tape: &mut Tape<T>, s2: Var, f2: Var) -> Result<Var> {
        tape.shape(s2).expect_axis("context_refine", Axis::Channels, 4)?;
        let input = tape.concat_channels(&[s2, f2])?;
        let (residual, _) =
            self.stack(tape, "ctx", input, &self.config.ctx_channels, Some(&self.config.ctx_dilations))?;
        tape.add(s2, residual)
    }

    /// Coarse-to-fine pass over all four views. Images are `(n, 3, h, w)` in
    /// the order left t, right t, left t+1, right t+1.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, images: [Var; 4]) -> Result<ForwardOutput> {
        let s0 = tape.shape(images[0]);
        for &im in &images[1..] {
            let s = tape.shape(im);
            if s != s0 {
                return Err(Error::IncompatibleShapes { op: "forward", lhs: s0, rhs: s });
            }
        }
        let pyramids = images
            .iter()
            .map(|&im| self.build_feature_pyramid(tape, im))
            .collect::<Result<Vec<_>>>()?;

        let mut levels: Vec<LevelOutput> = Vec::new();
        for level in (BOTTOM_LEVEL..=TOP_LEVEL).rev() {
            let reference = pyramids[0].level(level);
            let grid = tape.shape(reference);
            let above = levels.last();
            // Level 6 starts from an all-zero s^7, which makes the warps identities.
            let s_up = match above {
                Some(up) => tape.upsample_bilinear(up.s, 2)?,
                None => tape.constant(Tensor::zeros(Shape::new(grid.n, 4, grid.h, grid.w))),
            };
            let uv = tape.slice_channels(s_up, 0, 2)?;
            let d0 = tape.slice_channels(s_up, 2, 1)?;
            let d1 = tape.slice_channels(s_up, 3, 1)?;
            let warped = [
                warp_disparity_1d(tape, pyramids[1].level(level), d0, level)?,
                warp_flow_2d(tape, pyramids[2].level(level), uv, level)?,
                warp_flow_disparity_2d(tape, pyramids[3].level(level), uv, d1, level)?,
            ];

            let mut occ = [warped[0]; 3];
            let mut g = [warped[0]; 3];
            for i in 0..3 {
                let upper = match above {
                    Some(up) => Some((tape.upsample_bilinear(up.g[i], 2)?, tape.upsample_bilinear(up.occ[i], 2)?)),
                    None => None,
                };
                let (o, gi) = self.occlusion_estimator(tape, level, reference, warped[i], upper)?;
                occ[i] = o;
                g[i] = gi;
            }
            let cost = masked_costs(tape, reference, warped, occ, self.config.d_max)?;
            let upper = match above {
                Some(up) => Some((tape.upsample_bilinear(up.h, 2)?, s_up)),
                None => None,
            };
            let (s, h) = self.sceneflow_estimator(tape, level, cost, upper)?;
            levels.push(LevelOutput { level, s_up, s, warped, occ, g, cost, h });
        }
        let bottom = levels.last().expect("at least one level");
        let refined = self.context_refine(tape, bottom.s, bottom.h)?;
        let full_res = tape.upsample_bilinear(refined, 1 << BOTTOM_LEVEL)?;
        Ok(ForwardOutput { levels, refined, full_res })
    }
}

/// Masks each warped view by its occlusion map and correlates it with the
/// reference: 1-D along the epipolar line for the stereo partner, 2-D for the
/// two t+1 views.
pub fn masked_costs<T: Scalar>(
    tape: &mut Tape<T>,
    reference: Var,
    warped: [Var; 3],
    occ: [Var; 3],
    d_max: usize,
) -> Result<[Var; 3]> {
    let f_rt = apply_occlusion_mask(tape, warped[0], occ[0])?;
    let f_lt1 = apply_occlusion_mask(tape, warped[1], occ[1])?;
    let f_rt1 = apply_occlusion_mask(tape, warped[2], occ[2])?;
    Ok([
        cost_volume_1d(tape, reference, f_rt, d_max)?,
        cost_volume_2d(tape, reference, f_lt1, d_max)?,
        cost_volume_2d(tape, reference, f_rt1, d_max)?,
    ])
}

fn check_divisible(s: Shape) -> Result<()> {
    let m = PwocConfig::size_multiple();
    if s.h % m != 0 || s.w % m != 0 {
        return Err(Error::invalid(
            "build_feature_pyramid",
            format!("input {}x{} must be a multiple of {m} in both dimensions", s.h, s.w),
        ));
    }
    Ok(())
}
