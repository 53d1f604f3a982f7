use crate::error::{Error, Result};
use crate::ops::ConvSpec;

/// Finest pyramid level the estimator runs at; predictions there are 1/4 of
/// the input resolution.
pub const BOTTOM_LEVEL: u32 = 2;
/// Coarsest pyramid level; inputs must be divisible by `2^TOP_LEVEL`.
pub const TOP_LEVEL: u32 = 6;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PwocConfig {
    /// Search radius of every cost volume.
    pub d_max: usize,
    /// Output channels of the six bottom-up stages.
    pub bottom_up_channels: Vec<usize>,
    /// Width `P` of every FPN output level.
    pub pyramid_channels: usize,
    pub leaky_slope: f64,
    pub occ_channels: Vec<usize>,
    pub sf_channels: Vec<usize>,
    pub ctx_channels: Vec<usize>,
    pub ctx_dilations: Vec<usize>,
}

impl Default for PwocConfig {
    fn default() -> Self {
        PwocConfig {
            d_max: 4,
            bottom_up_channels: vec![16, 32, 64, 96, 128, 196],
            pyramid_channels: 64,
            leaky_slope: 0.1,
            occ_channels: vec![128, 96, 64, 32, 16, 1],
            sf_channels: vec![128, 128, 96, 64, 32, 4],
            ctx_channels: vec![128, 128, 128, 96, 64, 32, 4],
            ctx_dilations: vec![1, 2, 4, 8, 16, 1, 1],
        }
    }
}

fn fail(msg: impl Into<String>) -> Error {
    Error::invalid("config", msg)
}

impl PwocConfig {
    /// Default layout with every hidden layer `width` channels wide. Used for
    /// fast experiments and tests.
    pub fn uniform(width: usize, d_max: usize) -> Self {
        let d = PwocConfig::default();
        let hidden = |v: &Vec<usize>| {
            let mut out = vec![width; v.len()];
            *out.last_mut().expect("non-empty") = *v.last().expect("non-empty");
            out
        };
        PwocConfig {
            d_max,
            bottom_up_channels: vec![width; d.bottom_up_channels.len()],
            pyramid_channels: width,
            occ_channels: hidden(&d.occ_channels),
            sf_channels: hidden(&d.sf_channels),
            ctx_channels: hidden(&d.ctx_channels),
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_max < 1 {
            return Err(fail("d_max must be at least 1"));
        }
        if self.bottom_up_channels.len() != TOP_LEVEL as usize {
            return Err(fail(format!("bottom_up_channels needs {TOP_LEVEL} entries")));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(fail("leaky_slope must lie in (0, 1)"));
        }
        let all = [&self.bottom_up_channels, &self.occ_channels, &self.sf_channels, &self.ctx_channels, &self.ctx_dilations];
        if all.iter().any(|v| v.iter().any(|&c| c == 0)) || self.pyramid_channels == 0 {
            return Err(fail("channel counts and dilations must be positive"));
        }
        if self.occ_channels.len() < 2 || self.occ_channels.last() != Some(&1) {
            return Err(fail("occ_channels needs at least two layers and must end in 1"));
        }
        if self.sf_channels.len() < 2 || self.sf_channels.last() != Some(&4) {
            return Err(fail("sf_channels needs at least two layers and must end in 4"));
        }
        if self.ctx_channels.last() != Some(&4) {
            return Err(fail("ctx_channels must end in 4"));
        }
        if self.ctx_dilations.len() != self.ctx_channels.len() {
            return Err(fail("ctx_dilations must have one entry per context layer"));
        }
        Ok(())
    }

    /// Channels of the occlusion estimator's penultimate layer (`g`).
    pub fn occ_feature_channels(&self) -> usize {
        self.occ_channels[self.occ_channels.len() - 2]
    }

    /// Channels of the scene flow estimator's penultimate layer (`h`).
    pub fn sf_feature_channels(&self) -> usize {
        self.sf_channels[self.sf_channels.len() - 2]
    }

    pub fn displacement_count(&self) -> usize {
        2 * self.d_max + 1
    }

    /// First-layer input width of the occlusion estimator at `level`.
    pub fn occ_input_channels(&self, level: u32) -> usize {
        let base = 2 * self.pyramid_channels;
        if level == TOP_LEVEL {
            base
        } else {
            base + self.occ_feature_channels() + 1
        }
    }

    /// First-layer input width of the scene flow estimator at `level`.
    pub fn sf_input_channels(&self, level: u32) -> usize {
        let d = self.displacement_count();
        let base = d + 2 * d * d;
        if level == TOP_LEVEL {
            base
        } else {
            base + self.sf_feature_channels() + 4
        }
    }

    pub fn ctx_input_channels(&self) -> usize {
        4 + self.sf_feature_channels()
    }

    /// Every convolution of the model, in a fixed order, keyed by parameter
    /// prefix.
    pub fn layers(&self) -> Vec<(String, ConvSpec)> {
        let mut out = Vec::new();
        let mut prev = 3;
        for (i, &c) in self.bottom_up_channels.iter().enumerate() {
            let stage = i + 1;
            out.push((format!("fpn.down{stage}.conv1"), ConvSpec::strided3x3(prev, c)));
            out.push((format!("fpn.down{stage}.conv2"), ConvSpec::same3x3(c, c, 1)));
            prev = c;
        }
        let p = self.pyramid_channels;
        for level in BOTTOM_LEVEL..=TOP_LEVEL {
            let c = self.bottom_up_channels[level as usize - 1];
            out.push((format!("fpn.lateral{level}"), ConvSpec::pointwise(c, p)));
            out.push((format!("fpn.smooth{level}"), ConvSpec::same3x3(p, p, 1)));
        }
        for level in (BOTTOM_LEVEL..=TOP_LEVEL).rev() {
            let mut prev = self.occ_input_channels(level);
            for (i, &c) in self.occ_channels.iter().enumerate() {
                out.push((format!("occ{level}.conv{}", i + 1), ConvSpec::same3x3(prev, c, 1)));
                prev = c;
            }
            let mut prev = self.sf_input_channels(level);
            for (i, &c) in self.sf_channels.iter().enumerate() {
                out.push((format!("sf{level}.conv{}", i + 1), ConvSpec::same3x3(prev, c, 1)));
                prev = c;
            }
        }
        let mut prev = self.ctx_input_channels();
        for (i, (&c, &d)) in self.ctx_channels.iter().zip(&self.ctx_dilations).enumerate() {
            out.push((format!("ctx.conv{}", i + 1), ConvSpec::same3x3(prev, c, d)));
            prev = c;
        }
        out
    }

    /// Total trainable scalars implied by the configuration.
    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(_, s)| s.param_count()).sum()
    }

    /// Input sizes must be a multiple of this along both axes.
    pub fn size_multiple() -> usize {
        1 << TOP_LEVEL
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PwocConfig::default().validate().unwrap();
    }

    #[test]
    fn input_widths() {
        let c = PwocConfig::default();
        assert_eq!(c.occ_input_channels(6), 128);
        assert_eq!(c.occ_input_channels(5), 145);
        assert_eq!(c.sf_input_channels(6), 171);
        assert_eq!(c.sf_input_channels(3), 207);
        assert_eq!(c.ctx_input_channels(), 36);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = PwocConfig { occ_channels: vec![8, 2], ..PwocConfig::default() };
        assert!(bad.validate().is_err());
        let bad = PwocConfig { ctx_dilations: vec![1, 2], ..PwocConfig::default() };
        assert!(bad.validate().is_err());
        let bad = PwocConfig { d_max: 0, ..PwocConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn context_count_closed_form() {
        let c = PwocConfig::default();
        let ctx: usize = c.layers().iter().filter(|(n, _)| n.starts_with("ctx.")).map(|(_, s)| s.param_count()).sum();
        let chans = [36, 128, 128, 128, 96, 64, 32, 4];
        let want: usize = chans.windows(2).map(|w| w[0] * w[1] * 9 + w[1]).sum();
        assert_eq!(ctx, want);
        let first = c.layers().into_iter().find(|(n, _)| n == "ctx.conv1").unwrap().1;
        assert_eq!(first.param_count(), 41_600);
    }

    #[test]
    fn wider_pyramid_has_more_parameters() {
        let c = PwocConfig::default();
        let wide = PwocConfig { pyramid_channels: 128, ..c.clone() };
        assert!(wide.param_count() > c.param_count());
    }
}
