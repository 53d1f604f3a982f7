//! The scene flow network: configuration, parameters and forward pass.

mod config;
mod model;
mod params;

pub use config::{PwocConfig, BOTTOM_LEVEL, TOP_LEVEL};
pub use model::{masked_costs, FeaturePyramid, ForwardOutput, LevelOutput, PwocNet, View};
pub use params::{ModelParams, ParamVars};

use crate::error::Result;
use crate::flow::{OcclusionMap, SceneFlowField};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Inference result for one set of four views.
#[derive(Clone, Debug)]
pub struct Prediction<T> {
    /// Refined flow at the bottom pyramid level, scaled units.
    pub refined: SceneFlowField<T>,
    /// Full-resolution flow, scaled units.
    pub full_res: SceneFlowField<T>,
    /// Bottom-level occlusion maps in [`View::ALL`] order.
    pub occlusion: [OcclusionMap<T>; 3],
}

/// Runs the network without recording gradients for the parameters.
pub fn infer<T: Scalar>(config: &PwocConfig, params: &ModelParams<T>, images: [&Tensor<T>; 4]) -> Result<Prediction<T>> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let ims = images.map(|im| tape.constant(im.clone()));
    let out = PwocNet::new(config, &vars).forward(&mut tape, ims)?;
    let bottom = out.level(BOTTOM_LEVEL);
    let occ = |i: usize| OcclusionMap::new(tape.value(bottom.occ[i]).clone());
    Ok(Prediction {
        refined: SceneFlowField::new(tape.value(out.refined).clone())?,
        full_res: SceneFlowField::new(tape.value(out.full_res).clone())?,
        occlusion: [occ(0)?, occ(1)?, occ(2)?],
    })
}
