//! Scene flow estimation from two stereo pairs with a coarse-to-fine
//! pyramid network, warping, occlusion-masked cost volumes and a small
//! reverse-mode autodiff engine underneath.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Axis, Error, Result};
pub use ops::ConvSpec;
pub use scalar::Scalar;
pub use tape::{Backward, Gradients, Tape, Var};
pub use tensor::{Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type Params32 = net::ModelParams<f32>;
pub type Params64 = net::ModelParams<f64>;
pub type Sample32 = train::Sample<f32>;
pub type SceneFlow32 = flow::SceneFlowField<f32>;
