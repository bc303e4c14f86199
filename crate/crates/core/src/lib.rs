//! Missing-modality completion with a conditioned latent diffusion model and
//! counterfactual debiasing for multimodal recommendation.
//!
//! The numeric core is generic over [`Scalar`]; training runs in `f32` and
//! the `f64` instantiation backs tight gradient verification.

pub mod cfmr;
pub mod dataset;
pub mod error;
pub mod io;
pub mod mddc;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type Graph32 = numerics::Graph<f32>;
pub type Graph64 = numerics::Graph<f64>;
pub type ParamStore32 = numerics::ParamStore<f32>;
pub type ParamStore64 = numerics::ParamStore<f64>;
pub type Mddc32 = mddc::MddcModel<f32>;
pub type Mddc64 = mddc::MddcModel<f64>;
pub type Recommender32 = cfmr::Recommender<f32>;
pub type Recommender64 = cfmr::Recommender<f64>;
pub type Modicf32 = training::ModelState<f32>;
pub type Modicf64 = training::ModelState<f64>;
