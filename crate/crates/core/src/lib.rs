//! Learning hidden unit contributions (LHUC) for feedforward networks.
//!
//! Speaker-independent training, speaker-adaptive training with stochastic
//! SI/SD routing (SAT-LHUC), unsupervised test-time adaptation and
//! factorised speaker x environment transforms, plus the synthetic tasks used
//! to exercise them.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below name the double-precision instantiations used by
//! the experiments.

pub mod adapter;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod objective;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use adapter::{AdaptConfig, Amplitudes, FactorisedConfig, Metrics};
pub use data::{FrameDataset, Targets};
pub use error::{LhucError, Result};
pub use model::{
    ClusterId, EffectiveScale, LhucTransform, NetworkParams, OutputKind, ReparamKind, Scaling,
    TransformBank,
};
pub use scalar::Scalar;
pub use tensor::{Matrix, Vector};
pub use trainer::{Granularity, NewbobConfig, SatConfig, TrainConfig};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Vector64 = Vector<f64>;
pub type Vector32 = Vector<f32>;
pub type Network64 = NetworkParams<f64>;
pub type Network32 = NetworkParams<f32>;
pub type Transform64 = LhucTransform<f64>;
pub type Transform32 = LhucTransform<f32>;
pub type Bank64 = TransformBank<f64>;
pub type Bank32 = TransformBank<f32>;
pub type Dataset64 = FrameDataset<f64>;
pub type Dataset32 = FrameDataset<f32>;
