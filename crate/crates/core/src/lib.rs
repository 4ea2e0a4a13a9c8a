//! Simulation of ECM memristive crossbars that imprint patterns through the
//! transition from short-term to long-term plasticity, plus the classifiers
//! and experiment drivers built on top of them.

pub mod crossbar;
pub mod dataset;
pub mod device;
pub mod elm;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod seed;
pub mod signature;

pub use crossbar::{ConductanceMap, Crossbar, VariabilitySpec};
pub use dataset::{load_mnist, make_glyphs, NoisySampler, NoisySequence, Pattern, PatternSet, PatternSource, Split};
pub use device::{DeviceParams, DeviceState};
pub use elm::{ActivationBank, ElmConfig, ElmSystem, FirstLayerMode, ReadoutModel, Regularization};
pub use error::{Error, ErrorClass, Result};
pub use experiment::{ExperimentConfig, SweepAxis, SweepResult, TaskData};
pub use signature::{ReadTiming, SignatureRegister};
