//! Mixed-cumulant data model, Hermite expansions of the population loss,
//! online SGD learners and the scaling-law harness built on them.

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod hermite;
pub mod mcm;
pub mod ode;
pub mod perceptron;
pub mod sampling;
pub mod stats;
pub mod two_layer;
pub mod vecops;

pub use error::{Error, Result};
pub use hermite::{Activation, HermiteConvention, HermiteSeries};
pub use mcm::{CensorMode, LabeledSample, McmParams, McmSampler, SingleSpike, SpikeSet};
pub use ode::{OdeTrajectory, SearchOdeCoeffs};
pub use perceptron::{OverlapTrace, PerceptronState, RecoveryReport, SgdConfig};
pub use sampling::{LatentCoupling, Purpose, RngHandle};
