//! Drift/operator registry and the two integrators.

mod drift;
mod initial;
mod integrate;
mod operator;

pub use drift::{DriftKind, DriftModel};
pub use initial::InitialLaw;
pub use integrate::{
    convolution_variance, integrate_bounded, integrate_mild, restart_from,
    stochastic_convolution_increment, Model, Simulation, StepContext, StepObserver,
};
pub use operator::LinearOperator;
