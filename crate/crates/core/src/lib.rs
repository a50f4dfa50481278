//! Interval-censored Weibull regression with regression models on the
//! scale, shape and gamma-frailty dispersion parameters.

pub mod data;
pub mod error;
pub mod estimator;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod numeric;
pub mod selection;
pub mod simulation;
pub mod turnbull;

pub use data::Dataset;
pub use error::{Error, Result};
pub use estimator::{fit, fit_from, FitOptions, FitResult};
pub use model::{evaluate_parameters, Component, CovariateRow, ModelSpec, ModelType, ParamTriple, Theta};
