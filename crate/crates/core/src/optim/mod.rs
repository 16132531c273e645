//! Fitting recency-bias parameters to behavioral targets.

mod adam;
mod fit;
mod gradient;
mod objective;
mod sweep;

pub use adam::Adam;
pub use fit::{
    cross_stimulus_eval, minimize, optimize, stratified_split, FitReport, LossCurves, OptimConfig,
    SeedFailure, SeedFit,
};
pub use gradient::{estimate_gradient, GradientMethod};
pub use objective::{
    objective, weighted_squared_error, BehavioralObjective, FnObjective, Objective,
};
pub use sweep::{layer_sweep, write_layer_sweep_csv, LayerSweepRow};
