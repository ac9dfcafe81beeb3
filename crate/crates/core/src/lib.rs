// Negated comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod scalar;
pub mod gclass;
pub mod corrector;
pub mod effective;
pub mod pde;
pub mod io;
pub mod experiment;

pub type Sample = env::EnvironmentSample<f64>;
pub type Nonlinearity = gclass::NonlinearitySpec<f64>;
pub type Profile = corrector::CorrectorProfile<f64>;
pub type Curve = effective::EffectiveCurve<f64>;
pub type Glue = effective::GlueConstruction<f64>;
pub type Trace = pde::SimulationTrace<f64>;
