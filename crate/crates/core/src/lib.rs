//! Counterfactual explanations for molecular property regression, with
//! uncertainty estimates used to filter untruthful counterfactuals.

pub mod molgraph;
pub mod calibrate;
pub mod counterfactual;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod uq;
