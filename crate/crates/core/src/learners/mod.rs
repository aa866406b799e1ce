//! Learners used by the attacks and the utility games.

mod forest;
mod linear;

pub use forest::{fit_forest, Forest, ForestParams};
pub use linear::{fit_linear, posterior_density, LinearAttackModel, RIDGE_JITTER, SIGMA_FLOOR};
