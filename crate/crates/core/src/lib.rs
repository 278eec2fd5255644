//! Conservative high-dimensional decaying epsilon-greedy contextual bandits.
//!
//! Modules:
//! - [`estimators`]: Lasso (coordinate descent) and minimum-norm OLS solvers.
//! - [`policy`]: the CHD / HD / CHDO / HDO / ExpFirst / Naive decision rules.
//! - [`sim_env`]: synthetic sparse linear worlds, regret oracle, batch runner.
//! - [`replay`]: offline replay of logged recommendation data.
//! - [`bounds`]: closed-form regret-bound evaluators.

pub mod bounds;
pub mod error;
pub mod estimators;
pub mod policy;
pub mod replay;
pub mod sim_env;

pub use error::{Error, Result};
