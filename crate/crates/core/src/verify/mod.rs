//! Executable checks of the layer's structural properties: permutation
//! equivariance, reduction to the two sequential paradigms, the strictness
//! witness, message diversity, and gradient correctness.
//!
//! Every check returns a [`CheckReport`]. With `mutate` set, each check runs
//! against a deliberately broken configuration and is expected to fail.

mod diversity;
mod equivariance;
mod gradients;
mod reductions;
mod witness;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use diversity::{check_message_counts, check_message_diversity, history_divergence};
pub use equivariance::check_equivariance;
pub use gradients::{check_gradients, parameter_gradient_errors};
pub use reductions::{
    check_spatial_first_reduction, check_temporal_first_reduction, spatial_first_deviation,
    temporal_first_deviation, ReductionStack,
};
pub use witness::{
    check_strictness_witness, temporal_first_fit_residual, witness_layer, witness_output,
};

/// Direction of the comparison between deviation and tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// Pass when `deviation <= tolerance`.
    AtMost,
    /// Pass when `deviation > tolerance`.
    Above,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub bound: Bound,
    pub passed: bool,
    pub trials: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckReport {
    pub fn at_most(
        check: impl Into<String>,
        deviation: f64,
        tolerance: f64,
        trials: usize,
        seed: u64,
    ) -> Self {
        CheckReport {
            check: check.into(),
            max_deviation: deviation,
            tolerance,
            bound: Bound::AtMost,
            passed: deviation <= tolerance,
            trials,
            seed,
            note: None,
        }
    }

    pub fn above(
        check: impl Into<String>,
        deviation: f64,
        tolerance: f64,
        trials: usize,
        seed: u64,
    ) -> Self {
        CheckReport {
            check: check.into(),
            max_deviation: deviation,
            tolerance,
            bound: Bound::Above,
            passed: deviation > tolerance,
            trials,
            seed,
            note: None,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    Equivariance,
    Reductions,
    Witness,
    Diversity,
    Gradients,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Suite::All),
            "equivariance" => Ok(Suite::Equivariance),
            "reductions" => Ok(Suite::Reductions),
            "witness" => Ok(Suite::Witness),
            "diversity" => Ok(Suite::Diversity),
            "gradients" => Ok(Suite::Gradients),
            other => Err(Error::Config(format!(
                "unknown verification suite {other:?}"
            ))),
        }
    }
}

/// Runs one suite. Returned reports are in a fixed order.
pub fn run_suite(suite: Suite, seed: u64, mutate: bool) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Equivariance {
        out.push(check_equivariance(20, seed, mutate)?);
    }
    if all || suite == Suite::Reductions {
        out.push(check_spatial_first_reduction(5, seed, mutate)?);
        out.push(check_temporal_first_reduction(5, seed, mutate)?);
    }
    if all || suite == Suite::Witness {
        out.extend(check_strictness_witness(mutate)?);
    }
    if all || suite == Suite::Diversity {
        out.push(check_message_counts(50, seed, mutate)?);
        out.push(check_message_diversity(seed, mutate)?);
    }
    if all || suite == Suite::Gradients {
        out.extend(check_gradients(seed, mutate)?);
    }
    Ok(out)
}
