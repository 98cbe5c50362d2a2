//! Likelihood evaluation and the two estimation stages: penalized EM over
//! all patterns to learn the hierarchy, then structured EM for the LCBN.

mod data;
mod ebic;
mod em;
mod likelihood;
mod mstep;
mod pem;
mod select;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use data::{Dataset, MISSING};
pub use ebic::{bic, ebic, ln_binomial};
pub use em::{lcbn_em_fit, lcbn_em_fit_with, FitResult};
pub use likelihood::{marginal_loglik, responsibilities, Responsibilities};
pub use pem::{pem_fit, penalized_weights, truncated_log, PemFit, PemIteration};
pub use select::{learn_hierarchy, two_step_fit, GridPoint, HierarchySelection, TwoStepResult};

use crate::hierarchy::DEFAULT_ENUMERATION_CAP;

/// The default penalty grid: ten evenly spaced values from -0.4 to -4.0.
pub fn default_lambda_grid() -> Vec<f64> {
    (1..=10).map(|i| -f64::from(4 * i) / 10.0).collect()
}

/// Iteration limits, restarts and tuning constants shared by both stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitControl {
    pub max_iter: usize,
    /// Stop when the relative change of the objective falls below this.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Selection threshold for pattern proportions; `1 / (2N)` when unset.
    pub rho: Option<f64>,
    /// Floor for the penalized proportion update.
    pub clamp: f64,
    pub lambda_grid: Vec<f64>,
    pub enumeration_cap: usize,
}

impl Default for FitControl {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-6,
            restarts: 5,
            seed: 0,
            rho: None,
            clamp: 0.01,
            lambda_grid: default_lambda_grid(),
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

impl FitControl {
    pub fn rho_for(&self, n: usize) -> f64 {
        self.rho.unwrap_or(1.0 / (2.0 * n as f64))
    }

    /// Independent generator for restart `restart` of stage `stage`.
    pub(crate) fn rng(&self, stage: u64, restart: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stage << 32 | restart as u64);
        rng
    }
}

pub(crate) fn relative_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / old.abs().max(1e-300)
}
