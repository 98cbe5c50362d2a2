//! Penalty selection by EBIC and the two-step estimator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::ebic::{bic, ebic};
use super::em::{lcbn_em_fit_with, FitResult};
use super::pem::{pem_fit, PemFit};
use super::FitControl;
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::measurement::{MeasurementModel, QMatrix};

/// Summary of the penalized fit at one penalty value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub selected: usize,
    pub loglik: f64,
    pub ebic: Option<f64>,
    pub bic: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

/// Outcome of the structure-learning stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HierarchySelection {
    pub lambda: f64,
    pub ebic: f64,
    pub bic: f64,
    /// Hierarchy reconstructed from the selected patterns; `None` when the
    /// selected patterns do not define a DAG (see `diagnostic`).
    pub hierarchy: Option<Hierarchy>,
    pub diagnostic: Option<String>,
    pub step1: PemFit,
    pub grid: Vec<GridPoint>,
}

/// Run the penalized EM on every grid value and keep the EBIC minimizer,
/// preferring the smaller selected set on ties.
pub fn learn_hierarchy(
    data: &Dataset,
    q: &QMatrix,
    model: MeasurementModel,
    control: &FitControl,
) -> Result<HierarchySelection> {
    if control.lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("penalty grid is empty".into()));
    }
    let m_theta = model.free_parameters(q);
    let n = data.n();
    let fits: Vec<(f64, Result<(PemFit, f64, f64)>)> = control
        .lambda_grid
        .par_iter()
        .map(|&lambda| {
            let scored = pem_fit(data, q, model, lambda, control).and_then(|fit| {
                let m_p = fit.selected.len().saturating_sub(1);
                let e = ebic(fit.selected_loglik, m_p, m_theta, n, q.k())?;
                let b = bic(fit.selected_loglik, m_p + m_theta, n);
                Ok((fit, e, b))
            });
            (lambda, scored)
        })
        .collect();

    let mut grid = Vec::with_capacity(fits.len());
    let mut best: Option<(PemFit, f64, f64)> = None;
    let mut last_err = None;
    for (lambda, scored) in fits {
        match scored {
            Ok((fit, e, b)) => {
                grid.push(GridPoint {
                    lambda,
                    selected: fit.selected.len(),
                    loglik: fit.selected_loglik,
                    ebic: Some(e),
                    bic: Some(b),
                    converged: fit.converged,
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some((bf, be, _)) => e < *be || (e == *be && fit.selected.len() < bf.selected.len()),
                };
                if better && e.is_finite() {
                    best = Some((fit, e, b));
                }
            }
            Err(err) => {
                log::warn!("penalized fit at lambda = {lambda} failed: {err}");
                grid.push(GridPoint {
                    lambda,
                    selected: 0,
                    loglik: f64::NAN,
                    ebic: None,
                    bic: None,
                    converged: false,
                    error: Some(err.to_string()),
                });
                last_err = Some(err);
            }
        }
    }
    let (step1, e, b) = match best {
        Some(best) => best,
        None => {
            return Err(last_err.unwrap_or_else(|| Error::Numerical("no grid point produced a finite EBIC".into())))
        }
    };
    let (hierarchy, diagnostic) = match Hierarchy::from_patterns(&step1.selected) {
        Ok(h) => (Some(h), None),
        Err(err) => (None, Some(err.to_string())),
    };
    Ok(HierarchySelection {
        lambda: step1.lambda,
        ebic: e,
        bic: b,
        hierarchy,
        diagnostic,
        step1,
        grid,
    })
}

/// Both stages together.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwoStepResult {
    pub selection: HierarchySelection,
    pub fit: FitResult,
}

/// Learn the hierarchy, then fit the LCBN on it. The step-one item
/// parameters seed one extra start of the second stage.
pub fn two_step_fit(
    data: &Dataset,
    q: &QMatrix,
    model: MeasurementModel,
    control: &FitControl,
) -> Result<TwoStepResult> {
    let selection = learn_hierarchy(data, q, model, control)?;
    let h = match &selection.hierarchy {
        Some(h) => h.clone(),
        None => Hierarchy::from_patterns(&selection.step1.selected)?,
    };
    let mut fit = lcbn_em_fit_with(data, q, &h, model, control, Some(&selection.step1.params))?;
    fit.lambda = Some(selection.lambda);
    Ok(TwoStepResult { selection, fit })
}
