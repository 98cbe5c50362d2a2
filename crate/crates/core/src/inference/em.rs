//! EM for the LCBN parameters and item parameters on a fixed hierarchy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::ebic::{bic, ebic};
use super::likelihood::{log_proportions, Engine};
use super::mstep::m_step;
use super::pem::best_of;
use super::{relative_change, FitControl};
use crate::error::Result;
use crate::hierarchy::Hierarchy;
use crate::lcbn::{proportions_on, update_t, LcbnParams, ProportionVector};
use crate::measurement::{ItemParams, MeasurementModel, QMatrix};

/// Bounds keeping fitted `t` strictly inside (0, 1).
const T_FLOOR: f64 = 1e-9;

/// Estimates on a fixed hierarchy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub hierarchy: Hierarchy,
    pub t: LcbnParams,
    pub params: ItemParams,
    /// Proportions over the permissible patterns implied by `t`.
    pub proportions: ProportionVector,
    /// Marginal log-likelihood at the returned parameters.
    pub loglik: f64,
    pub ebic: f64,
    pub bic: f64,
    /// Free item parameters.
    pub m_theta: usize,
    pub iterations: usize,
    pub converged: bool,
    pub restart: usize,
    /// Penalty chosen in the structure-learning stage, if any.
    pub lambda: Option<f64>,
    /// Log-likelihood at the start and after every iteration.
    pub trace: Vec<f64>,
    /// Expected pattern counts from the E-step that produced the returned `t`.
    pub pattern_weights: Vec<f64>,
    /// DINA items whose fitted parameters violate `1 - s > g`.
    pub monotonicity_violations: Vec<usize>,
}

/// Structured EM on the hierarchy `h`, keeping the restart with the highest
/// final log-likelihood.
pub fn lcbn_em_fit(
    data: &Dataset,
    q: &QMatrix,
    h: &Hierarchy,
    model: MeasurementModel,
    control: &FitControl,
) -> Result<FitResult> {
    lcbn_em_fit_with(data, q, h, model, control, None)
}

/// As [`lcbn_em_fit`], adding one extra start from `warm` item parameters.
pub fn lcbn_em_fit_with(
    data: &Dataset,
    q: &QMatrix,
    h: &Hierarchy,
    model: MeasurementModel,
    control: &FitControl,
    warm: Option<&ItemParams>,
) -> Result<FitResult> {
    if q.k() != h.k() {
        return Err(crate::Error::Dimension(format!(
            "Q-matrix has {} attributes, hierarchy has {}",
            q.k(),
            h.k()
        )));
    }
    let patterns = h.permissible_patterns_capped(control.enumeration_cap)?;
    let engine = Engine::new(data, q, patterns)?;
    let restarts = control.restarts.max(1);
    let mut starts: Vec<(usize, ItemParams)> = (0..restarts)
        .map(|r| (r, model.random_init(q, &mut control.rng(2, r))))
        .collect();
    if let Some(w) = warm {
        starts.push((restarts, w.clone()));
    }
    let fits: Vec<Result<FitResult>> = starts
        .into_par_iter()
        .map(|(r, init)| run(&engine, h, init, control, r))
        .collect();
    best_of(fits, |f| f.loglik)
}

fn run(engine: &Engine<'_>, h: &Hierarchy, init: ItemParams, control: &FitControl, restart: usize) -> Result<FitResult> {
    let k = h.k();
    let mut params = init;
    let mut t = vec![0.5; k];
    let mut p = proportions_on(&t, h, engine.patterns.clone());
    let mut post = engine.e_step(&params, &log_proportions(&p))?;
    let mut trace = vec![post.loglik];
    let mut weights = post.pattern_weights();
    let mut converged = false;

    for _ in 0..control.max_iter {
        weights = post.pattern_weights();
        let next_t: Vec<f64> = update_t(h, &engine.patterns, &weights, &t)
            .into_iter()
            .map(|x| x.clamp(T_FLOOR, 1.0 - T_FLOOR))
            .collect();
        let next_params = m_step(engine, &post.phi, &params);
        let next_p = proportions_on(&next_t, h, engine.patterns.clone());
        let next_post = engine.e_step(&next_params, &log_proportions(&next_p))?;
        let change = relative_change(post.loglik, next_post.loglik);
        trace.push(next_post.loglik);
        t = next_t;
        params = next_params;
        p = next_p;
        post = next_post;
        if change < control.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("structured EM stopped after {} iterations", control.max_iter);
    }

    let n = engine.data.n();
    let m_theta = params.free_parameters(engine.q);
    let monotonicity_violations = match &params {
        ItemParams::Dina(d) => d.monotonicity_violations(),
        _ => Vec::new(),
    };
    if !monotonicity_violations.is_empty() {
        log::warn!("fitted DINA items violate 1 - s > g: {monotonicity_violations:?}");
    }
    Ok(FitResult {
        hierarchy: h.clone(),
        t: LcbnParams::new(t)?,
        loglik: post.loglik,
        ebic: ebic(post.loglik, k, m_theta, n, k)?,
        bic: bic(post.loglik, k + m_theta, n),
        m_theta,
        params,
        proportions: p,
        iterations: trace.len() - 1,
        converged,
        restart,
        lambda: None,
        trace,
        pattern_weights: weights,
        monotonicity_violations,
    })
}
