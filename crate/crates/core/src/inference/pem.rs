//! Penalized EM over all `2^K` patterns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::likelihood::{log_proportions, Engine};
use super::mstep::m_step;
use super::{relative_change, FitControl};
use crate::error::{Error, Result};
use crate::lcbn::ProportionVector;
use crate::measurement::{ItemParams, MeasurementModel, QMatrix};
use crate::pattern::PatternSet;

/// `ln(max(x, rho))`.
#[inline]
pub fn truncated_log(x: f64, rho: f64) -> f64 {
    if x > rho {
        x.ln()
    } else {
        rho.ln()
    }
}

/// Unnormalized penalized proportion update `max(c, lambda + n_alpha)`.
pub fn penalized_weights(weights: &[f64], lambda: f64, clamp: f64) -> Vec<f64> {
    weights.iter().map(|&n| (lambda + n).max(clamp)).collect()
}

fn penalty(p: &[f64], lambda: f64, rho: f64) -> f64 {
    lambda * p.iter().map(|&x| truncated_log(x, rho)).sum::<f64>()
}

/// One iteration of the penalized EM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PemIteration {
    pub objective: f64,
    pub loglik: f64,
    /// Patterns whose update hit the floor `c`.
    pub clamped: usize,
    /// The set of floored patterns differs from the previous iteration.
    pub clamp_changed: bool,
    /// Some unfloored pattern sat at or below `rho` before or after the update.
    pub truncation_active: bool,
}

impl PemIteration {
    /// Iterations on which the objective is guaranteed not to decrease.
    pub fn is_clamp_free(&self) -> bool {
        !self.clamp_changed && !self.truncation_active
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PemFit {
    pub lambda: f64,
    pub rho: f64,
    pub params: ItemParams,
    /// Proportions over all `2^K` patterns.
    pub proportions: ProportionVector,
    /// Patterns with proportion above `rho`.
    pub selected: PatternSet,
    /// Log-likelihood at the final iterate.
    pub loglik: f64,
    /// Log-likelihood with proportions renormalized on the selected set.
    pub selected_loglik: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restart: usize,
    pub trace: Vec<PemIteration>,
}

/// Penalized EM for one penalty value, keeping the restart with the highest
/// final penalized objective.
pub fn pem_fit(
    data: &Dataset,
    q: &QMatrix,
    model: MeasurementModel,
    lambda: f64,
    control: &FitControl,
) -> Result<PemFit> {
    if !(lambda < 0.0) {
        return Err(Error::InvalidArgument(format!("penalty must be negative, got {lambda}")));
    }
    let rho = control.rho_for(data.n());
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold rho = {rho} is outside (0, 1)")));
    }
    let patterns = PatternSet::full(q.k(), control.enumeration_cap)?;
    let engine = Engine::new(data, q, patterns)?;
    let restarts = control.restarts.max(1);
    let fits: Vec<Result<PemFit>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let init = model.random_init(q, &mut control.rng(1, r));
            run(&engine, init, lambda, rho, control, r)
        })
        .collect();
    best_of(fits, |f| f.objective)
}

pub(crate) fn best_of<T>(fits: Vec<Result<T>>, score: impl Fn(&T) -> f64) -> Result<T> {
    let mut best: Option<T> = None;
    let mut last_err = None;
    for fit in fits {
        match fit {
            Ok(f) => {
                if best.as_ref().map_or(true, |b| score(&f) > score(b)) {
                    best = Some(f);
                }
            }
            Err(e) => {
                log::debug!("restart failed: {e}");
                last_err = Some(e);
            }
        }
    }
    best.ok_or_else(|| last_err.expect("at least one restart"))
}

fn run(
    engine: &Engine<'_>,
    init: ItemParams,
    lambda: f64,
    rho: f64,
    control: &FitControl,
    restart: usize,
) -> Result<PemFit> {
    let size = engine.patterns.len();
    let mut params = init;
    let mut p = vec![1.0 / size as f64; size];
    let mut post = engine.e_step(&params, &log_p(&p))?;
    let mut objective = post.loglik + penalty(&p, lambda, rho);
    let mut clamped_prev = vec![false; size];
    let mut trace = Vec::new();
    let mut converged = false;

    for _ in 0..control.max_iter {
        let weights = post.pattern_weights();
        let clamped: Vec<bool> = weights.iter().map(|&n| lambda + n <= control.clamp).collect();
        let delta = penalized_weights(&weights, lambda, control.clamp);
        let total: f64 = delta.iter().sum();
        let next_p: Vec<f64> = delta.iter().map(|&d| d / total).collect();
        let next_params = m_step(engine, &post.phi, &params);

        let truncation_active = (0..size).any(|a| !clamped[a] && (p[a] <= rho || next_p[a] <= rho));
        let clamp_changed = clamped != clamped_prev;

        post = engine.e_step(&next_params, &log_p(&next_p))?;
        let next_objective = post.loglik + penalty(&next_p, lambda, rho);
        trace.push(PemIteration {
            objective: next_objective,
            loglik: post.loglik,
            clamped: clamped.iter().filter(|&&c| c).count(),
            clamp_changed,
            truncation_active,
        });
        let change = relative_change(objective, next_objective);
        params = next_params;
        p = next_p;
        objective = next_objective;
        clamped_prev = clamped;
        if change < control.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("penalized EM (lambda = {lambda}) stopped after {} iterations", control.max_iter);
    }

    let proportions = ProportionVector::normalized(engine.patterns.clone(), p)?;
    let selected = proportions.support(rho);
    let selected_loglik = if selected.is_empty() {
        f64::NEG_INFINITY
    } else {
        let weights: Vec<f64> = selected.codes().iter().map(|&c| proportions.get_code(c)).collect();
        let restricted = ProportionVector::normalized(selected.clone(), weights)?;
        let sub = Engine::new(engine.data, engine.q, selected.clone())?;
        sub.loglik(&params, &log_proportions(&restricted))?
    };
    Ok(PemFit {
        lambda,
        rho,
        params,
        proportions,
        selected,
        loglik: post.loglik,
        selected_loglik,
        objective,
        iterations: trace.len(),
        converged,
        restart,
        trace,
    })
}

fn log_p(p: &[f64]) -> Vec<f64> {
    p.iter().map(|&x| x.ln()).collect()
}
