//! Item-parameter M-steps.

use ndarray::Array2;

use super::likelihood::Engine;
use crate::measurement::{
    clamp_theta, local_mask, DinaParams, GdinaParams, ItemParams, Link, MainEffectParams, THETA_FLOOR,
};

/// Denominators below this leave the previous value in place.
const MIN_MASS: f64 = 1e-10;

/// Expected correct and total observed counts per item and local mask.
struct GroupStats {
    correct: Vec<Vec<f64>>,
    total: Vec<Vec<f64>>,
}

fn group_stats(engine: &Engine<'_>, phi: &Array2<f64>) -> GroupStats {
    let w1 = engine.data.ones().t().dot(phi);
    let w0 = engine.data.zeros().t().dot(phi);
    let k = engine.q.k();
    let mut correct = Vec::with_capacity(engine.q.items());
    let mut total = Vec::with_capacity(engine.q.items());
    for j in 0..engine.q.items() {
        let attrs = engine.q.required(j);
        let size = 1usize << attrs.len();
        let mut c = vec![0.0; size];
        let mut t = vec![0.0; size];
        for (a, &code) in engine.patterns.codes().iter().enumerate() {
            let s = local_mask(k, code, &attrs);
            c[s] += w1[[j, a]];
            t[s] += w1[[j, a]] + w0[[j, a]];
        }
        correct.push(c);
        total.push(t);
    }
    GroupStats { correct, total }
}

pub(crate) fn m_step(engine: &Engine<'_>, phi: &Array2<f64>, current: &ItemParams) -> ItemParams {
    match current {
        ItemParams::Dina(p) => ItemParams::Dina(dina_step(engine, phi, p)),
        ItemParams::Gdina(p) => ItemParams::Gdina(gdina_step(engine, phi, p)),
        ItemParams::MainEffect(p) => ItemParams::MainEffect(main_effect_step(engine, phi, p)),
    }
}

/// Closed-form DINA update restricted to observed cells.
fn dina_step(engine: &Engine<'_>, phi: &Array2<f64>, current: &DinaParams) -> DinaParams {
    // Capable posterior mass per subject and Q-row class.
    let capable = phi.dot(&engine.gamma.t());
    let s1 = engine.data.ones().t().dot(&capable);
    let s0 = engine.data.zeros().t().dot(&capable);
    let mut slip = current.slip.clone();
    let mut guess = current.guess.clone();
    for j in 0..engine.q.items() {
        let c = engine.item_class[j];
        let (cap1, cap0) = (s1[[j, c]], s0[[j, c]]);
        let inc1 = (engine.total_ones[j] - cap1).max(0.0);
        let inc0 = (engine.total_zeros[j] - cap0).max(0.0);
        if cap1 + cap0 > MIN_MASS {
            slip[j] = clamp_theta(cap0 / (cap1 + cap0));
        }
        if inc1 + inc0 > MIN_MASS {
            guess[j] = clamp_theta(inc1 / (inc1 + inc0));
        }
    }
    DinaParams { slip, guess }
}

/// Group-mean update of the all-effect model followed by conversion back to
/// effect coefficients.
fn gdina_step(engine: &Engine<'_>, phi: &Array2<f64>, current: &GdinaParams) -> GdinaParams {
    let stats = group_stats(engine, phi);
    let probs = (0..engine.q.items())
        .map(|j| {
            let previous = current.group_probs(j);
            stats.correct[j]
                .iter()
                .zip(&stats.total[j])
                .zip(previous)
                .map(|((&c, &t), prev)| if t > MIN_MASS { clamp_theta(c / t) } else { clamp_theta(prev) })
                .collect()
        })
        .collect();
    GdinaParams::from_group_probs(current.link, probs)
}

fn main_effect_probs(link: Link, intercept: f64, main: &[f64]) -> Vec<f64> {
    (0..1usize << main.len())
        .map(|s| {
            let eta = intercept + (0..main.len()).filter(|i| s & (1 << i) != 0).map(|i| main[i]).sum::<f64>();
            link.apply(eta)
        })
        .collect()
}

fn item_objective(probs: &[f64], correct: &[f64], total: &[f64]) -> f64 {
    let mut value = 0.0;
    for ((&p, &c), &t) in probs.iter().zip(correct).zip(total) {
        if !(p >= THETA_FLOOR && p <= 1.0 - THETA_FLOOR) {
            return f64::NEG_INFINITY;
        }
        value += c * p.ln() + (t - c) * (1.0 - p).ln();
    }
    value
}

/// One projected-gradient ascent step per item with a backtracking step
/// size. Main effects stay nonnegative and probabilities stay inside
/// `[THETA_FLOOR, 1 - THETA_FLOOR]`.
fn main_effect_step(engine: &Engine<'_>, phi: &Array2<f64>, current: &MainEffectParams) -> MainEffectParams {
    let stats = group_stats(engine, phi);
    let link = current.link;
    let mut next = current.clone();
    for j in 0..engine.q.items() {
        let (correct, total) = (&stats.correct[j], &stats.total[j]);
        let mass: f64 = total.iter().sum();
        if mass <= MIN_MASS {
            continue;
        }
        let m = current.main[j].len();
        let b0 = current.intercept[j];
        let b = &current.main[j];
        let probs = main_effect_probs(link, b0, b);
        let base = item_objective(&probs, correct, total);
        if !base.is_finite() {
            continue;
        }
        // d objective / d eta for each group.
        let d_eta: Vec<f64> = probs
            .iter()
            .zip(correct)
            .zip(total)
            .map(|((&p, &c), &t)| match link {
                Link::Logit => c - t * p,
                Link::Identity => (c - t * p) / (p * (1.0 - p)),
            })
            .collect();
        let g0: f64 = d_eta.iter().sum();
        let g: Vec<f64> = (0..m)
            .map(|i| d_eta.iter().enumerate().filter(|(s, _)| s & (1 << i) != 0).map(|(_, &d)| d).sum())
            .collect();
        let mut step = 1.0 / mass;
        let candidate = |step: f64| {
            let c0 = b0 + step * g0;
            let c: Vec<f64> = (0..m).map(|i| (b[i] + step * g[i]).max(0.0)).collect();
            let value = item_objective(&main_effect_probs(link, c0, &c), correct, total);
            (c0, c, value)
        };
        let mut best = candidate(step);
        if best.2 > base {
            // Grow while the objective keeps improving.
            for _ in 0..30 {
                let trial = candidate(step * 2.0);
                if trial.2 > best.2 {
                    step *= 2.0;
                    best = trial;
                } else {
                    break;
                }
            }
        } else {
            for _ in 0..40 {
                step *= 0.5;
                best = candidate(step);
                if best.2 > base {
                    break;
                }
            }
        }
        if best.2 > base {
            next.intercept[j] = best.0;
            next.main[j] = best.1;
        }
    }
    next
}
