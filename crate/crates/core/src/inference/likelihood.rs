//! Observed-data likelihood and posterior pattern responsibilities.

use ndarray::{Array1, Array2, Axis};

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::lcbn::ProportionVector;
use crate::measurement::{ItemParams, QMatrix};
use crate::pattern::PatternSet;

/// Posterior pattern probabilities `phi[i][a]` for each subject.
#[derive(Clone, Debug)]
pub struct Responsibilities {
    pub patterns: PatternSet,
    pub phi: Array2<f64>,
    pub loglik: f64,
}

impl Responsibilities {
    /// Expected number of subjects per pattern.
    pub fn pattern_weights(&self) -> Vec<f64> {
        self.phi.sum_axis(Axis(0)).to_vec()
    }
}

/// Precomputed structure for repeated likelihood evaluation on one
/// (data, Q, pattern set) triple.
pub(crate) struct Engine<'a> {
    pub data: &'a Dataset,
    pub q: &'a QMatrix,
    pub patterns: PatternSet,
    /// Distinct Q rows.
    pub classes: Vec<u32>,
    pub item_class: Vec<usize>,
    /// `C x |A|` capability indicator per class.
    pub gamma: Array2<f64>,
    /// Observed correct and incorrect counts per item.
    pub total_ones: Array1<f64>,
    pub total_zeros: Array1<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(data: &'a Dataset, q: &'a QMatrix, patterns: PatternSet) -> Result<Self> {
        if data.items() != q.items() {
            return Err(Error::Dimension(format!(
                "responses have {} items, Q-matrix has {} rows",
                data.items(),
                q.items()
            )));
        }
        if patterns.k() != q.k() {
            return Err(Error::Dimension(format!(
                "patterns have {} attributes, Q-matrix has {}",
                patterns.k(),
                q.k()
            )));
        }
        let mut classes: Vec<u32> = q.rows().to_vec();
        classes.sort_unstable();
        classes.dedup();
        let item_class = q
            .rows()
            .iter()
            .map(|r| classes.binary_search(r).expect("class present"))
            .collect();
        let gamma = Array2::from_shape_fn((classes.len(), patterns.len()), |(c, a)| {
            let q_row = classes[c];
            (patterns.codes()[a] & q_row == q_row) as u8 as f64
        });
        Ok(Self {
            data,
            q,
            total_ones: data.ones().sum_axis(Axis(0)),
            total_zeros: data.zeros().sum_axis(Axis(0)),
            patterns,
            classes,
            item_class,
            gamma,
        })
    }

    /// `N x |A|` matrix of per-subject log-likelihoods given each pattern.
    pub fn log_lik_matrix(&self, params: &ItemParams) -> Result<Array2<f64>> {
        if params.items() != self.q.items() {
            return Err(Error::Dimension(format!(
                "{} item parameter sets for {} items",
                params.items(),
                self.q.items()
            )));
        }
        match params {
            ItemParams::Dina(p) => {
                let (j_count, c_count) = (self.q.items(), self.classes.len());
                let mut base1 = Array1::zeros(j_count);
                let mut base0 = Array1::zeros(j_count);
                let mut a1 = Array2::zeros((j_count, c_count));
                let mut a0 = Array2::zeros((j_count, c_count));
                for j in 0..j_count {
                    let (s, g) = (p.slip[j], p.guess[j]);
                    for v in [s, g] {
                        if !(v > 0.0 && v < 1.0) {
                            return Err(Error::Numerical(format!("item {j} parameter {v} outside (0, 1)")));
                        }
                    }
                    base1[j] = g.ln();
                    base0[j] = (1.0 - g).ln();
                    let c = self.item_class[j];
                    a1[[j, c]] = (1.0 - s).ln() - g.ln();
                    a0[[j, c]] = s.ln() - (1.0 - g).ln();
                }
                let (x1, x0) = (self.data.ones(), self.data.zeros());
                let base = x1.dot(&base1) + x0.dot(&base0);
                let d = x1.dot(&a1) + x0.dot(&a0);
                let mut l = d.dot(&self.gamma);
                l += &base.insert_axis(Axis(1));
                Ok(l)
            }
            _ => {
                let theta = params.theta_table(self.q, &self.patterns);
                if let Some(&bad) = theta.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
                    return Err(Error::Numerical(format!("response probability {bad} outside (0, 1)")));
                }
                let log_t = theta.mapv(f64::ln);
                let log_f = theta.mapv(|v| (1.0 - v).ln());
                Ok(self.data.ones().dot(&log_t) + self.data.zeros().dot(&log_f))
            }
        }
    }

    pub fn e_step(&self, params: &ItemParams, log_p: &[f64]) -> Result<Responsibilities> {
        let l = self.log_lik_matrix(params)?;
        let (phi, loglik) = posterior(l, log_p)?;
        Ok(Responsibilities {
            patterns: self.patterns.clone(),
            phi,
            loglik,
        })
    }

    pub fn loglik(&self, params: &ItemParams, log_p: &[f64]) -> Result<f64> {
        let l = self.log_lik_matrix(params)?;
        let mut total = 0.0;
        for row in l.rows() {
            total += log_sum_exp(row.iter().zip(log_p).map(|(&x, &lp)| x + lp));
        }
        if !total.is_finite() {
            return Err(Error::Numerical("log-likelihood is not finite".into()));
        }
        Ok(total)
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Normalize `l + log_p` row-wise in place, returning the posterior and the
/// summed log normalizers.
fn posterior(mut l: Array2<f64>, log_p: &[f64]) -> Result<(Array2<f64>, f64)> {
    let mut total = 0.0;
    for mut row in l.rows_mut() {
        let mut m = f64::NEG_INFINITY;
        for (x, &lp) in row.iter_mut().zip(log_p) {
            *x += lp;
            m = m.max(*x);
        }
        if !m.is_finite() {
            return Err(Error::Numerical("subject has zero likelihood under every pattern".into()));
        }
        let mut s = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            s += *x;
        }
        let inv = 1.0 / s;
        row.mapv_inplace(|x| x * inv);
        total += m + s.ln();
    }
    Ok((l, total))
}

pub(crate) fn log_proportions(p: &ProportionVector) -> Vec<f64> {
    p.probs().iter().map(|&x| x.ln()).collect()
}

/// Marginal log-likelihood of `data` under item parameters and pattern
/// proportions, summing over observed cells only.
pub fn marginal_loglik(params: &ItemParams, q: &QMatrix, p: &ProportionVector, data: &Dataset) -> Result<f64> {
    let engine = Engine::new(data, q, p.patterns().clone())?;
    engine.loglik(params, &log_proportions(p))
}

/// Posterior probabilities of each pattern for each subject.
pub fn responsibilities(
    params: &ItemParams,
    q: &QMatrix,
    p: &ProportionVector,
    data: &Dataset,
) -> Result<Responsibilities> {
    let engine = Engine::new(data, q, p.patterns().clone())?;
    engine.e_step(params, &log_proportions(p))
}
