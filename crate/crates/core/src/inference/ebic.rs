use crate::error::{Error, Result};

/// `ln C(n, k)` through the log-gamma function.
pub fn ln_binomial(n: f64, k: f64) -> f64 {
    libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0)
}

/// Extended BIC:
/// `-2 loglik + (m_p + m_theta) ln N + 2 ln C(2^K - 1 + m_theta, m_p + m_theta)`.
pub fn ebic(loglik: f64, m_p: usize, m_theta: usize, n: usize, k: usize) -> Result<f64> {
    let selected = m_p + m_theta;
    let candidates = (2f64.powi(k as i32) - 1.0) + m_theta as f64;
    if selected as f64 > candidates {
        return Err(Error::Domain {
            selected,
            candidates: candidates as usize,
        });
    }
    Ok(bic(loglik, m_p + m_theta, n) + 2.0 * ln_binomial(candidates, selected as f64))
}

/// `-2 loglik + m ln N`.
pub fn bic(loglik: f64, parameters: usize, n: usize) -> f64 {
    -2.0 * loglik + parameters as f64 * (n as f64).ln()
}
