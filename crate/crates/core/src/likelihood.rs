//! Interval-censored log-likelihood, analytic score and observed information.
//!
//! Each subject contributes `pi_i = S_m(a_i) - S_m(b_i)`. All three score
//! blocks share one structure,
//!
//! ```text
//! U = sum_i (1/pi_i) { S_m(b_i)^(1+phi_i) w(b_i) - S_m(a_i)^(1+phi_i) w(a_i) } v_i
//! ```
//!
//! with the covariate vector `v_i` of the block and weight `w` equal to the
//! derivative of `Lambda` (scale, shape) or of `-S_m / S_m^(1+phi)` (frailty)
//! with respect to the block intercept.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{log_survivor_from_cum_hazard, params_unchecked, ModelSpec, ParamTriple, Theta};

/// Log-likelihood total plus each subject's `log pi_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLikResult {
    pub value: f64,
    pub per_obs: Vec<f64>,
}

impl LogLikResult {
    /// Rows whose interval probability underflowed to zero.
    pub fn degenerate(&self) -> Vec<usize> {
        self.per_obs
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == f64::NEG_INFINITY)
            .map(|(i, _)| i)
            .collect()
    }
}

/// `log(exp(hi) - exp(lo))` for `lo <= hi`; `-inf` when the two coincide.
fn log_survivor_difference(log_s_left: f64, log_s_right: f64) -> f64 {
    if log_s_right == f64::NEG_INFINITY {
        return log_s_left;
    }
    let d = log_s_right - log_s_left;
    if !(d < 0.0) {
        return f64::NEG_INFINITY;
    }
    log_s_left + (-d.exp_m1()).ln()
}

/// `log[S_m(a) - S_m(b)]`; `b = inf` gives `log S_m(a)`.
///
/// Returns `-inf` for an empty interval or when the two survivor values are
/// equal to machine precision.
pub fn log_interval_prob(p: &ParamTriple, a: f64, b: f64) -> f64 {
    if !(a < b) {
        return f64::NEG_INFINITY;
    }
    let lsa = p.log_marginal_survivor(a);
    let lsb = p.log_marginal_survivor(b);
    log_survivor_difference(lsa, lsb)
}

fn check_inputs(spec: &ModelSpec, theta: &Theta, data: &Dataset) -> Result<()> {
    spec.validate(data.n_cols())?;
    theta.check_layout(spec)
}

pub fn log_likelihood(spec: &ModelSpec, theta: &Theta, data: &Dataset) -> Result<LogLikResult> {
    check_inputs(spec, theta, data)?;
    let mut per_obs = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let p = params_unchecked(spec, theta, data.row(i))?;
        per_obs.push(log_interval_prob(&p, data.left()[i], data.right()[i]));
    }
    let value = per_obs.iter().sum();
    Ok(LogLikResult { value, per_obs })
}

/// Weight functions at one time point, ordered (scale, shape, frailty).
fn omega(p: &ParamTriple, t: f64, cum_hazard: f64) -> [f64; 3] {
    if t <= 0.0 {
        return [0.0; 3];
    }
    let w_beta = cum_hazard;
    let w_alpha = cum_hazard * p.gamma * t.ln();
    let w_psi = if p.phi == 0.0 {
        0.0
    } else {
        let x = p.phi * cum_hazard;
        if x < 1e-3 {
            // Lambda - (1+x) log1p(x) / phi, expanded to avoid cancellation
            let series = x * (0.5 - x * (1.0 / 6.0 - x * (1.0 / 12.0 - x * (1.0 / 20.0 - x / 30.0))));
            -cum_hazard * series
        } else {
            cum_hazard - (1.0 + x) * x.ln_1p() / p.phi
        }
    };
    [w_beta, w_alpha, w_psi]
}

/// Log-likelihood and score in one pass. Returns `(-inf, [])` as soon as a
/// subject's interval probability underflows; callers treat that as a
/// rejected point.
pub(crate) fn loglik_and_score_unchecked(
    spec: &ModelSpec,
    theta: &Theta,
    data: &Dataset,
) -> Result<(f64, Vec<f64>)> {
    let (nb, na) = (spec.dim_beta(), spec.dim_alpha());
    let mut grad = vec![0.0; spec.dim()];
    let mut total = 0.0;
    for i in 0..data.len() {
        let row = data.row(i);
        let p = params_unchecked(spec, theta, row)?;
        let (a, b) = (data.left()[i], data.right()[i]);
        let cum_a = p.cum_hazard(a);
        let cum_b = if b.is_finite() { p.cum_hazard(b) } else { f64::INFINITY };
        let lsa = log_survivor_from_cum_hazard(cum_a, p.phi);
        let lsb = log_survivor_from_cum_hazard(cum_b, p.phi);
        let lpi = log_survivor_difference(lsa, lsb);
        if lpi == f64::NEG_INFINITY || lpi.is_nan() {
            return Ok((f64::NEG_INFINITY, Vec::new()));
        }
        total += lpi;

        let mut d = [0.0; 3];
        for (t, cum, ls, sign) in [(b, cum_b, lsb, 1.0), (a, cum_a, lsa, -1.0)] {
            let r = ((1.0 + p.phi) * ls - lpi).exp();
            if r == 0.0 || !t.is_finite() {
                continue;
            }
            let w = omega(&p, t, cum);
            for k in 0..3 {
                d[k] += sign * r * w[k];
            }
        }

        grad[0] += d[0];
        for (k, &j) in spec.scale_idx.iter().enumerate() {
            grad[1 + k] += d[0] * row[j];
        }
        grad[nb] += d[1];
        for (k, &j) in spec.shape_idx.iter().enumerate() {
            grad[nb + 1 + k] += d[1] * row[j];
        }
        if spec.model_type.has_frailty() {
            let off = nb + na;
            grad[off] += d[2];
            for (k, &j) in spec.disp_idx.iter().enumerate() {
                grad[off + 1 + k] += d[2] * row[j];
            }
        }
    }
    Ok((total, grad))
}

/// Log-likelihood value and score; errors on the same conditions as [`score`].
pub fn loglik_and_score(spec: &ModelSpec, theta: &Theta, data: &Dataset) -> Result<(f64, Vec<f64>)> {
    check_inputs(spec, theta, data)?;
    let (ll, g) = loglik_and_score_unchecked(spec, theta, data)?;
    if ll == f64::NEG_INFINITY {
        return Err(Error::InvalidParameter(
            "log-likelihood is -inf (degenerate interval probability)".into(),
        ));
    }
    Ok((ll, g))
}

/// Analytic score `(U(beta), U(alpha), U(psi))` in packed layout.
pub fn score(spec: &ModelSpec, theta: &Theta, data: &Dataset) -> Result<Vec<f64>> {
    loglik_and_score(spec, theta, data).map(|(_, g)| g)
}

/// Hessian of a function given only its gradient, by central differences
/// with steps `1e-5 * max(1, |x_j|)`, symmetrised as `(H + H') / 2`.
pub fn hessian_from_gradient<F>(grad: F, x: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let step = 1e-5 * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        let gp = grad(&xp)?;
        xp[j] = x[j] - step;
        let gm = grad(&xp)?;
        xp[j] = x[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Observed information `-d2l/dtheta dtheta'` with a rank report.
#[derive(Debug, Clone)]
pub struct Information {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
    pub min_eigenvalue: f64,
}

impl Information {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(matrix.clone()).eigenvalues;
        let max_abs = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = max_abs * 1e-10 * matrix.nrows().max(1) as f64;
        let rank = eig.iter().filter(|v| v.abs() > tol).count();
        let min_eigenvalue = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        Information {
            matrix,
            rank,
            min_eigenvalue,
        }
    }

    /// Full rank and positive definite.
    pub fn is_regular(&self) -> bool {
        self.rank == self.matrix.nrows() && self.min_eigenvalue > 0.0
    }
}

pub fn observed_information(spec: &ModelSpec, theta: &Theta, data: &Dataset) -> Result<Information> {
    check_inputs(spec, theta, data)?;
    let x = theta.to_flat();
    let h = hessian_from_gradient(
        |v| {
            let th = Theta::from_flat(spec, v)?;
            score(spec, &th, data)
        },
        &x,
    )?;
    Ok(Information::from_matrix(-h))
}
