//! Maximum likelihood fitting, Wald tests and median predictions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::{
    hessian_from_gradient, log_likelihood, loglik_and_score_unchecked, Information,
};
use crate::model::{
    evaluate_parameters, median_log_factor, Component, ModelSpec, Theta, FRAILTY_ABSENT_LOG_PHI,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence threshold on the sup-norm of the score.
    pub grad_tol: f64,
    /// Stop when an accepted step moves no coefficient by more than this.
    pub step_tol: f64,
    /// Extra randomly perturbed starts; the best optimum is kept.
    #[serde(default)]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 200,
            grad_tol: 1e-6,
            step_tol: 1e-9,
            restarts: 0,
            seed: 0,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0 && self.step_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Input("fit tolerances and max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub theta_hat: Theta,
    pub coef_names: Vec<String>,
    /// Covariate column names of the dataset the model was fitted to.
    pub column_names: Vec<String>,
    #[serde(with = "nan_as_null")]
    pub loglik: f64,
    pub n_obs: usize,
    /// Inverse observed information; `None` when the information is singular.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub se: Option<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    #[serde(with = "nan_as_null")]
    pub grad_norm: f64,
    pub information_rank: usize,
}

impl FitResult {
    /// Wraps externally supplied estimates (e.g. published coefficients) so
    /// they can be used for prediction. No likelihood is attached.
    pub fn from_estimates(
        spec: ModelSpec,
        theta_hat: Theta,
        column_names: Vec<String>,
        covariance: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        theta_hat.check_layout(&spec)?;
        spec.validate(column_names.len())?;
        let (covariance, se) = split_covariance(covariance);
        Ok(FitResult {
            coef_names: spec.coef_names(&column_names),
            information_rank: spec.dim(),
            spec,
            theta_hat,
            column_names,
            loglik: f64::NAN,
            n_obs: 0,
            covariance,
            se,
            converged: true,
            iterations: 0,
            grad_norm: f64::NAN,
        })
    }

    /// Number of free parameters.
    pub fn k(&self) -> usize {
        self.spec.dim()
    }

    pub fn aic(&self) -> f64 {
        crate::selection::information_criteria(self.loglik, self.k(), self.n_obs).0
    }

    pub fn bic(&self) -> f64 {
        crate::selection::information_criteria(self.loglik, self.k(), self.n_obs).1
    }

    pub fn covariance_matrix(&self) -> Option<DMatrix<f64>> {
        let rows = self.covariance.as_ref()?;
        let n = rows.len();
        Some(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// True when the model has a constant frailty variance below `exp(-20)`.
    pub fn frailty_absent(&self) -> bool {
        self.spec.model_type.has_frailty()
            && self.theta_hat.psi.len() == 1
            && self.theta_hat.psi[0] < FRAILTY_ABSENT_LOG_PHI
    }
}

fn split_covariance(cov: Option<DMatrix<f64>>) -> (Option<Vec<Vec<f64>>>, Option<Vec<f64>>) {
    match cov {
        Some(c) => {
            let rows = (0..c.nrows()).map(|i| c.row(i).iter().cloned().collect()).collect();
            let se = (0..c.nrows()).map(|i| c[(i, i)].sqrt()).collect();
            (Some(rows), Some(se))
        }
        None => (None, None),
    }
}

/// Crude starting values: unit shape, exponential rate from midpoint
/// imputation, zero covariate effects, `phi = 0.5`.
pub fn initialize(spec: &ModelSpec, data: &Dataset) -> Result<Theta> {
    if data.is_empty() {
        return Err(Error::NonIdentifiable("dataset is empty".into()));
    }
    spec.validate(data.n_cols())?;
    let mut events = 0usize;
    let mut exposure = 0.0;
    for i in 0..data.len() {
        let (a, b) = (data.left()[i], data.right()[i]);
        if b.is_finite() {
            events += 1;
            exposure += 0.5 * (a + b);
        } else {
            exposure += a;
        }
    }
    if events == 0 {
        return Err(Error::NonIdentifiable(
            "every observation is right-censored".into(),
        ));
    }
    let mut theta = Theta::zeros(spec);
    theta.beta[0] = (events as f64 / exposure).ln();
    if let Some(p) = theta.psi.first_mut() {
        *p = 0.5f64.ln();
    }
    Ok(theta)
}

pub fn fit(spec: &ModelSpec, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    let start = initialize(spec, data)?;
    fit_from(spec, data, opts, &start)
}

struct Objective<'a> {
    spec: &'a ModelSpec,
    data: &'a Dataset,
}

impl Objective<'_> {
    /// Log-likelihood and score; `None` where the likelihood is zero or the
    /// parameters are not representable.
    fn eval(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let theta = Theta::from_flat(self.spec, x).ok()?;
        match loglik_and_score_unchecked(self.spec, &theta, self.data) {
            Ok((ll, g)) if ll.is_finite() && g.iter().all(|v| v.is_finite()) => Some((ll, g)),
            _ => None,
        }
    }

    fn information(&self, x: &[f64]) -> Result<Information> {
        let h = hessian_from_gradient(
            |v| {
                self.eval(v)
                    .map(|(_, g)| g)
                    .ok_or_else(|| Error::InvalidParameter("score not finite near estimate".into()))
            },
            x,
        )?;
        Ok(Information::from_matrix(-h))
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Ascent {
    x: Vec<f64>,
    ll: f64,
    grad: Vec<f64>,
    iterations: usize,
}

/// Largest coefficient change allowed in one step.
const MAX_STEP: f64 = 5.0;

/// Backtracking (Armijo) search along `dir`; accepted points never lower
/// the log-likelihood.
fn line_search(obj: &Objective, cur: &Ascent, dir: &[f64]) -> Option<(Vec<f64>, f64, Vec<f64>)> {
    let slope = dot(&cur.grad, dir);
    if !(slope > 0.0) {
        return None;
    }
    let longest = sup_norm(dir);
    let mut step = if longest > MAX_STEP { MAX_STEP / longest } else { 1.0 };
    for _ in 0..60 {
        let xn: Vec<f64> = cur.x.iter().zip(dir).map(|(x, d)| x + step * d).collect();
        if let Some((ll, g)) = obj.eval(&xn) {
            if ll >= cur.ll + 1e-4 * step * slope {
                return Some((xn, ll, g));
            }
        }
        step *= 0.5;
    }
    None
}

/// BFGS on the log-likelihood with an inverse-Hessian approximation.
fn bfgs(obj: &Objective, mut cur: Ascent, opts: &FitOptions) -> Ascent {
    let n = cur.x.len();
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    while cur.iterations < opts.max_iter {
        if sup_norm(&cur.grad) < opts.grad_tol {
            break;
        }
        // ascent direction on l is H^-1 g with H^-1 approximating (-d2l)^-1
        let g = DVector::from_column_slice(&cur.grad);
        let dir: Vec<f64> = (&hinv * &g).iter().cloned().collect();
        let found = line_search(obj, &cur, &dir).or_else(|| {
            if fresh {
                None
            } else {
                hinv = DMatrix::identity(n, n);
                fresh = true;
                line_search(obj, &cur, &cur.grad)
            }
        });
        let Some((xn, lln, gn)) = found else { break };
        cur.iterations += 1;
        let s = DVector::from_iterator(n, xn.iter().zip(&cur.x).map(|(a, b)| a - b));
        // y is the change in the gradient of -l
        let y = DVector::from_iterator(n, cur.grad.iter().zip(&gn).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        let moved = sup_norm(s.as_slice());
        cur.x = xn;
        cur.ll = lln;
        cur.grad = gn;
        if moved < opts.step_tol {
            break;
        }
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                hinv *= sy / y.dot(&y);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
    }
    cur
}

/// Newton steps with the finite-difference observed information, used to
/// tighten a quasi-Newton solution that stalled short of `grad_tol`.
fn newton_polish(obj: &Objective, mut cur: Ascent, opts: &FitOptions) -> Ascent {
    for _ in 0..20 {
        if sup_norm(&cur.grad) < opts.grad_tol {
            break;
        }
        let Ok(info) = obj.information(&cur.x) else { break };
        let Some(chol) = info.matrix.clone().cholesky() else { break };
        let dir = chol.solve(&DVector::from_column_slice(&cur.grad));
        // Close to the optimum the gain is below the rounding noise of l,
        // so a full step is judged by the score instead.
        let full: Vec<f64> = cur.x.iter().zip(dir.iter()).map(|(x, d)| x + d).collect();
        let noise = 1e-12 * cur.ll.abs().max(1.0);
        let by_score = obj
            .eval(&full)
            .filter(|(ll, g)| *ll >= cur.ll - noise && sup_norm(g) < sup_norm(&cur.grad))
            .map(|(ll, g)| (full, ll, g));
        let Some((xn, ll, g)) = by_score.or_else(|| line_search(obj, &cur, dir.as_slice())) else {
            break;
        };
        cur.iterations += 1;
        cur.x = xn;
        cur.ll = ll;
        cur.grad = g;
    }
    cur
}

fn maximize(obj: &Objective, start: &[f64], opts: &FitOptions) -> Result<Ascent> {
    let (ll, grad) = obj.eval(start).ok_or_else(|| {
        Error::InvalidParameter("log-likelihood is not finite at the starting values".into())
    })?;
    let cur = Ascent {
        x: start.to_vec(),
        ll,
        grad,
        iterations: 0,
    };
    let cur = bfgs(obj, cur, opts);
    Ok(newton_polish(obj, cur, opts))
}

/// Maximises the likelihood from `start`.
pub fn fit_from(spec: &ModelSpec, data: &Dataset, opts: &FitOptions, start: &Theta) -> Result<FitResult> {
    opts.validate()?;
    spec.validate(data.n_cols())?;
    start.check_layout(spec)?;
    let obj = Objective { spec, data };
    let x0 = start.to_flat();
    let mut best = maximize(&obj, &x0, opts)?;

    if opts.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for _ in 0..opts.restarts {
            let x: Vec<f64> = x0.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
            if let Ok(alt) = maximize(&obj, &x, opts) {
                if alt.ll > best.ll {
                    best = alt;
                }
            }
        }
    }

    let grad_norm = sup_norm(&best.grad);
    let converged = grad_norm < opts.grad_tol;
    let info = obj.information(&best.x).ok();
    let covariance = info.as_ref().filter(|i| i.is_regular()).and_then(|i| {
        let inv = i.matrix.clone().cholesky()?.inverse();
        inv.iter().all(|v| v.is_finite()).then_some(inv)
    });
    let (covariance, se) = split_covariance(covariance);
    let theta_hat = Theta::from_flat(spec, &best.x)?;
    Ok(FitResult {
        spec: spec.clone(),
        coef_names: spec.coef_names(data.column_names()),
        column_names: data.column_names().to_vec(),
        theta_hat,
        loglik: best.ll,
        n_obs: data.len(),
        covariance,
        se,
        converged,
        iterations: best.iterations,
        grad_norm,
        information_rank: info.map(|i| i.rank).unwrap_or(0),
    })
}

/// Recomputes the log-likelihood of a fit on `data`.
pub fn refit_loglik(fit: &FitResult, data: &Dataset) -> Result<f64> {
    Ok(log_likelihood(&fit.spec, &fit.theta_hat, data)?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
}

impl WaldTest {
    pub fn significant(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Per-coefficient `z = estimate / se` with two-sided normal p-values.
pub fn wald_tests(fit: &FitResult) -> Result<Vec<WaldTest>> {
    let se = fit
        .se
        .as_ref()
        .ok_or_else(|| Error::InvalidCovariance("observed information is singular".into()))?;
    Ok(fit
        .theta_hat
        .to_flat()
        .into_iter()
        .zip(se)
        .zip(&fit.coef_names)
        .map(|((estimate, &se), name)| {
            let z = if estimate == 0.0 { 0.0 } else { estimate / se };
            WaldTest {
                name: name.clone(),
                estimate,
                se,
                z,
                p_value: erfc(z.abs() / std::f64::consts::SQRT_2),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianPrediction {
    pub median: f64,
    /// 95% interval from the delta method on the log median.
    pub ci: Option<(f64, f64)>,
}

/// Gradient of the log median with respect to the packed coefficients.
fn log_median_gradient(spec: &ModelSpec, theta: &Theta, row: &[f64]) -> Result<(f64, Vec<f64>)> {
    let p = evaluate_parameters(spec, theta, row)?;
    let log_m = (median_log_factor(p.phi) - p.lambda.ln()) / p.gamma;
    let mut grad = Vec::with_capacity(spec.dim());
    let covs = |idx: &[usize]| std::iter::once(1.0).chain(idx.iter().map(|&j| row[j])).collect::<Vec<_>>();
    grad.extend(covs(&spec.scale_idx).into_iter().map(|x| -x / p.gamma));
    grad.extend(covs(&spec.shape_idx).into_iter().map(|z| -log_m * z));
    if spec.model_type.has_frailty() {
        // phi * d/dphi log((2^phi - 1)/phi) = y / (1 - e^-y) - 1, y = phi ln 2
        let y = p.phi * std::f64::consts::LN_2;
        let dlogc = if y < 1e-8 { y / 2.0 } else { y / -(-y).exp_m1() - 1.0 };
        grad.extend(covs(&spec.disp_idx).into_iter().map(|w| dlogc * w / p.gamma));
    }
    Ok((log_m, grad))
}

/// Median survival time for one covariate row, with a delta-method 95% CI
/// when the fit carries a covariance matrix.
pub fn predict_median(fit: &FitResult, row: &[f64]) -> Result<MedianPrediction> {
    let (log_m, grad) = log_median_gradient(&fit.spec, &fit.theta_hat, row)?;
    let ci = fit.covariance_matrix().and_then(|cov| {
        let g = DVector::from_vec(grad);
        let var = (g.transpose() * cov * &g)[(0, 0)];
        if !(var >= 0.0) {
            return None;
        }
        let z = Normal::new(0.0, 1.0).ok()?.inverse_cdf(0.975);
        let half = z * var.sqrt();
        Some(((log_m - half).exp(), (log_m + half).exp()))
    });
    Ok(MedianPrediction {
        median: log_m.exp(),
        ci,
    })
}

/// Coefficient of `column` in `component`, if present.
pub fn coefficient(fit: &FitResult, component: Component, column: Option<usize>) -> Option<f64> {
    let block = fit.theta_hat.block(component);
    match column {
        None => block.first().copied(),
        Some(c) => fit
            .spec
            .indices(component)
            .iter()
            .position(|&j| j == c)
            .map(|k| block[k + 1]),
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}
