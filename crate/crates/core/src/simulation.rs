//! Simulation of interval-censored data from a known truth, censoring-rate
//! calibration, and a replicate study harness.
//!
//! Covariates follow a fixed design: `x1 ~ Bernoulli(0.5)` and
//! `x2 ~ Normal(0, sd 0.5)`, columns 0 and 1.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{fit, FitOptions, FitResult};
use crate::model::{evaluate_parameters, Component, ModelSpec, ParamTriple, Theta, SMALL_FRAILTY};
use crate::numeric::{brent_minimize, integrate_half_line};

pub const COVARIATE_NAMES: [&str; 2] = ["x1", "x2"];
const CALIBRATION_STREAM: u64 = u64::MAX;
const QUAD_REL_TOL: f64 = 1e-10;

/// True parameters of a simulation, indexed against the fixed covariate design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: ModelSpec,
    pub theta: Theta,
}

impl Truth {
    /// Reference coefficients: scale `(2, 0.5, 0.3)`, shape `(2, 0.25, -0.1)`
    /// where the type has shape regression, `phi = 0.5` for frailty types and
    /// `psi = (ln 0.5, 0.15, -0.2)` for dispersion types.
    pub fn reference(model_type: crate::model::ModelType) -> Truth {
        let spec = ModelSpec::uniform(model_type, &[0, 1]);
        let psi = match (model_type.has_frailty(), model_type.dispersion_regression()) {
            (false, _) => vec![],
            (true, false) => vec![0.5f64.ln()],
            (true, true) => vec![0.5f64.ln(), 0.15, -0.2],
        };
        let beta = vec![2.0, 0.5, 0.3];
        let alpha = if model_type.shape_regression() {
            vec![2.0, 0.25, -0.1]
        } else {
            vec![2.0]
        };
        Truth {
            spec,
            theta: Theta { beta, alpha, psi },
        }
    }

    fn params(&self, row: &[f64]) -> Result<ParamTriple> {
        evaluate_parameters(&self.spec, &self.theta, row)
    }

    fn uses_covariates(&self) -> bool {
        !self.spec.regression_components().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub truth: Truth,
    /// Mean inspection length as a fraction of the mean survival time.
    pub d: f64,
    /// Target right-censoring proportion; 0 disables censoring.
    pub p: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Model fitted to each replicate; defaults to the truth's spec.
    #[serde(default)]
    pub fit_spec: Option<ModelSpec>,
    /// Covariate draws for the Monte Carlo expectations over the design.
    #[serde(default = "default_covariate_draws")]
    pub covariate_draws: usize,
}

fn default_covariate_draws() -> usize {
    10_000
}

impl Scenario {
    pub fn new(n: usize, truth: Truth, d: f64, p: f64, replicates: usize, seed: u64) -> Self {
        Scenario {
            n,
            truth,
            d,
            p,
            replicates,
            seed,
            fit_spec: None,
            covariate_draws: default_covariate_draws(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Input("scenario needs n >= 2".into()));
        }
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(Error::Input(format!("d must be positive, got {}", self.d)));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::Input(format!("p must be in [0, 1), got {}", self.p)));
        }
        if self.covariate_draws == 0 {
            return Err(Error::Input("covariate_draws must be positive".into()));
        }
        self.truth.spec.validate(COVARIATE_NAMES.len())?;
        self.truth.theta.check_layout(&self.truth.spec)?;
        if let Some(f) = &self.fit_spec {
            f.validate(COVARIATE_NAMES.len())?;
        }
        Ok(())
    }

    pub fn fit_spec(&self) -> &ModelSpec {
        self.fit_spec.as_ref().unwrap_or(&self.truth.spec)
    }
}

/// Gamma frailty with mean 1 and variance `phi`.
pub fn draw_frailty<R: Rng + ?Sized>(phi: f64, rng: &mut R) -> Result<f64> {
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::Domain(format!("frailty variance must be positive, got {phi}")));
    }
    let g = Gamma::new(1.0 / phi, phi).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(g.sample(rng))
}

/// Inverse-transform draw from the conditional survivor `exp(-u * Lambda(t))`.
pub fn draw_survival_time<R: Rng + ?Sized>(p: &ParamTriple, u: f64, rng: &mut R) -> f64 {
    let v: f64 = rng.sample(Open01);
    (-v.ln() / (u * p.lambda)).powf(1.0 / p.gamma)
}

/// Inspection interval around `t` built from `u1, u2` in `(0, c)`.
pub fn make_interval_with(t: f64, c: f64, u1: f64, u2: f64) -> (f64, f64) {
    let a = (t - u1).max(t + u2 - c).max(0.0);
    let b = (t + u2).min(t - u1 + c);
    (a, b)
}

pub fn make_interval<R: Rng + ?Sized>(t: f64, c: f64, rng: &mut R) -> (f64, f64) {
    let u1 = c * rng.sample::<f64, _>(Open01);
    let u2 = c * rng.sample::<f64, _>(Open01);
    make_interval_with(t, c, u1, u2)
}

pub fn draw_covariates<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let x1 = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
    let x2 = Normal::new(0.0, 0.5).expect("valid normal").sample(rng);
    vec![x1, x2]
}

/// Fixed covariate sample for the Monte Carlo expectations of a scenario.
pub fn covariate_sample(draws: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CALIBRATION_STREAM);
    (0..draws).map(|_| draw_covariates(&mut rng)).collect()
}

fn design_params(truth: &Truth, covariates: &[Vec<f64>]) -> Result<Vec<ParamTriple>> {
    let rows = if truth.uses_covariates() {
        covariates
    } else {
        &covariates[..covariates.len().min(1)]
    };
    if rows.is_empty() {
        return Err(Error::Input("no covariate draws".into()));
    }
    rows.iter().map(|r| truth.params(r)).collect()
}

fn mean_of_marginal(params: &[ParamTriple], f: impl Fn(&ParamTriple) -> Result<f64> + Sync + Send) -> Result<f64> {
    let vals: Vec<f64> = params.par_iter().map(f).collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// `E(T)` averaged over the covariate sample: the integral of the marginal
/// survivor, by quadrature for each draw.
pub fn mean_survival(truth: &Truth, covariates: &[Vec<f64>]) -> Result<f64> {
    let params = design_params(truth, covariates)?;
    mean_of_marginal(&params, |p| {
        // S_m decays like t^(-gamma/phi)
        if p.phi > 0.0 && p.gamma <= p.phi {
            return Err(Error::Domain(format!(
                "mean survival time is infinite (gamma {} <= phi {})",
                p.gamma, p.phi
            )));
        }
        integrate_half_line(|t| p.marginal_survivor(t), p.median_time(), QUAD_REL_TOL)
    })
}

/// `P(C < T)` for exponential censoring with rate `eta`.
pub fn censoring_probability(truth: &Truth, covariates: &[Vec<f64>], eta: f64) -> Result<f64> {
    let params = design_params(truth, covariates)?;
    censoring_probability_from(&params, eta)
}

fn censoring_probability_from(params: &[ParamTriple], eta: f64) -> Result<f64> {
    mean_of_marginal(params, |p| {
        let scale = p.median_time().min(1.0 / eta);
        integrate_half_line(|t| p.marginal_survivor(t) * eta * (-eta * t).exp(), scale, QUAD_REL_TOL)
    })
}

/// Censoring rate `eta` minimising `(P(C < T) - p)^2` over `log eta`.
/// `None` when `p = 0`.
pub fn calibrate_censoring(p: f64, truth: &Truth, covariates: &[Vec<f64>]) -> Result<Option<f64>> {
    if p == 0.0 {
        return Ok(None);
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Input(format!("censoring proportion must be in (0, 1), got {p}")));
    }
    let params = design_params(truth, covariates)?;
    let median_scale = params.iter().map(|q| q.median_time().ln()).sum::<f64>() / params.len() as f64;
    let lo = median_scale - 25.0;
    let hi = median_scale + 25.0;
    let failed = std::sync::atomic::AtomicBool::new(false);
    let j = |log_eta: f64| match censoring_probability_from(&params, log_eta.exp()) {
        Ok(pr) => (pr - p).powi(2),
        Err(_) => {
            failed.store(true, std::sync::atomic::Ordering::Relaxed);
            f64::INFINITY
        }
    };
    let (x, jx) = brent_minimize(j, lo, hi, 1e-10, 500);
    if failed.into_inner() || !(jx < 1e-8) {
        return Err(Error::Domain(format!("censoring calibration failed for p = {p}")));
    }
    Ok(Some(x.exp()))
}

/// Scenario constants shared by all replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mean_survival: f64,
    /// Inspection width parameter, `(3d/2) E(T)`.
    pub c: f64,
    pub eta: Option<f64>,
}

pub fn calibrate(scenario: &Scenario) -> Result<Calibration> {
    scenario.validate()?;
    let covs = covariate_sample(scenario.covariate_draws, scenario.seed);
    let mean = mean_survival(&scenario.truth, &covs)?;
    let eta = calibrate_censoring(scenario.p, &scenario.truth, &covs)?;
    Ok(Calibration {
        mean_survival: mean,
        c: 1.5 * scenario.d * mean,
        eta,
    })
}

/// One replicate dataset. Each replicate uses its own RNG stream derived
/// from `(seed, replicate)`.
pub fn simulate_dataset(scenario: &Scenario, calib: &Calibration, replicate: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(replicate);
    let censor = calib
        .eta
        .map(|eta| Exp::new(eta).map_err(|e| Error::Domain(e.to_string())))
        .transpose()?;
    let n = scenario.n;
    let (mut left, mut right, mut covs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let x = draw_covariates(&mut rng);
        let p = scenario.truth.params(&x)?;
        let u = if p.phi > SMALL_FRAILTY {
            draw_frailty(p.phi, &mut rng)?
        } else {
            1.0
        };
        let t = draw_survival_time(&p, u, &mut rng);
        let c_time = censor.map(|e| e.sample(&mut rng));
        let (a, b) = match c_time {
            Some(ct) if ct < t => (ct, f64::INFINITY),
            _ => make_interval(t, calib.c, &mut rng),
        };
        left.push(a);
        right.push(b);
        covs.push(x);
    }
    Dataset::new(left, right, covs, COVARIATE_NAMES.iter().map(|s| s.to_string()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub name: String,
    pub truth: f64,
    pub median: f64,
    pub mean: f64,
    /// Standard deviation of the estimates across replicates.
    pub empirical_se: f64,
    /// Mean of the model-based standard errors, where available.
    pub mean_model_se: Option<f64>,
    /// Mean of `100 (estimate - truth) / truth`.
    pub pct_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub scenario: Scenario,
    pub calibration: Calibration,
    pub coefficients: Vec<CoefficientSummary>,
    /// `phi = exp(psi_0)` when the fitted model has frailty.
    pub phi: Option<CoefficientSummary>,
    pub replicates: usize,
    pub converged: usize,
    pub convergence_rate: f64,
    /// Mean right-censored fraction over all replicate datasets.
    pub realized_censoring: f64,
    /// Replicates whose fit failed outright, with the error.
    pub failures: Vec<(usize, String)>,
}

/// True value of every coefficient of `fit_spec`; coefficients absent from
/// the truth are zero, except a frailty intercept with no true frailty.
fn truth_for(truth: &Truth, fit_spec: &ModelSpec) -> Vec<f64> {
    let mut out = Vec::with_capacity(fit_spec.dim());
    for comp in Component::ALL {
        let present = match comp {
            Component::Scale => true,
            Component::Shape => true,
            Component::Dispersion => fit_spec.model_type.has_frailty(),
        };
        if !present {
            continue;
        }
        let block = truth.theta.block(comp);
        let true_idx = truth.spec.indices(comp);
        out.push(block.first().copied().unwrap_or(f64::NAN));
        for col in fit_spec.indices(comp) {
            let v = true_idx
                .iter()
                .position(|j| j == col)
                .map(|k| block[k + 1])
                .unwrap_or(0.0);
            out.push(v);
        }
    }
    out
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn summarise(name: String, truth: f64, mut est: Vec<f64>, se: Vec<f64>) -> CoefficientSummary {
    let k = est.len() as f64;
    let mean = est.iter().sum::<f64>() / k;
    let var = est.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    let pct_bias = est.iter().map(|v| 100.0 * (v - truth) / truth).sum::<f64>() / k;
    let mean_model_se = (!se.is_empty()).then(|| se.iter().sum::<f64>() / se.len() as f64);
    CoefficientSummary {
        name,
        truth,
        median: median(&mut est),
        mean,
        empirical_se: var.sqrt(),
        mean_model_se,
        pct_bias,
    }
}

pub fn run_study(scenario: &Scenario, opts: &FitOptions) -> Result<StudySummary> {
    let calib = calibrate(scenario)?;
    let fit_spec = scenario.fit_spec().clone();
    let outcomes: Vec<(f64, Result<FitResult>)> = (0..scenario.replicates as u64)
        .into_par_iter()
        .map(|r| match simulate_dataset(scenario, &calib, r) {
            Ok(d) => (d.censored_fraction(), fit(&fit_spec, &d, opts)),
            Err(e) => (f64::NAN, Err(e)),
        })
        .collect();

    let reps = outcomes.len();
    let realized_censoring = outcomes.iter().map(|o| o.0).sum::<f64>() / reps.max(1) as f64;
    let mut failures = Vec::new();
    let mut fits = Vec::new();
    for (r, (_, o)) in outcomes.into_iter().enumerate() {
        match o {
            Ok(f) if f.converged => fits.push(f),
            Ok(_) => {}
            Err(e) => failures.push((r, e.to_string())),
        }
    }

    let names = fit_spec.coef_names(&COVARIATE_NAMES.map(String::from));
    let truth = truth_for(&scenario.truth, &fit_spec);
    let mut coefficients = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let est: Vec<f64> = fits.iter().map(|f| f.theta_hat.to_flat()[k]).collect();
        let se: Vec<f64> = fits.iter().filter_map(|f| f.se.as_ref().map(|s| s[k])).collect();
        coefficients.push(summarise(name.clone(), truth[k], est, se));
    }
    let phi = fit_spec.model_type.has_frailty().then(|| {
        let k = fit_spec.dim_beta() + fit_spec.dim_alpha();
        let est = fits.iter().map(|f| f.theta_hat.psi[0].exp()).collect();
        summarise("phi".into(), truth[k].exp(), est, Vec::new())
    });

    Ok(StudySummary {
        scenario: scenario.clone(),
        calibration: calib,
        coefficients,
        phi,
        replicates: reps,
        converged: fits.len(),
        convergence_rate: fits.len() as f64 / reps.max(1) as f64,
        realized_censoring,
        failures,
    })
}
