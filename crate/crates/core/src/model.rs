//! Weibull multi-parameter regression model with optional gamma frailty.
//!
//! The conditional hazard is `u * lambda * gamma * t^(gamma - 1)` with
//! `lambda = exp(x'beta)`, `gamma = exp(z'alpha)` and frailty `u ~ Gamma`
//! of mean one and variance `phi = exp(w'psi)`. Integrating out `u` gives
//! the marginal survivor `{1 + phi * Lambda(t)}^(-1/phi)`, which tends to
//! `exp(-Lambda(t))` as `phi -> 0`.
//!
//! Only the Weibull cumulative hazard is implemented. The likelihood and
//! score code go through [`ParamTriple::cum_hazard`] and the `omega` weights
//! in `likelihood`, which is where another baseline would plug in.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this value of `phi * Lambda` the log marginal survivor uses a
/// second-order expansion instead of `log1p`.
pub const SMALL_FRAILTY: f64 = 1e-8;

/// Frailty variances below `exp(-20)` are reported as "frailty absent".
pub const FRAILTY_ABSENT_LOG_PHI: f64 = -20.0;

/// The six model types, from plain proportional hazards up to the
/// multi-parameter regression model with a frailty dispersion regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelType {
    #[serde(rename = "PH")]
    Ph,
    #[serde(rename = "PHF")]
    Phf,
    #[serde(rename = "PHDM")]
    Phdm,
    #[serde(rename = "MPR")]
    Mpr,
    #[serde(rename = "MPRF")]
    Mprf,
    #[serde(rename = "MPRDM")]
    Mprdm,
}

impl ModelType {
    pub const ALL: [ModelType; 6] = [
        ModelType::Ph,
        ModelType::Phf,
        ModelType::Phdm,
        ModelType::Mpr,
        ModelType::Mprf,
        ModelType::Mprdm,
    ];

    /// Whether the Weibull shape has its own regression.
    pub fn shape_regression(self) -> bool {
        matches!(self, ModelType::Mpr | ModelType::Mprf | ModelType::Mprdm)
    }

    pub fn has_frailty(self) -> bool {
        !matches!(self, ModelType::Ph | ModelType::Mpr)
    }

    /// Whether the frailty variance has its own regression.
    pub fn dispersion_regression(self) -> bool {
        matches!(self, ModelType::Phdm | ModelType::Mprdm)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelType::Ph => "PH",
            ModelType::Phf => "PHF",
            ModelType::Phdm => "PHDM",
            ModelType::Mpr => "MPR",
            ModelType::Mprf => "MPRF",
            ModelType::Mprdm => "MPRDM",
        }
    }
}

impl fmt::Display for ModelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelType::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Spec(format!("unknown model type `{s}`")))
    }
}

/// One regression component of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    #[serde(rename = "scale")]
    Scale,
    #[serde(rename = "shape")]
    Shape,
    #[serde(rename = "dispersion")]
    Dispersion,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Scale, Component::Shape, Component::Dispersion];

    pub fn name(self) -> &'static str {
        match self {
            Component::Scale => "scale",
            Component::Shape => "shape",
            Component::Dispersion => "dispersion",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Model type plus the covariate columns entering each regression.
///
/// Index sets refer to columns of the covariate matrix and never include the
/// intercept, which is always present. Times handed to the model are already
/// offset-adjusted; `time_offset` only records what was subtracted at load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_type: ModelType,
    pub scale_idx: Vec<usize>,
    pub shape_idx: Vec<usize>,
    pub disp_idx: Vec<usize>,
    #[serde(default)]
    pub time_offset: f64,
}

impl ModelSpec {
    pub fn new(
        model_type: ModelType,
        scale_idx: Vec<usize>,
        shape_idx: Vec<usize>,
        disp_idx: Vec<usize>,
    ) -> Result<Self> {
        let spec = ModelSpec {
            model_type,
            scale_idx,
            shape_idx,
            disp_idx,
            time_offset: 0.0,
        };
        spec.check_structure()?;
        Ok(spec)
    }

    /// Builds a spec from a single covariate list, dropping the shape and
    /// dispersion sets where the model type has no such regression.
    pub fn uniform(model_type: ModelType, idx: &[usize]) -> Self {
        let keep = |on: bool| if on { idx.to_vec() } else { Vec::new() };
        ModelSpec {
            model_type,
            scale_idx: idx.to_vec(),
            shape_idx: keep(model_type.shape_regression()),
            disp_idx: keep(model_type.dispersion_regression()),
            time_offset: 0.0,
        }
    }

    pub fn with_time_offset(mut self, offset: f64) -> Self {
        self.time_offset = offset;
        self
    }

    pub fn indices(&self, component: Component) -> &[usize] {
        match component {
            Component::Scale => &self.scale_idx,
            Component::Shape => &self.shape_idx,
            Component::Dispersion => &self.disp_idx,
        }
    }

    pub fn indices_mut(&mut self, component: Component) -> &mut Vec<usize> {
        match component {
            Component::Scale => &mut self.scale_idx,
            Component::Shape => &mut self.shape_idx,
            Component::Dispersion => &mut self.disp_idx,
        }
    }

    /// Components that may carry covariates under this model type.
    pub fn regression_components(&self) -> Vec<Component> {
        let mut out = vec![Component::Scale];
        if self.model_type.shape_regression() {
            out.push(Component::Shape);
        }
        if self.model_type.dispersion_regression() {
            out.push(Component::Dispersion);
        }
        out
    }

    fn check_structure(&self) -> Result<()> {
        let t = self.model_type;
        if !t.shape_regression() && !self.shape_idx.is_empty() {
            return Err(Error::Spec(format!("{t} has no shape regression")));
        }
        if !t.dispersion_regression() && !self.disp_idx.is_empty() {
            return Err(Error::Spec(format!("{t} has no dispersion regression")));
        }
        for c in Component::ALL {
            let idx = self.indices(c);
            for (k, i) in idx.iter().enumerate() {
                if idx[..k].contains(i) {
                    return Err(Error::Spec(format!("column {i} repeated in {c} regression")));
                }
            }
        }
        if !self.time_offset.is_finite() {
            return Err(Error::Spec("time offset must be finite".into()));
        }
        Ok(())
    }

    /// Full validation against a covariate matrix with `n_cols` columns.
    pub fn validate(&self, n_cols: usize) -> Result<()> {
        self.check_structure()?;
        for c in Component::ALL {
            if let Some(&i) = self.indices(c).iter().find(|&&i| i >= n_cols) {
                return Err(Error::Spec(format!(
                    "{c} column {i} out of range ({n_cols} covariate columns)"
                )));
            }
        }
        Ok(())
    }

    pub fn dim_beta(&self) -> usize {
        1 + self.scale_idx.len()
    }

    pub fn dim_alpha(&self) -> usize {
        1 + self.shape_idx.len()
    }

    pub fn dim_psi(&self) -> usize {
        if self.model_type.has_frailty() {
            1 + self.disp_idx.len()
        } else {
            0
        }
    }

    /// Number of free parameters, `dim(theta)`.
    pub fn dim(&self) -> usize {
        self.dim_beta() + self.dim_alpha() + self.dim_psi()
    }

    /// Coefficient labels in packed order, e.g. `scale:(Intercept)`, `shape:dmf`.
    pub fn coef_names(&self, column_names: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim());
        let mut push_block = |c: Component, idx: &[usize]| {
            out.push(format!("{c}:(Intercept)"));
            for &i in idx {
                let name = column_names
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| format!("x{i}"));
                out.push(format!("{c}:{name}"));
            }
        };
        push_block(Component::Scale, &self.scale_idx);
        push_block(Component::Shape, &self.shape_idx);
        if self.model_type.has_frailty() {
            push_block(Component::Dispersion, &self.disp_idx);
        }
        out
    }

    /// Short label such as `MPRF[sex,dmf|dmf|-]`.
    pub fn label(&self, column_names: &[String]) -> String {
        let names = |idx: &[usize]| {
            if idx.is_empty() {
                "-".to_string()
            } else {
                idx.iter()
                    .map(|&i| column_names.get(i).cloned().unwrap_or_else(|| format!("x{i}")))
                    .collect::<Vec<_>>()
                    .join(",")
            }
        };
        let mut s = format!("{}[{}", self.model_type, names(&self.scale_idx));
        if self.model_type.shape_regression() {
            s.push('|');
            s.push_str(&names(&self.shape_idx));
        }
        if self.model_type.dispersion_regression() {
            s.push('|');
            s.push_str(&names(&self.disp_idx));
        }
        s.push(']');
        s
    }
}

/// Covariate values for one subject. The intercept is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateRow(Vec<f64>);

impl CovariateRow {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("covariate value {v} is not finite")));
        }
        Ok(CovariateRow(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for CovariateRow {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Regression coefficients: `beta` (log scale), `alpha` (log shape) and
/// `psi` (log frailty variance; empty for models without frailty).
/// Intercepts sit at position 0 of each block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub psi: Vec<f64>,
}

impl Theta {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Theta {
            beta: vec![0.0; spec.dim_beta()],
            alpha: vec![0.0; spec.dim_alpha()],
            psi: vec![0.0; spec.dim_psi()],
        }
    }

    pub fn dim(&self) -> usize {
        self.beta.len() + self.alpha.len() + self.psi.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.alpha);
        v.extend_from_slice(&self.psi);
        v
    }

    pub fn from_flat(spec: &ModelSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.dim() {
            return Err(Error::Spec(format!(
                "expected {} coefficients, got {}",
                spec.dim(),
                flat.len()
            )));
        }
        let (nb, na) = (spec.dim_beta(), spec.dim_alpha());
        Ok(Theta {
            beta: flat[..nb].to_vec(),
            alpha: flat[nb..nb + na].to_vec(),
            psi: flat[nb + na..].to_vec(),
        })
    }

    pub fn check_layout(&self, spec: &ModelSpec) -> Result<()> {
        if self.beta.len() != spec.dim_beta()
            || self.alpha.len() != spec.dim_alpha()
            || self.psi.len() != spec.dim_psi()
        {
            return Err(Error::Spec(format!(
                "coefficient layout ({}, {}, {}) does not match {} spec ({}, {}, {})",
                self.beta.len(),
                self.alpha.len(),
                self.psi.len(),
                spec.model_type,
                spec.dim_beta(),
                spec.dim_alpha(),
                spec.dim_psi()
            )));
        }
        Ok(())
    }

    pub fn block(&self, component: Component) -> &[f64] {
        match component {
            Component::Scale => &self.beta,
            Component::Shape => &self.alpha,
            Component::Dispersion => &self.psi,
        }
    }

    /// Carries coefficients from `from` over to the layout of `to`.
    ///
    /// Intercepts and every (component, column) pair present in both specs are
    /// copied; new entries start at zero, and a newly introduced frailty starts
    /// at `phi = 0.5`.
    pub fn transfer(&self, from: &ModelSpec, to: &ModelSpec) -> Theta {
        let mut out = Theta::zeros(to);
        let copy = |src: &[f64], src_idx: &[usize], dst: &mut [f64], dst_idx: &[usize]| {
            if let (Some(s), Some(d)) = (src.first(), dst.first_mut()) {
                *d = *s;
            }
            for (k, col) in dst_idx.iter().enumerate() {
                if let Some(j) = src_idx.iter().position(|c| c == col) {
                    dst[k + 1] = src[j + 1];
                }
            }
        };
        copy(&self.beta, &from.scale_idx, &mut out.beta, &to.scale_idx);
        copy(&self.alpha, &from.shape_idx, &mut out.alpha, &to.shape_idx);
        if to.model_type.has_frailty() {
            if from.model_type.has_frailty() {
                copy(&self.psi, &from.disp_idx, &mut out.psi, &to.disp_idx);
            } else {
                out.psi[0] = 0.5f64.ln();
            }
        }
        out
    }
}

/// Subject-level Weibull scale and shape plus gamma frailty variance.
/// `phi == 0` encodes "no frailty".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamTriple {
    pub lambda: f64,
    pub gamma: f64,
    pub phi: f64,
}

pub(crate) fn linear_predictor(coef: &[f64], idx: &[usize], row: &[f64]) -> f64 {
    coef[0]
        + idx
            .iter()
            .zip(&coef[1..])
            .map(|(&i, c)| c * row[i])
            .sum::<f64>()
}

fn positive_exp(eta: f64, what: &str) -> Result<f64> {
    let v = eta.exp();
    if !eta.is_finite() || !v.is_finite() || v <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "{what} linear predictor {eta} gives a non-finite or zero parameter"
        )));
    }
    Ok(v)
}

/// Maps coefficients and one covariate row to `(lambda, gamma, phi)`.
pub fn evaluate_parameters(spec: &ModelSpec, theta: &Theta, row: &[f64]) -> Result<ParamTriple> {
    theta.check_layout(spec)?;
    for c in Component::ALL {
        if let Some(&i) = spec.indices(c).iter().find(|&&i| i >= row.len()) {
            return Err(Error::Spec(format!(
                "{c} column {i} missing from covariate row of length {}",
                row.len()
            )));
        }
    }
    params_unchecked(spec, theta, row)
}

pub(crate) fn params_unchecked(spec: &ModelSpec, theta: &Theta, row: &[f64]) -> Result<ParamTriple> {
    let lambda = positive_exp(linear_predictor(&theta.beta, &spec.scale_idx, row), "scale")?;
    let gamma = positive_exp(linear_predictor(&theta.alpha, &spec.shape_idx, row), "shape")?;
    let phi = if spec.model_type.has_frailty() {
        let eta = linear_predictor(&theta.psi, &spec.disp_idx, row);
        if !eta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "dispersion linear predictor {eta} is not finite"
            )));
        }
        // exp underflow to 0 is the no-frailty limit, which is handled exactly.
        let phi = eta.exp();
        if !phi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "dispersion linear predictor {eta} overflows"
            )));
        }
        phi
    } else {
        0.0
    };
    Ok(ParamTriple { lambda, gamma, phi })
}

impl ParamTriple {
    pub fn new(lambda: f64, gamma: f64, phi: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda = {lambda}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma = {gamma}")));
        }
        if !(phi >= 0.0 && phi.is_finite()) {
            return Err(Error::InvalidParameter(format!("phi = {phi}")));
        }
        Ok(ParamTriple { lambda, gamma, phi })
    }

    /// Conditional (frailty = 1) hazard `lambda * gamma * t^(gamma - 1)`.
    pub fn hazard(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("hazard needs t > 0, got {t}")));
        }
        Ok(self.lambda * self.gamma * t.powf(self.gamma - 1.0))
    }

    /// `Lambda(t) = lambda * t^gamma`; infinite at `t = inf`.
    pub fn cum_hazard(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            self.lambda * t.powf(self.gamma)
        }
    }

    /// `log S_m(t)` computed without cancellation for small `phi`.
    pub fn log_marginal_survivor(&self, t: f64) -> f64 {
        log_survivor_from_cum_hazard(self.cum_hazard(t), self.phi)
    }

    pub fn marginal_survivor(&self, t: f64) -> f64 {
        self.log_marginal_survivor(t).exp()
    }

    /// `-d log S_m / dt = hazard(t) * S_m(t)^phi`.
    pub fn marginal_hazard(&self, t: f64) -> Result<f64> {
        let h = self.hazard(t)?;
        if self.phi == 0.0 {
            return Ok(h);
        }
        Ok(h * (self.phi * self.log_marginal_survivor(t)).exp())
    }

    /// Solves `S_m(t) = 1/2`.
    pub fn median_time(&self) -> f64 {
        ((median_log_factor(self.phi) - self.lambda.ln()) / self.gamma).exp()
    }
}

/// `log c(phi)` where the median satisfies `lambda * t^gamma = c(phi)`:
/// `c = (2^phi - 1) / phi`, with `c(0) = log 2`.
pub(crate) fn median_log_factor(phi: f64) -> f64 {
    let ln2 = std::f64::consts::LN_2;
    if phi * ln2 < 1e-8 {
        // (2^phi - 1)/phi = ln2 * (1 + phi*ln2/2 + ...)
        ln2.ln() + (phi * ln2 / 2.0).ln_1p()
    } else {
        ((phi * ln2).exp_m1() / phi).ln()
    }
}

/// `log S_m` from the cumulative hazard: `-log1p(phi * Lambda) / phi`, with
/// the second-order expansion `-Lambda * (1 - phi * Lambda / 2)` when
/// `phi * Lambda` is tiny and the exact limit `-Lambda` at `phi = 0`.
pub fn log_survivor_from_cum_hazard(cum_hazard: f64, phi: f64) -> f64 {
    if phi == 0.0 {
        return -cum_hazard;
    }
    if cum_hazard.is_infinite() {
        return f64::NEG_INFINITY;
    }
    let x = phi * cum_hazard;
    if x < SMALL_FRAILTY {
        -cum_hazard * (1.0 - x / 2.0)
    } else {
        -x.ln_1p() / phi
    }
}
