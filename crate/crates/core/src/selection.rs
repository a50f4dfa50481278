//! Information criteria, the model-type by covariate-structure grid, and
//! greedy stepwise covariate selection across regression components.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{fit, fit_from, FitOptions, FitResult};
use crate::model::{Component, ModelSpec, ModelType};

/// `(AIC, BIC)` with `AIC = -2l + 2k` and `BIC = -2l + k log n`, where `n`
/// counts subjects.
pub fn information_criteria(loglik: f64, k: usize, n: usize) -> (f64, f64) {
    let k = k as f64;
    let dev = -2.0 * loglik;
    (dev + 2.0 * k, dev + k * (n.max(1) as f64).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "AIC")]
    Aic,
    #[serde(rename = "BIC")]
    Bic,
}

impl Criterion {
    pub fn of(self, fit: &FitResult) -> f64 {
        let (aic, bic) = information_criteria(fit.loglik, fit.k(), fit.n_obs);
        match self {
            Criterion::Aic => aic,
            Criterion::Bic => bic,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Aic => "AIC",
            Criterion::Bic => "BIC",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AIC" => Ok(Criterion::Aic),
            "BIC" => Ok(Criterion::Bic),
            _ => Err(Error::Input(format!("unknown criterion `{s}`"))),
        }
    }
}

/// Covariates offered to each regression component. Components a model type
/// lacks are emptied when the structure is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateStructure {
    pub label: String,
    pub scale: Vec<usize>,
    pub shape: Vec<usize>,
    pub disp: Vec<usize>,
}

impl CovariateStructure {
    /// Same covariates in every component.
    pub fn uniform(label: impl Into<String>, idx: &[usize]) -> Self {
        CovariateStructure {
            label: label.into(),
            scale: idx.to_vec(),
            shape: idx.to_vec(),
            disp: idx.to_vec(),
        }
    }

    pub fn spec_for(&self, model_type: ModelType) -> ModelSpec {
        let keep = |on: bool, v: &Vec<usize>| if on { v.clone() } else { Vec::new() };
        ModelSpec {
            model_type,
            scale_idx: self.scale.clone(),
            shape_idx: keep(model_type.shape_regression(), &self.shape),
            disp_idx: keep(model_type.dispersion_regression(), &self.disp),
            time_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub label: String,
    pub model_type: ModelType,
    pub structure: String,
    pub loglik: f64,
    pub k: usize,
    pub aic: f64,
    pub bic: f64,
    /// `None` for non-convergent fits, which are excluded from the minima.
    pub daic: Option<f64>,
    pub dbic: Option<f64>,
    pub converged: bool,
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMeans {
    pub model_type: ModelType,
    pub aic: f64,
    pub bic: f64,
    pub daic: f64,
    pub dbic: f64,
    /// Number of convergent fits averaged.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGridResult {
    pub rows: Vec<GridRow>,
    pub type_means: Vec<TypeMeans>,
}

impl ModelGridResult {
    pub fn best_by(&self, criterion: Criterion) -> Option<&GridRow> {
        let key = |r: &GridRow| match criterion {
            Criterion::Aic => r.aic,
            Criterion::Bic => r.bic,
        };
        self.rows
            .iter()
            .filter(|r| r.converged)
            .min_by(|a, b| key(a).total_cmp(&key(b)))
    }
}

/// Fits every (type, structure) combination and tabulates criteria.
pub fn fit_model_grid(
    data: &Dataset,
    structures: &[CovariateStructure],
    types: &[ModelType],
    opts: &FitOptions,
) -> Result<ModelGridResult> {
    let combos: Vec<(ModelType, &CovariateStructure)> = types
        .iter()
        .flat_map(|&t| structures.iter().map(move |s| (t, s)))
        .collect();
    for (t, s) in &combos {
        s.spec_for(*t).validate(data.n_cols())?;
    }
    let fits: Vec<Result<FitResult>> = combos
        .par_iter()
        .map(|(t, s)| fit(&s.spec_for(*t), data, opts))
        .collect();

    let mut rows = Vec::with_capacity(combos.len());
    for ((t, s), f) in combos.iter().zip(fits) {
        let f = f?;
        let (aic, bic) = information_criteria(f.loglik, f.k(), f.n_obs);
        rows.push(GridRow {
            label: format!("{}({})", t, s.label),
            model_type: *t,
            structure: s.label.clone(),
            loglik: f.loglik,
            k: f.k(),
            aic,
            bic,
            daic: None,
            dbic: None,
            converged: f.converged,
            fit: f,
        });
    }
    let min_of = |key: fn(&GridRow) -> f64| {
        rows.iter()
            .filter(|r| r.converged)
            .map(key)
            .fold(f64::INFINITY, f64::min)
    };
    let (min_aic, min_bic) = (min_of(|r| r.aic), min_of(|r| r.bic));
    for r in rows.iter_mut().filter(|r| r.converged) {
        r.daic = Some(r.aic - min_aic);
        r.dbic = Some(r.bic - min_bic);
    }

    let mut type_means = Vec::new();
    for &t in types {
        let sel: Vec<&GridRow> = rows.iter().filter(|r| r.model_type == t && r.converged).collect();
        if sel.is_empty() {
            continue;
        }
        let m = sel.len() as f64;
        let mean = |key: fn(&GridRow) -> f64| sel.iter().map(|r| key(r)).sum::<f64>() / m;
        type_means.push(TypeMeans {
            model_type: t,
            aic: mean(|r| r.aic),
            bic: mean(|r| r.bic),
            daic: mean(|r| r.daic.unwrap_or(f64::NAN)),
            dbic: mean(|r| r.dbic.unwrap_or(f64::NAN)),
            count: sel.len(),
        });
    }
    Ok(ModelGridResult { rows, type_means })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    #[serde(rename = "add")]
    Add,
    #[serde(rename = "drop")]
    Drop,
}

/// Adding or dropping one covariate in one or more components at once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub kind: MoveKind,
    pub column: usize,
    pub components: Vec<Component>,
}

impl Move {
    fn apply(&self, spec: &ModelSpec) -> ModelSpec {
        let mut out = spec.clone();
        for &c in &self.components {
            let idx = out.indices_mut(c);
            match self.kind {
                MoveKind::Add => idx.push(self.column),
                MoveKind::Drop => idx.retain(|&j| j != self.column),
            }
        }
        out
    }

    /// Tie-break ordering: scale < shape < dispersion, singles first.
    fn component_key(&self) -> Vec<Component> {
        let mut v = self.components.clone();
        v.sort();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub round: usize,
    pub accepted: Move,
    pub spec: ModelSpec,
    pub criterion: f64,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseResult {
    pub criterion: Criterion,
    pub start_value: f64,
    pub best: FitResult,
    pub best_value: f64,
    pub trace: Vec<StepRecord>,
    /// Candidate moves whose fit failed or did not converge.
    pub skipped: Vec<(usize, Move)>,
}

fn candidate_moves(spec: &ModelSpec, candidates: &[usize]) -> Vec<Move> {
    let comps = spec.regression_components();
    let n = comps.len();
    let mut subsets: Vec<Vec<Component>> = (1u32..(1 << n))
        .map(|mask| (0..n).filter(|b| mask & (1 << b) != 0).map(|b| comps[b]).collect())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    let mut moves = Vec::new();
    for &col in candidates {
        for set in &subsets {
            let present: Vec<bool> = set.iter().map(|&c| spec.indices(c).contains(&col)).collect();
            let kind = if present.iter().all(|p| !p) {
                MoveKind::Add
            } else if present.iter().all(|p| *p) {
                MoveKind::Drop
            } else {
                continue;
            };
            moves.push(Move {
                kind,
                column: col,
                components: set.clone(),
            });
        }
    }
    moves
}

/// Greedy stepwise selection. Each round tries adding or dropping each
/// candidate covariate in every single component and every combination of
/// components, keeps the move with the lowest criterion, and stops when no
/// move improves on the current model. Candidate fits start from the
/// current estimates.
pub fn stepwise(
    spec_start: &ModelSpec,
    data: &Dataset,
    candidates: &[usize],
    criterion: Criterion,
    opts: &FitOptions,
) -> Result<StepwiseResult> {
    let mut current = fit(spec_start, data, opts)?;
    let start_value = criterion.of(&current);
    let mut value = start_value;
    let mut trace = Vec::new();
    let mut skipped = Vec::new();
    let mut round = 0;
    loop {
        round += 1;
        let moves = candidate_moves(&current.spec, candidates);
        let results: Vec<(Move, Result<FitResult>)> = moves
            .into_par_iter()
            .map(|mv| {
                let spec = mv.apply(&current.spec);
                let start = current.theta_hat.transfer(&current.spec, &spec);
                let r = fit_from(&spec, data, opts, &start);
                (mv, r)
            })
            .collect();
        let mut best: Option<(Move, FitResult, f64)> = None;
        for (mv, r) in results {
            let f = match r {
                Ok(f) if f.converged => f,
                _ => {
                    skipped.push((round, mv));
                    continue;
                }
            };
            let v = criterion.of(&f);
            let better = match &best {
                None => true,
                Some((bm, bf, bv)) => {
                    v < *bv
                        || (v == *bv
                            && (f.k(), mv.component_key(), mv.column)
                                < (bf.k(), bm.component_key(), bm.column))
                }
            };
            if better {
                best = Some((mv, f, v));
            }
        }
        match best {
            Some((mv, f, v)) if v < value => {
                trace.push(StepRecord {
                    round,
                    accepted: mv,
                    spec: f.spec.clone(),
                    criterion: v,
                    loglik: f.loglik,
                });
                value = v;
                current = f;
            }
            _ => break,
        }
    }
    Ok(StepwiseResult {
        criterion,
        start_value,
        best: current,
        best_value: value,
        trace,
        skipped,
    })
}
