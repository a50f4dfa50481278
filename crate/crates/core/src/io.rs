//! File formats: the interval data CSV, fit report bundles, and the CSV
//! tables written by the command-line tool.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{predict_median, wald_tests, FitResult, MedianPrediction};
use crate::model::evaluate_parameters;
use crate::selection::{information_criteria, ModelGridResult, StepwiseResult};
use crate::simulation::StudySummary;
use crate::turnbull::CurvePoint;

pub const REPORT_SCHEMA: &str = "icmpr.fit.v1";

fn parse_right(s: &str) -> Option<f64> {
    match s.trim() {
        "" => Some(f64::INFINITY),
        t if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("na") => Some(f64::INFINITY),
        t => t.parse().ok(),
    }
}

/// Reads interval data with columns `left`, `right` and numeric covariates.
///
/// A blank, `Inf` or `NA` right endpoint marks a right-censored row.
/// `time_offset` is subtracted from both endpoints; left endpoints that
/// fall below zero afterwards are set to zero. Each term `a:b` in
/// `interactions` adds the product of columns `a` and `b` as a new column.
pub fn read_data<R: Read>(reader: R, time_offset: f64, interactions: &[String]) -> Result<Dataset> {
    if !time_offset.is_finite() {
        return Err(Error::Input("time offset must be finite".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 0,
            column: name.into(),
            message: "required column is missing".into(),
        })
    };
    let (li, ri) = (find("left")?, find("right")?);
    let cov_idx: Vec<usize> = (0..headers.len()).filter(|&j| j != li && j != ri).collect();
    let mut names: Vec<String> = cov_idx.iter().map(|&j| headers[j].clone()).collect();

    let mut terms = Vec::new();
    for term in interactions {
        if names.contains(term) || terms.iter().any(|(t, _): &(String, Vec<usize>)| t == term) {
            continue;
        }
        let parts: Vec<&str> = term.split(':').collect();
        let idx = parts
            .iter()
            .map(|p| {
                names
                    .iter()
                    .position(|n| n == p)
                    .ok_or_else(|| Error::Input(format!("unknown covariate `{p}` in `{term}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if parts.len() < 2 {
            return Err(Error::Input(format!("`{term}` is not an interaction")));
        }
        terms.push((term.clone(), idx));
    }
    let n_raw = names.len();
    names.extend(terms.iter().map(|(t, _)| t.clone()));

    let (mut left, mut right, mut covs) = (Vec::new(), Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let err = |column: &str, message: String| Error::Parse {
            row,
            column: column.into(),
            message,
        };
        let field = |j: usize| rec.get(j).unwrap_or("");
        let a: f64 = field(li)
            .parse()
            .map_err(|_| err("left", format!("`{}` is not a number", field(li))))?;
        let b = parse_right(field(ri)).ok_or_else(|| err("right", format!("`{}` is not a number", field(ri))))?;
        if !a.is_finite() {
            return Err(err("left", "left endpoint must be finite".into()));
        }
        left.push((a - time_offset).max(0.0));
        right.push(b - time_offset);
        let mut x = Vec::with_capacity(names.len());
        for &j in &cov_idx {
            let v: f64 = field(j)
                .parse()
                .map_err(|_| err(&headers[j], format!("`{}` is not a number", field(j))))?;
            if !v.is_finite() {
                return Err(err(&headers[j], "covariate must be finite".into()));
            }
            x.push(v);
        }
        for (_, idx) in &terms {
            x.push(idx.iter().map(|&k| x[k]).product());
        }
        debug_assert_eq!(x.len(), n_raw + terms.len());
        covs.push(x);
    }
    Dataset::new(left, right, covs, names)
}

pub fn read_data_file(path: &Path, time_offset: f64, interactions: &[String]) -> Result<Dataset> {
    read_data(std::fs::File::open(path)?, time_offset, interactions)
}

/// Column indices for covariate names.
pub fn resolve_columns(data: &Dataset, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            data.column_names()
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::Input(format!("unknown covariate `{n}`")))
        })
        .collect()
}

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

pub fn read_scenario(path: &Path) -> Result<crate::simulation::Scenario> {
    let s: crate::simulation::Scenario = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    s.validate()?;
    Ok(s)
}

/// Six significant digits, `Inf`/`-Inf`/`NA` for non-finite values.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "NA".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    let rounded: f64 = format!("{x:.5e}").parse().unwrap_or(x);
    let a = rounded.abs();
    if a != 0.0 && !(1e-5..1e15).contains(&a) {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_else(|| "NA".into())
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
    /// Significant at the 5% level.
    pub star: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema: String,
    pub label: String,
    pub coefficients: Vec<CoefficientRow>,
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub fit: FitResult,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl ReportBundle {
    pub fn from_fit(fit: &FitResult) -> Self {
        let coefficients = match wald_tests(fit) {
            Ok(tests) => tests
                .into_iter()
                .map(|t| CoefficientRow {
                    star: t.significant(0.05),
                    name: t.name,
                    estimate: t.estimate,
                    se: finite(t.se),
                    z: finite(t.z),
                    p_value: finite(t.p_value),
                })
                .collect(),
            Err(_) => fit
                .coef_names
                .iter()
                .zip(fit.theta_hat.to_flat())
                .map(|(n, v)| CoefficientRow {
                    name: n.clone(),
                    estimate: v,
                    se: None,
                    z: None,
                    p_value: None,
                    star: false,
                })
                .collect(),
        };
        let (aic, bic) = information_criteria(fit.loglik, fit.k(), fit.n_obs);
        ReportBundle {
            schema: REPORT_SCHEMA.into(),
            label: fit.spec.label(&fit.column_names),
            coefficients,
            loglik: finite(fit.loglik),
            aic: finite(aic),
            bic: finite(bic),
            fit: fit.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: ReportBundle = serde_json::from_str(s)?;
        if b.schema != REPORT_SCHEMA {
            return Err(Error::Input(format!("unsupported report schema `{}`", b.schema)));
        }
        Ok(b)
    }

    pub fn coefficients_csv(&self) -> Result<Vec<u8>> {
        let rows = self
            .coefficients
            .iter()
            .map(|c| {
                vec![
                    c.name.clone(),
                    fmt_num(c.estimate),
                    fmt_opt(c.se),
                    fmt_opt(c.z),
                    fmt_opt(c.p_value),
                    if c.star { "*".into() } else { String::new() },
                ]
            })
            .collect();
        csv_bytes(&["coefficient", "estimate", "se", "z", "p_value", "signif"], rows)
    }
}

pub fn grid_csv(grid: &ModelGridResult) -> Result<Vec<u8>> {
    let mut rows: Vec<Vec<String>> = grid
        .rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.model_type.to_string(),
                r.structure.clone(),
                fmt_num(r.loglik),
                r.k.to_string(),
                fmt_num(r.aic),
                fmt_num(r.bic),
                fmt_opt(r.daic),
                fmt_opt(r.dbic),
                r.converged.to_string(),
            ]
        })
        .collect();
    for m in &grid.type_means {
        rows.push(vec![
            format!("{} mean", m.model_type),
            m.model_type.to_string(),
            "mean".into(),
            "NA".into(),
            "NA".into(),
            fmt_num(m.aic),
            fmt_num(m.bic),
            fmt_num(m.daic),
            fmt_num(m.dbic),
            format!("{} fits", m.count),
        ]);
    }
    csv_bytes(
        &["model", "type", "structure", "loglik", "k", "AIC", "BIC", "dAIC", "dBIC", "converged"],
        rows,
    )
}

pub fn stepwise_csv(result: &StepwiseResult, column_names: &[String]) -> Result<Vec<u8>> {
    let mut rows = vec![vec![
        "0".into(),
        "start".into(),
        String::new(),
        String::new(),
        String::new(),
        fmt_num(result.start_value),
    ]];
    for s in &result.trace {
        let comps: Vec<&str> = s.accepted.components.iter().map(|c| c.name()).collect();
        rows.push(vec![
            s.round.to_string(),
            format!("{:?}", s.accepted.kind).to_lowercase(),
            column_names.get(s.accepted.column).cloned().unwrap_or_default(),
            comps.join("+"),
            s.spec.label(column_names),
            fmt_num(s.criterion),
        ]);
    }
    csv_bytes(
        &["round", "move", "covariate", "components", "model", &result.criterion.to_string()],
        rows,
    )
}

pub fn npmle_csv(curve: &[CurvePoint]) -> Result<Vec<u8>> {
    let rows = curve
        .iter()
        .map(|p| vec![fmt_num(p.time), fmt_num(p.upper), fmt_num(p.lower)])
        .collect();
    csv_bytes(&["time", "S_upper", "S_lower"], rows)
}

pub fn study_csv(s: &StudySummary) -> Result<Vec<u8>> {
    let rows = s
        .coefficients
        .iter()
        .chain(s.phi.iter())
        .map(|c| {
            vec![
                c.name.clone(),
                fmt_num(c.truth),
                fmt_num(c.median),
                fmt_num(c.mean),
                fmt_num(c.empirical_se),
                fmt_opt(c.mean_model_se),
                fmt_num(c.pct_bias),
                s.converged.to_string(),
                s.replicates.to_string(),
                fmt_num(s.convergence_rate),
                fmt_num(s.realized_censoring),
            ]
        })
        .collect();
    csv_bytes(
        &[
            "coefficient",
            "truth",
            "median",
            "mean",
            "empirical_se",
            "mean_model_se",
            "pct_bias",
            "converged",
            "replicates",
            "convergence_rate",
            "realized_censoring",
        ],
        rows,
    )
}

/// A named covariate assignment; unnamed columns are zero and interaction
/// columns `a:b` default to the product of their parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub values: Vec<(String, f64)>,
}

impl Group {
    /// Parses `name:col=v,col=v`.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Input(format!("group `{s}` must look like name:col=value,...")))?;
        let mut values = Vec::new();
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("`{part}` must look like col=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Input(format!("`{v}` is not a number in group `{name}`")))?;
            values.push((k.trim().to_string(), v));
        }
        Ok(Group {
            name: name.trim().to_string(),
            values,
        })
    }

    pub fn row(&self, column_names: &[String]) -> Result<Vec<f64>> {
        for (k, _) in &self.values {
            if !column_names.contains(k) {
                return Err(Error::Input(format!("group `{}`: unknown covariate `{k}`", self.name)));
            }
        }
        let lookup = |c: &str| self.values.iter().find(|(k, _)| k == c).map(|(_, v)| *v);
        Ok(column_names
            .iter()
            .map(|c| {
                lookup(c).unwrap_or_else(|| {
                    if c.contains(':') {
                        c.split(':').map(|p| lookup(p).unwrap_or(0.0)).product()
                    } else {
                        0.0
                    }
                })
            })
            .collect())
    }
}

/// `start:end:n` (n evenly spaced points) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Input(format!("cannot parse time grid `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    let grid: Vec<f64> = if parts.len() == 3 {
        let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if n < 2 {
            return Err(bad());
        }
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    } else {
        s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if grid.is_empty() || grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::Input("time grid points must be positive and finite".into()));
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub group: String,
    pub time: f64,
    pub hazard: f64,
    pub marginal_hazard: f64,
    pub marginal_survivor: f64,
    /// Ratios against the reference group at the same time.
    pub hazard_ratio: f64,
    pub marginal_hazard_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub group: String,
    pub prediction: MedianPrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub reference: String,
    pub curves: Vec<CurveRow>,
    pub medians: Vec<MedianRow>,
}

/// Hazard, marginal hazard and marginal survivor curves per group, ratios
/// against `reference`, and median survival times with 95% intervals.
pub fn predict(fit: &FitResult, groups: &[Group], grid: &[f64], reference: &str) -> Result<Prediction> {
    let ref_group = groups
        .iter()
        .find(|g| g.name == reference)
        .ok_or_else(|| Error::Input(format!("reference group `{reference}` is not defined")))?;
    let params_of = |g: &Group| evaluate_parameters(&fit.spec, &fit.theta_hat, &g.row(&fit.column_names)?);
    let ref_p = params_of(ref_group)?;
    let mut curves = Vec::with_capacity(groups.len() * grid.len());
    let mut medians = Vec::with_capacity(groups.len());
    for g in groups {
        let p = params_of(g)?;
        for &t in grid {
            let (h, mh) = (p.hazard(t)?, p.marginal_hazard(t)?);
            curves.push(CurveRow {
                group: g.name.clone(),
                time: t,
                hazard: h,
                marginal_hazard: mh,
                marginal_survivor: p.marginal_survivor(t),
                hazard_ratio: h / ref_p.hazard(t)?,
                marginal_hazard_ratio: mh / ref_p.marginal_hazard(t)?,
            });
        }
        medians.push(MedianRow {
            group: g.name.clone(),
            prediction: predict_median(fit, &g.row(&fit.column_names)?)?,
        });
    }
    Ok(Prediction {
        reference: reference.into(),
        curves,
        medians,
    })
}

pub fn curves_csv(p: &Prediction) -> Result<Vec<u8>> {
    let rows = p
        .curves
        .iter()
        .map(|c| {
            vec![
                c.group.clone(),
                fmt_num(c.time),
                fmt_num(c.hazard),
                fmt_num(c.marginal_hazard),
                fmt_num(c.marginal_survivor),
                fmt_num(c.hazard_ratio),
                fmt_num(c.marginal_hazard_ratio),
            ]
        })
        .collect();
    csv_bytes(
        &[
            "group",
            "time",
            "hazard",
            "marginal_hazard",
            "marginal_survivor",
            "hazard_ratio",
            "marginal_hazard_ratio",
        ],
        rows,
    )
}

pub fn medians_csv(p: &Prediction) -> Result<Vec<u8>> {
    let rows = p
        .medians
        .iter()
        .map(|m| {
            let (lo, hi) = m.prediction.ci.map_or((None, None), |(l, h)| (Some(l), Some(h)));
            vec![m.group.clone(), fmt_num(m.prediction.median), fmt_opt(lo), fmt_opt(hi)]
        })
        .collect();
    csv_bytes(&["group", "median", "ci_lower", "ci_upper"], rows)
}
