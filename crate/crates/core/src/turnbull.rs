//! Nonparametric maximum likelihood estimate of the survivor function for
//! interval-censored data (self-consistency iteration).

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// One support interval `(left, right]` carrying probability mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportInterval {
    pub left: f64,
    #[serde(with = "inf_as_null")]
    pub right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnbullEstimate {
    pub support: Vec<SupportInterval>,
    pub masses: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Log-likelihood after each iteration.
    pub loglik_trace: Vec<f64>,
}

/// Innermost intervals: a left endpoint immediately followed, in the sorted
/// list of all endpoints, by a right endpoint. An infinite right endpoint
/// counts as a right endpoint.
pub fn turnbull_support(data: &Dataset) -> Vec<SupportInterval> {
    // (value, is_right). Rights sort before lefts at ties: (a, t] and
    // (t, b] do not overlap.
    let mut ends: Vec<(f64, bool)> = data
        .left()
        .iter()
        .map(|&l| (l, false))
        .chain(data.right().iter().map(|&r| (r, true)))
        .collect();
    ends.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut out = Vec::new();
    for w in ends.windows(2) {
        let ((l, lr), (r, rr)) = (w[0], w[1]);
        if !lr && rr && r > l {
            out.push(SupportInterval { left: l, right: r });
        }
    }
    out
}

fn incidence(data: &Dataset, support: &[SupportInterval]) -> Vec<Vec<usize>> {
    (0..data.len())
        .map(|i| {
            let (a, b) = (data.left()[i], data.right()[i]);
            support
                .iter()
                .enumerate()
                .filter(|(_, s)| s.left >= a && s.right <= b)
                .map(|(k, _)| k)
                .collect()
        })
        .collect()
}

fn loglik(alpha: &[Vec<usize>], q: &[f64]) -> f64 {
    alpha.iter().map(|row| row.iter().map(|&k| q[k]).sum::<f64>().ln()).sum()
}

/// EM iteration until the largest mass change falls below `tol`.
pub fn turnbull_fit(data: &Dataset, tol: f64, max_iter: usize) -> Result<TurnbullEstimate> {
    if data.is_empty() {
        return Err(Error::Input("no observations".into()));
    }
    if data.right().iter().all(|r| r.is_infinite()) {
        return Err(Error::Input("every observation is right-censored; survivor not estimable".into()));
    }
    let support = turnbull_support(data);
    let alpha = incidence(data, &support);
    if let Some(i) = alpha.iter().position(|r| r.is_empty()) {
        return Err(Error::Input(format!("observation {i} contains no support interval")));
    }
    let m = support.len();
    let n = data.len() as f64;
    let mut q = vec![1.0 / m as f64; m];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut next = vec![0.0; m];
        for row in &alpha {
            let denom: f64 = row.iter().map(|&k| q[k]).sum();
            for &k in row {
                next[k] += q[k] / denom;
            }
        }
        next.iter_mut().for_each(|v| *v /= n);
        let delta = q.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = next;
        trace.push(loglik(&alpha, &q));
        if delta < tol {
            converged = true;
            break;
        }
    }
    Ok(TurnbullEstimate {
        support,
        masses: q,
        converged,
        iterations,
        loglik_trace: trace,
    })
}

impl TurnbullEstimate {
    /// Bounds on `S(t)`: the NPMLE is unique only up to how mass is spread
    /// inside each support interval. Upper puts it at the right end.
    pub fn survivor(&self, t: f64) -> (f64, f64) {
        let mut upper = 0.0;
        let mut lower = 0.0;
        for (s, &q) in self.support.iter().zip(&self.masses) {
            if s.right > t {
                upper += q;
            }
            if s.left >= t {
                lower += q;
            }
        }
        (upper.min(1.0), lower.min(1.0))
    }

    /// Survivor band at 0, every finite support endpoint, and the midpoint
    /// of every finite support interval.
    pub fn curve(&self) -> Vec<CurvePoint> {
        let mut ts = vec![0.0];
        for s in &self.support {
            ts.push(s.left);
            if s.right.is_finite() {
                ts.push(s.right);
                ts.push(0.5 * (s.left + s.right));
            }
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts.into_iter()
            .map(|t| {
                let (upper, lower) = self.survivor(t);
                CurvePoint { time: t, upper, lower }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub time: f64,
    pub upper: f64,
    pub lower: f64,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        v.is_finite().then_some(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
