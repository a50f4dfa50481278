use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interval-censored observations `(left, right]` with a covariate matrix.
///
/// `right = +inf` marks a right-censored subject. Times are already
/// offset-adjusted. Covariates are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    left: Vec<f64>,
    #[serde(with = "right_endpoints")]
    right: Vec<f64>,
    covariates: Vec<f64>,
    column_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        left: Vec<f64>,
        right: Vec<f64>,
        covariates: Vec<Vec<f64>>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = left.len();
        if right.len() != n || covariates.len() != n {
            return Err(Error::Input(format!(
                "length mismatch: {} left, {} right, {} covariate rows",
                n,
                right.len(),
                covariates.len()
            )));
        }
        let m = column_names.len();
        let mut flat = Vec::with_capacity(n * m);
        for (i, row) in covariates.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Input(format!(
                    "row {i} has {} covariates, expected {m}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(left, right, flat, column_names)
    }

    pub fn from_flat(
        left: Vec<f64>,
        right: Vec<f64>,
        covariates: Vec<f64>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = left.len();
        let m = column_names.len();
        if right.len() != n || covariates.len() != n * m {
            return Err(Error::Input("dataset dimensions do not agree".into()));
        }
        for i in 0..n {
            let (a, b) = (left[i], right[i]);
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::Input(format!("row {i}: left endpoint {a} must be finite and >= 0")));
            }
            if !(b > a) || b.is_nan() {
                return Err(Error::Input(format!("row {i}: right endpoint {b} must exceed left {a}")));
            }
        }
        if let Some(k) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "row {}, column `{}`: covariate is not finite",
                k / m.max(1),
                column_names[k % m.max(1)]
            )));
        }
        Ok(Dataset {
            left,
            right,
            covariates,
            column_names,
        })
    }

    /// Dataset without covariates.
    pub fn intervals(left: Vec<f64>, right: Vec<f64>) -> Result<Self> {
        Self::from_flat(left, right, Vec::new(), Vec::new())
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn left(&self) -> &[f64] {
        &self.left
    }

    pub fn right(&self) -> &[f64] {
        &self.right
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.n_cols();
        &self.covariates[i * m..(i + 1) * m]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.row(i)[j]).collect()
    }

    pub fn is_right_censored(&self, i: usize) -> bool {
        self.right[i].is_infinite()
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..self.len()).filter(|&i| self.is_right_censored(i)).count() as f64 / self.len() as f64
    }

    /// Reorders covariate columns: new column `k` is old column `order[k]`.
    pub fn permute_columns(&self, order: &[usize]) -> Result<Self> {
        let m = self.n_cols();
        let mut seen = vec![false; m];
        if order.len() != m || order.iter().any(|&j| j >= m || std::mem::replace(&mut seen[j], true)) {
            return Err(Error::Input("column order is not a permutation".into()));
        }
        let mut flat = Vec::with_capacity(self.covariates.len());
        for i in 0..self.len() {
            let row = self.row(i);
            flat.extend(order.iter().map(|&j| row[j]));
        }
        let names = order.iter().map(|&j| self.column_names[j].clone()).collect();
        Self::from_flat(self.left.clone(), self.right.clone(), flat, names)
    }

    /// Appends rows of `other`, which must have the same columns.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.column_names != other.column_names {
            return Err(Error::Input("datasets have different columns".into()));
        }
        let cat = |a: &[f64], b: &[f64]| [a, b].concat();
        Self::from_flat(
            cat(&self.left, &other.left),
            cat(&self.right, &other.right),
            cat(&self.covariates, &other.covariates),
            self.column_names.clone(),
        )
    }
}

/// JSON has no infinity; right-censored endpoints are written as `null`.
mod right_endpoints {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_intervals() {
        assert!(Dataset::intervals(vec![1.0], vec![1.0]).is_err());
        assert!(Dataset::intervals(vec![-0.5], vec![1.0]).is_err());
        assert!(Dataset::intervals(vec![2.0], vec![1.0]).is_err());
        assert!(Dataset::intervals(vec![0.0], vec![f64::INFINITY]).is_ok());
    }

    #[test]
    fn json_round_trip_keeps_infinity() {
        let d = Dataset::new(
            vec![0.0, 1.5],
            vec![2.0, f64::INFINITY],
            vec![vec![1.0], vec![0.0]],
            vec!["x".into()],
        )
        .unwrap();
        let s = serde_json::to_string(&d).unwrap();
        let back: Dataset = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        assert!(back.is_right_censored(1));
    }

    #[test]
    fn permutation_moves_columns() {
        let d = Dataset::new(
            vec![0.0],
            vec![1.0],
            vec![vec![1.0, 2.0, 3.0]],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let p = d.permute_columns(&[2, 0, 1]).unwrap();
        assert_eq!(p.row(0), &[3.0, 1.0, 2.0]);
        assert_eq!(p.column_names(), &["c", "a", "b"]);
        assert!(d.permute_columns(&[0, 0, 1]).is_err());
    }
}
