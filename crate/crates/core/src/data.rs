//! Longitudinal data model: subjects observed over repeated sessions with an
//! outcome, a binary treatment and a row of adjusters whose first entry is the
//! intercept.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PegError, Result};

pub const INTERCEPT: &str = "(intercept)";

/// One person-session record.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRow {
    pub y: f64,
    pub a: f64,
    /// Adjusters with `h[0] == 1`.
    pub h: Vec<f64>,
}

/// All sessions of one subject, in session order.
#[derive(Debug, Clone)]
pub struct Subject {
    pub id: String,
    pub y: DVector<f64>,
    pub a: DVector<f64>,
    /// `J_i x K` adjuster matrix.
    pub h: DMatrix<f64>,
}

impl Subject {
    pub fn new(id: impl Into<String>, rows: &[SessionRow]) -> Result<Self> {
        let id = id.into();
        if rows.is_empty() {
            return Err(PegError::Dimension(format!("subject {id} has no sessions")));
        }
        let k = rows[0].h.len();
        for (j, r) in rows.iter().enumerate() {
            if r.h.len() != k {
                return Err(PegError::Dimension(format!(
                    "subject {id} session {j}: {} adjusters, expected {k}",
                    r.h.len()
                )));
            }
            if r.a != 0.0 && r.a != 1.0 {
                return Err(PegError::InvalidParameter(format!(
                    "subject {id} session {j}: treatment {} is not binary",
                    r.a
                )));
            }
            if (r.h[0] - 1.0).abs() > 0.0 {
                return Err(PegError::InvalidParameter(format!(
                    "subject {id} session {j}: first adjuster must be the intercept 1"
                )));
            }
            if !r.y.is_finite() || r.h.iter().any(|v| !v.is_finite()) {
                return Err(PegError::InvalidParameter(format!(
                    "subject {id} session {j}: non-finite value"
                )));
            }
        }
        let jn = rows.len();
        Ok(Subject {
            id,
            y: DVector::from_iterator(jn, rows.iter().map(|r| r.y)),
            a: DVector::from_iterator(jn, rows.iter().map(|r| r.a)),
            h: DMatrix::from_fn(jn, k, |j, c| rows[j].h[c]),
        })
    }

    pub fn sessions(&self) -> usize {
        self.y.len()
    }

    pub fn rows(&self) -> Vec<SessionRow> {
        (0..self.sessions())
            .map(|j| SessionRow {
                y: self.y[j],
                a: self.a[j],
                h: self.h.row(j).iter().cloned().collect(),
            })
            .collect()
    }

    /// `[H, a.H]`, the design whose coefficients are `(delta, psi)`.
    pub fn design(&self) -> DMatrix<f64> {
        let (jn, k) = self.h.shape();
        DMatrix::from_fn(jn, 2 * k, |j, c| {
            if c < k {
                self.h[(j, c)]
            } else {
                self.a[j] * self.h[(j, c - k)]
            }
        })
    }

    /// Residuals `y - [H, a.H] theta`.
    pub fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        let k = self.h.ncols();
        let delta = theta.rows(0, k);
        let psi = theta.rows(k, k);
        let hd = &self.h * delta;
        let hp = &self.h * psi;
        DVector::from_fn(self.sessions(), |j, _| {
            self.y[j] - hd[j] - self.a[j] * hp[j]
        })
    }
}

/// Immutable collection of subjects sharing the adjuster dimension `K`.
#[derive(Debug, Clone)]
pub struct Dataset {
    subjects: Vec<Subject>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(subjects: Vec<Subject>, names: Vec<String>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(PegError::Dimension("dataset has no subjects".into()));
        }
        let k = names.len();
        if let Some(s) = subjects.iter().find(|s| s.h.ncols() != k) {
            return Err(PegError::Dimension(format!(
                "subject {} has {} adjusters, expected {k}",
                s.id,
                s.h.ncols()
            )));
        }
        Ok(Dataset { subjects, names })
    }

    /// Builds a dataset with generated adjuster names `(intercept), h1, h2, ...`.
    pub fn from_subjects(subjects: Vec<Subject>) -> Result<Self> {
        let k = subjects.first().map(|s| s.h.ncols()).unwrap_or(0);
        let names = (0..k)
            .map(|c| if c == 0 { INTERCEPT.to_string() } else { format!("h{c}") })
            .collect();
        Self::new(subjects, names)
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Number of subjects.
    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    /// Adjuster dimension including the intercept.
    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn total_sessions(&self) -> usize {
        self.subjects.iter().map(Subject::sessions).sum()
    }

    pub fn max_sessions(&self) -> usize {
        self.subjects.iter().map(Subject::sessions).max().unwrap_or(0)
    }

    /// Common session count, if every subject has the same one.
    pub fn balanced_sessions(&self) -> Option<usize> {
        let j = self.subjects[0].sessions();
        self.subjects.iter().all(|s| s.sessions() == j).then_some(j)
    }

    /// Same subjects with every adjuster column divided by `scaling`.
    pub fn scaled(&self, scaling: &Scaling) -> Dataset {
        let subjects = self
            .subjects
            .iter()
            .map(|s| {
                let mut h = s.h.clone();
                for (c, f) in scaling.factors.iter().enumerate() {
                    h.column_mut(c).unscale_mut(*f);
                }
                Subject {
                    id: s.id.clone(),
                    y: s.y.clone(),
                    a: s.a.clone(),
                    h,
                }
            })
            .collect();
        Dataset {
            subjects,
            names: self.names.clone(),
        }
    }

    /// Stacked adjuster rows restricted to `columns`, and the stacked treatment.
    pub fn pooled(&self, columns: &ModelIndexSet) -> (DMatrix<f64>, DVector<f64>) {
        let nt = self.total_sessions();
        let cols = columns.indices();
        let mut x = DMatrix::zeros(nt, cols.len());
        let mut a = DVector::zeros(nt);
        let mut r = 0;
        for s in &self.subjects {
            for j in 0..s.sessions() {
                for (c, &src) in cols.iter().enumerate() {
                    x[(r, c)] = s.h[(j, src)];
                }
                a[r] = s.a[j];
                r += 1;
            }
        }
        (x, a)
    }
}

/// A sorted subset of adjuster columns that always contains the intercept.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ModelIndexSet(Vec<usize>);

impl ModelIndexSet {
    pub fn new(mut indices: Vec<usize>, k: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.first() != Some(&0) {
            return Err(PegError::InvalidParameter(
                "model index set must contain the intercept column 0".into(),
            ));
        }
        if let Some(&last) = indices.last() {
            if last >= k {
                return Err(PegError::InvalidParameter(format!(
                    "column index {last} out of range for K = {k}"
                )));
            }
        }
        Ok(ModelIndexSet(indices))
    }

    pub fn full(k: usize) -> Self {
        ModelIndexSet((0..k).collect())
    }

    pub fn intercept_only() -> Self {
        ModelIndexSet(vec![0])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.0.binary_search(&k).is_ok()
    }

    /// Position of column `k` within the set.
    pub fn position(&self, k: usize) -> Option<usize> {
        self.0.binary_search(&k).ok()
    }
}

impl TryFrom<Vec<usize>> for ModelIndexSet {
    type Error = String;
    fn try_from(v: Vec<usize>) -> std::result::Result<Self, String> {
        ModelIndexSet::new(v, usize::MAX).map_err(|e| e.to_string())
    }
}

impl From<ModelIndexSet> for Vec<usize> {
    fn from(m: ModelIndexSet) -> Self {
        m.0
    }
}

/// Per-column divisors used to put continuous adjusters on unit scale.
///
/// The intercept and binary columns keep factor 1; other columns are divided by
/// their pooled sample standard deviation. Coefficients on the scaled data are
/// `original * factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub factors: Vec<f64>,
}

impl Scaling {
    pub fn identity(k: usize) -> Self {
        Scaling { factors: vec![1.0; k] }
    }

    pub fn standardize(d: &Dataset) -> Self {
        let k = d.k();
        let nt = d.total_sessions() as f64;
        let mut factors = vec![1.0; k];
        for (c, f) in factors.iter_mut().enumerate().skip(1) {
            let values: Vec<f64> = d
                .subjects()
                .iter()
                .flat_map(|s| s.h.column(c).iter().cloned().collect::<Vec<_>>())
                .collect();
            if values.iter().all(|&v| v == 0.0 || v == 1.0) {
                continue;
            }
            let mean = values.iter().sum::<f64>() / nt;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nt - 1.0).max(1.0);
            if var > 0.0 {
                *f = var.sqrt();
            }
        }
        Scaling { factors }
    }

    /// Maps `(delta, psi)` on the original scale to the scaled data.
    pub fn theta_to_scaled(&self, theta: &DVector<f64>) -> DVector<f64> {
        let k = self.factors.len();
        DVector::from_fn(theta.len(), |i, _| theta[i] * self.factors[i % k])
    }
}

/// Column-to-role mapping for long-format CSV input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub id: String,
    pub time: String,
    pub outcome: String,
    pub treatment: String,
    /// Covariate columns in order; `None` takes every remaining column.
    pub covariates: Option<Vec<String>>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            id: "id".into(),
            time: "time".into(),
            outcome: "y".into(),
            treatment: "a".into(),
            covariates: None,
        }
    }
}

impl Schema {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let f = File::open(path)?;
        Ok(serde_json::from_reader(f)?)
    }
}

/// Reads a long-format CSV (one row per person-session) into a [`Dataset`].
///
/// The intercept column is prepended to the covariates and each subject's
/// sessions are sorted by the time column. Subjects keep the order of their
/// first appearance in the file.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PegError::Schema(format!("column `{name}` not found in header")))
    };
    let id_c = col(&schema.id)?;
    let time_c = col(&schema.time)?;
    let y_c = col(&schema.outcome)?;
    let a_c = col(&schema.treatment)?;
    let cov_names: Vec<String> = match &schema.covariates {
        Some(c) => c.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![id_c, time_c, y_c, a_c].contains(i))
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let cov_cols = cov_names
        .iter()
        .map(|n| col(n))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(f64, SessionRow)>> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // header is line 1
        let row = i + 2;
        let subject = rec.get(id_c).unwrap_or("").to_string();
        let num = |c: usize, name: &str| -> Result<f64> {
            rec.get(c)
                .filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("na"))
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| PegError::MissingValue {
                    row,
                    subject: subject.clone(),
                    column: name.to_string(),
                })
        };
        if subject.is_empty() {
            return Err(PegError::MissingValue {
                row,
                subject,
                column: schema.id.clone(),
            });
        }
        let time = num(time_c, &schema.time)?;
        let y = num(y_c, &schema.outcome)?;
        let a = num(a_c, &schema.treatment)?;
        if a != 0.0 && a != 1.0 {
            return Err(PegError::NonBinaryTreatment {
                row,
                subject,
                value: rec.get(a_c).unwrap_or("").to_string(),
            });
        }
        let mut h = Vec::with_capacity(cov_cols.len() + 1);
        h.push(1.0);
        for (c, name) in cov_cols.iter().zip(&cov_names) {
            h.push(num(*c, name)?);
        }
        if !groups.contains_key(&subject) {
            order.push(subject.clone());
        }
        groups.entry(subject).or_default().push((time, SessionRow { y, a, h }));
    }

    let subjects = order
        .into_iter()
        .map(|id| {
            let mut rows = groups.remove(&id).unwrap_or_default();
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            let rows: Vec<SessionRow> = rows.into_iter().map(|(_, r)| r).collect();
            Subject::new(id, &rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(cov_names);
    Dataset::new(subjects, names)
}

/// Blipped-down outcome `U_j = y_j - a_j h_j' psi`.
pub fn blipped_down(
    y: &DVector<f64>,
    a: &DVector<f64>,
    h: &DMatrix<f64>,
    psi: &DVector<f64>,
) -> Result<DVector<f64>> {
    if y.len() != a.len() || y.len() != h.nrows() || h.ncols() != psi.len() {
        return Err(PegError::Dimension(format!(
            "y: {}, a: {}, H: {}x{}, psi: {}",
            y.len(),
            a.len(),
            h.nrows(),
            h.ncols(),
            psi.len()
        )));
    }
    let blip = h * psi;
    Ok(DVector::from_fn(y.len(), |j, _| y[j] - a[j] * blip[j]))
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn zero_blip_is_identity(y in prop::collection::vec(-10.0..10.0f64, 1..6), seed in 0u64..1000) {
            let j = y.len();
            let a = DVector::from_fn(j, |i, _| ((seed >> i) & 1) as f64);
            let h = DMatrix::from_fn(j, 3, |r, c| if c == 0 { 1.0 } else { (r * c) as f64 * 0.1 });
            let y = DVector::from_vec(y);
            let u = blipped_down(&y, &a, &h, &DVector::zeros(3)).unwrap();
            prop_assert_eq!(u, y);
        }
    }
}
