//! Two-period panel data with a mixture treatment.
//!
//! A unit is untreated exactly when its treatment value is `0.0`; any
//! positive value in (0, 1] is a dose. Analysts who want a nonzero
//! background level treated as "untreated" must recode it to a literal 0
//! before loading.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Serialize;
use thiserror::Error;

use crate::rng::stream_rng;

pub const OUTCOME_PRE: &str = "y0";
pub const OUTCOME_POST: &str = "y1";
pub const TREATMENT: &str = "a";

/// Rows are numbered from 1, counting data rows only (the header is row 0).
#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: column `{column}` is empty")]
    MissingValue { row: usize, column: String },
    #[error("row {row}: column `{column}` is not a finite number")]
    NonNumericValue { row: usize, column: String },
    #[error("row {0}: treatment outside [0, 1]")]
    TreatmentOutOfRange(usize),
    #[error("need at least one treated (a > 0) and one untreated (a = 0) unit")]
    AllTreatedOrAllUntreated,
    #[error("need at least {folds} treated and {folds} untreated units, found {treated} and {untreated}")]
    TooFewUnitsPerStratum {
        folds: usize,
        treated: usize,
        untreated: usize,
    },
    #[error("fold count must be at least 2, got {0}")]
    TooFewFolds(usize),
    #[error("column lengths disagree: {0}")]
    LengthMismatch(String),
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    y0: Vec<f64>,
    y1: Vec<f64>,
    a: Vec<f64>,
    dy: Vec<f64>,
    /// Row-major `n × p`.
    x: Vec<f64>,
    covariate_names: Vec<String>,
}

impl PanelDataset {
    /// Build and validate a dataset. `x` is row-major with one row per unit.
    pub fn new(
        y0: Vec<f64>,
        y1: Vec<f64>,
        a: Vec<f64>,
        x: Vec<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let n = a.len();
        let p = covariate_names.len();
        if y0.len() != n || y1.len() != n || x.len() != n * p {
            return Err(DataError::LengthMismatch(format!(
                "y0={}, y1={}, a={}, x={} (p={p})",
                y0.len(),
                y1.len(),
                n,
                x.len()
            )));
        }
        let data = Self::assemble(y0, y1, a, x, covariate_names);
        data.validate()?;
        Ok(data)
    }

    /// Dataset holding only outcome changes (`y0 ≡ 0`, `y1 = dy`).
    pub fn from_changes(
        dy: Vec<f64>,
        a: Vec<f64>,
        x: Vec<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let y0 = vec![0.0; dy.len()];
        Self::new(y0, dy, a, x, covariate_names)
    }

    fn assemble(y0: Vec<f64>, y1: Vec<f64>, a: Vec<f64>, x: Vec<f64>, covariate_names: Vec<String>) -> Self {
        let dy = y1.iter().zip(&y0).map(|(post, pre)| post - pre).collect();
        Self {
            y0,
            y1,
            a,
            dy,
            x,
            covariate_names,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        for (i, &a) in self.a.iter().enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(DataError::TreatmentOutOfRange(i + 1));
            }
        }
        let p = self.n_covariates();
        for (i, row) in (0..self.len()).map(|i| (i, self.covariates(i))) {
            let bad = [("y0", self.y0[i]), ("y1", self.y1[i])]
                .into_iter()
                .map(|(c, v)| (c.to_string(), v))
                .chain((0..p).map(|j| (self.covariate_names[j].clone(), row[j])))
                .find(|(_, v)| !v.is_finite());
            if let Some((column, _)) = bad {
                return Err(DataError::NonNumericValue { row: i + 1, column });
            }
        }
        let treated = self.treated_count();
        if treated == 0 || treated == self.len() {
            return Err(DataError::AllTreatedOrAllUntreated);
        }
        Ok(())
    }

    /// Copy of the listed rows, without the mixture check. Training subsets
    /// restricted to one stratum are legitimate.
    pub fn select(&self, rows: &[usize]) -> Self {
        let p = self.n_covariates();
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let mut x = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            x.extend_from_slice(self.covariates(i));
        }
        Self {
            y0: pick(&self.y0),
            y1: pick(&self.y1),
            a: pick(&self.a),
            dy: pick(&self.dy),
            x,
            covariate_names: self.covariate_names.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    pub fn treatment(&self) -> &[f64] {
        &self.a
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    pub fn covariate_matrix(&self) -> &[f64] {
        &self.x
    }

    pub fn covariates(&self, i: usize) -> &[f64] {
        let p = self.n_covariates();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.a[i] > 0.0
    }

    pub fn treated(&self) -> Vec<bool> {
        self.a.iter().map(|&a| a > 0.0).collect()
    }

    pub fn treated_count(&self) -> usize {
        self.a.iter().filter(|&&a| a > 0.0).count()
    }

    pub fn treated_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_treated(i)).collect()
    }

    pub fn untreated_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_treated(i)).collect()
    }

    /// Write `y0,y1,a,<covariates>` with shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec![OUTCOME_PRE.to_string(), OUTCOME_POST.to_string(), TREATMENT.to_string()];
        header.extend(self.covariate_names.iter().cloned());
        writer.write_record(&header)?;
        for i in 0..self.len() {
            let mut record = vec![self.y0[i].to_string(), self.y1[i].to_string(), self.a[i].to_string()];
            record.extend(self.covariates(i).iter().map(f64::to_string));
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        self.write_csv(File::create(path)?)
    }
}

/// Columns beyond `y0,y1,a` in a CSV header, in file order.
pub fn extra_columns(path: impl AsRef<Path>) -> Result<Vec<String>, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader
        .headers()?
        .iter()
        .filter(|h| ![OUTCOME_PRE, OUTCOME_POST, TREATMENT].contains(h))
        .map(str::to_string)
        .collect())
}

/// Load and validate a panel from CSV. `covariates` names the covariate
/// columns to keep; an empty list gives the covariate-free panel.
pub fn load_csv(path: impl AsRef<Path>, covariates: &[String]) -> Result<PanelDataset, DataError> {
    read_csv(File::open(path)?, covariates)
}

pub fn read_csv<R: Read>(input: R, covariates: &[String]) -> Result<PanelDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let locate = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let y0_col = locate(OUTCOME_PRE)?;
    let y1_col = locate(OUTCOME_POST)?;
    let a_col = locate(TREATMENT)?;
    let x_cols = covariates.iter().map(|c| locate(c)).collect::<Result<Vec<_>, _>>()?;

    let mut y0 = Vec::new();
    let mut y1 = Vec::new();
    let mut a = Vec::new();
    let mut x = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record?;
        if record.len() != headers.len() {
            return Err(DataError::RaggedRow {
                row,
                expected: headers.len(),
                found: record.len(),
            });
        }
        let field = |col: usize| -> Result<f64, DataError> {
            let raw = record[col].trim();
            let column = headers[col].to_string();
            if raw.is_empty() {
                return Err(DataError::MissingValue { row, column });
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(DataError::NonNumericValue { row, column }),
            }
        };
        y0.push(field(y0_col)?);
        y1.push(field(y1_col)?);
        let dose = field(a_col)?;
        if !(0.0..=1.0).contains(&dose) {
            return Err(DataError::TreatmentOutOfRange(row));
        }
        a.push(dose);
        for &c in &x_cols {
            x.push(field(c)?);
        }
    }
    PanelDataset::new(y0, y1, a, x, covariates.to_vec())
}

/// Assignment of units to `K` cross-fitting folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    folds: usize,
}

impl FoldAssignment {
    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.fold_of[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.fold_of
    }

    /// Units in fold `k`, ascending.
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == k).collect()
    }

    /// Units outside fold `k`, ascending.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != k).collect()
    }
}

/// Stratified random partition: treated and untreated units are shuffled
/// separately and dealt round-robin, untreated continuing where the treated
/// deal stopped so fold sizes differ by at most one.
pub fn assign_folds(data: &PanelDataset, folds: usize, seed: u64) -> Result<FoldAssignment, DataError> {
    if folds < 2 {
        return Err(DataError::TooFewFolds(folds));
    }
    let mut treated = data.treated_rows();
    let mut untreated = data.untreated_rows();
    if treated.len() < folds || untreated.len() < folds {
        return Err(DataError::TooFewUnitsPerStratum {
            folds,
            treated: treated.len(),
            untreated: untreated.len(),
        });
    }
    let mut rng = stream_rng(seed, 0);
    treated.shuffle(&mut rng);
    untreated.shuffle(&mut rng);
    let mut fold_of = vec![0; data.len()];
    for (slot, &i) in treated.iter().chain(untreated.iter()).enumerate() {
        fold_of[i] = slot % folds;
    }
    Ok(FoldAssignment { fold_of, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn csv_with_a(a: &[&str]) -> String {
        let mut s = String::from("y0,y1,a,x1\n");
        for (i, v) in a.iter().enumerate() {
            s.push_str(&format!("{},{},{},{}\n", i, i as f64 * 1.5, v, i as f64 / 10.0));
        }
        s
    }

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn loads_mixture_treatment() {
        let data = read_csv(csv_with_a(&["0", "0.3", "0", "0.9"]).as_bytes(), &names(&["x1"])).unwrap();
        assert_eq!(data.treated(), vec![false, true, false, true]);
        assert_eq!(data.dy()[3], 4.5 - 3.0);
        assert_eq!(data.covariates(2), &[0.2]);
    }

    #[test]
    fn rejects_out_of_range_treatment() {
        let err = read_csv(csv_with_a(&["0", "1.2", "0.5"]).as_bytes(), &[]).unwrap_err();
        assert!(matches!(err, DataError::TreatmentOutOfRange(2)));
        let err = read_csv(csv_with_a(&["0", "-0.1"]).as_bytes(), &[]).unwrap_err();
        assert!(matches!(err, DataError::TreatmentOutOfRange(2)));
    }

    #[test]
    fn rejects_degenerate_mixture() {
        let err = read_csv(csv_with_a(&["0", "0", "0"]).as_bytes(), &[]).unwrap_err();
        assert!(matches!(err, DataError::AllTreatedOrAllUntreated));
        let err = read_csv(csv_with_a(&["0.2", "0.4"]).as_bytes(), &[]).unwrap_err();
        assert!(matches!(err, DataError::AllTreatedOrAllUntreated));
    }

    #[test]
    fn reports_column_and_row_problems() {
        let err = read_csv("y0,a\n1,0\n".as_bytes(), &[]).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(ref c) if c == "y1"));

        let err = read_csv(csv_with_a(&["0", "0.5"]).as_bytes(), &names(&["x9"])).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(ref c) if c == "x9"));

        let text = "y0,y1,a,x1\n0,1,0,0.1\n0,1,0.5,abc\n";
        let err = read_csv(text.as_bytes(), &names(&["x1"])).unwrap_err();
        assert!(matches!(err, DataError::NonNumericValue { row: 2, ref column } if column == "x1"));

        let text = "y0,y1,a\n0,1,0\n0,,0.5\n";
        let err = read_csv(text.as_bytes(), &[]).unwrap_err();
        assert!(matches!(err, DataError::MissingValue { row: 2, ref column } if column == "y1"));

        let text = "y0,y1,a\n0,1,0\n0,NaN,0.5\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &[]).unwrap_err(),
            DataError::NonNumericValue { row: 2, .. }
        ));

        let text = "y0,y1,a\n0,1,0\n0,1\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &[]).unwrap_err(),
            DataError::RaggedRow { row: 2, .. }
        ));
    }

    #[test]
    fn column_order_is_free() {
        let text = "x1,a,y1,y0\n0.5,0,2,1\n0.7,0.25,3,1\n";
        let data = read_csv(text.as_bytes(), &names(&["x1"])).unwrap();
        assert_eq!(data.dy(), &[1.0, 2.0]);
        assert_eq!(data.treatment(), &[0.0, 0.25]);
        assert_eq!(data.covariates(1), &[0.7]);
    }

    fn balanced(n_treated: usize, n_untreated: usize) -> PanelDataset {
        let n = n_treated + n_untreated;
        let a = (0..n).map(|i| if i < n_treated { 0.5 } else { 0.0 }).collect();
        PanelDataset::from_changes(vec![0.0; n], a, vec![], vec![]).unwrap()
    }

    #[test]
    fn folds_are_stratified_and_deterministic() {
        let data = balanced(5, 5);
        let folds = assign_folds(&data, 5, 1).unwrap();
        for k in 0..5 {
            let members = folds.members(k);
            assert_eq!(members.len(), 2);
            assert_eq!(members.iter().filter(|&&i| data.is_treated(i)).count(), 1);
        }
        assert_eq!(folds, assign_folds(&data, 5, 1).unwrap());
    }

    #[test]
    fn folds_need_enough_units() {
        let data = balanced(5, 5);
        assert!(matches!(
            assign_folds(&data, 6, 1),
            Err(DataError::TooFewUnitsPerStratum { treated: 5, .. })
        ));
        assert!(matches!(assign_folds(&data, 1, 1), Err(DataError::TooFewFolds(1))));
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(n_t in 5usize..80, n_u in 5usize..80, k in 2usize..6, seed in any::<u64>()) {
            let data = balanced(n_t, n_u);
            let folds = assign_folds(&data, k, seed).unwrap();
            let mut seen = vec![0usize; data.len()];
            for fold in 0..k {
                let members = folds.members(fold);
                let t = members.iter().filter(|&&i| data.is_treated(i)).count() as f64;
                prop_assert!((t - n_t as f64 / k as f64).abs() <= 1.0);
                prop_assert!(members.iter().any(|&i| data.is_treated(i)));
                prop_assert!(members.iter().any(|&i| !data.is_treated(i)));
                for i in members { seen[i] += 1; }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }

        #[test]
        fn csv_round_trip_is_exact(rows in proptest::collection::vec(
            (any::<f64>().prop_filter("finite", |v| v.is_finite()),
             -1e6f64..1e6, 0.0f64..=1.0, any::<f64>().prop_filter("finite", |v| v.is_finite())), 4..30)) {
            let mut a: Vec<f64> = rows.iter().map(|r| r.2).collect();
            a[0] = 0.0;
            if a[1] == 0.0 { a[1] = 0.5; }
            let y0: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let y1: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let x: Vec<f64> = rows.iter().map(|r| r.3).collect();
            let data = PanelDataset::new(y0, y1, a, x, names(&["z"])).unwrap();
            let mut buf = Vec::new();
            data.write_csv(&mut buf).unwrap();
            let back = read_csv(buf.as_slice(), &names(&["z"])).unwrap();
            prop_assert_eq!(back, data);
        }
    }
}
