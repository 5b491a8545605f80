//! Token-level probability rows back to word-level classes.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-token probability vectors, one row per position (`max_len` rows).
#[derive(Clone, Debug, PartialEq)]
pub struct ProbTable {
    pub rows: Array2<f64>,
}

pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

impl ProbTable {
    pub fn new(rows: Array2<f64>) -> Self {
        ProbTable { rows }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::Schema("probability rows have unequal widths".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let rows = Array2::from_shape_vec((rows.len(), classes), flat)
            .map_err(|e| Error::Schema(e.to_string()))?;
        Ok(ProbTable { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.rows.ncols()
    }

    pub fn validate(&self, num_classes: usize, max_len: usize) -> Result<()> {
        if self.num_classes() != num_classes {
            return Err(Error::Schema(format!(
                "rows have {} classes, expected {num_classes}",
                self.num_classes()
            )));
        }
        if self.len() != max_len {
            return Err(Error::Schema(format!("{} rows, expected {max_len}", self.len())));
        }
        for (i, row) in self.rows.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if !sum.is_finite() || (sum - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|&p| p < 0.0) {
                return Err(Error::Schema(format!("row {i} is not a distribution (sum {sum})")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Average,
    FirstToken,
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Aggregation::Average => "average",
            Aggregation::FirstToken => "first_token",
        })
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Aggregation::Average),
            "first_token" | "first" => Ok(Aggregation::FirstToken),
            o => Err(Error::Input(format!("unknown aggregation '{o}'"))),
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_span(probs: &ProbTable, span: (usize, usize)) -> Result<()> {
    if span.0 >= span.1 {
        return Err(Error::Invariant(format!("empty word span {span:?}")));
    }
    if span.1 > probs.len() {
        return Err(Error::Invariant(format!(
            "word span {span:?} exceeds {} rows",
            probs.len()
        )));
    }
    Ok(())
}

/// Mean of each word's token rows, then argmax.
pub fn aggregate_average(probs: &ProbTable, spans: &[(usize, usize)]) -> Result<Vec<usize>> {
    spans
        .iter()
        .map(|&(s, e)| {
            check_span(probs, (s, e))?;
            let mut mean = probs.rows.row(s).to_owned();
            for t in s + 1..e {
                mean += &probs.rows.row(t);
            }
            mean /= (e - s) as f64;
            Ok(argmax(mean.view()))
        })
        .collect()
}

/// Argmax of each word's first token row.
pub fn aggregate_first(probs: &ProbTable, spans: &[(usize, usize)]) -> Result<Vec<usize>> {
    spans
        .iter()
        .map(|&(s, e)| {
            check_span(probs, (s, e))?;
            Ok(argmax(probs.rows.row(s)))
        })
        .collect()
}

pub fn aggregate(method: Aggregation, probs: &ProbTable, spans: &[(usize, usize)]) -> Result<Vec<usize>> {
    match method {
        Aggregation::Average => aggregate_average(probs, spans),
        Aggregation::FirstToken => aggregate_first(probs, spans),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[[f64; 2]]) -> ProbTable {
        ProbTable::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn average_vs_first() {
        let t = table(&[[0.6, 0.4], [0.2, 0.8]]);
        assert_eq!(aggregate_average(&t, &[(0, 2)]).unwrap(), vec![1]);
        assert_eq!(aggregate_first(&t, &[(0, 2)]).unwrap(), vec![0]);
    }

    #[test]
    fn single_token_words_agree() {
        let t = table(&[[0.3, 0.7], [0.9, 0.1]]);
        let spans = [(0, 1), (1, 2)];
        assert_eq!(aggregate_average(&t, &spans).unwrap(), vec![1, 0]);
        assert_eq!(aggregate_first(&t, &spans).unwrap(), vec![1, 0]);
    }

    #[test]
    fn equal_rows_and_ties() {
        let t = table(&[[1.0, 0.0]; 3]);
        assert_eq!(aggregate_average(&t, &[(0, 3)]).unwrap(), vec![0]);
        let u = table(&[[0.5, 0.5], [0.5, 0.5]]);
        assert_eq!(aggregate_first(&u, &[(0, 2)]).unwrap(), vec![0]);
        assert_eq!(aggregate_average(&u, &[(0, 2)]).unwrap(), vec![0]);
    }

    #[test]
    fn empty_span_is_error() {
        let t = table(&[[1.0, 0.0]]);
        assert!(aggregate_average(&t, &[(0, 0)]).is_err());
        assert!(aggregate_first(&t, &[(0, 2)]).is_err());
    }

    #[test]
    fn validate_rows() {
        let t = table(&[[0.5, 0.5], [0.2, 0.8]]);
        t.validate(2, 2).unwrap();
        assert!(t.validate(2, 3).is_err());
        assert!(t.validate(3, 2).is_err());
        assert!(table(&[[0.5, 0.6]]).validate(2, 1).is_err());
    }
}
