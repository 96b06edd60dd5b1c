//! Small labeled-matrix container shared by the similarity, MAD, and
//! mutual-information reports.

use serde::{Deserialize, Serialize};

/// Aggregation level for pairwise corpus matrices.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum GroupBy {
    Class,
    Variant,
}

impl std::str::FromStr for GroupBy {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "class" => Ok(GroupBy::Class),
            "variant" => Ok(GroupBy::Variant),
            other => Err(crate::error::Error::config(format!(
                "unknown grouping '{other}' (expected class or variant)"
            ))),
        }
    }
}

/// A dense matrix with row and column labels, as written to CSV reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl LabeledMatrix {
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, values: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(row_labels.len(), values.len());
        debug_assert!(values.iter().all(|r| r.len() == col_labels.len()));
        LabeledMatrix {
            row_labels,
            col_labels,
            values,
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.values.len();
        self.col_labels == self.row_labels
            && (0..n).all(|i| {
                (0..n).all(|j| (self.values[i][j] - self.values[j][i]).abs() <= tol)
            })
    }
}
