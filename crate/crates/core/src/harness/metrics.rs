use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower-triangular accuracy matrix: `rows[t-1][j-1]` is the accuracy on task
/// `j`'s test split after training task `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub rows: Vec<Vec<f64>>,
}

/// Assembles the matrix from `(after_task, accuracies on tasks 1..=after_task)`
/// entries. Every row `1..=max task` must be present and complete.
pub fn accuracy_matrix(evals: &[(usize, Vec<f64>)]) -> Result<AccuracyMatrix> {
    let tasks = evals.iter().map(|(t, _)| *t).max().unwrap_or(0);
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; tasks];
    for (t, acc) in evals {
        if *t == 0 {
            return Err(Error::InvalidArgument("task indices start at 1".into()));
        }
        rows[t - 1] = Some(acc.clone());
    }
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let t = i + 1;
            let r = r.ok_or(Error::MissingEvaluation { after: t, task: 1 })?;
            if r.len() < t {
                return Err(Error::MissingEvaluation { after: t, task: r.len() + 1 });
            }
            Ok(r[..t].to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AccuracyMatrix { rows })
}

impl AccuracyMatrix {
    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    /// Mean of row `t` (accuracy over all tasks seen after training task `t`).
    pub fn average(&self, after_task: usize) -> f64 {
        let r = &self.rows[after_task - 1];
        r.iter().sum::<f64>() / r.len() as f64
    }

    pub fn averages(&self) -> Vec<f64> {
        (1..=self.tasks()).map(|t| self.average(t)).collect()
    }

    pub fn final_average(&self) -> f64 {
        self.average(self.tasks())
    }

    /// `max_{l ≤ t} A[l][i] - A[t][i]` for each task `i ≤ t`.
    pub fn forgetting(&self, after_task: usize) -> Vec<f64> {
        (1..=after_task)
            .map(|i| {
                let best = (i..=after_task)
                    .map(|l| self.rows[l - 1][i - 1])
                    .fold(f64::NEG_INFINITY, f64::max);
                best - self.rows[after_task - 1][i - 1]
            })
            .collect()
    }
}
