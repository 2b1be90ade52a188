//! Voltage-to-reactive-power sensitivity by nodal perturbation, and the
//! Pearson correlation of its columns.

use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::matrix::Matrix;
use crate::powerflow::{self, PowerFlowSolution, SolverConfig};

pub const DEFAULT_PERTURBATION_VAR: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityConfig {
    /// Reactive perturbation ΔQ applied at one node per solve, var.
    pub perturbation_var: f64,
    pub solver: SolverConfig,
    /// Run the per-node perturbation solves on the rayon pool.
    pub parallel: bool,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            perturbation_var: DEFAULT_PERTURBATION_VAR,
            solver: SolverConfig {
                tolerance: 1e-10,
                ..Default::default()
            },
            parallel: true,
        }
    }
}

/// Sensitivity matrix with its column statistics and correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityBundle {
    /// `q[i][j]`: p.u. voltage change at node i per var injected at node j.
    pub vlsm_q: Matrix,
    pub perturbation: f64,
    pub column_mean: Vec<f64>,
    pub column_std: Vec<f64>,
    pub correlation: Matrix,
    /// Nodes whose sensitivity column has zero variance. Their correlation
    /// rows are zero off the diagonal.
    pub degenerate: Vec<usize>,
    pub base_case_id: String,
    pub node_ids: Vec<String>,
}

impl SensitivityBundle {
    pub fn compute(
        model: &FeederModel,
        base_injections: &[Complex64],
        config: &SensitivityConfig,
        base_case_id: impl Into<String>,
    ) -> Result<Self> {
        let vlsm_q = compute_vlsm(model, base_injections, config.perturbation_var, config)?;
        Self::from_vlsm(model, vlsm_q, config.perturbation_var, base_case_id)
    }

    pub fn from_vlsm(
        model: &FeederModel,
        vlsm_q: Matrix,
        perturbation: f64,
        base_case_id: impl Into<String>,
    ) -> Result<Self> {
        let node_ids = model.node_ids();
        for (j, q) in vlsm_q.diagonal().into_iter().enumerate() {
            if !(q > 0.0) {
                return Err(Error::Sensitivity {
                    node: node_ids[j].clone(),
                    message: format!("self-sensitivity {q:.3e} is not positive"),
                });
            }
        }
        let (column_mean, column_std) = column_stats(&vlsm_q);
        let degenerate = degenerate_columns(&vlsm_q, &column_std);
        let correlation = correlation_from_stats(&vlsm_q, &column_mean, &column_std, &degenerate);
        Ok(Self {
            vlsm_q,
            perturbation,
            column_mean,
            column_std,
            correlation,
            degenerate,
            base_case_id: base_case_id.into(),
            node_ids,
        })
    }

    pub fn n(&self) -> usize {
        self.vlsm_q.rows()
    }

    pub fn self_sensitivity(&self, node: usize) -> f64 {
        self.vlsm_q[(node, node)]
    }

    pub fn write_vlsm_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix_csv(path, &self.vlsm_q, &self.node_ids)
    }

    pub fn write_correlation_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix_csv(path, &self.correlation, &self.node_ids)
    }
}

/// Builds the sensitivity matrix column by column: one base solve plus one
/// solve per node with its reactive injection raised by `perturbation` var.
pub fn compute_vlsm(
    model: &FeederModel,
    base_injections: &[Complex64],
    perturbation: f64,
    config: &SensitivityConfig,
) -> Result<Matrix> {
    if perturbation == 0.0 || !perturbation.is_finite() {
        return Err(Error::Config(
            "perturbation must be finite and non-zero".into(),
        ));
    }
    let base = powerflow::solve(model, base_injections, &config.solver)?;
    let v_base = powerflow::voltage_magnitudes(&base);
    let n = model.n_nodes();

    let column = |j: usize| -> Result<Vec<f64>> {
        perturbed_column(
            model,
            base_injections,
            &base,
            &v_base,
            j,
            perturbation,
            &config.solver,
        )
    };
    let columns: Vec<Vec<f64>> = if config.parallel {
        (0..n).into_par_iter().map(column).collect::<Result<_>>()?
    } else {
        (0..n).map(column).collect::<Result<_>>()?
    };
    Ok(Matrix::from_columns(&columns))
}

fn perturbed_column(
    model: &FeederModel,
    base_injections: &[Complex64],
    base: &PowerFlowSolution,
    v_base: &[f64],
    j: usize,
    perturbation: f64,
    solver: &SolverConfig,
) -> Result<Vec<f64>> {
    let mut inj = base_injections.to_vec();
    inj[j] += Complex64::new(0.0, perturbation);
    let warm = SolverConfig {
        flat_start: false,
        ..*solver
    };
    let sol =
        powerflow::solve_from(model, &inj, &warm, Some(base)).map_err(|e| Error::Sensitivity {
            node: model.node(j).id.clone(),
            message: e.to_string(),
        })?;
    Ok(sol
        .node_voltages
        .iter()
        .zip(v_base)
        .map(|(v, v0)| (v.norm() - v0) / perturbation)
        .collect())
}

/// Population mean and standard deviation of every column.
pub fn column_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows() as f64;
    let mut means = Vec::with_capacity(m.cols());
    let mut stds = Vec::with_capacity(m.cols());
    for j in 0..m.cols() {
        let col = m.column(j);
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        means.push(mean);
        stds.push(var.sqrt());
    }
    (means, stds)
}

fn degenerate_columns(m: &Matrix, stds: &[f64]) -> Vec<usize> {
    (0..m.cols())
        .filter(|&j| {
            let scale = m.column(j).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            !(stds[j] > f64::EPSILON * scale)
        })
        .collect()
}

/// Pearson correlation between every pair of columns using population
/// statistics. Fails on a zero-variance column.
pub fn compute_correlation(vlsm_q: &Matrix) -> Result<Matrix> {
    let (means, stds) = column_stats(vlsm_q);
    if let Some(&j) = degenerate_columns(vlsm_q, &stds).first() {
        return Err(Error::Sensitivity {
            node: format!("column {j}"),
            message: "zero-variance sensitivity column".into(),
        });
    }
    Ok(correlation_from_stats(vlsm_q, &means, &stds, &[]))
}

fn correlation_from_stats(m: &Matrix, means: &[f64], stds: &[f64], degenerate: &[usize]) -> Matrix {
    let rows = m.rows();
    let cols = m.cols();
    let z: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            if degenerate.contains(&j) {
                vec![0.0; rows]
            } else {
                (0..rows)
                    .map(|i| (m[(i, j)] - means[j]) / stds[j])
                    .collect()
            }
        })
        .collect();
    let mut c = Matrix::zeros(cols, cols);
    for a in 0..cols {
        c[(a, a)] = 1.0;
        for b in a + 1..cols {
            let v = z[a].iter().zip(&z[b]).map(|(x, y)| x * y).sum::<f64>() / rows as f64;
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
    c
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Matrix, ids: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["node".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    for (i, id) in ids.iter().enumerate().take(m.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(m.row(i).iter().map(|v| format!("{v:e}")));
        w.write_record(&rec).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}
