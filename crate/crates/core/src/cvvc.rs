//! Centralized optimal Volt/VAR dispatch used as the benchmark.
//!
//! Every inverter d gets two non-negative variables, injection Q⁺ and
//! absorption Q⁻. The LP minimises the flat cost Σ c_d (Q⁺ + Q⁻) subject to
//! the inverter's remaining capability and to every node voltage staying in
//! limits under the linear model `V_j + Σ_d ρ_jd ΔQ_d`, where
//! `ΔQ_d = Q⁺ − Q⁻ − Q⁰` and ρ is the sensitivity matrix restricted to
//! inverter columns.

use serde::Serialize;

use crate::control::ControlLimits;
use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::lp::{self, LinearProgram, LpStatus, Relation};
use crate::matrix::Matrix;
use crate::sensitivity::SensitivityBundle;

/// Shrinkage turning the strict inequalities into closed ones.
pub const STRICT_SHRINK: f64 = 1e-9;
/// Elastic slack cost relative to the largest inverter cost.
pub const ELASTIC_PENALTY: f64 = 1000.0;
const MAX_PIVOTS: usize = 50_000;
/// The LP works in kvar to keep coefficients near unity.
const VAR_PER_UNIT: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CvvcProblem {
    /// Node index of each inverter d.
    pub inverter_nodes: Vec<usize>,
    /// Initial reactive setpoints Q⁰_d, var.
    pub q0: Vec<f64>,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    /// Cost per var.
    pub cost: Vec<f64>,
    /// `rho[(j, d)]`, p.u. per var.
    pub rho: Matrix,
    pub voltages: Vec<f64>,
    pub v_min: f64,
    pub v_max: f64,
}

impl CvvcProblem {
    pub fn n_inverters(&self) -> usize {
        self.inverter_nodes.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.voltages.len()
    }

    /// Voltages predicted by the linear model for a change `delta_q` (var).
    pub fn predicted_voltages(&self, delta_q: &[f64]) -> Vec<f64> {
        (0..self.n_nodes())
            .map(|j| {
                self.voltages[j]
                    + (0..self.n_inverters())
                        .map(|d| self.rho[(j, d)] * delta_q[d])
                        .sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CvvcStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvvcSolution {
    pub q_plus: Vec<f64>,
    pub q_minus: Vec<f64>,
    /// ΔQ_d = Q⁺ − Q⁻ − Q⁰, var.
    pub delta_q: Vec<f64>,
    pub objective: f64,
    pub status: CvvcStatus,
    /// Largest elastic voltage slack (p.u.) when the hard problem was infeasible.
    pub max_slack: f64,
    pub most_binding: Option<usize>,
    pub binding_count: usize,
    /// Worst violation of the voltage rows under the linear model, p.u.
    pub voltage_residual: f64,
    /// Worst violation of the capability rows, var.
    pub capability_residual: f64,
}

impl CvvcSolution {
    pub fn new_setpoints(&self, problem: &CvvcProblem) -> Vec<f64> {
        (0..self.q_plus.len())
            .map(|d| (self.q_plus[d] - self.q_minus[d]).clamp(problem.q_min[d], problem.q_max[d]))
            .collect()
    }

    pub fn total_abs_delta(&self) -> f64 {
        self.delta_q.iter().map(|v| v.abs()).sum()
    }
}

/// Builds the LP for the present operating point.
///
/// `pv[n]` is the active output and `q0[n]` the present reactive setpoint of
/// the inverter at node n.
pub fn assemble(
    model: &FeederModel,
    bundle: &SensitivityBundle,
    voltages: &[f64],
    pv: &[f64],
    q0: &[f64],
    limits: &ControlLimits,
    cost_per_var: f64,
) -> Result<CvvcProblem> {
    let n = model.n_nodes();
    if bundle.n() != n || voltages.len() != n || pv.len() != n || q0.len() != n {
        return Err(Error::Config(format!(
            "dimension mismatch: feeder {n}, bundle {}, voltages {}, pv {}, q0 {}",
            bundle.n(),
            voltages.len(),
            pv.len(),
            q0.len()
        )));
    }
    if !(cost_per_var > 0.0) {
        return Err(Error::Config("cost per var must be positive".into()));
    }
    let inverter_nodes = model.inverter_nodes();
    let d_count = inverter_nodes.len();
    let mut rho = Matrix::zeros(n, d_count);
    let mut q_max = Vec::with_capacity(d_count);
    for (d, &node) in inverter_nodes.iter().enumerate() {
        for j in 0..n {
            rho[(j, d)] = bundle.vlsm_q[(j, node)];
        }
        let spec = model.node(node).inverter.as_ref().unwrap().spec;
        q_max.push(spec.available_q(pv[node]));
    }
    Ok(CvvcProblem {
        q0: inverter_nodes.iter().map(|&i| q0[i]).collect(),
        q_min: q_max.iter().map(|q| -q).collect(),
        q_max,
        cost: vec![cost_per_var; d_count],
        rho,
        voltages: voltages.to_vec(),
        v_min: limits.v_min,
        v_max: limits.v_max,
        inverter_nodes,
    })
}

fn build_lp(p: &CvvcProblem, elastic: bool) -> (LinearProgram, f64) {
    let d_count = p.n_inverters();
    let n = p.n_nodes();
    let n_vars = 2 * d_count + if elastic { 2 * n } else { 0 };
    let mut objective = vec![0.0; n_vars];
    for d in 0..d_count {
        objective[d] = p.cost[d] * VAR_PER_UNIT;
        objective[d_count + d] = p.cost[d] * VAR_PER_UNIT;
    }
    // p.u. per kvar
    let rho_ref = p.rho.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs())) * VAR_PER_UNIT;
    let slack_cost = if elastic {
        let c_max = p.cost.iter().fold(0.0f64, |a, &c| a.max(c)) * VAR_PER_UNIT;
        let c_max = if c_max > 0.0 { c_max } else { VAR_PER_UNIT };
        let per_pu = if rho_ref > 0.0 { 1.0 / rho_ref } else { 1.0 };
        ELASTIC_PENALTY * c_max * per_pu
    } else {
        0.0
    };
    if elastic {
        for j in 0..2 * n {
            objective[2 * d_count + j] = slack_cost;
        }
    }
    let mut lp = LinearProgram::new(objective);

    for d in 0..d_count {
        let mut row = vec![0.0; n_vars];
        row[d] = 1.0;
        row[d_count + d] = -1.0;
        lp.add(
            row.clone(),
            Relation::Le,
            (p.q_max[d] - STRICT_SHRINK) / VAR_PER_UNIT,
        );
        lp.add(
            row,
            Relation::Ge,
            (p.q_min[d] + STRICT_SHRINK) / VAR_PER_UNIT,
        );
    }
    for j in 0..n {
        let mut row = vec![0.0; n_vars];
        let mut offset = p.voltages[j];
        for d in 0..d_count {
            let r = p.rho[(j, d)] * VAR_PER_UNIT;
            row[d] = r;
            row[d_count + d] = -r;
            offset -= r * p.q0[d] / VAR_PER_UNIT;
        }
        let mut lo = row.clone();
        let mut hi = row;
        if elastic {
            lo[2 * d_count + j] = 1.0;
            hi[2 * d_count + n + j] = -1.0;
        }
        lp.add(lo, Relation::Ge, p.v_min + STRICT_SHRINK - offset);
        lp.add(hi, Relation::Le, p.v_max - STRICT_SHRINK - offset);
    }
    (lp, slack_cost)
}

/// Solves the dispatch LP. If the voltage rows cannot all be met, the problem
/// is re-solved with penalised elastic voltage slack and reported infeasible
/// together with the node carrying the largest slack.
pub fn solve_lp(problem: &CvvcProblem) -> CvvcSolution {
    let d_count = problem.n_inverters();
    let n = problem.n_nodes();
    let (lp_hard, _) = build_lp(problem, false);
    let hard = lp::solve(&lp_hard, MAX_PIVOTS);
    let (solution, status, slack) = match hard.status {
        LpStatus::Optimal => (hard, CvvcStatus::Optimal, None),
        LpStatus::IterationLimit => (hard, CvvcStatus::IterationLimit, None),
        LpStatus::Infeasible | LpStatus::Unbounded => {
            let (lp_soft, _) = build_lp(problem, true);
            let soft = lp::solve(&lp_soft, MAX_PIVOTS);
            let st = if soft.status == LpStatus::IterationLimit {
                CvvcStatus::IterationLimit
            } else {
                CvvcStatus::Infeasible
            };
            let slacks: Vec<f64> = (0..n)
                .map(|j| soft.x[2 * d_count + j].max(soft.x[2 * d_count + n + j]))
                .collect();
            (soft, st, Some(slacks))
        }
    };

    let q_plus: Vec<f64> = solution.x[..d_count]
        .iter()
        .map(|v| v * VAR_PER_UNIT)
        .collect();
    let q_minus: Vec<f64> = solution.x[d_count..2 * d_count]
        .iter()
        .map(|v| v * VAR_PER_UNIT)
        .collect();
    let delta_q: Vec<f64> = (0..d_count)
        .map(|d| q_plus[d] - q_minus[d] - problem.q0[d])
        .collect();
    let objective = (0..d_count)
        .map(|d| problem.cost[d] * (q_plus[d] + q_minus[d]))
        .sum();

    let predicted = problem.predicted_voltages(&delta_q);
    let voltage_residual = predicted
        .iter()
        .map(|v| (problem.v_min - v).max(v - problem.v_max).max(0.0))
        .fold(0.0, f64::max);
    let capability_residual = (0..d_count)
        .map(|d| {
            let q = q_plus[d] - q_minus[d];
            (problem.q_min[d] - q).max(q - problem.q_max[d]).max(0.0)
        })
        .fold(0.0, f64::max);
    let binding_count = predicted
        .iter()
        .filter(|v| (*v - problem.v_max).abs() < 1e-7 || (*v - problem.v_min).abs() < 1e-7)
        .count();
    let (max_slack, most_binding) = match slack {
        Some(s) => {
            let (j, v) =
                s.iter().enumerate().fold(
                    (0, 0.0),
                    |best, (j, &v)| if v > best.1 { (j, v) } else { best },
                );
            (v, Some(j))
        }
        None => (0.0, None),
    };

    CvvcSolution {
        q_plus,
        q_minus,
        delta_q,
        objective,
        status,
        max_slack,
        most_binding,
        binding_count,
        voltage_residual,
        capability_residual,
    }
}

/// One centralized control step: assemble, solve, and return the new
/// setpoint of every node (zero where there is no inverter).
pub fn run_cvvc_step(
    model: &FeederModel,
    bundle: &SensitivityBundle,
    voltages: &[f64],
    pv: &[f64],
    q0: &[f64],
    limits: &ControlLimits,
    cost_per_var: f64,
) -> Result<(Vec<f64>, CvvcSolution)> {
    let problem = assemble(model, bundle, voltages, pv, q0, limits, cost_per_var)?;
    let solution = solve_lp(&problem);
    let mut setpoints = vec![0.0; model.n_nodes()];
    if solution.status != CvvcStatus::IterationLimit {
        for (d, q) in solution.new_setpoints(&problem).into_iter().enumerate() {
            setpoints[problem.inverter_nodes[d]] = q;
        }
    } else {
        log::warn!("centralized LP hit the pivot limit; keeping previous setpoints");
        for &node in &problem.inverter_nodes {
            setpoints[node] = q0[node];
        }
    }
    Ok((setpoints, solution))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64, rho: f64, cap: f64) -> CvvcProblem {
        CvvcProblem {
            inverter_nodes: vec![0],
            q0: vec![0.0],
            q_min: vec![-cap],
            q_max: vec![cap],
            cost: vec![1.0],
            rho: Matrix::from_rows(&[vec![rho]]),
            voltages: vec![v],
            v_min: 0.951,
            v_max: 1.049,
        }
    }

    #[test]
    fn single_constraint_closed_form() {
        let s = solve_lp(&single(1.059, 5e-7, 100_000.0));
        assert_eq!(s.status, CvvcStatus::Optimal);
        // (1.049 - 1e-9 - 1.059) / 5e-7
        assert!((s.delta_q[0] + 20_000.0).abs() < 0.01, "{:?}", s.delta_q);
        assert_eq!(s.q_plus[0], 0.0);
        assert!(s.voltage_residual <= 1e-6);
    }

    #[test]
    fn no_violation_needs_nothing() {
        let s = solve_lp(&single(1.0, 5e-7, 100_000.0));
        assert_eq!(s.status, CvvcStatus::Optimal);
        assert_eq!(s.objective, 0.0);
        assert_eq!(s.delta_q, vec![0.0]);
    }

    #[test]
    fn empty_problem() {
        let p = CvvcProblem {
            inverter_nodes: vec![],
            q0: vec![],
            q_min: vec![],
            q_max: vec![],
            cost: vec![],
            rho: Matrix::zeros(2, 0),
            voltages: vec![1.0, 1.01],
            v_min: 0.951,
            v_max: 1.049,
        };
        let s = solve_lp(&p);
        assert_eq!(s.status, CvvcStatus::Optimal);
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn infeasible_reports_slack() {
        let s = solve_lp(&single(1.10, 5e-7, 10_000.0));
        assert_eq!(s.status, CvvcStatus::Infeasible);
        assert_eq!(s.most_binding, Some(0));
        // full absorption removes 0.005 of the 0.051 p.u. excess
        assert!((s.q_minus[0] - 10_000.0).abs() < 1e-3);
        assert!(
            (s.max_slack - (0.051 - 0.005)).abs() < 1e-6,
            "{}",
            s.max_slack
        );
    }

    #[test]
    fn nonzero_initial_setpoint_is_released() {
        let mut p = single(1.02, 5e-7, 100_000.0);
        p.q0 = vec![-30_000.0];
        let s = solve_lp(&p);
        assert_eq!(s.status, CvvcStatus::Optimal);
        assert_eq!(s.q_minus[0], 0.0);
        assert!((s.delta_q[0] - 30_000.0).abs() < 1e-6);
    }
}
