//! Quasi-static time-series driver.
//!
//! Every step applies the profiles, clips the standing setpoints to the
//! inverters' present headroom, solves the power flow, ticks the controller
//! once and solves again with the new setpoints. The second solve is what
//! gets recorded.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::control::{
    self, ControlLimits, ControllerOptions, Mode, ZoneControllerState, ZoneTickLog,
};
use crate::cvvc::{self, CvvcStatus};
use crate::error::{Error, Result};
use crate::feeder::{DistanceKey, FeederModel};
use crate::powerflow::{self, PowerFlowSolution, SolverConfig};
use crate::profiles::ScenarioProfiles;
use crate::sensitivity::{csv_io, SensitivityBundle, SensitivityConfig};
use crate::zoning::{self, ZonePartition};

pub const DEFAULT_ALPHA: f64 = 0.92;
pub const DEFAULT_CVVC_REFRESH_S: f64 = 300.0;
pub const PERCENTILES: [f64; 11] = [
    0.0, 1.0, 5.0, 10.0, 25.0, 50.0, 75.0, 90.0, 95.0, 99.0, 100.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    None,
    #[default]
    Zonal,
    Cvvc,
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControllerKind::None => "none",
            ControllerKind::Zonal => "zonal",
            ControllerKind::Cvvc => "cvvc",
        })
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(ControllerKind::None),
            "zonal" => Ok(ControllerKind::Zonal),
            "cvvc" => Ok(ControllerKind::Cvvc),
            other => Err(Error::Config(format!(
                "unknown controller '{other}' (none, zonal, cvvc)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub controller: ControllerKind,
    pub alpha: f64,
    pub limits: ControlLimits,
    pub sensitivity: SensitivityConfig,
    pub solver: SolverConfig,
    pub strict_paper_mode: bool,
    pub distance_key: DistanceKey,
    /// Simulated seconds between sensitivity refreshes of the centralized
    /// controller.
    pub cvvc_refresh_s: f64,
    pub cvvc_cost_per_var: f64,
    /// Record a diverged step and carry on instead of aborting.
    pub skip_nonconvergence: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            controller: ControllerKind::default(),
            alpha: DEFAULT_ALPHA,
            limits: ControlLimits::default(),
            sensitivity: SensitivityConfig::default(),
            solver: SolverConfig::default(),
            strict_paper_mode: false,
            distance_key: DistanceKey::default(),
            cvvc_refresh_s: DEFAULT_CVVC_REFRESH_S,
            cvvc_cost_per_var: 1.0,
            skip_nonconvergence: false,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        self.limits.validate()?;
        self.solver.validate()?;
        self.sensitivity.solver.validate()?;
        if !(self.sensitivity.perturbation_var.is_finite()
            && self.sensitivity.perturbation_var != 0.0)
        {
            return Err(Error::Config(
                "perturbation must be finite and non-zero".into(),
            ));
        }
        if !(self.cvvc_refresh_s > 0.0) || !(self.cvvc_cost_per_var > 0.0) {
            return Err(Error::Config(
                "refresh interval and cost per var must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn controller_options(&self) -> ControllerOptions {
        ControllerOptions {
            strict_paper: self.strict_paper_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpLogRow {
    pub status: CvvcStatus,
    pub objective: f64,
    pub total_abs_dq: f64,
    pub binding_count: usize,
    pub max_slack: f64,
    pub most_binding: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time_s: f64,
    pub converged: bool,
    /// Pre-control extremes, p.u.
    pub pre_v_max: f64,
    pub pre_v_min: f64,
    /// Post-control node voltage magnitudes, p.u.
    pub voltages: Vec<f64>,
    /// Post-control reactive setpoint per node, var.
    pub setpoints: Vec<f64>,
    pub zone_log: Vec<ZoneTickLog>,
    pub lp: Option<LpLogRow>,
    pub vlsm_refreshed: bool,
    /// Wall time of the control computation alone, s.
    pub control_time_s: f64,
    /// Same, plus any sensitivity refresh done for this step, s.
    pub control_time_inclusive_s: f64,
}

impl StepRecord {
    pub fn v_max(&self) -> f64 {
        self.voltages.iter().copied().fold(f64::NAN, f64::max)
    }

    pub fn v_min(&self) -> f64 {
        self.voltages.iter().copied().fold(f64::NAN, f64::min)
    }

    pub fn q_absorbed(&self) -> f64 {
        self.setpoints.iter().map(|q| (-q).max(0.0)).sum()
    }

    pub fn q_injected(&self) -> f64 {
        self.setpoints.iter().map(|q| q.max(0.0)).sum()
    }

    pub fn total_abs_q(&self) -> f64 {
        self.setpoints.iter().map(|q| q.abs()).sum()
    }

    pub fn violating_nodes(&self, limits: &ControlLimits) -> usize {
        self.voltages
            .iter()
            .filter(|v| !limits.contains(**v))
            .count()
    }

    pub fn has_corrective_zone(&self) -> bool {
        self.zone_log.iter().any(|z| z.mode == Mode::Corrective)
    }

    pub fn any_zone_exhausted(&self) -> bool {
        self.zone_log.iter().any(|z| z.exhausted)
    }
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub scenario_id: String,
    pub controller: ControllerKind,
    pub node_ids: Vec<String>,
    pub inverter_nodes: Vec<usize>,
    pub timestep: f64,
    pub limits: ControlLimits,
    pub records: Vec<StepRecord>,
    /// Frozen zonal partition, if any.
    pub partition: Option<ZonePartition>,
    /// Step whose operating point the frozen sensitivities were taken at.
    pub reference_step: Option<usize>,
    /// Sensitivity and clustering time before the first step, s.
    pub setup_time_s: f64,
}

fn capabilities(model: &FeederModel, pv: &[f64]) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    model
        .phase_nodes()
        .iter()
        .map(|n| match &n.inverter {
            Some(inv) => (
                Some(inv.spec.available_q(pv[n.node_index])),
                Some(inv.spec.guaranteed_q()),
            ),
            None => (None, None),
        })
        .unzip()
}

enum Controller {
    None,
    Zonal {
        bundle: SensitivityBundle,
        states: Vec<ZoneControllerState>,
    },
    Cvvc {
        bundle: Option<SensitivityBundle>,
        last_refresh: Option<f64>,
        setpoints: Vec<f64>,
    },
}

/// Runs the whole horizon with the configured controller.
pub fn run(
    model: &FeederModel,
    profiles: &ScenarioProfiles,
    config: &SimulationConfig,
    scenario_id: &str,
) -> Result<SimulationRun> {
    config.validate()?;
    profiles.validate(model)?;
    let n = model.n_nodes();
    let options = config.controller_options();
    let warm = SolverConfig {
        flat_start: false,
        ..config.solver
    };

    let mut partition = None;
    let mut reference_step = None;
    let setup_start = Instant::now();
    let mut controller = match config.controller {
        ControllerKind::None => Controller::None,
        ControllerKind::Zonal => {
            let t_ref = profiles.max_pv_step();
            let base = profiles.injections(t_ref, &[]);
            let bundle = SensitivityBundle::compute(
                model,
                &base,
                &config.sensitivity,
                format!("step-{t_ref}"),
            )
            .map_err(|e| e.at_step(t_ref))?;
            let p = zoning::build_partition(model, &bundle, config.alpha, config.distance_key)?;
            log::info!(
                "zonal controller: {} zones at alpha {}",
                p.k(),
                config.alpha
            );
            let states = ZoneControllerState::for_partition(&p);
            partition = Some(p);
            reference_step = Some(t_ref);
            Controller::Zonal { bundle, states }
        }
        ControllerKind::Cvvc => Controller::Cvvc {
            bundle: None,
            last_refresh: None,
            setpoints: vec![0.0; n],
        },
    };
    let setup_time_s = setup_start.elapsed().as_secs_f64();

    let mut records = Vec::with_capacity(profiles.horizon);
    let mut previous: Option<PowerFlowSolution> = None;
    for t in 0..profiles.horizon {
        let time_s = t as f64 * profiles.timestep;
        let pv = profiles.pv_at(t);
        let (capability, fixed_rating) = capabilities(model, &pv);

        let standing = match &mut controller {
            Controller::None => vec![0.0; n],
            Controller::Zonal { states, .. } => {
                for s in states.iter_mut() {
                    s.clip_to_capability(&capability);
                }
                control::collect_setpoints(states, n)
            }
            Controller::Cvvc { setpoints, .. } => {
                for (q, cap) in setpoints.iter_mut().zip(&capability) {
                    let cap = cap.unwrap_or(0.0);
                    *q = q.clamp(-cap, cap);
                }
                setpoints.clone()
            }
        };

        let pre_inj = profiles.injections(t, &standing);
        let pre = match powerflow::solve_from(model, &pre_inj, &warm, previous.as_ref()) {
            Ok(sol) => sol,
            Err(e) if config.skip_nonconvergence && e.exit_code() == 3 => {
                log::warn!("step {t}: {e}; recording the step as diverged");
                records.push(StepRecord {
                    step: t,
                    time_s,
                    converged: false,
                    pre_v_max: f64::NAN,
                    pre_v_min: f64::NAN,
                    voltages: vec![f64::NAN; n],
                    setpoints: standing,
                    zone_log: Vec::new(),
                    lp: None,
                    vlsm_refreshed: false,
                    control_time_s: 0.0,
                    control_time_inclusive_s: 0.0,
                });
                continue;
            }
            Err(e) => return Err(e.at_step(t)),
        };
        let v_pre = powerflow::voltage_magnitudes(&pre);

        let mut zone_log = Vec::new();
        let mut lp = None;
        let mut vlsm_refreshed = false;
        let (new_setpoints, control_time_s, control_time_inclusive_s) = match &mut controller {
            Controller::None => (standing, 0.0, 0.0),
            Controller::Zonal { bundle, states } => {
                let start = Instant::now();
                zone_log = control::control_tick(
                    states,
                    &v_pre,
                    bundle,
                    &config.limits,
                    config.alpha,
                    &capability,
                    &fixed_rating,
                    &options,
                )
                .map_err(|e| e.at_step(t))?;
                let q = control::collect_setpoints(states, n);
                let dt = start.elapsed().as_secs_f64();
                (q, dt, dt)
            }
            Controller::Cvvc {
                bundle,
                last_refresh,
                setpoints,
            } => {
                let start = Instant::now();
                let due = match *last_refresh {
                    None => true,
                    Some(last) => time_s - last >= config.cvvc_refresh_s - 1e-9,
                };
                if due || bundle.is_none() {
                    let b = SensitivityBundle::compute(
                        model,
                        &pre_inj,
                        &config.sensitivity,
                        format!("step-{t}"),
                    )
                    .map_err(|e| e.at_step(t))?;
                    *bundle = Some(b);
                    *last_refresh = Some(time_s);
                    vlsm_refreshed = true;
                }
                let lp_start = Instant::now();
                let (q, sol) = cvvc::run_cvvc_step(
                    model,
                    bundle.as_ref().unwrap(),
                    &v_pre,
                    &pv,
                    setpoints,
                    &config.limits,
                    config.cvvc_cost_per_var,
                )
                .map_err(|e| e.at_step(t))?;
                let exclusive = lp_start.elapsed().as_secs_f64();
                let inclusive = start.elapsed().as_secs_f64();
                if sol.status != CvvcStatus::Optimal {
                    log::warn!(
                        "step {t}: centralized LP {:?}, max slack {:.4e} p.u.",
                        sol.status,
                        sol.max_slack
                    );
                }
                lp = Some(LpLogRow {
                    status: sol.status,
                    objective: sol.objective,
                    total_abs_dq: sol.total_abs_delta(),
                    binding_count: sol.binding_count,
                    max_slack: sol.max_slack,
                    most_binding: sol.most_binding,
                });
                *setpoints = q.clone();
                (q, exclusive, inclusive)
            }
        };

        let post = if config.controller == ControllerKind::None {
            pre.clone()
        } else {
            let inj = profiles.injections(t, &new_setpoints);
            match powerflow::solve_from(model, &inj, &warm, Some(&pre)) {
                Ok(sol) => sol,
                Err(e) => return Err(e.at_step(t)),
            }
        };
        records.push(StepRecord {
            step: t,
            time_s,
            converged: true,
            pre_v_max: v_pre.iter().copied().fold(f64::NAN, f64::max),
            pre_v_min: v_pre.iter().copied().fold(f64::NAN, f64::min),
            voltages: powerflow::voltage_magnitudes(&post),
            setpoints: new_setpoints,
            zone_log,
            lp,
            vlsm_refreshed,
            control_time_s,
            control_time_inclusive_s,
        });
        previous = Some(post);
    }

    Ok(SimulationRun {
        scenario_id: scenario_id.to_string(),
        controller: config.controller,
        node_ids: model.node_ids(),
        inverter_nodes: model.inverter_nodes(),
        timestep: profiles.timestep,
        limits: config.limits,
        records,
        partition,
        reference_step,
        setup_time_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RuntimeStats {
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

impl RuntimeStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            count: s.len(),
            min: s[0],
            mean: s.iter().sum::<f64>() / s.len() as f64,
            max: s[s.len() - 1],
            p50: percentile_sorted(&s, 50.0),
            p95: percentile_sorted(&s, 95.0),
            p99: percentile_sorted(&s, 99.0),
        }
    }
}

/// Linear-interpolation percentile of sorted data, `p` in [0, 100].
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 100.0) / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub v_max: f64,
    pub v_min: f64,
    pub q_absorbed: f64,
    pub q_injected: f64,
    pub violating_nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub steps: Vec<StepMetrics>,
    /// Steps with at least one node outside the limits.
    pub violation_steps: usize,
    /// Node-steps outside the limits.
    pub node_violations: usize,
    pub violation_minutes: f64,
    pub diverged_steps: usize,
    /// `(percentile, value)` of the per-step maximum voltage.
    pub max_voltage_percentiles: Vec<(f64, f64)>,
    pub runtime: RuntimeStats,
    pub runtime_inclusive: RuntimeStats,
    /// Inclusive timings restricted to steps that refreshed sensitivities.
    pub runtime_refresh: RuntimeStats,
}

impl RunMetrics {
    pub fn v_max_percentile(&self, p: f64) -> Option<f64> {
        self.max_voltage_percentiles
            .iter()
            .find(|(q, _)| *q == p)
            .map(|(_, v)| *v)
    }
}

pub fn summarize(run: &SimulationRun) -> Result<RunMetrics> {
    if run.records.is_empty() {
        return Err(Error::Config("cannot summarize an empty horizon".into()));
    }
    let converged: Vec<&StepRecord> = run.records.iter().filter(|r| r.converged).collect();
    let steps: Vec<StepMetrics> = converged
        .iter()
        .map(|r| StepMetrics {
            step: r.step,
            v_max: r.v_max(),
            v_min: r.v_min(),
            q_absorbed: r.q_absorbed(),
            q_injected: r.q_injected(),
            violating_nodes: r.violating_nodes(&run.limits),
        })
        .collect();
    let violation_steps = steps.iter().filter(|s| s.violating_nodes > 0).count();
    let node_violations = steps.iter().map(|s| s.violating_nodes).sum();
    let mut vmax: Vec<f64> = steps.iter().map(|s| s.v_max).collect();
    vmax.sort_by(f64::total_cmp);
    let max_voltage_percentiles = PERCENTILES
        .iter()
        .map(|&p| (p, percentile_sorted(&vmax, p)))
        .collect();
    let active: Vec<&&StepRecord> = if run.controller == ControllerKind::None {
        Vec::new()
    } else {
        converged.iter().collect()
    };
    let times: Vec<f64> = active.iter().map(|r| r.control_time_s).collect();
    let inclusive: Vec<f64> = active.iter().map(|r| r.control_time_inclusive_s).collect();
    let refresh: Vec<f64> = active
        .iter()
        .filter(|r| r.vlsm_refreshed)
        .map(|r| r.control_time_inclusive_s)
        .collect();
    Ok(RunMetrics {
        violation_steps,
        node_violations,
        violation_minutes: violation_steps as f64 * run.timestep / 60.0,
        diverged_steps: run.records.len() - converged.len(),
        max_voltage_percentiles,
        runtime: RuntimeStats::from_samples(&times),
        runtime_inclusive: RuntimeStats::from_samples(&inclusive),
        runtime_refresh: RuntimeStats::from_samples(&refresh),
        steps,
    })
}

fn num(v: f64) -> String {
    format!("{v:.10e}")
}

/// Header of `records.csv`. Timing columns come last so that they can be
/// dropped when comparing runs.
pub fn records_header(run: &SimulationRun) -> Vec<String> {
    let mut h: Vec<String> = [
        "step",
        "time_s",
        "converged",
        "v_max_pu",
        "v_min_pu",
        "violating_nodes",
        "q_absorbed_var",
        "q_injected_var",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(run.node_ids.iter().map(|id| format!("v:{id}")));
    h.extend(
        run.inverter_nodes
            .iter()
            .map(|&i| format!("q:{}", run.node_ids[i])),
    );
    h.push("vlsm_refreshed".into());
    h.push("control_time_s".into());
    h.push("control_time_inclusive_s".into());
    h
}

pub const TIMING_COLUMNS: usize = 2;

pub fn write_records_csv(run: &SimulationRun, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(records_header(run))
        .map_err(|e| csv_io(path, e))?;
    for r in &run.records {
        let mut row = vec![
            r.step.to_string(),
            format!("{}", r.time_s),
            r.converged.to_string(),
            num(r.v_max()),
            num(r.v_min()),
            r.violating_nodes(&run.limits).to_string(),
            num(r.q_absorbed()),
            num(r.q_injected()),
        ];
        row.extend(r.voltages.iter().map(|v| num(*v)));
        row.extend(run.inverter_nodes.iter().map(|&i| num(r.setpoints[i])));
        row.push(r.vlsm_refreshed.to_string());
        row.push(format!("{:e}", r.control_time_s));
        row.push(format!("{:e}", r.control_time_inclusive_s));
        w.write_record(&row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_metrics_csv(metrics: &RunMetrics, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["metric", "value"])
        .map_err(|e| csv_io(path, e))?;
    let mut rows: Vec<(String, String)> = vec![
        ("steps".into(), metrics.steps.len().to_string()),
        ("diverged_steps".into(), metrics.diverged_steps.to_string()),
        (
            "violation_steps".into(),
            metrics.violation_steps.to_string(),
        ),
        (
            "node_violations".into(),
            metrics.node_violations.to_string(),
        ),
        (
            "violation_minutes".into(),
            format!("{}", metrics.violation_minutes),
        ),
    ];
    for (p, v) in &metrics.max_voltage_percentiles {
        rows.push((format!("v_max_p{p}"), num(*v)));
    }
    for (prefix, s) in [
        ("runtime", &metrics.runtime),
        ("runtime_inclusive", &metrics.runtime_inclusive),
        ("runtime_refresh", &metrics.runtime_refresh),
    ] {
        rows.push((format!("{prefix}_count"), s.count.to_string()));
        for (k, v) in [
            ("min", s.min),
            ("mean", s.mean),
            ("p50", s.p50),
            ("p95", s.p95),
            ("p99", s.p99),
            ("max", s.max),
        ] {
            rows.push((format!("{prefix}_{k}_s"), format!("{v:e}")));
        }
    }
    for (k, v) in rows {
        w.write_record([k, v]).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_controller_log_csv(run: &SimulationRun, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record([
        "step",
        "zone",
        "mode",
        "worst_node",
        "delta_v_pu",
        "dq_req_var",
        "dispatched_var",
        "zone_q_var",
        "exhausted",
        "conflict",
    ])
    .map_err(|e| csv_io(path, e))?;
    for r in &run.records {
        for z in &r.zone_log {
            w.write_record([
                r.step.to_string(),
                z.zone_id.to_string(),
                z.mode.to_string(),
                z.worst_node
                    .map_or(String::new(), |n| run.node_ids[n].clone()),
                num(z.delta_v),
                num(z.dq_req),
                num(z.dispatched),
                num(z.zone_q),
                z.exhausted.to_string(),
                z.conflict.to_string(),
            ])
            .map_err(|e| csv_io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_lp_log_csv(run: &SimulationRun, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record([
        "step",
        "status",
        "objective",
        "total_abs_dq_var",
        "binding_count",
        "max_slack_pu",
        "most_binding",
        "vlsm_refreshed",
    ])
    .map_err(|e| csv_io(path, e))?;
    for r in &run.records {
        let Some(lp) = &r.lp else { continue };
        let status = serde_json::to_value(lp.status)
            .ok()
            .and_then(|v| v.as_str().map(String::from));
        w.write_record([
            r.step.to_string(),
            status.unwrap_or_default(),
            num(lp.objective),
            num(lp.total_abs_dq),
            lp.binding_count.to_string(),
            num(lp.max_slack),
            lp.most_binding
                .map_or(String::new(), |n| run.node_ids[n].clone()),
            r.vlsm_refreshed.to_string(),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_runtime_csv(run: &SimulationRun, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record([
        "step",
        "controller",
        "control_time_s",
        "control_time_inclusive_s",
        "vlsm_refreshed",
    ])
    .map_err(|e| csv_io(path, e))?;
    for r in run.records.iter().filter(|r| r.converged) {
        w.write_record([
            r.step.to_string(),
            run.controller.to_string(),
            format!("{:e}", r.control_time_s),
            format!("{:e}", r.control_time_inclusive_s),
            r.vlsm_refreshed.to_string(),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes records, metrics, runtime and the controller-specific log into
/// `dir`, creating it if needed.
pub fn write_run_dir(
    run: &SimulationRun,
    metrics: &RunMetrics,
    model: &FeederModel,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_records_csv(run, &dir.join("records.csv"))?;
    write_metrics_csv(metrics, &dir.join("metrics.csv"))?;
    write_runtime_csv(run, &dir.join("runtime.csv"))?;
    match run.controller {
        ControllerKind::Cvvc => write_lp_log_csv(run, &dir.join("lp_log.csv"))?,
        _ => write_controller_log_csv(run, &dir.join("controller_log.csv"))?,
    }
    if let Some(p) = &run.partition {
        zoning::write_partition_csv(dir.join("partition.csv"), model, p)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedStep {
    pub step: usize,
    pub corrective: bool,
    pub zonal_abs_q: f64,
    pub cvvc_abs_q: f64,
    pub zonal_v_max: f64,
    pub cvvc_v_max: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub zonal: SimulationRun,
    pub cvvc: SimulationRun,
    pub zonal_metrics: RunMetrics,
    pub cvvc_metrics: RunMetrics,
    pub paired: Vec<PairedStep>,
    /// Steps where at least one zone was in corrective mode.
    pub corrective_steps: Vec<usize>,
    pub zonal_corrective_q: f64,
    pub cvvc_corrective_q: f64,
    /// `(percentile, zonal, cvvc, cvvc − zonal)`.
    pub percentile_deltas: Vec<(f64, f64, f64, f64)>,
    pub zonal_median_s: f64,
    pub cvvc_refresh_median_s: f64,
}

impl Comparison {
    /// Relative gap of the zonal total |Q| on corrective steps.
    pub fn q_relative_gap(&self) -> f64 {
        if self.cvvc_corrective_q == 0.0 {
            return if self.zonal_corrective_q == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
        }
        (self.zonal_corrective_q - self.cvvc_corrective_q).abs() / self.cvvc_corrective_q
    }

    pub fn max_percentile_delta(&self) -> f64 {
        self.percentile_deltas
            .iter()
            .map(|d| d.3.abs())
            .fold(0.0, f64::max)
    }

    /// Median CVVC step time including the sensitivity refresh over the
    /// median zonal tick.
    pub fn runtime_ratio(&self) -> f64 {
        self.cvvc_refresh_median_s / self.zonal_median_s
    }
}

/// Runs the zonal and centralized controllers on the same scenario, one
/// after the other so that their timings do not interfere.
pub fn compare(
    model: &FeederModel,
    profiles: &ScenarioProfiles,
    config: &SimulationConfig,
    scenario_id: &str,
) -> Result<Comparison> {
    let zonal = run(
        model,
        profiles,
        &SimulationConfig {
            controller: ControllerKind::Zonal,
            ..*config
        },
        scenario_id,
    )?;
    let cvvc = run(
        model,
        profiles,
        &SimulationConfig {
            controller: ControllerKind::Cvvc,
            ..*config
        },
        scenario_id,
    )?;
    let zonal_metrics = summarize(&zonal)?;
    let cvvc_metrics = summarize(&cvvc)?;
    let paired: Vec<PairedStep> = zonal
        .records
        .iter()
        .zip(&cvvc.records)
        .map(|(z, c)| PairedStep {
            step: z.step,
            corrective: z.has_corrective_zone(),
            zonal_abs_q: z.total_abs_q(),
            cvvc_abs_q: c.total_abs_q(),
            zonal_v_max: z.v_max(),
            cvvc_v_max: c.v_max(),
        })
        .collect();
    let corrective: Vec<&PairedStep> = paired.iter().filter(|p| p.corrective).collect();
    let percentile_deltas = zonal_metrics
        .max_voltage_percentiles
        .iter()
        .zip(&cvvc_metrics.max_voltage_percentiles)
        .map(|(&(p, z), &(_, c))| (p, z, c, c - z))
        .collect();
    Ok(Comparison {
        corrective_steps: corrective.iter().map(|p| p.step).collect(),
        zonal_corrective_q: corrective.iter().map(|p| p.zonal_abs_q).sum(),
        cvvc_corrective_q: corrective.iter().map(|p| p.cvvc_abs_q).sum(),
        percentile_deltas,
        zonal_median_s: zonal_metrics.runtime.p50,
        cvvc_refresh_median_s: cvvc_metrics.runtime_refresh.p50,
        paired,
        zonal,
        cvvc,
        zonal_metrics,
        cvvc_metrics,
    })
}

pub fn write_comparison(cmp: &Comparison, model: &FeederModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_run_dir(&cmp.zonal, &cmp.zonal_metrics, model, &dir.join("zonal"))?;
    write_run_dir(&cmp.cvvc, &cmp.cvvc_metrics, model, &dir.join("cvvc"))?;

    let path = dir.join("paired.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
    for p in &cmp.paired {
        w.serialize(p).map_err(|e| csv_io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("percentiles.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
    w.write_record(["percentile", "zonal_v_max_pu", "cvvc_v_max_pu", "delta_pu"])
        .map_err(|e| csv_io(&path, e))?;
    for &(p, z, c, d) in &cmp.percentile_deltas {
        w.write_record([format!("{p}"), num(z), num(c), num(d)])
            .map_err(|e| csv_io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_runtime_table(cmp, &dir.join("runtime_summary.csv"))?;

    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
    w.write_record(["metric", "value"])
        .map_err(|e| csv_io(&path, e))?;
    for (k, v) in [
        ("corrective_steps", cmp.corrective_steps.len().to_string()),
        ("zonal_corrective_abs_q_var", num(cmp.zonal_corrective_q)),
        ("cvvc_corrective_abs_q_var", num(cmp.cvvc_corrective_q)),
        ("abs_q_relative_gap", num(cmp.q_relative_gap())),
        ("max_percentile_delta_pu", num(cmp.max_percentile_delta())),
        (
            "zonal_violation_steps",
            cmp.zonal_metrics.violation_steps.to_string(),
        ),
        (
            "cvvc_violation_steps",
            cmp.cvvc_metrics.violation_steps.to_string(),
        ),
        ("runtime_ratio", num(cmp.runtime_ratio())),
    ] {
        w.write_record([k.to_string(), v])
            .map_err(|e| csv_io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn write_runtime_table(cmp: &Comparison, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record([
        "series",
        "count",
        "min_s",
        "mean_s",
        "p50_s",
        "p95_s",
        "p99_s",
        "max_s",
        "ratio_to_zonal_median",
    ])
    .map_err(|e| csv_io(path, e))?;
    let zonal = cmp.zonal_median_s;
    for (name, s) in [
        ("zonal_tick", &cmp.zonal_metrics.runtime),
        ("cvvc_lp_only", &cmp.cvvc_metrics.runtime),
        ("cvvc_inclusive", &cmp.cvvc_metrics.runtime_inclusive),
        ("cvvc_with_refresh", &cmp.cvvc_metrics.runtime_refresh),
    ] {
        w.write_record([
            name.to_string(),
            s.count.to_string(),
            format!("{:e}", s.min),
            format!("{:e}", s.mean),
            format!("{:e}", s.p50),
            format!("{:e}", s.p95),
            format!("{:e}", s.p99),
            format!("{:e}", s.max),
            format!("{:e}", s.p50 / zonal),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
