//! Rule-based zonal Volt/VAR controller.
//!
//! Each zone controller looks only at its own members. When a member voltage
//! leaves `[v_min, v_max]` the controller enters corrective mode: it finds the
//! worst node r, converts the violation into a reactive requirement through
//! r's self-sensitivity, ranks the zone's nodes by their correlation with r
//! and walks that list dispatching inverters. Once voltages sit comfortably
//! inside the limits again the controller walks the list from the tail and
//! returns inverters to unity power factor.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sensitivity::SensitivityBundle;
use crate::zoning::{Zone, ZonePartition};

/// Remaining requirement below this many var counts as met.
const Q_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlLimits {
    pub v_max: f64,
    pub v_min: f64,
    pub eps_u: f64,
    pub eps_d: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self {
            v_max: 1.049,
            v_min: 0.951,
            eps_u: 0.001,
            eps_d: 0.001,
        }
    }
}

impl ControlLimits {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [self.v_max, self.v_min, self.eps_u, self.eps_d]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive || !(self.v_min + self.eps_d < self.v_max - self.eps_u) {
            return Err(Error::Config(format!(
                "limits need positive values and v_min + eps_d < v_max - eps_u, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.v_min && v <= self.v_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Idle,
    Corrective,
    Return,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Idle => "idle",
            Mode::Corrective => "corrective",
            Mode::Return => "return",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Over,
    Under,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViolationReport {
    pub zone_id: usize,
    /// Worst node r.
    pub node: usize,
    pub v_worst: f64,
    /// Distance from the limit (corrective) or from the return band edge
    /// (return), p.u., always positive.
    pub delta_v: f64,
    pub direction: Direction,
    /// Both over- and under-voltage were present; the larger one was kept.
    pub conflict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerOptions {
    /// Literal dispatch rules: every selected inverter goes to a fixed
    /// nameplate reactive rating and released inverters drop to zero even
    /// when that overshoots the release requirement.
    pub strict_paper: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneControllerState {
    pub zone_id: usize,
    pub members: Vec<usize>,
    pub mode: Mode,
    /// Node indices ranked by correlation with the current worst node.
    pub priority_list: Vec<usize>,
    pub p_k: usize,
    pub d_k: usize,
    /// Aligned with `members`.
    pub flags: Vec<bool>,
    /// Aligned with `members`; var, positive = injection.
    pub q_setpoint: Vec<f64>,
    pub exhausted: bool,
    position: HashMap<usize, usize>,
}

impl ZoneControllerState {
    pub fn new(zone: &Zone) -> Self {
        let m = zone.members.len();
        Self {
            zone_id: zone.id,
            members: zone.members.clone(),
            mode: Mode::Idle,
            priority_list: Vec::new(),
            p_k: 0,
            d_k: m,
            flags: vec![false; m],
            q_setpoint: vec![0.0; m],
            exhausted: false,
            position: zone
                .members
                .iter()
                .enumerate()
                .map(|(i, &n)| (n, i))
                .collect(),
        }
    }

    pub fn for_partition(partition: &ZonePartition) -> Vec<Self> {
        partition.zones.iter().map(Self::new).collect()
    }

    pub fn m_k(&self) -> usize {
        self.members.len()
    }

    pub fn position(&self, node: usize) -> Option<usize> {
        self.position.get(&node).copied()
    }

    pub fn setpoint(&self, node: usize) -> f64 {
        self.position(node).map_or(0.0, |i| self.q_setpoint[i])
    }

    pub fn flag(&self, node: usize) -> bool {
        self.position(node).is_some_and(|i| self.flags[i])
    }

    pub fn set(&mut self, node: usize, q: f64) {
        let i = self.position[&node];
        self.q_setpoint[i] = q;
        self.flags[i] = q != 0.0;
    }

    pub fn total_q(&self) -> f64 {
        self.q_setpoint.iter().sum()
    }

    fn has_flags_with_sign(&self, sign: f64) -> bool {
        self.flags
            .iter()
            .zip(&self.q_setpoint)
            .any(|(&f, &q)| f && q * sign > 0.0)
    }

    /// Shrinks setpoints that exceed the present capability of their inverter.
    pub fn clip_to_capability(&mut self, capability: &[Option<f64>]) {
        for (i, &n) in self.members.iter().enumerate() {
            let cap = capability[n].unwrap_or(0.0);
            let q = self.q_setpoint[i].clamp(-cap, cap);
            self.q_setpoint[i] = q;
            self.flags[i] = q != 0.0;
        }
    }
}

fn extremes(members: &[usize], voltages: &[f64]) -> ((usize, f64), (usize, f64)) {
    let mut hi = (members[0], voltages[members[0]]);
    let mut lo = hi;
    for &n in &members[1..] {
        let v = voltages[n];
        if v > hi.1 {
            hi = (n, v);
        }
        if v < lo.1 {
            lo = (n, v);
        }
    }
    (hi, lo)
}

/// Corrective if any member is outside the limits, idle when the extreme
/// voltages sit in the return band, return when there are dispatched
/// inverters to release and room to release them.
pub fn classify_mode(
    state: &ZoneControllerState,
    voltages: &[f64],
    limits: &ControlLimits,
) -> Mode {
    if state.members.is_empty() {
        return Mode::Idle;
    }
    let ((_, v_hi), (_, v_lo)) = extremes(&state.members, voltages);
    if v_hi > limits.v_max || v_lo < limits.v_min {
        return Mode::Corrective;
    }
    if v_hi >= limits.v_max - limits.eps_u || v_lo <= limits.v_min + limits.eps_d {
        return Mode::Idle;
    }
    // Below the upper band (above the lower band) with dispatched absorption
    // (injection) still outstanding.
    if state.has_flags_with_sign(-1.0) || state.has_flags_with_sign(1.0) {
        Mode::Return
    } else {
        Mode::Idle
    }
}

/// Worst violation in a zone, or `None` when every member is within limits.
pub fn compute_violation(
    zone_id: usize,
    members: &[usize],
    voltages: &[f64],
    limits: &ControlLimits,
) -> Option<ViolationReport> {
    if members.is_empty() {
        return None;
    }
    let ((n_hi, v_hi), (n_lo, v_lo)) = extremes(members, voltages);
    let over = v_hi - limits.v_max;
    let under = limits.v_min - v_lo;
    let conflict = over > 0.0 && under > 0.0;
    if over > 0.0 && over >= under {
        Some(ViolationReport {
            zone_id,
            node: n_hi,
            v_worst: v_hi,
            delta_v: over,
            direction: Direction::Over,
            conflict,
        })
    } else if under > 0.0 {
        Some(ViolationReport {
            zone_id,
            node: n_lo,
            v_worst: v_lo,
            delta_v: under,
            direction: Direction::Under,
            conflict,
        })
    } else {
        None
    }
}

/// Distance to the return band edge for releasing dispatched inverters.
/// Absorption is released first when both kinds are outstanding.
pub fn compute_return(
    state: &ZoneControllerState,
    voltages: &[f64],
    limits: &ControlLimits,
) -> Option<ViolationReport> {
    if state.members.is_empty() {
        return None;
    }
    let ((n_hi, v_hi), (n_lo, v_lo)) = extremes(&state.members, voltages);
    let upper_edge = limits.v_max - limits.eps_u;
    let lower_edge = limits.v_min + limits.eps_d;
    if v_hi < upper_edge && state.has_flags_with_sign(-1.0) {
        Some(ViolationReport {
            zone_id: state.zone_id,
            node: n_hi,
            v_worst: v_hi,
            delta_v: upper_edge - v_hi,
            direction: Direction::Over,
            conflict: false,
        })
    } else if v_lo > lower_edge && state.has_flags_with_sign(1.0) {
        Some(ViolationReport {
            zone_id: state.zone_id,
            node: n_lo,
            v_worst: v_lo,
            delta_v: v_lo - lower_edge,
            direction: Direction::Under,
            conflict: false,
        })
    } else {
        None
    }
}

/// Reactive requirement ΔV / (α · q_rr), var. Negative (absorption) for an
/// over-voltage, positive (injection) for an under-voltage.
pub fn required_q(report: &ViolationReport, bundle: &SensitivityBundle, alpha: f64) -> Result<f64> {
    let q_rr = bundle.self_sensitivity(report.node);
    required_q_from(report, q_rr, alpha).map_err(|_| Error::Sensitivity {
        node: bundle.node_ids[report.node].clone(),
        message: format!("self-sensitivity {q_rr:.3e} is not positive"),
    })
}

pub fn required_q_from(report: &ViolationReport, q_rr: f64, alpha: f64) -> Result<f64> {
    if !(q_rr > 0.0) {
        return Err(Error::Numerical(format!("invalid self-sensitivity {q_rr}")));
    }
    let magnitude = report.delta_v / (alpha * q_rr);
    Ok(match report.direction {
        Direction::Over => -magnitude,
        Direction::Under => magnitude,
    })
}

/// Zone members ranked by correlation with `r`, descending; r first, ties by index.
pub fn build_priority_list(members: &[usize], r: usize, correlation: &Matrix) -> Vec<usize> {
    let mut list = members.to_vec();
    list.sort_by(|&a, &b| {
        (a != r)
            .cmp(&(b != r))
            .then_with(|| correlation[(b, r)].total_cmp(&correlation[(a, r)]))
            .then(a.cmp(&b))
    });
    list
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DispatchOutcome {
    /// Net change of the zone's reactive setpoints, var.
    pub dispatched: f64,
    pub exhausted: bool,
}

/// Walks the priority list for one zone.
///
/// `dq_req` is the desired net change in zone reactive power. In corrective
/// mode inverters are pushed toward `sign(dq_req) × capability` from the head
/// of the list; in return mode flagged inverters whose setpoint opposes
/// `dq_req` are released from the tail. `capability[n]` is `None` for nodes
/// without an inverter.
pub fn dispatch_step(
    state: &mut ZoneControllerState,
    mode: Mode,
    dq_req: f64,
    capability: &[Option<f64>],
    options: &ControllerOptions,
) -> DispatchOutcome {
    match mode {
        Mode::Corrective => dispatch_corrective(state, dq_req, capability, options),
        Mode::Return => release(state, dq_req, options),
        Mode::Idle => DispatchOutcome::default(),
    }
}

fn dispatch_corrective(
    state: &mut ZoneControllerState,
    dq_req: f64,
    capability: &[Option<f64>],
    options: &ControllerOptions,
) -> DispatchOutcome {
    let sign = dq_req.signum();
    let mut remaining = dq_req.abs();
    let mut dispatched = 0.0;
    state.p_k = 0;
    let m_k = state.priority_list.len();
    while remaining > Q_TOL {
        if state.p_k >= m_k {
            state.p_k = m_k;
            return DispatchOutcome {
                dispatched,
                exhausted: true,
            };
        }
        let node = state.priority_list[state.p_k];
        state.p_k += 1;
        let Some(cap) = capability[node] else {
            continue;
        };
        let current = state.setpoint(node);
        let room = (sign * cap - current) * sign;
        if room <= 0.0 {
            continue;
        }
        let step = if options.strict_paper {
            room
        } else {
            room.min(remaining)
        };
        state.set(node, current + sign * step);
        remaining -= step;
        dispatched += sign * step;
    }
    DispatchOutcome {
        dispatched,
        exhausted: false,
    }
}

fn release(
    state: &mut ZoneControllerState,
    dq_req: f64,
    options: &ControllerOptions,
) -> DispatchOutcome {
    // Setpoints opposing dq_req are the ones to release.
    let sign = dq_req.signum();
    let mut budget = dq_req.abs();
    let mut dispatched = 0.0;
    state.d_k = state.priority_list.len();
    while budget > Q_TOL && state.d_k > 0 {
        let node = state.priority_list[state.d_k - 1];
        let q = state.setpoint(node);
        if state.flag(node) && q * sign < 0.0 {
            let step = if options.strict_paper {
                q.abs()
            } else {
                q.abs().min(budget)
            };
            let new_q = if step >= q.abs() {
                0.0
            } else {
                q + sign * step
            };
            state.set(node, new_q);
            budget -= step;
            dispatched += sign * step;
            if new_q != 0.0 {
                // partially released; keep the cursor on this inverter
                break;
            }
        }
        state.d_k -= 1;
    }
    DispatchOutcome {
        dispatched,
        exhausted: false,
    }
}

/// One row of the per-step controller log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneTickLog {
    pub zone_id: usize,
    pub mode: Mode,
    pub worst_node: Option<usize>,
    pub delta_v: f64,
    pub dq_req: f64,
    pub dispatched: f64,
    pub zone_q: f64,
    pub exhausted: bool,
    pub conflict: bool,
}

/// Runs every zone controller once against a fresh set of node voltages.
///
/// `capability[n]` is the live reactive headroom of the inverter at node n.
#[allow(clippy::too_many_arguments)]
pub fn control_tick(
    states: &mut [ZoneControllerState],
    voltages: &[f64],
    bundle: &SensitivityBundle,
    limits: &ControlLimits,
    alpha: f64,
    capability: &[Option<f64>],
    fixed_rating: &[Option<f64>],
    options: &ControllerOptions,
) -> Result<Vec<ZoneTickLog>> {
    let dispatch_capability = if options.strict_paper {
        fixed_rating
    } else {
        capability
    };
    let mut log = Vec::with_capacity(states.len());
    for state in states.iter_mut() {
        state.p_k = 0;
        state.d_k = state.m_k();
        state.exhausted = false;
        let mode = classify_mode(state, voltages, limits);
        state.mode = mode;
        let report = match mode {
            Mode::Corrective => compute_violation(state.zone_id, &state.members, voltages, limits),
            Mode::Return => compute_return(state, voltages, limits),
            Mode::Idle => None,
        };
        let mut entry = ZoneTickLog {
            zone_id: state.zone_id,
            mode,
            worst_node: None,
            delta_v: 0.0,
            dq_req: 0.0,
            dispatched: 0.0,
            zone_q: 0.0,
            exhausted: false,
            conflict: false,
        };
        if let Some(report) = report {
            let mut dq = required_q(&report, bundle, alpha)?;
            if mode == Mode::Return {
                // releasing absorption raises voltage: the net change is an injection
                dq = -dq;
            }
            state.priority_list =
                build_priority_list(&state.members, report.node, &bundle.correlation);
            let outcome = dispatch_step(state, mode, dq, dispatch_capability, options);
            if outcome.exhausted {
                state.exhausted = true;
                state.mode = Mode::Idle;
            }
            entry.worst_node = Some(report.node);
            entry.delta_v = report.delta_v;
            entry.dq_req = dq;
            entry.dispatched = outcome.dispatched;
            entry.exhausted = outcome.exhausted;
            entry.conflict = report.conflict;
            if report.conflict {
                log::warn!(
                    "zone {}: simultaneous over- and under-voltage, handling {:?}",
                    state.zone_id,
                    report.direction
                );
            }
        }
        entry.zone_q = state.total_q();
        log.push(entry);
    }
    Ok(log)
}

/// Setpoints of every node (zero outside zones or without inverters).
pub fn collect_setpoints(states: &[ZoneControllerState], n: usize) -> Vec<f64> {
    let mut q = vec![0.0; n];
    for s in states {
        for (i, &node) in s.members.iter().enumerate() {
            q[node] = s.q_setpoint[i];
        }
    }
    q
}
