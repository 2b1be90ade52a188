//! Unbalanced three-phase backward/forward sweep power flow.
//!
//! Loads are constant power. Everything inside the solver is per-unit on the
//! feeder's voltage and single-phase power bases; injections come in as VA.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::FeederModel;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Convergence threshold on the per-unit complex power mismatch.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Start from the source voltage rather than a supplied initial guess.
    pub flat_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 100,
            flat_start: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config(
                "solver tolerance must be > 0 and max_iterations >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Per-unit voltage of every bus, indexed by phase; absent phases are zero.
    pub bus_voltages: Vec<[Complex64; 3]>,
    /// Per-unit voltage at every phase node, in node order.
    pub node_voltages: Vec<Complex64>,
    /// Per-unit current through every segment (source to load direction).
    pub line_currents: Vec<[Complex64; 3]>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

/// Source, load and loss totals of a solved case, in VA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerBalance {
    pub source: Complex64,
    pub load: Complex64,
    pub losses: Complex64,
}

impl PowerBalance {
    pub fn residual(&self) -> f64 {
        (self.source - self.load - self.losses).norm()
    }
}

pub fn source_voltages(model: &FeederModel) -> [Complex64; 3] {
    let v = model.source_voltage_pu;
    let deg = std::f64::consts::PI / 180.0;
    [
        Complex64::from_polar(v, 0.0),
        Complex64::from_polar(v, -120.0 * deg),
        Complex64::from_polar(v, 120.0 * deg),
    ]
}

pub fn solve(
    model: &FeederModel,
    injections: &[Complex64],
    config: &SolverConfig,
) -> Result<PowerFlowSolution> {
    solve_from(model, injections, config, None)
}

/// Like [`solve`], but starts from `initial` bus voltages when
/// `config.flat_start` is false.
pub fn solve_from(
    model: &FeederModel,
    injections: &[Complex64],
    config: &SolverConfig,
    initial: Option<&PowerFlowSolution>,
) -> Result<PowerFlowSolution> {
    config.validate()?;
    let nodes = model.phase_nodes();
    if injections.len() != nodes.len() {
        return Err(Error::Config(format!(
            "expected {} injections, got {}",
            nodes.len(),
            injections.len()
        )));
    }

    let nb = model.buses.len();
    let zbase = model.impedance_base();
    let z_pu: Vec<[[Complex64; 3]; 3]> = model
        .lines
        .iter()
        .map(|l| {
            let mut z = l.z;
            for row in &mut z {
                for e in row.iter_mut() {
                    *e /= zbase;
                }
            }
            z
        })
        .collect();
    for (k, line) in model.lines.iter().enumerate() {
        if line
            .phases
            .iter()
            .any(|p| z_pu[k][p.index()][p.index()].norm() == 0.0)
        {
            return Err(Error::DegenerateSegment(format!(
                "{}-{}",
                model.buses[line.from].id, model.buses[line.to].id
            )));
        }
    }

    // Complex power drawn from the network at each bus phase, per-unit.
    let mut draw = vec![[ZERO; 3]; nb];
    for (node, inj) in nodes.iter().zip(injections) {
        draw[node.bus][node.phase.index()] -= inj / model.base_power;
    }

    let vs = source_voltages(model);
    let masked = |b: usize| {
        let mut v = [ZERO; 3];
        for p in model.buses[b].phases.iter() {
            v[p.index()] = vs[p.index()];
        }
        v
    };
    let mut voltages: Vec<[Complex64; 3]> = match initial {
        Some(sol) if !config.flat_start && sol.bus_voltages.len() == nb => sol.bus_voltages.clone(),
        _ => (0..nb).map(masked).collect(),
    };
    voltages[model.source_bus] = masked(model.source_bus);

    let order = &model.topology.order;
    let parent = &model.topology.parent_line;
    let mut currents = vec![[ZERO; 3]; model.lines.len()];
    let mut bus_current = vec![[ZERO; 3]; nb];

    let mut mismatch = f64::INFINITY;
    for iteration in 1..=config.max_iterations {
        backward_sweep(model, &draw, &voltages, &mut bus_current, &mut currents);

        // forward sweep
        let previous = voltages.clone();
        for &b in order.iter().skip(1) {
            let k = parent[b].unwrap();
            let line = &model.lines[k];
            let up = voltages[line.from];
            let mut v = [ZERO; 3];
            for p in model.buses[b].phases.iter() {
                let i = p.index();
                let drop: Complex64 = (0..3).map(|j| z_pu[k][i][j] * currents[k][j]).sum();
                v[i] = up[i] - drop;
            }
            voltages[b] = v;
        }

        mismatch = 0.0;
        for b in 0..nb {
            for p in model.buses[b].phases.iter() {
                let i = p.index();
                let s = draw[b][i];
                if s == ZERO {
                    continue;
                }
                let used = (s / previous[b][i]).conj();
                let m = (s - voltages[b][i] * used.conj()).norm();
                mismatch = mismatch.max(m);
            }
        }
        if !mismatch.is_finite()
            || voltages
                .iter()
                .flatten()
                .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::Numerical(format!(
                "voltage collapse in power flow at iteration {iteration}"
            )));
        }
        if mismatch <= config.tolerance {
            backward_sweep(model, &draw, &voltages, &mut bus_current, &mut currents);
            let node_voltages = nodes
                .iter()
                .map(|n| voltages[n.bus][n.phase.index()])
                .collect();
            return Ok(PowerFlowSolution {
                bus_voltages: voltages,
                node_voltages,
                line_currents: currents,
                iterations: iteration,
                max_mismatch: mismatch,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: config.max_iterations,
        mismatch,
    })
}

fn backward_sweep(
    model: &FeederModel,
    draw: &[[Complex64; 3]],
    voltages: &[[Complex64; 3]],
    bus_current: &mut [[Complex64; 3]],
    currents: &mut [[Complex64; 3]],
) {
    for (b, bus) in model.buses.iter().enumerate() {
        let mut i_b = [ZERO; 3];
        for p in bus.phases.iter() {
            let i = p.index();
            if draw[b][i] != ZERO {
                i_b[i] = (draw[b][i] / voltages[b][i]).conj();
            }
        }
        bus_current[b] = i_b;
    }
    for &b in model.topology.order.iter().skip(1).rev() {
        let k = model.topology.parent_line[b].unwrap();
        let up = model.lines[k].from;
        let i_b = bus_current[b];
        currents[k] = i_b;
        for i in 0..3 {
            bus_current[up][i] += i_b[i];
        }
    }
}

/// Per-unit voltage magnitude at every phase node, in node order.
pub fn voltage_magnitudes(solution: &PowerFlowSolution) -> Vec<f64> {
    solution.node_voltages.iter().map(|v| v.norm()).collect()
}

pub fn power_balance(
    model: &FeederModel,
    solution: &PowerFlowSolution,
    injections: &[Complex64],
) -> PowerBalance {
    let sbase = model.base_power;
    let mut source = ZERO;
    let mut losses = ZERO;
    for (k, line) in model.lines.iter().enumerate() {
        let i = solution.line_currents[k];
        let vf = solution.bus_voltages[line.from];
        let vt = solution.bus_voltages[line.to];
        for p in line.phases.iter() {
            let j = p.index();
            losses += (vf[j] - vt[j]) * i[j].conj();
            if line.from == model.source_bus {
                source += vf[j] * i[j].conj();
            }
        }
    }
    let load: Complex64 = -injections.iter().sum::<Complex64>();
    PowerBalance {
        source: source * sbase,
        load,
        losses: losses * sbase,
    }
}
