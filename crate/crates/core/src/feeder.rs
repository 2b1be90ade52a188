//! Radial feeder model and the TOML feeder description format.
//!
//! A feeder file has a `[feeder]` header followed by `[[linecode]]`,
//! `[[bus]]`, `[[segment]]`, `[[load]]` and `[[inverter]]` tables. See
//! `docs/feeder-format.md` at the repository root for the full grammar.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FEET_PER_MILE: f64 = 5280.0;
const METERS_PER_FOOT: f64 = 0.3048;
const METERS_PER_MILE: f64 = FEET_PER_MILE * METERS_PER_FOOT;

pub const DEFAULT_OVERSIZE_FACTOR: f64 = 1.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Phase {
        Phase::ALL[i]
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::A => "A",
            Phase::B => "B",
            Phase::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Phase::A),
            "B" | "b" => Ok(Phase::B),
            "C" | "c" => Ok(Phase::C),
            other => Err(Error::Validation(format!("unknown phase '{other}'"))),
        }
    }
}

/// Subset of {A, B, C} stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn single(phase: Phase) -> Self {
        PhaseSet(1 << phase.index())
    }

    pub fn contains(self, phase: Phase) -> bool {
        self.0 & (1 << phase.index()) != 0
    }

    pub fn is_subset_of(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Phases in A, B, C order.
    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }
}

impl FromStr for PhaseSet {
    type Err = Error;

    /// Parses strings such as `"ABC"`, `"bc"` or `"A"`. Repeated phases are rejected.
    fn from_str(s: &str) -> Result<Self> {
        let mut bits = 0u8;
        for ch in s.trim().chars() {
            let phase: Phase = ch.to_string().parse()?;
            let bit = 1 << phase.index();
            if bits & bit != 0 {
                return Err(Error::Validation(format!(
                    "phase {phase} repeated in '{s}'"
                )));
            }
            bits |= bit;
        }
        if bits == 0 {
            return Err(Error::Validation(format!("empty phase set '{s}'")));
        }
        Ok(PhaseSet(bits))
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// File schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederFile {
    pub feeder: FeederHeader,
    #[serde(default, rename = "linecode")]
    pub linecodes: Vec<LineCodeDef>,
    #[serde(default, rename = "bus")]
    pub buses: Vec<BusDef>,
    #[serde(default, rename = "segment")]
    pub segments: Vec<SegmentDef>,
    #[serde(default, rename = "load")]
    pub loads: Vec<LoadDef>,
    #[serde(default, rename = "inverter")]
    pub inverters: Vec<InverterDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederHeader {
    pub name: String,
    pub source_bus: String,
    /// Line-to-neutral base voltage, volts.
    pub base_voltage: f64,
    /// Single-phase base power, VA.
    pub base_power: f64,
    #[serde(default = "default_source_voltage")]
    pub source_voltage_pu: f64,
}

fn default_source_voltage() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpedanceUnit {
    OhmPerKm,
    OhmPerMile,
    /// Total impedance of the segment regardless of its length.
    Ohm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineCodeDef {
    pub name: String,
    pub unit: ImpedanceUnit,
    pub r: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusDef {
    pub id: String,
    pub phases: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentDef {
    pub from: String,
    pub to: String,
    pub phases: String,
    pub length_m: f64,
    pub linecode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadDef {
    pub id: String,
    pub bus: String,
    pub phases: String,
    /// Nominal active power per phase, W.
    pub p_w: Vec<f64>,
    /// Nominal reactive power per phase, var.
    pub q_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverterDef {
    pub id: String,
    pub bus: String,
    pub phase: String,
    pub p_rated_w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oversize_factor: Option<f64>,
}

// ---------------------------------------------------------------------------
// Validated model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseSet,
    /// Physical length of the path to the source bus, meters.
    pub distance_to_source: f64,
    /// Sum of mean self-impedance magnitudes along the path to the source, ohms.
    pub impedance_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSegment {
    /// Upstream (source side) bus index.
    pub from: usize,
    /// Downstream bus index.
    pub to: usize,
    pub length: f64,
    pub phases: PhaseSet,
    /// Series impedance in ohms, indexed by phase; absent phases are zero.
    pub z: [[Complex64; 3]; 3],
    pub linecode: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverterSpec {
    pub p_rated: f64,
    pub s_rated: f64,
    pub oversize_factor: f64,
}

impl InverterSpec {
    pub fn new(p_rated: f64, oversize_factor: f64) -> Self {
        Self {
            p_rated,
            s_rated: oversize_factor * p_rated,
            oversize_factor,
        }
    }

    /// Reactive headroom `sqrt(s² − p²)` at active output `p`, var.
    pub fn available_q(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, self.s_rated);
        (self.s_rated * self.s_rated - p * p).max(0.0).sqrt()
    }

    /// Reactive capability guaranteed at every active output up to `p_rated`.
    pub fn guaranteed_q(&self) -> f64 {
        self.available_q(self.p_rated)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inverter {
    pub id: String,
    pub spec: InverterSpec,
}

/// One phase of one load: the unit of sensitivity, clustering and dispatch.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseNode {
    pub node_index: usize,
    pub id: String,
    pub load_id: String,
    pub bus: usize,
    pub bus_id: String,
    pub phase: Phase,
    /// Nominal active load, W.
    pub load_p: f64,
    /// Nominal reactive load, var.
    pub load_q: f64,
    pub inverter: Option<Inverter>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    /// Bus indices in breadth-first order from the source.
    pub order: Vec<usize>,
    /// Segment feeding each bus; `None` for the source.
    pub parent_line: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKey {
    #[default]
    Length,
    Impedance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    pub name: String,
    pub buses: Vec<Bus>,
    pub lines: Vec<LineSegment>,
    pub source_bus: usize,
    pub base_voltage: f64,
    pub base_power: f64,
    pub source_voltage_pu: f64,
    pub topology: Topology,
    nodes: Vec<PhaseNode>,
    description: FeederFile,
}

pub fn load_feeder(path: impl AsRef<Path>) -> Result<FeederModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FeederModel::from_toml_str(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            context: path.display().to_string(),
            message,
        },
        other => other,
    })
}

/// Single-phase load points in deterministic order (bus id, phase, load id).
pub fn enumerate_phase_nodes(model: &FeederModel) -> &[PhaseNode] {
    model.phase_nodes()
}

impl FeederModel {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: FeederFile = toml::from_str(text).map_err(|e| Error::Parse {
            context: "feeder file".into(),
            message: e.to_string(),
        })?;
        Self::from_description(file)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.description).expect("feeder description is always serializable")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn description(&self) -> &FeederFile {
        &self.description
    }

    pub fn phase_nodes(&self) -> &[PhaseNode] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, index: usize) -> &PhaseNode {
        &self.nodes[index]
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.id.clone()).collect()
    }

    pub fn node_by_id(&self, id: &str) -> Option<&PhaseNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Node indices that host an inverter, ascending.
    pub fn inverter_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.inverter.is_some())
            .map(|n| n.node_index)
            .collect()
    }

    pub fn impedance_base(&self) -> f64 {
        self.base_voltage * self.base_voltage / self.base_power
    }

    pub fn phases_present(&self) -> Vec<Phase> {
        Phase::ALL
            .into_iter()
            .filter(|p| self.nodes.iter().any(|n| n.phase == *p))
            .collect()
    }

    pub fn node_distance(&self, node: usize, key: DistanceKey) -> f64 {
        let bus = &self.buses[self.nodes[node].bus];
        match key {
            DistanceKey::Length => bus.distance_to_source,
            DistanceKey::Impedance => bus.impedance_distance,
        }
    }

    /// Returns a copy with every inverter's `p_rated` multiplied by `factor`.
    pub fn with_scaled_inverters(&self, factor: f64) -> Result<Self> {
        let mut file = self.description.clone();
        for inv in &mut file.inverters {
            inv.p_rated_w *= factor;
        }
        Self::from_description(file)
    }

    pub fn from_description(file: FeederFile) -> Result<Self> {
        let h = &file.feeder;
        for (what, v) in [
            ("base_voltage", h.base_voltage),
            ("base_power", h.base_power),
            ("source_voltage_pu", h.source_voltage_pu),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!(
                    "{what} must be positive, got {v}"
                )));
            }
        }

        let mut bus_index = HashMap::new();
        let mut bus_phases = Vec::with_capacity(file.buses.len());
        for (i, b) in file.buses.iter().enumerate() {
            if bus_index.insert(b.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate bus id '{}'", b.id)));
            }
            let phases: PhaseSet = b
                .phases
                .parse()
                .map_err(|e| Error::Validation(format!("bus '{}': {e}", b.id)))?;
            bus_phases.push(phases);
        }
        let lookup_bus = |id: &str, who: &str| {
            bus_index
                .get(id)
                .copied()
                .ok_or_else(|| Error::Validation(format!("{who} references unknown bus '{id}'")))
        };
        let source_bus = lookup_bus(&h.source_bus, "feeder header")?;

        let mut codes: HashMap<&str, &LineCodeDef> = HashMap::new();
        for lc in &file.linecodes {
            let n = lc.r.len();
            let square = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|row| row.len() == n);
            if n == 0 || n > 3 || !square(&lc.r) || !square(&lc.x) {
                return Err(Error::Validation(format!(
                    "linecode '{}': r and x must be equal square matrices of size 1..=3",
                    lc.name
                )));
            }
            if lc.r.iter().chain(&lc.x).flatten().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "linecode '{}': non-finite entry",
                    lc.name
                )));
            }
            if (0..n).any(|i| lc.r[i][i] <= 0.0) {
                return Err(Error::Validation(format!(
                    "linecode '{}': diagonal resistance must be positive",
                    lc.name
                )));
            }
            if codes.insert(lc.name.as_str(), lc).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate linecode '{}'",
                    lc.name
                )));
            }
        }

        // Radiality via union-find before orienting anything.
        let mut uf = UnionFind::new(file.buses.len());
        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); file.buses.len()];
        let mut seg_phases = Vec::with_capacity(file.segments.len());
        for (k, s) in file.segments.iter().enumerate() {
            let name = format!("{}-{}", s.from, s.to);
            let a = lookup_bus(&s.from, &format!("segment {name}"))?;
            let b = lookup_bus(&s.to, &format!("segment {name}"))?;
            if a == b {
                return Err(Error::Validation(format!(
                    "not radial: segment {name} is a self-loop"
                )));
            }
            let phases: PhaseSet = s
                .phases
                .parse()
                .map_err(|e| Error::Validation(format!("segment {name}: {e}")))?;
            if !phases.is_subset_of(bus_phases[a]) || !phases.is_subset_of(bus_phases[b]) {
                return Err(Error::Validation(format!(
                    "segment {name}: phases {phases} not present at both endpoints"
                )));
            }
            if !(s.length_m.is_finite() && s.length_m > 0.0) {
                return Err(Error::Validation(format!(
                    "segment {name}: length must be positive"
                )));
            }
            let code = codes.get(s.linecode.as_str()).ok_or_else(|| {
                Error::Validation(format!("segment {name}: unknown linecode '{}'", s.linecode))
            })?;
            if code.r.len() != phases.len() {
                return Err(Error::Validation(format!(
                    "segment {name}: linecode '{}' has dimension {} but segment carries {} phases",
                    s.linecode,
                    code.r.len(),
                    phases.len()
                )));
            }
            if !uf.union(a, b) {
                return Err(Error::Validation(format!(
                    "not radial: segment {name} closes a loop"
                )));
            }
            adjacency[a].push((b, k));
            adjacency[b].push((a, k));
            seg_phases.push(phases);
        }

        let nb = file.buses.len();
        let mut parent_line = vec![None; nb];
        let mut visited = vec![false; nb];
        let mut order = Vec::with_capacity(nb);
        let mut oriented: Vec<Option<(usize, usize)>> = vec![None; file.segments.len()];
        let mut queue = VecDeque::from([source_bus]);
        visited[source_bus] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, k) in &adjacency[u] {
                if !visited[v] {
                    visited[v] = true;
                    parent_line[v] = Some(k);
                    oriented[k] = Some((u, v));
                    queue.push_back(v);
                }
            }
        }
        if let Some(i) = visited.iter().position(|v| !v) {
            return Err(Error::Validation(format!(
                "bus '{}' is not connected to source bus '{}'",
                file.buses[i].id, h.source_bus
            )));
        }

        let mut lines = Vec::with_capacity(file.segments.len());
        for (k, s) in file.segments.iter().enumerate() {
            let (from, to) = oriented[k].expect("every segment of a spanning tree is oriented");
            let code = codes[s.linecode.as_str()];
            let scale = match code.unit {
                ImpedanceUnit::OhmPerKm => s.length_m / 1000.0,
                ImpedanceUnit::OhmPerMile => s.length_m / METERS_PER_MILE,
                ImpedanceUnit::Ohm => 1.0,
            };
            let phases = seg_phases[k];
            let mut z = [[Complex64::new(0.0, 0.0); 3]; 3];
            let idx: Vec<usize> = phases.iter().map(Phase::index).collect();
            for (a, &pa) in idx.iter().enumerate() {
                for (b, &pb) in idx.iter().enumerate() {
                    z[pa][pb] = Complex64::new(code.r[a][b], code.x[a][b]) * scale;
                }
            }
            lines.push(LineSegment {
                from,
                to,
                length: s.length_m,
                phases,
                z,
                linecode: s.linecode.clone(),
            });
        }

        let mut distance = vec![0.0; nb];
        let mut zdistance = vec![0.0; nb];
        for &b in order.iter().skip(1) {
            let line = &lines[parent_line[b].unwrap()];
            if !bus_phases[b].is_subset_of(line.phases) {
                return Err(Error::Validation(format!(
                    "bus '{}': phases {} not all fed by its upstream segment ({})",
                    file.buses[b].id, bus_phases[b], line.phases
                )));
            }
            let mean_self: f64 = line
                .phases
                .iter()
                .map(|p| line.z[p.index()][p.index()].norm())
                .sum::<f64>()
                / line.phases.len() as f64;
            distance[b] = distance[line.from] + line.length;
            zdistance[b] = zdistance[line.from] + mean_self;
        }

        let buses: Vec<Bus> = file
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| Bus {
                id: b.id.clone(),
                phases: bus_phases[i],
                distance_to_source: distance[i],
                impedance_distance: zdistance[i],
            })
            .collect();

        let nodes = build_phase_nodes(&file, &bus_index, &buses)?;

        Ok(FeederModel {
            name: h.name.clone(),
            buses,
            lines,
            source_bus,
            base_voltage: h.base_voltage,
            base_power: h.base_power,
            source_voltage_pu: h.source_voltage_pu,
            topology: Topology { order, parent_line },
            nodes,
            description: file,
        })
    }
}

fn build_phase_nodes(
    file: &FeederFile,
    bus_index: &HashMap<String, usize>,
    buses: &[Bus],
) -> Result<Vec<PhaseNode>> {
    // (bus id, phase, load id) -> (bus index, p, q)
    let mut points: BTreeMap<(String, Phase, String), (usize, f64, f64)> = BTreeMap::new();
    let mut seen_loads = HashMap::new();
    for load in &file.loads {
        if seen_loads.insert(load.id.as_str(), ()).is_some() {
            return Err(Error::Validation(format!(
                "duplicate load id '{}'",
                load.id
            )));
        }
        let b = *bus_index.get(&load.bus).ok_or_else(|| {
            Error::Validation(format!(
                "load '{}' references unknown bus '{}'",
                load.id, load.bus
            ))
        })?;
        let phases: PhaseSet = load
            .phases
            .parse()
            .map_err(|e| Error::Validation(format!("load '{}': {e}", load.id)))?;
        if !phases.is_subset_of(buses[b].phases) {
            return Err(Error::Validation(format!(
                "load '{}': phases {phases} not present at bus '{}'",
                load.id, load.bus
            )));
        }
        if load.p_w.len() != phases.len() || load.q_var.len() != phases.len() {
            return Err(Error::Validation(format!(
                "load '{}': expected {} p_w/q_var values",
                load.id,
                phases.len()
            )));
        }
        if load.p_w.iter().chain(&load.q_var).any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "load '{}': non-finite power",
                load.id
            )));
        }
        for (k, phase) in phases.iter().enumerate() {
            points.insert(
                (load.bus.clone(), phase, load.id.clone()),
                (b, load.p_w[k], load.q_var[k]),
            );
        }
    }

    let mut nodes: Vec<PhaseNode> = points
        .into_iter()
        .enumerate()
        .map(|(i, ((bus_id, phase, load_id), (bus, p, q)))| PhaseNode {
            node_index: i,
            id: format!("{load_id}.{phase}"),
            load_id,
            bus,
            bus_id,
            phase,
            load_p: p,
            load_q: q,
            inverter: None,
        })
        .collect();

    let mut inverter_ids = HashMap::new();
    for inv in &file.inverters {
        if inverter_ids.insert(inv.id.as_str(), ()).is_some() {
            return Err(Error::Validation(format!(
                "duplicate inverter id '{}'",
                inv.id
            )));
        }
        let b = *bus_index.get(&inv.bus).ok_or_else(|| {
            Error::Validation(format!(
                "inverter '{}' references unknown bus '{}'",
                inv.id, inv.bus
            ))
        })?;
        let phase: Phase = inv
            .phase
            .parse()
            .map_err(|e| Error::Validation(format!("inverter '{}': {e}", inv.id)))?;
        if !buses[b].phases.contains(phase) {
            return Err(Error::Validation(format!(
                "inverter '{}': phase {phase} not present at bus '{}'",
                inv.id, inv.bus
            )));
        }
        let factor = inv.oversize_factor.unwrap_or(DEFAULT_OVERSIZE_FACTOR);
        if !(inv.p_rated_w.is_finite() && inv.p_rated_w > 0.0)
            || !(factor.is_finite() && factor >= 1.0)
        {
            return Err(Error::Validation(format!(
                "inverter '{}': p_rated_w must be positive and oversize_factor >= 1",
                inv.id
            )));
        }
        let node = nodes
            .iter_mut()
            .find(|n| n.bus == b && n.phase == phase && n.inverter.is_none())
            .ok_or_else(|| {
                Error::Validation(format!(
                    "inverter '{}': no free load point on bus '{}' phase {phase}",
                    inv.id, inv.bus
                ))
            })?;
        node.inverter = Some(Inverter {
            id: inv.id.clone(),
            spec: InverterSpec::new(inv.p_rated_w, factor),
        });
    }
    Ok(nodes)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}
