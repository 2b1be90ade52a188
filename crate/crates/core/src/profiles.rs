//! Time-series load and PV profiles.
//!
//! CSV layout: an optional first line `# timestep_s=<seconds>`, then a header
//! whose first column is the step index or timestamp and whose remaining
//! columns are `<node id>:p`, `<node id>:q` (W / var) or `<inverter id>:pv` (W).
//! Load columns that are absent hold the node's nominal load; absent
//! inverter columns mean zero PV.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::feeder::FeederModel;

pub const DEFAULT_TIMESTEP_S: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioProfiles {
    pub timestep: f64,
    pub horizon: usize,
    /// `[node][step]` active load, W.
    pub load_p: Vec<Vec<f64>>,
    /// `[node][step]` reactive load, var.
    pub load_q: Vec<Vec<f64>>,
    /// `[node][step]` PV active output, W; all zero for nodes without an inverter.
    pub pv: Vec<Vec<f64>>,
}

impl ScenarioProfiles {
    /// Constant nominal loads and zero PV over `horizon` steps.
    pub fn nominal(model: &FeederModel, horizon: usize, timestep: f64) -> Self {
        let nodes = model.phase_nodes();
        Self {
            timestep,
            horizon,
            load_p: nodes.iter().map(|n| vec![n.load_p; horizon]).collect(),
            load_q: nodes.iter().map(|n| vec![n.load_q; horizon]).collect(),
            pv: nodes.iter().map(|_| vec![0.0; horizon]).collect(),
        }
    }

    pub fn validate(&self, model: &FeederModel) -> Result<()> {
        let n = model.n_nodes();
        if self.load_p.len() != n || self.load_q.len() != n || self.pv.len() != n {
            return Err(Error::Profile(format!("expected series for {n} nodes")));
        }
        if !(self.timestep.is_finite() && self.timestep > 0.0) {
            return Err(Error::Profile("timestep must be positive".into()));
        }
        for (i, node) in model.phase_nodes().iter().enumerate() {
            for (what, s) in [
                ("p", &self.load_p[i]),
                ("q", &self.load_q[i]),
                ("pv", &self.pv[i]),
            ] {
                if s.len() != self.horizon {
                    return Err(Error::Profile(format!(
                        "series {}:{what} has {} steps, expected {}",
                        node.id,
                        s.len(),
                        self.horizon
                    )));
                }
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Profile(format!(
                        "series {}:{what} has non-finite values",
                        node.id
                    )));
                }
            }
            let cap = node.inverter.as_ref().map_or(0.0, |inv| inv.spec.p_rated);
            if let Some(v) = self.pv[i]
                .iter()
                .find(|v| **v < 0.0 || **v > cap * (1.0 + 1e-12))
            {
                return Err(Error::Profile(format!(
                    "PV output {v} at node {} outside [0, {cap}]",
                    node.id
                )));
            }
        }
        Ok(())
    }

    /// Net complex injection per node at `step`, VA (generation positive).
    pub fn injections(&self, step: usize, q_setpoints: &[f64]) -> Vec<Complex64> {
        (0..self.load_p.len())
            .map(|i| {
                let q_inv = q_setpoints.get(i).copied().unwrap_or(0.0);
                Complex64::new(
                    self.pv[i][step] - self.load_p[i][step],
                    q_inv - self.load_q[i][step],
                )
            })
            .collect()
    }

    pub fn pv_at(&self, step: usize) -> Vec<f64> {
        self.pv.iter().map(|s| s[step]).collect()
    }

    pub fn total_load_at(&self, step: usize) -> f64 {
        self.load_p.iter().map(|s| s[step]).sum()
    }

    pub fn total_pv_at(&self, step: usize) -> f64 {
        self.pv.iter().map(|s| s[step]).sum()
    }

    /// Step with the largest aggregate PV output (first on ties).
    pub fn max_pv_step(&self) -> usize {
        (0..self.horizon).fold(0, |best, t| {
            if self.total_pv_at(t) > self.total_pv_at(best) {
                t
            } else {
                best
            }
        })
    }

    pub fn to_csv_string(&self, model: &FeederModel) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# timestep_s={}", self.timestep);
        out.push_str("step");
        for node in model.phase_nodes() {
            let _ = write!(out, ",{0}:p,{0}:q", node.id);
            if let Some(inv) = &node.inverter {
                let _ = write!(out, ",{}:pv", inv.id);
            }
        }
        out.push('\n');
        for t in 0..self.horizon {
            let _ = write!(out, "{t}");
            for (i, node) in model.phase_nodes().iter().enumerate() {
                let _ = write!(out, ",{},{}", self.load_p[i][t], self.load_q[i][t]);
                if node.inverter.is_some() {
                    let _ = write!(out, ",{}", self.pv[i][t]);
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, model: &FeederModel, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string(model)).map_err(|e| Error::io(path, e))
    }
}

enum Column {
    LoadP(usize),
    LoadQ(usize),
    Pv(usize),
}

pub fn load_profiles(path: impl AsRef<Path>, model: &FeederModel) -> Result<ScenarioProfiles> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_profiles(&text, model)
}

pub fn parse_profiles(text: &str, model: &FeederModel) -> Result<ScenarioProfiles> {
    let mut timestep = DEFAULT_TIMESTEP_S;
    let mut body = text;
    if let Some(rest) = text.strip_prefix('#') {
        let (first, remainder) = rest.split_once('\n').unwrap_or((rest, ""));
        body = remainder;
        for item in first.split([',', ' ', ';']).filter(|s| !s.is_empty()) {
            if let Some(v) = item.strip_prefix("timestep_s=") {
                timestep = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Profile(format!("bad timestep '{v}'")))?;
            }
        }
    }

    let mut by_node = HashMap::new();
    let mut by_inverter = HashMap::new();
    for node in model.phase_nodes() {
        by_node.insert(node.id.as_str(), node.node_index);
        if let Some(inv) = &node.inverter {
            by_inverter.insert(inv.id.as_str(), node.node_index);
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Profile(format!("header: {e}")))?
        .clone();
    let mut columns = Vec::new();
    for name in headers.iter().skip(1) {
        let col = name
            .rsplit_once(':')
            .and_then(|(id, kind)| match kind {
                "p" => by_node.get(id).map(|&i| Column::LoadP(i)),
                "q" => by_node.get(id).map(|&i| Column::LoadQ(i)),
                "pv" => by_inverter.get(id).map(|&i| Column::Pv(i)),
                _ => None,
            })
            .ok_or_else(|| Error::Profile(format!("unknown column '{name}'")))?;
        columns.push(col);
    }

    let n = model.n_nodes();
    let mut load_p: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut load_q: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut pv: Vec<Option<Vec<f64>>> = vec![None; n];
    for col in &columns {
        match *col {
            Column::LoadP(i) => load_p[i] = Some(Vec::new()),
            Column::LoadQ(i) => load_q[i] = Some(Vec::new()),
            Column::Pv(i) => pv[i] = Some(Vec::new()),
        }
    }

    let mut horizon = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Profile(format!("row {}: {e}", row + 1)))?;
        if record.len() != headers.len() {
            return Err(Error::Profile(format!(
                "ragged series: row {} has {} fields, header has {}",
                row + 1,
                record.len(),
                headers.len()
            )));
        }
        for (k, col) in columns.iter().enumerate() {
            let raw = &record[k + 1];
            let v: f64 = raw.parse().map_err(|_| {
                Error::Profile(format!(
                    "row {}: bad value '{raw}' in column '{}'",
                    row + 1,
                    &headers[k + 1]
                ))
            })?;
            let series = match *col {
                Column::LoadP(i) => &mut load_p[i],
                Column::LoadQ(i) => &mut load_q[i],
                Column::Pv(i) => &mut pv[i],
            };
            series.as_mut().unwrap().push(v);
        }
        horizon += 1;
    }
    if horizon == 0 {
        return Err(Error::Profile("no data rows".into()));
    }

    let nodes = model.phase_nodes();
    let profiles = ScenarioProfiles {
        timestep,
        horizon,
        load_p: load_p
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.unwrap_or_else(|| vec![nodes[i].load_p; horizon]))
            .collect(),
        load_q: load_q
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.unwrap_or_else(|| vec![nodes[i].load_q; horizon]))
            .collect(),
        pv: pv
            .into_iter()
            .map(|s| s.unwrap_or_else(|| vec![0.0; horizon]))
            .collect(),
    };
    profiles.validate(model)?;
    Ok(profiles)
}
