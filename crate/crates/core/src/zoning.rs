//! Voltage-regulation zone identification.
//!
//! Nodes are grouped by phase, sorted by distance from the source and then
//! assigned one at a time by fast incremental clustering: a node joins the
//! existing zone with the highest mean correlation if that mean reaches the
//! threshold α, otherwise it seeds a new zone. Assignments are final.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::feeder::{DistanceKey, FeederModel, Phase};
use crate::matrix::Matrix;
use crate::sensitivity::{csv_io, SensitivityBundle};

#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    pub id: usize,
    pub phase: Phase,
    /// Node indices in insertion order.
    pub members: Vec<usize>,
    /// Lowest mean correlation accepted when a node joined (1.0 for a lone seed).
    pub min_accepted_mcc: f64,
}

impl Zone {
    pub fn m_k(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZonePartition {
    pub alpha: f64,
    pub zones: Vec<Zone>,
    /// Nodes with degenerate sensitivity placed by distance instead of by FIC.
    pub flagged: Vec<usize>,
}

impl ZonePartition {
    pub fn k(&self) -> usize {
        self.zones.len()
    }

    pub fn phase_of_zone(&self, zone: usize) -> Phase {
        self.zones[zone].phase
    }

    /// Zone index of every node (`n` = total node count).
    pub fn node_zones(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for (k, z) in self.zones.iter().enumerate() {
            for &m in &z.members {
                out[m] = Some(k);
            }
        }
        out
    }

    pub fn zones_per_phase(&self) -> [usize; 3] {
        let mut k = [0; 3];
        for z in &self.zones {
            k[z.phase.index()] += 1;
        }
        k
    }
}

/// Per-zone quality figures for the partition summary.
#[derive(Debug, Clone, Serialize)]
pub struct ZoneQuality {
    pub zone_id: usize,
    pub phase: String,
    pub size: usize,
    pub mean_pairwise_correlation: f64,
    pub min_accepted_mcc: f64,
}

pub fn zone_quality(partition: &ZonePartition, correlation: &Matrix) -> Vec<ZoneQuality> {
    partition
        .zones
        .iter()
        .map(|z| {
            let m = &z.members;
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for (a, &x) in m.iter().enumerate() {
                for &y in &m[a + 1..] {
                    sum += correlation[(x, y)];
                    pairs += 1;
                }
            }
            ZoneQuality {
                zone_id: z.id,
                phase: z.phase.to_string(),
                size: m.len(),
                mean_pairwise_correlation: if pairs == 0 { 1.0 } else { sum / pairs as f64 },
                min_accepted_mcc: z.min_accepted_mcc,
            }
        })
        .collect()
}

/// Nodes on `phase`, ascending by distance to the source; ties by bus id then node index.
pub fn sort_nodes_for_fic(model: &FeederModel, phase: Phase, key: DistanceKey) -> Vec<usize> {
    let mut nodes: Vec<usize> = model
        .phase_nodes()
        .iter()
        .filter(|n| n.phase == phase)
        .map(|n| n.node_index)
        .collect();
    nodes.sort_by(|&a, &b| {
        model
            .node_distance(a, key)
            .total_cmp(&model.node_distance(b, key))
            .then_with(|| model.node(a).bus_id.cmp(&model.node(b).bus_id))
            .then(a.cmp(&b))
    });
    nodes
}

/// Mean correlation between node `l` and the members of a zone.
pub fn mean_zone_correlation(l: usize, members: &[usize], correlation: &Matrix) -> f64 {
    members.iter().map(|&x| correlation[(l, x)]).sum::<f64>() / members.len() as f64
}

/// One assignment decision of the incremental clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct FicStep {
    pub node: usize,
    /// Mean correlation against each zone that existed before this node.
    pub mcc: Vec<f64>,
    pub zone: usize,
    pub created: bool,
}

/// Runs the clustering over `sorted` and returns the zones (as member lists)
/// together with the per-node decisions.
pub fn fic_trace(
    sorted: &[usize],
    correlation: &Matrix,
    alpha: f64,
) -> (Vec<Vec<usize>>, Vec<FicStep>) {
    let mut zones: Vec<Vec<usize>> = Vec::new();
    let mut trace = Vec::with_capacity(sorted.len());
    let Some((&first, rest)) = sorted.split_first() else {
        return (zones, trace);
    };
    zones.push(vec![first]);
    trace.push(FicStep {
        node: first,
        mcc: Vec::new(),
        zone: 0,
        created: true,
    });
    for &l in rest {
        let mcc: Vec<f64> = zones
            .iter()
            .map(|z| mean_zone_correlation(l, z, correlation))
            .collect();
        let mut best = 0;
        for (k, &v) in mcc.iter().enumerate() {
            if v > mcc[best] {
                best = k;
            }
        }
        let (zone, created) = if mcc[best] >= alpha {
            zones[best].push(l);
            (best, false)
        } else {
            zones.push(vec![l]);
            (zones.len() - 1, true)
        };
        trace.push(FicStep {
            node: l,
            mcc,
            zone,
            created,
        });
    }
    (zones, trace)
}

/// Clusters the nodes of one phase. Zone ids start at 0.
pub fn fic_cluster(
    sorted: &[usize],
    correlation: &Matrix,
    alpha: f64,
    phase: Phase,
) -> ZonePartition {
    let (members, trace) = fic_trace(sorted, correlation, alpha);
    let mut zones: Vec<Zone> = members
        .into_iter()
        .enumerate()
        .map(|(id, members)| Zone {
            id,
            phase,
            members,
            min_accepted_mcc: 1.0,
        })
        .collect();
    for step in trace.iter().filter(|s| !s.created) {
        let z = &mut zones[step.zone];
        z.min_accepted_mcc = z.min_accepted_mcc.min(step.mcc[step.zone]);
    }
    ZonePartition {
        alpha,
        zones,
        flagged: Vec::new(),
    }
}

/// Per-phase sort and clustering, concatenated with globally unique zone ids
/// (phase A zones first).
pub fn build_partition(
    model: &FeederModel,
    bundle: &SensitivityBundle,
    alpha: f64,
    key: DistanceKey,
) -> Result<ZonePartition> {
    if bundle.n() != model.n_nodes() {
        return Err(Error::Config(format!(
            "sensitivity bundle covers {} nodes, feeder has {}",
            bundle.n(),
            model.n_nodes()
        )));
    }
    let mut zones: Vec<Zone> = Vec::new();
    let mut flagged = Vec::new();
    for phase in Phase::ALL {
        let sorted = sort_nodes_for_fic(model, phase, key);
        let (regular, degenerate): (Vec<usize>, Vec<usize>) =
            sorted.iter().partition(|n| !bundle.degenerate.contains(n));
        let mut part = fic_cluster(&regular, &bundle.correlation, alpha, phase);
        for &d in &degenerate {
            let target = part
                .zones
                .iter()
                .enumerate()
                .flat_map(|(k, z)| z.members.iter().map(move |&m| (k, m)))
                .min_by(|a, b| {
                    let da = (model.node_distance(a.1, key) - model.node_distance(d, key)).abs();
                    let db = (model.node_distance(b.1, key) - model.node_distance(d, key)).abs();
                    da.total_cmp(&db)
                })
                .map(|(k, _)| k);
            match target {
                Some(k) => part.zones[k].members.push(d),
                None => part.zones.push(Zone {
                    id: part.zones.len(),
                    phase,
                    members: vec![d],
                    min_accepted_mcc: 1.0,
                }),
            }
            flagged.push(d);
        }
        for mut z in part.zones {
            z.id = zones.len();
            zones.push(z);
        }
    }
    Ok(ZonePartition {
        alpha,
        zones,
        flagged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub k: usize,
    pub k_a: usize,
    pub k_b: usize,
    pub k_c: usize,
}

pub fn alpha_sweep(
    model: &FeederModel,
    bundle: &SensitivityBundle,
    alphas: &[f64],
    key: DistanceKey,
) -> Result<Vec<SweepRow>> {
    alphas
        .iter()
        .map(|&alpha| {
            let p = build_partition(model, bundle, alpha, key)?;
            let [k_a, k_b, k_c] = p.zones_per_phase();
            Ok(SweepRow {
                alpha,
                k: p.k(),
                k_a,
                k_b,
                k_c,
            })
        })
        .collect()
}

/// Parses `A:B:STEP` into an inclusive grid of thresholds.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad sweep '{spec}', expected A:B:STEP")))?;
    let [start, end, step] = parts[..] else {
        return Err(Error::Config(format!(
            "bad sweep '{spec}', expected A:B:STEP"
        )));
    };
    if !(step > 0.0) || end < start {
        return Err(Error::Config(format!(
            "bad sweep '{spec}': need STEP > 0 and B >= A"
        )));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=count)
        .map(|i| {
            let a = start + step * i as f64;
            (a * 1e9).round() / 1e9
        })
        .collect())
}

/// Fraction of node pairs whose together/apart relation is the same in every
/// partition. 1.0 means all snapshots agree.
pub fn partition_agreement(partitions: &[ZonePartition], n: usize) -> f64 {
    if partitions.len() < 2 || n < 2 {
        return 1.0;
    }
    let labels: Vec<Vec<Option<usize>>> = partitions.iter().map(|p| p.node_zones(n)).collect();
    let mut agree = 0usize;
    let mut total = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            total += 1;
            let first = labels[0][a] == labels[0][b];
            if labels.iter().all(|l| (l[a] == l[b]) == first) {
                agree += 1;
            }
        }
    }
    agree as f64 / total as f64
}

#[derive(Debug, Clone)]
pub struct MultiSnapshotReport {
    pub partitions: Vec<ZonePartition>,
    pub zone_counts: Vec<usize>,
    pub agreement: f64,
}

/// Clusters each snapshot's bundle separately and reports how well they agree.
pub fn multi_snapshot(
    model: &FeederModel,
    bundles: &[SensitivityBundle],
    alpha: f64,
    key: DistanceKey,
) -> Result<MultiSnapshotReport> {
    let partitions: Vec<ZonePartition> = bundles
        .iter()
        .map(|b| build_partition(model, b, alpha, key))
        .collect::<Result<_>>()?;
    let zone_counts = partitions.iter().map(ZonePartition::k).collect();
    let agreement = partition_agreement(&partitions, model.n_nodes());
    Ok(MultiSnapshotReport {
        partitions,
        zone_counts,
        agreement,
    })
}

/// Writes `node_id,phase,zone_id,flagged` rows.
pub fn write_partition_csv(
    path: impl AsRef<Path>,
    model: &FeederModel,
    partition: &ZonePartition,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["node_id", "phase", "zone_id", "flagged"])
        .map_err(|e| csv_io(path, e))?;
    let zones = partition.node_zones(model.n_nodes());
    for node in model.phase_nodes() {
        let zone =
            zones[node.node_index].map_or(String::new(), |k| partition.zones[k].id.to_string());
        let flagged = partition.flagged.contains(&node.node_index);
        w.write_record([
            node.id.clone(),
            node.phase.to_string(),
            zone,
            flagged.to_string(),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary_csv(
    path: impl AsRef<Path>,
    partition: &ZonePartition,
    correlation: &Matrix,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for q in zone_quality(partition, correlation) {
        w.serialize(q).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn mean_correlation_of_singleton_and_pair() {
        let c = corr(&[&[1.0, 0.8, 0.6], &[0.8, 1.0, 0.5], &[0.6, 0.5, 1.0]]);
        assert_eq!(mean_zone_correlation(0, &[0], &c), 1.0);
        assert!((mean_zone_correlation(0, &[1, 2], &c) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn perfect_correlation_gives_one_zone() {
        let c = Matrix::from_rows(&vec![vec![1.0; 4]; 4]);
        for alpha in [0.1, 0.5, 0.99, 1.0] {
            let p = fic_cluster(&[0, 1, 2, 3], &c, alpha, Phase::A);
            assert_eq!(p.k(), 1);
        }
    }

    #[test]
    fn zero_threshold_gives_one_zone() {
        let c = corr(&[&[1.0, 0.1, 0.2], &[0.1, 1.0, 0.05], &[0.2, 0.05, 1.0]]);
        assert_eq!(fic_cluster(&[0, 1, 2], &c, 0.0, Phase::B).k(), 1);
    }

    #[test]
    fn ties_go_to_earlier_zone() {
        // node 2 is equally correlated with zones {0} and {1}
        let c = corr(&[&[1.0, 0.1, 0.9], &[0.1, 1.0, 0.9], &[0.9, 0.9, 1.0]]);
        let (zones, trace) = fic_trace(&[0, 1, 2], &c, 0.5);
        assert_eq!(zones, vec![vec![0, 2], vec![1]]);
        assert_eq!(trace[2].zone, 0);
    }

    #[test]
    fn empty_input() {
        let c = Matrix::zeros(0, 0);
        assert_eq!(fic_cluster(&[], &c, 0.9, Phase::A).k(), 0);
    }

    #[test]
    fn sweep_parsing() {
        let a = parse_sweep("0.90:0.98:0.02").unwrap();
        assert_eq!(a, vec![0.9, 0.92, 0.94, 0.96, 0.98]);
        assert!(parse_sweep("0.9:0.8:0.1").is_err());
        assert!(parse_sweep("x").is_err());
    }

    #[test]
    fn agreement_counts_pairs() {
        let p1 = ZonePartition {
            alpha: 0.9,
            zones: vec![
                Zone {
                    id: 0,
                    phase: Phase::A,
                    members: vec![0, 1],
                    min_accepted_mcc: 1.0,
                },
                Zone {
                    id: 1,
                    phase: Phase::A,
                    members: vec![2],
                    min_accepted_mcc: 1.0,
                },
            ],
            flagged: vec![],
        };
        let mut p2 = p1.clone();
        assert_eq!(partition_agreement(&[p1.clone(), p2.clone()], 3), 1.0);
        p2.zones = vec![Zone {
            id: 0,
            phase: Phase::A,
            members: vec![0, 1, 2],
            min_accepted_mcc: 1.0,
        }];
        // pairs (0,2) and (1,2) disagree
        assert!((partition_agreement(&[p1, p2], 3) - 1.0 / 3.0).abs() < 1e-12);
    }
}
