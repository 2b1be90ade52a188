mod common;

use zonal_vvc::feeder::{DistanceKey, Phase};
use zonal_vvc::matrix::Matrix;
use zonal_vvc::sensitivity::{SensitivityBundle, SensitivityConfig};
use zonal_vvc::zoning::{self, fic_trace, FicStep};

use common::*;

fn symmetric(n: usize, upper: &[(usize, usize, f64)]) -> Matrix {
    let mut c = Matrix::zeros(n, n);
    for i in 0..n {
        c[(i, i)] = 1.0;
    }
    for &(i, j, v) in upper {
        c[(i, j)] = v;
        c[(j, i)] = v;
    }
    c
}

fn step(node: usize, mcc: &[f64], zone: usize, created: bool) -> FicStep {
    FicStep {
        node,
        mcc: mcc.to_vec(),
        zone,
        created,
    }
}

fn assert_trace(actual: &[FicStep], expected: &[FicStep]) {
    assert_eq!(actual.len(), expected.len());
    for (a, e) in actual.iter().zip(expected) {
        assert_eq!(
            (a.node, a.zone, a.created),
            (e.node, e.zone, e.created),
            "{a:?}"
        );
        assert_eq!(a.mcc.len(), e.mcc.len());
        for (x, y) in a.mcc.iter().zip(&e.mcc) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {e:?}");
        }
    }
}

#[test]
fn five_nodes_two_zones() {
    let c = symmetric(
        5,
        &[
            (0, 1, 0.95),
            (0, 2, 0.80),
            (0, 3, 0.70),
            (0, 4, 0.92),
            (1, 2, 0.85),
            (1, 3, 0.60),
            (1, 4, 0.96),
            (2, 3, 0.93),
            (2, 4, 0.50),
            (3, 4, 0.40),
        ],
    );
    let (zones, trace) = fic_trace(&[0, 1, 2, 3, 4], &c, 0.9);
    assert_trace(
        &trace,
        &[
            step(0, &[], 0, true),
            step(1, &[0.95], 0, false),
            step(2, &[0.825], 1, true),
            step(3, &[0.65, 0.93], 1, false),
            step(4, &[0.94, 0.45], 0, false),
        ],
    );
    assert_eq!(zones, vec![vec![0, 1, 4], vec![2, 3]]);
}

#[test]
fn five_nodes_tie_goes_to_the_older_zone() {
    let c = symmetric(
        5,
        &[
            (0, 1, 0.50),
            (0, 2, 0.90),
            (1, 2, 0.90),
            (0, 3, 0.85),
            (2, 3, 0.85),
            (1, 3, 0.99),
            (0, 4, 0.20),
            (2, 4, 0.30),
            (1, 4, 0.78),
            (3, 4, 0.84),
        ],
    );
    let (zones, trace) = fic_trace(&[0, 1, 2, 3, 4], &c, 0.8);
    assert_trace(
        &trace,
        &[
            step(0, &[], 0, true),
            step(1, &[0.50], 1, true),
            step(2, &[0.90, 0.90], 0, false),
            step(3, &[0.85, 0.99], 1, false),
            step(4, &[0.25, 0.81], 1, false),
        ],
    );
    assert_eq!(zones, vec![vec![0, 2], vec![1, 3, 4]]);
}

#[test]
fn five_nodes_membership_is_never_revised() {
    // Node 1 joins node 0 early. Node 2 later fits node 1 far better, but
    // node 1 stays where it was put.
    let c = symmetric(
        5,
        &[
            (0, 1, 0.91),
            (0, 2, 0.10),
            (1, 2, 0.99),
            (0, 3, 0.95),
            (1, 3, 0.90),
            (2, 3, 0.20),
            (0, 4, 0.30),
            (1, 4, 0.30),
            (2, 4, 0.97),
            (3, 4, 0.10),
        ],
    );
    let (zones, trace) = fic_trace(&[0, 1, 2, 3, 4], &c, 0.9);
    assert_trace(
        &trace,
        &[
            step(0, &[], 0, true),
            step(1, &[0.91], 0, false),
            step(2, &[0.545], 1, true),
            step(3, &[0.925, 0.20], 0, false),
            step(4, &[0.7 / 3.0, 0.97], 1, false),
        ],
    );
    assert_eq!(zones, vec![vec![0, 1, 3], vec![2, 4]]);
    // a different order gives a different, equally final, answer
    let (zones, _) = fic_trace(&[2, 1, 0, 3, 4], &c, 0.9);
    assert_eq!(zones, vec![vec![2, 1], vec![0, 3], vec![4]]);
}

fn ieee13_bundle() -> (zonal_vvc::FeederModel, SensitivityBundle) {
    let day = ieee13_day();
    let t = day.profiles.max_pv_step();
    let b = SensitivityBundle::compute(
        &day.model,
        &day.profiles.injections(t, &[]),
        &SensitivityConfig::default(),
        "midday",
    )
    .unwrap();
    (day.model, b)
}

#[test]
fn ieee13_zone_count_rises_with_alpha() {
    let (m, b) = ieee13_bundle();
    let alphas = zoning::parse_sweep("0.90:0.98:0.01").unwrap();
    assert_eq!(alphas.len(), 9);
    let rows = zoning::alpha_sweep(&m, &b, &alphas, DistanceKey::Length).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].k >= w[0].k, "{rows:?}");
    }
    for r in &rows {
        assert!(r.k >= 3);
    }
}

#[test]
fn ieee13_zones_are_single_phase_and_cover_every_node() {
    let (m, b) = ieee13_bundle();
    for alpha in [0.5, 0.92, 0.98] {
        let p = zoning::build_partition(&m, &b, alpha, DistanceKey::Length).unwrap();
        let mut seen = vec![0; m.n_nodes()];
        for z in &p.zones {
            for &n in &z.members {
                assert_eq!(m.node(n).phase, z.phase);
                seen[n] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
        for (i, z) in p.zones.iter().enumerate() {
            assert_eq!(z.id, i);
        }
    }
}

#[test]
fn tiny_alpha_gives_one_zone_per_phase() {
    let (m, b) = ieee13_bundle();
    let p = zoning::build_partition(&m, &b, 0.01, DistanceKey::Length).unwrap();
    assert_eq!(p.k(), m.phases_present().len());
    assert_eq!(p.zones_per_phase(), [1, 1, 1]);
}

#[test]
fn balanced_feeder_gives_three_equal_zones() {
    let m = load("balanced3.toml");
    let b = SensitivityBundle::compute(
        &m,
        &nominal_injections(&m),
        &SensitivityConfig::default(),
        "nominal",
    )
    .unwrap();
    let p = zoning::build_partition(&m, &b, 0.92, DistanceKey::Length).unwrap();
    assert_eq!(p.k(), 3);
    for (z, phase) in p.zones.iter().zip(Phase::ALL) {
        assert_eq!(z.phase, phase);
        assert_eq!(z.members.len(), 3);
    }
}

#[test]
fn impedance_key_sorts_the_line_the_same_way() {
    let m = load("line5.toml");
    assert_eq!(
        zoning::sort_nodes_for_fic(&m, Phase::A, DistanceKey::Length),
        zoning::sort_nodes_for_fic(&m, Phase::A, DistanceKey::Impedance)
    );
    assert_eq!(
        zoning::sort_nodes_for_fic(&m, Phase::A, DistanceKey::Length),
        vec![0, 1, 2, 3, 4]
    );
    assert!(zoning::sort_nodes_for_fic(&m, Phase::B, DistanceKey::Length).is_empty());
}

#[test]
fn snapshot_agreement_is_a_fraction_and_one_for_twins() {
    let day = ieee13_day();
    let cfg = SensitivityConfig::default();
    let bundles: Vec<SensitivityBundle> = [600, 720, 840]
        .iter()
        .map(|&t| {
            SensitivityBundle::compute(
                &day.model,
                &day.profiles.injections(t, &[]),
                &cfg,
                format!("{t}"),
            )
            .unwrap()
        })
        .collect();
    let r = zoning::multi_snapshot(&day.model, &bundles, 0.92, DistanceKey::Length).unwrap();
    assert_eq!(r.zone_counts.len(), 3);
    assert!(r.agreement > 0.0 && r.agreement <= 1.0);
    let same = zoning::multi_snapshot(
        &day.model,
        &[bundles[0].clone(), bundles[0].clone()],
        0.92,
        DistanceKey::Length,
    )
    .unwrap();
    assert_eq!(same.agreement, 1.0);
}
