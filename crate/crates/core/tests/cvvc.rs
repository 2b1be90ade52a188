mod common;

use proptest::prelude::*;
use zonal_vvc::control::{self, ControlLimits, ControllerOptions, ZoneControllerState};
use zonal_vvc::cvvc::{self, CvvcProblem, CvvcStatus};
use zonal_vvc::feeder::DistanceKey;
use zonal_vvc::matrix::Matrix;
use zonal_vvc::powerflow::{self, SolverConfig};
use zonal_vvc::sensitivity::{SensitivityBundle, SensitivityConfig};
use zonal_vvc::zoning;

use common::*;

fn two_by_two(voltages: [f64; 2], cost: [f64; 2]) -> CvvcProblem {
    CvvcProblem {
        inverter_nodes: vec![0, 1],
        q0: vec![0.0, 0.0],
        q_min: vec![-30_000.0, -30_000.0],
        q_max: vec![30_000.0, 30_000.0],
        cost: cost.to_vec(),
        rho: Matrix::from_rows(&[vec![6e-7, 2e-7], vec![2.5e-7, 9e-7]]),
        voltages: voltages.to_vec(),
        v_min: 0.951,
        v_max: 1.049,
    }
}

/// Cheapest feasible point on a 100 var grid, exhaustively.
fn grid_optimum(p: &CvvcProblem) -> Option<(f64, [f64; 2])> {
    let step = 100.0;
    let k = (p.q_max[0] / step) as i64;
    let mut best: Option<(f64, [f64; 2])> = None;
    for a in -k..=k {
        for b in -k..=k {
            let q = [a as f64 * step, b as f64 * step];
            let ok = (0..2).all(|j| {
                let v = p.voltages[j] + p.rho[(j, 0)] * q[0] + p.rho[(j, 1)] * q[1];
                v <= p.v_max && v >= p.v_min
            });
            if ok {
                let c = p.cost[0] * q[0].abs() + p.cost[1] * q[1].abs();
                if best.is_none_or(|(bc, _)| c < bc) {
                    best = Some((c, q));
                }
            }
        }
    }
    best
}

/// Exact optimum of the two-variable problem: every intersection of two
/// constraint lines (including the axes where |q| kinks) is a candidate.
fn vertex_optimum(p: &CvvcProblem) -> Vec<(f64, [f64; 2])> {
    let mut lines: Vec<([f64; 2], f64)> = vec![([1.0, 0.0], 0.0), ([0.0, 1.0], 0.0)];
    for d in 0..2 {
        let mut a = [0.0; 2];
        a[d] = 1.0;
        lines.push((a, p.q_max[d]));
        lines.push((a, p.q_min[d]));
    }
    for j in 0..2 {
        let a = [p.rho[(j, 0)], p.rho[(j, 1)]];
        lines.push((a, p.v_max - p.voltages[j]));
        lines.push((a, p.v_min - p.voltages[j]));
    }
    let mut points = Vec::new();
    for i in 0..lines.len() {
        for k in i + 1..lines.len() {
            let ((a, e), (b, f)) = (lines[i], lines[k]);
            let det = a[0] * b[1] - a[1] * b[0];
            if det.abs() < 1e-30 {
                continue;
            }
            let q = [(e * b[1] - a[1] * f) / det, (a[0] * f - e * b[0]) / det];
            let ok = (0..2).all(|d| q[d] <= p.q_max[d] + 1e-6 && q[d] >= p.q_min[d] - 1e-6)
                && (0..2).all(|j| {
                    let v = p.voltages[j] + p.rho[(j, 0)] * q[0] + p.rho[(j, 1)] * q[1];
                    v <= p.v_max + 1e-12 && v >= p.v_min - 1e-12
                });
            if ok {
                points.push((p.cost[0] * q[0].abs() + p.cost[1] * q[1].abs(), q));
            }
        }
    }
    points.sort_by(|x, y| x.0.total_cmp(&y.0));
    points
}

#[test]
fn two_inverter_optimum_matches_exhaustive_search() {
    for (v, c) in [
        ([1.055, 1.058], [1.0, 1.0]),
        ([1.055, 1.058], [1.0, 3.0]),
        ([1.052, 1.040], [2.0, 1.0]),
        ([0.945, 0.948], [1.0, 1.0]),
        ([1.060, 1.030], [1.0, 1.5]),
    ] {
        let p = two_by_two(v, c);
        let s = cvvc::solve_lp(&p);
        assert_eq!(s.status, CvvcStatus::Optimal, "{v:?}");
        let (grid_cost, grid_q) = grid_optimum(&p).unwrap();
        // the LP is continuous, so it is never worse than the grid and never
        // better by more than one grid cell per inverter
        assert!(
            s.objective <= grid_cost + 1e-6,
            "{v:?}: {} > {grid_cost}",
            s.objective
        );
        assert!(s.objective >= grid_cost - 100.0 * (c[0] + c[1]), "{v:?}");
        let grid_q_cost = c[0] * grid_q[0].abs() + c[1] * grid_q[1].abs();
        assert_eq!(grid_q_cost, grid_cost);
        let vertices = vertex_optimum(&p);
        let (best, q) = vertices[0];
        assert!(
            (s.objective - best).abs() < 0.05,
            "{v:?}: {} vs {best}",
            s.objective
        );
        // a unique vertex must be the one the LP lands on
        if vertices
            .iter()
            .filter(|x| x.0 < best + 1.0)
            .all(|x| (x.1[0] - q[0]).abs() < 1.0 && (x.1[1] - q[1]).abs() < 1.0)
        {
            for d in 0..2 {
                assert!(
                    (s.delta_q[d] - q[d]).abs() < 0.05,
                    "{v:?}: {:?} vs {q:?}",
                    s.delta_q
                );
            }
        }
    }
}

#[test]
fn infeasible_two_inverter_case_matches_exhaustive_search() {
    let p = two_by_two([1.10, 1.10], [1.0, 1.0]);
    assert!(grid_optimum(&p).is_none());
    let s = cvvc::solve_lp(&p);
    assert_eq!(s.status, CvvcStatus::Infeasible);
    assert!(s.max_slack > 0.0);
    assert!(s.most_binding.is_some());
}

#[test]
fn cost_scaling_keeps_the_argmin() {
    let p = two_by_two([1.055, 1.058], [1.0, 3.0]);
    let s = cvvc::solve_lp(&p);
    let mut scaled = p.clone();
    scaled.cost = p.cost.iter().map(|c| c * 7.0).collect();
    let t = cvvc::solve_lp(&scaled);
    for d in 0..2 {
        assert!((s.delta_q[d] - t.delta_q[d]).abs() < 1e-6);
    }
    assert!((t.objective - 7.0 * s.objective).abs() < 1e-6 * t.objective);
}

#[test]
fn no_inverters_leave_a_violation_standing() {
    let p = CvvcProblem {
        inverter_nodes: vec![],
        q0: vec![],
        q_min: vec![],
        q_max: vec![],
        cost: vec![],
        rho: Matrix::zeros(3, 0),
        voltages: vec![1.0, 1.06, 1.01],
        v_min: 0.951,
        v_max: 1.049,
    };
    let s = cvvc::solve_lp(&p);
    assert_eq!(s.status, CvvcStatus::Infeasible);
    assert_eq!(s.most_binding, Some(1));
    assert!((s.max_slack - 0.011).abs() < 1e-6);
    assert!(s.delta_q.is_empty());
}

fn midday() -> (
    zonal_vvc::FeederModel,
    zonal_vvc::profiles::ScenarioProfiles,
    SensitivityBundle,
    usize,
) {
    let day = ieee13_day();
    let t = day.profiles.max_pv_step();
    let b = SensitivityBundle::compute(
        &day.model,
        &day.profiles.injections(t, &[]),
        &SensitivityConfig::default(),
        "midday",
    )
    .unwrap();
    (day.model, day.profiles, b, t)
}

#[test]
fn assembled_problem_has_the_expected_shape() {
    let (m, profiles, b, t) = midday();
    let v = powerflow::voltage_magnitudes(
        &powerflow::solve(&m, &profiles.injections(t, &[]), &SolverConfig::default()).unwrap(),
    );
    let n = m.n_nodes();
    let p = cvvc::assemble(
        &m,
        &b,
        &v,
        &profiles.pv_at(t),
        &vec![0.0; n],
        &ControlLimits::default(),
        1.0,
    )
    .unwrap();
    let d = m.inverter_nodes().len();
    assert_eq!((p.rho.rows(), p.rho.cols()), (n, d));
    assert_eq!(
        (p.q_min.len(), p.q_max.len(), p.cost.len(), p.q0.len()),
        (d, d, d, d)
    );
    assert_eq!(p.voltages.len(), n);
    for k in 0..d {
        assert_eq!(p.q_min[k], -p.q_max[k]);
        assert_eq!(
            p.rho[(p.inverter_nodes[k], k)],
            b.vlsm_q[(p.inverter_nodes[k], p.inverter_nodes[k])]
        );
    }
    let err = cvvc::assemble(
        &m,
        &b,
        &v[1..],
        &profiles.pv_at(t),
        &vec![0.0; n],
        &ControlLimits::default(),
        1.0,
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn ieee13_midday_dispatch_clears_the_violation() {
    let (m, profiles, b, t) = midday();
    let solver = SolverConfig::default();
    let limits = ControlLimits::default();
    let n = m.n_nodes();
    let v = powerflow::voltage_magnitudes(
        &powerflow::solve(&m, &profiles.injections(t, &[]), &solver).unwrap(),
    );
    assert!(v.iter().any(|x| *x > limits.v_max));
    let (q, s) =
        cvvc::run_cvvc_step(&m, &b, &v, &profiles.pv_at(t), &vec![0.0; n], &limits, 1.0).unwrap();
    assert_eq!(s.status, CvvcStatus::Optimal);
    assert!(s.voltage_residual <= 1e-6);
    assert!(s.capability_residual <= 1e-6);
    for (a, b) in s.q_plus.iter().zip(&s.q_minus) {
        assert!(a.min(*b) < 1e-6, "{a} {b}");
    }
    let post = powerflow::voltage_magnitudes(
        &powerflow::solve(&m, &profiles.injections(t, &q), &solver).unwrap(),
    );
    for (j, x) in post.iter().enumerate() {
        assert!(
            *x <= limits.v_max + 0.002 && *x >= limits.v_min - 0.002,
            "{}: {x}",
            m.node(j).id
        );
    }
}

#[test]
fn lp_is_no_dearer_than_a_feasible_zonal_dispatch() {
    let (m, profiles, b, t) = midday();
    let limits = ControlLimits::default();
    let n = m.n_nodes();
    let pv = profiles.pv_at(t);
    let v = powerflow::voltage_magnitudes(
        &powerflow::solve(&m, &profiles.injections(t, &[]), &SolverConfig::default()).unwrap(),
    );
    let problem = cvvc::assemble(&m, &b, &v, &pv, &vec![0.0; n], &limits, 1.0).unwrap();
    let lp = cvvc::solve_lp(&problem);

    // settle the zonal controller at these conditions
    let solver = SolverConfig::default();
    let cap: Vec<Option<f64>> = m
        .phase_nodes()
        .iter()
        .map(|x| {
            x.inverter
                .as_ref()
                .map(|inv| inv.spec.available_q(pv[x.node_index]))
        })
        .collect();
    let partition = zoning::build_partition(&m, &b, 0.92, DistanceKey::Length).unwrap();
    let mut states = ZoneControllerState::for_partition(&partition);
    let mut volts = v.clone();
    for _ in 0..30 {
        control::control_tick(
            &mut states,
            &volts,
            &b,
            &limits,
            0.92,
            &cap,
            &cap,
            &ControllerOptions::default(),
        )
        .unwrap();
        let q = control::collect_setpoints(&states, n);
        volts = powerflow::voltage_magnitudes(
            &powerflow::solve(&m, &profiles.injections(t, &q), &solver).unwrap(),
        );
    }
    let zonal = control::collect_setpoints(&states, n);
    let direction: Vec<f64> = problem.inverter_nodes.iter().map(|&i| zonal[i]).collect();
    let feasible = |s: f64| {
        let dq: Vec<f64> = direction.iter().map(|q| q * s).collect();
        let in_box = dq.iter().zip(&problem.q_max).all(|(q, m)| q.abs() < *m);
        in_box
            && problem
                .predicted_voltages(&dq)
                .iter()
                .all(|x| *x <= limits.v_max && *x >= limits.v_min)
    };
    let scale = (0..200)
        .map(|k| 1.0 + 0.001 * k as f64)
        .find(|s| feasible(*s));
    let s = scale.expect("no feasible stretch of the zonal dispatch");
    let zonal_cost: f64 = direction.iter().map(|q| q.abs() * s).sum();
    assert!(lp.objective > 0.0);
    assert!(
        lp.objective <= zonal_cost + 1e-6,
        "{} > {zonal_cost}",
        lp.objective
    );
}

fn random_problem() -> impl Strategy<Value = CvvcProblem> {
    (1usize..4, 1usize..5).prop_flat_map(|(d, n)| {
        (
            prop::collection::vec(prop::collection::vec(1e-7f64..1e-6, d), n),
            prop::collection::vec(0.96f64..1.06, n),
            prop::collection::vec(5_000.0f64..60_000.0, d),
            prop::collection::vec(0.5f64..3.0, d),
            prop::collection::vec(-1.0f64..1.0, d),
        )
            .prop_map(move |(rho, v, cap, cost, q0)| CvvcProblem {
                inverter_nodes: (0..d).collect(),
                q0: q0.iter().zip(&cap).map(|(f, c)| f * c * 0.5).collect(),
                q_min: cap.iter().map(|c| -c).collect(),
                q_max: cap,
                cost,
                rho: Matrix::from_rows(&rho),
                voltages: v,
                v_min: 0.951,
                v_max: 1.049,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn optimal_solutions_are_feasible_and_complementary(p in random_problem()) {
        let s = cvvc::solve_lp(&p);
        prop_assert!(s.status != CvvcStatus::IterationLimit);
        prop_assert!(s.capability_residual <= 1e-6);
        for (a, b) in s.q_plus.iter().zip(&s.q_minus) {
            prop_assert!(*a >= -1e-9 && *b >= -1e-9);
            prop_assert!(a.min(*b) <= 1e-6);
        }
        if s.status == CvvcStatus::Optimal {
            prop_assert!(s.voltage_residual <= 1e-6);
        } else {
            prop_assert!(s.max_slack > 0.0);
        }
    }

    #[test]
    fn optimum_beats_random_feasible_points(
        p in random_problem(),
        samples in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 64),
    ) {
        let s = cvvc::solve_lp(&p);
        if s.status == CvvcStatus::Optimal {
            for u in &samples {
                let q: Vec<f64> = (0..p.n_inverters()).map(|d| u[d] * p.q_max[d]).collect();
                let dq: Vec<f64> = q.iter().zip(&p.q0).map(|(a, b)| a - b).collect();
                if p.predicted_voltages(&dq).iter().all(|v| *v <= p.v_max && *v >= p.v_min) {
                    let c: f64 = q.iter().zip(&p.cost).map(|(q, c)| q.abs() * c).sum();
                    prop_assert!(s.objective <= c + 1e-6);
                }
            }
        }
    }
}
