mod common;

use std::fs;

use zonal_vvc::control::ControlLimits;
use zonal_vvc::profiles::ScenarioProfiles;
use zonal_vvc::qsts::{self, ControllerKind, SimulationConfig, SimulationRun, StepRecord};
use zonal_vvc::scenario::{generate_synthetic_scenario, ScenarioOptions};

use common::*;

fn peak(series: impl Iterator<Item = f64>) -> f64 {
    series.fold(0.0, f64::max)
}

fn aggregate_peaks(p: &ScenarioProfiles) -> (f64, f64) {
    let load = peak((0..p.horizon).map(|t| p.total_load_at(t)));
    let pv = peak((0..p.horizon).map(|t| p.pv.iter().map(|s| s[t]).sum::<f64>()));
    (load, pv)
}

fn config(controller: ControllerKind) -> SimulationConfig {
    SimulationConfig {
        controller,
        ..Default::default()
    }
}

#[test]
fn flat_profiles_without_control_stay_flat() {
    let m = load("ieee13.toml");
    let profiles = ScenarioProfiles::nominal(&m, 20, 60.0);
    let run = qsts::run(&m, &profiles, &config(ControllerKind::None), "flat").unwrap();
    assert_eq!(run.records.len(), 20);
    let first = &run.records[0].voltages;
    for r in &run.records {
        assert!(r.converged);
        assert!(r.setpoints.iter().all(|q| *q == 0.0));
        for (a, b) in r.voltages.iter().zip(first) {
            // warm starts may stop at a different iterate inside the solver tolerance
            assert!((a - b).abs() < 1e-7, "{a} {b}");
        }
    }
    // and they are the plain nominal solution
    for (id, v_ref) in golden_voltages() {
        let i = m.node_by_id(&id).unwrap().node_index;
        assert!((first[i] - v_ref).abs() / v_ref < 0.005, "{id}");
    }
}

fn record(step: usize, voltages: Vec<f64>, setpoints: Vec<f64>) -> StepRecord {
    StepRecord {
        step,
        time_s: step as f64 * 60.0,
        converged: true,
        pre_v_max: 0.0,
        pre_v_min: 0.0,
        voltages,
        setpoints,
        zone_log: Vec::new(),
        lp: None,
        vlsm_refreshed: false,
        control_time_s: 0.0,
        control_time_inclusive_s: 0.0,
    }
}

fn hand_run(records: Vec<StepRecord>) -> SimulationRun {
    SimulationRun {
        scenario_id: "hand".into(),
        controller: ControllerKind::None,
        node_ids: vec!["a".into(), "b".into()],
        inverter_nodes: vec![0, 1],
        timestep: 60.0,
        limits: ControlLimits::default(),
        records,
        partition: None,
        reference_step: None,
        setup_time_s: 0.0,
    }
}

#[test]
fn three_step_summary_by_hand() {
    let run = hand_run(vec![
        record(0, vec![1.00, 1.02], vec![0.0, 0.0]),
        record(1, vec![1.05, 1.06], vec![-100.0, 50.0]),
        record(2, vec![0.95, 1.01], vec![-20.0, -30.0]),
    ]);
    let m = qsts::summarize(&run).unwrap();
    assert_eq!(m.violation_steps, 2);
    assert_eq!(m.node_violations, 3);
    assert_eq!(m.violation_minutes, 2.0);
    assert_eq!(m.diverged_steps, 0);
    assert_eq!(m.steps[1].q_absorbed, 100.0);
    assert_eq!(m.steps[1].q_injected, 50.0);
    assert_eq!(m.steps[2].q_absorbed, 50.0);
    // per-step maxima 1.02, 1.06, 1.01
    assert_eq!(m.v_max_percentile(0.0), Some(1.01));
    assert_eq!(m.v_max_percentile(100.0), Some(1.06));
    assert_eq!(m.v_max_percentile(50.0), Some(1.02));
    assert!((m.v_max_percentile(75.0).unwrap() - 1.04).abs() < 1e-12);
}

#[test]
fn empty_horizon_is_rejected() {
    let err = qsts::summarize(&hand_run(Vec::new())).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn zero_penetration_means_no_pv() {
    let m = load("ieee13.toml");
    let s = generate_synthetic_scenario(
        &m,
        &ScenarioOptions {
            penetration_pct: 0.0,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(s.profiles.pv.iter().flatten().all(|p| *p == 0.0));
    assert_eq!(s.model.inverter_nodes(), m.inverter_nodes());
}

#[test]
fn penetration_is_the_ratio_of_aggregate_peaks() {
    let m = load("ieee13.toml");
    for pen in [50.0, 100.0, 145.0] {
        let s = generate_synthetic_scenario(
            &m,
            &ScenarioOptions {
                penetration_pct: pen,
                ..Default::default()
            },
        )
        .unwrap();
        let (load, pv) = aggregate_peaks(&s.profiles);
        assert!(
            (pv / load - pen / 100.0).abs() <= 0.01,
            "{pen}: {}",
            pv / load
        );
        assert_eq!(s.profiles.horizon, 1440);
    }
}

#[test]
fn high_penetration_overvolts_without_control() {
    let day = ieee13_day();
    let run = qsts::run(
        &day.model,
        &day.profiles,
        &config(ControllerKind::None),
        "day",
    )
    .unwrap();
    let m = qsts::summarize(&run).unwrap();
    assert!(m.violation_steps > 0);
    assert!(m.v_max_percentile(100.0).unwrap() > run.limits.v_max);
    assert_eq!(m.diverged_steps, 0);
}

#[test]
fn scenario_is_reproducible_per_seed() {
    let m = load("ieee13.toml");
    let a = generate_synthetic_scenario(&m, &ScenarioOptions::default()).unwrap();
    let b = generate_synthetic_scenario(&m, &ScenarioOptions::default()).unwrap();
    let c = generate_synthetic_scenario(
        &m,
        &ScenarioOptions {
            seed: 2,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(a.profiles.load_p, b.profiles.load_p);
    assert_ne!(a.profiles.load_p, c.profiles.load_p);
}

fn records_without_timing(path: &std::path::Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            cols[..cols.len() - qsts::TIMING_COLUMNS].join(",")
        })
        .collect()
}

#[test]
fn runs_are_deterministic_apart_from_timing() {
    let day = ieee13_day();
    let dir = tempfile::tempdir().unwrap();
    for controller in [ControllerKind::Zonal, ControllerKind::Cvvc] {
        let mut outputs = Vec::new();
        for k in 0..2 {
            let run = qsts::run(&day.model, &day.profiles, &config(controller), "det").unwrap();
            let path = dir.path().join(format!("{controller}_{k}.csv"));
            qsts::write_records_csv(&run, &path).unwrap();
            outputs.push(records_without_timing(&path));
        }
        assert_eq!(outputs[0].len(), day.profiles.horizon + 1);
        assert_eq!(outputs[0], outputs[1], "{controller}");
    }
}

#[test]
fn run_directories_hold_every_output() {
    let day = ieee13_day();
    let dir = tempfile::tempdir().unwrap();
    for controller in [
        ControllerKind::None,
        ControllerKind::Zonal,
        ControllerKind::Cvvc,
    ] {
        let run = qsts::run(&day.model, &day.profiles, &config(controller), "out").unwrap();
        let metrics = qsts::summarize(&run).unwrap();
        let out = dir.path().join(controller.to_string());
        qsts::write_run_dir(&run, &metrics, &day.model, &out).unwrap();
        for f in ["records.csv", "metrics.csv", "runtime.csv"] {
            assert!(out.join(f).is_file(), "{controller}: {f}");
        }
        let log = if controller == ControllerKind::Cvvc {
            "lp_log.csv"
        } else {
            "controller_log.csv"
        };
        assert!(out.join(log).is_file(), "{controller}: {log}");
        assert_eq!(
            out.join("partition.csv").is_file(),
            controller == ControllerKind::Zonal
        );
        let header = fs::read_to_string(out.join("records.csv")).unwrap();
        let header = header.lines().next().unwrap();
        assert_eq!(header, qsts::records_header(&run).join(","));
        assert!(header.ends_with("control_time_s,control_time_inclusive_s"));
    }
}
