#![allow(dead_code)]

use std::path::PathBuf;

use num_complex::Complex64;
use zonal_vvc::feeder::FeederModel;
use zonal_vvc::scenario::{generate_synthetic_scenario, ScenarioOptions, SyntheticScenario};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn load(name: &str) -> FeederModel {
    zonal_vvc::load_feeder(fixture(name)).unwrap()
}

/// Nominal loads, no PV, no reactive support.
pub fn nominal_injections(model: &FeederModel) -> Vec<Complex64> {
    model
        .phase_nodes()
        .iter()
        .map(|n| Complex64::new(-n.load_p, -n.load_q))
        .collect()
}

/// Load-end |V| of a single-phase two-bus circuit, all quantities per unit.
/// `p` and `q` are consumed power.
pub fn two_bus_voltage(vs: f64, r: f64, x: f64, p: f64, q: f64) -> f64 {
    let a = vs * vs - 2.0 * (r * p + x * q);
    let b = (r * r + x * x) * (p * p + q * q);
    ((a + (a * a - 4.0 * b).sqrt()) / 2.0).sqrt()
}

/// d|V|/dQ_injected for the same circuit, by differentiating the quadratic.
pub fn two_bus_dv_dq_injected(vs: f64, r: f64, x: f64, p: f64, q: f64) -> f64 {
    let a = vs * vs - 2.0 * (r * p + x * q);
    let b = (r * r + x * x) * (p * p + q * q);
    let da = -2.0 * x;
    let db = (r * r + x * x) * 2.0 * q;
    let root = (a * a - 4.0 * b).sqrt();
    let dv2 = (da + (a * da - 2.0 * db) / root) / 2.0;
    let v = two_bus_voltage(vs, r, x, p, q);
    // injecting reactive power lowers the consumed q
    -dv2 / (2.0 * v)
}

/// The fixture day used by the closed-loop and comparison tests.
pub fn ieee13_day() -> SyntheticScenario {
    let model = load("ieee13.toml");
    generate_synthetic_scenario(&model, &ScenarioOptions::default()).unwrap()
}

pub fn golden_voltages() -> Vec<(String, f64)> {
    let mut r = csv::Reader::from_path(fixture("reference/ieee13_nominal.csv")).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].to_string(), rec[1].parse().unwrap())
        })
        .collect()
}
