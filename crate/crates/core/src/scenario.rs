//! Seeded synthetic days: residential load curves and clear-sky PV.
//!
//! PV penetration is the peak of the aggregate PV output divided by the peak
//! of the aggregate load, in percent. Inverter ratings are rescaled so every
//! inverter reaches its rating at solar noon and the aggregate hits the
//! requested penetration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::profiles::ScenarioProfiles;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioOptions {
    pub penetration_pct: f64,
    pub seed: u64,
    pub days: usize,
    pub timestep_s: f64,
    /// Standard deviation of the multiplicative load noise.
    pub load_noise: f64,
    /// Each node's curve is shifted by up to this many hours either way.
    pub max_shift_h: f64,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            penetration_pct: 145.0,
            seed: 1,
            days: 1,
            timestep_s: 60.0,
            load_noise: 0.03,
            max_shift_h: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    /// The input feeder with inverter ratings rescaled to the penetration.
    pub model: FeederModel,
    pub profiles: ScenarioProfiles,
}

fn gauss(h: f64, mu: f64, sigma: f64) -> f64 {
    (-(h - mu) * (h - mu) / (2.0 * sigma * sigma)).exp()
}

/// Normalised residential demand with a morning and a larger evening peak.
pub fn residential_shape(hour: f64) -> f64 {
    let h = hour.rem_euclid(24.0);
    // include the wrap-around of the evening peak
    let evening = gauss(h, 19.5, 2.2).max(gauss(h, -4.5, 2.2));
    0.30 + 0.30 * gauss(h, 7.5, 1.5) + 0.70 * evening
}

/// Clear-sky irradiance shape, 1 at solar noon, 0 outside 06:00 to 18:00.
pub fn clear_sky(hour: f64) -> f64 {
    let h = hour.rem_euclid(24.0);
    if h <= 6.0 || h >= 18.0 {
        0.0
    } else {
        (std::f64::consts::PI * (h - 6.0) / 12.0).sin().powf(1.5)
    }
}

pub fn generate_synthetic_scenario(
    model: &FeederModel,
    options: &ScenarioOptions,
) -> Result<SyntheticScenario> {
    let pen = options.penetration_pct;
    if !(pen.is_finite() && pen >= 0.0) {
        return Err(Error::Config(format!(
            "PV penetration must be >= 0, got {pen}"
        )));
    }
    if !(options.timestep_s > 0.0) || options.days == 0 {
        return Err(Error::Config(
            "scenario needs a positive timestep and at least one day".into(),
        ));
    }
    if !(options.load_noise >= 0.0 && options.max_shift_h >= 0.0) {
        return Err(Error::Config(
            "load noise and shift must be non-negative".into(),
        ));
    }
    let horizon = (options.days as f64 * 86_400.0 / options.timestep_s).round() as usize;
    let hours: Vec<f64> = (0..horizon)
        .map(|t| t as f64 * options.timestep_s / 3600.0)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let phi: f64 = 0.95;
    let innovation = options.load_noise * (1.0 - phi * phi).sqrt();
    let n = model.n_nodes();
    let mut load_p = Vec::with_capacity(n);
    let mut load_q = Vec::with_capacity(n);
    for node in model.phase_nodes() {
        let shift = if options.max_shift_h > 0.0 {
            rng.gen_range(-options.max_shift_h..=options.max_shift_h)
        } else {
            0.0
        };
        let mut e = 0.0;
        let mut curve: Vec<f64> = hours
            .iter()
            .map(|h| {
                let z: f64 = rng.sample(StandardNormal);
                e = phi * e + innovation * z;
                (residential_shape(h + shift) * (1.0 + e)).max(0.05)
            })
            .collect();
        let peak = curve.iter().fold(0.0f64, |a, &v| a.max(v));
        curve.iter_mut().for_each(|v| *v /= peak);
        load_p.push(curve.iter().map(|v| v * node.load_p).collect::<Vec<_>>());
        load_q.push(curve.iter().map(|v| v * node.load_q).collect::<Vec<_>>());
    }

    let peak_load = (0..horizon)
        .map(|t| load_p.iter().map(|s| s[t]).sum::<f64>())
        .fold(0.0f64, f64::max);
    let sky: Vec<f64> = hours.iter().map(|&h| clear_sky(h)).collect();
    let sky_peak = sky.iter().fold(0.0f64, |a, &v| a.max(v));

    let scaled = if pen == 0.0 {
        model.clone()
    } else {
        let rated: f64 = model
            .phase_nodes()
            .iter()
            .filter_map(|n| n.inverter.as_ref())
            .map(|inv| inv.spec.p_rated)
            .sum();
        if rated <= 0.0 {
            return Err(Error::Config(
                "feeder has no inverters to carry the PV penetration".into(),
            ));
        }
        if sky_peak <= 0.0 {
            return Err(Error::Config(
                "timestep too coarse to sample daylight".into(),
            ));
        }
        model.with_scaled_inverters(pen / 100.0 * peak_load / rated)?
    };

    let pv = scaled
        .phase_nodes()
        .iter()
        .map(|node| match (&node.inverter, pen > 0.0) {
            (Some(inv), true) => sky
                .iter()
                .map(|s| inv.spec.p_rated * s / sky_peak)
                .collect(),
            _ => vec![0.0; horizon],
        })
        .collect();

    let profiles = ScenarioProfiles {
        timestep: options.timestep_s,
        horizon,
        load_p,
        load_q,
        pv,
    };
    profiles.validate(&scaled)?;
    Ok(SyntheticScenario {
        model: scaled,
        profiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert_eq!(clear_sky(12.0), 1.0);
        assert_eq!(clear_sky(5.0), 0.0);
        assert_eq!(clear_sky(18.0), 0.0);
        assert!(residential_shape(19.5) > residential_shape(12.0));
        assert!((residential_shape(0.0) - residential_shape(24.0)).abs() < 1e-15);
    }
}
