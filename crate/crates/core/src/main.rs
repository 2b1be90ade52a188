use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use zonal_vvc::config::{PreparedRun, RunConfig};
use zonal_vvc::feeder::{load_feeder, DistanceKey};
use zonal_vvc::qsts::{self, ControllerKind};
use zonal_vvc::sensitivity::SensitivityBundle;
use zonal_vvc::zoning;
use zonal_vvc::{Error, Result};

#[derive(Parser)]
#[command(
    name = "zonal-vvc",
    version,
    about = "Zonal Volt/VAR control for unbalanced radial feeders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a feeder file.
    Validate {
        #[arg(long)]
        feeder: PathBuf,
    },
    /// Compute the sensitivity and correlation matrices.
    Vlsm(RunArgs),
    /// Cluster phase nodes into control zones.
    Partition {
        #[command(flatten)]
        run: RunArgs,
        /// Threshold grid A:B:STEP; writes the zone count for each value.
        #[arg(long, value_name = "A:B:STEP")]
        sweep_alpha: Option<String>,
    },
    /// Run a time-series simulation with one controller.
    Simulate(RunArgs),
    /// Run the zonal and centralized controllers on the same scenario.
    Compare(RunArgs),
    /// Time the zonal and centralized controllers.
    Bench(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    feeder: Option<PathBuf>,
    /// Profile CSV. Without it a synthetic day is generated.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_controller)]
    controller: Option<ControllerKind>,
    /// PV penetration of the synthetic day, percent.
    #[arg(long, value_name = "PCT")]
    penetration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Dispatch inverters at their full fixed rating and release them completely.
    #[arg(long)]
    strict_paper_mode: bool,
    /// Sort nodes by series impedance from the source instead of line length.
    #[arg(long)]
    impedance_distance: bool,
    /// Keep going past a power flow that fails to converge.
    #[arg(long)]
    skip_nonconvergence: bool,
}

fn parse_controller(s: &str) -> std::result::Result<ControllerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(f) = &self.feeder {
            c.feeder = f.clone();
        }
        if let Some(p) = &self.profiles {
            c.profiles = Some(p.clone());
        }
        if let Some(a) = self.alpha {
            c.simulation.alpha = a;
        }
        if let Some(k) = self.controller {
            c.simulation.controller = k;
        }
        if let Some(p) = self.penetration {
            c.scenario.penetration_pct = p;
        }
        if let Some(s) = self.seed {
            c.scenario.seed = s;
        }
        if self.strict_paper_mode {
            c.simulation.strict_paper_mode = true;
        }
        if self.impedance_distance {
            c.simulation.distance_key = DistanceKey::Impedance;
        }
        if self.skip_nonconvergence {
            c.simulation.skip_nonconvergence = true;
        }
        c.validate()?;
        c.absolutize();
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Validate { feeder } => {
            let model = load_feeder(&feeder)?;
            println!(
                "{}: {} buses, {} segments, {} phase nodes, {} inverters, phases {}",
                model.name,
                model.buses.len(),
                model.lines.len(),
                model.n_nodes(),
                model.inverter_nodes().len(),
                model
                    .phases_present()
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<String>()
            );
            Ok(())
        }
        Command::Vlsm(args) => {
            let config = args.resolve()?;
            let prepared = config.prepare()?;
            let bundle = snapshot_bundle(&prepared, &config)?;
            config.write_snapshot(&args.out)?;
            bundle.write_vlsm_csv(args.out.join("vlsm.csv"))?;
            bundle.write_correlation_csv(args.out.join("correlation.csv"))?;
            println!(
                "sensitivity of {} nodes at {} written to {}",
                bundle.n(),
                bundle.base_case_id,
                args.out.display()
            );
            Ok(())
        }
        Command::Partition { run, sweep_alpha } => {
            let config = run.resolve()?;
            let prepared = config.prepare()?;
            let bundle = snapshot_bundle(&prepared, &config)?;
            let sim = &config.simulation;
            config.write_snapshot(&run.out)?;
            let model = &prepared.model;
            let partition = zoning::build_partition(model, &bundle, sim.alpha, sim.distance_key)?;
            zoning::write_partition_csv(run.out.join("partition.csv"), model, &partition)?;
            zoning::write_summary_csv(run.out.join("zones.csv"), &partition, &bundle.correlation)?;
            let [a, b, c] = partition.zones_per_phase();
            println!(
                "alpha {}: K = {} (A {a}, B {b}, C {c})",
                sim.alpha,
                partition.k()
            );
            if !partition.flagged.is_empty() {
                println!(
                    "{} nodes with constant sensitivity assigned by distance",
                    partition.flagged.len()
                );
            }
            if let Some(spec) = sweep_alpha {
                let alphas = zoning::parse_sweep(&spec)?;
                let rows = zoning::alpha_sweep(model, &bundle, &alphas, sim.distance_key)?;
                write_sweep(&run.out.join("alpha_sweep.csv"), &rows)?;
                println!("alpha,K,K_A,K_B,K_C");
                for r in &rows {
                    println!("{},{},{},{},{}", r.alpha, r.k, r.k_a, r.k_b, r.k_c);
                }
            }
            Ok(())
        }
        Command::Simulate(args) => {
            let config = args.resolve()?;
            let prepared = config.prepare()?;
            config.write_snapshot(&args.out)?;
            let run = qsts::run(
                &prepared.model,
                &prepared.profiles,
                &config.simulation,
                &prepared.scenario_id,
            )?;
            let metrics = qsts::summarize(&run)?;
            qsts::write_run_dir(&run, &metrics, &prepared.model, &args.out)?;
            println!(
                "{} steps, controller {}: {} steps with violations ({} min), max voltage {:.4} p.u.",
                run.records.len(),
                run.controller,
                metrics.violation_steps,
                metrics.violation_minutes,
                metrics.v_max_percentile(100.0).unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::Compare(args) => {
            let config = args.resolve()?;
            let prepared = config.prepare()?;
            config.write_snapshot(&args.out)?;
            let cmp = qsts::compare(
                &prepared.model,
                &prepared.profiles,
                &config.simulation,
                &prepared.scenario_id,
            )?;
            qsts::write_comparison(&cmp, &prepared.model, &args.out)?;
            println!(
                "corrective steps {}: zonal |Q| {:.1} kvar·step, centralized {:.1} kvar·step (gap {:.1}%)",
                cmp.corrective_steps.len(),
                cmp.zonal_corrective_q / 1e3,
                cmp.cvvc_corrective_q / 1e3,
                100.0 * cmp.q_relative_gap()
            );
            println!(
                "largest max-voltage percentile gap {:.4} p.u., runtime ratio {:.0}",
                cmp.max_percentile_delta(),
                cmp.runtime_ratio()
            );
            Ok(())
        }
        Command::Bench(args) => {
            let config = args.resolve()?;
            let prepared = config.prepare()?;
            config.write_snapshot(&args.out)?;
            let cmp = qsts::compare(
                &prepared.model,
                &prepared.profiles,
                &config.simulation,
                &prepared.scenario_id,
            )?;
            qsts::write_runtime_csv(&cmp.zonal, &args.out.join("runtime_zonal.csv"))?;
            qsts::write_runtime_csv(&cmp.cvvc, &args.out.join("runtime_cvvc.csv"))?;
            qsts::write_runtime_table(&cmp, &args.out.join("runtime_summary.csv"))?;
            println!(
                "zonal tick median {:.3e} s, centralized step with refresh median {:.3e} s, ratio {:.0}",
                cmp.zonal_median_s,
                cmp.cvvc_refresh_median_s,
                cmp.runtime_ratio()
            );
            Ok(())
        }
    }
}

/// Sensitivities at the step with the most PV, which is the base case when
/// the profiles carry no PV.
fn snapshot_bundle(prepared: &PreparedRun, config: &RunConfig) -> Result<SensitivityBundle> {
    let t = prepared.profiles.max_pv_step();
    let inj = prepared.profiles.injections(t, &[]);
    SensitivityBundle::compute(
        &prepared.model,
        &inj,
        &config.simulation.sensitivity,
        format!("step {t}"),
    )
}

fn write_sweep(path: &Path, rows: &[zoning::SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
