//! `stairs-lab`: config-driven runner for the mixed-cumulant simulation lab.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use stairs_core::diagnostics::{assumption_check, mc_population_loss};
use stairs_core::experiments::{
    coeffs_csv, compare_couplings, emit_artifacts, load_config, run_ode, run_perceptron, run_sweep,
    run_two_layer, samples_csv, trajectory_csv, ArtifactRun, Artifacts, CoeffsConfig,
    CompareConfig, OdeConfig, PerceptronConfig, SampleConfig, SweepConfig, TwoLayerConfig,
};
use stairs_core::hermite::population_loss;
use stairs_core::{HermiteSeries, Purpose, RngHandle, SpikeSet};

#[derive(Parser)]
#[command(
    name = "stairs-lab",
    version,
    about = "Mixed-cumulant model simulation lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config with a `schema_version` field.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed (or base seed) in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Dump samples as CSV.
    Sample(Common),
    /// Hermite coefficient tables as CSV.
    Coeffs {
        #[command(flatten)]
        common: Common,
        /// Also check the series against Monte Carlo and the activation assumptions.
        #[arg(long)]
        verify: bool,
    },
    /// One perceptron run: trace CSV and report JSON.
    Perceptron(Common),
    /// Integrate the search-phase ODE.
    Ode(Common),
    /// Train a two-layer network.
    TwoLayer(Common),
    /// Dimension sweep with exponent fit.
    Sweep(Common),
    /// Paired comparison of latent couplings.
    Compare(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Coeffs { common, .. } => common,
            Command::Sample(c)
            | Command::Perceptron(c)
            | Command::Ode(c)
            | Command::TwoLayer(c)
            | Command::Sweep(c)
            | Command::Compare(c) => c,
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let common = cli.command.common().clone();
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building the thread pool")?;
    }
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    let start = Instant::now();
    match &cli.command {
        Command::Sample(c) => sample(c),
        Command::Coeffs { common, verify } => coeffs(common, *verify),
        Command::Perceptron(c) => perceptron(c, start),
        Command::Ode(c) => ode(c),
        Command::TwoLayer(c) => two_layer(c, start),
        Command::Sweep(c) => sweep(c, start),
        Command::Compare(c) => compare(c, start),
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write(path, &serde_json::to_string_pretty(value)?)
}

fn sample(c: &Common) -> Result<()> {
    let mut cfg: SampleConfig = load_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let path = c.out.join("samples.csv");
    write(&path, &samples_csv(&cfg)?)?;
    log::info!("wrote {} samples to {}", cfg.n, path.display());
    Ok(())
}

#[derive(Serialize)]
struct VerifyPoint {
    alpha_u: f64,
    alpha_v: f64,
    series: f64,
    monte_carlo: f64,
    std_error: f64,
    agrees: bool,
}

fn coeffs(c: &Common, verify: bool) -> Result<()> {
    let mut cfg: CoeffsConfig = load_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let csv = coeffs_csv(&cfg)?;
    print!("{csv}");
    write(&c.out.join("coeffs.csv"), &csv)?;
    if !verify {
        return Ok(());
    }
    let mut rng = RngHandle::derive(cfg.seed, 0, Purpose::Diagnostics);
    let assumptions = assumption_check(&cfg.activation, &cfg.params, cfg.max_degree, &mut rng)?;
    let series = HermiteSeries::closed_form(&cfg.activation, &cfg.params, cfg.max_degree)?;
    let spikes = SpikeSet::orthogonal(
        cfg.params.d,
        &mut RngHandle::derive(cfg.seed, 0, Purpose::Spikes),
    )?;
    let mut points = Vec::new();
    for &(au, av) in &[
        (0.0, 0.0),
        (0.2, 0.0),
        (0.0, 0.2),
        (0.15, 0.15),
        (-0.1, 0.2),
    ] {
        let s = population_loss(&series, au, av)?;
        let (mc, se) = mc_population_loss(
            &cfg.params,
            &spikes,
            &cfg.activation,
            au,
            av,
            cfg.n_mc,
            &mut rng,
        )?;
        points.push(VerifyPoint {
            alpha_u: au,
            alpha_v: av,
            series: s,
            monte_carlo: mc,
            std_error: se,
            agrees: (s - mc).abs() <= 3.0 * se,
        });
    }
    let ok = assumptions.passed && points.iter().all(|p| p.agrees);
    write_json(
        &c.out.join("verify.json"),
        &serde_json::json!({ "assumptions": assumptions, "loss_points": points, "passed": ok }),
    )?;
    if !ok {
        bail!(
            "verification failed; see {}",
            c.out.join("verify.json").display()
        );
    }
    log::info!("verification passed");
    Ok(())
}

fn perceptron(c: &Common, start: Instant) -> Result<()> {
    let mut cfg: PerceptronConfig = load_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let record = run_perceptron(&cfg.spec, cfg.d, cfg.seed)?;
    log::info!(
        "{}: tau_u = {:?}, tau_v = {:?}",
        record.run_id,
        record.report.tau_u,
        record.report.tau_v
    );
    let artifacts = Artifacts {
        command: "perceptron".into(),
        config: serde_json::to_value(&cfg)?,
        runs: vec![ArtifactRun::from_record(&record)?],
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        ..Default::default()
    };
    emit_artifacts(&artifacts, &c.out)?;
    Ok(())
}

fn ode(c: &Common) -> Result<()> {
    let cfg: OdeConfig = load_config(&c.config)?;
    let (coeffs, traj) = run_ode(&cfg)?;
    write(&c.out.join("ode_trajectory.csv"), &trajectory_csv(&traj))?;
    write_json(
        &c.out.join("ode_summary.json"),
        &serde_json::json!({ "coeffs": coeffs, "exit_time": traj.exit_time, "config": cfg }),
    )?;
    log::info!("coefficients {coeffs:?}, exit time {:?}", traj.exit_time);
    Ok(())
}

fn two_layer(c: &Common, start: Instant) -> Result<()> {
    let mut cfg: TwoLayerConfig = load_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.train.seed = s;
    }
    let run = run_two_layer(&cfg)?;
    log::info!("{}: {:?}", run.summary.run_id, run.summary.staircase);
    let artifacts = Artifacts {
        command: "two-layer".into(),
        config: serde_json::to_value(&cfg)?,
        runs: vec![ArtifactRun::from_two_layer(&run)?],
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        ..Default::default()
    };
    emit_artifacts(&artifacts, &c.out)?;
    Ok(())
}

fn sweep(c: &Common, start: Instant) -> Result<()> {
    let mut cfg: SweepConfig = load_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.base_seed = s;
    }
    let result = run_sweep(&cfg)?;
    match (&result.fit, &result.fit_error) {
        (Some(f), _) => log::info!("slope {:.3} (r2 {:.3})", f.slope, f.r2),
        (None, Some(e)) => log::warn!("{e}"),
        _ => {}
    }
    emit_artifacts(
        &Artifacts::from_sweep(&result, start.elapsed().as_secs_f64())?,
        &c.out,
    )?;
    Ok(())
}

fn compare(c: &Common, start: Instant) -> Result<()> {
    let mut cfg: CompareConfig = load_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.base_seed = s;
    }
    let result = compare_couplings(&cfg)?;
    for r in &result.table {
        log::info!(
            "d = {}, q = {}: tau_v finite {}/{}, median tau_v {:?}",
            r.d,
            r.q,
            r.tau_v_finite,
            r.runs,
            r.median_tau_v
        );
    }
    emit_artifacts(
        &Artifacts::from_compare(&result, start.elapsed().as_secs_f64())?,
        &c.out,
    )?;
    Ok(())
}
