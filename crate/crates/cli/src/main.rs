//! `pks`: runs the partially kinetic system experiments and writes CSV tables.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::{json, Map, Value};

use pks_core::config::RunConfig;
use pks_core::harness::{consistency_experiment, energy_experiment, mf_error_curve, run_mc_study};
use pks_core::meanfield::{commutation_check, energy_kinetic};
use pks_core::metrics::{dobrushin_check, KineticInit};
use pks_core::microsim::{energy_micro, explicit_solution, integrate_micro};
use pks_core::{output, Error, Result};

#[derive(Parser)]
#[command(name = "pks", version, about = "Linear partially kinetic system simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (TOML, flat or dotted keys).
    #[arg(long)]
    config: PathBuf,
    /// Override one configuration key, e.g. `--set mu_in.mean=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Cap on the number of worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the discrete system for one drawn ensemble.
    SimulateMicro {
        #[command(flatten)]
        common: Common,
        /// Also write every particle position (`micro_ensemble.csv`).
        #[arg(long)]
        dump_ensemble: bool,
    },
    /// Integrate the closed moment ODE of the kinetic system.
    SimulateMoment {
        #[command(flatten)]
        common: Common,
    },
    /// Integrate the upwind transport discretisation.
    SimulatePde {
        #[command(flatten)]
        common: Common,
        /// Write the density every `stride` output samples.
        #[arg(long, default_value_t = 10)]
        density_stride: usize,
    },
    /// Monte-Carlo variance and mean-field error study.
    McStudy {
        #[command(flatten)]
        common: Common,
    },
    /// Compare two kinetic solutions against the stability estimate.
    Dobrushin {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
        perturb_r: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        perturb_s: f64,
        /// Shift of the initial particle distribution.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        perturb_mean: f64,
    },
    /// Energy budgets of the discrete, moment and transport solutions.
    Energy {
        #[command(flatten)]
        common: Common,
    },
    /// Discrete system against the kinetic one started from its empirical measure.
    Consistency {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds starting at the configured one.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Parse and validate a configuration, then print the effective values.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

/// Collects the files written and the headline numbers of one run.
struct Run {
    out_dir: PathBuf,
    outputs: Vec<String>,
    summary: Map<String, Value>,
}

impl Run {
    fn new(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        Ok(Self { out_dir: out_dir.to_path_buf(), outputs: Vec::new(), summary: Map::new() })
    }

    fn file(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        info!("writing {}", self.out_dir.join(name).display());
        self.out_dir.join(name)
    }

    fn report(&mut self, key: &str, value: impl Into<Value>) {
        let value = value.into();
        println!("{key}: {value}");
        self.summary.insert(key.to_string(), value);
    }
}

fn load_config(path: &Path, set: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config { key: "--config".into(), reason: format!("{}: {e}", path.display()) })?;
    RunConfig::load(Some(&text), set)
}

fn config_json(cfg: &RunConfig) -> Value {
    let map = cfg
        .entries()
        .map(|(k, v)| {
            let v = match serde_json::to_value(v) {
                Ok(Value::Null) | Err(_) => Value::String(v.to_string()),
                Ok(v) => v,
            };
            (k.to_string(), v)
        })
        .collect();
    Value::Object(map)
}

fn write_manifest(run: &Run, command: &str, common: &Common, cfg: &RunConfig, started: Instant) -> Result<()> {
    let manifest = json!({
        "command": command,
        "config_file": common.config.display().to_string(),
        "overrides": common.set,
        "config": config_json(cfg),
        "versions": { "pks-cli": env!("CARGO_PKG_VERSION"), "pks-core": pks_core::VERSION },
        "threads": rayon::current_num_threads(),
        "wall_time_s": started.elapsed().as_secs_f64(),
        "outputs": run.outputs,
        "summary": run.summary,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    std::fs::write(run.out_dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn simulate_micro(cfg: &RunConfig, run: &mut Run, dump_ensemble: bool) -> Result<()> {
    let sc = &cfg.scenario;
    let p = &sc.params;
    let ens = sc.draw_ensemble()?;
    let opts = pks_core::microsim::MicroOptions { keep_ensembles: dump_ensemble, ..sc.micro_options() };
    let traj = integrate_micro(p, &sc.initial_macro(), &ens, sc.t_end, &opts)?;
    let energy = energy_micro(p, &traj);
    output::write_micro(&run.file("micro.csv"), &traj, &energy)?;
    if dump_ensemble {
        output::write_micro_ensembles(&run.file("micro_ensemble.csv"), &traj)?;
    }
    let res = traj.max_residuals();
    run.report("energy_relative_drift", energy.relative_drift());
    run.report("max_residual_index3", res.index3);
    run.report("max_residual_index2", res.index2);
    if p.n_r() == 1 && p.n_q() == 1 {
        // closed form for the drawn particles, not for the sampled law
        let exact = explicit_solution(p, sc.r_in[0], sc.s_in[0], ens.empirical().mean()[0])?;
        let dev = traj
            .times
            .iter()
            .zip(&traj.macro_states)
            .map(|(t, m)| (m.r[0] - exact.eval(*t).0).abs())
            .fold(0.0, f64::max);
        run.report("max_deviation_from_closed_form", dev);
    }
    Ok(())
}

fn simulate_moment(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let sc = &cfg.scenario;
    let traj = sc.kinetic()?;
    let energy = energy_kinetic(&sc.params, &traj)?;
    output::write_kinetic(&run.file("moment.csv"), &traj, &energy)?;
    run.report("energy_relative_drift", energy.relative_drift());
    Ok(())
}

fn simulate_pde(cfg: &RunConfig, run: &mut Run, stride: usize) -> Result<()> {
    let sc = &cfg.scenario;
    let traj = sc.transport()?;
    let energy = energy_kinetic(&sc.params, &traj)?;
    output::write_kinetic(&run.file("pde.csv"), &traj, &energy)?;
    output::write_density(&run.file("density.csv"), &traj, stride)?;
    let moment = sc.kinetic()?;
    let gap = traj
        .macro_states
        .iter()
        .zip(&moment.macro_states)
        .map(|(a, b)| (&a.r - &b.r).amax())
        .fold(0.0, f64::max);
    run.report("max_gap_to_moment_ode", gap);
    run.report("mass_lost_through_boundary", *traj.outflow.last().unwrap());
    run.report("min_density", traj.min_density.iter().copied().fold(f64::INFINITY, f64::min));
    run.report("commutation_error", commutation_check(&sc.params, &traj));
    Ok(())
}

fn mc_study(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let sc = &cfg.scenario;
    let study = run_mc_study(sc, &cfg.mc.n_values, cfg.mc.n_samples)?;
    let curve = mf_error_curve(&sc.params, &study);
    output::write_mc_summary(&run.file("mc_summary.csv"), &study, &curve)?;
    output::write_mc_trajectories(&run.file("mc_trajectories.csv"), &study)?;
    run.report("variance_slope", study.variance_slope().map(|s| s.0));
    run.report("spearman", curve.spearman);
    Ok(())
}

fn dobrushin(cfg: &RunConfig, run: &mut Run, dr: f64, ds: f64, dmean: f64) -> Result<()> {
    let sc = &cfg.scenario;
    let a = KineticInit { r_in: sc.r_in.clone(), s_in: sc.s_in.clone(), mu_in: sc.mu_in.clone() };
    let b = KineticInit {
        r_in: sc.r_in.add_scalar(dr),
        s_in: sc.s_in.add_scalar(ds),
        mu_in: sc.mu_in.shifted_by(dmean)?,
    };
    let opts = pks_core::meanfield::KineticOptions { keep_snapshots: false, ..sc.kinetic_options() };
    let rows = dobrushin_check(&sc.params, &a, &b, sc.t_end, &opts)?;
    output::write_dobrushin(&run.file("dobrushin.csv"), &rows)?;
    run.report("min_margin", rows.iter().map(|r| r.margin()).fold(f64::INFINITY, f64::min));
    run.report("satisfied", rows.iter().all(|r| r.satisfied()));
    Ok(())
}

fn energy(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let ex = energy_experiment(&cfg.scenario)?;
    output::write_energy(&run.file("energy_micro.csv"), &ex.micro)?;
    output::write_energy(&run.file("energy_moment.csv"), &ex.moment)?;
    output::write_energy(&run.file("energy_pde.csv"), &ex.pde)?;
    output::write_density_snapshot(&run.file("density_initial.csv"), ex.pde.times[0], &ex.density_initial)?;
    output::write_density_snapshot(&run.file("density_final.csv"), *ex.pde.times.last().unwrap(), &ex.density_final)?;
    run.report("micro_relative_drift", ex.micro.relative_drift());
    run.report("moment_relative_drift", ex.moment.relative_drift());
    run.report("pde_energy_initial", ex.pde.e_total[0]);
    run.report("pde_energy_final", *ex.pde.e_total.last().unwrap());
    run.report("pde_variance_final", ex.density_final.variance());
    Ok(())
}

fn consistency(cfg: &RunConfig, run: &mut Run, seeds: u64) -> Result<()> {
    let mut sc = cfg.scenario.clone();
    let mut rows = Vec::new();
    for seed in cfg.scenario.seed..cfg.scenario.seed + seeds {
        sc.seed = seed;
        rows.push((seed, consistency_experiment(&sc)?));
    }
    output::write_consistency(&run.file("consistency.csv"), &rows)?;
    run.report("max_deviation", rows.iter().map(|r| r.1.deviation).fold(0.0, f64::max));
    if rows.iter().any(|r| r.1.mismatched) {
        log::warn!("N_real differs from N; the kinetic run used N_real := N");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    let (name, common) = match &cli.command {
        Command::ValidateConfig { config, set } => {
            let cfg = load_config(config, set)?;
            print!("{}", cfg.to_toml());
            return Ok(());
        }
        Command::SimulateMicro { common, .. } => ("simulate-micro", common),
        Command::SimulateMoment { common } => ("simulate-moment", common),
        Command::SimulatePde { common, .. } => ("simulate-pde", common),
        Command::McStudy { common } => ("mc-study", common),
        Command::Dobrushin { common, .. } => ("dobrushin", common),
        Command::Energy { common } => ("energy", common),
        Command::Consistency { common, .. } => ("consistency", common),
    };
    let cfg = load_config(&common.config, &common.set)?;
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("--threads: {e}")))?;
    }
    let mut out = Run::new(&common.out_dir)?;
    match &cli.command {
        Command::SimulateMicro { dump_ensemble, .. } => simulate_micro(&cfg, &mut out, *dump_ensemble)?,
        Command::SimulateMoment { .. } => simulate_moment(&cfg, &mut out)?,
        Command::SimulatePde { density_stride, .. } => simulate_pde(&cfg, &mut out, *density_stride)?,
        Command::McStudy { .. } => mc_study(&cfg, &mut out)?,
        Command::Dobrushin { perturb_r, perturb_s, perturb_mean, .. } => {
            dobrushin(&cfg, &mut out, *perturb_r, *perturb_s, *perturb_mean)?
        }
        Command::Energy { .. } => energy(&cfg, &mut out)?,
        Command::Consistency { seeds, .. } => consistency(&cfg, &mut out, *seeds)?,
        Command::ValidateConfig { .. } => unreachable!(),
    }
    write_manifest(&out, name, common, &cfg, started)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_integration_failure() { 2 } else { 1 })
        }
    }
}
