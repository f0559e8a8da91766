mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tightstack::config::load_scenario;
use tightstack::knode::{
    evaluate_velocity_rmse, generate_training_data, load_weights, loss, save_weights, train_knode,
    DataConfig, Mlp, TrainConfig, TrainingScenario, Windows,
};
use tightstack::sim::{experiment_grid, run_scenario, write_run, Experiment, Failure, SWEEP_SEEDS};

const OUT_ENV: &str = "TIGHTSTACK_OUT";
const DEFAULT_WEIGHTS: &str = "knode_weights.txt";

#[derive(Parser)]
#[command(
    name = "tightstack",
    version,
    about = "Stacked quadrotor formation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a scenario file and write logs and metrics.
    Simulate {
        config: PathBuf,
        /// Run only this seed instead of the file's list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = OUT_ENV, default_value = "runs")]
        out: PathBuf,
    },
    /// Generate two-vehicle data, fit the residual network and save its weights.
    Train {
        #[arg(long, value_enum, default_value_t = ScenarioArg::Both)]
        scenario: ScenarioArg,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        seeds: Vec<u64>,
        /// Seed of the evaluation data.
        #[arg(long, default_value_t = 99)]
        held_out_seed: u64,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        learning_rate: f64,
        /// Seed of the weight initialization.
        #[arg(long, default_value_t = 7)]
        init_seed: u64,
        /// Weights file; the loss history goes next to it as `<stem>.loss.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one of the fixed experiment grids and report on it.
    Sweep {
        #[arg(long, value_enum)]
        experiment: ExperimentArg,
        #[arg(long, default_value = DEFAULT_WEIGHTS)]
        weights: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_SEEDS)]
        seeds: Vec<u64>,
        #[arg(long, env = OUT_ENV, default_value = "runs")]
        out: PathBuf,
        /// Parallel runs; defaults to the number of available cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Build metric tables and time series from the run logs in a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to `<in>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ScenarioArg {
    StaticTop,
    Stacked,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Center,
    Bottom,
    Tight,
}

fn describe(f: &Failure) -> String {
    let kind = serde_json::to_value(f.kind)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default();
    let ids: Vec<String> = f.vehicles.iter().map(|v| v.to_string()).collect();
    format!("{kind} at t={:.3} s (vehicles {})", f.time, ids.join(", "))
}

fn simulate(config: &Path, seed: Option<u64>, out: &Path) -> Result<u8> {
    let scenario = load_scenario(config)?;
    let seeds = seed.map_or_else(|| scenario.seeds.clone(), |s| vec![s]);
    let mut failed = 0;
    for seed in seeds {
        let record = run_scenario(&scenario, seed)?;
        let files = write_run(&record, out)?;
        match &record.failure {
            None => {
                let parts: Vec<String> = record
                    .vehicles
                    .iter()
                    .zip(&record.metrics)
                    .map(|(v, m)| format!("{} rmse {:.4} z_max {:.4}", v.role, m.rmse, m.z_max))
                    .collect();
                println!(
                    "seed {seed}: ok; {} -> {}",
                    parts.join("; "),
                    files.log.display()
                );
            }
            Some(f) => {
                failed += 1;
                println!(
                    "seed {seed}: FAILED, {} -> {}",
                    describe(f),
                    files.log.display()
                );
            }
        }
    }
    Ok(if failed > 0 { 2 } else { 0 })
}

fn write_losses(losses: &[f64], path: &Path) -> Result<()> {
    let mut text = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        text.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn loss_path(weights: &Path) -> PathBuf {
    let stem = weights
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("weights");
    weights.with_file_name(format!("{stem}.loss.csv"))
}

#[allow(clippy::too_many_arguments)]
fn train(
    scenario: ScenarioArg,
    seeds: &[u64],
    held_out_seed: u64,
    epochs: usize,
    learning_rate: f64,
    init_seed: u64,
    out: Option<PathBuf>,
) -> Result<u8> {
    let weights_path = out.unwrap_or_else(|| match std::env::var_os(OUT_ENV) {
        Some(dir) => PathBuf::from(dir).join(DEFAULT_WEIGHTS),
        None => PathBuf::from(DEFAULT_WEIGHTS),
    });
    if let Some(dir) = weights_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let kind = match scenario {
        ScenarioArg::StaticTop => TrainingScenario::StaticTop,
        ScenarioArg::Stacked => TrainingScenario::Stacked,
        ScenarioArg::Both => TrainingScenario::Both,
    };
    let data = DataConfig::default();
    let train_set = generate_training_data(kind, &data, seeds)?;
    let held_set = generate_training_data(kind, &data, &[held_out_seed])?;
    for (label, reason) in train_set.aborted.iter().chain(&held_set.aborted) {
        eprintln!("warning: dropped segment {label}: {reason}");
    }
    if train_set.segments.is_empty() || held_set.segments.is_empty() {
        bail!("every data segment was dropped");
    }
    let config = TrainConfig {
        epochs,
        learning_rate,
        ..Default::default()
    };
    let windows = Windows::build(&train_set, &config)?;
    let held = Windows::build(
        &held_set,
        &TrainConfig {
            max_windows: usize::MAX,
            ..config.clone()
        },
    )?
    .interacting(&config.dw);
    println!(
        "{} samples, {} training windows, {} held-out interacting windows",
        train_set.samples(),
        windows.len(),
        held.len()
    );
    let init = Mlp::init(&[8, 32, 32, 3], config.params.hover_thrust(), init_seed)?;
    match train_knode(&windows, init, &config) {
        Ok(outcome) => {
            save_weights(&outcome.mlp, &weights_path)?;
            write_losses(&outcome.losses, &loss_path(&weights_path))?;
            let train_loss = outcome.losses.last().copied().unwrap_or(f64::NAN);
            let held_loss = if held.is_empty() {
                f64::NAN
            } else {
                loss(&outcome.mlp, &held, &config)
            };
            let base = evaluate_velocity_rmse(None, &held, &config);
            let trained = evaluate_velocity_rmse(Some(&outcome.mlp), &held, &config);
            println!("final train loss {train_loss:.6e}, held-out loss {held_loss:.6e}");
            println!(
                "held-out {}-step velocity rmse: DW only {base:.4e} m/s, KNODE-DW {trained:.4e} m/s ({:.1} % lower)",
                config.horizon,
                100.0 * (1.0 - trained / base)
            );
            println!("weights -> {}", weights_path.display());
            Ok(0)
        }
        Err(diverged) => {
            save_weights(&diverged.checkpoint, &weights_path)?;
            write_losses(&diverged.losses, &loss_path(&weights_path))?;
            eprintln!(
                "error: {diverged}; last finite checkpoint saved to {}",
                weights_path.display()
            );
            Ok(3)
        }
    }
}

fn sweep(
    experiment: ExperimentArg,
    weights: &Path,
    seeds: &[u64],
    out: &Path,
    jobs: Option<usize>,
) -> Result<u8> {
    let exp = match experiment {
        ExperimentArg::Center => Experiment::Center,
        ExperimentArg::Bottom => Experiment::Bottom,
        ExperimentArg::Tight => Experiment::Tight,
    };
    if !weights.is_file() {
        bail!(
            "weights file {} not found; run `tightstack train` first",
            weights.display()
        );
    }
    let mlp = Arc::new(load_weights(weights)?);
    let grid = experiment_grid(exp, &mlp, seeds);
    let dir = out.join(exp.as_str());
    std::fs::create_dir_all(&dir)?;
    let tasks: Vec<(usize, u64)> = grid
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.seeds.iter().map(move |&seed| (i, seed)))
        .collect();
    println!("{} runs into {}", tasks.len(), dir.display());

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<PathBuf>)>> = Mutex::new(Vec::new());
    let workers = jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(i, seed)) = tasks.get(k) else {
                    break;
                };
                let result = run_scenario(&grid[i], seed)
                    .and_then(|record| write_run(&record, &dir))
                    .map(|files| files.log)
                    .map_err(anyhow::Error::from);
                results.lock().expect("results lock").push((k, result));
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|(k, _)| *k);
    let mut logs = Vec::with_capacity(results.len());
    for (k, r) in results {
        let (i, seed) = tasks[k];
        logs.push(r.with_context(|| format!("{} seed {seed}", grid[i].name))?);
    }
    let groups = report::write_report(&logs, &dir.join("report"))?;
    print!("{}", report::format_table(&groups));
    println!("report -> {}", dir.join("report").display());
    Ok(0)
}

fn report_cmd(input: &Path, out: Option<PathBuf>) -> Result<u8> {
    let logs = report::find_logs(input)?;
    let out = out.unwrap_or_else(|| input.join("report"));
    let groups = report::write_report(&logs, &out)?;
    print!("{}", report::format_table(&groups));
    println!("report -> {}", out.display());
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Simulate { config, seed, out } => simulate(&config, seed, &out),
        Command::Train {
            scenario,
            seeds,
            held_out_seed,
            epochs,
            learning_rate,
            init_seed,
            out,
        } => train(
            scenario,
            &seeds,
            held_out_seed,
            epochs,
            learning_rate,
            init_seed,
            out,
        ),
        Command::Sweep {
            experiment,
            weights,
            seeds,
            out,
            jobs,
        } => sweep(experiment, &weights, &seeds, &out, jobs),
        Command::Report { input, out } => report_cmd(&input, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
