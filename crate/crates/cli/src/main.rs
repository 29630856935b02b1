//! `chanflip` command line: experiment runner and calculators.

mod output;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chanflip::accountant::{estimate_kappa_bar, required_ber, required_ber_closed_form, PrivacyBudget};
use chanflip::binfloat::ModelVector;
use chanflip::flsim::{run_experiment_full, ExperimentConfig};
use chanflip::perturb::{artificial_ber, FlipProbability, RngHandle, Stage};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "chanflip", version, about = "Channel-native bit-flipping DP for wireless federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every arm x seed of an experiment config and write results.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config's `output`.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, env = "CHANFLIP_OUTPUT_DIR", hide_env_values = true)]
        default_output: Option<PathBuf>,
        /// Leave the timestamp out of summary.json.
        #[arg(long)]
        no_timestamp: bool,
        /// Write pre-training checkpoints for `kappa-estimate`.
        #[arg(long)]
        save_checkpoints: bool,
    },
    /// Run a numeric verification battery.
    Verify { suite: verify::Suite },
    /// Required end-to-end BER for a Rényi budget.
    Accountant {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        epsilon: f64,
        /// Aggregation rounds K.
        #[arg(long)]
        rounds: u32,
        #[arg(long)]
        kappa_bar: f64,
        /// Known channel BER; prints the artificial BER to add on top.
        #[arg(long)]
        p_channel: Option<f64>,
    },
    /// Estimate kappa-bar per (seed, client) from saved checkpoints.
    KappaEstimate {
        checkpoint_dir: PathBuf,
        #[arg(long)]
        sensitivity: f64,
        /// Perturbation draws per checkpoint.
        #[arg(long)]
        samples: usize,
        /// Clip range; defaults to the largest `nu_inf` in the files.
        #[arg(long)]
        nu_inf: Option<f32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// One saved checkpoint file.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub client: usize,
    pub iteration: u32,
    pub nu_inf: f32,
    pub values: ModelVector,
}

#[derive(Debug)]
enum Failure {
    /// A check did not pass.
    Check,
    /// Bad input or I/O.
    Usage(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            output,
            default_output,
            no_timestamp,
            save_checkpoints,
        } => run(&config, output, default_output, no_timestamp, save_checkpoints),
        Command::Verify { suite } => run_verify(suite),
        Command::Accountant {
            lambda,
            epsilon,
            rounds,
            kappa_bar,
            p_channel,
        } => accountant(lambda, epsilon, rounds, kappa_bar, p_channel),
        Command::KappaEstimate {
            checkpoint_dir,
            sensitivity,
            samples,
            nu_inf,
            seed,
        } => kappa_estimate(&checkpoint_dir, sensitivity, samples, nu_inf, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    cfg.validate().map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(cfg)
}

fn run(
    config: &Path,
    output: Option<PathBuf>,
    default_output: Option<PathBuf>,
    no_timestamp: bool,
    save_checkpoints: bool,
) -> Result<(), Failure> {
    let cfg = load_config(config).map_err(Failure::Usage)?;
    let dir = output
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .or(default_output)
        .unwrap_or_else(|| PathBuf::from("results"));
    let started = std::time::Instant::now();
    let result = run_experiment_full(&cfg)?;
    let timestamp = (!no_timestamp).then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    let rows = output::write_all(&dir, &cfg, &result, timestamp)?;
    if save_checkpoints {
        output::write_checkpoints(&dir, &cfg)?;
    }
    for row in &rows {
        if row.over_satisfied_uploads > 0 {
            eprintln!(
                "warning: arm {}: {} uploads had channel BER above the required BER (privacy over-satisfied, convergence at risk); artificial BER set to 0",
                row.arm, row.over_satisfied_uploads
            );
        }
        if row.diverged_runs > 0 {
            eprintln!("warning: arm {}: {}/{} runs diverged", row.arm, row.diverged_runs, row.runs);
        }
    }
    println!(
        "{} arms x {} seeds in {:.1} s -> {}",
        cfg.arms.len(),
        cfg.seeds.len(),
        started.elapsed().as_secs_f64(),
        dir.display()
    );
    println!("{:<16} {:>10} {:>10} {:>10}", "arm", "accuracy", "sd", "loss");
    for row in &rows {
        println!(
            "{:<16} {:>10.4} {:>10.4} {:>10.4e}",
            row.arm, row.accuracy_mean, row.accuracy_std, row.loss_mean
        );
    }
    Ok(())
}

fn run_verify(suite: verify::Suite) -> Result<(), Failure> {
    let checks = verify::run(suite);
    let failed = checks.iter().filter(|c| !c.pass).count();
    for c in &checks {
        println!("[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("{} checks, {failed} failed", checks.len());
    if failed > 0 {
        Err(Failure::Check)
    } else {
        Ok(())
    }
}

fn accountant(lambda: f64, epsilon: f64, rounds: u32, kappa_bar: f64, p_channel: Option<f64>) -> Result<(), Failure> {
    let budget = PrivacyBudget::new(lambda, epsilon, rounds)?;
    let exact = required_ber(&budget, kappa_bar)?;
    let closed = required_ber_closed_form(&budget, kappa_bar)?;
    println!("p = {closed:.15} (closed form)");
    println!("p = {:.15} (exact inversion)", exact.value());
    if let Some(pc) = p_channel {
        let pc = FlipProbability::new(pc)?;
        match artificial_ber(exact, pc) {
            Ok(pa) => println!("p_A = {:.15} (artificial BER on top of p_C = {})", pa.value(), pc.value()),
            Err(e) => println!("p_A = 0 ({e})"),
        }
    }
    Ok(())
}

fn kappa_estimate(
    dir: &Path,
    sensitivity: f64,
    samples: usize,
    nu_inf: Option<f32>,
    seed: u64,
) -> Result<(), Failure> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Usage(format!("{}: no checkpoint files", dir.display())));
    }
    let mut by_client: std::collections::BTreeMap<(u64, usize), Vec<ModelVector>> = Default::default();
    let mut range: f32 = 0.0;
    for path in &files {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let cp: Checkpoint = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        range = range.max(cp.nu_inf);
        by_client.entry((cp.seed, cp.client)).or_default().push(cp.values);
    }
    let nu_inf = nu_inf.unwrap_or(range);
    let mut out = Vec::new();
    for ((cp_seed, client), models) in &by_client {
        let handle = RngHandle::new(seed, 0, *client as u64, Stage::Kappa);
        let est = estimate_kappa_bar(models, sensitivity, samples, nu_inf, &handle)?;
        out.push(serde_json::json!({
            "seed": cp_seed,
            "client": client,
            "checkpoints": models.len(),
            "kappa_bar": est.kappa_bar,
            "samples_used": est.samples_used,
            "model_dim": est.model_dim,
        }));
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
