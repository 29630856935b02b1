//! Result files written by `chanflip run`.
//!
//! Layout under the output directory:
//! - `{arm}_seed{seed}.csv`: one row per round.
//! - `summary.csv`: one row per arm, final-round statistics over seeds.
//! - `summary.json`: config, per-seed setup and the summary rows.
//! - `checkpoints/` (optional): pre-training checkpoints per seed and client.

use std::path::Path;

use chanflip::flsim::{prepare_seed, ArmRun, ExperimentConfig, ExperimentOutput, MechanismKind, SeedSummary};
use serde::Serialize;

use crate::Checkpoint;

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub arm: String,
    pub mechanism: MechanismKind,
    pub epsilon: f64,
    pub p_c_max: f64,
    pub runs: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub loss_mean: f64,
    pub loss_std: f64,
    pub dist_to_opt_sq_mean: f64,
    pub diverged_runs: usize,
    pub over_satisfied_uploads: u64,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at: Option<String>,
    config: &'a ExperimentConfig,
    seeds: &'a [SeedSummary],
    arms: &'a [SummaryRow],
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(cfg: &ExperimentConfig, runs: &[ArmRun]) -> Vec<SummaryRow> {
    cfg.arms
        .iter()
        .map(|arm| {
            let mine: Vec<&ArmRun> = runs.iter().filter(|r| r.arm == arm.name).collect();
            let acc: Vec<f64> = mine.iter().map(|r| r.last().accuracy).collect();
            let loss: Vec<f64> = mine.iter().map(|r| r.last().global_loss).collect();
            let dist: Vec<f64> = mine.iter().map(|r| r.last().dist_to_opt_sq).collect();
            let (accuracy_mean, accuracy_std) = mean_std(&acc);
            let (loss_mean, loss_std) = mean_std(&loss);
            SummaryRow {
                arm: arm.name.clone(),
                mechanism: arm.mechanism,
                epsilon: arm.epsilon(cfg),
                p_c_max: arm.p_c_max(cfg),
                runs: mine.len(),
                accuracy_mean,
                accuracy_std,
                loss_mean,
                loss_std,
                dist_to_opt_sq_mean: mean_std(&dist).0,
                diverged_runs: mine.iter().filter(|r| r.diverged()).count(),
                over_satisfied_uploads: mine
                    .iter()
                    .flat_map(|r| &r.records)
                    .map(|rec| rec.over_satisfied as u64)
                    .sum(),
            }
        })
        .collect()
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> String {
    format!("{}: {e}", path.display())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), String> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_all(
    dir: &Path,
    cfg: &ExperimentConfig,
    result: &ExperimentOutput,
    timestamp: Option<String>,
) -> Result<Vec<SummaryRow>, String> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for run in &result.runs {
        write_csv(&dir.join(format!("{}_seed{}.csv", run.arm, run.seed)), &run.records)?;
    }
    let rows = summarize(cfg, &result.runs);
    write_csv(&dir.join("summary.csv"), &rows)?;
    let file = SummaryFile {
        generated_at: timestamp,
        config: cfg,
        seeds: &result.seeds,
        arms: &rows,
    };
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| io_err(&path, e))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(rows)
}

/// Reruns pre-training per seed and writes its checkpoints as
/// `checkpoints/seed{s}_client{n}_it{t}.json`.
pub fn write_checkpoints(dir: &Path, cfg: &ExperimentConfig) -> Result<(), String> {
    let cdir = dir.join("checkpoints");
    std::fs::create_dir_all(&cdir).map_err(|e| io_err(&cdir, e))?;
    let e = cfg.schedule.local_steps;
    for &seed in &cfg.seeds {
        let setup = prepare_seed(cfg, seed).map_err(|e| e.to_string())?;
        for (client, state) in setup.clients.iter().enumerate() {
            for (i, values) in state.checkpoints.iter().enumerate() {
                let iteration = (i as u32 + 1) * e;
                let cp = Checkpoint {
                    seed,
                    client,
                    iteration,
                    nu_inf: setup.nu_inf,
                    values: values.clone(),
                };
                let path = cdir.join(format!("seed{seed}_client{client}_it{iteration}.json"));
                let text = serde_json::to_string(&cp).map_err(|e| io_err(&path, e))?;
                std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
