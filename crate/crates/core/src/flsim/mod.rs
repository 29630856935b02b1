//! Desk-scale wireless federated learning simulation.
//!
//! Each seed builds a synthetic dataset, pre-trains once to fix the clip bound
//! `G`, the norms `nu2`, `nu_inf` and the per-client kappa estimate, then runs
//! every arm from a zero model. Arms sharing a seed see the same channel draws
//! and the same channel flip positions.

pub mod config;
pub mod mechanism;
pub mod task;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{
    classical_sensitivity, estimate_kappa_bar, gaussian_sigma, renyi_to_dp_delta, required_ber, KappaEstimate,
    PrivacyBudget, SensitivityParams,
};
use crate::binfloat::ModelVector;
use crate::error::{Error, Result};
use crate::perturb::{awgn_ber, db_to_linear, ChannelConfig, FlipProbability, RngHandle, Stage};

pub use config::{ArmConfig, ChannelModel, ChannelSection, ExperimentConfig, PrivacyConfig, ScheduleConfig};
pub use mechanism::{upload, MechanismKind, UploadContext, UploadOutcome};
pub use task::{Dataset, FederatedData, TaskConfig, TaskConstants};

/// Metrics of the global model after one aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub arm: String,
    pub seed: u64,
    /// Aggregation index `k`; 0 is the initial model.
    pub round: u32,
    /// Local iteration `t = k E`.
    pub iteration: u32,
    pub global_loss: f64,
    pub accuracy: f64,
    /// Mean end-to-end BER over clients.
    pub mean_ber: f64,
    /// Mean artificial BER over clients.
    pub mean_artificial_ber: f64,
    /// Clients whose channel alone exceeded the required BER.
    pub over_satisfied: u32,
    pub packets_dropped: u32,
    pub packets_total: u32,
    /// `||w - w*||^2`.
    pub dist_to_opt_sq: f64,
    /// Model or loss not representable in binary32.
    pub diverged: bool,
}

/// Per-client quantities fixed before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    pub weight: f64,
    pub dataset_size: usize,
    /// `2 eta G / |D_n|`.
    pub sensitivity: f64,
    pub kappa: KappaEstimate,
    /// Local models recorded at aggregation times during pre-training.
    pub checkpoints: Vec<ModelVector>,
}

/// Everything an arm needs for one seed.
#[derive(Debug, Clone)]
pub struct SeedSetup {
    pub seed: u64,
    pub data: FederatedData,
    pub constants: TaskConstants,
    /// Clip bound `G`.
    pub clip: f64,
    pub nu2: f64,
    pub nu_inf: f32,
    pub clients: Vec<ClientState>,
}

/// Serializable digest of a [`SeedSetup`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub clip: f64,
    pub nu2: f64,
    pub nu_inf: f32,
    pub mu: f64,
    pub alpha: f64,
    pub gamma_het: f64,
    pub f_star: f64,
    pub weights: Vec<f64>,
    pub sensitivity: Vec<f64>,
    pub kappa_bar: Vec<f64>,
}

impl SeedSetup {
    pub fn weights(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.weight).collect()
    }

    pub fn summary(&self) -> SeedSummary {
        SeedSummary {
            seed: self.seed,
            clip: self.clip,
            nu2: self.nu2,
            nu_inf: self.nu_inf,
            mu: self.constants.mu,
            alpha: self.constants.alpha,
            gamma_het: self.constants.gamma_het,
            f_star: self.constants.f_star,
            weights: self.weights(),
            sensitivity: self.clients.iter().map(|c| c.sensitivity).collect(),
            kappa_bar: self.clients.iter().map(|c| c.kappa.kappa_bar).collect(),
        }
    }
}

/// Records of one arm under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRun {
    pub arm: String,
    pub mechanism: MechanismKind,
    pub epsilon: f64,
    pub p_c_max: f64,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
}

impl ArmRun {
    pub fn last(&self) -> &RoundRecord {
        self.records.last().expect("at least the initial record")
    }

    pub fn diverged(&self) -> bool {
        self.records.iter().any(|r| r.diverged)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub seeds: Vec<SeedSummary>,
    /// Arm-major, then seed, in configuration order.
    pub runs: Vec<ArmRun>,
}

/// Mean of per-sample gradients, each clipped to norm `clip`.
pub fn clipped_gradient(model: &[f64], data: &Dataset, reg: f64, clip: f64) -> Vec<f64> {
    data.clipped_gradient(model, reg, clip)
}

/// One full-batch clipped descent step.
pub fn local_step(model: &[f64], data: &Dataset, reg: f64, eta: f64, clip: f64) -> Vec<f64> {
    let g = clipped_gradient(model, data, reg, clip);
    model.iter().zip(&g).map(|(w, g)| w - eta * g).collect()
}

/// Weighted average of the received models.
///
/// Missing uploads are skipped and the remaining weights renormalized; when
/// nothing arrives the previous global model is returned.
pub fn aggregate(models: &[Option<ModelVector>], weights: &[f64], previous: &ModelVector) -> Result<ModelVector> {
    if models.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: models.len(),
            right: weights.len(),
        });
    }
    let dim = previous.len();
    let mut sum = vec![0.0f64; dim];
    let mut mass = 0.0;
    for (model, &q) in models.iter().zip(weights) {
        let Some(model) = model else { continue };
        if model.len() != dim {
            return Err(Error::LengthMismatch {
                left: dim,
                right: model.len(),
            });
        }
        mass += q;
        sum.iter_mut().zip(model.as_slice()).for_each(|(s, &v)| *s += q * v as f64);
    }
    if mass == 0.0 {
        return Ok(previous.clone());
    }
    Ok(ModelVector::new(sum.into_iter().map(|s| (s / mass) as f32).collect()))
}

fn to_f64(model: &ModelVector) -> Vec<f64> {
    model.as_slice().iter().map(|&v| v as f64).collect()
}

fn to_model(w: &[f64]) -> ModelVector {
    ModelVector::new(w.iter().map(|&v| v as f32).collect())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Noiseless federated training from zero. `on_round` sees the global model at
/// the start of every round, `on_local` every local model after a step.
#[allow(clippy::too_many_arguments)]
fn noiseless_training(
    data: &FederatedData,
    reg: f64,
    eta: f64,
    rounds: u32,
    local_steps: u32,
    clip: f64,
    mut on_round: impl FnMut(&[f64]),
    mut on_local: impl FnMut(usize, u32, &[f64]),
) {
    let weights = data.weights();
    let dim = data.test.dim();
    let mut global = vec![0.0; dim];
    for _ in 0..rounds {
        on_round(&global);
        let mut next = vec![0.0; dim];
        for (n, client) in data.clients.iter().enumerate() {
            let mut w = global.clone();
            for s in 1..=local_steps {
                w = local_step(&w, client, reg, eta, clip);
                on_local(n, s, &w);
            }
            next.iter_mut().zip(&w).for_each(|(a, v)| *a += weights[n] * v);
        }
        global = next;
    }
}

/// Evenly spaced selection of at most `count` items, always keeping the last.
fn spread<T: Clone>(items: &[T], count: usize) -> Vec<T> {
    if items.len() <= count {
        return items.to_vec();
    }
    (1..=count).map(|i| items[i * items.len() / count - 1].clone()).collect()
}

/// Data, pre-training and kappa estimates for one seed.
pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedSetup> {
    cfg.validate()?;
    let reg = cfg.task.regularization;
    let eta = cfg.schedule.learning_rate;
    let e = cfg.schedule.local_steps;
    let pre_rounds = cfg.schedule.pretrain() / e;
    let data = task::generate(&cfg.task, seed)?;
    let constants = task::task_constants(&data, reg)?;

    let mut norms = Vec::new();
    noiseless_training(&data, reg, eta, pre_rounds, e, f64::INFINITY, |w| {
        for client in &data.clients {
            norms.extend(client.gradient_norms(w, reg));
        }
    }, |_, _, _| {});
    let clip = median(&mut norms);
    if !(clip > 0.0 && clip.is_finite()) {
        return Err(Error::Config(format!("degenerate clip bound {clip}")));
    }

    let mut nu2: f64 = 0.0;
    let mut nu_inf: f64 = 0.0;
    let mut checkpoints = vec![Vec::new(); data.clients.len()];
    noiseless_training(&data, reg, eta, pre_rounds, e, clip, |_| {}, |n, s, w| {
        nu2 = nu2.max(w.iter().map(|v| v * v).sum::<f64>().sqrt());
        nu_inf = nu_inf.max(w.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
        if s == e {
            checkpoints[n].push(to_model(w));
        }
    });
    let mut nu_inf32 = nu_inf as f32;
    if (nu_inf32 as f64) < nu_inf {
        nu_inf32 = nu_inf32.next_up();
    }
    if !(nu_inf32 > 0.0) {
        return Err(Error::Config("pre-training left the model at zero".into()));
    }

    let weights = data.weights();
    let clients = data
        .clients
        .iter()
        .zip(checkpoints)
        .enumerate()
        .map(|(n, (client, cps))| {
            let sensitivity = classical_sensitivity(&SensitivityParams {
                eta,
                clip,
                dataset_size: client.len(),
            })?;
            let samples = spread(&cps, cfg.privacy.kappa_checkpoints);
            let handle = RngHandle::new(seed, 0, n as u64, Stage::Kappa);
            let kappa = estimate_kappa_bar(&samples, sensitivity, cfg.privacy.kappa_samples, nu_inf32, &handle)?;
            Ok(ClientState {
                weight: weights[n],
                dataset_size: client.len(),
                sensitivity,
                kappa,
                checkpoints: cps,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SeedSetup {
        seed,
        data,
        constants,
        clip,
        nu2,
        nu_inf: nu_inf32,
        clients,
    })
}

/// Channel BER for one (round, client) under the configured channel.
pub fn draw_channel_ber(channel: &ChannelSection, p_c_max: f64, handle: &RngHandle) -> Result<FlipProbability> {
    let u: f64 = handle.rng().random();
    match channel.model {
        ChannelModel::FixedRange => FlipProbability::new(u * p_c_max),
        ChannelModel::Awgn => awgn_ber(&ChannelConfig::awgn(channel.modulation, db_to_linear(channel.snr_db))),
        ChannelModel::Rayleigh => {
            let gain = -(-u).ln_1p();
            let snr = (db_to_linear(channel.snr_db) * gain).max(f64::MIN_POSITIVE);
            awgn_ber(&ChannelConfig::awgn(channel.modulation, snr))
        }
    }
}

/// Runs one arm for one seed.
pub fn run_arm(cfg: &ExperimentConfig, setup: &SeedSetup, arm: &ArmConfig) -> Result<ArmRun> {
    let reg = cfg.task.regularization;
    let eta = cfg.schedule.learning_rate;
    let e = cfg.schedule.local_steps;
    let rounds = cfg.schedule.rounds();
    let lambda = cfg.privacy.lambda;
    let epsilon = arm.epsilon(cfg);
    let p_c_max = arm.p_c_max(cfg);
    let budget = PrivacyBudget::new(lambda, epsilon, rounds)?;
    let p_required = setup
        .clients
        .iter()
        .map(|c| required_ber(&budget, c.kappa.kappa_bar))
        .collect::<Result<Vec<_>>>()?;
    let delta = renyi_to_dp_delta(lambda, epsilon, epsilon)?;
    let sigma = setup
        .clients
        .iter()
        .map(|c| gaussian_sigma(c.sensitivity, rounds, delta, epsilon))
        .collect::<Result<Vec<_>>>()?;
    let weights = setup.weights();
    let dim = setup.data.test.dim();

    let mut global = ModelVector::zeros(dim);
    let mut records = vec![record(arm, setup, 0, 0, &global, &[])];
    for k in 1..=rounds {
        let start = to_f64(&global);
        let outcomes = setup
            .data
            .clients
            .par_iter()
            .enumerate()
            .map(|(n, client)| {
                let mut w = start.clone();
                for _ in 0..e {
                    w = local_step(&w, client, reg, eta, setup.clip);
                }
                let local = to_model(&w);
                let draw = RngHandle::new(setup.seed, k as u64, n as u64, Stage::ChannelDraw);
                let ctx = UploadContext {
                    kind: arm.mechanism,
                    nu_inf: setup.nu_inf,
                    nu2: setup.nu2,
                    p_required: p_required[n],
                    p_channel: draw_channel_ber(&cfg.channel, p_c_max, &draw)?,
                    sigma: sigma[n],
                    previous_global: &global,
                    seed: setup.seed,
                    round: k as u64,
                    client: n as u64,
                };
                upload(&local, &ctx)
            })
            .collect::<Result<Vec<_>>>()?;
        let received: Vec<Option<ModelVector>> = outcomes.iter().map(|o| Some(o.model.clone())).collect();
        global = aggregate(&received, &weights, &global)?;
        records.push(record(arm, setup, k, k * e, &global, &outcomes));
    }
    Ok(ArmRun {
        arm: arm.name.clone(),
        mechanism: arm.mechanism,
        epsilon,
        p_c_max,
        seed: setup.seed,
        records,
    })
}

fn record(arm: &ArmConfig, setup: &SeedSetup, round: u32, iteration: u32, global: &ModelVector, outcomes: &[UploadOutcome]) -> RoundRecord {
    let w = to_f64(global);
    let loss = task::global_loss(&setup.data, &w, setup.constants.mu);
    let count = outcomes.len().max(1) as f64;
    let mean = |f: fn(&UploadOutcome) -> f64| {
        if outcomes.is_empty() {
            0.0
        } else {
            outcomes.iter().map(f).sum::<f64>() / count
        }
    };
    RoundRecord {
        arm: arm.name.clone(),
        seed: setup.seed,
        round,
        iteration,
        global_loss: loss,
        accuracy: setup.data.test.accuracy(&w),
        mean_ber: mean(|o| o.end_to_end_ber),
        mean_artificial_ber: mean(|o| o.p_artificial),
        over_satisfied: outcomes.iter().filter(|o| o.over_satisfied).count() as u32,
        packets_dropped: outcomes.iter().map(|o| o.packets_dropped).sum(),
        packets_total: outcomes.iter().map(|o| o.packets_total).sum(),
        dist_to_opt_sq: w.iter().zip(&setup.constants.w_star).map(|(a, b)| (a - b) * (a - b)).sum(),
        diverged: !global.is_finite() || !(loss as f32).is_finite(),
    }
}

/// Runs every arm under every seed.
pub fn run_experiment_full(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let setups = cfg
        .seeds
        .par_iter()
        .map(|&s| prepare_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(&ArmConfig, &SeedSetup)> = cfg.arms.iter().flat_map(|a| setups.iter().map(move |s| (a, s))).collect();
    let runs = jobs
        .into_par_iter()
        .map(|(arm, setup)| run_arm(cfg, setup, arm))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutput {
        seeds: setups.iter().map(SeedSetup::summary).collect(),
        runs,
    })
}

/// Flat record stream of [`run_experiment_full`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RoundRecord>> {
    Ok(run_experiment_full(cfg)?
        .runs
        .into_iter()
        .flat_map(|r| r.records)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::Modulation;
    use proptest::prelude::{prop_assert, proptest};

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            task: TaskConfig {
                features: 15,
                clients: 4,
                samples_per_client: 100,
                data_seed: 3,
                separation: 1.0,
                label_skew: 0.6,
                regularization: 0.01,
                test_samples: 500,
            },
            schedule: ScheduleConfig {
                iterations: 20,
                local_steps: 5,
                learning_rate: 0.1,
                pretrain_iterations: None,
            },
            privacy: PrivacyConfig {
                lambda: 2.0,
                epsilon: 10.0,
                kappa_samples: 50,
                kappa_checkpoints: 2,
            },
            channel: ChannelSection {
                model: ChannelModel::FixedRange,
                p_c_max: 0.02,
                snr_db: 10.0,
                modulation: Modulation::Bpsk,
            },
            arms: MechanismKind::ALL
                .iter()
                .map(|&k| ArmConfig {
                    name: k.name().into(),
                    mechanism: k,
                    epsilon: None,
                    p_c_max: None,
                })
                .collect(),
            seeds: vec![1, 2],
            output: None,
        }
    }

    fn one_sample(x: &[f64], y: f64) -> Dataset {
        let mut f = x.to_vec();
        f.push(1.0);
        Dataset::new(x.len() + 1, f, vec![y]).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let v = ModelVector::new(vec![1.0, -2.0, 3.0]);
        let prev = ModelVector::zeros(3);
        let same = aggregate(&[Some(v.clone()), Some(v.clone())], &[0.3, 0.7], &prev).unwrap();
        for (a, b) in same.as_slice().iter().zip(v.as_slice()) {
            assert!((a - b).abs() <= 1e-6);
        }
        let neg = ModelVector::new(v.as_slice().iter().map(|x| -x).collect());
        assert_eq!(aggregate(&[Some(v.clone()), Some(neg)], &[0.5, 0.5], &prev).unwrap(), prev);
        let s = aggregate(
            &[Some(ModelVector::new(vec![0.0])), Some(ModelVector::new(vec![4.0]))],
            &[0.25, 0.75],
            &ModelVector::zeros(1),
        )
        .unwrap();
        assert_eq!(s.as_slice(), &[3.0]);
        assert_eq!(aggregate(&[None, None], &[0.5, 0.5], &v).unwrap(), v);
        assert!(aggregate(&[Some(v.clone())], &[0.5, 0.5], &prev).is_err());
    }

    #[test]
    fn clipping_examples() {
        // w = 0: per-sample gradient -y x / 2, norm |x| / 2
        let d = one_sample(&[3.0], 1.0);
        let g = clipped_gradient(&[0.0, 0.0], &d, 0.0, 100.0);
        assert_eq!(g, d.gradient(&[0.0, 0.0], 0.0));
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let half = clipped_gradient(&[0.0, 0.0], &d, 0.0, norm / 2.0);
        let hn = half.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((hn - norm / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn clipped_mean_norm_at_most_clip(seed in 0u64..200, clip in 0.01f64..3.0) {
            let cfg = TaskConfig { features: 5, clients: 1, samples_per_client: 30, data_seed: seed,
                separation: 1.0, label_skew: 0.0, regularization: 0.01, test_samples: 1 };
            let data = task::generate(&cfg, 0).unwrap();
            let w = vec![0.3; 6];
            let c = &data.clients[0];
            let g = clipped_gradient(&w, c, 0.01, clip);
            prop_assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= clip * (1.0 + 1e-12));
        }
    }

    #[test]
    fn local_step_examples() {
        let d = one_sample(&[1.0, 2.0], 1.0);
        // zero gradient: reg = 0 and a sample whose loss gradient vanishes numerically
        let w = vec![800.0, 800.0, 0.0];
        assert_eq!(local_step(&w, &d, 0.0, 0.1, 1.0), w);
        let cfg = small_config();
        let data = task::generate(&cfg.task, 0).unwrap();
        let c = &data.clients[0];
        let mut w = vec![0.0; c.dim()];
        let mut loss = c.loss(&w, 0.01);
        for _ in 0..20 {
            w = local_step(&w, c, 0.01, 0.05, f64::INFINITY);
            let next = c.loss(&w, 0.01);
            assert!(next <= loss + 1e-15);
            loss = next;
        }
        assert_eq!(local_step(&w, c, 0.01, 0.1, 1.0), local_step(&w, &c.clone(), 0.01, 0.1, 1.0));
    }

    #[test]
    fn spread_keeps_last() {
        let v: Vec<u32> = (0..10).collect();
        assert_eq!(spread(&v, 3), vec![2, 5, 9]);
        assert_eq!(spread(&v, 20), v);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn experiment_runs_and_is_deterministic() {
        let cfg = small_config();
        let a = run_experiment_full(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        let flat: Vec<RoundRecord> = a.runs.iter().flat_map(|r| r.records.clone()).collect();
        assert_eq!(flat.len(), 5 * 2 * 5);
        assert_eq!(format!("{flat:?}"), format!("{b:?}"));
        for run in &a.runs {
            assert_eq!(run.records[0].round, 0);
            assert_eq!(run.last().iteration, 20);
            if run.mechanism == MechanismKind::Noiseless {
                assert!(run.last().accuracy > 0.6, "{}", run.last().accuracy);
                assert_eq!(run.last().mean_ber, 0.0);
            }
            if run.mechanism == MechanismKind::ChannelNativeBitflip {
                assert!(run.records[1..].iter().all(|r| r.mean_ber > 0.0));
            }
            if run.mechanism == MechanismKind::GaussianDropPackets {
                assert!(run.records[1..].iter().all(|r| r.packets_total == 4));
            }
        }
        for s in &a.seeds {
            assert!(s.clip > 0.0 && s.nu2 > 0.0 && s.nu_inf > 0.0);
            assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.kappa_bar.iter().all(|k| *k > 0.0));
        }
    }

    #[test]
    fn privacy_plumbing_holds_per_upload() {
        let cfg = small_config();
        let setup = prepare_seed(&cfg, 5).unwrap();
        let budget = PrivacyBudget::new(2.0, 10.0, cfg.schedule.rounds()).unwrap();
        let m = ModelVector::new(setup.clients[0].checkpoints[0].as_slice().to_vec());
        for (n, c) in setup.clients.iter().enumerate() {
            let p = required_ber(&budget, c.kappa.kappa_bar).unwrap();
            for k in 1..=20u64 {
                let draw = RngHandle::new(5, k, n as u64, Stage::ChannelDraw);
                let p_c = draw_channel_ber(&cfg.channel, 0.02, &draw).unwrap();
                let ctx = UploadContext {
                    kind: MechanismKind::ChannelNativeBitflip,
                    nu_inf: setup.nu_inf,
                    nu2: setup.nu2,
                    p_required: p,
                    p_channel: p_c,
                    sigma: 0.0,
                    previous_global: &m,
                    seed: 5,
                    round: k,
                    client: n as u64,
                };
                let out = upload(&m, &ctx).unwrap();
                assert!(out.end_to_end_ber >= p.value() * (1.0 - 1e-12));
                if p_c.value() <= p.value() {
                    assert!((out.end_to_end_ber - p.value()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn channel_draws() {
        let mut ch = small_config().channel;
        let h = RngHandle::new(0, 1, 2, Stage::ChannelDraw);
        let p = draw_channel_ber(&ch, 0.02, &h).unwrap().value();
        assert!((0.0..=0.02).contains(&p));
        assert_eq!(draw_channel_ber(&ch, 0.0, &h).unwrap().value(), 0.0);
        ch.model = ChannelModel::Awgn;
        let p = draw_channel_ber(&ch, 0.02, &h).unwrap().value();
        assert!((p - 0.5 * libm::erfc(10f64.sqrt())).abs() < 1e-18);
        ch.model = ChannelModel::Rayleigh;
        let mean: f64 = (0..4000)
            .map(|i| draw_channel_ber(&ch, 0.02, &RngHandle::new(0, i, 0, Stage::ChannelDraw)).unwrap().value())
            .sum::<f64>()
            / 4000.0;
        // BPSK over Rayleigh: (1 - sqrt(g / (1 + g))) / 2
        let exact = 0.5 * (1.0 - (10.0f64 / 11.0).sqrt());
        assert!((mean - exact).abs() < 0.1 * exact, "{mean} vs {exact}");
    }
}
