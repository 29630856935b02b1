//! Numeric verification batteries behind `chanflip verify`.

use chanflip::accountant::{required_ber, required_ber_closed_form, PrivacyBudget};
use chanflip::analysis::{
    bias_moments, flipped_mean, flipped_variance, moment_inequality_sides, per_bit_divergence_bound,
    renyi_divergence_oracle, x_bf_bound, x_bf_bound_jensen,
};
use chanflip::binfloat::{encode_model, fp_to_fx, recover_model, FixedPointFormat, ModelVector, WireFrame};
use chanflip::flsim::{
    prepare_seed, ArmConfig, ChannelModel, ChannelSection, ExperimentConfig, MechanismKind, PrivacyConfig,
    ScheduleConfig, TaskConfig,
};
use chanflip::perturb::{flip_bits_in_place, FlipProbability, Modulation, RngHandle, Stage};
use clap::ValueEnum;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    #[value(name = "lemma1")]
    Lemma1,
    #[value(name = "lemma2")]
    Lemma2,
    #[value(name = "theorem1")]
    Theorem1,
    #[value(name = "appendixB", alias = "appendixb")]
    AppendixB,
    #[value(name = "roundtrip")]
    Roundtrip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        pass,
        detail,
    }
}

fn fp(p: f64) -> FlipProbability {
    FlipProbability::new(p).expect("probability literal in range")
}

fn mc_rng(tag: u64) -> impl Rng {
    RngHandle::new(0x7e51, tag, 0, Stage::MonteCarlo).rng()
}

pub fn run(suite: Suite) -> Vec<Check> {
    match suite {
        Suite::Lemma1 => lemma1(),
        Suite::Lemma2 => lemma2(),
        Suite::Theorem1 => theorem1(),
        Suite::AppendixB => appendix_b(),
        Suite::Roundtrip => roundtrip(),
    }
}

/// Flips each fraction bit of `a` with probability `p`, `trials` times.
/// Returns (mean, variance, se of mean, se of variance).
fn mc_fraction_flips(a: f32, p: f64, trials: usize, tag: u64) -> (f64, f64, f64, f64) {
    let mut rng = mc_rng(tag);
    let base = a.to_bits();
    let values: Vec<f64> = (0..trials)
        .map(|_| {
            let mut w = base;
            chanflip::perturb::for_each_flip(23, p, &mut rng, |j| w ^= 1 << j);
            f32::from_bits(w) as f64
        })
        .collect();
    let n = trials as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    (mean, m2 * n / (n - 1.0), (m2 / n).sqrt(), ((m4 - m2 * m2) / n).sqrt())
}

fn lemma1() -> Vec<Check> {
    let mut out = Vec::new();
    let trials = 200_000;
    for (i, p) in [0.05, 0.1, 0.3].into_iter().enumerate() {
        for (k, a) in [1.5f32, -0.3, 6.5, 0.01].into_iter().enumerate() {
            let (mean, var, se_m, se_v) = mc_fraction_flips(a, p, trials, (i * 10 + k) as u64);
            let em = flipped_mean(a, fp(p)).expect("normal value");
            let ev = flipped_variance(a, fp(p)).expect("normal value");
            let zm = (mean - em).abs() / se_m;
            let zv = (var - ev).abs() / se_v;
            out.push(check(
                &format!("a={a} p={p}"),
                zm <= 4.0 && zv <= 4.0,
                format!("mean {mean:.6e} vs {em:.6e} ({zm:.2} sd), variance {var:.4e} vs {ev:.4e} ({zv:.2} sd)"),
            ));
        }
    }
    let mut shape = true;
    for p in [0.05, 0.1, 0.3] {
        for base in [0.25f32, 1.0, 8.0] {
            let pts: Vec<f32> = (0..8).map(|i| base * (1.0 + i as f32 / 8.0)).collect();
            let m: Vec<f64> = pts.iter().map(|&a| flipped_mean(a, fp(p)).expect("normal")).collect();
            let v: Vec<f64> = pts.iter().map(|&a| flipped_variance(a, fp(p)).expect("normal")).collect();
            let slope = (m[1] - m[0]) / (pts[1] - pts[0]) as f64;
            shape &= m
                .iter()
                .zip(&pts)
                .all(|(mi, &a)| (mi - m[0] - slope * (a - pts[0]) as f64).abs() <= 1e-12 * m[0].abs().max(1.0));
            shape &= v.iter().all(|x| *x == v[0]);
        }
    }
    out.push(check(
        "piecewise shape",
        shape,
        "mean linear and variance constant inside each exponent range".into(),
    ));
    out
}

fn lemma2() -> Vec<Check> {
    let mut out = Vec::new();
    // exact moments of a single upload against Monte Carlo
    let nu_inf = 0.5f32;
    let mut rng = mc_rng(200);
    let model = ModelVector::new((0..64).map(|_| (rng.random::<f32>() - 0.5) * 0.9).collect());
    let bits = encode_model(&model, nu_inf).expect("in range");
    for (i, p) in [0.02, 0.1, 0.3].into_iter().enumerate() {
        let reps = 4000;
        let mut rng = mc_rng(210 + i as u64);
        let samples: Vec<f64> = (0..reps)
            .map(|_| {
                let mut b = bits.clone();
                flip_bits_in_place(&mut b, fp(p), &mut rng);
                let rec = recover_model(&b, nu_inf).expect("valid stream");
                rec.sq_distance(&model)
            })
            .collect();
        let n = reps as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let exact = bias_moments(&model, fp(p), nu_inf).expect("in range").second_moment();
        let z = (mean - exact).abs() / (sd / n.sqrt());
        out.push(check(
            &format!("second moment p={p}"),
            z <= 4.0,
            format!("E||z||^2 MC {mean:.5e} vs exact {exact:.5e} ({z:.2} sd)"),
        ));
    }

    // aggregated bias of trained client models against both bounds
    let cfg = ExperimentConfig {
        task: TaskConfig {
            features: 31,
            clients: 6,
            samples_per_client: 400,
            data_seed: 42,
            separation: 1.0,
            label_skew: 0.6,
            regularization: 0.01,
            test_samples: 100,
        },
        schedule: ScheduleConfig {
            iterations: 100,
            local_steps: 10,
            learning_rate: 0.1,
            pretrain_iterations: None,
        },
        privacy: PrivacyConfig {
            lambda: 2.0,
            epsilon: 10.0,
            kappa_samples: 500,
            kappa_checkpoints: 5,
        },
        channel: ChannelSection {
            model: ChannelModel::FixedRange,
            p_c_max: 0.02,
            snr_db: 10.0,
            modulation: Modulation::Bpsk,
        },
        arms: vec![ArmConfig {
            name: "n".into(),
            mechanism: MechanismKind::Noiseless,
            epsilon: None,
            p_c_max: None,
        }],
        seeds: vec![0],
        output: None,
    };
    let setup = prepare_seed(&cfg, 0).expect("valid built-in config");
    let weights = setup.weights();
    let models: Vec<ModelVector> = setup.clients.iter().map(|c| c.checkpoints.last().expect("checkpoint").clone()).collect();
    let encoded: Vec<_> = models.iter().map(|m| encode_model(m, setup.nu_inf).expect("in range")).collect();
    for p in [0.02, 0.1] {
        let ps = vec![fp(p); weights.len()];
        let reps = 1000u64;
        let mut total = 0.0;
        for rep in 0..reps {
            let mut zg = vec![0.0f64; 32];
            for (n, bits) in encoded.iter().enumerate() {
                let mut b = bits.clone();
                flip_bits_in_place(&mut b, ps[n], &mut RngHandle::new(0x7e52, rep, n as u64, Stage::MonteCarlo).rng());
                let rec = recover_model(&b, setup.nu_inf).expect("valid stream");
                for (i, (x, w)) in rec.as_slice().iter().zip(models[n].as_slice()).enumerate() {
                    zg[i] += weights[n] * (*x as f64 - *w as f64);
                }
            }
            total += zg.iter().map(|v| v * v).sum::<f64>();
        }
        let empirical = total / reps as f64;
        let x_bf = x_bf_bound(&weights, &ps, 32, setup.nu2, setup.nu_inf).expect("valid");
        let jensen = x_bf_bound_jensen(&weights, &ps, 32, setup.nu2, setup.nu_inf).expect("valid");
        out.push(check(
            &format!("aggregated bound p={p}"),
            empirical <= x_bf,
            format!("E||z_G||^2 {empirical:.4e} vs x_bf {x_bf:.4e}"),
        ));
        out.push(check(
            &format!("aggregated bound with factor 4 p={p}"),
            empirical <= jensen,
            format!("E||z_G||^2 {empirical:.4e} vs {jensen:.4e}"),
        ));
    }
    out
}

fn theorem1() -> Vec<Check> {
    let mut rng = mc_rng(300);
    let mut worst: f64 = 0.0;
    let mut below_half = true;
    for _ in 0..200 {
        let lambda = 1.1 + rng.random::<f64>() * 8.9;
        let epsilon = 0.1 + rng.random::<f64>() * 19.9;
        let rounds = rng.random_range(1..=500u32);
        let kappa = 10f64.powf(-4.0 + 3.5 * rng.random::<f64>());
        let budget = PrivacyBudget::new(lambda, epsilon, rounds).expect("valid budget");
        let p = required_ber(&budget, kappa).expect("valid").value();
        below_half &= p < 0.5;
        let back = kappa / (lambda - 1.0) * (((1.0 - p) / p).powf(lambda - 1.0) - 1.0);
        let target = epsilon / rounds as f64;
        worst = worst.max((back - target).abs() / target);
    }
    let mut out = vec![
        check(
            "self-consistency",
            worst <= 1e-10,
            format!("200 random budgets, max relative error {worst:.2e}"),
        ),
        check("below one half", below_half, "p < 0.5 on every budget".into()),
    ];
    let budget = PrivacyBudget::new(2.0, 10.0, 50).expect("valid");
    let exact = required_ber(&budget, 0.02).expect("valid").value();
    let closed = required_ber_closed_form(&budget, 0.02).expect("valid");
    out.push(check(
        "spot value, exact inversion",
        (exact - 1.0 / 12.0).abs() <= 1e-12,
        format!("(2, 10, 50, 0.02) -> {exact:.15} (1/12)"),
    ));
    out.push(check(
        "spot value, closed form",
        (closed - 1.0 / 11.0).abs() <= 1e-12,
        format!("(2, 10, 50, 0.02) -> {closed:.15} (1/11)"),
    ));
    let ps: Vec<f64> = [1.0, 2.0, 5.0, 10.0, 20.0]
        .iter()
        .map(|&e| required_ber(&PrivacyBudget::new(2.0, e, 50).expect("valid"), 0.02).expect("valid").value())
        .collect();
    out.push(check(
        "monotone in epsilon",
        ps.windows(2).all(|w| w[1] < w[0]),
        format!("p at eps 1..20: {ps:.5?}"),
    ));
    out
}

fn appendix_b() -> Vec<Check> {
    let qs: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let ps: Vec<f64> = std::iter::once(0.01).chain((1..=9).map(|i| i as f64 * 0.05)).collect();
    let lambdas = [1.5, 2.0, 3.0, 5.0];
    let mut cells = 0;
    let mut bad = 0;
    for j in 0..=22u32 {
        for &q in &qs {
            for &p in &ps {
                for &l in &lambdas {
                    let d = renyi_divergence_oracle(j, q, p, l).expect("grid in range");
                    let b = per_bit_divergence_bound(j, q, p, l).expect("grid in range");
                    cells += 1;
                    if d > b * (1.0 + 1e-12) {
                        bad += 1;
                    }
                }
            }
        }
    }
    let mut ineq_bad = 0;
    let mut ineq_cells = 0;
    for &q in &qs {
        for &p in &ps {
            for &l in &lambdas {
                let (lhs, rhs) = moment_inequality_sides(q, p, l);
                ineq_cells += 1;
                if lhs > rhs * (1.0 + 1e-12) {
                    ineq_bad += 1;
                }
            }
        }
    }
    vec![
        check("oracle <= per-bit bound", bad == 0, format!("{cells} cells, {bad} violations")),
        check(
            "moment inequality",
            ineq_bad == 0,
            format!("{ineq_cells} cells, {ineq_bad} violations"),
        ),
    ]
}

fn roundtrip() -> Vec<Check> {
    let mut out = Vec::new();
    for (i, nu_inf) in [0.8f32, 3.0e-3, 150.0].into_iter().enumerate() {
        let format = FixedPointFormat::from_nu_inf(nu_inf).expect("normal");
        let limit = format.limit();
        let mut rng = mc_rng(400 + i as u64);
        let model = ModelVector::new(
            (0..100_000)
                .map(|_| ((rng.random::<f64>() * 2.0 - 1.0) * limit).clamp(-limit, limit) as f32)
                .collect(),
        );
        let fx = fp_to_fx(&model, nu_inf).expect("in range");
        let bytes = WireFrame::from_fixed_point(&fx).to_bytes();
        let frame = WireFrame::from_bytes(&bytes).expect("well-formed");
        let back = recover_model(&frame.bits, nu_inf).expect("valid");
        let worst = model
            .as_slice()
            .iter()
            .zip(back.as_slice())
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .fold(0.0, f64::max);
        out.push(check(
            &format!("nu_inf={nu_inf}"),
            worst <= format.step() && frame.shared_exponent == fx.shared_exponent,
            format!("100000 params through the wire format, max error {:.3} steps", worst / format.step()),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_suites_pass() {
        for suite in [Suite::Theorem1, Suite::AppendixB] {
            let checks = run(suite);
            assert!(!checks.is_empty());
            assert!(checks.iter().all(|c| c.pass), "{checks:?}");
        }
    }
}
