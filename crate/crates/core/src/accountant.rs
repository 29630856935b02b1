//! Privacy accounting: sensitivity, bit-level distance, the expected
//! bit-level distance estimator, the required end-to-end BER, and the
//! conversions used by the Gaussian baseline.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binfloat::{pow2, BitStream, FixedPointFormat, ModelVector, FRACTION_BITS};
use crate::error::{invalid, Error, Result};
use crate::perturb::{FlipProbability, RngHandle};

/// Redraws allowed for an out-of-range perturbed model before the
/// perturbation is projected back into range.
pub const MAX_REDRAWS: usize = 100;

/// `(lambda, epsilon)` Rényi budget spread over `rounds` uploads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub lambda: f64,
    pub epsilon: f64,
    pub rounds: u32,
}

impl PrivacyBudget {
    pub fn new(lambda: f64, epsilon: f64, rounds: u32) -> Result<Self> {
        let b = Self {
            lambda,
            epsilon,
            rounds,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 1.0) || !self.lambda.is_finite() {
            return Err(invalid("lambda", self.lambda, "must be finite and > 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", self.epsilon, "must be > 0"));
        }
        if self.rounds == 0 {
            return Err(invalid("rounds", 0.0, "must be >= 1"));
        }
        Ok(())
    }

    /// Per-round budget `epsilon / K`.
    pub fn per_round(&self) -> f64 {
        self.epsilon / self.rounds as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityParams {
    pub eta: f64,
    pub clip: f64,
    pub dataset_size: usize,
}

/// `2 eta G / |D|`: the largest l2 change of one local step when one record
/// is added.
pub fn classical_sensitivity(p: &SensitivityParams) -> Result<f64> {
    if !(p.eta > 0.0) {
        return Err(invalid("eta", p.eta, "must be positive"));
    }
    if !(p.clip > 0.0) {
        return Err(invalid("clip", p.clip, "must be positive"));
    }
    if p.dataset_size == 0 {
        return Err(invalid("dataset_size", 0.0, "must be positive"));
    }
    Ok(2.0 * p.eta * p.clip / p.dataset_size as f64)
}

/// Weighted Hamming distance, weight `2^(j-23)` on fraction bit `j`.
pub fn bit_distance(u: &BitStream, v: &BitStream) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    Ok(group_distance(u.groups(), v.groups()))
}

fn group_distance(a: &[u32], b: &[u32]) -> f64 {
    // Within one parameter the weighted sum of differing bits is the xor
    // value scaled by 2^-23.
    let total: u64 = a.iter().zip(b).map(|(x, y)| (x ^ y) as u64).sum();
    total as f64 * pow2(-(FRACTION_BITS as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub kappa_bar: f64,
    /// Number of (model, perturbation) pairs averaged.
    pub samples_used: usize,
    pub model_dim: usize,
}

/// Monte-Carlo estimate of the expected bit-level distance.
///
/// Draws `num_perturbations` vectors uniformly on the sphere of radius
/// `sensitivity` and averages the bit-level distance between the encodings of
/// `w` and `w + x` over every (sample, draw) pair. A pair whose sum leaves the
/// fixed-point range is redrawn up to [`MAX_REDRAWS`] times, after which the
/// sum is clamped into range. Deterministic for a given handle regardless of
/// thread count.
pub fn estimate_kappa_bar(
    model_samples: &[ModelVector],
    sensitivity: f64,
    num_perturbations: usize,
    nu_inf: f32,
    rng: &RngHandle,
) -> Result<KappaEstimate> {
    if !(sensitivity >= 0.0) || !sensitivity.is_finite() {
        return Err(invalid("sensitivity", sensitivity, "must be finite and >= 0"));
    }
    if num_perturbations == 0 {
        return Err(invalid("num_perturbations", 0.0, "must be positive"));
    }
    let Some(first) = model_samples.first() else {
        return Err(invalid("model_samples", 0.0, "at least one sample required"));
    };
    let dim = first.len();
    if dim == 0 {
        return Err(invalid("model_dim", 0.0, "must be positive"));
    }
    let format = FixedPointFormat::from_nu_inf(nu_inf)?;
    let mut encoded = Vec::with_capacity(model_samples.len());
    for sample in model_samples {
        if sample.len() != dim {
            return Err(Error::LengthMismatch {
                left: dim,
                right: sample.len(),
            });
        }
        encoded.push(crate::binfloat::fp_to_fx(sample, nu_inf)?.fractions);
    }
    let limit = format.limit();

    let per_draw: Vec<f64> = (0..num_perturbations as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng.substream(j);
            let mut x = vec![0.0f64; dim];
            let mut perturbed = vec![0u32; dim];
            let mut sum = 0.0;
            for (sample, base) in model_samples.iter().zip(&encoded) {
                let w = sample.as_slice();
                let mut in_range = false;
                for _ in 0..=MAX_REDRAWS {
                    sphere_draw(&mut rng, sensitivity, &mut x);
                    if w.iter().zip(&x).all(|(&a, &d)| (a as f64 + d).abs() <= limit) {
                        in_range = true;
                        break;
                    }
                }
                for m in 0..dim {
                    let mut y = w[m] as f64 + x[m];
                    if !in_range {
                        y = y.clamp(-limit, limit);
                    }
                    perturbed[m] = format.quantize_f64(y).expect("value clamped into range");
                }
                sum += group_distance(base, &perturbed);
            }
            sum
        })
        .collect();

    let pairs = num_perturbations * model_samples.len();
    let kappa_bar = per_draw.iter().sum::<f64>() / pairs as f64;
    Ok(KappaEstimate {
        kappa_bar,
        samples_used: pairs,
        model_dim: dim,
    })
}

/// Fills `x` with a uniform draw from the sphere of the given radius.
fn sphere_draw<R: Rng + ?Sized>(rng: &mut R, radius: f64, x: &mut [f64]) {
    loop {
        x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            x.iter_mut().for_each(|v| *v *= radius / norm);
            return;
        }
    }
}

/// Per-round Rényi divergence bound of the bit-flipping mechanism at
/// end-to-end BER `p`: `kappa / (lambda - 1) * (((1-p)/p)^(lambda-1) - 1)`.
pub fn per_round_divergence_bound(kappa_bar: f64, lambda: f64, p: f64) -> f64 {
    let odds = (1.0 - p) / p;
    kappa_bar / (lambda - 1.0) * ((lambda - 1.0) * odds.ln()).exp_m1()
}

/// Smallest end-to-end BER for which the per-round divergence bound equals
/// `epsilon / K`:
/// `p = 1 / (1 + (1 + (lambda-1) epsilon / (K kappa))^(1/(lambda-1)))`.
///
/// This is the exact inversion of the bound. Always below 0.5.
pub fn required_ber(budget: &PrivacyBudget, kappa_bar: f64) -> Result<FlipProbability> {
    budget.validate()?;
    if !(kappa_bar > 0.0) || !kappa_bar.is_finite() {
        return Err(invalid("kappa_bar", kappa_bar, "must be finite and > 0"));
    }
    let l1 = budget.lambda - 1.0;
    let r = l1 * budget.per_round() / kappa_bar;
    let odds = (r.ln_1p() / l1).exp();
    let p = 1.0 / (1.0 + odds);
    assert!(p < 0.5, "required BER {p} must lie below 0.5");
    FlipProbability::new(p)
}

/// Common closed form
/// `1 / (1 + ((lambda-1) epsilon / (K kappa))^(1/(lambda-1)))`.
///
/// It drops the `1 +` inside the root, so it over-provisions noise relative
/// to [`required_ber`] and reaches 0.5 once `(lambda-1) epsilon <= K kappa`.
pub fn required_ber_closed_form(budget: &PrivacyBudget, kappa_bar: f64) -> Result<f64> {
    budget.validate()?;
    if !(kappa_bar > 0.0) || !kappa_bar.is_finite() {
        return Err(invalid("kappa_bar", kappa_bar, "must be finite and > 0"));
    }
    let l1 = budget.lambda - 1.0;
    let r = l1 * budget.per_round() / kappa_bar;
    Ok(1.0 / (1.0 + (r.ln() / l1).exp()))
}

/// `(lambda, epsilon)`-RDP to `(epsilon', delta)`-DP:
/// `delta = e^((lambda-1)(epsilon - epsilon')) / (lambda-1) * (1 - 1/lambda)^lambda`.
pub fn renyi_to_dp_delta(lambda: f64, epsilon: f64, epsilon_prime: f64) -> Result<f64> {
    if !(lambda > 1.0) {
        return Err(invalid("lambda", lambda, "must be > 1"));
    }
    let l1 = lambda - 1.0;
    Ok((l1 * (epsilon - epsilon_prime)).exp() / l1 * (1.0 - 1.0 / lambda).powf(lambda))
}

/// Gaussian-mechanism noise scale `Delta K sqrt(2 ln(1.25/delta)) / epsilon'`.
pub fn gaussian_sigma(sensitivity: f64, rounds: u32, delta: f64, epsilon_prime: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.25) {
        return Err(invalid("delta", delta, "must lie in (0, 1.25)"));
    }
    if !(epsilon_prime > 0.0) {
        return Err(invalid("epsilon_prime", epsilon_prime, "must be > 0"));
    }
    if !(sensitivity >= 0.0) {
        return Err(invalid("sensitivity", sensitivity, "must be >= 0"));
    }
    Ok(sensitivity * rounds as f64 * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon_prime)
}

#[cfg(test)]
mod tests {
    use super::{
        bit_distance, classical_sensitivity, estimate_kappa_bar, gaussian_sigma,
        per_round_divergence_bound, renyi_to_dp_delta, required_ber, required_ber_closed_form,
        PrivacyBudget, SensitivityParams,
    };
    use crate::binfloat::{BitStream, FixedPointFormat, ModelVector};
    use crate::error::Error;
    use crate::perturb::RngHandle;
    use crate::binfloat::{encode_model, FRACTION_MASK};
    use crate::perturb::Stage;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};

    fn budget(lambda: f64, epsilon: f64, rounds: u32) -> PrivacyBudget {
        PrivacyBudget::new(lambda, epsilon, rounds).unwrap()
    }

    fn samples(dim: usize, count: usize, spread: f32, seed: u64) -> Vec<ModelVector> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| ModelVector::new((0..dim).map(|_| rng.random_range(-spread..spread)).collect()))
            .collect()
    }

    #[test]
    fn sensitivity_examples() {
        let s = |eta, size| {
            classical_sensitivity(&SensitivityParams { eta, clip: 1.0, dataset_size: size }).unwrap()
        };
        assert!((s(0.1, 2000) - 1e-4).abs() < 1e-18);
        assert!((s(1.0, 2000) - 1e-3).abs() < 1e-18);
        assert_eq!(s(0.1, 4000), s(0.1, 2000) / 2.0);
        assert!(classical_sensitivity(&SensitivityParams { eta: 0.1, clip: 1.0, dataset_size: 0 }).is_err());
    }

    #[test]
    fn bit_distance_examples() {
        let u = BitStream::from_groups(vec![0x1234, 7]);
        assert_eq!(bit_distance(&u, &u).unwrap(), 0.0);
        let a = BitStream::from_groups(vec![0]);
        assert_eq!(bit_distance(&a, &BitStream::from_groups(vec![1 << 22])).unwrap(), 0.5);
        assert_eq!(
            bit_distance(&a, &BitStream::from_groups(vec![FRACTION_MASK])).unwrap(),
            1.0 - 2f64.powi(-23)
        );
        assert!(matches!(bit_distance(&a, &u), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn required_ber_examples() {
        let p = required_ber(&budget(2.0, 10.0, 50), 0.02).unwrap().value();
        assert!((p - 1.0 / 12.0).abs() < 1e-15);
        let closed = required_ber_closed_form(&budget(2.0, 10.0, 50), 0.02).unwrap();
        assert!((closed - 1.0 / 11.0).abs() < 1e-15);
        assert!(closed > p);
        assert!(required_ber(&budget(2.0, 1e6, 50), 0.02).unwrap().value() < 1e-6);
        let k50 = required_ber(&budget(2.0, 10.0, 50), 0.02).unwrap();
        let k100 = required_ber(&budget(2.0, 10.0, 100), 0.02).unwrap();
        assert!(k100 > k50);
        assert!(required_ber(&budget(2.0, 10.0, 50), 0.0).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0, 1).is_err());
        assert!(PrivacyBudget::new(2.0, 0.0, 1).is_err());
        assert!(PrivacyBudget::new(2.0, 1.0, 0).is_err());
        // tiny budgets stay below 0.5
        assert!(required_ber(&budget(5.0, 1e-6, 1000), 10.0).unwrap().value() < 0.5);
    }

    #[test]
    fn conversion_examples() {
        assert!((renyi_to_dp_delta(2.0, 10.0, 10.0).unwrap() - 0.25).abs() < 1e-15);
        let d = renyi_to_dp_delta(2.0, 10.0, 9.0).unwrap();
        assert!((d - std::f64::consts::E * 0.25).abs() < 1e-14);
        assert!((d - 0.6796).abs() < 1e-4);
        assert!(renyi_to_dp_delta(2.0, 10.0, 9.5).unwrap() < d);
        let s = gaussian_sigma(1e-4, 50, 0.25, 10.0).unwrap();
        assert!((s - 1e-4 * 50.0 * (2.0 * 5f64.ln()).sqrt() / 10.0).abs() < 1e-18);
        assert!((s - 8.97e-4).abs() < 1e-6);
        assert_eq!(gaussian_sigma(0.0, 50, 0.25, 10.0).unwrap(), 0.0);
        assert!((gaussian_sigma(1e-4, 50, 0.25, 5.0).unwrap() - 2.0 * s).abs() < 1e-18);
        assert!(gaussian_sigma(1e-4, 50, 1.25, 10.0).is_err());
        assert!(gaussian_sigma(1e-4, 50, 0.25, 0.0).is_err());
    }

    #[test]
    fn kappa_zero_sensitivity() {
        let s = samples(16, 3, 0.4, 1);
        let est = estimate_kappa_bar(&s, 0.0, 50, 0.5, &RngHandle::new(1, 0, 0, Stage::Kappa)).unwrap();
        assert_eq!(est.kappa_bar, 0.0);
        assert_eq!(est.samples_used, 150);
        assert_eq!(est.model_dim, 16);
    }

    #[test]
    fn kappa_deterministic_and_bounded() {
        let s = samples(32, 4, 0.4, 2);
        let h = RngHandle::new(9, 0, 3, Stage::Kappa);
        let a = estimate_kappa_bar(&s, 1e-3, 200, 0.5, &h).unwrap();
        let b = estimate_kappa_bar(&s, 1e-3, 200, 0.5, &h).unwrap();
        assert_eq!(a, b);
        assert!(a.kappa_bar > 0.0 && a.kappa_bar <= 32.0 * (1.0 - 2f64.powi(-23)));
    }

    #[test]
    fn kappa_projects_boundary_samples() {
        // nu_inf = 0.25 gives the clip range [-0.5, 0.5]
        let outside = vec![ModelVector::new(vec![0.6; 8])];
        let est = estimate_kappa_bar(&outside, 1e-2, 20, 0.25, &RngHandle::new(0, 0, 0, Stage::Kappa));
        assert!(matches!(est, Err(Error::OutOfRange { .. })));
        // every element on the boundary: nearly all draws leave the range,
        // so the projection path runs.
        let edge = vec![ModelVector::new(vec![0.5; 64])];
        let est = estimate_kappa_bar(&edge, 1e-2, 20, 0.25, &RngHandle::new(0, 0, 0, Stage::Kappa)).unwrap();
        assert!(est.kappa_bar.is_finite() && est.kappa_bar > 0.0);
    }

    #[test]
    fn kappa_dominates_l1_of_decimal_change() {
        let s = samples(8, 1, 0.4, 3);
        let format = FixedPointFormat::from_nu_inf(0.5).unwrap();
        let u = encode_model(&s[0], 0.5).unwrap();
        let shifted: Vec<f32> = s[0].as_slice().iter().map(|v| v + 0.013).collect();
        let v = encode_model(&ModelVector::new(shifted), 0.5).unwrap();
        let l1: f64 = u
            .groups()
            .iter()
            .zip(v.groups())
            .map(|(&a, &b)| (a as f64 - b as f64).abs() * 2f64.powi(-23))
            .sum();
        assert!(bit_distance(&u, &v).unwrap() >= l1);
        assert!(format.limit() > 0.0);
    }

    proptest! {
        #[test]
        fn required_ber_inverts_bound(
            lambda in prop::sample::select(vec![1.5, 2.0, 3.0, 5.0]),
            epsilon in 0.05..50.0f64,
            rounds in 1u32..500,
            kappa in 1e-3..5.0f64,
        ) {
            let b = budget(lambda, epsilon, rounds);
            let p = required_ber(&b, kappa).unwrap().value();
            prop_assert!(p > 0.0 && p < 0.5);
            let back = per_round_divergence_bound(kappa, lambda, p);
            prop_assert!((back - b.per_round()).abs() <= 1e-10 * b.per_round().max(1.0));
            let more = required_ber(&budget(lambda, epsilon * 1.5, rounds), kappa).unwrap().value();
            prop_assert!(more < p);
            let larger_kappa = required_ber(&b, kappa * 1.5).unwrap().value();
            prop_assert!(larger_kappa > p);
        }

        #[test]
        fn bit_distance_is_symmetric(a in prop::collection::vec(any::<u32>(), 1..10), seed in any::<u64>()) {
            let u = BitStream::from_groups(a.clone());
            let v = BitStream::from_groups(a.iter().map(|x| x.rotate_left((seed % 31) as u32)).collect());
            prop_assert_eq!(bit_distance(&u, &v).unwrap(), bit_distance(&v, &u).unwrap());
        }
    }
}
