//! Closed-form statistics of bit-flipped values, bias bounds, the
//! convergence bound and an exact Rényi-divergence oracle for the per-bit
//! privacy analysis.

use serde::{Deserialize, Serialize};

use crate::binfloat::{decompose, pow2, FixedPointFormat, ModelVector};
use crate::error::{invalid, Error, Result};
use crate::perturb::FlipProbability;

/// `(1 - 4^-23) / 3`, the sum of `4^-i` for `i = 1..=23`.
pub const FRACTION_ENERGY: f64 = (1.0 - 1.0 / 70_368_744_177_664.0) / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipStats {
    pub mean: f64,
    pub variance: f64,
}

/// Mean of a binary32 value after each of its fraction bits flips with
/// probability `p`:
/// `(1 - 2p) a + (-1)^s 2^(exp-127) (2p + p (1 - 2^-23))`.
pub fn flipped_mean(a: f32, p: FlipProbability) -> Result<f64> {
    let parts = decompose(a)?;
    let p = p.value();
    Ok((1.0 - 2.0 * p) * a as f64 + parts.signed_scale() * (2.0 * p + p * (1.0 - pow2(-23))))
}

/// Variance of the same: `(1 - 4^-23)/3 * p (1-p) * 2^(2 exp - 254)`.
pub fn flipped_variance(a: f32, p: FlipProbability) -> Result<f64> {
    let parts = decompose(a)?;
    let p = p.value();
    Ok(FRACTION_ENERGY * p * (1.0 - p) * pow2(2 * parts.exponent as i32 - 254))
}

pub fn flipped_stats(a: f32, p: FlipProbability) -> Result<FlipStats> {
    Ok(FlipStats {
        mean: flipped_mean(a, p)?,
        variance: flipped_variance(a, p)?,
    })
}

/// Moments of the local bias `z = recovered - w` for one upload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasMoments {
    /// Exact per-element mean, including the grid rounding of `w`.
    pub mean: Vec<f64>,
    /// Per-element variance (identical across elements).
    pub variance: f64,
}

impl BiasMoments {
    /// `E ||z - E z||^2`.
    pub fn total_variance(&self) -> f64 {
        self.variance * self.mean.len() as f64
    }

    /// `E ||z||^2`.
    pub fn second_moment(&self) -> f64 {
        self.total_variance() + self.mean.iter().map(|m| m * m).sum::<f64>()
    }
}

/// Mean and variance of `z` when the encoded model crosses a channel with
/// end-to-end BER `p`.
///
/// With `w_q` the grid value of `w`, `s` the grid step and `e` the exponent
/// field of `nu_inf`: `E z = -2p w_q - p s + (w_q - w)`, approximately
/// `-2p w`, and `Var z_m = (1 - 4^-23)/3 * p(1-p) * 2^(2e - 250)`.
pub fn bias_moments(model: &ModelVector, p: FlipProbability, nu_inf: f32) -> Result<BiasMoments> {
    let format = FixedPointFormat::from_nu_inf(nu_inf)?;
    let p = p.value();
    let step = format.step();
    let mean = model
        .as_slice()
        .iter()
        .enumerate()
        .map(|(index, &w)| {
            let f = format.quantize(w).ok_or(Error::OutOfRange {
                index,
                value: w,
                limit: format.limit(),
            })?;
            let wq = format.dequantize(f) as f64;
            Ok(-2.0 * p * wq - p * step + (wq - w as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BiasMoments {
        mean,
        variance: element_variance(p, format),
    })
}

fn element_variance(p: f64, format: FixedPointFormat) -> f64 {
    FRACTION_ENERGY * p * (1.0 - p) * pow2(2 * format.nu_exponent() as i32 - 250)
}

fn check_weights(weights: &[f64], other: usize) -> Result<()> {
    if weights.len() != other {
        return Err(Error::LengthMismatch {
            left: weights.len(),
            right: other,
        });
    }
    if weights.iter().any(|&q| !(q >= 0.0)) {
        return Err(invalid("weights", f64::NAN, "must be non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid("weights", total, "must sum to 1"));
    }
    Ok(())
}

fn x_bf_with_mean_factor(
    weights: &[f64],
    p: &[FlipProbability],
    m: usize,
    nu2: f64,
    nu_inf: f32,
    mean_factor: f64,
) -> Result<f64> {
    check_weights(weights, p.len())?;
    let format = FixedPointFormat::from_nu_inf(nu_inf)?;
    let mut variance = 0.0;
    let mut mean = 0.0;
    for (&q, p) in weights.iter().zip(p) {
        let p = p.value();
        variance += q * q * element_variance(p, format) * m as f64;
        mean += q * p * p;
    }
    Ok(variance + mean_factor * mean * nu2 * nu2)
}

/// Upper bound on `E ||z_G||^2`:
/// `sum q^2 p(1-p) (1-4^-23) M / 3 * 2^(2e-250) + sum q p^2 nu2^2`.
///
/// The second term is a quarter of what `E z ~ -2p w` yields after Jensen,
/// so the bound only holds while `||sum q p w|| <= nu2 / 2`-ish; see
/// [`x_bf_bound_jensen`].
pub fn x_bf_bound(weights: &[f64], p: &[FlipProbability], m: usize, nu2: f64, nu_inf: f32) -> Result<f64> {
    x_bf_with_mean_factor(weights, p, m, nu2, nu_inf, 1.0)
}

/// [`x_bf_bound`] with the mean term `sum q (2 p nu2)^2` that follows from
/// `E z ~ -2p w` and `||w||_2 <= nu2`. Ignores the `O(p s)` grid terms.
pub fn x_bf_bound_jensen(weights: &[f64], p: &[FlipProbability], m: usize, nu2: f64, nu_inf: f32) -> Result<f64> {
    x_bf_with_mean_factor(weights, p, m, nu2, nu_inf, 4.0)
}

/// Inputs of the Gaussian-mechanism bias bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBiasParams {
    pub eta: f64,
    pub clip: f64,
    pub rounds: u32,
    pub delta: f64,
    pub epsilon: f64,
}

/// `sum q^2 M (2 eta G K)^2 * 2 ln(1.25/delta) / (|D_n|^2 eps^2)`.
pub fn x_gauss_bound(weights: &[f64], dataset_sizes: &[usize], m: usize, g: &GaussianBiasParams) -> Result<f64> {
    check_weights(weights, dataset_sizes.len())?;
    if !(g.delta > 0.0 && g.delta <= 1.25) {
        return Err(invalid("delta", g.delta, "must lie in (0, 1.25]"));
    }
    if !(g.epsilon > 0.0) {
        return Err(invalid("epsilon", g.epsilon, "must be > 0"));
    }
    let scale = (2.0 * g.eta * g.clip * g.rounds as f64).powi(2) * 2.0 * (1.25 / g.delta).ln()
        / (g.epsilon * g.epsilon);
    let mut total = 0.0;
    for (&q, &d) in weights.iter().zip(dataset_sizes) {
        if d == 0 {
            return Err(invalid("dataset_size", 0.0, "must be positive"));
        }
        total += q * q * m as f64 * scale / (d as f64 * d as f64);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasBound {
    pub x_bf: f64,
    pub x_gauss: f64,
}

/// Constants of the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceParams {
    /// Strong convexity.
    pub mu: f64,
    /// Smoothness.
    pub alpha: f64,
    /// Heterogeneity `F* - sum q F_n*`.
    pub gamma_het: f64,
    pub eta: f64,
    /// Total iterations `T`.
    pub iterations: u32,
    /// Local iterations per round `E`.
    pub local_steps: u32,
    pub p_max: f64,
    pub clip: f64,
    pub nu2: f64,
    pub nu_inf: f64,
    /// `||w_0 - w*||^2`.
    pub initial_gap: f64,
}

impl ConvergenceParams {
    pub fn rounds(&self) -> u32 {
        self.iterations / self.local_steps
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu <= self.alpha) {
            return Err(invalid("mu", self.mu, "need 0 < mu <= alpha"));
        }
        let em = self.eta * self.mu;
        if !(em > 0.0 && em < 1.0) {
            return Err(invalid("eta", self.eta, "need 0 < eta * mu < 1"));
        }
        if self.local_steps == 0 || !self.iterations.is_multiple_of(self.local_steps) {
            return Err(invalid("iterations", self.iterations as f64, "must be a positive multiple of local_steps"));
        }
        if !(0.0..=0.5).contains(&self.p_max) {
            return Err(Error::InvalidProbability(self.p_max));
        }
        if !(self.gamma_het >= 0.0) || !(self.clip >= 0.0) || !(self.initial_gap >= 0.0) {
            return Err(invalid("gamma_het/clip/initial_gap", f64::NAN, "must be non-negative"));
        }
        Ok(())
    }

    /// The same constants truncated to the first `rounds` aggregations.
    pub fn at_round(&self, rounds: u32) -> Self {
        Self {
            iterations: rounds * self.local_steps,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceBound {
    pub value: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub zeta3: f64,
    /// `6 alpha Gamma + 8 (E-1)^2 G^2`.
    pub b: f64,
    /// `(1 + sqrt(p_max)) (1 - eta mu)^E > 1`: the bound grows with K.
    pub divergent: bool,
}

/// Bound on `E ||w_K - w*||^2` after `K` rounds:
/// `zeta1 gap + zeta2 eta^2 B + zeta3 X / sqrt(p_max)`.
///
/// The third term is taken as 0 when `p_max = 0`.
pub fn convergence_bound(cp: &ConvergenceParams, x_bf: f64) -> Result<ConvergenceBound> {
    cp.validate()?;
    let k = cp.rounds() as f64;
    let e = cp.local_steps as f64;
    let em = cp.eta * cp.mu;
    let decay = 1.0 - em;
    let sp = cp.p_max.sqrt();
    let r = decay.powf(e) * (1.0 + sp);
    // sum_{i<K} r^i, written so r = 1 stays finite
    let ratio = if r == 1.0 { k } else { (k * r.ln()).exp_m1() / (r - 1.0) };
    let zeta1 = (1.0 + sp).powf(k) * decay.powf(cp.iterations as f64);
    let zeta2 = ratio * (1.0 + sp) * -(e * (-em).ln_1p()).exp_m1() / em;
    let zeta3 = ratio * (1.0 + sp);
    let b = 6.0 * cp.alpha * cp.gamma_het + 8.0 * (e - 1.0).powi(2) * cp.clip * cp.clip;
    let third = if cp.p_max > 0.0 { zeta3 * x_bf / sp } else { 0.0 };
    Ok(ConvergenceBound {
        value: zeta1 * cp.initial_gap + zeta2 * cp.eta * cp.eta * b + third,
        zeta1,
        zeta2,
        zeta3,
        b,
        divergent: r > 1.0,
    })
}

/// Closed form of the bound without flipping noise:
/// `(1 - eta mu)^T gap + eta^2 B (1 - (1 - eta mu)^T) / (eta mu)`.
pub fn noiseless_bound(cp: &ConvergenceParams) -> Result<f64> {
    cp.validate()?;
    let em = cp.eta * cp.mu;
    let t = cp.iterations as f64;
    let b = 6.0 * cp.alpha * cp.gamma_het + 8.0 * (cp.local_steps as f64 - 1.0).powi(2) * cp.clip * cp.clip;
    let decay_t = (1.0 - em).powf(t);
    Ok(decay_t * cp.initial_gap + cp.eta * cp.eta * b * (1.0 - decay_t) / em)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AtomLabel {
    /// Output lands in the interval of the auxiliary stream.
    Xb,
    /// Output lands in the interval of the neighbouring stream.
    Xu,
    /// Any other interval.
    Other,
}

/// A distribution over the three intervals distinguished by one fraction bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomDistribution {
    pub atoms: Vec<(AtomLabel, f64)>,
}

impl AtomDistribution {
    fn three(xb: f64, xu: f64, other: f64) -> Self {
        Self {
            atoms: vec![(AtomLabel::Xb, xb), (AtomLabel::Xu, xu), (AtomLabel::Other, other)],
        }
    }

    /// Output of the neighbouring stream: `{Xb: w p, Xu: w (1-p), other: 1 - w}`
    /// with `w = 2^(j-23)`.
    pub fn neighbour(j: u32, p: f64) -> Self {
        let w = pow2(j as i32 - 23);
        Self::three(w * p, w * (1.0 - p), 1.0 - w)
    }

    /// Output of the auxiliary stream (bit `j` differs with probability 1).
    pub fn auxiliary(j: u32, p: f64) -> Self {
        let w = pow2(j as i32 - 23);
        Self::three(w * (1.0 - p), w * p, 1.0 - w)
    }

    /// `q * auxiliary + (1 - q) * neighbour`.
    pub fn mixture(j: u32, q: f64, p: f64) -> Self {
        let a = Self::auxiliary(j, p);
        let b = Self::neighbour(j, p);
        Self {
            atoms: a
                .atoms
                .iter()
                .zip(&b.atoms)
                .map(|(&(l, x), &(_, y))| (l, q * x + (1.0 - q) * y))
                .collect(),
        }
    }

    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// `D_lambda(self || other)`, both over the same labels in the same order.
    pub fn renyi_divergence(&self, other: &Self, lambda: f64) -> f64 {
        // ln(sum Q (P/Q)^l) = ln(1 + sum Q ((P/Q)^l - 1)), exact near P = Q
        let s: f64 = self
            .atoms
            .iter()
            .zip(&other.atoms)
            .map(|(&(_, pp), &(_, qq))| qq * (lambda * (pp / qq).ln()).exp_m1())
            .sum();
        s.ln_1p() / (lambda - 1.0)
    }
}

fn check_oracle_args(j: u32, q: f64, p: f64, lambda: f64) -> Result<()> {
    if j > 22 {
        return Err(invalid("j", j as f64, "must lie in 0..=22"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid("q", q, "must lie in [0, 1]"));
    }
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::InvalidProbability(p));
    }
    if !(lambda > 1.0) {
        return Err(invalid("lambda", lambda, "must be > 1"));
    }
    Ok(())
}

/// Exact `D_lambda(Q_u || Q_u')` for fraction bit `j` that differs with
/// probability `q`.
pub fn renyi_divergence_oracle(j: u32, q: f64, p: f64, lambda: f64) -> Result<f64> {
    check_oracle_args(j, q, p, lambda)?;
    Ok(AtomDistribution::mixture(j, q, p).renyi_divergence(&AtomDistribution::neighbour(j, p), lambda))
}

/// Per-bit bound `q 2^(j-23) / (lambda-1) * (((1-p)/p)^(lambda-1) - 1)`.
pub fn per_bit_divergence_bound(j: u32, q: f64, p: f64, lambda: f64) -> Result<f64> {
    check_oracle_args(j, q, p, lambda)?;
    let l1 = lambda - 1.0;
    Ok(q * pow2(j as i32 - 23) / l1 * (l1 * ((1.0 - p) / p).ln()).exp_m1())
}

/// Both sides of the auxiliary inequality used to bound the moment ratio:
/// `p ((1-q) + q (1-p)/p)^l + (1-p) ((1-q) + q p/(1-p))^l` and
/// `(1-q) + q ((1-p)/p)^(l-1)`. Returns `(lhs, rhs)`.
pub fn moment_inequality_sides(q: f64, p: f64, lambda: f64) -> (f64, f64) {
    let odds = (1.0 - p) / p;
    let lhs = p * ((1.0 - q) + q * odds).powf(lambda) + (1.0 - p) * ((1.0 - q) + q / odds).powf(lambda);
    let rhs = (1.0 - q) + q * odds.powf(lambda - 1.0);
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binfloat::{encode_model, recover_model};
    use crate::perturb::{flip_bits_in_place, RngHandle, Stage};
    use proptest::prelude::{prop_assert, proptest};
    use rand::Rng;

    fn fp(p: f64) -> FlipProbability {
        FlipProbability::new(p).unwrap()
    }

    /// Monte-Carlo flip oracle: flips the fraction bits of `a` directly.
    fn mc_flip(a: f32, p: f64, trials: usize, seed: u64) -> (f64, f64) {
        let mut rng = RngHandle::new(seed, 0, 0, Stage::MonteCarlo).rng();
        let bits = a.to_bits();
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..trials {
            let mut mask = 0u32;
            for j in 0..23 {
                if rng.random_bool(p) {
                    mask |= 1 << j;
                }
            }
            let v = f32::from_bits(bits ^ mask) as f64;
            s += v;
            s2 += v * v;
        }
        let mean = s / trials as f64;
        (mean, s2 / trials as f64 - mean * mean)
    }

    #[test]
    fn lemma1_examples() {
        assert_eq!(flipped_mean(0.7, FlipProbability::ZERO).unwrap(), 0.7f32 as f64);
        assert_eq!(flipped_variance(0.7, FlipProbability::ZERO).unwrap(), 0.0);
        let m = flipped_mean(1.0, FlipProbability::HALF).unwrap();
        assert!((m - (1.0 + 0.5 * (1.0 - pow2(-23)))).abs() < 1e-15);
        assert!((m - 1.499_999_94).abs() < 1e-8);
        let v = flipped_variance(1.0, fp(0.1)).unwrap();
        assert!((v - 0.09 / 3.0 * (1.0 - pow2(-46))).abs() < 1e-17);
        assert!(flipped_mean(0.0, fp(0.1)).is_err());
    }

    #[test]
    fn lemma1_matches_monte_carlo() {
        let trials = 200_000;
        for (i, &a) in [1.0f32, -0.3, 0.75, -3.5].iter().enumerate() {
            let s = flipped_stats(a, fp(0.1)).unwrap();
            let (mean, var) = mc_flip(a, 0.1, trials, i as u64);
            let tol = 4.0 * (s.variance / trials as f64).sqrt();
            assert!((mean - s.mean).abs() <= tol, "a={a} mean {mean} vs {}", s.mean);
            assert!((var - s.variance).abs() <= 0.02 * s.variance, "a={a} var {var} vs {}", s.variance);
        }
    }

    #[test]
    fn variance_constant_within_binade() {
        let p = fp(0.3);
        let v = flipped_variance(0.5, p).unwrap();
        for a in [0.5f32, 0.6, 0.75, 0.99, -0.8] {
            assert_eq!(flipped_variance(a, p).unwrap(), v);
        }
        // slope of the mean is 1 - 2p within a binade
        let (m1, m2) = (flipped_mean(0.55, p).unwrap(), flipped_mean(0.65, p).unwrap());
        assert!(((m2 - m1) / (0.65f32 as f64 - 0.55f32 as f64) - 0.4).abs() < 1e-9);
    }

    #[test]
    fn bias_moments_examples() {
        let model = ModelVector::new(vec![0.25, -0.1, 0.0]);
        let zero = bias_moments(&model, FlipProbability::ZERO, 0.5).unwrap();
        assert_eq!(zero.variance, 0.0);
        assert!(zero.mean.iter().all(|m| m.abs() <= pow2(-23)));
        let b = bias_moments(&model, fp(0.1), 0.5).unwrap();
        assert!((b.mean[0] - (-0.05 - 0.1 * pow2(-22))).abs() < 1e-15);
        assert!((b.variance - FRACTION_ENERGY * 0.09 * 4.0).abs() < 1e-16);
        let other = bias_moments(&ModelVector::new(vec![0.9, 0.9, -0.9]), fp(0.1), 0.5).unwrap();
        assert_eq!(other.variance, b.variance);
        assert!(bias_moments(&ModelVector::new(vec![1.5]), fp(0.1), 0.5).is_err());
    }

    #[test]
    fn bias_moments_match_pipeline() {
        let model = ModelVector::new(vec![0.3, -0.45, 0.01, 0.2]);
        let p = 0.2;
        let moments = bias_moments(&model, fp(p), 0.5).unwrap();
        let base = encode_model(&model, 0.5).unwrap();
        let mut rng = RngHandle::new(5, 0, 0, Stage::MonteCarlo).rng();
        let trials = 10_000;
        let mut sums = vec![0.0; model.len()];
        for _ in 0..trials {
            let mut bits = base.clone();
            flip_bits_in_place(&mut bits, fp(p), &mut rng);
            let rec = recover_model(&bits, 0.5).unwrap();
            for m in 0..model.len() {
                sums[m] += rec[m] as f64 - model[m] as f64;
            }
        }
        let tol = 4.0 * (moments.variance / trials as f64).sqrt();
        for (s, mean) in sums.iter().zip(&moments.mean) {
            assert!((s / trials as f64 - mean).abs() <= tol);
        }
    }

    #[test]
    fn x_bf_examples() {
        let zero = x_bf_bound(&[0.5, 0.5], &[FlipProbability::ZERO; 2], 10, 1.0, 0.5).unwrap();
        assert_eq!(zero, 0.0);
        // nu_inf = 0.5 has exponent field 126: 2^(252 - 250) = 4
        let x = x_bf_bound(&[1.0], &[fp(0.1)], 10, 1.0, 0.5).unwrap();
        let expected = 0.09 * FRACTION_ENERGY * 10.0 * 4.0 + 0.01;
        assert!((x - expected).abs() < 1e-15);
        let j = x_bf_bound_jensen(&[1.0], &[fp(0.1)], 10, 1.0, 0.5).unwrap();
        assert!((j - x - 0.03).abs() < 1e-15);
        assert!(x_bf_bound(&[0.4, 0.4], &[fp(0.1); 2], 10, 1.0, 0.5).is_err());
        assert!(x_bf_bound(&[1.0], &[fp(0.1); 2], 10, 1.0, 0.5).is_err());
    }

    #[test]
    fn x_gauss_examples() {
        let g = GaussianBiasParams { eta: 0.1, clip: 1.0, rounds: 50, delta: 1.25, epsilon: 10.0 };
        assert_eq!(x_gauss_bound(&[1.0], &[2000], 100, &g).unwrap(), 0.0);
        let g = GaussianBiasParams { delta: 0.25, ..g };
        let x = x_gauss_bound(&[0.5, 0.5], &[2000, 2000], 1_210_000, &g).unwrap();
        assert!(x.is_finite() && x > 0.0);
        let halved = x_gauss_bound(&[0.5, 0.5], &[2000, 2000], 1_210_000, &GaussianBiasParams { epsilon: 5.0, ..g }).unwrap();
        assert!((halved / x - 4.0).abs() < 1e-12);
    }

    fn cp() -> ConvergenceParams {
        ConvergenceParams {
            mu: 0.05,
            alpha: 1.0,
            gamma_het: 0.02,
            eta: 0.1,
            iterations: 200,
            local_steps: 5,
            p_max: 0.01,
            clip: 1.0,
            nu2: 3.0,
            nu_inf: 0.5,
            initial_gap: 4.0,
        }
    }

    #[test]
    fn convergence_noiseless_limit() {
        let c = ConvergenceParams { p_max: 0.0, ..cp() };
        let b = convergence_bound(&c, 0.0).unwrap();
        let closed = noiseless_bound(&c).unwrap();
        assert!((b.value - closed).abs() <= 1e-12 * closed);
        assert!(!b.divergent);
    }

    #[test]
    fn convergence_first_term_decays() {
        let c = ConvergenceParams { p_max: 0.0, iterations: 20_000, ..cp() };
        assert!(convergence_bound(&c, 0.0).unwrap().zeta1 < 1e-40);
    }

    #[test]
    fn convergence_e1_matches_k_equals_t() {
        let c = ConvergenceParams { local_steps: 1, iterations: 40, ..cp() };
        let b = convergence_bound(&c, 0.1).unwrap();
        let k = 40.0;
        let sp = 0.1;
        let r = 0.995 * (1.0 + sp);
        let ratio = (1.0 - f64::powf(r, k)) / (1.0 - r);
        let direct = (1.0 + sp).powf(k) * 0.995f64.powf(k) * 4.0
            + ratio * (1.0 + sp) * 0.005 / 0.005 * 0.01 * (0.12)
            + ratio * (1.0 + sp) * 0.1 / sp;
        assert!((b.value - direct).abs() <= 1e-10 * direct);
        assert!(b.divergent);
    }

    #[test]
    fn convergence_ratio_at_unity() {
        // choose p so that r is exactly 1 within rounding
        let base = cp();
        let decay_e = (1.0 - base.eta * base.mu).powi(5);
        let p = (1.0 / decay_e - 1.0).powi(2);
        let b = convergence_bound(&ConvergenceParams { p_max: p, ..base }, 0.01).unwrap();
        assert!(b.value.is_finite());
        let near = convergence_bound(&ConvergenceParams { p_max: p * (1.0 + 1e-9), ..base }, 0.01).unwrap();
        assert!((b.value - near.value).abs() <= 1e-6 * b.value);
    }

    #[test]
    fn convergence_monotone_in_p() {
        let mut last = 0.0;
        for i in 0..=40 {
            let p = i as f64 * 0.005;
            let x = x_bf_bound(&[1.0], &[fp(p)], 64, 3.0, 0.5).unwrap();
            let v = convergence_bound(&ConvergenceParams { p_max: p, ..cp() }, x).unwrap().value;
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn convergence_rejects_bad_params() {
        assert!(convergence_bound(&ConvergenceParams { iterations: 201, ..cp() }, 0.0).is_err());
        assert!(convergence_bound(&ConvergenceParams { mu: 2.0, ..cp() }, 0.0).is_err());
        assert!(convergence_bound(&ConvergenceParams { eta: 30.0, ..cp() }, 0.0).is_err());
    }

    #[test]
    fn oracle_examples() {
        assert!(renyi_divergence_oracle(7, 0.0, 0.2, 2.0).unwrap().abs() < 1e-18);
        let d = renyi_divergence_oracle(22, 1.0, 0.1, 2.0).unwrap();
        let direct = (0.45f64.powi(2) / 0.05 + 0.05f64.powi(2) / 0.45 + 0.5).ln();
        assert!((d - direct).abs() < 1e-14);
        assert!((d - 1.5164).abs() < 1e-4);
        assert!(d <= per_bit_divergence_bound(22, 1.0, 0.1, 2.0).unwrap());
        let mix = AtomDistribution::mixture(3, 0.4, 0.2);
        assert!((mix.total() - 1.0).abs() < 1e-15);
        assert!(renyi_divergence_oracle(23, 0.5, 0.1, 2.0).is_err());
        assert!(renyi_divergence_oracle(1, 0.5, 0.5, 2.0).is_err());
    }

    #[test]
    fn per_bit_bounds_sum_to_budget_relation() {
        // summing per-bit bounds reproduces the budget relation with kappa = sum q w
        let qs = [(22u32, 0.3), (10, 0.9), (0, 1.0), (15, 0.05)];
        let (p, lambda) = (0.2, 3.0);
        let kappa: f64 = qs.iter().map(|&(j, q)| q * pow2(j as i32 - 23)).sum();
        let summed: f64 = qs.iter().map(|&(j, q)| per_bit_divergence_bound(j, q, p, lambda).unwrap()).sum();
        let whole = crate::accountant::per_round_divergence_bound(kappa, lambda, p);
        assert!((summed - whole).abs() <= 1e-12 * whole);
    }

    proptest! {
        #[test]
        fn oracle_below_bound(j in 0u32..=22, q in 0.0..=1.0f64, p in 0.001..0.499f64, lambda in 1.01..8.0f64) {
            let d = renyi_divergence_oracle(j, q, p, lambda).unwrap();
            let b = per_bit_divergence_bound(j, q, p, lambda).unwrap();
            prop_assert!(d >= -1e-15);
            prop_assert!(d <= b * (1.0 + 1e-12) + 1e-300);
        }

        #[test]
        fn moment_inequality_holds(q in 0.0..=1.0f64, p in 0.001..0.499f64, lambda in 1.01..8.0f64) {
            let (lhs, rhs) = moment_inequality_sides(q, p, lambda);
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }
}
