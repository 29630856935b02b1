//! Random bit flipping, channel BER models and BER composition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binfloat::BitStream;
use crate::error::{invalid, Error, Result};

/// A per-bit flip probability in `[0, 0.5]`.
///
/// The closed upper end is allowed so that composition and the block-cipher
/// forward map stay total; operations that need `p < 0.5` check it.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FlipProbability(f64);

impl FlipProbability {
    pub const ZERO: Self = Self(0.0);
    pub const HALF: Self = Self(0.5);

    pub fn new(p: f64) -> Result<Self> {
        if (0.0..=0.5).contains(&p) {
            Ok(Self(p))
        } else {
            Err(Error::InvalidProbability(p))
        }
    }

    /// Like [`new`](Self::new) but additionally rejects `0.5`.
    pub fn budgetable(p: f64) -> Result<Self> {
        if p < 0.5 {
            Self::new(p)
        } else {
            Err(Error::InvalidProbability(p))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }

    fn clamped(p: f64) -> Self {
        Self(p.clamp(0.0, 0.5))
    }
}

impl TryFrom<f64> for FlipProbability {
    type Error = Error;
    fn try_from(p: f64) -> Result<Self> {
        Self::new(p)
    }
}

impl From<FlipProbability> for f64 {
    fn from(p: FlipProbability) -> f64 {
        p.0
    }
}

/// Stage tag used to separate random streams inside one (round, client) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stage {
    Artificial = 1,
    Channel = 2,
    ChannelDraw = 3,
    Gaussian = 4,
    PacketDrop = 5,
    Kappa = 6,
    Data = 7,
    Init = 8,
    MonteCarlo = 9,
}

/// Names one deterministic random stream.
///
/// Identical handles yield identical sequences. Sub-streams
/// ([`substream`](Self::substream)) give independent sequences for parallel
/// work items under one handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngHandle {
    pub seed: u64,
    pub round: u64,
    pub client: u64,
    pub stage: Stage,
}

impl RngHandle {
    pub fn new(seed: u64, round: u64, client: u64, stage: Stage) -> Self {
        Self {
            seed,
            round,
            client,
            stage,
        }
    }

    fn key(&self) -> [u8; 32] {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.round.to_le_bytes());
        key[16..24].copy_from_slice(&self.client.to_le_bytes());
        key[24..].copy_from_slice(&(self.stage as u64).to_le_bytes());
        key
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key())
    }

    pub fn substream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = self.rng();
        rng.set_stream(index.wrapping_add(1));
        rng
    }
}

/// Calls `visit` with the index of every position in `0..len` that flips
/// under i.i.d. Bernoulli(`p`) trials. Uses geometric gap sampling, so cost is
/// proportional to the number of flips.
pub fn for_each_flip<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R, mut visit: impl FnMut(usize)) {
    if p <= 0.0 || len == 0 {
        return;
    }
    if p >= 1.0 {
        (0..len).for_each(visit);
        return;
    }
    let log_q = (-p).ln_1p();
    let mut pos = 0usize;
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        let gap = (u.ln() / log_q).floor();
        if gap >= (len - pos) as f64 {
            return;
        }
        pos += gap as usize;
        visit(pos);
        pos += 1;
        if pos >= len {
            return;
        }
    }
}

/// Flips each bit of the stream independently with probability `p`.
pub fn flip_bits(bits: &BitStream, p: FlipProbability, rng: &RngHandle) -> BitStream {
    let mut out = bits.clone();
    flip_bits_in_place(&mut out, p, &mut rng.rng());
    out
}

pub fn flip_bits_in_place<R: Rng + ?Sized>(bits: &mut BitStream, p: FlipProbability, rng: &mut R) {
    let len = bits.len();
    for_each_flip(len, p.value(), rng, |k| bits.toggle(k));
}

/// Flips each of the 32 bits of every word independently with probability
/// `p`. Used for uploads that carry full binary32 words.
pub fn flip_words_in_place<R: Rng + ?Sized>(words: &mut [u32], p: FlipProbability, rng: &mut R) {
    for_each_flip(words.len() * 32, p.value(), rng, |k| words[k / 32] ^= 1 << (k % 32));
}

/// Per-bit modulation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modulation {
    Bpsk,
    /// Gray-coded QPSK; same per-bit BER as BPSK over AWGN.
    Qpsk,
    FixedBer,
}

/// Uplink parameters for one (round, client) transmission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Linear received SNR per bit, `h^2 beta / (N0 B)`.
    pub snr_linear: f64,
    pub modulation: Modulation,
    pub fixed_ber: Option<FlipProbability>,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn awgn(modulation: Modulation, snr_linear: f64) -> Self {
        Self {
            snr_linear,
            modulation,
            fixed_ber: None,
            seed: 0,
        }
    }

    pub fn fixed(ber: FlipProbability) -> Self {
        Self {
            snr_linear: f64::INFINITY,
            modulation: Modulation::FixedBer,
            fixed_ber: Some(ber),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Gaussian tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Channel BER of the uplink: `Q(sqrt(2 snr))` for BPSK/QPSK, the configured
/// value for a fixed-BER channel.
pub fn awgn_ber(cfg: &ChannelConfig) -> Result<FlipProbability> {
    let p = match cfg.modulation {
        Modulation::Bpsk | Modulation::Qpsk => {
            if !(cfg.snr_linear > 0.0) {
                return Err(invalid("snr_linear", cfg.snr_linear, "must be positive"));
            }
            // Q(sqrt(2g)) = erfc(sqrt(g)) / 2
            0.5 * libm::erfc(cfg.snr_linear.sqrt())
        }
        Modulation::FixedBer => cfg
            .fixed_ber
            .ok_or_else(|| Error::Config("fixed_ber modulation without fixed_ber value".into()))?
            .value(),
    };
    if p >= 0.5 {
        return Err(Error::ChannelTooNoisy(p));
    }
    Ok(FlipProbability(p))
}

/// End-to-end BER of two independent flip stages:
/// `p_a + p_c - 2 p_a p_c`.
pub fn compose_ber(p_a: FlipProbability, p_c: FlipProbability) -> FlipProbability {
    let (a, c) = (p_a.value(), p_c.value());
    if a == 0.0 {
        return p_c;
    }
    if c == 0.0 {
        return p_a;
    }
    // Factored form: exact absorption at 0.5 and symmetric in its arguments.
    FlipProbability::clamped(0.5 - 2.0 * (0.5 - a) * (0.5 - c))
}

/// Artificial BER that, composed with the channel BER `p_c`, yields
/// `p_target`: `(p_target - p_c) / (1 - 2 p_c)`.
///
/// Fails with [`Error::PrivacyOverSatisfied`] when the channel alone is
/// noisier than the target.
pub fn artificial_ber(p_target: FlipProbability, p_c: FlipProbability) -> Result<FlipProbability> {
    let (t, c) = (p_target.value(), p_c.value());
    if t >= 0.5 {
        return Err(Error::InvalidProbability(t));
    }
    if c > t {
        return Err(Error::PrivacyOverSatisfied {
            target: t,
            channel: c,
        });
    }
    if c == t {
        return Ok(FlipProbability::ZERO);
    }
    Ok(FlipProbability::clamped((t - c) / (1.0 - 2.0 * c)))
}

/// Plaintext BER after a stream cipher: errors map one to one.
pub fn plaintext_ber_stream(p_ct: FlipProbability) -> FlipProbability {
    p_ct
}

/// Ciphertext BER that a block cipher of `block_bits` bits needs so that the
/// decrypted plaintext sees `p_target`: `1 - (1 - 2 p_target)^(1/b)`.
///
/// A corrupted block decrypts to uniformly random bits, hence the factor 2.
/// Errors if the required ciphertext BER would exceed 0.5 (only possible
/// for blocks of one or two bits).
pub fn ciphertext_ber_block(p_target: FlipProbability, block_bits: u32) -> Result<FlipProbability> {
    let t = p_target.value();
    if t >= 0.5 {
        return Err(Error::InvalidProbability(t));
    }
    if block_bits == 0 {
        return Err(invalid("block_bits", 0.0, "must be positive"));
    }
    let p = -((-2.0 * t).ln_1p() / block_bits as f64).exp_m1();
    FlipProbability::new(p)
}

/// Forward map of [`ciphertext_ber_block`]: `(1 - (1 - p_ct)^b) / 2`.
pub fn plaintext_ber_block(p_ct: FlipProbability, block_bits: u32) -> FlipProbability {
    let p = -0.5 * (block_bits as f64 * (-p_ct.value()).ln_1p()).exp_m1();
    FlipProbability::clamped(p)
}
