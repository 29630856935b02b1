//! Uplink mechanisms: what the server receives for one client upload.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::binfloat::{encode_model, recover_model, ModelVector};
use crate::error::{invalid, Error, Result};
use crate::perturb::{artificial_ber, compose_ber, flip_bits_in_place, flip_words_in_place, FlipProbability, RngHandle, Stage};

/// Bytes per packet in the packet-drop baseline.
pub const PACKET_BYTES: usize = 2312;
/// binary32 values per full packet.
pub const FLOATS_PER_PACKET: usize = PACKET_BYTES / 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    /// Artificial flips topped up to the budget after crediting the channel.
    ChannelNativeBitflip,
    /// Artificial flips at the full budget; channel flips come on top.
    AgnosticBitflip,
    /// Gaussian noise, full binary32 words over the noisy channel.
    GaussianAcceptErrors,
    /// Gaussian noise, packets with any bit error are discarded.
    GaussianDropPackets,
    /// Perfect uplink, no privacy noise.
    Noiseless,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 5] = [
        Self::ChannelNativeBitflip,
        Self::AgnosticBitflip,
        Self::GaussianAcceptErrors,
        Self::GaussianDropPackets,
        Self::Noiseless,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ChannelNativeBitflip => "channel_native_bitflip",
            Self::AgnosticBitflip => "agnostic_bitflip",
            Self::GaussianAcceptErrors => "gaussian_accept_errors",
            Self::GaussianDropPackets => "gaussian_drop_packets",
            Self::Noiseless => "noiseless",
        }
    }

    pub fn is_bitflip(self) -> bool {
        matches!(self, Self::ChannelNativeBitflip | Self::AgnosticBitflip)
    }

    pub fn is_gaussian(self) -> bool {
        matches!(self, Self::GaussianAcceptErrors | Self::GaussianDropPackets)
    }
}

impl std::fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MechanismKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mechanism {s:?}")))
    }
}

/// Everything one upload needs besides the model itself.
#[derive(Debug, Clone, Copy)]
pub struct UploadContext<'a> {
    pub kind: MechanismKind,
    /// Public clip bound; also fixes the fixed-point format.
    pub nu_inf: f32,
    pub nu2: f64,
    /// End-to-end BER required by the privacy budget (bit-flip arms).
    pub p_required: FlipProbability,
    /// Channel BER of this (round, client).
    pub p_channel: FlipProbability,
    /// Gaussian noise scale (Gaussian arms).
    pub sigma: f64,
    /// Global model of the previous round, used to fill dropped packets.
    pub previous_global: &'a ModelVector,
    pub seed: u64,
    pub round: u64,
    pub client: u64,
}

impl UploadContext<'_> {
    fn handle(&self, stage: Stage) -> RngHandle {
        RngHandle::new(self.seed, self.round, self.client, stage)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UploadOutcome {
    /// Model as recovered by the server.
    pub model: ModelVector,
    /// Artificial BER applied by the client (bit-flip arms).
    pub p_artificial: f64,
    /// Effective per-bit error rate of the transmission.
    pub end_to_end_ber: f64,
    /// The channel alone exceeded the required BER.
    pub over_satisfied: bool,
    pub packets_total: u32,
    pub packets_dropped: u32,
}

/// Clips into the `nu_inf` box and the `nu2` ball.
pub fn clip_model(model: &ModelVector, nu_inf: f32, nu2: f64) -> ModelVector {
    model.clip_linf(nu_inf).clip_l2(nu2)
}

/// Transmits one client model under the given mechanism.
pub fn upload(model: &ModelVector, ctx: &UploadContext<'_>) -> Result<UploadOutcome> {
    match ctx.kind {
        MechanismKind::Noiseless => Ok(UploadOutcome {
            model: model.clone(),
            p_artificial: 0.0,
            end_to_end_ber: 0.0,
            over_satisfied: false,
            packets_total: 0,
            packets_dropped: 0,
        }),
        MechanismKind::ChannelNativeBitflip | MechanismKind::AgnosticBitflip => bitflip_upload(model, ctx),
        MechanismKind::GaussianAcceptErrors => accept_upload(model, ctx),
        MechanismKind::GaussianDropPackets => drop_upload(model, ctx),
    }
}

fn bitflip_upload(model: &ModelVector, ctx: &UploadContext<'_>) -> Result<UploadOutcome> {
    let clipped = clip_model(model, ctx.nu_inf, ctx.nu2);
    let mut bits = encode_model(&clipped, ctx.nu_inf)?;
    let (p_a, over_satisfied) = match ctx.kind {
        MechanismKind::ChannelNativeBitflip => match artificial_ber(ctx.p_required, ctx.p_channel) {
            Ok(p) => (p, false),
            Err(Error::PrivacyOverSatisfied { .. }) => (FlipProbability::ZERO, true),
            Err(e) => return Err(e),
        },
        _ => (ctx.p_required, false),
    };
    flip_bits_in_place(&mut bits, p_a, &mut ctx.handle(Stage::Artificial).rng());
    flip_bits_in_place(&mut bits, ctx.p_channel, &mut ctx.handle(Stage::Channel).rng());
    Ok(UploadOutcome {
        model: recover_model(&bits, ctx.nu_inf)?,
        p_artificial: p_a.value(),
        end_to_end_ber: compose_ber(p_a, ctx.p_channel).value(),
        over_satisfied,
        packets_total: 0,
        packets_dropped: 0,
    })
}

fn add_gaussian(model: &ModelVector, ctx: &UploadContext<'_>) -> Result<Vec<f32>> {
    if !(ctx.sigma >= 0.0) || !ctx.sigma.is_finite() {
        return Err(invalid("sigma", ctx.sigma, "must be finite and >= 0"));
    }
    let normal = Normal::new(0.0, ctx.sigma).map_err(|_| invalid("sigma", ctx.sigma, "bad scale"))?;
    let mut rng = ctx.handle(Stage::Gaussian).rng();
    Ok(model
        .as_slice()
        .iter()
        .map(|&v| (v as f64 + normal.sample(&mut rng)) as f32)
        .collect())
}

fn accept_upload(model: &ModelVector, ctx: &UploadContext<'_>) -> Result<UploadOutcome> {
    let noisy = add_gaussian(model, ctx)?;
    let mut words: Vec<u32> = noisy.iter().map(|v| v.to_bits()).collect();
    flip_words_in_place(&mut words, ctx.p_channel, &mut ctx.handle(Stage::Channel).rng());
    Ok(UploadOutcome {
        model: ModelVector::new(words.into_iter().map(f32::from_bits).collect()),
        p_artificial: 0.0,
        end_to_end_ber: ctx.p_channel.value(),
        over_satisfied: false,
        packets_total: 0,
        packets_dropped: 0,
    })
}

/// Probability that a packet of `bytes` bytes contains at least one error.
pub fn packet_drop_probability(p_channel: FlipProbability, bytes: usize) -> f64 {
    -((8 * bytes) as f64 * (-p_channel.value()).ln_1p()).exp_m1()
}

fn drop_upload(model: &ModelVector, ctx: &UploadContext<'_>) -> Result<UploadOutcome> {
    if ctx.previous_global.len() != model.len() {
        return Err(Error::LengthMismatch {
            left: model.len(),
            right: ctx.previous_global.len(),
        });
    }
    let mut values = add_gaussian(model, ctx)?;
    let mut rng = ctx.handle(Stage::PacketDrop).rng();
    // packets are fixed-length; a short final slice is padded on air
    let p = packet_drop_probability(ctx.p_channel, PACKET_BYTES);
    let mut total = 0;
    let mut dropped = 0;
    for (start, chunk) in (0..values.len()).step_by(FLOATS_PER_PACKET).zip(values.chunks_mut(FLOATS_PER_PACKET)) {
        total += 1;
        if rng.random::<f64>() < p {
            dropped += 1;
            chunk.copy_from_slice(&ctx.previous_global.as_slice()[start..start + chunk.len()]);
        }
    }
    Ok(UploadOutcome {
        model: ModelVector::new(values),
        p_artificial: 0.0,
        end_to_end_ber: ctx.p_channel.value(),
        over_satisfied: false,
        packets_total: total,
        packets_dropped: dropped,
    })
}
