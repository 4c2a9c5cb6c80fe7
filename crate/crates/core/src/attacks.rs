//! Byzantine message crafting.
//!
//! The adversary is omniscient: it sees every honest upload of the round and
//! produces the vectors the Byzantine nodes send in their place. Crafting is
//! a pure, seed-deterministic function of the honest messages and the round
//! context, so simulations stay reproducible.

use serde::{Deserialize, Serialize};

use crate::rng::CounterRng;
use crate::util;
use crate::util::numeric::normal_quantile;
use crate::{Error, Result};

/// Attack strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Gaussian,
    SignFlip,
    LabelFlip,
    SampleDuplicate,
    ZeroValue,
    Isolation,
    Alie,
    Ipm,
    BitFlip,
}

impl AttackKind {
    pub const ALL: [AttackKind; 9] = [
        AttackKind::Gaussian,
        AttackKind::SignFlip,
        AttackKind::LabelFlip,
        AttackKind::SampleDuplicate,
        AttackKind::ZeroValue,
        AttackKind::Isolation,
        AttackKind::Alie,
        AttackKind::Ipm,
        AttackKind::BitFlip,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Gaussian => "gaussian",
            AttackKind::SignFlip => "sign_flip",
            AttackKind::LabelFlip => "label_flip",
            AttackKind::SampleDuplicate => "sample_duplicate",
            AttackKind::ZeroValue => "zero_value",
            AttackKind::Isolation => "isolation",
            AttackKind::Alie => "alie",
            AttackKind::Ipm => "ipm",
            AttackKind::BitFlip => "bit_flip",
        }
    }
}

/// Attack hyperparameters. The defaults follow the attacks' original
/// formulations; they are configuration, not ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackParams {
    /// Per-coordinate standard deviation of the Gaussian attack.
    pub gaussian_std: f64,
    /// Scale `c` of the sign-flipping attack `-c * mean`.
    pub sign_scale: f64,
    /// Scale of the inner-product manipulation `-eps * mean`.
    pub ipm_scale: f64,
    /// Override for the ALIE z-quantile; `None` derives it from `(n, b)`.
    pub alie_z: Option<f64>,
}

impl Default for AttackParams {
    fn default() -> Self {
        AttackParams {
            gaussian_std: 10.0,
            sign_scale: 1.0,
            ipm_scale: 0.1,
            alie_z: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    #[serde(default)]
    pub params: AttackParams,
}

impl AttackConfig {
    pub fn new(kind: AttackKind) -> Self {
        AttackConfig {
            kind,
            params: AttackParams::default(),
        }
    }
}

/// Per-round information available to the adversary.
pub struct RoundContext<'a> {
    pub round: u64,
    pub seed: u64,
    /// Distinguishes the upload channels of methods that send two streams.
    pub stream: u64,
    /// Number of Byzantine messages to craft.
    pub byz_count: usize,
    /// Total cohort size `n` (honest + Byzantine).
    pub total_nodes: usize,
    /// Label-flipped gradients for the Byzantine nodes, prepared by the
    /// caller from the underlying data-driven problem. Required by
    /// `LabelFlip`, ignored otherwise.
    pub poisoned: Option<&'a [Vec<f64>]>,
}

/// ALIE places the crafted point at the edge of the plausible honest
/// cluster: `z` is the standard normal quantile at `(n-b-s)/(n-b)` with
/// `s = floor(n/2) + 1 - b`.
pub fn alie_z_default(total_nodes: usize, byz: usize) -> f64 {
    let n = total_nodes as f64;
    let b = byz as f64;
    let s = (total_nodes / 2 + 1) as f64 - b;
    let p = ((n - b - s) / (n - b)).clamp(1e-12, 1.0 - 1e-12);
    normal_quantile(p)
}

/// Craft the `byz_count` vectors uploaded by the Byzantine nodes.
pub fn craft(
    cfg: &AttackConfig,
    honest_msgs: &[Vec<f64>],
    ctx: &RoundContext,
) -> Result<Vec<Vec<f64>>> {
    if honest_msgs.is_empty() {
        return Err(Error::EmptyInput("honest messages"));
    }
    let d = honest_msgs[0].len();
    for m in honest_msgs {
        if m.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: m.len(),
            });
        }
    }
    let b = ctx.byz_count;
    if b == 0 {
        return Ok(Vec::new());
    }
    let h = honest_msgs.len();
    if b >= h {
        return Err(Error::invalid(format!(
            "{b} Byzantine nodes against {h} honest violates |B| < |H|"
        )));
    }
    let mean = util::mean(honest_msgs);
    let out = match cfg.kind {
        AttackKind::ZeroValue => vec![vec![0.0; d]; b],
        AttackKind::SignFlip => vec![util::scale(&mean, -cfg.params.sign_scale); b],
        AttackKind::Ipm => vec![util::scale(&mean, -cfg.params.ipm_scale); b],
        AttackKind::BitFlip => {
            let flipped: Vec<f64> = mean
                .iter()
                .map(|x| f64::from_bits(x.to_bits() ^ (1u64 << 63)))
                .collect();
            vec![flipped; b]
        }
        AttackKind::SampleDuplicate => vec![honest_msgs[0].clone(); b],
        AttackKind::Isolation => {
            // Chosen so the full-cohort mean is exactly zero.
            vec![util::scale(&mean, -(h as f64) / b as f64); b]
        }
        AttackKind::Gaussian => {
            let mut rng = CounterRng::for_attack(ctx.seed, ctx.round, ctx.stream);
            (0..b)
                .map(|_| {
                    mean.iter()
                        .map(|&mu| mu + cfg.params.gaussian_std * rng.next_normal())
                        .collect()
                })
                .collect()
        }
        AttackKind::Alie => {
            let z = cfg
                .params
                .alie_z
                .unwrap_or_else(|| alie_z_default(ctx.total_nodes, b));
            let mut std = vec![0.0; d];
            for m in honest_msgs {
                for (s, (x, mu)) in std.iter_mut().zip(m.iter().zip(&mean)) {
                    *s += (x - mu) * (x - mu);
                }
            }
            let crafted: Vec<f64> = mean
                .iter()
                .zip(&std)
                .map(|(mu, s)| mu + z * (s / h as f64).sqrt())
                .collect();
            vec![crafted; b]
        }
        AttackKind::LabelFlip => {
            let poisoned = ctx.poisoned.ok_or_else(|| {
                Error::invalid("label_flip needs poisoned gradients from the problem")
            })?;
            if poisoned.len() != b {
                return Err(Error::invalid(format!(
                    "label_flip got {} poisoned gradients for {b} Byzantine nodes",
                    poisoned.len()
                )));
            }
            poisoned.to_vec()
        }
    };
    Ok(out)
}
