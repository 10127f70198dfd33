//! Gradient-sign baselines and the C&W-style configuration of the driver.

use crate::attack::engine::{ma_adv_attack, AttackConfig, AttackResult};
use crate::error::{Error, Result};
use crate::event::LabeledSample;
use crate::victim::{LossKind, VictimParams};

/// `sign(0) = 0`.
#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Repeated clipped sign steps of size `epsilon / steps` on the
/// cross-entropy input gradient. Stops at the first misclassified iterate.
fn sign_steps(
    victim: &VictimParams,
    sample: &LabeledSample,
    epsilon: f64,
    steps: usize,
) -> Result<AttackResult> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid("epsilon must be non-negative"));
    }
    if steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    let clean = &sample.stream;
    if !clean.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let step = epsilon / steps as f64;
    let mut feats = clean.features();
    for s in 1..=steps {
        let (_, grad, _) = victim.loss_and_input_grad(&feats, LossKind::CrossEntropy, sample.label)?;
        for (f, g) in feats.iter_mut().zip(&grad) {
            for d in 0..3 {
                f[d] = (f[d] + step * sign(g[d])).clamp(0.0, 1.0);
            }
        }
        let predicted = victim.logits_of(&feats)?.argmax();
        if predicted != sample.label {
            let coords: Vec<[f64; 3]> = feats.iter().map(|f| [f[0], f[1], f[2]]).collect();
            let adv = clean.with_coords(&coords)?;
            return AttackResult::from_adv(sample.label, adv, predicted, clean, s);
        }
    }
    Ok(AttackResult::failure(sample.label, steps))
}

/// Single clipped step of size `epsilon` along the gradient sign.
pub fn fgsm_attack(
    victim: &VictimParams,
    sample: &LabeledSample,
    epsilon: f64,
    _seed: u64,
) -> Result<AttackResult> {
    sign_steps(victim, sample, epsilon, 1)
}

pub fn ifgsm_attack(
    victim: &VictimParams,
    sample: &LabeledSample,
    epsilon: f64,
    steps: usize,
    _seed: u64,
) -> Result<AttackResult> {
    sign_steps(victim, sample, epsilon, steps)
}

/// The bisection driver with diffusion and per-sample learning-rate scaling
/// turned off.
pub fn cw_attack(
    victim: &VictimParams,
    sample: &LabeledSample,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackResult> {
    let mut cfg = *cfg;
    cfg.ablation.diffusion = false;
    cfg.ablation.adaptive_lr = false;
    ma_adv_attack(victim, sample, &cfg, seed)
}
