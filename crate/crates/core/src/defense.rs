//! Input-purification defenses: statistical outlier removal (SOR) and
//! simple random subsampling (SRS).

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::AttackResult;
use crate::error::{Error, Result};
use crate::event::{resample_fixed, sort_by_t, EventStream};
use crate::metrics::MetricReport;
use crate::neighbor::knn_spatial;
use crate::victim::VictimParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DefenseConfig {
    Sor { k: usize, alpha: f64 },
    Srs { ratio: f64, seed: u64 },
}

impl DefenseConfig {
    pub fn sor_default() -> Self {
        DefenseConfig::Sor { k: 5, alpha: 1.1 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DefenseConfig::Sor { .. } => "sor",
            DefenseConfig::Srs { .. } => "srs",
        }
    }

    pub fn apply(&self, stream: &EventStream) -> Result<EventStream> {
        match *self {
            DefenseConfig::Sor { k, alpha } => sor_defense(stream, k, alpha),
            DefenseConfig::Srs { ratio, seed } => srs_defense(stream, ratio, seed),
        }
    }
}

/// Drops events whose mean distance to their `k` nearest neighbors exceeds
/// `μ + alpha·σ` of that statistic over the stream.
pub fn sor_defense(stream: &EventStream, k: usize, alpha: f64) -> Result<EventStream> {
    if k == 0 || !(alpha > 0.0) {
        return Err(Error::invalid("sor needs k >= 1 and alpha > 0"));
    }
    let n = stream.len();
    if n <= k {
        return Err(Error::invalid(format!("sor needs more than k = {k} events, got {n}")));
    }
    let (_, dist) = knn_spatial(stream, k)?;
    let means: Vec<f64> = dist.chunks_exact(k).map(|r| r.iter().sum::<f64>() / k as f64).collect();
    let mu = means.iter().sum::<f64>() / n as f64;
    let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / n as f64;
    let threshold = mu + alpha * var.sqrt();
    let events: Vec<_> = stream
        .events
        .iter()
        .zip(&means)
        .filter(|(_, &m)| m <= threshold)
        .map(|(e, _)| *e)
        .collect();
    // the minimum of the statistic never exceeds its mean
    debug_assert!(!events.is_empty());
    Ok(EventStream {
        events,
        sensor: stream.sensor,
        norm: stream.norm,
    })
}

/// Keeps `⌈ratio·N⌉` events chosen uniformly without replacement.
pub fn srs_defense(stream: &EventStream, ratio: f64, seed: u64) -> Result<EventStream> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid("srs ratio must lie in (0, 1]"));
    }
    let n = stream.len();
    let keep = ((ratio * n as f64).ceil() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, n, keep).into_vec();
    picks.sort_unstable();
    let mut events: Vec<_> = picks.into_iter().map(|i| stream.events[i]).collect();
    sort_by_t(&mut events);
    Ok(EventStream {
        events,
        sensor: stream.sensor,
        norm: stream.norm,
    })
}

/// Re-evaluates attack results after purifying each adversarial stream and
/// resampling it back to `n_events`. A sample counts as a success only if
/// its attack succeeded and the defended stream is still misclassified.
/// Distances are averaged over the samples that stay adversarial.
pub fn defended_eval(
    victim: &VictimParams,
    results: &[AttackResult],
    defense: &DefenseConfig,
    n_events: usize,
    seed: u64,
) -> Result<MetricReport> {
    if results.is_empty() {
        return Err(Error::invalid("no attack results to defend"));
    }
    let mut survivors = Vec::with_capacity(results.len());
    for (i, r) in results.iter().enumerate() {
        let Some(adv) = r.best_adv.as_ref().filter(|_| r.success) else {
            survivors.push(AttackResult::failure(r.label, r.iterations_used));
            continue;
        };
        let purified = defense.apply(adv)?;
        let input = resample_fixed(&purified, n_events, seed ^ i as u64)?;
        let still = victim.predict(&input)? != r.label;
        survivors.push(if still { r.clone() } else { AttackResult::failure(r.label, r.iterations_used) });
    }
    MetricReport::from_results(&survivors)
}
