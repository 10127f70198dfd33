//! Attack cost and success metrics.
//!
//! Chamfer and Hausdorff are directed from the adversarial stream to the
//! clean one, on normalized `(x, y, t)`.

use serde::{Deserialize, Serialize};

use crate::attack::loss::{chamfer_coords, min_distances};
use crate::attack::AttackResult;
use crate::error::{Error, Result};
use crate::event::EventStream;

pub fn chamfer_metric(adv: &EventStream, clean: &EventStream) -> Result<f64> {
    chamfer_coords(&adv.coords(), &clean.coords())
}

pub fn hausdorff_metric(adv: &EventStream, clean: &EventStream) -> Result<f64> {
    hausdorff_coords(&adv.coords(), &clean.coords())
}

pub fn hausdorff_coords(adv: &[[f64; 3]], clean: &[[f64; 3]]) -> Result<f64> {
    Ok(min_distances(adv, clean)?.into_iter().fold(0.0, f64::max))
}

/// Euclidean norm of the index-aligned displacement matrix.
pub fn l2_metric(adv: &EventStream, clean: &EventStream) -> Result<f64> {
    if adv.len() != clean.len() {
        return Err(Error::ShapeMismatch {
            expected: clean.len(),
            got: adv.len(),
        });
    }
    let sq: f64 = adv
        .events
        .iter()
        .zip(&clean.events)
        .map(|(a, c)| (a.x - c.x).powi(2) + (a.y - c.y).powi(2) + (a.t - c.t).powi(2))
        .sum();
    Ok(sq.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceMetrics {
    pub chamfer: f64,
    pub hausdorff: f64,
    pub l2: f64,
}

impl DistanceMetrics {
    pub fn between(adv: &EventStream, clean: &EventStream) -> Result<Self> {
        let (a, c) = (adv.coords(), clean.coords());
        let d = min_distances(&a, &c)?;
        Ok(Self {
            chamfer: d.iter().sum::<f64>() / d.len() as f64,
            hausdorff: d.iter().cloned().fold(0.0, f64::max),
            l2: l2_metric(adv, clean)?,
        })
    }
}

pub fn success_rate(results: &[AttackResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::invalid("success rate of an empty result list"));
    }
    Ok(results.iter().filter(|r| r.success).count() as f64 / results.len() as f64)
}

/// Success rate plus mean distances over the successful samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sr: f64,
    pub chamfer: f64,
    pub hausdorff: f64,
    pub l2: f64,
    pub n_samples: usize,
}

impl MetricReport {
    /// Distances are `NaN` when no sample succeeded.
    pub fn from_results(results: &[AttackResult]) -> Result<Self> {
        let sr = success_rate(results)?;
        let ok: Vec<&DistanceMetrics> = results.iter().filter_map(|r| r.metrics.as_ref()).collect();
        let mean = |f: fn(&DistanceMetrics) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64
            }
        };
        Ok(Self {
            sr,
            chamfer: mean(|m| m.chamfer),
            hausdorff: mean(|m| m.hausdorff),
            l2: mean(|m| m.l2),
            n_samples: results.len(),
        })
    }
}
