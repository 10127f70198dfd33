//! Motion-aware smoothing of the perturbation field.
//!
//! Each event's offset is replaced by the mean of two weighted averages: one
//! over its spatial neighbors (weights decay with distance) and one over its
//! causal temporal neighbors (weights decay with the neighbor's normalized
//! velocity).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::EventStream;
use crate::neighbor::NeighborIndex;

/// Guard added to the time gap between consecutive events.
pub const EPS_T: f64 = 1e-9;

/// Relative spread below which raw velocities are treated as all equal.
pub const VELOCITY_REL_TOL: f64 = 1e-9;

/// Per-event min-max normalized speeds in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField(pub Vec<f64>);

/// Which event's velocity feeds the temporal weight of a neighbor slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocitySide {
    #[default]
    Neighbor,
    Query,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionWeights {
    pub k: usize,
    pub w_s: Vec<f64>,
    pub w_t: Vec<f64>,
    pub sigma_s: f64,
    pub sigma_t: f64,
}

/// Which halves of the diffusion are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiffusionMode {
    pub spatial: bool,
    pub temporal: bool,
}

impl Default for DiffusionMode {
    fn default() -> Self {
        Self {
            spatial: true,
            temporal: true,
        }
    }
}

/// Raw speed of each event relative to its predecessor, min-max normalized.
pub fn event_velocity(stream: &EventStream) -> VelocityField {
    let ev = &stream.events;
    let n = ev.len();
    if n < 2 {
        return VelocityField(vec![0.0; n]);
    }
    let mut raw = Vec::with_capacity(n);
    raw.push(0.0);
    for w in ev.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let ds = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
        raw.push(ds / (b.t - a.t + EPS_T));
    }
    raw[0] = raw[1];
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    // equal up to rounding counts as constant
    if !(span > VELOCITY_REL_TOL * hi.abs()) {
        return VelocityField(vec![0.0; n]);
    }
    VelocityField(raw.into_iter().map(|v| (v - lo) / span).collect())
}

pub fn diffusion_weights(
    index: &NeighborIndex,
    vel: &VelocityField,
    sigma_s: f64,
    sigma_t: f64,
    side: VelocitySide,
) -> Result<DiffusionWeights> {
    if !(sigma_s > 0.0) || !(sigma_t > 0.0) {
        return Err(Error::invalid("diffusion sigmas must be positive"));
    }
    if vel.0.len() != index.len() {
        return Err(Error::ShapeMismatch {
            expected: index.len(),
            got: vel.0.len(),
        });
    }
    let w_s = index.spatial_dist.iter().map(|d| (-d / sigma_s).exp()).collect();
    let w_t = index
        .temporal_idx
        .iter()
        .enumerate()
        .map(|(slot, &j)| {
            let v = match side {
                VelocitySide::Neighbor => vel.0[j],
                VelocitySide::Query => vel.0[slot / index.k],
            };
            (-v / sigma_t).exp()
        })
        .collect();
    Ok(DiffusionWeights {
        k: index.k,
        w_s,
        w_t,
        sigma_s,
        sigma_t,
    })
}

#[inline]
fn weighted_mean(
    pert: &[[f64; 3]],
    idx: &[usize],
    w: &[f64],
) -> [f64; 3] {
    let mut acc = [0.0; 3];
    let mut wsum = 0.0;
    for (&j, &wj) in idx.iter().zip(w) {
        let p = &pert[j];
        acc[0] += wj * p[0];
        acc[1] += wj * p[1];
        acc[2] += wj * p[2];
        wsum += wj;
    }
    if wsum > 0.0 {
        [acc[0] / wsum, acc[1] / wsum, acc[2] / wsum]
    } else {
        // every weight underflowed; fall back to the plain mean
        let k = idx.len() as f64;
        let mut m = [0.0; 3];
        for &j in idx {
            for d in 0..3 {
                m[d] += pert[j][d] / k;
            }
        }
        m
    }
}

/// Smooths `pert` over the neighbor graph, writing into `out`.
pub fn diffuse_into(
    pert: &[[f64; 3]],
    index: &NeighborIndex,
    weights: &DiffusionWeights,
    mode: DiffusionMode,
    out: &mut [[f64; 3]],
) -> Result<()> {
    let n = index.len();
    if pert.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: pert.len(),
        });
    }
    if out.len() != n || weights.w_s.len() != n * index.k || weights.w_t.len() != n * index.k {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: out.len(),
        });
    }
    let k = index.k;
    for (row, o) in out.iter_mut().enumerate() {
        let r = row * k..(row + 1) * k;
        let s = mode
            .spatial
            .then(|| weighted_mean(pert, &index.spatial_idx[r.clone()], &weights.w_s[r.clone()]));
        let t = mode
            .temporal
            .then(|| weighted_mean(pert, &index.temporal_idx[r.clone()], &weights.w_t[r]));
        *o = match (s, t) {
            (Some(s), Some(t)) => [(s[0] + t[0]) / 2.0, (s[1] + t[1]) / 2.0, (s[2] + t[2]) / 2.0],
            (Some(s), None) => s,
            (None, Some(t)) => t,
            (None, None) => pert[row],
        };
    }
    Ok(())
}

/// Allocating wrapper around [`diffuse_into`] with both halves enabled.
pub fn diffuse(
    pert: &[[f64; 3]],
    index: &NeighborIndex,
    weights: &DiffusionWeights,
) -> Result<Vec<[f64; 3]>> {
    let mut out = vec![[0.0; 3]; pert.len()];
    diffuse_into(pert, index, weights, DiffusionMode::default(), &mut out)?;
    Ok(out)
}

/// Neighbor tables and weights prepared once per clean sample.
#[derive(Debug, Clone)]
pub struct DiffusionPlan {
    pub index: NeighborIndex,
    pub weights: DiffusionWeights,
    pub mode: DiffusionMode,
}

impl DiffusionPlan {
    pub fn build(
        clean: &EventStream,
        k: usize,
        sigma_s: f64,
        sigma_t: f64,
        causal: bool,
        side: VelocitySide,
        mode: DiffusionMode,
    ) -> Result<Self> {
        let index = NeighborIndex::build(clean, k, causal)?;
        let vel = event_velocity(clean);
        let weights = diffusion_weights(&index, &vel, sigma_s, sigma_t, side)?;
        Ok(Self {
            index,
            weights,
            mode,
        })
    }

    pub fn apply(&self, pert: &[[f64; 3]], out: &mut [[f64; 3]]) -> Result<()> {
        diffuse_into(pert, &self.index, &self.weights, self.mode, out)
    }
}
