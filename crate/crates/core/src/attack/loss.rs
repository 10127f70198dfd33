//! Attack objectives: the untargeted logit margin and one-directional Chamfer
//! distance, combined as `cls + λ·dist`.

use crate::error::{Error, Result};
use crate::event::EventStream;
use crate::victim::Logits;

/// Index and value of the largest logit other than `y` (lowest index on ties).
fn best_other(z: &[f64], y: usize) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (i, &v) in z.iter().enumerate() {
        if i != y && (best.0 == usize::MAX || v > best.1) {
            best = (i, v);
        }
    }
    best
}

fn check_margin(logits: &Logits, y: usize, kappa: f64) -> Result<()> {
    let c = logits.0.len();
    if c < 2 {
        return Err(Error::invalid("margin loss needs at least two classes"));
    }
    if y >= c {
        return Err(Error::invalid(format!("label {y} out of range for {c} classes")));
    }
    if !(kappa >= 0.0) {
        return Err(Error::invalid("kappa must be non-negative"));
    }
    Ok(())
}

/// `max(z[y] - max_{j≠y} z[j] + κ, 0)`.
pub fn margin_logit_loss(logits: &Logits, y: usize, kappa: f64) -> Result<f64> {
    check_margin(logits, y, kappa)?;
    let (_, other) = best_other(&logits.0, y);
    Ok((logits.0[y] - other + kappa).max(0.0))
}

/// Gradient of [`margin_logit_loss`] with respect to the logits; zero on the
/// clamped branch (including the kink itself).
pub fn margin_logit_grad(logits: &Logits, y: usize, kappa: f64) -> Result<Vec<f64>> {
    check_margin(logits, y, kappa)?;
    let z = &logits.0;
    let (j, other) = best_other(z, y);
    let mut g = vec![0.0; z.len()];
    if z[y] - other + kappa > 0.0 {
        g[y] = 1.0;
        g[j] = -1.0;
    }
    Ok(g)
}

pub fn total_loss(cls: f64, dist: f64, lambda: f64) -> f64 {
    cls + lambda * dist
}

/// Nearest clean index and squared distance for one adversarial point
/// (lowest index on ties).
#[inline]
pub(crate) fn nearest(p: &[f64; 3], clean: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (j, q) in clean.iter().enumerate() {
        let dx = p[0] - q[0];
        let dy = p[1] - q[1];
        let dt = p[2] - q[2];
        let d2 = dx * dx + dy * dy + dt * dt;
        if d2 < best.1 {
            best = (j, d2);
        }
    }
    best
}

/// Per adversarial point, the Euclidean distance to its nearest clean point.
pub fn min_distances(adv: &[[f64; 3]], clean: &[[f64; 3]]) -> Result<Vec<f64>> {
    if adv.is_empty() || clean.is_empty() {
        return Err(Error::EmptyStream);
    }
    Ok(adv.iter().map(|p| nearest(p, clean).1.sqrt()).collect())
}

/// Mean over adversarial points of the distance to the nearest clean point.
pub fn chamfer_coords(adv: &[[f64; 3]], clean: &[[f64; 3]]) -> Result<f64> {
    let d = min_distances(adv, clean)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Chamfer value and its subgradient with respect to each adversarial point,
/// holding the nearest-neighbor assignment fixed. Coincident points get a
/// zero subgradient.
pub fn chamfer_with_grad(
    adv: &[[f64; 3]],
    clean: &[[f64; 3]],
    grad: &mut [[f64; 3]],
) -> Result<f64> {
    if adv.is_empty() || clean.is_empty() {
        return Err(Error::EmptyStream);
    }
    if grad.len() != adv.len() {
        return Err(Error::ShapeMismatch {
            expected: adv.len(),
            got: grad.len(),
        });
    }
    let inv_n = 1.0 / adv.len() as f64;
    let mut sum = 0.0;
    for (p, g) in adv.iter().zip(grad.iter_mut()) {
        let (j, d2) = nearest(p, clean);
        let d = d2.sqrt();
        sum += d;
        if d > 0.0 {
            let q = &clean[j];
            let s = inv_n / d;
            *g = [(p[0] - q[0]) * s, (p[1] - q[1]) * s, (p[2] - q[2]) * s];
        } else {
            *g = [0.0; 3];
        }
    }
    Ok(sum * inv_n)
}

/// One-directional Chamfer distance from `adv` to `clean` on `(x, y, t)`.
pub fn chamfer_loss(adv: &EventStream, clean: &EventStream) -> Result<f64> {
    chamfer_coords(&adv.coords(), &clean.coords())
}
