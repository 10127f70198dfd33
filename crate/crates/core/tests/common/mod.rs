//! Shared fixtures, brute-force references and the property checks that the
//! acceptance target reports on.
#![allow(dead_code)]

use evadv::attack::{adam_step, lr_adjust, AdamState, BinarySearchState, SampleLrState};
use evadv::diffusion::{diffuse, diffusion_weights, event_velocity, VelocitySide};
use evadv::event::{normalize, Event, EventStream, Polarity, SensorDims};
use evadv::metrics::{chamfer_metric, hausdorff_metric};
use evadv::neighbor::{knn_spatial, knn_temporal_causal, NeighborIndex};
use evadv::victim::{LossKind, VictimParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn polarity(rng: &mut impl Rng) -> Polarity {
    if rng.gen_bool(0.5) {
        Polarity::Positive
    } else {
        Polarity::Negative
    }
}

/// Normalized stream of `n >= 2` uniform events on a 128 × 128 sensor.
pub fn random_stream(rng: &mut impl Rng, n: usize) -> EventStream {
    let mut events: Vec<Event> = (0..n)
        .map(|_| {
            Event::new(
                rng.gen_range(0.0..128.0),
                rng.gen_range(0.0..128.0),
                rng.gen_range(0.0..1000.0),
                polarity(rng),
            )
        })
        .collect();
    events[0].t = 0.0;
    events[n - 1].t = 1000.0;
    normalize(&EventStream::new(events, SensorDims::new(128.0, 128.0))).unwrap()
}

/// Like [`random_stream`] but on a coarse lattice, so distances and
/// timestamps tie often.
pub fn lattice_stream(rng: &mut impl Rng, n: usize) -> EventStream {
    let mut events: Vec<Event> = (0..n)
        .map(|_| {
            Event::new(
                rng.gen_range(0..8) as f64 * 16.0,
                rng.gen_range(0..8) as f64 * 16.0,
                rng.gen_range(0..8) as f64 * 100.0,
                polarity(rng),
            )
        })
        .collect();
    events[0].t = 0.0;
    events[n - 1].t = 800.0;
    normalize(&EventStream::new(events, SensorDims::new(128.0, 128.0))).unwrap()
}

pub fn brute_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dt = a[2] - b[2];
    (dx * dx + dy * dy + dt * dt).sqrt()
}

/// Sorts every candidate by `(distance, index)` and keeps the first `k`,
/// padding with `(self, 0)`.
fn brute_rows(coords: &[[f64; 3]], k: usize, admit: impl Fn(usize, usize) -> bool) -> (Vec<usize>, Vec<f64>) {
    let mut idx = Vec::new();
    let mut dist = Vec::new();
    for n in 0..coords.len() {
        let mut cand: Vec<(f64, usize)> = (0..coords.len())
            .filter(|&j| j != n && admit(n, j))
            .map(|j| (brute_dist(&coords[n], &coords[j]), j))
            .collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cand.truncate(k);
        while cand.len() < k {
            cand.push((0.0, n));
        }
        for (d, j) in cand {
            idx.push(j);
            dist.push(d);
        }
    }
    (idx, dist)
}

pub fn brute_knn_spatial(coords: &[[f64; 3]], k: usize) -> (Vec<usize>, Vec<f64>) {
    brute_rows(coords, k, |_, _| true)
}

pub fn brute_knn_causal(coords: &[[f64; 3]], k: usize) -> Vec<usize> {
    brute_rows(coords, k, |n, j| coords[j][2] >= coords[n][2]).0
}

pub fn brute_min_dists(adv: &[[f64; 3]], clean: &[[f64; 3]]) -> Vec<f64> {
    adv.iter()
        .map(|p| clean.iter().map(|q| brute_dist(p, q)).fold(f64::INFINITY, f64::min))
        .collect()
}

pub fn brute_chamfer(adv: &[[f64; 3]], clean: &[[f64; 3]]) -> f64 {
    let d = brute_min_dists(adv, clean);
    d.iter().sum::<f64>() / d.len() as f64
}

pub fn brute_hausdorff(adv: &[[f64; 3]], clean: &[[f64; 3]]) -> f64 {
    brute_min_dists(adv, clean).into_iter().fold(0.0, f64::max)
}

/// Copy of `clean` with a random subset of events displaced, some by
/// exactly zero.
pub fn jittered(rng: &mut impl Rng, clean: &EventStream, scale: f64) -> EventStream {
    let coords: Vec<[f64; 3]> = clean
        .coords()
        .into_iter()
        .map(|c| {
            if rng.gen_bool(0.5) {
                c.map(|v| (v + rng.gen_range(-scale..scale)).clamp(0.0, 1.0))
            } else {
                c
            }
        })
        .collect();
    clean.with_coords(&coords).unwrap()
}

/// Outcome of one property check: a one-line summary either way.
pub type Check = Result<String, String>;

/// KNN tables and distance metrics against the brute-force references.
pub fn check_oracles(trials: usize) -> Check {
    let mut rng = rng(0x0AC1E);
    for trial in 0..trials {
        let n = rng.gen_range(2..=256);
        let k = rng.gen_range(1..=12);
        let clean = if trial % 2 == 0 {
            random_stream(&mut rng, n)
        } else {
            lattice_stream(&mut rng, n)
        };
        let coords = clean.coords();
        let (si, sd) = knn_spatial(&clean, k).map_err(|e| e.to_string())?;
        let (bi, bd) = brute_knn_spatial(&coords, k);
        if si != bi || sd != bd {
            return Err(format!("spatial KNN differs on trial {trial} (n={n}, k={k})"));
        }
        let ti = knn_temporal_causal(&clean, k).map_err(|e| e.to_string())?;
        if ti != brute_knn_causal(&coords, k) {
            return Err(format!("causal KNN differs on trial {trial} (n={n}, k={k})"));
        }
        let index = NeighborIndex::build(&clean, k, true).map_err(|e| e.to_string())?;
        if index.spatial_idx != bi || index.temporal_idx != ti {
            return Err(format!("NeighborIndex disagrees with KNN on trial {trial}"));
        }
        let adv = jittered(&mut rng, &clean, 0.05);
        let a = adv.coords();
        let c = chamfer_metric(&adv, &clean).map_err(|e| e.to_string())?;
        let h = hausdorff_metric(&adv, &clean).map_err(|e| e.to_string())?;
        if c != brute_chamfer(&a, &coords) || h != brute_hausdorff(&a, &coords) {
            return Err(format!("chamfer/hausdorff differ on trial {trial}"));
        }
    }
    Ok(format!("{trials} streams, exact agreement"))
}

pub struct GradStats {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
}

/// Coordinates where either gradient is below this are compared absolutely.
const GRAD_FLOOR: f64 = 1e-7;

/// Pooling channels whose winner is within this of the runner-up are treated
/// as near-ties.
const TIE_GAP: f64 = 1e-4;

fn near_tie_events(params: &VictimParams, feats: &[[f64; 4]]) -> Vec<bool> {
    let cache = params.forward_cached(feats).unwrap();
    let mut flagged = vec![false; feats.len()];
    for (c, &winner) in cache.pooled_argmax().iter().enumerate() {
        let top = cache.event_activations(winner)[c];
        for e in 0..feats.len() {
            if e != winner && top - cache.event_activations(e)[c] < TIE_GAP {
                flagged[e] = true;
                flagged[winner] = true;
            }
        }
    }
    flagged
}

/// Margin loss is non-smooth where the runner-up logit changes or the clamp
/// engages.
fn margin_near_kink(logits: &[f64], y: usize, kappa: f64) -> bool {
    let mut others: Vec<f64> = logits.iter().enumerate().filter(|&(i, _)| i != y).map(|(_, &v)| v).collect();
    others.sort_by(|a, b| b.total_cmp(a));
    let runner_up_tie = others.len() > 1 && (others[0] - others[1]).abs() < TIE_GAP;
    runner_up_tie || (logits[y] - others[0] + kappa).abs() < TIE_GAP
}

/// Central differences (h = 1e-5) against the analytic input gradient.
pub fn gradient_stats(instances: usize, n: usize, classes: usize) -> GradStats {
    let h = 1e-5;
    let mut rng = rng(0x6AAD);
    let mut stats = GradStats {
        checked: 0,
        skipped: 0,
        max_rel: 0.0,
    };
    let mut done = 0;
    while done < instances {
        let params = VictimParams::init(classes, rng.gen());
        let stream = random_stream(&mut rng, n);
        let feats = stream.features();
        let label = rng.gen_range(0..classes);
        let logits = params.logits_of(&feats).unwrap().0;
        let kappa = logits.iter().cloned().fold(0.0, f64::max) - logits[label] + 0.5;
        if margin_near_kink(&logits, label, kappa) {
            continue;
        }
        done += 1;
        let ties = near_tie_events(&params, &feats);
        // κ keeps the margin branch active so its gradient is non-trivial
        for loss in [LossKind::CrossEntropy, LossKind::Margin { kappa }] {
            let (_, grad, _) = params.loss_and_input_grad(&feats, loss, label).unwrap();
            let value = |f: &[[f64; 4]]| params.loss_and_input_grad(f, loss, label).unwrap().0;
            for e in 0..n {
                if ties[e] {
                    stats.skipped += 4;
                    continue;
                }
                for d in 0..4 {
                    let mut up = feats.clone();
                    up[e][d] += h;
                    let mut dn = feats.clone();
                    dn[e][d] -= h;
                    let fd = (value(&up) - value(&dn)) / (2.0 * h);
                    let a = grad[e][d];
                    let scale = a.abs().max(fd.abs());
                    let rel = if scale < GRAD_FLOOR {
                        (a - fd).abs() / GRAD_FLOOR
                    } else {
                        (a - fd).abs() / scale
                    };
                    stats.max_rel = stats.max_rel.max(rel);
                    stats.checked += 1;
                }
            }
        }
    }
    stats
}

pub fn check_gradients() -> Check {
    let s = gradient_stats(20, 32, 4);
    let summary = format!(
        "{} coordinates checked, {} skipped near ties, max relative error {:.2e}",
        s.checked, s.skipped, s.max_rel
    );
    if s.max_rel < 1e-4 && s.checked > s.skipped {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn random_field(rng: &mut impl Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect()
}

fn variance(v: &[[f64; 3]], d: usize) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().map(|p| p[d]).sum::<f64>() / n;
    v.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Fixed point, linearity, boundedness and variance reduction on random
/// fields over random neighbor graphs.
pub fn check_diffusion(trials: usize) -> Check {
    let mut rng = rng(0xD1FF);
    let (mut fixed, mut linear) = (0.0f64, 0.0f64);
    for trial in 0..trials {
        let n = rng.gen_range(16..=128);
        let clean = random_stream(&mut rng, n);
        let index = NeighborIndex::build(&clean, 10, trial % 4 != 3).unwrap();
        let vel = event_velocity(&clean);
        let side = if trial % 2 == 0 {
            VelocitySide::Neighbor
        } else {
            VelocitySide::Query
        };
        let weights = diffusion_weights(&index, &vel, 0.01, 0.1, side).unwrap();
        let run = |p: &[[f64; 3]]| diffuse(p, &index, &weights).unwrap();

        let c = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        for o in run(&vec![c; n]) {
            for d in 0..3 {
                fixed = fixed.max((o[d] - c[d]).abs());
            }
        }

        let (p, q) = (random_field(&mut rng, n), random_field(&mut rng, n));
        let (alpha, beta) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let mix: Vec<[f64; 3]> = p
            .iter()
            .zip(&q)
            .map(|(a, b)| [0, 1, 2].map(|d| alpha * a[d] + beta * b[d]))
            .collect();
        let (dm, dp, dq) = (run(&mix), run(&p), run(&q));
        for i in 0..n {
            for d in 0..3 {
                linear = linear.max((dm[i][d] - (alpha * dp[i][d] + beta * dq[i][d])).abs());
            }
        }

        for d in 0..3 {
            let lo = p.iter().map(|v| v[d]).fold(f64::INFINITY, f64::min);
            let hi = p.iter().map(|v| v[d]).fold(f64::NEG_INFINITY, f64::max);
            if dp.iter().any(|v| v[d] < lo - 1e-15 || v[d] > hi + 1e-15) {
                return Err(format!("output leaves the input range on trial {trial}"));
            }
            if variance(&dp, d) > variance(&p, d) {
                return Err(format!("variance grew on trial {trial}, dimension {d}"));
            }
        }
    }
    if fixed > 1e-12 {
        return Err(format!("fixed-point error {fixed:.2e}"));
    }
    if linear > 1e-10 {
        return Err(format!("linearity error {linear:.2e}"));
    }
    Ok(format!(
        "{trials} fields: fixed-point error {fixed:.1e}, linearity error {linear:.1e}, bounded, variance reduced"
    ))
}

/// Adam, learning-rate scaling and bisection against hand-computed values.
pub fn check_optimizer_units() -> Check {
    let fresh = AdamState::new(1, 0.9, 0.999, 1e-8);
    let (_, u) = adam_step(&fresh, &[0.0], 0.01);
    if u != [0.0] {
        return Err(format!("zero gradient moved by {u:?}"));
    }
    // first step: m̂ = g and √v̂ = |g|
    let (s1, u) = adam_step(&fresh, &[2.0], 0.01);
    let expected = -0.01 * 2.0 / (2.0 + 1e-8);
    if (u[0] - expected).abs() > 1e-15 || s1.step != 1 {
        return Err(format!("first Adam step {} (expected {expected})", u[0]));
    }
    let (s2, u2) = adam_step(&s1, &[2.0], 0.01);
    // m = 0.19 and v = 0.007996 after two steps; both bias corrections give 2 and 4
    let m_hat = (0.1 * 0.9 * 2.0 + 0.1 * 2.0) / (1.0 - 0.9f64.powi(2));
    let v_hat = (0.001 * 0.999 * 4.0 + 0.001 * 4.0) / (1.0 - 0.999f64.powi(2));
    let expected2 = -0.01 * m_hat / (v_hat.sqrt() + 1e-8);
    if (u2[0] - expected2).abs() > 1e-15 || u2[0].abs() > 0.01 + 1e-9 || s2.step != 2 {
        return Err(format!("second Adam step {} (expected {expected2})", u2[0]));
    }

    let lr = SampleLrState {
        eta: 0.01,
        a: 0.8,
        b: 1.2,
        n_interval: 5,
    };
    let ok = lr_adjust(lr, true, 5).eta == 0.01 * 0.8
        && (lr_adjust(lr, true, 5).eta - 0.008).abs() < 1e-15
        && lr_adjust(lr, false, 5).eta == 0.01 * 1.2
        && (lr_adjust(lr, false, 5).eta - 0.012).abs() < 1e-15
        && lr_adjust(lr, true, 4).eta == 0.01
        && lr_adjust(lr, false, 7).eta == 0.01
        && lr_adjust(lr, true, 10).eta == 0.01 * 0.8;
    if !ok {
        return Err("learning-rate scaling differs from 0.008 / 0.012 / unchanged".into());
    }

    let mut search = BinarySearchState::new(10.0, 80.0, 20);
    let mut seen = vec![search.lambda];
    search.update(true);
    seen.push(search.lambda);
    search.update(false);
    seen.push(search.lambda);
    if seen != [45.0, 62.5, 53.75] {
        return Err(format!("bisection sequence {seen:?}"));
    }
    let mut search = BinarySearchState::new(10.0, 80.0, 20);
    let mut flip = false;
    while !search.is_done() {
        search.update(flip);
        flip = !flip;
    }
    if (search.width() - 70.0 / 2f64.powi(20)).abs() > 1e-9 {
        return Err(format!("bracket width {} after 20 steps", search.width()));
    }
    Ok("Adam, lr scaling and bisection match hand values".into())
}
