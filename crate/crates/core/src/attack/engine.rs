//! The motion-aware attack loop and its λ bisection driver.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::adam::{lr_adjust, AdamState, SampleLrState};
use crate::attack::baselines::{cw_attack, fgsm_attack, ifgsm_attack};
use crate::attack::loss::chamfer_with_grad;
use crate::attack::search::BinarySearchState;
use crate::diffusion::{DiffusionMode, DiffusionPlan, VelocitySide};
use crate::error::{Error, Result};
use crate::event::{EventStream, LabeledSample};
use crate::metrics::DistanceMetrics;
use crate::victim::{LossKind, VictimParams};

/// Additive offsets on normalized `(x, y, t)`; polarity is never perturbed.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta: Vec<[f64; 3]>,
    pub init_sigma: f64,
}

impl Perturbation {
    /// Draws i.i.d. `N(0, init_sigma²)` offsets; `init_sigma = 0` gives zeros.
    pub fn gaussian(n: usize, init_sigma: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if !(init_sigma >= 0.0) {
            return Err(Error::invalid("init_sigma must be non-negative"));
        }
        let delta = if init_sigma == 0.0 {
            vec![[0.0; 3]; n]
        } else {
            let normal = Normal::new(0.0, init_sigma).map_err(|e| Error::invalid(e.to_string()))?;
            (0..n)
                .map(|_| [normal.sample(rng), normal.sample(rng), normal.sample(rng)])
                .collect()
        };
        Ok(Self { delta, init_sigma })
    }
}

/// Module switches used for ablations. All on is the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub diffusion: bool,
    pub spatial: bool,
    pub temporal: bool,
    pub causal: bool,
    pub adaptive_lr: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            diffusion: true,
            spatial: true,
            temporal: true,
            causal: true,
            adaptive_lr: true,
        }
    }
}

impl Ablation {
    /// Short tag naming the disabled modules, `full` when none are.
    pub fn tag(&self) -> String {
        let mut off = Vec::new();
        if !self.diffusion {
            off.push("no-diffusion");
        }
        if !self.spatial {
            off.push("no-spatial");
        }
        if !self.temporal {
            off.push("no-temporal");
        }
        if !self.causal {
            off.push("no-causal");
        }
        if !self.adaptive_lr {
            off.push("no-adaptive-lr");
        }
        if off.is_empty() {
            "full".to_string()
        } else {
            off.join("+")
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        let mut a = Self::default();
        if tag == "full" {
            return Ok(a);
        }
        for part in tag.split('+') {
            match part {
                "no-diffusion" => a.diffusion = false,
                "no-spatial" => a.spatial = false,
                "no-temporal" => a.temporal = false,
                "no-causal" => a.causal = false,
                "no-adaptive-lr" => a.adaptive_lr = false,
                other => return Err(Error::invalid(format!("unknown ablation {other:?}"))),
            }
        }
        Ok(a)
    }

    fn diffusion_mode(&self) -> Option<DiffusionMode> {
        (self.diffusion && (self.spatial || self.temporal)).then_some(DiffusionMode {
            spatial: self.spatial,
            temporal: self.temporal,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub iterations: usize,
    pub binary_steps: usize,
    pub eta0: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub k: usize,
    pub sigma_s: f64,
    pub sigma_t: f64,
    pub a: f64,
    pub b: f64,
    pub n_interval: usize,
    pub kappa: f64,
    pub init_sigma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
    pub fgsm_epsilon: f64,
    pub ifgsm_epsilon: f64,
    pub ifgsm_steps: usize,
    pub velocity_side: VelocitySide,
    pub ablation: Ablation,
    /// Keep the Chamfer value of every successful iterate in the result.
    pub record_candidates: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            binary_steps: 20,
            eta0: 1e-2,
            lambda_lo: 10.0,
            lambda_hi: 80.0,
            k: 10,
            sigma_s: 0.01,
            sigma_t: 0.1,
            a: 0.8,
            b: 1.2,
            n_interval: 5,
            kappa: 0.0,
            init_sigma: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            gamma: 1e-8,
            fgsm_epsilon: 0.05,
            ifgsm_epsilon: 0.05,
            ifgsm_steps: 10,
            velocity_side: VelocitySide::Neighbor,
            ablation: Ablation::default(),
            record_candidates: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.iterations == 0 || self.binary_steps == 0 {
            return bad("iterations and binary_steps must be at least 1");
        }
        if !(self.kappa >= 0.0) {
            return bad("kappa must be non-negative");
        }
        if !(self.fgsm_epsilon > 0.0 && self.ifgsm_epsilon > 0.0) || self.ifgsm_steps == 0 {
            return bad("epsilon must be positive and ifgsm_steps at least 1");
        }
        if !(self.lambda_lo >= 0.0 && self.lambda_lo < self.lambda_hi) {
            return bad("lambda bracket must satisfy 0 <= lo < hi");
        }
        if !(self.eta0 > 0.0) {
            return bad("eta0 must be positive");
        }
        if !(0.0 < self.a && self.a < 1.0 && self.b > 1.0) || self.n_interval == 0 {
            return bad("lr scaling needs 0 < a < 1 < b and n_interval >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.gamma > 0.0) {
            return bad("adam needs 0 <= beta < 1 and gamma > 0");
        }
        if self.k == 0 || !(self.sigma_s > 0.0 && self.sigma_t > 0.0) {
            return bad("diffusion needs k >= 1 and positive sigmas");
        }
        if !(self.init_sigma >= 0.0) {
            return bad("init_sigma must be non-negative");
        }
        Ok(())
    }

    /// The diffusion plan for `clean`, or `None` when diffusion is disabled.
    pub fn diffusion_plan(&self, clean: &EventStream) -> Result<Option<DiffusionPlan>> {
        match self.ablation.diffusion_mode() {
            None => Ok(None),
            Some(mode) => DiffusionPlan::build(
                clean,
                self.k,
                self.sigma_s,
                self.sigma_t,
                self.ablation.causal,
                self.velocity_side,
                mode,
            )
            .map(Some),
        }
    }
}

/// One bisection step of the λ search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaStep {
    pub step: usize,
    pub lambda: f64,
    pub lo: f64,
    pub hi: f64,
    pub success: bool,
    pub chamfer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub label: usize,
    #[serde(skip)]
    pub best_adv: Option<EventStream>,
    pub success: bool,
    pub predicted: Option<usize>,
    pub metrics: Option<DistanceMetrics>,
    pub lambda_trace: Vec<LambdaStep>,
    pub iterations_used: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub candidate_log: Vec<f64>,
}

impl AttackResult {
    pub(crate) fn failure(label: usize, iterations_used: usize) -> Self {
        Self {
            label,
            best_adv: None,
            success: false,
            predicted: None,
            metrics: None,
            lambda_trace: Vec::new(),
            iterations_used,
            candidate_log: Vec::new(),
        }
    }

    /// Builds a result from a misclassified adversarial stream.
    pub(crate) fn from_adv(
        label: usize,
        adv: EventStream,
        predicted: usize,
        clean: &EventStream,
        iterations_used: usize,
    ) -> Result<Self> {
        let metrics = DistanceMetrics::between(&adv, clean)?;
        Ok(Self {
            label,
            best_adv: Some(adv),
            success: true,
            predicted: Some(predicted),
            metrics: Some(metrics),
            lambda_trace: Vec::new(),
            iterations_used,
            candidate_log: Vec::new(),
        })
    }
}

/// Best successful iterate found by one inner run.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub coords: Vec<[f64; 3]>,
    pub chamfer: f64,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerOutcome {
    pub best: Option<Candidate>,
    pub iterations: usize,
    pub candidate_log: Vec<f64>,
}

impl InnerOutcome {
    pub fn success(&self) -> bool {
        self.best.is_some()
    }
}

#[inline]
fn clip_into(clean: &[[f64; 3]], pert: &[[f64; 3]], adv: &mut [[f64; 3]], mask: &mut [[bool; 3]]) {
    for (((c, p), a), m) in clean.iter().zip(pert).zip(adv.iter_mut()).zip(mask.iter_mut()) {
        for d in 0..3 {
            let v = c[d] + p[d];
            let cl = v.clamp(0.0, 1.0);
            a[d] = cl;
            m[d] = cl == v;
        }
    }
}

struct Tracker<'a> {
    clean: &'a [[f64; 3]],
    label: usize,
    record: bool,
    best: Option<Candidate>,
    log: Vec<f64>,
}

impl Tracker<'_> {
    fn offer(&mut self, adv: &[[f64; 3]], predicted: usize, chamfer: f64) {
        if predicted == self.label {
            return;
        }
        if self.record {
            self.log.push(chamfer);
        }
        if self.best.as_ref().map_or(true, |b| chamfer < b.chamfer) {
            self.best = Some(Candidate {
                coords: adv.to_vec(),
                chamfer,
                predicted,
            });
        }
    }
}

/// Runs `I` optimizer iterations at a fixed λ and returns the successful
/// iterate with the smallest Chamfer distance, if any.
#[allow(clippy::too_many_arguments)]
pub fn attack_inner(
    victim: &VictimParams,
    clean: &EventStream,
    label: usize,
    lambda: f64,
    cfg: &AttackConfig,
    plan: Option<&DiffusionPlan>,
    seed: u64,
) -> Result<InnerOutcome> {
    if !clean.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let n = clean.len();
    let clean_xyz = clean.coords();
    let mut feats = clean.features();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pert = Perturbation::gaussian(n, cfg.init_sigma, &mut rng)?.delta;
    let mut diffused = vec![[0.0; 3]; n];
    let mut adv = vec![[0.0; 3]; n];
    let mut mask = vec![[true; 3]; n];
    let mut dist_grad = vec![[0.0; 3]; n];
    let mut grad = vec![0.0; 3 * n];
    let mut update = vec![0.0; 3 * n];
    let mut adam = AdamState::new(3 * n, cfg.beta1, cfg.beta2, cfg.gamma);
    let mut lr = SampleLrState {
        eta: cfg.eta0,
        a: cfg.a,
        b: cfg.b,
        n_interval: cfg.n_interval,
    };
    let mut tracker = Tracker {
        clean: &clean_xyz,
        label,
        record: cfg.record_candidates,
        best: None,
        log: Vec::new(),
    };
    let loss = LossKind::Margin { kappa: cfg.kappa };

    for i in 1..=cfg.iterations {
        clip_into(tracker.clean, &pert, &mut adv, &mut mask);
        for (f, a) in feats.iter_mut().zip(&adv) {
            f[..3].copy_from_slice(a);
        }
        let (cls, g_in, logits) = victim.loss_and_input_grad(&feats, loss, label)?;
        let dist = chamfer_with_grad(&adv, tracker.clean, &mut dist_grad)?;
        if !(cls.is_finite() && dist.is_finite()) {
            return Err(Error::NonFinite("attack loss"));
        }
        let predicted = logits.argmax();
        tracker.offer(&adv, predicted, dist);

        // the current iterate is the result of i-1 updates; rescale on the
        // period boundary before taking the next step
        if cfg.ablation.adaptive_lr && i > 1 {
            lr = lr_adjust(lr, predicted != label, i - 1);
        }

        for e in 0..n {
            for d in 0..3 {
                grad[3 * e + d] = if mask[e][d] {
                    g_in[e][d] + lambda * dist_grad[e][d]
                } else {
                    0.0
                };
            }
        }
        adam.step(&grad, lr.eta, &mut update);
        for (p, u) in pert.iter_mut().zip(update.chunks_exact(3)) {
            p[0] += u[0];
            p[1] += u[1];
            p[2] += u[2];
        }
        if let Some(plan) = plan {
            plan.apply(&pert, &mut diffused)?;
            std::mem::swap(&mut pert, &mut diffused);
        }
    }

    // the last update has not been evaluated yet
    clip_into(tracker.clean, &pert, &mut adv, &mut mask);
    for (f, a) in feats.iter_mut().zip(&adv) {
        f[..3].copy_from_slice(a);
    }
    let predicted = victim.logits_of(&feats)?.argmax();
    if predicted != label {
        let dist = crate::attack::loss::chamfer_coords(&adv, tracker.clean)?;
        tracker.offer(&adv, predicted, dist);
    }

    Ok(InnerOutcome {
        best: tracker.best,
        iterations: cfg.iterations,
        candidate_log: tracker.log,
    })
}

/// Seed for bisection step `j`, decorrelated from neighboring steps.
pub(crate) fn step_seed(seed: u64, j: usize) -> u64 {
    let mut z = seed ^ (j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Motion-aware attack: bisection over λ around repeated inner runs; returns
/// the successful candidate with the smallest Chamfer distance overall.
pub fn ma_adv_attack(
    victim: &VictimParams,
    sample: &LabeledSample,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackResult> {
    cfg.validate()?;
    let clean = &sample.stream;
    let plan = cfg.diffusion_plan(clean)?;
    let mut search = BinarySearchState::new(cfg.lambda_lo, cfg.lambda_hi, cfg.binary_steps);
    let mut best: Option<Candidate> = None;
    let mut trace = Vec::with_capacity(cfg.binary_steps);
    let mut log = Vec::new();
    let mut iterations_used = 0;
    while !search.is_done() {
        let outcome = attack_inner(
            victim,
            clean,
            sample.label,
            search.lambda,
            cfg,
            plan.as_ref(),
            step_seed(seed, search.step_j),
        )?;
        iterations_used += outcome.iterations;
        log.extend_from_slice(&outcome.candidate_log);
        trace.push(LambdaStep {
            step: search.step_j + 1,
            lambda: search.lambda,
            lo: search.lo,
            hi: search.hi,
            success: outcome.success(),
            chamfer: outcome.best.as_ref().map(|c| c.chamfer),
        });
        search.update(outcome.success());
        if let Some(c) = outcome.best {
            if best.as_ref().map_or(true, |b| c.chamfer < b.chamfer) {
                best = Some(c);
            }
        }
    }
    let mut result = match best {
        None => AttackResult::failure(sample.label, iterations_used),
        Some(c) => {
            let adv = clean.with_coords(&c.coords)?;
            AttackResult::from_adv(sample.label, adv, c.predicted, clean, iterations_used)?
        }
    };
    result.lambda_trace = trace;
    result.candidate_log = log;
    Ok(result)
}

/// Attack methods compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Fgsm,
    Ifgsm,
    Cw,
    MaAdv,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Fgsm, Method::Ifgsm, Method::Cw, Method::MaAdv];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fgsm => "fgsm",
            Method::Ifgsm => "ifgsm",
            Method::Cw => "cw",
            Method::MaAdv => "ma-adv",
        }
    }

    pub fn run(
        self,
        victim: &VictimParams,
        sample: &LabeledSample,
        cfg: &AttackConfig,
        seed: u64,
    ) -> Result<AttackResult> {
        match self {
            Method::Fgsm => fgsm_attack(victim, sample, cfg.fgsm_epsilon, seed),
            Method::Ifgsm => ifgsm_attack(victim, sample, cfg.ifgsm_epsilon, cfg.ifgsm_steps, seed),
            Method::Cw => cw_attack(victim, sample, cfg, seed),
            Method::MaAdv => ma_adv_attack(victim, sample, cfg, seed),
        }
    }

    /// Attacks every sample, in parallel on the current rayon pool. Sample
    /// `i` uses seed `seed ^ i`; results keep the input order.
    pub fn run_batch(
        self,
        victim: &VictimParams,
        samples: &[LabeledSample],
        cfg: &AttackConfig,
        seed: u64,
    ) -> Result<Vec<AttackResult>> {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| self.run(victim, s, cfg, seed ^ i as u64))
            .collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}
