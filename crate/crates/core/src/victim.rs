//! A small permutation-invariant point classifier with exact reverse-mode
//! gradients, used as the attack victim.
//!
//! Each event's `(x, y, t, p)` passes through a shared `4 → 32 → 64` tanh MLP,
//! features are max-pooled over events, and a `64 → 32 → C` head (tanh hidden,
//! linear output) produces logits. Max-pool ties go to the lowest event index.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::adam::AdamState;
use crate::attack::loss::{margin_logit_grad, margin_logit_loss};
use crate::error::{Error, Result};
use crate::event::{EventStream, LabeledSample};

pub const IN_DIM: usize = 4;
pub const H1: usize = 32;
pub const H2: usize = 64;
pub const H3: usize = 32;

/// Class scores for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    /// Index of the largest logit; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Scalar objective whose input gradient is requested.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    Margin { kappa: f64 },
}

/// Shape of one dense layer, `outputs × inputs` weights plus `outputs` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    fn len(self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// All victim weights in one flat vector, layer by layer (`W` row-major, then `b`).
#[derive(Debug, Clone, PartialEq)]
pub struct VictimParams {
    pub classes: usize,
    pub data: Vec<f64>,
}

struct Layer<'a> {
    shape: LayerShape,
    w: &'a [f64],
    b: &'a [f64],
}

impl Layer<'_> {
    #[inline]
    fn apply_tanh(&self, x: &[f64], out: &mut [f64]) {
        let n_in = self.shape.inputs;
        for (o, (row, &b)) in out.iter_mut().zip(self.w.chunks_exact(n_in).zip(self.b)) {
            *o = (dot(row, x) + b).tanh();
        }
    }

    #[inline]
    fn apply_linear(&self, x: &[f64], out: &mut [f64]) {
        let n_in = self.shape.inputs;
        for (o, (row, &b)) in out.iter_mut().zip(self.w.chunks_exact(n_in).zip(self.b)) {
            *o = dot(row, x) + b;
        }
    }

    /// `dx += Wᵀ dy`
    #[inline]
    fn back_input(&self, dy: &[f64], dx: &mut [f64]) {
        let n_in = self.shape.inputs;
        for (row, &g) in self.w.chunks_exact(n_in).zip(dy) {
            if g != 0.0 {
                for (d, &w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds `dy ⊗ x` into a weight gradient block and `dy` into its bias block.
#[inline]
fn accumulate_outer(gw: &mut [f64], gb: &mut [f64], dy: &[f64], x: &[f64]) {
    let n_in = x.len();
    for ((row, b), &g) in gw.chunks_exact_mut(n_in).zip(gb.iter_mut()).zip(dy) {
        if g != 0.0 {
            *b += g;
            for (w, &xi) in row.iter_mut().zip(x) {
                *w += g * xi;
            }
        }
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    h1: Vec<f64>,
    h2: Vec<f64>,
    argmax: Vec<usize>,
    pooled: Vec<f64>,
    h3: Vec<f64>,
    pub logits: Logits,
}

impl ForwardCache {
    /// Event index selected by the max-pool for each channel.
    pub fn pooled_argmax(&self) -> &[usize] {
        &self.argmax
    }

    /// Pre-pool activations of event `e`.
    pub fn event_activations(&self, e: usize) -> &[f64] {
        &self.h2[e * H2..(e + 1) * H2]
    }
}

impl VictimParams {
    pub fn shapes(classes: usize) -> [LayerShape; 4] {
        [
            LayerShape { inputs: IN_DIM, outputs: H1 },
            LayerShape { inputs: H1, outputs: H2 },
            LayerShape { inputs: H2, outputs: H3 },
            LayerShape { inputs: H3, outputs: classes },
        ]
    }

    pub fn param_count(classes: usize) -> usize {
        Self::shapes(classes).iter().map(|s| s.len()).sum()
    }

    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            data: vec![0.0; Self::param_count(classes)],
        }
    }

    /// Xavier-uniform weights and zero biases.
    pub fn init(classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(Self::param_count(classes));
        for s in Self::shapes(classes) {
            let bound = (6.0 / (s.inputs + s.outputs) as f64).sqrt();
            data.extend((0..s.inputs * s.outputs).map(|_| rng.gen_range(-bound..bound)));
            data.extend(std::iter::repeat(0.0).take(s.outputs));
        }
        Self { classes, data }
    }

    pub fn from_flat(classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("victim needs at least two classes"));
        }
        let expected = Self::param_count(classes);
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self { classes, data })
    }

    fn layers(&self) -> [Layer<'_>; 4] {
        let shapes = Self::shapes(self.classes);
        let mut rest = self.data.as_slice();
        shapes.map(|shape| {
            let (w, r) = rest.split_at(shape.inputs * shape.outputs);
            let (b, r) = r.split_at(shape.outputs);
            rest = r;
            Layer { shape, w, b }
        })
    }

    fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("victim parameters"))
        }
    }

    /// Forward pass on raw feature rows, keeping activations.
    pub fn forward_cached(&self, feats: &[[f64; 4]]) -> Result<ForwardCache> {
        self.check_finite()?;
        if feats.is_empty() {
            return Err(Error::EmptyStream);
        }
        if !feats.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("victim input"));
        }
        let [l1, l2, l3, l4] = self.layers();
        let n = feats.len();
        let mut h1 = vec![0.0; n * H1];
        let mut h2 = vec![0.0; n * H2];
        let mut pooled = vec![f64::NEG_INFINITY; H2];
        let mut argmax = vec![0usize; H2];
        for (e, f) in feats.iter().enumerate() {
            let a1 = &mut h1[e * H1..(e + 1) * H1];
            l1.apply_tanh(f, a1);
            let a2 = &mut h2[e * H2..(e + 1) * H2];
            l2.apply_tanh(a1, a2);
            for (c, &v) in a2.iter().enumerate() {
                // strict comparison keeps the lowest index on ties
                if v > pooled[c] {
                    pooled[c] = v;
                    argmax[c] = e;
                }
            }
        }
        let mut h3 = vec![0.0; H3];
        l3.apply_tanh(&pooled, &mut h3);
        let mut logits = vec![0.0; self.classes];
        l4.apply_linear(&h3, &mut logits);
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(ForwardCache {
            h1,
            h2,
            argmax,
            pooled,
            h3,
            logits: Logits(logits),
        })
    }

    pub fn logits_of(&self, feats: &[[f64; 4]]) -> Result<Logits> {
        Ok(self.forward_cached(feats)?.logits)
    }

    /// Logits for a normalized stream.
    pub fn forward(&self, stream: &EventStream) -> Result<Logits> {
        if !stream.is_normalized() {
            return Err(Error::NotNormalized);
        }
        self.logits_of(&stream.features())
    }

    pub fn predict(&self, stream: &EventStream) -> Result<usize> {
        Ok(self.forward(stream)?.argmax())
    }

    /// Back-propagates `dlogits` to every input row. When `grads` is given,
    /// parameter gradients are accumulated into it (same layout as `data`).
    pub fn backward(
        &self,
        feats: &[[f64; 4]],
        cache: &ForwardCache,
        dlogits: &[f64],
        grads: Option<&mut [f64]>,
    ) -> Vec<[f64; 4]> {
        let mut grads = grads;
        let [l1, l2, l3, l4] = self.layers();
        let shapes = Self::shapes(self.classes);
        // offsets of each layer's W and b inside the flat gradient
        let mut offs = [0usize; 4];
        let mut acc = 0;
        for (o, s) in offs.iter_mut().zip(shapes) {
            *o = acc;
            acc += s.len();
        }
        let mut layer_grad = |l: usize, dy: &[f64], x: &[f64]| {
            if let Some(g) = grads.as_deref_mut() {
                let s = shapes[l];
                let (gw, gb) = g[offs[l]..offs[l] + s.len()].split_at_mut(s.inputs * s.outputs);
                accumulate_outer(gw, gb, dy, x);
            }
        };

        // head
        layer_grad(3, dlogits, &cache.h3);
        let mut dh3 = vec![0.0; H3];
        l4.back_input(dlogits, &mut dh3);
        for (d, &h) in dh3.iter_mut().zip(&cache.h3) {
            *d *= 1.0 - h * h;
        }
        layer_grad(2, &dh3, &cache.pooled);
        let mut dpool = vec![0.0; H2];
        l3.back_input(&dh3, &mut dpool);

        // route pooled gradients to the argmax events
        let mut channels: Vec<usize> = (0..H2).filter(|&c| dpool[c] != 0.0).collect();
        channels.sort_by_key(|&c| cache.argmax[c]);
        let mut dx = vec![[0.0; 4]; feats.len()];
        let mut dpre2 = vec![0.0; H2];
        let mut dpre1 = vec![0.0; H1];
        let mut i = 0;
        while i < channels.len() {
            let e = cache.argmax[channels[i]];
            dpre2.iter_mut().for_each(|v| *v = 0.0);
            let h2 = &cache.h2[e * H2..(e + 1) * H2];
            while i < channels.len() && cache.argmax[channels[i]] == e {
                let c = channels[i];
                dpre2[c] = dpool[c] * (1.0 - h2[c] * h2[c]);
                i += 1;
            }
            let h1 = &cache.h1[e * H1..(e + 1) * H1];
            layer_grad(1, &dpre2, h1);
            dpre1.iter_mut().for_each(|v| *v = 0.0);
            l2.back_input(&dpre2, &mut dpre1);
            for (d, &h) in dpre1.iter_mut().zip(h1) {
                *d *= 1.0 - h * h;
            }
            layer_grad(0, &dpre1, &feats[e]);
            l1.back_input(&dpre1, &mut dx[e]);
        }
        dx
    }

    /// Loss value, input gradient and logits for one sample.
    pub fn loss_and_input_grad(
        &self,
        feats: &[[f64; 4]],
        loss: LossKind,
        label: usize,
    ) -> Result<(f64, Vec<[f64; 4]>, Logits)> {
        let cache = self.forward_cached(feats)?;
        let (value, dlogits) = loss_grad(&cache.logits, loss, label)?;
        let grad = self.backward(feats, &cache, &dlogits, None);
        Ok((value, grad, cache.logits))
    }
}

/// Loss value and its gradient with respect to the logits.
pub fn loss_grad(logits: &Logits, loss: LossKind, label: usize) -> Result<(f64, Vec<f64>)> {
    let c = logits.0.len();
    if label >= c {
        return Err(Error::invalid(format!("label {label} out of range for {c} classes")));
    }
    match loss {
        LossKind::CrossEntropy => Ok(cross_entropy_grad(&logits.0, label)),
        LossKind::Margin { kappa } => {
            let value = margin_logit_loss(logits, label, kappa)?;
            Ok((value, margin_logit_grad(logits, label, kappa)?))
        }
    }
}

/// Softmax cross-entropy and its logit gradient.
pub fn cross_entropy_grad(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + m - z[label];
    let mut g: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    g[label] -= 1.0;
    (loss, g)
}

/// Scalar loss and its exact gradient with respect to every `(x, y, t, p)`.
pub fn backward_input(
    params: &VictimParams,
    stream: &EventStream,
    loss: LossKind,
    label: usize,
) -> Result<(f64, Vec<[f64; 4]>)> {
    if !stream.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let (value, grad, _) = params.loss_and_input_grad(&stream.features(), loss, label)?;
    Ok((value, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            lr: 1e-2,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub seed: u64,
    pub classes: usize,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedVictim {
    pub params: VictimParams,
    pub report: TrainReport,
}

/// Fraction of samples the victim labels correctly.
pub fn accuracy(params: &VictimParams, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let mut hits = 0usize;
    for s in samples {
        if params.predict(&s.stream)? == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Mini-batch Adam on softmax cross-entropy. Deterministic in `seed`.
pub fn train(
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedVictim> {
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::invalid("batch_size and lr must be positive"));
    }
    let classes = train_set
        .iter()
        .chain(val_set)
        .map(|s| s.label + 1)
        .max()
        .unwrap_or(0);
    if classes < 2 {
        return Err(Error::invalid("training needs at least two classes"));
    }
    let feats: Vec<Vec<[f64; 4]>> = train_set
        .iter()
        .map(|s| {
            if s.stream.is_normalized() {
                Ok(s.stream.features())
            } else {
                Err(Error::NotNormalized)
            }
        })
        .collect::<Result<_>>()?;
    let n_events = feats[0].len();
    if feats.iter().any(|f| f.len() != n_events) {
        return Err(Error::invalid("training samples must share one event count"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = VictimParams::init(classes, rng.gen());
    let mut adam = AdamState::new(params.data.len(), 0.9, 0.999, 1e-8);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grads = vec![0.0; params.data.len()];
    let mut update = vec![0.0; params.data.len()];
    let mut last_epoch_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let cache = params.forward_cached(&feats[i])?;
                let (loss, mut dlogits) = cross_entropy_grad(&cache.logits.0, train_set[i].label);
                epoch_loss += loss;
                let scale = 1.0 / batch.len() as f64;
                dlogits.iter_mut().for_each(|d| *d *= scale);
                params.backward(&feats[i], &cache, &dlogits, Some(&mut grads));
            }
            adam.step(&grads, cfg.lr, &mut update);
            for (p, u) in params.data.iter_mut().zip(&update) {
                *p += u;
            }
        }
        last_epoch_loss = epoch_loss / train_set.len() as f64;
    }
    let train_accuracy = accuracy(&params, train_set)?;
    let val_accuracy = if val_set.is_empty() {
        None
    } else {
        Some(accuracy(&params, val_set)?)
    };
    Ok(TrainedVictim {
        report: TrainReport {
            config: *cfg,
            seed,
            classes,
            train_accuracy,
            val_accuracy,
            final_loss: last_epoch_loss,
        },
        params,
    })
}

/// JSON sidecar describing a flat parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsSidecar {
    pub format: String,
    pub classes: usize,
    pub layers: Vec<LayerShape>,
    pub param_count: usize,
    pub training: Option<TrainReport>,
}

pub const PARAMS_FORMAT: &str = "f64-le";

/// Writes `params` as little-endian `f64` values plus a JSON sidecar.
pub fn save_params(
    params: &VictimParams,
    training: Option<&TrainReport>,
    bin_path: &Path,
    json_path: &Path,
) -> Result<()> {
    let bytes: Vec<u8> = params.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(bin_path, bytes).map_err(|e| Error::io(bin_path, e))?;
    let sidecar = ParamsSidecar {
        format: PARAMS_FORMAT.to_string(),
        classes: params.classes,
        layers: VictimParams::shapes(params.classes).to_vec(),
        param_count: params.data.len(),
        training: training.cloned(),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(json_path, json).map_err(|e| Error::io(json_path, e))
}

pub fn load_params(bin_path: &Path, json_path: &Path) -> Result<(VictimParams, ParamsSidecar)> {
    let text = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    let sidecar: ParamsSidecar = serde_json::from_str(&text)?;
    let malformed = |reason: String| Error::Malformed {
        path: json_path.to_path_buf(),
        reason,
    };
    if sidecar.format != PARAMS_FORMAT {
        return Err(malformed(format!("unsupported format {:?}", sidecar.format)));
    }
    if sidecar.layers != VictimParams::shapes(sidecar.classes) {
        return Err(malformed("layer shapes do not match the victim architecture".into()));
    }
    let bytes = fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
    if bytes.len() != sidecar.param_count * 8 {
        return Err(Error::Malformed {
            path: bin_path.to_path_buf(),
            reason: format!("expected {} values, found {} bytes", sidecar.param_count, bytes.len()),
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((VictimParams::from_flat(sidecar.classes, data)?, sidecar))
}
