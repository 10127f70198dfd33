//! Harness commands. Every output goes under the configured `out_dir`:
//!
//! ```text
//! out_dir/
//!   resolved_config.toml
//!   data/manifest.json, data/{train,val,test}/*.evt1
//!   victim/params.bin, victim/params.json, victim/metrics.json
//!   attack/attack.csv, attack/report.json, attack/<method>/<ablation>/sample_NNNN.{json,evt1}
//!   defend/defend.csv, defend/report.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{Ablation, AttackConfig, AttackResult, Method};
use crate::bench::config::{hash_text, RunConfig};
use crate::defense::defended_eval;
use crate::error::{Error, Result};
use crate::event::{normalize, normalize_with, EventStream, LabeledSample};
use crate::io::{load_events, read_events, save_events, EventFormat};
use crate::metrics::MetricReport;
use crate::synth::{generate_synthetic, ScenarioKind, SyntheticScenario, SENSOR};
use crate::victim::{accuracy, load_params, save_params, train, TrainReport, VictimParams};

pub const ATTACK_CSV_HEADER: &str = "method,ablation,sr,chamfer,l2,hausdorff,n_samples,seed";
pub const DEFEND_CSV_HEADER: &str = "attack,ablation,defense,sr,n_samples,seed";
/// Ablation column used for methods without module switches.
pub const NO_ABLATION: &str = "none";

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes the resolved config next to the outputs and returns its hash.
fn store_config(cfg: &RunConfig) -> Result<String> {
    mkdir(&cfg.out_dir)?;
    let text = cfg.to_toml();
    write(&cfg.out_dir.join("resolved_config.toml"), &text)?;
    Ok(hash_text(&text))
}

/// Derives an independent seed from a base seed and a path of indices.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut z = base;
    for &p in path {
        z ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(z << 6).wrapping_add(z >> 2);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the data directory.
    pub file: String,
    pub label: usize,
    pub split: Split,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub sensor_width: f64,
    pub sensor_height: f64,
    pub events: usize,
    pub noise_rate: f64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn histogram(&self, split: Split) -> Vec<usize> {
        let mut h = vec![0; self.classes.len()];
        for e in self.entries.iter().filter(|e| e.split == split) {
            h[e.label] += 1;
        }
        h
    }
}

pub fn data_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("data")
}

/// Generates the synthetic dataset as raw-unit EVT1 files plus a manifest.
/// Within a split, samples are interleaved across classes.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    store_config(cfg)?;
    let dir = data_dir(cfg);
    let d = &cfg.dataset;
    let mut entries = Vec::new();
    for split in Split::ALL {
        let per_class = match split {
            Split::Train => d.train_per_class,
            Split::Val => d.val_per_class,
            Split::Test => d.test_per_class,
        };
        if per_class == 0 {
            continue;
        }
        mkdir(&dir.join(split.name()))?;
        for i in 0..per_class {
            for kind in ScenarioKind::ALL {
                let seed = derive_seed(cfg.seed, &[split as u64, kind.label() as u64, i as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let scenario = SyntheticScenario::random(kind, d.noise_rate, &mut rng);
                let sample = generate_synthetic(&scenario, d.events, seed)?;
                let file = format!("{}/{}_{}_{:04}.evt1", split.name(), split.name(), kind.label(), i);
                save_events(&sample.stream, &dir.join(&file), EventFormat::Evt1)?;
                entries.push(ManifestEntry {
                    file,
                    label: sample.label,
                    split,
                    seed,
                });
            }
        }
    }
    let manifest = DatasetManifest {
        classes: ScenarioKind::ALL.iter().map(|k| k.name().to_string()).collect(),
        sensor_width: SENSOR.width,
        sensor_height: SENSOR.height,
        events: d.events,
        noise_rate: d.noise_rate,
        entries,
    };
    write(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// A loaded, normalized sample with its provenance.
#[derive(Debug, Clone)]
pub struct DatasetSample {
    pub entry: ManifestEntry,
    pub sample: LabeledSample,
}

pub fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = data_dir(cfg).join("manifest.json");
    Ok(serde_json::from_str(&read_to_string(&path)?)?)
}

pub fn load_split(cfg: &RunConfig, manifest: &DatasetManifest, split: Split) -> Result<Vec<DatasetSample>> {
    let dir = data_dir(cfg);
    manifest
        .entries
        .iter()
        .filter(|e| e.split == split)
        .map(|entry| {
            let mut stream = load_events(&dir.join(&entry.file), EventFormat::Evt1)?;
            stream.sensor.width = manifest.sensor_width;
            stream.sensor.height = manifest.sensor_height;
            Ok(DatasetSample {
                entry: entry.clone(),
                sample: LabeledSample {
                    stream: normalize(&stream)?,
                    label: entry.label,
                },
            })
        })
        .collect()
}

fn samples(v: &[DatasetSample]) -> Vec<LabeledSample> {
    v.iter().map(|s| s.sample.clone()).collect()
}

pub fn victim_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("victim")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimMetrics {
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub final_loss: f64,
    pub config_hash: String,
}

pub fn cmd_train_victim(cfg: &RunConfig) -> Result<VictimMetrics> {
    cfg.validate()?;
    let config_hash = store_config(cfg)?;
    let manifest = load_manifest(cfg)?;
    let train_set = samples(&load_split(cfg, &manifest, Split::Train)?);
    let val_set = samples(&load_split(cfg, &manifest, Split::Val)?);
    let test_set = samples(&load_split(cfg, &manifest, Split::Test)?);
    let trained = train(&train_set, &val_set, &cfg.victim, derive_seed(cfg.seed, &[100]))?;
    let dir = victim_dir(cfg);
    mkdir(&dir)?;
    save_params(
        &trained.params,
        Some(&trained.report),
        &dir.join("params.bin"),
        &dir.join("params.json"),
    )?;
    let metrics = VictimMetrics {
        train_accuracy: trained.report.train_accuracy,
        val_accuracy: trained.report.val_accuracy,
        test_accuracy: if test_set.is_empty() {
            None
        } else {
            Some(accuracy(&trained.params, &test_set)?)
        },
        final_loss: trained.report.final_loss,
        config_hash,
    };
    write(&dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
    Ok(metrics)
}

pub fn load_victim(cfg: &RunConfig) -> Result<(VictimParams, Option<TrainReport>)> {
    let dir = victim_dir(cfg);
    let (params, sidecar) = load_params(&dir.join("params.bin"), &dir.join("params.json"))?;
    Ok((params, sidecar.training))
}

/// The first `max_samples` test samples the victim classifies correctly.
pub fn attack_targets(
    cfg: &RunConfig,
    victim: &VictimParams,
    test: Vec<DatasetSample>,
) -> Result<Vec<DatasetSample>> {
    let mut out = Vec::new();
    for s in test {
        if out.len() >= cfg.campaign.max_samples {
            break;
        }
        if victim.predict(&s.sample.stream)? == s.sample.label {
            out.push(s);
        }
    }
    Ok(out)
}

/// One `(method, ablation)` configuration of a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackArm {
    pub method: Method,
    pub ablation: String,
    pub config: AttackConfig,
}

pub fn attack_arms(cfg: &RunConfig) -> Result<Vec<AttackArm>> {
    let mut arms = Vec::new();
    for &method in &cfg.campaign.methods {
        let ablation = match method {
            Method::MaAdv => cfg.attack.ablation.tag(),
            _ => NO_ABLATION.to_string(),
        };
        arms.push(AttackArm {
            method,
            ablation,
            config: cfg.attack,
        });
    }
    for tag in &cfg.campaign.ablations {
        let mut config = cfg.attack;
        config.ablation = Ablation::from_tag(tag)?;
        let arm = AttackArm {
            method: Method::MaAdv,
            ablation: config.ablation.tag(),
            config,
        };
        if !arms.iter().any(|a| a.method == arm.method && a.ablation == arm.ablation) {
            arms.push(arm);
        }
    }
    Ok(arms)
}

/// One line of `attack.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub method: String,
    pub ablation: String,
    pub report: MetricReport,
    pub seed: u64,
}

impl AttackRow {
    pub fn to_csv(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.method, self.ablation, r.sr, r.chamfer, r.l2, r.hausdorff, r.n_samples, self.seed
        )
    }
}

/// Per-sample audit record written next to the adversarial dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub source: String,
    pub result: AttackResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandReport<R> {
    pub command: String,
    pub config_hash: String,
    pub wall_clock_s: f64,
    pub rows: Vec<R>,
}

pub fn attack_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("attack")
}

fn arm_dir(cfg: &RunConfig, method: &str, ablation: &str) -> PathBuf {
    attack_dir(cfg).join(method).join(ablation)
}

/// Attacks the selected test samples with every arm of the campaign.
pub fn cmd_attack(cfg: &RunConfig) -> Result<Vec<AttackRow>> {
    cfg.validate()?;
    let started = Instant::now();
    let config_hash = store_config(cfg)?;
    let manifest = load_manifest(cfg)?;
    let (victim, _) = load_victim(cfg)?;
    let targets = attack_targets(cfg, &victim, load_split(cfg, &manifest, Split::Test)?)?;
    if targets.is_empty() {
        return Err(Error::invalid("no correctly classified test samples to attack"));
    }
    let batch = samples(&targets);
    let seed = cfg.attack_seed();
    let mut rows = Vec::new();
    for arm in attack_arms(cfg)? {
        log::info!("attacking {} samples with {} ({})", batch.len(), arm.method, arm.ablation);
        let results = arm.method.run_batch(&victim, &batch, &arm.config, seed)?;
        let dir = arm_dir(cfg, arm.method.name(), &arm.ablation);
        mkdir(&dir)?;
        for (i, (t, r)) in targets.iter().zip(&results).enumerate() {
            let record = SampleRecord {
                index: i,
                source: t.entry.file.clone(),
                result: r.clone(),
            };
            write(&dir.join(format!("sample_{i:04}.json")), serde_json::to_string_pretty(&record)?)?;
            if let Some(adv) = &r.best_adv {
                save_events(adv, &dir.join(format!("sample_{i:04}.evt1")), EventFormat::Evt1)?;
            }
        }
        rows.push(AttackRow {
            method: arm.method.name().to_string(),
            ablation: arm.ablation.clone(),
            report: MetricReport::from_results(&results)?,
            seed,
        });
    }
    let dir = attack_dir(cfg);
    let mut csv = String::from(ATTACK_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.to_csv());
        csv.push('\n');
    }
    write(&dir.join("attack.csv"), csv)?;
    let report = CommandReport {
        command: "attack".into(),
        config_hash,
        wall_clock_s: started.elapsed().as_secs_f64(),
        rows: rows.clone(),
    };
    write(&dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(rows)
}

/// Reloads one arm's per-sample results, re-attaching adversarial streams in
/// the clean samples' normalized coordinates.
pub fn load_arm_results(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    method: &str,
    ablation: &str,
) -> Result<Vec<AttackResult>> {
    let dir = arm_dir(cfg, method, ablation);
    let data = data_dir(cfg);
    let mut records: Vec<SampleRecord> = Vec::new();
    let mut i = 0;
    loop {
        let path = dir.join(format!("sample_{i:04}.json"));
        if !path.exists() {
            break;
        }
        records.push(serde_json::from_str(&read_to_string(&path)?)?);
        i += 1;
    }
    if records.is_empty() {
        return Err(Error::invalid(format!("no attack results under {}", dir.display())));
    }
    records
        .into_iter()
        .map(|rec| {
            let mut result = rec.result;
            if result.success {
                let mut clean = load_events(&data.join(&rec.source), EventFormat::Evt1)?;
                clean.sensor.width = manifest.sensor_width;
                clean.sensor.height = manifest.sensor_height;
                let params = normalize(&clean)?.norm.expect("normalized stream carries params");
                let (events, _) = read_events(&dir.join(format!("sample_{:04}.evt1", rec.index)), EventFormat::Evt1)?;
                let adv = EventStream {
                    events,
                    sensor: clean.sensor,
                    norm: None,
                };
                result.best_adv = Some(normalize_with(&adv, params)?);
            }
            Ok(result)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefendRow {
    pub attack: String,
    pub ablation: String,
    pub defense: String,
    pub sr: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl DefendRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.attack, self.ablation, self.defense, self.sr, self.n_samples, self.seed
        )
    }
}

/// Re-scores stored attack results under each configured defense, plus a
/// `none` baseline row per arm.
pub fn cmd_defend(cfg: &RunConfig) -> Result<Vec<DefendRow>> {
    cfg.validate()?;
    let started = Instant::now();
    let config_hash = store_config(cfg)?;
    let manifest = load_manifest(cfg)?;
    let (victim, _) = load_victim(cfg)?;
    let seed = cfg.attack_seed();
    let mut rows = Vec::new();
    for arm in attack_arms(cfg)? {
        let results = load_arm_results(cfg, &manifest, arm.method.name(), &arm.ablation)?;
        let base = MetricReport::from_results(&results)?;
        let row = |defense: &str, sr: f64| DefendRow {
            attack: arm.method.name().to_string(),
            ablation: arm.ablation.clone(),
            defense: defense.to_string(),
            sr,
            n_samples: results.len(),
            seed,
        };
        rows.push(row("none", base.sr));
        for d in &cfg.defenses {
            let rep = defended_eval(&victim, &results, d, manifest.events, derive_seed(seed, &[7]))?;
            rows.push(row(d.name(), rep.sr));
        }
    }
    let dir = cfg.out_dir.join("defend");
    mkdir(&dir)?;
    let mut csv = String::from(DEFEND_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.to_csv());
        csv.push('\n');
    }
    write(&dir.join("defend.csv"), csv)?;
    let report = CommandReport {
        command: "defend".into(),
        config_hash,
        wall_clock_s: started.elapsed().as_secs_f64(),
        rows: rows.clone(),
    };
    write(&dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(rows)
}

/// Summary of a merge.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeSummary {
    pub attack_rows: usize,
    pub defend_rows: usize,
    pub dumps: usize,
}

/// Merges CSV tables of several run directories into `out` (a leading `run`
/// column names the source) and exports clean/adversarial event dumps as
/// CSV for plotting.
pub fn cmd_report(run_dirs: &[PathBuf], out: &Path) -> Result<MergeSummary> {
    if run_dirs.is_empty() {
        return Err(Error::invalid("report needs at least one run directory"));
    }
    mkdir(out)?;
    let mut tables: BTreeMap<&str, (String, Vec<String>)> = BTreeMap::new();
    let mut dumps = 0;
    for (r, run) in run_dirs.iter().enumerate() {
        let run_name = run
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("run{r}"));
        for (key, rel, header) in [
            ("attack", "attack/attack.csv", ATTACK_CSV_HEADER),
            ("defend", "defend/defend.csv", DEFEND_CSV_HEADER),
        ] {
            let path = run.join(rel);
            if !path.exists() {
                continue;
            }
            let text = read_to_string(&path)?;
            let mut lines = text.lines();
            if lines.next() != Some(header) {
                return Err(Error::Malformed {
                    path,
                    reason: "unexpected CSV header".into(),
                });
            }
            let entry = tables
                .entry(key)
                .or_insert_with(|| (format!("run,{header}"), Vec::new()));
            entry.1.extend(lines.filter(|l| !l.is_empty()).map(|l| format!("{run_name},{l}")));
        }
        dumps += export_dumps(run, &out.join("plot_data").join(&run_name))?;
    }
    let mut summary = MergeSummary {
        attack_rows: 0,
        defend_rows: 0,
        dumps,
    };
    for (key, (header, rows)) in &tables {
        let mut csv = header.clone();
        csv.push('\n');
        for r in rows {
            csv.push_str(r);
            csv.push('\n');
        }
        write(&out.join(format!("merged_{key}.csv")), csv)?;
        match *key {
            "attack" => summary.attack_rows = rows.len(),
            _ => summary.defend_rows = rows.len(),
        }
    }
    Ok(summary)
}

/// Writes `<method>_<ablation>_NNNN_{clean,adv}.csv` for every successful
/// sample of a run. Returns the number of adversarial dumps written.
fn export_dumps(run: &Path, out: &Path) -> Result<usize> {
    let cfg_path = run.join("resolved_config.toml");
    if !cfg_path.exists() || !run.join("attack").exists() {
        return Ok(0);
    }
    let mut cfg = RunConfig::load(&cfg_path)?;
    cfg.out_dir = run.to_path_buf();
    let manifest = load_manifest(&cfg)?;
    let data = data_dir(&cfg);
    mkdir(out)?;
    let mut count = 0;
    for arm in attack_arms(&cfg)? {
        let dir = arm_dir(&cfg, arm.method.name(), &arm.ablation);
        if !dir.exists() {
            continue;
        }
        let results = load_arm_results(&cfg, &manifest, arm.method.name(), &arm.ablation)?;
        for (i, r) in results.iter().enumerate() {
            let Some(adv) = &r.best_adv else { continue };
            let rec: SampleRecord =
                serde_json::from_str(&read_to_string(&dir.join(format!("sample_{i:04}.json")))?)?;
            let clean = load_events(&data.join(&rec.source), EventFormat::Evt1)?;
            let stem = format!("{}_{}_{i:04}", arm.method.name(), arm.ablation);
            save_events(&clean, &out.join(format!("{stem}_clean.csv")), EventFormat::Csv)?;
            save_events(adv, &out.join(format!("{stem}_adv.csv")), EventFormat::Csv)?;
            count += 1;
        }
    }
    Ok(count)
}
