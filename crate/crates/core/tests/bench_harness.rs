use std::fs;

use evadv::bench::{
    attack_arms, cmd_attack, cmd_defend, cmd_gen_data, cmd_train_victim, load_manifest, load_split, RunConfig,
    Split,
};
use evadv::event::normalize;
use evadv::io::{load_events, EventFormat};

fn tiny(out: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml(
        r#"
        [dataset]
        events = 32
        train_per_class = 8
        val_per_class = 2
        test_per_class = 3
        [victim]
        epochs = 40
        [attack]
        iterations = 4
        binary_steps = 2
        [campaign]
        methods = ["ifgsm", "ma-adv"]
        ablations = ["no-diffusion", "full"]
        max_samples = 3
        "#,
    )
    .unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn generated_data_is_balanced_interleaved_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&dir.path().join("a"));
    let m = cmd_gen_data(&cfg).unwrap();
    assert_eq!(m.histogram(Split::Train), vec![8; 4]);
    assert_eq!(m.histogram(Split::Test), vec![3; 4]);
    let test: Vec<usize> = m.entries.iter().filter(|e| e.split == Split::Test).map(|e| e.label).collect();
    assert_eq!(&test[..4], &[0, 1, 2, 3]);

    let mut other = cfg.clone();
    other.out_dir = dir.path().join("b");
    assert_eq!(cmd_gen_data(&other).unwrap(), m);
    for e in &m.entries {
        let a = fs::read(cfg.out_dir.join("data").join(&e.file)).unwrap();
        let b = fs::read(other.out_dir.join("data").join(&e.file)).unwrap();
        assert_eq!(a, b);
    }

    let loaded = load_split(&cfg, &load_manifest(&cfg).unwrap(), Split::Val).unwrap();
    assert_eq!(loaded.len(), 8);
    for s in &loaded {
        assert!(s.sample.stream.is_normalized() && s.sample.stream.is_sorted_by_t());
        assert_eq!(s.sample.stream.len(), 32);
        let raw = load_events(&cfg.out_dir.join("data").join(&s.entry.file), EventFormat::Evt1).unwrap();
        assert!(raw.events.iter().all(|e| e.x <= 128.0 && e.y <= 128.0));
        assert!(normalize(&raw).is_ok());
    }
}

#[test]
fn duplicate_arms_are_collapsed() {
    let cfg = tiny(std::path::Path::new("unused"));
    let arms: Vec<(String, String)> = attack_arms(&cfg)
        .unwrap()
        .into_iter()
        .map(|a| (a.method.name().to_string(), a.ablation))
        .collect();
    assert_eq!(
        arms,
        [("ifgsm", "none"), ("ma-adv", "full"), ("ma-adv", "no-diffusion")]
            .map(|(m, a)| (m.to_string(), a.to_string()))
    );
}

#[test]
fn attack_and_defend_tables_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_gen_data(&cfg).unwrap();
    let metrics = cmd_train_victim(&cfg).unwrap();
    assert!(metrics.train_accuracy > 0.25);
    assert_eq!(metrics.config_hash, cfg.hash());

    let rows = cmd_attack(&cfg).unwrap();
    let first = fs::read(dir.path().join("attack/attack.csv")).unwrap();
    let again = cmd_attack(&cfg).unwrap();
    // arms without a success carry NaN distances, so compare the rendered rows
    let csv = |rows: &[evadv::bench::AttackRow]| rows.iter().map(|r| r.to_csv()).collect::<Vec<_>>();
    assert_eq!(csv(&rows), csv(&again));
    assert_eq!(first, fs::read(dir.path().join("attack/attack.csv")).unwrap());

    let d1 = cmd_defend(&cfg).unwrap();
    let d2 = cmd_defend(&cfg).unwrap();
    assert_eq!(format!("{d1:?}"), format!("{d2:?}"));
    let none: Vec<_> = d1.iter().filter(|r| r.defense == "none").collect();
    assert_eq!(none.len(), rows.len());
    for (n, r) in none.iter().zip(&rows) {
        assert_eq!(n.sr, r.report.sr);
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("attack/report.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"], cfg.hash());
    assert!(report["wall_clock_s"].as_f64().unwrap() >= 0.0);
}
