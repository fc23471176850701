use std::fs;
use std::path::PathBuf;

use steamgen::hybrid::Mode;
use steamgen::simctl::*;

fn scenario_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/three_boilers.json")
}

fn scenario() -> ScenarioConfig {
    load_config(&scenario_path()).unwrap()
}

fn scenario_json() -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(scenario_path()).unwrap()).unwrap()
}

fn schema_field(e: ConfigError) -> String {
    match e {
        ConfigError::Schema { field, .. } => field,
        other => panic!("expected a schema error, got {other}"),
    }
}

fn single_boiler() -> ScenarioConfig {
    let mut cfg = scenario();
    cfg.boilers.truncate(1);
    cfg.boilers[0].initial_mode = Mode::On;
    cfg.duration = 4.0 * cfg.timing.t_h;
    cfg.demand = DemandSpec::Series { values: vec![0.7] };
    cfg
}

fn flags(log: &RunLog) -> usize {
    ["viol_u_bar", "viol_unit", "viol_rate", "viol_y"]
        .iter()
        .map(|c| log.ml.series(c).unwrap().iter().filter(|&&v| v != 0.0).count())
        .sum()
}

#[test]
fn shipped_scenario_validates() {
    let cfg = scenario();
    assert_eq!(cfg.boilers.len(), 3);
    assert_eq!(cfg.timing.mu(), 20);
    assert_eq!(cfg.timing.plant_steps(), 12);
}

#[test]
fn default_timing_lies_in_the_recommended_bands() {
    let t = Timing::default();
    assert!((1.0..=10.0).contains(&t.tau));
    assert!((30.0..=60.0).contains(&t.t_m));
    assert!((600.0..=1800.0).contains(&t.t_h));
    assert_eq!(t.t_m / t.tau, t.plant_steps() as f64);
    assert_eq!(t.t_h / t.t_m, t.mu() as f64);
}

#[test]
fn empty_demand_is_rejected() {
    let mut v = scenario_json();
    v["demand"] = serde_json::json!({ "kind": "series", "values": [] });
    let e = ScenarioConfig::from_json(&serde_json::to_string_pretty(&v).unwrap()).unwrap_err();
    assert_eq!(schema_field(e), "demand");
}

#[test]
fn non_integer_mu_names_the_field() {
    let mut v = scenario_json();
    v["timing"]["t_h"] = serde_json::json!(1230.0);
    let text = serde_json::to_string_pretty(&v).unwrap();
    let e = ScenarioConfig::from_json(&text).unwrap_err();
    let line = text.lines().position(|l| l.contains("\"t_h\"")).unwrap() + 1;
    match e {
        ConfigError::Schema { field, line: l, .. } => {
            assert_eq!(field, "timing.t_h");
            assert_eq!(l, Some(line));
        }
        other => panic!("{other}"),
    }
}

#[test]
fn non_integer_plant_ratio_names_the_field() {
    let mut v = scenario_json();
    v["timing"]["tau"] = serde_json::json!(7.0);
    let e = ScenarioConfig::from_json(&v.to_string()).unwrap_err();
    assert_eq!(schema_field(e), "timing.t_m");
}

#[test]
fn syntax_errors_report_the_line() {
    let text = fs::read_to_string(scenario_path()).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[5] = "  \"broken\" 1,";
    let e = ScenarioConfig::from_json(&lines.join("\n")).unwrap_err();
    match e {
        ConfigError::Parse { line, .. } => assert_eq!(line, 6),
        other => panic!("{other}"),
    }
}

#[test]
fn unknown_fields_report_the_line() {
    let text = fs::read_to_string(scenario_path()).unwrap().replacen("\"seed\"", "\"sed\"", 1);
    let line = text.lines().position(|l| l.contains("\"sed\"")).unwrap() + 1;
    match ScenarioConfig::from_json(&text).unwrap_err() {
        ConfigError::Parse { line: l, message, .. } => {
            assert_eq!(l, line);
            assert!(message.contains("sed"));
        }
        other => panic!("{other}"),
    }
}

#[test]
fn rate_limit_must_allow_start_up() {
    let mut cfg = scenario();
    cfg.ensemble.du_max = cfg.boilers[0].hybrid.q_s_min;
    assert_eq!(schema_field(cfg.validate().unwrap_err()), "ensemble.du_max");
}

fn known_log() -> RunLog {
    let mut plant = Table::new("plant", &["step", "k", "t"], vec!["p_a".into(), "q_s_a".into()]);
    plant.push(vec![0usize.into(), 0usize.into(), 0.0.into(), 10.0.into(), 0.5.into()]);
    plant.push(vec![1usize.into(), 0usize.into(), 5.0.into(), (10.0 - 2e-15).into(), (0.1 + 0.2).into()]);
    let mut ml = Table::new("ml", &["k", "h", "t"], vec!["u_bar".into(), "kind".into(), "viol_rate".into()]);
    ml.push(vec![0usize.into(), 0usize.into(), 0.0.into(), 1.2.into(), "regular".into(), false.into()]);
    ml.push(vec![1usize.into(), 0usize.into(), 60.0.into(), (-1e-17).into(), "hold".into(), true.into()]);
    let mut hl = Table::new("hl", &["h", "t"], vec!["mode_a".into(), "alpha_a".into()]);
    hl.push(vec![0usize.into(), 0.0.into(), "ON".into(), 1.0.into()]);
    RunLog { plant, ml, hl }
}

fn golden(name: &str) -> String {
    fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden").join(name)).unwrap()
}

#[test]
fn export_matches_golden_files() {
    let files = known_log().export(&[]).unwrap();
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["plant.csv", "ml.csv", "hl.csv"]);
    for (name, text) in &files {
        assert_eq!(text, &golden(name), "{name}");
    }
}

#[test]
fn export_survives_a_json_round_trip() {
    let log = known_log();
    let back = RunLog::from_json(&log.to_json()).unwrap();
    assert_eq!(back, log);
    assert_eq!(back.export(&[]).unwrap(), log.export(&[]).unwrap());
}

#[test]
fn selection_keeps_table_order_and_index_columns() {
    let sel = vec!["kind".to_string(), "ml.u_bar".to_string()];
    let files = known_log().export(&sel).unwrap();
    assert_eq!(files.len(), 1);
    assert_eq!(files[0].0, "ml.csv");
    assert_eq!(files[0].1, golden("ml_selected.csv"));
    let files = known_log().export(&["hl".to_string()]).unwrap();
    assert_eq!(files[0].1, golden("hl.csv"));
}

#[test]
fn unknown_channel_is_a_schema_error() {
    for sel in ["q_x_a", "ml.p_a", "plant.k"] {
        let e = known_log().export(&[sel.to_string()]).unwrap_err();
        assert_eq!(schema_field(e), "selection", "{sel}");
    }
}

#[test]
fn single_boiler_settles() {
    let cfg = single_boiler();
    let boot = bootstrap(&cfg, None).unwrap();
    let log = simulate(&cfg, &boot, None).unwrap();
    let mu = cfg.timing.mu();
    assert_eq!(log.hl.rows.len(), 4);
    assert_eq!(log.ml.rows.len(), 4 * mu);
    assert_eq!(log.plant.rows.len(), 4 * mu * cfg.timing.plant_steps());
    assert_eq!(flags(&log), 0);
    let u = log.ml.series("u_bar").unwrap();
    let tail = &u[u.len() - mu..];
    for v in tail {
        assert!((v - tail[0]).abs() < 1e-9, "{v} vs {}", tail[0]);
    }
    // quasi-steady draw meets the demand
    assert!((tail[0] - 0.7).abs() < 0.05, "{}", tail[0]);
    let p = log.plant.series("p_b1").unwrap();
    let sp = cfg.boilers[0].pi.p_sp;
    assert!(p.iter().all(|v| (v - sp).abs() / sp < 0.01));
    let eps = log.ml.series("eps").unwrap();
    assert!(eps.last().unwrap().abs() < 1e-6);
}

#[test]
fn rates_stay_consistent() {
    let cfg = single_boiler();
    let boot = bootstrap(&cfg, None).unwrap();
    let log = simulate(&cfg, &boot, Some(1.5 * cfg.timing.t_h)).unwrap();
    let (mu, ps) = (cfg.timing.mu(), cfg.timing.plant_steps());
    // rounded up to whole high-level periods
    assert_eq!(log.hl.rows.len(), 2);
    let ks = log.ml.series("k").unwrap();
    let hs = log.ml.series("h").unwrap();
    for (k, h) in ks.iter().zip(&hs) {
        assert_eq!(*h as usize, *k as usize / mu);
    }
    let pk = log.plant.series("k").unwrap();
    for k in 0..ks.len() {
        assert_eq!(pk.iter().filter(|&&v| v as usize == k).count(), ps);
    }
    let pt = log.plant.series("t").unwrap();
    let mt = log.ml.series("t").unwrap();
    for (k, t) in mt.iter().enumerate() {
        assert_eq!(pt[k * ps], *t);
    }
}

#[test]
fn second_unit_starts_when_demand_exceeds_one_unit() {
    let mut cfg = scenario();
    cfg.boilers.truncate(2);
    cfg.boilers[1].initial_mode = Mode::Off;
    cfg.duration = 8.0 * cfg.timing.t_h;
    cfg.demand = DemandSpec::Series { values: vec![0.6, 0.7, 0.8, 0.9, 1.1, 1.3, 1.4, 1.4] };
    let boot = bootstrap(&cfg, None).unwrap();
    let log = simulate(&cfg, &boot, None).unwrap();
    let modes: Vec<String> = log
        .hl
        .rows
        .iter()
        .map(|r| match &r[log.hl.column("mode_b2").unwrap()] {
            Value::Text(s) => s.clone(),
            v => panic!("{v:?}"),
        })
        .collect();
    let st = modes.iter().position(|m| m == "ST").expect("start-up scheduled");
    let on = modes.iter().position(|m| m == "ON").expect("start-up executed");
    assert!(st < on, "{modes:?}");
    assert_eq!(flags(&log), 0);
    let u2 = log.ml.series("u_b2").unwrap();
    assert!(*u2.last().unwrap() > 0.0);
}

#[test]
fn identical_seeds_export_identical_files() {
    let cfg = single_boiler();
    let dir = tempfile::tempdir().unwrap();
    let a = run(&cfg, &dir.path().join("a"), Some(2.0 * cfg.timing.t_h)).unwrap();
    // second run reads the cached identification
    let cached = bootstrap(&cfg, Some(&dir.path().join("a/cache"))).unwrap();
    assert!(cached.cached.iter().all(|&c| c));
    let b = run(&cfg, &dir.path().join("a"), Some(2.0 * cfg.timing.t_h)).unwrap();
    let c = simulate(&cfg, &bootstrap(&cfg, None).unwrap(), Some(2.0 * cfg.timing.t_h)).unwrap();
    assert_eq!(a.export(&[]).unwrap(), b.export(&[]).unwrap());
    assert_eq!(a.export(&[]).unwrap(), c.export(&[]).unwrap());
    for name in ["plant.csv", "ml.csv", "hl.csv", "log.json"] {
        assert!(dir.path().join("a").join(name).exists(), "{name}");
    }
    assert!(!dir.path().join("a/failure.json").exists());
}

#[test]
fn seed_changes_the_identification() {
    let mut cfg = single_boiler();
    let a = cache_key(&cfg, 0);
    cfg.seed += 1;
    assert_ne!(a, cache_key(&cfg, 0));
}

#[test]
fn unrecoverable_failure_writes_a_record() {
    let mut cfg = single_boiler();
    cfg.costs.allow_slack = false;
    cfg.demand = DemandSpec::Series { values: vec![5.0] };
    let dir = tempfile::tempdir().unwrap();
    let e = run(&cfg, dir.path(), None).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    let rec: FailureRecord = serde_json::from_str(&fs::read_to_string(dir.path().join("failure.json")).unwrap()).unwrap();
    assert_eq!(rec.kind, "runtime");
    assert_eq!(rec.exit_code, 3);
    assert_eq!(rec.layer.as_deref(), Some("hl"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, "{ \"seed\": 1,").unwrap();
    assert_eq!(load_config(&p).unwrap_err().exit_code(), 2);
    assert_eq!(load_config(&dir.path().join("missing.json")).unwrap_err().exit_code(), 1);
}
