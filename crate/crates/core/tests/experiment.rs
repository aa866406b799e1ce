use std::fs;
use std::path::PathBuf;

use serde_json::{json, Value};

use privgain::experiment::{
    execute, load_experiment, parse_experiment, run_experiment, validate_config_file, validate_experiment, CellStatus, Level, RunOptions,
    LEAKY_WARNING,
};
use privgain::Error;

fn toy() -> Value {
    json!({
        "attributes": [
            {"kind": "categorical", "name": "g", "categories": ["a", "b", "c"], "weights": [0.6, 0.4, 0.0]},
            {"kind": "continuous", "name": "x", "min": 0, "max": 100, "bins": 10, "components": [{"weight": 1, "mean": 50, "sd": 10}]},
            {"kind": "categorical", "name": "y", "categories": ["n", "y"], "weights": [0.7, 0.3]}
        ],
        "couplings": [{"parent": "g", "child": "y", "strength": 0.4}],
        "outliers": [{"g": "c", "x": 99}],
        "quasi_identifiers": ["g"]
    })
}

fn base_config() -> Value {
    json!({
        "seed": 3,
        "population": {"toy": {"size": 300, "spec": toy()}},
        "targets": [-1, 10],
        "mechanisms": [{"name": "IndHist", "generator": {"kind": "IndHist", "nbins": 10}}],
        "feature_sets": ["hist"],
        "games": {"linkability": {}},
        "n": 60, "m": 60, "n_shadows": 3, "synth_per_shadow": 2, "iters": 40,
        "forest": {"n_trees": 10}
    })
}

fn parse(v: &Value) -> privgain::experiment::ExperimentFile {
    parse_experiment(&v.to_string(), "test", PathBuf::from(".")).unwrap()
}

#[test]
fn smoke_run_two_targets() {
    let out = execute(&parse(&base_config()), &RunOptions::default()).unwrap();
    assert_eq!(out.report.rows.len(), 2);
    assert!(out.report.rows.iter().all(|r| r.status == CellStatus::Ok && r.privacy_gain.is_some()));
    assert_eq!(out.exit_code(), 0);
    let last = out.report.rows.iter().find(|r| r.target == 299).unwrap();
    assert_eq!(last.group, "explicit");
    let e = last.estimate.as_ref().unwrap();
    assert_eq!((e.n1, e.n0), (20, 20));
    for r in &out.report.rows {
        let pg = r.privacy_gain.unwrap();
        assert_eq!(r.privacy_gain_display, Some(pg.clamp(0.0, 1.0)));
    }
}

#[test]
fn outputs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.json");
    let mut cfg = base_config();
    cfg["output_dir"] = json!("results");
    let wrapped = json!({"config": cfg, "manifest": [
        {"metric_path": "/summary/linkability|IndHist|hist/cells", "comparator": "==", "bound": 2},
        {"metric_path": "/summary/linkability|IndHist|hist/nope", "comparator": "<", "bound": 1}
    ]});
    fs::write(&cfg_path, wrapped.to_string()).unwrap();
    let (_, checks, out_dir) = run_experiment(&cfg_path, &RunOptions::default()).unwrap();
    assert_eq!(out_dir, dir.path().join("results"));
    let checks = checks.unwrap();
    assert!(checks[0].passed);
    assert!(!checks[1].passed && checks[1].actual.is_none());
    for f in ["report.json", "outcomes.csv", "provenance.json", "manifest_check.json"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let outcomes = fs::read_to_string(out_dir.join("outcomes.csv")).unwrap();
    // header plus 40 outcomes per target
    assert_eq!(outcomes.lines().count(), 1 + 80);
    let plot = fs::read_to_string(out_dir.join("plotdata/linkability_gain.csv")).unwrap();
    assert_eq!(plot.lines().count(), 3);
    for f in ["attribute_gain", "attribute_success", "utility_advantage", "ml_accuracy", "summary_stats", "marginals"] {
        assert!(out_dir.join(format!("plotdata/{f}.csv")).is_file());
    }

    let prov: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["seed"], 3);
    assert_eq!(prov["config"]["n_shadows"], 3);
    assert_eq!(prov["config"]["forest"]["n_trees"], 10);
    for key in ["privbay_budget_split", "binning", "forest", "continuous_success", "outlier_score", "sampling"] {
        assert!(prov["defaults"].get(key).is_some(), "{key}");
    }
    let text = fs::read_to_string(out_dir.join("provenance.json")).unwrap();
    assert!(!text.contains("jobs"));
}

#[test]
fn seed_override_changes_results_and_is_recorded() {
    let file = parse(&base_config());
    let a = execute(&file, &RunOptions::default()).unwrap();
    let b = execute(&file, &RunOptions { seed: Some(4), ..RunOptions::default() }).unwrap();
    assert_eq!(b.report.seed, 4);
    assert_eq!(b.provenance["config"]["seed"], 4);
    assert_ne!(a.report.to_json(), b.report.to_json());
}

#[test]
fn missing_schema_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["population"] = json!({"csv": {"path": "data.csv", "schema": "missing.json"}});
    let path = dir.path().join("exp.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let file = load_experiment(&path).unwrap();
    match execute(&file, &RunOptions::default()) {
        Err(Error::ConfigError { path, .. }) => assert_eq!(path, "population.csv.schema"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_fields_report_their_path() {
    let mut cfg = base_config();
    cfg["mechanisms"][0]["generator"]["degre"] = json!(2);
    let err = parse_experiment(&cfg.to_string(), "t", PathBuf::from(".")).unwrap_err();
    match err {
        Error::ConfigError { path, .. } => assert!(path.starts_with("mechanisms[0].generator"), "{path}"),
        other => panic!("{other:?}"),
    }
    let wrapped = json!({"config": {"seed": 1}});
    match parse_experiment(&wrapped.to_string(), "t", PathBuf::from(".")).unwrap_err() {
        Error::ConfigError { path, .. } => assert!(path.starts_with("config"), "{path}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn validation_diagnostics() {
    assert!(validate_experiment(&parse(&base_config())).is_empty());

    let mut leaky = base_config();
    leaky["mechanisms"] = json!([{"generator": {"kind": "PrivBay", "budget": {"epsilon_total": 1.0}, "metadata_mode": "learned"}}]);
    let d = validate_experiment(&parse(&leaky));
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].level, Level::Warning);
    assert_eq!(d[0].message, LEAKY_WARNING);

    let mut loose = base_config();
    loose["mechanisms"] = json!([{"generator": {"kind": "PrivBay", "budget": {"epsilon_total": 1e7}}}]);
    let d = validate_experiment(&parse(&loose));
    assert!(d.iter().any(|d| d.level == Level::Warning && d.path.ends_with("epsilon_total")));

    let mut k0 = base_config();
    k0["mechanisms"] = json!([{"sanitiser": {"k": 0, "quasi_identifiers": ["g"]}}]);
    let d = validate_experiment(&parse(&k0));
    assert!(d.iter().any(|d| d.level == Level::Error));

    let mut unknown = base_config();
    unknown["games"] = json!({"attribute_inference": {"sensitive": ["salary"]}});
    let d = validate_experiment(&parse(&unknown));
    assert!(d.iter().any(|d| d.level == Level::Error && d.message.contains("salary")), "{d:?}");

    let d = validate_config_file("/nonexistent/exp.json");
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].level, Level::Error);
}

#[test]
fn static_checks_reject_bad_shapes() {
    for (field, value) in [
        ("iters", json!(10)),
        ("n_shadows", json!(1)),
        ("n", json!(0)),
        ("l", json!(10)),
        ("mechanisms", json!([{"raw": true, "generator": {"kind": "IndHist"}}])),
        ("mechanisms", json!([{"name": "A", "raw": true}, {"name": "A", "raw": true}])),
        ("targets", json!([5000])),
    ] {
        let mut cfg = base_config();
        cfg[field] = value;
        let file = parse(&cfg);
        assert!(matches!(execute(&file, &RunOptions::default()), Err(Error::ConfigError { .. })), "{field}");
    }
}

#[test]
fn failing_cells_are_flushed_and_marked() {
    let mut cfg = base_config();
    cfg["mechanisms"] = json!([
        {"name": "Broken", "generator": {"kind": "External", "external_cmd": "exit 3"}},
        {"name": "IndHist", "generator": {"kind": "IndHist"}}
    ]);
    let out = execute(&parse(&cfg), &RunOptions::default()).unwrap();
    assert_eq!(out.exit_code(), 2);
    assert_eq!(out.report.failed_cells, 2);
    for r in &out.report.rows {
        if r.mechanism == "Broken" {
            assert_eq!(r.status, CellStatus::Failed);
            assert!(r.error.as_deref().unwrap().contains("exit"), "{:?}", r.error);
        } else {
            assert_eq!(r.status, CellStatus::Ok);
        }
    }
    let s = &out.report.summary["linkability|Broken|hist"];
    assert_eq!((s.cells, s.failed), (2, 2));
}

#[test]
fn target_selection_and_learned_metadata_source() {
    let mut cfg = base_config();
    cfg["targets"] = json!(["outlier:1", "random:2", 5]);
    cfg["mechanisms"] = json!([{"name": "P", "generator": {"kind": "PrivBay", "budget": {"epsilon_total": 1.0}}, "metadata": {"population_excluding_targets": {"pad": 0.1}}}]);
    let file = parse(&cfg);
    let plan = file.config.resolve(&file.base_dir).unwrap();
    let groups: Vec<&str> = plan.targets.iter().map(|t| t.group).collect();
    assert_eq!(groups, ["outlier", "random", "random", "explicit"]);
    assert_eq!(plan.targets[0].index, 299);
    assert_eq!(plan.targets[3].index, 5);
    assert_eq!(plan.reference.len(), 300);
    // metadata read without the targets cannot see the planted `c`
    let privgain::mechanism::Mechanism::Generator { metadata, .. } = &plan.mechanisms[0].mechanism else { panic!() };
    assert!(metadata.attribute(0).categories().unwrap().len() < 3);
}

#[test]
fn all_games_in_one_run() {
    let mut cfg = base_config();
    cfg["test_population"] = json!({"toy": {"size": 50, "spec": toy()}});
    cfg["mechanisms"] = json!([{"name": "Raw", "raw": true}, {"name": "San", "sanitiser": {"k": 2, "quasi_identifiers": ["g"]}}]);
    cfg["games"] = json!({
        "linkability": {},
        "attribute_inference": {"sensitive": ["x", "y"], "trees": 5},
        "utility": {"predict": "y", "pairs": [{"target": -1, "test": -1}], "trees": 5},
        "aggregate_utility": {"predict": "y", "repetitions": 2, "holdout": 30, "trees": 5}
    });
    let out = execute(&parse(&cfg), &RunOptions { jobs: Some(2), ..RunOptions::default() }).unwrap();
    assert_eq!(out.exit_code(), 0, "{:?}", out.report.rows.iter().filter_map(|r| r.error.clone()).collect::<Vec<_>>());
    let count = |g: &str| out.report.rows.iter().filter(|r| r.game == g).count();
    assert_eq!(count("linkability"), 4);
    assert_eq!(count("attribute_inference"), 8);
    assert_eq!(count("utility"), 2);
    assert_eq!(out.report.aggregate_utility.len(), 2);
    let raw = out.report.aggregate_utility["Raw"].mean.as_ref().unwrap();
    assert_eq!(raw.accuracy_raw, raw.accuracy_published);
    // raw linkage is exact
    for r in out.report.rows.iter().filter(|r| r.game == "linkability" && r.mechanism == "Raw") {
        assert_eq!(r.privacy_gain, Some(0.0));
    }
    // attribute inference on raw data: both arms of the raw evaluation see the same release
    for r in out.report.rows.iter().filter(|r| r.game == "attribute_inference" && r.mechanism == "Raw") {
        assert_eq!(r.privacy_gain, Some(0.0));
    }
}

#[test]
fn alternative_shadow_sets_and_assignment() {
    let mut cfg = base_config();
    cfg["shadow_sets"] = json!("augmented");
    cfg["mechanisms"] = json!([{"name": "Raw", "raw": true}, {"name": "IndHist", "generator": {"kind": "IndHist"}}]);
    cfg["games"] = json!({"linkability": {}, "attribute_inference": {"sensitive": ["y"], "trees": 5, "assignment": "conditional"}});
    let out = execute(&parse(&cfg), &RunOptions::default()).unwrap();
    assert_eq!(out.exit_code(), 0);
    assert!(out.provenance["defaults"]["shadow_sets"].as_str().unwrap().starts_with("n reference records"));
    assert!(out.provenance["defaults"]["attribute_assignment"].as_str().unwrap().contains("drawn per iteration"));
    for r in out.report.rows.iter().filter(|r| r.mechanism == "Raw") {
        assert_eq!(r.privacy_gain, Some(0.0));
    }
}
