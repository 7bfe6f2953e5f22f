use std::fs;

use fascicle::config::{line_of, load_config, parse_config, Config, ConfigError, EffectiveSection};
use fascicle_core::macro_solver::LambdaChoice;
use fascicle_core::membrane::{lambda_bound, FhnParams};

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn minimal_config_takes_every_default() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = load_config(&write(&dir, "min.toml", "")).unwrap();
    assert_eq!(loaded.config, Config::default());
    let model = loaded.model().unwrap();
    assert_eq!(model.n_classes(), 2);
    assert!((model.total_volume_fraction() - 0.10996).abs() < 1e-5);
    assert_eq!(loaded.fhn().unwrap(), FhnParams::default());
}

#[test]
fn probability_overflow_names_the_field_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = "seed = 3\n\n[model]\nradii = [0.2, 0.3]\nprobabilities = [0.7, 0.5]\n";
    let err = load_config(&write(&dir, "p.toml", text)).unwrap_err();
    match &err {
        ConfigError::Validation { field, line, .. } => {
            assert_eq!(field, "model.probabilities");
            assert_eq!(*line, Some(5));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("p.toml:5: model.probabilities"), "{err}");
}

#[test]
fn small_lambda_cites_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[time]\nscheme = \"implicit_lambda\"\nlambda = 1.0\n\n[fhn]\ntheta = 0.08\nb = 0.8\n";
    let err = load_config(&write(&dir, "l.toml", text)).unwrap_err();
    assert_eq!(err.field(), Some("time.lambda"));
    let bound = lambda_bound(&FhnParams::default());
    assert!((bound - 1.54).abs() < 1e-12);
    assert!(err.to_string().contains("1.54"), "{err}");
    assert!(err.to_string().contains(":3:"), "{err}");
}

#[test]
fn lambda_at_the_bound_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[time]\nscheme = \"implicit_lambda\"\nlambda = 1.54\n";
    let loaded = load_config(&write(&dir, "ok.toml", text)).unwrap();
    assert_eq!(loaded.lambda().unwrap(), LambdaChoice::Value(1.54));
}

#[test]
fn unknown_keys_and_bad_syntax_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_config(&write(&dir, "u.toml", "[model]\nradius = [0.2]\n")).unwrap_err();
    assert!(matches!(err, ConfigError::Parse { .. }), "{err:?}");
    let err = load_config(&write(&dir, "s.toml", "[model\n")).unwrap_err();
    assert!(matches!(err, ConfigError::Parse { .. }), "{err:?}");
}

#[test]
fn h5_violating_table_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[conductivity]\nkind = \"table\"\nknots = [[0.0, 2.0], [1.0, 2.0], [2.0, 0.2], [4.0, 0.2]]\n";
    let err = load_config(&write(&dir, "h5.toml", text)).unwrap_err();
    assert_eq!(err.field(), Some("conductivity.kind"), "{err}");
}

#[test]
fn missing_table_is_reported_only_when_needed() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[effective]\nkind = \"table\"\npath = \"nowhere/table.json\"\n";
    let loaded = load_config(&write(&dir, "t.toml", text)).unwrap();
    assert!(matches!(loaded.config.effective, EffectiveSection::Table { .. }));
    let err = loaded.macro_config().unwrap_err();
    assert_eq!(err.field(), Some("effective.path"));
}

#[test]
fn manifests_parse_back_to_the_resolved_config() {
    let mut config = Config { seed: 99, ..Config::default() };
    config.sampling.window = 12.5;
    let manifest = serde_json::json!({ "command": "x", "resolved_config": config });
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "m.json", &manifest.to_string());
    let parsed = parse_config(&path, &fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(parsed, config);
}

#[test]
fn lines_are_found_inside_their_section() {
    let text = "seed = 1\n[model]\njitter = 0.1\n[sampling]\nseed = 4\njitter = 2\n";
    assert_eq!(line_of(text, "", "seed"), Some(1));
    assert_eq!(line_of(text, "model", "jitter"), Some(3));
    assert_eq!(line_of(text, "sampling", "jitter"), Some(6));
    assert_eq!(line_of(text, "model", "seed"), Some(2));
    assert_eq!(line_of(text, "fhn", "theta"), None);
}
