//! Every report kind validates against the shipped schema.

use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn schema() -> jsonschema::JSONSchema {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json")).unwrap();
    jsonschema::JSONSchema::compile(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn assert_valid(schema: &jsonschema::JSONSchema, path: &Path) {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    if let Err(errors) = schema.validate(&doc) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("{} is invalid: {msgs:?}", path.display());
    };
}

fn run(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_gradcert")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reports_match_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "out = \"out\"\n[dataset]\nkind = \"synthetic-tabular\"\nrows = 200\nfeatures = 5\n[model]\npreset = \"tabular\"\n\
         [train]\nregularizer = \"grad-cert\"\nalpha = 1.0\nepsilon = 0.02\nepochs = 2\nprobe_count = 5\n\
         [evaluate]\nepsilons = [0.01]\ngammas = [0.01]\nlimit = 5\nbias_sweep = [0.0, 0.5]\n[evaluate.attack]\nsteps = 3\n\
         [demo]\ngrid = 3\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let model = dir.path().join("out/model.json");
    let m = model.to_str().unwrap();
    run(&["train", "--config", c]);
    run(&["certify", "--config", c, "--model", m, "--mode", "all"]);
    run(&["attack", "--config", c, "--model", m]);
    run(&["evaluate", "--config", c, "--model", m]);
    let moons = dir.path().join("m.toml");
    std::fs::write(&moons, "out = \"demo\"\n[dataset]\nkind = \"half-moons\"\ntrain = 40\ntest = 20\n[model]\npreset = \"halfmoons\"\n[train]\nepochs = 1\nprobe_count = 2\n[demo]\nepsilons = [0.0]\ngrid = 3\n").unwrap();
    run(&["demo-halfmoons", "--config", moons.to_str().unwrap()]);
    let schema = schema();
    for f in ["out/train.json", "out/certify.json", "out/attack.json", "out/evaluate.json", "demo/demo.json"] {
        assert_valid(&schema, &dir.path().join(f));
    }
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/evaluate.json")).unwrap()).unwrap();
    assert_eq!(doc["results"]["bias_sweep"].as_array().unwrap().len(), 2);
}

#[test]
fn schema_rejects_a_broken_report() {
    let doc = serde_json::json!({"format": "gradcert-report", "version": 2, "command": "train"});
    assert!(!schema().is_valid(&doc));
}
