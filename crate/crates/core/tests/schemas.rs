use std::path::{Path, PathBuf};

use alignbench_core::study::load_study_bundle;
use serde_json::{json, Value};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).to_path_buf()
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn validator(name: &str) -> jsonschema::Validator {
    jsonschema::validator_for(&read(&root().join("schemas").join(name))).unwrap()
}

fn errors(v: &jsonschema::Validator, doc: &Value) -> Vec<String> {
    v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path())).collect()
}

#[test]
fn fixtures_conform() {
    let meta = validator("metadata.schema.json");
    let truth = validator("ground_truth.schema.json");
    let material = validator("material.schema.json");
    let spec = validator("specification.schema.json");
    for name in ["false_consensus", "framing", "side_effect"] {
        let dir = root().join("fixtures").join(name);
        assert_eq!(errors(&meta, &read(&dir.join("metadata.json"))), Vec::<String>::new(), "{name}");
        assert_eq!(errors(&truth, &read(&dir.join("ground_truth.json"))), Vec::<String>::new(), "{name}");
        assert_eq!(errors(&spec, &read(&dir.join("specification.json"))), Vec::<String>::new(), "{name}");
        for entry in std::fs::read_dir(dir.join("materials")).unwrap() {
            let p = entry.unwrap().path();
            assert_eq!(errors(&material, &read(&p)), Vec::<String>::new(), "{}", p.display());
        }
        load_study_bundle(&dir).unwrap();
    }
}

#[test]
fn schema_and_loader_reject_the_same_metadata_faults() {
    let meta = validator("metadata.schema.json");
    let good = read(&root().join("fixtures/side_effect/metadata.json"));
    let mut unknown = good.clone();
    unknown["extra"] = json!(1);
    let mut bad_domain = good.clone();
    bad_domain["domain"] = json!("economics");
    let mut missing = good.clone();
    missing.as_object_mut().unwrap().remove("findings");

    for broken in [unknown, bad_domain, missing] {
        assert!(!errors(&meta, &broken).is_empty(), "{broken}");
        let dir = tempfile::tempdir().unwrap();
        let src = root().join("fixtures/side_effect");
        for f in ["ground_truth.json", "specification.json"] {
            std::fs::copy(src.join(f), dir.path().join(f)).unwrap();
        }
        std::fs::create_dir(dir.path().join("materials")).unwrap();
        for entry in std::fs::read_dir(src.join("materials")).unwrap() {
            let p = entry.unwrap().path();
            std::fs::copy(&p, dir.path().join("materials").join(p.file_name().unwrap())).unwrap();
        }
        std::fs::write(dir.path().join("metadata.json"), broken.to_string()).unwrap();
        assert!(load_study_bundle(dir.path()).is_err());
    }
}

#[test]
fn config_schema_matches_documented_example() {
    let v = validator("config.schema.json");
    let ok = json!({"seed": 7, "backend": "synthetic", "variant": "A3", "scales": [0.5, 0.707, 1.0], "on_parse_fail": "retry-once"});
    assert!(errors(&v, &ok).is_empty());
    assert!(!errors(&v, &json!({"sede": 7})).is_empty());
}
