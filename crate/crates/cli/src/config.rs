//! Optional config file. Any key here can stand in for the flag of the same
//! name; a flag given on the command line always wins.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub prior_scale_t: Option<f64>,
    pub prior_scale_anova: Option<f64>,
    pub on_parse_fail: Option<String>,
    pub bundles: Option<PathBuf>,
    pub backend: Option<String>,
    pub members: Option<Vec<String>>,
    pub model: Option<String>,
    pub variant: Option<String>,
    pub temperature: Option<f64>,
    pub n: Option<u64>,
    pub max_parallel: Option<usize>,
    pub max_retries: Option<u32>,
    pub replicates: Option<usize>,
    pub scales: Option<Vec<f64>>,
}

impl Config {
    /// `.toml` files are read as TOML, anything else as JSON.
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        if is_toml {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        } else {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        let j = dir.path().join("c.json");
        std::fs::write(&t, "seed = 9\nscales = [0.5, 1.0]\nbackend = \"synthetic\"\n").unwrap();
        std::fs::write(&j, r#"{"seed": 9, "scales": [0.5, 1.0], "backend": "synthetic"}"#).unwrap();
        let (a, b) = (Config::load(&t).unwrap(), Config::load(&j).unwrap());
        assert_eq!(a.seed, Some(9));
        assert_eq!(a.scales, b.scales);
        assert_eq!(a.backend, b.backend);
    }

    #[test]
    fn unknown_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"sede": 1}"#).unwrap();
        assert!(Config::load(&p).is_err());
    }
}
