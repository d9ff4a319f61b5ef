use std::path::Path;

use amrseq::model::{DecodeOptions, Hyperparams};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Everything a run depends on besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: String,
    pub model: Hyperparams,
    pub decode: DecodeOptions,
    pub seed: u64,
    pub threads: usize,
}

/// Starts from the preset named by `"preset"` (default `tiny`) and applies
/// every other top-level key as a hyperparameter override. A `"decode"`
/// object overrides beam-search options.
pub fn resolve(path: Option<&Path>, seed: u64, threads: usize) -> Result<RunConfig, CliError> {
    let mut user = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(CliError::Usage(format!("{}: config must be a JSON object", p.display()))),
                Err(e) => return Err(CliError::Usage(format!("{}: {e}", p.display()))),
            }
        }
        None => Map::new(),
    };
    let preset = match user.remove("preset") {
        None => "tiny".to_string(),
        Some(Value::String(s)) => s,
        Some(v) => return Err(CliError::Usage(format!("preset must be a string, got {v}"))),
    };
    let base = match preset.as_str() {
        "tiny" => Hyperparams::tiny(),
        "base" => Hyperparams::base(),
        other => return Err(CliError::Usage(format!("unknown preset `{other}` (expected tiny or base)"))),
    };
    let decode = match user.remove("decode") {
        None => DecodeOptions::default(),
        Some(v) => serde_json::from_value(v).map_err(|e| CliError::Usage(format!("decode options: {e}")))?,
    };
    let Value::Object(mut merged) = serde_json::to_value(&base).expect("hyperparameters serialize") else {
        unreachable!("hyperparameters serialize to an object")
    };
    for (k, v) in user {
        if !merged.contains_key(&k) {
            return Err(CliError::Usage(format!("unknown config key `{k}`")));
        }
        merged.insert(k, v);
    }
    let model: Hyperparams =
        serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(RunConfig { preset, model, decode, seed, threads })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_on_top_of_the_preset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"preset": "base", "layers": 2, "decode": {"beam": 3}}"#).unwrap();
        let c = resolve(Some(&p), 9, 1).unwrap();
        assert_eq!(c.model.layers, 2);
        assert_eq!(c.model.d_model, 512);
        assert_eq!(c.decode.beam, 3);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"layer": 2}"#).unwrap();
        assert!(matches!(resolve(Some(&p), 1, 1), Err(CliError::Usage(_))));
    }

    #[test]
    fn defaults_are_the_tiny_preset() {
        assert_eq!(resolve(None, 1, 1).unwrap().model, Hyperparams::tiny());
    }
}
