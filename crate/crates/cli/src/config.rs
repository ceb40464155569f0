//! Flat dotted-key configuration: a TOML file merged with `--set key=value`
//! overrides. Unknown keys are rejected; the resolved map is copied next to
//! every artifact a command produces.

use diffcap_core::model::ModelConfig;
use diffcap_core::training::TrainConfig;
use diffcap_core::{Error, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

const KNOWN_KEYS: &[&str] = &[
    "data.dir",
    "data.seed",
    "data.n_train",
    "data.n_val",
    "data.n_test",
    "data.image_size",
    "vocab.path",
    "vocab.min_freq",
    "model.preset",
    "model.d_i",
    "model.d_t",
    "model.patch_size",
    "model.image_size",
    "model.n_intra",
    "model.n_inter",
    "model.n_g",
    "model.n_cap_enc",
    "model.n_cap_dec",
    "model.heads",
    "model.dropout",
    "model.l_max",
    "train.epochs",
    "train.batch_size",
    "train.lr_vision",
    "train.lr_caption",
    "train.lr_adapt",
    "train.seed",
    "train.freeze_vision",
    "eval.split",
    "eval.ks",
    "out.dir",
];

#[derive(Debug, Clone, Default)]
pub struct FlatConfig {
    values: BTreeMap<String, String>,
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, String>) -> Result<()> {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out)?;
            }
            Ok(())
        }
        toml::Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
            Ok(())
        }
        toml::Value::Integer(i) => {
            out.insert(prefix.to_string(), i.to_string());
            Ok(())
        }
        toml::Value::Float(f) => {
            out.insert(prefix.to_string(), f.to_string());
            Ok(())
        }
        toml::Value::Boolean(b) => {
            out.insert(prefix.to_string(), b.to_string());
            Ok(())
        }
        toml::Value::Array(items) => {
            let parts: Result<Vec<String>> = items
                .iter()
                .map(|v| match v {
                    toml::Value::Integer(i) => Ok(i.to_string()),
                    toml::Value::String(s) => Ok(s.clone()),
                    other => Err(Error::Config(format!(
                        "unsupported array element {other} at key '{prefix}'"
                    ))),
                })
                .collect();
            out.insert(prefix.to_string(), parts?.join(","));
            Ok(())
        }
        other => Err(Error::Config(format!(
            "unsupported value {other} at key '{prefix}'"
        ))),
    }
}

impl FlatConfig {
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let table: toml::Value = body
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            flatten("", &table, &mut values)?;
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{s}' is not key=value")))?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        for key in values.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown config key '{key}'")));
            }
        }
        Ok(Self { values })
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.values.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("invalid value '{raw}' for key '{key}'"))),
        }
    }

    pub fn get_str(&self, key: &str, default: &str) -> String {
        self.values
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string())
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get_str("out.dir", "out"))
    }

    pub fn data_dir(&self) -> PathBuf {
        match self.values.get("data.dir") {
            Some(d) => PathBuf::from(d),
            None => self.out_dir().join("data"),
        }
    }

    pub fn vocab_path(&self) -> PathBuf {
        match self.values.get("vocab.path") {
            Some(p) => PathBuf::from(p),
            None => self.out_dir().join("vocab.txt"),
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let preset = self.get_str("model.preset", "desk");
        let mut cfg = match preset.as_str() {
            "desk" => ModelConfig::desk(vocab_size),
            "full_scale" => ModelConfig::full_scale(vocab_size),
            other => {
                return Err(Error::Config(format!(
                    "unknown model.preset '{other}' (expected desk or full_scale)"
                )))
            }
        };
        cfg.d_i = self.get("model.d_i", cfg.d_i)?;
        cfg.d_t = self.get("model.d_t", cfg.d_t)?;
        cfg.patch_size = self.get("model.patch_size", cfg.patch_size)?;
        cfg.image_size = self.get("model.image_size", cfg.image_size)?;
        cfg.n_intra = self.get("model.n_intra", cfg.n_intra)?;
        cfg.n_inter = self.get("model.n_inter", cfg.n_inter)?;
        cfg.n_g = self.get("model.n_g", cfg.n_g)?;
        cfg.n_cap_enc = self.get("model.n_cap_enc", cfg.n_cap_enc)?;
        cfg.n_cap_dec = self.get("model.n_cap_dec", cfg.n_cap_dec)?;
        cfg.heads = self.get("model.heads", cfg.heads)?;
        cfg.dropout = self.get("model.dropout", cfg.dropout)?;
        cfg.l_max = self.get("model.l_max", cfg.l_max)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut tc = TrainConfig::desk(self.get("train.seed", 42u64)?);
        tc.epochs = self.get("train.epochs", tc.epochs)?;
        tc.batch_size = self.get("train.batch_size", tc.batch_size)?;
        tc.lr_vision = self.get("train.lr_vision", tc.lr_vision)?;
        tc.lr_caption = self.get("train.lr_caption", tc.lr_caption)?;
        tc.lr_adapt = self.get("train.lr_adapt", tc.lr_adapt)?;
        tc.freeze_vision = self.get("train.freeze_vision", tc.freeze_vision)?;
        tc.validate()?;
        Ok(tc)
    }

    pub fn eval_ks(&self) -> Result<Vec<usize>> {
        let raw = self.get_str("eval.ks", "1,5,10");
        raw.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid eval.ks entry '{p}'")))
            })
            .collect()
    }

    /// Write the fully resolved key set next to a command's artifacts.
    pub fn write_resolved(&self, dir: &Path, command: &str) -> Result<()> {
        let mut body = String::new();
        for (k, v) in &self.values {
            body.push_str(&format!("{k} = {v:?}\n"));
        }
        let path = dir.join(format!("{command}.resolved.toml"));
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }
}
