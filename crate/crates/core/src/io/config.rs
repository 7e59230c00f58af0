//! JSON run configuration.
//!
//! A document is an object whose keys are configuration fields. Fields can
//! be given bare (`"lambda1"`) or inside a section object (`"model"`,
//! `"train"`, `"langevin"`, or `"langevin"` nested in `"train"`). A bare
//! key resolves to the first section that defines it, in the order model,
//! train, langevin, so `seed` is the training seed and `langevin.seed` the
//! chain seed. A section prefix that does not define the key falls back to
//! the section that does (`train.lambda1` sets the model's `lambda1`).
//! Absent keys keep their defaults; unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::inference::LangevinConfig;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn langevin(&self) -> &LangevinConfig {
        &self.train.langevin
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Pretty JSON that [`parse_config`] reads back to the same value.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Section {
    Model,
    Train,
    Langevin,
}

const SECTIONS: [Section; 3] = [Section::Model, Section::Train, Section::Langevin];

impl Section {
    fn name(self) -> &'static str {
        match self {
            Section::Model => "model",
            Section::Train => "train",
            Section::Langevin => "langevin",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        SECTIONS.into_iter().find(|s| s.name() == name)
    }
}

/// Field maps of the three sections, seeded from a starting configuration.
struct Builder {
    maps: [Map<String, Value>; 3],
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("configs serialize to objects"),
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(n) if n.is_u64() => "a non-negative integer",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Whether `value` can replace a field whose current value is `current`.
fn compatible(current: &Value, value: &Value) -> bool {
    match (current, value) {
        (Value::Bool(_), Value::Bool(_)) => true,
        (Value::Number(c), Value::Number(v)) => !c.is_u64() || v.is_u64(),
        (Value::Array(_), Value::Array(items)) => items.iter().all(|i| i.as_u64().is_some()),
        _ => false,
    }
}

impl Builder {
    fn new(base: &RunConfig) -> Self {
        let mut train = object(serde_json::to_value(&base.train).expect("serializes"));
        let langevin = object(train.remove("langevin").expect("train has langevin"));
        let model = object(serde_json::to_value(&base.model).expect("serializes"));
        Self {
            maps: [model, train, langevin],
        }
    }

    fn index(section: Section) -> usize {
        SECTIONS.iter().position(|&s| s == section).expect("listed")
    }

    fn owner(&self, key: &str) -> Option<Section> {
        SECTIONS.into_iter().find(|&s| self.maps[Self::index(s)].contains_key(key))
    }

    fn set(&mut self, section: Section, key: &str, value: Value, path: &str) -> Result<()> {
        let slot = self.maps[Self::index(section)].get_mut(key).expect("owner checked");
        if !compatible(slot, &value) {
            let want = match slot {
                Value::Array(_) => "an array of non-negative integers",
                other => kind(other),
            };
            return Err(Error::Config {
                key: path.into(),
                message: format!("expected {want}, got {}", kind(&value)),
            });
        }
        *slot = value;
        Ok(())
    }

    /// Assigns `value` at the dotted `path`.
    fn assign(&mut self, path: &str, value: Value) -> Result<()> {
        let parts: Vec<&str> = path.split('.').collect();
        let unknown = || Error::Config {
            key: path.into(),
            message: "unknown configuration key".into(),
        };
        let (hint, key) = match parts.as_slice() {
            [key] => (None, *key),
            [section, key] => (Some(Section::from_name(section).ok_or_else(unknown)?), *key),
            ["train", "langevin", key] => (Some(Section::Langevin), *key),
            _ => return Err(unknown()),
        };
        if let Some(section) = Section::from_name(key).filter(|_| value.is_object()) {
            let nested_ok = match hint {
                None => true,
                Some(Section::Train) => section == Section::Langevin,
                Some(_) => false,
            };
            if !nested_ok {
                return Err(unknown());
            }
            let Value::Object(fields) = value else { unreachable!() };
            for (k, v) in fields {
                self.assign(&format!("{path}.{k}"), v)?;
            }
            return Ok(());
        }
        let section = match hint {
            Some(s) if self.maps[Self::index(s)].contains_key(key) => s,
            _ => self.owner(key).ok_or_else(unknown)?,
        };
        self.set(section, key, value, path)
    }

    fn build(self) -> Result<RunConfig> {
        let [model, mut train, langevin] = self.maps;
        train.insert("langevin".into(), Value::Object(langevin));
        let cfg = RunConfig {
            model: serde_json::from_value(Value::Object(model))?,
            train: serde_json::from_value(Value::Object(train))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads a configuration document on top of the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_onto(&RunConfig::default(), text)
}

/// Reads a configuration document on top of `base`.
pub fn parse_config_onto(base: &RunConfig, text: &str) -> Result<RunConfig> {
    let value: Value = serde_json::from_str(text)?;
    let Value::Object(fields) = value else {
        return Err(Error::Config {
            key: "<root>".into(),
            message: format!("expected an object, got {}", kind(&value)),
        });
    };
    let mut b = Builder::new(base);
    for (k, v) in fields {
        b.assign(&k, v)?;
    }
    b.build()
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    load_config_onto(&RunConfig::default(), path)
}

pub fn load_config_onto(base: &RunConfig, path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    parse_config_onto(base, &text).map_err(|e| match e {
        Error::Json(j) => Error::Media {
            path: path.to_path_buf(),
            message: j.to_string(),
        },
        other => other,
    })
}

/// Applies `key=value` assignments, where `key` is a dotted path and
/// `value` is JSON (bare words are taken as strings).
pub fn apply_overrides(cfg: &RunConfig, assignments: &[String]) -> Result<RunConfig> {
    let mut b = Builder::new(cfg);
    for a in assignments {
        let (key, raw) = a.split_once('=').ok_or_else(|| Error::Config {
            key: a.clone(),
            message: "override must have the form key=value".into(),
        })?;
        let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().into()));
        b.assign(key.trim(), value)?;
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let (m, t) = (&cfg.model, &cfg.train);
        assert_eq!((m.sigma, m.lambda1, m.lambda2), (0.5, 1.0, 0.005));
        assert_eq!((t.learning_rate, t.adam_beta1), (0.001, 0.5));
        assert_eq!((cfg.langevin().step_size, cfg.langevin().steps_per_iteration), (0.03, 15));
        assert_eq!(
            (m.state_dim, m.motion_state_dim, m.residual_state_dim, m.noise_dim, m.appearance_dim),
            (80, 50, 30, 100, 10)
        );
    }

    #[test]
    fn single_override() {
        let cfg = parse_config(r#"{"lambda1": 5}"#).unwrap();
        let mut want = RunConfig::default();
        want.model.lambda1 = 5.0;
        assert_eq!(cfg, want);
    }

    #[test]
    fn state_split_must_add_up() {
        let err = parse_config(r#"{"state_dim": 60, "motion_state_dim": 50, "residual_state_dim": 30}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "state_dim"), "{err}");
        assert!(err.to_string().contains("50 + 30"));
    }

    #[test]
    fn errors_carry_key_paths() {
        let err = parse_config(r#"{"model": {"sigma": "big"}}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "model.sigma"), "{err}");
        let err = parse_config(r#"{"langevin": {"steps_per_iteration": 1.5}}"#).unwrap_err();
        assert!(err.to_string().contains("langevin.steps_per_iteration"), "{err}");
        let err = parse_config(r#"{"lamda1": 1}"#).unwrap_err();
        assert!(err.to_string().contains("lamda1"), "{err}");
        let err = parse_config(r#"{"sigma": -1}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "sigma"), "{err}");
        assert!(parse_config("[1]").is_err());
    }

    #[test]
    fn sections_and_seeds() {
        let cfg = parse_config(r#"{"seed": 3, "train": {"epochs": 7, "langevin": {"seed": 4}}, "model": {"lambda2": 0.5}}"#)
            .unwrap();
        assert_eq!((cfg.train.seed, cfg.langevin().seed, cfg.train.epochs), (3, 4, 7));
        assert_eq!(cfg.model.lambda2, 0.5);
    }

    #[test]
    fn echo_reparses_exactly() {
        let mut cfg = RunConfig::default();
        cfg.model.lambda2 = 0.1 + 0.2;
        cfg.train.langevin.seed = 11;
        assert_eq!(parse_config(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn dotted_overrides() {
        let base = RunConfig::default();
        let sets = [
            "train.lambda1=5",
            "langevin.step_size=0.01",
            "trackable_only=true",
            "emission_channels=[8,4]",
            "image_size=16",
        ]
            .map(String::from);
        let cfg = apply_overrides(&base, &sets).unwrap();
        assert_eq!(cfg.model.lambda1, 5.0);
        assert_eq!(cfg.langevin().step_size, 0.01);
        assert!(cfg.model.trackable_only);
        assert_eq!(cfg.model.emission_channels, vec![8, 4]);
        assert!(apply_overrides(&base, &["lambda1".into()]).is_err());
        assert!(apply_overrides(&base, &["model.nope=1".into()]).is_err());
        let err = apply_overrides(&base, &["epochs=many".into()]).unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
    }
}
