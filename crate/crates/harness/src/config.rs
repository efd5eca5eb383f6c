//! JSON experiment configs with dotted-path overrides.
//!
//! A config file only needs the keys it changes; everything else comes from
//! [`ExperimentConfig::default`]. Overrides have the form `path=value`, e.g.
//! `optim.lr=0.001` or `cal.condition={"kind":"patch_mask","ratio":0.5}`.
//! The value is parsed as JSON and taken as a plain string if that fails.
//! Unknown keys are rejected so typos do not silently fall back to defaults.

use std::fs;
use std::path::Path;

use cal_core::train::ExperimentConfig;
use serde_json::Value;

use crate::error::{HarnessError, Result};

/// Objects replaced wholesale instead of merged key by key, because their
/// set of fields depends on a tag.
const TAGGED: &[&str] = &["cal.condition"];

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut tree = serde_json::to_value(ExperimentConfig::default())?;
    if let Some(path) = path {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut tree, file, "")?;
    }
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    from_tree(tree)
}

pub fn from_tree(tree: Value) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        serde_json::from_value(tree).map_err(|e| HarnessError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn apply_override(tree: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override {spec:?} is not path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut patch = value;
    for key in path.rsplit('.') {
        let mut obj = serde_json::Map::new();
        obj.insert(key.to_string(), patch);
        patch = Value::Object(obj);
    }
    merge(tree, patch, "")
}

fn merge(target: &mut Value, patch: Value, at: &str) -> Result<()> {
    let Value::Object(fields) = patch else {
        *target = patch;
        return Ok(());
    };
    if TAGGED.contains(&at) {
        *target = Value::Object(fields);
        return Ok(());
    }
    let Value::Object(slots) = target else {
        return Err(HarnessError::Config(format!("{at} is not an object")));
    };
    for (key, value) in fields {
        let path = if at.is_empty() {
            key.clone()
        } else {
            format!("{at}.{key}")
        };
        let slot = slots
            .get_mut(&key)
            .ok_or_else(|| HarnessError::Config(format!("unknown config key {path}")))?;
        merge(slot, value, &path)?;
    }
    Ok(())
}

/// Pretty JSON with every field spelled out.
pub fn to_json(config: &ExperimentConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(config)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cal_core::cal::ContrastCondition;

    fn with(overrides: &[&str]) -> Result<ExperimentConfig> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        load(None, &o)
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = with(&[
            "optim.lr=0.01",
            "cal.beta=null",
            "model.image_removal_mode=AttentionMask",
        ])
        .unwrap();
        assert_eq!(c.optim.lr, 0.01);
        assert!(c.cal.beta.is_infinite());
        assert_eq!(
            c.model.image_removal_mode,
            cal_core::model::ImageRemovalMode::AttentionMask
        );
        let c = with(&[r#"cal.condition={"kind":"patch_mask","ratio":0.7}"#]).unwrap();
        assert_eq!(c.cal.condition, ContrastCondition::PatchMask { ratio: 0.7 });
        let c = with(&["output_dir=runs/x"]).unwrap();
        assert_eq!(c.output_dir, "runs/x");
    }

    #[test]
    fn typos_and_invalid_values_are_config_errors() {
        for bad in [
            &["optim.lrr=1"][..],
            &["cal.window=4"],
            &["optim.steps=0"],
            &["nonsense"],
            &["optim=3"],
        ] {
            let e = with(bad).unwrap_err();
            assert_eq!(e.exit_code(), crate::error::EXIT_CONFIG, "{bad:?}: {e}");
        }
    }

    #[test]
    fn default_round_trips() {
        let d = ExperimentConfig::default();
        let back = from_tree(serde_json::from_str(&to_json(&d).unwrap()).unwrap()).unwrap();
        assert_eq!(back, d);
    }
}
