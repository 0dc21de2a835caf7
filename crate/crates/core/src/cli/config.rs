use std::fs;
use std::path::Path;

use serde_json::Value;

use super::CliError;
use crate::data::ToyKind;
use crate::trainer::TrainConfig;

/// Merges `patch` into `target`. Every key in `patch` must already exist in
/// `target`; objects merge recursively, anything else is replaced.
pub fn merge_checked(target: &mut Value, patch: &Value, prefix: &str) -> Result<(), CliError> {
    let Value::Object(p) = patch else {
        return Err(CliError::Usage(format!("expected a JSON object at '{}'", if prefix.is_empty() { "<root>" } else { prefix })));
    };
    for (k, v) in p {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let Some(slot) = target.get_mut(k) else {
            return Err(CliError::Usage(format!("unknown config key '{path}'")));
        };
        if slot.is_object() && v.is_object() {
            merge_checked(slot, v, &path)?;
        } else {
            *slot = v.clone();
        }
    }
    Ok(())
}

/// Applies one `dotted.key=value` override. The value is parsed as JSON and
/// falls back to a plain string, so `dataset.kind=two_moons` needs no quotes.
pub fn apply_set(target: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override '{assignment}' is not of the form key=value")))?;
    let key = key.trim();
    let mut slot = &mut *target;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| CliError::Usage(format!("unknown config key '{key}'")))?;
    }
    *slot = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    Ok(())
}

/// `base ⊕ file ⊕ --dataset ⊕ --set`, left to right, then per-kind dataset
/// defaults and validation.
pub fn resolve_config(base: &TrainConfig, file: Option<&Path>, dataset: Option<&str>, sets: &[String]) -> Result<TrainConfig, CliError> {
    let mut v = base.to_json();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let patch: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        merge_checked(&mut v, &patch, "")?;
    }
    if let Some(name) = dataset {
        ToyKind::parse(name).map_err(|e| CliError::Usage(e.to_string()))?;
        apply_set(&mut v, &format!("dataset.kind={name}"))?;
    }
    for s in sets {
        apply_set(&mut v, s)?;
    }
    let cfg: TrainConfig = serde_json::from_value(v).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    let cfg = cfg.resolved();
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn usage(e: CliError) -> String {
        match e {
            CliError::Usage(m) => m,
            CliError::Runtime(e) => panic!("expected a usage error, got {e}"),
        }
    }

    #[test]
    fn precedence_is_defaults_then_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"steps": 7, "objective": {"lambda_v": 0.2, "margin": 2}}"#).unwrap();
        let cfg = resolve_config(&TrainConfig::default(), Some(&file), Some("two_moons"), &["objective.lambda_v=0".into()]).unwrap();
        assert_eq!(cfg.steps, 7);
        assert_eq!(cfg.objective.margin, 2.0);
        assert_eq!(cfg.objective.lambda_v, 0.0);
        assert_eq!(cfg.objective.gamma_v, 1e-3);
        assert_eq!(cfg.dataset.kind, ToyKind::TwoMoons);
        assert_eq!(cfg.dataset.scale, Some(1.0));
    }

    #[test]
    fn unknown_keys_are_named() {
        let base = TrainConfig::default();
        assert!(usage(resolve_config(&base, None, None, &["objective.lambda_vee=1".into()]).unwrap_err()).contains("objective.lambda_vee"));
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"sampler": {"nfee": 3}}"#).unwrap();
        assert!(usage(resolve_config(&base, Some(&file), None, &[]).unwrap_err()).contains("sampler.nfee"));
        assert!(usage(resolve_config(&base, None, Some("swiss_roll"), &[]).unwrap_err()).contains("swiss_roll"));
        assert!(usage(resolve_config(&base, None, None, &["steps".into()]).unwrap_err()).contains("key=value"));
    }

    #[test]
    fn overrides_round_trip_through_json() {
        let sets = ["steps=12".to_string(), "objective.sign_convention=as_written".into(), "model.potential.hidden=[16]".into()];
        let cfg = resolve_config(&TrainConfig::default(), None, None, &sets).unwrap();
        let back: TrainConfig = serde_json::from_value(cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.model.potential.hidden, [16]);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        assert!(usage(resolve_config(&TrainConfig::default(), None, None, &["steps=0".into()]).unwrap_err()).contains("steps"));
        assert!(usage(resolve_config(&TrainConfig::default(), None, None, &["steps=abc".into()]).unwrap_err()).contains("invalid config"));
    }
}
