//! Plain-text key=value training configuration, overridable by CLI
//! flags. The effective configuration is echoed next to the run's
//! outputs so every run is reproducible from its report directory.

use std::collections::BTreeMap;
use std::path::Path;

use tweedie_core::training::TrainConfig;

use crate::error::{CliError, Result};

/// CLI-level overrides; `None` keeps the file/default value.
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub learning_rate_decayed: Option<f64>,
    pub lr_switch_epoch: Option<usize>,
    pub sigma_a_max: Option<f64>,
    pub sigma_a_min: Option<f64>,
    pub patch: Option<usize>,
    pub batch: Option<usize>,
    pub patches_per_epoch: Option<usize>,
    pub seed: Option<u64>,
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| CliError::usage(format!("bad value `{value}` for config key `{key}`")))
}

/// Applies a key=value config file over the family defaults.
pub fn apply_config_file(cfg: &mut TrainConfig, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!("config line {} is not key=value: `{raw}`", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "epochs" => cfg.epochs = parse_as(key, value)?,
            "learning_rate" => cfg.learning_rate = parse_as(key, value)?,
            "learning_rate_decayed" => cfg.learning_rate_decayed = parse_as(key, value)?,
            "lr_switch_epoch" => cfg.lr_switch_epoch = parse_as(key, value)?,
            "sigma_a_max" => cfg.sigma_a_max = parse_as(key, value)?,
            "sigma_a_min" => cfg.sigma_a_min = parse_as(key, value)?,
            "patch" => cfg.patch = parse_as(key, value)?,
            "batch" => cfg.batch = parse_as(key, value)?,
            "patches_per_epoch" => cfg.patches_per_epoch = parse_as(key, value)?,
            "seed" => cfg.seed = parse_as(key, value)?,
            other => {
                return Err(CliError::usage(format!("unknown config key `{other}`")));
            }
        }
    }
    Ok(())
}

pub fn apply_overrides(cfg: &mut TrainConfig, ov: &TrainOverrides) {
    if let Some(v) = ov.epochs {
        cfg.epochs = v;
        // Keep the default half-way switch consistent unless pinned.
        if ov.lr_switch_epoch.is_none() {
            cfg.lr_switch_epoch = v / 2;
        }
    }
    if let Some(v) = ov.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = ov.learning_rate_decayed {
        cfg.learning_rate_decayed = v;
    }
    if let Some(v) = ov.lr_switch_epoch {
        cfg.lr_switch_epoch = v;
    }
    if let Some(v) = ov.sigma_a_max {
        cfg.sigma_a_max = v;
    }
    if let Some(v) = ov.sigma_a_min {
        cfg.sigma_a_min = v;
    }
    if let Some(v) = ov.patch {
        cfg.patch = v;
    }
    if let Some(v) = ov.batch {
        cfg.batch = v;
    }
    if let Some(v) = ov.patches_per_epoch {
        cfg.patches_per_epoch = v;
    }
    if let Some(v) = ov.seed {
        cfg.seed = v;
    }
}

/// The effective configuration as sorted key=value lines.
pub fn render_effective(cfg: &TrainConfig) -> String {
    let mut map = BTreeMap::new();
    map.insert("batch", cfg.batch.to_string());
    map.insert("epochs", cfg.epochs.to_string());
    map.insert("family", cfg.family.name().to_string());
    map.insert("learning_rate", format!("{:e}", cfg.learning_rate));
    map.insert("learning_rate_decayed", format!("{:e}", cfg.learning_rate_decayed));
    map.insert("lr_switch_epoch", cfg.lr_switch_epoch.to_string());
    map.insert("patch", cfg.patch.to_string());
    map.insert("patches_per_epoch", cfg.patches_per_epoch.to_string());
    map.insert("seed", cfg.seed.to_string());
    map.insert("sigma_a_max", cfg.sigma_a_max.to_string());
    map.insert("sigma_a_min", cfg.sigma_a_min.to_string());
    let mut out = String::new();
    for (k, v) in map {
        out.push_str(&format!("{k}={v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use tweedie_core::training::NoiseFamily;

    #[test]
    fn file_then_flags_override_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.cfg");
        std::fs::write(&path, "# comment\nepochs = 10\npatch=16\nseed=3\n").unwrap();
        let mut cfg = TrainConfig::for_family(NoiseFamily::Gaussian);
        apply_config_file(&mut cfg, &path).unwrap();
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.patch, 16);
        assert_eq!(cfg.seed, 3);
        let ov = TrainOverrides { seed: Some(9), batch: Some(2), ..Default::default() };
        apply_overrides(&mut cfg, &ov);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.batch, 2);
        let text = render_effective(&cfg);
        assert!(text.contains("seed=9\n"));
        assert!(text.contains("family=gaussian\n"));
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        std::fs::write(&path, "momentum=0.9\n").unwrap();
        let mut cfg = TrainConfig::for_family(NoiseFamily::Gaussian);
        let err = apply_config_file(&mut cfg, &path).unwrap_err();
        assert_eq!(err.kind, crate::error::ExitKind::Usage);
    }
}
