//! JSON configuration file for the CLI.
//!
//! Every section is optional and falls back to the defaults:
//!
//! ```json
//! {
//!   "ap": { "thresholds": [0.4, 0.5], "comparator": "greater-or-equal" },
//!   "shrink": { "mode": "fixed-rescale", "rescale_factor": 0.875 },
//!   "augment": { "name": "heavy", "max_rotation_deg": 4.0 }
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentPreset, PresetName};
use crate::error::Result;
use crate::fusion::ShrinkConfig;
use crate::metric::ApConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub ap: ApConfig,
    pub shrink: ShrinkConfig,
    /// Partial preset: `name` picks the base preset, other keys override it.
    pub augment: Option<serde_json::Map<String, serde_json::Value>>,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.ap.validate()?;
        cfg.shrink.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Config::from_json(&std::fs::read_to_string(path)?)
    }

    /// The preset named `name` with this config's overrides applied. A
    /// `name` key inside the overrides takes precedence.
    pub fn preset(&self, name: PresetName) -> Result<AugmentPreset> {
        let Some(overrides) = &self.augment else {
            return Ok(AugmentPreset::named(name));
        };
        let base_name = match overrides.get("name") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => name,
        };
        let mut merged = serde_json::to_value(AugmentPreset::named(base_name))?;
        let obj = merged.as_object_mut().expect("preset serializes to an object");
        for (k, v) in overrides {
            obj.insert(k.clone(), v.clone());
        }
        let preset: AugmentPreset = serde_json::from_value(merged)?;
        preset.validate()?;
        Ok(preset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::RotationMode;
    use crate::fusion::ShrinkMode;
    use crate::metric::Comparator;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(Config::from_json("{}").unwrap(), Config::default());
    }

    #[test]
    fn sections_override() {
        let cfg = Config::from_json(
            r#"{"ap": {"thresholds": [0.5], "comparator": "greater-or-equal"},
                "shrink": {"mode": "fixed-rescale"},
                "augment": {"name": "heavy", "rotation_mode": "custom", "max_rotation_deg": 3.0}}"#,
        )
        .unwrap();
        assert_eq!(cfg.ap.thresholds, vec![0.5]);
        assert_eq!(cfg.ap.comparator, Comparator::GreaterOrEqual);
        assert_eq!(cfg.shrink.mode, ShrinkMode::FixedRescale);
        assert_eq!(cfg.shrink.rescale_factor, 0.875);
        let p = cfg.preset(PresetName::None).unwrap();
        assert_eq!(p.name, PresetName::Heavy);
        assert_eq!(p.rotation_mode, RotationMode::Custom);
        assert_eq!(p.max_rotation_deg, 3.0);
        assert_eq!(p.shear_deg, 4.0);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_json(r#"{"ap": {"thresholds": [0.6, 0.5]}}"#).is_err());
        assert!(Config::from_json(r#"{"shrink": {"scale": -1}}"#).is_err());
        assert!(Config::from_json(r#"{"bogus": 1}"#).is_err());
        let cfg = Config::from_json(r#"{"augment": {"shear_deg": -2}}"#).unwrap();
        assert!(cfg.preset(PresetName::Light).is_err());
    }
}
