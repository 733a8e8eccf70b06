//! Flat JSON configuration files.
//!
//! A config is a single JSON object whose values are scalars or arrays of
//! scalars. Missing keys keep their defaults; unknown keys are rejected.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;
use specbias_core::Error as CoreError;

/// A configuration problem, always attributed to one field.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Maps a validation failure from the core crate onto the field it names.
pub fn from_core(err: CoreError) -> Result<ConfigError, CoreError> {
    match err {
        CoreError::InvalidParameter { name, reason } => Ok(ConfigError::new(name, reason)),
        other => Err(other),
    }
}

pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ConfigError::new("<file>", e.to_string()))?;
    let Value::Object(map) = &value else {
        return Err(ConfigError::new("<file>", "expected a JSON object"));
    };
    for (key, v) in map {
        let nested = match v {
            Value::Object(_) => true,
            Value::Array(items) => items
                .iter()
                .any(|i| matches!(i, Value::Object(_) | Value::Array(_))),
            _ => false,
        };
        if nested {
            return Err(ConfigError::new(
                key.clone(),
                "values must be scalars or flat arrays",
            ));
        }
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        // unknown keys are reported at the root
        let field = match (path.as_str(), unknown_field(&inner)) {
            (".", Some(name)) | ("", Some(name)) => name,
            (".", None) | ("", None) => "<file>".to_string(),
            _ => path,
        };
        ConfigError::new(field, inner)
    })
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use specbias_core::experiments::{FreqSweepConfig, VarianceSweepConfig};
    use specbias_core::msk::SpectrumMap;

    #[test]
    fn missing_keys_keep_defaults() {
        let c: FreqSweepConfig = parse_config(r#"{"width": 128, "arms": ["identity"]}"#).unwrap();
        assert_eq!(c.width, 128);
        assert_eq!(c.n, FreqSweepConfig::default().n);
    }

    #[test]
    fn errors_name_the_field() {
        let e = parse_config::<FreqSweepConfig>(r#"{"width": "wide"}"#).unwrap_err();
        assert_eq!(e.field, "width");
        let e = parse_config::<FreqSweepConfig>(r#"{"widht": 3}"#).unwrap_err();
        assert_eq!(e.field, "widht");
        let e = parse_config::<FreqSweepConfig>(r#"{"arms": ["sgd"]}"#).unwrap_err();
        assert!(e.field.starts_with("arms"), "{e}");
        let e = parse_config::<FreqSweepConfig>(r#"{"seeds": {"a": 1}}"#).unwrap_err();
        assert_eq!(e.field, "seeds");
        let e = parse_config::<VarianceSweepConfig>(r#"{"maps": ["power:2"]}"#).unwrap_err();
        assert!(e.field.starts_with("maps"), "{e}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = VarianceSweepConfig {
            maps: vec![
                SpectrumMap::Identity,
                SpectrumMap::Custom {
                    knots: vec![(0.0, 1.0), (2.0, 3.5)],
                },
            ],
            ..VarianceSweepConfig::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(parse_config::<VarianceSweepConfig>(&text).unwrap(), c);
        let f = FreqSweepConfig::default();
        assert_eq!(
            parse_config::<FreqSweepConfig>(&serde_json::to_string(&f).unwrap()).unwrap(),
            f
        );
    }
}
