//! TOML run configuration.
//!
//! Every section is optional at parse time; commands ask for the sections
//! they need and get a config error naming the missing section. Unknown keys
//! are rejected with the line and column of the offending key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::{CycleTiming, DetectionChain, EnsembleGeometry, ExperimentParams};
use crate::repeater::{Grid, RepeaterParams, FIG8_ANCHOR_RATE};

pub const FIG8_PRESET: &str = include_str!("../presets/fig8.toml");
pub const REFERENCE_POINT_PRESET: &str = include_str!("../presets/reference_point.toml");

/// Distance grid and curve list of a repeater sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub l_min: f64,
    pub l_max: f64,
    pub steps: usize,
    #[serde(default)]
    pub grid: Grid,
    /// One curve per zero-delay retrieval; empty means `repeater.r0` only.
    #[serde(default)]
    pub r0_curves: Vec<f64>,
    /// Rate level whose crossing distance is reported per curve.
    #[serde(default = "default_threshold")]
    pub threshold_rate: f64,
}

fn default_threshold() -> f64 {
    FIG8_ANCHOR_RATE
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: Option<ExperimentParams>,
    pub timing: Option<CycleTiming>,
    pub chain: Option<DetectionChain>,
    pub geometry: Option<EnsembleGeometry>,
    pub repeater: Option<RepeaterParams>,
    pub sweep: Option<SweepSpec>,
}

/// A parsed configuration with the digest of its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: Config,
    /// Lowercase hex SHA-256 of the source bytes.
    pub hash: String,
    /// File path, or `preset:<name>`.
    pub origin: String,
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn located(text: &str, origin: &str, err: toml::de::Error) -> Error {
    let msg = err.message().to_string();
    match err.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            Error::Config(format!("{origin}:{line}:{col}: {msg}"))
        }
        None => Error::Config(format!("{origin}: {msg}")),
    }
}

fn section<T>(v: &Option<T>, name: &str, origin: &str) -> Result<T>
where
    T: Clone,
{
    v.clone()
        .ok_or_else(|| Error::Config(format!("{origin}: missing section [{name}]")))
}

fn in_section<T>(origin: &str, name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Domain(m) | Error::Config(m) => Error::Config(format!("{origin}: [{name}] {m}")),
        other => other,
    })
}

impl LoadedConfig {
    pub fn parse(text: &str, origin: impl Into<String>) -> Result<Self> {
        let origin = origin.into();
        let config: Config = toml::from_str(text).map_err(|e| located(text, &origin, e))?;
        let loaded = LoadedConfig {
            config,
            hash: content_hash(text.as_bytes()),
            origin,
        };
        loaded.validate_present()?;
        Ok(loaded)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.display().to_string())
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "fig8" => FIG8_PRESET,
            "reference_point" | "reference-point" => REFERENCE_POINT_PRESET,
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset '{name}' (expected fig8 or reference_point)"
                )))
            }
        };
        Self::parse(text, format!("preset:{name}"))
    }

    /// Validates whichever sections are present.
    fn validate_present(&self) -> Result<()> {
        let c = &self.config;
        let o = &self.origin;
        if let Some(s) = &c.experiment {
            in_section(o, "experiment", s.validate())?;
        }
        if let Some(s) = &c.timing {
            in_section(o, "timing", s.validate())?;
        }
        if let Some(s) = &c.chain {
            in_section(o, "chain", s.validate())?;
        }
        if let Some(s) = &c.geometry {
            in_section(o, "geometry", s.validate())?;
        }
        if let Some(s) = &c.repeater {
            in_section(o, "repeater", s.validate())?;
        }
        if let Some(s) = &c.sweep {
            in_section(o, "sweep", validate_sweep(s))?;
        }
        Ok(())
    }

    pub fn experiment(&self) -> Result<ExperimentParams> {
        section(&self.config.experiment, "experiment", &self.origin)
    }

    /// Configured timing, or the reference 42 ms / 8 ms / 2 us cycle.
    pub fn timing_or_default(&self) -> CycleTiming {
        self.config
            .timing
            .clone()
            .unwrap_or_else(CycleTiming::reference)
    }

    pub fn chain(&self) -> Result<DetectionChain> {
        section(&self.config.chain, "chain", &self.origin)
    }

    pub fn geometry(&self) -> Result<EnsembleGeometry> {
        section(&self.config.geometry, "geometry", &self.origin)
    }

    pub fn repeater(&self) -> Result<RepeaterParams> {
        section(&self.config.repeater, "repeater", &self.origin)
    }

    pub fn sweep(&self) -> Result<SweepSpec> {
        section(&self.config.sweep, "sweep", &self.origin)
    }
}

fn validate_sweep(s: &SweepSpec) -> Result<()> {
    if !(s.l_min > 0.0 && s.l_max >= s.l_min && s.l_max.is_finite()) {
        return Err(Error::domain("need 0 < l_min <= l_max"));
    }
    if s.steps < 2 {
        return Err(Error::domain("steps must be >= 2"));
    }
    if !(s.threshold_rate > 0.0) {
        return Err(Error::domain("threshold_rate must be > 0"));
    }
    for r in &s.r0_curves {
        if !(*r > 0.0 && *r <= 1.0) {
            return Err(Error::domain(format!("r0_curves entry {r} outside (0, 1]")));
        }
    }
    Ok(())
}

/// Resolves `--config` / `--preset`; exactly one must be given.
pub fn resolve(config: Option<&PathBuf>, preset: Option<&str>) -> Result<LoadedConfig> {
    match (config, preset) {
        (Some(p), None) => LoadedConfig::load(p),
        (None, Some(name)) => LoadedConfig::preset(name),
        (Some(_), Some(_)) => Err(Error::Config(
            "give either --config or --preset, not both".into(),
        )),
        (None, None) => Err(Error::Config(
            "a --config file or --preset is required".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        let f = LoadedConfig::preset("fig8").unwrap();
        let r = f.repeater().unwrap();
        assert_eq!(r, crate::repeater::fig8_preset(0.8));
        assert_eq!(f.sweep().unwrap().r0_curves, vec![0.8, 0.6]);

        let p = LoadedConfig::preset("reference_point").unwrap();
        let e = p.experiment().unwrap();
        assert_eq!(e.chi, 0.01);
        assert_eq!(e.decay.r0, 0.77);
        assert!(p.chain().unwrap().budget().is_ok());
        assert!(p.geometry().is_ok());
        assert_eq!(p.timing_or_default(), CycleTiming::reference());
    }

    #[test]
    fn unknown_key_reports_location() {
        let text = "[experiment]\nchi = 0.01\nchii = 0.02\n";
        let err = LoadedConfig::parse(text, "x.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("x.toml:3:"), "{msg}");
        assert!(msg.contains("chii"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_section_is_named() {
        let c = LoadedConfig::parse("", "empty.toml").unwrap();
        let msg = c.geometry().unwrap_err().to_string();
        assert!(msg.contains("[geometry]"), "{msg}");
    }

    #[test]
    fn out_of_range_value_names_section() {
        let text = REFERENCE_POINT_PRESET.replace("chi = 0.01", "chi = 1.5");
        let msg = LoadedConfig::parse(&text, "bad.toml")
            .unwrap_err()
            .to_string();
        assert!(msg.contains("[experiment]") && msg.contains("chi"), "{msg}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = LoadedConfig::parse(REFERENCE_POINT_PRESET, "a").unwrap();
        let b = LoadedConfig::parse(&format!("{REFERENCE_POINT_PRESET}\n"), "b").unwrap();
        assert_eq!(a.hash.len(), 64);
        assert_ne!(a.hash, b.hash);
        assert_eq!(a.hash, content_hash(REFERENCE_POINT_PRESET.as_bytes()));
    }

    #[test]
    fn resolve_requires_exactly_one_source() {
        assert!(resolve(None, None).is_err());
        assert!(resolve(Some(&PathBuf::from("x")), Some("fig8")).is_err());
        assert!(resolve(None, Some("nope")).is_err());
    }
}
