//! Run settings: command-line flags over the config file over defaults.

use std::path::Path;

use redgrid::reduction::{ReductionConfig, Truncation};
use redgrid::smallsignal::Excitation;
use serde::Deserialize;

/// Contents of a `--config` TOML file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub h: Option<f64>,
    pub t_end: Option<f64>,
    pub p_max: Option<f64>,
    /// Degrees.
    pub delta_threshold: Option<f64>,
    pub dominant_count: Option<usize>,
    pub f_max: Option<f64>,
    pub excitation: Option<Excitation>,
    pub truncation: Option<Truncation>,
    pub bt_tol: Option<f64>,
    pub repeats: Option<usize>,
    pub log_level: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }
}

/// Settings given on the command line; `None` means not given.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlagConfig {
    pub h: Option<f64>,
    pub t_end: Option<f64>,
    pub p_max: Option<f64>,
    pub delta_threshold: Option<f64>,
    pub dominant_count: Option<usize>,
    pub f_max: Option<f64>,
    pub excitation: Option<Excitation>,
    pub truncation: Option<Truncation>,
    pub bt_tol: Option<f64>,
    pub repeats: Option<usize>,
}

/// Defaults: `h = 0.01 s`, `t_end = 16 s`, `p_max = 0.5`,
/// `delta_threshold = 10 deg`, two dominant modes below `f_max = 1 Hz`,
/// `bt_tol = 1e-4`, three timed repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub h: f64,
    pub t_end: f64,
    pub reduction: ReductionConfig,
    pub repeats: usize,
}

impl RunConfig {
    pub fn merge(flags: &FlagConfig, file: &FileConfig) -> Self {
        let d = ReductionConfig::default();
        RunConfig {
            h: flags.h.or(file.h).unwrap_or(0.01),
            t_end: flags.t_end.or(file.t_end).unwrap_or(16.0),
            reduction: ReductionConfig {
                p_max: flags.p_max.or(file.p_max).unwrap_or(d.p_max),
                delta_threshold: flags
                    .delta_threshold
                    .or(file.delta_threshold)
                    .map_or(d.delta_threshold, f64::to_radians),
                dominant_count: flags
                    .dominant_count
                    .or(file.dominant_count)
                    .unwrap_or(d.dominant_count),
                f_max: flags.f_max.or(file.f_max).unwrap_or(d.f_max),
                excitation: flags.excitation.or(file.excitation).unwrap_or(d.excitation),
                truncation: flags.truncation.or(file.truncation).unwrap_or(d.truncation),
                bt_tol: flags.bt_tol.or(file.bt_tol).unwrap_or(d.bt_tol),
            },
            repeats: flags.repeats.or(file.repeats).unwrap_or(3),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::merge(&FlagConfig::default(), &FileConfig::default());
        assert_eq!(c.h, 0.01);
        assert_eq!(c.t_end, 16.0);
        assert_eq!(c.reduction, ReductionConfig::default());
        assert_eq!(c.repeats, 3);
    }

    #[test]
    fn flags_beat_file() {
        let file: FileConfig =
            toml::from_str("h = 0.02\np_max = 0.3\ndelta_threshold = 20.0").unwrap();
        let flags = FlagConfig {
            p_max: Some(0.7),
            ..Default::default()
        };
        let c = RunConfig::merge(&flags, &file);
        assert_eq!(c.h, 0.02);
        assert_eq!(c.reduction.p_max, 0.7);
        assert!((c.reduction.delta_threshold - 20f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(toml::from_str::<FileConfig>("p_maxx = 0.3").is_err());
    }

    #[test]
    fn enum_values() {
        let file: FileConfig =
            toml::from_str("truncation = \"never\"\nexcitation = \"modal-amplitude\"").unwrap();
        assert_eq!(file.truncation, Some(Truncation::Never));
        assert_eq!(file.excitation, Some(Excitation::ModalAmplitude));
    }
}
