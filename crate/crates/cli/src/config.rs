//! Flat `key = value` parameter files for the exact dynamics.
//!
//! Keys are the [`ExperimentConfig`] field names in SI units. Blank lines and
//! lines starting with `#` are skipped. When `detuning` is absent it follows
//! the π/2 pulse condition for the resolved Ω₀, w and v.

use cat_ifm::exact::{detuning_from_pulse_condition, ExperimentConfig, FockCutoff};

use crate::error::CliError;

/// Key-value pairs in file order, later entries winning.
#[derive(Clone, Debug, Default)]
pub struct ConfigSource {
    entries: Vec<(String, String, String)>,
}

impl ConfigSource {
    /// Parses file text; `origin` labels errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut out = ConfigSource::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let where_ = format!("{origin}:{}", i + 1);
            out.push(line, &where_)?;
        }
        Ok(out)
    }

    /// Adds one `key=value` entry.
    pub fn push(&mut self, entry: &str, origin: &str) -> Result<(), CliError> {
        let (k, v) = entry
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{origin}: expected key = value, got {entry:?}")))?;
        self.entries.push((k.trim().to_string(), v.trim().to_string(), origin.to_string()));
        Ok(())
    }

    /// Applies the entries on top of the defaults.
    pub fn resolve(&self, auto_detuning: bool) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::default();
        let mut detuning_given = false;
        for (key, value, origin) in &self.entries {
            let bad = |what: &str| CliError::Usage(format!("{origin}: {key} = {value:?}: {what}"));
            let num = || value.parse::<f64>().map_err(|_| bad("expected a number"));
            match key.as_str() {
                "rabi_peak" => cfg.rabi_peak = num()?,
                "waist" => cfg.waist = num()?,
                "velocity" => cfg.velocity = num()?,
                "detuning" => {
                    cfg.detuning = num()?;
                    detuning_given = true;
                }
                "cavity_decay" => cfg.cavity_decay = num()?,
                "atomic_decay" => cfg.atomic_decay = num()?,
                "mean_atoms" => cfg.mean_atoms = num()?,
                "efficiency" => cfg.efficiency = num()?,
                "time_window_sigmas" => cfg.time_window_sigmas = num()?,
                "fock_cutoff" => {
                    cfg.fock_cutoff = match value.as_str() {
                        "adaptive" => FockCutoff::Adaptive,
                        "full" => FockCutoff::Full,
                        v => FockCutoff::Fixed(v.parse().map_err(|_| bad("expected adaptive, full or an integer"))?),
                    }
                }
                "integrator_steps" => {
                    cfg.integrator_steps = match value.as_str() {
                        "auto" => None,
                        v => Some(v.parse().map_err(|_| bad("expected auto or an integer"))?),
                    }
                }
                _ => return Err(bad("unknown key")),
            }
        }
        if auto_detuning || !detuning_given {
            cfg.detuning = detuning_from_pulse_condition(cfg.rabi_peak, cfg.waist, cfg.velocity)
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}
