//! Run configuration: one JSON document binding material constants, the
//! comb source, sequence fragments, grids, noise and the master seed.
//!
//! Units follow the repository convention: MHz, us, mW. Exactly one comb
//! source (an explicit comb, or a preparation sequence that burns one) may
//! be set. Unknown keys are rejected.

use afc_core::comb::CombSpec;
use afc_core::error::{Error, Result};
use afc_core::grid::TimeGrid;
use afc_core::prep::{PrepSequence, TransitionTable};
use afc_core::propagation::{Pulse, PulseShape};
use afc_core::spinwave::{
    ControlPulse, ControlRole, MaterialParams, PhaseNoiseModel, SequenceFlags, StorageSequence,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comb: Option<CombSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prep: Option<PrepSequence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub duration_us: f64,
    pub num_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub linewidth_mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub input_bins: Vec<Pulse>,
    pub controls: Vec<ControlPulse>,
    pub t_w_us: f64,
    #[serde(default)]
    pub flags: SequenceFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub material: MaterialParams,
    pub comb_source: CombSource,
    pub sequence: SequenceConfig,
    pub grids: GridConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let material = MaterialParams::default();
        let theta_power = 5.7;
        Self {
            material,
            comb_source: CombSource {
                comb: Some(CombSpec::new(0.5, 0.125, 5, 4.12, 0.45).expect("static")),
                prep: None,
            },
            sequence: SequenceConfig {
                input_bins: vec![Pulse {
                    shape: PulseShape::Gaussian,
                    fwhm_or_width_us: 0.84,
                    arrival_time_us: 10.0,
                    carrier_detuning_mhz: 0.0,
                    phase_rad: 0.0,
                    amplitude: 1.0,
                }],
                controls: vec![
                    ControlPulse {
                        start_time_us: 10.7,
                        duration_us: 0.8,
                        power_mw: theta_power,
                        phase_rad: 0.0,
                        role: ControlRole::TransferIn,
                    },
                    ControlPulse {
                        start_time_us: 14.7,
                        duration_us: 0.8,
                        power_mw: theta_power,
                        phase_rad: 0.0,
                        role: ControlRole::Readout,
                    },
                ],
                t_w_us: 1000.0,
                flags: SequenceFlags::default(),
            },
            grids: GridConfig { duration_us: 64.0, num_points: 2048 },
            noise: NoiseConfig { linewidth_mhz: 0.0 },
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        match (&self.comb_source.comb, &self.comb_source.prep) {
            (Some(comb), None) => comb.validate()?,
            (None, Some(prep)) => prep.validate()?,
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::Validation(
                    "comb_source must set exactly one of 'comb' or 'prep'".into(),
                ))
            }
        }
        TimeGrid::new(self.grids.duration_us, self.grids.num_points)?;
        if self.noise.linewidth_mhz < 0.0 {
            return Err(Error::Validation("linewidth_mhz must be non-negative".into()));
        }
        for c in &self.sequence.controls {
            c.validate()?;
        }
        Ok(())
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::new(self.grids.duration_us, self.grids.num_points).expect("validated")
    }

    /// The comb to simulate with: either the explicit one or the spectrum
    /// burned by the preparation sequence (the latter is handled by the
    /// `prepare` path, which works on the full profile).
    pub fn comb(&self) -> Result<CombSpec> {
        self.comb_source.comb.ok_or_else(|| {
            Error::Validation(
                "this command needs an explicit comb; run `prepare` for burned spectra".into(),
            )
        })
    }

    pub fn storage_sequence(&self) -> Result<StorageSequence> {
        let seq = StorageSequence {
            input_bins: self.sequence.input_bins.clone(),
            controls: self.sequence.controls.clone(),
            comb: self.comb()?,
            material: self.material.clone(),
            noise: PhaseNoiseModel { linewidth_mhz: self.noise.linewidth_mhz, seed: self.seed },
            time_grid: self.time_grid(),
            t_w_us: self.sequence.t_w_us,
            flags: self.sequence.flags,
        };
        Ok(seq)
    }

    pub fn transition_table(&self) -> TransitionTable {
        TransitionTable::from_material(&self.material)
    }

    /// Default preparation sequence for the default comb positions.
    pub fn default_prep(&self) -> PrepSequence {
        let table = self.transition_table();
        let teeth: Vec<f64> = self
            .comb_source
            .comb
            .map(|c| c.tooth_centers(0.0))
            .unwrap_or_else(|| CombSpec::new(0.5, 0.125, 5, 4.12, 0.45).unwrap().tooth_centers(0.0));
        PrepSequence::paper_default(&table, &teeth)
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_str(&body)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

pub fn save_config(path: &Path, config: &RunConfig) -> Result<()> {
    afc_core::io::write_json(path, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("defaults.json");
        let config = RunConfig::default();
        save_config(&path, &config).unwrap();
        let loaded = load_config(&path).unwrap();
        assert_eq!(loaded, config);
    }

    #[test]
    fn negative_delta_names_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let mut config = RunConfig::default();
        config.comb_source.comb.as_mut().unwrap().delta_mhz = -1.0;
        afc_core::io::write_json(&path, &config).unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("delta_mhz"), "message: {err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extra.json");
        let mut value: serde_json::Value =
            serde_json::to_value(RunConfig::default()).unwrap();
        value["surprise"] = serde_json::json!(1);
        std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
        let err = load_config(&path).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("surprise"));
        assert!(message.contains("line"), "parse errors carry positions: {message}");
    }

    #[test]
    fn both_comb_sources_rejected() {
        let mut config = RunConfig::default();
        config.comb_source.prep = Some(config.default_prep());
        assert!(config.validate().is_err());
    }
}
