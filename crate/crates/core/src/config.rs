//! TOML experiment configuration and its content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{default_regimes, ProtocolSettings, Regime};
use crate::oracle::SimulationConfig;
use crate::signal::SsvepClassTable;
use crate::train::{ClassifierTrainConfig, GanTrainConfig, NetworkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    SingleSubject,
    Loo,
    CrossTask,
    SubjectBiometric,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::SingleSubject => "single-subject",
            Protocol::Loo => "loo",
            Protocol::CrossTask => "cross-task",
            Protocol::SubjectBiometric => "subject-biometric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub class_frequencies_hz: Vec<f64>,
    /// Z-score every trial per channel before writing.
    pub normalize: bool,
    pub offline: SimulationConfig,
    pub online: SimulationConfig,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            class_frequencies_hz: vec![10.0, 12.0, 15.0],
            normalize: true,
            offline: SimulationConfig::default(),
            online: SimulationConfig {
                n_subjects: 3,
                trials_per_class_per_subject: 10,
                amplitude_multiplier: 0.8,
                first_subject_id: 100,
                seed: 1,
                ..SimulationConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub gan: GanTrainConfig,
    pub ssvep_classifier: ClassifierTrainConfig,
    pub subject_classifier: ClassifierTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub protocols: Vec<Protocol>,
    pub regimes: Vec<Regime>,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub test_fraction: f64,
    pub biometric_folds: usize,
    /// Peak search band for spectral reports; `[5, 0.8 * Nyquist]` if absent.
    pub peak_band_hz: Option<(f64, f64)>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            protocols: vec![Protocol::SingleSubject, Protocol::Loo, Protocol::CrossTask, Protocol::SubjectBiometric],
            regimes: default_regimes(),
            n_seeds: 10,
            base_seed: 0,
            test_fraction: 0.2,
            biometric_folds: 10,
            peak_band_hz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub artifact_dir: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            artifact_dir: PathBuf::from("artifacts"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub simulation: SimulationSection,
    pub network: NetworkConfig,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
    pub io: IoSection,
}

impl ExperimentConfig {
    /// Parses and validates. Unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn classes(&self) -> Result<SsvepClassTable> {
        SsvepClassTable::new(self.simulation.class_frequencies_hz.clone()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let classes = self.classes()?;
        let (off, on) = (&self.simulation.offline, &self.simulation.online);
        off.validate(&classes)?;
        on.validate(&classes)?;
        if (off.channels, off.time_steps, off.sample_rate_hz) != (on.channels, on.time_steps, on.sample_rate_hz) {
            return Err(Error::Config("offline and online simulations must share channels, time_steps and sample_rate_hz".into()));
        }
        let off_ids = off.first_subject_id..off.first_subject_id + off.n_subjects as u32;
        let on_ids = on.first_subject_id..on.first_subject_id + on.n_subjects as u32;
        if off_ids.start < on_ids.end && on_ids.start < off_ids.end {
            return Err(Error::Config(format!("offline subjects {off_ids:?} overlap online subjects {on_ids:?}")));
        }
        if off.seed == on.seed {
            return Err(Error::Config("offline and online simulations need different seeds".into()));
        }
        self.network.validate(off.channels, off.time_steps, classes.len())?;
        self.training.gan.validate()?;
        self.training.ssvep_classifier.validate()?;
        self.training.subject_classifier.validate()?;
        if self.evaluation.biometric_folds < 2 {
            return Err(Error::Config("biometric_folds must be at least 2".into()));
        }
        if let Some((lo, hi)) = self.evaluation.peak_band_hz {
            if !(lo >= 0.0 && lo < hi && hi <= off.sample_rate_hz / 2.0) {
                return Err(Error::Config(format!("peak band ({lo}, {hi}) is not inside [0, Nyquist]")));
            }
        }
        self.protocol_settings().validate()
    }

    /// Hex SHA-256 of the canonical JSON form of every section except `io`,
    /// so relocating artifacts does not change the hash.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(&(&self.simulation, &self.network, &self.training, &self.evaluation))
            .expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn protocol_settings(&self) -> ProtocolSettings {
        ProtocolSettings {
            regimes: self.evaluation.regimes.clone(),
            n_seeds: self.evaluation.n_seeds,
            base_seed: self.evaluation.base_seed,
            test_fraction: self.evaluation.test_fraction,
            network: self.network.clone(),
            gan: self.training.gan.clone(),
            ssvep_classifier: self.training.ssvep_classifier.clone(),
            subject_classifier: self.training.subject_classifier.clone(),
            config_hash: self.config_hash(),
        }
    }
}
