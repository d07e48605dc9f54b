use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Small non-negative subject identifier.
pub type SubjectId = u32;

/// Subject id stamped on generated trials. Never assigned to a simulated or
/// imported subject.
pub const SYNTHETIC_SUBJECT: SubjectId = 0xFFFF_FFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    OracleReal,
    Generated,
}

/// Ordered stimulus frequencies; the class index is the position in the list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsvepClassTable {
    frequencies_hz: Vec<f64>,
}

impl Default for SsvepClassTable {
    fn default() -> Self {
        Self {
            frequencies_hz: vec![10.0, 12.0, 15.0],
        }
    }
}

impl SsvepClassTable {
    pub fn new(frequencies_hz: Vec<f64>) -> Result<Self> {
        if frequencies_hz.is_empty() {
            return Err(Error::InvariantViolation("class table is empty".into()));
        }
        for (i, &f) in frequencies_hz.iter().enumerate() {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::InvariantViolation(format!(
                    "stimulus frequency {f} is not strictly positive"
                )));
            }
            if frequencies_hz[..i].contains(&f) {
                return Err(Error::InvariantViolation(format!(
                    "duplicate stimulus frequency {f}"
                )));
            }
        }
        Ok(Self { frequencies_hz })
    }

    pub fn frequencies_hz(&self) -> &[f64] {
        &self.frequencies_hz
    }

    pub fn len(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies_hz.is_empty()
    }

    pub fn frequency(&self, class: usize) -> f64 {
        self.frequencies_hz[class]
    }

    /// Class whose stimulus frequency is closest to `freq_hz`.
    pub fn nearest_class(&self, freq_hz: f64) -> usize {
        let mut best = 0;
        for (i, f) in self.frequencies_hz.iter().enumerate() {
            if (f - freq_hz).abs() < (self.frequencies_hz[best] - freq_hz).abs() {
                best = i;
            }
        }
        best
    }

    pub(crate) fn check_nyquist(&self, sample_rate_hz: f64) -> Result<()> {
        match self
            .frequencies_hz
            .iter()
            .find(|&&f| f >= sample_rate_hz / 2.0)
        {
            Some(f) => Err(Error::InvariantViolation(format!(
                "stimulus frequency {f} Hz is not below Nyquist ({} Hz)",
                sample_rate_hz / 2.0
            ))),
            None => Ok(()),
        }
    }
}

/// One multichannel signal window. Samples are stored row-major as
/// `[channel][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EegTrial {
    channels: usize,
    time_steps: usize,
    samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub subject: SubjectId,
    pub class_label: Option<usize>,
    pub provenance: Provenance,
}

impl EegTrial {
    pub fn new(
        channels: usize,
        time_steps: usize,
        samples: Vec<f64>,
        sample_rate_hz: f64,
        subject: SubjectId,
        class_label: Option<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        if channels < 1 || time_steps < 2 {
            return Err(Error::InvariantViolation(format!(
                "trial shape {channels}x{time_steps} needs >= 1 channel and >= 2 time steps"
            )));
        }
        if samples.len() != channels * time_steps {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {channels}x{time_steps} trial",
                samples.len()
            )));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvariantViolation(format!(
                "sample rate {sample_rate_hz} is not positive"
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation(format!(
                "non-finite sample at channel {}, step {}",
                i / time_steps,
                i % time_steps
            )));
        }
        Ok(Self {
            channels,
            time_steps,
            samples,
            sample_rate_hz,
            subject,
            class_label,
            provenance,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.samples[c * self.time_steps..(c + 1) * self.time_steps]
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Same labels, new sample values of the same shape.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(
            self.channels,
            self.time_steps,
            samples,
            self.sample_rate_hz,
            self.subject,
            self.class_label,
            self.provenance,
        )
    }

    pub fn same_shape(&self, other: &EegTrial) -> bool {
        self.channels == other.channels
            && self.time_steps == other.time_steps
            && self.sample_rate_hz == other.sample_rate_hz
    }
}

/// Per-channel z-score using the population standard deviation.
pub fn normalize_trial(trial: &EegTrial) -> Result<EegTrial> {
    let t = trial.time_steps() as f64;
    let mut out = Vec::with_capacity(trial.samples().len());
    for c in 0..trial.channels() {
        let ch = trial.channel(c);
        let mean = ch.iter().sum::<f64>() / t;
        let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
        let std = var.sqrt();
        if !(std > 1e-12 * (1.0 + mean.abs())) {
            return Err(Error::ZeroVarianceChannel { channel: c });
        }
        out.extend(ch.iter().map(|v| (v - mean) / std));
    }
    trial.with_samples(out)
}

/// Homogeneous trial collection with roster and provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trials: Vec<EegTrial>,
    class_table: SsvepClassTable,
    subject_roster: Vec<SubjectId>,
    /// Free-form provenance record (config hash, seed, checkpoint id, ...).
    pub meta: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(
        trials: Vec<EegTrial>,
        class_table: SsvepClassTable,
        subject_roster: Vec<SubjectId>,
    ) -> Result<Self> {
        for (i, s) in subject_roster.iter().enumerate() {
            if subject_roster[..i].contains(s) {
                return Err(Error::InvariantViolation(format!(
                    "subject {s} listed twice in roster"
                )));
            }
        }
        if let Some(first) = trials.first() {
            class_table.check_nyquist(first.sample_rate_hz)?;
        }
        for (i, t) in trials.iter().enumerate() {
            if !t.same_shape(&trials[0]) {
                return Err(Error::HeterogeneousShape(format!(
                    "trial {i} is {}x{} @ {} Hz, trial 0 is {}x{} @ {} Hz",
                    t.channels(),
                    t.time_steps(),
                    t.sample_rate_hz,
                    trials[0].channels(),
                    trials[0].time_steps(),
                    trials[0].sample_rate_hz
                )));
            }
            if !subject_roster.contains(&t.subject) {
                return Err(Error::InvariantViolation(format!(
                    "trial {i} has subject {} outside the roster",
                    t.subject
                )));
            }
            if let Some(c) = t.class_label {
                if c >= class_table.len() {
                    return Err(Error::LabelOutOfRange {
                        label: c,
                        n_classes: class_table.len(),
                    });
                }
            }
        }
        Ok(Self {
            trials,
            class_table,
            subject_roster,
            meta: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn trials(&self) -> &[EegTrial] {
        &self.trials
    }

    pub fn into_trials(self) -> Vec<EegTrial> {
        self.trials
    }

    pub fn class_table(&self) -> &SsvepClassTable {
        &self.class_table
    }

    pub fn subject_roster(&self) -> &[SubjectId] {
        &self.subject_roster
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// `(channels, time_steps, sample_rate_hz)` of the trials, if any.
    pub fn shape(&self) -> Option<(usize, usize, f64)> {
        self.trials
            .first()
            .map(|t| (t.channels(), t.time_steps(), t.sample_rate_hz))
    }

    /// Position of `subject` in the roster; used as the subject-classifier label.
    pub fn subject_index(&self, subject: SubjectId) -> Option<usize> {
        self.subject_roster.iter().position(|&s| s == subject)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_table.len()];
        for t in &self.trials {
            if let Some(c) = t.class_label {
                h[c] += 1;
            }
        }
        h
    }

    /// Trials of one subject, keeping the roster entry only for that subject.
    pub fn restrict_to_subject(&self, subject: SubjectId) -> Result<Dataset> {
        if !self.subject_roster.contains(&subject) {
            return Err(Error::UnknownSubject(subject));
        }
        let trials = self
            .trials
            .iter()
            .filter(|t| t.subject == subject)
            .cloned()
            .collect();
        let mut ds = Dataset::new(trials, self.class_table.clone(), vec![subject])?;
        ds.meta = self.meta.clone();
        Ok(ds)
    }

    pub fn restrict_to_class(&self, class: usize) -> Result<Dataset> {
        let trials = self
            .trials
            .iter()
            .filter(|t| t.class_label == Some(class))
            .cloned()
            .collect();
        let mut ds = Dataset::new(trials, self.class_table.clone(), self.subject_roster.clone())?;
        ds.meta = self.meta.clone();
        Ok(ds)
    }

    /// Every trial z-scored per channel.
    pub fn normalized(&self) -> Result<Dataset> {
        let trials = crate::par::map(&self.trials, normalize_trial)
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let mut ds = Dataset::new(trials, self.class_table.clone(), self.subject_roster.clone())?;
        ds.meta = self.meta.clone();
        Ok(ds)
    }

    /// Builds a dataset from `trials`, keeping the roster entries (in this
    /// dataset's order) of subjects that actually occur.
    pub(crate) fn from_subset(&self, trials: Vec<EegTrial>) -> Result<Dataset> {
        let roster = self
            .subject_roster
            .iter()
            .copied()
            .filter(|s| trials.iter().any(|t| t.subject == *s))
            .collect();
        let mut ds = Dataset::new(trials, self.class_table.clone(), roster)?;
        ds.meta = self.meta.clone();
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(ch: usize, data: Vec<f64>) -> EegTrial {
        let t = data.len() / ch;
        EegTrial::new(ch, t, data, 500.0, 0, Some(0), Provenance::OracleReal).unwrap()
    }

    #[test]
    fn zscore_closed_form() {
        let out = normalize_trial(&trial(1, vec![1.0, 2.0, 3.0])).unwrap();
        let k = 1.5f64.sqrt();
        for (a, b) in out.samples().iter().zip([-k, 0.0, k]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_idempotent() {
        let x: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 - 3.0).collect();
        let once = normalize_trial(&trial(2, x)).unwrap();
        let twice = normalize_trial(&once).unwrap();
        for (a, b) in once.samples().iter().zip(twice.samples()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(once.subject, twice.subject);
        assert_eq!(once.class_label, twice.class_label);
    }

    #[test]
    fn constant_channel_rejected() {
        let err = normalize_trial(&trial(2, vec![1.0, 2.0, 4.0, 5.0, 5.0, 5.0])).unwrap_err();
        assert!(matches!(err, Error::ZeroVarianceChannel { channel: 1 }));
    }

    #[test]
    fn trial_invariants() {
        assert!(EegTrial::new(1, 1, vec![0.0], 500.0, 0, None, Provenance::OracleReal).is_err());
        assert!(
            EegTrial::new(1, 2, vec![0.0, f64::NAN], 500.0, 0, None, Provenance::OracleReal)
                .is_err()
        );
        assert!(EegTrial::new(1, 2, vec![0.0], 500.0, 0, None, Provenance::OracleReal).is_err());
    }

    #[test]
    fn class_table_invariants() {
        assert!(SsvepClassTable::new(vec![10.0, 10.0]).is_err());
        assert!(SsvepClassTable::new(vec![-1.0]).is_err());
        let t = SsvepClassTable::default();
        assert_eq!(t.nearest_class(11.2), 1);
        assert!(t.check_nyquist(20.0).is_err());
    }

    #[test]
    fn dataset_rejects_foreign_subject_and_bad_label() {
        let mut tr = trial(1, vec![0.0, 1.0]);
        tr.subject = 3;
        assert!(Dataset::new(vec![tr.clone()], SsvepClassTable::default(), vec![0]).is_err());
        tr.subject = 0;
        tr.class_label = Some(3);
        assert!(matches!(
            Dataset::new(vec![tr], SsvepClassTable::default(), vec![0]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }
}
