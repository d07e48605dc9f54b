//! Parametric SSVEP simulator with per-subject signatures.
//!
//! Each subject gets a channel gain vector, a background tone in the alpha
//! band away from every stimulus frequency and harmonic, and fixed phases.
//! A trial of class `k` is the harmonic series of the class frequency plus the
//! subject tone plus independent pink noise per channel.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Dataset, EegTrial, Provenance, SsvepClassTable, SubjectId};

/// Minimum distance of a signature tone from any stimulus harmonic.
pub const SIGNATURE_GUARD_HZ: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub n_subjects: usize,
    pub trials_per_class_per_subject: usize,
    pub channels: usize,
    pub time_steps: usize,
    pub sample_rate_hz: f64,
    /// SSVEP fundamental amplitude.
    pub snr_scale: f64,
    pub n_harmonics: usize,
    pub signature_amp: f64,
    /// RMS of the pink noise added to every channel.
    pub noise_level: f64,
    /// Candidate band for signature tones before exclusions.
    pub signature_band_hz: (f64, f64),
    /// Scales `snr_scale` and `signature_amp`; models a task or session shift.
    pub amplitude_multiplier: f64,
    pub first_subject_id: SubjectId,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_subjects: 9,
            trials_per_class_per_subject: 60,
            channels: 8,
            time_steps: 1024,
            sample_rate_hz: 500.0,
            snr_scale: 1.0,
            n_harmonics: 3,
            signature_amp: 0.7,
            noise_level: 1.0,
            signature_band_hz: (7.5, 9.5),
            amplitude_multiplier: 1.0,
            first_subject_id: 0,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self, classes: &SsvepClassTable) -> Result<()> {
        if self.n_subjects == 0 || self.trials_per_class_per_subject == 0 || self.channels == 0 || self.n_harmonics == 0 {
            return Err(Error::Config("simulation counts must all be >= 1".into()));
        }
        if self.time_steps < 2 {
            return Err(Error::Config("time_steps must be >= 2".into()));
        }
        let top = classes.frequencies_hz().iter().copied().fold(0.0, f64::max) * self.n_harmonics as f64;
        if !(self.sample_rate_hz > 2.0 * top) {
            return Err(Error::Config(format!(
                "sample rate {} Hz must exceed twice the highest harmonic ({top} Hz)",
                self.sample_rate_hz
            )));
        }
        for (name, v) in [
            ("snr_scale", self.snr_scale),
            ("signature_amp", self.signature_amp),
            ("noise_level", self.noise_level),
            ("amplitude_multiplier", self.amplitude_multiplier),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if self.first_subject_id.checked_add(self.n_subjects as u32).is_none() {
            return Err(Error::Config("subject ids overflow".into()));
        }
        Ok(())
    }

    pub fn n_trials(&self, n_classes: usize) -> usize {
        self.n_subjects * n_classes * self.trials_per_class_per_subject
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject: SubjectId,
    pub channel_gains: Vec<f64>,
    pub signature_freq_hz: f64,
    pub signature_amp: f64,
    pub harmonic_decay: f64,
    /// `[channel][harmonic]`, radians.
    pub phase_offsets: Vec<Vec<f64>>,
    /// Per-channel phase of the signature tone, radians.
    pub signature_phases: Vec<f64>,
    pub noise_level: f64,
}

/// Sub-intervals of `band` at least [`SIGNATURE_GUARD_HZ`] from every
/// stimulus frequency and harmonic, and below Nyquist.
pub fn feasible_signature_intervals(band: (f64, f64), classes: &SsvepClassTable, n_harmonics: usize, sample_rate_hz: f64) -> Vec<(f64, f64)> {
    let mut intervals = vec![(band.0, band.1.min(sample_rate_hz / 2.0))];
    for &f in classes.frequencies_hz() {
        for h in 1..=n_harmonics.max(3) {
            let (lo, hi) = (h as f64 * f - SIGNATURE_GUARD_HZ, h as f64 * f + SIGNATURE_GUARD_HZ);
            intervals = intervals
                .into_iter()
                .flat_map(|(a, b)| [(a, b.min(lo)), (a.max(hi), b)])
                .filter(|(a, b)| b > a)
                .collect();
        }
    }
    intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
    intervals
}

// Stream ids below this are trial streams; profiles use the reserved one.
const PROFILE_STREAM: u64 = u64::MAX;

fn trial_stream(subject_index: usize, class: usize, trial: usize) -> u64 {
    ((subject_index as u64) << 40) | ((class as u64) << 24) | trial as u64
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded subject profiles. Signature frequencies are stratified over the
/// feasible band (one uniform draw per equal-length slot, slots shuffled over
/// subjects), so they are pairwise distinct.
pub fn make_profiles(config: &SimulationConfig, classes: &SsvepClassTable) -> Result<Vec<SubjectProfile>> {
    config.validate(classes)?;
    let intervals = feasible_signature_intervals(config.signature_band_hz, classes, config.n_harmonics, config.sample_rate_hz);
    let total: f64 = intervals.iter().map(|(a, b)| b - a).sum();
    if total <= 0.0 {
        return Err(Error::InfeasibleSignatureBand {
            n_subjects: config.n_subjects,
        });
    }
    let mut rng = rng_for(config.seed, PROFILE_STREAM);
    let n = config.n_subjects;
    let slot = total / n as f64;
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let amp = config.amplitude_multiplier;
    let mut profiles = Vec::with_capacity(n);
    for (s, &slot_idx) in order.iter().enumerate() {
        // open interval inside the slot so neighbours never coincide
        let offset = slot * (slot_idx as f64 + rng.random_range(0.05..0.95));
        let signature_freq_hz = map_offset(&intervals, offset);
        let channel_gains = (0..config.channels).map(|_| rng.random_range(0.5..1.5)).collect();
        let harmonic_decay = rng.random_range(0.4..0.7);
        let phase_offsets = (0..config.channels)
            .map(|_| (0..config.n_harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect())
            .collect();
        let signature_phases = (0..config.channels).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        profiles.push(SubjectProfile {
            subject: config.first_subject_id + s as u32,
            channel_gains,
            signature_freq_hz,
            signature_amp: config.signature_amp * amp,
            harmonic_decay,
            phase_offsets,
            signature_phases,
            noise_level: config.noise_level,
        });
    }
    Ok(profiles)
}

fn map_offset(intervals: &[(f64, f64)], mut offset: f64) -> f64 {
    for &(a, b) in intervals {
        if offset <= b - a {
            return a + offset;
        }
        offset -= b - a;
    }
    intervals.last().map(|&(_, b)| b).unwrap_or(0.0)
}

/// Unit-RMS noise with a `1/√f` amplitude envelope and no DC component.
pub fn pink_noise(n: usize, rng: &mut ChaCha8Rng, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(StandardNormal.sample(rng), 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, v) in buf.iter_mut().enumerate().skip(1) {
        let bin = k.min(n - k) as f64;
        *v /= bin.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.into_iter().map(|v| v / rms).collect()
    } else {
        out
    }
}

/// One trial of `class_label` for `profile`, drawing noise from `rng`.
pub fn synthesize_trial(
    profile: &SubjectProfile,
    class_label: usize,
    classes: &SsvepClassTable,
    config: &SimulationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EegTrial> {
    if class_label >= classes.len() {
        return Err(Error::LabelOutOfRange {
            label: class_label,
            n_classes: classes.len(),
        });
    }
    let (c_n, t_n, fs) = (config.channels, config.time_steps, config.sample_rate_hz);
    if profile.channel_gains.len() != c_n {
        return Err(Error::ShapeMismatch(format!(
            "profile has {} channel gains, config {c_n} channels",
            profile.channel_gains.len()
        )));
    }
    let f = classes.frequency(class_label);
    let snr = config.snr_scale * config.amplitude_multiplier;
    let mut planner = FftPlanner::new();
    let mut samples = Vec::with_capacity(c_n * t_n);
    for c in 0..c_n {
        let g = profile.channel_gains[c];
        let noise = if profile.noise_level > 0.0 {
            pink_noise(t_n, rng, &mut planner)
        } else {
            vec![0.0; t_n]
        };
        for (i, nz) in noise.iter().enumerate() {
            let t = i as f64 / fs;
            let mut v = 0.0;
            let mut weight = 1.0;
            for h in 0..config.n_harmonics {
                let phase = profile.phase_offsets[c].get(h).copied().unwrap_or(0.0);
                v += weight * (2.0 * PI * (h + 1) as f64 * f * t + phase).sin();
                weight *= profile.harmonic_decay;
            }
            v *= snr * g;
            v += profile.signature_amp * g * (2.0 * PI * profile.signature_freq_hz * t + profile.signature_phases[c]).sin();
            v += profile.noise_level * nz;
            samples.push(v);
        }
    }
    EegTrial::new(c_n, t_n, samples, fs, profile.subject, Some(class_label), Provenance::OracleReal)
}

/// Full subject × class × trial grid, subject-major. Trial `(s, k, i)` draws
/// from its own ChaCha stream, so the result does not depend on scheduling.
pub fn synthesize_dataset(config: &SimulationConfig, classes: &SsvepClassTable) -> Result<Dataset> {
    let profiles = make_profiles(config, classes)?;
    let k = classes.len();
    let per = config.trials_per_class_per_subject;
    let trials = crate::par::map_range(config.n_trials(k), |idx| {
        let (s, rem) = (idx / (k * per), idx % (k * per));
        let (class, trial) = (rem / per, rem % per);
        let mut rng = rng_for(config.seed, trial_stream(s, class, trial));
        synthesize_trial(&profiles[s], class, classes, config, &mut rng)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let roster = profiles.iter().map(|p| p.subject).collect();
    Ok(Dataset::new(trials, classes.clone(), roster)?
        .with_meta("source", "oracle")
        .with_meta("oracle_seed", config.seed.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{compute_spectrum, dominant_frequency, trial_spectrum, Window};

    fn classes() -> SsvepClassTable {
        SsvepClassTable::default()
    }

    fn small(seed: u64) -> SimulationConfig {
        SimulationConfig {
            n_subjects: 3,
            trials_per_class_per_subject: 4,
            channels: 2,
            time_steps: 512,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn profiles_deterministic_and_distinct() {
        let cfg = SimulationConfig { seed: 7, ..Default::default() };
        let a = make_profiles(&cfg, &classes()).unwrap();
        assert_eq!(a, make_profiles(&cfg, &classes()).unwrap());
        assert_eq!(a.len(), 9);
        for (i, p) in a.iter().enumerate() {
            for q in &a[..i] {
                assert_ne!(p.signature_freq_hz, q.signature_freq_hz);
                assert_ne!(p.channel_gains, q.channel_gains);
            }
        }
    }

    #[test]
    fn signature_tones_avoid_stimuli() {
        // enumerate the excluded set independently
        let excluded = [10.0, 12.0, 15.0, 20.0, 24.0, 30.0, 45.0];
        for seed in 0..20 {
            let cfg = SimulationConfig { seed, ..Default::default() };
            for p in make_profiles(&cfg, &classes()).unwrap() {
                assert!((7.5..=9.5).contains(&p.signature_freq_hz));
                for e in excluded {
                    assert!((p.signature_freq_hz - e).abs() >= 0.8, "{} near {e}", p.signature_freq_hz);
                }
            }
        }
    }

    #[test]
    fn infeasible_band() {
        let cfg = SimulationConfig {
            signature_band_hz: (9.5, 10.5),
            ..Default::default()
        };
        assert!(matches!(make_profiles(&cfg, &classes()), Err(Error::InfeasibleSignatureBand { .. })));
    }

    #[test]
    fn clean_pure_tone_peaks_on_nearest_bin() {
        let cfg = SimulationConfig {
            n_harmonics: 1,
            noise_level: 0.0,
            signature_amp: 0.0,
            ..Default::default()
        };
        let mut p = make_profiles(&cfg, &classes()).unwrap().remove(0);
        p.channel_gains = vec![1.0; 8];
        let mut rng = rng_for(0, 0);
        let t = synthesize_trial(&p, 0, &classes(), &cfg, &mut rng).unwrap();
        let s = trial_spectrum(&t, Window::Rect);
        let peak = dominant_frequency(&s, (0.0, 250.0)).unwrap();
        let res = 500.0f64 / 1024.0;
        assert!((peak - (10.0 / res).round() * res).abs() < 1e-9);
    }

    #[test]
    fn harmonic_ratio_follows_decay() {
        // 20 and 40 Hz fall on exact bins at 512 Hz / 256 samples
        let table = SsvepClassTable::new(vec![20.0]).unwrap();
        let cfg = SimulationConfig {
            n_subjects: 1,
            channels: 1,
            time_steps: 256,
            sample_rate_hz: 512.0,
            noise_level: 0.0,
            signature_amp: 0.0,
            ..Default::default()
        };
        let mut p = make_profiles(&cfg, &table).unwrap().remove(0);
        p.harmonic_decay = 0.5;
        let t = synthesize_trial(&p, 0, &table, &cfg, &mut rng_for(0, 0)).unwrap();
        let s = trial_spectrum(&t, Window::Hann);
        let bin = |f: f64| s.magnitude[(f / 2.0) as usize];
        let ratio = bin(40.0) / bin(20.0);
        assert!((ratio - 0.5).abs() <= 0.05, "ratio {ratio}");
    }

    #[test]
    fn fft_oracle_classifies_default_snr() {
        let cfg = SimulationConfig {
            n_subjects: 2,
            trials_per_class_per_subject: 10,
            ..Default::default()
        };
        let ds = synthesize_dataset(&cfg, &classes()).unwrap();
        for t in ds.trials() {
            let f = dominant_frequency(&trial_spectrum(t, Window::Hann), (8.0, 17.0)).unwrap();
            assert_eq!(ds.class_table().nearest_class(f), t.class_label.unwrap());
        }
        let class1 = ds.restrict_to_class(1).unwrap();
        let avg = compute_spectrum(class1.trials(), Window::Hann).unwrap();
        assert!((dominant_frequency(&avg, (8.0, 17.0)).unwrap() - 12.0).abs() <= 0.5);
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let ds = synthesize_dataset(&small(3), &classes()).unwrap();
        assert_eq!(ds.len(), 36);
        assert_eq!(ds.subject_roster(), &[0, 1, 2]);
        assert_eq!(ds.class_histogram(), vec![12, 12, 12]);
        assert_eq!(ds, synthesize_dataset(&small(3), &classes()).unwrap());
        assert_ne!(ds.trials()[0], synthesize_dataset(&small(4), &classes()).unwrap().trials()[0]);
        assert!(ds.trials().iter().all(|t| t.provenance == Provenance::OracleReal));
    }

    #[test]
    fn trial_streams_are_order_independent() {
        let cfg = small(5);
        let ds = synthesize_dataset(&cfg, &classes()).unwrap();
        let profiles = make_profiles(&cfg, &classes()).unwrap();
        // regenerate the last trial alone
        let mut rng = rng_for(5, trial_stream(2, 2, 3));
        let t = synthesize_trial(&profiles[2], 2, &classes(), &cfg, &mut rng).unwrap();
        assert_eq!(&t, ds.trials().last().unwrap());
    }

    #[test]
    fn pink_noise_unit_rms_and_sloped() {
        let mut rng = rng_for(9, 0);
        let mut planner = FftPlanner::new();
        let n = 4096;
        let mut low = 0.0;
        let mut high = 0.0;
        for _ in 0..8 {
            let x = pink_noise(n, &mut rng, &mut planner);
            let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            assert!((rms - 1.0).abs() < 1e-9);
            let m = crate::signal::one_sided_magnitude(&x, Window::Rect);
            low += m[8..16].iter().map(|v| v * v).sum::<f64>();
            high += m[512..520].iter().map(|v| v * v).sum::<f64>();
        }
        // power ∝ 1/f: bins ~12 vs ~516 differ by ~40x
        assert!(low / high > 10.0, "{}", low / high);
    }
}
