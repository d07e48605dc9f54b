//! Spectral comparison of real and generated trials.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{
    compute_spectrum, dominant_frequency, peak_to_median, trial_spectrum, Dataset, EegTrial, Provenance, SpectrumReport,
    SsvepClassTable, Window,
};

/// Half-width of the frequency window that counts as hitting a class.
pub const PEAK_TOLERANCE_HZ: f64 = 0.5;

/// `[5 Hz, 0.8 * Nyquist]`.
pub fn default_peak_band(sample_rate_hz: f64) -> (f64, f64) {
    (5.0, 0.4 * sample_rate_hz)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideStats {
    pub spectrum: SpectrumReport,
    pub peak_hz: f64,
    pub peak_to_median: f64,
    /// Share of single trials whose dominant frequency is within
    /// [`PEAK_TOLERANCE_HZ`] of the class frequency.
    pub trial_hit_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpectra {
    pub class: usize,
    pub frequency_hz: f64,
    pub real: SideStats,
    pub synthetic: SideStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FftReport {
    pub band_hz: (f64, f64),
    pub classes: Vec<ClassSpectra>,
}

impl FftReport {
    /// Long format: `class,frequency_hz,real_magnitude,synthetic_magnitude`.
    pub fn spectra_csv(&self) -> String {
        let mut out = String::from("class,frequency_hz,real_magnitude,synthetic_magnitude\n");
        for c in &self.classes {
            for (i, f) in c.real.spectrum.freqs_hz.iter().enumerate() {
                out.push_str(&format!(
                    "{},{f},{:.6e},{:.6e}\n",
                    c.class, c.real.spectrum.magnitude[i], c.synthetic.spectrum.magnitude[i]
                ));
            }
        }
        out
    }

    pub fn peaks_csv(&self) -> String {
        let mut out = String::from(
            "class,frequency_hz,real_peak_hz,real_peak_to_median,real_hit_rate,synthetic_peak_hz,synthetic_peak_to_median,synthetic_hit_rate\n",
        );
        for c in &self.classes {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{},{:.6},{:.6}\n",
                c.class,
                c.frequency_hz,
                c.real.peak_hz,
                c.real.peak_to_median,
                c.real.trial_hit_rate,
                c.synthetic.peak_hz,
                c.synthetic.peak_to_median,
                c.synthetic.trial_hit_rate
            ));
        }
        out
    }
}

/// Dominant frequency of every trial inside `band_hz`.
pub fn trial_peaks(trials: &[EegTrial], band_hz: (f64, f64)) -> Result<Vec<f64>> {
    trials
        .iter()
        .map(|t| dominant_frequency(&trial_spectrum(t, Window::Hann), band_hz))
        .collect()
}

fn side(trials: &[EegTrial], freq: f64, band: (f64, f64)) -> Result<SideStats> {
    let spectrum = compute_spectrum(trials, Window::Hann)?;
    let peaks = trial_peaks(trials, band)?;
    let hits = peaks.iter().filter(|p| (*p - freq).abs() <= PEAK_TOLERANCE_HZ).count();
    Ok(SideStats {
        peak_hz: dominant_frequency(&spectrum, band)?,
        peak_to_median: peak_to_median(&spectrum, band)?,
        trial_hit_rate: hits as f64 / trials.len() as f64,
        spectrum,
    })
}

/// Per class: averaged spectra of both sets, their peak frequency and
/// peak-to-median ratio, and the per-trial hit rate. `band_hz` defaults to
/// [`default_peak_band`].
pub fn fft_validation_report(real: &Dataset, generated: &Dataset, band_hz: Option<(f64, f64)>) -> Result<FftReport> {
    if real.class_table() != generated.class_table() {
        return Err(Error::ShapeMismatch("class tables differ".into()));
    }
    let (c, l, fs) = real.shape().ok_or(Error::EmptyInput)?;
    let gshape = generated.shape().ok_or(Error::EmptyInput)?;
    if (c, l) != (gshape.0, gshape.1) || fs != gshape.2 {
        return Err(Error::ShapeMismatch(format!("real {:?} vs generated {:?}", (c, l, fs), gshape)));
    }
    let band = band_hz.unwrap_or_else(|| default_peak_band(fs));
    let mut classes = Vec::with_capacity(real.class_table().len());
    for class in 0..real.class_table().len() {
        let freq = real.class_table().frequency(class);
        classes.push(ClassSpectra {
            class,
            frequency_hz: freq,
            real: side(real.restrict_to_class(class)?.trials(), freq, band)?,
            synthetic: side(generated.restrict_to_class(class)?.trials(), freq, band)?,
        });
    }
    Ok(FftReport { band_hz: band, classes })
}

/// Unit-variance Gaussian noise trials, `n_per_class` per class, for use as
/// a spectral control.
pub fn white_noise_dataset(
    n_per_class: usize,
    channels: usize,
    time_steps: usize,
    sample_rate_hz: f64,
    classes: &SsvepClassTable,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(n_per_class * classes.len());
    for class in 0..classes.len() {
        for _ in 0..n_per_class {
            let x: Vec<f64> = (0..channels * time_steps).map(|_| StandardNormal.sample(&mut rng)).collect();
            trials.push(EegTrial::new(
                channels,
                time_steps,
                x,
                sample_rate_hz,
                crate::signal::SYNTHETIC_SUBJECT,
                Some(class),
                Provenance::Generated,
            )?);
        }
    }
    Dataset::new(trials, classes.clone(), vec![crate::signal::SYNTHETIC_SUBJECT])
}
