//! One-sided DFT magnitude spectra averaged over channels and trials, and the
//! peak statistics built on them.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::types::EegTrial;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Window {
    Rect,
    #[default]
    Hann,
}

impl Window {
    /// Periodic window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rect => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub freqs_hz: Vec<f64>,
    /// Channel- and trial-averaged amplitude spectrum.
    pub magnitude: Vec<f64>,
    pub n_trials_averaged: usize,
    pub class_label: Option<usize>,
}

/// Raw one-sided `|X_k|`, `k = 0..=n/2`, of the windowed signal.
pub fn one_sided_magnitude(signal: &[f64], window: Window) -> Vec<f64> {
    let n = signal.len();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let w = window.coefficients(n);
    let mut buf: Vec<Complex<f64>> = signal
        .iter()
        .zip(&w)
        .map(|(x, w)| Complex::new(x * w, 0.0))
        .collect();
    fft.process(&mut buf);
    buf[..=n / 2].iter().map(|c| c.norm()).collect()
}

/// Averaged amplitude spectrum of a homogeneous, single-class batch. The
/// frequency resolution is `sample_rate / time_steps`.
pub fn compute_spectrum(trials: &[EegTrial], window: Window) -> Result<SpectrumReport> {
    let first = trials.first().ok_or(Error::EmptyInput)?;
    for t in trials {
        if !t.same_shape(first) {
            return Err(Error::HeterogeneousShape(format!(
                "{}x{} @ {} Hz vs {}x{} @ {} Hz",
                t.channels(),
                t.time_steps(),
                t.sample_rate_hz,
                first.channels(),
                first.time_steps(),
                first.sample_rate_hz
            )));
        }
        if t.class_label != first.class_label {
            return Err(Error::HeterogeneousShape(format!(
                "mixed class labels {:?} and {:?}",
                first.class_label, t.class_label
            )));
        }
    }
    let n = first.time_steps();
    let n_bins = n / 2 + 1;
    let w = window.coefficients(n);
    let wsum: f64 = w.iter().sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);

    let per_trial = crate::par::map(trials, |t| {
        let mut acc = vec![0.0; n_bins];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for c in 0..t.channels() {
            for ((b, x), wi) in buf.iter_mut().zip(t.channel(c)).zip(&w) {
                *b = Complex::new(x * wi, 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b.norm();
            }
        }
        acc
    });

    let mut magnitude = vec![0.0; n_bins];
    for acc in &per_trial {
        for (m, a) in magnitude.iter_mut().zip(acc) {
            *m += a;
        }
    }
    let denom = (trials.len() * first.channels()) as f64 * wsum;
    for (k, m) in magnitude.iter_mut().enumerate() {
        let one_sided = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
        *m *= one_sided / denom;
    }
    let df = first.sample_rate_hz / n as f64;
    Ok(SpectrumReport {
        freqs_hz: (0..n_bins).map(|k| k as f64 * df).collect(),
        magnitude,
        n_trials_averaged: trials.len(),
        class_label: first.class_label,
    })
}

fn band_bins(spectrum: &SpectrumReport, band_hz: (f64, f64)) -> Result<std::ops::Range<usize>> {
    let (low, high) = band_hz;
    let nyquist = *spectrum.freqs_hz.last().ok_or(Error::EmptyInput)?;
    if !(low < high) || low < 0.0 || high > nyquist + 1e-9 {
        return Err(Error::InvariantViolation(format!(
            "band [{low}, {high}] Hz is not an ordered sub-band of [0, {nyquist}]"
        )));
    }
    let start = spectrum.freqs_hz.partition_point(|&f| f < low);
    let end = spectrum.freqs_hz.partition_point(|&f| f <= high);
    if start >= end {
        return Err(Error::EmptyBand { low, high });
    }
    Ok(start..end)
}

/// Frequency of the largest bin inside `band_hz` (inclusive); ties go to the
/// lowest frequency.
pub fn dominant_frequency(spectrum: &SpectrumReport, band_hz: (f64, f64)) -> Result<f64> {
    let bins = band_bins(spectrum, band_hz)?;
    let mut best = bins.start;
    for k in bins {
        if spectrum.magnitude[k] > spectrum.magnitude[best] {
            best = k;
        }
    }
    Ok(spectrum.freqs_hz[best])
}

/// Peak magnitude divided by the median magnitude inside `band_hz`.
pub fn peak_to_median(spectrum: &SpectrumReport, band_hz: (f64, f64)) -> Result<f64> {
    let bins = band_bins(spectrum, band_hz)?;
    let mut vals: Vec<f64> = spectrum.magnitude[bins].to_vec();
    vals.sort_by(f64::total_cmp);
    let peak = *vals.last().unwrap();
    let m = vals.len();
    let median = if m % 2 == 1 {
        vals[m / 2]
    } else {
        0.5 * (vals[m / 2 - 1] + vals[m / 2])
    };
    Ok(if median > 0.0 { peak / median } else { f64::INFINITY })
}

/// Spectrum of a single trial.
pub fn trial_spectrum(trial: &EegTrial, window: Window) -> SpectrumReport {
    compute_spectrum(std::slice::from_ref(trial), window).expect("single trial is homogeneous")
}
