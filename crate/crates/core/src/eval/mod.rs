//! Classification protocols, subject identification, softmax probing and
//! spectral validation, aggregated over seeds into JSON/CSV reports.

mod biometric;
mod fft;
mod protocols;
mod report;

pub use biometric::{probe_subject_softmax, subject_biometric_eval, BiometricReport, ProbeReport};
pub use fft::{
    default_peak_band, fft_validation_report, trial_peaks, white_noise_dataset, ClassSpectra, FftReport, SideStats,
    PEAK_TOLERANCE_HZ,
};
pub use protocols::{
    default_regimes, run_cross_task_protocol, run_leave_one_out_protocol, run_single_subject_protocol, ProtocolSettings,
};
pub use report::{mean_std, row_normalize, AuditRecord, CellResult, ProtocolReport, Regime, RegimeSummary};
