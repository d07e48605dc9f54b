//! Subject identification by cross-validation, and softmax probing of
//! generated data through a frozen subject classifier.

use serde::{Deserialize, Serialize};

use super::report::{mean_std, row_normalize};
use crate::error::{Error, Result};
use crate::par;
use crate::signal::{stratified_folds, Dataset, EegTrial, SubjectId};
use crate::train::{
    eval_logits, softmax, train_classifier, ClassifierRole, ClassifierTrainConfig, NetworkConfig, TrainedClassifier,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiometricReport {
    pub roster: Vec<SubjectId>,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Row-normalized, rows are true subjects.
    pub confusion: Vec<Vec<f64>>,
    pub seed: u64,
    pub config_hash: String,
}

impl BiometricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true_subject");
        for s in &self.roster {
            out.push_str(&format!(",S{s:02}"));
        }
        out.push('\n');
        for (s, row) in self.roster.iter().zip(&self.confusion) {
            out.push_str(&format!("S{s:02}"));
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

fn subset(data: &Dataset, idx: &[usize]) -> Result<Dataset> {
    let trials: Vec<EegTrial> = idx.iter().map(|&i| data.trials()[i].clone()).collect();
    Dataset::new(trials, data.class_table().clone(), data.subject_roster().to_vec())
}

/// `n_folds`-fold cross-validation of the subject classifier, folds stratified
/// by (subject, class). Every subject needs at least `n_folds` trials.
pub fn subject_biometric_eval(
    data: &Dataset,
    n_folds: usize,
    arch: &NetworkConfig,
    cfg: &ClassifierTrainConfig,
    seed: u64,
) -> Result<BiometricReport> {
    let roster = data.subject_roster().to_vec();
    if roster.len() < 2 {
        return Err(Error::InvariantViolation("subject identification needs at least 2 subjects".into()));
    }
    for &s in &roster {
        let n = data.trials().iter().filter(|t| t.subject == s).count();
        if n < n_folds {
            return Err(Error::TooFewTrialsPerFold(format!("subject {s} has {n} trials for {n_folds} folds")));
        }
    }
    let folds = stratified_folds(data, n_folds, seed)?;
    let n_sub = roster.len();
    let results = par::map_range(n_folds, |f| -> Result<(f64, Vec<Vec<f64>>)> {
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        let train = subset(data, &train_idx)?;
        let test = subset(data, &folds[f])?;
        let cfg = ClassifierTrainConfig {
            seed: super::protocols::derive_seed(seed, &[f as u64]),
            ..cfg.clone()
        };
        let clf = train_classifier(&train, None, ClassifierRole::Subject, arch, &cfg)?;
        let pred = clf.predict(&test)?;
        let truth = clf.targets(&test)?;
        let mut m = vec![vec![0.0; n_sub]; n_sub];
        for (&p, &t) in pred.iter().zip(&truth) {
            m[t][p] += 1.0;
        }
        Ok((crate::train::accuracy(&pred, &truth), m))
    });
    let mut fold_accuracies = Vec::with_capacity(n_folds);
    let mut counts = vec![vec![0.0; n_sub]; n_sub];
    for r in results {
        let (a, m) = r?;
        fold_accuracies.push(a);
        for (row, add) in counts.iter_mut().zip(&m) {
            for (x, y) in row.iter_mut().zip(add) {
                *x += y;
            }
        }
    }
    let (mean, std) = mean_std(&fold_accuracies);
    Ok(BiometricReport {
        roster,
        fold_accuracies,
        mean,
        std,
        confusion: row_normalize(&counts),
        seed,
        config_hash: String::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub roster: Vec<SubjectId>,
    /// Softmax averaged over all probed trials, indexed like `roster`.
    pub mean_softmax: Vec<f64>,
    /// Mean over trials of the largest softmax entry.
    pub mean_max_softmax: f64,
    pub n_trials: usize,
}

impl ProbeReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject,mean_softmax\n");
        for (s, p) in self.roster.iter().zip(&self.mean_softmax) {
            out.push_str(&format!("S{s:02},{p:.6}\n"));
        }
        out.push_str(&format!("mean_max_softmax,{:.6}\n", self.mean_max_softmax));
        out
    }
}

/// Passes `data` through a subject classifier and averages its softmax.
pub fn probe_subject_softmax(data: &Dataset, classifier: &TrainedClassifier) -> Result<ProbeReport> {
    if classifier.role != ClassifierRole::Subject {
        return Err(Error::InvariantViolation("probe needs a subject classifier".into()));
    }
    let n_sub = classifier.roster.len();
    if n_sub < 2 {
        return Err(Error::RosterMismatch(format!("subject roster of size {n_sub}")));
    }
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let logits = eval_logits(&classifier.net, &classifier.store, data)?;
    let mut mean = vec![0.0; n_sub];
    let mut max_sum = 0.0;
    for r in 0..logits.rows {
        let p = softmax(logits.row(r));
        for (m, v) in mean.iter_mut().zip(&p) {
            *m += v;
        }
        max_sum += p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    let n = logits.rows as f64;
    Ok(ProbeReport {
        roster: classifier.roster.clone(),
        mean_softmax: mean.into_iter().map(|m| m / n).collect(),
        mean_max_softmax: max_sum / n,
        n_trials: logits.rows,
    })
}
