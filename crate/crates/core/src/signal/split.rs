//! Dataset partitioning and real/synthetic mixing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::types::{Dataset, EegTrial, SubjectId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitPolicy {
    /// Per (subject, class) cell, `round_half_up(test_fraction * cell)` trials
    /// go to the test side.
    PerSubjectStratified { test_fraction: f64 },
    LeaveOneSubjectOut { held_out: SubjectId },
}

pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Trial indices grouped by `(subject, class)` in roster-then-class order.
fn cells(dataset: &Dataset) -> Result<Vec<Vec<usize>>> {
    let k = dataset.class_table().len();
    let mut out = Vec::with_capacity(dataset.subject_roster().len() * k);
    for &s in dataset.subject_roster() {
        for c in 0..k {
            out.push(
                dataset
                    .trials()
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.subject == s && t.class_label == Some(c))
                    .map(|(i, _)| i)
                    .collect(),
            );
        }
    }
    Ok(out)
}

fn require_labels(dataset: &Dataset) -> Result<()> {
    match dataset.trials().iter().position(|t| t.class_label.is_none()) {
        Some(i) => Err(Error::MissingLabels(format!("trial {i} has no class label"))),
        None => Ok(()),
    }
}

/// Splits into `(train, test)`. Both sides keep the original trial order.
pub fn split_dataset(dataset: &Dataset, policy: SplitPolicy, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut is_test = vec![false; dataset.len()];
    match policy {
        SplitPolicy::PerSubjectStratified { test_fraction } => {
            if !(0.0..=1.0).contains(&test_fraction) {
                return Err(Error::InvariantViolation(format!(
                    "test fraction {test_fraction} outside [0, 1]"
                )));
            }
            require_labels(dataset)?;
            let k = dataset.class_table().len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (ci, mut cell) in cells(dataset)?.into_iter().enumerate() {
                if cell.is_empty() {
                    return Err(Error::EmptyCell {
                        subject: dataset.subject_roster()[ci / k],
                        class: ci % k,
                    });
                }
                let n_test = round_half_up(test_fraction * cell.len() as f64).min(cell.len());
                cell.shuffle(&mut rng);
                for &i in &cell[..n_test] {
                    is_test[i] = true;
                }
            }
        }
        SplitPolicy::LeaveOneSubjectOut { held_out } => {
            if !dataset.subject_roster().contains(&held_out) {
                return Err(Error::UnknownSubject(held_out));
            }
            for (flag, t) in is_test.iter_mut().zip(dataset.trials()) {
                *flag = t.subject == held_out;
            }
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (t, &flag) in dataset.trials().iter().zip(&is_test) {
        if flag {
            test.push(t.clone());
        } else {
            train.push(t.clone());
        }
    }
    let build = |trials: Vec<EegTrial>| -> Result<Dataset> {
        match policy {
            // stratified halves still contain every subject
            SplitPolicy::PerSubjectStratified { .. } => {
                let mut d = Dataset::new(
                    trials,
                    dataset.class_table().clone(),
                    dataset.subject_roster().to_vec(),
                )?;
                d.meta = dataset.meta.clone();
                Ok(d)
            }
            SplitPolicy::LeaveOneSubjectOut { .. } => dataset.from_subset(trials),
        }
    };
    Ok((build(train)?, build(test)?))
}

/// Draws a dataset of the same size and class histogram as `real`, taking
/// `round_half_up(ratio_real * n_c)` trials of each class `c` from `real` and
/// the remainder from `synthetic`. The result is shuffled.
pub fn mix_datasets(real: &Dataset, synthetic: &Dataset, ratio_real: f64, seed: u64) -> Result<Dataset> {
    if real.is_empty() || synthetic.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=1.0).contains(&ratio_real) {
        return Err(Error::InvariantViolation(format!(
            "real ratio {ratio_real} outside [0, 1]"
        )));
    }
    if real.class_table() != synthetic.class_table() {
        return Err(Error::ShapeMismatch("class tables differ".into()));
    }
    if !real.trials()[0].same_shape(&synthetic.trials()[0]) {
        return Err(Error::ShapeMismatch(format!(
            "real trials {:?} vs synthetic trials {:?}",
            real.shape(),
            synthetic.shape()
        )));
    }
    require_labels(real)?;
    require_labels(synthetic)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<EegTrial> = Vec::with_capacity(real.len());
    for (class, &n_c) in real.class_histogram().iter().enumerate() {
        let n_real = round_half_up(ratio_real * n_c as f64).min(n_c);
        let n_syn = n_c - n_real;
        let mut pool: Vec<&EegTrial> = real
            .trials()
            .iter()
            .filter(|t| t.class_label == Some(class))
            .collect();
        pool.shuffle(&mut rng);
        picked.extend(pool[..n_real].iter().map(|t| (*t).clone()));

        let mut spool: Vec<&EegTrial> = synthetic
            .trials()
            .iter()
            .filter(|t| t.class_label == Some(class))
            .collect();
        if spool.len() < n_syn {
            return Err(Error::InsufficientSynthetic {
                class,
                needed: n_syn,
                available: spool.len(),
            });
        }
        spool.shuffle(&mut rng);
        picked.extend(spool[..n_syn].iter().map(|t| (*t).clone()));
    }
    picked.shuffle(&mut rng);

    let mut roster: Vec<SubjectId> = Vec::new();
    for &s in real.subject_roster().iter().chain(synthetic.subject_roster()) {
        if !roster.contains(&s) && picked.iter().any(|t| t.subject == s) {
            roster.push(s);
        }
    }
    let mut out = Dataset::new(picked, real.class_table().clone(), roster)?;
    out.meta = real.meta.clone();
    out.meta.insert("mix_ratio_real".into(), format!("{ratio_real}"));
    out.meta.insert("mix_seed".into(), seed.to_string());
    Ok(out)
}

/// Assigns every trial to one of `n_folds` folds, stratified by
/// `(subject, class)` cell: each cell is shuffled and dealt round-robin,
/// continuing the deal position across cells so fold sizes stay balanced.
pub fn stratified_folds(dataset: &Dataset, n_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_folds < 2 {
        return Err(Error::InvariantViolation("need at least 2 folds".into()));
    }
    if dataset.len() < n_folds {
        return Err(Error::TooFewTrialsPerFold(format!(
            "{} trials for {n_folds} folds",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); n_folds];
    let mut next = 0;
    let mut groups = cells(dataset)?;
    // unlabeled trials form one extra group per subject
    for &s in dataset.subject_roster() {
        groups.push(
            dataset
                .trials()
                .iter()
                .enumerate()
                .filter(|(_, t)| t.subject == s && t.class_label.is_none())
                .map(|(i, _)| i)
                .collect(),
        );
    }
    for mut g in groups {
        g.shuffle(&mut rng);
        for i in g {
            folds[next % n_folds].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::types::{Provenance, SsvepClassTable};

    fn grid(subjects: u32, per_class: usize, provenance: Provenance) -> Dataset {
        let mut trials = Vec::new();
        for s in 0..subjects {
            for c in 0..3 {
                for i in 0..per_class {
                    let v = (s * 1000 + c as u32 * 100 + i as u32) as f64;
                    let subject = if provenance == Provenance::Generated {
                        crate::signal::SYNTHETIC_SUBJECT
                    } else {
                        s
                    };
                    trials.push(
                        EegTrial::new(1, 2, vec![v, -v], 500.0, subject, Some(c), provenance)
                            .unwrap(),
                    );
                }
            }
        }
        let roster = if provenance == Provenance::Generated {
            vec![crate::signal::SYNTHETIC_SUBJECT]
        } else {
            (0..subjects).collect()
        };
        Dataset::new(trials, SsvepClassTable::default(), roster).unwrap()
    }

    #[test]
    fn stratified_split_sizes() {
        let ds = grid(9, 60, Provenance::OracleReal);
        let (train, test) =
            split_dataset(&ds, SplitPolicy::PerSubjectStratified { test_fraction: 0.2 }, 5).unwrap();
        assert_eq!(test.len(), 9 * 3 * 12);
        assert_eq!(train.len(), ds.len() - 324);
        assert_eq!(train.subject_roster().len(), 9);
    }

    #[test]
    fn half_up_rounding_per_cell() {
        // 0.25 * 10 = 2.5 rounds up to 3 in every cell.
        let ds = grid(2, 10, Provenance::OracleReal);
        let (_, test) =
            split_dataset(&ds, SplitPolicy::PerSubjectStratified { test_fraction: 0.25 }, 1).unwrap();
        assert_eq!(test.len(), 2 * 3 * 3);
    }

    #[test]
    fn leave_one_out_split() {
        let ds = grid(9, 4, Provenance::OracleReal);
        let (train, test) = split_dataset(&ds, SplitPolicy::LeaveOneSubjectOut { held_out: 0 }, 0).unwrap();
        assert!(test.trials().iter().all(|t| t.subject == 0));
        assert_eq!(test.len(), 12);
        assert_eq!(train.subject_roster().len(), 8);
        assert!(!train.subject_roster().contains(&0));
        assert!(matches!(
            split_dataset(&ds, SplitPolicy::LeaveOneSubjectOut { held_out: 42 }, 0),
            Err(Error::UnknownSubject(42))
        ));
    }

    #[test]
    fn empty_cell_reported() {
        let ds = grid(2, 3, Provenance::OracleReal);
        let trials: Vec<_> = ds
            .trials()
            .iter()
            .filter(|t| !(t.subject == 1 && t.class_label == Some(2)))
            .cloned()
            .collect();
        let ds = Dataset::new(trials, SsvepClassTable::default(), vec![0, 1]).unwrap();
        assert!(matches!(
            split_dataset(&ds, SplitPolicy::PerSubjectStratified { test_fraction: 0.2 }, 0),
            Err(Error::EmptyCell { subject: 1, class: 2 })
        ));
    }

    #[test]
    fn mix_half_and_extremes() {
        let real = grid(3, 48, Provenance::OracleReal);
        assert_eq!(real.len(), 432);
        let syn = grid(1, 200, Provenance::Generated);
        let mixed = mix_datasets(&real, &syn, 0.5, 9).unwrap();
        assert_eq!(mixed.len(), 432);
        let n_real = mixed
            .trials()
            .iter()
            .filter(|t| t.provenance == Provenance::OracleReal)
            .count();
        assert_eq!(n_real, 216);
        assert_eq!(mixed.class_histogram(), vec![144, 144, 144]);

        let only_real = mix_datasets(&real, &syn, 1.0, 9).unwrap();
        let mut a: Vec<f64> = only_real.trials().iter().map(|t| t.samples()[0]).collect();
        let mut b: Vec<f64> = real.trials().iter().map(|t| t.samples()[0]).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);

        let only_syn = mix_datasets(&real, &syn, 0.0, 9).unwrap();
        assert_eq!(only_syn.len(), 432);
        assert!(only_syn.trials().iter().all(|t| t.provenance == Provenance::Generated));
    }

    #[test]
    fn mix_insufficient_pool() {
        let real = grid(3, 48, Provenance::OracleReal);
        let syn = grid(1, 10, Provenance::Generated);
        assert!(matches!(
            mix_datasets(&real, &syn, 0.5, 0),
            Err(Error::InsufficientSynthetic { .. })
        ));
    }

    #[test]
    fn folds_partition() {
        let ds = grid(9, 20, Provenance::OracleReal);
        let folds = stratified_folds(&ds, 10, 4).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.len(), 54);
        }
    }
}
