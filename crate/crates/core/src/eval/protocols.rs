//! Single-subject, leave-one-subject-out and cross-task SSVEP protocols.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::report::{mean_std, row_normalize, AuditRecord, CellResult, ProtocolReport, Regime, RegimeSummary};
use crate::error::{Error, Result};
use crate::par;
use crate::signal::{mix_datasets, split_dataset, Dataset, SplitPolicy, SubjectId};
use crate::train::{
    generate_synthetic, train_acgan, train_classifier, train_dcgan, train_sisgan, ClassifierRole,
    ClassifierTrainConfig, FrozenSubjectNet, GanTrainConfig, GanVariant, GeneratorBundle, NetworkConfig,
};

/// Everything a protocol run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSettings {
    pub regimes: Vec<Regime>,
    pub n_seeds: usize,
    /// Run `i` uses seed `base_seed + i`.
    pub base_seed: u64,
    /// Test share of each (subject, class) cell in the single-subject protocol.
    pub test_fraction: f64,
    pub network: NetworkConfig,
    /// `variant` and `seed` are overridden per run.
    pub gan: GanTrainConfig,
    pub ssvep_classifier: ClassifierTrainConfig,
    pub subject_classifier: ClassifierTrainConfig,
    pub config_hash: String,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        Self {
            regimes: default_regimes(),
            n_seeds: 10,
            base_seed: 0,
            test_fraction: 0.2,
            network: NetworkConfig::default(),
            gan: GanTrainConfig::default(),
            ssvep_classifier: ClassifierTrainConfig::default(),
            subject_classifier: ClassifierTrainConfig::default(),
            config_hash: String::new(),
        }
    }
}

pub fn default_regimes() -> Vec<Regime> {
    vec![
        Regime::RealOnly,
        Regime::Augmented(GanVariant::DcGan),
        Regime::Augmented(GanVariant::AcGan),
        Regime::Augmented(GanVariant::SisGan),
        Regime::SyntheticOnly(GanVariant::DcGan),
        Regime::SyntheticOnly(GanVariant::AcGan),
        Regime::SyntheticOnly(GanVariant::SisGan),
    ]
}

impl ProtocolSettings {
    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(Error::Config("no regimes selected".into()));
        }
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction {} outside (0, 1)", self.test_fraction)));
        }
        self.gan.validate()?;
        self.ssvep_classifier.validate()?;
        self.subject_classifier.validate()
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|i| self.base_seed.wrapping_add(i)).collect()
    }
}

/// SplitMix64 finalizer over a seed and a tuple of tags.
pub(crate) fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut x = seed;
    for &t in tags {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(t.wrapping_mul(0xD1B5_4A32_D192_ED03));
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

const TAG_SPLIT: u64 = 1;
const TAG_SUBJECT_CLF: u64 = 2;
const TAG_GAN: u64 = 3;
const TAG_SYNTH: u64 = 4;
const TAG_MIX: u64 = 5;
const TAG_SSVEP_CLF: u64 = 6;

/// Outcome of one (regime, test set) evaluation inside a run.
struct Scored {
    accuracy: f64,
    confusion: Vec<Vec<f64>>,
}

struct RunResult {
    /// `[regime][test unit]`
    scores: Vec<Vec<Scored>>,
    train_sizes: Vec<usize>,
    audits: Vec<AuditRecord>,
}

fn subjects_of(ds: &Dataset) -> BTreeSet<SubjectId> {
    ds.trials().iter().map(|t| t.subject).collect()
}

fn confusion_counts(pred: &[usize], truth: &[usize], k: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        m[t][p] += 1.0;
    }
    m
}

/// Trains every requested generator variant on `train` and returns one
/// synthetic pool per variant, sized to the largest real class.
fn synthetic_pools(
    train: &Dataset,
    variants: &[GanVariant],
    settings: &ProtocolSettings,
    seed: u64,
    pool_subjects: &mut BTreeSet<SubjectId>,
) -> Result<Vec<(GanVariant, Dataset)>> {
    let classes = train.class_table().clone();
    let (_, _, fs) = train.shape().ok_or(Error::EmptyInput)?;
    let n_per_class = train.class_histogram().into_iter().max().unwrap_or(0);
    let gan_cfg = |variant| GanTrainConfig {
        variant,
        seed: derive_seed(seed, &[TAG_GAN]),
        ..settings.gan.clone()
    };
    let subject_clf = if variants.contains(&GanVariant::SisGan) {
        let cfg = ClassifierTrainConfig {
            seed: derive_seed(seed, &[TAG_SUBJECT_CLF]),
            ..settings.subject_classifier.clone()
        };
        pool_subjects.extend(subjects_of(train));
        let clf = train_classifier(train, None, ClassifierRole::Subject, &settings.network, &cfg)?;
        Some((clf.net, clf.store.freeze(), clf.roster))
    } else {
        None
    };

    let mut pools = Vec::with_capacity(variants.len());
    for &variant in variants {
        pool_subjects.extend(subjects_of(train));
        let bundle = match variant {
            GanVariant::DcGan => {
                let mut per = Vec::with_capacity(classes.len());
                for c in 0..classes.len() {
                    let out = train_dcgan(&train.restrict_to_class(c)?, &settings.network, &gan_cfg(variant))?;
                    per.push(Some((out.generator, out.generator_store)));
                }
                GeneratorBundle::PerClass(per)
            }
            GanVariant::AcGan => {
                let out = train_acgan(train, &settings.network, &gan_cfg(variant))?;
                GeneratorBundle::Conditional {
                    generator: out.generator,
                    store: out.generator_store,
                }
            }
            GanVariant::SisGan => {
                let (net, store, roster) = subject_clf.as_ref().expect("subject classifier trained");
                let frozen = FrozenSubjectNet { net, store, roster };
                let out = train_sisgan(train, frozen, &settings.network, &gan_cfg(variant))?;
                GeneratorBundle::Conditional {
                    generator: out.generator,
                    store: out.generator_store,
                }
            }
        };
        let syn = generate_synthetic(&bundle, n_per_class, &classes, fs, derive_seed(seed, &[TAG_SYNTH, variant as u64]))?;
        pools.push((variant, syn));
    }
    Ok(pools)
}

/// One seed of one protocol unit: build every regime's training set from
/// `train`, fit an SSVEP classifier on each, score on every test set.
fn run_once(
    train: &Dataset,
    tests: &[&Dataset],
    audit_leakage: bool,
    settings: &ProtocolSettings,
    seed: u64,
) -> Result<RunResult> {
    let k = train.class_table().len();
    let mut variants: Vec<GanVariant> = settings.regimes.iter().filter_map(|r| r.variant()).collect();
    variants.sort();
    variants.dedup();

    let mut pool_subjects = BTreeSet::new();
    let pools = synthetic_pools(train, &variants, settings, seed, &mut pool_subjects)?;

    let mut scores = Vec::with_capacity(settings.regimes.len());
    let mut train_sizes = Vec::with_capacity(settings.regimes.len());
    let mut regime_subjects = BTreeSet::new();
    for &regime in &settings.regimes {
        let data = match regime.variant() {
            None => train.clone(),
            Some(v) => {
                let pool = &pools.iter().find(|(pv, _)| *pv == v).expect("pool built").1;
                mix_datasets(train, pool, regime.real_ratio(), derive_seed(seed, &[TAG_MIX, v as u64]))?
            }
        };
        regime_subjects.extend(subjects_of(&data));
        train_sizes.push(data.len());
        let cfg = ClassifierTrainConfig {
            seed: derive_seed(seed, &[TAG_SSVEP_CLF]),
            ..settings.ssvep_classifier.clone()
        };
        let clf = train_classifier(&data, None, ClassifierRole::Ssvep, &settings.network, &cfg)?;
        let mut per_test = Vec::with_capacity(tests.len());
        for test in tests {
            let pred = clf.predict(test)?;
            let truth = clf.targets(test)?;
            per_test.push(Scored {
                accuracy: crate::train::accuracy(&pred, &truth),
                confusion: confusion_counts(&pred, &truth, k),
            });
        }
        scores.push(per_test);
    }

    let mut audits = Vec::new();
    let parity = train_sizes.iter().all(|&n| n == train.len());
    audits.push(AuditRecord {
        name: "sample_count_parity".into(),
        passed: parity,
        detail: format!("real training size {}, regime sizes {:?}", train.len(), train_sizes),
    });
    if audit_leakage {
        let test_subjects: BTreeSet<SubjectId> = tests.iter().flat_map(|t| subjects_of(t)).collect();
        let mut seen: BTreeSet<SubjectId> = subjects_of(train);
        seen.extend(pool_subjects);
        seen.extend(regime_subjects);
        let leaked: Vec<SubjectId> = test_subjects.intersection(&seen).copied().collect();
        audits.push(AuditRecord {
            name: "subject_leakage".into(),
            passed: leaked.is_empty(),
            detail: if leaked.is_empty() {
                format!("test subjects {test_subjects:?} absent from all training pools")
            } else {
                format!("test subjects {leaked:?} found in training pools")
            },
        });
    }
    Ok(RunResult {
        scores,
        train_sizes,
        audits,
    })
}

/// A training set plus the named test sets it is scored on, with the list of
/// unit names each test set contributes to.
struct Job<'a> {
    train: Dataset,
    tests: Vec<(String, Dataset)>,
    seed: u64,
    seed_index: usize,
    leakage: bool,
    settings: &'a ProtocolSettings,
}

fn assemble(
    protocol: &str,
    units: Vec<String>,
    jobs: Vec<Job<'_>>,
    settings: &ProtocolSettings,
    k: usize,
    mut audits: Vec<AuditRecord>,
    note: String,
) -> Result<ProtocolReport> {
    let n_seeds = settings.n_seeds;
    let results = par::map(&jobs, |job| {
        let tests: Vec<&Dataset> = job.tests.iter().map(|(_, d)| d).collect();
        run_once(&job.train, &tests, job.leakage, job.settings, job.seed)
    });

    let n_reg = settings.regimes.len();
    // [unit][regime] -> (accuracies by seed, pooled confusion, train sizes by seed)
    let mut acc = vec![vec![vec![f64::NAN; n_seeds]; n_reg]; units.len()];
    let mut conf = vec![vec![vec![vec![0.0; k]; k]; n_reg]; units.len()];
    let mut sizes = vec![vec![vec![0usize; n_seeds]; n_reg]; units.len()];
    for (job, res) in jobs.iter().zip(results) {
        let res = res?;
        for audit in res.audits {
            if !audit.passed || !audits.iter().any(|a| a.name == audit.name) {
                audits.push(audit);
            }
        }
        for (r, per_test) in res.scores.into_iter().enumerate() {
            for ((name, _), scored) in job.tests.iter().zip(per_test) {
                let u = units.iter().position(|x| x == name).expect("unit registered");
                acc[u][r][job.seed_index] = scored.accuracy;
                sizes[u][r][job.seed_index] = res.train_sizes[r];
                for (row, add) in conf[u][r].iter_mut().zip(&scored.confusion) {
                    for (a, b) in row.iter_mut().zip(add) {
                        *a += b;
                    }
                }
            }
        }
    }

    let mut cells = Vec::with_capacity(units.len() * n_reg);
    for (u, unit) in units.iter().enumerate() {
        for (r, &regime) in settings.regimes.iter().enumerate() {
            let (mean, std) = mean_std(&acc[u][r]);
            cells.push(CellResult {
                unit: unit.clone(),
                regime,
                accuracies: acc[u][r].clone(),
                mean,
                std,
                confusion: row_normalize(&conf[u][r]),
                train_sizes: sizes[u][r].clone(),
            });
        }
    }
    let summary = settings
        .regimes
        .iter()
        .enumerate()
        .map(|(r, &regime)| {
            let per_seed_means: Vec<f64> = (0..n_seeds)
                .map(|s| units.iter().enumerate().map(|(u, _)| acc[u][r][s]).sum::<f64>() / units.len() as f64)
                .collect();
            let (mean, std) = mean_std(&per_seed_means);
            RegimeSummary {
                regime,
                per_seed_means,
                mean,
                std,
            }
        })
        .collect();
    // every regime of a unit saw the same training size in every seed
    let parity_ok = units.iter().all(|u| {
        let mut of_unit = cells.iter().filter(|c| &c.unit == u);
        let first = of_unit.next().map(|c| c.train_sizes.clone());
        of_unit.all(|c| Some(&c.train_sizes) == first.as_ref())
    });
    if let Some(a) = audits.iter_mut().find(|a| a.name == "sample_count_parity") {
        a.passed &= parity_ok;
    }
    Ok(ProtocolReport {
        protocol: protocol.into(),
        regimes: settings.regimes.clone(),
        seeds: settings.seeds(),
        units,
        cells,
        summary,
        audits,
        config_hash: settings.config_hash.clone(),
        note,
    })
}

fn unit_name(s: SubjectId) -> String {
    format!("S{s:02}")
}

/// Per subject: stratified split, generators and classifiers trained on that
/// subject's training part only, scored on its test part. SIS-GAN regimes are
/// dropped because a one-subject roster gives no invariance signal.
pub fn run_single_subject_protocol(data: &Dataset, settings: &ProtocolSettings) -> Result<ProtocolReport> {
    settings.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let k = data.class_table().len();
    let mut settings = settings.clone();
    let dropped: Vec<Regime> = settings
        .regimes
        .iter()
        .copied()
        .filter(|r| r.variant() == Some(GanVariant::SisGan))
        .collect();
    settings.regimes.retain(|r| !dropped.contains(r));
    if settings.regimes.is_empty() {
        return Err(Error::Config("single-subject protocol has no usable regimes".into()));
    }
    let note = if dropped.is_empty() {
        String::new()
    } else {
        format!("dropped {dropped:?}: subject invariance is undefined for one subject")
    };

    let mut units = Vec::new();
    let mut jobs = Vec::new();
    for &s in data.subject_roster() {
        let sub = data.restrict_to_subject(s)?;
        if sub.class_histogram().contains(&0) {
            return Err(Error::InvariantViolation(format!("subject {s} lacks a class")));
        }
        units.push(unit_name(s));
        for (i, seed) in settings.seeds().into_iter().enumerate() {
            let (train, test) = split_dataset(
                &sub,
                SplitPolicy::PerSubjectStratified {
                    test_fraction: settings.test_fraction,
                },
                derive_seed(seed, &[TAG_SPLIT, s as u64]),
            )?;
            jobs.push((train, test, seed, i, s));
        }
    }
    let jobs = jobs
        .into_iter()
        .map(|(train, test, seed, seed_index, s)| Job {
            train,
            tests: vec![(unit_name(s), test)],
            seed: derive_seed(seed, &[s as u64]),
            seed_index,
            leakage: false,
            settings: &settings,
        })
        .collect();
    assemble("single_subject", units, jobs, &settings, k, Vec::new(), note)
}

/// Every subject in turn is held out of all training stages and used as the
/// test set.
pub fn run_leave_one_out_protocol(data: &Dataset, settings: &ProtocolSettings) -> Result<ProtocolReport> {
    settings.validate()?;
    if data.subject_roster().len() < 2 {
        return Err(Error::InvariantViolation("leave-one-out needs at least 2 subjects".into()));
    }
    let k = data.class_table().len();
    let mut units = Vec::new();
    let mut jobs = Vec::new();
    for &s in data.subject_roster() {
        let (train, test) = split_dataset(data, SplitPolicy::LeaveOneSubjectOut { held_out: s }, 0)?;
        units.push(unit_name(s));
        for (i, seed) in settings.seeds().into_iter().enumerate() {
            jobs.push(Job {
                train: train.clone(),
                tests: vec![(unit_name(s), test.clone())],
                seed: derive_seed(seed, &[s as u64]),
                seed_index: i,
                leakage: true,
                settings,
            });
        }
    }
    assemble("leave_one_out", units, jobs, settings, k, Vec::new(), String::new())
}

/// Everything trained on `offline`, scored per `online` subject. The online
/// set is a simulated task shift, not a recorded second task.
pub fn run_cross_task_protocol(offline: &Dataset, online: &Dataset, settings: &ProtocolSettings) -> Result<ProtocolReport> {
    settings.validate()?;
    if offline.is_empty() || online.is_empty() {
        return Err(Error::EmptyInput);
    }
    if offline.class_table() != online.class_table() {
        return Err(Error::ShapeMismatch("offline and online class tables differ".into()));
    }
    let overlap: Vec<SubjectId> = offline
        .subject_roster()
        .iter()
        .copied()
        .filter(|s| online.subject_roster().contains(s))
        .collect();
    if !overlap.is_empty() {
        return Err(Error::RosterOverlap(overlap));
    }
    let k = offline.class_table().len();
    let mut units = Vec::new();
    let mut tests = Vec::new();
    for &s in online.subject_roster() {
        units.push(unit_name(s));
        tests.push((unit_name(s), online.restrict_to_subject(s)?));
    }
    let jobs = settings
        .seeds()
        .into_iter()
        .enumerate()
        .map(|(i, seed)| Job {
            train: offline.clone(),
            tests: tests.clone(),
            seed,
            seed_index: i,
            leakage: true,
            settings,
        })
        .collect();
    let audits = vec![AuditRecord {
        name: "roster_disjoint".into(),
        passed: true,
        detail: format!(
            "offline {:?} and online {:?} share no subject",
            offline.subject_roster(),
            online.subject_roster()
        ),
    }];
    assemble(
        "cross_task",
        units,
        jobs,
        settings,
        k,
        audits,
        "online data is a simulated task shift of new oracle subjects".into(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_tag() {
        let a = derive_seed(7, &[1]);
        assert_ne!(a, derive_seed(7, &[2]));
        assert_ne!(a, derive_seed(8, &[1]));
        assert_eq!(a, derive_seed(7, &[1]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
    }

    #[test]
    fn confusion_counts_diagonal() {
        let m = confusion_counts(&[0, 1, 2, 2], &[0, 1, 2, 1], 3);
        assert_eq!(m[1], vec![0.0, 1.0, 1.0]);
        assert_eq!(m[2], vec![0.0, 0.0, 1.0]);
    }
}
