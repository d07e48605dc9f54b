use std::path::Path;

use sisgan::config::{ExperimentConfig, Protocol};
use sisgan::eval::{
    fft_validation_report, probe_subject_softmax, run_cross_task_protocol, run_leave_one_out_protocol,
    run_single_subject_protocol, subject_biometric_eval,
};
use sisgan::io::{
    decode_checkpoint, decode_dataset, encode_checkpoint, encode_dataset, load_checkpoint, load_dataset, Checkpoint,
};
use sisgan::oracle::synthesize_dataset;
use sisgan::signal::{Dataset, SsvepClassTable};
use sisgan::train::{
    generate_synthetic, loss_log_csv, train_gan as run_gan, ClassifierRole, ClassifierTrainConfig, FrozenSubjectNet,
    GanTrainConfig, GanVariant, GeneratorBundle, TrainedClassifier,
};
use sisgan::{Error, Result};

use crate::manifest::{self, write_artifact};

pub const OFFLINE_FILE: &str = "offline.sisgds";
pub const ONLINE_FILE: &str = "online.sisgds";

fn stamp_dataset(ds: Dataset, hash: &str, seed: u64) -> Dataset {
    ds.with_meta("config_hash", hash).with_meta("seed", seed.to_string())
}

fn stamp_checkpoint(ck: Checkpoint, hash: &str, seed: u64) -> Checkpoint {
    ck.with_meta("config_hash", hash).with_meta("seed", seed.to_string())
}

fn file_name(path: &Path) -> Result<(&Path, String)> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?
        .to_string_lossy()
        .into_owned();
    Ok((dir, name))
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let classes = cfg.classes()?;
    let hash = cfg.config_hash();
    for (name, sim) in [(OFFLINE_FILE, &cfg.simulation.offline), (ONLINE_FILE, &cfg.simulation.online)] {
        let mut ds = synthesize_dataset(sim, &classes)?;
        if cfg.simulation.normalize {
            ds = ds.normalized()?;
        }
        let ds = stamp_dataset(ds, &hash, sim.seed);
        write_artifact(out, name, &encode_dataset(&ds), "dataset", &hash, &sim.seed.to_string())?;
        println!(
            "{}: {} trials, {} channels x {} steps at {} Hz, subjects {:?}",
            out.join(name).display(),
            ds.len(),
            sim.channels,
            sim.time_steps,
            sim.sample_rate_hz,
            ds.subject_roster()
        );
    }
    Ok(())
}

pub fn train_gan(
    cfg: &ExperimentConfig,
    variant: GanVariant,
    data: &Path,
    out: &Path,
    frozen: Option<&Path>,
) -> Result<()> {
    let ds = load_dataset(data)?;
    let hash = cfg.config_hash();
    let gan_cfg = GanTrainConfig {
        variant,
        ..cfg.training.gan.clone()
    };
    let seed = gan_cfg.seed;
    let seed_s = seed.to_string();
    let classes = ds.class_table().clone();
    match variant {
        GanVariant::DcGan => {
            for c in 0..classes.len() {
                let outcome = run_gan(&ds.restrict_to_class(c)?, &cfg.network, &gan_cfg, None, None)?;
                let ck = stamp_checkpoint(outcome.generator_checkpoint(&classes), &hash, seed);
                let stem = format!("generator_dcgan_class{c}");
                write_artifact(out, &format!("{stem}.sisgck"), &encode_checkpoint(&ck), "checkpoint", &hash, &seed_s)?;
                write_artifact(out, &format!("{stem}_loss.csv"), loss_log_csv(&outcome.log).as_bytes(), "loss_log", &hash, &seed_s)?;
                println!("{}", out.join(format!("{stem}.sisgck")).display());
            }
        }
        GanVariant::AcGan | GanVariant::SisGan => {
            let subject = frozen.map(load_checkpoint).transpose()?;
            let subject = subject.as_ref().map(TrainedClassifier::from_checkpoint).transpose()?;
            let frozen_store = match &subject {
                Some(s) if s.role != ClassifierRole::Subject => {
                    return Err(Error::Config("--frozen-subject must be a subject classifier checkpoint".into()))
                }
                Some(s) => Some(s.store.clone().freeze()),
                None => None,
            };
            let net = match (&subject, &frozen_store) {
                (Some(s), Some(store)) => Some(FrozenSubjectNet {
                    net: &s.net,
                    store,
                    roster: &s.roster,
                }),
                _ => None,
            };
            let outcome = run_gan(&ds, &cfg.network, &gan_cfg, net, None)?;
            let ck = stamp_checkpoint(outcome.generator_checkpoint(&classes), &hash, seed);
            let stem = format!("generator_{}", variant.name());
            write_artifact(out, &format!("{stem}.sisgck"), &encode_checkpoint(&ck), "checkpoint", &hash, &seed_s)?;
            write_artifact(out, &format!("{stem}_loss.csv"), loss_log_csv(&outcome.log).as_bytes(), "loss_log", &hash, &seed_s)?;
            println!("{}", out.join(format!("{stem}.sisgck")).display());
        }
    }
    Ok(())
}

pub fn train_classifier(cfg: &ExperimentConfig, role: ClassifierRole, data: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let hash = cfg.config_hash();
    let clf_cfg: &ClassifierTrainConfig = match role {
        ClassifierRole::Ssvep => &cfg.training.ssvep_classifier,
        ClassifierRole::Subject => &cfg.training.subject_classifier,
    };
    let clf = sisgan::train::train_classifier(&ds, None, role, &cfg.network, clf_cfg)?;
    let ck = stamp_checkpoint(clf.checkpoint(), &hash, clf_cfg.seed);
    let stem = format!("{}_classifier", role.name());
    let seed_s = clf_cfg.seed.to_string();
    write_artifact(out, &format!("{stem}.sisgck"), &encode_checkpoint(&ck), "checkpoint", &hash, &seed_s)?;
    let mut curve = String::from("epoch,train_loss,train_accuracy\n");
    for c in &clf.curves {
        curve.push_str(&format!("{},{},{}\n", c.epoch, c.train_loss, c.train_accuracy));
    }
    write_artifact(out, &format!("{stem}_curve.csv"), curve.as_bytes(), "loss_log", &hash, &seed_s)?;
    println!("{}", out.join(format!("{stem}.sisgck")).display());
    Ok(())
}

pub fn generate(checkpoints: &[std::path::PathBuf], n_per_class: usize, seed: u64, out: &Path) -> Result<()> {
    let cks = checkpoints.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>>>()?;
    let first = &cks[0];
    let bad = |e: serde_json::Error| Error::InvariantViolation(format!("checkpoint metadata: {e}"));
    let freqs: Vec<f64> = serde_json::from_str(first.require("class_freqs")?).map_err(bad)?;
    let classes = SsvepClassTable::new(freqs)?;
    let fs: f64 = first
        .require("sample_rate_hz")?
        .parse()
        .map_err(|_| Error::InvariantViolation("sample_rate_hz is not a number".into()))?;
    let hash = first.meta.get("config_hash").cloned().unwrap_or_default();
    for ck in &cks[1..] {
        if ck.meta.get("class_freqs") != first.meta.get("class_freqs") || ck.meta.get("sample_rate_hz") != first.meta.get("sample_rate_hz") {
            return Err(Error::ShapeMismatch("generator checkpoints disagree on class table or sample rate".into()));
        }
    }
    let bundle = GeneratorBundle::from_checkpoints(&cks, classes.len())?;
    let ds = stamp_dataset(generate_synthetic(&bundle, n_per_class, &classes, fs, seed)?, &hash, seed);
    let (dir, name) = file_name(out)?;
    write_artifact(dir, &name, &encode_dataset(&ds), "dataset", &hash, &seed.to_string())?;
    println!("{}: {} generated trials", out.display(), ds.len());
    Ok(())
}

pub fn eval(cfg: &ExperimentConfig, protocol: Protocol, offline: &Path, online: &Path, out: &Path) -> Result<()> {
    let hash = cfg.config_hash();
    let settings = cfg.protocol_settings();
    let off = load_dataset(offline)?;
    let seed_s = settings.base_seed.to_string();
    let stem = protocol.name().replace('-', "_");
    let (json, csv) = match protocol {
        Protocol::SubjectBiometric => {
            let mut r = subject_biometric_eval(
                &off,
                cfg.evaluation.biometric_folds,
                &cfg.network,
                &cfg.training.subject_classifier,
                settings.base_seed,
            )?;
            r.config_hash = hash.clone();
            println!("subject identification: {:.4} +- {:.4}", r.mean, r.std);
            (r.to_json(), r.to_csv())
        }
        _ => {
            let report = match protocol {
                Protocol::SingleSubject => run_single_subject_protocol(&off, &settings)?,
                Protocol::Loo => run_leave_one_out_protocol(&off, &settings)?,
                _ => run_cross_task_protocol(&off, &load_dataset(online)?, &settings)?,
            };
            for s in &report.summary {
                println!("{:<24} {:.4} +- {:.4}", s.regime.to_string(), s.mean, s.std);
            }
            for a in &report.audits {
                println!("audit {}: {}", a.name, if a.passed { "pass" } else { "FAIL" });
            }
            (report.to_json(), report.to_csv())
        }
    };
    write_artifact(out, &format!("{stem}.json"), json.as_bytes(), "report", &hash, &seed_s)?;
    write_artifact(out, &format!("{stem}.csv"), csv.as_bytes(), "report", &hash, &seed_s)?;
    println!("{}", out.join(format!("{stem}.json")).display());
    Ok(())
}

pub fn probe(data: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let ck = load_checkpoint(checkpoint)?;
    let clf = TrainedClassifier::from_checkpoint(&ck)?;
    let r = probe_subject_softmax(&ds, &clf)?;
    let hash = ck.meta.get("config_hash").cloned().unwrap_or_default();
    let seed = ds.meta.get("seed").cloned().unwrap_or_default();
    let (dir, name) = file_name(out)?;
    write_artifact(dir, &name, r.to_csv().as_bytes(), "report", &hash, &seed)?;
    println!("mean max softmax {:.4} over {} trials", r.mean_max_softmax, r.n_trials);
    Ok(())
}

pub fn fft_report(cfg: &ExperimentConfig, real: &Path, generated: &Path, out: &Path) -> Result<()> {
    let r = fft_validation_report(&load_dataset(real)?, &load_dataset(generated)?, cfg.evaluation.peak_band_hz)?;
    let hash = cfg.config_hash();
    write_artifact(out, "fft_spectra.csv", r.spectra_csv().as_bytes(), "report", &hash, "")?;
    write_artifact(out, "fft_peaks.csv", r.peaks_csv().as_bytes(), "report", &hash, "")?;
    for c in &r.classes {
        println!(
            "class {} ({} Hz): real peak {} Hz, synthetic peak {} Hz, synthetic hit rate {:.3}",
            c.class, c.frequency_hz, c.real.peak_hz, c.synthetic.peak_hz, c.synthetic.trial_hit_rate
        );
    }
    Ok(())
}

/// Embedded `config_hash` of a dataset or checkpoint file, if it has one.
fn embedded_hash(bytes: &[u8]) -> Option<Option<String>> {
    if let Ok(ds) = decode_dataset(bytes) {
        return Some(ds.meta.get("config_hash").cloned());
    }
    if let Ok(ck) = decode_checkpoint(bytes) {
        return Some(ck.meta.get("config_hash").cloned());
    }
    None
}

pub fn verify(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let m = manifest::load(dir)?;
    if m.is_empty() {
        return Err(Error::InvariantViolation(format!("no manifest entries in {}", dir.display())));
    }
    let hash = cfg.config_hash();
    let mut failures = 0;
    for (name, entry) in &m {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut problems = Vec::new();
        if manifest::sha256_hex(&bytes) != entry.sha256 {
            problems.push("content hash differs from manifest".to_string());
        }
        if entry.config_hash != hash {
            problems.push(format!("produced by config {}, current config is {hash}", entry.config_hash));
        }
        if entry.kind == "dataset" || entry.kind == "checkpoint" {
            match embedded_hash(&bytes) {
                Some(Some(h)) if h == entry.config_hash => {}
                Some(Some(h)) => problems.push(format!("embedded config hash {h} differs from manifest")),
                Some(None) => problems.push("no embedded config hash".into()),
                None => problems.push("not a readable dataset or checkpoint".into()),
            }
        }
        if problems.is_empty() {
            println!("ok   {name}");
        } else {
            failures += 1;
            println!("FAIL {name}: {}", problems.join("; "));
        }
    }
    if failures > 0 {
        return Err(Error::InvariantViolation(format!("{failures} artifact(s) failed verification")));
    }
    Ok(())
}
