//! Supervised training of SSVEP and subject classifiers.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState, OptimizerConfig};
use super::arch::NetworkConfig;
use super::losses::cross_entropy_grad;
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::nn::{Act, Backbone, Head, Mat, Mode, ParameterStore};
use crate::signal::{Dataset, EegTrial, SubjectId};

const EVAL_BATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierRole {
    Ssvep,
    Subject,
}

impl ClassifierRole {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierRole::Ssvep => "ssvep",
            ClassifierRole::Subject => "subject",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Config("classifier training needs epochs >= 1 and batch_size >= 2".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochCurve {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub struct TrainedClassifier {
    pub role: ClassifierRole,
    pub net: Backbone,
    pub store: ParameterStore,
    /// Subject ids indexed by the subject head's outputs (subject role).
    pub roster: Vec<SubjectId>,
    pub curves: Vec<EpochCurve>,
}

impl TrainedClassifier {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.store.clone())
            .with_meta("kind", "classifier")
            .with_meta("role", self.role.name())
            .with_meta("backbone_spec", serde_json::to_string(self.net.spec()).expect("spec serializes"))
            .with_meta("roster", serde_json::to_string(&self.roster).expect("roster serializes"))
    }

    /// Rebuilds a classifier from a checkpoint written by [`Self::checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::InvariantViolation(format!("checkpoint metadata: {e}"));
        let role = match ck.require("role")? {
            "ssvep" => ClassifierRole::Ssvep,
            "subject" => ClassifierRole::Subject,
            r => return Err(Error::InvariantViolation(format!("unknown classifier role {r:?}"))),
        };
        let spec = serde_json::from_str(ck.require("backbone_spec")?).map_err(bad)?;
        let roster = serde_json::from_str(ck.require("roster")?).map_err(bad)?;
        let net = Backbone::new(spec)?;
        net.check_store(&ck.store)?;
        Ok(Self {
            role,
            net,
            store: ck.store.clone(),
            roster,
            curves: Vec::new(),
        })
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<usize>> {
        predict(&self.net, &self.store, data)
    }

    /// Labels of `data` in this classifier's output indexing.
    pub fn targets(&self, data: &Dataset) -> Result<Vec<usize>> {
        targets(data, self.role, &self.roster)
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        Ok(accuracy(&self.predict(data)?, &self.targets(data)?))
    }
}

/// Class labels (SSVEP role) or roster positions (subject role).
pub fn targets(data: &Dataset, role: ClassifierRole, roster: &[SubjectId]) -> Result<Vec<usize>> {
    data.trials()
        .iter()
        .enumerate()
        .map(|(i, t)| match role {
            ClassifierRole::Ssvep => t
                .class_label
                .ok_or_else(|| Error::MissingLabels(format!("trial {i} has no class label"))),
            ClassifierRole::Subject => roster.iter().position(|&s| s == t.subject).ok_or(Error::UnknownSubject(t.subject)),
        })
        .collect()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

/// Evaluation-mode logits for every trial of `data`, batched.
pub fn eval_logits(net: &Backbone, store: &ParameterStore, data: &Dataset) -> Result<Mat> {
    let outputs = net.spec().head.outputs();
    let mut all = Vec::with_capacity(data.len() * outputs);
    for chunk in data.trials().chunks(EVAL_BATCH) {
        let refs: Vec<&EegTrial> = chunk.iter().collect();
        all.extend(net.forward_trials(store, &refs, &mut Mode::Eval)?.data);
    }
    Ok(Mat::from_rows(data.len(), outputs, all))
}

pub fn predict(net: &Backbone, store: &ParameterStore, data: &Dataset) -> Result<Vec<usize>> {
    let logits = eval_logits(net, store, data)?;
    Ok((0..logits.rows).map(|r| argmax(logits.row(r))).collect())
}

fn mean_loss(net: &Backbone, store: &ParameterStore, data: &Dataset, y: &[usize]) -> Result<f64> {
    Ok(cross_entropy_grad(&eval_logits(net, store, data)?, y)?.0)
}

/// Cross-entropy training with Adam. The subject role uses `train`'s roster
/// as the output indexing; `val` subjects must belong to it.
pub fn train_classifier(
    train: &Dataset,
    val: Option<&Dataset>,
    role: ClassifierRole,
    arch: &NetworkConfig,
    cfg: &ClassifierTrainConfig,
) -> Result<TrainedClassifier> {
    cfg.validate()?;
    let (channels, steps, _) = train.shape().ok_or(Error::EmptyInput)?;
    let roster = train.subject_roster().to_vec();
    let y = targets(train, role, &roster)?;
    let val_y = val.map(|v| targets(v, role, &roster)).transpose()?;
    let head = match role {
        ClassifierRole::Ssvep => Head::SsvepClassifier {
            n_classes: train.class_table().len(),
        },
        ClassifierRole::Subject => Head::SubjectClassifier { n_subjects: roster.len() },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (net, mut store) = Backbone::build(arch.backbone(channels, steps, head), rng.next_u64())?;
    let mut adam = AdamState::new(&store);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curves = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let trials: Vec<&EegTrial> = chunk.iter().map(|&i| &train.trials()[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let pass = net.forward(&store, &Act::from_trials(&trials), &mut Mode::Train(&mut rng))?;
            let (loss, g) = cross_entropy_grad(&pass.logits, &labels)?;
            correct += (0..labels.len()).filter(|&r| argmax(pass.logits.row(r)) == labels[r]).count();
            loss_sum += loss * labels.len() as f64;
            seen += labels.len();
            let (grads, _) = net.backward(&store, &pass, &g);
            adam_step(&mut store, &grads, &mut adam, &cfg.optimizer)?;
            net.commit(&mut store, &pass)?;
        }
        let (val_loss, val_accuracy) = match (val, &val_y) {
            (Some(v), Some(vy)) if !v.is_empty() => (
                Some(mean_loss(&net, &store, v, vy)?),
                Some(accuracy(&predict(&net, &store, v)?, vy)),
            ),
            _ => (None, None),
        };
        curves.push(EpochCurve {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            val_loss,
            val_accuracy,
        });
    }
    Ok(TrainedClassifier {
        role,
        net,
        store,
        roster,
        curves,
    })
}
