//! DC-GAN, AC-GAN and SIS-GAN training. All three share one loop; the
//! variant decides whether the generator is conditional, whether the
//! discriminator carries the auxiliary class head, and whether the frozen
//! subject network penalizes the generator.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState, OptimizerConfig};
use super::arch::NetworkConfig;
use super::losses::{bce_mean_grad, cross_entropy_grad, generator_total_loss, subject_invariance_grad, GanLossWeights, GanVariant};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::nn::{sample_latent, Act, Backbone, Generator, Head, Mat, Mode, ParameterStore};
use crate::signal::{Dataset, EegTrial, SubjectId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanTrainConfig {
    pub variant: GanVariant,
    pub epochs: usize,
    pub batch_size: usize,
    pub weights: GanLossWeights,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            variant: GanVariant::SisGan,
            epochs: 200,
            batch_size: 32,
            weights: GanLossWeights::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Config("GAN training needs epochs >= 1 and batch_size >= 2".into()));
        }
        self.weights.validate()?;
        self.optimizer.validate()
    }
}

/// The frozen subject-biometric network and the roster its outputs index.
#[derive(Clone, Copy)]
pub struct FrozenSubjectNet<'a> {
    pub net: &'a Backbone,
    pub store: &'a ParameterStore,
    pub roster: &'a [SubjectId],
}

/// One optimizer step of both networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub d_loss: f64,
    pub d_aux_real: f64,
    pub d_aux_fake: f64,
    pub g_adv: f64,
    pub g_aux: f64,
    /// Mean max-softmax of the batch under the subject network (SIS-GAN).
    pub g_subject: f64,
    pub g_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_total: f64,
    /// Mean of the per-step subject probe (SIS-GAN only).
    pub subject_probe: Option<f64>,
    /// Auxiliary-head accuracy on the monitor set, if one was supplied.
    pub monitor_aux_accuracy: Option<f64>,
}

pub struct GanOutcome {
    pub variant: GanVariant,
    pub generator: Generator,
    pub generator_store: ParameterStore,
    pub discriminator: Backbone,
    pub discriminator_store: ParameterStore,
    pub log: Vec<LossRecord>,
    pub epochs: Vec<EpochSummary>,
    /// Class the generator was trained on (DC-GAN).
    pub class: Option<usize>,
    pub sample_rate_hz: f64,
}

impl GanOutcome {
    /// Generator checkpoint carrying its spec, variant, class and the data's
    /// sample rate and class table.
    pub fn generator_checkpoint(&self, classes: &crate::signal::SsvepClassTable) -> Checkpoint {
        let mut ck = Checkpoint::new(self.generator_store.clone())
            .with_meta("kind", "generator")
            .with_meta("variant", self.variant.name())
            .with_meta("generator_spec", serde_json::to_string(self.generator.spec()).expect("spec serializes"))
            .with_meta("sample_rate_hz", self.sample_rate_hz.to_string())
            .with_meta("class_freqs", serde_json::to_string(classes.frequencies_hz()).expect("freqs serialize"));
        if let Some(c) = self.class {
            ck = ck.with_meta("class", c.to_string());
        }
        ck
    }
}

/// CSV text of a loss log with a header row.
pub fn loss_log_csv(log: &[LossRecord]) -> String {
    let mut out = String::from("epoch,step,d_loss,d_aux_real,d_aux_fake,g_adv,g_aux,g_subject,g_total\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.epoch, r.step, r.d_loss, r.d_aux_real, r.d_aux_fake, r.g_adv, r.g_aux, r.g_subject, r.g_total
        ));
    }
    out
}

pub fn train_dcgan(data: &Dataset, arch: &NetworkConfig, cfg: &GanTrainConfig) -> Result<GanOutcome> {
    let cfg = GanTrainConfig {
        variant: GanVariant::DcGan,
        ..cfg.clone()
    };
    train_gan(data, arch, &cfg, None, None)
}

pub fn train_acgan(data: &Dataset, arch: &NetworkConfig, cfg: &GanTrainConfig) -> Result<GanOutcome> {
    let cfg = GanTrainConfig {
        variant: GanVariant::AcGan,
        ..cfg.clone()
    };
    train_gan(data, arch, &cfg, None, None)
}

pub fn train_sisgan(data: &Dataset, subject: FrozenSubjectNet<'_>, arch: &NetworkConfig, cfg: &GanTrainConfig) -> Result<GanOutcome> {
    let cfg = GanTrainConfig {
        variant: GanVariant::SisGan,
        ..cfg.clone()
    };
    train_gan(data, arch, &cfg, Some(subject), None)
}

fn check_subject_net(data: &Dataset, s: &FrozenSubjectNet<'_>) -> Result<()> {
    if !s.store.is_frozen() {
        return Err(Error::InvariantViolation("subject network store must be frozen".into()));
    }
    let n = match s.net.spec().head {
        Head::SubjectClassifier { n_subjects } => n_subjects,
        other => return Err(Error::InvalidSpec(format!("subject network has head {other:?}"))),
    };
    let mut a = s.roster.to_vec();
    let mut b = data.subject_roster().to_vec();
    a.sort_unstable();
    b.sort_unstable();
    if n != b.len() || a != b {
        return Err(Error::RosterMismatch(format!(
            "subject network covers {n} subjects {:?}, training data has {:?}",
            s.roster,
            data.subject_roster()
        )));
    }
    s.net.check_store(s.store)
}

/// Single-class check for DC-GAN; returns that class.
fn single_class(data: &Dataset) -> Result<Option<usize>> {
    let first = data.trials()[0].class_label;
    if data.trials().iter().any(|t| t.class_label != first) {
        return Err(Error::InvariantViolation("DC-GAN trains on a single class at a time".into()));
    }
    Ok(first)
}

fn labels_of(data: &Dataset) -> Result<Vec<usize>> {
    data.trials()
        .iter()
        .enumerate()
        .map(|(i, t)| t.class_label.ok_or_else(|| Error::MissingLabels(format!("trial {i} has no class label"))))
        .collect()
}

fn adv_grad(logits: &Mat, col0: &[f64]) -> Mat {
    let mut d = Mat::zeros(logits.rows, logits.cols);
    for (r, g) in col0.iter().enumerate() {
        d.row_mut(r)[0] = *g;
    }
    d
}

fn stack_rows(a: &Mat, b: &Mat) -> Mat {
    let mut data = a.data.clone();
    data.extend_from_slice(&b.data);
    Mat::from_rows(a.rows + b.rows, a.cols, data)
}

fn add_aux_grad(d: &mut Mat, g: &Mat, scale: f64) {
    for r in 0..d.rows {
        let row = d.row_mut(r);
        for (k, v) in g.row(r).iter().enumerate() {
            row[1 + k] += scale * v;
        }
    }
}

/// Shared loop. `monitor` (labeled real data) adds a per-epoch auxiliary
/// accuracy to the summaries; it does not affect training.
pub fn train_gan(
    data: &Dataset,
    arch: &NetworkConfig,
    cfg: &GanTrainConfig,
    subject: Option<FrozenSubjectNet<'_>>,
    monitor: Option<&Dataset>,
) -> Result<GanOutcome> {
    cfg.validate()?;
    let (channels, steps, rate) = data.shape().ok_or(Error::EmptyInput)?;
    let k = data.class_table().len();
    let variant = cfg.variant;
    let aux = variant.conditional();
    let class = if aux {
        labels_of(data)?;
        None
    } else {
        single_class(data)?
    };
    let subject = match (variant, subject) {
        (GanVariant::SisGan, Some(s)) => {
            check_subject_net(data, &s)?;
            Some(s)
        }
        (GanVariant::SisGan, None) => return Err(Error::Config("SIS-GAN needs a frozen subject network".into())),
        _ => None,
    };
    let head = if aux { Head::AuxDiscriminator { n_classes: k } } else { Head::Discriminator };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (gen, mut gs) = Generator::build(arch.generator(channels, steps, k, aux), rng.next_u64())?;
    let (disc, mut ds) = Backbone::build(arch.backbone(channels, steps, head), rng.next_u64())?;
    let mut g_adam = AdamState::new(&gs);
    let mut d_adam = AdamState::new(&ds);
    let (w, opt) = (cfg.weights, cfg.optimizer);
    let real_labels_all: Vec<usize> = data.trials().iter().map(|t| t.class_label.unwrap_or(0)).collect();

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::new();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let first_step = log.len();
        for chunk in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let n = chunk.len();
            let trials: Vec<&EegTrial> = chunk.iter().map(|&i| &data.trials()[i]).collect();
            let real = Act::from_trials(&trials);
            let real_labels: Vec<usize> = chunk.iter().map(|&i| real_labels_all[i]).collect();
            let z = sample_latent(n, arch.latent_dim, &mut rng);
            let fake_labels: Option<Vec<usize>> = aux.then(|| (0..n).map(|_| rng.random_range(0..k)).collect());
            let g_pass = gen.forward(&gs, &z, fake_labels.as_deref(), &mut Mode::Train(&mut rng))?;
            gen.commit(&mut gs, &g_pass)?;

            // Real and fake share one discriminator batch, so batch norm
            // cannot normalize away a feature common to every fake trial.
            let mixed = Act::concat_batch(&real, &g_pass.output);

            // discriminator step
            let pd = disc.forward(&ds, &mixed, &mut Mode::Train(&mut rng))?;
            let (lr_, lf) = (pd.logits.rows_range(0, n), pd.logits.rows_range(n, 2 * n));
            let (l_real, gr) = bce_mean_grad(&lr_.col(0), 1.0);
            let (l_fake, gf) = bce_mean_grad(&lf.col(0), 0.0);
            let mut dlr = adv_grad(&lr_, &gr);
            let mut dlf = adv_grad(&lf, &gf);
            let (mut d_aux_real, mut d_aux_fake) = (0.0, 0.0);
            if let Some(fl) = &fake_labels {
                let (l, g) = cross_entropy_grad(&lr_.cols_range(1, 1 + k), &real_labels)?;
                add_aux_grad(&mut dlr, &g, w.lambda_a);
                d_aux_real = l;
                let (l, g) = cross_entropy_grad(&lf.cols_range(1, 1 + k), fl)?;
                add_aux_grad(&mut dlf, &g, w.lambda_a);
                d_aux_fake = l;
            }
            let d_loss = l_real + l_fake + if aux { w.lambda_a * (d_aux_real + d_aux_fake) } else { 0.0 };
            let (d_grads, _) = disc.backward(&ds, &pd, &stack_rows(&dlr, &dlf));
            adam_step(&mut ds, &d_grads, &mut d_adam, &opt)?;
            disc.commit(&mut ds, &pd)?;

            // generator step through the updated discriminator
            let pg = disc.forward(&ds, &mixed, &mut Mode::Train(&mut rng))?;
            let lg = pg.logits.rows_range(n, 2 * n);
            let (g_adv, ga) = bce_mean_grad(&lg.col(0), 1.0);
            let mut dl = adv_grad(&lg, &ga);
            let mut g_aux = 0.0;
            if let Some(fl) = &fake_labels {
                let (l, g) = cross_entropy_grad(&lg.cols_range(1, 1 + k), fl)?;
                add_aux_grad(&mut dl, &g, w.lambda_a);
                g_aux = l;
            }
            let (_, dx_mixed) = disc.backward(&ds, &pg, &stack_rows(&Mat::zeros(n, lg.cols), &dl));
            let mut dx = dx_mixed.batch_range(n, 2 * n);
            let mut g_subject = 0.0;
            if let Some(s) = &subject {
                let ps = s.net.forward(s.store, &g_pass.output, &mut Mode::Eval)?;
                let (l, mut g) = subject_invariance_grad(&ps.logits);
                for v in &mut g.data {
                    *v *= w.lambda_s;
                }
                let (_, dxs) = s.net.backward(s.store, &ps, &g);
                for (a, b) in dx.data.iter_mut().zip(&dxs.data) {
                    *a += b;
                }
                g_subject = l;
            }
            let g_grads = gen.backward(&gs, &g_pass, dx);
            adam_step(&mut gs, &g_grads, &mut g_adam, &opt)?;

            log.push(LossRecord {
                epoch,
                step,
                d_loss,
                d_aux_real,
                d_aux_fake,
                g_adv,
                g_aux,
                g_subject,
                g_total: generator_total_loss(g_adv, g_aux, g_subject, &w, variant),
            });
            step += 1;
        }
        let recs = &log[first_step..];
        let mean = |f: fn(&LossRecord) -> f64| recs.iter().map(f).sum::<f64>() / recs.len().max(1) as f64;
        let monitor_aux_accuracy = match (monitor, aux) {
            (Some(m), true) => Some(aux_accuracy(&disc, &ds, m)?),
            _ => None,
        };
        epochs.push(EpochSummary {
            epoch,
            d_loss: mean(|r| r.d_loss),
            g_total: mean(|r| r.g_total),
            subject_probe: subject.is_some().then(|| mean(|r| r.g_subject)),
            monitor_aux_accuracy,
        });
    }
    Ok(GanOutcome {
        variant,
        generator: gen,
        generator_store: gs,
        discriminator: disc,
        discriminator_store: ds,
        log,
        epochs,
        class,
        sample_rate_hz: rate,
    })
}

/// Accuracy of the auxiliary class head on labeled data, evaluation mode.
pub fn aux_accuracy(disc: &Backbone, store: &ParameterStore, data: &Dataset) -> Result<f64> {
    let k = match disc.spec().head {
        Head::AuxDiscriminator { n_classes } => n_classes,
        other => return Err(Error::InvalidSpec(format!("no auxiliary head on {other:?}"))),
    };
    let labels = labels_of(data)?;
    let logits = super::classifier::eval_logits(disc, store, data)?;
    let correct = (0..logits.rows)
        .filter(|&r| super::classifier::argmax(&logits.row(r)[1..1 + k]) == labels[r])
        .count();
    Ok(correct as f64 / logits.rows.max(1) as f64)
}
