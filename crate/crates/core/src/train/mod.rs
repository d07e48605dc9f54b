//! Losses, the Adam optimizer, GAN training loops, classifier training and
//! synthetic-data generation.

mod adam;
mod arch;
mod classifier;
mod gan;
mod losses;
mod synth;

pub use adam::{adam_step, AdamState, OptimizerConfig};
pub use arch::NetworkConfig;
pub use classifier::{
    accuracy, argmax, eval_logits, predict, targets, train_classifier, ClassifierRole, ClassifierTrainConfig, EpochCurve,
    TrainedClassifier,
};
pub use gan::{
    aux_accuracy, loss_log_csv, train_acgan, train_dcgan, train_gan, train_sisgan, EpochSummary, FrozenSubjectNet, GanOutcome,
    GanTrainConfig, LossRecord,
};
pub use losses::{
    adversarial_losses, bce_mean_grad, bce_with_logits, cross_entropy, cross_entropy_grad, generator_total_loss, softmax,
    subject_invariance_grad, subject_invariance_loss, AdversarialLosses, GanLossWeights, GanVariant,
};
pub use synth::{generate_synthetic, GeneratorBundle};
