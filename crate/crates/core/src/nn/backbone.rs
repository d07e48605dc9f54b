//! Strided 1D-CNN shared by every discriminator and classifier:
//! `[conv → batch norm → PReLU → dropout] × blocks → linear head`, no pooling.

use serde::{Deserialize, Serialize};

use super::layout::{Init, Layout, LayoutBuilder};
use super::ops::{backward_ops, commit_running_stats, forward_ops, Linear, Mode, Op, Trace};
use super::store::{Gradients, ParameterStore, TensorKind};
use super::tensor::{Act, ConvGeom, Mat};
use crate::error::{Error, Result};
use crate::signal::EegTrial;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// One real/fake logit.
    Discriminator,
    /// Real/fake logit in column 0 followed by `n_classes` class logits.
    AuxDiscriminator { n_classes: usize },
    SsvepClassifier { n_classes: usize },
    SubjectClassifier { n_subjects: usize },
}

impl Head {
    pub fn outputs(&self) -> usize {
        match *self {
            Head::Discriminator => 1,
            Head::AuxDiscriminator { n_classes } => 1 + n_classes,
            Head::SsvepClassifier { n_classes } => n_classes,
            Head::SubjectClassifier { n_subjects } => n_subjects,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub in_channels: usize,
    pub time_steps: usize,
    pub widths: Vec<usize>,
    pub kernel_size: usize,
    pub strides: Vec<usize>,
    pub dropout_p: f64,
    pub head: Head,
}

impl BackboneSpec {
    /// Four blocks of widths `[16, 32, 64, 128]`, kernel 11, stride 2.
    pub fn new(in_channels: usize, time_steps: usize, head: Head) -> Self {
        Self {
            in_channels,
            time_steps,
            widths: vec![16, 32, 64, 128],
            kernel_size: 11,
            strides: vec![2, 2, 2, 2],
            dropout_p: 0.5,
            head,
        }
    }

    pub fn with_head(&self, head: Head) -> Self {
        Self { head, ..self.clone() }
    }

    /// Temporal length after each block.
    pub fn block_lengths(&self) -> Result<Vec<usize>> {
        let mut len = self.time_steps;
        let mut out = Vec::with_capacity(self.widths.len());
        for &s in &self.strides {
            let g = ConvGeom::conv(self.kernel_size, s, self.kernel_size / 2, len)
                .filter(|g| g.short_len >= 1)
                .ok_or_else(|| Error::InvalidSpec(format!("temporal length collapses below 1 after {} blocks", out.len() + 1)))?;
            len = g.short_len;
            out.push(len);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.time_steps < 2 {
            return Err(Error::InvalidSpec("need >= 1 input channel and >= 2 time steps".into()));
        }
        if self.widths.is_empty() || self.widths.len() != self.strides.len() {
            return Err(Error::InvalidSpec(format!(
                "{} widths for {} strides",
                self.widths.len(),
                self.strides.len()
            )));
        }
        if self.widths.contains(&0) || self.strides.contains(&0) {
            return Err(Error::InvalidSpec("widths and strides must be positive".into()));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::InvalidSpec(format!("kernel size {} must be odd", self.kernel_size)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidSpec(format!("dropout {} outside [0, 1)", self.dropout_p)));
        }
        if self.head.outputs() == 0 {
            return Err(Error::InvalidSpec("head has no outputs".into()));
        }
        self.block_lengths().map(|_| ())
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    spec: BackboneSpec,
    ops: Vec<Op>,
    head: Linear,
    layout: Layout,
}

/// Forward result with everything backward needs.
pub struct BackbonePass {
    pub logits: Mat,
    features: Act,
    trace: Trace,
}

impl Backbone {
    pub fn new(spec: BackboneSpec) -> Result<Self> {
        spec.validate()?;
        let mut lb = LayoutBuilder::default();
        let mut ops = Vec::new();
        let mut in_ch = spec.in_channels;
        let mut len = spec.time_steps;
        let k = spec.kernel_size;
        for (i, (&width, &stride)) in spec.widths.iter().zip(&spec.strides).enumerate() {
            let geom = ConvGeom::conv(k, stride, k / 2, len).expect("validated");
            let w = lb.add(
                format!("block{i}.conv.weight"),
                TensorKind::Param,
                vec![width, in_ch, k],
                Init::KaimingUniform { fan_in: in_ch * k, a: 0.25 },
            );
            ops.push(Op::Conv { w, in_ch, out_ch: width, geom });
            ops.push(Op::BatchNorm {
                gamma: lb.add(format!("block{i}.bn.weight"), TensorKind::Param, vec![width], Init::Const(1.0)),
                beta: lb.add(format!("block{i}.bn.bias"), TensorKind::Param, vec![width], Init::Const(0.0)),
                running_mean: lb.add(format!("block{i}.bn.running_mean"), TensorKind::Buffer, vec![width], Init::Const(0.0)),
                running_var: lb.add(format!("block{i}.bn.running_var"), TensorKind::Buffer, vec![width], Init::Const(1.0)),
            });
            ops.push(Op::PRelu {
                slope: lb.add(format!("block{i}.prelu.weight"), TensorKind::Param, vec![width], Init::Const(0.25)),
            });
            ops.push(Op::Dropout { p: spec.dropout_p });
            in_ch = width;
            len = geom.short_len;
        }
        let feat = in_ch * len;
        let out = spec.head.outputs();
        let head = Linear {
            w: lb.add("head.weight", TensorKind::Param, vec![out, feat], Init::Uniform { bound: 1.0 / (feat as f64).sqrt() }),
            b: lb.add("head.bias", TensorKind::Param, vec![out], Init::Const(0.0)),
            in_ch,
            in_len: len,
            out,
        };
        Ok(Self {
            spec,
            ops,
            head,
            layout: lb.finish(),
        })
    }

    /// Network plus its seeded initial parameters.
    pub fn build(spec: BackboneSpec, seed: u64) -> Result<(Self, ParameterStore)> {
        let net = Self::new(spec)?;
        let store = net.init(seed);
        Ok((net, store))
    }

    pub fn init(&self, seed: u64) -> ParameterStore {
        self.layout.init(seed)
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    /// Rejects stores that do not match this architecture, naming the first
    /// offending tensor.
    pub fn check_store(&self, store: &ParameterStore) -> Result<()> {
        self.init(0).check_compatible(store)
    }

    pub fn forward(&self, store: &ParameterStore, x: &Act, mode: &mut Mode<'_>) -> Result<BackbonePass> {
        if x.c != self.spec.in_channels || x.l != self.spec.time_steps || x.n == 0 {
            return Err(Error::ShapeMismatch(format!(
                "backbone expects [{} x {}] inputs, got {} samples of [{} x {}]",
                self.spec.in_channels, self.spec.time_steps, x.n, x.c, x.l
            )));
        }
        let (features, trace) = forward_ops(&self.ops, store, x.clone(), mode);
        let logits = self.head.forward(store, &features);
        Ok(BackbonePass { logits, features, trace })
    }

    /// Logits for a batch of trials.
    pub fn forward_trials(&self, store: &ParameterStore, trials: &[&EegTrial], mode: &mut Mode<'_>) -> Result<Mat> {
        Ok(self.forward(store, &Act::from_trials(trials), mode)?.logits)
    }

    /// Parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, store: &ParameterStore, pass: &BackbonePass, dlogits: &Mat) -> (Gradients, Act) {
        let mut grads = Gradients::zeros_like(store);
        let dfeat = self.head.backward(store, &pass.features, dlogits, &mut grads);
        let dx = backward_ops(&self.ops, store, &pass.trace, dfeat, &mut grads);
        (grads, dx)
    }

    /// Folds a train-mode pass's batch statistics into the running averages.
    pub fn commit(&self, store: &mut ParameterStore, pass: &BackbonePass) -> Result<()> {
        commit_running_stats(store, &pass.trace.bn_updates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_act(c: usize, n: usize, l: usize, seed: u64) -> Act {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Act {
            c,
            n,
            l,
            data: (0..c * n * l).map(|_| rng.random_range(-2.0..2.0)).collect(),
        }
    }

    #[test]
    fn default_geometry() {
        let spec = BackboneSpec::new(8, 1024, Head::SsvepClassifier { n_classes: 3 });
        assert_eq!(spec.block_lengths().unwrap(), vec![512, 256, 128, 64]);
        let (_, store) = Backbone::build(spec, 1).unwrap();
        assert!(store.parameter_count() < 2_000_000);
    }

    #[test]
    fn spec_validation() {
        // "same" padding keeps every block at length >= 1
        let mut spec = BackboneSpec::new(1, 4, Head::Discriminator);
        spec.widths = vec![2; 6];
        spec.strides = vec![4; 6];
        assert_eq!(spec.block_lengths().unwrap(), vec![1; 6]);
        assert!(Backbone::new(spec).is_ok());
        let mut even = BackboneSpec::new(1, 32, Head::Discriminator);
        even.kernel_size = 4;
        assert!(matches!(Backbone::new(even), Err(Error::InvalidSpec(_))));
        let mut ragged = BackboneSpec::new(1, 32, Head::Discriminator);
        ragged.strides.pop();
        assert!(matches!(Backbone::new(ragged), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn seeded_build_is_bit_identical() {
        let spec = BackboneSpec::new(2, 64, Head::Discriminator);
        let (_, a) = Backbone::build(spec.clone(), 9).unwrap();
        let (_, b) = Backbone::build(spec.clone(), 9).unwrap();
        let (_, c) = Backbone::build(spec, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn head_shapes() {
        let spec = BackboneSpec::new(8, 256, Head::AuxDiscriminator { n_classes: 3 });
        let (net, store) = Backbone::build(spec, 0).unwrap();
        let out = net.forward(&store, &random_act(8, 4, 256, 1), &mut Mode::Eval).unwrap();
        assert_eq!((out.logits.rows, out.logits.cols), (4, 4));
        let net = Backbone::new(net.spec().with_head(Head::SsvepClassifier { n_classes: 3 })).unwrap();
        let store = net.init(0);
        let out = net.forward(&store, &random_act(8, 4, 256, 1), &mut Mode::Eval).unwrap();
        assert_eq!((out.logits.rows, out.logits.cols), (4, 3));
        assert!(net.forward(&store, &random_act(7, 4, 256, 1), &mut Mode::Eval).is_err());
    }

    #[test]
    fn eval_deterministic_train_reproducible() {
        let spec = BackboneSpec::new(3, 128, Head::SubjectClassifier { n_subjects: 5 });
        let (net, store) = Backbone::build(spec, 3).unwrap();
        let x = random_act(3, 6, 128, 2);
        let a = net.forward(&store, &x, &mut Mode::Eval).unwrap().logits;
        let b = net.forward(&store, &x, &mut Mode::Eval).unwrap().logits;
        assert_eq!(a, b);
        assert!(a.data.iter().all(|v| v.is_finite()));
        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        let t1 = net.forward(&store, &x, &mut Mode::Train(&mut r1)).unwrap().logits;
        let t2 = net.forward(&store, &x, &mut Mode::Train(&mut r2)).unwrap().logits;
        assert_eq!(t1, t2);
        assert_ne!(t1, a);
    }

    #[test]
    fn frozen_store_refuses_running_stat_commit() {
        let spec = BackboneSpec::new(1, 32, Head::Discriminator);
        let (net, store) = Backbone::build(spec, 3).unwrap();
        let mut frozen = store.freeze();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = net.forward(&frozen, &random_act(1, 4, 32, 0), &mut Mode::Train(&mut rng)).unwrap();
        assert!(matches!(net.commit(&mut frozen, &pass), Err(Error::FrozenStore)));
    }
}
