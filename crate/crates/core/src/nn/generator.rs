//! Five-layer fractionally-strided generator. The latent vector (with a
//! one-hot class code appended when conditional) enters as a length-1
//! sequence; layer 1 expands it to `time_steps / 16` steps and the remaining
//! four layers double the length, so the output is exactly `time_steps` long.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layout::{Init, Layout, LayoutBuilder};
use super::ops::{backward_ops, commit_running_stats, forward_ops, Mode, Op, Trace};
use super::store::{Gradients, ParameterStore, TensorKind};
use super::tensor::{Act, ConvGeom, Mat};
use crate::error::{Error, Result};

pub const GENERATOR_LAYERS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    pub conditional: bool,
    pub n_classes: usize,
    /// Output widths of the five layers; the last one is the channel count.
    pub widths: Vec<usize>,
    pub time_steps: usize,
}

impl GeneratorSpec {
    /// Latent 128, widths `[256, 128, 64, 32, channels]`.
    pub fn new(channels: usize, time_steps: usize, n_classes: usize, conditional: bool) -> Self {
        Self {
            latent_dim: 128,
            conditional,
            n_classes,
            widths: vec![256, 128, 64, 32, channels],
            time_steps,
        }
    }

    pub fn channels(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    pub fn input_width(&self) -> usize {
        self.latent_dim + if self.conditional { self.n_classes } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != GENERATOR_LAYERS || self.widths.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "generator needs {GENERATOR_LAYERS} positive widths, got {:?}",
                self.widths
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidSpec("latent dimension must be positive".into()));
        }
        if self.conditional && self.n_classes == 0 {
            return Err(Error::InvalidSpec("conditional generator needs classes".into()));
        }
        if self.time_steps < 16 || self.time_steps % 16 != 0 {
            return Err(Error::InvalidSpec(format!(
                "time steps {} must be a positive multiple of 16",
                self.time_steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    ops: Vec<Op>,
    layout: Layout,
}

pub struct GeneratorPass {
    /// `[channels][n][time_steps]`.
    pub output: Act,
    trace: Trace,
}

/// `n × latent_dim` i.i.d. standard normal draws.
pub fn sample_latent(n: usize, latent_dim: usize, rng: &mut ChaCha8Rng) -> Mat {
    let data = (0..n * latent_dim).map(|_| StandardNormal.sample(rng)).collect();
    Mat::from_rows(n, latent_dim, data)
}

impl Generator {
    pub fn new(spec: GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let mut lb = LayoutBuilder::default();
        let mut ops = Vec::new();
        let mut in_ch = spec.input_width();
        let mut len = 1;
        for (i, &width) in spec.widths.iter().enumerate() {
            let (k, s, p) = if i == 0 { (spec.time_steps / 16, 1, 0) } else { (4, 2, 1) };
            let geom = ConvGeom::transposed(k, s, p, len).expect("validated schedule");
            let last = i + 1 == GENERATOR_LAYERS;
            let w = lb.add(
                format!("layer{i}.convt.weight"),
                TensorKind::Param,
                vec![in_ch, width, k],
                Init::KaimingUniform {
                    fan_in: in_ch * k.div_ceil(s).min(len),
                    a: if last { 1.0 } else { 0.25 },
                },
            );
            let bias = last.then(|| lb.add(format!("layer{i}.convt.bias"), TensorKind::Param, vec![width], Init::Const(0.0)));
            ops.push(Op::ConvT { w, bias, in_ch, out_ch: width, geom });
            if !last {
                ops.push(Op::BatchNorm {
                    gamma: lb.add(format!("layer{i}.bn.weight"), TensorKind::Param, vec![width], Init::Const(1.0)),
                    beta: lb.add(format!("layer{i}.bn.bias"), TensorKind::Param, vec![width], Init::Const(0.0)),
                    running_mean: lb.add(format!("layer{i}.bn.running_mean"), TensorKind::Buffer, vec![width], Init::Const(0.0)),
                    running_var: lb.add(format!("layer{i}.bn.running_var"), TensorKind::Buffer, vec![width], Init::Const(1.0)),
                });
                ops.push(Op::PRelu {
                    slope: lb.add(format!("layer{i}.prelu.weight"), TensorKind::Param, vec![width], Init::Const(0.25)),
                });
            }
            in_ch = width;
            len = geom.long_len;
        }
        debug_assert_eq!(len, spec.time_steps);
        Ok(Self {
            spec,
            ops,
            layout: lb.finish(),
        })
    }

    pub fn build(spec: GeneratorSpec, seed: u64) -> Result<(Self, ParameterStore)> {
        let g = Self::new(spec)?;
        let store = g.init(seed);
        Ok((g, store))
    }

    pub fn init(&self, seed: u64) -> ParameterStore {
        self.layout.init(seed)
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn check_store(&self, store: &ParameterStore) -> Result<()> {
        self.init(0).check_compatible(store)
    }

    /// Generator input: `z` with a one-hot class code appended when
    /// conditional, as a `[width][n][1]` activation.
    pub fn input(&self, z: &Mat, labels: Option<&[usize]>) -> Result<Act> {
        if z.cols != self.spec.latent_dim || z.rows == 0 {
            return Err(Error::ShapeMismatch(format!(
                "latent batch is {}x{}, generator expects n x {}",
                z.rows, z.cols, self.spec.latent_dim
            )));
        }
        let n = z.rows;
        let width = self.spec.input_width();
        let mut x = Act::zeros(width, n, 1);
        for r in 0..n {
            for (j, v) in z.row(r).iter().enumerate() {
                x.data[j * n + r] = *v;
            }
        }
        if self.spec.conditional {
            let labels = labels.ok_or_else(|| Error::MissingLabels("conditional generator needs labels".into()))?;
            if labels.len() != n {
                return Err(Error::ShapeMismatch(format!("{} labels for {n} latents", labels.len())));
            }
            for (r, &y) in labels.iter().enumerate() {
                if y >= self.spec.n_classes {
                    return Err(Error::LabelOutOfRange { label: y, n_classes: self.spec.n_classes });
                }
                x.data[(self.spec.latent_dim + y) * n + r] = 1.0;
            }
        }
        Ok(x)
    }

    pub fn forward(&self, store: &ParameterStore, z: &Mat, labels: Option<&[usize]>, mode: &mut Mode<'_>) -> Result<GeneratorPass> {
        let x = self.input(z, labels)?;
        let (output, trace) = forward_ops(&self.ops, store, x, mode);
        Ok(GeneratorPass { output, trace })
    }

    pub fn backward(&self, store: &ParameterStore, pass: &GeneratorPass, doutput: Act) -> Gradients {
        let mut grads = Gradients::zeros_like(store);
        backward_ops(&self.ops, store, &pass.trace, doutput, &mut grads);
        grads
    }

    pub fn commit(&self, store: &mut ParameterStore, pass: &GeneratorPass) -> Result<()> {
        commit_running_stats(store, &pass.trace.bn_updates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn default_shapes() {
        let spec = GeneratorSpec::new(8, 1024, 3, true);
        assert_eq!(spec.input_width(), 131);
        let (g, store) = Generator::build(spec, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = sample_latent(2, 128, &mut rng);
        let out = g.forward(&store, &z, Some(&[0, 2]), &mut Mode::Eval).unwrap();
        assert_eq!((out.output.c, out.output.n, out.output.l), (8, 2, 1024));
        assert!(out.output.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn unconditional_ignores_labels_and_validates() {
        let spec = GeneratorSpec::new(2, 32, 3, false);
        assert_eq!(spec.input_width(), 128);
        let g = Generator::new(spec).unwrap();
        assert!(g.input(&Mat::zeros(1, 127), None).is_err());
        assert!(Generator::new(GeneratorSpec::new(2, 40, 3, false)).is_err());
        let cond = Generator::new(GeneratorSpec::new(2, 32, 3, true)).unwrap();
        assert!(matches!(cond.input(&Mat::zeros(1, 128), Some(&[3])), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn latent_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = sample_latent(100_000, 2, &mut rng);
        for c in 0..2 {
            let col = z.col(c);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((0.97..=1.03).contains(&var), "var {var}");
        }
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sample_latent(3, 4, &mut a), sample_latent(3, 4, &mut b));
    }
}
