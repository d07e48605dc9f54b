use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::store::{ParameterStore, Tensor, TensorKind};

/// Deterministic initializer for one tensor.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    /// He/Kaiming uniform for a leaky-ReLU-family activation with negative
    /// slope `a`: bound = sqrt(6 / ((1 + a²) · fan_in)).
    KaimingUniform { fan_in: usize, a: f64 },
    Uniform { bound: f64 },
    Const(f64),
}

/// Records tensor shapes and initializers in creation order so that a
/// network's layout and its seeded initialization stay in lockstep.
#[derive(Default)]
pub(crate) struct LayoutBuilder {
    entries: Vec<(String, TensorKind, Vec<usize>, Init)>,
}

impl LayoutBuilder {
    pub fn add(&mut self, name: impl Into<String>, kind: TensorKind, shape: Vec<usize>, init: Init) -> usize {
        self.entries.push((name.into(), kind, shape, init));
        self.entries.len() - 1
    }

    pub fn finish(self) -> Layout {
        Layout { entries: self.entries }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    entries: Vec<(String, TensorKind, Vec<usize>, Init)>,
}

impl Layout {
    pub fn init(&self, seed: u64) -> ParameterStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        for (name, kind, shape, init) in &self.entries {
            let n: usize = shape.iter().product();
            let data = match *init {
                Init::KaimingUniform { fan_in, a } => {
                    let bound = (6.0 / ((1.0 + a * a) * fan_in.max(1) as f64)).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
                Init::Uniform { bound } => (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
                Init::Const(v) => vec![v; n],
            };
            store.push(name.clone(), *kind, Tensor::new(shape.clone(), data));
        }
        store
    }
}
