//! Sampling labeled synthetic datasets from trained generators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::nn::{sample_latent, Generator, GeneratorSpec, Mode, ParameterStore};
use crate::signal::{Dataset, EegTrial, Provenance, SsvepClassTable, SYNTHETIC_SUBJECT};

const GEN_BATCH: usize = 64;

/// Either one conditional generator or one unconditional generator per class.
pub enum GeneratorBundle {
    Conditional { generator: Generator, store: ParameterStore },
    PerClass(Vec<Option<(Generator, ParameterStore)>>),
}

impl GeneratorBundle {
    /// Rebuilds a bundle from generator checkpoints: a single conditional one,
    /// or unconditional ones tagged with their class.
    pub fn from_checkpoints(cks: &[Checkpoint], n_classes: usize) -> Result<Self> {
        let load = |ck: &Checkpoint| -> Result<(Generator, ParameterStore)> {
            let spec: GeneratorSpec = serde_json::from_str(ck.require("generator_spec")?)
                .map_err(|e| Error::InvariantViolation(format!("generator_spec: {e}")))?;
            let g = Generator::new(spec)?;
            g.check_store(&ck.store)?;
            Ok((g, ck.store.clone()))
        };
        if let [ck] = cks {
            let (g, s) = load(ck)?;
            if g.spec().conditional {
                return Ok(Self::Conditional { generator: g, store: s });
            }
        }
        let mut per = (0..n_classes).map(|_| None).collect::<Vec<_>>();
        for ck in cks {
            let (g, s) = load(ck)?;
            if g.spec().conditional {
                return Err(Error::InvariantViolation("conditional generator mixed with per-class ones".into()));
            }
            let class: usize = ck
                .require("class")?
                .parse()
                .map_err(|_| Error::InvariantViolation("checkpoint class is not an index".into()))?;
            if class >= n_classes {
                return Err(Error::LabelOutOfRange { label: class, n_classes });
            }
            per[class] = Some((g, s));
        }
        Ok(Self::PerClass(per))
    }
}

/// `n_per_class` generated trials per class, class-major, in evaluation mode.
/// Every trial carries the reserved synthetic subject id.
pub fn generate_synthetic(
    bundle: &GeneratorBundle,
    n_per_class: usize,
    classes: &SsvepClassTable,
    sample_rate_hz: f64,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(n_per_class * classes.len());
    for class in 0..classes.len() {
        let (gen, store, conditional) = match bundle {
            GeneratorBundle::Conditional { generator, store } => (generator, store, true),
            GeneratorBundle::PerClass(per) => match per.get(class) {
                Some(Some((g, s))) => (g, s, false),
                _ => return Err(Error::MissingClassCheckpoint(class)),
            },
        };
        let spec = gen.spec();
        let mut left = n_per_class;
        while left > 0 {
            let n = left.min(GEN_BATCH);
            let z = sample_latent(n, spec.latent_dim, &mut rng);
            let labels = vec![class; n];
            let out = gen
                .forward(store, &z, conditional.then_some(labels.as_slice()), &mut Mode::Eval)?
                .output;
            for i in 0..n {
                trials.push(EegTrial::new(
                    out.c,
                    out.l,
                    out.sample(i),
                    sample_rate_hz,
                    SYNTHETIC_SUBJECT,
                    Some(class),
                    Provenance::Generated,
                )?);
            }
            left -= n;
        }
    }
    Ok(Dataset::new(trials, classes.clone(), vec![SYNTHETIC_SUBJECT])?.with_meta("synthetic_seed", seed.to_string()))
}
