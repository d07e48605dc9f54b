//! Central finite-difference checks on a miniature network: 2 conv blocks,
//! 1 input channel, 32 time steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sisgan::nn::{Act, Backbone, BackboneSpec, Generator, GeneratorSpec, Gradients, Head, Mat, Mode, ParameterStore, TensorKind};
use sisgan::train::{bce_mean_grad, cross_entropy_grad, subject_invariance_grad, GanLossWeights};

const H: f64 = 1e-5;
const N: usize = 4;
const K: usize = 3;
const SUBJECTS: usize = 5;
const DROPOUT_SEED: u64 = 77;

#[derive(Debug, Clone, Copy, Default)]
pub struct GradStats {
    pub checked: usize,
    pub within_tight: usize,
    pub worst: f64,
}

impl GradStats {
    pub fn fraction_tight(&self) -> f64 {
        self.within_tight as f64 / self.checked as f64
    }

    /// ≥95% of entries within 1e-3 relative error and none above 1e-2.
    pub fn passes(&self) -> bool {
        self.checked > 0 && self.fraction_tight() >= 0.95 && self.worst <= 1e-2
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let diff = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs()).max(1e-7);
        let rel = diff / scale;
        self.checked += 1;
        if rel <= 1e-3 {
            self.within_tight += 1;
        }
        self.worst = self.worst.max(rel);
    }

    fn merge(self, other: GradStats) -> GradStats {
        GradStats {
            checked: self.checked + other.checked,
            within_tight: self.within_tight + other.within_tight,
            worst: self.worst.max(other.worst),
        }
    }
}

fn mini_backbone(head: Head, seed: u64) -> (Backbone, ParameterStore) {
    let spec = BackboneSpec {
        in_channels: 1,
        time_steps: 32,
        widths: vec![4, 6],
        kernel_size: 5,
        strides: vec![2, 2],
        dropout_p: 0.5,
        head,
    };
    Backbone::build(spec, seed).unwrap()
}

fn mini_generator(seed: u64) -> (Generator, ParameterStore) {
    let spec = GeneratorSpec {
        latent_dim: 6,
        conditional: true,
        n_classes: K,
        widths: vec![8, 6, 5, 4, 1],
        time_steps: 32,
    };
    Generator::build(spec, seed).unwrap()
}

fn random_act(n: usize, seed: u64) -> Act {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Act::zeros(1, n, 32);
    for v in &mut x.data {
        *v = rng.random_range(-2.0..2.0);
    }
    x
}

fn train_mode_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(DROPOUT_SEED)
}

fn check_params(store: &mut ParameterStore, analytic: &Gradients, mut loss: impl FnMut(&ParameterStore) -> f64) -> GradStats {
    let mut stats = GradStats::default();
    let params: Vec<(usize, String, usize)> = store
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == TensorKind::Param)
        .map(|(i, e)| (i, e.name.clone(), e.tensor.data.len()))
        .collect();
    for (idx, name, len) in params {
        for j in 0..len {
            let orig = store.get(&name).unwrap().data[j];
            store.tensor_mut(&name).unwrap().data[j] = orig + H;
            let up = loss(store);
            store.tensor_mut(&name).unwrap().data[j] = orig - H;
            let down = loss(store);
            store.tensor_mut(&name).unwrap().data[j] = orig;
            stats.record(analytic.values[idx][j], (up - down) / (2.0 * H));
        }
    }
    stats
}

fn check_input(x: &Act, analytic: &Act, mut loss: impl FnMut(&Act) -> f64) -> GradStats {
    let mut stats = GradStats::default();
    let mut probe = x.clone();
    for j in 0..x.data.len() {
        probe.data[j] = x.data[j] + H;
        let up = loss(&probe);
        probe.data[j] = x.data[j] - H;
        let down = loss(&probe);
        probe.data[j] = x.data[j];
        stats.record(analytic.data[j], (up - down) / (2.0 * H));
    }
    stats
}

fn with_col0(logits: &Mat, col0: &[f64]) -> Mat {
    let mut d = Mat::zeros(logits.rows, logits.cols);
    for (r, g) in col0.iter().enumerate() {
        d.row_mut(r)[0] = *g;
    }
    d
}

fn aux_block(d: &mut Mat, aux_grad: &Mat, scale: f64) {
    for r in 0..d.rows {
        for k in 0..aux_grad.cols {
            d.row_mut(r)[1 + k] += scale * aux_grad.row(r)[k];
        }
    }
}

/// Discriminator loss `BCE(D(x), 1) + BCE(D(x̃), 0)` over two train-mode
/// passes, checked against the discriminator parameters.
pub fn discriminator_loss() -> GradStats {
    let (net, mut store) = mini_backbone(Head::AuxDiscriminator { n_classes: K }, 1);
    let real = random_act(N, 2);
    let fake = random_act(N, 3);
    let loss = |s: &ParameterStore| {
        let mut rng = train_mode_rng();
        let pr = net.forward(s, &real, &mut Mode::Train(&mut rng)).unwrap();
        let pf = net.forward(s, &fake, &mut Mode::Train(&mut rng)).unwrap();
        bce_mean_grad(&pr.logits.col(0), 1.0).0 + bce_mean_grad(&pf.logits.col(0), 0.0).0
    };
    let mut rng = train_mode_rng();
    let pr = net.forward(&store, &real, &mut Mode::Train(&mut rng)).unwrap();
    let pf = net.forward(&store, &fake, &mut Mode::Train(&mut rng)).unwrap();
    let (_, gr) = bce_mean_grad(&pr.logits.col(0), 1.0);
    let (_, gf) = bce_mean_grad(&pf.logits.col(0), 0.0);
    let (mut grads, _) = net.backward(&store, &pr, &with_col0(&pr.logits, &gr));
    grads.add_assign(&net.backward(&store, &pf, &with_col0(&pf.logits, &gf)).0);
    check_params(&mut store, &grads, loss)
}

/// Auxiliary cross-entropy on the class columns, checked against both the
/// discriminator parameters and its input.
pub fn auxiliary_loss() -> GradStats {
    let (net, mut store) = mini_backbone(Head::AuxDiscriminator { n_classes: K }, 4);
    let x = random_act(N, 5);
    let labels = [0, 2, 1, 2];
    let eval = |s: &ParameterStore, x: &Act| {
        let mut rng = train_mode_rng();
        let p = net.forward(s, x, &mut Mode::Train(&mut rng)).unwrap();
        cross_entropy_grad(&p.logits.cols_range(1, 1 + K), &labels).unwrap().0
    };
    let mut rng = train_mode_rng();
    let p = net.forward(&store, &x, &mut Mode::Train(&mut rng)).unwrap();
    let (_, g) = cross_entropy_grad(&p.logits.cols_range(1, 1 + K), &labels).unwrap();
    let mut d = Mat::zeros(p.logits.rows, p.logits.cols);
    aux_block(&mut d, &g, 1.0);
    let (grads, dx) = net.backward(&store, &p, &d);
    let by_input = check_input(&x, &dx, |xi| eval(&store, xi));
    check_params(&mut store, &grads, |s| eval(s, &x)).merge(by_input)
}

/// Subject classifier warmed up by a few train-mode passes so that its
/// running statistics are not the trivial initial ones.
fn warmed_subject_net() -> (Backbone, ParameterStore) {
    let (net, mut store) = mini_backbone(Head::SubjectClassifier { n_subjects: SUBJECTS }, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..3 {
        let p = net.forward(&store, &random_act(8, 20 + i), &mut Mode::Train(&mut rng)).unwrap();
        net.commit(&mut store, &p).unwrap();
    }
    (net, store)
}

/// Mean max-softmax under the subject network in evaluation mode, checked
/// against its parameters and its input.
pub fn subject_loss() -> GradStats {
    let (net, mut store) = warmed_subject_net();
    let x = random_act(N, 9);
    let eval = |s: &ParameterStore, x: &Act| {
        let p = net.forward(s, x, &mut Mode::Eval).unwrap();
        subject_invariance_grad(&p.logits).0
    };
    let p = net.forward(&store, &x, &mut Mode::Eval).unwrap();
    let (_, g) = subject_invariance_grad(&p.logits);
    let (grads, dx) = net.backward(&store, &p, &g);
    let by_input = check_input(&x, &dx, |xi| eval(&store, xi));
    check_params(&mut store, &grads, |s| eval(s, &x)).merge(by_input)
}

struct Combined {
    gen: Generator,
    disc: Backbone,
    disc_store: ParameterStore,
    subj: Backbone,
    subj_store: ParameterStore,
    z: Mat,
    labels: Vec<usize>,
}

impl Combined {
    fn new() -> (Self, ParameterStore) {
        let (gen, gen_store) = mini_generator(10);
        let (disc, disc_store) = mini_backbone(Head::AuxDiscriminator { n_classes: K }, 11);
        let (subj, subj_store) = warmed_subject_net();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z = sisgan::nn::sample_latent(N, 6, &mut rng);
        let labels = vec![1, 0, 2, 1];
        let c = Self {
            gen,
            disc,
            disc_store,
            subj,
            subj_store: subj_store.freeze(),
            z,
            labels,
        };
        (c, gen_store)
    }

    /// Loss and generator gradients of
    /// `BCE(D(G), 1) + w_a·CE(aux(G), y) + w_s·maxsoftmax(S(G))`.
    fn eval(&self, gen_store: &ParameterStore, w_adv: f64, w: &GanLossWeights) -> (f64, Gradients) {
        let mut rng = train_mode_rng();
        let g = self.gen.forward(gen_store, &self.z, Some(&self.labels), &mut Mode::Train(&mut rng)).unwrap();
        let pd = self.disc.forward(&self.disc_store, &g.output, &mut Mode::Train(&mut rng)).unwrap();
        let (adv, gadv) = bce_mean_grad(&pd.logits.col(0), 1.0);
        let (aux, gaux) = cross_entropy_grad(&pd.logits.cols_range(1, 1 + K), &self.labels).unwrap();
        let mut dl = with_col0(&pd.logits, &gadv.iter().map(|v| v * w_adv).collect::<Vec<_>>());
        aux_block(&mut dl, &gaux, w.lambda_a);
        let (_, mut dx) = self.disc.backward(&self.disc_store, &pd, &dl);
        let ps = self.subj.forward(&self.subj_store, &g.output, &mut Mode::Eval).unwrap();
        let (subj, mut gs) = subject_invariance_grad(&ps.logits);
        for v in &mut gs.data {
            *v *= w.lambda_s;
        }
        let (_, dxs) = self.subj.backward(&self.subj_store, &ps, &gs);
        for (a, b) in dx.data.iter_mut().zip(&dxs.data) {
            *a += b;
        }
        let grads = self.gen.backward(gen_store, &g, dx);
        (w_adv * adv + w.lambda_a * aux + w.lambda_s * subj, grads)
    }
}

/// Combined generator objective, checked against the generator parameters.
pub fn combined_generator_loss() -> GradStats {
    let (c, mut gen_store) = Combined::new();
    let w = GanLossWeights::default();
    let (_, grads) = c.eval(&gen_store, 1.0, &w);
    check_params(&mut gen_store, &grads, |s| c.eval(s, 1.0, &w).0)
}

/// Largest absolute difference between the combined gradient and the sum of
/// the separately computed component gradients.
pub fn combined_equals_sum_of_components() -> f64 {
    let (c, gen_store) = Combined::new();
    let w = GanLossWeights::default();
    let (_, total) = c.eval(&gen_store, 1.0, &w);
    let only = |adv: f64, a: f64, s: f64| {
        c.eval(
            &gen_store,
            adv,
            &GanLossWeights {
                lambda_a: a,
                lambda_s: s,
            },
        )
        .1
    };
    let mut sum = only(1.0, 0.0, 0.0);
    sum.add_assign(&only(0.0, w.lambda_a, 0.0));
    sum.add_assign(&only(0.0, 0.0, w.lambda_s));
    total
        .values
        .iter()
        .flatten()
        .zip(sum.values.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}
