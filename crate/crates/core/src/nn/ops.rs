//! Layer primitives with explicit forward caches and hand-derived backward
//! passes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::store::{Gradients, ParameterStore};
use super::tensor::{col2im, gemm, im2col, Act, ConvGeom, Mat, View};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Forward-pass mode. Training enables dropout (drawing masks from the given
/// stream) and batch statistics in batch norm; evaluation uses running
/// statistics and is deterministic.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    /// Weight `[out][in][k]`, no bias.
    Conv {
        w: usize,
        in_ch: usize,
        out_ch: usize,
        geom: ConvGeom,
    },
    /// Weight `[in][out][k]`, optional bias `[out]`.
    ConvT {
        w: usize,
        bias: Option<usize>,
        in_ch: usize,
        out_ch: usize,
        geom: ConvGeom,
    },
    BatchNorm {
        gamma: usize,
        beta: usize,
        running_mean: usize,
        running_var: usize,
    },
    /// Per-channel slope.
    PRelu { slope: usize },
    Dropout { p: f64 },
}

pub(crate) enum Cache {
    Conv { cols: Vec<f64>, n: usize },
    ConvT { input: Act },
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    PRelu { input: Act },
    Dropout { mask: Option<Vec<f64>> },
}

/// Batch statistics produced by a train-mode batch-norm pass, to be folded
/// into the running averages by [`commit_running_stats`].
#[derive(Debug, Clone)]
pub(crate) struct BnUpdate {
    running_mean: usize,
    running_var: usize,
    mean: Vec<f64>,
    var_unbiased: Vec<f64>,
}

pub(crate) struct Trace {
    caches: Vec<Cache>,
    pub bn_updates: Vec<BnUpdate>,
}

pub(crate) fn forward_ops(
    ops: &[Op],
    store: &ParameterStore,
    mut x: Act,
    mode: &mut Mode<'_>,
) -> (Act, Trace) {
    let mut caches = Vec::with_capacity(ops.len());
    let mut bn_updates = Vec::new();
    for op in ops {
        let (y, cache) = match op {
            Op::Conv {
                w,
                in_ch,
                out_ch,
                geom,
            } => {
                debug_assert_eq!((x.c, x.l), (*in_ch, geom.long_len));
                let cols = im2col(&x.data, x.c, x.n, geom);
                let width = x.n * geom.short_len;
                let mut y = Act::zeros(*out_ch, x.n, geom.short_len);
                let kk = in_ch * geom.kernel;
                gemm(
                    *out_ch,
                    kk,
                    width,
                    View::row_major(store.data(*w), kk),
                    View::row_major(&cols, width),
                    0.0,
                    &mut y.data,
                );
                (y, Cache::Conv { cols, n: x.n })
            }
            Op::ConvT {
                w,
                bias,
                in_ch,
                out_ch,
                geom,
            } => {
                debug_assert_eq!((x.c, x.l), (*in_ch, geom.short_len));
                let width = x.n * geom.short_len;
                let ok = out_ch * geom.kernel;
                let mut cols = vec![0.0; ok * width];
                gemm(
                    ok,
                    *in_ch,
                    width,
                    View::transposed(store.data(*w), ok),
                    View::row_major(&x.data, width),
                    0.0,
                    &mut cols,
                );
                let mut y = Act {
                    c: *out_ch,
                    n: x.n,
                    l: geom.long_len,
                    data: col2im(&cols, *out_ch, x.n, geom),
                };
                if let Some(b) = bias {
                    let slab = y.n * y.l;
                    for (o, bo) in store.data(*b).iter().enumerate() {
                        for v in &mut y.data[o * slab..(o + 1) * slab] {
                            *v += bo;
                        }
                    }
                }
                (y, Cache::ConvT { input: x })
            }
            Op::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                let slab = x.n * x.l;
                let m = slab as f64;
                let g = store.data(*gamma);
                let b = store.data(*beta);
                let mut y = x.clone();
                let mut xhat = vec![0.0; x.data.len()];
                let mut inv_std = vec![0.0; x.c];
                let train = mode.is_train();
                let mut upd_mean = vec![0.0; x.c];
                let mut upd_var = vec![0.0; x.c];
                for c in 0..x.c {
                    let src = &x.data[c * slab..(c + 1) * slab];
                    let (mean, var) = if train {
                        let mean = src.iter().sum::<f64>() / m;
                        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                        upd_mean[c] = mean;
                        upd_var[c] = if slab > 1 { var * m / (m - 1.0) } else { var };
                        (mean, var)
                    } else {
                        (store.data(*running_mean)[c], store.data(*running_var)[c])
                    };
                    let is = 1.0 / (var + BN_EPS).sqrt();
                    inv_std[c] = is;
                    for ((yv, xh), xv) in y.data[c * slab..(c + 1) * slab]
                        .iter_mut()
                        .zip(&mut xhat[c * slab..(c + 1) * slab])
                        .zip(src)
                    {
                        *xh = (xv - mean) * is;
                        *yv = g[c] * *xh + b[c];
                    }
                }
                if train {
                    bn_updates.push(BnUpdate {
                        running_mean: *running_mean,
                        running_var: *running_var,
                        mean: upd_mean,
                        var_unbiased: upd_var,
                    });
                }
                (
                    y,
                    Cache::BatchNorm {
                        xhat,
                        inv_std,
                        train,
                    },
                )
            }
            Op::PRelu { slope } => {
                let a = store.data(*slope);
                let slab = x.n * x.l;
                let mut y = x.clone();
                for c in 0..x.c {
                    for v in &mut y.data[c * slab..(c + 1) * slab] {
                        if *v <= 0.0 {
                            *v *= a[c];
                        }
                    }
                }
                (y, Cache::PRelu { input: x })
            }
            Op::Dropout { p } => match mode {
                Mode::Train(rng) if *p > 0.0 => {
                    let keep = 1.0 / (1.0 - p);
                    let mask: Vec<f64> = (0..x.data.len())
                        .map(|_| if rng.random::<f64>() >= *p { keep } else { 0.0 })
                        .collect();
                    let mut y = x;
                    for (v, m) in y.data.iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    (y, Cache::Dropout { mask: Some(mask) })
                }
                _ => (x, Cache::Dropout { mask: None }),
            },
        };
        caches.push(cache);
        x = y;
    }
    (x, Trace { caches, bn_updates })
}

/// Back-propagates `dy` through `ops`, accumulating parameter gradients into
/// `grads` and returning the gradient with respect to the input.
pub(crate) fn backward_ops(
    ops: &[Op],
    store: &ParameterStore,
    trace: &Trace,
    mut dy: Act,
    grads: &mut Gradients,
) -> Act {
    for (op, cache) in ops.iter().zip(&trace.caches).rev() {
        dy = match (op, cache) {
            (
                Op::Conv {
                    w,
                    in_ch,
                    out_ch,
                    geom,
                },
                Cache::Conv { cols, n },
            ) => {
                let width = n * geom.short_len;
                let kk = in_ch * geom.kernel;
                gemm(
                    *out_ch,
                    width,
                    kk,
                    View::row_major(&dy.data, width),
                    View::transposed(cols, width),
                    1.0,
                    &mut grads.values[*w],
                );
                let mut dcols = vec![0.0; kk * width];
                gemm(
                    kk,
                    *out_ch,
                    width,
                    View::transposed(store.data(*w), kk),
                    View::row_major(&dy.data, width),
                    0.0,
                    &mut dcols,
                );
                Act {
                    c: *in_ch,
                    n: *n,
                    l: geom.long_len,
                    data: col2im(&dcols, *in_ch, *n, geom),
                }
            }
            (
                Op::ConvT {
                    w,
                    bias,
                    in_ch,
                    out_ch,
                    geom,
                },
                Cache::ConvT { input },
            ) => {
                let n = input.n;
                let width = n * geom.short_len;
                let ok = out_ch * geom.kernel;
                if let Some(b) = bias {
                    let slab = dy.n * dy.l;
                    for (o, g) in grads.values[*b].iter_mut().enumerate() {
                        *g += dy.data[o * slab..(o + 1) * slab].iter().sum::<f64>();
                    }
                }
                let dcols = im2col(&dy.data, *out_ch, n, geom);
                gemm(
                    *in_ch,
                    width,
                    ok,
                    View::row_major(&input.data, width),
                    View::transposed(&dcols, width),
                    1.0,
                    &mut grads.values[*w],
                );
                let mut dx = Act::zeros(*in_ch, n, geom.short_len);
                gemm(
                    *in_ch,
                    ok,
                    width,
                    View::row_major(store.data(*w), ok),
                    View::row_major(&dcols, width),
                    0.0,
                    &mut dx.data,
                );
                dx
            }
            (
                Op::BatchNorm { gamma, beta, .. },
                Cache::BatchNorm {
                    xhat,
                    inv_std,
                    train,
                },
            ) => {
                let slab = dy.n * dy.l;
                let m = slab as f64;
                let g = store.data(*gamma);
                let mut dx = dy.clone();
                for c in 0..dy.c {
                    let d = &dy.data[c * slab..(c + 1) * slab];
                    let xh = &xhat[c * slab..(c + 1) * slab];
                    let sum_dy: f64 = d.iter().sum();
                    let sum_dy_xh: f64 = d.iter().zip(xh).map(|(a, b)| a * b).sum();
                    grads.values[*gamma][c] += sum_dy_xh;
                    grads.values[*beta][c] += sum_dy;
                    let out = &mut dx.data[c * slab..(c + 1) * slab];
                    if *train {
                        let k = g[c] * inv_std[c] / m;
                        for ((o, dv), xv) in out.iter_mut().zip(d).zip(xh) {
                            *o = k * (m * dv - sum_dy - xv * sum_dy_xh);
                        }
                    } else {
                        let k = g[c] * inv_std[c];
                        for (o, dv) in out.iter_mut().zip(d) {
                            *o = k * dv;
                        }
                    }
                }
                dx
            }
            (Op::PRelu { slope }, Cache::PRelu { input }) => {
                let a = store.data(*slope);
                let slab = dy.n * dy.l;
                let mut dx = dy;
                for c in 0..dx.c {
                    let mut da = 0.0;
                    for (d, xv) in dx.data[c * slab..(c + 1) * slab]
                        .iter_mut()
                        .zip(&input.data[c * slab..(c + 1) * slab])
                    {
                        if *xv <= 0.0 {
                            da += *d * xv;
                            *d *= a[c];
                        }
                    }
                    grads.values[*slope][c] += da;
                }
                dx
            }
            (Op::Dropout { .. }, Cache::Dropout { mask }) => {
                let mut dx = dy;
                if let Some(mask) = mask {
                    for (v, m) in dx.data.iter_mut().zip(mask) {
                        *v *= m;
                    }
                }
                dx
            }
            _ => unreachable!("op/cache mismatch"),
        };
    }
    dy
}

/// Folds train-mode batch statistics into the running averages.
pub(crate) fn commit_running_stats(
    store: &mut ParameterStore,
    updates: &[BnUpdate],
) -> crate::Result<()> {
    for u in updates {
        for (r, b) in store.data_mut(u.running_mean)?.iter_mut().zip(&u.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in store.data_mut(u.running_var)?.iter_mut().zip(&u.var_unbiased) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
    Ok(())
}

/// Dense projection of the flattened `[c][l]` features of each sample.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
    pub in_ch: usize,
    pub in_len: usize,
    pub out: usize,
}

impl Linear {
    /// `y[n][o] = b[o] + Σ_{c,t} w[o][c*L + t] · x[c][n][t]`.
    pub fn forward(&self, store: &ParameterStore, x: &Act) -> Mat {
        let (n, l, feat) = (x.n, x.l, self.in_ch * self.in_len);
        let mut y = Mat::zeros(n, self.out);
        for r in 0..n {
            y.row_mut(r).copy_from_slice(store.data(self.b));
        }
        let w = store.data(self.w);
        for c in 0..self.in_ch {
            gemm(
                n,
                l,
                self.out,
                View::row_major(x.channel(c), l),
                View {
                    data: &w[c * l..],
                    rs: 1,
                    cs: feat,
                },
                1.0,
                &mut y.data,
            );
        }
        y
    }

    pub fn backward(&self, store: &ParameterStore, x: &Act, dy: &Mat, grads: &mut Gradients) -> Act {
        let (n, l, feat) = (x.n, x.l, self.in_ch * self.in_len);
        for r in 0..n {
            for (g, d) in grads.values[self.b].iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        let w = store.data(self.w);
        let mut dx = Act::zeros(self.in_ch, n, l);
        for c in 0..self.in_ch {
            // dW[:, c*L..] += dyᵀ · x_c
            let mut dwc = vec![0.0; self.out * l];
            gemm(
                self.out,
                n,
                l,
                View::transposed(&dy.data, self.out),
                View::row_major(x.channel(c), l),
                0.0,
                &mut dwc,
            );
            let gw = &mut grads.values[self.w];
            for o in 0..self.out {
                for (g, v) in gw[o * feat + c * l..o * feat + (c + 1) * l]
                    .iter_mut()
                    .zip(&dwc[o * l..(o + 1) * l])
                {
                    *g += v;
                }
            }
            gemm(
                n,
                self.out,
                l,
                View::row_major(&dy.data, self.out),
                View {
                    data: &w[c * l..],
                    rs: feat,
                    cs: 1,
                },
                0.0,
                &mut dx.data[c * n * l..(c + 1) * n * l],
            );
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;

    use super::*;
    use crate::nn::layout::{Init, LayoutBuilder};
    use crate::nn::store::TensorKind;

    fn bn_op() -> (Vec<Op>, ParameterStore) {
        let mut lb = LayoutBuilder::default();
        let width = 3;
        let op = Op::BatchNorm {
            gamma: lb.add("bn.weight", TensorKind::Param, vec![width], Init::Const(1.0)),
            beta: lb.add("bn.bias", TensorKind::Param, vec![width], Init::Const(0.0)),
            running_mean: lb.add("bn.running_mean", TensorKind::Buffer, vec![width], Init::Const(0.0)),
            running_var: lb.add("bn.running_var", TensorKind::Buffer, vec![width], Init::Const(1.0)),
        };
        (vec![op], lb.finish().init(0))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn batch_norm_train_output_is_standardized(
            n in 2usize..6,
            l in 4usize..20,
            shift in -50.0f64..50.0,
            scale in 0.5f64..20.0,
            seed in any::<u64>(),
        ) {
            let (ops, store) = bn_op();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = Act::zeros(3, n, l);
            for v in &mut x.data {
                *v = shift + scale * (rand::Rng::random::<f64>(&mut rng) - 0.5);
            }
            let (y, _) = forward_ops(&ops, &store, x, &mut Mode::Train(&mut rng));
            let slab = n * l;
            for c in 0..3 {
                let ch = &y.data[c * slab..(c + 1) * slab];
                let mean = ch.iter().sum::<f64>() / slab as f64;
                let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / slab as f64;
                prop_assert!(mean.abs() < 1e-3, "mean {}", mean);
                prop_assert!((var - 1.0).abs() < 1e-3, "var {}", var);
            }
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let (ops, mut store) = bn_op();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = Act::zeros(3, 2, 2);
        x.data = vec![1.0, 3.0, 1.0, 3.0, 0.0, 0.0, 0.0, 0.0, -2.0, 2.0, -2.0, 2.0];
        let (_, trace) = forward_ops(&ops, &store, x, &mut Mode::Train(&mut rng));
        commit_running_stats(&mut store, &trace.bn_updates).unwrap();
        let mean = store.get("bn.running_mean").unwrap().data.clone();
        let var = store.get("bn.running_var").unwrap().data.clone();
        // channel 0: mean 2, unbiased var 4/3
        assert!((mean[0] - 0.2).abs() < 1e-12);
        assert!((var[0] - (0.9 + 0.1 * 4.0 / 3.0)).abs() < 1e-12);
        assert_eq!(mean[1], 0.0);
        assert!((var[1] - 0.9).abs() < 1e-12);
        assert!((var[2] - (0.9 + 0.1 * 16.0 / 3.0)).abs() < 1e-12);
    }
}
