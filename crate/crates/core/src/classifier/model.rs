//! Forward and reverse passes of the multi-channel encoder.
//!
//! Per channel: scalar embedding plus position table, kernel-3 convolution
//! with ReLU, multi-head self-attention with an output projection, temporal
//! mean pooling, batch norm and a ReLU fully connected layer. The three
//! channel vectors are concatenated and fed through a ReLU MLP with dropout
//! into the softmax output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClassifierError, MceParams};
use crate::matrix::{gemm, Matrix, View, ViewMut};
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;
/// Lower clamp on the label probability inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout masks drawn from `dropout_seed`, cache kept.
    Train { dropout_seed: u64 },
    /// Running statistics, no dropout, no cache.
    Infer,
}

#[derive(Clone, Debug)]
struct ChannelCache<T> {
    x: Vec<T>,
    xcol: Matrix<T>,
    a1: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    att: Vec<T>,
    o: Matrix<T>,
    zhat: Matrix<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
    ybn: Matrix<T>,
    f: Matrix<T>,
}

/// Activations of a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct Cache<T> {
    version: u64,
    batch: usize,
    channels: Vec<ChannelCache<T>>,
    cat: Matrix<T>,
    hidden: Matrix<T>,
    mask: Vec<T>,
    h2: Matrix<T>,
    probs: Matrix<T>,
}

impl<T: Scalar> Cache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn probs(&self) -> &Matrix<T> {
        &self.probs
    }
}

#[derive(Clone, Debug)]
pub struct BatchOutput<T> {
    pub logits: Matrix<T>,
    pub probs: Matrix<T>,
    pub cache: Option<Cache<T>>,
}

fn add_bias<T: Scalar>(m: &mut Matrix<T>, bias: &Matrix<T>) {
    let b = bias.as_slice();
    for i in 0..m.rows() {
        for (x, &bv) in m.row_mut(i).iter_mut().zip(b) {
            *x += bv;
        }
    }
}

fn relu<T: Scalar>(m: &mut Matrix<T>) {
    for x in m.as_mut_slice() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

fn check<T: Scalar>(m: &Matrix<T>, layer: &str) -> Result<(), ClassifierError> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(ClassifierError::NonFinite { layer: layer.to_string() })
    }
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows<T: Scalar>(data: &mut [T], cols: usize) {
    for row in data.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

/// `a * b` into a fresh matrix, with optional transposes expressed via views.
fn mul<T: Scalar>(a: View<'_, T>, b: View<'_, T>) -> Matrix<T> {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    gemm(T::one(), a, b, T::zero(), out.view_mut());
    out
}

fn col_sums_into<T: Scalar>(m: &Matrix<T>, out: &mut Matrix<T>) {
    *out = m.col_sums();
}

/// Forward pass over a batch of `3 x N` windows.
pub fn forward_batch<T: Scalar>(
    params: &MceParams<T>,
    windows: &[&Matrix<T>],
    mode: Mode,
) -> Result<BatchOutput<T>, ClassifierError> {
    let cfg = &params.config;
    let (n, d, kw) = (cfg.window_len, cfg.d_model, cfg.conv.kernel);
    let heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let fdim = cfg.fc_dim;
    let b = windows.len();
    if b == 0 {
        return Err(ClassifierError::EmptyBatch);
    }
    for w in windows {
        if w.shape() != (cfg.channels, n) {
            return Err(ClassifierError::Shape {
                expected: (cfg.channels, n),
                got: w.shape(),
            });
        }
    }
    let train = matches!(mode, Mode::Train { .. });
    let bn = b * n;
    let half = (kw / 2) as isize;
    let scale = T::one() / T::from_count(dh).sqrt();
    let eps = T::lit(BN_EPS);

    let mut cat = Matrix::zeros(b, cfg.channels * fdim);
    let mut caches = Vec::with_capacity(if train { cfg.channels } else { 0 });
    for (ci, cp) in params.channels.iter().enumerate() {
        let x: Vec<T> = windows.iter().flat_map(|w| w.row(ci).iter().copied()).collect();

        let embed = cp.embed.as_slice();
        let mut e = Matrix::zeros(bn, d);
        for r in 0..bn {
            let (xv, pos) = (x[r], cp.position.row(r % n));
            for ((o, &w), &p) in e.row_mut(r).iter_mut().zip(embed).zip(pos) {
                *o = xv * w + p;
            }
        }

        let mut xcol = Matrix::zeros(bn, kw * d);
        for bi in 0..b {
            for t in 0..n {
                let row = xcol.row_mut(bi * n + t);
                for k in 0..kw {
                    let src = t as isize + k as isize - half;
                    if (0..n as isize).contains(&src) {
                        row[k * d..(k + 1) * d].copy_from_slice(e.row(bi * n + src as usize));
                    }
                }
            }
        }
        let mut a1 = mul(xcol.view(), cp.conv_w.view());
        add_bias(&mut a1, &cp.conv_b);
        relu(&mut a1);
        check(&a1, "conv")?;

        let project = |w: &Matrix<T>, bias: &Matrix<T>| {
            let mut m = mul(a1.view(), w.view());
            add_bias(&mut m, bias);
            m
        };
        let q = project(&cp.wq, &cp.bq);
        let k = project(&cp.wk, &cp.bk);
        let v = project(&cp.wv, &cp.bv);

        let mut att = vec![T::zero(); b * heads * n * n];
        let mut o = Matrix::zeros(bn, d);
        for bi in 0..b {
            for h in 0..heads {
                let s = &mut att[(bi * heads + h) * n * n..][..n * n];
                gemm(
                    scale,
                    q.block(bi * n, h * dh, n, dh),
                    k.block(bi * n, h * dh, n, dh).t(),
                    T::zero(),
                    ViewMut::new(s, n, n),
                );
                softmax_rows(s, n);
                gemm(
                    T::one(),
                    View::new(s, n, n),
                    v.block(bi * n, h * dh, n, dh),
                    T::zero(),
                    o.block_mut(bi * n, h * dh, n, dh),
                );
            }
        }
        check(&o, "attention")?;
        let mut y = mul(o.view(), cp.wo.view());
        add_bias(&mut y, &cp.bo);

        let inv_n = T::one() / T::from_count(n);
        let mut z = Matrix::zeros(b, d);
        for bi in 0..b {
            let zr = z.row_mut(bi);
            for t in 0..n {
                for (acc, &val) in zr.iter_mut().zip(y.row(bi * n + t)) {
                    *acc += val;
                }
            }
            zr.iter_mut().for_each(|v| *v *= inv_n);
        }
        check(&z, "pool")?;

        let (mean, var): (Vec<T>, Vec<T>) = if train {
            let inv_b = T::one() / T::from_count(b);
            let mean: Vec<T> = (0..d).map(|j| (0..b).map(|i| z.get(i, j)).sum::<T>() * inv_b).collect();
            let var = (0..d)
                .map(|j| (0..b).map(|i| (z.get(i, j) - mean[j]).powi(2)).sum::<T>() * inv_b)
                .collect();
            (mean, var)
        } else {
            (cp.bn_running_mean.as_slice().to_vec(), cp.bn_running_var.as_slice().to_vec())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let zhat = Matrix::from_fn(b, d, |i, j| (z.get(i, j) - mean[j]) * inv_std[j]);
        let gamma = cp.bn_gamma.as_slice();
        let beta = cp.bn_beta.as_slice();
        let ybn = Matrix::from_fn(b, d, |i, j| gamma[j] * zhat.get(i, j) + beta[j]);
        check(&ybn, "batchnorm")?;

        let mut f = mul(ybn.view(), cp.fc_w.view());
        add_bias(&mut f, &cp.fc_b);
        relu(&mut f);
        check(&f, "fc")?;
        for i in 0..b {
            cat.row_mut(i)[ci * fdim..(ci + 1) * fdim].copy_from_slice(f.row(i));
        }

        if train {
            caches.push(ChannelCache {
                x,
                xcol,
                a1,
                q,
                k,
                v,
                att,
                o,
                zhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                ybn,
                f,
            });
        }
    }

    let mut hidden = mul(cat.view(), params.mlp_w.view());
    add_bias(&mut hidden, &params.mlp_b);
    relu(&mut hidden);
    check(&hidden, "mlp")?;

    let mut mask = Vec::new();
    let h2 = match mode {
        Mode::Train { dropout_seed } if cfg.dropout > 0.0 => {
            let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            let keep = 1.0 - cfg.dropout;
            let scale = T::lit(1.0 / keep);
            mask = (0..hidden.len())
                .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
                .collect();
            let data = hidden.as_slice().iter().zip(&mask).map(|(&h, &m)| h * m).collect();
            Matrix::from_vec(b, hidden.cols(), data)
        }
        _ => hidden.clone(),
    };

    let mut logits = mul(h2.view(), params.out_w.view());
    add_bias(&mut logits, &params.out_b);
    check(&logits, "output")?;
    let mut probs = logits.clone();
    softmax_rows(probs.as_mut_slice(), cfg.n_classes);

    let cache = train.then(|| Cache {
        version: params.version,
        batch: b,
        channels: caches,
        cat,
        hidden,
        mask,
        h2,
        probs: probs.clone(),
    });
    Ok(BatchOutput { logits, probs, cache })
}

/// Mean weighted log loss `-w_y log p_y` of a probability batch and the
/// number of label probabilities that had to be clamped.
pub fn weighted_log_loss<T: Scalar>(probs: &Matrix<T>, labels: &[usize], weights: &[f64]) -> (f64, usize) {
    let mut total = 0.0;
    let mut clamped = 0;
    for (i, &y) in labels.iter().enumerate() {
        let mut p = probs.get(i, y).as_f64();
        if !(p >= PROB_FLOOR) {
            p = PROB_FLOOR;
            clamped += 1;
        }
        total -= weights[y] * p.ln();
    }
    if clamped > 0 {
        tracing::warn!(clamped, "label probability clamped in log loss");
    }
    (total / labels.len().max(1) as f64, clamped)
}

/// Loss value and gradients of one cached batch.
pub struct Backward<T> {
    pub loss: f64,
    pub clamped: usize,
    pub grads: MceParams<T>,
}

pub fn backward<T: Scalar>(
    params: &MceParams<T>,
    cache: &Cache<T>,
    labels: &[usize],
    weights: &[f64],
) -> Result<Backward<T>, ClassifierError> {
    if cache.version != params.version {
        return Err(ClassifierError::StaleCache {
            cache: cache.version,
            params: params.version,
        });
    }
    let cfg = &params.config;
    let b = cache.batch;
    if labels.len() != b {
        return Err(ClassifierError::Shape {
            expected: (b, 1),
            got: (labels.len(), 1),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= cfg.n_classes) {
        return Err(ClassifierError::InvalidLabel(bad));
    }
    let (n, d, kw) = (cfg.window_len, cfg.d_model, cfg.conv.kernel);
    let heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let fdim = cfg.fc_dim;
    let half = (kw / 2) as isize;
    let bn = b * n;
    let scale = T::one() / T::from_count(dh).sqrt();

    let (loss, clamped) = weighted_log_loss(&cache.probs, labels, weights);
    let mut g = MceParams::zeros(cfg);

    let inv_b = 1.0 / b as f64;
    let mut dlogits = cache.probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        let w = T::lit(weights[y] * inv_b);
        let row = dlogits.row_mut(i);
        row[y] -= T::one();
        row.iter_mut().for_each(|v| *v *= w);
    }
    gemm(T::one(), cache.h2.view().t(), dlogits.view(), T::zero(), g.out_w.view_mut());
    col_sums_into(&dlogits, &mut g.out_b);
    let mut dh2 = mul(dlogits.view(), params.out_w.view().t());
    for (i, v) in dh2.as_mut_slice().iter_mut().enumerate() {
        if !cache.mask.is_empty() {
            *v *= cache.mask[i];
        }
        if cache.hidden.as_slice()[i] <= T::zero() {
            *v = T::zero();
        }
    }
    gemm(T::one(), cache.cat.view().t(), dh2.view(), T::zero(), g.mlp_w.view_mut());
    col_sums_into(&dh2, &mut g.mlp_b);
    let dcat = mul(dh2.view(), params.mlp_w.view().t());

    let mut datt = vec![T::zero(); n * n];
    for (ci, (cp, cc)) in params.channels.iter().zip(&cache.channels).enumerate() {
        let gc = &mut g.channels[ci];

        let mut dfpre = Matrix::from_fn(b, fdim, |i, j| dcat.get(i, ci * fdim + j));
        for (v, &f) in dfpre.as_mut_slice().iter_mut().zip(cc.f.as_slice()) {
            if f <= T::zero() {
                *v = T::zero();
            }
        }
        gemm(T::one(), cc.ybn.view().t(), dfpre.view(), T::zero(), gc.fc_w.view_mut());
        col_sums_into(&dfpre, &mut gc.fc_b);
        let dybn = mul(dfpre.view(), cp.fc_w.view().t());

        let gamma = cp.bn_gamma.as_slice();
        let bt = T::from_count(b);
        let mut dz = Matrix::zeros(b, d);
        for j in 0..d {
            let mut sum_dy = T::zero();
            let mut sum_dy_zhat = T::zero();
            for i in 0..b {
                sum_dy += dybn.get(i, j);
                sum_dy_zhat += dybn.get(i, j) * cc.zhat.get(i, j);
            }
            gc.bn_gamma.as_mut_slice()[j] = sum_dy_zhat;
            gc.bn_beta.as_mut_slice()[j] = sum_dy;
            let k = gamma[j] * cc.inv_std[j] / bt;
            for i in 0..b {
                let v = k * (bt * dybn.get(i, j) - sum_dy - cc.zhat.get(i, j) * sum_dy_zhat);
                dz.set(i, j, v);
            }
        }

        let inv_n = T::one() / T::from_count(n);
        let dy = Matrix::from_fn(bn, d, |r, j| dz.get(r / n, j) * inv_n);
        gemm(T::one(), cc.o.view().t(), dy.view(), T::zero(), gc.wo.view_mut());
        col_sums_into(&dy, &mut gc.bo);
        let d_o = mul(dy.view(), cp.wo.view().t());

        let mut dq = Matrix::zeros(bn, d);
        let mut dk = Matrix::zeros(bn, d);
        let mut dv = Matrix::zeros(bn, d);
        for bi in 0..b {
            for h in 0..heads {
                let att = &cc.att[(bi * heads + h) * n * n..][..n * n];
                let av = View::new(att, n, n);
                let dob = d_o.block(bi * n, h * dh, n, dh);
                gemm(T::one(), dob, cc.v.block(bi * n, h * dh, n, dh).t(), T::zero(), ViewMut::new(&mut datt, n, n));
                gemm(T::one(), av.t(), dob, T::zero(), dv.block_mut(bi * n, h * dh, n, dh));
                for (drow, arow) in datt.chunks_mut(n).zip(att.chunks(n)) {
                    let dot: T = drow.iter().zip(arow).map(|(&x, &a)| x * a).sum();
                    for (x, &a) in drow.iter_mut().zip(arow) {
                        *x = a * (*x - dot);
                    }
                }
                let ds = View::new(&datt, n, n);
                gemm(scale, ds, cc.k.block(bi * n, h * dh, n, dh), T::zero(), dq.block_mut(bi * n, h * dh, n, dh));
                gemm(scale, ds.t(), cc.q.block(bi * n, h * dh, n, dh), T::zero(), dk.block_mut(bi * n, h * dh, n, dh));
            }
        }

        let mut da1 = Matrix::zeros(bn, cfg.conv.out_channels);
        for (dm, w, gw, gb) in [
            (&dq, &cp.wq, &mut gc.wq, &mut gc.bq),
            (&dk, &cp.wk, &mut gc.wk, &mut gc.bk),
            (&dv, &cp.wv, &mut gc.wv, &mut gc.bv),
        ] {
            gemm(T::one(), cc.a1.view().t(), dm.view(), T::zero(), gw.view_mut());
            col_sums_into(dm, gb);
            gemm(T::one(), dm.view(), w.view().t(), T::one(), da1.view_mut());
        }
        for (v, &a) in da1.as_mut_slice().iter_mut().zip(cc.a1.as_slice()) {
            if a <= T::zero() {
                *v = T::zero();
            }
        }
        gemm(T::one(), cc.xcol.view().t(), da1.view(), T::zero(), gc.conv_w.view_mut());
        col_sums_into(&da1, &mut gc.conv_b);
        let dxcol = mul(da1.view(), cp.conv_w.view().t());

        let mut de = Matrix::zeros(bn, d);
        for bi in 0..b {
            for t in 0..n {
                let src = dxcol.row(bi * n + t);
                for k in 0..kw {
                    let dst = t as isize + k as isize - half;
                    if (0..n as isize).contains(&dst) {
                        let row = de.row_mut(bi * n + dst as usize);
                        for (o, &v) in row.iter_mut().zip(&src[k * d..(k + 1) * d]) {
                            *o += v;
                        }
                    }
                }
            }
        }
        let gembed = gc.embed.as_mut_slice();
        for r in 0..bn {
            let xv = cc.x[r];
            let prow = de.row(r);
            for (ge, &v) in gembed.iter_mut().zip(prow) {
                *ge += xv * v;
            }
            for (gp, &v) in gc.position.row_mut(r % n).iter_mut().zip(prow) {
                *gp += v;
            }
        }
    }

    Ok(Backward { loss, clamped, grads: g })
}

/// Folds the batch statistics of `cache` into the running estimates.
pub fn update_running_stats<T: Scalar>(params: &mut MceParams<T>, cache: &Cache<T>, momentum: f64) {
    let m = T::lit(momentum);
    let keep = T::one() - m;
    let b = cache.batch;
    // Unbiased variance for the running estimate, as is conventional.
    let correction = if b > 1 { T::from_count(b) / T::from_count(b - 1) } else { T::one() };
    for (cp, cc) in params.channels.iter_mut().zip(&cache.channels) {
        for (r, &v) in cp.bn_running_mean.as_mut_slice().iter_mut().zip(&cc.batch_mean) {
            *r = keep * *r + m * v;
        }
        for (r, &v) in cp.bn_running_var.as_mut_slice().iter_mut().zip(&cc.batch_var) {
            *r = keep * *r + m * v * correction;
        }
    }
}
