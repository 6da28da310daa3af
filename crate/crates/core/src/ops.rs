//! Forward/backward pairs for the sequence heads.
//!
//! Sequence activations are `[batch, position, feature]` row-major. Every
//! backward returns exact analytic gradients; the finite-difference checker
//! in [`crate::gradcheck`] verifies each pair.
//!
//! Batch loops parallelize over disjoint output rows and parameter-gradient
//! loops sum over the batch in fixed index order, so results are
//! bit-identical regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        other => Err(Error::dimension(format!("{what} must be rank 3, got {other:?}"))),
    }
}

// ---------------------------------------------------------------------------
// Per-position linear map
// ---------------------------------------------------------------------------

/// Apply a distinct `d_out x d_in` matrix to every position:
/// `y[b, p, :] = W[p] x[b, p, :]`. Weights are stacked as `[P, d_out, d_in]`.
pub fn linear_fwd(x: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let (bsz, positions, d_in) = dims3(x, "linear input")?;
    let (wp, d_out, wd_in) = dims3(weights, "linear weights")?;
    if wp != positions || wd_in != d_in {
        return Err(Error::dimension(format!(
            "linear weights {:?} incompatible with input {:?}",
            weights.shape(),
            x.shape()
        )));
    }
    let mut out = Tensor::zeros(&[bsz, positions, d_out]);
    let xv = x.values();
    let wv = weights.values();
    out.values_mut()
        .par_chunks_mut(positions * d_out)
        .enumerate()
        .for_each(|(b, sample)| {
            for p in 0..positions {
                let xrow = &xv[(b * positions + p) * d_in..(b * positions + p + 1) * d_in];
                let wmat = &wv[p * d_out * d_in..(p + 1) * d_out * d_in];
                let orow = &mut sample[p * d_out..(p + 1) * d_out];
                for (o, wrow) in orow.iter_mut().zip(wmat.chunks_exact(d_in)) {
                    let mut acc = 0.0;
                    for (wi, xi) in wrow.iter().zip(xrow) {
                        acc += wi * xi;
                    }
                    *o = acc;
                }
            }
        });
    Ok(out)
}

/// Gradients for [`linear_fwd`]: returns `(d_input, d_weights)`.
pub fn linear_bwd(x: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (bsz, positions, d_in) = dims3(x, "linear input")?;
    let (_, d_out, _) = dims3(weights, "linear weights")?;
    let gv = grad_out.values();
    let wv = weights.values();
    let xv = x.values();

    let mut dx = Tensor::zeros(x.shape());
    dx.values_mut()
        .par_chunks_mut(positions * d_in)
        .enumerate()
        .for_each(|(b, sample)| {
            for p in 0..positions {
                let grow = &gv[(b * positions + p) * d_out..(b * positions + p + 1) * d_out];
                let wmat = &wv[p * d_out * d_in..(p + 1) * d_out * d_in];
                let drow = &mut sample[p * d_in..(p + 1) * d_in];
                for (o, wrow) in grow.iter().zip(wmat.chunks_exact(d_in)) {
                    for (di, wi) in drow.iter_mut().zip(wrow) {
                        *di += o * wi;
                    }
                }
            }
        });

    let mut dw = Tensor::zeros(weights.shape());
    dw.values_mut()
        .par_chunks_mut(d_out * d_in)
        .enumerate()
        .for_each(|(p, wmat)| {
            for b in 0..bsz {
                let grow = &gv[(b * positions + p) * d_out..(b * positions + p + 1) * d_out];
                let xrow = &xv[(b * positions + p) * d_in..(b * positions + p + 1) * d_in];
                for (go, wrow) in grow.iter().zip(wmat.chunks_exact_mut(d_in)) {
                    for (wi, xi) in wrow.iter_mut().zip(xrow) {
                        *wi += go * xi;
                    }
                }
            }
        });
    Ok((dx, dw))
}

// ---------------------------------------------------------------------------
// Per-position standardization with position-specific affine parameters
// ---------------------------------------------------------------------------

/// Saved statistics from [`seqnorm_fwd`] needed by the backward pass.
#[derive(Debug, Clone)]
pub struct SeqNormCache {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

/// Standardize each `(sample, position)` vector over its features using the
/// population standard deviation, then scale and shift with the
/// position-specific `gamma[p]`, `beta[p]`. The divisor is
/// `sqrt(variance + eps)`.
pub fn seqnorm_fwd(
    y: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, SeqNormCache)> {
    let (bsz, positions, d) = dims3(y, "seqnorm input")?;
    if gamma.shape() != [positions, d] || beta.shape() != [positions, d] {
        return Err(Error::dimension(format!(
            "seqnorm affine parameters must be [{positions}, {d}]"
        )));
    }
    let mut out = Tensor::zeros(y.shape());
    let mut mean = vec![0.0f64; bsz * positions];
    let mut rstd = vec![0.0f64; bsz * positions];
    let yv = y.values();
    let gv = gamma.values();
    let bv = beta.values();

    out.values_mut()
        .par_chunks_mut(d)
        .zip(mean.par_iter_mut())
        .zip(rstd.par_iter_mut())
        .enumerate()
        .for_each(|(row, ((orow, mu), rs))| {
            let p = row % positions;
            let yrow = &yv[row * d..(row + 1) * d];
            let m = yrow.iter().sum::<f64>() / d as f64;
            let var = yrow.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            *mu = m;
            *rs = r;
            let grow = &gv[p * d..(p + 1) * d];
            let brow = &bv[p * d..(p + 1) * d];
            for i in 0..d {
                orow[i] = (yrow[i] - m) * r * grow[i] + brow[i];
            }
        });
    Ok((out, SeqNormCache { mean, rstd }))
}

/// Gradients for [`seqnorm_fwd`]: returns `(d_input, d_gamma, d_beta)`.
pub fn seqnorm_bwd(
    y: &Tensor,
    gamma: &Tensor,
    cache: &SeqNormCache,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (bsz, positions, d) = dims3(y, "seqnorm input")?;
    let yv = y.values();
    let gv = gamma.values();
    let ov = grad_out.values();

    let mut dy = Tensor::zeros(y.shape());
    dy.values_mut()
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(row, drow)| {
            let p = row % positions;
            let yrow = &yv[row * d..(row + 1) * d];
            let grow = &gv[p * d..(p + 1) * d];
            let gout = &ov[row * d..(row + 1) * d];
            let mu = cache.mean[row];
            let rs = cache.rstd[row];
            let mut dnorm_mean = 0.0;
            let mut dnorm_xhat_mean = 0.0;
            for i in 0..d {
                let xhat = (yrow[i] - mu) * rs;
                let dnorm = grow[i] * gout[i];
                dnorm_mean += dnorm;
                dnorm_xhat_mean += dnorm * xhat;
            }
            dnorm_mean /= d as f64;
            dnorm_xhat_mean /= d as f64;
            for i in 0..d {
                let xhat = (yrow[i] - mu) * rs;
                let dnorm = grow[i] * gout[i];
                drow[i] = (dnorm - dnorm_mean - xhat * dnorm_xhat_mean) * rs;
            }
        });

    let mut dgamma = Tensor::zeros(gamma.shape());
    let mut dbeta = Tensor::zeros(gamma.shape());
    let dgv = dgamma.values_mut();
    let dbv = dbeta.values_mut();
    dgv.par_chunks_mut(d)
        .zip(dbv.par_chunks_mut(d))
        .enumerate()
        .for_each(|(p, (dg, db))| {
            for b in 0..bsz {
                let row = b * positions + p;
                let yrow = &yv[row * d..(row + 1) * d];
                let gout = &ov[row * d..(row + 1) * d];
                let mu = cache.mean[row];
                let rs = cache.rstd[row];
                for i in 0..d {
                    dg[i] += (yrow[i] - mu) * rs * gout[i];
                    db[i] += gout[i];
                }
            }
        });
    Ok((dy, dgamma, dbeta))
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

pub fn relu_fwd(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.values_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Masks by `x > 0`; the subgradient at exactly zero is zero.
pub fn relu_bwd(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(x.shape());
    for ((d, &xi), &g) in dx.values_mut().iter_mut().zip(x.values()).zip(grad_out.values()) {
        *d = if xi > 0.0 { g } else { 0.0 };
    }
    dx
}

// ---------------------------------------------------------------------------
// 1-D convolution along the position axis
// ---------------------------------------------------------------------------

/// Same-padded cross-correlation over positions with per-output-channel
/// bias. Kernels are `[C_out, C_in, k]` with odd `k`; the sequence length is
/// preserved.
pub fn conv1d_fwd(x: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (bsz, positions, c_in) = dims3(x, "conv input")?;
    let (c_out, kc_in, k) = dims3(kernels, "conv kernels")?;
    if k % 2 == 0 {
        return Err(Error::invalid(format!("conv kernel size must be odd, got {k}")));
    }
    if kc_in != c_in {
        return Err(Error::dimension(format!(
            "conv kernels expect {kc_in} input channels, input has {c_in}"
        )));
    }
    if bias.shape() != [c_out] {
        return Err(Error::dimension("conv bias must be [c_out]"));
    }
    let pad = (k - 1) / 2;
    let xv = x.values();
    let kv = kernels.values();
    let bv = bias.values();
    let mut out = Tensor::zeros(&[bsz, positions, c_out]);
    out.values_mut()
        .par_chunks_mut(positions * c_out)
        .enumerate()
        .for_each(|(b, sample)| {
            let xs = &xv[b * positions * c_in..(b + 1) * positions * c_in];
            for t in 0..positions {
                let orow = &mut sample[t * c_out..(t + 1) * c_out];
                for (co, o) in orow.iter_mut().enumerate() {
                    let mut acc = bv[co];
                    for dk in 0..k {
                        let s = t + dk;
                        if s < pad || s - pad >= positions {
                            continue;
                        }
                        let s = s - pad;
                        let xrow = &xs[s * c_in..(s + 1) * c_in];
                        let krow = &kv[(co * c_in) * k + dk..];
                        for (ci, &xi) in xrow.iter().enumerate() {
                            acc += xi * krow[ci * k];
                        }
                    }
                    *o = acc;
                }
            }
        });
    Ok(out)
}

/// Gradients for [`conv1d_fwd`]: returns `(d_input, d_kernels, d_bias)`.
pub fn conv1d_bwd(
    x: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (bsz, positions, c_in) = dims3(x, "conv input")?;
    let (c_out, _, k) = dims3(kernels, "conv kernels")?;
    let pad = (k - 1) / 2;
    let xv = x.values();
    let kv = kernels.values();
    let gv = grad_out.values();

    let mut dx = Tensor::zeros(x.shape());
    dx.values_mut()
        .par_chunks_mut(positions * c_in)
        .enumerate()
        .for_each(|(b, sample)| {
            let gs = &gv[b * positions * c_out..(b + 1) * positions * c_out];
            for s in 0..positions {
                let drow = &mut sample[s * c_in..(s + 1) * c_in];
                for dk in 0..k {
                    // forward read position s = t + dk - pad  =>  t = s + pad - dk
                    let t = s + pad;
                    if t < dk || t - dk >= positions {
                        continue;
                    }
                    let t = t - dk;
                    let grow = &gs[t * c_out..(t + 1) * c_out];
                    for (co, &g) in grow.iter().enumerate() {
                        let krow = &kv[(co * c_in) * k + dk..];
                        for (ci, di) in drow.iter_mut().enumerate() {
                            *di += g * krow[ci * k];
                        }
                    }
                }
            }
        });

    let mut dkern = Tensor::zeros(kernels.shape());
    dkern
        .values_mut()
        .par_chunks_mut(c_in * k)
        .enumerate()
        .for_each(|(co, dslab)| {
            for b in 0..bsz {
                let xs = &xv[b * positions * c_in..(b + 1) * positions * c_in];
                let gs = &gv[b * positions * c_out..(b + 1) * positions * c_out];
                for t in 0..positions {
                    let g = gs[t * c_out + co];
                    if g == 0.0 {
                        continue;
                    }
                    for dk in 0..k {
                        let s = t + dk;
                        if s < pad || s - pad >= positions {
                            continue;
                        }
                        let s = s - pad;
                        let xrow = &xs[s * c_in..(s + 1) * c_in];
                        for (ci, &xi) in xrow.iter().enumerate() {
                            dslab[ci * k + dk] += g * xi;
                        }
                    }
                }
            }
        });

    let mut dbias = Tensor::zeros(&[c_out]);
    let db = dbias.values_mut();
    for b in 0..bsz {
        for t in 0..positions {
            let grow = &gv[(b * positions + t) * c_out..(b * positions + t + 1) * c_out];
            for (co, &g) in grow.iter().enumerate() {
                db[co] += g;
            }
        }
    }
    Ok((dx, dkern, dbias))
}

// ---------------------------------------------------------------------------
// Mean pooling over positions
// ---------------------------------------------------------------------------

pub fn mean_pool_fwd(x: &Tensor) -> Result<Tensor> {
    let (bsz, positions, d) = dims3(x, "mean_pool input")?;
    let mut out = Tensor::zeros(&[bsz, d]);
    let xv = x.values();
    let scale = 1.0 / positions as f64;
    for b in 0..bsz {
        let orow = &mut out.values_mut()[b * d..(b + 1) * d];
        for p in 0..positions {
            let xrow = &xv[(b * positions + p) * d..(b * positions + p + 1) * d];
            for (o, &v) in orow.iter_mut().zip(xrow) {
                *o += v;
            }
        }
        for o in orow.iter_mut() {
            *o *= scale;
        }
    }
    Ok(out)
}

pub fn mean_pool_bwd(bsz: usize, positions: usize, grad_out: &Tensor) -> Result<Tensor> {
    let d = grad_out.numel() / bsz;
    let mut dx = Tensor::zeros(&[bsz, positions, d]);
    let scale = 1.0 / positions as f64;
    let gv = grad_out.values();
    for b in 0..bsz {
        let grow = &gv[b * d..(b + 1) * d];
        for p in 0..positions {
            let drow =
                &mut dx.values_mut()[(b * positions + p) * d..(b * positions + p + 1) * d];
            for (o, &g) in drow.iter_mut().zip(grow) {
                *o = g * scale;
            }
        }
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// Sinusoidal positional encodings
// ---------------------------------------------------------------------------

/// Deterministic `(hops + 1) x d` encoding: dimension `m` holds
/// `sin(l / 10000^(2n/d))` for even `m = 2n` and the matching cosine for odd
/// `m = 2n + 1` (0-based `m`, `n = m / 2`). Node-independent; added
/// elementwise to the normalized sequence.
pub fn positional_encoding(hops: usize, d: usize) -> Tensor {
    let positions = hops + 1;
    let mut out = Tensor::zeros(&[positions, d]);
    let v = out.values_mut();
    for l in 0..positions {
        for m in 0..d {
            let n = (m / 2) as f64;
            let angle = l as f64 / 10000f64.powf(2.0 * n / d as f64);
            v[l * d + m] = if m % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

/// Broadcast-add a `[P, D]` table onto a `[B, P, D]` tensor. The backward is
/// the identity on the sequence gradient (the table is not learned).
pub fn add_positional(x: &Tensor, table: &Tensor) -> Result<Tensor> {
    let (bsz, positions, d) = dims3(x, "sequence")?;
    if table.shape() != [positions, d] {
        return Err(Error::dimension("positional table shape mismatch"));
    }
    let mut out = x.clone();
    let tv = table.values();
    for b in 0..bsz {
        let block = &mut out.values_mut()[b * positions * d..(b + 1) * positions * d];
        for (o, &t) in block.iter_mut().zip(tv) {
            *o += t;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Learnable-query attention over positions
// ---------------------------------------------------------------------------

/// Softmax over positions of `<k[b, p, :], q>` (max-subtracted), then the
/// convex combination of position vectors. Returns `(r, alpha)` with
/// `r: [B, D]` and `alpha: [B, P]`; each alpha row sums to 1.
pub fn query_attention_fwd(kseq: &Tensor, q: &Tensor) -> Result<(Tensor, Tensor)> {
    let (bsz, positions, d) = dims3(kseq, "attention keys")?;
    if q.shape() != [d] {
        return Err(Error::dimension(format!(
            "query must be [{d}], got {:?}",
            q.shape()
        )));
    }
    let kv = kseq.values();
    let qv = q.values();
    let mut r = Tensor::zeros(&[bsz, d]);
    let mut alpha = Tensor::zeros(&[bsz, positions]);
    r.values_mut()
        .par_chunks_mut(d)
        .zip(alpha.values_mut().par_chunks_mut(positions))
        .enumerate()
        .for_each(|(b, (rrow, arow))| {
            let ks = &kv[b * positions * d..(b + 1) * positions * d];
            let mut max_logit = f64::NEG_INFINITY;
            for p in 0..positions {
                let mut logit = 0.0;
                for i in 0..d {
                    logit += ks[p * d + i] * qv[i];
                }
                arow[p] = logit;
                max_logit = max_logit.max(logit);
            }
            let mut total = 0.0;
            for a in arow.iter_mut() {
                *a = (*a - max_logit).exp();
                total += *a;
            }
            for a in arow.iter_mut() {
                *a /= total;
            }
            for p in 0..positions {
                let w = arow[p];
                for i in 0..d {
                    rrow[i] += w * ks[p * d + i];
                }
            }
        });
    Ok((r, alpha))
}

/// Gradients for [`query_attention_fwd`] given `d_r`; returns
/// `(d_kseq, d_q)`. Gradients flow only through `r` (alpha is a diagnostic
/// output).
pub fn query_attention_bwd(
    kseq: &Tensor,
    q: &Tensor,
    alpha: &Tensor,
    grad_r: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (bsz, positions, d) = dims3(kseq, "attention keys")?;
    let kv = kseq.values();
    let qv = q.values();
    let av = alpha.values();
    let gv = grad_r.values();

    let mut dk = Tensor::zeros(kseq.shape());
    let mut dq_partials = vec![0.0f64; bsz * d];
    dk.values_mut()
        .par_chunks_mut(positions * d)
        .zip(dq_partials.par_chunks_mut(d))
        .enumerate()
        .for_each(|(b, (dks, dqp))| {
            let ks = &kv[b * positions * d..(b + 1) * positions * d];
            let arow = &av[b * positions..(b + 1) * positions];
            let grow = &gv[b * d..(b + 1) * d];
            let mut dalpha = vec![0.0f64; positions];
            for p in 0..positions {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += grow[i] * ks[p * d + i];
                }
                dalpha[p] = acc;
            }
            let inner: f64 = arow.iter().zip(&dalpha).map(|(&a, &da)| a * da).sum();
            for p in 0..positions {
                let dlogit = arow[p] * (dalpha[p] - inner);
                for i in 0..d {
                    // direct route through r plus the softmax-logit route
                    dks[p * d + i] += arow[p] * grow[i] + dlogit * qv[i];
                    dqp[i] += dlogit * ks[p * d + i];
                }
            }
        });
    let mut dq = Tensor::zeros(&[d]);
    for b in 0..bsz {
        for (o, &v) in dq.values_mut().iter_mut().zip(&dq_partials[b * d..(b + 1) * d]) {
            *o += v;
        }
    }
    Ok((dk, dq))
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean-over-batch cross-entropy with log-sum-exp stabilization. Returns the
/// loss and the softmax probabilities needed by the backward pass.
pub fn softmax_xent_fwd(logits: &Tensor, targets: &[u32]) -> Result<(f64, Tensor)> {
    let (bsz, classes) = match logits.shape() {
        [b, c] => (*b, *c),
        other => return Err(Error::dimension(format!("logits must be [B, C], got {other:?}"))),
    };
    if targets.len() != bsz {
        return Err(Error::dimension("target count != batch size"));
    }
    let lv = logits.values();
    let mut probs = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    for b in 0..bsz {
        let row = &lv[b * classes..(b + 1) * classes];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut total = 0.0;
        for &v in row {
            total += (v - max).exp();
        }
        let log_z = max + total.ln();
        let target = targets[b] as usize;
        if target >= classes {
            return Err(Error::invalid(format!("target class {target} out of range")));
        }
        loss -= row[target] - log_z;
        let prow = &mut probs.values_mut()[b * classes..(b + 1) * classes];
        for (pv, &v) in prow.iter_mut().zip(row) {
            *pv = (v - log_z).exp();
        }
    }
    Ok((loss / bsz as f64, probs))
}

pub fn softmax_xent_bwd(probs: &Tensor, targets: &[u32]) -> Tensor {
    let bsz = probs.shape()[0];
    let classes = probs.shape()[1];
    let mut dl = probs.clone();
    let scale = 1.0 / bsz as f64;
    for b in 0..bsz {
        let row = &mut dl.values_mut()[b * classes..(b + 1) * classes];
        row[targets[b] as usize] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    dl
}

/// Elementwise sigmoid binary cross-entropy, averaged over every
/// `(sample, class)` cell, in the overflow-safe form
/// `max(z, 0) - z y + ln(1 + exp(-|z|))`.
pub fn bce_fwd(logits: &Tensor, targets: &[u8]) -> Result<f64> {
    if logits.numel() != targets.len() {
        return Err(Error::dimension("BCE target count != logit count"));
    }
    let mut loss = 0.0;
    for (&z, &y) in logits.values().iter().zip(targets) {
        let y = y as f64;
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    }
    Ok(loss / targets.len() as f64)
}

pub fn bce_bwd(logits: &Tensor, targets: &[u8]) -> Tensor {
    let mut dl = Tensor::zeros(logits.shape());
    let scale = 1.0 / targets.len() as f64;
    for ((d, &z), &y) in dl.values_mut().iter_mut().zip(logits.values()).zip(targets) {
        let sigma = 1.0 / (1.0 + (-z).exp());
        *d = (sigma - y as f64) * scale;
    }
    dl
}

// ---------------------------------------------------------------------------
// Inverted dropout
// ---------------------------------------------------------------------------

/// Element scale factors recorded by [`dropout_fwd`] for the backward pass.
/// `None` means the pass was an identity (inference or rate 0).
pub type DropoutMask = Option<Vec<f64>>;

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` so the
/// expectation matches the identity. The mask is drawn sequentially from the
/// caller's RNG, keeping runs reproducible.
pub fn dropout_fwd(
    x: &Tensor,
    rate: f64,
    training: bool,
    rng: &mut impl rand::Rng,
) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale })
        .collect();
    let mut out = x.clone();
    for (o, &m) in out.values_mut().iter_mut().zip(&mask) {
        *o *= m;
    }
    Ok((out, Some(mask)))
}

pub fn dropout_bwd(mask: &DropoutMask, grad_out: &Tensor) -> Tensor {
    match mask {
        None => grad_out.clone(),
        Some(m) => {
            let mut dx = grad_out.clone();
            for (d, &s) in dx.values_mut().iter_mut().zip(m) {
                *d *= s;
            }
            dx
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn tensor3(b: usize, p: usize, d: usize, vals: Vec<f64>) -> Tensor {
        Tensor::from_values(&[b, p, d], vals).unwrap()
    }

    fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let numel = shape.iter().product();
        let vals = (0..numel).map(|_| rng.gen_range(-1.5..1.5)).collect();
        Tensor::from_values(shape, vals).unwrap()
    }

    #[test]
    fn linear_identity_weights() {
        let x = tensor3(2, 2, 3, (0..12).map(|v| v as f64).collect());
        let mut w = Tensor::zeros(&[2, 3, 3]);
        for p in 0..2 {
            for i in 0..3 {
                w.values_mut()[p * 9 + i * 3 + i] = 1.0;
            }
        }
        let y = linear_fwd(&x, &w).unwrap();
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn linear_dot_product_example() {
        let x = tensor3(1, 1, 2, vec![3.0, 4.0]);
        let w = Tensor::from_values(&[1, 1, 2], vec![1.0, 1.0]).unwrap();
        let y = linear_fwd(&x, &w).unwrap();
        assert_eq!(y.values(), &[7.0]);
    }

    #[test]
    fn seqnorm_constant_vector_is_zero() {
        let y = tensor3(1, 1, 4, vec![2.5; 4]);
        let gamma = Tensor::scalar_fill(&[1, 4], 1.0);
        let beta = Tensor::zeros(&[1, 4]);
        let (o, _) = seqnorm_fwd(&y, &gamma, &beta, 1e-5).unwrap();
        for &v in o.values() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn seqnorm_hand_example() {
        let y = tensor3(1, 1, 2, vec![1.0, 3.0]);
        let gamma = Tensor::scalar_fill(&[1, 2], 1.0);
        let beta = Tensor::zeros(&[1, 2]);
        let (o, cache) = seqnorm_fwd(&y, &gamma, &beta, 0.0).unwrap();
        assert_eq!(cache.mean[0], 2.0);
        assert_eq!(o.values(), &[-1.0, 1.0]);
    }

    #[test]
    fn seqnorm_standardizes_large_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 16;
        let x: Vec<f64> = (0..2 * 3 * d).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let y = tensor3(2, 3, d, x);
        let gamma = Tensor::scalar_fill(&[3, d], 1.0);
        let beta = Tensor::zeros(&[3, d]);
        let (o, _) = seqnorm_fwd(&y, &gamma, &beta, 1e-5).unwrap();
        for row in o.values().chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::from_values(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_fwd(&x).values(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::from_values(&[3], vec![-5.0, -1.0, -0.1]).unwrap();
        assert_eq!(relu_fwd(&neg).values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_k1_identity_channel_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&[2, 4, 3], &mut rng);
        let mut kern = Tensor::zeros(&[3, 3, 1]);
        for c in 0..3 {
            kern.values_mut()[c * 3 + c] = 1.0;
        }
        let bias = Tensor::zeros(&[3]);
        let y = conv1d_fwd(&x, &kern, &bias).unwrap();
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn conv_unit_impulse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&[1, 5, 1], &mut rng);
        let kern = Tensor::from_values(&[1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let bias = Tensor::zeros(&[1]);
        let y = conv1d_fwd(&x, &kern, &bias).unwrap();
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let x = Tensor::zeros(&[1, 4, 1]);
        let kern = Tensor::zeros(&[1, 1, 2]);
        let bias = Tensor::zeros(&[1]);
        assert!(conv1d_fwd(&x, &kern, &bias).is_err());
    }

    #[test]
    fn conv_preserves_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in [3usize, 5] {
            let x = random_tensor(&[2, 6, 2], &mut rng);
            let kern = random_tensor(&[4, 2, k], &mut rng);
            let bias = random_tensor(&[4], &mut rng);
            let y = conv1d_fwd(&x, &kern, &bias).unwrap();
            assert_eq!(y.shape(), &[2, 6, 4]);
        }
    }

    #[test]
    fn mean_pool_examples() {
        let x = tensor3(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let r = mean_pool_fwd(&x).unwrap();
        assert_eq!(r.values(), &[2.0, 3.0]);
        let constant = tensor3(1, 3, 2, vec![7.0, -1.0, 7.0, -1.0, 7.0, -1.0]);
        assert_eq!(mean_pool_fwd(&constant).unwrap().values(), &[7.0, -1.0]);
    }

    #[test]
    fn positional_encoding_row_zero() {
        let pe = positional_encoding(4, 6);
        for m in 0..6 {
            let expected = if m % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(pe.values()[m], expected);
        }
    }

    #[test]
    fn positional_encoding_small_case() {
        let pe = positional_encoding(1, 2);
        assert!((pe.values()[2] - 1f64.sin()).abs() < 1e-15);
        assert!((pe.values()[3] - 1f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn positional_encoding_bounded_and_distinct() {
        let pe = positional_encoding(10_000, 2);
        for &v in pe.values() {
            assert!((-1.0..=1.0).contains(&v));
        }
        let mut rows: Vec<(u64, u64)> = pe
            .values()
            .chunks_exact(2)
            .map(|r| (r[0].to_bits(), r[1].to_bits()))
            .collect();
        rows.sort_unstable();
        let before = rows.len();
        rows.dedup();
        assert_eq!(rows.len(), before, "positional rows must be pairwise distinct");
    }

    #[test]
    fn attention_identical_positions_gives_uniform_alpha() {
        let row = vec![0.3, -0.7, 1.1];
        let mut vals = Vec::new();
        for _ in 0..4 {
            vals.extend_from_slice(&row);
        }
        let kseq = tensor3(1, 4, 3, vals);
        let q = Tensor::from_values(&[3], vec![0.5, 1.0, -2.0]).unwrap();
        let (r, alpha) = query_attention_fwd(&kseq, &q).unwrap();
        for &a in alpha.values() {
            assert!((a - 0.25).abs() < 1e-15);
        }
        for (got, want) in r.values().iter().zip(&row) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_zero_query_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let kseq = random_tensor(&[2, 5, 3], &mut rng);
        let q = Tensor::zeros(&[3]);
        let (_, alpha) = query_attention_fwd(&kseq, &q).unwrap();
        for &a in alpha.values() {
            assert!((a - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_alpha_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let kseq = random_tensor(&[3, 6, 4], &mut rng);
            let q = random_tensor(&[4], &mut rng);
            let (_, alpha) = query_attention_fwd(&kseq, &q).unwrap();
            for row in alpha.values().chunks_exact(6) {
                let total: f64 = row.iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&a| a > 0.0 && a < 1.0));
            }
        }
    }

    #[test]
    fn attention_is_position_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (b, p, d) = (2, 5, 4);
        let kseq = random_tensor(&[b, p, d], &mut rng);
        let q = random_tensor(&[d], &mut rng);
        let (r, _) = query_attention_fwd(&kseq, &q).unwrap();

        let mut perm: Vec<usize> = (0..p).collect();
        perm.shuffle(&mut rng);
        let mut shuffled = Tensor::zeros(&[b, p, d]);
        for bi in 0..b {
            for (dst, &src) in perm.iter().enumerate() {
                let from = (bi * p + src) * d;
                let to = (bi * p + dst) * d;
                let row = kseq.values()[from..from + d].to_vec();
                shuffled.values_mut()[to..to + d].copy_from_slice(&row);
            }
        }
        let (r2, _) = query_attention_fwd(&shuffled, &q).unwrap();
        for (a, b) in r.values().iter().zip(r2.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_is_not_position_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (b, p, c) = (1, 6, 3);
        let x = random_tensor(&[b, p, c], &mut rng);
        let kern = random_tensor(&[c, c, 3], &mut rng);
        let bias = Tensor::zeros(&[c]);
        let base = conv1d_fwd(&x, &kern, &bias).unwrap();
        let mut found = false;
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..p).collect();
            perm.shuffle(&mut rng);
            let mut shuffled = Tensor::zeros(&[b, p, c]);
            for (dst, &src) in perm.iter().enumerate() {
                let row = x.values()[src * c..(src + 1) * c].to_vec();
                shuffled.values_mut()[dst * c..(dst + 1) * c].copy_from_slice(&row);
            }
            let permuted = conv1d_fwd(&shuffled, &kern, &bias).unwrap();
            let diff = base
                .values()
                .iter()
                .zip(permuted.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if diff > 1e-3 {
                found = true;
                break;
            }
        }
        assert!(found, "some permutation must change the conv output");
    }

    #[test]
    fn xent_uniform_logits_is_ln_c() {
        for c in [2usize, 5, 11] {
            let logits = Tensor::zeros(&[3, c]);
            let (loss, _) = softmax_xent_fwd(&logits, &[0, 1, 0]).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn xent_confident_correct_logit_drives_loss_to_zero() {
        let mut logits = Tensor::zeros(&[1, 4]);
        logits.values_mut()[2] = 50.0;
        let (loss, _) = softmax_xent_fwd(&logits, &[2]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn bce_matches_hand_computation() {
        let logits = Tensor::from_values(&[1, 2], vec![0.0, 2.0]).unwrap();
        let loss = bce_fwd(&logits, &[0, 1]).unwrap();
        let expected = (2f64.ln() + (1.0 + (-2f64).exp()).ln()) / 2.0;
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_tensor(&[2, 3, 4], &mut rng);
        let (y, mask) = dropout_fwd(&x, 0.0, true, &mut rng).unwrap();
        assert_eq!(y.values(), x.values());
        assert!(mask.is_none());
        let (y, mask) = dropout_fwd(&x, 0.9, false, &mut rng).unwrap();
        assert_eq!(y.values(), x.values());
        assert!(mask.is_none());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::scalar_fill(&[100], 1.0);
        let rate = 0.3;
        let trials = 1000; // 1000 trials x 100 elements = 1e5 samples
        let mut total = 0.0;
        for _ in 0..trials {
            let (y, _) = dropout_fwd(&x, rate, true, &mut rng).unwrap();
            total += y.values().iter().sum::<f64>();
        }
        let mean = total / (trials as f64 * 100.0);
        assert!((mean - 1.0).abs() < 0.01, "mean {mean} drifted more than 1%");
    }
}
