//! Forward ops and their paired backwards.
//!
//! Backwards are pure: they take the saved forward inputs plus the upstream
//! gradient and return fresh tensors. Accumulation into `Parameter::grad` is
//! the caller's job, which keeps the summation order explicit and repeatable.

use super::{NumericsError, Result, Tensor};

/// `a [m,k] · b [k,n] -> [m,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2("matmul", a)?;
    let (k2, n) = dims2("matmul", b)?;
    if k != k2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    for i in 0..m {
        for kk in 0..k {
            let av = ad[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[kk * n..(kk + 1) * n];
            let orow = &mut od[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Ok(out)
}

/// `a [m,k] · b [n,k]ᵀ -> [m,n]` without materializing the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2("matmul_nt", a)?;
    let (n, k2) = dims2("matmul_nt", b)?;
    if k != k2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul_nt",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for kk in 0..k {
                acc += arow[kk] * brow[kk];
            }
            od[i * n + j] = acc;
        }
    }
    Ok(out)
}

/// `a [k,m]ᵀ · b [k,n] -> [m,n]` without materializing the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = dims2("matmul_tn", a)?;
    let (k2, n) = dims2("matmul_tn", b)?;
    if k != k2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul_tn",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    for kk in 0..k {
        let arow = &ad[kk * m..(kk + 1) * m];
        let brow = &bd[kk * n..(kk + 1) * n];
        for i in 0..m {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut od[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Ok(out)
}

/// Gradients of `matmul(a, b)` given upstream `dout [m,n]`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dout: &Tensor) -> Result<(Tensor, Tensor)> {
    let da = matmul_nt(dout, b)?;
    let db = matmul_tn(a, dout)?;
    Ok((da, db))
}

/// Broadcast-add a bias row over each row of `x [m,n]`.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = dims2("add_bias", x)?;
    if bias.numel() != n {
        return Err(NumericsError::ShapeMismatch {
            op: "add_bias",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let mut out = x.clone();
    let bd = bias.data();
    let od = out.data_mut();
    for i in 0..m {
        for j in 0..n {
            od[i * n + j] += bd[j];
        }
    }
    Ok(out)
}

/// Bias gradient for `add_bias`: column sums of `dout`. The input gradient
/// is `dout` itself, so only the bias part is returned.
pub fn add_bias_backward(dout: &Tensor) -> Result<Tensor> {
    let (m, n) = dims2("add_bias_backward", dout)?;
    let mut db = Tensor::zeros(&[n]);
    let dd = dout.data();
    let bd = db.data_mut();
    for i in 0..m {
        for j in 0..n {
            bd[j] += dd[i * n + j];
        }
    }
    Ok(db)
}

/// Elementwise sum of two same-shape tensors (residual connections).
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "add",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = a.clone();
    let bd = b.data();
    for (o, bv) in out.data_mut().iter_mut().zip(bd) {
        *o += bv;
    }
    Ok(out)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044715;

/// GELU with the tanh approximation, elementwise.
pub fn gelu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        let u = GELU_C * (*v + GELU_K * *v * *v * *v);
        *v = 0.5 * *v * (1.0 + u.tanh());
    }
    out
}

pub fn gelu_backward(x: &Tensor, dout: &Tensor) -> Result<Tensor> {
    if x.shape() != dout.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "gelu_backward",
            lhs: x.shape().to_vec(),
            rhs: dout.shape().to_vec(),
        });
    }
    let mut dx = dout.clone();
    for (g, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
        let u = GELU_C * (xv + GELU_K * xv * xv * xv);
        let t = u.tanh();
        let du = GELU_C * (1.0 + 3.0 * GELU_K * xv * xv);
        let d = 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du;
        *g *= d;
    }
    Ok(dx)
}

/// Per-row layer normalization: `gamma * (x - mean) / sqrt(var + eps) + beta`.
/// Variance is the biased (divide by n) estimate.
pub fn layernorm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (m, n) = dims2("layernorm", x)?;
    if gamma.numel() != n || beta.numel() != n {
        return Err(NumericsError::ShapeMismatch {
            op: "layernorm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let od = out.data_mut();
    for i in 0..m {
        let row = &xd[i * n..(i + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..n {
            od[i * n + j] = gd[j] * (row[j] - mean) * inv + bd[j];
        }
    }
    Ok(out)
}

/// Gradients of `layernorm` wrt input, gamma, beta.
pub fn layernorm_backward(
    x: &Tensor,
    gamma: &Tensor,
    eps: f64,
    dout: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (m, n) = dims2("layernorm_backward", x)?;
    if dout.shape() != x.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "layernorm_backward",
            lhs: x.shape().to_vec(),
            rhs: dout.shape().to_vec(),
        });
    }
    let mut dx = Tensor::zeros(&[m, n]);
    let mut dgamma = Tensor::zeros(&[n]);
    let mut dbeta = Tensor::zeros(&[n]);
    let xd = x.data();
    let gd = gamma.data();
    let dd = dout.data();
    for i in 0..m {
        let row = &xd[i * n..(i + 1) * n];
        let drow = &dd[i * n..(i + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();

        // xhat and the two row means the input gradient needs.
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        let mut xhat = vec![0.0; n];
        let mut dxhat = vec![0.0; n];
        for j in 0..n {
            xhat[j] = (row[j] - mean) * inv;
            dxhat[j] = drow[j] * gd[j];
            sum_dxhat += dxhat[j];
            sum_dxhat_xhat += dxhat[j] * xhat[j];
        }
        let mean_dxhat = sum_dxhat / n as f64;
        let mean_dxhat_xhat = sum_dxhat_xhat / n as f64;
        for j in 0..n {
            dx.data_mut()[i * n + j] =
                inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
            dgamma.data_mut()[j] += drow[j] * xhat[j];
            dbeta.data_mut()[j] += drow[j];
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (m, n) = dims2("softmax_rows", x)?;
    let mut out = x.clone();
    let od = out.data_mut();
    for i in 0..m {
        let row = &mut od[i * n..(i + 1) * n];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

/// Gradient of `softmax_rows` given its output `y` and upstream `dout`.
pub fn softmax_backward(y: &Tensor, dout: &Tensor) -> Result<Tensor> {
    let (m, n) = dims2("softmax_backward", y)?;
    if dout.shape() != y.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "softmax_backward",
            lhs: y.shape().to_vec(),
            rhs: dout.shape().to_vec(),
        });
    }
    let mut dx = Tensor::zeros(&[m, n]);
    let yd = y.data();
    let dd = dout.data();
    let xd = dx.data_mut();
    for i in 0..m {
        let yrow = &yd[i * n..(i + 1) * n];
        let drow = &dd[i * n..(i + 1) * n];
        let dot: f64 = yrow.iter().zip(drow).map(|(a, b)| a * b).sum();
        for j in 0..n {
            xd[i * n + j] = yrow[j] * (drow[j] - dot);
        }
    }
    Ok(dx)
}

/// Gather rows of an embedding table: `table [v,d]`, `ids [n]` -> `[n,d]`.
pub fn embedding_gather(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let (v, d) = dims2("embedding_gather", table)?;
    let mut out = Tensor::zeros(&[ids.len(), d]);
    let td = table.data();
    let od = out.data_mut();
    for (i, &id) in ids.iter().enumerate() {
        if id >= v {
            return Err(NumericsError::TargetOutOfRange {
                row: i,
                target: id,
                vocab: v,
            });
        }
        od[i * d..(i + 1) * d].copy_from_slice(&td[id * d..(id + 1) * d]);
    }
    Ok(out)
}

/// Scatter-add the upstream gradient back into a zeroed table gradient.
pub fn embedding_gather_backward(
    table_shape: &[usize],
    ids: &[usize],
    dout: &Tensor,
) -> Result<Tensor> {
    let mut dtable = Tensor::zeros(table_shape);
    let d = table_shape[1];
    let dd = dout.data();
    let td = dtable.data_mut();
    for (i, &id) in ids.iter().enumerate() {
        for j in 0..d {
            td[id * d + j] += dd[i * d + j];
        }
    }
    Ok(dtable)
}

/// Fused softmax + cross-entropy, averaged over unmasked rows.
///
/// `mask[i] == false` drops row `i` from the loss entirely. Returns the mean
/// loss and the full softmax probabilities (saved for the backward).
pub fn softmax_cross_entropy(
    logits: &Tensor,
    targets: &[usize],
    mask: &[bool],
) -> Result<(f64, Tensor)> {
    let (m, n) = dims2("softmax_cross_entropy", logits)?;
    let probs = softmax_rows(logits)?;
    let active = mask.iter().filter(|&&b| b).count();
    if active == 0 {
        return Err(NumericsError::AllRowsMasked);
    }
    let mut loss = 0.0;
    for i in 0..m {
        if !mask[i] {
            continue;
        }
        let t = targets[i];
        if t >= n {
            return Err(NumericsError::TargetOutOfRange {
                row: i,
                target: t,
                vocab: n,
            });
        }
        loss -= probs.data()[i * n + t].ln();
    }
    Ok((loss / active as f64, probs))
}

/// Logit gradient for `softmax_cross_entropy`, from the saved probabilities.
pub fn softmax_cross_entropy_backward(
    probs: &Tensor,
    targets: &[usize],
    mask: &[bool],
) -> Result<Tensor> {
    let (m, n) = dims2("softmax_cross_entropy_backward", probs)?;
    let active = mask.iter().filter(|&&b| b).count();
    if active == 0 {
        return Err(NumericsError::AllRowsMasked);
    }
    let scale = 1.0 / active as f64;
    let mut dlogits = Tensor::zeros(&[m, n]);
    let pd = probs.data();
    let dd = dlogits.data_mut();
    for i in 0..m {
        if !mask[i] {
            continue;
        }
        for j in 0..n {
            dd[i * n + j] = pd[i * n + j] * scale;
        }
        dd[i * n + targets[i]] -= scale;
    }
    Ok(dlogits)
}

/// Cross entropy against label-smoothed targets: each masked row's target
/// distribution is `(1-eps)` on the label plus `eps/n` spread over the
/// whole vocabulary. Smoothing bounds how far apart trained logits can
/// drift, which keeps a trained model soft enough to be redirected later.
pub fn softmax_cross_entropy_smoothed(
    logits: &Tensor,
    targets: &[usize],
    mask: &[bool],
    eps: f64,
) -> Result<(f64, Tensor)> {
    let (m, n) = dims2("softmax_cross_entropy_smoothed", logits)?;
    let probs = softmax_rows(logits)?;
    let active = mask.iter().filter(|&&b| b).count();
    if active == 0 {
        return Err(NumericsError::AllRowsMasked);
    }
    let uniform = eps / n as f64;
    let mut loss = 0.0;
    for i in 0..m {
        if !mask[i] {
            continue;
        }
        let t = targets[i];
        if t >= n {
            return Err(NumericsError::TargetOutOfRange {
                row: i,
                target: t,
                vocab: n,
            });
        }
        let row = &probs.data()[i * n..(i + 1) * n];
        loss -= (1.0 - eps) * row[t].ln();
        for &p in row {
            loss -= uniform * p.ln();
        }
    }
    Ok((loss / active as f64, probs))
}

/// Logit gradient for `softmax_cross_entropy_smoothed`.
pub fn softmax_cross_entropy_smoothed_backward(
    probs: &Tensor,
    targets: &[usize],
    mask: &[bool],
    eps: f64,
) -> Result<Tensor> {
    let (m, n) = dims2("softmax_cross_entropy_smoothed_backward", probs)?;
    let active = mask.iter().filter(|&&b| b).count();
    if active == 0 {
        return Err(NumericsError::AllRowsMasked);
    }
    let scale = 1.0 / active as f64;
    let uniform = eps / n as f64;
    let mut dlogits = Tensor::zeros(&[m, n]);
    let pd = probs.data();
    let dd = dlogits.data_mut();
    for i in 0..m {
        if !mask[i] {
            continue;
        }
        for j in 0..n {
            dd[i * n + j] = (pd[i * n + j] - uniform) * scale;
        }
        dd[i * n + targets[i]] -= (1.0 - eps) * scale;
    }
    Ok(dlogits)
}

/// Scale every element in place.
pub fn scale_inplace(x: &mut Tensor, s: f64) {
    for v in x.data_mut() {
        *v *= s;
    }
}

/// Accumulate `src` into `dst` elementwise.
pub fn accumulate(dst: &mut Tensor, src: &Tensor) -> Result<()> {
    if dst.shape() != src.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "accumulate",
            lhs: dst.shape().to_vec(),
            rhs: src.shape().to_vec(),
        });
    }
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
    Ok(())
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(NumericsError::Rank {
            op,
            expected: 2,
            shape: t.shape().to_vec(),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_known_product() {
        let a = t2(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t2(&[3, 2], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = t2(&[2, 3], &[0.0; 6]);
        let b = t2(&[2, 2], &[0.0; 4]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn transpose_variants_match_explicit_transpose() {
        let a = t2(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 4.0, -1.0]);
        let b = t2(&[4, 3], &[2.0, 1.0, 0.0, -1.0, 3.0, 2.0, 0.5, 0.5, 0.5, 1.0, -1.0, 1.0]);
        // a·bᵀ via matmul against hand-transposed b
        let bt = t2(
            &[3, 4],
            &[2.0, -1.0, 0.5, 1.0, 1.0, 3.0, 0.5, -1.0, 0.0, 2.0, 0.5, 1.0],
        );
        assert_eq!(
            matmul_nt(&a, &b).unwrap().data(),
            matmul(&a, &bt).unwrap().data()
        );

        let c = t2(&[2, 4], &[1.0, 0.0, 2.0, -1.0, 3.0, 1.0, 0.0, 2.0]);
        let at = t2(&[3, 2], &[1.0, 0.5, -2.0, 4.0, 3.0, -1.0]);
        assert_eq!(
            matmul_tn(&a, &c).unwrap().data(),
            matmul(&at, &c).unwrap().data()
        );
    }

    #[test]
    fn gelu_matches_reference_points() {
        let x = t2(&[1, 3], &[0.0, 1.0, -0.5]);
        let y = gelu(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.8411919906082768).abs() < 1e-15);
        assert!((y.data()[2] - -0.15428599017485606).abs() < 1e-15);
    }

    #[test]
    fn layernorm_normalizes_known_row() {
        let x = t2(&[1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let gamma = t2(&[1, 4], &[1.0; 4]);
        let gamma = Tensor::from_vec(&[4], gamma.data().to_vec()).unwrap();
        let beta = Tensor::zeros(&[4]);
        let y = layernorm(&x, &gamma, &beta, 1e-5).unwrap();
        let want = [
            -1.3416354199689269,
            -0.447211806656309,
            0.447211806656309,
            1.3416354199689269,
        ];
        for (got, w) in y.data().iter().zip(want) {
            assert!((got - w).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_row_matches_reference() {
        let x = t2(&[1, 3], &[1.0, 2.0, 3.0]);
        let y = softmax_rows(&x).unwrap();
        let want = [
            0.09003057317038046,
            0.24472847105479764,
            0.6652409557748218,
        ];
        for (got, w) in y.data().iter().zip(want) {
            assert!((got - w).abs() < 1e-15);
        }
        assert!((y.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_reference() {
        let logits = t2(&[2, 4], &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        let (loss, _) = softmax_cross_entropy(&logits, &[2, 3], &[true, true]).unwrap();
        assert!((loss - 0.9132420298405429).abs() < 1e-14);

        // Uniform logits over 4 classes cost exactly ln 4.
        let (l1, _) = softmax_cross_entropy(&logits, &[2, 0], &[true, false]).unwrap();
        assert!((l1 - 1.3862943611198906).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_rejects_fully_masked_batch() {
        let logits = t2(&[1, 2], &[0.0, 0.0]);
        let err = softmax_cross_entropy(&logits, &[0], &[false]).unwrap_err();
        assert!(matches!(err, NumericsError::AllRowsMasked));
    }

    #[test]
    fn smoothed_cross_entropy_reduces_to_exact_at_zero_eps() {
        let logits = t2(&[2, 4], &[0.3, -0.1, 0.9, 0.2, 1.0, 2.0, 3.0, 4.0]);
        let targets = [2, 3];
        let mask = [true, true];
        let (exact, _) = softmax_cross_entropy(&logits, &targets, &mask).unwrap();
        let (smoothed, _) =
            softmax_cross_entropy_smoothed(&logits, &targets, &mask, 0.0).unwrap();
        assert!((exact - smoothed).abs() < 1e-15);
    }

    #[test]
    fn smoothed_cross_entropy_gradient_matches_finite_differences() {
        let targets = [1, 3];
        let mask = [true, true];
        let eps = 0.1;
        let base = [0.4, -0.2, 0.1, 0.7, -0.5, 0.3, 0.9, -0.1];
        let logits = t2(&[2, 4], &base);
        let (_, probs) = softmax_cross_entropy_smoothed(&logits, &targets, &mask, eps).unwrap();
        let grad =
            softmax_cross_entropy_smoothed_backward(&probs, &targets, &mask, eps).unwrap();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut plus = base;
            plus[i] += h;
            let mut minus = base;
            minus[i] -= h;
            let (lp, _) =
                softmax_cross_entropy_smoothed(&t2(&[2, 4], &plus), &targets, &mask, eps)
                    .unwrap();
            let (lm, _) =
                softmax_cross_entropy_smoothed(&t2(&[2, 4], &minus), &targets, &mask, eps)
                    .unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (grad.data()[i] - fd).abs() < 1e-8,
                "element {i}: analytic {} vs fd {fd}",
                grad.data()[i]
            );
        }
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let logits = t2(&[1, 2], &[0.0, 0.0]);
        let err = softmax_cross_entropy(&logits, &[5], &[true]).unwrap_err();
        assert!(matches!(err, NumericsError::TargetOutOfRange { target: 5, .. }));
    }

    #[test]
    fn gather_and_scatter_roundtrip() {
        let table = t2(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = embedding_gather(&table, &[2, 0, 2]).unwrap();
        assert_eq!(out.data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);

        let dout = t2(&[3, 2], &[1.0, 1.0, 10.0, 10.0, 2.0, 2.0]);
        let dt = embedding_gather_backward(&[3, 2], &[2, 0, 2], &dout).unwrap();
        // repeated id 2 accumulates both contributions
        assert_eq!(dt.data(), &[10.0, 10.0, 0.0, 0.0, 3.0, 3.0]);
    }

    #[test]
    fn gather_rejects_out_of_vocab_id() {
        let table = t2(&[3, 2], &[0.0; 6]);
        assert!(embedding_gather(&table, &[3]).is_err());
    }
}
