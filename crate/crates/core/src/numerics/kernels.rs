//! Plain forward kernels shared by the differentiation tape and the
//! inference paths. All matrices are row-major 2-D tensors.

use super::logmath;
use super::tensor::Tensor;

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = a.row(i);
        let or = &mut out[i * n..(i + 1) * n];
        for (p, &av) in ar.iter().enumerate() {
            let br = b.row(p);
            for j in 0..n {
                or[j] += av * br[j];
            }
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

/// a · bᵀ. Inner products over contiguous rows of both operands.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul_nt inner dims {k} vs {k2}");
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = a.row(i);
        for j in 0..n {
            let br = b.row(j);
            out[i * n + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

/// aᵀ · b.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul_tn inner dims {k} vs {k2}");
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let ar = a.row(p);
        let br = b.row(p);
        for i in 0..m {
            let av = ar[i];
            let or = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                or[j] += av * br[j];
            }
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "add shape mismatch");
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "mul shape mismatch");
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    let data = a.data().iter().map(|x| x * c).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

pub fn add_scalar(a: &Tensor, c: f64) -> Tensor {
    let data = a.data().iter().map(|x| x + c).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

/// Broadcast a 1-D bias over every row of a matrix.
pub fn add_bias_row(x: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = (x.rows(), x.cols());
    assert_eq!(b.numel(), n, "bias width mismatch");
    let mut data = x.data().to_vec();
    for i in 0..m {
        for (j, &bv) in b.data().iter().enumerate() {
            data[i * n + j] += bv;
        }
    }
    Tensor::new(vec![m, n], data).unwrap()
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    map(x, sigmoid_scalar)
}

pub fn tanh(x: &Tensor) -> Tensor {
    map(x, f64::tanh)
}

pub fn relu(x: &Tensor) -> Tensor {
    map(x, |v| v.max(0.0))
}

pub fn swish(x: &Tensor) -> Tensor {
    map(x, |v| v * sigmoid_scalar(v))
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

/// Row-wise softmax. Rows may contain -inf entries (attention masking); at
/// least one finite entry per row is required.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let (m, n) = (x.rows(), x.cols());
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        let row = x.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        debug_assert!(max.is_finite(), "softmax row fully masked");
        let mut z = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            data[i * n + j] = e;
            z += e;
        }
        for j in 0..n {
            data[i * n + j] /= z;
        }
    }
    Tensor::new(vec![m, n], data).unwrap()
}

pub fn log_softmax_rows(x: &Tensor) -> Tensor {
    let (m, n) = (x.rows(), x.cols());
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        let out = logmath::log_softmax_unchecked(x.row(i));
        data[i * n..(i + 1) * n].copy_from_slice(&out);
    }
    Tensor::new(vec![m, n], data).unwrap()
}

/// Per-row layer normalization with learned per-channel scale and shift.
/// Biased variance.
pub fn layer_norm_rows(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    let (m, n) = (x.rows(), x.cols());
    assert_eq!(gamma.numel(), n);
    assert_eq!(beta.numel(), n);
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..n {
            data[i * n + j] = (row[j] - mean) * inv * gamma.data()[j] + beta.data()[j];
        }
    }
    Tensor::new(vec![m, n], data).unwrap()
}

/// Per-row group normalization: channels are split into `groups` contiguous
/// groups, each normalized by its own mean/variance within the frame. No
/// statistics cross frames or utterances.
pub fn group_norm_rows(x: &Tensor, gamma: &Tensor, beta: &Tensor, groups: usize, eps: f64) -> Tensor {
    let (m, n) = (x.rows(), x.cols());
    assert!(groups >= 1 && n % groups == 0, "channels not divisible by groups");
    assert_eq!(gamma.numel(), n);
    assert_eq!(beta.numel(), n);
    let gs = n / groups;
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        let row = x.row(i);
        for g in 0..groups {
            let seg = &row[g * gs..(g + 1) * gs];
            let mean = seg.iter().sum::<f64>() / gs as f64;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / gs as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (k, &v) in seg.iter().enumerate() {
                let j = g * gs + k;
                data[i * n + j] = (v - mean) * inv * gamma.data()[j] + beta.data()[j];
            }
        }
    }
    Tensor::new(vec![m, n], data).unwrap()
}

/// Depthwise 1-D convolution along the frame axis with explicit zero
/// padding. `kernel` is [width × channels]; output frame t sums
/// x_padded[t + j] * kernel[j] over j.
pub fn depthwise_conv(x: &Tensor, kernel: &Tensor, left_pad: usize, right_pad: usize) -> Tensor {
    let (t_len, c) = (x.rows(), x.cols());
    let (w, c2) = (kernel.rows(), kernel.cols());
    assert_eq!(c, c2, "conv channel mismatch");
    assert_eq!(left_pad + right_pad + 1, w, "pads must cover the kernel width");
    let mut data = vec![0.0; t_len * c];
    for t in 0..t_len {
        for j in 0..w {
            // padded index t + j maps to source frame t + j - left_pad
            let src = t as isize + j as isize - left_pad as isize;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let xr = x.row(src as usize);
            let kr = kernel.row(j);
            let or = &mut data[t * c..(t + 1) * c];
            for ch in 0..c {
                or[ch] += xr[ch] * kr[ch];
            }
        }
    }
    Tensor::new(vec![t_len, c], data).unwrap()
}

pub fn gather_rows(table: &Tensor, ids: &[usize]) -> Tensor {
    let (v, d) = (table.rows(), table.cols());
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        assert!(id < v, "gather id {id} out of range {v}");
        data.extend_from_slice(table.row(id));
    }
    Tensor::new(vec![ids.len(), d], data).unwrap()
}

pub fn slice_cols(x: &Tensor, start: usize, len: usize) -> Tensor {
    let (m, n) = (x.rows(), x.cols());
    assert!(start + len <= n, "slice_cols out of range");
    let mut data = Vec::with_capacity(m * len);
    for i in 0..m {
        data.extend_from_slice(&x.row(i)[start..start + len]);
    }
    Tensor::new(vec![m, len], data).unwrap()
}

pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty());
    let m = parts[0].rows();
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(m * total);
    for i in 0..m {
        for p in parts {
            assert_eq!(p.rows(), m, "concat_cols row mismatch");
            data.extend_from_slice(p.row(i));
        }
    }
    Tensor::new(vec![m, total], data).unwrap()
}

pub fn concat_rows(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty());
    let n = parts[0].cols();
    let total: usize = parts.iter().map(|p| p.rows()).sum();
    let mut data = Vec::with_capacity(total * n);
    for p in parts {
        assert_eq!(p.cols(), n, "concat_rows col mismatch");
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![total, n], data).unwrap()
}

/// Outer broadcast sum of rows: out[i·n + j] = a[i] + b[j], each a row of
/// width k. Produces [(m·n) × k] in row-major (i, j) order.
pub fn outer_row_sum(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    assert_eq!(k, k2, "outer_row_sum width mismatch");
    let mut data = Vec::with_capacity(m * n * k);
    for i in 0..m {
        let ar = a.row(i);
        for j in 0..n {
            let br = b.row(j);
            data.extend(ar.iter().zip(br).map(|(x, y)| x + y));
        }
    }
    Tensor::new(vec![m * n, k], data).unwrap()
}

pub fn sum_all(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum())
}
