//! Inner loops shared by forward and backward passes.
//!
//! Every reduction runs in a fixed order so repeated evaluations are
//! bit-identical.

/// Dot product with four fixed accumulation lanes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let mut acc = [0.0f64; 4];
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `c += a · b` for `a: [p, q]`, `b: [q, r]`.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let c_row = &mut c[i * r..(i + 1) * r];
        let a_row = &a[i * q..(i + 1) * q];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik != 0.0 {
                axpy(aik, &b[k * r..(k + 1) * r], c_row);
            }
        }
    }
}

/// `da += dc · bᵀ` for `dc: [p, r]`, `b: [q, r]`.
pub(crate) fn gemm_nt_acc(dc: &[f64], b: &[f64], da: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let dc_row = &dc[i * r..(i + 1) * r];
        for k in 0..q {
            da[i * q + k] += dot(dc_row, &b[k * r..(k + 1) * r]);
        }
    }
}

/// `db += aᵀ · dc` for `a: [p, q]`, `dc: [p, r]`.
pub(crate) fn gemm_tn_acc(a: &[f64], dc: &[f64], db: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let dc_row = &dc[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik != 0.0 {
                axpy(aik, dc_row, &mut db[k * r..(k + 1) * r]);
            }
        }
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Split a shape around `axis` into (outer, axis, inner) element counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Gather `src` (with shape `shape`) into the layout given by `perm`.
pub(crate) fn permute(src: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let gather: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = src.len();
    let mut out = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    // Innermost axis contiguous loop.
    let last = rank - 1;
    let (inner_len, inner_stride) = (out_shape[last], gather[last]);
    let outer_count = n / inner_len;
    for _ in 0..outer_count {
        let mut off = offset;
        for _ in 0..inner_len {
            out.push(src[off]);
            off += inner_stride;
        }
        // advance outer index
        let mut ax = last;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            offset += gather[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= gather[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_transposes_matrix() {
        let (shape, data) = permute(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3], &[1, 0]);
        assert_eq!(shape, vec![3, 2]);
        assert_eq!(data, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn permute_round_trips_through_inverse() {
        let shape = [2, 3, 4, 5];
        let src: Vec<f64> = (0..120).map(f64::from).collect();
        let perm = [2, 0, 3, 1];
        let (s1, d1) = permute(&src, &shape, &perm);
        let (s2, d2) = permute(&d1, &s1, &inverse_permutation(&perm));
        assert_eq!(s2, shape.to_vec());
        assert_eq!(d2, src);
    }

    #[test]
    fn dot_matches_naive_on_odd_lengths() {
        let a: Vec<f64> = (0..7).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..7).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
