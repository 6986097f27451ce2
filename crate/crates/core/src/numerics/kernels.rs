//! Raw slice kernels. All reductions accumulate in `f64`.

use super::Scalar;

/// `c[m×n] = a[m×k] · b[k×n]`
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let bw: Vec<f64> = b.iter().map(|v| v.widen()).collect();
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (kk, av) in arow.iter().enumerate() {
            let av = av.widen();
            if av == 0.0 {
                continue;
            }
            let brow = &bw[kk * n..(kk + 1) * n];
            for (o, bv) in acc.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
        out.extend(acc.iter().map(|&v| S::narrow(v)));
    }
    out
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let aw: Vec<f64> = a.iter().map(|v| v.widen()).collect();
    let bw: Vec<f64> = b.iter().map(|v| v.widen()).collect();
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = &aw[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bw[j * k..(j + 1) * k];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out.push(S::narrow(dot));
        }
    }
    out
}

/// `c[k×n] = a[m×k]ᵀ · b[m×n]`
pub fn matmul_tn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let bw: Vec<f64> = b.iter().map(|v| v.widen()).collect();
    let mut acc = vec![0.0f64; k * n];
    for r in 0..m {
        let arow = &a[r * k..(r + 1) * k];
        let brow = &bw[r * n..(r + 1) * n];
        for (i, av) in arow.iter().enumerate() {
            let av = av.widen();
            if av == 0.0 {
                continue;
            }
            for (o, bv) in acc[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    acc.into_iter().map(S::narrow).collect()
}

pub fn transpose<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

pub fn sum_wide<S: Scalar>(xs: &[S]) -> f64 {
    xs.iter().map(|v| v.widen()).sum()
}

/// Column sums of a `rows × cols` matrix.
pub fn column_sums<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut acc = vec![0.0f64; cols];
    for r in 0..rows {
        for (o, v) in acc.iter_mut().zip(&a[r * cols..(r + 1) * cols]) {
            *o += v.widen();
        }
    }
    acc.into_iter().map(S::narrow).collect()
}

/// Indices of the `k` largest values, in descending order of value. Equal
/// values are ranked by ascending index.
pub fn top_k<S: Scalar>(values: &[S], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| {
        values[j]
            .partial_cmp(&values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    idx.truncate(k);
    idx
}
