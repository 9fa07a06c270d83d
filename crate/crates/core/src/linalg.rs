//! Dense row-major helpers for the policy's forward and backward passes.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorize without reassociation flags.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `out[r] += w[r, :] · x` for a `rows × x.len()` matrix.
#[inline]
pub fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += wᵀ g` for a `g.len() × out.len()` matrix.
#[inline]
pub fn matvec_t_acc(w: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), g.len() * cols);
    for (&gi, row) in g.iter().zip(w.chunks_exact(cols)) {
        if gi != 0.0 {
            axpy(gi, row, out);
        }
    }
}

/// `dw += g xᵀ`.
#[inline]
pub fn outer_acc(dw: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(dw.len(), g.len() * cols);
    for (&gi, row) in g.iter().zip(dw.chunks_exact_mut(cols)) {
        if gi != 0.0 {
            axpy(gi, x, row);
        }
    }
}

/// `y += a x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// In-place softmax; returns nothing, leaves a distribution in `v`.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
