//! Dense row-major kernels. Every reduction runs in a fixed order so results
//! are bitwise reproducible.

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha · x`
#[inline]
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[r] += W[r,:] · x` for a `rows × x.len()` matrix.
pub(crate) fn matvec_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += Wᵀ v` for a `v.len() × out.len()` matrix.
pub(crate) fn matvec_t_acc(out: &mut [f64], w: &[f64], v: &[f64]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), v.len() * cols);
    for (&vi, row) in v.iter().zip(w.chunks_exact(cols)) {
        axpy(out, vi, row);
    }
}

/// `W += u vᵀ`
pub(crate) fn outer_acc(w: &mut [f64], u: &[f64], v: &[f64]) {
    let cols = v.len();
    debug_assert_eq!(w.len(), u.len() * cols);
    for (&ui, row) in u.iter().zip(w.chunks_exact_mut(cols)) {
        axpy(row, ui, v);
    }
}
