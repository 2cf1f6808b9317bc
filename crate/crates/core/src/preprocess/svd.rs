//! Spatiotemporal clutter rejection.
//!
//! The cine-loop is reshaped to its Casorati matrix (space by time) and the
//! k strongest singular components are removed. The decomposition comes
//! from a cyclic complex Jacobi eigensolver on the Gram matrix of the
//! smaller side, so only that projector is ever formed.

use crate::acoustics::IQBlock;
use crate::{Error, Result};
use num_complex::Complex64;

/// Eigenvalues (descending) and matching eigenvectors (column-major) of a
/// Hermitian matrix given in row-major order.
fn hermitian_eig_desc(n: usize, mut a: Vec<Complex64>) -> (Vec<f64>, Vec<Complex64>) {
    assert_eq!(a.len(), n * n);
    let mut v = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        v[i * n + i] = Complex64::new(1.0, 0.0);
    }
    let frobenius: f64 = a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let tol = 1e-14 * frobenius.max(f64::MIN_POSITIVE);

    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(a[p * n + q].norm());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                let b = apq.norm();
                if b <= tol {
                    continue;
                }
                let phase = apq / b; // e^{i phi}
                let alpha = a[p * n + p].re;
                let gamma = a[q * n + q].re;
                let tau = (gamma - alpha) / (2.0 * b);
                // Smaller-magnitude root of t^2 - 2 tau t - 1 = 0.
                let t = if tau >= 0.0 {
                    -1.0 / (tau + (tau * tau + 1.0).sqrt())
                } else {
                    1.0 / (-tau + (tau * tau + 1.0).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Column rotation: col_p' = c col_p + s conj(phase) col_q,
                // col_q' = -s phase col_p + c col_q; then the adjoint on rows.
                let sp = phase * s;
                for i in 0..n {
                    let aip = a[i * n + p];
                    let aiq = a[i * n + q];
                    a[i * n + p] = aip * c + aiq * sp.conj();
                    a[i * n + q] = aip * -sp + aiq * c;
                }
                for j in 0..n {
                    let apj = a[p * n + j];
                    let aqj = a[q * n + j];
                    a[p * n + j] = apj * c + aqj * sp;
                    a[q * n + j] = apj * -sp.conj() + aqj * c;
                }
                a[p * n + q] = Complex64::new(0.0, 0.0);
                a[q * n + p] = Complex64::new(0.0, 0.0);
                a[p * n + p] = Complex64::new(a[p * n + p].re, 0.0);
                a[q * n + q] = Complex64::new(a[q * n + q].re, 0.0);
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = vip * c + viq * sp.conj();
                    v[i * n + q] = vip * -sp + viq * c;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].re.partial_cmp(&a[i * n + i].re).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i].re).collect();
    let mut vectors = vec![Complex64::new(0.0, 0.0); n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for i in 0..n {
            vectors[i * n + new_col] = v[i * n + old_col];
        }
    }
    (values, vectors)
}

/// Casorati layout: row = pixel, column = frame.
fn casorati(block: &IQBlock) -> (usize, usize, Vec<Complex64>) {
    let n_s = block.geom.n_z * block.geom.n_x;
    let n_t = block.n_t;
    let mut m = vec![Complex64::new(0.0, 0.0); n_s * n_t];
    for t in 0..n_t {
        let frame = block.frame(t);
        for s in 0..n_s {
            m[s * n_t + t] = frame[s];
        }
    }
    (n_s, n_t, m)
}

/// Singular values of the Casorati matrix, nonincreasing.
pub fn casorati_singular_values(block: &IQBlock) -> Vec<f64> {
    let (n_s, n_t, m) = casorati(block);
    let gram = gram_smaller_side(n_s, n_t, &m);
    let n = n_s.min(n_t);
    let (values, _) = hermitian_eig_desc(n, gram);
    values.iter().map(|&l| l.max(0.0).sqrt()).collect()
}

/// Gram matrix of the smaller side: M^H M if time is smaller, M M^H
/// otherwise.
fn gram_smaller_side(n_s: usize, n_t: usize, m: &[Complex64]) -> Vec<Complex64> {
    if n_t <= n_s {
        let mut g = vec![Complex64::new(0.0, 0.0); n_t * n_t];
        for i in 0..n_t {
            for j in i..n_t {
                let mut acc = Complex64::new(0.0, 0.0);
                for s in 0..n_s {
                    acc += m[s * n_t + i].conj() * m[s * n_t + j];
                }
                g[i * n_t + j] = acc;
                g[j * n_t + i] = acc.conj();
            }
        }
        g
    } else {
        let mut g = vec![Complex64::new(0.0, 0.0); n_s * n_s];
        for i in 0..n_s {
            for j in i..n_s {
                let mut acc = Complex64::new(0.0, 0.0);
                for t in 0..n_t {
                    acc += m[i * n_t + t] * m[j * n_t + t].conj();
                }
                g[i * n_s + j] = acc;
                g[j * n_s + i] = acc.conj();
            }
        }
        g
    }
}

/// Remove the `k` strongest singular components of the Casorati matrix.
/// `k = 0` returns the block untouched; `k >= min(space, time)` removes
/// everything.
pub fn svd_clutter_filter(block: &IQBlock, k: usize) -> Result<IQBlock> {
    let n_s = block.geom.n_z * block.geom.n_x;
    let n_t = block.n_t;
    if k > n_s.min(n_t) {
        return Err(Error::InvalidArgument(format!(
            "cutoff {k} exceeds min(space, time) = {}",
            n_s.min(n_t)
        )));
    }
    if k == 0 {
        return Ok(block.clone());
    }
    let (_, _, m) = casorati(block);
    let gram = gram_smaller_side(n_s, n_t, &m);
    let n = n_s.min(n_t);
    let (_, vectors) = hermitian_eig_desc(n, gram);

    let mut filtered = m.clone();
    if n_t <= n_s {
        // Right singular vectors: subtract M v_i v_i^H for the top k.
        for comp in 0..k {
            let vi: Vec<Complex64> = (0..n_t).map(|t| vectors[t * n_t + comp]).collect();
            for s in 0..n_s {
                let mut proj = Complex64::new(0.0, 0.0);
                for t in 0..n_t {
                    proj += m[s * n_t + t] * vi[t].conj();
                }
                for t in 0..n_t {
                    filtered[s * n_t + t] -= proj * vi[t];
                }
            }
        }
    } else {
        // Left singular vectors: subtract u_i u_i^H M for the top k.
        for comp in 0..k {
            let ui: Vec<Complex64> = (0..n_s).map(|s| vectors[s * n_s + comp]).collect();
            for t in 0..n_t {
                let mut proj = Complex64::new(0.0, 0.0);
                for s in 0..n_s {
                    proj += ui[s].conj() * m[s * n_t + t];
                }
                for s in 0..n_s {
                    filtered[s * n_t + t] -= proj * ui[s];
                }
            }
        }
    }

    let mut out = IQBlock::zeros(block.geom, n_t);
    for t in 0..n_t {
        let frame = out.frame_mut(t);
        for s in 0..n_s {
            frame[s] = filtered[s * n_t + t];
        }
    }
    Ok(out)
}
