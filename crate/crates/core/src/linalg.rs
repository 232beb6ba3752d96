//! Factorizations needed by the SVD- and QR-based adapter initializations.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const SVD_MAX_SWEEPS: usize = 100;
pub const SVD_TOLERANCE: f64 = 1e-12;

/// Thin SVD `M = U·diag(S)·Vᵀ` with `k = min(rows, cols)`: `U` is `rows×k`,
/// `V` is `cols×k`, `S` is non-negative and descending.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub v: Tensor,
}

impl Svd {
    pub fn reconstruct(&self) -> Tensor {
        let (m, k) = (self.u.rows(), self.s.len());
        let mut us = self.u.clone();
        for i in 0..m {
            for j in 0..k {
                let x = us.at(i, j) * self.s[j];
                us.set(i, j, x);
            }
        }
        us.matmul(&self.v.transpose()).expect("svd factor shapes agree")
    }
}

fn check_finite(m: &Tensor, what: &str) -> Result<()> {
    if m.all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} of a matrix with non-finite entries")))
    }
}

/// One-sided Jacobi SVD.
///
/// Column pairs are rotated until every pair's cosine falls below
/// [`SVD_TOLERANCE`]; after [`SVD_MAX_SWEEPS`] sweeps without convergence a
/// numeric error reports the remaining off-diagonal residual.
pub fn svd(m: &Tensor) -> Result<Svd> {
    let (rows, cols) = m.dims2()?;
    check_finite(m, "svd")?;
    if rows < cols {
        let t = svd(&m.transpose())?;
        return Ok(Svd { u: t.v, s: t.s, v: t.u });
    }
    let n = cols;
    // Work column-major: a[j] is column j of the working matrix.
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| (0..rows).map(|i| m.at(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let mut converged = n < 2;
    let mut residual = 0.0;
    for _ in 0..SVD_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        residual = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let cosine = gamma.abs() / (alpha * beta).sqrt();
                residual = f64::max(residual, cosine);
                if cosine <= SVD_TOLERANCE {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "jacobi svd did not converge in {SVD_MAX_SWEEPS} sweeps; off-diagonal residual {residual:e}"
        )));
    }

    let mut order: Vec<(f64, usize)> = a.iter().enumerate().map(|(j, c)| (dot(c, c).sqrt(), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let smax = order.first().map_or(0.0, |o| o.0);

    let mut u = Tensor::zeros(&[rows, n]);
    let mut vt = Tensor::zeros(&[cols, n]);
    let mut s = Vec::with_capacity(n);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (k, &(sigma, j)) in order.iter().enumerate() {
        let col = if sigma > smax * 1e-14 && sigma > 0.0 {
            a[j].iter().map(|x| x / sigma).collect()
        } else {
            complete_basis(&u_cols, rows)
        };
        for i in 0..rows {
            u.set(i, k, col[i]);
        }
        for i in 0..cols {
            vt.set(i, k, v[j][i]);
        }
        u_cols.push(col);
        s.push(sigma);
    }
    Ok(Svd { u, s, v: vt })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// A unit vector orthogonal to `basis`, found by Gram-Schmidt over the
/// standard basis.
fn complete_basis(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut best = vec![0.0; dim];
    let mut best_norm = -1.0;
    for e in 0..dim {
        let mut x = vec![0.0; dim];
        x[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let d: f64 = x.iter().zip(b).map(|(a, b)| a * b).sum();
                for (xi, bi) in x.iter_mut().zip(b) {
                    *xi -= d * bi;
                }
            }
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > best_norm {
            best_norm = norm;
            best = x;
        }
        if norm > 0.5 {
            break;
        }
    }
    best.iter().map(|v| v / best_norm).collect()
}

/// Thin QR `M = Q·R` by Householder reflections: `Q` is `rows×k` with
/// orthonormal columns, `R` is `k×cols` upper-trapezoidal with a
/// non-negative diagonal, `k = min(rows, cols)`.
pub fn qr(m: &Tensor) -> Result<(Tensor, Tensor)> {
    let (rows, cols) = m.dims2()?;
    check_finite(m, "qr")?;
    let k = rows.min(cols);
    let mut r = m.clone();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(k);

    for j in 0..k {
        let tail_norm: f64 = (j + 1..rows).map(|i| r.at(i, j).powi(2)).sum::<f64>();
        if tail_norm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let x0 = r.at(j, j);
        let norm = (x0 * x0 + tail_norm).sqrt();
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..rows).map(|i| r.at(i, j)).collect();
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= vnorm);
        for c in j..cols {
            let d: f64 = v.iter().enumerate().map(|(t, vi)| vi * r.at(j + t, c)).sum();
            for (t, vi) in v.iter().enumerate() {
                let x = r.at(j + t, c) - 2.0 * vi * d;
                r.set(j + t, c, x);
            }
        }
        r.set(j, j, alpha);
        for i in j + 1..rows {
            r.set(i, j, 0.0);
        }
        reflectors.push(Some(v));
    }

    // Q = H_0 · H_1 ⋯ H_{k-1} applied to the first k columns of I.
    let mut q = Tensor::zeros(&[rows, k]);
    for i in 0..k {
        q.set(i, i, 1.0);
    }
    for (j, refl) in reflectors.iter().enumerate().rev() {
        let Some(v) = refl else { continue };
        for c in 0..k {
            let d: f64 = v.iter().enumerate().map(|(t, vi)| vi * q.at(j + t, c)).sum();
            for (t, vi) in v.iter().enumerate() {
                let x = q.at(j + t, c) - 2.0 * vi * d;
                q.set(j + t, c, x);
            }
        }
    }

    let r_thin = r.rows_range(0, k);
    let mut r = r_thin;
    for j in 0..k {
        if r.at(j, j) < 0.0 {
            for c in 0..cols {
                let x = -r.at(j, c);
                r.set(j, c, x);
            }
            for i in 0..rows {
                let x = -q.at(i, j);
                q.set(i, j, x);
            }
        }
    }
    Ok((q, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_svd() {
        let m = Tensor::from_rows(&[&[3.0, 0.0], &[0.0, 1.0]]).unwrap();
        let d = svd(&m).unwrap();
        assert_eq!(d.s, vec![3.0, 1.0]);
    }

    #[test]
    fn rank_one_svd() {
        let u = [0.6, 0.8];
        let v = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt()];
        let m = Tensor::from_fn(&[2, 2], |i| u[i / 2] * v[i % 2]);
        let d = svd(&m).unwrap();
        assert!((d.s[0] - 1.0).abs() < 1e-15);
        assert!(d.s[1].abs() < 1e-15);
        let utu = d.u.transpose().matmul(&d.u).unwrap();
        assert!(utu.max_abs_diff(&Tensor::eye(2)) < 1e-12);
    }

    #[test]
    fn wide_matrix_svd() {
        let m = Tensor::from_fn(&[2, 5], |i| ((i * 7 + 3) % 11) as f64 - 4.0);
        let d = svd(&m).unwrap();
        assert_eq!(d.u.shape(), &[2, 2]);
        assert_eq!(d.v.shape(), &[5, 2]);
        assert!(d.reconstruct().max_abs_diff(&m) < 1e-12);
    }

    #[test]
    fn svd_rejects_nan() {
        let m = Tensor::new(vec![1, 2], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(svd(&m), Err(Error::Numeric(_))));
    }

    #[test]
    fn identity_qr() {
        let (q, r) = qr(&Tensor::eye(4)).unwrap();
        assert_eq!(q, Tensor::eye(4));
        assert_eq!(r, Tensor::eye(4));
    }

    #[test]
    fn lower_triangular_qr_reconstructs() {
        let m = Tensor::from_rows(&[&[2.0, 0.0, 0.0], &[1.0, 3.0, 0.0], &[-4.0, 5.0, 6.0]]).unwrap();
        let (q, r) = qr(&m).unwrap();
        assert!(q.matmul(&r).unwrap().max_abs_diff(&m) < 1e-12);
        for i in 0..3 {
            for j in 0..i {
                assert_eq!(r.at(i, j), 0.0);
            }
        }
    }

    #[test]
    fn tall_and_wide_qr_shapes() {
        let tall = Tensor::from_fn(&[5, 3], |i| (i as f64).sin());
        let (q, r) = qr(&tall).unwrap();
        assert_eq!((q.shape(), r.shape()), (&[5, 3][..], &[3, 3][..]));
        assert!(q.matmul(&r).unwrap().max_abs_diff(&tall) < 1e-12);
        let wide = tall.transpose();
        let (q, r) = qr(&wide).unwrap();
        assert_eq!((q.shape(), r.shape()), (&[3, 3][..], &[3, 5][..]));
        assert!(q.matmul(&r).unwrap().max_abs_diff(&wide) < 1e-12);
    }
}
