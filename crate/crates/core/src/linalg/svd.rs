use alloc::vec;
use alloc::vec::Vec;

use super::{dot, norm, Matrix, MAX_SWEEPS};
use crate::error::{Error, Result};

const ORTHOGONALITY_TOL: f64 = 1e-12;

/// Thin singular value decomposition `m = u · diag(singular_values) · vt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    /// `m × k`, orthonormal columns.
    pub u: Matrix,
    /// Length `k = min(m, n)`, non-increasing, non-negative.
    pub singular_values: Vec<f64>,
    /// `k × n`, orthonormal rows.
    pub vt: Matrix,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (x, s) in us.row_mut(r).iter_mut().zip(&self.singular_values) {
                *x *= s;
            }
        }
        us.matmul(&self.vt).expect("factor shapes agree")
    }

    pub fn squared_singular_values(&self) -> Vec<f64> {
        self.singular_values.iter().map(|s| s * s).collect()
    }
}

/// Thin SVD by one-sided (Hestenes) Jacobi.
///
/// Wide inputs are decomposed through their transpose. Columns whose norm
/// falls below `max(m, n) · ε · ‖m‖_F` are treated as numerically zero and
/// their left singular vectors are completed to an orthonormal set. Signs
/// are fixed so the first entry above `1e-12` in magnitude in each row of
/// `vt` is positive.
pub fn svd(m: &Matrix) -> Result<SvdFactors> {
    let (rows, cols) = m.shape();
    let (left, sigma, right) = if rows >= cols {
        jacobi_tall(m)?
    } else {
        let (l, s, r) = jacobi_tall(&m.transpose())?;
        (r, s, l)
    };
    let k = sigma.len();

    // left: rows × k, right: cols × k (columns are singular vectors)
    let mut u = Matrix::zeros(rows, k);
    let mut vt = Matrix::zeros(k, cols);
    for j in 0..k {
        let flip = right[j]
            .iter()
            .find(|x| x.abs() > 1e-12)
            .is_some_and(|x| *x < 0.0);
        let sign = if flip { -1.0 } else { 1.0 };
        for (c, x) in right[j].iter().enumerate() {
            vt.set(j, c, sign * x);
        }
        for (r, x) in left[j].iter().enumerate() {
            u.set(r, j, sign * x);
        }
    }
    Ok(SvdFactors {
        u,
        singular_values: sigma,
        vt,
    })
}

type Columns = Vec<Vec<f64>>;

/// Returns (left vectors, singular values, right vectors) for `rows >= cols`,
/// each vector set stored column-wise and sorted by descending value.
fn jacobi_tall(m: &Matrix) -> Result<(Columns, Vec<f64>, Columns)> {
    let (rows, n) = m.shape();
    debug_assert!(rows >= n);
    let mut a: Columns = (0..n).map(|c| m.column(c)).collect();
    let mut v: Columns = (0..n)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect();

    let negligible = rows as f64 * f64::EPSILON * m.frobenius_norm();
    let negligible_sq = negligible * negligible;

    let mut sweeps = 0;
    loop {
        let mut worst: f64 = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                if alpha <= negligible_sq || beta <= negligible_sq {
                    continue;
                }
                let gamma = dot(&a[p], &a[q]);
                let measure = gamma.abs() / libm::sqrt(alpha * beta);
                if measure <= ORTHOGONALITY_TOL {
                    continue;
                }
                worst = worst.max(measure);
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if worst == 0.0 {
            break;
        }
        sweeps += 1;
        if sweeps == MAX_SWEEPS {
            return Err(Error::SvdNoConvergence {
                cap: MAX_SWEEPS,
                residual: worst,
            });
        }
    }

    let norms: Vec<f64> = a.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let mut sigma = Vec::with_capacity(n);
    let mut left: Columns = Vec::with_capacity(n);
    let mut right: Columns = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for &i in &order {
        let s = norms[i];
        sigma.push(s);
        right.push(v[i].clone());
        if s > negligible {
            left.push(a[i].iter().map(|x| x / s).collect());
        } else {
            deficient.push(left.len());
            left.push(Vec::new());
        }
    }
    complete_orthonormal(&mut left, &deficient, rows);
    Ok((left, sigma, right))
}

#[inline]
fn rotate(cols: &mut Columns, p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the `missing` slots of `basis` with unit vectors orthogonal to
/// every other entry, choosing among the canonical axes the one with the
/// largest residual.
fn complete_orthonormal(basis: &mut Columns, missing: &[usize], dim: usize) {
    for &slot in missing {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for axis in 0..dim {
            let mut e = vec![0.0; dim];
            e[axis] = 1.0;
            for _ in 0..2 {
                for (j, b) in basis.iter().enumerate() {
                    if j == slot || b.is_empty() {
                        continue;
                    }
                    let d = dot(&e, b);
                    for (x, y) in e.iter_mut().zip(b) {
                        *x -= d * y;
                    }
                }
            }
            let n = norm(&e);
            if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
                best = Some((n, e));
            }
        }
        let (n, mut e) = best.expect("dimension is at least one");
        for x in &mut e {
            *x /= n;
        }
        basis[slot] = e;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen;
    use crate::linalg::test_util::random;

    fn check_invariants(m: &Matrix, f: &SvdFactors) {
        let k = m.rows().min(m.cols());
        assert_eq!(f.singular_values.len(), k);
        assert_eq!(f.u.shape(), (m.rows(), k));
        assert_eq!(f.vt.shape(), (k, m.cols()));
        assert!(f.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(f.singular_values.iter().all(|s| *s >= 0.0));
        let utu = f.u.t_matmul(&f.u).unwrap();
        assert!(utu.max_abs_diff(&Matrix::identity(k)).unwrap() <= 1e-8, "U not orthonormal");
        let vvt = f.vt.matmul_t(&f.vt).unwrap();
        assert!(vvt.max_abs_diff(&Matrix::identity(k)).unwrap() <= 1e-8, "V not orthonormal");
        let err = f.reconstruct().sub(m).unwrap().frobenius_norm() / m.frobenius_norm().max(1e-300);
        assert!(err <= 1e-6, "reconstruction error {err}");
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let f = svd(&Matrix::identity(4)).unwrap();
        assert_eq!(f.singular_values, [1.0; 4]);
        check_invariants(&Matrix::identity(4), &f);
    }

    #[test]
    fn rank_one_outer_product() {
        // |u| = 2, |v| = 3
        let u = [2.0 / libm::sqrt(3.0); 3];
        let v = [0.0, 3.0 * 0.6, 3.0 * 0.8];
        let m = Matrix::from_fn(3, 3, |i, j| u[i] * v[j]).unwrap();
        let f = svd(&m).unwrap();
        assert!((f.singular_values[0] - 6.0).abs() < 1e-12);
        assert!(f.singular_values[1..].iter().all(|s| *s < 1e-12));
        check_invariants(&m, &f);
        assert!((f.vt.get(0, 1) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn spectrum_matches_gram_eigenvalues() {
        let m = random(12, 8, 11);
        let f = svd(&m).unwrap();
        check_invariants(&m, &f);
        let gram = m.t_matmul(&m).unwrap();
        let e = sym_eigen(&gram).unwrap();
        let scale = e.eigenvalues[0];
        for (s, l) in f.singular_values.iter().zip(&e.eigenvalues) {
            assert!((s * s - l).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn wide_and_degenerate_shapes() {
        for (r, c) in [(1, 1), (1, 7), (7, 1), (5, 9), (9, 5)] {
            let m = random(r, c, (r * 31 + c) as u64);
            check_invariants(&m, &svd(&m).unwrap());
        }
        let z = Matrix::zeros(4, 3);
        let f = svd(&z).unwrap();
        assert_eq!(f.singular_values, [0.0; 3]);
        check_invariants(&z, &f);
    }

    #[test]
    fn sign_convention_and_determinism() {
        let m = random(6, 9, 4);
        let a = svd(&m).unwrap();
        let b = svd(&m).unwrap();
        assert_eq!(a, b);
        for j in 0..a.vt.rows() {
            let first = a.vt.row(j).iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(*first > 0.0);
        }
        let neg = svd(&m.scale(-1.0)).unwrap();
        assert_eq!(neg.singular_values, a.singular_values);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn invariants_hold(r in 1usize..40, c in 1usize..40, seed in any::<u64>()) {
                let m = random(r, c, seed);
                check_invariants(&m, &svd(&m).unwrap());
            }

            #[test]
            fn low_rank_products(r in 2usize..30, c in 2usize..30, k in 1usize..4, seed in any::<u64>()) {
                let m = random(r, k, seed).matmul(&random(k, c, seed ^ 1)).unwrap();
                let f = svd(&m).unwrap();
                check_invariants(&m, &f);
                let tail = f.singular_values.iter().skip(k).fold(0.0f64, |a, b| a.max(*b));
                prop_assert!(tail <= 1e-10 * f.singular_values[0]);
            }
        }
    }
}
