use alloc::vec::Vec;

use super::{Matrix, MAX_SWEEPS};
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenFactors {
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the unit eigenvector for `eigenvalues[i]`.
    pub eigenvectors: Matrix,
}

/// Symmetric eigendecomposition by cyclic two-sided Jacobi rotations.
///
/// Asymmetry is measured relative to `max(1, max |m_ij|)`. Eigenvector signs
/// are fixed so that the first entry above `1e-12` in magnitude is positive.
pub fn sym_eigen(m: &Matrix) -> Result<EigenFactors> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::NotSquare { rows: n, cols: m.cols() });
    }
    let scale = m.max_abs().max(1.0);
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { max_asymmetry: asym });
    }

    // Work on the symmetrized copy.
    let mut a: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            0.5 * (m.get(i, j) + m.get(j, i))
        })
        .collect();
    let mut v = Matrix::identity(n).into_vec();
    let total = libm::sqrt(a.iter().map(|x| x * x).sum::<f64>());

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        libm::sqrt(s)
    };

    let mut converged = off(&a) <= OFF_DIAGONAL_TOL * total;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::EigenNoConvergence {
                cap: MAX_SWEEPS,
                residual: off(&a) / total,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        converged = off(&a) <= OFF_DIAGONAL_TOL * total;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));

    let eigenvalues = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = Vec::with_capacity(n * n);
    for r in 0..n {
        for &i in &order {
            vecs.push(v[r * n + i]);
        }
    }
    let mut eigenvectors = Matrix::from_raw(n, n, vecs);
    for c in 0..n {
        let flip = (0..n)
            .map(|r| eigenvectors.get(r, c))
            .find(|x| x.abs() > 1e-12)
            .is_some_and(|x| x < 0.0);
        if flip {
            for r in 0..n {
                let x = eigenvectors.get(r, c);
                eigenvectors.set(r, c, -x);
            }
        }
    }
    Ok(EigenFactors {
        eigenvalues,
        eigenvectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_util::random;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let g = random(n, n, seed);
        g.add(&g.transpose()).unwrap()
    }

    #[test]
    fn diagonal_input() {
        let e = sym_eigen(&Matrix::diag(&[3.0, 1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(e.eigenvalues, [3.0, 2.0, 1.0]);
    }

    #[test]
    fn textbook_two_by_two() {
        let m = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let e = sym_eigen(&m).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn reconstructs_random_symmetric() {
        let m = random_symmetric(10, 7);
        let e = sym_eigen(&m).unwrap();
        let p = &e.eigenvectors;
        let d = Matrix::diag(&e.eigenvalues).unwrap();
        let rec = p.matmul(&d).unwrap().matmul_t(p).unwrap();
        assert!(rec.sub(&m).unwrap().frobenius_norm() <= 1e-8);
        let ptp = p.t_matmul(p).unwrap();
        assert!(ptp.max_abs_diff(&Matrix::identity(10)).unwrap() <= 1e-8);
        for i in 0..10 {
            let vi = Matrix::from_vec(10, 1, p.column(i)).unwrap();
            let lhs = m.matmul(&vi).unwrap();
            assert!(lhs.max_abs_diff(&vi.scale(e.eigenvalues[i])).unwrap() <= 1e-6);
        }
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rejects_asymmetric() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.5, 1.0]]).unwrap();
        match sym_eigen(&m) {
            Err(Error::NotSymmetric { max_asymmetry }) => assert_eq!(max_asymmetry, 0.5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(sym_eigen(&random(2, 3, 1)), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn deterministic() {
        let m = random_symmetric(8, 3);
        assert_eq!(sym_eigen(&m).unwrap(), sym_eigen(&m).unwrap());
    }
}
