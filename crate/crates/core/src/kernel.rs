//! Gaussian RBF kernel `k(x, x') = exp(-‖x - x'‖² / γ²)` and dense Gram matrices.
//!
//! Squared distances are accumulated coordinate by coordinate for every pair;
//! the `‖x‖² + ‖x'‖² - 2⟨x, x'⟩` expansion is avoided because it cancels badly
//! for nearby points and small bandwidths.

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    gamma: f64,
}

impl GaussianKernel {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma.is_finite() {
            Ok(Self { gamma })
        } else {
            Err(Error::InvalidParameter(format!(
                "kernel bandwidth must be finite and positive, got {gamma}"
            )))
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    fn from_sq_dist(&self, d2: f64) -> f64 {
        (-d2 / (self.gamma * self.gamma)).exp()
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Evaluates the kernel at a pair of points.
pub fn kernel_eval(kern: &GaussianKernel, x: &[f64], x2: &[f64]) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: x2.len(),
        });
    }
    Ok(kern.from_sq_dist(sq_dist(x, x2)))
}

/// Copies the rows of `x` into one contiguous row-major buffer.
pub(crate) fn row_major(x: MatRef<'_, f64>) -> Vec<f64> {
    let (n, d) = (x.nrows(), x.ncols());
    let mut out = vec![0.0; n * d];
    for j in 0..d {
        for i in 0..n {
            out[i * d + j] = x[(i, j)];
        }
    }
    out
}

/// Symmetric kernel matrix over one sample.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    entries: Mat<f64>,
}

impl GramMatrix {
    /// Wraps a precomputed matrix. The caller is responsible for it being a
    /// valid kernel matrix.
    pub fn from_mat(entries: Mat<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                got: entries.ncols(),
            });
        }
        Ok(Self { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        self.entries.as_ref()
    }

    pub fn into_mat(self) -> Mat<f64> {
        self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Column `j` as a contiguous slice.
    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        self.entries.col_as_slice(j)
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn principal(&self, idx: &[usize]) -> GramMatrix {
        let m = idx.len();
        GramMatrix {
            entries: Mat::from_fn(m, m, |i, j| self.entries[(idx[i], idx[j])]),
        }
    }

    /// Rectangular block with rows `rows` and columns `cols`.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> Mat<f64> {
        Mat::from_fn(rows.len(), cols.len(), |i, j| {
            self.entries[(rows[i], cols[j])]
        })
    }

    /// `K v`, exploiting symmetry to walk contiguous columns.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        debug_assert_eq!(v.len(), n);
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.col(i).iter().zip(v).map(|(k, x)| k * x).sum();
        }
        out
    }
}

/// Gram matrix of the rows of `x` (an `n × d` matrix).
pub fn gram(kern: &GaussianKernel, x: MatRef<'_, f64>) -> Result<GramMatrix> {
    gram_with(kern, x, Exec::default())
}

pub fn gram_with(kern: &GaussianKernel, x: MatRef<'_, f64>, exec: Exec) -> Result<GramMatrix> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("gram matrix needs at least one point"));
    }
    let d = x.ncols();
    let rows = row_major(x);
    let mut buf = vec![0.0; n * n];
    // Column j holds k(x_i, x_j) for all i; columns are filled independently.
    exec.for_each_chunk(&mut buf, n, |j, col| {
        let xj = &rows[j * d..(j + 1) * d];
        for (i, c) in col.iter_mut().enumerate() {
            *c = if i == j {
                1.0
            } else {
                kern.from_sq_dist(sq_dist(&rows[i * d..(i + 1) * d], xj))
            };
        }
    });
    Ok(GramMatrix {
        entries: Mat::from_fn(n, n, |i, j| buf[j * n + i]),
    })
}

/// `m × n` matrix with entry `(i, j) = k(query_i, train_j)`.
pub fn cross_gram(
    kern: &GaussianKernel,
    x_train: MatRef<'_, f64>,
    x_query: MatRef<'_, f64>,
) -> Result<Mat<f64>> {
    cross_gram_with(kern, x_train, x_query, Exec::default())
}

pub fn cross_gram_with(
    kern: &GaussianKernel,
    x_train: MatRef<'_, f64>,
    x_query: MatRef<'_, f64>,
    exec: Exec,
) -> Result<Mat<f64>> {
    let d = x_train.ncols();
    if x_query.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x_query.ncols(),
        });
    }
    let (n, m) = (x_train.nrows(), x_query.nrows());
    if m == 0 || n == 0 {
        return Ok(Mat::zeros(m, n));
    }
    let train = row_major(x_train);
    let query = row_major(x_query);
    let mut buf = vec![0.0; m * n];
    exec.for_each_chunk(&mut buf, m, |j, col| {
        let tj = &train[j * d..(j + 1) * d];
        for (i, c) in col.iter_mut().enumerate() {
            let qi = &query[i * d..(i + 1) * d];
            let d2 = sq_dist(qi, tj);
            *c = if d2 == 0.0 { 1.0 } else { kern.from_sq_dist(d2) };
        }
    });
    Ok(Mat::from_fn(m, n, |i, j| buf[j * m + i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(n, d, |_, _| rng.random::<f64>())
    }

    #[test]
    fn kernel_values() {
        let k1 = GaussianKernel::new(1.0).unwrap();
        assert_eq!(kernel_eval(&k1, &[0.3, 0.7], &[0.3, 0.7]).unwrap(), 1.0);
        assert_relative_eq!(
            kernel_eval(&k1, &[0.0, 0.0], &[0.6, 0.8]).unwrap(),
            (-1.0f64).exp(),
            epsilon = 1e-15
        );
        // γ = 0.5, distance 1: exp(-1 / 0.25) = exp(-4).
        let k = GaussianKernel::new(0.5).unwrap();
        let expected = 1.0 / (1.0f64.exp().powi(4));
        assert_relative_eq!(expected, 0.018_316, epsilon = 1e-6);
        assert_relative_eq!(
            kernel_eval(&k, &[1.0], &[2.0]).unwrap(),
            expected,
            epsilon = 1e-15
        );
    }

    #[test]
    fn kernel_errors() {
        let k = GaussianKernel::new(1.0).unwrap();
        assert!(matches!(
            kernel_eval(&k, &[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(GaussianKernel::new(0.0).is_err());
        assert!(gram(&k, Mat::<f64>::zeros(0, 3).as_ref()).is_err());
    }

    #[test]
    fn gram_small_cases() {
        let k = GaussianKernel::new(0.7).unwrap();
        let g = gram(&k, Mat::from_fn(1, 2, |_, j| j as f64).as_ref()).unwrap();
        assert_eq!(g.n(), 1);
        assert_eq!(g.get(0, 0), 1.0);

        let two = Mat::from_fn(2, 3, |_, j| 0.1 * j as f64);
        let g = gram(&k, two.as_ref()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(g.get(i, j), 1.0);
            }
        }
        let eig = g.as_mat().self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        assert_relative_eq!(eig[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(eig[1], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn gram_matches_pairwise_evaluation() {
        let k = GaussianKernel::new(0.4).unwrap();
        let x = random_points(3, 4, 1);
        let g = gram(&k, x.as_ref()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let xi: Vec<f64> = (0..4).map(|c| x[(i, c)]).collect();
                let xj: Vec<f64> = (0..4).map(|c| x[(j, c)]).collect();
                let d2: f64 = xi.iter().zip(&xj).map(|(a, b)| (a - b).powi(2)).sum();
                assert_relative_eq!(g.get(i, j), (-d2 / 0.16).exp(), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn gram_symmetric_unit_diag_psd() {
        let k = GaussianKernel::new(0.3).unwrap();
        for (n, seed) in [(10, 2), (60, 3), (200, 4)] {
            let g = gram(&k, random_points(n, 3, seed).as_ref()).unwrap();
            for i in 0..n {
                assert_eq!(g.get(i, i), 1.0);
                for j in 0..n {
                    assert_eq!(g.get(i, j), g.get(j, i));
                    assert!(g.get(i, j) > 0.0 && g.get(i, j) <= 1.0);
                }
            }
            let eig = g.as_mat().self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-8 * n as f64, "n={n} min eig {min}");
        }
    }

    #[test]
    fn cross_gram_cases() {
        let k = GaussianKernel::new(0.5).unwrap();
        let x = random_points(25, 3, 9);
        let g = gram(&k, x.as_ref()).unwrap();
        let c = cross_gram(&k, x.as_ref(), x.as_ref()).unwrap();
        for i in 0..25 {
            for j in 0..25 {
                assert_eq!(c[(i, j)], g.get(i, j));
            }
        }
        let empty = cross_gram(&k, x.as_ref(), Mat::<f64>::zeros(0, 3).as_ref()).unwrap();
        assert_eq!((empty.nrows(), empty.ncols()), (0, 25));

        let q = Mat::from_fn(1, 3, |_, j| x[(7, j)]);
        let row = cross_gram(&k, x.as_ref(), q.as_ref()).unwrap();
        assert_eq!(row[(0, 7)], 1.0);
        assert!((0..25).filter(|&j| j != 7).all(|j| row[(0, j)] < 1.0));

        assert!(cross_gram(&k, x.as_ref(), Mat::<f64>::zeros(2, 2).as_ref()).is_err());
    }

    #[test]
    fn parallel_and_sequential_gram_are_identical() {
        let k = GaussianKernel::new(0.25).unwrap();
        let x = random_points(120, 5, 11);
        let a = gram_with(&k, x.as_ref(), Exec::Sequential).unwrap();
        let b = gram_with(&k, x.as_ref(), Exec::Parallel).unwrap();
        for i in 0..120 {
            for j in 0..120 {
                assert_eq!(a.get(i, j).to_bits(), b.get(i, j).to_bits());
            }
        }
    }

    #[test]
    fn submatrix_and_matvec() {
        let k = GaussianKernel::new(0.5).unwrap();
        let x = random_points(8, 2, 5);
        let g = gram(&k, x.as_ref()).unwrap();
        let idx = [6, 1, 3];
        let p = g.principal(&idx);
        assert_eq!(p.get(0, 2), g.get(6, 3));
        let b = g.block(&[0, 2], &idx);
        assert_eq!(b[(1, 0)], g.get(2, 6));
        let v: Vec<f64> = (0..8).map(|i| i as f64 - 3.0).collect();
        let kv = g.matvec(&v);
        for i in 0..8 {
            let e: f64 = (0..8).map(|j| g.get(i, j) * v[j]).sum();
            assert_relative_eq!(kv[i], e, epsilon = 1e-12);
        }
    }
}
