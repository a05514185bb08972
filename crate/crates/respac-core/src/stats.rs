//! Empirical moment estimation, spectral decomposition, entropy estimation,
//! and kurtosis — the statistical substrate of every calibrator.
//!
//! Covariances use the 1/m normalization throughout; calibrators depend on
//! that convention. The entropy estimator is Kozachenko–Leonenko with digamma
//! correction, Euclidean metric, and a 1e-12 distance floor for duplicates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-8;
const DIST_FLOOR: f64 = 1e-12;

/// Eigendecomposition of a symmetric PSD matrix, eigenvalues descending,
/// eigenvectors as orthonormal columns.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.eigenvectors
            * DMatrix::from_diagonal(&self.eigenvalues)
            * self.eigenvectors.transpose()
    }
}

/// Mean and covariance with 1/m normalization.
pub fn empirical_mean_cov(samples: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = samples.nrows();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples, got {m}"
        )));
    }
    let d = samples.ncols();
    let mean = DVector::from_iterator(d, (0..d).map(|j| samples.column(j).mean()));
    let mut centered = samples.clone();
    for i in 0..m {
        for j in 0..d {
            centered[(i, j)] -= mean[j];
        }
    }
    let cov = centered.transpose() * &centered / m as f64;
    // symmetrize rounding noise
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok((mean, cov))
}

/// Symmetric eigendecomposition, descending order.
pub fn eigendecompose(cov: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    let d = cov.nrows();
    if cov.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: cov.ncols(),
        });
    }
    let asym = (cov - cov.transpose()).abs().max();
    if asym > ORTHO_TOL {
        return Err(Error::NotSymmetric { tol: ORTHO_TOL });
    }
    let eig = cov.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(d, idx.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = DMatrix::from_columns(
        &idx.iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Shannon entropy of a pmf, nats, with 0 ln 0 := 0.
pub fn discrete_entropy(pmf: &[f64]) -> Result<f64> {
    if pmf.is_empty() || pmf.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::InvalidPmf("negative, empty, or non-finite".into()));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidPmf(format!("sums to {total}")));
    }
    Ok(-pmf
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>())
}

/// Digamma function via the asymptotic series with upward recurrence.
pub fn digamma(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + x.ln()
        - 0.5 * inv
        - inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 / 240.0)))
}

/// Kozachenko–Leonenko differential-entropy estimate, nats.
///
/// `H = psi(m) - psi(k) + ln V_d + (d/m) * sum ln r_i`, with `r_i` the
/// distance to the k-th nearest neighbor.
pub fn knn_entropy(samples: &DMatrix<f64>, k: usize) -> Result<f64> {
    let m = samples.nrows();
    let d = samples.ncols();
    if k < 1 || m <= k {
        return Err(Error::InvalidArgument(format!(
            "need m > k >= 1, got m={m}, k={k}"
        )));
    }
    let log_vd = (d as f64 / 2.0) * std::f64::consts::PI.ln()
        - ln_gamma(d as f64 / 2.0 + 1.0);
    let mean_log_r = if d == 1 {
        mean_log_knn_dist_1d(samples, k)
    } else {
        mean_log_knn_dist_nd(samples, k)
    };
    Ok(digamma(m as f64) - digamma(k as f64) + log_vd + d as f64 * mean_log_r)
}

fn mean_log_knn_dist_1d(samples: &DMatrix<f64>, k: usize) -> f64 {
    let m = samples.nrows();
    let mut xs: Vec<f64> = samples.column(0).iter().copied().collect();
    xs.sort_by(f64::total_cmp);
    let mut acc = 0.0;
    for i in 0..m {
        // k-th smallest absolute gap among neighbors in the sorted order:
        // merge the k left and k right gaps
        let mut lo = i;
        let mut hi = i;
        let mut dist = 0.0;
        for _ in 0..k {
            let left = if lo > 0 { xs[i] - xs[lo - 1] } else { f64::INFINITY };
            let right = if hi + 1 < m {
                xs[hi + 1] - xs[i]
            } else {
                f64::INFINITY
            };
            if left <= right {
                dist = left;
                lo -= 1;
            } else {
                dist = right;
                hi += 1;
            }
        }
        acc += dist.max(DIST_FLOOR).ln();
    }
    acc / m as f64
}

fn mean_log_knn_dist_nd(samples: &DMatrix<f64>, k: usize) -> f64 {
    let m = samples.nrows();
    let d = samples.ncols();
    let pts: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..d).map(|j| samples[(i, j)]).collect())
        .collect();
    let tree = KdTree::build(&pts);
    let mut acc = 0.0;
    for (i, p) in pts.iter().enumerate() {
        let r = tree.kth_neighbor_dist(p, i, k, &pts);
        acc += r.max(DIST_FLOOR).ln();
    }
    acc / m as f64
}

/// ln Γ via the Lanczos approximation.
fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut a = G[0];
    let t = x + 7.5;
    for (i, &g) in G.iter().enumerate().skip(1) {
        a += g / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

struct KdNode {
    point: usize,
    axis: usize,
    left: Option<Box<KdNode>>,
    right: Option<Box<KdNode>>,
}

struct KdTree {
    root: Option<Box<KdNode>>,
}

impl KdTree {
    fn build(pts: &[Vec<f64>]) -> Self {
        let mut idx: Vec<usize> = (0..pts.len()).collect();
        let d = if pts.is_empty() { 0 } else { pts[0].len() };
        Self {
            root: Self::build_rec(pts, &mut idx, 0, d),
        }
    }

    fn build_rec(
        pts: &[Vec<f64>],
        idx: &mut [usize],
        depth: usize,
        d: usize,
    ) -> Option<Box<KdNode>> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % d;
        idx.sort_by(|&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let mid = idx.len() / 2;
        let point = idx[mid];
        let (left, rest) = idx.split_at_mut(mid);
        let right = &mut rest[1..];
        Some(Box::new(KdNode {
            point,
            axis,
            left: Self::build_rec(pts, left, depth + 1, d),
            right: Self::build_rec(pts, right, depth + 1, d),
        }))
    }

    /// Distance to the k-th nearest neighbor of `query`, excluding `skip`.
    fn kth_neighbor_dist(&self, query: &[f64], skip: usize, k: usize, pts: &[Vec<f64>]) -> f64 {
        // max-heap of the k best squared distances
        let mut heap: Vec<f64> = Vec::with_capacity(k + 1);
        Self::search(&self.root, query, skip, k, pts, &mut heap);
        heap.iter().copied().fold(0.0, f64::max).sqrt()
    }

    fn search(
        node: &Option<Box<KdNode>>,
        query: &[f64],
        skip: usize,
        k: usize,
        pts: &[Vec<f64>],
        heap: &mut Vec<f64>,
    ) {
        let Some(n) = node else { return };
        if n.point != skip {
            let d2: f64 = pts[n.point]
                .iter()
                .zip(query)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            if heap.len() < k {
                heap.push(d2);
            } else {
                let (max_i, &max_v) = heap
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap();
                if d2 < max_v {
                    heap[max_i] = d2;
                }
            }
        }
        let diff = query[n.axis] - pts[n.point][n.axis];
        let (near, far) = if diff < 0.0 {
            (&n.left, &n.right)
        } else {
            (&n.right, &n.left)
        };
        Self::search(near, query, skip, k, pts, heap);
        let worst = if heap.len() < k {
            f64::INFINITY
        } else {
            heap.iter().copied().fold(0.0, f64::max)
        };
        if diff * diff < worst {
            Self::search(far, query, skip, k, pts, heap);
        }
    }
}

/// Second and fourth central moments of a 1-d sample:
/// `sigma2 = mean(z~^2)`, `kappa4 = mean(z~^4) - 3 sigma2^2`.
pub fn excess_kurtosis(samples: &[f64]) -> Result<(f64, f64)> {
    let m = samples.len();
    if m < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 samples, got {m}"
        )));
    }
    let mean = samples.iter().sum::<f64>() / m as f64;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for &x in samples {
        let z = x - mean;
        let z2 = z * z;
        m2 += z2;
        m4 += z2 * z2;
    }
    m2 /= m as f64;
    m4 /= m as f64;
    Ok((m2, m4 - 3.0 * m2 * m2))
}

/// Per-column empirical variance of samples projected onto a unitary basis
/// (columns of `basis`).
pub fn projected_variances(samples: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = samples.ncols();
    if basis.nrows() != d || basis.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: basis.nrows(),
        });
    }
    let gram = basis.transpose() * basis;
    let dev = (&gram - DMatrix::identity(d, d)).abs().max();
    if dev > ORTHO_TOL {
        return Err(Error::InvalidArgument(format!(
            "basis not unitary: max Gram deviation {dev}"
        )));
    }
    let projected = samples * basis;
    let m = projected.nrows() as f64;
    Ok(DVector::from_iterator(
        d,
        (0..d).map(|j| {
            let col = projected.column(j);
            let mean = col.mean();
            col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / m
        }),
    ))
}
