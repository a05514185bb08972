//! Ground-truth numerical oracles: mutual information and conditional
//! entropy for discrete inputs through a Gaussian channel, KL divergence to
//! the moment-matched Gaussian, directional MMSE, and a brute-force trace
//! minimizer. All quadrature values carry a node-doubling stability check.
//!
//! Oracles are limited to d <= 2 and discrete inputs or analytic 1-d
//! densities — the desk-scale perimeter where quadrature is exact to
//! tolerance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats;

const LN_2PI: f64 = 1.837_877_066_409_345_4;
const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadRule {
    GaussLegendre,
    Trapezoid,
}

/// Quadrature configuration. Bounds default to mean +- 12 standard
/// deviations per dimension when not given explicitly.
#[derive(Debug, Clone)]
pub struct QuadratureSpec {
    pub nodes: usize,
    pub rule: QuadRule,
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            nodes: 2001,
            rule: QuadRule::GaussLegendre,
            bounds: None,
        }
    }
}

/// A quadrature result together with the change observed when the node count
/// is doubled; values with delta above 1e-6 are rejected upstream.
#[derive(Debug, Clone, Copy)]
pub struct OracleValue {
    pub value: f64,
    pub node_doubling_delta: f64,
}

/// Nodes and weights for integration over [lo, hi].
pub fn quadrature_nodes(rule: QuadRule, n: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    match rule {
        QuadRule::GaussLegendre => {
            let (x, w) = gauss_legendre(n);
            let c = 0.5 * (hi - lo);
            let m = 0.5 * (hi + lo);
            (
                x.iter().map(|&xi| m + c * xi).collect(),
                w.iter().map(|&wi| c * wi).collect(),
            )
        }
        QuadRule::Trapezoid => {
            let h = (hi - lo) / (n - 1) as f64;
            let x: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
            let mut w = vec![h; n];
            w[0] = 0.5 * h;
            w[n - 1] = 0.5 * h;
            (x, w)
        }
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j as f64 + 1.0) * z * p1 - j as f64 * p2) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * pp * pp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Shared-covariance Gaussian mixture density in d <= 2 dimensions.
struct GaussMixture {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    inv: DMatrix<f64>,
    log_norm: f64,
}

impl GaussMixture {
    fn new(weights: &[f64], locations: &[Vec<f64>], cov: &DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        let chol = cov.clone().cholesky().ok_or(Error::SingularCovariance)?;
        let logdet = 2.0 * (0..d).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
        Ok(Self {
            weights: weights.to_vec(),
            means: locations
                .iter()
                .map(|l| DVector::from_column_slice(l))
                .collect(),
            inv: chol.inverse(),
            log_norm: -0.5 * (d as f64 * LN_2PI + logdet),
        })
    }

    fn density(&self, y: &DVector<f64>) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(&w, mu)| {
                let diff = y - mu;
                let q = (diff.transpose() * &self.inv * &diff)[(0, 0)];
                w * (self.log_norm - 0.5 * q).exp()
            })
            .sum()
    }

    fn component_density(&self, j: usize, y: &DVector<f64>) -> f64 {
        let diff = y - &self.means[j];
        let q = (diff.transpose() * &self.inv * &diff)[(0, 0)];
        (self.log_norm - 0.5 * q).exp()
    }
}

fn mixture_bounds(locations: &[Vec<f64>], cov: &DMatrix<f64>, widen: f64) -> Vec<(f64, f64)> {
    let d = cov.nrows();
    (0..d)
        .map(|i| {
            let sigma = cov[(i, i)].sqrt();
            let lo = locations.iter().map(|l| l[i]).fold(f64::INFINITY, f64::min);
            let hi = locations
                .iter()
                .map(|l| l[i])
                .fold(f64::NEG_INFINITY, f64::max);
            (lo - widen * sigma, hi + widen * sigma)
        })
        .collect()
}

/// Integrate `f` over the (1- or 2-d) box with the given node count.
fn integrate<F: Fn(&DVector<f64>) -> f64>(
    f: &F,
    bounds: &[(f64, f64)],
    rule: QuadRule,
    n: usize,
) -> f64 {
    match bounds.len() {
        1 => {
            let (x, w) = quadrature_nodes(rule, n, bounds[0].0, bounds[0].1);
            x.iter()
                .zip(&w)
                .map(|(&xi, &wi)| wi * f(&DVector::from_column_slice(&[xi])))
                .sum()
        }
        2 => {
            let (x0, w0) = quadrature_nodes(rule, n, bounds[0].0, bounds[0].1);
            let (x1, w1) = quadrature_nodes(rule, n, bounds[1].0, bounds[1].1);
            let mut acc = 0.0;
            let mut y = DVector::zeros(2);
            for (i, &xi) in x0.iter().enumerate() {
                y[0] = xi;
                let mut inner = 0.0;
                for (j, &xj) in x1.iter().enumerate() {
                    y[1] = xj;
                    inner += w1[j] * f(&y);
                }
                acc += w0[i] * inner;
            }
            acc
        }
        _ => unreachable!("oracle quadrature supports d <= 2 only"),
    }
}

/// Integrate with the node-doubling stability check.
fn integrate_checked<F: Fn(&DVector<f64>) -> f64>(
    f: &F,
    bounds: &[(f64, f64)],
    quad: &QuadratureSpec,
) -> OracleValue {
    let coarse = integrate(f, bounds, quad.rule, quad.nodes);
    let fine = integrate(f, bounds, quad.rule, 2 * quad.nodes + 1);
    OracleValue {
        value: fine,
        node_doubling_delta: (fine - coarse).abs(),
    }
}

/// 1-d integration over [lo, hi] split at interior breakpoints, so kinked
/// densities keep spectral convergence on each smooth segment.
pub fn integrate_1d_piecewise<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
    breaks: &[f64],
    rule: QuadRule,
    n: usize,
) -> f64 {
    let mut cuts: Vec<f64> = std::iter::once(lo)
        .chain(breaks.iter().copied().filter(|&b| b > lo && b < hi))
        .chain(std::iter::once(hi))
        .collect();
    cuts.sort_by(f64::total_cmp);
    let mut acc = 0.0;
    for seg in cuts.windows(2) {
        let (x, w) = quadrature_nodes(rule, n, seg[0], seg[1]);
        acc += x.iter().zip(&w).map(|(&xi, &wi)| wi * f(xi)).sum::<f64>();
    }
    acc
}

fn effective_bounds(
    quad: &QuadratureSpec,
    default: impl Fn() -> Vec<(f64, f64)>,
) -> Vec<(f64, f64)> {
    quad.bounds.clone().unwrap_or_else(default)
}

/// Exact MI (nats) of a discrete input through a Gaussian channel with the
/// given per-symbol output locations: `H(Y) - H(Y|X)` with `H(Y)` by
/// quadrature over the mixture density of Y.
pub fn mi_oracle_discrete_x(
    pmf: &[f64],
    locations: &[Vec<f64>],
    noise_cov: &DMatrix<f64>,
    quad: &QuadratureSpec,
) -> Result<OracleValue> {
    let d = noise_cov.nrows();
    if d > 2 {
        return Err(Error::InvalidArgument("oracle supports d <= 2".into()));
    }
    if locations.len() != pmf.len() || locations.iter().any(|l| l.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: pmf.len(),
            got: locations.len(),
        });
    }
    let mix = GaussMixture::new(pmf, locations, noise_cov)?;
    let bounds = effective_bounds(quad, || mixture_bounds(locations, noise_cov, 12.0));
    let h_y = integrate_checked(
        &|y: &DVector<f64>| {
            let p = mix.density(y);
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        },
        &bounds,
        quad,
    );
    if h_y.node_doubling_delta > CONVERGENCE_TOL {
        return Err(Error::QuadratureNotConverged {
            delta: h_y.node_doubling_delta,
        });
    }
    // conditional entropy of the Gaussian channel
    let chol = noise_cov.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let logdet = 2.0 * (0..d).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
    let h_y_given_x = 0.5 * (d as f64 * (LN_2PI + 1.0) + logdet);
    Ok(OracleValue {
        value: h_y.value - h_y_given_x,
        node_doubling_delta: h_y.node_doubling_delta,
    })
}

/// `H(X|Y) = H(X) - MI` for the same channel.
pub fn conditional_entropy_oracle(
    pmf: &[f64],
    locations: &[Vec<f64>],
    noise_cov: &DMatrix<f64>,
    quad: &QuadratureSpec,
) -> Result<OracleValue> {
    let mi = mi_oracle_discrete_x(pmf, locations, noise_cov, quad)?;
    Ok(OracleValue {
        value: stats::discrete_entropy(pmf)? - mi.value,
        node_doubling_delta: mi.node_doubling_delta,
    })
}

/// Named 1-d base densities for the KL oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Base1d {
    Gaussian { mean: f64, std: f64 },
    Laplace { loc: f64, scale: f64 },
    Uniform { lower: f64, upper: f64 },
}

impl Base1d {
    fn mean(&self) -> f64 {
        match *self {
            Self::Gaussian { mean, .. } => mean,
            Self::Laplace { loc, .. } => loc,
            Self::Uniform { lower, upper } => 0.5 * (lower + upper),
        }
    }

    fn variance(&self) -> f64 {
        match *self {
            Self::Gaussian { std, .. } => std * std,
            Self::Laplace { scale, .. } => 2.0 * scale * scale,
            Self::Uniform { lower, upper } => (upper - lower) * (upper - lower) / 12.0,
        }
    }

    fn density(&self, z: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, std } => gauss_pdf(z, mean, std),
            Self::Laplace { loc, scale } => (-(z - loc).abs() / scale).exp() / (2.0 * scale),
            Self::Uniform { lower, upper } => {
                if z >= lower && z <= upper {
                    1.0 / (upper - lower)
                } else {
                    0.0
                }
            }
        }
    }

    /// Density of base + N(0, noise_var), in closed form per base family.
    fn convolved_density(&self, z: f64, noise_var: f64) -> f64 {
        if noise_var == 0.0 {
            return self.density(z);
        }
        let sigma = noise_var.sqrt();
        match *self {
            Self::Gaussian { mean, std } => gauss_pdf(z, mean, (std * std + noise_var).sqrt()),
            Self::Uniform { lower, upper } => {
                let phi = |t: f64| 0.5 * libm::erfc(-t / std::f64::consts::SQRT_2);
                (phi((z - lower) / sigma) - phi((z - upper) / sigma)) / (upper - lower)
            }
            Self::Laplace { loc, scale } => {
                // with a = sigma/(b sqrt2), c = u/(sigma sqrt2), the exact
                // convolution collapses to
                // f = exp(-c^2) [erfcx(c+a) + erfcx(a-c)] / (4b)
                let u = z - loc;
                let b = scale;
                let a = sigma / (b * std::f64::consts::SQRT_2);
                let c = u / (sigma * std::f64::consts::SQRT_2);
                let c2 = c * c;
                (term_exp_erfcx(c2, c + a) + term_exp_erfcx(c2, a - c)) / (4.0 * b)
            }
        }
    }
}

/// `exp(-c2) * erfcx(x)`, kept finite on both tails. For very negative `x`
/// the dominant `2 exp(x^2)` part of erfcx is folded into the exponent.
fn term_exp_erfcx(c2: f64, x: f64) -> f64 {
    if x >= -25.0 {
        (-c2).exp() * erfcx(x)
    } else {
        2.0 * (x * x - c2).exp()
    }
}

/// `erfcx(x) = exp(x^2) erfc(x)` with an overflow-safe tail for large x.
fn erfcx(x: f64) -> f64 {
    if x < 25.0 {
        (x * x).exp() * libm::erfc(x)
    } else {
        // asymptotic series erfcx(x) ~ (1 - 1/(2x^2) + 3/(4x^4)) / (x sqrt pi)
        let inv2 = 1.0 / (x * x);
        (1.0 - 0.5 * inv2 + 0.75 * inv2 * inv2) / (x * std::f64::consts::PI.sqrt())
    }
}

fn gauss_pdf(z: f64, mean: f64, std: f64) -> f64 {
    let t = (z - mean) / std;
    (-0.5 * t * t).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Analytic 1-d density of a perturbed output Z, either a Gaussian mixture
/// or a named base density convolved with Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub enum Density1d {
    GaussianMix {
        weights: Vec<f64>,
        means: Vec<f64>,
        stds: Vec<f64>,
    },
    Convolved { base: Base1d, noise_var: f64 },
}

impl Density1d {
    pub fn mean(&self) -> f64 {
        match self {
            Self::GaussianMix { weights, means, .. } => {
                weights.iter().zip(means).map(|(&w, &m)| w * m).sum()
            }
            Self::Convolved { base, .. } => base.mean(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Self::GaussianMix {
                weights,
                means,
                stds,
            } => {
                let mu = self.mean();
                weights
                    .iter()
                    .zip(means.iter().zip(stds))
                    .map(|(&w, (&m, &s))| w * (s * s + m * m))
                    .sum::<f64>()
                    - mu * mu
            }
            Self::Convolved { base, noise_var } => base.variance() + noise_var,
        }
    }

    pub fn density(&self, z: f64) -> f64 {
        match self {
            Self::GaussianMix {
                weights,
                means,
                stds,
            } => weights
                .iter()
                .zip(means.iter().zip(stds))
                .map(|(&w, (&m, &s))| w * gauss_pdf(z, m, s))
                .sum(),
            Self::Convolved { base, noise_var } => base.convolved_density(z, *noise_var),
        }
    }

    /// Interior points where the density is not smooth; quadrature intervals
    /// are split there.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::Convolved { base, noise_var } if *noise_var == 0.0 => match *base {
                Base1d::Laplace { loc, .. } => vec![loc],
                Base1d::Uniform { lower, upper } => vec![lower, upper],
                Base1d::Gaussian { .. } => vec![],
            },
            _ => vec![],
        }
    }

    /// Add Gaussian noise of the given variance on top.
    pub fn with_extra_noise(&self, extra_var: f64) -> Result<Self> {
        match self {
            Self::Convolved { base, noise_var } => Ok(Self::Convolved {
                base: *base,
                noise_var: noise_var + extra_var,
            }),
            Self::GaussianMix {
                weights,
                means,
                stds,
            } => Ok(Self::GaussianMix {
                weights: weights.clone(),
                means: means.clone(),
                stds: stds.iter().map(|&s| (s * s + extra_var).sqrt()).collect(),
            }),
        }
    }
}

/// `D_KL(P_Z || N(mu_Z, sigma_Z^2))` by quadrature; the exact slack of the
/// LogDet surrogate. Bounds are auto-widened once if the node-doubling check
/// fails.
pub fn kl_to_moment_matched_gaussian(
    density: &Density1d,
    quad: &QuadratureSpec,
) -> Result<OracleValue> {
    let mu = density.mean();
    let var = density.variance();
    let std = var.sqrt();
    let integrand = |z: f64| {
        let p = density.density(z);
        if p <= 0.0 {
            return 0.0;
        }
        let q = gauss_pdf(z, mu, std);
        p * (p.ln() - q.ln())
    };
    let breaks = density.breakpoints();
    let mut last_delta = f64::INFINITY;
    for widen in [12.0, 18.0] {
        let (lo, hi) = match &quad.bounds {
            Some(b) => b[0],
            None => (mu - widen * std, mu + widen * std),
        };
        let coarse = integrate_1d_piecewise(&integrand, lo, hi, &breaks, quad.rule, quad.nodes);
        let fine =
            integrate_1d_piecewise(&integrand, lo, hi, &breaks, quad.rule, 2 * quad.nodes + 1);
        last_delta = (fine - coarse).abs();
        if last_delta <= CONVERGENCE_TOL {
            return Ok(OracleValue {
                value: fine.max(0.0),
                node_doubling_delta: last_delta,
            });
        }
        if quad.bounds.is_some() {
            break;
        }
    }
    Err(Error::QuadratureNotConverged { delta: last_delta })
}

/// Half the minimum mean-squared error of estimating the clean output's
/// projection on `direction` from the noisy observation, by posterior-mean
/// quadrature. Returns g(w) = mmse / 2.
pub fn directional_mmse(
    pmf: &[f64],
    locations: &[Vec<f64>],
    noise_cov: &DMatrix<f64>,
    direction: &[f64],
    quad: &QuadratureSpec,
) -> Result<OracleValue> {
    let d = noise_cov.nrows();
    if d > 2 {
        return Err(Error::InvalidArgument("oracle supports d <= 2".into()));
    }
    let wnorm: f64 = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (wnorm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "direction must be a unit vector, got norm {wnorm}"
        )));
    }
    let mix = GaussMixture::new(pmf, locations, noise_cov)?;
    let t: Vec<f64> = locations
        .iter()
        .map(|l| l.iter().zip(direction).map(|(&a, &b)| a * b).sum())
        .collect();
    let bounds = effective_bounds(quad, || mixture_bounds(locations, noise_cov, 12.0));
    let v = integrate_checked(
        &|y: &DVector<f64>| {
            let comps: Vec<f64> = (0..pmf.len())
                .map(|j| pmf[j] * mix.component_density(j, y))
                .collect();
            let total: f64 = comps.iter().sum();
            if total <= 0.0 {
                return 0.0;
            }
            let post_mean: f64 = comps.iter().zip(&t).map(|(&c, &tj)| c * tj).sum::<f64>() / total;
            comps
                .iter()
                .zip(&t)
                .map(|(&c, &tj)| c * (tj - post_mean) * (tj - post_mean))
                .sum::<f64>()
        },
        &bounds,
        quad,
    );
    if v.node_doubling_delta > CONVERGENCE_TOL {
        return Err(Error::QuadratureNotConverged {
            delta: v.node_doubling_delta,
        });
    }
    Ok(OracleValue {
        value: 0.5 * v.value,
        node_doubling_delta: v.node_doubling_delta,
    })
}

/// Result of the exhaustive d=2 trace minimization.
#[derive(Debug, Clone, Copy)]
pub struct BruteForceTraceMin {
    pub trace: f64,
    pub ell: (f64, f64),
    /// True when the optimum sits at the scanned boundary, i.e. the search
    /// range clipped the feasible set.
    pub boundary_hit: bool,
}

/// Exhaustive scan of the d=2 feasible set of
/// `1/2 [ln(1 + r1/l1) + ln(1 + r2/l2)] = beta`.
///
/// The constraint at equality is a one-parameter curve: fixing the budget
/// share `t1` of the first direction determines both variances in closed
/// form, so the scan enumerates `t1` on a fine grid instead of an infeasible
/// two-dimensional box.
pub fn brute_force_trace_min(
    r: (f64, f64),
    beta: f64,
    grid_resolution: usize,
) -> Result<BruteForceTraceMin> {
    if beta <= 0.0 || r.0 <= 0.0 || r.1 <= 0.0 {
        return Err(Error::InvalidArgument(
            "need beta > 0 and positive signal eigenvalues".into(),
        ));
    }
    if grid_resolution < 3 {
        return Err(Error::InvalidArgument("grid_resolution must be >= 3".into()));
    }
    let ell_of = |ri: f64, ti: f64| ri / ((2.0 * ti).exp_m1());
    let mut best = f64::INFINITY;
    let mut best_ell = (0.0, 0.0);
    let mut best_idx = 0usize;
    let eps = 1e-6;
    for i in 0..grid_resolution {
        let frac = eps + (1.0 - 2.0 * eps) * i as f64 / (grid_resolution - 1) as f64;
        let t1 = beta * frac;
        let l1 = ell_of(r.0, t1);
        let l2 = ell_of(r.1, beta - t1);
        let trace = l1 + l2;
        if trace < best {
            best = trace;
            best_ell = (l1, l2);
            best_idx = i;
        }
    }
    Ok(BruteForceTraceMin {
        trace: best,
        ell: best_ell,
        boundary_hit: best_idx == 0 || best_idx == grid_resolution - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrators;
    use crate::seed;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iso_cov(var: f64, d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d) * var
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = quadrature_nodes(QuadRule::GaussLegendre, 5, 0.0, 1.0);
        // degree-9 polynomial is exact with 5 nodes
        let v: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(9)).sum();
        assert_relative_eq!(v, 0.1, epsilon = 1e-14);
        let total: f64 = w.iter().sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn trapezoid_matches_on_smooth_density() {
        let quad = QuadratureSpec {
            nodes: 4001,
            rule: QuadRule::Trapezoid,
            bounds: None,
        };
        let mi = mi_oracle_discrete_x(
            &[0.5, 0.5],
            &[vec![-1.0], vec![1.0]],
            &iso_cov(1.0, 1),
            &quad,
        )
        .unwrap();
        let gl = mi_oracle_discrete_x(
            &[0.5, 0.5],
            &[vec![-1.0], vec![1.0]],
            &iso_cov(1.0, 1),
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert_relative_eq!(mi.value, gl.value, epsilon = 1e-6);
    }

    #[test]
    fn mi_limits() {
        let locs = vec![vec![-1.0], vec![1.0]];
        let pmf = [0.5, 0.5];
        let quad = QuadratureSpec::default();
        let hi_noise = mi_oracle_discrete_x(&pmf, &locs, &iso_cov(100.0 * 100.0, 1), &quad)
            .unwrap();
        assert!(hi_noise.value.abs() <= 1e-3, "mi={}", hi_noise.value);
        let lo_noise = mi_oracle_discrete_x(&pmf, &locs, &iso_cov(1e-8, 1), &quad).unwrap();
        assert_relative_eq!(lo_noise.value, 2.0f64.ln(), epsilon = 1e-4);
    }

    #[test]
    fn mi_cross_checked_against_monte_carlo() {
        let locs = vec![vec![-1.0], vec![1.0]];
        let pmf = [0.5, 0.5];
        let quad = QuadratureSpec::default();
        let mi = mi_oracle_discrete_x(&pmf, &locs, &iso_cov(1.0, 1), &quad).unwrap();

        // MC estimate of H(Y) - H(Y|X) via the mixture log-density
        let mut rng = seed::rng(1234);
        let n = 200_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let s: f64 = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
            let z: f64 = StandardNormal.sample(&mut rng);
            let y = s + z;
            let p = 0.5 * gauss_pdf(y, -1.0, 1.0) + 0.5 * gauss_pdf(y, 1.0, 1.0);
            let v = -p.ln() - 0.5 * (LN_2PI + 1.0);
            acc += v;
            acc2 += v * v;
        }
        let mean = acc / n as f64;
        let se = ((acc2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mi.value - mean).abs() <= 3.0 * se,
            "quad {} vs mc {} +- {}",
            mi.value,
            mean,
            se
        );
    }

    #[test]
    fn conditional_entropy_chain_rule() {
        let locs = vec![vec![-3.0], vec![-1.0], vec![1.0], vec![3.0]];
        let pmf = [0.25; 4];
        let quad = QuadratureSpec::default();
        let mi = mi_oracle_discrete_x(&pmf, &locs, &iso_cov(1.0, 1), &quad).unwrap();
        let h = conditional_entropy_oracle(&pmf, &locs, &iso_cov(1.0, 1), &quad).unwrap();
        assert_relative_eq!(
            mi.value + h.value,
            4.0f64.ln(),
            epsilon = 1e-8
        );
        assert!(h.value > 0.0 && h.value < 4.0f64.ln());
    }

    #[test]
    fn data_processing_on_noise_grid() {
        let locs = vec![vec![-1.0], vec![1.0]];
        let pmf = [0.5, 0.5];
        let quad = QuadratureSpec::default();
        let mut prev = f64::INFINITY;
        for var in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let mi = mi_oracle_discrete_x(&pmf, &locs, &iso_cov(var, 1), &quad)
                .unwrap()
                .value;
            assert!(mi <= prev + 1e-9, "mi not decreasing at var={var}");
            prev = mi;
        }
    }

    #[test]
    fn mi_2d_channel() {
        let locs = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let pmf = [0.5, 0.5];
        let quad = QuadratureSpec {
            nodes: 501,
            ..Default::default()
        };
        let mi2 = mi_oracle_discrete_x(&pmf, &locs, &iso_cov(1.0, 2), &quad).unwrap();
        // the second coordinate carries no information: 1-d value must match
        let mi1 = mi_oracle_discrete_x(
            &pmf,
            &[vec![-1.0], vec![1.0]],
            &iso_cov(1.0, 1),
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert_relative_eq!(mi2.value, mi1.value, epsilon = 1e-5);
    }

    #[test]
    fn kl_gaussian_is_zero() {
        let d = Density1d::Convolved {
            base: Base1d::Gaussian {
                mean: 0.5,
                std: 1.3,
            },
            noise_var: 0.7,
        };
        let v = kl_to_moment_matched_gaussian(&d, &QuadratureSpec::default()).unwrap();
        assert!(v.value.abs() <= 1e-8, "kl={}", v.value);
    }

    #[test]
    fn kl_laplace_closed_form() {
        // D_KL(Laplace(0,1) || N(0,2)) = 0.5 ln(4 pi) - (1 + ln 2) + 0.5
        let d = Density1d::Convolved {
            base: Base1d::Laplace {
                loc: 0.0,
                scale: 1.0,
            },
            noise_var: 0.0,
        };
        let v = kl_to_moment_matched_gaussian(&d, &QuadratureSpec::default()).unwrap();
        assert_relative_eq!(v.value, 0.0724, epsilon = 1e-4);
    }

    #[test]
    fn laplace_convolved_density_is_normalized() {
        let base = Base1d::Laplace {
            loc: 0.5,
            scale: 1.0,
        };
        for var in [0.0, 0.25, 1.0, 4.0] {
            let total = integrate_1d_piecewise(
                &|z| base.convolved_density(z, var),
                -40.0,
                40.0,
                &[0.5],
                QuadRule::GaussLegendre,
                2001,
            );
            assert_relative_eq!(total, 1.0, epsilon = 1e-8);
            // sanity: matches a direct numerical convolution at a few points
            if var > 0.0 {
                for z in [-2.0, 0.5, 3.0] {
                    let num = integrate_1d_piecewise(
                        &|u| base.density(u) * gauss_pdf(z - u, 0.0, var.sqrt()),
                        -40.0,
                        40.0,
                        &[0.5],
                        QuadRule::GaussLegendre,
                        2001,
                    );
                    assert_relative_eq!(base.convolved_density(z, var), num, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn uniform_convolved_density_is_normalized() {
        let base = Base1d::Uniform {
            lower: -1.0,
            upper: 1.0,
        };
        let (x, w) = quadrature_nodes(QuadRule::GaussLegendre, 2001, -30.0, 30.0);
        for var in [0.25, 1.0] {
            let total: f64 = x
                .iter()
                .zip(&w)
                .map(|(&xi, &wi)| wi * base.convolved_density(xi, var))
                .sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn kl_mixture_decreases_with_noise() {
        let mix = Density1d::GaussianMix {
            weights: vec![0.5, 0.5],
            means: vec![-2.0, 2.0],
            stds: vec![0.5, 0.5],
        };
        let quad = QuadratureSpec::default();
        let mut prev = f64::INFINITY;
        for extra in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let kl = kl_to_moment_matched_gaussian(&mix.with_extra_noise(extra).unwrap(), &quad)
                .unwrap()
                .value;
            assert!(kl >= 0.0);
            assert!(kl < prev, "kl not decreasing at extra={extra}");
            prev = kl;
        }
    }

    #[test]
    fn directional_mmse_limits() {
        let pmf = [0.5, 0.5];
        let locs = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let quad = QuadratureSpec {
            nodes: 401,
            ..Default::default()
        };
        // direction orthogonal to the signal: projection is constant -> 0
        let g = directional_mmse(&pmf, &locs, &iso_cov(1.0, 2), &[0.0, 1.0], &quad).unwrap();
        assert!(g.value.abs() < 1e-10);
        // huge noise: mmse reverts to the prior variance (=1 here)
        let g = directional_mmse(&pmf, &locs, &iso_cov(1e4, 2), &[1.0, 0.0], &quad).unwrap();
        assert_relative_eq!(2.0 * g.value, 1.0, epsilon = 1e-3);
        assert!(directional_mmse(&pmf, &locs, &iso_cov(1.0, 2), &[0.5, 0.5], &quad).is_err());
    }

    #[test]
    fn directional_mmse_monte_carlo_cross_check() {
        let pmf = [0.5, 0.5];
        let locs = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let quad = QuadratureSpec {
            nodes: 401,
            ..Default::default()
        };
        let g = directional_mmse(&pmf, &locs, &iso_cov(1.0, 2), &[1.0, 0.0], &quad).unwrap();
        let mut rng = seed::rng(777);
        let n = 200_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let s: f64 = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
            let noise: f64 = StandardNormal.sample(&mut rng);
            let y0 = s + noise;
            // posterior mean of the first coordinate given y0 (second
            // coordinate is independent noise)
            let p_plus = gauss_pdf(y0, 1.0, 1.0);
            let p_minus = gauss_pdf(y0, -1.0, 1.0);
            let pm = (p_plus - p_minus) / (p_plus + p_minus);
            let e = (s - pm) * (s - pm);
            acc += e;
            acc2 += e * e;
        }
        let mean = acc / n as f64;
        let se = ((acc2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (2.0 * g.value - mean).abs() <= 3.0 * se,
            "quad {} vs mc {} +- {}",
            2.0 * g.value,
            mean,
            se
        );
    }

    #[test]
    fn brute_force_symmetric_case() {
        let res = brute_force_trace_min((1.0, 1.0), 2.0f64.ln(), 20_001).unwrap();
        assert_relative_eq!(res.ell.0, 1.0, epsilon = 1e-3);
        assert_relative_eq!(res.ell.1, 1.0, epsilon = 1e-3);
        assert_relative_eq!(res.trace, 2.0, epsilon = 1e-4);
        assert!(!res.boundary_hit);
    }

    #[test]
    fn brute_force_matches_waterfill() {
        let basis = DMatrix::identity(2, 2);
        let r = DVector::from_row_slice(&[4.0, 1.0]);
        let sol = calibrators::waterfill_calibrate(&r, &basis, 0.39925).unwrap();
        let res = brute_force_trace_min((4.0, 1.0), 0.39925, 20_001).unwrap();
        assert!(
            (res.trace - sol.trace()).abs() <= 1e-3 * sol.trace(),
            "grid {} vs waterfill {}",
            res.trace,
            sol.trace()
        );
    }

    #[test]
    fn brute_force_small_beta_blows_up() {
        let res = brute_force_trace_min((1.0, 1.0), 1e-6, 999).unwrap();
        assert!(res.trace > 1e5);
        assert!(brute_force_trace_min((1.0, 1.0), 0.0, 999).is_err());
    }
}
