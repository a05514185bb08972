//! Domain types shared by every calibrator and oracle: data distributions,
//! mechanisms, noise models, budget bookkeeping, and calibration reports.
//!
//! All types are immutable after construction and safe to share across
//! threads. Sampling is pure given `(arguments, seed)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

const PMF_TOL: f64 = 1e-12;
const SYM_TOL: f64 = 1e-10;
const EIG_TOL: f64 = -1e-10;

/// Sampleable source of private inputs. Discrete distributions carry an
/// explicit support and pmf; continuous ones carry a named sampler and, where
/// available, an analytic log-density (required by the oracle module).
#[derive(Debug, Clone, PartialEq)]
pub enum DataDistribution {
    /// Finite alphabet; `support[i]` is the input vector of symbol `i`.
    Discrete {
        support: Vec<Vec<f64>>,
        pmf: Vec<f64>,
    },
    /// Independent Gaussian coordinates.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    /// Independent uniform coordinates on [lower_i, upper_i].
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
    /// One-dimensional Gaussian mixture.
    GaussianMixture1d {
        weights: Vec<f64>,
        means: Vec<f64>,
        stds: Vec<f64>,
    },
    /// One-dimensional Laplace.
    Laplace1d { loc: f64, scale: f64 },
}

impl DataDistribution {
    pub fn discrete(support: Vec<Vec<f64>>, pmf: Vec<f64>) -> Result<Self> {
        if support.len() != pmf.len() || support.is_empty() {
            return Err(Error::InvalidPmf(format!(
                "support size {} does not match pmf size {}",
                support.len(),
                pmf.len()
            )));
        }
        if pmf.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidPmf("negative or non-finite entry".into()));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > PMF_TOL {
            return Err(Error::InvalidPmf(format!("entries sum to {total}, not 1")));
        }
        let dim = support[0].len();
        if support.iter().any(|s| s.len() != dim) {
            return Err(Error::InvalidPmf("ragged support".into()));
        }
        Ok(Self::Discrete { support, pmf })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Discrete { support, .. } => support[0].len(),
            Self::Gaussian { mean, .. } => mean.len(),
            Self::Uniform { lower, .. } => lower.len(),
            Self::GaussianMixture1d { .. } | Self::Laplace1d { .. } => 1,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Self::Discrete { .. })
    }

    pub fn as_discrete(&self) -> Option<(&[Vec<f64>], &[f64])> {
        match self {
            Self::Discrete { support, pmf } => Some((support, pmf)),
            _ => None,
        }
    }

    /// Draw one input. For discrete distributions the returned index is the
    /// symbol index; continuous distributions return `usize::MAX`.
    pub fn sample_with_index<R: Rng>(&self, rng: &mut R) -> (Vec<f64>, usize) {
        match self {
            Self::Discrete { support, pmf } => {
                let idx = sample_categorical(pmf, rng);
                (support[idx].clone(), idx)
            }
            Self::Gaussian { mean, std } => {
                let x = mean
                    .iter()
                    .zip(std)
                    .map(|(&m, &s)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + s * z
                    })
                    .collect();
                (x, usize::MAX)
            }
            Self::Uniform { lower, upper } => {
                let x = lower
                    .iter()
                    .zip(upper)
                    .map(|(&lo, &hi)| lo + (hi - lo) * rng.random::<f64>())
                    .collect();
                (x, usize::MAX)
            }
            Self::GaussianMixture1d {
                weights,
                means,
                stds,
            } => {
                let k = sample_categorical(weights, rng);
                let z: f64 = StandardNormal.sample(rng);
                (vec![means[k] + stds[k] * z], usize::MAX)
            }
            Self::Laplace1d { loc, scale } => {
                // inverse CDF
                let u: f64 = rng.random::<f64>() - 0.5;
                let x = loc - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
                (vec![x], usize::MAX)
            }
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.sample_with_index(rng).0
    }

    /// `m` seeded draws as rows.
    pub fn sample_matrix(&self, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seed::rng(seed);
        let d = self.dim();
        let mut out = DMatrix::zeros(m, d);
        for i in 0..m {
            let x = self.sample(&mut rng);
            for j in 0..d {
                out[(i, j)] = x[j];
            }
        }
        out
    }

    /// Analytic log-density for continuous one-dimensional kinds.
    pub fn log_density(&self, x: f64) -> Option<f64> {
        match self {
            Self::Gaussian { mean, std } if mean.len() == 1 => {
                Some(gaussian_log_pdf(x, mean[0], std[0]))
            }
            Self::Uniform { lower, upper } if lower.len() == 1 => {
                if x >= lower[0] && x <= upper[0] {
                    Some(-(upper[0] - lower[0]).ln())
                } else {
                    Some(f64::NEG_INFINITY)
                }
            }
            Self::GaussianMixture1d {
                weights,
                means,
                stds,
            } => {
                let p: f64 = weights
                    .iter()
                    .zip(means.iter().zip(stds))
                    .map(|(&w, (&m, &s))| w * gaussian_log_pdf(x, m, s).exp())
                    .sum();
                Some(p.max(f64::MIN_POSITIVE).ln())
            }
            Self::Laplace1d { loc, scale } => {
                Some(-(2.0 * scale).ln() - (x - loc).abs() / scale)
            }
            _ => None,
        }
    }
}

pub(crate) fn gaussian_log_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn sample_categorical<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Deterministic map from input space to `R^d`. `norm_bound` is a uniform
/// l2 bound on outputs, required by the Auto-PAC branch test.
#[derive(Debug, Clone, PartialEq)]
pub struct Mechanism {
    pub kind: MechanismKind,
    pub norm_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MechanismKind {
    Identity { dim: usize },
    Linear { matrix: DMatrix<f64> },
    /// Identity followed by projection onto the l2 ball of the given radius.
    ClippedNorm { dim: usize, radius: f64 },
    /// Maps the scalar symbol index in coordinate 0 to a point in `R^d`.
    SymbolLocations { locations: Vec<Vec<f64>> },
    /// Emits (class margin, nuisance) from input (s, g): the two-class
    /// desk-scale logit mechanism. The predicted label is the sign of the
    /// margin coordinate.
    ToyLogit {
        margin_scale: f64,
        nuisance_scale: f64,
    },
}

impl Mechanism {
    pub fn new(kind: MechanismKind) -> Self {
        let norm_bound = match &kind {
            MechanismKind::ClippedNorm { radius, .. } => Some(*radius),
            MechanismKind::SymbolLocations { locations } => Some(
                locations
                    .iter()
                    .map(|l| l.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .fold(0.0, f64::max),
            ),
            _ => None,
        };
        Self { kind, norm_bound }
    }

    pub fn with_norm_bound(mut self, r: f64) -> Self {
        self.norm_bound = Some(r);
        self
    }

    pub fn input_dim(&self) -> usize {
        match &self.kind {
            MechanismKind::Identity { dim } | MechanismKind::ClippedNorm { dim, .. } => *dim,
            MechanismKind::Linear { matrix } => matrix.ncols(),
            MechanismKind::SymbolLocations { .. } => 1,
            MechanismKind::ToyLogit { .. } => 2,
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.kind {
            MechanismKind::Identity { dim } | MechanismKind::ClippedNorm { dim, .. } => *dim,
            MechanismKind::Linear { matrix } => matrix.nrows(),
            MechanismKind::SymbolLocations { locations } => locations[0].len(),
            MechanismKind::ToyLogit { .. } => 2,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            MechanismKind::Identity { .. } => x.to_vec(),
            MechanismKind::Linear { matrix } => {
                let v = matrix * DVector::from_column_slice(x);
                v.iter().copied().collect()
            }
            MechanismKind::ClippedNorm { radius, .. } => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > *radius {
                    x.iter().map(|v| v * radius / norm).collect()
                } else {
                    x.to_vec()
                }
            }
            MechanismKind::SymbolLocations { locations } => {
                let idx = x[0].round() as usize;
                locations[idx.min(locations.len() - 1)].clone()
            }
            MechanismKind::ToyLogit {
                margin_scale,
                nuisance_scale,
            } => vec![margin_scale * x[0], nuisance_scale * x[1]],
        }
    }
}

/// A perturbation rule Q.
#[derive(Debug, Clone)]
pub enum NoiseModel {
    /// Fixed zero-mean Gaussian with the given covariance.
    GaussianFixed { cov: DMatrix<f64> },
    /// Diagonal Gaussian parametrized by per-coordinate log standard
    /// deviations, optionally expressed in an orthonormal basis (columns).
    /// Samples obey the reparametrization identity
    /// `sample = basis * (exp(log_std) .* eps)` with `eps` standard normal.
    GaussianDiagParam {
        log_std: Vec<f64>,
        basis: Option<DMatrix<f64>>,
    },
}

impl NoiseModel {
    pub fn gaussian_fixed(cov: DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        if cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.ncols(),
            });
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > SYM_TOL {
            return Err(Error::NotSymmetric { tol: SYM_TOL });
        }
        let eig = cov.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.min();
        if min_eig < EIG_TOL {
            return Err(Error::NotPositiveDefinite { min_eig });
        }
        Ok(Self::GaussianFixed { cov })
    }

    pub fn gaussian_diag(log_std: Vec<f64>) -> Self {
        Self::GaussianDiagParam {
            log_std,
            basis: None,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::GaussianFixed { cov } => cov.nrows(),
            Self::GaussianDiagParam { log_std, .. } => log_std.len(),
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            Self::GaussianFixed { cov } => cov.clone(),
            Self::GaussianDiagParam { log_std, basis } => {
                let d = log_std.len();
                let diag = DMatrix::from_diagonal(&DVector::from_iterator(
                    d,
                    log_std.iter().map(|&l| (2.0 * l).exp()),
                ));
                match basis {
                    Some(u) => u * diag * u.transpose(),
                    None => diag,
                }
            }
        }
    }

    /// Expected squared norm of a draw, `trace` of the covariance.
    pub fn noise_power(&self) -> f64 {
        self.covariance().trace()
    }

    /// `m` independent draws as rows.
    pub fn sample_matrix(&self, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seed::rng(seed);
        let d = self.dim();
        let mut out = DMatrix::zeros(m, d);
        match self {
            Self::GaussianFixed { cov } => {
                // eigenvalue square root; tolerates PSD covariances
                let eig = cov.clone().symmetric_eigen();
                let sqrt_vals: Vec<f64> =
                    eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()).collect();
                for i in 0..m {
                    let eps: Vec<f64> =
                        (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let scaled = DVector::from_iterator(
                        d,
                        eps.iter().zip(&sqrt_vals).map(|(&e, &s)| e * s),
                    );
                    let b = &eig.eigenvectors * scaled;
                    for j in 0..d {
                        out[(i, j)] = b[j];
                    }
                }
            }
            Self::GaussianDiagParam { log_std, basis } => {
                for i in 0..m {
                    let scaled = DVector::from_iterator(
                        d,
                        log_std.iter().map(|&l| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            l.exp() * z
                        }),
                    );
                    let b = match basis {
                        Some(u) => u * scaled,
                        None => scaled,
                    };
                    for j in 0..d {
                        out[(i, j)] = b[j];
                    }
                }
            }
        }
        out
    }
}

/// Provenance of the data-entropy figure in a [`BudgetSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyProvenance {
    Analytic,
    KnnEstimated,
    PlugIn,
}

/// Privacy budget in both conventions: a mutual-information cap `beta`
/// (nats) and a residual conditional-entropy floor `beta_hat`, linked by
/// `beta = data_entropy - beta_hat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub mi_cap: Option<f64>,
    pub residual_floor: Option<f64>,
    pub data_entropy: Option<f64>,
    pub entropy_provenance: EntropyProvenance,
}

impl BudgetSpec {
    pub fn from_mi_cap(beta: f64, entropy: f64, prov: EntropyProvenance) -> Self {
        Self {
            mi_cap: Some(beta),
            residual_floor: None,
            data_entropy: Some(entropy),
            entropy_provenance: prov,
        }
    }

    pub fn from_residual_floor(beta_hat: f64, entropy: f64, prov: EntropyProvenance) -> Self {
        Self {
            mi_cap: None,
            residual_floor: Some(beta_hat),
            data_entropy: Some(entropy),
            entropy_provenance: prov,
        }
    }

    /// Both conventions populated and mutually consistent within 1e-9.
    pub fn validate(&self) -> Result<()> {
        if let (Some(beta), Some(beta_hat), Some(h)) =
            (self.mi_cap, self.residual_floor, self.data_entropy)
        {
            if (beta - (h - beta_hat)).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "inconsistent budget: beta={beta}, H - beta_hat = {}",
                    h - beta_hat
                )));
            }
        }
        Ok(())
    }
}

/// Fill the missing convention of a budget via `beta = H - beta_hat`.
/// Converting twice returns the original spec bit-exactly.
pub fn residual_to_mi_budget(spec: &BudgetSpec) -> Result<BudgetSpec> {
    let h = spec.data_entropy.ok_or(Error::MissingEntropy)?;
    spec.validate()?;
    let mut out = *spec;
    match (spec.mi_cap, spec.residual_floor) {
        (Some(beta), None) => out.residual_floor = Some(h - beta),
        (None, Some(beta_hat)) => out.mi_cap = Some(h - beta_hat),
        (Some(_), Some(_)) => {}
        (None, None) => {
            return Err(Error::InvalidArgument(
                "budget carries neither convention".into(),
            ))
        }
    }
    Ok(out)
}

/// Which calibrator produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    AutoPacAnisotropic,
    AutoPacIsotropic,
    EfficientPac,
    Waterfill,
    Srpac,
}

/// Certified calibration output with provenance of every number.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub noise: NoiseModel,
    /// Surrogate bound actually enforced, nats.
    pub certified_bound: f64,
    /// Gap-corrected mutual-information estimate, when available.
    pub corrected_mi: Option<f64>,
    pub gap_estimate: Option<f64>,
    /// Expected squared noise norm.
    pub noise_power: f64,
    pub method: CalibrationMethod,
    pub seed: u64,
    pub sample_count: usize,
    /// Free-form provenance notes (branch taken, heuristic bounds, ...).
    pub flags: Vec<String>,
}

impl CalibrationReport {
    pub fn validate(&self) -> Result<()> {
        if let (Some(corrected), Some(gap)) = (self.corrected_mi, self.gap_estimate) {
            if (corrected - (self.certified_bound - gap)).abs() > 1e-12
                && !(corrected == 0.0 && self.certified_bound - gap < 0.0)
            {
                return Err(Error::InvalidArgument(
                    "corrected_mi != certified_bound - gap_estimate".into(),
                ));
            }
        }
        let trace = self.noise.covariance().trace();
        if (self.noise_power - trace).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "noise_power disagrees with covariance trace".into(),
            ));
        }
        Ok(())
    }
}

/// Evaluate the mechanism on `m` seeded draws; row `k` is the output of the
/// `k`-th draw. Rejects input-dimension mismatches and, when a norm bound is
/// declared, outputs exceeding it.
pub fn sample_mechanism_outputs(
    mech: &Mechanism,
    dist: &DataDistribution,
    m: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    if mech.input_dim() != dist.dim() {
        return Err(Error::DimensionMismatch {
            expected: mech.input_dim(),
            got: dist.dim(),
        });
    }
    let mut rng = seed::rng(seed);
    let d = mech.output_dim();
    let mut out = DMatrix::zeros(m, d);
    for i in 0..m {
        let x = dist.sample(&mut rng);
        let y = mech.eval(&x);
        if let Some(r) = mech.norm_bound {
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > r * (1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "output norm {norm} exceeds declared bound {r}"
                )));
            }
        }
        for j in 0..d {
            out[(i, j)] = y[j];
        }
    }
    Ok(out)
}

/// Row-wise addition of independent noise draws.
pub fn perturb(outputs: &DMatrix<f64>, noise: &NoiseModel, seed: u64) -> Result<DMatrix<f64>> {
    if noise.dim() != outputs.ncols() {
        return Err(Error::DimensionMismatch {
            expected: outputs.ncols(),
            got: noise.dim(),
        });
    }
    let draws = noise.sample_matrix(outputs.nrows(), seed);
    Ok(outputs + draws)
}

/// KL divergence between Bernoulli(`delta`) and Bernoulli(`delta_o`), nats:
/// the posterior-advantage figure under f(t) = t ln t. The boundary values
/// `delta_o` in {0, 1} are rejected rather than extended by limits.
pub fn pac_advantage_kl(delta: f64, delta_o: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("delta={delta} out of [0,1]")));
    }
    if delta_o <= 0.0 || delta_o >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "delta_o={delta_o} out of (0,1)"
        )));
    }
    let term = |p: f64, q: f64| if p == 0.0 { 0.0 } else { p * (p / q).ln() };
    Ok(term(delta, delta_o) + term(1.0 - delta, 1.0 - delta_o))
}

/// Residual privacy left after leaking `advantage`: `intrinsic - advantage`.
pub fn residual_pac_accounting(intrinsic: f64, advantage: f64) -> f64 {
    intrinsic - advantage
}

/// Intrinsic privacy of a discrete distribution under KL: `H(X) - ln|X|`,
/// zero exactly at uniform.
pub fn intrinsic_privacy_discrete(pmf: &[f64]) -> Result<f64> {
    let h = crate::stats::discrete_entropy(pmf)?;
    Ok(h - (pmf.len() as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn discrete_pmf_validation() {
        assert!(DataDistribution::discrete(vec![vec![0.0]], vec![0.5]).is_err());
        assert!(
            DataDistribution::discrete(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).is_ok()
        );
        assert!(DataDistribution::discrete(vec![vec![0.0]], vec![-1.0]).is_err());
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let dist = DataDistribution::Gaussian {
            mean: vec![0.0, 1.0],
            std: vec![1.0, 2.0],
        };
        let a = dist.sample_matrix(64, 7);
        let b = dist.sample_matrix(64, 7);
        assert_eq!(a, b);
        let c = dist.sample_matrix(64, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_discrete_outputs() {
        let dist = DataDistribution::discrete(vec![vec![3.0]], vec![1.0]).unwrap();
        let mech = Mechanism::new(MechanismKind::Identity { dim: 1 });
        let out = sample_mechanism_outputs(&mech, &dist, 2, 0).unwrap();
        assert_eq!(out[(0, 0)], 3.0);
        assert_eq!(out[(1, 0)], 3.0);
    }

    #[test]
    fn linear_mechanism_composition() {
        let dist = DataDistribution::discrete(vec![vec![1.5]], vec![1.0]).unwrap();
        let mech = Mechanism::new(MechanismKind::Linear {
            matrix: DMatrix::from_row_slice(1, 1, &[2.0]),
        });
        let out = sample_mechanism_outputs(&mech, &dist, 1, 0).unwrap();
        assert_eq!(out[(0, 0)], 3.0);
    }

    #[test]
    fn law_of_large_numbers_mean() {
        let dist = DataDistribution::Gaussian {
            mean: vec![0.0],
            std: vec![1.0],
        };
        let mech = Mechanism::new(MechanismKind::Identity { dim: 1 });
        let out = sample_mechanism_outputs(&mech, &dist, 10_000, 13).unwrap();
        let mean = out.column(0).mean();
        assert!(mean.abs() < 0.05, "mean={mean}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let dist = DataDistribution::Gaussian {
            mean: vec![0.0, 0.0],
            std: vec![1.0, 1.0],
        };
        let mech = Mechanism::new(MechanismKind::Identity { dim: 1 });
        assert!(sample_mechanism_outputs(&mech, &dist, 4, 0).is_err());
    }

    #[test]
    fn zero_noise_perturb_is_identity() {
        let outputs = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let noise = NoiseModel::gaussian_fixed(DMatrix::zeros(2, 2)).unwrap();
        let got = perturb(&outputs, &noise, 3).unwrap();
        assert_relative_eq!(got, outputs, epsilon = 1e-14);
    }

    #[test]
    fn reparametrization_identity() {
        // diag(1,4) noise: sample row equals sigma .* eps with the seeded
        // standard-normal pair
        let noise = NoiseModel::gaussian_diag(vec![0.0, 2.0f64.ln()]);
        let outputs = DMatrix::zeros(1, 2);
        let got = perturb(&outputs, &noise, 5).unwrap();
        let mut rng = seed::rng(5);
        let e0: f64 = StandardNormal.sample(&mut rng);
        let e1: f64 = StandardNormal.sample(&mut rng);
        assert_relative_eq!(got[(0, 0)], e0, epsilon = 1e-14);
        assert_relative_eq!(got[(0, 1)], 2.0 * e1, epsilon = 1e-14);
    }

    #[test]
    fn perturb_empirical_covariance() {
        let noise = NoiseModel::gaussian_diag(vec![0.0, 2.0f64.ln()]);
        let outputs = DMatrix::zeros(100_000, 2);
        let got = perturb(&outputs, &noise, 11).unwrap();
        let (_, cov) = crate::stats::empirical_mean_cov(&got).unwrap();
        assert!((cov[(0, 0)] - 1.0).abs() < 0.05);
        assert!((cov[(1, 1)] - 4.0).abs() < 0.2);
        assert!(cov[(0, 1)].abs() < 0.05);
    }

    #[test]
    fn budget_conversion_examples() {
        let spec = BudgetSpec::from_residual_floor(1.0, 4.0f64.ln(), EntropyProvenance::Analytic);
        let full = residual_to_mi_budget(&spec).unwrap();
        assert_relative_eq!(full.mi_cap.unwrap(), 0.386294, epsilon = 1e-5);

        let spec = BudgetSpec::from_mi_cap(2.0, 2.0, EntropyProvenance::Analytic);
        let full = residual_to_mi_budget(&spec).unwrap();
        assert_eq!(full.residual_floor.unwrap(), 0.0);

        let spec = BudgetSpec::from_mi_cap(0.0, 2.0, EntropyProvenance::Analytic);
        let full = residual_to_mi_budget(&spec).unwrap();
        assert_eq!(full.residual_floor.unwrap(), 2.0);

        // involution: converting twice is bit-exact
        let twice = residual_to_mi_budget(&full).unwrap();
        assert_eq!(full, twice);

        let no_h = BudgetSpec {
            mi_cap: Some(1.0),
            residual_floor: None,
            data_entropy: None,
            entropy_provenance: EntropyProvenance::Analytic,
        };
        assert!(matches!(
            residual_to_mi_budget(&no_h),
            Err(Error::MissingEntropy)
        ));
    }

    #[test]
    fn pac_advantage_values() {
        assert_eq!(pac_advantage_kl(0.5, 0.5).unwrap(), 0.0);
        assert_relative_eq!(pac_advantage_kl(0.25, 0.5).unwrap(), 0.13081, epsilon = 1e-5);
        assert_relative_eq!(
            pac_advantage_kl(0.0, 0.5).unwrap(),
            2.0f64.ln(),
            epsilon = 1e-12
        );
        assert!(pac_advantage_kl(0.5, 0.0).is_err());
        assert!(pac_advantage_kl(0.5, 1.0).is_err());
        assert!(pac_advantage_kl(1.5, 0.5).is_err());
    }

    #[test]
    fn residual_accounting_values() {
        let uniform = intrinsic_privacy_discrete(&[0.25; 4]).unwrap();
        assert!(uniform.abs() < 1e-12);
        let skewed = intrinsic_privacy_discrete(&[0.5, 0.25, 0.25]).unwrap();
        assert_relative_eq!(skewed, -0.05889, epsilon = 1e-5);
        assert_eq!(residual_pac_accounting(0.0, 0.2), -0.2);
    }
}
