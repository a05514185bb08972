//! Synthetic data distributions and mechanisms used by tests and the
//! benchmark harness — desk-scale stand-ins for trained classifiers.

use nalgebra::DMatrix;

use crate::domain::{DataDistribution, Mechanism, MechanismKind};
use crate::error::{Error, Result};

/// A named benchmark instance; `oracle_supported` marks instances inside the
/// quadrature perimeter (d <= 2, discrete input or analytic density).
#[derive(Debug, Clone)]
pub struct ZooSpec {
    pub name: String,
    pub dist: DataDistribution,
    pub mech: Mechanism,
    pub oracle_supported: bool,
}

/// Construct a distribution by name.
///
/// Names: `discrete_uniform_k` (params: one entry k, symbols at
/// 0..k-1), `discrete_pmf` (params: probabilities), `gaussian` (mean, std
/// pairs per coordinate), `gaussian_mixture` (weight, mean, std triples),
/// `uniform_interval` (lower, upper pairs), `laplace` (loc, scale).
pub fn make_distribution(name: &str, params: &[f64]) -> Result<DataDistribution> {
    match name {
        "discrete_uniform_k" => {
            if params.len() != 1 || params[0] < 1.0 {
                return Err(Error::InvalidArgument(
                    "discrete_uniform_k takes one count parameter".into(),
                ));
            }
            let k = params[0] as usize;
            DataDistribution::discrete(
                (0..k).map(|i| vec![i as f64]).collect(),
                vec![1.0 / k as f64; k],
            )
        }
        "discrete_pmf" => DataDistribution::discrete(
            (0..params.len()).map(|i| vec![i as f64]).collect(),
            params.to_vec(),
        ),
        "gaussian" => {
            if params.is_empty() || params.len() % 2 != 0 {
                return Err(Error::InvalidArgument(
                    "gaussian takes (mean, std) pairs".into(),
                ));
            }
            let mean = params.iter().step_by(2).copied().collect();
            let std: Vec<f64> = params.iter().skip(1).step_by(2).copied().collect();
            if std.iter().any(|&s| s <= 0.0) {
                return Err(Error::InvalidArgument("std must be positive".into()));
            }
            Ok(DataDistribution::Gaussian { mean, std })
        }
        "gaussian_mixture" => {
            if params.is_empty() || params.len() % 3 != 0 {
                return Err(Error::InvalidArgument(
                    "gaussian_mixture takes (weight, mean, std) triples".into(),
                ));
            }
            let weights: Vec<f64> = params.iter().step_by(3).copied().collect();
            let means: Vec<f64> = params.iter().skip(1).step_by(3).copied().collect();
            let stds: Vec<f64> = params.iter().skip(2).step_by(3).copied().collect();
            let total: f64 = weights.iter().sum();
            if (total - 1.0).abs() > 1e-12 || weights.iter().any(|&w| w < 0.0) {
                return Err(Error::InvalidPmf(format!("weights sum to {total}")));
            }
            if stds.iter().any(|&s| s <= 0.0) {
                return Err(Error::InvalidArgument("std must be positive".into()));
            }
            Ok(DataDistribution::GaussianMixture1d {
                weights,
                means,
                stds,
            })
        }
        "uniform_interval" => {
            if params.is_empty() || params.len() % 2 != 0 {
                return Err(Error::InvalidArgument(
                    "uniform_interval takes (lower, upper) pairs".into(),
                ));
            }
            let lower: Vec<f64> = params.iter().step_by(2).copied().collect();
            let upper: Vec<f64> = params.iter().skip(1).step_by(2).copied().collect();
            if lower.iter().zip(&upper).any(|(&l, &u)| l >= u) {
                return Err(Error::InvalidArgument("need lower < upper".into()));
            }
            Ok(DataDistribution::Uniform { lower, upper })
        }
        "laplace" => {
            if params.len() != 2 || params[1] <= 0.0 {
                return Err(Error::InvalidArgument(
                    "laplace takes (loc, scale) with scale > 0".into(),
                ));
            }
            Ok(DataDistribution::Laplace1d {
                loc: params[0],
                scale: params[1],
            })
        }
        _ => Err(Error::InvalidArgument(format!("unknown distribution {name}"))),
    }
}

/// Construct a mechanism by name.
///
/// Names: `identity` (params: dim), `linear` (params: nrows, ncols, entries
/// row-major), `clipped_norm` (dim, radius), `symbol_locations` (d followed
/// by k*d coordinates), `toy_logit` (margin_scale, nuisance_scale).
pub fn make_mechanism(name: &str, params: &[f64]) -> Result<Mechanism> {
    match name {
        "identity" => {
            if params.len() != 1 || params[0] < 1.0 {
                return Err(Error::InvalidArgument("identity takes a dimension".into()));
            }
            Ok(Mechanism::new(MechanismKind::Identity {
                dim: params[0] as usize,
            }))
        }
        "linear" => {
            if params.len() < 3 {
                return Err(Error::InvalidArgument(
                    "linear takes nrows, ncols, entries".into(),
                ));
            }
            let nrows = params[0] as usize;
            let ncols = params[1] as usize;
            if params.len() != 2 + nrows * ncols {
                return Err(Error::InvalidArgument(format!(
                    "linear expects {} entries",
                    nrows * ncols
                )));
            }
            Ok(Mechanism::new(MechanismKind::Linear {
                matrix: DMatrix::from_row_slice(nrows, ncols, &params[2..]),
            }))
        }
        "clipped_norm" => {
            if params.len() != 2 || params[1] <= 0.0 {
                return Err(Error::InvalidArgument(
                    "clipped_norm takes (dim, radius)".into(),
                ));
            }
            Ok(Mechanism::new(MechanismKind::ClippedNorm {
                dim: params[0] as usize,
                radius: params[1],
            }))
        }
        "symbol_locations" => {
            if params.len() < 2 {
                return Err(Error::InvalidArgument(
                    "symbol_locations takes d then k*d coordinates".into(),
                ));
            }
            let d = params[0] as usize;
            let rest = &params[1..];
            if d == 0 || rest.len() % d != 0 {
                return Err(Error::InvalidArgument(
                    "coordinate count must be a multiple of d".into(),
                ));
            }
            Ok(Mechanism::new(MechanismKind::SymbolLocations {
                locations: rest.chunks(d).map(|c| c.to_vec()).collect(),
            }))
        }
        "toy_logit" => {
            if params.len() != 2 {
                return Err(Error::InvalidArgument(
                    "toy_logit takes (margin_scale, nuisance_scale)".into(),
                ));
            }
            Ok(Mechanism::new(MechanismKind::ToyLogit {
                margin_scale: params[0],
                nuisance_scale: params[1],
            }))
        }
        _ => Err(Error::InvalidArgument(format!("unknown mechanism {name}"))),
    }
}

/// The 4-symbol benchmark: uniform input over locations (-3, -1, 1, 3)
/// through a 1-d symbol mechanism.
pub fn four_symbol_benchmark() -> ZooSpec {
    ZooSpec {
        name: "four_symbol".into(),
        dist: make_distribution("discrete_uniform_k", &[4.0]).unwrap(),
        mech: make_mechanism("symbol_locations", &[1.0, -3.0, -1.0, 1.0, 3.0]).unwrap(),
        oracle_supported: true,
    }
}

/// Per-symbol output locations of a symbol mechanism, for oracle calls.
pub fn symbol_locations(mech: &Mechanism) -> Option<&[Vec<f64>]> {
    match &mech.kind {
        MechanismKind::SymbolLocations { locations } => Some(locations),
        _ => None,
    }
}

/// Default toy-logit instance: binary label with a low-variance margin
/// (+-0.5), high-variance Gaussian nuisance (variance 25) — the label
/// direction is far cheaper to leave for last when buying privacy with
/// noise power.
pub fn toy_logit_benchmark() -> ZooSpec {
    ZooSpec {
        name: "toy_logit".into(),
        dist: toy_logit_input(),
        mech: make_mechanism("toy_logit", &[1.0, 1.0]).unwrap(),
        oracle_supported: true,
    }
}

/// Joint input of the toy-logit mechanism: coordinate 0 the label margin
/// (+-0.5 equiprobable), coordinate 1 the nuisance on a fine symmetric grid
/// with variance 25 (a discretized stand-in for N(0, 25) that keeps the
/// instance inside the discrete-oracle perimeter).
pub fn toy_logit_input() -> DataDistribution {
    let half = 7usize;
    let n = 2 * half + 1;
    // uniform grid scaled so the variance is 25
    let var_unit: f64 = (1..=half).map(|i| 2.0 * (i as f64).powi(2)).sum::<f64>() / n as f64;
    let scale = (25.0 / var_unit).sqrt();
    let mut support = Vec::with_capacity(2 * n);
    for &s in &[-0.5f64, 0.5] {
        for g in -(half as i64)..=half as i64 {
            support.push(vec![s, scale * g as f64]);
        }
    }
    let pmf = vec![1.0 / (2 * n) as f64; 2 * n];
    DataDistribution::discrete(support, pmf).unwrap()
}

/// Accuracy proxy for sweeps over the toy-logit mechanism: the fraction of
/// seeded draws whose perturbed predicted label (the sign of the margin
/// coordinate) matches the clean one.
pub fn argmax_preservation(
    dist: &DataDistribution,
    mech: &Mechanism,
    noise: &crate::domain::NoiseModel,
    m: usize,
    seed: u64,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    let xs = dist.sample_matrix(m, seed);
    let bs = noise.sample_matrix(m, seed.wrapping_add(1));
    let mut agree = 0usize;
    for i in 0..m {
        let x: Vec<f64> = xs.row(i).iter().copied().collect();
        let clean = mech.eval(&x)[0];
        let noisy = clean + bs[(i, 0)];
        if (noisy >= 0.0) == (clean >= 0.0) {
            agree += 1;
        }
    }
    Ok(agree as f64 / m as f64)
}

/// Enumerate (pmf, locations) of a discrete distribution pushed through a
/// mechanism — the oracle-facing view of a zoo instance.
pub fn discrete_channel(dist: &DataDistribution, mech: &Mechanism) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let (support, pmf) = dist.as_discrete()?;
    let locations = support.iter().map(|x| mech.eval(x)).collect();
    Some((pmf.to_vec(), locations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{self, QuadratureSpec};
    use crate::stats;
    use approx::assert_relative_eq;

    #[test]
    fn distribution_constructors() {
        let d = make_distribution("discrete_uniform_k", &[4.0]).unwrap();
        let (_, pmf) = d.as_discrete().unwrap();
        assert_eq!(pmf, &[0.25; 4]);

        let g = make_distribution("gaussian", &[0.0, 1.0]).unwrap();
        let s = g.sample_matrix(10_000, 7);
        assert!(s.column(0).mean().abs() < 0.05);

        assert!(make_distribution("gaussian_mixture", &[0.5, 0.0, 1.0, 0.6, 2.0, 1.0]).is_err());
        assert!(make_distribution("nope", &[]).is_err());
    }

    #[test]
    fn mechanism_constructors() {
        let m = make_mechanism("identity", &[1.0]).unwrap();
        assert_eq!(m.eval(&[1.5]), vec![1.5]);

        let m = make_mechanism("linear", &[1.0, 1.0, 2.0]).unwrap();
        assert_eq!(m.eval(&[3.0]), vec![6.0]);

        let m = make_mechanism("clipped_norm", &[2.0, 1.0]).unwrap();
        let out = m.eval(&[3.0, 4.0]);
        let norm: f64 = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_relative_eq!(norm, 1.0, epsilon = 1e-12);

        assert!(make_mechanism("nope", &[]).is_err());
    }

    #[test]
    fn four_symbol_oracle_chain_rule() {
        let zoo = four_symbol_benchmark();
        let (pmf, locs) = discrete_channel(&zoo.dist, &zoo.mech).unwrap();
        let cov = nalgebra::DMatrix::identity(1, 1);
        let quad = QuadratureSpec::default();
        let mi = oracle::mi_oracle_discrete_x(&pmf, &locs, &cov, &quad).unwrap();
        let h = oracle::conditional_entropy_oracle(&pmf, &locs, &cov, &quad).unwrap();
        assert_relative_eq!(
            mi.value + h.value,
            stats::discrete_entropy(&pmf).unwrap(),
            epsilon = 1e-8
        );
    }

    #[test]
    fn toy_logit_moments() {
        let dist = toy_logit_input();
        let s = dist.sample_matrix(200_000, 11);
        let (_, cov) = stats::empirical_mean_cov(&s).unwrap();
        assert_relative_eq!(cov[(0, 0)], 0.25, epsilon = 0.01);
        assert_relative_eq!(cov[(1, 1)], 25.0, epsilon = 0.5);
    }

    #[test]
    fn toy_logit_directional_asymmetry() {
        // the margin direction is far harder to estimate blindly than the
        // nuisance relative to its scale, and with equal isotropic noise the
        // mmse ordering favors protecting the nuisance direction first
        let zoo = toy_logit_benchmark();
        let (pmf, locs) = discrete_channel(&zoo.dist, &zoo.mech).unwrap();
        let cov = nalgebra::DMatrix::identity(2, 2);
        let quad = QuadratureSpec {
            nodes: 301,
            ..Default::default()
        };
        let g_margin =
            oracle::directional_mmse(&pmf, &locs, &cov, &[1.0, 0.0], &quad).unwrap();
        let g_nuisance =
            oracle::directional_mmse(&pmf, &locs, &cov, &[0.0, 1.0], &quad).unwrap();
        assert!(
            g_margin.value < g_nuisance.value,
            "margin {} vs nuisance {}",
            g_margin.value,
            g_nuisance.value
        );
    }
}
