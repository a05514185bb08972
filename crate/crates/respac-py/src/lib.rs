//! Python bindings: calibrate noise against an MI budget, estimate the
//! Gaussianity gap, run the Stackelberg solver, and compose residual budgets
//! from Python.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use respac_core::calibrators::{
    auto_pac_calibrate, efficient_pac_calibrate, logdet_bound as logdet_bound_core,
    waterfill_calibrate, AutoPacParams, EfficientPacParams,
};
use respac_core::domain::{
    perturb, sample_mechanism_outputs, CalibrationMethod, CalibrationReport, DataDistribution,
    Mechanism, NoiseModel,
};
use respac_core::error::Error;
use respac_core::gap::{
    dsm_train, kurtosis_gap_estimate, oracle_valid, stein_gap_with_ridge_ladder, ScoreFamily,
};
use respac_core::mechzoo::{make_distribution, make_mechanism, symbol_locations};
use respac_core::oracle::{
    kl_to_moment_matched_gaussian, mi_oracle_discrete_x, Base1d, Density1d, QuadratureSpec,
};
use respac_core::srpac::{
    compose_residual_budgets as compose_core, srpac_solve, DecoderKind, NoiseRuleFamily,
    SrpacConfig,
};

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix_from(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(PyValueError::new_err("need a non-empty rectangular matrix"));
    }
    Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

fn matrix_to(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn samples_from(samples: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    matrix_from(&samples)
}

fn instance(
    dist: &str,
    dist_params: Vec<f64>,
    mech: &str,
    mech_params: Vec<f64>,
) -> PyResult<(DataDistribution, Mechanism)> {
    Ok((
        make_distribution(dist, &dist_params).map_err(err)?,
        make_mechanism(mech, &mech_params).map_err(err)?,
    ))
}

/// A calibration outcome: the noise covariance with its certificate.
#[pyclass(name = "CalibrationResult")]
struct PyCalibration {
    #[pyo3(get)]
    method: String,
    #[pyo3(get)]
    noise_covariance: Vec<Vec<f64>>,
    #[pyo3(get)]
    certified_bound: f64,
    #[pyo3(get)]
    noise_power: f64,
    #[pyo3(get)]
    sample_count: usize,
    #[pyo3(get)]
    flags: Vec<String>,
}

fn calibration_out(report: CalibrationReport) -> PyCalibration {
    PyCalibration {
        method: match report.method {
            CalibrationMethod::AutoPacAnisotropic => "auto_pac_anisotropic",
            CalibrationMethod::AutoPacIsotropic => "auto_pac_isotropic",
            CalibrationMethod::EfficientPac => "efficient_pac",
            CalibrationMethod::Waterfill => "waterfill",
            CalibrationMethod::Srpac => "srpac",
        }
        .to_string(),
        noise_covariance: matrix_to(&report.noise.covariance()),
        certified_bound: report.certified_bound,
        noise_power: report.noise_power,
        sample_count: report.sample_count,
        flags: report.flags,
    }
}

/// `1/2 ln det(I + S_M S_B^-1)` for explicit covariances.
#[pyfunction]
fn logdet_bound(sigma_m: Vec<Vec<f64>>, sigma_b: Vec<Vec<f64>>) -> PyResult<f64> {
    logdet_bound_core(&matrix_from(&sigma_m)?, &matrix_from(&sigma_b)?).map_err(err)
}

/// Seeded mechanism outputs as a list of rows.
#[pyfunction]
fn sample_outputs(
    dist: &str,
    dist_params: Vec<f64>,
    mech: &str,
    mech_params: Vec<f64>,
    m: usize,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let (d, mk) = instance(dist, dist_params, mech, mech_params)?;
    Ok(matrix_to(&sample_mechanism_outputs(&mk, &d, m, seed).map_err(err)?))
}

/// Spectral sample-based calibration against the MI budget `v`.
#[pyfunction]
#[pyo3(signature = (dist, dist_params, mech, mech_params, m, c, v, beta_prime, seed))]
#[allow(clippy::too_many_arguments)]
fn auto_pac(
    dist: &str,
    dist_params: Vec<f64>,
    mech: &str,
    mech_params: Vec<f64>,
    m: usize,
    c: f64,
    v: f64,
    beta_prime: f64,
    seed: u64,
) -> PyResult<PyCalibration> {
    let (d, mk) = instance(dist, dist_params, mech, mech_params)?;
    auto_pac_calibrate(&mk, &d, &AutoPacParams { m, c, v, beta_prime, seed })
        .map(calibration_out)
        .map_err(err)
}

/// Streaming per-direction calibration in the identity basis.
#[pyfunction]
#[pyo3(signature = (dist, dist_params, mech, mech_params, tau, beta, max_samples, seed))]
#[allow(clippy::too_many_arguments)]
fn efficient_pac(
    dist: &str,
    dist_params: Vec<f64>,
    mech: &str,
    mech_params: Vec<f64>,
    tau: f64,
    beta: f64,
    max_samples: usize,
    seed: u64,
) -> PyResult<PyCalibration> {
    let (d, mk) = instance(dist, dist_params, mech, mech_params)?;
    let dim = mk.output_dim();
    let params = EfficientPacParams {
        tau,
        beta,
        basis: DMatrix::identity(dim, dim),
        max_samples,
        seed,
    };
    efficient_pac_calibrate(&mk, &d, &params)
        .map(calibration_out)
        .map_err(err)
}

/// Trace-minimal noise spectrum meeting the budget with equality. Returns
/// `(noise_eigenvalues, multiplier, trace)`.
#[pyfunction]
fn waterfill(signal_eigenvalues: Vec<f64>, beta: f64) -> PyResult<(Vec<f64>, f64, f64)> {
    let d = signal_eigenvalues.len();
    let sol = waterfill_calibrate(
        &DVector::from_vec(signal_eigenvalues),
        &DMatrix::identity(d, d),
        beta,
    )
    .map_err(err)?;
    Ok((
        sol.noise_eigenvalues.iter().copied().collect(),
        sol.multiplier,
        sol.trace(),
    ))
}

/// Fourth-cumulant gap estimate for 1-d samples: `(value, clamp_active)`.
#[pyfunction]
#[pyo3(signature = (samples, clamp_c = 1.0, dimensional_fix = true))]
fn kurtosis_gap(samples: Vec<f64>, clamp_c: f64, dimensional_fix: bool) -> PyResult<(f64, bool)> {
    let est = kurtosis_gap_estimate(&samples, clamp_c, dimensional_fix).map_err(err)?;
    Ok((est.value, est.clamp_active))
}

/// DSM-trained relative Stein estimate with the ridge ladder.
#[pyfunction]
#[pyo3(signature = (samples, family = "quadratic", epsilon = 0.05, steps = 2000,
                    learning_rate = 5e-4, seed = 0, ridge_step = 0.025, max_ridge = 2.0))]
#[allow(clippy::too_many_arguments)]
fn stein_gap(
    samples: Vec<Vec<f64>>,
    family: &str,
    epsilon: f64,
    steps: usize,
    learning_rate: f64,
    seed: u64,
    ridge_step: f64,
    max_ridge: f64,
) -> PyResult<f64> {
    let s = samples_from(samples)?;
    let fam = match family {
        "linear" => ScoreFamily::Linear,
        "quadratic" => ScoreFamily::QuadraticFeatures,
        "two_layer" => ScoreFamily::TwoLayer,
        other => return Err(PyValueError::new_err(format!("unknown score family {other}"))),
    };
    let score = dsm_train(&s, fam, epsilon, steps, learning_rate, seed).map_err(err)?;
    stein_gap_with_ridge_ladder(&s, &score, ridge_step, max_ridge)
        .map(|e| e.value)
        .map_err(err)
}

/// The reporting gate: admit a gap estimate only against the oracle KL.
#[pyfunction]
fn gap_gate(estimate: f64, oracle_kl: f64) -> bool {
    let est = respac_core::gap::GapEstimate {
        value: estimate,
        method: respac_core::gap::GapMethod::Kurtosis,
        clamp_active: false,
        diagnostics: vec![],
    };
    oracle_valid(&est, oracle_kl)
}

/// Exact KL of a named 1-d output density to its moment-matched Gaussian.
/// `base` is one of gaussian|laplace|uniform (with its two parameters) and
/// `noise_var` the added Gaussian noise variance.
#[pyfunction]
fn gap_oracle(base: &str, p0: f64, p1: f64, noise_var: f64) -> PyResult<f64> {
    let base = match base {
        "gaussian" => Base1d::Gaussian { mean: p0, std: p1 },
        "laplace" => Base1d::Laplace { loc: p0, scale: p1 },
        "uniform" => Base1d::Uniform { lower: p0, upper: p1 },
        other => return Err(PyValueError::new_err(format!("unknown base density {other}"))),
    };
    kl_to_moment_matched_gaussian(&Density1d::Convolved { base, noise_var }, &QuadratureSpec::default())
        .map(|v| v.value)
        .map_err(err)
}

/// Exact MI (nats) of a discrete input through the Gaussian channel with the
/// given symbol locations.
#[pyfunction]
fn mi_oracle(
    pmf: Vec<f64>,
    locations: Vec<Vec<f64>>,
    noise_cov: Vec<Vec<f64>>,
) -> PyResult<f64> {
    mi_oracle_discrete_x(
        &pmf,
        &locations,
        &matrix_from(&noise_cov)?,
        &QuadratureSpec::default(),
    )
    .map(|v| v.value)
    .map_err(err)
}

/// Perturb sampled outputs with fixed Gaussian noise.
#[pyfunction]
fn add_noise(outputs: Vec<Vec<f64>>, noise_cov: Vec<Vec<f64>>, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let noise = NoiseModel::gaussian_fixed(matrix_from(&noise_cov)?).map_err(err)?;
    Ok(matrix_to(&perturb(&samples_from(outputs)?, &noise, seed).map_err(err)?))
}

/// Outcome of the Stackelberg solve.
#[pyclass(name = "SrpacResult")]
struct PySrpac {
    #[pyo3(get)]
    log_std: Vec<f64>,
    #[pyo3(get)]
    noise_covariance: Vec<Vec<f64>>,
    #[pyo3(get)]
    achieved_log_score: f64,
    #[pyo3(get)]
    oracle_conditional_entropy: Option<f64>,
    #[pyo3(get)]
    noise_power: f64,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    capped_samples: usize,
}

/// Leader/follower solve of the residual-budget game on a named instance.
#[pyfunction]
#[pyo3(signature = (dist, dist_params, mech, mech_params, residual_budget, init_log_std,
                    eta_phi = 0.5, eta_lambda = 0.02, penalty_weight = 400.0,
                    t_lambda = 400, t_phi = 10, batch_m = 1024,
                    eval_decoder_steps = 500, eval_m = 20000,
                    decoder = "softmax_linear", seed = 0))]
#[allow(clippy::too_many_arguments)]
fn srpac(
    dist: &str,
    dist_params: Vec<f64>,
    mech: &str,
    mech_params: Vec<f64>,
    residual_budget: f64,
    init_log_std: Vec<f64>,
    eta_phi: f64,
    eta_lambda: f64,
    penalty_weight: f64,
    t_lambda: usize,
    t_phi: usize,
    batch_m: usize,
    eval_decoder_steps: usize,
    eval_m: usize,
    decoder: &str,
    seed: u64,
) -> PyResult<PySrpac> {
    let (d, mk) = instance(dist, dist_params, mech, mech_params)?;
    let kind = match decoder {
        "softmax_linear" => DecoderKind::SoftmaxLinear,
        "softmax_mlp" => DecoderKind::SoftmaxMlp,
        "gaussian_linear" => DecoderKind::GaussianLinear,
        other => return Err(PyValueError::new_err(format!("unknown decoder {other}"))),
    };
    let config = SrpacConfig {
        residual_budget,
        eta_phi,
        eta_lambda,
        penalty_weight,
        t_lambda,
        t_phi,
        batch_m,
        eval_decoder_steps,
        eval_m,
        seed,
    };
    let res = srpac_solve(&d, &mk, NoiseRuleFamily::new(init_log_std), kind, &config)
        .map_err(err)?;
    Ok(PySrpac {
        log_std: res.noise.log_std.clone(),
        noise_covariance: matrix_to(&res.noise.noise_model().covariance()),
        achieved_log_score: res.achieved_log_score,
        oracle_conditional_entropy: res.oracle_conditional_entropy,
        noise_power: res.noise_power,
        converged: res.converged,
        capped_samples: res.capped_samples,
    })
}

/// Symbol locations of a named symbol mechanism, for oracle calls.
#[pyfunction]
fn mechanism_locations(mech: &str, mech_params: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let m = make_mechanism(mech, &mech_params).map_err(err)?;
    symbol_locations(&m)
        .map(|l| l.to_vec())
        .ok_or_else(|| PyValueError::new_err("mechanism has no symbol locations"))
}

/// Residual-budget composition: `(conditional-entropy floor, additive MI bound)`.
#[pyfunction]
fn compose_residual_budgets(budgets: Vec<f64>, data_entropy: f64) -> PyResult<(f64, f64)> {
    compose_core(&budgets, data_entropy).map_err(err)
}

#[pymodule]
fn respac_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCalibration>()?;
    m.add_class::<PySrpac>()?;
    m.add_function(wrap_pyfunction!(logdet_bound, m)?)?;
    m.add_function(wrap_pyfunction!(sample_outputs, m)?)?;
    m.add_function(wrap_pyfunction!(auto_pac, m)?)?;
    m.add_function(wrap_pyfunction!(efficient_pac, m)?)?;
    m.add_function(wrap_pyfunction!(waterfill, m)?)?;
    m.add_function(wrap_pyfunction!(kurtosis_gap, m)?)?;
    m.add_function(wrap_pyfunction!(stein_gap, m)?)?;
    m.add_function(wrap_pyfunction!(gap_gate, m)?)?;
    m.add_function(wrap_pyfunction!(gap_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(mi_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(add_noise, m)?)?;
    m.add_function(wrap_pyfunction!(srpac, m)?)?;
    m.add_function(wrap_pyfunction!(mechanism_locations, m)?)?;
    m.add_function(wrap_pyfunction!(compose_residual_budgets, m)?)?;
    Ok(())
}
