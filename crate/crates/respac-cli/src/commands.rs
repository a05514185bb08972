//! The five verbs: calibrate, gap, srpac, sweep, compose.

use nalgebra::{DMatrix, DVector};

use respac_core::calibrators::{
    auto_pac_calibrate, efficient_pac_calibrate, waterfill_calibrate, AutoPacParams,
    EfficientPacParams,
};
use respac_core::domain::{
    CalibrationMethod, CalibrationReport, DataDistribution, Mechanism, MechanismKind, NoiseModel,
};
use respac_core::error::{Error, Result};
use respac_core::gap::{
    corrected_mi, dsm_train, kurtosis_gap_estimate, oracle_valid, stein_gap_estimate,
    stein_gap_with_ridge_ladder, GapEstimate, GapMethod, ScoreFamily, SteinVariant,
};
use respac_core::mechzoo;
use respac_core::oracle::{self, Base1d, Density1d, QuadratureSpec};
use respac_core::srpac::{
    compose_residual_budgets, srpac_solve, DecoderKind, NoiseRuleFamily, SrpacConfig,
};
use respac_core::stats;

use crate::config::*;

/// Nine significant digits, fixed scientific notation — diff-able and
/// byte-stable across runs.
pub fn sig9(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{:.8e}", v)
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn method_name(m: CalibrationMethod) -> &'static str {
    match m {
        CalibrationMethod::AutoPacAnisotropic => "auto_pac_anisotropic",
        CalibrationMethod::AutoPacIsotropic => "auto_pac_isotropic",
        CalibrationMethod::EfficientPac => "efficient_pac",
        CalibrationMethod::Waterfill => "waterfill",
        CalibrationMethod::Srpac => "srpac",
    }
}

fn report_to_file(report: &CalibrationReport) -> CalibrateReportFile {
    CalibrateReportFile {
        method: method_name(report.method).to_string(),
        noise_covariance: matrix_rows(&report.noise.covariance()),
        certified_bound: report.certified_bound,
        corrected_mi: report.corrected_mi,
        gap_estimate: report.gap_estimate,
        noise_power: report.noise_power,
        seed: report.seed,
        sample_count: report.sample_count,
        flags: report.flags.clone(),
    }
}

/// Exact second-moment (covariance) of a discrete channel's clean output.
fn channel_covariance(dist: &DataDistribution, mech: &Mechanism) -> Option<DMatrix<f64>> {
    let (pmf, locs) = mechzoo::discrete_channel(dist, mech)?;
    let d = locs[0].len();
    let mut mean = DVector::zeros(d);
    for (p, l) in pmf.iter().zip(&locs) {
        mean += *p * DVector::from_column_slice(l);
    }
    let mut cov = DMatrix::zeros(d, d);
    for (p, l) in pmf.iter().zip(&locs) {
        let c = DVector::from_column_slice(l) - &mean;
        cov += *p * &c * c.transpose();
    }
    Some(cov)
}

pub fn cmd_calibrate(config: &RunConfig, method_override: Option<&str>) -> Result<CalibrateReportFile> {
    let block = config
        .calibrate
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config is missing the calibrate block".into()))?;
    let method = method_override.unwrap_or(&block.method);
    let instance = config
        .instance
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config is missing the instance block".into()))?;
    let (dist, mech) = resolve_instance(instance)?;
    match method {
        "auto_pac" => {
            let p = block.auto_pac.as_ref().ok_or_else(|| {
                Error::InvalidArgument("calibrate.auto_pac block required".into())
            })?;
            let params = AutoPacParams {
                m: p.m,
                c: p.c,
                v: p.v,
                beta_prime: p.beta_prime,
                seed: config.seed,
            };
            Ok(report_to_file(&auto_pac_calibrate(&mech, &dist, &params)?))
        }
        "efficient_pac" => {
            let p = block.efficient_pac.as_ref().ok_or_else(|| {
                Error::InvalidArgument("calibrate.efficient_pac block required".into())
            })?;
            let d = mech.output_dim();
            let params = EfficientPacParams {
                tau: p.tau,
                beta: p.beta,
                basis: DMatrix::identity(d, d),
                max_samples: p.max_samples,
                seed: config.seed,
            };
            Ok(report_to_file(&efficient_pac_calibrate(
                &mech, &dist, &params,
            )?))
        }
        "waterfill" => {
            let p = block.waterfill.as_ref().ok_or_else(|| {
                Error::InvalidArgument("calibrate.waterfill block required".into())
            })?;
            let (r, basis) = if p.signal_eigenvalues.is_empty() {
                let cov = channel_covariance(&dist, &mech).ok_or_else(|| {
                    Error::InvalidArgument(
                        "waterfill needs explicit signal_eigenvalues for non-discrete instances"
                            .into(),
                    )
                })?;
                let dec = stats::eigendecompose(&cov)?;
                (dec.eigenvalues, dec.eigenvectors)
            } else {
                let d = p.signal_eigenvalues.len();
                (
                    DVector::from_column_slice(&p.signal_eigenvalues),
                    DMatrix::identity(d, d),
                )
            };
            let sol = waterfill_calibrate(&r, &basis, p.beta)?;
            let noise = sol.noise_model();
            Ok(CalibrateReportFile {
                method: "waterfill".into(),
                noise_covariance: matrix_rows(&noise.covariance()),
                certified_bound: sol.achieved_bound,
                corrected_mi: None,
                gap_estimate: None,
                noise_power: sol.trace(),
                seed: config.seed,
                sample_count: 0,
                flags: vec![format!("multiplier={:.9e}", sol.multiplier)],
            })
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown calibration method {other}"
        ))),
    }
}

/// 1-d analytic output density of an instance, when available: an identity
/// mechanism over an analytic 1-d distribution, or a discrete 1-d channel
/// (whose noisy output is a Gaussian mixture once noise_var > 0).
fn output_density(dist: &DataDistribution, mech: &Mechanism, noise_var: f64) -> Option<Density1d> {
    if mech.output_dim() != 1 {
        return None;
    }
    if let Some((pmf, locs)) = mechzoo::discrete_channel(dist, mech) {
        if noise_var <= 0.0 {
            return None; // discrete output has no density
        }
        return Some(Density1d::GaussianMix {
            weights: pmf,
            means: locs.iter().map(|l| l[0]).collect(),
            stds: vec![noise_var.sqrt(); locs.len()],
        });
    }
    if !matches!(mech.kind, MechanismKind::Identity { .. }) {
        return None;
    }
    match dist {
        DataDistribution::Gaussian { mean, std } if mean.len() == 1 => Some(Density1d::Convolved {
            base: Base1d::Gaussian {
                mean: mean[0],
                std: std[0],
            },
            noise_var,
        }),
        DataDistribution::GaussianMixture1d {
            weights,
            means,
            stds,
        } => {
            if noise_var > 0.0 {
                Some(Density1d::GaussianMix {
                    weights: weights.clone(),
                    means: means.clone(),
                    stds: stds
                        .iter()
                        .map(|s| (s * s + noise_var).sqrt())
                        .collect(),
                })
            } else {
                Some(Density1d::GaussianMix {
                    weights: weights.clone(),
                    means: means.clone(),
                    stds: stds.clone(),
                })
            }
        }
        DataDistribution::Laplace1d { loc, scale } => Some(Density1d::Convolved {
            base: Base1d::Laplace {
                loc: *loc,
                scale: *scale,
            },
            noise_var,
        }),
        DataDistribution::Uniform { lower, upper } if lower.len() == 1 => {
            Some(Density1d::Convolved {
                base: Base1d::Uniform {
                    lower: lower[0],
                    upper: upper[0],
                },
                noise_var,
            })
        }
        _ => None,
    }
}

fn parse_family(name: &str) -> Result<ScoreFamily> {
    match name {
        "linear" => Ok(ScoreFamily::Linear),
        "quadratic_features" => Ok(ScoreFamily::QuadraticFeatures),
        "two_layer" => Ok(ScoreFamily::TwoLayer),
        other => Err(Error::InvalidArgument(format!(
            "unknown score family {other}"
        ))),
    }
}

pub fn cmd_gap(config: &RunConfig) -> Result<GapReportFile> {
    let block = config
        .gap
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config is missing the gap block".into()))?;
    let instance = config
        .instance
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config is missing the instance block".into()))?;
    let (dist, mech) = resolve_instance(instance)?;
    let samples = respac_core::sample_mechanism_outputs(&mech, &dist, block.samples, config.seed)?;
    let estimate: GapEstimate = match block.method.as_str() {
        "kurtosis" => {
            let col: Vec<f64> = samples.column(0).iter().copied().collect();
            kurtosis_gap_estimate(&col, block.clamp_c, block.dimensional_fix)?
        }
        m @ ("stein_raw" | "stein_relative" | "stein_ladder") => {
            let family = parse_family(block.family.as_deref().unwrap_or("quadratic_features"))?;
            let score = dsm_train(
                &samples,
                family,
                block.epsilon,
                block.steps,
                block.learning_rate,
                config.seed.wrapping_add(1),
            )?;
            match m {
                "stein_raw" => {
                    stein_gap_estimate(&samples, &score, SteinVariant::Raw, block.ridge)?
                }
                "stein_relative" => {
                    stein_gap_estimate(&samples, &score, SteinVariant::Relative, block.ridge)?
                }
                _ => stein_gap_with_ridge_ladder(
                    &samples,
                    &score,
                    block.ridge_step,
                    block.max_ridge,
                )?,
            }
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown gap method {other}"
            )))
        }
    };
    let quad = QuadratureSpec::default();
    let oracle_kl = output_density(&dist, &mech, 0.0)
        .map(|density| oracle::kl_to_moment_matched_gaussian(&density, &quad))
        .transpose()?
        .map(|v| v.value);
    let valid = oracle_kl.map(|kl| oracle_valid(&estimate, kl));
    let (corr, clamped) = match (block.budget, valid) {
        (Some(beta), Some(true)) => {
            let (v, c) = corrected_mi(beta, &estimate)?;
            (Some(v), Some(c))
        }
        _ => (None, None),
    };
    Ok(GapReportFile {
        method: match estimate.method {
            GapMethod::SteinRaw => "stein_raw".into(),
            GapMethod::SteinRelative => "stein_relative".into(),
            GapMethod::Kurtosis => "kurtosis".into(),
        },
        value: estimate.value,
        clamp_active: estimate.clamp_active,
        diagnostics: estimate.diagnostics.clone(),
        oracle_kl,
        oracle_valid: valid,
        corrected_mi: corr,
        corrected_clamped: clamped,
    })
}

fn parse_decoder(name: &str) -> Result<DecoderKind> {
    match name {
        "softmax_linear" => Ok(DecoderKind::SoftmaxLinear),
        "softmax_mlp" => Ok(DecoderKind::SoftmaxMlp),
        "gaussian_linear" => Ok(DecoderKind::GaussianLinear),
        other => Err(Error::InvalidArgument(format!("unknown decoder {other}"))),
    }
}

fn srpac_config_of(block: &SrpacBlock, seed: u64) -> SrpacConfig {
    SrpacConfig {
        residual_budget: block.residual_budget,
        eta_phi: block.eta_phi,
        eta_lambda: block.eta_lambda,
        penalty_weight: block.penalty_weight,
        t_lambda: block.t_lambda,
        t_phi: block.t_phi,
        batch_m: block.batch_m,
        eval_decoder_steps: block.eval_decoder_steps,
        eval_m: block.eval_m,
        seed,
    }
}

pub fn cmd_srpac(config: &RunConfig) -> Result<SrpacReportFile> {
    let block = config
        .srpac
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config is missing the srpac block".into()))?;
    let instance = config
        .instance
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config is missing the instance block".into()))?;
    let (dist, mech) = resolve_instance(instance)?;
    if block.init_log_std.len() != mech.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: mech.output_dim(),
            got: block.init_log_std.len(),
        });
    }
    let init = NoiseRuleFamily::new(block.init_log_std.clone());
    let decoder = parse_decoder(&block.decoder)?;
    let cfg = srpac_config_of(block, config.seed);
    let res = srpac_solve(&dist, &mech, init, decoder, &cfg)?;
    Ok(SrpacReportFile {
        log_std: res.noise.log_std.clone(),
        noise_covariance: matrix_rows(&res.noise.noise_model().covariance()),
        achieved_log_score: res.achieved_log_score,
        oracle_conditional_entropy: res.oracle_conditional_entropy,
        noise_power: res.noise_power,
        converged: res.converged,
        capped_samples: res.capped_samples,
        trace: res
            .trace
            .iter()
            .map(|s| SrpacTraceRow {
                log_score: s.log_score,
                utility: s.utility,
                penalty: s.penalty,
            })
            .collect(),
    })
}

pub fn cmd_compose(config: &RunConfig) -> Result<ComposeReportFile> {
    let block = config
        .compose
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config is missing the compose block".into()))?;
    let (residual, mi) = compose_residual_budgets(&block.budgets, block.data_entropy)?;
    Ok(ComposeReportFile {
        budgets: block.budgets.clone(),
        data_entropy: block.data_entropy,
        residual_floor: residual,
        mi_bound: mi,
    })
}

pub const SWEEP_HEADER: &str =
    "budget, convention, method, noise_power, certified_bound, corrected_mi, oracle_mi, accuracy_proxy, flags";

struct SweepRow {
    budget: f64,
    convention: String,
    method: String,
    noise_power: Option<f64>,
    certified_bound: Option<f64>,
    corrected_mi: Option<f64>,
    oracle_mi: Option<f64>,
    accuracy_proxy: Option<f64>,
    flags: Vec<String>,
}

impl SweepRow {
    fn render(&self) -> String {
        let opt = |v: Option<f64>| v.map(sig9).unwrap_or_default();
        format!(
            "{}, {}, {}, {}, {}, {}, {}, {}, {}",
            sig9(self.budget),
            self.convention,
            self.method,
            opt(self.noise_power),
            opt(self.certified_bound),
            opt(self.corrected_mi),
            opt(self.oracle_mi),
            opt(self.accuracy_proxy),
            self.flags.join("|"),
        )
    }
}

/// One sweep cell. Never fails the whole run: errors land in the flags
/// column and leave the numeric fields empty.
fn sweep_cell(
    dist: &DataDistribution,
    mech: &Mechanism,
    block: &SweepConfig,
    budget: f64,
    method: &str,
    row_seed: u64,
) -> Result<(NoiseModel, f64, Vec<String>)> {
    // beta is always the MI-convention cap; data entropy converts when the
    // grid is stated as residual floors
    let entropy = || -> Result<f64> {
        let (_, pmf) = dist.as_discrete().ok_or_else(|| {
            Error::InvalidArgument("residual convention needs a discrete instance".into())
        })?;
        stats::discrete_entropy(pmf)
    };
    let beta = match block.convention.as_str() {
        "mi" => budget,
        "residual" => entropy()? - budget,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown convention {other}"
            )))
        }
    };
    if beta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "non-positive MI budget {beta}"
        )));
    }
    match method {
        "auto_pac" => {
            let base = block.auto_pac.as_ref().ok_or_else(|| {
                Error::InvalidArgument("sweep.auto_pac block required".into())
            })?;
            let params = AutoPacParams {
                m: base.m,
                c: base.c,
                v: beta,
                beta_prime: base.beta_prime,
                seed: row_seed,
            };
            let rep = auto_pac_calibrate(mech, dist, &params)?;
            Ok((rep.noise, rep.certified_bound, rep.flags))
        }
        "efficient_pac" => {
            let base = block.efficient_pac.as_ref().ok_or_else(|| {
                Error::InvalidArgument("sweep.efficient_pac block required".into())
            })?;
            let d = mech.output_dim();
            let params = EfficientPacParams {
                tau: base.tau,
                beta,
                basis: DMatrix::identity(d, d),
                max_samples: base.max_samples,
                seed: row_seed,
            };
            let rep = efficient_pac_calibrate(mech, dist, &params)?;
            Ok((rep.noise, rep.certified_bound, rep.flags))
        }
        "waterfill" => {
            let cov = channel_covariance(dist, mech).ok_or_else(|| {
                Error::InvalidArgument("waterfill sweep needs a discrete instance".into())
            })?;
            let dec = stats::eigendecompose(&cov)?;
            let sol = waterfill_calibrate(&dec.eigenvalues, &dec.eigenvectors, beta)?;
            Ok((sol.noise_model(), sol.achieved_bound, Vec::new()))
        }
        "srpac" => {
            let base = block.srpac.as_ref().ok_or_else(|| {
                Error::InvalidArgument("sweep.srpac block required".into())
            })?;
            let cfg = SrpacConfig {
                residual_budget: entropy()? - beta,
                ..srpac_config_of(base, row_seed)
            };
            let init = NoiseRuleFamily::new(base.init_log_std.clone());
            let decoder = parse_decoder(&base.decoder)?;
            let res = srpac_solve(dist, mech, init, decoder, &cfg)?;
            let mut flags = Vec::new();
            if !res.converged {
                flags.push("not_converged".to_string());
            }
            // the nominal cap; the oracle column holds the achieved MI
            Ok((res.noise.noise_model(), beta, flags))
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown sweep method {other}"
        ))),
    }
}

pub fn cmd_sweep(config: &RunConfig) -> Result<String> {
    let block = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config is missing the sweep block".into()))?;
    let instance = config
        .instance
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config is missing the instance block".into()))?;
    let (dist, mech) = resolve_instance(instance)?;
    let quad = QuadratureSpec::default();
    let mut table = String::from(SWEEP_HEADER);
    table.push('\n');
    let is_toy_logit = matches!(mech.kind, MechanismKind::ToyLogit { .. });
    for (i, &budget) in block.budgets.iter().enumerate() {
        for (j, method) in block.methods.iter().enumerate() {
            let row_seed = config
                .seed
                .wrapping_add(1000)
                .wrapping_add((i * block.methods.len() + j) as u64);
            let mut row = SweepRow {
                budget,
                convention: block.convention.clone(),
                method: method.clone(),
                noise_power: None,
                certified_bound: None,
                corrected_mi: None,
                oracle_mi: None,
                accuracy_proxy: None,
                flags: Vec::new(),
            };
            match sweep_cell(&dist, &mech, block, budget, method, row_seed) {
                Err(e) => row.flags.push(format!("error:{e}")),
                Ok((noise, certified, flags)) => {
                    row.flags = flags;
                    row.noise_power = Some(noise.noise_power());
                    row.certified_bound = Some(certified);
                    let cov = noise.covariance();
                    if let Some((pmf, locs)) = mechzoo::discrete_channel(&dist, &mech) {
                        if cov.nrows() <= 2 {
                            match oracle::mi_oracle_discrete_x(&pmf, &locs, &cov, &quad) {
                                Ok(v) => row.oracle_mi = Some(v.value),
                                Err(e) => row.flags.push(format!("oracle_error:{e}")),
                            }
                        }
                    }
                    // gap-corrected bound: kurtosis estimate on the noisy
                    // 1-d output, gated against the oracle KL when available
                    if cov.nrows() == 1 {
                        match corrected_for_row(
                            &dist, &mech, &noise, certified, block.gap_samples, row_seed, &quad,
                        ) {
                            Ok((v, flag)) => {
                                row.corrected_mi = v;
                                if let Some(f) = flag {
                                    row.flags.push(f);
                                }
                            }
                            Err(e) => row.flags.push(format!("gap_error:{e}")),
                        }
                    }
                    if is_toy_logit {
                        match mechzoo::argmax_preservation(
                            &dist,
                            &mech,
                            &noise,
                            block.accuracy_samples,
                            row_seed.wrapping_add(500_000),
                        ) {
                            Ok(a) => row.accuracy_proxy = Some(a),
                            Err(e) => row.flags.push(format!("accuracy_error:{e}")),
                        }
                    }
                }
            }
            table.push_str(&row.render());
            table.push('\n');
        }
    }
    Ok(table)
}

fn corrected_for_row(
    dist: &DataDistribution,
    mech: &Mechanism,
    noise: &NoiseModel,
    certified: f64,
    gap_samples: usize,
    row_seed: u64,
    quad: &QuadratureSpec,
) -> Result<(Option<f64>, Option<String>)> {
    let noise_var = noise.covariance()[(0, 0)];
    let clean = respac_core::sample_mechanism_outputs(mech, dist, gap_samples, row_seed)?;
    let b = noise.sample_matrix(gap_samples, row_seed.wrapping_add(900_000));
    let y: Vec<f64> = (0..gap_samples)
        .map(|i| clean[(i, 0)] + b[(i, 0)])
        .collect();
    let est = kurtosis_gap_estimate(&y, 1.0, true)?;
    let oracle_kl = match output_density(dist, mech, noise_var) {
        Some(density) => oracle::kl_to_moment_matched_gaussian(&density, quad)?.value,
        None => return Ok((None, Some("no_gap_oracle".into()))),
    };
    if oracle_valid(&est, oracle_kl) {
        let (v, _) = corrected_mi(certified, &est)?;
        Ok((Some(v), None))
    } else {
        Ok((Some(certified), Some("gap_rejected".into())))
    }
}
