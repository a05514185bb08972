//! Config file schema (JSON) and the serializable report mirrors. Every
//! structure round-trips losslessly through serde_json.

use serde::{Deserialize, Serialize};

use respac_core::domain::{DataDistribution, Mechanism};
use respac_core::error::{Error, Result};
use respac_core::mechzoo;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate: Option<CalibrateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<GapConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub srpac: Option<SrpacBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compose: Option<ComposeConfig>,
}

/// Either a zoo instance by name or an explicit (dist, mech) pair.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InstanceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zoo: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<NamedParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mech: Option<NamedParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NamedParams {
    pub name: String,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CalibrateConfig {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_pac: Option<AutoPacBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficient_pac: Option<EfficientPacBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waterfill: Option<WaterfillBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AutoPacBlock {
    pub m: usize,
    pub c: f64,
    pub v: f64,
    pub beta_prime: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EfficientPacBlock {
    pub tau: f64,
    pub beta: f64,
    pub max_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WaterfillBlock {
    /// Per-direction signal variances; empty means "derive from the
    /// instance's exact channel covariance".
    #[serde(default)]
    pub signal_eigenvalues: Vec<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GapConfig {
    /// stein_raw | stein_relative | stein_ladder | kurtosis
    pub method: String,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default = "default_ridge_step")]
    pub ridge_step: f64,
    #[serde(default = "default_max_ridge")]
    pub max_ridge: f64,
    #[serde(default = "default_clamp_c")]
    pub clamp_c: f64,
    #[serde(default = "default_true")]
    pub dimensional_fix: bool,
    /// MI budget to correct; enables the corrected_mi output fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
}

fn default_epsilon() -> f64 {
    0.05
}
fn default_steps() -> usize {
    2000
}
fn default_lr() -> f64 {
    5e-4
}
fn default_ridge_step() -> f64 {
    0.025
}
fn default_max_ridge() -> f64 {
    2.0
}
fn default_clamp_c() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SrpacBlock {
    pub residual_budget: f64,
    pub eta_phi: f64,
    pub eta_lambda: f64,
    pub penalty_weight: f64,
    pub t_lambda: usize,
    pub t_phi: usize,
    pub batch_m: usize,
    pub eval_decoder_steps: usize,
    pub eval_m: usize,
    #[serde(default = "default_decoder")]
    pub decoder: String,
    pub init_log_std: Vec<f64>,
}

fn default_decoder() -> String {
    "softmax_linear".into()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepConfig {
    pub budgets: Vec<f64>,
    /// mi | residual — the convention the `budgets` grid is stated in.
    pub convention: String,
    pub methods: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_pac: Option<AutoPacBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficient_pac: Option<EfficientPacBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub srpac: Option<SrpacBlock>,
    #[serde(default = "default_accuracy_samples")]
    pub accuracy_samples: usize,
    #[serde(default = "default_gap_samples")]
    pub gap_samples: usize,
}

fn default_accuracy_samples() -> usize {
    20_000
}
fn default_gap_samples() -> usize {
    20_000
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComposeConfig {
    pub budgets: Vec<f64>,
    pub data_entropy: f64,
}

// ---- report files ----

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CalibrateReportFile {
    pub method: String,
    pub noise_covariance: Vec<Vec<f64>>,
    pub certified_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_mi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_estimate: Option<f64>,
    pub noise_power: f64,
    pub seed: u64,
    pub sample_count: usize,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GapReportFile {
    pub method: String,
    pub value: f64,
    pub clamp_active: bool,
    pub diagnostics: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_kl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_valid: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_mi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_clamped: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SrpacReportFile {
    pub log_std: Vec<f64>,
    pub noise_covariance: Vec<Vec<f64>>,
    pub achieved_log_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_conditional_entropy: Option<f64>,
    pub noise_power: f64,
    pub converged: bool,
    pub capped_samples: usize,
    pub trace: Vec<SrpacTraceRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SrpacTraceRow {
    pub log_score: f64,
    pub utility: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComposeReportFile {
    pub budgets: Vec<f64>,
    pub data_entropy: f64,
    pub residual_floor: f64,
    pub mi_bound: f64,
}

pub fn resolve_instance(cfg: &InstanceConfig) -> Result<(DataDistribution, Mechanism)> {
    if let Some(zoo) = &cfg.zoo {
        let spec = match zoo.as_str() {
            "four_symbol" => mechzoo::four_symbol_benchmark(),
            "toy_logit" => mechzoo::toy_logit_benchmark(),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown zoo instance {other}"
                )))
            }
        };
        return Ok((spec.dist, spec.mech));
    }
    let (dist_cfg, mech_cfg) = match (&cfg.dist, &cfg.mech) {
        (Some(d), Some(m)) => (d, m),
        _ => {
            return Err(Error::InvalidArgument(
                "instance needs either a zoo name or both dist and mech".into(),
            ))
        }
    };
    let dist = mechzoo::make_distribution(&dist_cfg.name, &dist_cfg.params)?;
    let mut mech = mechzoo::make_mechanism(&mech_cfg.name, &mech_cfg.params)?;
    if let Some(r) = cfg.norm_bound {
        mech = mech.with_norm_bound(r);
    }
    Ok((dist, mech))
}
