//! Inference-time energy-gated correction.
//!
//! A normalized feature whose head-subspace energy exceeds the tail prior
//! learned during training gets part of its head component removed and its
//! tail component amplified before ETF scoring.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed::EnergyStats;
use crate::geometry::{check_unit, EtfPrototypes, SubspaceProjectors};
use crate::model::{forward, ModelParams};

/// Pre-normalization norms below this fall back to the uncorrected feature.
pub const CORRECTION_FALLBACK_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgcConfig {
    /// EMA decay `ρ ∈ (0, 1]` for the training-time tail priors.
    pub ema_decay: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub enabled: bool,
}

fn default_epsilon() -> f64 {
    1e-8
}

impl Default for EgcConfig {
    fn default() -> Self {
        Self {
            ema_decay: 0.7,
            epsilon: default_epsilon(),
            enabled: true,
        }
    }
}

impl EgcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ema_decay > 0.0 && self.ema_decay <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "EMA decay must lie in (0, 1], got {}",
                self.ema_decay
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// `max{(e_H - ē_H) / (e_H + e_T + ε), 0}`; zero when no tail prior exists.
pub fn confidence_gate(head_energy: f64, tail_energy: f64, global: &EnergyStats, eps: f64) -> f64 {
    if !global.is_initialized() {
        return 0.0;
    }
    let g = (head_energy - global.head_energy) / (head_energy + tail_energy + eps);
    g.max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedFeature {
    /// Unit-norm corrected feature (or the input when the fallback fired).
    pub vector: DVector<f64>,
    /// `x - g P_H x + g P_T x` before renormalization.
    pub pre_normalization: DVector<f64>,
    pub fallback: bool,
}

/// `x' = normalize(x - g P_H x + g P_T x)`. A zero gate returns `x` untouched.
pub fn correct_feature(x: &DVector<f64>, proj: &SubspaceProjectors, gate: f64) -> Result<CorrectedFeature> {
    check_unit(x)?;
    if !(0.0..1.0).contains(&gate) {
        return Err(Error::InvalidArgument(format!("gate must lie in [0, 1), got {gate}")));
    }
    if gate == 0.0 {
        return Ok(CorrectedFeature {
            vector: x.clone(),
            pre_normalization: x.clone(),
            fallback: false,
        });
    }
    let pre = x - proj.project_head(x) * gate + proj.project_tail(x) * gate;
    let n = pre.norm();
    if n < CORRECTION_FALLBACK_NORM {
        return Ok(CorrectedFeature {
            vector: x.clone(),
            pre_normalization: pre,
            fallback: true,
        });
    }
    Ok(CorrectedFeature {
        vector: &pre / n,
        pre_normalization: pre,
        fallback: false,
    })
}

/// Per-sample result with everything needed to inspect the correction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub class: usize,
    pub logits: Vec<f64>,
    pub uncorrected_logits: Vec<f64>,
    pub gate: f64,
    pub head_energy: Option<f64>,
    pub tail_energy: Option<f64>,
    /// `P_H x` of the normalized feature.
    pub head_component: Option<Vec<f64>>,
    /// `P_T x` of the normalized feature.
    pub tail_component: Option<Vec<f64>>,
    /// `x - x'` before renormalization, i.e. `g (P_H x - P_T x)`.
    pub removed_component: Option<Vec<f64>>,
    pub corrected: bool,
    pub fallback: bool,
    /// Set when the extracted feature was the zero vector.
    pub degenerate: bool,
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Runs the extractor on one input and classifies it.
pub fn predict(
    input: &[f64],
    params: &ModelParams,
    etf: &EtfPrototypes,
    proj: Option<&SubspaceProjectors>,
    global: &EnergyStats,
    cfg: &EgcConfig,
) -> Result<Prediction> {
    let x = DMatrix::from_row_slice(1, input.len(), input);
    let f = forward(params, &x)?;
    predict_feature(&f.row(0).transpose(), etf, proj, global, cfg)
}

/// Classifies an already extracted (unnormalized) feature.
///
/// `proj` is `None` on the first task, where no tail partition exists; the
/// correction is then skipped just as when `cfg.enabled` is false.
pub fn predict_feature(
    feature: &DVector<f64>,
    etf: &EtfPrototypes,
    proj: Option<&SubspaceProjectors>,
    global: &EnergyStats,
    cfg: &EgcConfig,
) -> Result<Prediction> {
    if feature.len() != etf.feature_dim() {
        return Err(Error::Shape {
            expected: format!("{} feature entries", etf.feature_dim()),
            actual: format!("{} feature entries", feature.len()),
        });
    }
    let norm = feature.norm();
    if norm == 0.0 || !norm.is_finite() {
        let zeros = vec![0.0; etf.class_count()];
        return Ok(Prediction {
            class: 0,
            logits: zeros.clone(),
            uncorrected_logits: zeros,
            gate: 0.0,
            head_energy: None,
            tail_energy: None,
            head_component: None,
            tail_component: None,
            removed_component: None,
            corrected: false,
            fallback: false,
            degenerate: true,
        });
    }
    let x = feature / norm;
    let plain: Vec<f64> = etf.scores(&x).iter().copied().collect();
    let proj = match proj {
        Some(p) if cfg.enabled => p,
        _ => {
            return Ok(Prediction {
                class: argmax(&plain),
                logits: plain.clone(),
                uncorrected_logits: plain,
                gate: 0.0,
                head_energy: None,
                tail_energy: None,
                head_component: None,
                tail_component: None,
                removed_component: None,
                corrected: false,
                fallback: false,
                degenerate: false,
            })
        }
    };
    let (eh, et) = proj.raw_energies(&x);
    let gate = confidence_gate(eh, et, global, cfg.epsilon);
    let corrected = correct_feature(&x, proj, gate)?;
    let logits: Vec<f64> = if gate == 0.0 {
        plain.clone()
    } else {
        etf.scores(&corrected.vector).iter().copied().collect()
    };
    let removed = &x - &corrected.pre_normalization;
    Ok(Prediction {
        class: argmax(&logits),
        logits,
        uncorrected_logits: plain,
        gate,
        head_energy: Some(eh),
        tail_energy: Some(et),
        head_component: Some(proj.project_head(&x).iter().copied().collect()),
        tail_component: Some(proj.project_tail(&x).iter().copied().collect()),
        removed_component: Some(removed.iter().copied().collect()),
        corrected: gate > 0.0 && !corrected.fallback,
        fallback: corrected.fallback,
        degenerate: false,
    })
}
