//! Feature extractor, classification loss and angular-structure distillation loss.
//!
//! Parameters live in one flat vector. Matrices are stored column-major:
//!
//! - `linear`: `W` (`d_in × d`), then `b` (`d`). Features are `x W + b`.
//! - `mlp2`: `W1` (`d_in × h`), `b1` (`h`), `W2` (`h × d`), `b2` (`d`).
//!   Features are `max(0, x W1 + b1) W2 + b2`.
//!
//! Every loss returns its value and the analytic gradient with respect to the
//! `B × d` feature matrix; [`backward`] chains that through the extractor.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EtfPrototypes;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    Linear,
    Mlp2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub kind: ExtractorKind,
    pub input_dim: usize,
    /// Width of the hidden layer; ignored by `linear`.
    pub hidden: usize,
    pub feature_dim: usize,
}

impl ModelShape {
    pub fn param_count(&self) -> usize {
        let (i, h, d) = (self.input_dim, self.hidden, self.feature_dim);
        match self.kind {
            ExtractorKind::Linear => i * d + d,
            ExtractorKind::Mlp2 => i * h + h + h * d + d,
        }
    }

    /// `(offset, rows, cols)` of each block in flat order.
    fn blocks(&self) -> Vec<(usize, usize, usize)> {
        let (i, h, d) = (self.input_dim, self.hidden, self.feature_dim);
        let dims: Vec<(usize, usize)> = match self.kind {
            ExtractorKind::Linear => vec![(i, d), (d, 1)],
            ExtractorKind::Mlp2 => vec![(i, h), (h, 1), (h, d), (d, 1)],
        };
        let mut off = 0;
        dims.into_iter()
            .map(|(r, c)| {
                let b = (off, r, c);
                off += r * c;
                b
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    shape: ModelShape,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.param_count()],
        }
    }

    pub fn from_flat(shape: ModelShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.param_count() {
            return Err(Error::Shape {
                expected: format!("{} parameters", shape.param_count()),
                actual: format!("{} parameters", values.len()),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!("parameter {i} is not finite")));
        }
        Ok(Self { shape, values })
    }

    /// Gaussian weights with variance `gain / fan_in`, zero biases.
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut values = vec![0.0; shape.param_count()];
        for (off, rows, cols) in shape.blocks() {
            if cols == 1 {
                continue;
            }
            let gain: f64 = match shape.kind {
                ExtractorKind::Linear => 1.0,
                ExtractorKind::Mlp2 => 2.0,
            };
            let std = (gain / rows as f64).sqrt();
            for v in &mut values[off..off + rows * cols] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = std * z;
            }
        }
        Self { shape, values }
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn block(&self, index: usize) -> DMatrixView<'_, f64> {
        let (off, r, c) = self.shape.blocks()[index];
        DMatrixView::from_slice(&self.values[off..off + r * c], r, c)
    }
}

/// Features of a batch together with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl FeatureBatch {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Shape {
                expected: "at least one row".into(),
                actual: "empty batch".into(),
            });
        }
        if features.nrows() != labels.len() {
            return Err(Error::Shape {
                expected: format!("{} labels", features.nrows()),
                actual: format!("{} labels", labels.len()),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-class sample counts indexed by class id, sized to the largest label.
    pub fn class_counts(&self) -> Vec<usize> {
        let n = self.labels.iter().max().map_or(0, |&m| m + 1);
        let mut counts = vec![0; n];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    fn check_labels(&self, classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&y| y >= classes) {
            Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
            None => Ok(()),
        }
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: DMatrix<f64>,
    pre_hidden: Option<DMatrix<f64>>,
    hidden: Option<DMatrix<f64>>,
}

pub fn forward(params: &ModelParams, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    forward_with_cache(params, inputs).map(|(f, _)| f)
}

pub fn forward_with_cache(
    params: &ModelParams,
    inputs: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, ForwardCache)> {
    let shape = params.shape;
    if inputs.ncols() != shape.input_dim {
        return Err(Error::Shape {
            expected: format!("{} input columns", shape.input_dim),
            actual: format!("{} input columns", inputs.ncols()),
        });
    }
    match shape.kind {
        ExtractorKind::Linear => {
            let features = add_row_bias(inputs * params.block(0), params.block(1));
            Ok((
                features,
                ForwardCache {
                    inputs: inputs.clone(),
                    pre_hidden: None,
                    hidden: None,
                },
            ))
        }
        ExtractorKind::Mlp2 => {
            let pre = add_row_bias(inputs * params.block(0), params.block(1));
            let hidden = pre.map(|v| v.max(0.0));
            let features = add_row_bias(&hidden * params.block(2), params.block(3));
            Ok((
                features,
                ForwardCache {
                    inputs: inputs.clone(),
                    pre_hidden: Some(pre),
                    hidden: Some(hidden),
                },
            ))
        }
    }
}

fn add_row_bias(mut m: DMatrix<f64>, bias: DMatrixView<'_, f64>) -> DMatrix<f64> {
    for mut row in m.row_iter_mut() {
        for (v, b) in row.iter_mut().zip(bias.iter()) {
            *v += *b;
        }
    }
    m
}

/// Gradient of the loss with respect to the flat parameter vector, given `dL/dF`.
pub fn backward(params: &ModelParams, cache: &ForwardCache, d_features: &DMatrix<f64>) -> Vec<f64> {
    let mut grad = Vec::with_capacity(params.len());
    match params.shape.kind {
        ExtractorKind::Linear => {
            let dw = cache.inputs.tr_mul(d_features);
            grad.extend_from_slice(dw.as_slice());
            grad.extend(d_features.row_sum().iter());
        }
        ExtractorKind::Mlp2 => {
            let hidden = cache.hidden.as_ref().expect("mlp2 cache holds hidden activations");
            let pre = cache.pre_hidden.as_ref().expect("mlp2 cache holds pre-activations");
            let dw2 = hidden.tr_mul(d_features);
            let db2 = d_features.row_sum();
            let mut dh = d_features * params.block(2).transpose();
            dh.zip_apply(pre, |g, p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
            let dw1 = cache.inputs.tr_mul(&dh);
            let db1 = dh.row_sum();
            grad.extend_from_slice(dw1.as_slice());
            grad.extend(db1.iter());
            grad.extend_from_slice(dw2.as_slice());
            grad.extend(db2.iter());
        }
    }
    grad
}

/// Loss value and its gradient with respect to the features.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: DMatrix<f64>,
}

fn softmax_row(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax_row(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Mean cross-entropy of `softmax(⟨f, w_i⟩)` against the labels.
pub fn classification_loss(batch: &FeatureBatch, etf: &EtfPrototypes) -> Result<LossOutput> {
    let classes = etf.class_count();
    batch.check_labels(classes)?;
    check_feature_dim(batch, etf)?;
    let b = batch.len();
    let logits = &batch.features * etf.matrix();
    let mut d_logits = DMatrix::<f64>::zeros(b, classes);
    let mut loss = 0.0;
    for a in 0..b {
        let z: Vec<f64> = logits.row(a).iter().cloned().collect();
        let log_p = log_softmax_row(&z);
        let y = batch.labels[a];
        loss -= log_p[y];
        for c in 0..classes {
            let p = log_p[c].exp();
            let target = if c == y { 1.0 } else { 0.0 };
            d_logits[(a, c)] = (p - target) / b as f64;
        }
    }
    Ok(LossOutput {
        loss: loss / b as f64,
        grad: d_logits * etf.matrix().transpose(),
    })
}

fn check_feature_dim(batch: &FeatureBatch, etf: &EtfPrototypes) -> Result<()> {
    if batch.features.ncols() != etf.feature_dim() {
        return Err(Error::Shape {
            expected: format!("{} feature columns", etf.feature_dim()),
            actual: format!("{} feature columns", batch.features.ncols()),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsaConfig {
    /// Softmax temperature `τ > 0`.
    pub temperature: f64,
    /// Weight `λ ≥ 0` of the structure loss in the stage-2 objective.
    pub weight: f64,
}

impl GsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "structure-loss weight must be non-negative, got {}",
                self.weight
            )));
        }
        Ok(())
    }
}

/// Class-balanced KL between the row-softmaxed cosine matrices of the features
/// and of their label prototypes.
///
/// Each row `a` contributes `KL(P_F[a,:] ‖ P_P[a,:])` with weight
/// `1 / (|present classes| · n_{y_a})`. The prototype side is constant.
pub fn gsa_loss(batch: &FeatureBatch, etf: &EtfPrototypes, cfg: &GsaConfig) -> Result<LossOutput> {
    cfg.validate()?;
    batch.check_labels(etf.class_count())?;
    check_feature_dim(batch, etf)?;
    let b = batch.len();
    let d = batch.features.ncols();
    let tau = cfg.temperature;

    let mut unit = batch.features.clone();
    let mut norms = Vec::with_capacity(b);
    for (a, mut row) in unit.row_iter_mut().enumerate() {
        let n = row.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Degenerate(format!(
                "feature row {a} has norm {n}; cosine similarity is undefined"
            )));
        }
        row /= n;
        norms.push(n);
    }

    let protos = etf.matrix();
    let proto_norms: Vec<f64> = (0..etf.class_count()).map(|c| protos.column(c).norm()).collect();
    let proto_cos = DMatrix::from_fn(etf.class_count(), etf.class_count(), |i, j| {
        protos.column(i).dot(&protos.column(j)) / (proto_norms[i] * proto_norms[j])
    });
    let sim_f = &unit * unit.transpose();

    let counts = batch.class_counts();
    let present = counts.iter().filter(|&&n| n > 0).count() as f64;

    let mut loss = 0.0;
    let mut g = DMatrix::<f64>::zeros(b, b);
    for a in 0..b {
        let ya = batch.labels[a];
        let row_f: Vec<f64> = (0..b).map(|k| sim_f[(a, k)] / tau).collect();
        let row_p: Vec<f64> = (0..b).map(|k| proto_cos[(ya, batch.labels[k])] / tau).collect();
        let log_pf = log_softmax_row(&row_f);
        let log_pp = log_softmax_row(&row_p);
        let pf = softmax_row(&row_f);
        let ratio: Vec<f64> = (0..b).map(|k| log_pf[k] - log_pp[k]).collect();
        let kl: f64 = (0..b)
            .map(|k| if pf[k] > 0.0 { pf[k] * ratio[k] } else { 0.0 })
            .sum();
        let weight = 1.0 / (present * counts[ya] as f64);
        loss += weight * kl;
        // d KL / d s_k = P_F[k] (log ratio_k - KL), with s = M_F[a,:] / τ.
        for k in 0..b {
            g[(a, k)] = weight * pf[k] * (ratio[k] - kl) / tau;
        }
    }

    // M_F = U Uᵀ, so dL/dU = (G + Gᵀ) U; then through the row normalization.
    let d_unit = (&g + g.transpose()) * &unit;
    let mut grad = DMatrix::<f64>::zeros(b, d);
    for a in 0..b {
        let u = unit.row(a);
        let du = d_unit.row(a);
        let radial = u.dot(&du);
        for j in 0..d {
            grad[(a, j)] = (du[j] - radial * u[j]) / norms[a];
        }
    }
    Ok(LossOutput { loss, grad })
}

/// Stage-dependent objective: classification only on the first task, plus the
/// weighted structure loss afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub total: f64,
    pub classification: f64,
    /// `None` when the structure term was not evaluated (first task or zero weight).
    pub structure: Option<f64>,
    pub grad: DMatrix<f64>,
}

pub fn total_loss(
    batch: &FeatureBatch,
    etf: &EtfPrototypes,
    cfg: &GsaConfig,
    task_index: usize,
) -> Result<TotalLoss> {
    if task_index == 0 {
        return Err(Error::InvalidArgument("task indices start at 1".into()));
    }
    let cls = classification_loss(batch, etf)?;
    if task_index == 1 || cfg.weight == 0.0 {
        return Ok(TotalLoss {
            total: cls.loss,
            classification: cls.loss,
            structure: None,
            grad: cls.grad,
        });
    }
    let gsa = gsa_loss(batch, etf, cfg)?;
    let lambda = cfg.weight;
    Ok(TotalLoss {
        total: cls.loss + lambda * gsa.loss,
        classification: cls.loss,
        structure: Some(gsa.loss),
        grad: cls.grad + gsa.grad * lambda,
    })
}

/// `θ ← θ - lr · (∇ + weight_decay · θ)` over the flat parameter vector.
pub fn sgd_step(params: &ModelParams, gradient: &[f64], lr: f64, weight_decay: f64) -> Result<ModelParams> {
    if gradient.len() != params.len() {
        return Err(Error::Shape {
            expected: format!("{} gradient entries", params.len()),
            actual: format!("{} gradient entries", gradient.len()),
        });
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be non-negative, got {lr}")));
    }
    if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "weight decay must be non-negative, got {weight_decay}"
        )));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(i));
    }
    let values = params
        .values
        .iter()
        .zip(gradient)
        .map(|(&t, &g)| t - lr * (g + weight_decay * t))
        .collect();
    Ok(ModelParams {
        shape: params.shape,
        values,
    })
}

/// Rows of `features` scaled to unit length; `None` for an all-zero row.
pub fn normalize_rows(features: &DMatrix<f64>) -> Vec<Option<DVector<f64>>> {
    features
        .row_iter()
        .map(|r| {
            let n = r.norm();
            (n > 0.0 && n.is_finite()).then(|| r.transpose() / n)
        })
        .collect()
}
