use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{ReplayConfig, ReplayPolicy};
use crate::egc::EgcConfig;
use crate::error::{Error, Result};
use crate::fed::TrainConfig;
use crate::model::{ExtractorKind, GsaConfig, ModelShape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub classes: usize,
    pub per_class: usize,
    pub input_dim: usize,
    pub spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ExtractorKind,
    #[serde(default)]
    pub hidden: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GsaSettings {
    pub temperature: f64,
    pub weight: f64,
    pub enabled: bool,
}

/// A complete run description. Serialized as JSON; every field is required
/// except those with documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub clients: usize,
    pub tasks: usize,
    pub rounds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dirichlet_beta: f64,
    pub replay: ReplayConfig,
    pub model: ModelConfig,
    pub gsa: GsaSettings,
    pub egc: EgcConfig,
    /// Fraction of every client's per-task data held out for evaluation.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub weighted_model_aggregation: bool,
    #[serde(default)]
    pub parallel: bool,
    pub master_seed: u64,
}

fn default_test_fraction() -> f64 {
    0.2
}

/// Which of the two method components are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationTag {
    ReplayOnly,
    Gsa,
    Egc,
    #[serde(rename = "gsa+egc")]
    GsaEgc,
}

impl AblationTag {
    pub const ALL: [AblationTag; 4] = [AblationTag::ReplayOnly, AblationTag::Gsa, AblationTag::Egc, AblationTag::GsaEgc];

    pub fn from_flags(gsa: bool, egc: bool) -> Self {
        match (gsa, egc) {
            (false, false) => AblationTag::ReplayOnly,
            (true, false) => AblationTag::Gsa,
            (false, true) => AblationTag::Egc,
            (true, true) => AblationTag::GsaEgc,
        }
    }

    pub fn flags(self) -> (bool, bool) {
        match self {
            AblationTag::ReplayOnly => (false, false),
            AblationTag::Gsa => (true, false),
            AblationTag::Egc => (false, true),
            AblationTag::GsaEgc => (true, true),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AblationTag::ReplayOnly => "replay-only",
            AblationTag::Gsa => "gsa",
            AblationTag::Egc => "egc",
            AblationTag::GsaEgc => "gsa+egc",
        }
    }
}

impl ExperimentConfig {
    /// The shipped desk-scale reference setup (`configs/reference.json`).
    pub fn reference() -> Self {
        Self {
            dataset: DatasetConfig {
                classes: 10,
                per_class: 300,
                input_dim: 20,
                spread: 0.25,
            },
            clients: 5,
            tasks: 3,
            rounds: 20,
            epochs: 2,
            batch_size: 32,
            lr: 0.04,
            weight_decay: 1e-5,
            dirichlet_beta: 0.5,
            replay: ReplayConfig {
                capacity: 20,
                per_task: 10,
                policy: ReplayPolicy::Uniform,
            },
            model: ModelConfig {
                kind: ExtractorKind::Mlp2,
                hidden: 64,
                feature_dim: 32,
            },
            gsa: GsaSettings {
                temperature: 0.5,
                weight: 0.1,
                enabled: true,
            },
            egc: EgcConfig {
                ema_decay: 0.7,
                epsilon: 1e-8,
                enabled: true,
            },
            test_fraction: 0.2,
            weighted_model_aggregation: false,
            parallel: false,
            master_seed: 1,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        Self::from_value(value)
    }

    fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::config("<root>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a JSON config and applies `key.path=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::config("<root>", e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn ablation(&self) -> AblationTag {
        AblationTag::from_flags(self.gsa.enabled, self.egc.enabled)
    }

    pub fn with_ablation(&self, tag: AblationTag) -> Self {
        let (gsa, egc) = tag.flags();
        let mut c = self.clone();
        c.gsa.enabled = gsa;
        c.egc.enabled = egc;
        c
    }

    pub fn model_shape(&self) -> ModelShape {
        ModelShape {
            kind: self.model.kind,
            input_dim: self.dataset.input_dim,
            hidden: self.model.hidden,
            feature_dim: self.model.feature_dim,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            rounds: self.rounds,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            gsa: GsaConfig {
                temperature: self.gsa.temperature,
                weight: if self.gsa.enabled { self.gsa.weight } else { 0.0 },
            },
            ema_decay: self.egc.ema_decay,
            weighted_model_aggregation: self.weighted_model_aggregation,
            parallel: self.parallel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.classes < 2 {
            return Err(Error::config("dataset.classes", "must be at least 2"));
        }
        if d.per_class == 0 {
            return Err(Error::config("dataset.per_class", "must be positive"));
        }
        if d.input_dim == 0 {
            return Err(Error::config("dataset.input_dim", "must be positive"));
        }
        if !(d.spread >= 0.0 && d.spread.is_finite()) {
            return Err(Error::config("dataset.spread", "must be a non-negative number"));
        }
        if self.clients == 0 {
            return Err(Error::config("clients", "must be positive"));
        }
        if self.tasks == 0 {
            return Err(Error::config("tasks", "must be positive"));
        }
        if d.classes < 2 * self.tasks {
            return Err(Error::config(
                "tasks",
                format!("every task needs at least 2 classes; {} classes cannot fill {} tasks", d.classes, self.tasks),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be a non-negative number"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be a non-negative number"));
        }
        if !(self.dirichlet_beta > 0.0 && self.dirichlet_beta.is_finite()) {
            return Err(Error::config("dirichlet_beta", "must be positive"));
        }
        if self.replay.per_task == 0 {
            return Err(Error::config("replay.per_task", "must be positive"));
        }
        if self.replay.capacity == 0 {
            return Err(Error::config("replay.capacity", "must be positive"));
        }
        if self.model.feature_dim < d.classes {
            return Err(Error::config(
                "model.feature_dim",
                format!("must be at least the class count {}", d.classes),
            ));
        }
        if self.model.kind == ExtractorKind::Mlp2 && self.model.hidden == 0 {
            return Err(Error::config("model.hidden", "mlp2 needs a positive hidden width"));
        }
        if !(self.gsa.temperature > 0.0 && self.gsa.temperature.is_finite()) {
            return Err(Error::config("gsa.temperature", "must be positive"));
        }
        if !(self.gsa.weight >= 0.0 && self.gsa.weight.is_finite()) {
            return Err(Error::config("gsa.weight", "must be non-negative"));
        }
        if !(self.egc.ema_decay > 0.0 && self.egc.ema_decay <= 1.0) {
            return Err(Error::config("egc.ema_decay", "must lie in (0, 1]"));
        }
        if !(self.egc.epsilon > 0.0 && self.egc.epsilon.is_finite()) {
            return Err(Error::config("egc.epsilon", "must be positive"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Sets the dotted `path` in a JSON tree to `value`. The value is parsed as
/// JSON when possible and taken as a string otherwise; the path must exist.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key.path=value"))?;
    let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for key in path.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(key))
            .ok_or_else(|| Error::config(path, "no such config field"))?;
    }
    *node = parsed;
    Ok(())
}
