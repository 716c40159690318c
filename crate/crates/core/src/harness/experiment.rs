use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{dirichlet_partition, generate_synthetic, split_holdout, Dataset, ReplayBuffer, TaskLayout};
use crate::egc::{predict_feature, EgcConfig, Prediction};
use crate::error::Result;
use crate::fed::{run_task, ClientState, EnergyStats, RoundMetrics, ServerState};
use crate::geometry::{EtfPrototypes, OrthoBasis, SubspaceProjectors};
use crate::harness::config::{AblationTag, ExperimentConfig};
use crate::harness::metrics::{accuracy_matrix, AccuracyMatrix};
use crate::model::{forward, ModelParams};
use crate::seed;

/// One line of the JSONL metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Round {
        task: usize,
        round: usize,
        mean_total_loss: Option<f64>,
        mean_classification_loss: Option<f64>,
        mean_structure_loss: Option<f64>,
        global_head_energy: f64,
        global_tail_energy: f64,
        tail_weight: u64,
        upload_parameters_per_client: usize,
        upload_scalars_per_client: usize,
        upload_total: usize,
    },
    Eval {
        task: usize,
        /// Accuracy on tasks `1..=task`, with the correction applied per config.
        accuracies: Vec<f64>,
        /// Same evaluation scored on the uncorrected feature.
        uncorrected_accuracies: Vec<f64>,
        average_accuracy: f64,
        forgetting: Vec<f64>,
        mean_gate: f64,
        corrected_fraction: f64,
    },
}

impl Record {
    fn from_round(m: &RoundMetrics) -> Self {
        let per_client = m.clients.first().map(|c| c.upload);
        Record::Round {
            task: m.task,
            round: m.round,
            mean_total_loss: m.mean_total_loss,
            mean_classification_loss: m.mean_classification_loss,
            mean_structure_loss: m.mean_structure_loss,
            global_head_energy: m.global_stats.head_energy,
            global_tail_energy: m.global_stats.tail_energy,
            tail_weight: m.global_stats.weight,
            upload_parameters_per_client: per_client.map_or(0, |u| u.parameters),
            upload_scalars_per_client: per_client.map_or(0, |u| u.scalars),
            upload_total: m.upload_volume(),
        }
    }
}

/// Accuracy of the global model on one task's pooled test split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskEvaluation {
    pub accuracy: f64,
    pub uncorrected_accuracy: f64,
    pub mean_gate: f64,
    pub corrected_fraction: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub ablation: AblationTag,
    /// Effective configuration after overrides; re-running it reproduces the run.
    pub config: ExperimentConfig,
    pub accuracy_matrix: AccuracyMatrix,
    pub average_accuracies: Vec<f64>,
    pub final_average_accuracy: f64,
    pub final_forgetting: Vec<f64>,
    pub parameter_count: usize,
    pub warnings: Vec<String>,
}

/// Summary plus the final state, for diagnostics.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: ExperimentSummary,
    pub server: ServerState,
    /// Pooled test split per task, index `t - 1`.
    pub test_sets: Vec<Dataset>,
    pub partition_counts: Vec<Vec<usize>>,
}

/// Data layout, clients and test splits for `cfg`, all derived from the master seed.
pub struct Setup {
    pub layout: TaskLayout,
    pub clients: Vec<ClientState>,
    pub test_sets: Vec<Dataset>,
    pub partition_counts: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

pub fn build_clients(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let master = cfg.master_seed;
    let d = &cfg.dataset;
    let data = generate_synthetic(d.classes, d.per_class, d.input_dim, d.spread, seed::derive(master, seed::DATA, 0))?;
    let layout = TaskLayout::contiguous(d.classes, cfg.tasks)?;
    let (parts, counts, mut warnings) = if cfg.clients == 1 {
        let counts = vec![data.histogram(d.classes)];
        (vec![data], counts, Vec::new())
    } else {
        let p = dirichlet_partition(&data, cfg.clients, cfg.dirichlet_beta, seed::derive(master, seed::PARTITION, 0))?;
        let w = p.warnings(&layout);
        (p.clients, p.counts, w)
    };
    let init = ModelParams::zeros(cfg.model_shape());
    let mut test_sets = vec![Dataset::new(d.input_dim, Vec::new()); cfg.tasks];
    let mut clients = Vec::with_capacity(cfg.clients);
    for (k, part) in parts.into_iter().enumerate() {
        let client_seed = seed::derive(master, seed::CLIENT, k as u64);
        let mut tasks = Vec::with_capacity(cfg.tasks);
        for t in 1..=cfg.tasks {
            let task_data = part.filter_classes(layout.classes_of(t));
            let split_seed = seed::derive(master, seed::SPLIT, (k * cfg.tasks + t) as u64);
            let (train, test) = split_holdout(&task_data, cfg.test_fraction, split_seed);
            test_sets[t - 1].samples.extend(test.samples);
            tasks.push(train);
        }
        clients.push(ClientState {
            id: k,
            tasks,
            buffer: ReplayBuffer::new(cfg.replay, seed::derive(client_seed, 0x6275_6666, 0)),
            params: init.clone(),
            stats: EnergyStats::default(),
            seed: client_seed,
        });
    }
    for (t, test) in test_sets.iter().enumerate() {
        if test.is_empty() {
            warnings.push(format!("task {} has an empty test split", t + 1));
        }
    }
    Ok(Setup {
        layout,
        clients,
        test_sets,
        partition_counts: counts,
        warnings,
    })
}

/// Scores `params` on `test` with the given geometry and tail prior.
pub fn evaluate(
    params: &ModelParams,
    etf: &EtfPrototypes,
    proj: Option<&SubspaceProjectors>,
    global: &EnergyStats,
    egc: &EgcConfig,
    test: &Dataset,
) -> Result<TaskEvaluation> {
    let preds = predict_all(params, etf, proj, global, egc, test)?;
    let n = preds.len().max(1) as f64;
    let correct = preds.iter().zip(&test.samples).filter(|(p, s)| p.class == s.label).count();
    let uncorrected = preds
        .iter()
        .zip(&test.samples)
        .filter(|(p, s)| crate::egc::argmax(&p.uncorrected_logits) == s.label)
        .count();
    Ok(TaskEvaluation {
        accuracy: correct as f64 / n,
        uncorrected_accuracy: uncorrected as f64 / n,
        mean_gate: preds.iter().map(|p| p.gate).sum::<f64>() / n,
        corrected_fraction: preds.iter().filter(|p| p.corrected).count() as f64 / n,
        samples: preds.len(),
    })
}

pub fn predict_all(
    params: &ModelParams,
    etf: &EtfPrototypes,
    proj: Option<&SubspaceProjectors>,
    global: &EnergyStats,
    egc: &EgcConfig,
    test: &Dataset,
) -> Result<Vec<Prediction>> {
    if test.is_empty() {
        return Ok(Vec::new());
    }
    let features = forward(params, &test.inputs_matrix(&test.all_indices()))?;
    features
        .row_iter()
        .map(|row| predict_feature(&row.transpose(), etf, proj, global, egc))
        .collect()
}

/// Runs the full task/round protocol, writing one JSONL record per round and
/// per post-task evaluation to `sink`.
pub fn run_experiment(cfg: &ExperimentConfig, sink: &mut dyn Write) -> Result<ExperimentOutcome> {
    let Setup {
        layout,
        mut clients,
        test_sets,
        partition_counts,
        warnings,
    } = build_clients(cfg)?;
    let master = cfg.master_seed;
    let shape = cfg.model_shape();
    let init = ModelParams::init(shape, seed::derive(master, seed::MODEL_INIT, 0));
    let basis = OrthoBasis::from_seed(shape.feature_dim, seed::derive(master, seed::BASIS, 0))?;
    let mut server = ServerState::new(init, basis, layout);
    let train_cfg = cfg.train_config();

    let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(cfg.tasks);
    for t in 1..=cfg.tasks {
        for m in run_task(&mut server, &mut clients, &train_cfg, t)? {
            write_record(sink, &Record::from_round(&m))?;
        }
        let etf = server.etf.as_ref().expect("set by run_task");
        let mut evals = Vec::with_capacity(t);
        for test in &test_sets[..t] {
            evals.push(evaluate(
                &server.params,
                etf,
                server.projectors.as_ref(),
                &server.global_stats,
                &cfg.egc,
                test,
            )?);
        }
        let accuracies: Vec<f64> = evals.iter().map(|e| e.accuracy).collect();
        rows.push((t, accuracies.clone()));
        let partial = accuracy_matrix(&rows)?;
        let total: usize = evals.iter().map(|e| e.samples).sum::<usize>().max(1);
        let weighted = |f: fn(&TaskEvaluation) -> f64| {
            evals.iter().map(|e| f(e) * e.samples as f64).sum::<f64>() / total as f64
        };
        write_record(
            sink,
            &Record::Eval {
                task: t,
                uncorrected_accuracies: evals.iter().map(|e| e.uncorrected_accuracy).collect(),
                average_accuracy: partial.average(t),
                forgetting: partial.forgetting(t),
                mean_gate: weighted(|e| e.mean_gate),
                corrected_fraction: weighted(|e| e.corrected_fraction),
                accuracies,
            },
        )?;
    }
    let matrix = accuracy_matrix(&rows)?;
    let summary = ExperimentSummary {
        ablation: cfg.ablation(),
        config: cfg.clone(),
        average_accuracies: matrix.averages(),
        final_average_accuracy: matrix.final_average(),
        final_forgetting: matrix.forgetting(matrix.tasks()),
        accuracy_matrix: matrix,
        parameter_count: shape.param_count(),
        warnings,
    };
    Ok(ExperimentOutcome {
        summary,
        server,
        test_sets,
        partition_counts,
    })
}

fn write_record(sink: &mut dyn Write, r: &Record) -> Result<()> {
    serde_json::to_writer(&mut *sink, r)?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// The four component combinations of `base`, in [`AblationTag::ALL`] order.
pub fn ablation_configs(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    AblationTag::ALL.iter().map(|&t| base.with_ablation(t)).collect()
}

/// Per-sample correction diagnostics on every test sample of the final model.
#[derive(Debug, Clone, Serialize)]
pub struct SampleDiagnostic {
    pub sample_id: usize,
    pub label: usize,
    pub label_task: usize,
    #[serde(flatten)]
    pub prediction: Prediction,
}

impl ExperimentOutcome {
    pub fn sample_diagnostics(&self) -> Result<Vec<SampleDiagnostic>> {
        let cfg = &self.summary.config;
        let etf = self.server.etf.as_ref().expect("experiment ran at least one task");
        let mut out = Vec::new();
        for (t, test) in self.test_sets.iter().enumerate() {
            let preds = predict_all(
                &self.server.params,
                etf,
                self.server.projectors.as_ref(),
                &self.server.global_stats,
                &cfg.egc,
                test,
            )?;
            for (s, p) in test.samples.iter().zip(preds) {
                out.push(SampleDiagnostic {
                    sample_id: s.id,
                    label: s.label,
                    label_task: t + 1,
                    prediction: p,
                });
            }
        }
        Ok(out)
    }
}
