//! The federated task/round protocol.
//!
//! Each round the server broadcasts `θ_g`, every client trains locally on its
//! current task merged with its replay buffer, refreshes its tail-energy EMA,
//! and uploads its parameters plus three scalars. The server averages the
//! parameters and takes the sample-weighted mean of the energy scalars.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{merged_train_set, Dataset, ReplayBuffer, TaskLayout};
use crate::error::{Error, Result};
use crate::geometry::{build_projectors, EtfPrototypes, OrthoBasis, SubspaceProjectors};
use crate::model::{backward, forward, forward_with_cache, normalize_rows, sgd_step, total_loss, FeatureBatch, GsaConfig, ModelParams};
use crate::seed;

/// Scalars uploaded per client per round: head energy, tail energy, weight.
pub const UPLOAD_SCALARS: usize = 3;

/// Rank-normalized tail energy priors. `weight == 0` means uninitialized.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyStats {
    pub head_energy: f64,
    pub tail_energy: f64,
    pub weight: u64,
}

impl EnergyStats {
    pub fn is_initialized(&self) -> bool {
        self.weight > 0
    }
}

/// EMA update of both energies over a batch of normalized tail features.
///
/// The first update on an uninitialized state takes the batch mean directly.
/// The returned weight is the number of features in this batch.
pub fn update_tail_ema(
    stats: &EnergyStats,
    proj: &SubspaceProjectors,
    tail_features: &[DVector<f64>],
    rho: f64,
) -> Result<EnergyStats> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("EMA decay must lie in (0, 1], got {rho}")));
    }
    if tail_features.is_empty() {
        return Ok(*stats);
    }
    let mut sum_h = 0.0;
    let mut sum_t = 0.0;
    for f in tail_features {
        let (h, t) = crate::geometry::subspace_energies(proj, f)?;
        sum_h += h;
        sum_t += t;
    }
    let n = tail_features.len() as f64;
    let (mean_h, mean_t) = (sum_h / n, sum_t / n);
    let (head, tail) = if stats.is_initialized() {
        (
            (1.0 - rho) * stats.head_energy + rho * mean_h,
            (1.0 - rho) * stats.tail_energy + rho * mean_t,
        )
    } else {
        (mean_h, mean_t)
    };
    Ok(EnergyStats {
        head_energy: head,
        tail_energy: tail,
        weight: tail_features.len() as u64,
    })
}

/// Elementwise mean of the client parameters, summed in slice order.
pub fn aggregate_models(client_params: &[ModelParams]) -> Result<ModelParams> {
    let weights = vec![1.0; client_params.len()];
    aggregate_models_weighted(client_params, &weights)
}

/// `Σ w_k θ_k / Σ w_k`, summed in slice order.
pub fn aggregate_models_weighted(client_params: &[ModelParams], weights: &[f64]) -> Result<ModelParams> {
    let first = client_params
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot aggregate zero clients".into()))?;
    if weights.len() != client_params.len() {
        return Err(Error::InvalidArgument("one weight per client is required".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidArgument("aggregation weights sum to zero".into()));
    }
    let mut acc = vec![0.0; first.len()];
    for (p, &w) in client_params.iter().zip(weights) {
        if p.shape() != first.shape() {
            return Err(Error::Shape {
                expected: format!("{:?}", first.shape()),
                actual: format!("{:?}", p.shape()),
            });
        }
        for (a, v) in acc.iter_mut().zip(p.as_flat()) {
            *a += w * v;
        }
    }
    for a in &mut acc {
        *a /= total;
    }
    ModelParams::from_flat(*first.shape(), acc)
}

/// Sample-weighted mean of client energies; clients with zero weight are skipped.
/// Returns the uninitialized state when no client has tail statistics.
pub fn aggregate_energy_stats(client_stats: &[EnergyStats]) -> EnergyStats {
    let mut weight = 0u64;
    let mut head = 0.0;
    let mut tail = 0.0;
    for s in client_stats.iter().filter(|s| s.weight > 0) {
        weight += s.weight;
        head += s.weight as f64 * s.head_energy;
        tail += s.weight as f64 * s.tail_energy;
    }
    if weight == 0 {
        return EnergyStats::default();
    }
    EnergyStats {
        head_energy: head / weight as f64,
        tail_energy: tail / weight as f64,
        weight,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rounds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Structure loss settings; a zero weight turns the term off.
    pub gsa: GsaConfig,
    pub ema_decay: f64,
    /// Weight client models by training-set size instead of the plain mean.
    pub weighted_model_aggregation: bool,
    /// Train clients of a round on the rayon pool. Results are identical either way.
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    /// Training data per task, index `t - 1`.
    pub tasks: Vec<Dataset>,
    pub buffer: ReplayBuffer,
    pub params: ModelParams,
    pub stats: EnergyStats,
    pub seed: u64,
}

/// What a client sends to the server after a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Upload {
    pub client: usize,
    pub parameters: usize,
    pub scalars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientReport {
    pub client: usize,
    pub samples: usize,
    pub batches: usize,
    /// Means over batches; `None` when the client had nothing to train on.
    pub mean_total_loss: Option<f64>,
    pub mean_classification_loss: Option<f64>,
    pub mean_structure_loss: Option<f64>,
    pub tail_samples: usize,
    pub upload: Upload,
}

/// Geometry the server hands to clients for one task.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub task: usize,
    pub round: usize,
    pub etf: &'a EtfPrototypes,
    /// `None` on the first task.
    pub projectors: Option<&'a SubspaceProjectors>,
}

/// Trains `client.params` in place for `cfg.epochs` passes over the merged
/// train set, then refreshes the client's tail-energy EMA from its replayed
/// samples. Shuffling is seeded by `(client seed, task, round)`.
pub fn local_train_round(client: &mut ClientState, ctx: &RoundContext<'_>, cfg: &TrainConfig) -> Result<ClientReport> {
    let current = client
        .tasks
        .get(ctx.task - 1)
        .ok_or_else(|| Error::InvalidArgument(format!("client {} has no slot for task {}", client.id, ctx.task)))?;
    let train = merged_train_set(current, &client.buffer);
    if train.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "client {} has no training data for task {}",
            client.id, ctx.task
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = seed::rng(seed::derive(client.seed, ctx.task as u64, ctx.round as u64));
    let mut order = train.all_indices();
    let mut params = client.params.clone();
    let (mut sum_total, mut sum_cls, mut sum_gsa) = (0.0, 0.0, 0.0);
    let (mut batches, mut gsa_batches) = (0usize, 0usize);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let inputs = train.inputs_matrix(chunk);
            let (features, cache) = forward_with_cache(&params, &inputs)?;
            let batch = FeatureBatch::new(features, train.labels(chunk))?;
            let loss = total_loss(&batch, ctx.etf, &cfg.gsa, ctx.task)?;
            let grad = backward(&params, &cache, &loss.grad);
            params = sgd_step(&params, &grad, cfg.lr, cfg.weight_decay)?;
            sum_total += loss.total;
            sum_cls += loss.classification;
            if let Some(s) = loss.structure {
                sum_gsa += s;
                gsa_batches += 1;
            }
            batches += 1;
        }
    }
    client.params = params;

    let mut tail_samples = 0;
    if let Some(proj) = ctx.projectors {
        let replay = client.buffer.replay_set();
        if !replay.is_empty() {
            let features = forward(&client.params, &replay.inputs_matrix(&replay.all_indices()))?;
            let rows: Vec<DVector<f64>> = normalize_rows(&features).into_iter().flatten().collect();
            tail_samples = rows.len();
            client.stats = update_tail_ema(&client.stats, proj, &rows, cfg.ema_decay)?;
            client.stats.weight = tail_samples as u64;
        }
    }

    let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    Ok(ClientReport {
        client: client.id,
        samples: train.len(),
        batches,
        mean_total_loss: mean(sum_total, batches),
        mean_classification_loss: mean(sum_cls, batches),
        mean_structure_loss: mean(sum_gsa, gsa_batches),
        tail_samples,
        upload: Upload {
            client: client.id,
            parameters: client.params.len(),
            scalars: UPLOAD_SCALARS,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub params: ModelParams,
    pub global_stats: EnergyStats,
    pub task: usize,
    pub round: usize,
    pub basis: OrthoBasis,
    pub layout: TaskLayout,
    pub etf: Option<EtfPrototypes>,
    pub projectors: Option<SubspaceProjectors>,
}

impl ServerState {
    pub fn new(params: ModelParams, basis: OrthoBasis, layout: TaskLayout) -> Self {
        Self {
            params,
            global_stats: EnergyStats::default(),
            task: 0,
            round: 0,
            basis,
            layout,
            etf: None,
            projectors: None,
        }
    }

    /// Rebuilds the prototypes and projectors for `task`.
    pub fn enter_task(&mut self, task: usize) -> Result<()> {
        if task == 0 || task > self.layout.task_count() {
            return Err(Error::InvalidArgument(format!("task {task} is outside the layout")));
        }
        let seen = self.layout.classes_through(task);
        let etf = EtfPrototypes::from_basis(&self.basis, seen.len())?;
        self.projectors = if task >= 2 {
            let head = self.layout.classes_of(task).to_vec();
            let tail = self.layout.classes_through(task - 1);
            Some(build_projectors(&etf, &head, &tail)?)
        } else {
            None
        };
        self.etf = Some(etf);
        self.task = task;
        self.round = 0;
        self.global_stats = EnergyStats::default();
        Ok(())
    }
}

/// Server-side view of one finished round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub task: usize,
    pub round: usize,
    /// Mean over clients that trained, in client-id order.
    pub mean_total_loss: Option<f64>,
    pub mean_classification_loss: Option<f64>,
    pub mean_structure_loss: Option<f64>,
    pub global_stats: EnergyStats,
    pub clients: Vec<ClientReport>,
}

impl RoundMetrics {
    pub fn uploads(&self) -> impl Iterator<Item = &Upload> {
        self.clients.iter().map(|c| &c.upload)
    }

    /// Scalars plus parameters sent by all clients this round.
    pub fn upload_volume(&self) -> usize {
        self.uploads().map(|u| u.parameters + u.scalars).sum()
    }
}

/// Runs every round of `task`, then stores each client's task data in its
/// replay buffer.
///
/// A client with nothing to train on (no current data and an empty buffer)
/// still participates: it uploads the broadcast model unchanged.
pub fn run_task(
    server: &mut ServerState,
    clients: &mut [ClientState],
    cfg: &TrainConfig,
    task: usize,
) -> Result<Vec<RoundMetrics>> {
    server.enter_task(task)?;
    for c in clients.iter_mut() {
        c.stats = EnergyStats::default();
    }
    let etf = server.etf.clone().expect("set by enter_task");
    let projectors = server.projectors.clone();
    let mut metrics = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let ctx = RoundContext {
            task,
            round,
            etf: &etf,
            projectors: projectors.as_ref(),
        };
        for c in clients.iter_mut() {
            c.params = server.params.clone();
        }
        let train = |c: &mut ClientState| -> Result<ClientReport> {
            let has_data = c.tasks.get(task - 1).is_some_and(|d| !d.is_empty()) || !c.buffer.is_empty();
            if has_data {
                local_train_round(c, &ctx, cfg)
            } else {
                Ok(ClientReport {
                    client: c.id,
                    samples: 0,
                    batches: 0,
                    mean_total_loss: None,
                    mean_classification_loss: None,
                    mean_structure_loss: None,
                    tail_samples: 0,
                    upload: Upload {
                        client: c.id,
                        parameters: c.params.len(),
                        scalars: UPLOAD_SCALARS,
                    },
                })
            }
        };
        let reports: Vec<ClientReport> = if cfg.parallel {
            clients.par_iter_mut().map(train).collect::<Result<_>>()?
        } else {
            clients.iter_mut().map(train).collect::<Result<_>>()?
        };

        let params: Vec<ModelParams> = clients.iter().map(|c| c.params.clone()).collect();
        server.params = if cfg.weighted_model_aggregation {
            let w: Vec<f64> = reports.iter().map(|r| r.samples as f64).collect();
            if w.iter().sum::<f64>() > 0.0 {
                aggregate_models_weighted(&params, &w)?
            } else {
                aggregate_models(&params)?
            }
        } else {
            aggregate_models(&params)?
        };
        let stats: Vec<EnergyStats> = clients.iter().map(|c| c.stats).collect();
        server.global_stats = aggregate_energy_stats(&stats);
        server.round = round;

        let mean_of = |f: fn(&ClientReport) -> Option<f64>| {
            let vals: Vec<f64> = reports.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        metrics.push(RoundMetrics {
            task,
            round,
            mean_total_loss: mean_of(|r| r.mean_total_loss),
            mean_classification_loss: mean_of(|r| r.mean_classification_loss),
            mean_structure_loss: mean_of(|r| r.mean_structure_loss),
            global_stats: server.global_stats,
            clients: reports,
        });
    }
    for c in clients.iter_mut() {
        let data = c.tasks.get(task - 1).cloned().unwrap_or_default();
        c.buffer.add_task(task, &data);
    }
    Ok(metrics)
}
