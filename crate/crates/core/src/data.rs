//! Synthetic class-clustered data, Dirichlet client partitioning, task streams
//! and per-client exemplar replay buffers.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Norm of every class mean in generated data.
pub const MEAN_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Index in the originally generated dataset; unique per run.
    pub id: usize,
    pub label: usize,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub input_dim: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(input_dim: usize, samples: Vec<Sample>) -> Self {
        Self { input_dim, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Label counts indexed by class, length `classes`.
    pub fn histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for s in &self.samples {
            h[s.label] += 1;
        }
        h
    }

    pub fn filter_classes(&self, classes: &[usize]) -> Dataset {
        Dataset {
            input_dim: self.input_dim,
            samples: self
                .samples
                .iter()
                .filter(|s| classes.contains(&s.label))
                .cloned()
                .collect(),
        }
    }

    /// Inputs of the selected samples as a `len × input_dim` matrix.
    pub fn inputs_matrix(&self, indices: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(indices.len(), self.input_dim, |r, c| {
            self.samples[indices[r]].input[c]
        })
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.samples[i].label).collect()
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// Gaussian clusters around seeded random unit directions scaled by [`MEAN_RADIUS`].
///
/// Samples are ordered class by class; sample ids are their positions.
pub fn generate_synthetic(
    classes: usize,
    per_class: usize,
    input_dim: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
    }
    if per_class == 0 || input_dim == 0 {
        return Err(Error::InvalidArgument("per_class and input_dim must be positive".into()));
    }
    if !(cluster_spread >= 0.0 && cluster_spread.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "cluster spread must be non-negative, got {cluster_spread}"
        )));
    }
    let mut rng = seed::rng(seed);
    let means = class_means(classes, input_dim, &mut rng);
    let mut samples = Vec::with_capacity(classes * per_class);
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let input = mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + cluster_spread * z
                })
                .collect();
            samples.push(Sample {
                id: samples.len(),
                label,
                input,
            });
        }
    }
    Ok(Dataset::new(input_dim, samples))
}

/// The class means [`generate_synthetic`] uses for the same arguments.
pub fn synthetic_class_means(classes: usize, input_dim: usize, seed: u64) -> Vec<Vec<f64>> {
    class_means(classes, input_dim, &mut seed::rng(seed))
}

fn class_means(classes: usize, input_dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..input_dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| MEAN_RADIUS * x / n).collect()
        })
        .collect()
}

/// Assignment of classes to tasks; class ids are contiguous in task order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskLayout {
    task_classes: Vec<Vec<usize>>,
}

impl TaskLayout {
    /// Splits `classes` into `tasks` contiguous groups whose sizes differ by at
    /// most one, larger groups first.
    pub fn contiguous(classes: usize, tasks: usize) -> Result<Self> {
        if tasks == 0 || tasks > classes {
            return Err(Error::InvalidArgument(format!(
                "cannot split {classes} classes into {tasks} tasks"
            )));
        }
        let base = classes / tasks;
        let extra = classes % tasks;
        let mut next = 0;
        let task_classes = (0..tasks)
            .map(|t| {
                let n = base + usize::from(t < extra);
                let v: Vec<usize> = (next..next + n).collect();
                next += n;
                v
            })
            .collect();
        Ok(Self { task_classes })
    }

    pub fn task_count(&self) -> usize {
        self.task_classes.len()
    }

    /// Classes introduced by task `task` (1-based).
    pub fn classes_of(&self, task: usize) -> &[usize] {
        &self.task_classes[task - 1]
    }

    /// Every class introduced by tasks `1..=task`.
    pub fn classes_through(&self, task: usize) -> Vec<usize> {
        self.task_classes[..task].iter().flatten().copied().collect()
    }

    pub fn task_of(&self, class: usize) -> Option<usize> {
        self.task_classes.iter().position(|c| c.contains(&class)).map(|t| t + 1)
    }
}

/// Per-client datasets produced by [`dirichlet_partition`].
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub clients: Vec<Dataset>,
    /// `counts[k][c]`: samples of class `c` held by client `k`.
    pub counts: Vec<Vec<usize>>,
}

impl Partition {
    /// `(client, task)` pairs where the client holds no sample of the task.
    pub fn empty_tasks(&self, layout: &TaskLayout) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, row) in self.counts.iter().enumerate() {
            for t in 1..=layout.task_count() {
                if layout.classes_of(t).iter().all(|&c| row[c] == 0) {
                    out.push((k, t));
                }
            }
        }
        out
    }

    pub fn warnings(&self, layout: &TaskLayout) -> Vec<String> {
        self.empty_tasks(layout)
            .into_iter()
            .map(|(k, t)| format!("client {k} holds no samples of task {t}"))
            .collect()
    }
}

/// For each class, draws client proportions from `Dir(β·1_K)` and deals the
/// class's (shuffled) samples out by largest-remainder rounding.
pub fn dirichlet_partition(dataset: &Dataset, clients: usize, beta: f64, seed: u64) -> Result<Partition> {
    if clients < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 clients, got {clients}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let classes = dataset.samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); clients];
    let mut counts = vec![vec![0usize; classes]; clients];
    for (c, mut members) in by_class.into_iter().enumerate() {
        let mut draws: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            draws.iter_mut().for_each(|p| *p /= total);
        } else {
            // every draw underflowed: give the whole class to one client
            let pick = (rand::Rng::random::<u64>(&mut rng) % clients as u64) as usize;
            draws = (0..clients).map(|k| if k == pick { 1.0 } else { 0.0 }).collect();
        }
        let quotas = largest_remainder(&draws, members.len());
        members.shuffle(&mut rng);
        let mut start = 0;
        for (k, &q) in quotas.iter().enumerate() {
            assigned[k].extend_from_slice(&members[start..start + q]);
            counts[k][c] = q;
            start += q;
        }
    }
    let clients = assigned
        .into_iter()
        .map(|mut idx| {
            idx.sort_unstable();
            Dataset::new(
                dataset.input_dim,
                idx.into_iter().map(|i| dataset.samples[i].clone()).collect(),
            )
        })
        .collect();
    Ok(Partition { clients, counts })
}

/// Integer quotas summing to `total`: floors of `p·total`, with the leftover
/// units going to the largest fractional parts (ties to the lower index).
pub fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(total.saturating_sub(assigned)) {
        quotas[k] += 1;
    }
    quotas
}

/// Shuffles and splits off `round(fraction · n)` samples as a test set.
pub fn split_holdout(data: &Dataset, fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let mut idx = data.all_indices();
    idx.shuffle(&mut seed::rng(seed));
    let n_test = (fraction * data.len() as f64).round() as usize;
    let (test, train) = idx.split_at(n_test.min(data.len()));
    let pick = |ix: &[usize]| {
        let mut ix = ix.to_vec();
        ix.sort_unstable();
        Dataset::new(data.input_dim, ix.into_iter().map(|i| data.samples[i].clone()).collect())
    };
    (pick(train), pick(test))
}

/// How exemplars are chosen from a finished task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplayPolicy {
    /// Uniform sampling without replacement.
    Uniform,
    /// Equal per-class quotas; leftover slots go to uniformly chosen classes.
    ClassBalancedUniform,
}

/// A rule for ranking a task's samples for retention.
///
/// The buffer keeps a prefix of the returned order, so every prefix must be a
/// valid selection on its own; quota shrinking then never needs the original data.
pub trait SelectionPolicy {
    fn priority_order(&self, data: &Dataset, rng: &mut ChaCha8Rng) -> Vec<usize>;
}

impl SelectionPolicy for ReplayPolicy {
    fn priority_order(&self, data: &Dataset, rng: &mut ChaCha8Rng) -> Vec<usize> {
        match self {
            ReplayPolicy::Uniform => {
                let mut idx = data.all_indices();
                idx.shuffle(rng);
                idx
            }
            ReplayPolicy::ClassBalancedUniform => {
                let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
                for (i, s) in data.samples.iter().enumerate() {
                    groups.entry(s.label).or_default().push(i);
                }
                let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
                for g in &mut groups {
                    g.shuffle(rng);
                }
                // Round-robin over classes with a fresh class order each pass.
                let mut order = Vec::with_capacity(data.len());
                let mut pass = 0;
                while order.len() < data.len() {
                    let mut live: Vec<usize> = (0..groups.len()).filter(|&g| pass < groups[g].len()).collect();
                    live.shuffle(rng);
                    order.extend(live.into_iter().map(|g| groups[g][pass]));
                    pass += 1;
                }
                order
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayConfig {
    /// Total capacity `M`.
    pub capacity: usize,
    /// Per-task quota `N`.
    pub per_task: usize,
    pub policy: ReplayPolicy,
}

/// Fixed-capacity exemplar memory of one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    config: ReplayConfig,
    seed: u64,
    input_dim: usize,
    tasks: BTreeMap<usize, Vec<Sample>>,
}

impl ReplayBuffer {
    pub fn new(config: ReplayConfig, seed: u64) -> Self {
        Self {
            config,
            seed,
            input_dim: 0,
            tasks: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    /// Per-task quota currently in force: `min(N, floor(M / stored tasks))`.
    pub fn effective_quota(&self) -> usize {
        match self.tasks.len() {
            0 => self.config.per_task,
            n => self.config.per_task.min(self.config.capacity / n),
        }
    }

    /// Stores exemplars of a finished task and shrinks every task's share so the
    /// total stays within capacity.
    pub fn add_task(&mut self, task: usize, data: &Dataset) {
        let mut rng = seed::rng(seed::derive(self.seed, 0x7265_706c, task as u64));
        let order = self.config.policy.priority_order(data, &mut rng);
        let keep = self.config.per_task.min(order.len());
        let selected = order[..keep].iter().map(|&i| data.samples[i].clone()).collect();
        if !data.is_empty() {
            self.input_dim = data.input_dim;
        }
        self.tasks.insert(task, selected);
        let quota = self.effective_quota();
        for stored in self.tasks.values_mut() {
            stored.truncate(quota);
        }
    }

    pub fn stored_tasks(&self) -> impl Iterator<Item = (usize, &[Sample])> {
        self.tasks.iter().map(|(&t, s)| (t, s.as_slice()))
    }

    pub fn latest_task(&self) -> Option<usize> {
        self.tasks.keys().next_back().copied()
    }

    pub fn len(&self) -> usize {
        self.tasks.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The memory set: stored exemplars of every task, in task order.
    pub fn replay_set(&self) -> Dataset {
        Dataset::new(self.input_dim, self.tasks.values().flatten().cloned().collect())
    }
}

/// Builds a buffer holding exemplars of every task in `past_tasks`
/// (`(task index, data)` pairs, any order).
pub fn build_replay_set(config: ReplayConfig, seed: u64, past_tasks: &[(usize, &Dataset)]) -> ReplayBuffer {
    let mut buffer = ReplayBuffer::new(config, seed);
    let mut sorted: Vec<_> = past_tasks.to_vec();
    sorted.sort_by_key(|(t, _)| *t);
    for (t, data) in sorted {
        buffer.add_task(t, data);
    }
    buffer
}

/// Current task data followed by the buffered exemplars in task order.
pub fn merged_train_set(current: &Dataset, buffer: &ReplayBuffer) -> Dataset {
    let mut samples = current.samples.clone();
    samples.extend(buffer.tasks.values().flatten().cloned());
    Dataset::new(current.input_dim, samples)
}
