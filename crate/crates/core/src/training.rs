//! Training drivers for the three experiment families: whole-graph
//! classification with the recurrent model, node classification with
//! sampling-free mean/pool aggregator layers, and link prediction with
//! graph autoencoders.

use crate::autoencoder::{
    edge_probability, gae_encode, kl_on_tape, positive_weight, recon_loss_streaming, vgae_encode,
    AdjacencyTargets, AeError, LatentEmbedding,
};
use crate::data::{
    identity_features, split_edges, DataError, EdgeSplit, LabeledGraphSet, NodeDataset,
};
use crate::dense::DenseMatrix;
use crate::graph::{Graph, GraphError};
use crate::layers::{
    mean_aggregation_matrix, output_graph, rgnn_run, sage_mean_layer, sage_pool_layer, BoundParams,
    FeatureInput, GradStore, LayerError, ParamStore,
};
use crate::metrics::{average_precision, roc_auc, MetricsError};
use crate::sparse::{sorted_sum, CsrMatrix};
use crate::spectral::gcn_norm_adjacency;
use crate::tape::{Shape, Tape, TapeError, TensorId};
use crate::Activation;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("degenerate training split: {details}")]
    DegenerateSplit { details: String },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Ae(#[from] AeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dense(#[from] crate::dense::DenseError),
}

type Result<T> = std::result::Result<T, TrainError>;

// ----------------------------------------------------------------------
// Configuration and reports
// ----------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptKind {
    Sgd,
    Adam,
}

/// Hyperparameters shared by all drivers. `model` selects the
/// architecture: `rgnn` (graph classification), `sage-mean` / `sage-pool`
/// (node classification), `gae` / `vgae` (link prediction).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: String,
    pub model: String,
    /// State-transition applications for the recurrent model.
    pub transitions: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptKind,
    pub hidden: usize,
    /// Embedding width of autoencoder codes.
    pub latent: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: String::new(),
            model: "rgnn".into(),
            transitions: 4,
            epochs: 16,
            learning_rate: 0.01,
            optimizer: OptKind::Adam,
            hidden: 16,
            latent: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.hidden == 0 {
            return Err(TrainError::Config("hidden must be at least 1".into()));
        }
        if self.latent == 0 {
            return Err(TrainError::Config("latent must be at least 1".into()));
        }
        if self.transitions == 0 {
            return Err(TrainError::Config("transitions must be at least 1".into()));
        }
        const MODELS: [&str; 5] = ["rgnn", "sage-mean", "sage-pool", "gae", "vgae"];
        if !MODELS.contains(&self.model.as_str()) {
            return Err(TrainError::Config(format!(
                "unknown model {:?}, expected one of {MODELS:?}",
                self.model
            )));
        }
        Ok(())
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub dataset: String,
    pub model: String,
    pub seed: u64,
    pub epochs: usize,
    pub epoch_losses: Vec<f64>,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub wall_time_secs: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "task,dataset,model,seed,metric,value";

    /// One CSV row per metric (long format).
    pub fn csv_rows(&self) -> Vec<String> {
        self.metrics
            .iter()
            .map(|(k, v)| {
                format!(
                    "{},{},{},{},{},{}",
                    self.task, self.dataset, self.model, self.seed, k, v
                )
            })
            .collect()
    }
}

/// Aggregate over repeated runs with consecutive seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub runs: Vec<EvalReport>,
    pub mean_metrics: BTreeMap<String, f64>,
    /// Population standard deviation of each metric over the runs.
    pub std_metrics: BTreeMap<String, f64>,
}

impl RepeatSummary {
    fn from_runs(runs: Vec<EvalReport>) -> Self {
        let mut mean_metrics = BTreeMap::new();
        let mut std_metrics = BTreeMap::new();
        if let Some(first) = runs.first() {
            for key in first.metrics.keys() {
                if !runs.iter().all(|r| r.metrics.contains_key(key)) {
                    continue;
                }
                let vals: Vec<f64> = runs.iter().map(|r| r.metrics[key]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                mean_metrics.insert(key.clone(), mean);
                std_metrics.insert(key.clone(), var.sqrt());
            }
        }
        RepeatSummary {
            runs,
            mean_metrics,
            std_metrics,
        }
    }
}

/// Runs `build(base_seed + i)` for `i in 0..repeats` concurrently and
/// aggregates the per-metric mean and standard deviation.
pub fn run_repeats<F>(repeats: usize, base_seed: u64, build: F) -> Result<RepeatSummary>
where
    F: Fn(u64) -> Result<EvalReport> + Sync,
{
    if repeats == 0 {
        return Err(TrainError::Config("repeats must be at least 1".into()));
    }
    let runs: Result<Vec<EvalReport>> = (0..repeats)
        .into_par_iter()
        .map(|i| build(base_seed + i as u64))
        .collect();
    Ok(RepeatSummary::from_runs(runs?))
}

// ----------------------------------------------------------------------
// Losses
// ----------------------------------------------------------------------

/// Mean cross-entropy of row-wise softmax against integer labels,
/// restricted to rows where `mask` is true (or all rows when `mask` is
/// `None`).
pub fn cross_entropy_masked(
    tape: &mut Tape,
    logits: TensorId,
    labels: &[usize],
    mask: Option<&[bool]>,
) -> Result<TensorId> {
    let shape = tape.shape(logits);
    if labels.len() != shape.rows {
        return Err(TrainError::Config(format!(
            "{} labels for {} logit rows",
            labels.len(),
            shape.rows
        )));
    }
    if let Some(m) = mask {
        if m.len() != shape.rows {
            return Err(TrainError::Config(format!(
                "mask length {} for {} logit rows",
                m.len(),
                shape.rows
            )));
        }
    }
    let mut onehot = vec![0.0; shape.rows * shape.cols];
    let mut count = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if label >= shape.cols {
            return Err(TrainError::Config(format!(
                "label {label} outside {} classes",
                shape.cols
            )));
        }
        onehot[i * shape.cols + label] = 1.0;
        count += 1;
    }
    if count == 0 {
        return Err(TrainError::DegenerateSplit {
            details: "no labeled rows selected by the mask".into(),
        });
    }
    let probs = tape.softmax_rows(logits)?;
    let logp = tape.log(probs)?;
    let onehot_t = tape.constant(shape, onehot)?;
    let picked = tape.elem_mul(logp, onehot_t)?;
    let total = tape.sum_all(picked)?;
    Ok(tape.affine(total, -1.0 / count as f64, 0.0)?)
}

// ----------------------------------------------------------------------
// Optimizer
// ----------------------------------------------------------------------

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First-order optimizer over a parameter store. State vectors follow the
/// store's insertion order, matching [`GradStore`].
pub struct Optimizer {
    kind: OptKind,
    lr: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptKind, lr: f64, params: &ParamStore) -> Self {
        let sizes: Vec<usize> = params.iter().map(|(_, s, _)| s.len()).collect();
        let m = sizes.iter().map(|&n| vec![0.0; n]).collect();
        let v = sizes.iter().map(|&n| vec![0.0; n]).collect();
        Optimizer {
            kind,
            lr,
            t: 0,
            m,
            v,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &GradStore) -> Result<()> {
        self.t += 1;
        let mut steps: Vec<Vec<f64>> = Vec::with_capacity(self.m.len());
        for (idx, g) in grads.slices().enumerate() {
            let step = match self.kind {
                OptKind::Sgd => g.iter().map(|&gi| self.lr * gi).collect(),
                OptKind::Adam => {
                    let m = &mut self.m[idx];
                    let v = &mut self.v[idx];
                    let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                    let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                    g.iter()
                        .enumerate()
                        .map(|(k, &gi)| {
                            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gi;
                            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * gi * gi;
                            let mhat = m[k] / bc1;
                            let vhat = v[k] / bc2;
                            self.lr * mhat / (vhat.sqrt() + ADAM_EPS)
                        })
                        .collect()
                }
            };
            steps.push(step);
        }
        params.apply_steps(&steps)?;
        Ok(())
    }
}

// ----------------------------------------------------------------------
// Graph classification (recurrent model)
// ----------------------------------------------------------------------

/// Stratified 80/20 index split of a labeled corpus.
fn stratified_80_20(labels: &[usize], num_classes: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x38302f32); // "80/2"
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in by_class.iter_mut() {
        class.shuffle(&mut rng);
        let cut = (class.len() * 4) / 5;
        train.extend(&class[..cut]);
        test.extend(&class[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Trains the recurrent model for whole-graph classification: `transitions`
/// state updates, mean readout over vertices, linear output head, full-batch
/// gradient descent on cross-entropy over a stratified 80/20 split.
///
/// Errors when the training split contains fewer than two classes.
pub fn train_graph_classifier(set: &LabeledGraphSet, cfg: &TrainConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let t0 = std::time::Instant::now();
    if cfg.model != "rgnn" {
        return Err(TrainError::Config(format!(
            "graph classification uses model \"rgnn\", got {:?}",
            cfg.model
        )));
    }
    let classes = set.num_classes;
    let (train_idx, test_idx) = stratified_80_20(&set.labels, classes, cfg.seed);
    let train_classes: std::collections::HashSet<usize> =
        train_idx.iter().map(|&i| set.labels[i]).collect();
    if train_classes.len() < 2 {
        return Err(TrainError::DegenerateSplit {
            details: format!(
                "training split holds {} class(es); need at least 2",
                train_classes.len()
            ),
        });
    }

    // Corpora either carry no vertex features anywhere (shared learned
    // embedding) or a consistent feature width everywhere.
    let feat_dims: Vec<Option<usize>> = set
        .graphs
        .iter()
        .map(|g| g.vertex_features().map(|f| f.cols()))
        .collect();
    let fv = match feat_dims[0] {
        None => {
            if feat_dims.iter().any(|d| d.is_some()) {
                return Err(TrainError::Config(
                    "mixed featureless and featured graphs".into(),
                ));
            }
            cfg.hidden
        }
        Some(d) => {
            if feat_dims.iter().any(|x| *x != Some(d)) {
                return Err(TrainError::Config(
                    "inconsistent vertex feature widths across graphs".into(),
                ));
            }
            d
        }
    };
    let featureless = feat_dims[0].is_none();
    let fe = set.graphs[0].edge_features().map_or(0, |f| f.cols());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x696e6974); // "init"
    let mut params = ParamStore::new();
    if featureless {
        params.add_glorot("embed", 1, fv, &mut rng)?;
    }
    params.add_glorot("w_trans", 2 * fv + fe + cfg.hidden, cfg.hidden, &mut rng)?;
    params.add_zeros("b_trans", 1, cfg.hidden)?;
    params.add_glorot("w_out", cfg.hidden, classes, &mut rng)?;
    params.add_zeros("b_out", 1, classes)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);

    let forward = |tape: &mut Tape, bound: &BoundParams, g: &Graph| -> Result<TensorId> {
        let embed = if featureless {
            Some(bound.id("embed")?)
        } else {
            None
        };
        let run = rgnn_run(
            tape,
            g,
            bound.id("w_trans")?,
            bound.id("b_trans")?,
            embed,
            cfg.hidden,
            cfg.transitions,
            None,
        )?;
        Ok(output_graph(
            tape,
            g,
            run.h,
            bound.id("w_out")?,
            bound.id("b_out")?,
        )?)
    };

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _epoch in 0..cfg.epochs {
        let mut grads = GradStore::zeros_like(&params);
        let mut loss_sum = 0.0;
        for &gi in &train_idx {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape)?;
            let logits = forward(&mut tape, &bound, &set.graphs[gi])?;
            let loss = cross_entropy_masked(&mut tape, logits, &[set.labels[gi]], None)?;
            loss_sum += tape.value(loss)[0];
            tape.backward(loss)?;
            grads.accumulate(&tape, &bound);
        }
        grads.scale(1.0 / train_idx.len() as f64);
        opt.step(&mut params, &grads)?;
        epoch_losses.push(loss_sum / train_idx.len() as f64);
    }

    // Evaluation with the final parameters: fraction of argmax-correct
    // graphs, plus binary AUC from the class-1 probability when it applies.
    let eval_on = |idx: &[usize]| -> Result<(f64, Vec<f64>)> {
        let mut correct = 0usize;
        let mut scores = Vec::with_capacity(idx.len());
        for &gi in idx {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape)?;
            let logits = forward(&mut tape, &bound, &set.graphs[gi])?;
            let probs = softmax_row(tape.value(logits));
            let arg = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            if arg == set.labels[gi] {
                correct += 1;
            }
            scores.push(probs.get(1).copied().unwrap_or(0.0));
        }
        Ok((correct as f64 / idx.len() as f64, scores))
    };

    let mut metrics = BTreeMap::new();
    let (test_acc, test_scores) = eval_on(&test_idx)?;
    let (train_acc, _) = eval_on(&train_idx)?;
    metrics.insert("test_accuracy".into(), test_acc);
    metrics.insert("train_accuracy".into(), train_acc);
    if classes == 2 {
        let labels01: Vec<bool> = test_idx.iter().map(|&i| set.labels[i] == 1).collect();
        if labels01.iter().any(|&b| b) && labels01.iter().any(|&b| !b) {
            metrics.insert("test_auc".into(), roc_auc(&test_scores, &labels01)?);
        }
    }

    Ok(EvalReport {
        task: "graph-classification".into(),
        dataset: set.name.clone(),
        model: cfg.model.clone(),
        seed: cfg.seed,
        epochs: cfg.epochs,
        epoch_losses,
        metrics,
        notes: vec![format!(
            "train {} / test {} graphs",
            train_idx.len(),
            test_idx.len()
        )],
        wall_time_secs: t0.elapsed().as_secs_f64(),
    })
}

// ----------------------------------------------------------------------
// Node classification (mean / pool aggregator layers)
// ----------------------------------------------------------------------

/// Neighbor-mean of sparse features: row i of the result is the average of
/// `x`'s rows over i's neighbors. Products are accumulated in sorted order
/// so the result is independent of neighbor enumeration order.
fn mean_neighbor_features(g: &Graph, x: &CsrMatrix) -> CsrMatrix {
    let n = g.num_vertices();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        let nbrs = g.neighbors(i).expect("vertex index in range");
        if nbrs.is_empty() {
            continue;
        }
        let inv = 1.0 / nbrs.len() as f64;
        let mut acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for &j in nbrs {
            for (c, v) in x.row_entries(j) {
                acc.entry(c).or_default().push(v * inv);
            }
        }
        for (c, mut vals) in acc {
            let s = sorted_sum(&mut vals);
            if s != 0.0 {
                triplets.push((i, c, s));
            }
        }
    }
    CsrMatrix::from_triplets(n, x.cols(), &triplets).expect("neighbor means are finite")
}

fn node_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    pool: bool,
    g: &Graph,
    x: &Arc<CsrMatrix>,
    mean_op: &Arc<CsrMatrix>,
    neighbor_mean: &Arc<CsrMatrix>,
) -> Result<TensorId> {
    let h1 = if pool {
        sage_pool_layer(
            tape,
            g,
            FeatureInput::Sparse(x),
            bound.id("w_pool1")?,
            bound.id("b_pool1")?,
            bound.id("w_self1")?,
            bound.id("w_neigh1")?,
            Activation::Relu,
        )?
    } else {
        sage_mean_layer(
            tape,
            mean_op,
            FeatureInput::Sparse(x),
            Some(neighbor_mean),
            bound.id("w_self1")?,
            bound.id("w_neigh1")?,
            Activation::Relu,
        )?
    };
    let logits = if pool {
        sage_pool_layer(
            tape,
            g,
            FeatureInput::Dense(h1),
            bound.id("w_pool2")?,
            bound.id("b_pool2")?,
            bound.id("w_self2")?,
            bound.id("w_neigh2")?,
            Activation::Identity,
        )?
    } else {
        sage_mean_layer(
            tape,
            mean_op,
            FeatureInput::Dense(h1),
            None,
            bound.id("w_self2")?,
            bound.id("w_neigh2")?,
            Activation::Identity,
        )?
    };
    Ok(logits)
}

/// Trains a two-layer aggregator network (`sage-mean` or `sage-pool`) for
/// transductive node classification with cross-entropy on the training
/// mask. Reports accuracy on the validation and test masks.
pub fn train_node_classifier(ds: &NodeDataset, cfg: &TrainConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let t0 = std::time::Instant::now();
    let pool = match cfg.model.as_str() {
        "sage-mean" => false,
        "sage-pool" => true,
        other => {
            return Err(TrainError::Config(format!(
                "node classification uses model \"sage-mean\" or \"sage-pool\", got {other:?}"
            )))
        }
    };
    ds.validate()?;
    let g = &ds.graph;
    let n = g.num_vertices();
    let classes = ds.num_classes;
    if classes < 2 {
        return Err(TrainError::DegenerateSplit {
            details: "need at least 2 classes".into(),
        });
    }
    if !ds.train_mask.iter().any(|&b| b) {
        return Err(TrainError::DegenerateSplit {
            details: "empty training mask".into(),
        });
    }

    let x: Arc<CsrMatrix> = Arc::new(match g.vertex_features() {
        Some(f) => CsrMatrix::from_dense(f),
        None => identity_features(n),
    });
    let f_dim = x.cols();
    let mean_op = Arc::new(mean_aggregation_matrix(g));
    let neighbor_mean = Arc::new(mean_neighbor_features(g, &x));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x696e6974);
    let mut params = ParamStore::new();
    let h = cfg.hidden;
    params.add_glorot("w_self1", f_dim, h, &mut rng)?;
    params.add_glorot("w_neigh1", if pool { h } else { f_dim }, h, &mut rng)?;
    if pool {
        params.add_glorot("w_pool1", f_dim, h, &mut rng)?;
        params.add_zeros("b_pool1", 1, h)?;
    }
    params.add_glorot("w_self2", h, classes, &mut rng)?;
    params.add_glorot("w_neigh2", h, classes, &mut rng)?;
    if pool {
        params.add_glorot("w_pool2", h, h, &mut rng)?;
        params.add_zeros("b_pool2", 1, h)?;
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape)?;
        let logits = node_forward(&mut tape, &bound, pool, g, &x, &mean_op, &neighbor_mean)?;
        let loss = cross_entropy_masked(&mut tape, logits, &ds.labels, Some(&ds.train_mask))?;
        epoch_losses.push(tape.value(loss)[0]);
        tape.backward(loss)?;
        let mut grads = GradStore::zeros_like(&params);
        grads.accumulate(&tape, &bound);
        opt.step(&mut params, &grads)?;
    }

    // Final forward pass for evaluation.
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let logits = node_forward(&mut tape, &bound, pool, g, &x, &mean_op, &neighbor_mean)?;
    let lv = tape.value(logits);
    let mask_accuracy = |mask: &[bool]| -> Option<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let row = &lv[i * classes..(i + 1) * classes];
            let arg = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k)
                .unwrap();
            correct += usize::from(arg == ds.labels[i]);
            total += 1;
        }
        (total > 0).then(|| correct as f64 / total as f64)
    };

    let mut metrics = BTreeMap::new();
    if let Some(a) = mask_accuracy(&ds.train_mask) {
        metrics.insert("train_accuracy".into(), a);
    }
    if let Some(a) = mask_accuracy(&ds.val_mask) {
        metrics.insert("val_accuracy".into(), a);
    }
    if let Some(a) = mask_accuracy(&ds.test_mask) {
        metrics.insert("test_accuracy".into(), a);
    }

    Ok(EvalReport {
        task: "node-classification".into(),
        dataset: ds.name.clone(),
        model: cfg.model.clone(),
        seed: cfg.seed,
        epochs: cfg.epochs,
        epoch_losses,
        metrics,
        notes: vec![format!("hidden {h} features {f_dim}")],
        wall_time_secs: t0.elapsed().as_secs_f64(),
    })
}

// ----------------------------------------------------------------------
// Link prediction (graph autoencoders)
// ----------------------------------------------------------------------

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller transform.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn pair_scores(
    z: &DenseMatrix,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
) -> (Vec<f64>, Vec<bool>) {
    let mut scores = Vec::with_capacity(pos.len() + neg.len());
    let mut labels = Vec::with_capacity(pos.len() + neg.len());
    for &(u, v) in pos {
        scores.push(edge_probability(z, u, v));
        labels.push(true);
    }
    for &(u, v) in neg {
        scores.push(edge_probability(z, u, v));
        labels.push(false);
    }
    (scores, labels)
}

/// Trains a graph autoencoder (`gae`) or its variational counterpart
/// (`vgae`) on an 85/5/10 edge split and scores held-out positives against
/// an equal number of sampled non-edges (drawn once per split seed). For
/// the variational model, evaluation scores use the Gaussian means.
/// Returns the report together with the final embeddings.
pub fn train_link_predictor(g: &Graph, cfg: &TrainConfig) -> Result<(EvalReport, LatentEmbedding)> {
    cfg.validate()?;
    let t0 = std::time::Instant::now();
    let variational = match cfg.model.as_str() {
        "gae" => false,
        "vgae" => true,
        other => {
            return Err(TrainError::Config(format!(
                "link prediction uses model \"gae\" or \"vgae\", got {other:?}"
            )))
        }
    };
    let split: EdgeSplit = split_edges(g, (0.85, 0.05, 0.10), cfg.seed)?;
    if split.test_pos.is_empty() {
        return Err(TrainError::DegenerateSplit {
            details: "test split holds no edges".into(),
        });
    }
    let n = g.num_vertices();
    let train_g = &split.train_graph;
    let anorm = Arc::new(gcn_norm_adjacency(train_g));
    let x: Arc<CsrMatrix> = Arc::new(match g.vertex_features() {
        Some(f) => CsrMatrix::from_dense(f),
        None => identity_features(n),
    });
    let f_dim = x.cols();
    let targets = Arc::new(AdjacencyTargets::from_edges(n, &split.train_edges));
    let pos_weight = positive_weight(n, targets.positive_count())?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x696e6974);
    let mut params = ParamStore::new();
    params.add_glorot("w1", f_dim, cfg.hidden, &mut rng)?;
    if variational {
        params.add_glorot("w_mu", cfg.hidden, cfg.latent, &mut rng)?;
        params.add_glorot("w_logvar", cfg.hidden, cfg.latent, &mut rng)?;
    } else {
        params.add_glorot("w2", cfg.hidden, cfg.latent, &mut rng)?;
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape)?;
        let loss = if variational {
            let noise_vals: Vec<f64> = (0..n * cfg.latent)
                .map(|_| standard_normal(&mut rng))
                .collect();
            let noise = tape.constant(Shape::new(n, cfg.latent), noise_vals)?;
            let heads = vgae_encode(
                &mut tape,
                &anorm,
                FeatureInput::Sparse(&x),
                bound.id("w1")?,
                bound.id("w_mu")?,
                bound.id("w_logvar")?,
                noise,
            )?;
            let recon = recon_loss_streaming(&mut tape, heads.z, &targets, pos_weight)?;
            let kl = kl_on_tape(&mut tape, heads.mu, heads.logvar)?;
            tape.add(recon, kl)?
        } else {
            let z = gae_encode(
                &mut tape,
                &anorm,
                FeatureInput::Sparse(&x),
                bound.id("w1")?,
                bound.id("w2")?,
            )?;
            recon_loss_streaming(&mut tape, z, &targets, pos_weight)?
        };
        epoch_losses.push(tape.value(loss)[0]);
        tape.backward(loss)?;
        let mut grads = GradStore::zeros_like(&params);
        grads.accumulate(&tape, &bound);
        opt.step(&mut params, &grads)?;
    }

    // Final embeddings; the variational model is scored at its means.
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let embedding = if variational {
        let noise = tape.constant(Shape::new(n, cfg.latent), vec![0.0; n * cfg.latent])?;
        let heads = vgae_encode(
            &mut tape,
            &anorm,
            FeatureInput::Sparse(&x),
            bound.id("w1")?,
            bound.id("w_mu")?,
            bound.id("w_logvar")?,
            noise,
        )?;
        let mu = DenseMatrix::from_vec(n, cfg.latent, tape.value(heads.mu).to_vec())?;
        let logvar = DenseMatrix::from_vec(n, cfg.latent, tape.value(heads.logvar).to_vec())?;
        LatentEmbedding {
            z: mu.clone(),
            mu: Some(mu),
            logvar: Some(logvar),
        }
    } else {
        let z = gae_encode(
            &mut tape,
            &anorm,
            FeatureInput::Sparse(&x),
            bound.id("w1")?,
            bound.id("w2")?,
        )?;
        let z = DenseMatrix::from_vec(n, cfg.latent, tape.value(z).to_vec())?;
        LatentEmbedding {
            z,
            mu: None,
            logvar: None,
        }
    };

    let mut metrics = BTreeMap::new();
    let (test_scores, test_labels) = pair_scores(&embedding.z, &split.test_pos, &split.test_neg);
    metrics.insert("test_auc".into(), roc_auc(&test_scores, &test_labels)?);
    metrics.insert(
        "test_ap".into(),
        average_precision(&test_scores, &test_labels)?,
    );
    if !split.val_pos.is_empty() {
        let (val_scores, val_labels) = pair_scores(&embedding.z, &split.val_pos, &split.val_neg);
        metrics.insert("val_auc".into(), roc_auc(&val_scores, &val_labels)?);
        metrics.insert(
            "val_ap".into(),
            average_precision(&val_scores, &val_labels)?,
        );
    }
    metrics.insert("final_loss".into(), *epoch_losses.last().unwrap());

    let report = EvalReport {
        task: "link-prediction".into(),
        dataset: cfg.dataset.clone(),
        model: cfg.model.clone(),
        seed: cfg.seed,
        epochs: cfg.epochs,
        epoch_losses,
        metrics,
        notes: vec![format!(
            "train {} edges, val {} pos, test {} pos",
            split.train_edges.len(),
            split.val_pos.len(),
            split.test_pos.len()
        )],
        wall_time_secs: t0.elapsed().as_secs_f64(),
    };
    Ok((report, embedding))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_structural_classes, synth_two_clique, two_clique_labels};

    fn two_clique_node_dataset(seed: u64) -> NodeDataset {
        let g = synth_two_clique(8, 0.05, seed).unwrap();
        let labels = two_clique_labels(8);
        let n = g.num_vertices();
        // Two labeled vertices per block train, rest split val/test.
        let mut train = vec![false; n];
        let mut val = vec![false; n];
        let mut test = vec![false; n];
        for i in 0..n {
            match i % 8 {
                0 | 1 => train[i] = true,
                2 => val[i] = true,
                _ => test[i] = true,
            }
        }
        NodeDataset {
            graph: g,
            labels,
            num_classes: 2,
            train_mask: train,
            val_mask: val,
            test_mask: test,
            name: "two-clique".into(),
            stats: Default::default(),
        }
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_classes() {
        let mut tape = Tape::new();
        let logits = tape.constant(Shape::new(2, 4), vec![0.0; 8]).unwrap();
        let loss = cross_entropy_masked(&mut tape, logits, &[1, 3], None).unwrap();
        let expect = (4.0f64).ln();
        assert!((tape.value(loss)[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_mask_selects_rows() {
        let mut tape = Tape::new();
        // Row 0 predicts its label almost surely; row 1 is far off.
        let logits = tape
            .constant(Shape::new(2, 2), vec![10.0, -10.0, 10.0, -10.0])
            .unwrap();
        let all = cross_entropy_masked(&mut tape, logits, &[0, 1], None).unwrap();
        let only0 = cross_entropy_masked(&mut tape, logits, &[0, 1], Some(&[true, false])).unwrap();
        assert!(tape.value(only0)[0] < 1e-6);
        assert!(tape.value(all)[0] > 5.0);
    }

    #[test]
    fn cross_entropy_empty_mask_is_error() {
        let mut tape = Tape::new();
        let logits = tape.constant(Shape::new(2, 2), vec![0.0; 4]).unwrap();
        let r = cross_entropy_masked(&mut tape, logits, &[0, 1], Some(&[false, false]));
        assert!(matches!(r, Err(TrainError::DegenerateSplit { .. })));
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut params = ParamStore::new();
        params.add_zeros("p", 1, 2).unwrap();
        params.set_values("p", vec![1.0, -2.0]).unwrap();
        let mut opt = Optimizer::new(OptKind::Sgd, 0.1, &params);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape).unwrap();
        let p = bound.id("p").unwrap();
        let sq = tape.elem_mul(p, p).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        let mut grads = GradStore::zeros_like(&params);
        grads.accumulate(&tape, &bound);
        opt.step(&mut params, &grads).unwrap();
        // p - lr * 2p = 0.8 p
        assert_eq!(params.values("p").unwrap(), &[0.8, -1.6]);
    }

    #[test]
    fn adam_first_step_size_is_learning_rate() {
        // With fresh state, |step| = lr * g/sqrt(g^2) = lr (up to eps).
        let mut params = ParamStore::new();
        params.add_zeros("p", 1, 2).unwrap();
        params.set_values("p", vec![5.0, -3.0]).unwrap();
        let mut opt = Optimizer::new(OptKind::Adam, 0.01, &params);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape).unwrap();
        let p = bound.id("p").unwrap();
        let sq = tape.elem_mul(p, p).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        let mut grads = GradStore::zeros_like(&params);
        grads.accumulate(&tape, &bound);
        opt.step(&mut params, &grads).unwrap();
        let v = params.values("p").unwrap();
        assert!((v[0] - (5.0 - 0.01)).abs() < 1e-6);
        assert!((v[1] - (-3.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn graph_classifier_single_class_split_errors() {
        let graphs = vec![
            crate::graph::Graph::undirected(3, &[(0, 1), (1, 2)]).unwrap(),
            crate::graph::Graph::undirected(3, &[(0, 1)]).unwrap(),
        ];
        let set = LabeledGraphSet::new(graphs, vec![0, 0], "mono").unwrap();
        let cfg = TrainConfig {
            dataset: "mono".into(),
            epochs: 1,
            ..Default::default()
        };
        let r = train_graph_classifier(&set, &cfg);
        assert!(matches!(r, Err(TrainError::DegenerateSplit { .. })));
    }

    #[test]
    fn graph_classifier_loss_decreases_on_structural_classes() {
        let set = synth_structural_classes(24, 5).unwrap();
        let cfg = TrainConfig {
            dataset: "structural".into(),
            epochs: 8,
            transitions: 3,
            hidden: 8,
            seed: 1,
            ..Default::default()
        };
        let report = train_graph_classifier(&set, &cfg).unwrap();
        assert_eq!(report.epoch_losses.len(), 8);
        let first = report.epoch_losses.first().unwrap();
        let last = report.epoch_losses.last().unwrap();
        assert!(last < first, "loss should decrease: {first} -> {last}");
        assert!(report.metrics.contains_key("test_accuracy"));
        assert!(report.metrics.contains_key("test_auc"));
    }

    #[test]
    fn graph_classifier_is_seed_deterministic() {
        let set = synth_structural_classes(16, 9).unwrap();
        let cfg = TrainConfig {
            dataset: "structural".into(),
            epochs: 3,
            transitions: 2,
            hidden: 8,
            seed: 4,
            ..Default::default()
        };
        let a = train_graph_classifier(&set, &cfg).unwrap();
        let b = train_graph_classifier(&set, &cfg).unwrap();
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn node_classifier_separates_two_cliques() {
        let ds = two_clique_node_dataset(3);
        for model in ["sage-mean", "sage-pool"] {
            let cfg = TrainConfig {
                dataset: "two-clique".into(),
                model: model.into(),
                epochs: 60,
                hidden: 8,
                seed: 2,
                ..Default::default()
            };
            let report = train_node_classifier(&ds, &cfg).unwrap();
            let acc = report.metrics["test_accuracy"];
            assert!(
                acc > 0.9,
                "{model}: two dense blocks should separate, got {acc}"
            );
            let first = report.epoch_losses.first().unwrap();
            let last = report.epoch_losses.last().unwrap();
            assert!(last < first);
        }
    }

    #[test]
    fn node_classifier_rejects_wrong_model() {
        let ds = two_clique_node_dataset(1);
        let cfg = TrainConfig {
            model: "rgnn".into(),
            epochs: 1,
            ..Default::default()
        };
        assert!(matches!(
            train_node_classifier(&ds, &cfg),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn link_predictor_beats_chance_on_two_cliques() {
        let g = synth_two_clique(12, 0.05, 7).unwrap();
        for model in ["gae", "vgae"] {
            let cfg = TrainConfig {
                dataset: "two-clique".into(),
                model: model.into(),
                epochs: 120,
                hidden: 16,
                latent: 8,
                learning_rate: 0.02,
                seed: 3,
                ..Default::default()
            };
            let (report, emb) = train_link_predictor(&g, &cfg).unwrap();
            let auc = report.metrics["test_auc"];
            assert!(
                auc > 0.9,
                "{model}: block structure should be easy, got AUC {auc}"
            );
            assert_eq!(emb.z.rows(), g.num_vertices());
            assert_eq!(emb.z.cols(), 8);
            if model == "vgae" {
                assert!(emb.mu.is_some() && emb.logvar.is_some());
            }
        }
    }

    #[test]
    fn repeats_aggregate_mean_and_std() {
        let set = synth_structural_classes(16, 2).unwrap();
        let summary = run_repeats(2, 10, |seed| {
            let cfg = TrainConfig {
                dataset: "structural".into(),
                epochs: 2,
                transitions: 2,
                hidden: 4,
                seed,
                ..Default::default()
            };
            train_graph_classifier(&set, &cfg)
        })
        .unwrap();
        assert_eq!(summary.runs.len(), 2);
        assert!(summary.mean_metrics.contains_key("test_accuracy"));
        let m = summary.mean_metrics["test_accuracy"];
        let hand = (summary.runs[0].metrics["test_accuracy"]
            + summary.runs[1].metrics["test_accuracy"])
            / 2.0;
        assert!((m - hand).abs() < 1e-15);
        assert!(summary.std_metrics["test_accuracy"] >= 0.0);
    }

    #[test]
    fn config_validation_names_problems() {
        let bad = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        match bad.validate() {
            Err(TrainError::Config(msg)) => assert!(msg.contains("epochs")),
            other => panic!("unexpected {other:?}"),
        }
        let bad = TrainConfig {
            model: "mlp".into(),
            ..Default::default()
        };
        match bad.validate() {
            Err(TrainError::Config(msg)) => assert!(msg.contains("mlp")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_rows_long_format() {
        let mut metrics = BTreeMap::new();
        metrics.insert("test_accuracy".to_string(), 0.75);
        let r = EvalReport {
            task: "node-classification".into(),
            dataset: "toy".into(),
            model: "sage-mean".into(),
            seed: 5,
            epochs: 3,
            epoch_losses: vec![],
            metrics,
            notes: vec![],
            wall_time_secs: 0.0,
        };
        assert_eq!(
            r.csv_rows(),
            vec!["node-classification,toy,sage-mean,5,test_accuracy,0.75"]
        );
    }
}
