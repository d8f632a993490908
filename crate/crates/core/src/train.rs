//! Data splitting, task metrics, evaluation, and the retraining loop.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{argmax, ArchDag};
use crate::error::{Error, Result};
use crate::grad::Tape;
use crate::graph::{seeded_rng, Dataset, Graph, Task};
use crate::network::{accumulate, task_loss, DataShape, Mode, NetConfig, Network};
use crate::optim::{Adam, Optimizer, Plateau};
use crate::params::{Binder, Group};

/// Splits the training graphs 50/50 into search-train (`train`) and
/// search-val (`val`); an odd graph goes to `train`. Test is kept.
pub fn split_train_val(ds: &Dataset, seed: u64) -> Result<Dataset> {
    if ds.train.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 training graphs to hold out validation data, found {}",
            ds.train.len()
        )));
    }
    let mut idx: Vec<usize> = (0..ds.train.len()).collect();
    idx.shuffle(&mut seeded_rng(seed ^ SPLIT_STREAM));
    let half = ds.train.len().div_ceil(2);
    Ok(Dataset {
        task: ds.task,
        d_v: ds.d_v,
        d_e: ds.d_e,
        num_classes: ds.num_classes,
        train: idx[..half].iter().map(|&i| ds.train[i].clone()).collect(),
        val: idx[half..].iter().map(|&i| ds.train[i].clone()).collect(),
        test: ds.test.clone(),
    })
}

/// Keeps the split independent of the search stream for the same seed.
const SPLIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Mean of per-class accuracies over the classes present in `truth`.
pub fn average_accuracy(pred: &[usize], truth: &[usize], num_classes: usize) -> f64 {
    let mut hit = vec![0usize; num_classes];
    let mut tot = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        tot[t] += 1;
        hit[t] += usize::from(p == t);
    }
    let present: Vec<f64> = (0..num_classes).filter(|&c| tot[c] > 0).map(|c| hit[c] as f64 / tot[c] as f64).collect();
    if present.is_empty() {
        return 0.0;
    }
    present.iter().sum::<f64>() / present.len() as f64
}

pub fn overall_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

/// Binary F1 on class 1. With no positives predicted or present the
/// predictor is perfect and scores 1.
pub fn binary_f1(pred: &[usize], truth: &[usize]) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / denom as f64
}

pub fn mean_absolute_error(pred: &[f64], truth: &[f64]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / truth.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub task: Task,
    /// "aa", "f1", "mae" or "oa".
    pub metric: String,
    pub value: f64,
    /// Mean task loss over the evaluated graphs.
    pub loss: f64,
    pub graphs: usize,
}

impl Metrics {
    /// Whether `self` beats `other` on the task metric.
    pub fn better_than(&self, other: &Metrics) -> bool {
        if self.task.higher_is_better() {
            self.value > other.value
        } else {
            self.value < other.value
        }
    }
}

/// Evaluates `net` on `graphs` with running batch-norm statistics.
pub fn evaluate(net: &Network, graphs: &[Graph]) -> Result<Metrics> {
    let task = net.shape().task;
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let mut rng = seeded_rng(0);
    let (mut pred_c, mut truth_c) = (Vec::new(), Vec::new());
    let (mut pred_r, mut truth_r) = (Vec::new(), Vec::new());
    let (mut loss, mut supervised) = (0.0, 0usize);
    for g in graphs {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&net.params, &[]);
        let (out, _) = net.forward(&mut tape, &mut binder, g, Mode::Eval, &mut rng)?;
        if let Some(l) = task_loss(&mut tape, out, g, task)? {
            loss += tape.value(l)[0];
            supervised += 1;
        }
        let t = tape.tensor(out);
        match task {
            Task::NodeCls | Task::EdgeCls => {
                let labels = if task == Task::NodeCls { &g.node_labels } else { &g.edge_labels };
                let labels = labels.as_ref().ok_or_else(|| Error::MissingLabels(format!("{task:?} labels")))?;
                pred_c.extend((0..t.rows()).map(|r| argmax(t.row(r))));
                truth_c.extend_from_slice(labels);
            }
            Task::GraphCls => {
                let y = g.graph_target.ok_or_else(|| Error::MissingLabels("graph target".into()))?;
                pred_c.push(argmax(t.row(0)));
                truth_c.push(y as usize);
            }
            Task::GraphReg => {
                let y = g.graph_target.ok_or_else(|| Error::MissingLabels("graph target".into()))?;
                pred_r.push(t.data()[0]);
                truth_r.push(y);
            }
        }
    }
    let value = match task {
        Task::NodeCls => average_accuracy(&pred_c, &truth_c, net.shape().num_classes),
        Task::EdgeCls => binary_f1(&pred_c, &truth_c),
        Task::GraphCls => overall_accuracy(&pred_c, &truth_c),
        Task::GraphReg => mean_absolute_error(&pred_r, &truth_r),
    };
    Ok(Metrics {
        task,
        metric: task.metric_name().to_string(),
        value,
        loss: if supervised > 0 { loss / supervised as f64 } else { 0.0 },
        graphs: graphs.len(),
    })
}

fn d_epochs() -> usize {
    100
}
fn d_batch() -> usize {
    32
}
fn d_lr() -> f64 {
    1e-3
}
fn d_factor() -> f64 {
    0.5
}
fn d_patience() -> usize {
    20
}
fn d_dropout() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "d_factor")]
    pub plateau_factor: f64,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: d_epochs(),
            batch_size: d_batch(),
            lr: d_lr(),
            weight_decay: 0.0,
            plateau_factor: d_factor(),
            patience: d_patience(),
            dropout: d_dropout(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Schema(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be nonnegative");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie in (0, 1)");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub val: Metrics,
    pub test: Option<Metrics>,
    pub history: Vec<EpochLog>,
}

/// Retrains a fully differentiated architecture with Adam and plateau
/// halving. The returned network holds the parameters of the epoch with the
/// best validation metric; test metrics are taken there.
pub fn train_final(
    arch: &ArchDag,
    ds: &Dataset,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Network, TrainReport)> {
    cfg.validate()?;
    if !arch.is_differentiated() {
        return Err(Error::InvalidArgument("retraining needs a fully differentiated architecture".into()));
    }
    if ds.train.is_empty() || ds.val.is_empty() {
        return Err(Error::InvalidArgument("retraining needs nonempty train and val splits".into()));
    }
    let mut rng: ChaCha8Rng = seeded_rng(seed);
    let mut net = Network::new(arch.clone(), DataShape::of(ds), net_cfg.clone(), &mut rng)?;
    let mut opt = Optimizer::Adam(Adam::new(cfg.lr, (0.9, 0.999), cfg.weight_decay));
    let mut plateau = Plateau::new(cfg.plateau_factor, cfg.patience);
    let mut order: Vec<usize> = (0..ds.train.len()).collect();
    let mut best: Option<(Metrics, crate::params::ParamStore, usize)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut tl, mut tn) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let graphs: Vec<&Graph> = chunk.iter().map(|&i| &ds.train[i]).collect();
            let mode = Mode::Retrain { dropout: cfg.dropout };
            if let Some((l, n)) = accumulate(&mut net, &graphs, Group::Weight, mode, true, &mut rng)? {
                opt.step(&mut net.params, Group::Weight, 1.0 / n as f64)?;
                tl += l;
                tn += 1;
            }
        }
        let val = evaluate(&net, &ds.val)?;
        let lr = plateau.observe(val.loss, opt.lr());
        history.push(EpochLog {
            epoch,
            train_loss: (tn > 0).then(|| tl / tn as f64),
            val_loss: val.loss,
            val_metric: val.value,
            lr: opt.lr(),
        });
        opt = opt.with_lr(lr);
        if best.as_ref().is_none_or(|(b, _, _)| val.better_than(b)) {
            best = Some((val, net.params.clone(), epoch));
        }
    }
    let (val, params, best_epoch) = best.expect("at least one epoch");
    net.params = params;
    let test = if ds.test.is_empty() { None } else { Some(evaluate(&net, &ds.test)?) };
    Ok((net, TrainReport { best_epoch, val, test, history }))
}
