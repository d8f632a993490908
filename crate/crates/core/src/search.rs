//! Network differentiation: bilevel search over mixture links, progressive
//! fixing, random sampling, discretization, and the proliferation loop.

use std::cmp::Ordering;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{argmax, canonicalize, softmax, ArchDag, Link, LinkOp, Vertex};
use crate::error::{Error, Result};
use crate::graph::{seeded_rng, Dataset, Graph};
use crate::network::{accumulate, DataShape, Mode, NetConfig, Network, Objective};
use crate::ops::{NodeOp, OpKind, RelOp, NUM_OPS};
use crate::optim::{cosine_lr, Adam, Optimizer, Sgd};
use crate::params::Group;
use crate::proliferate::{audit_iteration, divide, init_arch, AuditTrail};
use crate::train::split_train_val;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    DartsFirstOrder,
    SgasLite,
    Random,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::DartsFirstOrder => "darts_first_order",
            StrategyKind::SgasLite => "sgas_lite",
            StrategyKind::Random => "random",
        }
    }
}

fn d_warmup() -> usize {
    10
}
fn d_every() -> usize {
    5
}
fn d_lr_w() -> f64 {
    0.025
}
fn d_momentum() -> f64 {
    0.9
}
fn d_wd_w() -> f64 {
    3e-4
}
fn d_lr_alpha() -> f64 {
    3e-4
}
fn d_betas() -> (f64, f64) {
    (0.5, 0.999)
}
fn d_wd_alpha() -> f64 {
    1e-3
}
fn d_epochs() -> usize {
    25
}
fn d_batch() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    #[serde(default = "d_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "d_every")]
    pub decide_every: usize,
    #[serde(default = "d_lr_w")]
    pub lr_w: f64,
    #[serde(default = "d_momentum")]
    pub momentum_w: f64,
    #[serde(default = "d_wd_w")]
    pub wd_w: f64,
    #[serde(default = "d_lr_alpha")]
    pub lr_alpha: f64,
    #[serde(default = "d_betas")]
    pub betas_alpha: (f64, f64),
    #[serde(default = "d_wd_alpha")]
    pub wd_alpha: f64,
    /// Reference epoch count the warmup and decision interval are stated for.
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    /// Graphs per optimizer step (gradients are averaged).
    #[serde(default = "d_batch")]
    pub batch_size: usize,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            warmup_epochs: d_warmup(),
            decide_every: d_every(),
            lr_w: d_lr_w(),
            momentum_w: d_momentum(),
            wd_w: d_wd_w(),
            lr_alpha: d_lr_alpha(),
            betas_alpha: d_betas(),
            wd_alpha: d_wd_alpha(),
            epochs: d_epochs(),
            batch_size: d_batch(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Schema(m));
        if self.warmup_epochs >= self.epochs {
            return bad(format!("warmup_epochs {} must be below epochs {}", self.warmup_epochs, self.epochs));
        }
        if self.decide_every == 0 {
            return bad("decide_every must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        for (name, v) in [("lr_w", self.lr_w), ("lr_alpha", self.lr_alpha)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a nonnegative number"));
            }
        }
        for (name, v) in [
            ("momentum_w", self.momentum_w),
            ("betas_alpha.0", self.betas_alpha.0),
            ("betas_alpha.1", self.betas_alpha.1),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    /// Warmup and decision interval for a phase of `epochs` epochs. Shorter
    /// phases shrink both proportionally; longer ones keep them.
    pub fn schedule(&self, epochs: usize) -> (usize, usize) {
        if epochs >= self.epochs {
            return (self.warmup_epochs, self.decide_every);
        }
        let f = epochs as f64 / self.epochs as f64;
        let warmup = ((self.warmup_epochs as f64 * f).round() as usize).min(epochs.saturating_sub(1));
        let every = ((self.decide_every as f64 * f).round() as usize).max(1);
        (warmup, every)
    }

    pub fn optimizers(&self) -> Bilevel {
        Bilevel {
            opt_w: Optimizer::Sgd(Sgd { lr: self.lr_w, momentum: self.momentum_w, weight_decay: self.wd_w }),
            opt_a: Optimizer::Adam(Adam::new(self.lr_alpha, self.betas_alpha, self.wd_alpha)),
        }
    }
}

/// Optimizers for operation weights and architecture parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bilevel {
    pub opt_w: Optimizer,
    pub opt_a: Optimizer,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub train: Option<f64>,
    pub val: Option<f64>,
}

/// First-order bilevel step: alphas descend the validation loss with weights
/// frozen, then weights descend the training loss with alphas frozen.
pub fn bilevel_step<O: Objective>(
    obj: &mut O,
    opts: &Bilevel,
    train: &[&Graph],
    val: &[&Graph],
    rng: &mut ChaCha8Rng,
) -> Result<StepLosses> {
    let mut out = StepLosses::default();
    if !obj.store().group_ids(Group::Arch).is_empty() {
        if let Some((loss, count)) = accumulate(obj, val, Group::Arch, Mode::Search, false, rng)? {
            opts.opt_a.step(obj.store_mut(), Group::Arch, 1.0 / count as f64)?;
            out.val = Some(loss);
        }
    }
    if obj.store().group_ids(Group::Weight).is_empty() {
        return Ok(out);
    }
    if let Some((loss, count)) = accumulate(obj, train, Group::Weight, Mode::Search, true, rng)? {
        opts.opt_w.step(obj.store_mut(), Group::Weight, 1.0 / count as f64)?;
        out.train = Some(loss);
    }
    Ok(out)
}

/// One line of the search log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchLog {
    pub iteration: usize,
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub decided: Vec<String>,
}

pub fn link_id(space: &str, src: Vertex, dst: Vertex) -> String {
    format!("{space}:{src}->{dst}")
}

fn certainty(alpha: &[f64]) -> f64 {
    softmax(alpha).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Highest certainty first; ties to the lowest `(src, dst)`.
fn by_certainty<K>(a: &Link<K>, ca: f64, b: &Link<K>, cb: f64) -> Ordering {
    cb.partial_cmp(&ca).unwrap_or(Ordering::Equal).then((a.src, a.dst).cmp(&(b.src, b.dst)))
}

fn decide_space<K: OpKind>(links: &mut Vec<Link<K>>) -> Vec<String> {
    let mut best: Option<(usize, f64)> = None;
    for (i, l) in links.iter().enumerate() {
        let Some(a) = l.op.alpha() else { continue };
        let c = certainty(a);
        if best.is_none_or(|(j, cj)| by_certainty(l, c, &links[j], cj) == Ordering::Less) {
            best = Some((i, c));
        }
    }
    let Some((i, _)) = best else { return Vec::new() };
    let a = links[i].op.alpha().expect("mixture").to_vec();
    links[i].op = LinkOp::Fixed(K::ALL[argmax(&a)]);
    let (src, dst) = (links[i].src, links[i].dst);
    let mut decided = vec![link_id(K::SPACE.name(), src, dst)];
    // a vertex with two fixed inputs is complete; its other candidates go
    let fixed = links.iter().filter(|l| l.dst == dst && !l.op.is_mixture()).count();
    if fixed >= 2 {
        links.retain(|l| {
            let drop = l.dst == dst && l.op.is_mixture();
            if drop {
                decided.push(format!("{}(dropped)", link_id(K::SPACE.name(), l.src, l.dst)));
            }
            !drop
        });
    }
    decided
}

/// Freezes the most certain mixture link of each space to its argmax
/// operation. Returns the new architecture and the ids of decided links.
pub fn sgas_lite_decide(arch: &ArchDag) -> (ArchDag, Vec<String>) {
    let mut out = arch.clone();
    let mut decided = decide_space(&mut out.node_links);
    if out.relation_space {
        decided.extend(decide_space(&mut out.rel_links));
    }
    (out, decided)
}

fn best_non_zero<K: OpKind>(alpha: &[f64]) -> f64 {
    let p = softmax(alpha);
    K::ALL.iter().filter(|k| !k.is_zero()).map(|k| p[k.index()]).fold(f64::NEG_INFINITY, f64::max)
}

fn inner_targets<K>(links: &[Link<K>]) -> Vec<Vertex> {
    let mut ts: Vec<Vertex> = links.iter().map(|l| l.dst).collect();
    ts.sort_unstable();
    ts.dedup();
    ts
}

fn discretize_space<K: OpKind>(links: &mut Vec<Link<K>>) {
    let mut out = Vec::with_capacity(links.len());
    for t in inner_targets(links) {
        let fixed: Vec<_> = links.iter().filter(|l| l.dst == t && !l.op.is_mixture()).cloned().collect();
        let mut mix: Vec<(Link<K>, f64)> = links
            .iter()
            .filter(|l| l.dst == t && l.op.is_mixture())
            .map(|l| (l.clone(), best_non_zero::<K>(l.op.alpha().expect("mixture"))))
            .collect();
        mix.sort_by(|(a, ca), (b, cb)| by_certainty(a, *ca, b, *cb));
        let keep = 2usize.saturating_sub(fixed.len()).min(mix.len());
        out.extend(fixed);
        for (mut l, _) in mix.into_iter().take(keep) {
            let k = argmax(l.op.alpha().expect("mixture"));
            l.op = LinkOp::Fixed(K::ALL[k]);
            out.push(l);
        }
    }
    canonicalize(&mut out);
    *links = out;
}

/// Final discretization: each vertex keeps its best mixture links (ranked by
/// their strongest non-ZERO probability) up to two inputs, each set to its
/// argmax operation.
pub fn discretize(arch: &ArchDag) -> ArchDag {
    let mut out = arch.clone();
    discretize_space(&mut out.node_links);
    if out.relation_space {
        discretize_space(&mut out.rel_links);
    }
    out
}

fn random_space<K: OpKind>(links: &mut Vec<Link<K>>, rng: &mut ChaCha8Rng) {
    let mut out = Vec::with_capacity(links.len());
    for t in inner_targets(links) {
        let fixed: Vec<_> = links.iter().filter(|l| l.dst == t && !l.op.is_mixture()).cloned().collect();
        let mix: Vec<_> = links.iter().filter(|l| l.dst == t && l.op.is_mixture()).cloned().collect();
        let keep = 2usize.saturating_sub(fixed.len()).min(mix.len());
        let mut chosen = index::sample(rng, mix.len(), keep).into_vec();
        chosen.sort_unstable();
        out.extend(fixed);
        for i in chosen {
            let mut l = mix[i].clone();
            l.op = LinkOp::Fixed(K::ALL[rng.random_range(0..NUM_OPS)]);
            out.push(l);
        }
    }
    canonicalize(&mut out);
    *links = out;
}

/// Uniformly samples the kept links and their operations; no training.
pub fn random_strategy(arch: &ArchDag, rng: &mut ChaCha8Rng) -> ArchDag {
    let mut out = arch.clone();
    random_space(&mut out.node_links, rng);
    if out.relation_space {
        random_space(&mut out.rel_links, rng);
    }
    out
}

/// A supernet where every inner vertex draws mixture links from both inputs
/// and from every earlier vertex.
pub fn global_supernet(n: usize, d_v: usize, d_e: usize, relation_space: bool) -> ArchDag {
    let mut node_links = Vec::new();
    let mut rel_links = Vec::new();
    for t in 1..=n {
        let srcs = [Vertex::In0, Vertex::In1].into_iter().chain((1..t).map(Vertex::Inner));
        for s in srcs {
            node_links.push(Link::<NodeOp>::mixture(s, Vertex::Inner(t)));
            if relation_space {
                rel_links.push(Link::<RelOp>::mixture(s, Vertex::Inner(t)));
            }
        }
    }
    let mut arch = ArchDag {
        n_vertices: n,
        order: (1..=n).collect(),
        cell_mode: false,
        d_v,
        d_e,
        relation_space,
        node_links,
        rel_links,
    };
    arch.canonicalize();
    arch
}

/// Resolves every mixture of `arch` with the configured strategy, training a
/// freshly initialized network for `epochs` epochs on `data.train`
/// (weights) and `data.val` (alphas).
#[allow(clippy::too_many_arguments)]
pub fn differentiate(
    arch: &ArchDag,
    data: &Dataset,
    net_cfg: &NetConfig,
    cfg: &StrategyConfig,
    epochs: usize,
    iteration: usize,
    rng: &mut ChaCha8Rng,
    sink: &mut dyn FnMut(&SearchLog),
) -> Result<ArchDag> {
    cfg.validate()?;
    if arch.is_differentiated() {
        return Ok(arch.clone());
    }
    if cfg.kind == StrategyKind::Random {
        return Ok(random_strategy(arch, rng));
    }
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::InvalidArgument("search needs nonempty train and val splits".into()));
    }
    let mut net = Network::new(arch.clone(), DataShape::of(data), net_cfg.clone(), rng)?;
    let mut opts = cfg.optimizers();
    let (warmup, every) = cfg.schedule(epochs);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let val: Vec<&Graph> = data.val.iter().collect();
    let val_batches: Vec<&[&Graph]> = val.chunks(cfg.batch_size).collect();
    for epoch in 0..epochs {
        opts.opt_w = opts.opt_w.with_lr(cosine_lr(epoch, epochs, cfg.lr_w));
        order.shuffle(rng);
        let (mut tl, mut tn, mut vl, mut vn) = (0.0, 0usize, 0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let train: Vec<&Graph> = chunk.iter().map(|&i| &data.train[i]).collect();
            let step = bilevel_step(&mut net, &opts, &train, val_batches[b % val_batches.len()], rng)?;
            if let Some(l) = step.train {
                tl += l;
                tn += 1;
            }
            if let Some(l) = step.val {
                vl += l;
                vn += 1;
            }
        }
        let mut decided = Vec::new();
        let done = epoch + 1;
        if cfg.kind == StrategyKind::SgasLite && done > warmup && (done - warmup) % every == 0 {
            let (next, d) = sgas_lite_decide(&net.arch_with_alphas());
            if !d.is_empty() {
                net.set_arch(next, rng)?;
                decided = d;
            }
        }
        sink(&SearchLog {
            iteration,
            epoch,
            train_loss: (tn > 0).then(|| tl / tn as f64),
            val_loss: (vn > 0).then(|| vl / vn as f64),
            decided,
        });
        if net.arch().is_differentiated() {
            break;
        }
    }
    Ok(discretize(&net.arch_with_alphas()))
}

/// Search epochs per differentiation phase, by the architecture size being
/// differentiated: 25 up to size 4, 45 at size 8, 85 from size 16.
pub fn default_epochs(target_size: usize) -> Vec<usize> {
    let phases = crate::proliferate::divisions_for(target_size) + 1;
    (0..phases)
        .map(|i| match 1usize << i {
            s if s <= 4 => 25,
            8 => 45,
            _ => 85,
        })
        .collect()
}

/// Multiplies each budget by `scale`, keeping at least one epoch.
pub fn scale_epochs(epochs: &[usize], scale: f64) -> Vec<usize> {
    epochs.iter().map(|&e| ((e as f64 * scale).round() as usize).max(1)).collect()
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProliferationPlan {
    pub target_size: usize,
    /// One budget per differentiation phase; empty means the defaults.
    #[serde(default)]
    pub epochs_per_iteration: Vec<usize>,
    pub d_v: usize,
    pub d_e: usize,
    #[serde(default = "yes")]
    pub relation_space: bool,
}

impl ProliferationPlan {
    pub fn epochs(&self) -> Vec<usize> {
        if self.epochs_per_iteration.is_empty() {
            default_epochs(self.target_size)
        } else {
            self.epochs_per_iteration.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_size == 0 {
            return Err(Error::Schema("target_size must be at least 1".into()));
        }
        if self.d_v == 0 || self.d_e == 0 {
            return Err(Error::Schema("d_v and d_e must be positive".into()));
        }
        let need = crate::proliferate::divisions_for(self.target_size) + 1;
        let have = self.epochs().len();
        if have < need {
            return Err(Error::Schema(format!(
                "epochs_per_iteration has {have} entries; size {} needs {need}",
                self.target_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub arch: ArchDag,
    pub audit: AuditTrail,
}

/// Alternates differentiation and division from a single vertex until the
/// architecture reaches the target size. Every phase trains freshly
/// initialized parameters; the run is a pure function of its inputs.
pub fn proliferation_loop(
    plan: &ProliferationPlan,
    dataset: &Dataset,
    strategy: &StrategyConfig,
    net_cfg: &NetConfig,
    seed: u64,
    sink: &mut dyn FnMut(&SearchLog),
) -> Result<SearchOutcome> {
    plan.validate()?;
    strategy.validate()?;
    let data = split_train_val(dataset, seed)?;
    let epochs = plan.epochs();
    let mut rng = seeded_rng(seed);
    let mut arch = init_arch(plan.d_v, plan.d_e, plan.relation_space);
    let mut audit = AuditTrail::default();
    for (i, &budget) in epochs.iter().enumerate() {
        audit.iterations.push(audit_iteration(&arch, i)?);
        arch = differentiate(&arch, &data, net_cfg, strategy, budget, i, &mut rng, sink)?;
        arch.validate()?;
        if arch.n_vertices >= plan.target_size {
            return Ok(SearchOutcome { arch, audit });
        }
        arch = divide(&arch)?.arch;
    }
    Err(Error::InvalidArgument("epoch budget exhausted before reaching the target size".into()))
}

/// Searches a global supernet of `n` vertices in one phase.
#[allow(clippy::too_many_arguments)]
pub fn global_search(
    n: usize,
    dataset: &Dataset,
    strategy: &StrategyConfig,
    net_cfg: &NetConfig,
    relation_space: bool,
    d: (usize, usize),
    epochs: usize,
    seed: u64,
    sink: &mut dyn FnMut(&SearchLog),
) -> Result<ArchDag> {
    let data = split_train_val(dataset, seed)?;
    let mut rng = seeded_rng(seed);
    let arch = global_supernet(n, d.0, d.1, relation_space);
    let out = differentiate(&arch, &data, net_cfg, strategy, epochs, 0, &mut rng, sink)?;
    out.validate_relaxed()?;
    Ok(out)
}
