//! A trainable network built from an architecture: input stem, one or more
//! DAG cells, and the task head, with every parameter held in a named store.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{dag_forward, ArchDag, DagVars, ForwardState, Link, LinkOp, LinkVars, Vertex};
use crate::error::{Error, Result};
use crate::grad::{BatchStats, Tape, Tensor, Var};
use crate::graph::{Dataset, Graph, Task};
use crate::heads::{global_features, graph_readout, predict, predict_edge_from_nodes, update_running, BnMode};
use crate::ops::{film_shapes_for, init_weight, FilmVars, OpKind, Space, ZooConfig, FILM_NAMES, NUM_OPS};
use crate::params::{Binder, Group, ParamId, ParamStore};
use crate::proliferate::Rewire;

/// Input and output widths of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataShape {
    pub task: Task,
    pub d_v: usize,
    pub d_e: usize,
    pub num_classes: usize,
}

impl DataShape {
    pub fn of(ds: &Dataset) -> Self {
        Self { task: ds.task, d_v: ds.d_v, d_e: ds.d_e, num_classes: ds.num_classes }
    }
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Linear projection of the raw inputs to the architecture widths.
    #[serde(default = "yes")]
    pub stem: bool,
    /// Stacked copies of the cell; only used for cell-mode architectures.
    #[serde(default = "one")]
    pub cells: usize,
    /// Replace every FiLM generator by γ ≡ 1, β ≡ 0 (no weights).
    #[serde(default)]
    pub identity_modulation: bool,
    #[serde(default)]
    pub zoo: ZooConfig,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { stem: true, cells: 1, identity_modulation: false, zoo: ZooConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// Batch statistics, no dropout.
    Search,
    /// Batch statistics with dropout on the global features.
    Retrain { dropout: f64 },
    /// Running statistics, no dropout.
    Eval,
}

#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats,
}

#[derive(Clone, Debug, Default)]
struct LinkIds {
    alpha: Option<ParamId>,
    film: [Option<[ParamId; 4]>; NUM_OPS],
}

#[derive(Clone, Debug, Default)]
struct CellIds {
    node: Vec<LinkIds>,
    rel: Vec<LinkIds>,
}

#[derive(Clone, Debug, Default)]
struct HeadIds {
    w_v: Option<ParamId>,
    bn_v: Option<(ParamId, ParamId)>,
    w_e: Option<ParamId>,
    bn_e: Option<(ParamId, ParamId)>,
    c: ParamId,
}

#[derive(Clone, Debug, Default)]
struct Layout {
    stem: Option<(ParamId, ParamId)>,
    cells: Vec<CellIds>,
    head: HeadIds,
}

pub fn link_prefix(cell: usize, space: Space, src: Vertex, dst: Vertex) -> String {
    format!("cell{cell}/{}/{src}->{dst}/", space.name())
}

pub fn alpha_name(space: Space, src: Vertex, dst: Vertex) -> String {
    format!("alpha/{}/{src}->{dst}", space.name())
}

enum Init {
    Weight,
    Zeros,
    Ones,
    Value(Vec<f64>),
}

struct Builder<'a> {
    store: ParamStore,
    old: Option<&'a ParamStore>,
    rename: &'a dyn Fn(&str) -> String,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn add(&mut self, name: String, group: Group, shape: [usize; 2], init: Init) -> Result<ParamId> {
        if let Some(id) = self.store.id(&name) {
            return Ok(id);
        }
        let shape: Vec<usize> = match init {
            Init::Value(_) => vec![shape[0] * shape[1]],
            _ => shape.to_vec(),
        };
        if let Some(old) = self.old.and_then(|s| s.by_name(&(self.rename)(&name))) {
            if old.value.shape() == shape.as_slice() && old.group == group {
                let mut p = old.clone();
                p.name = name;
                p.value.zero_grad();
                return self.store.push_param(p);
            }
        }
        let value = match init {
            Init::Weight => init_weight([shape[0], shape[1]], self.rng),
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
            Init::Value(v) => Tensor::new(shape, v)?,
        };
        self.store.push(name, group, value)
    }

    fn link<K: OpKind>(
        &mut self,
        cell: usize,
        link: &Link<K>,
        film_shapes: [[usize; 2]; 4],
        identity: bool,
    ) -> Result<LinkIds> {
        let space = K::SPACE;
        let mut ids = LinkIds::default();
        let ops: Vec<K> = match &link.op {
            LinkOp::Fixed(k) => vec![*k],
            LinkOp::Mixture(alpha) => {
                let name = alpha_name(space, link.src, link.dst);
                ids.alpha = Some(self.add(name, Group::Arch, [NUM_OPS, 1], Init::Value(alpha.clone()))?);
                K::ALL.to_vec()
            }
        };
        if identity {
            return Ok(ids);
        }
        let prefix = link_prefix(cell, space, link.src, link.dst);
        for k in ops.into_iter().filter(|k| k.has_weights()) {
            let mut w = [0; 4];
            for (j, (wname, shape)) in FILM_NAMES.iter().zip(film_shapes).enumerate() {
                w[j] = self.add(format!("{prefix}{}/{wname}", k.name()), Group::Weight, shape, Init::Weight)?;
            }
            ids.film[k.index()] = Some(w);
        }
        Ok(ids)
    }
}

/// Network parameters and structure for one architecture.
#[derive(Clone, Debug)]
pub struct Network {
    arch: ArchDag,
    shape: DataShape,
    cfg: NetConfig,
    pub params: ParamStore,
    layout: Layout,
}

impl Network {
    /// Fresh parameters drawn from `rng` in a fixed order.
    pub fn new(arch: ArchDag, shape: DataShape, cfg: NetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::build(arch, shape, cfg, None, &|n| n.to_string(), rng)
    }

    /// Builds the network for `arch`, reusing every parameter of `old` whose
    /// name (after `rename`) and shape match; the rest are fresh.
    pub fn with_carry(
        arch: ArchDag,
        shape: DataShape,
        cfg: NetConfig,
        old: &ParamStore,
        rename: &dyn Fn(&str) -> String,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::build(arch, shape, cfg, Some(old), rename, rng)
    }

    fn build(
        arch: ArchDag,
        shape: DataShape,
        cfg: NetConfig,
        old: Option<&ParamStore>,
        rename: &dyn Fn(&str) -> String,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        arch.validate_relaxed()?;
        cfg.zoo.validate()?;
        if !cfg.stem && (shape.d_v != arch.d_v || shape.d_e != arch.d_e) {
            return Err(Error::Shape(format!(
                "without a stem the data widths ({}, {}) must equal the architecture widths ({}, {})",
                shape.d_v, shape.d_e, arch.d_v, arch.d_e
            )));
        }
        let (dv, de) = (arch.d_v, arch.d_e);
        let mut b = Builder { store: ParamStore::new(), old, rename, rng };
        let mut layout = Layout::default();
        if cfg.stem {
            layout.stem = Some((
                b.add("stem/W_v".into(), Group::Weight, [shape.d_v, dv], Init::Weight)?,
                b.add("stem/W_e".into(), Group::Weight, [shape.d_e, de], Init::Weight)?,
            ));
        }
        let n_cells = if arch.cell_mode { cfg.cells.max(1) } else { 1 };
        for c in 0..n_cells {
            let mut cell = CellIds::default();
            for l in &arch.node_links {
                cell.node.push(b.link(c, l, film_shapes_for(Space::Node, dv, de), cfg.identity_modulation)?);
            }
            for l in &arch.rel_links {
                cell.rel.push(b.link(c, l, film_shapes_for(Space::Relation, dv, de), cfg.identity_modulation)?);
            }
            layout.cells.push(cell);
        }

        let n = arch.n_vertices;
        let dual = arch.relation_space;
        let classes = shape.num_classes;
        let bn = |b: &mut Builder, tag: &str, d: usize| -> Result<(ParamId, ParamId)> {
            Ok((
                b.add(format!("head/bn_{tag}/mean"), Group::Buffer, [1, d], Init::Zeros)?,
                b.add(format!("head/bn_{tag}/var"), Group::Buffer, [1, d], Init::Ones)?,
            ))
        };
        let needs_v = match shape.task {
            Task::NodeCls | Task::GraphReg | Task::GraphCls => true,
            Task::EdgeCls => !dual,
        };
        let needs_e = match shape.task {
            Task::NodeCls => false,
            Task::EdgeCls | Task::GraphReg | Task::GraphCls => dual,
        };
        if needs_v {
            layout.head.w_v = Some(b.add("head/W_V".into(), Group::Weight, [n * dv, dv], Init::Weight)?);
            layout.head.bn_v = Some(bn(&mut b, "V", dv)?);
        }
        if needs_e {
            layout.head.w_e = Some(b.add("head/W_E".into(), Group::Weight, [n * de, de], Init::Weight)?);
            layout.head.bn_e = Some(bn(&mut b, "E", de)?);
        }
        let c_rows = match shape.task {
            Task::NodeCls => dv,
            Task::EdgeCls if dual => de,
            Task::EdgeCls => 2 * dv,
            Task::GraphReg | Task::GraphCls if dual => dv + de,
            Task::GraphReg | Task::GraphCls => dv,
        };
        let c_name = match shape.task {
            Task::NodeCls => "head/C_V",
            Task::EdgeCls => "head/C_E",
            Task::GraphReg | Task::GraphCls => "head/C_G",
        };
        layout.head.c = b.add(c_name.into(), Group::Weight, [c_rows, classes], Init::Weight)?;

        Ok(Self { arch, shape, cfg, params: b.store, layout })
    }

    pub fn arch(&self) -> &ArchDag {
        &self.arch
    }

    pub fn shape(&self) -> DataShape {
        self.shape
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// Replaces the architecture, carrying parameters by name.
    pub fn set_arch(&mut self, arch: ArchDag, rng: &mut ChaCha8Rng) -> Result<()> {
        let next = Self::with_carry(arch, self.shape, self.cfg.clone(), &self.params, &|n| n.to_string(), rng)?;
        *self = next;
        Ok(())
    }

    /// The architecture with current alpha values written into its mixtures.
    pub fn arch_with_alphas(&self) -> ArchDag {
        let mut arch = self.arch.clone();
        let read = |space: Space, src: Vertex, dst: Vertex| -> Option<Vec<f64>> {
            self.params.by_name(&alpha_name(space, src, dst)).map(|p| p.value.data().to_vec())
        };
        for l in &mut arch.node_links {
            if l.op.is_mixture() {
                if let Some(a) = read(Space::Node, l.src, l.dst) {
                    l.op = LinkOp::Mixture(a);
                }
            }
        }
        for l in &mut arch.rel_links {
            if l.op.is_mixture() {
                if let Some(a) = read(Space::Relation, l.src, l.dst) {
                    l.op = LinkOp::Mixture(a);
                }
            }
        }
        arch
    }

    fn link_vars(&self, tape: &mut Tape, binder: &mut Binder, ids: &LinkIds) -> LinkVars {
        let mut lv = LinkVars { alpha: ids.alpha.map(|a| binder.var(tape, &self.params, a)), ..Default::default() };
        for (slot, f) in lv.film.iter_mut().zip(&ids.film) {
            if let Some([w1, w2, wk, wb]) = *f {
                *slot = Some(FilmVars {
                    w1: binder.var(tape, &self.params, w1),
                    w2: binder.var(tape, &self.params, w2),
                    wk: binder.var(tape, &self.params, wk),
                    wb: binder.var(tape, &self.params, wb),
                });
            }
        }
        lv
    }

    /// Stem and cells; returns the vertex tensors of the last cell.
    pub fn body(&self, tape: &mut Tape, binder: &mut Binder, g: &Graph) -> Result<ForwardState> {
        if g.d_v() != self.shape.d_v || g.d_e() != self.shape.d_e {
            return Err(Error::Shape(format!(
                "graph widths ({}, {}) do not match the network ({}, {})",
                g.d_v(),
                g.d_e(),
                self.shape.d_v,
                self.shape.d_e
            )));
        }
        let v_in = tape.constant(g.v_in().clone());
        let e_in = tape.constant(g.e_in().clone());
        let (v0, e0) = match self.layout.stem {
            Some((wv, we)) => {
                let wv = binder.var(tape, &self.params, wv);
                let we = binder.var(tape, &self.params, we);
                (tape.matmul(v_in, wv)?, tape.matmul(e_in, we)?)
            }
            None => (v_in, e_in),
        };
        let mut prev2 = (v0, e0);
        let mut prev = (v0, e0);
        let mut state = ForwardState::default();
        let n_cells = self.layout.cells.len();
        for (c, cell) in self.layout.cells.iter().enumerate() {
            let vars = DagVars {
                node: cell.node.iter().map(|ids| self.link_vars(tape, binder, ids)).collect(),
                rel: cell.rel.iter().map(|ids| self.link_vars(tape, binder, ids)).collect(),
            };
            state = dag_forward(tape, &self.arch, g, [prev2, prev], &vars, &self.cfg.zoo)?;
            if c + 1 < n_cells {
                let out = self.cell_output(tape, &state)?;
                prev2 = prev;
                prev = out;
            }
        }
        Ok(state)
    }

    /// Mean of the inner vertices, the input to the next cell.
    fn cell_output(&self, tape: &mut Tape, st: &ForwardState) -> Result<(Var, Var)> {
        let scale = 1.0 / self.arch.n_vertices as f64;
        let mut v = None;
        let mut e = None;
        for x in self.arch.inner() {
            let (vx, ex) = (st.v(x)?, st.e(x)?);
            v = Some(match v {
                None => vx,
                Some(acc) => tape.add(acc, vx)?,
            });
            e = Some(match e {
                None => ex,
                Some(acc) => tape.add(acc, ex)?,
            });
        }
        let v = tape.scale(v.expect("at least one vertex"), scale)?;
        let e = tape.scale(e.expect("at least one vertex"), scale)?;
        Ok((v, e))
    }

    #[allow(clippy::too_many_arguments)]
    fn global(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        xs: &[Var],
        w: ParamId,
        bn: (ParamId, ParamId),
        mode: Mode,
        rng: &mut ChaCha8Rng,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<Var> {
        let w = binder.var(tape, &self.params, w);
        let running = (self.params.get(bn.0).value.data(), self.params.get(bn.1).value.data());
        let bn_mode = match mode {
            Mode::Eval => BnMode::Eval { running },
            _ => BnMode::Train { running },
        };
        let (y, stats) = global_features(tape, xs, w, bn_mode)?;
        if let Some(stats) = stats {
            updates.push(BnUpdate { mean: bn.0, var: bn.1, stats });
        }
        match mode {
            Mode::Retrain { dropout } if dropout > 0.0 => dropout_mask(tape, y, dropout, rng),
            _ => Ok(y),
        }
    }

    /// Full forward pass to task outputs (logits or regression values).
    pub fn forward(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        g: &Graph,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, Vec<BnUpdate>)> {
        let st = self.body(tape, binder, g)?;
        let order: Vec<Vertex> = (1..=self.arch.n_vertices).map(Vertex::Inner).collect();
        let vs = order.iter().map(|&x| st.v(x)).collect::<Result<Vec<_>>>()?;
        let es = order.iter().map(|&x| st.e(x)).collect::<Result<Vec<_>>>()?;
        let h = &self.layout.head;
        let mut updates = Vec::new();
        let vg = match (h.w_v, h.bn_v) {
            (Some(w), Some(bn)) => Some(self.global(tape, binder, &vs, w, bn, mode, rng, &mut updates)?),
            _ => None,
        };
        let eg = match (h.w_e, h.bn_e) {
            (Some(w), Some(bn)) => Some(self.global(tape, binder, &es, w, bn, mode, rng, &mut updates)?),
            _ => None,
        };
        let c = binder.var(tape, &self.params, h.c);
        let out = match self.shape.task {
            Task::NodeCls => predict(tape, vg.expect("node head"), c)?,
            Task::EdgeCls => match eg {
                Some(eg) => predict(tape, eg, c)?,
                None => predict_edge_from_nodes(
                    tape,
                    vg.expect("node features for the edge head"),
                    g.edge_src().clone(),
                    g.edge_dst().clone(),
                    c,
                )?,
            },
            Task::GraphReg | Task::GraphCls => {
                let r = graph_readout(tape, vg.expect("node features for readout"), eg)?;
                predict(tape, r, c)?
            }
        };
        Ok((out, updates))
    }

    /// Applies running-statistic updates to the batch-norm buffers.
    pub fn apply_bn(&mut self, updates: &[BnUpdate]) {
        apply_bn(&mut self.params, updates);
    }
}

pub fn apply_bn(store: &mut ParamStore, updates: &[BnUpdate]) {
    for u in updates {
        update_running(store.get_mut(u.mean).value.data_mut(), &u.stats.mean);
        update_running(store.get_mut(u.var).value.data_mut(), &u.stats.var);
    }
}

/// Inverted dropout with a constant mask.
fn dropout_mask(tape: &mut Tape, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
    let keep = 1.0 - p;
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
    let mask = tape.constant(Tensor::new(shape, data)?);
    tape.mul(x, mask)
}

/// Task loss of one graph; `None` when the graph has nothing to supervise.
/// Cross-entropy for classification, L1 for regression.
pub fn task_loss(tape: &mut Tape, out: Var, g: &Graph, task: Task) -> Result<Option<Var>> {
    let missing = |what: &str| Error::MissingLabels(what.to_string());
    match task {
        Task::NodeCls => {
            let labels = g.node_labels.clone().ok_or_else(|| missing("node labels"))?;
            if labels.is_empty() {
                return Ok(None);
            }
            Ok(Some(tape.cross_entropy(out, labels.into())?))
        }
        Task::EdgeCls => {
            let labels = g.edge_labels.clone().ok_or_else(|| missing("edge labels"))?;
            if labels.is_empty() {
                return Ok(None);
            }
            Ok(Some(tape.cross_entropy(out, labels.into())?))
        }
        Task::GraphReg => {
            let y = g.graph_target.ok_or_else(|| missing("graph target"))?;
            let target = tape.constant(Tensor::full(tape.shape(out).to_vec(), y));
            let d = tape.sub(out, target)?;
            let d = tape.abs(d)?;
            Ok(Some(tape.mean_all(d)?))
        }
        Task::GraphCls => {
            let y = g.graph_target.ok_or_else(|| missing("graph target"))?;
            Ok(Some(tape.cross_entropy(out, vec![y as usize].into())?))
        }
    }
}

/// Something with parameters and a per-graph training loss.
pub trait Objective {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn graph_loss(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        g: &Graph,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<(Var, Vec<BnUpdate>)>>;
}

impl Objective for Network {
    fn store(&self) -> &ParamStore {
        &self.params
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn graph_loss(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        g: &Graph,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<(Var, Vec<BnUpdate>)>> {
        let (out, bn) = self.forward(tape, binder, g, mode, rng)?;
        Ok(task_loss(tape, out, g, self.shape.task)?.map(|l| (l, bn)))
    }
}

/// Forward and backward over `graphs`, adding the gradients of the
/// `trainable` group into the store. Returns the mean loss and the number of
/// supervised graphs, or `None` if none had labels.
pub fn accumulate<O: Objective>(
    obj: &mut O,
    graphs: &[&Graph],
    trainable: Group,
    mode: Mode,
    update_bn: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(f64, usize)>> {
    let mut total = 0.0;
    let mut count = 0usize;
    for g in graphs {
        let mut tape = Tape::new();
        let mut binder = Binder::new(obj.store(), &[trainable]);
        let Some((loss, bn)) = obj.graph_loss(&mut tape, &mut binder, g, mode, rng)? else { continue };
        let value = tape.value(loss)[0];
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss {value} while optimizing the {} group", trainable.name())));
        }
        total += value;
        count += 1;
        let grads = tape.backward(loss)?;
        binder.accumulate(&grads, obj.store_mut());
        if update_bn {
            apply_bn(obj.store_mut(), &bn);
        }
    }
    Ok((count > 0).then(|| (total / count as f64, count)))
}

/// Maps parameter names of a divided architecture back to the names of the
/// links they came from, so trained weights follow rewired links.
pub fn division_rename(rewired: &[Rewire], cells: usize) -> impl Fn(&str) -> String {
    let mut map = BTreeMap::new();
    for r in rewired {
        for c in 0..cells.max(1) {
            map.insert(link_prefix(c, r.space, r.to.0, r.to.1), link_prefix(c, r.space, r.from.0, r.from.1));
        }
    }
    move |name: &str| {
        for (new, old) in &map {
            if let Some(rest) = name.strip_prefix(new.as_str()) {
                return format!("{old}{rest}");
            }
        }
        name.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::seeded_rng;
    use crate::ops::{NodeOp, RelOp};
    use crate::proliferate::init_arch;

    fn shape(task: Task) -> DataShape {
        DataShape { task, d_v: 3, d_e: 1, num_classes: 2 }
    }

    #[test]
    fn supernet_parameter_counts() {
        let arch = init_arch(4, 2, true);
        let net = Network::new(arch, shape(Task::NodeCls), NetConfig::default(), &mut seeded_rng(0)).unwrap();
        assert_eq!(net.params.group_ids(Group::Arch).len(), 4);
        // 2 links x 6 weighted ops x 4 matrices per space, plus stem (2) and head (W_V, C_V)
        assert_eq!(net.params.group_ids(Group::Weight).len(), 2 * 2 * 6 * 4 + 2 + 2);
        assert_eq!(net.params.group_ids(Group::Buffer).len(), 2);
    }

    #[test]
    fn fixed_links_reuse_mixture_weights_by_name() {
        let arch = init_arch(4, 2, true);
        let mut rng = seeded_rng(1);
        let mut net = Network::new(arch.clone(), shape(Task::NodeCls), NetConfig::default(), &mut rng).unwrap();
        let name = "cell0/node/in0->1/V_MAX/W1";
        let before = net.params.by_name(name).unwrap().value.clone();
        let fixed = crate::proliferate::fix_all(&arch, |_| NodeOp::Max, |_| RelOp::Had);
        net.set_arch(fixed, &mut rng).unwrap();
        assert!(net.params.by_name(name).unwrap().value.bit_eq(&before));
        assert!(net.params.by_name("cell0/node/in0->1/V_MEAN/W1").is_none());
        assert!(net.params.group_ids(Group::Arch).is_empty());
    }
}
