//! The dual architecture DAG: shared vertices, per-space link sets, mixture
//! and fixed operations.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use num_bigint::BigUint;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grad::{Tape, Var};
use crate::graph::Graph;
use crate::ops::{
    node_op_forward, rel_op_forward, FilmVars, Modulation, NodeOp, OpKind, RelOp, Space, ZooConfig, NUM_OPS,
};

pub const ARCH_VERSION: u32 = 1;

/// A vertex of the architecture. Inner vertices are numbered from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Vertex {
    In0,
    In1,
    Inner(usize),
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vertex::In0 => f.write_str("in0"),
            Vertex::In1 => f.write_str("in1"),
            Vertex::Inner(i) => write!(f, "{i}"),
        }
    }
}

impl Serialize for Vertex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Vertex::Inner(i) => s.serialize_u64(*i as u64),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Vertex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(0) => Err(serde::de::Error::custom("inner vertices are numbered from 1")),
            Raw::Id(i) => Ok(Vertex::Inner(i)),
            Raw::Name(n) if n == "in0" => Ok(Vertex::In0),
            Raw::Name(n) if n == "in1" => Ok(Vertex::In1),
            Raw::Name(n) => Err(serde::de::Error::custom(format!("unknown vertex {n:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LinkOp<K> {
    Fixed(K),
    /// Softmax mixture over all operations, weighted by `alpha`.
    Mixture(Vec<f64>),
}

impl<K: OpKind> LinkOp<K> {
    pub fn uniform() -> Self {
        LinkOp::Mixture(vec![0.0; NUM_OPS])
    }

    pub fn is_mixture(&self) -> bool {
        matches!(self, LinkOp::Mixture(_))
    }

    pub fn fixed(&self) -> Option<K> {
        match self {
            LinkOp::Fixed(k) => Some(*k),
            LinkOp::Mixture(_) => None,
        }
    }

    pub fn alpha(&self) -> Option<&[f64]> {
        match self {
            LinkOp::Fixed(_) => None,
            LinkOp::Mixture(a) => Some(a),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Link<K> {
    pub src: Vertex,
    pub dst: Vertex,
    pub op: LinkOp<K>,
}

impl<K: OpKind> Link<K> {
    pub fn fixed(src: Vertex, dst: Vertex, kind: K) -> Self {
        Self { src, dst, op: LinkOp::Fixed(kind) }
    }

    pub fn mixture(src: Vertex, dst: Vertex) -> Self {
        Self { src, dst, op: LinkOp::uniform() }
    }
}

/// Softmax of an alpha vector.
pub fn softmax(alpha: &[f64]) -> Vec<f64> {
    let mx = alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = alpha.iter().map(|a| (a - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchDag {
    pub n_vertices: usize,
    /// Inner vertices in evaluation order. Division inserts each child right
    /// after its parent, so this is generally not index order.
    pub order: Vec<usize>,
    pub cell_mode: bool,
    pub d_v: usize,
    pub d_e: usize,
    /// False for the node-only ablation: no relation links, edge features stay
    /// at their input values.
    pub relation_space: bool,
    pub node_links: Vec<Link<NodeOp>>,
    pub rel_links: Vec<Link<RelOp>>,
}

/// Per-space link counts of one vertex.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InDegree {
    pub fixed: usize,
    pub mixture: usize,
}

fn in_degrees<K: OpKind>(links: &[Link<K>], n: usize) -> Vec<InDegree> {
    let mut deg = vec![InDegree::default(); n + 1];
    for l in links {
        if let Vertex::Inner(t) = l.dst {
            if t <= n {
                if l.op.is_mixture() {
                    deg[t].mixture += 1;
                } else {
                    deg[t].fixed += 1;
                }
            }
        }
    }
    deg
}

/// Sorts links by `(dst, src)`; the canonical order for iteration and files.
pub fn canonicalize<K>(links: &mut [Link<K>]) {
    links.sort_by_key(|l| (l.dst, l.src));
}

impl ArchDag {
    /// Position of `v` in the evaluation order; inputs come first.
    pub fn rank(&self, v: Vertex) -> Option<usize> {
        match v {
            Vertex::In0 => Some(0),
            Vertex::In1 => Some(1),
            Vertex::Inner(i) => self.order.iter().position(|&x| x == i).map(|p| p + 2),
        }
    }

    pub fn inner(&self) -> impl Iterator<Item = Vertex> + '_ {
        self.order.iter().map(|&i| Vertex::Inner(i))
    }

    pub fn spaces(&self) -> &'static [Space] {
        if self.relation_space {
            &[Space::Node, Space::Relation]
        } else {
            &[Space::Node]
        }
    }

    pub fn mixture_count(&self, space: Space) -> usize {
        match space {
            Space::Node => self.node_links.iter().filter(|l| l.op.is_mixture()).count(),
            Space::Relation => self.rel_links.iter().filter(|l| l.op.is_mixture()).count(),
        }
    }

    pub fn fixed_count(&self, space: Space) -> usize {
        match space {
            Space::Node => self.node_links.iter().filter(|l| !l.op.is_mixture()).count(),
            Space::Relation => self.rel_links.iter().filter(|l| !l.op.is_mixture()).count(),
        }
    }

    pub fn total_mixtures(&self) -> usize {
        self.spaces().iter().map(|&s| self.mixture_count(s)).sum()
    }

    pub fn is_differentiated(&self) -> bool {
        self.total_mixtures() == 0
    }

    pub fn in_degrees(&self, space: Space) -> Vec<InDegree> {
        match space {
            Space::Node => in_degrees(&self.node_links, self.n_vertices),
            Space::Relation => in_degrees(&self.rel_links, self.n_vertices),
        }
    }

    pub fn canonicalize(&mut self) {
        canonicalize(&mut self.node_links);
        canonicalize(&mut self.rel_links);
    }

    /// Structural check for proliferation-layout architectures: a vertex under
    /// differentiation has at most three incoming links.
    pub fn validate(&self) -> Result<()> {
        self.validate_inner(Some(3))
    }

    /// Structural check without the three-link cap, for fully connected
    /// supernets.
    pub fn validate_relaxed(&self) -> Result<()> {
        self.validate_inner(None)
    }

    fn validate_inner(&self, max_inputs: Option<usize>) -> Result<()> {
        let n = self.n_vertices;
        if n == 0 {
            return Err(Error::InvalidArch { rule: "vertex count", detail: "no inner vertices".into() });
        }
        let mut seen = self.order.clone();
        seen.sort_unstable();
        if seen != (1..=n).collect::<Vec<_>>() {
            return Err(Error::InvalidArch {
                rule: "vertex order",
                detail: format!("order {:?} is not a permutation of 1..={n}", self.order),
            });
        }
        if self.d_v == 0 || self.d_e == 0 {
            return Err(Error::InvalidArch { rule: "widths", detail: "d_v and d_e must be positive".into() });
        }
        if !self.relation_space && !self.rel_links.is_empty() {
            return Err(Error::InvalidArch {
                rule: "relation space",
                detail: "relation links present in a node-only architecture".into(),
            });
        }
        self.validate_space(Space::Node, &self.node_links, max_inputs)?;
        if self.relation_space {
            self.validate_space(Space::Relation, &self.rel_links, max_inputs)?;
        }
        Ok(())
    }

    fn validate_space<K: OpKind>(&self, space: Space, links: &[Link<K>], max_inputs: Option<usize>) -> Result<()> {
        let mut pairs = BTreeMap::new();
        for l in links {
            let (Some(rs), Some(rd)) = (self.rank(l.src), self.rank(l.dst)) else {
                return Err(Error::InvalidArch {
                    rule: "vertex range",
                    detail: format!("{} link {}->{} names an unknown vertex", space.name(), l.src, l.dst),
                });
            };
            if !matches!(l.dst, Vertex::Inner(_)) || rs >= rd {
                return Err(Error::InvalidArch {
                    rule: "acyclicity",
                    detail: format!("{} link {}->{} does not follow the vertex order", space.name(), l.src, l.dst),
                });
            }
            if let LinkOp::Mixture(a) = &l.op {
                if a.len() != NUM_OPS {
                    return Err(Error::InvalidArch {
                        rule: "alpha length",
                        detail: format!("{} link {}->{} has {} alphas", space.name(), l.src, l.dst, a.len()),
                    });
                }
            }
            if pairs.insert((l.src, l.dst), ()).is_some() {
                return Err(Error::InvalidArch {
                    rule: "duplicate link",
                    detail: format!("{} link {}->{} appears twice", space.name(), l.src, l.dst),
                });
            }
        }
        for (t, d) in in_degrees(links, self.n_vertices).iter().enumerate().skip(1) {
            if d.mixture == 0 {
                if d.fixed != 2 {
                    return Err(Error::InvalidArch {
                        rule: "two-input rule",
                        detail: format!("{} vertex {t} has {} incoming fixed links", space.name(), d.fixed),
                    });
                }
            } else {
                if d.fixed > 1 || d.fixed + d.mixture < 2 {
                    return Err(Error::InvalidArch {
                        rule: "two-input rule",
                        detail: format!(
                            "{} vertex {t} has {} fixed and {} mixture links",
                            space.name(),
                            d.fixed,
                            d.mixture
                        ),
                    });
                }
                if max_inputs.is_some_and(|cap| d.fixed + d.mixture > cap) {
                    return Err(Error::InvalidArch {
                        rule: "three-mixture rule",
                        detail: format!(
                            "{} vertex {t} has {} incoming links under differentiation",
                            space.name(),
                            d.fixed + d.mixture
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ArchFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ArchFile = serde_json::from_str(text)?;
        file.into_arch()
    }

    /// Graphviz rendering with one cluster per space.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph arch {\n  rankdir=LR;\n");
        self.dot_space(&mut out, Space::Node, &self.node_links);
        if self.relation_space {
            self.dot_space(&mut out, Space::Relation, &self.rel_links);
        }
        out.push_str("}\n");
        out
    }

    fn dot_space<K: OpKind>(&self, out: &mut String, space: Space, links: &[Link<K>]) {
        let (cluster, prefix, title) = match space {
            Space::Node => ("node_space", "v", "node space"),
            Space::Relation => ("relation_space", "e", "relation space"),
        };
        let _ = writeln!(out, "  subgraph cluster_{cluster} {{\n    label=\"{title}\";");
        let verts = [Vertex::In0, Vertex::In1].into_iter().chain(self.inner());
        for v in verts {
            let _ = writeln!(out, "    {prefix}_{v} [label=\"{prefix}{v}\"];");
        }
        for l in links {
            let label = match &l.op {
                LinkOp::Fixed(k) => k.name().to_string(),
                LinkOp::Mixture(a) => {
                    let p = softmax(a);
                    let best = argmax(&p);
                    format!("mixture ({} {:.2})", K::ALL[best].name(), p[best])
                }
            };
            let style = if l.op.is_mixture() { ", style=dashed" } else { "" };
            let _ = writeln!(out, "    {prefix}_{} -> {prefix}_{} [label=\"{label}\"{style}];", l.src, l.dst);
        }
        out.push_str("  }\n");
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    src: Vertex,
    dst: Vertex,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchFile {
    version: u32,
    n_vertices: usize,
    cell_mode: bool,
    d_v: usize,
    d_e: usize,
    #[serde(default = "yes")]
    relation_space: bool,
    #[serde(default)]
    order: Option<Vec<usize>>,
    node_links: Vec<LinkFile>,
    #[serde(default)]
    rel_links: Vec<LinkFile>,
}

fn yes() -> bool {
    true
}

fn link_file<K: OpKind>(l: &Link<K>) -> LinkFile {
    let (kind, alpha) = match &l.op {
        LinkOp::Fixed(k) => (Some(k.name().to_string()), None),
        LinkOp::Mixture(a) => (None, Some(a.clone())),
    };
    LinkFile { src: l.src, dst: l.dst, kind, alpha }
}

fn link_from_file<K: OpKind>(f: LinkFile) -> Result<Link<K>> {
    let op = match (f.kind, f.alpha) {
        (Some(name), None) => LinkOp::Fixed(
            K::from_name(&name)
                .ok_or_else(|| Error::Schema(format!("unknown {} operation {name:?}", K::SPACE.name())))?,
        ),
        (None, Some(a)) => {
            if a.len() != NUM_OPS {
                return Err(Error::Schema(format!(
                    "link {}->{}: alpha has {} entries, expected {NUM_OPS}",
                    f.src,
                    f.dst,
                    a.len()
                )));
            }
            LinkOp::Mixture(a)
        }
        _ => {
            return Err(Error::Schema(format!("link {}->{} needs exactly one of \"kind\" and \"alpha\"", f.src, f.dst)))
        }
    };
    Ok(Link { src: f.src, dst: f.dst, op })
}

impl From<&ArchDag> for ArchFile {
    fn from(a: &ArchDag) -> Self {
        ArchFile {
            version: ARCH_VERSION,
            n_vertices: a.n_vertices,
            cell_mode: a.cell_mode,
            d_v: a.d_v,
            d_e: a.d_e,
            relation_space: a.relation_space,
            order: Some(a.order.clone()),
            node_links: a.node_links.iter().map(link_file).collect(),
            rel_links: a.rel_links.iter().map(link_file).collect(),
        }
    }
}

impl ArchFile {
    fn into_arch(self) -> Result<ArchDag> {
        if self.version != ARCH_VERSION {
            return Err(Error::Schema(format!(
                "architecture version {} is not supported (expected {ARCH_VERSION})",
                self.version
            )));
        }
        let node_links = self.node_links.into_iter().map(link_from_file).collect::<Result<Vec<_>>>()?;
        let rel_links = self.rel_links.into_iter().map(link_from_file).collect::<Result<Vec<_>>>()?;
        let order = match self.order {
            Some(o) => o,
            None => topo_order(self.n_vertices, &node_links, &rel_links)?,
        };
        let mut arch = ArchDag {
            n_vertices: self.n_vertices,
            order,
            cell_mode: self.cell_mode,
            d_v: self.d_v,
            d_e: self.d_e,
            relation_space: self.relation_space,
            node_links,
            rel_links,
        };
        arch.canonicalize();
        arch.validate_relaxed()?;
        Ok(arch)
    }
}

/// Kahn's algorithm over the union of both link sets, smallest index first.
fn topo_order(n: usize, node: &[Link<NodeOp>], rel: &[Link<RelOp>]) -> Result<Vec<usize>> {
    let edges: Vec<(usize, usize)> = node
        .iter()
        .map(|l| (l.src, l.dst))
        .chain(rel.iter().map(|l| (l.src, l.dst)))
        .filter_map(|(s, t)| match (s, t) {
            (Vertex::Inner(s), Vertex::Inner(t)) => Some((s, t)),
            _ => None,
        })
        .collect();
    let mut indeg = vec![0usize; n + 1];
    for &(s, t) in &edges {
        if s > n || t > n {
            return Err(Error::Schema(format!("link {s}->{t} exceeds {n} vertices")));
        }
        indeg[t] += 1;
    }
    let mut ready: std::collections::BTreeSet<usize> = (1..=n).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for &(s, t) in &edges {
            if s == v {
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    ready.insert(t);
                }
            }
        }
    }
    if order.len() != n {
        return Err(Error::InvalidArch { rule: "acyclicity", detail: "links form a cycle".into() });
    }
    Ok(order)
}

/// Tape variables for one link: the alpha vector of a mixture and the FiLM
/// weights of every weighted operation (indexed by operation index). A
/// missing FiLM entry means identity modulation.
#[derive(Clone, Debug, Default)]
pub struct LinkVars {
    pub alpha: Option<Var>,
    pub film: [Option<FilmVars>; NUM_OPS],
}

/// Link variables aligned with `node_links` and `rel_links`.
#[derive(Clone, Debug, Default)]
pub struct DagVars {
    pub node: Vec<LinkVars>,
    pub rel: Vec<LinkVars>,
}

/// Vertex tensors after evaluation, keyed by vertex.
#[derive(Clone, Debug, Default)]
pub struct ForwardState {
    pub v: BTreeMap<Vertex, Var>,
    pub e: BTreeMap<Vertex, Var>,
}

impl ForwardState {
    pub fn v(&self, x: Vertex) -> Result<Var> {
        self.v.get(&x).copied().ok_or_else(|| Error::InvalidArgument(format!("vertex {x} not evaluated")))
    }

    pub fn e(&self, x: Vertex) -> Result<Var> {
        self.e.get(&x).copied().ok_or_else(|| Error::InvalidArgument(format!("vertex {x} not evaluated")))
    }
}

fn modulation(film: &Option<FilmVars>) -> Modulation<'_> {
    match film {
        Some(f) => Modulation::Film(f),
        None => Modulation::Identity,
    }
}

/// Output of one node link on `(V, E)`.
pub fn node_link_forward(
    tape: &mut Tape,
    op: &LinkOp<NodeOp>,
    vars: &LinkVars,
    v: Var,
    e: Var,
    g: &Graph,
    cfg: &ZooConfig,
) -> Result<Var> {
    match op {
        LinkOp::Fixed(k) => node_op_forward(tape, *k, v, e, g, modulation(&vars.film[k.index()]), cfg),
        LinkOp::Mixture(_) => {
            let alpha = vars.alpha.ok_or_else(|| Error::InvalidArgument("mixture link without alpha".into()))?;
            let outs = NodeOp::ALL
                .iter()
                .map(|&k| node_op_forward(tape, k, v, e, g, modulation(&vars.film[k.index()]), cfg))
                .collect::<Result<Vec<_>>>()?;
            mixture_combine(tape, alpha, &outs)
        }
    }
}

/// Output of one relation link on `(V, E)`.
pub fn rel_link_forward(
    tape: &mut Tape,
    op: &LinkOp<RelOp>,
    vars: &LinkVars,
    v: Var,
    e: Var,
    g: &Graph,
    cfg: &ZooConfig,
) -> Result<Var> {
    match op {
        LinkOp::Fixed(k) => rel_op_forward(tape, *k, v, e, g, modulation(&vars.film[k.index()]), cfg),
        LinkOp::Mixture(_) => {
            let alpha = vars.alpha.ok_or_else(|| Error::InvalidArgument("mixture link without alpha".into()))?;
            let outs = RelOp::ALL
                .iter()
                .map(|&k| rel_op_forward(tape, k, v, e, g, modulation(&vars.film[k.index()]), cfg))
                .collect::<Result<Vec<_>>>()?;
            mixture_combine(tape, alpha, &outs)
        }
    }
}

/// `Σ softmax(alpha)_k · outs_k`.
pub fn mixture_combine(tape: &mut Tape, alpha: Var, outs: &[Var]) -> Result<Var> {
    let w = tape.softmax_rows(alpha)?;
    tape.weighted_sum(w, outs)
}

fn sum_vars(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    let mut acc = *xs.first().ok_or_else(|| Error::InvalidArgument("vertex without inputs".into()))?;
    for &x in &xs[1..] {
        acc = tape.add(acc, x)?;
    }
    Ok(acc)
}

/// Evaluates both spaces in the shared vertex order. Each inner vertex sums
/// the outputs of its incoming links; a link out of vertex `s` reads `(V_s, E_s)`.
/// In a node-only architecture every vertex reuses the input edge features.
#[allow(clippy::too_many_arguments)]
pub fn dag_forward(
    tape: &mut Tape,
    arch: &ArchDag,
    g: &Graph,
    inputs: [(Var, Var); 2],
    vars: &DagVars,
    cfg: &ZooConfig,
) -> Result<ForwardState> {
    if vars.node.len() != arch.node_links.len() || (arch.relation_space && vars.rel.len() != arch.rel_links.len()) {
        return Err(Error::InvalidArgument("link variables do not match the architecture".into()));
    }
    let mut st = ForwardState::default();
    st.v.insert(Vertex::In0, inputs[0].0);
    st.e.insert(Vertex::In0, inputs[0].1);
    st.v.insert(Vertex::In1, inputs[1].0);
    st.e.insert(Vertex::In1, inputs[1].1);
    for t in arch.inner() {
        let mut vs = Vec::with_capacity(3);
        for (l, lv) in arch.node_links.iter().zip(&vars.node) {
            if l.dst == t {
                let (v, e) = (st.v(l.src)?, st.e(l.src)?);
                vs.push(node_link_forward(tape, &l.op, lv, v, e, g, cfg)?);
            }
        }
        let e_t = if arch.relation_space {
            let mut es = Vec::with_capacity(3);
            for (l, lv) in arch.rel_links.iter().zip(&vars.rel) {
                if l.dst == t {
                    let (v, e) = (st.v(l.src)?, st.e(l.src)?);
                    es.push(rel_link_forward(tape, &l.op, lv, v, e, g, cfg)?);
                }
            }
            sum_vars(tape, &es)?
        } else {
            inputs[1].1
        };
        let v_t = sum_vars(tape, &vs)?;
        st.v.insert(t, v_t);
        st.e.insert(t, e_t);
    }
    Ok(st)
}

/// Whether counts cover one space or both.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountMode {
    Cell,
    Proliferation,
}

/// Number of candidate sub-architectures in one space.
///
/// Cell mode: one shared cell of `verts_per_cell` vertices, vertex `i` picks
/// two of its `i + 1` predecessors and an operation per pick. Proliferation:
/// each of `n` divided vertices keeps two of three links and an op per link.
pub fn count_candidates(mode: CountMode, n: usize, num_ops: usize, verts_per_cell: usize) -> BigUint {
    let ops = BigUint::from(num_ops);
    match mode {
        CountMode::Cell => {
            let mut total = BigUint::from(1u32);
            for i in 1..=verts_per_cell {
                total *= BigUint::from((i + 1) * i / 2);
            }
            total * ops.pow(2 * verts_per_cell as u32)
        }
        CountMode::Proliferation => (BigUint::from(3u32) * ops.pow(2)).pow(n as u32),
    }
}

/// Candidate count over both spaces, which choose independently.
pub fn count_candidates_dual(mode: CountMode, n: usize, num_ops: usize, verts_per_cell: usize) -> BigUint {
    count_candidates(mode, n, num_ops, verts_per_cell).pow(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_vertex(node: [NodeOp; 2], rel: [RelOp; 2]) -> ArchDag {
        ArchDag {
            n_vertices: 1,
            order: vec![1],
            cell_mode: false,
            d_v: 2,
            d_e: 1,
            relation_space: true,
            node_links: vec![
                Link::fixed(Vertex::In0, Vertex::Inner(1), node[0]),
                Link::fixed(Vertex::In1, Vertex::Inner(1), node[1]),
            ],
            rel_links: vec![
                Link::fixed(Vertex::In0, Vertex::Inner(1), rel[0]),
                Link::fixed(Vertex::In1, Vertex::Inner(1), rel[1]),
            ],
        }
    }

    #[test]
    fn counts_match_closed_forms() {
        assert_eq!(count_candidates(CountMode::Cell, 0, 8, 4), BigUint::from(3_019_898_880u64));
        let want: BigUint = BigUint::from(192u32).pow(16);
        assert_eq!(count_candidates(CountMode::Proliferation, 16, 8, 0), want);
        assert_eq!(want.to_string(), "3410512607094195460639097831351648256");
        assert_eq!(count_candidates(CountMode::Proliferation, 1, 1, 0), BigUint::from(3u32));
        assert_eq!(count_candidates(CountMode::Cell, 0, 2, 2), BigUint::from(48u32));
    }

    #[test]
    fn validate_names_rules() {
        let mut a = one_vertex([NodeOp::Skip, NodeOp::Skip], [RelOp::Skip, RelOp::Skip]);
        a.validate().unwrap();
        let mut three = a.clone();
        three.n_vertices = 2;
        three.order = vec![1, 2];
        three.node_links.push(Link::fixed(Vertex::In0, Vertex::Inner(2), NodeOp::Mean));
        three.node_links.push(Link::fixed(Vertex::In1, Vertex::Inner(2), NodeOp::Mean));
        three.node_links.push(Link::fixed(Vertex::Inner(1), Vertex::Inner(2), NodeOp::Mean));
        three.rel_links.push(Link::fixed(Vertex::In0, Vertex::Inner(2), RelOp::Sub));
        three.rel_links.push(Link::fixed(Vertex::In1, Vertex::Inner(2), RelOp::Sub));
        let msg = three.validate().unwrap_err().to_string();
        assert!(msg.contains("two-input rule"), "{msg}");

        a.node_links[0].src = Vertex::Inner(1);
        let msg = a.validate().unwrap_err().to_string();
        assert!(msg.contains("acyclicity"), "{msg}");
    }

    #[test]
    fn seven_alphas_is_a_schema_error() {
        let mut a = one_vertex([NodeOp::Skip, NodeOp::Skip], [RelOp::Skip, RelOp::Skip]);
        a.node_links[0].op = LinkOp::Mixture(vec![0.0; 8]);
        let mut v: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        v["node_links"][0]["alpha"].as_array_mut().unwrap().pop();
        assert!(matches!(ArchDag::from_json(&v.to_string()), Err(Error::Schema(_))));
    }

    #[test]
    fn wrong_version_rejected() {
        let a = one_vertex([NodeOp::Skip, NodeOp::Skip], [RelOp::Skip, RelOp::Skip]);
        let json = a.to_json().unwrap().replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(ArchDag::from_json(&json), Err(Error::Schema(_))));
    }

    #[test]
    fn dot_lists_both_spaces() {
        let a = one_vertex([NodeOp::Mean, NodeOp::Skip], [RelOp::Had, RelOp::Zero]);
        let dot = a.to_dot();
        assert!(dot.contains("cluster_node_space") && dot.contains("cluster_relation_space"));
        assert_eq!(dot.matches(" -> ").count(), 4);
        assert_eq!(dot.matches("v_in0 -> v_1").count(), 1);
        assert_eq!(dot.matches("e_in1 -> e_1").count(), 1);
    }

    #[test]
    fn missing_order_falls_back_to_topological() {
        let a = one_vertex([NodeOp::Mean, NodeOp::Skip], [RelOp::Had, RelOp::Zero]);
        let mut v: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("order");
        let back = ArchDag::from_json(&v.to_string()).unwrap();
        assert_eq!(back, a);
    }
}
