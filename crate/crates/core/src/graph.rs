//! Graph containers, synthetic generators, and the dataset file format.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    NodeCls,
    EdgeCls,
    GraphReg,
    GraphCls,
}

impl Task {
    pub fn is_classification(self) -> bool {
        !matches!(self, Task::GraphReg)
    }

    pub fn metric_name(self) -> &'static str {
        match self {
            Task::NodeCls => "aa",
            Task::EdgeCls => "f1",
            Task::GraphReg => "mae",
            Task::GraphCls => "oa",
        }
    }

    /// Whether larger metric values are better.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Task::GraphReg)
    }
}

/// Directed graph stored as CSR over incoming edges.
///
/// Edge `e` runs `edge_src[e] → edge_dst[e]`; edges are sorted by target, so
/// the incoming edges of `t` are `csr_offsets[t]..csr_offsets[t+1]`. Edge
/// features and labels follow this order.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    csr_offsets: Vec<usize>,
    edge_src: Arc<[usize]>,
    edge_dst: Arc<[usize]>,
    v_in: Tensor,
    e_in: Tensor,
    pub node_labels: Option<Vec<usize>>,
    pub edge_labels: Option<Vec<usize>>,
    pub graph_target: Option<f64>,
}

impl Graph {
    /// Builds the CSR form. Edges are stably sorted by target; `e_in` rows are
    /// given in the order of `edges` and permuted alongside. Without `e_in`
    /// every edge gets the single feature 1.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], v_in: Tensor, e_in: Option<Tensor>) -> Result<Self> {
        for &(s, t) in edges {
            for node in [s, t] {
                if node >= n {
                    return Err(Error::NodeOutOfRange { node, n });
                }
            }
        }
        if v_in.shape().len() != 2 || v_in.rows() != n {
            return Err(Error::Shape(format!("v_in must be [{n} x d_v], got {:?}", v_in.shape())));
        }
        let m = edges.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by_key(|&e| edges[e].1);

        let e_in = match e_in {
            None => Tensor::ones(vec![m, 1]),
            Some(t) => {
                if t.shape().len() != 2 || t.rows() != m {
                    return Err(Error::Shape(format!("e_in must have one row per edge ({m}), got {:?}", t.shape())));
                }
                let d = t.cols();
                let mut data = Vec::with_capacity(m * d);
                for &e in &order {
                    data.extend_from_slice(t.row(e));
                }
                Tensor::new(vec![m, d], data)?
            }
        };

        let mut csr_offsets = vec![0usize; n + 1];
        for &(_, t) in edges {
            csr_offsets[t + 1] += 1;
        }
        for i in 0..n {
            csr_offsets[i + 1] += csr_offsets[i];
        }
        let edge_src: Vec<usize> = order.iter().map(|&e| edges[e].0).collect();
        let edge_dst: Vec<usize> = order.iter().map(|&e| edges[e].1).collect();
        Ok(Self {
            n,
            csr_offsets,
            edge_src: edge_src.into(),
            edge_dst: edge_dst.into(),
            v_in,
            e_in,
            node_labels: None,
            edge_labels: None,
            graph_target: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edge_src.len()
    }

    pub fn d_v(&self) -> usize {
        self.v_in.cols()
    }

    pub fn d_e(&self) -> usize {
        self.e_in.cols()
    }

    pub fn v_in(&self) -> &Tensor {
        &self.v_in
    }

    pub fn e_in(&self) -> &Tensor {
        &self.e_in
    }

    pub fn csr_offsets(&self) -> &[usize] {
        &self.csr_offsets
    }

    /// Source node of every edge, in CSR order. This is the CSR target array
    /// of the incoming adjacency.
    pub fn edge_src(&self) -> &Arc<[usize]> {
        &self.edge_src
    }

    /// Target node of every edge, in CSR order; doubles as the segment ids for
    /// per-target reductions.
    pub fn edge_dst(&self) -> &Arc<[usize]> {
        &self.edge_dst
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.edge_src.iter().copied().zip(self.edge_dst.iter().copied()).collect()
    }

    pub fn in_degree(&self, t: usize) -> usize {
        self.csr_offsets[t + 1] - self.csr_offsets[t]
    }

    /// Incoming neighbors of `t` as `(source, edge index)` pairs.
    pub fn neighbors(&self, t: usize) -> Result<Vec<(usize, usize)>> {
        if t >= self.n {
            return Err(Error::NodeOutOfRange { node: t, n: self.n });
        }
        Ok((self.csr_offsets[t]..self.csr_offsets[t + 1]).map(|e| (self.edge_src[e], e)).collect())
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::Shape(format!("{} node labels for {} nodes", labels.len(), self.n)));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    /// Edge labels in CSR order.
    pub fn with_edge_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.m() {
            return Err(Error::Shape(format!("{} edge labels for {} edges", labels.len(), self.m())));
        }
        self.edge_labels = Some(labels);
        Ok(self)
    }

    pub fn with_graph_target(mut self, y: f64) -> Self {
        self.graph_target = Some(y);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub d_v: usize,
    pub d_e: usize,
    /// Class count, or the output dimension (1) for regression.
    pub num_classes: usize,
    pub train: Vec<Graph>,
    pub val: Vec<Graph>,
    pub test: Vec<Graph>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[Graph] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn graphs(&self) -> impl Iterator<Item = &Graph> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    /// Checks widths, label presence, and label ranges across all splits.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Schema("num_classes must be positive".into()));
        }
        for (i, g) in self.graphs().enumerate() {
            if g.d_v() != self.d_v || g.d_e() != self.d_e {
                return Err(Error::Schema(format!(
                    "graph {i} has widths ({}, {}), dataset declares ({}, {})",
                    g.d_v(),
                    g.d_e(),
                    self.d_v,
                    self.d_e
                )));
            }
            let bad_label = |ls: &[usize]| ls.iter().any(|&y| y >= self.num_classes);
            match self.task {
                Task::NodeCls => match &g.node_labels {
                    None => return Err(Error::MissingLabels(format!("graph {i}: node labels"))),
                    Some(ls) if bad_label(ls) => {
                        return Err(Error::Schema(format!("graph {i}: node label out of range")))
                    }
                    _ => {}
                },
                Task::EdgeCls => match &g.edge_labels {
                    None => return Err(Error::MissingLabels(format!("graph {i}: edge labels"))),
                    Some(ls) if bad_label(ls) => {
                        return Err(Error::Schema(format!("graph {i}: edge label out of range")))
                    }
                    _ => {}
                },
                Task::GraphReg | Task::GraphCls => match g.graph_target {
                    None => return Err(Error::MissingLabels(format!("graph {i}: graph target"))),
                    Some(y)
                        if self.task == Task::GraphCls
                            && (y < 0.0 || y.fract() != 0.0 || y as usize >= self.num_classes) =>
                    {
                        return Err(Error::Schema(format!("graph {i}: class target {y} invalid")))
                    }
                    _ => {}
                },
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DatasetFile {
            task: self.task,
            d_v: self.d_v,
            d_e: self.d_e,
            num_classes: self.num_classes,
            splits: SplitsFile {
                train: self.train.iter().map(GraphFile::from).collect(),
                val: self.val.iter().map(GraphFile::from).collect(),
                test: self.test.iter().map(GraphFile::from).collect(),
            },
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        let conv = |gs: Vec<GraphFile>| -> Result<Vec<Graph>> {
            gs.into_iter().map(|g| g.into_graph(file.d_v, file.d_e)).collect()
        };
        let ds = Dataset {
            task: file.task,
            d_v: file.d_v,
            d_e: file.d_e,
            num_classes: file.num_classes,
            train: conv(file.splits.train)?,
            val: conv(file.splits.val)?,
            test: conv(file.splits.test)?,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    task: Task,
    d_v: usize,
    d_e: usize,
    num_classes: usize,
    splits: SplitsFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitsFile {
    #[serde(default)]
    train: Vec<GraphFile>,
    #[serde(default)]
    val: Vec<GraphFile>,
    #[serde(default)]
    test: Vec<GraphFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    n: usize,
    edges: Vec<[usize; 2]>,
    v_in: Vec<Vec<f64>>,
    e_in: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph_target: Option<f64>,
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn tensor_of(rows: Vec<Vec<f64>>, width: usize, what: &str) -> Result<Tensor> {
    let r = rows.len();
    let mut data = Vec::with_capacity(r * width);
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() != width {
            return Err(Error::Schema(format!("{what} row {i} has {} values, expected {width}", row.len())));
        }
        data.extend(row);
    }
    Tensor::new(vec![r, width], data)
}

impl From<&Graph> for GraphFile {
    fn from(g: &Graph) -> Self {
        GraphFile {
            n: g.n,
            edges: g.edges().into_iter().map(|(s, t)| [s, t]).collect(),
            v_in: rows_of(&g.v_in),
            e_in: Some(rows_of(&g.e_in)),
            node_labels: g.node_labels.clone(),
            edge_labels: g.edge_labels.clone(),
            graph_target: g.graph_target,
        }
    }
}

impl GraphFile {
    fn into_graph(self, d_v: usize, d_e: usize) -> Result<Graph> {
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        if edges.windows(2).any(|w| w[0].1 > w[1].1) {
            return Err(Error::Schema("edges must be sorted by target".into()));
        }
        let v_in = tensor_of(self.v_in, d_v, "v_in")?;
        let e_in = self.e_in.map(|rows| tensor_of(rows, d_e, "e_in")).transpose()?;
        let mut g = Graph::from_edges(self.n, &edges, v_in, e_in)?;
        if let Some(ls) = self.node_labels {
            g = g.with_node_labels(ls)?;
        }
        if let Some(ls) = self.edge_labels {
            g = g.with_edge_labels(ls)?;
        }
        g.graph_target = self.graph_target;
        Ok(g)
    }
}

/// Stochastic block model with `k` equal contiguous communities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sbm {
    pub n: usize,
    pub k: usize,
    pub p_intra: f64,
    pub p_inter: f64,
}

impl Sbm {
    pub fn validate(&self) -> Result<()> {
        for p in [self.p_intra, self.p_inter] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
            }
        }
        if self.k == 0 || self.n == 0 || !self.n.is_multiple_of(self.k) {
            return Err(Error::InvalidArgument(format!("{} communities do not divide {} nodes", self.k, self.n)));
        }
        Ok(())
    }

    pub fn community(&self, node: usize) -> usize {
        node / (self.n / self.k)
    }

    /// Samples directed edges, target-major, no self-loops.
    fn sample_edges(&self, rng: &mut impl Rng) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for t in 0..self.n {
            for s in 0..self.n {
                if s == t {
                    continue;
                }
                let p = if self.community(s) == self.community(t) { self.p_intra } else { self.p_inter };
                if rng.random_bool(p) {
                    edges.push((s, t));
                }
            }
        }
        edges
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SBM node classification graph: labels are community ids and a random
/// `hint_fraction` of nodes carry a one-hot community hint in their first `k`
/// features; all other features are zero.
pub fn gen_sbm(sbm: &Sbm, d_v: usize, hint_fraction: f64, seed: u64) -> Result<Graph> {
    sbm_with_rng(sbm, d_v, hint_fraction, &mut seeded_rng(seed))
}

fn sbm_with_rng(sbm: &Sbm, d_v: usize, hint_fraction: f64, rng: &mut impl Rng) -> Result<Graph> {
    sbm.validate()?;
    if d_v < sbm.k {
        return Err(Error::InvalidArgument(format!("d_v {d_v} cannot hold {} community hints", sbm.k)));
    }
    if !(0.0..=1.0).contains(&hint_fraction) {
        return Err(Error::InvalidArgument(format!("hint fraction {hint_fraction} outside [0, 1]")));
    }
    let edges = sbm.sample_edges(rng);
    let hints = (hint_fraction * sbm.n as f64).round() as usize;
    let mut v = Tensor::zeros(vec![sbm.n, d_v]);
    for node in sample(rng, sbm.n, hints) {
        v.data_mut()[node * d_v + sbm.community(node)] = 1.0;
    }
    let labels = (0..sbm.n).map(|i| sbm.community(i)).collect();
    Graph::from_edges(sbm.n, &edges, v, None)?.with_node_labels(labels)
}

/// SBM edge classification graph: an edge is labeled 1 iff its endpoints share
/// a community. Node features are i.i.d. standard normal noise.
pub fn gen_edge_task(sbm: &Sbm, d_v: usize, seed: u64) -> Result<Graph> {
    edge_task_with_rng(sbm, d_v, &mut seeded_rng(seed))
}

fn edge_task_with_rng(sbm: &Sbm, d_v: usize, rng: &mut impl Rng) -> Result<Graph> {
    sbm.validate()?;
    let edges = sbm.sample_edges(rng);
    let data = (0..sbm.n * d_v).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let v = Tensor::new(vec![sbm.n, d_v], data)?;
    let labels = edges.iter().map(|&(s, t)| usize::from(sbm.community(s) == sbm.community(t))).collect();
    Graph::from_edges(sbm.n, &edges, v, None)?.with_edge_labels(labels)
}

/// Number of triangles in the undirected graph underlying `edges`.
pub fn count_triangles(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(s, t) in edges {
        if s != t {
            adj[s].insert(t);
            adj[t].insert(s);
        }
    }
    let mut count = 0;
    for a in 0..n {
        for &b in adj[a].range(a + 1..) {
            count += adj[a].intersection(&adj[b]).filter(|&&c| c > b).count();
        }
    }
    count
}

/// Symmetrized G(n, p) graph with at least two directed edges; target is the
/// triangle count divided by `n`, features are one-hot in-degrees clipped at 8.
fn reg_graph(n: usize, p: f64, rng: &mut impl Rng) -> Result<Graph> {
    let edges = loop {
        let mut pairs = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random_bool(p) {
                    pairs.push((a, b));
                }
            }
        }
        if !pairs.is_empty() {
            let mut edges: Vec<(usize, usize)> = pairs.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
            edges.sort_by_key(|&(s, t)| (t, s));
            break edges;
        }
    };
    let tri = count_triangles(n, &edges);
    let mut v = Tensor::zeros(vec![n, DEGREE_CLIP + 1]);
    for t in 0..n {
        let deg = edges.iter().filter(|e| e.1 == t).count().min(DEGREE_CLIP);
        v.data_mut()[t * (DEGREE_CLIP + 1) + deg] = 1.0;
    }
    Ok(Graph::from_edges(n, &edges, v, None)?.with_graph_target(tri as f64 / n as f64))
}

const DEGREE_CLIP: usize = 8;

/// Split sizes for a list of `total` graphs: 80% train, 10% val, rest test.
fn default_counts(total: usize) -> (usize, usize, usize) {
    let val = total / 10;
    let test = total / 10;
    (total - val - test, val, test)
}

/// Graph regression on triangle density, split 80/10/10.
pub fn gen_graph_reg(n_graphs: usize, n_min: usize, n_max: usize, seed: u64) -> Result<Dataset> {
    if n_min < 3 || n_min > n_max {
        return Err(Error::InvalidArgument(format!("need 3 <= n_min <= n_max, got {n_min}, {n_max}")));
    }
    let mut rng = seeded_rng(seed);
    let mut graphs = Vec::with_capacity(n_graphs);
    for _ in 0..n_graphs {
        let n = rng.random_range(n_min..=n_max);
        graphs.push(reg_graph(n, 0.3, &mut rng)?);
    }
    let (tr, va, _) = default_counts(n_graphs);
    let test = graphs.split_off(tr + va);
    let val = graphs.split_off(tr);
    Ok(Dataset { task: Task::GraphReg, d_v: DEGREE_CLIP + 1, d_e: 1, num_classes: 1, train: graphs, val, test })
}

/// Directed k-nearest-neighbor graph: each node receives edges from its `k`
/// closest points (Euclidean, ties to the lower index).
pub fn knn_graph(points: &Tensor, k: usize) -> Result<Graph> {
    let n = points.rows();
    if k >= n {
        return Err(Error::InvalidArgument(format!("k = {k} needs more than {n} points")));
    }
    let d = points.cols();
    let dist = |a: usize, b: usize| -> f64 {
        points.row(a).iter().zip(points.row(b)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
    };
    let mut edges = Vec::with_capacity(n * k);
    for t in 0..n {
        let mut cand: Vec<(f64, usize)> = (0..n).filter(|&s| s != t).map(|s| (dist(s, t), s)).collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        edges.extend(cand[..k].iter().map(|&(_, s)| (s, t)));
    }
    let v = Tensor::new(vec![n, d], points.data().to_vec())?;
    Graph::from_edges(n, &edges, v, None)
}

/// Point-cloud shape classification: class 0 samples a sphere surface,
/// class 1 a cube surface; graphs are k-NN over the points.
fn shape_cloud(class: usize, n: usize, k: usize, rng: &mut impl Rng) -> Result<Graph> {
    let mut data = Vec::with_capacity(n * 3);
    for _ in 0..n {
        let mut p: [f64; 3] = [0.0; 3];
        if class == 0 {
            for c in &mut p {
                *c = rng.sample(StandardNormal);
            }
            let norm = p.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-12);
            p.iter_mut().for_each(|c| *c /= norm);
        } else {
            for c in &mut p {
                *c = rng.random_range(-1.0..1.0);
            }
            let face = rng.random_range(0..3);
            p[face] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
        data.extend(p);
    }
    Ok(knn_graph(&Tensor::new(vec![n, 3], data)?, k)?.with_graph_target(class as f64))
}

/// What `build_dataset` generates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    SbmNode {
        sbm: Sbm,
        d_v: usize,
        #[serde(default = "default_hint_fraction")]
        hint_fraction: f64,
        counts: [usize; 3],
    },
    SbmEdge {
        sbm: Sbm,
        d_v: usize,
        counts: [usize; 3],
    },
    GraphReg {
        n_graphs: usize,
        n_min: usize,
        n_max: usize,
    },
    PointCloud {
        points: usize,
        k: usize,
        counts: [usize; 3],
    },
}

fn default_hint_fraction() -> f64 {
    0.1
}

/// Generates a full dataset. `counts` are the train/val/test graph counts.
pub fn build_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    let mut rng = seeded_rng(seed);
    let total = |c: &[usize; 3]| c.iter().sum::<usize>();
    let (task, d_v, d_e, num_classes, graphs, counts) = match spec {
        DatasetSpec::SbmNode { sbm, d_v, hint_fraction, counts } => {
            let gs = (0..total(counts))
                .map(|_| sbm_with_rng(sbm, *d_v, *hint_fraction, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            (Task::NodeCls, *d_v, 1, sbm.k, gs, *counts)
        }
        DatasetSpec::SbmEdge { sbm, d_v, counts } => {
            let gs = (0..total(counts)).map(|_| edge_task_with_rng(sbm, *d_v, &mut rng)).collect::<Result<Vec<_>>>()?;
            (Task::EdgeCls, *d_v, 1, 2, gs, *counts)
        }
        DatasetSpec::GraphReg { n_graphs, n_min, n_max } => {
            return gen_graph_reg(*n_graphs, *n_min, *n_max, seed);
        }
        DatasetSpec::PointCloud { points, k, counts } => {
            let gs =
                (0..total(counts)).map(|i| shape_cloud(i % 2, *points, *k, &mut rng)).collect::<Result<Vec<_>>>()?;
            (Task::GraphCls, 3, 1, 2, gs, *counts)
        }
    };
    let mut graphs = graphs;
    let test = graphs.split_off(counts[0] + counts[1]);
    let val = graphs.split_off(counts[0]);
    Ok(Dataset { task, d_v, d_e, num_classes, train: graphs, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_feats(n: usize) -> Tensor {
        Tensor::zeros(vec![n, 1])
    }

    #[test]
    fn ones_bootstrap_for_missing_edge_features() {
        let g = Graph::from_edges(2, &[(0, 1), (1, 0)], empty_feats(2), None).unwrap();
        assert_eq!(g.e_in().shape(), &[2, 1]);
        assert_eq!(g.e_in().data(), &[1.0, 1.0]);
    }

    #[test]
    fn empty_graph() {
        let g = Graph::from_edges(1, &[], empty_feats(1), None).unwrap();
        assert_eq!(g.m(), 0);
        assert_eq!(g.csr_offsets(), &[0, 0]);
    }

    #[test]
    fn path_neighbors() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)], empty_feats(3), None).unwrap();
        assert_eq!(g.neighbors(1).unwrap(), vec![(0, 0)]);
        assert_eq!(g.neighbors(2).unwrap(), vec![(1, 1)]);
        assert_eq!(g.neighbors(0).unwrap(), vec![]);
        assert!(g.neighbors(3).is_err());
    }

    #[test]
    fn endpoint_out_of_range() {
        assert!(Graph::from_edges(2, &[(0, 2)], empty_feats(2), None).is_err());
    }

    #[test]
    fn edge_features_follow_csr_order() {
        let e = Tensor::from_rows(&[[10.0], [20.0], [30.0]]).unwrap();
        let g = Graph::from_edges(3, &[(0, 2), (2, 1), (1, 0)], empty_feats(3), Some(e)).unwrap();
        assert_eq!(g.edges(), vec![(1, 0), (2, 1), (0, 2)]);
        assert_eq!(g.e_in().data(), &[30.0, 20.0, 10.0]);
    }

    #[test]
    fn degenerate_sbm_is_two_cliques() {
        let sbm = Sbm { n: 4, k: 2, p_intra: 1.0, p_inter: 0.0 };
        let g = gen_sbm(&sbm, 2, 0.1, 3).unwrap();
        let mut e = g.edges();
        e.sort();
        assert_eq!(e, vec![(0, 1), (1, 0), (2, 3), (3, 2)]);
    }

    #[test]
    fn sbm_rejects_bad_arguments() {
        let bad_p = Sbm { n: 4, k: 2, p_intra: 1.5, p_inter: 0.0 };
        assert!(gen_sbm(&bad_p, 2, 0.1, 0).is_err());
        let bad_k = Sbm { n: 5, k: 2, p_intra: 0.5, p_inter: 0.0 };
        assert!(gen_sbm(&bad_k, 2, 0.1, 0).is_err());
    }

    #[test]
    fn knn_collinear() {
        let pts = Tensor::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [10.0, 0.0, 0.0]]).unwrap();
        let g = knn_graph(&pts, 1).unwrap();
        assert_eq!(g.edges(), vec![(1, 0), (0, 1), (1, 2)]);
        assert!(knn_graph(&pts, 3).is_err());
    }

    #[test]
    fn triangle_count_of_a_triangle_and_a_tree() {
        let tri = [(0, 1), (1, 2), (2, 0), (1, 0), (2, 1), (0, 2)];
        assert_eq!(count_triangles(3, &tri), 1);
        let tree = [(0, 1), (1, 0), (0, 2), (2, 0), (2, 3), (3, 2)];
        assert_eq!(count_triangles(4, &tree), 0);
    }
}
