//! A search task with a known optimum. A single-vertex node supernet under
//! identity modulation must reproduce the V_MAX aggregation of its first
//! input; the second input is all zeros, so only the first link matters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::arch::{argmax, dag_forward, ArchDag, DagVars, LinkVars, Vertex};
use crate::error::Result;
use crate::grad::{Tape, Tensor, Var};
use crate::graph::{seeded_rng, Graph};
use crate::network::{BnUpdate, Mode, Objective};
use crate::ops::{node_op_forward, Modulation, NodeOp, OpKind, ZooConfig, NUM_OPS};
use crate::params::{Binder, Group, ParamId, ParamStore};
use crate::proliferate::init_arch;

/// Random directed graph with `N(0, 1)` node features and unit edge features.
pub fn random_graph(n: usize, p: f64, d: usize, rng: &mut ChaCha8Rng) -> Result<Graph> {
    let mut edges = Vec::new();
    for t in 0..n {
        for s in 0..n {
            if s != t && rng.random::<f64>() < p {
                edges.push((s, t));
            }
        }
    }
    let v: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    Graph::from_edges(n, &edges, Tensor::new(vec![n, d], v)?, None)
}

pub struct PlantedMax {
    arch: ArchDag,
    store: ParamStore,
    alphas: Vec<ParamId>,
    cfg: ZooConfig,
}

impl PlantedMax {
    pub fn new(d: usize) -> Result<Self> {
        let arch = init_arch(d, 1, false);
        let mut store = ParamStore::new();
        let mut alphas = Vec::new();
        for l in &arch.node_links {
            let name = format!("alpha/node/{}->{}", l.src, l.dst);
            alphas.push(store.push(name, Group::Arch, Tensor::zeros(vec![NUM_OPS]))?);
        }
        Ok(Self { arch, store, alphas, cfg: ZooConfig::default() })
    }

    /// Training graphs for the task.
    pub fn graphs(count: usize, n: usize, d: usize, seed: u64) -> Result<Vec<Graph>> {
        let mut rng = seeded_rng(seed);
        (0..count).map(|_| random_graph(n, 0.3, d, &mut rng)).collect()
    }

    /// Current alpha vector of the link from the informative input.
    pub fn decisive_alpha(&self) -> &[f64] {
        let i = self.arch.node_links.iter().position(|l| l.src == Vertex::In0).expect("link from in0");
        self.store.get(self.alphas[i]).value.data()
    }

    pub fn selected(&self) -> NodeOp {
        NodeOp::ALL[argmax(self.decisive_alpha())]
    }
}

impl Objective for PlantedMax {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Mean squared error between vertex 1 and the planted target.
    fn graph_loss(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        g: &Graph,
        _mode: Mode,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Option<(Var, Vec<BnUpdate>)>> {
        let v = tape.constant(g.v_in().clone());
        let e = tape.constant(g.e_in().clone());
        let zero = tape.constant(Tensor::zeros(g.v_in().shape().to_vec()));
        let target = node_op_forward(tape, NodeOp::Max, v, e, g, Modulation::Identity, &self.cfg)?;
        let vars = DagVars {
            node: self
                .alphas
                .iter()
                .map(|&a| LinkVars { alpha: Some(binder.var(tape, &self.store, a)), ..Default::default() })
                .collect(),
            rel: Vec::new(),
        };
        let st = dag_forward(tape, &self.arch, g, [(v, e), (zero, e)], &vars, &self.cfg)?;
        let d = tape.sub(st.v(Vertex::Inner(1))?, target)?;
        let sq = tape.mul(d, d)?;
        Ok(Some((tape.mean_all(sq)?, Vec::new())))
    }
}
