//! Node-learning and relation-mining operations with FiLM modulation.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Reduce, Tape, Tensor, Var};
use crate::graph::Graph;

pub const NUM_OPS: usize = 8;

/// Which of the two coupled spaces a link lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Node,
    Relation,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Node => "node",
            Space::Relation => "rel",
        }
    }
}

/// Shared interface of the two operation enumerations.
pub trait OpKind: Copy + Eq + Ord + fmt::Debug + Send + Sync + 'static {
    const ALL: [Self; NUM_OPS];
    const SPACE: Space;

    fn index(self) -> usize;
    fn name(self) -> &'static str;

    fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    fn is_zero(self) -> bool;
    fn is_skip(self) -> bool;

    /// Whether the op owns FiLM weights (everything except SKIP and ZERO).
    fn has_weights(self) -> bool {
        !self.is_zero() && !self.is_skip()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeOp {
    Mean,
    Sum,
    Max,
    Std,
    Gem2,
    Gem3,
    Skip,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelOp {
    Sub,
    Gauss,
    Had,
    Max,
    Sum,
    Mean,
    Skip,
    Zero,
}

impl OpKind for NodeOp {
    const ALL: [Self; NUM_OPS] =
        [NodeOp::Mean, NodeOp::Sum, NodeOp::Max, NodeOp::Std, NodeOp::Gem2, NodeOp::Gem3, NodeOp::Skip, NodeOp::Zero];
    const SPACE: Space = Space::Node;

    fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            NodeOp::Mean => "V_MEAN",
            NodeOp::Sum => "V_SUM",
            NodeOp::Max => "V_MAX",
            NodeOp::Std => "V_STD",
            NodeOp::Gem2 => "V_GEM2",
            NodeOp::Gem3 => "V_GEM3",
            NodeOp::Skip => "SKIP",
            NodeOp::Zero => "ZERO",
        }
    }

    fn is_zero(self) -> bool {
        self == NodeOp::Zero
    }

    fn is_skip(self) -> bool {
        self == NodeOp::Skip
    }
}

impl OpKind for RelOp {
    const ALL: [Self; NUM_OPS] =
        [RelOp::Sub, RelOp::Gauss, RelOp::Had, RelOp::Max, RelOp::Sum, RelOp::Mean, RelOp::Skip, RelOp::Zero];
    const SPACE: Space = Space::Relation;

    fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            RelOp::Sub => "E_SUB",
            RelOp::Gauss => "E_GAUSS",
            RelOp::Had => "E_HAD",
            RelOp::Max => "E_MAX",
            RelOp::Sum => "E_SUM",
            RelOp::Mean => "E_MEAN",
            RelOp::Skip => "SKIP",
            RelOp::Zero => "ZERO",
        }
    }

    fn is_zero(self) -> bool {
        self == RelOp::Zero
    }

    fn is_skip(self) -> bool {
        self == RelOp::Skip
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZooConfig {
    pub eps: f64,
    pub gauss_sigma: f64,
}

impl Default for ZooConfig {
    fn default() -> Self {
        Self { eps: 1e-5, gauss_sigma: 1.0 }
    }
}

impl ZooConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
            || self.gauss_sigma.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
        {
            return Err(Error::InvalidArgument("eps and gauss_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Weights of the two-layer FiLM generator `[γ β] = relu(relu(c W1) W2) [Wk Wb]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilmParams {
    pub w1: Tensor,
    pub w2: Tensor,
    pub wk: Tensor,
    pub wb: Tensor,
}

pub const FILM_NAMES: [&str; 4] = ["W1", "W2", "Wk", "Wb"];

/// Shapes of `W1, W2, Wk, Wb` for a FiLM network mapping `d_in` to `d_out`
/// through a hidden width of `d_out`.
pub fn film_shapes(d_in: usize, d_out: usize) -> [[usize; 2]; 4] {
    let d_h = d_out;
    [[d_in, d_h], [d_h, d_h], [d_h, d_out], [d_h, d_out]]
}

/// The FiLM shapes an op of `space` needs: node ops are conditioned on edge
/// features, relation ops on pairwise node functions.
pub fn film_shapes_for(space: Space, d_v: usize, d_e: usize) -> [[usize; 2]; 4] {
    match space {
        Space::Node => film_shapes(d_e, d_v),
        Space::Relation => film_shapes(d_v, d_e),
    }
}

/// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_weight(shape: [usize; 2], rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (shape[0].max(1) as f64).sqrt();
    let data = (0..shape[0] * shape[1]).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

impl FilmParams {
    pub fn init(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let [s1, s2, sk, sb] = film_shapes(d_in, d_out);
        Self { w1: init_weight(s1, rng), w2: init_weight(s2, rng), wk: init_weight(sk, rng), wb: init_weight(sb, rng) }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        let [s1, s2, sk, sb] = film_shapes(d_in, d_out);
        Self {
            w1: Tensor::zeros(s1.to_vec()),
            w2: Tensor::zeros(s2.to_vec()),
            wk: Tensor::zeros(sk.to_vec()),
            wb: Tensor::zeros(sb.to_vec()),
        }
    }

    /// Places the weights on `tape` as differentiable leaves.
    pub fn leaves(&self, tape: &mut Tape) -> FilmVars {
        let mut leaf = |t: &Tensor| tape.leaf(&t.clone().requiring_grad());
        FilmVars { w1: leaf(&self.w1), w2: leaf(&self.w2), wk: leaf(&self.wk), wb: leaf(&self.wb) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilmVars {
    pub w1: Var,
    pub w2: Var,
    pub wk: Var,
    pub wb: Var,
}

impl FilmVars {
    pub fn as_array(&self) -> [Var; 4] {
        [self.w1, self.w2, self.wk, self.wb]
    }
}

/// Source of the per-edge affine `(γ, β)`.
#[derive(Clone, Copy, Debug)]
pub enum Modulation<'a> {
    Film(&'a FilmVars),
    /// γ ≡ 1, β ≡ 0.
    Identity,
}

pub fn film_affine(tape: &mut Tape, cond: Var, p: &FilmVars) -> Result<(Var, Var)> {
    let h = tape.matmul(cond, p.w1)?;
    let h = tape.relu(h)?;
    let h = tape.matmul(h, p.w2)?;
    let h = tape.relu(h)?;
    let gamma = tape.matmul(h, p.wk)?;
    let beta = tape.matmul(h, p.wb)?;
    Ok((gamma, beta))
}

/// `γ ⊙ x + β` with `(γ, β)` generated from `cond`.
fn modulate(tape: &mut Tape, x: Var, cond: Var, m: Modulation) -> Result<Var> {
    match m {
        Modulation::Identity => Ok(x),
        Modulation::Film(p) => {
            let (gamma, beta) = film_affine(tape, cond, p)?;
            if tape.shape(gamma) != tape.shape(x) {
                return Err(Error::ShapeMismatch {
                    primitive: "film",
                    lhs: tape.shape(gamma).to_vec(),
                    rhs: tape.shape(x).to_vec(),
                });
            }
            let gx = tape.mul(gamma, x)?;
            tape.add(gx, beta)
        }
    }
}

/// Per-edge messages `M[e] = γ_e ⊙ V[src(e)] + β_e`, with `(γ_e, β_e)` from `E[e]`.
pub fn modulate_messages(tape: &mut Tape, v: Var, e: Var, g: &Graph, m: Modulation) -> Result<Var> {
    check_rows(tape, v, g.n(), "V")?;
    check_rows(tape, e, g.m(), "E")?;
    let vs = tape.gather_rows(v, g.edge_src().clone())?;
    modulate(tape, vs, e, m)
}

fn check_rows(tape: &Tape, x: Var, rows: usize, what: &str) -> Result<()> {
    let s = tape.shape(x);
    if s.len() != 2 || s[0] != rows {
        return Err(Error::Shape(format!("{what} must have {rows} rows, got shape {s:?}")));
    }
    Ok(())
}

/// Constant `[n × d]` tensor with row `t` filled by `f(t)`.
fn row_constant(tape: &mut Tape, n: usize, d: usize, f: impl Fn(usize) -> f64) -> Var {
    let mut data = Vec::with_capacity(n * d);
    for t in 0..n {
        data.extend(std::iter::repeat_n(f(t), d));
    }
    tape.constant(Tensor::new(vec![n, d], data).expect("shape matches data"))
}

/// Zeroes the rows of nodes without in-neighbors.
fn mask_isolated(tape: &mut Tape, x: Var, g: &Graph) -> Result<Var> {
    if (0..g.n()).all(|t| g.in_degree(t) > 0) {
        return Ok(x);
    }
    let d = tape.shape(x)[1];
    let mask = row_constant(tape, g.n(), d, |t| if g.in_degree(t) > 0 { 1.0 } else { 0.0 });
    tape.mul(x, mask)
}

fn seg(tape: &mut Tape, x: Var, reduce: Reduce, g: &Graph) -> Result<Var> {
    tape.segment_reduce(x, reduce, g.edge_dst().clone(), g.n())
}

/// Generalized mean `(relu(μ(M^α)) + ε)^{1/α}`.
fn gem(tape: &mut Tape, msgs: Var, alpha: f64, eps: f64, g: &Graph) -> Result<Var> {
    let p = tape.pow(msgs, alpha)?;
    let mu = seg(tape, p, Reduce::Mean, g)?;
    let r = tape.relu(mu)?;
    let r = tape.add_scalar(r, eps)?;
    let out = tape.pow(r, 1.0 / alpha)?;
    mask_isolated(tape, out, g)
}

/// One node-learning operation from `(V, E)` to new node features `[n × d_V]`.
pub fn node_op_forward(
    tape: &mut Tape,
    kind: NodeOp,
    v: Var,
    e: Var,
    g: &Graph,
    m: Modulation,
    cfg: &ZooConfig,
) -> Result<Var> {
    match kind {
        NodeOp::Skip => return Ok(v),
        NodeOp::Zero => return tape.scale(v, 0.0),
        _ => {}
    }
    let msgs = modulate_messages(tape, v, e, g, m)?;
    match kind {
        NodeOp::Mean => seg(tape, msgs, Reduce::Mean, g),
        NodeOp::Sum => {
            let mean = seg(tape, msgs, Reduce::Mean, g)?;
            let d = tape.shape(mean)[1];
            let deg = row_constant(tape, g.n(), d, |t| g.in_degree(t) as f64);
            tape.mul(mean, deg)
        }
        NodeOp::Max => seg(tape, msgs, Reduce::Max, g),
        NodeOp::Std => {
            let sq = tape.pow(msgs, 2.0)?;
            let mean_sq = seg(tape, sq, Reduce::Mean, g)?;
            let mean = seg(tape, msgs, Reduce::Mean, g)?;
            let sq_mean = tape.pow(mean, 2.0)?;
            let var = tape.sub(mean_sq, sq_mean)?;
            let var = tape.relu(var)?;
            let var = tape.add_scalar(var, cfg.eps)?;
            let sd = tape.sqrt(var)?;
            mask_isolated(tape, sd, g)
        }
        NodeOp::Gem2 => gem(tape, msgs, 2.0, cfg.eps, g),
        NodeOp::Gem3 => gem(tape, msgs, 3.0, cfg.eps, g),
        NodeOp::Skip | NodeOp::Zero => unreachable!(),
    }
}

/// The pairwise function `h*(V[s], V[t])` of a relation op, per edge.
pub fn relation_feature(tape: &mut Tape, kind: RelOp, v: Var, g: &Graph, cfg: &ZooConfig) -> Result<Var> {
    let vs = tape.gather_rows(v, g.edge_src().clone())?;
    let vt = tape.gather_rows(v, g.edge_dst().clone())?;
    match kind {
        RelOp::Sub => tape.sub(vs, vt),
        RelOp::Gauss => {
            let d = tape.sub(vs, vt)?;
            let d2 = tape.pow(d, 2.0)?;
            let z = tape.scale(d2, -1.0 / (2.0 * cfg.gauss_sigma))?;
            tape.exp(z)
        }
        RelOp::Had => tape.mul(vs, vt),
        RelOp::Max => {
            // max(a, b) = (a + b + |a - b|) / 2
            let s = tape.add(vs, vt)?;
            let d = tape.sub(vs, vt)?;
            let d = tape.abs(d)?;
            let t = tape.add(s, d)?;
            tape.scale(t, 0.5)
        }
        RelOp::Sum => tape.add(vs, vt),
        RelOp::Mean => {
            let s = tape.add(vs, vt)?;
            tape.scale(s, 0.5)
        }
        RelOp::Skip | RelOp::Zero => Err(Error::InvalidArgument(format!("{} has no pairwise function", kind.name()))),
    }
}

/// One relation-mining operation from `(V, E)` to new edge features `[m × d_E]`.
pub fn rel_op_forward(
    tape: &mut Tape,
    kind: RelOp,
    v: Var,
    e: Var,
    g: &Graph,
    m: Modulation,
    cfg: &ZooConfig,
) -> Result<Var> {
    match kind {
        RelOp::Skip => return Ok(e),
        RelOp::Zero => return tape.scale(e, 0.0),
        _ => {}
    }
    check_rows(tape, v, g.n(), "V")?;
    check_rows(tape, e, g.m(), "E")?;
    let h = relation_feature(tape, kind, v, g, cfg)?;
    modulate(tape, e, h, m)
}
