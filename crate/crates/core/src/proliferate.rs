//! Network proliferation: division of a differentiated architecture into a
//! larger supernet, complexity audits, and the outer search loop.

use serde::{Deserialize, Serialize};

use crate::arch::{canonicalize, ArchDag, Link, LinkOp, Vertex};
use crate::error::{Error, Result};
use crate::ops::{OpKind, Space, NUM_OPS};

/// Starting supernet: one inner vertex fed by a mixture link from each input,
/// in every active space.
pub fn init_arch(d_v: usize, d_e: usize, relation_space: bool) -> ArchDag {
    let x1 = Vertex::Inner(1);
    ArchDag {
        n_vertices: 1,
        order: vec![1],
        cell_mode: false,
        d_v,
        d_e,
        relation_space,
        node_links: vec![Link::mixture(Vertex::In0, x1), Link::mixture(Vertex::In1, x1)],
        rel_links: if relation_space {
            vec![Link::mixture(Vertex::In0, x1), Link::mixture(Vertex::In1, x1)]
        } else {
            Vec::new()
        },
    }
}

/// A fixed link that division moved to a new source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rewire {
    pub space: Space,
    pub from: (Vertex, Vertex),
    pub to: (Vertex, Vertex),
}

#[derive(Clone, Debug)]
pub struct Division {
    pub arch: ArchDag,
    /// Fixed links whose endpoints changed; their operations are unchanged.
    pub rewired: Vec<Rewire>,
}

fn divide_space<K: OpKind>(links: &[Link<K>], l: usize, space: Space, rewired: &mut Vec<Rewire>) -> Vec<Link<K>> {
    let mut tmp: Vec<Link<K>> = links.to_vec();
    for i in 1..=l {
        let child = Vertex::Inner(i + l);
        tmp.push(Link::mixture(Vertex::Inner(i), child));
        for inc in links.iter().filter(|x| x.dst == Vertex::Inner(i)) {
            tmp.push(Link::mixture(inc.src, child));
        }
    }
    for link in &mut tmp {
        let (Vertex::Inner(s), Vertex::Inner(t)) = (link.src, link.dst) else { continue };
        if s <= l && s + l != t {
            let from = (link.src, link.dst);
            link.src = Vertex::Inner(s + l);
            if !link.op.is_mixture() {
                rewired.push(Rewire { space, from, to: (link.src, link.dst) });
            }
        }
    }
    canonicalize(&mut tmp);
    tmp
}

/// Splits every vertex `X_i` of a differentiated architecture of size `l`
/// into the parent and a child `X_{i+l}`. The child receives mixture links
/// from the parent and from each source of the parent's incoming links; then
/// every link leaving an original inner vertex `X_s` (except parent→child)
/// is re-sourced to `X_{s+l}`. Children are placed right after their parents
/// in the evaluation order.
pub fn divide(arch: &ArchDag) -> Result<Division> {
    let mixtures = arch.total_mixtures();
    if mixtures > 0 {
        return Err(Error::NotDifferentiated(mixtures));
    }
    let l = arch.n_vertices;
    let mut rewired = Vec::new();
    let node_links = divide_space(&arch.node_links, l, Space::Node, &mut rewired);
    let rel_links =
        if arch.relation_space { divide_space(&arch.rel_links, l, Space::Relation, &mut rewired) } else { Vec::new() };
    let order = arch.order.iter().flat_map(|&i| [i, i + l]).collect();
    let out = ArchDag { n_vertices: 2 * l, order, node_links, rel_links, ..arch.clone() };
    out.validate()?;
    Ok(Division { arch: out, rewired })
}

/// Checks the shape right after a division: parents keep exactly two fixed
/// links and each child has exactly three mixture links, in every space.
pub fn validate_divided(arch: &ArchDag) -> Result<()> {
    arch.validate()?;
    let half = arch.n_vertices / 2;
    for &space in arch.spaces() {
        for (t, d) in arch.in_degrees(space).iter().enumerate().skip(1) {
            let ok = if t <= half { d.fixed == 2 && d.mixture == 0 } else { d.fixed == 0 && d.mixture == 3 };
            if !ok {
                return Err(Error::InvalidArch {
                    rule: "three-mixture rule",
                    detail: format!(
                        "{} vertex {t} has {} fixed and {} mixture links after division",
                        space.name(),
                        d.fixed,
                        d.mixture
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Operation counts of one iteration, identical in every active space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationAudit {
    pub i: usize,
    pub fixed: usize,
    pub mixtures: usize,
    pub primitives: usize,
}

/// Closed-form counts for iteration `i`: the initial supernet for `i = 0`,
/// otherwise the state after the `i`-th division.
pub fn expected_audit(i: usize, num_ops: usize) -> IterationAudit {
    if i == 0 {
        return IterationAudit { i, fixed: 0, mixtures: 2, primitives: 2 * num_ops };
    }
    let fixed = 1 << i;
    let mixtures = 3 * (1 << (i - 1));
    IterationAudit { i, fixed, mixtures, primitives: fixed + mixtures * num_ops }
}

/// Counts operations from the link sets and checks them against the closed form.
pub fn audit_iteration(arch: &ArchDag, i: usize) -> Result<IterationAudit> {
    let mut measured = None;
    for &space in arch.spaces() {
        let fixed = arch.fixed_count(space);
        let mixtures = arch.mixture_count(space);
        let a = IterationAudit { i, fixed, mixtures, primitives: fixed + mixtures * NUM_OPS };
        if measured.is_some_and(|m| m != a) {
            return Err(Error::Audit(format!("spaces disagree at iteration {i}")));
        }
        measured = Some(a);
    }
    let measured = measured.expect("node space is always active");
    let want = expected_audit(i, NUM_OPS);
    if measured != want {
        return Err(Error::Audit(format!("iteration {i}: counted {measured:?}, expected {want:?}")));
    }
    Ok(measured)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditTrail {
    pub iterations: Vec<IterationAudit>,
}

impl AuditTrail {
    pub fn total_primitives(&self) -> usize {
        self.iterations.iter().map(|a| a.primitives).sum()
    }
}

/// Number of divisions needed to reach at least `target` vertices from one.
pub fn divisions_for(target: usize) -> usize {
    let mut size = 1;
    let mut k = 0;
    while size < target {
        size *= 2;
        k += 1;
    }
    k
}

/// Replaces every mixture link by the fixed link given by `pick`, keeping
/// the endpoints. Useful for tests and for forcing a differentiated state.
pub fn fix_all<F, G>(arch: &ArchDag, mut node: F, mut rel: G) -> ArchDag
where
    F: FnMut(&Link<crate::ops::NodeOp>) -> crate::ops::NodeOp,
    G: FnMut(&Link<crate::ops::RelOp>) -> crate::ops::RelOp,
{
    let mut out = arch.clone();
    for l in &mut out.node_links {
        if l.op.is_mixture() {
            l.op = LinkOp::Fixed(node(l));
        }
    }
    for l in &mut out.rel_links {
        if l.op.is_mixture() {
            l.op = LinkOp::Fixed(rel(l));
        }
    }
    out
}
