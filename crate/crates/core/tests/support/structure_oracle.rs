//! Division, differentiation and validation re-checked on plain edge lists
//! by an independent implementation of the division step.

use std::collections::{BTreeMap, BTreeSet};

use relnas_core::arch::{ArchDag, LinkOp, Vertex};
use relnas_core::graph::seeded_rng;
use relnas_core::ops::OpKind;
use relnas_core::proliferate::{audit_iteration, divide, expected_audit, init_arch, validate_divided};
use relnas_core::search::{discretize, random_strategy, sgas_lite_decide};

/// `(src, dst, op)` with vertices as plain integers: inputs are -2 and -1,
/// inner vertices 1..; `op` is `None` for a mixture.
pub type Edge = (i64, i64, Option<usize>);

pub fn code(v: Vertex) -> i64 {
    match v {
        Vertex::In0 => -2,
        Vertex::In1 => -1,
        Vertex::Inner(i) => i as i64,
    }
}

pub fn edges<K: OpKind>(links: &[relnas_core::Link<K>]) -> BTreeSet<Edge> {
    links
        .iter()
        .map(|l| {
            let op = match &l.op {
                LinkOp::Fixed(k) => Some(k.index()),
                LinkOp::Mixture(_) => None,
            };
            (code(l.src), code(l.dst), op)
        })
        .collect()
}

/// The division step over one space, written directly from the algorithm:
/// add the child's local supernet, then re-source every link leaving an old
/// vertex `s` to `s + l` unless it is the parent-to-child link.
/// A re-sourced link: (old src, dst) -> (new src, dst).
pub type Rewire = ((i64, i64), (i64, i64));

pub fn oracle_divide(old: &BTreeSet<Edge>, l: i64) -> (BTreeSet<Edge>, Vec<Rewire>) {
    let mut all: Vec<Edge> = old.iter().copied().collect();
    for i in 1..=l {
        all.push((i, i + l, None));
        for &(s, t, _) in old {
            if t == i {
                all.push((s, i + l, None));
            }
        }
    }
    let mut moved = Vec::new();
    let out = all
        .into_iter()
        .map(|(s, t, op)| {
            if s >= 1 && s <= l && s + l != t {
                if op.is_some() {
                    moved.push(((s, t), (s + l, t)));
                }
                (s + l, t, op)
            } else {
                (s, t, op)
            }
        })
        .collect();
    moved.sort();
    (out, moved)
}

/// Order position of every vertex, inputs first.
pub fn ranks(arch: &ArchDag) -> BTreeMap<i64, usize> {
    let mut r = BTreeMap::from([(-2, 0), (-1, 1)]);
    for (p, &i) in arch.order.iter().enumerate() {
        r.insert(i as i64, p + 2);
    }
    r
}

/// Kahn's algorithm over the inner vertices, ignoring the stored order.
pub fn acyclic(n: i64, e: &BTreeSet<Edge>) -> bool {
    let mut indeg: BTreeMap<i64, usize> = (1..=n).map(|v| (v, 0)).collect();
    for &(s, t, _) in e {
        if s >= 1 {
            *indeg.get_mut(&t).unwrap() += 1;
        }
    }
    let mut ready: Vec<i64> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&v, _)| v).collect();
    let mut seen = 0;
    while let Some(v) = ready.pop() {
        seen += 1;
        for &(s, t, _) in e {
            if s == v {
                let d = indeg.get_mut(&t).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(t);
                }
            }
        }
    }
    seen == n
}

/// Independent invariant checks on one space's edge list.
pub fn check_space(arch: &ArchDag, e: &BTreeSet<Edge>, after_division: bool) -> Result<(), String> {
    if !acyclic(arch.n_vertices as i64, e) {
        return Err("cycle".into());
    }
    let r = ranks(arch);
    let n = arch.n_vertices as i64;
    for &(s, t, _) in e {
        let (Some(rs), Some(rt)) = (r.get(&s), r.get(&t)) else { return Err(format!("unknown vertex in {s}->{t}")) };
        if rs >= rt {
            return Err(format!("cycle or order violation at {s}->{t}"));
        }
    }
    let pairs: BTreeSet<(i64, i64)> = e.iter().map(|&(s, t, _)| (s, t)).collect();
    if pairs.len() != e.len() {
        return Err("duplicate link".into());
    }
    for t in 1..=n {
        let fixed = e.iter().filter(|&&(_, d, op)| d == t && op.is_some()).count();
        let mix = e.iter().filter(|&&(_, d, op)| d == t && op.is_none()).count();
        if after_division {
            let want = if t <= n / 2 { (2, 0) } else { (0, 3) };
            if (fixed, mix) != want {
                return Err(format!("vertex {t}: {fixed} fixed, {mix} mixtures after division"));
            }
        } else if mix == 0 && fixed != 2 {
            return Err(format!("vertex {t}: {fixed} fixed inputs"));
        }
    }
    Ok(())
}

pub fn check_all(arch: &ArchDag, after_division: bool) -> Result<(), String> {
    check_space(arch, &edges(&arch.node_links), after_division)?;
    if arch.relation_space {
        check_space(arch, &edges(&arch.rel_links), after_division)?;
    }
    Ok(())
}

/// Differentiates with a randomly chosen resolver: random sampling,
/// discretization of random alphas, or repeated progressive fixing.
pub fn differentiate(arch: &ArchDag, how: u8, seed: u64) -> ArchDag {
    use rand::Rng;
    let mut rng = seeded_rng(seed);
    match how % 3 {
        0 => random_strategy(arch, &mut rng),
        1 => {
            let mut a = arch.clone();
            for l in a.node_links.iter_mut().filter(|l| l.op.is_mixture()) {
                l.op = LinkOp::Mixture((0..8).map(|_| rng.random_range(-2.0..2.0)).collect());
            }
            for l in a.rel_links.iter_mut().filter(|l| l.op.is_mixture()) {
                l.op = LinkOp::Mixture((0..8).map(|_| rng.random_range(-2.0..2.0)).collect());
            }
            discretize(&a)
        }
        _ => {
            let mut a = arch.clone();
            while !a.is_differentiated() {
                a = sgas_lite_decide(&a).0;
                a.validate().expect("progressive fixing keeps the arch valid");
            }
            a
        }
    }
}

/// One full run from the initial supernet to size 16, alternating a
/// randomly chosen resolver with division, checking every state.
pub fn cycle(seed: u64, how: u8, relation: bool) -> Result<(), String> {
    let mut arch = init_arch(4, 2, relation);
    check_all(&arch, false)?;
    if audit_iteration(&arch, 0).map_err(|e| e.to_string())? != expected_audit(0, 8) {
        return Err("initial audit".into());
    }
    let mut i = 0;
    loop {
        arch = differentiate(&arch, how.wrapping_add(i as u8), seed.wrapping_add(i));
        arch.validate().map_err(|e| e.to_string())?;
        if !arch.is_differentiated() {
            return Err("mixtures left after differentiation".into());
        }
        check_all(&arch, false)?;
        if arch.n_vertices >= 16 {
            return Ok(());
        }
        let l = arch.n_vertices as i64;
        let (want_node, moved_node) = oracle_divide(&edges(&arch.node_links), l);
        let (want_rel, moved_rel) = oracle_divide(&edges(&arch.rel_links), l);
        let div = divide(&arch).map_err(|e| e.to_string())?;
        if edges(&div.arch.node_links) != want_node {
            return Err(format!("node links differ from the oracle at size {l}"));
        }
        if relation && edges(&div.arch.rel_links) != want_rel {
            return Err(format!("relation links differ from the oracle at size {l}"));
        }
        let mut moved: Vec<_> =
            div.rewired.iter().map(|r| ((code(r.from.0), code(r.from.1)), (code(r.to.0), code(r.to.1)))).collect();
        moved.sort();
        let mut want_moved = moved_node;
        if relation {
            want_moved.extend(moved_rel);
        }
        want_moved.sort();
        if moved != want_moved {
            return Err(format!("rewiring differs from the oracle at size {l}"));
        }
        validate_divided(&div.arch).map_err(|e| e.to_string())?;
        check_all(&div.arch, true)?;
        i += 1;
        if div.arch.n_vertices != 1 << i {
            return Err(format!("size {} after {i} divisions", div.arch.n_vertices));
        }
        let audit = audit_iteration(&div.arch, i as usize).map_err(|e| e.to_string())?;
        if audit != expected_audit(i as usize, 8) {
            return Err(format!("audit {audit:?} at iteration {i}"));
        }
        arch = div.arch;
    }
}
