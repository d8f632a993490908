//! Finite-difference checks of the operation zoo, mixtures, heads and a
//! size-2 network. Each check returns `(name, relative error)` so the same
//! suite serves the property tests and the acceptance report.

use rand::Rng;
use relnas_core::arch::{node_link_forward, rel_link_forward, LinkVars};
use relnas_core::grad::{finite_diff_check, Tape, Tensor, Var};
use relnas_core::graph::{seeded_rng, Graph, Task};
use relnas_core::heads::{global_features, graph_readout, predict, predict_edge_from_nodes, BnMode};
use relnas_core::network::{task_loss, DataShape, Mode, NetConfig, Network};
use relnas_core::ops::{
    node_op_forward, rel_op_forward, FilmParams, FilmVars, Modulation, NodeOp, OpKind, RelOp, ZooConfig,
};
use relnas_core::params::{Binder, Group};
use relnas_core::proliferate::{divide, fix_all, init_arch};
use relnas_core::{LinkOp, Result};

pub const EPS: f64 = 1e-6;
pub const TOL: f64 = 1e-5;

pub type Report = Vec<(String, f64)>;

pub fn rand_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// A random graph on `n` nodes with random node and edge features.
pub fn instance(seed: u64, n: usize, dv: usize, de: usize) -> (Graph, Tensor, Tensor) {
    let mut rng = seeded_rng(seed);
    let mut edges = Vec::new();
    for t in 0..n {
        for s in 0..n {
            if s != t && rng.random::<f64>() < 0.5 {
                edges.push((s, t));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, n - 1));
    }
    let v = rand_tensor(n, dv, &mut rng);
    let e = rand_tensor(edges.len(), de, &mut rng);
    let g = Graph::from_edges(n, &edges, v.clone(), Some(e.clone())).unwrap();
    let e = g.e_in().clone();
    (g, v, e)
}

fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = seeded_rng(seed ^ 0x77);
    let r = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let r = tape.constant(r);
    let p = tape.mul(y, r)?;
    tape.sum_all(p)
}

/// Errors from the checker count as infinitely wrong.
fn fd(out: &mut Report, name: &str, x: &Tensor, f: impl Fn(&mut Tape, Var) -> Result<Var>) {
    out.push((name.to_string(), finite_diff_check(f, x, EPS).unwrap_or(f64::INFINITY)));
}

fn film_leaves(tape: &mut Tape, p: &FilmParams, which: Option<(usize, Var)>) -> FilmVars {
    let ts = [&p.w1, &p.w2, &p.wk, &p.wb];
    let mut vars = ts.map(|t| tape.constant(t.clone()));
    if let Some((i, v)) = which {
        vars[i] = v;
    }
    FilmVars { w1: vars[0], w2: vars[1], wk: vars[2], wb: vars[3] }
}

fn film_tensor(p: &FilmParams, i: usize) -> &Tensor {
    [&p.w1, &p.w2, &p.wk, &p.wb][i]
}

pub fn node_ops(seed: u64, n: usize, dv: usize, de: usize) -> Report {
    let mut out = Report::new();
    let (g, v, e) = instance(seed, n, dv, de);
    let cfg = ZooConfig::default();
    let film = FilmParams::init(de, dv, &mut seeded_rng(seed + 1));
    for kind in NodeOp::ALL {
        let name = kind.name();
        fd(&mut out, &format!("{name}/V"), &v, |t, x| {
            let ev = t.constant(e.clone());
            let f = film_leaves(t, &film, None);
            let y = node_op_forward(t, kind, x, ev, &g, Modulation::Film(&f), &cfg)?;
            project(t, y, seed)
        });
        if !kind.has_weights() {
            continue;
        }
        fd(&mut out, &format!("{name}/E"), &e, |t, x| {
            let vv = t.constant(v.clone());
            let f = film_leaves(t, &film, None);
            let y = node_op_forward(t, kind, vv, x, &g, Modulation::Film(&f), &cfg)?;
            project(t, y, seed)
        });
        for i in 0..4 {
            fd(&mut out, &format!("{name}/film{i}"), film_tensor(&film, i), |t, x| {
                let vv = t.constant(v.clone());
                let ev = t.constant(e.clone());
                let f = film_leaves(t, &film, Some((i, x)));
                let y = node_op_forward(t, kind, vv, ev, &g, Modulation::Film(&f), &cfg)?;
                project(t, y, seed)
            });
        }
    }
    out
}

pub fn rel_ops(seed: u64, n: usize, dv: usize, de: usize) -> Report {
    let mut out = Report::new();
    let (g, v, e) = instance(seed, n, dv, de);
    let cfg = ZooConfig::default();
    let film = FilmParams::init(dv, de, &mut seeded_rng(seed + 2));
    for kind in RelOp::ALL {
        let name = kind.name();
        fd(&mut out, &format!("{name}/E"), &e, |t, x| {
            let vv = t.constant(v.clone());
            let f = film_leaves(t, &film, None);
            let y = rel_op_forward(t, kind, vv, x, &g, Modulation::Film(&f), &cfg)?;
            project(t, y, seed)
        });
        if !kind.has_weights() {
            continue;
        }
        fd(&mut out, &format!("{name}/V"), &v, |t, x| {
            let ev = t.constant(e.clone());
            let f = film_leaves(t, &film, None);
            let y = rel_op_forward(t, kind, x, ev, &g, Modulation::Film(&f), &cfg)?;
            project(t, y, seed)
        });
        for i in 0..4 {
            fd(&mut out, &format!("{name}/film{i}"), film_tensor(&film, i), |t, x| {
                let vv = t.constant(v.clone());
                let ev = t.constant(e.clone());
                let f = film_leaves(t, &film, Some((i, x)));
                let y = rel_op_forward(t, kind, vv, ev, &g, Modulation::Film(&f), &cfg)?;
                project(t, y, seed)
            });
        }
    }
    out
}

pub fn mixtures(seed: u64, n: usize, dv: usize, de: usize) -> Report {
    let mut out = Report::new();
    let (g, v, e) = instance(seed, n, dv, de);
    let cfg = ZooConfig::default();
    let mut rng = seeded_rng(seed + 3);
    let alpha = Tensor::new(vec![8], rand_tensor(1, 8, &mut rng).into_data()).unwrap();
    let node_films: Vec<FilmParams> = (0..8).map(|_| FilmParams::init(de, dv, &mut rng)).collect();
    let rel_films: Vec<FilmParams> = (0..8).map(|_| FilmParams::init(dv, de, &mut rng)).collect();
    let bind = |t: &mut Tape, films: &[FilmParams], a: Var| {
        let mut lv = LinkVars { alpha: Some(a), ..Default::default() };
        for (k, f) in films.iter().enumerate() {
            lv.film[k] = Some(film_leaves(t, f, None));
        }
        lv
    };
    let node_mix = LinkOp::<NodeOp>::uniform();
    let rel_mix = LinkOp::<RelOp>::uniform();
    fd(&mut out, "node mixture/alpha", &alpha, |t, a| {
        let (vv, ev) = (t.constant(v.clone()), t.constant(e.clone()));
        let lv = bind(t, &node_films, a);
        let y = node_link_forward(t, &node_mix, &lv, vv, ev, &g, &cfg)?;
        project(t, y, seed)
    });
    fd(&mut out, "node mixture/V", &v, |t, x| {
        let (a, ev) = (t.constant(alpha.clone()), t.constant(e.clone()));
        let lv = bind(t, &node_films, a);
        let y = node_link_forward(t, &node_mix, &lv, x, ev, &g, &cfg)?;
        project(t, y, seed)
    });
    fd(&mut out, "rel mixture/alpha", &alpha, |t, a| {
        let (vv, ev) = (t.constant(v.clone()), t.constant(e.clone()));
        let lv = bind(t, &rel_films, a);
        let y = rel_link_forward(t, &rel_mix, &lv, vv, ev, &g, &cfg)?;
        project(t, y, seed)
    });
    fd(&mut out, "rel mixture/E", &e, |t, x| {
        let (a, vv) = (t.constant(alpha.clone()), t.constant(v.clone()));
        let lv = bind(t, &rel_films, a);
        let y = rel_link_forward(t, &rel_mix, &lv, vv, x, &g, &cfg)?;
        project(t, y, seed)
    });
    out
}

pub fn heads(seed: u64, n: usize, dv: usize, de: usize) -> Report {
    let mut out = Report::new();
    let (g, v, e) = instance(seed, n, dv, de);
    let mut rng = seeded_rng(seed + 4);
    let v2 = rand_tensor(n, dv, &mut rng);
    let wv = rand_tensor(2 * dv, dv, &mut rng);
    let we = rand_tensor(de, de, &mut rng);
    let cv = rand_tensor(dv, 3, &mut rng);
    let ce = rand_tensor(2 * dv, 2, &mut rng);
    let cg = rand_tensor(dv + de, 2, &mut rng);
    let mean = vec![0.0; dv.max(de)];
    let var = vec![1.0; dv.max(de)];
    let node_labels: std::sync::Arc<[usize]> = (0..n).map(|i| i % 3).collect();
    let edge_labels: std::sync::Arc<[usize]> = (0..g.m()).map(|i| i % 2).collect();
    let running = (&mean[..dv], &var[..dv]);
    // node head through W_V and C_V
    let node_loss = |t: &mut Tape, x: Var, w: Var, c: Var| -> Result<Var> {
        let x2 = t.constant(v2.clone());
        let (vg, _) = global_features(t, &[x, x2], w, BnMode::Train { running })?;
        let y = predict(t, vg, c)?;
        t.cross_entropy(y, node_labels.clone())
    };
    fd(&mut out, "node head/V", &v, |t, x| {
        let w = t.constant(wv.clone());
        let c = t.constant(cv.clone());
        node_loss(t, x, w, c)
    });
    fd(&mut out, "node head/W_V", &wv, |t, w| {
        let x = t.constant(v.clone());
        let c = t.constant(cv.clone());
        node_loss(t, x, w, c)
    });
    fd(&mut out, "node head/C_V", &cv, |t, c| {
        let x = t.constant(v.clone());
        let w = t.constant(wv.clone());
        node_loss(t, x, w, c)
    });
    // edge head from node features
    fd(&mut out, "edge head/C_E", &ce, |t, c| {
        let x = t.constant(v.clone());
        let y = predict_edge_from_nodes(t, x, g.edge_src().clone(), g.edge_dst().clone(), c)?;
        t.cross_entropy(y, edge_labels.clone())
    });
    // graph readout over both branches, eval-mode BN for single-row safety
    let graph_loss = |t: &mut Tape, x: Var, ev: Var| -> Result<Var> {
        let w = t.constant(we.clone());
        let (eg, _) = global_features(t, &[ev], w, BnMode::Eval { running: (&mean[..de], &var[..de]) })?;
        let r = graph_readout(t, x, Some(eg))?;
        let c = t.constant(cg.clone());
        let y = predict(t, r, c)?;
        t.cross_entropy(y, vec![1].into())
    };
    fd(&mut out, "graph head/V", &v, |t, x| {
        let ev = t.constant(e.clone());
        graph_loss(t, x, ev)
    });
    fd(&mut out, "graph head/E", &e, |t, ev| {
        let x = t.constant(v.clone());
        graph_loss(t, x, ev)
    });
    out
}

/// Full forward pass of a size-2 network (stem, supernet DAG, head) against
/// finite differences on a sample of parameters of every kind.
pub fn size_two_network(seed: u64) -> Report {
    let mut out = Report::new();
    for (task, relation) in [(Task::NodeCls, true), (Task::EdgeCls, false), (Task::GraphReg, true)] {
        let (g, _, _) = instance(seed, 6, 3, 2);
        let g = match task {
            Task::NodeCls => g.with_node_labels((0..6).map(|i| i % 2).collect()).unwrap(),
            Task::EdgeCls => {
                let m = g.m();
                g.with_edge_labels((0..m).map(|i| i % 2).collect()).unwrap()
            }
            _ => g.with_graph_target(0.7),
        };
        let d1 = fix_all(&init_arch(3, 2, relation), |_| NodeOp::Gem2, |_| RelOp::Gauss);
        let arch = divide(&d1).unwrap().arch;
        let shape = DataShape { task, d_v: 3, d_e: 2, num_classes: if task == Task::GraphReg { 1 } else { 2 } };
        let net = Network::new(arch, shape, NetConfig::default(), &mut seeded_rng(seed + 3)).unwrap();
        let net = &net;
        let g = &g;
        let probe = |id: usize| {
            move |t: &mut Tape, x: Var| -> Result<Var> {
                let mut b = Binder::new(&net.params, &[]);
                b.set(id, x);
                let (out, _) = net.forward(t, &mut b, g, Mode::Search, &mut seeded_rng(0))?;
                Ok(task_loss(t, out, g, task)?.expect("labels"))
            }
        };
        for (id, p) in net.params.iter().enumerate() {
            let weighted = ["V_GEM2", "E_GAUSS", "V_STD", "E_HAD"].iter().any(|k| p.name.contains(k));
            let sample = p.group == Group::Arch
                || p.name.starts_with("stem")
                || p.name.starts_with("head/W")
                || p.name.starts_with("head/C")
                || (p.name.contains("/W1") && weighted);
            if sample {
                fd(&mut out, &format!("{task:?}/{}", p.name), &p.value, probe(id));
            }
        }
    }
    out
}

/// Names of the checks above `TOL`, with their errors.
pub fn failures(r: &Report) -> Vec<String> {
    r.iter()
        .filter(|(_, e)| e.partial_cmp(&TOL) != Some(std::cmp::Ordering::Less))
        .map(|(n, e)| format!("{n}: {e:.2e}"))
        .collect()
}

pub fn max_error(r: &Report) -> f64 {
    r.iter().map(|(_, e)| if e.is_nan() { f64::INFINITY } else { *e }).fold(0.0, f64::max)
}
