//! Graph storage, generators and dataset files.

use proptest::prelude::*;
use rand::Rng;
use relnas_core::grad::Tensor;
use relnas_core::graph::{
    build_dataset, count_triangles, gen_edge_task, gen_sbm, seeded_rng, Dataset, DatasetSpec, Graph, Sbm,
};

fn brute_triangles(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut adj = vec![vec![false; n]; n];
    for &(s, t) in edges {
        if s != t {
            adj[s][t] = true;
            adj[t][s] = true;
        }
    }
    let mut c = 0;
    for a in 0..n {
        for b in a + 1..n {
            for d in b + 1..n {
                c += usize::from(adj[a][b] && adj[b][d] && adj[a][d]);
            }
        }
    }
    c
}

fn random_edges(n: usize, m: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = seeded_rng(seed);
    (0..m).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect()
}

proptest! {
    #[test]
    fn triangles_match_brute_force(n in 1usize..12, m in 0usize..40, seed in any::<u64>()) {
        let e = random_edges(n, m, seed);
        prop_assert_eq!(count_triangles(n, &e), brute_triangles(n, &e));
    }

    /// Every input edge appears exactly once among the incoming lists, with
    /// its feature row carried along.
    #[test]
    fn csr_preserves_edges_and_features(n in 1usize..10, m in 0usize..30, seed in any::<u64>()) {
        let e = random_edges(n, m, seed);
        let feats = Tensor::new(vec![m, 1], (0..m).map(|i| i as f64).collect()).unwrap();
        let g = Graph::from_edges(n, &e, Tensor::zeros(vec![n, 1]), Some(feats)).unwrap();
        prop_assert_eq!(g.m(), m);
        let mut seen = Vec::new();
        for t in 0..n {
            for (s, eid) in g.neighbors(t).unwrap() {
                let orig = g.e_in().row(eid)[0] as usize;
                prop_assert_eq!(e[orig], (s, t));
                seen.push(orig);
            }
            prop_assert_eq!(g.in_degree(t), e.iter().filter(|x| x.1 == t).count());
        }
        seen.sort();
        prop_assert_eq!(seen, (0..m).collect::<Vec<_>>());
    }
}

#[test]
fn sbm_labels_and_hints() {
    let sbm = Sbm { n: 20, k: 4, p_intra: 0.6, p_inter: 0.05 };
    let g = gen_sbm(&sbm, 5, 0.5, 3).unwrap();
    let labels = g.node_labels.as_ref().unwrap();
    assert_eq!(labels, &(0..20).map(|i| i / 5).collect::<Vec<_>>());
    let hinted: Vec<usize> = (0..20).filter(|&i| g.v_in().row(i).iter().any(|&x| x != 0.0)).collect();
    assert_eq!(hinted.len(), 10);
    for i in hinted {
        let row = g.v_in().row(i);
        assert_eq!(row[labels[i]], 1.0);
        assert_eq!(row.iter().sum::<f64>(), 1.0);
    }
    assert_eq!(gen_sbm(&sbm, 5, 0.5, 3).unwrap(), g);
}

#[test]
fn edge_labels_mark_intra_community_edges() {
    let sbm = Sbm { n: 12, k: 3, p_intra: 0.5, p_inter: 0.3 };
    let g = gen_edge_task(&sbm, 4, 8).unwrap();
    let labels = g.edge_labels.as_ref().unwrap();
    for (e, (s, t)) in g.edges().into_iter().enumerate() {
        assert_eq!(labels[e], usize::from(sbm.community(s) == sbm.community(t)));
    }
    assert!(labels.contains(&0) && labels.contains(&1));
}

fn specs() -> Vec<DatasetSpec> {
    let sbm = Sbm { n: 8, k: 2, p_intra: 0.5, p_inter: 0.2 };
    vec![
        DatasetSpec::SbmNode { sbm, d_v: 2, hint_fraction: 0.25, counts: [2, 1, 1] },
        DatasetSpec::SbmEdge { sbm, d_v: 3, counts: [2, 1, 1] },
        DatasetSpec::GraphReg { n_graphs: 10, n_min: 4, n_max: 7 },
        DatasetSpec::PointCloud { points: 10, k: 3, counts: [2, 1, 1] },
    ]
}

#[test]
fn datasets_round_trip_through_json() {
    for spec in specs() {
        let ds = build_dataset(&spec, 5).unwrap();
        ds.validate().unwrap();
        let text = ds.to_json().unwrap();
        let back = Dataset::from_json(&text).unwrap();
        assert_eq!(back, ds, "{spec:?}");
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(build_dataset(&spec, 5).unwrap(), ds);
    }
}

#[test]
fn dataset_files_reject_unknown_fields_and_bad_labels() {
    let ds = build_dataset(&specs()[0], 1).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&ds.to_json().unwrap()).unwrap();
    v["extra"] = serde_json::json!(1);
    assert!(Dataset::from_json(&v.to_string()).is_err());

    let mut v: serde_json::Value = serde_json::from_str(&ds.to_json().unwrap()).unwrap();
    v["num_classes"] = serde_json::json!(1);
    let err = Dataset::from_json(&v.to_string()).unwrap_err();
    assert!(err.to_string().contains("out of range"), "{err}");

    let spec: Result<DatasetSpec, _> =
        serde_json::from_str(r#"{"kind": "graph_reg", "n_graphs": 3, "n_min": 3, "n_max": 4, "typo": 0}"#);
    assert!(spec.is_err());
}

#[test]
fn dataset_files_save_and_load() {
    let ds = build_dataset(&specs()[2], 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    ds.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), ds);
    let missing = Dataset::load(&dir.path().join("nope.json")).unwrap_err();
    assert!(missing.to_string().contains("nope.json"));
}
