//! Retraining, evaluation, splits and checkpoints.

use relnas_core::checkpoint::{load_checkpoint, save_checkpoint};
use relnas_core::grad::Tensor;
use relnas_core::graph::{build_dataset, seeded_rng, Dataset, DatasetSpec, Graph, Sbm, Task};
use relnas_core::network::NetConfig;
use relnas_core::proliferate::init_arch;
use relnas_core::search::random_strategy;
use relnas_core::train::{evaluate, split_train_val, train_final, TrainConfig};
use relnas_core::ArchDag;

fn constant_label_dataset() -> Dataset {
    let mut rng = seeded_rng(0);
    let mut graph = |n: usize| {
        use rand::Rng;
        let edges: Vec<(usize, usize)> = (0..n).flat_map(|t| [((t + 1) % n, t), ((t + 2) % n, t)]).collect();
        let v = Tensor::new(vec![n, 2], (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        Graph::from_edges(n, &edges, v, None).unwrap().with_node_labels(vec![1; n]).unwrap()
    };
    Dataset {
        task: Task::NodeCls,
        d_v: 2,
        d_e: 1,
        num_classes: 2,
        train: (0..4).map(|i| graph(6 + i)).collect(),
        val: vec![graph(7)],
        test: vec![graph(8)],
    }
}

fn small_arch(seed: u64) -> ArchDag {
    random_strategy(&init_arch(4, 2, true), &mut seeded_rng(seed))
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 2, lr: 0.01, ..TrainConfig::default() }
}

#[test]
fn constant_labels_are_learned() {
    let ds = constant_label_dataset();
    let (_, report) = train_final(&small_arch(1), &ds, &NetConfig::default(), &quick(50), 3).unwrap();
    let reached = report.history.iter().position(|h| h.val_metric == 1.0);
    assert!(reached.is_some(), "val accuracy never hit 1: {:?}", report.history.last());
    assert_eq!(report.test.unwrap().value, 1.0);
}

fn sbm_node(seed: u64) -> Dataset {
    let spec = DatasetSpec::SbmNode {
        sbm: Sbm { n: 16, k: 2, p_intra: 0.4, p_inter: 0.05 },
        d_v: 2,
        hint_fraction: 0.25,
        counts: [4, 2, 2],
    };
    build_dataset(&spec, seed).unwrap()
}

#[test]
fn retraining_is_deterministic() {
    let ds = sbm_node(5);
    let arch = small_arch(2);
    let (a, ra) = train_final(&arch, &ds, &NetConfig::default(), &quick(4), 9).unwrap();
    let (b, rb) = train_final(&arch, &ds, &NetConfig::default(), &quick(4), 9).unwrap();
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
    assert_eq!(a.params, b.params);
}

#[test]
fn best_epoch_parameters_are_restored() {
    let ds = sbm_node(6);
    let (net, report) = train_final(&small_arch(3), &ds, &NetConfig::default(), &quick(6), 1).unwrap();
    let best = &report.history[report.best_epoch];
    assert_eq!(best.val_metric, report.val.value);
    assert!(report.history.iter().all(|h| h.val_metric <= best.val_metric));
    let again = evaluate(&net, &ds.val).unwrap();
    assert_eq!(again.value, report.val.value);
    assert_eq!(again.loss.to_bits(), report.val.loss.to_bits());
}

#[test]
fn plateau_only_ever_halves_the_rate() {
    let ds = sbm_node(7);
    let cfg = TrainConfig { patience: 1, ..quick(8) };
    let (_, report) = train_final(&small_arch(4), &ds, &NetConfig::default(), &cfg, 2).unwrap();
    let mut lr = cfg.lr;
    for h in &report.history {
        assert!(h.lr == lr || h.lr == lr * 0.5, "{} after {}", h.lr, lr);
        lr = h.lr;
    }
}

#[test]
fn undifferentiated_architectures_are_rejected() {
    let ds = sbm_node(1);
    assert!(train_final(&init_arch(4, 2, true), &ds, &NetConfig::default(), &quick(1), 0).is_err());
}

#[test]
fn split_sizes_and_reproducibility() {
    let mut ds = sbm_node(2);
    let extra = ds.train[0].clone();
    ds.train = vec![extra; 10];
    let s = split_train_val(&ds, 4).unwrap();
    assert_eq!((s.train.len(), s.val.len()), (5, 5));
    ds.train.push(ds.train[0].clone());
    let s = split_train_val(&ds, 4).unwrap();
    assert_eq!((s.train.len(), s.val.len()), (6, 5));

    let ds = build_dataset(
        &DatasetSpec::SbmNode {
            sbm: Sbm { n: 8, k: 2, p_intra: 0.5, p_inter: 0.1 },
            d_v: 2,
            hint_fraction: 0.5,
            counts: [9, 0, 0],
        },
        3,
    )
    .unwrap();
    assert_eq!(split_train_val(&ds, 11).unwrap(), split_train_val(&ds, 11).unwrap());
    let a = split_train_val(&ds, 11).unwrap();
    let mut all: Vec<_> = a.train.iter().chain(&a.val).map(|g| format!("{g:?}")).collect();
    let mut orig: Vec<_> = ds.train.iter().map(|g| format!("{g:?}")).collect();
    all.sort();
    orig.sort();
    assert_eq!(all, orig);
    let mut one = ds.clone();
    one.train.truncate(1);
    assert!(split_train_val(&one, 0).is_err());
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let ds = sbm_node(8);
    let arch = small_arch(5);
    let (net, _) = train_final(&arch, &ds, &NetConfig::default(), &quick(2), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&net, &path).unwrap();
    assert!(path.with_extension("bin").exists());
    let back = load_checkpoint(&path, arch.clone()).unwrap();
    for (p, q) in net.params.iter().zip(back.params.iter()) {
        assert_eq!(p.name, q.name);
        assert!(p.value.bit_eq(&q.value), "{}", p.name);
    }
    let a = evaluate(&net, &ds.test).unwrap();
    let b = evaluate(&back, &ds.test).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());

    // a node-only architecture lacks the relation parameters
    let wrong = load_checkpoint(&path, random_strategy(&init_arch(4, 2, false), &mut seeded_rng(0)));
    assert!(wrong.is_err());
}
