use std::collections::BTreeSet;

use super::*;
use crate::nn::{nll_loss, Model};
use crate::synth::{generate_task_stream, SynthConfig};

fn tiny_stream(tasks: usize) -> Vec<PreparedTask> {
    let cfg = SynthConfig {
        num_tasks: tasks,
        nodes_per_task: 120,
        blocks: 3,
        p_in: 0.06,
        p_out: 0.004,
        seed: 5,
        ..SynthConfig::default()
    };
    let dw = DeepWalkConfig {
        dims: 8,
        walks_per_node: 2,
        walk_length: 10,
        epochs: 1,
        ..DeepWalkConfig::default()
    };
    prepare_stream(generate_task_stream(&cfg).unwrap(), &dw).unwrap()
}

fn tiny_cfg() -> RunConfig {
    RunConfig {
        model: ModelConfig {
            hidden: 8,
            heads: 2,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        },
        sampler: SamplerConfig::bfs(10),
        seed: 1,
        ..RunConfig::default()
    }
}

fn train_pool(t: &PreparedTask) -> usize {
    t.graph.split_nodes(Split::Train).len()
}

#[test]
fn method_labels_round_trip() {
    for label in [
        "egocl-bfs",
        "egocl-rwr",
        "egocl-bfs-gcn",
        "incremental-bfs",
        "incremental-full",
        "incremental-full-gcn",
        "node-replay",
        "ewc",
        "er-mf",
        "retrain-bfs",
        "retrain-full",
    ] {
        let m: Method = label.parse().unwrap();
        assert_eq!(m.to_string(), label);
    }
    assert_eq!("egocl".parse::<Method>().unwrap().to_string(), "egocl-bfs");
    assert!("egocl-full".parse::<Method>().is_err());
    assert!("ewc-bfs".parse::<Method>().is_err());
    assert!("replay".parse::<Method>().is_err());
    for label in ["gat", "gcn", "ego-bfs", "ego-rwr", "ego-bfs-gcn"] {
        assert_eq!(label.parse::<StaticMethod>().unwrap().to_string(), label);
    }
    assert!("ego-dfs".parse::<StaticMethod>().is_err());
}

#[test]
fn mismatched_parameters_are_config_errors() {
    let cfg = RunConfig {
        replay_rate: Some(0.1),
        ..tiny_cfg()
    };
    assert!(matches!(cfg.resolve(&"ewc".parse().unwrap()), Err(Error::Config(_))));
    let cfg = RunConfig {
        ewc_lambda: Some(1.0),
        ..tiny_cfg()
    };
    assert!(cfg.resolve(&"egocl-bfs".parse().unwrap()).is_err());
    let cfg = RunConfig {
        replay_rate: Some(1.5),
        ..tiny_cfg()
    };
    assert!(cfg.resolve(&"egocl-bfs".parse().unwrap()).is_err());
}

#[test]
fn single_task_gives_one_by_one_matrix() {
    let tasks = tiny_stream(1);
    for label in ["egocl-bfs", "incremental-bfs", "node-replay", "ewc", "er-mf", "retrain-full"] {
        let m: Method = label.parse().unwrap();
        let run = run_stream(&tasks, &m, &tiny_cfg()).unwrap();
        assert_eq!(run.matrix.num_tasks(), 1);
        assert!(run.matrix.is_complete());
    }
}

#[test]
fn egocl_without_replay_is_incremental() {
    let tasks = tiny_stream(3);
    let cfg = RunConfig {
        replay_rate: Some(0.0),
        ..tiny_cfg()
    };
    let a = run_stream(&tasks, &Method::egocl(SamplingStrategy::Bfs), &cfg).unwrap();
    let b = run_stream(&tasks, &Method::incremental(Input::Ego(SamplingStrategy::Bfs)), &tiny_cfg()).unwrap();
    for (la, lb) in a.losses.iter().flatten().zip(b.losses.iter().flatten()) {
        assert!((la - lb).abs() <= 1e-9);
    }
    assert_eq!(a.matrix, b.matrix);
    assert_eq!(a.store_sizes, vec![0, 0, 0]);
}

#[test]
fn store_accounting_across_rates() {
    let tasks = tiny_stream(3);
    for pct in [0usize, 1, 10, 100] {
        let cfg = RunConfig {
            replay_rate: Some(pct as f64 / 100.0),
            ..tiny_cfg()
        };
        for label in ["egocl-bfs", "node-replay", "er-mf"] {
            let run = run_stream(&tasks, &label.parse().unwrap(), &cfg).unwrap();
            let mut expected = 0;
            for (i, t) in tasks.iter().enumerate() {
                expected += pct * train_pool(t) / 100;
                assert_eq!(run.store_sizes[i], expected, "{label} r={pct}% task {i}");
            }
        }
    }
}

#[test]
fn full_replay_stores_every_train_ego() {
    let tasks = tiny_stream(2);
    let cfg = RunConfig {
        replay_rate: Some(1.0),
        checkpoint_dir: Some(tempfile::tempdir().unwrap().keep()),
        ..tiny_cfg()
    };
    let m = Method::egocl(SamplingStrategy::Bfs);
    let run = run_stream(&tasks, &m, &cfg).unwrap();
    let dir = cfg.checkpoint_dir.as_ref().unwrap();
    let t2 = tasks[1].graph.task_id();
    let store = ReplayStore::load(&dir.join(format!("replay_{m}_{}_task{t2}", cfg.seed)), 1.0, true).unwrap();
    let got: BTreeSet<(usize, usize)> = store.entries().iter().map(|e| (e.source_task, e.ego.ego_node)).collect();
    let expected: BTreeSet<(usize, usize)> = tasks
        .iter()
        .flat_map(|t| t.graph.split_nodes(Split::Train).into_iter().map(|v| (t.graph.task_id(), v)))
        .collect();
    assert_eq!(got, expected);
    assert_eq!(run.store_sizes[1], expected.len());
    let params = checkpoint::load(&dir.join(format!("params_{m}_{}_task{t2}.txt", cfg.seed))).unwrap();
    assert_eq!(params, run.params[1]);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn replay_spans_tasks() {
    let tasks = tiny_stream(2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        replay_rate: Some(0.1),
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..tiny_cfg()
    };
    let m = Method::egocl(SamplingStrategy::Bfs);
    run_stream(&tasks, &m, &cfg).unwrap();
    let t2 = tasks[1].graph.task_id();
    let store = ReplayStore::load(&dir.path().join(format!("replay_{m}_{}_task{t2}", cfg.seed)), 0.1, true).unwrap();
    let sources: BTreeSet<usize> = store.entries().iter().map(|e| e.source_task).collect();
    assert_eq!(sources.len(), 2);
    let nodes: BTreeSet<(usize, usize)> = store.entries().iter().map(|e| (e.source_task, e.ego.ego_node)).collect();
    assert_eq!(nodes.len(), store.len());
    for e in store.entries() {
        let t = tasks.iter().find(|t| t.graph.task_id() == e.source_task).unwrap();
        assert_eq!(t.graph.split(e.ego.ego_node), Split::Train);
    }
}

#[test]
fn replayed_node_loss_matches_recomputation() {
    let tasks = tiny_stream(1);
    let t = &tasks[0];
    let mut store = NodeStore::new(0.2).unwrap();
    let mut r = rng::rng_for(0, &[]);
    store.add_random(&t.graph, &t.x, &mut r);
    let train = t.graph.split_nodes(Split::Train);
    let base = GraphBatch::full_graph(&t.graph, &t.x, &train).unwrap();
    let aug = store.augment(&base).unwrap();
    let model = Model::new(ModelConfig { input_dim: t.x.dim(), ..tiny_cfg().model }).unwrap();
    let params = ParamSet::init(&model.cfg, 3).unwrap();
    let (total, _) = model.loss_and_grad(&params, &aug).unwrap();
    let lp_base = model.forward(&params, &base).unwrap();
    let l_train = nll_loss(lp_base.log_probs(), &base.labels).unwrap();
    // each stored node alone: features, a self-loop, its label
    let only = GraphBatch::concat(&[]).unwrap();
    let only = GraphBatch { x: ndarray::Array2::zeros((0, t.x.dim())), ..only };
    let rows: Vec<_> = store.entries().iter().map(|e| (e.features.view(), e.label)).collect();
    let replay = only.with_isolated(&rows).unwrap();
    let lp_rep = model.forward(&params, &replay).unwrap();
    let l_rep = nll_loss(lp_rep.log_probs(), &replay.labels).unwrap();
    let (a, b) = (train.len() as f64, store.len() as f64);
    assert!((total - (a * l_train + b * l_rep) / (a + b)).abs() < 1e-12);
}

#[test]
fn retrain_on_first_task_equals_static() {
    let tasks = tiny_stream(2);
    let cfg = tiny_cfg();
    let retrain = run_stream(&tasks, &"retrain-bfs".parse().unwrap(), &cfg).unwrap();
    let inc = run_stream(&tasks[..1], &"incremental-bfs".parse().unwrap(), &cfg).unwrap();
    assert_eq!(retrain.matrix.get(0, 0), inc.matrix.get(0, 0));
    assert_eq!(retrain.losses[0], inc.losses[0]);
    let s = static_auc(&tasks[0], &"ego-bfs".parse().unwrap(), &cfg).unwrap();
    assert_eq!(Some(s), inc.matrix.get(0, 0));
}

#[test]
fn ewc_anchors_accumulate() {
    let tasks = tiny_stream(2);
    let cfg = RunConfig {
        ewc_lambda: Some(10.0),
        ..tiny_cfg()
    };
    let run = run_stream(&tasks, &"ewc".parse().unwrap(), &cfg).unwrap();
    assert!(run.matrix.is_complete());
    assert_eq!(run.resources.storage_bytes, 2 * 2 * run.params[0].storage_bytes());
}

#[test]
fn runs_are_reproducible() {
    let tasks = tiny_stream(2);
    let cfg = RunConfig {
        replay_rate: Some(0.1),
        ..tiny_cfg()
    };
    for label in ["egocl-rwr", "node-replay"] {
        let m: Method = label.parse().unwrap();
        let a = run_stream(&tasks, &m, &cfg).unwrap();
        let b = run_stream(&tasks, &m, &cfg).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.losses, b.losses);
    }
}

#[test]
fn out_of_order_stream_rejected() {
    let mut tasks = tiny_stream(2);
    tasks.swap(0, 1);
    assert!(run_stream(&tasks, &"incremental-bfs".parse().unwrap(), &tiny_cfg()).is_err());
    assert!(validate_stream(&[]).is_err());
}
