use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semcom::codec::Ratio;
use semcom::detector::boxes::BBox;
use semcom::error::Category;
use semcom::harness::sweep::{load_trained, sweep_rate, sweep_snr};
use semcom::harness::train::{Stage, TrainData, Trainer};
use semcom::harness::{generate_dataset, Dataset, Mode, Model, RunConfig, Workspace};
use semcom::numeric::{Checkpoint, Graph, ParameterStore, Tensor};

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.train_scenes = 16;
    cfg.data.eval_scenes = 6;
    cfg.train.detector_steps = 4;
    cfg.train.codec_steps = 3;
    cfg.train.fusion_steps = 3;
    cfg.kg.walks.walks_per_node = 4;
    cfg.sweep.seeds = vec![1];
    cfg
}

fn rate() -> Ratio {
    Ratio::new(1, 12).unwrap()
}

fn images(data: &Dataset, ids: &[usize]) -> Tensor {
    let s = data.image_size;
    let pixels = ids.iter().flat_map(|&i| data.scenes[i].pixels.iter().map(|&v| v as f64 / 255.0)).collect();
    Tensor::new(&[ids.len(), 3, s, s], pixels).unwrap()
}

fn store_for(model: &Model, codec: bool) -> ParameterStore {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    model.init_detector(&mut store, &mut rng).unwrap();
    if codec {
        model.init_codec(&mut store, &mut rng).unwrap();
    }
    store
}

#[test]
fn one_epoch_smoke_run_lowers_the_loss() {
    let cfg = RunConfig::default();
    let data = generate_dataset(&cfg.data.world, 50, 0).unwrap();
    let model = Model::new(&cfg.model, rate(), &cfg.data.world.class_names()).unwrap();
    let mut train = cfg.train.clone();
    train.batch_size = 2;
    let ctx = TrainData::new(&model, &data, &train, None).unwrap();
    let mut t = Trainer::new(store_for(&model, false), Stage::Detector, train.lr, false);
    let losses: Vec<f64> = (0..25).map(|_| t.step(&ctx).unwrap().total()).collect();
    let head: f64 = losses[..5].iter().sum();
    let tail: f64 = losses[20..].iter().sum();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(tail < head, "{losses:?}");
}

#[test]
fn resumed_training_is_bit_identical() {
    let cfg = tiny();
    let data = generate_dataset(&cfg.data.world, 8, 0).unwrap();
    let model = Model::new(&cfg.model, rate(), &cfg.data.world.class_names()).unwrap();
    let mut train = cfg.train.clone();
    train.batch_size = 2;
    let ctx = TrainData::new(&model, &data, &train, None).unwrap();

    let mut a = Trainer::new(store_for(&model, true), Stage::Codec, train.lr, false);
    for _ in 0..2 {
        a.step(&ctx).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ckpt");
    a.to_checkpoint().save(&path).unwrap();
    let mut b = Trainer::from_checkpoint(&Checkpoint::load(&path).unwrap(), train.lr).unwrap();
    assert_eq!((b.stage, b.step), (Stage::Codec, 2));
    for _ in 0..2 {
        let (la, lb) = (a.step(&ctx).unwrap(), b.step(&ctx).unwrap());
        assert_eq!(la.total().to_bits(), lb.total().to_bits());
    }
    assert_eq!(a.to_checkpoint(), b.to_checkpoint());
}

#[test]
fn graph_is_built_only_with_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(tiny(), dir.path()).unwrap();
    let data = ws.eval_data().unwrap();
    let emb = ws.embeddings().unwrap();
    let model = Model::new(&ws.cfg.model, rate(), &ws.cfg.data.world.class_names()).unwrap();
    let mut store = store_for(&model, true);
    model.init_fusion(&mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let rois = vec![
        (0, BBox { x1: 10.0, y1: 12.0, x2: 40.0, y2: 38.0 }),
        (0, BBox { x1: 60.0, y1: 60.0, x2: 90.0, y2: 100.0 }),
        (1, BBox { x1: 5.0, y1: 70.0, x2: 30.0, y2: 95.0 }),
    ];

    let g = Graph::inference();
    let pyr = model.pyramid(&g, &store, &images(&data, &[0, 1]), None).unwrap();
    let msed = model.regions(&g, &store, &pyr, rois.clone(), None).unwrap();
    assert!(msed.graph.is_none() && msed.final_logits.is_none());

    let kg = model.regions(&g, &store, &pyr, rois, Some(&emb)).unwrap();
    let graph = kg.graph.expect("graph built");
    assert_eq!(graph.proposals, 3);
    assert_eq!(g.shape(kg.final_logits.unwrap()), g.shape(kg.initial_logits));
}

#[test]
fn sweep_rows_cover_the_grid_and_obey_the_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(tiny(), dir.path()).unwrap();
    let tm = ws.trained(rate(), 1).unwrap();
    let data = ws.eval_data().unwrap();
    let emb = ws.embeddings().unwrap();
    let s = &ws.cfg.sweep;

    let rows = sweep_snr(std::slice::from_ref(&tm), &data, Some(&emb), &ws.cfg).unwrap();
    assert_eq!(rows.len(), s.channels.len() * s.snr_db.len() * s.modes.len());
    for r in &rows {
        assert_eq!(r.achieved, r.k as f64 / r.n as f64);
        assert_eq!(r.n, 3 * 128 * 128);
        assert_eq!((r.requested, r.seed), (rate(), 1));
        assert!((0.0..=1.0).contains(&r.map));
    }
    let rows = sweep_rate(std::slice::from_ref(&tm), &data, Some(&emb), &ws.cfg).unwrap();
    assert_eq!(rows.len(), s.modes.len());
    assert!(rows.iter().all(|r| r.snr_db == s.rate_snr_db));

    let reloaded = load_trained(&ws.cfg, dir.path(), rate(), 1, Mode::MsedKg).unwrap();
    assert_eq!(reloaded.store.names().count(), tm.store.names().count());
}

#[test]
fn msed_only_model_cannot_serve_the_graph_mode() {
    let mut cfg = tiny();
    cfg.train.mode = Mode::Msed;
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(cfg, dir.path()).unwrap();
    let tm = ws.trained(rate(), 1).unwrap();
    let data = ws.eval_data().unwrap();
    let emb = ws.embeddings().unwrap();
    let err = sweep_snr(&[tm], &data, Some(&emb), &ws.cfg).unwrap_err();
    assert_eq!(err.category(), Category::Data, "{err}");
    assert!(load_trained(&ws.cfg, dir.path(), rate(), 1, Mode::Msed).is_ok());
}

#[test]
fn missing_model_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_trained(&RunConfig::default(), dir.path(), rate(), 9, Mode::Msed).unwrap_err();
    assert_eq!(err.category(), Category::Data, "{err}");
}
