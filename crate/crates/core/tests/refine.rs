mod common;

use common::*;
use depref::encoder::Conditioning;
use depref::graph::DepGraph;
use depref::model::{Mode, Model, ModelConfig, ModelKind, Preset};
use depref::refine::{initial_graph_from_parse, initial_graph_syntr, refine, refine_corpus, RefineConfig};
use depref::synthetic;
use depref::train::{bucket_batches, train, Split, TrainConfig};
use depref::vocab::{build_vocab, FramedSentence, Vocab};
use depref_tensor::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy(count: usize, seed: u64) -> (Vocab, Vec<FramedSentence>) {
    let raw = synthetic::generate(count, seed);
    let vocab = build_vocab(&raw, 1).unwrap();
    let framed = raw.iter().map(|s| vocab.encode_sentence(s)).collect();
    (vocab, framed)
}

fn small(kind: ModelKind, vocab: &Vocab) -> ModelConfig {
    let mut c = ModelConfig::new(kind, Preset::Desk, vocab);
    c.encoder.model_dim = 16;
    c.encoder.ffn_dim = 32;
    c.encoder.num_heads = 2;
    c.scorer.arc_hidden = 16;
    c.scorer.rel_hidden = 8;
    c
}

#[test]
fn iteration_budget_follows_initial_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let cfg = tiny_config(ModelKind::RngTr);
    let model: Model = random_model(cfg.clone(), &mut rng, 0.5);
    let s = random_sentence(&mut rng, 5, &cfg);
    let g = random_graph(&mut rng, 5, cfg.num_labels);
    let config = RefineConfig {
        max_iterations: 3,
        stopping: false,
        ..RefineConfig::default()
    };
    assert_eq!(refine(&model, &s, None, &config).unwrap().iterations.len(), 4);
    assert_eq!(refine(&model, &s, Some(&g), &config).unwrap().iterations.len(), 3);
    let no_extra = RefineConfig {
        empty_init_extra_iteration: false,
        ..config.clone()
    };
    assert_eq!(refine(&model, &s, None, &no_extra).unwrap().iterations.len(), 3);
    assert!(refine(&model, &s, None, &RefineConfig { max_iterations: 0, ..config }).is_err());
}

#[test]
fn each_iteration_conditions_on_the_previous_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cfg = tiny_config(ModelKind::RngTr);
    let model: Model = random_model(cfg.clone(), &mut rng, 1.0);
    let s = random_sentence(&mut rng, 6, &cfg);
    let config = RefineConfig {
        stopping: false,
        ..RefineConfig::default()
    };
    let trace = refine(&model, &s, None, &config).unwrap();
    let mut prev: Option<DepGraph> = None;
    for rec in &trace.iterations {
        let c = prev.as_ref().map_or(Conditioning::Empty, Conditioning::Graph);
        let p = model.predict(&s, c, Some(true)).unwrap();
        assert_eq!(p.argmax, rec.graph);
        assert_eq!(p.tree.as_ref(), Some(&rec.tree));
        assert!(!rec.tree.has_cycle());
        assert_eq!(rec.tree.root_children(), 1);
        prev = Some(rec.graph.clone());
    }
    assert_eq!(trace.output(), &trace.iterations.last().unwrap().tree);
}

#[test]
fn stopping_makes_output_independent_of_larger_budgets() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut stopped = 0;
    for _ in 0..30 {
        let cfg = tiny_config(ModelKind::RngTr);
        let model: Model = random_model(cfg.clone(), &mut rng, 0.3);
        let n = rng.random_range(2..=8);
        let s = random_sentence(&mut rng, n, &cfg);
        let short = refine(&model, &s, None, &RefineConfig { max_iterations: 3, ..RefineConfig::default() }).unwrap();
        let long = refine(&model, &s, None, &RefineConfig { max_iterations: 13, ..RefineConfig::default() }).unwrap();
        assert_eq!(short.iterations[..], long.iterations[..short.iterations.len()]);
        if short.stopped_early() {
            stopped += 1;
            assert_eq!(short, long);
            let last = short.iterations.len() - 1;
            assert!(last >= 1);
            assert_eq!(short.iterations[last].graph, short.iterations[last - 1].graph);
            assert_eq!(short.iterations[last].changed, 0);
        }
        for rec in &short.iterations[..short.iterations.len() - 1] {
            assert!(rec.changed > 0 || !rec.stopped);
        }
    }
    assert!(stopped > 0);
}

#[test]
fn initializer_runs_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let cfg = tiny_config(ModelKind::SynTr);
    let model: Model = random_model(cfg.clone(), &mut rng, 0.5);
    let s = random_sentence(&mut rng, 5, &cfg);
    let trace = refine(&model, &s, None, &RefineConfig::default()).unwrap();
    assert_eq!(trace.iterations.len(), 1);
    assert_eq!(trace.output(), &initial_graph_syntr(&model, &s, true).unwrap());
    let rng_model: Model = random_model(tiny_config(ModelKind::RngTr), &mut rng, 0.5);
    assert!(initial_graph_syntr(&rng_model, &s, true).is_err());
}

#[test]
fn initial_parse_alignment_and_unknown_labels() {
    let raw = synthetic::generate(3, 1);
    let vocab = build_vocab(&raw, 1).unwrap();
    let mut parse = raw[1].clone();
    parse.labels[0] = "never-seen".into();
    let g = initial_graph_from_parse(1, &raw[1], &parse, &vocab).unwrap();
    assert_eq!(g.labels[0], 0);
    assert_eq!(g.raw_heads(), raw[1].heads);
    let err = initial_graph_from_parse(4, &raw[1], &raw[0], &vocab).unwrap_err().to_string();
    assert!(err.contains("sentence 5"), "{err}");
}

#[test]
fn parallel_refinement_matches_sequential() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let cfg = tiny_config(ModelKind::RngTr);
    let model: Model = random_model(cfg.clone(), &mut rng, 0.5);
    let sentences: Vec<FramedSentence> = (0..12).map(|_| {
        let n = rng.random_range(1..=9);
        random_sentence(&mut rng, n, &cfg)
    }).collect();
    let initial: Vec<Option<DepGraph>> = sentences
        .iter()
        .map(|s| rng.random_bool(0.5).then(|| random_graph(&mut rng, s.len, cfg.num_labels)))
        .collect();
    let config = RefineConfig::default();
    let one = refine_corpus(&model, &sentences, &initial, &config, 1).unwrap();
    let three = refine_corpus(&model, &sentences, &initial, &config, 3).unwrap();
    assert_eq!(one, three);
    assert!(refine_corpus(&model, &sentences, &initial[1..], &config, 1).is_err());
}

#[test]
fn empty_graph_gives_relation_tables_no_gradient() {
    let (vocab, sentences) = toy(5, 3);
    let model: Model = Model::new(small(ModelKind::RngTr, &vocab), 1).unwrap();
    let mut params = model.params.clone();
    params.zero_grads();
    for s in &sentences {
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, s, Conditioning::Empty, &mut Mode::training(9)).unwrap();
        let loss = model.loss(&mut tape, s, &fwd).unwrap();
        let grads = tape.backward(loss).unwrap();
        params.accumulate(&tape, &grads);
    }
    let rel = model.ids.relations.clone().unwrap();
    for id in [rel.key, rel.value] {
        let g = params.get(id).grad().unwrap_or(&[]);
        assert!(g.iter().all(|&x| x == 0.0), "{}", params.param(id).name);
    }
    // With a real graph the tables do learn.
    let mut tape = Tape::new();
    let g = DepGraph::new(sentences[0].heads.clone(), vec![0; sentences[0].len]).unwrap();
    let fwd = model.forward(&mut tape, &sentences[0], Conditioning::Graph(&g), &mut Mode::training(9)).unwrap();
    let loss = model.loss(&mut tape, &sentences[0], &fwd).unwrap();
    let grads = tape.backward(loss).unwrap();
    params.zero_grads();
    params.accumulate(&tape, &grads);
    assert!(params.get(rel.value).grad().unwrap().iter().any(|&x| x != 0.0));
}

#[test]
fn batches_cover_every_sentence_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let lengths: Vec<usize> = (0..53).map(|_| rng.random_range(3..=12)).collect();
    let batches = bucket_batches(&lengths, 8, &mut rng);
    let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
    seen.sort();
    assert_eq!(seen, (0..53).collect::<Vec<_>>());
    assert!(batches.iter().all(|b| b.len() <= 8));
}

fn train_small(kind: ModelKind, seed: u64, epochs: usize) -> (Model, depref::train::TrainReport) {
    let (vocab, sentences) = toy(60, 5);
    let train_split = Split::empty_init(sentences[..48].to_vec());
    let dev = Split::empty_init(sentences[48..].to_vec());
    let mut model = Model::new(small(kind, &vocab), seed).unwrap();
    let config = TrainConfig {
        epochs,
        batch_size: 8,
        seed,
        refine: RefineConfig {
            max_iterations: 2,
            ..RefineConfig::default()
        },
        ..TrainConfig::default()
    };
    let report = train(&mut model, &train_split, &dev, &config).unwrap();
    (model, report)
}

#[test]
fn training_reduces_loss() {
    for kind in [ModelKind::SynTr, ModelKind::RngTr] {
        let (_, report) = train_small(kind, 1, 6);
        let first = report.epochs.first().unwrap().loss;
        let last = report.epochs.last().unwrap().loss;
        assert!(last < 0.7 * first, "{kind:?}: {first} -> {last}");
        assert!(report.best_las >= report.epochs[0].dev.output.las());
    }
}

#[test]
fn training_is_deterministic() {
    let (a, ra) = train_small(ModelKind::RngTr, 7, 2);
    let (b, rb) = train_small(ModelKind::RngTr, 7, 2);
    assert_eq!(ra.epochs, rb.epochs);
    for ((_, p), (_, q)) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(p.value.data(), q.value.data(), "{}", p.name);
    }
}

#[test]
fn training_rejects_bad_settings() {
    let (vocab, sentences) = toy(10, 5);
    let mut model = Model::new(small(ModelKind::RngTr, &vocab), 1).unwrap();
    let split = Split::empty_init(sentences);
    let zero = TrainConfig { epochs: 0, ..TrainConfig::default() };
    assert!(train(&mut model, &split, &split, &zero).is_err());
    assert!(train(&mut model, &Split::empty_init(vec![]), &split, &TrainConfig::default()).is_err());
    assert!(Split::new(split.sentences.clone(), vec![]).is_err());
}
