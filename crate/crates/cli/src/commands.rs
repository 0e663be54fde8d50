use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use depref::checkpoint::{load_checkpoint, save_checkpoint, vocab_path};
use depref::conllu::{read_conllu, write_conllu, RawSentence};
use depref::eval::{
    attachment_scores, bin_errors, deptype_f, projectivity_split, rel_sequence, write_bins_csv, write_deptypes_csv,
    write_projectivity_csv, write_rel_csv, Attachment, BinAxis, PunctPolicy,
};
use depref::gradcheck::{run_checks, suite, TOLERANCE};
use depref::graph::DepGraph;
use depref::model::{Model, ModelConfig, ModelKind, Preset};
use depref::refine::{initial_graph_from_parse, refine_corpus, syntr_corpus, RefineConfig, RefinementTrace};
use depref::synthetic::{corrupt_heads, generate};
use depref::train::{train as fit, write_metrics_csv, Split, TrainConfig};
use depref::vocab::{build_vocab, FramedSentence, Vocab};
use log::info;

use crate::settings::{check_exists, existing, required, Failure, Outcome};
use crate::*;

pub const CHECKPOINT: &str = "model.ckpt";

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Train(a) => train(a),
        Command::Parse(a) => parse(a),
        Command::Refine(a) => refine(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::GenToy(a) => gen_toy(a),
    }
}

fn output_dir(common: &Common) -> Outcome<PathBuf> {
    let dir = required(common.output_dir.clone(), "output-dir")?;
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

fn read(path: &Path) -> Outcome<Vec<RawSentence>> {
    Ok(read_conllu(path)?)
}

fn policy(p: Option<PunctPolicy>) -> PunctPolicy {
    p.unwrap_or(PunctPolicy::Keep)
}

impl From<PunctArg> for PunctPolicy {
    fn from(p: PunctArg) -> Self {
        match p {
            PunctArg::Keep => PunctPolicy::Keep,
            PunctArg::Exclude => PunctPolicy::Exclude,
        }
    }
}

fn refine_config(opts: &RefineOpts) -> Outcome<RefineConfig> {
    let config = RefineConfig {
        max_iterations: opts.iterations.unwrap_or(3),
        stopping: !opts.no_stopping,
        single_root: opts.single_root != Some(OnOff::Off),
        ..RefineConfig::default()
    };
    config.validate()?;
    Ok(config)
}

/// Checkpoint plus the vocabulary stored next to it.
fn load_model(path: &Path) -> Outcome<(Model, Vocab)> {
    let vocab_file = vocab_path(path);
    check_exists(&vocab_file, "checkpoint (vocabulary)")?;
    let vocab = Vocab::load(&vocab_file)?;
    let model = load_checkpoint(path, None)?;
    if model.config.num_labels != vocab.num_labels() || model.config.word_vocab != vocab.words.len() {
        return Err(Failure::Usage(format!(
            "{} does not match the vocabulary in {}",
            path.display(),
            vocab_file.display()
        )));
    }
    Ok((model, vocab))
}

fn check_count(what: &str, expected: usize, found: usize) -> Outcome {
    if expected != found {
        return Err(Failure::Usage(format!(
            "{what} has {found} sentences but the input has {expected}; sentence {} has no counterpart",
            expected.min(found) + 1
        )));
    }
    Ok(())
}

fn graphs_from_parses(sentences: &[RawSentence], parses: &[RawSentence], vocab: &Vocab, what: &str) -> Outcome<Vec<Option<DepGraph>>> {
    check_count(what, sentences.len(), parses.len())?;
    sentences
        .iter()
        .zip(parses)
        .enumerate()
        .map(|(i, (s, p))| Ok(Some(initial_graph_from_parse(i, s, p, vocab)?)))
        .collect()
}

fn to_raw(sentences: &[RawSentence], graphs: &[&DepGraph], vocab: &Vocab) -> Outcome<Vec<RawSentence>> {
    sentences
        .iter()
        .zip(graphs)
        .map(|(s, g)| {
            let labels = g.labels.iter().map(|&l| vocab.label(l).to_string()).collect();
            Ok(s.with_prediction(g.raw_heads(), labels)?)
        })
        .collect()
}

/// Starting graphs for `sentences` according to `--init`.
struct Initializer {
    init: InitArg,
    syntr: Option<(Model, Vocab)>,
}

impl Initializer {
    fn new(opts: &RefineOpts, parse_given: bool) -> Outcome<Self> {
        let init = opts.init.unwrap_or(if parse_given { InitArg::File } else { InitArg::Empty });
        if init == InitArg::File && !parse_given {
            return Err(Failure::Usage("--init file needs --initial-parse".into()));
        }
        let syntr = if init == InitArg::Syntr {
            let path = existing(opts.initializer.clone(), "initializer")?;
            let (model, vocab) = load_model(&path)?;
            if model.config.kind != ModelKind::SynTr {
                return Err(Failure::Usage(format!("{} is not an initializer checkpoint", path.display())));
            }
            Some((model, vocab))
        } else {
            None
        };
        Ok(Initializer { init, syntr })
    }

    fn graphs(&self, raw: &[RawSentence], parse: Option<&Path>, vocab: &Vocab, workers: usize) -> Outcome<Vec<Option<DepGraph>>> {
        match self.init {
            InitArg::Empty => Ok(vec![None; raw.len()]),
            InitArg::File => {
                let path = parse.expect("checked when the initializer was built");
                graphs_from_parses(raw, &read(path)?, vocab, &path.display().to_string())
            }
            InitArg::Syntr => {
                let (model, own) = self.syntr.as_ref().expect("loaded with the initializer");
                let framed: Vec<FramedSentence> = raw.iter().map(|s| own.encode_sentence(s)).collect();
                info!("running the initializer on {} sentences", raw.len());
                let parsed = syntr_corpus(model, &framed, true, workers)?;
                let parses = to_raw(raw, &parsed.iter().collect::<Vec<_>>(), own)?;
                graphs_from_parses(raw, &parses, vocab, "initializer output")
            }
        }
    }
}

fn train(a: TrainArgs) -> Outcome {
    let train_path = existing(a.train, "train")?;
    let dev_path = existing(a.dev, "dev")?;
    let seed = required(a.seed, "seed")?;
    let train_parse = a.initial_parse.map(|p| check_exists(&p, "initial-parse").map(|_| p)).transpose()?;
    let dev_parse = a.dev_initial_parse.map(|p| check_exists(&p, "dev-initial-parse").map(|_| p)).transpose()?;
    let init = Initializer::new(&a.refine, train_parse.is_some())?;
    if init.init == InitArg::File && dev_parse.is_none() {
        return Err(Failure::Usage("--init file needs --dev-initial-parse as well".into()));
    }
    let kind = match a.model.unwrap_or(ModelArg::Rngtr) {
        ModelArg::Rngtr => ModelKind::RngTr,
        ModelArg::Syntr => ModelKind::SynTr,
    };
    if kind == ModelKind::SynTr && init.init != InitArg::Empty {
        return Err(Failure::Usage("the initializer model always starts from scratch; use --init empty".into()));
    }
    let preset = match a.preset.unwrap_or(PresetArg::Desk) {
        PresetArg::Desk => Preset::Desk,
        PresetArg::Paper => Preset::Paper,
    };
    let base = match preset {
        Preset::Desk => TrainConfig::default(),
        Preset::Paper => TrainConfig {
            epochs: 200,
            patience: 100,
            ..TrainConfig::default()
        },
    };
    let settings = TrainConfig {
        epochs: a.epochs.unwrap_or(base.epochs),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        learning_rate: a.lr.unwrap_or(base.learning_rate),
        patience: a.patience.unwrap_or(base.patience),
        seed,
        refine: refine_config(&a.refine)?,
        workers: a.refine.workers.unwrap_or(1),
        ..base
    };
    if settings.batch_size == 0 {
        return Err(Failure::Usage("--batch-size must be positive".into()));
    }
    let dir = output_dir(&a.common)?;

    let train_raw = read(&train_path)?;
    let dev_raw = read(&dev_path)?;
    let vocab = build_vocab(&train_raw, a.min_freq.unwrap_or(2))?;
    let config = ModelConfig::new(kind, preset, &vocab);
    config.validate()?;
    info!(
        "{} training and {} dev sentences; {} words, {} labels",
        train_raw.len(),
        dev_raw.len(),
        vocab.words.len(),
        vocab.num_labels()
    );
    let train_initial = init.graphs(&train_raw, train_parse.as_deref(), &vocab, settings.workers)?;
    let dev_initial = init.graphs(&dev_raw, dev_parse.as_deref(), &vocab, settings.workers)?;
    let frame = |raw: &[RawSentence]| raw.iter().map(|s| vocab.encode_sentence(s)).collect::<Vec<_>>();
    let train_split = Split::new(frame(&train_raw), train_initial)?;
    let dev_split = Split::new(frame(&dev_raw), dev_initial)?;

    let mut model = Model::new(config, seed)?;
    let report = fit(&mut model, &train_split, &dev_split, &settings)?;
    let checkpoint = dir.join(CHECKPOINT);
    save_checkpoint(&checkpoint, &model)?;
    vocab.save(vocab_path(&checkpoint))?;
    write_metrics_csv(dir.join("metrics.csv"), &report.epochs)?;
    println!(
        "trained {} for {} epochs; best dev LAS {:.2} at epoch {}",
        kind.name(),
        report.epochs.len(),
        report.best_las,
        report.best_epoch
    );
    println!("checkpoint: {}", checkpoint.display());
    Ok(())
}

fn parse(a: ParseArgs) -> Outcome {
    let checkpoint = existing(a.checkpoint, "checkpoint")?;
    let test = existing(a.test, "test")?;
    required(a.seed, "seed")?;
    let opts = RefineOpts {
        init: Some(InitArg::Empty),
        iterations: a.iterations,
        no_stopping: false,
        single_root: a.single_root,
        initializer: None,
        workers: a.workers,
    };
    let config = refine_config(&opts)?;
    let dir = output_dir(&a.common)?;
    let (model, vocab) = load_model(&checkpoint)?;
    let raw = read(&test)?;
    let framed: Vec<FramedSentence> = raw.iter().map(|s| vocab.encode_sentence(s)).collect();
    let traces = refine_corpus(&model, &framed, &vec![None; raw.len()], &config, a.workers.unwrap_or(1))?;
    let outputs: Vec<&DepGraph> = traces.iter().map(RefinementTrace::output).collect();
    let out = dir.join("output.conllu");
    write_conllu(&out, &to_raw(&raw, &outputs, &vocab)?)?;
    println!("parsed {} sentences into {}", raw.len(), out.display());
    Ok(())
}

fn refine(a: RefineArgs) -> Outcome {
    let checkpoint = existing(a.checkpoint, "checkpoint")?;
    let test = existing(a.test, "test")?;
    required(a.seed, "seed")?;
    let parse = a.initial_parse.map(|p| check_exists(&p, "initial-parse").map(|_| p)).transpose()?;
    let gold_path = a.gold.map(|p| check_exists(&p, "gold").map(|_| p)).transpose()?;
    let init = Initializer::new(&a.refine, parse.is_some())?;
    let config = refine_config(&a.refine)?;
    let workers = a.refine.workers.unwrap_or(1);
    let policy = policy(a.punct.map(Into::into));
    let dir = output_dir(&a.common)?;

    let (model, vocab) = load_model(&checkpoint)?;
    let raw = read(&test)?;
    let gold = gold_path.as_deref().map(read).transpose()?;
    if let Some(g) = &gold {
        check_count("--gold", raw.len(), g.len())?;
    }
    let initial = init.graphs(&raw, parse.as_deref(), &vocab, workers)?;
    let framed: Vec<FramedSentence> = raw.iter().map(|s| vocab.encode_sentence(s)).collect();
    info!("refining {} sentences from {} graphs", raw.len(), init.init_name());
    let traces = refine_corpus(&model, &framed, &initial, &config, workers)?;

    let iter_dir = dir.join("iterations");
    fs::create_dir_all(&iter_dir).with_context(|| format!("cannot create {}", iter_dir.display()))?;
    let steps = traces.iter().map(|t| t.iterations.len()).max().unwrap_or(0);
    let all_initial = !initial.is_empty() && initial.iter().all(Option::is_some);
    let mut rows: Vec<(usize, usize, usize, Option<Attachment>)> = Vec::new();
    if all_initial {
        let graphs: Vec<&DepGraph> = initial.iter().flatten().collect();
        let parsed = to_raw(&raw, &graphs, &vocab)?;
        let score = gold.as_ref().map(|g| attachment_scores(g, &parsed, policy)).transpose()?;
        rows.push((0, 0, 0, score));
    }
    for t in 1..=steps {
        let graphs: Vec<&DepGraph> = traces.iter().map(|tr| &tr.iterations[t.min(tr.iterations.len()) - 1].tree).collect();
        let parsed = to_raw(&raw, &graphs, &vocab)?;
        write_conllu(iter_dir.join(format!("iter_{t}.conllu")), &parsed)?;
        let active = traces.iter().filter(|tr| tr.iterations.len() >= t).count();
        let changed = traces.iter().filter_map(|tr| tr.iterations.get(t - 1)).map(|r| r.changed).sum();
        let score = gold.as_ref().map(|g| attachment_scores(g, &parsed, policy)).transpose()?;
        rows.push((t, active, changed, score));
    }
    let outputs: Vec<&DepGraph> = traces.iter().map(RefinementTrace::output).collect();
    let out = dir.join("output.conllu");
    write_conllu(&out, &to_raw(&raw, &outputs, &vocab)?)?;

    let las: Vec<f64> = rows.iter().filter_map(|r| r.3.map(|a| a.las())).collect();
    let rel = rel_sequence(&las);
    let mut csv = String::from(if gold.is_some() {
        "iteration,active_sentences,changed_words,uas,las,rel\n"
    } else {
        "iteration,active_sentences,changed_words\n"
    });
    for (i, (t, active, changed, score)) in rows.iter().enumerate() {
        let (active, changed) = if *t == 0 {
            ("n/a".to_string(), "n/a".to_string())
        } else {
            (active.to_string(), changed.to_string())
        };
        write!(csv, "{t},{active},{changed}").unwrap();
        if let Some(a) = score {
            let r = if i == 0 { None } else { rel[i - 1] };
            write!(csv, ",{:.2},{:.2},{}", a.uas(), a.las(), r.map_or("n/a".into(), |x| format!("{x:.2}"))).unwrap();
        }
        csv.push('\n');
    }
    let trace_path = dir.join("trace.csv");
    fs::write(&trace_path, csv).with_context(|| format!("cannot write {}", trace_path.display()))?;
    let stopped = traces.iter().filter(|t| t.stopped_early()).count();
    println!(
        "refined {} sentences in up to {steps} iterations ({stopped} reached a fixed point); output: {}",
        raw.len(),
        out.display()
    );
    if let Some(score) = rows.last().and_then(|r| r.3) {
        println!("final UAS {:.2} LAS {:.2} (punctuation {})", score.uas(), score.las(), policy.name());
    }
    Ok(())
}

impl Initializer {
    fn init_name(&self) -> &'static str {
        match self.init {
            InitArg::Empty => "empty",
            InitArg::File => "file",
            InitArg::Syntr => "initializer",
        }
    }
}

fn eval(a: EvalArgs) -> Outcome {
    let gold_path = existing(a.gold, "gold")?;
    let pred_path = existing(a.pred, "pred")?;
    let policy = policy(a.punct.map(Into::into));
    let gold = read(&gold_path)?;
    let pred = read(&pred_path)?;
    check_count(&pred_path.display().to_string(), gold.len(), pred.len())?;
    let score = attachment_scores(&gold, &pred, policy)?;
    println!("attachment scores (punctuation {})", policy.name());
    println!("tokens {}", score.tokens);
    println!("UAS    {:.2}", score.uas());
    println!("LAS    {:.2}", score.las());
    if a.common.output_dir.is_some() {
        let dir = output_dir(&a.common)?;
        let path = dir.join("scores.csv");
        let text = format!(
            "punctuation,tokens,uas,las\n{},{},{:.2},{:.2}\n",
            policy.name(),
            score.tokens,
            score.uas(),
            score.las()
        );
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Outcome {
    let gold_path = existing(a.gold, "gold")?;
    if a.pred.is_empty() {
        return Err(Failure::Usage("--pred needs at least one prediction file".into()));
    }
    for p in &a.pred {
        check_exists(p, "pred")?;
    }
    let policy = policy(a.punct.map(Into::into));
    let dir = output_dir(&a.common)?;
    let gold = read(&gold_path)?;
    let preds = a
        .pred
        .iter()
        .map(|p| {
            let s = read(p)?;
            check_count(&p.display().to_string(), gold.len(), s.len())?;
            Ok(s)
        })
        .collect::<Outcome<Vec<_>>>()?;
    let last = preds.last().expect("checked non-empty");
    let tables = [BinAxis::DependencyLength, BinAxis::DistanceToRoot, BinAxis::SentenceLength]
        .into_iter()
        .map(|axis| Ok((axis, bin_errors(&gold, last, axis, axis.default_edges(), policy)?)))
        .collect::<Outcome<Vec<_>>>()?;
    write_bins_csv(dir.join("bins.csv"), &tables)?;
    write_deptypes_csv(dir.join("deptypes.csv"), &deptype_f(&gold, &preds, policy)?)?;
    write_projectivity_csv(dir.join("projectivity.csv"), &projectivity_split(&gold, &preds, policy)?)?;
    let scores = preds
        .iter()
        .map(|p| attachment_scores(&gold, p, policy))
        .collect::<Result<Vec<_>, _>>()?;
    write_rel_csv(dir.join("rel.csv"), &scores)?;
    println!("iteration  UAS     LAS     (punctuation {})", policy.name());
    for (t, s) in scores.iter().enumerate() {
        println!("{t:>9}  {:>6.2}  {:>6.2}", s.uas(), s.las());
    }
    println!("wrote bins.csv, deptypes.csv, projectivity.csv and rel.csv to {}", dir.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    let seed = required(a.seed, "seed")?;
    let mut checks = suite(seed);
    if let Some(only) = &a.only {
        if let Some(bad) = only.iter().find(|n| !checks.iter().any(|c| &c.name == *n)) {
            return Err(Failure::Usage(format!("no gradient check named {bad:?}")));
        }
        checks.retain(|c| only.contains(&c.name));
    }
    if checks.is_empty() {
        println!("0 ops selected; nothing to check");
        return Ok(());
    }
    let results = run_checks(&checks);
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(2).max(2);
    println!("{:<width$}  {:>12}  status", "op", "max rel err");
    let mut failed = Vec::new();
    for r in &results {
        let err = match &r.outcome {
            Ok(e) => format!("{e:.3e}"),
            Err(msg) => format!("error: {msg}"),
        };
        let status = if r.passed() { "pass" } else { "FAIL" };
        println!("{:<width$}  {err:>12}  {status}", r.name);
        if !r.passed() {
            failed.push(format!("{} ({err})", r.name));
        }
    }
    println!("{} of {} ops within {TOLERANCE:e}", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow::anyhow!("gradient check failed for {}", failed.join(", "))))
    }
}

fn gen_toy(a: GenToyArgs) -> Outcome {
    let count = required(a.count, "count")?;
    let seed = required(a.seed, "seed")?;
    if let Some(f) = a.corrupt {
        if !(0.0..=1.0).contains(&f) {
            return Err(Failure::Usage(format!("--corrupt {f} is outside [0, 1]")));
        }
    }
    let dir = output_dir(&a.common)?;
    let sentences = generate(count, seed);
    let path = dir.join("toy.conllu");
    write_conllu(&path, &sentences)?;
    println!("wrote {count} sentences to {}", path.display());
    if let Some(f) = a.corrupt {
        let path = dir.join("toy.corrupted.conllu");
        write_conllu(&path, &corrupt_heads(&sentences, f, seed))?;
        println!("wrote a copy with {:.0}% of heads rewired to {}", f * 100.0, path.display());
    }
    Ok(())
}
