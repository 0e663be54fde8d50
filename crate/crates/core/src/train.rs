//! Training with per-iteration losses and dev-LAS early stopping.

use std::path::Path;

use depref_tensor::{AdamW, ParamStore, Tape, WarmupLinear};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decode::{argmax_decode, assign_labels};
use crate::encoder::Conditioning;
use crate::error::{Error, Result};
use crate::eval::{framed_scores, Attachment};
use crate::graph::{graph_equal, DepGraph};
use crate::model::{mix_seed, Mode, Model, ModelKind};
use crate::refine::{refine_corpus, RefineConfig};
use crate::vocab::FramedSentence;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Sentences per batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    /// Epochs without dev LAS improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Refinement settings used both for the training recursion and for dev
    /// evaluation.
    pub refine: RefineConfig,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 2e-3,
            warmup_fraction: 0.01,
            patience: 10,
            seed: 1,
            refine: RefineConfig::default(),
            workers: 1,
        }
    }
}

/// Sentences with their starting graphs (`None` = empty).
#[derive(Clone, Debug)]
pub struct Split {
    pub sentences: Vec<FramedSentence>,
    pub initial: Vec<Option<DepGraph>>,
    /// Per-word evaluation mask; all words count when absent.
    pub counted: Option<Vec<Vec<bool>>>,
}

impl Split {
    pub fn new(sentences: Vec<FramedSentence>, initial: Vec<Option<DepGraph>>) -> Result<Self> {
        if sentences.len() != initial.len() {
            return Err(Error::Alignment(format!(
                "{} sentences but {} initial graphs",
                sentences.len(),
                initial.len()
            )));
        }
        Ok(Split {
            sentences,
            initial,
            counted: None,
        })
    }

    pub fn empty_init(sentences: Vec<FramedSentence>) -> Self {
        let initial = vec![None; sentences.len()];
        Split {
            sentences,
            initial,
            counted: None,
        }
    }
}

/// Scores of one refinement run over a split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evaluation {
    /// The starting graphs, when every sentence has one.
    pub initial: Option<Attachment>,
    /// The tree after each iteration t = 1..; sentences that stopped early
    /// keep their last tree.
    pub iterations: Vec<Attachment>,
    /// The final output.
    pub output: Attachment,
}

impl Evaluation {
    /// LAS of the initial graph (if any) followed by each iteration.
    pub fn las_trajectory(&self) -> Vec<f64> {
        self.initial.iter().chain(&self.iterations).map(Attachment::las).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-batch loss (token-weighted, summed over iterations).
    pub loss: f64,
    pub learning_rate: f64,
    pub dev: Evaluation,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_las: f64,
}

/// Group sentences of similar length, then shuffle batch order.
pub fn bucket_batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| lengths[i]);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

/// Evaluate `model` on `split`.
pub fn evaluate(model: &Model, split: &Split, refine: &RefineConfig, workers: usize) -> Result<Evaluation> {
    let traces = refine_corpus(model, &split.sentences, &split.initial, refine, workers)?;
    let counted = split.counted.as_deref();
    let finals: Vec<DepGraph> = traces.iter().map(|t| t.output().clone()).collect();
    let output = framed_scores(&split.sentences, &finals, counted)?;

    let initial = if !split.initial.is_empty() && split.initial.iter().all(Option::is_some) {
        let init: Vec<DepGraph> = split.initial.iter().map(|g| g.clone().unwrap()).collect();
        Some(framed_scores(&split.sentences, &init, counted)?)
    } else {
        None
    };
    let longest = traces.iter().map(|t| t.iterations.len()).max().unwrap_or(0);
    let mut iterations = Vec::with_capacity(longest);
    for t in 0..longest {
        let trees: Vec<DepGraph> = traces
            .iter()
            .map(|tr| tr.iterations[t.min(tr.iterations.len() - 1)].tree.clone())
            .collect();
        iterations.push(framed_scores(&split.sentences, &trees, counted)?);
    }
    Ok(Evaluation {
        initial,
        iterations,
        output,
    })
}

/// Per-epoch CSV: loss, learning rate, final dev scores, then LAS of the
/// initial graph and of every iteration (`n/a` where a run was shorter).
pub fn write_metrics_csv(path: impl AsRef<Path>, epochs: &[EpochMetrics]) -> Result<()> {
    let path = path.as_ref();
    let with_initial = epochs.iter().any(|e| e.dev.initial.is_some());
    let width = epochs.iter().map(|e| e.dev.iterations.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["epoch", "loss", "learning_rate", "dev_uas", "dev_las"].map(String::from).to_vec();
    if with_initial {
        header.push("dev_las_t0".into());
    }
    header.extend((1..=width).map(|t| format!("dev_las_t{t}")));
    w.write_record(&header)?;
    for e in epochs {
        let mut row = vec![
            e.epoch.to_string(),
            format!("{:.6}", e.loss),
            format!("{:.8}", e.learning_rate),
            format!("{:.2}", e.dev.output.uas()),
            format!("{:.2}", e.dev.output.las()),
        ];
        if with_initial {
            row.push(e.dev.initial.map_or("n/a".into(), |a| format!("{:.2}", a.las())));
        }
        row.extend((0..width).map(|t| e.dev.iterations.get(t).map_or("n/a".into(), |a| format!("{:.2}", a.las()))));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loss of one sentence at one refinement step and the argmax graph decoded
/// from the same (training-mode) forward pass.
fn sentence_step(
    model: &mut Model,
    sentence: &FramedSentence,
    previous: Option<&DepGraph>,
    weight: f64,
    seed: u64,
) -> Result<(f64, DepGraph)> {
    let mut tape = Tape::new();
    let mut mode = Mode::training(seed);
    let conditioning = match (model.config.kind, previous) {
        (ModelKind::SynTr, _) => Conditioning::Disabled,
        (ModelKind::RngTr, None) => Conditioning::Empty,
        (ModelKind::RngTr, Some(g)) => Conditioning::Graph(g),
    };
    let fwd = model.forward(&mut tape, sentence, conditioning, &mut mode)?;
    let loss = model.loss(&mut tape, sentence, &fwd)?;
    let scaled = tape.scale(loss, weight as f32);
    let value = tape.value(scaled).item() as f64;
    if !value.is_finite() {
        let op = tape.first_non_finite().unwrap_or("loss");
        return Err(Error::Tensor(depref_tensor::TensorError::NonFinite { op }));
    }
    let grads = tape.backward(scaled)?;
    model.params.accumulate(&tape, &grads);

    let scores = model.arc_scores_of(&tape, &fwd, sentence.len)?;
    let heads = argmax_decode(&scores)?;
    let labels = model.labels_at(&mut tape, &fwd, &heads)?;
    Ok((value, assign_labels(&heads, &labels)?))
}

/// Train `model` in place. The parameters of the best dev epoch are restored
/// at the end.
pub fn train(model: &mut Model, train: &Split, dev: &Split, config: &TrainConfig) -> Result<TrainReport> {
    train_with_progress(model, train, dev, config, |_| {})
}

pub fn train_with_progress(
    model: &mut Model,
    train: &Split,
    dev: &Split,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    if train.sentences.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if let Some(i) = train.sentences.iter().position(|s| !s.has_gold()) {
        return Err(Error::Vocab(format!("training sentence {} has a label outside the vocabulary", i + 1)));
    }
    config.refine.validate()?;
    if config.epochs == 0 {
        return Err(Error::Config("at least one epoch is required".into()));
    }
    let lengths: Vec<usize> = train.sentences.iter().map(|s| s.len).collect();
    let batches_per_epoch = train.sentences.len().div_ceil(config.batch_size.max(1));
    let schedule = WarmupLinear {
        base_lr: config.learning_rate,
        warmup_fraction: config.warmup_fraction,
        total_steps: (batches_per_epoch * config.epochs) as u64,
    };
    let mut opt = AdamW::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut step: u64 = 0;
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        let mut total = 0.0;
        let batches = bucket_batches(&lengths, config.batch_size, &mut rng);
        let mut lr = 0.0;
        for batch in &batches {
            let tokens: usize = batch.iter().map(|&i| lengths[i]).sum();
            let mut batch_loss = 0.0;
            for &i in batch {
                let sentence = &train.sentences[i];
                let initial = train.initial[i].as_ref();
                let budget = match model.config.kind {
                    ModelKind::SynTr => 1,
                    ModelKind::RngTr => config.refine.iterations_for(initial),
                };
                let weight = sentence.len as f64 / tokens as f64;
                let mut prev = initial.cloned();
                for t in 0..budget {
                    let seed = mix_seed(config.seed, mix_seed(step, (i * 16 + t) as u64));
                    let (loss, next) = sentence_step(model, sentence, prev.as_ref(), weight, seed)?;
                    batch_loss += loss;
                    if config.refine.stopping {
                        if let Some(p) = &prev {
                            if graph_equal(p, &next)? {
                                break;
                            }
                        }
                    }
                    prev = Some(next);
                }
            }
            lr = schedule.lr(step);
            opt.step(&mut model.params, lr);
            step += 1;
            total += batch_loss;
        }
        let metrics = EpochMetrics {
            epoch,
            loss: total / batches.len() as f64,
            learning_rate: lr,
            dev: evaluate(model, dev, &config.refine, config.workers)?,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} dev UAS {:.2} LAS {:.2}",
            metrics.loss,
            metrics.dev.output.uas(),
            metrics.dev.output.las()
        );
        on_epoch(&metrics);
        let las = metrics.dev.output.las();
        epochs.push(metrics);
        if best.as_ref().is_none_or(|(b, _, _)| las > *b) {
            best = Some((las, epoch, model.params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log::info!("no dev improvement for {stale} epochs; stopping");
                break;
            }
        }
    }
    let (best_las, best_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_las,
    })
}
