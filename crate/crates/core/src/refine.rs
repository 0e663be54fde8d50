//! The refinement loop: initial graphs, iterative re-prediction, stopping.

use rayon::prelude::*;

use crate::conllu::RawSentence;
use crate::encoder::Conditioning;
use crate::error::{Error, Result};
use crate::graph::{changed_edges, DepGraph};
use crate::model::{Model, ModelKind};
use crate::vocab::{FramedSentence, Vocab};

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    /// Maximum number of refinement iterations `T`.
    pub max_iterations: usize,
    /// Run one more iteration when starting from an empty graph.
    pub empty_init_extra_iteration: bool,
    /// Stop once an iteration reproduces its input graph.
    pub stopping: bool,
    /// Force exactly one ROOT child in the final tree.
    pub single_root: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            max_iterations: 3,
            empty_init_extra_iteration: true,
            stopping: true,
            single_root: true,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("at least one refinement iteration is required".into()));
        }
        Ok(())
    }

    /// Iteration budget for a given starting point.
    pub fn iterations_for(&self, initial: Option<&DepGraph>) -> usize {
        self.max_iterations + usize::from(initial.is_none() && self.empty_init_extra_iteration)
    }
}

/// Where the first graph comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitSource {
    Empty,
    File,
    SynTr,
}

impl InitSource {
    pub fn name(self) -> &'static str {
        match self {
            InitSource::Empty => "empty",
            InitSource::File => "file",
            InitSource::SynTr => "syntr",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    /// Argmax graph Gᵗ, fed to the next iteration.
    pub graph: DepGraph,
    /// Maximum spanning tree decoded from the same scores.
    pub tree: DepGraph,
    /// Words whose head or label differ from the input graph (all words when
    /// the input was empty).
    pub changed: usize,
    /// This iteration reproduced its input and ended the loop.
    pub stopped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementTrace {
    pub initial: Option<DepGraph>,
    pub iterations: Vec<IterationRecord>,
}

impl RefinementTrace {
    /// Final output: the tree decoded from the last executed iteration.
    pub fn output(&self) -> &DepGraph {
        &self.iterations.last().expect("at least one iteration").tree
    }

    pub fn stopped_early(&self) -> bool {
        self.iterations.last().is_some_and(|r| r.stopped)
    }
}

/// Graph read from a baseline parse of the same sentence. Labels unknown to
/// the vocabulary fall back to id 0.
pub fn initial_graph_from_parse(index: usize, sentence: &RawSentence, parse: &RawSentence, vocab: &Vocab) -> Result<DepGraph> {
    if sentence.len() != parse.len() {
        return Err(Error::Alignment(format!(
            "sentence {}{}: {} tokens but the initial parse has {}",
            index + 1,
            sentence.meta("sent_id").map(|id| format!(" ({id})")).unwrap_or_default(),
            sentence.len(),
            parse.len()
        )));
    }
    let labels = parse
        .labels
        .iter()
        .map(|l| {
            vocab.labels.get(l).unwrap_or_else(|| {
                log::warn!("initial parse label {l:?} is not in the vocabulary; using {:?}", vocab.label(0));
                0
            })
        })
        .collect();
    DepGraph::from_raw(&parse.heads, labels)
}

/// One pass of the initializer network, decoded as a tree.
pub fn initial_graph_syntr(model: &Model, sentence: &FramedSentence, single_root: bool) -> Result<DepGraph> {
    if model.config.kind != ModelKind::SynTr {
        return Err(Error::Config("initial graphs must come from an initializer model".into()));
    }
    let p = model.predict(sentence, Conditioning::Disabled, Some(single_root))?;
    Ok(p.tree.expect("tree requested"))
}

/// Run the refinement recursion on one sentence.
pub fn refine(model: &Model, sentence: &FramedSentence, initial: Option<&DepGraph>, config: &RefineConfig) -> Result<RefinementTrace> {
    config.validate()?;
    if model.config.kind == ModelKind::SynTr {
        let p = model.predict(sentence, Conditioning::Disabled, Some(config.single_root))?;
        return Ok(RefinementTrace {
            initial: None,
            iterations: vec![IterationRecord {
                graph: p.argmax,
                tree: p.tree.expect("tree requested"),
                changed: sentence.len,
                stopped: false,
            }],
        });
    }
    let budget = config.iterations_for(initial);
    let mut prev = initial.cloned();
    let mut iterations = Vec::with_capacity(budget);
    for _ in 0..budget {
        let conditioning = prev.as_ref().map_or(Conditioning::Empty, Conditioning::Graph);
        let p = model.predict(sentence, conditioning, Some(config.single_root))?;
        let changed = match &prev {
            Some(g) => changed_edges(g, &p.argmax)?,
            None => sentence.len,
        };
        let stopped = config.stopping && prev.is_some() && changed == 0;
        iterations.push(IterationRecord {
            graph: p.argmax.clone(),
            tree: p.tree.expect("tree requested"),
            changed,
            stopped,
        });
        if stopped {
            break;
        }
        prev = Some(p.argmax);
    }
    Ok(RefinementTrace {
        initial: initial.cloned(),
        iterations,
    })
}

/// Refine a corpus, optionally on several threads. Output order matches input.
pub fn refine_corpus(
    model: &Model,
    sentences: &[FramedSentence],
    initial: &[Option<DepGraph>],
    config: &RefineConfig,
    workers: usize,
) -> Result<Vec<RefinementTrace>> {
    if sentences.len() != initial.len() {
        return Err(Error::Alignment(format!(
            "{} sentences but {} initial graphs",
            sentences.len(),
            initial.len()
        )));
    }
    let run = || {
        sentences
            .par_iter()
            .zip(initial.par_iter())
            .map(|(s, g)| refine(model, s, g.as_ref(), config))
            .collect::<Result<Vec<_>>>()
    };
    if workers <= 1 {
        return sentences
            .iter()
            .zip(initial)
            .map(|(s, g)| refine(model, s, g.as_ref(), config))
            .collect();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?
        .install(run)
}

/// Initializer-network parses for a corpus.
pub fn syntr_corpus(model: &Model, sentences: &[FramedSentence], single_root: bool, workers: usize) -> Result<Vec<DepGraph>> {
    let config = RefineConfig {
        max_iterations: 1,
        single_root,
        ..RefineConfig::default()
    };
    let none = vec![None; sentences.len()];
    Ok(refine_corpus(model, sentences, &none, &config, workers)?
        .into_iter()
        .map(|t| t.output().clone())
        .collect())
}
