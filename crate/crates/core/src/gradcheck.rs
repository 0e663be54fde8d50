//! Gradient-check suite: every tensor op plus an end-to-end model loss.

use depref_tensor::gradcheck::{op_cases, GradCase};
use depref_tensor::{grad_check_params, Tape, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::Conditioning;
use crate::graph::DepGraph;
use crate::model::{EncoderConfig, Mode, Model, ModelConfig, ModelKind, ScorerConfig};
use crate::vocab::FramedSentence;

/// Maximum accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

type CheckFn = Box<dyn Fn() -> Result<f64, TensorError> + Send + Sync>;

/// A named check producing a maximum relative error.
pub struct Check {
    pub name: String,
    run: CheckFn,
}

impl Check {
    pub fn new(name: impl Into<String>, run: impl Fn() -> Result<f64, TensorError> + Send + Sync + 'static) -> Self {
        Check {
            name: name.into(),
            run: Box::new(run),
        }
    }

    pub fn from_case(case: GradCase, step: f64) -> Self {
        Check::new(case.name, move || case.run(step))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Maximum relative error, or the error that stopped the check.
    pub outcome: std::result::Result<f64, String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        matches!(self.outcome, Ok(e) if e < TOLERANCE)
    }
}

pub fn run_checks(checks: &[Check]) -> Vec<CheckResult> {
    checks
        .iter()
        .map(|c| CheckResult {
            name: c.name.clone(),
            outcome: (c.run)().map_err(|e| e.to_string()),
        })
        .collect()
}

fn tiny_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        encoder: EncoderConfig {
            num_layers: 2,
            num_heads: 2,
            model_dim: 8,
            ffn_dim: 16,
            dropout: 0.2,
            max_positions: 16,
        },
        scorer: ScorerConfig {
            arc_hidden: 6,
            rel_hidden: 4,
            dropout: 0.2,
        },
        word_vocab: 12,
        pos_vocab: 7,
        num_labels: 3,
    }
}

/// Random sentence of `n` words with a random (possibly cyclic) gold graph.
fn random_sentence(n: usize, config: &ModelConfig, rng: &mut impl Rng) -> (FramedSentence, DepGraph) {
    let mut words = vec![crate::vocab::CLS, crate::vocab::ROOT];
    let mut pos = words.clone();
    for _ in 0..n {
        words.push(rng.random_range(5..config.word_vocab));
        pos.push(rng.random_range(5..config.pos_vocab));
    }
    words.push(crate::vocab::SEP);
    pos.push(crate::vocab::SEP);
    let heads: Vec<usize> = (0..n)
        .map(|k| loop {
            let h = rng.random_range(1..=n + 1);
            if h != k + 2 {
                break h;
            }
        })
        .collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..config.num_labels)).collect();
    let previous = {
        let heads = (0..n)
            .map(|k| loop {
                let h = rng.random_range(1..=n + 1);
                if h != k + 2 {
                    break h;
                }
            })
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..config.num_labels)).collect();
        DepGraph::new(heads, labels).expect("valid graph")
    };
    let sentence = FramedSentence {
        words,
        pos,
        len: n,
        heads,
        labels: labels.into_iter().map(Some).collect(),
    };
    (sentence, previous)
}

/// End-to-end loss of a 2-layer graph-conditioned encoder and the scorers,
/// in 64-bit floats with every trainable parameter randomized and dropout
/// active under a fixed seed.
pub fn model_check(seed: u64, step: f64) -> Check {
    let config = tiny_config(ModelKind::RngTr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model: Model<f64> = Model::new(config.clone(), seed).expect("valid config");
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let p = model.params.param_mut(id);
        for e in 0..p.value.numel() {
            if p.is_trainable(e) {
                p.value.data_mut()[e] = rng.random_range(-0.5..0.5);
            }
        }
    }
    let n = rng.random_range(3..=6);
    let (sentence, previous) = random_sentence(n, &config, &mut rng);
    let dropout_seed = rng.random();
    Check::new("model_loss", move || {
        grad_check_params(
            |tape: &mut Tape<f64>, params| {
                let m = Model {
                    config: model.config.clone(),
                    params: params.clone(),
                    ids: model.ids.clone(),
                };
                let mut mode = Mode::training(dropout_seed);
                let fwd = m
                    .forward(tape, &sentence, Conditioning::Graph(&previous), &mut mode)
                    .map_err(|e| TensorError::invalid("model_loss", e.to_string()))?;
                m.loss(tape, &sentence, &fwd)
                    .map_err(|e| TensorError::invalid("model_loss", e.to_string()))
            },
            &model.params,
            step,
        )
    })
}

/// The standard suite: all tensor ops for `seed`, then the model loss.
pub fn suite(seed: u64) -> Vec<Check> {
    let mut checks: Vec<Check> = op_cases(seed).into_iter().map(|c| Check::from_case(c, 1e-3)).collect();
    checks.push(model_check(seed, 1e-4));
    checks
}
