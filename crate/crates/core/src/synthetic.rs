//! A small generated treebank: noun phrases with optional adjectives and
//! prepositional phrases, transitive and intransitive clauses, adverbs.
//!
//! PP attachment is lexical: `of`/`from` modify the preceding noun,
//! `with`/`at`/`near` modify the verb.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conllu::RawSentence;

const DET: &[&str] = &["the", "a", "this", "every", "some"];
const ADJ: &[&str] = &["big", "small", "red", "old", "young", "happy", "quiet", "green"];
const NOUN: &[&str] = &[
    "dog", "cat", "man", "woman", "park", "house", "telescope", "garden", "friend", "teacher", "book", "river",
    "city", "child", "bird", "car", "tree", "table", "apple", "road", "window", "song", "letter", "door", "ship",
];
const VERB: &[&str] = &["sees", "likes", "finds", "watches", "follows", "meets", "helps", "calls", "paints", "chases"];
const NOUN_ADP: &[&str] = &["of", "from"];
const VERB_ADP: &[&str] = &["with", "at", "near"];
const ADV: &[&str] = &["quickly", "often", "today", "slowly", "again", "now", "later"];

pub const LABELS: [&str; 6] = ["det", "mod", "nsubj", "obj", "pobj", "root"];
pub const MIN_LEN: usize = 3;
pub const MAX_LEN: usize = 12;

struct Builder {
    forms: Vec<String>,
    upos: Vec<String>,
    heads: Vec<usize>,
    labels: Vec<String>,
}

impl Builder {
    /// Push a token and return its 1-based index.
    fn push(&mut self, form: &str, upos: &str) -> usize {
        self.forms.push(form.to_string());
        self.upos.push(upos.to_string());
        self.heads.push(0);
        self.labels.push(String::new());
        self.forms.len()
    }

    fn attach(&mut self, dep: usize, head: usize, label: &str) {
        self.heads[dep - 1] = head;
        self.labels[dep - 1] = label.to_string();
    }

    fn noun_phrase(&mut self, rng: &mut impl Rng, allow_pp: bool) -> usize {
        let det = self.push(DET.choose(rng).unwrap(), "DET");
        let mut adjs = Vec::new();
        while adjs.len() < 2 && rng.random_bool(0.3) {
            adjs.push(self.push(ADJ.choose(rng).unwrap(), "ADJ"));
        }
        let noun = self.push(NOUN.choose(rng).unwrap(), "NOUN");
        self.attach(det, noun, "det");
        for a in adjs {
            self.attach(a, noun, "mod");
        }
        if allow_pp && rng.random_bool(0.25) {
            let adp = self.push(NOUN_ADP.choose(rng).unwrap(), "ADP");
            self.attach(adp, noun, "mod");
            let inner = self.noun_phrase(rng, false);
            self.attach(inner, adp, "pobj");
        }
        noun
    }
}

fn sentence(rng: &mut impl Rng) -> RawSentence {
    let mut b = Builder {
        forms: Vec::new(),
        upos: Vec::new(),
        heads: Vec::new(),
        labels: Vec::new(),
    };
    let subj = b.noun_phrase(rng, true);
    let verb = b.push(VERB.choose(rng).unwrap(), "VERB");
    b.attach(subj, verb, "nsubj");
    b.attach(verb, 0, "root");
    if rng.random_bool(0.7) {
        let obj = b.noun_phrase(rng, true);
        b.attach(obj, verb, "obj");
    }
    while rng.random_bool(0.35) {
        let adp = b.push(VERB_ADP.choose(rng).unwrap(), "ADP");
        b.attach(adp, verb, "mod");
        let inner = b.noun_phrase(rng, false);
        b.attach(inner, adp, "pobj");
    }
    if rng.random_bool(0.3) {
        let adv = b.push(ADV.choose(rng).unwrap(), "ADV");
        b.attach(adv, verb, "mod");
    }
    RawSentence::new(b.forms, b.upos, b.heads, b.labels)
}

/// `count` sentences with lengths in `[MIN_LEN, MAX_LEN]`.
pub fn generate(count: usize, seed: u64) -> Vec<RawSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let s = sentence(&mut rng);
        if (MIN_LEN..=MAX_LEN).contains(&s.len()) {
            let mut s = s;
            s.metadata.push(format!("# sent_id = toy-{seed}-{}", out.len() + 1));
            s.metadata.push(format!("# text = {}", s.forms.join(" ")));
            out.push(s);
        }
    }
    out
}

/// Distinct words the generator can emit.
pub fn vocabulary_size() -> usize {
    DET.len() + ADJ.len() + NOUN.len() + VERB.len() + NOUN_ADP.len() + VERB_ADP.len() + ADV.len()
}

fn in_subtree(heads: &[usize], node: usize, mut w: usize) -> bool {
    // 1-based indices, 0 is ROOT.
    for _ in 0..=heads.len() {
        if w == node {
            return true;
        }
        if w == 0 {
            return false;
        }
        w = heads[w - 1];
    }
    false
}

/// Rewire `fraction` of all tokens (rounded) to a wrong head. The new head
/// is a word outside the token's subtree, so every sentence stays a tree with
/// a single root. Labels are kept. Returns the corrupted copies.
pub fn corrupt_heads(sentences: &[RawSentence], fraction: f64, seed: u64) -> Vec<RawSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = sentences.to_vec();
    let mut tokens: Vec<(usize, usize)> = sentences
        .iter()
        .enumerate()
        .flat_map(|(s, sent)| (0..sent.len()).map(move |k| (s, k)))
        .collect();
    let quota = (fraction * tokens.len() as f64).round() as usize;
    tokens.shuffle(&mut rng);
    let mut changed = 0;
    for (s, k) in tokens {
        if changed == quota {
            break;
        }
        let heads = &out[s].heads;
        let node = k + 1;
        let options: Vec<usize> = (1..=heads.len())
            .filter(|&h| h != heads[k] && !in_subtree(heads, node, h))
            .collect();
        if let Some(&h) = options.choose(&mut rng) {
            out[s].heads[k] = h;
            changed += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DepGraph;

    #[test]
    fn sentences_are_projective_single_root_trees() {
        for s in generate(300, 1) {
            assert!((MIN_LEN..=MAX_LEN).contains(&s.len()));
            s.validate().unwrap();
            let g = DepGraph::from_raw(&s.heads, vec![0; s.len()]).unwrap();
            assert!(!g.has_cycle());
            assert_eq!(g.root_children(), 1);
            assert!(g.is_projective().unwrap());
            assert!(s.labels.iter().all(|l| LABELS.contains(&l.as_str())));
        }
    }

    #[test]
    fn corruption_rate_is_exact_and_keeps_trees() {
        let gold = generate(100, 2);
        let bad = corrupt_heads(&gold, 0.2, 3);
        let total: usize = gold.iter().map(|s| s.len()).sum();
        let wrong: usize = gold
            .iter()
            .zip(&bad)
            .map(|(g, b)| g.heads.iter().zip(&b.heads).filter(|(x, y)| x != y).count())
            .sum();
        assert_eq!(wrong, (0.2 * total as f64).round() as usize);
        for (g, b) in gold.iter().zip(&bad) {
            assert_eq!(g.labels, b.labels);
            let t = DepGraph::from_raw(&b.heads, vec![0; b.len()]).unwrap();
            assert!(!t.has_cycle());
            assert_eq!(t.root_children(), 1);
        }
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(generate(20, 5), generate(20, 5));
        assert_ne!(generate(20, 5), generate(20, 6));
        assert_eq!(vocabulary_size(), 60);
    }
}
