//! Word, POS and label vocabularies plus sentence framing.
//!
//! A framed sentence of `n` words has `n + 3` positions:
//! `0` CLS, `1` ROOT, `2..=n+1` the words, `n + 2` SEP. Word `k` (1-based)
//! sits at position `k + 1`, so a raw head `h` becomes framed head `h + 1`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::conllu::RawSentence;
use crate::error::{Error, Result};

pub const CLS: usize = 0;
pub const ROOT: usize = 1;
pub const SEP: usize = 2;
pub const UNK: usize = 3;
pub const PAD: usize = 4;
const RESERVED: [&str; 5] = ["<cls>", "<root>", "<sep>", "<unk>", "<pad>"];

/// Framed position of the ROOT symbol.
pub const ROOT_POSITION: usize = 1;

/// Framed position of word `k` (0-based word index).
pub fn word_position(k: usize) -> usize {
    k + 2
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Table {
    fn with_reserved() -> Self {
        let mut t = Table::empty();
        for r in RESERVED {
            t.insert(r);
        }
        t
    }

    fn empty() -> Self {
        Table {
            ids: HashMap::new(),
            tokens: Vec::new(),
        }
    }

    fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.ids.insert(token.to_string(), id);
        self.tokens.push(token.to_string());
        id
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    pub words: Table,
    pub pos: Table,
    pub labels: Table,
}

/// Model input for one sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FramedSentence {
    pub words: Vec<usize>,
    pub pos: Vec<usize>,
    /// Number of real words.
    pub len: usize,
    /// Framed gold heads per word, when the source carried them.
    pub heads: Vec<usize>,
    /// Gold label ids per word; `None` for labels outside the vocabulary.
    pub labels: Vec<Option<usize>>,
}

impl FramedSentence {
    /// Total framed length `n + 3`.
    pub fn positions(&self) -> usize {
        self.words.len()
    }

    pub fn has_gold(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }
}

pub fn build_vocab(train: &[RawSentence], min_freq: usize) -> Result<Vocab> {
    if train.is_empty() {
        return Err(Error::Vocab("training set is empty".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut pos: BTreeMap<&str, ()> = BTreeMap::new();
    let mut labels: BTreeMap<&str, ()> = BTreeMap::new();
    for s in train {
        for ((f, p), l) in s.forms.iter().zip(&s.upos).zip(&s.labels) {
            *counts.entry(f).or_default() += 1;
            pos.insert(p, ());
            labels.insert(l, ());
        }
    }
    if labels.is_empty() {
        return Err(Error::Vocab("no dependency labels in training data".into()));
    }
    let mut words = Table::with_reserved();
    // Descending frequency, ties alphabetical.
    let mut by_freq: Vec<_> = counts.into_iter().filter(|&(_, c)| c >= min_freq).collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    for (w, _) in by_freq {
        words.insert(w);
    }
    let mut pos_table = Table::with_reserved();
    for p in pos.keys() {
        pos_table.insert(p);
    }
    let mut label_table = Table::empty();
    for l in labels.keys() {
        label_table.insert(l);
    }
    Ok(Vocab {
        words,
        pos: pos_table,
        labels: label_table,
    })
}

impl Vocab {
    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    /// Size of the relation vocabulary: NONE plus both directions per label.
    pub fn num_relations(&self) -> usize {
        2 * self.num_labels() + 1
    }

    pub fn label(&self, id: usize) -> &str {
        self.labels.token(id).expect("label id within vocabulary")
    }

    pub fn encode_sentence(&self, s: &RawSentence) -> FramedSentence {
        let n = s.len();
        let mut words = Vec::with_capacity(n + 3);
        let mut pos = Vec::with_capacity(n + 3);
        words.extend([CLS, ROOT]);
        pos.extend([CLS, ROOT]);
        for (f, p) in s.forms.iter().zip(&s.upos) {
            words.push(self.words.get(f).unwrap_or(UNK));
            pos.push(self.pos.get(p).unwrap_or(UNK));
        }
        words.push(SEP);
        pos.push(SEP);
        FramedSentence {
            words,
            pos,
            len: n,
            heads: s.heads.iter().map(|&h| h + 1).collect(),
            labels: s.labels.iter().map(|l| self.labels.get(l)).collect(),
        }
    }

    /// Inverse of the head framing: framed heads back to 0-based raw heads.
    pub fn deframe_heads(heads: &[usize]) -> Vec<usize> {
        heads.iter().map(|&h| h - 1).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, table) in [("words", &self.words), ("pos", &self.pos), ("labels", &self.labels)] {
            writeln!(out, "[{name}]").unwrap();
            for (id, tok) in table.tokens.iter().enumerate() {
                writeln!(out, "{tok}\t{id}").unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tables: BTreeMap<&str, Vec<(String, usize)>> = BTreeMap::new();
        let mut current = None;
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = Some(name);
                tables.entry(name).or_default();
                continue;
            }
            let section = current.ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "entry before any section header".into(),
            })?;
            let (tok, id) = line.rsplit_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected token<TAB>id".into(),
            })?;
            let id = id.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("invalid id {id:?}"),
            })?;
            tables.get_mut(section).unwrap().push((tok.to_string(), id));
        }
        let mut take = |name: &str| -> Result<Table> {
            let entries = tables
                .remove(name)
                .ok_or_else(|| Error::Vocab(format!("missing [{name}] section")))?;
            let mut t = Table::empty();
            for (expected, (tok, id)) in entries.into_iter().enumerate() {
                if id != expected {
                    return Err(Error::Vocab(format!("[{name}] ids must be dense and sorted; {tok:?} has {id}")));
                }
                t.insert(&tok);
            }
            Ok(t)
        };
        let v = Vocab {
            words: take("words")?,
            pos: take("pos")?,
            labels: take("labels")?,
        };
        for (name, t) in [("words", &v.words), ("pos", &v.pos)] {
            if t.tokens.iter().take(RESERVED.len()).ne(RESERVED.iter()) {
                return Err(Error::Vocab(format!("[{name}] does not start with the reserved symbols")));
            }
        }
        if v.labels.is_empty() {
            return Err(Error::Vocab("empty label set".into()));
        }
        Ok(v)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(forms: &[&str], heads: &[usize], labels: &[&str]) -> RawSentence {
        RawSentence::new(
            forms.iter().map(|s| s.to_string()).collect(),
            forms.iter().map(|_| "X".to_string()).collect(),
            heads.to_vec(),
            labels.iter().map(|s| s.to_string()).collect(),
        )
    }

    #[test]
    fn frequency_cutoff() {
        let corpus: Vec<_> = (0..5)
            .map(|i| {
                let w = format!("w{i}");
                sent(&["the", &w], &[2, 0], &["det", "root"])
            })
            .collect();
        let v = build_vocab(&corpus, 2).unwrap();
        assert!(v.words.get("the").unwrap() >= 5);
        assert_eq!(v.words.get("w3"), None);
        let f = v.encode_sentence(&corpus[3]);
        assert_eq!(f.words[3], UNK);
        assert_eq!(v.num_labels(), 2);
        assert_eq!(v.num_relations(), 5);
    }

    #[test]
    fn framing_layout() {
        let s = sent(&["dogs", "bark"], &[2, 0], &["nsubj", "root"]);
        let v = build_vocab(std::slice::from_ref(&s), 1).unwrap();
        let f = v.encode_sentence(&s);
        assert_eq!(f.positions(), 5);
        assert_eq!(f.words[0], CLS);
        assert_eq!(f.words[1], ROOT);
        assert_eq!(f.words[4], SEP);
        assert_eq!(f.heads, [3, ROOT_POSITION]);
        assert_eq!(Vocab::deframe_heads(&f.heads), s.heads);
    }

    #[test]
    fn text_roundtrip() {
        let s = sent(&["a", "b", "a"], &[0, 1, 1], &["root", "x", "y"]);
        let v = build_vocab(&[s], 1).unwrap();
        assert_eq!(Vocab::from_text(&v.to_text()).unwrap(), v);
        assert!(Vocab::from_text("[words]\n<cls>\t0\n").is_err());
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(build_vocab(&[], 2).is_err());
    }
}
