//! CoNLL-U reading and writing.
//!
//! Only the basic token lines are kept: multiword ranges (`3-4`) and empty
//! nodes (`5.1`) are skipped. LEMMA, XPOS, FEATS, DEPS and MISC are carried
//! through unchanged so that predictions can be written back next to them.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Columns the parser does not interpret.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Passthrough {
    pub lemma: String,
    pub xpos: String,
    pub feats: String,
    pub deps: String,
    pub misc: String,
}

impl Default for Passthrough {
    fn default() -> Self {
        let u = || "_".to_string();
        Passthrough {
            lemma: u(),
            xpos: u(),
            feats: u(),
            deps: u(),
            misc: u(),
        }
    }
}

/// One sentence. `heads` are 0-based with 0 meaning the syntactic root,
/// so word `k` (1-based) is referred to as `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawSentence {
    pub forms: Vec<String>,
    pub upos: Vec<String>,
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
    pub metadata: Vec<String>,
    pub passthrough: Vec<Passthrough>,
}

impl RawSentence {
    pub fn new(forms: Vec<String>, upos: Vec<String>, heads: Vec<usize>, labels: Vec<String>) -> Self {
        let passthrough = vec![Passthrough::default(); forms.len()];
        RawSentence {
            forms,
            upos,
            heads,
            labels,
            metadata: Vec::new(),
            passthrough,
        }
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    /// Check the column invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.forms.len();
        if n == 0 {
            return Err(Error::Alignment("sentence has no tokens".into()));
        }
        let lens = [self.upos.len(), self.heads.len(), self.labels.len(), self.passthrough.len()];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::Alignment(format!(
                "column lengths differ: {n} forms, {} upos, {} heads, {} labels, {} passthrough",
                lens[0], lens[1], lens[2], lens[3]
            )));
        }
        if let Some((i, &h)) = self.heads.iter().enumerate().find(|(_, &h)| h > n) {
            return Err(Error::Alignment(format!("token {} has head {h} beyond length {n}", i + 1)));
        }
        Ok(())
    }

    /// Copy of this sentence carrying predicted heads and labels.
    pub fn with_prediction(&self, heads: Vec<usize>, labels: Vec<String>) -> Result<Self> {
        if heads.len() != self.len() || labels.len() != self.len() {
            return Err(Error::Alignment(format!(
                "{} predicted heads and {} labels for {} tokens",
                heads.len(),
                labels.len(),
                self.len()
            )));
        }
        let out = RawSentence {
            heads,
            labels,
            ..self.clone()
        };
        out.validate()?;
        Ok(out)
    }

    /// Value of a `# key = value` comment, if present.
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find_map(|line| {
            let rest = line.strip_prefix('#')?.trim_start();
            let (k, v) = rest.split_once('=')?;
            (k.trim() == key).then(|| v.trim())
        })
    }
}

pub fn parse_conllu(text: &str) -> Result<Vec<RawSentence>> {
    let mut sentences = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            if !block.is_empty() {
                sentences.push(parse_block(&block)?);
                block.clear();
            }
        } else {
            block.push((i + 1, line));
        }
    }
    if !block.is_empty() {
        sentences.push(parse_block(&block)?);
    }
    Ok(sentences)
}

fn parse_block(lines: &[(usize, &str)]) -> Result<RawSentence> {
    let mut s = RawSentence::new(Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut head_lines = Vec::new();
    for &(lineno, line) in lines {
        if line.starts_with('#') {
            s.metadata.push(line.to_string());
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("invalid token id {:?}", cols[0]),
        })?;
        if id != s.forms.len() + 1 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("token id {id} out of sequence, expected {}", s.forms.len() + 1),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("non-integer HEAD {:?}", cols[6]),
        })?;
        s.forms.push(cols[1].to_string());
        s.upos.push(cols[3].to_string());
        s.heads.push(head);
        s.labels.push(cols[7].to_string());
        s.passthrough.push(Passthrough {
            lemma: cols[2].to_string(),
            xpos: cols[4].to_string(),
            feats: cols[5].to_string(),
            deps: cols[8].to_string(),
            misc: cols[9].to_string(),
        });
        head_lines.push(lineno);
    }
    if s.forms.is_empty() {
        return Err(Error::Parse {
            line: lines[0].0,
            msg: "sentence block without token lines".into(),
        });
    }
    let n = s.forms.len();
    for (&h, &lineno) in s.heads.iter().zip(&head_lines) {
        if h > n {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("HEAD {h} outside sentence of {n} tokens"),
            });
        }
    }
    Ok(s)
}

pub fn emit_conllu(sentences: &[RawSentence]) -> Result<String> {
    let mut out = String::new();
    for s in sentences {
        s.validate()?;
        for m in &s.metadata {
            out.push_str(m);
            out.push('\n');
        }
        for i in 0..s.len() {
            let p = &s.passthrough[i];
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                i + 1,
                s.forms[i],
                p.lemma,
                s.upos[i],
                p.xpos,
                p.feats,
                s.heads[i],
                s.labels[i],
                p.deps,
                p.misc
            )
            .expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn read_conllu(path: impl AsRef<Path>) -> Result<Vec<RawSentence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conllu(&text).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

pub fn write_conllu(path: impl AsRef<Path>, sentences: &[RawSentence]) -> Result<()> {
    let path = path.as_ref();
    let text = emit_conllu(sentences)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "1\tdogs\t_\tNOUN\t_\t_\t2\tnsubj\t_\t_\n2\tbark\t_\tVERB\t_\t_\t0\troot\t_\t_\n\n";

    #[test]
    fn minimal_file() {
        let s = parse_conllu(MINIMAL).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].forms, ["dogs", "bark"]);
        assert_eq!(s[0].heads, [2, 0]);
        assert_eq!(s[0].labels, ["nsubj", "root"]);
        assert_eq!(emit_conllu(&s).unwrap(), MINIMAL);
    }

    #[test]
    fn ranges_and_empty_nodes_skipped() {
        let text = "# text = a b\n1-2\tab\t_\t_\t_\t_\t_\t_\t_\t_\n1\ta\t_\tX\t_\t_\t0\troot\t_\t_\n\
                    1.1\tz\t_\tX\t_\t_\t_\t_\t_\t_\n2\tb\t_\tX\t_\t_\t1\tdep\t_\t_\n";
        let s = parse_conllu(text).unwrap();
        assert_eq!(s[0].len(), 2);
        assert_eq!(s[0].meta("text"), Some("a b"));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad_head = "1\ta\t_\tX\t_\t_\tx\troot\t_\t_\n";
        match parse_conllu(bad_head) {
            Err(Error::Parse { line: 1, msg }) => assert!(msg.contains("HEAD")),
            other => panic!("{other:?}"),
        }
        let ragged = "1\ta\t_\tX\t_\t_\t0\troot\t_\t_\n2\tb\tX\n";
        assert!(matches!(parse_conllu(ragged), Err(Error::Parse { line: 2, .. })));
        let out_of_range = "\n1\ta\t_\tX\t_\t_\t3\troot\t_\t_\n";
        assert!(matches!(parse_conllu(out_of_range), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn misaligned_prediction_rejected() {
        let s = &parse_conllu(MINIMAL).unwrap()[0];
        assert!(s.with_prediction(vec![0], vec!["root".into()]).is_err());
        assert!(s.with_prediction(vec![0, 5], vec!["a".into(), "b".into()]).is_err());
    }
}
