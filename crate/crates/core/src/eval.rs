//! Attachment scores, relative error reduction and error-analysis tables.

use std::collections::BTreeSet;
use std::path::Path;

use crate::conllu::RawSentence;
use crate::error::{Error, Result};
use crate::graph::DepGraph;
use crate::vocab::FramedSentence;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PunctPolicy {
    Keep,
    Exclude,
}

impl PunctPolicy {
    pub fn name(self) -> &'static str {
        match self {
            PunctPolicy::Keep => "keep",
            PunctPolicy::Exclude => "exclude",
        }
    }

    pub fn counts(self, upos: &str) -> bool {
        self == PunctPolicy::Keep || upos != "PUNCT"
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Attachment {
    pub tokens: usize,
    pub correct_heads: usize,
    pub correct_labeled: usize,
}

impl Attachment {
    pub fn uas(&self) -> f64 {
        percent(self.correct_heads, self.tokens)
    }

    pub fn las(&self) -> f64 {
        percent(self.correct_labeled, self.tokens)
    }

    fn add(&mut self, head_ok: bool, label_ok: bool) {
        self.tokens += 1;
        self.correct_heads += head_ok as usize;
        self.correct_labeled += (head_ok && label_ok) as usize;
    }
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

fn check_aligned(gold: &[RawSentence], pred: &[RawSentence]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() || g.forms != p.forms {
            return Err(Error::Alignment(format!(
                "sentence {}: gold has {} tokens, prediction {} (or forms differ)",
                i + 1,
                g.len(),
                p.len()
            )));
        }
    }
    Ok(())
}

pub fn attachment_scores(gold: &[RawSentence], pred: &[RawSentence], policy: PunctPolicy) -> Result<Attachment> {
    check_aligned(gold, pred)?;
    let mut a = Attachment::default();
    for (g, p) in gold.iter().zip(pred) {
        for k in 0..g.len() {
            if policy.counts(&g.upos[k]) {
                a.add(g.heads[k] == p.heads[k], g.labels[k] == p.labels[k]);
            }
        }
    }
    Ok(a)
}

/// Scores of framed predictions against the gold heads and labels carried by
/// the framed sentences. `counted[i][k]` selects evaluated words.
pub fn framed_scores(gold: &[FramedSentence], pred: &[DepGraph], counted: Option<&[Vec<bool>]>) -> Result<Attachment> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment(format!("{} sentences but {} graphs", gold.len(), pred.len())));
    }
    let mut a = Attachment::default();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if p.len() != g.len {
            return Err(Error::Alignment(format!("sentence {}: {} words but graph of {}", i + 1, g.len, p.len())));
        }
        for k in 0..g.len {
            if counted.is_some_and(|c| !c[i][k]) {
                continue;
            }
            a.add(g.heads[k] == p.heads[k], g.labels[k] == Some(p.labels[k]));
        }
    }
    Ok(a)
}

/// `100 · (new − old) / (100 − old)`.
pub fn relative_error_reduction(old: f64, new: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&old) || !(0.0..=100.0).contains(&new) {
        return Err(Error::Eval(format!("scores must lie in [0, 100], got {old} and {new}")));
    }
    if old == 100.0 {
        return Err(Error::Eval("relative error reduction is undefined when the old score is 100".into()));
    }
    Ok(100.0 * (new - old) / (100.0 - old))
}

/// RELᵗ for consecutive scores; `None` where the earlier score is 100.
pub fn rel_sequence(scores: &[f64]) -> Vec<Option<f64>> {
    scores
        .windows(2)
        .map(|w| relative_error_reduction(w[0], w[1]).ok())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinAxis {
    DependencyLength,
    DistanceToRoot,
    SentenceLength,
}

impl BinAxis {
    pub fn name(self) -> &'static str {
        match self {
            BinAxis::DependencyLength => "dependency_length",
            BinAxis::DistanceToRoot => "distance_to_root",
            BinAxis::SentenceLength => "sentence_length",
        }
    }

    /// Lower bounds of the default bins.
    pub fn default_edges(self) -> &'static [usize] {
        match self {
            BinAxis::DependencyLength | BinAxis::DistanceToRoot => &[1, 2, 3, 4, 7],
            BinAxis::SentenceLength => &[1, 11, 21, 31, 41],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bin {
    pub lower: usize,
    /// Inclusive upper bound; `None` for the open last bin.
    pub upper: Option<usize>,
    /// Tokens, or sentences on the sentence-length axis.
    pub population: usize,
    pub scores: Attachment,
}

impl Bin {
    pub fn label(&self) -> String {
        match self.upper {
            Some(u) if u == self.lower => format!("{}", self.lower),
            Some(u) => format!("{}-{u}", self.lower),
            None => format!("{}+", self.lower),
        }
    }

    /// LAS within the bin, `None` when empty.
    pub fn las(&self) -> Option<f64> {
        (self.scores.tokens > 0).then(|| self.scores.las())
    }
}

/// Depth of each word below ROOT (root's children have depth 1).
fn depths(heads: &[usize]) -> Result<Vec<usize>> {
    let n = heads.len();
    (0..n)
        .map(|k| {
            let mut w = k + 1;
            let mut d = 0;
            while w != 0 {
                w = heads[w - 1];
                d += 1;
                if d > n {
                    return Err(Error::Eval("gold tree contains a cycle".into()));
                }
            }
            Ok(d)
        })
        .collect()
}

pub fn bin_errors(
    gold: &[RawSentence],
    pred: &[RawSentence],
    axis: BinAxis,
    edges: &[usize],
    policy: PunctPolicy,
) -> Result<Vec<Bin>> {
    check_aligned(gold, pred)?;
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("bin edges must be non-empty and strictly increasing".into()));
    }
    let mut bins: Vec<Bin> = edges
        .iter()
        .enumerate()
        .map(|(i, &lower)| Bin {
            lower,
            upper: edges.get(i + 1).map(|&e| e - 1),
            population: 0,
            scores: Attachment::default(),
        })
        .collect();
    let bin_of = |v: usize| edges.iter().rposition(|&e| e <= v).unwrap_or(0);
    for (g, p) in gold.iter().zip(pred) {
        let depth = depths(&g.heads)?;
        let counted: Vec<usize> = (0..g.len()).filter(|&k| policy.counts(&g.upos[k])).collect();
        if axis == BinAxis::SentenceLength {
            let b = &mut bins[bin_of(g.len())];
            b.population += 1;
            for &k in &counted {
                b.scores.add(g.heads[k] == p.heads[k], g.labels[k] == p.labels[k]);
            }
            continue;
        }
        for &k in &counted {
            let v = match axis {
                BinAxis::DependencyLength => g.heads[k].abs_diff(k + 1),
                _ => depth[k],
            };
            let b = &mut bins[bin_of(v)];
            b.population += 1;
            b.scores.add(g.heads[k] == p.heads[k], g.labels[k] == p.labels[k]);
        }
    }
    Ok(bins)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeptypeScore {
    pub label: String,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl DeptypeScore {
    pub fn precision(&self) -> Option<f64> {
        (self.predicted > 0).then(|| percent(self.correct, self.predicted))
    }

    pub fn recall(&self) -> Option<f64> {
        (self.gold > 0).then(|| percent(self.correct, self.gold))
    }

    /// F-score; `None` when the label occurs in neither gold nor prediction.
    pub fn f(&self) -> Option<f64> {
        if self.gold == 0 && self.predicted == 0 {
            return None;
        }
        let p = self.precision().unwrap_or(0.0);
        let r = self.recall().unwrap_or(0.0);
        Some(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
    }
}

/// Labels seen in gold or in any of the predictions, sorted.
pub fn label_inventory<'a>(gold: &'a [RawSentence], preds: impl IntoIterator<Item = &'a [RawSentence]>) -> Vec<String> {
    let mut set: BTreeSet<&str> = gold.iter().flat_map(|s| s.labels.iter().map(String::as_str)).collect();
    for p in preds {
        set.extend(p.iter().flat_map(|s| s.labels.iter().map(String::as_str)));
    }
    set.into_iter().map(str::to_string).collect()
}

/// Per-label precision/recall/F for the given label inventory.
pub fn deptype_scores(
    gold: &[RawSentence],
    pred: &[RawSentence],
    labels: &[String],
    policy: PunctPolicy,
) -> Result<Vec<DeptypeScore>> {
    check_aligned(gold, pred)?;
    let mut out: Vec<DeptypeScore> = labels
        .iter()
        .map(|l| DeptypeScore {
            label: l.clone(),
            gold: 0,
            predicted: 0,
            correct: 0,
        })
        .collect();
    let index = |l: &str| labels.iter().position(|x| x == l);
    for (g, p) in gold.iter().zip(pred) {
        for k in 0..g.len() {
            if !policy.counts(&g.upos[k]) {
                continue;
            }
            if let Some(i) = index(&g.labels[k]) {
                out[i].gold += 1;
            }
            if let Some(i) = index(&p.labels[k]) {
                out[i].predicted += 1;
                if p.labels[k] == g.labels[k] && p.heads[k] == g.heads[k] {
                    out[i].correct += 1;
                }
            }
        }
    }
    Ok(out)
}

/// F per label for each iteration, with the relative F-error reduction
/// between consecutive iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct DeptypeTrajectory {
    pub label: String,
    pub f: Vec<Option<f64>>,
    pub reduction: Vec<Option<f64>>,
}

pub fn deptype_f(gold: &[RawSentence], iterations: &[Vec<RawSentence>], policy: PunctPolicy) -> Result<Vec<DeptypeTrajectory>> {
    let labels = label_inventory(gold, iterations.iter().map(Vec::as_slice));
    let per_iter = iterations
        .iter()
        .map(|p| deptype_scores(gold, p, &labels, policy))
        .collect::<Result<Vec<_>>>()?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<Option<f64>> = per_iter.iter().map(|scores| scores[i].f()).collect();
            let reduction = f
                .windows(2)
                .map(|w| match (w[0], w[1]) {
                    (Some(a), Some(b)) => relative_error_reduction(a, b).ok(),
                    _ => None,
                })
                .collect();
            DeptypeTrajectory {
                label: l.clone(),
                f,
                reduction,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub sentences: usize,
    /// LAS per iteration; `None` for an empty partition.
    pub las: Vec<Option<f64>>,
    /// Relative error reduction between consecutive iterations.
    pub reduction: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectivitySplit {
    pub projective: Partition,
    pub non_projective: Partition,
}

pub fn projectivity_split(gold: &[RawSentence], iterations: &[Vec<RawSentence>], policy: PunctPolicy) -> Result<ProjectivitySplit> {
    let mut is_proj = Vec::with_capacity(gold.len());
    for g in gold {
        let graph = DepGraph::from_raw(&g.heads, vec![0; g.len()])?;
        if graph.has_cycle() {
            return Err(Error::Eval("gold tree contains a cycle".into()));
        }
        is_proj.push(graph.is_projective()?);
    }
    let partition = |want: bool| -> Result<Partition> {
        let idx: Vec<usize> = (0..gold.len()).filter(|&i| is_proj[i] == want).collect();
        let g: Vec<RawSentence> = idx.iter().map(|&i| gold[i].clone()).collect();
        let las = iterations
            .iter()
            .map(|p| {
                let p: Vec<RawSentence> = idx.iter().map(|&i| p[i].clone()).collect();
                let a = attachment_scores(&g, &p, policy)?;
                Ok((a.tokens > 0).then(|| a.las()))
            })
            .collect::<Result<Vec<_>>>()?;
        let reduction = las
            .windows(2)
            .map(|w| match (w[0], w[1]) {
                (Some(a), Some(b)) => relative_error_reduction(a, b).ok(),
                _ => None,
            })
            .collect();
        Ok(Partition {
            sentences: idx.len(),
            las,
            reduction,
        })
    };
    for p in iterations {
        check_aligned(gold, p)?;
    }
    Ok(ProjectivitySplit {
        projective: partition(true)?,
        non_projective: partition(false)?,
    })
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

pub fn write_bins_csv(path: impl AsRef<Path>, tables: &[(BinAxis, Vec<Bin>)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["axis", "bin", "population", "tokens", "uas", "las"])?;
    for (axis, bins) in tables {
        for b in bins {
            let uas = (b.scores.tokens > 0).then(|| b.scores.uas());
            w.write_record([
                axis.name().to_string(),
                b.label(),
                b.population.to_string(),
                b.scores.tokens.to_string(),
                fmt_opt(uas),
                fmt_opt(b.las()),
            ])?;
        }
    }
    finish(w, path)
}

pub fn write_deptypes_csv(path: impl AsRef<Path>, rows: &[DeptypeTrajectory]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let iterations = rows.first().map_or(0, |r| r.f.len());
    let mut header = vec!["label".to_string()];
    header.extend((0..iterations).map(|t| format!("f_{t}")));
    header.extend((1..iterations).map(|t| format!("reduction_{t}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.label.clone()];
        rec.extend(r.f.iter().map(|&v| fmt_opt(v)));
        rec.extend(r.reduction.iter().map(|&v| fmt_opt(v)));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

pub fn write_projectivity_csv(path: impl AsRef<Path>, split: &ProjectivitySplit) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["partition", "sentences", "iteration", "las", "reduction"])?;
    for (name, part) in [("projective", &split.projective), ("non_projective", &split.non_projective)] {
        for (t, las) in part.las.iter().enumerate() {
            let red = if t == 0 { None } else { part.reduction[t - 1] };
            w.write_record([
                name.to_string(),
                part.sentences.to_string(),
                t.to_string(),
                fmt_opt(*las),
                fmt_opt(red),
            ])?;
        }
    }
    finish(w, path)
}

/// Per-iteration attachment scores and RELᵗ.
pub fn write_rel_csv(path: impl AsRef<Path>, scores: &[Attachment]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "uas", "las", "rel"])?;
    let las: Vec<f64> = scores.iter().map(Attachment::las).collect();
    let rel = rel_sequence(&las);
    for (t, a) in scores.iter().enumerate() {
        let r = if t == 0 { None } else { rel[t - 1] };
        w.write_record([t.to_string(), format!("{:.2}", a.uas()), format!("{:.2}", a.las()), fmt_opt(r)])?;
    }
    finish(w, path)
}
