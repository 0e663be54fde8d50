//! Head selection: independent argmax and maximum spanning arborescence.

use crate::error::{Error, Result};
use crate::graph::DepGraph;
use crate::vocab::ROOT_POSITION;

/// `size × size` arc scores, row = dependent, column = head, both framed
/// positions. Rows of the CLS/ROOT/SEP symbols and illegal heads are `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArcScores {
    pub size: usize,
    pub data: Vec<f32>,
}

impl ArcScores {
    /// Build from one row per word (`n × size`) as produced by the scorer.
    pub fn from_word_rows(words: usize, rows: &[f32]) -> Result<Self> {
        let size = words + 3;
        if rows.len() != words * size {
            return Err(Error::Decode(format!("{} scores for {words} words", rows.len())));
        }
        let mut data = vec![f32::NEG_INFINITY; size * size];
        data[2 * size..(words + 2) * size].copy_from_slice(rows);
        Ok(ArcScores { size, data })
    }

    /// Scores for a raw word-by-head matrix with the usual legality mask:
    /// heads are ROOT or another word.
    pub fn masked(words: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let size = words + 3;
        let mut data = vec![f32::NEG_INFINITY; size * size];
        for d in 2..words + 2 {
            for h in 1..words + 2 {
                if h != d {
                    data[d * size + h] = f(d, h);
                }
            }
        }
        ArcScores { size, data }
    }

    pub fn words(&self) -> usize {
        self.size - 3
    }

    pub fn get(&self, dep: usize, head: usize) -> f32 {
        self.data[dep * self.size + head]
    }

    fn row(&self, dep: usize) -> &[f32] {
        &self.data[dep * self.size..(dep + 1) * self.size]
    }
}

/// Label scores for one chosen head per word (`words × num_labels`).
#[derive(Clone, Debug, PartialEq)]
pub struct LabelScores {
    pub num_labels: usize,
    pub data: Vec<f32>,
}

impl LabelScores {
    pub fn row(&self, k: usize) -> &[f32] {
        &self.data[k * self.num_labels..(k + 1) * self.num_labels]
    }
}

/// Sum of the chosen arc scores, accumulated in word order.
pub fn tree_score(scores: &ArcScores, heads: &[usize]) -> f64 {
    heads
        .iter()
        .enumerate()
        .map(|(k, &h)| scores.get(k + 2, h) as f64)
        .sum()
}

fn first_max(values: &[f32]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v == f32::NEG_INFINITY || v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Best head for every word independently; may contain cycles.
pub fn argmax_decode(scores: &ArcScores) -> Result<Vec<usize>> {
    (0..scores.words())
        .map(|k| {
            first_max(scores.row(k + 2))
                .ok_or_else(|| Error::Decode(format!("word {} has no finite head score", k + 1)))
        })
        .collect()
}

/// Label per word by argmax at its chosen head, ties to the smaller id.
pub fn assign_labels(heads: &[usize], labels: &LabelScores) -> Result<DepGraph> {
    let ids = (0..heads.len())
        .map(|k| {
            first_max(labels.row(k)).ok_or_else(|| Error::Decode(format!("word {} has no finite label score", k + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    DepGraph::new(heads.to_vec(), ids)
}

/// Highest-scoring spanning tree rooted at ROOT. With `single_root`, exactly
/// one word attaches to ROOT.
pub fn mst_decode(scores: &ArcScores, single_root: bool) -> Result<Vec<usize>> {
    let n = scores.words();
    if n == 0 {
        return Err(Error::Decode("sentence without words".into()));
    }
    let heads = arborescence(scores, None)?;
    let roots = heads.iter().filter(|&&h| h == ROOT_POSITION).count();
    if !single_root || roots == 1 {
        return Ok(heads);
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 2..n + 2 {
        if scores.get(r, ROOT_POSITION) == f32::NEG_INFINITY {
            continue;
        }
        let Ok(candidate) = arborescence(scores, Some(r)) else {
            continue;
        };
        let total = tree_score(scores, &candidate);
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, candidate));
        }
    }
    best.map(|(_, h)| h)
        .ok_or_else(|| Error::Decode("no feasible single-root tree".into()))
}

/// Dense Chu-Liu/Edmonds in O(n²) following Tarjan's path-growing scheme.
///
/// Node 0 is ROOT, node `k` is framed position `k + 1`. Every supernode keeps
/// the best adjusted weight of an edge from each other live supernode, so a
/// contraction costs O(n · |cycle|) and choosing an edge costs O(n).
fn arborescence(scores: &ArcScores, only_root_child: Option<usize>) -> Result<Vec<usize>> {
    let m = scores.words() + 1;
    let cap = 2 * m;
    let weight = |dst: usize, src: usize| -> f64 {
        if src == 0 {
            if let Some(r) = only_root_child {
                if dst + 1 != r {
                    return f64::NEG_INFINITY;
                }
            }
        }
        scores.get(dst + 1, src + 1) as f64
    };

    let mut in_w: Vec<Vec<f64>> = Vec::with_capacity(cap);
    let mut in_edge: Vec<Vec<(usize, usize)>> = Vec::with_capacity(cap);
    for v in 0..m {
        let mut w = vec![f64::NEG_INFINITY; cap];
        let mut e = vec![(usize::MAX, usize::MAX); cap];
        if v != 0 {
            for u in 0..m {
                if u != v {
                    w[u] = weight(v, u);
                    e[u] = (u, v);
                }
            }
        }
        in_w.push(w);
        in_edge.push(e);
    }

    let mut nodes = m;
    let mut live = vec![false; cap];
    live[..m].fill(true);
    let mut done = vec![false; cap];
    done[0] = true;
    let mut on_path = vec![false; cap];
    let mut parent = vec![usize::MAX; cap];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cap];
    let mut chosen_w = vec![0f64; cap];
    let mut chosen_edge = vec![(usize::MAX, usize::MAX); cap];

    for start in 1..m {
        if done[start] || !live[start] {
            continue;
        }
        let mut path = vec![start];
        on_path[start] = true;
        let mut cur = start;
        loop {
            let mut best: Option<usize> = None;
            for u in 0..nodes {
                if !live[u] || u == cur || in_w[cur][u] == f64::NEG_INFINITY {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => {
                        in_w[cur][u] > in_w[cur][b]
                            || (in_w[cur][u] == in_w[cur][b] && in_edge[cur][u].0 < in_edge[cur][b].0)
                    }
                };
                if better {
                    best = Some(u);
                }
            }
            let u = best.ok_or_else(|| Error::Decode("no feasible tree: a word has no finite head score".into()))?;
            chosen_w[cur] = in_w[cur][u];
            chosen_edge[cur] = in_edge[cur][u];
            if done[u] {
                for &x in &path {
                    done[x] = true;
                    on_path[x] = false;
                }
                break;
            }
            if !on_path[u] {
                path.push(u);
                on_path[u] = true;
                cur = u;
                continue;
            }

            // Contract the cycle u -> ... -> cur -> u.
            let mut cycle = Vec::new();
            loop {
                let x = path.pop().expect("cycle node on path");
                on_path[x] = false;
                cycle.push(x);
                if x == u {
                    break;
                }
            }
            let c = nodes;
            nodes += 1;
            let mut w_c = vec![f64::NEG_INFINITY; cap];
            let mut e_c = vec![(usize::MAX, usize::MAX); cap];
            for &x in &cycle {
                live[x] = false;
                parent[x] = c;
            }
            for y in 0..c {
                if !live[y] {
                    continue;
                }
                for &x in &cycle {
                    let cand = in_w[x][y] - chosen_w[x];
                    if cand > w_c[y] || (cand == w_c[y] && cand != f64::NEG_INFINITY && in_edge[x][y].0 < e_c[y].0) {
                        w_c[y] = cand;
                        e_c[y] = in_edge[x][y];
                    }
                }
                if y != 0 && !done[y] {
                    let mut bw = f64::NEG_INFINITY;
                    let mut be = (usize::MAX, usize::MAX);
                    for &x in &cycle {
                        if in_w[y][x] > bw {
                            bw = in_w[y][x];
                            be = in_edge[y][x];
                        }
                    }
                    in_w[y][c] = bw;
                    in_edge[y][c] = be;
                }
            }
            in_w.push(w_c);
            in_edge.push(e_c);
            members[c] = cycle;
            live[c] = true;
            path.push(c);
            on_path[c] = true;
            cur = c;
        }
    }

    // Expand: each top-level supernode keeps its chosen entering edge; inside
    // a contracted cycle the member receiving that edge drops its own.
    let mut head = vec![usize::MAX; m];
    let mut stack: Vec<(usize, (usize, usize))> = (1..nodes)
        .filter(|&s| live[s])
        .map(|s| (s, chosen_edge[s]))
        .collect();
    while let Some((s, edge)) = stack.pop() {
        if s < m {
            debug_assert_eq!(edge.1, s);
            head[s] = edge.0;
            continue;
        }
        let mut x = edge.1;
        while parent[x] != s {
            x = parent[x];
        }
        for &child in &members[s] {
            let e = if child == x { edge } else { chosen_edge[child] };
            stack.push((child, e));
        }
    }
    Ok(head[1..].iter().map(|&h| h + 1).collect())
}
