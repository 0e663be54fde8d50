//! Reference implementations used as oracles by the integration tests.
#![allow(dead_code)]

use depref::decode::{tree_score, ArcScores};
use depref::graph::DepGraph;
use depref::model::{EncoderConfig, Model, ModelConfig, ModelKind, ScorerConfig};
use depref::vocab::{FramedSentence, CLS, ROOT, SEP};
use depref_tensor::Elem;
use rand::Rng;

/// Every arborescence over ROOT plus the words, by depth-first enumeration of
/// head arrays with cycle pruning. Returns the best score and its heads.
pub fn brute_force_max(scores: &ArcScores, single_root: bool) -> Option<(f64, Vec<usize>)> {
    let n = scores.words();
    let mut heads = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    enumerate(scores, 0, &mut heads, &mut |h| {
        if single_root && h.iter().filter(|&&x| x == 1).count() != 1 {
            return;
        }
        let s = tree_score(scores, h);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, h.to_vec()));
        }
    });
    best
}

/// Number of distinct arborescences (for sanity checks of the enumerator).
pub fn count_trees(words: usize) -> usize {
    let scores = ArcScores::masked(words, |_, _| 0.0);
    let mut heads = vec![0usize; words];
    let mut count = 0;
    enumerate(&scores, 0, &mut heads, &mut |_| count += 1);
    count
}

fn enumerate(scores: &ArcScores, k: usize, heads: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
    let n = heads.len();
    if k == n {
        if (0..n).all(|w| reaches_root(heads, w, n)) {
            visit(heads);
        }
        return;
    }
    for h in 1..n + 2 {
        if scores.get(k + 2, h) == f32::NEG_INFINITY {
            continue;
        }
        heads[k] = h;
        // Prune: the prefix assigned so far must not contain a cycle.
        if closes_cycle(heads, k) {
            continue;
        }
        enumerate(scores, k + 1, heads, visit);
    }
}

fn closes_cycle(heads: &[usize], k: usize) -> bool {
    let mut w = k;
    for _ in 0..=k + 1 {
        let h = heads[w];
        if h == 1 {
            return false;
        }
        let next = h - 2;
        if next > k {
            return false;
        }
        if next == k {
            return true;
        }
        w = next;
    }
    true
}

fn reaches_root(heads: &[usize], mut w: usize, n: usize) -> bool {
    for _ in 0..=n {
        if heads[w] == 1 {
            return true;
        }
        w = heads[w] - 2;
    }
    false
}

/// Textbook recursive Chu-Liu/Edmonds, O(n³). `w[dst][src]`, node 0 is the root.
pub fn naive_edmonds(w: &[Vec<f64>]) -> Vec<usize> {
    let n = w.len();
    let mut best = vec![usize::MAX; n];
    for v in 1..n {
        let mut b = usize::MAX;
        for u in 0..n {
            if u != v && w[v][u] > f64::NEG_INFINITY && (b == usize::MAX || w[v][u] > w[v][b]) {
                b = u;
            }
        }
        best[v] = b;
    }
    let Some(cycle) = find_cycle(&best) else {
        return best;
    };
    let in_cycle: Vec<bool> = (0..n).map(|v| cycle.contains(&v)).collect();
    // New node ids: non-cycle nodes keep their order, the cycle becomes last.
    let mut map = vec![usize::MAX; n];
    let mut next = 0;
    for v in 0..n {
        if !in_cycle[v] {
            map[v] = next;
            next += 1;
        }
    }
    let c = next;
    for &v in &cycle {
        map[v] = c;
    }
    let m = c + 1;
    let mut w2 = vec![vec![f64::NEG_INFINITY; m]; m];
    let mut origin = vec![vec![(usize::MAX, usize::MAX); m]; m];
    for v in 0..n {
        for u in 0..n {
            if u == v || w[v][u] == f64::NEG_INFINITY || (in_cycle[u] && in_cycle[v]) {
                continue;
            }
            let (nv, nu) = (map[v], map[u]);
            let adj = if in_cycle[v] { w[v][u] - w[v][best[v]] } else { w[v][u] };
            if adj > w2[nv][nu] {
                w2[nv][nu] = adj;
                origin[nv][nu] = (u, v);
            }
        }
    }
    let sub = naive_edmonds(&w2);
    let mut heads = vec![usize::MAX; n];
    for nv in 1..m {
        let (u, v) = origin[nv][sub[nv]];
        heads[v] = u;
    }
    for &v in &cycle {
        if heads[v] == usize::MAX {
            heads[v] = best[v];
        }
    }
    heads
}

fn find_cycle(best: &[usize]) -> Option<Vec<usize>> {
    let n = best.len();
    let mut colour = vec![0u8; n];
    colour[0] = 2;
    for s in 1..n {
        let mut path = Vec::new();
        let mut v = s;
        while colour[v] == 0 {
            colour[v] = 1;
            path.push(v);
            v = best[v];
        }
        if colour[v] == 1 {
            let start = path.iter().position(|&x| x == v).unwrap();
            return Some(path[start..].to_vec());
        }
        for x in path {
            colour[x] = 2;
        }
    }
    None
}

/// Weight matrix in the layout `naive_edmonds` expects.
pub fn naive_weights(scores: &ArcScores) -> Vec<Vec<f64>> {
    let m = scores.words() + 1;
    (0..m)
        .map(|dst| {
            (0..m)
                .map(|src| {
                    if dst == 0 || src == dst {
                        f64::NEG_INFINITY
                    } else {
                        scores.get(dst + 1, src + 1) as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Framed heads from `naive_edmonds` output.
pub fn naive_mst(scores: &ArcScores) -> Vec<usize> {
    naive_edmonds(&naive_weights(scores))[1..].iter().map(|&h| h + 1).collect()
}

pub fn random_scores(rng: &mut impl Rng, words: usize) -> ArcScores {
    ArcScores::masked(words, |_, _| rng.random_range(-5.0f32..5.0))
}

/// Random framed head array (may be cyclic).
pub fn random_heads(rng: &mut impl Rng, words: usize) -> Vec<usize> {
    (0..words)
        .map(|k| loop {
            let h = rng.random_range(1..words + 2);
            if h != k + 2 {
                break h;
            }
        })
        .collect()
}

/// Random tree as framed heads: attach words in random order to ROOT or to
/// an already attached word.
pub fn random_tree(rng: &mut impl Rng, words: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..words).collect();
    for i in (1..words).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut heads = vec![0; words];
    for (i, &k) in order.iter().enumerate() {
        let pick = rng.random_range(0..=i);
        heads[k] = if pick == i { 1 } else { order[pick] + 2 };
    }
    heads
}

/// Cycle detection by three-colour depth-first search on the head graph.
pub fn dfs_has_cycle(heads: &[usize]) -> bool {
    let n = heads.len();
    fn visit(v: usize, heads: &[usize], colour: &mut [u8]) -> bool {
        colour[v] = 1;
        let h = heads[v];
        if h >= 2 {
            let u = h - 2;
            if colour[u] == 1 {
                return true;
            }
            if colour[u] == 0 && visit(u, heads, colour) {
                return true;
            }
        }
        colour[v] = 2;
        false
    }
    let mut colour = vec![0u8; n];
    (0..n).any(|v| colour[v] == 0 && visit(v, heads, &mut colour))
}

/// All-pairs crossing test over raw positions with ROOT at 0.
pub fn crossing_projective(raw_heads: &[usize]) -> bool {
    let arcs: Vec<(usize, usize)> = raw_heads
        .iter()
        .enumerate()
        .map(|(k, &h)| (h.min(k + 1), h.max(k + 1)))
        .collect();
    for &(a, b) in &arcs {
        for &(c, d) in &arcs {
            if a < c && c < b && b < d {
                return false;
            }
        }
    }
    true
}

pub fn tiny_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        encoder: EncoderConfig {
            num_layers: 2,
            num_heads: 2,
            model_dim: 8,
            ffn_dim: 16,
            dropout: 0.1,
            max_positions: 24,
        },
        scorer: ScorerConfig {
            arc_hidden: 6,
            rel_hidden: 4,
            dropout: 0.1,
        },
        word_vocab: 20,
        pos_vocab: 8,
        num_labels: 3,
    }
}

/// Model with every trainable element drawn from `[-scale, scale]`.
pub fn random_model<T: Elem>(config: ModelConfig, rng: &mut impl Rng, scale: f64) -> Model<T> {
    let mut model = Model::<T>::new(config, rng.random()).unwrap();
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let p = model.params.param_mut(id);
        for e in 0..p.value.numel() {
            if p.is_trainable(e) {
                p.value.data_mut()[e] = T::of(rng.random_range(-scale..scale));
            }
        }
    }
    model
}

/// Framed sentence of `n` words with a random gold tree.
pub fn random_sentence(rng: &mut impl Rng, n: usize, config: &ModelConfig) -> FramedSentence {
    let mut words = vec![CLS, ROOT];
    let mut pos = vec![CLS, ROOT];
    for _ in 0..n {
        words.push(rng.random_range(5..config.word_vocab));
        pos.push(rng.random_range(5..config.pos_vocab));
    }
    words.push(SEP);
    pos.push(SEP);
    FramedSentence {
        words,
        pos,
        len: n,
        heads: random_tree(rng, n),
        labels: (0..n).map(|_| Some(rng.random_range(0..config.num_labels))).collect(),
    }
}

/// Random labelled graph over `n` words (may be cyclic).
pub fn random_graph(rng: &mut impl Rng, n: usize, num_labels: usize) -> DepGraph {
    let heads = random_heads(rng, n);
    let labels = (0..n).map(|_| rng.random_range(0..num_labels)).collect();
    DepGraph::new(heads, labels).unwrap()
}
