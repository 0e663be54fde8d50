mod common;

use common::*;
use depref::graph::{
    changed_edges, first_difference, graph_equal, graph_to_relation_matrix, relation_id, DepGraph, Direction,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn relation_ids_cover_both_directions() {
    let l = 7;
    let mut seen = vec![relation_id(0, Direction::None, l).unwrap()];
    for label in 0..l {
        seen.push(relation_id(label, Direction::HeadToDep, l).unwrap());
        seen.push(relation_id(label, Direction::DepToHead, l).unwrap());
    }
    seen.sort();
    assert_eq!(seen, (0..=2 * l as u16).collect::<Vec<_>>());
    assert!(relation_id(l, Direction::HeadToDep, l).is_err());
}

#[test]
fn cycle_detection_matches_dfs() {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let mut cyclic = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let heads = random_heads(&mut rng, n);
        let g = DepGraph::new(heads.clone(), vec![0; n]).unwrap();
        assert_eq!(g.has_cycle(), dfs_has_cycle(&heads), "{heads:?}");
        cyclic += usize::from(g.has_cycle());
    }
    assert!(cyclic > 100 && cyclic < 1000);
}

#[test]
fn trees_are_acyclic() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for _ in 0..500 {
        let n = rng.random_range(1..=15);
        let g = DepGraph::new(random_tree(&mut rng, n), vec![0; n]).unwrap();
        assert!(!g.has_cycle());
    }
}

#[test]
fn projectivity_matches_crossing_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let mut non_projective = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let g = DepGraph::new(random_tree(&mut rng, n), vec![0; n]).unwrap();
        let want = crossing_projective(&g.raw_heads());
        assert_eq!(g.is_projective().unwrap(), want, "{:?}", g.raw_heads());
        non_projective += usize::from(!want);
    }
    assert!(non_projective > 100);
}

#[test]
fn projectivity_of_a_cyclic_graph_is_an_error() {
    let g = DepGraph::new(vec![3, 2], vec![0, 0]).unwrap();
    assert!(g.is_projective().is_err());
}

#[test]
fn relation_matrix_is_directionally_antisymmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let l = 4;
    for _ in 0..300 {
        let n = rng.random_range(1..=10);
        let heads = random_tree(&mut rng, n);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..l)).collect();
        let g = DepGraph::new(heads.clone(), labels.clone()).unwrap();
        let m = graph_to_relation_matrix(&g, n + 3, l).unwrap();
        assert_eq!(m.nonzero(), 2 * n);
        for k in 0..n {
            let (d, h) = (k + 2, heads[k]);
            assert_eq!(m.get(h, d) as usize, labels[k] + 1);
            assert_eq!(m.get(d, h) as usize, labels[k] + 1 + l);
        }
        for i in 0..n + 3 {
            assert_eq!(m.get(i, i), 0);
            assert_eq!(m.get(0, i), 0);
            assert_eq!(m.get(i, n + 2), 0);
        }
    }
}

#[test]
fn two_cycle_keeps_head_to_dep_reading() {
    // Words 1 and 2 head each other.
    let g = DepGraph::new(vec![3, 2], vec![0, 1]).unwrap();
    let m = graph_to_relation_matrix(&g, 5, 2).unwrap();
    assert_eq!(m.get(3, 2), 1);
    assert_eq!(m.get(2, 3), 2);
}

#[test]
fn relation_matrix_rejects_wrong_size() {
    let g = DepGraph::new(vec![1, 2], vec![0, 0]).unwrap();
    assert!(graph_to_relation_matrix(&g, 4, 1).is_err());
}

#[test]
fn equality_is_an_equivalence_relation() {
    let mut rng = ChaCha8Rng::seed_from_u64(74);
    let graphs: Vec<DepGraph> = (0..40).map(|_| random_graph(&mut rng, 3, 2)).collect();
    for a in &graphs {
        assert!(graph_equal(a, a).unwrap());
        for b in &graphs {
            let ab = graph_equal(a, b).unwrap();
            assert_eq!(ab, graph_equal(b, a).unwrap());
            assert_eq!(ab, a == b);
            assert_eq!(ab, changed_edges(a, b).unwrap() == 0);
            assert_eq!(ab, first_difference(a, b).unwrap().is_none());
            for c in &graphs {
                if ab && graph_equal(b, c).unwrap() {
                    assert!(graph_equal(a, c).unwrap());
                }
            }
        }
    }
}

#[test]
fn label_change_alone_breaks_equality() {
    let a = DepGraph::new(vec![1, 2, 2], vec![0, 1, 1]).unwrap();
    let mut b = a.clone();
    b.labels[2] = 0;
    assert!(!graph_equal(&a, &b).unwrap());
    assert_eq!(first_difference(&a, &b).unwrap(), Some(2));
    assert_eq!(changed_edges(&a, &b).unwrap(), 1);
}

#[test]
fn comparing_different_lengths_is_an_error() {
    let a = DepGraph::new(vec![1], vec![0]).unwrap();
    let b = DepGraph::new(vec![1, 2], vec![0, 0]).unwrap();
    assert!(graph_equal(&a, &b).is_err());
}

#[test]
fn invalid_heads_are_rejected() {
    assert!(DepGraph::new(vec![2], vec![0]).is_err(), "self loop");
    assert!(DepGraph::new(vec![0], vec![0]).is_err(), "CLS as head");
    assert!(DepGraph::new(vec![3, 1], vec![0, 0]).is_ok());
    assert!(DepGraph::new(vec![4], vec![0]).is_err(), "SEP as head");
    assert!(DepGraph::from_raw(&[0, 1], vec![0, 0]).is_ok());
}
