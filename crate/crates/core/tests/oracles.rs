//! Analytic results checked against brute-force or numerical references.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taxrewire_core::learner::lr_objective_gradient;
use taxrewire_core::metrics::{hier_f1, macro_f1, micro_f1, truth_classes};
use taxrewire_core::synth::{oracle_hier_f1, oracle_lca, random_taxonomy};
use taxrewire_core::{EvalPair, NodeId, SparseVector, Taxonomy};

fn random_problem(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<SparseVector>, Vec<f64>, f64) {
    let dim = rng.random_range(1..=20);
    let n = rng.random_range(1..=40);
    let xs = (0..n)
        .map(|_| {
            let dense: Vec<f64> = (0..dim)
                .map(|_| {
                    if rng.random_bool(0.4) {
                        rng.random_range(-2.0..2.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            SparseVector::from_dense(&dense)
        })
        .collect();
    let ys = (0..n)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let theta = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
    let c = 10f64.powf(rng.random_range(-2.0..2.0));
    (theta, xs, ys, c)
}

fn central_difference(
    theta: &[f64],
    f: impl Fn(&[f64]) -> f64,
) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            let h = 1e-5 * theta[j].abs().max(1.0);
            t[j] = theta[j] + h;
            let up = f(&t);
            t[j] = theta[j] - h;
            let down = f(&t);
            t[j] = theta[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (theta, xs, ys, c) = random_problem(&mut rng);
        let refs: Vec<&SparseVector> = xs.iter().collect();
        let costs: Vec<f64> = (0..xs.len()).map(|_| rng.random_range(0.1..5.0)).collect();
        for sigma in [None, Some(costs.as_slice())] {
            let (_, g) = lr_objective_gradient(&theta, &refs, &ys, c, sigma).unwrap();
            let fd = central_difference(&theta, |t| {
                lr_objective_gradient(t, &refs, &ys, c, sigma).unwrap().0
            });
            let e = rel_err(&g, &fd);
            assert!(e <= 1e-5, "relative gradient error {e}");
        }
    }
}

#[test]
fn unit_costs_reduce_to_plain_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let (theta, xs, ys, c) = random_problem(&mut rng);
        let refs: Vec<&SparseVector> = xs.iter().collect();
        let ones = vec![1.0; xs.len()];
        let (f0, g0) = lr_objective_gradient(&theta, &refs, &ys, c, None).unwrap();
        let (f1, g1) = lr_objective_gradient(&theta, &refs, &ys, c, Some(&ones)).unwrap();
        assert!((f0 - f1).abs() <= 1e-12 * f0.abs().max(1.0));
        assert!(rel_err(&g0, &g1) <= 1e-12);
    }
}

#[test]
fn lca_matches_oracle_exhaustively() {
    for seed in 0..40 {
        let n = 2 + (seed as usize * 7) % 99;
        let t = random_taxonomy(n, seed).unwrap();
        let nodes: Vec<NodeId> = t.nodes().collect();
        for &a in &nodes {
            for &b in &nodes {
                assert_eq!(Some(t.lca(a, b).unwrap()), oracle_lca(&t, a, b));
            }
        }
    }
}

#[test]
fn single_node_tree_agrees() {
    let t = Taxonomy::single(NodeId(0));
    assert_eq!(t.lca(NodeId(0), NodeId(0)).unwrap(), NodeId(0));
    assert_eq!(oracle_lca(&t, NodeId(0), NodeId(0)), Some(NodeId(0)));
}

fn random_pairs(t: &Taxonomy, n: usize, rng: &mut ChaCha8Rng) -> Vec<EvalPair> {
    let leaves: Vec<NodeId> = t.leaves().iter().copied().collect();
    (0..n)
        .map(|_| {
            let truth = leaves[rng.random_range(0..leaves.len())];
            let predicted = if rng.random_bool(0.3) {
                truth
            } else {
                leaves[rng.random_range(0..leaves.len())]
            };
            EvalPair::new(truth, predicted)
        })
        .collect()
}

#[test]
fn hier_f1_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for seed in 0..100 {
        let n = rng.random_range(2..=50);
        let t = random_taxonomy(n, seed).unwrap();
        let pairs = random_pairs(&t, rng.random_range(1..60), &mut rng);
        assert_eq!(hier_f1(&pairs, &t).unwrap(), oracle_hier_f1(&pairs, &t));
    }
}

#[test]
fn micro_f1_is_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for seed in 0..100 {
        let t = random_taxonomy(rng.random_range(3..=50), seed).unwrap();
        let pairs = random_pairs(&t, rng.random_range(1..80), &mut rng);
        let acc = pairs.iter().filter(|p| p.truth == p.predicted).count() as f64 / pairs.len() as f64;
        assert_eq!(micro_f1(&pairs).unwrap(), acc);
    }
}

#[test]
fn one_level_hier_f1_is_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for k in 2..20u32 {
        let t = Taxonomy::flat(NodeId(0), (1..=k).map(NodeId)).unwrap();
        let pairs = random_pairs(&t, 50, &mut rng);
        let acc = micro_f1(&pairs).unwrap();
        assert_eq!(hier_f1(&pairs, &t).unwrap(), acc);
    }
}

#[test]
fn hand_cases() {
    // root -> A -> {1, 2}, root -> B -> 3
    let t = Taxonomy::parse("0 10\n0 11\n10 1\n10 2\n11 3").unwrap();
    let n = NodeId;
    assert_eq!(hier_f1(&[EvalPair::new(n(1), n(2))], &t).unwrap(), 0.5);
    assert_eq!(hier_f1(&[EvalPair::new(n(1), n(3))], &t).unwrap(), 0.0);
    let pairs = [
        EvalPair::new(n(1), n(1)),
        EvalPair::new(n(1), n(1)),
        EvalPair::new(n(2), n(1)),
        EvalPair::new(n(2), n(1)),
    ];
    assert_eq!(macro_f1(&pairs, &truth_classes(&pairs)).unwrap(), 1.0 / 3.0);
}
