//! Acquisition scores, top-k selection, k-means representatives and the
//! proxy classifier against independent reference computations.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use activellm_core::harness::SyntheticSpec;
use activellm_core::strategies::{
    fit_proxy_classifier, kmeans, score_bald, score_entropy, score_least_confidence, score_margin, select_kmeans,
    select_uncertainty, squared_distance, EmbeddingMatrix, ProxyParams, ScoreOrder, SoftmaxRegression,
};

use super::score_cases;

const TOL: f64 = 1e-9;

pub fn scores_match_high_precision_reference() {
    let cases = score_cases();
    assert_eq!(cases.len(), 1000);
    for (n, case) in cases.iter().enumerate() {
        let close = |name: &str, got: f64, want: f64| {
            assert!((got - want).abs() <= TOL, "case {n} {name}: {got} vs {want}");
        };
        close("lc", score_least_confidence(&case.p).unwrap(), case.least_confidence);
        close("entropy", score_entropy(&case.p).unwrap(), case.entropy);
        close("margin", score_margin(&case.p).unwrap(), case.margin);
        close("bald", score_bald(&case.members).unwrap(), case.bald);
    }
}

pub fn worked_example() {
    let p = [0.7, 0.2, 0.1];
    assert!((score_entropy(&p).unwrap() - 0.801_818_552_543_337_3).abs() < 1e-12);
    assert!((score_margin(&p).unwrap() - 0.5).abs() < 1e-12);
    assert!((score_least_confidence(&p).unwrap() - 0.3).abs() < 1e-12);
    assert_eq!(score_bald(&[[0.5, 0.5], [0.5, 0.5]]).unwrap(), 0.0);
}

/// Position of each entry when ranked by an O(n^2) count of entries that
/// beat it; a lower pool index wins ties.
fn rank_oracle(scores: &[(usize, f64)], k: usize, order: ScoreOrder) -> Vec<usize> {
    let beats = |a: &(usize, f64), b: &(usize, f64)| {
        let better = match order {
            ScoreOrder::Desc => a.1 > b.1,
            ScoreOrder::Asc => a.1 < b.1,
        };
        better || (a.1 == b.1 && a.0 < b.0)
    };
    let mut ranked: Vec<(usize, usize)> =
        scores.iter().map(|s| (scores.iter().filter(|o| beats(o, s)).count(), s.0)).collect();
    ranked.retain(|(rank, _)| *rank < k);
    ranked.sort_unstable();
    ranked.into_iter().map(|(_, index)| index).collect()
}

pub fn selection_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for case in 0..500 {
        let n = rng.random_range(1..120);
        let mut indices: Vec<usize> = (0..n * 3).collect();
        indices.shuffle(&mut rng);
        // Coarse scores so ties are common.
        let levels = rng.random_range(1..12);
        let scores: Vec<(usize, f64)> =
            indices[..n].iter().map(|&i| (i, rng.random_range(0..levels) as f64 / levels as f64)).collect();
        let k = rng.random_range(0..=n);
        let order = if case % 2 == 0 { ScoreOrder::Desc } else { ScoreOrder::Asc };
        assert_eq!(select_uncertainty(&scores, k, order).unwrap(), rank_oracle(&scores, k, order), "case {case}");
    }
}

pub fn kmeans_representatives_match_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for case in 0..50 {
        let dim = rng.random_range(1..6);
        let mut pool_indices: Vec<usize> = (0..300).collect();
        pool_indices.shuffle(&mut rng);
        pool_indices.truncate(30);
        let vectors: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let blob = rng.random_range(0..4) as f64 * 5.0;
                (0..dim).map(|_| blob + rng.random_range(-1.0..1.0)).collect()
            })
            .collect();
        let emb = EmbeddingMatrix::new(vectors, pool_indices, "oracle").unwrap();
        let k = rng.random_range(1..=8);
        let seed = rng.random();
        let fit = kmeans(&emb, k, seed).unwrap();
        assert_eq!(fit.centroids.len(), k);

        // Every point sits with its nearest centroid (lowest cluster id on ties).
        let nearest: Vec<usize> = fit
            .points
            .iter()
            .map(|p| {
                (0..k)
                    .min_by(|&a, &b| {
                        squared_distance(p, &fit.centroids[a])
                            .total_cmp(&squared_distance(p, &fit.centroids[b]))
                            .then(a.cmp(&b))
                    })
                    .unwrap()
            })
            .collect();
        assert_eq!(fit.assignment, nearest, "case {case}");

        // Per cluster, the member nearest the centroid, lowest pool index on ties.
        let expected: Vec<usize> = (0..k)
            .map(|c| {
                let members: Vec<usize> = (0..fit.points.len()).filter(|&r| nearest[r] == c).collect();
                assert!(!members.is_empty(), "case {case}: cluster {c} is empty");
                let best = members
                    .iter()
                    .map(|&r| squared_distance(&fit.points[r], &fit.centroids[c]))
                    .fold(f64::INFINITY, f64::min);
                members
                    .iter()
                    .filter(|&&r| squared_distance(&fit.points[r], &fit.centroids[c]) == best)
                    .map(|&r| fit.indices[r])
                    .min()
                    .unwrap()
            })
            .collect();
        assert_eq!(select_kmeans(&emb, k, seed).unwrap(), expected, "case {case}");
    }
}

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|c| format!("c{c}")).collect()
}

pub fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    for case in 0..5 {
        let classes = rng.random_range(2..5);
        let dim = rng.random_range(1..6);
        let n = rng.random_range(3..20);
        let l2 = [0.0, 1e-3, 0.1][case % 3];
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let len = classes * dim + classes;
        let params: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model = SoftmaxRegression::zeros(labels(classes), dim).with_params(params.clone()).unwrap();
        let analytic = model.gradient(&x, &y, l2);

        let h = 1e-5;
        for j in 0..len {
            let shifted = |delta: f64| {
                let mut p = params.clone();
                p[j] += delta;
                SoftmaxRegression::zeros(labels(classes), dim).with_params(p).unwrap().loss(&x, &y, l2)
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            assert!(
                (numeric - analytic[j]).abs() <= 1e-5,
                "case {case} param {j}: analytic {} vs numeric {numeric}",
                analytic[j]
            );
        }
    }
}

pub fn separable_data_is_fit_perfectly() {
    let spec = SyntheticSpec { classes: 3, dim: 4, separation: 6.0, spread: 0.5, seed: 3 };
    let (pool, emb) = spec.split("train", 90);
    let gold: Vec<String> = pool.instances().iter().map(|i| i.gold_label.clone().unwrap()).collect();
    let params = ProxyParams { epochs: 500, ..ProxyParams::default() };
    let model = fit_proxy_classifier(&emb, &gold, &spec.label_space(), &params).unwrap();
    let correct = emb.vectors().iter().zip(&gold).filter(|(x, y)| model.predict_label(x) == y.as_str()).count();
    assert_eq!(correct, gold.len());
}

pub fn single_class_collapses() {
    let x = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let emb = EmbeddingMatrix::new(x, vec![0, 1], "two").unwrap();
    let model = fit_proxy_classifier(&emb, &["c1".into(), "c1".into()], &labels(3), &ProxyParams::default()).unwrap();
    assert!(model.is_collapsed());
    assert_eq!(model.predict_proba(&[5.0, -5.0]), vec![0.0, 1.0, 0.0]);
}
