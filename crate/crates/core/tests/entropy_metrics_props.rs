use proptest::prelude::*;
use psclab_core::entropy::{
    binary_entropy, coarsen_distribution, cross_entropy, fano_upper_bound, kl_divergence,
    min_entropy, shannon_entropy, DiscreteDistribution,
};
use psclab_core::metrics::{
    perplexity, reasoning_alignment, repetition_word, step_alignment, token_entropy, Embedder,
    StepChain,
};
use psclab_core::posterior::sequence_log_likelihood;
use psclab_core::task::{sample_trajectory, TabularMarkovModel};

fn dist(m: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = DiscreteDistribution> {
    proptest::collection::vec(0.001f64..1.0, m).prop_map(|w| {
        let s: f64 = w.iter().sum();
        DiscreteDistribution::new(w.iter().map(|x| x / s).collect()).unwrap()
    })
}

fn chain() -> impl Strategy<Value = StepChain> {
    proptest::collection::vec(proptest::collection::vec(0usize..40, 1..6), 1..6)
        .prop_map(|s| StepChain::new(s).unwrap())
}

proptest! {
    #[test]
    fn entropy_bounds(d in dist(1..=32)) {
        let h = shannon_entropy(&d);
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (d.len() as f64).log2() + 1e-12);
        prop_assert!(min_entropy(&d) <= h + 1e-12);
        prop_assert!(h <= fano_upper_bound(d.max_prob(), d.len()).unwrap() + 1e-12);
    }

    #[test]
    fn cross_entropy_splits(pq in (2usize..16).prop_flat_map(|m| (dist(m..=m), dist(m..=m)))) {
        let (p, q) = pq;
        let kl = kl_divergence(&p, &q).unwrap();
        prop_assert!(kl >= -1e-12);
        prop_assert!((cross_entropy(&p, &q).unwrap() - shannon_entropy(&p) - kl).abs() < 1e-10);
    }

    #[test]
    fn binary_entropy_symmetric(p in 0.0f64..=1.0) {
        prop_assert!((binary_entropy(p).unwrap() - binary_entropy(1.0 - p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn coarsening_keeps_mass_and_lowers_entropy(half in dist(1..=16)) {
        let probs: Vec<f64> = half.probs().iter().flat_map(|&p| [p / 2.0, p / 2.0]).collect();
        let d = DiscreteDistribution::new(probs).unwrap();
        let c = coarsen_distribution(&d, 2).unwrap();
        prop_assert!((c.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(shannon_entropy(&c) <= shannon_entropy(&d) + 1e-12);
    }

    #[test]
    fn alignment_in_unit_interval(h in chain(), r in chain(), seed in any::<u64>()) {
        let emb = Embedder::new(16, seed).unwrap();
        let a = reasoning_alignment(&h, &r, &emb).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let rep = repetition_word(&h, &emb).unwrap();
        prop_assert!((0.0..=1.0).contains(&rep));
    }

    #[test]
    fn step_alignment_ignores_source_order(step in proptest::collection::vec(0usize..40, 1..6), src in chain(), seed in any::<u64>()) {
        let emb = Embedder::new(16, seed).unwrap();
        let mut rev = src.steps().to_vec();
        rev.reverse();
        let rev = StepChain::new(rev).unwrap();
        prop_assert_eq!(step_alignment(&step, &src, &emb).unwrap(), step_alignment(&step, &rev, &emb).unwrap());
    }

    #[test]
    fn token_entropy_bounded(tokens in proptest::collection::vec(0usize..20, 1..100)) {
        let h = token_entropy(&tokens).unwrap();
        let distinct = tokens.iter().collect::<std::collections::BTreeSet<_>>().len();
        prop_assert!(h >= 0.0 && h <= (distinct as f64).log2() + 1e-12);
    }

    #[test]
    fn perplexity_is_exp_mean_negative_log_likelihood(
        weights in proptest::collection::vec(0.01f64..1.0, 30),
        seed in any::<u64>(),
    ) {
        let m = 5;
        let norm = |r: &[f64]| {
            let s: f64 = r.iter().sum();
            r.iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let transition = weights[5..].chunks(m).flat_map(norm).collect();
        let model = TabularMarkovModel::new(norm(&weights[..5]), transition, 9).unwrap();
        let x = sample_trajectory(&model, seed).states;
        let ll = sequence_log_likelihood(&model, &x).unwrap();
        let expected = (-ll / x.len() as f64).exp();
        let ppl = perplexity(&model, &x).unwrap();
        prop_assert!((ppl - expected).abs() <= 1e-10 * expected);
    }
}
