use std::collections::BTreeMap;

use psclab_core::decoder::{
    autoregressive_decode, diffusion_decode, overlap_ratio, sample_token, DecodeConfig,
};
use psclab_core::entropy::{
    binary_entropy, coarsen_distribution, cross_entropy, fano_upper_bound, sensitivity_profile,
    shannon_entropy, DiscreteDistribution, Reference,
};
use psclab_core::harness::{
    depth_sweep, efficiency_frontier, reasoning_boundaries, sweep_diffusion, sweep_sequential,
    Learner, Scenario,
};
use psclab_core::metrics::{cosine_similarity, perplexity};
use psclab_core::posterior::{
    greedy_fill, masked_posteriors, sequence_log_likelihood, MaskedSequence,
};
use psclab_core::task::{sample_trajectory, TabularMarkovModel, TaskSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(m: usize, len: usize, rng: &mut ChaCha8Rng) -> TabularMarkovModel {
    let row = |rng: &mut ChaCha8Rng| {
        let r: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = r.iter().sum();
        r.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    let initial = row(rng);
    let transition = (0..m).flat_map(|_| row(rng)).collect();
    TabularMarkovModel::new(initial, transition, len).unwrap()
}

fn power_entry(model: &TabularMarkovModel, n: usize, from: usize, to: usize) -> f64 {
    let m = model.num_states();
    let mut v = vec![0.0; m];
    v[from] = 1.0;
    for _ in 0..n {
        v = (0..m)
            .map(|j| (0..m).map(|i| v[i] * model.entry(i, j)).sum())
            .collect();
    }
    v[to]
}

fn within_se(observed: f64, expected: f64, runs: usize) -> bool {
    let se = (expected * (1.0 - expected) / runs as f64).sqrt().max(1e-3);
    (observed - expected).abs() <= 4.0 * se
}

#[test]
fn skip_conditional_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = random_model(6, 5, &mut rng);
    for s1 in 0..6 {
        let got = model.skip_conditional(s1, 4).unwrap();
        let mut want = [0.0; 6];
        for a in 0..6 {
            for b in 0..6 {
                for (c, w) in want.iter_mut().enumerate() {
                    *w += model.entry(s1, a) * model.entry(a, b) * model.entry(b, c);
                }
            }
        }
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
    assert!(model.skip_conditional(0, 1).is_err());
    assert!(model.skip_conditional(6, 2).is_err());
}

#[test]
fn serial_neighbours_diverge() {
    let model = TaskSpec::serial(64, 3, 1, 0.0, 8).build().unwrap();
    let mut x = (5usize, 6usize);
    for _ in 0..3 {
        x = ((3 * x.0 + 1) % 64, (3 * x.1 + 1) % 64);
    }
    let d = x.0.abs_diff(x.1).min(64 - x.0.abs_diff(x.1));
    assert_eq!(d, 27);
    assert_eq!(model.skip_conditional(6, 4).unwrap()[x.0], 0.0);
    assert_eq!(model.skip_conditional(5, 4).unwrap()[x.0], 1.0);
}

#[test]
fn noisy_parallel_profile_matches_squared_kernel() {
    let model = TaskSpec::parallel(64, 8, 0, 0.1, 8).build().unwrap();
    let s1 = 3;
    let row = model.skip_conditional(s1, 3).unwrap();
    let reference = (0..64).fold(0, |best, j| if row[j] > row[best] { j } else { best });
    let expected =
        (power_entry(&model, 2, 2, reference) + power_entry(&model, 2, 4, reference)) / 2.0;
    let profile = sensitivity_profile(&model, s1, 3, &[1], Reference::Mode).unwrap();
    assert!((profile[0].mean_reference_prob - expected).abs() < 1e-12);
    assert!(expected >= 0.81);
}

#[test]
fn sampled_marginals_converge() {
    let model = TabularMarkovModel::new(vec![0.25; 4], vec![0.25; 16], 2).unwrap();
    let mut counts = [0usize; 4];
    for seed in 0..100_000u64 {
        let s = sample_trajectory(&model, seed);
        counts[s.states[1]] += 1;
        assert!((s.log_prob - 2.0 * 0.25f64.ln()).abs() < 1e-12);
    }
    for c in counts {
        assert!((c as f64 / 1e5 - 0.25).abs() < 0.01, "{counts:?}");
    }
}

#[test]
fn log_likelihood_matches_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = random_model(5, 12, &mut rng);
    for seed in 0..50 {
        let x = sample_trajectory(&model, seed);
        let mut direct = model.initial()[x.states[0]].ln();
        for w in x.states.windows(2) {
            direct += model.entry(w[0], w[1]).ln();
        }
        let ll = sequence_log_likelihood(&model, &x.states).unwrap();
        assert!((ll - direct).abs() < 1e-12);
        assert_eq!(ll, x.log_prob);
    }
}

#[test]
fn greedy_fill_matches_enumerated_argmax() {
    let model = TaskSpec::serial(8, 3, 1, 0.2, 9).build().unwrap();
    for seed in 0..20 {
        let truth = sample_trajectory(&model, seed).states;
        let obs: Vec<Option<usize>> = (0..9)
            .map(|t| {
                if (3..6).contains(&t) {
                    None
                } else {
                    Some(truth[t])
                }
            })
            .collect();
        let filled = greedy_fill(&model, &MaskedSequence::new(obs.clone())).unwrap();
        for t in 3..6 {
            let mut marg = [0.0; 8];
            for code in 0..512usize {
                let mut x = truth.clone();
                (x[3], x[4], x[5]) = (code % 8, code / 8 % 8, code / 64);
                marg[x[t]] += sequence_log_likelihood(&model, &x).unwrap().exp();
            }
            let best = (0..8).fold(0, |b, j| if marg[j] > marg[b] + 1e-15 { j } else { b });
            assert_eq!(filled[t], best);
        }
        for t in (0..3).chain(6..9) {
            assert_eq!(filled[t], truth[t]);
        }
    }
}

#[test]
fn more_observations_never_raise_expected_entropy() {
    let model = TaskSpec::serial(8, 3, 1, 0.3, 8).build().unwrap();
    let (mut few, mut many) = (0.0, 0.0);
    let entropy = |seq: &MaskedSequence| -> f64 {
        let table = masked_posteriors(&model, seq).unwrap();
        (0..8)
            .map(|t| shannon_entropy(&DiscreteDistribution::new(table.probs(t).to_vec()).unwrap()))
            .sum()
    };
    for seed in 0..2000 {
        let x = sample_trajectory(&model, seed).states;
        let mut seq = MaskedSequence::from_prefix(&x, 1);
        few += entropy(&seq);
        seq.set(5, x[5]);
        many += entropy(&seq);
    }
    assert!(many < few, "{many} vs {few}");
}

#[test]
fn single_step_decode_is_greedy_fill() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for m in [2, 3, 5, 8] {
        for len in 1..=8 {
            let model = random_model(m, len, &mut rng);
            let truth = sample_trajectory(&model, rng.gen()).states;
            for mask in 1u32..1 << len {
                let seq = MaskedSequence::new(
                    (0..len)
                        .map(|t| (mask >> t & 1 == 0).then_some(truth[t]))
                        .collect(),
                );
                let mut cfg = DecodeConfig::new(1, len);
                cfg.temperature = 0.0;
                let trace = diffusion_decode(&model, &seq, &cfg).unwrap();
                assert_eq!(trace.final_sequence, greedy_fill(&model, &seq).unwrap());
                assert_eq!(trace.steps_executed, 1);
            }
        }
    }
}

// The exact noiseless chain gives every masked position confidence 1, so
// the order among them is a random tie-break. A jittered learner breaks
// the ties by distance from the prompt.
#[test]
fn diffusion_on_noiseless_serial_is_autoregressive() {
    let task = TaskSpec::serial(64, 3, 1, 0.0, 16);
    let truth_model = task.build().unwrap();
    let model = Learner::jitter(1, 0.1).apply(&truth_model).unwrap();
    for seed in 0..20 {
        let truth = sample_trajectory(&truth_model, seed).states;
        let prompt = MaskedSequence::from_prefix(&truth, 3);
        let ar = autoregressive_decode(&model, &prompt, 0.0, seed).unwrap();
        let mut cfg = DecodeConfig::new(16, 16);
        cfg.temperature = 0.0;
        cfg.seed = seed;
        let dd = diffusion_decode(&model, &prompt, &cfg).unwrap();
        assert_eq!(dd.final_sequence, truth);
        assert_eq!(ar.final_sequence, truth);
        assert_eq!(dd.commit_order(), ar.commit_order());
        assert_eq!(ar.steps_executed, 13);
    }
}

#[test]
fn autoregressive_sampling_is_uniform_on_uniform_chain() {
    let model = TabularMarkovModel::new(vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 9], 3).unwrap();
    let prompt = MaskedSequence::new(vec![Some(1), None, None]);
    let mut counts = [0usize; 9];
    let runs = 10_000;
    for seed in 0..runs as u64 {
        let t = autoregressive_decode(&model, &prompt, 1.0, seed).unwrap();
        counts[t.final_sequence[1] * 3 + t.final_sequence[2]] += 1;
    }
    let expected = runs as f64 / 9.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 0.99 quantile of chi-square with 8 degrees of freedom.
    assert!(chi2 < 20.09, "chi2 = {chi2}");
}

#[test]
fn tempered_draws_follow_sharpened_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let top = (0..n)
        .filter(|_| sample_token(&[0.8, 0.2], 0.5, &mut rng) == 0)
        .count();
    assert!((top as f64 / n as f64 - 16.0 / 17.0).abs() < 0.01);
}

#[test]
fn overlap_is_symmetric() {
    let a = [1, 2, 3, 4, 5];
    let b = [1, 2, 0, 4, 6];
    let upd = [0, 2, 3, 4];
    assert_eq!(overlap_ratio(&a, &b, &upd).unwrap(), 0.5);
    assert_eq!(overlap_ratio(&b, &a, &upd).unwrap(), 0.5);
    assert!(overlap_ratio(&a, &b, &[]).is_err());
}

#[test]
fn entropy_reference_values() {
    let p: f64 = 0.11;
    let by_ln = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln()) / std::f64::consts::LN_2;
    assert!((binary_entropy(p).unwrap() - by_ln).abs() < 1e-12);
    for m in 2..=64 {
        let u = DiscreteDistribution::uniform(m);
        assert!(fano_upper_bound(1.0 / m as f64, m).unwrap() >= shannon_entropy(&u) - 1e-12);
        assert!((cross_entropy(&u, &u).unwrap() - shannon_entropy(&u)).abs() < 1e-10);
    }
    let c = coarsen_distribution(&DiscreteDistribution::uniform(64), 8).unwrap();
    assert_eq!(c.len(), 8);
    assert!((shannon_entropy(&c) - 3.0).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let m = rng.gen_range(1..=32);
        let w: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + 1e-9).collect();
        let s: f64 = w.iter().sum();
        let d = DiscreteDistribution::new(w.iter().map(|x| x / s).collect()).unwrap();
        assert!(shannon_entropy(&d) <= shannon_entropy(&DiscreteDistribution::uniform(m)) + 1e-12);
    }
}

#[test]
fn cosine_reference_value() {
    let c = cosine_similarity(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
    assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
}

#[test]
fn perplexity_matches_base_two_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let model = random_model(5, 10, &mut rng);
        let x = sample_trajectory(&model, rng.gen()).states;
        let mut bits = -model.initial()[x[0]].log2();
        for w in x.windows(2) {
            bits -= model.entry(w[0], w[1]).log2();
        }
        let expected = 2f64.powf(bits / x.len() as f64);
        let ppl = perplexity(&model, &x).unwrap();
        assert!((ppl - expected).abs() <= 1e-10 * expected);
    }
}

fn greedy(task: TaskSpec, seed: u64) -> Scenario {
    let len = task.length;
    let mut decode = DecodeConfig::new(len - 1, len);
    decode.temperature = 0.0;
    Scenario::new(task, Learner::exact(), decode, seed)
}

#[test]
fn greedy_diffusion_accuracy_never_drops_with_steps() {
    let sc = greedy(TaskSpec::serial(64, 3, 1, 0.05, 17), 7);
    let rep = sweep_diffusion(&sc, &[1, 2, 4, 8, 16], 300).unwrap();
    assert!(
        rep.accuracy.windows(2).all(|w| w[1] >= w[0]),
        "{:?}",
        rep.accuracy
    );
    assert!(!rep.flags.over_diffusion_detected);
}

#[test]
fn sequential_sweep_chance_then_rise() {
    let eta = 0.1;
    let depth = 6;
    let sc = greedy(TaskSpec::serial(16, 3, 1, eta, 8), 8);
    let lengths = [2, 4, 7, 9, 12];
    let runs = 1000;
    let rep = sweep_sequential(&sc, &lengths, depth, runs, 0.05).unwrap();
    let model = TaskSpec::serial(16, 3, 1, eta, 8).build().unwrap();
    let f = |s: usize, n: usize| (0..n).fold(s, |x, _| (3 * x + 1) % 16);
    for (i, &len) in lengths.iter().enumerate() {
        let reach = depth.min(len - 1);
        let oracle = (0..16)
            .map(|s| power_entry(&model, depth, s, f(s, reach)))
            .sum::<f64>()
            / 16.0;
        assert!(
            within_se(rep.accuracy[i], oracle, runs),
            "len {len}: {} vs {oracle}",
            rep.accuracy[i]
        );
        if len <= depth {
            assert!(oracle <= 1.0 / 16.0);
        } else {
            assert!(oracle > 0.5);
        }
    }
}

#[test]
fn boundaries_follow_analytic_success_probability() {
    let eta = 0.05;
    let sc = greedy(TaskSpec::serial(64, 3, 1, eta, 4), 9);
    let depths: Vec<usize> = (1..=10).collect();
    let runs = 500;
    let acc = depth_sweep(&sc, &depths, runs).unwrap();
    let mut oracle = BTreeMap::new();
    for &d in &depths {
        let a = (1.0 - eta).powi(d as i32) + (1.0 - (1.0 - eta).powi(d as i32)) / 64.0;
        assert!(within_se(acc[&d], a, runs), "depth {d}: {} vs {a}", acc[&d]);
        oracle.insert(d, a);
    }
    let want = reasoning_boundaries(&oracle).unwrap();
    let got = reasoning_boundaries(&acc).unwrap();
    assert_eq!(want.cfrb, Some(2));
    assert_eq!(want.cirb, Some(10));
    assert_eq!(got.cirb, want.cirb);
    assert!(got.cfrb.unwrap().abs_diff(2) <= 1);
}

#[test]
fn parallel_frontier_needs_one_step() {
    let sc = greedy(TaskSpec::parallel(64, 8, 0, 0.0, 8), 10);
    let rep = efficiency_frontier(&sc, &[1, 2, 4, 8], &[8, 16, 32], 50, 0.0).unwrap();
    assert_eq!(rep.minimal_steps, vec![1, 1, 1]);
    assert!(efficiency_frontier(&sc, &[], &[8], 10, 0.0).is_err());
}
