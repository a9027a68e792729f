mod common;

use std::collections::{HashMap, HashSet};

use proptest::prelude::*;

use stylekit::sampler::{
    fit_embedding_stats, render_generation_prompt, sample_batch, sample_multivariate, sample_token,
    sample_univariate, IdentityPayload, PayloadKind, PromptDescriptor, SampleMode,
};
use stylekit::store::TokenVocabulary;
use stylekit::Error;

use common::*;

fn vocab_of(rows: &[Vec<f32>]) -> TokenVocabulary {
    TokenVocabulary::from_ranked(token_names(rows.len()), matrix(rows, false)).unwrap()
}

fn none() -> HashSet<String> {
    HashSet::new()
}

#[test]
fn two_point_moments_by_hand() {
    let stats = fit_embedding_stats(&vocab_of(&[vec![0.0, 0.0], vec![2.0, 2.0]]), &none()).unwrap();
    assert_eq!(stats.mean, [1.0, 1.0]);
    assert_eq!(stats.std, [1.0, 1.0]);
    assert_eq!(stats.covariance, [1.0, 1.0, 1.0, 1.0]);
    assert!(stats.shrinkage > 0.0, "a singular covariance needs jitter");
    assert_eq!(stats.source_rows, 2);
}

#[test]
fn exclusion_can_leave_too_few_rows() {
    let vocab = vocab_of(&[vec![0.0], vec![1.0], vec![2.0]]);
    let exclude: HashSet<String> = ["tok000".to_string(), "tok001".to_string()].into();
    assert!(matches!(fit_embedding_stats(&vocab, &exclude), Err(Error::TooFewSamples { available: 1, .. })));
}

#[test]
fn identical_rows_need_the_smallest_jitter() {
    let stats = fit_embedding_stats(&vocab_of(&vec![vec![0.5, -0.25]; 4]), &none()).unwrap();
    assert_eq!(stats.std, [0.0, 0.0]);
    assert!(stats.covariance.iter().all(|&c| c == 0.0));
    assert_eq!(stats.shrinkage, 1e-8);
}

#[test]
fn token_sampling_edge_cases() {
    let vocab = vocab(5, 3, 1);
    let all: HashSet<String> = token_names(5).into_iter().collect();
    assert!(matches!(sample_token(&vocab, &all, 0, 0), Err(Error::EmptyPool)));
    let mut one = all.clone();
    one.remove("tok003");
    for seed in 0..20 {
        let p = sample_token(&vocab, &one, seed, seed * 7).unwrap();
        assert_eq!(p.token_text.as_deref(), Some("tok003"));
        assert_eq!(p.kind, PayloadKind::Token);
    }
}

#[test]
fn token_sampling_is_uniform() {
    let vocab = vocab(10, 2, 4);
    let draws = sample_batch(&vocab, &none(), SampleMode::Token, 17, 0, 100_000).unwrap();
    let mut freq: HashMap<String, usize> = HashMap::new();
    for p in draws {
        *freq.entry(p.token_text.unwrap()).or_default() += 1;
    }
    assert_eq!(freq.len(), 10);
    for (t, c) in freq {
        let share = c as f64 / 100_000.0;
        assert!((share - 0.1).abs() <= 0.02, "{t}: {share}");
    }
}

#[test]
fn token_sampling_never_returns_excluded_tokens() {
    let vocab = vocab(6, 2, 5);
    let names = token_names(6);
    // every exclusion subset that leaves a non-empty pool
    for mask in 0u32..(1 << 6) - 1 {
        let exclude: HashSet<String> = (0..6).filter(|i| mask >> i & 1 == 1).map(|i| names[i].clone()).collect();
        for i in 0..30 {
            let t = sample_token(&vocab, &exclude, 3, i).unwrap().token_text.unwrap();
            assert!(!exclude.contains(&t));
        }
    }
}

#[test]
fn univariate_sample_mean_converges() {
    let mut r = rng(6);
    let rows = gaussian_rows(&mut r, 40, 5);
    let stats = fit_embedding_stats(&vocab_of(&rows), &none()).unwrap();
    let n = 100_000u64;
    let draws = sample_batch(&vocab_of(&rows), &none(), SampleMode::Univar, 2, 0, n).unwrap();
    for d in 0..5 {
        let mean = draws.iter().map(|p| p.vector.as_ref().unwrap()[d]).sum::<f64>() / n as f64;
        let bound = 4.0 * stats.std[d] / (n as f64).sqrt();
        assert!((mean - stats.mean[d]).abs() <= bound, "dim {d}: {mean} vs {}", stats.mean[d]);
    }
}

#[test]
fn samplers_are_pure_functions_of_seed_and_index() {
    let mut r = rng(7);
    let rows = gaussian_rows(&mut r, 12, 6);
    let vocab = vocab_of(&rows);
    for mode in [SampleMode::Token, SampleMode::Univar, SampleMode::Multivar] {
        let whole = sample_batch(&vocab, &none(), mode, 99, 0, 40).unwrap();
        let mut split = sample_batch(&vocab, &none(), mode, 99, 0, 15).unwrap();
        split.extend(sample_batch(&vocab, &none(), mode, 99, 15, 25).unwrap());
        assert_eq!(whole, split, "{mode}");
        let other = sample_batch(&vocab, &none(), mode, 100, 0, 40).unwrap();
        assert_ne!(whole, other, "{mode}");
        for (i, p) in whole.iter().enumerate() {
            assert_eq!(p.sample_index, i as u64);
            assert!(p.validate().is_ok());
        }
    }
}

#[test]
fn diagonal_covariance_reproduces_univariate_draws() {
    let rows: Vec<Vec<f32>> = (0..3)
        .flat_map(|i| {
            [1.0f32, -1.0].map(|s| {
                let mut v = vec![0.0f32; 3];
                v[i] = s * (1.0 + i as f32);
                v
            })
        })
        .collect();
    let stats = fit_embedding_stats(&vocab_of(&rows), &none()).unwrap();
    assert_eq!(stats.shrinkage, 0.0);
    for i in 0..200 {
        let a = sample_univariate(&stats, 5, i).vector.unwrap();
        let b = sample_multivariate(&stats, 5, i).vector.unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn prompt_descriptors() {
    let token = IdentityPayload {
        kind: PayloadKind::Token,
        token_text: Some("qzx".into()),
        vector: None,
        sample_index: 0,
        seed: 0,
    };
    assert_eq!(
        render_generation_prompt(&token, "zwx").unwrap(),
        PromptDescriptor::Text {
            prompt: "qzx zwx style".into()
        }
    );
    let emb = IdentityPayload {
        kind: PayloadKind::Embedding,
        token_text: None,
        vector: Some(vec![0.5, -0.5]),
        sample_index: 1,
        seed: 0,
    };
    assert_eq!(
        render_generation_prompt(&emb, "zwx").unwrap(),
        PromptDescriptor::Injected {
            injected_vector: vec![0.5, -0.5],
            suffix: "zwx style".into(),
            injection_slot: 0
        }
    );
    assert!(render_generation_prompt(&emb, "").is_err());
    let broken = IdentityPayload {
        token_text: Some("x".into()),
        ..emb.clone()
    };
    assert!(render_generation_prompt(&broken, "zwx").is_err());

    let scaled = emb.renormalized(2.0);
    let norm = scaled.vector.unwrap().iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm - 2.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fitted_moments_are_consistent(seed in 0u64..10_000, n in 2usize..20, h in 1usize..10) {
        let rows = gaussian_rows(&mut rng(seed), n, h);
        let stats = fit_embedding_stats(&vocab_of(&rows), &none()).unwrap();
        let lhs = stats.reconstructed();
        let mut frob = 0.0;
        for i in 0..h {
            prop_assert!((stats.std[i] * stats.std[i] - stats.covariance_at(i, i)).abs() <= 1e-6);
            for j in 0..h {
                prop_assert!((stats.covariance_at(i, j) - stats.covariance_at(j, i)).abs() <= 1e-6);
                let target = stats.covariance_at(i, j) + if i == j { stats.shrinkage } else { 0.0 };
                frob += (lhs[i * h + j] - target).powi(2);
            }
        }
        prop_assert!(frob.sqrt() <= 1e-4);
    }

    #[test]
    fn zero_variance_dimensions_stay_at_the_mean(seed in 0u64..10_000, value in -2.0f32..2.0) {
        let mut rows = gaussian_rows(&mut rng(seed), 6, 3);
        rows.iter_mut().for_each(|r| r[1] = value);
        let stats = fit_embedding_stats(&vocab_of(&rows), &none()).unwrap();
        for i in 0..20 {
            prop_assert_eq!(sample_multivariate(&stats, seed, i).vector.unwrap()[1], stats.mean[1]);
            prop_assert_eq!(sample_univariate(&stats, seed, i).vector.unwrap()[1], stats.mean[1]);
        }
    }
}
