mod common;

use std::collections::BTreeMap;

use caprl::decoding::*;
use common::criteria::*;
use common::*;

#[test]
fn beam_of_one_is_greedy_and_wide_beams_are_exhaustive() {
    let c = decoder_equivalences(50);
    assert!(c.pass, "{}", c.detail);
}

#[test]
fn search_space_has_forty_captions() {
    // EOS after 0, 1 or 2 words (1 + 3 + 9) plus 27 truncated 3-word captions
    let table = TableModel {
        vocab: 6,
        seed: 0,
        spread: 1.0,
    };
    let all = enumerate_captions(&table, 3);
    assert_eq!(all.len(), 40);
    let total: f64 = all.iter().map(|(_, lp)| lp.exp()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn sampling_frequencies_match_model_probabilities() {
    let table = TableModel {
        vocab: 6,
        seed: 4,
        spread: 1.5,
    };
    let cfg = DecodeConfig {
        max_len: 2,
        ..DecodeConfig::default()
    };
    let exact: BTreeMap<Vec<usize>, f64> = enumerate_captions(&table, 2)
        .into_iter()
        .map(|(s, lp)| (s, lp.exp()))
        .collect();
    let n = 20_000;
    let mut r = rng(1);
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for _ in 0..n {
        let s = sample_decode(&table, &cfg, &mut r).unwrap();
        let lp = sequence_logprob(&table, &s.seq).unwrap();
        assert!((s.logprob() - lp).abs() < 1e-12);
        *counts.entry(s.seq.ids).or_default() += 1;
    }
    for (seq, p) in &exact {
        let freq = counts.get(seq).copied().unwrap_or(0) as f64 / n as f64;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() < 5.0 * sd + 1e-4, "{seq:?}: {freq} vs {p}");
    }
    assert!(counts.keys().all(|k| exact.contains_key(k)));
}

#[test]
fn cold_sampling_is_greedy() {
    for seed in 0..10 {
        let (model, params, feats) = random_policy(seed);
        let policy = CaptionPolicy {
            model: &model,
            params: &params,
            features: &feats,
        };
        let cfg = DecodeConfig {
            max_len: 7,
            temperature: 1e-4,
            ..DecodeConfig::default()
        };
        let s = sample_decode(&policy, &cfg, &mut rng(seed)).unwrap();
        assert_eq!(s.seq, greedy_decode(&policy, &cfg).unwrap());
    }
}

#[test]
fn beam_scores_are_sequence_logprobs() {
    for seed in 0..5 {
        let (model, params, feats) = random_policy(seed);
        let policy = CaptionPolicy {
            model: &model,
            params: &params,
            features: &feats,
        };
        let cfg = DecodeConfig {
            max_len: 7,
            beam_size: 3,
            ..DecodeConfig::default()
        };
        let h = beam_decode(&policy, &cfg).unwrap();
        assert!((h.logprob - sequence_logprob(&policy, &h.seq).unwrap()).abs() < 1e-9);
        let g = greedy_decode(&policy, &cfg).unwrap();
        assert!(h.logprob >= sequence_logprob(&policy, &g).unwrap() - 1e-12);
    }
}

#[test]
fn invalid_decode_settings_are_rejected() {
    let table = TableModel {
        vocab: 6,
        seed: 0,
        spread: 1.0,
    };
    for cfg in [
        DecodeConfig {
            beam_size: 0,
            ..DecodeConfig::default()
        },
        DecodeConfig {
            temperature: 0.0,
            ..DecodeConfig::default()
        },
        DecodeConfig {
            max_len: 0,
            ..DecodeConfig::default()
        },
    ] {
        assert!(beam_decode(&table, &cfg).is_err());
        assert!(sample_decode(&table, &cfg, &mut rng(0)).is_err());
    }
}
