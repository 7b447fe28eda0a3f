// Criteria shared by the topic test files and the acceptance runner. Each
// returns whether it held and a one-line summary of what was measured.

use std::time::Instant;

use caprl::captioner::{Captioner, DecoderConfig, FeatureGrid, TokenSeq};
use caprl::decoding::{beam_decode, greedy_decode, CaptionPolicy, DecodeConfig};
use caprl::metrics::{bleu, meteor_lite, rouge_l, CiderScorer, CiderVariant};
use caprl::numcore::{concat_cols, Tape, Tensor, Var};
use caprl::rl::{
    ce_loss, group_advantages, grpo_loss, kl_estimator, scst_loss, token_logprob_values,
    CeExample, GroupMember, GrpoConfig, RatioAgg, RlItem, SampleGroup, ScstRollout,
};
use caprl::Result;
use rand::Rng;

use super::*;

pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(pass: bool, detail: String) -> Self {
        Check { pass, detail }
    }
}

pub const OP_TOL: f64 = 1e-5;
pub const MODEL_TOL: f64 = 1e-4;

type OpFn = Box<dyn for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>>;

/// Named op fixtures: inputs and the expression under test.
pub fn op_cases() -> Vec<(&'static str, Vec<Tensor>, OpFn)> {
    let mut r = rng(11);
    let mut u = |shape: &[usize]| uniform(&mut r, shape, -1.0, 1.0);
    let a34 = u(&[3, 4]);
    let b34 = u(&[3, 4]);
    // keep elementwise kinks at least 0.1 away
    let away = |t: &Tensor, pivot: f64| {
        t.map(|v| if (v - pivot).abs() < 0.1 { pivot + 0.1f64.copysign(v - pivot) * 2.0 } else { v })
    };
    let minimum_b = Tensor::new(
        vec![3, 4],
        a34.data()
            .iter()
            .zip(b34.data())
            .map(|(x, y)| if (x - y).abs() < 0.1 { x + 0.3 } else { *y })
            .collect(),
    )
    .unwrap();
    let cases: Vec<(&'static str, Vec<Tensor>, OpFn)> = vec![
        ("matmul", vec![u(&[3, 4]), u(&[4, 2])], Box::new(|v| v[0].matmul(v[1]))),
        ("matmul_t", vec![u(&[3, 4]), u(&[2, 4])], Box::new(|v| v[0].matmul_t(v[1]))),
        ("transpose", vec![u(&[3, 4])], Box::new(|v| v[0].transpose())),
        ("add", vec![a34.clone(), b34.clone()], Box::new(|v| v[0].add(v[1]))),
        ("sub", vec![a34.clone(), b34.clone()], Box::new(|v| v[0].sub(v[1]))),
        ("mul", vec![a34.clone(), b34.clone()], Box::new(|v| v[0].mul(v[1]))),
        ("minimum", vec![a34.clone(), minimum_b], Box::new(|v| v[0].minimum(v[1]))),
        ("add_row", vec![u(&[3, 4]), u(&[4])], Box::new(|v| v[0].add_row(v[1]))),
        ("scale", vec![u(&[2, 3])], Box::new(|v| v[0].scale(-1.7))),
        ("neg", vec![u(&[2, 3])], Box::new(|v| v[0].neg())),
        ("add_scalar", vec![u(&[2, 3])], Box::new(|v| v[0].add_scalar(0.3))),
        ("exp", vec![u(&[2, 3])], Box::new(|v| v[0].exp())),
        ("ln", vec![u(&[2, 3]).map(|x| 1.25 + 0.75 * x)], Box::new(|v| v[0].ln())),
        ("relu", vec![away(&u(&[3, 4]), 0.0)], Box::new(|v| v[0].relu())),
        (
            "clamp",
            vec![away(&away(&u(&[3, 4]).map(|x| 0.9 * x), 0.5), -0.5)],
            Box::new(|v| v[0].clamp(-0.5, 0.5)),
        ),
        ("softmax", vec![u(&[3, 5])], Box::new(|v| v[0].softmax())),
        ("log_softmax", vec![u(&[3, 5])], Box::new(|v| v[0].log_softmax())),
        (
            "layer_norm",
            vec![u(&[3, 5]), u(&[5]), u(&[5])],
            Box::new(|v| v[0].layer_norm(v[1], v[2])),
        ),
        ("embedding", vec![u(&[6, 3])], Box::new(|v| v[0].embedding(&[1, 4, 1, 0]))),
        ("slice_cols", vec![u(&[3, 4])], Box::new(|v| v[0].slice_cols(1, 2))),
        (
            "masked_fill",
            vec![u(&[2, 3])],
            Box::new(|v| v[0].masked_fill(&[true, false, false, true, false, true], -3.0)),
        ),
        ("pick", vec![u(&[3, 4])], Box::new(|v| v[0].pick(&[2, 0, 3]))),
        (
            "cross_entropy",
            vec![u(&[3, 4])],
            Box::new(|v| v[0].cross_entropy(&[Some(2), None, Some(0)])),
        ),
        ("sum", vec![u(&[3, 4])], Box::new(|v| v[0].sum())),
        ("mean", vec![u(&[3, 4])], Box::new(|v| v[0].mean())),
        (
            "concat_cols",
            vec![u(&[3, 2]), u(&[3, 3])],
            Box::new(|v| concat_cols(&[v[0], v[1]])),
        ),
        (
            "attention",
            vec![u(&[3, 4]), u(&[5, 4]), u(&[5, 4])],
            Box::new(|v| v[0].matmul_t(v[1])?.scale(0.5)?.softmax()?.matmul(v[2])),
        ),
    ];
    cases
}

/// Relative error of one op's input gradients against central differences.
/// The op output is reduced with fixed random weights.
pub fn op_rel_error(inputs: &[Tensor], f: &OpFn) -> f64 {
    let weights = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let shape = f(&vars).unwrap().shape();
        uniform(&mut rng(99), &shape, -1.0, 1.0)
    };
    let eval = |xs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let w = tape.constant(weights.clone());
        f(&vars).unwrap().mul(w).unwrap().sum().unwrap().item()
    };
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let w = tape.constant(weights.clone());
    let loss = f(&vars).unwrap().mul(w).unwrap().sum().unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let mut work = inputs.to_vec();
        let mut numeric = vec![0.0; inputs[k].numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + FD_STEP;
            let up = eval(&work);
            work[k].data_mut()[i] = orig - FD_STEP;
            let down = eval(&work);
            work[k].data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_error(analytic.data(), &numeric));
    }
    worst
}

/// Two teacher-forced examples of 4 input tokens for the tiny model.
pub fn ce_fixture(seed: u64) -> (Vec<FeatureGrid>, Vec<TokenSeq>) {
    let mut r = rng(seed);
    let feats = (0..2).map(|_| features(&mut r, 3, 5)).collect();
    let caps = (0..2).map(|_| random_caption(&mut r, 12, 3)).collect();
    (feats, caps)
}

pub fn full_model_rel_error(seed: u64) -> (String, f64) {
    let model = tiny_model();
    let params = spread_params(&model, seed, 0.3);
    let (feats, caps) = ce_fixture(seed);
    let f = loss_fn(|p| {
        let batch: Vec<CeExample<'_>> = feats
            .iter()
            .zip(&caps)
            .map(|(features, caption)| CeExample { features, caption })
            .collect();
        ce_loss(&model, p, &batch)
    });
    let a = analytic_grads(&params, f);
    let n = numeric_grads(&params, f);
    worst_rel_error(&a, &n)
}

pub fn gradient_suite() -> Check {
    let start = Instant::now();
    let mut worst_op = ("", 0.0f64);
    for (name, inputs, f) in op_cases() {
        let e = op_rel_error(&inputs, &f);
        if e > worst_op.1 {
            worst_op = (name, e);
        }
    }
    let (param, model_err) = full_model_rel_error(5);
    let secs = start.elapsed().as_secs_f64();
    Check::new(
        worst_op.1 < OP_TOL && model_err < MODEL_TOL && secs < 30.0,
        format!(
            "{} ops worst {:.2e} ({}), full model worst {:.2e} ({}), {:.1}s",
            op_cases().len(),
            worst_op.1,
            worst_op.0,
            model_err,
            param,
            secs
        ),
    )
}

pub fn advantage_invariant(trials: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let (mut worst_mean, mut worst_std) = (0.0f64, 0.0f64);
    let mut degenerate_ok = true;
    for _ in 0..trials {
        let g = r.random_range(2..=64);
        let scale = 10f64.powf(r.random_range(-2.0..1.0));
        let offset = r.random_range(-5.0..5.0);
        let rewards: Vec<f64> = (0..g).map(|_| offset + scale * r.random::<f64>()).collect();
        let a = group_advantages(&rewards).unwrap();
        let (m, s) = oracle::mean_std(&a);
        worst_mean = worst_mean.max(m.abs());
        worst_std = worst_std.max((s - 1.0).abs());
        let flat = vec![offset; g];
        degenerate_ok &= group_advantages(&flat).unwrap().iter().all(|&x| x == 0.0);
    }
    Check::new(
        worst_mean < 1e-9 && worst_std < 1e-9 && degenerate_ok,
        format!(
            "{trials} groups, max |mean| {worst_mean:.1e}, max |std-1| {worst_std:.1e}, degenerate all zero: {degenerate_ok}"
        ),
    )
}

fn categorical(r: &mut impl Rng, k: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..k).map(|_| r.random_range(-2.0..2.0)).collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    logits.iter().map(|l| l.exp() / z).collect()
}

pub fn kl_oracle(pairs: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut min_point = f64::INFINITY;
    for _ in 0..pairs {
        let k = r.random_range(2..=8);
        let theta = categorical(&mut r, k);
        let reference = categorical(&mut r, k);
        let mut expect = 0.0;
        for x in 0..k {
            let e = kl_estimator(theta[x].ln(), reference[x].ln());
            min_point = min_point.min(e);
            expect += theta[x] * e;
        }
        worst = worst.max((expect - oracle::kl(&theta, &reference)).abs());
    }
    Check::new(
        worst < 1e-12 && min_point >= 0.0,
        format!("{pairs} policy pairs, max |E[est] - KL| {worst:.1e}, min estimate {min_point:.2e}"),
    )
}

pub fn rl_model() -> Captioner {
    Captioner::new(DecoderConfig {
        vocab_size: 9,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        ffn_dim: 12,
        max_len: 6,
        feat_dim: 4,
    })
    .unwrap()
}

/// Max abs difference between SCST autodiff gradients and the analytic
/// `-(1/B) sum_i A_i grad log p(x_i)`, and whether equal rewards give an
/// exactly zero gradient.
pub fn scst_oracle(seed: u64) -> Check {
    let model = rl_model();
    let params = spread_params(&model, seed, 0.2);
    let mut r = rng(seed);
    let feats: Vec<FeatureGrid> = (0..3).map(|_| features(&mut r, 2, 4)).collect();
    let batch: Vec<RlItem<'_>> = feats
        .iter()
        .enumerate()
        .map(|(image, features)| RlItem { image, features })
        .collect();
    let rollouts: Vec<ScstRollout> = (0..3)
        .map(|slot| ScstRollout {
            slot,
            sample: random_caption(&mut r, 9, slot + 1),
            greedy: random_caption(&mut r, 9, 2),
            sample_reward: r.random_range(0.0..3.0),
            greedy_reward: r.random_range(0.0..3.0),
        })
        .collect();
    let auto = analytic_grads(&params, |p| Ok(scst_loss(&model, p, &batch, &rollouts)?.unwrap()));
    let mut expected: caprl::numcore::GradMap = auto
        .iter()
        .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
        .collect();
    for ro in &rollouts {
        let g = analytic_grads(&params, |p| {
            model.token_logprobs(p, &ro.sample.ids, batch[ro.slot].features)?.sum()
        });
        let w = -ro.advantage() / rollouts.len() as f64;
        for (name, t) in g {
            let acc = expected.get_mut(&name).unwrap();
            for (x, y) in acc.data_mut().iter_mut().zip(t.data()) {
                *x += w * y;
            }
        }
    }
    let mut worst = 0.0f64;
    for (name, t) in &auto {
        for (x, y) in t.data().iter().zip(expected[name].data()) {
            worst = worst.max((x - y).abs());
        }
    }
    let tied: Vec<ScstRollout> = rollouts
        .iter()
        .cloned()
        .map(|mut ro| {
            ro.greedy_reward = ro.sample_reward;
            ro
        })
        .collect();
    let zero = all_zero(&analytic_grads(&params, |p| {
        Ok(scst_loss(&model, p, &batch, &tied)?.unwrap())
    }));
    Check::new(
        worst < 1e-8 && zero,
        format!("max |autodiff - A*grad log p| {worst:.1e}, equal rewards give zero gradient: {zero}"),
    )
}

/// One member whose ratio to the old policy is exactly `rho` in sequence
/// mode (or `rho` per token in token mode).
pub fn clip_fixture(
    model: &Captioner,
    params: &caprl::numcore::ModelParams,
    feats: &FeatureGrid,
    rho: f64,
    advantage: f64,
    agg: RatioAgg,
) -> SampleGroup {
    let seq = TokenSeq::from_words(&[5, 7, 4]);
    let lp = token_logprob_values(model, params, &seq, feats).unwrap();
    let old_logprobs = match agg {
        RatioAgg::TokenMean => lp.iter().map(|l| l - rho.ln()).collect(),
        RatioAgg::Sequence => {
            let mut v = lp.clone();
            v[0] -= rho.ln();
            v
        }
    };
    SampleGroup {
        image: 0,
        members: vec![GroupMember {
            seq,
            old_logprobs,
            ref_logprobs: lp,
            reward: 0.0,
            advantage,
        }],
    }
}

pub fn clip_behaviour(seed: u64) -> Check {
    let model = rl_model();
    let params = spread_params(&model, seed, 0.2);
    let feats = features(&mut rng(seed), 2, 4);
    let mut ok = true;
    let mut value_err = 0.0f64;
    let mut notes = Vec::new();
    for agg in [RatioAgg::Sequence, RatioAgg::TokenMean] {
        let cfg = GrpoConfig {
            kl_beta: 0.0,
            ratio_agg: agg,
            ..GrpoConfig::default()
        };
        for (rho, adv, clipped) in [
            (1.5, 1.0, true),
            (0.5, -1.0, true),
            (1.5, -1.0, false),
            (0.5, 1.0, false),
            (1.1, 1.0, false),
        ] {
            let group = clip_fixture(&model, &params, &feats, rho, adv, agg);
            let f = loss_fn(|p| Ok(grpo_loss(&model, p, &group, &feats, &cfg)?.loss));
            let zero = all_zero(&analytic_grads(&params, f));
            ok &= zero == clipped;
            if rho == 1.5 && adv == 1.0 {
                let loss = loss_value(&params, &f);
                value_err = value_err.max((-loss - 1.2).abs());
            }
        }
        notes.push(format!("{agg:?}"));
    }
    Check::new(
        ok && value_err < 1e-12,
        format!(
            "clipped branches have zero gradient and unclipped ones do not ({}); rho=1.5, A=1 term off 1.2 by {value_err:.1e}",
            notes.join(", ")
        ),
    )
}

fn sentence(r: &mut impl Rng, vocab: usize, max_len: usize) -> Vec<usize> {
    let n = r.random_range(1..=max_len);
    (0..n).map(|_| r.random_range(0..vocab)).collect()
}

pub fn metric_oracles(pairs: usize, seed: u64) -> Check {
    let start = Instant::now();
    let mut r = rng(seed);
    let cands: Vec<Vec<usize>> = (0..pairs).map(|_| sentence(&mut r, 6, 12)).collect();
    let refs: Vec<Vec<Vec<usize>>> = (0..pairs)
        .map(|_| {
            let k = r.random_range(1..=5);
            (0..k).map(|_| sentence(&mut r, 6, 12)).collect()
        })
        .collect();
    let mut worst = [0.0f64; 4];
    for (c, rs) in cands.iter().zip(&refs) {
        let lib = bleu(&[c.clone()], &[rs.clone()], 4).unwrap();
        let ora = oracle::bleu(&[c.clone()], &[rs.clone()]);
        for n in 0..4 {
            worst[0] = worst[0].max((lib[n] - ora[n]).abs());
        }
        worst[1] = worst[1].max((rouge_l(c, rs) - oracle::rouge_l(c, rs)).abs());
        worst[2] = worst[2].max((meteor_lite(c, rs) - oracle::meteor(c, rs)).abs());
    }
    let lib = bleu(&cands, &refs, 4).unwrap();
    let ora = oracle::bleu(&cands, &refs);
    for n in 0..4 {
        worst[0] = worst[0].max((lib[n] - ora[n]).abs());
    }
    for (variant, clipped) in [(CiderVariant::Plain, false), (CiderVariant::D, true)] {
        let scorer = CiderScorer::new(&refs, variant).unwrap();
        for (i, c) in cands.iter().enumerate() {
            let d = scorer.score(i, c).unwrap() - oracle::cider(c, i, &refs, clipped);
            worst[3] = worst[3].max(d.abs());
        }
    }
    let maxima = identity_maxima();
    let secs = start.elapsed().as_secs_f64();
    Check::new(
        worst.iter().all(|&w| w < 1e-9) && maxima.pass && secs < 10.0,
        format!(
            "{pairs} pairs, max diff BLEU {:.1e} ROUGE-L {:.1e} METEOR {:.1e} CIDEr {:.1e}; {}; {:.1}s",
            worst[0], worst[1], worst[2], worst[3], maxima.detail, secs
        ),
    )
}

/// Identity candidates score the maxima. CIDEr reaches 10 when every
/// reference equals the candidate, the candidate has at least four words,
/// and none of its n-grams occurs in every image (positive idf).
pub fn identity_maxima() -> Check {
    let sents: Vec<Vec<usize>> = vec![
        vec![1, 2, 3, 4, 5],
        vec![6, 7, 8, 9],
        vec![10, 11, 12, 13, 14, 15],
    ];
    let refs: Vec<Vec<Vec<usize>>> = sents.iter().map(|s| vec![s.clone(), s.clone()]).collect();
    let b = bleu(&sents, &refs, 4).unwrap();
    let rl: f64 = sents.iter().zip(&refs).map(|(c, r)| rouge_l(c, r)).sum::<f64>() / 3.0;
    let scorer = CiderScorer::new(&refs, CiderVariant::Plain).unwrap();
    let c = scorer.corpus_score(&sents).unwrap();
    let ok = b.iter().all(|&x| (x - 1.0).abs() < 1e-12)
        && (rl - 1.0).abs() < 1e-12
        && (c - 10.0).abs() < 1e-9;
    Check::new(
        ok,
        format!("identity BLEU-4 {:.6}, ROUGE-L {:.6}, CIDEr {:.6}", b[3], rl, c),
    )
}

pub fn random_policy(seed: u64) -> (Captioner, caprl::numcore::ModelParams, FeatureGrid) {
    let model = Captioner::new(DecoderConfig {
        vocab_size: 10,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        ffn_dim: 16,
        max_len: 8,
        feat_dim: 4,
    })
    .unwrap();
    let params = spread_params(&model, seed, 0.8);
    let feats = features(&mut rng(seed + 1000), 3, 4);
    (model, params, feats)
}

pub fn decoder_equivalences(models: usize) -> Check {
    let mut mismatches = 0;
    for seed in 0..models as u64 {
        let (model, params, feats) = random_policy(seed);
        let policy = CaptionPolicy {
            model: &model,
            params: &params,
            features: &feats,
        };
        let cfg = DecodeConfig {
            beam_size: 1,
            max_len: 7,
            ..DecodeConfig::default()
        };
        if beam_decode(&policy, &cfg).unwrap().seq != greedy_decode(&policy, &cfg).unwrap() {
            mismatches += 1;
        }
    }
    let (exhaustive, space, worst) = exhaustive_beam(20);
    Check::new(
        mismatches == 0 && exhaustive == 20,
        format!(
            "beam 1 vs greedy: {mismatches}/{models} mismatches; exhaustive beam found the global max on {exhaustive}/20 vocab-3/max_len-3 models (search space {space}, max logprob diff {worst:.1e})"
        ),
    )
}

/// Three word tokens plus EOS, three generated tokens at most. Half the
/// models are random lookup tables, half are captioners.
pub fn exhaustive_beam(models: usize) -> (usize, usize, f64) {
    let cfg = DecodeConfig {
        beam_size: 64,
        max_len: 3,
        ..DecodeConfig::default()
    };
    let mut hits = 0;
    let mut space = 0;
    let mut worst = 0.0f64;
    let captioner = Captioner::new(DecoderConfig {
        vocab_size: 6,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        ffn_dim: 8,
        max_len: 4,
        feat_dim: 3,
    })
    .unwrap();
    let feats = features(&mut rng(77), 2, 3);
    for seed in 0..models as u64 {
        let params = spread_params(&captioner, seed, 1.0);
        let policy = CaptionPolicy {
            model: &captioner,
            params: &params,
            features: &feats,
        };
        let table = TableModel {
            vocab: 6,
            seed,
            spread: 3.0,
        };
        let (all, hyp) = if seed % 2 == 0 {
            (enumerate_captions(&table, 3), beam_decode(&table, &cfg).unwrap())
        } else {
            (enumerate_captions(&policy, 3), beam_decode(&policy, &cfg).unwrap())
        };
        space = all.len();
        let best = all
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        worst = worst.max((best.1 - hyp.logprob).abs());
        if best.0 == hyp.seq.ids && (best.1 - hyp.logprob).abs() < 1e-9 {
            hits += 1;
        }
    }
    (hits, space, worst)
}
