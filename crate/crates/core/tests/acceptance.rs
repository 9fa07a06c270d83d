//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Criteria 1 to 7 are exact oracles and invariants. Criteria 8 to 12 share
//! trained adapters on the bundled distractor benchmark, built once.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use prca_core::gateway::{Gateway, JudgeBackend};
use prca_core::metrics::rouge_l;
use prca_core::pipeline::{
    build_toy, evaluate, run_contextual_stage, run_reward_stage, sweep_topk, EvalReport, EvalSetup, KnowledgeBase,
    RunConfig, ToyBenchmark, ToyConfig, TrainingConfig,
};
use prca_core::policy::{PolicySnapshot, EOS};
use prca_core::ppo::{gae, ppo_objective};
use prca_core::retrieval::InvertedIndex;
use prca_core::reward::{attribution_weights, distribute_rewards, Attribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOY_CONFIG: &str = include_str!("../../../configs/toy.toml");

/// Training seeds for the stage ablation. The first is the configured seed
/// used by every other toy criterion.
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xacce_0000 + tag)
}

fn c1_rouge_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut bad = 0;
    for _ in 0..1000 {
        let x: Vec<u8> = (0..r.gen_range(0..=8)).map(|_| r.gen_range(0..4)).collect();
        let y: Vec<u8> = (0..r.gen_range(0..=8)).map(|_| r.gen_range(0..4)).collect();
        let want = match x.len().max(y.len()) {
            // Two empty sequences are identical.
            0 => 1.0,
            m => common::brute_lcs(&x, &y) as f64 / m as f64,
        };
        if rouge_l(&x, &y).value != want {
            bad += 1;
        }
    }
    let took = start.elapsed();
    check(
        bad == 0 && took < Duration::from_secs(10),
        format!("1000 pairs, {bad} mismatches, {took:.2?}"),
    )
}

fn c2_reward_conservation() -> Outcome {
    let mut r = rng(2);
    let mut worst_sum = 0.0f64;
    let mut worst_ratio = 0.0f64;
    let mut order_violations = 0;
    for _ in 0..1000 {
        let k = r.gen_range(1..=40);
        let probs: Vec<f64> = (0..k).map(|_| r.gen_range(1e-6..=1.0)).collect();
        let r_eos = r.gen_range(-2.0..2.0);
        let rewards = distribute_rewards(&probs, r_eos, Attribution::Paper).map_err(|e| e.to_string())?;
        worst_sum = worst_sum.max((rewards.iter().sum::<f64>() - r_eos).abs());
        let w = attribution_weights(&probs, Attribution::Paper).map_err(|e| e.to_string())?;
        for i in 0..k {
            for j in 0..k {
                if probs[i] > probs[j] && w[i] <= w[j] {
                    order_violations += 1;
                }
            }
        }
        let max = w.iter().cloned().fold(f64::MIN, f64::max);
        let min = w.iter().cloned().fold(f64::MAX, f64::min);
        worst_ratio = worst_ratio.max(max / min);
    }
    check(
        worst_sum < 1e-9 && order_violations == 0 && worst_ratio <= std::f64::consts::E + 1e-9,
        format!("max |sum - r_eos| {worst_sum:.1e}, order violations {order_violations}, max weight ratio {worst_ratio:.6}"),
    )
}

fn c3_gae() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let deltas: Vec<f64> = (0..r.gen_range(1..30)).map(|_| r.gen_range(-5.0..5.0)).collect();
        let (g, l) = (r.gen_range(0.0..=1.0), r.gen_range(0.0..=1.0));
        let a = gae(&deltas, g, l);
        let b = common::gae_double_sum(&deltas, g, l);
        worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    let deltas = [0.5, -1.25, 2.0, 0.75];
    let lambda_zero = gae(&deltas, 0.9, 0.0) == deltas;
    let suffix: Vec<f64> = (0..deltas.len()).map(|t| deltas[t..].iter().sum()).collect();
    let ones = gae(&deltas, 1.0, 1.0) == suffix;
    check(
        worst < 1e-9 && lambda_zero && ones,
        format!("max deviation {worst:.1e}; lambda=0 exact {lambda_zero}; gamma=lambda=1 exact {ones}"),
    )
}

fn c4_ppo_clipping() -> Outcome {
    let policy = common::small_policy(4);
    let n = policy.params().len();
    if n > 2000 {
        return Err(format!("policy has {n} parameters"));
    }
    let v = policy.vocab();
    let input = policy.build_input("capital of france", &["paris is the capital of france"]);
    let mut output = v.encode("paris the capital of");
    output.push(EOS);
    let episode = policy.episode_for(&input, &output).map_err(|e| e.to_string())?;
    let k = output.len();
    // (target ratio, advantage): inside the band, clipped above, clipped
    // below, inside, and outside the band on the unclipped branch.
    let plan = [(1.1, 1.0), (1.5, 0.8), (0.5, -1.2), (0.9, -0.7), (1.5, -0.6)];
    let probs_at = |theta: &[f64]| {
        common::with_params(&policy, theta)
            .model()
            .teacher_forced(&input, &output)
            .target_probs()
    };
    let base = probs_at(policy.params());
    let old: Vec<f64> = base.iter().zip(&plan).map(|(p, (r, _))| p / r).collect();
    let adv: Vec<f64> = plan.iter().map(|(_, a)| *a).collect();
    let zeros = vec![0.0; k];
    let eps = 0.2;
    let obj = ppo_objective(&base, &old, &adv, &zeros, &zeros, eps, 0.0).map_err(|e| e.to_string())?;
    let expected_mask = [false, true, true, false, false];
    if obj.clip_mask != expected_mask {
        return Err(format!("clip mask {:?}", obj.clip_mask));
    }
    let surrogate = |theta: &[f64], only: Option<usize>| {
        let a: Vec<f64> = (0..k).map(|t| if only.is_none_or(|o| o == t) { adv[t] } else { 0.0 }).collect();
        ppo_objective(&probs_at(theta), &old, &a, &zeros, &zeros, eps, 0.0).unwrap().surrogate
    };
    let theta = policy.params().to_vec();
    let analytic = policy.policy_grad_logprob(&episode, &obj.logprob_coeffs).map_err(|e| e.to_string())?;
    let numeric = common::numeric_grad(&theta, 1e-5, |x| surrogate(x, None));
    let total_err = common::max_rel_err(&analytic, &numeric);

    let mut inside_err = 0.0f64;
    let mut clipped_abs = 0.0f64;
    for t in 0..k {
        let numeric_t = common::numeric_grad(&theta, 1e-5, |x| surrogate(x, Some(t)));
        if obj.clip_mask[t] {
            if obj.logprob_coeffs[t] != 0.0 {
                return Err(format!("clipped token {t} has coefficient {}", obj.logprob_coeffs[t]));
            }
            clipped_abs = numeric_t.iter().fold(clipped_abs, |m, g| m.max(g.abs()));
        } else if (1.0 - eps..=1.0 + eps).contains(&obj.ratios[t]) {
            // Gradient of the unclipped term r_t A_t / K alone.
            let plain = |x: &[f64]| probs_at(x)[t] / old[t] * adv[t] / k as f64;
            let want = common::numeric_grad(&theta, 1e-5, plain);
            let mut coeffs = vec![0.0; k];
            coeffs[t] = obj.logprob_coeffs[t];
            let got = policy.policy_grad_logprob(&episode, &coeffs).map_err(|e| e.to_string())?;
            inside_err = inside_err.max(common::max_rel_err(&got, &want));
        }
    }
    check(
        total_err < 1e-4 && inside_err < 1e-4 && clipped_abs < 1e-8,
        format!(
            "{n} params; full-surrogate rel err {total_err:.1e}; in-band vs unclipped term {inside_err:.1e}; clipped-token FD gradient max |g| {clipped_abs:.1e}"
        ),
    )
}

fn c5_gradients() -> Outcome {
    let mut worst_sup = 0.0f64;
    let mut worst_pg = 0.0f64;
    for seed in 0..20 {
        let policy = common::small_policy(100 + seed);
        let v = policy.vocab();
        let mut r = rng(500 + seed);
        let words = ["paris", "is", "the", "capital", "of", "france", "berlin", "germany", "rome"];
        let mut pick = |n: usize| -> String {
            (0..n).map(|_| words[r.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
        };
        let batch: Vec<(Vec<u32>, Vec<u32>)> = (0..2)
            .map(|_| {
                let q = pick(3);
                let d = pick(5);
                let mut target = v.encode(&pick(3));
                target.push(EOS);
                (policy.build_input(&q, &[&d]), target)
            })
            .collect();
        let theta = policy.params().to_vec();
        let (_, analytic) = policy.supervised_loss_and_grad(&batch).map_err(|e| e.to_string())?;
        let numeric = common::numeric_grad(&theta, 1e-5, |x| {
            common::with_params(&policy, x).supervised_loss_and_grad(&batch).unwrap().0
        });
        worst_sup = worst_sup.max(common::max_rel_err(&analytic, &numeric));

        let (input, output) = &batch[0];
        let episode = policy.episode_for(input, output).map_err(|e| e.to_string())?;
        let coeffs: Vec<f64> = (0..output.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let analytic = policy.policy_grad_logprob(&episode, &coeffs).map_err(|e| e.to_string())?;
        let numeric = common::numeric_grad(&theta, 1e-5, |x| {
            let probs = common::with_params(&policy, x).model().teacher_forced(input, output).target_probs();
            probs.iter().zip(&coeffs).map(|(p, c)| c * p.ln()).sum()
        });
        worst_pg = worst_pg.max(common::max_rel_err(&analytic, &numeric));
    }
    check(
        worst_sup < 1e-4 && worst_pg < 1e-4,
        format!("20 seeds; supervised max rel err {worst_sup:.1e}; log-prob max rel err {worst_pg:.1e}"),
    )
}

fn c6_retrieval() -> Outcome {
    let mut r = rng(6);
    let mut mismatches = 0;
    for _ in 0..200 {
        let (corpus, query) = common::random_corpus(&mut r, 100);
        let index = InvertedIndex::build(&corpus).map_err(|e| e.to_string())?;
        let want = common::brute_bm25(&corpus, &query);
        let k = r.gen_range(1..=corpus.len() + 2);
        let got = index.retrieve_topk(&query, k).map_err(|e| e.to_string())?;
        let same = got.ranked.len() == k.min(want.len())
            && got.ranked.iter().zip(&want).all(|(g, w)| g.0 == w.0 && (g.1 - w.1).abs() < 1e-12);
        if !same {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("200 corpora, {mismatches} rankings differ"))
}

fn c7_call_accounting() -> Outcome {
    let bench = build_toy(&ToyConfig {
        train: 16,
        test: 1,
        distractors: 3,
        ..ToyConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let kb = KnowledgeBase::new(bench.corpus.clone()).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut ok = true;
    // An untrained adapter rarely emits EOS, so episodes run to the length cap.
    for cap in [4usize, 16, 48] {
        let sets: Vec<String> = [
            "embed_dim=8".to_string(),
            "hidden_dim=16".into(),
            "attn_dim=16".into(),
            "batch_size=4".into(),
            "extract_epochs=0".into(),
            "reward_epochs=2".into(),
            format!("max_output_len={cap}"),
        ]
        .into();
        let cfg = RunConfig::parse("", &sets).map_err(|e| e.to_string())?.training;
        let policy = run_contextual_stage(&cfg, &kb, &bench.train).map_err(|e| e.to_string())?.policy;
        let gw = Gateway::mock();
        let out = run_reward_stage(&cfg, &kb, &bench.train, policy, &gw, None).map_err(|e| e.to_string())?;
        let episodes: usize = out.reports.iter().map(|r| r.episodes).sum();
        let tokens: f64 = out.reports.iter().map(|r| r.mean_tokens * r.episodes as f64).sum();
        let per_iter = out.reports.iter().all(|r| r.generator_calls == r.episodes as u64);
        ok &= gw.calls() == episodes as u64 && episodes == 2 * bench.train.len() && per_iter;
        lines.push(format!("K<={cap}: {} calls / {episodes} episodes / {tokens:.0} tokens", gw.calls()));
    }
    check(ok, lines.join("; "))
}

/// Everything the toy criteria need from one training seed.
struct ToyRun {
    stage1: PolicySnapshot,
    two_stage: PolicySnapshot,
    acc_stage1: f64,
    with: EvalReport,
    reward_quartiles: (f64, f64),
    took: Duration,
}

fn toy_cfg(seed: u64) -> TrainingConfig {
    RunConfig::parse(TOY_CONFIG, &[format!("seed={seed}")]).unwrap().training
}

fn train_toy(bench: &ToyBenchmark, kb: &KnowledgeBase, seed: u64) -> Result<ToyRun, String> {
    let start = Instant::now();
    let cfg = toy_cfg(seed);
    let gw = Gateway::mock();
    let setup = EvalSetup {
        cfg: &cfg,
        kb,
        gateway: &gw,
        judge: &JudgeBackend::Mock,
        lenient: false,
    };
    let stage1 = run_contextual_stage(&cfg, kb, &bench.train).map_err(|e| e.to_string())?.policy;
    let rl = run_reward_stage(&cfg, kb, &bench.train, stage1.clone(), &gw, None).map_err(|e| e.to_string())?;
    let with = evaluate(&setup, &bench.test, Some(&rl.policy), cfg.retrieval_k).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let acc_stage1 = evaluate(&setup, &bench.test, Some(&stage1), cfg.retrieval_k)
        .map_err(|e| e.to_string())?
        .accuracy;
    let q = (rl.reports.len() / 4).max(1);
    let mean = |rs: &[prca_core::ppo::PpoUpdateReport]| rs.iter().map(|r| r.mean_reward).sum::<f64>() / rs.len() as f64;
    let reward_quartiles = (mean(&rl.reports[..q]), mean(&rl.reports[rl.reports.len() - q..]));
    Ok(ToyRun {
        stage1,
        two_stage: rl.policy,
        acc_stage1,
        with,
        reward_quartiles,
        took,
    })
}

fn checkpoint(p: &PolicySnapshot) -> Vec<u8> {
    let mut buf = Vec::new();
    p.write_to(&mut buf).unwrap();
    buf
}

fn run_guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn toy_criteria() -> Vec<(u32, Outcome)> {
    let fail_all = |msg: String| (8..=12).map(|c| (c, Err(msg.clone()))).collect();
    let bench = match build_toy(&ToyConfig::default()) {
        Ok(b) => b,
        Err(e) => return fail_all(e.to_string()),
    };
    let kb = match KnowledgeBase::new(bench.corpus.clone()) {
        Ok(kb) => kb,
        Err(e) => return fail_all(e.to_string()),
    };
    let cfg = toy_cfg(ABLATION_SEEDS[0]);
    let gw = Gateway::mock();
    let setup = EvalSetup {
        cfg: &cfg,
        kb: &kb,
        gateway: &gw,
        judge: &JudgeBackend::Mock,
        lenient: false,
    };
    let baseline = match evaluate(&setup, &bench.test, None, 5) {
        Ok(r) => r,
        Err(e) => return fail_all(e.to_string()),
    };
    let mut runs = Vec::new();
    for &seed in &ABLATION_SEEDS {
        match train_toy(&bench, &kb, seed) {
            Ok(r) => runs.push(r),
            Err(e) => return fail_all(format!("seed {seed}: {e}")),
        }
    }
    let main = &runs[0];
    let mut out = Vec::new();

    let gain = main.with.accuracy - baseline.accuracy;
    out.push((
        8,
        check(
            gain >= 0.10 && main.took < Duration::from_secs(30 * 60),
            format!(
                "adapter {:.3} vs Top-5 baseline {:.3} (+{:.1} points), train+eval {:.0?}",
                main.with.accuracy,
                baseline.accuracy,
                100.0 * gain,
                main.took
            ),
        ),
    ));

    let ratio = main.with.mean_context_tokens / baseline.mean_context_tokens;
    out.push((
        9,
        check(
            ratio <= 0.5 && gain >= 0.10,
            format!(
                "context tokens {:.1} vs {:.1} (ratio {ratio:.3})",
                main.with.mean_context_tokens, baseline.mean_context_tokens
            ),
        ),
    ));

    out.push((
        10,
        run_guarded(|| {
            let rows = sweep_topk(&setup, &bench.test, &main.two_stage, &[1, 2, 4, 8]).map_err(|e| e.to_string())?;
            let without: Vec<f64> = rows.iter().map(|r| r.without_adapter.accuracy).collect();
            let with: Vec<f64> = rows.iter().map(|r| r.with_adapter.accuracy).collect();
            let peak = (0..without.len())
                .max_by(|&a, &b| without[a].partial_cmp(&without[b]).unwrap().then(b.cmp(&a)))
                .unwrap();
            let monotone = without[peak..].windows(2).all(|w| w[1] <= w[0]);
            let drop_without = without[0] - without[3];
            let drop_with = with[0] - with[3];
            check(
                monotone && drop_with < drop_without,
                format!(
                    "k=1,2,4,8 without {without:.3?} with {with:.3?}; drop k=1->8 without {drop_without:.3} with {drop_with:.3}"
                ),
            )
        }),
    ));

    let per_seed: Vec<String> = ABLATION_SEEDS
        .iter()
        .zip(&runs)
        .map(|(s, r)| format!("seed {s}: stage-1 {:.3} two-stage {:.3}", r.acc_stage1, r.with.accuracy))
        .collect();
    let all_better = runs.iter().all(|r| r.with.accuracy > r.acc_stage1);
    out.push((11, check(all_better, per_seed.join("; "))));

    out.push((
        12,
        run_guarded(|| {
            let again = train_toy(&bench, &kb, ABLATION_SEEDS[0])?;
            let same_report = main.with.to_json().map_err(|e| e.to_string())? == again.with.to_json().map_err(|e| e.to_string())?;
            let same_ckpt = checkpoint(&main.two_stage) == checkpoint(&again.two_stage)
                && checkpoint(&main.stage1) == checkpoint(&again.stage1);
            check(
                same_report && same_ckpt,
                format!("EvalReport identical {same_report}; checkpoints identical {same_ckpt}"),
            )
        }),
    ));

    let (first, last) = main.reward_quartiles;
    println!("note: seed 0 mean reward first quartile {first:.4}, last quartile {last:.4}");
    out
}

fn main() -> ExitCode {
    let exact: [(u32, fn() -> Outcome); 7] = [
        (1, c1_rouge_oracle),
        (2, c2_reward_conservation),
        (3, c3_gae),
        (4, c4_ppo_clipping),
        (5, c5_gradients),
        (6, c6_retrieval),
        (7, c7_call_accounting),
    ];
    let mut failed = 0;
    let mut report = |n: u32, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2}: {tag} - {detail}");
    };
    for (n, f) in exact {
        report(n, run_guarded(f));
    }
    let toy = catch_unwind(toy_criteria)
        .unwrap_or_else(|_| (8..=12).map(|n| (n, Err("toy run panicked".to_string()))).collect());
    for (n, outcome) in toy {
        report(n, outcome);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
