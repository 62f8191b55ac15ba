//! Acceptance checks, run as a plain binary so that every check prints one
//! `PASS` or `FAIL` line even when an earlier one fails.
//!
//! The model-level checks train default-size models on three seeds and take
//! several minutes on one core.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::oracles::{
    bleu_brute, bm25_brute, chi_square, hallucination_brute, index_of, parent_brute, random_passages,
    random_tokens, rng, rouge_brute, spearman, CHI2_CRIT_01,
};
use common::{pref_batch, sft_batch, spread_params, toy_config};
use rac_core::decode::{generate, mixture_step, noisy_generate, MixtureConfig, SampleConfig};
use rac_core::eval::{bleu, hallucination_rate, parent_recall, rouge_l};
use rac_core::lm::{context_ids, init_params, LMConfig, LMParams, ModelRole};
use rac_core::pipeline::{
    evaluate_model, run_pipeline, sweep_alpha, sweep_passages, sweep_retrieval, NegativeSource, RunConfig, RunOutput,
};
use rac_core::retrieval::{retrieve_topk, Bm25Params, Strategy};
use rac_core::seed::{rng_from_seed, stage_seed};
use rac_core::text::Stopwords;
use rac_core::train::{
    dpo_loss, preference_stats, rac_loss, sft_loss, train_dpo, ClarificationExample, PreferenceExample, Schedule,
    TrainConfig,
};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Largest `|a - fd| / max(|a|, |fd|)` over every parameter; entries where
/// both are exactly zero (embeddings of unused tokens) count as agreement.
fn worst_relative_error(params: &LMParams, analytic: &LMParams, loss: impl Fn(&LMParams) -> f64) -> f64 {
    const H: f64 = 1e-5;
    let mut p = params.clone();
    let mut worst = 0.0f64;
    for t in 0..p.tensors.len() {
        for i in 0..p.tensors[t].data.len() {
            let orig = p.tensors[t].data[i];
            p.tensors[t].data[i] = orig + H;
            let up = loss(&p);
            p.tensors[t].data[i] = orig - H;
            let down = loss(&p);
            p.tensors[t].data[i] = orig;
            let fd = (up - down) / (2.0 * H);
            let a = analytic.tensors[t].data[i];
            let scale = a.abs().max(fd.abs());
            if scale > 0.0 {
                worst = worst.max((a - fd).abs() / scale);
            }
        }
    }
    worst
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let p = spread_params(&toy_config(1), 20.0);
    let r = spread_params(&toy_config(2), 20.0);
    let (t1, t2) = (sft_batch(), pref_batch());
    let errs = [
        worst_relative_error(&p, &sft_loss(&p, &t1).unwrap().1, |q| sft_loss(q, &t1).unwrap().0),
        worst_relative_error(&p, &dpo_loss(&p, &r, &t2, 0.5).unwrap().1, |q| dpo_loss(q, &r, &t2, 0.5).unwrap().0),
        worst_relative_error(&p, &rac_loss(&p, &r, &t1, &t2, 0.5, 0.5).unwrap().1, |q| {
            rac_loss(q, &r, &t1, &t2, 0.5, 0.5).unwrap().0
        }),
    ];
    let secs = start.elapsed().as_secs_f64();
    check(
        errs.iter().all(|&e| e < 1e-4) && secs < 60.0,
        format!("max rel err sft {:.2e} dpo {:.2e} rac {:.2e}, {secs:.1}s", errs[0], errs[1], errs[2]),
    )
}

fn dpo_at_reference() -> Outcome {
    let p = spread_params(&toy_config(3), 20.0);
    let batch = pref_batch();
    let mut worst = 0.0f64;
    for beta in [0.01, 0.1, 0.5, 1.0, 5.0] {
        let (loss, _) = dpo_loss(&p, &p, &batch, beta).unwrap();
        worst = worst.max((loss - std::f64::consts::LN_2).abs());
    }
    check(worst <= 1e-9, format!("max |loss - ln 2| {worst:.2e} over 5 betas"))
}

fn objective_endpoints() -> Outcome {
    let p = spread_params(&toy_config(4), 20.0);
    let r = spread_params(&toy_config(5), 20.0);
    let (t1, t2) = (sft_batch(), pref_batch());
    let diff = |(la, ga): (f64, LMParams), (lb, gb): (f64, LMParams)| {
        let g = ga
            .tensors
            .iter()
            .zip(&gb.tensors)
            .flat_map(|(x, y)| x.data.iter().zip(&y.data).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        (la - lb).abs().max(g)
    };
    let at0 = diff(rac_loss(&p, &r, &t1, &t2, 0.0, 0.3).unwrap(), sft_loss(&p, &t1).unwrap());
    let at1 = diff(rac_loss(&p, &r, &t1, &t2, 1.0, 0.3).unwrap(), dpo_loss(&p, &r, &t2, 0.3).unwrap());
    check(at0 <= 1e-12 && at1 <= 1e-12, format!("gamma 0 vs sft {at0:.2e}, gamma 1 vs dpo {at1:.2e}"))
}

fn mixture_endpoints() -> Outcome {
    let cfg = |seed| LMConfig {
        vocab_size: 20,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        context_len: 32,
        seed,
    };
    let (grounded, uncond) = (spread_params(&cfg(1), 40.0), spread_params(&cfg(2), 40.0));
    let (query, passages) = (vec![5u32, 9, 11], vec![vec![6u32, 7, 12, 13], vec![8u32, 14]]);
    let mut mismatches = 0;
    for i in 0..100u64 {
        for (alpha, model, role) in [(0.0, &grounded, ModelRole::Grounded), (1.0, &uncond, ModelRole::Ungrounded)] {
            let ctx = context_ids(role, &query, &passages);
            let sample = SampleConfig {
                temperature: 1.0,
                top_k: 20,
                max_len: 8,
                seed: i,
            };
            let got = noisy_generate(
                &grounded,
                &uncond,
                &query,
                &passages,
                &MixtureConfig {
                    alpha,
                    sample: sample.clone(),
                },
            );
            let mut single = generate(model, &ctx, &sample).unwrap();
            if single.tokens.is_empty() {
                let retry = SampleConfig {
                    seed: stage_seed(i, "retry"),
                    ..sample
                };
                single = generate(model, &ctx, &retry).unwrap();
            }
            let same = match got {
                Ok(g) => g.tokens == single.tokens,
                Err(_) => single.tokens.is_empty(),
            };
            mismatches += usize::from(!same);
        }
    }
    check(mismatches == 0, format!("{mismatches} mismatches in 200 generations"))
}

fn mixture_law() -> Outcome {
    const P0: [f64; 4] = [0.5, 0.3, 0.15, 0.05];
    const PU: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
    let alpha = 0.7;
    let (mut gate_rng, mut token_rng) = (rng_from_seed(11), rng_from_seed(12));
    let mut counts = [0usize; 4];
    for _ in 0..50_000 {
        let (tok, _) = mixture_step(&P0, &PU, alpha, &mut gate_rng, &mut token_rng).unwrap();
        counts[tok as usize] += 1;
    }
    let mix: Vec<f64> = P0.iter().zip(&PU).map(|(g, u)| (1.0 - alpha) * g + alpha * u).collect();
    let stat = chi_square(&counts, &mix);
    check(stat < CHI2_CRIT_01[2], format!("chi2 {stat:.3} (df 3, critical {})", CHI2_CRIT_01[2]))
}

fn bm25_exact() -> Outcome {
    let start = Instant::now();
    let mut r = rng(6);
    let passages = random_passages(&mut r, 200);
    let index = index_of(&passages);
    let mut bad = 0;
    for _ in 0..50 {
        let len = r.random_range(1..=5);
        let query: Vec<String> = (0..len).map(|_| format!("w{}", r.random_range(0..90))).collect();
        let want = bm25_brute(&passages, &query, 10, 0.9, 0.4);
        let got = retrieve_topk(&index, &query, 10, Bm25Params::default());
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(g, (id, s))| g.passage_id == *id && (g.score - s).abs() < 1e-9);
        bad += usize::from(!same);
    }
    let secs = start.elapsed().as_secs_f64();
    check(bad == 0 && secs < 5.0, format!("{bad} of 50 rankings differ, {secs:.2}s"))
}

fn metrics_exact() -> Outcome {
    let sw = Stopwords::default();
    let mut r = rng(7);
    let mut bad = [0usize; 4];
    for _ in 0..50 {
        let cand = random_tokens(&mut r, 1, 12);
        let reference = random_tokens(&mut r, 1, 12);
        let passages: Vec<Vec<String>> = (0..r.random_range(1..=3)).map(|_| random_tokens(&mut r, 3, 15)).collect();
        bad[0] += usize::from(
            parent_recall(&cand, &passages, Some(&reference), &sw)
                != parent_brute(&cand, &passages, Some(&reference), &sw),
        );
        bad[1] += usize::from(hallucination_rate(&cand, &passages, &sw) != hallucination_brute(&cand, &passages, &sw));
        bad[2] += usize::from(rouge_l(&cand, &reference) != rouge_brute(&cand, &reference));
        bad[3] += usize::from(bleu(&cand, &reference) != bleu_brute(&cand, &reference));
    }
    check(
        bad == [0; 4],
        format!("mismatches of 50: parent {} hallucination {} rouge {} bleu {}", bad[0], bad[1], bad[2], bad[3]),
    )
}

/// Chosen questions copy passage tokens, rejected ones use tokens absent
/// from every passage.
fn separable_pairs(seed: u64, n: usize) -> Vec<PreferenceExample> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let query: Vec<u32> = (0..2).map(|_| r.random_range(5..13)).collect();
            let passage: Vec<u32> = (0..5).map(|_| r.random_range(5..13)).collect();
            let chosen: Vec<u32> = (0..3).map(|_| passage[r.random_range(0..passage.len())]).collect();
            let rejected: Vec<u32> = (0..3).map(|_| r.random_range(13..20)).collect();
            PreferenceExample {
                query,
                passages: vec![passage],
                chosen,
                rejected,
            }
        })
        .collect()
}

fn preference_learning() -> Outcome {
    let start = Instant::now();
    let reference = init_params(&LMConfig {
        vocab_size: 20,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        context_len: 32,
        seed: 8,
    })
    .unwrap();
    let (train, held_out) = (separable_pairs(80, 64), separable_pairs(81, 64));
    let t1: Vec<ClarificationExample> = train
        .iter()
        .map(|p| ClarificationExample {
            query: p.query.clone(),
            passages: p.passages.clone(),
            question: p.chosen.clone(),
        })
        .collect();
    let cfg = TrainConfig {
        lr_sft: 1e-2,
        lr_dpo: 1e-2,
        epochs: 2,
        batch_size: 8,
        beta: 0.1,
        gamma: 0.5,
        schedule: Schedule::Constant,
        seed: 8,
    };
    let trained = train_dpo(&reference, &reference, &train, &t1, &cfg).map_err(|e| e.to_string())?;
    let stats = preference_stats(&trained.params, &reference, &held_out, cfg.beta).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        stats.accuracy > 0.9 && stats.mean_margin > 0.0 && secs < 180.0,
        format!("held-out accuracy {:.3}, margin {:.4}, {secs:.1}s", stats.accuracy, stats.mean_margin),
    )
}

const SEEDS: [u64; 3] = [0, 1, 2];

/// Full default-size runs, shared by the model-level checks.
struct Runs {
    outputs: Vec<Result<(RunOutput, Duration), String>>,
}

impl Runs {
    fn get(&self, i: usize) -> Result<&RunOutput, String> {
        self.outputs[i].as_ref().map(|(o, _)| o).map_err(Clone::clone)
    }
}

fn seed_cfg(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        ..RunConfig::default()
    }
}

fn majority(wins: usize) -> bool {
    wins * 2 > SEEDS.len()
}

fn dpo_beats_sft(runs: &Runs) -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    for (i, seed) in SEEDS.iter().enumerate() {
        let secs = runs.outputs[i].as_ref().map_err(Clone::clone)?.1.as_secs_f64();
        let r = &runs.get(i)?.report;
        let win = r.rac_dpo.grounding_precision >= r.rac_sft.grounding_precision
            && r.rac_dpo.parent_recall >= r.rac_sft.parent_recall;
        wins += usize::from(win && secs < 600.0);
        lines.push(format!(
            "seed {seed}: gp {:.3}/{:.3} pr {:.3}/{:.3} {secs:.0}s",
            r.rac_dpo.grounding_precision, r.rac_sft.grounding_precision, r.rac_dpo.parent_recall, r.rac_sft.parent_recall
        ));
    }
    check(wins >= 2, format!("{wins}/3 seeds (dpo/sft) {}", lines.join("; ")))
}

fn alpha_monotone(runs: &Runs) -> Outcome {
    let out = runs.get(0)?;
    let alphas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let report = sweep_alpha(&out.prepared, &out.models, &alphas, &out.prepared.val, 0, 0).map_err(|e| e.to_string())?;
    let hall: Vec<f64> = report.rows.iter().map(|r| r.mean_hallucination).collect();
    let rho = spearman(&alphas, &hall);
    check(
        rho > 0.8,
        format!("spearman {rho:.3}, hallucination {:?}", hall.iter().map(|h| format!("{h:.3}")).collect::<Vec<_>>()),
    )
}

fn passages_help(runs: &Runs) -> Outcome {
    let sweep = sweep_passages(&RunConfig::default(), &[0, 1, 4, 8]).map_err(|e| e.to_string())?;
    let nll: Vec<f64> = sweep.rows.iter().map(|r| r.val_nll).collect();
    let help = nll[1] < nll[0];
    let diminishing = nll[2] - nll[3] < nll[0] - nll[2];

    let mut wins = 0;
    let mut pairs = Vec::new();
    for (i, &seed) in SEEDS.iter().enumerate() {
        let bm25 = runs.get(i)?.report.rac_sft.grounding_precision;
        let random = sweep_retrieval(&seed_cfg(seed), &[Strategy::Random]).map_err(|e| e.to_string())?.rows[0]
            .report
            .grounding_precision;
        wins += usize::from(random <= bm25);
        pairs.push(format!("{random:.3}/{bm25:.3}"));
    }
    check(
        help && diminishing && majority(wins),
        format!(
            "val nll k0 {:.3} k1 {:.3} k4 {:.3} k8 {:.3}; random/bm25 grounding {} ({wins}/3)",
            nll[0],
            nll[1],
            nll[2],
            nll[3],
            pairs.join(" ")
        ),
    )
}

fn negative_source(runs: &Runs) -> Outcome {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for i in 0..SEEDS.len() {
        let out = runs.get(i)?;
        let p = &out.prepared;
        let (_, policy) =
            rac_core::pipeline::train_policy(p, &out.models, NegativeSource::BaseLm).map_err(|e| e.to_string())?;
        let base_lm = evaluate_model(p, &policy.params, ModelRole::Policy, &p.val)
            .map_err(|e| e.to_string())?
            .report
            .grounding_precision;
        let uncond = out.report.rac_dpo.grounding_precision;
        wins += usize::from(uncond >= base_lm);
        pairs.push(format!("{uncond:.3}/{base_lm:.3}"));
    }
    check(majority(wins), format!("uncond/base_lm grounding {} ({wins}/3)", pairs.join(" ")))
}

fn tiny_cli_config() -> RunConfig {
    RunConfig {
        num_topics: 5,
        facets_per_topic: 3,
        docs_per_facet: 1,
        k: 2,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        context_len: 64,
        epochs: 2,
        dpo_epochs: 1,
        batch_size: 8,
        max_gen_len: 6,
        ..RunConfig::default()
    }
}

fn run_cli_chain(root: &Path, work: &Path) -> Result<(), String> {
    let cfg = root.join("config.json");
    tiny_cli_config().save(&cfg).map_err(|e| e.to_string())?;
    let gens = work.join("gens.jsonl");
    let ckpt = work.join("rac_dpo.ckpt");
    let steps: Vec<Vec<&str>> = vec![
        vec!["--config", cfg.to_str().unwrap(), "make-corpus"],
        vec!["index"],
        vec!["adapt"],
        vec!["train-sft"],
        vec!["train-uncond"],
        vec!["gen-negatives"],
        vec!["train-dpo"],
        vec!["generate", "--model", ckpt.to_str().unwrap(), "--role", "policy", "--out", gens.to_str().unwrap()],
        vec!["evaluate", "--in", gens.to_str().unwrap()],
        vec!["sweep-alpha", "--alphas", "0,0.5,1", "--examples", "2"],
        vec!["sweep-passages", "--ks", "0,1,2"],
        vec!["sweep-retrieval"],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_rac"))
            .arg("--work-dir")
            .arg(work)
            .args(&args)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    let all = Command::new(env!("CARGO_BIN_EXE_rac"))
        .arg("--work-dir")
        .arg(work.join("all"))
        .args(["--config", cfg.to_str().unwrap(), "run-all"])
        .output()
        .map_err(|e| e.to_string())?;
    if !all.status.success() {
        return Err(format!("run-all: {}", String::from_utf8_lossy(&all.stderr)));
    }
    Ok(())
}

fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files_under(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_cli_chain(tmp.path(), &a)?;
    run_cli_chain(tmp.path(), &b)?;
    let (fa, fb) = (files_under(&a), files_under(&b));
    let rel = |root: &Path, v: &[std::path::PathBuf]| -> Vec<std::path::PathBuf> {
        v.iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect()
    };
    if rel(&a, &fa) != rel(&b, &fb) {
        return Err("the two runs wrote different file sets".into());
    }
    let differing: Vec<String> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| std::fs::read(x).unwrap() != std::fs::read(y).unwrap())
        .map(|(x, _)| x.strip_prefix(&a).unwrap().display().to_string())
        .collect();
    check(differing.is_empty(), format!("{} files compared, differing: {differing:?}", fa.len()))
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    };

    report("01 gradients match finite differences", &mut gradients);
    report("02 dpo loss is ln 2 at the reference", &mut dpo_at_reference);
    report("03 joint objective endpoints", &mut objective_endpoints);
    report("04 mixture decoding endpoints", &mut mixture_endpoints);
    report("05 mixture step law", &mut mixture_law);
    report("06 bm25 against brute force", &mut bm25_exact);
    report("07 metrics against oracles", &mut metrics_exact);
    report("08 preference learning on separable pairs", &mut preference_learning);

    let runs = Runs {
        outputs: SEEDS
            .iter()
            .map(|&seed| {
                let start = Instant::now();
                run_pipeline(&seed_cfg(seed), None).map(|o| (o, start.elapsed())).map_err(|e| e.to_string())
            })
            .collect(),
    };
    report("09 aligned model grounds at least as well", &mut || dpo_beats_sft(&runs));
    report("10 hallucination rises with alpha", &mut || alpha_monotone(&runs));
    report("11 evidence helps with diminishing returns", &mut || passages_help(&runs));
    report("12 query-only negatives vs base negatives", &mut || negative_source(&runs));
    report("13 cli runs are byte-identical", &mut determinism);

    println!("{} of 13 passed", 13 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
