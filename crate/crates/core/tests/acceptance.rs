//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per criterion
//! and exits non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array2;
use qtcand::align::{train_ibm1, CandidateSet};
use qtcand::evaluation::{
    bleu, mean_average_precision, ndcg_at_10, recall_at_k, run_experiment, ExperimentConfig, ExperimentReport, Mode,
    RelevanceJudgments, RunResults,
};
use qtcand::io::SentencePair;
use qtcand::mine::{score_tfidf, ConstraintMask, Document};
use qtcand::nmt::{
    backward, batch_loss, beam_search, candidate_smoothed_loss, constrained_softmax, greedy_decode, log_softmax,
    log_constrained_softmax_weighted, softmax, DecodeConfig, Hypothesis, ModelConfig, TrainExample, TransformerParams,
};
use qtcand::textproc::{tokenize, Lang, TokenSequence, BOS, EOS, PAD};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- 1

fn em_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let types = 50;
    let pairs: Vec<SentencePair> = (0..2000)
        .map(|_| {
            let len = rng.gen_range(3..8);
            let src: Vec<usize> = (0..len).map(|_| rng.gen_range(0..types)).collect();
            let mut tgt: Vec<String> = src.iter().map(|i| format!("t{i:02}")).collect();
            // unaligned target noise
            if rng.gen_bool(0.2) {
                tgt.insert(rng.gen_range(0..=tgt.len()), format!("n{}", rng.gen_range(0..5)));
            }
            tgt.shuffle(&mut rng);
            SentencePair::new(
                TokenSequence::from_words(src.iter().map(|i| format!("s{i:02}")), Lang::Source),
                TokenSequence::from_words(tgt, Lang::Target),
            )
        })
        .collect();
    let start = Instant::now();
    let table = train_ibm1(&pairs, 10).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let mut hits = 0;
    for i in 0..types {
        let row = table.row(&format!("s{i:02}")).ok_or(format!("no row for s{i:02}"))?;
        let best = row
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(t, _)| t.as_str());
        if best == Some(format!("t{i:02}").as_str()) {
            hits += 1;
        }
    }
    let share = hits as f64 / types as f64;
    let detail = format!("{hits}/{types} planted translations recovered ({:.1}%) in {:.2?}", 100.0 * share, took);
    check(share >= 0.9 && took < Duration::from_secs(60), detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 2

/// Eqs. 6-8 evaluated directly from the documents.
fn tfidf_oracle(cands: &[&str], docs: &[Vec<&str>]) -> BTreeMap<String, f64> {
    let n = |y: &str| docs.iter().map(|d| d.iter().filter(|w| **w == y).count()).sum::<usize>() as f64;
    let g = |y: &str| docs.iter().filter(|d| d.contains(&y)).count() as f64;
    let total: f64 = cands.iter().map(|y| n(y)).sum();
    cands
        .iter()
        .map(|&y| {
            let s = if total == 0.0 {
                0.0
            } else if n(y) == 0.0 {
                f64::NEG_INFINITY
            } else {
                n(y) / total * (docs.len() as f64 / (g(y) + 1.0)).ln()
            };
            (y.to_string(), s)
        })
        .collect()
}

fn tfidf_matches(cands: &[&str], docs: &[Vec<&str>]) -> Result<f64, String> {
    let set = CandidateSet {
        source_word: "x".into(),
        candidates: cands.iter().enumerate().map(|(i, c)| (c.to_string(), 1.0 / (i + 2) as f64)).collect(),
    };
    let documents: Vec<Document> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| Document::new(format!("d{i}"), TokenSequence::from_words(d.iter().copied(), Lang::Target)))
        .collect();
    let refs: Vec<&Document> = documents.iter().collect();
    let got = score_tfidf(&set, &refs).map_err(|e| e.to_string())?;
    let want = tfidf_oracle(cands, docs);
    let mut worst = 0.0f64;
    for e in &got.entries {
        let w = want[&e.target];
        if w == f64::NEG_INFINITY || e.score == f64::NEG_INFINITY {
            check(w == e.score, format!("{}: {} vs {}", e.target, e.score, w))?;
        } else {
            worst = worst.max((w - e.score).abs());
        }
    }
    check(got.entries.len() == cands.len(), "candidate lost")?;
    Ok(worst)
}

fn tfidf_oracle_equivalence() -> Outcome {
    let words = ["a", "b", "c", "d", "e", "f", "g", "h"];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.gen_range(1..=5);
        let cands: Vec<&str> = words.choose_multiple(&mut rng, k).copied().collect();
        let docs: Vec<Vec<&str>> = (0..rng.gen_range(1..10))
            .map(|_| (0..rng.gen_range(1..12)).map(|_| *words.choose(&mut rng).unwrap()).collect())
            .collect();
        worst = worst.max(tfidf_matches(&cands, &docs)?);
    }
    check(worst < 1e-9, format!("max deviation {worst:e}"))?;

    // worked example: 10 clicked docs, u 6 times in 4 docs, v twice in 1 doc
    let mut docs: Vec<Vec<&str>> = vec![vec!["u", "u", "u"], vec!["u"], vec!["u"], vec!["u", "v", "v"]];
    docs.extend((0..6).map(|_| vec!["filler"]));
    let w = tfidf_oracle(&["v", "u"], &docs)["u"];
    let dev = tfidf_matches(&["v", "u"], &docs)?;
    check(dev < 1e-9 && (w - 0.75 * 2f64.ln()).abs() < 1e-12 && (w - 0.5199).abs() < 1e-4, format!("worked example {w}"))?;
    Ok(format!("100 instances, max |diff| {worst:.1e}; worked example TF-IDF(u) = {w:.4}"))
}

// ---------------------------------------------------------------- 3

fn toy_params(seed: u64) -> TransformerParams {
    let cfg = ModelConfig {
        layers: 2,
        d_model: 16,
        heads: 2,
        d_ff: 32,
        src_vocab: 11,
        tgt_vocab: 10,
        max_len: 12,
    };
    let mut p = TransformerParams::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    for (name, data) in p.tensors_mut() {
        if name.ends_with("gain") || name.contains(".b") || name.ends_with("bias") {
            let base = if name.ends_with("gain") { 1.0 } else { 0.0 };
            data.iter_mut().for_each(|x| *x = base + rng.gen_range(-0.3..0.3));
        }
    }
    p
}

fn gradient_check() -> Outcome {
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut zero_tensors = BTreeSet::new();
    let mut tensors = 0;
    for seed in 0..5u64 {
        let mut p = toy_params(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch: Vec<TrainExample> = (0..3)
            .map(|_| {
                let src: Vec<usize> = (0..rng.gen_range(2..7)).map(|_| rng.gen_range(4..11)).collect();
                let tgt: Vec<usize> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(4..10)).collect();
                let mask = ConstraintMask::from_ids(10, tgt.iter().copied().chain([rng.gen_range(4..10), rng.gen_range(4..10)]));
                TrainExample::new(src, &tgt, Some(mask))
            })
            .collect();
        let (_, grads) = backward(&p, &batch, 0.6).map_err(|e| e.to_string())?;
        let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|t| (t.name, t.data.to_vec())).collect();
        for (ti, (name, g)) in analytic.iter().enumerate() {
            tensors += 1;
            let (mut diff, mut gn, mut fdn) = (0.0f64, 0.0f64, 0.0f64);
            for i in 0..g.len() {
                let orig = p.tensors()[ti].data[i];
                p.tensors_mut()[ti].1[i] = orig + h;
                let up = batch_loss(&p, &batch, 0.6).unwrap();
                p.tensors_mut()[ti].1[i] = orig - h;
                let down = batch_loss(&p, &batch, 0.6).unwrap();
                p.tensors_mut()[ti].1[i] = orig;
                let fd = (up - down) / (2.0 * h);
                diff += (fd - g[i]).powi(2);
                gn += g[i].powi(2);
                fdn += fd.powi(2);
            }
            let (diff, gn, fdn) = (diff.sqrt(), gn.sqrt(), fdn.sqrt());
            if gn < 1e-12 && fdn < 1e-8 {
                // the loss is invariant to this tensor (attention key biases)
                zero_tensors.insert(name.clone());
                continue;
            }
            let rel = diff / gn.max(fdn);
            check(rel < 1e-4, format!("seed {seed} {name}: relative error {rel:e}"))?;
            worst = worst.max(rel);
        }
    }
    Ok(format!(
        "{tensors} tensor checks over 5 seeds, every entry; max relative error {worst:.1e}; {} tensors with identically zero gradient ({})",
        zero_tensors.len(),
        zero_tensors.into_iter().collect::<Vec<_>>().join(", ")
    ))
}

// ---------------------------------------------------------------- 4

fn loss_contracts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_ce = 0.0f64;
    let mut worst_affine = 0.0f64;
    for _ in 0..100 {
        let v = 12;
        let t = rng.gen_range(1..6);
        let logits = Array2::from_shape_fn((t, v), |_| rng.gen_range(-6.0..6.0));
        let gold: Vec<usize> = (0..t).map(|_| rng.gen_range(4..v)).collect();
        let mask = ConstraintMask::from_ids(v, (4..v).filter(|_| rng.gen_bool(0.4)).chain(gold.iter().copied()));
        let ce = gold.iter().enumerate().map(|(i, &g)| -log_softmax(&logits.row(i).to_vec())[g]).sum::<f64>() / t as f64;
        let l1 = candidate_smoothed_loss(logits.view(), &gold, Some(&mask), 1.0).unwrap();
        worst_ce = worst_ce.max((l1 - ce).abs());
        let f = |a: f64| candidate_smoothed_loss(logits.view(), &gold, Some(&mask), a).unwrap();
        let (a, b, c) = (0.2, 0.55, 0.9);
        // collinearity of (a, f(a)), (b, f(b)), (c, f(c))
        let area = (b - a) * (f(c) - f(a)) - (c - a) * (f(b) - f(a));
        worst_affine = worst_affine.max(area.abs());
    }
    // gold g=4, candidates 5 and 6, one outside word 7; probabilities .4/.3/.2/.1
    let mask = ConstraintMask::from_ids(8, [4, 5, 6]);
    let mut row = vec![f64::NEG_INFINITY; 4];
    row.extend([0.4f64.ln(), 0.3f64.ln(), 0.2f64.ln(), 0.1f64.ln()]);
    let logits = Array2::from_shape_vec((1, 8), row).unwrap();
    let worked = candidate_smoothed_loss(logits.view(), &[4], Some(&mask), 0.6).unwrap();
    // 1.1125 is this expression rounded to four places
    let exact = -(0.6 * 0.4f64.ln() + 0.2 * 0.3f64.ln() + 0.2 * 0.2f64.ln());
    let detail = format!(
        "|L(a=1) - CE| <= {worst_ce:.1e}; worked example {worked:.7} (closed form {exact:.7}, |diff| {:.1e}); collinearity residual <= {worst_affine:.1e}",
        (worked - exact).abs()
    );
    check(
        worst_ce < 1e-12 && (worked - exact).abs() < 1e-6 && (exact - 1.1125).abs() < 5e-5 && worst_affine < 1e-9,
        detail.clone(),
    )?;
    Ok(detail)
}

// ---------------------------------------------------------------- 5

fn constrained_softmax_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_sum, mut worst_full) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let v = rng.gen_range(5..40);
        let logits: Vec<f64> = (0..v).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let mask = ConstraintMask::from_ids(v, (0..v).filter(|_| rng.gen_bool(0.3)));
        let p = constrained_softmax(&logits, &mask);
        for (i, &pi) in p.iter().enumerate() {
            check(mask.allows(i) || pi == 0.0, format!("mass {pi} outside the mask at {i}"))?;
        }
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
        let full = constrained_softmax(&logits, &ConstraintMask::full(v));
        let plain = softmax(&logits);
        worst_full = worst_full.max(full.iter().zip(&plain).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let detail = format!("outside mass exactly 0; |sum - 1| <= {worst_sum:.1e}; full mask vs softmax <= {worst_full:.1e}");
    check(worst_sum < 1e-9 && worst_full < 1e-12, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 6

fn decode_params(vocab: usize, seed: u64) -> TransformerParams {
    let cfg = ModelConfig {
        layers: 2,
        d_model: 16,
        heads: 2,
        d_ff: 32,
        src_vocab: 9,
        tgt_vocab: vocab,
        max_len: 8,
    };
    let mut p = TransformerParams::init(cfg, seed).unwrap();
    // sharpen the output layer so different hypotheses really compete
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    p.out_bias.iter_mut().for_each(|b| *b = rng.gen_range(-2.0..2.0));
    p
}

/// Scores every output of length <= max_len by brute force.
fn exhaustive(p: &TransformerParams, src: &[usize], cfg: &DecodeConfig, mask: Option<&ConstraintMask>) -> Hypothesis {
    let step = |logits: &[f64]| {
        let mut lp = match mask {
            Some(m) => log_constrained_softmax_weighted(logits, m, None),
            None => log_softmax(logits),
        };
        lp[PAD] = f64::NEG_INFINITY;
        lp[BOS] = f64::NEG_INFINITY;
        lp
    };
    let lp_norm = |len: usize| ((5.0 + len as f64) / 6.0).powf(cfg.length_penalty);
    let v = p.config.tgt_vocab;
    let mut best: Option<Hypothesis> = None;
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    while let Some(seq) = frontier.pop() {
        let mut prefix = vec![BOS];
        prefix.extend(&seq);
        let logits = p.forward(src, &prefix).unwrap();
        let mut lp = 0.0;
        for (t, &tok) in seq.iter().enumerate() {
            lp += step(logits.row(t).as_slice().unwrap())[tok];
        }
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let last = step(logits.row(seq.len()).as_slice().unwrap());
        let (total, forced) = if seq.len() == cfg.max_len {
            (lp, true)
        } else {
            for tok in 0..v {
                if tok != EOS {
                    let mut s = seq.clone();
                    s.push(tok);
                    frontier.push(s);
                }
            }
            (lp + last[EOS], false)
        };
        let score = total / lp_norm(seq.len() + 1);
        if best.as_ref().map_or(true, |b| score > b.score) {
            best = Some(Hypothesis {
                tokens: seq,
                log_prob: total,
                score,
                forced_eos: forced,
            });
        }
    }
    best.unwrap()
}

fn decoding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut greedy_cases = 0;
    let mut exhaustive_cases = 0;
    let (mut emitted, mut inside) = (0usize, 0usize);
    for seed in 0..20u64 {
        let src: Vec<usize> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(4..9)).collect();

        let p = decode_params(9, seed);
        let one = DecodeConfig {
            beam_size: 1,
            max_len: 6,
            ..Default::default()
        };
        let g = greedy_decode(&p, &src, &one, None).unwrap();
        let b = beam_search(&p, &src, &one, None).unwrap();
        check(g.tokens == b.tokens, format!("seed {seed}: greedy {:?} vs beam=1 {:?}", g.tokens, b.tokens))?;
        greedy_cases += 1;

        // 5-token vocabulary, outputs up to 3 tokens: beam wide enough to keep every prefix
        let p5 = decode_params(5, seed);
        let cfg = DecodeConfig {
            beam_size: 125,
            max_len: 3,
            ..Default::default()
        };
        for mask in [None, Some(ConstraintMask::from_ids(5, [4]))] {
            let want = exhaustive(&p5, &src, &cfg, mask.as_ref());
            let got = beam_search(&p5, &src, &cfg, mask.as_ref()).unwrap();
            check(
                got.tokens == want.tokens && (got.score - want.score).abs() < 1e-9,
                format!("seed {seed}: beam {:?} vs exhaustive {:?}", got.tokens, want.tokens),
            )?;
            exhaustive_cases += 1;
        }

        let mask = ConstraintMask::from_ids(9, (4..9).filter(|_| rng.gen_bool(0.4)).chain([4 + seed as usize % 5]));
        for beam_size in [1, 4] {
            let cfg = DecodeConfig {
                beam_size,
                max_len: 6,
                ..Default::default()
            };
            let h = beam_search(&p, &src, &cfg, Some(&mask)).unwrap();
            emitted += h.tokens.len();
            inside += h.tokens.iter().filter(|&&t| mask.allows(t)).count();
        }
    }
    let detail = format!(
        "{greedy_cases} beam=1/greedy matches; {exhaustive_cases} exhaustive matches (|V|=5, max_len 3); {inside}/{emitted} masked tokens inside the mask"
    );
    check(inside == emitted && emitted > 0, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn metric_oracle(ranked: &[String], grades: &BTreeMap<String, u32>, k: usize) -> (f64, f64, f64) {
    let rel: Vec<&String> = grades.iter().filter(|(_, &g)| g > 0).map(|(d, _)| d).collect();
    let found = rel.iter().filter(|d| ranked.iter().take(k).any(|x| x == **d)).count();
    let recall = 100.0 * found as f64 / rel.len() as f64;
    let mut hits = 0.0;
    let mut ap = 0.0;
    for (i, d) in ranked.iter().enumerate() {
        if rel.contains(&d) {
            hits += 1.0;
            ap += hits / (i + 1) as f64;
        }
    }
    ap /= rel.len() as f64;
    let gain = |g: f64| 2f64.powf(g) - 1.0;
    let dcg: f64 = ranked
        .iter()
        .take(10)
        .enumerate()
        .map(|(i, d)| gain(*grades.get(d).unwrap_or(&0) as f64) / ((i + 2) as f64).log2())
        .sum();
    let mut ideal: Vec<u32> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(10).enumerate().map(|(i, &g)| gain(g as f64) / ((i + 2) as f64).log2()).sum();
    (recall, ap, dcg / idcg)
}

fn metrics() -> Outcome {
    let sents: Vec<Vec<String>> = ["red shoes women", "phone case", "the cat sat on the mat today"]
        .iter()
        .map(|s| tokenize(s, Lang::Target).tokens)
        .collect();
    let self_bleu = bleu(&sents, &sents).map_err(|e| e.to_string())?;
    check((self_bleu - 100.0).abs() < 1e-9, format!("BLEU(self) = {self_bleu}"))?;

    let run: RunResults = [("q".to_string(), ["a", "x", "b", "y"].iter().map(|s| s.to_string()).collect())].into();
    let mut j = RelevanceJudgments::default();
    j.insert("q", "a", 1);
    j.insert("q", "b", 1);
    let map = mean_average_precision(&run, &j).unwrap().value;
    let ndcg = ndcg_at_10(&run, &j).unwrap().value;
    check((map - 0.8333).abs() < 1e-4, format!("MAP hand case {map}"))?;
    check((ndcg - 0.9198).abs() < 1e-4, format!("NDCG@10 hand case {ndcg}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let pool: Vec<String> = (0..25).map(|i| format!("d{i}")).collect();
    for _ in 0..100 {
        let mut j = RelevanceJudgments::default();
        let n = rng.gen_range(1..10);
        for d in pool.choose_multiple(&mut rng, n) {
            j.insert("q", d.clone(), rng.gen_range(0..4));
        }
        j.insert("q", pool.choose(&mut rng).unwrap().clone(), rng.gen_range(1..4));
        let mut ranked = pool.clone();
        ranked.shuffle(&mut rng);
        ranked.truncate(rng.gen_range(0..=25));
        let k = rng.gen_range(1..=25);
        let run: RunResults = [("q".to_string(), ranked.clone())].into();
        let (r, ap, nd) = metric_oracle(&ranked, &j.grades["q"], k);
        worst = worst
            .max((recall_at_k(&run, &j, k).unwrap().value - r).abs())
            .max((mean_average_precision(&run, &j).unwrap().value - ap).abs())
            .max((ndcg_at_10(&run, &j).unwrap().value - nd).abs());
    }
    let detail = format!("BLEU(self) = {self_bleu:.2}; MAP {map:.4}; NDCG@10 {ndcg:.4}; oracle max |diff| {worst:.1e}");
    check(worst < 1e-9, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 8

fn ablation_grid(report: &ExperimentReport, took: Duration) -> Outcome {
    let rows = report.rows.len();
    let complete = report.rows.iter().filter(|r| r.is_complete()).count();
    let mut missing = Vec::new();
    for m in [5, 10, 20] {
        for mode in Mode::ALL {
            if report.row(m, mode).is_none() {
                missing.push(format!("M={m} {}", mode.name()));
            }
        }
    }
    let detail = format!("{rows} rows, {complete} complete, runtime {:.0?}", took);
    check(rows == 13 && complete == 13 && missing.is_empty() && took < Duration::from_secs(15 * 60), format!("{detail}; missing {missing:?}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 9

fn directional(reports: &[ExperimentReport]) -> Outcome {
    let mut lines = Vec::new();
    let mut recall_wins = 0;
    let (mut base_bleu, mut tc_bleu) = (0.0, 0.0);
    for r in reports {
        let base = r.baseline().ok_or("no baseline row")?;
        let tc = r.row(10, Mode::Both).ok_or("no M=10 both row")?;
        let (bb, br) = (base.bleu.ok_or("baseline BLEU missing")?, base.recall.ok_or("baseline recall missing")?.value);
        let (tb, tr) = (tc.bleu.ok_or("TC BLEU missing")?, tc.recall.ok_or("TC recall missing")?.value);
        if tr >= br {
            recall_wins += 1;
        }
        base_bleu += bb;
        tc_bleu += tb;
        lines.push(format!("seed {}: BLEU {bb:.2} -> {tb:.2}, R@{} {br:.2} -> {tr:.2}", r.seed, r.recall_k));
    }
    let n = reports.len() as f64;
    let (base_bleu, tc_bleu) = (base_bleu / n, tc_bleu / n);
    for l in &lines {
        println!("        {l}");
    }
    let detail = format!(
        "recall >= baseline on {recall_wins}/{} seeds; mean BLEU {base_bleu:.2} (baseline) vs {tc_bleu:.2} (+TC, M=10, both), delta {:+.2}",
        reports.len(),
        tc_bleu - base_bleu
    );
    check(reports.len() == 5 && recall_wins >= 4 && (tc_bleu - base_bleu).abs() <= 2.0, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 10

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn reproducibility() -> Outcome {
    let mut config = ExperimentConfig {
        seed: 3,
        grid_m: vec![5],
        headline_m: 5,
        ..Default::default()
    };
    config.train.max_steps = 120;
    config.world.test_queries = 60;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&config, Some(a.path())).map_err(|e| e.to_string())?;
    run_experiment(&config, Some(b.path())).map_err(|e| e.to_string())?;
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    check(fa.keys().eq(fb.keys()), "different file sets")?;
    let differing: Vec<String> = fa.iter().filter(|(k, v)| fb[*k] != **v).map(|(k, _)| k.display().to_string()).collect();
    let kinds = |ext: &str| fa.keys().filter(|k| k.to_string_lossy().ends_with(ext)).count();
    check(kinds(".ckpt") >= 2 && kinds(".tsv") >= 3 && fa.contains_key(Path::new("report.json")), "expected artifacts missing")?;
    check(differing.is_empty(), format!("differing files: {differing:?}"))?;
    Ok(format!(
        "{} files byte-identical across two runs ({} checkpoints, constraint tables, translations, reports)",
        fa.len(),
        kinds(".ckpt")
    ))
}

// ----------------------------------------------------------------

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(d) => {
            println!("criterion {n:>2} PASS  {name}: {d} [{secs:.1}s]");
            true
        }
        Err(d) => {
            println!("criterion {n:>2} FAIL  {name}: {d} [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    // `cargo test -- --list` and filters: this binary has a single logical test
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut ok = true;
    ok &= run(1, "EM alignment recovery", em_recovery);
    ok &= run(2, "TF-IDF oracle equivalence", tfidf_oracle_equivalence);
    ok &= run(3, "gradient correctness", gradient_check);
    ok &= run(4, "loss contracts", loss_contracts);
    ok &= run(5, "constrained softmax", constrained_softmax_contract);
    ok &= run(6, "decoding", decoding);
    ok &= run(7, "metrics", metrics);

    // the full grid for seed 1 also supplies seed 1 of the directional check
    let mut reports = Vec::new();
    let mut grid_time = Duration::ZERO;
    ok &= run(8, "ablation harness (13-row grid)", || {
        let start = Instant::now();
        let report = run_experiment(&ExperimentConfig::default(), None).map_err(|e| e.to_string())?;
        grid_time = start.elapsed();
        let out = ablation_grid(&report, grid_time);
        reports.push(report);
        out
    });
    ok &= run(9, "directional end-to-end (5 seeds)", || {
        for seed in 2..=5 {
            let config = ExperimentConfig {
                seed,
                grid_m: vec![10],
                ..Default::default()
            };
            reports.push(run_experiment(&config, None).map_err(|e| e.to_string())?);
        }
        directional(&reports)
    });
    ok &= run(10, "reproducibility", reproducibility);

    if !ok {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
