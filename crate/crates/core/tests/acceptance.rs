//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.
//!
//! The shared fixture pretrains the reference model once (a couple of
//! minutes on one core) and runs every editor over the evaluation benchmark.

use std::collections::HashMap;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use codedit::benchdata::{EditInstance, Vocab};
use codedit::editors::{
    estimate_key_covariance, ftl_edit, rome_edit, sample_key_prompts, target_nll, FtlConfig, KeyCovariance, RomeConfig,
};
use codedit::grace::{contrastive_loss, ContrastiveBatch, EncoderTraining, EncoderWeights, KeyPair};
use codedit::harness::{
    analyze_distances, build_lab, ordering_accuracy, report_jsonl, rows_csv, run_edits, write_report, EditorKind,
    EditorSetup, EvalReport, KeyPipeline, Lab, LabOptions, Protocol, RunOptions, COVARIANCE_PROMPTS,
    COVARIANCE_RIDGE,
};
use codedit::metrics::{bleu, exact_match, fluency_entropy, rouge_l, MetricRow};
use codedit::numcore::{grad_check, Matrix};
use codedit::toymodel::{cross_entropy, teacher_forcing, BackwardScope, KeyMode, ModelConfig, Substitution, ToyDecoder};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    lab: Lab,
    layer: usize,
    mean_encoder: EncoderWeights,
    last_encoder: EncoderWeights,
    covariance: KeyCovariance,
    runs: HashMap<EditorKind, EvalReport>,
    grace_elapsed: Duration,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let lab = build_lab(LabOptions::default()).expect("lab builds");
        let layer = lab.model.config.grace_layer();
        let hyper = EncoderTraining::default();
        let mean_encoder = lab.train_encoder(layer, KeyMode::Mean, hyper).expect("mean encoder").weights;
        let last_encoder = lab.train_encoder(layer, KeyMode::Last, hyper).expect("last encoder").weights;
        let sequences: Vec<_> = lab.pool().iter().map(|p| p.tokens()).collect();
        let prompts = sample_key_prompts(&sequences, COVARIANCE_PROMPTS, 0);
        let covariance =
            estimate_key_covariance(&lab.model, &prompts, lab.model.config.rome_layer(), COVARIANCE_RIDGE).unwrap();
        let opts = RunOptions::default();
        let mut runs = HashMap::new();
        let mut grace_elapsed = Duration::ZERO;
        for kind in [EditorKind::Grace, EditorKind::Agrace, EditorKind::AgraceWoCl, EditorKind::AgraceWoMean] {
            let mut setup = EditorSetup::new(kind, &lab.model);
            match kind {
                EditorKind::Agrace => setup = setup.with_encoder(mean_encoder.clone()),
                EditorKind::AgraceWoMean => setup = setup.with_encoder(last_encoder.clone()),
                _ => {}
            }
            let t = Instant::now();
            runs.insert(kind, run_edits(&lab.model, &lab.eval, &setup, &opts).unwrap());
            if kind == EditorKind::Grace {
                grace_elapsed = t.elapsed();
            }
        }
        Fixture { lab, layer, mean_encoder, last_encoder, covariance, runs, grace_elapsed }
    })
}

fn verdict(name: &str, ok: bool, detail: String) {
    // written to the raw handle so the line shows even when output is captured
    let line = format!("{} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "{name}: {detail}");
}

fn agg(kind: EditorKind) -> codedit::harness::Aggregate {
    fixture().runs[&kind].aggregate()
}

#[test]
fn criterion_1_grace_effectiveness() {
    let f = fixture();
    let v = Vocab::standard();
    let short = f.lab.eval.iter().all(|i| v.prompt(&i.x).len() <= 16 && v.encode(&i.y).len() <= 8);
    let a = agg(EditorKind::Grace);
    let ok = short && f.lab.eval.len() == 50 && a.n_failed == 0 && a.effectiveness.em >= 0.95
        && f.grace_elapsed <= Duration::from_secs(300);
    verdict(
        "grace effectiveness",
        ok,
        format!(
            "EM {:.2} over {} instances in {:.1?} (lengths within bounds: {short})",
            a.effectiveness.em, a.n_ok, f.grace_elapsed
        ),
    );
}

#[test]
fn criterion_2_grace_specificity() {
    let f = fixture();
    let v = Vocab::standard();
    let (mut same, mut total) = (0, 0);
    for inst in &f.lab.eval {
        let mut book = codedit::grace::Codebook::new(f.layer, KeyMode::Last, None);
        codedit::grace::grace_edit(&mut book, &f.lab.model, inst, Default::default()).unwrap();
        for n in &inst.neighbors {
            let out = codedit::grace::edited_generate(&f.lab.model, &book, &v.prompt(&n.x_u), 16).unwrap();
            same += usize::from(v.decode(&out) == n.y_orig);
            total += 1;
        }
    }
    let rate = same as f64 / total as f64;
    verdict("grace specificity", rate >= 0.95, format!("{same}/{total} neighbor outputs byte-identical ({rate:.3})"));
}

#[test]
fn criterion_3_agrace_generalization() {
    let grace = agg(EditorKind::Grace).generalization.em;
    let agrace = agg(EditorKind::Agrace).generalization.em;
    let wo_cl = agg(EditorKind::AgraceWoCl).generalization.em;
    let wo_mean = agg(EditorKind::AgraceWoMean).generalization.em;
    let ok = grace <= 0.10 && agrace >= 0.60 && wo_cl < agrace && wo_mean < agrace;
    verdict(
        "a-grace generalization",
        ok,
        format!("grace {grace:.2}, a-grace {agrace:.2}, w/o CL {wo_cl:.2}, w/o mean {wo_mean:.2}"),
    );
}

#[test]
fn criterion_4_distance_separation() {
    let f = fixture();
    let m = &f.lab.model;
    let raw = analyze_distances(m, &f.lab.eval, f.layer, KeyPipeline::RawLast, None).unwrap();
    let enc = analyze_distances(m, &f.lab.eval, f.layer, KeyPipeline::EncodedMean, Some(&f.mean_encoder)).unwrap();
    let enc_last =
        analyze_distances(m, &f.lab.eval, f.layer, KeyPipeline::EncodedLast, Some(&f.last_encoder)).unwrap();
    let (r, e) = (ordering_accuracy(&raw), ordering_accuracy(&enc));
    let finite = raw.iter().chain(&enc).all(|d| d.d_gri.is_finite() && d.d_sri.is_finite() && d.d_gri >= 0.0);
    verdict(
        "distance separation",
        r <= 0.70 && e >= 0.90 && finite && raw.len() == f.lab.eval.len(),
        format!("raw-last {r:.3}, encoded-mean {e:.3} (encoded-last {:.3})", ordering_accuracy(&enc_last)),
    );
}

#[test]
fn criterion_5_ftl_constraint() {
    let f = fixture();
    let m = &f.lab.model;
    let cfg = FtlConfig::for_model(m);
    let target = format!("blocks.{}.w_down", cfg.edit_layer);
    let mut worst = 0.0f64;
    let mut others_identical = true;
    let mut improved = 0;
    for inst in &f.lab.eval {
        let out = ftl_edit(m, inst, cfg).unwrap();
        for ((name, before), (_, after)) in m.weights.named().into_iter().zip(out.model.weights.named()) {
            if name == target {
                worst = worst.max(before.max_abs_diff(after));
            } else {
                others_identical &= before.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            }
        }
        improved += usize::from(out.loss < out.initial_loss);
    }
    verdict(
        "ft-l constraint",
        worst <= 1e-4 && others_identical,
        format!("max |W'-W| = {worst:.3e}, other tensors identical: {others_identical}, NLL reduced on {improved}/50"),
    );
}

fn singular_values(m: &Matrix) -> Vec<f64> {
    let dm = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let mut s: Vec<f64> = dm.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

#[test]
fn criterion_6_rome_closed_form() {
    let f = fixture();
    let m = &f.lab.model;
    let cfg = RomeConfig::for_model(m);
    let (mut worst_resid, mut worst_rank_ratio, mut improved) = (0.0f64, 0.0f64, 0);
    for inst in &f.lab.eval {
        let out = rome_edit(m, inst, &f.covariance, cfg).unwrap();
        let w_new = &out.model.weights.blocks[cfg.layer].w_down;
        let w_old = &m.weights.blocks[cfg.layer].w_down;
        let got = w_new.vec_matmul(&out.key);
        let resid: f64 = got.iter().zip(&out.value).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let vnorm: f64 = out.value.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst_resid = worst_resid.max(resid / vnorm);
        let mut diff = w_new.clone();
        diff.sub_assign(w_old);
        let s = singular_values(&diff);
        worst_rank_ratio = worst_rank_ratio.max(s[1] / s[0]);
        improved += usize::from(target_nll(&out.model, inst).unwrap() < target_nll(m, inst).unwrap());
    }
    let frac = improved as f64 / f.lab.eval.len() as f64;
    verdict(
        "rome closed form",
        worst_resid <= 1e-6 && worst_rank_ratio <= 1e-9 && frac >= 0.9,
        format!("max residual {worst_resid:.2e}, max s2/s1 {worst_rank_ratio:.2e}, NLL reduced on {frac:.2}"),
    );
}

fn tiny(seed: u64) -> ToyDecoder {
    ToyDecoder::new(ModelConfig {
        vocab_size: 20,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ffn: 16,
        max_seq_len: 12,
        rng_seed: seed,
    })
    .unwrap()
}

#[test]
fn criterion_7_gradient_correctness() {
    let mut worst_value = 0.0f64;
    let mut worst_contrastive = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = tiny(seed);
        let prompt: Vec<u32> = (0..4).map(|_| rng.gen_range(1..20)).collect();
        let target: Vec<u32> = (0..3).map(|_| rng.gen_range(0..20)).collect();
        let (seq, targets) = teacher_forcing(&(prompt.clone(), target));
        let layer = (seed % 2) as usize;
        let start = prompt.len() - 1;
        let value: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |v: &[f64]| {
            let sub = Substitution { layer, start, end: None, value: v };
            let cache = model.forward(&seq, Some(&sub)).unwrap();
            let (loss, dl) = cross_entropy(&cache.logits, &targets);
            let back = model.backward(&cache, &dl, BackwardScope { lowest_layer: layer, params: false });
            let d = back.d_down_out[layer].as_ref().unwrap();
            let mut g = vec![0.0; v.len()];
            for t in start..seq.len() {
                g.iter_mut().zip(d.row(t)).for_each(|(a, b)| *a += b);
            }
            (loss, g)
        };
        worst_value = worst_value.max(grad_check(objective, &value, 1e-5).unwrap().max_rel_err);

        let enc = EncoderWeights::new(12, 5, seed).unwrap();
        let pairs: Vec<KeyPair> = (0..6)
            .map(|i| KeyPair {
                anchor: (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                other: (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                y: (i % 2) as u8,
            })
            .collect();
        let batch = ContrastiveBatch { pairs, margin: if seed % 2 == 0 { 1.3 } else { 2.5 } };
        let r = grad_check(
            |theta| {
                let (l, g) = contrastive_loss(&enc.from_flat(theta), &batch).unwrap();
                (l, [g.w1.data(), g.w2.data()].concat())
            },
            &enc.to_flat(),
            1e-5,
        )
        .unwrap();
        worst_contrastive = worst_contrastive.max(r.max_rel_err);
    }
    verdict(
        "gradient correctness",
        worst_value <= 1e-4 && worst_contrastive <= 1e-4,
        format!("value objective {worst_value:.2e}, contrastive loss {worst_contrastive:.2e} over 20 seeds"),
    );
}

fn count_occurrences(seq: &[String], gram: &[String]) -> usize {
    (0..seq.len()).filter(|&i| i + gram.len() <= seq.len() && seq[i..i + gram.len()] == *gram).count()
}

fn bleu_oracle(c: &[String], r: &[String]) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    let mut prod = 1.0;
    for n in 1..=4 {
        let mut seen: Vec<&[String]> = Vec::new();
        let mut clipped = 0;
        for i in 0..c.len().saturating_sub(n - 1) {
            let g = &c[i..i + n];
            if seen.contains(&g) {
                continue;
            }
            seen.push(g);
            clipped += count_occurrences(c, g).min(count_occurrences(r, g));
        }
        let total = c.len().saturating_sub(n - 1);
        prod *= (clipped as f64 + 1.0) / (total as f64 + 1.0);
    }
    let bp = if c.len() < r.len() { (1.0 - r.len() as f64 / c.len() as f64).exp() } else { 1.0 };
    100.0 * bp * prod.powf(0.25)
}

fn lcs_oracle(a: &[String], b: &[String], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    if let Some(&v) = memo.get(&(a.len(), b.len())) {
        return v;
    }
    let v = if a[0] == b[0] {
        1 + lcs_oracle(&a[1..], &b[1..], memo)
    } else {
        lcs_oracle(&a[1..], b, memo).max(lcs_oracle(a, &b[1..], memo))
    };
    memo.insert((a.len(), b.len()), v);
    v
}

fn rouge_oracle(c: &[String], r: &[String]) -> f64 {
    let l = lcs_oracle(c, r, &mut HashMap::new()) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, rc) = (l / c.len() as f64, l / r.len() as f64);
    100.0 * 2.0 * p * rc / (p + rc)
}

fn entropy_oracle(t: &[String], n: usize) -> f64 {
    let grams: Vec<&[String]> = t.windows(n).collect();
    let total = grams.len() as f64;
    let mut done: Vec<&[String]> = Vec::new();
    let mut h = 0.0;
    for g in &grams {
        if done.contains(g) {
            continue;
        }
        done.push(g);
        let f = grams.iter().filter(|x| *x == g).count() as f64 / total;
        h -= f * f.log2();
    }
    h
}

#[test]
fn criterion_8_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let words = ["a", "b", "c", "d", "e", "(", ")", "="];
    let (mut worst, mut implication_ok, mut em_pairs) = (0.0f64, true, 0);
    for i in 0..100 {
        let mut sample = |len: usize| -> Vec<String> { (0..len).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect() };
        let r = sample(rng_len(i, 3, 12));
        let c = if i % 10 == 0 { r.clone() } else { sample(rng_len(i * 7 + 1, 3, 12)) };
        worst = worst.max((bleu(&c, &r) - bleu_oracle(&c, &r)).abs());
        worst = worst.max((rouge_l(&c, &r) - rouge_oracle(&c, &r)).abs());
        let flu = fluency_entropy(&c).unwrap();
        worst = worst.max((flu - (entropy_oracle(&c, 2) / 3.0 + 2.0 * entropy_oracle(&c, 3) / 3.0)).abs());
        let (cs, rs) = (c.join(" "), r.join(" "));
        if exact_match(&cs, &rs) == 1 {
            em_pairs += 1;
            let row = MetricRow::score(&cs, &rs);
            implication_ok &= row.bleu == 100.0 && row.rouge_l == 100.0 && bleu(&c, &r) == 100.0 && rouge_l(&c, &r) == 100.0;
        }
    }
    verdict(
        "metric oracles",
        worst <= 1e-9 && implication_ok && em_pairs >= 10,
        format!("max deviation {worst:.2e}; EM implication held on {em_pairs} matching pairs"),
    );
}

fn rng_len(i: usize, lo: usize, hi: usize) -> usize {
    lo + (i * 2654435761) % (hi - lo + 1)
}

fn grace_subset_run(instances: &[EditInstance]) -> EvalReport {
    let f = fixture();
    let setup = EditorSetup::new(EditorKind::Agrace, &f.lab.model).with_encoder(f.mean_encoder.clone());
    run_edits(&f.lab.model, instances, &setup, &RunOptions { seed: 11, ..Default::default() }).unwrap()
}

#[test]
fn criterion_9_harness_determinism() {
    let f = fixture();
    let subset = &f.lab.eval[..10];
    let (a, b) = (grace_subset_run(subset), grace_subset_run(subset));
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_report(&a, da.path(), "run").unwrap();
    write_report(&b, db.path(), "run").unwrap();
    let identical = ["run.jsonl", "run.csv", "run.txt"]
        .iter()
        .all(|n| std::fs::read(da.path().join(n)).unwrap() == std::fs::read(db.path().join(n)).unwrap());

    let mut rows_positive = true;
    for r in f.runs.values().chain([&a, &b]) {
        rows_positive &= r.rows.iter().all(|row| row.edit_time_ms > 0.0 && row.peak_mem_bytes > 0);
    }

    let mut shuffled = subset.to_vec();
    shuffled.reverse();
    shuffled.swap(2, 7);
    let p = grace_subset_run(&shuffled);
    let by_id: HashMap<&str, _> = p.rows.iter().map(|r| (r.id.as_str(), (&r.scores, r.peak_mem_bytes))).collect();
    let invariant = a.rows.iter().all(|r| by_id[r.id.as_str()] == (&r.scores, r.peak_mem_bytes));

    let mut seq = RunOptions { seed: 11, ..Default::default() };
    seq.protocol = Protocol::Sequential;
    let setup = EditorSetup::new(EditorKind::Grace, &f.lab.model);
    let s1 = run_edits(&f.lab.model, subset, &setup, &seq).unwrap();
    let s2 = run_edits(&f.lab.model, subset, &setup, &seq).unwrap();
    let seq_identical = report_jsonl(&s1) == report_jsonl(&s2) && rows_csv(&s1) == rows_csv(&s2);

    verdict(
        "harness determinism",
        identical && rows_positive && invariant && seq_identical,
        format!(
            "byte-identical reports {identical}, sequential {seq_identical}, positive accounting {rows_positive}, permutation-invariant {invariant}"
        ),
    );
}
