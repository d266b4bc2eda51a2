//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! `ACCEPTANCE_ONLY=1,5` runs a subset.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use histodistill::bench::{prepare, run_lambdas, summarize_runs, BenchConfig, BenchRun};
use histodistill::cli::{self, ExperimentConfig, SweepArgs, SynthArgs};
use histodistill::datamodel::{
    assign_bin, synth_generate, BinEdges, EmbeddingBag, Involvement, IsupGrade, SynthSpec, TeacherBank,
    TeacherBankEntry,
};
use histodistill::distill::{
    clip_loss, clip_loss_grad, negative_grade, sample_triplet, triplet_loss_grad, triplet_loss_vec, Temperature,
};
use histodistill::eval::{auroc, sens_at_spec, wilcoxon_signed_rank_exact};
use histodistill::nn::gradcheck::{check_params, numeric_grad_vec, relative_error, DEFAULT_STEP};
use histodistill::nn::{ParamSet, PoolDims};
use histodistill::rng::SeedTree;
use histodistill::student::{
    select_bag, seg_loss_logits, tokenize, StudentConfig, StudentModel, TokenGrid, Upsample,
};
use histodistill::teacher::{export_bank, TeacherModel};
use histodistill::trainloop::OptimConfig;
use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

const GRAD_FLOOR: f64 = 1e-6;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

fn unit(d: usize, rng: &mut impl Rng) -> Array1<f64> {
    let v: Array1<f64> = (0..d).map(|_| normal(rng)).collect();
    &v / v.dot(&v).sqrt()
}

fn max_rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, GRAD_FLOOR))
        .fold(0.0, f64::max)
}

fn grade(v: u8) -> IsupGrade {
    IsupGrade::new(v).unwrap()
}

// ---------------------------------------------------------------- 1

fn grad_triplet(instances: u64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut seed = 0u64;
    while done < instances {
        seed += 1;
        let mut rng = SeedTree::new(seed).child("triplet").rng();
        let d = 2 + (seed % 7) as usize;
        let (a, p, n) = (unit(d, &mut rng), unit(d, &mut rng), unit(d, &mut rng));
        let margin = rng.random_range(0.5..2.5);
        let g = triplet_loss_grad(a.view(), p.view(), n.view(), margin);
        // keep clear of the hinge, where the loss is not differentiable
        if g.loss < 1e-3 {
            continue;
        }
        let x: Vec<f64> = a.iter().chain(p.iter()).chain(n.iter()).copied().collect();
        let f = |x: &[f64]| {
            let v = |k: usize| Array1::from(x[k * d..(k + 1) * d].to_vec());
            triplet_loss_vec(v(0).view(), v(1).view(), v(2).view(), margin)
        };
        let num = numeric_grad_vec(&x, DEFAULT_STEP, f);
        let ana: Vec<f64> = g.anchor.iter().chain(g.positive.iter()).chain(g.negative.iter()).copied().collect();
        worst = worst.max(max_rel(&ana, &num));
        done += 1;
    }
    Ok(worst)
}

fn grad_clip(instances: u64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = SeedTree::new(seed).child("clip").rng();
        let b = 2 + (seed % 5) as usize;
        let d = 3 + (seed % 4) as usize;
        let tau = Temperature::new(rng.random_range(0.1..1.0)).unwrap();
        let mut us = Array2::zeros((b, d));
        let mut hist = Array2::zeros((b, d));
        for i in 0..b {
            us.row_mut(i).assign(&unit(d, &mut rng));
            hist.row_mut(i).assign(&unit(d, &mut rng));
        }
        let (_, dus, dhist) = clip_loss_grad(us.view(), hist.view(), tau).map_err(|e| e.to_string())?;
        let x: Vec<f64> = us.iter().chain(hist.iter()).copied().collect();
        let f = |x: &[f64]| {
            let u = Array2::from_shape_vec((b, d), x[..b * d].to_vec()).unwrap();
            let h = Array2::from_shape_vec((b, d), x[b * d..].to_vec()).unwrap();
            clip_loss(u.view(), h.view(), tau).unwrap()
        };
        let num = numeric_grad_vec(&x, DEFAULT_STEP, f);
        let ana: Vec<f64> = dus.iter().chain(dhist.iter()).copied().collect();
        worst = worst.max(max_rel(&ana, &num));
    }
    Ok(worst)
}

fn grad_seg(instances: u64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = SeedTree::new(seed).child("seg").rng();
        let n = 5 + (seed * 7 % 40) as usize;
        let g = grade((seed % 6) as u8);
        let inv = if g.is_cancer() {
            Involvement::new(rng.random_range(0.05..1.0)).unwrap()
        } else {
            Involvement::NONE
        };
        let logits: Vec<f64> = (0..n).map(|_| 3.0 * normal(&mut rng)).collect();
        let (_, ana) = seg_loss_logits(&logits, g, inv).map_err(|e| e.to_string())?;
        // top-k membership is piecewise constant; the finite difference
        // stays inside one piece as long as no two logits are 1e-5 apart
        let num = numeric_grad_vec(&logits, DEFAULT_STEP, |x| seg_loss_logits(x, g, inv).unwrap().0);
        worst = worst.max(max_rel(&ana, &num));
    }
    Ok(worst)
}

fn grad_teacher(instances: u64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let seeds = SeedTree::new(seed).child("teacher");
        let mut rng = seeds.child("data").rng();
        let dims = PoolDims {
            input: 3 + (seed % 4) as usize,
            projection: 4 + (seed % 3) as usize,
            attention: 3 + (seed % 2) as usize,
        };
        let model = TeacherModel::init(dims, 5, seeds.child("init"));
        let n = 1 + (seed % 6) as usize;
        let g = grade((seed % 6) as u8);
        let inv = if g.is_cancer() { Involvement::new(0.5).unwrap() } else { Involvement::NONE };
        let bag = EmbeddingBag::new(
            format!("b{seed}"),
            Array2::from_shape_fn((n, dims.input), |_| normal(&mut rng)),
            g,
            inv,
        )
        .map_err(|e| e.to_string())?;
        let weight = rng.random_range(0.5..2.0);
        let mut grads = model.zeros_like();
        model.loss_and_grad(&bag, weight, Some(&mut grads)).map_err(|e| e.to_string())?;
        let report = check_params(&model, &grads, DEFAULT_STEP, GRAD_FLOOR, |m: &TeacherModel| {
            m.loss_and_grad(&bag, weight, None).unwrap()
        });
        worst = worst.max(report.max_rel_err);
    }
    Ok(worst)
}

fn toy_student() -> StudentConfig {
    StudentConfig {
        patch: 16,
        embed_dim: 6,
        mixer_hidden: 8,
        adapter_dim: 3,
        decoder_hidden: 5,
        projection_dim: 5,
        attention_dim: 4,
        upsample: Upsample::Bilinear,
        backbone_seed: 3,
    }
}

fn band_mask(size: usize, half_width: i64) -> Array2<bool> {
    Array2::from_shape_fn((size, size), |(y, x)| (y as i64 - x as i64).abs() <= half_width)
}

fn grad_end_to_end(instances: u64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let seeds = SeedTree::new(500 + inst);
        let mut rng = seeds.child("data").rng();
        let mut cfg = toy_student();
        cfg.upsample = if inst % 2 == 0 { Upsample::Bilinear } else { Upsample::Nearest };
        let mut model = StudentModel::new(cfg, seeds.child("model")).map_err(|e| e.to_string())?;
        for a in &mut model.params.encoder.adapters {
            a.up.mapv_inplace(|_| 0.3 * normal(&mut rng));
        }
        let image = Array2::from_shape_fn((64, 64), |_| rng.random::<f64>());
        let mask = band_mask(64, 1 + (inst % 3) as i64);
        let g = grade((inst % 6) as u8);
        let inv = if g.is_cancer() {
            Involvement::new(0.2 + 0.15 * (inst % 5) as f64).unwrap()
        } else {
            Involvement::NONE
        };
        let d = model.config.projection_dim;
        let (pos, neg) = (unit(d, &mut rng), unit(d, &mut rng));
        let (margin, lambda) = (2.5, 0.25 + 0.2 * inst as f64);
        let tr = model.forward(image.view(), mask.view()).map_err(|e| e.to_string())?;
        let (_, dseg) = seg_loss_logits(&tr.pixel_logits, g, inv).map_err(|e| e.to_string())?;
        let tg = triplet_loss_grad(tr.embedding.view(), pos.view(), neg.view(), margin);
        ensure(tg.loss > 0.0, || format!("instance {inst}: inactive hinge"))?;
        let du = tg.anchor * lambda;
        let mut grads = model.params.zeros_like();
        model.backward(&tr, &dseg, Some(du.view()), &mut grads);
        let config = model.config.clone();
        let report = check_params(&model.params, &grads, DEFAULT_STEP, GRAD_FLOOR, |p| {
            let m = StudentModel {
                config: config.clone(),
                params: p.clone(),
            };
            let tr = m.forward(image.view(), mask.view()).unwrap();
            let seg = seg_loss_logits(&tr.pixel_logits, g, inv).unwrap().0;
            seg + lambda * triplet_loss_vec(tr.embedding.view(), pos.view(), neg.view(), margin)
        });
        worst = worst.max(report.max_rel_err);
    }
    Ok(worst)
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let n = 20;
    let parts = [
        ("triplet", grad_triplet(n)?, 1e-4),
        ("clip", grad_clip(n)?, 1e-4),
        ("seg", grad_seg(n)?, 1e-4),
        ("pool+classifier", grad_teacher(n)?, 1e-4),
        ("end-to-end", grad_end_to_end(n)?, 1e-3),
    ];
    let elapsed = t.elapsed();
    let detail = parts
        .iter()
        .map(|(name, err, _)| format!("{name} {err:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    for (name, err, tol) in parts {
        ensure(err < tol, || format!("{name} max relative error {err:.3e} >= {tol:e} ({detail})"))?;
    }
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{n} instances each, max rel err: {detail}; {:.1}s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let e1 = ndarray::array![1.0, 0.0];
    let e2 = ndarray::array![0.0, 1.0];
    let m1 = ndarray::array![-1.0, 0.0];
    let triplet = [
        (triplet_loss_vec(e1.view(), e1.view(), e2.view(), 1.0), 0.0),
        (triplet_loss_vec(e1.view(), e2.view(), e1.view(), 1.0), 2f64.sqrt() + 1.0),
        (triplet_loss_vec(e1.view(), e2.view(), m1.view(), 1.0), 2f64.sqrt() - 1.0),
    ];
    let one = ndarray::array![[0.6, 0.8]];
    let eye = ndarray::array![[1.0, 0.0], [0.0, 1.0]];
    let clip = |u: &Array2<f64>, tau: f64| clip_loss(u.view(), u.view(), Temperature::new(tau).unwrap()).unwrap();
    let clips = [
        (clip(&one, 0.07), 0.0),
        (clip(&eye, 1.0), (1.0 + (-1.0f64).exp()).ln()),
        (clip(&eye, 0.07), (1.0 + (-1.0f64 / 0.07).exp()).ln()),
    ];
    let mut worst: f64 = 0.0;
    for (i, (got, want)) in triplet.iter().chain(clips.iter()).enumerate() {
        let err = (got - want).abs();
        ensure(err <= 1e-6, || format!("example {i}: got {got}, want {want}"))?;
        worst = worst.max(err);
    }
    Ok(format!("3 triplet + 3 clip examples, max abs err {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn overlap_oracle(mask: &Array2<bool>, patch: usize) -> Vec<usize> {
    let cols = mask.ncols() / patch;
    let mut out = Vec::new();
    for r in 0..mask.nrows() / patch {
        for c in 0..cols {
            let block = mask.slice(s![r * patch..(r + 1) * patch, c * patch..(c + 1) * patch]);
            if block.iter().any(|&m| m) {
                out.push(r * cols + c);
            }
        }
    }
    out
}

fn random_mask(size: usize, rng: &mut impl Rng) -> Array2<bool> {
    let mut m = Array2::from_elem((size, size), false);
    match rng.random_range(0..3) {
        0 => {
            // oblique band
            let (y0, angle, w) = (rng.random_range(0.0..size as f64), rng.random_range(-1.0..1.0), rng.random_range(0.5..20.0));
            for ((y, x), v) in m.indexed_iter_mut() {
                *v = ((y as f64 - y0) - angle * x as f64).abs() <= w;
            }
        }
        1 => {
            // scattered single pixels
            for _ in 0..rng.random_range(1..50) {
                m[[rng.random_range(0..size), rng.random_range(0..size)]] = true;
            }
        }
        _ => {
            let (y0, x0) = (rng.random_range(0..size), rng.random_range(0..size));
            let (y1, x1) = ((y0 + rng.random_range(1..200)).min(size), (x0 + rng.random_range(1..200)).min(size));
            m.slice_mut(s![y0..y1, x0..x1]).fill(true);
        }
    }
    if !m.iter().any(|&v| v) {
        m[[size / 2, size / 2]] = true;
    }
    m
}

fn criterion_3() -> Outcome {
    let image = Array2::<f64>::zeros((1024, 1024));
    let grid: TokenGrid = tokenize(image.view(), 16).map_err(|e| e.to_string())?;
    ensure(grid.len() == 4096 && grid.rows == 64 && grid.cols == 64, || {
        format!("{} tokens on a {}x{} grid", grid.len(), grid.rows, grid.cols)
    })?;
    let mut rng = SeedTree::new(3).child("masks").rng();
    for i in 0..200 {
        let mask = random_mask(1024, &mut rng);
        let got = select_bag(&grid, mask.view()).map_err(|e| e.to_string())?.indices;
        let want = overlap_oracle(&mask, 16);
        ensure(got == want, || format!("mask {i}: {} tokens vs oracle {}", got.len(), want.len()))?;
    }
    Ok("1024x1024 / 16 -> 4096 tokens; select_bag equals the overlap oracle on 200 masks".into())
}

// ---------------------------------------------------------------- 4

fn full_bank() -> TeacherBank {
    let spec = SynthSpec {
        cores_per_grade: [0; 6],
        bags_per_grade: [80; 6],
        ..SynthSpec::default()
    };
    let data = synth_generate(&spec, 4).unwrap();
    let dims = PoolDims {
        input: spec.teacher_dim,
        projection: 16,
        attention: 8,
    };
    let teacher = TeacherModel::init(dims, 8, SeedTree::new(4));
    export_bank(&data.bags, &teacher.pool, &BinEdges::default()).unwrap()
}

fn sub_bank(bank: &TeacherBank, keep: impl Fn(&TeacherBankEntry) -> bool) -> TeacherBank {
    let rows: Vec<usize> = (0..bank.len()).filter(|&i| keep(&bank.entries()[i])).collect();
    let entries = rows.iter().map(|&i| bank.entries()[i].clone()).collect();
    let emb = bank.embeddings().select(ndarray::Axis(0), &rows);
    TeacherBank::new(bank.bin_edges().clone(), entries, emb).unwrap()
}

/// Nearest other grade present, ties toward the higher grade, by scanning.
fn nearest_present(anchor: u8, present: &[u8]) -> Option<u8> {
    for d in 1..6i16 {
        for cand in [anchor as i16 + d, anchor as i16 - d] {
            if (0..6).contains(&cand) && present.contains(&(cand as u8)) {
                return Some(cand as u8);
            }
        }
    }
    None
}

fn criterion_4() -> Outcome {
    let bank = full_bank();
    let edges = bank.bin_edges().clone();
    let mut rng = SeedTree::new(4).child("draws").rng();
    let d = bank.dim();
    let mut fails = Vec::new();
    let mut neighbor_both = 0usize;
    for i in 0..10_000 {
        let g = grade(rng.random_range(0..6));
        let inv = if g.is_cancer() {
            Involvement::new(rng.random_range(0.1..1.0)).unwrap()
        } else {
            Involvement::NONE
        };
        let bin = assign_bin(inv, &edges).0;
        ensure(!bank.cell(g, bin).is_empty(), || format!("bank cell ({g}, {bin}) empty"))?;
        let a = unit(d, &mut rng);
        let draw = sample_triplet(g, bin, &bank, a.view(), &mut rng, 16).map_err(|e| e.to_string())?;
        let pe = &bank.entries()[draw.positive];
        let ne = &bank.entries()[draw.negative];
        if pe.grade != g || pe.bin != bin || draw.positive_fallback {
            fails.push(format!("draw {i}: positive ({}, {}) for anchor ({g}, {bin})", pe.grade, pe.bin));
        }
        let dist = (i16::from(ne.grade.value()) - i16::from(g.value())).abs();
        if (1..5).contains(&g.value()) {
            neighbor_both += 1;
        }
        if dist != 1 || ne.grade != draw.negative_grade {
            fails.push(format!("draw {i}: negative grade {} for anchor {g}", ne.grade));
        }
    }
    ensure(fails.is_empty(), || format!("{} bad draws, first: {}", fails.len(), fails[0]))?;

    // fallback: thinned banks
    let subsets: [&[u8]; 5] = [&[0, 2, 3, 4, 5], &[0, 5], &[1, 3, 5], &[0, 1, 4], &[2, 3]];
    let mut fallback_draws = 0usize;
    for present in subsets {
        let small = sub_bank(&bank, |e| present.contains(&e.grade.value()));
        for &ag in present {
            let want = nearest_present(ag, present);
            let got = negative_grade(grade(ag), &small).map(|g| g.value());
            ensure(got == want, || format!("grades {present:?}, anchor {ag}: negative {got:?}, want {want:?}"))?;
            for _ in 0..50 {
                let a = unit(d, &mut rng);
                let draw = sample_triplet(grade(ag), if ag == 0 { 0 } else { 1 }, &small, a.view(), &mut rng, 16)
                    .map_err(|e| e.to_string())?;
                ensure(small.entries()[draw.negative].grade.value() == want.unwrap(), || {
                    format!("grades {present:?}, anchor {ag}: sampled negative off the nearest grade")
                })?;
                fallback_draws += 1;
            }
        }
    }
    // empty (grade, bin) cell: positive falls back to the grade
    let holed = sub_bank(&bank, |e| !(e.grade.value() == 3 && e.bin == 2));
    for _ in 0..200 {
        let a = unit(d, &mut rng);
        let draw = sample_triplet(grade(3), 2, &holed, a.view(), &mut rng, 16).map_err(|e| e.to_string())?;
        let pe = &holed.entries()[draw.positive];
        ensure(draw.positive_fallback && pe.grade == grade(3), || {
            format!("positive ({}, {}) without fallback flag", pe.grade, pe.bin)
        })?;
    }
    Ok(format!(
        "10000 draws: 100% cell-matched positives, 100% distance-1 negatives ({neighbor_both} with both neighbors); \
         {fallback_draws} fallback draws on nearest grade"
    ))
}

// ---------------------------------------------------------------- 5

fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn sweep_sens(scores: &[f64], labels: &[bool], spec: f64) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::INFINITY);
    let mut best: f64 = 0.0;
    for &t in &thresholds {
        let fp = scores.iter().zip(labels).filter(|(&s, &l)| !l && s >= t).count() as f64;
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| l && s >= t).count() as f64;
        if (neg - fp) / neg >= spec - 1e-12 {
            best = best.max(tp / pos);
        }
    }
    best
}

fn criterion_5() -> Outcome {
    let mut rng = SeedTree::new(5).child("metrics").rng();
    for i in 0..500 {
        let n = rng.random_range(4..60);
        let levels = rng.random_range(2..12);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        labels[0] = true;
        labels[1] = false;
        let got = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        let want = brute_auroc(&scores, &labels);
        ensure(got == want, || format!("instance {i}: auroc {got} vs pairs {want}"))?;
        for spec in [0.4, 0.6, 0.8] {
            let got = sens_at_spec(&scores, &labels, spec).map_err(|e| e.to_string())?;
            let want = sweep_sens(&scores, &labels, spec);
            ensure((got - want).abs() < 1e-12, || format!("instance {i} spec {spec}: {got} vs sweep {want}"))?;
        }
    }
    let ex = auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).map_err(|e| e.to_string())?;
    ensure(ex == 0.75, || format!("worked example gave {ex}"))?;
    Ok("500 tied instances match pair counts and threshold sweeps exactly; example AUROC 0.75".into())
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let diffs = [-2.0, 1.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
    let r = wilcoxon_signed_rank_exact(&diffs).map_err(|e| e.to_string())?;
    ensure(r.n == 8 && r.w == 2.0, || format!("n {} W {}", r.n, r.w))?;
    ensure((r.p_two_sided - 0.0234375).abs() < 1e-9, || format!("p {}", r.p_two_sided))?;
    ensure(format!("{:.4}", r.p_two_sided) == "0.0234", || "does not round to 0.0234".into())?;
    Ok(format!("n=8, W=2 -> p = {}", r.p_two_sided))
}

// ---------------------------------------------------------------- 7, 8

struct BenchResult {
    runs: Vec<BenchRun>,
    teacher_checksums: Vec<(String, String)>,
    elapsed: Duration,
}

fn run_bench() -> Result<BenchResult, String> {
    let config = BenchConfig::default();
    let t = Instant::now();
    let mut runs = Vec::new();
    let mut teacher_checksums = Vec::new();
    for seed in 0..3 {
        let prepared = prepare(&config, seed).map_err(|e| e.to_string())?;
        runs.extend(run_lambdas(&config, &prepared, seed, &config.lambdas).map_err(|e| e.to_string())?);
        teacher_checksums.push((prepared.teacher_checksum.clone(), prepared.teacher.checksum()));
    }
    Ok(BenchResult {
        runs,
        teacher_checksums,
        elapsed: t.elapsed(),
    })
}

fn criterion_7(bench: &BenchResult) -> Outcome {
    let summary = summarize_runs(&bench.runs);
    let at = |seed: u64, lambda: f64| summary.iter().find(|s| s.seed == seed && s.lambda == lambda).unwrap();
    let mut lines = Vec::new();
    for seed in 0..3 {
        let (base, dist) = (at(seed, 0.0), at(seed, 1.0));
        lines.push(format!(
            "seed {seed}: embedding {:.3} -> {:.3}, auroc {:.3}",
            base.embedding_auroc, dist.embedding_auroc, dist.auroc
        ));
        ensure(dist.embedding_auroc > base.embedding_auroc, || lines.join("; "))?;
        ensure(dist.auroc >= 0.90, || lines.join("; "))?;
    }
    let mins = bench.elapsed.as_secs_f64() / 60.0;
    ensure(mins <= 15.0, || format!("benchmark took {mins:.1} min"))?;
    Ok(format!("{}; {mins:.1} min for all 3 seeds x 5 lambdas x 5 folds", lines.join("; ")))
}

fn criterion_8(bench: &BenchResult) -> Outcome {
    let summary = summarize_runs(&bench.runs);
    let mut hits = 0;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let rows: Vec<_> = summary.iter().filter(|s| s.seed == seed).collect();
        let best = rows.iter().map(|s| s.sens60_cspca).fold(f64::NEG_INFINITY, f64::max);
        let argmax: Vec<f64> = rows.iter().filter(|s| s.sens60_cspca == best).map(|s| s.lambda).collect();
        let inside = argmax.iter().any(|l| (0.5..=2.0).contains(l));
        hits += inside as usize;
        lines.push(format!("seed {seed}: best {best:.3} at lambda {argmax:?}"));
    }
    ensure(hits >= 2, || format!("{hits}/3 seeds peak in [0.5, 2]: {}", lines.join("; ")))?;
    Ok(format!("{hits}/3 seeds peak in [0.5, 2]: {}", lines.join("; ")))
}

// ---------------------------------------------------------------- 9, 10

fn tiny_pipeline_config(root: &std::path::Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seeds: vec![0, 1],
        folds: 3,
        image_size: 32,
        ..ExperimentConfig::default()
    };
    c.paths.data_dir = root.join("data");
    c.paths.bank = root.join("runs/teacher/bank.bin");
    c.paths.out_dir = root.join("runs");
    c.synth = SynthSpec {
        cores_per_grade: [30, 0, 9, 9, 9, 9],
        bags_per_grade: [12; 6],
        image_size: 32,
        needle_width: 4.0,
        texture_gain: 1.0,
        ..SynthSpec::default()
    };
    c.teacher.projection_dim = 8;
    c.teacher.attention_dim = 4;
    c.teacher.hidden = 8;
    c.teacher.optim = OptimConfig {
        lr: 1e-3,
        max_epochs: 3,
        ..OptimConfig::default()
    };
    c.student = StudentConfig {
        patch: 8,
        embed_dim: 8,
        mixer_hidden: 8,
        adapter_dim: 4,
        decoder_hidden: 8,
        projection_dim: 8,
        attention_dim: 4,
        ..StudentConfig::default()
    };
    c.optim = OptimConfig {
        lr: 3e-3,
        max_epochs: 2,
        ..OptimConfig::default()
    };
    c.sweep.lambdas = vec![0.0, 1.0];
    c
}

fn pipeline(root: &std::path::Path) -> Result<(Vec<u8>, cli::RunSet, cli::TeacherSummary), String> {
    let config = tiny_pipeline_config(root);
    config.validate().map_err(|e| e.to_string())?;
    cli::synth(&config, &SynthArgs { seed: 10, force: false }).map_err(|e| e.to_string())?;
    let teacher = cli::train_teacher(&config).map_err(|e| e.to_string())?;
    let args = SweepArgs {
        seeds: None,
        folds: None,
        lambdas: None,
        out: None,
    };
    cli::sweep(&config, &args).map_err(|e| e.to_string())?;
    let out = config.paths.out_dir.join("sweep");
    let bytes = fs::read(out.join("report/metrics.json")).map_err(|e| e.to_string())?;
    let set = cli::read_runset(&out).map_err(|e| e.to_string())?;
    ensure(set.failed() == 0 && set.runs.len() == 12, || {
        format!("{} of {} pipeline runs failed", set.failed(), set.runs.len())
    })?;
    Ok((bytes, set, teacher))
}

fn criterion_9(bench: &BenchResult, set: &cli::RunSet, teacher: &cli::TeacherSummary) -> Outcome {
    for (i, (before, after)) in bench.teacher_checksums.iter().enumerate() {
        ensure(before == after, || format!("benchmark seed {i}: teacher checksum changed"))?;
    }
    ensure(
        set.teacher_checksum_before.as_deref() == Some(teacher.checksum.as_str())
            && set.teacher_checksum_after == set.teacher_checksum_before,
        || format!("pipeline teacher checksum {:?} -> {:?}", set.teacher_checksum_before, set.teacher_checksum_after),
    )?;
    let manifests: Vec<_> = bench
        .runs
        .iter()
        .map(|r| &r.manifest)
        .chain(set.runs.iter().map(|r| &r.manifest))
        .collect();
    let mut bank_sums: BTreeMap<u64, &str> = BTreeMap::new();
    for m in &bench.runs {
        let prev = bank_sums.entry(m.seed).or_insert(m.manifest.bank_checksum.as_str());
        ensure(*prev == m.manifest.bank_checksum, || format!("seed {}: bank changed between runs", m.seed))?;
    }
    for m in &manifests {
        m.check_leakage().map_err(|e| e.to_string())?;
        ensure(m.frozen_checksum_before == m.frozen_checksum_after, || {
            format!("seed {} fold {}: frozen student backbone changed", m.seed, m.fold)
        })?;
    }
    Ok(format!(
        "teacher checksum stable in {} benchmark seeds and the CLI pipeline; {} manifests patient-disjoint",
        bench.teacher_checksums.len(),
        manifests.len()
    ))
}

fn criterion_10(first: &[u8]) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (second, _, _) = pipeline(dir.path())?;
    ensure(first == second.as_slice(), || "metrics.json differs between identical runs".into())?;
    Ok(format!("metrics.json identical across two full runs ({} bytes)", first.len()))
}

// ---------------------------------------------------------------- driver

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        )),
    }
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |i: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if wanted(i) {
            let r = guarded(f);
            match &r {
                Ok(d) => println!("PASS [{i}] {name}: {d}"),
                Err(d) => println!("FAIL [{i}] {name}: {d}"),
            }
            results.push((i, name, r));
        }
    };
    record(1, "gradient suite", &mut criterion_1);
    record(2, "loss oracles", &mut criterion_2);
    record(3, "tokenization and bag selection", &mut criterion_3);
    record(4, "sampler invariants", &mut criterion_4);
    record(5, "metric oracles", &mut criterion_5);
    record(6, "exact wilcoxon", &mut criterion_6);

    let need_bench = wanted(7) || wanted(8) || wanted(9);
    let bench = if need_bench { Some(guarded_bench()) } else { None };
    let pipe_dir = tempfile::tempdir().expect("temp dir");
    let pipe = if wanted(9) || wanted(10) { Some(pipeline(pipe_dir.path())) } else { None };

    let bench_ref = |f: &dyn Fn(&BenchResult) -> Outcome| match &bench {
        Some(Ok(b)) => f(b),
        Some(Err(e)) => Err(format!("benchmark failed: {e}")),
        None => Err("benchmark skipped".into()),
    };
    record(7, "distillation effect", &mut || bench_ref(&criterion_7));
    record(8, "lambda sweep shape", &mut || bench_ref(&criterion_8));
    record(9, "freezing and leakage", &mut || match &pipe {
        Some(Ok((_, set, teacher))) => bench_ref(&|b| criterion_9(b, set, teacher)),
        Some(Err(e)) => Err(format!("pipeline failed: {e}")),
        None => Err("pipeline skipped".into()),
    });
    record(10, "determinism", &mut || match &pipe {
        Some(Ok((bytes, _, _))) => criterion_10(bytes),
        Some(Err(e)) => Err(format!("pipeline failed: {e}")),
        None => Err("pipeline skipped".into()),
    });

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("acceptance: {} passed, {} failed", results.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

fn guarded_bench() -> Result<BenchResult, String> {
    match catch_unwind(run_bench) {
        Ok(r) => r,
        Err(_) => Err("benchmark panicked".into()),
    }
}
