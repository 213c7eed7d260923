//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N ... PASS|FAIL` line straight to stderr (bypassing capture).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use evpan_cli::evaluate::{evaluate, EvaluateOptions};
use evpan_cli::fuse::{fuse_files, FuseOptions};
use evpan_cli::synth::{scene_stem, synthesize};
use evpan_cli::tensor::read_panoptic;
use evpan_core::evidential::{dirichlet_from_logits, probabilities_and_uncertainty, softplus, Activation};
use evpan_core::fusion::{fuse, FusionConfig};
use evpan_core::gradcheck::{check_gradient, random_problem, FD_STEP};
use evpan_core::losses::{
    evidential_digamma_loss, evidential_log_loss, lambda_schedule, LossKind, ScheduleState,
};
use evpan_core::metrics::{
    ece_maxprob, match_segments, panoptic_quality, pece, uece, upq, EvalAccumulator, EvalConfig,
};
use evpan_core::synth::{generate_scene, synthesize_predictions, PredictorMode, SceneConfig};
use evpan_core::{DenseGrid, LabelGrid, PanopticGrid, OFFSET, VOID};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// tolerances
const UPQ_TABLE_TOL: f64 = 0.1;
const GRAD_TOL: f64 = 1e-5;
const GRAD_TOL_SORTING: f64 = 1e-4;
const PROB_SUM_TOL: f64 = 1e-9;
const UNCERTAINTY_TOL: f64 = 1e-12;
const ORACLE_TOL: f64 = 1e-12;
const CALIBRATED_UECE_MAX: f64 = 0.02;
const FORCED_ERROR_UECE: f64 = 0.29;
const FORCED_ERROR_TOL: f64 = 0.02;
const PIPELINE_PQ_MIN: f64 = 0.9;
const PIPELINE_PECE_MAX: f64 = 0.1;
const CLOSED_FORM_TOL: f64 = 1e-12;

fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    let line = format!("criterion {n} {name}: {} ({detail})\n", if ok { "PASS" } else { "FAIL" });
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(ok, "{line}");
}

#[test]
fn criterion_1_upq_table_arithmetic() {
    let rows = [(63.5, 21.3, 49.9), (64.1, 14.3, 54.9)];
    let mut details = vec![];
    let mut ok = true;
    for (pq, pece_pct, table) in rows {
        let v = 100.0 * upq(pq / 100.0, pece_pct / 100.0);
        let two_dp = (v * 100.0).round() / 100.0;
        ok &= (v - table).abs() <= UPQ_TABLE_TOL;
        details.push(format!("{two_dp:.2} vs {table}"));
    }
    let exact = [(63.5, 21.3, 49.97), (64.1, 14.3, 54.93)];
    ok &= exact.iter().all(|&(pq, p, want)| ((100.0 * upq(pq / 100.0, p / 100.0) * 100.0).round() / 100.0 - want).abs() < 1e-9);
    verdict(1, "uPQ arithmetic", ok, &details.join(", "));
}

#[test]
fn criterion_2_gradient_suite() {
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut ok = true;
    let mut instances = 0;
    let state = ScheduleState::new(30, 1);
    for kind in LossKind::ALL {
        let tol = if kind.has_sorting() { GRAD_TOL_SORTING } else { GRAD_TOL };
        for &(h, w, c) in &[(4, 4, 3), (6, 6, 5)] {
            for seed in 0..20 {
                let (logits, labels) = random_problem(1000 + seed, h, w, c);
                let r = check_gradient(kind, &logits, &labels, &state, Activation::Softplus, FD_STEP);
                ok &= r.checked > 0 && r.max_rel_error < tol;
                let e = worst.entry(kind.name()).or_default();
                *e = e.max(r.max_rel_error);
                instances += 1;
            }
        }
    }
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    verdict(2, "gradient suite", ok, &format!("{instances} instances; worst rel err {detail}"));
}

#[test]
fn criterion_3_dirichlet_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ok = true;
    let mut vectors = 0;
    let (mut max_sum_err, mut max_u_err) = (0.0f64, 0.0f64);
    for c in 2..=11usize {
        let n = 10_000;
        let logits = DenseGrid::from_fn(1, n, c, |_, _, _| rng.random_range(-10.0..10.0)).unwrap();
        let field = dirichlet_from_logits(&logits, Activation::Softplus).unwrap();
        let (p, u) = probabilities_and_uncertainty(&logits, Activation::Softplus).unwrap();
        for i in 0..n {
            let l = logits.pixel(i);
            let s: f64 = l.iter().map(|&x| softplus(x) + 1.0).sum();
            let pi = p.pixel(i);
            let sum_err = (pi.iter().sum::<f64>() - 1.0).abs();
            let ui = u.data()[i];
            let u_err = (ui - c as f64 / s).abs();
            max_sum_err = max_sum_err.max(sum_err);
            max_u_err = max_u_err.max(u_err);
            let first_max = |v: &[f64]| v.iter().enumerate().fold(0, |b, (k, &x)| if x > v[b] { k } else { b });
            ok &= sum_err <= PROB_SUM_TOL
                && u_err <= UNCERTAINTY_TOL
                && ui > 0.0
                && ui <= 1.0
                && first_max(pi) == first_max(l)
                && (field.strength().data()[i] - s).abs() <= 1e-9 * s;
            vectors += 1;
        }
    }
    verdict(
        3,
        "Dirichlet identities",
        ok && vectors >= 100_000,
        &format!("{vectors} vectors; max |sum p - 1| {max_sum_err:.1e}, max |u - C/S| {max_u_err:.1e}"),
    );
}

/// All-pairs oracle: matched pairs and per-class (tp, fp, fn, iou list).
type OracleCounts = BTreeMap<u32, (u64, u64, u64, Vec<f64>)>;

fn oracle_matching(pred: &PanopticGrid, gt: &PanopticGrid) -> (Vec<(u32, u32, f64)>, OracleCounts) {
    let p: Vec<u32> = pred.data().to_vec();
    let g: Vec<u32> = gt.data().to_vec();
    let pids: BTreeSet<u32> = p.iter().copied().filter(|&v| v != VOID).collect();
    let gids: BTreeSet<u32> = g.iter().copied().filter(|&v| v != VOID).collect();
    let mut pairs = vec![];
    for &a in &pids {
        for &b in &gids {
            if a / OFFSET != b / OFFSET {
                continue;
            }
            let inter = (0..p.len()).filter(|&i| p[i] == a && g[i] == b).count();
            let union = (0..p.len()).filter(|&i| g[i] != VOID && (p[i] == a || g[i] == b)).count();
            let iou = inter as f64 / union as f64;
            if iou > 0.5 {
                pairs.push((a, b, iou));
            }
        }
    }
    let mut counts: OracleCounts = BTreeMap::new();
    for &b in &gids {
        let e = counts.entry(b / OFFSET).or_default();
        match pairs.iter().find(|x| x.1 == b) {
            Some(&(_, _, iou)) => {
                e.0 += 1;
                e.3.push(iou);
            }
            None => e.2 += 1,
        }
    }
    for &a in &pids {
        if pairs.iter().any(|x| x.0 == a) {
            continue;
        }
        let area = p.iter().filter(|&&v| v == a).count();
        let on_void = (0..p.len()).filter(|&i| p[i] == a && g[i] == VOID).count();
        if 2 * on_void <= area {
            counts.entry(a / OFFSET).or_default().1 += 1;
        }
    }
    (pairs, counts)
}

fn random_segment_grid(rng: &mut ChaCha8Rng, void: bool) -> PanopticGrid {
    let k = rng.random_range(1..=4);
    let ids: Vec<u32> = (0..k)
        .map(|_| {
            let class = rng.random_range(0..4u32);
            if class < 2 { class * OFFSET } else { class * OFFSET + rng.random_range(1..3) }
        })
        .collect();
    let data = (0..64)
        .map(|_| if void && rng.random_bool(0.1) { VOID } else { ids[rng.random_range(0..k)] })
        .collect();
    PanopticGrid::new(8, 8, data).unwrap()
}

#[test]
fn criterion_4_pq_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = true;
    let mut matched = 0;
    for _ in 0..200 {
        let mut pred = random_segment_grid(&mut rng, false);
        let gt = random_segment_grid(&mut rng, true);
        if rng.random_bool(0.5) {
            // perturb a copy of gt so that matches actually occur
            let mut d = gt.data().to_vec();
            for v in d.iter_mut() {
                if *v == VOID || rng.random_bool(0.15) {
                    *v = pred.data()[0];
                }
            }
            pred = PanopticGrid::new(8, 8, d).unwrap();
        }
        let (m, counts) = match_segments(&pred, &gt, 4).unwrap();
        let (pairs, want) = oracle_matching(&pred, &gt);
        let got: Vec<(u32, u32, f64)> = m.iter().map(|m| (m.pred_id, m.gt_id, m.iou)).collect();
        ok &= got == pairs;
        matched += pairs.len();
        let (per_class, _) = panoptic_quality(&counts);
        for c in 0..4u32 {
            let cc = &counts.classes[c as usize];
            match want.get(&c) {
                None => ok &= cc.is_empty() && per_class[c as usize].is_none(),
                Some((tp, fp, fn_, ious)) => {
                    ok &= (cc.tp, cc.fp, cc.fn_) == (*tp, *fp, *fn_);
                    let denom = *tp as f64 + 0.5 * *fp as f64 + 0.5 * *fn_ as f64;
                    let pq_want = ious.iter().sum::<f64>() / denom;
                    match per_class[c as usize] {
                        Some(q) => ok &= (q.pq - pq_want).abs() <= ORACLE_TOL,
                        None => ok &= denom == 0.0,
                    }
                }
            }
        }
    }
    verdict(4, "PQ oracle equivalence", ok, &format!("200 grid pairs, {matched} matched pairs"));
}

/// Direct binning of `(confidence, correct)` pairs.
fn binned_error(samples: &[(f64, bool)], bins: usize) -> f64 {
    let mut count = vec![0.0; bins];
    let mut conf = vec![0.0; bins];
    let mut acc = vec![0.0; bins];
    for &(c, ok) in samples {
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        count[b] += 1.0;
        conf[b] += c;
        acc[b] += ok as u8 as f64;
    }
    let n = samples.len() as f64;
    (0..bins).filter(|&b| count[b] > 0.0).map(|b| (acc[b] - conf[b]).abs() / n).sum()
}

fn scene_predictions(cfg: &SceneConfig) -> (PanopticGrid, PanopticGrid, DenseGrid, DenseGrid) {
    let (gt, _) = generate_scene(cfg).unwrap();
    let (logits, instances) = synthesize_predictions(&gt, cfg).unwrap();
    let r = fuse(&logits, &instances, &FusionConfig::new(cfg.split())).unwrap();
    let (probs, _) = probabilities_and_uncertainty(&logits, Activation::Softplus).unwrap();
    (r.panoptic, gt, r.uncertainty, probs)
}

#[test]
fn criterion_5_calibration_oracle() {
    let bins = 10;
    let mut ok = true;
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let cfg = SceneConfig {
            height: 48,
            width: 48,
            seed,
            noise_level: [0.0, 0.1, 0.3][seed as usize % 3],
            target_confidence: [0.6, 0.8, 0.95, 0.99][seed as usize % 4],
            mode: if seed % 2 == 0 { PredictorMode::Fixed } else { PredictorMode::Calibrated },
            ..SceneConfig::default()
        };
        let (pred, gt, unc, probs) = scene_predictions(&cfg);
        let n = pred.data().len();

        let pixel_samples: Vec<(f64, bool)> = (0..n)
            .filter(|&i| gt.data()[i] != VOID)
            .map(|i| {
                let (p, g) = (pred.data()[i], gt.data()[i]);
                (1.0 - unc.data()[i], p != VOID && p / OFFSET == g / OFFSET)
            })
            .collect();
        let uece_oracle = binned_error(&pixel_samples, bins);

        let maxprob_samples: Vec<(f64, bool)> = (0..n)
            .map(|i| {
                let px = probs.pixel(i);
                let k = px.iter().enumerate().fold(0, |b, (k, &x)| if x > px[b] { k } else { b });
                (px[k], k as u32 == gt.data()[i] / OFFSET)
            })
            .collect();
        let ece_oracle = binned_error(&maxprob_samples, bins);

        let (pairs, _) = oracle_matching(&pred, &gt);
        let pece_oracle = if pairs.is_empty() {
            1.0
        } else {
            pairs
                .iter()
                .map(|&(f, g, _)| {
                    let s: Vec<(f64, bool)> = (0..n)
                        .filter(|&i| pred.data()[i] == f && gt.data()[i] != VOID)
                        .map(|i| (1.0 - unc.data()[i], gt.data()[i] == g))
                        .collect();
                    binned_error(&s, bins)
                })
                .sum::<f64>()
                / pairs.len() as f64
        };

        let conf = unc.map(|u| 1.0 - u).unwrap();
        let correct: Vec<bool> = pixel_samples.iter().map(|s| s.1).collect();
        let labels = gt.class_labels();
        let (matches, _) = match_segments(&pred, &gt, cfg.num_classes()).unwrap();
        let mut acc = EvalAccumulator::new(EvalConfig::new(cfg.split(), bins).unwrap());
        acc.add_image(&pred, &gt, &unc, Some(&probs)).unwrap();
        let report = acc.report();

        let checks = [
            (uece(&conf, &correct, bins).unwrap(), uece_oracle),
            (report.overall.uece.unwrap(), uece_oracle),
            (ece_maxprob(&probs, &labels, bins).unwrap(), ece_oracle),
            (report.overall.ece.unwrap(), ece_oracle),
            (pece(&matches, &conf, &pred, &gt, bins).unwrap(), pece_oracle),
            (report.overall.pece, pece_oracle),
        ];
        for (got, want) in checks {
            worst = worst.max((got - want).abs());
            ok &= (got - want).abs() <= ORACLE_TOL;
        }
    }

    let pixel_uece = |cfg: &SceneConfig| {
        let (gt, labels) = generate_scene(cfg).unwrap();
        let (logits, _) = synthesize_predictions(&gt, cfg).unwrap();
        let (probs, u) = probabilities_and_uncertainty(&logits, Activation::Softplus).unwrap();
        let correct: Vec<bool> = (0..labels.data().len())
            .map(|i| {
                let px = probs.pixel(i);
                let k = px.iter().enumerate().fold(0, |b, (k, &x)| if x > px[b] { k } else { b });
                k as u32 == labels.data()[i]
            })
            .collect();
        (uece(&u.map(|u| 1.0 - u).unwrap(), &correct, bins).unwrap(), correct.len())
    };
    let (calibrated, n_cal) = pixel_uece(&SceneConfig {
        height: 320,
        width: 320,
        seed: 5,
        target_confidence: 0.7,
        mode: PredictorMode::Calibrated,
        ..SceneConfig::default()
    });
    let (forced, n_forced) = pixel_uece(&SceneConfig {
        height: 320,
        width: 320,
        seed: 5,
        target_confidence: 0.99,
        noise_level: 0.3,
        ..SceneConfig::default()
    });
    ok &= n_cal >= 100_000 && calibrated < CALIBRATED_UECE_MAX;
    ok &= n_forced >= 100_000 && (forced - FORCED_ERROR_UECE).abs() <= FORCED_ERROR_TOL;
    verdict(
        5,
        "calibration oracle",
        ok,
        &format!(
            "50 scenes, max |metric - oracle| {worst:.1e}; calibrated uECE {calibrated:.4} on {n_cal} px; forced-error uECE {forced:.4}"
        ),
    );
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn ids_dense(p: &PanopticGrid, cfg: &SceneConfig) -> bool {
    let ids: BTreeSet<u32> = p.data().iter().copied().collect();
    let split = cfg.split();
    (0..cfg.num_classes() as u32).all(|c| {
        let inst: Vec<u32> = ids.iter().filter(|&&id| id != VOID && id / OFFSET == c).map(|id| id % OFFSET).collect();
        if split.is_stuff(c) {
            inst.iter().all(|&i| i == 0)
        } else {
            inst == (1..=inst.len() as u32).collect::<Vec<_>>()
        }
    }) && !ids.contains(&VOID)
}

#[test]
fn criterion_6_fusion_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SceneConfig { target_confidence: 0.99, noise_level: 0.0, seed: 60, ..SceneConfig::default() };
    let count = 20;
    let data = tmp.path().join("data");
    synthesize(&data, &cfg, count).unwrap();
    let again = tmp.path().join("data_again");
    synthesize(&again, &cfg, count).unwrap();
    let mut ok = dir_bytes(&data) == dir_bytes(&again);

    let classes = data.join("classes.json");
    let split = cfg.split();
    for run in ["pred", "pred_again"] {
        for i in 0..count {
            let stem = scene_stem(i);
            fuse_files(&FuseOptions {
                semantic: data.join("inputs").join(format!("{stem}.logits.upst")),
                instances: data.join("inputs").join(format!("{stem}.instances.json")),
                stuff: split.stuff.clone(),
                thing: split.thing.clone(),
                out: tmp.path().join(run).join(&stem),
            })
            .unwrap();
        }
    }
    let pred_files = dir_bytes(&tmp.path().join("pred"));
    ok &= pred_files.len() == 3 * count && pred_files == dir_bytes(&tmp.path().join("pred_again"));

    let mut dense = true;
    for i in 0..count {
        let p = read_panoptic(&tmp.path().join("pred").join(format!("{}.panoptic.upst", scene_stem(i)))).unwrap();
        dense &= ids_dense(&p, &cfg);
    }
    ok &= dense;

    let opts = EvaluateOptions {
        pred_dir: tmp.path().join("pred"),
        gt_dir: data.join("gt"),
        classes,
        bins: 10,
        per_image: false,
    };
    let report = evaluate(&opts).unwrap();
    let again = evaluate(&opts).unwrap();
    ok &= report.to_json().unwrap() == again.to_json().unwrap();
    let o = &report.metrics.overall;
    ok &= o.pq > PIPELINE_PQ_MIN && o.pece < PIPELINE_PECE_MAX;
    verdict(
        6,
        "fusion pipeline",
        ok,
        &format!("{count} scenes 64x64: PQ {:.4}, pECE {:.4}, uPQ {:.4}, ids dense {dense}", o.pq, o.pece, o.upq),
    );
}

#[test]
fn criterion_7_closed_form_losses() {
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut check = |got: f64, want: f64| {
        worst = worst.max((got - want).abs());
        ok &= (got - want).abs() <= CLOSED_FORM_TOL;
    };
    let one = |l: [f64; 2]| DenseGrid::new(1, 1, 2, l.to_vec()).unwrap();
    let label = LabelGrid::new(1, 1, vec![0]).unwrap();
    for a in [1.0, 1.5, 2.0, 7.25, 100.0, 1e6] {
        // alpha = (A, 1): evidence A - 1 on the true class through ReLU
        let r = evidential_log_loss(&one([a - 1.0, -1.0]), &label, Activation::Relu).unwrap();
        check(r.value, ((a + 1.0) / a).ln());
    }
    check(evidential_log_loss(&one([0.0, 0.0]), &label, Activation::Relu).unwrap().value, 2f64.ln());
    check(evidential_log_loss(&one([-40.0, -40.0]), &label, Activation::Softplus).unwrap().value, 2f64.ln());
    check(evidential_digamma_loss(&one([0.0, 0.0]), &label, Activation::Relu).unwrap().value, 1.0);
    verdict(7, "closed-form loss values", ok, &format!("max abs err {worst:.1e}"));
}

#[test]
fn criterion_8_lambda_schedule() {
    let mut ok = true;
    for iters in [1u64, 7, 100, 2975] {
        let at = |t: u64| lambda_schedule(&ScheduleState::new(t, iters));
        ok &= at(0) == 0.0;
        ok &= at(30 * iters) == 0.03;
        ok &= (60 * iters..60 * iters + 50).all(|t| at(t) == 0.06);
        ok &= at(10 * 60 * iters) == 0.06 && at(u64::MAX / 2) == 0.06;
        ok &= (0..60 * iters.min(20)).all(|t| at(t) <= 0.06 && at(t) <= at(t + 1));
    }
    verdict(8, "lambda schedule", ok, "0 at t=0, 0.03 at 30I, exactly 0.06 from 60I on");
}

#[test]
fn criterion_9_accumulator_merge() {
    let bins = 10;
    let base = SceneConfig { height: 32, width: 32, noise_level: 0.2, target_confidence: 0.8, ..SceneConfig::default() };
    let cfg = EvalConfig::new(base.split(), bins).unwrap();
    let images: Vec<_> = (0..12u64).map(|s| scene_predictions(&SceneConfig { seed: 900 + s, ..base.clone() })).collect();

    let mut single = EvalAccumulator::new(cfg.clone());
    let mut parts = vec![];
    for (pred, gt, unc, probs) in &images {
        single.add_image(pred, gt, unc, Some(probs)).unwrap();
        let mut a = EvalAccumulator::new(cfg.clone());
        a.add_image(pred, gt, unc, Some(probs)).unwrap();
        parts.push(a);
    }
    let want = single.report();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ok = true;
    for _ in 0..100 {
        let mut pool = parts.clone();
        pool.shuffle(&mut rng);
        // random merge tree: repeatedly combine two random entries
        while pool.len() > 1 {
            let i = rng.random_range(0..pool.len());
            let a = pool.swap_remove(i);
            let j = rng.random_range(0..pool.len());
            let b = pool.swap_remove(j);
            let (mut left, right) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            left.merge(&right).unwrap();
            pool.push(left);
        }
        let got = pool.pop().unwrap();
        ok &= got == single && got.report() == want;
    }
    verdict(9, "accumulator merge", ok, "100 random merge orders of 12 images equal the single pass bitwise");
}
