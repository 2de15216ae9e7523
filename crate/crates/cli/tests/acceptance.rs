//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Every tolerance is pinned below.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_rational::Ratio;
use occlusynth::augment::{rng_from_seed, sample_params, AugmentParams, AugmentRanges, Interval};
use occlusynth::compositor::{derive_seed, synthesize_scene, Backdrop, SceneAnnotation};
use occlusynth::config::{CountRange, SceneConfig};
use occlusynth::dataset::SceneRecord;
use occlusynth::ingest::{load_catalog, ForegroundConfig, ObjectCatalog};
use occlusynth::mask::{BitMask, BoundingBox};
use occlusynth::metrics::{detection_quality, evaluate, EvalConfig, MetricReport, RegionPolicy};
use occlusynth::planner::{build_graph, occlusion_ratio, plan_for_class, PlanOptions};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const MASTER_SEED: u64 = 2017;

/// Criterion 2.
const PARTITION_SCENES: u64 = 1000;
const PARTITION_BUDGET_S: f64 = 60.0;
/// Criteria 3 and 9.
const ORACLE_TOL: f64 = 1e-12;
const METRIC_TRIALS: u64 = 200;
const METRIC_CANVAS: u32 = 16;
const METRIC_MAX_INSTANCES: usize = 4;
const GRAPH_SCENES: u64 = 500;
const GRAPH_CANVAS: u32 = 64;
const GRAPH_MAX_INSTANCES: usize = 5;
/// Criterion 5: values with no exact binary form (3/5, 2/5) are compared
/// within this; identities are compared bit for bit.
const ROUNDING_TOL: f64 = 1e-15;
/// Criterion 6: mean within 2% of the midpoint, or of the interval width
/// when the midpoint is zero.
const PARAM_DRAWS: usize = 100_000;
const MEAN_REL_TOL: f64 = 0.02;
/// Criterion 7.
const DETERMINISM_SCENES: u64 = 24;
/// Criterion 10.
const THROUGHPUT_SCENES: u64 = 60;
const THROUGHPUT_MIN: f64 = 10.0;
const THROUGHPUT_CORES: usize = 4;

type Outcome = Result<String, String>;
type Criterion = fn(&mut Ctx) -> Outcome;
type Field = fn(&AugmentParams) -> f64;

struct Ctx {
    root: PathBuf,
    catalog_dir: PathBuf,
    catalog: ObjectCatalog,
    scenes: Vec<SceneAnnotation>,
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn c1_statement(_: &mut Ctx) -> Outcome {
    Ok("benchmark mPQ tables need trained networks and a human-annotated bin-picking set; \
        not reproduced, criteria 2-9 check properties instead"
        .into())
}

// ---------------------------------------------------------------- 2

fn independent_violations(s: &SceneAnnotation) -> usize {
    let mut bad = 0;
    let n = s.instances.len();
    for i in 0..n {
        let a = &s.instances[i];
        bad += (a.visible.intersection_count(&a.occluded).unwrap() > 0) as usize;
        for b in &s.instances[i + 1..] {
            bad += (a.visible.intersection_count(&b.visible).unwrap() > 0) as usize;
        }
        let mut later = BitMask::new(s.width, s.height);
        for b in &s.instances[i + 1..] {
            later.or_assign(&b.full()).unwrap();
        }
        bad += (a.occluded.diff(&later).unwrap().count() > 0) as usize;
    }
    bad
}

fn c2_partition(ctx: &mut Ctx) -> Outcome {
    let cfg = SceneConfig {
        master_seed: MASTER_SEED,
        n_instances: CountRange::new(1, 8),
        ..Default::default()
    };
    let backdrop = Backdrop::load(&cfg.background, cfg.width, cfg.height).map_err(err)?;
    let start = Instant::now();
    let results: Vec<_> = (0..PARTITION_SCENES)
        .into_par_iter()
        .map(|i| {
            let (_, scene) = synthesize_scene(&ctx.catalog, &cfg, &backdrop, i, derive_seed(cfg.master_seed, i))
                .expect("synthesis succeeds");
            let violations = scene.check_invariants().len();
            (scene, violations)
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let checker: usize = results.iter().map(|r| r.1).sum();
    let independent: usize = results.par_iter().map(|r| independent_violations(&r.0)).sum();
    let instances: usize = results.iter().map(|r| r.0.instances.len()).sum();
    ctx.scenes = results.into_iter().map(|r| r.0).collect();
    ensure!(checker == 0 && independent == 0, "{checker} checker / {independent} independent violations");
    ensure!(secs < PARTITION_BUDGET_S, "took {secs:.1} s, budget {PARTITION_BUDGET_S} s");
    Ok(format!(
        "{PARTITION_SCENES} scenes ({instances} instances) at 640x480, 0 violations, {secs:.1} s (< {PARTITION_BUDGET_S} s)"
    ))
}

// ---------------------------------------------------------------- 3

/// Random blob inside a random box; never empty.
fn blob(rng: &mut ChaCha8Rng, w: u32, h: u32, max_side: u32) -> BitMask {
    let bw = rng.random_range(2..=max_side.min(w));
    let bh = rng.random_range(2..=max_side.min(h));
    let x0 = rng.random_range(0..=w - bw);
    let y0 = rng.random_range(0..=h - bh);
    let fill = rng.random_range(0.6..=1.0);
    let mut m = BitMask::new(w, h);
    for y in y0..y0 + bh {
        for x in x0..x0 + bw {
            if rng.random_bool(fill) {
                m.set(x, y, true);
            }
        }
    }
    m.set(x0 + bw / 2, y0 + bh / 2, true);
    m
}

/// Stacks `fulls` in order; `None` if any instance ends fully hidden.
fn stack(id: u64, w: u32, h: u32, fulls: &[(String, BitMask)]) -> Option<SceneAnnotation> {
    let mut s = SceneAnnotation::new(id, w, h, 0);
    for (class, m) in fulls {
        let class_id = class.as_bytes()[0] as u32;
        s.place_instance(class, class_id, m.clone()).unwrap();
    }
    s.instances.iter().all(|i| i.visible.count() > 0).then_some(s)
}

fn perturb(rng: &mut ChaCha8Rng, m: &BitMask) -> BitMask {
    let (dx, dy) = (rng.random_range(-1..=1), rng.random_range(-1..=1));
    let mut out = m.translated(m.width(), m.height(), dx, dy);
    for _ in 0..rng.random_range(0..4) {
        let (x, y) = (rng.random_range(0..m.width()), rng.random_range(0..m.height()));
        out.set(x, y, !out.get(x, y));
    }
    out
}

fn metric_trial(rng: &mut ChaCha8Rng) -> (Vec<SceneAnnotation>, Vec<SceneAnnotation>) {
    const CLASSES: [&str; 3] = ["a", "b", "c"];
    let n = METRIC_CANVAS;
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for id in 0..rng.random_range(1..=3u64) {
        loop {
            let k = rng.random_range(0..=METRIC_MAX_INSTANCES);
            let gt_full: Vec<(String, BitMask)> = (0..k)
                .map(|_| (CLASSES[rng.random_range(0..3)].to_string(), blob(rng, n, n, 9)))
                .collect();
            let Some(gt) = stack(id, n, n, &gt_full) else { continue };
            let mut pred_full: Vec<(String, BitMask)> = Vec::new();
            for (class, m) in &gt_full {
                if rng.random_bool(0.75) {
                    let class = if rng.random_bool(0.1) { CLASSES[rng.random_range(0..3)] } else { class };
                    pred_full.push((class.to_string(), perturb(rng, m)));
                }
            }
            while pred_full.len() < METRIC_MAX_INSTANCES && rng.random_bool(0.3) {
                pred_full.push((CLASSES[rng.random_range(0..3)].to_string(), blob(rng, n, n, 7)));
            }
            pred_full.shuffle(rng);
            if pred_full.iter().any(|(_, m)| m.count() == 0) {
                continue;
            }
            let Some(pred) = stack(id, n, n, &pred_full) else { continue };
            gts.push(gt);
            preds.push(pred);
            break;
        }
    }
    (preds, gts)
}

/// Pixel grids for the oracle.
struct Grid {
    class: String,
    vis: Vec<bool>,
    occ: Vec<bool>,
}

fn grids(s: &SceneAnnotation) -> Vec<Grid> {
    s.instances
        .iter()
        .map(|i| {
            let cells = |m: &BitMask| (0..s.height).flat_map(|y| (0..s.width).map(move |x| (x, y))).map(|(x, y)| m.get(x, y)).collect();
            Grid {
                class: i.object_class.clone(),
                vis: cells(&i.visible),
                occ: cells(&i.occluded),
            }
        })
        .collect()
}

fn ratio_or_one(inter: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn pair_counts(a: &[bool], b: &[bool], keep: &[bool]) -> (usize, usize) {
    let mut inter = 0;
    let mut union = 0;
    for k in 0..a.len() {
        if keep[k] {
            inter += (a[k] && b[k]) as usize;
            union += (a[k] || b[k]) as usize;
        }
    }
    (inter, union)
}

fn oracle_miou(p: &Grid, g: &Grid, w: u32, h: u32, region: RegionPolicy) -> f64 {
    let n = (w * h) as usize;
    let pf: Vec<bool> = (0..n).map(|k| p.vis[k] || p.occ[k]).collect();
    let gf: Vec<bool> = (0..n).map(|k| g.vis[k] || g.occ[k]).collect();
    let keep: Vec<bool> = match region {
        RegionPolicy::FullImage => vec![true; n],
        RegionPolicy::BBox { margin } => {
            let covered: Vec<(i64, i64)> =
                (0..n).filter(|&k| pf[k] || gf[k]).map(|k| ((k as u32 % w) as i64, (k as u32 / w) as i64)).collect();
            let m = margin as i64;
            let x0 = covered.iter().map(|c| c.0).min().unwrap() - m;
            let x1 = covered.iter().map(|c| c.0).max().unwrap() + m;
            let y0 = covered.iter().map(|c| c.1).min().unwrap() - m;
            let y1 = covered.iter().map(|c| c.1).max().unwrap() + m;
            (0..n)
                .map(|k| {
                    let (x, y) = ((k as u32 % w) as i64, (k as u32 / w) as i64);
                    (x0..=x1).contains(&x) && (y0..=y1).contains(&y)
                })
                .collect()
        }
    };
    let pb: Vec<bool> = pf.iter().map(|v| !v).collect();
    let gb: Vec<bool> = gf.iter().map(|v| !v).collect();
    let iou = |a: &[bool], b: &[bool]| {
        let (i, u) = pair_counts(a, b, &keep);
        ratio_or_one(i, u)
    };
    (iou(&pb, &gb) + iou(&p.vis, &g.vis) + iou(&p.occ, &g.occ)) / 3.0
}

/// Every injective matching over IoU > 0.5 candidates; the best has the
/// most pairs, then the largest exact IoU sum.
fn exhaustive_matching(cands: &[Vec<Option<Ratio<i64>>>]) -> Vec<(usize, usize)> {
    fn go(
        p: usize,
        cands: &[Vec<Option<Ratio<i64>>>],
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        sum: Ratio<i64>,
        best: &mut (usize, Ratio<i64>, Vec<(usize, usize)>),
    ) {
        if p == cands.len() {
            if (cur.len(), sum) > (best.0, best.1) {
                *best = (cur.len(), sum, cur.clone());
            }
            return;
        }
        go(p + 1, cands, used, cur, sum, best);
        for g in 0..used.len() {
            if let (false, Some(r)) = (used[g], cands[p][g]) {
                used[g] = true;
                cur.push((p, g));
                go(p + 1, cands, used, cur, sum + r, best);
                cur.pop();
                used[g] = false;
            }
        }
    }
    let n_gt = cands.first().map_or(0, Vec::len);
    let mut best = (0, Ratio::from_integer(-1), Vec::new());
    go(0, cands, &mut vec![false; n_gt], &mut Vec::new(), Ratio::from_integer(0), &mut best);
    best.2
}

#[derive(Default)]
struct OracleClass {
    tp: u64,
    fp: u64,
    fn_count: u64,
    iou_sum: f64,
    miou_sum: f64,
}

fn oracle_report(preds: &[SceneAnnotation], gts: &[SceneAnnotation], region: RegionPolicy) -> BTreeMap<String, [f64; 8]> {
    let mut classes: BTreeMap<String, OracleClass> = BTreeMap::new();
    for s in preds.iter().chain(gts) {
        for i in &s.instances {
            classes.entry(i.object_class.clone()).or_default();
        }
    }
    for (pred, gt) in preds.iter().zip(gts) {
        let (pg, gg) = (grids(pred), grids(gt));
        for (class, acc) in classes.iter_mut() {
            let ps: Vec<&Grid> = pg.iter().filter(|g| &g.class == class).collect();
            let gs: Vec<&Grid> = gg.iter().filter(|g| &g.class == class).collect();
            let all = vec![true; (gt.width * gt.height) as usize];
            let cands: Vec<Vec<Option<Ratio<i64>>>> = ps
                .iter()
                .map(|p| {
                    gs.iter()
                        .map(|g| {
                            let (i, u) = pair_counts(&p.vis, &g.vis, &all);
                            (2 * i > u).then(|| Ratio::new(i as i64, u as i64))
                        })
                        .collect()
                })
                .collect();
            let matching = exhaustive_matching(&cands);
            acc.tp += matching.len() as u64;
            acc.fp += (ps.len() - matching.len()) as u64;
            acc.fn_count += (gs.len() - matching.len()) as u64;
            for &(p, g) in &matching {
                let (i, u) = pair_counts(&ps[p].vis, &gs[g].vis, &all);
                acc.iou_sum += i as f64 / u as f64;
                acc.miou_sum += oracle_miou(ps[p], gs[g], gt.width, gt.height, region);
            }
        }
    }
    classes
        .into_iter()
        .map(|(name, c)| {
            let (tp, fp, fn_count) = (c.tp as f64, c.fp as f64, c.fn_count as f64);
            let dq = if tp + fp + fn_count == 0.0 { 1.0 } else { tp / (tp + 0.5 * fp + 0.5 * fn_count) };
            let (sq, sqm) = if c.tp == 0 { (0.0, 0.0) } else { (c.iou_sum / tp, c.miou_sum / tp) };
            (name, [dq, sq, sqm, dq * sq, dq * sqm, tp, fp, fn_count])
        })
        .collect()
}

fn report_rows(r: &MetricReport) -> BTreeMap<String, [f64; 8]> {
    r.per_class
        .iter()
        .map(|(k, c)| {
            (k.clone(), [c.dq, c.sq, c.sq_multi, c.pq, c.pq_multi, c.tp as f64, c.fp as f64, c.fn_count as f64])
        })
        .collect()
}

fn c3_metric_oracle(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
    let mut worst = 0.0f64;
    let mut pairs = 0u64;
    for trial in 0..METRIC_TRIALS {
        let (preds, gts) = metric_trial(&mut rng);
        let region = if trial % 2 == 0 { RegionPolicy::BBox { margin: 8 } } else { RegionPolicy::FullImage };
        let report = evaluate(&preds, &gts, &EvalConfig { region }).map_err(err)?;
        let got = report_rows(&report);
        let want = oracle_report(&preds, &gts, region);
        ensure!(
            got.keys().eq(want.keys()),
            "trial {trial}: classes {:?} vs oracle {:?}",
            got.keys().collect::<Vec<_>>(),
            want.keys().collect::<Vec<_>>()
        );
        for (class, w) in &want {
            let g = &got[class];
            ensure!(g[5..] == w[5..], "trial {trial} class {class}: tp/fp/fn {:?} vs oracle {:?}", &g[5..], &w[5..]);
            for k in 0..5 {
                worst = worst.max((g[k] - w[k]).abs());
            }
            pairs += w[5] as u64;
        }
        let n = want.len() as f64;
        let mean = |k: usize| if want.is_empty() { 1.0 } else { want.values().map(|v| v[k]).sum::<f64>() / n };
        let m = &report.means;
        for (got, k) in [(m.m_dq, 0), (m.m_sq, 1), (m.m_sq_multi, 2), (m.m_pq, 3), (m.m_pq_multi, 4)] {
            worst = worst.max((got - mean(k)).abs());
        }
        ensure!(report.n_scenes == gts.len(), "trial {trial}: n_scenes {}", report.n_scenes);
        ensure!(worst <= ORACLE_TOL, "trial {trial}: deviation {worst:e} > {ORACLE_TOL:e}");
    }
    Ok(format!("{METRIC_TRIALS} trials, {pairs} matched pairs, max deviation {worst:.1e} (tol {ORACLE_TOL:e})"))
}

// ---------------------------------------------------------------- 4

fn perfect(r: &MetricReport) -> bool {
    let m = &r.means;
    [m.m_pq, m.m_dq, m.m_sq, m.m_sq_multi, m.m_pq_multi].iter().all(|&v| v == 1.0)
}

fn c4_self_evaluation(ctx: &mut Ctx) -> Outcome {
    let mut datasets = vec![("criterion-2 scenes".to_string(), ctx.scenes.clone())];
    for (k, dup) in [(1u64, true), (2, false), (3, true)] {
        let cfg = SceneConfig {
            width: 320,
            height: 240,
            master_seed: MASTER_SEED + k,
            allow_duplicates: dup,
            n_instances: CountRange::new(0, 8),
            ..Default::default()
        };
        let backdrop = Backdrop::load(&cfg.background, cfg.width, cfg.height).map_err(err)?;
        let scenes = (0..100)
            .map(|i| synthesize_scene(&ctx.catalog, &cfg, &backdrop, i, derive_seed(cfg.master_seed, i)).map(|r| r.1))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        datasets.push((format!("seed {}", cfg.master_seed), scenes));
    }
    for (name, scenes) in &datasets {
        for region in [RegionPolicy::BBox { margin: 8 }, RegionPolicy::FullImage] {
            let r = evaluate(scenes, scenes, &EvalConfig { region }).map_err(err)?;
            ensure!(perfect(&r), "{name} {region:?}: {:?}", r.means);
        }
    }

    // Through the binary and the on-disk format.
    let out = ctx.root.join("c4");
    let status = common::run(&[
        "synth", "--catalog", ctx.catalog_dir.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--n-scenes", "20", "--seed", "4",
    ]);
    ensure!(status.status.success(), "synth failed: {}", String::from_utf8_lossy(&status.stderr));
    let report_path = out.join("report.json");
    let d = out.to_str().unwrap();
    let eval = common::run(&["eval", "--gt", d, "--pred", d, "--out", report_path.to_str().unwrap()]);
    ensure!(eval.status.success(), "eval failed: {}", String::from_utf8_lossy(&eval.stderr));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report_path).map_err(err)?).map_err(err)?;
    for key in ["mPQ", "mDQ", "mSQ", "mSQ_multi", "mPQ_multi"] {
        ensure!(json["means"][key] == 1.0, "cli {key} = {}", json["means"][key]);
    }
    Ok(format!("{} datasets x 2 regions plus a cli round trip: all means exactly 1.0", datasets.len()))
}

// ---------------------------------------------------------------- 5

fn row(w: u32, x0: u32, x1: u32, y: u32) -> BitMask {
    BitMask::from_rect(w, 16, BoundingBox::new(x0, y, x1, y + 1))
}

fn c5_formulas(_: &mut Ctx) -> Outcome {
    let r = |n, d| Ratio::<i64>::new(n, d);
    ensure!(detection_quality(2, 1, 1) == 2.0 / 3.0, "DQ(2,1,1) = {}", detection_quality(2, 1, 1));
    ensure!(r(2, 1) / (r(2, 1) + r(1, 2) + r(1, 2)) == r(2, 3), "exact DQ");

    // Two TPs with visible IoU 6/10 and 8/10, one FP, one FN.
    let mut gt = SceneAnnotation::new(0, 16, 16, 0);
    let mut pred = SceneAnnotation::new(0, 16, 16, 0);
    for y in [0, 2, 4] {
        gt.place_instance("a", 0, row(16, 0, 10, y)).unwrap();
    }
    pred.place_instance("a", 0, row(16, 0, 6, 0)).unwrap();
    pred.place_instance("a", 0, row(16, 0, 8, 2)).unwrap();
    pred.place_instance("a", 0, row(16, 0, 10, 9)).unwrap();
    let rep = evaluate(&[pred], &[gt], &EvalConfig::default()).map_err(err)?;
    let a = &rep.per_class["a"];
    ensure!((a.tp, a.fp, a.fn_count) == (2, 1, 1), "counts {:?}", (a.tp, a.fp, a.fn_count));
    ensure!(a.dq == 2.0 / 3.0, "DQ {}", a.dq);
    ensure!(a.sq == 0.7, "SQ {}", a.sq);
    ensure!(a.pq.to_bits() == (a.dq * a.sq).to_bits(), "PQ != DQ*SQ");

    // One TP with mIoU (6/10 + 1 + 1/5)/3 = 3/5 on an 11x1 canvas, one FP.
    ensure!((r(6, 10) + r(1, 1) + r(1, 5)) / 3 == r(3, 5), "exact mIoU");
    ensure!(r(2, 3) * r(3, 5) == r(2, 5), "exact PQ_multi");
    let mut gt = SceneAnnotation::new(0, 11, 1, 0);
    let mut pred = SceneAnnotation::new(0, 11, 1, 0);
    let seg = |x0, x1| BitMask::from_rect(11, 1, BoundingBox::new(x0, 0, x1, 1));
    gt.place_instance("a", 0, seg(0, 10)).unwrap();
    pred.place_instance("a", 0, seg(0, 6)).unwrap();
    pred.place_instance("a", 0, seg(9, 11)).unwrap();
    let rep = evaluate(&[pred], &[gt], &EvalConfig { region: RegionPolicy::FullImage }).map_err(err)?;
    let a = &rep.per_class["a"];
    ensure!((a.tp, a.fp, a.fn_count) == (1, 1, 0), "counts {:?}", (a.tp, a.fp, a.fn_count));
    ensure!(a.dq == 2.0 / 3.0, "DQ {}", a.dq);
    ensure!((a.sq_multi - 0.6).abs() <= ROUNDING_TOL, "SQ_multi {}", a.sq_multi);
    ensure!(a.pq_multi.to_bits() == (a.dq * a.sq_multi).to_bits(), "PQ_multi != DQ*SQ_multi");
    ensure!((a.pq_multi - 0.4).abs() <= ROUNDING_TOL, "PQ_multi {}", a.pq_multi);
    Ok(format!(
        "DQ(2,1,1) = 2/3, SQ{{0.6,0.8}} = 0.7, PQ_multi = (2/3)(3/5) = 2/5 exact as rationals; f64 PQ_multi = {:?} (tol {ROUNDING_TOL:e})",
        a.pq_multi
    ))
}

// ---------------------------------------------------------------- 6

fn c6_augment_ranges(_: &mut Ctx) -> Outcome {
    let ranges = AugmentRanges::default();
    let expected: [(&str, Interval, Field); 8] = [
        ("hsv_s_scale", Interval::new(0.5, 2.0), |p| p.hsv_s_scale),
        ("hsv_v_scale", Interval::new(0.5, 2.0), |p| p.hsv_v_scale),
        ("affine_scale", Interval::new(0.5, 1.0), |p| p.affine_scale),
        ("translate_x", Interval::new(-16.0, 16.0), |p| p.translate_x),
        ("translate_y", Interval::new(-16.0, 16.0), |p| p.translate_y),
        ("rotate", Interval::new(-180.0, 180.0), |p| p.rotate),
        ("shear", Interval::new(-16.0, 16.0), |p| p.shear),
        ("blend_sigma", Interval::new(0.0, 1.0), |p| p.blend_sigma),
    ];
    let mut rng = rng_from_seed(MASTER_SEED);
    let draws: Vec<AugmentParams> = (0..PARAM_DRAWS).map(|_| sample_params(&mut rng, &ranges)).collect();
    let mut worst = 0.0f64;
    for (name, iv, get) in expected {
        ensure!(draws.iter().all(|p| iv.contains(get(p))), "{name} left [{}, {}]", iv.lo, iv.hi);
        let mean = draws.iter().map(get).sum::<f64>() / PARAM_DRAWS as f64;
        let mid = iv.midpoint();
        let scale = if mid == 0.0 { iv.hi - iv.lo } else { mid.abs() };
        let rel = (mean - mid).abs() / scale;
        worst = worst.max(rel);
        ensure!(rel <= MEAN_REL_TOL, "{name}: mean {mean} vs midpoint {mid}");
    }
    Ok(format!("{PARAM_DRAWS} draws in range, worst mean offset {:.3}% (tol {}%)", worst * 100.0, MEAN_REL_TOL * 100.0))
}

// ---------------------------------------------------------------- 7

fn synth_with_jobs(ctx: &Ctx, config: &Path, out: &Path, jobs: &str) -> Result<(), String> {
    let res = common::occlusynth()
        .args(["synth", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args(["--n-scenes", &DETERMINISM_SCENES.to_string(), "--jobs", jobs])
        .current_dir(&ctx.root)
        .output()
        .map_err(err)?;
    ensure!(res.status.success(), "synth --jobs {jobs}: {}", String::from_utf8_lossy(&res.stderr));
    Ok(())
}

fn c7_determinism(ctx: &mut Ctx) -> Outcome {
    let config = ctx.root.join("c7.toml");
    fs::write(&config, format!("catalog = \"catalog\"\nmaster_seed = {MASTER_SEED}\n")).map_err(err)?;
    let (a, b) = (ctx.root.join("c7_jobs1"), ctx.root.join("c7_jobs8"));
    synth_with_jobs(ctx, &config, &a, "1")?;
    synth_with_jobs(ctx, &config, &b, "8")?;
    let (ta, tb) = (common::tree(&a), common::tree(&b));
    ensure!(ta.len() as u64 == 2 * DETERMINISM_SCENES + 2, "{} files", ta.len());
    let names = |t: &[(String, Vec<u8>)]| t.iter().map(|e| e.0.clone()).collect::<Vec<_>>();
    ensure!(names(&ta) == names(&tb), "file lists differ");
    for ((name, x), (_, y)) in ta.iter().zip(&tb) {
        ensure!(x == y, "{name} differs");
    }
    let bytes: usize = ta.iter().map(|e| e.1.len()).sum();
    Ok(format!("{} files, {bytes} bytes identical at --jobs 1 and --jobs 8", ta.len()))
}

// ---------------------------------------------------------------- 8

fn c8_planner_scenario(ctx: &mut Ctx) -> Outcome {
    let (w, h) = (160, 120);
    let rect = |x0, y0, x1, y1| BitMask::from_rect(w, h, BoundingBox::new(x0, y0, x1, y1));
    let mut scene = SceneAnnotation::new(0, w, h, 0);
    let base = scene.place_instance("binder", 0, rect(10, 60, 150, 115)).unwrap();
    let target = scene.place_instance("dumbbell", 2, rect(40, 40, 110, 80)).unwrap();
    let occluder = scene.place_instance("holder", 4, rect(70, 30, 130, 70)).unwrap();
    ensure!(scene.check_invariants().is_empty(), "scene breaks invariants");
    let ratio = occlusion_ratio(scene.instance(target).unwrap()).map_err(err)?;
    ensure!(ratio > 0.3, "target ratio {ratio}");

    let plan = plan_for_class(&scene, "dumbbell", &PlanOptions::default()).map_err(err)?;
    ensure!(plan.plan.order == vec![occluder, target], "order {:?}", plan.plan.order);
    ensure!(!plan.plan.order.contains(&base), "base in plan");

    // Executing the plan clears the target.
    let mut cover = BitMask::new(w, h);
    let full = scene.instance(target).unwrap().full();
    for inst in scene.instances.iter().skip_while(|i| i.instance_id != target).skip(1) {
        if !plan.plan.order.contains(&inst.instance_id) {
            cover.or_assign(&inst.full()).unwrap();
        }
    }
    let residual = full.intersection_count(&cover).unwrap() as f64 / full.count() as f64;
    ensure!(residual <= 0.3, "residual {residual}");

    // Same answer through the binary.
    let ann = ctx.root.join("c8.json");
    fs::write(&ann, serde_json::to_vec(&SceneRecord::from(&scene)).unwrap()).map_err(err)?;
    let out = common::run(&["plan", "--annotation", ann.to_str().unwrap(), "--target-class", "dumbbell"]);
    ensure!(out.status.success(), "plan failed: {}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(err)?;
    ensure!(json["order"] == serde_json::json!([occluder, target]), "cli order {}", json["order"]);
    ensure!(json["target"] == target, "cli target {}", json["target"]);
    Ok(format!(
        "target ratio {ratio:.3}; plan [holder, dumbbell] = {:?}, binder excluded; statements {:?}",
        plan.plan.order, plan.statements
    ))
}

// ---------------------------------------------------------------- 9

fn c9_graph_oracle(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED ^ 9);
    let n = GRAPH_CANVAS;
    let mut edges_seen = 0;
    let mut worst = 0.0f64;
    for scene_id in 0..GRAPH_SCENES {
        let k = rng.random_range(1..=GRAPH_MAX_INSTANCES);
        let fulls: Vec<BitMask> = (0..k).map(|_| blob(&mut rng, n, n, 40)).collect();
        let mut scene = SceneAnnotation::new(scene_id, n, n, 0);
        for m in &fulls {
            scene.place_instance("x", 0, m.clone()).unwrap();
        }
        let ids: Vec<u32> = scene.instances.iter().map(|i| i.instance_id).collect();
        // Topmost owner per pixel from placement order alone.
        let mut owner = vec![usize::MAX; (n * n) as usize];
        for (j, m) in fulls.iter().enumerate() {
            for y in 0..n {
                for x in 0..n {
                    if m.get(x, y) {
                        owner[(y * n + x) as usize] = j;
                    }
                }
            }
        }
        for threshold in [0.1, 0.0] {
            let mut want = BTreeMap::new();
            for (i, m) in fulls.iter().enumerate() {
                let mut tally = vec![0u64; k];
                let mut area = 0u64;
                for y in 0..n {
                    for x in 0..n {
                        if m.get(x, y) {
                            area += 1;
                            let j = owner[(y * n + x) as usize];
                            if j != i {
                                tally[j] += 1;
                            }
                        }
                    }
                }
                for (j, &c) in tally.iter().enumerate() {
                    let wgt = c as f64 / area as f64;
                    if c > 0 && wgt > threshold {
                        want.insert((ids[i], ids[j]), wgt);
                    }
                }
            }
            let graph = build_graph(&scene, threshold);
            let got: BTreeMap<(u32, u32), f64> = graph.edges.iter().map(|e| ((e.occludee, e.occluder), e.weight)).collect();
            ensure!(
                got.keys().eq(want.keys()),
                "scene {scene_id} threshold {threshold}: edges {:?} vs oracle {:?}",
                got.keys().collect::<Vec<_>>(),
                want.keys().collect::<Vec<_>>()
            );
            for (key, w) in &want {
                worst = worst.max((got[key] - w).abs());
            }
            ensure!(worst <= ORACLE_TOL, "scene {scene_id}: weight deviation {worst:e}");
            ensure!(graph.nodes == ids, "scene {scene_id}: nodes {:?}", graph.nodes);
            if threshold == 0.1 {
                edges_seen += want.len();
            }
        }
    }
    Ok(format!(
        "{GRAPH_SCENES} scenes at {n}x{n}, {edges_seen} edges at threshold 0.1, max weight deviation {worst:.1e} (tol {ORACLE_TOL:e})"
    ))
}

// ---------------------------------------------------------------- 10

fn c10_throughput(ctx: &mut Ctx) -> Outcome {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let jobs = cores.min(THROUGHPUT_CORES);
    let config = ctx.root.join("c10.toml");
    fs::write(&config, "catalog = \"catalog\"\nn_instances = { min = 8, max = 8 }\n").map_err(err)?;
    let out = ctx.root.join("c10");
    let start = Instant::now();
    let res = common::occlusynth()
        .args(["synth", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args(["--n-scenes", &THROUGHPUT_SCENES.to_string(), "--jobs", &jobs.to_string()])
        .output()
        .map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(res.status.success(), "synth failed: {}", String::from_utf8_lossy(&res.stderr));
    let rate = THROUGHPUT_SCENES as f64 / secs;
    let detail = format!(
        "{rate:.1} scenes/s at 640x480 with 8 instances on {jobs} of {cores} available cores (target {THROUGHPUT_MIN} on {THROUGHPUT_CORES})"
    );
    ensure!(rate >= THROUGHPUT_MIN, "{detail}");
    Ok(detail)
}

fn main() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let root = tmp.path().to_path_buf();
    let catalog_dir = common::write_catalog(&root);
    let catalog = load_catalog(&catalog_dir, &ForegroundConfig::default()).expect("catalog loads");
    let mut ctx = Ctx {
        root,
        catalog_dir,
        catalog,
        scenes: Vec::new(),
    };
    let criteria: [(&str, Criterion); 10] = [
        ("reproducibility statement", c1_statement),
        ("partition invariants", c2_partition),
        ("metric oracle", c3_metric_oracle),
        ("self-evaluation identity", c4_self_evaluation),
        ("formula pins", c5_formulas),
        ("augmentation ranges", c6_augment_ranges),
        ("determinism across --jobs", c7_determinism),
        ("planner scenario", c8_planner_scenario),
        ("occlusion-graph oracle", c9_graph_oracle),
        ("throughput", c10_throughput),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut ctx)))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {:>2} {name}: {detail} [{secs:.1}s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:>2} {name}: {detail} [{secs:.1}s]", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
