//! End-to-end acceptance checks. Every test prints one `criterion N:` line
//! with its verdict before asserting.

mod common;

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use hpm::config::{EvaluationConfig, RunConfig};
use hpm::detection::{box_overlap, detect, DetectionConfig, Detection};
use hpm::eval::{detection_pr, occlusion_pr_sweep, SweepPoint, DEFAULT_SUCCESS_THRESHOLD};
use hpm::features::{default_rotations, FeatureLevel};
use hpm::geometry::BBox;
use hpm::inference::{gdt_1d, gdt_2d, infer, infer_augmented, infer_naive, infer_with, InferenceOptions, UnaryResponses};
use hpm::model::{
    assemble_feature_vector, model_to_string, score_configuration, Component, Configuration, Mixture, Model, NodeState,
    StateSpace, Topology,
};
use hpm::supervision::{
    generate_virtual_positives, sample_quadrant_occlusion, supervise, DatasetManifest, ReferenceShapeSet,
    SupervisionConfig,
};
use hpm::synth::{PlantedConfig, PlantedDataset, PlantedGenerator};
use hpm::training::{delta_occlusion, list_images, train, NegativeCache, TrainingConfig};
use hpm::NEG_INF;
use rand::prelude::*;

fn verdict(n: usize, pass: bool, detail: &str) {
    println!("criterion {n}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

// ---------------------------------------------------------------------------
// 1. distance transforms against brute force

fn brute_1d(f: &[f64], w1: f64, w2: f64) -> (Vec<f64>, Vec<usize>) {
    let n = f.len();
    let mut val = vec![NEG_INF; n];
    let mut arg = vec![0; n];
    for p in 0..n {
        for q in 0..n {
            let d = p as f64 - q as f64;
            let v = f[q] + w1 * d + w2 * (d * d);
            if v > val[p] {
                val[p] = v;
                arg[p] = q;
            }
        }
    }
    (val, arg)
}

#[test]
fn criterion_01_distance_transform_oracle() {
    let start = Instant::now();
    let mut r = rng(101);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = r.gen_range(1..=256);
        let f: Vec<f64> = (0..n)
            .map(|_| if r.gen_bool(0.05) { NEG_INF } else { r.gen_range(-10.0..10.0) })
            .collect();
        let w1 = r.gen_range(-2.0..2.0);
        let w2 = if r.gen_bool(0.1) { 0.0 } else { -r.gen_range(0.001..3.0) };
        let (val, arg) = gdt_1d(&f, w1, w2).unwrap();
        let (bv, ba) = brute_1d(&f, w1, w2);
        for p in 0..n {
            let same_val = (val[p] == NEG_INF && bv[p] == NEG_INF) || (val[p] - bv[p]).abs() <= 1e-9;
            let same_arg = bv[p] == NEG_INF || arg[p] == ba[p];
            if !(same_val && same_arg) {
                mismatches += 1;
            }
        }
    }
    for _ in 0..100 {
        let (w, h) = (16usize, 16usize);
        let g: Vec<f64> = (0..w * h).map(|_| r.gen_range(-10.0..10.0)).collect();
        let wx1 = r.gen_range(-2.0..2.0);
        let wy1 = r.gen_range(-2.0..2.0);
        let wx2 = -r.gen_range(0.001..3.0);
        let wy2 = -r.gen_range(0.001..3.0);
        let (val, arg) = gdt_2d(&g, w, h, wx1, wx2, wy1, wy2).unwrap();
        for py in 0..h {
            for px in 0..w {
                let mut best = (NEG_INF, (0, 0));
                for qy in 0..h {
                    for qx in 0..w {
                        let dx = px as f64 - qx as f64;
                        let dy = py as f64 - qy as f64;
                        let v = g[qy * w + qx] + wx1 * dx + wx2 * (dx * dx) + wy1 * dy + wy2 * (dy * dy);
                        if v > best.0 {
                            best = (v, (qy, qx));
                        }
                    }
                }
                let i = py * w + px;
                if (val[i] - best.0).abs() > 1e-9 || arg[i] != best.1 {
                    mismatches += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && elapsed < Duration::from_secs(10);
    verdict(1, pass, &format!("{mismatches} mismatches, {elapsed:.2?}"));
    assert_eq!(mismatches, 0);
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
}

// ---------------------------------------------------------------------------
// 2. factored inference against exhaustive search

#[test]
fn criterion_02_inference_oracle() {
    let start = Instant::now();
    let mut r = rng(202);
    let mut failures = Vec::new();
    for trial in 0..200 {
        let model = random_small_model(&mut r, 2, 2, 1 + 2 * (trial % 2));
        assert_eq!(model.component(0).topology.num_parts(), 2);
        assert_eq!(model.component(0).topology.num_landmarks(), 3);
        let level = random_level(&mut r, 8, 8);
        for m in [0.0, 0.25, 0.5] {
            let fast = infer_augmented(&model, 0, &level, m).unwrap();
            let slow = infer_naive(&model, 0, &level, m).unwrap();
            let ok = match fast.best(&model) {
                None => slow.score == NEG_INF,
                Some((score, cfg)) => {
                    let q = score_configuration(&model, &level, &cfg).unwrap();
                    let objective = q - m * cfg.occluded_fraction(&model);
                    (score - slow.score).abs() <= 1e-9
                        && Some(&cfg) == slow.config.as_ref()
                        && (objective - score).abs() <= 1e-9
                }
            };
            if !ok {
                failures.push((trial, m));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    verdict(2, pass, &format!("{} disagreements over 600 runs, {elapsed:.2?}", failures.len()));
    assert!(failures.is_empty(), "{failures:?}");
    assert!(elapsed < Duration::from_secs(120));
}

// ---------------------------------------------------------------------------
// 3. joint feature map against an independent score

/// Random configuration of component 0 with occluded landmarks at their
/// anchors.
fn random_configuration(r: &mut impl Rng, model: &Model, level: &FeatureLevel) -> Configuration {
    let comp = model.component(0);
    let topo = &comp.topology;
    let (sv, o) = (comp.num_states(), comp.num_occlusions());
    let parts: Vec<NodeState> = (0..topo.num_parts())
        .map(|_| NodeState {
            x: r.gen_range(0..level.width as i64),
            y: r.gen_range(0..level.height as i64),
            state: r.gen_range(0..sv),
            occlusion: r.gen_range(0..o),
        })
        .collect();
    let landmarks = (0..topo.num_landmarks())
        .map(|k| {
            let p = parts[topo.part_of(k)];
            let (x, y) = if comp.occluded(k, p.state, p.occlusion) {
                let a = comp.landmark_anchors[k][p.state];
                (p.x + a[0], p.y + a[1])
            } else {
                (r.gen_range(0..level.width as i64), r.gen_range(0..level.height as i64))
            };
            NodeState { x, y, ..p }
        })
        .collect();
    Configuration {
        component: 0,
        level: 0,
        rotation: 0,
        parts,
        landmarks,
    }
}

/// Score written out term by term from the parameter accessors.
fn reference_score(model: &Model, level: &FeatureLevel, cfg: &Configuration) -> f64 {
    let comp = model.component(0);
    let topo = &comp.topology;
    let w = model.params();
    let spring = |at: usize, child: &NodeState, parent: &NodeState, anchor: [i64; 2]| {
        let dx = (child.x - parent.x - anchor[0]) as f64;
        let dy = (child.y - parent.y - anchor[1]) as f64;
        w[at] * dx + w[at + 1] * dy + w[at + 2] * dx * dx + w[at + 3] * dy * dy
    };
    let mut total = w[comp.offset()];
    for p in 0..topo.num_parts() {
        if let Some(q) = topo.parent(p) {
            let (n, par) = (&cfg.parts[p], &cfg.parts[q]);
            total += w[comp.part_bias(p, par.state, n.state, par.occlusion, n.occlusion)];
            total += spring(comp.part_spring(p, n.state), n, par, comp.part_anchors[p][n.state]);
        }
    }
    for k in 0..topo.num_landmarks() {
        let (n, par) = (&cfg.landmarks[k], &cfg.parts[topo.part_of(k)]);
        total += w[comp.landmark_bias(k, n.state, n.occlusion)];
        total += spring(comp.landmark_spring(k, n.state), n, par, comp.landmark_anchors[k][n.state]);
        if !comp.occluded(k, n.state, n.occlusion) {
            let (th, tw) = (comp.template_h as i64, comp.template_w as i64);
            let t = model.template(0, k, n.state);
            let mut i = 0;
            for ty in 0..th {
                for tx in 0..tw {
                    let (cx, cy) = (n.x + tx - tw / 2, n.y + ty - th / 2);
                    for c in 0..hpm::features::HOG_DIM {
                        if level.contains(cx, cy) {
                            total += t[i] * level.cell(cx as usize, cy as usize)[c] as f64;
                        }
                        i += 1;
                    }
                }
            }
        }
    }
    total
}

#[test]
fn criterion_03_feature_map_consistency() {
    let mut r = rng(303);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 1000 {
        let model = random_small_model(&mut r, 2, 2, 3);
        let level = random_level(&mut r, 8, 7);
        for _ in 0..50 {
            let cfg = random_configuration(&mut r, &model, &level);
            let q = score_configuration(&model, &level, &cfg).unwrap();
            if q == NEG_INF {
                continue;
            }
            let psi = assemble_feature_vector(&model, &level, &cfg).unwrap();
            let wpsi = psi.dot(model.params());
            let reference = reference_score(&model, &level, &cfg);
            worst = worst.max((wpsi - q).abs()).max((q - reference).abs());
            checked += 1;
        }
    }
    let pass = worst <= 1e-9;
    verdict(3, pass, &format!("max |w.psi - Q| = {worst:.2e} over {checked} configurations"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 4. margin scaling

#[test]
fn criterion_04_margin_scaling() {
    let full = delta_occlusion(&[true; 68]);
    let default_m = TrainingConfig::default().margin;
    let mut cache: NegativeCache<u32> = NegativeCache::new(default_m);
    cache.push(0, Default::default(), full);
    let stored = cache.windows()[0].constraints[0].margin;

    let mut r = rng(404);
    let mut coincide = true;
    for _ in 0..40 {
        let model = random_small_model(&mut r, 2, 2, 3);
        let level = random_level(&mut r, 8, 8);
        let plain = infer(&model, 0, &level).unwrap();
        let aug = infer_augmented(&model, 0, &level, 0.0).unwrap();
        coincide &= plain.root_scores() == aug.root_scores();
        coincide &= plain.best(&model) == aug.best(&model);
        for _ in 0..20 {
            let cfg = random_configuration(&mut r, &model, &level);
            let q = score_configuration(&model, &level, &cfg).unwrap();
            let augmented = q - 0.0 * cfg.occluded_fraction(&model);
            coincide &= q == augmented;
        }
    }
    let pass = full == 1.0 && default_m == 0.5 && stored == 1.0 - default_m && coincide;
    verdict(
        4,
        pass,
        &format!("delta(full) = {full}, m = {default_m}, stored margin = {stored}, m=0 objectives coincide: {coincide}"),
    );
    assert_eq!(full, 1.0);
    assert_eq!(default_m, 0.5);
    assert_eq!(stored, 0.5);
    assert!(coincide);
}

// ---------------------------------------------------------------------------
// 5. occlusion coherence

/// Whether some quarter-plane cut produces exactly `mask`. For the quadrant
/// below-left of the cut the tightest cut sits just past the occluded
/// extremes, so the mask is reachable iff no visible point lies inside
/// that corner; the other quadrants follow by flipping axes.
fn quadrant_reachable(points: &[[f64; 2]], mask: &[bool]) -> bool {
    if !mask.iter().any(|&m| m) {
        return true;
    }
    [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)].iter().any(|&(sx, sy)| {
        let pts: Vec<[f64; 2]> = points.iter().map(|p| [sx * p[0], sy * p[1]]).collect();
        let mx = pts.iter().zip(mask).filter(|(_, &m)| m).map(|(p, _)| p[0]).fold(NEG_INF, f64::max);
        let my = pts.iter().zip(mask).filter(|(_, &m)| m).map(|(p, _)| p[1]).fold(NEG_INF, f64::max);
        pts.iter().zip(mask).all(|(p, &m)| m || !(p[0] <= mx && p[1] <= my))
    })
}

#[test]
fn criterion_05_occlusion_coherence() {
    let mut layouts: Vec<Vec<[f64; 2]>> = ReferenceShapeSet::default_face(3)
        .shapes
        .into_iter()
        .map(|s| s.points)
        .collect();
    let mut r = rng(505);
    for _ in 0..3 {
        layouts.push((0..20).map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect());
    }
    let mut violations = 0;
    let mut sampled = 0;
    for pts in &layouts {
        for _ in 0..10_000 {
            let mask = sample_quadrant_occlusion(pts, &mut r);
            sampled += 1;
            if !quadrant_reachable(pts, &mask) {
                violations += 1;
            }
        }
    }
    let virtuals = generate_virtual_positives(&layouts[0], None, SupervisionConfig::default().virtual_positives, &mut r);

    let tmp = tempfile::tempdir().unwrap();
    let gen = PlantedGenerator::new(PlantedConfig::default()).unwrap();
    let ds = gen.write_dataset(tmp.path(), 4, 0, 0).unwrap();
    let run = gen.run_config();
    let sup = supervise(
        &DatasetManifest::load(&ds.train).unwrap(),
        &gen.reference_shapes(),
        &Topology::face68(),
        &run.supervision,
    )
    .unwrap();
    let per_source: Vec<usize> = (0..4)
        .map(|s| sup.examples.iter().filter(|e| e.source == s && e.virtual_index > 0).count())
        .collect();

    let pass = violations == 0 && virtuals.len() == 9 && per_source.iter().all(|&c| c == 8);
    verdict(
        5,
        pass,
        &format!(
            "{violations} violations over {sampled} masks, {} virtual positives per face",
            per_source[0]
        ),
    );
    assert_eq!(violations, 0);
    assert_eq!(virtuals.len(), 9);
    assert_eq!(per_source, vec![8; 4]);
}

// ---------------------------------------------------------------------------
// 6 and 7. planted model end to end

const PLANTED_TRAIN: usize = 200;
const PLANTED_TEST: usize = 100;
const PLANTED_NEGATIVES: usize = 40;

struct Planted {
    _dir: tempfile::TempDir,
    dataset: PlantedDataset,
    run: RunConfig,
    test: DatasetManifest,
    model: Model,
    /// Data generation, supervision and training.
    build_time: Duration,
}

fn planted() -> &'static Planted {
    static PLANTED: OnceLock<Planted> = OnceLock::new();
    PLANTED.get_or_init(|| {
        let start = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let gen = PlantedGenerator::new(PlantedConfig::default()).unwrap();
        let dataset = gen
            .write_dataset(dir.path(), PLANTED_TRAIN, PLANTED_TEST, PLANTED_NEGATIVES)
            .unwrap();
        let run = RunConfig::load(&dataset.config).unwrap();
        assert_eq!((run.supervision.shapes, run.supervision.occlusions), (3, 4));
        let model = train_planted(&dataset, &run, run.training.margin);
        let test = DatasetManifest::load(&dataset.test).unwrap();
        Planted {
            _dir: dir,
            dataset,
            run,
            test,
            model,
            build_time: start.elapsed(),
        }
    })
}

fn train_planted(dataset: &PlantedDataset, run: &RunConfig, margin: f64) -> Model {
    let manifest = DatasetManifest::load(&dataset.train).unwrap();
    let sup = supervise(&manifest, &run.references().unwrap(), &run.topology().unwrap(), &run.supervision).unwrap();
    let negatives = list_images(&dataset.negatives).unwrap();
    let config = TrainingConfig {
        margin,
        ..run.training.clone()
    };
    train(&sup, &negatives, &config, |_, _| Ok(())).unwrap().model
}

fn sweep(p: &Planted, model: &Model, alphas: &[f64]) -> Vec<SweepPoint> {
    occlusion_pr_sweep(
        model,
        &p.test.examples,
        alphas,
        &p.run.detection,
        &p.run.supervision.eyes,
        p.run.evaluation.success_threshold,
    )
    .unwrap()
}

fn detection_ap(p: &Planted) -> f64 {
    let mut dets = Vec::new();
    let mut truths = Vec::new();
    for face in &p.test.examples {
        let img = hpm::features::Image::load(&face.image).unwrap();
        let found: Vec<Detection> = detect(&p.model, &img, &p.run.detection).unwrap();
        dets.push(found.iter().map(|d| (d.score, d.bbox)).collect::<Vec<_>>());
        let occluded = face.occluded.as_ref().unwrap().iter().any(|&o| o);
        truths.push(vec![(face.bbox.unwrap(), occluded)]);
    }
    detection_pr(&dets, &truths, 0.5).unwrap().ap
}

#[test]
fn criterion_06_planted_model_recovery() {
    let p = planted();
    let start = Instant::now();
    let ap = detection_ap(p);
    let at_zero = &sweep(p, &p.model, &[0.0])[0];
    let elapsed = p.build_time + start.elapsed();
    let error = at_zero.localization.mean_error;
    let f1 = at_zero.f1;
    let pass = ap >= 0.95 && error <= 0.05 && f1 >= 0.8 && elapsed <= Duration::from_secs(1800);
    verdict(
        6,
        pass,
        &format!(
            "AP {ap:.4} (>= 0.95), mean error {error:.4} (<= 0.05), occlusion F1 {f1:.4} (>= 0.8; precision {:.4}, recall {:.4}), {} failures, {elapsed:.0?}",
            at_zero.precision, at_zero.recall, at_zero.failures
        ),
    );
    assert!(ap >= 0.95, "AP {ap}");
    assert!(error <= 0.05, "mean error {error}");
    assert!(elapsed <= Duration::from_secs(1800), "took {elapsed:?}");
    assert!(f1 >= 0.8, "occlusion F1 {f1}");
}

#[test]
fn criterion_07_margin_effect() {
    let p = planted();
    let alphas = EvaluationConfig::default().alphas;
    assert_eq!(alphas, vec![0.0, 0.5, 1.0, 2.0]);
    let scaled = sweep(p, &p.model, &alphas);
    let plain_model = train_planted(&p.dataset, &p.run, 0.0);
    let plain = sweep(p, &plain_model, &alphas);
    let degradation = |pts: &[SweepPoint]| {
        let base = pts[0].localization.mean_error;
        pts.iter().map(|q| q.localization.mean_error - base).fold(0.0, f64::max)
    };
    let (rs, r0) = (scaled[0].recall, plain[0].recall);
    let (ds, d0) = (degradation(&scaled), degradation(&plain));
    let pass = rs > r0 && ds < d0;
    let errors = |pts: &[SweepPoint]| {
        pts.iter()
            .map(|q| format!("{:.4}", q.localization.mean_error))
            .collect::<Vec<_>>()
            .join("/")
    };
    verdict(
        7,
        pass,
        &format!(
            "recall at alpha 0: m=0.5 {rs:.4} vs m=0 {r0:.4}; mean error over alphas {alphas:?}: m=0.5 {} vs m=0 {}",
            errors(&scaled),
            errors(&plain)
        ),
    );
    assert!(rs > r0, "recall {rs} vs {r0}");
    assert!(ds < d0, "error growth {ds} vs {d0}");
}

// ---------------------------------------------------------------------------
// 8. skipped distance transforms for hidden landmarks

fn face68_model(r: &mut impl Rng) -> Model {
    let topo = Topology::face68();
    let mut states = StateSpace::basic(&topo, 1, 1, 4);
    // visible, fully hidden, first half hidden, second half hidden
    for p in 0..topo.num_parts() {
        let n = topo.landmarks_of(p).len();
        states.patterns[p][0][2] = (0..n).map(|i| i < n.div_ceil(2)).collect();
        states.patterns[p][0][3] = (0..n).map(|i| i >= n.div_ceil(2)).collect();
    }
    let mut comp = Component::new(Mixture::Full, topo, states, 8, (5, 5)).unwrap();
    for a in comp.landmark_anchors.iter_mut().chain(comp.part_anchors.iter_mut()) {
        a[0] = [r.gen_range(-2..=2), r.gen_range(-2..=2)];
    }
    let mut model = Model::new(vec![comp]).unwrap();
    let params: Vec<f64> = model
        .params()
        .iter()
        .map(|&v| if v == NEG_INF { v } else { r.gen_range(-0.1..0.1) })
        .collect();
    model.set_params(params).unwrap();
    for i in model.quadratic_spring_indices() {
        model.params_mut()[i] = -r.gen_range(0.01..0.5);
    }
    model
}

#[test]
fn criterion_08_hidden_transform_savings() {
    let mut r = rng(808);
    let model = face68_model(&mut r);
    let level = random_level(&mut r, 48, 48);
    let unary = UnaryResponses::compute(&model, 0, &level);
    let run = |transform_occluded: bool| {
        let opts = InferenceOptions {
            transform_occluded,
            ..Default::default()
        };
        infer_with(&model, 0, &level, Some(&unary), opts).unwrap()
    };
    let skip = run(false);
    let all = run(true);
    assert_eq!(skip.root_scores(), all.root_scores());
    let time = |transform_occluded: bool| {
        let mut best = Duration::MAX;
        for _ in 0..5 {
            let t = Instant::now();
            std::hint::black_box(run(transform_occluded));
            best = best.min(t.elapsed());
        }
        best
    };
    let (fast, slow) = (time(false), time(true));
    let speedup = slow.as_secs_f64() / fast.as_secs_f64();
    let (cs, ca) = (skip.counters(), all.counters());
    let pass = cs.landmark < ca.landmark && speedup >= 1.3;
    verdict(
        8,
        pass,
        &format!(
            "landmark transforms {} vs {}, part transforms {} vs {}, speedup {speedup:.2}x",
            cs.landmark, ca.landmark, cs.part, ca.part
        ),
    );
    assert!(cs.landmark < ca.landmark);
    assert!(speedup >= 1.3, "speedup {speedup}");
}

// ---------------------------------------------------------------------------
// 9. protocol constants and formulas

#[test]
fn criterion_09_protocol_fidelity() {
    let rotations = default_rotations();
    let expected: Vec<f64> = (0..11).map(|i| -30.0 + 6.0 * i as f64).collect();
    let detection = DetectionConfig::default();
    let eval = EvaluationConfig::default();

    let given = BBox::new(0.0, 0.0, 10.0, 10.0);
    let covering = BBox::new(3.0, 0.0, 13.0, 10.0);
    let short = BBox::new(3.1, 0.0, 13.1, 10.0);
    let overlap_ok = box_overlap(&given, &covering) >= detection.min_box_overlap
        && box_overlap(&given, &short) < detection.min_box_overlap;

    // two images; image 0 has an occluded and a visible face, image 1 one
    // occluded face
    let a = BBox::new(0.0, 0.0, 10.0, 10.0);
    let b = BBox::new(20.0, 0.0, 30.0, 10.0);
    let c = BBox::new(0.0, 0.0, 10.0, 10.0);
    let truths = vec![vec![(a, true), (b, false)], vec![(c, true)]];
    let dets = vec![
        vec![(0.9, a), (0.5, BBox::new(50.0, 50.0, 60.0, 60.0)), (0.3, BBox::new(21.0, 0.0, 31.0, 10.0))],
        vec![(0.7, BBox::new(40.0, 40.0, 50.0, 50.0)), (0.1, BBox::new(1.0, 1.0, 11.0, 11.0))],
    ];
    let pr = detection_pr(&dets, &truths, eval.detection_iou).unwrap();
    // by score: 0.9 tp(occ), 0.7 fp, 0.5 fp, 0.3 tp(vis), 0.1 tp(occ)
    let (tp_o, fp, occ_total) = (2.0, 2.0, 2.0);
    let last = pr.occluded.last().unwrap();
    let formula_ok = (last.precision - tp_o / (tp_o + fp)).abs() < 1e-12
        && (last.recall - tp_o / occ_total).abs() < 1e-12
        && pr.occluded[1].precision == 0.5
        && pr.all.last().unwrap().precision == 3.0 / 5.0
        && pr.all.last().unwrap().recall == 1.0;

    let pass = rotations == expected
        && detection.min_box_overlap == 0.7
        && overlap_ok
        && DEFAULT_SUCCESS_THRESHOLD == 0.1
        && eval.success_threshold == 0.1
        && eval.detection_iou == 0.5
        && formula_ok;
    verdict(
        9,
        pass,
        &format!(
            "{} rotation tracks, box overlap {}, success threshold {}, IoU {}, occluded-subset formulas {}",
            rotations.len(),
            detection.min_box_overlap,
            eval.success_threshold,
            eval.detection_iou,
            if formula_ok { "match" } else { "differ" }
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 10. determinism

/// Model file, detections and sweep report of a small pipeline run.
fn pipeline_bytes(dir: &Path, seed: u64) -> (String, String, String) {
    let gen = PlantedGenerator::new(PlantedConfig {
        seed,
        ..PlantedConfig::default()
    })
    .unwrap();
    let ds = gen.write_dataset(dir, 12, 4, 3).unwrap();
    let mut run = RunConfig::load(&ds.config).unwrap();
    run.training.rounds = 2;
    let manifest = DatasetManifest::load(&ds.train).unwrap();
    let sup = supervise(&manifest, &run.references().unwrap(), &run.topology().unwrap(), &run.supervision).unwrap();
    let negatives = list_images(&ds.negatives).unwrap();
    let model = train(&sup, &negatives, &run.training, |_, _| Ok(())).unwrap().model;
    let model_text = model_to_string(&model).unwrap();
    let test = DatasetManifest::load(&ds.test).unwrap();
    let mut detections = String::new();
    for face in &test.examples {
        let img = hpm::features::Image::load(&face.image).unwrap();
        let mut buf = Vec::new();
        hpm::detection::write_jsonl(&mut buf, &detect(&model, &img, &run.detection).unwrap()).unwrap();
        detections += &String::from_utf8(buf).unwrap();
    }
    let points = occlusion_pr_sweep(
        &model,
        &test.examples,
        &run.evaluation.alphas,
        &run.detection,
        &run.supervision.eyes,
        run.evaluation.success_threshold,
    )
    .unwrap();
    let mut report = serde_json::to_string(&points).unwrap();
    // image paths differ between the two directories
    report = report.replace(dir.to_str().unwrap(), "");
    (model_text, detections, report)
}

#[test]
fn criterion_10_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let run_in = |threads: usize, name: &str| -> (String, String, String) {
        let dir: PathBuf = tmp.path().join(name);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| pipeline_bytes(&dir, 17))
    };
    let a = run_in(1, "a");
    let b = run_in(3, "b");
    let same = (a.0 == b.0, a.1 == b.1, a.2 == b.2);
    let pass = same == (true, true, true);
    verdict(
        10,
        pass,
        &format!("model {}, detections {}, report {}", same.0, same.1, same.2),
    );
    assert!(pass);
}
