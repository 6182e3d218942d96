mod common;

use std::path::Path;

use common::rng;
use hpm::geometry::Similarity;
use hpm::model::Topology;
use hpm::supervision::{
    assign_viewpoint, canvas_cell, generate_virtual_positives, is_quadrant_mask, kmeans, procrustes_align, supervise, AnnotatedFace,
    DatasetManifest, ReferenceShapeSet, Supervision,
};
use hpm::synth::{PlantedConfig, PlantedGenerator};
use rand::prelude::*;

fn planted_supervision(dir: &Path, faces: usize, seed: u64) -> (DatasetManifest, Supervision) {
    let gen = PlantedGenerator::new(PlantedConfig::default()).unwrap();
    let ds = gen.write_dataset(dir, faces, 0, 0).unwrap();
    let mut run = gen.run_config();
    run.supervision.seed = seed;
    let manifest = DatasetManifest::load(&ds.train).unwrap();
    let sup = supervise(&manifest, &gen.reference_shapes(), &Topology::face68(), &run.supervision).unwrap();
    (manifest, sup)
}

#[test]
fn procrustes_recovers_a_known_similarity() {
    let mut r = rng(1);
    for _ in 0..50 {
        let a: Vec<[f64; 2]> = (0..12).map(|_| [r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0)]).collect();
        let t = Similarity::from_parts(
            r.gen_range(0.2..4.0),
            r.gen_range(-3.0..3.0),
            r.gen_range(-50.0..50.0),
            r.gen_range(-50.0..50.0),
        );
        let b: Vec<[f64; 2]> = a.iter().map(|&p| t.apply(p)).collect();
        let (found, rms) = procrustes_align(&a, &b).unwrap();
        assert!(rms < 1e-9, "rms {rms}");
        for (x, y) in [(found.a, t.a), (found.b, t.b), (found.tx, t.tx), (found.ty, t.ty)] {
            assert!((x - y).abs() < 1e-8);
        }
    }
}

#[test]
fn procrustes_rejects_bad_shapes() {
    assert!(procrustes_align(&[[0.0, 0.0]], &[[1.0, 1.0]]).is_err());
    assert!(procrustes_align(&[[0.0, 0.0], [1.0, 0.0]], &[[0.0, 0.0]]).is_err());
    assert!(procrustes_align(&[[0.0, f64::NAN], [1.0, 0.0]], &[[0.0, 0.0], [1.0, 1.0]]).is_err());
}

#[test]
fn viewpoint_assignment_ignores_similarity() {
    let refs = ReferenceShapeSet::default_face(3);
    let t = Similarity::from_parts(57.0, 0.3, 100.0, 40.0);
    for s in &refs.shapes {
        let moved: Vec<[f64; 2]> = s.points.iter().map(|&p| t.apply(p)).collect();
        assert_eq!(assign_viewpoint(&moved, &refs).unwrap().0, s.viewpoint);
    }
}

#[test]
fn canvas_cell_matches_the_grid_convention() {
    let mut r = rng(2);
    for _ in 0..1000 {
        let p = [r.gen_range(-10.0..300.0), r.gen_range(-10.0..300.0)];
        let cell = [4usize, 8][r.gen_range(0..2)];
        let scale = [1.0, 0.5][r.gen_range(0..2)];
        let want = |v: f64| ((v + 0.5) * scale / cell as f64 - 1.5).round() as i64;
        assert_eq!(canvas_cell(p, cell, scale), (want(p[0]), want(p[1])));
    }
}

#[test]
fn kmeans_separates_distant_clusters() {
    let mut r = rng(3);
    let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
    let mut data = Vec::new();
    let mut truth = Vec::new();
    for (i, c) in centers.iter().enumerate() {
        for _ in 0..20 {
            data.push(vec![c[0] + r.gen_range(-0.5..0.5), c[1] + r.gen_range(-0.5..0.5)]);
            truth.push(i);
        }
    }
    let km = kmeans(&data, 3, &mut rng(4), 100).unwrap();
    for i in 0..data.len() {
        for j in 0..data.len() {
            assert_eq!(truth[i] == truth[j], km.assignment[i] == km.assignment[j]);
        }
    }
}

#[test]
fn labels_follow_the_annotations() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, sup) = planted_supervision(tmp.path(), 10, 0);
    assert_eq!(sup.examples.len(), 10 * 9);
    assert_eq!(sup.canvas[0] % (2 * sup.config.cell_size), 0, "canvas is symmetric about x = 0");
    let topo = Topology::face68();
    for ex in &sup.examples {
        let face = &manifest.examples[ex.source];
        let gt = face.occluded.clone().unwrap();
        let labels = &ex.labels[0];
        // per-landmark flags agree with the part patterns
        let design = &sup.components[0];
        for k in 0..68 {
            let p = topo.part_of(k);
            let pattern = &design.states.patterns[p][ex.viewpoint][labels.patterns[p]];
            assert_eq!(labels.occluded[k], pattern[topo.slot(k)]);
        }
        // canvas points are the annotations under the stored similarity
        for (c, a) in labels.points.iter().zip(&face.landmarks) {
            let q = ex.transform.apply(*a);
            assert!((q[0] - c[0]).abs() < 1e-9 && (q[1] - c[1]).abs() < 1e-9);
        }
        assert!(labels.shapes.iter().all(|&s| s / sup.config.shapes == ex.viewpoint));
        if ex.virtual_index == 0 && gt.iter().all(|&o| !o) {
            assert!(labels.occluded.iter().all(|&o| !o));
        }
    }
}

#[test]
fn virtual_masks_are_quadrant_cuts_over_the_original() {
    let refs = ReferenceShapeSet::default_face(3);
    let pts = &refs.shapes[0].points;
    let mut r = rng(5);
    let plain = generate_virtual_positives(pts, None, 8, &mut r);
    assert_eq!(plain.len(), 9);
    assert!(plain[0].iter().all(|&o| !o));
    for m in &plain[1..] {
        assert!(is_quadrant_mask(pts, m));
    }
    let gt: Vec<bool> = (0..68).map(|k| k < 17).collect();
    let over = generate_virtual_positives(pts, Some(&gt), 8, &mut r);
    assert_eq!(over[0], gt);
    for m in &over {
        assert!(gt.iter().zip(m).all(|(&g, &o)| !g || o), "ground truth stays occluded");
    }
}

#[test]
fn same_seed_same_labels() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, s1) = planted_supervision(a.path(), 6, 9);
    let (_, s2) = planted_supervision(b.path(), 6, 9);
    let strip = |s: &Supervision| {
        let mut s = s.clone();
        for e in &mut s.examples {
            e.image = e.image.strip_prefix(e.image.parent().unwrap().parent().unwrap()).unwrap().to_path_buf();
        }
        s
    };
    assert_eq!(strip(&s1), strip(&s2));
    let c = tempfile::tempdir().unwrap();
    let (_, s3) = planted_supervision(c.path(), 6, 10);
    let masks = |s: &Supervision| s.examples.iter().map(|e| e.labels[0].occluded.clone()).collect::<Vec<_>>();
    assert_ne!(masks(&s1), masks(&s3));
}

#[test]
fn mirrored_viewpoints_get_mirrored_anchors() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, sup) = planted_supervision(tmp.path(), 12, 0);
    let design = &sup.components[0];
    let topo = Topology::face68();
    let lm = topo.landmark_mirror().unwrap();
    let pm = topo.part_mirror().unwrap();
    let st = &design.states;
    for s in 0..st.shapes {
        let (a, b) = (st.state(0, s), st.state(st.viewpoints - 1, s));
        for k in 0..68 {
            let (x, y) = (design.landmark_anchors[k][a], design.landmark_anchors[lm[k]][b]);
            assert_eq!(x, [-y[0], y[1]], "landmark {k} shape {s}");
        }
        for p in 0..topo.num_parts() {
            if topo.parent(p).is_none() {
                continue;
            }
            let (x, y) = (design.part_anchors[p][a], design.part_anchors[pm[p]][b]);
            assert_eq!(x, [-y[0], y[1]], "part {p} shape {s}");
        }
    }
}

#[test]
fn malformed_examples_are_reported_together() {
    let refs = ReferenceShapeSet::default_face(3);
    let good = AnnotatedFace {
        image: "a.png".into(),
        landmarks: refs.shapes[1].points.clone(),
        occluded: None,
        bbox: None,
    };
    let short = AnnotatedFace {
        landmarks: vec![[0.0, 0.0]; 5],
        ..good.clone()
    };
    let flags = AnnotatedFace {
        occluded: Some(vec![false; 3]),
        ..good.clone()
    };
    let manifest = DatasetManifest {
        examples: vec![good, short, flags],
    };
    let err = supervise(&manifest, &refs, &Topology::face68(), &Default::default()).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, hpm::Error::Data(_)));
    assert!(msg.contains("#1") && msg.contains("#2"), "{msg}");
    assert!(matches!(
        supervise(&DatasetManifest::default(), &refs, &Topology::face68(), &Default::default()),
        Err(hpm::Error::Data(_))
    ));
}
