use hpm::detection::{
    box_overlap, detect_in, localize_in, nms, read_jsonl, write_jsonl, Detection, DetectionConfig, ImagePyramids,
};
use hpm::features::{FeatureLevel, FeaturePyramid, HOG_DIM};
use hpm::geometry::BBox;
use hpm::model::{Component, Mixture, Model, PartSpec, StateSpace, Topology, TopologySpec};

/// Root part with landmarks 0 and 1, child part with landmark 2. Each
/// landmark template is a single cell reading one channel.
fn planted_model() -> Model {
    let topo = Topology::new(TopologySpec {
        parts: vec![
            PartSpec {
                name: "root".into(),
                parent: None,
            },
            PartSpec {
                name: "child".into(),
                parent: Some(0),
            },
        ],
        landmark_part: vec![0, 0, 1],
        landmark_mirror: None,
    })
    .unwrap();
    let states = StateSpace::basic(&topo, 1, 1, 2);
    let mut comp = Component::new(Mixture::Full, topo, states, 8, (1, 1)).unwrap();
    comp.landmark_anchors = vec![vec![[0, 0]], vec![[2, 0]], vec![[0, 0]]];
    comp.part_anchors = vec![vec![[0, 0]], vec![[1, 3]]];
    let mut model = Model::new(vec![comp]).unwrap();
    let comp = model.component(0).clone();
    let w = model.params_mut();
    for k in 0..3 {
        let r = comp.appearance_range(k, 0);
        w[r.start + k] = 1.0;
        let at = comp.landmark_spring(k, 0);
        w[at..at + 4].copy_from_slice(&[0.0, 0.0, -1.0, -1.0]);
        w[comp.landmark_bias(k, 0, 0)] = 0.0;
        w[comp.landmark_bias(k, 0, 1)] = -0.1;
    }
    for p in 0..2 {
        let at = comp.part_spring(p, 0);
        w[at..at + 4].copy_from_slice(&[0.0, 0.0, -1.0, -1.0]);
    }
    model
}

/// Evidence for the planted face with its root at cell (4, 3).
fn planted_level(child_visible: bool) -> FeatureLevel {
    let (w, h) = (12, 10);
    let mut data = vec![0.0f32; w * h * HOG_DIM];
    let mut put = |x: usize, y: usize, c: usize, v: f32| data[(y * w + x) * HOG_DIM + c] = v;
    put(4, 3, 0, 1.0);
    put(6, 3, 1, 1.0);
    if child_visible {
        put(5, 6, 2, 1.0);
    } else {
        for y in 0..h {
            for x in 0..w {
                put(x, y, 2, -0.5);
            }
        }
    }
    FeatureLevel::from_cells(w, h, 8, data).unwrap()
}

fn pyramids(level: FeatureLevel) -> ImagePyramids {
    ImagePyramids {
        full: FeaturePyramid {
            rotations: vec![0.0],
            scales: vec![1.0],
            levels: vec![vec![level]],
        },
        low: None,
    }
}

fn cell_center(x: f64, y: f64) -> [f64; 2] {
    [(x + 1.5) * 8.0 - 0.5, (y + 1.5) * 8.0 - 0.5]
}

fn det(score: f64, x: f64) -> Detection {
    Detection {
        score,
        bbox: BBox::new(x, 0.0, x + 10.0, 10.0),
        landmarks: vec![[x, 1.0]],
        occluded: vec![false],
        viewpoint: 0,
        rotation: 0.0,
        mixture: Mixture::Full,
        component: 0,
        level: 0,
    }
}

#[test]
fn detects_the_planted_configuration() {
    let model = planted_model();
    let config = DetectionConfig {
        threshold: 2.5,
        ..Default::default()
    };
    let dets = detect_in(&model, &pyramids(planted_level(true)), &config).unwrap();
    assert_eq!(dets.len(), 1, "{dets:?}");
    let d = &dets[0];
    assert!((d.score - 3.0).abs() < 1e-9, "score {}", d.score);
    assert_eq!(d.landmarks, vec![cell_center(4.0, 3.0), cell_center(6.0, 3.0), cell_center(5.0, 6.0)]);
    assert_eq!(d.occluded, vec![false; 3]);
    let tight = BBox::around(&d.landmarks).unwrap();
    assert_eq!(d.bbox, tight.pad(config.box_padding * tight.height()));
}

#[test]
fn missing_evidence_switches_the_child_to_occluded() {
    let model = planted_model();
    let config = DetectionConfig {
        threshold: 1.8,
        ..Default::default()
    };
    let dets = detect_in(&model, &pyramids(planted_level(false)), &config).unwrap();
    let d = &dets[0];
    // occluded child: 2 - 0.1, visible child at best 2 - 0.5
    assert!((d.score - 1.9).abs() < 1e-9, "score {}", d.score);
    assert_eq!(d.occluded, vec![false, false, true]);
    // an occluded landmark stays at its anchor
    assert_eq!(d.landmarks[2], cell_center(5.0, 6.0));
}

#[test]
fn detections_come_best_first() {
    let model = planted_model();
    let config = DetectionConfig {
        threshold: f64::NEG_INFINITY,
        nms_overlap: 1.0,
        ..Default::default()
    };
    let dets = detect_in(&model, &pyramids(planted_level(true)), &config).unwrap();
    assert!(dets.len() > 1);
    assert!(dets.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn localization_respects_the_given_box() {
    let model = planted_model();
    let pyr = pyramids(planted_level(true));
    let config = DetectionConfig::default();
    let truth = BBox::around(&[cell_center(4.0, 3.0), cell_center(6.0, 3.0), cell_center(5.0, 6.0)]).unwrap();
    let d = localize_in(&model, &pyr, &truth, &config).unwrap();
    assert!(box_overlap(&truth, &d.bbox) >= config.min_box_overlap);
    assert_eq!(d.landmarks[0], cell_center(4.0, 3.0));
    let far = BBox::new(1000.0, 1000.0, 1100.0, 1100.0);
    assert!(matches!(localize_in(&model, &pyr, &far, &config), Err(hpm::Error::NotFound)));
}

#[test]
fn box_overlap_is_relative_to_the_given_box() {
    let given = BBox::new(0.0, 0.0, 10.0, 10.0);
    assert_eq!(box_overlap(&given, &BBox::new(-5.0, -5.0, 15.0, 15.0)), 1.0);
    assert_eq!(box_overlap(&given, &BBox::new(5.0, 0.0, 15.0, 10.0)), 0.5);
    assert_eq!(box_overlap(&given, &BBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
    assert_eq!(box_overlap(&BBox::new(1.0, 1.0, 1.0, 5.0), &given), 0.0);
}

#[test]
fn nms_keeps_the_best_of_each_cluster() {
    let kept = nms(vec![det(1.0, 0.0), det(3.0, 1.0), det(2.0, 50.0), det(3.0, 2.0)], 0.3);
    let got: Vec<(f64, f64)> = kept.iter().map(|d| (d.score, d.bbox.x0)).collect();
    // equal scores keep input order, so the box at x = 1 wins its cluster
    assert_eq!(got, vec![(3.0, 1.0), (2.0, 50.0)]);
    assert!(nms(Vec::new(), 0.3).is_empty());
}

#[test]
fn jsonl_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("d.jsonl");
    let dets = vec![det(0.25, 3.0), det(-1.5, 7.5)];
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &dets).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("\"box\""));
    std::fs::write(&path, &buf).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), dets);
    std::fs::write(&path, "{not json}\n").unwrap();
    assert!(matches!(read_jsonl(&path), Err(hpm::Error::Data(_))));
    assert!(read_jsonl(tmp.path().join("missing.jsonl")).is_err());
}
