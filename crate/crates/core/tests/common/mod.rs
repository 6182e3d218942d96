#![allow(dead_code)]

use hpm::features::{FeatureLevel, HOG_DIM};
use hpm::model::{Component, Mixture, Model, PartSpec, StateSpace, Topology, TopologySpec};
use hpm::NEG_INF;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two parts, three landmarks, one viewpoint.
pub fn small_topology(rng: &mut impl Rng) -> Topology {
    let landmark_part = if rng.gen_bool(0.5) { vec![0, 0, 1] } else { vec![0, 1, 1] };
    Topology::new(TopologySpec {
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
        landmark_part,
        landmark_mirror: None,
    })
    .unwrap()
}

pub fn random_level(rng: &mut impl Rng, w: usize, h: usize) -> FeatureLevel {
    let data = (0..w * h * HOG_DIM).map(|_| rng.gen_range(0.0f32..0.4)).collect();
    FeatureLevel::from_cells(w, h, 8, data).unwrap()
}

/// Random weights on a small model: springs strictly concave, anchors in
/// [-2, 2], a fraction of biases set to -inf.
pub fn random_small_model(rng: &mut impl Rng, shapes: usize, occlusions: usize, template: usize) -> Model {
    let topo = small_topology(rng);
    let mut states = StateSpace::basic(&topo, 1, shapes, occlusions);
    for p in 0..topo.num_parts() {
        for o in 0..occlusions {
            for b in states.patterns[p][0][o].iter_mut() {
                *b = rng.gen_bool(0.4);
            }
        }
    }
    let mut comp = Component::new(Mixture::Full, topo, states, 8, (template, template)).unwrap();
    let sv = comp.num_states();
    for a in comp.landmark_anchors.iter_mut().chain(comp.part_anchors.iter_mut()) {
        for s in 0..sv {
            a[s] = [rng.gen_range(-2..=2), rng.gen_range(-2..=2)];
        }
    }
    let mut model = Model::new(vec![comp]).unwrap();
    let comp = model.component(0).clone();
    let w = model.params_mut();
    for k in 0..comp.topology.num_landmarks() {
        for s in 0..sv {
            for i in comp.appearance_range(k, s) {
                w[i] = rng.gen_range(-1.0..1.0);
            }
            let at = comp.landmark_spring(k, s);
            spring(rng, &mut w[at..at + 4]);
            for o in 0..occlusions {
                w[comp.landmark_bias(k, s, o)] = bias(rng);
            }
        }
    }
    for p in 0..comp.topology.num_parts() {
        for s in 0..sv {
            let at = comp.part_spring(p, s);
            spring(rng, &mut w[at..at + 4]);
        }
        if comp.topology.parent(p).is_none() {
            continue;
        }
        for si in 0..sv {
            for sj in 0..sv {
                for oi in 0..occlusions {
                    for oj in 0..occlusions {
                        w[comp.part_bias(p, si, sj, oi, oj)] = bias(rng);
                    }
                }
            }
        }
    }
    w[comp.offset()] = rng.gen_range(-1.0..1.0);
    model
}

fn spring(rng: &mut impl Rng, w: &mut [f64]) {
    w[0] = rng.gen_range(-0.5..0.5);
    w[1] = rng.gen_range(-0.5..0.5);
    w[2] = rng.gen_range(-1.0..-0.01);
    w[3] = rng.gen_range(-1.0..-0.01);
}

fn bias(rng: &mut impl Rng) -> f64 {
    if rng.gen_bool(0.15) {
        NEG_INF
    } else {
        rng.gen_range(-1.0..1.0)
    }
}
