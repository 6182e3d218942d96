use super::{Component, Model};
use crate::error::{Error, Result};
use crate::features::{flip_permutation, HOG_DIM};

/// Template of the horizontally mirrored image: columns reversed and
/// orientation channels permuted.
pub fn flip_template(t: &[f64], h: usize, w: usize) -> Vec<f64> {
    assert_eq!(t.len(), h * w * HOG_DIM, "template size mismatch");
    let perm = flip_permutation();
    let mut out = vec![0.0; t.len()];
    for y in 0..h {
        for x in 0..w {
            let src = (y * w + x) * HOG_DIM;
            let dst = (y * w + (w - 1 - x)) * HOG_DIM;
            for k in 0..HOG_DIM {
                out[dst + perm[k]] = t[src + k];
            }
        }
    }
    out
}

fn mirror_spring(w: [f64; 4]) -> [f64; 4] {
    [-w[0], w[1], w[2], w[3]]
}

/// Make every mirrored viewpoint pair exact mirror images of each other.
///
/// Each pair is replaced by the average of one side and the flip of the
/// other, so tying is idempotent and leaves symmetric models unchanged.
/// Anchors and occlusion patterns of the higher viewpoint are rewritten as
/// mirrors of the lower one.
pub fn tie_mirror_parameters(model: &Model) -> Result<Model> {
    let mut out = model.clone();
    for c in 0..out.components.len() {
        let comp = out.components[c].clone();
        let lm = comp
            .topology
            .landmark_mirror()
            .ok_or_else(|| Error::Config("mirror tying needs a landmark correspondence table".into()))?
            .to_vec();
        let pm = comp.topology.part_mirror().expect("derived with the landmark table").to_vec();
        let st = &comp.states;
        for v in 0..st.viewpoints {
            let vm = st.viewpoint_mirror[v];
            if vm <= v {
                continue;
            }
            tie_patterns(&mut out.components[c], &lm, &pm, v, vm);
            for s in 0..st.shapes {
                let (a, b) = (st.state(v, s), st.state(vm, s));
                tie_nodes(&mut out, c, &comp, &lm, &pm, a, b);
            }
            for sp in 0..st.shapes {
                for sc in 0..st.shapes {
                    for p in 0..comp.topology.num_parts() {
                        if comp.topology.parent(p).is_none() {
                            continue;
                        }
                        for o1 in 0..st.occlusions {
                            for o2 in 0..st.occlusions {
                                let i = comp.part_bias(p, st.state(v, sp), st.state(v, sc), o1, o2);
                                let j = comp.part_bias(pm[p], st.state(vm, sp), st.state(vm, sc), o1, o2);
                                average_pair(&mut out.params, i, j);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn average_pair(w: &mut [f64], i: usize, j: usize) {
    let avg = (w[i] + w[j]) / 2.0;
    w[i] = avg;
    w[j] = avg;
}

fn tie_springs(w: &mut [f64], i: usize, j: usize) {
    let a = [w[i], w[i + 1], w[i + 2], w[i + 3]];
    let b = mirror_spring([w[j], w[j + 1], w[j + 2], w[j + 3]]);
    let avg: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
    let m = mirror_spring([avg[0], avg[1], avg[2], avg[3]]);
    w[i..i + 4].copy_from_slice(&avg);
    w[j..j + 4].copy_from_slice(&m);
}

fn tie_nodes(out: &mut Model, c: usize, comp: &Component, lm: &[usize], pm: &[usize], a: usize, b: usize) {
    let (h, tw) = (comp.template_h, comp.template_w);
    for k in 0..comp.topology.num_landmarks() {
        let km = lm[k];
        let ra = comp.appearance_range(k, a);
        let rb = comp.appearance_range(km, b);
        let flipped_b = flip_template(&out.params[rb.clone()], h, tw);
        let avg: Vec<f64> = out.params[ra.clone()]
            .iter()
            .zip(&flipped_b)
            .map(|(x, y)| (x + y) / 2.0)
            .collect();
        out.params[rb].copy_from_slice(&flip_template(&avg, h, tw));
        out.params[ra].copy_from_slice(&avg);
        tie_springs(&mut out.params, comp.landmark_spring(k, a), comp.landmark_spring(km, b));
        for o in 0..comp.num_occlusions() {
            average_pair(&mut out.params, comp.landmark_bias(k, a, o), comp.landmark_bias(km, b, o));
        }
        let [ax, ay] = comp.landmark_anchors[k][a];
        out.components[c].landmark_anchors[km][b] = [-ax, ay];
    }
    for p in 0..comp.topology.num_parts() {
        let [ax, ay] = comp.part_anchors[p][a];
        out.components[c].part_anchors[pm[p]][b] = [-ax, ay];
        if comp.topology.parent(p).is_some() {
            tie_springs(&mut out.params, comp.part_spring(p, a), comp.part_spring(pm[p], b));
        }
    }
}

fn tie_patterns(comp: &mut Component, lm: &[usize], pm: &[usize], v: usize, vm: usize) {
    let topo = comp.topology.clone();
    for p in 0..topo.num_parts() {
        for o in 0..comp.states.occlusions {
            let src = comp.states.patterns[p][v][o].clone();
            let mut dst = vec![false; src.len()];
            for (i, &k) in topo.landmarks_of(p).iter().enumerate() {
                dst[topo.slot(lm[k])] = src[i];
            }
            comp.states.patterns[pm[p]][vm][o] = dst;
        }
    }
}
