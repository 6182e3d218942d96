use rand::Rng;

use super::kmeans::kmeans;
use crate::error::Result;
use crate::geometry::BBox;

/// Quadrant of the plane cut at `(a, b)`: 0 upper-left, 1 upper-right,
/// 2 lower-left, 3 lower-right (image coordinates, `y` down).
pub fn in_quadrant(p: [f64; 2], a: f64, b: f64, quadrant: usize) -> bool {
    let left = p[0] < a;
    let right = p[0] > a;
    let up = p[1] < b;
    let down = p[1] > b;
    match quadrant {
        0 => left && up,
        1 => right && up,
        2 => left && down,
        _ => right && down,
    }
}

/// Occlusion mask from a quarter-plane occluder: the cut point is uniform
/// over the tight box of `points`, the quadrant uniform over the four.
/// Points on the cut lines stay visible.
pub fn sample_quadrant_occlusion(points: &[[f64; 2]], rng: &mut impl Rng) -> Vec<bool> {
    let Some(bx) = BBox::around(points) else {
        return Vec::new();
    };
    let a = bx.x0 + rng.gen::<f64>() * (bx.x1 - bx.x0);
    let b = bx.y0 + rng.gen::<f64>() * (bx.y1 - bx.y0);
    let q = rng.gen_range(0..4);
    points.iter().map(|&p| in_quadrant(p, a, b, q)).collect()
}

/// Whether `mask` equals the occlusion produced by some quadrant cut.
pub fn is_quadrant_mask(points: &[[f64; 2]], mask: &[bool]) -> bool {
    if !mask.iter().any(|&m| m) {
        return true;
    }
    // candidate cut coordinates: every distinct coordinate plus midpoints
    // and outer bounds
    let cuts = |axis: usize| {
        let mut v: Vec<f64> = points.iter().map(|p| p[axis]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        let mut c = vec![v[0] - 1.0, v[v.len() - 1] + 1.0];
        for w in v.windows(2) {
            c.push((w[0] + w[1]) / 2.0);
        }
        c.extend(v);
        c
    };
    let (xs, ys) = (cuts(0), cuts(1));
    for q in 0..4 {
        for &a in &xs {
            for &b in &ys {
                if points.iter().zip(mask).all(|(&p, &m)| in_quadrant(p, a, b, q) == m) {
                    return true;
                }
            }
        }
    }
    false
}

/// Occlusion of the original example (ground truth or all visible)
/// followed by `count` synthetic quadrant occlusions combined with it.
pub fn generate_virtual_positives(
    points: &[[f64; 2]],
    ground_truth: Option<&[bool]>,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<bool>> {
    let base: Vec<bool> = match ground_truth {
        Some(g) => g.to_vec(),
        None => vec![false; points.len()],
    };
    let mut out = vec![base.clone()];
    for _ in 0..count {
        let m = sample_quadrant_occlusion(points, rng);
        out.push(m.iter().zip(&base).map(|(a, b)| *a || *b).collect());
    }
    out
}

/// Pattern library of exactly `k` binary masks plus the pattern index of
/// every input mask. Pattern 0 is always all-visible.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternLibrary {
    pub patterns: Vec<Vec<bool>>,
    pub assignment: Vec<usize>,
}

fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Nearest pattern; ties go to the lowest index.
pub fn snap(patterns: &[Vec<bool>], mask: &[bool]) -> usize {
    let mut best = 0;
    let mut bd = usize::MAX;
    for (i, p) in patterns.iter().enumerate() {
        let d = hamming(p, mask);
        if d < bd {
            bd = d;
            best = i;
        }
    }
    best
}

/// Cluster binary occlusion masks into `k` patterns.
pub fn cluster_occlusion_patterns(masks: &[Vec<bool>], k: usize, rng: &mut impl Rng) -> Result<PatternLibrary> {
    let n = masks.first().map_or(0, Vec::len);
    let visible = vec![false; n];
    let occluded = vec![true; n];
    // distinct masks by first appearance, with counts
    let mut distinct: Vec<(Vec<bool>, usize)> = Vec::new();
    for m in masks {
        match distinct.iter_mut().find(|(d, _)| d == m) {
            Some(entry) => entry.1 += 1,
            None => distinct.push((m.clone(), 1)),
        }
    }
    let mut library: Vec<Vec<bool>> = vec![visible.clone()];
    let others: Vec<&Vec<bool>> = distinct.iter().map(|(d, _)| d).filter(|d| **d != visible).collect();
    if others.len() < k {
        library.extend(others.into_iter().cloned());
    } else {
        let data: Vec<Vec<f64>> = masks
            .iter()
            .map(|m| m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            .collect();
        let km = kmeans(&data, k, rng, 100)?;
        // the center nearest to all-visible makes room for it
        let zero = vec![0.0; n];
        let drop = super::kmeans::nearest(&km.centers, &zero);
        for (i, c) in km.centers.iter().enumerate() {
            if i == drop {
                continue;
            }
            let p: Vec<bool> = c.iter().map(|&v| v >= 0.5).collect();
            if !library.contains(&p) {
                library.push(p);
            }
        }
        // thresholding can collapse centers: refill with frequent masks
        let mut by_count: Vec<&(Vec<bool>, usize)> = distinct.iter().collect();
        by_count.sort_by(|a, b| b.1.cmp(&a.1));
        for (m, _) in by_count {
            if library.len() >= k {
                break;
            }
            if !library.contains(m) {
                library.push(m.clone());
            }
        }
    }
    if library.len() < k && !library.contains(&occluded) {
        library.push(occluded);
    }
    while library.len() < k {
        library.push(visible.clone());
    }
    library.truncate(k);
    let assignment = masks.iter().map(|m| snap(&library, m)).collect();
    Ok(PatternLibrary {
        patterns: library,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadrant_membership_is_strict() {
        assert!(!in_quadrant([1.0, 1.0], 1.0, 2.0, 0));
        assert!(in_quadrant([0.5, 1.0], 1.0, 2.0, 0));
        assert!(in_quadrant([1.5, 3.0], 1.0, 2.0, 3));
    }

    #[test]
    fn all_visible_masks() {
        let masks = vec![vec![false; 3]; 10];
        let lib = cluster_occlusion_patterns(&masks, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(lib.patterns.len(), 4);
        assert_eq!(lib.patterns[0], vec![false; 3]);
        assert!(lib.patterns.contains(&vec![true; 3]));
        assert!(lib.assignment.iter().all(|&a| a == 0));
    }

    #[test]
    fn checkerboard_is_not_a_quadrant_cut() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        assert!(!is_quadrant_mask(&pts, &[true, false, true, false]));
        assert!(is_quadrant_mask(&pts, &[true, true, false, false]));
        assert!(is_quadrant_mask(&pts, &[false, false, false, true]));
    }
}
