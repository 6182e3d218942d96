use rand::Rng;

use crate::error::{Error, Result};

/// Result of Lloyd's algorithm.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centers.
    pub distortion: f64,
    pub iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest index.
pub fn nearest(centers: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = dist2(c, x);
        if d < bd {
            bd = d;
            best = i;
        }
    }
    best
}

/// k-means with k-means++ seeding, stopping when assignments settle or
/// after `max_iter` rounds.
pub fn kmeans(data: &[Vec<f64>], k: usize, rng: &mut impl Rng, max_iter: usize) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::Domain("k-means needs k >= 1".into()));
    }
    if data.len() < k {
        return Err(Error::Data(format!(
            "only {} samples for {k} clusters; lower the number of mixtures",
            data.len()
        )));
    }
    let dim = data[0].len();
    if data.iter().any(|x| x.len() != dim) {
        return Err(Error::Domain("k-means samples differ in length".into()));
    }
    let mut centers = vec![data[rng.gen_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| dist2(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = data.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.gen_range(0..data.len())
        };
        centers.push(data[pick].clone());
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(dist2(x, &centers[centers.len() - 1]));
        }
    }
    let mut assignment: Vec<usize> = data.iter().map(|x| nearest(&centers, x)).collect();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            // an emptied cluster keeps its previous center
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = data.iter().map(|x| nearest(&centers, x)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let distortion = data.iter().zip(&assignment).map(|(x, &a)| dist2(x, &centers[a])).sum();
    Ok(KMeans {
        centers,
        assignment,
        distortion,
        iterations,
    })
}
