//! Dual coordinate ascent for the structured SVM with shared slack.
//!
//! Primal: `1/2 |w|^2 + C * sum_g max(0, max_{i in g} (b_i - y_i w . x_i))`
//! where every positive is its own group and every negative window is one
//! group. The dual keeps `alpha_i >= 0` with `sum_{i in g} alpha_i <= C` and
//! `u = sum_i alpha_i y_i x_i`. Optional upper bounds `w_j <= ub_j` enter
//! through closed-form multipliers, which makes `w = min(u, ub)` entrywise.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::FeatureVector;

/// Fraction of occluded landmarks.
pub fn delta_occlusion(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        return 0.0;
    }
    flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
}

/// Required margin of a negative with occluded fraction `delta`.
pub fn negative_margin(delta: f64, m: f64) -> f64 {
    1.0 - m * delta
}

#[derive(Clone, Debug)]
pub struct NegativeConstraint {
    pub features: FeatureVector,
    pub delta: f64,
    /// `1 - m * delta`, fixed when the constraint is mined.
    pub margin: f64,
    pub alpha: f64,
}

/// One negative window (image, pyramid level); its constraints share a
/// single slack variable.
#[derive(Clone, Debug)]
pub struct NegativeWindow<K> {
    pub key: K,
    pub constraints: Vec<NegativeConstraint>,
}

/// Cached negative constraints grouped by window.
#[derive(Clone, Debug)]
pub struct NegativeCache<K> {
    margin_weight: f64,
    windows: Vec<NegativeWindow<K>>,
    index: HashMap<K, usize>,
}

impl<K: Clone + Eq + std::hash::Hash> NegativeCache<K> {
    pub fn new(margin_weight: f64) -> Self {
        Self {
            margin_weight,
            windows: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn margin_weight(&self) -> f64 {
        self.margin_weight
    }

    pub fn windows(&self) -> &[NegativeWindow<K>] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.iter().map(|w| w.constraints.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Add a mined negative; the margin is `1 - m * delta`.
    pub fn push(&mut self, key: K, features: FeatureVector, delta: f64) {
        let margin = negative_margin(delta, self.margin_weight);
        let at = match self.index.get(&key) {
            Some(&i) => i,
            None => {
                self.windows.push(NegativeWindow {
                    key: key.clone(),
                    constraints: Vec::new(),
                });
                self.index.insert(key, self.windows.len() - 1);
                self.windows.len() - 1
            }
        };
        self.windows[at].constraints.push(NegativeConstraint {
            features,
            delta,
            margin,
            alpha: 0.0,
        });
    }

    /// Current slack of a window under `w`, 0 for unknown windows.
    pub fn slack(&self, key: &K, w: &[f64]) -> f64 {
        self.index.get(key).map_or(0.0, |&i| window_slack(&self.windows[i], w))
    }

    /// Drop constraints with zero dual weight that `w` satisfies strictly.
    pub fn prune(&mut self, w: &[f64]) -> usize {
        let mut removed = 0;
        for win in &mut self.windows {
            let before = win.constraints.len();
            win.constraints
                .retain(|c| c.alpha > 0.0 || c.features.dot(w) + c.margin >= 0.0);
            removed += before - win.constraints.len();
        }
        removed
    }
}

fn window_slack<K>(win: &NegativeWindow<K>, w: &[f64]) -> f64 {
    win.constraints
        .iter()
        .map(|c| c.features.dot(w) + c.margin)
        .fold(0.0, f64::max)
}

/// `1/2 |w|^2 + C * (sum of positive hinge losses + per-window max hinge)`.
pub fn svm_objective<K>(w: &[f64], positives: &[FeatureVector], cache: &NegativeCache<K>, c: f64, m: f64) -> f64 {
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let pos: f64 = positives.iter().map(|x| (1.0 - x.dot(w)).max(0.0)).sum();
    let neg: f64 = cache
        .windows
        .iter()
        .map(|win| {
            win.constraints
                .iter()
                .map(|k| (k.features.dot(w) + negative_margin(k.delta, m)).max(0.0))
                .fold(0.0, f64::max)
        })
        .sum();
    reg + c * (pos + neg)
}

/// Inner product of two sparse feature vectors.
pub fn feature_dot(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let mut acc = 0.0;
    for (sa, va) in &a.dense {
        let ea = sa + va.len();
        for (sb, vb) in &b.dense {
            let eb = sb + vb.len();
            let (lo, hi) = ((*sa).max(*sb), ea.min(eb));
            if lo < hi {
                acc += va[lo - sa..hi - sa]
                    .iter()
                    .zip(&vb[lo - sb..hi - sb])
                    .map(|(&x, &y)| x as f64 * y as f64)
                    .sum::<f64>();
            }
        }
        for &(i, v) in &b.sparse {
            if i >= *sa && i < ea {
                acc += va[i - sa] as f64 * v;
            }
        }
    }
    for &(i, v) in &a.sparse {
        for (sb, vb) in &b.dense {
            if i >= *sb && i < sb + vb.len() {
                acc += vb[i - sb] as f64 * v;
            }
        }
        for &(j, u) in &b.sparse {
            if i == j {
                acc += v * u;
            }
        }
    }
    acc
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub c: f64,
    /// Stop when `primal - dual <= tolerance * max(primal, 1e-12)`.
    pub tolerance: f64,
    pub max_epochs: usize,
    /// Seed for the coordinate visiting order.
    pub seed: u64,
    /// `(index, ub)` pairs constraining `w[index] <= ub`.
    pub upper_bounds: Vec<(usize, f64)>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            c: 0.002,
            tolerance: 1e-4,
            max_epochs: 2000,
            seed: 0,
            upper_bounds: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub w: Vec<f64>,
    pub objective: f64,
    pub dual: f64,
    pub epochs: usize,
    /// Primal objective after every epoch.
    pub trace: Vec<f64>,
}

/// Weights `w = min(u, ub)` kept in sync with the unclipped sum `u`.
struct Weights {
    u: Vec<f64>,
    w: Vec<f64>,
    /// Sorted bounded indices and their bounds.
    bounded: Vec<(usize, f64)>,
}

impl Weights {
    fn new(dim: usize, bounds: &[(usize, f64)]) -> Result<Self> {
        let mut bounded = bounds.to_vec();
        bounded.sort_by_key(|b| b.0);
        bounded.dedup_by_key(|b| b.0);
        if let Some(&(i, _)) = bounded.iter().find(|b| b.0 >= dim) {
            return Err(Error::Config(format!("bounded index {i} outside dimension {dim}")));
        }
        let mut out = Self {
            u: vec![0.0; dim],
            w: vec![0.0; dim],
            bounded,
        };
        out.clip_range(0, dim);
        Ok(out)
    }

    fn clip_range(&mut self, lo: usize, hi: usize) {
        let start = self.bounded.partition_point(|b| b.0 < lo);
        for &(i, ub) in self.bounded[start..].iter().take_while(|b| b.0 < hi) {
            self.w[i] = self.u[i].min(ub);
        }
    }

    fn add(&mut self, x: &FeatureVector, scale: f64) {
        x.add_to(&mut self.u, scale);
        x.add_to(&mut self.w, scale);
        if self.bounded.is_empty() {
            return;
        }
        for (start, block) in &x.dense {
            self.clip_range(*start, start + block.len());
        }
        for &(i, _) in &x.sparse {
            self.clip_range(i, i + 1);
        }
    }

    /// `sum_j beta_j ub_j` with `beta_j = max(0, u_j - ub_j)`.
    fn bound_term(&self) -> f64 {
        self.bounded
            .iter()
            .map(|&(i, ub)| (self.u[i] - ub).max(0.0) * ub)
            .sum()
    }
}

struct Item<'a> {
    x: &'a FeatureVector,
    y: f64,
    b: f64,
    group: usize,
    norm: f64,
}

/// Solve the dual over all cached constraints, warm-started from the
/// stored dual weights, which are updated in place.
pub fn solve<K>(
    positives: &[FeatureVector],
    positive_alpha: &mut [f64],
    cache: &mut NegativeCache<K>,
    dim: usize,
    options: &SolverOptions,
) -> Result<Solution> {
    if !(options.c > 0.0) {
        return Err(Error::Config(format!("C must be positive, got {}", options.c)));
    }
    assert_eq!(positives.len(), positive_alpha.len());
    let c = options.c;
    let mut items = Vec::new();
    let mut alpha = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (x, &a) in positives.iter().zip(positive_alpha.iter()) {
        groups.push(vec![items.len()]);
        items.push(Item {
            x,
            y: 1.0,
            b: 1.0,
            group: groups.len() - 1,
            norm: x.norm_sq(),
        });
        alpha.push(a);
    }
    for win in &cache.windows {
        let g = groups.len();
        groups.push(Vec::new());
        for k in &win.constraints {
            groups[g].push(items.len());
            items.push(Item {
                x: &k.features,
                y: -1.0,
                b: k.margin,
                group: g,
                norm: k.features.norm_sq(),
            });
            alpha.push(k.alpha);
        }
    }
    let mut wt = Weights::new(dim, &options.upper_bounds)?;
    for (it, &a) in items.iter().zip(&alpha) {
        if a != 0.0 {
            it.x.add_to(&mut wt.u, a * it.y);
        }
    }
    wt.w.copy_from_slice(&wt.u);
    wt.clip_range(0, dim);
    let mut used: Vec<f64> = groups.iter().map(|g| g.iter().map(|&i| alpha[i]).sum()).collect();
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut trace = Vec::new();
    let mut epochs = 0;
    let grad = |it: &Item, w: &[f64]| it.y * it.x.dot(w) - it.b;
    loop {
        let (primal, dual) = objectives(&items, &alpha, &groups, &wt, c);
        if epochs > 0 {
            trace.push(primal);
        }
        if primal - dual <= options.tolerance * primal.max(1e-12) || items.is_empty() {
            write_back(&alpha, positive_alpha, cache);
            return Ok(Solution {
                w: wt.w,
                objective: primal,
                dual,
                epochs,
                trace,
            });
        }
        if epochs == options.max_epochs {
            return Err(Error::NonConvergence {
                iterations: epochs,
                trace,
            });
        }
        epochs += 1;
        order.shuffle(&mut rng);
        for &i in &order {
            let it = &items[i];
            let g = grad(it, &wt.w);
            let cap = c - (used[it.group] - alpha[i]);
            let new = if it.norm > 0.0 {
                (alpha[i] - g / it.norm).clamp(0.0, cap.max(0.0))
            } else if g < 0.0 {
                cap.max(0.0)
            } else {
                0.0
            };
            let step = new - alpha[i];
            if step != 0.0 {
                wt.add(it.x, step * it.y);
                used[it.group] += step;
                alpha[i] = new;
            }
        }
        // shift weight inside saturated windows toward the most violated
        for (gi, members) in groups.iter().enumerate() {
            if members.len() < 2 || used[gi] < c * (1.0 - 1e-9) {
                continue;
            }
            let grads: Vec<f64> = members.iter().map(|&i| grad(&items[i], &wt.w)).collect();
            let (best_pos, _) = grads
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (p, &g)| if g < acc.1 { (p, g) } else { acc });
            let i = members[best_pos];
            for &j in members {
                if j == i || alpha[j] <= 0.0 {
                    continue;
                }
                let (gi_, gj) = (grad(&items[i], &wt.w), grad(&items[j], &wt.w));
                if gi_ >= gj {
                    continue;
                }
                let cross = items[i].y * items[j].y * feature_dot(items[i].x, items[j].x);
                let curv = items[i].norm + items[j].norm - 2.0 * cross;
                let t = if curv > 0.0 { ((gj - gi_) / curv).min(alpha[j]) } else { alpha[j] };
                if t > 0.0 {
                    wt.add(items[i].x, t * items[i].y);
                    wt.add(items[j].x, -t * items[j].y);
                    alpha[i] += t;
                    alpha[j] -= t;
                }
            }
        }
    }
}

fn objectives(items: &[Item], alpha: &[f64], groups: &[Vec<usize>], wt: &Weights, c: f64) -> (f64, f64) {
    let w = &wt.w;
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let mut loss = 0.0;
    for g in groups {
        loss += g
            .iter()
            .map(|&i| items[i].b - items[i].y * items[i].x.dot(w))
            .fold(0.0, f64::max);
    }
    let lin: f64 = items.iter().zip(alpha).map(|(it, a)| a * it.b).sum();
    (reg + c * loss, lin - reg - wt.bound_term())
}

fn write_back<K>(alpha: &[f64], positive_alpha: &mut [f64], cache: &mut NegativeCache<K>) {
    let np = positive_alpha.len();
    positive_alpha.copy_from_slice(&alpha[..np]);
    let mut at = np;
    for win in &mut cache.windows {
        for k in &mut win.constraints {
            k.alpha = alpha[at];
            at += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn sparse(entries: &[(usize, f64)]) -> FeatureVector {
        FeatureVector {
            dense: Vec::new(),
            sparse: entries.to_vec(),
        }
    }

    #[test]
    fn delta_arithmetic() {
        assert_eq!(delta_occlusion(&[false; 68]), 0.0);
        assert_eq!(delta_occlusion(&[true; 68]), 1.0);
        let mut f = vec![false; 68];
        f[..17].iter_mut().for_each(|v| *v = true);
        assert_eq!(delta_occlusion(&f), 0.25);
        assert_eq!(negative_margin(1.0, 0.5), 0.5);
    }

    #[test]
    fn objective_at_zero() {
        let pos = vec![sparse(&[(0, 1.0)])];
        let cache: NegativeCache<u32> = NegativeCache::new(0.5);
        assert_eq!(svm_objective(&[0.0, 0.0], &pos, &cache, 0.3, 0.5), 0.3);
        let mut cache = NegativeCache::new(0.5);
        cache.push(0u32, sparse(&[(1, 1.0)]), 1.0);
        assert_eq!(svm_objective(&[0.0, 0.0], &[], &cache, 1.0, 0.5), 0.5);
        assert_eq!(cache.windows()[0].constraints[0].margin, 0.5);
    }

    #[test]
    fn shared_slack_takes_the_max() {
        let mut cache = NegativeCache::new(0.0);
        cache.push(7u32, sparse(&[(0, 1.0)]), 0.0);
        cache.push(7u32, sparse(&[(0, 2.0)]), 0.0);
        let w = [1.0];
        // hinge terms 2 and 3: the window contributes 3, not 5
        assert_eq!(svm_objective(&w, &[], &cache, 1.0, 0.0), 0.5 + 3.0);
    }

    #[test]
    fn sparse_dense_dot() {
        let a = FeatureVector {
            dense: vec![(2, Arc::from(vec![1.0f32, 2.0, 3.0]))],
            sparse: vec![(0, 2.0), (3, 1.0)],
        };
        let b = FeatureVector {
            dense: vec![(3, Arc::from(vec![4.0f32, 5.0]))],
            sparse: vec![(0, 3.0), (2, 1.0)],
        };
        let (da, db) = (a.to_dense(6), b.to_dense(6));
        let want: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
        assert_eq!(feature_dot(&a, &b), want);
    }

    #[test]
    fn separable_problem_is_solved() {
        let pos = vec![sparse(&[(0, 1.0), (2, 1.0)]), sparse(&[(0, 2.0), (2, 1.0)])];
        let mut cache = NegativeCache::new(0.5);
        cache.push(0u32, sparse(&[(1, 1.0), (2, 1.0)]), 0.0);
        cache.push(0u32, sparse(&[(1, 2.0), (2, 1.0)]), 1.0);
        let mut alpha = vec![0.0; 2];
        let opts = SolverOptions {
            c: 10.0,
            tolerance: 1e-9,
            ..Default::default()
        };
        let sol = solve(&pos, &mut alpha, &mut cache, 3, &opts).unwrap();
        assert!(sol.objective - sol.dual <= 1e-9 * sol.objective + 1e-15);
        for x in &pos {
            assert!(x.dot(&sol.w) >= 1.0 - 1e-6);
        }
        let direct = svm_objective(&sol.w, &pos, &cache, 10.0, 0.5);
        assert!((direct - sol.objective).abs() < 1e-12);
    }
}
