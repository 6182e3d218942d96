//! Generalized distance transforms (max-convolution with a concave
//! quadratic) by the lower-envelope method.
//!
//! `out[p] = max_q f[q] + w1 (p - q) + w2 (p - q)^2`. Ties go to the
//! smallest `q`; `-inf` inputs are treated as absent sources.

use crate::error::{domain, Result};
use crate::NEG_INF;

#[inline]
fn transfer(f: f64, w1: f64, w2: f64, d: f64) -> f64 {
    f + w1 * d + w2 * (d * d)
}

fn check(values: &[f64], w1: f64, w2: f64) -> Result<()> {
    if !(w2 <= 0.0) || !w1.is_finite() || !w2.is_finite() {
        return domain(format!("distance transform needs finite w1 and w2 <= 0, got w1={w1}, w2={w2}"));
    }
    if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return domain("distance transform input must be finite or -inf");
    }
    Ok(())
}

/// Reusable scratch space for the envelope.
#[derive(Default)]
pub(crate) struct Envelope {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Envelope {
    /// Evaluate the transform of `f` at positions `start, start+1, ...`
    /// (one per output slot).
    pub(crate) fn run(&mut self, f: &[f64], w1: f64, w2: f64, start: i64, out: &mut [f64], arg: &mut [u32]) {
        self.v.clear();
        self.z.clear();
        if w2 == 0.0 {
            // parallel lines: the best source does not depend on p
            let mut best: Option<usize> = None;
            let mut best_c = NEG_INF;
            for (q, &fq) in f.iter().enumerate() {
                if fq == NEG_INF {
                    continue;
                }
                let c = fq - w1 * q as f64;
                if best.is_none() || c > best_c {
                    best = Some(q);
                    best_c = c;
                }
            }
            for (i, (o, a)) in out.iter_mut().zip(arg.iter_mut()).enumerate() {
                match best {
                    Some(q) => {
                        *o = transfer(f[q], w1, 0.0, (start + i as i64 - q as i64) as f64);
                        *a = q as u32;
                    }
                    None => {
                        *o = NEG_INF;
                        *a = 0;
                    }
                }
            }
            return;
        }
        let a = -w2;
        // score_q(p) = line_q(p) + (common in p), line_q(p) = c_q + 2 a q p
        let c = |q: usize| f[q] - a * (q * q) as f64 - w1 * q as f64;
        for (q, &fq) in f.iter().enumerate() {
            if fq == NEG_INF {
                continue;
            }
            let cq = c(q);
            loop {
                let Some(&t) = self.v.last() else {
                    self.v.push(q);
                    self.z.push(NEG_INF);
                    break;
                };
                let s = (c(t) - cq) / (2.0 * a * (q - t) as f64);
                if s <= *self.z.last().expect("parallel to v") {
                    self.v.pop();
                    self.z.pop();
                } else {
                    self.v.push(q);
                    self.z.push(s);
                    break;
                }
            }
        }
        if self.v.is_empty() {
            out.fill(NEG_INF);
            arg.fill(0);
            return;
        }
        let n = self.v.len();
        let value = |j: usize, p: i64| {
            let q = self.v[j];
            transfer(f[q], w1, w2, (p - q as i64) as f64)
        };
        let mut k = 0;
        for (i, (o, ar)) in out.iter_mut().zip(arg.iter_mut()).enumerate() {
            let p = start + i as i64;
            while k + 1 < n && self.z[k + 1] < p as f64 {
                k += 1;
            }
            // guard against rounding at breakpoints with exact evaluation
            let mut best = k;
            let mut bv = value(k, p);
            while best + 1 < n {
                let v = value(best + 1, p);
                if v > bv {
                    best += 1;
                    bv = v;
                } else {
                    break;
                }
            }
            while best > 0 {
                let v = value(best - 1, p);
                if v >= bv {
                    best -= 1;
                    bv = v;
                } else {
                    break;
                }
            }
            *o = bv;
            *ar = self.v[best] as u32;
        }
    }
}

/// One-dimensional transform evaluated at every input position.
pub fn gdt_1d(values: &[f64], w1: f64, w2: f64) -> Result<(Vec<f64>, Vec<usize>)> {
    check(values, w1, w2)?;
    let n = values.len();
    let mut out = vec![0.0; n];
    let mut arg = vec![0u32; n];
    Envelope::default().run(values, w1, w2, 0, &mut out, &mut arg);
    Ok((out, arg.into_iter().map(|a| a as usize).collect()))
}

/// Separable 2D transform of a row-major `height x width` grid, rows first.
/// Returns values and argmax `(y, x)` per position.
#[allow(clippy::too_many_arguments)]
pub fn gdt_2d(
    grid: &[f64],
    width: usize,
    height: usize,
    wx1: f64,
    wx2: f64,
    wy1: f64,
    wy2: f64,
) -> Result<(Vec<f64>, Vec<(usize, usize)>)> {
    assert_eq!(grid.len(), width * height, "grid size mismatch");
    check(grid, wx1, wx2)?;
    check(&[], wy1, wy2)?;
    let (out, arg) = transform_2d(grid, width, height, [wx1, wx2, wy1, wy2], (0, 0), (width, height));
    let arg = arg
        .into_iter()
        .map(|a| ((a as usize) / width.max(1), (a as usize) % width.max(1)))
        .collect();
    Ok((out, arg))
}

/// 2D transform evaluated on an `out_w x out_h` grid whose position
/// `(i, j)` corresponds to source coordinates `(x0 + i, y0 + j)`. Argmax is
/// the source linear index. Weights are `[wx1, wx2, wy1, wy2]`; the caller
/// guarantees they are valid.
pub(crate) fn transform_2d(
    grid: &[f64],
    width: usize,
    height: usize,
    w: [f64; 4],
    origin: (i64, i64),
    out_dims: (usize, usize),
) -> (Vec<f64>, Vec<u32>) {
    let (out_w, out_h) = out_dims;
    let mut env = Envelope::default();
    let mut tmp = vec![NEG_INF; height * out_w];
    let mut tmp_arg = vec![0u32; height * out_w];
    for y in 0..height {
        let row = &grid[y * width..(y + 1) * width];
        env.run(
            row,
            w[0],
            w[1],
            origin.0,
            &mut tmp[y * out_w..(y + 1) * out_w],
            &mut tmp_arg[y * out_w..(y + 1) * out_w],
        );
    }
    let mut out = vec![NEG_INF; out_w * out_h];
    let mut arg = vec![0u32; out_w * out_h];
    let mut col = vec![0.0; height];
    let mut col_out = vec![0.0; out_h];
    let mut col_arg = vec![0u32; out_h];
    for i in 0..out_w {
        for y in 0..height {
            col[y] = tmp[y * out_w + i];
        }
        env.run(&col, w[2], w[3], origin.1, &mut col_out, &mut col_arg);
        for j in 0..out_h {
            let qy = col_arg[j] as usize;
            out[j * out_w + i] = col_out[j];
            arg[j * out_w + i] = if col_out[j] == NEG_INF {
                0
            } else {
                (qy * width) as u32 + tmp_arg[qy * out_w + i]
            };
        }
    }
    (out, arg)
}
