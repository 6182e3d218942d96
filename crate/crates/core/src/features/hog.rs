//! 31-dimensional HOG cells: 18 contrast-sensitive orientations, 9
//! contrast-insensitive orientations and 4 gradient-energy (texture) terms.

use std::sync::OnceLock;

use super::image::Image;
use crate::error::{domain, Result};

/// Length of one cell vector.
pub const HOG_DIM: usize = 31;

const SIGNED_BINS: usize = 18;
const UNSIGNED_BINS: usize = 9;
const EPS: f64 = 1e-4;
const CLIP: f64 = 0.2;
const TEXTURE_SCALE: f64 = 0.2357;

/// Grid of HOG cells for one image (one pyramid level / rotation).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureLevel {
    pub width: usize,
    pub height: usize,
    pub cell_size: usize,
    /// Level-image pixels per original-image pixel.
    pub scale: f64,
    /// In-plane rotation applied to the original image before resizing.
    pub rotation: f64,
    /// Rotation center in original-image pixels.
    pub center: (f64, f64),
    pub data: Vec<f32>,
}

impl FeatureLevel {
    /// A level holding explicit cell data, with identity geometry.
    pub fn from_cells(width: usize, height: usize, cell_size: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * HOG_DIM {
            return domain(format!(
                "cell buffer has {} values, expected {}",
                data.len(),
                width * height * HOG_DIM
            ));
        }
        Ok(Self {
            width,
            height,
            cell_size,
            scale: 1.0,
            rotation: 0.0,
            center: (0.0, 0.0),
            data,
        })
    }

    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * HOG_DIM;
        &self.data[i..i + HOG_DIM]
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Grid cell -> level-image pixel center.
    pub fn cell_to_level_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.cell_size as f64;
        ((x + 1.5) * s - 0.5, (y + 1.5) * s - 0.5)
    }

    /// Level-image pixel -> continuous grid coordinate.
    pub fn level_pixel_to_cell(&self, px: f64, py: f64) -> (f64, f64) {
        let s = self.cell_size as f64;
        ((px + 0.5) / s - 1.5, (py + 0.5) / s - 1.5)
    }

    /// Grid coordinate -> original-image pixel, undoing scale and rotation.
    pub fn cell_to_image(&self, x: f64, y: f64) -> (f64, f64) {
        let (lx, ly) = self.cell_to_level_pixel(x, y);
        let rx = (lx + 0.5) / self.scale - 0.5;
        let ry = (ly + 0.5) / self.scale - 0.5;
        super::image::rotate_point((rx, ry), self.center, self.rotation)
    }

    /// Original-image pixel -> continuous grid coordinate.
    pub fn image_to_cell(&self, px: f64, py: f64) -> (f64, f64) {
        let (rx, ry) = super::image::rotate_point((px, py), self.center, -self.rotation);
        let lx = (rx + 0.5) * self.scale - 0.5;
        let ly = (ry + 0.5) * self.scale - 0.5;
        self.level_pixel_to_cell(lx, ly)
    }

    /// Flattened `h x w` patch centered on `(x, y)`; cells outside the grid
    /// read as zero. Row-major, `h * w * HOG_DIM` values.
    pub fn extract_patch(&self, x: i64, y: i64, h: usize, w: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; h * w * HOG_DIM];
        let (oy, ox) = ((h / 2) as i64, (w / 2) as i64);
        for ty in 0..h {
            for tx in 0..w {
                let (cx, cy) = (x + tx as i64 - ox, y + ty as i64 - oy);
                if self.contains(cx, cy) {
                    let dst = (ty * w + tx) * HOG_DIM;
                    out[dst..dst + HOG_DIM].copy_from_slice(self.cell(cx as usize, cy as usize));
                }
            }
        }
        out
    }

    /// Response of an `h x w` template centered at every grid cell, with zero
    /// padding outside the grid. Output is row-major `height x width`.
    pub fn correlate(&self, template: &[f64], h: usize, w: usize) -> Vec<f64> {
        assert_eq!(template.len(), h * w * HOG_DIM, "template size mismatch");
        let (gw, gh) = (self.width as i64, self.height as i64);
        let mut out = vec![0.0f64; self.width * self.height];
        let (oy, ox) = ((h / 2) as i64, (w / 2) as i64);
        for ty in 0..h as i64 {
            for tx in 0..w as i64 {
                let t = &template[((ty as usize) * w + tx as usize) * HOG_DIM..][..HOG_DIM];
                if t.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let dy = ty - oy;
                let dx = tx - ox;
                let y_lo = (-dy).max(0);
                let y_hi = (gh - dy).min(gh);
                let x_lo = (-dx).max(0);
                let x_hi = (gw - dx).min(gw);
                for y in y_lo..y_hi {
                    let row = (y * gw) as usize;
                    let src_row = ((y + dy) * gw) as usize;
                    for x in x_lo..x_hi {
                        let cell = &self.data[(src_row + (x + dx) as usize) * HOG_DIM..][..HOG_DIM];
                        let mut acc = 0.0f64;
                        for k in 0..HOG_DIM {
                            acc += t[k] * cell[k] as f64;
                        }
                        out[row + x as usize] += acc;
                    }
                }
            }
        }
        out
    }

    /// The grid of the horizontally mirrored image.
    pub fn flip_horizontal(&self) -> FeatureLevel {
        let perm = flip_permutation();
        let mut data = vec![0.0f32; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let src = self.cell(x, y);
                let dst = (y * self.width + (self.width - 1 - x)) * HOG_DIM;
                for k in 0..HOG_DIM {
                    data[dst + perm[k]] = src[k];
                }
            }
        }
        FeatureLevel {
            data,
            ..self.clone()
        }
    }
}

/// Channel permutation induced by a horizontal image flip: channel `k` of a
/// cell moves to channel `perm[k]` of the mirrored cell.
pub fn flip_permutation() -> &'static [usize; HOG_DIM] {
    static PERM: OnceLock<[usize; HOG_DIM]> = OnceLock::new();
    PERM.get_or_init(|| {
        let mut p = [0usize; HOG_DIM];
        for o in 0..SIGNED_BINS {
            p[o] = (SIGNED_BINS + 9 - o) % SIGNED_BINS;
        }
        for o in 0..UNSIGNED_BINS {
            p[SIGNED_BINS + o] = SIGNED_BINS + (UNSIGNED_BINS + 9 - o) % UNSIGNED_BINS;
        }
        // texture terms: lower-right, upper-right, lower-left, upper-left
        let t = SIGNED_BINS + UNSIGNED_BINS;
        p[t] = t + 2;
        p[t + 1] = t + 3;
        p[t + 2] = t;
        p[t + 3] = t + 1;
        p
    })
}

/// Unit directions for the 9 orientations 0, 20, ..., 160 degrees, built so
/// that direction `9 - o` is the exact mirror of direction `o`.
fn directions() -> &'static ([f64; 9], [f64; 9]) {
    static DIRS: OnceLock<([f64; 9], [f64; 9])> = OnceLock::new();
    DIRS.get_or_init(|| {
        let mut uu = [0.0; 9];
        let mut vv = [0.0; 9];
        for o in 0..5 {
            let (s, c) = (20.0 * o as f64).to_radians().sin_cos();
            uu[o] = c;
            vv[o] = s;
        }
        vv[0] = 0.0;
        for o in 1..5 {
            uu[9 - o] = -uu[o];
            vv[9 - o] = vv[o];
        }
        (uu, vv)
    })
}

/// Computes HOG cells with `cell_size`-pixel cells.
///
/// Gradients are centered differences; for color images the channel with
/// the largest gradient magnitude is used. Each pixel votes bilinearly into
/// the four nearest cells. When several orientations tie exactly, the vote
/// is split evenly among them. Cells are normalized against the four
/// surrounding 2x2 blocks with clipping, and the outermost ring of cells is
/// dropped, so the grid is `floor(dim / cell_size) - 2` on each axis.
pub fn compute_hog(image: &Image, cell_size: usize) -> Result<FeatureLevel> {
    if cell_size == 0 {
        return domain("cell size must be positive");
    }
    let (w, h) = (image.width(), image.height());
    if w < 2 * cell_size || h < 2 * cell_size {
        return domain(format!(
            "image {w}x{h} too small for cell size {cell_size}"
        ));
    }
    let bw = w / cell_size;
    let bh = h / cell_size;
    let out_w = bw.saturating_sub(2);
    let out_h = bh.saturating_sub(2);
    let vis_w = bw * cell_size;
    let vis_h = bh * cell_size;
    let sbin = cell_size as f64;
    let (uu, vv) = directions();

    let mut hist = vec![0.0f64; bw * bh * SIGNED_BINS];
    let channels = image.channels();
    let mut dots = [0.0f64; SIGNED_BINS];
    for y in 1..vis_h - 1 {
        for x in 1..vis_w - 1 {
            let mut best = (0.0f64, 0.0f64, -1.0f64);
            for c in 0..channels {
                let dx = (image.get(x + 1, y, c) as f64 - image.get(x - 1, y, c) as f64) * 255.0;
                let dy = (image.get(x, y + 1, c) as f64 - image.get(x, y - 1, c) as f64) * 255.0;
                let v = dx * dx + dy * dy;
                if v > best.2 {
                    best = (dx, dy, v);
                }
            }
            let (dx, dy, v) = best;
            if v <= 0.0 {
                continue;
            }
            let mag = v.sqrt();
            let mut top = f64::NEG_INFINITY;
            for o in 0..9 {
                let d = uu[o] * dx + vv[o] * dy;
                dots[o] = d;
                dots[o + 9] = -d;
            }
            for &d in dots.iter() {
                if d > top {
                    top = d;
                }
            }
            let ties = dots.iter().filter(|&&d| d == top).count() as f64;
            let share = mag / ties;

            let xp = (x as f64 + 0.5) / sbin - 0.5;
            let yp = (y as f64 + 0.5) / sbin - 0.5;
            let ixp = xp.floor();
            let iyp = yp.floor();
            let vx0 = xp - ixp;
            let vy0 = yp - iyp;
            let vx1 = 1.0 - vx0;
            let vy1 = 1.0 - vy0;
            let (ixp, iyp) = (ixp as i64, iyp as i64);
            for (o, &d) in dots.iter().enumerate() {
                if d != top {
                    continue;
                }
                let mut vote = |cx: i64, cy: i64, wgt: f64| {
                    if cx >= 0 && cy >= 0 && (cx as usize) < bw && (cy as usize) < bh {
                        hist[((cy as usize) * bw + cx as usize) * SIGNED_BINS + o] += wgt * share;
                    }
                };
                vote(ixp, iyp, vx1 * vy1);
                vote(ixp + 1, iyp, vx0 * vy1);
                vote(ixp, iyp + 1, vx1 * vy0);
                vote(ixp + 1, iyp + 1, vx0 * vy0);
            }
        }
    }

    let mut norm = vec![0.0f64; bw * bh];
    for (i, n) in norm.iter_mut().enumerate() {
        let hcell = &hist[i * SIGNED_BINS..(i + 1) * SIGNED_BINS];
        *n = (0..9).map(|o| (hcell[o] + hcell[o + 9]).powi(2)).sum();
    }
    let nrm = |x: usize, y: usize| norm[y * bw + x];

    let mut data = vec![0.0f32; out_w * out_h * HOG_DIM];
    for y in 0..out_h {
        for x in 0..out_w {
            let (cx, cy) = (x + 1, y + 1);
            let block = |x0: usize, y0: usize| {
                1.0 / (nrm(x0, y0) + nrm(x0 + 1, y0) + nrm(x0, y0 + 1) + nrm(x0 + 1, y0 + 1) + EPS)
                    .sqrt()
            };
            // lower-right, upper-right, lower-left, upper-left blocks
            let n = [
                block(cx, cy),
                block(cx, cy - 1),
                block(cx - 1, cy),
                block(cx - 1, cy - 1),
            ];
            let hcell = &hist[(cy * bw + cx) * SIGNED_BINS..(cy * bw + cx + 1) * SIGNED_BINS];
            let dst = &mut data[(y * out_w + x) * HOG_DIM..(y * out_w + x + 1) * HOG_DIM];
            let mut texture = [0.0f64; 4];
            for o in 0..SIGNED_BINS {
                let mut sum = 0.0;
                for (t, &nk) in n.iter().enumerate() {
                    let hv = (hcell[o] * nk).min(CLIP);
                    sum += hv;
                    texture[t] += hv;
                }
                dst[o] = (0.5 * sum) as f32;
            }
            for o in 0..UNSIGNED_BINS {
                let s = hcell[o] + hcell[o + 9];
                let mut sum = 0.0;
                for &nk in n.iter() {
                    sum += (s * nk).min(CLIP);
                }
                dst[SIGNED_BINS + o] = (0.5 * sum) as f32;
            }
            for t in 0..4 {
                dst[SIGNED_BINS + UNSIGNED_BINS + t] = (TEXTURE_SCALE * texture[t]) as f32;
            }
        }
    }
    Ok(FeatureLevel {
        width: out_w,
        height: out_h,
        cell_size,
        scale: 1.0,
        rotation: 0.0,
        center: image.center(),
        data,
    })
}
