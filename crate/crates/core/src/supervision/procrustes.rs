use crate::error::{domain, Result};
use crate::geometry::Similarity;

fn centroid(points: &[[f64; 2]]) -> [f64; 2] {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    [sx / n, sy / n]
}

/// Similarity `T` minimizing `sum |T(a_i) - b_i|^2`, with the minimized RMS
/// distance.
pub fn procrustes_align(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<(Similarity, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return domain(format!(
            "alignment needs two shapes with equal point counts >= 2 (got {} and {})",
            a.len(),
            b.len()
        ));
    }
    if a.iter().chain(b).any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return domain("shape coordinates must be finite");
    }
    let (ca, cb) = (centroid(a), centroid(b));
    let (mut re, mut im, mut den, mut spread_b) = (0.0, 0.0, 0.0, 0.0);
    for (p, q) in a.iter().zip(b) {
        let (ax, ay) = (p[0] - ca[0], p[1] - ca[1]);
        let (bx, by) = (q[0] - cb[0], q[1] - cb[1]);
        re += ax * bx + ay * by;
        im += ax * by - ay * bx;
        den += ax * ax + ay * ay;
        spread_b += bx * bx + by * by;
    }
    let scale_ref = a.iter().chain(b).map(|p| p[0].abs().max(p[1].abs())).fold(1.0, f64::max);
    let tiny = 1e-18 * scale_ref * scale_ref * a.len() as f64;
    if den <= tiny || spread_b <= tiny {
        return domain("degenerate shape: all points coincide");
    }
    let (sa, sb) = (re / den, im / den);
    let t = Similarity {
        a: sa,
        b: sb,
        tx: cb[0] - (sa * ca[0] - sb * ca[1]),
        ty: cb[1] - (sb * ca[0] + sa * ca[1]),
    };
    let sq: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| {
            let r = t.apply(*p);
            (r[0] - q[0]).powi(2) + (r[1] - q[1]).powi(2)
        })
        .sum();
    Ok((t, (sq / a.len() as f64).sqrt()))
}
