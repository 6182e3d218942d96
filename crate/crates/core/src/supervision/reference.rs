use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::face68_mirror;

/// One canonical shape with its viewpoint label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceShape {
    pub viewpoint: usize,
    pub points: Vec<[f64; 2]>,
}

/// Viewpoint-labeled canonical shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceShapeSet {
    pub shapes: Vec<ReferenceShape>,
}

impl ReferenceShapeSet {
    pub fn validate(&self, viewpoints: usize, points: usize) -> Result<()> {
        for v in 0..viewpoints {
            if !self.shapes.iter().any(|s| s.viewpoint == v) {
                return Err(Error::Config(format!("no reference shape for viewpoint {v}")));
            }
        }
        for (i, s) in self.shapes.iter().enumerate() {
            if s.viewpoint >= viewpoints {
                return Err(Error::Config(format!(
                    "reference {i} has viewpoint {} but only {viewpoints} are configured",
                    s.viewpoint
                )));
            }
            if s.points.len() != points || s.points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                return Err(Error::Config(format!(
                    "reference {i} must have {points} finite points"
                )));
            }
        }
        Ok(())
    }

    /// Multiply every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            shapes: self
                .shapes
                .iter()
                .map(|s| ReferenceShape {
                    viewpoint: s.viewpoint,
                    points: s.points.iter().map(|p| [p[0] * factor, p[1] * factor]).collect(),
                })
                .collect(),
        }
    }

    /// A generic 68-point face turned to `viewpoints` evenly spaced yaw
    /// angles, 15 degrees apart and symmetric about frontal. Units are
    /// interpupillary distances of the frontal face; `y` points down.
    pub fn default_face(viewpoints: usize) -> Self {
        let yaws: Vec<f64> = (0..viewpoints)
            .map(|v| (v as f64 - (viewpoints as f64 - 1.0) / 2.0) * 15.0)
            .collect();
        Self::turned_face(&yaws)
    }

    /// The generic face at the given yaw angles (degrees), one viewpoint
    /// per angle in order.
    pub fn turned_face(yaws: &[f64]) -> Self {
        let face = face_3d();
        let shapes = yaws
            .iter()
            .enumerate()
            .map(|(v, yaw)| {
                let (s, c) = yaw.to_radians().sin_cos();
                ReferenceShape {
                    viewpoint: v,
                    points: face.iter().map(|p| [p[0] * c + p[2] * s, p[1]]).collect(),
                }
            })
            .collect();
        Self { shapes }
    }
}

/// Mean-face landmarks in 3D `(x, y, z)`, `z` toward the viewer, exactly
/// symmetric under `x -> -x` with the standard left/right correspondence.
fn face_3d() -> Vec<[f64; 3]> {
    let mut p = vec![[0.0; 3]; 68];
    for (i, q) in p.iter_mut().enumerate().take(17) {
        let t = std::f64::consts::PI * i as f64 / 16.0;
        *q = [-0.95 * t.cos(), 0.1 + 1.0 * t.sin(), -0.5 + 0.6 * t.sin()];
    }
    let brow = [[-0.85, -0.3], [-0.7, -0.4], [-0.52, -0.43], [-0.34, -0.4], [-0.18, -0.34]];
    for (i, b) in brow.iter().enumerate() {
        p[17 + i] = [b[0], b[1], 0.15];
    }
    for i in 0..4 {
        p[27 + i] = [0.0, -0.15 + 0.15 * i as f64, 0.2 + 0.1 * i as f64];
    }
    let nose = [[-0.22, 0.4, 0.3], [-0.11, 0.43, 0.35], [0.0, 0.45, 0.4]];
    for (i, n) in nose.iter().enumerate() {
        p[31 + i] = *n;
    }
    let eye = [[-0.65, 0.0], [-0.56, -0.06], [-0.44, -0.06], [-0.35, 0.0], [-0.44, 0.06], [-0.56, 0.06]];
    for (i, e) in eye.iter().enumerate() {
        p[36 + i] = [e[0], e[1], 0.1];
    }
    let outer = [[-0.4, 0.75], [-0.25, 0.68], [-0.1, 0.65], [0.0, 0.67]];
    for (i, m) in outer.iter().enumerate() {
        p[48 + i] = [m[0], m[1], 0.25 + 0.05 * (i as f64 / 3.0)];
    }
    for (k, m) in [(57, [0.0, 0.9]), (58, [-0.1, 0.89]), (59, [-0.25, 0.85])] {
        p[k] = [m[0], m[1], 0.27];
    }
    for (k, m) in [(60, [-0.3, 0.75]), (61, [-0.1, 0.72]), (62, [0.0, 0.73]), (66, [0.0, 0.8]), (67, [-0.1, 0.79])] {
        p[k] = [m[0], m[1], 0.28];
    }
    // the remaining (right-hand) points are mirrors of the ones above
    let mirror = face68_mirror();
    let defined: Vec<bool> = (0..68)
        .map(|k| matches!(k, 0..=8 | 17..=21 | 27..=33 | 36..=41 | 48..=51 | 57..=62 | 66 | 67))
        .collect();
    for k in 0..68 {
        if !defined[k] {
            let m = p[mirror[k]];
            p[k] = [-m[0], m[1], m[2]];
        }
    }
    for k in 0..68 {
        if mirror[k] == k {
            p[k][0] = 0.0;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_face_is_symmetric_with_unit_ipd() {
        let refs = ReferenceShapeSet::default_face(3);
        let front = &refs.shapes[1].points;
        let mirror = face68_mirror();
        for k in 0..68 {
            let m = front[mirror[k]];
            assert!((front[k][0] + m[0]).abs() < 1e-12 && (front[k][1] - m[1]).abs() < 1e-12);
        }
        let eye = |r: std::ops::Range<usize>| {
            let n = r.len() as f64;
            r.fold([0.0, 0.0], |a, k| [a[0] + front[k][0] / n, a[1] + front[k][1] / n])
        };
        let (l, r) = (eye(36..42), eye(42..48));
        assert!(((r[0] - l[0]).hypot(r[1] - l[1]) - 1.0).abs() < 1e-12);
        refs.validate(3, 68).unwrap();
    }

    #[test]
    fn side_views_mirror_each_other() {
        let refs = ReferenceShapeSet::default_face(2);
        let mirror = face68_mirror();
        let (a, b) = (&refs.shapes[0].points, &refs.shapes[1].points);
        for k in 0..68 {
            assert!((a[k][0] + b[mirror[k]][0]).abs() < 1e-12);
        }
    }
}
