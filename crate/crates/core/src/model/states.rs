use serde::{Deserialize, Serialize};

use super::topology::Topology;
use crate::error::{Error, Result};

/// Shape, viewpoint and occlusion state spaces of one model component.
///
/// A node's shape state is `viewpoint * shapes + local_shape`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpace {
    pub viewpoints: usize,
    pub shapes: usize,
    pub occlusions: usize,
    /// Horizontal-mirror partner of every viewpoint.
    pub viewpoint_mirror: Vec<usize>,
    /// `patterns[part][viewpoint][o][slot]` is true when the landmark in
    /// `slot` of `part` is occluded under pattern `o`.
    pub patterns: Vec<Vec<Vec<Vec<bool>>>>,
}

impl StateSpace {
    /// Every pattern all-visible except pattern 1 (if any), which occludes
    /// the whole part. Viewpoints mirror as `v <-> V-1-v`.
    pub fn basic(topology: &Topology, viewpoints: usize, shapes: usize, occlusions: usize) -> Self {
        let patterns = (0..topology.num_parts())
            .map(|p| {
                let n = topology.landmarks_of(p).len();
                (0..viewpoints)
                    .map(|_| (0..occlusions).map(|o| vec![o == 1; n]).collect())
                    .collect()
            })
            .collect();
        Self {
            viewpoints,
            shapes,
            occlusions,
            viewpoint_mirror: (0..viewpoints).map(|v| viewpoints - 1 - v).collect(),
            patterns,
        }
    }

    pub fn num_states(&self) -> usize {
        self.viewpoints * self.shapes
    }

    #[inline]
    pub fn viewpoint_of(&self, state: usize) -> usize {
        state / self.shapes
    }

    #[inline]
    pub fn local_shape(&self, state: usize) -> usize {
        state % self.shapes
    }

    #[inline]
    pub fn state(&self, viewpoint: usize, local: usize) -> usize {
        viewpoint * self.shapes + local
    }

    pub fn pattern(&self, part: usize, state: usize, o: usize) -> &[bool] {
        &self.patterns[part][self.viewpoint_of(state)][o]
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        if self.viewpoints == 0 || self.shapes == 0 || self.occlusions == 0 {
            return Err(Error::Config("state space dimensions must be positive".into()));
        }
        if self.viewpoint_mirror.len() != self.viewpoints
            || self
                .viewpoint_mirror
                .iter()
                .enumerate()
                .any(|(v, &m)| m >= self.viewpoints || self.viewpoint_mirror[m] != v)
        {
            return Err(Error::Config("viewpoint mirror table must be an involution".into()));
        }
        if self.patterns.len() != topology.num_parts() {
            return Err(Error::Config(format!(
                "occlusion patterns given for {} parts, topology has {}",
                self.patterns.len(),
                topology.num_parts()
            )));
        }
        for (p, per_view) in self.patterns.iter().enumerate() {
            if per_view.len() != self.viewpoints {
                return Err(Error::Config(format!("part {p}: patterns missing for some viewpoints")));
            }
            let n = topology.landmarks_of(p).len();
            for pats in per_view {
                if pats.len() != self.occlusions || pats.iter().any(|b| b.len() != n) {
                    return Err(Error::Config(format!(
                        "part {p}: expected {} patterns of length {n}",
                        self.occlusions
                    )));
                }
            }
        }
        Ok(())
    }
}
