//! Run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detection::DetectionConfig;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_SUCCESS_THRESHOLD;
use crate::model::{Topology, TopologySpec};
use crate::supervision::{ReferenceShapeSet, SupervisionConfig};
use crate::training::TrainingConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Offsets applied to occluded-landmark biases in the sweep.
    pub alphas: Vec<f64>,
    pub success_threshold: f64,
    /// IoU needed to match a detection to a ground-truth box.
    pub detection_iou: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 0.5, 1.0, 2.0],
            success_threshold: DEFAULT_SUCCESS_THRESHOLD,
            detection_iou: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Part tree JSON; the 68-point face when absent.
    pub topology: Option<PathBuf>,
    /// Viewpoint-labeled reference shapes; the generic turned face when
    /// absent.
    pub reference_shapes: Option<PathBuf>,
    pub supervision: SupervisionConfig,
    pub training: TrainingConfig,
    pub detection: DetectionConfig,
    pub evaluation: EvaluationConfig,
    /// Overrides the supervision and training seeds when set.
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl RunConfig {
    /// Parse and validate; relative paths resolve against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.topology, &mut cfg.reference_shapes].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.supervision.seed = s;
            self.training.seed = s;
        }
    }

    /// Replace the seed everywhere.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self.apply_seed();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.supervision;
        if s.viewpoints == 0 || s.shapes == 0 || s.occlusions == 0 {
            return Err(Error::Config("viewpoints, shapes and occlusions must be positive".into()));
        }
        if s.cell_size == 0 || s.low_res_cell_size == 0 {
            return Err(Error::Config("cell sizes must be positive".into()));
        }
        if s.template_size % 2 == 0 || s.low_res_template_size % 2 == 0 {
            return Err(Error::Config("template sizes must be odd".into()));
        }
        if !(s.canonical_ipd > 0.0) {
            return Err(Error::Config("canonical_ipd must be positive".into()));
        }
        if self.detection.pyramid.cell_size != s.cell_size {
            return Err(Error::Config(format!(
                "detection pyramid cell size {} differs from the model cell size {}",
                self.detection.pyramid.cell_size, s.cell_size
            )));
        }
        if self.training.pyramid.cell_size != s.cell_size {
            return Err(Error::Config("training pyramid cell size differs from the model cell size".into()));
        }
        self.training.validate()?;
        let d = &self.detection;
        if !(0.0..=1.0).contains(&d.nms_overlap) || !(d.min_box_overlap > 0.0 && d.min_box_overlap <= 1.0) {
            return Err(Error::Config("overlap thresholds must lie in [0, 1]".into()));
        }
        if !(d.box_padding >= 0.0) || d.threshold.is_nan() {
            return Err(Error::Config("box padding must be >= 0 and the threshold a number".into()));
        }
        let e = &self.evaluation;
        if e.alphas.iter().any(|a| !a.is_finite()) || !(e.success_threshold > 0.0) {
            return Err(Error::Config("alphas must be finite and the success threshold positive".into()));
        }
        if !(e.detection_iou > 0.0 && e.detection_iou <= 1.0) {
            return Err(Error::Config("detection IoU must lie in (0, 1]".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let topo = self.topology()?;
        let n = topo.num_landmarks();
        if s.eyes.iter().any(|g| g.is_empty() || g.iter().any(|&k| k >= n)) {
            return Err(Error::Config(format!("eye landmark groups must be non-empty indices below {n}")));
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology> {
        match &self.topology {
            None => Ok(Topology::face68()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read topology {}: {e}", p.display())))?;
                let spec: TopologySpec =
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Topology::new(spec)
            }
        }
    }

    pub fn references(&self) -> Result<ReferenceShapeSet> {
        match &self.reference_shapes {
            None => Ok(ReferenceShapeSet::default_face(self.supervision.viewpoints)),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read reference shapes {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }
}
