use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{occlusion_pr, report_from_errors, normalized_error, LocalizationReport};
use crate::detection::{localize_track, DetectionConfig, Detection, ImagePyramids};
use crate::error::{Error, Result};
use crate::features::Image;
use crate::geometry::BBox;
use crate::inference::UnaryResponses;
use crate::model::{Mixture, Model};
use crate::supervision::AnnotatedFace;

/// Copy of `model` with every bias between a part and an occluded landmark
/// state moved from `b` to `b + |b| * alpha`.
pub fn perturb_occlusion_biases(model: &Model, alpha: f64) -> Model {
    let mut out = model.clone();
    if alpha == 0.0 {
        return out;
    }
    for i in model.occluded_landmark_bias_indices() {
        let b = model.params()[i];
        if b.is_finite() {
            out.params_mut()[i] = b + b.abs() * alpha;
        }
    }
    out
}

/// Result of localizing one face for one model variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizedFace {
    pub face: usize,
    pub detection: Option<Detection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Faces with no detection covering their box.
    pub failures: usize,
    pub localization: LocalizationReport,
    pub faces: Vec<LocalizedFace>,
}

/// Box used to localize `face`: its annotated box, or the padded landmark
/// box when none is given.
pub fn query_box(face: &AnnotatedFace, padding: f64) -> Result<BBox> {
    match face.bbox {
        Some(b) => Ok(b),
        None => {
            let t = BBox::around(&face.landmarks)
                .ok_or_else(|| Error::Data(format!("face in {} has no landmarks", face.image.display())))?;
            Ok(t.pad(padding * t.height()))
        }
    }
}

/// Best full-resolution detection per model variant covering the query box
/// of each face. Appearance responses are shared across variants.
fn localize_variants(
    variants: &[Model],
    faces: &[AnnotatedFace],
    config: &DetectionConfig,
) -> Result<Vec<Vec<Option<Detection>>>> {
    let model = &variants[0];
    faces
        .par_iter()
        .map(|face| {
            let image = Image::load(&face.image)?;
            let given = query_box(face, config.box_padding)?;
            let pyr = ImagePyramids::build(model, &image, &config.pyramid)?;
            let mut best: Vec<Option<Detection>> = vec![None; variants.len()];
            for track in pyr.tracks(model) {
                let (c, r, s) = track;
                if model.component(c).mixture != Mixture::Full {
                    continue;
                }
                let level = pyr.for_component(model, c).expect("listed").level(r, s);
                let unary = UnaryResponses::compute(model, c, level);
                for (v, m) in variants.iter().enumerate() {
                    if let Some(d) = localize_track(m, &pyr, track, Some(&unary), &given, config)? {
                        if best[v].as_ref().map_or(true, |b| d.score > b.score) {
                            best[v] = Some(d);
                        }
                    }
                }
            }
            Ok(best)
        })
        .collect()
}

/// Localize every face with the full-resolution mixtures inside its query
/// box. Faces without a covering detection get `None`.
pub fn localize_faces(model: &Model, faces: &[AnnotatedFace], config: &DetectionConfig) -> Result<Vec<LocalizedFace>> {
    let per_face = localize_variants(std::slice::from_ref(model), faces, config)?;
    Ok(per_face
        .into_iter()
        .enumerate()
        .map(|(face, mut d)| LocalizedFace {
            face,
            detection: d.pop().flatten(),
        })
        .collect())
}

/// Occlusion and localization scores of one set of predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub failures: usize,
    pub localization: LocalizationReport,
}

/// Score predictions against ground truth. `None`, or a prediction with
/// the wrong landmark count, is a failure: it counts against the success
/// rate and is left out of the mean error and the occlusion counts.
pub fn score_faces(
    faces: &[AnnotatedFace],
    predictions: &[Option<Detection>],
    eyes: &[Vec<usize>; 2],
    threshold: f64,
) -> Result<FaceScores> {
    if faces.len() != predictions.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} ground-truth faces",
            predictions.len(),
            faces.len()
        )));
    }
    let (mut pred, mut gt) = (Vec::new(), Vec::new());
    let mut errors = Vec::new();
    let mut failures = 0;
    for (face, det) in faces.iter().zip(predictions) {
        match det {
            Some(d) if d.landmarks.len() == face.landmarks.len() && d.occluded.len() == face.landmarks.len() => {
                errors.push(normalized_error(&d.landmarks, &face.landmarks, eyes)?);
                pred.extend_from_slice(&d.occluded);
                gt.extend(face.occluded.clone().unwrap_or_else(|| vec![false; face.landmarks.len()]));
            }
            _ => failures += 1,
        }
    }
    let (precision, recall) = occlusion_pr(&pred, &gt)?;
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(FaceScores {
        precision,
        recall,
        f1,
        failures,
        localization: report_from_errors(errors, threshold, failures),
    })
}

/// Localize every face (full-resolution mixtures only) under each bias
/// offset and score occlusion flags and landmark error. Appearance
/// responses are computed once per image and shared across offsets.
pub fn occlusion_pr_sweep(
    model: &Model,
    faces: &[AnnotatedFace],
    alphas: &[f64],
    config: &DetectionConfig,
    eyes: &[Vec<usize>; 2],
    threshold: f64,
) -> Result<Vec<SweepPoint>> {
    if alphas.is_empty() {
        return Ok(Vec::new());
    }
    let variants: Vec<Model> = alphas.iter().map(|&a| perturb_occlusion_biases(model, a)).collect();
    let per_face = localize_variants(&variants, faces, config)?;
    let mut out = Vec::new();
    for (v, &alpha) in alphas.iter().enumerate() {
        let dets: Vec<Option<Detection>> = per_face.iter().map(|d| d[v].clone()).collect();
        let s = score_faces(faces, &dets, eyes, threshold)?;
        out.push(SweepPoint {
            alpha,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            failures: s.failures,
            localization: s.localization,
            faces: dets
                .into_iter()
                .enumerate()
                .map(|(face, detection)| LocalizedFace { face, detection })
                .collect(),
        });
    }
    Ok(out)
}
