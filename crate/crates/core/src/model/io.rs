//! Versioned JSON model files. Appearance templates are stored as
//! little-endian f64 blocks in base64; the remaining weights are plain
//! numbers, with `"-inf"` for masked entries.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Component, Mixture, Model, StateSpace, TopologySpec, Topology};
use crate::error::{Error, Result};
use crate::features::HOG_DIM;
use crate::NEG_INF;

pub const MODEL_FORMAT: &str = "hpm-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Num {
    Finite(f64),
    Symbol(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Block {
    dims: Vec<usize>,
    encoding: String,
    data: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentFile {
    mixture: Mixture,
    topology: TopologySpec,
    states: StateSpace,
    cell_size: usize,
    template: [usize; 2],
    landmark_anchors: Vec<Vec<[i64; 2]>>,
    part_anchors: Vec<Vec<[i64; 2]>>,
    appearance: Block,
    landmark_springs: Vec<Num>,
    part_springs: Vec<Num>,
    part_biases: Vec<Num>,
    landmark_biases: Vec<Num>,
    offset: Num,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    num_params: usize,
    components: Vec<ComponentFile>,
}

const ENCODING: &str = "f64le-base64";

fn encode_nums(values: &[f64]) -> Result<Vec<Num>> {
    values.iter().map(|&v| encode_num(v)).collect()
}

fn encode_num(v: f64) -> Result<Num> {
    if v.is_finite() {
        Ok(Num::Finite(v))
    } else if v == NEG_INF {
        Ok(Num::Symbol("-inf".into()))
    } else {
        Err(Error::Domain(format!("cannot serialize weight {v}")))
    }
}

fn decode_nums(values: &[Num], location: &str) -> Result<Vec<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| decode_num(v, &format!("{location}[{i}]")))
        .collect()
}

fn decode_num(v: &Num, location: &str) -> Result<f64> {
    match v {
        Num::Finite(x) => Ok(*x),
        Num::Symbol(s) if s == "-inf" => Ok(NEG_INF),
        Num::Symbol(s) => Err(corrupt(location, format!("unexpected value {s:?}"))),
    }
}

fn corrupt(location: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Corrupt {
        location: location.into(),
        reason: reason.into(),
    }
}

/// Serialize a model to its JSON document.
pub fn model_to_string(model: &Model) -> Result<String> {
    let w = model.params();
    let mut components = Vec::new();
    for comp in model.components() {
        let sizes = comp.sizes();
        let mut at = comp.base();
        let mut take = |n: usize| {
            let s = &w[at..at + n];
            at += n;
            s
        };
        let appearance = take(sizes[0]);
        let bytes: Vec<u8> = appearance.iter().flat_map(|v| v.to_le_bytes()).collect();
        let (lsp, psp, pb, lb) = (take(sizes[1]), take(sizes[2]), take(sizes[3]), take(sizes[4]));
        let offset = take(1)[0];
        components.push(ComponentFile {
            mixture: comp.mixture,
            topology: comp.topology.spec().clone(),
            states: comp.states.clone(),
            cell_size: comp.cell_size,
            template: [comp.template_h, comp.template_w],
            landmark_anchors: comp.landmark_anchors.clone(),
            part_anchors: comp.part_anchors.clone(),
            appearance: Block {
                dims: vec![
                    comp.topology.num_landmarks(),
                    comp.num_states(),
                    comp.template_h,
                    comp.template_w,
                    HOG_DIM,
                ],
                encoding: ENCODING.into(),
                data: STANDARD.encode(bytes),
            },
            landmark_springs: encode_nums(lsp)?,
            part_springs: encode_nums(psp)?,
            part_biases: encode_nums(pb)?,
            landmark_biases: encode_nums(lb)?,
            offset: encode_num(offset)?,
        });
    }
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        num_params: model.num_params(),
        components,
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

/// Parse a model JSON document.
pub fn model_from_str(text: &str) -> Result<Model> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| {
        corrupt(
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })?;
    if file.format != MODEL_FORMAT {
        return Err(corrupt("format", format!("expected {MODEL_FORMAT:?}, found {:?}", file.format)));
    }
    if file.version != MODEL_VERSION {
        return Err(corrupt(
            "version",
            format!("unsupported version {} (expected {MODEL_VERSION})", file.version),
        ));
    }
    let mut components = Vec::new();
    let mut params = Vec::new();
    for (i, cf) in file.components.iter().enumerate() {
        let loc = |field: &str| format!("components[{i}].{field}");
        let topology = Topology::new(cf.topology.clone()).map_err(|e| corrupt(loc("topology"), e.to_string()))?;
        let mut comp = Component::new(cf.mixture, topology, cf.states.clone(), cf.cell_size, (cf.template[0], cf.template[1]))
            .map_err(|e| corrupt(loc("states"), e.to_string()))?;
        comp.landmark_anchors = cf.landmark_anchors.clone();
        comp.part_anchors = cf.part_anchors.clone();
        comp.validate().map_err(|e| corrupt(loc("anchors"), e.to_string()))?;
        let sizes = comp.sizes();
        let dims = [
            comp.topology.num_landmarks(),
            comp.num_states(),
            comp.template_h,
            comp.template_w,
            HOG_DIM,
        ];
        if cf.appearance.dims != dims {
            return Err(corrupt(
                loc("appearance.dims"),
                format!("expected {dims:?}, found {:?}", cf.appearance.dims),
            ));
        }
        if cf.appearance.encoding != ENCODING {
            return Err(corrupt(loc("appearance.encoding"), format!("unknown encoding {:?}", cf.appearance.encoding)));
        }
        let bytes = STANDARD
            .decode(&cf.appearance.data)
            .map_err(|e| corrupt(loc("appearance.data"), e.to_string()))?;
        if bytes.len() != sizes[0] * 8 {
            return Err(corrupt(
                loc("appearance.data"),
                format!("expected {} bytes, found {}", sizes[0] * 8, bytes.len()),
            ));
        }
        params.extend(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))));
        let lists: [(&str, &Vec<Num>, usize); 4] = [
            ("landmark_springs", &cf.landmark_springs, sizes[1]),
            ("part_springs", &cf.part_springs, sizes[2]),
            ("part_biases", &cf.part_biases, sizes[3]),
            ("landmark_biases", &cf.landmark_biases, sizes[4]),
        ];
        for (name, values, n) in lists {
            if values.len() != n {
                return Err(corrupt(loc(name), format!("expected {n} values, found {}", values.len())));
            }
            params.extend(decode_nums(values, &loc(name))?);
        }
        params.push(decode_num(&cf.offset, &loc("offset"))?);
        components.push(comp);
    }
    if params.len() != file.num_params {
        return Err(corrupt(
            "num_params",
            format!("header declares {}, components hold {}", file.num_params, params.len()),
        ));
    }
    Model::from_params(components, params).map_err(|e| corrupt("components", e.to_string()))
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_string(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    model_from_str(&std::fs::read_to_string(path)?)
}
