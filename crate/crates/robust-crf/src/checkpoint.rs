//! JSON checkpoints of trained GCN weights.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use robust_crf_core::gcn::{GcnParameters, NORMALIZATION_TAG};
use robust_crf_core::{Graph, Matrix};

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint")]
    Parse(#[from] serde_json::Error),
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    #[serde(rename = "D")]
    d: usize,
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "C")]
    c: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    meta: Meta,
    w1: Vec<Vec<f64>>,
    w2: Vec<Vec<f64>>,
}

/// Serializes to `{"meta":{"D":..,"H":..,"C":..},"w1":[[..]],"w2":[[..]]}`.
/// Doubles are written in shortest round-trip form.
pub fn to_json(params: &GcnParameters) -> String {
    let file = CheckpointFile {
        meta: Meta {
            d: params.input_dim(),
            h: params.hidden_dim(),
            c: params.num_classes(),
            normalization: Some(NORMALIZATION_TAG.to_owned()),
        },
        w1: params.w1.to_rows(),
        w2: params.w2.to_rows(),
    };
    serde_json::to_string(&file).expect("checkpoint serializes") + "\n"
}

pub fn from_json(text: &str) -> Result<GcnParameters, CheckpointError> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if let Some(tag) = &file.meta.normalization {
        if tag != NORMALIZATION_TAG {
            return Err(CheckpointError::Invalid(format!("unsupported normalization `{tag}`")));
        }
    }
    let w1 = Matrix::from_rows(&file.w1).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    let w2 = Matrix::from_rows(&file.w2).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    if w1.shape() != (file.meta.d, file.meta.h) || w2.shape() != (file.meta.h, file.meta.c) {
        return Err(CheckpointError::Invalid(format!(
            "weights {:?} and {:?} disagree with meta D={}, H={}, C={}",
            w1.shape(),
            w2.shape(),
            file.meta.d,
            file.meta.h,
            file.meta.c
        )));
    }
    GcnParameters::new(w1, w2).map_err(|e| CheckpointError::Invalid(e.to_string()))
}

pub fn save_checkpoint(params: &GcnParameters, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, to_json(params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GcnParameters, CheckpointError> {
    from_json(&fs::read_to_string(path)?)
}

/// Checks that a checkpoint can run on `graph`.
pub fn check_compatible(params: &GcnParameters, graph: &Graph) -> Result<(), CheckpointError> {
    if params.input_dim() != graph.num_features() || params.num_classes() != graph.num_classes() {
        return Err(CheckpointError::Invalid(format!(
            "checkpoint expects D={}, C={} but dataset has D={}, C={}",
            params.input_dim(),
            params.num_classes(),
            graph.num_features(),
            graph.num_classes()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use robust_crf_core::gcn::{forward, init_parameters};
    use robust_crf_core::graph::{generate_synthetic, SyntheticSpec};

    #[test]
    fn round_trip_is_bit_exact() {
        let (g, _) =
            generate_synthetic(&SyntheticSpec { num_nodes: 20, feature_dim: 4, ..SyntheticSpec::default() }).unwrap();
        let p = init_parameters(11, 4, 16, 2).unwrap();
        let q = from_json(&to_json(&p)).unwrap();
        assert_eq!(p, q);
        assert_eq!(forward(&p, &g).unwrap(), forward(&q, &g).unwrap());
        check_compatible(&q, &g).unwrap();
    }

    #[test]
    fn corrupt_and_mismatched_files() {
        assert!(matches!(from_json("{\"meta\":"), Err(CheckpointError::Parse(_))));
        let bad = r#"{"meta":{"D":2,"H":1,"C":2},"w1":[[0.1],[0.2],[0.3]],"w2":[[1.0,2.0]]}"#;
        assert!(matches!(from_json(bad), Err(CheckpointError::Invalid(_))));
        let (g, _) =
            generate_synthetic(&SyntheticSpec { num_nodes: 20, feature_dim: 4, ..SyntheticSpec::default() }).unwrap();
        let p = init_parameters(1, 3, 2, 2).unwrap();
        assert!(check_compatible(&p, &g).is_err());
    }
}
