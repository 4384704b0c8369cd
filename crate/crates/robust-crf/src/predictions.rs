//! Predictions CSV: header `node,p0,..,p{C-1}`, one row per node.

use std::fmt::Write as _;

use robust_crf_core::gcn::PredictionMatrix;

pub fn to_csv(pred: &PredictionMatrix) -> String {
    let mut out = String::from("node");
    for c in 0..pred.num_classes() {
        write!(out, ",p{c}").unwrap();
    }
    out.push('\n');
    for i in 0..pred.num_nodes() {
        write!(out, "{i}").unwrap();
        for v in pred.row(i) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}
