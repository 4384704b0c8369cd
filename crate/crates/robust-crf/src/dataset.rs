//! Dataset directory format.
//!
//! ```text
//! meta.json     {"num_nodes":n,"num_features":D,"num_classes":C}
//! edges.csv     one `src,dst` pair per line, 0-indexed, undirected, no header
//! features.csv  n rows of D comma-separated decimals
//! labels.csv    n rows of one integer
//! splits.json   {"train":[...],"val":[...],"test":[...]}
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use robust_crf_core::{DatasetSplits, Graph, Matrix};

pub const META_FILE: &str = "meta.json";
pub const EDGES_FILE: &str = "edges.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const SPLITS_FILE: &str = "splits.json";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse { file: PathBuf, line: usize, message: String },
    #[error("{file}: {message}")]
    Json { file: PathBuf, message: String },
    #[error("empty dataset rejected")]
    Empty,
    #[error(transparent)]
    Invalid(#[from] robust_crf_core::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_owned(), source })
}

fn write(path: &Path, contents: &str) -> Result<(), DatasetError> {
    fs::write(path, contents).map_err(|source| DatasetError::Io { path: path.to_owned(), source })
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse { file: file.to_owned(), line, message: message.into() }
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty())
}

fn parse_index(file: &Path, line: usize, field: &str, bound: usize, what: &str) -> Result<usize, DatasetError> {
    let v: usize = field.trim().parse().map_err(|_| parse_err(file, line, format!("malformed {what} `{field}`")))?;
    if v >= bound {
        return Err(parse_err(file, line, format!("{what} out of range: {v} (limit {bound})")));
    }
    Ok(v)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Graph, DatasetSplits), DatasetError> {
    let dir = dir.as_ref();

    let meta_path = dir.join(META_FILE);
    let meta: DatasetMeta = serde_json::from_str(&read(&meta_path)?)
        .map_err(|e| DatasetError::Json { file: meta_path.clone(), message: e.to_string() })?;
    if meta.num_nodes == 0 {
        return Err(DatasetError::Empty);
    }
    let n = meta.num_nodes;

    let feat_path = dir.join(FEATURES_FILE);
    let feat_text = read(&feat_path)?;
    let mut data = Vec::with_capacity(n * meta.num_features);
    let mut rows = 0;
    for (line, text) in lines(&feat_text) {
        if rows == n {
            return Err(parse_err(&feat_path, line, format!("more than {n} feature rows")));
        }
        let before = data.len();
        for field in text.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(&feat_path, line, format!("malformed feature `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(&feat_path, line, "non-finite feature"));
            }
            data.push(v);
        }
        if data.len() - before != meta.num_features {
            return Err(parse_err(
                &feat_path,
                line,
                format!("expected {} features, found {}", meta.num_features, data.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(&feat_path, rows + 1, format!("expected {n} feature rows, found {rows}")));
    }
    let features = Matrix::from_vec(n, meta.num_features, data)?;

    let label_path = dir.join(LABELS_FILE);
    let label_text = read(&label_path)?;
    let mut labels = Vec::with_capacity(n);
    for (line, text) in lines(&label_text) {
        if labels.len() == n {
            return Err(parse_err(&label_path, line, format!("more than {n} labels")));
        }
        let v: usize = text.parse().map_err(|_| parse_err(&label_path, line, format!("malformed label `{text}`")))?;
        if v >= meta.num_classes {
            return Err(parse_err(
                &label_path,
                line,
                format!("label out of range: {v} (num_classes {})", meta.num_classes),
            ));
        }
        labels.push(v);
    }
    if labels.len() != n {
        return Err(parse_err(&label_path, labels.len() + 1, format!("expected {n} labels, found {}", labels.len())));
    }

    let edge_path = dir.join(EDGES_FILE);
    let edge_text = read(&edge_path)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut edges = Vec::new();
    for (line, text) in lines(&edge_text) {
        let mut fields = text.split(',');
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(&edge_path, line, format!("expected `src,dst`, found `{text}`")));
        };
        let a = parse_index(&edge_path, line, a, n, "node index")?;
        let b = parse_index(&edge_path, line, b, n, "node index")?;
        if a == b {
            return Err(parse_err(&edge_path, line, format!("self-loop at node {a}")));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(parse_err(&edge_path, line, format!("duplicate edge ({a},{b}) after symmetrization")));
        }
        edges.push((a, b));
    }

    let splits_path = dir.join(SPLITS_FILE);
    let splits: DatasetSplits = serde_json::from_str(&read(&splits_path)?)
        .map_err(|e| DatasetError::Json { file: splits_path.clone(), message: e.to_string() })?;
    splits.validate(n).map_err(|e| DatasetError::Json { file: splits_path.clone(), message: e.to_string() })?;

    let graph = Graph::new(edges, features, labels, meta.num_classes)?;
    Ok((graph, splits))
}

/// Writes the five dataset files; output is a pure function of the inputs.
pub fn save_dataset(graph: &Graph, splits: &DatasetSplits, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    if graph.num_nodes() == 0 {
        return Err(DatasetError::Empty);
    }
    splits.validate(graph.num_nodes())?;
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io { path: dir.to_owned(), source })?;

    let meta = DatasetMeta {
        num_nodes: graph.num_nodes(),
        num_features: graph.num_features(),
        num_classes: graph.num_classes(),
    };
    write(&dir.join(META_FILE), &(serde_json::to_string(&meta).expect("meta serializes") + "\n"))?;

    let mut edges = String::new();
    for (a, b) in graph.edges() {
        writeln!(edges, "{a},{b}").unwrap();
    }
    write(&dir.join(EDGES_FILE), &edges)?;

    let mut features = String::new();
    for r in 0..graph.num_nodes() {
        let row = graph.features().row(r);
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                features.push(',');
            }
            write!(features, "{v}").unwrap();
        }
        features.push('\n');
    }
    write(&dir.join(FEATURES_FILE), &features)?;

    let mut labels = String::new();
    for l in graph.labels() {
        writeln!(labels, "{l}").unwrap();
    }
    write(&dir.join(LABELS_FILE), &labels)?;

    write(&dir.join(SPLITS_FILE), &(serde_json::to_string(splits).expect("splits serialize") + "\n"))?;
    Ok(())
}
