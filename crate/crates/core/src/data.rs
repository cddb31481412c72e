//! Text dataset format.
//!
//! A dataset is a directory holding
//!
//! * `edges.tsv`: `src<TAB>dst` per line, undirected;
//! * `attributes.tsv`: `node<TAB>dim:value,dim:value,...` (sparse) or
//!   `node<TAB>v0,v1,...` (dense), optionally preceded by a header line
//!   `# n_nodes=N n_dims=D`; nodes without a line have all-zero attributes;
//! * `labels.tsv` (optional): `node<TAB>class` for every node.
//!
//! Blank lines and lines starting with `#` are ignored everywhere else.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Result, SagaError};
use crate::graph::SparseGraph;

pub const EDGES_FILE: &str = "edges.tsv";
pub const ATTRIBUTES_FILE: &str = "attributes.tsv";
pub const LABELS_FILE: &str = "labels.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub graph: SparseGraph,
    /// Complete attributes, before any masking.
    pub attributes: Array2<f64>,
    pub labels: Option<Vec<usize>>,
}

impl DatasetBundle {
    pub fn new(
        name: impl Into<String>,
        graph: SparseGraph,
        attributes: Array2<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = graph.n_nodes();
        if attributes.nrows() != n {
            return Err(SagaError::Dataset(format!(
                "{n} nodes but {} attribute rows",
                attributes.nrows()
            )));
        }
        if attributes.iter().any(|v| !v.is_finite()) {
            return Err(SagaError::Dataset("non-finite attribute value".into()));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(SagaError::Dataset(format!("{n} nodes but {} labels", l.len())));
            }
        }
        Ok(Self {
            name: name.into(),
            graph,
            attributes,
            labels,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn n_dims(&self) -> usize {
        self.attributes.ncols()
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().max().map_or(0, |&m| m + 1))
    }

    /// True when every attribute is 0 or 1, the case where profiling metrics apply.
    pub fn is_binary(&self) -> bool {
        self.attributes.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// `(nodes, dims, classes)` of the benchmarks this loader knows by name.
pub fn known_shape(name: &str) -> Option<(usize, usize, usize)> {
    match name.to_ascii_lowercase().as_str() {
        "cora" => Some((2708, 1433, 7)),
        "citeseer" => Some((3327, 3703, 6)),
        _ => None,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> SagaError {
    SagaError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| SagaError::io(path, e))
}

/// Non-comment lines as `(1-based line number, text)`.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

fn parse_index(path: &Path, line: usize, s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {what} {:?}", s.trim())))
}

fn split_tab<'a>(path: &Path, line: usize, l: &'a str) -> Result<(&'a str, &'a str)> {
    l.split_once('\t')
        .ok_or_else(|| parse_err(path, line, "expected two tab-separated fields"))
}

fn parse_edges(path: &Path, text: &str) -> Result<Vec<(usize, usize)>> {
    content_lines(text)
        .map(|(ln, l)| {
            let (a, b) = split_tab(path, ln, l)?;
            Ok((parse_index(path, ln, a, "node")?, parse_index(path, ln, b, "node")?))
        })
        .collect()
}

struct AttributeLines {
    header: Option<(usize, usize)>,
    rows: Vec<(usize, usize, Vec<(usize, f64)>)>,
    dense_width: Option<usize>,
}

fn parse_header(path: &Path, ln: usize, l: &str) -> Result<Option<(usize, usize)>> {
    let body = l.trim_start().trim_start_matches('#').trim();
    if !body.contains("n_nodes=") {
        return Ok(None);
    }
    let (mut n, mut d) = (None, None);
    for tok in body.split_whitespace() {
        if let Some(v) = tok.strip_prefix("n_nodes=") {
            n = Some(parse_index(path, ln, v, "n_nodes")?);
        } else if let Some(v) = tok.strip_prefix("n_dims=") {
            d = Some(parse_index(path, ln, v, "n_dims")?);
        }
    }
    match (n, d) {
        (Some(n), Some(d)) => Ok(Some((n, d))),
        _ => Err(parse_err(path, ln, "header needs both n_nodes= and n_dims=")),
    }
}

fn parse_attributes(path: &Path, text: &str) -> Result<AttributeLines> {
    let mut header = None;
    if let Some((ln, first)) = text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty())
    {
        if first.trim_start().starts_with('#') {
            header = parse_header(path, ln + 1, first)?;
        }
    }
    let mut rows = Vec::new();
    let mut dense_width = None;
    for (ln, l) in content_lines(text) {
        let (node, body) = l.split_once('\t').unwrap_or((l, ""));
        let node = parse_index(path, ln, node, "node")?;
        let body = body.trim();
        let mut entries = Vec::new();
        if body.contains(':') {
            for item in body.split(',') {
                let (d, v) = item
                    .split_once(':')
                    .ok_or_else(|| parse_err(path, ln, format!("expected dim:value, got {item:?}")))?;
                let d = parse_index(path, ln, d, "dimension")?;
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(path, ln, format!("bad value {:?}", v.trim())))?;
                if !v.is_finite() {
                    return Err(parse_err(path, ln, "non-finite value"));
                }
                entries.push((d, v));
            }
        } else if !body.is_empty() {
            for (d, item) in body.split(',').enumerate() {
                let v: f64 = item
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(path, ln, format!("bad value {:?}", item.trim())))?;
                if !v.is_finite() {
                    return Err(parse_err(path, ln, "non-finite value"));
                }
                entries.push((d, v));
            }
            let w = entries.len();
            match dense_width {
                None => dense_width = Some(w),
                Some(prev) if prev != w => {
                    return Err(parse_err(
                        path,
                        ln,
                        format!("dense row has {w} values, earlier rows have {prev}"),
                    ))
                }
                _ => {}
            }
        }
        rows.push((ln, node, entries));
    }
    Ok(AttributeLines {
        header,
        rows,
        dense_width,
    })
}

fn parse_labels(path: &Path, text: &str) -> Result<Vec<(usize, usize, usize)>> {
    content_lines(text)
        .map(|(ln, l)| {
            let (a, b) = split_tab(path, ln, l)?;
            Ok((ln, parse_index(path, ln, a, "node")?, parse_index(path, ln, b, "class")?))
        })
        .collect()
}

/// Loads a dataset directory. Self-loops and duplicate edges are dropped
/// with a warning; everything else malformed is an error naming the line.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let edges_path = dir.join(EDGES_FILE);
    let attr_path = dir.join(ATTRIBUTES_FILE);
    let labels_path = dir.join(LABELS_FILE);

    let edges = parse_edges(&edges_path, &read(&edges_path)?)?;
    let attrs = parse_attributes(&attr_path, &read(&attr_path)?)?;
    let labels = if labels_path.exists() {
        Some(parse_labels(&labels_path, &read(&labels_path)?)?)
    } else {
        None
    };

    let (n, d) = match attrs.header {
        Some(h) => h,
        None => {
            let max_node = edges
                .iter()
                .flat_map(|&(a, b)| [a, b])
                .chain(attrs.rows.iter().map(|r| r.1))
                .chain(labels.iter().flatten().map(|r| r.1))
                .max();
            let max_dim = attrs.rows.iter().flat_map(|r| r.2.iter().map(|e| e.0)).max();
            (
                max_node.map_or(0, |m| m + 1),
                attrs.dense_width.unwrap_or(max_dim.map_or(0, |m| m + 1)),
            )
        }
    };

    let mut x = Array2::zeros((n, d));
    let mut seen = vec![false; n];
    for (ln, node, entries) in &attrs.rows {
        if *node >= n {
            return Err(parse_err(&attr_path, *ln, format!("node {node} outside 0..{n}")));
        }
        if std::mem::replace(&mut seen[*node], true) {
            return Err(parse_err(&attr_path, *ln, format!("node {node} listed twice")));
        }
        for &(dim, v) in entries {
            if dim >= d {
                return Err(parse_err(&attr_path, *ln, format!("dimension {dim} outside 0..{d}")));
            }
            x[[*node, dim]] = v;
        }
    }
    if let Some(w) = attrs.dense_width {
        if w != d {
            return Err(SagaError::Dataset(format!(
                "dense attribute rows have {w} values, header declares {d}"
            )));
        }
    }

    if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= n || b >= n) {
        return Err(SagaError::Dataset(format!(
            "edge ({a}, {b}) references a node outside 0..{n}"
        )));
    }
    let (graph, cleanup) = SparseGraph::from_edges_lossy(n, &edges)?;
    if cleanup.self_loops > 0 || cleanup.duplicates > 0 {
        log::warn!(
            "{}: dropped {} self-loops and {} duplicate edges",
            edges_path.display(),
            cleanup.self_loops,
            cleanup.duplicates
        );
    }

    let labels = match labels {
        None => None,
        Some(lines) => {
            let mut out = vec![usize::MAX; n];
            for (ln, node, class) in lines {
                if node >= n {
                    return Err(parse_err(&labels_path, ln, format!("node {node} outside 0..{n}")));
                }
                if out[node] != usize::MAX {
                    return Err(parse_err(&labels_path, ln, format!("node {node} labeled twice")));
                }
                out[node] = class;
            }
            if let Some(missing) = out.iter().position(|&c| c == usize::MAX) {
                return Err(SagaError::Dataset(format!("node {missing} has no label")));
            }
            Some(out)
        }
    };

    let bundle = DatasetBundle::new(name, graph, x, labels)?;
    if let Some((kn, kd, kc)) = known_shape(&bundle.name) {
        let got = (bundle.n_nodes(), bundle.n_dims(), bundle.n_classes().unwrap_or(kc));
        if got != (kn, kd, kc) {
            return Err(SagaError::Dataset(format!(
                "{} should have {kn} nodes, {kd} dims, {kc} classes; found {got:?}",
                bundle.name
            )));
        }
    }
    Ok(bundle)
}

fn write(path: PathBuf, text: String) -> Result<()> {
    fs::write(&path, text).map_err(|e| SagaError::io(path, e))
}

/// Writes `bundle` in the directory format read by [`load_dataset`];
/// attributes are written sparse with a header.
pub fn save_dataset(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| SagaError::io(dir, e))?;
    let mut edges = String::new();
    for &(a, b) in bundle.graph.edges() {
        edges.push_str(&format!("{a}\t{b}\n"));
    }
    write(dir.join(EDGES_FILE), edges)?;
    write(
        dir.join(ATTRIBUTES_FILE),
        format_attributes(&bundle.attributes),
    )?;
    if let Some(labels) = &bundle.labels {
        let mut s = String::new();
        for (i, c) in labels.iter().enumerate() {
            s.push_str(&format!("{i}\t{c}\n"));
        }
        write(dir.join(LABELS_FILE), s)?;
    }
    Ok(())
}

/// Sparse attribute text with a header; values use the shortest
/// representation that parses back to the same `f64`.
pub fn format_attributes(x: &Array2<f64>) -> String {
    let mut s = format!("# n_nodes={} n_dims={}\n", x.nrows(), x.ncols());
    for (i, row) in x.outer_iter().enumerate() {
        let items: Vec<String> = row
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(d, v)| format!("{d}:{v}"))
            .collect();
        s.push_str(&format!("{i}\t{}\n", items.join(",")));
    }
    s
}

/// Reads an attribute file on its own (for example an imputed matrix).
pub fn load_attributes(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let attrs = parse_attributes(path, &read(path)?)?;
    let (n, d) = attrs.header.ok_or_else(|| {
        parse_err(path, 1, "standalone attribute files need a '# n_nodes=N n_dims=D' header")
    })?;
    let mut x = Array2::zeros((n, d));
    for (ln, node, entries) in attrs.rows {
        if node >= n {
            return Err(parse_err(path, ln, format!("node {node} outside 0..{n}")));
        }
        for (dim, v) in entries {
            if dim >= d {
                return Err(parse_err(path, ln, format!("dimension {dim} outside 0..{d}")));
            }
            x[[node, dim]] = v;
        }
    }
    Ok(x)
}

pub fn save_attributes(x: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref().to_path_buf(), format_attributes(x))
}
