//! Dataset loading, edge splitting, and synthetic graph generators.
//!
//! Loaders are strict: malformed lines, unknown ids, and shape mismatches
//! are reported with file names and line numbers rather than silently
//! skipped (the citation loader can optionally tolerate dangling citation
//! ids, which some published files contain).

use crate::dense::{DenseError, DenseMatrix};
use crate::graph::{Graph, GraphError};
use crate::sparse::CsrMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {details}")]
    Malformed {
        path: String,
        line: usize,
        details: String,
    },
    #[error("{path}:{line}: unknown vertex id {id}")]
    UnknownId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("dataset {name}: expected {expected} {what}, found {got}")]
    UnexpectedShape {
        name: String,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("label file is missing graph id {id}")]
    MissingLabel { id: String },
    #[error("invalid split fractions ({train}, {val}, {test}): {details}")]
    BadFractions {
        train: f64,
        val: f64,
        test: f64,
        details: &'static str,
    },
    #[error("graph too small for the requested split: {details}")]
    SplitTooSmall { details: String },
    #[error("cannot build masks: {details}")]
    BadMasks { details: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dense(#[from] DenseError),
}

type Result<T> = std::result::Result<T, DataError>;

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ----------------------------------------------------------------------
// Collections
// ----------------------------------------------------------------------

/// A corpus of independently labeled graphs (graph classification).
#[derive(Debug, Clone)]
pub struct LabeledGraphSet {
    pub graphs: Vec<Graph>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl LabeledGraphSet {
    pub fn new(graphs: Vec<Graph>, labels: Vec<usize>, name: &str) -> Result<Self> {
        if graphs.len() != labels.len() {
            return Err(DataError::UnexpectedShape {
                name: name.to_string(),
                what: "labels",
                expected: graphs.len(),
                got: labels.len(),
            });
        }
        if graphs.is_empty() {
            return Err(DataError::UnexpectedShape {
                name: name.to_string(),
                what: "graphs",
                expected: 1,
                got: 0,
            });
        }
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
        Ok(LabeledGraphSet {
            graphs,
            labels,
            num_classes,
            name: name.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}

/// A single graph whose vertices carry labels and train/val/test masks
/// (node classification).
#[derive(Debug, Clone)]
pub struct NodeDataset {
    pub graph: Graph,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
    pub name: String,
    pub stats: CitationStats,
}

impl NodeDataset {
    /// Checks mask invariants: equal lengths, pairwise disjoint, and every
    /// masked vertex within label range.
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.num_vertices();
        if self.labels.len() != n {
            return Err(DataError::BadMasks {
                details: format!("{} labels for {} vertices", self.labels.len(), n),
            });
        }
        for m in [&self.train_mask, &self.val_mask, &self.test_mask] {
            if m.len() != n {
                return Err(DataError::BadMasks {
                    details: format!("mask length {} for {} vertices", m.len(), n),
                });
            }
        }
        for i in 0..n {
            let picks = self.train_mask[i] as u8 + self.val_mask[i] as u8 + self.test_mask[i] as u8;
            if picks > 1 {
                return Err(DataError::BadMasks {
                    details: format!("vertex {i} appears in multiple masks"),
                });
            }
            if self.labels[i] >= self.num_classes {
                return Err(DataError::BadMasks {
                    details: format!(
                        "label {} at vertex {i} outside {} classes",
                        self.labels[i], self.num_classes
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Edge counts observed by the citation loader: the raw directed pair
/// count as published, and the canonical undirected count after dedup.
#[derive(Debug, Clone, Copy, Default)]
pub struct CitationStats {
    pub raw_directed_pairs: usize,
    pub undirected_edges: usize,
    pub skipped_dangling: usize,
}

// ----------------------------------------------------------------------
// Citation-format loaders
// ----------------------------------------------------------------------

/// Declared dimensions of a citation dataset in content/cites format.
#[derive(Debug, Clone, Copy)]
pub struct CitationSpec {
    pub name: &'static str,
    pub feature_dim: usize,
    pub classes: usize,
    /// Some published cites files reference ids absent from the content
    /// file; when true those lines are counted and skipped instead of
    /// rejected.
    pub allow_dangling: bool,
}

pub const CORA: CitationSpec = CitationSpec {
    name: "cora",
    feature_dim: 1433,
    classes: 7,
    allow_dangling: false,
};
pub const CITESEER: CitationSpec = CitationSpec {
    name: "citeseer",
    feature_dim: 3703,
    classes: 6,
    allow_dangling: true,
};
pub const PUBMED: CitationSpec = CitationSpec {
    name: "pubmed",
    feature_dim: 500,
    classes: 3,
    allow_dangling: false,
};

/// Loads a content/cites pair with the declared dimensions and attaches a
/// seeded stratified mask split (20 per class train / 500 val / 1000 test).
pub fn load_citation(
    content_path: &Path,
    cites_path: &Path,
    spec: &CitationSpec,
    mask_seed: u64,
) -> Result<NodeDataset> {
    let content = read_file(content_path)?;
    let cpath = content_path.display().to_string();

    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut feature_rows: Vec<Vec<f64>> = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != spec.feature_dim + 2 {
            return Err(DataError::Malformed {
                path: cpath.clone(),
                line: lineno + 1,
                details: format!(
                    "expected {} tab-separated fields, got {}",
                    spec.feature_dim + 2,
                    fields.len()
                ),
            });
        }
        let id = fields[0].to_string();
        if ids.contains_key(&id) {
            return Err(DataError::Malformed {
                path: cpath.clone(),
                line: lineno + 1,
                details: format!("duplicate vertex id {id}"),
            });
        }
        let mut feats = Vec::with_capacity(spec.feature_dim);
        for (k, f) in fields[1..=spec.feature_dim].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| DataError::Malformed {
                path: cpath.clone(),
                line: lineno + 1,
                details: format!("feature {k} is not a number: {f}"),
            })?;
            feats.push(v);
        }
        ids.insert(id, feature_rows.len());
        feature_rows.push(feats);
        label_names.push(fields[spec.feature_dim + 1].to_string());
    }
    if feature_rows.is_empty() {
        return Err(DataError::Malformed {
            path: cpath,
            line: 0,
            details: "empty content file".into(),
        });
    }

    // Map label strings to indices by sorted order for determinism.
    let mut distinct: Vec<String> = label_names
        .iter()
        .cloned()
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    distinct.sort();
    if distinct.len() != spec.classes {
        return Err(DataError::UnexpectedShape {
            name: spec.name.to_string(),
            what: "classes",
            expected: spec.classes,
            got: distinct.len(),
        });
    }
    let label_index: HashMap<&str, usize> = distinct
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let labels: Vec<usize> = label_names
        .iter()
        .map(|s| label_index[s.as_str()])
        .collect();

    let cites = read_file(cites_path)?;
    let xpath = cites_path.display().to_string();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut raw_pairs = 0usize;
    let mut skipped = 0usize;
    for (lineno, line) in cites.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(DataError::Malformed {
                    path: xpath.clone(),
                    line: lineno + 1,
                    details: format!("expected two ids, got: {line}"),
                })
            }
        };
        raw_pairs += 1;
        match (ids.get(a), ids.get(b)) {
            (Some(&u), Some(&v)) => {
                if u != v {
                    edges.push((u, v));
                }
            }
            (missing_a, _) => {
                if spec.allow_dangling {
                    skipped += 1;
                } else {
                    let id = if missing_a.is_none() { a } else { b };
                    return Err(DataError::UnknownId {
                        path: xpath.clone(),
                        line: lineno + 1,
                        id: id.to_string(),
                    });
                }
            }
        }
    }

    let n = feature_rows.len();
    let features = DenseMatrix::from_rows(&feature_rows)?;
    let graph = Graph::builder(n)
        .edges(&edges)
        .vertex_features(features)
        .build()?;
    let stats = CitationStats {
        raw_directed_pairs: raw_pairs,
        undirected_edges: graph.num_edges(),
        skipped_dangling: skipped,
    };

    let (train_mask, val_mask, test_mask) = default_masks(&labels, spec.classes, mask_seed)?;
    let ds = NodeDataset {
        graph,
        labels,
        num_classes: spec.classes,
        train_mask,
        val_mask,
        test_mask,
        name: spec.name.to_string(),
        stats,
    };
    ds.validate()?;
    Ok(ds)
}

/// Cora in content/cites format: 2708 vertices, 1433 binary features, 7
/// classes.
pub fn load_cora(content_path: &Path, cites_path: &Path) -> Result<NodeDataset> {
    let ds = load_citation(content_path, cites_path, &CORA, 0)?;
    if ds.graph.num_vertices() != 2708 {
        return Err(DataError::UnexpectedShape {
            name: "cora".into(),
            what: "vertices",
            expected: 2708,
            got: ds.graph.num_vertices(),
        });
    }
    Ok(ds)
}

/// Default masks for citation-style datasets: 20 training vertices per
/// class, 500 validation, 1000 test, scaled down proportionally when the
/// dataset is too small to supply them.
pub fn default_masks(
    labels: &[usize],
    num_classes: usize,
    seed: u64,
) -> Result<(Vec<bool>, Vec<bool>, Vec<bool>)> {
    let mut min_class = usize::MAX;
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        if l < num_classes {
            counts[l] += 1;
        }
    }
    for &c in &counts {
        min_class = min_class.min(c);
    }
    let train_per_class = 20.min((min_class / 2).max(1));
    let remaining = labels.len() - train_per_class * num_classes;
    let val_total = 500.min(remaining / 3);
    let test_total = 1000.min(remaining - val_total);
    stratified_masks(
        labels,
        num_classes,
        train_per_class,
        val_total,
        test_total,
        seed,
    )
}

/// Stratified random masks: `train_per_class` per class for training, then
/// `val_total` and `test_total` sampled from the remainder.
pub fn stratified_masks(
    labels: &[usize],
    num_classes: usize,
    train_per_class: usize,
    val_total: usize,
    test_total: usize,
    seed: u64,
) -> Result<(Vec<bool>, Vec<bool>, Vec<bool>)> {
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61736b); // "mask"
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(DataError::BadMasks {
                details: format!("label {l} outside {num_classes} classes"),
            });
        }
        by_class[l].push(i);
    }
    let mut train_mask = vec![false; n];
    let mut rest: Vec<usize> = Vec::new();
    for class in by_class.iter_mut() {
        if class.len() < train_per_class {
            return Err(DataError::BadMasks {
                details: format!(
                    "class with {} vertices cannot give {} training vertices",
                    class.len(),
                    train_per_class
                ),
            });
        }
        class.shuffle(&mut rng);
        for &i in class.iter().take(train_per_class) {
            train_mask[i] = true;
        }
        rest.extend(class.iter().skip(train_per_class));
    }
    if rest.len() < val_total + test_total {
        return Err(DataError::BadMasks {
            details: format!(
                "{} remaining vertices cannot fill val {} + test {}",
                rest.len(),
                val_total,
                test_total
            ),
        });
    }
    rest.sort_unstable(); // deterministic basis before the shuffle
    rest.shuffle(&mut rng);
    let mut val_mask = vec![false; n];
    let mut test_mask = vec![false; n];
    for &i in rest.iter().take(val_total) {
        val_mask[i] = true;
    }
    for &i in rest.iter().skip(val_total).take(test_total) {
        test_mask[i] = true;
    }
    Ok((train_mask, val_mask, test_mask))
}

// ----------------------------------------------------------------------
// Graph-set loader (graph classification corpora)
// ----------------------------------------------------------------------

/// Loads a JSON object `{"<graph_id>": [[u, v], ...]}` plus a CSV
/// `graph_id,label` into a graph-classification corpus. Graphs are ordered
/// by numeric id when every id parses as an integer, else lexically.
pub fn load_graph_set(edges_json_path: &Path, labels_csv_path: &Path) -> Result<LabeledGraphSet> {
    let jpath = edges_json_path.display().to_string();
    let text = read_file(edges_json_path)?;
    let parsed: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| DataError::Malformed {
            path: jpath.clone(),
            line: e.line(),
            details: e.to_string(),
        })?;
    let obj = parsed.as_object().ok_or_else(|| DataError::Malformed {
        path: jpath.clone(),
        line: 1,
        details: "top level must be an object mapping graph ids to edge lists".into(),
    })?;

    let mut ids: Vec<String> = obj.keys().cloned().collect();
    if ids.iter().all(|s| s.parse::<u64>().is_ok()) {
        ids.sort_by_key(|s| s.parse::<u64>().unwrap());
    } else {
        ids.sort();
    }

    let ltext = read_file(labels_csv_path)?;
    let lpath = labels_csv_path.display().to_string();
    let mut label_map: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in ltext.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.to_lowercase().starts_with("graph_id")) {
            continue;
        }
        let (id, label) = line.split_once(',').ok_or_else(|| DataError::Malformed {
            path: lpath.clone(),
            line: lineno + 1,
            details: format!("expected graph_id,label got: {line}"),
        })?;
        let label: usize = label.trim().parse().map_err(|_| DataError::Malformed {
            path: lpath.clone(),
            line: lineno + 1,
            details: format!("label is not a non-negative integer: {label}"),
        })?;
        label_map.insert(id.trim().to_string(), label);
    }

    let mut graphs = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    for id in &ids {
        let edges_val = obj[id].as_array().ok_or_else(|| DataError::Malformed {
            path: jpath.clone(),
            line: 1,
            details: format!("graph {id}: edge list must be an array"),
        })?;
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(edges_val.len());
        let mut max_v = 0usize;
        for pair in edges_val {
            let arr =
                pair.as_array()
                    .filter(|a| a.len() == 2)
                    .ok_or_else(|| DataError::Malformed {
                        path: jpath.clone(),
                        line: 1,
                        details: format!("graph {id}: each edge must be a [u, v] pair"),
                    })?;
            let u = arr[0].as_u64().ok_or_else(|| DataError::Malformed {
                path: jpath.clone(),
                line: 1,
                details: format!("graph {id}: edge endpoint is not a non-negative integer"),
            })? as usize;
            let v = arr[1].as_u64().ok_or_else(|| DataError::Malformed {
                path: jpath.clone(),
                line: 1,
                details: format!("graph {id}: edge endpoint is not a non-negative integer"),
            })? as usize;
            max_v = max_v.max(u).max(v);
            edges.push((u, v));
        }
        let n = if edges.is_empty() { 1 } else { max_v + 1 };
        graphs.push(Graph::undirected(n, &edges)?);
        let label = *label_map
            .get(id)
            .ok_or_else(|| DataError::MissingLabel { id: id.clone() })?;
        labels.push(label);
    }
    LabeledGraphSet::new(graphs, labels, "graph-set")
}

// ----------------------------------------------------------------------
// Edge splitting for link prediction
// ----------------------------------------------------------------------

/// Result of partitioning a graph's edges for link prediction: a training
/// skeleton plus held-out positive pairs and matched sampled non-edges.
#[derive(Debug, Clone)]
pub struct EdgeSplit {
    pub train_graph: Graph,
    pub train_edges: Vec<(usize, usize)>,
    pub val_pos: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

/// Splits canonical undirected edges into train/val/test positives by the
/// given fractions (val and test sizes floor; train takes the remainder)
/// and samples equal numbers of verified non-edges for val and test.
/// Self-loops always stay in train. Leak-freedom is asserted on every run.
pub fn split_edges(g: &Graph, fractions: (f64, f64, f64), seed: u64) -> Result<EdgeSplit> {
    let (ft, fv, fs) = fractions;
    if !(0.0..=1.0).contains(&ft) || !(0.0..=1.0).contains(&fv) || !(0.0..=1.0).contains(&fs) {
        return Err(DataError::BadFractions {
            train: ft,
            val: fv,
            test: fs,
            details: "each fraction must be in [0, 1]",
        });
    }
    if ft + fv + fs > 1.0 + 1e-12 {
        return Err(DataError::BadFractions {
            train: ft,
            val: fv,
            test: fs,
            details: "fractions must sum to at most 1",
        });
    }
    let n = g.num_vertices();
    let mut simple_edges: Vec<(usize, usize)> = Vec::new();
    let mut loops: Vec<(usize, usize)> = Vec::new();
    for &(u, v) in g.edges() {
        if u == v {
            loops.push((u, v));
        } else {
            simple_edges.push((u, v));
        }
    }
    let m = simple_edges.len();
    let n_val = (m as f64 * fv).floor() as usize;
    let n_test = (m as f64 * fs).floor() as usize;
    if n_val + n_test > m {
        return Err(DataError::SplitTooSmall {
            details: format!("{m} edges cannot provide val {n_val} + test {n_test}"),
        });
    }
    // Sampling negatives requires enough absent pairs.
    let possible_pairs = n * (n - 1) / 2;
    if possible_pairs < m + n_val + n_test {
        return Err(DataError::SplitTooSmall {
            details: format!(
                "{possible_pairs} vertex pairs cannot provide {} negatives",
                n_val + n_test
            ),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x73706c69); // "spli"
    let mut order = simple_edges.clone();
    order.shuffle(&mut rng);
    let val_pos: Vec<(usize, usize)> = order[..n_val].to_vec();
    let test_pos: Vec<(usize, usize)> = order[n_val..n_val + n_test].to_vec();
    let mut train_edges: Vec<(usize, usize)> = order[n_val + n_test..].to_vec();
    train_edges.extend(&loops);
    train_edges.sort_unstable();

    let all_edges: HashSet<(usize, usize)> = simple_edges.iter().copied().collect();
    let mut taken: HashSet<(usize, usize)> = HashSet::new();
    let mut sample_negatives = |count: usize, rng: &mut ChaCha8Rng| -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if all_edges.contains(&key) || taken.contains(&key) {
                continue;
            }
            taken.insert(key);
            out.push(key);
        }
        out
    };
    let val_neg = sample_negatives(n_val, &mut rng);
    let test_neg = sample_negatives(n_test, &mut rng);

    // Leak-freedom assertions, run unconditionally.
    let train_set: HashSet<(usize, usize)> = train_edges.iter().copied().collect();
    for held in [&val_pos, &test_pos] {
        for e in held {
            assert!(
                !train_set.contains(e),
                "held-out positive {e:?} leaked into train"
            );
        }
    }
    for negs in [&val_neg, &test_neg] {
        for e in negs {
            assert!(
                !all_edges.contains(e),
                "sampled negative {e:?} is a real edge"
            );
        }
    }

    let mut builder = Graph::builder(n);
    for &(u, v) in &train_edges {
        builder = builder.add_edge(u, v);
    }
    if let Some(f) = g.vertex_features() {
        builder = builder.vertex_features(f.clone());
    }
    let train_graph = builder.build()?;

    Ok(EdgeSplit {
        train_graph,
        train_edges,
        val_pos,
        val_neg,
        test_pos,
        test_neg,
    })
}

// ----------------------------------------------------------------------
// Synthetic generators
// ----------------------------------------------------------------------

/// Two complete blocks of `n_per_block` vertices each, plus each cross
/// pair included independently with probability `p_cross`.
pub fn synth_two_clique(n_per_block: usize, p_cross: f64, seed: u64) -> Result<Graph> {
    if n_per_block < 2 {
        return Err(DataError::UnexpectedShape {
            name: "two-clique".into(),
            what: "block size",
            expected: 2,
            got: n_per_block,
        });
    }
    let n = 2 * n_per_block;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x636c6971); // "cliq"
    let mut edges = Vec::new();
    for block in 0..2 {
        let base = block * n_per_block;
        for i in 0..n_per_block {
            for j in (i + 1)..n_per_block {
                edges.push((base + i, base + j));
            }
        }
    }
    for i in 0..n_per_block {
        for j in n_per_block..n {
            if rng.random::<f64>() < p_cross {
                edges.push((i, j));
            }
        }
    }
    Ok(Graph::undirected(n, &edges)?)
}

/// Block labels of a two-clique graph: 0 for the first block, 1 for the
/// second.
pub fn two_clique_labels(n_per_block: usize) -> Vec<usize> {
    (0..2 * n_per_block)
        .map(|i| usize::from(i >= n_per_block))
        .collect()
}

fn random_tree_edges<R: Rng>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    // Random recursive tree: each new vertex attaches to a uniform
    // predecessor.
    (1..n).map(|i| (rng.random_range(0..i), i)).collect()
}

fn components_of(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(u, v) in edges {
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        if ru != rv {
            parent[ru] = rv;
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

/// Structure-only graph classification corpus: class 0 graphs are random
/// trees; class 1 graphs start as random trees of the same size and then
/// have several edges rewired so that cycles appear while the vertex and
/// edge counts stay exactly matched (so edge density alone can never
/// separate the classes). No vertex or edge features are attached.
pub fn synth_structural_classes(count: usize, seed: u64) -> Result<LabeledGraphSet> {
    if count < 2 {
        return Err(DataError::UnexpectedShape {
            name: "structural".into(),
            what: "count",
            expected: 2,
            got: count,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x74726565); // "tree"
    let mut graphs = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for k in 0..count {
        let n = rng.random_range(12..=20);
        let mut edges = random_tree_edges(n, &mut rng);
        let label = k % 2;
        if label == 1 {
            let rewires = n.div_ceil(4);
            for _ in 0..rewires {
                let removed_idx = rng.random_range(0..edges.len());
                let removed = edges.swap_remove(removed_idx);
                let comp = components_of(n, &edges);
                let existing: HashSet<(usize, usize)> =
                    edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
                let mut placed = false;
                for _ in 0..200 {
                    let a = rng.random_range(0..n);
                    let b = rng.random_range(0..n);
                    if a == b || comp[a] != comp[b] {
                        continue;
                    }
                    let key = (a.min(b), a.max(b));
                    if existing.contains(&key) {
                        continue;
                    }
                    // Same component and not already present: this edge
                    // closes a cycle.
                    edges.push(key);
                    placed = true;
                    break;
                }
                if !placed {
                    edges.push(removed); // give up on this rewire
                }
            }
        }
        graphs.push(Graph::undirected(n, &edges)?);
        labels.push(label);
    }
    LabeledGraphSet::new(graphs, labels, "structural-classes")
}

/// Random connected graph: a random spanning tree plus `extra_edges`
/// additional distinct random edges.
pub fn random_connected_graph(n: usize, extra_edges: usize, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(DataError::UnexpectedShape {
            name: "random-connected".into(),
            what: "vertices",
            expected: 2,
            got: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x636f6e6e); // "conn"
    let mut edges = random_tree_edges(n, &mut rng);
    let mut existing: HashSet<(usize, usize)> = edges.iter().copied().collect();
    let max_extra = n * (n - 1) / 2 - edges.len();
    let want = extra_edges.min(max_extra);
    let mut added = 0;
    while added < want {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if existing.insert(key) {
            edges.push(key);
            added += 1;
        }
    }
    Ok(Graph::undirected(n, &edges)?)
}

// ----------------------------------------------------------------------
// Native edge-list format
// ----------------------------------------------------------------------

/// Writes `# n=<N>` then one `u v [weight]` line per canonical edge.
pub fn write_edge_list(g: &Graph, path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# n={}", g.num_vertices())?;
    for (idx, &(u, v)) in g.edges().iter().enumerate() {
        if g.is_weighted() {
            writeln!(f, "{u} {v} {}", g.edge_weight(idx))?;
        } else {
            writeln!(f, "{u} {v}")?;
        }
    }
    Ok(())
}

/// Reads the native edge-list format written by [`write_edge_list`].
pub fn read_edge_list(path: &Path) -> Result<Graph> {
    let text = read_file(path)?;
    let spath = path.display().to_string();
    let mut n: Option<usize> = None;
    let mut builder: Option<crate::graph::GraphBuilder> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(count) = rest.strip_prefix("n=") {
                let parsed: usize = count.trim().parse().map_err(|_| DataError::Malformed {
                    path: spath.clone(),
                    line: lineno + 1,
                    details: format!("bad vertex count: {count}"),
                })?;
                n = Some(parsed);
                builder = Some(Graph::builder(parsed));
            }
            continue;
        }
        if builder.is_none() {
            return Err(DataError::Malformed {
                path: spath.clone(),
                line: lineno + 1,
                details: "edge before `# n=<N>` header".into(),
            });
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(DataError::Malformed {
                path: spath.clone(),
                line: lineno + 1,
                details: format!("expected `u v [weight]`, got: {line}"),
            });
        }
        let u: usize = fields[0].parse().map_err(|_| DataError::Malformed {
            path: spath.clone(),
            line: lineno + 1,
            details: format!("bad vertex id {}", fields[0]),
        })?;
        let v: usize = fields[1].parse().map_err(|_| DataError::Malformed {
            path: spath.clone(),
            line: lineno + 1,
            details: format!("bad vertex id {}", fields[1]),
        })?;
        let taken = builder.take().expect("builder present");
        builder = Some(if fields.len() == 3 {
            let w: f64 = fields[2].parse().map_err(|_| DataError::Malformed {
                path: spath.clone(),
                line: lineno + 1,
                details: format!("bad weight {}", fields[2]),
            })?;
            taken.add_weighted_edge(u, v, w)
        } else {
            taken.add_edge(u, v)
        });
    }
    let builder = builder.ok_or_else(|| DataError::Malformed {
        path: spath.clone(),
        line: 0,
        details: "missing `# n=<N>` header".into(),
    })?;
    let _ = n;
    Ok(builder.build()?)
}

/// Reads a multi-column signal CSV: header `vertex_id,<name>,...`, one row
/// per vertex in ascending order. Returns the column names (excluding
/// vertex_id) and the per-column values.
pub fn read_signal_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = read_file(path)?;
    let spath = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| DataError::Malformed {
        path: spath.clone(),
        line: 0,
        details: "empty signal file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0].trim() != "vertex_id" {
        return Err(DataError::Malformed {
            path: spath.clone(),
            line: 1,
            details: "header must be vertex_id,<signal>[,...]".into(),
        });
    }
    let names: Vec<String> = cols[1..].iter().map(|s| s.trim().to_string()).collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut expect = 0usize;
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() + 1 {
            return Err(DataError::Malformed {
                path: spath.clone(),
                line: lineno + 1,
                details: format!("expected {} fields, got {}", names.len() + 1, fields.len()),
            });
        }
        let vid: usize = fields[0].trim().parse().map_err(|_| DataError::Malformed {
            path: spath.clone(),
            line: lineno + 1,
            details: format!("bad vertex id {}", fields[0]),
        })?;
        if vid != expect {
            return Err(DataError::Malformed {
                path: spath.clone(),
                line: lineno + 1,
                details: format!("vertex ids must ascend from 0; expected {expect}, got {vid}"),
            });
        }
        expect += 1;
        for (k, f) in fields[1..].iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| DataError::Malformed {
                path: spath.clone(),
                line: lineno + 1,
                details: format!("bad value {f}"),
            })?;
            columns[k].push(v);
        }
    }
    Ok((names, columns))
}

/// Identity feature matrix in sparse form, the conventional stand-in when
/// a graph has no vertex features.
pub fn identity_features(n: usize) -> CsrMatrix {
    let triplets: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
    CsrMatrix::from_triplets(n, n, &triplets).expect("identity is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("gnn_data_{tag}_{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn citation_toy_fixture_parses() {
        let dir = tmpdir("cit");
        let content = dir.join("toy.content");
        let cites = dir.join("toy.cites");
        std::fs::write(&content, "p1\t1\t0\tml\np2\t0\t1\tdb\np3\t1\t1\tml\n").unwrap();
        std::fs::write(&cites, "p1\tp2\np3\tp1\np2\tp1\n").unwrap();
        let spec = CitationSpec {
            name: "toy",
            feature_dim: 2,
            classes: 2,
            allow_dangling: false,
        };
        let ds = load_citation(&content, &cites, &spec, 7).unwrap();
        assert_eq!(ds.graph.num_vertices(), 3);
        // p1-p2 appears twice (both directions) and dedups; p1-p3 once.
        assert_eq!(ds.graph.num_edges(), 2);
        assert_eq!(ds.stats.raw_directed_pairs, 3);
        assert_eq!(ds.stats.undirected_edges, 2);
        // Labels sorted: db=0, ml=1.
        assert_eq!(ds.labels, vec![1, 0, 1]);
        let f = ds.graph.vertex_features().unwrap();
        assert_eq!(f.row(0), &[1.0, 0.0]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn citation_dangling_id_rejected_with_line() {
        let dir = tmpdir("dang");
        let content = dir.join("toy.content");
        let cites = dir.join("toy.cites");
        std::fs::write(&content, "p1\t1\tml\np2\t0\tdb\n").unwrap();
        std::fs::write(&cites, "p1\tp2\npX\tp1\n").unwrap();
        let spec = CitationSpec {
            name: "toy",
            feature_dim: 1,
            classes: 2,
            allow_dangling: false,
        };
        let err = load_citation(&content, &cites, &spec, 0).unwrap_err();
        match err {
            DataError::UnknownId { line, id, .. } => {
                assert_eq!(line, 2);
                assert_eq!(id, "pX");
            }
            other => panic!("unexpected error {other:?}"),
        }
        // The tolerant mode counts it instead.
        let spec_tol = CitationSpec {
            allow_dangling: true,
            ..spec
        };
        let ds = load_citation(&content, &cites, &spec_tol, 0).unwrap();
        assert_eq!(ds.stats.skipped_dangling, 1);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn citation_malformed_line_reports_position() {
        let dir = tmpdir("mal");
        let content = dir.join("toy.content");
        std::fs::write(&content, "p1\t1\tml\np2\t0\n").unwrap();
        let cites = dir.join("toy.cites");
        std::fs::write(&cites, "").unwrap();
        let spec = CitationSpec {
            name: "toy",
            feature_dim: 1,
            classes: 2,
            allow_dangling: false,
        };
        let err = load_citation(&content, &cites, &spec, 0).unwrap_err();
        match err {
            DataError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_file_is_explicit_error() {
        let r = load_cora(
            Path::new("/nonexistent/cora.content"),
            Path::new("/nonexistent/cora.cites"),
        );
        assert!(matches!(r, Err(DataError::Io { .. })));
    }

    #[test]
    fn graph_set_toy_fixture() {
        let dir = tmpdir("gs");
        let ej = dir.join("edges.json");
        let lc = dir.join("labels.csv");
        std::fs::write(&ej, r#"{"10": [[0,1],[1,2]], "2": [[0,1]]}"#).unwrap();
        std::fs::write(&lc, "graph_id,label\n10,1\n2,0\n").unwrap();
        let set = load_graph_set(&ej, &lc).unwrap();
        assert_eq!(set.len(), 2);
        // Numeric id order: graph 2 first.
        assert_eq!(set.labels, vec![0, 1]);
        assert_eq!(set.graphs[0].num_vertices(), 2);
        assert_eq!(set.graphs[1].num_vertices(), 3);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn graph_set_missing_label_names_id() {
        let dir = tmpdir("gsm");
        let ej = dir.join("edges.json");
        let lc = dir.join("labels.csv");
        std::fs::write(&ej, r#"{"5": [[0,1]]}"#).unwrap();
        std::fs::write(&lc, "graph_id,label\n").unwrap();
        match load_graph_set(&ej, &lc).unwrap_err() {
            DataError::MissingLabel { id } => assert_eq!(id, "5"),
            other => panic!("unexpected error {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn split_identity_fractions_keep_everything() {
        let g = random_connected_graph(12, 8, 3).unwrap();
        let s = split_edges(&g, (1.0, 0.0, 0.0), 5).unwrap();
        assert_eq!(s.train_graph.edges(), g.edges());
        assert!(s.val_pos.is_empty() && s.test_pos.is_empty());
        assert!(s.val_neg.is_empty() && s.test_neg.is_empty());
    }

    #[test]
    fn split_counts_85_5_10() {
        // Build a graph with exactly 100 edges.
        let mut g = None;
        for extra in 0..200 {
            let cand = random_connected_graph(40, extra, 11).unwrap();
            if cand.num_edges() == 100 {
                g = Some(cand);
                break;
            }
        }
        let g = g.expect("some candidate has exactly 100 edges");
        let s = split_edges(&g, (0.85, 0.05, 0.10), 17).unwrap();
        assert_eq!(s.val_pos.len(), 5);
        assert_eq!(s.test_pos.len(), 10);
        assert_eq!(s.train_graph.num_edges(), 85);
        assert_eq!(s.val_neg.len(), 5);
        assert_eq!(s.test_neg.len(), 10);
    }

    #[test]
    fn split_is_seed_deterministic() {
        let g = random_connected_graph(25, 40, 2).unwrap();
        let a = split_edges(&g, (0.85, 0.05, 0.10), 9).unwrap();
        let b = split_edges(&g, (0.85, 0.05, 0.10), 9).unwrap();
        assert_eq!(a.test_pos, b.test_pos);
        assert_eq!(a.test_neg, b.test_neg);
        assert_eq!(a.train_edges, b.train_edges);
        let c = split_edges(&g, (0.85, 0.05, 0.10), 10).unwrap();
        assert_ne!(a.test_pos, c.test_pos);
    }

    #[test]
    fn two_clique_shapes() {
        let g0 = synth_two_clique(4, 0.0, 1).unwrap();
        assert_eq!(g0.num_vertices(), 8);
        assert_eq!(g0.num_edges(), 12); // two K4s
        assert_eq!(g0.connected_components(), 2);
        let g1 = synth_two_clique(2, 1.0, 1).unwrap();
        // K4: both blocks complete plus all 4 cross edges.
        assert_eq!(g1.num_edges(), 6);
        assert!(g1.is_connected());
    }

    #[test]
    fn structural_classes_matched_sizes() {
        let set = synth_structural_classes(40, 123).unwrap();
        assert_eq!(set.len(), 40);
        assert_eq!(set.num_classes, 2);
        for (g, &label) in set.graphs.iter().zip(&set.labels) {
            let n = g.num_vertices();
            assert_eq!(g.num_edges(), n - 1, "edge count must match a tree's");
            assert!((12..=20).contains(&n));
            if label == 0 {
                // Trees: connected and acyclic.
                assert!(g.is_connected());
            } else {
                // Rewired graphs contain at least one cycle, which with
                // n-1 edges forces disconnection.
                assert!(g.connected_components() > 1);
            }
            assert!(g.vertex_features().is_none());
        }
    }

    #[test]
    fn edge_list_round_trip() {
        let dir = tmpdir("el");
        let path = dir.join("g.txt");
        let g = Graph::builder(5)
            .add_weighted_edge(0, 3, 1.25)
            .add_weighted_edge(2, 1, 0.5)
            .build()
            .unwrap();
        write_edge_list(&g, &path).unwrap();
        let back = read_edge_list(&path).unwrap();
        assert_eq!(back.num_vertices(), 5);
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.edge_weight(0), 1.25);
        assert_eq!(back.edge_weight(1), 0.5);

        let plain = random_connected_graph(9, 5, 77).unwrap();
        write_edge_list(&plain, &path).unwrap();
        let back2 = read_edge_list(&path).unwrap();
        assert_eq!(back2, plain);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn signal_csv_multi_column() {
        let dir = tmpdir("sig");
        let path = dir.join("s.csv");
        std::fs::write(
            &path,
            "vertex_id,f1,f2\n0,0.2,8\n1,0.4,6\n2,0.3,7\n3,0.3,12\n4,0.1,4\n",
        )
        .unwrap();
        let (names, cols) = read_signal_csv(&path).unwrap();
        assert_eq!(names, vec!["f1", "f2"]);
        assert_eq!(cols[0], vec![0.2, 0.4, 0.3, 0.3, 0.1]);
        assert_eq!(cols[1], vec![8.0, 6.0, 7.0, 12.0, 4.0]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn stratified_masks_counts_and_disjointness() {
        let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let (train, val, test) = stratified_masks(&labels, 3, 10, 50, 100, 4).unwrap();
        assert_eq!(train.iter().filter(|&&b| b).count(), 30);
        assert_eq!(val.iter().filter(|&&b| b).count(), 50);
        assert_eq!(test.iter().filter(|&&b| b).count(), 100);
        for i in 0..300 {
            assert!(train[i] as u8 + val[i] as u8 + test[i] as u8 <= 1);
        }
        // Per-class training balance.
        for c in 0..3 {
            let cnt = (0..300).filter(|&i| train[i] && labels[i] == c).count();
            assert_eq!(cnt, 10);
        }
    }

    #[test]
    fn random_connected_graph_is_connected() {
        for seed in 0..10 {
            let g = random_connected_graph(15, 10, seed).unwrap();
            assert!(g.is_connected());
            assert_eq!(g.num_edges(), 14 + 10);
        }
    }
}
