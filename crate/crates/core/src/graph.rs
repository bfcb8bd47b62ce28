//! Graph representation: vertices, canonical edge lists, optional weights
//! and features, and the derived matrices (adjacency, degree, Laplacians)
//! that the spectral and layer code consume.

use crate::dense::DenseMatrix;
use crate::sparse::CsrMatrix;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("vertex index {vertex} out of range for {n} vertices")]
    VertexOutOfRange { vertex: usize, n: usize },
    #[error("edge ({u}, {v}) listed twice with conflicting weights {first} and {second}")]
    ConflictingDuplicateEdge {
        u: usize,
        v: usize,
        first: f64,
        second: f64,
    },
    #[error("edge weight for ({u}, {v}) must be finite and positive, got {weight}")]
    BadWeight { u: usize, v: usize, weight: f64 },
    #[error("vertex feature matrix has {got} rows, expected {expected}")]
    FeatureRowMismatch { got: usize, expected: usize },
    #[error("edge feature matrix has {got} rows, expected {expected} (one per edge)")]
    EdgeFeatureRowMismatch { got: usize, expected: usize },
    #[error("vertex {vertex} has zero degree; normalized Laplacian is undefined")]
    IsolatedVertex { vertex: usize },
    #[error("permutation of length {got} does not match vertex count {expected}")]
    BadPermutation { got: usize, expected: usize },
    #[error("permutation is not a bijection (value {value} repeated or out of range)")]
    NotAPermutation { value: usize },
}

/// Which Laplacian to build from a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplacianKind {
    /// `L = D - W`
    Unnormalized,
    /// `L = I - D^{-1/2} W D^{-1/2}`
    Symmetric,
    /// `L = I - D^{-1} W`
    RandomWalk,
}

/// An edge before canonicalization: endpoints plus optional weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: Option<f64>,
}

impl Edge {
    pub fn new(u: usize, v: usize) -> Self {
        Edge { u, v, weight: None }
    }

    pub fn weighted(u: usize, v: usize, w: f64) -> Self {
        Edge {
            u,
            v,
            weight: Some(w),
        }
    }
}

/// Undirected (or directed) graph with canonical edge storage.
///
/// Undirected edges are stored once as `(min, max)` sorted
/// lexicographically; duplicates collapse, and a duplicate with a
/// conflicting weight is an error rather than a silent overwrite.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    directed: bool,
    edges: Vec<(usize, usize)>,
    weights: Option<Vec<f64>>,
    vertex_features: Option<DenseMatrix>,
    edge_features: Option<DenseMatrix>,
    /// Undirected neighborhoods (union of in and out for directed graphs),
    /// sorted ascending.
    nbrs: Vec<Vec<usize>>,
    out_nbrs: Vec<Vec<usize>>,
    in_nbrs: Vec<Vec<usize>>,
}

pub struct GraphBuilder {
    n: usize,
    directed: bool,
    edges: Vec<Edge>,
    vertex_features: Option<DenseMatrix>,
    edge_features: Option<DenseMatrix>,
}

impl GraphBuilder {
    pub fn new(n: usize) -> Self {
        GraphBuilder {
            n,
            directed: false,
            edges: Vec::new(),
            vertex_features: None,
            edge_features: None,
        }
    }

    pub fn directed(mut self, directed: bool) -> Self {
        self.directed = directed;
        self
    }

    pub fn add_edge(mut self, u: usize, v: usize) -> Self {
        self.edges.push(Edge::new(u, v));
        self
    }

    pub fn add_weighted_edge(mut self, u: usize, v: usize, w: f64) -> Self {
        self.edges.push(Edge::weighted(u, v, w));
        self
    }

    pub fn edges(mut self, edges: &[(usize, usize)]) -> Self {
        self.edges
            .extend(edges.iter().map(|&(u, v)| Edge::new(u, v)));
        self
    }

    /// Vertex feature matrix, one row per vertex.
    pub fn vertex_features(mut self, f: DenseMatrix) -> Self {
        self.vertex_features = Some(f);
        self
    }

    /// Edge feature matrix, one row per canonical edge (rows must follow the
    /// canonical edge order of the built graph).
    pub fn edge_features(mut self, f: DenseMatrix) -> Self {
        self.edge_features = Some(f);
        self
    }

    pub fn build(self) -> Result<Graph, GraphError> {
        Graph::from_parts(
            self.n,
            self.directed,
            &self.edges,
            self.vertex_features,
            self.edge_features,
        )
    }
}

impl Graph {
    pub fn builder(n: usize) -> GraphBuilder {
        GraphBuilder::new(n)
    }

    /// Convenience constructor for a plain undirected graph.
    pub fn undirected(n: usize, edges: &[(usize, usize)]) -> Result<Graph, GraphError> {
        Graph::builder(n).edges(edges).build()
    }

    fn from_parts(
        n: usize,
        directed: bool,
        raw_edges: &[Edge],
        vertex_features: Option<DenseMatrix>,
        edge_features: Option<DenseMatrix>,
    ) -> Result<Graph, GraphError> {
        // Canonicalize: orient undirected edges as (min, max), sort, dedup.
        let mut canon: Vec<(usize, usize, Option<f64>)> = Vec::with_capacity(raw_edges.len());
        for e in raw_edges {
            if e.u >= n {
                return Err(GraphError::VertexOutOfRange { vertex: e.u, n });
            }
            if e.v >= n {
                return Err(GraphError::VertexOutOfRange { vertex: e.v, n });
            }
            if let Some(w) = e.weight {
                if !w.is_finite() || w <= 0.0 {
                    return Err(GraphError::BadWeight {
                        u: e.u,
                        v: e.v,
                        weight: w,
                    });
                }
            }
            let (u, v) = if directed || e.u <= e.v {
                (e.u, e.v)
            } else {
                (e.v, e.u)
            };
            canon.push((u, v, e.weight));
        }
        canon.sort_by_key(|&(u, v, _)| (u, v));

        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(canon.len());
        let mut weights: Vec<Option<f64>> = Vec::with_capacity(canon.len());
        for (u, v, w) in canon {
            match edges.last() {
                Some(&(lu, lv)) if (lu, lv) == (u, v) => {
                    let prev = weights.last_mut().expect("weights parallel to edges");
                    match (*prev, w) {
                        (Some(a), Some(b)) if a != b => {
                            return Err(GraphError::ConflictingDuplicateEdge {
                                u,
                                v,
                                first: a,
                                second: b,
                            })
                        }
                        (None, Some(b)) => *prev = Some(b),
                        _ => {}
                    }
                }
                _ => {
                    edges.push((u, v));
                    weights.push(w);
                }
            }
        }
        let any_weighted = weights.iter().any(Option::is_some);
        let weights = if any_weighted {
            // Unweighted edges in a weighted graph default to 1.
            Some(weights.into_iter().map(|w| w.unwrap_or(1.0)).collect())
        } else {
            None
        };

        if let Some(f) = &vertex_features {
            if f.rows() != n {
                return Err(GraphError::FeatureRowMismatch {
                    got: f.rows(),
                    expected: n,
                });
            }
        }
        if let Some(f) = &edge_features {
            if f.rows() != edges.len() {
                return Err(GraphError::EdgeFeatureRowMismatch {
                    got: f.rows(),
                    expected: edges.len(),
                });
            }
        }

        let mut nbrs = vec![Vec::new(); n];
        let mut out_nbrs = vec![Vec::new(); n];
        let mut in_nbrs = vec![Vec::new(); n];
        for &(u, v) in &edges {
            out_nbrs[u].push(v);
            in_nbrs[v].push(u);
            nbrs[u].push(v);
            if u != v {
                nbrs[v].push(u);
                if !directed {
                    out_nbrs[v].push(u);
                    in_nbrs[u].push(v);
                }
            }
        }
        for list in nbrs
            .iter_mut()
            .chain(out_nbrs.iter_mut())
            .chain(in_nbrs.iter_mut())
        {
            list.sort_unstable();
            list.dedup();
        }

        Ok(Graph {
            n,
            directed,
            edges,
            weights,
            vertex_features,
            edge_features,
            nbrs,
            out_nbrs,
            in_nbrs,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    /// Canonical edge list: `(min, max)` pairs sorted lexicographically for
    /// undirected graphs, `(src, dst)` for directed ones.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_weight(&self, idx: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[idx])
    }

    /// Index into the canonical edge list, if the edge exists.
    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        let key = if self.directed || u <= v {
            (u, v)
        } else {
            (v, u)
        };
        self.edges.binary_search(&key).ok()
    }

    pub fn vertex_features(&self) -> Option<&DenseMatrix> {
        self.vertex_features.as_ref()
    }

    pub fn edge_features(&self) -> Option<&DenseMatrix> {
        self.edge_features.as_ref()
    }

    /// Sorted neighbor list (undirected view: union of in- and
    /// out-neighbors for directed graphs).
    pub fn neighbors(&self, v: usize) -> Result<&[usize], GraphError> {
        self.nbrs
            .get(v)
            .map(Vec::as_slice)
            .ok_or(GraphError::VertexOutOfRange {
                vertex: v,
                n: self.n,
            })
    }

    pub fn out_neighbors(&self, v: usize) -> Result<&[usize], GraphError> {
        self.out_nbrs
            .get(v)
            .map(Vec::as_slice)
            .ok_or(GraphError::VertexOutOfRange {
                vertex: v,
                n: self.n,
            })
    }

    pub fn in_neighbors(&self, v: usize) -> Result<&[usize], GraphError> {
        self.in_nbrs
            .get(v)
            .map(Vec::as_slice)
            .ok_or(GraphError::VertexOutOfRange {
                vertex: v,
                n: self.n,
            })
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edge_index(u, v).is_some()
    }

    /// Weighted adjacency matrix W (symmetric for undirected graphs; rows
    /// are sources for directed ones). Unweighted graphs get 0/1 entries.
    pub fn adjacency(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.n, self.n);
        for (idx, &(u, v)) in self.edges.iter().enumerate() {
            let w = self.edge_weight(idx);
            a.set(u, v, w);
            if !self.directed && u != v {
                a.set(v, u, w);
            }
        }
        a
    }

    pub fn adjacency_sparse(&self) -> CsrMatrix {
        CsrMatrix::from_dense(&self.adjacency())
    }

    /// Diagonal of the degree matrix: `D_ii = sum_j W_ij` over the
    /// adjacency rows. Self-loops are excluded unless `count_self_loops`.
    pub fn degrees(&self, count_self_loops: bool) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for (idx, &(u, v)) in self.edges.iter().enumerate() {
            let w = self.edge_weight(idx);
            if u == v {
                if count_self_loops {
                    d[u] += w;
                }
                continue;
            }
            d[u] += w;
            if !self.directed {
                d[v] += w;
            }
        }
        d
    }

    pub fn degree_matrix(&self) -> DenseMatrix {
        let d = self.degrees(false);
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for (i, v) in d.into_iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Graph Laplacian of the requested kind.
    ///
    /// The unnormalized form counts a self-loop's weight once in the degree
    /// so that rows always sum to zero; the normalized forms reject isolated
    /// vertices, whose inverse degree is undefined.
    pub fn laplacian(&self, kind: LaplacianKind) -> Result<DenseMatrix, GraphError> {
        let a = self.adjacency();
        let d = self.degrees(true);
        match kind {
            LaplacianKind::Unnormalized => {
                let mut l = a.scale(-1.0);
                for (i, &di) in d.iter().enumerate() {
                    l.set(i, i, di - a.get(i, i));
                }
                Ok(l)
            }
            LaplacianKind::Symmetric => {
                let mut l = DenseMatrix::identity(self.n);
                let inv_sqrt: Vec<f64> = d
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        if x > 0.0 {
                            Ok(1.0 / x.sqrt())
                        } else {
                            Err(GraphError::IsolatedVertex { vertex: i })
                        }
                    })
                    .collect::<Result<_, _>>()?;
                for i in 0..self.n {
                    for j in 0..self.n {
                        let norm = inv_sqrt[i] * a.get(i, j) * inv_sqrt[j];
                        l.set(i, j, l.get(i, j) - norm);
                    }
                }
                Ok(l)
            }
            LaplacianKind::RandomWalk => {
                let mut l = DenseMatrix::identity(self.n);
                for (i, &di) in d.iter().enumerate() {
                    if di <= 0.0 {
                        return Err(GraphError::IsolatedVertex { vertex: i });
                    }
                    for j in 0..self.n {
                        l.set(i, j, l.get(i, j) - a.get(i, j) / di);
                    }
                }
                Ok(l)
            }
        }
    }

    /// Message-passing index arrays: one entry per directed message
    /// `src -> dst`, i.e. for every vertex `dst` and every neighbor `src`.
    /// Returns `(dst, src, edge_idx)` aligned vectors where `edge_idx`
    /// points into the canonical edge list.
    pub fn message_pairs(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut dst = Vec::new();
        let mut src = Vec::new();
        let mut eidx = Vec::new();
        for i in 0..self.n {
            for &j in &self.nbrs[i] {
                dst.push(i);
                src.push(j);
                eidx.push(self.edge_index(i, j).expect("neighbor implies edge"));
            }
        }
        (dst, src, eidx)
    }

    /// Number of connected components of the undirected view (BFS).
    pub fn connected_components(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut components = 0;
        let mut queue = std::collections::VecDeque::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for &u in &self.nbrs[v] {
                    if !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
        components
    }

    pub fn is_connected(&self) -> bool {
        self.n == 0 || self.connected_components() == 1
    }

    /// Relabels vertices: vertex `i` becomes `perm[i]`. Features move with
    /// their vertices; the adjacency of the result equals `P A P^T`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Graph, GraphError> {
        if perm.len() != self.n {
            return Err(GraphError::BadPermutation {
                got: perm.len(),
                expected: self.n,
            });
        }
        let mut seen = vec![false; self.n];
        for &p in perm {
            if p >= self.n || seen[p] {
                return Err(GraphError::NotAPermutation { value: p });
            }
            seen[p] = true;
        }
        let mut raw: Vec<Edge> = Vec::with_capacity(self.edges.len());
        for (idx, &(u, v)) in self.edges.iter().enumerate() {
            let w = self.weights.as_ref().map(|ws| ws[idx]);
            raw.push(Edge {
                u: perm[u],
                v: perm[v],
                weight: w,
            });
        }
        let vertex_features = self.vertex_features.as_ref().map(|f| {
            let mut rows = vec![vec![0.0; f.cols()]; self.n];
            for i in 0..self.n {
                rows[perm[i]] = f.row(i).to_vec();
            }
            DenseMatrix::from_rows(&rows).expect("permuted features keep shape")
        });
        // Edge features must follow the new canonical order: build a map
        // from relabeled canonical pair to the original edge row.
        let edge_features = self.edge_features.as_ref().map(|f| {
            let mut pairs: Vec<((usize, usize), usize)> = self
                .edges
                .iter()
                .enumerate()
                .map(|(idx, &(u, v))| {
                    let (a, b) = (perm[u], perm[v]);
                    let key = if self.directed || a <= b {
                        (a, b)
                    } else {
                        (b, a)
                    };
                    (key, idx)
                })
                .collect();
            pairs.sort_by_key(|&(key, _)| key);
            let rows: Vec<Vec<f64>> = pairs.iter().map(|&(_, idx)| f.row(idx).to_vec()).collect();
            DenseMatrix::from_rows(&rows).expect("permuted edge features keep shape")
        });
        Graph::from_parts(self.n, self.directed, &raw, vertex_features, edge_features)
    }
}
