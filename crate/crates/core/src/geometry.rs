//! Metric structure of the input point sets: pairwise dissimilarities,
//! kNN graphs, and graph geodesics.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{GwError, Result};

/// A point set with optional class labels and a discrete probability measure.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// N x d feature matrix.
    pub points: Array2<f64>,
    /// Optional integer class label per point.
    pub labels: Option<Vec<i64>>,
    /// Probability measure over points; defaults to uniform 1/N.
    pub measure: Array1<f64>,
}

impl Dataset {
    /// Build a dataset with the uniform measure.
    pub fn new(points: Array2<f64>, labels: Option<Vec<i64>>) -> Result<Self> {
        let n = points.nrows();
        let measure = Array1::from_elem(n, 1.0 / n as f64);
        Self::with_measure(points, labels, measure)
    }

    pub fn with_measure(
        points: Array2<f64>,
        labels: Option<Vec<i64>>,
        measure: Array1<f64>,
    ) -> Result<Self> {
        let (n, d) = points.dim();
        if n < 1 || d < 1 {
            return Err(GwError::invalid(format!(
                "dataset must have N >= 1 and d >= 1, got {n} x {d}"
            )));
        }
        if !points.iter().all(|v| v.is_finite()) {
            return Err(GwError::invalid("dataset contains non-finite entries"));
        }
        if let Some(ref l) = labels {
            if l.len() != n {
                return Err(GwError::shape(
                    format!("{n} labels"),
                    format!("{}", l.len()),
                    "Dataset labels",
                ));
            }
        }
        if measure.len() != n {
            return Err(GwError::shape(
                format!("measure of length {n}"),
                format!("{}", measure.len()),
                "Dataset measure",
            ));
        }
        if measure.iter().any(|&m| m < 0.0) {
            return Err(GwError::invalid("measure has negative entries"));
        }
        let total: f64 = measure.sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(GwError::invalid(format!(
                "measure sums to {total}, expected 1 within 1e-12"
            )));
        }
        Ok(Dataset {
            points,
            labels,
            measure,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

/// Which dissimilarity a `DistanceMatrix` holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Euclidean,
    SquaredEuclidean,
    CosineDissimilarity,
    Geodesic,
    Precomputed,
}

impl FromStr for MetricKind {
    type Err = GwError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(MetricKind::Euclidean),
            "squared_euclidean" | "sq_euclidean" => Ok(MetricKind::SquaredEuclidean),
            "cosine_dissimilarity" | "cosine" => Ok(MetricKind::CosineDissimilarity),
            "geodesic" => Ok(MetricKind::Geodesic),
            "precomputed" => Ok(MetricKind::Precomputed),
            other => Err(GwError::invalid(format!("unknown metric kind '{other}'"))),
        }
    }
}

/// Symmetric nonnegative pairwise dissimilarity matrix with zero diagonal.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    pub values: Array2<f64>,
    pub metric_kind: MetricKind,
}

impl DistanceMatrix {
    /// Validate and normalize a candidate matrix: symmetry within 1e-9 and
    /// |diagonal| <= 1e-9 are required, after which the matrix is exactly
    /// symmetrized and the diagonal zeroed.
    pub fn new(mut values: Array2<f64>, metric_kind: MetricKind) -> Result<Self> {
        let (n, m) = values.dim();
        if n != m {
            return Err(GwError::shape(
                "square matrix".to_string(),
                format!("{n} x {m}"),
                "DistanceMatrix",
            ));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(GwError::invalid("distance matrix has non-finite entries"));
        }
        for i in 0..n {
            if values[[i, i]].abs() > 1e-9 {
                return Err(GwError::invalid(format!(
                    "distance matrix diagonal entry {i} is {}, expected 0",
                    values[[i, i]]
                )));
            }
            for j in (i + 1)..n {
                let a = values[[i, j]];
                let b = values[[j, i]];
                if (a - b).abs() > 1e-9 {
                    return Err(GwError::invalid(format!(
                        "distance matrix asymmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
                let v = 0.5 * (a + b);
                if v < 0.0 {
                    return Err(GwError::invalid(format!(
                        "distance matrix has negative entry {v} at ({i},{j})"
                    )));
                }
                values[[i, j]] = v;
                values[[j, i]] = v;
            }
            values[[i, i]] = 0.0;
        }
        Ok(DistanceMatrix {
            values,
            metric_kind,
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Median of the off-diagonal entries (average of middle two for even
    /// counts). Used for unit-median normalization.
    pub fn median_off_diagonal(&self) -> f64 {
        let n = self.len();
        let mut vals = Vec::with_capacity(n * (n - 1));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    vals.push(self.values[[i, j]]);
                }
            }
        }
        median(&mut vals)
    }

    /// Rescale so the median off-diagonal entry is 1.
    pub fn normalized_unit_median(&self) -> Result<Self> {
        let med = self.median_off_diagonal();
        if med <= f64::EPSILON {
            return Err(GwError::invalid(
                "cannot unit-median normalize: median off-diagonal distance is zero",
            ));
        }
        Ok(DistanceMatrix {
            values: &self.values / med,
            metric_kind: self.metric_kind,
        })
    }
}

pub(crate) fn median(vals: &mut [f64]) -> f64 {
    assert!(!vals.is_empty());
    vals.sort_by(|a, b| a.total_cmp(b));
    let n = vals.len();
    if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    }
}

/// Undirected weighted graph with positive edge weights and no self-loops.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    pub n_vertices: usize,
    /// Canonical edge list with i < j; each undirected edge stored once.
    pub edges: Vec<(usize, usize, f64)>,
}

impl WeightedGraph {
    pub fn new(n_vertices: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut canonical = Vec::with_capacity(edges.len());
        for (i, j, w) in edges {
            if i == j {
                return Err(GwError::invalid(format!("self-loop at vertex {i}")));
            }
            if i >= n_vertices || j >= n_vertices {
                return Err(GwError::invalid(format!(
                    "edge ({i},{j}) out of bounds for {n_vertices} vertices"
                )));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(GwError::invalid(format!(
                    "edge ({i},{j}) has non-positive weight {w}"
                )));
            }
            canonical.push((i.min(j), i.max(j), w));
        }
        canonical.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for pair in canonical.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(GwError::invalid(format!(
                    "duplicate edge ({},{})",
                    pair[0].0, pair[0].1
                )));
            }
        }
        Ok(WeightedGraph {
            n_vertices,
            edges: canonical,
        })
    }

    /// Dense symmetric adjacency matrix.
    pub fn adjacency(&self) -> Array2<f64> {
        let mut adj = Array2::zeros((self.n_vertices, self.n_vertices));
        for &(i, j, w) in &self.edges {
            adj[[i, j]] = w;
            adj[[j, i]] = w;
        }
        adj
    }

    fn neighbor_lists(&self, lengths: &[f64]) -> Vec<Vec<(usize, f64)>> {
        let mut nbrs = vec![Vec::new(); self.n_vertices];
        for (e, &(i, j, _)) in self.edges.iter().enumerate() {
            nbrs[i].push((j, lengths[e]));
            nbrs[j].push((i, lengths[e]));
        }
        nbrs
    }

    /// Number of connected components.
    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.n_vertices];
        let nbrs = self.neighbor_lists(&vec![1.0; self.edges.len()]);
        let mut components = 0;
        for start in 0..self.n_vertices {
            if seen[start] {
                continue;
            }
            components += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(v) = stack.pop() {
                for &(u, _) in &nbrs[v] {
                    if !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
        }
        components
    }
}

/// Compute the pairwise dissimilarity matrix of a dataset.
///
/// Only feature-space metrics are accepted here; geodesic matrices come from
/// `knn_graph` + `geodesic_distances`, and precomputed ones from file input.
pub fn pairwise_distances(data: &Dataset, metric_kind: MetricKind) -> Result<DistanceMatrix> {
    let n = data.len();
    let points = &data.points;
    if matches!(metric_kind, MetricKind::Geodesic | MetricKind::Precomputed) {
        return Err(GwError::invalid(
            "pairwise_distances computes feature-space metrics only \
             (euclidean, squared_euclidean, cosine_dissimilarity)",
        ));
    }
    if metric_kind == MetricKind::CosineDissimilarity {
        for i in 0..n {
            let norm = points.row(i).dot(&points.row(i)).sqrt();
            if norm <= 0.0 {
                return Err(GwError::invalid(format!(
                    "cosine_dissimilarity undefined: row {i} is the zero vector"
                )));
            }
        }
    }
    let mut values = Array2::zeros((n, n));
    // Upper triangle only, mirrored, so the result is bit-exactly symmetric
    // regardless of evaluation order.
    for i in 0..n {
        for j in (i + 1)..n {
            let xi = points.row(i);
            let xj = points.row(j);
            let v = match metric_kind {
                MetricKind::Euclidean => {
                    let mut s = 0.0;
                    for (a, b) in xi.iter().zip(xj.iter()) {
                        let d = a - b;
                        s += d * d;
                    }
                    s.sqrt()
                }
                MetricKind::SquaredEuclidean => {
                    let mut s = 0.0;
                    for (a, b) in xi.iter().zip(xj.iter()) {
                        let d = a - b;
                        s += d * d;
                    }
                    s
                }
                MetricKind::CosineDissimilarity => {
                    let dot = xi.dot(&xj);
                    let ni = xi.dot(&xi).sqrt();
                    let nj = xj.dot(&xj).sqrt();
                    (1.0 - dot / (ni * nj)).max(0.0)
                }
                _ => unreachable!(),
            };
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    DistanceMatrix::new(values, metric_kind)
}

/// Edge weighting scheme for kNN graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnWeighting {
    Binary,
    Gaussian,
}

impl FromStr for KnnWeighting {
    type Err = GwError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(KnnWeighting::Binary),
            "gaussian" => Ok(KnnWeighting::Gaussian),
            other => Err(GwError::invalid(format!("unknown knn weighting '{other}'"))),
        }
    }
}

/// Build the symmetrized (by union) k-nearest-neighbor graph of a dataset
/// under the Euclidean metric.
///
/// For `gaussian` weighting, sigma defaults to the median of the kNN
/// distances pooled over all vertices.
pub fn knn_graph(
    data: &Dataset,
    k: usize,
    weighting: KnnWeighting,
    sigma: Option<f64>,
) -> Result<WeightedGraph> {
    let n = data.len();
    if k < 1 || k >= n {
        return Err(GwError::invalid(format!(
            "knn_graph requires 1 <= k < N, got k={k}, N={n}"
        )));
    }
    if let Some(s) = sigma {
        if !(s > 0.0) {
            return Err(GwError::invalid(format!("sigma must be positive, got {s}")));
        }
    }
    let dist = pairwise_distances(data, MetricKind::Euclidean)?;
    let d = &dist.values;

    let mut edge_set: std::collections::BTreeMap<(usize, usize), f64> =
        std::collections::BTreeMap::new();
    let mut knn_dists = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| d[[i, a]].total_cmp(&d[[i, b]]).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            knn_dists.push(d[[i, j]]);
            let key = (i.min(j), i.max(j));
            edge_set.entry(key).or_insert(d[[i, j]]);
        }
    }

    let sigma = match (weighting, sigma) {
        (KnnWeighting::Gaussian, Some(s)) => s,
        (KnnWeighting::Gaussian, None) => {
            let med = median(&mut knn_dists);
            if med <= 0.0 {
                return Err(GwError::invalid(
                    "cannot infer gaussian sigma: median kNN distance is zero",
                ));
            }
            med
        }
        (KnnWeighting::Binary, _) => 1.0,
    };

    let edges = edge_set
        .into_iter()
        .map(|((i, j), dij)| {
            let w = match weighting {
                KnnWeighting::Binary => 1.0,
                KnnWeighting::Gaussian => (-dij * dij / (2.0 * sigma * sigma)).exp(),
            };
            (i, j, w)
        })
        .filter(|&(_, _, w)| w > 0.0)
        .collect();
    WeightedGraph::new(n, edges)
}

/// How to turn stored edge weights into path lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeLength {
    Unit,
    Weight,
    /// 1/w: treats the weight as an affinity, so strong affinity = short edge.
    InverseWeight,
}

impl FromStr for EdgeLength {
    type Err = GwError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(EdgeLength::Unit),
            "weight" => Ok(EdgeLength::Weight),
            "inverse_weight" => Ok(EdgeLength::InverseWeight),
            other => Err(GwError::invalid(format!("unknown edge length '{other}'"))),
        }
    }
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed for a min-heap on distance.
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All-pairs shortest-path distances via repeated Dijkstra.
pub fn geodesic_distances(graph: &WeightedGraph, edge_length: EdgeLength) -> Result<DistanceMatrix> {
    let n = graph.n_vertices;
    let components = graph.component_count();
    if components > 1 {
        return Err(GwError::invalid(format!(
            "graph has {components} connected components; geodesics need a \
             connected graph (increase k)"
        )));
    }
    let lengths: Vec<f64> = graph
        .edges
        .iter()
        .map(|&(_, _, w)| match edge_length {
            EdgeLength::Unit => 1.0,
            EdgeLength::Weight => w,
            EdgeLength::InverseWeight => 1.0 / w,
        })
        .collect();
    let nbrs = graph.neighbor_lists(&lengths);

    let mut values = Array2::from_elem((n, n), f64::INFINITY);
    for src in 0..n {
        let mut dist = vec![f64::INFINITY; n];
        dist[src] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry {
            dist: 0.0,
            node: src,
        });
        while let Some(HeapEntry { dist: du, node: u }) = heap.pop() {
            if du > dist[u] {
                continue;
            }
            for &(v, len) in &nbrs[u] {
                let cand = du + len;
                if cand < dist[v] {
                    dist[v] = cand;
                    heap.push(HeapEntry {
                        dist: cand,
                        node: v,
                    });
                }
            }
        }
        for (j, &dj) in dist.iter().enumerate() {
            values[[src, j]] = dj;
        }
    }
    // Forward/backward path sums can differ in the last ulps; average them.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (values[[i, j]] + values[[j, i]]);
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
        values[[i, i]] = 0.0;
    }
    DistanceMatrix::new(values, MetricKind::Geodesic)
}
