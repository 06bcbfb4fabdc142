//! Edge builders over RoI centroids and the connectivity repair loop.

use std::collections::BTreeSet;

use log::warn;

use super::graph::{BuildMethod, BuildParams};
use super::GraphError;

/// Undirected edges as `(low, high)` index pairs.
pub type EdgeSet = BTreeSet<(usize, usize)>;

/// Threshold multiplier applied on each distance-repair round.
pub const THRESHOLD_GROWTH: f64 = 1.25;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn edge(i: usize, j: usize) -> (usize, usize) {
    (i.min(j), i.max(j))
}

/// Each node links to its `k` nearest others (ties broken by lower index);
/// an edge exists when either endpoint selects the other.
pub fn build_edges_knn(centroids: &[[f64; 2]], k: usize) -> Result<EdgeSet, GraphError> {
    let n = centroids.len();
    if n < 2 || k == 0 || k > n - 1 {
        return Err(GraphError::Parameter(format!("kNN needs 1 <= k <= n-1 with n >= 2 (k = {k}, n = {n})")));
    }
    let mut edges = EdgeSet::new();
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist(centroids[i], centroids[j]), j)).collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            edges.insert(edge(i, j));
        }
    }
    Ok(edges)
}

/// All pairs closer than `threshold`.
pub fn build_edges_distance(centroids: &[[f64; 2]], threshold: f64) -> Result<EdgeSet, GraphError> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(GraphError::Parameter(format!("distance threshold must be positive, got {threshold}")));
    }
    let n = centroids.len();
    let mut edges = EdgeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            if dist(centroids[i], centroids[j]) < threshold {
                edges.insert((i, j));
            }
        }
    }
    Ok(edges)
}

/// Delaunay triangulation edges. `None` when the points admit no
/// triangulation (fewer than three, or all collinear).
pub fn build_edges_delaunay(centroids: &[[f64; 2]]) -> Option<EdgeSet> {
    if centroids.len() < 3 {
        return None;
    }
    let pts: Vec<delaunator::Point> = centroids.iter().map(|c| delaunator::Point { x: c[0], y: c[1] }).collect();
    let tri = delaunator::triangulate(&pts);
    if tri.triangles.is_empty() {
        return None;
    }
    let mut edges = EdgeSet::new();
    for t in tri.triangles.chunks(3) {
        edges.insert(edge(t[0], t[1]));
        edges.insert(edge(t[1], t[2]));
        edges.insert(edge(t[0], t[2]));
    }
    Some(edges)
}

/// Number of connected components (breadth-first traversal).
pub fn component_count(n: usize, edges: &EdgeSet) -> usize {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut count = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    count
}

/// Edge builder configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSpec {
    pub method: BuildMethod,
    pub k: usize,
    pub threshold: f64,
}

impl Default for EdgeSpec {
    fn default() -> Self {
        Self {
            method: BuildMethod::Knn,
            k: 2,
            threshold: 40.0,
        }
    }
}

impl EdgeSpec {
    pub fn knn(k: usize) -> Self {
        Self {
            method: BuildMethod::Knn,
            k,
            ..Self::default()
        }
    }

    pub fn distance(threshold: f64) -> Self {
        Self {
            method: BuildMethod::Distance,
            threshold,
            ..Self::default()
        }
    }

    pub fn delaunay() -> Self {
        Self {
            method: BuildMethod::Delaunay,
            ..Self::default()
        }
    }
}

/// Build edges with `spec` and repair until the graph is a single component.
pub fn build_connected(centroids: &[[f64; 2]], spec: &EdgeSpec) -> Result<(EdgeSet, BuildParams), GraphError> {
    let n = centroids.len();
    if n == 0 {
        return Err(GraphError::Parameter("cannot build a graph without nodes".into()));
    }
    let params = match spec.method {
        BuildMethod::Knn => BuildParams {
            k: Some(spec.k),
            ..Default::default()
        },
        BuildMethod::Distance => BuildParams {
            threshold: Some(spec.threshold),
            ..Default::default()
        },
        BuildMethod::Delaunay => BuildParams::default(),
    };
    if n == 1 {
        return Ok((EdgeSet::new(), params));
    }
    if spec.method == BuildMethod::Knn && (spec.k == 0 || spec.k > n - 1) {
        // k larger than the graph allows: clamp to the complete graph.
        if spec.k == 0 {
            return Err(GraphError::Parameter("kNN needs k >= 1".into()));
        }
        let params = BuildParams {
            k: Some(n - 1),
            ..Default::default()
        };
        return Ok((build_edges_knn(centroids, n - 1)?, params));
    }
    let edges = match spec.method {
        BuildMethod::Knn => build_edges_knn(centroids, spec.k)?,
        BuildMethod::Distance => build_edges_distance(centroids, spec.threshold)?,
        BuildMethod::Delaunay => match build_edges_delaunay(centroids) {
            Some(e) => e,
            None => {
                warn!("Delaunay triangulation impossible for {n} points (too few or collinear); falling back to kNN");
                let p = BuildParams {
                    k: Some(1),
                    fallback: true,
                    ..Default::default()
                };
                return ensure_connected(centroids, build_edges_knn(centroids, 1)?, BuildMethod::Knn, p);
            }
        },
    };
    ensure_connected(centroids, edges, spec.method, params)
}

/// Grow the builder parameter until the graph is connected: kNN raises `k` by
/// one, the distance builder multiplies the threshold by
/// [`THRESHOLD_GROWTH`]. A disconnected Delaunay result (coincident points)
/// is unioned with repaired kNN edges.
///
/// Already-connected inputs are returned unchanged.
pub fn ensure_connected(
    centroids: &[[f64; 2]],
    mut edges: EdgeSet,
    method: BuildMethod,
    mut params: BuildParams,
) -> Result<(EdgeSet, BuildParams), GraphError> {
    let n = centroids.len();
    while component_count(n, &edges) > 1 {
        match method {
            BuildMethod::Knn => {
                let k = params.k.unwrap_or(0) + 1;
                params.k = Some(k);
                edges = build_edges_knn(centroids, k.min(n - 1))?;
            }
            BuildMethod::Distance => {
                let t = params.threshold.unwrap_or(1.0) * THRESHOLD_GROWTH;
                params.threshold = Some(t);
                edges = build_edges_distance(centroids, t)?;
            }
            BuildMethod::Delaunay => {
                warn!("Delaunay graph is disconnected (coincident centroids); adding kNN edges");
                let (extra, kp) = ensure_connected(
                    centroids,
                    build_edges_knn(centroids, 1)?,
                    BuildMethod::Knn,
                    BuildParams {
                        k: Some(1),
                        ..Default::default()
                    },
                )?;
                edges.extend(extra);
                params.k = kp.k;
                params.fallback = true;
            }
        }
    }
    Ok((edges, params))
}
