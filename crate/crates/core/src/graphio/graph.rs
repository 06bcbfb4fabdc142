use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::edges::{component_count, EdgeSet};
use super::GraphError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubjectLabel {
    Fractured,
    NonFractured,
    Unknown,
}

impl SubjectLabel {
    pub fn is_positive(self) -> bool {
        self == SubjectLabel::Fractured
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "fractured" | "1" | "positive" | "fx" => Some(Self::Fractured),
            "non-fractured" | "nonfractured" | "0" | "negative" => Some(Self::NonFractured),
            "unknown" | "" => Some(Self::Unknown),
            _ => None,
        }
    }
}

impl fmt::Display for SubjectLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fractured => "fractured",
            Self::NonFractured => "non-fractured",
            Self::Unknown => "unknown",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildMethod {
    Knn,
    Delaunay,
    Distance,
}

impl std::str::FromStr for BuildMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "knn" => Ok(Self::Knn),
            "delaunay" => Ok(Self::Delaunay),
            "distance" => Ok(Self::Distance),
            other => Err(format!("unknown edge builder `{other}` (expected knn, delaunay or distance)")),
        }
    }
}

impl fmt::Display for BuildMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Knn => "knn",
            Self::Delaunay => "delaunay",
            Self::Distance => "distance",
        })
    }
}

/// Parameters an edge builder actually ran with, after connectivity repair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Delaunay could not triangulate and kNN was used instead.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub label: String,
    /// `(x, y)` in pixels; x is the column, y the row.
    pub centroid: [f64; 2],
    pub features: Vec<f64>,
}

/// Attributed undirected spatial graph of one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiGraph {
    pub graph_id: String,
    pub subject_label: SubjectLabel,
    pub build_method: BuildMethod,
    pub build_params: BuildParams,
    pub nodes: Vec<Node>,
    /// Sorted `(i, j)` pairs with `i < j`.
    pub edges: Vec<[usize; 2]>,
}

impl RoiGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.features.len())
    }

    pub fn centroids(&self) -> Vec<[f64; 2]> {
        self.nodes.iter().map(|n| n.centroid).collect()
    }

    pub fn edge_set(&self) -> EdgeSet {
        self.edges.iter().map(|&[i, j]| (i, j)).collect()
    }

    /// Neighbour lists in ascending index order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &[i, j] in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj.iter_mut().for_each(|a| a.sort_unstable());
        adj
    }

    pub fn is_connected(&self) -> bool {
        component_count(self.nodes.len(), &self.edge_set()) == 1
    }

    /// Check every structural invariant of the graph.
    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.nodes.len();
        let fail = |msg: String| Err(GraphError::Invalid {
            graph_id: self.graph_id.clone(),
            reason: msg,
        });
        if n == 0 {
            return fail("graph has no nodes".into());
        }
        let d = self.feature_dim();
        if let Some(i) = self.nodes.iter().position(|node| node.features.len() != d) {
            return fail(format!("node {i} has {} features, expected {d}", self.nodes[i].features.len()));
        }
        if self.nodes.iter().any(|node| node.features.iter().chain(&node.centroid).any(|v| !v.is_finite())) {
            return fail("non-finite feature or centroid".into());
        }
        let mut prev: Option<[usize; 2]> = None;
        for &[i, j] in &self.edges {
            if i == j {
                return fail(format!("self-loop on node {i}"));
            }
            if i > j {
                return fail(format!("edge [{i}, {j}] is not in canonical (low, high) order"));
            }
            if j >= n {
                return fail(format!("edge [{i}, {j}] references a missing node"));
            }
            if let Some(p) = prev {
                if p >= [i, j] {
                    return fail(format!("edge [{i}, {j}] is duplicated or out of order"));
                }
            }
            prev = Some([i, j]);
        }
        if !self.is_connected() {
            return fail("graph is not connected".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, GraphError> {
        let g: RoiGraph = serde_json::from_str(s).map_err(|e| GraphError::Parse {
            context: "graph file".into(),
            source: e,
        })?;
        g.validate()?;
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        super::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let s = fs::read_to_string(path).map_err(|e| GraphError::io(path, e))?;
        Self::from_json(&s).map_err(|e| e.with_path(path))
    }

    /// Reorder nodes so that new node `k` is old node `perm[k]`; edges and
    /// features move with their nodes.
    pub fn permuted(&self, perm: &[usize]) -> RoiGraph {
        let n = self.nodes.len();
        assert_eq!(perm.len(), n);
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let nodes = perm.iter().map(|&old| self.nodes[old].clone()).collect();
        let edges: EdgeSet = self
            .edges
            .iter()
            .map(|&[i, j]| {
                let (a, b) = (inverse[i], inverse[j]);
                (a.min(b), a.max(b))
            })
            .collect();
        RoiGraph {
            nodes,
            edges: edges.into_iter().map(|(i, j)| [i, j]).collect(),
            ..self.clone()
        }
    }
}
