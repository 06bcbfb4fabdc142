//! Whole-subject graph assembly from annotations, image and tables.

use log::warn;

use super::{assemble_node_vector, compute_radiomics, FeatureError, NodeProvenance, PrecomputedFeatures, SubjectRecord};
use crate::graphio::{build_connected, centroid, load_grayscale, rasterize_polygon, AnnotationFile, EdgeSpec, GraphError, Node, RoiGraph};

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectGraph {
    pub graph: RoiGraph,
    /// One entry per node, in node order.
    pub provenance: Vec<NodeProvenance>,
}

/// Rasterise every RoI, compute or ingest its features and connect the
/// centroids with `edges`. Without an image reference every node gets the
/// zero radiomics placeholder; an unreadable image is an error.
pub fn build_subject_graph(
    annotation: &AnnotationFile,
    subject: &SubjectRecord,
    precomputed: Option<&PrecomputedFeatures>,
    edges: &EdgeSpec,
    glcm_levels: usize,
) -> Result<SubjectGraph, FeatureError> {
    if annotation.rois.is_empty() {
        return Err(GraphError::Parameter(format!("subject `{}` has no annotated RoIs", subject.subject_id)).into());
    }
    let image = annotation.image_path.as_deref().map(load_grayscale).transpose()?;
    if image.is_none() {
        warn!("{}: no image reference, radiomics slots are a zero placeholder", subject.subject_id);
    }
    let (width, height) = match &image {
        Some(img) => (img.width, img.height),
        None => {
            let extent = |axis: usize| {
                annotation.rois.iter().flat_map(|r| r.polygon.iter().map(move |p| p[axis])).fold(0.0f64, f64::max).ceil() as usize + 1
            };
            (extent(0), extent(1))
        }
    };

    let mut nodes = Vec::with_capacity(annotation.rois.len());
    let mut provenance = Vec::with_capacity(annotation.rois.len());
    for roi in &annotation.rois {
        let mask = rasterize_polygon(&roi.polygon, width, height);
        let c = centroid(&mask).map_err(|e| GraphError::Parameter(format!("RoI `{}`: {e}", roi.label)))?;
        let computed = image.as_ref().and_then(|img| compute_radiomics(img, &mask, glcm_levels));
        let ingested = precomputed.and_then(|p| p.get(&subject.subject_id, &roi.label));
        let (features, prov) = assemble_node_vector(computed.as_ref(), ingested, subject)?;
        nodes.push(Node {
            label: roi.label.clone(),
            centroid: c,
            features,
        });
        provenance.push(prov);
    }

    let centroids: Vec<[f64; 2]> = nodes.iter().map(|n| n.centroid).collect();
    let (edge_set, build_params) = build_connected(&centroids, edges)?;
    let graph = RoiGraph {
        graph_id: subject.subject_id.clone(),
        subject_label: subject.label,
        build_method: edges.method,
        build_params,
        nodes,
        edges: edge_set.into_iter().map(|(a, b)| [a, b]).collect(),
    };
    graph.validate()?;
    Ok(SubjectGraph { graph, provenance })
}
