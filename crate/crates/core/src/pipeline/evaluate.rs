use super::{check_theta, EvalReport, PipelineError, VoteTrace};
use crate::graphio::{RoiGraph, SubjectLabel};
use crate::net::NetParams;
use crate::numcore::Tensor;
use crate::Exec;

/// Classify every test graph by template matching and tally the confusion
/// counts. Each test graph is compared with the templates that have its node
/// count; template embeddings are computed once and shared.
pub fn evaluate(test: &[&RoiGraph], templates: &[&RoiGraph], params: &NetParams, theta: f64, exec: Exec) -> Result<EvalReport, PipelineError> {
    check_theta("theta", theta)?;
    for t in templates {
        if t.subject_label == SubjectLabel::Unknown {
            return Err(PipelineError::Contract(format!("template `{}` has no label", t.graph_id)));
        }
    }
    for g in test {
        if g.subject_label == SubjectLabel::Unknown {
            return Err(PipelineError::Contract(format!("test graph `{}` has no label", g.graph_id)));
        }
    }
    let template_emb: Vec<Tensor> = exec.map(templates, |t| params.intra_embed(t)).into_iter().collect::<Result<_, _>>()?;

    let per_test = exec.map(test, |g| -> Result<(VoteTrace, usize), PipelineError> {
        let compatible: Vec<usize> = (0..templates.len()).filter(|&k| templates[k].node_count() == g.node_count()).collect();
        if compatible.is_empty() {
            return Err(PipelineError::Evaluation(format!(
                "no template has {} RoIs to match test graph `{}`",
                g.node_count(),
                g.graph_id
            )));
        }
        let query = params.intra_embed(g)?;
        let candidates: Vec<&Tensor> = compatible.iter().map(|&k| &template_emb[k]).collect();
        let (scores, degenerate) = params.score_embedded(&query, &candidates)?;
        let rows = compatible
            .iter()
            .zip(scores)
            .map(|(&k, s)| (templates[k].graph_id.clone(), templates[k].subject_label, s))
            .collect();
        Ok((VoteTrace::build(&g.graph_id, g.subject_label, theta, rows)?, degenerate))
    });

    let mut traces = Vec::with_capacity(test.len());
    let mut degenerate = 0;
    for r in per_test {
        let (t, d) = r?;
        traces.push(t);
        degenerate += d;
    }
    if degenerate > 0 {
        log::warn!("{degenerate} test-template pairs had a zero pooled embedding; their similarity is 0");
    }
    Ok(EvalReport::from_traces(traces, theta, degenerate))
}
