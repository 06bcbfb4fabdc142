use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::graphio::SubjectLabel;

/// One test-versus-template comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateMatch {
    pub template_id: String,
    pub template_label: SubjectLabel,
    pub score: f64,
    pub accepted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoteOutcome {
    pub accepted_positive: usize,
    pub accepted_negative: usize,
    pub predicted: SubjectLabel,
    pub fallback_used: bool,
}

/// Full record of one prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteTrace {
    pub graph_id: String,
    pub true_label: SubjectLabel,
    pub theta: f64,
    pub matches: Vec<TemplateMatch>,
    pub accepted_positive: usize,
    pub accepted_negative: usize,
    pub predicted: SubjectLabel,
    pub fallback_used: bool,
}

/// Majority vote over templates scoring strictly above `theta`. A tie goes to
/// the positive (fractured) class; with nothing accepted the label of the
/// best-scoring template is used (the earliest one on equal scores).
pub fn vote(scored: &[(SubjectLabel, f64)], theta: f64) -> Result<VoteOutcome, PipelineError> {
    if scored.is_empty() {
        return Err(PipelineError::Evaluation("no template to vote with".into()));
    }
    if let Some((l, _)) = scored.iter().find(|(l, _)| *l == SubjectLabel::Unknown) {
        return Err(PipelineError::Contract(format!("template label `{l}` cannot vote")));
    }
    let mut pos = 0;
    let mut neg = 0;
    for &(label, s) in scored {
        if s > theta {
            if label.is_positive() {
                pos += 1;
            } else {
                neg += 1;
            }
        }
    }
    let (predicted, fallback_used) = if pos + neg == 0 {
        let mut best = 0;
        for (i, &(_, s)) in scored.iter().enumerate() {
            if s > scored[best].1 {
                best = i;
            }
        }
        (scored[best].0, true)
    } else if pos >= neg {
        (SubjectLabel::Fractured, false)
    } else {
        (SubjectLabel::NonFractured, false)
    };
    Ok(VoteOutcome {
        accepted_positive: pos,
        accepted_negative: neg,
        predicted,
        fallback_used,
    })
}

impl VoteTrace {
    pub fn build(graph_id: &str, true_label: SubjectLabel, theta: f64, templates: Vec<(String, SubjectLabel, f64)>) -> Result<Self, PipelineError> {
        let scored: Vec<(SubjectLabel, f64)> = templates.iter().map(|(_, l, s)| (*l, *s)).collect();
        let outcome = vote(&scored, theta)
            .map_err(|e| PipelineError::Evaluation(format!("graph `{graph_id}`: {e}")))?;
        Ok(Self {
            graph_id: graph_id.to_string(),
            true_label,
            theta,
            matches: templates
                .into_iter()
                .map(|(template_id, template_label, score)| TemplateMatch {
                    template_id,
                    template_label,
                    score,
                    accepted: score > theta,
                })
                .collect(),
            accepted_positive: outcome.accepted_positive,
            accepted_negative: outcome.accepted_negative,
            predicted: outcome.predicted,
            fallback_used: outcome.fallback_used,
        })
    }
}
