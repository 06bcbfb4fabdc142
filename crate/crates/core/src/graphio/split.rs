//! Stratified template / train / test splits and the dataset manifest.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::SubjectLabel;
use super::GraphError;
use crate::seed::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Test,
    Template,
}

/// Indices into a graph pool, partitioned by role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub template: Vec<usize>,
    pub seed: u64,
    pub template_frac: f64,
    pub train_frac: f64,
}

impl DatasetSplit {
    pub fn role_of(&self, idx: usize) -> Option<SplitRole> {
        if self.train.contains(&idx) {
            Some(SplitRole::Train)
        } else if self.test.contains(&idx) {
            Some(SplitRole::Test)
        } else if self.template.contains(&idx) {
            Some(SplitRole::Template)
        } else {
            None
        }
    }
}

/// Largest-remainder apportionment of `round(frac · total)` items across
/// classes, so each class gets its proportional share within one item.
fn apportion(class_sizes: &[usize], frac: f64) -> Vec<usize> {
    let total: usize = class_sizes.iter().sum();
    let target = (frac * total as f64).round() as usize;
    let quotas: Vec<f64> = class_sizes.iter().map(|&c| frac * c as f64).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..class_sizes.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let mut missing = target.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if take[c] < class_sizes[c] {
            take[c] += 1;
            missing -= 1;
        }
    }
    take
}

/// Stratified split: the template fraction is drawn first, then the remainder
/// is split `train_frac : 1 - train_frac` into train and test.
pub fn make_split(labels: &[SubjectLabel], template_frac: f64, train_frac: f64, seed: u64) -> Result<DatasetSplit, GraphError> {
    if !(0.0..=1.0).contains(&template_frac) || !(0.0..=1.0).contains(&train_frac) {
        return Err(GraphError::Split(format!("fractions must lie in [0, 1] (template {template_frac}, train {train_frac})")));
    }
    if let Some(i) = labels.iter().position(|l| *l == SubjectLabel::Unknown) {
        return Err(GraphError::Split(format!("pool entry {i} has no label")));
    }
    let classes = [SubjectLabel::Fractured, SubjectLabel::NonFractured];
    let mut members: Vec<Vec<usize>> = classes
        .iter()
        .map(|c| labels.iter().enumerate().filter(|(_, l)| *l == c).map(|(i, _)| i).collect())
        .collect();
    for (c, m) in classes.iter().zip(&members) {
        if m.is_empty() {
            return Err(GraphError::Split(format!("class `{c}` is absent from the pool")));
        }
    }
    let mut rng: ChaCha8Rng = rng_for(seed, "split");
    for m in &mut members {
        m.shuffle(&mut rng);
    }

    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let n_template = apportion(&sizes, template_frac);
    let rest_sizes: Vec<usize> = sizes.iter().zip(&n_template).map(|(s, t)| s - t).collect();
    let n_test = apportion(&rest_sizes, 1.0 - train_frac);

    let (mut template, mut test, mut train) = (Vec::new(), Vec::new(), Vec::new());
    for (c, m) in members.iter().enumerate() {
        let (t, rest) = m.split_at(n_template[c]);
        let (te, tr) = rest.split_at(n_test[c]);
        template.extend_from_slice(t);
        test.extend_from_slice(te);
        train.extend_from_slice(tr);
    }
    template.sort_unstable();
    test.sort_unstable();
    train.sort_unstable();
    Ok(DatasetSplit {
        train,
        test,
        template,
        seed,
        template_frac,
        train_frac,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub graph_id: String,
    /// Path relative to the manifest's directory.
    pub path: String,
    pub label: SubjectLabel,
    pub split: SplitRole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub template_frac: f64,
    pub train_frac: f64,
    pub graphs: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        super::write_atomic(path, serde_json::to_string_pretty(self).expect("manifest serialises").as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let s = fs::read_to_string(path).map_err(|e| GraphError::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| GraphError::Parse {
            context: format!("manifest {}", path.display()),
            source: e,
        })
    }

    /// Rebuild the index split, with indices in manifest order.
    pub fn split(&self) -> DatasetSplit {
        let pick = |role| self.graphs.iter().enumerate().filter(|(_, g)| g.split == role).map(|(i, _)| i).collect();
        DatasetSplit {
            train: pick(SplitRole::Train),
            test: pick(SplitRole::Test),
            template: pick(SplitRole::Template),
            seed: self.seed,
            template_frac: self.template_frac,
            train_frac: self.train_frac,
        }
    }
}
