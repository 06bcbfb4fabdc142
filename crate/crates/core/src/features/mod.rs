//! Per-node feature vectors in the fixed 130-slot layout.

mod first_order;
mod glcm;
mod layout;
mod shape;
mod subject;

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphio::{GrayImage, Mask, RoiGraph, SubjectLabel};

pub use first_order::{basic_features, first_order_features, HISTOGRAM_BINS};
pub use glcm::{cooccurrence, glcm_features, glcm_statistics, DEFAULT_LEVELS};
pub use layout::{Family, FeatureLayout, BMD, CLINICAL, FEATURE_DIM};
pub use shape::shape_features;
pub use subject::{build_subject_graph, SubjectGraph};

/// Number of leading slots computed from image and mask.
pub const COMPUTED_DIM: usize = 58;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("layout error in family `{family}`: expected {expected} values, got {got}")]
    Layout { family: &'static str, expected: usize, got: usize },
    #[error("{path}: {reason}")]
    Table { path: String, reason: String },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("no subject record for `{0}`")]
    MissingSubject(String),
    #[error(transparent)]
    Graph(#[from] crate::graphio::GraphError),
}

/// Subject-level clinical and bone-density attributes. `None` marks a missing value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub label: SubjectLabel,
    pub clinical: [Option<f64>; 11],
    pub bmd: [Option<f64>; 9],
}

impl SubjectRecord {
    pub fn empty(subject_id: &str, label: SubjectLabel) -> Self {
        Self {
            subject_id: subject_id.to_string(),
            label,
            clinical: [None; 11],
            bmd: [None; 9],
        }
    }

    /// Slots 111–130 with missing values as 0, plus the 0-based slots that were missing.
    pub fn slot_values(&self) -> ([f64; 20], Vec<usize>) {
        let mut out = [0.0; 20];
        let mut missing = Vec::new();
        let base = Family::Clinical.range().start;
        for (k, v) in self.clinical.iter().chain(&self.bmd).enumerate() {
            match v {
                Some(x) => out[k] = *x,
                None => missing.push(base + k),
            }
        }
        (out, missing)
    }
}

fn parse_cell(path: &str, line: u64, column: &str, cell: &str) -> Result<Option<f64>, FeatureError> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(FeatureError::Table {
            path: path.to_string(),
            reason: format!("line {line}, column `{column}`: `{cell}` is not a finite number"),
        }),
    }
}

/// Subject table keyed by `subject_id`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SubjectTable {
    pub records: BTreeMap<String, SubjectRecord>,
}

impl SubjectTable {
    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let file = std::fs::File::open(path).map_err(|e| FeatureError::Table {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_reader(file, &path.display().to_string())
    }

    /// Header must name `subject_id`, `label` and every clinical and BMD column.
    pub fn from_reader(reader: impl Read, name: &str) -> Result<Self, FeatureError> {
        let table_err = |reason: String| FeatureError::Table { path: name.to_string(), reason };
        let csv_err = |source| FeatureError::Csv { path: name.to_string(), source };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(csv_err)?.clone();
        let col = |n: &str| header.iter().position(|h| h == n);
        for h in header.iter() {
            if h != "subject_id" && h != "label" && !CLINICAL.contains(&h) && !BMD.contains(&h) {
                return Err(table_err(format!("unknown column `{h}`")));
            }
        }
        let id_col = col("subject_id").ok_or_else(|| table_err("missing column `subject_id`".into()))?;
        let label_col = col("label").ok_or_else(|| table_err("missing column `label`".into()))?;
        let clinical_cols: Vec<usize> = CLINICAL.iter().map(|n| col(n).ok_or_else(|| table_err(format!("missing column `{n}`")))).collect::<Result<_, _>>()?;
        let bmd_cols: Vec<usize> = BMD.iter().map(|n| col(n).ok_or_else(|| table_err(format!("missing column `{n}`")))).collect::<Result<_, _>>()?;

        let mut records = BTreeMap::new();
        for row in rdr.records() {
            let row = row.map_err(csv_err)?;
            let line = row.position().map_or(0, |p| p.line());
            let id = row[id_col].to_string();
            let label = SubjectLabel::parse(&row[label_col]).ok_or_else(|| table_err(format!("line {line}: unknown label `{}`", &row[label_col])))?;
            let mut rec = SubjectRecord::empty(&id, label);
            for (k, &c) in clinical_cols.iter().enumerate() {
                rec.clinical[k] = parse_cell(name, line, CLINICAL[k], &row[c])?;
            }
            for (k, &c) in bmd_cols.iter().enumerate() {
                rec.bmd[k] = parse_cell(name, line, BMD[k], &row[c])?;
            }
            if records.insert(id.clone(), rec).is_some() {
                return Err(table_err(format!("line {line}: duplicate subject `{id}`")));
            }
        }
        Ok(Self { records })
    }

    pub fn get(&self, subject_id: &str) -> Result<&SubjectRecord, FeatureError> {
        self.records.get(subject_id).ok_or_else(|| FeatureError::MissingSubject(subject_id.to_string()))
    }
}

/// Radiomics families supplied from file for one RoI, each with full arity.
pub type IngestedRow = BTreeMap<Family, Vec<f64>>;

/// Precomputed radiomics keyed by `(subject_id, roi_label)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrecomputedFeatures {
    pub rows: HashMap<(String, String), IngestedRow>,
}

impl PrecomputedFeatures {
    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let file = std::fs::File::open(path).map_err(|e| FeatureError::Table {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_reader(file, &path.display().to_string())
    }

    /// Columns are `subject_id`, `roi_label` and registry slot names. A family
    /// is either fully present or absent in the header; within a row, a family
    /// with every cell empty counts as not supplied.
    pub fn from_reader(reader: impl Read, name: &str) -> Result<Self, FeatureError> {
        let layout = FeatureLayout::get();
        let table_err = |reason: String| FeatureError::Table { path: name.to_string(), reason };
        let csv_err = |source| FeatureError::Csv { path: name.to_string(), source };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(csv_err)?.clone();
        let id_col = header.iter().position(|h| h == "subject_id").ok_or_else(|| table_err("missing column `subject_id`".into()))?;
        let roi_col = header.iter().position(|h| h == "roi_label").ok_or_else(|| table_err("missing column `roi_label`".into()))?;

        let mut slot_cols: BTreeMap<usize, usize> = BTreeMap::new();
        for (c, h) in header.iter().enumerate() {
            if c == id_col || c == roi_col {
                continue;
            }
            let slot = layout.slot(h).ok_or_else(|| table_err(format!("unknown column `{h}`")))?;
            if Family::of_slot(slot).is_some_and(Family::is_subject_level) {
                return Err(table_err(format!("column `{h}` belongs to the subject table")));
            }
            slot_cols.insert(slot, c);
        }
        let mut families = Vec::new();
        for fam in Family::ALL.into_iter().filter(|f| !f.is_subject_level()) {
            let got = fam.range().filter(|s| slot_cols.contains_key(s)).count();
            if got == fam.range().len() {
                families.push(fam);
            } else if got > 0 {
                return Err(FeatureError::Layout {
                    family: fam.name(),
                    expected: fam.range().len(),
                    got,
                });
            }
        }

        let mut rows = HashMap::new();
        for row in rdr.records() {
            let row = row.map_err(csv_err)?;
            let line = row.position().map_or(0, |p| p.line());
            let mut out = IngestedRow::new();
            for &fam in &families {
                let cells: Vec<Option<f64>> = fam
                    .range()
                    .map(|s| parse_cell(name, line, layout.name(s), &row[slot_cols[&s]]))
                    .collect::<Result<_, _>>()?;
                let present = cells.iter().filter(|c| c.is_some()).count();
                if present == cells.len() {
                    out.insert(fam, cells.into_iter().flatten().collect());
                } else if present > 0 {
                    return Err(FeatureError::Layout {
                        family: fam.name(),
                        expected: cells.len(),
                        got: present,
                    });
                }
            }
            let key = (row[id_col].to_string(), row[roi_col].to_string());
            if rows.insert(key.clone(), out).is_some() {
                return Err(table_err(format!("line {line}: duplicate key ({}, {})", key.0, key.1)));
            }
        }
        Ok(Self { rows })
    }

    pub fn get(&self, subject_id: &str, roi_label: &str) -> Option<&IngestedRow> {
        self.rows.get(&(subject_id.to_string(), roi_label.to_string()))
    }
}

/// Slots 1–58 computed from one RoI crop.
#[derive(Clone, Debug, PartialEq)]
pub struct ComputedRadiomics {
    pub values: [f64; COMPUTED_DIM],
    /// True when the mask had no neighbouring pixel pair and GLCM slots are zero.
    pub glcm_placeholder: bool,
}

/// Compute slots 1–58, or `None` for an empty region.
pub fn compute_radiomics(image: &GrayImage, mask: &Mask, glcm_levels: usize) -> Option<ComputedRadiomics> {
    let pixels = image.masked(mask);
    if pixels.is_empty() {
        return None;
    }
    let mut values = [0.0; COMPUTED_DIM];
    values[Family::Basics.range()].copy_from_slice(&basic_features(&pixels));
    values[Family::Shape.range()].copy_from_slice(&shape_features(mask));
    values[Family::FirstOrder.range()].copy_from_slice(&first_order_features(&pixels));
    let glcm = glcm_features(image, mask, glcm_levels);
    if let Some(g) = &glcm {
        values[Family::Glcm.range()].copy_from_slice(g);
    }
    Some(ComputedRadiomics {
        values,
        glcm_placeholder: glcm.is_none(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlotSource {
    Computed,
    Ingested,
    ZeroFilled,
    Subject,
}

/// Where each family of one node vector came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeProvenance {
    /// The RoI crop was missing, so slots 1–110 are a zero placeholder.
    pub placeholder: bool,
    pub families: Vec<(String, SlotSource)>,
    /// 0-based subject-level slots whose value was missing and set to 0.
    pub missing_subject_slots: Vec<usize>,
}

/// Build one length-130 vector. Ingested families override computed ones;
/// a missing crop (`computed == None`) zeroes slots 1–110 regardless of ingestion.
pub fn assemble_node_vector(
    computed: Option<&ComputedRadiomics>,
    ingested: Option<&IngestedRow>,
    subject: &SubjectRecord,
) -> Result<(Vec<f64>, NodeProvenance), FeatureError> {
    let mut out = vec![0.0; FEATURE_DIM];
    let mut prov = NodeProvenance {
        placeholder: computed.is_none(),
        ..Default::default()
    };
    for fam in Family::ALL.into_iter().filter(|f| !f.is_subject_level()) {
        let range = fam.range();
        let source = match (computed, ingested.and_then(|r| r.get(&fam))) {
            (None, _) => SlotSource::ZeroFilled,
            (Some(_), Some(vals)) => {
                if vals.len() != range.len() {
                    return Err(FeatureError::Layout {
                        family: fam.name(),
                        expected: range.len(),
                        got: vals.len(),
                    });
                }
                if !fam.is_ingested() {
                    info!("{}: ingested `{}` values replace computed ones", subject.subject_id, fam.name());
                }
                out[range].copy_from_slice(vals);
                SlotSource::Ingested
            }
            (Some(c), None) if range.end <= COMPUTED_DIM => {
                if fam == Family::Glcm && c.glcm_placeholder {
                    SlotSource::ZeroFilled
                } else {
                    out[range.clone()].copy_from_slice(&c.values[range]);
                    SlotSource::Computed
                }
            }
            (Some(_), None) => SlotSource::ZeroFilled,
        };
        prov.families.push((fam.name().to_string(), source));
    }
    let (subject_vals, missing) = subject.slot_values();
    out[Family::Clinical.range().start..].copy_from_slice(&subject_vals);
    prov.families.push((Family::Clinical.name().to_string(), SlotSource::Subject));
    prov.families.push((Family::Bmd.name().to_string(), SlotSource::Subject));
    if !missing.is_empty() {
        warn!("{}: {} subject-level values missing, encoded as 0", subject.subject_id, missing.len());
    }
    prov.missing_subject_slots = missing;
    Ok((out, prov))
}

/// Per-slot z-scoring statistics (population standard deviation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Fit on a set of feature rows, typically every node of every train graph.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().zip(&mean).map(|(s, m)| {
            let sd = (s / n).sqrt();
            // rounding residue of a constant column is not spread
            if sd <= 1e-12 * m.abs().max(1.0) { 0.0 } else { sd }
        });
        Self { std: std.collect(), mean }
    }

    pub fn fit_graphs<'a>(graphs: impl IntoIterator<Item = &'a RoiGraph>) -> Self {
        Self::fit(graphs.into_iter().flat_map(|g| g.nodes.iter().map(|n| n.features.as_slice())))
    }

    /// Constant slots map to 0.
    pub fn apply(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
        }
    }

    pub fn apply_graph(&self, g: &mut RoiGraph) {
        for n in &mut g.nodes {
            self.apply(&mut n.features);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn subject() -> SubjectRecord {
        let mut s = SubjectRecord::empty("s1", SubjectLabel::Fractured);
        for (k, v) in s.clinical.iter_mut().enumerate() {
            *v = Some(k as f64 + 1.0);
        }
        for (k, v) in s.bmd.iter_mut().enumerate() {
            *v = Some(-(k as f64) - 0.5);
        }
        s
    }

    fn crop() -> (GrayImage, Mask) {
        let values = (0..64).map(|i| (i * 37 % 11) as f64).collect();
        let px: Vec<_> = (2..6).flat_map(|x| (1..7).map(move |y| (x, y))).collect();
        (GrayImage { width: 8, height: 8, values }, Mask::from_pixels(8, 8, &px))
    }

    #[test]
    fn vector_is_always_full_length() {
        let (img, mask) = crop();
        let c = compute_radiomics(&img, &mask, DEFAULT_LEVELS).unwrap();
        let (v, prov) = assemble_node_vector(Some(&c), None, &subject()).unwrap();
        assert_eq!(v.len(), FEATURE_DIM);
        assert_eq!(&v[..COMPUTED_DIM], &c.values[..]);
        assert!(v[58..110].iter().all(|&x| x == 0.0));
        assert_eq!(prov.families.len(), Family::ALL.len());
        let (v, _) = assemble_node_vector(None, None, &subject()).unwrap();
        assert_eq!(v.len(), FEATURE_DIM);
    }

    #[test]
    fn subject_slots_are_replicated() {
        let (img, mask) = crop();
        let c = compute_radiomics(&img, &mask, DEFAULT_LEVELS).unwrap();
        let (a, _) = assemble_node_vector(Some(&c), None, &subject()).unwrap();
        let (b, _) = assemble_node_vector(None, None, &subject()).unwrap();
        assert_eq!(&a[110..], &b[110..]);
        assert_eq!(a[110], 1.0);
        assert_eq!(a[129], -8.5);
    }

    #[test]
    fn missing_crop_is_placeholder() {
        let mut ing = IngestedRow::new();
        ing.insert(Family::Ngtdm, vec![1.0; 5]);
        let (v, prov) = assemble_node_vector(None, Some(&ing), &subject()).unwrap();
        assert!(v[..110].iter().all(|&x| x == 0.0));
        assert!(v[110..].iter().all(|&x| x != 0.0));
        assert!(prov.placeholder);
    }

    #[test]
    fn ingestion_wins_and_arity_is_checked() {
        let (img, mask) = crop();
        let c = compute_radiomics(&img, &mask, DEFAULT_LEVELS).unwrap();
        let mut ing = IngestedRow::new();
        ing.insert(Family::Basics, vec![9.0; 5]);
        ing.insert(Family::Gldm, vec![2.0; 15]);
        let (v, _) = assemble_node_vector(Some(&c), Some(&ing), &subject()).unwrap();
        assert_eq!(&v[..5], &[9.0; 5]);
        assert_eq!(&v[58..73], &[2.0; 15]);
        ing.insert(Family::Glrlm, vec![1.0; 3]);
        let err = assemble_node_vector(Some(&c), Some(&ing), &subject()).unwrap_err();
        assert!(err.to_string().contains("glrlm"), "{err}");
    }

    #[test]
    fn missing_subject_values_are_flagged() {
        let mut s = subject();
        s.bmd[8] = None;
        let (v, prov) = assemble_node_vector(None, None, &s).unwrap();
        assert_eq!(v[129], 0.0);
        assert_eq!(prov.missing_subject_slots, vec![129]);
    }

    #[test]
    fn subject_table_parses() {
        let mut header = vec!["subject_id".to_string(), "label".to_string()];
        header.extend(CLINICAL.iter().chain(&BMD).map(|s| s.to_string()));
        let mut row = vec!["A1".to_string(), "non-fractured".to_string()];
        row.extend((0..20).map(|k| if k == 3 { String::new() } else { k.to_string() }));
        let text = format!("{}\n{}\n", header.join(","), row.join(","));
        let t = SubjectTable::from_reader(text.as_bytes(), "subjects.csv").unwrap();
        let r = t.get("A1").unwrap();
        assert_eq!(r.label, SubjectLabel::NonFractured);
        assert_eq!(r.clinical[3], None);
        assert_eq!(r.bmd[8], Some(19.0));
        assert!(t.get("B").is_err());
        let bad = text.replace("subject_id,", "subject_id,extra,").replace("A1,", "A1,0,");
        assert!(SubjectTable::from_reader(bad.as_bytes(), "x").unwrap_err().to_string().contains("extra"));
    }

    #[test]
    fn precomputed_partial_family_is_a_layout_error() {
        let names = FeatureLayout::get().family_names(Family::Ngtdm);
        let full = format!("subject_id,roi_label,{}\nA,femur head,1,2,3,4,5\n", names.join(","));
        let p = PrecomputedFeatures::from_reader(full.as_bytes(), "f.csv").unwrap();
        assert_eq!(p.get("A", "femur head").unwrap()[&Family::Ngtdm], vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let partial = format!("subject_id,roi_label,{}\nA,femur head,1,2,3,4\n", names[..4].join(","));
        let err = PrecomputedFeatures::from_reader(partial.as_bytes(), "f.csv").unwrap_err();
        assert!(err.to_string().contains("ngtdm"), "{err}");
    }

    proptest! {
        #[test]
        fn zscore_moments(rows in prop::collection::vec(prop::collection::vec(-1e4f64..1e4, 4), 2..40), c in -5.0f64..5.0) {
            let mut rows = rows;
            for r in &mut rows {
                r[2] = c;
            }
            let stats = NormStats::fit(rows.iter().map(Vec::as_slice));
            for r in &mut rows {
                stats.apply(r);
            }
            let n = rows.len() as f64;
            for j in 0..4 {
                let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
                let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                if stats.std[j] > 0.0 {
                    prop_assert!(mean.abs() < 1e-9);
                    prop_assert!((var - 1.0).abs() < 1e-6);
                } else {
                    prop_assert!(rows.iter().all(|r| r[j] == 0.0));
                }
            }
            prop_assert_eq!(stats.std[2], 0.0);
        }
    }
}
