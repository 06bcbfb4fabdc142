//! The fixed 130-slot node feature layout.
//!
//! Slot numbers in this file are 0-based; family ranges in the table below are
//! listed 1-based to match the usual published layout.
//!
//! | slots (1-based) | family        | source                     |
//! |-----------------|---------------|----------------------------|
//! | 1–5             | basics        | computed                   |
//! | 6–16            | shape (2D)    | computed                   |
//! | 17–34           | first order   | computed                   |
//! | 35–58           | GLCM          | computed                   |
//! | 59–73           | GLDM          | ingested                   |
//! | 74–89           | GLRLM         | ingested                   |
//! | 90–105          | GLSZM         | ingested                   |
//! | 106–110         | NGTDM         | ingested                   |
//! | 111–121         | clinical      | subject table              |
//! | 122–130         | BMD / BMC     | subject table              |

use std::ops::Range;
use std::sync::OnceLock;

pub const FEATURE_DIM: usize = 130;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Basics,
    Shape,
    FirstOrder,
    Glcm,
    Gldm,
    Glrlm,
    Glszm,
    Ngtdm,
    Clinical,
    Bmd,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::Basics,
        Family::Shape,
        Family::FirstOrder,
        Family::Glcm,
        Family::Gldm,
        Family::Glrlm,
        Family::Glszm,
        Family::Ngtdm,
        Family::Clinical,
        Family::Bmd,
    ];

    /// 0-based, half-open slot range.
    pub fn range(self) -> Range<usize> {
        match self {
            Family::Basics => 0..5,
            Family::Shape => 5..16,
            Family::FirstOrder => 16..34,
            Family::Glcm => 34..58,
            Family::Gldm => 58..73,
            Family::Glrlm => 73..89,
            Family::Glszm => 89..105,
            Family::Ngtdm => 105..110,
            Family::Clinical => 110..121,
            Family::Bmd => 121..130,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Basics => "basics",
            Family::Shape => "shape2D",
            Family::FirstOrder => "firstorder",
            Family::Glcm => "glcm",
            Family::Gldm => "gldm",
            Family::Glrlm => "glrlm",
            Family::Glszm => "glszm",
            Family::Ngtdm => "ngtdm",
            Family::Clinical => "clinical",
            Family::Bmd => "bmd",
        }
    }

    /// Families filled from the precomputed-features file.
    pub fn is_ingested(self) -> bool {
        matches!(self, Family::Gldm | Family::Glrlm | Family::Glszm | Family::Ngtdm)
    }

    pub fn is_subject_level(self) -> bool {
        matches!(self, Family::Clinical | Family::Bmd)
    }

    pub fn of_slot(slot: usize) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.range().contains(&slot))
    }
}

pub(crate) const BASICS: [&str; 5] = ["Mean", "Minimum", "Maximum", "VoxelNum", "VolumeNum"];

pub(crate) const SHAPE: [&str; 11] = [
    "Elongation",
    "MajorAxisLength",
    "MinorAxisLength",
    "MaximumDiameter",
    "MaximumDiameterRow",
    "MaximumDiameterColumn",
    "MeshSurface",
    "Perimeter",
    "PerimeterSurfaceRatio",
    "Sphericity",
    "PixelSurface",
];

pub(crate) const FIRST_ORDER: [&str; 18] = [
    "10Percentile",
    "90Percentile",
    "Energy",
    "TotalEnergy",
    "Entropy",
    "InterquartileRange",
    "Kurtosis",
    "Maximum",
    "MeanAbsoluteDeviation",
    "Mean",
    "Median",
    "Minimum",
    "Range",
    "RobustMeanAbsoluteDeviation",
    "RootMeanSquared",
    "Skewness",
    "Uniformity",
    "Variance",
];

pub(crate) const GLCM: [&str; 24] = [
    "Autocorrelation",
    "ClusterProminence",
    "ClusterShade",
    "ClusterTendency",
    "Contrast",
    "Correlation",
    "DifferenceAverage",
    "DifferenceEntropy",
    "DifferenceVariance",
    "Id",
    "Idm",
    "Idmn",
    "Idn",
    "Imc1",
    "Imc2",
    "InverseVariance",
    "JointAverage",
    "JointEnergy",
    "JointEntropy",
    "MCC",
    "MaximumProbability",
    "SumAverage",
    "SumEntropy",
    "SumSquares",
];

const GLDM: [&str; 15] = [
    "DependenceEntropy",
    "DependenceNonUniformity",
    "DependenceNonUniformityNormalized",
    "DependenceVariance",
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "GrayLevelVariance",
    "HighGrayLevelEmphasis",
    "LargeDependenceEmphasis",
    "LargeDependenceHighGrayLevelEmphasis",
    "LargeDependenceLowGrayLevelEmphasis",
    "LowGrayLevelEmphasis",
    "SmallDependenceEmphasis",
    "SmallDependenceHighGrayLevelEmphasis",
    "SmallDependenceLowGrayLevelEmphasis",
];

const GLRLM: [&str; 16] = [
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "GrayLevelVariance",
    "HighGrayLevelRunEmphasis",
    "LongRunEmphasis",
    "LongRunHighGrayLevelEmphasis",
    "LongRunLowGrayLevelEmphasis",
    "LowGrayLevelRunEmphasis",
    "RunEntropy",
    "RunLengthNonUniformity",
    "RunLengthNonUniformityNormalized",
    "RunPercentage",
    "RunVariance",
    "ShortRunEmphasis",
    "ShortRunHighGrayLevelEmphasis",
    "ShortRunLowGrayLevelEmphasis",
];

const GLSZM: [&str; 16] = [
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "GrayLevelVariance",
    "HighGrayLevelZoneEmphasis",
    "LargeAreaEmphasis",
    "LargeAreaHighGrayLevelEmphasis",
    "LargeAreaLowGrayLevelEmphasis",
    "LowGrayLevelZoneEmphasis",
    "SizeZoneNonUniformity",
    "SizeZoneNonUniformityNormalized",
    "SmallAreaEmphasis",
    "SmallAreaHighGrayLevelEmphasis",
    "SmallAreaLowGrayLevelEmphasis",
    "ZoneEntropy",
    "ZonePercentage",
    "ZoneVariance",
];

const NGTDM: [&str; 5] = ["Busyness", "Coarseness", "Complexity", "Contrast", "Strength"];

/// Subject-table column names for slots 111–121.
pub const CLINICAL: [&str; 11] = [
    "age",
    "sex",
    "height",
    "weight",
    "household_size",
    "smoking",
    "alcohol",
    "diet",
    "dietary_change",
    "falls_last_year",
    "fractures_last_5y",
];

/// Subject-table column names for slots 122–130.
pub const BMD: [&str; 9] = [
    "l_femur_neck_tscore",
    "l_femur_neck_bmd",
    "l_total_femur_tscore",
    "l_total_femur_bmd",
    "l_trochanter_tscore",
    "l_trochanter_bmd",
    "l_wards_tscore",
    "l_wards_bmd",
    "pelvis_bmc",
];

/// Ordered slot-name registry.
#[derive(Debug)]
pub struct FeatureLayout {
    names: Vec<String>,
}

impl FeatureLayout {
    pub fn get() -> &'static FeatureLayout {
        static LAYOUT: OnceLock<FeatureLayout> = OnceLock::new();
        LAYOUT.get_or_init(|| {
            let fam: [(&[&str], Family); 10] = [
                (&BASICS, Family::Basics),
                (&SHAPE, Family::Shape),
                (&FIRST_ORDER, Family::FirstOrder),
                (&GLCM, Family::Glcm),
                (&GLDM, Family::Gldm),
                (&GLRLM, Family::Glrlm),
                (&GLSZM, Family::Glszm),
                (&NGTDM, Family::Ngtdm),
                (&CLINICAL, Family::Clinical),
                (&BMD, Family::Bmd),
            ];
            let names = fam
                .iter()
                .flat_map(|(names, f)| names.iter().map(move |n| format!("{}_{}", f.name(), n)))
                .collect();
            FeatureLayout { names }
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn family_names(&self, family: Family) -> &[String] {
        &self.names[family.range()]
    }
}
