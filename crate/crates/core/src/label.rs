//! The seven lesion categories and their fixed integer codes.

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const NUM_CLASSES: usize = 7;

/// A lesion category. The discriminant is the label code stored in the
/// dataset archives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ClassLabel {
    ActinicKeratosesIec = 0,
    BasalCellCarcinoma = 1,
    BenignKeratosis = 2,
    Dermatofibroma = 3,
    Melanoma = 4,
    MelanocyticNevi = 5,
    VascularLesions = 6,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::ActinicKeratosesIec,
        ClassLabel::BasalCellCarcinoma,
        ClassLabel::BenignKeratosis,
        ClassLabel::Dermatofibroma,
        ClassLabel::Melanoma,
        ClassLabel::MelanocyticNevi,
        ClassLabel::VascularLesions,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: i64) -> Result<Self> {
        usize::try_from(code)
            .ok()
            .and_then(|c| Self::ALL.get(c).copied())
            .ok_or_else(|| Error::Corruption(alloc::format!("label {code} outside [0, 6]")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::ActinicKeratosesIec => "actinic_keratoses_iec",
            ClassLabel::BasalCellCarcinoma => "basal_cell_carcinoma",
            ClassLabel::BenignKeratosis => "benign_keratosis",
            ClassLabel::Dermatofibroma => "dermatofibroma",
            ClassLabel::Melanoma => "melanoma",
            ClassLabel::MelanocyticNevi => "melanocytic_nevi",
            ClassLabel::VascularLesions => "vascular_lesions",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown class name `{s}`")))
    }
}

/// Probability vector with all mass on `label`.
pub fn one_hot(label: ClassLabel) -> [f64; NUM_CLASSES] {
    let mut v = [0.0; NUM_CLASSES];
    v[label.index()] = 1.0;
    v
}
