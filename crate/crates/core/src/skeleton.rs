//! Default 17-joint skeleton and the evaluation joint subsets.
//!
//! Joint order follows the common 17-joint motion-capture layout with the
//! pelvis as root. Bone lengths are representative adult values chosen for
//! synthetic data; they are not statistics of any dataset.

use std::sync::OnceLock;

use serde::Deserialize;

use crate::error::{GeomError, Result};
use crate::scale_recovery::BoneSpec;

const SKELETON_JSON: &str = include_str!("../data/skeleton17.json");

#[derive(Debug, Deserialize)]
struct Subsets {
    #[serde(rename = "17")]
    all: Vec<usize>,
    #[serde(rename = "16")]
    no_pelvis: Vec<usize>,
    #[serde(rename = "14")]
    fourteen: Vec<usize>,
}

#[derive(Debug, Deserialize)]
pub struct SkeletonTable {
    pub joint_names: Vec<String>,
    pub root: usize,
    pub bones: BoneSpec,
    subsets: Subsets,
    pub hips: Vec<usize>,
    pub neck: usize,
}

pub fn skeleton17() -> &'static SkeletonTable {
    static TABLE: OnceLock<SkeletonTable> = OnceLock::new();
    TABLE.get_or_init(|| serde_json::from_str(SKELETON_JSON).expect("bundled skeleton table is valid"))
}

pub fn default_bones() -> BoneSpec {
    skeleton17().bones.clone()
}

pub const PELVIS: usize = 0;
pub const JOINT_COUNT: usize = 17;

/// Named evaluation subsets of the 17-joint layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum JointSubset {
    /// All 17 joints.
    All17,
    /// Everything except the pelvis.
    NoPelvis16,
    /// Head top, neck, shoulders, elbows, wrists, hips, knees, ankles.
    Common14,
}

impl TryFrom<u32> for JointSubset {
    type Error = GeomError;

    fn try_from(n: u32) -> Result<Self> {
        match n {
            17 => Ok(Self::All17),
            16 => Ok(Self::NoPelvis16),
            14 => Ok(Self::Common14),
            _ => Err(GeomError::Config(format!("unknown joint subset {n}; expected 14, 16 or 17"))),
        }
    }
}

impl From<JointSubset> for u32 {
    fn from(s: JointSubset) -> u32 {
        match s {
            JointSubset::All17 => 17,
            JointSubset::NoPelvis16 => 16,
            JointSubset::Common14 => 14,
        }
    }
}

impl JointSubset {
    pub fn indices(&self) -> &'static [usize] {
        let s = &skeleton17().subsets;
        match self {
            Self::All17 => &s.all,
            Self::NoPelvis16 => &s.no_pelvis,
            Self::Common14 => &s.fourteen,
        }
    }
}
