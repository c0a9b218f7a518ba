//! Pose containers shared by all modules.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};

/// Which coordinate frame the joints of a [`Pose3D`] live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Camera coordinates, including the distance to the camera.
    Absolute,
    /// Translated so that the root joint sits at the origin.
    RootRelative,
}

/// Units of a [`Pose2D`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Pixel,
    /// Image coordinates after applying the inverse intrinsic matrix.
    Normalized,
}

const ROOT_ZERO_TOL: f64 = 1e-9;

/// J joint positions in millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Pose3DRepr", into = "Pose3DRepr")]
pub struct Pose3D {
    joints: Vec<Vector3<f64>>,
    frame: Frame,
    root_index: usize,
}

#[derive(Serialize, Deserialize)]
struct Pose3DRepr {
    frame: Frame,
    root_index: usize,
    joints: Vec<[f64; 3]>,
}

impl TryFrom<Pose3DRepr> for Pose3D {
    type Error = GeomError;

    fn try_from(r: Pose3DRepr) -> Result<Self> {
        let joints = r.joints.iter().map(|j| Vector3::new(j[0], j[1], j[2])).collect();
        Pose3D::new(joints, r.frame, r.root_index)
    }
}

impl From<Pose3D> for Pose3DRepr {
    fn from(p: Pose3D) -> Self {
        Pose3DRepr {
            frame: p.frame,
            root_index: p.root_index,
            joints: p.joints.iter().map(|j| [j.x, j.y, j.z]).collect(),
        }
    }
}

impl Pose3D {
    pub fn new(joints: Vec<Vector3<f64>>, frame: Frame, root_index: usize) -> Result<Self> {
        if joints.is_empty() {
            return Err(GeomError::InvalidInput("pose has no joints".into()));
        }
        if root_index >= joints.len() {
            return Err(GeomError::InvalidInput(format!(
                "root index {root_index} out of range for {} joints",
                joints.len()
            )));
        }
        if let Some(j) = joints.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(GeomError::InvalidInput(format!("joint {j} is not finite")));
        }
        if frame == Frame::RootRelative && joints[root_index].amax() > ROOT_ZERO_TOL {
            return Err(GeomError::InvalidInput(format!(
                "root-relative pose has nonzero root {:?}",
                joints[root_index].as_slice()
            )));
        }
        Ok(Self { joints, frame, root_index })
    }

    pub fn absolute(joints: Vec<Vector3<f64>>, root_index: usize) -> Result<Self> {
        Self::new(joints, Frame::Absolute, root_index)
    }

    pub fn joints(&self) -> &[Vector3<f64>] {
        &self.joints
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn root_index(&self) -> usize {
        self.root_index
    }

    pub fn root(&self) -> Vector3<f64> {
        self.joints[self.root_index]
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// Applies `f` to every joint, keeping frame and root.
    ///
    /// The result is re-validated, so a map that moves the root of a
    /// root-relative pose fails.
    pub fn map(&self, f: impl FnMut(&Vector3<f64>) -> Vector3<f64>) -> Result<Self> {
        Self::new(self.joints.iter().map(f).collect(), self.frame, self.root_index)
    }

    pub fn with_root_index(&self, root_index: usize) -> Result<Self> {
        Self::new(self.joints.clone(), self.frame, root_index)
    }

    /// Adds `offset` to every joint and tags the result as absolute.
    pub fn translated(&self, offset: &Vector3<f64>) -> Result<Self> {
        Self::new(self.joints.iter().map(|j| j + offset).collect(), Frame::Absolute, self.root_index)
    }
}

/// J joint positions in an image plane with a per-joint validity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Pose2DRepr", into = "Pose2DRepr")]
pub struct Pose2D {
    joints: Vec<Vector2<f64>>,
    space: Space,
    valid: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct Pose2DRepr {
    space: Space,
    joints: Vec<[f64; 2]>,
    #[serde(default)]
    valid: Option<Vec<bool>>,
}

impl TryFrom<Pose2DRepr> for Pose2D {
    type Error = GeomError;

    fn try_from(r: Pose2DRepr) -> Result<Self> {
        let joints: Vec<_> = r.joints.iter().map(|j| Vector2::new(j[0], j[1])).collect();
        let valid = r.valid.unwrap_or_else(|| vec![true; joints.len()]);
        Pose2D::new(joints, r.space, valid)
    }
}

impl From<Pose2D> for Pose2DRepr {
    fn from(p: Pose2D) -> Self {
        Pose2DRepr {
            space: p.space,
            joints: p.joints.iter().map(|j| [j.x, j.y]).collect(),
            valid: Some(p.valid),
        }
    }
}

impl Pose2D {
    pub fn new(joints: Vec<Vector2<f64>>, space: Space, valid: Vec<bool>) -> Result<Self> {
        if joints.len() != valid.len() {
            return Err(GeomError::InvalidInput(format!(
                "{} joints but {} validity flags",
                joints.len(),
                valid.len()
            )));
        }
        for (j, (p, &v)) in joints.iter().zip(&valid).enumerate() {
            if v && !(p.x.is_finite() && p.y.is_finite()) {
                return Err(GeomError::InvalidInput(format!("valid joint {j} is not finite")));
            }
        }
        Ok(Self { joints, space, valid })
    }

    /// All joints marked valid.
    pub fn all_valid(joints: Vec<Vector2<f64>>, space: Space) -> Result<Self> {
        let n = joints.len();
        Self::new(joints, space, vec![true; n])
    }

    pub fn joints(&self) -> &[Vector2<f64>] {
        &self.joints
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn with_valid(&self, valid: Vec<bool>) -> Result<Self> {
        Self::new(self.joints.clone(), self.space, valid)
    }
}
