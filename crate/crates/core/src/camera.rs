//! Pinhole camera model without skew or lens distortion.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::pose::{Pose2D, Pose3D, Space};

/// Gram-matrix tolerance for accepting a matrix as a rotation.
pub const ROTATION_TOL: f64 = 1e-9;

/// Focal lengths and principal point in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntrinsics", into = "RawIntrinsics")]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

#[derive(Serialize, Deserialize)]
struct RawIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

impl TryFrom<RawIntrinsics> for CameraIntrinsics {
    type Error = GeomError;

    fn try_from(r: RawIntrinsics) -> Result<Self> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy)
    }
}

impl From<CameraIntrinsics> for RawIntrinsics {
    fn from(k: CameraIntrinsics) -> Self {
        RawIntrinsics { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if ![fx, fy, cx, cy].iter().all(|v| v.is_finite()) {
            return Err(GeomError::InvalidInput("intrinsics must be finite".into()));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeomError::InvalidInput(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }

    pub fn fy(&self) -> f64 {
        self.fy
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel to normalized image coordinates, i.e. `K⁻¹ (x, y, 1)`.
    pub fn normalize(&self, px: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    pub fn denormalize(&self, n: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(n.x * self.fx + self.cx, n.y * self.fy + self.cy)
    }

    /// Unit-length viewing ray through a pixel.
    pub fn ray(&self, px: &Vector2<f64>) -> Vector3<f64> {
        let n = self.normalize(px);
        Vector3::new(n.x, n.y, 1.0).normalize()
    }
}

pub fn normalize_points(k: &CameraIntrinsics, p: &Pose2D) -> Result<Pose2D> {
    if p.space() != Space::Pixel {
        return Err(GeomError::Contract("normalize_points expects a pixel-space pose".into()));
    }
    let joints = p.joints().iter().map(|j| k.normalize(j)).collect();
    Pose2D::new(joints, Space::Normalized, p.valid().to_vec())
}

/// Perspective projection of an absolute pose into pixels.
pub fn project(k: &CameraIntrinsics, p: &Pose3D) -> Result<Pose2D> {
    let mut out = Vec::with_capacity(p.len());
    for (j, x) in p.joints().iter().enumerate() {
        if x.z <= 0.0 {
            return Err(GeomError::BehindCamera { joint: j, depth: x.z });
        }
        out.push(Vector2::new(k.fx * x.x / x.z + k.cx, k.fy * x.y / x.z + k.cy));
    }
    Pose2D::all_valid(out, Space::Pixel)
}

/// Rotation from the camera into a virtual camera looking through `crop_center`.
///
/// The third row is the unit ray through the crop center. Among all such
/// rotations this is the one whose axis is perpendicular to both the optical
/// axis and the ray (no roll about the new viewing direction).
pub fn crop_rotation(k: &CameraIntrinsics, crop_center: &Vector2<f64>) -> Matrix3<f64> {
    let ray = k.ray(crop_center);
    let axis = Vector3::z();
    // Rodrigues for the rotation taking `ray` onto `axis`; ray.z > 0 so c > 0.
    let v = ray.cross(&axis);
    let c = ray.dot(&axis);
    let vx = v.cross_matrix();
    Matrix3::identity() + vx + vx * vx / (1.0 + c)
}

pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let deviation = (r.transpose() * r - Matrix3::identity()).amax();
    if !deviation.is_finite() || deviation > ROTATION_TOL || r.determinant() < 0.0 {
        return Err(GeomError::InvalidRotation { deviation });
    }
    Ok(())
}

pub fn rotate_pose(r: &Matrix3<f64>, p: &Pose3D) -> Result<Pose3D> {
    check_rotation(r)?;
    p.map(|j| r * j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k(fx: f64, fy: f64, cx: f64, cy: f64) -> CameraIntrinsics {
        CameraIntrinsics::new(fx, fy, cx, cy).unwrap()
    }

    fn px(x: f64, y: f64) -> Pose2D {
        Pose2D::all_valid(vec![Vector2::new(x, y)], Space::Pixel).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_points(&k(1000.0, 1000.0, 128.0, 128.0), &px(128.0, 128.0)).unwrap();
        assert_eq!(n.joints()[0], Vector2::zeros());
        assert_eq!(n.space(), Space::Normalized);

        let n = normalize_points(&k(1.0, 1.0, 0.0, 0.0), &px(3.5, -2.0)).unwrap();
        assert_eq!(n.joints()[0], Vector2::new(3.5, -2.0));

        let n = normalize_points(&k(1000.0, 2000.0, 128.0, 96.0), &px(628.0, 296.0)).unwrap();
        assert_relative_eq!(n.joints()[0], Vector2::new(0.5, 0.1), epsilon = 1e-15);
    }

    #[test]
    fn normalize_rejects_normalized_input() {
        let p = Pose2D::all_valid(vec![Vector2::zeros()], Space::Normalized).unwrap();
        assert!(matches!(
            normalize_points(&k(1.0, 1.0, 0.0, 0.0), &p),
            Err(GeomError::Contract(_))
        ));
    }

    #[test]
    fn normalize_keeps_mask() {
        let p = Pose2D::new(
            vec![Vector2::new(1.0, 1.0), Vector2::new(2.0, 2.0)],
            Space::Pixel,
            vec![true, false],
        )
        .unwrap();
        let n = normalize_points(&k(1.0, 1.0, 0.0, 0.0), &p).unwrap();
        assert_eq!(n.valid(), &[true, false]);
    }

    #[test]
    fn project_examples() {
        let p = Pose3D::absolute(vec![Vector3::new(0.0, 0.0, 2000.0)], 0).unwrap();
        let q = project(&k(1000.0, 1000.0, 0.0, 0.0), &p).unwrap();
        assert_eq!(q.joints()[0], Vector2::zeros());

        let p = Pose3D::absolute(vec![Vector3::new(200.0, -100.0, 2000.0)], 0).unwrap();
        let q = project(&k(1000.0, 1000.0, 128.0, 128.0), &p).unwrap();
        assert_relative_eq!(q.joints()[0], Vector2::new(228.0, 78.0), epsilon = 1e-12);
    }

    #[test]
    fn project_behind_camera_names_joint() {
        let p = Pose3D::absolute(
            vec![Vector3::new(0.0, 0.0, 10.0), Vector3::new(0.0, 0.0, -1.0)],
            0,
        )
        .unwrap();
        let err = project(&k(1.0, 1.0, 0.0, 0.0), &p).unwrap_err();
        assert_eq!(err, GeomError::BehindCamera { joint: 1, depth: -1.0 });
    }

    #[test]
    fn crop_rotation_at_principal_point_is_identity() {
        let cam = k(1500.0, 1400.0, 960.0, 540.0);
        let r = crop_rotation(&cam, &Vector2::new(960.0, 540.0));
        assert!((r - Matrix3::identity()).amax() <= 1e-12);
    }

    #[test]
    fn crop_rotation_maps_ray_to_axis() {
        let cam = k(1500.0, 1400.0, 960.0, 540.0);
        for c in [Vector2::new(0.0, 0.0), Vector2::new(1900.0, 100.0), Vector2::new(300.0, 1000.0)] {
            let r = crop_rotation(&cam, &c);
            let ray = cam.ray(&c);
            assert!((r * ray - Vector3::z()).amax() <= 1e-12);
            assert!((r.transpose() * r - Matrix3::identity()).amax() <= 1e-12);
            assert!((r.determinant() - 1.0).abs() <= 1e-12);
            // third row is the ray itself
            assert!((r.row(2).transpose() - ray).amax() <= 1e-12);
            // minimal roll: the rotation axis has no z component
            let axis = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
            assert!(axis.z.abs() <= 1e-12);
        }
    }

    #[test]
    fn crop_center_ray_projects_to_principal_point() {
        let cam = k(1500.0, 1400.0, 960.0, 540.0);
        let c = Vector2::new(1700.0, 200.0);
        let r = crop_rotation(&cam, &c);
        let point = cam.ray(&c) * 3210.0;
        let p = Pose3D::absolute(vec![point], 0).unwrap();
        let q = project(&cam, &rotate_pose(&r, &p).unwrap()).unwrap();
        assert_relative_eq!(q.joints()[0], Vector2::new(960.0, 540.0), epsilon = 1e-9);
    }

    #[test]
    fn rotate_pose_round_trip_and_isometry() {
        let cam = k(1500.0, 1500.0, 500.0, 500.0);
        let r = crop_rotation(&cam, &Vector2::new(900.0, 120.0));
        let p = Pose3D::absolute(
            vec![Vector3::new(100.0, -300.0, 2500.0), Vector3::new(-450.0, 20.0, 3100.0)],
            0,
        )
        .unwrap();
        let rotated = rotate_pose(&r, &p).unwrap();
        for (a, b) in p.joints().iter().zip(rotated.joints()) {
            assert!((a.norm() - b.norm()).abs() <= 1e-9 * a.norm());
        }
        let back = rotate_pose(&r.transpose(), &rotated).unwrap();
        for (a, b) in p.joints().iter().zip(back.joints()) {
            assert!((a - b).amax() <= 1e-9);
        }
        assert_eq!(rotate_pose(&Matrix3::identity(), &p).unwrap(), p);
    }

    #[test]
    fn rotate_pose_rejects_non_rotation() {
        let p = Pose3D::absolute(vec![Vector3::new(1.0, 2.0, 3.0)], 0).unwrap();
        let s = Matrix3::identity() * 1.01;
        assert!(matches!(rotate_pose(&s, &p), Err(GeomError::InvalidRotation { .. })));
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(rotate_pose(&reflect, &p).is_err());
    }

    #[test]
    fn intrinsics_json_and_validation() {
        let c: CameraIntrinsics =
            serde_json::from_str(r#"{"fx":1000,"fy":1000,"cx":128,"cy":128}"#).unwrap();
        assert_eq!(c.fx(), 1000.0);
        assert!(serde_json::from_str::<CameraIntrinsics>(r#"{"fx":0,"fy":1,"cx":0,"cy":0}"#).is_err());
        assert!(CameraIntrinsics::new(1.0, f64::INFINITY, 0.0, 0.0).is_err());
    }
}
