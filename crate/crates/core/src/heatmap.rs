//! Volumetric heatmaps and soft-argmax decoding.
//!
//! Two conventions are supported. In *metric* mode all three axes span a
//! fixed metric extent (2.2 m by default), decoupled from the image. In
//! *2.5D* mode the X/Y axes are image axes of the crop (one bin per stride)
//! and only the depth axis is metric.
//!
//! Bin index `p` maps to coordinate `p · step`, so bin 0 sits at coordinate 0.
//! Values are stored joint-major, then x, y, z, row-major.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::pose::{Frame, Pose2D, Pose3D, Space};

/// Metric extent of the prediction volume along each axis.
pub const DEFAULT_EXTENT_MM: f64 = 2200.0;
/// Number of depth bins.
pub const DEFAULT_DEPTH_BINS: usize = 8;

const SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum HeatmapMode {
    Metric { extents_mm: [f64; 3] },
    Image25d { crop_px: [u32; 2], stride_px: u32, depth_mm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGeometry {
    bins: [usize; 3],
    mode: HeatmapMode,
}

impl HeatmapGeometry {
    pub fn metric(bins: [usize; 3], extents_mm: [f64; 3]) -> Result<Self> {
        Self::new(bins, HeatmapMode::Metric { extents_mm })
    }

    pub fn image25d(bins: [usize; 3], crop_px: [u32; 2], stride_px: u32, depth_mm: f64) -> Result<Self> {
        Self::new(bins, HeatmapMode::Image25d { crop_px, stride_px, depth_mm })
    }

    pub fn new(bins: [usize; 3], mode: HeatmapMode) -> Result<Self> {
        if bins.contains(&0) {
            return Err(GeomError::InvalidInput(format!("bin counts must be >= 1, got {bins:?}")));
        }
        match mode {
            HeatmapMode::Metric { extents_mm } => {
                if !extents_mm.iter().all(|e| e.is_finite() && *e > 0.0) {
                    return Err(GeomError::InvalidInput(format!(
                        "extents must be positive, got {extents_mm:?}"
                    )));
                }
            }
            HeatmapMode::Image25d { crop_px, stride_px, depth_mm } => {
                if stride_px == 0 || crop_px.iter().any(|&c| c == 0 || c % stride_px != 0) {
                    return Err(GeomError::InvalidInput(format!(
                        "crop {crop_px:?} must be a positive multiple of stride {stride_px}"
                    )));
                }
                if !(depth_mm.is_finite() && depth_mm > 0.0) {
                    return Err(GeomError::InvalidInput(format!("depth extent must be positive, got {depth_mm}")));
                }
            }
        }
        Ok(Self { bins, mode })
    }

    /// 256 px crop, stride 32, 2.2 m cube, 8 depth bins: 8×8×8 bins.
    pub fn default_metric() -> Self {
        Self::metric([8, 8, DEFAULT_DEPTH_BINS], [DEFAULT_EXTENT_MM; 3]).expect("valid geometry")
    }

    /// 2.5D counterpart of [`HeatmapGeometry::default_metric`].
    pub fn default_image25d() -> Self {
        Self::image25d([8, 8, DEFAULT_DEPTH_BINS], [256, 256], 32, DEFAULT_EXTENT_MM).expect("valid geometry")
    }

    pub fn bins(&self) -> [usize; 3] {
        self.bins
    }

    pub fn mode(&self) -> HeatmapMode {
        self.mode
    }

    pub fn is_metric(&self) -> bool {
        matches!(self.mode, HeatmapMode::Metric { .. })
    }

    pub fn bins_per_joint(&self) -> usize {
        self.bins.iter().product()
    }

    /// Coordinate increment per bin index along each axis.
    pub fn step(&self) -> Vector3<f64> {
        let [nx, ny, nz] = self.bins.map(|b| b as f64);
        match self.mode {
            HeatmapMode::Metric { extents_mm: [w, h, d] } => Vector3::new(w / nx, h / ny, d / nz),
            HeatmapMode::Image25d { stride_px, depth_mm, .. } => {
                let s = stride_px as f64;
                Vector3::new(s, s, depth_mm / nz)
            }
        }
    }

    /// Continuous bin coordinate of a point given in the volume's units.
    pub fn to_bin(&self, coord: &Vector3<f64>) -> Vector3<f64> {
        coord.component_div(&self.step())
    }

    pub fn from_bin(&self, bin: &Vector3<f64>) -> Vector3<f64> {
        bin.component_mul(&self.step())
    }

    /// Whether `coord` lies at least `margin_bins` inside the first and last
    /// bin centers along every axis.
    pub fn is_interior(&self, coord: &Vector3<f64>, margin_bins: f64) -> bool {
        let b = self.to_bin(coord);
        (0..3).all(|a| b[a] >= margin_bins && b[a] <= (self.bins[a] - 1) as f64 - margin_bins)
    }

    fn index(&self, joint: usize, p: usize, q: usize, r: usize) -> usize {
        let [nx, ny, nz] = self.bins;
        ((joint * nx + p) * ny + q) * nz + r
    }
}

/// Per-joint probability volumes, each summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapVolume {
    values: Vec<f64>,
    joints: usize,
    geometry: HeatmapGeometry,
}

impl HeatmapVolume {
    pub fn new(values: Vec<f64>, joints: usize, geometry: HeatmapGeometry) -> Result<Self> {
        let per = geometry.bins_per_joint();
        if joints == 0 || values.len() != joints * per {
            return Err(GeomError::InvalidInput(format!(
                "expected {joints} × {per} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(GeomError::InvalidInput(format!("value {i} is negative or not finite")));
        }
        for (j, chunk) in values.chunks(per).enumerate() {
            let s: f64 = chunk.iter().sum();
            if (s - 1.0).abs() > SUM_TOL {
                return Err(GeomError::InvalidInput(format!("joint {j} volume sums to {s}")));
            }
        }
        Ok(Self { values, joints, geometry })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn geometry(&self) -> &HeatmapGeometry {
        &self.geometry
    }

    pub fn joint_volume(&self, joint: usize) -> &[f64] {
        let per = self.geometry.bins_per_joint();
        &self.values[joint * per..(joint + 1) * per]
    }

    pub fn at(&self, joint: usize, p: usize, q: usize, r: usize) -> f64 {
        self.values[self.geometry.index(joint, p, q, r)]
    }

    /// Expected (p, q, r) bin index per joint.
    pub fn expected_bins(&self) -> Vec<Vector3<f64>> {
        let [nx, ny, nz] = self.geometry.bins;
        (0..self.joints)
            .map(|j| {
                let vol = self.joint_volume(j);
                let mut e = Vector3::zeros();
                let mut i = 0;
                for p in 0..nx {
                    for q in 0..ny {
                        for r in 0..nz {
                            let v = vol[i];
                            e += Vector3::new(p as f64, q as f64, r as f64) * v;
                            i += 1;
                        }
                    }
                }
                e
            })
            .collect()
    }

    /// Expected coordinate per joint in the volume's own units.
    pub fn soft_argmax(&self) -> Vec<Vector3<f64>> {
        self.expected_bins().iter().map(|b| self.geometry.from_bin(b)).collect()
    }
}

/// Softmax over each joint's volume, computed as `exp(x - max) / Σ exp`.
pub fn spatial_softmax(logits: &[f64], joints: usize, geometry: HeatmapGeometry) -> Result<HeatmapVolume> {
    let per = geometry.bins_per_joint();
    if joints == 0 || logits.len() != joints * per {
        return Err(GeomError::InvalidInput(format!(
            "expected {joints} × {per} logits, got {}",
            logits.len()
        )));
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(GeomError::InvalidInput(format!("logit {i} is not finite")));
    }
    let mut values = Vec::with_capacity(logits.len());
    for chunk in logits.chunks(per) {
        let max = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = values.len();
        values.extend(chunk.iter().map(|l| (l - max).exp()));
        let sum: f64 = values[start..].iter().sum();
        values[start..].iter_mut().for_each(|v| *v /= sum);
    }
    HeatmapVolume::new(values, joints, geometry)
}

/// Metric decoding. The result lives in volume coordinates (tagged absolute,
/// root at joint 0); translation is arbitrary until [`root_center`] is applied.
pub fn soft_argmax_metric(v: &HeatmapVolume) -> Result<Pose3D> {
    if !v.geometry.is_metric() {
        return Err(GeomError::Contract("soft_argmax_metric needs a metric volume".into()));
    }
    Pose3D::new(v.soft_argmax(), Frame::Absolute, 0)
}

/// 2.5D decoding: pixel coordinates over the crop plus relative depth in mm.
pub fn soft_argmax_25d(v: &HeatmapVolume) -> Result<(Pose2D, Vec<f64>)> {
    if v.geometry.is_metric() {
        return Err(GeomError::Contract("soft_argmax_25d needs an image25d volume".into()));
    }
    let coords = v.soft_argmax();
    let px = coords.iter().map(|c| Vector2::new(c.x, c.y)).collect();
    let depth = coords.iter().map(|c| c.z).collect();
    Ok((Pose2D::all_valid(px, Space::Pixel)?, depth))
}

/// Subtracts the root joint from every joint.
pub fn root_center(p: &Pose3D) -> Pose3D {
    let root = p.root();
    let joints = p.joints().iter().map(|j| j - root).collect();
    Pose3D::new(joints, Frame::RootRelative, p.root_index()).expect("root is exactly zero")
}

/// Isotropic Gaussian blobs in bin space, one per target, each normalized.
///
/// `targets` are in the geometry's units: mm for metric volumes,
/// `(px, px, mm)` for 2.5D volumes. A target must lie between the first and
/// last bin centers on every axis.
pub fn synthesize_gaussian_volume(
    targets: &[Vector3<f64>],
    geometry: HeatmapGeometry,
    sigma_bins: f64,
) -> Result<HeatmapVolume> {
    if !(sigma_bins.is_finite() && sigma_bins > 0.0) {
        return Err(GeomError::InvalidInput(format!("sigma must be positive, got {sigma_bins}")));
    }
    let [nx, ny, nz] = geometry.bins;
    let per = geometry.bins_per_joint();
    let mut values = Vec::with_capacity(targets.len() * per);
    let inv = 1.0 / (2.0 * sigma_bins * sigma_bins);
    for (j, t) in targets.iter().enumerate() {
        if !geometry.is_interior(t, 0.0) {
            return Err(GeomError::OutOfVolume { joint: j });
        }
        let c = geometry.to_bin(t);
        // separable: exp(-|b-c|²/2σ²) = gx·gy·gz
        let g = |n: usize, c: f64| -> Vec<f64> {
            (0..n).map(|i| (-(i as f64 - c).powi(2) * inv).exp()).collect()
        };
        let (gx, gy, gz) = (g(nx, c.x), g(ny, c.y), g(nz, c.z));
        let start = values.len();
        for a in &gx {
            for b in &gy {
                for d in &gz {
                    values.push(a * b * d);
                }
            }
        }
        let sum: f64 = values[start..].iter().sum();
        values[start..].iter_mut().for_each(|v| *v /= sum);
    }
    HeatmapVolume::new(values, targets.len(), geometry)
}
