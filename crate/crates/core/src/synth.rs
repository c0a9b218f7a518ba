//! Synthetic scenes with complete ground truth.
//!
//! Randomness comes from ChaCha8 seeded with a `u64`; scene `i` of a batch
//! uses stream `i`, so any scene can be regenerated independently of the
//! others. Gaussian draws use `rand_distr`'s standard normal sampler and
//! uniform unit directions are normalized 3D standard normal vectors.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::{normalize_points, project, CameraIntrinsics};
use crate::error::{GeomError, Result};
use crate::heatmap::DEFAULT_EXTENT_MM;
use crate::metrics::tree_parents;
use crate::pose::{Frame, Pose2D, Pose3D, Space};
use crate::reconstruction::{solve_root_full, solve_root_weak, ReconstructionInput};
use crate::scale_recovery::{BoneSpec, Pose25D};
use crate::skeleton;

pub const REJECTION_BUDGET: usize = 1000;
/// Minimum retained fraction of the person box area in truncated crops.
pub const MIN_CROP_AREA_FRACTION: f64 = 0.25;

pub type SceneRng = ChaCha8Rng;

/// Generator for scene `index` of a batch seeded with `seed`.
pub fn scene_rng(seed: u64, index: u64) -> SceneRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn unit_direction(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(gaussian(rng), gaussian(rng), gaussian(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Standard deviation added to normalized image coordinates.
    #[serde(default)]
    pub sigma_2d: f64,
    /// Standard deviation added to root-relative 3D coordinates (mm).
    #[serde(default)]
    pub sigma_3d_mm: f64,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel { sigma_2d: 0.0, sigma_3d_mm: 0.0 };
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::NONE
    }
}

fn default_persons() -> usize {
    500
}

fn default_depth_range() -> [f64; 2] {
    [2000.0, 8000.0]
}

fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(1500.0, 1500.0, 960.0, 540.0).expect("valid intrinsics")
}

fn default_lateral() -> f64 {
    0.3
}

/// Parameters of a batch of synthetic scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    /// Number of scenes (one person each).
    #[serde(default = "default_persons")]
    pub persons: usize,
    /// Range of the root depth Z0 in mm.
    #[serde(default = "default_depth_range")]
    pub depth_range_mm: [f64; 2],
    /// Skeleton; the bundled 17-joint skeleton when absent.
    #[serde(default)]
    pub bones: Option<BoneSpec>,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Mark joints outside a randomly truncated crop as invalid.
    #[serde(default)]
    pub truncation: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_camera")]
    pub camera: CameraIntrinsics,
    /// Root ray direction: normalized coordinates drawn from ±this value.
    #[serde(default = "default_lateral")]
    pub max_lateral: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            persons: default_persons(),
            depth_range_mm: default_depth_range(),
            bones: None,
            noise: NoiseModel::NONE,
            truncation: false,
            seed: 0,
            camera: default_camera(),
            max_lateral: default_lateral(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.depth_range_mm;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(GeomError::Config(format!("invalid depth range {:?}", self.depth_range_mm)));
        }
        if !(self.noise.sigma_2d >= 0.0 && self.noise.sigma_3d_mm >= 0.0) {
            return Err(GeomError::Config("noise standard deviations must be >= 0".into()));
        }
        if !(self.max_lateral >= 0.0 && self.max_lateral.is_finite()) {
            return Err(GeomError::Config("max_lateral must be >= 0".into()));
        }
        if let Some(b) = &self.bones {
            tree_parents(b.edges(), b.len() + 1, skeleton::PELVIS)?;
        }
        Ok(())
    }

    pub fn bones(&self) -> BoneSpec {
        self.bones.clone().unwrap_or_else(skeleton::default_bones)
    }

    /// Root offset with depth uniform in the range and a random lateral ray.
    pub fn sample_offset(&self, rng: &mut impl Rng) -> Vector3<f64> {
        let [lo, hi] = self.depth_range_mm;
        let z = lo + (hi - lo) * rng.random::<f64>();
        let mut lateral = || self.max_lateral * (2.0 * rng.random::<f64>() - 1.0);
        let (x, y) = (lateral(), lateral());
        Vector3::new(x * z, y * z, z)
    }
}

/// Random root-relative pose: every bone gets a uniformly random direction at
/// its target length, and the pose must fit in the 2.2 m prediction cube.
pub fn random_pose(bones: &BoneSpec, rng: &mut impl Rng) -> Result<Pose3D> {
    let joints = bones.len() + 1;
    let root = skeleton::PELVIS;
    let parent = tree_parents(bones.edges(), joints, root)?;
    // bone index for each child joint
    let mut bone_of = vec![usize::MAX; joints];
    for (i, &(a, b)) in bones.edges().iter().enumerate() {
        let child = if parent[b] == Some(a) { b } else { a };
        bone_of[child] = i;
    }
    let mut order = vec![root];
    let mut i = 0;
    while i < order.len() {
        let j = order[i];
        order.extend((0..joints).filter(|&k| parent[k] == Some(j)));
        i += 1;
    }
    for _ in 0..REJECTION_BUDGET {
        let mut pos = vec![Vector3::zeros(); joints];
        for &j in order.iter().skip(1) {
            let p = parent[j].expect("non-root");
            pos[j] = pos[p] + unit_direction(rng) * bones.target_lengths()[bone_of[j]];
        }
        let fits = (0..3).all(|a| {
            let (lo, hi) = pos.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[a]), hi.max(p[a])));
            hi - lo <= DEFAULT_EXTENT_MM
        });
        if fits {
            return Pose3D::new(pos, Frame::RootRelative, root);
        }
    }
    Err(GeomError::RejectionBudget(REJECTION_BUDGET))
}

/// Every channel of one synthetic observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    /// Observed (noisy) pixel coordinates.
    pub pixel: Pose2D,
    /// Observed (noisy) normalized coordinates.
    pub normalized: Pose2D,
    /// Observed 2.5D pose: noisy normalized coordinates and noisy relative depth.
    pub pose25d: Pose25D,
    /// Observed (noisy) root-relative 3D pose.
    pub rel3d: Pose3D,
    /// Ground-truth absolute pose.
    pub absolute: Pose3D,
    /// Ground-truth root offset.
    pub offset: Vector3<f64>,
}

/// Places a root-relative pose at `offset`, projects it exactly and adds noise.
pub fn place_and_project(
    pose: &Pose3D,
    k: &CameraIntrinsics,
    offset: Vector3<f64>,
    noise: NoiseModel,
    rng: &mut impl Rng,
) -> Result<SceneSample> {
    if pose.frame() != Frame::RootRelative {
        return Err(GeomError::Contract("place_and_project expects a root-relative pose".into()));
    }
    let absolute = pose.translated(&offset)?;
    let exact_px = project(k, &absolute)?;
    let exact = normalize_points(k, &exact_px)?;
    let noisy: Vec<Vector2<f64>> = exact
        .joints()
        .iter()
        .map(|p| p + Vector2::new(gaussian(rng), gaussian(rng)) * noise.sigma_2d)
        .collect();
    let normalized = Pose2D::all_valid(noisy, Space::Normalized)?;
    let pixel = Pose2D::all_valid(normalized.joints().iter().map(|n| k.denormalize(n)).collect(), Space::Pixel)?;
    let root = pose.root_index();
    let rel: Vec<Vector3<f64>> = pose
        .joints()
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let n = Vector3::new(gaussian(rng), gaussian(rng), gaussian(rng)) * noise.sigma_3d_mm;
            if j == root { *p } else { p + n }
        })
        .collect();
    let rel3d = Pose3D::new(rel, Frame::RootRelative, root)?;
    let depth = rel3d.joints().iter().map(|p| p.z).collect();
    let pose25d = Pose25D::new(normalized.clone(), depth, vec![true; pose.len()])?;
    Ok(SceneSample { pixel, normalized, pose25d, rel3d, absolute, offset })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Square {
    pub x: f64,
    pub y: f64,
    pub size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

impl Square {
    /// Smallest square centered on the bounding box of the points.
    pub fn around(points: &[Vector2<f64>]) -> Square {
        let (mut lo, mut hi) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let size = (hi - lo).max();
        let c = (lo + hi) / 2.0;
        Square { x: c.x - size / 2.0, y: c.y - size / 2.0, size }
    }

    pub fn rect(&self) -> Rect {
        Rect { x0: self.x, y0: self.y, x1: self.x + self.size, y1: self.y + self.size }
    }

    /// Sub-rectangle of this square that keeps at least a quarter of its area.
    pub fn admits(&self, r: &Rect) -> bool {
        let outer = self.rect();
        r.x0 >= outer.x0
            && r.y0 >= outer.y0
            && r.x1 <= outer.x1
            && r.y1 <= outer.y1
            && r.area() >= MIN_CROP_AREA_FRACTION * self.size * self.size
    }
}

/// Uniform sample among admissible sub-rectangles of `bbox` (by rejection
/// from uniformly drawn corner pairs).
pub fn truncated_crop(bbox: &Square, rng: &mut impl Rng) -> Result<Rect> {
    if !(bbox.size > 0.0 && bbox.size.is_finite()) {
        return Err(GeomError::InvalidInput(format!("box size must be positive, got {}", bbox.size)));
    }
    for _ in 0..REJECTION_BUDGET {
        let mut coord = |o: f64| {
            let (a, b) = (o + bbox.size * rng.random::<f64>(), o + bbox.size * rng.random::<f64>());
            (a.min(b), a.max(b))
        };
        let (x0, x1) = coord(bbox.x);
        let (y0, y1) = coord(bbox.y);
        let r = Rect { x0, y0, x1, y1 };
        if bbox.admits(&r) {
            return Ok(r);
        }
    }
    Err(GeomError::RejectionBudget(REJECTION_BUDGET))
}

/// Generates scene `index` of `spec`.
pub fn generate_scene(spec: &SceneSpec, index: u64) -> Result<SceneSample> {
    let mut rng = scene_rng(spec.seed, index);
    let pose = random_pose(&spec.bones(), &mut rng)?;
    let offset = spec.sample_offset(&mut rng);
    let mut sample = place_and_project(&pose, &spec.camera, offset, spec.noise, &mut rng)?;
    if spec.truncation {
        let crop = truncated_crop(&Square::around(sample.pixel.joints()), &mut rng)?;
        let valid: Vec<bool> = sample.pixel.joints().iter().map(|p| crop.contains(p)).collect();
        sample.pixel = sample.pixel.with_valid(valid.clone())?;
        sample.normalized = sample.normalized.with_valid(valid.clone())?;
        sample.pose25d = Pose25D::new(sample.normalized.clone(), sample.pose25d.rel_depth().to_vec(), valid)?;
    }
    Ok(sample)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Weak,
    Full,
}

impl Solver {
    pub fn name(&self) -> &'static str {
        match self {
            Solver::Weak => "weak",
            Solver::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub solver: Solver,
    pub noise_sigma: f64,
    pub mean_z0_error_mm: f64,
    pub median_z0_error_mm: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Rescales the depth coordinates of a root-relative pose so that, placed at
/// root depth `z0`, its farthest-to-closest joint depth ratio equals `ratio`.
/// Ratio 1 flattens the pose onto the root's depth plane.
pub fn stretch_to_depth_ratio(pose: &Pose3D, z0: f64, ratio: f64) -> Result<Pose3D> {
    if !(ratio >= 1.0) {
        return Err(GeomError::InvalidInput(format!("depth ratio must be >= 1, got {ratio}")));
    }
    let (lo, hi) = pose.joints().iter().fold((0.0f64, 0.0f64), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    let denom = hi - ratio * lo;
    if ratio > 1.0 && !(denom > 0.0) {
        return Err(GeomError::DegenerateGeometry("pose has no depth extent to stretch".into()));
    }
    let k = if ratio == 1.0 { 0.0 } else { (ratio - 1.0) * z0 / denom };
    let stretched = pose.map(|p| Vector3::new(p.x, p.y, p.z * k))?;
    if stretched.joints().iter().any(|p| p.z + z0 <= 0.0) {
        return Err(GeomError::DegenerateGeometry(format!("ratio {ratio} puts joints behind the camera")));
    }
    Ok(stretched)
}

/// Weak- and full-perspective root-depth errors against the depth ratio.
///
/// Scene `i` uses the same pose, root ray and depth for every ratio; only the
/// depth extent of the pose is rescaled (see [`stretch_to_depth_ratio`]).
/// `noise_sigma` is added to the normalized image coordinates.
pub fn depth_ratio_sweep(spec: &SceneSpec, ratios: &[f64], noise_sigma: f64) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let bones = spec.bones();
    let mut errors = vec![(Vec::new(), Vec::new()); ratios.len()];
    for i in 0..spec.persons as u64 {
        let mut rng = scene_rng(spec.seed, i);
        let pose = random_pose(&bones, &mut rng)?;
        let offset = spec.sample_offset(&mut rng);
        for (r, &ratio) in ratios.iter().enumerate() {
            let mut noise_rng = scene_rng(spec.seed ^ 0x5eed_0000_0000_0000, i * ratios.len() as u64 + r as u64);
            let stretched = stretch_to_depth_ratio(&pose, offset.z, ratio)?;
            let noise = NoiseModel { sigma_2d: noise_sigma, sigma_3d_mm: 0.0 };
            let s = place_and_project(&stretched, &spec.camera, offset, noise, &mut noise_rng)?;
            let input = ReconstructionInput::new(&s.normalized, &s.rel3d, &vec![true; s.rel3d.len()])?;
            errors[r].0.push((solve_root_weak(&input)?.offset.z - offset.z).abs());
            errors[r].1.push((solve_root_full(&input)?.offset.z - offset.z).abs());
        }
    }
    let mut rows = Vec::with_capacity(2 * ratios.len());
    for (r, &ratio) in ratios.iter().enumerate() {
        for (solver, e) in [(Solver::Weak, &errors[r].0), (Solver::Full, &errors[r].1)] {
            rows.push(SweepRow {
                ratio,
                solver,
                noise_sigma,
                mean_z0_error_mm: e.iter().sum::<f64>() / e.len() as f64,
                median_z0_error_mm: median(e),
            });
        }
    }
    Ok(rows)
}
