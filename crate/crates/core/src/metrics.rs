//! Evaluation measures and the pose transforms used by evaluation protocols.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::heatmap::root_center;
use crate::pose::{Frame, Pose2D, Pose3D};
use crate::skeleton::{self, JointSubset};

pub const DEFAULT_PCK_THRESHOLD_MM: f64 = 150.0;
pub const DEFAULT_AUC_MAX_MM: f64 = 150.0;
/// Spacing of the thresholds sampled for AUC.
pub const AUC_STEP_MM: f64 = 5.0;
/// Fraction of the pelvis-to-neck vector by which hips are moved.
pub const HIP_SHIFT: f64 = 0.2;

fn check_pair(pred: &Pose3D, gt: &Pose3D) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(GeomError::InvalidInput(format!(
            "prediction has {} joints, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Euclidean error per joint.
pub fn joint_errors(pred: &Pose3D, gt: &Pose3D, root_align: bool) -> Result<Vec<f64>> {
    check_pair(pred, gt)?;
    let (dp, dg) = if root_align { (pred.root(), gt.root()) } else { (Vector3::zeros(), Vector3::zeros()) };
    Ok(pred.joints().iter().zip(gt.joints()).map(|(p, g)| ((p - dp) - (g - dg)).norm()).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn mpjpe(pred: &Pose3D, gt: &Pose3D, root_align: bool) -> Result<f64> {
    Ok(mean(&joint_errors(pred, gt, root_align)?))
}

/// Rotation, uniform scale and translation applied as `s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x * self.scale + self.translation
    }
}

/// Least-squares similarity transform taking `pred` onto `gt` (Umeyama).
pub fn procrustes_transform(pred: &Pose3D, gt: &Pose3D) -> Result<SimilarityTransform> {
    check_pair(pred, gt)?;
    let n = pred.len() as f64;
    let mp = pred.joints().iter().sum::<Vector3<f64>>() / n;
    let mg = gt.joints().iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.joints().iter().zip(gt.joints()) {
        let (pc, gc) = (p - mp, g - mg);
        cov += gc * pc.transpose();
        scatter += pc * pc.transpose();
        var_p += pc.norm_squared();
    }
    let mut eig: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    if pred.len() < 3 || !(eig[1] > 1e-12 * eig[0]) {
        return Err(GeomError::DegenerateGeometry("Procrustes needs at least 3 non-collinear joints".into()));
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * vt;
    let scale = (Matrix3::from_diagonal(&svd.singular_values) * d).trace() / var_p;
    Ok(SimilarityTransform { rotation, scale, translation: mg - rotation * mp * scale })
}

pub fn procrustes_align(pred: &Pose3D, gt: &Pose3D) -> Result<Pose3D> {
    let t = procrustes_transform(pred, gt)?;
    Pose3D::new(pred.joints().iter().map(|p| t.apply(p)).collect(), Frame::Absolute, pred.root_index())
}

pub fn pa_mpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    mpjpe(&procrustes_align(pred, gt)?, gt, false)
}

/// Fraction of errors at or below `threshold`.
pub fn pck_from_errors(errors: &[f64], threshold: f64) -> f64 {
    errors.iter().filter(|&&e| e <= threshold).count() as f64 / errors.len() as f64
}

/// Mean PCK over thresholds `0, 5, …, max_threshold` mm.
pub fn auc_from_errors(errors: &[f64], max_threshold: f64) -> f64 {
    let thresholds = auc_thresholds(max_threshold);
    thresholds.iter().map(|&t| pck_from_errors(errors, t)).sum::<f64>() / thresholds.len() as f64
}

pub fn auc_thresholds(max_threshold: f64) -> Vec<f64> {
    let n = (max_threshold / AUC_STEP_MM).floor() as usize;
    (0..=n).map(|i| i as f64 * AUC_STEP_MM).collect()
}

/// PCK on raw coordinates; root-align the poses first for relative PCK.
pub fn pck(pred: &Pose3D, gt: &Pose3D, threshold: f64) -> Result<f64> {
    Ok(pck_from_errors(&joint_errors(pred, gt, false)?, threshold))
}

pub fn auc(pred: &Pose3D, gt: &Pose3D, max_threshold: f64) -> Result<f64> {
    Ok(auc_from_errors(&joint_errors(pred, gt, false)?, max_threshold))
}

/// Parent of every joint when the edges are walked outward from `root`.
pub fn tree_parents(edges: &[(usize, usize)], joints: usize, root: usize) -> Result<Vec<Option<usize>>> {
    let not_tree = |reason: String| GeomError::NotATree { root, reason };
    if root >= joints {
        return Err(not_tree(format!("root out of range for {joints} joints")));
    }
    if edges.len() + 1 != joints {
        return Err(not_tree(format!("{} edges for {joints} joints", edges.len())));
    }
    let mut adj = vec![Vec::new(); joints];
    for &(a, b) in edges {
        if a >= joints || b >= joints || a == b {
            return Err(not_tree(format!("invalid edge ({a}, {b})")));
        }
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut parent = vec![None; joints];
    let mut seen = vec![false; joints];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(j) = queue.pop_front() {
        for &k in &adj[j] {
            if !seen[k] {
                seen[k] = true;
                parent[k] = Some(j);
                queue.push_back(k);
            }
        }
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(not_tree(format!("joint {j} is not connected")));
    }
    Ok(parent)
}

/// Rescales every predicted bone to the ground-truth length, walking outward
/// from `root`. Bone directions and the root position are kept.
pub fn bone_rescale(pred: &Pose3D, gt: &Pose3D, edges: &[(usize, usize)], root: usize) -> Result<Pose3D> {
    check_pair(pred, gt)?;
    let parent = tree_parents(edges, pred.len(), root)?;
    let order = bfs_order(&parent, root);
    let (p, g) = (pred.joints(), gt.joints());
    let mut out = p.to_vec();
    for &j in order.iter().skip(1) {
        let par = parent[j].expect("non-root joints have parents");
        let bone = p[j] - p[par];
        let target = (g[j] - g[par]).norm();
        let len = bone.norm();
        // zero-length predicted bones take the ground-truth direction
        let dir = if len > 0.0 { bone / len } else { (g[j] - g[par]).normalize() };
        let dir = if dir.iter().all(|c| c.is_finite()) { dir } else { Vector3::zeros() };
        out[j] = out[par] + dir * target;
    }
    Pose3D::new(out, pred.frame(), pred.root_index())
}

fn bfs_order(parent: &[Option<usize>], root: usize) -> Vec<usize> {
    let mut children = vec![Vec::new(); parent.len()];
    for (j, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(j);
        }
    }
    let mut order = vec![root];
    let mut i = 0;
    while i < order.len() {
        order.extend(children[order[i]].iter().copied());
        i += 1;
    }
    order
}

/// Moves each hip by a fifth of the pelvis-to-neck vector.
pub fn hip_adjust(p: &Pose3D, hips: &[usize], pelvis: usize, neck: usize) -> Result<Pose3D> {
    let n = p.len();
    if hips.iter().chain([&pelvis, &neck]).any(|&i| i >= n) {
        return Err(GeomError::InvalidInput(format!("joint index out of range for {n} joints")));
    }
    let shift = (p.joints()[neck] - p.joints()[pelvis]) * HIP_SHIFT;
    let mut joints = p.joints().to_vec();
    for &h in hips {
        joints[h] += shift;
    }
    // a hip may be the root of a root-relative pose; the result is then absolute
    let frame = if hips.contains(&p.root_index()) && shift != Vector3::zeros() { Frame::Absolute } else { p.frame() };
    Pose3D::new(joints, frame, p.root_index())
}

/// Reindexes a pose to a subset of its joints.
///
/// If the root is dropped the result keeps its coordinates and is tagged
/// absolute with the first selected joint as root; root alignment has to
/// happen before selection in that case.
pub fn select_joints_3d(p: &Pose3D, indices: &[usize]) -> Result<Pose3D> {
    check_indices(p.len(), indices)?;
    let joints = indices.iter().map(|&i| p.joints()[i]).collect();
    match indices.iter().position(|&i| i == p.root_index()) {
        Some(root) => Pose3D::new(joints, p.frame(), root),
        None => Pose3D::new(joints, Frame::Absolute, 0),
    }
}

pub fn select_joints_2d(p: &Pose2D, indices: &[usize]) -> Result<Pose2D> {
    check_indices(p.len(), indices)?;
    let joints: Vec<Vector2<f64>> = indices.iter().map(|&i| p.joints()[i]).collect();
    Pose2D::new(joints, p.space(), indices.iter().map(|&i| p.valid()[i]).collect())
}

fn check_indices(n: usize, indices: &[usize]) -> Result<()> {
    if indices.is_empty() || indices.iter().any(|&i| i >= n) {
        return Err(GeomError::InvalidInput(format!("subset {indices:?} invalid for {n} joints")));
    }
    Ok(())
}

pub fn select_subset(p: &Pose3D, subset: JointSubset) -> Result<Pose3D> {
    if p.len() != skeleton::JOINT_COUNT {
        return Err(GeomError::InvalidInput(format!(
            "named subsets need {}-joint poses, got {}",
            skeleton::JOINT_COUNT,
            p.len()
        )));
    }
    select_joints_3d(p, subset.indices())
}

fn default_threshold() -> f64 {
    DEFAULT_PCK_THRESHOLD_MM
}

fn default_auc_max() -> f64 {
    DEFAULT_AUC_MAX_MM
}

fn default_subset() -> JointSubset {
    JointSubset::All17
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocol {
    #[serde(default = "default_true")]
    pub root_align: bool,
    #[serde(default)]
    pub procrustes: bool,
    #[serde(default = "default_threshold")]
    pub pck_threshold: f64,
    #[serde(default = "default_auc_max")]
    pub auc_max: f64,
    #[serde(default = "default_subset")]
    pub joint_subset: JointSubset,
    #[serde(default)]
    pub bone_rescale: bool,
    /// Edges used for bone rescaling; the default skeleton when absent.
    #[serde(default)]
    pub bone_edges: Option<Vec<[usize; 2]>>,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            root_align: true,
            procrustes: false,
            pck_threshold: DEFAULT_PCK_THRESHOLD_MM,
            auc_max: DEFAULT_AUC_MAX_MM,
            joint_subset: JointSubset::All17,
            bone_rescale: false,
            bone_edges: None,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if !(self.pck_threshold > 0.0 && self.auc_max > 0.0) {
            return Err(GeomError::Config("thresholds must be positive".into()));
        }
        Ok(())
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        match &self.bone_edges {
            Some(e) => e.iter().map(|e| (e[0], e[1])).collect(),
            None => skeleton::default_bones().edges().to_vec(),
        }
    }
}

/// Per-joint error lists for one frame, under each protocol variant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameErrors {
    pub relative: Vec<f64>,
    pub procrustes: Option<Vec<f64>>,
    pub absolute: Vec<f64>,
}

pub fn frame_errors(pred: &Pose3D, gt: &Pose3D, protocol: &EvalProtocol) -> Result<FrameErrors> {
    check_pair(pred, gt)?;
    let pred = if protocol.bone_rescale {
        bone_rescale(pred, gt, &protocol.edges(), pred.root_index())?
    } else {
        pred.clone()
    };
    let (rp, rg) = if protocol.root_align { (root_center(&pred), root_center(gt)) } else { (pred.clone(), gt.clone()) };
    let subset = |p: &Pose3D| select_subset(p, protocol.joint_subset);
    let relative = joint_errors(&subset(&rp)?, &subset(&rg)?, false)?;
    let procrustes = if protocol.procrustes {
        let (sp, sg) = (subset(&pred)?, subset(gt)?);
        Some(joint_errors(&procrustes_align(&sp, &sg)?, &sg, false)?)
    } else {
        None
    };
    let absolute = joint_errors(&subset(&pred)?, &subset(gt)?, false)?;
    Ok(FrameErrors { relative, procrustes, absolute })
}

/// Metrics pooled over all joints of all frames of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceMetrics {
    pub frames: usize,
    pub joints: usize,
    pub mpjpe: f64,
    pub pa_mpjpe: Option<f64>,
    pub pck: f64,
    pub auc: f64,
    pub abs_mpjpe: f64,
    pub abs_pck: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ErrorPool {
    frames: usize,
    relative: Vec<f64>,
    procrustes: Option<Vec<f64>>,
    absolute: Vec<f64>,
}

impl ErrorPool {
    pub fn push(&mut self, e: FrameErrors) {
        self.frames += 1;
        self.relative.extend(e.relative);
        self.absolute.extend(e.absolute);
        if let Some(p) = e.procrustes {
            self.procrustes.get_or_insert_with(Vec::new).extend(p);
        }
    }

    pub fn merge(&mut self, other: &ErrorPool) {
        self.frames += other.frames;
        self.relative.extend(&other.relative);
        self.absolute.extend(&other.absolute);
        if let Some(p) = &other.procrustes {
            self.procrustes.get_or_insert_with(Vec::new).extend(p);
        }
    }

    pub fn summarize(&self, protocol: &EvalProtocol) -> Result<SequenceMetrics> {
        if self.relative.is_empty() {
            return Err(GeomError::InvalidInput("no frames to evaluate".into()));
        }
        Ok(SequenceMetrics {
            frames: self.frames,
            joints: self.relative.len(),
            mpjpe: mean(&self.relative),
            pa_mpjpe: self.procrustes.as_deref().map(mean),
            pck: pck_from_errors(&self.relative, protocol.pck_threshold),
            auc: auc_from_errors(&self.relative, protocol.auc_max),
            abs_mpjpe: mean(&self.absolute),
            abs_pck: pck_from_errors(&self.absolute, protocol.pck_threshold),
        })
    }
}

pub fn evaluate_sequence(preds: &[Pose3D], gts: &[Pose3D], protocol: &EvalProtocol) -> Result<ErrorPool> {
    protocol.validate()?;
    if preds.len() != gts.len() {
        return Err(GeomError::InvalidInput(format!(
            "{} predicted frames but {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    let mut pool = ErrorPool::default();
    for (p, g) in preds.iter().zip(gts) {
        pool.push(frame_errors(p, g, protocol)?);
    }
    Ok(pool)
}
