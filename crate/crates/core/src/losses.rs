//! Training losses with analytic gradients.
//!
//! L1 losses are means of absolute coordinate differences. The 2D loss for
//! metric-scale predictions first drops Z, then fits a uniform scale and a
//! translation to the pixel ground truth in closed form, and differentiates
//! through that fit.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::pose::{Pose2D, Pose3D, Space};

/// Weight of losses computed on 2D-annotated examples.
pub const DEFAULT_LAMBDA_2D: f64 = 0.1;
/// Update steps before the absolute-pose loss is switched on.
pub const DEFAULT_ABSOLUTE_WARMUP_STEPS: u64 = 5000;

/// Mean absolute difference over coordinates with `valid` set.
///
/// Returns the loss and its (sub)gradient with respect to `pred`; the
/// gradient is zero at exact ties and for invalid coordinates.
pub fn l1_loss(pred: &[f64], gt: &[f64], valid: &[bool]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != gt.len() || pred.len() != valid.len() {
        return Err(GeomError::InvalidInput("l1 loss operands differ in length".into()));
    }
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return Err(GeomError::InvalidInput("l1 loss over an empty valid set".into()));
    }
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .zip(valid)
        .map(|((p, g), &v)| {
            if !v {
                return 0.0;
            }
            let d = p - g;
            loss += d.abs();
            if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss * inv, grad))
}

pub fn l1_pose_loss_3d(pred: &Pose3D, gt: &Pose3D) -> Result<(f64, Vec<Vector3<f64>>)> {
    if pred.len() != gt.len() {
        return Err(GeomError::InvalidInput("joint counts differ".into()));
    }
    let flat = |p: &Pose3D| p.joints().iter().flat_map(|j| [j.x, j.y, j.z]).collect::<Vec<_>>();
    let (loss, g) = l1_loss(&flat(pred), &flat(gt), &vec![true; 3 * pred.len()])?;
    Ok((loss, g.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()))
}

/// Uses the ground-truth validity mask.
pub fn l1_pose_loss_2d(pred: &Pose2D, gt: &Pose2D) -> Result<(f64, Vec<Vector2<f64>>)> {
    if pred.len() != gt.len() {
        return Err(GeomError::InvalidInput("joint counts differ".into()));
    }
    let flat = |p: &Pose2D| {
        p.joints()
            .iter()
            .zip(p.valid())
            .flat_map(|(j, &v)| if v { [j.x, j.y] } else { [0.0, 0.0] })
            .collect::<Vec<_>>()
    };
    let valid: Vec<bool> = gt.valid().iter().flat_map(|&v| [v, v]).collect();
    let (loss, g) = l1_loss(&flat(pred), &flat(gt), &valid)?;
    Ok((loss, g.chunks(2).map(|c| Vector2::new(c[0], c[1])).collect()))
}

/// Drops Z. The result is tagged as pixel space so it can be aligned to
/// pixel ground truth; its scale is still metric.
pub fn ortho_project(p: &Pose3D) -> Pose2D {
    let joints = p.joints().iter().map(|j| Vector2::new(j.x, j.y)).collect();
    Pose2D::all_valid(joints, Space::Pixel).expect("pose coordinates are finite")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Similarity2D {
    pub scale: f64,
    pub translation: Vector2<f64>,
    /// The optimal scale is negative, i.e. the prediction is mirrored.
    pub mirrored: bool,
}

impl Similarity2D {
    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        p * self.scale + self.translation
    }
}

struct Centered {
    used: Vec<usize>,
    pred_mean: Vector2<f64>,
    gt_mean: Vector2<f64>,
    pred_c: Vec<Vector2<f64>>,
    gt_c: Vec<Vector2<f64>>,
    pred_sq: f64,
}

fn center(pred: &[Vector2<f64>], gt: &Pose2D, pred_valid: &[bool]) -> Result<Centered> {
    if pred.len() != gt.len() {
        return Err(GeomError::InvalidInput("joint counts differ".into()));
    }
    let used: Vec<usize> = (0..gt.len()).filter(|&j| gt.valid()[j] && pred_valid[j]).collect();
    if used.len() < 2 {
        return Err(GeomError::Underdetermined { used: used.len(), required: 2 });
    }
    let n = used.len() as f64;
    let pred_mean = used.iter().map(|&j| pred[j]).sum::<Vector2<f64>>() / n;
    let gt_mean = used.iter().map(|&j| gt.joints()[j]).sum::<Vector2<f64>>() / n;
    let pred_c: Vec<_> = used.iter().map(|&j| pred[j] - pred_mean).collect();
    let gt_c: Vec<_> = used.iter().map(|&j| gt.joints()[j] - gt_mean).collect();
    let pred_sq: f64 = pred_c.iter().map(|p| p.norm_squared()).sum();
    let spread: f64 = pred_c.iter().map(|p| p.norm()).fold(0.0, f64::max);
    if !(pred_sq > 0.0) || spread <= 1e-12 * pred_mean.norm().max(1.0) {
        return Err(GeomError::DegenerateGeometry("all predicted joints coincide".into()));
    }
    Ok(Centered { used, pred_mean, gt_mean, pred_c, gt_c, pred_sq })
}

/// Least-squares scale and translation mapping `pred` onto `gt`.
///
/// Joints invalid in either pose are ignored.
pub fn align_similarity_2d(pred: &Pose2D, gt: &Pose2D) -> Result<(Similarity2D, Pose2D)> {
    if gt.space() != Space::Pixel {
        return Err(GeomError::Contract("alignment target must be in pixels".into()));
    }
    let c = center(pred.joints(), gt, pred.valid())?;
    let dot: f64 = c.pred_c.iter().zip(&c.gt_c).map(|(p, g)| p.dot(g)).sum();
    let scale = dot / c.pred_sq;
    let sim = Similarity2D { scale, translation: c.gt_mean - c.pred_mean * scale, mirrored: scale < 0.0 };
    let aligned = pred.joints().iter().map(|p| sim.apply(p)).collect();
    Ok((sim, Pose2D::new(aligned, Space::Pixel, pred.valid().to_vec())?))
}

/// Scale- and translation-invariant 2D loss of a metric 3D prediction.
///
/// The gradient accounts for the dependence of the fitted scale and
/// translation on the prediction. Z components of the gradient are zero.
pub fn agnostic_2d_loss(pred3d: &Pose3D, gt2d: &Pose2D) -> Result<(f64, Vec<Vector3<f64>>)> {
    if gt2d.space() != Space::Pixel {
        return Err(GeomError::Contract("2D ground truth must be in pixels".into()));
    }
    let xy: Vec<Vector2<f64>> = pred3d.joints().iter().map(|j| Vector2::new(j.x, j.y)).collect();
    let c = center(&xy, gt2d, &vec![true; xy.len()])?;
    let dot: f64 = c.pred_c.iter().zip(&c.gt_c).map(|(p, g)| p.dot(g)).sum();
    let s = dot / c.pred_sq;

    // aligned_j = s·P_j + mean(gt), compared to gt_j = G_j + mean(gt)
    let n = c.used.len();
    let inv = 1.0 / (2 * n) as f64;
    let sign = |d: f64| if d > 0.0 { inv } else if d < 0.0 { -inv } else { 0.0 };
    let mut loss = 0.0;
    let mut w = Vec::with_capacity(n);
    for (p, g) in c.pred_c.iter().zip(&c.gt_c) {
        let d = p * s - g;
        loss += d.x.abs() + d.y.abs();
        w.push(Vector2::new(sign(d.x), sign(d.y)));
    }
    loss *= inv;

    // dL/dp_k = s (w_k - mean w) + (Σ_j w_j·P_j) (G_k - 2 s P_k) / ‖P‖²
    let w_mean = w.iter().sum::<Vector2<f64>>() / n as f64;
    let wp: f64 = w.iter().zip(&c.pred_c).map(|(a, b)| a.dot(b)).sum();
    let mut grad = vec![Vector3::zeros(); pred3d.len()];
    for (k, &j) in c.used.iter().enumerate() {
        let g = (w[k] - w_mean) * s + (c.gt_c[k] - c.pred_c[k] * (2.0 * s)) * (wp / c.pred_sq);
        grad[j] = Vector3::new(g.x, g.y, 0.0);
    }
    Ok((loss, grad))
}

/// Which loss terms take part in the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnabledTerms {
    /// Losses on 2D-annotated examples.
    pub ann2d: bool,
    /// The loss on the reconstructed absolute pose.
    pub absolute: bool,
}

impl Default for EnabledTerms {
    fn default() -> Self {
        Self { ann2d: true, absolute: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_2d: f64,
    pub absolute_loss_warmup_steps: u64,
    #[serde(default)]
    pub enabled: EnabledTerms,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_2d: DEFAULT_LAMBDA_2D,
            absolute_loss_warmup_steps: DEFAULT_ABSOLUTE_WARMUP_STEPS,
            enabled: EnabledTerms::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_2d.is_finite() && self.lambda_2d >= 0.0) {
            return Err(GeomError::Config(format!("lambda_2d must be >= 0, got {}", self.lambda_2d)));
        }
        Ok(())
    }
}

/// Already-evaluated loss terms of one training step.
///
/// `ann3d` terms come from 3D-annotated examples, `ann2d` terms from
/// 2D-annotated ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum LossTerms {
    /// Single metric 3D head.
    Metro { ann3d: Option<f64>, ann2d: Option<f64> },
    /// Metric 3D head, 2D head and the reconstructed absolute pose.
    Metrabs {
        abs3d_ann3d: Option<f64>,
        head3d_ann3d: Option<f64>,
        head2d_ann3d: Option<f64>,
        head2d_ann2d: Option<f64>,
        head3d_ann2d: Option<f64>,
    },
}

fn require(term: Option<f64>, name: &str) -> Result<f64> {
    term.ok_or_else(|| GeomError::Config(format!("missing loss term {name}")))
}

pub fn composite_loss(terms: &LossTerms, cfg: &LossConfig, step: u64) -> Result<f64> {
    cfg.validate()?;
    let lambda = cfg.lambda_2d;
    match *terms {
        LossTerms::Metro { ann3d, ann2d } => {
            let mut loss = require(ann3d, "ann3d")?;
            if cfg.enabled.ann2d {
                loss += lambda * require(ann2d, "ann2d")?;
            }
            Ok(loss)
        }
        LossTerms::Metrabs { abs3d_ann3d, head3d_ann3d, head2d_ann3d, head2d_ann2d, head3d_ann2d } => {
            let mut loss = require(head3d_ann3d, "head3d_ann3d")? + require(head2d_ann3d, "head2d_ann3d")?;
            if cfg.enabled.absolute {
                let abs = require(abs3d_ann3d, "abs3d_ann3d")?;
                if step >= cfg.absolute_loss_warmup_steps {
                    loss += abs;
                }
            }
            if cfg.enabled.ann2d {
                loss += lambda * (require(head2d_ann2d, "head2d_ann2d")? + require(head3d_ann2d, "head3d_ann2d")?);
            }
            Ok(loss)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p2(pts: &[(f64, f64)]) -> Pose2D {
        Pose2D::all_valid(pts.iter().map(|&(x, y)| Vector2::new(x, y)).collect(), Space::Pixel).unwrap()
    }

    #[test]
    fn l1_examples() {
        let gt = Pose3D::absolute((0..17).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 100.0)).collect(), 0).unwrap();
        assert_eq!(l1_pose_loss_3d(&gt, &gt).unwrap().0, 0.0);
        let shifted = gt.translated(&Vector3::new(1.0, 1.0, 1.0)).unwrap();
        let (loss, grad) = l1_pose_loss_3d(&shifted, &gt).unwrap();
        assert_relative_eq!(loss, 1.0, epsilon = 1e-12);
        assert!(grad.iter().all(|g| (g - Vector3::repeat(1.0 / 51.0)).norm() < 1e-15));
        // ties give a zero subgradient
        assert!(l1_pose_loss_3d(&gt, &gt).unwrap().1.iter().all(|g| *g == Vector3::zeros()));
    }

    #[test]
    fn l1_2d_respects_gt_mask() {
        let pred = p2(&[(0.0, 0.0), (10.0, 10.0)]);
        let gt = p2(&[(1.0, 0.0), (0.0, 0.0)]).with_valid(vec![true, false]).unwrap();
        let (loss, grad) = l1_pose_loss_2d(&pred, &gt).unwrap();
        assert_relative_eq!(loss, 0.5);
        assert_eq!(grad[1], Vector2::zeros());
        let none = gt.with_valid(vec![false, false]).unwrap();
        assert!(l1_pose_loss_2d(&pred, &none).is_err());
    }

    #[test]
    fn ortho_projection_drops_z() {
        let p = Pose3D::absolute(vec![Vector3::new(1.0, 2.0, 3.0)], 0).unwrap();
        assert_eq!(ortho_project(&p).joints()[0], Vector2::new(1.0, 2.0));
    }

    #[test]
    fn alignment_exact_similarity() {
        let pred = p2(&[(0.0, 0.0), (1.0, 0.0), (0.0, 3.0), (-2.0, 1.0)]);
        let gt = p2(&pred.joints().iter().map(|p| (2.0 * p.x + 5.0, 2.0 * p.y + 7.0)).collect::<Vec<_>>());
        let (sim, aligned) = align_similarity_2d(&pred, &gt).unwrap();
        assert_relative_eq!(sim.scale, 2.0, epsilon = 1e-12);
        assert_relative_eq!(sim.translation, Vector2::new(5.0, 7.0), epsilon = 1e-12);
        for (a, g) in aligned.joints().iter().zip(gt.joints()) {
            assert!((a - g).norm() < 1e-12);
        }
        let (id, _) = align_similarity_2d(&pred, &pred).unwrap();
        assert_relative_eq!(id.scale, 1.0, epsilon = 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn alignment_flags_mirror_and_degenerate() {
        let pred = p2(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        let gt = p2(&[(0.0, 0.0), (-1.0, 0.0), (0.0, -1.0)]);
        let (sim, _) = align_similarity_2d(&pred, &gt).unwrap();
        assert!(sim.mirrored && sim.scale < 0.0);
        let flat = p2(&[(3.0, 3.0), (3.0, 3.0), (3.0, 3.0)]);
        assert!(matches!(align_similarity_2d(&flat, &gt), Err(GeomError::DegenerateGeometry(_))));
    }

    #[test]
    fn agnostic_loss_zero_for_similar_xy() {
        let pred = Pose3D::absolute(
            vec![Vector3::new(0.0, 0.0, 5.0), Vector3::new(100.0, 20.0, -3.0), Vector3::new(-40.0, 300.0, 1.0)],
            0,
        )
        .unwrap();
        let gt = p2(&pred.joints().iter().map(|p| (0.3 * p.x + 128.0, 0.3 * p.y + 90.0)).collect::<Vec<_>>());
        assert!(agnostic_2d_loss(&pred, &gt).unwrap().0 < 1e-12);
    }

    #[test]
    fn composite_examples() {
        let cfg = LossConfig::default();
        let metro = LossTerms::Metro { ann3d: Some(1.0), ann2d: Some(1.0) };
        assert_relative_eq!(composite_loss(&metro, &cfg, 0).unwrap(), 1.1, epsilon = 1e-15);
        let all = LossTerms::Metrabs {
            abs3d_ann3d: Some(1.0),
            head3d_ann3d: Some(1.0),
            head2d_ann3d: Some(1.0),
            head2d_ann2d: Some(1.0),
            head3d_ann2d: Some(1.0),
        };
        assert_relative_eq!(composite_loss(&all, &cfg, 5000).unwrap(), 3.2, epsilon = 1e-15);
        assert_relative_eq!(composite_loss(&all, &cfg, 4999).unwrap(), 2.2, epsilon = 1e-15);
        assert_relative_eq!(composite_loss(&all, &cfg, 0).unwrap(), 2.2, epsilon = 1e-15);
    }

    #[test]
    fn composite_missing_term() {
        let cfg = LossConfig::default();
        let metro = LossTerms::Metro { ann3d: Some(1.0), ann2d: None };
        assert!(matches!(composite_loss(&metro, &cfg, 0), Err(GeomError::Config(_))));
        let no2d = LossConfig { enabled: EnabledTerms { ann2d: false, absolute: true }, ..cfg };
        assert_eq!(composite_loss(&metro, &no2d, 0).unwrap(), 1.0);
        let neg = LossConfig { lambda_2d: -0.1, ..cfg };
        assert!(composite_loss(&LossTerms::Metro { ann3d: Some(1.0), ann2d: Some(1.0) }, &neg, 0).is_err());
    }
}
