//! Root depth from bone lengths for 2.5D predictions.
//!
//! A 2.5D pose gives normalized image coordinates and root-relative depths.
//! For an assumed root depth `Z0` every joint back-projects to
//! `(x̃_j, ỹ_j, 1)·(Z0 + ΔZ_j)`, which fixes all bone lengths `b_i(Z0)`. The
//! recovered depth minimizes `Σ_i (b_i(Z0) - t_i)²` over bones whose two
//! endpoints are valid, using a one-parameter Levenberg–Marquardt iteration.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::pose::{Frame, Pose2D, Pose3D, Space};

/// Starting depth of the optimizer in mm.
pub const DEFAULT_INIT_Z0: f64 = 2000.0;
pub const INITIAL_DAMPING: f64 = 1e-3;
pub const STEP_TOL_MM: f64 = 0.01;
pub const MAX_ITERATIONS: usize = 100;
/// Coarse seeds, log-spaced over this depth range (mm).
pub const SEED_RANGE_MM: (f64, f64) = (500.0, 10000.0);
pub const SEED_COUNT: usize = 16;

/// Skeleton edges with reference lengths in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoneSpecRepr", into = "BoneSpecRepr")]
pub struct BoneSpec {
    edges: Vec<(usize, usize)>,
    target_lengths: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BoneSpecRepr {
    edges: Vec<[usize; 2]>,
    target_lengths_mm: Vec<f64>,
}

impl TryFrom<BoneSpecRepr> for BoneSpec {
    type Error = GeomError;

    fn try_from(r: BoneSpecRepr) -> Result<Self> {
        BoneSpec::new(r.edges.iter().map(|e| (e[0], e[1])).collect(), r.target_lengths_mm)
    }
}

impl From<BoneSpec> for BoneSpecRepr {
    fn from(b: BoneSpec) -> Self {
        BoneSpecRepr {
            edges: b.edges.iter().map(|&(i, j)| [i, j]).collect(),
            target_lengths_mm: b.target_lengths,
        }
    }
}

impl BoneSpec {
    pub fn new(edges: Vec<(usize, usize)>, target_lengths: Vec<f64>) -> Result<Self> {
        if edges.len() != target_lengths.len() {
            return Err(GeomError::InvalidInput(format!(
                "{} edges but {} target lengths",
                edges.len(),
                target_lengths.len()
            )));
        }
        if let Some(&(i, _)) = edges.iter().find(|(i, j)| i == j) {
            return Err(GeomError::InvalidInput(format!("self-edge at joint {i}")));
        }
        if let Some(t) = target_lengths.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(GeomError::InvalidInput(format!("target length {t} is not positive")));
        }
        Ok(Self { edges, target_lengths })
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn target_lengths(&self) -> &[f64] {
        &self.target_lengths
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn check_joint_count(&self, joints: usize) -> Result<()> {
        match self.edges.iter().find(|(i, j)| *i >= joints || *j >= joints) {
            Some(e) => Err(GeomError::InvalidInput(format!("edge {e:?} out of range for {joints} joints"))),
            None => Ok(()),
        }
    }

    /// Same edges with every target length multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.edges.clone(), self.target_lengths.iter().map(|t| t * factor).collect())
    }
}

/// Normalized 2D coordinates plus root-relative depth per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose25D {
    p2d: Pose2D,
    rel_depth: Vec<f64>,
    valid: Vec<bool>,
}

impl Pose25D {
    /// A joint is valid only if it is valid in `p2d` as well.
    pub fn new(p2d: Pose2D, rel_depth: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if p2d.space() != Space::Normalized {
            return Err(GeomError::Contract("2.5D pose needs normalized 2D coordinates".into()));
        }
        if rel_depth.len() != p2d.len() || valid.len() != p2d.len() {
            return Err(GeomError::InvalidInput("2.5D pose channel lengths differ".into()));
        }
        let valid: Vec<bool> = valid.iter().zip(p2d.valid()).map(|(&a, &b)| a && b).collect();
        if let Some(j) = (0..valid.len()).find(|&j| valid[j] && !rel_depth[j].is_finite()) {
            return Err(GeomError::InvalidInput(format!("depth of valid joint {j} is not finite")));
        }
        Ok(Self { p2d, rel_depth, valid })
    }

    pub fn p2d(&self) -> &Pose2D {
        &self.p2d
    }

    pub fn rel_depth(&self) -> &[f64] {
        &self.rel_depth
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn len(&self) -> usize {
        self.rel_depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rel_depth.is_empty()
    }

    fn ray(&self, j: usize) -> Vector3<f64> {
        let xy = self.p2d.joints()[j];
        Vector3::new(xy.x, xy.y, 1.0)
    }
}

/// Back-projects every joint at depth `Z0 + ΔZ_j`; invalid joints are
/// back-projected too but not depth-checked.
pub fn backproject_25d(p: &Pose25D, z0: f64) -> Result<Pose3D> {
    let mut out = Vec::with_capacity(p.len());
    for j in 0..p.len() {
        let depth = z0 + p.rel_depth[j];
        if p.valid[j] && depth <= 0.0 {
            return Err(GeomError::BehindCamera { joint: j, depth });
        }
        let v = p.ray(j) * depth;
        out.push(if v.iter().all(|c| c.is_finite()) { v } else { Vector3::zeros() });
    }
    Pose3D::new(out, Frame::Absolute, 0)
}

pub fn bone_lengths(p: &Pose3D, bones: &BoneSpec) -> Result<Vec<f64>> {
    bones.check_joint_count(p.len())?;
    let j = p.joints();
    Ok(bones.edges.iter().map(|&(a, b)| (j[a] - j[b]).norm()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthRecovery {
    pub z0: f64,
    pub cost: f64,
    pub iterations: usize,
}

/// Bone length as an affine function of `Z0`: `b(Z0) = ‖offset + Z0·slope‖`.
#[derive(Debug, Clone, Copy)]
struct BoneLine {
    offset: Vector3<f64>,
    slope: Vector3<f64>,
    target: f64,
    a: usize,
    b: usize,
}

/// Least-squares bone-length objective restricted to usable bones.
#[derive(Debug, Clone)]
pub struct BoneObjective {
    lines: Vec<BoneLine>,
    depths: Vec<f64>,
}

impl BoneObjective {
    pub fn new(p: &Pose25D, bones: &BoneSpec) -> Result<Self> {
        bones.check_joint_count(p.len())?;
        let lines: Vec<BoneLine> = bones
            .edges
            .iter()
            .zip(&bones.target_lengths)
            .filter(|((a, b), _)| p.valid[*a] && p.valid[*b])
            .map(|(&(a, b), &target)| {
                let (ra, rb) = (p.ray(a), p.ray(b));
                BoneLine {
                    offset: ra * p.rel_depth[a] - rb * p.rel_depth[b],
                    slope: ra - rb,
                    target,
                    a,
                    b,
                }
            })
            .collect();
        if lines.is_empty() {
            return Err(GeomError::NoBones);
        }
        let depths = lines.iter().flat_map(|l| [p.rel_depth[l.a], p.rel_depth[l.b]]).collect();
        Ok(Self { lines, depths })
    }

    pub fn bone_count(&self) -> usize {
        self.lines.len()
    }

    /// Every joint touched by a used bone lies in front of the camera.
    pub fn admissible(&self, z0: f64) -> bool {
        self.depths.iter().all(|d| z0 + d > 0.0)
    }

    pub fn cost(&self, z0: f64) -> f64 {
        self.lines.iter().map(|l| ((l.offset + l.slope * z0).norm() - l.target).powi(2)).sum()
    }

    /// Gradient `Σ J r` and Gauss–Newton curvature `Σ J²`.
    fn linearize(&self, z0: f64) -> (f64, f64) {
        let (mut g, mut h) = (0.0, 0.0);
        for l in &self.lines {
            let v = l.offset + l.slope * z0;
            let len = v.norm();
            let jac = if len > 0.0 { v.dot(&l.slope) / len } else { l.slope.norm() };
            g += jac * (len - l.target);
            h += jac * jac;
        }
        (g, h)
    }

    /// Damped Gauss–Newton on the single unknown, starting from `z0`.
    pub fn levenberg_marquardt(&self, z0: f64) -> Result<DepthRecovery> {
        let mut z = z0;
        let mut cost = self.cost(z);
        let mut lambda = INITIAL_DAMPING;
        for it in 1..=MAX_ITERATIONS {
            let (g, h) = self.linearize(z);
            let h = h.max(f64::MIN_POSITIVE);
            // undamped step already below tolerance: stationary point
            if (g / h).abs() < STEP_TOL_MM {
                return Ok(DepthRecovery { z0: z, cost, iterations: it });
            }
            let step = -g / (h * (1.0 + lambda));
            let cand = z + step;
            let cand_cost = if self.admissible(cand) { self.cost(cand) } else { f64::INFINITY };
            if cand_cost <= cost {
                z = cand;
                cost = cand_cost;
                lambda /= 10.0;
                if step.abs() < STEP_TOL_MM {
                    return Ok(DepthRecovery { z0: z, cost, iterations: it });
                }
            } else {
                lambda *= 10.0;
            }
        }
        Err(GeomError::NotConverged { iterations: MAX_ITERATIONS, z0: z, cost })
    }
}

pub fn seed_depths(init_z0: f64) -> Vec<f64> {
    let (lo, hi) = (SEED_RANGE_MM.0.ln(), SEED_RANGE_MM.1.ln());
    let mut seeds = vec![init_z0];
    seeds.extend((0..SEED_COUNT).map(|i| (lo + (hi - lo) * i as f64 / (SEED_COUNT - 1) as f64).exp()));
    seeds
}

/// Root depth minimizing the squared bone-length discrepancy.
///
/// The cheapest of `init_z0` and [`SEED_COUNT`] log-spaced seeds is refined
/// with Levenberg–Marquardt.
pub fn recover_root_depth(p: &Pose25D, bones: &BoneSpec, init_z0: f64) -> Result<DepthRecovery> {
    let objective = BoneObjective::new(p, bones)?;
    let start = seed_depths(init_z0)
        .into_iter()
        .filter(|&z| objective.admissible(z))
        .map(|z| (z, objective.cost(z)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(z, _)| z)
        .ok_or_else(|| GeomError::DegenerateGeometry("no seed depth puts the bones in front of the camera".into()))?;
    objective.levenberg_marquardt(start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn pose25(xy: &[(f64, f64)], dz: &[f64]) -> Pose25D {
        let p2d = Pose2D::all_valid(xy.iter().map(|&(x, y)| Vector2::new(x, y)).collect(), Space::Normalized).unwrap();
        Pose25D::new(p2d, dz.to_vec(), vec![true; dz.len()]).unwrap()
    }

    #[test]
    fn backproject_examples() {
        let p = backproject_25d(&pose25(&[(0.0, 0.0)], &[0.0]), 2000.0).unwrap();
        assert_eq!(p.joints()[0], Vector3::new(0.0, 0.0, 2000.0));

        let p = backproject_25d(&pose25(&[(0.1, 0.0)], &[500.0]), 2000.0).unwrap();
        assert!((p.joints()[0] - Vector3::new(250.0, 0.0, 2500.0)).norm() < 1e-12);

        let q = pose25(&[(0.1, 0.2), (-0.3, 0.05)], &[0.0, 0.0]);
        let a = backproject_25d(&q, 1700.0).unwrap();
        let b = backproject_25d(&q, 3400.0).unwrap();
        for (x, y) in a.joints().iter().zip(b.joints()) {
            assert!((x * 2.0 - y).norm() < 1e-9);
        }
        assert!(backproject_25d(&q, -1.0).is_err());
    }

    #[test]
    fn bone_length_examples() {
        let p = Pose3D::absolute(vec![Vector3::zeros(), Vector3::new(3.0, 4.0, 0.0), Vector3::new(3.0, 4.0, 0.0)], 0).unwrap();
        let bones = BoneSpec::new(vec![(0, 1), (1, 2)], vec![1.0, 1.0]).unwrap();
        assert_eq!(bone_lengths(&p, &bones).unwrap(), vec![5.0, 0.0]);
        let bad = BoneSpec::new(vec![(0, 3)], vec![1.0]).unwrap();
        assert!(bone_lengths(&p, &bad).is_err());
    }

    #[test]
    fn bone_spec_validation() {
        assert!(BoneSpec::new(vec![(1, 1)], vec![1.0]).is_err());
        assert!(BoneSpec::new(vec![(0, 1)], vec![0.0]).is_err());
        assert!(BoneSpec::new(vec![(0, 1)], vec![]).is_err());
        let b: BoneSpec = serde_json::from_str(r#"{"edges":[[0,1]],"target_lengths_mm":[300]}"#).unwrap();
        assert_eq!(b.edges(), &[(0, 1)]);
    }

    #[test]
    fn single_bone_linear_residual() {
        // b(Z0) = 0.1·Z0, target 300 → Z0 = 3000
        let p = pose25(&[(0.0, 0.0), (0.1, 0.0)], &[0.0, 0.0]);
        let bones = BoneSpec::new(vec![(0, 1)], vec![300.0]).unwrap();
        let r = recover_root_depth(&p, &bones, DEFAULT_INIT_Z0).unwrap();
        assert!((r.z0 - 3000.0).abs() <= 0.1, "{r:?}");
        assert!(r.cost < 1e-6);
    }

    #[test]
    fn no_usable_bones() {
        let p2d = Pose2D::all_valid(vec![Vector2::zeros(), Vector2::new(0.1, 0.0)], Space::Normalized).unwrap();
        let p = Pose25D::new(p2d, vec![0.0, 0.0], vec![true, false]).unwrap();
        let bones = BoneSpec::new(vec![(0, 1)], vec![300.0]).unwrap();
        assert_eq!(recover_root_depth(&p, &bones, DEFAULT_INIT_Z0).unwrap_err(), GeomError::NoBones);
    }

    #[test]
    fn seeds_cover_range() {
        let s = seed_depths(2000.0);
        assert_eq!(s.len(), SEED_COUNT + 1);
        assert!((s[1] - 500.0).abs() < 1e-9 && (s[SEED_COUNT] - 10000.0).abs() < 1e-6);
    }
}
