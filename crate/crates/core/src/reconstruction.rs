//! Absolute root-offset recovery.
//!
//! Given normalized image coordinates `(x̃_j, ỹ_j)` and a root-relative metric
//! pose `(ΔX_j, ΔY_j, ΔZ_j)`, the pinhole model requires
//! `x̃_j (Z0 + ΔZ_j) = X0 + ΔX_j` and likewise for y. Each used joint gives two
//! equations linear in the offset `(X0, Y0, Z0)`:
//!
//! ```text
//! [1, 0, -x̃_j] · (X0, Y0, Z0) = x̃_j ΔZ_j - ΔX_j
//! [0, 1, -ỹ_j] · (X0, Y0, Z0) = ỹ_j ΔZ_j - ΔY_j
//! ```
//!
//! The stacked system is solved in the least-squares sense through a Cholesky
//! factorization of the normal equations. The weak-perspective variant drops
//! `ΔZ_j` from the denominator. Derivatives of the solution come from implicit
//! differentiation of `AᵀA v = Aᵀb`.

use nalgebra::{DMatrix, DVector, Matrix3, RowVector3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::pose::{Frame, Pose2D, Pose3D, Space};

/// Smallest-to-largest eigenvalue ratio of `AᵀA` below which the system is
/// treated as rank deficient.
pub const DEGENERACY_RATIO: f64 = 1e-12;

/// Normalized 2D pose, root-relative 3D pose and the joints to use.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionInput {
    xy: Vec<Vector2<f64>>,
    rel: Vec<Vector3<f64>>,
    mask: Vec<bool>,
}

impl ReconstructionInput {
    /// Joints whose 2D estimate is invalid are dropped from `mask`.
    pub fn new(p2d: &Pose2D, rel3d: &Pose3D, mask: &[bool]) -> Result<Self> {
        if p2d.space() != Space::Normalized {
            return Err(GeomError::Contract("reconstruction needs normalized 2D coordinates".into()));
        }
        if rel3d.frame() != Frame::RootRelative {
            return Err(GeomError::Contract("reconstruction needs a root-relative 3D pose".into()));
        }
        let mask: Vec<bool> = mask.iter().zip(p2d.valid()).map(|(&m, &v)| m && v).collect();
        Self::from_raw(p2d.joints().to_vec(), rel3d.joints().to_vec(), mask)
    }

    /// Unchecked with respect to frames; lengths and finiteness of used joints
    /// are still validated.
    pub fn from_raw(xy: Vec<Vector2<f64>>, rel: Vec<Vector3<f64>>, mask: Vec<bool>) -> Result<Self> {
        if xy.len() != rel.len() || xy.len() != mask.len() {
            return Err(GeomError::InvalidInput(format!(
                "length mismatch: {} 2D joints, {} 3D joints, {} mask entries",
                xy.len(),
                rel.len(),
                mask.len()
            )));
        }
        for j in (0..xy.len()).filter(|&j| mask[j]) {
            if !(xy[j].iter().chain(rel[j].iter()).all(|v| v.is_finite())) {
                return Err(GeomError::InvalidInput(format!("joint {j} is not finite")));
            }
        }
        Ok(Self { xy, rel, mask })
    }

    pub fn xy(&self) -> &[Vector2<f64>] {
        &self.xy
    }

    pub fn rel(&self) -> &[Vector3<f64>] {
        &self.rel
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn used(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.mask.len()).filter(|&j| self.mask[j])
    }

    pub fn used_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootSolution {
    /// `(X0, Y0, Z0)` in mm.
    pub offset: Vector3<f64>,
    /// Root mean square of the equation residuals, in mm.
    pub residual_rms: f64,
}

/// `∂(X0, Y0, Z0)` with respect to every input entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RootJacobian {
    pub wrt_x: Vec<Vector3<f64>>,
    pub wrt_y: Vec<Vector3<f64>>,
    /// Column `c` holds the derivative with respect to coordinate `c` of `Δ_j`.
    pub wrt_rel: Vec<Matrix3<f64>>,
}

fn row_x(xy: &Vector2<f64>) -> RowVector3<f64> {
    RowVector3::new(1.0, 0.0, -xy.x)
}

fn row_y(xy: &Vector2<f64>) -> RowVector3<f64> {
    RowVector3::new(0.0, 1.0, -xy.y)
}

/// Stacked full-perspective system, two rows per used joint.
pub fn build_full_perspective_system(input: &ReconstructionInput) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let used: Vec<usize> = input.used().collect();
    if used.is_empty() {
        return Err(GeomError::Underdetermined { used: 0, required: 1 });
    }
    let mut a = DMatrix::zeros(2 * used.len(), 3);
    let mut b = DVector::zeros(2 * used.len());
    for (k, &j) in used.iter().enumerate() {
        let (xy, d) = (&input.xy[j], &input.rel[j]);
        a.set_row(2 * k, &row_x(xy));
        a.set_row(2 * k + 1, &row_y(xy));
        b[2 * k] = xy.x * d.z - d.x;
        b[2 * k + 1] = xy.y * d.z - d.y;
    }
    Ok((a, b))
}

struct Normal {
    matrix: Matrix3<f64>,
    rhs: Vector3<f64>,
}

fn normal_equations(input: &ReconstructionInput, with_depth: bool) -> Result<Normal> {
    let used = input.used_count();
    if used < 2 {
        return Err(GeomError::Underdetermined { used, required: 2 });
    }
    let mut matrix = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for j in input.used() {
        let (xy, d) = (&input.xy[j], &input.rel[j]);
        let dz = if with_depth { d.z } else { 0.0 };
        for (row, b) in [(row_x(xy), xy.x * dz - d.x), (row_y(xy), xy.y * dz - d.y)] {
            matrix += row.transpose() * row;
            rhs += row.transpose() * b;
        }
    }
    let eig = matrix.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > DEGENERACY_RATIO * hi) {
        return Err(GeomError::DegenerateGeometry(format!(
            "normal matrix eigenvalue ratio {:e} below {DEGENERACY_RATIO:e}",
            lo / hi
        )));
    }
    Ok(Normal { matrix, rhs })
}

fn residual_rms(input: &ReconstructionInput, offset: &Vector3<f64>, with_depth: bool) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in input.used() {
        let (xy, d) = (&input.xy[j], &input.rel[j]);
        let dz = if with_depth { d.z } else { 0.0 };
        let rx = (row_x(xy) * offset)[0] - (xy.x * dz - d.x);
        let ry = (row_y(xy) * offset)[0] - (xy.y * dz - d.y);
        sum += rx * rx + ry * ry;
        n += 2;
    }
    (sum / n as f64).sqrt()
}

fn cholesky_solve(n: &Normal) -> Result<(nalgebra::Cholesky<f64, nalgebra::U3>, Vector3<f64>)> {
    let chol = n
        .matrix
        .cholesky()
        .ok_or_else(|| GeomError::DegenerateGeometry("normal matrix not positive definite".into()))?;
    let v = chol.solve(&n.rhs);
    Ok((chol, v))
}

pub fn solve_root_full(input: &ReconstructionInput) -> Result<RootSolution> {
    let normal = normal_equations(input, true)?;
    let (_, offset) = cholesky_solve(&normal)?;
    Ok(RootSolution { offset, residual_rms: residual_rms(input, &offset, true) })
}

/// Least squares of `x̃_j Z0 ≈ X0 + ΔX_j`, `ỹ_j Z0 ≈ Y0 + ΔY_j`.
///
/// Closed form: with centered quantities (subscript c),
/// `Z0 = Σ (x̃c ΔXc + ỹc ΔYc) / Σ (x̃c² + ỹc²)`, `X0 = mean(x̃) Z0 - mean(ΔX)`.
pub fn solve_root_weak(input: &ReconstructionInput) -> Result<RootSolution> {
    // same design matrix as the full system, so the same degeneracy test applies
    normal_equations(input, false)?;
    let used: Vec<usize> = input.used().collect();
    let n = used.len() as f64;
    let mean_xy = used.iter().map(|&j| input.xy[j]).sum::<Vector2<f64>>() / n;
    let mean_rel = used.iter().map(|&j| input.rel[j]).sum::<Vector3<f64>>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for &j in &used {
        let c = input.xy[j] - mean_xy;
        let d = input.rel[j] - mean_rel;
        num += c.x * d.x + c.y * d.y;
        den += c.norm_squared();
    }
    let z0 = num / den;
    let offset = Vector3::new(mean_xy.x * z0 - mean_rel.x, mean_xy.y * z0 - mean_rel.y, z0);
    Ok(RootSolution { offset, residual_rms: residual_rms(input, &offset, false) })
}

/// Full-perspective solution together with its derivatives.
///
/// With `N = AᵀA`, residual `r = b - A v`, a perturbation gives
/// `N dv = dAᵀ r + Aᵀ (db - dA v)`.
pub fn solve_root_full_with_jacobian(input: &ReconstructionInput) -> Result<(RootSolution, RootJacobian)> {
    let normal = normal_equations(input, true)?;
    let (chol, v) = cholesky_solve(&normal)?;
    let j_count = input.xy.len();
    let mut jac = RootJacobian {
        wrt_x: vec![Vector3::zeros(); j_count],
        wrt_y: vec![Vector3::zeros(); j_count],
        wrt_rel: vec![Matrix3::zeros(); j_count],
    };
    for j in input.used() {
        let (xy, d) = (&input.xy[j], &input.rel[j]);
        let ax = row_x(xy).transpose();
        let ay = row_y(xy).transpose();
        let rx = xy.x * d.z - d.x - ax.dot(&v);
        let ry = xy.y * d.z - d.y - ay.dot(&v);
        // dA for x̃_j is -e_z in row x; db is ΔZ_j
        let depth = d.z + v.z;
        jac.wrt_x[j] = chol.solve(&(-Vector3::z() * rx + ax * depth));
        jac.wrt_y[j] = chol.solve(&(-Vector3::z() * ry + ay * depth));
        let dx = chol.solve(&(-ax));
        let dy = chol.solve(&(-ay));
        let dz = chol.solve(&(ax * xy.x + ay * xy.y));
        jac.wrt_rel[j] = Matrix3::from_columns(&[dx, dy, dz]);
    }
    let sol = RootSolution { offset: v, residual_rms: residual_rms(input, &v, true) };
    Ok((sol, jac))
}

/// Joints at least one stride away from every crop border.
///
/// Both bounds are inclusive; invalid joints are excluded.
pub fn border_mask(p2d: &Pose2D, crop_w: f64, crop_h: f64, stride: f64) -> Result<Vec<bool>> {
    if p2d.space() != Space::Pixel {
        return Err(GeomError::Contract("border_mask expects a pixel-space pose".into()));
    }
    Ok(p2d
        .joints()
        .iter()
        .zip(p2d.valid())
        .map(|(p, &v)| v && p.x >= stride && p.x <= crop_w - stride && p.y >= stride && p.y <= crop_h - stride)
        .collect())
}

/// Absolute pose from a recovered root offset.
///
/// Joints in `mask` are back-projected along their 2D rays at depth
/// `Z0 + ΔZ_j`; the others get `Δ_j + offset`.
pub fn compose_absolute(p2d: &Pose2D, rel3d: &Pose3D, root: &RootSolution, mask: &[bool]) -> Result<Pose3D> {
    if p2d.space() != Space::Normalized {
        return Err(GeomError::Contract("compose_absolute needs normalized 2D coordinates".into()));
    }
    if p2d.len() != rel3d.len() || mask.len() != rel3d.len() {
        return Err(GeomError::InvalidInput("pose and mask lengths differ".into()));
    }
    let off = root.offset;
    let mut out = Vec::with_capacity(rel3d.len());
    for (j, d) in rel3d.joints().iter().enumerate() {
        if mask[j] {
            let depth = d.z + off.z;
            if depth <= 0.0 {
                return Err(GeomError::BehindCamera { joint: j, depth });
            }
            let xy = p2d.joints()[j];
            out.push(Vector3::new(xy.x, xy.y, 1.0) * depth);
        } else {
            out.push(d + off);
        }
    }
    Pose3D::new(out, Frame::Absolute, rel3d.root_index())
}

/// `max_j Z_j / min_j Z_j`.
pub fn depth_ratio(p: &Pose3D) -> Result<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (j, x) in p.joints().iter().enumerate() {
        if x.z <= 0.0 {
            return Err(GeomError::BehindCamera { joint: j, depth: x.z });
        }
        lo = lo.min(x.z);
        hi = hi.max(x.z);
    }
    Ok(hi / lo)
}
