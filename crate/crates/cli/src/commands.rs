//! Subcommand configurations and drivers.
//!
//! Every configuration is a JSON object whose fields all have defaults, so
//! `{}` is a valid config. Unknown fields are rejected.

use std::collections::HashMap;

use nalgebra::Vector3;
use posegeom::heatmap::{soft_argmax_25d, soft_argmax_metric, synthesize_gaussian_volume};
use posegeom::io::PoseFile;
use posegeom::metrics::{evaluate_sequence, EvalProtocol, ErrorPool};
use posegeom::scale_recovery::{bone_lengths, recover_root_depth, BoneSpec, DEFAULT_INIT_Z0};
use posegeom::skeleton::skeleton17;
use posegeom::striding::{mean, receptive_centers, StridingConfig, StridingMode};
use posegeom::synth::{depth_ratio_sweep, median, place_and_project, random_pose, scene_rng, NoiseModel, SceneSpec};
use posegeom::{GeomError, HeatmapGeometry, Result};
use serde::{Deserialize, Serialize};

use crate::report::{Cell, Table};

/// Stream offset for noise draws that must not disturb the scene draws.
const NOISE_STREAM: u64 = 0x6e6f_6973_6500_0000;

fn require_seed(seed: Option<u64>) -> Result<u64> {
    seed.ok_or_else(|| GeomError::Config("a seed is required: pass --seed or set \"seed\" in the config".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeKind {
    Metric,
    Image25d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundtripConfig {
    pub seed: Option<u64>,
    /// Number of random poses; each contributes one target per joint.
    pub scenes: usize,
    pub sigma_bins: f64,
    /// Minimum distance of every target from the first and last bin centers.
    pub margin_bins: f64,
    pub modes: Vec<VolumeKind>,
}

impl Default for RoundtripConfig {
    fn default() -> Self {
        Self { seed: None, scenes: 100, sigma_bins: 1.0, margin_bins: 3.0, modes: vec![VolumeKind::Metric, VolumeKind::Image25d] }
    }
}

/// Synthesizes a Gaussian volume per pose and decodes it again.
///
/// Targets are the joints of a random skeleton pose, fitted per axis into
/// the region `margin_bins` inside the outermost bin centers.
pub fn roundtrip(cfg: &RoundtripConfig) -> Result<Table> {
    let seed = require_seed(cfg.seed)?;
    if cfg.scenes == 0 || !(cfg.margin_bins >= 0.0) {
        return Err(GeomError::Config("scenes must be positive and margin_bins >= 0".into()));
    }
    let skel = skeleton17();
    let mut table = Table::new(&[
        "mode",
        "joint",
        "samples",
        "mean_xy_error",
        "max_xy_error",
        "mean_z_error_mm",
        "max_z_error_mm",
        "xy_unit",
    ]);
    for &kind in &cfg.modes {
        let g = match kind {
            VolumeKind::Metric => HeatmapGeometry::default_metric(),
            VolumeKind::Image25d => HeatmapGeometry::default_image25d(),
        };
        let n = g.bins().map(|b| b as f64 - 1.0);
        let lo = g.from_bin(&Vector3::repeat(cfg.margin_bins));
        let hi = g.from_bin(&Vector3::new(n[0], n[1], n[2]).add_scalar(-cfg.margin_bins));
        if (0..3).any(|a| hi[a] < lo[a]) {
            return Err(GeomError::Config(format!("margin of {} bins leaves no interior", cfg.margin_bins)));
        }
        let (center, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
        let joints = skel.joint_names.len();
        let mut xy = vec![Vec::with_capacity(cfg.scenes); joints];
        let mut z = vec![Vec::with_capacity(cfg.scenes); joints];
        for i in 0..cfg.scenes as u64 {
            let pose = random_pose(&skel.bones, &mut scene_rng(seed, i))?;
            let reach = pose.joints().iter().fold(Vector3::repeat(f64::MIN_POSITIVE), |m, p| m.sup(&p.abs()));
            let targets: Vec<Vector3<f64>> =
                pose.joints().iter().map(|p| center + p.component_div(&reach).component_mul(&half)).collect();
            let v = synthesize_gaussian_volume(&targets, g, cfg.sigma_bins)?;
            let decoded: Vec<Vector3<f64>> = match kind {
                VolumeKind::Metric => soft_argmax_metric(&v)?.joints().to_vec(),
                VolumeKind::Image25d => {
                    let (px, depth) = soft_argmax_25d(&v)?;
                    px.joints().iter().zip(depth).map(|(p, d)| Vector3::new(p.x, p.y, d)).collect()
                }
            };
            for (j, (d, t)) in decoded.iter().zip(&targets).enumerate() {
                xy[j].push((d.xy() - t.xy()).norm());
                z[j].push((d.z - t.z).abs());
            }
        }
        let mode = match kind {
            VolumeKind::Metric => "metric",
            VolumeKind::Image25d => "image25d",
        };
        let unit = if kind == VolumeKind::Metric { "mm" } else { "px" };
        let stats = |e: &[f64]| (e.iter().sum::<f64>() / e.len() as f64, e.iter().cloned().fold(0.0, f64::max));
        let mut row = |name: &str, exy: &[f64], ez: &[f64]| {
            let (mxy, xxy) = stats(exy);
            let (mz, xz) = stats(ez);
            table.push(vec![mode.into(), name.into(), exy.len().into(), mxy.into(), xxy.into(), mz.into(), xz.into(), unit.into()]);
        };
        for j in 0..joints {
            row(&skel.joint_names[j], &xy[j], &z[j]);
        }
        row("all", &xy.concat(), &z.concat());
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub seed: Option<u64>,
    /// Scene distribution; its `seed` and `noise` fields are overridden.
    pub scenes: SceneSpec,
    pub ratios: Vec<f64>,
    /// Standard deviations of the noise on normalized image coordinates.
    pub noise_sigmas: Vec<f64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { seed: None, scenes: SceneSpec::default(), ratios: vec![1.0, 1.1, 1.2, 1.4], noise_sigmas: vec![0.0, 0.002] }
    }
}

pub fn reconstruct_compare(cfg: &CompareConfig) -> Result<Table> {
    let spec = SceneSpec { seed: require_seed(cfg.seed)?, noise: NoiseModel::NONE, ..cfg.scenes.clone() };
    let mut table = Table::new(&["ratio", "solver", "noise_sigma", "mean_z0_error_mm", "median_z0_error_mm"]);
    for &sigma in &cfg.noise_sigmas {
        for r in depth_ratio_sweep(&spec, &cfg.ratios, sigma)? {
            table.push(vec![
                r.ratio.into(),
                r.solver.name().into(),
                r.noise_sigma.into(),
                r.mean_z0_error_mm.into(),
                r.median_z0_error_mm.into(),
            ]);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleRecoveryConfig {
    pub seed: Option<u64>,
    /// Scene distribution; its `seed` is overridden and `noise.sigma_2d` is
    /// replaced by each entry of `noise_sigmas`.
    pub scenes: SceneSpec,
    pub noise_sigmas: Vec<f64>,
    /// Factors applied to the true bone lengths before fitting.
    pub target_scales: Vec<f64>,
    /// Flatten every pose onto its root depth plane.
    pub planar: bool,
    pub init_z0: f64,
}

impl Default for ScaleRecoveryConfig {
    fn default() -> Self {
        Self {
            seed: None,
            scenes: SceneSpec { persons: 200, ..SceneSpec::default() },
            noise_sigmas: vec![0.0, 0.001, 0.002],
            target_scales: vec![0.9, 1.0, 1.1],
            planar: false,
            init_z0: DEFAULT_INIT_Z0,
        }
    }
}

pub fn scale_recovery(cfg: &ScaleRecoveryConfig) -> Result<Table> {
    let spec = SceneSpec { seed: require_seed(cfg.seed)?, ..cfg.scenes.clone() };
    spec.validate()?;
    let bones = spec.bones();
    let mut table = Table::new(&[
        "noise_sigma",
        "target_scale",
        "scenes",
        "mean_abs_z0_error_mm",
        "median_abs_z0_error_mm",
        "mean_z0_ratio",
    ]);
    for (k, &sigma) in cfg.noise_sigmas.iter().enumerate() {
        for &scale in &cfg.target_scales {
            let mut errors = Vec::with_capacity(spec.persons);
            let mut ratio = 0.0;
            for i in 0..spec.persons as u64 {
                let mut rng = scene_rng(spec.seed, i);
                let mut pose = random_pose(&bones, &mut rng)?;
                if cfg.planar {
                    pose = pose.map(|p| Vector3::new(p.x, p.y, 0.0))?;
                }
                let offset = spec.sample_offset(&mut rng);
                let noise = NoiseModel { sigma_2d: sigma, ..spec.noise };
                let stream = i * cfg.noise_sigmas.len() as u64 + k as u64;
                let s = place_and_project(&pose, &spec.camera, offset, noise, &mut scene_rng(spec.seed ^ NOISE_STREAM, stream))?;
                // targets are measured on the pose actually placed, so planar
                // scenes are fitted against their flattened bones
                let targets = BoneSpec::new(bones.edges().to_vec(), bone_lengths(&pose, &bones)?)?.scaled(scale)?;
                let z0 = recover_root_depth(&s.pose25d, &targets, cfg.init_z0)?.z0;
                errors.push((z0 - offset.z).abs());
                ratio += z0 / offset.z;
            }
            let n = errors.len().max(1) as f64;
            table.push(vec![
                sigma.into(),
                scale.into(),
                errors.len().into(),
                (errors.iter().sum::<f64>() / n).into(),
                if errors.is_empty() { Cell::Missing } else { median(&errors).into() },
                (ratio / n).into(),
            ]);
        }
    }
    Ok(table)
}

pub fn evaluate(protocol: &EvalProtocol, pred: &PoseFile, gt: &PoseFile) -> Result<Table> {
    protocol.validate()?;
    let by_name: HashMap<&str, _> = pred.sequences.iter().map(|s| (s.name.as_str(), s)).collect();
    if by_name.len() != pred.sequences.len() {
        return Err(GeomError::InvalidInput("prediction file repeats a sequence name".into()));
    }
    let mut table = Table::new(&[
        "sequence",
        "frames",
        "joints",
        "mpjpe_mm",
        "pa_mpjpe_mm",
        "pck",
        "auc",
        "abs_mpjpe_mm",
        "abs_pck",
    ]);
    let mut all = ErrorPool::default();
    let push = |table: &mut Table, name: &str, pool: &ErrorPool| -> Result<()> {
        let m = pool.summarize(protocol)?;
        table.push(vec![
            name.into(),
            m.frames.into(),
            m.joints.into(),
            m.mpjpe.into(),
            m.pa_mpjpe.into(),
            m.pck.into(),
            m.auc.into(),
            m.abs_mpjpe.into(),
            m.abs_pck.into(),
        ]);
        Ok(())
    };
    for seq in &gt.sequences {
        let p = by_name
            .get(seq.name.as_str())
            .ok_or_else(|| GeomError::InvalidInput(format!("no predictions for sequence {:?}", seq.name)))?;
        let pool = evaluate_sequence(&p.poses, &seq.poses, protocol)?;
        push(&mut table, &seq.name, &pool)?;
        all.merge(&pool);
    }
    if gt.sequences.len() != pred.sequences.len() {
        return Err(GeomError::InvalidInput("prediction file has sequences missing from ground truth".into()));
    }
    push(&mut table, "all", &all)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StridingReportConfig {
    pub input_sizes: Vec<u32>,
    pub strides: Vec<u32>,
    pub modes: Vec<StridingMode>,
}

impl Default for StridingReportConfig {
    fn default() -> Self {
        Self { input_sizes: vec![256], strides: vec![32, 16], modes: vec![StridingMode::Normal, StridingMode::Centered] }
    }
}

pub fn striding_report(cfg: &StridingReportConfig) -> Result<Table> {
    let mut table = Table::new(&["mode", "input_size", "stride", "outputs", "mean", "first", "last", "centers"]);
    for &mode in &cfg.modes {
        for &n in &cfg.input_sizes {
            for &s in &cfg.strides {
                let c = receptive_centers(&StridingConfig::new(n, s, mode)?);
                let name = match mode {
                    StridingMode::Normal => "normal",
                    StridingMode::Centered => "centered",
                };
                let list = c.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
                table.push(vec![
                    name.into(),
                    n.into(),
                    s.into(),
                    c.len().into(),
                    mean(&c).into(),
                    c[0].into(),
                    c[c.len() - 1].into(),
                    list.into(),
                ]);
            }
        }
    }
    Ok(table)
}
