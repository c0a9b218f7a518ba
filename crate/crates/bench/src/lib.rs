//! Fixed inputs shared by the benchmarks.

use posegeom::heatmap::synthesize_gaussian_volume;
use posegeom::reconstruction::ReconstructionInput;
use posegeom::synth::{generate_scene, NoiseModel, SceneSample, SceneSpec};
use posegeom::{HeatmapGeometry, HeatmapVolume, Pose3D};

pub fn noisy_scene(seed: u64) -> SceneSample {
    let spec = SceneSpec { seed, noise: NoiseModel { sigma_2d: 1e-3, sigma_3d_mm: 15.0 }, ..SceneSpec::default() };
    generate_scene(&spec, 0).expect("default scene spec is valid")
}

pub fn reconstruction_input(seed: u64) -> ReconstructionInput {
    let s = noisy_scene(seed);
    ReconstructionInput::new(&s.normalized, &s.rel3d, &vec![true; s.rel3d.len()]).expect("matching lengths")
}

/// A 17-joint volume with Gaussian blobs around the volume center.
pub fn metric_volume() -> HeatmapVolume {
    let g = HeatmapGeometry::default_metric();
    let targets: Vec<_> = (0..17)
        .map(|j| g.from_bin(&nalgebra::Vector3::new(3.0 + 0.05 * j as f64, 3.5, 4.0 - 0.03 * j as f64)))
        .collect();
    synthesize_gaussian_volume(&targets, g, 1.0).expect("targets are interior")
}

/// Prediction and ground truth differing by noise and a similarity.
pub fn pose_pair(seed: u64) -> (Pose3D, Pose3D) {
    let s = noisy_scene(seed);
    let pred = s.rel3d.translated(&s.offset).expect("finite offset").map(|p| p * 1.05).expect("finite");
    (pred, s.absolute)
}
