//! Independent oracles: finite differences, grid scans and Monte-Carlo
//! sampling checked against the closed-form and iterative implementations.

use nalgebra::{Vector2, Vector3};
use posegeom::losses::{agnostic_2d_loss, align_similarity_2d, l1_pose_loss_3d};
use posegeom::metrics::{procrustes_transform, SimilarityTransform};
use posegeom::reconstruction::{solve_root_full, solve_root_full_with_jacobian, ReconstructionInput};
use posegeom::scale_recovery::{recover_root_depth, BoneObjective, BoneSpec, Pose25D, DEFAULT_INIT_Z0};
use posegeom::skeleton::default_bones;
use posegeom::synth::{gaussian, generate_scene, random_pose, scene_rng, NoiseModel, SceneSpec};
use posegeom::{Frame, Pose2D, Pose3D, Space};
use rand::Rng;

fn noisy_input(seed: u64, mask_out: usize) -> ReconstructionInput {
    let spec = SceneSpec {
        seed,
        noise: NoiseModel { sigma_2d: 2e-3, sigma_3d_mm: 20.0 },
        ..SceneSpec::default()
    };
    let s = generate_scene(&spec, 0).unwrap();
    let mut mask = vec![true; 17];
    for j in 0..mask_out {
        mask[16 - 2 * j] = false;
    }
    ReconstructionInput::new(&s.normalized, &s.rel3d, &mask).unwrap()
}

fn perturbed(input: &ReconstructionInput, j: usize, which: usize, h: f64) -> ReconstructionInput {
    let mut xy = input.xy().to_vec();
    let mut rel = input.rel().to_vec();
    match which {
        0 => xy[j].x += h,
        1 => xy[j].y += h,
        c => rel[j][c - 2] += h,
    }
    ReconstructionInput::from_raw(xy, rel, input.mask().to_vec()).unwrap()
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[test]
fn root_jacobian_matches_central_differences() {
    for seed in 0..100 {
        let input = noisy_input(seed, (seed % 4) as usize);
        let (_, jac) = solve_root_full_with_jacobian(&input).unwrap();
        for j in 0..17 {
            for which in 0..5 {
                let h = if which < 2 { 1e-5 } else { 1e-2 };
                let plus = solve_root_full(&perturbed(&input, j, which, h)).unwrap().offset;
                let minus = solve_root_full(&perturbed(&input, j, which, -h)).unwrap().offset;
                let fd = (plus - minus) / (2.0 * h);
                let an = match which {
                    0 => jac.wrt_x[j],
                    1 => jac.wrt_y[j],
                    c => jac.wrt_rel[j].column(c - 2).into_owned(),
                };
                if !input.mask()[j] {
                    assert_eq!(an, Vector3::zeros());
                    assert_eq!(fd, Vector3::zeros());
                    continue;
                }
                // floor: derivatives this small relative to the family are rounding noise
                let floor = if which < 2 { 1e-3 } else { 1e-8 };
                for c in 0..3 {
                    let e = rel_err(an[c], fd[c], floor);
                    assert!(e <= 1e-4, "seed {seed} joint {j} input {which} coord {c}: {} vs {}", an[c], fd[c]);
                }
            }
        }
    }
}

#[test]
fn noise_error_shrinks_with_joint_count() {
    let counts = [4usize, 8, 12, 17];
    let mut mean_err = [0.0; 4];
    let trials = 500;
    for t in 0..trials {
        let spec = SceneSpec { seed: 1000 + t, noise: NoiseModel { sigma_2d: 1e-3, sigma_3d_mm: 0.0 }, ..SceneSpec::default() };
        let s = generate_scene(&spec, 0).unwrap();
        for (k, &n) in counts.iter().enumerate() {
            let mask: Vec<bool> = (0..17).map(|j| j < n).collect();
            let input = ReconstructionInput::new(&s.normalized, &s.rel3d, &mask).unwrap();
            mean_err[k] += (solve_root_full(&input).unwrap().offset.z - s.offset.z).abs() / trials as f64;
        }
    }
    for w in mean_err.windows(2) {
        assert!(w[1] < w[0], "{mean_err:?}");
    }
}

/// Brute-force minimum of the bone cost on a 1 mm grid over [200, 20000] mm.
fn grid_argmin(p: &Pose25D, bones: &BoneSpec) -> f64 {
    let valid = p.valid();
    let ray = |j: usize| {
        let xy = p.p2d().joints()[j];
        Vector3::new(xy.x, xy.y, 1.0)
    };
    let cost = |z0: f64| -> f64 {
        bones
            .edges()
            .iter()
            .zip(bones.target_lengths())
            .filter(|((a, b), _)| valid[*a] && valid[*b])
            .map(|(&(a, b), t)| {
                let pa = ray(a) * (z0 + p.rel_depth()[a]);
                let pb = ray(b) * (z0 + p.rel_depth()[b]);
                ((pa - pb).norm() - t).powi(2)
            })
            .sum()
    };
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=19800 {
        let z = 200.0 + i as f64;
        let c = cost(z);
        if c < best.0 {
            best = (c, z);
        }
    }
    best.1
}

#[test]
fn lm_agrees_with_grid_scan_on_noisy_scenes() {
    let bones = default_bones();
    for seed in 0..40 {
        let spec = SceneSpec { seed, noise: NoiseModel { sigma_2d: 2e-3, sigma_3d_mm: 30.0 }, ..SceneSpec::default() };
        let s = generate_scene(&spec, 0).unwrap();
        let lm = recover_root_depth(&s.pose25d, &bones, DEFAULT_INIT_Z0).unwrap();
        let grid = grid_argmin(&s.pose25d, &bones);
        assert!((lm.z0 - grid).abs() <= 1.0, "seed {seed}: lm {} grid {grid}", lm.z0);
    }
}

#[test]
fn excluded_bones_have_no_influence() {
    let bones = default_bones();
    let spec = SceneSpec { seed: 77, noise: NoiseModel { sigma_2d: 1e-3, sigma_3d_mm: 10.0 }, ..SceneSpec::default() };
    let s = generate_scene(&spec, 0).unwrap();
    let mut valid = vec![true; 17];
    valid[13] = false;
    valid[3] = false;
    let base = Pose25D::new(s.pose25d.p2d().clone(), s.pose25d.rel_depth().to_vec(), valid.clone()).unwrap();
    let z_base = recover_root_depth(&base, &bones, DEFAULT_INIT_Z0).unwrap().z0;

    let mut xy = s.pose25d.p2d().joints().to_vec();
    let mut depth = s.pose25d.rel_depth().to_vec();
    xy[13] += Vector2::new(0.3, -0.2);
    depth[3] += 900.0;
    let p2d = Pose2D::new(xy, Space::Normalized, s.pose25d.p2d().valid().to_vec()).unwrap();
    let moved = Pose25D::new(p2d, depth, valid).unwrap();
    assert_eq!(recover_root_depth(&moved, &bones, DEFAULT_INIT_Z0).unwrap().z0, z_base);
}

#[test]
fn lm_cost_matches_objective() {
    // the objective used by LM and a direct back-projection agree pointwise
    let bones = default_bones();
    let s = generate_scene(&SceneSpec { seed: 4, ..SceneSpec::default() }, 0).unwrap();
    let obj = BoneObjective::new(&s.pose25d, &bones).unwrap();
    for z in [900.0, 2500.0, 7000.0] {
        let p = posegeom::scale_recovery::backproject_25d(&s.pose25d, z).unwrap();
        let direct: f64 = posegeom::scale_recovery::bone_lengths(&p, &bones)
            .unwrap()
            .iter()
            .zip(bones.target_lengths())
            .map(|(b, t)| (b - t).powi(2))
            .sum();
        assert!((obj.cost(z) - direct).abs() <= 1e-9 * direct.max(1.0));
    }
}

fn random_pose2d(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<Vector2<f64>> {
    (0..n).map(|_| Vector2::new(gaussian(rng), gaussian(rng)) * scale).collect()
}

#[test]
fn similarity_fit_beats_random_samples() {
    let mut rng = scene_rng(21, 0);
    let pred = random_pose2d(&mut rng, 17, 300.0);
    let gt: Vec<_> = pred
        .iter()
        .map(|p| p * 0.4 + Vector2::new(120.0, 90.0) + Vector2::new(gaussian(&mut rng), gaussian(&mut rng)) * 15.0)
        .collect();
    let pred2 = Pose2D::all_valid(pred.clone(), Space::Pixel).unwrap();
    let gt2 = Pose2D::all_valid(gt.clone(), Space::Pixel).unwrap();
    let (sim, _) = align_similarity_2d(&pred2, &gt2).unwrap();
    let resid = |s: f64, t: Vector2<f64>| -> f64 { pred.iter().zip(&gt).map(|(p, g)| (p * s + t - g).norm_squared()).sum() };
    let best = resid(sim.scale, sim.translation);
    for _ in 0..10_000 {
        let s = sim.scale + gaussian(&mut rng) * 0.05;
        let t = sim.translation + Vector2::new(gaussian(&mut rng), gaussian(&mut rng)) * 10.0;
        assert!(resid(s, t) >= best);
    }
}

#[test]
fn procrustes_beats_random_similarities() {
    let mut rng = scene_rng(22, 0);
    let gt = random_pose(&default_bones(), &mut rng).unwrap();
    let pred = gt.translated(&Vector3::zeros()).unwrap().map(|p| p * 1.1 + Vector3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)) * 40.0).unwrap();
    let t = procrustes_transform(&pred, &gt).unwrap();
    let resid = |t: &SimilarityTransform| -> f64 {
        pred.joints().iter().zip(gt.joints()).map(|(p, g)| (t.apply(p) - g).norm_squared()).sum()
    };
    let best = resid(&t);
    for _ in 0..10_000 {
        let axis = Vector3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)) * 0.05;
        let cand = SimilarityTransform {
            rotation: nalgebra::Rotation3::new(axis).into_inner() * t.rotation,
            scale: t.scale * (1.0 + 0.05 * gaussian(&mut rng)),
            translation: t.translation + Vector3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)) * 20.0,
        };
        assert!(resid(&cand) >= best);
    }
}

fn kink_distance(pred: &Pose3D, gt: &Pose2D) -> f64 {
    let (sim, aligned) = align_similarity_2d(&posegeom::losses::ortho_project(pred), gt).unwrap();
    let _ = sim;
    aligned
        .joints()
        .iter()
        .zip(gt.joints())
        .flat_map(|(a, g)| [(a.x - g.x).abs(), (a.y - g.y).abs()])
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn agnostic_loss_gradient_matches_central_differences() {
    let mut checked = 0;
    for seed in 0..60 {
        let mut rng = scene_rng(300 + seed, 0);
        let pred = random_pose(&default_bones(), &mut rng).unwrap();
        let gt_pts: Vec<_> = pred
            .joints()
            .iter()
            .map(|p| Vector2::new(p.x, p.y) * 0.15 + Vector2::new(128.0, 128.0) + Vector2::new(gaussian(&mut rng), gaussian(&mut rng)) * 6.0)
            .collect();
        let mut valid = vec![true; 17];
        valid[(seed % 17) as usize] = false;
        let gt = Pose2D::new(gt_pts, Space::Pixel, valid).unwrap();
        if kink_distance(&pred, &gt) < 1e-3 {
            continue;
        }
        checked += 1;
        let (_, grad) = agnostic_2d_loss(&pred, &gt).unwrap();
        let h = 1e-6;
        for j in 0..17 {
            for c in 0..3 {
                let mut plus = pred.joints().to_vec();
                let mut minus = pred.joints().to_vec();
                plus[j][c] += h;
                minus[j][c] -= h;
                let lp = agnostic_2d_loss(&Pose3D::new(plus, Frame::Absolute, 0).unwrap(), &gt).unwrap().0;
                let lm = agnostic_2d_loss(&Pose3D::new(minus, Frame::Absolute, 0).unwrap(), &gt).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                assert!(rel_err(grad[j][c], fd, 1e-6) <= 1e-4, "seed {seed} joint {j} c {c}: {} vs {fd}", grad[j][c]);
            }
        }
    }
    assert!(checked >= 50);
}

#[test]
fn l1_gradient_matches_central_differences() {
    let mut rng = scene_rng(9, 0);
    let gt = random_pose(&default_bones(), &mut rng).unwrap().translated(&Vector3::zeros()).unwrap();
    let pred = gt.map(|p| p + Vector3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)) * 30.0).unwrap();
    let (_, grad) = l1_pose_loss_3d(&pred, &gt).unwrap();
    let h = 1e-4;
    for j in 0..17 {
        for c in 0..3 {
            let mut plus = pred.joints().to_vec();
            let mut minus = pred.joints().to_vec();
            plus[j][c] += h;
            minus[j][c] -= h;
            let lp = l1_pose_loss_3d(&Pose3D::new(plus, Frame::Absolute, 0).unwrap(), &gt).unwrap().0;
            let lm = l1_pose_loss_3d(&Pose3D::new(minus, Frame::Absolute, 0).unwrap(), &gt).unwrap().0;
            assert!((grad[j][c] - (lp - lm) / (2.0 * h)).abs() <= 1e-6);
        }
    }
}
