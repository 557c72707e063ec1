//! Slave candidates expressed in master local frames, one-shot distance
//! criteria, and PCA-based classification of point, line and plane
//! constraints.

use serde::{Deserialize, Serialize};

use crate::constraint::{ConstraintKind, LinearConstraint, Thresholds};
use crate::error::{KvilError, Result};
use crate::geometry::{principal_axes, RigidTransform, Trajectory, Vec3};
use crate::ingest::FrameBank;

/// Candidate positions in local frames, indexed `[frame][candidate][time][demo]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLocalTensor {
    frames: usize,
    candidates: usize,
    time_steps: usize,
    demos: usize,
    values: Vec<Vec3>,
}

impl FrameLocalTensor {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn candidates(&self) -> usize {
        self.candidates
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn demos(&self) -> usize {
        self.demos
    }

    fn offset(&self, j: usize, k: usize, t: usize) -> usize {
        ((j * self.candidates + k) * self.time_steps + t) * self.demos
    }

    pub fn get(&self, j: usize, k: usize, t: usize, n: usize) -> Vec3 {
        self.values[self.offset(j, k, t) + n]
    }

    /// Positions of candidate `k` over all demos at time `t` in frame `j`.
    pub fn positions(&self, j: usize, k: usize, t: usize) -> &[Vec3] {
        let o = self.offset(j, k, t);
        &self.values[o..o + self.demos]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }
}

/// Maps every slave candidate into every frame. `frames` is indexed `[t][n][j]`.
pub fn express_in_frames(slave: &Trajectory, frames: &[Vec<Vec<RigidTransform>>]) -> Result<FrameLocalTensor> {
    let (steps, demos, candidates) = (slave.time_steps(), slave.demos(), slave.points());
    if frames.len() != steps || frames.iter().any(|f| f.len() != demos) {
        return Err(KvilError::SchemaError("frame array does not match slave trajectory".into()));
    }
    let nframes = frames[0][0].len();
    if frames.iter().flatten().any(|f| f.len() != nframes) {
        return Err(KvilError::SchemaError("inconsistent frame count".into()));
    }
    let mut values = Vec::with_capacity(nframes * candidates * steps * demos);
    for j in 0..nframes {
        for k in 0..candidates {
            for t in 0..steps {
                for n in 0..demos {
                    values.push(frames[t][n][j].apply_inverse(&slave.get(n, t, k)));
                }
            }
        }
    }
    Ok(FrameLocalTensor {
        frames: nframes,
        candidates,
        time_steps: steps,
        demos,
        values,
    })
}

/// Size-normalized spread of a point cloud along its principal axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialVariability {
    /// Square roots of the covariance eigenvalues over the scale, descending.
    pub eta: [f64; 3],
    pub mean: Vec3,
    pub axes: [Vec3; 3],
}

pub fn pca_variability(points: &[Vec3], scale: f64) -> Result<SpatialVariability> {
    if points.len() < 2 {
        return Err(KvilError::InsufficientData(format!("{} points", points.len())));
    }
    if !(scale > 0.0) {
        return Err(KvilError::DegenerateGeometry(format!("scale {scale}")));
    }
    // spreads are measured by projecting the data onto the covariance axes,
    // which keeps tiny spreads accurate where sqrt(eigenvalue) would not
    let (mean, _, axes) = principal_axes(points);
    let n = points.len() as f64;
    let spread = |v: &Vec3| (points.iter().map(|p| (p - mean).dot(v).powi(2)).sum::<f64>() / n).sqrt() / scale;
    let mut pairs: Vec<(f64, Vec3)> = axes.iter().map(|v| (spread(v), *v)).collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    Ok(SpatialVariability {
        eta: [pairs[0].0, pairs[1].0, pairs[2].0],
        mean,
        axes: [pairs[0].1, pairs[1].1, pairs[2].1],
    })
}

/// Linear constraint kind implied by `eta` for `n` demonstrations.
pub fn classify_linear(eta: &[f64; 3], th: &Thresholds, n: usize) -> Option<ConstraintKind> {
    if eta[0] < th.xi1 {
        Some(ConstraintKind::PointToPoint)
    } else if n > 2 && eta[1] < th.xi1 && eta[0] > th.xi2 {
        Some(ConstraintKind::PointToLine)
    } else if n > 3 && eta[2] < th.xi1 && eta[1] > th.xi2 {
        Some(ConstraintKind::PointToPlane)
    } else {
        None
    }
}

pub fn linear_constraint(
    var: &SpatialVariability,
    kind: ConstraintKind,
    frame_id: usize,
    time: usize,
    keypoint: usize,
) -> LinearConstraint {
    LinearConstraint {
        kind,
        anchor: var.mean,
        basis: var.axes[..kind.dim()].to_vec(),
        frame_id,
        time,
        keypoint,
    }
}

/// Result of the single-demonstration distance criteria.
#[derive(Clone, Debug, PartialEq)]
pub struct OneShot {
    pub frame_id: usize,
    pub keypoints: Vec<usize>,
    pub constraints: Vec<LinearConstraint>,
}

/// Picks the frame closest on average to the slave at the last time step,
/// then the nearest, farthest and (for `dims == 3`) the candidate farthest
/// from both, each as a point constraint.
pub fn one_shot_extract(tensor: &FrameLocalTensor, bank: &FrameBank, dims: usize) -> Result<OneShot> {
    if tensor.demos() != 1 {
        return Err(KvilError::NotOneShot(tensor.demos()));
    }
    let needed = dims.clamp(2, 3);
    if tensor.candidates() < needed {
        return Err(KvilError::InsufficientCandidates {
            needed,
            available: tensor.candidates(),
        });
    }
    let t = tensor.time_steps() - 1;
    let local = |j: usize, k: usize| tensor.get(j, k, t, 0);
    let mut frame_id = 0;
    let mut best = f64::INFINITY;
    for j in 0..tensor.frames() {
        let origin = bank.frames[j].origin;
        let mean = (0..tensor.candidates()).map(|k| (local(j, k) - origin).norm()).sum::<f64>() / tensor.candidates() as f64;
        if mean < best {
            best = mean;
            frame_id = j;
        }
    }
    let origin = bank.frames[frame_id].origin;
    let dist: Vec<f64> = (0..tensor.candidates()).map(|k| (local(frame_id, k) - origin).norm()).collect();
    let argbest = |score: &dyn Fn(usize) -> f64, exclude: &[usize]| {
        let mut pick = None;
        let mut top = f64::NEG_INFINITY;
        for k in 0..tensor.candidates() {
            if exclude.contains(&k) {
                continue;
            }
            let s = score(k);
            if s > top {
                top = s;
                pick = Some(k);
            }
        }
        pick.expect("enough candidates")
    };
    let k1 = argbest(&|k| -dist[k], &[]);
    let k2 = argbest(&|k| dist[k], &[k1]);
    let mut keypoints = vec![k1, k2];
    if needed == 3 {
        let (p1, p2) = (local(frame_id, k1), local(frame_id, k2));
        let k3 = argbest(
            &|k| {
                let p = local(frame_id, k);
                (p - p1).norm().min((p - p2).norm())
            },
            &[k1, k2],
        );
        keypoints.push(k3);
    }
    let constraints = keypoints
        .iter()
        .map(|&k| LinearConstraint {
            kind: ConstraintKind::PointToPoint,
            anchor: local(frame_id, k),
            basis: Vec::new(),
            frame_id,
            time: t,
            keypoint: k,
        })
        .collect();
    Ok(OneShot {
        frame_id,
        keypoints,
        constraints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_frame_bank, compute_canonical_shape, ObjectRecord};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn th() -> Thresholds {
        Thresholds::default()
    }

    #[test]
    fn identity_frames_give_world_positions() {
        let slave = Trajectory::from_fn(2, 3, 4, |n, t, h| Vec3::new(n as f64, t as f64, h as f64));
        let frames = vec![vec![vec![RigidTransform::identity(); 2]; 2]; 3];
        let tensor = express_in_frames(&slave, &frames).unwrap();
        for j in 0..2 {
            for k in 0..4 {
                for t in 0..3 {
                    for n in 0..2 {
                        assert_eq!(tensor.get(j, k, t, n), slave.get(n, t, k));
                    }
                }
            }
        }
    }

    #[test]
    fn co_moving_frames_give_constant_tensor() {
        let body = [Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.0, 0.2, 0.0), Vec3::new(0.0, 0.0, 0.3)];
        let pose = |t: usize| RigidTransform::from_rotation_vector(Vec3::new(0.1, 0.2 * t as f64, -0.1), Vec3::new(t as f64, 0.5, 0.0));
        let slave = Trajectory::from_fn(1, 5, 3, |_, t, h| pose(t).apply(&body[h]));
        let frames: Vec<_> = (0..5).map(|t| vec![vec![pose(t)]]).collect();
        let tensor = express_in_frames(&slave, &frames).unwrap();
        for k in 0..3 {
            for t in 0..5 {
                assert!((tensor.get(0, k, t, 0) - body[k]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_computed_inverse_transform() {
        // rotation of 90 degrees about z, translation (1, 2, 3)
        let f = RigidTransform::from_rotation_vector(Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2), Vec3::new(1.0, 2.0, 3.0));
        let pts = [Vec3::new(1.0, 3.0, 3.0), Vec3::new(0.0, 2.0, 5.0)];
        let slave = Trajectory::from_fn(2, 1, 1, |n, _, _| pts[n]);
        let tensor = express_in_frames(&slave, &[vec![vec![f], vec![f]]]).unwrap();
        // R^T (p - t): (0,1,0) -> (1,0,0); (-1,0,2) -> (0,1,2)
        assert!((tensor.get(0, 0, 0, 0) - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((tensor.get(0, 0, 0, 1) - Vec3::new(0.0, 1.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn mismatched_frames_rejected() {
        let slave = Trajectory::from_fn(1, 2, 1, |_, _, _| Vec3::zeros());
        assert!(express_in_frames(&slave, &[vec![vec![RigidTransform::identity()]]]).is_err());
    }

    #[test]
    fn variability_examples() {
        let same = vec![Vec3::new(0.3, 0.1, 0.2); 6];
        assert!(pca_variability(&same, 1.0).unwrap().eta.iter().all(|&e| e < 1e-15));

        // dense uniform grid on a segment of length 0.5 along x
        let n = 20001;
        let seg: Vec<Vec3> = (0..n).map(|i| Vec3::new(0.5 * i as f64 / (n - 1) as f64, 0.0, 0.0)).collect();
        let eta = pca_variability(&seg, 1.0).unwrap().eta;
        assert!((eta[0] - 0.5 / 12f64.sqrt()).abs() < 1e-4, "{eta:?}");
        assert!(eta[1] < 1e-12 && eta[2] < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Normal::new(0.0, 0.1).unwrap();
        let cloud: Vec<Vec3> = (0..20000).map(|_| Vec3::new(g.sample(&mut rng), g.sample(&mut rng), g.sample(&mut rng))).collect();
        let eta = pca_variability(&cloud, 1.0).unwrap().eta;
        for e in eta {
            assert!((e - 0.1).abs() < 0.003, "{eta:?}");
        }
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_linear(&[0.001, 0.0005, 0.0], &th(), 5), Some(ConstraintKind::PointToPoint));
        assert_eq!(classify_linear(&[0.3, 0.005, 0.001], &th(), 5), Some(ConstraintKind::PointToLine));
        assert_eq!(classify_linear(&[0.3, 0.2, 0.004], &th(), 5), Some(ConstraintKind::PointToPlane));
        assert_eq!(classify_linear(&[0.3, 0.2, 0.004], &th(), 3), None);
        assert_eq!(classify_linear(&[0.3, 0.005, 0.001], &th(), 2), None);
        assert_eq!(classify_linear(&[0.05, 0.005, 0.001], &th(), 5), None);
    }

    #[test]
    fn linear_constraint_has_orthonormal_basis() {
        let pts = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.1, 0.0), Vec3::new(2.0, -0.1, 0.0), Vec3::new(3.0, 0.0, 0.0)];
        let var = pca_variability(&pts, 3.0).unwrap();
        let c = linear_constraint(&var, ConstraintKind::PointToPlane, 1, 2, 3);
        assert_eq!(c.basis.len(), 2);
        assert!((c.basis[0].dot(&c.basis[1])).abs() < 1e-12);
        for b in &c.basis {
            assert!((b.norm() - 1.0).abs() < 1e-12);
        }
        assert!((c.anchor - Vec3::new(1.5, 0.0, 0.0)).norm() < 1e-12);
    }

    fn one_shot_fixture(slave_pts: &[Vec3]) -> (FrameLocalTensor, FrameBank) {
        let master_pts = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.2, 0.0, 0.0),
            Vec3::new(0.0, 0.2, 0.0),
            Vec3::new(0.0, 0.0, 0.2),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(1.2, 1.0, 0.0),
            Vec3::new(1.0, 1.2, 0.0),
            Vec3::new(1.0, 1.0, 0.2),
        ];
        let master = ObjectRecord::new("m", (0..8).collect(), Trajectory::from_fn(1, 2, 8, |_, _, h| master_pts[h])).unwrap();
        let canonical = compute_canonical_shape(&master).unwrap();
        let bank = build_frame_bank(&master, &canonical, 4).unwrap();
        let frames: Vec<Vec<Vec<RigidTransform>>> = vec![vec![vec![RigidTransform::identity(); bank.len()]]; 2];
        let slave = Trajectory::from_fn(1, 2, slave_pts.len(), |_, t, h| slave_pts[h] + Vec3::new(0.0, 0.0, t as f64 * 0.0));
        (express_in_frames(&slave, &frames).unwrap(), bank)
    }

    #[test]
    fn one_shot_matches_brute_force() {
        // a stick touching the second master cluster at (1.1, 1.1, 0.1)
        let stick: Vec<Vec3> = (0..6).map(|i| Vec3::new(1.1, 1.1, 0.1) + Vec3::new(0.1, 0.12, 0.15) * i as f64).collect();
        let (tensor, bank) = one_shot_fixture(&stick);
        let got = one_shot_extract(&tensor, &bank, 3).unwrap();
        // brute force frame choice
        let mean_dist = |j: usize| stick.iter().map(|p| (p - bank.frames[j].origin).norm()).sum::<f64>();
        let best = (0..bank.len()).min_by(|&a, &b| mean_dist(a).total_cmp(&mean_dist(b))).unwrap();
        assert_eq!(got.frame_id, best);
        assert!(best >= 4);
        assert_eq!(got.keypoints[0], 0);
        assert_eq!(got.keypoints[1], 5);
        assert_eq!(got.constraints.len(), 3);
        assert!(got.constraints.iter().all(|c| c.kind == ConstraintKind::PointToPoint && c.time == 1));
        // k3 maximizes the smaller distance to the two tips: the middle of the stick
        assert!(got.keypoints[2] == 2 || got.keypoints[2] == 3);
    }

    #[test]
    fn one_shot_ties_go_to_lowest_index() {
        let ring: Vec<Vec3> = (0..6)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / 6.0;
                Vec3::new(1.0 + 0.3 * a.cos(), 1.0 + 0.3 * a.sin(), 3.0)
            })
            .collect();
        let (tensor, bank) = one_shot_fixture(&ring);
        let got = one_shot_extract(&tensor, &bank, 2).unwrap();
        let origin = bank.frames[got.frame_id].origin;
        let d: Vec<f64> = ring.iter().map(|p| (p - origin).norm()).collect();
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let first_min = d.iter().position(|&x| x == min).unwrap();
        assert_eq!(got.keypoints[0], first_min);
        assert_eq!(got.keypoints.len(), 2);
    }

    #[test]
    fn one_shot_requires_single_demo() {
        let slave = Trajectory::from_fn(2, 2, 3, |_, _, h| Vec3::new(h as f64, 0.0, 0.0));
        let frames = vec![vec![vec![RigidTransform::identity()]; 2]; 2];
        let tensor = express_in_frames(&slave, &frames).unwrap();
        let bank = FrameBank { frames: Vec::new() };
        assert!(matches!(one_shot_extract(&tensor, &bank, 3), Err(KvilError::NotOneShot(2))));
    }

    fn cloud() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 2..12)
    }

    proptest! {
        #[test]
        fn eta_is_scale_invariant(pts in cloud(), s in 0.01..100.0f64) {
            let a: Vec<Vec3> = pts.iter().map(|p| Vec3::new(p.0, p.1, p.2)).collect();
            let b: Vec<Vec3> = a.iter().map(|p| p * s).collect();
            let ea = pca_variability(&a, 1.3).unwrap().eta;
            let eb = pca_variability(&b, 1.3 * s).unwrap().eta;
            for e in 0..3 {
                prop_assert!((ea[e] - eb[e]).abs() <= 1e-12 * (1.0 + ea[e]) + 1e-9 * ea[0]);
            }
        }

        #[test]
        fn eta_is_rotation_invariant(pts in cloud(), rv in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64)) {
            let a: Vec<Vec3> = pts.iter().map(|p| Vec3::new(p.0, p.1, p.2)).collect();
            let g = RigidTransform::from_rotation_vector(Vec3::new(rv.0, rv.1, rv.2), Vec3::new(0.3, -2.0, 1.0));
            let b: Vec<Vec3> = a.iter().map(|p| g.apply(p)).collect();
            let ea = pca_variability(&a, 1.0).unwrap().eta;
            let eb = pca_variability(&b, 1.0).unwrap().eta;
            for e in 0..3 {
                prop_assert!((ea[e] - eb[e]).abs() <= 1e-9);
            }
        }

        #[test]
        fn gating_is_monotone(e1 in 0.0..0.5f64, r2 in 0.0..1.0f64, r3 in 0.0..1.0f64) {
            let eta = [e1, e1 * r2, e1 * r2 * r3];
            for n in 0..=3 {
                let k = classify_linear(&eta, &th(), n);
                prop_assert!(k != Some(ConstraintKind::PointToPlane));
                if n <= 2 {
                    prop_assert!(k != Some(ConstraintKind::PointToLine));
                }
                if let Some(kind) = k {
                    let wider = classify_linear(&eta, &th(), 4);
                    prop_assert!(wider == Some(kind) || kind == ConstraintKind::PointToLine);
                }
            }
        }
    }

    #[test]
    fn one_shot_random_scenes_match_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pts: Vec<Vec3> = (0..7).map(|_| Vec3::new(rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0), rng.gen_range(0.5..2.0))).collect();
            let (tensor, bank) = one_shot_fixture(&pts);
            let got = one_shot_extract(&tensor, &bank, 3).unwrap();
            let origin = bank.frames[got.frame_id].origin;
            let d: Vec<f64> = pts.iter().map(|p| (p - origin).norm()).collect();
            let k1 = (0..7).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
            let k2 = (0..7).rev().max_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
            assert_eq!(got.keypoints[..2], [k1, k2]);
        }
    }
}
