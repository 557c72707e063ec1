//! Via-point movement primitives: a linear elementary trajectory plus a
//! squared-exponential shape term over a canonical clock running 1 → 0.
//!
//! The elementary trajectory passes through `y0 - ψ(1)ᵀw` and `g - ψ(0)ᵀw`,
//! so start and goal are met exactly whatever the weights.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraint::Constraint;
use crate::error::{KvilError, Result};
use crate::geometry::Vec3;

pub const DEFAULT_KERNELS: usize = 20;
/// Activation of a kernel at its neighbor's center.
const OVERLAP: f64 = 0.55;
const RIDGE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmpModel {
    pub dim: usize,
    pub centers: Vec<f64>,
    pub width: f64,
    /// Weight mean per output dimension.
    pub mean: Vec<Vec<f64>>,
    /// Weight covariance per output dimension, row-major.
    pub cov: Vec<Vec<Vec<f64>>>,
    /// Average demonstrated start and goal.
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
}

fn kernel_layout(n_k: usize) -> (Vec<f64>, f64) {
    let spacing = 1.0 / (n_k - 1) as f64;
    let centers = (0..n_k).map(|i| spacing * i as f64).collect();
    let width = -OVERLAP.ln() / (spacing * spacing);
    (centers, width)
}

impl VmpModel {
    pub fn kernels(&self) -> usize {
        self.centers.len()
    }

    fn psi(&self, x: f64) -> DVector<f64> {
        DVector::from_iterator(self.centers.len(), self.centers.iter().map(|c| (-self.width * (x - c).powi(2)).exp()))
    }

    /// Shape features with the elementary correction folded in; zero at both ends.
    fn features(&self, x: f64) -> DVector<f64> {
        let p0 = self.psi(0.0);
        let p1 = self.psi(1.0);
        self.psi(x) - p0 * (1.0 - x) - p1 * x
    }

    /// Output at phase `x` for start `y0` and goal `g` using the mean weights.
    pub fn eval(&self, x: f64, y0: &[f64], g: &[f64]) -> Vec<f64> {
        let phi = self.features(x);
        (0..self.dim)
            .map(|d| (1.0 - x) * g[d] + x * y0[d] + phi.iter().zip(&self.mean[d]).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Samples `steps` points from x = 1 down to x = 0.
    pub fn rollout(&self, y0: &[f64], g: &[f64], steps: usize) -> Vec<Vec<f64>> {
        let steps = steps.max(2);
        (0..steps).map(|s| self.eval(1.0 - s as f64 / (steps - 1) as f64, y0, g)).collect()
    }

    /// Like `rollout`, passing through `(x, y)` via-points by splitting the
    /// elementary trajectory into linear pieces.
    pub fn rollout_via(&self, y0: &[f64], g: &[f64], via: &[(f64, Vec<f64>)], steps: usize) -> Vec<Vec<f64>> {
        let steps = steps.max(2);
        (0..steps).map(|s| self.eval_via(1.0 - s as f64 / (steps - 1) as f64, y0, g, via)).collect()
    }

    pub fn eval_via(&self, x: f64, y0: &[f64], g: &[f64], via: &[(f64, Vec<f64>)]) -> Vec<f64> {
        // knots ordered by decreasing phase; via values are targets for the full output
        let mut knots: Vec<(f64, Vec<f64>)> = vec![(1.0, y0.to_vec())];
        let mut inner: Vec<&(f64, Vec<f64>)> = via.iter().filter(|(xv, _)| *xv > 0.0 && *xv < 1.0).collect();
        inner.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (xv, yv) in inner {
            let shape = self.shape(*xv);
            knots.push((*xv, (0..self.dim).map(|d| yv[d] - shape[d]).collect()));
        }
        knots.push((0.0, g.to_vec()));
        let i = knots.iter().rposition(|(xk, _)| *xk >= x).unwrap_or(0).min(knots.len() - 2);
        let (xa, ya) = &knots[i];
        let (xb, yb) = &knots[i + 1];
        let a = if xa > xb { (x - xb) / (xa - xb) } else { 1.0 };
        let shape = self.shape(x);
        (0..self.dim).map(|d| (1.0 - a) * yb[d] + a * ya[d] + shape[d]).collect()
    }

    fn shape(&self, x: f64) -> Vec<f64> {
        let phi = self.features(x);
        (0..self.dim).map(|d| phi.iter().zip(&self.mean[d]).map(|(a, b)| a * b).sum()).collect()
    }

    /// Gaussian conditioning of the weights on passing through `y` at `x`.
    /// Fails when the weight covariance carries no information at `x`.
    pub fn condition(&self, x: f64, y: &[f64], y0: &[f64], g: &[f64], noise: f64) -> Result<VmpModel> {
        let phi = self.features(x);
        let mut out = self.clone();
        for d in 0..self.dim {
            let cov = DMatrix::from_fn(self.kernels(), self.kernels(), |r, c| self.cov[d][r][c]);
            let mean = DVector::from_vec(self.mean[d].clone());
            let s = (phi.transpose() * &cov * &phi)[(0, 0)] + noise;
            if s <= 1e-14 {
                return Err(KvilError::RankDeficient);
            }
            let predicted = (1.0 - x) * g[d] + x * y0[d] + phi.dot(&mean);
            let gain = &cov * &phi / s;
            let new_mean = &mean + &gain * (y[d] - predicted);
            let new_cov = &cov - &gain * (phi.transpose() * &cov);
            out.mean[d] = new_mean.iter().copied().collect();
            out.cov[d] = (0..self.kernels()).map(|r| (0..self.kernels()).map(|c| new_cov[(r, c)]).collect()).collect();
        }
        Ok(out)
    }
}

/// Fits a model to demos given as `[demo][sample][dim]`, samples spanning x = 1 → 0.
pub fn fit_vmp(trajectories: &[Vec<Vec<f64>>], n_k: usize) -> Result<VmpModel> {
    if trajectories.is_empty() {
        return Err(KvilError::EmptySequence("no demonstrations".into()));
    }
    if n_k < 2 {
        return Err(KvilError::InsufficientData(format!("{n_k} kernels")));
    }
    let t = trajectories[0].len();
    if t < n_k || trajectories.iter().any(|d| d.len() != t) {
        return Err(KvilError::InsufficientData(format!("{t} samples for {n_k} kernels")));
    }
    let dim = trajectories[0][0].len();
    if dim == 0 || trajectories.iter().flatten().any(|s| s.len() != dim) {
        return Err(KvilError::SchemaError("inconsistent output dimension".into()));
    }
    let (centers, width) = kernel_layout(n_k);
    let mut model = VmpModel {
        dim,
        centers,
        width,
        mean: vec![vec![0.0; n_k]; dim],
        cov: vec![vec![vec![0.0; n_k]; n_k]; dim],
        start: vec![0.0; dim],
        goal: vec![0.0; dim],
    };
    let phase: Vec<f64> = (0..t).map(|s| 1.0 - s as f64 / (t - 1) as f64).collect();
    let design = DMatrix::from_fn(t, n_k, |r, c| model.features(phase[r])[c]);
    let mut normal = design.transpose() * &design;
    for i in 0..n_k {
        normal[(i, i)] += RIDGE;
    }
    let chol = normal.cholesky().ok_or(KvilError::RankDeficient)?;

    let n = trajectories.len() as f64;
    for d in 0..dim {
        let weights: Vec<DVector<f64>> = trajectories
            .iter()
            .map(|demo| {
                let (y0, g) = (demo[0][d], demo[t - 1][d]);
                let residual = DVector::from_fn(t, |r, _| demo[r][d] - ((1.0 - phase[r]) * g + phase[r] * y0));
                chol.solve(&(design.transpose() * residual))
            })
            .collect();
        let mean = weights.iter().fold(DVector::zeros(n_k), |a, w| a + w) / n;
        let mut cov = DMatrix::zeros(n_k, n_k);
        if weights.len() > 1 {
            for w in &weights {
                let e = w - &mean;
                cov += &e * e.transpose();
            }
            cov /= n - 1.0;
        }
        model.mean[d] = mean.iter().copied().collect();
        model.cov[d] = (0..n_k).map(|r| (0..n_k).map(|c| cov[(r, c)]).collect()).collect();
        model.start[d] = trajectories.iter().map(|demo| demo[0][d]).sum::<f64>() / n;
        model.goal[d] = trajectories.iter().map(|demo| demo[t - 1][d]).sum::<f64>() / n;
    }
    Ok(model)
}

/// Linear resampling of a sequence to `count` samples.
pub fn resample(seq: &[Vec<f64>], count: usize) -> Vec<Vec<f64>> {
    if seq.len() == 1 {
        return vec![seq[0].clone(); count];
    }
    (0..count)
        .map(|i| {
            let s = i as f64 * (seq.len() - 1) as f64 / (count - 1) as f64;
            let k = (s.floor() as usize).min(seq.len() - 2);
            let a = s - k as f64;
            seq[k].iter().zip(&seq[k + 1]).map(|(p, q)| (1.0 - a) * p + a * q).collect()
        })
        .collect()
}

/// Distance of each sample to the constraint manifold.
pub fn project_orthogonal(constraint: &Constraint, traj: &[Vec3]) -> Vec<f64> {
    traj.iter().map(|x| constraint.distance(x)).collect()
}

/// Canonical phase over a movement of `duration` seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalClock {
    pub duration: f64,
    pub dt: f64,
}

impl CanonicalClock {
    pub fn phase(&self, time: f64) -> f64 {
        (1.0 - time / self.duration).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::{ConstraintKind, LinearConstraint};
    use proptest::prelude::*;

    fn demo(f: impl Fn(f64) -> Vec<f64>, t: usize) -> Vec<Vec<f64>> {
        (0..t).map(|s| f(1.0 - s as f64 / (t - 1) as f64)).collect()
    }

    fn rms(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let sum: f64 = a.iter().zip(b).map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).sum();
        (sum / a.len() as f64).sqrt()
    }

    #[test]
    fn straight_lines_need_no_shape() {
        let demos = vec![
            demo(|x| vec![x * 2.0, 1.0 - x], 50),
            demo(|x| vec![x * 0.5 + 0.1, 3.0 * x], 50),
        ];
        let m = fit_vmp(&demos, 20).unwrap();
        for d in 0..2 {
            let norm: f64 = m.mean[d].iter().map(|w| w * w).sum::<f64>().sqrt();
            assert!(norm <= 1e-6, "{norm}");
        }
    }

    #[test]
    fn sine_demo_is_reconstructed() {
        let amp = 0.3;
        let d = demo(|x| vec![0.5 * x + amp * (3.0 * std::f64::consts::PI * x).sin()], 100);
        let m = fit_vmp(std::slice::from_ref(&d), 20).unwrap();
        let out = m.rollout(&d[0], &d[99], 100);
        assert!(rms(&out, &d) <= 1e-3 * amp, "{}", rms(&out, &d));
        assert!(m.cov[0].iter().flatten().all(|&c| c == 0.0));
    }

    #[test]
    fn identical_demos_have_zero_covariance() {
        let d = demo(|x| vec![(2.0 * x).sin(), x * x], 40);
        let m = fit_vmp(&[d.clone(), d], 10).unwrap();
        assert!(m.cov.iter().flatten().flatten().all(|&c| c.abs() < 1e-20));
    }

    #[test]
    fn zero_weights_interpolate_linearly() {
        let mut m = fit_vmp(&[demo(|x| vec![x], 30)], 10).unwrap();
        m.mean = vec![vec![0.0; 10]];
        let out = m.rollout(&[2.0], &[-1.0], 31);
        for (s, y) in out.iter().enumerate() {
            let x = 1.0 - s as f64 / 30.0;
            assert!((y[0] - (-1.0 + 3.0 * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn goal_adaptation_is_exact() {
        let d = demo(|x| vec![x + 0.2 * (5.0 * x).sin()], 60);
        let m = fit_vmp(std::slice::from_ref(&d), 20).unwrap();
        let g = d[59][0] + 0.2;
        let out = m.rollout(&d[0], &[g], 60);
        assert!((out[59][0] - g).abs() <= 1e-6);
        assert_eq!(out[0][0], d[0][0]);
    }

    #[test]
    fn orthogonal_profile_reaches_zero() {
        let d = demo(|x| vec![0.3 * x * x], 40);
        let m = fit_vmp(&[d], 20).unwrap();
        let out = m.rollout(&[0.25], &[0.0], 80);
        assert!(out[79][0].abs() <= 1e-6);
    }

    #[test]
    fn via_point_is_hit() {
        let d = demo(|x| vec![x + 0.1 * (4.0 * x).sin(), 0.5 * x], 50);
        let m = fit_vmp(std::slice::from_ref(&d), 20).unwrap();
        let via = vec![(0.5, vec![2.0, -1.0])];
        let y = m.eval_via(0.5, &d[0], &d[49], &via);
        assert!((y[0] - 2.0).abs() < 1e-12 && (y[1] + 1.0).abs() < 1e-12);
        let out = m.rollout_via(&d[0], &d[49], &via, 11);
        assert_eq!(out[0], d[0]);
        assert!((out[10][0] - d[49][0]).abs() < 1e-12);
    }

    #[test]
    fn conditioning_passes_through_point() {
        let demos: Vec<_> = (0..6).map(|i| demo(|x| vec![x + 0.05 * i as f64 * (3.0 * x).sin()], 40)).collect();
        let m = fit_vmp(&demos, 10).unwrap();
        let y = m.eval(0.5, &[1.0], &[0.0])[0] + 0.02;
        let c = m.condition(0.5, &[y], &[1.0], &[0.0], 1e-12).unwrap();
        assert!((c.eval(0.5, &[1.0], &[0.0])[0] - y).abs() < 1e-6);
        let single = fit_vmp(&demos[..1], 10).unwrap();
        assert!(matches!(single.condition(0.5, &[y], &[1.0], &[0.0], 0.0), Err(KvilError::RankDeficient)));
    }

    #[test]
    fn rejects_short_trajectories() {
        assert!(fit_vmp(&[demo(|x| vec![x], 10)], 20).is_err());
        assert!(fit_vmp(&[], 20).is_err());
    }

    #[test]
    fn orthogonal_projection_examples() {
        let c = Constraint::Linear(LinearConstraint {
            kind: ConstraintKind::PointToLine,
            anchor: Vec3::zeros(),
            basis: vec![Vec3::x()],
            frame_id: 0,
            time: 0,
            keypoint: 0,
        });
        let on: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(project_orthogonal(&c, &on).iter().all(|&d| d == 0.0));
        let off: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.1)).collect();
        assert!(project_orthogonal(&c, &off).iter().all(|&d| (d - 0.1).abs() < 1e-15));
    }

    #[test]
    fn resample_keeps_endpoints() {
        let seq = vec![vec![0.0], vec![1.0], vec![4.0]];
        let r = resample(&seq, 5);
        assert_eq!(r[0], vec![0.0]);
        assert_eq!(r[4], vec![4.0]);
        assert!((r[1][0] - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn temporal_rescaling_matches(steps in 2usize..200, a in -1.0..1.0f64, g in -1.0..1.0f64) {
            let d = demo(|x| vec![x * 0.7 + 0.2 * (6.0 * x).cos()], 60);
            let m = fit_vmp(&[d], 20).unwrap();
            let coarse = m.rollout(&[a], &[g], steps);
            let fine = m.rollout(&[a], &[g], 2 * (steps - 1) + 1);
            for (s, y) in coarse.iter().enumerate() {
                prop_assert!((y[0] - fine[2 * s][0]).abs() <= 1e-9);
            }
        }

        #[test]
        fn start_is_exact(a in -5.0..5.0f64, g in -5.0..5.0f64) {
            let d = demo(|x| vec![x * x - 0.3 * x], 40);
            let m = fit_vmp(&[d], 20).unwrap();
            let out = m.rollout(&[a], &[g], 30);
            prop_assert_eq!(out[0][0], a);
            prop_assert_eq!(out[29][0], g);
        }
    }
}
