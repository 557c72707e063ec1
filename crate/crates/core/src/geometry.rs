//! Rigid-body geometry, trajectory containers and trajectory conditioning.

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{KvilError, Result};

/// A point or free vector in task space, in meters.
pub type Vec3 = Vector3<f64>;

/// Proper rigid transform `x -> rotation * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Rotation given as an axis-angle (rotation) vector.
    pub fn from_rotation_vector(rotvec: Vec3, translation: Vec3) -> Self {
        Self {
            rotation: Rotation3::new(rotvec).into_inner(),
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Checks orthonormality and handedness within `tol`.
    pub fn is_proper(&self, tol: f64) -> bool {
        let gram = self.rotation.transpose() * self.rotation;
        (gram - Matrix3::identity()).abs().max() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// Largest absolute component difference of rotation and translation.
    pub fn max_component_diff(&self, other: &RigidTransform) -> f64 {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }
}

/// A non-empty list of points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSet(Vec<Vec3>);

impl PointSet {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(KvilError::EmptySequence("point set has no points".into()));
        }
        Ok(Self(points))
    }

    pub fn points(&self) -> &[Vec3] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<Vec3> {
        self.0
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.0)
    }

    pub fn transformed(&self, g: &RigidTransform) -> Self {
        Self(self.0.iter().map(|p| g.apply(p)).collect())
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    let sum = points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
    sum / points.len().max(1) as f64
}

/// Maximum Euclidean distance over all pairs of points (brute force).
pub fn max_pairwise_distance(points: &[Vec3]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

/// Dense `[demo][time][point]` array of positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    demos: usize,
    time_steps: usize,
    points: usize,
    data: Vec<Vec3>,
}

impl Trajectory {
    pub fn from_fn(
        demos: usize,
        time_steps: usize,
        points: usize,
        mut f: impl FnMut(usize, usize, usize) -> Vec3,
    ) -> Self {
        let mut data = Vec::with_capacity(demos * time_steps * points);
        for n in 0..demos {
            for t in 0..time_steps {
                for h in 0..points {
                    data.push(f(n, t, h));
                }
            }
        }
        Self {
            demos,
            time_steps,
            points,
            data,
        }
    }

    pub fn demos(&self) -> usize {
        self.demos
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn points(&self) -> usize {
        self.points
    }

    fn index(&self, n: usize, t: usize, h: usize) -> usize {
        debug_assert!(n < self.demos && t < self.time_steps && h < self.points);
        (n * self.time_steps + t) * self.points + h
    }

    pub fn get(&self, n: usize, t: usize, h: usize) -> Vec3 {
        self.data[self.index(n, t, h)]
    }

    pub fn set(&mut self, n: usize, t: usize, h: usize, p: Vec3) {
        let i = self.index(n, t, h);
        self.data[i] = p;
    }

    /// All points of demo `n` at time `t`.
    pub fn frame(&self, n: usize, t: usize) -> &[Vec3] {
        let start = self.index(n, t, 0);
        &self.data[start..start + self.points]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }

    pub fn transformed(&self, g: &RigidTransform) -> Self {
        Self {
            data: self.data.iter().map(|p| g.apply(p)).collect(),
            ..self.clone()
        }
    }

    /// Largest coordinate difference to another trajectory of identical shape.
    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        assert_eq!(
            (self.demos, self.time_steps, self.points),
            (other.demos, other.time_steps, other.points)
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs().max())
            .fold(0.0, f64::max)
    }
}

/// Least-squares rigid transform mapping `source` onto `target` (no scale).
pub fn align_rigid(source: &[Vec3], target: &[Vec3]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(KvilError::DegenerateGeometry(format!(
            "point count mismatch: {} vs {}",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(KvilError::DegenerateGeometry(
            "rigid alignment needs at least 3 points".into(),
        ));
    }
    let cs = centroid(source);
    let ct = centroid(target);

    let mut scatter = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        let ds = s - cs;
        let dt = t - ct;
        scatter += ds * ds.transpose();
        cross += dt * ds.transpose();
    }

    let eig = SymmetricEigen::new(scatter);
    let mut ev: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let spread = ev[0].sqrt();
    if spread <= 1e-12 {
        return Err(KvilError::DegenerateGeometry(
            "source points coincide".into(),
        ));
    }
    if ev[1].sqrt() <= 1e-9 * spread {
        return Err(KvilError::DegenerateGeometry(
            "source points are collinear".into(),
        ));
    }

    let svd = SVD::new(cross, true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut correction = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        correction[(2, 2)] = -1.0;
    }
    let rotation = u * correction * v_t;
    let translation = ct - rotation * cs;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// Root-mean-square residual of `transform(source)` against `target`.
pub fn alignment_rms(transform: &RigidTransform, source: &[Vec3], target: &[Vec3]) -> f64 {
    let sum: f64 = source
        .iter()
        .zip(target)
        .map(|(s, t)| (transform.apply(s) - t).norm_squared())
        .sum();
    (sum / source.len() as f64).sqrt()
}

/// Linearly reinterpolates every demo onto `time_steps` uniform phases in
/// `[0, 1]`. `raw[n][s][h]` is point `h` at raw sample `s` of demo `n`.
pub fn resample_normalize(raw: &[Vec<Vec<Vec3>>], time_steps: usize) -> Result<Trajectory> {
    if raw.is_empty() {
        return Err(KvilError::EmptySequence("no demonstrations".into()));
    }
    let points = raw[0].first().map(Vec::len).unwrap_or(0);
    for (n, demo) in raw.iter().enumerate() {
        let len = demo.len();
        let same_length = len == time_steps && len > 0;
        if !same_length && (len < 2 || time_steps < 2) {
            return Err(KvilError::EmptySequence(format!(
                "demo {n} has {len} samples, cannot resample to {time_steps}"
            )));
        }
        if let Some(s) = demo.iter().position(|frame| frame.len() != points) {
            return Err(KvilError::SchemaError(format!(
                "demo {n} sample {s} has {} points, expected {points}",
                demo[s].len()
            )));
        }
    }

    Ok(Trajectory::from_fn(raw.len(), time_steps, points, |n, t, h| {
        let demo = &raw[n];
        let len = demo.len();
        if len == time_steps {
            return demo[t][h];
        }
        // exact integer phase arithmetic keeps both endpoints bit-identical
        let num = t * (len - 1);
        let den = time_steps - 1;
        let lo = num / den;
        let rem = num % den;
        if rem == 0 {
            demo[lo][h]
        } else {
            let w = rem as f64 / den as f64;
            demo[lo][h] * (1.0 - w) + demo[lo + 1][h] * w
        }
    }))
}

fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Centered moving average over time with mirrored boundaries.
pub fn smooth(traj: &Trajectory, window: usize) -> Result<Trajectory> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(KvilError::SchemaError(format!(
            "smoothing window must be odd and positive, got {window}"
        )));
    }
    if window == 1 {
        return Ok(traj.clone());
    }
    let half = (window / 2) as isize;
    let len = traj.time_steps();
    Ok(Trajectory::from_fn(
        traj.demos(),
        len,
        traj.points(),
        |n, t, h| {
            let mut acc = Vec3::zeros();
            for o in -half..=half {
                acc += traj.get(n, reflect_index(t as isize + o, len), h);
            }
            acc / window as f64
        },
    ))
}

/// Covariance eigen-decomposition of a point cloud: eigenvalues sorted
/// descending (population variance) with matching unit eigenvectors.
pub fn principal_axes(points: &[Vec3]) -> (Vec3, [f64; 3], [Vec3; 3]) {
    let mean = centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.map(|i| eig.eigenvalues[i].max(0.0));
    let vectors = order.map(|i| eig.eigenvectors.column(i).into_owned());
    (mean, values, vectors)
}
