//! Keypoint-based admittance control: per-keypoint attraction and density
//! forces, priority projection, wrench aggregation and the admittance law.

use nalgebra::{Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::constraint::Constraint;
use crate::error::{KvilError, Result};
use crate::geometry::{RigidTransform, Vec3};
use crate::pme::Chart;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointGains {
    pub stiffness: Vec3,
    pub damping: Vec3,
}

impl KeypointGains {
    pub fn isotropic(stiffness: f64, damping: f64) -> Self {
        Self {
            stiffness: Vec3::repeat(stiffness),
            damping: Vec3::repeat(damping),
        }
    }

    /// Damping `2·sqrt(stiffness)`.
    pub fn critically_damped(stiffness: f64) -> Self {
        Self::isotropic(stiffness, 2.0 * stiffness.sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// Per-keypoint gains in task order; missing entries use `default_keypoint`.
    pub keypoints: Vec<KeypointGains>,
    pub default_keypoint: KeypointGains,
    pub g1: f64,
    pub g2: f64,
    pub virtual_stiffness: f64,
    pub virtual_damping: f64,
    pub virtual_compliance: f64,
    pub rotational_stiffness: f64,
    pub rotational_damping: f64,
    pub rotational_compliance: f64,
    pub tracking_stiffness: f64,
    pub tracking_damping: f64,
    pub bias_force: Vec3,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            keypoints: Vec::new(),
            default_keypoint: KeypointGains::isotropic(400.0, 40.0),
            g1: 5.0,
            g2: 5.0,
            virtual_stiffness: 100.0,
            virtual_damping: 20.0,
            virtual_compliance: 1.0,
            rotational_stiffness: 100.0,
            rotational_damping: 20.0,
            rotational_compliance: 50.0,
            tracking_stiffness: 900.0,
            tracking_damping: 60.0,
            bias_force: Vec3::zeros(),
        }
    }
}

impl ControllerGains {
    pub fn keypoint(&self, l: usize) -> KeypointGains {
        self.keypoints.get(l).copied().unwrap_or(self.default_keypoint)
    }

    /// Gains for three prioritized point constraints: `K1 = 5·K2 = 10·K3`,
    /// each critically damped.
    pub fn one_shot(k1: f64) -> Self {
        Self {
            keypoints: [k1, k1 / 5.0, k1 / 10.0].into_iter().map(KeypointGains::critically_damped).collect(),
            ..Self::default()
        }
    }

    /// Same gains with every keypoint spring set to `stiffness`, critically
    /// damped.
    pub fn with_stiffness(self, stiffness: f64) -> Self {
        Self {
            keypoints: Vec::new(),
            default_keypoint: KeypointGains::critically_damped(stiffness),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            self.g1,
            self.g2,
            self.virtual_stiffness,
            self.virtual_damping,
            self.virtual_compliance,
            self.rotational_stiffness,
            self.rotational_damping,
            self.rotational_compliance,
            self.tracking_stiffness,
            self.tracking_damping,
        ];
        let diagonals = self
            .keypoints
            .iter()
            .chain(std::iter::once(&self.default_keypoint))
            .flat_map(|k| k.stiffness.iter().chain(k.damping.iter()).copied().collect::<Vec<_>>());
        if scalars.into_iter().chain(diagonals).any(|g| !(g >= 0.0) || !g.is_finite()) {
            return Err(KvilError::UnitError("controller gains must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// `K̄p (k* − k) + K̄d (k̇* − k̇)` with diagonal gains.
pub fn attraction_force(k: &Vec3, k_dot: &Vec3, target: &Vec3, target_dot: &Vec3, gains: &KeypointGains) -> Vec3 {
    gains.stiffness.component_mul(&(target - k)) + gains.damping.component_mul(&(target_dot - k_dot))
}

/// Kernel density over demonstrated target charts with squared-exponential
/// kernels, normalized so the density of a single coincident sample is 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    pub dim: usize,
    pub samples: Vec<Chart>,
    pub bandwidth: [f64; 2],
    pub mean: Chart,
}

const MIN_BANDWIDTH: f64 = 1e-6;

/// Silverman's rule per chart axis.
pub fn fit_density(targets: &[Chart], dim: usize) -> Result<DensityModel> {
    let n = targets.len();
    if n < 2 {
        return Err(KvilError::InsufficientTargets(n));
    }
    if !(1..=2).contains(&dim) {
        return Err(KvilError::InsufficientData(format!("density charts must be 1D or 2D, got {dim}")));
    }
    let mut mean = [0.0; 2];
    for u in targets {
        for i in 0..dim {
            mean[i] += u[i] / n as f64;
        }
    }
    let factor = (4.0 / ((dim as f64 + 2.0) * n as f64)).powf(1.0 / (dim as f64 + 4.0));
    let mut bandwidth = [1.0; 2];
    for i in 0..dim {
        let var = targets.iter().map(|u| (u[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1) as f64;
        bandwidth[i] = (var.sqrt() * factor).max(MIN_BANDWIDTH);
    }
    Ok(DensityModel {
        dim,
        samples: targets.to_vec(),
        bandwidth,
        mean,
    })
}

impl DensityModel {
    fn kernel(&self, u: &Chart, s: &Chart) -> f64 {
        let q: f64 = (0..self.dim).map(|i| ((u[i] - s[i]) / self.bandwidth[i]).powi(2)).sum();
        (-0.5 * q).exp()
    }

    pub fn density(&self, u: &Chart) -> f64 {
        self.samples.iter().map(|s| self.kernel(u, s)).sum::<f64>() / self.samples.len() as f64
    }

    pub fn gradient(&self, u: &Chart) -> Chart {
        let mut g = [0.0; 2];
        for s in &self.samples {
            let k = self.kernel(u, s);
            for i in 0..self.dim {
                g[i] -= k * (u[i] - s[i]) / (self.bandwidth[i] * self.bandwidth[i]);
            }
        }
        let n = self.samples.len() as f64;
        [g[0] / n, g[1] / n]
    }
}

fn push_forward(tangents: &[Vec3], v: &Chart) -> Vec3 {
    tangents.iter().enumerate().fold(Vec3::zeros(), |acc, (i, t)| acc + t * v[i])
}

/// The larger of the gradient-driven and the mean-seeking density force at
/// the foot point of `k`, in the constraint's coordinates.
pub fn density_force(model: &DensityModel, constraint: &Constraint, k: &Vec3, g1: f64, g2: f64) -> Vec3 {
    let u = constraint.chart(k);
    let tangents = constraint.tangents(&u);
    let grad = model.gradient(&u);
    let f1 = push_forward(&tangents, &grad) * g1;
    let mut offset = [0.0; 2];
    for i in 0..model.dim {
        offset[i] = model.mean[i] - u[i];
    }
    let len = offset.iter().map(|o| o * o).sum::<f64>().sqrt();
    let f2 = if len > 1e-12 {
        push_forward(&tangents, &[offset[0] / len, offset[1] / len]) * g2
    } else {
        Vec3::zeros()
    };
    if f2.norm() > f1.norm() {
        f2
    } else {
        f1
    }
}

/// Restricts a density force at `k2` so it cannot move the higher-priority
/// keypoint `k1`. `tangents` spans the local linearization of `k2`'s
/// manifold: one vector for lines and curves, two for planes and surfaces.
pub fn priority_project(force: &Vec3, k1: &Vec3, k2: &Vec3, tangents: &[Vec3]) -> Result<Vec3> {
    let radial = k2 - k1;
    let r = radial.norm();
    if r < 1e-9 {
        return Err(KvilError::DegenerateRadius);
    }
    let r_hat = radial / r;
    let tangential = force - r_hat * force.dot(&r_hat);
    if tangents.len() < 2 {
        return Ok(tangential);
    }
    let Some(normal) = tangents[0].cross(&tangents[1]).try_normalize(1e-15) else {
        return Ok(tangential);
    };
    match r_hat.cross(&normal).try_normalize(1e-9) {
        Some(dir) => Ok(dir * force.dot(&dir)),
        None => Ok(tangential),
    }
}

/// Net force, torque about the virtual TCP, and the TCP itself.
pub fn aggregate_wrench(keypoints: &[Vec3], forces: &[Vec3]) -> (Vec3, Vec3, Vec3) {
    let tcp = keypoints.iter().sum::<Vec3>() / keypoints.len() as f64;
    let force = forces.iter().sum();
    let torque = keypoints.iter().zip(forces).map(|(k, f)| (k - tcp).cross(f)).sum();
    (force, torque, tcp)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vec3,
    pub torque: Vec3,
}

/// Pose and twist of a unit-mass, unit-inertia body. The translation is the
/// position of the virtual TCP.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub pose: RigidTransform,
    pub velocity: Vec3,
    pub angular_velocity: Vec3,
}

impl BodyState {
    pub fn at_rest(pose: RigidTransform) -> Self {
        Self {
            pose,
            ..Self::default()
        }
    }

    /// Velocity of the body point currently at `p`.
    pub fn point_velocity(&self, p: &Vec3) -> Vec3 {
        self.velocity + self.angular_velocity.cross(&(p - self.pose.translation))
    }

    fn advance(&mut self, accel: &Vec3, angular_accel: &Vec3, dt: f64) {
        self.velocity += accel * dt;
        self.pose.translation += self.velocity * dt;
        self.angular_velocity += angular_accel * dt;
        let mut r = Rotation3::new(self.angular_velocity * dt) * Rotation3::from_matrix_unchecked(self.pose.rotation);
        r.renormalize();
        self.pose.rotation = r.into_inner();
    }

    fn norm(&self) -> f64 {
        self.pose.translation.norm().max(self.velocity.norm()).max(self.angular_velocity.norm())
    }
}

/// Rotation vector of `a · bᵀ`.
fn rotation_error(a: &nalgebra::Matrix3<f64>, b: &nalgebra::Matrix3<f64>) -> Vec3 {
    UnitQuaternion::from_matrix(&(a * b.transpose())).scaled_axis()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceState {
    /// Rest pose `x0` of the virtual spring.
    pub rest: RigidTransform,
    pub virtual_body: BodyState,
    pub body: BodyState,
    pub step: usize,
}

impl AdmittanceState {
    pub fn at_rest(pose: RigidTransform) -> Self {
        Self {
            rest: pose,
            virtual_body: BodyState::at_rest(pose),
            body: BodyState::at_rest(pose),
            step: 0,
        }
    }
}

/// One semi-implicit Euler step of the virtual admittance and of the body
/// tracking it.
pub fn admittance_step(state: &AdmittanceState, wrench: &Wrench, gains: &ControllerGains, dt: f64) -> Result<AdmittanceState> {
    if !(dt > 0.0) {
        return Err(KvilError::UnitError(format!("time step must be positive, got {dt}")));
    }
    let mut next = *state;
    let v = &state.virtual_body;
    let accel = (state.rest.translation - v.pose.translation) * gains.virtual_stiffness - v.velocity * gains.virtual_damping
        + wrench.force * gains.virtual_compliance;
    let angular = rotation_error(&state.rest.rotation, &v.pose.rotation) * gains.rotational_stiffness
        - v.angular_velocity * gains.rotational_damping
        + wrench.torque * gains.rotational_compliance;
    next.virtual_body.advance(&accel, &angular, dt);

    let v = &next.virtual_body;
    let b = &state.body;
    let accel = (v.pose.translation - b.pose.translation) * gains.tracking_stiffness
        + (v.velocity - b.velocity) * gains.tracking_damping
        + gains.bias_force;
    let angular = rotation_error(&v.pose.rotation, &b.pose.rotation) * gains.tracking_stiffness
        + (v.angular_velocity - b.angular_velocity) * gains.tracking_damping;
    next.body.advance(&accel, &angular, dt);
    next.step += 1;

    let norm = next.virtual_body.norm().max(next.body.norm());
    if !norm.is_finite() || norm > 1e6 {
        return Err(KvilError::NumericalBlowup { step: next.step, norm });
    }
    Ok(next)
}
