//! Synthetic demonstrations with known constraints: a static master block and
//! a stick-shaped slave whose tip is brought onto a point, line, plane, arc or
//! spherical cap in the master frame.

use std::fmt;
use std::str::FromStr;

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::constraint::ConstraintKind;
use crate::error::{KvilError, Result};
use crate::geometry::{principal_axes, RigidTransform, Trajectory, Vec3};
use crate::ingest::{DemonstrationSet, ObjectRecord};
use crate::sim::{SceneInstance, SlaveBody};
use crate::task::{ObjectSummary, TaskRepresentation};

pub const MASTER_NAME: &str = "block";
pub const SLAVE_NAME: &str = "stick";

const MASTER_SEED: u64 = 0x6b76_696c;
const AXIS_POINTS: usize = 10;
const INSERT_AXIS_POINTS: usize = 16;
const DWELL_STEPS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyntheticKind {
    #[serde(rename = "p2p")]
    Point,
    #[serde(rename = "p2l")]
    Line,
    #[serde(rename = "p2P")]
    Plane,
    #[serde(rename = "p2c")]
    Curve,
    #[serde(rename = "p2S")]
    Surface,
    #[serde(rename = "oneshot")]
    OneShot,
    #[serde(rename = "insert")]
    Insert,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 7] = [
        SyntheticKind::Point,
        SyntheticKind::Line,
        SyntheticKind::Plane,
        SyntheticKind::Curve,
        SyntheticKind::Surface,
        SyntheticKind::OneShot,
        SyntheticKind::Insert,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticKind::Point => "p2p",
            SyntheticKind::Line => "p2l",
            SyntheticKind::Plane => "p2P",
            SyntheticKind::Curve => "p2c",
            SyntheticKind::Surface => "p2S",
            SyntheticKind::OneShot => "oneshot",
            SyntheticKind::Insert => "insert",
        }
    }

    /// Fewest demonstrations for which the kind can be extracted.
    pub fn min_demos(self) -> usize {
        match self {
            SyntheticKind::Point => 2,
            SyntheticKind::Line | SyntheticKind::Insert => 3,
            SyntheticKind::Plane => 4,
            SyntheticKind::Curve | SyntheticKind::Surface => 11,
            SyntheticKind::OneShot => 1,
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SyntheticKind {
    type Err = KvilError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| KvilError::ParseError(format!("unknown synthetic task `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub kind: SyntheticKind,
    pub demos: usize,
    /// Observation noise σ, meters.
    pub noise: f64,
    /// Spread of the final slave orientation and of the master pose, radians.
    pub pose_variation: f64,
    /// Relative spread of the stick length across demos (insertion task).
    pub shape_variation: f64,
    pub time_steps: usize,
    pub master_points: usize,
    pub stick_length: f64,
}

impl SyntheticTaskSpec {
    pub fn new(kind: SyntheticKind) -> Self {
        Self {
            kind,
            demos: kind.min_demos(),
            noise: 0.005 * 0.3,
            pose_variation: 0.5,
            shape_variation: 0.2,
            time_steps: 20,
            master_points: 10,
            stick_length: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gate = self.kind.min_demos();
        let ok = match self.kind {
            SyntheticKind::OneShot => self.demos == 1,
            _ => self.demos >= gate,
        };
        if !ok {
            return Err(KvilError::SpecIncompatible(format!(
                "{} needs {} demonstrations, got {}",
                self.kind,
                if self.kind == SyntheticKind::OneShot { "exactly 1".to_string() } else { format!("at least {gate}") },
                self.demos
            )));
        }
        if self.time_steps < DWELL_STEPS + 3 || self.master_points < 4 || !(self.noise >= 0.0) || !(self.stick_length > 0.0) {
            return Err(KvilError::SpecIncompatible("time steps, master size, noise or stick length out of range".into()));
        }
        Ok(())
    }
}

/// Analytic constraint manifold in canonical master coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum TrueManifold {
    Point { point: Vec3 },
    Line { point: Vec3, direction: Vec3 },
    Plane { point: Vec3, normal: Vec3 },
    Circle { center: Vec3, normal: Vec3, radius: f64 },
    Sphere { center: Vec3, radius: f64 },
}

impl TrueManifold {
    pub fn distance(&self, x: &Vec3) -> f64 {
        match self {
            TrueManifold::Point { point } => (x - point).norm(),
            TrueManifold::Line { point, direction } => {
                let d = x - point;
                (d - direction * d.dot(direction)).norm()
            }
            TrueManifold::Plane { point, normal } => (x - point).dot(normal).abs(),
            TrueManifold::Circle { center, normal, radius } => {
                let d = x - center;
                let h = d.dot(normal);
                let r = (d - normal * h).norm();
                ((r - radius).powi(2) + h * h).sqrt()
            }
            TrueManifold::Sphere { center, radius } => ((x - center).norm() - radius).abs(),
        }
    }

    fn transformed(&self, g: &RigidTransform) -> Self {
        match self {
            TrueManifold::Point { point } => TrueManifold::Point { point: g.apply(point) },
            TrueManifold::Line { point, direction } => TrueManifold::Line {
                point: g.apply(point),
                direction: g.apply_vector(direction),
            },
            TrueManifold::Plane { point, normal } => TrueManifold::Plane {
                point: g.apply(point),
                normal: g.apply_vector(normal),
            },
            TrueManifold::Circle { center, normal, radius } => TrueManifold::Circle {
                center: g.apply(center),
                normal: g.apply_vector(normal),
                radius: *radius,
            },
            TrueManifold::Sphere { center, radius } => TrueManifold::Sphere {
                center: g.apply(center),
                radius: *radius,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueConstraint {
    pub kind: ConstraintKind,
    /// Slave candidate index of the designated keypoint.
    pub keypoint: usize,
    /// Candidates that satisfy the same kind of constraint by construction.
    pub region: Vec<usize>,
    pub manifold: TrueManifold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub kind: SyntheticKind,
    pub constraints: Vec<TrueConstraint>,
    /// Stick length factor per demo.
    pub shape_scales: Vec<f64>,
}

impl GroundTruth {
    /// For each true constraint: whether the task holds a constraint of the
    /// same kind on its region or within `radius` (canonical) of its keypoint.
    pub fn recovered_by(&self, task: &TaskRepresentation, radius_fraction: f64) -> Vec<bool> {
        let Some(slave) = task.slave(SLAVE_NAME) else {
            return vec![false; self.constraints.len()];
        };
        let pts = slave.canonical.positions.points();
        let radius = radius_fraction * slave.canonical.scale;
        self.constraints
            .iter()
            .map(|c| {
                task.keypoints.iter().any(|k| {
                    k.slave == SLAVE_NAME
                        && k.kind() == c.kind
                        && (c.region.contains(&k.candidate) || (pts[k.candidate] - pts[c.keypoint]).norm() <= radius)
                })
            })
            .collect()
    }
}

/// Master candidates in the master body frame. The top face is `z = 0` and
/// the slave constraint sits at the origin.
pub fn master_body(points: usize) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
    (0..points)
        .map(|_| Vec3::new(rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15), rng.gen_range(-0.12..0.0)))
        .collect()
}

/// Stick candidates in its body frame: tip at the origin, `axis_points`
/// along +z, plus four off-axis markers at radius `marker_radius · length`.
pub fn stick_body(length: f64, axis_points: usize, marker_radius: f64) -> Vec<Vec3> {
    let mut pts: Vec<Vec3> = (0..axis_points).map(|i| Vec3::new(0.0, 0.0, length * i as f64 / (axis_points - 1) as f64)).collect();
    let r = marker_radius * length;
    pts.push(Vec3::new(r, 0.0, 0.35 * length));
    pts.push(Vec3::new(-r, 0.0, 0.55 * length));
    pts.push(Vec3::new(0.0, r, 0.75 * length));
    pts.push(Vec3::new(0.0, -r, 0.95 * length));
    pts
}

fn scale_along_axis(p: &Vec3, s: f64) -> Vec3 {
    Vec3::new(p.x, p.y, p.z * s)
}

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Rotation3<f64> {
    let axis = loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    Rotation3::new(axis * rng.gen_range(0.0..=max_angle))
}

/// Evenly spread values in `[-1, 1]` with jitter of a fifth of the spacing.
fn spread(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    let step = 2.0 / (n - 1) as f64;
    (0..n).map(|i| -1.0 + step * i as f64 + rng.gen_range(-0.1..0.1) * step).collect()
}

/// Tip targets in the master frame and the true manifold (master frame).
fn tip_targets(spec: &SyntheticTaskSpec, rng: &mut ChaCha8Rng) -> (Vec<Vec3>, TrueManifold) {
    let n = spec.demos;
    let l = spec.stick_length;
    match spec.kind {
        SyntheticKind::Point | SyntheticKind::OneShot | SyntheticKind::Insert => {
            (vec![Vec3::zeros(); n], TrueManifold::Point { point: Vec3::zeros() })
        }
        SyntheticKind::Line => {
            let direction = Vec3::new(1.0, 0.4, 0.0).normalize();
            let s = spread(rng, n);
            (
                s.iter().map(|v| direction * (0.3 * l * v)).collect(),
                TrueManifold::Line {
                    point: Vec3::zeros(),
                    direction,
                },
            )
        }
        SyntheticKind::Plane => {
            let targets = if n == 4 {
                [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)]
                    .iter()
                    .map(|&(a, b): &(f64, f64)| {
                        Vec3::new((a + rng.gen_range(-0.2..0.2)) * 0.3 * l, (b + rng.gen_range(-0.2..0.2)) * 0.3 * l, 0.0)
                    })
                    .collect()
            } else {
                (0..n).map(|_| Vec3::new(rng.gen_range(-0.4..0.4) * l, rng.gen_range(-0.4..0.4) * l, 0.0)).collect()
            };
            (
                targets,
                TrueManifold::Plane {
                    point: Vec3::zeros(),
                    normal: Vec3::z(),
                },
            )
        }
        SyntheticKind::Curve => {
            let radius = 0.9 * l;
            let s = spread(rng, n);
            (
                s.iter().map(|v| {
                    let th = 0.65 * v;
                    Vec3::new(radius * th.sin(), 0.0, radius * (1.0 - th.cos()))
                })
                .collect(),
                TrueManifold::Circle {
                    center: Vec3::new(0.0, 0.0, radius),
                    normal: Vec3::y(),
                    radius,
                },
            )
        }
        SyntheticKind::Surface => {
            let radius = l;
            (
                (0..n)
                    .map(|_| {
                        let (u, v): (f64, f64) = (rng.gen_range(-0.5..0.5) * l, rng.gen_range(-0.5..0.5) * l);
                        Vec3::new(u, v, radius - (radius * radius - u * u - v * v).sqrt())
                    })
                    .collect(),
                TrueManifold::Sphere {
                    center: Vec3::new(0.0, 0.0, radius),
                    radius,
                },
            )
        }
    }
}

/// Generates demonstrations and their ground truth. The same spec and seed
/// always give the same data.
pub fn generate_synthetic(spec: &SyntheticTaskSpec, seed: u64) -> Result<(DemonstrationSet, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.demos;
    let steps = spec.time_steps;
    let master = master_body(spec.master_points);
    let stick = match spec.kind {
        SyntheticKind::Insert => stick_body(spec.stick_length, INSERT_AXIS_POINTS, 0.05),
        _ => stick_body(spec.stick_length, AXIS_POINTS, 0.12),
    };
    let (tips, manifold) = tip_targets(spec, &mut rng);

    let shape_scales: Vec<f64> = if spec.kind == SyntheticKind::Insert {
        spread(&mut rng, n).iter().map(|v| 1.0 + spec.shape_variation * v).collect()
    } else {
        vec![1.0; n]
    };
    let master_poses: Vec<RigidTransform> = (0..n)
        .map(|_| {
            let r = random_rotation(&mut rng, spec.pose_variation);
            let t = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.1..0.1));
            RigidTransform::new(r.into_inner(), t)
        })
        .collect();
    // slave poses relative to the master, per demo and time
    let mut slave_poses: Vec<Vec<RigidTransform>> = Vec::with_capacity(n);
    for tip in tips.iter().take(n) {
        let final_rotation = match spec.kind {
            SyntheticKind::Insert => Rotation3::identity(),
            _ => random_rotation(&mut rng, spec.pose_variation),
        };
        let start_rotation = random_rotation(&mut rng, 0.8) * final_rotation;
        let dir = loop {
            let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.2..1.0));
            if v.norm() <= 1.5 {
                break v.normalize();
            }
        };
        let start = tip + dir * spec.stick_length * rng.gen_range(1.5..2.5);
        let delta = (final_rotation * start_rotation.inverse()).scaled_axis();
        let moving = steps - 1 - DWELL_STEPS;
        slave_poses.push(
            (0..steps)
                .map(|t| {
                    let x = (t as f64 / moving as f64).min(1.0);
                    let s = x * x * (3.0 - 2.0 * x);
                    let rot = Rotation3::new(delta * s) * start_rotation;
                    RigidTransform::new(rot.into_inner(), start + (tip - start) * s)
                })
                .collect(),
        );
    }

    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("finite σ");
    let jitter = |p: Vec3, rng: &mut ChaCha8Rng| -> Vec3 {
        if spec.noise > 0.0 {
            p + Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
        } else {
            p
        }
    };
    let mut master_traj = Trajectory::from_fn(n, steps, master.len(), |_, _, _| Vec3::zeros());
    let mut slave_traj = Trajectory::from_fn(n, steps, stick.len(), |_, _, _| Vec3::zeros());
    for d in 0..n {
        for t in 0..steps {
            for (h, p) in master.iter().enumerate() {
                let w = master_poses[d].apply(p);
                master_traj.set(d, t, h, jitter(w, &mut rng));
            }
            let pose = master_poses[d].compose(&slave_poses[d][t]);
            for (h, p) in stick.iter().enumerate() {
                let w = pose.apply(&scale_along_axis(p, shape_scales[d]));
                slave_traj.set(d, t, h, jitter(w, &mut rng));
            }
        }
    }
    let master_ids: Vec<u64> = (0..master.len() as u64).map(|i| 100 + i).collect();
    let slave_ids: Vec<u64> = (0..stick.len() as u64).map(|i| 500 + i).collect();
    let set = DemonstrationSet::new(vec![
        ObjectRecord::new(MASTER_NAME, master_ids, master_traj)?,
        ObjectRecord::new(SLAVE_NAME, slave_ids, slave_traj)?,
    ])?;

    // canonical master coordinates are those of demo 0
    let to_canonical = master_poses[0];
    let tip_kind = match spec.kind {
        SyntheticKind::Point | SyntheticKind::OneShot | SyntheticKind::Insert => ConstraintKind::PointToPoint,
        SyntheticKind::Line => ConstraintKind::PointToLine,
        SyntheticKind::Plane => ConstraintKind::PointToPlane,
        SyntheticKind::Curve => ConstraintKind::PointToCurve,
        SyntheticKind::Surface => ConstraintKind::PointToSurface,
    };
    let mut constraints = vec![TrueConstraint {
        kind: tip_kind,
        keypoint: 0,
        region: vec![0],
        manifold: manifold.transformed(&to_canonical),
    }];
    if spec.kind == SyntheticKind::Insert {
        let region = stick.iter().enumerate().filter(|(_, p)| p.z > 0.0).map(|(i, _)| i).collect();
        constraints.push(TrueConstraint {
            kind: ConstraintKind::PointToLine,
            keypoint: INSERT_AXIS_POINTS - 1,
            region,
            manifold: TrueManifold::Line {
                point: Vec3::zeros(),
                direction: Vec3::z(),
            }
            .transformed(&to_canonical),
        });
    }
    Ok((
        set,
        GroundTruth {
            kind: spec.kind,
            constraints,
            shape_scales,
        },
    ))
}

/// A reproduction scene built from a task's reference geometry: the demo-0
/// start configuration, with the slave scaled by `slave_scale` along its main
/// axis about its first point keypoint, then passed through
/// [`perturbed_scene`].
pub fn synthetic_scene(task: &TaskRepresentation, slave_scale: f64, seed: u64) -> Result<SceneInstance> {
    if !(slave_scale > 0.0 && slave_scale.is_finite()) {
        return Err(KvilError::UnitError(format!("slave scale must be positive, got {slave_scale}")));
    }
    let master_pts = task.master.canonical.positions.points();
    let master = task.master.descriptor_ids.iter().copied().zip(master_pts.iter().copied()).collect();
    let mut slaves = Vec::with_capacity(task.slaves.len());
    for s in &task.slaves {
        let pts = s.canonical.positions.points();
        let pivot = pts[pivot_index(task, s)];
        let (_, _, axes) = principal_axes(pts);
        let axis = axes[0];
        let shape = s
            .descriptor_ids
            .iter()
            .zip(pts)
            .map(|(&id, p)| {
                let d = p - pivot;
                (id, pivot + d + axis * ((slave_scale - 1.0) * d.dot(&axis)))
            })
            .collect();
        slaves.push(SlaveBody {
            name: s.name.clone(),
            pose: RigidTransform::identity(),
            shape,
        });
    }
    perturbed_scene(task, &SceneInstance { master, slaves }, seed)
}

fn pivot_index(task: &TaskRepresentation, slave: &ObjectSummary) -> usize {
    task.keypoints
        .iter()
        .find(|k| k.slave == slave.name && k.kind() == ConstraintKind::PointToPoint)
        .map_or(0, |k| k.candidate)
}

/// Moves the whole scene by a random rigid transform (rotation up to π,
/// translation up to 0.5 per axis) and perturbs each slave's start pose by up
/// to 0.3 rad and 0.2·φ about its first point keypoint.
pub fn perturbed_scene(task: &TaskRepresentation, base: &SceneInstance, seed: u64) -> Result<SceneInstance> {
    base.validate(task)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let global = RigidTransform::new(
        random_rotation(&mut rng, std::f64::consts::PI).into_inner(),
        Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
    );
    let mut scene = base.clone();
    for body in &mut scene.slaves {
        let summary = task.slave(&body.name);
        let scale = summary.map_or(1.0, |s| s.canonical.scale);
        let pivot_id = summary.map(|s| s.descriptor_ids[pivot_index(task, s)]);
        let pivot = body.pose.apply(pivot_id.and_then(|id| body.shape.get(&id)).unwrap_or(&Vec3::zeros()));
        let perturb = RigidTransform::new(
            random_rotation(&mut rng, 0.3).into_inner(),
            Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * (0.2 * scale),
        );
        let about_pivot = RigidTransform::from_translation(pivot)
            .compose(&perturb)
            .compose(&RigidTransform::from_translation(-pivot));
        body.pose = about_pivot.compose(&body.pose);
    }
    let scene = scene.transformed(&global);
    scene.validate(task)?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{compute_canonical_shape, demonstration_set_to_string, parse_demonstration_set, LoadOptions};

    fn local_tips(set: &DemonstrationSet) -> Vec<Vec3> {
        // tip in the master frame of each demo, via exact alignment to demo 0
        let master = &set.objects[0];
        let reference = master.trajectory.frame(0, 0).to_vec();
        let t = set.time_steps() - 1;
        (0..set.demo_count())
            .map(|n| {
                let frame = crate::geometry::align_rigid(&reference, master.trajectory.frame(n, t)).unwrap();
                frame.apply_inverse(&set.objects[1].trajectory.get(n, t, 0))
            })
            .collect()
    }

    #[test]
    fn kind_names_round_trip() {
        for k in SyntheticKind::ALL {
            assert_eq!(k.as_str().parse::<SyntheticKind>().unwrap(), k);
        }
        assert!("p2x".parse::<SyntheticKind>().is_err());
    }

    #[test]
    fn gates_are_enforced() {
        let mut spec = SyntheticTaskSpec::new(SyntheticKind::Curve);
        spec.demos = 10;
        assert!(matches!(generate_synthetic(&spec, 0), Err(KvilError::SpecIncompatible(_))));
        let mut spec = SyntheticTaskSpec::new(SyntheticKind::OneShot);
        spec.demos = 2;
        assert!(generate_synthetic(&spec, 0).is_err());
    }

    #[test]
    fn noiseless_point_task_ends_at_one_local_position() {
        let mut spec = SyntheticTaskSpec::new(SyntheticKind::Point);
        spec.demos = 5;
        spec.noise = 0.0;
        let (set, gt) = generate_synthetic(&spec, 3).unwrap();
        let tips = local_tips(&set);
        for t in &tips {
            assert!((t - tips[0]).norm() < 1e-12);
            assert!(gt.constraints[0].manifold.distance(t) < 1e-12);
        }
    }

    #[test]
    fn insertion_distal_point_varies_along_a_line() {
        let mut spec = SyntheticTaskSpec::new(SyntheticKind::Insert);
        spec.noise = 0.0;
        let (set, gt) = generate_synthetic(&spec, 5).unwrap();
        let master = &set.objects[0];
        let reference = master.trajectory.frame(0, 0).to_vec();
        let t = set.time_steps() - 1;
        let line = &gt.constraints[1].manifold;
        let mut along = Vec::new();
        for n in 0..set.demo_count() {
            let frame = crate::geometry::align_rigid(&reference, master.trajectory.frame(n, t)).unwrap();
            let p = frame.apply_inverse(&set.objects[1].trajectory.get(n, t, INSERT_AXIS_POINTS - 1));
            assert!(line.distance(&p) < 1e-12);
            along.push(p);
        }
        assert!((along[0] - along[2]).norm() > 0.05);
        assert!(gt.shape_scales.iter().all(|s| (0.75..=1.25).contains(s)));
    }

    #[test]
    fn arc_targets_lie_on_the_arc_within_noise() {
        let spec = SyntheticTaskSpec::new(SyntheticKind::Curve);
        let (set, gt) = generate_synthetic(&spec, 7).unwrap();
        for p in local_tips(&set) {
            // tip noise plus frame noise from ten master points
            assert!(gt.constraints[0].manifold.distance(&p) < 5.0 * spec.noise, "{}", gt.constraints[0].manifold.distance(&p));
        }
    }

    #[test]
    fn generation_is_deterministic_and_round_trips() {
        let spec = SyntheticTaskSpec::new(SyntheticKind::Plane);
        let (a, ga) = generate_synthetic(&spec, 11).unwrap();
        let (b, gb) = generate_synthetic(&spec, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        let text = demonstration_set_to_string(&a).unwrap();
        let back = parse_demonstration_set(&text, LoadOptions::raw()).unwrap();
        assert!(back.objects[1].trajectory.max_abs_diff(&a.objects[1].trajectory) <= 1e-12);
        assert_eq!(demonstration_set_to_string(&back).unwrap(), text);
    }

    #[test]
    fn slave_moves_and_master_does_not() {
        let (set, _) = generate_synthetic(&SyntheticTaskSpec::new(SyntheticKind::Line), 1).unwrap();
        let roles = crate::ingest::assign_roles(&set).unwrap();
        assert_eq!(roles[0], crate::ingest::ObjectRole::Master);
        assert!(compute_canonical_shape(&set.objects[1]).unwrap().scale > 0.29);
    }
}
