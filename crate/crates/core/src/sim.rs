//! Kinematic reproduction: slave bodies driven by the keypoint admittance
//! controller toward the constraints of an extracted task.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constraint::{Constraint, ConstraintKind};
use crate::error::{KvilError, Result};
use crate::geometry::{RigidTransform, Vec3};
use crate::ingest::SceneObservation;
use crate::kac::{
    admittance_step, aggregate_wrench, attraction_force, density_force, fit_density, priority_project, AdmittanceState,
    ControllerGains, DensityModel, Wrench,
};
use crate::task::TaskRepresentation;
use crate::vmp::{CanonicalClock, VmpModel};

pub const SIMLOG_FORMAT: &str = "kvil-simlog/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlaveBody {
    pub name: String,
    /// Maps body coordinates to world at the start.
    pub pose: RigidTransform,
    /// Body-frame candidate positions by descriptor id.
    pub shape: BTreeMap<u64, Vec3>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneInstance {
    pub master: BTreeMap<u64, Vec3>,
    pub slaves: Vec<SlaveBody>,
}

impl SceneInstance {
    /// Slaves start at the identity pose with their observed positions as shape.
    pub fn from_observation(task: &TaskRepresentation, obs: &SceneObservation) -> Result<Self> {
        let master = obs
            .object(&task.master.name)
            .ok_or_else(|| KvilError::SchemaError(format!("scene has no object `{}`", task.master.name)))?
            .clone();
        let mut slaves = Vec::new();
        for s in &task.slaves {
            let shape = obs
                .object(&s.name)
                .ok_or_else(|| KvilError::SchemaError(format!("scene has no object `{}`", s.name)))?
                .clone();
            slaves.push(SlaveBody {
                name: s.name.clone(),
                pose: RigidTransform::identity(),
                shape,
            });
        }
        let scene = Self { master, slaves };
        scene.validate(task)?;
        Ok(scene)
    }

    pub fn validate(&self, task: &TaskRepresentation) -> Result<()> {
        for k in &task.keypoints {
            for id in &k.frame.neighbor_ids {
                if !self.master.contains_key(id) {
                    return Err(KvilError::MissingCorrespondence(*id));
                }
            }
            let body = self
                .slave(&k.slave)
                .ok_or_else(|| KvilError::SchemaError(format!("scene has no slave `{}`", k.slave)))?;
            if !body.shape.contains_key(&k.descriptor_id) {
                return Err(KvilError::MissingCorrespondence(k.descriptor_id));
            }
        }
        Ok(())
    }

    pub fn slave(&self, name: &str) -> Option<&SlaveBody> {
        self.slaves.iter().find(|s| s.name == name)
    }

    /// World-frame observation of the scene at its start.
    pub fn observation(&self, master_name: &str) -> SceneObservation {
        let mut objects = vec![(master_name.to_string(), self.master.clone())];
        for s in &self.slaves {
            objects.push((s.name.clone(), s.shape.iter().map(|(&id, p)| (id, s.pose.apply(p))).collect()));
        }
        SceneObservation { objects }
    }

    pub fn transformed(&self, g: &RigidTransform) -> Self {
        Self {
            master: self.master.iter().map(|(&id, p)| (id, g.apply(p))).collect(),
            slaves: self
                .slaves
                .iter()
                .map(|s| SlaveBody {
                    name: s.name.clone(),
                    pose: g.compose(&s.pose),
                    shape: s.shape.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Duration of the movement primitive clock, seconds.
    pub duration: f64,
    pub dt: f64,
    /// Extra simulated time after the clock reaches zero, seconds.
    pub end_window: f64,
    /// Shield point constraints from other keypoints' density forces.
    pub priority: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration: 3.0,
            dt: 1e-3,
            end_window: 2.0,
            priority: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointInfo {
    pub slave: String,
    pub descriptor_id: u64,
    pub kind: ConstraintKind,
    /// Slave scale φ, meters.
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimHeader {
    pub format: String,
    pub dt: f64,
    /// First step of the end window.
    pub end_window_start: usize,
    pub keypoints: Vec<KeypointInfo>,
    pub slaves: Vec<String>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub step: usize,
    pub time: f64,
    pub phase: f64,
    pub keypoints: Vec<Vec3>,
    pub targets: Vec<Vec3>,
    pub goals: Vec<Vec3>,
    /// Body-to-world transform of each slave.
    pub poses: Vec<RigidTransform>,
    pub wrenches: Vec<Wrench>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub header: SimHeader,
    pub records: Vec<SimRecord>,
}

impl SimLog {
    pub fn end_window(&self) -> &[SimRecord] {
        let start = self.records.partition_point(|r| r.step < self.header.end_window_start);
        &self.records[start..]
    }

    pub fn failed(&self) -> bool {
        self.header.failure.is_some()
    }

    /// Newline-delimited JSON: the header, then one record per step.
    pub fn write_ndjson(&self, mut out: impl Write) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf)?;
        Ok(String::from_utf8(buf).expect("json is utf-8"))
    }

    pub fn read_ndjson(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let header: SimHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(KvilError::EmptySequence("simulation log is empty".into())),
        };
        if header.format != SIMLOG_FORMAT {
            return Err(KvilError::SchemaError(format!("unsupported log format `{}`", header.format)));
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { header, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ndjson(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_ndjson(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

struct Driven {
    body: usize,
    attachment: Vec3,
    frame: RigidTransform,
    constraint: Constraint,
    vmp: VmpModel,
    start: Vec<f64>,
    goal: Vec<f64>,
    density: Option<DensityModel>,
}

impl Driven {
    fn is_point(&self) -> bool {
        self.constraint.kind() == ConstraintKind::PointToPoint
    }

    /// Attractor, goal and attractor velocity in world coordinates for world
    /// position `k`. The velocity follows the movement primitive only; the
    /// foot point moves with the keypoint and is not fed forward.
    fn attractor(&self, k: &Vec3, phase: f64, previous: Option<(f64, f64)>) -> (Vec3, Vec3, Vec3) {
        let y = self.vmp.eval(phase, &self.start, &self.goal);
        let dy: Vec<f64> = match previous {
            Some((p, dt)) => {
                let yp = self.vmp.eval(p, &self.start, &self.goal);
                y.iter().zip(&yp).map(|(a, b)| (a - b) / dt).collect()
            }
            None => vec![0.0; y.len()],
        };
        if self.is_point() {
            let target = self.frame.apply(&Vec3::new(y[0], y[1], y[2]));
            let goal = self.frame.apply(&Vec3::new(self.goal[0], self.goal[1], self.goal[2]));
            (target, goal, self.frame.apply_vector(&Vec3::new(dy[0], dy[1], dy[2])))
        } else {
            let local = self.frame.apply_inverse(k);
            let foot = self.constraint.foot(&local);
            let stress = local - foot;
            let dir = stress.try_normalize(1e-12).unwrap_or_else(Vec3::zeros);
            (self.frame.apply(&(foot + dir * y[0])), self.frame.apply(&foot), self.frame.apply_vector(&(dir * dy[0])))
        }
    }

    fn tangents_world(&self, k: &Vec3) -> Vec<Vec3> {
        let local = self.frame.apply_inverse(k);
        let u = self.constraint.chart(&local);
        self.constraint.tangents(&u).iter().map(|t| self.frame.apply_vector(t)).collect()
    }
}

fn world_point(state: &AdmittanceState, tcp_body: &Vec3, b: &Vec3) -> Vec3 {
    state.body.pose.rotation * (b - tcp_body) + state.body.pose.translation
}

/// Runs one reproduction: frame detection on the (static) master, then
/// admittance control of every slave until the clock ends plus the end window.
pub fn simulate_reproduction(
    task: &TaskRepresentation,
    scene: &SceneInstance,
    gains: &ControllerGains,
    cfg: &SimConfig,
) -> Result<SimLog> {
    gains.validate()?;
    scene.validate(task)?;
    if !(cfg.dt > 0.0 && cfg.duration > 0.0 && cfg.end_window >= 0.0) {
        return Err(KvilError::UnitError("simulation times must be positive".into()));
    }
    let names: Vec<String> = scene.slaves.iter().map(|s| s.name.clone()).collect();
    let mut driven = Vec::with_capacity(task.keypoints.len());
    for kp in &task.keypoints {
        let body = names.iter().position(|n| *n == kp.slave).expect("validated");
        let slave = &scene.slaves[body];
        let attachment = slave.shape[&kp.descriptor_id];
        let frame = kp.frame.detect(&scene.master)?;
        let local = frame.apply_inverse(&slave.pose.apply(&attachment));
        let (start, goal) = match &kp.constraint {
            Constraint::Linear(c) if c.kind == ConstraintKind::PointToPoint => {
                (vec![local.x, local.y, local.z], vec![c.anchor.x, c.anchor.y, c.anchor.z])
            }
            c => (vec![c.distance(&local)], vec![0.0]),
        };
        let density = if kp.kind() == ConstraintKind::PointToPoint {
            None
        } else {
            fit_density(&kp.targets, kp.kind().dim()).ok()
        };
        driven.push(Driven {
            body,
            attachment,
            frame,
            constraint: kp.constraint.clone(),
            vmp: kp.vmp.clone(),
            start,
            goal,
            density,
        });
    }
    let keypoint_info = task
        .keypoints
        .iter()
        .map(|kp| KeypointInfo {
            slave: kp.slave.clone(),
            descriptor_id: kp.descriptor_id,
            kind: kp.kind(),
            scale: task.slave(&kp.slave).map_or(1.0, |s| s.canonical.scale),
        })
        .collect();

    let mut tcp_body = vec![Vec3::zeros(); scene.slaves.len()];
    let mut counts = vec![0usize; scene.slaves.len()];
    for d in &driven {
        tcp_body[d.body] += d.attachment;
        counts[d.body] += 1;
    }
    let mut states = Vec::with_capacity(scene.slaves.len());
    for (i, s) in scene.slaves.iter().enumerate() {
        if counts[i] > 0 {
            tcp_body[i] /= counts[i] as f64;
        }
        let pose = RigidTransform::new(s.pose.rotation, s.pose.apply(&tcp_body[i]));
        states.push(AdmittanceState::at_rest(pose));
    }
    let priority: Vec<Option<usize>> = (0..scene.slaves.len())
        .map(|b| driven.iter().position(|d| d.body == b && d.is_point()))
        .collect();

    let clock = CanonicalClock {
        duration: cfg.duration,
        dt: cfg.dt,
    };
    let motion_steps = (cfg.duration / cfg.dt).round() as usize;
    let total = motion_steps + (cfg.end_window / cfg.dt).round() as usize;
    let mut header = SimHeader {
        format: SIMLOG_FORMAT.to_string(),
        dt: cfg.dt,
        end_window_start: motion_steps,
        keypoints: keypoint_info,
        slaves: names,
        failure: None,
    };
    let mut records = Vec::with_capacity(total + 1);
    for step in 0..=total {
        let time = step as f64 * cfg.dt;
        let phase = clock.phase(time);
        let keypoints: Vec<Vec3> = driven.iter().map(|d| world_point(&states[d.body], &tcp_body[d.body], &d.attachment)).collect();
        let previous = (step > 0).then(|| (clock.phase(time - cfg.dt), cfg.dt));
        let mut targets = Vec::with_capacity(driven.len());
        let mut goals = Vec::with_capacity(driven.len());
        let mut target_velocity = Vec::with_capacity(driven.len());
        for (d, k) in driven.iter().zip(&keypoints) {
            let (t, g, v) = d.attractor(k, phase, previous);
            targets.push(t);
            goals.push(g);
            target_velocity.push(v);
        }
        let mut forces = Vec::with_capacity(driven.len());
        for (l, d) in driven.iter().enumerate() {
            let k = &keypoints[l];
            let velocity = states[d.body].body.point_velocity(k);
            let mut f = attraction_force(k, &velocity, &targets[l], &target_velocity[l], &gains.keypoint(l));
            if let Some(model) = &d.density {
                let local = d.frame.apply_inverse(k);
                let mut fs = d.frame.apply_vector(&density_force(model, &d.constraint, &local, gains.g1, gains.g2));
                if let (true, Some(p)) = (cfg.priority, priority[d.body]) {
                    if let Ok(projected) = priority_project(&fs, &keypoints[p], k, &d.tangents_world(k)) {
                        fs = projected;
                    }
                }
                f += fs;
            }
            forces.push(f);
        }
        let mut wrenches = vec![Wrench::default(); states.len()];
        for (b, w) in wrenches.iter_mut().enumerate() {
            let (ks, fs): (Vec<Vec3>, Vec<Vec3>) =
                driven.iter().enumerate().filter(|(_, d)| d.body == b).map(|(l, _)| (keypoints[l], forces[l])).unzip();
            if !ks.is_empty() {
                let (force, torque, _) = aggregate_wrench(&ks, &fs);
                *w = Wrench { force, torque };
            }
        }
        let poses = states
            .iter()
            .zip(&tcp_body)
            .map(|(s, c)| RigidTransform::new(s.body.pose.rotation, s.body.pose.translation - s.body.pose.rotation * c))
            .collect();
        records.push(SimRecord {
            step,
            time,
            phase,
            keypoints,
            targets,
            goals,
            poses,
            wrenches: wrenches.clone(),
        });
        if step == total {
            break;
        }
        let mut failed = None;
        for (b, s) in states.iter_mut().enumerate() {
            // rest pose follows the virtual body
            s.rest = s.virtual_body.pose;
            match admittance_step(s, &wrenches[b], gains, cfg.dt) {
                Ok(next) => *s = next,
                Err(e) => {
                    failed = Some(e.to_string());
                    break;
                }
            }
        }
        if failed.is_some() {
            header.failure = failed;
            break;
        }
    }
    Ok(SimLog { header, records })
}
