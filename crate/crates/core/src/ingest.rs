//! Demonstration files, per-object canonical shapes, object roles and the
//! master-object local-frame bank.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KvilError, Result};
use crate::geometry::{align_rigid, max_pairwise_distance, resample_normalize, smooth, PointSet, RigidTransform, Trajectory, Vec3};
use crate::par::{map_range, Execution};

pub const DEMO_FILE_VERSION: u32 = 1;

/// One tracked object: `P` corresponded candidates over `N × T` samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub name: String,
    pub descriptor_ids: Vec<u64>,
    pub trajectory: Trajectory,
}

impl ObjectRecord {
    pub fn new(name: impl Into<String>, descriptor_ids: Vec<u64>, trajectory: Trajectory) -> Result<Self> {
        let name = name.into();
        if descriptor_ids.len() != trajectory.points() {
            return Err(KvilError::SchemaError(format!(
                "object `{name}`: {} descriptor ids for {} candidates",
                descriptor_ids.len(),
                trajectory.points()
            )));
        }
        let unique: BTreeSet<_> = descriptor_ids.iter().collect();
        if unique.len() != descriptor_ids.len() {
            return Err(KvilError::SchemaError(format!("object `{name}`: duplicate descriptor ids")));
        }
        if !trajectory.is_finite() {
            return Err(KvilError::UnitError(format!("object `{name}` has non-finite coordinates")));
        }
        Ok(Self {
            name,
            descriptor_ids,
            trajectory,
        })
    }

    pub fn candidate_count(&self) -> usize {
        self.descriptor_ids.len()
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.descriptor_ids.iter().position(|&d| d == id)
    }

    pub fn transformed(&self, g: &RigidTransform) -> Self {
        Self {
            trajectory: self.trajectory.transformed(g),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    pub objects: Vec<ObjectRecord>,
}

impl DemonstrationSet {
    pub fn new(objects: Vec<ObjectRecord>) -> Result<Self> {
        let first = objects
            .first()
            .ok_or_else(|| KvilError::SchemaError("demonstration set has no objects".into()))?;
        let (n, t) = (first.trajectory.demos(), first.trajectory.time_steps());
        if n == 0 {
            return Err(KvilError::SchemaError("demonstration set has no demos".into()));
        }
        for o in &objects {
            if o.trajectory.demos() != n || o.trajectory.time_steps() != t {
                return Err(KvilError::SchemaError(format!(
                    "object `{}` has {}x{} samples, expected {n}x{t}",
                    o.name,
                    o.trajectory.demos(),
                    o.trajectory.time_steps()
                )));
            }
        }
        Ok(Self { objects })
    }

    pub fn demo_count(&self) -> usize {
        self.objects[0].trajectory.demos()
    }

    pub fn time_steps(&self) -> usize {
        self.objects[0].trajectory.time_steps()
    }

    pub fn transformed(&self, g: &RigidTransform) -> Self {
        Self {
            objects: self.objects.iter().map(|o| o.transformed(g)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    /// Resample to this many time steps; `None` keeps the file's `time_steps`.
    pub time_steps: Option<usize>,
    pub smoothing_window: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            time_steps: None,
            smoothing_window: 5,
        }
    }
}

impl LoadOptions {
    /// No smoothing, file's own length: a lossless read.
    pub fn raw() -> Self {
        Self {
            time_steps: None,
            smoothing_window: 1,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DemoFile {
    version: u32,
    time_steps: usize,
    objects: Vec<ObjectEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectEntry {
    name: String,
    descriptor_ids: Vec<u64>,
    /// `[demo][raw sample][candidate] -> [x, y, z]`
    demos: Vec<Vec<Vec<[f64; 3]>>>,
}

fn parse_error(err: serde_json::Error) -> KvilError {
    let msg = err.to_string();
    if msg.contains("number out of range") {
        KvilError::UnitError(msg)
    } else {
        KvilError::ParseError(msg)
    }
}

fn parse_demo_file(text: &str) -> Result<DemoFile> {
    let file: DemoFile = serde_json::from_str(text).map_err(parse_error)?;
    if file.version != DEMO_FILE_VERSION {
        return Err(KvilError::SchemaError(format!("unsupported version {}", file.version)));
    }
    if file.objects.is_empty() {
        return Err(KvilError::SchemaError("no objects".into()));
    }
    let n = file.objects[0].demos.len();
    for o in &file.objects {
        if o.demos.len() != n {
            return Err(KvilError::SchemaError(format!(
                "object `{}` has {} demos, expected {n}",
                o.name,
                o.demos.len()
            )));
        }
        for (d, demo) in o.demos.iter().enumerate() {
            for (s, frame) in demo.iter().enumerate() {
                if frame.len() != o.descriptor_ids.len() {
                    return Err(KvilError::SchemaError(format!(
                        "object `{}` demo {d} sample {s}: {} points for {} ids",
                        o.name,
                        frame.len(),
                        o.descriptor_ids.len()
                    )));
                }
                if frame.iter().flatten().any(|c| !c.is_finite()) {
                    return Err(KvilError::UnitError(format!("object `{}` demo {d}", o.name)));
                }
            }
        }
    }
    // raw lengths must agree across objects within a demo
    for d in 0..n {
        let len = file.objects[0].demos[d].len();
        if file.objects.iter().any(|o| o.demos[d].len() != len) {
            return Err(KvilError::SchemaError(format!("demo {d}: objects disagree on sample count")));
        }
    }
    Ok(file)
}

/// Parses and validates a demonstration document.
pub fn parse_demonstration_set(text: &str, opts: LoadOptions) -> Result<DemonstrationSet> {
    let file = parse_demo_file(text)?;
    let time_steps = opts.time_steps.unwrap_or(file.time_steps);
    if opts.time_steps.is_none() {
        // without an explicit override every demo must already carry T samples
        for o in &file.objects {
            if let Some(d) = o.demos.iter().position(|demo| demo.len() != file.time_steps) {
                return Err(KvilError::SchemaError(format!(
                    "object `{}` demo {d} has {} samples but time_steps is {}",
                    o.name,
                    o.demos[d].len(),
                    file.time_steps
                )));
            }
        }
    }
    let mut objects = Vec::with_capacity(file.objects.len());
    for o in file.objects {
        let raw: Vec<Vec<Vec<Vec3>>> = o
            .demos
            .iter()
            .map(|demo| demo.iter().map(|frame| frame.iter().map(|c| Vec3::from(*c)).collect()).collect())
            .collect();
        let traj = resample_normalize(&raw, time_steps)?;
        let traj = smooth(&traj, opts.smoothing_window)?;
        objects.push(ObjectRecord::new(o.name, o.descriptor_ids, traj)?);
    }
    DemonstrationSet::new(objects)
}

pub fn load_demonstration_set(path: impl AsRef<Path>, opts: LoadOptions) -> Result<DemonstrationSet> {
    let text = fs::read_to_string(path)?;
    parse_demonstration_set(&text, opts)
}

pub fn demonstration_set_to_string(set: &DemonstrationSet) -> Result<String> {
    let file = DemoFile {
        version: DEMO_FILE_VERSION,
        time_steps: set.time_steps(),
        objects: set
            .objects
            .iter()
            .map(|o| {
                let tr = &o.trajectory;
                ObjectEntry {
                    name: o.name.clone(),
                    descriptor_ids: o.descriptor_ids.clone(),
                    demos: (0..tr.demos())
                        .map(|n| (0..tr.time_steps()).map(|t| tr.frame(n, t).iter().map(|p| [p.x, p.y, p.z]).collect()).collect())
                        .collect(),
                }
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn write_demonstration_set(set: &DemonstrationSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, demonstration_set_to_string(set)?)?;
    Ok(())
}

/// A single-time-step observation of every object, keyed by object name.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneObservation {
    pub objects: Vec<(String, BTreeMap<u64, Vec3>)>,
}

impl SceneObservation {
    pub fn object(&self, name: &str) -> Option<&BTreeMap<u64, Vec3>> {
        self.objects.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }
}

/// Reads a scene file: the demonstration schema with one demo of one sample.
pub fn parse_scene(text: &str) -> Result<SceneObservation> {
    let file = parse_demo_file(text)?;
    let mut objects = Vec::new();
    for o in file.objects {
        let frame = o
            .demos
            .first()
            .and_then(|d| d.first())
            .ok_or_else(|| KvilError::SchemaError(format!("scene object `{}` has no sample", o.name)))?;
        let map = o.descriptor_ids.iter().copied().zip(frame.iter().map(|c| Vec3::from(*c))).collect();
        objects.push((o.name, map));
    }
    Ok(SceneObservation { objects })
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneObservation> {
    parse_scene(&fs::read_to_string(path)?)
}

pub fn scene_to_string(scene: &SceneObservation) -> Result<String> {
    let file = DemoFile {
        version: DEMO_FILE_VERSION,
        time_steps: 1,
        objects: scene
            .objects
            .iter()
            .map(|(name, map)| ObjectEntry {
                name: name.clone(),
                descriptor_ids: map.keys().copied().collect(),
                demos: vec![vec![map.values().map(|p| [p.x, p.y, p.z]).collect()]],
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

/// Reference geometry of an object at demo 0, time 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalShape {
    pub positions: PointSet,
    /// Largest pairwise candidate distance, meters.
    pub scale: f64,
}

pub fn compute_canonical_shape(obj: &ObjectRecord) -> Result<CanonicalShape> {
    if obj.candidate_count() < 2 {
        return Err(KvilError::InsufficientCandidates {
            needed: 2,
            available: obj.candidate_count(),
        });
    }
    let positions = obj.trajectory.frame(0, 0).to_vec();
    let scale = max_pairwise_distance(&positions);
    if scale <= 0.0 {
        return Err(KvilError::DegenerateObject(obj.name.clone()));
    }
    Ok(CanonicalShape {
        positions: PointSet::new(positions)?,
        scale,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectRole {
    Master,
    Slave,
}

/// Mean temporal variance of an object's candidates: per-coordinate variances
/// summed, averaged over candidates and demos.
pub fn motion_variance(obj: &ObjectRecord) -> f64 {
    let tr = &obj.trajectory;
    let steps = tr.time_steps() as f64;
    let mut total = 0.0;
    for n in 0..tr.demos() {
        for h in 0..tr.points() {
            let mean = (0..tr.time_steps()).fold(Vec3::zeros(), |a, t| a + tr.get(n, t, h)) / steps;
            let var: f64 = (0..tr.time_steps()).map(|t| (tr.get(n, t, h) - mean).norm_squared()).sum::<f64>() / steps;
            total += var;
        }
    }
    total / (tr.demos() * tr.points()) as f64
}

/// The least-moving object is the master; ties go to the lowest index.
pub fn assign_roles(demos: &DemonstrationSet) -> Result<Vec<ObjectRole>> {
    if demos.objects.len() < 2 {
        return Err(KvilError::SchemaError("role assignment needs at least two objects".into()));
    }
    let mut master = 0;
    let mut best = f64::INFINITY;
    for (i, o) in demos.objects.iter().enumerate() {
        let v = motion_variance(o);
        if v < best {
            best = v;
            master = i;
        }
    }
    Ok((0..demos.objects.len())
        .map(|i| if i == master { ObjectRole::Master } else { ObjectRole::Slave })
        .collect())
}

/// Canonical parameters of one local frame: the frame is the rigid transform
/// carrying `reference_positions` onto their observed counterparts. Its
/// origin is the canonical position of candidate `origin_id`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalFrameSpec {
    pub origin_id: u64,
    pub origin: Vec3,
    pub neighbor_ids: Vec<u64>,
    pub reference_positions: Vec<Vec3>,
    #[serde(skip)]
    pub neighbor_index: Vec<usize>,
}

impl LocalFrameSpec {
    /// World position of the frame origin under a detected frame transform.
    pub fn origin_in(&self, frame: &RigidTransform) -> Vec3 {
        frame.apply(&self.origin)
    }

    /// Detects this frame in an observation keyed by descriptor id.
    pub fn detect(&self, observed: &BTreeMap<u64, Vec3>) -> Result<RigidTransform> {
        let mut target = Vec::with_capacity(self.neighbor_ids.len());
        for id in &self.neighbor_ids {
            target.push(*observed.get(id).ok_or(KvilError::MissingCorrespondence(*id))?);
        }
        align_rigid(&self.reference_positions, &target)
    }

    fn detect_indexed(&self, positions: &[Vec3]) -> Result<RigidTransform> {
        let target: Vec<Vec3> = self.neighbor_index.iter().map(|&i| positions[i]).collect();
        align_rigid(&self.reference_positions, &target)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameBank {
    pub frames: Vec<LocalFrameSpec>,
}

impl FrameBank {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Indices of the `q` nearest points to `points[j]` (itself first), ties by index.
pub fn nearest_indices(points: &[Vec3], j: usize, q: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| ((p - points[j]).norm_squared(), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(q).map(|(_, i)| i).collect()
}

pub fn build_frame_bank(master: &ObjectRecord, canonical: &CanonicalShape, q: usize) -> Result<FrameBank> {
    let p = canonical.positions.len();
    if q < 3 || q > p {
        return Err(KvilError::InsufficientCandidates { needed: q.max(3), available: p });
    }
    let pts = canonical.positions.points();
    let frames = (0..p)
        .map(|j| {
            let idx = nearest_indices(pts, j, q);
            LocalFrameSpec {
                origin_id: master.descriptor_ids[j],
                origin: pts[j],
                neighbor_ids: idx.iter().map(|&i| master.descriptor_ids[i]).collect(),
                reference_positions: idx.iter().map(|&i| pts[i]).collect(),
                neighbor_index: idx,
            }
        })
        .collect();
    Ok(FrameBank { frames })
}

/// Detects every frame of the bank in an observation keyed by descriptor id.
pub fn detect_frames(bank: &FrameBank, observed: &BTreeMap<u64, Vec3>) -> Result<Vec<RigidTransform>> {
    detect_frames_with(bank, observed, Execution::Sequential)
}

pub fn detect_frames_with(bank: &FrameBank, observed: &BTreeMap<u64, Vec3>, exec: Execution) -> Result<Vec<RigidTransform>> {
    map_range(exec, bank.len(), |j| bank.frames[j].detect(observed)).into_iter().collect()
}

/// Detects every frame of the bank for every `(time, demo)` of the master.
/// Result is indexed `[t][n][j]`.
pub fn detect_frames_over_time(
    bank: &FrameBank,
    master: &ObjectRecord,
    frame_ids: &[usize],
    exec: Execution,
) -> Result<Vec<Vec<Vec<RigidTransform>>>> {
    let tr = &master.trajectory;
    let per_time = map_range(exec, tr.time_steps(), |t| -> Result<Vec<Vec<RigidTransform>>> {
        (0..tr.demos())
            .map(|n| {
                let positions = tr.frame(n, t);
                frame_ids.iter().map(|&j| bank.frames[j].detect_indexed(positions)).collect()
            })
            .collect()
    });
    per_time.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn minimal_file() -> String {
        r#"{"version":1,"time_steps":3,"objects":[
          {"name":"box","descriptor_ids":[1,2,3,4],"demos":[[
            [[0,0,0],[1,0,0],[0,1,0],[0,0,1]],
            [[0,0,0],[1,0,0],[0,1,0],[0,0,1]],
            [[0,0,0],[1,0,0],[0,1,0],[0,0,1]]]]},
          {"name":"stick","descriptor_ids":[10,11,12,13],"demos":[[
            [[2,0,0],[2.5,0,0],[2,0.5,0],[2,0,0.5]],
            [[1.5,0,0],[2,0,0],[1.5,0.5,0],[1.5,0,0.5]],
            [[1,0,0],[1.5,0,0],[1,0.5,0],[1,0,0.5]]]]}]}"#
            .to_string()
    }

    #[test]
    fn loads_minimal_file() {
        let set = parse_demonstration_set(&minimal_file(), LoadOptions::raw()).unwrap();
        assert_eq!(set.demo_count(), 1);
        assert_eq!(set.time_steps(), 3);
        assert_eq!(set.objects.len(), 2);
        assert_eq!(set.objects[1].trajectory.get(0, 2, 1), Vec3::new(1.5, 0.0, 0.0));
        let roles = assign_roles(&set).unwrap();
        assert_eq!(roles, vec![ObjectRole::Master, ObjectRole::Slave]);
    }

    #[test]
    fn rejects_mismatched_time_steps() {
        let text = minimal_file().replacen("[[0,0,0],[1,0,0],[0,1,0],[0,0,1]],\n", "", 1);
        assert!(matches!(parse_demonstration_set(&text, LoadOptions::raw()), Err(KvilError::SchemaError(_))));
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        let dup = minimal_file().replace("[10,11,12,13]", "[10,11,11,13]");
        assert!(matches!(parse_demonstration_set(&dup, LoadOptions::raw()), Err(KvilError::SchemaError(_))));
        assert!(matches!(parse_demonstration_set("{not json", LoadOptions::raw()), Err(KvilError::ParseError(_))));
        let huge = minimal_file().replacen("[2,0,0]", "[2e400,0,0]", 1);
        assert!(matches!(parse_demonstration_set(&huge, LoadOptions::raw()), Err(KvilError::UnitError(_))));
    }

    #[test]
    fn canonical_scale_cases() {
        let corners: Vec<Vec3> = (0..8).map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64)).collect();
        let obj = ObjectRecord::new("cube", (0..8).collect(), Trajectory::from_fn(1, 1, 8, |_, _, h| corners[h])).unwrap();
        let c = compute_canonical_shape(&obj).unwrap();
        assert!((c.scale - 3f64.sqrt()).abs() < 1e-15);

        let two = ObjectRecord::new("pair", vec![0, 1], Trajectory::from_fn(1, 1, 2, |_, _, h| Vec3::new(0.3 * h as f64, 0.0, 0.0))).unwrap();
        assert!((compute_canonical_shape(&two).unwrap().scale - 0.3).abs() < 1e-15);

        let same = ObjectRecord::new("dot", vec![0, 1], Trajectory::from_fn(1, 1, 2, |_, _, _| Vec3::zeros())).unwrap();
        assert!(matches!(compute_canonical_shape(&same), Err(KvilError::DegenerateObject(_))));
    }

    #[test]
    fn canonical_scale_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..300).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let obj = ObjectRecord::new("cloud", (0..300).collect(), Trajectory::from_fn(1, 1, 300, |_, _, h| pts[h])).unwrap();
        let mut brute = 0.0f64;
        for a in &pts {
            for b in &pts {
                brute = brute.max((a - b).norm());
            }
        }
        assert_eq!(compute_canonical_shape(&obj).unwrap().scale, brute);
    }

    fn object_moving(name: &str, amplitude: f64) -> ObjectRecord {
        ObjectRecord::new(
            name,
            vec![0, 1, 2],
            Trajectory::from_fn(2, 20, 3, |_, t, h| Vec3::new(h as f64 + amplitude * (t as f64 * 0.7).sin(), 0.0, 0.0)),
        )
        .unwrap()
    }

    #[test]
    fn roles_follow_motion_variance() {
        let set = DemonstrationSet::new(vec![object_moving("stick", 0.3), object_moving("box", 0.0)]).unwrap();
        assert_eq!(assign_roles(&set).unwrap(), vec![ObjectRole::Slave, ObjectRole::Master]);

        let tie = DemonstrationSet::new(vec![object_moving("a", 0.0), object_moving("b", 0.0)]).unwrap();
        assert_eq!(assign_roles(&tie).unwrap()[0], ObjectRole::Master);

        // variances 1e-2 vs 1e-4 m^2 per coordinate sum
        let slow = object_moving("slow", 0.01 * 2f64.sqrt());
        let fast = object_moving("fast", 0.1 * 2f64.sqrt());
        let set = DemonstrationSet::new(vec![fast, slow]).unwrap();
        assert_eq!(assign_roles(&set).unwrap(), vec![ObjectRole::Slave, ObjectRole::Master]);
        // permuting objects permutes roles
        let swapped = DemonstrationSet::new(vec![set.objects[1].clone(), set.objects[0].clone()]).unwrap();
        assert_eq!(assign_roles(&swapped).unwrap(), vec![ObjectRole::Master, ObjectRole::Slave]);
    }

    fn master_from(points: Vec<Vec3>) -> (ObjectRecord, CanonicalShape) {
        let p = points.len();
        let obj = ObjectRecord::new("master", (100..100 + p as u64).collect(), Trajectory::from_fn(1, 1, p, |_, _, h| points[h])).unwrap();
        let c = compute_canonical_shape(&obj).unwrap();
        (obj, c)
    }

    #[test]
    fn frame_bank_neighbours() {
        let (obj, c) = master_from(vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()]);
        let bank = build_frame_bank(&obj, &c, 4).unwrap();
        for f in &bank.frames {
            let ids: BTreeSet<_> = f.neighbor_ids.iter().collect();
            assert_eq!(ids.len(), 4);
            assert_eq!(f.neighbor_ids[0], f.origin_id);
            assert_eq!(f.reference_positions[0], f.origin);
        }
        assert!(build_frame_bank(&obj, &c, 5).is_err());
        assert!(build_frame_bank(&obj, &c, 2).is_err());
    }

    #[test]
    fn frame_bank_matches_brute_force_knn() {
        let grid: Vec<Vec3> = (0..5).flat_map(|i| (0..4).map(move |k| Vec3::new(i as f64 * 0.1, k as f64 * 0.13, 0.01 * (i * k) as f64))).collect();
        let (obj, c) = master_from(grid.clone());
        let bank = build_frame_bank(&obj, &c, 3).unwrap();
        for (j, f) in bank.frames.iter().enumerate() {
            // brute force: repeatedly pick the closest unused point
            let mut used = vec![false; grid.len()];
            let mut expected = Vec::new();
            for _ in 0..3 {
                let mut best = None;
                for (i, p) in grid.iter().enumerate() {
                    if used[i] {
                        continue;
                    }
                    let d = (p - grid[j]).norm_squared();
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, i));
                    }
                }
                let (_, i) = best.unwrap();
                used[i] = true;
                expected.push(100 + i as u64);
            }
            assert_eq!(f.neighbor_ids, expected);
        }
    }

    #[test]
    fn frame_bank_paper_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (obj, c) = master_from((0..300).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen::<f64>() * 0.2)).collect());
        let bank = build_frame_bank(&obj, &c, 50).unwrap();
        assert_eq!(bank.len(), 300);
        assert!(bank.frames.iter().all(|f| f.reference_positions.len() == 50));
    }

    fn observation(obj: &ObjectRecord, g: &RigidTransform) -> BTreeMap<u64, Vec3> {
        obj.descriptor_ids.iter().copied().zip(obj.trajectory.frame(0, 0).iter().map(|p| g.apply(p))).collect()
    }

    #[test]
    fn detect_frames_identity_and_transformed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (obj, c) = master_from((0..40).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect());
        let bank = build_frame_bank(&obj, &c, 8).unwrap();
        let frames = detect_frames(&bank, &observation(&obj, &RigidTransform::identity())).unwrap();
        assert!(frames.iter().all(|f| f.max_component_diff(&RigidTransform::identity()) < 1e-9));

        let g = RigidTransform::from_rotation_vector(Vec3::new(0.3, -1.2, 0.7), Vec3::new(0.5, 2.0, -1.0));
        let frames = detect_frames_with(&bank, &observation(&obj, &g), Execution::Parallel).unwrap();
        assert!(frames.iter().all(|f| f.max_component_diff(&g) < 1e-9));

        let mut missing = observation(&obj, &g);
        missing.remove(&100);
        assert!(matches!(detect_frames(&bank, &missing), Err(KvilError::MissingCorrespondence(100))));
    }

    #[test]
    fn detect_frames_noise_bound() {
        let sigma = 0.002;
        let q = 20;
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (obj, c) = master_from((0..60).map(|_| Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect());
        let bank = build_frame_bank(&obj, &c, q).unwrap();
        let g = RigidTransform::from_rotation_vector(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.1, 0.0, 0.0));
        let mut sq = 0.0;
        let mut count = 0;
        for _ in 0..20 {
            let obs: BTreeMap<u64, Vec3> = observation(&obj, &g)
                .into_iter()
                .map(|(k, p)| (k, p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))))
                .collect();
            let frames = detect_frames(&bank, &obs).unwrap();
            for (f, spec) in frames.iter().zip(&bank.frames) {
                let centre = crate::geometry::centroid(&spec.reference_positions);
                sq += (f.apply(&centre) - g.apply(&centre)).norm_squared();
                count += 1;
            }
        }
        let rms = (sq / count as f64).sqrt();
        assert!(rms <= 3.0 * sigma / (q as f64).sqrt(), "rms {rms}");
    }

    #[test]
    fn detect_frames_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (obj, c) = master_from((0..30).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect());
        let bank = build_frame_bank(&obj, &c, 6).unwrap();
        let h = RigidTransform::from_rotation_vector(Vec3::new(0.4, 0.0, -0.2), Vec3::new(0.0, 0.3, 0.1));
        let g = RigidTransform::from_rotation_vector(Vec3::new(-1.0, 0.5, 2.0), Vec3::new(3.0, -1.0, 0.5));
        let base = detect_frames(&bank, &observation(&obj, &h)).unwrap();
        let moved = detect_frames(&bank, &observation(&obj, &g.compose(&h))).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            assert!(g.compose(a).max_component_diff(b) < 1e-9);
        }
    }
}
