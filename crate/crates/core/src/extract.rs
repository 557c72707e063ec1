//! End-to-end constraint extraction: frame detection, the candidate × frame
//! × time sweep, clustering, and movement primitive training.

use std::collections::HashSet;

use crate::cluster::{cluster_position, cluster_time, resolve_frames, select_representative, Selection};
use crate::constraint::{Constraint, ConstraintKind, Thresholds};
use crate::error::{KvilError, Result};
use crate::geometry::{RigidTransform, Trajectory, Vec3};
use crate::ingest::{
    assign_roles, build_frame_bank, compute_canonical_shape, detect_frames_over_time, DemonstrationSet, FrameBank,
    ObjectRecord, ObjectRole,
};
use crate::par::{map_range, Execution};
use crate::pce_linear::{classify_linear, express_in_frames, linear_constraint, one_shot_extract, pca_variability};
use crate::pce_nonlinear::{extract_nonlinear, MIN_NONLINEAR_DEMOS};
use crate::pme::PmeConfig;
use crate::task::{ObjectSummary, TaskKeypoint, TaskRepresentation, TASK_FORMAT};
use crate::vmp::{fit_vmp, resample, DEFAULT_KERNELS};

/// How much of the frame or time axis the nonlinear pass visits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepScope {
    /// Frames: the frame nearest to each candidate. Times: the last step and
    /// the representative times of the linear selections.
    Focused,
    Strided(usize),
}

#[derive(Clone, Debug)]
pub struct ExtractConfig {
    pub thresholds: Thresholds,
    /// Neighbors per local frame (capped at the master's candidate count).
    pub neighbors: usize,
    pub pme: PmeConfig,
    pub frame_stride: usize,
    pub time_stride: usize,
    pub nonlinear_frames: SweepScope,
    pub nonlinear_times: SweepScope,
    /// Time merge cutoff as a fraction of the number of time steps.
    pub time_cutoff: f64,
    /// Position merge cutoff as a fraction of the slave scale.
    pub position_cutoff: f64,
    pub vmp_kernels: usize,
    pub vmp_samples: usize,
    /// Task-space dimension for the single-demonstration criteria.
    pub one_shot_dims: usize,
    pub execution: Execution,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            neighbors: 50,
            pme: PmeConfig::default(),
            frame_stride: 1,
            time_stride: 1,
            nonlinear_frames: SweepScope::Focused,
            nonlinear_times: SweepScope::Focused,
            time_cutoff: 0.05,
            position_cutoff: 0.1,
            vmp_kernels: DEFAULT_KERNELS,
            vmp_samples: 100,
            one_shot_dims: 3,
            execution: Execution::default(),
        }
    }
}

/// Detected master frames for a subset of the bank, indexed `[t][n][slot]`.
struct FrameTrack {
    ids: Vec<usize>,
    slot: Vec<Option<usize>>,
    frames: Vec<Vec<Vec<RigidTransform>>>,
}

impl FrameTrack {
    fn new(bank: &FrameBank, master: &ObjectRecord, ids: Vec<usize>, exec: Execution) -> Result<Self> {
        let frames = detect_frames_over_time(bank, master, &ids, exec)?;
        let mut slot = vec![None; bank.len()];
        for (s, &j) in ids.iter().enumerate() {
            slot[j] = Some(s);
        }
        Ok(Self { ids, slot, frames })
    }

    fn local(&self, slave: &Trajectory, j: usize, k: usize, t: usize) -> Vec<Vec3> {
        let s = self.slot[j].expect("frame tracked");
        (0..slave.demos()).map(|n| self.frames[t][n][s].apply_inverse(&slave.get(n, t, k))).collect()
    }
}

fn strided(len: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..len).step_by(stride.max(1)).collect();
    if v.last() != Some(&(len - 1)) {
        v.push(len - 1);
    }
    v
}

/// Linear selections over every tracked frame and sampled time, then
/// nonlinear selections for the candidates left unclaimed.
fn sweep(
    slave: &ObjectRecord,
    scale: f64,
    bank: &FrameBank,
    track: &FrameTrack,
    cfg: &ExtractConfig,
) -> Vec<Selection> {
    let traj = &slave.trajectory;
    let n = traj.demos();
    let times = strided(traj.time_steps(), cfg.time_stride);
    let units: Vec<(usize, usize)> = track.ids.iter().flat_map(|&j| times.iter().map(move |&t| (j, t))).collect();
    let mut selections: Vec<Selection> = map_range(cfg.execution, units.len(), |u| {
        let (j, t) = units[u];
        let mut out = Vec::new();
        for k in 0..traj.points() {
            let pts = track.local(traj, j, k, t);
            let Ok(var) = pca_variability(&pts, scale) else {
                continue;
            };
            if let Some(kind) = classify_linear(&var.eta, &cfg.thresholds, n) {
                out.push(Selection {
                    candidate: k,
                    frame: j,
                    time: t,
                    constraint: Constraint::Linear(linear_constraint(&var, kind, j, t, k)),
                    score: var.eta[kind.dim()],
                });
            }
        }
        out
    })
    .into_iter()
    .flatten()
    .collect();

    if n >= MIN_NONLINEAR_DEMOS {
        let claimed: HashSet<(usize, usize)> = selections.iter().map(|s| (s.candidate, s.time)).collect();
        let nl_times: Vec<usize> = match cfg.nonlinear_times {
            SweepScope::Strided(stride) => strided(times.len(), stride).into_iter().map(|i| times[i]).collect(),
            SweepScope::Focused => {
                let mut v: Vec<usize> = cluster_time(&selections, cfg.time_cutoff * traj.time_steps() as f64)
                    .iter()
                    .map(|c| selections[select_representative(&selections, c)].time)
                    .collect();
                v.push(traj.time_steps() - 1);
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        let claimed = &claimed;
        let nl_times = &nl_times;
        let free = move |t: usize| (0..traj.points()).filter(move |&k| !claimed.contains(&(k, t)));
        let units: Vec<(usize, usize, usize)> = match cfg.nonlinear_frames {
            SweepScope::Strided(stride) => track
                .ids
                .iter()
                .step_by(stride.max(1))
                .flat_map(|&j| nl_times.iter().flat_map(move |&t| free(t).map(move |k| (j, t, k))))
                .collect(),
            SweepScope::Focused => nl_times
                .iter()
                .flat_map(|&t| {
                    free(t).map(move |k| {
                        let j = track
                            .ids
                            .iter()
                            .copied()
                            .min_by(|&a, &b| {
                                mean_origin_distance(bank, track, traj, a, k, t).total_cmp(&mean_origin_distance(bank, track, traj, b, k, t))
                            })
                            .expect("at least one frame");
                        (j, t, k)
                    })
                })
                .collect(),
        };
        let found = map_range(cfg.execution, units.len(), |u| {
            let (j, t, k) = units[u];
            let pts = track.local(traj, j, k, t);
            extract_nonlinear(&pts, scale, &cfg.thresholds, &cfg.pme, j, t, k).map(|(c, var)| Selection {
                candidate: k,
                frame: j,
                time: t,
                constraint: Constraint::Nonlinear(c),
                score: var.eta_perp,
            })
        });
        selections.extend(found.into_iter().flatten());
    }
    selections
}

fn mean_origin_distance(bank: &FrameBank, track: &FrameTrack, slave: &Trajectory, j: usize, k: usize, t: usize) -> f64 {
    let origin = bank.frames[j].origin;
    let pts = track.local(slave, j, k, t);
    pts.iter().map(|p| (p - origin).norm()).sum::<f64>() / pts.len() as f64
}

fn train_keypoint(
    slave: &ObjectRecord,
    bank: &FrameBank,
    track: &FrameTrack,
    constraint: Constraint,
    score: f64,
    cfg: &ExtractConfig,
) -> Result<TaskKeypoint> {
    let (j, t, k) = (constraint.frame_id(), constraint.time(), constraint.keypoint());
    let traj = &slave.trajectory;
    let demos: Vec<Vec<Vec<f64>>> = (0..traj.demos())
        .map(|n| {
            let seq: Vec<Vec<f64>> = (0..=t)
                .map(|s| {
                    let x = track.frames[s][n][track.slot[j].expect("frame tracked")].apply_inverse(&traj.get(n, s, k));
                    if constraint.kind() == ConstraintKind::PointToPoint {
                        vec![x.x, x.y, x.z]
                    } else {
                        vec![constraint.distance(&x)]
                    }
                })
                .collect();
            resample(&seq, cfg.vmp_samples.max(cfg.vmp_kernels))
        })
        .collect();
    let vmp = fit_vmp(&demos, cfg.vmp_kernels)?;
    let targets = track.local(traj, j, k, t).iter().map(|x| constraint.chart(x)).collect();
    let mut frame = bank.frames[j].clone();
    frame.neighbor_index.clear();
    Ok(TaskKeypoint {
        slave: slave.name.clone(),
        descriptor_id: slave.descriptor_ids[k],
        candidate: k,
        constraint,
        frame,
        vmp,
        targets,
        score,
    })
}

/// Runs the full extraction on a demonstration set.
pub fn extract_task(demos: &DemonstrationSet, cfg: &ExtractConfig) -> Result<TaskRepresentation> {
    let roles = assign_roles(demos)?;
    let master_idx = roles.iter().position(|r| *r == ObjectRole::Master).expect("one master");
    let master = &demos.objects[master_idx];
    let master_canonical = compute_canonical_shape(master)?;
    let q = cfg.neighbors.min(master.candidate_count());
    let bank = build_frame_bank(master, &master_canonical, q)?;
    let n = demos.demo_count();
    let steps = demos.time_steps();

    let frame_ids: Vec<usize> = if n == 1 {
        (0..bank.len()).collect()
    } else {
        (0..bank.len()).step_by(cfg.frame_stride.max(1)).collect()
    };
    let track = FrameTrack::new(&bank, master, frame_ids, cfg.execution)?;

    let mut slaves = Vec::new();
    let mut keypoints = Vec::new();
    for (i, slave) in demos.objects.iter().enumerate() {
        if i == master_idx {
            continue;
        }
        let canonical = compute_canonical_shape(slave)?;
        let scale = canonical.scale;
        if n == 1 {
            let last = steps - 1;
            let final_pose = Trajectory::from_fn(1, 1, slave.candidate_count(), |_, _, h| slave.trajectory.get(0, last, h));
            let tensor = express_in_frames(&final_pose, &[track.frames[last].clone()])?;
            let shot = one_shot_extract(&tensor, &bank, cfg.one_shot_dims)?;
            for mut c in shot.constraints {
                c.time = last;
                keypoints.push(train_keypoint(slave, &bank, &track, Constraint::Linear(c), 0.0, cfg)?);
            }
        } else {
            let selections = sweep(slave, scale, &bank, &track, cfg);
            let positions = canonical.positions.points();
            for tc in cluster_time(&selections, cfg.time_cutoff * steps as f64) {
                for (kind, pc) in cluster_position(&selections, &tc, positions, cfg.position_cutoff * scale) {
                    let rep = &selections[select_representative(&selections, &pc)];
                    let options: Vec<(usize, f64)> = selections
                        .iter()
                        .filter(|s| s.candidate == rep.candidate && s.time == rep.time && s.kind() == kind)
                        .map(|s| (s.frame, mean_origin_distance(&bank, &track, &slave.trajectory, s.frame, s.candidate, s.time)))
                        .collect();
                    let j = resolve_frames(&options);
                    let chosen = selections
                        .iter()
                        .find(|s| s.candidate == rep.candidate && s.time == rep.time && s.kind() == kind && s.frame == j)
                        .expect("resolved frame has a selection");
                    keypoints.push(train_keypoint(slave, &bank, &track, chosen.constraint.clone(), chosen.score, cfg)?);
                }
            }
        }
        slaves.push(ObjectSummary {
            name: slave.name.clone(),
            descriptor_ids: slave.descriptor_ids.clone(),
            canonical,
        });
    }
    if keypoints.is_empty() {
        return Err(KvilError::InsufficientData("no constraint satisfied the variability criteria".into()));
    }
    Ok(TaskRepresentation {
        format: TASK_FORMAT.to_string(),
        demo_count: n,
        time_steps: steps,
        thresholds: cfg.thresholds,
        master: ObjectSummary {
            name: master.name.clone(),
            descriptor_ids: master.descriptor_ids.clone(),
            canonical: master_canonical,
        },
        slaves,
        keypoints,
    })
}
