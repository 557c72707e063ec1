//! Redundancy removal: single-linkage clustering of selections in time and
//! by canonical candidate position, then one representative per cluster.

use std::collections::BTreeMap;

use crate::constraint::{Constraint, ConstraintKind};
use crate::geometry::Vec3;

/// A candidate jointly selected with a frame and a time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub candidate: usize,
    pub frame: usize,
    pub time: usize,
    pub constraint: Constraint,
    /// Off-manifold variability; lower is better.
    pub score: f64,
}

impl Selection {
    pub fn kind(&self) -> ConstraintKind {
        self.constraint.kind()
    }
}

/// Groups sorted scalar values whose consecutive gaps are at most `cutoff`.
/// Returns index groups ordered by value.
pub fn single_linkage_1d(values: &[f64], cutoff: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for i in order {
        if groups.is_empty() || values[i] - last > cutoff {
            groups.push(Vec::new());
        }
        groups.last_mut().expect("group exists").push(i);
        last = values[i];
    }
    groups
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Connected components of the graph linking points at most `cutoff` apart.
/// Groups are ordered by their lowest index and sorted inside.
pub fn single_linkage(points: &[Vec3], cutoff: f64) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..points.len()).collect();
    for a in 0..points.len() {
        for b in a + 1..points.len() {
            if (points[a] - points[b]).norm() <= cutoff {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..points.len() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Time clusters of selection indices, ordered by time.
pub fn cluster_time(selections: &[Selection], cutoff: f64) -> Vec<Vec<usize>> {
    let times: Vec<f64> = selections.iter().map(|s| s.time as f64).collect();
    single_linkage_1d(&times, cutoff)
}

/// Splits a time cluster by constraint kind, then by canonical position of
/// the selected candidates.
pub fn cluster_position(
    selections: &[Selection],
    cluster: &[usize],
    canonical: &[Vec3],
    cutoff: f64,
) -> Vec<(ConstraintKind, Vec<usize>)> {
    let mut by_kind: BTreeMap<ConstraintKind, Vec<usize>> = BTreeMap::new();
    for &i in cluster {
        by_kind.entry(selections[i].kind()).or_default().push(i);
    }
    let mut out = Vec::new();
    for (kind, members) in by_kind {
        let mut candidates: Vec<usize> = members.iter().map(|&i| selections[i].candidate).collect();
        candidates.sort_unstable();
        candidates.dedup();
        let positions: Vec<Vec3> = candidates.iter().map(|&k| canonical[k]).collect();
        for group in single_linkage(&positions, cutoff) {
            let in_group: Vec<usize> = group.iter().map(|&g| candidates[g]).collect();
            let sel: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&i| in_group.binary_search(&selections[i].candidate).is_ok())
                .collect();
            out.push((kind, sel));
        }
    }
    out
}

/// Lowest score; ties go to the lowest candidate, then time, then frame.
pub fn select_representative(selections: &[Selection], cluster: &[usize]) -> usize {
    *cluster
        .iter()
        .min_by(|&&a, &&b| {
            let (x, y) = (&selections[a], &selections[b]);
            x.score
                .total_cmp(&y.score)
                .then(x.candidate.cmp(&y.candidate))
                .then(x.time.cmp(&y.time))
                .then(x.frame.cmp(&y.frame))
        })
        .expect("non-empty cluster")
}

/// Among `options` (frame id, mean origin distance) picks the nearest frame,
/// ties to the lowest id.
pub fn resolve_frames(options: &[(usize, f64)]) -> usize {
    options
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("at least one frame")
        .0
}
