//! Geometric constraint kinds and their manifolds, expressed in the
//! coordinates of a master local frame.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{KvilError, Result};
use crate::geometry::Vec3;
use crate::pme::{Chart, PrincipalManifold};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintKind {
    #[serde(rename = "p2p")]
    PointToPoint,
    #[serde(rename = "p2l")]
    PointToLine,
    #[serde(rename = "p2P")]
    PointToPlane,
    #[serde(rename = "p2c")]
    PointToCurve,
    #[serde(rename = "p2S")]
    PointToSurface,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 5] = [
        ConstraintKind::PointToPoint,
        ConstraintKind::PointToLine,
        ConstraintKind::PointToPlane,
        ConstraintKind::PointToCurve,
        ConstraintKind::PointToSurface,
    ];

    /// Intrinsic dimension of the constraint manifold.
    pub fn dim(self) -> usize {
        match self {
            ConstraintKind::PointToPoint => 0,
            ConstraintKind::PointToLine | ConstraintKind::PointToCurve => 1,
            ConstraintKind::PointToPlane | ConstraintKind::PointToSurface => 2,
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(
            self,
            ConstraintKind::PointToPoint | ConstraintKind::PointToLine | ConstraintKind::PointToPlane
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintKind::PointToPoint => "p2p",
            ConstraintKind::PointToLine => "p2l",
            ConstraintKind::PointToPlane => "p2P",
            ConstraintKind::PointToCurve => "p2c",
            ConstraintKind::PointToSurface => "p2S",
        }
    }
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstraintKind {
    type Err = KvilError;

    fn from_str(s: &str) -> Result<Self> {
        ConstraintKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| KvilError::ParseError(format!("unknown constraint kind `{s}`")))
    }
}

/// Lower and upper variability thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub xi1: f64,
    pub xi2: f64,
}

impl Thresholds {
    pub fn new(xi1: f64, xi2: f64) -> Result<Self> {
        if !(xi1 > 0.0 && xi1 < xi2 && xi2.is_finite()) {
            return Err(KvilError::SchemaError(format!("thresholds need 0 < xi1 < xi2, got {xi1}, {xi2}")));
        }
        Ok(Self { xi1, xi2 })
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { xi1: 0.02, xi2: 0.10 }
    }
}

/// Point, line or plane through `anchor` spanned by `basis`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub kind: ConstraintKind,
    pub anchor: Vec3,
    pub basis: Vec<Vec3>,
    pub frame_id: usize,
    pub time: usize,
    pub keypoint: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearConstraint {
    pub kind: ConstraintKind,
    pub manifold: PrincipalManifold,
    pub frame_id: usize,
    pub time: usize,
    pub keypoint: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum Constraint {
    Linear(LinearConstraint),
    Nonlinear(NonlinearConstraint),
}

impl Constraint {
    pub fn kind(&self) -> ConstraintKind {
        match self {
            Constraint::Linear(c) => c.kind,
            Constraint::Nonlinear(c) => c.kind,
        }
    }

    pub fn frame_id(&self) -> usize {
        match self {
            Constraint::Linear(c) => c.frame_id,
            Constraint::Nonlinear(c) => c.frame_id,
        }
    }

    pub fn time(&self) -> usize {
        match self {
            Constraint::Linear(c) => c.time,
            Constraint::Nonlinear(c) => c.time,
        }
    }

    pub fn keypoint(&self) -> usize {
        match self {
            Constraint::Linear(c) => c.keypoint,
            Constraint::Nonlinear(c) => c.keypoint,
        }
    }

    pub fn set_frame(&mut self, frame_id: usize) {
        match self {
            Constraint::Linear(c) => c.frame_id = frame_id,
            Constraint::Nonlinear(c) => c.frame_id = frame_id,
        }
    }

    /// Chart coordinates of the closest manifold point to `x`.
    pub fn chart(&self, x: &Vec3) -> Chart {
        match self {
            Constraint::Linear(c) => {
                let d = x - c.anchor;
                let mut u = [0.0; 2];
                for (i, b) in c.basis.iter().enumerate() {
                    u[i] = d.dot(b);
                }
                u
            }
            Constraint::Nonlinear(c) => c.manifold.project(x),
        }
    }

    /// Manifold point at chart coordinates `u`.
    pub fn point_at(&self, u: &Chart) -> Vec3 {
        match self {
            Constraint::Linear(c) => c.basis.iter().enumerate().fold(c.anchor, |acc, (i, b)| acc + b * u[i]),
            Constraint::Nonlinear(c) => c.manifold.reconstruct_unchecked(u),
        }
    }

    /// Closest manifold point to `x`.
    pub fn foot(&self, x: &Vec3) -> Vec3 {
        self.point_at(&self.chart(x))
    }

    /// Distance from `x` to the manifold.
    pub fn distance(&self, x: &Vec3) -> f64 {
        (x - self.foot(x)).norm()
    }

    /// Tangent vectors of the manifold at `u` (empty for points).
    pub fn tangents(&self, u: &Chart) -> Vec<Vec3> {
        match self {
            Constraint::Linear(c) => c.basis.clone(),
            Constraint::Nonlinear(c) => c.manifold.tangents(u)[..c.manifold.dim()].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in ConstraintKind::ALL {
            assert_eq!(k.as_str().parse::<ConstraintKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
        }
        assert!("p2x".parse::<ConstraintKind>().is_err());
        assert_eq!(ConstraintKind::PointToPlane.dim(), 2);
        assert!(!ConstraintKind::PointToCurve.is_linear());
    }

    #[test]
    fn thresholds_validate_order() {
        assert!(Thresholds::new(0.02, 0.1).is_ok());
        assert!(Thresholds::new(0.1, 0.02).is_err());
        assert!(Thresholds::new(0.0, 0.02).is_err());
    }

    #[test]
    fn line_foot_and_distance() {
        let c = Constraint::Linear(LinearConstraint {
            kind: ConstraintKind::PointToLine,
            anchor: Vec3::new(1.0, 0.0, 0.0),
            basis: vec![Vec3::y()],
            frame_id: 0,
            time: 0,
            keypoint: 0,
        });
        let x = Vec3::new(2.0, 3.0, 0.0);
        assert_eq!(c.foot(&x), Vec3::new(1.0, 3.0, 0.0));
        assert!((c.distance(&x) - 1.0).abs() < 1e-15);
        assert_eq!(c.chart(&x)[0], 3.0);
    }
}
