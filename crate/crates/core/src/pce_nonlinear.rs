//! Point-to-curve and point-to-surface constraints from principal manifolds.

use serde::{Deserialize, Serialize};

use crate::constraint::{ConstraintKind, NonlinearConstraint, Thresholds};
use crate::geometry::{centroid, Vec3};
use crate::pme::{fit_pme, PmeConfig, PrincipalManifold};

/// Fewest demonstrations for which nonlinear constraints are considered.
pub const MIN_NONLINEAR_DEMOS: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldVariability {
    pub eta_perp: f64,
    pub eta_par: f64,
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Spread of the manifold coordinates of the projections (total variance
/// over the chart axes) and of the stress vector lengths, both over the scale.
pub fn nonlinear_variability(manifold: &PrincipalManifold, points: &[Vec3], scale: f64) -> ManifoldVariability {
    let mut charts = Vec::with_capacity(points.len());
    let mut stress = Vec::with_capacity(points.len());
    for x in points {
        let (u, _, s) = manifold.foot_point(x);
        charts.push(u);
        stress.push(s.norm());
    }
    let tangential: f64 = (0..manifold.dim())
        .map(|i| {
            let sd = std_dev(&charts.iter().map(|u| u[i]).collect::<Vec<_>>());
            sd * sd
        })
        .sum();
    ManifoldVariability {
        eta_perp: std_dev(&stress) / scale,
        eta_par: tangential.sqrt() / scale,
    }
}

pub fn classify_nonlinear(var: &ManifoldVariability, th: &Thresholds, dim: usize) -> Option<ConstraintKind> {
    if var.eta_perp < th.xi1 && var.eta_par > th.xi2 {
        match dim {
            1 => Some(ConstraintKind::PointToCurve),
            2 => Some(ConstraintKind::PointToSurface),
            _ => None,
        }
    } else {
        None
    }
}

/// Tries a curve, then a surface, and returns the first manifold that
/// classifies, with its variability.
pub fn extract_nonlinear(
    points: &[Vec3],
    scale: f64,
    th: &Thresholds,
    cfg: &PmeConfig,
    frame_id: usize,
    time: usize,
    keypoint: usize,
) -> Option<(NonlinearConstraint, ManifoldVariability)> {
    if points.len() < MIN_NONLINEAR_DEMOS {
        return None;
    }
    // the tangential spread cannot exceed the total spread
    let c = centroid(points);
    let total = (points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / points.len() as f64).sqrt() / scale;
    if total <= th.xi2 {
        return None;
    }
    for dim in 1..=2 {
        let Ok(manifold) = fit_pme(points, dim, cfg) else {
            continue;
        };
        let var = nonlinear_variability(&manifold, points, scale);
        if let Some(kind) = classify_nonlinear(&var, th, dim) {
            return Some((
                NonlinearConstraint {
                    kind,
                    manifold,
                    frame_id,
                    time,
                    keypoint,
                },
                var,
            ));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::FRAC_PI_2;

    fn arc(n: usize, radial_sigma: f64, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0, radial_sigma.max(1e-300)).unwrap();
        (0..n)
            .map(|i| {
                let th = FRAC_PI_2 * i as f64 / (n - 1) as f64;
                let r = 1.0 + if radial_sigma > 0.0 { g.sample(&mut rng) } else { 0.0 };
                Vec3::new(r * th.cos(), r * th.sin(), 0.0)
            })
            .collect()
    }

    #[test]
    fn points_on_manifold_have_no_orthogonal_spread() {
        let pts = arc(30, 0.0, 0);
        let m = fit_pme(&pts, 1, &PmeConfig::default()).unwrap();
        let var = nonlinear_variability(&m, &pts, 1.0);
        assert!(var.eta_perp < 1e-4, "{var:?}");
        assert!(var.eta_par > 0.1);
    }

    #[test]
    fn coincident_points_have_zero_variability() {
        let m = fit_pme(&arc(30, 0.0, 0), 1, &PmeConfig::default()).unwrap();
        let p = m.reconstruct_unchecked(&[0.4, 0.0]);
        let var = nonlinear_variability(&m, &vec![p; 12], 1.0);
        assert!(var.eta_perp < 1e-12 && var.eta_par < 1e-12, "{var:?}");
    }

    #[test]
    fn orthogonal_spread_matches_half_normal() {
        // |s| of radial Gaussian noise is half-normal: std = sigma * sqrt(1 - 2/pi)
        let sigma = 0.01;
        let expected = sigma * (1.0 - 2.0 / std::f64::consts::PI).sqrt();
        let mut acc = 0.0;
        let runs = 20;
        for seed in 0..runs {
            let pts = arc(200, sigma, seed);
            let m = fit_pme(&pts, 1, &PmeConfig::default()).unwrap();
            acc += nonlinear_variability(&m, &pts, 1.0).eta_perp;
        }
        let mean = acc / runs as f64;
        assert!((mean - expected).abs() < 0.15 * expected, "{mean} vs {expected}");
    }

    #[test]
    fn classification_examples() {
        let th = Thresholds::default();
        let v = ManifoldVariability { eta_perp: 0.005, eta_par: 0.4 };
        assert_eq!(classify_nonlinear(&v, &th, 1), Some(ConstraintKind::PointToCurve));
        assert_eq!(classify_nonlinear(&v, &th, 2), Some(ConstraintKind::PointToSurface));
        let v = ManifoldVariability { eta_perp: 0.05, eta_par: 0.4 };
        assert_eq!(classify_nonlinear(&v, &th, 1), None);
    }

    #[test]
    fn shallow_arc_targets_give_curve() {
        // eleven targets on a shallow arc: too curved for a line, too thin for a plane
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Normal::new(0.0, 0.005).unwrap();
        let pts: Vec<Vec3> = (0..11)
            .map(|i| {
                let th = -0.65 + 1.3 * i as f64 / 10.0 + rng.gen_range(-0.02..0.02);
                Vec3::new(0.9 * th.sin(), 0.9 * (1.0 - th.cos()), 0.0) + Vec3::new(g.sample(&mut rng), g.sample(&mut rng), g.sample(&mut rng))
            })
            .collect();
        let (c, var) = extract_nonlinear(&pts, 1.0, &Thresholds::default(), &PmeConfig::default(), 0, 0, 0).unwrap();
        assert_eq!(c.kind, ConstraintKind::PointToCurve, "{var:?}");
    }

    #[test]
    fn gate_requires_eleven_demos() {
        let pts = arc(10, 0.0, 0);
        assert!(extract_nonlinear(&pts, 1.0, &Thresholds::default(), &PmeConfig::default(), 0, 0, 0).is_none());
    }

    #[test]
    fn cap_targets_give_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec3> = (0..11)
            .map(|_| {
                let (u, v): (f64, f64) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
                Vec3::new(u, v, 1.2 - (1.44 - u * u - v * v).sqrt())
            })
            .collect();
        let got = extract_nonlinear(&pts, 1.0, &Thresholds::default(), &PmeConfig::default(), 0, 0, 0);
        let (c, var) = got.expect("surface");
        assert_eq!(c.kind, ConstraintKind::PointToSurface, "{var:?}");
    }
}
