//! Principal manifold estimation: curvature-penalized principal curves
//! (`d = 1`) and surfaces (`d = 2`) fitted by alternating projection and
//! penalized B-spline smoothing, with the smoothing weight picked by
//! generalized cross-validation.
//!
//! All fitting happens in normalized coordinates `(x - center) / scale` where
//! `scale` is the largest pairwise distance of the data. Public chart
//! coordinates are in meters.

use std::sync::OnceLock;

use nalgebra::{DMatrix, Matrix3xX};
use serde::{Deserialize, Serialize};

use crate::error::{KvilError, Result};
use crate::geometry::{centroid, max_pairwise_distance, principal_axes, Vec3};
use crate::spline::CubicBasis;

/// Chart coordinates; only the first `dim` entries are meaningful.
pub type Chart = [f64; 2];

/// Extra room around the fitted parameter hull, as a fraction of its extent.
pub const CHART_MARGIN: f64 = 0.2;

pub fn default_lambda_grid() -> Vec<f64> {
    (-8..=2).map(|e| 10f64.powi(e)).collect()
}

#[derive(Clone, Debug)]
pub struct PmeConfig {
    pub lambda_grid: Vec<f64>,
    pub max_iterations: usize,
    /// Convergence threshold on the mean foot-point shift, relative to scale.
    pub tolerance: f64,
    pub dense_samples: usize,
    pub refine_steps: usize,
    pub min_points: usize,
    /// Consecutive non-decreasing shifts tolerated before giving up.
    pub patience: usize,
}

impl Default for PmeConfig {
    fn default() -> Self {
        Self {
            lambda_grid: default_lambda_grid(),
            max_iterations: 50,
            tolerance: 1e-6,
            dense_samples: 512,
            refine_steps: 20,
            min_points: 11,
            patience: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SplineMap {
    bases: Vec<CubicBasis>,
    coefficients: Vec<Vec3>,
}

struct Derivs {
    value: Vec3,
    d1: [Vec3; 2],
    d2: [[Vec3; 2]; 2],
}

impl SplineMap {
    fn dim(&self) -> usize {
        self.bases.len()
    }

    fn n_basis(&self) -> usize {
        self.bases.iter().map(CubicBasis::len).product()
    }

    /// Sparse design row: (basis index, value).
    fn row(&self, u: &Chart, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let eu = self.bases[0].eval(u[0]);
        if self.dim() == 1 {
            for k in 0..4 {
                out.push((eu.first + k, eu.value[k]));
            }
        } else {
            let ev = self.bases[1].eval(u[1]);
            let mv = self.bases[1].len();
            for a in 0..4 {
                for b in 0..4 {
                    out.push(((eu.first + a) * mv + ev.first + b, eu.value[a] * ev.value[b]));
                }
            }
        }
    }

    fn eval(&self, u: &Chart) -> Vec3 {
        let eu = self.bases[0].eval(u[0]);
        if self.dim() == 1 {
            (0..4).fold(Vec3::zeros(), |acc, k| acc + self.coefficients[eu.first + k] * eu.value[k])
        } else {
            let ev = self.bases[1].eval(u[1]);
            let mv = self.bases[1].len();
            let mut acc = Vec3::zeros();
            for a in 0..4 {
                for b in 0..4 {
                    acc += self.coefficients[(eu.first + a) * mv + ev.first + b] * (eu.value[a] * ev.value[b]);
                }
            }
            acc
        }
    }

    fn derivs(&self, u: &Chart) -> Derivs {
        let eu = self.bases[0].eval(u[0]);
        let z = Vec3::zeros();
        if self.dim() == 1 {
            let mut d = Derivs {
                value: z,
                d1: [z, z],
                d2: [[z, z], [z, z]],
            };
            for k in 0..4 {
                let c = self.coefficients[eu.first + k];
                d.value += c * eu.value[k];
                d.d1[0] += c * eu.d1[k];
                d.d2[0][0] += c * eu.d2[k];
            }
            d
        } else {
            let ev = self.bases[1].eval(u[1]);
            let mv = self.bases[1].len();
            let mut d = Derivs {
                value: z,
                d1: [z, z],
                d2: [[z, z], [z, z]],
            };
            for a in 0..4 {
                for b in 0..4 {
                    let c = self.coefficients[(eu.first + a) * mv + ev.first + b];
                    d.value += c * (eu.value[a] * ev.value[b]);
                    d.d1[0] += c * (eu.d1[a] * ev.value[b]);
                    d.d1[1] += c * (eu.value[a] * ev.d1[b]);
                    d.d2[0][0] += c * (eu.d2[a] * ev.value[b]);
                    d.d2[1][1] += c * (eu.value[a] * ev.d2[b]);
                    d.d2[0][1] += c * (eu.d1[a] * ev.d1[b]);
                }
            }
            d.d2[1][0] = d.d2[0][1];
            d
        }
    }

    fn penalty(&self) -> DMatrix<f64> {
        if self.dim() == 1 {
            self.bases[0].integral(2, 2)
        } else {
            let (bu, bv) = (&self.bases[0], &self.bases[1]);
            let (gu, du, ou) = (bu.integral(0, 0), bu.integral(1, 1), bu.integral(2, 2));
            let (gv, dv, ov) = (bv.integral(0, 0), bv.integral(1, 1), bv.integral(2, 2));
            ou.kronecker(&gv) + du.kronecker(&dv) * 2.0 + gu.kronecker(&ov)
        }
    }

    fn energy(&self) -> f64 {
        let omega = self.penalty();
        let c = Matrix3xX::from_columns(&self.coefficients);
        (0..3)
            .map(|r| {
                let row = c.row(r).transpose();
                (row.transpose() * &omega * &row)[(0, 0)]
            })
            .sum::<f64>()
            .max(0.0)
    }
}

/// Dense samples of the map over a search box, for projection seeding.
#[derive(Clone, Debug)]
struct SampleGrid {
    per_dim: Vec<usize>,
    box_lo: Chart,
    box_hi: Chart,
    charts: Vec<Chart>,
    points: Vec<Vec3>,
}

impl SampleGrid {
    fn new(map: &SplineMap, box_lo: Chart, box_hi: Chart, samples: usize) -> Self {
        let dim = map.dim();
        let per = if dim == 1 { samples.max(2) } else { ((samples as f64).sqrt().ceil() as usize).max(2) };
        let per_dim = vec![per; dim];
        let coord = |k: usize, i: usize| box_lo[k] + (box_hi[k] - box_lo[k]) * i as f64 / (per - 1) as f64;
        let mut charts = Vec::new();
        if dim == 1 {
            for i in 0..per {
                charts.push([coord(0, i), 0.0]);
            }
        } else {
            for i in 0..per {
                for j in 0..per {
                    charts.push([coord(0, i), coord(1, j)]);
                }
            }
        }
        let points = charts.iter().map(|c| map.eval(c)).collect();
        Self {
            per_dim,
            box_lo,
            box_hi,
            charts,
            points,
        }
    }

    fn nearest(&self, x: &Vec3) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.points.iter().enumerate() {
            let d = (p - x).norm_squared();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    fn spacing(&self, k: usize) -> f64 {
        (self.box_hi[k] - self.box_lo[k]) / (self.per_dim[k] - 1) as f64
    }
}

fn project_on(map: &SplineMap, grid: &SampleGrid, x: &Vec3, steps: usize) -> Chart {
    let start = grid.charts[grid.nearest(x)];
    if map.dim() == 1 {
        refine_curve(map, grid, x, start, steps)
    } else {
        refine_surface(map, grid, x, start, steps)
    }
}

fn refine_curve(map: &SplineMap, grid: &SampleGrid, x: &Vec3, start: Chart, steps: usize) -> Chart {
    let h = grid.spacing(0);
    let mut lo = (start[0] - h).max(grid.box_lo[0]);
    let mut hi = (start[0] + h).min(grid.box_hi[0]);
    let mut u = start[0];
    let objective = |u: f64| (x - map.eval(&[u, 0.0])).norm_squared();
    let mut best = (objective(u), u);
    for _ in 0..steps {
        let d = map.derivs(&[u, 0.0]);
        let r = x - d.value;
        let g1 = -r.dot(&d.d1[0]);
        let g2 = d.d1[0].norm_squared() - r.dot(&d.d2[0][0]);
        if g1 > 0.0 {
            hi = hi.min(u);
        } else {
            lo = lo.max(u);
        }
        let mut next = if g2 > 0.0 { u - g1 / g2 } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let f = objective(next);
        if f < best.0 {
            best = (f, next);
        }
        if (next - u).abs() <= 1e-15 * (1.0 + u.abs()) {
            break;
        }
        u = next;
    }
    [best.1, 0.0]
}

fn refine_surface(map: &SplineMap, grid: &SampleGrid, x: &Vec3, start: Chart, steps: usize) -> Chart {
    let clamp = |c: Chart| -> Chart {
        [
            c[0].clamp(grid.box_lo[0], grid.box_hi[0]),
            c[1].clamp(grid.box_lo[1], grid.box_hi[1]),
        ]
    };
    let objective = |c: &Chart| (x - map.eval(c)).norm_squared();
    let mut u = start;
    let mut fu = objective(&u);
    for _ in 0..steps {
        let d = map.derivs(&u);
        let r = x - d.value;
        let g = [-r.dot(&d.d1[0]), -r.dot(&d.d1[1])];
        let mut hess = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                hess[a][b] = d.d1[a].dot(&d.d1[b]) - r.dot(&d.d2[a][b]);
            }
        }
        let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0];
        if !(hess[0][0] > 0.0 && det > 0.0) {
            // fall back to Gauss-Newton
            for a in 0..2 {
                for b in 0..2 {
                    hess[a][b] = d.d1[a].dot(&d.d1[b]);
                }
                hess[a][a] += 1e-12;
            }
        }
        let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let step = [
            -(hess[1][1] * g[0] - hess[0][1] * g[1]) / det,
            -(-hess[1][0] * g[0] + hess[0][0] * g[1]) / det,
        ];
        let mut scale = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let cand = clamp([u[0] + scale * step[0], u[1] + scale * step[1]]);
            let fc = objective(&cand);
            if fc <= fu {
                moved = (cand[0] - u[0]).abs() + (cand[1] - u[1]).abs() > 0.0;
                u = cand;
                fu = fc;
                break;
            }
            scale *= 0.5;
        }
        if !moved {
            break;
        }
    }
    u
}

/// Penalized least-squares smoothing with the weight chosen by GCV.
fn smooth_fit(bases: &[CubicBasis], params: &[Chart], targets: &[Vec3], grid: &[f64]) -> (Vec<Vec3>, f64) {
    let shell = SplineMap {
        bases: bases.to_vec(),
        coefficients: Vec::new(),
    };
    let m = shell.n_basis();
    let n = params.len() as f64;
    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DMatrix::<f64>::zeros(m, 3);
    let mut row = Vec::with_capacity(16);
    let mut rows = Vec::with_capacity(params.len());
    for (u, x) in params.iter().zip(targets) {
        shell.row(u, &mut row);
        for &(i, vi) in &row {
            for &(j, vj) in &row {
                gram[(i, j)] += vi * vj / n;
            }
            for c in 0..3 {
                rhs[(i, c)] += vi * x[c] / n;
            }
        }
        rows.push(row.clone());
    }
    let omega = shell.penalty();

    let eps = 1e-12 * (gram.trace() / m as f64).max(1e-12);
    let mut reg = gram.clone();
    for i in 0..m {
        reg[(i, i)] += eps;
    }
    let chol = reg.cholesky().expect("regularized gram is positive definite");
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(m, m))
        .expect("triangular inverse");
    let k = &l_inv * &omega * l_inv.transpose();
    let k = (&k + k.transpose()) * 0.5;
    let eig = k.symmetric_eigen();
    let u = eig.eigenvectors;
    let e: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let back = l_inv.transpose() * &u;
    let w = u.transpose() * &l_inv * &gram * l_inv.transpose() * &u;
    let z = u.transpose() * &l_inv * &rhs;

    // the data term is a sum over points while the normal equations use the mean
    let solve = |lambda: f64| -> DMatrix<f64> {
        let mut zz = z.clone();
        for i in 0..m {
            let d = 1.0 / (1.0 + lambda / n * e[i]);
            for c in 0..3 {
                zz[(i, c)] *= d;
            }
        }
        &back * zz
    };

    let mut best: Option<(f64, f64, DMatrix<f64>)> = None;
    for &lambda in grid {
        let coef = solve(lambda);
        let score = if grid.len() == 1 {
            0.0
        } else {
            let mut rss = 0.0;
            for (r, x) in rows.iter().zip(targets) {
                let mut fit = Vec3::zeros();
                for &(i, v) in r {
                    fit += Vec3::new(coef[(i, 0)], coef[(i, 1)], coef[(i, 2)]) * v;
                }
                rss += (x - fit).norm_squared();
            }
            rss /= n;
            let trace: f64 = (0..m).map(|i| w[(i, i)] / (1.0 + lambda / n * e[i])).sum();
            let denom = 1.0 - trace / n;
            if denom <= 1e-9 {
                f64::INFINITY
            } else {
                rss / (denom * denom)
            }
        };
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, lambda, coef));
        }
    }
    let (_, lambda, coef) = best.expect("non-empty lambda grid");
    let coefficients = (0..m).map(|i| Vec3::new(coef[(i, 0)], coef[(i, 1)], coef[(i, 2)])).collect();
    (coefficients, lambda)
}

/// Replaces curve parameters by arc length measured from the hull start.
fn arc_length_params(map: &SplineMap, h: &[(f64, f64)], params: &mut [Chart]) {
    const STEPS: usize = 2048;
    let (a, b) = inflate(h, CHART_MARGIN);
    let (a, b) = (
        a[0].min(params.iter().map(|u| u[0]).fold(f64::INFINITY, f64::min)),
        b[0].max(params.iter().map(|u| u[0]).fold(f64::NEG_INFINITY, f64::max)),
    );
    let du = (b - a) / STEPS as f64;
    let mut cum = Vec::with_capacity(STEPS + 1);
    cum.push(0.0);
    let mut prev = map.eval(&[a, 0.0]);
    for i in 1..=STEPS {
        let p = map.eval(&[a + du * i as f64, 0.0]);
        cum.push(cum[i - 1] + (p - prev).norm());
        prev = p;
    }
    let at = |u: f64| {
        let s = ((u - a) / du).clamp(0.0, STEPS as f64);
        let i = (s.floor() as usize).min(STEPS - 1);
        cum[i] + (cum[i + 1] - cum[i]) * (s - i as f64)
    };
    let origin = at(h[0].0);
    for u in params.iter_mut() {
        u[0] = at(u[0]) - origin;
    }
}

fn segments_for(dim: usize, n: usize) -> usize {
    if dim == 1 {
        (n / 2).clamp(3, 12)
    } else if n >= 30 {
        3
    } else {
        2
    }
}

fn hull(params: &[Chart], dim: usize) -> Vec<(f64, f64)> {
    (0..dim)
        .map(|k| {
            params
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| (lo.min(u[k]), hi.max(u[k])))
        })
        .collect()
}

fn inflate(h: &[(f64, f64)], margin: f64) -> (Chart, Chart) {
    let mut lo = [0.0; 2];
    let mut hi = [0.0; 2];
    for (k, &(a, b)) in h.iter().enumerate() {
        let m = margin * (b - a).max(1e-9);
        lo[k] = a - m;
        hi[k] = b + m;
    }
    (lo, hi)
}

/// A fitted principal curve or surface.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrincipalManifold {
    dim: usize,
    center: Vec3,
    scale: f64,
    map: SplineMap,
    /// Hull of the fitted chart coordinates, normalized units.
    hull: Vec<(f64, f64)>,
    lambda: f64,
    residual: f64,
    curvature_energy: f64,
    iterations: usize,
    dense_samples: usize,
    refine_steps: usize,
    #[serde(skip)]
    grid: OnceLock<SampleGrid>,
}

impl PartialEq for PrincipalManifold {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.center == other.center
            && self.scale == other.scale
            && self.map.bases == other.map.bases
            && self.map.coefficients == other.map.coefficients
            && self.hull == other.hull
            && self.lambda == other.lambda
            && self.residual == other.residual
            && self.curvature_energy == other.curvature_energy
    }
}

/// Fits a principal manifold of intrinsic dimension `dim` to `points`.
pub fn fit_pme(points: &[Vec3], dim: usize, cfg: &PmeConfig) -> Result<PrincipalManifold> {
    if dim == 0 || dim > 2 {
        return Err(KvilError::InsufficientData(format!("unsupported manifold dimension {dim}")));
    }
    if points.len() < cfg.min_points.max(dim + 2) {
        return Err(KvilError::InsufficientData(format!(
            "{} points, need at least {}",
            points.len(),
            cfg.min_points
        )));
    }
    if cfg.lambda_grid.is_empty() {
        return Err(KvilError::InsufficientData("empty smoothing grid".into()));
    }
    let scale = max_pairwise_distance(points);
    if scale <= 1e-12 {
        return Err(KvilError::InsufficientData("points coincide".into()));
    }
    let center = centroid(points);
    let xs: Vec<Vec3> = points.iter().map(|p| (p - center) / scale).collect();
    let (_, _, axes) = principal_axes(&xs);
    let mut params: Vec<Chart> = xs
        .iter()
        .map(|x| if dim == 1 { [x.dot(&axes[0]), 0.0] } else { [x.dot(&axes[0]), x.dot(&axes[1])] })
        .collect();

    let segments = segments_for(dim, points.len());
    let mut feet_prev: Option<Vec<Vec3>> = None;
    let mut last_shift = f64::INFINITY;
    let mut stalled = 0;
    let mut map;
    let mut lambda;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let h = hull(&params, dim);
        let bases: Vec<CubicBasis> = h.iter().map(|&(lo, hi)| CubicBasis::new(lo, hi, segments)).collect();
        let (coefficients, lam) = smooth_fit(&bases, &params, &xs, &cfg.lambda_grid);
        lambda = lam;
        map = SplineMap { bases, coefficients };
        let (blo, bhi) = inflate(&h, CHART_MARGIN);
        let grid = SampleGrid::new(&map, blo, bhi, cfg.dense_samples);
        params = xs.iter().map(|x| project_on(&map, &grid, x, cfg.refine_steps)).collect();
        let feet: Vec<Vec3> = params.iter().map(|u| map.eval(u)).collect();
        if dim == 1 {
            arc_length_params(&map, &h, &mut params);
        }
        let shift = feet_prev
            .as_ref()
            .map(|prev| prev.iter().zip(&feet).map(|(a, b)| (a - b).norm()).sum::<f64>() / feet.len() as f64);
        feet_prev = Some(feet);
        if let Some(shift) = shift {
            if shift < cfg.tolerance {
                break;
            }
            if shift >= last_shift {
                stalled += 1;
                if stalled >= cfg.patience {
                    return Err(KvilError::FitDiverged(iterations));
                }
            } else {
                stalled = 0;
            }
            last_shift = shift;
        }
        if iterations >= cfg.max_iterations {
            break;
        }
    }

    let feet = feet_prev.expect("at least one iteration");
    let residual = (xs.iter().zip(&feet).map(|(x, f)| (x - f).norm_squared()).sum::<f64>() / xs.len() as f64).sqrt() * scale;
    let energy_n = map.energy();
    // second derivatives scale as 1/s, the parameter measure as s^d
    let curvature_energy = if dim == 1 { energy_n / scale } else { energy_n };
    Ok(PrincipalManifold {
        dim,
        center,
        scale,
        hull: hull(&params, dim),
        map,
        lambda,
        residual,
        curvature_energy,
        iterations,
        dense_samples: cfg.dense_samples,
        refine_steps: cfg.refine_steps,
        grid: OnceLock::new(),
    })
}

impl PrincipalManifold {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// RMS distance from the fitted points to their foot points, meters.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Integrated squared second derivative of the reconstruction.
    pub fn curvature_energy(&self) -> f64 {
        self.curvature_energy
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn knots(&self) -> Vec<(f64, f64, usize)> {
        self.map.bases.iter().map(|b| (b.lo * self.scale, b.hi * self.scale, b.segments)).collect()
    }

    pub fn coefficients(&self) -> Vec<Vec3> {
        self.map.coefficients.iter().map(|c| self.center + c * self.scale).collect()
    }

    /// Fitted chart hull inflated by the extrapolation margin, meters.
    pub fn chart_domain(&self) -> Vec<(f64, f64)> {
        let (lo, hi) = inflate(&self.hull, CHART_MARGIN);
        (0..self.dim).map(|k| (lo[k] * self.scale, hi[k] * self.scale)).collect()
    }

    /// Fitted chart hull, meters.
    pub fn chart_hull(&self) -> Vec<(f64, f64)> {
        self.hull.iter().map(|&(a, b)| (a * self.scale, b * self.scale)).collect()
    }

    fn grid(&self) -> &SampleGrid {
        self.grid.get_or_init(|| {
            let (lo, hi) = inflate(&self.hull, CHART_MARGIN);
            SampleGrid::new(&self.map, lo, hi, self.dense_samples)
        })
    }

    fn to_norm(&self, u: &Chart) -> Chart {
        [u[0] / self.scale, u[1] / self.scale]
    }

    /// Projection index: chart coordinates of the closest manifold point.
    pub fn project(&self, x: &Vec3) -> Chart {
        let xn = (x - self.center) / self.scale;
        let u = project_on(&self.map, self.grid(), &xn, self.refine_steps);
        [u[0] * self.scale, u[1] * self.scale]
    }

    /// Reconstruction without the chart-domain check.
    pub fn reconstruct_unchecked(&self, u: &Chart) -> Vec3 {
        self.center + self.map.eval(&self.to_norm(u)) * self.scale
    }

    pub fn reconstruct(&self, u: &Chart) -> Result<Vec3> {
        let dom = self.chart_domain();
        for (k, &(lo, hi)) in dom.iter().enumerate() {
            let tol = 1e-12 * (hi - lo).abs().max(1.0);
            if u[k] < lo - tol || u[k] > hi + tol {
                return Err(KvilError::OutOfChart);
            }
        }
        Ok(self.reconstruct_unchecked(u))
    }

    /// Tangent vectors `∂f/∂u_k` at chart point `u`.
    pub fn tangents(&self, u: &Chart) -> [Vec3; 2] {
        self.map.derivs(&self.to_norm(u)).d1
    }

    /// Projection, foot point and stress vector `x - f(π(x))`.
    pub fn foot_point(&self, x: &Vec3) -> (Chart, Vec3, Vec3) {
        let u = self.project(x);
        let foot = self.reconstruct_unchecked(&u);
        (u, foot, x - foot)
    }

    /// Unit normal of a surface (or `None` for curves).
    pub fn normal(&self, u: &Chart) -> Option<Vec3> {
        if self.dim != 2 {
            return None;
        }
        let t = self.tangents(u);
        t[0].cross(&t[1]).try_normalize(1e-15)
    }
}
