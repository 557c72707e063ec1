//! Uniform cubic B-spline bases with quadratic extrapolation past the knot range.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Uniform cubic B-spline basis on `[lo, hi]` split into `segments` pieces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicBasis {
    pub lo: f64,
    pub hi: f64,
    pub segments: usize,
}

/// Values and derivatives of the four basis functions active at a point.
#[derive(Clone, Copy, Debug)]
pub struct BasisEval {
    pub first: usize,
    pub value: [f64; 4],
    pub d1: [f64; 4],
    pub d2: [f64; 4],
}

fn blend(tau: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    let om = 1.0 - tau;
    let value = [
        om * om * om / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * tau + 1.0) / 6.0,
        t3 / 6.0,
    ];
    let d1 = [
        -om * om / 2.0,
        (9.0 * t2 - 12.0 * tau) / 6.0,
        (-9.0 * t2 + 6.0 * tau + 3.0) / 6.0,
        t2 / 2.0,
    ];
    let d2 = [om, 3.0 * tau - 2.0, -3.0 * tau + 1.0, tau];
    (value, d1, d2)
}

// 4-point Gauss-Legendre on [0, 1]
const GAUSS_X: [f64; 4] = [
    0.069_431_844_202_973_71,
    0.330_009_478_207_571_9,
    0.669_990_521_792_428_1,
    0.930_568_155_797_026_3,
];
const GAUSS_W: [f64; 4] = [
    0.173_927_422_568_726_93,
    0.326_072_577_431_273_07,
    0.326_072_577_431_273_07,
    0.173_927_422_568_726_93,
];

impl CubicBasis {
    pub fn new(lo: f64, hi: f64, segments: usize) -> Self {
        let (lo, hi) = if hi - lo < 1e-9 {
            let mid = 0.5 * (lo + hi);
            (mid - 0.5, mid + 0.5)
        } else {
            (lo, hi)
        };
        Self {
            lo,
            hi,
            segments: segments.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.segments + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.segments as f64
    }

    pub fn eval(&self, u: f64) -> BasisEval {
        let h = self.step();
        if u < self.lo || u > self.hi {
            // second-order continuation from the nearest end
            let end = if u < self.lo { self.lo } else { self.hi };
            let mut e = self.eval(end);
            let du = u - end;
            for i in 0..4 {
                e.value[i] += e.d1[i] * du + 0.5 * e.d2[i] * du * du;
                e.d1[i] += e.d2[i] * du;
            }
            return e;
        }
        let s = (u - self.lo) / h;
        let k = (s.floor() as usize).min(self.segments - 1);
        let tau = s - k as f64;
        let (value, d1, d2) = blend(tau);
        BasisEval {
            first: k,
            value,
            d1: d1.map(|v| v / h),
            d2: d2.map(|v| v / (h * h)),
        }
    }

    /// `∫ B_a^{(p)} B_b^{(q)} du` over the knot range for derivative orders `p, q`.
    pub fn integral(&self, p: usize, q: usize) -> DMatrix<f64> {
        let m = self.len();
        let h = self.step();
        let mut out = DMatrix::zeros(m, m);
        for k in 0..self.segments {
            for (gx, gw) in GAUSS_X.iter().zip(GAUSS_W) {
                let (v, d1, d2) = blend(*gx);
                let pick = |order: usize| -> [f64; 4] {
                    match order {
                        0 => v,
                        1 => d1.map(|x| x / h),
                        _ => d2.map(|x| x / (h * h)),
                    }
                };
                let a = pick(p);
                let b = pick(q);
                for i in 0..4 {
                    for j in 0..4 {
                        out[(k + i, k + j)] += gw * h * a[i] * b[j];
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity_and_linear_reproduction() {
        let b = CubicBasis::new(-1.0, 2.0, 5);
        // coefficients reproducing f(u) = u: Greville abscissae of a uniform cubic basis
        let h = b.step();
        let coef: Vec<f64> = (0..b.len()).map(|i| b.lo + (i as f64 - 1.0) * h).collect();
        for i in 0..=60 {
            let u = -1.5 + 4.0 * i as f64 / 60.0;
            let e = b.eval(u);
            let sum: f64 = e.value.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            let f: f64 = (0..4).map(|k| e.value[k] * coef[e.first + k]).sum();
            assert!((f - u).abs() < 1e-12, "u {u} f {f}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let b = CubicBasis::new(0.0, 1.0, 4);
        let coef = [0.3, -1.0, 0.5, 2.0, 0.1, -0.4, 0.9];
        let f = |u: f64| {
            let e = b.eval(u);
            (0..4).map(|k| e.value[k] * coef[e.first + k]).sum::<f64>()
        };
        for u in [0.13, 0.41, 0.77] {
            let e = b.eval(u);
            let d1: f64 = (0..4).map(|k| e.d1[k] * coef[e.first + k]).sum();
            let d2: f64 = (0..4).map(|k| e.d2[k] * coef[e.first + k]).sum();
            let eps = 1e-5;
            assert!((d1 - (f(u + eps) - f(u - eps)) / (2.0 * eps)).abs() < 1e-7);
            assert!((d2 - (f(u + eps) - 2.0 * f(u) + f(u - eps)) / (eps * eps)).abs() < 1e-3);
        }
    }

    #[test]
    fn curvature_penalty_vanishes_on_lines() {
        let b = CubicBasis::new(0.0, 1.0, 6);
        let h = b.step();
        let coef = nalgebra::DVector::from_iterator(b.len(), (0..b.len()).map(|i| 2.0 + 3.0 * (i as f64 - 1.0) * h));
        let omega = b.integral(2, 2);
        assert!((coef.transpose() * &omega * &coef)[(0, 0)].abs() < 1e-10);
    }
}
