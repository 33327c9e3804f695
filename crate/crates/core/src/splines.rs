//! Natural cubic spline bases with fixed knots.
//!
//! Cubic B-splines on the clamped knot vector, first column dropped, then
//! projected onto the null space of the second derivatives at both
//! boundary knots. Outside the boundary each function continues linearly.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORDER: usize = 4;

/// Knot placement as supplied by configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct KnotSpec {
    pub boundary: (f64, f64),
    #[serde(default)]
    pub interior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    boundary: (f64, f64),
    interior: Vec<f64>,
    knots: Vec<f64>,
    /// Rows map the reduced B-spline values to the natural basis.
    projection: Vec<Vec<f64>>,
    lo_value: Vec<f64>,
    lo_slope: Vec<f64>,
    hi_value: Vec<f64>,
    hi_slope: Vec<f64>,
}

impl SplineBasis {
    pub fn new(boundary: (f64, f64), interior: &[f64]) -> Result<Self> {
        let (lo, hi) = boundary;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Knots(format!("boundary ({lo}, {hi}) is not an increasing pair")));
        }
        for w in interior.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::Knots(format!("interior knots not strictly increasing: {interior:?}")));
            }
        }
        if let Some(&k) = interior.iter().find(|&&k| !(k > lo && k < hi)) {
            return Err(Error::Knots(format!("interior knot {k} not inside ({lo}, {hi})")));
        }
        let mut knots = vec![lo; ORDER];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(hi, ORDER));

        // Reduced B-spline count after dropping the first column.
        let m = interior.len() + ORDER - 1;
        let c_lo = &bspline(&knots, ORDER, lo, 2)[1..];
        let c_hi = &bspline(&knots, ORDER, hi, 2)[1..];
        let projection = null_space_rows(&[c_lo.to_vec(), c_hi.to_vec()], m);

        let mut basis = Self {
            boundary,
            interior: interior.to_vec(),
            knots,
            projection,
            lo_value: vec![],
            lo_slope: vec![],
            hi_value: vec![],
            hi_slope: vec![],
        };
        basis.lo_value = basis.inside(lo, 0);
        basis.lo_slope = basis.inside(lo, 1);
        basis.hi_value = basis.inside(hi, 0);
        basis.hi_slope = basis.inside(hi, 1);
        Ok(basis)
    }

    pub fn from_spec(spec: &KnotSpec) -> Result<Self> {
        Self::new(spec.boundary, &spec.interior)
    }

    pub fn spec(&self) -> KnotSpec {
        KnotSpec {
            boundary: self.boundary,
            interior: self.interior.clone(),
        }
    }

    /// Number of basis functions: interior knots plus one.
    pub fn dim(&self) -> usize {
        self.interior.len() + 1
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    fn inside(&self, x: f64, deriv: usize) -> Vec<f64> {
        let b = bspline(&self.knots, ORDER, x, deriv);
        self.projection
            .iter()
            .map(|row| row.iter().zip(&b[1..]).map(|(p, v)| p * v).sum())
            .collect()
    }

    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let (lo, hi) = self.boundary;
        if x < lo {
            extrapolate(&self.lo_value, &self.lo_slope, x - lo)
        } else if x > hi {
            extrapolate(&self.hi_value, &self.hi_slope, x - hi)
        } else {
            self.inside(x, 0)
        }
    }

    /// First derivative of each basis function.
    pub fn derivative(&self, x: f64) -> Vec<f64> {
        let (lo, hi) = self.boundary;
        if x < lo {
            self.lo_slope.clone()
        } else if x > hi {
            self.hi_slope.clone()
        } else {
            self.inside(x, 1)
        }
    }
}

fn extrapolate(value: &[f64], slope: &[f64], dx: f64) -> Vec<f64> {
    value.iter().zip(slope).map(|(v, s)| v + s * dx).collect()
}

/// All `knots.len() - order` B-spline values (or derivatives) at `x`.
/// The right boundary belongs to the last non-degenerate interval.
fn bspline(knots: &[f64], order: usize, x: f64, deriv: usize) -> Vec<f64> {
    let n = knots.len() - order;
    if deriv > 0 {
        let lower = bspline(knots, order - 1, x, deriv - 1);
        let k1 = (order - 1) as f64;
        return (0..n)
            .map(|i| {
                let left = knots[i + order - 1] - knots[i];
                let right = knots[i + order] - knots[i + 1];
                let a = if left > 0.0 { lower[i] / left } else { 0.0 };
                let b = if right > 0.0 { lower[i + 1] / right } else { 0.0 };
                k1 * (a - b)
            })
            .collect();
    }
    let last = knots.len() - 1;
    let span = (0..last)
        .rev()
        .find(|&s| knots[s] < knots[s + 1] && knots[s] <= x)
        .unwrap_or(0);
    let span = if x >= knots[span + 1] && span + 1 < last && knots[span + 1] < knots[last] {
        span + 1
    } else {
        span
    };
    // Order-1 indicator, then Cox-de Boor.
    let mut b = vec![0.0; knots.len() - 1];
    b[span] = 1.0;
    for k in 2..=order {
        let mut next = vec![0.0; knots.len() - k];
        for (i, nx) in next.iter_mut().enumerate() {
            let left = knots[i + k - 1] - knots[i];
            let right = knots[i + k] - knots[i + 1];
            let mut v = 0.0;
            if left > 0.0 {
                v += (x - knots[i]) / left * b[i];
            }
            if right > 0.0 {
                v += (knots[i + k] - x) / right * b[i + 1];
            }
            *nx = v;
        }
        b = next;
    }
    b.truncate(n);
    b
}

/// Householder QR of the `m x r` matrix whose columns are `constraints`;
/// returns the last `m - r` rows of `Q^T`, an orthonormal basis for the
/// vectors orthogonal to every constraint.
fn null_space_rows(constraints: &[Vec<f64>], m: usize) -> Vec<Vec<f64>> {
    let r = constraints.len();
    let mut a: Vec<Vec<f64>> = constraints.to_vec();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(r);
    for k in 0..r {
        let norm: f64 = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = vec![0.0; m];
        v[k..].copy_from_slice(&a[k][k..]);
        // A zero pivot takes the positive-norm branch, as in LINPACK and LAPACK.
        let alpha = if a[k][k] >= 0.0 { -norm } else { norm };
        v[k] -= alpha;
        let vn: f64 = v.iter().map(|t| t * t).sum();
        if vn > 0.0 {
            for col in a.iter_mut().skip(k) {
                let d: f64 = v.iter().zip(col.iter()).map(|(p, q)| p * q).sum::<f64>() * 2.0 / vn;
                col.iter_mut().zip(&v).for_each(|(c, vi)| *c -= d * vi);
            }
        }
        reflectors.push(v);
    }
    // Q^T e_j for each unit vector, rows r..m of the result.
    let mut qt = vec![vec![0.0; m]; m];
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        for v in &reflectors {
            let vn: f64 = v.iter().map(|t| t * t).sum();
            if vn > 0.0 {
                let d: f64 = v.iter().zip(&e).map(|(p, q)| p * q).sum::<f64>() * 2.0 / vn;
                e.iter_mut().zip(v).for_each(|(c, vi)| *c -= d * vi);
            }
        }
        for i in 0..m {
            qt[i][j] = e[i];
        }
    }
    qt.split_off(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn potassium() -> SplineBasis {
        SplineBasis::new((2.0, 8.0), &[3.0, 5.0]).unwrap()
    }

    #[test]
    fn dimensions() {
        assert_eq!(potassium().dim(), 3);
        assert_eq!(SplineBasis::new((18.0, 100.0), &[50.0, 66.0]).unwrap().dim(), 3);
        assert_eq!(SplineBasis::new((0.0, 1.0), &[]).unwrap().dim(), 1);
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(SplineBasis::new((8.0, 2.0), &[3.0]).is_err());
        assert!(SplineBasis::new((2.0, 8.0), &[5.0, 3.0]).is_err());
        assert!(SplineBasis::new((2.0, 8.0), &[2.0]).is_err());
        assert!(SplineBasis::new((2.0, 8.0), &[9.0]).is_err());
    }

    #[test]
    fn bsplines_partition_unity() {
        let b = potassium();
        for k in 0..=60 {
            let x = 2.0 + 0.1 * k as f64;
            let s: f64 = bspline(&b.knots, ORDER, x, 0).iter().sum();
            assert!((s - 1.0).abs() < 1e-13, "x = {x}: {s}");
        }
    }

    #[test]
    fn linear_outside_boundary() {
        let b = potassium();
        for (x0, dir) in [(2.0, -1.0), (8.0, 1.0)] {
            let v0 = b.evaluate(x0);
            let v1 = b.evaluate(x0 + dir);
            let v2 = b.evaluate(x0 + 2.0 * dir);
            for k in 0..3 {
                assert!((v2[k] - 2.0 * v1[k] + v0[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_curvature_across_boundary() {
        let b = potassium();
        let h = 1e-4;
        for x0 in [2.0, 8.0] {
            let (l, c, r) = (b.evaluate(x0 - h), b.evaluate(x0), b.evaluate(x0 + h));
            for k in 0..3 {
                assert!((l[k] - 2.0 * c[k] + r[k]).abs() / (h * h) < 1e-8 * 1e4);
                assert!((l[k] - 2.0 * c[k] + r[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn smooth_at_interior_knots() {
        let b = SplineBasis::new((18.0, 100.0), &[50.0, 66.0]).unwrap();
        let h = 1e-3;
        let d2 = |x: f64| -> Vec<f64> {
            let (l, c, r) = (b.evaluate(x - h), b.evaluate(x), b.evaluate(x + h));
            (0..3).map(|k| (l[k] - 2.0 * c[k] + r[k]) / (h * h)).collect()
        };
        for knot in [50.0, 66.0] {
            let (a, c) = (d2(knot - 2.0 * h), d2(knot + 2.0 * h));
            for k in 0..3 {
                assert!((a[k] - c[k]).abs() < 1e-5, "knot {knot} fn {k}");
            }
        }
    }

    /// Natural spline via truncated powers: 1, x, d_k - d_{K-1}.
    fn truncated_power(knots: &[f64], x: f64) -> Vec<f64> {
        let kk = knots.len();
        let d = |k: usize| {
            let c = |t: f64| (x - t).max(0.0).powi(3);
            (c(knots[k]) - c(knots[kk - 1])) / (knots[kk - 1] - knots[k])
        };
        let mut out = vec![1.0, x];
        for k in 0..kk - 2 {
            out.push(d(k) - d(kk - 2));
        }
        out
    }

    fn projection_residual(basis: &SplineBasis, target: impl Fn(f64) -> f64) -> f64 {
        let (lo, hi) = basis.boundary();
        let grid: Vec<f64> = (0..=400).map(|k| lo - 1.0 + (hi - lo + 2.0) * k as f64 / 400.0).collect();
        let p = basis.dim() + 1;
        let mut a = DMatrix::zeros(grid.len(), p);
        let mut y = DVector::zeros(grid.len());
        for (r, &x) in grid.iter().enumerate() {
            a[(r, 0)] = 1.0;
            for (k, v) in basis.evaluate(x).into_iter().enumerate() {
                a[(r, k + 1)] = v;
            }
            y[r] = target(x);
        }
        let coef = a.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        (a * coef - y).amax()
    }

    #[test]
    fn spans_truncated_power_basis() {
        let b = potassium();
        let knots = [2.0, 3.0, 5.0, 8.0];
        for k in 0..knots.len() {
            let r = projection_residual(&b, |x| truncated_power(&knots, x)[k]);
            assert!(r < 1e-8, "function {k}: residual {r}");
        }
    }

    #[test]
    fn potassium_value_at_four_matches_oracle_span() {
        // The value at 4.0 is reproduced by a least-squares combination of
        // the truncated-power functions fitted on a dense grid.
        let b = potassium();
        let knots = [2.0, 3.0, 5.0, 8.0];
        let grid: Vec<f64> = (0..=300).map(|k| 2.0 + 6.0 * k as f64 / 300.0).collect();
        let mut a = DMatrix::zeros(grid.len(), 4);
        for (r, &x) in grid.iter().enumerate() {
            for (c, v) in truncated_power(&knots, x).into_iter().enumerate() {
                a[(r, c)] = v;
            }
        }
        let svd = a.svd(true, true);
        for k in 0..3 {
            let y = DVector::from_iterator(grid.len(), grid.iter().map(|&x| b.evaluate(x)[k]));
            let coef = svd.solve(&y, 1e-14).unwrap();
            let at4 = DVector::from_vec(truncated_power(&knots, 4.0)).dot(&coef);
            assert!((at4 - b.evaluate(4.0)[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn random_natural_splines_lie_in_span() {
        let b = SplineBasis::new((15.0, 120.0), &[50.0, 90.0]).unwrap();
        let knots = [15.0, 50.0, 90.0, 120.0];
        for seed in 0..5 {
            let w: Vec<f64> = (0..4).map(|k| ((seed * 7 + k * 3) as f64).sin()).collect();
            let r = projection_residual(&b, |x| {
                truncated_power(&knots, x).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() / 1e4
            });
            assert!(r < 1e-8, "seed {seed}: residual {r}");
        }
    }

    #[test]
    fn basis_orientation_matches_reference_values() {
        // Frozen from an independent construction: scipy B-splines with the
        // boundary-curvature null space taken from a LAPACK QR.
        let cases: [((f64, f64), [f64; 2], f64, [f64; 3]); 3] = [
            ((18.0, 100.0), [50.0, 66.0], 58.0, [0.27386299461321284, 0.5105422141693652, -0.29627512748176504]),
            ((2.0, 8.0), [3.0, 5.0], 4.1, [0.1557806236608572, 0.5572850035710472, -0.33166562723190446]),
            ((15.0, 120.0), [50.0, 90.0], 110.0, [0.17944159493785866, 0.3708711763598211, 0.44515208131003]),
        ];
        for (boundary, interior, x, want) in cases {
            let got = SplineBasis::new(boundary, &interior).unwrap().evaluate(x);
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 1e-10, "{boundary:?} at {x}: {got:?}");
            }
        }
    }
}
