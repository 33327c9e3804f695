use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Factorization of a symmetric positive definite matrix
///
/// ```text
/// M = [ D   C ]
///     [ Cᵀ  B ]
/// ```
///
/// with `D` diagonal, `C` sparse by row and `B` dense. The diagonal block
/// is eliminated first; the Schur complement `S = B - Cᵀ D⁻¹ C` is
/// factorized densely.
#[derive(Debug, Clone)]
pub struct StructuredFactor {
    d: Vec<f64>,
    c: Vec<Vec<(usize, f64)>>,
    schur: Option<Cholesky<f64, Dyn>>,
    nt: usize,
    logdet: f64,
}

impl StructuredFactor {
    /// `c[r]` lists `(column in B, value)` for row `r` of `C`.
    pub fn new(d: Vec<f64>, c: Vec<Vec<(usize, f64)>>, b: DMatrix<f64>) -> Result<Self> {
        let nt = b.nrows();
        if b.ncols() != nt || c.len() != d.len() {
            return Err(Error::Dimension(format!(
                "diagonal block {} with {} coupling rows, trailing block {}x{}",
                d.len(),
                c.len(),
                b.nrows(),
                b.ncols()
            )));
        }
        let mut logdet = 0.0;
        for &v in &d {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::IndefiniteInnerHessian);
            }
            logdet += v.ln();
        }
        let schur = if nt > 0 {
            let mut s = b;
            for (row, &dr) in c.iter().zip(&d) {
                for &(a, va) in row {
                    if a >= nt {
                        return Err(Error::Dimension(format!("coupling column {a} outside {nt}")));
                    }
                    for &(bcol, vb) in row {
                        s[(a, bcol)] -= va * vb / dr;
                    }
                }
            }
            let chol = Cholesky::new(s).ok_or(Error::SchurNotPositiveDefinite)?;
            let diag_sum: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
            if !diag_sum.is_finite() {
                return Err(Error::SchurNotPositiveDefinite);
            }
            logdet += 2.0 * diag_sum;
            Some(chol)
        } else {
            None
        };
        Ok(Self {
            d,
            c,
            schur,
            nt,
            logdet,
        })
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn dim(&self) -> usize {
        self.d.len() + self.nt
    }

    /// Solves `M x = g` with `g = [g_D | g_T]`.
    pub fn solve(&self, g: &[f64]) -> Vec<f64> {
        let nd = self.d.len();
        let (gd, gt) = g.split_at(nd);
        let mut out = vec![0.0; nd + self.nt];
        if let Some(chol) = &self.schur {
            let mut rhs = DVector::from_column_slice(gt);
            for ((row, &dr), &gr) in self.c.iter().zip(&self.d).zip(gd) {
                let f = gr / dr;
                for &(a, va) in row {
                    rhs[a] -= va * f;
                }
            }
            let xt = chol.solve(&rhs);
            out[nd..].copy_from_slice(xt.as_slice());
        }
        for r in 0..nd {
            let mut v = gd[r];
            for &(a, va) in &self.c[r] {
                v -= va * out[nd + a];
            }
            out[r] = v / self.d[r];
        }
        out
    }

    /// Trailing block of `M⁻¹`, which equals `S⁻¹`.
    pub fn trailing_inverse(&self) -> DMatrix<f64> {
        match &self.schur {
            Some(chol) => chol.inverse(),
            None => DMatrix::zeros(0, 0),
        }
    }

    /// Diagonal of the leading block of `M⁻¹`:
    /// `1/d_r + c_rᵀ S⁻¹ c_r / d_r²`.
    pub fn leading_inverse_diagonal(&self) -> Vec<f64> {
        let sinv = self.trailing_inverse();
        self.c
            .iter()
            .zip(&self.d)
            .map(|(row, &dr)| {
                let mut q = 0.0;
                for &(a, va) in row {
                    for &(b, vb) in row {
                        q += va * sinv[(a, b)] * vb;
                    }
                }
                1.0 / dr + q / (dr * dr)
            })
            .collect()
    }
}

/// `log |M|` for the block structure of [`StructuredFactor`].
pub fn logdet_structured(d: &[f64], c: &[Vec<(usize, f64)>], b: &DMatrix<f64>) -> Result<f64> {
    Ok(StructuredFactor::new(d.to_vec(), c.to_vec(), b.clone())?.logdet())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense(d: &[f64], c: &[Vec<(usize, f64)>], b: &DMatrix<f64>) -> DMatrix<f64> {
        let nd = d.len();
        let n = nd + b.nrows();
        let mut m = DMatrix::zeros(n, n);
        for r in 0..nd {
            m[(r, r)] = d[r];
            for &(a, v) in &c[r] {
                m[(r, nd + a)] = v;
                m[(nd + a, r)] = v;
            }
        }
        m.view_mut((nd, nd), (b.nrows(), b.nrows())).copy_from(b);
        m
    }

    #[test]
    fn small_examples() {
        let b = DMatrix::from_element(1, 1, 4.0);
        let v = logdet_structured(&[2.0, 2.0], &[vec![], vec![]], &b).unwrap();
        assert!((v - 16f64.ln()).abs() < 1e-15);
        let v = logdet_structured(&[1.0; 3], &[vec![], vec![], vec![]], &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn non_pd_is_rejected() {
        let b = DMatrix::from_element(1, 1, 0.1);
        let c = vec![vec![(0, 1.0)]];
        assert!(matches!(
            logdet_structured(&[1.0], &c, &b),
            Err(Error::SchurNotPositiveDefinite)
        ));
        assert!(logdet_structured(&[-1.0], &[vec![]], &DMatrix::zeros(0, 0)).is_err());
    }

    fn random_structured(seed: u64, nd: usize, nt: usize) -> (Vec<f64>, Vec<Vec<(usize, f64)>>, DMatrix<f64>) {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_pcg::Pcg32::seed_from_u64(seed);
        let c: Vec<Vec<(usize, f64)>> = (0..nd)
            .map(|_| {
                let mut row = Vec::new();
                for a in 0..nt {
                    if rng.random::<f64>() < 0.6 {
                        row.push((a, rng.random::<f64>() - 0.5));
                    }
                }
                row
            })
            .collect();
        let d: Vec<f64> = (0..nd).map(|_| 1.0 + rng.random::<f64>()).collect();
        let a = DMatrix::from_fn(nt, nt, |_, _| rng.random::<f64>() - 0.5);
        // B large enough that the Schur complement stays positive definite.
        let b = &a * a.transpose() + DMatrix::identity(nt, nt) * (nd as f64);
        (d, c, b)
    }

    #[test]
    fn six_by_six_matches_dense() {
        let (d, c, b) = random_structured(7, 4, 2);
        let m = dense(&d, &c, &b);
        let want = 2.0 * Cholesky::new(m).unwrap().l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let got = logdet_structured(&d, &c, &b).unwrap();
        assert!((got - want).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn logdet_and_solve_match_dense(seed in 0u64..1000, nd in 1usize..30, nt in 0usize..20) {
            let (d, c, b) = random_structured(seed, nd, nt);
            let m = dense(&d, &c, &b);
            let chol = Cholesky::new(m.clone()).unwrap();
            let want = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let f = StructuredFactor::new(d, c, b).unwrap();
            prop_assert!((f.logdet() - want).abs() <= 1e-9 * want.abs().max(1.0));
            let g: Vec<f64> = (0..nd + nt).map(|k| (k as f64 * 0.7).sin()).collect();
            let x = f.solve(&g);
            let r = &m * DVector::from_vec(x) - DVector::from_vec(g);
            prop_assert!(r.amax() < 1e-10);
            let inv = chol.inverse();
            let lead = f.leading_inverse_diagonal();
            for k in 0..nd {
                prop_assert!((lead[k] - inv[(k, k)]).abs() < 1e-10);
            }
            let tinv = f.trailing_inverse();
            for a in 0..nt {
                for bb in 0..nt {
                    prop_assert!((tinv[(a, bb)] - inv[(nd + a, nd + bb)]).abs() < 1e-10);
                }
            }
        }
    }
}
