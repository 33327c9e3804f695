use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::Family;
use crate::model::Dataset;

/// Fixed-effects-only fit ignoring every random effect.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub beta: Vec<f64>,
    pub loglik: f64,
    /// `(−∇²ℓ)⁻¹` at `beta`.
    pub covariance: DMatrix<f64>,
    /// Residual variance for Gaussian responses; 1 otherwise.
    pub phi: f64,
    pub converged: bool,
}

fn loglik(family: Family, d: &Dataset, beta: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..d.n() {
        let eta: f64 = d.row(i).iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + d.offset[i];
        total += family.log_density(d.y[i], eta, 1.0)?;
    }
    Ok(total)
}

/// Newton's method with step halving on the GLM log-likelihood with
/// `φ = 1`; the Gaussian case reduces to least squares.
pub fn glm_fit(family: Family, d: &Dataset) -> Result<GlmFit> {
    let p = d.p;
    let mut beta = vec![0.0; p];
    let mut ll = loglik(family, d, &beta)?;
    let mut converged = p == 0;
    let mut info = DMatrix::zeros(p, p);
    for _ in 0..100 {
        let mut g = DVector::zeros(p);
        info.fill(0.0);
        for i in 0..d.n() {
            let row = d.row(i);
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + d.offset[i];
            let (d1, d2) = family.eta_derivatives(d.y[i], eta, 1.0)?;
            for a in 0..p {
                g[a] += d1 * row[a];
                for b in 0..=a {
                    info[(a, b)] -= d2 * row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        if g.amax() <= 1e-10 * (1.0 + ll.abs()) {
            converged = true;
            break;
        }
        let mut ridged = info.clone();
        for a in 0..p {
            ridged[(a, a)] += 1e-10 * (1.0 + info[(a, a)]);
        }
        let step = Cholesky::new(ridged)
            .ok_or_else(|| Error::Data("fixed-effect design is rank deficient".into()))?
            .solve(&g);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            if let Ok(v) = loglik(family, d, &trial) {
                if v.is_finite() && v >= ll - 1e-12 * (1.0 + ll.abs()) {
                    moved = (v - ll).abs() > 0.0 || trial != beta;
                    beta = trial;
                    ll = v;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let covariance = if p == 0 {
        DMatrix::zeros(0, 0)
    } else {
        Cholesky::new(info.clone()).map_or_else(|| DMatrix::from_element(p, p, f64::NAN), |c| c.inverse())
    };
    let phi = if family == Family::Gaussian {
        let rss: f64 = (0..d.n())
            .map(|i| {
                let eta: f64 = d.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + d.offset[i];
                (d.y[i] - eta).powi(2)
            })
            .sum();
        (rss / d.n() as f64).max(1e-8)
    } else {
        1.0
    };
    Ok(GlmFit {
        beta,
        loglik: ll,
        covariance,
        phi,
        converged,
    })
}
