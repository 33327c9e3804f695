//! Exponential-family responses with canonical links.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::adtape::{TapeBuilder, Var};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Log link, dispersion fixed at 1.
    Poisson,
    /// Logit link, dispersion fixed at 1.
    Bernoulli,
    /// Identity link, dispersion is the residual variance.
    Gaussian,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::Bernoulli => "bernoulli",
            Family::Gaussian => "gaussian",
        }
    }

    pub fn dispersion_known(self) -> bool {
        !matches!(self, Family::Gaussian)
    }

    /// Checks `y` (and `phi` for the Gaussian) against the family domain.
    pub fn validate(self, y: f64, phi: f64) -> Result<()> {
        let bad = |detail: String| {
            Err(Error::Domain {
                family: self.name(),
                detail,
            })
        };
        if !y.is_finite() {
            return bad(format!("response {y} is not finite"));
        }
        match self {
            Family::Poisson if y < 0.0 || y.fract() != 0.0 => {
                bad(format!("response {y} is not a nonnegative integer"))
            }
            Family::Bernoulli if y != 0.0 && y != 1.0 => bad(format!("response {y} is not 0 or 1")),
            Family::Gaussian if !(phi > 0.0 && phi.is_finite()) => {
                bad(format!("dispersion {phi} is not positive"))
            }
            _ => Ok(()),
        }
    }

    /// Inverse link.
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Family::Poisson => eta.exp(),
            Family::Bernoulli => inv_logit(eta),
            Family::Gaussian => eta,
        }
    }

    /// `log f(y | eta, phi)` including normalizing constants.
    pub fn log_density(self, y: f64, eta: f64, phi: f64) -> Result<f64> {
        self.validate(y, phi)?;
        Ok(match self {
            Family::Poisson => y * eta - eta.exp() - libm::lgamma(y + 1.0),
            Family::Bernoulli => y * eta - softplus(eta),
            Family::Gaussian => {
                let r = y - eta;
                -0.5 * r * r / phi - 0.5 * (LN_2PI + phi.ln())
            }
        })
    }

    /// First and second derivatives of the log-density in `eta`.
    pub fn eta_derivatives(self, y: f64, eta: f64, phi: f64) -> Result<(f64, f64)> {
        self.validate(y, phi)?;
        Ok(match self {
            Family::Poisson => {
                let mu = eta.exp();
                (y - mu, -mu)
            }
            Family::Bernoulli => {
                let p = inv_logit(eta);
                (y - p, -p * (1.0 - p))
            }
            Family::Gaussian => ((y - eta) / phi, -1.0 / phi),
        })
    }

    /// Records `log f(y | eta, phi)` on a tape. `log_phi` is required for the
    /// Gaussian family and ignored otherwise; `inv_phi` is `exp(-log_phi)`
    /// recorded once and shared across observations.
    pub fn record_log_density(
        self,
        b: &mut TapeBuilder,
        y: f64,
        eta: Var,
        gaussian_scale: Option<(Var, Var)>,
    ) -> Var {
        match self {
            Family::Poisson => {
                let mu = b.exp(eta);
                b.linear(&[(eta, y), (mu, -1.0)], -libm::lgamma(y + 1.0))
            }
            Family::Bernoulli => {
                // Branch frozen at the recording point; both forms agree.
                let sp = if b.value(eta) > 0.0 {
                    let ne = b.neg(eta);
                    let e = b.exp(ne);
                    let one_p = b.add_const(e, 1.0);
                    let l = b.ln(one_p);
                    b.add(eta, l)
                } else {
                    let e = b.exp(eta);
                    let one_p = b.add_const(e, 1.0);
                    b.ln(one_p)
                };
                b.linear(&[(eta, y), (sp, -1.0)], 0.0)
            }
            Family::Gaussian => {
                let (log_phi, inv_phi) =
                    gaussian_scale.expect("gaussian density needs a recorded dispersion");
                let r = b.add_const(eta, -y);
                let r2 = b.mul(r, r);
                let q = b.mul(r2, inv_phi);
                b.linear(&[(q, -0.5), (log_phi, -0.5)], -0.5 * LN_2PI)
            }
        }
    }
}

pub fn inv_logit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn poisson_values() {
        assert_eq!(Family::Poisson.log_density(0.0, 0.0, 1.0).unwrap(), -1.0);
        let v = Family::Poisson.log_density(2.0, 3f64.ln(), 1.0).unwrap();
        // Independent closed form: -3 + 2 ln 3 - ln 2.
        let oracle = -3.0 + 2.0 * 3f64.ln() - 2f64.ln();
        assert!((v - oracle).abs() < 1e-14);
        assert!((v + 1.495_922_6).abs() < 1e-7);
    }

    #[test]
    fn bernoulli_half() {
        let v = Family::Bernoulli.log_density(1.0, 0.0, 1.0).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(Family::Bernoulli.eta_derivatives(1.0, 0.0, 1.0).unwrap(), (0.5, -0.25));
    }

    #[test]
    fn poisson_derivatives() {
        let (d1, d2) = Family::Poisson.eta_derivatives(0.0, 2f64.ln(), 1.0).unwrap();
        assert!((d1 + 2.0).abs() < 1e-15 && (d2 + 2.0).abs() < 1e-15);
        let (d1, d2) = Family::Poisson.eta_derivatives(3.0, 0.0, 1.0).unwrap();
        assert_eq!((d1, d2), (2.0, -1.0));
        let h = 1e-5;
        let f = |e: f64| Family::Poisson.log_density(3.0, e, 1.0).unwrap();
        assert!(((f(h) - f(-h)) / (2.0 * h) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn domain_errors_name_the_family() {
        let e = Family::Poisson.log_density(-1.0, 0.0, 1.0).unwrap_err();
        assert!(e.to_string().contains("poisson"));
        assert!(Family::Bernoulli.log_density(0.5, 0.0, 1.0).is_err());
        assert!(Family::Gaussian.log_density(0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn poisson_mass_sums_to_one() {
        for &eta in &[-2.0, 0.0, 1.5] {
            let s: f64 = (0..200)
                .map(|y| Family::Poisson.log_density(y as f64, eta, 1.0).unwrap().exp())
                .sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_integrates_to_one() {
        // Trapezoid on a wide grid.
        let (eta, phi) = (0.3, 0.7);
        let h = 1e-3;
        let s: f64 = (-12000..=12000)
            .map(|k| {
                Family::Gaussian
                    .log_density(eta + k as f64 * h, eta, phi)
                    .unwrap()
                    .exp()
            })
            .sum::<f64>()
            * h;
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn recorded_density_matches() {
        for fam in [Family::Poisson, Family::Bernoulli, Family::Gaussian] {
            for &(y, eta) in &[(0.0, -0.7), (1.0, 0.4), (1.0, 3.0)] {
                let phi: f64 = 1.3;
                let mut b = TapeBuilder::new(&[eta, phi.ln()]);
                let e = b.input(0);
                let lp = b.input(1);
                let nl = b.neg(lp);
                let inv = b.exp(nl);
                let v = fam.record_log_density(&mut b, y, e, Some((lp, inv)));
                let t = b.finish(v);
                let p = if fam == Family::Gaussian { phi } else { 1.0 };
                let want = fam.log_density(y, eta, p).unwrap();
                assert!((t.recorded_value() - want).abs() < 1e-13);
                let g = t.gradient(&[eta, phi.ln()]).unwrap();
                let (d1, _) = fam.eta_derivatives(y, eta, p).unwrap();
                assert!((g[0] - d1).abs() < 1e-13);
            }
        }
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(
            fam_k in 0usize..3,
            y in 0u32..6,
            eta in -4.0f64..3.0,
            phi in 0.2f64..3.0,
        ) {
            let fam = [Family::Poisson, Family::Bernoulli, Family::Gaussian][fam_k];
            let y = if fam == Family::Bernoulli { (y % 2) as f64 } else { y as f64 };
            let (d1, d2) = fam.eta_derivatives(y, eta, phi).unwrap();
            let f = |e: f64| fam.log_density(y, e, phi).unwrap();
            let h = 1e-4;
            let fd1 = (f(eta + h) - f(eta - h)) / (2.0 * h);
            let fd2 = (f(eta + h) - 2.0 * f(eta) + f(eta - h)) / (h * h);
            prop_assert!((fd1 - d1).abs() <= 1e-7 * d1.abs().max(1.0));
            prop_assert!((fd2 - d2).abs() <= 1e-5 * d2.abs().max(1.0));
            prop_assert!(d2 <= 0.0);
        }
    }
}
