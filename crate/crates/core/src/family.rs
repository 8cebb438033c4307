//! Exponential-family pieces needed for IRLS: link, variance and deviance.

use serde::{Deserialize, Serialize};

/// Supported response families, each with its canonical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Normal errors, identity link.
    GaussianIdentity,
    /// Bernoulli/binomial proportions, logit link.
    BinomialLogit,
}

/// Clamp for fitted probabilities so weights stay strictly positive.
const MU_EPS: f64 = 1e-10;

impl Family {
    pub fn link(self, mu: f64) -> f64 {
        match self {
            Family::GaussianIdentity => mu,
            Family::BinomialLogit => (mu / (1.0 - mu)).ln(),
        }
    }

    pub fn inverse_link(self, eta: f64) -> f64 {
        match self {
            Family::GaussianIdentity => eta,
            Family::BinomialLogit => logistic(eta),
        }
    }

    /// `d mu / d eta`
    pub fn mu_eta(self, mu: f64) -> f64 {
        match self {
            Family::GaussianIdentity => 1.0,
            Family::BinomialLogit => mu * (1.0 - mu),
        }
    }

    pub fn variance(self, mu: f64) -> f64 {
        match self {
            Family::GaussianIdentity => 1.0,
            Family::BinomialLogit => mu * (1.0 - mu),
        }
    }

    /// Working weight and working response at linear predictor `eta`.
    pub fn working(self, eta: f64, y: f64) -> (f64, f64) {
        match self {
            Family::GaussianIdentity => (1.0, y),
            Family::BinomialLogit => {
                let mu = logistic(eta).clamp(MU_EPS, 1.0 - MU_EPS);
                let d = self.mu_eta(mu);
                (d * d / self.variance(mu), eta + (y - mu) / d)
            }
        }
    }

    /// Unit deviance contribution of one observation at mean `mu`.
    pub fn unit_deviance(self, y: f64, mu: f64) -> f64 {
        match self {
            Family::GaussianIdentity => (y - mu) * (y - mu),
            Family::BinomialLogit => {
                let mu = mu.clamp(MU_EPS, 1.0 - MU_EPS);
                2.0 * (xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu)))
            }
        }
    }

    /// Whether `y` lies in the family's support.
    pub fn valid_response(self, y: f64) -> bool {
        match self {
            Family::GaussianIdentity => y.is_finite(),
            Family::BinomialLogit => (0.0..=1.0).contains(&y),
        }
    }

    /// Whether the dispersion is estimated (true) or fixed at one.
    pub fn estimates_dispersion(self) -> bool {
        matches!(self, Family::GaussianIdentity)
    }
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_round_trip() {
        for eta in [-30.0, -2.0, 0.0, 0.7, 25.0] {
            let mu = Family::BinomialLogit.inverse_link(eta);
            assert!((Family::BinomialLogit.link(mu) - eta).abs() < 1e-6 * eta.abs().max(1.0));
        }
        assert_eq!(logistic(0.0), 0.5);
    }

    #[test]
    fn binomial_deviance() {
        let f = Family::BinomialLogit;
        assert!((f.unit_deviance(1.0, 0.5) - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!(f.unit_deviance(0.0, 1e-300) < 1e-9);
        assert!(f.valid_response(0.0) && !f.valid_response(1.5));
    }
}
