//! Tuning parameters, their feasible sets, and the problem constants.

use nalgebra::DVector;

use crate::error::{check_dim, contract, Error, Result};
use crate::projection::{project_ball, project_interval, project_simplex_floor};

/// Starting point and step size of projected online gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct OgaParam {
    pub theta0: DVector<f64>,
    pub gamma: f64,
}

impl OgaParam {
    pub fn new(theta0: DVector<f64>, gamma: f64) -> Self {
        OgaParam { theta0, gamma }
    }
}

/// The meta-level parameter a meta-strategy adapts across tasks.
#[derive(Clone, Debug, PartialEq)]
pub enum TuningParam {
    Oga(OgaParam),
    EwaRate(f64),
    EwaPrior(DVector<f64>),
}

impl TuningParam {
    /// Flattens into `R^p`; for OGA the layout is `[theta0..., gamma]`.
    pub fn to_vector(&self) -> DVector<f64> {
        match self {
            TuningParam::Oga(p) => {
                let d = p.theta0.len();
                DVector::from_fn(d + 1, |i, _| if i < d { p.theta0[i] } else { p.gamma })
            }
            TuningParam::EwaRate(eta) => DVector::from_element(1, *eta),
            TuningParam::EwaPrior(pi) => pi.clone(),
        }
    }

    /// Rebuilds a parameter of the same variant and shape from a flat vector.
    pub fn with_vector(&self, v: &DVector<f64>) -> Result<TuningParam> {
        check_dim(self.len(), v.len())?;
        Ok(match self {
            TuningParam::Oga(p) => {
                let d = p.theta0.len();
                TuningParam::Oga(OgaParam::new(v.rows(0, d).into_owned(), v[d]))
            }
            TuningParam::EwaRate(_) => TuningParam::EwaRate(v[0]),
            TuningParam::EwaPrior(_) => TuningParam::EwaPrior(v.clone()),
        })
    }

    pub fn len(&self) -> usize {
        match self {
            TuningParam::Oga(p) => p.theta0.len() + 1,
            TuningParam::EwaRate(_) => 1,
            TuningParam::EwaPrior(pi) => pi.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_oga(&self) -> Option<&OgaParam> {
        match self {
            TuningParam::Oga(p) => Some(p),
            _ => None,
        }
    }

    pub fn distance(&self, other: &TuningParam) -> Result<f64> {
        check_dim(self.len(), other.len())?;
        Ok((self.to_vector() - other.to_vector()).norm())
    }
}

/// Problem constants.
///
/// `radius` is the decision-ball radius C, `lipschitz` the per-round loss
/// Lipschitz constant Gamma, `loss_range` the bound B on expert losses and
/// `exp_concavity` the constant of `exp(-l / Cexp)` concavity. The step-size
/// interval is `[gamma_lo, gamma_hi]` with `gamma_lo = n^-beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub radius: f64,
    pub lipschitz: f64,
    pub loss_range: f64,
    pub exp_concavity: f64,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub beta: f64,
}

impl Bounds {
    /// `gamma_lo = n^-beta`, everything else given.
    pub fn new(
        n: usize,
        beta: f64,
        radius: f64,
        lipschitz: f64,
        gamma_hi: f64,
    ) -> Result<Self> {
        let b = Bounds {
            radius,
            lipschitz,
            loss_range: 1.0,
            exp_concavity: 1.0,
            gamma_lo: (n as f64).powf(-beta),
            gamma_hi,
            beta,
        };
        b.validate()?;
        Ok(b)
    }

    /// The tuned setting: `gamma_lo = n^-beta`, `gamma_hi = C^2`.
    pub fn theoretical(n: usize, beta: f64, radius: f64, lipschitz: f64) -> Result<Self> {
        Bounds::new(n, beta, radius, lipschitz, radius * radius)
    }

    pub fn with_loss_range(mut self, b: f64) -> Result<Self> {
        self.loss_range = b;
        self.validate()?;
        Ok(self)
    }

    pub fn with_exp_concavity(mut self, c: f64) -> Result<Self> {
        self.exp_concavity = c;
        self.validate()?;
        Ok(self)
    }

    pub fn with_lipschitz(mut self, g: f64) -> Result<Self> {
        self.lipschitz = g;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.radius,
            self.lipschitz,
            self.loss_range,
            self.exp_concavity,
            self.gamma_lo,
            self.gamma_hi,
            self.beta,
        ];
        if !all.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(contract("all bounds must be finite and strictly positive"));
        }
        if self.gamma_lo >= self.gamma_hi {
            return Err(contract(format!(
                "need gamma_lo < gamma_hi, got [{}, {}]",
                self.gamma_lo, self.gamma_hi
            )));
        }
        Ok(())
    }

    pub fn oga_set(&self) -> ParamSet {
        ParamSet::Oga {
            radius: self.radius,
            gamma_lo: self.gamma_lo,
            gamma_hi: self.gamma_hi,
        }
    }
}

/// A closed convex feasible set for tuning parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamSet {
    /// `{|theta0| <= radius} x [gamma_lo, gamma_hi]`
    Oga {
        radius: f64,
        gamma_lo: f64,
        gamma_hi: f64,
    },
    Interval { lo: f64, hi: f64 },
    FlooredSimplex { floor: f64 },
}

impl ParamSet {
    /// `[1/n, 1]`
    pub fn eta_range(n: usize) -> Self {
        ParamSet::Interval {
            lo: 1.0 / n as f64,
            hi: 1.0,
        }
    }

    /// Probability vectors with every entry at least `1/(2M)`.
    pub fn prior_simplex(m: usize) -> Self {
        ParamSet::FlooredSimplex {
            floor: 1.0 / (2.0 * m as f64),
        }
    }

    pub fn project(&self, lambda: &TuningParam) -> Result<TuningParam> {
        match (self, lambda) {
            (
                ParamSet::Oga {
                    radius,
                    gamma_lo,
                    gamma_hi,
                },
                TuningParam::Oga(p),
            ) => Ok(TuningParam::Oga(OgaParam::new(
                project_ball(&p.theta0, *radius),
                project_interval(p.gamma, *gamma_lo, *gamma_hi)?,
            ))),
            (ParamSet::Interval { lo, hi }, TuningParam::EwaRate(eta)) => {
                Ok(TuningParam::EwaRate(project_interval(*eta, *lo, *hi)?))
            }
            (ParamSet::FlooredSimplex { floor }, TuningParam::EwaPrior(pi)) => {
                Ok(TuningParam::EwaPrior(project_simplex_floor(pi, *floor)?))
            }
            _ => Err(Error::Unsupported("parameter variant does not match its set")),
        }
    }

    pub fn contains(&self, lambda: &TuningParam, tol: f64) -> bool {
        match (self, lambda) {
            (
                ParamSet::Oga {
                    radius,
                    gamma_lo,
                    gamma_hi,
                },
                TuningParam::Oga(p),
            ) => {
                p.theta0.norm() <= radius + tol
                    && p.gamma >= gamma_lo - tol
                    && p.gamma <= gamma_hi + tol
            }
            (ParamSet::Interval { lo, hi }, TuningParam::EwaRate(eta)) => {
                *eta >= lo - tol && *eta <= hi + tol
            }
            (ParamSet::FlooredSimplex { floor }, TuningParam::EwaPrior(pi)) => {
                (pi.sum() - 1.0).abs() <= tol && pi.iter().all(|v| *v >= floor - tol)
            }
            _ => false,
        }
    }
}
