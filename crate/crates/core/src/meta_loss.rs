//! Meta-losses: the within-task regret bound, minimized over the comparator,
//! as a function of the tuning parameter.
//!
//! For OGA with `B_n(theta, (v, gamma)) = gamma Gamma^2 n / 2 + |theta - v|^2 / (2 gamma)`
//! the meta-loss is `inf_{|theta| <= C} sum_i l_i(theta) + B_n`. With squared
//! losses the inner problem is a ridge regression. For EWA the comparator
//! ranges over the finite expert set.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, contract, Error, Result};
use crate::loss::{LossKind, Task};
use crate::params::{Bounds, OgaParam};
use crate::projection::project_ball;
use crate::solver::{minimize, Block, Objective, ProductSet};

pub use crate::solver::{InnerMethod, InnerSolverCfg, StepRule};

/// The comparator achieving the meta-loss.
#[derive(Clone, Debug, PartialEq)]
pub enum Minimizer {
    Point(DVector<f64>),
    Expert(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaLossResult {
    pub value: f64,
    pub minimizer: Minimizer,
    /// Same shape as the flattened tuning parameter, when available.
    pub gradient: Option<DVector<f64>>,
}

impl MetaLossResult {
    pub fn point(&self) -> Option<&DVector<f64>> {
        match &self.minimizer {
            Minimizer::Point(p) => Some(p),
            Minimizer::Expert(_) => None,
        }
    }
}

/// Sum of a task's squared or hinge losses in matrix form.
#[derive(Clone, Debug)]
pub(crate) struct LossSum {
    kind: LossKind,
    x: DMatrix<f64>,
    y: DVector<f64>,
    /// `2 X^T X` for squared losses.
    hessian: Option<DMatrix<f64>>,
}

impl LossSum {
    pub(crate) fn from_task(task: &Task) -> Result<Self> {
        let kind = task.kind();
        let (n, d) = (task.n(), task.dim());
        let mut x = DMatrix::zeros(n, d);
        let mut y = DVector::zeros(n);
        for (i, loss) in task.losses().iter().enumerate() {
            match loss {
                crate::loss::LossInstance::SquaredError { x: xi, y: yi }
                | crate::loss::LossInstance::Hinge { x: xi, y: yi } => {
                    x.row_mut(i).copy_from(&xi.transpose());
                    y[i] = *yi;
                }
                crate::loss::LossInstance::ExpertTable { .. } => {
                    return Err(Error::Unsupported(
                        "OGA meta-loss needs squared-error or hinge losses",
                    ))
                }
            }
        }
        let hessian = (kind == LossKind::SquaredError).then(|| x.tr_mul(&x) * 2.0);
        Ok(LossSum { kind, x, y, hessian })
    }

    pub(crate) fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub(crate) fn n(&self) -> usize {
        self.x.nrows()
    }

    pub(crate) fn value(&self, theta: &DVector<f64>) -> f64 {
        let fitted = &self.x * theta;
        match self.kind {
            LossKind::SquaredError => (&self.y - fitted).norm_squared(),
            _ => self
                .y
                .iter()
                .zip(fitted.iter())
                .map(|(y, f)| (1.0 - y * f).max(0.0))
                .sum(),
        }
    }

    pub(crate) fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let fitted = &self.x * theta;
        match self.kind {
            LossKind::SquaredError => self.x.tr_mul(&(&self.y - fitted)) * -2.0,
            _ => {
                let coef = DVector::from_fn(self.n(), |i, _| {
                    if 1.0 - self.y[i] * fitted[i] > 0.0 {
                        -self.y[i]
                    } else {
                        0.0
                    }
                });
                self.x.tr_mul(&coef)
            }
        }
    }

    /// Exact Hessian for squared losses; the zero generalized Hessian for hinge.
    pub(crate) fn hessian(&self) -> DMatrix<f64> {
        self.hessian
            .clone()
            .unwrap_or_else(|| DMatrix::zeros(self.dim(), self.dim()))
    }

    pub(crate) fn hessian_ref(&self) -> Option<&DMatrix<f64>> {
        self.hessian.as_ref()
    }
}

/// `(X^T X + I/(2 gamma))^-1 (X^T Y + theta0/(2 gamma))` by Cholesky.
pub fn ridge_estimator(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: f64,
    theta0: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim(x.nrows(), y.len())?;
    check_dim(x.ncols(), theta0.len())?;
    if !(gamma > 0.0) {
        return Err(contract("ridge step size must be positive"));
    }
    let finite = x.iter().chain(y.iter()).chain(theta0.iter()).all(|v| v.is_finite());
    if !finite || !gamma.is_finite() {
        return Err(contract("ridge inputs must be finite"));
    }
    let shrink = 1.0 / (2.0 * gamma);
    let d = x.ncols();
    let a = x.tr_mul(x) + DMatrix::identity(d, d) * shrink;
    let rhs = x.tr_mul(y) + theta0 * shrink;
    let chol = a
        .cholesky()
        .ok_or_else(|| contract("ridge system is not positive definite"))?;
    Ok(chol.solve(&rhs))
}

/// Gradient of `B_n` in `(v, gamma)` at a fixed comparator. By Danskin's
/// theorem this is the meta-loss gradient when `theta_hat` is the (unique)
/// inner minimizer.
pub fn oga_envelope_gradient(
    param: &OgaParam,
    theta_hat: &DVector<f64>,
    n: usize,
    lipschitz: f64,
) -> DVector<f64> {
    let d = param.theta0.len();
    let diff = &param.theta0 - theta_hat;
    let mut g = DVector::zeros(d + 1);
    g.rows_mut(0, d).copy_from(&(&diff / param.gamma));
    g[d] = lipschitz * lipschitz * n as f64 / 2.0
        - diff.norm_squared() / (2.0 * param.gamma * param.gamma);
    g
}

fn oga_penalty(param: &OgaParam, theta: &DVector<f64>, n: usize, lipschitz: f64) -> f64 {
    param.gamma * lipschitz * lipschitz * n as f64 / 2.0
        + (theta - &param.theta0).norm_squared() / (2.0 * param.gamma)
}

/// Closed-form OGA meta-loss for squared losses, valid while the ridge
/// estimate stays inside the decision ball.
pub fn meta_loss_oga_quadratic(
    task: &Task,
    param: &OgaParam,
    bounds: &Bounds,
) -> Result<MetaLossResult> {
    if task.kind() != LossKind::SquaredError {
        return Err(Error::Unsupported("closed-form meta-loss needs squared-error losses"));
    }
    let (x, y) = task.design()?;
    let theta_hat = ridge_estimator(&x, &y, param.gamma, &param.theta0)?;
    let norm = theta_hat.norm();
    if norm > bounds.radius {
        return Err(Error::ConstraintActive {
            norm,
            radius: bounds.radius,
        });
    }
    let n = task.n();
    let value =
        (&y - &x * &theta_hat).norm_squared() + oga_penalty(param, &theta_hat, n, bounds.lipschitz);
    let gradient = oga_envelope_gradient(param, &theta_hat, n, bounds.lipschitz);
    Ok(MetaLossResult {
        value,
        minimizer: Minimizer::Point(theta_hat),
        gradient: Some(gradient),
    })
}

/// `sum_i l_i(theta) + |theta - v|^2 / (2 gamma)`
struct InnerObjective<'a> {
    losses: &'a LossSum,
    theta0: &'a DVector<f64>,
    gamma: f64,
}

impl Objective for InnerObjective<'_> {
    fn value(&self, z: &DVector<f64>) -> f64 {
        self.losses.value(z) + (z - self.theta0).norm_squared() / (2.0 * self.gamma)
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        self.losses.gradient(z) + (z - self.theta0) / self.gamma
    }

    fn hessian(&self, _z: &DVector<f64>) -> Option<DMatrix<f64>> {
        let d = self.losses.dim();
        Some(self.losses.hessian() + DMatrix::identity(d, d) / self.gamma)
    }
}

/// OGA meta-loss by iterative minimization over the decision ball.
/// No gradient is reported.
pub fn meta_loss_oga_general(
    task: &Task,
    param: &OgaParam,
    bounds: &Bounds,
    cfg: &InnerSolverCfg,
) -> Result<MetaLossResult> {
    let losses = LossSum::from_task(task)?;
    check_dim(losses.dim(), param.theta0.len())?;
    if !(param.gamma > 0.0) {
        return Err(contract("OGA step size must be positive"));
    }
    let f = InnerObjective {
        losses: &losses,
        theta0: &param.theta0,
        gamma: param.gamma,
    };
    let set = ProductSet::new(vec![Block::Ball {
        start: 0,
        len: losses.dim(),
        radius: bounds.radius,
    }]);
    let start = match task.kind() {
        LossKind::SquaredError => {
            let (x, y) = task.design()?;
            project_ball(&ridge_estimator(&x, &y, param.gamma, &param.theta0)?, bounds.radius)
        }
        _ => param.theta0.clone(),
    };
    let report = minimize(&f, &set, &start, cfg)?;
    let value = report.value
        + param.gamma * bounds.lipschitz * bounds.lipschitz * task.n() as f64 / 2.0;
    Ok(MetaLossResult {
        value,
        minimizer: Minimizer::Point(report.point),
        gradient: None,
    })
}

/// Closed form when available, iterative otherwise. For squared losses the
/// envelope gradient at the computed comparator is always attached.
pub fn meta_loss_oga(
    task: &Task,
    param: &OgaParam,
    bounds: &Bounds,
    cfg: &InnerSolverCfg,
) -> Result<MetaLossResult> {
    if task.kind() == LossKind::SquaredError {
        match meta_loss_oga_quadratic(task, param, bounds) {
            Err(Error::ConstraintActive { .. }) => {}
            other => return other,
        }
        let mut res = meta_loss_oga_general(task, param, bounds, cfg)?;
        let theta_hat = res.point().expect("OGA meta-loss returns a point").clone();
        res.gradient = Some(oga_envelope_gradient(
            param,
            &theta_hat,
            task.n(),
            bounds.lipschitz,
        ));
        return Ok(res);
    }
    meta_loss_oga_general(task, param, bounds, cfg)
}

/// Index of the expert with the smallest cumulative loss (lowest index on ties).
pub fn best_expert(task: &Task) -> Result<(usize, f64)> {
    let totals = task.expert_totals()?;
    let mut best = (0, totals[0]);
    for (k, v) in totals.iter().enumerate().skip(1) {
        if *v < best.1 {
            best = (k, *v);
        }
    }
    Ok(best)
}

/// `min_k sum_i l_i(k) + eta n b^2 / 8 + log(M) / eta`, with `b` the task's
/// largest absolute expert loss. `num_experts` is the `M` inside the log.
pub fn meta_loss_ewa_eta(task: &Task, eta: f64, num_experts: f64) -> Result<MetaLossResult> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(contract(format!("EWA rate must be positive, got {eta}")));
    }
    let (k, best) = best_expert(task)?;
    let b = task.max_abs_expert_loss()?;
    let n = task.n() as f64;
    let log_m = num_experts.ln();
    let value = best + eta * n * b * b / 8.0 + log_m / eta;
    let grad = n * b * b / 8.0 - log_m / (eta * eta);
    Ok(MetaLossResult {
        value,
        minimizer: Minimizer::Expert(k),
        gradient: Some(DVector::from_element(1, grad)),
    })
}

/// `min_k [sum_i l_i(k) + Cexp log(1/pi_k)]` with the subgradient on the
/// minimizing coordinate (lowest index on ties).
pub fn meta_loss_ewa_prior(task: &Task, pi: &DVector<f64>, cexp: f64) -> Result<MetaLossResult> {
    let totals = task.expert_totals()?;
    check_dim(totals.len(), pi.len())?;
    if pi.iter().any(|p| !(*p > 0.0)) {
        return Err(contract("prior entries must be strictly positive"));
    }
    let scores = DVector::from_fn(pi.len(), |k, _| totals[k] - cexp * pi[k].ln());
    let mut k_star = 0;
    for k in 1..scores.len() {
        if scores[k] < scores[k_star] {
            k_star = k;
        }
    }
    let mut gradient = DVector::zeros(pi.len());
    gradient[k_star] = -cexp / pi[k_star];
    Ok(MetaLossResult {
        value: scores[k_star],
        minimizer: Minimizer::Expert(k_star),
        gradient: Some(gradient),
    })
}
