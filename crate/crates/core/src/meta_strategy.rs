//! Across-task updates of the tuning parameter.
//!
//! OGMS takes one projected gradient step on the previous task's meta-loss.
//! OPMS takes a proximal step, realized by jointly minimizing
//! `F(theta, lambda) = sum_i l_i(theta) + B_n(theta, lambda) + |lambda - lambda_prev|^2 / (2 alpha)`
//! over the comparator and the parameter.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, contract, Error, Result};
use crate::loss::{LossKind, Task};
use crate::meta_loss::{meta_loss_ewa_eta, ridge_estimator, LossSum};
use crate::params::{Bounds, OgaParam, ParamSet, TuningParam};
use crate::projection::project_ball;
use crate::solver::{minimize, Block, InnerSolverCfg, Objective, ProductSet};

/// Lipschitz constant of the OGA meta-loss on `{|v| <= C} x [gamma_lo, gamma_hi]`:
/// `sqrt(n^2 Gamma^4 / 4 + 4 C^2 / gamma_lo^2 + 4 C^4 / gamma_lo^4)`.
pub fn lipschitz_oga(n: usize, lipschitz: f64, radius: f64, gamma_lo: f64) -> f64 {
    let n = n as f64;
    let g2 = gamma_lo * gamma_lo;
    (n * n * lipschitz.powi(4) / 4.0 + 4.0 * radius * radius / g2 + 4.0 * radius.powi(4) / (g2 * g2))
        .sqrt()
}

/// `(C / L) sqrt((4 + C^2) / T)`
pub fn alpha_oga(radius: f64, l: f64, tasks: usize) -> f64 {
    radius / l * ((4.0 + radius * radius) / tasks as f64).sqrt()
}

/// `L = n^2 log M + n B^2 / 8` and `alpha = sqrt(2 / T) / L`.
pub fn alpha_eta(n: usize, loss_range: f64, num_experts: f64, tasks: usize) -> (f64, f64) {
    let n = n as f64;
    let l = n * n * num_experts.ln() + n * loss_range * loss_range / 8.0;
    (l, (2.0 / tasks as f64).sqrt() / l)
}

/// `1 / (2 Cexp M sqrt(T))`
pub fn alpha_prior(exp_concavity: f64, num_experts: usize, tasks: usize) -> f64 {
    1.0 / (2.0 * exp_concavity * num_experts as f64 * (tasks as f64).sqrt())
}

/// `1 / sqrt(T)`
pub fn alpha_practical(tasks: usize) -> f64 {
    1.0 / (tasks as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaState {
    /// Parameter used all along the current task.
    pub lambda: TuningParam,
    pub alpha: f64,
    pub task_index: usize,
    /// `(lambda_t, meta-loss at lambda_t)`, filled by callers that track it.
    pub history: Vec<(TuningParam, f64)>,
}

impl MetaState {
    pub fn new(lambda: TuningParam, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(contract("meta step alpha must be positive"));
        }
        Ok(MetaState {
            lambda,
            alpha,
            task_index: 1,
            history: Vec::new(),
        })
    }

    /// `(v, gamma) = (0, gamma_hi)`
    pub fn oga_default(d: usize, bounds: &Bounds, alpha: f64) -> Result<Self> {
        MetaState::new(
            TuningParam::Oga(OgaParam::new(DVector::zeros(d), bounds.gamma_hi)),
            alpha,
        )
    }

    /// `eta = 1`
    pub fn eta_default(alpha: f64) -> Result<Self> {
        MetaState::new(TuningParam::EwaRate(1.0), alpha)
    }

    /// Uniform prior over `M` experts.
    pub fn prior_default(num_experts: usize, alpha: f64) -> Result<Self> {
        MetaState::new(
            TuningParam::EwaPrior(DVector::from_element(
                num_experts,
                1.0 / num_experts as f64,
            )),
            alpha,
        )
    }

    fn advanced(&self, lambda: TuningParam) -> MetaState {
        MetaState {
            lambda,
            alpha: self.alpha,
            task_index: self.task_index + 1,
            history: self.history.clone(),
        }
    }
}

/// `lambda <- P(lambda - alpha grad)`
pub fn ogms_step(state: &MetaState, grad: &DVector<f64>, set: &ParamSet) -> Result<MetaState> {
    check_dim(state.lambda.len(), grad.len())?;
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(contract("meta-gradient must be finite"));
    }
    let stepped = state
        .lambda
        .with_vector(&(state.lambda.to_vector() - grad * state.alpha))?;
    Ok(state.advanced(set.project(&stepped)?))
}

/// The explicit clipped OGMS update of the EWA learning rate:
/// `eta <- 1/n v [eta - alpha (n b^2 / 8 - log M / eta^2)] ^ 1`.
pub fn ogms_eta_step(
    state: &MetaState,
    task: &Task,
    num_experts: f64,
    n: usize,
) -> Result<MetaState> {
    let TuningParam::EwaRate(eta) = state.lambda else {
        return Err(Error::Unsupported("OGMS-eta needs an EWA-rate parameter"));
    };
    let b = task.max_abs_expert_loss()?;
    let nf = n as f64;
    let step = eta - state.alpha * (nf * b * b / 8.0 - num_experts.ln() / (eta * eta));
    let next = (1.0 / nf).max(step).min(1.0);
    Ok(state.advanced(TuningParam::EwaRate(next)))
}

/// Proximal objective of the OGA variant over `z = [theta, v, gamma]`
/// (or `[theta, v]` with a frozen step size).
struct OgaProx<'a> {
    losses: &'a LossSum,
    prev: &'a OgaParam,
    lipschitz: f64,
    alpha: f64,
    learn_gamma: bool,
}

impl OgaProx<'_> {
    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>, f64) {
        let d = self.losses.dim();
        let gamma = if self.learn_gamma { z[2 * d] } else { self.prev.gamma };
        (z.rows(0, d).into_owned(), z.rows(d, d).into_owned(), gamma)
    }

    fn n(&self) -> f64 {
        self.losses.n() as f64
    }
}

impl Objective for OgaProx<'_> {
    fn value(&self, z: &DVector<f64>) -> f64 {
        let (theta, v, gamma) = self.split(z);
        let mut f = self.losses.value(&theta)
            + gamma * self.lipschitz * self.lipschitz * self.n() / 2.0
            + (&theta - &v).norm_squared() / (2.0 * gamma)
            + (&v - &self.prev.theta0).norm_squared() / (2.0 * self.alpha);
        if self.learn_gamma {
            f += (gamma - self.prev.gamma).powi(2) / (2.0 * self.alpha);
        }
        f
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let d = self.losses.dim();
        let (theta, v, gamma) = self.split(z);
        let s = &theta - &v;
        let mut g = DVector::zeros(z.len());
        g.rows_mut(0, d)
            .copy_from(&(self.losses.gradient(&theta) + &s / gamma));
        g.rows_mut(d, d)
            .copy_from(&(-&s / gamma + (&v - &self.prev.theta0) / self.alpha));
        if self.learn_gamma {
            g[2 * d] = self.lipschitz * self.lipschitz * self.n() / 2.0
                - s.norm_squared() / (2.0 * gamma * gamma)
                + (gamma - self.prev.gamma) / self.alpha;
        }
        g
    }

    fn hessian(&self, z: &DVector<f64>) -> Option<DMatrix<f64>> {
        let d = self.losses.dim();
        let (theta, v, gamma) = self.split(z);
        let mut h = DMatrix::zeros(z.len(), z.len());
        let eye = DMatrix::<f64>::identity(d, d);
        let mut tt = &eye / gamma;
        if let Some(hl) = self.losses.hessian_ref() {
            tt += hl;
        }
        h.view_mut((0, 0), (d, d)).copy_from(&tt);
        h.view_mut((0, d), (d, d)).copy_from(&(-&eye / gamma));
        h.view_mut((d, 0), (d, d)).copy_from(&(-&eye / gamma));
        h.view_mut((d, d), (d, d))
            .copy_from(&(&eye * (1.0 / gamma + 1.0 / self.alpha)));
        if self.learn_gamma {
            let s = &theta - &v;
            let g2 = gamma * gamma;
            for j in 0..d {
                h[(j, 2 * d)] = -s[j] / g2;
                h[(2 * d, j)] = -s[j] / g2;
                h[(d + j, 2 * d)] = s[j] / g2;
                h[(2 * d, d + j)] = s[j] / g2;
            }
            h[(2 * d, 2 * d)] = s.norm_squared() / (g2 * gamma) + 1.0 / self.alpha;
        }
        Some(h)
    }
}

/// `F(theta, (v, gamma))` of the OGA proximal step with previous parameter `prev`.
pub fn oga_prox_objective(
    task: &Task,
    prev: &OgaParam,
    theta: &DVector<f64>,
    candidate: &OgaParam,
    lipschitz: f64,
    alpha: f64,
) -> Result<f64> {
    let losses = LossSum::from_task(task)?;
    check_dim(losses.dim(), theta.len())?;
    let d = losses.dim();
    let f = OgaProx {
        losses: &losses,
        prev,
        lipschitz,
        alpha,
        learn_gamma: true,
    };
    let mut z = DVector::zeros(2 * d + 1);
    z.rows_mut(0, d).copy_from(theta);
    z.rows_mut(d, d).copy_from(&candidate.theta0);
    z[2 * d] = candidate.gamma;
    Ok(f.value(&z))
}

fn oga_prox(
    state: &MetaState,
    prev: &OgaParam,
    task: &Task,
    bounds: &Bounds,
    cfg: &InnerSolverCfg,
    learn_gamma: bool,
) -> Result<MetaState> {
    let losses = LossSum::from_task(task)?;
    let d = losses.dim();
    check_dim(d, prev.theta0.len())?;
    let f = OgaProx {
        losses: &losses,
        prev,
        lipschitz: bounds.lipschitz,
        alpha: state.alpha,
        learn_gamma,
    };
    let mut blocks = vec![
        Block::Ball { start: 0, len: d, radius: bounds.radius },
        Block::Ball { start: d, len: d, radius: bounds.radius },
    ];
    let len = if learn_gamma {
        blocks.push(Block::Interval {
            index: 2 * d,
            lo: bounds.gamma_lo,
            hi: bounds.gamma_hi,
        });
        2 * d + 1
    } else {
        2 * d
    };
    let set = ProductSet::new(blocks);

    // warm start at the inner minimizer for the previous parameter
    let theta_start = if task.kind() == LossKind::SquaredError {
        let (x, y) = task.design()?;
        project_ball(&ridge_estimator(&x, &y, prev.gamma, &prev.theta0)?, bounds.radius)
    } else {
        prev.theta0.clone()
    };
    let mut start = DVector::zeros(len);
    start.rows_mut(0, d).copy_from(&theta_start);
    start.rows_mut(d, d).copy_from(&prev.theta0);
    if learn_gamma {
        start[2 * d] = prev.gamma;
    }
    let report = minimize(&f, &set, &start, cfg)?;
    let z = report.point;
    let gamma = if learn_gamma { z[2 * d] } else { prev.gamma };
    let next = OgaParam::new(z.rows(d, d).into_owned(), gamma);
    Ok(state.advanced(TuningParam::Oga(next)))
}

/// `eta` proximal objective; the meta-loss is smooth in `eta`.
struct EtaProx<'a> {
    task: &'a Task,
    prev: f64,
    alpha: f64,
    num_experts: f64,
}

impl Objective for EtaProx<'_> {
    fn value(&self, z: &DVector<f64>) -> f64 {
        match meta_loss_ewa_eta(self.task, z[0], self.num_experts) {
            Ok(r) => r.value + (z[0] - self.prev).powi(2) / (2.0 * self.alpha),
            Err(_) => f64::NAN,
        }
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let g = meta_loss_ewa_eta(self.task, z[0], self.num_experts)
            .ok()
            .and_then(|r| r.gradient)
            .map_or(f64::NAN, |g| g[0]);
        DVector::from_element(1, g + (z[0] - self.prev) / self.alpha)
    }

    fn hessian(&self, z: &DVector<f64>) -> Option<DMatrix<f64>> {
        let eta = z[0];
        Some(DMatrix::from_element(
            1,
            1,
            2.0 * self.num_experts.ln() / eta.powi(3) + 1.0 / self.alpha,
        ))
    }
}

/// Prior proximal objective: `min_k [S_k - Cexp log pi_k] + |pi - pi_prev|^2 / (2 alpha)`.
struct PriorProx<'a> {
    totals: &'a DVector<f64>,
    prev: &'a DVector<f64>,
    alpha: f64,
    exp_concavity: f64,
}

impl PriorProx<'_> {
    fn argmin(&self, pi: &DVector<f64>) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for k in 0..pi.len() {
            let s = self.totals[k] - self.exp_concavity * pi[k].ln();
            if s < best.1 {
                best = (k, s);
            }
        }
        best
    }
}

impl Objective for PriorProx<'_> {
    fn value(&self, z: &DVector<f64>) -> f64 {
        if z.iter().any(|p| !(*p > 0.0)) {
            return f64::NAN;
        }
        self.argmin(z).1 + (z - self.prev).norm_squared() / (2.0 * self.alpha)
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let (k, _) = self.argmin(z);
        let mut g = (z - self.prev) / self.alpha;
        g[k] -= self.exp_concavity / z[k];
        g
    }
}

/// One OPMS step on the previous task. The variant of `state.lambda` picks
/// the objective: OGA (joint in comparator, start and step size), EWA rate,
/// or EWA prior (projected subgradient on the floored simplex).
pub fn opms_step(
    state: &MetaState,
    prev_task: &Task,
    bounds: &Bounds,
    cfg: &InnerSolverCfg,
) -> Result<MetaState> {
    match &state.lambda {
        TuningParam::Oga(prev) => oga_prox(state, prev, prev_task, bounds, cfg, true),
        TuningParam::EwaRate(prev) => {
            let n = prev_task.n();
            let f = EtaProx {
                task: prev_task,
                prev: *prev,
                alpha: state.alpha,
                num_experts: prev_task.dim() as f64,
            };
            let set = ProductSet::new(vec![Block::Interval {
                index: 0,
                lo: 1.0 / n as f64,
                hi: 1.0,
            }]);
            let report = minimize(&f, &set, &DVector::from_element(1, *prev), cfg)?;
            Ok(state.advanced(TuningParam::EwaRate(report.point[0])))
        }
        TuningParam::EwaPrior(prev) => {
            let totals = prev_task.expert_totals()?;
            check_dim(totals.len(), prev.len())?;
            let m = prev.len();
            let f = PriorProx {
                totals: &totals,
                prev,
                alpha: state.alpha,
                exp_concavity: bounds.exp_concavity,
            };
            let set = ProductSet::new(vec![Block::FlooredSimplex {
                start: 0,
                len: m,
                floor: 1.0 / (2.0 * m as f64),
            }]);
            let report = minimize(&f, &set, prev, cfg)?;
            Ok(state.advanced(TuningParam::EwaPrior(report.point)))
        }
    }
}

/// OPMS that learns only the starting point; the step size stays fixed.
pub fn opms_step_mean(
    state: &MetaState,
    prev_task: &Task,
    bounds: &Bounds,
    cfg: &InnerSolverCfg,
) -> Result<MetaState> {
    match &state.lambda {
        TuningParam::Oga(prev) => oga_prox(state, prev, prev_task, bounds, cfg, false),
        _ => Err(Error::Unsupported("mean-OPMS needs an OGA parameter")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossInstance;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::dvector;

    fn table_task<R: AsRef<[f64]>>(rows: &[R]) -> Task {
        let losses = rows
            .iter()
            .map(|r| LossInstance::expert_table(DVector::from_column_slice(r.as_ref())).unwrap())
            .collect();
        Task::new(0, losses, None).unwrap()
    }

    #[test]
    fn lipschitz_examples() {
        assert_eq!(lipschitz_oga(2, 1.0, 1.0, 1.0), 3.0);
        assert_relative_eq!(
            lipschitz_oga(30, 1.0, 1.0, 1.0 / 30.0),
            3_243_825.0f64.sqrt(),
            max_relative = 1e-14
        );
        assert_abs_diff_eq!(lipschitz_oga(30, 1.0, 1.0, 1.0 / 30.0), 1801.06, epsilon = 5e-3);
        assert!(lipschitz_oga(2, 1.0, 3.0, 0.5) > lipschitz_oga(2, 1.0, 3.0, 1.0));
    }

    #[test]
    fn alpha_examples() {
        assert_relative_eq!(alpha_oga(1.0, 3.0, 9), 5.0f64.sqrt() / 9.0, max_relative = 1e-15);
        assert_relative_eq!(alpha_oga(1.0, 3.0, 36), alpha_oga(1.0, 3.0, 9) / 2.0, max_relative = 1e-15);
        assert_relative_eq!(alpha_oga(2.0, 1.0, 1), 2.0 * 8.0f64.sqrt(), max_relative = 1e-15);

        let (l, a) = alpha_eta(1, 0.0, std::f64::consts::E, 2);
        assert_relative_eq!(l, 1.0, max_relative = 1e-15);
        assert_relative_eq!(a, 1.0, max_relative = 1e-15);
        let (l, a) = alpha_eta(10, 2.0, 100.0, 50);
        assert_relative_eq!(l, 100.0 * 100.0f64.ln() + 5.0, max_relative = 1e-15);
        assert_abs_diff_eq!(l, 465.517, epsilon = 1e-3);
        assert_abs_diff_eq!(a, 4.296e-4, epsilon = 1e-7);

        assert_eq!(alpha_prior(1.0, 1, 1), 0.5);
        assert_relative_eq!(alpha_prior(1.0, 10, 100), 0.005, max_relative = 1e-15);
        assert_relative_eq!(alpha_prior(1.0, 10, 400), 0.0025, max_relative = 1e-15);
    }

    #[test]
    fn ogms_scalar_and_fixed_point() {
        let s = MetaState::new(TuningParam::EwaRate(0.5), 0.1).unwrap();
        let set = ParamSet::Interval { lo: 0.0, hi: 1.0 };
        let next = ogms_step(&s, &dvector![1.0], &set).unwrap();
        assert_abs_diff_eq!(
            match next.lambda {
                TuningParam::EwaRate(e) => e,
                _ => unreachable!(),
            },
            0.4,
            epsilon = 1e-15
        );
        assert_eq!(next.task_index, 2);
        let same = ogms_step(&s, &dvector![0.0], &set).unwrap();
        assert_eq!(same.lambda, s.lambda);
        assert!(ogms_step(&s, &dvector![f64::NAN], &set).is_err());
        assert!(ogms_step(&s, &dvector![1.0, 2.0], &set).is_err());
    }

    #[test]
    fn ogms_oga_example() {
        let s = MetaState::new(TuningParam::Oga(OgaParam::new(dvector![0.0, 0.0], 0.2)), 0.1)
            .unwrap();
        let set = ParamSet::Oga { radius: 1.0, gamma_lo: 0.1, gamma_hi: 1.0 };
        let next = ogms_step(&s, &dvector![1.0, 0.0, -10.0], &set).unwrap();
        let p = next.lambda.as_oga().unwrap();
        assert_abs_diff_eq!(p.theta0[0], -0.1, epsilon = 1e-15);
        assert_eq!(p.theta0[1], 0.0);
        assert_eq!(p.gamma, 1.0);
    }

    #[test]
    fn ogms_eta_examples() {
        let m = 4.0f64.exp();
        let zero = table_task(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let s = MetaState::new(TuningParam::EwaRate(0.5), 0.1).unwrap();
        let next = ogms_eta_step(&s, &zero, m, 2).unwrap();
        assert_eq!(next.lambda, TuningParam::EwaRate(1.0));

        // n b^2 / 8 = log M / eta^2 at b = 1, n = 8, eta = 0.5, log M = 0.25
        let task = table_task(&[&[1.0, 0.0]; 8]);
        let s = MetaState::new(TuningParam::EwaRate(0.5), 0.3).unwrap();
        let next = ogms_eta_step(&s, &task, 0.25f64.exp(), 8).unwrap();
        let TuningParam::EwaRate(eta) = next.lambda else { unreachable!() };
        assert_abs_diff_eq!(eta, 0.5, epsilon = 1e-15);

        let huge = table_task(&[&[1e3, 0.0]; 4]);
        let next = ogms_eta_step(&s, &huge, 2.0, 4).unwrap();
        assert_eq!(next.lambda, TuningParam::EwaRate(0.25));
    }

    #[test]
    fn opms_prior_stays_feasible_and_moves_to_best() {
        let task = table_task(&[&[1.0, 0.0, 1.0, 1.0]; 5]);
        let s = MetaState::prior_default(4, 0.05).unwrap();
        let b = Bounds::new(5, 1.0, 1.0, 1.0, 2.0).unwrap();
        let next = opms_step(&s, &task, &b, &InnerSolverCfg::gradient(50)).unwrap();
        let TuningParam::EwaPrior(pi) = &next.lambda else { unreachable!() };
        assert!(ParamSet::prior_simplex(4).contains(&next.lambda, 1e-10));
        assert!(pi[1] > 0.25);
    }

    #[test]
    fn opms_eta_stays_in_range() {
        let task = table_task(&[&[0.9, 0.1, 0.5]; 6]);
        let s = MetaState::eta_default(1e3).unwrap();
        let next = opms_step(&s, &task, &Bounds::new(6, 1.0, 1.0, 1.0, 2.0).unwrap(), &InnerSolverCfg::newton(50))
            .unwrap();
        let TuningParam::EwaRate(eta) = next.lambda else { unreachable!() };
        // nearly unregularized: the meta-loss minimizer (2/b) sqrt(2 log M / n)
        let expect = (2.0 / 0.9 * (2.0 * 3.0f64.ln() / 6.0).sqrt()).clamp(1.0 / 6.0, 1.0);
        assert_abs_diff_eq!(eta, expect, epsilon = 1e-3);
    }

    #[test]
    fn mean_opms_rejects_non_oga() {
        let s = MetaState::eta_default(0.1).unwrap();
        let task = table_task(&[&[0.0, 1.0]]);
        let b = Bounds::new(5, 1.0, 1.0, 1.0, 2.0).unwrap();
        assert!(opms_step_mean(&s, &task, &b, &InnerSolverCfg::default()).is_err());
    }
}
