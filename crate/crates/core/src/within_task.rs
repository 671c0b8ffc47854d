//! Within-task learners: projected online gradient and exponentially weighted
//! aggregation over a finite expert set.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, contract, Error, Result};
use crate::loss::{LossInstance, LossKind, Task};
use crate::params::{Bounds, OgaParam};
use crate::projection::project_ball;

/// Everything a learner did on one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskTrace {
    /// Decision at each round, before that round's loss is revealed. For EWA
    /// these are the weight vectors.
    pub decisions: Vec<DVector<f64>>,
    /// EWA only, when expert locations were supplied.
    pub mixed_points: Option<Vec<DVector<f64>>>,
    pub round_losses: Vec<f64>,
    pub cumulative_loss: f64,
    /// The decision after the update with the last loss.
    pub end_decision: DVector<f64>,
}

/// Projected online gradient with predict-then-update order: round `i` plays
/// `theta_i`, then steps along the gradient of loss `i` and projects onto the
/// C-ball.
pub fn run_oga(task: &Task, param: &OgaParam, bounds: &Bounds) -> Result<TaskTrace> {
    if task.kind() == LossKind::ExpertTable {
        return Err(Error::Unsupported("OGA runs on squared-error or hinge losses"));
    }
    check_dim(task.dim(), param.theta0.len())?;
    if !(param.gamma > 0.0 && param.gamma.is_finite()) {
        return Err(contract("OGA step size must be positive"));
    }
    if param.theta0.norm() > bounds.radius * (1.0 + 1e-12) {
        return Err(contract("OGA starting point lies outside the decision ball"));
    }

    let mut theta = param.theta0.clone();
    let mut decisions = Vec::with_capacity(task.n());
    let mut round_losses = Vec::with_capacity(task.n());
    for loss in task.losses() {
        round_losses.push(loss.eval(&theta)?);
        let g = loss.grad(&theta)?;
        decisions.push(theta.clone());
        theta = project_ball(&(theta - g * param.gamma), bounds.radius);
    }
    Ok(TaskTrace {
        cumulative_loss: round_losses.iter().sum(),
        decisions,
        mixed_points: None,
        round_losses,
        end_decision: theta,
    })
}

/// Exponential weights from per-expert cumulative losses, computed in the log
/// domain with a max shift.
pub fn ewa_weights_from_totals(
    totals: &DVector<f64>,
    eta: f64,
    prior: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim(prior.len(), totals.len())?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(contract("EWA learning rate must be positive"));
    }
    if prior.iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(contract("prior must be a nonnegative finite vector"));
    }
    let logits = DVector::from_fn(totals.len(), |k, _| {
        if prior[k] > 0.0 && totals[k].is_finite() {
            -eta * totals[k] + prior[k].ln()
        } else {
            f64::NEG_INFINITY
        }
    });
    let shift = logits.max();
    if shift == f64::NEG_INFINITY {
        return Err(Error::DegeneratePrior);
    }
    let w = logits.map(|l| (l - shift).exp());
    let z = w.sum();
    Ok(w / z)
}

/// `p_k ∝ exp(-eta sum_j l_j(k)) pi_k` over the given past expert tables.
pub fn ewa_weights(
    past_losses: &[LossInstance],
    eta: f64,
    prior: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut totals = DVector::zeros(prior.len());
    for loss in past_losses {
        match loss {
            LossInstance::ExpertTable { values } => {
                check_dim(prior.len(), values.len())?;
                totals += values;
            }
            _ => return Err(Error::Unsupported("EWA weights need expert-table losses")),
        }
    }
    ewa_weights_from_totals(&totals, eta, prior)
}

/// Runs EWA on an expert-table task. `expert_points` (M x d, one expert per
/// row) adds the mixed decisions `sum_k p_k theta_k` to the trace.
pub fn run_ewa(
    task: &Task,
    eta: f64,
    prior: &DVector<f64>,
    expert_points: Option<&DMatrix<f64>>,
) -> Result<TaskTrace> {
    if task.kind() != LossKind::ExpertTable {
        return Err(Error::Unsupported("EWA runs on expert-table losses"));
    }
    let m = task.dim();
    check_dim(m, prior.len())?;
    if let Some(points) = expert_points {
        check_dim(m, points.nrows())?;
    }

    let mut totals = DVector::zeros(m);
    let mut decisions = Vec::with_capacity(task.n());
    let mut round_losses = Vec::with_capacity(task.n());
    for loss in task.losses() {
        let w = ewa_weights_from_totals(&totals, eta, prior)?;
        round_losses.push(loss.eval(&w)?);
        if let LossInstance::ExpertTable { values } = loss {
            totals += values;
        }
        decisions.push(w);
    }
    let end_decision = ewa_weights_from_totals(&totals, eta, prior)?;
    let mixed_points =
        expert_points.map(|pts| decisions.iter().map(|w| pts.transpose() * w).collect());
    Ok(TaskTrace {
        cumulative_loss: round_losses.iter().sum(),
        decisions,
        mixed_points,
        round_losses,
        end_decision,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn bounds(radius: f64) -> Bounds {
        Bounds::new(10, 1.0, radius, 1.0, 1.0).unwrap()
    }

    fn table_task(rows: &[&[f64]]) -> Task {
        let losses = rows
            .iter()
            .map(|r| LossInstance::expert_table(DVector::from_column_slice(r)).unwrap())
            .collect();
        Task::new(0, losses, None).unwrap()
    }

    #[test]
    fn oga_one_step() {
        let task = Task::new(0, vec![LossInstance::squared(dvector![1.0], 1.0).unwrap()], None)
            .unwrap();
        let tr = run_oga(&task, &OgaParam::new(dvector![0.0], 0.5), &bounds(10.0)).unwrap();
        assert_eq!(tr.decisions, vec![dvector![0.0]]);
        assert_eq!(tr.cumulative_loss, 1.0);
        assert_eq!(tr.end_decision, dvector![1.0]);
    }

    #[test]
    fn oga_two_steps() {
        // theta_2 = 0 + 0.25 * 2 * (1 - 0) = 0.5; loss (1 - 0.5)^2 = 0.25
        let l = LossInstance::squared(dvector![1.0], 1.0).unwrap();
        let task = Task::new(0, vec![l.clone(), l], None).unwrap();
        let tr = run_oga(&task, &OgaParam::new(dvector![0.0], 0.25), &bounds(10.0)).unwrap();
        assert_eq!(tr.decisions, vec![dvector![0.0], dvector![0.5]]);
        assert_eq!(tr.round_losses, vec![1.0, 0.25]);
        assert_eq!(tr.cumulative_loss, 1.25);
    }

    #[test]
    fn oga_fixed_point() {
        let l = LossInstance::squared(dvector![1.0, 2.0], 5.0).unwrap();
        let task = Task::new(0, vec![l.clone(), l.clone(), l], None).unwrap();
        let start = dvector![1.0, 2.0];
        let tr = run_oga(&task, &OgaParam::new(start.clone(), 0.3), &bounds(10.0)).unwrap();
        assert!(tr.decisions.iter().all(|d| *d == start));
        assert_eq!(tr.end_decision, start);
    }

    #[test]
    fn oga_stays_in_ball() {
        let l = LossInstance::squared(dvector![1.0, 0.0], 100.0).unwrap();
        let task = Task::new(0, vec![l; 5], None).unwrap();
        let tr = run_oga(&task, &OgaParam::new(dvector![0.0, 0.0], 0.5), &bounds(2.0)).unwrap();
        for d in tr.decisions.iter().chain(std::iter::once(&tr.end_decision)) {
            assert!(d.norm() <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn oga_rejects_tables() {
        let task = table_task(&[&[0.0, 1.0]]);
        assert!(matches!(
            run_oga(&task, &OgaParam::new(dvector![0.0, 0.0], 0.5), &bounds(1.0)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn ewa_weight_examples() {
        let prior = dvector![0.3, 0.7];
        assert_eq!(ewa_weights(&[], 0.8, &prior).unwrap(), prior);

        let past = [LossInstance::expert_table(dvector![0.0, 10.0]).unwrap()];
        let w = ewa_weights(&past, 1.0, &dvector![0.5, 0.5]).unwrap();
        let e = (-10.0f64).exp();
        assert_abs_diff_eq!(w[0], 1.0 / (1.0 + e), epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], e / (1.0 + e), epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 4.5397868702434395e-5, epsilon = 1e-12);

        let past = [LossInstance::expert_table(dvector![3.0, 3.0, 3.0]).unwrap()];
        let w = ewa_weights(&past, 2.0, &DVector::from_element(3, 1.0 / 3.0)).unwrap();
        for x in w.iter() {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn ewa_weights_survive_large_losses() {
        let w = ewa_weights_from_totals(&dvector![1e4, 1e4 + 1.0], 1.0, &dvector![0.5, 0.5])
            .unwrap();
        assert!(w.iter().all(|x| x.is_finite()));
        assert_abs_diff_eq!(w[0], 1.0 / (1.0 + (-1.0f64).exp()), epsilon = 1e-14);
    }

    #[test]
    fn ewa_degenerate_prior() {
        let r = ewa_weights_from_totals(&dvector![0.0, 0.0], 1.0, &dvector![0.0, 0.0]);
        assert!(matches!(r, Err(Error::DegeneratePrior)));
    }

    #[test]
    fn ewa_single_round_is_prior_average() {
        let task = table_task(&[&[0.2, 0.6]]);
        let tr = run_ewa(&task, 1.0, &dvector![0.25, 0.75], None).unwrap();
        assert_abs_diff_eq!(tr.cumulative_loss, 0.25 * 0.2 + 0.75 * 0.6, epsilon = 1e-15);
    }

    #[test]
    fn ewa_concentrates_on_best_expert() {
        let task = table_task(&[&[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0]]);
        let points = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let tr = run_ewa(&task, 10.0, &dvector![0.5, 0.5], Some(&points)).unwrap();
        assert!(tr.round_losses.windows(2).all(|w| w[1] < w[0]));
        let e = (-20.0f64).exp();
        assert_abs_diff_eq!(tr.decisions[2][0], 1.0 / (1.0 + e), epsilon = 1e-15);
        let mixed = tr.mixed_points.unwrap();
        assert_abs_diff_eq!(mixed[0][0], 0.0, epsilon = 1e-15);
        for w in &tr.decisions {
            assert_abs_diff_eq!(w.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ewa_width_mismatch() {
        let task = table_task(&[&[0.0, 1.0]]);
        assert!(run_ewa(&task, 1.0, &dvector![1.0], None).is_err());
    }
}
