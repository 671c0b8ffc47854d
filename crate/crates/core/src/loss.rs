//! Per-round convex losses and the tasks built from them.
//!
//! A [`Task`] is the validation gate: it checks finiteness, label values and
//! that every round shares one loss kind and one dimension. Learners only see
//! the losses; `true_param` is diagnostics for the experiment harness.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, contract, Error, Result};

/// One convex per-round loss.
#[derive(Clone, Debug, PartialEq)]
pub enum LossInstance {
    /// `(y - x^T theta)^2`
    SquaredError { x: DVector<f64>, y: f64 },
    /// `(1 - y x^T theta)_+` with `y` in {-1, +1}.
    Hinge { x: DVector<f64>, y: f64 },
    /// Losses of a finite set of experts; a decision is a mixture weight vector.
    ExpertTable { values: DVector<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    SquaredError,
    Hinge,
    ExpertTable,
}

impl LossInstance {
    pub fn squared(x: DVector<f64>, y: f64) -> Result<Self> {
        let loss = LossInstance::SquaredError { x, y };
        loss.validate()?;
        Ok(loss)
    }

    pub fn hinge(x: DVector<f64>, y: f64) -> Result<Self> {
        let loss = LossInstance::Hinge { x, y };
        loss.validate()?;
        Ok(loss)
    }

    pub fn expert_table(values: DVector<f64>) -> Result<Self> {
        let loss = LossInstance::ExpertTable { values };
        loss.validate()?;
        Ok(loss)
    }

    pub fn kind(&self) -> LossKind {
        match self {
            LossInstance::SquaredError { .. } => LossKind::SquaredError,
            LossInstance::Hinge { .. } => LossKind::Hinge,
            LossInstance::ExpertTable { .. } => LossKind::ExpertTable,
        }
    }

    /// Input dimension `d`, or the number of experts `M` for a table.
    pub fn dim(&self) -> usize {
        match self {
            LossInstance::SquaredError { x, .. } | LossInstance::Hinge { x, .. } => x.len(),
            LossInstance::ExpertTable { values } => values.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossInstance::SquaredError { x, y } => {
                if !x.iter().all(|v| v.is_finite()) || !y.is_finite() {
                    return Err(contract("squared-error loss has non-finite entries"));
                }
            }
            LossInstance::Hinge { x, y } => {
                if !x.iter().all(|v| v.is_finite()) {
                    return Err(contract("hinge loss has non-finite inputs"));
                }
                if *y != 1.0 && *y != -1.0 {
                    return Err(contract(format!("hinge label must be -1 or +1, got {y}")));
                }
            }
            LossInstance::ExpertTable { values } => {
                if values.is_empty() || !values.iter().all(|v| v.is_finite()) {
                    return Err(contract("expert table must be non-empty and finite"));
                }
            }
        }
        Ok(())
    }

    /// Evaluates the loss. For an expert table `point` is a mixture weight
    /// vector and the result is the mixture loss `sum_k p_k values_k`.
    pub fn eval(&self, point: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), point.len())?;
        Ok(match self {
            LossInstance::SquaredError { x, y } => {
                let r = y - x.dot(point);
                r * r
            }
            LossInstance::Hinge { x, y } => (1.0 - y * x.dot(point)).max(0.0),
            LossInstance::ExpertTable { values } => values.dot(point),
        })
    }

    /// A (sub)gradient. The hinge kink gets the zero subgradient.
    pub fn grad(&self, point: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), point.len())?;
        match self {
            LossInstance::SquaredError { x, y } => Ok(x * (-2.0 * (y - x.dot(point)))),
            LossInstance::Hinge { x, y } => {
                if 1.0 - y * x.dot(point) > 0.0 {
                    Ok(x * -*y)
                } else {
                    Ok(DVector::zeros(x.len()))
                }
            }
            LossInstance::ExpertTable { .. } => Err(Error::Unsupported(
                "expert-table losses have no parameter gradient",
            )),
        }
    }
}

pub fn eval_loss(loss: &LossInstance, point: &DVector<f64>) -> Result<f64> {
    loss.eval(point)
}

pub fn grad_loss(loss: &LossInstance, point: &DVector<f64>) -> Result<DVector<f64>> {
    loss.grad(point)
}

/// An ordered sequence of `n >= 1` losses of one kind and dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    losses: Vec<LossInstance>,
    true_param: Option<DVector<f64>>,
    task_id: usize,
}

impl Task {
    pub fn new(
        task_id: usize,
        losses: Vec<LossInstance>,
        true_param: Option<DVector<f64>>,
    ) -> Result<Self> {
        let first = losses
            .first()
            .ok_or_else(|| contract("a task needs at least one round"))?;
        let (kind, dim) = (first.kind(), first.dim());
        for loss in &losses {
            loss.validate()?;
            if loss.kind() != kind {
                return Err(contract("all losses of a task must share one kind"));
            }
            check_dim(dim, loss.dim())?;
        }
        if let Some(p) = &true_param {
            if kind != LossKind::ExpertTable {
                check_dim(dim, p.len())?;
            }
        }
        Ok(Task {
            losses,
            true_param,
            task_id,
        })
    }

    pub fn losses(&self) -> &[LossInstance] {
        &self.losses
    }

    pub fn true_param(&self) -> Option<&DVector<f64>> {
        self.true_param.as_ref()
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn n(&self) -> usize {
        self.losses.len()
    }

    pub fn dim(&self) -> usize {
        self.losses[0].dim()
    }

    pub fn kind(&self) -> LossKind {
        self.losses[0].kind()
    }

    /// Total loss of a fixed decision over all rounds.
    pub fn total_loss(&self, point: &DVector<f64>) -> Result<f64> {
        self.losses.iter().map(|l| l.eval(point)).sum()
    }

    /// Sum of per-round (sub)gradients at a fixed point.
    pub fn total_grad(&self, point: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(self.dim());
        for loss in &self.losses {
            g += loss.grad(point)?;
        }
        Ok(g)
    }

    /// Stacks a squared-error task into `(X, Y)`, one row per round.
    pub fn design(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if self.kind() != LossKind::SquaredError {
            return Err(Error::Unsupported("design matrix needs squared-error losses"));
        }
        let (n, d) = (self.n(), self.dim());
        let mut x = DMatrix::zeros(n, d);
        let mut y = DVector::zeros(n);
        for (i, loss) in self.losses.iter().enumerate() {
            if let LossInstance::SquaredError { x: xi, y: yi } = loss {
                x.row_mut(i).copy_from(&xi.transpose());
                y[i] = *yi;
            }
        }
        Ok((x, y))
    }

    /// Per-expert cumulative loss over the task.
    pub fn expert_totals(&self) -> Result<DVector<f64>> {
        let mut totals = DVector::zeros(self.dim());
        for loss in &self.losses {
            match loss {
                LossInstance::ExpertTable { values } => totals += values,
                _ => return Err(Error::Unsupported("expert totals need expert-table losses")),
            }
        }
        Ok(totals)
    }

    /// `max_{k,i} |l_{i}(expert k)|`.
    pub fn max_abs_expert_loss(&self) -> Result<f64> {
        let mut m: f64 = 0.0;
        for loss in &self.losses {
            match loss {
                LossInstance::ExpertTable { values } => {
                    m = values.iter().fold(m, |acc, v| acc.max(v.abs()));
                }
                _ => return Err(Error::Unsupported("max expert loss needs expert-table losses")),
            }
        }
        Ok(m)
    }
}
