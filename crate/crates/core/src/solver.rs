//! Projected first- and second-order descent over products of simple sets.
//!
//! Used for the inner minimization of the meta-loss and for the proximal
//! meta-update. Iterates are always feasible; a non-finite objective or
//! iterate aborts with [`Error::Divergence`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::projection::{project_ball, project_simplex_floor};

pub trait Objective {
    fn value(&self, z: &DVector<f64>) -> f64;
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64>;
    /// Exact or generalized Hessian; `None` restricts the solver to gradient steps.
    fn hessian(&self, _z: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Ball { start: usize, len: usize, radius: f64 },
    Interval { index: usize, lo: f64, hi: f64 },
    FlooredSimplex { start: usize, len: usize, floor: f64 },
}

/// Product of blocks; coordinates outside every block are unconstrained.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProductSet {
    pub blocks: Vec<Block>,
}

impl ProductSet {
    pub fn new(blocks: Vec<Block>) -> Self {
        ProductSet { blocks }
    }

    pub fn project(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = z.clone();
        for block in &self.blocks {
            match *block {
                Block::Ball { start, len, radius } => {
                    let p = project_ball(&out.rows(start, len).into_owned(), radius);
                    out.rows_mut(start, len).copy_from(&p);
                }
                Block::Interval { index, lo, hi } => out[index] = out[index].clamp(lo, hi),
                Block::FlooredSimplex { start, len, floor } => {
                    let p = project_simplex_floor(&out.rows(start, len).into_owned(), floor)?;
                    out.rows_mut(start, len).copy_from(&p);
                }
            }
        }
        Ok(out)
    }

    /// Interval coordinates sitting at a bound with the gradient pushing out.
    fn active(&self, z: &DVector<f64>, g: &DVector<f64>, eps: f64) -> Vec<bool> {
        let mut active = vec![false; z.len()];
        for block in &self.blocks {
            if let Block::Interval { index, lo, hi } = *block {
                let i = index;
                active[i] = (z[i] <= lo + eps && g[i] > 0.0) || (z[i] >= hi - eps && g[i] < 0.0);
            }
        }
        active
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRule {
    FixedStep(f64),
    BacktrackingArmijo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerMethod {
    ProjectedGradient,
    ProjectedNewton,
}

/// Settings of the inner convex solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerSolverCfg {
    pub max_steps: usize,
    pub step_rule: StepRule,
    /// Stop once the projected-gradient mapping `|z - P(z - g)|` falls below this.
    pub tolerance: f64,
    pub method: InnerMethod,
}

impl InnerSolverCfg {
    pub fn newton(max_steps: usize) -> Self {
        InnerSolverCfg {
            max_steps,
            step_rule: StepRule::BacktrackingArmijo,
            tolerance: 1e-10,
            method: InnerMethod::ProjectedNewton,
        }
    }

    pub fn gradient(max_steps: usize) -> Self {
        InnerSolverCfg {
            max_steps,
            step_rule: StepRule::BacktrackingArmijo,
            tolerance: 1e-8,
            method: InnerMethod::ProjectedGradient,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 || !(self.tolerance > 0.0) {
            return Err(crate::error::contract("need max_steps >= 1 and tolerance > 0"));
        }
        if let StepRule::FixedStep(s) = self.step_rule {
            if !(s > 0.0 && s.is_finite()) {
                return Err(crate::error::contract("fixed step must be positive"));
            }
        }
        Ok(())
    }
}

impl Default for InnerSolverCfg {
    /// Ten projected-Newton steps.
    fn default() -> Self {
        InnerSolverCfg::newton(10)
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub point: DVector<f64>,
    pub value: f64,
    pub steps: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

fn finite(z: &DVector<f64>) -> bool {
    z.iter().all(|v| v.is_finite())
}

fn diverged(step: usize, iterate: DVector<f64>) -> Error {
    Error::Divergence { step, iterate }
}

/// Minimizes `f` over `set` starting from the projection of `start`.
pub fn minimize<F: Objective>(
    f: &F,
    set: &ProductSet,
    start: &DVector<f64>,
    cfg: &InnerSolverCfg,
) -> Result<SolveReport> {
    cfg.validate()?;
    let mut z = set.project(start)?;
    let mut fz = f.value(&z);
    if !fz.is_finite() || !finite(&z) {
        return Err(diverged(0, z));
    }
    let mut best = (z.clone(), fz);
    let mut trial_step = 1.0;

    for step in 1..=cfg.max_steps {
        let g = f.gradient(&z);
        if !finite(&g) {
            return Err(diverged(step, z));
        }
        let pg = set.project(&(&z - &g))?;
        let stationarity = (&z - &pg).norm();
        if stationarity <= cfg.tolerance {
            return Ok(SolveReport {
                point: best.0,
                value: best.1,
                steps: step - 1,
                converged: true,
            });
        }

        let newton = match cfg.method {
            InnerMethod::ProjectedNewton => {
                newton_step(f, set, &z, fz, &g, stationarity.min(1e-8))?
            }
            InnerMethod::ProjectedGradient => None,
        };
        let next = match newton {
            Some(next) => Some(next),
            None => match cfg.step_rule {
                StepRule::FixedStep(s) => {
                    let zn = set.project(&(&z - &g * s))?;
                    let fzn = f.value(&zn);
                    Some((zn, fzn))
                }
                StepRule::BacktrackingArmijo => {
                    let res = gradient_step(f, set, &z, fz, &g, trial_step)?;
                    res.map(|(zn, fzn, t)| {
                        trial_step = 2.0 * t;
                        (zn, fzn)
                    })
                }
            },
        };
        let Some((zn, fzn)) = next else {
            // no descent available at working precision
            return Ok(SolveReport {
                point: best.0,
                value: best.1,
                steps: step,
                converged: false,
            });
        };
        if !fzn.is_finite() || !finite(&zn) {
            return Err(diverged(step, zn));
        }
        z = zn;
        fz = fzn;
        if fz < best.1 {
            best = (z.clone(), fz);
        }
    }
    Ok(SolveReport {
        point: best.0,
        value: best.1,
        steps: cfg.max_steps,
        converged: false,
    })
}

/// Projected-gradient step with sufficient-decrease backtracking.
fn gradient_step<F: Objective>(
    f: &F,
    set: &ProductSet,
    z: &DVector<f64>,
    fz: f64,
    g: &DVector<f64>,
    t0: f64,
) -> Result<Option<(DVector<f64>, f64, f64)>> {
    let mut t = t0;
    for _ in 0..MAX_HALVINGS {
        let zn = set.project(&(z - g * t))?;
        let fzn = f.value(&zn);
        let moved = (&zn - z).norm_squared();
        if moved == 0.0 {
            return Ok(None);
        }
        if fzn.is_finite() && fzn <= fz - 0.5 * moved / t {
            return Ok(Some((zn, fzn, t)));
        }
        t *= 0.5;
    }
    Ok(None)
}

/// Newton direction on the free coordinates, projected arc search.
/// Returns `None` when the Hessian is unavailable or the step fails to descend.
fn newton_step<F: Objective>(
    f: &F,
    set: &ProductSet,
    z: &DVector<f64>,
    fz: f64,
    g: &DVector<f64>,
    eps: f64,
) -> Result<Option<(DVector<f64>, f64)>> {
    let Some(h) = f.hessian(z) else {
        return Ok(None);
    };
    let active = set.active(z, g, eps);
    let free: Vec<usize> = (0..z.len()).filter(|i| !active[*i]).collect();
    if free.is_empty() {
        return Ok(None);
    }
    let k = free.len();
    let hff = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
    let gf = DVector::from_fn(k, |a, _| g[free[a]]);
    let Some(df) = solve_spd(hff, &gf) else {
        return Ok(None);
    };
    let mut dir = DVector::zeros(z.len());
    for (a, &i) in free.iter().enumerate() {
        dir[i] = -df[a];
    }

    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        let zn = set.project(&(z + &dir * t))?;
        let decrease = g.dot(&(&zn - z));
        if decrease >= 0.0 {
            if (&zn - z).norm() == 0.0 {
                return Ok(None);
            }
            t *= 0.5;
            continue;
        }
        let fzn = f.value(&zn);
        if fzn.is_finite() && fzn <= fz + ARMIJO * decrease {
            return Ok(Some((zn, fzn)));
        }
        t *= 0.5;
    }
    Ok(None)
}

/// Solves `H d = g` for symmetric positive (semi)definite `H`, adding a small
/// ridge when the plain factorization fails.
fn solve_spd(h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Some(ch.solve(g));
    }
    let scale = h.diagonal().abs().max().max(1.0);
    let mut mu = 1e-12 * scale;
    for _ in 0..12 {
        let shifted = &h + DMatrix::identity(h.nrows(), h.ncols()) * mu;
        if let Some(ch) = shifted.cholesky() {
            return Some(ch.solve(g));
        }
        mu *= 100.0;
    }
    None
}
