//! Seeded synthetic task streams.
//!
//! Every draw comes from a ChaCha8 generator seeded with the stream seed and
//! switched to a substream keyed by `(t, i)`, so any task can be produced on its
//! own and in any order.

use std::collections::BTreeSet;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, contract, Result};
use crate::loss::{LossInstance, Task};

#[derive(Clone, Debug, PartialEq)]
pub struct StreamCfg {
    pub d: usize,
    pub n: usize,
    pub tasks: usize,
    pub r: f64,
    /// Noise half-width.
    pub sigma2: f64,
    pub theta0: DVector<f64>,
    pub flip_frac: f64,
    pub seed: u64,
}

impl StreamCfg {
    /// d = 20, n = 30, T = 200, noise half-width 0.5, common bias 5 * 1.
    pub fn regression(r: f64, seed: u64) -> Self {
        StreamCfg {
            d: 20,
            n: 30,
            tasks: 200,
            r,
            sigma2: 0.5,
            theta0: DVector::from_element(20, 5.0),
            flip_frac: 0.0,
            seed,
        }
    }

    /// d = 10, n = 100, T = 500, r = 2, 10% flipped labels, common bias 5 * 1.
    pub fn classification(seed: u64) -> Self {
        StreamCfg {
            d: 10,
            n: 100,
            tasks: 500,
            r: 2.0,
            sigma2: 0.0,
            theta0: DVector::from_element(10, 5.0),
            flip_frac: 0.1,
            seed,
        }
    }

    /// Same draws, different bias: keeps `theta0` consistent with `d`.
    pub fn with_dim(mut self, d: usize) -> Self {
        let fill = self.theta0.get(0).copied().unwrap_or(0.0);
        self.d = d;
        self.theta0 = DVector::from_element(d, fill);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 || self.tasks == 0 {
            return Err(contract("d, n and T must be at least 1"));
        }
        check_dim(self.d, self.theta0.len())?;
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(contract("r must be finite and nonnegative"));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(contract("noise half-width must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.flip_frac) {
            return Err(contract("flip fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Generator for draw `i` of task `t`; `i = None` is the task-level substream.
pub fn substream(seed: u64, t: usize, i: Option<usize>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let low = i.map_or(0, |i| i as u64 + 1);
    rng.set_stream(((t as u64) << 32) | low);
    rng
}

/// Uniform point on the unit sphere of dimension `d - 1`.
pub fn unit_sphere<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 0.0 {
            return g / norm;
        }
    }
}

fn true_param(cfg: &StreamCfg, rng: &mut ChaCha8Rng) -> DVector<f64> {
    unit_sphere(rng, cfg.d) * cfg.r + &cfg.theta0
}

/// Task `t` of the regression stream: `y = x' theta_t + eps`, `x` uniform on the
/// sphere, `eps` uniform on `[-sigma2, sigma2]`, `theta_t = r u + theta0`.
pub fn regression_task(cfg: &StreamCfg, t: usize) -> Result<Task> {
    let mut task_rng = substream(cfg.seed, t, None);
    let theta = true_param(cfg, &mut task_rng);
    let losses = (0..cfg.n)
        .map(|i| {
            let mut rng = substream(cfg.seed, t, Some(i));
            let x = unit_sphere(&mut rng, cfg.d);
            let eps = if cfg.sigma2 > 0.0 {
                rng.random_range(-cfg.sigma2..=cfg.sigma2)
            } else {
                0.0
            };
            let y = x.dot(&theta) + eps;
            LossInstance::squared(x, y)
        })
        .collect::<Result<Vec<_>>>()?;
    Task::new(t, losses, Some(theta))
}

pub fn gen_regression_stream(cfg: &StreamCfg) -> Result<Vec<Task>> {
    cfg.validate()?;
    (0..cfg.tasks).map(|t| regression_task(cfg, t)).collect()
}

/// Task `t` of the classification stream: logistic labels, then a uniformly
/// chosen `floor(flip_frac * n)` subset of them negated.
pub fn classification_task(cfg: &StreamCfg, t: usize) -> Result<Task> {
    let mut task_rng = substream(cfg.seed, t, None);
    let theta = true_param(cfg, &mut task_rng);
    let flips = (cfg.flip_frac * cfg.n as f64).floor() as usize;
    let flipped: BTreeSet<usize> = sample(&mut task_rng, cfg.n, flips).into_iter().collect();
    let losses = (0..cfg.n)
        .map(|i| {
            let mut rng = substream(cfg.seed, t, Some(i));
            let x = unit_sphere(&mut rng, cfg.d);
            let p = 1.0 / (1.0 + (-x.dot(&theta)).exp());
            let mut y = if rng.random::<f64>() < p { 1.0 } else { -1.0 };
            if flipped.contains(&i) {
                y = -y;
            }
            LossInstance::hinge(x, y)
        })
        .collect::<Result<Vec<_>>>()?;
    Task::new(t, losses, Some(theta))
}

pub fn gen_classification_stream(cfg: &StreamCfg) -> Result<Vec<Task>> {
    cfg.validate()?;
    (0..cfg.tasks).map(|t| classification_task(cfg, t)).collect()
}

/// Expert-table stream where each task's best expert is drawn from `support`.
/// It gets losses uniform on `[0, B/4]`; every other expert gets `[B/2, B]`.
pub fn gen_expert_stream(
    m: usize,
    n: usize,
    tasks: usize,
    support: &[usize],
    loss_range: f64,
    seed: u64,
) -> Result<Vec<Task>> {
    if support.is_empty() {
        return Err(contract("expert support must be non-empty"));
    }
    if let Some(bad) = support.iter().find(|k| **k >= m) {
        return Err(contract(format!("support index {bad} out of range for M = {m}")));
    }
    if !(loss_range > 0.0 && loss_range.is_finite()) {
        return Err(contract("loss range must be positive"));
    }
    if n == 0 || tasks == 0 {
        return Err(contract("n and T must be at least 1"));
    }
    let b = loss_range;
    (0..tasks)
        .map(|t| {
            let mut task_rng = substream(seed, t, None);
            let best = support[task_rng.random_range(0..support.len())];
            let losses = (0..n)
                .map(|i| {
                    let mut rng = substream(seed, t, Some(i));
                    let values = DVector::from_fn(m, |k, _| {
                        if k == best {
                            rng.random_range(0.0..=b / 4.0)
                        } else {
                            rng.random_range(b / 2.0..=b)
                        }
                    });
                    LossInstance::expert_table(values)
                })
                .collect::<Result<Vec<_>>>()?;
            Task::new(t, losses, None)
        })
        .collect()
}

/// Gradient bound for squared losses with `|x| <= b`, `|y| <= c` on the
/// C-ball: `2 b c + 2 b^2 C`.
pub fn squared_loss_lipschitz(b: f64, c: f64, radius: f64) -> f64 {
    2.0 * b * c + 2.0 * b * b * radius
}

/// Largest `|y|` over a regression stream.
pub fn max_abs_label(tasks: &[Task]) -> f64 {
    tasks
        .iter()
        .flat_map(|t| t.losses())
        .filter_map(|l| match l {
            LossInstance::SquaredError { y, .. } | LossInstance::Hinge { y, .. } => Some(y.abs()),
            LossInstance::ExpertTable { .. } => None,
        })
        .fold(0.0, f64::max)
}
