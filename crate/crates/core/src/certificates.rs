//! Randomized invariant checks behind the `verify` subcommand.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::generators::unit_sphere;
use crate::loss::{LossInstance, Task};
use crate::meta_loss::{meta_loss_ewa_eta, meta_loss_oga, ridge_estimator, InnerSolverCfg};
use crate::meta_strategy::{oga_prox_objective, ogms_step, opms_step, MetaState};
use crate::params::{Bounds, OgaParam, ParamSet, TuningParam};
use crate::projection::{project_ball, project_simplex_floor};
use crate::within_task::{run_ewa, run_oga};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, trials: usize, run: impl FnOnce() -> Result<usize>) -> Check {
    match run() {
        Ok(0) => Check { name, passed: true, detail: format!("{trials} trials") },
        Ok(bad) => Check { name, passed: false, detail: format!("{bad} of {trials} trials violated") },
        Err(e) => Check { name, passed: false, detail: format!("error: {e}") },
    }
}

fn random_quadratic(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Result<Task> {
    let theta = unit_sphere(rng, d) * rng.random_range(0.0..3.0);
    let losses = (0..n)
        .map(|_| {
            let x = unit_sphere(rng, d);
            let y = x.dot(&theta) + rng.random_range(-0.5..0.5);
            LossInstance::squared(x, y)
        })
        .collect::<Result<Vec<_>>>()?;
    Task::new(0, losses, Some(theta))
}

fn random_table(rng: &mut ChaCha8Rng, m: usize, n: usize, b: f64) -> Result<Task> {
    let losses = (0..n)
        .map(|_| LossInstance::expert_table(DVector::from_fn(m, |_, _| rng.random_range(0.0..=b))))
        .collect::<Result<Vec<_>>>()?;
    Task::new(0, losses, None)
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
}

/// Runs every check with generators derived from `seed`.
pub fn verify_all(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trials = 100;
    let newton = InnerSolverCfg::newton(20);
    vec![
        check("loss convexity", trials, || {
            let mut bad = 0;
            for k in 0..trials {
                let d = rng.random_range(1..5);
                let x = random_vec(&mut rng, d, 2.0);
                let y = rng.random_range(-2.0..2.0);
                let loss = if k % 2 == 0 {
                    LossInstance::squared(x, y)?
                } else {
                    LossInstance::hinge(x, y.signum())?
                };
                let (a, b) = (random_vec(&mut rng, d, 3.0), random_vec(&mut rng, d, 3.0));
                let t: f64 = rng.random();
                let mid = loss.eval(&(&a * t + &b * (1.0 - t)))?;
                let chord = t * loss.eval(&a)? + (1.0 - t) * loss.eval(&b)?;
                bad += usize::from(mid > chord + 1e-9 * (1.0 + chord.abs()));
            }
            Ok(bad)
        }),
        check("projection feasibility and idempotence", trials, || {
            let mut bad = 0;
            for _ in 0..trials {
                let m = rng.random_range(1..8);
                let floor = rng.random_range(0.0..1.0) / m as f64;
                let v = random_vec(&mut rng, m, 4.0);
                let p = project_simplex_floor(&v, floor)?;
                let q = project_simplex_floor(&p, floor)?;
                let ok = (p.sum() - 1.0).abs() <= 1e-10
                    && p.iter().all(|x| *x >= floor - 1e-10)
                    && (q - &p).norm() <= 1e-12;
                let b = project_ball(&v, 1.5);
                bad += usize::from(!ok || b.norm() > 1.5 + 1e-12);
            }
            Ok(bad)
        }),
        check("OGA regret bound", trials, || {
            let mut bad = 0;
            for _ in 0..trials {
                let (d, n) = (rng.random_range(1..6), rng.random_range(1..21));
                let task = random_quadratic(&mut rng, d, n)?;
                let gamma = rng.random_range(0.01..1.0);
                let start = random_vec(&mut rng, d, 1.0);
                let bounds = Bounds::new(n, 1.0, 10.0, 1.0, 2.0)?;
                let trace = run_oga(&task, &OgaParam::new(start.clone(), gamma), &bounds)?;
                let big_gamma = trace
                    .decisions
                    .iter()
                    .zip(task.losses())
                    .map(|(th, l)| l.grad(th).map(|g| g.norm()))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .fold(0.0, f64::max);
                let (x, y) = task.design()?;
                for comparator in [ridge_estimator(&x, &y, gamma, &start)?, task.true_param().unwrap().clone()] {
                    let rhs = task.total_loss(&comparator)?
                        + gamma * big_gamma * big_gamma * n as f64 / 2.0
                        + (&comparator - &start).norm_squared() / (2.0 * gamma);
                    bad += usize::from(trace.cumulative_loss > rhs + 1e-9);
                }
            }
            Ok(bad)
        }),
        check("EWA regret bound", trials, || {
            let mut bad = 0;
            for _ in 0..trials {
                let (m, n) = (rng.random_range(2..8), rng.random_range(1..21));
                let b = rng.random_range(0.5..2.0);
                let task = random_table(&mut rng, m, n, b)?;
                let eta = rng.random_range(0.05..2.0);
                let uniform = DVector::from_element(m, 1.0 / m as f64);
                let trace = run_ewa(&task, eta, &uniform, None)?;
                let best = task.expert_totals()?.min();
                let rhs = best + eta * n as f64 * b * b / 8.0 + (m as f64).ln() / eta;
                bad += usize::from(trace.cumulative_loss > rhs + 1e-9);
            }
            Ok(bad)
        }),
        check("OGA meta-loss convexity", trials, || {
            let mut bad = 0;
            for _ in 0..trials {
                let d = rng.random_range(1..4);
                let task = random_quadratic(&mut rng, d, 8)?;
                let bounds = Bounds::new(8, 1.0, 10.0, 2.0, 1.0)?;
                let pa = OgaParam::new(random_vec(&mut rng, d, 2.0), rng.random_range(0.15..1.0));
                let pb = OgaParam::new(random_vec(&mut rng, d, 2.0), rng.random_range(0.15..1.0));
                let t: f64 = rng.random();
                let pm = OgaParam::new(&pa.theta0 * t + &pb.theta0 * (1.0 - t), t * pa.gamma + (1.0 - t) * pb.gamma);
                let f = |p: &OgaParam| meta_loss_oga(&task, p, &bounds, &newton).map(|r| r.value);
                let (fa, fb, fm) = (f(&pa)?, f(&pb)?, f(&pm)?);
                bad += usize::from(fm > t * fa + (1.0 - t) * fb + 1e-8 * (1.0 + fa.abs() + fb.abs()));
            }
            Ok(bad)
        }),
        check("EWA-rate meta-loss convexity", trials, || {
            let mut bad = 0;
            for _ in 0..trials {
                let n = rng.random_range(2..20);
                let task = random_table(&mut rng, 5, n, 1.0)?;
                let lo = 1.0 / n as f64;
                let (a, b) = (rng.random_range(lo..1.0), rng.random_range(lo..1.0));
                let t: f64 = rng.random();
                let f = |e: f64| meta_loss_ewa_eta(&task, e, 5.0).map(|r| r.value);
                let (fa, fb, fm) = (f(a)?, f(b)?, f(t * a + (1.0 - t) * b)?);
                bad += usize::from(fm > t * fa + (1.0 - t) * fb + 1e-9 * (1.0 + fa.abs()));
            }
            Ok(bad)
        }),
        check("envelope gradient", trials, || {
            let mut bad = 0;
            let h = 1e-6;
            for _ in 0..trials {
                let d = rng.random_range(1..4);
                let task = random_quadratic(&mut rng, d, 6)?;
                let bounds = Bounds::new(6, 1.0, 10.0, 1.0, 1.0)?;
                let p = OgaParam::new(random_vec(&mut rng, d, 1.0), rng.random_range(0.3..0.9));
                let res = meta_loss_oga(&task, &p, &bounds, &newton)?;
                let Some(g) = res.gradient else {
                    bad += 1;
                    continue;
                };
                let lam = TuningParam::Oga(p.clone());
                let v = lam.to_vector();
                for j in 0..v.len() {
                    let mut e = DVector::zeros(v.len());
                    e[j] = h;
                    let up = lam.with_vector(&(&v + &e))?;
                    let dn = lam.with_vector(&(&v - &e))?;
                    let fd = (meta_loss_oga(&task, up.as_oga().unwrap(), &bounds, &newton)?.value
                        - meta_loss_oga(&task, dn.as_oga().unwrap(), &bounds, &newton)?.value)
                        / (2.0 * h);
                    bad += usize::from((fd - g[j]).abs() > 1e-4 * (1.0 + fd.abs()));
                }
            }
            Ok(bad)
        }),
        check("meta-step feasibility and prox descent", trials, || {
            let mut bad = 0;
            for _ in 0..trials {
                let d = rng.random_range(1..4);
                let task = random_quadratic(&mut rng, d, 10)?;
                let bounds = Bounds::new(10, 1.0, 3.0, 1.5, 1.0)?;
                let set = bounds.oga_set();
                let prev = OgaParam::new(project_ball(&random_vec(&mut rng, d, 2.0), 3.0), rng.random_range(0.1..1.0));
                let alpha = rng.random_range(0.01..2.0);
                let state = MetaState::new(TuningParam::Oga(prev.clone()), alpha)?;

                let g = random_vec(&mut rng, d + 1, 5.0);
                let stepped = ogms_step(&state, &g, &set)?;
                bad += usize::from(!set.contains(&stepped.lambda, 1e-10));

                let next = opms_step(&state, &task, &bounds, &newton)?;
                bad += usize::from(!set.contains(&next.lambda, 1e-10));
                let new = next.lambda.as_oga().unwrap();
                let inner = meta_loss_oga(&task, new, &bounds, &newton)?;
                let theta_new = inner.point().unwrap().clone();
                let start_theta = meta_loss_oga(&task, &prev, &bounds, &newton)?.point().unwrap().clone();
                let after = oga_prox_objective(&task, &prev, &theta_new, new, bounds.lipschitz, alpha)?;
                let before = oga_prox_objective(&task, &prev, &start_theta, &prev, bounds.lipschitz, alpha)?;
                bad += usize::from(after > before + 1e-9 * (1.0 + before.abs()));
            }
            Ok(bad)
        }),
        check("prior meta-step feasibility", trials, || {
            let mut bad = 0;
            for _ in 0..trials {
                let m = rng.random_range(2..8);
                let task = random_table(&mut rng, m, 5, 1.0)?;
                let bounds = Bounds::new(5, 1.0, 1.0, 1.0, 2.0)?;
                let state = MetaState::prior_default(m, rng.random_range(0.001..1.0))?;
                let next = opms_step(&state, &task, &bounds, &InnerSolverCfg::gradient(50))?;
                bad += usize::from(!ParamSet::prior_simplex(m).contains(&next.lambda, 1e-10));
            }
            Ok(bad)
        }),
    ]
}
