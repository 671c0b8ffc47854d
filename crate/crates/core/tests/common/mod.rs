#![allow(dead_code)]

use metabound::loss::{LossInstance, Task};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sphere(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
}

/// Squared losses around a random parameter of norm below `scale`.
pub fn quadratic_task(rng: &mut ChaCha8Rng, d: usize, n: usize, scale: f64) -> Task {
    let theta = sphere(rng, d) * rng.random_range(0.0..scale);
    let losses = (0..n)
        .map(|_| {
            let x = sphere(rng, d);
            let y = x.dot(&theta) + rng.random_range(-0.5..0.5);
            LossInstance::squared(x, y).unwrap()
        })
        .collect();
    Task::new(0, losses, Some(theta)).unwrap()
}

pub fn hinge_task(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Task {
    let losses = (0..n)
        .map(|_| {
            let x = sphere(rng, d);
            let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
            LossInstance::hinge(x, y).unwrap()
        })
        .collect();
    Task::new(0, losses, None).unwrap()
}

pub fn table_task(rng: &mut ChaCha8Rng, m: usize, n: usize, b: f64) -> Task {
    let losses = (0..n)
        .map(|_| {
            LossInstance::expert_table(DVector::from_fn(m, |_, _| rng.random_range(0.0..=b)))
                .unwrap()
        })
        .collect();
    Task::new(0, losses, None).unwrap()
}

pub fn table_from_rows(rows: &[Vec<f64>]) -> Task {
    let losses = rows
        .iter()
        .map(|r| LossInstance::expert_table(DVector::from_column_slice(r)).unwrap())
        .collect();
    Task::new(0, losses, None).unwrap()
}
