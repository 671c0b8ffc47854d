//! Euclidean projections onto the decision ball, step-size intervals and the
//! floored probability simplex.

use nalgebra::DVector;

use crate::error::{contract, Error, Result};
use crate::params::{Bounds, OgaParam};

/// Projection onto `{v : |v| <= radius}`.
pub fn project_ball(v: &DVector<f64>, radius: f64) -> DVector<f64> {
    debug_assert!(radius > 0.0);
    let norm = v.norm();
    if norm <= radius {
        v.clone()
    } else {
        v.map(|x| x * radius / norm)
    }
}

pub fn project_interval(x: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo <= hi) {
        return Err(contract(format!("empty interval [{lo}, {hi}]")));
    }
    Ok(x.max(lo).min(hi))
}

/// Projection onto `{x : sum x = 1, x_h >= floor}`.
///
/// Shifts by `floor`, projects onto the simplex of mass `1 - M floor` by the
/// sort-and-threshold rule, and shifts back.
pub fn project_simplex_floor(v: &DVector<f64>, floor: f64) -> Result<DVector<f64>> {
    let m = v.len();
    if m == 0 {
        return Err(Error::Infeasible("empty vector".into()));
    }
    if !(floor >= 0.0) || !v.iter().all(|x| x.is_finite()) {
        return Err(contract("floored-simplex projection needs finite input and floor >= 0"));
    }
    let mass = 1.0 - m as f64 * floor;
    if mass < -1e-12 {
        return Err(Error::Infeasible(format!(
            "M * floor = {} exceeds 1",
            m as f64 * floor
        )));
    }
    let mass = mass.max(0.0);
    let shifted = v.add_scalar(-floor);
    Ok(project_simplex_mass(&shifted, mass).add_scalar(floor))
}

/// Projection onto `{x >= 0 : sum x = mass}`.
fn project_simplex_mass(w: &DVector<f64>, mass: f64) -> DVector<f64> {
    if mass == 0.0 {
        return DVector::zeros(w.len());
    }
    let mut u: Vec<f64> = w.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cumsum += uj;
        let candidate = (cumsum - mass) / (j + 1) as f64;
        if uj - candidate > 0.0 {
            tau = candidate;
        }
    }
    w.map(|x| (x - tau).max(0.0))
}

/// Blockwise projection onto `{|theta0| <= C} x [gamma_lo, gamma_hi]`.
pub fn project_oga_param(lambda: &OgaParam, bounds: &Bounds) -> OgaParam {
    OgaParam::new(
        project_ball(&lambda.theta0, bounds.radius),
        lambda.gamma.clamp(bounds.gamma_lo, bounds.gamma_hi),
    )
}
