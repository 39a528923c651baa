//! Time interpolations, velocities, momenta and action.
//!
//! Between iterates `ρₖ` and `ρₖ₊₁` two interpolations are used: the geodesic
//! (McCann) one and the piecewise-constant one that holds `ρₖ₊₁` on
//! `[kτ, (k+1)τ)`. Velocities come from the step's Kantorovich potential,
//! `v = (x − T(x))/τ` with `T` the optimal map from `ρₖ₊₁` back to `ρₖ`.

use alloc::vec::Vec;

use crate::energy::ModelParams;
use crate::error::{Error, Result};
use crate::jko::{pressure_velocity, JkoStepResult, Trajectory};
use crate::math::{cos, pos, powf, sin, sqrt};
use crate::measure::{
    check_masses, pushforward_pieces, w2_squared_quantiles, DensityField, DensityPair, Grid, KantorovichPotential, Quantile,
    TransportMap1D,
};

/// Per-cell velocity; `None` on vacuum cells, where it is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    grid: Grid,
    values: Vec<Option<f64>>,
}

impl VelocityField {
    pub fn new(grid: Grid, values: Vec<Option<f64>>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::GridMismatch);
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDensity("velocity must be finite on the support".into()));
        }
        Ok(VelocityField { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn value(&self, k: usize) -> Option<f64> {
        self.values[k]
    }

    /// Largest `|v|` over the cells where it is defined.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Momentum density `E = ρ v`, zero on vacuum.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumField {
    grid: Grid,
    values: Vec<f64>,
}

impl MomentumField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Geodesic between `from` and `to` at fraction `t`: the pushforward of `from`
/// by `(1 − t)·id + t·T`, deposited onto the grid.
pub fn mccann_interpolate(from: &DensityField, to: &DensityField, t: f64) -> Result<DensityField> {
    if from.grid() != to.grid() {
        return Err(Error::GridMismatch);
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange(alloc::format!("interpolation fraction {t} outside [0, 1]")));
    }
    check_masses(from.mass(), to.mass())?;
    let qa = Quantile::of(from)?;
    let qb = Quantile::of(to)?.rescaled(qa.mass);
    let map = TransportMap1D::interpolate(&qa, &qb, t);
    Ok(pushforward_pieces(from.grid(), &map.pieces, 1.0))
}

/// `W₂(μ_s, μ_t)` between two points of the geodesic from `from` to `to`,
/// taken on the interpolated measures themselves rather than their grid
/// deposits (which adds an O(h²) projection error).
pub fn geodesic_w2(from: &DensityField, to: &DensityField, s: f64, t: f64) -> Result<f64> {
    if from.grid() != to.grid() {
        return Err(Error::GridMismatch);
    }
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange(alloc::format!("geodesic times {s}, {t} outside [0, 1]")));
    }
    check_masses(from.mass(), to.mass())?;
    let qa = Quantile::of(from)?;
    let qb = Quantile::of(to)?.rescaled(qa.mass);
    let at = |t| Quantile { mass: qa.mass, pieces: TransportMap1D::interpolate(&qa, &qb, t).pieces };
    Ok(sqrt(pos(w2_squared_quantiles(&at(s), &at(t)))))
}

/// `ρ̃(t) = ρₖ₊₁` for `t ∈ (kτ, (k+1)τ]` and `ρ̃(0) = ρ₀`, so the
/// interpolation agrees with the iterates at every node.
pub fn piecewise_constant_sample(traj: &Trajectory, t: f64) -> Result<&DensityPair> {
    let n = traj.n_steps();
    let horizon = traj.time(n);
    let slack = 1e-12 * horizon.max(1.0);
    if !(t >= -slack && t <= horizon + slack) {
        return Err(Error::OutOfRange(alloc::format!("time {t} outside [0, {horizon}]")));
    }
    let x = t.max(0.0) / traj.tau();
    // times within rounding of a node are that node
    let node = crate::math::round(x);
    let k = if (x - node).abs() <= 1e-9 * node.max(1.0) { node } else { crate::math::ceil(x) };
    Ok(&traj.pairs[(k as usize).min(n)])
}

fn velocity_from_potential(
    phi: &KantorovichPotential,
    rho: &DensityField,
    tau: f64,
    eps: f64,
) -> Result<VelocityField> {
    let values = phi
        .mean_displacement()
        .into_iter()
        .zip(rho.values())
        .map(|(d, &r)| if r > eps { Some(d / tau) } else { None })
        .collect();
    VelocityField::new(*rho.grid(), values)
}

/// Velocity of species `i` over one step, from its Kantorovich potential:
/// `v = ∂ₓφ/τ = (x − T(x))/τ` averaged per cell on `{ρⁱ > eps}`.
pub fn velocity_field(step: &JkoStepResult, species: usize, eps: f64) -> Result<VelocityField> {
    let rho = step.pair.species(species);
    match &step.potentials[species] {
        Some(phi) => velocity_from_potential(phi, rho, step.tau(), eps),
        None => VelocityField::new(*rho.grid(), alloc::vec![None; rho.grid().n_cells()]),
    }
}

/// Velocity of species `i` over step `k` of a trajectory.
pub fn trajectory_velocity(traj: &Trajectory, k: usize, species: usize, eps: f64) -> Result<VelocityField> {
    if k >= traj.n_steps() {
        return Err(Error::OutOfRange(alloc::format!("step {k} of {}", traj.n_steps())));
    }
    let rho = traj.pairs[k + 1].species(species);
    match &traj.potentials[k][species] {
        Some(phi) => velocity_from_potential(phi, rho, traj.tau(), eps),
        None => VelocityField::new(*rho.grid(), alloc::vec![None; rho.grid().n_cells()]),
    }
}

/// Largest gap on the support between the transport velocity and the
/// pressure-law velocity `−κᵢ∂ₓp − ∂ₓΦᵢ` built from the step's pressure.
/// Cells at the support edge use one-sided differences, so the gap there is
/// O(h) in general.
pub fn velocity_consistency(step: &JkoStepResult, params: &ModelParams, species: usize, eps: f64) -> Result<f64> {
    let v = velocity_field(step, species, eps)?;
    let rhs = pressure_velocity(&step.pair, step.pressure.values(), params, species, eps);
    let mut worst: f64 = 0.0;
    for (a, b) in v.values().iter().zip(&rhs) {
        if let (Some(a), Some(b)) = (a, b) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

pub fn momentum(rho: &DensityField, v: &VelocityField) -> Result<MomentumField> {
    if rho.grid() != v.grid() {
        return Err(Error::GridMismatch);
    }
    let values = rho
        .values()
        .iter()
        .zip(v.values())
        .map(|(r, v)| match v {
            Some(v) if *r > 0.0 => r * v,
            _ => 0.0,
        })
        .collect();
    Ok(MomentumField { grid: *rho.grid(), values })
}

/// `∫∫|v|² dρ dt` over `[t0, t1]` with the piecewise-constant interpolation:
/// step `k` contributes `h Σ |vₖ|² ρₖ₊₁` times its overlap with the window.
pub fn bb_action(traj: &Trajectory, t0: f64, t1: f64, eps: f64) -> Result<f64> {
    let horizon = traj.time(traj.n_steps());
    if !(t0 < t1) || t0 < 0.0 || t1 > horizon * (1.0 + 1e-12) {
        return Err(Error::OutOfRange(alloc::format!(
            "action window [{t0}, {t1}] not inside [0, {horizon}]"
        )));
    }
    let tau = traj.tau();
    let h = traj.grid().h();
    let mut total = 0.0;
    for k in 0..traj.n_steps() {
        let a = traj.time(k).max(t0);
        let b = traj.time(k + 1).min(t1);
        if b <= a {
            continue;
        }
        let mut rate = 0.0;
        for i in 0..2 {
            let v = trajectory_velocity(traj, k, i, eps)?;
            let rho = traj.pairs[k + 1].species(i).values();
            for (r, v) in rho.iter().zip(v.values()) {
                if let Some(v) = v {
                    rate += h * r * v * v;
                }
            }
        }
        total += rate * (b - a).min(tau);
    }
    Ok(total)
}

/// Smooth test function `x̂^degree · cos(mode·π·x̂)` with `x̂` the position
/// rescaled to `[0, 1]`; modes > 0 give `ψ' = 0` at both walls only when
/// `degree = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestFunction {
    pub degree: u32,
    pub mode: u32,
}

impl TestFunction {
    pub const CONSTANT: TestFunction = TestFunction { degree: 0, mode: 0 };

    /// `(ψ(x), ψ'(x))` on `grid`'s interval.
    pub fn eval(&self, grid: &Grid, x: f64) -> (f64, f64) {
        let l = grid.length();
        let y = (x - grid.left()) / l;
        let w = self.mode as f64 * core::f64::consts::PI;
        let (c, s) = (cos(w * y), sin(w * y));
        let d = self.degree as f64;
        let p = powf(y, d);
        let dp = if self.degree == 0 { 0.0 } else { d * powf(y, d - 1.0) };
        (p * c, (dp * c - p * w * s) / l)
    }

    /// Values and derivatives at the cell centers.
    pub fn sample(&self, grid: &Grid) -> (Vec<f64>, Vec<f64>) {
        grid.centers().into_iter().map(|x| self.eval(grid, x)).unzip()
    }
}

/// Discrete continuity equation for step `k`:
/// `|h Σ (ρₖ₊₁ − ρₖ) ψ / τ − h Σ Eₖ₊₁ ∂ₓψ|`, centers used for `ψ`.
pub fn continuity_residual(traj: &Trajectory, k: usize, species: usize, test: TestFunction, eps: f64) -> Result<f64> {
    let grid = traj.grid();
    let h = grid.h();
    let (psi, dpsi) = test.sample(grid);
    let before = traj.pairs[k].species(species).values();
    let after = traj.pairs[k + 1].species(species);
    let e = momentum(after, &trajectory_velocity(traj, k, species, eps)?)?;
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for j in 0..grid.n_cells() {
        lhs += h * (after.values()[j] - before[j]) * psi[j] / traj.tau();
        rhs += h * e.values()[j] * dpsi[j];
    }
    Ok((lhs - rhs).abs())
}

/// Total-momentum identity for finite `m`: with `Eⁱ = ρⁱ vⁱ`,
/// `Σᵢ (Eⁱ + ρⁱ∂ₓΦᵢ)/κᵢ = −∂ₓ(ρ¹ + ρ²)^m` in distributions, tested against
/// `ψ` (integrated by parts on the pressure side, `ψ'` at the walls dropped
/// only when it vanishes there).
pub fn momentum_identity_residual(
    traj: &Trajectory,
    k: usize,
    test: TestFunction,
    eps: f64,
) -> Result<f64> {
    let m = traj.params.exponent.finite().ok_or_else(|| {
        Error::InvalidParams("the momentum identity needs finite m".into())
    })?;
    let grid = traj.grid();
    let h = grid.h();
    let (psi, dpsi) = test.sample(grid);
    let pair = &traj.pairs[k + 1];
    let mut acc = 0.0;
    for i in 0..2 {
        let rho = pair.species(i);
        let e = momentum(rho, &trajectory_velocity(traj, k, i, eps)?)?;
        let kappa = traj.params.kappa[i];
        let pot = &traj.params.potentials[i];
        for j in 0..grid.n_cells() {
            let slope = pot.slope(grid.center(j));
            acc += h * (e.values()[j] + rho.values()[j] * slope) * psi[j] / kappa;
        }
    }
    let total = pair.total();
    for j in 0..grid.n_cells() {
        acc -= h * powf(total[j], m) * dpsi[j];
    }
    // boundary terms of the integration by parts
    let (psi_l, _) = test.eval(grid, grid.left());
    let (psi_r, _) = test.eval(grid, grid.right());
    let n = grid.n_cells();
    acc += powf(total[n - 1], m) * psi_r - powf(total[0], m) * psi_l;
    Ok(acc.abs())
}
