//! The implicit step, its explicit counterpart, and trajectories.
//!
//! [`jko_step`] minimizes
//!
//! ```text
//!   J(ρ) = F_m(ρ¹ + ρ²) + Σᵢ ∫ Φᵢ/κᵢ dρⁱ + Σᵢ W₂²(ρⁱ, ρⁱ_prev) / (2τκᵢ)
//! ```
//!
//! over cell densities of fixed masses; [`jko_step_incompressible`] replaces
//! `F_m` by the constraint `ρ¹ + ρ² ≤ 1`. The default inner solver
//! ([`StepRule::Newton`]) works in cumulative-mass variables, where the exact
//! transport term is a sum of smooth per-cell terms, and runs a log-barrier
//! Newton method. [`StepRule::Mirror`] is the multiplicative first-order
//! alternative; it is much slower to reach tight residuals.
//!
//! First-order optimality is reported as the sup-norm residual of
//! `p = max(C₁ − Ψ₁, C₂ − Ψ₂, 0)` with `Ψᵢ = Φᵢ/κᵢ + φ̄ⁱ/(τκᵢ)`, where `φ̄ⁱ`
//! are the cell averages of the Kantorovich potential from `ρⁱ` to
//! `ρⁱ_prev` and `Cᵢ` the support means of `p + Ψᵢ`.

mod cell;
mod mirror;
mod newton;

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::energy::{energy_report, pressure_finite_m, EnergyReport, Exponent, ModelParams, FEAS_TOL};
use crate::error::{Error, Result};
use crate::measure::{
    kantorovich_potential, pushforward, w2_squared, DensityField, DensityPair, Grid,
    KantorovichPotential, PotentialField, Quantile, TransportMap1D, MASS_TOLERANCE,
};

/// Inner solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// Log-barrier Newton method in cumulative-mass variables.
    Newton,
    /// Multiplicative update `ρ ← ρ·exp(−η g)` with backtracking on `J`
    /// (initial `η = 1`, shrink `0.5`).
    Mirror,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Stopping threshold on the optimality residual.
    pub inner_tol: f64,
    /// Cap on inner iterations (Newton or mirror steps).
    pub max_inner: usize,
    pub step_rule: StepRule,
    /// `ε_supp`: densities at or below this count as vacuum.
    pub support_floor: f64,
    /// Initial barrier weight, its final value and the per-stage factor.
    pub mu_start: f64,
    pub mu_end: f64,
    pub mu_shrink: f64,
    /// Start each step from the explicit predictor instead of the previous
    /// iterate.
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            inner_tol: 1e-6,
            max_inner: 2000,
            step_rule: StepRule::Newton,
            support_floor: 1e-8,
            mu_start: 1e-4,
            mu_end: 1e-14,
            mu_shrink: 0.1,
            warm_start: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_tol > 0.0) {
            return Err(Error::InvalidParams(alloc::format!(
                "inner_tol must be positive, got {}",
                self.inner_tol
            )));
        }
        if self.max_inner < 1 {
            return Err(Error::InvalidParams("max_inner must be at least 1".into()));
        }
        if !(self.support_floor >= 0.0) {
            return Err(Error::InvalidParams("support_floor must be nonnegative".into()));
        }
        if !(self.mu_start > 0.0 && self.mu_end > 0.0 && self.mu_end <= self.mu_start) {
            return Err(Error::InvalidParams("need 0 < mu_end <= mu_start".into()));
        }
        if !(self.mu_shrink > 0.0 && self.mu_shrink < 1.0) {
            return Err(Error::InvalidParams("mu_shrink must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Output of one implicit step.
#[derive(Debug, Clone, PartialEq)]
pub struct JkoStepResult {
    pub pair: DensityPair,
    /// Potentials from `ρⁱ_{k+1}` to `ρⁱ_k`; `None` for an absent species.
    pub potentials: [Option<KantorovichPotential>; 2],
    /// `W₂²(ρⁱ_{k+1}, ρⁱ_k)`.
    pub w2_sq: [f64; 2],
    pub optimality_residual: f64,
    /// Fitted `Cᵢ`.
    pub constants: [Option<f64>; 2],
    /// Pressure law for finite `m`, recovered multiplier for `m = ∞`.
    pub pressure: PotentialField,
    pub inner_iterations: usize,
    /// Residual within `inner_tol`.
    pub converged: bool,
    /// The inner solver met its own stopping rule before the iteration cap.
    pub solver_finished: bool,
    /// `J` at the output and `F + G` at the previous iterate.
    pub objective: f64,
    pub objective_prev: f64,
    /// Final barrier weight of the inner solver (zero without barrier).
    barrier_mu: f64,
    tau: f64,
}

impl JkoStepResult {
    pub fn tau(&self) -> f64 {
        self.tau
    }
}

fn check_state(pair: &DensityPair, params: &ModelParams) -> Result<()> {
    params.check_domain(pair.grid())?;
    for i in 0..2 {
        let want = params.masses[i];
        let got = pair.species(i).mass();
        if (want - got).abs() > MASS_TOLERANCE * want.max(got) {
            return Err(Error::MassMismatch { left: got, right: want });
        }
    }
    if params.exponent.is_incompressible() {
        let max = pair.total().into_iter().fold(0.0, f64::max);
        if max > 1.0 + FEAS_TOL {
            return Err(Error::Infeasible(alloc::format!(
                "max(ρ¹ + ρ²) = {max} exceeds 1"
            )));
        }
    }
    Ok(())
}

/// `J` at `pair` for the step starting from `prev` (infinite if infeasible).
pub fn step_objective(pair: &DensityPair, prev: &DensityPair, params: &ModelParams) -> Result<f64> {
    let e = energy_report(pair, params);
    let mut j = e.total;
    for i in 0..2 {
        if params.species_present(i) {
            let w = w2_squared(pair.species(i), prev.species(i))?;
            j += w / (2.0 * params.tau * params.kappa[i]);
        }
    }
    Ok(j)
}

/// `Ψᵢ = Φᵢ/κᵢ + φ̄ⁱ/(τκᵢ)` per cell.
fn psi(params: &ModelParams, grid: &Grid, i: usize, phi: &KantorovichPotential) -> Vec<f64> {
    let c = 1.0 / (params.tau * params.kappa[i]);
    params
        .weighted_potential(i, grid)
        .into_iter()
        .zip(phi.cell_averages())
        .map(|(v, a)| v + c * a)
        .collect()
}

fn support_mean(values: &[f64], rho: &[f64], eps: f64) -> Option<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for (v, r) in values.iter().zip(rho) {
        if *r > eps {
            acc += v;
            count += 1;
        }
    }
    if count == 0 {
        None
    } else {
        Some(acc / count as f64)
    }
}

/// Residual of `p = max(C₁ − Ψ₁, C₂ − Ψ₂, 0)` for finite `m`, with `Cᵢ` the
/// least-squares fit (mean) of `p + Ψᵢ` over `{ρⁱ > eps}`. Returns the residual
/// and the constants.
pub fn optimality_residual(
    pair: &DensityPair,
    potentials: &[Option<KantorovichPotential>; 2],
    params: &ModelParams,
    eps: f64,
) -> Result<(f64, [Option<f64>; 2])> {
    residual_with_barrier(pair, potentials, params, eps, 0.0)
}

// With a barrier weight `mu` the stationarity of the solved problem reads
// `p + Ψᵢ − μ/ρⁱ = Cᵢ`; the known term is removed before fitting so cells
// that only carry barrier residue do not shift the constants.
fn residual_with_barrier(
    pair: &DensityPair,
    potentials: &[Option<KantorovichPotential>; 2],
    params: &ModelParams,
    eps: f64,
    mu: f64,
) -> Result<(f64, [Option<f64>; 2])> {
    let m = params.exponent.finite().ok_or_else(|| {
        Error::InvalidParams("optimality residual of the pressure law needs finite m".into())
    })?;
    let grid = pair.grid();
    let p = pressure_finite_m(pair, m)?;
    let mut bounds: [Option<Vec<f64>>; 2] = [None, None];
    let mut constants = [None, None];
    for i in 0..2 {
        if let Some(phi) = &potentials[i] {
            let psi = psi(params, grid, i, phi);
            let rho = pair.species(i).values();
            let shifted: Vec<f64> = p
                .values()
                .iter()
                .zip(&psi)
                .zip(rho)
                .map(|((a, b), r)| if *r > 0.0 { a + b - mu / r } else { a + b })
                .collect();
            if let Some(c) = support_mean(&shifted, rho, eps) {
                constants[i] = Some(c);
                bounds[i] = Some(psi.iter().map(|v| c - v).collect());
            }
        }
    }
    let mut res: f64 = 0.0;
    for (k, &pk) in p.values().iter().enumerate() {
        let mut target: f64 = 0.0;
        for b in bounds.iter().flatten() {
            target = target.max(b[k]);
        }
        res = res.max((pk - target).abs());
    }
    Ok((res, constants))
}

/// `h Σ |p (1 − ρ¹ − ρ²)|`.
fn complementarity(pair: &DensityPair, p: &[f64]) -> f64 {
    let h = pair.grid().h();
    h * pair
        .total()
        .iter()
        .zip(p)
        .map(|(t, p)| (p * (1.0 - t)).abs())
        .sum::<f64>()
}

/// Pressure of an incompressible step: `p = (Cᵢ − Ψᵢ)₊` on `{ρⁱ > ε}` and zero
/// outside both supports. Returns the field, the constants and the largest
/// violation `(Cᵢ − Ψᵢ)₋` on the supports.
///
/// `Cᵢ` is fitted on unsaturated support cells, where the multiplier is
/// negligible; `mu` is the final barrier weight of the solver (zero for
/// barrier-free solvers) and its known contribution `μ/(1 − ρ¹ − ρ²) − μ/ρⁱ`
/// is added back, also per cell so thin edge cells are not mistaken for
/// violations. A species saturated on its whole support takes its constant
/// from an end that touches vacuum (`p = 0` there) or else from the pressure
/// of the other species across their interface.
fn incompressible_pressure(
    pair: &DensityPair,
    potentials: &[Option<KantorovichPotential>; 2],
    mu: f64,
    params: &ModelParams,
    eps: f64,
) -> (Vec<f64>, [Option<f64>; 2], f64) {
    let grid = pair.grid();
    let n = grid.n_cells();
    let total = pair.total();
    let psis: [Option<Vec<f64>>; 2] =
        core::array::from_fn(|i| potentials[i].as_ref().map(|phi| psi(params, grid, i, phi)));
    let mut constants = [None, None];
    for i in 0..2 {
        if let Some(psi) = &psis[i] {
            constants[i] = fit_unsaturated(psi, pair.species(i).values(), &total, mu, eps);
        }
    }
    for i in 0..2 {
        if constants[i].is_some() {
            continue;
        }
        let psi = match &psis[i] {
            Some(psi) => psi,
            None => continue,
        };
        let rho = pair.species(i).values();
        let other = pair.species(1 - i).values();
        let (first, last) = match (rho.iter().position(|&r| r > eps), rho.iter().rposition(|&r| r > eps)) {
            (Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        let mut free: Option<f64> = None;
        let mut matched: Option<f64> = None;
        for (end, nb) in [(first, first.checked_sub(1)), (last, Some(last + 1).filter(|&k| k < n))] {
            let nb = match nb {
                Some(k) => k,
                None => continue,
            };
            if other[nb] > eps || other[end] > eps {
                if let (Some(c), Some(po)) = (constants[1 - i], &psis[1 - i]) {
                    let k = if other[nb] > eps { nb } else { end };
                    matched = Some(crate::math::pos(c - po[k]) + psi[end]);
                }
            } else {
                free = Some(free.map_or(psi[end], |f: f64| f.min(psi[end])));
            }
        }
        constants[i] = free.or(matched).or(Some(psi[first].min(psi[last])));
    }
    let mut p = alloc::vec![0.0; n];
    let mut owner = alloc::vec![0.0f64; n];
    let mut violation: f64 = 0.0;
    for i in 0..2 {
        let (psi, c) = match (&psis[i], constants[i]) {
            (Some(psi), Some(c)) => (psi, c),
            _ => continue,
        };
        let rho = pair.species(i).values();
        for k in 0..n {
            if rho[k] > eps && rho[k] > owner[k] {
                owner[k] = rho[k];
                let v = c - psi[k] + mu / rho[k];
                // off saturation v is the barrier multiplier μ/slack alone
                let slack = 1.0 - total[k];
                if slack > UNSATURATED_SLACK {
                    violation = violation.max((v - mu / slack).abs());
                } else {
                    violation = violation.max(-v);
                    p[k] = crate::math::pos(v);
                }
            }
        }
    }
    (p, constants, violation)
}

const UNSATURATED_SLACK: f64 = 1e-6;

fn fit_unsaturated(psi: &[f64], rho: &[f64], total: &[f64], mu: f64, eps: f64) -> Option<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for k in 0..rho.len() {
        let slack = 1.0 - total[k];
        if rho[k] > eps && slack > UNSATURATED_SLACK {
            acc += psi[k] + mu / slack - mu / rho[k];
            count += 1;
        }
    }
    (count > 0).then(|| acc / count as f64)
}

/// Recovered pressure of an incompressible step (see [`JkoStepResult::pressure`]).
pub fn recover_pressure_incompressible(
    step: &JkoStepResult,
    params: &ModelParams,
    support_floor: f64,
) -> Result<PotentialField> {
    if !params.exponent.is_incompressible() {
        return Err(Error::InvalidParams("pressure recovery is for m = infinity".into()));
    }
    for i in 0..2 {
        if params.species_present(i) && step.potentials[i].is_none() {
            return Err(Error::InvalidParams(alloc::format!(
                "step carries no potential for species {}",
                i + 1
            )));
        }
    }
    let (p, _, _) = incompressible_pressure(
        &step.pair,
        &step.potentials,
        step.barrier_mu,
        params,
        support_floor,
    );
    PotentialField::new(*step.pair.grid(), p)
}

/// Cell velocities `−κᵢ∂ₓp − ∂ₓΦᵢ` on the support of `ρⁱ`: centered
/// differences of `p` inside the support of the total, one-sided where a
/// neighbour is vacuum. Cells outside `{ρⁱ > eps}` get `None`.
pub fn pressure_velocity(
    pair: &DensityPair,
    pressure: &[f64],
    params: &ModelParams,
    i: usize,
    eps: f64,
) -> Vec<Option<f64>> {
    let g = pair.grid();
    let n = g.n_cells();
    let h = g.h();
    let total = pair.total();
    let rho = pair.species(i).values();
    let inside = |k: usize| total[k] > eps;
    (0..n)
        .map(|k| {
            if !(rho[k] > eps) {
                return None;
            }
            let left = k > 0 && inside(k - 1);
            let right = k + 1 < n && inside(k + 1);
            let dp = match (left, right) {
                (true, true) => (pressure[k + 1] - pressure[k - 1]) / (2.0 * h),
                (true, false) => (pressure[k] - pressure[k - 1]) / h,
                (false, true) => (pressure[k + 1] - pressure[k]) / h,
                (false, false) => 0.0,
            };
            Some(-params.kappa[i] * dp - params.potentials[i].slope(g.center(k)))
        })
        .collect()
}

fn explicit_with(pair: &DensityPair, params: &ModelParams, pressure: &[f64], eps: f64) -> Result<DensityPair> {
    let g = *pair.grid();
    let n = g.n_cells();
    let mut out: [Option<DensityField>; 2] = [None, None];
    for (i, slot) in out.iter_mut().enumerate() {
        let rho = pair.species(i);
        if rho.mass() <= 0.0 {
            *slot = Some(DensityField::zeros(g));
            continue;
        }
        let v = pressure_velocity(pair, pressure, params, i, eps);
        let mut images = Vec::with_capacity(n + 1);
        let mut last = f64::NEG_INFINITY;
        for e in 0..=n {
            let l = if e > 0 { v[e - 1] } else { None };
            let r = if e < n { v[e] } else { None };
            let ve = match (l, r) {
                (Some(a), Some(b)) => 0.5 * (a + b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => 0.0,
            };
            let y = (g.edge(e) + params.tau * ve).max(last);
            images.push(y);
            last = y;
        }
        let map = TransportMap1D::from_edge_images(rho, &images)?;
        *slot = Some(pushforward(rho, &map)?);
    }
    let [a, b] = out;
    DensityPair::new(a.unwrap(), b.unwrap())
}

/// One explicit transport step `ρⁱ ↦ (id + τvⁱ)#ρⁱ` with
/// `vⁱ = −κᵢ∂ₓp − ∂ₓΦᵢ` and the finite-`m` pressure law. Edge images average
/// the adjacent cell velocities; the map is clipped to the domain.
pub fn explicit_transport_step(prev: &DensityPair, params: &ModelParams) -> Result<DensityPair> {
    let m = params.exponent.finite().ok_or_else(|| {
        Error::InvalidParams("explicit step with m = infinity needs a pressure field".into())
    })?;
    let p = pressure_finite_m(prev, m)?;
    explicit_with(prev, params, p.values(), SolverConfig::default().support_floor)
}

/// [`explicit_transport_step`] with a supplied pressure (the `m = ∞` case).
pub fn explicit_transport_step_with_pressure(
    prev: &DensityPair,
    params: &ModelParams,
    pressure: &PotentialField,
) -> Result<DensityPair> {
    if pressure.grid() != prev.grid() {
        return Err(Error::GridMismatch);
    }
    explicit_with(prev, params, pressure.values(), SolverConfig::default().support_floor)
}

const WARM_MIX: f64 = 1e-3;

/// Strictly positive starting point: the predictor blended with uniform
/// densities, strictly below the cap when incompressible.
fn warm_start(prev: &DensityPair, params: &ModelParams, solver: &SolverConfig) -> Vec<Vec<f64>> {
    let g = prev.grid();
    let len = g.length();
    let predictor = if solver.warm_start {
        match params.exponent {
            Exponent::Finite(_) => explicit_transport_step(prev, params).ok(),
            Exponent::Incompressible => explicit_with(prev, params, &alloc::vec![0.0; g.n_cells()], solver.support_floor)
                .ok()
                .filter(|p| p.total().into_iter().fold(0.0, f64::max) <= 1.0),
        }
    } else {
        None
    };
    // the explicit predictor is only a guess and can overshoot badly for stiff
    // pressures; keep it only when it beats standing still
    let stay = step_objective(prev, prev, params).unwrap_or(f64::INFINITY);
    let predictor = predictor.filter(|p| step_objective(p, prev, params).map_or(false, |j| j < stay));
    let base = predictor.as_ref().unwrap_or(prev);
    let mut theta = WARM_MIX;
    if params.exponent.is_incompressible() {
        let u = (params.masses[0] + params.masses[1]) / len;
        let tmax = base.total().into_iter().fold(0.0, f64::max);
        let delta = 1e-4 * (1.0 - u);
        if tmax > 1.0 - delta {
            theta = theta.max((tmax - 1.0 + delta) / (tmax - u));
        }
    }
    (0..2)
        .filter(|&i| params.species_present(i))
        .map(|i| {
            let floor = params.masses[i] / len;
            base.species(i)
                .values()
                .iter()
                .map(|v| (1.0 - theta) * v + theta * floor)
                .collect()
        })
        .collect()
}

// Barrier residue far below the support floor is dropped so later quantiles
// see clean gaps.
fn clean(grid: Grid, mut values: Vec<f64>, mass: f64) -> Result<DensityField> {
    let max = values.iter().copied().fold(0.0, f64::max);
    let cut = 1e-13 * max;
    for v in values.iter_mut() {
        if *v < cut {
            *v = 0.0;
        }
    }
    DensityField::new(grid, values)?.with_mass(mass)
}

fn step_impl(prev: &DensityPair, params: &ModelParams, solver: &SolverConfig) -> Result<JkoStepResult> {
    solver.validate()?;
    check_state(prev, params)?;
    let grid = *prev.grid();
    let present: Vec<usize> = (0..2).filter(|&i| params.species_present(i)).collect();
    let quantiles: Vec<Quantile> = present
        .iter()
        .map(|&i| Quantile::of(prev.species(i)).map(|q| q.rescaled(params.masses[i])))
        .collect::<Result<_>>()?;
    let init = warm_start(prev, params, solver);

    let (densities, iterations, mu, solver_done) = match solver.step_rule {
        StepRule::Newton => {
            let problem = newton::Problem {
                grid,
                species: present
                    .iter()
                    .zip(&quantiles)
                    .map(|(&i, q)| newton::Species {
                        mass: params.masses[i],
                        coef: 1.0 / (params.tau * params.kappa[i]),
                        phi: params.weighted_potential(i, &grid),
                        q: q.clone(),
                    })
                    .collect(),
                exponent: params.exponent,
            };
            let settings = newton::BarrierSettings {
                mu_start: solver.mu_start,
                mu_end: solver.mu_end,
                mu_shrink: solver.mu_shrink,
                max_iterations: solver.max_inner,
                final_tol: 1e-20,
            };
            let sol = problem.solve(&init, &settings);
            (sol.densities, sol.iterations, sol.mu, sol.converged)
        }
        StepRule::Mirror => {
            let (d, it, ok) = mirror::solve(prev, params, solver, &present, init)?;
            (d, it, 0.0, ok)
        }
    };

    let mut fields = [DensityField::zeros(grid), DensityField::zeros(grid)];
    for (slot, (&i, values)) in present.iter().zip(densities).enumerate() {
        let _ = slot;
        fields[i] = clean(grid, values, params.masses[i])?;
    }
    let [f1, f2] = fields;
    let pair = DensityPair::new(f1, f2)?;
    finish_step(prev, pair, params, solver, iterations, mu, solver_done)
}

fn finish_step(
    prev: &DensityPair,
    pair: DensityPair,
    params: &ModelParams,
    solver: &SolverConfig,
    iterations: usize,
    mu: f64,
    solver_done: bool,
) -> Result<JkoStepResult> {
    let mut potentials: [Option<KantorovichPotential>; 2] = [None, None];
    let mut w2_sq = [0.0; 2];
    for i in 0..2 {
        if params.species_present(i) {
            potentials[i] = Some(kantorovich_potential(pair.species(i), prev.species(i))?);
            w2_sq[i] = w2_squared(pair.species(i), prev.species(i))?;
        }
    }
    let eps = solver.support_floor;
    let (pressure, residual, constants) = match params.exponent {
        Exponent::Finite(m) => {
            let (res, c) = residual_with_barrier(&pair, &potentials, params, eps, mu)?;
            (pressure_finite_m(&pair, m)?, res, c)
        }
        Exponent::Incompressible => {
            let (p, c, violation) = incompressible_pressure(&pair, &potentials, mu, params, eps);
            let res = complementarity(&pair, &p).max(violation);
            (PotentialField::new(*pair.grid(), p)?, res, c)
        }
    };
    let mut objective = energy_report(&pair, params).total;
    for i in 0..2 {
        objective += w2_sq[i] / (2.0 * params.tau * params.kappa[i]);
    }
    Ok(JkoStepResult {
        objective_prev: energy_report(prev, params).total,
        pair,
        potentials,
        w2_sq,
        optimality_residual: residual,
        constants,
        pressure,
        inner_iterations: iterations,
        converged: residual <= solver.inner_tol,
        solver_finished: solver_done,
        objective,
        barrier_mu: mu,
        tau: params.tau,
    })
}

/// One implicit step for finite `m`.
pub fn jko_step(prev: &DensityPair, params: &ModelParams, solver: &SolverConfig) -> Result<JkoStepResult> {
    if params.exponent.is_incompressible() {
        return Err(Error::InvalidParams(
            "jko_step needs finite m; use jko_step_incompressible".into(),
        ));
    }
    step_impl(prev, params, solver)
}

/// One implicit step under `ρ¹ + ρ² ≤ 1`.
pub fn jko_step_incompressible(
    prev: &DensityPair,
    params: &ModelParams,
    solver: &SolverConfig,
) -> Result<JkoStepResult> {
    if !params.exponent.is_incompressible() {
        return Err(Error::InvalidParams(
            "jko_step_incompressible needs m = infinity".into(),
        ));
    }
    step_impl(prev, params, solver)
}

/// Dispatches on the exponent.
pub fn step(prev: &DensityPair, params: &ModelParams, solver: &SolverConfig) -> Result<JkoStepResult> {
    step_impl(prev, params, solver)
}

/// Per-step metadata of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Index `k + 1` of the produced iterate.
    pub step: usize,
    pub time: f64,
    pub w2_sq: [f64; 2],
    pub optimality_residual: f64,
    pub constants: [Option<f64>; 2],
    pub inner_iterations: usize,
    pub converged: bool,
    pub energy: EnergyReport,
}

/// Iterates `ρ⁰ … ρᴺ` with pressures, potentials and step records.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub params: ModelParams,
    pub pairs: Vec<DensityPair>,
    /// `pressures[k]` belongs to `pairs[k]`; the initial one is the pressure
    /// law for finite `m` and zero for `m = ∞`.
    pub pressures: Vec<PotentialField>,
    /// `potentials[k]` maps `pairs[k + 1]` back to `pairs[k]`.
    pub potentials: Vec<[Option<KantorovichPotential>; 2]>,
    pub records: Vec<StepRecord>,
    pub initial_energy: EnergyReport,
}

impl Trajectory {
    pub fn grid(&self) -> &Grid {
        self.pairs[0].grid()
    }

    pub fn tau(&self) -> f64 {
        self.params.tau
    }

    /// Number of completed steps.
    pub fn n_steps(&self) -> usize {
        self.pairs.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.params.tau
    }

    /// `F + G` of every iterate.
    pub fn energies(&self) -> Vec<EnergyReport> {
        let mut out = alloc::vec![self.initial_energy];
        out.extend(self.records.iter().map(|r| r.energy));
        out
    }
}

/// Validates data for a run: masses, domain condition, feasibility.
pub fn check_initial(initial: &DensityPair, params: &ModelParams) -> Result<()> {
    check_state(initial, params)
}

/// Runs `N = T/τ` steps from `initial`.
pub fn run_trajectory(initial: &DensityPair, params: &ModelParams, solver: &SolverConfig) -> Result<Trajectory> {
    run_trajectory_observed(initial, params, solver, &mut |_, _| {})
}

/// [`run_trajectory`] calling `observe(k, step)` after each step.
pub fn run_trajectory_observed(
    initial: &DensityPair,
    params: &ModelParams,
    solver: &SolverConfig,
    observe: &mut dyn FnMut(usize, &JkoStepResult),
) -> Result<Trajectory> {
    solver.validate()?;
    check_state(initial, params)?;
    let grid = *initial.grid();
    let initial_pressure = match params.exponent {
        Exponent::Finite(m) => pressure_finite_m(initial, m)?,
        Exponent::Incompressible => PotentialField::zeros(grid),
    };
    let mut traj = Trajectory {
        params: params.clone(),
        pairs: alloc::vec![initial.clone()],
        pressures: alloc::vec![initial_pressure],
        potentials: Vec::new(),
        records: Vec::new(),
        initial_energy: energy_report(initial, params),
    };
    for k in 0..params.n_steps() {
        let prev = &traj.pairs[k];
        let res = step_impl(prev, params, solver).map_err(|e| Error::StepFailed {
            step: k + 1,
            source: Box::new(e),
        })?;
        if !res.converged {
            return Err(Error::StepFailed {
                step: k + 1,
                source: Box::new(Error::NotConverged {
                    iterations: res.inner_iterations,
                    residual: res.optimality_residual,
                }),
            });
        }
        observe(k + 1, &res);
        traj.records.push(StepRecord {
            step: k + 1,
            time: (k + 1) as f64 * params.tau,
            w2_sq: res.w2_sq,
            optimality_residual: res.optimality_residual,
            constants: res.constants,
            inner_iterations: res.inner_iterations,
            converged: res.converged,
            energy: energy_report(&res.pair, params),
        });
        traj.pressures.push(res.pressure);
        traj.potentials.push(res.potentials);
        traj.pairs.push(res.pair);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests;
