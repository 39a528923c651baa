//! Free energies, the pressure law and the equilibrium solver.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{pos, powf};
use crate::measure::{DensityField, DensityPair, Grid, PotentialField};

/// Absolute tolerance on `max(ρ¹ + ρ²) − 1` for the incompressible constraint.
pub const FEAS_TOL: f64 = 1e-9;

/// Drift potential from a closed set of families.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    /// `a·x + b`
    Linear { a: f64, b: f64 },
    /// `a·x² + b·x + c`, evaluated in Horner form.
    Quadratic { a: f64, b: f64, c: f64 },
    /// Linear interpolation through `(x, value)` breakpoints sorted by `x`,
    /// constant beyond the first and last breakpoint.
    PiecewiseLinear { points: Vec<(f64, f64)> },
}

impl PotentialSpec {
    pub fn zero() -> Self {
        PotentialSpec::Linear { a: 0.0, b: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = match self {
            PotentialSpec::Linear { a, b } => a.is_finite() && b.is_finite(),
            PotentialSpec::Quadratic { a, b, c } => {
                a.is_finite() && b.is_finite() && c.is_finite()
            }
            PotentialSpec::PiecewiseLinear { points } => {
                if points.is_empty() {
                    return Err(Error::InvalidParams("piecewise-linear potential needs breakpoints".into()));
                }
                if points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
                    return Err(Error::InvalidParams(
                        "piecewise-linear breakpoints must be strictly increasing".into(),
                    ));
                }
                points.iter().all(|(x, v)| x.is_finite() && v.is_finite())
            }
        };
        if finite {
            Ok(())
        } else {
            Err(Error::InvalidParams("potential coefficients must be finite".into()))
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            PotentialSpec::Linear { a, b } => a * x + b,
            PotentialSpec::Quadratic { a, b, c } => (a * x + b) * x + c,
            PotentialSpec::PiecewiseLinear { points } => {
                let k = points.partition_point(|p| p.0 <= x);
                if k == 0 {
                    return points[0].1;
                }
                if k == points.len() {
                    return points[k - 1].1;
                }
                let (x0, v0) = points[k - 1];
                let (x1, v1) = points[k];
                v0 + (v1 - v0) * (x - x0) / (x1 - x0)
            }
        }
    }

    /// `∂ₓΦ` (right derivative at piecewise-linear kinks).
    pub fn slope(&self, x: f64) -> f64 {
        match self {
            PotentialSpec::Linear { a, .. } => *a,
            PotentialSpec::Quadratic { a, b, .. } => 2.0 * a * x + b,
            PotentialSpec::PiecewiseLinear { points } => {
                let k = points.partition_point(|p| p.0 <= x);
                if k == 0 || k == points.len() {
                    return 0.0;
                }
                let (x0, v0) = points[k - 1];
                let (x1, v1) = points[k];
                (v1 - v0) / (x1 - x0)
            }
        }
    }

    /// `∂²ₓₓΦ` (zero away from kinks for piecewise-linear).
    pub fn curvature(&self, _x: f64) -> f64 {
        match self {
            PotentialSpec::Quadratic { a, .. } => 2.0 * a,
            _ => 0.0,
        }
    }

    /// Points of `[left, right]` where `|Φ|` or `|Φ'|` can peak.
    fn candidates(&self, left: f64, right: f64) -> Vec<f64> {
        let mut xs = alloc::vec![left, right];
        match self {
            PotentialSpec::Quadratic { a, b, .. } if *a != 0.0 => {
                let v = -b / (2.0 * a);
                if v > left && v < right {
                    xs.push(v);
                }
            }
            PotentialSpec::PiecewiseLinear { points } => {
                xs.extend(points.iter().map(|p| p.0).filter(|&x| x > left && x < right));
            }
            _ => {}
        }
        xs
    }

    /// `‖Φ‖_∞` on `[left, right]`.
    pub fn sup_norm(&self, left: f64, right: f64) -> f64 {
        self.candidates(left, right)
            .into_iter()
            .map(|x| self.value(x).abs())
            .fold(0.0, f64::max)
    }

    /// `‖∂ₓΦ‖_∞` on `[left, right]`.
    pub fn slope_sup_norm(&self, left: f64, right: f64) -> f64 {
        match self {
            PotentialSpec::PiecewiseLinear { points } => {
                let mut best: f64 = 0.0;
                for w in points.windows(2) {
                    if w[1].0 > left && w[0].0 < right {
                        best = best.max(((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs());
                    }
                }
                best
            }
            _ => self
                .candidates(left, right)
                .into_iter()
                .map(|x| self.slope(x).abs())
                .fold(0.0, f64::max),
        }
    }

    /// `Φ` at the cell centers of `grid`.
    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        (0..grid.n_cells()).map(|j| self.value(grid.center(j))).collect()
    }
}

/// Nonlinearity exponent `m`: finite (`> 1`) or the incompressible limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Incompressible,
}

impl Exponent {
    pub fn finite(self) -> Option<f64> {
        match self {
            Exponent::Finite(m) => Some(m),
            Exponent::Incompressible => None,
        }
    }

    pub fn is_incompressible(self) -> bool {
        matches!(self, Exponent::Incompressible)
    }
}

/// Model data of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub exponent: Exponent,
    pub kappa: [f64; 2],
    pub potentials: [PotentialSpec; 2],
    /// A zero mass means the species is absent (one-species reduction).
    pub masses: [f64; 2],
    pub horizon: f64,
    pub tau: f64,
    n_steps: usize,
}

impl ModelParams {
    pub fn new(
        exponent: Exponent,
        kappa: [f64; 2],
        potentials: [PotentialSpec; 2],
        masses: [f64; 2],
        horizon: f64,
        tau: f64,
    ) -> Result<Self> {
        if let Exponent::Finite(m) = exponent {
            if !(m > 1.0) || !m.is_finite() {
                return Err(Error::InvalidParams(alloc::format!("m must exceed 1, got {m}")));
            }
        }
        if kappa.iter().any(|k| !(*k > 0.0) || !k.is_finite()) {
            return Err(Error::InvalidParams(alloc::format!(
                "kappa must be positive, got {kappa:?}"
            )));
        }
        if masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) || masses[0] + masses[1] <= 0.0 {
            return Err(Error::InvalidParams(alloc::format!(
                "masses must be nonnegative with a positive total, got {masses:?}"
            )));
        }
        for p in &potentials {
            p.validate()?;
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParams(alloc::format!("tau must be positive, got {tau}")));
        }
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParams(alloc::format!(
                "horizon must be nonnegative, got {horizon}"
            )));
        }
        let n = crate::math::round(horizon / tau);
        if (n * tau - horizon).abs() > 1e-9 * horizon.max(tau) {
            return Err(Error::InvalidParams(alloc::format!(
                "tau = {tau} does not divide T = {horizon}"
            )));
        }
        Ok(ModelParams {
            exponent,
            kappa,
            potentials,
            masses,
            horizon,
            tau,
            n_steps: n as usize,
        })
    }

    /// `N = T / τ`.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn with_exponent(&self, exponent: Exponent) -> Result<Self> {
        ModelParams::new(
            exponent,
            self.kappa,
            self.potentials.clone(),
            self.masses,
            self.horizon,
            self.tau,
        )
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        ModelParams::new(
            self.exponent,
            self.kappa,
            self.potentials.clone(),
            self.masses,
            self.horizon,
            tau,
        )
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        ModelParams::new(
            self.exponent,
            self.kappa,
            self.potentials.clone(),
            self.masses,
            horizon,
            self.tau,
        )
    }

    /// Rejects data incompatible with the grid: the incompressible case needs
    /// `|Ω| > M₁ + M₂`.
    pub fn check_domain(&self, grid: &Grid) -> Result<()> {
        if self.exponent.is_incompressible() && grid.length() <= self.masses[0] + self.masses[1] {
            return Err(Error::InvalidParams(alloc::format!(
                "incompressible model needs |Ω| = {} > M1 + M2 = {}",
                grid.length(),
                self.masses[0] + self.masses[1]
            )));
        }
        Ok(())
    }

    /// `Φᵢ / κᵢ` at the cell centers.
    pub fn weighted_potential(&self, i: usize, grid: &Grid) -> Vec<f64> {
        let k = self.kappa[i];
        (0..grid.n_cells())
            .map(|j| self.potentials[i].value(grid.center(j)) / k)
            .collect()
    }

    pub fn species_present(&self, i: usize) -> bool {
        self.masses[i] > 0.0
    }
}

/// Energy split of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    /// `F_m`; zero for a feasible incompressible state.
    pub internal: f64,
    /// False when the incompressible constraint is violated.
    pub feasible: bool,
    pub potential: f64,
    pub total: f64,
}

/// `f(u) = u^m / (m − 1)`.
#[inline]
pub(crate) fn energy_density(u: f64, m: f64) -> f64 {
    powf(u, m) / (m - 1.0)
}

/// `f'(u) = m/(m − 1)·u^(m−1)`, the pressure.
#[inline]
pub(crate) fn pressure_of(u: f64, m: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        m / (m - 1.0) * powf(u, m - 1.0)
    }
}

/// `f''(u) = m·u^(m−2)`.
#[inline]
pub(crate) fn pressure_slope(u: f64, m: f64) -> f64 {
    m * powf(u, m - 2.0)
}

/// `F_m` for finite `m`, or `None` when an incompressible state is infeasible.
pub fn internal_energy(pair: &DensityPair, params: &ModelParams) -> Option<f64> {
    let total = pair.total();
    match params.exponent {
        Exponent::Finite(m) => {
            let h = pair.grid().h();
            Some(h * total.iter().map(|&u| energy_density(u, m)).sum::<f64>())
        }
        Exponent::Incompressible => {
            let max = total.iter().copied().fold(0.0, f64::max);
            if max <= 1.0 + FEAS_TOL {
                Some(0.0)
            } else {
                None
            }
        }
    }
}

/// `G = h Σ (Φ₁ρ¹/κ₁ + Φ₂ρ²/κ₂)` at cell centers.
pub fn potential_energy(pair: &DensityPair, params: &ModelParams) -> f64 {
    let g = pair.grid();
    let h = g.h();
    let mut acc = 0.0;
    for i in 0..2 {
        let phi = params.weighted_potential(i, g);
        let rho = pair.species(i).values();
        acc += h * rho.iter().zip(&phi).map(|(r, p)| r * p).sum::<f64>();
    }
    acc
}

pub fn energy_report(pair: &DensityPair, params: &ModelParams) -> EnergyReport {
    let potential = potential_energy(pair, params);
    match internal_energy(pair, params) {
        Some(internal) => EnergyReport {
            internal,
            feasible: true,
            potential,
            total: internal + potential,
        },
        None => EnergyReport {
            internal: f64::INFINITY,
            feasible: false,
            potential,
            total: f64::INFINITY,
        },
    }
}

/// `p = m/(m−1)·(ρ¹ + ρ²)^(m−1)` per cell.
pub fn pressure_finite_m(pair: &DensityPair, m: f64) -> Result<PotentialField> {
    if !(m > 1.0) || !m.is_finite() {
        return Err(Error::InvalidParams(alloc::format!("pressure law needs finite m > 1, got {m}")));
    }
    let values = pair.total().into_iter().map(|u| pressure_of(u, m)).collect();
    PotentialField::new(*pair.grid(), values)
}

/// Output of [`equilibrium`].
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub pair: DensityPair,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    /// `Φ₁/κ₁ − Φ₂/κ₂` is constant, so any split of the common support is an
    /// equilibrium; the returned split is proportional to the masses.
    pub degenerate: bool,
    /// Some species support has more than one connected component, where
    /// single global constants need not be the right answer.
    pub multi_component: bool,
}

const BISECTION_ITERS: usize = 200;

/// Largest `C` such that `mass(C) ≤ target`, for nondecreasing `mass`, with
/// `mass(lo) ≤ target`.
fn bisect(mut lo: f64, target: f64, mass: &mut dyn FnMut(f64) -> f64) -> Result<f64> {
    let mut step = 1.0f64.max(lo.abs());
    let mut hi = lo + step;
    let mut grow = 0;
    while mass(hi) < target {
        lo = hi;
        step *= 2.0;
        hi += step;
        grow += 1;
        if grow > 2000 || !hi.is_finite() {
            return Err(Error::BisectionFailure(alloc::format!(
                "mass {target} not attainable"
            )));
        }
    }
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// Cell `j` belongs to species 1 when `C₁ − Φ̃₁ > C₂ − Φ̃₂`, that is when
// `d_j = Φ̃₁ − Φ̃₂ < Δ = C₁ − C₂`. For fixed `Δ` the total mass is continuous
// and increasing in `C₁`; the mass of species 1 then increases with `Δ` and
// jumps only where `Δ` crosses some `d_j`, in which case those cells are tied
// and split between the species.
struct EqProblem<'a> {
    grid: &'a Grid,
    m: f64,
    phi1: Vec<f64>,
    phi2: Vec<f64>,
    d: Vec<f64>,
}

struct EqState {
    r1: Vec<f64>,
    r2: Vec<f64>,
    c1: f64,
    mass1: f64,
}

impl EqProblem<'_> {
    fn density(&self, u: f64) -> f64 {
        if u <= 0.0 {
            0.0
        } else {
            powf((self.m - 1.0) / self.m * u, 1.0 / (self.m - 1.0))
        }
    }

    fn total(&self, c1: f64, delta: f64) -> Vec<f64> {
        (0..self.grid.n_cells())
            .map(|j| self.density((c1 - self.phi1[j]).max(c1 - delta - self.phi2[j])))
            .collect()
    }

    /// Owner of each cell for this `Δ`: `Some(true)` species 1, `Some(false)`
    /// species 2, `None` tied.
    fn owner(&self, j: usize, delta: f64, tie_tol: f64) -> Option<bool> {
        let gap = delta - self.d[j];
        if gap.abs() <= tie_tol {
            None
        } else {
            Some(gap > 0.0)
        }
    }

    /// Solves the total mass for `C₁`; tied cells go to species 1 with weight
    /// `w1`.
    fn state(&self, delta: f64, total_mass: f64, tie_tol: f64, w1: f64) -> Result<EqState> {
        let h = self.grid.h();
        let lo = (0..self.grid.n_cells())
            .map(|j| self.phi1[j].min(delta + self.phi2[j]))
            .fold(f64::INFINITY, f64::min);
        let c1 = bisect(lo, total_mass, &mut |c| h * self.total(c, delta).iter().sum::<f64>())?;
        let rho = self.total(c1, delta);
        let mut r1 = Vec::with_capacity(rho.len());
        let mut r2 = Vec::with_capacity(rho.len());
        let mut mass1 = 0.0;
        for (j, &r) in rho.iter().enumerate() {
            let w = match self.owner(j, delta, tie_tol) {
                Some(true) => 1.0,
                Some(false) => 0.0,
                None => w1,
            };
            r1.push(w * r);
            r2.push((1.0 - w) * r);
            mass1 += h * w * r;
        }
        Ok(EqState { r1, r2, c1, mass1 })
    }
}

fn single_species(grid: &Grid, m: f64, phi: &[f64], mass: f64) -> Result<(Vec<f64>, f64)> {
    let h = grid.h();
    let dens = |c: f64| -> Vec<f64> {
        phi.iter()
            .map(|p| {
                let u = pos(c - p);
                if u > 0.0 {
                    powf((m - 1.0) / m * u, 1.0 / (m - 1.0))
                } else {
                    0.0
                }
            })
            .collect()
    };
    let lo = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let c = bisect(lo, mass, &mut |c| h * dens(c).iter().sum::<f64>())?;
    Ok((dens(c), c))
}

fn components(values: &[f64]) -> usize {
    let mut count = 0;
    let mut inside = false;
    for &v in values {
        let on = v > 0.0;
        if on && !inside {
            count += 1;
        }
        inside = on;
    }
    count
}

/// Equilibrium `m/(m−1)(ρ̄¹ + ρ̄²)^(m−1) = max(C₁ − Φ₁, C₂ − Φ₂, 0)` with the
/// constants matched to the masses by nested bisection (outer on `C₁ − C₂`,
/// inner on `C₁` for the total mass). Potentials are divided by `κᵢ`.
///
/// Each cell belongs to the species with the larger `Cᵢ − Φᵢ`; when the
/// masses force `C₁ − Φ₁ = C₂ − Φ₂` on some cell, that cell is split. The
/// result is the exact minimizer of the cell-discretized energy.
pub fn equilibrium(params: &ModelParams, grid: &Grid) -> Result<Equilibrium> {
    let m = params.exponent.finite().ok_or_else(|| {
        Error::InvalidParams("equilibrium requires finite m".into())
    })?;
    let [m1, m2] = params.masses;
    let phi1 = params.weighted_potential(0, grid);
    let phi2 = params.weighted_potential(1, grid);
    let zeros = alloc::vec![0.0; grid.n_cells()];
    let finish = |r1: Vec<f64>, r2: Vec<f64>, c1, c2, degenerate| -> Result<Equilibrium> {
        let multi = components(&r1) > 1 || components(&r2) > 1;
        let pair = DensityPair::new(
            DensityField::new(*grid, r1)?,
            DensityField::new(*grid, r2)?,
        )?;
        Ok(Equilibrium {
            pair,
            c1,
            c2,
            degenerate,
            multi_component: multi,
        })
    };

    if m2 == 0.0 {
        let (r, c) = single_species(grid, m, &phi1, m1)?;
        return finish(r, zeros, Some(c), None, false);
    }
    if m1 == 0.0 {
        let (r, c) = single_species(grid, m, &phi2, m2)?;
        return finish(zeros, r, None, Some(c), false);
    }

    let k1 = params.kappa[0];
    let k2 = params.kappa[1];
    let diff_edges: Vec<f64> = grid
        .edges()
        .iter()
        .map(|&x| params.potentials[0].value(x) / k1 - params.potentials[1].value(x) / k2)
        .collect();
    let scale = diff_edges.iter().map(|d| d.abs()).fold(1.0, f64::max);
    let constant = diff_edges
        .iter()
        .all(|d| (d - diff_edges[0]).abs() <= 1e-12 * scale);
    if constant {
        let delta = diff_edges[0];
        let (r, c2) = single_species(grid, m, &phi2, m1 + m2)?;
        let w1 = m1 / (m1 + m2);
        let r1 = r.iter().map(|v| w1 * v).collect();
        let r2 = r.iter().map(|v| (1.0 - w1) * v).collect();
        return finish(r1, r2, Some(c2 + delta), Some(c2), true);
    }

    let d: Vec<f64> = phi1.iter().zip(&phi2).map(|(a, b)| a - b).collect();
    let prob = EqProblem {
        grid,
        m,
        phi1,
        phi2,
        d,
    };
    let total_mass = m1 + m2;
    let dmin = prob.d.iter().copied().fold(f64::INFINITY, f64::min);
    let dmax = prob.d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // species 1 owns nothing below dmin and everything above dmax
    let (mut lo, mut hi) = (dmin - 1.0, dmax + 1.0);
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if prob.state(mid, total_mass, 0.0, 0.0)?.mass1 < m1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let upper = prob.state(hi, total_mass, 0.0, 0.0)?;
    let lower = prob.state(lo, total_mass, 0.0, 0.0)?;
    let tol = 1e-13 * total_mass;
    let (state, delta) = if (upper.mass1 - m1).abs() <= tol {
        (upper, hi)
    } else if (lower.mass1 - m1).abs() <= tol {
        (lower, lo)
    } else {
        // mass jumps across the bracket: the cells with d in [lo, hi) are tied
        let scale = dmax.abs().max(dmin.abs()).max(1.0);
        let tie = prob
            .d
            .iter()
            .copied()
            .filter(|&v| v >= lo && v < hi)
            .fold(f64::NAN, f64::max);
        if tie.is_nan() {
            return Err(Error::BisectionFailure("species masses not attainable".into()));
        }
        let tie_tol = 1e-14 * scale;
        let none = prob.state(tie, total_mass, tie_tol, 0.0)?;
        let all = prob.state(tie, total_mass, tie_tol, 1.0)?;
        let span = all.mass1 - none.mass1;
        let w1 = if span > 0.0 { ((m1 - none.mass1) / span).clamp(0.0, 1.0) } else { 0.0 };
        (prob.state(tie, total_mass, tie_tol, w1)?, tie)
    };
    let c1 = state.c1;
    finish(state.r1, state.r2, Some(c1), Some(c1 - delta), false)
}

/// Per-cell gap `p − max(C₁ − Φ₁/κ₁, C₂ − Φ₂/κ₂, 0)` of an equilibrium,
/// with `p` the pressure law of its total density.
pub fn equilibrium_residual(eq: &Equilibrium, params: &ModelParams) -> Result<Vec<f64>> {
    let m = params.exponent.finite().ok_or_else(|| {
        Error::InvalidParams("equilibrium requires finite m".into())
    })?;
    let grid = eq.pair.grid();
    let phi = [params.weighted_potential(0, grid), params.weighted_potential(1, grid)];
    let consts = [eq.c1, eq.c2];
    Ok(eq
        .pair
        .total()
        .iter()
        .enumerate()
        .map(|(j, &u)| {
            let mut target: f64 = 0.0;
            for i in 0..2 {
                if let Some(c) = consts[i] {
                    target = target.max(c - phi[i][j]);
                }
            }
            pressure_of(u, m) - target
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn params(m: Exponent, phis: [PotentialSpec; 2], masses: [f64; 2]) -> ModelParams {
        ModelParams::new(m, [1.0, 1.0], phis, masses, 1.0, 0.1).unwrap()
    }

    fn uniform_pair(g: Grid, a: f64, b: f64) -> DensityPair {
        DensityPair::new(
            DensityField::new(g, vec![a; g.n_cells()]).unwrap(),
            DensityField::new(g, vec![b; g.n_cells()]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn horner_and_slopes() {
        let q = PotentialSpec::Quadratic { a: 2.0, b: -1.0, c: 0.5 };
        for x in [-1.0, 0.0, 0.3, 2.0] {
            assert!((q.value(x) - (2.0 * x * x - x + 0.5)).abs() < 1e-14);
            let fd = (q.value(x + 1e-6) - q.value(x - 1e-6)) / 2e-6;
            assert!((fd - q.slope(x)).abs() < 1e-6);
        }
        assert_eq!(q.curvature(0.7), 4.0);
        let pl = PotentialSpec::PiecewiseLinear {
            points: vec![(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)],
        };
        assert_eq!(pl.value(0.25), 0.5);
        assert_eq!(pl.slope(0.75), -2.0);
        assert_eq!(pl.value(2.0), 0.0);
        assert_eq!(pl.sup_norm(0.0, 1.0), 1.0);
        assert_eq!(pl.slope_sup_norm(0.0, 1.0), 2.0);
        assert_eq!(q.sup_norm(-1.0, 1.0), 3.5);
        assert_eq!(q.slope_sup_norm(-1.0, 1.0), 5.0);
    }

    #[test]
    fn params_validation() {
        let z = [PotentialSpec::zero(), PotentialSpec::zero()];
        let ok = |e, k, ms, t, tau| ModelParams::new(e, k, z.clone(), ms, t, tau);
        assert!(ok(Exponent::Finite(1.0), [1.0, 1.0], [1.0, 1.0], 1.0, 0.1).is_err());
        assert!(ok(Exponent::Finite(2.0), [0.0, 1.0], [1.0, 1.0], 1.0, 0.1).is_err());
        assert!(ok(Exponent::Finite(2.0), [1.0, 1.0], [-1.0, 1.0], 1.0, 0.1).is_err());
        assert!(ok(Exponent::Finite(2.0), [1.0, 1.0], [1.0, 1.0], 1.0, 0.3).is_err());
        let p = ok(Exponent::Finite(2.0), [1.0, 1.0], [1.0, 0.0], 0.5, 0.01).unwrap();
        assert_eq!(p.n_steps(), 50);
        let inc = ok(Exponent::Incompressible, [1.0, 1.0], [0.5, 0.5], 1.0, 0.1).unwrap();
        assert!(inc.check_domain(&Grid::new(0.0, 1.0, 8).unwrap()).is_err());
        assert!(inc.check_domain(&Grid::new(0.0, 1.5, 8).unwrap()).is_ok());
    }

    #[test]
    fn internal_energy_examples() {
        let g = Grid::new(0.0, 1.0, 8).unwrap();
        let z = [PotentialSpec::zero(), PotentialSpec::zero()];
        let p2 = params(Exponent::Finite(2.0), z.clone(), [0.5, 0.5]);
        assert!((internal_energy(&uniform_pair(g, 0.5, 0.5), &p2).unwrap() - 1.0).abs() < 1e-14);
        let p3 = params(Exponent::Finite(3.0), z.clone(), [0.5, 0.5]);
        assert!((internal_energy(&uniform_pair(g, 0.5, 0.5), &p3).unwrap() - 0.5).abs() < 1e-14);
        let pi = params(Exponent::Incompressible, z, [0.5, 0.5]);
        let mut v = vec![0.5; 8];
        v[3] = 0.7;
        let over = DensityPair::new(
            DensityField::new(g, v).unwrap(),
            DensityField::new(g, vec![0.5; 8]).unwrap(),
        )
        .unwrap();
        assert_eq!(internal_energy(&over, &pi), None);
        assert_eq!(internal_energy(&uniform_pair(g, 0.5, 0.5), &pi), Some(0.0));
    }

    #[test]
    fn potential_energy_examples() {
        let g = Grid::new(0.0, 1.0, 64).unwrap();
        let lin = params(
            Exponent::Finite(2.0),
            [PotentialSpec::Linear { a: 1.0, b: 0.0 }, PotentialSpec::zero()],
            [1.0, 0.0],
        );
        assert!((potential_energy(&uniform_pair(g, 1.0, 0.0), &lin) - 0.5).abs() < 1e-14);
        let z = params(
            Exponent::Finite(2.0),
            [PotentialSpec::zero(), PotentialSpec::zero()],
            [1.0, 0.0],
        );
        assert_eq!(potential_energy(&uniform_pair(g, 1.0, 0.0), &z), 0.0);

        let g = Grid::new(0.0, 1.0, 1001).unwrap();
        let sq = params(
            Exponent::Finite(2.0),
            [PotentialSpec::Quadratic { a: 1.0, b: 0.0, c: 0.0 }, PotentialSpec::zero()],
            [1.0, 0.0],
        );
        let mut v = vec![0.0; 1001];
        v[500] = 1.0 / g.h();
        let delta = DensityPair::new(
            DensityField::new(g, v).unwrap(),
            DensityField::zeros(g),
        )
        .unwrap();
        assert!((potential_energy(&delta, &sq) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn pressure_examples() {
        let g = Grid::new(0.0, 1.0, 4).unwrap();
        let p = pressure_finite_m(&uniform_pair(g, 0.25, 0.75), 2.0).unwrap();
        assert!(p.values().iter().all(|v| (v - 2.0).abs() < 1e-14));
        let p = pressure_finite_m(&uniform_pair(g, 0.0, 0.0), 2.0).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
        let p = pressure_finite_m(&uniform_pair(g, 0.5, 0.0), 3.0).unwrap();
        assert!(p.values().iter().all(|v| (v - 0.375).abs() < 1e-14));
        assert!(pressure_finite_m(&uniform_pair(g, 0.5, 0.0), 1.0).is_err());
    }

    #[test]
    fn single_species_quadratic_well() {
        let g = Grid::new(-1.0, 1.0, 512).unwrap();
        let p = params(
            Exponent::Finite(2.0),
            [PotentialSpec::Quadratic { a: 1.0, b: 0.0, c: 0.0 }, PotentialSpec::zero()],
            [2.0 / 3.0, 0.0],
        );
        let eq = equilibrium(&p, &g).unwrap();
        assert_eq!(eq.c2, None);
        assert!(!eq.degenerate && !eq.multi_component);
        let mass = eq.pair.first().mass();
        assert!((mass - 2.0 / 3.0).abs() < 1e-10);
        // midpoint mass differs from the continuum at O(h²)
        assert!((eq.c1.unwrap() - 1.0).abs() < 1e-4);
        for (j, &r) in eq.pair.first().values().iter().enumerate() {
            let x = g.center(j);
            assert!((r - pos(1.0 - x * x) / 2.0).abs() < 1e-4);
        }
        let res = equilibrium_residual(&eq, &p).unwrap();
        assert!(res.iter().all(|r| r.abs() < 1e-10));
    }

    #[test]
    fn tie_case_is_degenerate() {
        let g = Grid::new(-1.0, 1.0, 128).unwrap();
        let p = params(
            Exponent::Finite(2.0),
            [
                PotentialSpec::Quadratic { a: 1.0, b: 0.0, c: 0.3 },
                PotentialSpec::Quadratic { a: 1.0, b: 0.0, c: 0.0 },
            ],
            [0.2, 0.4],
        );
        let eq = equilibrium(&p, &g).unwrap();
        assert!(eq.degenerate);
        assert!((eq.pair.first().mass() - 0.2).abs() < 1e-10);
        assert!((eq.pair.second().mass() - 0.4).abs() < 1e-10);
    }

    #[test]
    fn two_wells_nest() {
        let g = Grid::new(-1.0, 1.0, 256).unwrap();
        let p = params(
            Exponent::Finite(2.0),
            [
                PotentialSpec::Quadratic { a: 1.0, b: 0.0, c: 0.0 },
                PotentialSpec::Quadratic { a: 2.0, b: 0.0, c: 0.0 },
            ],
            [0.3, 0.3],
        );
        let eq = equilibrium(&p, &g).unwrap();
        assert!(!eq.degenerate);
        let [m1, m2] = eq.pair.masses();
        assert!((m1 - 0.3).abs() < 1e-8 * 0.3);
        assert!((m2 - 0.3).abs() < 1e-8 * 0.3);
        // species 2 sits in the middle, species 1 outside it
        let r1 = eq.pair.first().values();
        let r2 = eq.pair.second().values();
        assert!(r2[128] > 0.0 && r1[128] == 0.0);
        let outer = r1.iter().position(|&v| v > 0.0).unwrap();
        let inner = r2.iter().position(|&v| v > 0.0).unwrap();
        assert!(outer < inner);
        assert!(eq.multi_component);
    }
}
