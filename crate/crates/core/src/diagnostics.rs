//! Theorem checkers and refinement studies.
//!
//! Everything here reads finished states or trajectories. The studies are the
//! only functions that run the solver themselves.

use alloc::string::String;
use alloc::vec::Vec;

use crate::energy::{Exponent, ModelParams, FEAS_TOL};
use crate::error::{Error, Result};
use crate::interp::{piecewise_constant_sample, trajectory_velocity, TestFunction};
use crate::jko::{explicit_transport_step, run_trajectory, SolverConfig, Trajectory};
use crate::math::{cos, ln, powf, sin, sqrt};
use crate::measure::{w2_squared, DensityField, DensityPair, PotentialField};

/// Relative slack of the a-priori bound checks.
pub const BOUND_TOL: f64 = 1e-6;

/// `ε_patch`: a cell counts as saturated when its density exceeds `1 − ε_patch`.
pub const PATCH_EPS: f64 = 1e-3;

/// Length of the cells where both species exceed `eps`.
pub fn overlap_measure(pair: &DensityPair, eps: f64) -> f64 {
    let h = pair.grid().h();
    let (a, b) = (pair.first().values(), pair.second().values());
    h * a.iter().zip(b).filter(|(x, y)| **x > eps && **y > eps).count() as f64
}

/// Extent of `{ρ > eps}` by cell centers. An empty support has `empty` set
/// and both ends at the grid's left boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportInterval {
    pub inf_support: f64,
    pub sup_support: f64,
    pub total_support_length: f64,
    pub empty: bool,
}

pub fn support_interval(rho: &DensityField, eps: f64) -> SupportInterval {
    let g = rho.grid();
    let cells: Vec<usize> = (0..g.n_cells()).filter(|&j| rho.value(j) > eps).collect();
    match (cells.first(), cells.last()) {
        (Some(&a), Some(&b)) => SupportInterval {
            inf_support: g.center(a),
            sup_support: g.center(b),
            total_support_length: g.h() * cells.len() as f64,
            empty: false,
        },
        _ => SupportInterval {
            inf_support: g.left(),
            sup_support: g.left(),
            total_support_length: 0.0,
            empty: true,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingCheck {
    /// Species 2 lies left of species 1, one shared cell allowed.
    pub ordered: bool,
    /// Distance between the facing support edges, `inf supp ρ¹ − sup supp ρ²`
    /// by cell edges (−h for one shared cell); `None` when a species is absent.
    pub gap: Option<f64>,
}

pub fn ordering_check(pair: &DensityPair, eps: f64) -> OrderingCheck {
    let s1 = support_interval(pair.first(), eps);
    let s2 = support_interval(pair.second(), eps);
    if s1.empty || s2.empty {
        return OrderingCheck { ordered: true, gap: None };
    }
    let h = pair.grid().h();
    let gap = s1.inf_support - s2.sup_support - h;
    OrderingCheck {
        ordered: gap >= -h * (1.0 + 1e-9),
        gap: Some(gap),
    }
}

/// One a-priori estimate: `satisfied ⇔ lhs ≤ rhs + tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub satisfied: bool,
    pub margin: f64,
}

impl BoundReport {
    fn new(name: &str, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        BoundReport {
            name: name.into(),
            lhs,
            rhs,
            tolerance,
            satisfied: lhs <= rhs + tolerance,
            margin: rhs - lhs,
        }
    }

    fn relative(name: &str, lhs: f64, rhs: f64) -> Self {
        Self::new(name, lhs, rhs, BOUND_TOL * rhs.abs().max(1.0))
    }
}

/// Run data entering the estimates, with `Φᵢ/κᵢ` in place of `Φᵢ`.
struct BoundData {
    phi_mass: f64,
    slope_mass: f64,
    kappa_min: f64,
    initial_lm: Option<f64>,
    horizon: f64,
    length: f64,
}

fn lm_power(total: &[f64], h: f64, m: f64) -> f64 {
    h * total.iter().map(|u| powf(*u, m)).sum::<f64>()
}

fn bound_data(traj: &Trajectory) -> BoundData {
    let p = &traj.params;
    let g = traj.grid();
    let (l, r) = (g.left(), g.right());
    let mut phi_mass = 0.0;
    let mut slope_mass = 0.0;
    for i in 0..2 {
        let k = p.kappa[i];
        phi_mass += p.masses[i] * p.potentials[i].sup_norm(l, r) / k;
        slope_mass += p.masses[i] * powf(p.potentials[i].slope_sup_norm(l, r) / k, 2.0);
    }
    BoundData {
        phi_mass,
        slope_mass,
        kappa_min: p.kappa[0].min(p.kappa[1]),
        initial_lm: p.exponent.finite().map(|m| lm_power(&traj.pairs[0].total(), g.h(), m)),
        horizon: traj.time(traj.n_steps()),
        length: g.length(),
    }
}

/// Evaluates the energy-dissipation inequality and the bounds `C₁ … C₅`
/// on a finished trajectory. Unequal mobilities enter through `Φᵢ/κᵢ` and
/// `W₂²/κᵢ`, which reduce to the unweighted forms at `κ = 1`.
///
/// For `m = ∞` only `C₁` (as `max(ρ¹ + ρ²) ≤ 1`), `C₂` and the dissipation
/// inequality apply.
pub fn check_apriori_bounds(traj: &Trajectory) -> Vec<BoundReport> {
    let d = bound_data(traj);
    let p = &traj.params;
    let g = traj.grid();
    let h = g.h();
    let n = traj.n_steps();
    let tau = traj.tau();
    let mut out = Vec::new();

    let weighted: f64 = traj
        .records
        .iter()
        .map(|r| r.w2_sq[0] / p.kappa[0] + r.w2_sq[1] / p.kappa[1])
        .sum::<f64>();
    let energies = traj.energies();
    let drop = energies[0].total - energies[n].total;
    out.push(BoundReport::new("dissipation", weighted / (2.0 * tau), drop, n as f64 * 1e-8));

    match p.exponent {
        Exponent::Incompressible => {
            let max = traj.pairs[1..]
                .iter()
                .flat_map(|q| q.total())
                .fold(0.0, f64::max);
            out.push(BoundReport::new("C1", max, 1.0, FEAS_TOL));
            out.push(BoundReport::relative("C2", weighted / tau, 4.0 * d.phi_mass));
        }
        Exponent::Finite(m) => {
            let lm0 = d.initial_lm.unwrap_or(0.0);
            let c1 = powf((2.0 * m - 2.0) * d.phi_mass + lm0, 1.0 / m);
            let c2 = 2.0 / (m - 1.0) * lm0 + 4.0 * d.phi_mass;
            let c3 = core::f64::consts::SQRT_2 * (m - 0.5) / m
                * sqrt(c2 / d.kappa_min + d.horizon * d.slope_mass);
            let c_omega = d.length / core::f64::consts::PI;
            let c4 = core::f64::consts::SQRT_2
                * sqrt(c_omega * c_omega * c3 * c3
                    + d.horizon * powf(c1, 2.0 * m - 1.0) * powf(d.length, 1.0 / m - 1.0));

            let mut lm_max: f64 = 0.0;
            let mut grad_sq = 0.0;
            let mut l2_sq = 0.0;
            let mut lq = [0.0; 2];
            for pair in &traj.pairs[1..] {
                let total = pair.total();
                let norm = powf(lm_power(&total, h, m), 1.0 / m);
                lm_max = lm_max.max(norm);
                lq[0] += tau * norm;
                lq[1] += tau * norm * norm;
                let w: Vec<f64> = total.iter().map(|u| powf(*u, m - 0.5)).collect();
                grad_sq += tau * w.windows(2).map(|e| powf((e[1] - e[0]) / h, 2.0)).sum::<f64>() * h;
                l2_sq += tau * h * w.iter().map(|x| x * x).sum::<f64>();
            }
            out.push(BoundReport::relative("C1", lm_max, c1));
            out.push(BoundReport::relative("C2", weighted / tau, c2));
            out.push(BoundReport::relative("C3", sqrt(grad_sq), c3));
            out.push(BoundReport::relative("C4", sqrt(l2_sq), c4));
            out.push(BoundReport::relative("C5(q=1)", lq[0], d.horizon * c1));
            out.push(BoundReport::relative("C5(q=2)", sqrt(lq[1]), sqrt(d.horizon) * c1));
        }
    }
    out
}

/// `h Σ |p (1 − ρ¹ − ρ²)|`.
pub fn complementarity_residual(pair: &DensityPair, p: &PotentialField) -> f64 {
    let h = pair.grid().h();
    h * pair
        .total()
        .iter()
        .zip(p.values())
        .map(|(u, p)| (p * (1.0 - u)).abs())
        .sum::<f64>()
}

/// `h Σ |∂ₓp (1 − ρ¹ − ρ²)|` over cells with `p > eps`, centered differences.
/// Vanishes when the pressure only varies on the saturated set.
pub fn pressure_gradient_residual(pair: &DensityPair, p: &PotentialField, eps: f64) -> f64 {
    let g = pair.grid();
    let n = g.n_cells();
    let h = g.h();
    let total = pair.total();
    let pv = p.values();
    let mut acc = 0.0;
    for k in 0..n {
        if !(pv[k] > eps) {
            continue;
        }
        let dp = match (k > 0, k + 1 < n) {
            (true, true) => (pv[k + 1] - pv[k - 1]) / (2.0 * h),
            (true, false) => (pv[k] - pv[k - 1]) / h,
            (false, true) => (pv[k + 1] - pv[k]) / h,
            (false, false) => 0.0,
        };
        acc += h * (dp * (1.0 - total[k])).abs();
    }
    acc
}

/// Space-time test function `φ(t, x) = cos(ωt)·ψ(x)` with `ω = time_mode·π/T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeTest {
    pub space: TestFunction,
    pub time_mode: u32,
}

impl SpaceTimeTest {
    pub const CONSTANT: SpaceTimeTest = SpaceTimeTest {
        space: TestFunction::CONSTANT,
        time_mode: 0,
    };

    fn omega(&self, horizon: f64) -> f64 {
        self.time_mode as f64 * core::f64::consts::PI / horizon
    }
}

/// Weak form of the continuity equation on the piecewise-constant
/// interpolation over `[s, t]`:
/// `|∫ρ̃ₜφ(t) − ∫ρ̃ₛφ(s) − ∫∫ρ̃ ∂ₜφ − ∫∫ρ̃ ṽ ∂ₓφ|` per species, time
/// integrals by the trapezoid rule on each step interval.
pub fn weak_form_residual(traj: &Trajectory, test: SpaceTimeTest, window: (f64, f64), eps: f64) -> Result<[f64; 2]> {
    let (s, t) = window;
    let horizon = traj.time(traj.n_steps());
    if !(s < t) || s < 0.0 || t > horizon * (1.0 + 1e-12) {
        return Err(Error::OutOfRange(alloc::format!("window [{s}, {t}] not inside [0, {horizon}]")));
    }
    let g = traj.grid();
    let h = g.h();
    let w = test.omega(horizon);
    let theta = |t: f64| cos(w * t);
    let dtheta = |t: f64| -w * sin(w * t);
    let (psi, dpsi) = test.space.sample(g);
    let dot = |a: &[f64], b: &[f64]| h * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut out = [0.0; 2];
    for (i, slot) in out.iter_mut().enumerate() {
        let at = |t: f64| -> Result<f64> {
            Ok(dot(piecewise_constant_sample(traj, t)?.species(i).values(), &psi))
        };
        let mut acc = theta(t) * at(t)? - theta(s) * at(s)?;
        for k in 0..traj.n_steps() {
            let a = traj.time(k).max(s);
            let b = traj.time(k + 1).min(t);
            if b <= a {
                continue;
            }
            let rho = traj.pairs[k + 1].species(i);
            let half = 0.5 * (b - a);
            acc -= half * (dtheta(a) + dtheta(b)) * dot(rho.values(), &psi);
            if rho.mass() > 0.0 {
                let v = trajectory_velocity(traj, k, i, eps)?;
                let flux: f64 = rho
                    .values()
                    .iter()
                    .zip(v.values())
                    .zip(&dpsi)
                    .map(|((r, v), d)| v.map_or(0.0, |v| r * v * d))
                    .sum::<f64>()
                    * h;
                acc -= half * (theta(a) + theta(b)) * flux;
            }
        }
        *slot = acc.abs();
    }
    Ok(out)
}

/// Length of `{ρ¹ + ρ² > 1 + δ}`.
pub fn saturation_tail(total: &DensityField, delta: f64) -> f64 {
    let g = total.grid();
    g.h() * total.values().iter().filter(|u| **u > 1.0 + delta).count() as f64
}

/// `h Σ |ρ − 1|` over `{ρ > eps}`: zero exactly for an indicator.
pub fn patch_deviation(rho: &DensityField, eps: f64) -> f64 {
    let h = rho.grid().h();
    h * rho.values().iter().filter(|r| **r > eps).map(|r| (r - 1.0).abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Outward normal of the saturated set at this end.
    pub fn normal(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }

    fn flip(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Saturated core of a species: the longest run of cells above
/// `1 − ε_patch`, inside a support that has no holes. The ends are placed by
/// pushing the remaining support mass on each side against the core, which
/// tolerates the partially filled cells a grid leaves next to a moving edge.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Patch {
    first: usize,
    last: usize,
    left: f64,
    right: f64,
}

fn find_patch(rho: &DensityField, eps_patch: f64, eps: f64) -> Option<Patch> {
    let g = rho.grid();
    let n = g.n_cells();
    let v = rho.values();
    let lo = (0..n).find(|&j| v[j] > eps)?;
    let hi = (0..n).rev().find(|&j| v[j] > eps)?;
    if (lo..=hi).any(|j| v[j] <= eps) {
        return None;
    }
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for j in lo..=hi + 1 {
        let sat = j <= hi && v[j] > 1.0 - eps_patch;
        match (sat, start) {
            (true, None) => start = Some(j),
            (false, Some(a)) => {
                if best.is_none_or(|(b0, b1)| j - a > b1 + 1 - b0) {
                    best = Some((a, j - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    let (first, last) = best?;
    let h = g.h();
    let left = g.edge(first) - h * v[lo..first].iter().sum::<f64>();
    let right = g.edge(last + 1) + h * v[last + 1..=hi].iter().sum::<f64>();
    Some(Patch { first, last, left, right })
}

/// One end of a saturated patch at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointRecord {
    pub species: usize,
    pub side: Side,
    /// Sub-cell position: the partially filled neighbour cell adds its mass.
    pub position: f64,
    /// Central difference of positions over `2τ`.
    pub velocity: Option<f64>,
    /// `ν·(−κᵢ∂ₓp − ∂ₓΦᵢ)` with `∂ₓp` one-sided from inside the patch.
    pub law_velocity: Option<f64>,
    pub residual: Option<f64>,
    /// The other species' patch ends within one cell.
    pub contact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceStep {
    pub step: usize,
    pub time: f64,
    /// False when either present species is not a patch; nothing else is
    /// filled in then.
    pub patch: bool,
    pub endpoints: Vec<EndpointRecord>,
    /// Mismatch of the one-sided velocities `−κᵢ∂ₓⁱp − ∂ₓΦᵢ` at a contact
    /// already present at the previous step.
    pub flux_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceReport {
    pub steps: Vec<InterfaceStep>,
    pub max_endpoint_residual: f64,
    pub max_contact_endpoint_residual: f64,
    pub max_flux_residual: f64,
    pub skipped_steps: usize,
}

fn inside_slope(p: &[f64], patch: &Patch, side: Side, h: f64) -> Option<f64> {
    if patch.last <= patch.first {
        return None;
    }
    Some(match side {
        Side::Left => (p[patch.first + 1] - p[patch.first]) / h,
        Side::Right => (p[patch.last] - p[patch.last - 1]) / h,
    })
}

/// Tracks the ends of the saturated patches over an `m = ∞` run and compares
/// their speed with the velocity law, one-phase and two-phase.
pub fn interface_report(traj: &Trajectory, eps_patch: f64, eps: f64) -> InterfaceReport {
    let g = traj.grid();
    let h = g.h();
    let p = &traj.params;
    let present: Vec<usize> = (0..2).filter(|&i| p.species_present(i)).collect();
    let patches: Vec<Option<[Option<Patch>; 2]>> = traj
        .pairs
        .iter()
        .map(|pair| {
            let mut out = [None, None];
            for &i in &present {
                out[i] = Some(find_patch(pair.species(i), eps_patch, eps)?);
            }
            Some(out)
        })
        .collect();
    let position = |k: usize, i: usize, side: Side| -> Option<f64> {
        let q = patches.get(k)?.as_ref()?[i]?;
        Some(match side {
            Side::Left => q.left,
            Side::Right => q.right,
        })
    };

    // the end of species i on `side` meets the facing end of the other species
    let touching = |k: usize, i: usize, side: Side| -> bool {
        let other = 1 - i;
        let (Some(x), Some(y)) = (position(k, i, side), position(k, other, side.flip())) else {
            return false;
        };
        (x - y).abs() <= h
    };

    let mut report = InterfaceReport {
        steps: Vec::new(),
        max_endpoint_residual: 0.0,
        max_contact_endpoint_residual: 0.0,
        max_flux_residual: 0.0,
        skipped_steps: 0,
    };
    for (k, entry) in patches.iter().enumerate() {
        let Some(here) = entry else {
            report.skipped_steps += 1;
            report.steps.push(InterfaceStep {
                step: k,
                time: traj.time(k),
                patch: false,
                endpoints: Vec::new(),
                flux_residual: None,
            });
            continue;
        };
        let pressure = traj.pressures[k].values();
        let mut endpoints = Vec::new();
        let mut contact_law: [Option<f64>; 2] = [None, None];
        for &i in &present {
            let q = here[i].unwrap();
            for side in [Side::Left, Side::Right] {
                let x = position(k, i, side).unwrap();
                let velocity = match (k.checked_sub(1).and_then(|a| position(a, i, side)), position(k + 1, i, side)) {
                    (Some(a), Some(b)) => Some((b - a) / (2.0 * traj.tau())),
                    _ => None,
                };
                let edge_cell = match side {
                    Side::Left => q.first,
                    Side::Right => q.last,
                };
                let law = inside_slope(pressure, &q, side, h)
                    .map(|dp| -p.kappa[i] * dp - p.potentials[i].slope(g.center(edge_cell)));
                let contact = present.contains(&(1 - i)) && touching(k, i, side);
                // the pressure of step k drives the motion from k - 1, so
                // flux matching needs the contact to predate the step
                let held = contact && k > 0 && touching(k - 1, i, side);
                // a wall end does not move
                let at_wall = (side == Side::Left && q.first == 0) || (side == Side::Right && q.last + 1 == g.n_cells());
                let law = if at_wall { Some(0.0) } else { law };
                let residual = match (velocity, law) {
                    (Some(v), Some(l)) => Some((v - l).abs()),
                    _ => None,
                };
                if let Some(r) = residual {
                    if contact {
                        report.max_contact_endpoint_residual = report.max_contact_endpoint_residual.max(r);
                    } else {
                        report.max_endpoint_residual = report.max_endpoint_residual.max(r);
                    }
                }
                if held && !at_wall {
                    contact_law[i] = law;
                }
                endpoints.push(EndpointRecord {
                    species: i,
                    side,
                    position: x,
                    velocity,
                    law_velocity: law,
                    residual,
                    contact,
                });
            }
        }
        let flux_residual = match contact_law {
            [Some(a), Some(b)] => Some((a - b).abs()),
            _ => None,
        };
        if let Some(r) = flux_residual {
            report.max_flux_residual = report.max_flux_residual.max(r);
        }
        report.steps.push(InterfaceStep {
            step: k,
            time: traj.time(k),
            patch: true,
            endpoints,
            flux_residual,
        });
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioCheck {
    /// `r ρ¹ ≤ ρ² + tol` held on the mixed region before the step.
    pub premise: bool,
    /// Same inequality on the mixed region after the step.
    pub holds: bool,
    /// Largest `r ρ¹ − ρ²` on the after mixed region (0 when it is empty).
    pub worst_excess: f64,
}

fn ratio_excess(pair: &DensityPair, r: f64, eps: f64) -> f64 {
    let (a, b) = (pair.first().values(), pair.second().values());
    a.iter()
        .zip(b)
        .filter(|(x, y)| **x > eps && **y > eps)
        .map(|(x, y)| r * x - y)
        .fold(0.0, f64::max)
}

/// Preservation of `r ρ¹ ≤ ρ²` on the mixed region `{ρ¹ > eps, ρ² > eps}`.
pub fn ratio_preservation_check(
    before: &DensityPair,
    after: &DensityPair,
    r: f64,
    eps: f64,
    tol: f64,
) -> RatioCheck {
    let worst = ratio_excess(after, r, eps);
    RatioCheck {
        premise: ratio_excess(before, r, eps) <= tol,
        holds: worst <= tol,
        worst_excess: worst,
    }
}

/// `W₂` between two pairs, `√(W₂²(ρ¹, ν¹) + W₂²(ρ², ν²))`; absent species
/// contribute nothing.
pub fn pair_distance(a: &DensityPair, b: &DensityPair) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..2 {
        let (x, y) = (a.species(i), b.species(i));
        if x.mass() > 0.0 || y.mass() > 0.0 {
            acc += w2_squared(x, y)?;
        }
    }
    Ok(sqrt(acc.max(0.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementLevel {
    pub tau: f64,
    /// Sup over the coarser level's nodes of the distance to the next finer
    /// level; `None` on the finest level.
    pub sup_distance_to_next: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTable {
    pub levels: Vec<RefinementLevel>,
    /// Successive distance ratios `dₗ₊₁ / dₗ`.
    pub contraction: Vec<f64>,
    pub strictly_decreasing: bool,
}

fn run_levels(initial: &DensityPair, params: &ModelParams, levels: usize, solver: &SolverConfig) -> Result<Vec<Trajectory>> {
    (0..levels)
        .map(|l| {
            let p = params.with_tau(params.tau / powf(2.0, l as f64))?;
            run_trajectory(initial, &p, solver)
        })
        .collect()
}

/// Runs at `τ, τ/2, …` and measures the distance between consecutive levels
/// at the coarser level's nodes, piecewise-constant samples on both sides.
pub fn tau_refinement_study(
    initial: &DensityPair,
    params: &ModelParams,
    levels: usize,
    solver: &SolverConfig,
) -> Result<RefinementTable> {
    if levels < 2 {
        return Err(Error::InvalidParams("a refinement study needs at least two levels".into()));
    }
    let runs = run_levels(initial, params, levels, solver)?;
    let mut table = RefinementTable {
        levels: Vec::new(),
        contraction: Vec::new(),
        strictly_decreasing: true,
    };
    let mut prev: Option<f64> = None;
    for l in 0..levels {
        let d = match runs.get(l + 1) {
            Some(fine) => {
                let coarse = &runs[l];
                let mut sup: f64 = 0.0;
                for k in 0..=coarse.n_steps() {
                    let t = coarse.time(k);
                    let a = piecewise_constant_sample(coarse, t)?;
                    let b = piecewise_constant_sample(fine, t.min(fine.time(fine.n_steps())))?;
                    sup = sup.max(pair_distance(a, b)?);
                }
                if let Some(p) = prev {
                    table.contraction.push(sup / p);
                    table.strictly_decreasing &= sup < p;
                }
                prev = Some(sup);
                Some(sup)
            }
            None => None,
        };
        table.levels.push(RefinementLevel {
            tau: runs[l].tau(),
            sup_distance_to_next: d,
        });
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitComparison {
    pub taus: Vec<f64>,
    /// `W₂` at the final time between the explicit and the implicit run.
    pub final_distance: Vec<f64>,
    /// Least-squares slope of `log d` against `log τ`.
    pub order: f64,
}

/// Explicit transport steps against the implicit trajectory at `τ, τ/2, …`
/// (finite `m` only).
pub fn explicit_refinement_study(
    initial: &DensityPair,
    params: &ModelParams,
    levels: usize,
    solver: &SolverConfig,
) -> Result<ExplicitComparison> {
    if params.exponent.finite().is_none() {
        return Err(Error::InvalidParams("the explicit comparison needs finite m".into()));
    }
    if levels < 2 {
        return Err(Error::InvalidParams("a refinement study needs at least two levels".into()));
    }
    let runs = run_levels(initial, params, levels, solver)?;
    let mut taus = Vec::new();
    let mut dist = Vec::new();
    for run in &runs {
        let mut state = initial.clone();
        for _ in 0..run.n_steps() {
            state = explicit_transport_step(&state, &run.params)?;
        }
        taus.push(run.tau());
        dist.push(pair_distance(&state, run.pairs.last().unwrap())?);
    }
    let order = log_slope(&taus, &dist);
    Ok(ExplicitComparison {
        taus,
        final_distance: dist,
        order,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (ln(*a), ln(*b)))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct MSweepRow {
    pub exponent: Exponent,
    /// Largest `saturation_tail` over the run, for `δ = 0.05` and `δ = 0.1`.
    pub tails: [f64; 2],
    /// Final-time distance to the `m = ∞` run.
    pub distance_to_limit: Option<f64>,
    /// `sup |(ρ¹ + ρ²)^m − p_∞|` at the final time on the `m = ∞` saturated set.
    pub pressure_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MSweepTable {
    pub rows: Vec<MSweepRow>,
    /// Complementarity residual of the `m = ∞` run at every step.
    pub complementarity: Vec<f64>,
}

pub const TAIL_DELTAS: [f64; 2] = [0.05, 0.1];

/// Runs every exponent of `m_list` from the same data, plus `m = ∞` if it
/// is not listed, and compares each with the incompressible run.
pub fn m_sweep_study(
    initial: &DensityPair,
    params: &ModelParams,
    m_list: &[Exponent],
    solver: &SolverConfig,
) -> Result<MSweepTable> {
    if m_list.is_empty() {
        return Err(Error::InvalidParams("the m-sweep needs at least one exponent".into()));
    }
    let max = initial.total().into_iter().fold(0.0, f64::max);
    if max > 1.0 + FEAS_TOL {
        return Err(Error::Infeasible(alloc::format!(
            "the m-sweep needs initial total ≤ 1, got {max}"
        )));
    }
    let limit = run_trajectory(initial, &params.with_exponent(Exponent::Incompressible)?, solver)?;
    let limit_pair = limit.pairs.last().unwrap();
    let limit_p = limit.pressures.last().unwrap().values();
    let saturated: Vec<bool> = limit_pair.total().iter().map(|u| *u > 1.0 - PATCH_EPS).collect();
    let mut list = m_list.to_vec();
    if !list.contains(&Exponent::Incompressible) {
        list.push(Exponent::Incompressible);
    }
    let mut rows = Vec::new();
    for &e in &list {
        let run = match e {
            Exponent::Incompressible => limit.clone(),
            _ => run_trajectory(initial, &params.with_exponent(e)?, solver)?,
        };
        let mut tails = [0.0f64; 2];
        for pair in &run.pairs {
            let total = pair.total_field();
            for (t, d) in tails.iter_mut().zip(TAIL_DELTAS) {
                *t = t.max(saturation_tail(&total, d));
            }
        }
        let last = run.pairs.last().unwrap();
        let (distance_to_limit, pressure_gap) = match e {
            Exponent::Incompressible => (Some(0.0), Some(0.0)),
            Exponent::Finite(m) => {
                let gap = last
                    .total()
                    .iter()
                    .zip(limit_p)
                    .zip(&saturated)
                    .filter(|(_, s)| **s)
                    .map(|((u, p), _)| (powf(*u, m) - p).abs())
                    .fold(None, |a: Option<f64>, x| Some(a.map_or(x, |a| a.max(x))));
                (Some(pair_distance(last, limit_pair)?), gap)
            }
        };
        rows.push(MSweepRow {
            exponent: e,
            tails,
            distance_to_limit,
            pressure_gap,
        });
    }
    let complementarity = limit
        .pairs
        .iter()
        .zip(&limit.pressures)
        .skip(1)
        .map(|(pair, p)| complementarity_residual(pair, p))
        .collect();
    Ok(MSweepTable { rows, complementarity })
}

#[cfg(test)]
mod tests;
