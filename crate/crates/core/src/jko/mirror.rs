// Multiplicative first-order inner solver.

use alloc::vec::Vec;

use super::{complementarity, incompressible_pressure, optimality_residual, psi, step_objective, SolverConfig};
use crate::energy::{pressure_of, Exponent, ModelParams};
use crate::error::Result;
use crate::math::exp;
use crate::measure::{kantorovich_potential, DensityField, DensityPair, Grid, KantorovichPotential};

fn assemble(grid: Grid, present: &[usize], rho: &[Vec<f64>]) -> Result<DensityPair> {
    let mut fields = [DensityField::zeros(grid), DensityField::zeros(grid)];
    for (&i, values) in present.iter().zip(rho) {
        fields[i] = DensityField::from_raw(grid, values.clone());
    }
    let [a, b] = fields;
    DensityPair::new(a, b)
}

fn normalize(values: &mut [f64], mass: f64, h: f64) {
    let total: f64 = values.iter().sum::<f64>() * h;
    if total > 0.0 {
        let k = mass / total;
        for v in values.iter_mut() {
            *v *= k;
        }
    }
}

/// Mass-preserving push of `ρ¹ + ρ² ≤ 1`: overshooting cells are scaled down
/// and the removed mass of each species is re-deposited into the nearest cells
/// with slack, searching outward.
pub(super) fn project_capacity(rho: &mut [Vec<f64>]) {
    let n = rho[0].len();
    let total = |rho: &[Vec<f64>], k: usize| rho.iter().map(|r| r[k]).sum::<f64>();
    let mut excess: Vec<(usize, Vec<f64>)> = Vec::new();
    for k in 0..n {
        let t = total(rho, k);
        if t > 1.0 {
            let removed = rho.iter_mut().map(|r| {
                let keep = r[k] / t;
                let out = r[k] - keep;
                r[k] = keep;
                out
            });
            excess.push((k, removed.collect()));
        }
    }
    for (k, removed) in excess {
        let mut left: f64 = removed.iter().sum();
        let mut d = 1;
        while left > 0.0 && (d <= k || k + d < n) {
            for c in [k.checked_sub(d), Some(k + d).filter(|&c| c < n)].into_iter().flatten() {
                if left <= 0.0 {
                    break;
                }
                let slack = 1.0 - total(rho, c);
                if slack > 0.0 {
                    let put = slack.min(left);
                    let all: f64 = removed.iter().sum();
                    for (s, r) in rho.iter_mut().enumerate() {
                        r[c] += put * removed[s] / all;
                    }
                    left -= put;
                }
            }
            d += 1;
        }
    }
}

/// Returns densities of the present species, iterations and whether the
/// residual met `inner_tol`.
pub(super) fn solve(
    prev: &DensityPair,
    params: &ModelParams,
    solver: &SolverConfig,
    present: &[usize],
    init: Vec<Vec<f64>>,
) -> Result<(Vec<Vec<f64>>, usize, bool)> {
    let grid = *prev.grid();
    let h = grid.h();
    let eps = solver.support_floor;
    let mut rho = init;
    for (s, &i) in present.iter().enumerate() {
        normalize(&mut rho[s], params.masses[i], h);
    }
    if params.exponent.is_incompressible() {
        project_capacity(&mut rho);
    }
    let mut iterations = 0;
    while iterations < solver.max_inner {
        iterations += 1;
        let pair = assemble(grid, present, &rho)?;
        let mut potentials: [Option<KantorovichPotential>; 2] = [None, None];
        for &i in present {
            potentials[i] = Some(kantorovich_potential(pair.species(i), prev.species(i))?);
        }
        let residual = match params.exponent {
            Exponent::Finite(_) => optimality_residual(&pair, &potentials, params, eps)?.0,
            Exponent::Incompressible => {
                let (p, _, violation) = incompressible_pressure(&pair, &potentials, 0.0, params, eps);
                complementarity(&pair, &p).max(violation)
            }
        };
        if residual <= solver.inner_tol {
            return Ok((rho, iterations, true));
        }
        let total = pair.total();
        let grads: Vec<Vec<f64>> = present
            .iter()
            .map(|&i| {
                let mut g = psi(params, &grid, i, potentials[i].as_ref().unwrap());
                if let Exponent::Finite(m) = params.exponent {
                    for (gk, t) in g.iter_mut().zip(&total) {
                        *gk += pressure_of(*t, m);
                    }
                }
                g
            })
            .collect();
        let j0 = step_objective(&pair, prev, params)?;
        let mut eta = 1.0;
        let mut improved = false;
        for _ in 0..50 {
            let mut cand = rho.clone();
            for (s, &i) in present.iter().enumerate() {
                let gmin = grads[s].iter().copied().fold(f64::INFINITY, f64::min);
                for (r, g) in cand[s].iter_mut().zip(&grads[s]) {
                    *r *= exp(-eta * (g - gmin));
                }
                normalize(&mut cand[s], params.masses[i], h);
            }
            if params.exponent.is_incompressible() {
                project_capacity(&mut cand);
            }
            let j1 = step_objective(&assemble(grid, present, &cand)?, prev, params)?;
            if j1 < j0 {
                rho = cand;
                improved = true;
                break;
            }
            eta *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok((rho, iterations, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn projection_keeps_mass_and_cap() {
        let mut rho = vec![vec![0.9, 0.8, 0.1, 0.0], vec![0.3, 0.1, 0.2, 0.0]];
        let m0: Vec<f64> = rho.iter().map(|r| r.iter().sum()).collect();
        project_capacity(&mut rho);
        for k in 0..4 {
            assert!(rho[0][k] + rho[1][k] <= 1.0 + 1e-15);
        }
        for (r, m) in rho.iter().zip(m0) {
            assert!((r.iter().sum::<f64>() - m).abs() < 1e-14);
        }
    }
}
