// Primal log-barrier Newton method for one implicit step.
//
// Unknowns are the interior cumulative masses F^s_j, j = 1..n−1, of every
// present species, interleaved as (j − 1)·S + s. Cell densities are
// (F_{k+1} − F_k)/h, so the energy couples neighbouring unknowns only and the
// Hessian is banded with half-bandwidth 2S − 1. Positivity of each density
// (and 1 − ρ¹ − ρ² for the incompressible model) is enforced by logarithmic
// barriers whose weight μ is driven to zero in stages.

use alloc::vec::Vec;

use super::cell::cell_term;
use crate::energy::{energy_density, pressure_of, pressure_slope, Exponent};
use crate::linalg::BandMatrix;
use crate::math::ln;
use crate::measure::{Grid, Quantile};

/// Newton iterations allowed per barrier stage before μ is reduced anyway.
const STAGE_CAP: usize = 100;

/// Relative decrement accepted as converged once progress has stalled.
const ROUNDING_DECREMENT: f64 = 1e-12;

pub(crate) struct Species {
    pub mass: f64,
    /// 1 / (τ κ)
    pub coef: f64,
    /// Φ / κ at the cell centers
    pub phi: Vec<f64>,
    /// previous iterate, rescaled to `mass`
    pub q: Quantile,
}

pub(crate) struct Problem {
    pub grid: Grid,
    pub species: Vec<Species>,
    pub exponent: Exponent,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BarrierSettings {
    pub mu_start: f64,
    pub mu_end: f64,
    pub mu_shrink: f64,
    pub max_iterations: usize,
    /// decrement tolerance relative to 1 + |objective|
    pub final_tol: f64,
}

pub(crate) struct Solution {
    /// densities of the present species, in `Problem::species` order
    pub densities: Vec<Vec<f64>>,
    pub iterations: usize,
    pub mu: f64,
    pub converged: bool,
}

struct Eval {
    value: f64,
    grad: Vec<f64>,
    hess: Option<BandMatrix>,
}

impl Problem {
    fn n_species(&self) -> usize {
        self.species.len()
    }

    fn n_vars(&self) -> usize {
        (self.grid.n_cells() - 1) * self.n_species()
    }

    #[inline]
    fn var(&self, s: usize, j: usize) -> Option<usize> {
        let n = self.grid.n_cells();
        if j == 0 || j == n {
            None
        } else {
            Some((j - 1) * self.n_species() + s)
        }
    }

    #[inline]
    fn edge(&self, f: &[f64], s: usize, j: usize) -> f64 {
        match self.var(s, j) {
            Some(v) => f[v],
            None if j == 0 => 0.0,
            None => self.species[s].mass,
        }
    }

    pub fn to_cumulative(&self, densities: &[Vec<f64>]) -> Vec<f64> {
        let n = self.grid.n_cells();
        let h = self.grid.h();
        let ns = self.n_species();
        let mut f = alloc::vec![0.0; self.n_vars()];
        for (s, rho) in densities.iter().enumerate() {
            let total: f64 = rho.iter().map(|r| r * h).sum();
            let k = self.species[s].mass / total;
            let mut acc = 0.0;
            for j in 1..n {
                acc += rho[j - 1] * h * k;
                f[(j - 1) * ns + s] = acc;
            }
        }
        f
    }

    pub fn densities(&self, f: &[f64]) -> Vec<Vec<f64>> {
        let n = self.grid.n_cells();
        let h = self.grid.h();
        (0..self.n_species())
            .map(|s| {
                (0..n)
                    .map(|k| (self.edge(f, s, k + 1) - self.edge(f, s, k)) / h)
                    .collect()
            })
            .collect()
    }

    fn eval(&self, f: &[f64], mu: f64, want_hess: bool) -> Option<Eval> {
        let n = self.grid.n_cells();
        let h = self.grid.h();
        let ns = self.n_species();
        let mut value = 0.0;
        let mut grad = alloc::vec![0.0; self.n_vars()];
        let mut hess = if want_hess {
            Some(BandMatrix::zeros(self.n_vars(), 2 * ns - 1))
        } else {
            None
        };
        let mut locals: [(Option<usize>, Option<usize>); 2] = [(None, None); 2];
        for k in 0..n {
            let xk = self.grid.edge(k);
            let mut total = 0.0;
            for (s, sp) in self.species.iter().enumerate() {
                let a = self.edge(f, s, k);
                let b = self.edge(f, s, k + 1);
                let d = b - a;
                if !(d > 0.0) {
                    return None;
                }
                let rho = d / h;
                total += rho;
                let ct = cell_term(&sp.q, a, b, xk, h);
                value += sp.coef * ct.w + sp.phi[k] * d - mu * h * ln(rho);
                let bar = mu / rho;
                let ga = sp.coef * ct.ga - sp.phi[k] + bar;
                let gb = sp.coef * ct.gb + sp.phi[k] - bar;
                let va = self.var(s, k);
                let vb = self.var(s, k + 1);
                locals[s] = (va, vb);
                if let Some(i) = va {
                    grad[i] += ga;
                }
                if let Some(i) = vb {
                    grad[i] += gb;
                }
                if let Some(hm) = hess.as_mut() {
                    let hb = mu / (h * rho * rho);
                    if let Some(i) = va {
                        hm.add(i, i, sp.coef * ct.haa + hb);
                    }
                    if let Some(i) = vb {
                        hm.add(i, i, sp.coef * ct.hbb + hb);
                    }
                    if let (Some(i), Some(j)) = (va, vb) {
                        hm.add(i, j, sp.coef * ct.hab - hb);
                    }
                }
            }
            // coupling through the total density
            let (slope, curv) = match self.exponent {
                Exponent::Finite(m) => {
                    value += h * energy_density(total, m);
                    (pressure_of(total, m), pressure_slope(total, m) / h)
                }
                Exponent::Incompressible => {
                    let slack = 1.0 - total;
                    if !(slack > 0.0) {
                        return None;
                    }
                    value -= mu * h * ln(slack);
                    (mu / slack, mu / (h * slack * slack))
                }
            };
            let mut vars: [(usize, f64); 4] = [(0, 0.0); 4];
            let mut nv = 0;
            for &(va, vb) in locals.iter().take(ns) {
                if let Some(i) = va {
                    grad[i] -= slope;
                    vars[nv] = (i, -1.0);
                    nv += 1;
                }
                if let Some(i) = vb {
                    grad[i] += slope;
                    vars[nv] = (i, 1.0);
                    nv += 1;
                }
            }
            if let Some(hm) = hess.as_mut() {
                for x in 0..nv {
                    for y in 0..=x {
                        hm.add(vars[x].0, vars[y].0, curv * vars[x].1 * vars[y].1);
                    }
                }
            }
        }
        Some(Eval { value, grad, hess })
    }

    /// Largest α keeping every density (and the slack) positive along `d`.
    fn max_step(&self, f: &[f64], d: &[f64]) -> f64 {
        let n = self.grid.n_cells();
        let ns = self.n_species();
        let mut alpha = f64::INFINITY;
        let dir = |s: usize, j: usize| self.var(s, j).map_or(0.0, |v| d[v]);
        for k in 0..n {
            let mut total = 0.0;
            let mut dtotal = 0.0;
            for s in 0..ns {
                let w = self.edge(f, s, k + 1) - self.edge(f, s, k);
                let dw = dir(s, k + 1) - dir(s, k);
                total += w;
                dtotal += dw;
                if dw < 0.0 {
                    alpha = alpha.min(-w / dw);
                }
            }
            if self.exponent.is_incompressible() && dtotal > 0.0 {
                let h = self.grid.h();
                alpha = alpha.min((h - total) / dtotal);
            }
        }
        alpha
    }

    pub fn solve(&self, init: &[Vec<f64>], settings: &BarrierSettings) -> Solution {
        let mut f = self.to_cumulative(init);
        // densities near vacuum are resolved only to ulp(M)/h through the
        // cumulative variables; a smaller barrier weight is pure noise
        let mass = self.species.iter().map(|s| s.mass).fold(0.0, f64::max);
        let mu_end = settings.mu_end.max(100.0 * f64::EPSILON * mass / self.grid.h());
        let mut mu = settings.mu_start.max(mu_end);
        let mut iterations = 0;
        let mut converged = false;
        let nvars = self.n_vars();
        'stages: loop {
            let stage_start = iterations;
            let last_stage = mu <= mu_end;
            let mut stalls = 0;
            let mut best_dec = f64::INFINITY;
            let mut flat = 0;
            loop {
                if iterations >= settings.max_iterations {
                    break 'stages;
                }
                if iterations - stage_start >= STAGE_CAP && !last_stage {
                    break;
                }
                iterations += 1;
                let ev = match self.eval(&f, mu, true) {
                    Some(e) => e,
                    None => break 'stages,
                };
                // below this the decrement is dominated by rounding in the gradient
                let floor = settings.final_tol * (1.0 + ev.value.abs());
                let stage_tol = if last_stage { floor } else { (mu * 1e-2).max(floor) };
                let mut hm = ev.hess.unwrap();
                let dir = match newton_direction(&mut hm, &ev.grad) {
                    Some(d) => d,
                    None => break 'stages,
                };
                let dec: f64 = -ev.grad.iter().zip(&dir).map(|(g, d)| g * d).sum::<f64>();
                // rounding floor reached when the decrement stops shrinking
                if dec < 0.5 * best_dec {
                    best_dec = dec;
                    flat = 0;
                } else {
                    flat += 1;
                }
                if last_stage && flat >= 4 {
                    converged = best_dec <= ROUNDING_DECREMENT * (1.0 + ev.value.abs());
                    break;
                }
                if !(dec > stage_tol) {
                    if last_stage {
                        converged = true;
                    }
                    break;
                }
                let amax = self.max_step(&f, &dir);
                let mut alpha = if amax > 1.0 / 0.99 { 1.0 } else { 0.99 * amax };
                let mut trial = alloc::vec![0.0; nvars];
                let mut accepted = false;
                for _ in 0..60 {
                    for i in 0..nvars {
                        trial[i] = f[i] + alpha * dir[i];
                    }
                    match self.eval(&trial, mu, false) {
                        Some(e) => {
                            let slope: f64 = e.grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
                            if slope <= 0.0 || e.value <= ev.value - 0.25 * alpha * dec {
                                accepted = true;
                                break;
                            }
                            // secant on the directional derivative
                            let guess = alpha * dec / (dec + slope);
                            alpha = guess.clamp(0.1 * alpha, 0.9 * alpha);
                        }
                        None => alpha *= 0.5,
                    }
                }
                if !accepted {
                    stalls += 1;
                } else {
                    core::mem::swap(&mut f, &mut trial);
                    if alpha < 1e-10 {
                        stalls += 1;
                    }
                }
                if stalls >= 3 {
                    if last_stage {
                        converged = dec <= ROUNDING_DECREMENT * (1.0 + ev.value.abs());
                    }
                    break;
                }
            }
            if last_stage {
                break;
            }
            mu = (mu * settings.mu_shrink).max(mu_end);
        }
        Solution {
            densities: self.densities(&f),
            iterations,
            mu,
            converged,
        }
    }
}

fn newton_direction(hm: &mut BandMatrix, grad: &[f64]) -> Option<Vec<f64>> {
    let n = hm.n();
    let scale = (0..n).map(|i| hm.get(i, i).abs()).fold(0.0, f64::max);
    let mut shift = 0.0;
    for _ in 0..12 {
        let mut trial = hm.clone();
        if shift > 0.0 {
            for i in 0..n {
                trial.add(i, i, shift);
            }
        }
        if trial.cholesky() {
            let mut d = trial.solve_factored(grad);
            for v in d.iter_mut() {
                *v = -*v;
            }
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        shift = if shift == 0.0 { 1e-14 * scale.max(1.0) } else { shift * 100.0 };
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::DensityField;
    use alloc::vec;

    fn problem(m: Exponent) -> Problem {
        let g = Grid::new(0.0, 1.0, 6).unwrap();
        let p1 = DensityField::new(g, vec![0.0, 0.5, 1.0, 1.0, 0.5, 0.0]).unwrap();
        let p2 = DensityField::new(g, vec![0.6, 0.6, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let sp = |p: &DensityField, c: f64| Species {
            mass: p.mass(),
            coef: 10.0,
            phi: g.centers().iter().map(|x| c * x).collect(),
            q: Quantile::of(p).unwrap(),
        };
        Problem {
            grid: g,
            species: vec![sp(&p1, 1.0), sp(&p2, 2.0)],
            exponent: m,
        }
    }

    #[test]
    fn gradient_and_hessian_are_consistent() {
        for m in [Exponent::Finite(2.0), Exponent::Incompressible] {
            let pr = problem(m);
            let init = vec![vec![0.3, 0.4, 0.6, 0.5, 0.4, 0.2], vec![0.3, 0.2, 0.1, 0.05, 0.05, 0.05]];
            let f = pr.to_cumulative(&init);
            let mu = 1e-3;
            let ev = pr.eval(&f, mu, true).unwrap();
            let hm = ev.hess.unwrap();
            let e = 1e-7;
            for i in 0..f.len() {
                let mut fp = f.clone();
                let mut fm = f.clone();
                fp[i] += e;
                fm[i] -= e;
                let ep = pr.eval(&fp, mu, false).unwrap();
                let em = pr.eval(&fm, mu, false).unwrap();
                let g = (ep.value - em.value) / (2.0 * e);
                assert!((g - ev.grad[i]).abs() < 1e-6 * (1.0 + g.abs()), "grad {i}");
                for j in 0..f.len() {
                    let hfd = (ep.grad[j] - em.grad[j]) / (2.0 * e);
                    let tol = 1e-5 * (1.0 + hfd.abs());
                    assert!((hfd - hm.get(i, j)).abs() < tol, "hess {i} {j}: {hfd} vs {}", hm.get(i, j));
                }
            }
        }
    }
}
