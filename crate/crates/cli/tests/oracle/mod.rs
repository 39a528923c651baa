//! Test-side oracles, written without the core's transport code.

#![allow(dead_code)]

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use num_dual::DualNum;

/// Cell masses `h·ρ` of a piecewise-constant density on `[left, left + n·h]`.
#[derive(Debug, Clone)]
pub struct Cells {
    pub left: f64,
    pub h: f64,
    pub mass: Vec<f64>,
}

impl Cells {
    pub fn from_density(left: f64, h: f64, rho: &[f64]) -> Self {
        Cells {
            left,
            h,
            mass: rho.iter().map(|r| r * h).collect(),
        }
    }

    fn center(&self, j: usize) -> f64 {
        self.left + (j as f64 + 0.5) * self.h
    }

    fn edge(&self, j: usize) -> f64 {
        self.left + j as f64 * self.h
    }
}

/// Optimal cell-to-cell plan of the transport LP with cost `(xᵢ − yⱼ)²` at
/// the cell centers. That cost is strictly Monge, so the optimal plan is the
/// one the continuous problem induces on cells.
pub fn lp_plan(a: &Cells, b: &Cells) -> Vec<Vec<f64>> {
    let rows: Vec<usize> = (0..a.mass.len()).filter(|&i| a.mass[i] > 0.0).collect();
    let cols: Vec<usize> = (0..b.mass.len()).filter(|&j| b.mass[j] > 0.0).collect();
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<_>> = rows
        .iter()
        .map(|&i| {
            cols.iter()
                .map(|&j| {
                    let d = a.center(i) - b.center(j);
                    p.add_var(d * d, (0.0, f64::INFINITY))
                })
                .collect()
        })
        .collect();
    for (r, &i) in rows.iter().enumerate() {
        let expr: Vec<_> = vars[r].iter().map(|v| (*v, 1.0)).collect();
        p.add_constraint(expr.as_slice(), ComparisonOp::Eq, a.mass[i]);
    }
    // the last column constraint is implied by the others
    for (c, &j) in cols.iter().enumerate().take(cols.len().saturating_sub(1)) {
        let expr: Vec<_> = vars.iter().map(|row| (row[c], 1.0)).collect();
        p.add_constraint(expr.as_slice(), ComparisonOp::Eq, b.mass[j]);
    }
    let sol = p.solve().expect("transport LP is feasible and bounded");
    let mut plan = vec![vec![0.0; b.mass.len()]; a.mass.len()];
    for (r, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            plan[i][j] = sol.var_value(vars[r][c]).max(0.0);
        }
    }
    plan
}

/// Exact `W₂²` of the piecewise-constant densities from a cell plan: each
/// plan entry moves a slab of its source cell, in order, onto a slab of its
/// target cell, linearly in mass.
pub fn cost_from_plan(a: &Cells, b: &Cells, plan: &[Vec<f64>]) -> f64 {
    let mut out_off = vec![0.0; a.mass.len()];
    let mut in_off = vec![0.0; b.mass.len()];
    let mut cost = 0.0;
    for (i, row) in plan.iter().enumerate() {
        for (j, &pi) in row.iter().enumerate() {
            if pi <= 0.0 {
                continue;
            }
            let x0 = a.edge(i) + a.h * out_off[i] / a.mass[i];
            let x1 = a.edge(i) + a.h * (out_off[i] + pi) / a.mass[i];
            let y0 = b.edge(j) + b.h * in_off[j] / b.mass[j];
            let y1 = b.edge(j) + b.h * (in_off[j] + pi) / b.mass[j];
            out_off[i] += pi;
            in_off[j] += pi;
            let (d0, d1) = (y0 - x0, y1 - x1);
            cost += pi * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
        }
    }
    cost
}

pub fn w2_sq_lp(a: &Cells, b: &Cells) -> f64 {
    cost_from_plan(a, b, &lp_plan(a, b))
}

/// `W₂²` as `∫₀ᴹ (X(s) − Y(s))² ds` over the merged mass breakpoints, both
/// quantiles affine on each piece.
pub fn w2_sq_quantile(a: &Cells, b: &Cells) -> f64 {
    quantile_cost(a.left, a.h, &a.mass, &b.mass)
}

/// Same, over cell masses of any dual scalar type so that derivatives come
/// out exact; breakpoints are ordered by their real parts.
pub fn quantile_cost<T: DualNum<Primitive = f64> + Copy>(left: f64, h: f64, a: &[T], b: &[T]) -> T {
    let cumulative = |m: &[T]| {
        let mut cum = vec![T::zero()];
        for x in m {
            cum.push(*cum.last().unwrap() + *x);
        }
        cum
    };
    let (ca, cb) = (cumulative(a), cumulative(b));
    let total = ca.last().unwrap().re().min(cb.last().unwrap().re());
    let mut breaks: Vec<T> = ca.iter().chain(&cb).copied().filter(|s| s.re() <= total).collect();
    breaks.sort_by(|x, y| x.re().partial_cmp(&y.re()).unwrap());
    breaks.dedup_by(|x, y| x.re() == y.re());
    let cell_of = |cum: &[T], s: f64| cum.partition_point(|c| c.re() <= s).saturating_sub(1).min(cum.len() - 2);
    let inverse = |m: &[T], cum: &[T], j: usize, s: T| (s - cum[j]) * h / m[j] + left + j as f64 * h;
    let mut cost = T::zero();
    for w in breaks.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        if s1.re() <= s0.re() {
            continue;
        }
        let mid = 0.5 * (s0.re() + s1.re());
        let (i, j) = (cell_of(&ca, mid), cell_of(&cb, mid));
        let d0 = inverse(b, &cb, j, s0) - inverse(a, &ca, i, s0);
        let d1 = inverse(b, &cb, j, s1) - inverse(a, &ca, i, s1);
        cost += (s1 - s0) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
    }
    cost
}

/// Discretized step objective, written out independently:
/// `Σᵢ W₂²/(2τκᵢ) + h Σ (ρ¹+ρ²)^m/(m−1) + h Σᵢ Φᵢρⁱ/κᵢ` with `Φᵢ` at centers.
#[derive(Clone)]
pub struct StepObjective {
    pub left: f64,
    pub h: f64,
    pub m: f64,
    pub tau: f64,
    pub kappa: [f64; 2],
    /// `Φᵢ` at the cell centers.
    pub phi: [Vec<f64>; 2],
    pub prev: [Vec<f64>; 2],
}

impl StepObjective {
    pub fn value<T: DualNum<Primitive = f64> + Copy>(&self, rho: &[Vec<T>; 2]) -> T {
        let n = rho[0].len();
        let mut j = T::zero();
        for i in 0..2 {
            let a: Vec<T> = rho[i].iter().map(|r| *r * self.h).collect();
            let b: Vec<T> = self.prev[i].iter().map(|r| T::from(r * self.h)).collect();
            j += quantile_cost(self.left, self.h, &a, &b) / (2.0 * self.tau * self.kappa[i]);
            for c in 0..n {
                j += rho[i][c] * (self.h * self.phi[i][c] / self.kappa[i]);
            }
        }
        for c in 0..n {
            j += (rho[0][c] + rho[1][c]).powf(self.m) * (self.h / (self.m - 1.0));
        }
        j
    }
}
