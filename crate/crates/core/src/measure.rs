//! Uniform-grid measures and exact one-dimensional optimal transport.
//!
//! Densities are piecewise constant on the cells of a [`Grid`], so CDFs are
//! piecewise linear and quantile functions are piecewise linear in the mass
//! coordinate `s ∈ [0, M]`, with jumps across gaps of the support. Every
//! transport quantity below (W₂, monotone maps, Kantorovich potentials) is
//! computed in closed form on those pieces; there is no quadrature error.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Relative mass mismatch tolerated between two fields that are meant to
/// carry the same mass.
pub const MASS_TOLERANCE: f64 = 1e-10;

/// Uniform partition of `[left, right]` into `n_cells` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    left: f64,
    right: f64,
    n_cells: usize,
    h: f64,
}

impl Grid {
    pub fn new(left: f64, right: f64, n_cells: usize) -> Result<Self> {
        if !left.is_finite() || !right.is_finite() {
            return Err(Error::InvalidGrid(alloc::format!(
                "bounds must be finite, got [{left}, {right}]"
            )));
        }
        if left >= right {
            return Err(Error::InvalidGrid(alloc::format!(
                "inverted bounds: left {left} >= right {right}"
            )));
        }
        if n_cells < 2 {
            return Err(Error::InvalidGrid(alloc::format!(
                "need at least 2 cells, got {n_cells}"
            )));
        }
        Ok(Grid {
            left,
            right,
            n_cells,
            h: (right - left) / n_cells as f64,
        })
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.right
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Cell width.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Lebesgue measure of the domain.
    pub fn length(&self) -> f64 {
        self.right - self.left
    }

    /// Left edge of cell `j`; `edge(n_cells)` is exactly `right`.
    pub fn edge(&self, j: usize) -> f64 {
        if j >= self.n_cells {
            self.right
        } else {
            self.left + j as f64 * self.h
        }
    }

    pub fn center(&self, j: usize) -> f64 {
        self.left + (j as f64 + 0.5) * self.h
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|j| self.center(j)).collect()
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.n_cells).map(|j| self.edge(j)).collect()
    }

    /// Index of the cell containing `x`, clamped to the domain.
    pub fn cell_of(&self, x: f64) -> usize {
        let r = (x - self.left) / self.h;
        if r.is_nan() || r <= 0.0 {
            return 0;
        }
        let j = crate::math::floor(r) as usize;
        j.min(self.n_cells - 1)
    }

    /// True when `x` lies in the closed domain (up to rounding).
    pub fn contains(&self, x: f64) -> bool {
        let tol = 1e-12 * self.length();
        x >= self.left - tol && x <= self.right + tol
    }
}

/// Nonnegative cell-averaged density with its total mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Grid,
    values: Vec<f64>,
    mass: f64,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::InvalidDensity(alloc::format!(
                "expected {} cell values, got {}",
                grid.n_cells(),
                values.len()
            )));
        }
        for (j, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidDensity(alloc::format!(
                    "cell {j} has value {v}"
                )));
            }
        }
        let mass = cumulative_mass(grid.h(), &values);
        Ok(DensityField { grid, values, mass })
    }

    /// Like [`DensityField::new`] but clamps tiny negative round-off to zero.
    pub(crate) fn from_raw(grid: Grid, mut values: Vec<f64>) -> Self {
        for v in values.iter_mut() {
            if !(*v > 0.0) {
                *v = 0.0;
            }
        }
        let mass = cumulative_mass(grid.h(), &values);
        DensityField { grid, values, mass }
    }

    pub fn zeros(grid: Grid) -> Self {
        DensityField {
            grid,
            values: alloc::vec![0.0; grid.n_cells()],
            mass: 0.0,
        }
    }

    /// Uniform density of total `mass` on `[a, b]`, deposited exactly onto
    /// the cells it overlaps.
    pub fn uniform_block(grid: Grid, a: f64, b: f64, mass: f64) -> Result<Self> {
        if !(a < b) || !grid.contains(a) || !grid.contains(b) {
            return Err(Error::InvalidDensity(alloc::format!(
                "block [{a}, {b}] not inside [{}, {}]",
                grid.left(),
                grid.right()
            )));
        }
        if !(mass >= 0.0) || !mass.is_finite() {
            return Err(Error::InvalidDensity(alloc::format!("block mass {mass}")));
        }
        let mut cell_mass = alloc::vec![0.0; grid.n_cells()];
        deposit_uniform(&grid, &mut cell_mass, a, b, mass);
        let values = cell_mass.iter().map(|m| m / grid.h()).collect();
        DensityField::new(grid, values)
    }

    /// Samples `f` at cell centers (negative samples are an error).
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.centers().into_iter().map(f).collect();
        DensityField::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn value(&self, j: usize) -> f64 {
        self.values[j]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Cellwise sum of two fields on the same grid.
    pub fn add(&self, other: &DensityField) -> Result<DensityField> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(DensityField::from_raw(self.grid, values))
    }

    /// Same shape rescaled to carry `mass`.
    pub fn with_mass(&self, mass: f64) -> Result<DensityField> {
        if self.mass <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let k = mass / self.mass;
        Ok(DensityField::from_raw(
            self.grid,
            self.values.iter().map(|v| v * k).collect(),
        ))
    }

    /// L^q norm `(h Σ ρ^q)^(1/q)`.
    pub fn lq_norm(&self, q: f64) -> f64 {
        let h = self.grid.h();
        let s: f64 = self.values.iter().map(|&v| crate::math::powf(v, q)).sum();
        crate::math::powf(h * s, 1.0 / q)
    }

    /// `∫ f dρ` by the midpoint rule.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let h = self.grid.h();
        self.values
            .iter()
            .enumerate()
            .map(|(j, &v)| v * f(self.grid.center(j)))
            .sum::<f64>()
            * h
    }
}

fn cumulative_mass(h: f64, values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &v in values {
        acc += h * v;
    }
    acc
}

/// Ordered pair `(ρ¹, ρ²)` on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPair {
    species: [DensityField; 2],
}

impl DensityPair {
    pub fn new(rho1: DensityField, rho2: DensityField) -> Result<Self> {
        if rho1.grid != rho2.grid {
            return Err(Error::GridMismatch);
        }
        Ok(DensityPair {
            species: [rho1, rho2],
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.species[0].grid
    }

    /// Species `i ∈ {0, 1}`.
    pub fn species(&self, i: usize) -> &DensityField {
        &self.species[i]
    }

    pub fn first(&self) -> &DensityField {
        &self.species[0]
    }

    pub fn second(&self) -> &DensityField {
        &self.species[1]
    }

    pub fn masses(&self) -> [f64; 2] {
        [self.species[0].mass, self.species[1].mass]
    }

    /// `ρ¹ + ρ²` per cell.
    pub fn total(&self) -> Vec<f64> {
        self.species[0]
            .values
            .iter()
            .zip(&self.species[1].values)
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn total_field(&self) -> DensityField {
        DensityField::from_raw(*self.grid(), self.total())
    }

    pub fn into_parts(self) -> [DensityField; 2] {
        self.species
    }
}

/// Scalar function sampled per cell (Kantorovich potentials, pressures).
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    grid: Grid,
    values: Vec<f64>,
}

impl PotentialField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::InvalidDensity(alloc::format!(
                "expected {} cell values, got {}",
                grid.n_cells(),
                values.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDensity(alloc::format!(
                "potential not finite at cell {j}"
            )));
        }
        Ok(PotentialField { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        PotentialField {
            grid,
            values: alloc::vec![0.0; grid.n_cells()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, j: usize) -> f64 {
        self.values[j]
    }
}

/// Piecewise-linear CDF sampled at cell edges.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfFunction {
    grid: Grid,
    cumulative: Vec<f64>,
}

impl CdfFunction {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `F` at the `n_cells + 1` edges.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn mass(&self) -> f64 {
        self.cumulative[self.cumulative.len() - 1]
    }

    pub fn eval(&self, x: f64) -> f64 {
        let g = &self.grid;
        if x <= g.left() {
            return 0.0;
        }
        if x >= g.right() {
            return self.mass();
        }
        let j = g.cell_of(x);
        let t = (x - g.edge(j)) / g.h();
        let a = self.cumulative[j];
        let b = self.cumulative[j + 1];
        a + (b - a) * t
    }
}

pub fn cdf(rho: &DensityField) -> Result<CdfFunction> {
    if rho.mass() <= 0.0 {
        return Err(Error::ZeroMass);
    }
    let h = rho.grid.h();
    let mut cumulative = Vec::with_capacity(rho.values.len() + 1);
    let mut acc = 0.0;
    cumulative.push(0.0);
    for &v in &rho.values {
        acc += h * v;
        cumulative.push(acc);
    }
    Ok(CdfFunction {
        grid: rho.grid,
        cumulative,
    })
}

/// One linear piece of a quantile function: `s ∈ [s0, s1] ↦ [x0, x1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct QuantilePiece {
    pub s0: f64,
    pub s1: f64,
    pub x0: f64,
    pub x1: f64,
}

impl QuantilePiece {
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        let w = self.s1 - self.s0;
        if w <= 0.0 {
            return self.x0;
        }
        self.x0 + (self.x1 - self.x0) * ((s - self.s0) / w)
    }

    /// d x / d s on the piece.
    #[inline]
    pub fn slope(&self) -> f64 {
        let w = self.s1 - self.s0;
        if w <= 0.0 {
            0.0
        } else {
            (self.x1 - self.x0) / w
        }
    }
}

/// Left-continuous generalized inverse of a CDF, stored as linear pieces in
/// the mass coordinate.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Quantile {
    pub mass: f64,
    pub pieces: Vec<QuantilePiece>,
}

impl Quantile {
    pub fn of(rho: &DensityField) -> Result<Self> {
        if rho.mass() <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let g = rho.grid();
        let h = g.h();
        let mut pieces = Vec::new();
        let mut acc = 0.0;
        for (j, &v) in rho.values().iter().enumerate() {
            let next = acc + h * v;
            if next > acc {
                pieces.push(QuantilePiece {
                    s0: acc,
                    s1: next,
                    x0: g.edge(j),
                    x1: g.edge(j + 1),
                });
            }
            acc = next;
        }
        Ok(Quantile { mass: acc, pieces })
    }

    /// Same quantile reparametrized to total mass `mass`.
    pub fn rescaled(&self, mass: f64) -> Self {
        if mass == self.mass {
            return self.clone();
        }
        let k = mass / self.mass;
        let n = self.pieces.len();
        let pieces = self
            .pieces
            .iter()
            .enumerate()
            .map(|(i, p)| QuantilePiece {
                s0: p.s0 * k,
                s1: if i + 1 == n { mass } else { p.s1 * k },
                x0: p.x0,
                x1: p.x1,
            })
            .collect();
        Quantile { mass, pieces }
    }

    /// Index of the piece holding `s` under the left-continuous convention:
    /// the first piece with `s1 >= s`.
    pub fn piece_index(&self, s: f64) -> usize {
        let idx = self.pieces.partition_point(|p| p.s1 < s);
        idx.min(self.pieces.len() - 1)
    }

    pub fn eval(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return self.pieces[0].x0;
        }
        self.pieces[self.piece_index(s)].eval(s)
    }
}

/// `Q(s) = inf{x : F(x) ≥ s}`; `Q(0)` is the left end of the support.
pub fn quantile(rho: &DensityField, s: f64) -> Result<f64> {
    let q = Quantile::of(rho)?;
    let tol = 1e-12 * q.mass;
    if !(s >= -tol && s <= q.mass + tol) {
        return Err(Error::MassCoordinateOutOfRange { s, mass: q.mass });
    }
    Ok(q.eval(s.clamp(0.0, q.mass)))
}

pub(crate) fn check_masses(a: f64, b: f64) -> Result<()> {
    if a <= 0.0 || b <= 0.0 {
        return Err(Error::ZeroMass);
    }
    if (a - b).abs() > MASS_TOLERANCE * a.max(b) {
        return Err(Error::MassMismatch { left: a, right: b });
    }
    Ok(())
}

/// Both quantiles reparametrized onto the common mass `(Ma + Mb)/2` so the
/// merge below is symmetric in its arguments.
fn common_quantiles(rho: &DensityField, nu: &DensityField) -> Result<(Quantile, Quantile)> {
    check_masses(rho.mass(), nu.mass())?;
    let qa = Quantile::of(rho)?;
    let qb = Quantile::of(nu)?;
    if qa.mass == qb.mass {
        return Ok((qa, qb));
    }
    let m = 0.5 * (qa.mass + qb.mass);
    Ok((qa.rescaled(m), qb.rescaled(m)))
}

/// Walks the common refinement of two quantile breakpoint sets, calling
/// `f(s0, s1, a0, a1, b0, b1)` on each interval where both are linear.
pub(crate) fn merge_pieces(
    qa: &Quantile,
    qb: &Quantile,
    mut f: impl FnMut(f64, f64, f64, f64, f64, f64),
) {
    let (pa, pb) = (&qa.pieces, &qb.pieces);
    let (mut i, mut j) = (0usize, 0usize);
    let mut s = 0.0;
    while i < pa.len() && j < pb.len() {
        let ea = if i + 1 == pa.len() { f64::INFINITY } else { pa[i].s1 };
        let eb = if j + 1 == pb.len() { f64::INFINITY } else { pb[j].s1 };
        let end = if ea.is_infinite() && eb.is_infinite() {
            pa[i].s1.max(pb[j].s1)
        } else {
            ea.min(eb)
        };
        if end > s {
            f(
                s,
                end,
                pa[i].eval(s),
                pa[i].eval(end),
                pb[j].eval(s),
                pb[j].eval(end),
            );
        }
        let last = ea.is_infinite() && eb.is_infinite();
        if ea <= end {
            i += 1;
        }
        if eb <= end {
            j += 1;
        }
        if last {
            break;
        }
        s = end;
    }
}

/// Squared distance `∫₀^M |Q_ρ − Q_ν|² ds`, integrated exactly.
pub fn w2_squared(rho: &DensityField, nu: &DensityField) -> Result<f64> {
    let (qa, qb) = common_quantiles(rho, nu)?;
    Ok(w2_squared_quantiles(&qa, &qb))
}

pub(crate) fn w2_squared_quantiles(qa: &Quantile, qb: &Quantile) -> f64 {
    let mut acc = 0.0;
    merge_pieces(qa, qb, |s0, s1, a0, a1, b0, b1| {
        let d0 = a0 - b0;
        let d1 = a1 - b1;
        acc += (s1 - s0) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
    });
    acc
}

pub fn w2_distance(rho: &DensityField, nu: &DensityField) -> Result<f64> {
    Ok(crate::math::sqrt(crate::math::pos(w2_squared(rho, nu)?)))
}

/// Monotone map in the source's mass coordinate: `s ↦ T(s)`, piecewise linear.
///
/// Evaluated at a position `x` of the source it reads `T(F_source(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportMap1D {
    source_mass: f64,
    pub(crate) pieces: Vec<QuantilePiece>,
}

impl TransportMap1D {
    pub(crate) fn from_quantile(q: Quantile) -> Self {
        TransportMap1D {
            source_mass: q.mass,
            pieces: q.pieces,
        }
    }

    /// Map given by its images of the source's cell edges, linear inside each
    /// source cell. `images` has `n_cells + 1` entries.
    pub fn from_edge_images(source: &DensityField, images: &[f64]) -> Result<Self> {
        let g = source.grid();
        if images.len() != g.n_cells() + 1 {
            return Err(Error::InvalidDensity(alloc::format!(
                "expected {} edge images, got {}",
                g.n_cells() + 1,
                images.len()
            )));
        }
        if source.mass() <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let h = g.h();
        let mut pieces = Vec::new();
        let mut acc = 0.0;
        for (j, &v) in source.values().iter().enumerate() {
            let next = acc + h * v;
            if next > acc {
                pieces.push(QuantilePiece {
                    s0: acc,
                    s1: next,
                    x0: images[j],
                    x1: images[j + 1],
                });
            }
            acc = next;
        }
        let map = TransportMap1D {
            source_mass: acc,
            pieces,
        };
        map.check_monotone()?;
        Ok(map)
    }

    pub fn source_mass(&self) -> f64 {
        self.source_mass
    }

    /// Breakpoints `(s, T(s))` of the map, left to right (jumps appear as
    /// repeated `s`).
    pub fn samples(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(2 * self.pieces.len());
        for p in &self.pieces {
            out.push((p.s0, p.x0));
            out.push((p.s1, p.x1));
        }
        out
    }

    pub fn eval_mass(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return self.pieces[0].x0;
        }
        let idx = self.pieces.partition_point(|p| p.s1 < s);
        self.pieces[idx.min(self.pieces.len() - 1)].eval(s)
    }

    /// `T(x) = T(F_source(x))`.
    pub fn eval_position(&self, source_cdf: &CdfFunction, x: f64) -> f64 {
        let k = self.source_mass / source_cdf.mass();
        self.eval_mass(source_cdf.eval(x) * k)
    }

    fn check_monotone(&self) -> Result<()> {
        let scale = self
            .pieces
            .iter()
            .map(|p| p.x0.abs().max(p.x1.abs()))
            .fold(1.0, f64::max);
        let tol = 1e-12 * scale;
        let mut last = f64::NEG_INFINITY;
        for p in &self.pieces {
            if !p.x0.is_finite() || !p.x1.is_finite() {
                return Err(Error::NonMonotoneMap);
            }
            if p.x0 < last - tol || p.x1 < p.x0 - tol {
                return Err(Error::NonMonotoneMap);
            }
            last = p.x1;
        }
        Ok(())
    }

    /// `(1 − t)·Q_a + t·Q_b` on the common refinement.
    pub(crate) fn interpolate(qa: &Quantile, qb: &Quantile, t: f64) -> Self {
        let mut pieces = Vec::new();
        merge_pieces(qa, qb, |s0, s1, a0, a1, b0, b1| {
            pieces.push(QuantilePiece {
                s0,
                s1,
                x0: (1.0 - t) * a0 + t * b0,
                x1: (1.0 - t) * a1 + t * b1,
            });
        });
        TransportMap1D {
            source_mass: qa.mass,
            pieces,
        }
    }
}

/// Monotone rearrangement of `rho` onto `nu`: `T = Q_ν ∘ F_ρ`.
pub fn monotone_map(rho: &DensityField, nu: &DensityField) -> Result<TransportMap1D> {
    let (qa, qb) = common_quantiles(rho, nu)?;
    let _ = qa;
    Ok(TransportMap1D::from_quantile(qb))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PotentialPiece {
    x0: f64,
    x1: f64,
    phi0: f64,
    // displacement x − T(x) at both ends; linear in between
    d0: f64,
    d1: f64,
}

/// Kantorovich potential of the transport of `ρ` onto `ν`: `∂ₓφ = x − T(x)`,
/// `φ(left) = 0`.
///
/// Off the support of `ρ` the CDF is flat, so `T` is continued by the
/// constant `Q_ν(F_ρ(x))`. The potential is piecewise quadratic; both
/// pointwise values and exact cell averages are available. Cell averages are
/// the first variation of `½W₂²(·, ν)` with respect to the cell densities.
#[derive(Debug, Clone, PartialEq)]
pub struct KantorovichPotential {
    grid: Grid,
    pieces: Vec<PotentialPiece>,
    cell_average: Vec<f64>,
}

impl KantorovichPotential {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(self.grid.left(), self.grid.right());
        let idx = self.pieces.partition_point(|p| p.x1 < x);
        let p = &self.pieces[idx.min(self.pieces.len() - 1)];
        let l = p.x1 - p.x0;
        let u = x - p.x0;
        if l <= 0.0 {
            return p.phi0;
        }
        p.phi0 + p.d0 * u + (p.d1 - p.d0) * u * u / (2.0 * l)
    }

    /// `∂ₓφ = x − T(x)` (right limit at piece boundaries).
    pub fn derivative(&self, x: f64) -> f64 {
        let x = x.clamp(self.grid.left(), self.grid.right());
        let idx = self.pieces.partition_point(|p| p.x1 <= x);
        let p = &self.pieces[idx.min(self.pieces.len() - 1)];
        let l = p.x1 - p.x0;
        if l <= 0.0 {
            return p.d0;
        }
        p.d0 + (p.d1 - p.d0) * (x - p.x0) / l
    }

    pub fn cell_averages(&self) -> &[f64] {
        &self.cell_average
    }

    /// Cell averages as a [`PotentialField`].
    pub fn to_field(&self) -> PotentialField {
        PotentialField {
            grid: self.grid,
            values: self.cell_average.clone(),
        }
    }

    /// `x − T(x)` averaged over each cell.
    pub fn mean_displacement(&self) -> Vec<f64> {
        let n = self.grid.n_cells();
        let h = self.grid.h();
        let mut out = Vec::with_capacity(n);
        let mut prev = 0.0;
        for j in 0..n {
            let next = self.eval(self.grid.edge(j + 1));
            out.push((next - prev) / h);
            prev = next;
        }
        out
    }
}

pub fn kantorovich_potential(rho: &DensityField, nu: &DensityField) -> Result<KantorovichPotential> {
    let (qa, qb) = common_quantiles(rho, nu)?;
    Ok(potential_from_quantiles(rho.grid(), rho.values(), qa.mass, &qb))
}

/// Builds the potential of the transport of the density `values` (on `grid`,
/// total mass `mass`) onto the measure with quantile `target`.
pub(crate) fn potential_from_quantiles(
    grid: &Grid,
    values: &[f64],
    mass: f64,
    target: &Quantile,
) -> KantorovichPotential {
    let h = grid.h();
    let n = grid.n_cells();
    let tq = target.rescaled(mass);
    let mut pieces = Vec::with_capacity(n + tq.pieces.len());
    let mut cell_average = Vec::with_capacity(n);
    let mut phi = 0.0;
    let mut acc = 0.0;
    let mut k = 0usize;
    for j in 0..n {
        let xa = grid.edge(j);
        let xb = grid.edge(j + 1);
        let a = acc;
        let b = if j + 1 == n { mass } else { acc + h * values[j] };
        let mut integral = 0.0;
        if !(b > a) {
            let t = tq.eval(a);
            let (d0, d1) = (xa - t, xb - t);
            let l = xb - xa;
            integral += phi * l + l * l * (2.0 * d0 + d1) / 6.0;
            pieces.push(PotentialPiece {
                x0: xa,
                x1: xb,
                phi0: phi,
                d0,
                d1,
            });
            phi += l * 0.5 * (d0 + d1);
        } else {
            // advance to the first target piece with s1 > a
            while k + 1 < tq.pieces.len() && tq.pieces[k].s1 <= a {
                k += 1;
            }
            let mut s = a;
            let rho_j = (b - a) / (xb - xa);
            let mut x = xa;
            loop {
                let p = &tq.pieces[k];
                let last_piece = k + 1 == tq.pieces.len();
                let se = if last_piece { b } else { p.s1.min(b) };
                let xe = if se >= b { xb } else { xa + (se - a) / rho_j };
                let (t0, t1) = (p.eval(s), p.eval(se));
                let (d0, d1) = (x - t0, xe - t1);
                let l = xe - x;
                if l > 0.0 {
                    integral += phi * l + l * l * (2.0 * d0 + d1) / 6.0;
                    pieces.push(PotentialPiece {
                        x0: x,
                        x1: xe,
                        phi0: phi,
                        d0,
                        d1,
                    });
                    phi += l * 0.5 * (d0 + d1);
                }
                if se >= b {
                    break;
                }
                s = se;
                x = xe;
                k += 1;
            }
        }
        cell_average.push(integral / h);
        acc = b;
    }
    KantorovichPotential {
        grid: *grid,
        pieces,
        cell_average,
    }
}

/// Adds `mass` spread uniformly over `[y0, y1]` to `cell_mass`; portions
/// outside the domain pile into the boundary cells.
pub(crate) fn deposit_uniform(grid: &Grid, cell_mass: &mut [f64], y0: f64, y1: f64, mass: f64) {
    if mass <= 0.0 {
        return;
    }
    let (left, right) = (grid.left(), grid.right());
    let n = grid.n_cells();
    let len = y1 - y0;
    if !(len > 1e-14 * grid.length()) {
        let y = (0.5 * (y0 + y1)).clamp(left, right);
        cell_mass[grid.cell_of(y)] += mass;
        return;
    }
    let below = (left.min(y1) - y0).max(0.0);
    let above = (y1 - right.max(y0)).max(0.0);
    if below > 0.0 {
        cell_mass[0] += mass * below / len;
    }
    if above > 0.0 {
        cell_mass[n - 1] += mass * above / len;
    }
    let lo = y0.max(left);
    let hi = y1.min(right);
    if hi <= lo {
        return;
    }
    let c0 = grid.cell_of(lo);
    let c1 = grid.cell_of(hi);
    for c in c0..=c1 {
        let overlap = hi.min(grid.edge(c + 1)) - lo.max(grid.edge(c));
        if overlap > 0.0 {
            cell_mass[c] += mass * overlap / len;
        }
    }
}

/// Mass-conservative pushforward: every linear piece of the map carries its
/// slice of mass uniformly onto its image interval.
pub fn pushforward(rho: &DensityField, map: &TransportMap1D) -> Result<DensityField> {
    check_masses(rho.mass(), map.source_mass)?;
    map.check_monotone()?;
    Ok(pushforward_pieces(rho.grid(), &map.pieces, rho.mass() / map.source_mass))
}

pub(crate) fn pushforward_pieces(grid: &Grid, pieces: &[QuantilePiece], scale: f64) -> DensityField {
    let mut cell_mass = alloc::vec![0.0; grid.n_cells()];
    for p in pieces {
        deposit_uniform(grid, &mut cell_mass, p.x0, p.x1, (p.s1 - p.s0) * scale);
    }
    let h = grid.h();
    DensityField::from_raw(*grid, cell_mass.into_iter().map(|m| m / h).collect())
}
