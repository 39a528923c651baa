use super::*;
use crate::energy::{equilibrium, PotentialSpec};
use crate::measure::w2_distance;
use alloc::vec;

fn linear(a: f64) -> PotentialSpec {
    PotentialSpec::Linear { a, b: 0.0 }
}

fn params(m: Exponent, pots: [PotentialSpec; 2], masses: [f64; 2], tau: f64) -> ModelParams {
    ModelParams::new(m, [1.0, 1.0], pots, masses, tau * 4.0, tau).unwrap()
}

fn block(g: Grid, a: f64, b: f64, height: f64) -> DensityField {
    DensityField::uniform_block(g, a, b, height * (b - a)).unwrap()
}

fn hyp(n: usize) -> (DensityPair, ModelParams) {
    let g = Grid::new(0.0, 1.0, n).unwrap();
    let r1 = block(g, 0.5, 0.9, 0.8);
    let r2 = block(g, 0.1, 0.4, 0.8);
    let p = params(Exponent::Finite(2.0), [linear(1.0), linear(2.0)], [r1.mass(), r2.mass()], 0.01);
    (DensityPair::new(r1, r2).unwrap(), p)
}

#[test]
fn step_conserves_mass_and_decreases_objective() {
    let (prev, p) = hyp(128);
    let s = SolverConfig::default();
    let r = jko_step(&prev, &p, &s).unwrap();
    assert!(r.converged, "residual {}", r.optimality_residual);
    for i in 0..2 {
        let m0 = prev.species(i).mass();
        assert!((r.pair.species(i).mass() - m0).abs() <= 1e-10 * m0);
    }
    assert!(r.objective <= r.objective_prev);
    let direct = step_objective(&r.pair, &prev, &p).unwrap();
    assert!((direct - r.objective).abs() < 1e-12);
    // the decrease pays at least for the transport
    let e0 = energy_report(&prev, &p).total;
    let e1 = energy_report(&r.pair, &p).total;
    let cost = (r.w2_sq[0] + r.w2_sq[1]) / (2.0 * p.tau);
    assert!(e0 - e1 >= cost - 1e-9);
}

#[test]
fn finite_m_rejects_incompressible_entry() {
    let (prev, p) = hyp(32);
    let q = p.with_exponent(Exponent::Incompressible).unwrap();
    assert!(jko_step(&prev, &q, &SolverConfig::default()).is_err());
    assert!(jko_step_incompressible(&prev, &p, &SolverConfig::default()).is_err());
}

#[test]
fn equilibrium_is_a_fixed_point() {
    let g = Grid::new(0.0, 1.0, 128).unwrap();
    let pots = [
        PotentialSpec::Quadratic { a: 4.0, b: -2.0, c: 0.0 },
        PotentialSpec::Quadratic { a: 4.0, b: -6.0, c: 0.0 },
    ];
    let p = params(Exponent::Finite(2.0), pots, [0.3, 0.2], 0.01);
    let eq = equilibrium(&p, &g).unwrap();
    let s = SolverConfig::default();
    let r = jko_step(&eq.pair, &p, &s).unwrap();
    for i in 0..2 {
        let w = w2_distance(r.pair.species(i), eq.pair.species(i)).unwrap();
        assert!(w <= 10.0 * s.inner_tol, "species {i}: W2 {w}");
    }
}

#[test]
fn saturated_block_without_drift_stays() {
    let g = Grid::new(0.0, 1.0, 64).unwrap();
    let r1 = block(g, 0.25, 0.5, 1.0);
    let r2 = block(g, 0.5, 0.75, 1.0);
    let p = params(Exponent::Incompressible, [PotentialSpec::zero(), PotentialSpec::zero()], [0.25, 0.25], 0.01);
    let prev = DensityPair::new(r1, r2).unwrap();
    let r = jko_step_incompressible(&prev, &p, &SolverConfig::default()).unwrap();
    for i in 0..2 {
        assert!(w2_distance(r.pair.species(i), prev.species(i)).unwrap() < 1e-6);
    }
    assert!(r.pair.total().iter().all(|t| *t <= 1.0 + crate::energy::FEAS_TOL));
}

#[test]
fn uncongested_patch_translates() {
    let n = 128;
    let g = Grid::new(0.0, 1.0, n).unwrap();
    let tau = 0.02;
    let r1 = block(g, 0.4, 0.6, 1.0);
    let p = params(Exponent::Incompressible, [linear(1.0), PotentialSpec::zero()], [0.2, 0.0], tau);
    let prev = DensityPair::new(r1, DensityField::zeros(g)).unwrap();
    let r = jko_step_incompressible(&prev, &p, &SolverConfig::default()).unwrap();
    let exact = block(g, 0.4 - tau, 0.6 - tau, 1.0);
    let w = w2_distance(r.pair.first(), &exact).unwrap();
    assert!(w <= 2.0 * g.h(), "W2 {w}");
    // below capacity nothing pushes back
    let half = block(g, 0.4, 0.6, 0.5);
    let q = params(Exponent::Incompressible, [linear(1.0), PotentialSpec::zero()], [0.1, 0.0], tau);
    let prev = DensityPair::new(half, DensityField::zeros(g)).unwrap();
    let r = jko_step_incompressible(&prev, &q, &SolverConfig::default()).unwrap();
    assert!(r.pair.total().iter().all(|t| *t < 1.0));
    assert!(r.pressure.values().iter().all(|v| *v == 0.0));
}

#[test]
fn patches_pushed_together_respect_complementarity() {
    let g = Grid::new(0.0, 1.0, 64).unwrap();
    let r1 = block(g, 0.25, 0.5, 1.0);
    let r2 = block(g, 0.5, 0.75, 1.0);
    // species 1 pushed right, species 2 pushed left
    let p = params(Exponent::Incompressible, [linear(-1.0), linear(1.0)], [0.25, 0.25], 0.01);
    let prev = DensityPair::new(r1, r2).unwrap();
    let s = SolverConfig::default();
    let r = jko_step_incompressible(&prev, &p, &s).unwrap();
    assert!(r.converged, "residual {}", r.optimality_residual);
    let pv = r.pressure.values();
    let total = r.pair.total();
    assert!(pv.iter().all(|v| *v >= -s.inner_tol));
    for (pk, t) in pv.iter().zip(&total) {
        if *pk > 1e-6 {
            assert!(*t > 1.0 - 1e-6);
        }
    }
    assert!(pv.iter().any(|v| *v > 1e-3));
}

#[test]
fn pressure_of_wall_block_is_a_ramp() {
    let n = 128;
    let g = Grid::new(0.0, 1.0, n).unwrap();
    let r1 = block(g, 0.0, 0.5, 1.0);
    let p = params(Exponent::Incompressible, [linear(1.0), PotentialSpec::zero()], [0.5, 0.0], 0.01);
    let prev = DensityPair::new(r1, DensityField::zeros(g)).unwrap();
    let s = SolverConfig::default();
    let r = jko_step_incompressible(&prev, &p, &s).unwrap();
    let recovered = recover_pressure_incompressible(&r, &p, s.support_floor).unwrap();
    // p = 0.5 − x inside the block
    for k in 2..(n / 2 - 2) {
        let x = g.center(k);
        assert!((recovered.value(k) - (0.5 - x)).abs() < 2.0 * g.h(), "cell {k}");
    }
    for k in (n / 2 + 1)..n {
        assert_eq!(recovered.value(k), 0.0);
    }
}

#[test]
fn explicit_step_translates_under_uniform_total() {
    let g = Grid::new(0.0, 1.0, 100).unwrap();
    // the total is flat where both species live
    let r1 = block(g, 0.3, 0.5, 0.5);
    let r2 = block(g, 0.3, 0.5, 0.5);
    let tau = 0.05;
    let p = params(Exponent::Finite(2.0), [linear(1.0), linear(-2.0)], [0.1, 0.1], tau);
    let prev = DensityPair::new(r1, r2).unwrap();
    let out = explicit_transport_step(&prev, &p).unwrap();
    let e1 = block(g, 0.3 - tau, 0.5 - tau, 0.5);
    let e2 = block(g, 0.3 + 2.0 * tau, 0.5 + 2.0 * tau, 0.5);
    // edge cells see one-sided pressure differences
    assert!(w2_distance(out.first(), &e1).unwrap() < 2.0 * g.h());
    assert!(w2_distance(out.second(), &e2).unwrap() < 2.0 * g.h());
}

#[test]
fn explicit_step_is_identity_for_a_flat_state() {
    let g = Grid::new(0.0, 1.0, 40).unwrap();
    let r1 = DensityField::from_fn(g, |_| 1.0).unwrap();
    let p = params(Exponent::Finite(3.0), [PotentialSpec::zero(), PotentialSpec::zero()], [1.0, 0.0], 0.1);
    let prev = DensityPair::new(r1, DensityField::zeros(g)).unwrap();
    let out = explicit_transport_step(&prev, &p).unwrap();
    for (a, b) in out.first().values().iter().zip(prev.first().values()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_species_reduction() {
    let g = Grid::new(0.0, 1.0, 64).unwrap();
    let r1 = block(g, 0.2, 0.7, 1.0);
    let p = params(Exponent::Finite(2.0), [linear(1.0), linear(1.0)], [0.5, 0.0], 0.01);
    let prev = DensityPair::new(r1, DensityField::zeros(g)).unwrap();
    let r = jko_step(&prev, &p, &SolverConfig::default()).unwrap();
    assert!(r.converged);
    assert!(r.potentials[1].is_none());
    assert_eq!(r.pair.second().mass(), 0.0);
    assert!(r.constants[0].is_some() && r.constants[1].is_none());
}

#[test]
fn mirror_rule_agrees_with_newton() {
    let (prev, p) = hyp(32);
    let newton = jko_step(&prev, &p, &SolverConfig::default()).unwrap();
    let s = SolverConfig {
        step_rule: StepRule::Mirror,
        inner_tol: 1e-4,
        max_inner: 20000,
        ..SolverConfig::default()
    };
    let mirror = jko_step(&prev, &p, &s).unwrap();
    assert!(mirror.objective >= newton.objective - 1e-12);
    assert!(mirror.objective - newton.objective < 1e-5);
}

#[test]
fn trajectory_records_every_step() {
    let (init, p) = hyp(64);
    let t = run_trajectory(&init, &p, &SolverConfig::default()).unwrap();
    assert_eq!(t.pairs.len(), p.n_steps() + 1);
    assert_eq!(t.records.len(), p.n_steps());
    assert_eq!(t.pairs[0], init);
    let e = t.energies();
    for w in e.windows(2) {
        assert!(w[1].total <= w[0].total + 1e-12);
    }
}

#[test]
fn empty_horizon_gives_initial_only() {
    let (init, p) = hyp(32);
    let q = p.with_horizon(0.0).unwrap();
    let t = run_trajectory(&init, &q, &SolverConfig::default()).unwrap();
    assert_eq!(t.pairs, vec![init]);
}
