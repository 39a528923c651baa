use super::*;
use crate::energy::PotentialSpec;
use crate::jko::run_trajectory;
use crate::measure::Grid;
use alloc::vec;

fn unit(n: usize) -> Grid {
    Grid::new(0.0, 1.0, n).unwrap()
}

fn block(g: Grid, a: f64, b: f64, height: f64) -> DensityField {
    DensityField::uniform_block(g, a, b, height * (b - a)).unwrap()
}

fn linear(a: f64, b: f64) -> PotentialSpec {
    PotentialSpec::Linear { a, b }
}

fn run(pair: &DensityPair, m: Exponent, pots: [PotentialSpec; 2], tau: f64, steps: usize) -> Trajectory {
    let p = ModelParams::new(m, [1.0, 1.0], pots, pair.masses(), tau * steps as f64, tau).unwrap();
    run_trajectory(pair, &p, &SolverConfig::default()).unwrap()
}

#[test]
fn overlap_counts_shared_cells() {
    let g = unit(100);
    let a = DensityPair::new(block(g, 0.0, 0.3, 1.0), block(g, 0.5, 0.9, 1.0)).unwrap();
    assert_eq!(overlap_measure(&a, 1e-8), 0.0);
    let b = DensityPair::new(block(g, 0.2, 0.6, 0.5), block(g, 0.2, 0.6, 0.5)).unwrap();
    assert!((overlap_measure(&b, 1e-8) - 0.4).abs() < 1e-12);
    let c = DensityPair::new(block(g, 0.0, 0.31, 1.0), block(g, 0.30, 0.5, 1.0)).unwrap();
    assert!((overlap_measure(&c, 1e-8) - 0.01).abs() < 1e-12);
}

#[test]
fn support_interval_extremes() {
    let g = unit(64);
    let s = support_interval(&block(g, 0.25, 0.75, 1.0), 1e-8);
    assert!((s.inf_support - 0.25).abs() <= g.h() / 2.0 + 1e-12);
    assert!((s.sup_support - 0.75).abs() <= g.h() / 2.0 + 1e-12);
    assert!(!s.empty);
    assert!(support_interval(&DensityField::zeros(g), 1e-8).empty);
    let two = block(g, 0.125, 0.25, 1.0).add(&block(g, 0.5, 0.75, 1.0)).unwrap();
    let s = support_interval(&two, 1e-8);
    assert!(s.inf_support < 0.125 + g.h() && s.sup_support > 0.75 - g.h());
    assert!((s.total_support_length - 0.375).abs() < 1e-12);
}

#[test]
fn ordering_examples() {
    let g = unit(100);
    let ok = DensityPair::new(block(g, 0.6, 1.0, 1.0), block(g, 0.0, 0.4, 1.0)).unwrap();
    let c = ordering_check(&ok, 1e-8);
    assert!(c.ordered);
    assert!((c.gap.unwrap() - 0.2).abs() < 1e-9);
    let rev = DensityPair::new(block(g, 0.0, 0.4, 1.0), block(g, 0.6, 1.0, 1.0)).unwrap();
    let c = ordering_check(&rev, 1e-8);
    assert!(!c.ordered && c.gap.unwrap() < 0.0);
    let touch = DensityPair::new(block(g, 0.4, 1.0, 0.5), block(g, 0.0, 0.41, 0.5)).unwrap();
    assert!(ordering_check(&touch, 1e-8).ordered);
}

#[test]
fn c1_closed_form_and_stationary_dissipation() {
    let g = unit(32);
    let pair = DensityPair::new(block(g, 0.0, 1.0, 0.5), block(g, 0.0, 1.0, 0.5)).unwrap();
    let tr = run(&pair, Exponent::Finite(2.0), [linear(0.0, 1.0), linear(0.0, 1.0)], 0.1, 2);
    let reports = check_apriori_bounds(&tr);
    let c1 = reports.iter().find(|r| r.name == "C1").unwrap();
    assert!((c1.rhs - sqrt(3.0)).abs() < 1e-12);
    let c2 = reports.iter().find(|r| r.name == "C2").unwrap();
    assert!(c2.lhs < 1e-12);
    assert!(reports.iter().all(|r| r.satisfied), "{reports:?}");
}

#[test]
fn bounds_hold_on_a_moving_run() {
    let g = unit(128);
    let pair = DensityPair::new(block(g, 0.5, 0.9, 0.8), block(g, 0.1, 0.4, 0.8)).unwrap();
    let tr = run(&pair, Exponent::Finite(2.0), [linear(1.0, 0.0), linear(2.0, 0.0)], 0.01, 6);
    let reports = check_apriori_bounds(&tr);
    assert_eq!(reports.len(), 7);
    for r in &reports {
        assert!(r.satisfied && r.margin >= 0.0, "{r:?}");
    }
}

#[test]
fn incompressible_bounds() {
    let g = unit(64);
    let pair = DensityPair::new(block(g, 0.5, 0.8, 1.0), block(g, 0.2, 0.4, 1.0)).unwrap();
    let tr = run(&pair, Exponent::Incompressible, [linear(1.0, 0.0), linear(2.0, 0.0)], 0.01, 3);
    let reports = check_apriori_bounds(&tr);
    let names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["dissipation", "C1", "C2"]);
    assert_eq!(reports[1].rhs, 1.0);
    assert!(reports.iter().all(|r| r.satisfied), "{reports:?}");
}

#[test]
fn complementarity_examples() {
    let g = unit(10);
    let pair = DensityPair::new(block(g, 0.0, 0.5, 0.9), DensityField::zeros(g)).unwrap();
    assert_eq!(complementarity_residual(&pair, &PotentialField::zeros(g)), 0.0);
    let mut p = vec![0.0; 10];
    p[2] = 1.0;
    let p = PotentialField::new(g, p).unwrap();
    assert!((complementarity_residual(&pair, &p) - 0.1 * 0.1).abs() < 1e-12);
    let full = DensityPair::new(block(g, 0.0, 0.5, 1.0), DensityField::zeros(g)).unwrap();
    assert!(complementarity_residual(&full, &p) < 1e-15);
}

#[test]
fn weak_form_constant_test_is_mass_drift() {
    let g = unit(64);
    let pair = DensityPair::new(block(g, 0.5, 0.9, 0.8), block(g, 0.1, 0.4, 0.8)).unwrap();
    let tr = run(&pair, Exponent::Finite(2.0), [linear(1.0, 0.0), linear(2.0, 0.0)], 0.01, 4);
    let r = weak_form_residual(&tr, SpaceTimeTest::CONSTANT, (0.0, 0.04), 1e-8).unwrap();
    assert!(r[0] <= 1e-10 && r[1] <= 1e-10, "{r:?}");
    let test = SpaceTimeTest {
        space: TestFunction { degree: 1, mode: 1 },
        time_mode: 1,
    };
    let r = weak_form_residual(&tr, test, (0.01, 0.03), 1e-8).unwrap();
    assert!(r[0].is_finite() && r[1].is_finite());
    assert!(weak_form_residual(&tr, test, (0.03, 0.01), 1e-8).is_err());
    assert!(weak_form_residual(&tr, test, (0.0, 0.05), 1e-8).is_err());
}

#[test]
fn tail_and_patch_examples() {
    let g = unit(100);
    assert_eq!(saturation_tail(&block(g, 0.2, 0.6, 1.0), 0.05), 0.0);
    assert!((saturation_tail(&block(g, 0.4, 0.6, 1.1), 0.05) - 0.2).abs() < 1e-12);
    assert!(patch_deviation(&block(g, 0.3, 0.5, 1.0), 1e-8) < 1e-12);
    assert!((patch_deviation(&block(g, 0.3, 0.5, 0.5), 1e-8) - 0.1).abs() < 1e-12);
}

#[test]
fn ratio_examples() {
    let g = unit(50);
    let seg = DensityPair::new(block(g, 0.5, 1.0, 0.5), block(g, 0.0, 0.5, 0.5)).unwrap();
    let c = ratio_preservation_check(&seg, &seg, 0.5, 1e-8, 1e-6);
    assert!(c.holds && c.worst_excess == 0.0);
    let bad = DensityPair::new(block(g, 0.2, 0.6, 0.4), block(g, 0.2, 0.6, 0.2)).unwrap();
    // r ρ¹ = 2 ρ² with r = 1
    assert!(!ratio_preservation_check(&seg, &bad, 1.0, 1e-8, 1e-6).holds);
}

#[test]
fn mixed_ratio_is_preserved_by_a_step() {
    let g = unit(64);
    let r1 = DensityField::from_fn(g, |x| 0.3 + 0.2 * x).unwrap();
    let r2 = DensityField::from_fn(g, |x| 0.25 + 0.1 * x * x).unwrap();
    let pair = DensityPair::new(r1, r2).unwrap();
    let tr = run(&pair, Exponent::Finite(2.0), [linear(1.0, 0.0), linear(1.0, 0.3)], 0.01, 3);
    for k in 0..3 {
        let c = ratio_preservation_check(&tr.pairs[k], &tr.pairs[k + 1], 0.5, 1e-8, 1e-6);
        assert!(c.premise && c.holds, "step {k}: {c:?}");
    }
}

#[test]
fn translating_patch_follows_the_drift() {
    let g = unit(128);
    let pair = DensityPair::new(block(g, 0.5, 0.7, 1.0), DensityField::zeros(g)).unwrap();
    let tr = run(&pair, Exponent::Incompressible, [linear(1.0, 0.0), PotentialSpec::zero()], 0.01, 6);
    let rep = interface_report(&tr, PATCH_EPS, 1e-8);
    assert_eq!(rep.skipped_steps, 0);
    let mut checked = 0;
    for s in &rep.steps {
        for e in &s.endpoints {
            if let (Some(v), Some(l)) = (e.velocity, e.law_velocity) {
                assert!((l + 1.0).abs() < 1e-2, "{e:?}");
                assert!((v + 1.0).abs() < 0.05, "{e:?}");
                checked += 1;
            }
        }
    }
    assert!(checked >= 8);
    for k in 0..=6 {
        assert!(patch_deviation(tr.pairs[k].first(), 1e-8) <= 5.0 * g.h());
    }
}

#[test]
fn saturated_wall_block_is_at_rest() {
    let g = unit(64);
    let pair = DensityPair::new(block(g, 0.0, 0.25, 1.0), DensityField::zeros(g)).unwrap();
    let tr = run(&pair, Exponent::Incompressible, [linear(1.0, 0.0), PotentialSpec::zero()], 0.01, 4);
    let rep = interface_report(&tr, PATCH_EPS, 1e-8);
    for s in &rep.steps[1..] {
        for e in &s.endpoints {
            if let Some(v) = e.velocity {
                assert!(v.abs() < 1e-6, "{e:?}");
            }
            if e.side == Side::Right {
                // ∂ₓp = −∂ₓΦ from inside
                assert!(e.law_velocity.unwrap().abs() < 1e-3, "{e:?}");
            }
        }
    }
    assert!(rep.max_endpoint_residual < 1e-3);
}

#[test]
fn non_patch_states_are_skipped() {
    let g = unit(64);
    let pair = DensityPair::new(block(g, 0.2, 0.6, 0.5), DensityField::zeros(g)).unwrap();
    let tr = run(&pair, Exponent::Incompressible, [PotentialSpec::zero(), PotentialSpec::zero()], 0.01, 1);
    let rep = interface_report(&tr, PATCH_EPS, 1e-8);
    assert_eq!(rep.skipped_steps, 2);
    assert!(rep.steps.iter().all(|s| !s.patch));
}

#[test]
fn stationary_refinement_has_no_gaps() {
    let g = unit(32);
    let pair = DensityPair::new(block(g, 0.0, 1.0, 0.3), block(g, 0.0, 1.0, 0.2)).unwrap();
    let p = ModelParams::new(
        Exponent::Finite(2.0),
        [1.0, 1.0],
        [PotentialSpec::zero(), PotentialSpec::zero()],
        pair.masses(),
        0.04,
        0.02,
    )
    .unwrap();
    let s = SolverConfig::default();
    let t = tau_refinement_study(&pair, &p, 3, &s).unwrap();
    assert_eq!(t.levels.len(), 3);
    assert!(t.levels[2].sup_distance_to_next.is_none());
    for l in &t.levels[..2] {
        assert!(l.sup_distance_to_next.unwrap() <= 10.0 * s.inner_tol);
    }
    assert!(tau_refinement_study(&pair, &p, 1, &s).is_err());
}

#[test]
fn slope_fit() {
    let x = [0.04, 0.02, 0.01];
    let y: Vec<f64> = x.iter().map(|t| 3.0 * t * t).collect();
    assert!((log_slope(&x, &y) - 2.0).abs() < 1e-12);
}

#[test]
fn sweep_with_only_the_limit() {
    let g = unit(64);
    let pair = DensityPair::new(block(g, 0.5, 0.8, 1.0), block(g, 0.2, 0.4, 1.0)).unwrap();
    let p = ModelParams::new(
        Exponent::Finite(2.0),
        [1.0, 1.0],
        [linear(1.0, 0.0), linear(2.0, 0.0)],
        pair.masses(),
        0.02,
        0.01,
    )
    .unwrap();
    let t = m_sweep_study(&pair, &p, &[Exponent::Incompressible], &SolverConfig::default()).unwrap();
    assert_eq!(t.rows.len(), 1);
    assert_eq!(t.rows[0].tails, [0.0, 0.0]);
    assert_eq!(t.rows[0].distance_to_limit, Some(0.0));
    assert_eq!(t.complementarity.len(), 2);
    assert!(t.complementarity.iter().all(|c| *c <= 1e-6));
    let over = DensityPair::new(block(g, 0.5, 0.8, 1.2), DensityField::zeros(g)).unwrap();
    assert!(m_sweep_study(&over, &p, &[Exponent::Incompressible], &SolverConfig::default()).is_err());
}


