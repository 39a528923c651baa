use crossdiff_core::energy::{internal_energy, pressure_finite_m, Exponent, ModelParams, PotentialSpec};
use crossdiff_core::jko::{step, SolverConfig};
use crossdiff_core::measure::{
    cdf, monotone_map, pushforward, quantile, w2_distance, w2_squared, DensityField, DensityPair, Grid,
};
use proptest::prelude::*;

const N: usize = 24;

fn grid() -> Grid {
    Grid::new(0.0, 1.0, N).unwrap()
}

/// Cell values in `[0, 1)` with roughly a quarter of the cells empty,
/// rescaled to `mass`.
fn field(mass: f64) -> impl Strategy<Value = DensityField> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 3 => 0.05f64..1.0], N)
        .prop_filter("needs mass", |v| v.iter().any(|x| *x > 0.0))
        .prop_map(move |v| DensityField::new(grid(), v).unwrap().with_mass(mass).unwrap())
}

fn positive_field(mass: f64) -> impl Strategy<Value = DensityField> {
    prop::collection::vec(0.2f64..1.0, N)
        .prop_map(move |v| DensityField::new(grid(), v).unwrap().with_mass(mass).unwrap())
}

fn params(m: f64, masses: [f64; 2]) -> ModelParams {
    ModelParams::new(
        Exponent::Finite(m),
        [1.0, 1.0],
        [PotentialSpec::Linear { a: 1.0, b: 0.0 }, PotentialSpec::Linear { a: -0.5, b: 0.0 }],
        masses,
        0.02,
        0.02,
    )
    .unwrap()
}

fn blend(a: &DensityField, b: &DensityField, t: f64) -> DensityField {
    let v = a.values().iter().zip(b.values()).map(|(x, y)| (1.0 - t) * x + t * y).collect();
    DensityField::new(grid(), v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_is_symmetric(a in field(0.7), b in field(0.7)) {
        let (ab, ba) = (w2_distance(&a, &b).unwrap(), w2_distance(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1e-300));
    }

    #[test]
    fn w2_triangle_inequality(a in field(0.4), b in field(0.4), c in field(0.4)) {
        let ac = w2_distance(&a, &c).unwrap();
        let ab = w2_distance(&a, &b).unwrap();
        let bc = w2_distance(&b, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-10, "{ac} > {ab} + {bc}");
    }

    #[test]
    fn w2_subadditive_over_species(
        mu1 in field(0.3), nu1 in field(0.3), mu2 in field(0.6), nu2 in field(0.6),
    ) {
        let joint = w2_squared(&mu1.add(&mu2).unwrap(), &nu1.add(&nu2).unwrap()).unwrap();
        let split = w2_squared(&mu1, &nu1).unwrap() + w2_squared(&mu2, &nu2).unwrap();
        prop_assert!(joint <= split + 1e-10, "{joint} > {split}");
    }

    #[test]
    fn pushforward_conserves_mass(a in field(1.3), b in field(1.3)) {
        let map = monotone_map(&a, &b).unwrap();
        let out = pushforward(&a, &map).unwrap();
        prop_assert!((out.mass() - a.mass()).abs() <= 1e-12 * a.mass());
    }

    #[test]
    fn cdf_inverts_quantile(a in field(0.9), s in 0.001f64..0.999) {
        let f = cdf(&a).unwrap();
        let level = s * a.mass();
        let x = quantile(&a, level).unwrap();
        prop_assert!((f.eval(x) - level).abs() <= 1e-12);
    }

    #[test]
    fn internal_energy_convex_along_blends(
        a1 in field(0.5), a2 in field(0.3), b1 in field(0.5), b2 in field(0.3),
        t in 0.0f64..1.0, m in 1.2f64..4.0,
    ) {
        let p = params(m, [0.5, 0.3]);
        let a = DensityPair::new(a1.clone(), a2.clone()).unwrap();
        let b = DensityPair::new(b1.clone(), b2.clone()).unwrap();
        let mid = DensityPair::new(blend(&a1, &b1, t), blend(&a2, &b2, t)).unwrap();
        let (fa, fb, fm) = (
            internal_energy(&a, &p).unwrap(),
            internal_energy(&b, &p).unwrap(),
            internal_energy(&mid, &p).unwrap(),
        );
        prop_assert!(fm <= (1.0 - t) * fa + t * fb + 1e-10);
    }

    #[test]
    fn pressure_sees_only_the_total(a in field(0.5), b in field(0.3), theta in 0.0f64..1.0, m in 1.2f64..4.0) {
        let pair = DensityPair::new(a.clone(), b.clone()).unwrap();
        let total = pair.total();
        let split = |w: f64| DensityField::new(grid(), total.iter().map(|x| w * x).collect()).unwrap();
        let other = DensityPair::new(split(theta), split(1.0 - theta)).unwrap();
        let p = pressure_finite_m(&pair, m).unwrap();
        let q = pressure_finite_m(&other, m).unwrap();
        for (x, y) in p.values().iter().zip(q.values()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn step_conserves_mass_and_lowers_energy(a in positive_field(0.4), b in positive_field(0.25), m in 1.5f64..3.0) {
        let p = params(m, [0.4, 0.25]);
        let pair = DensityPair::new(a, b).unwrap();
        let out = step(&pair, &p, &SolverConfig::default()).unwrap();
        for (before, after) in pair.masses().iter().zip(out.pair.masses()) {
            prop_assert!((before - after).abs() <= 1e-10 * before);
        }
        let energy = |q: &DensityPair| {
            internal_energy(q, &p).unwrap() + crossdiff_core::energy::potential_energy(q, &p)
        };
        prop_assert!(energy(&out.pair) <= energy(&pair) + 1e-8);
    }
}
