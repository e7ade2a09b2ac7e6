use nalgebra::DMatrix;
use poincare_lab::constants::{build_transition_kernel, pnorm_power_iteration};
use poincare_lab::functionals::{make_psi_pair, orlicz_functional, PsiKind};
use poincare_lab::geometry::Lattice;
use poincare_lab::scenarios::{
    make_boltzmann_scenario, make_domain_scenario, make_graph_scenario, make_lattice_scenario,
    preset_adjacency, BoltzmannConfig, DomainConfig, DomainShape, GraphPreset, LatticeConfig,
    LatticeMode, PixelMask,
};
use poincare_lab::space::{Relation, Space};
use poincare_lab::weights::{
    check_admissibility, check_admissibility_alt, check_differential_condition,
    check_mean_value_bound, search_admissibility, AdmissibilityParams, SearchGrid,
};
use poincare_lab::{Error, WeightPair};
use proptest::prelude::*;

fn scaled_space() -> impl Strategy<Value = Space> {
    (2usize..9).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.1f64..5.0, n),
            proptest::collection::vec(proptest::bool::weighted(0.5), n * n),
            proptest::collection::vec(proptest::bool::weighted(0.5), n * n),
        )
            .prop_map(move |(m, outer, inner)| {
                let unit = Relation::from_predicate(n, |x, y| x == y || outer[x * n + y]);
                let fine = Relation::from_predicate(n, |x, y| x == y || (outer[x * n + y] && inner[x * n + y]));
                Space::new(m, unit.clone(), vec![unit, fine]).unwrap()
            })
    })
}

fn decaying_path(n: usize, rate: f64) -> (Space, WeightPair) {
    let sc = make_graph_scenario(&preset_adjacency(GraphPreset::Path, n), 0, rate, None).unwrap();
    (sc.space, sc.weights)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vol_star_bounded_by_outer_dual_ball(s in scaled_space()) {
        for x in 0..s.len() {
            for &y in s.ball(x) {
                let v = s.vol_star(x, y).unwrap();
                prop_assert!(v <= s.scale_dual_mass(0, y) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn alternative_pass_implies_main_pass(
        n in 3usize..12,
        rate in 0.2f64..3.0,
        lambda in 1.0f64..20.0,
        epsilon in 1e-4f64..1.0,
        s in 0.05f64..0.95,
    ) {
        let (space, weights) = decaying_path(n, rate);
        let growth = space.fit_growth_constant(3).unwrap();
        let params = AdmissibilityParams { lambda, epsilon, s };
        match check_admissibility_alt(&space, &weights, params, &growth) {
            Ok(alt) => if alt.passed {
                prop_assert!(check_admissibility(&space, &weights, params, &growth).unwrap().passed);
            },
            Err(Error::Parameter(_)) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn certificates_recheck_clean(n in 3usize..15, rate in 0.5f64..3.0) {
        let (space, weights) = decaying_path(n, rate);
        let growth = space.fit_growth_constant(3).unwrap();
        let found = search_admissibility(&space, &weights, &SearchGrid::default_for(&growth), &growth).unwrap();
        if let Some(cert) = found.certificate() {
            let again = check_admissibility(&space, &weights, cert.params(), &growth).unwrap();
            prop_assert!(again.passed);
            prop_assert!(again.violations.is_empty());
        }
    }

    #[test]
    fn kernel_powers_vanish(n in 3usize..15, rate in 1.2f64..3.0, f in proptest::collection::vec(-5.0f64..5.0, 15)) {
        let (space, weights) = decaying_path(n, rate);
        let growth = space.fit_growth_constant(3).unwrap();
        let found = search_admissibility(&space, &weights, &SearchGrid::default_for(&growth), &growth).unwrap();
        prop_assume!(found.certificate().is_some());
        let kernel = build_transition_kernel(&space, &weights, found.certificate().unwrap()).unwrap();
        let mut g = f[..n].to_vec();
        let shift = g[0];
        g.iter_mut().for_each(|v| *v -= shift);
        for _ in 0..200 {
            g = kernel.apply_t(&g);
        }
        prop_assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn orlicz_strictly_increasing_in_c(s in scaled_space(), seed in proptest::collection::vec(-3.0f64..3.0, 9), c in 0.01f64..10.0) {
        let n = s.len();
        let f = &seed[..n];
        prop_assume!(f.iter().any(|v| (v - f[0]).abs() > 1e-3));
        let weights = WeightPair::equal(vec![1.0; n], vec![0]).unwrap();
        let psi = make_psi_pair(PsiKind::LogPower, 0.5, 0.0).unwrap();
        let a = orlicz_functional(&s, &weights, &psi, f, 2.0, c);
        let b = orlicz_functional(&s, &weights, &psi, f, 2.0, c * 1.01);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert!(b > a),
            (Err(_), Err(_)) => {}
            (a, b) => return Err(TestCaseError::fail(format!("inconsistent outcomes {a:?} {b:?}"))),
        }
    }

    #[test]
    fn log_power_slow_growth_below_bound(alpha in 0.0f64..2.0) {
        let psi = make_psi_pair(PsiKind::LogPower, alpha, 0.0).unwrap();
        prop_assert!(psi.slow_growth_constant <= 2f64.powf(alpha) + 1e-9);
    }

    #[test]
    fn pnorm_bounds_nonincreasing(entries in proptest::collection::vec(0.0f64..1.0, 16), p in 1.2f64..4.0) {
        let b = DMatrix::from_row_slice(4, 4, &entries);
        let bound = pnorm_power_iteration(&b, p, 500).unwrap();
        for w in bound.sequence.windows(2).skip(1) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        prop_assert!(bound.lower <= bound.value * (1.0 + 1e-12));
    }

    #[test]
    fn generated_weights_are_ordered(
        dim in 1usize..3,
        extent in 1.0f64..3.0,
        s_exp in 1.0f64..3.0,
        eps in 0.0f64..0.99,
        core in proptest::bool::ANY,
    ) {
        let mut cfg = LatticeConfig::gaussian(dim, extent, 0.5, s_exp, eps);
        if core {
            cfg.mode = LatticeMode::Core;
        }
        let sc = make_lattice_scenario(&cfg).unwrap();
        prop_assert!(sc.weights.w().iter().zip(sc.weights.w_plus()).all(|(a, b)| a <= b));
        prop_assert!(sc.space.unit().is_reflexive().is_none());
    }

    #[test]
    fn boltzmann_relation_symmetric(dim in 1usize..3, extent in 1.0f64..2.5, alpha in 0.0f64..2.0) {
        let sc = make_boltzmann_scenario(&BoltzmannConfig { dim, extent, spacing: 0.25, alpha }).unwrap();
        prop_assert!(sc.space.unit().is_symmetric());
        prop_assert!(sc.weights.w().iter().zip(sc.weights.w_plus()).all(|(a, b)| a <= b));
    }

    #[test]
    fn mean_value_holds_outside_subsolution_region(sigma in 0.3f64..1.0) {
        // V = x^2 gives sigma |V'|^2 - V'' = 4 sigma x^2 - 2 >= rho outside R.
        let rho = 0.5;
        let radius = ((2.0 + rho) / (4.0 * sigma)).sqrt();
        let lattice = Lattice::cube(1, radius + 3.0, 0.05).unwrap();
        let v: Vec<f64> = (0..lattice.len()).map(|i| lattice.coords(i)[0].powi(2)).collect();
        let diff = check_differential_condition(&lattice, &v, sigma, rho, radius).unwrap();
        prop_assert!(diff.violations.is_empty());
        let f: Vec<f64> = v.iter().map(|x| (-sigma * x).exp()).collect();
        let mv = check_mean_value_bound(&lattice, &f, sigma * rho, 1.0).unwrap();
        for i in 0..lattice.len() {
            if lattice.norm(i) > radius + 1.0 {
                if let Some(m) = mv.margins[i] {
                    prop_assert!(m >= -1e-10, "margin {} at {}", m, lattice.coords(i)[0]);
                }
            }
        }
    }
}

#[test]
fn subsolution_decays_geometrically() {
    let (sigma, rho): (f64, f64) = (0.5, 0.5);
    let rho_f = sigma * rho;
    let radius = ((2.0 + rho) / (4.0 * sigma)).sqrt();
    let lattice = Lattice::cube(1, 12.0, 0.05).unwrap();
    let f: Vec<f64> = (0..lattice.len())
        .map(|i| (-sigma * lattice.coords(i)[0].powi(2)).exp())
        .collect();
    let step = (3.0 / rho_f).sqrt();
    let tail = |t: f64| {
        (0..lattice.len())
            .filter(|&i| lattice.norm(i) >= t)
            .map(|i| f[i])
            .fold(0.0, f64::max)
    };
    let mut t = radius;
    let mut prev = tail(t);
    while t + step < 12.0 {
        t += step;
        let cur = tail(t);
        assert!(cur <= 0.5 * prev, "tail {cur} after {prev}");
        prev = cur;
    }
}

#[test]
fn domain_levels_nested_and_bounded() {
    for shape in [DomainShape::Square, DomainShape::Dumbbell] {
        let cfg = DomainConfig {
            shape,
            pixel: 0.1,
            ..DomainConfig::default()
        };
        let out = make_domain_scenario(&PixelMask::from_config(&cfg).unwrap(), cfg.c_threshold).unwrap();
        assert!(out.covered);
        let n_star = out.n_star.unwrap();
        for (i, level) in out.levels.iter().enumerate() {
            let v = level.expect("covered pixels carry a level");
            assert!(v >= 1 && v <= n_star);
            let w = out.scenario.weights.w()[i];
            assert!(w <= (-1.0f64).exp() * (1.0 + 1e-15) && w >= (-(n_star as f64)).exp() * (1.0 - 1e-15));
        }
        for &i in &out.o1 {
            assert_eq!(out.levels[i], Some(1));
        }
    }
}

#[test]
fn bigcor_branches_comparable_at_core_edge() {
    let mut cfg = LatticeConfig::gaussian(1, 8.0, 0.25, 2.0, 0.5);
    cfg.mode = LatticeMode::Bigcor;
    cfg.core_radius = 1.5;
    let sc = make_lattice_scenario(&cfg).unwrap();
    // The inner branch starts at A and the outer one at W(R+1) >= a.
    let ratio = sc.diagnostics["branch_ratio"];
    let spread = sc.diagnostics["core_max"] / sc.diagnostics["core_min"];
    assert!(ratio >= 1.0 && ratio <= spread * (1.0 + 1e-12), "branch ratio {ratio}, A/a {spread}");
    assert!(sc.weights.w().iter().zip(sc.weights.w_plus()).all(|(a, b)| a <= b));
}
