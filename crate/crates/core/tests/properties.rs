use fraccal::analysis::{check_multiplier_monotonicity, random_smooth_field};
use fraccal::dn::duality_deviation;
use fraccal::recover::Dynamics;
use fraccal::spectral::{bessel_potential, derivative, frac_laplacian, pairing};
use fraccal::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn field(grid: &Grid, seed: u64) -> GridFunction {
    random_smooth_field(grid, &mut ChaCha8Rng::seed_from_u64(seed), 6)
}

fn grid1() -> Grid {
    Grid::new(1, 64, 4.0).unwrap()
}

struct Scene {
    grid: Grid,
    omega: NodeSet,
    w1: NodeSet,
    w2: NodeSet,
}

fn scene() -> Scene {
    let grid = grid1();
    Scene {
        grid,
        omega: make_nodeset(grid, Shape::ball(&[0.0], 1.5), Label::Omega).unwrap(),
        w1: make_nodeset(grid, Shape::cuboid(&[-3.9], &[-1.8]), Label::W1).unwrap(),
        w2: make_nodeset(grid, Shape::cuboid(&[1.8], &[3.8]), Label::W2).unwrap(),
    }
}

fn coefficients(s: &Scene, seed: u64, amp: f64) -> PdoCoefficients {
    let taper = monomial_cutoff(&MultiIndex::zero(1), &Shape::ball(&[0.0], 1.0), 0.4, &s.omega).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = PdoCoefficients::new(s.grid, 1);
    for alpha in MultiIndex::up_to_order(1, 1) {
        c.insert(alpha, random_smooth_field(&s.grid, &mut rng, 4).scale(amp).mul(&taper).unwrap()).unwrap();
    }
    c
}

fn exterior(s: &Scene, set: &NodeSet, seed: u64) -> GridFunction {
    let f = field(&s.grid, seed);
    let kept: Vec<f64> = set.indices().iter().map(|&i| f.values()[i]).collect();
    fraccal::geometry::extend_zero(&kept, set).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pairing_is_symmetric_and_bilinear(a in 0u64..1000, b in 0u64..1000, c in -3.0f64..3.0) {
        let g = grid1();
        let (u, v, w) = (field(&g, a), field(&g, b), field(&g, a + b + 1));
        prop_assert_eq!(pairing(&u, &v).unwrap(), pairing(&v, &u).unwrap());
        let lhs = pairing(&u.axpy(c, &w).unwrap(), &v).unwrap();
        let rhs = pairing(&u, &v).unwrap() + c * pairing(&w, &v).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn fractional_laplacian_is_nonnegative(seed in 0u64..1000, s in 0.05f64..1.95) {
        let u = field(&grid1(), seed);
        prop_assert!(pairing(&frac_laplacian(&u, s).unwrap(), &u).unwrap() >= -1e-12);
    }

    #[test]
    fn derivative_is_antisymmetric(a in 0u64..1000, b in 0u64..1000) {
        let g = Grid::new(2, 16, 3.0).unwrap();
        let (u, v) = (field(&g, a), field(&g, b));
        for axis in 0..2 {
            let e = MultiIndex::unit(2, axis);
            let du = derivative(&u, &e).unwrap();
            let sum = pairing(&du, &v).unwrap() + pairing(&u, &derivative(&v, &e).unwrap()).unwrap();
            let scale = (pairing(&du, &du).unwrap() * pairing(&v, &v).unwrap()).sqrt();
            prop_assert!(sum.abs() <= 1e-12 * scale.max(1e-300));
        }
    }

    #[test]
    fn bessel_potentials_invert(seed in 0u64..1000, r in -3.0f64..3.0) {
        let u = field(&grid1(), seed);
        let back = bessel_potential(&bessel_potential(&u, r).unwrap(), -r).unwrap();
        prop_assert!(back.axpy(-1.0, &u).unwrap().max_abs() <= 1e-12 * u.max_abs());
    }

    #[test]
    fn multiplier_norm_is_monotone(seed in 0u64..1000, r in -1.0f64..1.0, t in -1.0f64..1.0,
                                   l in 0.0f64..0.5, m in 0.0f64..0.5) {
        let f = field(&Grid::new(1, 32, 4.0).unwrap(), seed);
        prop_assert!(check_multiplier_monotonicity(&f, r, t, l, m).unwrap().holds);
    }

    #[test]
    fn forward_solution_copies_exterior_data(seed in 0u64..1000) {
        let s = scene();
        let p = ForwardProblem::new(0.7, coefficients(&s, seed, 0.5), s.omega.clone()).unwrap();
        let f = exterior(&s, &s.w1, seed + 7);
        let u = p.solve_forward(&f, None).unwrap().u;
        for i in 0..s.grid.len() {
            if !s.omega.contains(i) {
                prop_assert_eq!(u.values()[i], f.values()[i]);
            }
        }
    }

    #[test]
    fn adjoint_form_is_the_swapped_form(a in 0u64..1000, b in 0u64..1000) {
        let s = scene();
        let p = ForwardProblem::new(0.7, coefficients(&s, a, 0.5), s.omega.clone()).unwrap();
        let (v, w) = (field(&s.grid, a + 1), field(&s.grid, b));
        let x = p.bilinear(&v, &w).unwrap();
        let y = p.bilinear_adjoint(&w, &v).unwrap();
        prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
    }

    #[test]
    fn dn_maps_satisfy_duality(seed in 0u64..1000) {
        let s = scene();
        let h = s.grid.spacing();
        let p = ForwardProblem::new(0.7, coefficients(&s, seed, 0.5), s.omega.clone()).unwrap();
        let d1 = ExteriorDictionary::lattice(&s.w1, 3.0 * h, 2).unwrap().prefix(5).unwrap();
        let d2 = ExteriorDictionary::lattice(&s.w2, 3.0 * h, 2).unwrap().prefix(4).unwrap();
        let dev = duality_deviation(&assemble_dn(&p, &d1, &d2).unwrap(), &assemble_dn_adjoint(&p, &d2, &d1).unwrap()).unwrap();
        prop_assert!(dev <= 1e-8);
    }

    #[test]
    fn integral_identity_holds(a in 0u64..1000, b in 0u64..1000) {
        let s = scene();
        let p1 = ForwardProblem::new(0.7, coefficients(&s, a, 0.5), s.omega.clone()).unwrap();
        let p2 = ForwardProblem::new(0.7, coefficients(&s, b, 0.5), s.omega.clone()).unwrap();
        let r = alessandrini(&p1, &p2, &exterior(&s, &s.w1, a + b), &exterior(&s, &s.w2, a * b + 3)).unwrap();
        prop_assert!(r.residual() <= 1e-7);
        let same = alessandrini(&p1, &p1, &exterior(&s, &s.w1, a), &exterior(&s, &s.w2, b)).unwrap();
        prop_assert!(same.residual() <= 1e-9);
    }

    #[test]
    fn nested_dictionaries_do_not_increase_runge_error(c in -0.8f64..0.8, r in 0.4f64..0.7) {
        let s = scene();
        let h = s.grid.spacing();
        let p = ForwardProblem::new(0.7, PdoCoefficients::new(s.grid, 0), s.omega.clone()).unwrap();
        let target = bump(&s.grid, &BumpSpec::new(&[c], r), Some(&s.omega)).unwrap();
        let dict = ExteriorDictionary::lattice(&s.w1, 3.0 * h, 1).unwrap();
        let opts = RungeOptions { lambda_rel: 0.0, ..Default::default() };
        let mut last = f64::INFINITY;
        for k in [2, 4, 8, dict.len()] {
            let e = runge_approximate(&p, &target, &dict.prefix(k).unwrap(), Dynamics::Forward, &opts).unwrap().error;
            prop_assert!(e <= last + 1e-12);
            last = e;
        }
    }

    #[test]
    fn dumps_round_trip(seed in 0u64..1000) {
        let u = field(&Grid::new(2, 16, 2.5).unwrap(), seed);
        let mut buf = Vec::new();
        u.write_dump(&mut buf).unwrap();
        prop_assert_eq!(GridFunction::read_dump(buf.as_slice()).unwrap(), u);
    }

    #[test]
    fn dn_csv_round_trips(seed in 0u64..1000) {
        let s = scene();
        let h = s.grid.spacing();
        let p = ForwardProblem::new(0.7, coefficients(&s, seed, 0.5), s.omega.clone()).unwrap();
        let d1 = ExteriorDictionary::lattice(&s.w1, 3.0 * h, 4).unwrap();
        let d2 = ExteriorDictionary::lattice(&s.w2, 3.0 * h, 4).unwrap();
        let dn = assemble_dn(&p, &d1, &d2).unwrap();
        let mut buf = Vec::new();
        dn.write_csv(&mut buf).unwrap();
        prop_assert_eq!(DnMatrix::read_csv(buf.as_slice()).unwrap(), dn);
    }

    #[test]
    fn config_round_trips(s in 0.05f64..0.95, radius in 1.0f64..1.6, seed in 0u64..u64::MAX / 2) {
        let text = format!(
            "seed = {seed}\n[grid]\ndims = 1\npoints = 64\nhalf_length = 4.0\n[problem]\ns = {s}\norder = 0\n\
             [domains]\nomega = {{ kind = \"ball\", center = [0.0], radius = {radius} }}\n\
             w1 = {{ kind = \"box\", lo = [-3.9], hi = [-2.0] }}\nw2 = {{ kind = \"box\", lo = [2.0], hi = [3.8] }}\n"
        );
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(again.to_toml_string().unwrap(), cfg.to_toml_string().unwrap());
        prop_assert_eq!(again.seed, seed);
    }
}
