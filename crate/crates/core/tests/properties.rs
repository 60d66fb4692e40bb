//! Randomized invariants across the modules.

use nalgebra::{Matrix3, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tilens_core::cli_io::{fmt_f64, parse_config_str, run_scenario, Command, RunConfig};
use tilens_core::field::{write_tigrid, Field, GridSpec};
use tilens_core::inversion::{slab_mask, ForwardOperator, RecoveryProblem, Scenario};
use tilens_core::linalg::Vec3;
use tilens_core::material_model::{MaterialModel, Mode, Param};
use num_complex::Complex64 as C64;
use tilens_core::parabolic_calc::{included, smk_membership_test, MembershipConfig, SmkSymbol, XDependence};
use tilens_core::pseudolin::{real_vec, Cutoff, PseudoLin, RayQuadrature};
use tilens_core::raytracer::{PhasePoint, RayTracer};
use tilens_core::symbols::{principal_coefficient, principal_prediction_tilde};

fn vec3() -> impl Strategy<Value = Vec3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_filter_map("non-degenerate", |(a, b, c)| {
        let v = Vec3::new(a, b, c);
        (v.norm() > 0.2).then_some(v)
    })
}

fn direction() -> impl Strategy<Value = Vec3<f64>> {
    vec3().prop_map(|v| v.normalized())
}

/// Valid homogeneous TI parameter sets with a random symmetry axis.
fn ti_model() -> impl Strategy<Value = MaterialModel<f64>> {
    (0.5..1.5f64, 0.5..3.0f64, 0.5..3.0f64, 0.5..2.0f64, 0.0..0.9f64, direction()).prop_map(|(a55, d11, d33, a66, e, axis)| {
        MaterialModel::homogeneous(a55 + d11, a55 + d33, a55, a66, e * d11 * d33, axis.0)
    })
}

/// Weakly anisotropic models (Thomsen-style ε, δ with δ ≤ ε so E² ≥ 0), whose qSV slowness surface stays convex.
fn weak_ti_model() -> impl Strategy<Value = MaterialModel<f64>> {
    (2.5..4.0f64, 0.8..1.2f64, 0.0..0.15f64, 0.0..1.0f64, direction()).prop_map(|(a33, a55, eps, frac, axis)| {
        let a11 = a33 * (1.0 + 2.0 * eps);
        // Small anellipticity keeps the qSV slowness surface convex.
        let delta = eps - 0.05 * frac;
        let e2 = (a33 - a55) * 2.0 * a33 * (eps - delta);
        MaterialModel::homogeneous(a11, a33, a55, a55, e2, axis.0)
    })
}

fn mild() -> MaterialModel<f64> {
    MaterialModel {
        a11: Field::expr("4 + 0.2*x - 0.1*y*z").unwrap(),
        a33: Field::expr("3 + 0.1*sin(y) + 0.05*z").unwrap(),
        a55: Field::expr("1 + 0.05*x*x").unwrap(),
        a66: Field::constant(1.2),
        e2: Field::expr("1 + 0.1*cos(x + z)").unwrap(),
        layer: Field::expr("z + 0.1*x*x + 0.05*y").unwrap(),
        domain_radius: 1.0,
    }
}

fn christoffel_doubled(m: &MaterialModel<f64>, x: Vec3<f64>, xi: Vec3<f64>) -> [f64; 3] {
    let p = |f: &Field<f64>| f.value(x);
    let (c11, c33, c44, c66, e2) = (p(&m.a11), p(&m.a33), p(&m.a55), p(&m.a66), p(&m.e2));
    let c = ((c11 - c44) * (c33 - c44) - e2).sqrt();
    let n = m.local(x).axis();
    let (e1, e2v) = n.orthonormal_complement();
    let (p1, p2, p3) = (xi.dot(e1), xi.dot(e2v), xi.dot(n));
    let g = Matrix3::new(
        c11 * p1 * p1 + c66 * p2 * p2 + c44 * p3 * p3,
        (c11 - c66) * p1 * p2,
        c * p1 * p3,
        (c11 - c66) * p1 * p2,
        c66 * p1 * p1 + c11 * p2 * p2 + c44 * p3 * p3,
        c * p2 * p3,
        c * p1 * p3,
        c * p2 * p3,
        c44 * (p1 * p1 + p2 * p2) + c33 * p3 * p3,
    );
    let ev = SymmetricEigen::new(g).eigenvalues;
    let mut v = [2.0 * ev[0], 2.0 * ev[1], 2.0 * ev[2]];
    v.sort_by(f64::total_cmp);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn hamiltonian_is_quadratic_and_ordered(m in ti_model(), x in vec3(), xi in vec3(), s in 0.1..10.0f64) {
        for mode in [Mode::QP, Mode::QSV, Mode::QSH] {
            let g = m.eval_g(mode, x, xi).unwrap();
            let gs = m.eval_g(mode, x, xi * s).unwrap();
            prop_assert!(g > 0.0);
            prop_assert!((gs - s * s * g).abs() <= 1e-13 * gs.abs());
        }
        prop_assert!(m.eval_g(Mode::QP, x, xi).unwrap() >= m.eval_g(Mode::QSV, x, xi).unwrap());
    }

    #[test]
    fn branches_are_doubled_christoffel_eigenvalues(m in ti_model(), x in vec3(), xi in direction()) {
        let mut g = [Mode::QP, Mode::QSV, Mode::QSH].map(|md| m.eval_g(md, x, xi).unwrap());
        g.sort_by(f64::total_cmp);
        let o = christoffel_doubled(&m, x, xi);
        for i in 0..3 {
            prop_assert!((g[i] - o[i]).abs() < 1e-10, "{:?} vs {:?}", g, o);
        }
    }

    #[test]
    fn group_velocity_inverse(x in vec3().prop_map(|v| v * 0.5), omega in direction()) {
        let m = mild();
        for mode in [Mode::QP, Mode::QSV] {
            let xi = m.xi_of_omega(mode, x, omega).unwrap();
            prop_assert!((m.grad_xi_g(mode, x, xi).unwrap() - omega).norm() < 1e-10);
        }
    }

    #[test]
    fn parameter_derivative_signs(m in ti_model(), xi in direction()) {
        let x = Vec3::zero();
        let h = 1e-6;
        let bump = |r11: f64, r33: f64, re: f64| m.perturbed(Field::constant(r11), Field::constant(r33), Field::constant(re));
        let fd = |mode: Mode, dir: [f64; 3]| {
            let p = bump(h * dir[0], h * dir[1], h * dir[2]).eval_g(mode, x, xi).unwrap();
            let q = bump(-h * dir[0], -h * dir[1], -h * dir[2]).eval_g(mode, x, xi).unwrap();
            (p - q) / (2.0 * h)
        };
        let slack = 1e-7;
        let (_, xi_i2) = m.local(x).xi_t_xi_i(xi);
        if xi_i2 > 1e-6 {
            prop_assert!(fd(Mode::QP, [1.0, 0.0, 0.0]) > 0.0);
        }
        prop_assert!(fd(Mode::QP, [0.0, 1.0, 0.0]) >= -slack);
        prop_assert!(fd(Mode::QP, [0.0, 0.0, 1.0]) <= slack);
        prop_assert!(fd(Mode::QSV, [1.0, 0.0, 0.0]) <= slack);
        prop_assert!(fd(Mode::QSV, [0.0, 1.0, 0.0]) <= slack);
        prop_assert!(fd(Mode::QSV, [0.0, 0.0, 1.0]) >= -slack);
    }

    #[test]
    fn gradients_match_finite_differences(x in vec3().prop_map(|v| v * 0.5), xi in vec3()) {
        let m = mild();
        let c = [-1.0 / 60.0, 3.0 / 20.0, -3.0 / 4.0, 0.0, 3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
        let h = 1e-3;
        for mode in [Mode::QP, Mode::QSV, Mode::QSH] {
            let gx = m.grad_x_g(mode, x, xi).unwrap();
            let gxi = m.grad_xi_g(mode, x, xi).unwrap();
            for a in 0..3 {
                let (mut fx, mut fxi) = (0.0, 0.0);
                for (k, ck) in c.iter().enumerate() {
                    let o = (k as f64 - 3.0) * h;
                    let (mut xs, mut xis) = (x, xi);
                    xs[a] += o;
                    xis[a] += o;
                    fx += ck * m.eval_g(mode, xs, xi).unwrap() / h;
                    fxi += ck * m.eval_g(mode, x, xis).unwrap() / h;
                }
                prop_assert!((gx[a] - fx).abs() < 1e-7 * gx.norm().max(gxi.norm()));
                prop_assert!((gxi[a] - fxi).abs() < 1e-7 * gxi.norm());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flow_is_reversible_and_scales(x in vec3().prop_map(|v| v * 0.4), d in direction(), t in 0.05..0.4f64, s in 0.5..2.0f64) {
        let m = mild();
        for mode in [Mode::QP, Mode::QSV] {
            let tr = RayTracer::new(&m, mode);
            let p = tr.normalize(PhasePoint::new(x, d)).unwrap();
            let fwd = tr.flow(p, t).unwrap();
            let q = PhasePoint::from_state(&fwd.y_end);
            let g0 = m.eval_g(mode, x, p.xi).unwrap();
            prop_assert!((m.eval_g(mode, q.x, q.xi).unwrap() - g0).abs() < 1e-8);
            let back = PhasePoint::from_state(&tr.flow(PhasePoint::new(q.x, q.xi * -1.0), t).unwrap().y_end);
            prop_assert!((back.x - x).norm() < 1e-7 && (back.xi + p.xi).norm() < 1e-7);
            let scaled = PhasePoint::from_state(&tr.flow(PhasePoint::new(x, p.xi * s), t).unwrap().y_end);
            let slow = PhasePoint::from_state(&tr.flow(p, s * t).unwrap().y_end);
            prop_assert!((scaled.x - slow.x).norm() < 1e-8 && (scaled.xi - slow.xi * s).norm() < 1e-8);
        }
    }

    #[test]
    fn ray_transform_is_linear(x in vec3().prop_map(|v| v * 0.3), d in direction(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let m = mild();
        let pl = PseudoLin::new(&m, &m, Mode::QP);
        let p = pl.base_tracer().normalize(PhasePoint::new(x, d)).unwrap();
        let f1 = |y: Vec3<f64>| real_vec(Vec3::new(y[1].sin(), y[0] * y[2], 1.0));
        let f2 = |y: Vec3<f64>| real_vec(Vec3::new(y[2], (2.0 * y[0]).cos(), y[1] * y[1]));
        let both = |y: Vec3<f64>| {
            let (u, v) = (f1(y), f2(y));
            [u[0] * a + v[0] * b, u[1] * a + v[1] * b, u[2] * a + v[2] * b]
        };
        let q = RayQuadrature::default();
        for nu in Param::ALL {
            let u = pl.transform_i_at(nu, p, &f1, q).unwrap();
            let v = pl.transform_i_at(nu, p, &f2, q).unwrap();
            let w = pl.transform_i_at(nu, p, &both, q).unwrap();
            for i in 0..3 {
                let lin = u[i] * a + v[i] * b;
                prop_assert!((w[i] - lin).norm() < 1e-10 * (1.0 + lin.norm()));
            }
        }
    }

    #[test]
    fn principal_symbol_signs(m in weak_ti_model(), zeta in vec3()) {
        let x = Vec3::zero();
        let sign = |mode, nu| principal_coefficient(&PseudoLin::new(&m, &m, mode), nu, x, zeta, 128).unwrap();
        prop_assert!(sign(Mode::QP, Param::A33) >= 0.0);
        prop_assert!(sign(Mode::QP, Param::E2) <= 0.0);
        prop_assert!(sign(Mode::QSV, Param::E2) >= 0.0);
        prop_assert!(sign(Mode::QSV, Param::A11) <= 0.0);
    }

    #[test]
    fn scalar_field_symbol_vanishes_on_sigma(s in prop_oneof![0.5..4.0f64, -4.0..-0.5f64], y in -0.3..0.3f64) {
        let mut m = MaterialModel::<f64>::homogeneous(3.6, 3.0, 1.0, 1.0, 0.6, [0.0, 0.0, 1.0]).with_radius(3.0);
        m.layer = Field::expr("sqrt(x^2+y^2+z^2)").unwrap();
        m.a11 = Field::expr("3.9 - 0.3*sqrt(x^2+y^2+z^2)").unwrap();
        m.a33 = Field::expr("3.2 - 0.2*sqrt(x^2+y^2+z^2)").unwrap();
        let x = Vec3::new(0.0, y, 0.9);
        let axis = m.local(x).axis();
        let (e1, _) = axis.orthonormal_complement();
        for mode in [Mode::QP, Mode::QSV] {
            let pl = PseudoLin::new(&m, &m, mode);
            for nu in [Param::A33, Param::E2] {
                let on = principal_prediction_tilde(&pl, nu, x, axis * s, 128).unwrap();
                let off = principal_prediction_tilde(&pl, nu, x, (axis + e1).normalized() * s.abs(), 128).unwrap();
                prop_assert!(on.norm() <= 1e-12 * off.norm().max(1e-12), "{mode} {nu}: {} vs {}", on.norm(), off.norm());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn inclusion_law_on_heat_inverse(m2 in (-4..=0).prop_map(f64::from), k2 in (-4..=0).prop_map(f64::from)) {
        let a = SmkSymbol::new(2, -2.0, -2.0, XDependence::None, |_, z| C64::new(z[0] * z[0], z[1]).inv());
        let cfg = MembershipConfig { max_order: 2, ..Default::default() };
        let passed = smk_membership_test(&a, m2, k2, &cfg).passed;
        prop_assert_eq!(passed, included(-2.0, -2.0, m2, k2), "({}, {})", m2, k2);
    }

    #[test]
    fn zero_data_recovers_zero(seed in 0u64..1000, normal in direction()) {
        let spec = GridSpec::cube(12, 0.5);
        let m = MaterialModel::<f64>::homogeneous(3.6, 3.0, 1.0, 1.0, 0.6, [0.0, 0.0, 1.0]);
        let op = ForwardOperator::new(&m, Scenario::parse("one:a11:qp").unwrap(), Cutoff::new(0.3, tilens_core::pseudolin::CutoffProfile::C2), spec.clone()).unwrap();
        let mask = slab_mask(&spec, normal.0, 0.1, 0.35);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init: Vec<f64> = mask.iter().map(|m| if *m { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect();
        let n0 = init.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(n0 > 0.0);
        let tl = op.emb.torus.total();
        let zero = vec![[vec![0.0; tl], vec![0.0; tl], vec![0.0; tl]]];
        let rec = RecoveryProblem::new(op, mask).recover(&zero, Some(vec![init])).unwrap();
        let n1 = rec.fields[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(n1 < 1e-6 * n0, "{}", n1 / n0);
    }

    #[test]
    fn config_echo_round_trips(
        seed in 0..=i64::MAX as u64,
        n_rays in 1usize..500,
        ode_tol in 1e-14..1e-6f64,
        eps in 0.01..0.5f64,
        grid in 4usize..64,
        lambda in proptest::option::of(1e-12..1.0f64),
        scenario in prop_oneof![Just("one:a11:qp"), Just("two:a33,e2"), Just("func:a33:0.5,0,0.2")],
    ) {
        let mut c = RunConfig::new(Command::Invert);
        c.run.seed = seed;
        c.model.base = Some("/models/base.toml".into());
        c.model.pert = Some("/models/pert.toml".into());
        c.raytracer.n_rays = n_rays;
        c.raytracer.ode_tol = ode_tol;
        c.pseudolin.eps = eps;
        c.inversion.grid = grid;
        c.inversion.lambda_reg = lambda;
        c.inversion.scenario = scenario.into();
        let echo = c.echo();
        let back = parse_config_str(&echo).unwrap();
        prop_assert_eq!(back.echo(), echo);
        prop_assert_eq!(back.raytracer.ode_tol, ode_tol);
        prop_assert_eq!(back.inversion.lambda_reg, lambda);
    }

    #[test]
    fn width_runs_are_byte_identical(seed in 0u64..10_000) {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::cube(9, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..spec.len()).map(|_| if rng.gen_bool(0.3) { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect();
        let field = dir.path().join("u.tigrid");
        write_tigrid(&field, &spec, &data).unwrap();
        let mut digests = Vec::new();
        for k in 0..2 {
            let mut c = RunConfig::new(Command::Width);
            c.run.seed = seed;
            c.model.field = Some(field.clone());
            c.run.output_dir = dir.path().join(format!("run{k}"));
            digests.push(run_scenario(&c).unwrap().outputs.into_iter().map(|o| o.sha256).collect::<Vec<_>>());
        }
        prop_assert_eq!(&digests[0], &digests[1]);
    }
}

proptest! {
    #[test]
    fn csv_floats_round_trip_exactly(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let s = fmt_f64(v);
        prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

}
