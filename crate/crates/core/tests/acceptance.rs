//! Acceptance suite: one PASS/FAIL line per criterion, tolerances and time budgets pinned below.
//! Runs as a plain binary (`harness = false`) so the lines reach stdout uncaptured.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tilens_core::cli_io::{run_scenario, Command, RunConfig};
use tilens_core::field::{Field, GridField, GridSpec};
use tilens_core::inversion::{poincare_check, random_bump, random_rotation, relative_error, slab_mask, slab_profile, width, ForwardOperator, RecoveryProblem, Scenario};
use tilens_core::linalg::{Mat6, Vec3};
use tilens_core::material_model::{MaterialModel, Mode, Param};
use tilens_core::parabolic_calc::{inverse_parabolic, parametrix_residual, smk_membership_test, HeatProblem, MembershipConfig};
use tilens_core::pseudolin::{Cutoff, CutoffProfile, JacobianSource, PseudoLin};
use tilens_core::raytracer::{sphere_point, PhasePoint, RayTracer};
use tilens_core::symbols::{log_space, principal_prediction, probe_symbol, subprincipal_from_dynamics, subprincipal_prediction, transverse_scan, ProbeConfig};

type Check = Result<String, String>;

fn ok_if(pass: bool, detail: String) -> Check {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3<f64> {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v * (1.0 / n);
        }
    }
}

fn in_ball(rng: &mut ChaCha8Rng, r: f64) -> Vec3<f64> {
    unit(rng) * (r * rng.gen_range(0.0f64..1.0).cbrt())
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

fn ti() -> MaterialModel<f64> {
    MaterialModel::homogeneous(3.6, 3.0, 1.0, 1.0, 0.6, [0.0, 0.0, 1.0])
}

fn spherical_layers() -> MaterialModel<f64> {
    let mut m = ti().with_radius(3.0);
    m.layer = Field::expr("sqrt(x^2+y^2+z^2)").unwrap();
    m.a11 = Field::expr("3.9 - 0.3*sqrt(x^2+y^2+z^2)").unwrap();
    m.a55 = Field::expr("1.2 - 0.2*sqrt(x^2+y^2+z^2)").unwrap();
    m
}

const ISO_TOL: f64 = 1e-12;

fn isotropic_reduction() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for (lambda, mu) in [(1.0, 1.0), (0.5, 2.0), (3.0, 0.7), (-0.5, 1.5)] {
        let m = MaterialModel::<f64>::isotropic(lambda, mu);
        for _ in 0..200 {
            let x = in_ball(&mut rng, 1.0);
            let xi = unit(&mut rng) * rng.gen_range(0.2..3.0);
            let r2 = xi.norm2();
            let gp = m.eval_g(Mode::QP, x, xi).unwrap();
            let gs = m.eval_g(Mode::QSV, x, xi).unwrap();
            let gh = m.eval_g(Mode::QSH, x, xi).unwrap();
            let e = [
                (gp - 2.0 * (lambda + 2.0 * mu) * r2) / (2.0 * (lambda + 2.0 * mu) * r2),
                (gs - 2.0 * mu * r2) / (2.0 * mu * r2),
                (gh - 2.0 * mu * r2) / (2.0 * mu * r2),
                (m.h_pm(Mode::QP, x) - 4.0 * (lambda + 2.0 * mu)) / (4.0 * (lambda + 2.0 * mu)),
                (m.h_pm(Mode::QSV, x) - 4.0 * mu) / (4.0 * mu),
            ];
            worst = e.iter().fold(worst, |w, v| w.max(v.abs()));
        }
    }
    ok_if(worst < ISO_TOL, format!("max rel deviation {worst:.2e} < {ISO_TOL:e} (G_qP, G_qSV, G_qSH, h_+, h_-)"))
}

const CHRISTOFFEL_TOL: f64 = 1e-10;
const CHRISTOFFEL_POINTS: usize = 10_000;

/// Twice the Christoffel eigenvalues built from the stiffness tensor in the symmetry-axis frame.
fn christoffel_oracle(m: &MaterialModel<f64>, x: Vec3<f64>, xi: Vec3<f64>) -> [f64; 3] {
    let p = |f: &Field<f64>| f.value(x);
    let (c11, c33, c44, c66, e2) = (p(&m.a11), p(&m.a33), p(&m.a55), p(&m.a66), p(&m.e2));
    let c13_plus_c44 = ((c11 - c44) * (c33 - c44) - e2).sqrt();
    let n = m.local(x).axis();
    let (e1, e2v) = n.orthonormal_complement();
    let (p1, p2, p3) = (xi.dot(e1), xi.dot(e2v), xi.dot(n));
    let g = Matrix3::new(
        c11 * p1 * p1 + c66 * p2 * p2 + c44 * p3 * p3,
        (c11 - c66) * p1 * p2,
        c13_plus_c44 * p1 * p3,
        (c11 - c66) * p1 * p2,
        c66 * p1 * p1 + c11 * p2 * p2 + c44 * p3 * p3,
        c13_plus_c44 * p2 * p3,
        c13_plus_c44 * p1 * p3,
        c13_plus_c44 * p2 * p3,
        c44 * (p1 * p1 + p2 * p2) + c33 * p3 * p3,
    );
    let ev = SymmetricEigen::new(g).eigenvalues;
    let mut v = [2.0 * ev[0], 2.0 * ev[1], 2.0 * ev[2]];
    v.sort_by(f64::total_cmp);
    v
}

fn christoffel() -> Check {
    let m = MaterialModel {
        a11: Field::expr("4 + 0.3*x - 0.2*y*z").unwrap(),
        a33: Field::expr("3 + 0.1*sin(y) + 0.05*z").unwrap(),
        a55: Field::expr("1 + 0.05*x*x").unwrap(),
        a66: Field::constant(1.2),
        e2: Field::expr("2 + 0.1*cos(x + z)").unwrap(),
        layer: Field::expr("z + 0.2*x*x + 0.1*y").unwrap(),
        domain_radius: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..CHRISTOFFEL_POINTS {
        let x = in_ball(&mut rng, 1.0);
        let xi = unit(&mut rng);
        let mut g = [Mode::QP, Mode::QSV, Mode::QSH].map(|md| m.eval_g(md, x, xi).unwrap());
        g.sort_by(f64::total_cmp);
        let o = christoffel_oracle(&m, x, xi);
        worst = (0..3).fold(worst, |w, i| w.max((g[i] - o[i]).abs()));
    }
    ok_if(worst < CHRISTOFFEL_TOL, format!("{CHRISTOFFEL_POINTS} unit covectors, max |eig diff| {worst:.2e} < {CHRISTOFFEL_TOL:e}"))
}

const ENERGY_TOL: f64 = 1e-8;
const CHORD_TOL: f64 = 1e-8;
const SYMPLECTIC_TOL: f64 = 1e-7;

fn ray_dynamics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = mild();
    let mut energy = 0.0f64;
    let mut defect = 0.0f64;
    for mode in [Mode::QP, Mode::QSV] {
        let tr = RayTracer::new(&m, mode);
        for _ in 0..10 {
            let p = tr.normalize(PhasePoint::new(in_ball(&mut rng, 0.5), unit(&mut rng))).unwrap();
            let (_, traj) = tr.trace_to_exit(p).unwrap();
            let mesh = traj.mesh();
            for w in mesh.windows(2) {
                for t in [w[0], 0.5 * (w[0] + w[1])] {
                    let q = traj.phase(t);
                    energy = energy.max((m.eval_g(mode, q.x, q.xi).unwrap() - 0.5).abs());
                }
            }
            let j = tr.flow_jacobian(p, 0.3).unwrap();
            let om = Mat6::omega();
            defect = defect.max(j.transpose().matmul(&om).matmul(&j).sub(&om).max_abs());
        }
    }
    let iso = MaterialModel::<f64>::isotropic(1.0, 1.0);
    let tr = RayTracer::new(&iso, Mode::QP);
    let speed = 2.0 * 3f64.sqrt();
    let mut chord = 0.0f64;
    for _ in 0..20 {
        let x0 = unit(&mut rng);
        let mut d = unit(&mut rng);
        if d.dot(x0) > 0.0 {
            d = d * -1.0;
        }
        let p = tr.normalize(PhasePoint::new(x0, d)).unwrap();
        let (rec, _) = tr.trace_to_exit(p).unwrap();
        let exact = -2.0 * x0.dot(d) / speed;
        chord = chord.max(((rec.tau - exact) / exact).abs());
    }
    ok_if(
        energy < ENERGY_TOL && chord < CHORD_TOL && defect < SYMPLECTIC_TOL,
        format!("energy drift {energy:.2e} < {ENERGY_TOL:e}; chord exit time rel {chord:.2e} < {CHORD_TOL:e}; symplectic defect {defect:.2e} < {SYMPLECTIC_TOL:e}"),
    )
}

const LENS_TOL: f64 = 1e-3;
const TABLE_SPACING: f64 = 1e-3;

fn exit_covectors() -> Check {
    let m = mild();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut n = 0;
    for mode in [Mode::QP, Mode::QSV] {
        let tr = RayTracer::new(&m, mode);
        for _ in 0..6 {
            let th = rng.gen_range(0.3..2.8);
            let ph = rng.gen_range(0.0..std::f64::consts::TAU);
            let x0 = sphere_point(1.0, th, ph);
            let x1 = sphere_point(1.0, std::f64::consts::PI - th + rng.gen_range(-0.4..0.4), ph + std::f64::consts::PI + rng.gen_range(-0.6..0.6));
            let (_, rec) = tr.boundary_travel_time(x0, x1).unwrap();
            let mut table = |y: Vec3<f64>| tr.boundary_travel_time(x0, y).map(|v| v.0);
            let xi = tr.exit_covector_from_travel_times(x1, TABLE_SPACING, &mut table).unwrap();
            worst = worst.max((xi - rec.exit.xi).norm() / rec.exit.xi.norm());
            n += 1;
        }
    }
    ok_if(worst < LENS_TOL, format!("{n} boundary pairs (qP, qSV), spacing {TABLE_SPACING:e}, max rel covector error {worst:.2e} < {LENS_TOL:e}"))
}

const SU_TOL: f64 = 1e-5;
const SU_PAIRS: usize = 100;
const SU_ODE_TOL: f64 = 1e-13;
const SU_NODES: usize = 256;

fn su_identity() -> Check {
    let base = mild();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for i in 0..SU_PAIRS {
        let centres: Vec<Vec3<f64>> = (0..3).map(|_| in_ball(&mut rng, 0.3)).collect();
        let mut bump = |rng: &mut ChaCha8Rng, c: Vec3<f64>| Field::bump(c.to_f64(), rng.gen_range(0.3..0.6), rng.gen_range(-0.08..0.08));
        let pert = base.perturbed(bump(&mut rng, centres[0]), bump(&mut rng, centres[1]), bump(&mut rng, centres[2]));
        let mode = if i % 2 == 0 { Mode::QP } else { Mode::QSV };
        let mut pl = PseudoLin::new(&base, &pert, mode);
        pl.tol = SU_ODE_TOL;
        // start inside a bump so the ray actually feels the perturbation
        let x = centres[i % 3] + in_ball(&mut rng, 0.15);
        let p = pl.base_tracer().normalize(PhasePoint::new(x, unit(&mut rng))).unwrap();
        let (_, _, rel) = pl.su_identity_check(p, 0.25, SU_NODES).unwrap();
        worst = worst.max(rel);
    }
    ok_if(worst < SU_TOL, format!("{SU_PAIRS} random ray/perturbation pairs (ode tol {SU_ODE_TOL:e}, {SU_NODES} nodes), max rel residual {worst:.2e} < {SU_TOL:e}"))
}

const PROBE_TOL: f64 = 0.05;
const QUADRATIC: (f64, f64) = (2.0, 0.2);
const QUARTIC: (f64, f64) = (4.0, 0.4);
const SUBPRINCIPAL_AGREEMENT: f64 = 1e-5;

fn symbols() -> Check {
    let mut notes = Vec::new();
    let mut pass = true;

    // blurred probe of σ(N^{a11}) for qP at the largest admissible |ζ|
    let m = ti().with_radius(2.0);
    let pl = PseudoLin::new(&m, &m, Mode::QP).with_source(JacobianSource::Background);
    let cfg = ProbeConfig { n_s: 48, n_phi: 512, ..ProbeConfig::default() };
    let axis = Vec3::new(0.0, 0.0, 1.0);
    let (e1, _) = axis.orthonormal_complement();
    let mut probe_err = 0.0f64;
    for dir in [e1, (e1 + axis).normalized()] {
        let zeta = dir * cfg.max_zeta(dir);
        let pred = principal_prediction(&pl, Param::A11, Vec3::zero(), zeta, 256).unwrap().value;
        let probed = probe_symbol(&pl, Param::A11, Vec3::zero(), zeta, &cfg).unwrap().scalar;
        probe_err = probe_err.max((probed - pred).norm() / pred.norm());
    }
    pass &= probe_err < PROBE_TOL;
    notes.push(format!("probe rel {probe_err:.2e} < {PROBE_TOL}"));

    // transverse vanishing exponents near Σ
    let m = ti();
    let us = log_space(0.02, 0.2, 5);
    let deltas = [1.0 / 64.0, 1.0 / 90.5, 1.0 / 128.0];
    let cases = [
        (Mode::QP, Param::A33, QUADRATIC),
        (Mode::QP, Param::E2, QUADRATIC),
        (Mode::QSV, Param::E2, QUADRATIC),
        (Mode::QSV, Param::A11, QUADRATIC),
        (Mode::QSV, Param::A33, QUARTIC),
    ];
    for (mode, nu, (target, tol)) in cases {
        let pl = PseudoLin::new(&m, &m, mode).with_cutoff(Cutoff::new(0.8, CutoffProfile::Smooth));
        let scan = transverse_scan(&pl, nu, Vec3::zero(), &us, &deltas, 48, 256).unwrap();
        let good = (scan.exponent - target).abs() <= tol;
        pass &= good;
        notes.push(format!("{nu}/{mode} exponent {:.3} (target {target} ± {tol})", scan.exponent));
    }

    // subprincipal part on Σ: purely imaginary, odd in s, same value from the flow
    let m = spherical_layers();
    let x = Vec3::new(0.0, 0.6, 0.8);
    let mut sub_ok = true;
    let mut agree = 0.0f64;
    for (mode, nu) in [(Mode::QP, Param::A33), (Mode::QP, Param::E2), (Mode::QSV, Param::E2), (Mode::QSV, Param::A11)] {
        let pl = PseudoLin::new(&m, &m, mode);
        for s in [1.0, 2.5] {
            let a = subprincipal_prediction(&pl, nu, x, s, 128).unwrap();
            let b = subprincipal_prediction(&pl, nu, x, -s, 128).unwrap();
            sub_ok &= a.a_m2.re == 0.0 && b.a_m2.re == 0.0 && a.a_m2.im != 0.0 && a.a_m2.im == -b.a_m2.im;
            // the imaginary sign is sgn(s) times the sign of the closed-form coefficient
            sub_ok &= a.a_m2.im.signum() == a.closed_form.im.signum();
            let dy = subprincipal_from_dynamics(&pl, nu, x, s, 128).unwrap();
            agree = agree.max((dy - a.a_m2).norm() / a.a_m2.norm());
        }
    }
    sub_ok &= agree < SUBPRINCIPAL_AGREEMENT;
    pass &= sub_ok;
    notes.push(format!("subprincipal imaginary/odd {}; flow agreement {agree:.1e} < {SUBPRINCIPAL_AGREEMENT:e}", if sub_ok { "yes" } else { "no" }));
    ok_if(pass, notes.join("; "))
}

const RESIDUAL_EXPONENT_MAX: f64 = -0.4;

fn parabolic() -> Check {
    let cfg = MembershipConfig::default();
    let p = HeatProblem::new(8, |x| 1.0 + 0.3 * x.sin(), |_| 1.0).symbol();
    let (q, lb) = inverse_parabolic(&p, &cfg).unwrap();
    let rep = smk_membership_test(&q, -2.0, -2.0, &cfg);
    let hp = HeatProblem::new(256, |x| 1.0 + 0.3 * x.sin(), |x| 1.0 + 0.2 * x.cos());
    let res = parametrix_residual(&hp, &[8.0, 16.0, 32.0, 64.0], 0.5, 0.5).unwrap();
    let top: Vec<String> = rep.constants.iter().rev().take(3).rev().map(|c| format!("{c:.3}")).collect();
    ok_if(
        (q.m, q.k) == (-2.0, -2.0) && rep.passed && res.exponent <= RESIDUAL_EXPONENT_MAX,
        format!(
            "inverse in S^(-2,-2): {} (top-dyad constants [{}], plateau {:.3}, growth {:.3}/dyad, lower bound c {:.3}); residual exponent {:.3} <= {RESIDUAL_EXPONENT_MAX}",
            rep.passed,
            top.join(", "),
            rep.plateau_ratio,
            rep.growth_per_dyad,
            lb.c,
            res.exponent
        ),
    )
}

const POINCARE_FIELDS: usize = 200;
const WIDTH_INVARIANCE: f64 = 0.05;

fn poincare() -> Check {
    let spec = GridSpec::cube(32, 0.5);
    let h = spec.spacing[0];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = f64::NEG_INFINITY;
    let mut interp = true;
    for _ in 0..POINCARE_FIELDS {
        let th = rng.gen_range(0.12..0.4);
        let u = GridField::new(spec.clone(), random_bump(&spec, &mut rng, th, 0.35));
        let r = poincare_check(&u, None);
        let bound = 1.0 + 3.0 * h / r.width;
        worst = worst.max(r.ratio_l2 / bound).max(r.ratio_h_half / bound);
        interp &= r.interpolation_holds;
    }
    // a 0.4 × 0.6 × 0.6 box under random rotations, resolved with w/h = 32
    let fine = GridSpec::cube(81, 0.5);
    let boxed = |rot: Option<tilens_core::linalg::Mat3<f64>>| {
        let data = (0..fine.len())
            .map(|i| {
                let x = Vec3(fine.node(i));
                let y = rot.map_or(x, |r| r.mul_vec(x));
                if y[0].abs() <= 0.2 && y[1].abs() <= 0.3 && y[2].abs() <= 0.3 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        width(&GridField::new(fine.clone(), data), 0.5, 200, 1).width
    };
    let w0 = boxed(None);
    let mut spread = 0.0f64;
    for _ in 0..6 {
        let w = boxed(Some(random_rotation(&mut rng)));
        spread = spread.max((w - w0).abs() / w0);
    }
    ok_if(
        worst <= 1.0 && interp && spread <= WIDTH_INVARIANCE,
        format!(
            "{POINCARE_FIELDS} bumps: max ratio/(1+3h/w) {worst:.3} <= 1, interpolation holds {interp}; width {w0:.4} varies {spread:.3} <= {WIDTH_INVARIANCE} under rotation"
        ),
    )
}

const ONE_PARAM_TOL: f64 = 0.10;
const TWO_PARAM_TOL: f64 = 0.20;
const ZERO_DATA_TOL: f64 = 1e-6;
const RECOVERY_GRID: usize = 32;

fn recovery() -> Check {
    let spec = GridSpec::cube(RECOVERY_GRID, 0.5);
    let base = ti();
    let cutoff = Cutoff::new(0.3, CutoffProfile::C2);
    let normal = [1.0, 0.0, 0.0];
    let mask = slab_mask(&spec, normal, 0.05, 0.4);
    let profile = slab_profile(&spec, normal, 0.05, 0.4, 0.1);
    // distinct shapes per unknown so that joint recovery is not trivially symmetric
    let truth_for = |k: usize| -> Vec<f64> {
        profile
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let x = spec.node(i);
                v * (1.0 + 0.5 * (std::f64::consts::PI * (k as f64 + 1.0) * x[1] / 0.4).sin()) * if k == 1 { -0.6 } else { 1.0 }
            })
            .collect()
    };
    let mut notes = Vec::new();
    let mut pass = true;
    let mut zero_ratio = f64::NAN;
    for (name, tol) in [("one:a11:qp", ONE_PARAM_TOL), ("one:e2:qsv", ONE_PARAM_TOL), ("two:a33,e2", TWO_PARAM_TOL), ("two:a11,e2", TWO_PARAM_TOL), ("func:a33:0.5,0,0.2", TWO_PARAM_TOL)] {
        let sc = Scenario::parse(name).unwrap();
        let op = ForwardOperator::new(&base, sc.clone(), cutoff, spec.clone()).unwrap();
        let truth: Vec<Vec<f64>> = (0..sc.unknowns().len()).map(truth_for).collect();
        let data = op.apply(&truth);
        let pb = RecoveryProblem::new(op, mask.clone());
        let rec = pb.recover(&data, None).unwrap();
        let err = relative_error(&rec.fields, &truth);
        pass &= err < tol;
        notes.push(format!("{name} {err:.2e} < {tol}"));
        if name == "one:e2:qsv" {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let init: Vec<f64> = mask.iter().map(|m| if *m { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect();
            let n0 = init.iter().map(|v| v * v).sum::<f64>().sqrt();
            let zero: Vec<[Vec<f64>; 3]> = data.iter().map(|d| std::array::from_fn(|_| vec![0.0; d[0].len()])).collect();
            let z = pb.recover(&zero, Some(vec![init])).unwrap();
            zero_ratio = z.fields[0].iter().map(|v| v * v).sum::<f64>().sqrt() / n0;
        }
    }
    pass &= zero_ratio < ZERO_DATA_TOL;
    notes.push(format!("zero data {zero_ratio:.1e} < {ZERO_DATA_TOL:e}"));
    // (a11, a33) from E²-free data: report the near-null direction instead of recovering
    let ill = Scenario::parse("two:a11,a33").unwrap();
    let weak = ForwardOperator::new(&base, ill.clone(), cutoff, spec.clone()).unwrap().weakest_direction(0.2);
    let well = ForwardOperator::new(&base, Scenario::parse("two:a33,e2").unwrap(), cutoff, spec.clone()).unwrap().weakest_direction(0.2);
    let reported = ill.expected_ill_posed() && weak.ratio < 1e-3 * well.ratio;
    pass &= reported;
    notes.push(format!(
        "(a11,a33) near-null ratio {:.1e} vs {:.1e} for (a33,e2), direction [{:.3}, {:.3}]",
        weak.ratio, well.ratio, weak.direction[0], weak.direction[1]
    ));
    ok_if(pass, notes.join("; "))
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn determinism() -> Check {
    let c = configs_dir();
    let mut runs: Vec<RunConfig> = Vec::new();
    let mut forward = RunConfig::new(Command::Forward);
    forward.model.base = Some(c.join("ti_mild.toml"));
    forward.raytracer.n_rays = 4;
    runs.push(forward);
    let mut invert = RunConfig::new(Command::Invert);
    invert.model.base = Some(c.join("ti_homogeneous.toml"));
    invert.model.pert = Some(c.join("slab_e2.toml"));
    invert.inversion.scenario = "one:e2:qsv".into();
    invert.inversion.grid = 16;
    invert.inversion.zero_data_check = true;
    runs.push(invert);
    let mut w = RunConfig::new(Command::Width);
    w.model.field = Some(c.join("bump5.tigrid"));
    runs.push(w);
    let mut same = true;
    let mut files = 0;
    for cfg in runs {
        let mut digests = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let mut run = cfg.clone();
            run.run.seed = 11;
            run.run.output_dir = dir.path().to_path_buf();
            let m = run_scenario(&run).map_err(|e| format!("{}: {e}", cfg.run.command.name()))?;
            let mut bytes = Vec::new();
            for o in &m.outputs {
                bytes.push((o.file.clone(), o.sha256.clone(), std::fs::read(dir.path().join(&o.file)).unwrap()));
            }
            digests.push(bytes);
        }
        files += digests[0].len();
        same &= digests[0] == digests[1];
    }
    ok_if(same, format!("{files} output files from forward, invert and width byte-identical across two seeded runs"))
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, f64, fn() -> Check); 10] = [
        (1, "isotropic reduction", 1.0, isotropic_reduction),
        (2, "Christoffel cross-check", 10.0, christoffel),
        (3, "ray dynamics", 60.0, ray_dynamics),
        (4, "exit covectors from travel times", 120.0, exit_covectors),
        (5, "flow perturbation identity", 120.0, su_identity),
        (6, "symbol verification", 600.0, symbols),
        (7, "parabolic calculus", 300.0, parabolic),
        (8, "Poincare inequalities and width", 60.0, poincare),
        (9, "recovery", 1800.0, recovery),
        (10, "determinism", 600.0, determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (n, name, budget, f) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t0 = Instant::now();
        let out = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        let in_time = secs <= budget;
        let (pass, detail) = match out {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !pass {
            failed += 1;
        }
        println!("criterion {n}: {} {name} [{secs:.1} s <= {budget} s: {in_time}] {detail}", if pass { "PASS" } else { "FAIL" });
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
