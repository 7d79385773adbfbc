//! Property tests for the structural invariants of every module.

use std::f64::consts::{PI, TAU};

use floquet_core::betasearch::{delta, drift_check, minimal_kappa};
use floquet_core::cocycle::{lyapunov, transfer_matrix, TransferMatrix};
use floquet_core::evolution::{required_dimension, step, LogFifthRoot, StateVector};
use floquet_core::model::{cis, phase_theta, AlmostPeriodic};
use floquet_core::operator::{
    assemble_factorized, assemble_full, assemble_half, assemble_rank_one, perturb_rank_one, theta_covariance_check,
    unitarity_defect, Boundary, Geometry,
};
use floquet_core::spectral::{borel, cauchy, clark_consistency, covariance_density_check, eigendecompose};
use floquet_core::{make_params, BetaValue, Dyadic, ModelParams, PhaseSequence};
use num_complex::Complex64;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = ModelParams> {
    (0.05f64..0.95, 0.0..TAU, 0.0..TAU, 0.0..TAU, 0.0f64..1.0)
        .prop_map(|(t, a, th, l, b)| make_params(t, a, th, l, BetaValue::Float(b)).unwrap())
}

fn exact_params() -> impl Strategy<Value = ModelParams> {
    (0.05f64..0.95, 0.0..TAU, 0.0..TAU, 0.0..TAU, 1u32..12, any::<u64>()).prop_map(|(t, a, th, l, q, s)| {
        let beta = Dyadic::parse_rational(&format!("{}/{}", s % (1 << q), 1u64 << q)).unwrap();
        make_params(t, a, th, l, BetaValue::Exact(beta)).unwrap()
    })
}

fn same_angle(a: f64, b: f64) -> bool {
    (cis(a) - cis(b)).norm() < 1e-13
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rational_beta_is_exactly_periodic(q in 1u32..20, s in any::<u64>(), theta in 0.0..TAU, k in -100_000i64..100_000) {
        let period = 1i64 << q;
        let beta = BetaValue::Exact(Dyadic::parse_rational(&format!("{}/{}", s % (1 << q), period)).unwrap());
        prop_assert_eq!(phase_theta(&beta, theta, k + period).to_bits(), phase_theta(&beta, theta, k).to_bits());
    }

    #[test]
    fn dyadic_order_matches_cross_multiplication(a in -(1i64 << 40)..(1i64 << 40), p in 0u32..50, b in -(1i64 << 40)..(1i64 << 40), q in 0u32..50) {
        let x = Dyadic::parse_rational(&format!("{a}/{}", 1u64 << p)).unwrap();
        let y = Dyadic::parse_rational(&format!("{b}/{}", 1u64 << q)).unwrap();
        let m = p.max(q);
        let lhs = i128::from(a) << (m - p);
        let rhs = i128::from(b) << (m - q);
        prop_assert_eq!(x.cmp(&y), lhs.cmp(&rhs));
    }

    #[test]
    fn gamma_alternates(beta in 0.0f64..1.0, theta in 0.0..TAU, alpha in 0.0..TAU, k in -10_000i64..10_000) {
        let ap = AlmostPeriodic::new(BetaValue::Float(beta), theta, alpha);
        prop_assert!(same_angle(ap.gamma(k + 1), -ap.gamma(k)));
    }

    #[test]
    fn factorized_matches_closed_form(p in params(), n in (4usize..50).prop_map(|k| 4 * k), closed in any::<bool>()) {
        let b = if closed { Boundary::Closed } else { Boundary::Open };
        let half = assemble_half(&p, n, b).unwrap();
        let fh = assemble_factorized(&p.phases(), p.scattering(), half.geometry(), b).unwrap();
        prop_assert!(fh.max_abs_diff(&half).unwrap() < 1e-13);
        let full = assemble_full(&p, n / 2, b).unwrap();
        let ff = assemble_factorized(&p.phases(), p.scattering(), full.geometry(), b).unwrap();
        prop_assert!(ff.max_abs_diff(&full).unwrap() < 1e-13);
    }

    #[test]
    fn interior_columns_are_unit_with_phase_free_moduli(p in params(), n in (4usize..64).prop_map(|h| 2 * h)) {
        let u = assemble_half(&p, n, Boundary::Open).unwrap();
        prop_assert!(unitarity_defect(&u).interior < 1e-13);
        let (r, t) = (p.r(), p.t());
        let allowed = [r * r, r * t, t * t];
        for c in 2..n - 2 {
            let col = u.column(c);
            let norm: f64 = col.iter().map(|z| z.norm_sqr()).sum();
            prop_assert!((norm - 1.0).abs() < 1e-13);
            for z in col.iter().filter(|z| z.norm() > 0.0) {
                prop_assert!(allowed.iter().any(|m| (z.norm() - m).abs() < 1e-14));
            }
        }
    }

    #[test]
    fn rank_one_touches_only_column_one(p in params(), n in (4usize..64).prop_map(|h| 2 * h), lambda in 0.0..TAU) {
        let u = assemble_half(&p, n, Boundary::Closed).unwrap();
        let v = perturb_rank_one(&u, lambda).unwrap();
        for c in 1..n {
            let (a, b) = (u.column(c), v.column(c));
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
        }
        let e = cis(lambda);
        prop_assert!(u.column(0).iter().zip(v.column(0)).all(|(x, y)| (x * e - y).norm() < 1e-15));
    }

    #[test]
    fn theta_covariance(p in exact_params(), n in (4usize..128).prop_map(|h| 2 * h)) {
        prop_assert!(theta_covariance_check(&p, n, Boundary::Open).unwrap() < 1e-13);
    }

    #[test]
    fn norm_and_light_cone(p in params(), n_max in 1usize..80) {
        let n_dim = required_dimension(n_max);
        let u = assemble_rank_one(&p, n_dim, Boundary::Open).unwrap();
        let mut psi = StateVector::basis(u.geometry(), 1).unwrap();
        for n in 1..=n_max {
            psi = step(&u, &psi).unwrap();
            prop_assert!((psi.norm_sqr() - 1.0).abs() < 1e-10);
            prop_assert!(psi.amplitudes()[2 * n + 2..].iter().all(|a| *a == Complex64::new(0.0, 0.0)));
        }
    }

    #[test]
    fn zero_coupling_is_bit_identical(p in params(), n_max in 1usize..60) {
        let n_dim = required_dimension(n_max);
        let p0 = p.with_lambda(0.0).unwrap();
        let (u, v) = (assemble_half(&p0, n_dim, Boundary::Open).unwrap(), assemble_rank_one(&p0, n_dim, Boundary::Open).unwrap());
        let (mut x, mut y) = (StateVector::basis(u.geometry(), 1).unwrap(), StateVector::basis(v.geometry(), 1).unwrap());
        for _ in 0..n_max {
            x = step(&u, &x).unwrap();
            y = step(&v, &y).unwrap();
        }
        prop_assert_eq!(x.amplitudes(), y.amplitudes());
    }

    #[test]
    fn transfer_determinant(p in params(), k in -5000i64..5000, e in 0.0..TAU) {
        let m = transfer_matrix(&p.phases(), p.scattering(), k, e).unwrap();
        let d = m.det();
        let err = (d.norm() - 1.0).abs().max((d - cis(4.0 * PI * p.beta().to_f64())).norm());
        // Phase arguments sum up to six angles (~30 rad, ~30 eps absolute)
        // and multiply terms of size 1/t².
        let t = p.scattering().t;
        prop_assert!(err < 256.0 * f64::EPSILON / (t * t), "err {err:e} t {t}");
    }

    /// Round-off in the round trip grows like the squared growth factor
    /// `k^2 ~ e^{2γn}`; weak scattering keeps 100 steps well conditioned.
    #[test]
    fn transfer_recursion_inverts(t in 0.98f64..0.999, beta in 0.0f64..1.0, theta in 0.0..TAU, e in 0.0..TAU, c2 in -1.0f64..1.0, c3 in -1.0f64..1.0) {
        let p = make_params(t, 0.4, theta, 0.0, BetaValue::Float(beta)).unwrap();
        let (ph, s) = (p.phases(), p.scattering());
        let start = [Complex64::new(c2, 0.3), Complex64::new(c3, -0.2)];
        let mats: Vec<TransferMatrix> = (2..102).map(|k| transfer_matrix(&ph, s, k, e).unwrap()).collect();
        let mut v = start;
        let mut log_scale = 0.0;
        for m in &mats {
            v = m.apply(v);
            let n = v[0].norm().max(v[1].norm());
            v = [v[0] / n, v[1] / n];
            log_scale += n.ln();
        }
        for m in mats.iter().rev() {
            v = m.inverse().unwrap().apply(v);
        }
        let k = log_scale.exp();
        let err = (v[0] * k - start[0]).norm().max((v[1] * k - start[1]).norm());
        prop_assert!(err < 1e-13 * k * k + 1e-12, "err {err:e} k {k:e}");
    }

    #[test]
    fn relation_and_mass(p in params(), n in (4usize..32).prop_map(|h| 2 * h), rho in 0.1f64..0.95, arg in 0.0..TAU, outside in any::<bool>()) {
        let mu = eigendecompose(&assemble_rank_one(&p, n, Boundary::Closed).unwrap(), 0).unwrap();
        prop_assert!((mu.mass() - 1.0).abs() < 1e-10);
        let z = cis(arg) * if outside { 1.0 / rho } else { rho };
        let (f, r) = (cauchy(&mu, z).unwrap(), borel(&mu, z).unwrap());
        prop_assert!((f - 2.0 * z * r - 1.0).norm() < 1e-12 * (1.0 + f.norm()));
    }

    #[test]
    fn clark_consistency_random(p in params(), n in (4usize..48).prop_map(|h| 2 * h), lambda in 0.1f64..6.2) {
        let grid: Vec<Complex64> = (0..32).map(|k| 0.9 * cis(TAU * k as f64 / 32.0)).collect();
        let e = clark_consistency(&p, n, lambda, &grid).unwrap();
        prop_assert!(e.cauchy < 1e-8 && e.borel < 1e-8 && e.real_part < 1e-8);
        prop_assert!(e.relation < 1e-12);
    }

    #[test]
    fn drift_bound_never_violated(p in params(), exp in -10.0f64..-2.0, sign in any::<bool>()) {
        let step = 10f64.powf(exp) * if sign { 1.0 } else { -1.0 };
        let q = p.with_beta(BetaValue::Float(p.beta().to_f64() + step)).unwrap();
        prop_assert_eq!(drift_check(&p, &q, 6).unwrap().violations, 0);
    }

    #[test]
    fn delta_and_kappa_monotone(t in 2u64..3000, extra in 0u64..3000) {
        let (a, b) = (delta(t, &LogFifthRoot).unwrap(), delta(2 * t + extra, &LogFifthRoot).unwrap());
        prop_assert!(b.log2 < a.log2);
        prop_assert!(minimal_kappa(b.log2) >= minimal_kappa(a.log2));
        for d in [&a, &b] {
            prop_assert!((d.lower_exponent as f64) <= d.log2 && (d.lower_exponent as f64) > d.log2 - 2.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn lyapunov_rescale_invariant(p in params(), e in 0.0..TAU) {
        let ph = p.phases();
        let r: Vec<_> = [4u64, 16, 64].iter().map(|&k| lyapunov(&ph, p.scattering(), e, 20_000, k).unwrap()).collect();
        for x in &r[1..] {
            prop_assert!((x.gamma - r[0].gamma).abs() <= 3.0 * r[0].stderr.max(x.stderr) + 1e-12);
        }
    }

    #[test]
    fn lyapunov_theta_constancy(t in 0.3f64..0.9, th1 in 0.0..TAU, th2 in 0.0..TAU, e in 0.0..TAU) {
        let gold = (5f64.sqrt() - 1.0) / 2.0;
        let g = |th: f64| {
            let p = make_params(t, 0.4, th, 0.0, BetaValue::Float(gold)).unwrap();
            lyapunov(&p.phases(), p.scattering(), e, 100_000, 16).unwrap()
        };
        let (a, b) = (g(th1), g(th2));
        prop_assert!((a.gamma - b.gamma).abs() <= 3.0 * (a.stderr + b.stderr) + 1e-3);
    }

    #[test]
    fn covariance_density(theta in 0.0..TAU, t in 0.2f64..0.9) {
        let p = make_params(t, 0.3, 0.0, 0.0, BetaValue::Exact(Dyadic::parse_rational("1/2").unwrap())).unwrap();
        prop_assert!(covariance_density_check(&p, 64, 0.05, theta).unwrap() < 1e-9);
    }
}

#[test]
fn full_line_geometry_sizes() {
    let p = make_params(0.6, 0.0, 0.0, 0.0, BetaValue::Float(0.3)).unwrap();
    let u = assemble_full(&p, 10, Boundary::Open).unwrap();
    assert_eq!(u.geometry(), Geometry::FullLine { half_width: 10 });
    assert_eq!(u.n_dim(), 21);
}
