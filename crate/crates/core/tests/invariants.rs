//! Property tests for invariants that hold across the whole parameter space.

use std::sync::Arc;

use proptest::prelude::*;
use sigma2_core::flow::{eigen_solve, FlowConfig};
use sigma2_core::geometry::{functional_f2, functional_v_eps, schouten_conformal, sobolev_quotient};
use sigma2_core::symfun::{garding_pairing, sigma2_trace_form, sigma_k_eigen, sigma_k_minors};
use sigma2_core::testmetric::{bubble_traces, sphere_constants, BernoulliProfile, BubbleParams};
use sigma2_core::{BackgroundGeometry, ConformalField, RadialGrid, SymmetricMatrix};

fn matrix(dim: usize, entries: &[f64], shift: f64) -> SymmetricMatrix {
    let mut k = 0;
    let mut m = SymmetricMatrix::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            m.set(i, j, entries[k] + if i == j { shift } else { 0.0 });
            k += 1;
        }
    }
    m
}

fn random_matrix() -> impl Strategy<Value = SymmetricMatrix> {
    (2usize..=8).prop_flat_map(|d| {
        (prop::collection::vec(-1.0f64..1.0, d * (d + 1) / 2), 0.0f64..2.0).prop_map(move |(e, s)| matrix(d, &e, s))
    })
}

/// Admissible by construction: a small perturbation of a positive multiple of I.
fn gamma2_matrix(dim: usize) -> impl Strategy<Value = SymmetricMatrix> {
    (prop::collection::vec(-0.3f64..0.3, dim * (dim + 1) / 2), 1.0f64..3.0).prop_map(move |(e, s)| matrix(dim, &e, s))
}

/// `Σ a_k cos(kθ)` with small coefficients.
fn cosine_field(grid: &Arc<RadialGrid>, coeffs: &[f64]) -> ConformalField {
    ConformalField::from_fn(grid.clone(), |t| {
        coeffs.iter().enumerate().map(|(k, a)| a * ((k + 1) as f64 * t).cos()).sum()
    })
    .unwrap()
}

fn s5() -> (BackgroundGeometry, Arc<RadialGrid>) {
    (BackgroundGeometry::round_sphere(5).unwrap(), Arc::new(RadialGrid::sphere(5, 128).unwrap()))
}

fn lambda1_s5() -> f64 {
    static L: std::sync::OnceLock<f64> = std::sync::OnceLock::new();
    *L.get_or_init(|| {
        let (bg, grid) = s5();
        eigen_solve(&bg, cosine_field(&grid, &[0.1]), &FlowConfig::default()).unwrap().lambda1
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sigma2_three_ways_agree(a in random_matrix()) {
        let by_trace = sigma2_trace_form(&a);
        let by_minors = sigma_k_minors(&a, 2).unwrap();
        let by_eigen = sigma_k_eigen(&a, 2).unwrap();
        let scale = a.trace().powi(2) + a.trace_of_square();
        prop_assert!((by_trace - by_minors).abs() <= 1e-12 * scale);
        prop_assert!((by_trace - by_eigen).abs() <= 1e-12 * scale);
    }

    #[test]
    fn garding_pairing_dominates_bound((a, b) in (2usize..=8).prop_flat_map(|d| (gamma2_matrix(d), gamma2_matrix(d)))) {
        let (pairing, bound) = garding_pairing(&a, &b).unwrap();
        prop_assert!(pairing >= bound * (1.0 - 1e-12), "pairing {pairing} < bound {bound}");
    }

    #[test]
    fn bubble_traces_scale(lambda in 1e-4f64..1e-2, s in 0.3f64..3.0, x in 0.05f64..0.9) {
        let base = BubbleParams::new(9, lambda, 1.0, 0.3, 0.0).unwrap();
        let scaled = BubbleParams::new(9, s * s * lambda, 10.0, 0.3, 0.0).unwrap();
        let t0 = bubble_traces(&base, x).unwrap();
        let t1 = bubble_traces(&scaled, s * x).unwrap();
        prop_assert!((t1.tr_a * s.powi(2) / t0.tr_a - 1.0).abs() < 1e-12);
        prop_assert!((t1.tr_a2 * s.powi(4) / t0.tr_a2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_residual_is_small(n in 9usize..=12, a_pad in 0.05f64..2.0, a1 in 0.01f64..1.0, r in 0.05f64..0.6) {
        let p = BernoulliProfile::new(n, a_pad, a1).unwrap();
        if let Ok(a) = p.alpha(r) {
            prop_assume!(a > 1e-3 && a < 2.0 - 1e-3);
            prop_assert!(p.residual(r).abs() < 1e-8, "residual {} at r = {r}", p.residual(r));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn poincare_and_sobolev_on_admissible_fields(coeffs in prop::collection::vec(-0.08f64..0.08, 1..=4)) {
        let (bg, grid) = s5();
        let field = cosine_field(&grid, &coeffs);
        let w = schouten_conformal(&bg, &field).unwrap();
        prop_assume!(w.first_outside_gamma2().is_none());
        let f2 = functional_f2(&bg, &field).unwrap();
        let v2 = functional_v_eps(&bg, &field, 2.0).unwrap();
        let lambda1 = lambda1_s5();
        prop_assert!(f2 >= lambda1 * v2 * (1.0 - 1e-9), "F2 = {f2}, lambda1 V2 = {}", lambda1 * v2);
        let y2 = sphere_constants(5).unwrap().y2_sphere;
        let q = sobolev_quotient(&bg, &field).unwrap();
        prop_assert!(q >= y2 * (1.0 - 1e-9), "quotient {q} below Y2 = {y2}");
    }
}

#[test]
fn y2_identity_across_dimensions() {
    for n in 5..=12 {
        let c = sphere_constants(n).unwrap();
        let nf = n as f64;
        let alt = nf * (nf - 1.0) / 8.0 * (2f64.powi(n as i32) * c.b).powf(4.0 / nf);
        assert!((c.y2_sphere / alt - 1.0).abs() < 1e-8, "n = {n}: {} vs {alt}", c.y2_sphere);
    }
}
