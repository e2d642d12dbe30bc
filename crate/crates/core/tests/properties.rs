use std::f64::consts::PI;

use kdvnet_core::catalog::CatalogDocument;
use kdvnet_core::critical_sets::{enumerate_rosier, rosier_length, rosier_membership};
use kdvnet_core::cubic::{format_complex, girard_residuals, parse_complex, poly, solve_depressed_cubic, ComplexScalar as C};
use kdvnet_core::gramian::{assemble_gramian, sine_basis};
use kdvnet_core::simulator::{solve_adjoint, solve_forward, ControlSignal, GraphGrid, StateField};
use kdvnet_core::spectral::build_boundary_matrix;
use kdvnet_core::GraphConfig;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn complex(bound: f64) -> impl Strategy<Value = C> {
    (-bound..bound, -bound..bound).prop_map(|(re, im)| C::new(re, im))
}

fn field_gap(a: &StateField, b: &StateField) -> f64 {
    a.values
        .iter()
        .flatten()
        .zip(b.values.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cubic_roots_satisfy_girard(lam in complex(10.0)) {
        let r = solve_depressed_cubic(lam);
        let (e1, e2, e3) = girard_residuals(&r);
        prop_assert!(e1 < 1e-10 && e2 < 1e-10 && e3 < 1e-10);
        for mu in r.roots {
            prop_assert!(poly(lam, mu).norm() <= 1e-12 * lam.norm().max(1.0));
        }
    }

    #[test]
    fn cubic_matches_companion_eigenvalues(lam in complex(10.0)) {
        let z = C::new(0.0, 0.0);
        let one = C::new(1.0, 0.0);
        let m = DMatrix::from_row_slice(3, 3, &[z, -one, -lam, one, z, z, z, one, z]);
        let eig: Vec<C> = m.eigenvalues().unwrap().iter().copied().collect();
        let r = solve_depressed_cubic(lam);
        for mu in r.roots {
            let d = eig.iter().map(|e| (e - mu).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(d < 1e-9, "root {mu} has no eigenvalue within 1e-9");
        }
    }

    #[test]
    fn complex_text_round_trip(z in complex(1e3)) {
        prop_assert_eq!(parse_complex(&format_complex(z)), Some(z));
    }

    #[test]
    fn rosier_lengths_are_members(k in 1u32..30, l in 1u32..30) {
        let len = rosier_length(k, l);
        let (k2, l2) = rosier_membership(len, 1e-12).expect("member");
        prop_assert!((rosier_length(k2, l2) - len).abs() <= 1e-12 * len);
    }

    #[test]
    fn rosier_enumeration_is_increasing(lmax in 1.0f64..60.0) {
        let ls: Vec<f64> = enumerate_rosier(lmax).iter().map(|w| w.length).collect();
        prop_assert!(ls.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ls.iter().all(|&l| l <= lmax));
    }

    #[test]
    fn residual_is_scale_invariant(lam in complex(3.0), len in 1.0f64..10.0, s in complex(5.0)) {
        prop_assume!(s.norm() > 1e-3);
        let cfg = GraphConfig::uniform(3, 1, len).unwrap();
        let mat = build_boundary_matrix(&cfg, lam).unwrap();
        let d: Vec<C> = (0..9).map(|i| C::new(1.0 + i as f64, 0.5 - i as f64)).collect();
        let sd: Vec<C> = d.iter().map(|z| z * s).collect();
        let (r1, r2) = (mat.relative_residual(&d), mat.relative_residual(&sd));
        prop_assert!((r1 - r2).abs() <= 1e-12 * r1.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn adjoint_solver_is_linear(n in 2usize..4, m in 0usize..4, len in 1.0f64..5.0, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        prop_assume!(m <= n);
        let cfg = GraphConfig::uniform(n, m, len).unwrap();
        let grid = GraphGrid::with_ratio(cfg, 33, 0.5, 0.2).unwrap();
        let basis = sine_basis(&grid, 2).unwrap();
        let mixed = basis[0].scaled(a).axpy(b, &basis[1]);
        let r0 = solve_adjoint(&basis[0], &grid).unwrap();
        let r1 = solve_adjoint(&basis[1], &grid).unwrap();
        let rm = solve_adjoint(&mixed, &grid).unwrap();
        let expect = r0.initial.scaled(a).axpy(b, &r1.initial);
        prop_assert!(field_gap(&rm.initial, &expect) <= 1e-10 * (1.0 + expect.max_abs()));
    }

    #[test]
    fn forward_solver_is_linear_in_controls(n in 2usize..4, m in 0usize..4, f1 in 1.0f64..4.0, f2 in 1.0f64..4.0) {
        prop_assume!(m <= n);
        let cfg = GraphConfig::uniform(n, m, 2.0).unwrap();
        let grid = GraphGrid::with_ratio(cfg, 33, 0.5, 0.2).unwrap();
        let u1 = ControlSignal::from_fn(&grid, |j, t| ((j + 1) as f64 * f1 * t).sin() * t);
        let u2 = ControlSignal::from_fn(&grid, |j, t| (f2 * t + j as f64).cos() * t);
        let mut sum = ControlSignal::zeros(&grid);
        for j in 0..n {
            for (k, v) in sum.channels[j].iter_mut().enumerate() {
                *v = u1.channels[j][k] - 2.0 * u2.channels[j][k];
            }
        }
        let zero = StateField::zeros(&grid, 0.0);
        let y1 = solve_forward(&zero, &u1, &grid).unwrap().terminal;
        let y2 = solve_forward(&zero, &u2, &grid).unwrap().terminal;
        let ys = solve_forward(&zero, &sum, &grid).unwrap().terminal;
        let expect = y1.axpy(-2.0, &y2);
        prop_assert!(field_gap(&ys, &expect) <= 1e-10 * (1.0 + expect.max_abs()));
    }

    #[test]
    fn gramian_is_symmetric_psd(n in 2usize..4, m in 0usize..4, len in 1.0f64..8.0) {
        prop_assume!(m <= n);
        let cfg = GraphConfig::uniform(n, m, len).unwrap();
        let grid = GraphGrid::with_ratio(cfg, 48, 0.5, 0.5).unwrap();
        let basis = sine_basis(&grid, 6).unwrap();
        let g = assemble_gramian(&grid, &basis).unwrap();
        let mat = g.matrix();
        let scale = mat.amax().max(1e-300);
        prop_assert!((&mat - mat.transpose()).amax() <= 1e-12 * scale);
        prop_assert!(g.eigenvalues.iter().all(|&e| e >= -1e-10 * scale));
    }

    #[test]
    fn catalog_round_trips(lmax in 5.0f64..40.0, stamp in "[0-9]{4}-01-01T00:00:00Z") {
        let doc = CatalogDocument::with_timestamp(enumerate_rosier(lmax), stamp);
        let text = doc.to_canonical_json().unwrap();
        let back = CatalogDocument::from_json(&text).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(back.to_canonical_json().unwrap(), text);
    }
}

#[test]
fn one_minus_cos_trace_is_mirrored() {
    // (1 − cos, −(1 − cos), 0) at L = 2π: the kernel used by the Rosier case
    let cfg = GraphConfig::uniform(3, 2, 2.0 * PI).unwrap();
    let mat = build_boundary_matrix(&cfg, C::new(0.0, 0.0)).unwrap();
    let sol = mat.solution();
    for x in [0.5, 1.0, 3.0, 5.5] {
        let f0 = mat.edge_value(&sol.coefficients, 0, x, 0);
        let f1 = mat.edge_value(&sol.coefficients, 1, x, 0);
        let f2 = mat.edge_value(&sol.coefficients, 2, x, 0);
        assert!((f0 + f1).norm() < 1e-10);
        assert!(f2.norm() < 1e-10);
    }
}
