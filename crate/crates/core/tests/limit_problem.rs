mod common;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use proptest::prelude::*;
use sticky_averaging::bvp::ode_residual;
use sticky_averaging::generator::marginal_at;
use sticky_averaging::graph::EdgeTable;
use sticky_averaging::harness::DEFAULT_PROBES;
use sticky_averaging::{
    build_generator, compute_coefficients, evaluate, identify, solve_bvp, AnnulusModel, CoefficientOptions,
    EdgeCoefficients, GraphPoint, Model, Point,
};

fn annulus_coefficients(cells: usize) -> EdgeCoefficients {
    compute_coefficients(&AnnulusModel::new(), &CoefficientOptions { cells, ..Default::default() }).unwrap()
}

/// Coefficients built straight from the closed-form profiles.
fn closed_form_coefficients(cells: usize) -> EdgeCoefficients {
    let table = EdgeTable::from_profiles(-0.5, cells, |_| 2.0 * PI, |h| 2.0 * h + 1.0, |h| (2.0 * h + 1.0).sqrt() - 4.0 / 3.0);
    EdgeCoefficients {
        schema_version: sticky_averaging::graph::COEFFICIENTS_SCHEMA_VERSION,
        model: "closed-form".into(),
        edges: vec![table],
        exterior_volume: 3.0 * PI,
        exterior_forcing_mean: 2.0 / 9.0,
        exterior_standard_error: 0.0,
    }
}

#[test]
fn bvp_matches_dense_solve() {
    let coeffs = annulus_coefficients(512);
    let sol = solve_bvp(&coeffs, &GraphPoint::Root).unwrap();
    let dense = common::dense_graph_solve(&coeffs, &GraphPoint::Root);
    let mut worst: f64 = (sol.root - dense.root).abs();
    for (e, d) in sol.edges.iter().zip(&dense.centres) {
        for (a, b) in e.v[1..e.v.len() - 1].iter().zip(d) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= 1e-9, "max difference {worst}");
    assert!(dense.multiplier.abs() < 1e-9, "multiplier {}", dense.multiplier);
}

#[test]
fn bvp_matches_dense_solve_with_edge_anchor() {
    let coeffs = closed_form_coefficients(64);
    let anchor = GraphPoint::Edge { k: 0, h: coeffs.edges[0].center(20) };
    let sol = solve_bvp(&coeffs, &anchor).unwrap();
    let dense = common::dense_graph_solve(&coeffs, &anchor);
    assert!(evaluate(&sol, &anchor).unwrap().abs() < 1e-12);
    assert!((sol.root - dense.root).abs() < 1e-10);
    for (a, b) in sol.edges[0].v[1..65].iter().zip(&dense.centres[0]) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn bvp_approaches_the_closed_form_limit() {
    let model = AnnulusModel::new();
    let coeffs = annulus_coefficients(512);
    let sol = solve_bvp(&coeffs, &identify(&model, &model.normalization_point()).unwrap()).unwrap();
    assert!((sol.root - 0.0).abs() < 1e-12);
    for [x, y] in DEFAULT_PROBES {
        let p = Point::new(x, y);
        let v = evaluate(&sol, &identify(&model, &p).unwrap()).unwrap();
        let expected = common::limit_solution(p.norm());
        assert!((v - expected).abs() < 1e-5, "at {p:?}: {v} vs {expected}");
    }
    assert!((sol.edges[0].outer_slope + 2.0 / 3.0).abs() < 1e-8);
    assert!(ode_residual(&sol, &coeffs) < 1e-3);
}

#[test]
fn discrete_solution_converges_at_first_order_or_better() {
    let errors: Vec<f64> = [32, 64, 128]
        .iter()
        .map(|&n| {
            let sol = solve_bvp(&closed_form_coefficients(n), &GraphPoint::Root).unwrap();
            let e = &sol.edges[0];
            e.h.iter()
                .zip(&e.v)
                .map(|(h, v)| (v - common::limit_solution((2.0 * h + 1.0).sqrt())).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    for w in errors.windows(2) {
        assert!(w[1] < 0.6 * w[0], "errors {errors:?}");
    }
}

#[test]
fn gluing_identity_holds_at_the_root() {
    let sol = solve_bvp(&annulus_coefficients(256), &GraphPoint::Root).unwrap();
    let identity = 3.0 * PI * (2.0 / 9.0) + 0.5 * 2.0 * PI * (-2.0 / 3.0);
    assert!(identity.abs() < 1e-14);
    assert!(sol.gluing_residual.abs() <= 1e-8 * sol.gluing_scale);
}

#[test]
fn generator_resolves_the_gluing_condition() {
    // (Q v)(O) should approach Lv(O) = f̄(O) as the grid is refined.
    let coeffs = closed_form_coefficients(512);
    let mut errors = Vec::new();
    for n in [16, 32, 64] {
        let gen = build_generator(&coeffs, n).unwrap();
        let v: Vec<f64> = (0..gen.len())
            .map(|c| match gen.cell_point(c) {
                GraphPoint::Root => common::limit_solution(1.0),
                GraphPoint::Edge { h, .. } => common::limit_solution((2.0 * h + 1.0).sqrt()),
            })
            .collect();
        errors.push((gen.apply(&v)[0] - 2.0 / 9.0).abs());
    }
    assert!(errors[2] < 0.02, "errors {errors:?}");
    assert!(errors[2] < 0.6 * errors[0], "errors {errors:?}");
}

#[test]
fn marginal_matches_dense_exponential() {
    let gen = build_generator(&annulus_coefficients(128), 32).unwrap();
    let mut q = gen.to_dense();
    let t = 0.7;
    q *= t;
    let expm = q.exp();
    let start = gen.cell_index(0, 5);
    let p0 = gen.initial_distribution(&gen.cell_point(start)).unwrap();
    let fast = marginal_at(&gen, &p0, t).unwrap();
    let row = expm.row(start);
    for (a, b) in fast.iter().zip(row.iter()) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn stationary_law_is_the_dense_null_vector() {
    let gen = build_generator(&annulus_coefficients(64), 16).unwrap();
    let q = gen.to_dense();
    let n = gen.len();
    // Replace one balance equation by the normalization.
    let mut a = q.transpose();
    let mut b = nalgebra::DVector::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b).unwrap();
    let stationary = gen.stationary();
    for (x, y) in pi.iter().zip(&stationary) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!((stationary[0] - 0.75).abs() < 1e-10);
}

#[test]
fn generator_laws_agree_across_resolutions() {
    let coeffs = annulus_coefficients(512);
    let model = AnnulusModel::new();
    let y0 = identify(&model, &Point::new(0.5, 0.0)).unwrap();
    let binned: Vec<_> = [256, 512]
        .iter()
        .map(|&n| {
            let gen = build_generator(&coeffs, n).unwrap();
            let p = marginal_at(&gen, &gen.initial_distribution(&y0).unwrap(), 1.0).unwrap();
            gen.bin(&p, 32)
        })
        .collect();
    let tv = binned[0].total_variation(&binned[1]);
    assert!(tv < 1e-3, "total variation {tv}");
}

fn dense_generator_check(volumes: &[f64], flux: &[f64], p: f64) -> (f64, f64) {
    let cells = flux.len() + 1;
    let table = EdgeTable::from_profiles(
        -1.0,
        cells,
        |h| {
            let j = (((h + 1.0) * cells as f64).floor() as usize).min(cells - 1);
            volumes[j]
        },
        |h| {
            let j = (((h + 1.0) * cells as f64).floor() as usize).min(cells - 1);
            if h <= -1.0 {
                0.0
            } else {
                flux[j.min(flux.len() - 1)] / volumes[j]
            }
        },
        |_| 0.0,
    );
    let mut table = table;
    table.p = p;
    let coeffs = EdgeCoefficients {
        schema_version: sticky_averaging::graph::COEFFICIENTS_SCHEMA_VERSION,
        model: "random".into(),
        edges: vec![table],
        exterior_volume: 1.0,
        exterior_forcing_mean: 0.0,
        exterior_standard_error: 0.0,
    };
    let gen = build_generator(&coeffs, cells).unwrap();
    let dense: DMatrix<f64> = gen.to_dense();
    let rows = dense.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
    (rows, gen.detailed_balance_residual())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_profiles_give_a_reversible_generator(
        volumes in prop::collection::vec(0.1f64..10.0, 8),
        flux in prop::collection::vec(0.01f64..5.0, 7),
        p in 0.01f64..5.0,
    ) {
        let (rows, balance) = dense_generator_check(&volumes, &flux, p);
        prop_assert!(rows < 1e-9);
        prop_assert!(balance < 1e-12);
    }
}
