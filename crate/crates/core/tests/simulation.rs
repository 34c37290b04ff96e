mod common;

use sticky_averaging::generator::{marginal_at, simulate_ctmc};
use sticky_averaging::harness::DEFAULT_PROBES;
use sticky_averaging::sde::{feynman_kac_probes, simulate_occupation, FeynmanKacOptions};
use sticky_averaging::{build_generator, compute_coefficients, identify, AnnulusModel, CoefficientOptions, Model, Point, SimConfig};

#[test]
fn chain_samples_follow_the_uniformized_marginal() {
    let coeffs = compute_coefficients(&AnnulusModel::new(), &CoefficientOptions { cells: 64, ..Default::default() }).unwrap();
    let gen = build_generator(&coeffs, 8).unwrap();
    let start = gen.cell_index(0, 2);
    let t = 0.5;
    let n = 20_000;
    let paths = simulate_ctmc(&gen, start, t, &[t], n, 41).unwrap();
    let mut counts = vec![0usize; gen.len()];
    for p in &paths {
        counts[p.observations[0]] += 1;
    }
    let p0 = gen.initial_distribution(&gen.cell_point(start)).unwrap();
    let exact = marginal_at(&gen, &p0, t).unwrap();
    for (c, q) in counts.iter().zip(&exact) {
        let freq = *c as f64 / n as f64;
        let sd = (q * (1.0 - q) / n as f64).sqrt().max(1e-4);
        assert!((freq - q).abs() < 4.0 * sd, "frequency {freq} vs {q}");
    }
}

#[test]
fn chain_time_at_the_root_tends_to_three_quarters() {
    let coeffs = compute_coefficients(&AnnulusModel::new(), &CoefficientOptions { cells: 64, ..Default::default() }).unwrap();
    let gen = build_generator(&coeffs, 16).unwrap();
    let paths = simulate_ctmc(&gen, 0, 200.0, &[], 200, 5).unwrap();
    let mean = paths.iter().map(|p| p.root_fraction).sum::<f64>() / paths.len() as f64;
    assert!((mean - 0.75).abs() < 0.02, "root fraction {mean}");
}

#[test]
fn graph_marginal_relaxes_to_volume_law() {
    let coeffs = compute_coefficients(&AnnulusModel::new(), &CoefficientOptions { cells: 128, ..Default::default() }).unwrap();
    let gen = build_generator(&coeffs, 64).unwrap();
    let p0 = gen.initial_distribution(&gen.cell_point(gen.cell_index(0, 0))).unwrap();
    let p = marginal_at(&gen, &p0, 20.0).unwrap();
    assert!((p[0] - 0.75).abs() < 1e-6, "root mass {}", p[0]);
}

#[test]
fn occupation_is_insensitive_to_the_step() {
    let model = AnnulusModel::new();
    let x0 = model.normalization_point();
    let eps = 0.1;
    let coarse = simulate_occupation(&model, &SimConfig::new(eps, 20.0, 200, 17).with_dt(0.02 * eps), &x0).unwrap();
    let fine = simulate_occupation(&model, &SimConfig::new(eps, 20.0, 200, 17).with_dt(0.005 * eps), &x0).unwrap();
    let combined = (coarse.standard_error.powi(2) + fine.standard_error.powi(2)).sqrt();
    assert!(
        (coarse.mean - fine.mean).abs() < 2.0 * combined,
        "{} ± {} vs {} ± {}",
        coarse.mean,
        coarse.standard_error,
        fine.mean,
        fine.standard_error
    );
}

#[test]
fn feynman_kac_tracks_the_exact_radial_solution() {
    let model = AnnulusModel::new();
    let eps = 0.1;
    let probes: Vec<Point> = DEFAULT_PROBES.iter().map(|[x, y]| Point::new(*x, *y)).collect();
    let est = feynman_kac_probes(&model, &SimConfig::new(eps, 1.0, 1000, 23), &probes, &FeynmanKacOptions::default()).unwrap();
    for (e, p) in est.iter().zip(&probes) {
        let exact = common::radial_solution(p.norm(), eps);
        assert!(
            (e.value - exact).abs() < 4.0 * e.standard_error + 0.02,
            "at {p:?}: {} ± {} vs {exact}",
            e.value,
            e.standard_error
        );
    }
}

#[test]
fn probes_identify_onto_the_expected_graph_points() {
    let model = AnnulusModel::new();
    for [x, y] in DEFAULT_PROBES {
        let p = Point::new(x, y);
        let g = identify(&model, &p).unwrap();
        if p.norm() < 1.0 {
            assert!((g.height() - (p.norm_squared() - 1.0) / 2.0).abs() < 1e-12);
        } else {
            assert_eq!(g, sticky_averaging::GraphPoint::Root);
        }
    }
}
