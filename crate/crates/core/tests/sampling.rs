mod common;

use common::{random_graph, random_points};
use nalgebra::DMatrix;
use proptest::prelude::*;
use wmgraph::constrained::ConstraintSystem;
use wmgraph::graph::{split_loops_and_subdivide, Location};
use wmgraph::kernels::closed_form_interval;
use wmgraph::precision::{alpha2_constraint_rows, assemble_alpha1};
use wmgraph::simulation::{alpha2_prior, sample_bridge, sample_constrained, sample_vertices, simulate_field, stream_rng};
use wmgraph::{MetricGraph, ModelParams};

/// Every entry of the empirical second-moment matrix of the draws within
/// three standard errors of `sigma`.
fn assert_moments(draws: &[Vec<f64>], sigma: &DMatrix<f64>) {
    let n = draws.len() as f64;
    let d = sigma.nrows();
    for i in 0..d {
        let mean = draws.iter().map(|x| x[i]).sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * (sigma[(i, i)] / n).sqrt(), "mean {i}: {mean}");
        for j in i..d {
            let s = draws.iter().map(|x| x[i] * x[j]).sum::<f64>() / n;
            let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / n).sqrt();
            assert!((s - sigma[(i, j)]).abs() < 3.0 * se, "({i},{j}): {s} vs {}", sigma[(i, j)]);
        }
    }
}

#[test]
fn vertex_draws_match_precision() {
    let g = random_graph(5, 5, 2, false);
    let q = assemble_alpha1(&g, &ModelParams::new(1, 1.5, 0.8, 0.0).unwrap()).unwrap();
    let f = q.factor().unwrap();
    let mut rng = stream_rng(11, 0);
    let draws: Vec<Vec<f64>> = (0..100_000).map(|_| f.sample(&mut rng)).collect();
    assert_moments(&draws, &f.inverse());
}

#[test]
fn bridge_draws_match_interval_covariance() {
    let length = 2.0;
    let sites = [0.3, 1.0, 1.7];
    let g = MetricGraph::interval(length).unwrap();
    for alpha in [1, 2] {
        let params = ModelParams::new(alpha, 1.2, 0.9, 0.0).unwrap();
        let sigma = DMatrix::from_fn(3, 3, |i, j| {
            closed_form_interval(&params, length, sites[i], sites[j]).unwrap()
        });
        let mut rng = stream_rng(23, alpha as u64);
        let draws: Vec<Vec<f64>> = if alpha == 1 {
            let f = assemble_alpha1(&g, &params).unwrap().factor().unwrap();
            (0..40_000)
                .map(|_| {
                    let ends = f.sample(&mut rng);
                    sample_bridge(&params, length, &ends, &sites, &mut rng).unwrap()
                })
                .collect()
        } else {
            let prior = alpha2_prior(&g, &params).unwrap();
            (0..40_000)
                .map(|_| {
                    let ends = prior.sample(&mut rng);
                    sample_bridge(&params, length, &ends, &sites, &mut rng).unwrap()
                })
                .collect()
        };
        assert_moments(&draws, &sigma);
    }
}

/// Asymptotic p-value of the two-sample Kolmogorov–Smirnov statistic.
fn ks_p_value(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let q: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    q.clamp(0.0, 1.0)
}

/// Vertex-then-bridge draws against draws of the precision of the graph
/// extended by the sites, both whitened by the exact site covariance.
#[test]
fn two_stage_and_extended_sampling_agree() {
    let g = random_graph(9, 4, 2, true);
    let params = ModelParams::new(1, 1.4, 0.9, 0.0).unwrap();
    let sites = random_points(&g, 1, 2);
    let (ext, map) = split_loops_and_subdivide(&g, &sites).unwrap();
    let idx: Vec<usize> = sites
        .iter()
        .map(|p| match ext.locate(&map.forward(p)).unwrap() {
            Location::Vertex(v) => v,
            other => panic!("site not a vertex: {other:?}"),
        })
        .collect();
    let q = assemble_alpha1(&ext, &params).unwrap();
    let full = q.factor().unwrap().inverse();
    let cov = DMatrix::from_fn(2, 2, |a, b| full[(idx[a], idx[b])]);
    let chol = cov.cholesky().unwrap();
    let whiten = |x: [f64; 2]| {
        let z = chol.l().solve_lower_triangular(&nalgebra::DVector::from_column_slice(&x)).unwrap();
        [z[0], z[1]]
    };
    let per_run = 500u64;
    for run in 0..20u64 {
        let mut two = Vec::new();
        let mut one = Vec::new();
        for k in 0..per_run {
            let seed = run * per_run + k;
            let v = simulate_field(&g, &params, &sites, seed).unwrap().values;
            two.extend(whiten([v[0], v[1]]));
            let u = sample_vertices(&q, 1_000_000 + seed).unwrap();
            one.extend(whiten([u[idx[0]], u[idx[1]]]));
        }
        if run == 0 {
            // the statistic does notice a 30% scale error
            let inflated = one.iter().map(|x| 1.3 * x).collect();
            assert!(ks_p_value(two.clone(), inflated) < 1e-3);
        }
        let p = ks_p_value(two, one);
        assert!(p > 1e-3, "run {run}: p = {p}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn alpha2_draws_satisfy_kirchhoff(seed in any::<u64>(), n in 2usize..7, extra in 0usize..4, kappa in 0.3f64..4.0) {
        let (g, _) = split_loops_and_subdivide(&random_graph(seed, n, extra, true), &[]).unwrap();
        let params = ModelParams::new(2, kappa, 1.0, 0.0).unwrap();
        let prior = alpha2_prior(&g, &params).unwrap();
        let u = sample_constrained(&prior, seed);
        let rows = alpha2_constraint_rows(&g).unwrap();
        let k = rows.len();
        let cons = ConstraintSystem::new(u.len(), rows, vec![0.0; k]).unwrap();
        let scale = u.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        prop_assert!(cons.residual(&u) < 1e-10 * scale, "residual {}", cons.residual(&u));
    }
}
