mod common;

use common::*;
use polydecouple::decouple::{
    build_block_system, check_uniqueness, decouple_pipeline, decouple_with_points, generate_instance,
    min_points_k, null_dimension, relate_representations, solve_coefficients, DecoupleError, SamplingConfig,
};
use polydecouple::linalg::{norm, DenseMatrix};
use polydecouple::poly::{coeff_distance, coeff_distance_with, expand_model, DecoupledModel, PolySystem, UniPoly};
use polydecouple::tensor::{match_factors, CpdOptions};
use rand::Rng;

fn outputs(sys: &PolySystem, points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points.iter().map(|u| sys.eval(u).unwrap()).collect()
}

fn max_error(a: &PolySystem, b: &PolySystem, include_constant: bool) -> f64 {
    coeff_distance_with(a, b, include_constant)
        .unwrap()
        .iter()
        .map(|d| d.error)
        .fold(0.0, f64::max)
}

fn running_example_report() -> polydecouple::DecoupleReport {
    decouple_with_points(
        &running_example(),
        &running_example_tensor_points(),
        Some(&running_example_coeff_points()),
        &SamplingConfig::default(),
        &CpdOptions::default(),
        1e-10,
    )
    .unwrap()
}

#[test]
fn min_points_for_the_examples() {
    assert_eq!(min_points_k(2, 3, 2, 0), 4);
    assert_eq!(min_points_k(4, 3, 3, 1), 5);
    assert_eq!(null_dimension(fat_w_truth().w()), 1);
    assert_eq!(null_dimension(running_example_truth().w()), 0);
}

/// A square W of rank n − 1 contributes only rank W equations per point.
#[test]
fn min_points_counts_independent_equations() {
    assert_eq!(min_points_k(3, 2, 3, 1), 4);
    assert_eq!(min_points_k(3, 2, 2, 0), 5);
}

#[test]
fn running_example_coefficient_stage() {
    let rep = running_example_report();
    assert_eq!(rep.chosen_r, 2);
    assert_eq!(rep.chosen_k, 4);
    assert_eq!(rep.block_rank, 8);
    assert_eq!(rep.coefficient_rank_deficiency, 0);
    assert!(rep.max_reconstruction_error() <= 1e-10, "{:e}", rep.max_reconstruction_error());
    let bs = build_block_system(
        &rep.cpd.w,
        &rep.cpd.v,
        3,
        &rep.coeff_points,
        &outputs(&running_example(), &rep.coeff_points),
    )
    .unwrap();
    assert_eq!((bs.r_k.rows(), bs.r_k.cols()), (8, 8));
    assert_eq!((bs.x_k.rows(), bs.x_k.cols()), (8, 8));
}

#[test]
fn tabulated_outputs_at_coefficient_points() {
    let expected = [[0.8880, -0.7440], [51.0938, -63.0469], [11.4063, -30.7032], [6.7500, -18.3750]];
    let ys = outputs(&running_example(), &running_example_coeff_points());
    for (y, e) in ys.iter().zip(expected) {
        assert_close(y[0], e[0], 1e-4);
        assert_close(y[1], e[1], 1e-4);
    }
}

/// Recovered coefficients relate to the true ones through the gauge found
/// by matching the factors.
#[test]
fn running_example_coefficients_relate_to_truth() {
    let rep = running_example_report();
    let truth = running_example_truth();
    let h = truth.derivative_factor(&rep.tensor_points).unwrap();
    let fm = match_factors(&rep.cpd, (truth.v(), truth.w(), &h)).unwrap();
    let dev = relate_representations(rep.model.g(), truth.g(), &fm.alpha, &fm.beta, &fm.permutation, true);
    assert!(dev <= 1e-6, "{dev:e}");
}

/// The four-digit values quoted for the second recovered branch.
#[test]
fn tabulated_relation_values() {
    let g = [UniPoly::new(vec![-2.2369, 0.4243, -0.0179]).unwrap()];
    let truth = [UniPoly::new(vec![1.0, -3.0, 2.0]).unwrap()];
    let dev = relate_representations(&g, &truth, &[15.8175], &[-0.4470], &[0], true);
    assert!(dev <= 1e-3, "{dev:e}");
    assert_close(-0.4470 * -2.2369, 1.0, 1e-3);
    assert_close(-0.4470 * 15.8175 * 0.4243, -3.0, 1e-3);
    assert_close(-0.4470 * 15.8175 * 15.8175 * -0.0179, 2.0, 1e-2);
}

/// Rescaling V, W and the coefficients consistently gives an equivalent
/// model that the relation recognizes exactly.
#[test]
fn random_regauge_is_recognized() {
    let mut rng = seeded(21);
    for _ in 0..20 {
        let truth = random_model(3, 2, 3, 3, &mut rng);
        let r = truth.num_branches();
        let alpha: Vec<f64> = (0..r).map(|_| rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { -1.0 } else { 1.0 }).collect();
        let beta: Vec<f64> = (0..r).map(|_| rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { -1.0 } else { 1.0 }).collect();
        let perm = [2usize, 0, 1];
        let mut v = DenseMatrix::zeros(3, r);
        let mut w = DenseMatrix::zeros(2, r);
        let mut g = Vec::new();
        for i in 0..r {
            let p = perm[i];
            v.set_column(i, &truth.v().column(p).iter().map(|x| x * alpha[i]).collect::<Vec<_>>());
            w.set_column(i, &truth.w().column(p).iter().map(|x| x * beta[i]).collect::<Vec<_>>());
            let coeffs = truth.g()[p]
                .coeffs()
                .iter()
                .enumerate()
                .map(|(d, c)| c / (beta[i] * alpha[i].powi(d as i32)))
                .collect();
            g.push(UniPoly::new(coeffs).unwrap());
        }
        let model = DecoupledModel::new(v, w, g).unwrap();
        assert!(max_error(&expand_model(&model), &expand_model(&truth), true) <= 1e-12);
        let dev = relate_representations(model.g(), truth.g(), &alpha, &beta, &perm, true);
        assert!(dev <= 1e-10, "{dev:e}");
        let wrong = relate_representations(model.g(), truth.g(), &alpha, &beta, &[0, 1, 2], true);
        assert!(wrong > 1e-3);
    }
}

/// With the true factors the coefficient stage returns the true branches.
#[test]
fn truth_factors_give_true_coefficients() {
    let truth = running_example_truth();
    let pts = running_example_coeff_points();
    let bs = build_block_system(truth.w(), truth.v(), 3, &pts, &outputs(&running_example(), &pts)).unwrap();
    let sol = solve_coefficients(&bs, 2, 3).unwrap();
    assert_eq!(sol.numerical_rank, 8);
    for (g, t) in sol.g.iter().zip(truth.g()) {
        for d in 0..=3 {
            let tc = t.coeffs().get(d).copied().unwrap_or(0.0);
            assert!((g.coeffs()[d] - tc).abs() < 1e-10, "{:?} vs {:?}", g.coeffs(), t.coeffs());
        }
    }
}

/// With a column-rank-deficient W only the constants are free; the
/// expansion is still exact.
#[test]
fn fat_w_truth_factors_give_true_non_constant_coefficients() {
    let truth = fat_w_truth();
    let pts = fat_w_coeff_points();
    let sys = fat_w_example();
    let bs = build_block_system(truth.w(), truth.v(), 3, &pts, &outputs(&sys, &pts)).unwrap();
    assert_eq!((bs.r_k.rows(), bs.r_k.cols()), (15, 16));
    let sol = solve_coefficients(&bs, 4, 3).unwrap();
    assert_eq!(sol.numerical_rank, 15);
    for (g, t) in sol.g.iter().zip(truth.g()) {
        for d in 1..=3 {
            let tc = t.coeffs().get(d).copied().unwrap_or(0.0);
            assert!((g.coeffs()[d] - tc).abs() < 1e-9);
        }
    }
    let model = DecoupledModel::new(truth.v().clone(), truth.w().clone(), sol.g).unwrap();
    assert!(max_error(&expand_model(&model), &sys, true) <= 1e-10);
    // the free constants form the minimum-norm choice: orthogonal to null W
    let consts: Vec<f64> = model.g().iter().map(|g| g.coeffs()[0]).collect();
    let z = [1.0, -1.0, 2.0, 1.0]; // W z = 0
    let wz = truth.w().matvec(&z).unwrap();
    assert!(norm(&wz) == 0.0);
    let proj: f64 = consts.iter().zip(z).map(|(c, zi)| c * zi).sum();
    assert!(proj.abs() < 1e-9);
}

#[test]
fn fat_w_pipeline_on_tabulated_points() {
    let start = std::time::Instant::now();
    let rep = decouple_with_points(
        &fat_w_example(),
        &fat_w_tensor_points(),
        None,
        &SamplingConfig::default(),
        &CpdOptions::default(),
        1e-10,
    )
    .unwrap();
    assert!(start.elapsed().as_secs_f64() <= 5.0);
    assert_eq!(rep.chosen_r, 4);
    assert!(rep.cpd.rel_error <= 1e-10);
    assert_eq!(rep.coefficient_rank_deficiency, 1);
    assert_eq!(rep.chosen_k, 5);
    assert_eq!(rep.block_rank, 15);
    assert!(rep.max_reconstruction_error() <= 1e-8);
}

/// One point fewer than the minimum is refused; the minimum suffices.
#[test]
fn coefficient_stage_needs_exactly_the_minimum() {
    let cases: [(DecoupledModel, PolySystem, Vec<Vec<f64>>); 2] = [
        (running_example_truth(), running_example(), running_example_coeff_points()),
        (fat_w_truth(), fat_w_example(), fat_w_coeff_points()),
    ];
    for (truth, sys, pts) in cases {
        let k = min_points_k(truth.num_branches(), 3, sys.num_outputs(), null_dimension(truth.w()));
        assert_eq!(k, pts.len());
        let short = &pts[..k - 1];
        let err = build_block_system(truth.w(), truth.v(), 3, short, &outputs(&sys, short)).unwrap_err();
        assert!(matches!(err, DecoupleError::InsufficientPoints { required, got } if required == k && got == k - 1));
        let bs = build_block_system(truth.w(), truth.v(), 3, &pts, &outputs(&sys, &pts)).unwrap();
        let sol = solve_coefficients(&bs, truth.num_branches(), 3).unwrap();
        let model = DecoupledModel::new(truth.v().clone(), truth.w().clone(), sol.g).unwrap();
        assert!(max_error(&expand_model(&model), &sys, true) <= 1e-10);
    }
}

#[test]
fn pipeline_refuses_too_few_requested_points() {
    let cfg = SamplingConfig { num_points_coeff: 3, ..Default::default() };
    let err = decouple_pipeline(&running_example(), &cfg, &CpdOptions::default(), 1e-10).unwrap_err();
    assert!(matches!(err, DecoupleError::InsufficientPoints { required: 4, got: 3 }));
}

#[test]
fn kruskal_diagnostics_for_the_running_example() {
    let truth = running_example_truth();
    let h = truth.derivative_factor(&running_example_tensor_points()).unwrap();
    let u = check_uniqueness(truth.v(), truth.w(), &h, 2);
    assert_eq!(u.kruskal_sum, 6);
    assert_eq!(u.threshold, 6);
    assert!(u.satisfied);
    assert!(u.simplified_satisfied);
    let rep = running_example_report();
    assert_eq!(rep.uniqueness, u);
}

#[test]
fn default_pipeline_on_the_running_example() {
    let rep = decouple_pipeline(&running_example(), &SamplingConfig::default(), &CpdOptions::default(), 1e-10).unwrap();
    assert_eq!(rep.chosen_r, 2);
    assert!(rep.max_reconstruction_error() <= 1e-10);
    assert_eq!(rep.tensor_points.len(), SamplingConfig::default().num_points_tensor);
    let again = decouple_pipeline(&running_example(), &SamplingConfig::default(), &CpdOptions::default(), 1e-10).unwrap();
    assert_eq!(rep, again);
}

/// W g'(Vᵀu) Vᵀ of the recovered model matches the symbolic Jacobian away
/// from the sampling points.
#[test]
fn recovered_model_jacobian_matches_symbolic_jacobian() {
    let mut rng = seeded(31);
    for (sys, seed) in [(running_example(), 1), (fat_w_example(), 2)] {
        let cfg = SamplingConfig { rng_seed: seed, ..Default::default() };
        let rep = decouple_pipeline(&sys, &cfg, &CpdOptions::default(), 1e-10).unwrap();
        for _ in 0..10 {
            let u: Vec<f64> = (0..sys.num_vars()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let err = rel_frobenius(&rep.model.jacobian_at(&u).unwrap(), &sys.jacobian_at(&u).unwrap());
            assert!(err <= 1e-7, "{err:e}");
        }
        // the derivative factor of the recovered model is the CPD's H
        let h = rep.model.derivative_factor(&rep.tensor_points).unwrap();
        assert!(h.max_abs_diff(&rep.cpd.h) <= 1e-7 * rep.cpd.h.frobenius_norm());
    }
}

/// Different seeds give different factors, all in the canonical gauge and
/// all equivalent to the input.
#[test]
fn gauge_is_canonical_across_seeds() {
    for seed in 0..5 {
        let cfg = SamplingConfig { rng_seed: seed, ..Default::default() };
        let opts = CpdOptions { rng_seed: seed, ..Default::default() };
        let rep = decouple_pipeline(&running_example(), &cfg, &opts, 1e-10).unwrap();
        for c in 0..rep.chosen_r {
            for side in [rep.model.v(), rep.model.w()] {
                let col = side.column(c);
                assert!((norm(&col) - 1.0).abs() < 1e-12);
                assert!(*col.iter().find(|x| x.abs() > 1e-10).unwrap() > 0.0);
            }
        }
        let truth = running_example_truth();
        let h = truth.derivative_factor(&rep.tensor_points).unwrap();
        let fm = match_factors(&rep.cpd, (truth.v(), truth.w(), &h)).unwrap();
        let dev = relate_representations(rep.model.g(), truth.g(), &fm.alpha, &fm.beta, &fm.permutation, true);
        assert!(dev <= 1e-6);
    }
}

#[test]
fn constant_and_zero_systems_are_rejected() {
    let constant = system(2, &[&[(&[0, 0], 3.0)], &[]]);
    let cfg = SamplingConfig::default();
    assert!(matches!(
        decouple_pipeline(&constant, &cfg, &CpdOptions::default(), 1e-10),
        Err(DecoupleError::ConstantSystem)
    ));
    let zero = system(2, &[&[], &[]]);
    assert!(decouple_pipeline(&zero, &cfg, &CpdOptions::default(), 1e-10).is_err());
}

#[test]
fn generator_is_deterministic_and_well_formed() {
    let (sys, model) = generate_instance(3, 2, 3, 3, (-3, 3), 5).unwrap();
    let (sys2, model2) = generate_instance(3, 2, 3, 3, (-3, 3), 5).unwrap();
    assert_eq!(sys, sys2);
    assert_eq!(model, model2);
    assert_ne!(generate_instance(3, 2, 3, 3, (-3, 3), 6).unwrap().1, model);
    assert_eq!((model.num_inputs(), model.num_outputs(), model.num_branches()), (3, 2, 3));
    for g in model.g() {
        assert_eq!(g.degree(), 3);
        assert!(g.coeffs().iter().all(|c| c.fract() == 0.0 && c.abs() <= 3.0));
    }
    for m in [model.v(), model.w()] {
        assert!(m.as_slice().iter().all(|c| c.fract() == 0.0 && c.abs() <= 3.0));
        for c in 0..m.cols() {
            assert!(norm(&m.column(c)) > 0.0);
        }
    }
    assert_eq!(coeff_distance(&expand_model(&model), &sys).unwrap()[0].error, 0.0);
    assert_eq!(naive_expand(&model), sys);
}

#[test]
fn generator_rejects_bad_parameters_and_allows_one_branch() {
    assert!(matches!(generate_instance(0, 2, 2, 2, (-3, 3), 1), Err(DecoupleError::InvalidConfig(_))));
    assert!(matches!(generate_instance(2, 2, 2, 2, (0, 0), 1), Err(DecoupleError::InvalidConfig(_))));
    let (_, model) = generate_instance(2, 2, 1, 2, (-3, 3), 1).unwrap();
    assert_eq!(model.num_branches(), 1);
}

#[test]
fn generated_instances_round_trip() {
    let mut ok = 0;
    for seed in 0..10 {
        let (sys, truth) = generate_instance(2, 2, 2, 3, (-3, 3), seed).unwrap();
        let cfg = SamplingConfig { rng_seed: seed, ..Default::default() };
        let opts = CpdOptions { rng_seed: seed, ..Default::default() };
        if let Ok(rep) = decouple_pipeline(&sys, &cfg, &opts, 1e-10) {
            let include_constant = null_dimension(truth.w()) == 0;
            if max_error(&expand_model(&rep.model), &sys, include_constant) <= 1e-8 {
                ok += 1;
            }
        }
    }
    assert!(ok >= 9, "{ok}/10");
}
