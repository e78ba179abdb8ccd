mod common;

use common::{kkt_residual, lasso_cd, lasso_objective, naive_reconstruct, random_dictionary, DenseDict};
use critical_sparse::conv::{correlate, reconstruct_grid, Dictionary};
use critical_sparse::image::{Image, Preprocessing};
use critical_sparse::lca::{encode, run_lca, run_lca_to_tolerance, LcaParams};
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn converge_params(lambda: f64) -> LcaParams {
    LcaParams {
        lambda,
        tau: 10.0,
        dt: 1.0,
        n_iters: 1,
        ..LcaParams::default()
    }
}

#[test]
fn converged_lca_matches_coordinate_descent() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let d = DenseDict::random_unit(&mut rng, 8, 16);
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lambda = 0.1;
        let state = run_lca_to_tolerance(&d, &x, &converge_params(lambda), 1e-13, 2_000_000).unwrap();
        let oracle = lasso_cd(&d.atoms, &x, lambda);
        let got = lasso_objective(&d.atoms, &x, &state.activations, lambda);
        let want = lasso_objective(&d.atoms, &x, &oracle, lambda);
        assert!((got - want).abs() <= 1e-4, "{got} vs {want}");
        assert!(kkt_residual(&d.atoms, &x, &state.activations, lambda) <= 1e-4);
        assert!(kkt_residual(&d.atoms, &x, &oracle, lambda) <= 1e-8);
    }
}

#[test]
fn dominant_threshold_keeps_code_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = DenseDict::random_unit(&mut rng, 8, 16);
    let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let max_corr = d.atoms.t().dot(&ndarray::Array1::from(x.clone())).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let params = LcaParams { n_iters: 200, ..converge_params(max_corr * 1.01) };
    let state = run_lca(&d, &x, &params).unwrap();
    assert!(state.activations.iter().all(|&a| a == 0.0));
}

fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Image {
    Image::new(
        Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0)),
        Preprocessing::Zeromean,
    )
}

#[test]
fn two_overlapping_units_match_dense_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dict = random_dictionary(&mut rng, 2, 1, 4, 2);
    let (h, w) = (6, 6);
    // grid is 2x2; units (0,0) and (0,1) overlap in two columns
    let mut code = Array3::zeros((2, 2, 2));
    code[[0, 0, 0]] = 0.7;
    code[[0, 1, 1]] = -1.3;

    // dense matrix with one column per unit, built from explicit placement
    let units = 2 * 2 * 2;
    let mut dense = Array2::zeros((h * w, units));
    for u in 0..units {
        let mut one = Array3::zeros((2, 2, 2));
        one.as_slice_mut().unwrap()[u] = 1.0;
        let col = naive_reconstruct(&dict.kernels().to_owned(), &one, 1, h, w, 4, 2);
        dense.column_mut(u).assign(&ndarray::Array1::from(col.into_raw_vec_and_offset().0));
    }
    let want = dense.dot(&ndarray::Array1::from(code.as_slice().unwrap().to_vec()));
    let got = reconstruct_grid(&code, &dict, h, w).unwrap();
    for (g, e) in got.as_slice().iter().zip(want.iter()) {
        assert!((g - e).abs() < 1e-12);
    }
    let r = random_image(&mut rng, 1, h, w);
    let corr = correlate(&r, &dict).unwrap();
    let want_corr = dense.t().dot(&ndarray::Array1::from(r.as_slice().to_vec()));
    for (g, e) in corr.as_slice().unwrap().iter().zip(want_corr.iter()) {
        assert!((g - e).abs() < 1e-12);
    }
}

#[test]
fn reconstruction_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for &(c, h, p, s, f) in &[(3, 12, 4, 2, 5), (1, 9, 3, 3, 2), (2, 10, 5, 1, 3)] {
        let dict = random_dictionary(&mut rng, f, c, p, s);
        let (gy, gx) = dict.grid(h, h).unwrap();
        let code = Array3::from_shape_fn((gy, gx, f), |_| {
            if rng.random_bool(0.4) {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let want = naive_reconstruct(&dict.kernels().to_owned(), &code, c, h, h, p, s);
        let got = reconstruct_grid(&code, &dict, h, h).unwrap();
        for (g, e) in got.data.iter().zip(want.iter()) {
            assert!((g - e).abs() < 1e-12);
        }
    }
}

fn small_dict(rng: &mut ChaCha8Rng) -> Dictionary {
    random_dictionary(rng, 6, 3, 4, 2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn energy_never_rises_after_warmup(seed in any::<u64>(), lambda in 0.05f64..0.8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dict = small_dict(&mut rng);
        let image = random_image(&mut rng, 3, 10, 10);
        let params = LcaParams { lambda, tau: 10.0, dt: 1.0, n_iters: 120, ..LcaParams::default() };
        let (_, trace) = encode(&image, &dict, &params).unwrap();
        for (i, w) in trace.windows(2).enumerate().skip(4) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "step {}: {} -> {}", i + 2, w[0], w[1]);
        }
    }

    #[test]
    fn correlate_is_adjoint_of_reconstruct(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dict = small_dict(&mut rng);
        let r = random_image(&mut rng, 3, 10, 12);
        let (gy, gx) = dict.grid(10, 12).unwrap();
        let a = Array3::from_shape_fn((gy, gx, 6), |_| rng.random_range(-1.0..1.0));
        let lhs: f64 = (&correlate(&r, &dict).unwrap() * &a).sum();
        let rhs: f64 = (&r.data * &reconstruct_grid(&a, &dict, 10, 12).unwrap().data).sum();
        let scale = r.data.iter().map(|v| v * v).sum::<f64>().sqrt() * a.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
    }

    #[test]
    fn codes_are_sparse_where_potential_is_small(seed in any::<u64>(), lambda in 0.1f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dict = small_dict(&mut rng);
        let image = random_image(&mut rng, 3, 10, 10);
        let params = LcaParams { lambda, n_iters: 30, ..LcaParams::default() };
        let (code, _) = encode(&image, &dict, &params).unwrap();
        for (a, u) in code.activations.iter().zip(code.potentials.iter()) {
            if u.abs() <= lambda {
                prop_assert_eq!(*a, 0.0);
            } else {
                prop_assert!((a.abs() - (u.abs() - lambda)).abs() < 1e-15);
            }
        }
    }
}
