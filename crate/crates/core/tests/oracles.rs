//! Library routines checked against the reference implementations in
//! `common` and against central finite differences.

mod common;

use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;

use common::*;
use deepssm::audio::{mulaw_degrade_sample, DEFAULT_MU};
use deepssm::exec::fft::fft_convolve;
use deepssm::exec::{run_recurrent, RecurrentSsm};
use deepssm::network::layers::{downsample, upsample, Projection};
use deepssm::network::{build_network, NetworkConfig};
use deepssm::planner::Variant;
use deepssm::ssm::{diagonalize, discretize_zoh, materialize_kernel, ContinuousSsm, DenseSsm, KernelBank};
use deepssm::train::{kernel_gradients, toy_network_config};

#[test]
fn zoh_matches_series_on_stable_states() {
    let mut r = rng(1);
    let ssm = random_ssm(&mut r, 1, 1, 64);
    let d = discretize_zoh(&ssm);
    for s in 0..64 {
        let a = Complex64::new(-softplus(ssm.a_r[s]), ssm.a_im[s]);
        let dt = ssm.delta[s];
        let (e, phi) = zoh_series(a * dt);
        assert!(rel(d.abar[s], e) < 1e-12, "abar state {s}");
        assert!(rel(d.bbar[s], phi * dt * ssm.b[s]) < 1e-12, "bbar state {s}");
    }
}

#[test]
fn zoh_euler_limit() {
    let mut r = rng(2);
    let mut ssm = random_ssm(&mut r, 2, 1, 16);
    ssm.delta = vec![1e-6; 16];
    let d = discretize_zoh(&ssm);
    for s in 0..16 {
        let a = Complex64::new(-softplus(ssm.a_r[s]), ssm.a_im[s]);
        assert!((d.abar[s] - (1.0 + a * 1e-6)).norm() < 1e-11);
        for i in 0..2 {
            assert!((d.bbar[s * 2 + i] - 1e-6 * ssm.b[s * 2 + i]).norm() < 1e-11);
        }
    }
}

#[test]
fn kernel_matches_impulse_response() {
    let mut r = rng(3);
    for _ in 0..5 {
        let d = discretize_zoh(&random_ssm(&mut r, 2, 3, 8));
        let bank = materialize_kernel(&d, 64);
        let oracle = impulse_response(&d, 64);
        for (a, b) in bank.k.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn fft_convolution_matches_direct_convolution() {
    let mut r = rng(4);
    let (n, m, h, len) = (16, 16, 64, 4096);
    let d = discretize_zoh(&random_ssm(&mut r, n, m, h));
    let u = random_input(&mut r, n, len);
    let oracle = direct_convolution(&u, &impulse_response(&d, len), m);
    for variant in [Variant::InputProjectFirst, Variant::KernelFirst] {
        let y = fft_convolve(u.view(), &d, variant).unwrap();
        assert!(rel_l2(&y, &oracle) < 1e-6, "{variant}");
    }
}

#[test]
fn fft_convolution_odd_lengths() {
    let mut r = rng(5);
    for len in [1, 2, 3, 17, 100, 255] {
        let d = discretize_zoh(&random_ssm(&mut r, 2, 3, 5));
        let u = random_input(&mut r, 2, len);
        let oracle = direct_convolution(&u, &impulse_response(&d, len), 3);
        for variant in [Variant::InputProjectFirst, Variant::KernelFirst] {
            let y = fft_convolve(u.view(), &d, variant).unwrap();
            let err = y.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "len {len} {variant}: {err}");
        }
    }
}

#[test]
fn recurrence_matches_fft() {
    let mut r = rng(6);
    let d = discretize_zoh(&random_ssm(&mut r, 3, 2, 32));
    let u = random_input(&mut r, 3, 16384);
    let fft = fft_convolve(u.view(), &d, Variant::InputProjectFirst).unwrap();
    let rec64 = run_recurrent(&RecurrentSsm::<f64>::from(&d), &u).unwrap();
    assert!(rel_l2(&rec64, &fft) < 1e-10);
    let rec32 = run_recurrent(&RecurrentSsm::<f32>::from(&d), &u.mapv(|v| v as f32)).unwrap();
    assert!(rel_l2(&rec32.mapv(|v| v as f64), &fft) < 1e-4);
}

#[test]
fn rotation_diagonalizes_to_plus_minus_j() {
    let dense = DenseSsm {
        a: DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
        b: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    };
    let diag = diagonalize(&dense).unwrap();
    let mut eig = diag.eigenvalues.clone();
    eig.sort_by(|a, b| a.im.total_cmp(&b.im));
    assert!((eig[0] - Complex64::new(0.0, -1.0)).norm() < 1e-12);
    assert!((eig[1] - Complex64::new(0.0, 1.0)).norm() < 1e-12);
    let k = diag.kernel(8);
    for (tau, want) in [1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0].iter().enumerate() {
        assert!((k[tau].re - want).abs() < 1e-12);
    }
    diagonal_kernel_matches(&dense, 64, 1e-10);
}

#[test]
fn diagonal_form_matches_dense_powers() {
    let mut r = rng(7);
    let dense = random_stable_dense(&mut r, 6, 2, 2);
    diagonal_kernel_matches(&dense, 65, 1e-6);
}

#[test]
fn resampling_round_trip_through_pseudo_inverse() {
    let mut r = rng(8);
    let (c, rf, len) = (3, 4, 64);
    let x = random_input(&mut r, c, len);
    let w = DMatrix::from_fn(c * rf, c * rf, |_, _| r.random_range(-1.0..1.0));
    let w_inv = w.clone().pseudo_inverse(1e-12).unwrap();
    let to_nd = |m: &DMatrix<f64>| Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)]);
    let bias = ndarray::Array1::from_shape_fn(c * rf, |_| r.random_range(-1.0..1.0));
    let down = Projection::new(to_nd(&w), bias.clone());
    let y = downsample(x.view(), rf, &down).unwrap();
    assert_eq!(y.dim(), (c * rf, len / rf));
    // Undo the projection, then spread channels back over time.
    let inv = Projection::new(to_nd(&w_inv), -to_nd(&w_inv).dot(&bias));
    let back = upsample(inv.apply(y.view()).view(), rf, &Projection::identity(c)).unwrap();
    let err = back.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-10, "{err}");
}

#[test]
fn ssm_gradients_match_central_differences() {
    let (n, m, h, len) = (2, 2, 4, 32);
    let mut cases = 0;
    let mut worst = 0.0f64;
    for seed in 0..6 {
        let mut r = rng(100 + seed);
        let ssm = random_ssm(&mut r, n, m, h);
        let mut g = KernelBank::zeros(m, n, len);
        g.k.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
        let grads = kernel_gradients(&ssm, &g).unwrap();

        type Field = fn(&mut ContinuousSsm) -> &mut Vec<f64>;
        let fields: [(&str, Field, &Vec<f64>); 5] = [
            ("a_r", |s| &mut s.a_r, &grads.a_r),
            ("a_im", |s| &mut s.a_im, &grads.a_im),
            ("b", |s| &mut s.b, &grads.b),
            ("c", |s| &mut s.c, &grads.c),
            ("delta", |s| &mut s.delta, &grads.delta),
        ];
        for (name, field, analytic) in fields {
            for (idx, &a) in analytic.iter().enumerate() {
                // Timesteps are small, so their step is taken relative to the value.
                let base = field(&mut ssm.clone())[idx];
                let step = if name == "delta" { 1e-5 * base } else { 1e-5 };
                let mut plus = ssm.clone();
                field(&mut plus)[idx] += step;
                let mut minus = ssm.clone();
                field(&mut minus)[idx] -= step;
                let fd = (probe(&plus, &g) - probe(&minus, &g)) / (2.0 * step);
                let err = (a - fd).abs() / fd.abs().max(1e-3);
                worst = worst.max(err);
                assert!(err < 1e-5, "seed {seed} {name}[{idx}]: analytic {a} vs fd {fd}");
                cases += 1;
            }
        }
    }
    assert!(cases >= 100, "{cases} cases");
    println!("{cases} gradient cases, worst relative error {worst:.2e}");
}

#[test]
fn network_gradient_spot_check() {
    let cfg = toy_network_config();
    let net = build_network(&cfg, 11).unwrap();
    let mut r = rng(12);
    let len = 256;
    let input: Vec<f64> = (0..len).map(|_| r.random_range(-0.5..0.5)).collect();
    let target: Vec<f64> = (0..len).map(|_| r.random_range(-0.5..0.5)).collect();
    let beta = 0.5;
    let (_, grad) = net.loss_and_grad(&input, &target, beta).unwrap();
    let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|(_, d)| d.to_vec()).collect();
    let names: Vec<String> = net.tensors().iter().map(|(m, _)| m.name.clone()).collect();
    let loss_of = |n: &deepssm::network::Network| n.loss_and_grad(&input, &target, beta).unwrap().0;

    let mut checked = 0;
    for (t, name) in names.iter().enumerate() {
        let count = analytic[t].len();
        for idx in [0, count / 2, count - 1] {
            let a = analytic[t][idx];
            let mut plus = net.clone();
            let mut minus = net.clone();
            let base = plus.tensors_mut()[t].1[idx];
            let step = if name.contains("delta") { 1e-6 * base } else { 1e-6 };
            plus.tensors_mut()[t].1[idx] += step;
            minus.tensors_mut()[t].1[idx] -= step;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * step);
            let scale = fd.abs().max(a.abs()).max(1e-4);
            assert!((a - fd).abs() / scale < 1e-4, "{name}[{idx}]: analytic {a} vs fd {fd}");
            checked += 1;
        }
    }
    assert!(checked > 30);
}

#[test]
fn mulaw_matches_exhaustive_oracle() {
    for bits in [4, 8] {
        let oracle = MuLawOracle::new(bits);
        let mut max_err_lib = 0.0f64;
        let mut max_err_oracle = 0.0f64;
        for k in 0..=200_000 {
            let x = -1.0 + 2.0 * k as f64 / 200_000.0;
            let got = mulaw_degrade_sample(x, bits, DEFAULT_MU).unwrap();
            let want = oracle.apply(x);
            assert!((got - want).abs() < 1e-12, "{bits} bits at {x}: {got} vs {want}");
            max_err_lib = max_err_lib.max((got - x).abs());
            max_err_oracle = max_err_oracle.max((want - x).abs());
        }
        assert!((max_err_lib - max_err_oracle).abs() < 1e-12);
        // Worst case sits at a decision boundary, the companded midpoint of two levels.
        let q = ((1i64 << (bits - 1)) - 1) as f64;
        let expand = |y: f64| ((1.0 + DEFAULT_MU).powf(y) - 1.0) / DEFAULT_MU;
        let bound = (0..q as i64)
            .map(|k| {
                let edge = expand((k as f64 + 0.5) / q);
                (edge - expand(k as f64 / q)).max(expand((k + 1) as f64 / q) - edge)
            })
            .fold(0.0, f64::max);
        assert!(max_err_lib <= bound + 1e-12 && max_err_lib > 0.99 * bound, "{max_err_lib} vs {bound}");
    }
}

#[test]
fn default_network_handles_long_inputs() {
    let net = build_network(&NetworkConfig::default(), 0).unwrap();
    let len = 1 << 17;
    let input: Vec<f64> = (0..len).map(|t| (t as f64 * 0.01).sin() * 0.1).collect();
    let out = net.forward_batch(&input).unwrap();
    assert_eq!(out.len(), len);
    assert!(out.iter().all(|v| v.is_finite()));
}
