//! Property tests for the algebraic invariants: Kronecker/vec identities,
//! Penrose conditions, spectral sanity, the feature-form equivalence of the
//! forward pass, risk lower bounds, and serialization round trips.

use proptest::prelude::*;

use resnest_core::data::{parse_csv, to_csv_string};
use resnest_core::linalg::{kron, pinv, rank, svd, sym_eig, Matrix};
use resnest_core::models::{
    init_aresnest, init_resnest, output_from_features, resnest_forward, Activation, ResNEstConfig,
};
use resnest_core::optimize::compute_epsilon;
use resnest_core::risk::{loss_grad, Dataset, Loss};
use resnest_core::rng;

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..5, 1usize..5, 1usize..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kron_vec_identity((m, k, n) in dims(), p in 1usize..5, seed in any::<u64>()) {
        // kron(b^T, a) * vec(x) = vec(a x b) for conformable a, x, b
        let mut r = rng::stream(seed, "props/kron");
        let mut rnd = |rows: usize, cols: usize| {
            Matrix::from_fn(rows, cols, |_, _| rand::Rng::gen_range(&mut r, -2.0..2.0))
        };
        let a = rnd(m, k);
        let x = rnd(k, n);
        let b = rnd(n, p);
        let lhs = kron(&b.transpose(), &a).matmul(&x.vec());
        let rhs = a.matmul(&x).matmul(&b).vec();
        prop_assert!(lhs.sub(&rhs).max_abs() <= 1e-11);
    }

    #[test]
    fn penrose_conditions_all_rank_profiles(m in 1usize..7, n in 1usize..7, r_seed in any::<u64>()) {
        let mut r = rng::stream(r_seed, "props/penrose");
        let rank_target = 1 + (r_seed as usize) % m.min(n);
        let mut rnd = |rows: usize, cols: usize| {
            Matrix::from_fn(rows, cols, |_, _| rand::Rng::gen_range(&mut r, -2.0..2.0))
        };
        let a = rnd(m, rank_target).matmul(&rnd(rank_target, n));
        let p = pinv(&a, None);
        let scale = 1.0 + a.frobenius_norm();
        prop_assert!(a.matmul(&p).matmul(&a).sub(&a).max_abs() <= 1e-9 * scale);
        prop_assert!(p.matmul(&a).matmul(&p).sub(&p).max_abs() <= 1e-9 * (1.0 + p.frobenius_norm()));
        let ap = a.matmul(&p);
        prop_assert!(ap.sub(&ap.transpose()).max_abs() <= 1e-9 * scale);
        let pa = p.matmul(&a);
        prop_assert!(pa.sub(&pa.transpose()).max_abs() <= 1e-9 * scale);
    }

    #[test]
    fn eig_trace_and_rayleigh(n in 1usize..7, seed in any::<u64>()) {
        let mut r = rng::stream(seed, "props/eig");
        let raw = Matrix::from_fn(n, n, |_, _| rand::Rng::gen_range(&mut r, -2.0..2.0));
        let a = raw.add(&raw.transpose()).scale(0.5);
        let eig = sym_eig(&a).unwrap();
        let trace: f64 = (0..n).map(|i| a.get(i, i)).sum();
        let sum: f64 = eig.eigenvalues.iter().sum();
        prop_assert!((trace - sum).abs() <= 1e-9 * (1.0 + trace.abs()));

        // Rayleigh quotients sit inside the spectrum
        let v = Matrix::from_fn(n, 1, |_, _| rand::Rng::gen_range(&mut r, -1.0..1.0));
        let denom = v.matmul_tn(&v).get(0, 0);
        if denom > 1e-9 {
            let quot = v.matmul_tn(&a.matmul(&v)).get(0, 0) / denom;
            let lo = eig.eigenvalues[0] - 1e-9 * (1.0 + a.frobenius_norm());
            let hi = eig.eigenvalues[n - 1] + 1e-9 * (1.0 + a.frobenius_norm());
            prop_assert!(quot >= lo && quot <= hi);
        }
    }

    #[test]
    fn rank_plus_nullity(m in 1usize..7, n in 1usize..7, seed in any::<u64>()) {
        let mut r = rng::stream(seed, "props/rank");
        let rank_target = 1 + (seed as usize) % m.min(n);
        let mut rnd = |rows: usize, cols: usize| {
            Matrix::from_fn(rows, cols, |_, _| rand::Rng::gen_range(&mut r, -2.0..2.0))
        };
        let a = rnd(m, rank_target).matmul(&rnd(rank_target, n));
        let rk = rank(&a, None);
        let sv = svd(&a).s;
        let cutoff = a.rows().max(a.cols()) as f64 * f64::EPSILON * sv[0];
        let nullity = sv.iter().filter(|&&s| s <= cutoff).count() + n.saturating_sub(sv.len());
        prop_assert_eq!(rk + nullity, n);
    }

    #[test]
    fn forward_feature_form_equivalence(seed in any::<u64>(), l in 0usize..4) {
        let config = ResNEstConfig {
            n_in: 3,
            m: 6,
            n_out: 2,
            l,
            k: vec![2; l],
            hidden: vec![3; l],
            activation: Activation::Tanh,
        };
        let params = init_resnest(&config, seed, 1.2).unwrap();
        let mut r = rng::stream(seed, "props/forward");
        let x = Matrix::from_fn(3, 5, |_, _| rand::Rng::gen_range(&mut r, -2.0..2.0));
        let (y, features) = resnest_forward(&params, &x).unwrap();
        let y2 = output_from_features(&params, &features).unwrap();
        prop_assert!(y.sub(&y2).max_abs() <= 1e-12);
    }

    #[test]
    fn epsilon_never_negative(seed in any::<u64>()) {
        let config = ResNEstConfig {
            n_in: 3,
            m: 5,
            n_out: 2,
            l: 2,
            k: vec![2, 2],
            hidden: vec![3, 3],
            activation: Activation::Tanh,
        };
        let params = init_resnest(&config, seed, 1.5).unwrap();
        let mut r = rng::stream(seed, "props/eps");
        let x = Matrix::from_fn(3, 9, |_, _| rand::Rng::gen_range(&mut r, -2.0..2.0));
        let y = Matrix::from_fn(2, 9, |_, _| rand::Rng::gen_range(&mut r, -2.0..2.0));
        let data = Dataset::new(x, y).unwrap();
        let eps = compute_epsilon(
            params.prediction_w_l(),
            &params.w_out,
            &params.phi(),
            &data,
            Loss::Squared,
        )
        .unwrap();
        prop_assert!(eps >= -1e-10);
    }

    #[test]
    fn chained_heads_reproduce_resnest_gradient_stack(seed in any::<u64>()) {
        // g_r == g_a column by column when H_i = W_{L+1} W_i
        let config = ResNEstConfig {
            n_in: 3,
            m: 5,
            n_out: 2,
            l: 2,
            k: vec![2, 2],
            hidden: vec![3, 3],
            activation: Activation::Tanh,
        };
        let p = init_resnest(&config, seed, 1.0).unwrap();
        let mut r = rng::stream(seed, "props/gr");
        let x = Matrix::from_fn(3, 6, |_, _| rand::Rng::gen_range(&mut r, -2.0..2.0));
        let y = Matrix::from_fn(2, 6, |_, _| rand::Rng::gen_range(&mut r, -2.0..2.0));
        let (y_res, features) = resnest_forward(&p, &x).unwrap();
        let mut h = vec![p.w_out.matmul(&p.w0)];
        for wi in &p.w {
            h.push(p.w_out.matmul(wi));
        }
        let y_a = resnest_core::models::aresnest_output(&h, &features).unwrap();
        for n in 0..6 {
            let gr = loss_grad(Loss::Squared, &y_res.column(n), &y.column(n)).unwrap();
            let ga = loss_grad(Loss::Squared, &y_a.column(n), &y.column(n)).unwrap();
            for (a, b) in gr.iter().zip(&ga) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn csv_round_trip(n_in in 1usize..4, n_out in 1usize..3, n in 1usize..6, seed in any::<u64>()) {
        let mut r = rng::stream(seed, "props/csv");
        let x = Matrix::from_fn(n_in, n, |_, _| rand::Rng::gen_range(&mut r, -1e3..1e3));
        let y = Matrix::from_fn(n_out, n, |_, _| rand::Rng::gen_range(&mut r, -1e-3..1e-3));
        let data = Dataset::new(x, y).unwrap();
        let text = to_csv_string(&data);
        let back = parse_csv(&text).unwrap();
        prop_assert_eq!(data, back);
    }

    #[test]
    fn feature_decoupling_is_bitwise(seed in any::<u64>(), scale in 0.5..2.0f64) {
        let config = ResNEstConfig {
            n_in: 2,
            m: 4,
            n_out: 2,
            l: 2,
            k: vec![2, 2],
            hidden: vec![3, 3],
            activation: Activation::Tanh,
        };
        let p = init_resnest(&config, seed, 1.0).unwrap();
        let mut r = rng::stream(seed, "props/decouple");
        let x = Matrix::from_fn(2, 4, |_, _| rand::Rng::gen_range(&mut r, -2.0..2.0));
        let (_, f1) = resnest_forward(&p, &x).unwrap();
        let mut q = p.clone();
        q.set_prediction_w_l(p.prediction_w_l().scale(scale));
        q.w_out = p.w_out.scale(-scale);
        let (_, f2) = resnest_forward(&q, &x).unwrap();
        prop_assert_eq!(f1.v, f2.v);
    }

    #[test]
    fn aresnest_init_shapes_consistent(seed in any::<u64>(), l in 0usize..4) {
        let config = ResNEstConfig {
            n_in: 3,
            m: 6,
            n_out: 2,
            l,
            k: vec![2; l],
            hidden: vec![3; l],
            activation: Activation::Tanh,
        };
        let a = init_aresnest(&config, seed, 1.0).unwrap();
        prop_assert!(a.validate().is_ok());
        prop_assert_eq!(a.h.len(), l + 1);
        prop_assert_eq!(a.h[0].cols(), 3);
    }
}
