//! Microbenchmarks for the numeric kernels behind the verification suite:
//! dense products, the Jacobi factorizations, Hessian assembly, and one
//! training-gradient evaluation at desk scale.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use resnest_core::data::{generate, DataKind, DataSpec};
use resnest_core::linalg::{kron, pinv, sym_eig, Matrix};
use resnest_core::models::{init_resnest, resnest_forward, Activation, ResNEstConfig};
use resnest_core::risk::Loss;
use resnest_core::rng;

fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, "bench");
    Matrix::from_fn(rows, cols, |_, _| rand::Rng::gen_range(&mut r, -1.0..1.0))
}

fn desk_setup() -> (
    resnest_core::models::ResNEstParams,
    resnest_core::risk::Dataset,
) {
    let config = ResNEstConfig {
        n_in: 4,
        m: 16,
        n_out: 2,
        l: 2,
        k: vec![4, 4],
        hidden: vec![8, 8],
        activation: Activation::Tanh,
    };
    let data = generate(&DataSpec {
        kind: DataKind::NonlinearRegression,
        n: 64,
        noise_sigma: 0.05,
        n_in: 4,
        n_out: 2,
        teacher_resnest: None,
        teacher_densenest: None,
        seed: 1,
    })
    .unwrap();
    (init_resnest(&config, 3, 2.0).unwrap(), data)
}

fn bench_linalg(c: &mut Criterion) {
    let a = rand_matrix(64, 64, 1);
    let b = rand_matrix(64, 64, 2);
    c.bench_function("matmul_64x64", |bench| {
        bench.iter(|| black_box(a.matmul(black_box(&b))))
    });

    let ka = rand_matrix(8, 8, 3);
    let kb = rand_matrix(16, 16, 4);
    c.bench_function("kron_8x8_16x16", |bench| {
        bench.iter(|| black_box(kron(black_box(&ka), black_box(&kb))))
    });

    let sym_raw = rand_matrix(36, 36, 5);
    let sym = sym_raw.add(&sym_raw.transpose()).scale(0.5);
    c.bench_function("sym_eig_36x36", |bench| {
        bench.iter(|| black_box(sym_eig(black_box(&sym)).unwrap()))
    });

    let rect = rand_matrix(12, 64, 6);
    c.bench_function("pinv_12x64", |bench| {
        bench.iter(|| black_box(pinv(black_box(&rect), None)))
    });
}

fn bench_model_kernels(c: &mut Criterion) {
    let (params, data) = desk_setup();
    c.bench_function("resnest_forward_desk", |bench| {
        bench.iter(|| black_box(resnest_forward(black_box(&params), &data.x).unwrap()))
    });
    c.bench_function("grad_full_resnest_desk", |bench| {
        bench.iter(|| {
            black_box(
                resnest_core::backprop::grad_full_resnest(black_box(&params), &data, Loss::Squared)
                    .unwrap(),
            )
        })
    });

    let (_, features) = resnest_forward(&params, &data.x).unwrap();
    let w_l = params.prediction_w_l().clone();
    c.bench_function("assemble_hessian_desk", |bench| {
        bench.iter(|| {
            black_box(
                resnest_core::hessian::assemble_hessian(
                    black_box(&w_l),
                    &params.w_out,
                    &features,
                    &data,
                )
                .unwrap(),
            )
        })
    });
    c.bench_function("pa_closed_form_desk", |bench| {
        bench.iter(|| {
            black_box(resnest_core::optimize::solve_pa_closed_form(&features, &data).unwrap())
        })
    });
}

criterion_group!(benches, bench_linalg, bench_model_kernels);
criterion_main!(benches);
