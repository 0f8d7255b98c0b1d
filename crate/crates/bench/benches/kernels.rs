use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use manifold_sgd::dynamics::{sgd_run, NoiseModel, SgdConfig};
use manifold_sgd::linalg::{lyapunov_inverse, spectral_decompose, DEFAULT_REL_TOL};
use manifold_sgd::phi::d2phi_contract;
use manifold_sgd::Loss;
use manifold_sgd_bench::{motor_on_circle, olm_on_manifold};
use nalgebra::DMatrix;

fn spectral(c: &mut Criterion) {
    let (p, x) = olm_on_manifold(20, 40, 1);
    let h = p.hessian(&x);
    c.bench_function("spectral_decompose_80", |b| {
        b.iter(|| spectral_decompose(black_box(&h), DEFAULT_REL_TOL).unwrap())
    });
    let dec = spectral_decompose(&h, DEFAULT_REL_TOL).unwrap();
    let sigma = &h * &h;
    c.bench_function("lyapunov_inverse_80", |b| {
        b.iter(|| lyapunov_inverse(&dec, black_box(&sigma), 1e-6).unwrap())
    });
}

fn second_order(c: &mut Criterion) {
    let (p, x) = olm_on_manifold(2, 3, 12);
    let sigma = DMatrix::<f64>::identity(6, 6);
    c.bench_function("d2phi_contract_olm_small", |b| {
        b.iter(|| d2phi_contract(&p, black_box(&x), &sigma).unwrap())
    });
    let (m, x) = motor_on_circle(8);
    let sigma = m.noise_covariance(&x);
    c.bench_function("d2phi_contract_motor_8", |b| {
        b.iter(|| d2phi_contract(&m, black_box(&x), &sigma).unwrap())
    });
}

fn sgd_steps(c: &mut Criterion) {
    let (m, x) = motor_on_circle(5);
    let noise = NoiseModel::Motor(m);
    let cfg = SgdConfig {
        eta: 0.01,
        steps: 1000,
        seed: 0,
        record_stride: 0,
    };
    c.bench_function("sgd_motor_1000_steps", |b| b.iter(|| sgd_run(&m, &noise, &cfg, black_box(&x)).unwrap()));
    let (p, x) = olm_on_manifold(6, 8, 2);
    let noise = NoiseModel::LabelNoise { delta: 1.0 };
    c.bench_function("sgd_olm_label_noise_1000_steps", |b| {
        b.iter(|| sgd_run(&p, &noise, &cfg, black_box(&x)).unwrap())
    });
}

criterion_group!(benches, spectral, second_order, sgd_steps);
criterion_main!(benches);
