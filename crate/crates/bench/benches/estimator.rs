use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::{Vector3, Vector6};
use stance_core::ikvel::{ckf_step, CkfLegState};
use stance_core::kinematics::{fk_position, foot_force_body, jacobian, DEFAULT_SIGMA_MIN};
use stance_core::{generate_gait, preset, Estimator, EstimatorConfig, IkVelSettings, LegGeometry, Side};

fn kinematics(c: &mut Criterion) {
    let geom = LegGeometry::new(0.08, 0.213, 0.213, 0.0, Side::Left, Vector3::zeros()).unwrap();
    let q = Vector3::new(0.05, 0.7, -1.4);
    let tau = Vector3::new(0.5, 3.0, -6.0);
    c.bench_function("fk_position", |b| b.iter(|| fk_position(black_box(&q), &geom)));
    c.bench_function("jacobian", |b| b.iter(|| jacobian(black_box(&q), &geom)));
    c.bench_function("foot_force_body", |b| {
        b.iter(|| foot_force_body(black_box(&q), black_box(&tau), &geom, DEFAULT_SIGMA_MIN))
    });

    let state = CkfLegState::initial(&q, 0.0, &geom);
    let z = Vector6::new(q.x, q.y, q.z, 0.1, -0.4, 0.8);
    let settings = IkVelSettings::default();
    c.bench_function("ckf_step", |b| b.iter(|| ckf_step(black_box(&state), &z, 0.002, &settings, &geom)));
}

/// One second of trot at 500 Hz, timed per estimator step.
fn estimator(c: &mut Criterion) {
    let (plan, _) = preset("flat_loop").unwrap();
    let sim = generate_gait(&plan).unwrap();
    let frames = &sim.frames[..500];
    for enabled in [false, true] {
        let mut config = EstimatorConfig::for_legs(plan.legs.clone());
        config.ikvel.enabled = enabled;
        let name = if enabled { "estimator_500_steps_ikvel" } else { "estimator_500_steps" };
        c.bench_function(name, |b| {
            b.iter_batched(
                || Estimator::new(config.clone()).unwrap(),
                |mut est| {
                    for frame in frames {
                        black_box(est.step(frame).unwrap());
                    }
                },
                BatchSize::SmallInput,
            )
        });
    }
}

criterion_group!(benches, kinematics, estimator);
criterion_main!(benches);
