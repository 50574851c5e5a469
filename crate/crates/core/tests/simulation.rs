//! End-to-end properties of the simulator and the estimator running on it.

use nalgebra::Vector3;
use stance_core::kinematics::{foot_force_body, inverse_position, jacobian, DEFAULT_SIGMA_MIN};
use stance_core::sim::GRAVITY;
use stance_core::stream::{read_log, write_log};
use stance_core::{
    degrade, generate_gait, preset, Estimator, EstimatorConfig, GaitPlan, IkVelFilter, IkVelSettings, Imperfections,
    JointReading, SimOutput,
};

/// `base` with its waypoints replaced by the ones in `text`.
fn plan_with(text: &str, base: GaitPlan) -> GaitPlan {
    let header = GaitPlan {
        waypoints: Vec::new(),
        ..base
    };
    GaitPlan::parse(&format!("{}{text}", header.to_text())).unwrap()
}

fn flat_loop() -> (GaitPlan, SimOutput) {
    let (plan, _) = preset("flat_loop").unwrap();
    let sim = generate_gait(&plan).unwrap();
    (plan, sim)
}

#[test]
fn stance_feet_do_not_move() {
    let (_, sim) = flat_loop();
    for k in 1..sim.feet.len() {
        for leg in 0..sim.feet[k].len() {
            if sim.contacts[k][leg] && sim.contacts[k - 1][leg] {
                assert!((sim.feet[k][leg] - sim.feet[k - 1][leg]).norm() <= 1e-12, "leg {leg} slid at sample {k}");
            }
        }
    }
}

#[test]
fn forward_kinematics_reproduces_true_feet() {
    let (plan, sim) = flat_loop();
    for (k, frame) in sim.frames.iter().enumerate().step_by(7) {
        let truth = &sim.truth[k];
        let rot = frame.imu_attitude.to_rotation_matrix();
        for (leg, geom) in plan.legs.iter().enumerate() {
            let foot = truth.position + rot * geom.foot_in_body(&frame.legs[leg].q);
            assert!((foot - sim.feet[k][leg]).norm() <= 1e-9, "leg {leg} at sample {k}");
        }
    }
}

#[test]
fn torques_carry_the_body_weight() {
    let (plan, sim) = flat_loop();
    for (k, frame) in sim.frames.iter().enumerate().step_by(11) {
        let rot = frame.imu_attitude.to_rotation_matrix();
        let mut total = Vector3::zeros();
        for (leg, geom) in plan.legs.iter().enumerate() {
            let reading = &frame.legs[leg];
            let force = rot * foot_force_body(&reading.q, &reading.tau, geom, DEFAULT_SIGMA_MIN).unwrap();
            if !sim.contacts[k][leg] {
                assert!(force.norm() <= 1e-9);
            }
            total += force;
        }
        if sim.contacts[k].iter().any(|&c| c) {
            assert!((total - Vector3::new(0.0, 0.0, -plan.mass * GRAVITY)).norm() <= 1e-9, "sample {k}: {total:?}");
        }
    }
}

#[test]
fn truth_is_sampled_at_the_plan_rate() {
    let (plan, sim) = flat_loop();
    let dt = 1.0 / plan.rate_hz;
    for pair in sim.truth.windows(2) {
        assert!((pair[1].stamp - pair[0].stamp - dt).abs() <= 1e-9);
    }
    assert!(sim.truth.iter().all(|s| s.is_finite()));
    let (start, end) = (sim.truth[0].position, sim.truth.last().unwrap().position);
    assert!((end - start).norm() <= 1e-12);
}

#[test]
fn estimator_tracks_truth_at_every_sample() {
    let (plan, sim) = flat_loop();
    let mut estimator = Estimator::new(EstimatorConfig::for_legs(plan.legs.clone())).unwrap();
    for (frame, truth) in sim.frames.iter().zip(&sim.truth) {
        let state = estimator.step(frame).unwrap();
        assert!((state.position - truth.position).norm() <= 1e-9, "t = {}", frame.stamp);
    }
}

#[test]
fn clean_degrade_is_identity() {
    let (_, sim) = flat_loop();
    assert!(Imperfections::default().is_identity());
    assert_eq!(degrade(&sim.frames, &Imperfections::default(), 42), sim.frames);
}

#[test]
fn generation_is_deterministic_per_seed() {
    let (mut plan, imperfections) = preset("stair_loop").unwrap();
    let a = generate_gait(&plan).unwrap();
    let b = generate_gait(&plan).unwrap();
    assert_eq!(a.frames, b.frames);
    assert_eq!(degrade(&a.frames, &imperfections, 3), degrade(&b.frames, &imperfections, 3));
    plan.seed += 1;
    assert_ne!(generate_gait(&plan).unwrap().frames, a.frames);
}

#[test]
fn log_round_trip_is_lossless() {
    let (plan, _) = preset("wheel_bob").unwrap();
    let sim = generate_gait(&plan).unwrap();
    let noisy = degrade(
        &sim.frames,
        &Imperfections {
            encoder_quantum: 1e-3,
            spike_probability: 0.01,
            spike_gain: 2.0,
            yaw_drift: 0.01,
            wheel_slip: 0.1,
        },
        9,
    );
    let mut buf = Vec::new();
    write_log(&mut buf, &noisy).unwrap();
    assert_eq!(read_log(buf.as_slice()).unwrap(), noisy);
}

#[test]
fn filtered_velocity_converges_on_steady_swing() {
    let (plan, _) = preset("flat_loop").unwrap();
    let geoms = &plan.legs[..2];
    let velocity = Vector3::new(0.3, 0.02, 0.1);
    let mut filter = IkVelFilter::new(geoms.len(), IkVelSettings::default());
    let mut worst = 0.0f64;
    for k in 0..500 {
        let t = k as f64 * 0.002;
        let joints: Vec<_> = geoms
            .iter()
            .map(|g| {
                let foot = Vector3::new(-0.15, g.side.sign() * 0.08, -0.32) + velocity * t;
                let q = inverse_position(&foot, g).unwrap();
                let dq = jacobian(&q, g).lu().solve(&velocity).unwrap();
                JointReading { q, dq, tau: Vector3::zeros() }
            })
            .collect();
        let filtered = filter.filter_leg_velocity(t, &joints, geoms);
        if t >= 0.5 {
            worst = filtered.iter().map(|v| (v - velocity).norm()).fold(worst, f64::max);
        }
    }
    assert!(worst <= 1e-3, "steady-state foot velocity error {worst}");
}

#[test]
fn wheels_rolled_out_and_back_return_their_anchors() {
    let (plan, _) = preset("wheel_roll").unwrap();
    let plan = plan_with(
        "waypoint = stand smooth 0.2 0 0 0 0\n\
         waypoint = roll smooth 4 2 0 0 0\n\
         waypoint = roll smooth 4 0 0 0 0\n",
        plan,
    );
    let radius = plan.legs[0].wheel_radius;
    let sim = generate_gait(&plan).unwrap();
    let mut estimator = Estimator::new(EstimatorConfig::for_legs(plan.legs.clone())).unwrap();
    let mut first = None;
    let mut travelled = 0.0;
    let mut prev: Option<Vec<Vector3<f64>>> = None;
    for frame in &sim.frames {
        estimator.step(frame).unwrap();
        let anchors: Vec<_> = estimator.diagnostics().anchors.iter().map(|a| a.unwrap().anchor).collect();
        if let Some(p) = &prev {
            travelled += (anchors[0] - p[0]).norm();
        }
        first.get_or_insert_with(|| anchors.clone());
        prev = Some(anchors);
    }
    let (first, last) = (first.unwrap(), prev.unwrap());
    assert!(travelled > 3.9, "anchors moved {travelled} m");
    for (a, b) in first.iter().zip(&last) {
        assert!((a - b).norm() <= radius * 1e-9, "{a:?} vs {b:?}");
    }
}

#[test]
fn stair_cycles_keep_support_planes_fixed() {
    let (plan, imperfections) = preset("stair_loop").unwrap();
    let sim = generate_gait(&plan).unwrap();
    let frames = degrade(&sim.frames, &imperfections, plan.seed);
    let config = EstimatorConfig::for_legs(plan.legs.clone());
    let dead_band = config.height.match_radius / 10.0;
    let mut estimator = Estimator::new(config).unwrap();
    let mut first_planes = None;
    let mut touchdowns = 0;
    for frame in &frames {
        estimator.step(frame).unwrap();
        let diag = estimator.diagnostics();
        if first_planes.is_none() && diag.planes.len() == 2 {
            first_planes = Some(diag.planes.planes().to_vec());
        }
        for &leg in &diag.touchdowns {
            let z = diag.anchors[leg].unwrap().anchor.z;
            let nearest = diag
                .planes
                .planes()
                .iter()
                .map(|p| (z - p.height).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest == 0.0 || nearest <= dead_band, "anchor z {z} off every plane by {nearest}");
            touchdowns += 1;
        }
    }
    let first = first_planes.expect("floor and platform planes");
    let last = estimator.diagnostics().planes.planes().to_vec();
    assert_eq!(last.len(), 2);
    for (a, b) in first.iter().zip(&last) {
        assert_eq!(a.height, b.height);
    }
    assert!(touchdowns > 300);
}

#[test]
fn kinematic_heading_alone_through_a_full_turn() {
    let (plan, _) = preset("flat_loop").unwrap();
    let plan = plan_with(
        "waypoint = stand smooth 0.5 0 0 0 0\n\
         waypoint = walk smooth 8 0 0 0 6.283185307179586\n\
         waypoint = stand smooth 0.5 0 0 0 6.283185307179586\n",
        plan,
    );
    let sim = generate_gait(&plan).unwrap();
    let mut config = EstimatorConfig::for_legs(plan.legs.clone());
    config.yaw.imu_yaw_enabled = false;
    let mut estimator = Estimator::new(config).unwrap();
    for frame in &sim.frames {
        estimator.step(frame).unwrap();
    }
    let error = stance_core::angle::wrap_angle(estimator.state().yaw - sim.truth.last().unwrap().yaw);
    // reported, not bounded: the residual depends on the gait and gain schedule
    println!("kinematics-only heading error after one turn in place: {:.3e} rad", error);
    assert!(error.is_finite());
}
