//! Property tests for the algebraic invariants of the building blocks.

use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use proptest::prelude::*;
use stance_core::ckf::{cubature_points, CubatureKalmanFilter, MeasurementModel};
use stance_core::ikvel::{ckf_step, CkfLegState};
use stance_core::kinematics::{fk_position, fk_velocity, jacobian, rolling_bias};
use stance_core::wheel::{propagate_contact, rolling_velocity};
use stance_core::yaw::{circular_mean, pairwise_yaw};
use stance_core::{IkVelFilter, IkVelSettings, JointReading, LegGeometry, Side};

fn leg(side: Side, wheel_radius: f64) -> LegGeometry {
    LegGeometry::new(0.08, 0.213, 0.213, wheel_radius, side, Vector3::zeros()).unwrap()
}

fn side() -> impl Strategy<Value = Side> {
    prop_oneof![Just(Side::Left), Just(Side::Right)]
}

fn joints() -> impl Strategy<Value = Vector3<f64>> {
    (-0.6f64..0.6, -1.2f64..1.5, -2.6f64..-0.4).prop_map(|(a, b, c)| Vector3::new(a, b, c))
}

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-range..range, -range..range, -range..range).prop_map(|(a, b, c)| Vector3::new(a, b, c))
}

/// Random symmetric positive-definite 6x6 matrix.
fn spd6() -> impl Strategy<Value = Matrix6<f64>> {
    proptest::collection::vec(-1.0f64..1.0, 36)
        .prop_map(|v| {
            let a = Matrix6::from_row_slice(&v);
            a * a.transpose() * 0.01 + Matrix6::identity() * 1e-3
        })
}

/// Mildly nonlinear three-channel observation of a six-state.
struct Bent {
    r: Matrix3<f64>,
}

impl MeasurementModel<6, 3> for Bent {
    fn observe(&mut self, x: &Vector6<f64>) -> Vector3<f64> {
        Vector3::new(x[0] + 0.1 * x[3] * x[3], x[1].sin() + x[4], x[2] * x[5].cos())
    }
    fn noise(&self) -> Matrix3<f64> {
        self.r
    }
}

proptest! {
    #[test]
    fn update_never_increases_covariance_trace(x in proptest::collection::vec(-1.0f64..1.0, 6), p in spd6(), z in vec3(2.0), r in 1e-4f64..1.0) {
        let mut filter = CubatureKalmanFilter::new(Vector6::from_row_slice(&x), p);
        let before = filter.p.trace();
        filter.update(&z, &mut Bent { r: Matrix3::identity() * r }).unwrap();
        prop_assert!(filter.p.trace() <= before + 1e-12);
    }

    #[test]
    fn velocity_is_jacobian_times_rates(q in joints(), dq in vec3(10.0), s in side(), rw in 0.0f64..0.1) {
        let g = leg(s, rw);
        prop_assert!((fk_velocity(&q, &dq, &g) - jacobian(&q, &g) * dq).abs().max() <= 1e-12);
    }

    #[test]
    fn jacobian_matches_central_differences(q in joints(), s in side(), rw in 0.0f64..0.1) {
        let g = leg(s, rw);
        let h = 1e-6;
        let j = jacobian(&q, &g);
        let mut fd = Matrix3::zeros();
        for c in 0..3 {
            let mut dq = Vector3::zeros();
            dq[c] = h;
            fd.set_column(c, &((fk_position(&(q + dq), &g) - fk_position(&(q - dq), &g)) / (2.0 * h)));
        }
        prop_assert!((j - fd).abs().max() / j.abs().max() <= 1e-6);
    }

    #[test]
    fn mirrored_leg_mirrors_lateral_position(q in joints(), rw in 0.0f64..0.1) {
        let left = fk_position(&q, &leg(Side::Left, rw));
        let right = fk_position(&Vector3::new(-q.x, q.y, q.z), &leg(Side::Right, rw));
        prop_assert!((left.x - right.x).abs() <= 1e-15);
        prop_assert!((left.y + right.y).abs() <= 1e-15);
        prop_assert!((left.z - right.z).abs() <= 1e-15);
    }

    #[test]
    fn rolling_bias_doubles_with_radius(r in 0.001f64..0.2, a1 in 0.5f64..2.0, a2 in 0.5f64..2.5) {
        let (dx, dz) = rolling_bias(r, a1, a2);
        let (dx2, dz2) = rolling_bias(2.0 * r, a1, a2);
        prop_assert_eq!(dx2, 2.0 * dx);
        prop_assert_eq!(dz2, 2.0 * dz);
    }

    #[test]
    fn wheel_propagation_keeps_height(anchor in vec3(10.0), inc in -1.0f64..1.0, r in 0.01f64..0.2, yaw in -3.2f64..3.2) {
        let h = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
        prop_assert_eq!(propagate_contact(&anchor, inc, r, Some(&h)).z, anchor.z);
        prop_assert_eq!(propagate_contact(&anchor, inc, r, None), anchor);
    }

    #[test]
    fn rolling_velocity_ignores_body_pitch_rate(dpsi in -20.0f64..20.0, dq2 in -5.0f64..5.0, dq3 in -5.0f64..5.0, yaw in -3.2f64..3.2) {
        let h = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
        let v = rolling_velocity(dpsi, dq2, dq3, 0.05, Some(&h));
        prop_assert_eq!(v, h * (0.05 * (dpsi - (dq2 + dq3))));
    }

    #[test]
    fn pairwise_yaw_is_translation_invariant(
        feet in proptest::collection::vec(vec3(0.4), 2..5),
        yaw in -3.0f64..3.0,
        shift in vec3(50.0),
    ) {
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        let anchors: Vec<_> = feet.iter().map(|f| rot * f).collect();
        let moved: Vec<_> = anchors.iter().map(|a| a + shift).collect();
        let a = pairwise_yaw(&anchors, &feet, 0.0, 0.0).unwrap();
        let b = pairwise_yaw(&moved, &feet, 0.0, 0.0).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 || (x - y).abs() >= 2.0 * std::f64::consts::PI - 1e-9);
            prop_assert!(*x > -std::f64::consts::PI && *x <= std::f64::consts::PI);
        }
    }

    #[test]
    fn circular_mean_ignores_full_turns(angles in proptest::collection::vec(-0.5f64..0.5, 1..8), k in 0usize..8, turns in -3i32..3) {
        let mut shifted = angles.clone();
        let k = k % angles.len();
        shifted[k] += turns as f64 * std::f64::consts::TAU;
        let (a, b) = (circular_mean(&angles).unwrap(), circular_mean(&shifted).unwrap());
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn cubature_points_average_to_the_mean(x in proptest::collection::vec(-5.0f64..5.0, 6), p in spd6()) {
        let x = Vector6::from_row_slice(&x);
        let points = cubature_points(&x, &p).unwrap();
        prop_assert_eq!(points.len(), 12);
        let sum: Vector6<f64> = points.iter().sum();
        prop_assert!((sum - x * 12.0).abs().max() <= 1e-12 * (1.0 + x.abs().max()));
    }

    #[test]
    fn ckf_update_keeps_covariance_well_formed(q in joints(), dq in vec3(3.0), s in side(), dt in 0.0f64..0.01) {
        let g = leg(s, 0.0);
        let state = CkfLegState::initial(&q, 0.0, &g);
        let z = Vector6::new(q.x, q.y, q.z, dq.x, dq.y, dq.z);
        let step = ckf_step(&state, &z, dt, &IkVelSettings::default(), &g);
        let p = step.state.p;
        prop_assert!((p - p.transpose()).abs().max() <= 1e-12);
        prop_assert!(p.cholesky().is_some());
        prop_assert!(s.sign() * step.state.x[1] >= 0.0);
    }
}

#[test]
fn filter_bank_is_independent_of_leg_order() {
    let geoms = vec![leg(Side::Left, 0.0), leg(Side::Right, 0.0), leg(Side::Left, 0.0)];
    let reading = |k: usize, leg: usize| {
        let t = k as f64 * 0.002;
        let phase = leg as f64;
        JointReading {
            q: Vector3::new(0.05 * (t + phase).sin(), 0.7 + 0.2 * (3.0 * t + phase).sin(), -1.4 + 0.3 * (2.0 * t).cos()),
            dq: Vector3::new(0.05 * (t + phase).cos(), 0.6 * (3.0 * t + phase).cos(), -0.6 * (2.0 * t).sin()),
            tau: Vector3::zeros(),
        }
    };
    let order = [2usize, 0, 1];
    let mut forward = IkVelFilter::new(3, IkVelSettings::default());
    let mut permuted = IkVelFilter::new(3, IkVelSettings::default());
    for k in 0..200 {
        let stamp = k as f64 * 0.002;
        let joints: Vec<_> = (0..3).map(|l| reading(k, l)).collect();
        let a = forward.filter_leg_velocity(stamp, &joints, &geoms);
        let pj: Vec<_> = order.iter().map(|&l| joints[l]).collect();
        let pg: Vec<_> = order.iter().map(|&l| geoms[l].clone()).collect();
        let b = permuted.filter_leg_velocity(stamp, &pj, &pg);
        for (slot, &l) in order.iter().enumerate() {
            assert_eq!(a[l], b[slot], "leg {l} at step {k}");
        }
    }
}
