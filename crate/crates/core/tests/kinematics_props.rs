use cadence_core::motion::rotation::{axis_angle, mat_mul, matrix_to_rot6d};
use cadence_core::motion::{compute_velocities, MotionSequence, SkeletonSpec};
use proptest::prelude::*;

fn rot6d(axis: [f64; 3], angle: f64) -> [f64; 6] {
    matrix_to_rot6d(&axis_angle(axis, angle)).unwrap()
}

fn axis() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-1.0f64..1.0).prop_filter("nonzero axis", |a| a.iter().map(|v| v * v).sum::<f64>() > 1e-3)
}

fn pose(skel: &SkeletonSpec, angles: &[f64], root_rot: [f64; 6], root_t: [f64; 3]) -> Vec<f64> {
    let mut f = root_rot.to_vec();
    for (j, a) in angles.iter().enumerate().take(skel.num_joints() - 1) {
        f.extend(rot6d([(j % 3) as f64, 1.0, 0.5], *a));
    }
    f.extend(root_t);
    f
}

fn distances(p: &[[f64; 3]]) -> Vec<f64> {
    let mut d = Vec::new();
    for a in p {
        for b in p {
            d.push(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt());
        }
    }
    d
}

proptest! {
    #[test]
    fn fk_is_rigid_under_root_motion(
        angles in prop::collection::vec(-2.0f64..2.0, 23),
        ax in axis(),
        angle in -3.0f64..3.0,
        t in prop::array::uniform3(-5.0f64..5.0),
        smpl in any::<bool>(),
    ) {
        let skel = if smpl { SkeletonSpec::smpl24() } else { SkeletonSpec::compact() };
        let ident = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let base = skel.forward_kinematics(&pose(&skel, &angles, ident, [0.0; 3])).unwrap();
        let moved = skel.forward_kinematics(&pose(&skel, &angles, rot6d(ax, angle), t)).unwrap();
        for (a, b) in distances(&base).iter().zip(distances(&moved)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rigidly_moving_body_has_zero_relative_velocity(
        angles in prop::collection::vec(-2.0f64..2.0, 8),
        ax in axis(),
        angle in -3.0f64..3.0,
        step in prop::array::uniform3(-0.5f64..0.5),
    ) {
        let skel = SkeletonSpec::compact();
        let mut data = Vec::new();
        for i in 0..5 {
            let s = i as f64;
            data.extend(pose(&skel, &angles, rot6d(ax, angle), [step[0] * s, step[1] * s, step[2] * s]));
        }
        let seq = MotionSequence::new(60, 9, data).unwrap();
        let v = compute_velocities(&seq, &skel).unwrap();
        prop_assert!(v.position.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn rot6d_round_trip(a1 in axis(), a2 in axis(), x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let r = mat_mul(&axis_angle(a1, x), &axis_angle(a2, y));
        let back = cadence_core::motion::rot6d_to_matrix(&matrix_to_rot6d(&r).unwrap()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((r[i][j] - back[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn resampling_keeps_retained_frames(len in 2usize..40, seed in any::<u64>()) {
        let mut rng = cadence_core::rng::SplitMix64::new(seed);
        let data = (0..len * 4 * 9).map(|_| rng.normal()).collect();
        let seq = MotionSequence::new(60, 1, data).unwrap();
        let low = seq.downsample(15).unwrap();
        let up = low.upsample_linear(60).unwrap();
        for i in 0..low.len() {
            prop_assert_eq!(up.frame(4 * i), seq.frame(4 * i));
        }
    }
}
