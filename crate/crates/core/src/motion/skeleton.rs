//! Kinematic trees and forward kinematics on rotation-6d frames.

use serde::{Deserialize, Serialize};

use super::rotation::{mat_mul, mat_vec, rot6d_to_matrix, Mat3};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Channels per joint rotation.
pub const ROT_CHANNELS: usize = 6;

/// Fixed skeleton: parent table, rest offsets and key-joint tags.
///
/// Joint 0 is the root and every parent index precedes its child.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    /// Offset from the parent joint in the parent's rest frame (metres, y up).
    pub offsets: Vec<[f64; 3]>,
    pub feet: Vec<usize>,
    pub hands: Vec<usize>,
}

impl SkeletonSpec {
    pub fn new(
        names: Vec<String>,
        parents: Vec<Option<usize>>,
        offsets: Vec<[f64; 3]>,
        feet: Vec<usize>,
        hands: Vec<usize>,
    ) -> Result<Self> {
        let j = parents.len();
        if j == 0 || names.len() != j || offsets.len() != j {
            return Err(Error::invalid("skeleton tables disagree in length"));
        }
        if parents[0].is_some() {
            return Err(Error::invalid("joint 0 must be the root"));
        }
        for (i, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < i => {}
                _ => return Err(Error::invalid(format!("joint {i} needs a parent listed before it"))),
            }
        }
        if feet.iter().chain(&hands).any(|&k| k == 0 || k >= j) {
            return Err(Error::invalid("key joint index out of range"));
        }
        let mut seen = std::collections::HashSet::new();
        if !feet.iter().chain(&hands).all(|k| seen.insert(*k)) {
            return Err(Error::invalid("key joint tags overlap"));
        }
        if offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("skeleton offsets"));
        }
        Ok(Self {
            names,
            parents,
            offsets,
            feet,
            hands,
        })
    }

    /// Nine-joint body: root, two legs (knee, foot) and two arms (elbow, hand).
    pub fn compact() -> Self {
        let names = [
            "root", "l_knee", "l_foot", "r_knee", "r_foot", "l_elbow", "l_hand", "r_elbow", "r_hand",
        ];
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            vec![None, Some(0), Some(1), Some(0), Some(3), Some(0), Some(5), Some(0), Some(7)],
            vec![
                [0.0, 0.0, 0.0],
                [0.1, -0.45, 0.0],
                [0.0, -0.45, 0.05],
                [-0.1, -0.45, 0.0],
                [0.0, -0.45, 0.05],
                [0.45, 0.5, 0.0],
                [0.3, 0.0, 0.0],
                [-0.45, 0.5, 0.0],
                [-0.3, 0.0, 0.0],
            ],
            vec![2, 4],
            vec![6, 8],
        )
        .expect("built-in skeleton is valid")
    }

    /// 24-joint SMPL body with approximate neutral rest offsets.
    pub fn smpl24() -> Self {
        #[rustfmt::skip]
        let rest: [[f64; 3]; 24] = [
            [-0.0018, -0.2233, 0.0282], [0.0695, -0.3141, 0.0239], [-0.0677, -0.3147, 0.0214],
            [-0.0025, -0.1089, 0.0040], [0.1040, -0.6757, 0.0420], [-0.1055, -0.6753, 0.0380],
            [0.0054, 0.0247, 0.0292], [0.0886, -1.0878, -0.0153], [-0.0920, -1.0949, -0.0104],
            [0.0011, 0.0710, 0.0284], [0.1195, -1.1428, 0.1112], [-0.1186, -1.1424, 0.1140],
            [-0.0016, 0.2873, 0.0170], [0.0774, 0.1925, 0.0195], [-0.0809, 0.1919, 0.0150],
            [0.0050, 0.3533, 0.0663], [0.1987, 0.2310, 0.0010], [-0.1924, 0.2347, -0.0122],
            [0.4540, 0.2211, -0.0359], [-0.4567, 0.2192, -0.0440], [0.7202, 0.2340, -0.0393],
            [-0.7190, 0.2300, -0.0483], [0.8061, 0.2265, -0.0525], [-0.8092, 0.2213, -0.0611],
        ];
        let parents: [i32; 24] = [
            -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
        ];
        let names = [
            "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2", "l_ankle",
            "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar", "r_collar", "head",
            "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand",
            "r_hand",
        ];
        let parents: Vec<Option<usize>> =
            parents.iter().map(|&p| usize::try_from(p).ok()).collect();
        let offsets = (0..24)
            .map(|j| match parents[j] {
                None => [0.0; 3],
                Some(p) => [rest[j][0] - rest[p][0], rest[j][1] - rest[p][1], rest[j][2] - rest[p][2]],
            })
            .collect();
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            parents,
            offsets,
            vec![10, 11],
            vec![22, 23],
        )
        .expect("built-in skeleton is valid")
    }

    /// Looks a built-in skeleton up by name (`compact` or `smpl24`).
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "compact" => Ok(Self::compact()),
            "smpl24" => Ok(Self::smpl24()),
            other => Err(Error::Config(format!("unknown skeleton `{other}`"))),
        }
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    /// Per-frame channel count: 6 per joint plus root translation.
    pub fn frame_width(&self) -> usize {
        self.num_joints() * ROT_CHANNELS + 3
    }

    /// Column offset of the root translation inside a frame.
    pub fn translation_offset(&self) -> usize {
        self.num_joints() * ROT_CHANNELS
    }

    /// Feet and hands, in that order.
    pub fn key_joints(&self) -> Vec<usize> {
        self.feet.iter().chain(&self.hands).copied().collect()
    }

    /// Global joint positions for one frame laid out as
    /// `[rot6d joint 0, …, rot6d joint J-1, root translation]`.
    pub fn forward_kinematics<S: Scalar>(&self, frame: &[S]) -> Result<Vec<[S; 3]>> {
        Ok(self.forward_kinematics_full(frame)?.0)
    }

    /// Global positions and global orientations for one frame.
    pub fn forward_kinematics_full<S: Scalar>(
        &self,
        frame: &[S],
    ) -> Result<(Vec<[S; 3]>, Vec<Mat3<S>>)> {
        if frame.len() != self.frame_width() {
            return Err(Error::ShapeMismatch {
                op: "forward_kinematics",
                lhs: vec![frame.len()],
                rhs: vec![self.frame_width()],
            });
        }
        let j = self.num_joints();
        let t = self.translation_offset();
        let mut pos: Vec<[S; 3]> = Vec::with_capacity(j);
        let mut rot: Vec<Mat3<S>> = Vec::with_capacity(j);
        for k in 0..j {
            let local = rot6d_to_matrix(&frame[k * ROT_CHANNELS..(k + 1) * ROT_CHANNELS])?;
            match self.parents[k] {
                None => {
                    pos.push([frame[t], frame[t + 1], frame[t + 2]]);
                    rot.push(local);
                }
                Some(p) => {
                    let o = self.offsets[k];
                    let d = mat_vec(&rot[p], &[S::lit(o[0]), S::lit(o[1]), S::lit(o[2])]);
                    let pp = pos[p];
                    pos.push([pp[0] + d[0], pp[1] + d[1], pp[2] + d[2]]);
                    rot.push(mat_mul(&rot[p], &local));
                }
            }
        }
        Ok((pos, rot))
    }
}

impl Default for SkeletonSpec {
    fn default() -> Self {
        Self::compact()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::rotation::{axis_angle, matrix_to_rot6d};

    fn rest_frame(skel: &SkeletonSpec, root: [f64; 3]) -> Vec<f64> {
        let mut f = Vec::new();
        for _ in 0..skel.num_joints() {
            f.extend_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        }
        f.extend_from_slice(&root);
        f
    }

    #[test]
    fn rest_pose_positions_are_cumulative_offsets() {
        let skel = SkeletonSpec::compact();
        let p = skel.forward_kinematics(&rest_frame(&skel, [0.0, 0.9, 0.0])).unwrap();
        assert_eq!(p[0], [0.0, 0.9, 0.0]);
        let foot = p[2];
        assert!((foot[0] - 0.1).abs() < 1e-15);
        assert!((foot[1] - 0.0).abs() < 1e-15);
        assert!((foot[2] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn rotating_the_root_rotates_children() {
        let skel = SkeletonSpec::compact();
        let mut f = rest_frame(&skel, [0.0; 3]);
        let r = axis_angle([0.0, 1.0, 0.0], std::f64::consts::PI);
        f[..6].copy_from_slice(&matrix_to_rot6d(&r).unwrap());
        let p = skel.forward_kinematics(&f).unwrap();
        // Half turn about y mirrors x and z.
        assert!((p[6][0] + 0.75).abs() < 1e-12);
        assert!((p[6][1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn half_turn_negates_horizontal_offsets_of_every_joint() {
        let skel = SkeletonSpec::compact();
        let root = [0.3, 0.9, -0.2];
        let rest = skel.forward_kinematics(&rest_frame(&skel, root)).unwrap();
        let mut f = rest_frame(&skel, root);
        f[..6].copy_from_slice(&matrix_to_rot6d(&axis_angle([0.0, 1.0, 0.0], std::f64::consts::PI)).unwrap());
        let turned = skel.forward_kinematics(&f).unwrap();
        for j in 1..skel.num_joints() {
            assert!(((turned[j][0] - root[0]) + (rest[j][0] - root[0])).abs() < 1e-12);
            assert!(((turned[j][2] - root[2]) + (rest[j][2] - root[2])).abs() < 1e-12);
            assert!((turned[j][1] - rest[j][1]).abs() < 1e-12);
        }
    }

    #[test]
    fn bent_elbow_chain() {
        // shoulder -> elbow 1 m along x, elbow -> hand 0.5 m along x, elbow bent 90° about z.
        let skel = SkeletonSpec::new(
            vec!["shoulder".into(), "elbow".into(), "hand".into()],
            vec![None, Some(0), Some(1)],
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.5, 0.0, 0.0]],
            vec![],
            vec![2],
        )
        .unwrap();
        let mut f = rest_frame(&skel, [0.0; 3]);
        f[6..12].copy_from_slice(&[0.0, 1.0, 0.0, -1.0, 0.0, 0.0]);
        let p = skel.forward_kinematics(&f).unwrap();
        assert!((p[2][0] - 1.0).abs() < 1e-15);
        assert!((p[2][1] - 0.5).abs() < 1e-15);
        assert!(p[2][2].abs() < 1e-15);
    }

    #[test]
    fn smpl_rest_pose_recovers_template() {
        let skel = SkeletonSpec::smpl24();
        assert_eq!(skel.num_joints(), 24);
        assert_eq!(skel.frame_width(), 147);
        let p = skel.forward_kinematics(&rest_frame(&skel, [0.0; 3])).unwrap();
        // Left hand relative to the pelvis.
        assert!((p[22][0] - (0.8061 + 0.0018)).abs() < 1e-12);
    }

    #[test]
    fn invalid_tables_are_rejected() {
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(SkeletonSpec::new(names.clone(), vec![None, Some(1)], vec![[0.0; 3]; 2], vec![], vec![]).is_err());
        assert!(SkeletonSpec::new(names, vec![Some(0), None], vec![[0.0; 3]; 2], vec![], vec![]).is_err());
        assert!(SkeletonSpec::by_name("nope").is_err());
        let c = SkeletonSpec::compact();
        assert!(SkeletonSpec::new(c.names.clone(), c.parents.clone(), c.offsets.clone(), vec![2], vec![2]).is_err());
    }

    #[test]
    fn wrong_frame_width_is_an_error() {
        let skel = SkeletonSpec::compact();
        assert!(skel.forward_kinematics(&[0.0f64; 10]).is_err());
    }
}
