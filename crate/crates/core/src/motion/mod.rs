//! Motion representation, kinematics, resampling, file I/O and synthetic data.

pub mod io;
pub mod rotation;
pub mod sequence;
pub mod skeleton;
pub mod synth;

pub use io::{decode_motion, encode_motion, load_motion, save_motion};
pub use rotation::{matrix_to_rot6d, rot6d_to_matrix, Mat3};
pub use sequence::{compute_velocities, BeatGrid, MotionSequence, Velocities};
pub use skeleton::SkeletonSpec;
pub use synth::{generate_synthetic_clip, ClipMeta, SynthParams, SyntheticClip};
