//! Rotation-6d: the first two columns of a rotation matrix, recovered by
//! Gram–Schmidt orthogonalization.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major 3×3 matrix.
pub type Mat3<S> = [[S; 3]; 3];

/// Tolerance used to accept a matrix as a rotation.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

pub fn identity<S: Scalar>() -> Mat3<S> {
    let (o, z) = (S::one(), S::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn mat_mul<S: Scalar>(a: &Mat3<S>, b: &Mat3<S>) -> Mat3<S> {
    let mut out = [[S::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat_vec<S: Scalar>(m: &Mat3<S>, v: &[S; 3]) -> [S; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn transpose<S: Scalar>(m: &Mat3<S>) -> Mat3<S> {
    let mut out = [[S::zero(); 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[j][i] = v;
        }
    }
    out
}

pub fn determinant<S: Scalar>(m: &Mat3<S>) -> S {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Rotation by `angle` radians about the unit vector `axis` (Rodrigues).
pub fn axis_angle<S: Scalar>(axis: [S; 3], angle: S) -> Mat3<S> {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
    let (s, c) = angle.sin_cos();
    let t = S::one() - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn dot<S: Scalar>(a: &[S; 3], b: &[S; 3]) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross<S: Scalar>(a: &[S; 3], b: &[S; 3]) -> [S; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Maps `[c0; c1]` (two stacked 3-vectors) to the rotation whose first two
/// columns are their Gram–Schmidt orthonormalization.
pub fn rot6d_to_matrix<S: Scalar>(v: &[S]) -> Result<Mat3<S>> {
    if v.len() != 6 {
        return Err(Error::invalid(format!("rotation-6d needs 6 values, got {}", v.len())));
    }
    let a1 = [v[0], v[1], v[2]];
    let a2 = [v[3], v[4], v[5]];
    let tiny = S::lit(1e-12);
    let n1 = dot(&a1, &a1).sqrt();
    let n2 = dot(&a2, &a2).sqrt();
    if n1 <= tiny || n2 <= tiny {
        return Err(Error::DegenerateRotation("zero column"));
    }
    let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
    let proj = dot(&b1, &a2);
    let u = [a2[0] - proj * b1[0], a2[1] - proj * b1[1], a2[2] - proj * b1[2]];
    let nu = dot(&u, &u).sqrt();
    if nu <= S::lit(1e-9) * n2 {
        return Err(Error::DegenerateRotation("parallel columns"));
    }
    let b2 = [u[0] / nu, u[1] / nu, u[2] / nu];
    let b3 = cross(&b1, &b2);
    Ok([
        [b1[0], b2[0], b3[0]],
        [b1[1], b2[1], b3[1]],
        [b1[2], b2[2], b3[2]],
    ])
}

/// First two columns of `r`, column-major.
pub fn matrix_to_rot6d<S: Scalar>(r: &Mat3<S>) -> Result<[S; 6]> {
    let rtr = mat_mul(&transpose(r), r);
    let tol = S::lit(ORTHONORMAL_TOL);
    for (i, row) in rtr.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let target = if i == j { S::one() } else { S::zero() };
            if (v - target).abs() > tol {
                return Err(Error::invalid("matrix is not orthonormal"));
            }
        }
    }
    if determinant(r) < S::zero() {
        return Err(Error::invalid("matrix is a reflection"));
    }
    Ok([r[0][0], r[1][0], r[2][0], r[0][1], r[1][1], r[2][1]])
}
