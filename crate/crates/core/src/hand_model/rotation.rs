//! Intrinsic XYZ Euler angles: `R = Rx(a) * Ry(b) * Rz(c)`.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(b: f64) -> Matrix3<f64> {
    let (s, c) = b.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(c: f64) -> Matrix3<f64> {
    let (s, co) = c.sin_cos();
    Matrix3::new(co, -s, 0.0, s, co, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation about a unit `axis` by `angle` (Rodrigues).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    let k = axis.cross_matrix();
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

pub fn euler_to_matrix(r: &Vector3<f64>) -> Matrix3<f64> {
    rot_x(r.x) * rot_y(r.y) * rot_z(r.z)
}

/// World-frame angular axes of the three Euler angles; the derivative of
/// `R(r) * p` w.r.t. `r[i]` is `axes[i].cross(R * p)`.
pub fn euler_axes(r: &Vector3<f64>) -> [Vector3<f64>; 3] {
    let rx = rot_x(r.x);
    let rxy = rx * rot_y(r.y);
    [Vector3::x(), rx * Vector3::y(), rxy * Vector3::z()]
}

/// Converts a rotation matrix to Euler angles, choosing among the two
/// equivalent branches the one closest to `reference`.
pub fn matrix_to_euler(m: &Matrix3<f64>, reference: &Vector3<f64>) -> Vector3<f64> {
    let sb = m[(0, 2)].clamp(-1.0, 1.0);
    // Gimbal lock: only a + c (b = pi/2) or c - a (b = -pi/2) is observable.
    if sb.abs() > 1.0 - 1e-12 {
        let a = reference.x;
        return if sb > 0.0 {
            let sum = m[(1, 0)].atan2(m[(1, 1)]);
            Vector3::new(a, PI / 2.0, wrap_angle(sum - a))
        } else {
            let diff = m[(1, 0)].atan2(m[(1, 1)]);
            Vector3::new(a, -PI / 2.0, wrap_angle(diff + a))
        };
    }
    let b = sb.asin();
    let a = (-m[(1, 2)]).atan2(m[(2, 2)]);
    let c = (-m[(0, 1)]).atan2(m[(0, 0)]);
    let first = Vector3::new(a, b, c);
    let second = Vector3::new(wrap_angle(a + PI), wrap_angle(PI - b), wrap_angle(c + PI));
    let dist = |v: &Vector3<f64>| {
        (0..3)
            .map(|i| wrap_angle(v[i] - reference[i]).powi(2))
            .sum::<f64>()
    };
    if dist(&second) < dist(&first) {
        second
    } else {
        first
    }
}
