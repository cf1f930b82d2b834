//! Similarity transforms `g(x; p) = s·R(θ)·x + t` between a model (training)
//! domain and an image domain.
//!
//! Coordinates are taken relative to each grid's center, so the identity
//! pose maps the center of the training grid onto the center of the image.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::ScalarField;

pub const MIN_SCALE: f64 = 0.2;
pub const MAX_SCALE: f64 = 5.0;

/// Number of pose parameters, ordered `(tx, ty, theta, scale)`.
pub const POSE_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub tx: f64,
    pub ty: f64,
    pub theta: f64,
    pub scale: f64,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

pub(crate) fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

#[inline]
fn rotate(theta: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            tx: 0.0,
            ty: 0.0,
            theta: 0.0,
            scale: 1.0,
        }
    }

    pub fn new(tx: f64, ty: f64, theta: f64, scale: f64) -> Result<Self> {
        if ![tx, ty, theta, scale].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("pose parameters must be finite"));
        }
        if !(MIN_SCALE..=MAX_SCALE).contains(&scale) {
            return Err(Error::invalid(format!(
                "pose scale {scale} outside [{MIN_SCALE}, {MAX_SCALE}]"
            )));
        }
        Ok(Self {
            tx,
            ty,
            theta: wrap_angle(theta),
            scale,
        })
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            tx,
            ty,
            ..Self::identity()
        }
    }

    /// Wraps `theta` and clamps `scale` into the admissible range.
    pub fn normalized(self) -> Self {
        Self {
            theta: wrap_angle(self.theta),
            scale: self.scale.clamp(MIN_SCALE, MAX_SCALE),
            ..self
        }
    }

    pub fn to_array(self) -> [f64; POSE_DIM] {
        [self.tx, self.ty, self.theta, self.scale]
    }

    pub fn from_array(a: [f64; POSE_DIM]) -> Self {
        Self {
            tx: a[0],
            ty: a[1],
            theta: a[2],
            scale: a[3],
        }
    }

    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        let r = rotate(self.theta, x);
        [self.scale * r[0] + self.tx, self.scale * r[1] + self.ty]
    }

    pub fn apply_inverse(&self, xh: [f64; 2]) -> [f64; 2] {
        let r = rotate(-self.theta, [xh[0] - self.tx, xh[1] - self.ty]);
        [r[0] / self.scale, r[1] / self.scale]
    }

    pub fn inverse(&self) -> Pose {
        let t = rotate(-self.theta, [self.tx, self.ty]);
        Pose {
            tx: -t[0] / self.scale,
            ty: -t[1] / self.scale,
            theta: wrap_angle(-self.theta),
            scale: 1.0 / self.scale,
        }
    }

    /// `∂g/∂x = s·R(θ)`
    pub fn jacobian(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.theta.sin_cos();
        let k = self.scale;
        [[k * c, -k * s], [k * s, k * c]]
    }

    /// `[∂g/∂x]⁻¹ = R(−θ)/s`
    pub fn inverse_jacobian(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.theta.sin_cos();
        let k = 1.0 / self.scale;
        [[k * c, k * s], [-k * s, k * c]]
    }

    /// `∂g/∂p_i` at training-domain point `x`.
    pub fn d_param(&self, param: usize, x: [f64; 2]) -> [f64; 2] {
        match param {
            0 => [1.0, 0.0],
            1 => [0.0, 1.0],
            2 => {
                let r = rotate(self.theta + PI / 2.0, x);
                [self.scale * r[0], self.scale * r[1]]
            }
            3 => rotate(self.theta, x),
            _ => panic!("pose parameter index {param} out of range"),
        }
    }

    /// `∂²g/∂x∂p_i`, constant in `x` for a similarity transform.
    pub fn d2_param_dx(&self, param: usize) -> [[f64; 2]; 2] {
        match param {
            0 | 1 => [[0.0; 2]; 2],
            2 => {
                let (s, c) = (self.theta + PI / 2.0).sin_cos();
                let k = self.scale;
                [[k * c, -k * s], [k * s, k * c]]
            }
            3 => {
                let (s, c) = self.theta.sin_cos();
                [[c, -s], [s, c]]
            }
            _ => panic!("pose parameter index {param} out of range"),
        }
    }
}

/// Evaluates `field(g⁻¹(x̂))` on a `width × height` target grid by clamped
/// bilinear sampling. Level values are carried over unchanged, so a scaled
/// signed-distance field is no longer a distance field.
pub fn warp_field(field: &ScalarField, pose: &Pose, width: usize, height: usize) -> ScalarField {
    let src_c = field.center();
    let dst_c = [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0];
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let xh = [x as f64 - dst_c[0], y as f64 - dst_c[1]];
            let p = pose.apply_inverse(xh);
            values.push(field.sample_clamped(p[0] + src_c[0], p[1] + src_c[1]));
        }
    }
    ScalarField::from_parts(width, height, values)
}
