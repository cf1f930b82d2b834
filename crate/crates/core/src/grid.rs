//! Scalar fields on the pixel grid, finite-difference operators and the
//! smoothed region / curve integrals every other module builds on.
//!
//! Pixel `(x, y)` sits at integer coordinates, `x` along the row and `y`
//! down the columns; storage is row-major. Spacing is one pixel in both
//! directions.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Width of the smoothed Heaviside transition, in pixels.
pub const DEFAULT_SMOOTHING_WIDTH: f64 = 1.5;

/// A finite real value per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(Error::invalid(format!(
                "grid must be at least 3x3, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "expected {} values for a {width}x{height} grid, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scalar field"));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    /// Builds a field from values the caller has already checked.
    pub(crate) fn from_parts(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self {
            width,
            height,
            values,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Center of the grid in pixel coordinates.
    pub fn center(&self) -> [f64; 2] {
        [
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        ]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn ensure_same_dims(&self, other: &ScalarField) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    /// Bilinear interpolation; points outside the grid are clamped onto it.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Result<f64> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::invalid(format!(
                "sample point ({x}, {y}) is not finite"
            )));
        }
        Ok(self.sample_clamped(x, y))
    }

    /// Bilinear sampling for points already known to be finite.
    #[inline]
    pub(crate) fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let xmax = (self.width - 1) as f64;
        let ymax = (self.height - 1) as f64;
        let x = x.clamp(0.0, xmax);
        let y = y.clamp(0.0, ymax);
        let x0 = (x.floor() as usize).min(self.width - 2);
        let y0 = (y.floor() as usize).min(self.height - 2);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let i = y0 * self.width + x0;
        let v00 = self.values[i];
        let v10 = self.values[i + 1];
        let v01 = self.values[i + self.width];
        let v11 = self.values[i + self.width + 1];
        (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11)
    }

    /// Bilinear value and its spatial derivative; the derivative is zero
    /// along an axis on which the point was clamped.
    #[inline]
    pub(crate) fn sample_clamped_with_gradient(&self, x: f64, y: f64) -> (f64, [f64; 2]) {
        let xmax = (self.width - 1) as f64;
        let ymax = (self.height - 1) as f64;
        let (xc, yc) = (x.clamp(0.0, xmax), y.clamp(0.0, ymax));
        let x0 = (xc.floor() as usize).min(self.width - 2);
        let y0 = (yc.floor() as usize).min(self.height - 2);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let i = y0 * self.width + x0;
        let v00 = self.values[i];
        let v10 = self.values[i + 1];
        let v01 = self.values[i + self.width];
        let v11 = self.values[i + self.width + 1];
        let value = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
        let dx = if x == xc {
            (1.0 - fy) * (v10 - v00) + fy * (v11 - v01)
        } else {
            0.0
        };
        let dy = if y == yc {
            (1.0 - fx) * (v01 - v00) + fx * (v11 - v10)
        } else {
            0.0
        };
        (value, [dx, dy])
    }

    /// Central differences in the interior, first-order one-sided
    /// differences on the border.
    pub fn gradient(&self) -> GradientField {
        let (w, h) = self.dims();
        let mut dx = vec![0.0; w * h];
        let mut dy = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                dx[i] = if x == 0 {
                    self.get(1, y) - self.get(0, y)
                } else if x == w - 1 {
                    self.get(w - 1, y) - self.get(w - 2, y)
                } else {
                    0.5 * (self.get(x + 1, y) - self.get(x - 1, y))
                };
                dy[i] = if y == 0 {
                    self.get(x, 1) - self.get(x, 0)
                } else if y == h - 1 {
                    self.get(x, h - 1) - self.get(x, h - 2)
                } else {
                    0.5 * (self.get(x, y + 1) - self.get(x, y - 1))
                };
            }
        }
        GradientField {
            dx: ScalarField::from_parts(w, h, dx),
            dy: ScalarField::from_parts(w, h, dy),
        }
    }

    /// Second central differences; border pixels copy the nearest interior
    /// value.
    pub fn hessian(&self) -> HessianField {
        let (w, h) = self.dims();
        let mut xx = vec![0.0; w * h];
        let mut xy = vec![0.0; w * h];
        let mut yy = vec![0.0; w * h];
        for y in 0..h {
            let yc = y.clamp(1, h - 2);
            for x in 0..w {
                let xc = x.clamp(1, w - 2);
                let c = self.get(xc, yc);
                let i = y * w + x;
                xx[i] = self.get(xc + 1, yc) - 2.0 * c + self.get(xc - 1, yc);
                yy[i] = self.get(xc, yc + 1) - 2.0 * c + self.get(xc, yc - 1);
                xy[i] = 0.25
                    * (self.get(xc + 1, yc + 1) - self.get(xc + 1, yc - 1)
                        - self.get(xc - 1, yc + 1)
                        + self.get(xc - 1, yc - 1));
            }
        }
        HessianField {
            xx: ScalarField::from_parts(w, h, xx),
            xy: ScalarField::from_parts(w, h, xy),
            yy: ScalarField::from_parts(w, h, yy),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub dx: ScalarField,
    pub dy: ScalarField,
}

impl GradientField {
    #[inline]
    pub fn at(&self, i: usize) -> [f64; 2] {
        [self.dx.values[i], self.dy.values[i]]
    }

    pub fn magnitude(&self) -> ScalarField {
        let values = self
            .dx
            .values
            .iter()
            .zip(&self.dy.values)
            .map(|(a, b)| a.hypot(*b))
            .collect();
        ScalarField::from_parts(self.dx.width, self.dx.height, values)
    }
}

/// Symmetric Hessian; the mixed derivative is stored once.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianField {
    pub xx: ScalarField,
    pub xy: ScalarField,
    pub yy: ScalarField,
}

impl HessianField {
    #[inline]
    pub fn at(&self, i: usize) -> [[f64; 2]; 2] {
        let xy = self.xy.values[i];
        [[self.xx.values[i], xy], [xy, self.yy.values[i]]]
    }
}

/// C² regularized Heaviside of half-width `eps`.
#[inline]
pub fn heaviside(t: f64, eps: f64) -> f64 {
    if t <= -eps {
        0.0
    } else if t >= eps {
        1.0
    } else {
        0.5 * (1.0 + t / eps + (PI * t / eps).sin() / PI)
    }
}

/// Derivative of [`heaviside`].
#[inline]
pub fn dirac(t: f64, eps: f64) -> f64 {
    if t.abs() >= eps {
        0.0
    } else {
        0.5 / eps * (1.0 + (PI * t / eps).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `levelset < 0`
    Inside,
    /// `levelset > 0`
    Outside,
}

/// Sum of `integrand · H_ε(∓levelset)` over the grid.
pub fn region_integral(
    integrand: &ScalarField,
    levelset: &ScalarField,
    side: Side,
    eps: f64,
) -> Result<f64> {
    integrand.ensure_same_dims(levelset)?;
    let sign = match side {
        Side::Inside => -1.0,
        Side::Outside => 1.0,
    };
    Ok(integrand
        .values
        .iter()
        .zip(&levelset.values)
        .map(|(f, l)| f * heaviside(sign * l, eps))
        .sum())
}

/// Line integral of `integrand` along the zero level set, evaluated as the
/// pixel sum of `integrand · δ_ε(levelset) · |∇levelset|`.
pub fn curve_integral(integrand: &ScalarField, levelset: &ScalarField, eps: f64) -> Result<f64> {
    integrand.ensure_same_dims(levelset)?;
    let grad = levelset.gradient();
    curve_integral_with_gradient(integrand.values(), levelset, &grad, eps)
}

pub(crate) fn curve_integral_with_gradient(
    integrand: &[f64],
    levelset: &ScalarField,
    grad: &GradientField,
    eps: f64,
) -> Result<f64> {
    if integrand.len() != levelset.len() {
        return Err(Error::invalid("curve integrand length does not match grid"));
    }
    let mut sum = 0.0;
    for (i, (&f, &l)) in integrand.iter().zip(levelset.values()).enumerate() {
        let d = dirac(l, eps);
        if d != 0.0 {
            let [gx, gy] = grad.at(i);
            sum += f * d * gx.hypot(gy);
        }
    }
    Ok(sum)
}
