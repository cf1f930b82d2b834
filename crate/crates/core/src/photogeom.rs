//! Photo-geometric profiles: mean image intensity along the iso-contours of
//! an object's signed distance field, as a function of the normalized level
//! `τ ∈ [−1, 0]` (`τ = −1` at the deepest interior point, `τ = 0` on the
//! boundary).

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::levelset::SignedDistanceField;

pub const DEFAULT_BINS: usize = 32;
pub const MIN_BINS: usize = 8;

/// How a profile is extended outside `[−1, 0]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extension {
    /// Hold the end values.
    Clamp,
    /// Zero outside the domain (derivatives of a clamped profile).
    Zero,
}

/// A function sampled at `n` uniformly spaced nodes spanning `[−1, 0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    values: Vec<f64>,
    extension: Extension,
}

impl Profile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_extension(values, Extension::Clamp)
    }

    pub fn with_extension(values: Vec<f64>, extension: Extension) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::invalid("a profile needs at least 3 nodes"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("profile"));
        }
        Ok(Self { values, extension })
    }

    pub fn constant(value: f64, nodes: usize) -> Result<Self> {
        Self::new(vec![value; nodes])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn extension(&self) -> Extension {
        self.extension
    }

    /// Node spacing in τ.
    pub fn spacing(&self) -> f64 {
        1.0 / (self.values.len() - 1) as f64
    }

    pub fn tau_grid(&self) -> Vec<f64> {
        tau_grid(self.values.len())
    }

    /// Linear interpolation between nodes, extended per [`Extension`].
    #[inline]
    pub fn evaluate(&self, tau: f64) -> f64 {
        let n = self.values.len();
        if !(-1.0..=0.0).contains(&tau) {
            return match self.extension {
                Extension::Zero => 0.0,
                Extension::Clamp if tau < -1.0 => self.values[0],
                Extension::Clamp => self.values[n - 1],
            };
        }
        let s = (tau + 1.0) * (n - 1) as f64;
        let i = (s.floor() as usize).min(n - 2);
        let f = s - i as f64;
        (1.0 - f) * self.values[i] + f * self.values[i + 1]
    }

    /// Slope of the linear interpolant at `tau` (zero outside `[−1, 0]`).
    #[inline]
    pub fn slope(&self, tau: f64) -> f64 {
        let n = self.values.len();
        if !(-1.0..=0.0).contains(&tau) {
            return 0.0;
        }
        let s = (tau + 1.0) * (n - 1) as f64;
        let i = (s.floor() as usize).min(n - 2);
        (self.values[i + 1] - self.values[i]) * (n - 1) as f64
    }

    /// Finite-difference derivative in τ: central in the interior,
    /// one-sided at the ends, zero outside the domain.
    pub fn derivative(&self, order: u8) -> Result<Profile> {
        let v = &self.values;
        let n = v.len();
        let h = self.spacing();
        let out = match order {
            1 => (0..n)
                .map(|i| {
                    if i == 0 {
                        (v[1] - v[0]) / h
                    } else if i == n - 1 {
                        (v[n - 1] - v[n - 2]) / h
                    } else {
                        (v[i + 1] - v[i - 1]) / (2.0 * h)
                    }
                })
                .collect(),
            2 => (0..n)
                .map(|i| {
                    let c = i.clamp(1, n - 2);
                    (v[c + 1] - 2.0 * v[c] + v[c - 1]) / (h * h)
                })
                .collect(),
            _ => return Err(Error::invalid(format!("derivative order {order} not supported"))),
        };
        Profile::with_extension(out, Extension::Zero)
    }

    pub fn dot(&self, other: &Profile) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

pub fn tau_grid(nodes: usize) -> Vec<f64> {
    let h = 1.0 / (nodes - 1) as f64;
    (0..nodes)
        .map(|i| if i == nodes - 1 { 0.0 } else { -1.0 + i as f64 * h })
        .collect()
}

/// A profile extracted from an image, plus the depth `ψ_min` of the object
/// it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotoGeomProfile {
    pub profile: Profile,
    pub psi_min: f64,
}

impl PhotoGeomProfile {
    pub fn samples(&self) -> &[f64] {
        self.profile.values()
    }
}

/// Mean intensity per level band of `sdf` over `[ψ_min, 0]`, weighted by
/// `|∇ψ|` (co-area formula), reported on a `bins`-node uniform τ grid.
pub fn extract_profile(
    image: &ScalarField,
    sdf: &SignedDistanceField,
    bins: usize,
) -> Result<PhotoGeomProfile> {
    image.ensure_same_dims(&sdf.field)?;
    if bins < MIN_BINS {
        return Err(Error::invalid(format!("need at least {MIN_BINS} bins, got {bins}")));
    }
    let psi_min = sdf.min_value;
    if psi_min >= 0.0 {
        return Err(Error::DegenerateShape("signed distance field has no interior".into()));
    }
    let depth = -psi_min;
    let width = depth / bins as f64;
    let grad = sdf.field.gradient().magnitude();

    let mut num = vec![0.0; bins];
    let mut den = vec![0.0; bins];
    for ((&psi, &i), &g) in sdf.field.values().iter().zip(image.values()).zip(grad.values()) {
        if psi >= 0.0 {
            continue;
        }
        let k = (((psi - psi_min) / width).floor() as usize).min(bins - 1);
        num[k] += i * g;
        den[k] += g;
    }

    let filled: Vec<Option<f64>> = num
        .iter()
        .zip(&den)
        .map(|(&n, &d)| (d > 0.0).then(|| n / d))
        .collect();
    let empty = filled.iter().filter(|v| v.is_none()).count();
    if 2 * empty > bins {
        return Err(Error::ProfileResolution { empty, bins });
    }
    let centers = fill_gaps(&filled);

    // bin k is centered at s = k in units of bins, node t sits at
    // s = (t + 1) B − ½; inner nodes interpolate, the two end nodes
    // extrapolate a line fitted to the outer END_FIT bins
    let samples = tau_grid(bins)
        .into_iter()
        .map(|t| {
            let s = (t + 1.0) * bins as f64 - 0.5;
            if s < 0.0 {
                line_at(&centers[..END_FIT], 0.0, s)
            } else if s > (bins - 1) as f64 {
                line_at(&centers[bins - END_FIT..], (bins - END_FIT) as f64, s)
            } else {
                let k = (s.floor() as usize).min(bins - 2);
                let f = s - k as f64;
                (1.0 - f) * centers[k] + f * centers[k + 1]
            }
        })
        .collect();

    Ok(PhotoGeomProfile {
        profile: Profile::new(samples)?,
        psi_min,
    })
}

const END_FIT: usize = 4;

/// Least-squares line through `values` at positions `first, first + 1, …`,
/// evaluated at `s`.
fn line_at(values: &[f64], first: f64, s: f64) -> f64 {
    let n = values.len() as f64;
    let mean_x = first + (n - 1.0) / 2.0;
    let mean_y = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (j, v) in values.iter().enumerate() {
        let dx = first + j as f64 - mean_x;
        sxy += dx * (v - mean_y);
        sxx += dx * dx;
    }
    mean_y + sxy / sxx * (s - mean_x)
}

/// Linear interpolation across missing entries; leading and trailing gaps
/// take the nearest known value.
fn fill_gaps(values: &[Option<f64>]) -> Vec<f64> {
    let known: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (i, x)))
        .collect();
    (0..values.len())
        .map(|i| {
            if let Some(v) = values[i] {
                return v;
            }
            let next = known.iter().position(|&(j, _)| j > i);
            match next {
                None => known.last().expect("some bins are filled").1,
                Some(0) => known[0].1,
                Some(p) => {
                    let (j0, v0) = known[p - 1];
                    let (j1, v1) = known[p];
                    let f = (i - j0) as f64 / (j1 - j0) as f64;
                    v0 + f * (v1 - v0)
                }
            }
        })
        .collect()
}
