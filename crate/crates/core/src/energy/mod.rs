//! The recognition-segmentation energy, its analytic gradients, the
//! descent optimizer and the Chan–Vese baselines.
//!
//! Inside the estimated region `R̂ = {Φ̂ < 0}` the image is compared with the
//! appearance model evaluated along the level sets of `Φ̂`; outside it is
//! compared with the constant `u_out`:
//!
//! ```text
//! E_in  = Σ H(−Φ̂) [ α (I − F(Φ̂))² + β (F′(Φ̂) |∇Φ̂|)² ]
//! E_out = Σ H(Φ̂)  α (I − u_out)²
//! ```
//!
//! `F` is looked up at `τ = Φ̂ / ν`, where the normalizer `ν = |min Φ̂|` and
//! `u_out` are held fixed while a gradient is taken (see [`Frozen`]). `F′`
//! is read at `τ` clamped to `[−1, 0]`, so the regularizer carries its
//! boundary value `F′(0)` across the smoothed contour band.

mod chan_vese;
mod optimize;

pub use chan_vese::{chan_vese, ChanVeseConfig};
pub use optimize::{chan_vese_shape, minimize, SegmentationResult};
pub use crate::pose::{warp_field as warp_model_field, Pose};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{dirac, heaviside, region_integral, GradientField, ScalarField, Side};
use crate::models::{AppearanceModel, CoupledModel, ShapeModel};
use crate::photogeom::Profile;
use crate::pose::{warp_field, POSE_DIM};

/// Regions smaller than this many pixels count as collapsed.
pub const MIN_REGION_AREA: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Trust radius for the translation pair, in pixels.
    pub step_translation: f64,
    /// Trust radius for the rotation, in radians.
    pub step_rotation: f64,
    pub step_scale: f64,
    /// Trust radius for shape weights, as a fraction of the largest
    /// singular value of the model.
    pub step_shape: f64,
    /// Same for appearance weights.
    pub step_appearance: f64,
    pub max_iterations: usize,
    /// Stop once the per-iteration decrease stays below this fraction of
    /// the initial energy for [`STALL_ITERATIONS`] iterations.
    pub energy_tolerance: f64,
    pub dirac_width: f64,
    /// Weights are kept within `weight_bound · σᵢ`.
    pub weight_bound: f64,
}

/// Consecutive small-change iterations that end a run.
pub const STALL_ITERATIONS: usize = 10;

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            step_translation: 1.0,
            step_rotation: 0.02,
            step_scale: 0.02,
            step_shape: 0.05,
            step_appearance: 0.05,
            max_iterations: 2000,
            energy_tolerance: 1e-6,
            dirac_width: crate::grid::DEFAULT_SMOOTHING_WIDTH,
            weight_bound: 3.0,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.alpha) || !finite_nonneg(self.beta) {
            return Err(Error::invalid("alpha and beta must be finite and non-negative"));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::invalid("at least one of alpha, beta must be positive"));
        }
        let steps = [
            self.step_translation,
            self.step_rotation,
            self.step_scale,
            self.step_shape,
            self.step_appearance,
        ];
        if steps.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("step sizes must be positive"));
        }
        if !(self.dirac_width.is_finite() && self.dirac_width > 0.0) {
            return Err(Error::invalid("dirac width must be positive"));
        }
        if !(self.energy_tolerance.is_finite() && self.energy_tolerance >= 0.0) {
            return Err(Error::invalid("energy tolerance must be non-negative"));
        }
        if !(self.weight_bound.is_finite() && self.weight_bound > 0.0) {
            return Err(Error::invalid("weight bound must be positive"));
        }
        Ok(())
    }
}

/// The priors an energy is built from.
#[derive(Clone, Copy, Debug)]
pub enum Prior<'a> {
    /// Independent shape and appearance models (E-SAd).
    Decoupled {
        shape: &'a ShapeModel,
        appearance: &'a AppearanceModel,
    },
    /// One weight vector drives both parts (E-SAc).
    Coupled(&'a CoupledModel),
    /// Shape model with a constant interior intensity (CV-S). `None` means
    /// the interior mean is re-estimated every iteration.
    ShapeOnly {
        shape: &'a ShapeModel,
        inside_mean: Option<f64>,
    },
}

impl<'a> Prior<'a> {
    pub fn shape_dims(&self) -> (usize, usize) {
        match self {
            Prior::Decoupled { shape, .. } | Prior::ShapeOnly { shape, .. } => shape.dims(),
            Prior::Coupled(m) => m.dims(),
        }
    }

    fn shape_components(&self) -> &'a [ScalarField] {
        match *self {
            Prior::Decoupled { shape, .. } | Prior::ShapeOnly { shape, .. } => &shape.eigenshapes,
            Prior::Coupled(m) => &m.shape_components,
        }
    }

    fn appearance_components(&self) -> &'a [Profile] {
        match *self {
            Prior::Decoupled { appearance, .. } => &appearance.eigenprofiles,
            Prior::Coupled(m) => &m.appearance_components,
            Prior::ShapeOnly { .. } => &[],
        }
    }

    /// Singular values bounding `w`.
    pub fn shape_sigmas(&self) -> &'a [f64] {
        match *self {
            Prior::Decoupled { shape, .. } | Prior::ShapeOnly { shape, .. } => {
                &shape.singular_values
            }
            Prior::Coupled(m) => &m.singular_values,
        }
    }

    /// Singular values bounding `v` (empty in coupled and shape-only mode).
    pub fn appearance_sigmas(&self) -> &'a [f64] {
        match *self {
            Prior::Decoupled { appearance, .. } => &appearance.singular_values,
            _ => &[],
        }
    }

    pub fn is_coupled(&self) -> bool {
        matches!(self, Prior::Coupled(_))
    }

    /// Zero weights of the right lengths.
    pub fn zero_params(&self) -> Params {
        Params {
            w: vec![0.0; self.shape_components().len()],
            v: vec![0.0; self.appearance_sigmas().len()],
        }
    }

    fn check(&self, params: &Params) -> Result<()> {
        let k = self.shape_components().len();
        let l = self.appearance_sigmas().len();
        if params.w.len() != k || params.v.len() != l {
            return Err(Error::invalid(format!(
                "expected {k} shape and {l} appearance weights, got {} and {}",
                params.w.len(),
                params.v.len()
            )));
        }
        if params.w.iter().chain(&params.v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model weights"));
        }
        Ok(())
    }

    /// `Φ(x; w)` on the training grid.
    pub fn shape_field(&self, params: &Params) -> Result<ScalarField> {
        match *self {
            Prior::Decoupled { shape, .. } | Prior::ShapeOnly { shape, .. } => {
                shape.evaluate(&params.w)
            }
            Prior::Coupled(m) => m.evaluate_shape(&params.w),
        }
    }

    /// `F(τ; v)`; for the shape-only prior, a constant profile at `u_in`.
    pub fn appearance_profile(&self, params: &Params, u_in: f64) -> Result<Profile> {
        match *self {
            Prior::Decoupled { appearance, .. } => appearance.evaluate(&params.v),
            Prior::Coupled(m) => m.evaluate_appearance(&params.w),
            Prior::ShapeOnly { .. } => Profile::constant(u_in, crate::photogeom::MIN_BINS),
        }
    }
}

/// Model weights: `w` for shape, `v` for appearance (empty when coupled).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyTerms {
    pub e_in: f64,
    pub e_out: f64,
    pub total: f64,
}

/// Quantities held constant while a gradient is evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frozen {
    pub u_out: f64,
    /// `ν` in `τ = Φ̂ / ν`.
    pub normalizer: f64,
    /// Interior mean for the shape-only prior.
    pub u_in: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradient {
    pub pose: [f64; POSE_DIM],
    pub shape: Vec<f64>,
    pub appearance: Vec<f64>,
}

impl Gradient {
    pub fn is_finite(&self) -> bool {
        self.pose.iter().chain(&self.shape).chain(&self.appearance).all(|v| v.is_finite())
    }
}

/// `Φ̂` together with everything the energy needs from it.
struct Scene {
    /// `Φ(w)` on the training grid.
    model: ScalarField,
    phi: ScalarField,
    grad: GradientField,
    f: Profile,
    f1: Profile,
}

fn scene(
    image: &ScalarField,
    prior: &Prior,
    params: &Params,
    pose: &Pose,
    frozen: &Frozen,
) -> Result<Scene> {
    prior.check(params)?;
    let model = prior.shape_field(params)?;
    let phi = warp_field(&model, pose, image.width(), image.height());
    let area = phi.values().iter().filter(|&&v| v < 0.0).count() as f64;
    if area < MIN_REGION_AREA {
        return Err(Error::DegenerateRegion { area });
    }
    let f = prior.appearance_profile(params, frozen.u_in)?;
    let f1 = f.derivative(1)?;
    Ok(Scene {
        grad: phi.gradient(),
        model,
        phi,
        f,
        f1,
    })
}

/// Smoothed interior and exterior means of `image` for level set `phi`.
fn region_means(image: &ScalarField, phi: &ScalarField, eps: f64) -> (f64, f64) {
    let (mut si, mut wi, mut so, mut wo) = (0.0, 0.0, 0.0, 0.0);
    for (&i, &p) in image.values().iter().zip(phi.values()) {
        let h = heaviside(p, eps);
        so += h * i;
        wo += h;
        si += (1.0 - h) * i;
        wi += 1.0 - h;
    }
    let mean = image.values().iter().sum::<f64>() / image.len() as f64;
    (
        if wi > 0.0 { si / wi } else { mean },
        if wo > 0.0 { so / wo } else { mean },
    )
}

/// Computes `u_out` (and the interior mean) in closed form and the τ
/// normalizer for the current parameters.
pub fn freeze(
    image: &ScalarField,
    prior: &Prior,
    params: &Params,
    pose: &Pose,
    config: &EnergyConfig,
) -> Result<Frozen> {
    prior.check(params)?;
    let phi = warp_field(&prior.shape_field(params)?, pose, image.width(), image.height());
    let area = phi.values().iter().filter(|&&v| v < 0.0).count() as f64;
    if area < MIN_REGION_AREA {
        return Err(Error::DegenerateRegion { area });
    }
    let (u_in, u_out) = region_means(image, &phi, config.dirac_width);
    let u_in = match prior {
        Prior::ShapeOnly {
            inside_mean: Some(u), ..
        } => *u,
        _ => u_in,
    };
    Ok(Frozen {
        u_out,
        normalizer: -phi.min(),
        u_in,
    })
}

/// Energy with `u_out`, the interior mean and the normalizer taken from
/// `frozen`.
pub fn energy_with(
    image: &ScalarField,
    prior: &Prior,
    params: &Params,
    pose: &Pose,
    frozen: &Frozen,
    config: &EnergyConfig,
) -> Result<EnergyTerms> {
    let s = scene(image, prior, params, pose, frozen)?;
    energy_of_scene(image, &s, frozen, config)
}

fn energy_of_scene(
    image: &ScalarField,
    s: &Scene,
    frozen: &Frozen,
    config: &EnergyConfig,
) -> Result<EnergyTerms> {
    let (alpha, beta) = (config.alpha, config.beta);
    let nu = frozen.normalizer;
    let inside: Vec<f64> = image
        .values()
        .iter()
        .zip(s.phi.values())
        .enumerate()
        .map(|(k, (&i, &p))| {
            let tau = p / nu;
            let g1 = s.f1.evaluate(tau.clamp(-1.0, 0.0)) / nu;
            let [gx, gy] = s.grad.at(k);
            alpha * (i - s.f.evaluate(tau)).powi(2) + beta * g1 * g1 * (gx * gx + gy * gy)
        })
        .collect();
    let (w, h) = image.dims();
    let outside = image.map(|i| alpha * (i - frozen.u_out).powi(2))?;
    let e_in = region_integral(
        &ScalarField::new(w, h, inside)?,
        &s.phi,
        Side::Inside,
        config.dirac_width,
    )?;
    let e_out = region_integral(&outside, &s.phi, Side::Outside, config.dirac_width)?;
    if !(e_in.is_finite() && e_out.is_finite()) {
        return Err(Error::NonFinite("energy"));
    }
    Ok(EnergyTerms {
        e_in,
        e_out,
        total: e_in + e_out,
    })
}

/// `(E_in, E_out, E)` for the given `u_out`, with the τ normalizer taken
/// from the current `Φ̂`.
pub fn compute_energy(
    image: &ScalarField,
    prior: &Prior,
    params: &Params,
    pose: &Pose,
    u_out: f64,
    config: &EnergyConfig,
) -> Result<EnergyTerms> {
    config.validate()?;
    let frozen = Frozen {
        u_out,
        ..freeze(image, prior, params, pose, config)?
    };
    energy_with(image, prior, params, pose, &frozen, config)
}

/// Full gradient of `E` with respect to pose, shape and appearance
/// parameters. In coupled mode `shape` already contains the appearance
/// contribution and `appearance` is empty.
pub fn gradient(
    image: &ScalarField,
    prior: &Prior,
    params: &Params,
    pose: &Pose,
    frozen: &Frozen,
    config: &EnergyConfig,
) -> Result<Gradient> {
    let s = scene(image, prior, params, pose, frozen)?;
    let (alpha, beta, eps) = (config.alpha, config.beta, config.dirac_width);
    let nu = frozen.normalizer;
    let n = image.len();

    // Every parameter a moves Φ̂ by some field D_a; the energy then changes
    // by Σ A·D_a + B·(∇Φ̂ · ∇D_a). Slopes are those of the interpolated
    // profiles, so this is the exact derivative of the discretized energy.
    let mut coef_a = vec![0.0; n];
    let mut coef_b = vec![0.0; n];
    let mut residual = vec![0.0; n];
    let mut slope = vec![0.0; n];
    for k in 0..n {
        let (i, p) = (image.values()[k], s.phi.values()[k]);
        let tau = p / nu;
        let g = s.f.evaluate(tau);
        let dg = s.f.slope(tau) / nu;
        let g1 = s.f1.evaluate(tau.clamp(-1.0, 0.0)) / nu;
        let dg1 = s.f1.slope(tau) / (nu * nu);
        let [gx, gy] = s.grad.at(k);
        let grad2 = gx * gx + gy * gy;
        let e_in = alpha * (i - g).powi(2) + beta * g1 * g1 * grad2;
        let e_out = alpha * (i - frozen.u_out).powi(2);
        let h_in = heaviside(-p, eps);
        coef_a[k] = dirac(p, eps) * (e_out - e_in)
            + h_in * 2.0 * (beta * g1 * dg1 * grad2 - alpha * (i - g) * dg);
        coef_b[k] = 2.0 * beta * g1 * g1 * h_in;
        residual[k] = h_in * 2.0 * alpha * (g - i);
        slope[k] = h_in * 2.0 * beta * g1 * grad2 / nu;
    }

    let pose_grad = pose_gradient(&s, pose, &coef_a, &coef_b);

    let (w, h) = image.dims();
    let along_field = |d: &ScalarField| -> f64 {
        let dg = d.gradient();
        (0..n)
            .map(|k| {
                let [gx, gy] = s.grad.at(k);
                let [dx, dy] = dg.at(k);
                coef_a[k] * d.values()[k] + coef_b[k] * (gx * dx + gy * dy)
            })
            .sum()
    };
    let mut shape: Vec<f64> = prior
        .shape_components()
        .par_iter()
        .map(|c| along_field(&warp_field(c, pose, w, h)))
        .collect();

    let phi = s.phi.values();
    let along_profile = |c: &Profile| -> Result<f64> {
        let c1 = c.derivative(1)?;
        Ok((0..n)
            .map(|k| {
                let tau = phi[k] / nu;
                residual[k] * c.evaluate(tau) + slope[k] * c1.evaluate(tau.clamp(-1.0, 0.0))
            })
            .sum())
    };
    let app: Vec<f64> = prior
        .appearance_components()
        .iter()
        .map(along_profile)
        .collect::<Result<_>>()?;

    let appearance = if prior.is_coupled() {
        for (s, a) in shape.iter_mut().zip(&app) {
            *s += a;
        }
        Vec::new()
    } else {
        app
    };
    let g = Gradient {
        pose: pose_grad,
        shape,
        appearance,
    };
    if !g.is_finite() {
        return Err(Error::NonFinite("energy gradient"));
    }
    Ok(g)
}

/// Pose derivatives. Moving `p_i` moves `Φ̂(x̂) = Φ(g⁻¹(x̂))` by
/// `D = −∇ₓΦ · [∂g/∂x]⁻¹ ∂g/∂p_i`, i.e. `−∇Φ̂ · ∂g/∂p_i`; `∇D` is taken on
/// the grid like `∇Φ̂` itself.
fn pose_gradient(s: &Scene, pose: &Pose, coef_a: &[f64], coef_b: &[f64]) -> [f64; POSE_DIM] {
    let (w, h) = s.phi.dims();
    let c = [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0];
    let src = s.model.center();
    let jinv = pose.inverse_jacobian();
    let mut velocity = vec![vec![0.0; w * h]; POSE_DIM];
    for y in 0..h {
        for x in 0..w {
            let k = y * w + x;
            let xt = pose.apply_inverse([x as f64 - c[0], y as f64 - c[1]]);
            let (_, gm) = s
                .model
                .sample_clamped_with_gradient(xt[0] + src[0], xt[1] + src[1]);
            for (i, v) in velocity.iter_mut().enumerate() {
                let dx = matvec(jinv, pose.d_param(i, xt));
                v[k] = -(gm[0] * dx[0] + gm[1] * dx[1]);
            }
        }
    }
    let mut out = [0.0; POSE_DIM];
    for (o, v) in out.iter_mut().zip(velocity) {
        let d = ScalarField::from_parts(w, h, v);
        let dg = d.gradient();
        *o = (0..w * h)
            .map(|k| {
                let [gx, gy] = s.grad.at(k);
                let [dx, dy] = dg.at(k);
                coef_a[k] * d.values()[k] + coef_b[k] * (gx * dx + gy * dy)
            })
            .sum();
    }
    out
}

#[inline]
fn matvec(a: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

/// `∂E/∂p` (translation x, translation y, rotation, scale).
pub fn grad_pose(
    image: &ScalarField,
    prior: &Prior,
    params: &Params,
    pose: &Pose,
    frozen: &Frozen,
    config: &EnergyConfig,
) -> Result<[f64; POSE_DIM]> {
    Ok(gradient(image, prior, params, pose, frozen, config)?.pose)
}

/// `∂E/∂w`; in coupled mode this is the sum of the shape and appearance
/// contributions.
pub fn grad_shape(
    image: &ScalarField,
    prior: &Prior,
    params: &Params,
    pose: &Pose,
    frozen: &Frozen,
    config: &EnergyConfig,
) -> Result<Vec<f64>> {
    Ok(gradient(image, prior, params, pose, frozen, config)?.shape)
}

/// `∂E/∂v` (decoupled mode only; empty otherwise).
pub fn grad_appearance(
    image: &ScalarField,
    prior: &Prior,
    params: &Params,
    pose: &Pose,
    frozen: &Frozen,
    config: &EnergyConfig,
) -> Result<Vec<f64>> {
    Ok(gradient(image, prior, params, pose, frozen, config)?.appearance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::{signed_distance, BinaryMask};
    use crate::models::{train_appearance, train_coupled, train_shape};
    use crate::photogeom::extract_profile;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const N: usize = 64;

    fn ellipse(a: f64, b: f64, cx: f64, cy: f64) -> BinaryMask {
        BinaryMask::from_fn(N, N, |x, y| {
            let dx = (x as f64 - cx) / a;
            let dy = (y as f64 - cy) / b;
            dx * dx + dy * dy < 1.0
        })
        .unwrap()
    }

    fn shaded(mask: &BinaryMask, seed: u64) -> ScalarField {
        let sdf = signed_distance(mask).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain: f64 = rng.random_range(3.0..5.0);
        ScalarField::from_fn(N, N, |x, y| {
            let d = sdf.field.get(x, y);
            if d < 0.0 {
                160.0 + gain * d + 20.0 * (0.3 * x as f64).sin()
            } else {
                90.0
            }
        })
        .unwrap()
    }

    struct Fixture {
        image: ScalarField,
        shape: ShapeModel,
        appearance: AppearanceModel,
        coupled: CoupledModel,
    }

    fn fixture(seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = (N as f64 - 1.0) / 2.0;
        let mut sdfs = Vec::new();
        let mut profiles = Vec::new();
        for j in 0..5 {
            let m = ellipse(rng.random_range(12.0..18.0), rng.random_range(9.0..14.0), c, c);
            let img = shaded(&m, seed * 31 + j);
            let sdf = signed_distance(&m).unwrap();
            profiles.push(extract_profile(&img, &sdf, 16).unwrap());
            sdfs.push(sdf);
        }
        let truth = ellipse(15.0, 11.0, c + 2.0, c - 1.5);
        let mut image = shaded(&truth, seed);
        let mut noisy = image.values().to_vec();
        for v in &mut noisy {
            *v += rng.random_range(-5.0..5.0);
        }
        image = ScalarField::new(N, N, noisy).unwrap();
        Fixture {
            image,
            shape: train_shape(&sdfs, 2).unwrap(),
            appearance: train_appearance(&profiles, 2).unwrap(),
            coupled: train_coupled(&sdfs, &profiles, 2, None).unwrap(),
        }
    }

    fn random_state(rng: &mut ChaCha8Rng, prior: &Prior) -> (Params, Pose) {
        let mut p = prior.zero_params();
        for (w, s) in p.w.iter_mut().zip(prior.shape_sigmas()) {
            *w = rng.random_range(-0.5..0.5) * s;
        }
        for (v, s) in p.v.iter_mut().zip(prior.appearance_sigmas()) {
            *v = rng.random_range(-0.5..0.5) * s;
        }
        let pose = Pose::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-0.2..0.2),
            rng.random_range(0.9..1.1),
        )
        .unwrap();
        (p, pose)
    }

    /// Central difference of the energy along `dir` with the frozen
    /// quantities held fixed.
    #[allow(clippy::too_many_arguments)]
    fn fd(
        image: &ScalarField,
        prior: &Prior,
        params: &Params,
        pose: &Pose,
        frozen: &Frozen,
        config: &EnergyConfig,
        dir: &Gradient,
        h: f64,
    ) -> f64 {
        let shift = |s: f64| {
            let mut p = params.clone();
            for (a, d) in p.w.iter_mut().zip(&dir.shape) {
                *a += s * d;
            }
            for (a, d) in p.v.iter_mut().zip(&dir.appearance) {
                *a += s * d;
            }
            let mut q = pose.to_array();
            for (a, d) in q.iter_mut().zip(&dir.pose) {
                *a += s * d;
            }
            energy_with(image, prior, &p, &Pose::from_array(q), frozen, config)
                .unwrap()
                .total
        };
        (shift(h) - shift(-h)) / (2.0 * h)
    }

    fn dot(g: &Gradient, d: &Gradient) -> f64 {
        let p: f64 = g.pose.iter().zip(&d.pose).map(|(a, b)| a * b).sum();
        let s: f64 = g.shape.iter().zip(&d.shape).map(|(a, b)| a * b).sum();
        let a: f64 = g.appearance.iter().zip(&d.appearance).map(|(a, b)| a * b).sum();
        p + s + a
    }

    fn direction(rng: &mut ChaCha8Rng, g: &Gradient, group: usize, prior: &Prior) -> Gradient {
        let mut d = Gradient {
            pose: [0.0; POSE_DIM],
            shape: vec![0.0; g.shape.len()],
            appearance: vec![0.0; g.appearance.len()],
        };
        match group {
            0 => {
                d.pose = [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.02..0.02),
                    rng.random_range(-0.02..0.02),
                ]
            }
            1 => {
                for (x, s) in d.shape.iter_mut().zip(prior.shape_sigmas()) {
                    *x = rng.random_range(-0.1..0.1) * s;
                }
            }
            _ => {
                for (x, s) in d.appearance.iter_mut().zip(prior.appearance_sigmas()) {
                    *x = rng.random_range(-0.1..0.1) * s;
                }
            }
        }
        d
    }

    #[test]
    fn gradients_match_finite_differences() {
        let config = EnergyConfig::default();
        let mut failures = [0usize; 3];
        let trials = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for t in 0..trials {
            let fx = fixture(t as u64 + 1);
            let prior = Prior::Decoupled {
                shape: &fx.shape,
                appearance: &fx.appearance,
            };
            let (params, pose) = random_state(&mut rng, &prior);
            let frozen = freeze(&fx.image, &prior, &params, &pose, &config).unwrap();
            let g = gradient(&fx.image, &prior, &params, &pose, &frozen, &config).unwrap();
            for group in 0..3 {
                let d = direction(&mut rng, &g, group, &prior);
                let analytic = dot(&g, &d);
                let numeric = fd(&fx.image, &prior, &params, &pose, &frozen, &config, &d, 1e-3);
                let rel = (analytic - numeric).abs() / numeric.abs().max(1e-9);
                eprintln!("trial {t} group {group}: {analytic:.6e} vs {numeric:.6e} ({rel:.3})");
                if rel > 0.05 {
                    failures[group] += 1;
                }
            }
        }
        assert!(failures.iter().all(|&f| f * 10 <= trials), "{failures:?}");
    }

    fn fixed(profile: Vec<f64>) -> AppearanceModel {
        AppearanceModel::fixed(Profile::new(profile).unwrap())
    }

    /// A single-shape model whose mean is `sdf` and which has no modes.
    fn rigid(sdf: ScalarField) -> ShapeModel {
        ShapeModel {
            mean: sdf,
            eigenshapes: Vec::new(),
            singular_values: Vec::new(),
        }
    }

    #[test]
    fn perfect_fit_leaves_only_the_heaviside_band() {
        // half-plane object: the smoothed band is short compared to the area
        let (w, h) = (256, 64);
        let mask = BinaryMask::from_fn(w, h, |x, _| x < 128).unwrap();
        let shape = rigid(signed_distance(&mask).unwrap().field);
        let appearance = fixed(vec![180.0; 8]);
        let prior = Prior::Decoupled {
            shape: &shape,
            appearance: &appearance,
        };
        let image = ScalarField::from_fn(w, h, |x, _| if x < 128 { 180.0 } else { 60.0 }).unwrap();
        let params = prior.zero_params();
        let config = EnergyConfig::default();
        let e = compute_energy(&image, &prior, &params, &Pose::identity(), 60.0, &config).unwrap();
        let mean = image.values().iter().sum::<f64>() / image.len() as f64;
        let naive: f64 = image.values().iter().map(|i| (i - mean).powi(2)).sum();
        assert!(e.total <= 0.01 * naive, "{} vs {naive}", e.total);
        assert!((e.total - e.e_in - e.e_out).abs() < 1e-9 * e.total);
    }

    #[test]
    fn constant_profile_without_regularizer_is_chan_vese() {
        let fx = fixture(3);
        let c = 137.0;
        let appearance = fixed(vec![c; 16]);
        let prior = Prior::Decoupled {
            shape: &fx.shape,
            appearance: &appearance,
        };
        let config = EnergyConfig {
            beta: 0.0,
            ..EnergyConfig::default()
        };
        let params = Params {
            w: vec![0.3 * fx.shape.singular_values[0], 0.0],
            v: Vec::new(),
        };
        let pose = Pose::new(1.5, -2.0, 0.1, 1.05).unwrap();
        let u_out = 91.0;
        let e = compute_energy(&fx.image, &prior, &params, &pose, u_out, &config).unwrap();

        // independent two-phase energy on the warped level set
        let model = fx.shape.evaluate(&params.w).unwrap();
        let c0 = (N as f64 - 1.0) / 2.0;
        let (mut e_in, mut e_out) = (0.0, 0.0);
        for y in 0..N {
            for x in 0..N {
                let src = pose.apply_inverse([x as f64 - c0, y as f64 - c0]);
                let (sx, sy) = (
                    (src[0] + c0).clamp(0.0, N as f64 - 1.0),
                    (src[1] + c0).clamp(0.0, N as f64 - 1.0),
                );
                let phi = model.sample_bilinear(sx, sy).unwrap();
                let i = fx.image.get(x, y);
                let t = (phi / 1.5).clamp(-1.0, 1.0);
                let hv = 0.5 * (1.0 + t + (std::f64::consts::PI * t).sin() / std::f64::consts::PI);
                e_in += (1.0 - hv) * (i - c).powi(2);
                e_out += hv * (i - u_out).powi(2);
            }
        }
        assert!((e.e_in - e_in).abs() <= 1e-9 * e_in, "{} vs {e_in}", e.e_in);
        assert!((e.e_out - e_out).abs() <= 1e-9 * e_out, "{} vs {e_out}", e.e_out);
    }

    #[test]
    fn flat_landscape_has_zero_gradient() {
        let fx = fixture(4);
        let appearance = fixed(vec![120.0; 16]);
        let prior = Prior::Decoupled {
            shape: &fx.shape,
            appearance: &appearance,
        };
        let image = ScalarField::filled(N, N, 120.0).unwrap();
        let config = EnergyConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (params, pose) = random_state(&mut rng, &prior);
        let frozen = freeze(&image, &prior, &params, &pose, &config).unwrap();
        assert!((frozen.u_out - 120.0).abs() < 1e-9);
        let e = energy_with(&image, &prior, &params, &pose, &frozen, &config).unwrap();
        assert!(e.total < 1e-12);
        let g = gradient(&image, &prior, &params, &pose, &frozen, &config).unwrap();
        for v in g.pose.iter().chain(&g.shape) {
            assert!(v.abs() <= 1e-6 * config.alpha, "{g:?}");
        }
    }

    #[test]
    fn appearance_gradient_vanishes_without_fidelity_on_flat_modes() {
        let fx = fixture(5);
        let appearance = AppearanceModel {
            mean: fx.appearance.mean.clone(),
            eigenprofiles: vec![Profile::constant(1.0, 16).unwrap(); 2],
            singular_values: vec![3.0, 2.0],
        };
        let prior = Prior::Decoupled {
            shape: &fx.shape,
            appearance: &appearance,
        };
        let config = EnergyConfig {
            alpha: 0.0,
            ..EnergyConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (params, pose) = random_state(&mut rng, &prior);
        let frozen = freeze(&fx.image, &prior, &params, &pose, &config).unwrap();
        let g = grad_appearance(&fx.image, &prior, &params, &pose, &frozen, &config).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn appearance_gradient_vanishes_on_an_exact_fit() {
        let fx = fixture(6);
        let prior = Prior::Decoupled {
            shape: &fx.shape,
            appearance: &fx.appearance,
        };
        let config = EnergyConfig {
            beta: 0.0,
            ..EnergyConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (params, pose) = random_state(&mut rng, &prior);
        let phi = warp_field(&prior.shape_field(&params).unwrap(), &pose, N, N);
        let nu = -phi.min();
        let f = prior.appearance_profile(&params, 0.0).unwrap();
        let image = phi.map(|p| f.evaluate(p / nu)).unwrap();
        let frozen = freeze(&image, &prior, &params, &pose, &config).unwrap();
        let g = grad_appearance(&image, &prior, &params, &pose, &frozen, &config).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-9), "{g:?}");
    }

    #[test]
    fn coupled_gradient_is_the_sum_of_the_decoupled_parts() {
        let fx = fixture(7);
        let coupled = Prior::Coupled(&fx.coupled);
        let shape = fx.coupled.shape_part();
        let appearance = fx.coupled.appearance_part();
        let split = Prior::Decoupled {
            shape: &shape,
            appearance: &appearance,
        };
        let config = EnergyConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (params, pose) = random_state(&mut rng, &coupled);
        let both = Params {
            w: params.w.clone(),
            v: params.w.clone(),
        };
        let frozen = freeze(&fx.image, &coupled, &params, &pose, &config).unwrap();
        let gc = gradient(&fx.image, &coupled, &params, &pose, &frozen, &config).unwrap();
        let gd = gradient(&fx.image, &split, &both, &pose, &frozen, &config).unwrap();
        assert!(gc.appearance.is_empty());
        for ((c, s), a) in gc.shape.iter().zip(&gd.shape).zip(&gd.appearance) {
            assert!((c - (s + a)).abs() <= 1e-12 * c.abs().max(1.0), "{c} vs {}", s + a);
        }
        assert_eq!(gc.pose, gd.pose);
        let ec = energy_with(&fx.image, &coupled, &params, &pose, &frozen, &config).unwrap();
        let ed = energy_with(&fx.image, &split, &both, &pose, &frozen, &config).unwrap();
        assert_eq!(ec, ed);
    }

    #[test]
    fn collapsed_region_is_an_error() {
        let fx = fixture(8);
        let prior = Prior::Decoupled {
            shape: &fx.shape,
            appearance: &fx.appearance,
        };
        let params = prior.zero_params();
        let far = Pose::new(500.0, 500.0, 0.0, 1.0).unwrap();
        let config = EnergyConfig::default();
        let err = freeze(&fx.image, &prior, &params, &far, &config).unwrap_err();
        assert!(matches!(err, Error::DegenerateRegion { .. }));
        assert!(err.is_degenerate());
        let bad = Params {
            w: vec![0.0],
            v: Vec::new(),
        };
        assert!(matches!(
            compute_energy(&fx.image, &prior, &bad, &Pose::identity(), 0.0, &config),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(EnergyConfig::default().validate().is_ok());
        let both_zero = EnergyConfig {
            alpha: 0.0,
            beta: 0.0,
            ..EnergyConfig::default()
        };
        assert!(both_zero.validate().is_err());
        let negative = EnergyConfig {
            step_shape: -1.0,
            ..EnergyConfig::default()
        };
        assert!(negative.validate().is_err());
    }
}
