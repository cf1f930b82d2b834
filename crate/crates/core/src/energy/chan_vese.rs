use super::{EnergyTerms, Params, SegmentationResult, STALL_ITERATIONS};
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::levelset::{mask_from_levelset, signed_distance, BinaryMask};
use crate::photogeom::{Profile, MIN_BINS};
use crate::pose::Pose;

/// Two-phase piecewise-constant segmentation without a prior.
#[derive(Clone, Debug, PartialEq)]
pub struct ChanVeseConfig {
    /// Weight of the contour-length term, in squared intensity per pixel.
    pub curvature_weight: f64,
    pub max_iterations: usize,
    pub energy_tolerance: f64,
    /// Largest level-set change per iteration, in pixels.
    pub max_step: f64,
    /// Reset the level set to a signed distance field this often.
    pub reinit_interval: usize,
    pub dirac_width: f64,
}

impl Default for ChanVeseConfig {
    fn default() -> Self {
        Self {
            curvature_weight: 500.0,
            max_iterations: 2000,
            energy_tolerance: 1e-6,
            max_step: 0.5,
            reinit_interval: 50,
            dirac_width: crate::grid::DEFAULT_SMOOTHING_WIDTH,
        }
    }
}

impl ChanVeseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.curvature_weight.is_finite() && self.curvature_weight >= 0.0) {
            return Err(Error::invalid("curvature weight must be non-negative"));
        }
        if !(self.max_step.is_finite() && self.max_step > 0.0) {
            return Err(Error::invalid("max step must be positive"));
        }
        if !(self.dirac_width.is_finite() && self.dirac_width > 0.0) {
            return Err(Error::invalid("dirac width must be positive"));
        }
        if self.reinit_interval == 0 {
            return Err(Error::invalid("reinitialization interval must be positive"));
        }
        Ok(())
    }
}

// The two-phase flow uses the everywhere-positive regularization so that
// contours can form away from the current one.
fn smooth_step(t: f64, eps: f64) -> f64 {
    0.5 + (t / eps).atan() / std::f64::consts::PI
}

fn smooth_delta(t: f64, eps: f64) -> f64 {
    eps / (std::f64::consts::PI * (eps * eps + t * t))
}

fn means(image: &ScalarField, phi: &[f64], eps: f64) -> (f64, f64) {
    let (mut si, mut wi, mut so, mut wo) = (0.0, 0.0, 0.0, 0.0);
    for (&i, &p) in image.values().iter().zip(phi) {
        let h = smooth_step(p, eps);
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

fn energy(
    image: &ScalarField,
    phi: &ScalarField,
    c: (f64, f64),
    config: &ChanVeseConfig,
) -> EnergyTerms {
    let eps = config.dirac_width;
    let grad = phi.gradient();
    let (mut e_in, mut e_out) = (0.0, 0.0);
    for (k, (&i, &p)) in image.values().iter().zip(phi.values()).enumerate() {
        let [gx, gy] = grad.at(k);
        let length = config.curvature_weight * smooth_delta(p, eps) * gx.hypot(gy);
        // the length term is split evenly between the two phases
        e_in += smooth_step(-p, eps) * (i - c.0).powi(2) + 0.5 * length;
        e_out += smooth_step(p, eps) * (i - c.1).powi(2) + 0.5 * length;
    }
    EnergyTerms {
        e_in,
        e_out,
        total: e_in + e_out,
    }
}

/// `δ(φ)[(I − c_in)² − (I − c_out)² + μκ]`
fn force(image: &ScalarField, phi: &ScalarField, c: (f64, f64), config: &ChanVeseConfig) -> Vec<f64> {
    let eps = config.dirac_width;
    let grad = phi.gradient();
    let hess = phi.hessian();
    image
        .values()
        .iter()
        .zip(phi.values())
        .enumerate()
        .map(|(k, (&i, &p))| {
            let d = smooth_delta(p, eps);
            if d == 0.0 {
                return 0.0;
            }
            let [gx, gy] = grad.at(k);
            let [[xx, xy], [_, yy]] = hess.at(k);
            let g2 = gx * gx + gy * gy;
            let kappa = (xx * gy * gy - 2.0 * gx * gy * xy + yy * gx * gx) / (g2 * g2.sqrt() + 1e-8);
            d * ((i - c.0).powi(2) - (i - c.1).powi(2) + config.curvature_weight * kappa)
        })
        .collect()
}

fn finish(
    phi: ScalarField,
    c: (f64, f64),
    trace: Vec<EnergyTerms>,
    converged: bool,
    iterations: usize,
) -> Result<SegmentationResult> {
    Ok(SegmentationResult {
        params: Params::default(),
        pose: Pose::identity(),
        u_out: c.1,
        profile: Some(Profile::constant(c.0, MIN_BINS)?),
        mask: mask_from_levelset(&phi),
        levelset: phi,
        trace,
        converged,
        iterations,
    })
}

/// Converged: falls back to an empty or full region when that is no worse
/// than the split found.
fn settle(
    image: &ScalarField,
    phi: ScalarField,
    c: (f64, f64),
    mut trace: Vec<EnergyTerms>,
    iterations: usize,
    config: &ChanVeseConfig,
) -> Result<SegmentationResult> {
    let current = *trace.last().expect("trace starts with the initial energy");
    let (w, h) = image.dims();
    let far = (w as f64).hypot(h as f64);
    let mut best: Option<(ScalarField, (f64, f64), EnergyTerms)> = None;
    for level in [far, -far] {
        let flat = ScalarField::filled(w, h, level)?;
        let fc = means(image, flat.values(), config.dirac_width);
        let e = energy(image, &flat, fc, config);
        if e.total <= current.total && best.as_ref().is_none_or(|b| e.total < b.2.total) {
            best = Some((flat, fc, e));
        }
    }
    match best {
        Some((flat, fc, e)) => {
            trace.push(e);
            finish(flat, fc, trace, true, iterations)
        }
        None => finish(phi, c, trace, true, iterations),
    }
}

fn is_trivial(phi: &ScalarField) -> bool {
    let inside = phi.values().iter().filter(|&&v| v < 0.0).count();
    inside == 0 || inside == phi.len()
}

/// Level-set evolution of the two-phase piecewise-constant energy with a
/// length penalty, started from `init`. If the contour vanishes (e.g. on a
/// constant image) the trivial mask is returned as a converged result.
pub fn chan_vese(
    image: &ScalarField,
    init: &BinaryMask,
    config: &ChanVeseConfig,
) -> Result<SegmentationResult> {
    config.validate()?;
    if init.dims() != image.dims() {
        return Err(Error::DimensionMismatch {
            expected: image.dims(),
            found: init.dims(),
        });
    }
    if image.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image"));
    }
    let (w, h) = image.dims();
    let eps = config.dirac_width;
    let mut phi = signed_distance(init)?.field;
    let mut c = means(image, phi.values(), eps);
    let mut current = energy(image, &phi, c, config);
    let tolerance = config.energy_tolerance * current.total.abs();
    let mut trace = vec![current];
    let mut stalled = 0;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let fresh = means(image, phi.values(), eps);
        let e = energy(image, &phi, fresh, config);
        if e.total <= current.total {
            c = fresh;
            current = e;
        }
        if iterations % config.reinit_interval == 0 {
            let mask = mask_from_levelset(&phi);
            if !mask.is_degenerate() {
                let reset = signed_distance(&mask)?.field;
                let e = energy(image, &reset, c, config);
                if e.total <= current.total {
                    phi = reset;
                    current = e;
                }
            }
        }

        let f = force(image, &phi, c, config);
        let peak = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            trace.push(current);
            return settle(image, phi, c, trace, iterations, config);
        }
        let mut dt = config.max_step / peak;
        let mut accepted = None;
        for _ in 0..=20 {
            let values: Vec<f64> = phi.values().iter().zip(&f).map(|(p, d)| p + dt * d).collect();
            let next = ScalarField::new(w, h, values)?;
            let e = energy(image, &next, c, config);
            if e.total < current.total {
                accepted = Some((next, e));
                break;
            }
            dt *= 0.5;
        }
        let Some((next, e)) = accepted else {
            trace.push(current);
            return settle(image, phi, c, trace, iterations, config);
        };
        let decrease = current.total - e.total;
        phi = next;
        current = e;
        trace.push(current);
        if is_trivial(&phi) {
            return settle(image, phi, c, trace, iterations, config);
        }
        if decrease < tolerance {
            stalled += 1;
            if stalled >= STALL_ITERATIONS {
                return settle(image, phi, c, trace, iterations, config);
            }
        } else {
            stalled = 0;
        }
    }
    finish(phi, c, trace, false, iterations)
}
