use log::debug;

use super::{
    energy_with, freeze, gradient, EnergyConfig, EnergyTerms, Frozen, Params, Prior,
    STALL_ITERATIONS,
};
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::levelset::{mask_from_levelset, BinaryMask};
use crate::models::ShapeModel;
use crate::photogeom::Profile;
use crate::pose::{warp_field, Pose, POSE_DIM};

const MAX_HALVINGS: usize = 20;

#[derive(Clone, Debug)]
pub struct SegmentationResult {
    pub params: Params,
    pub pose: Pose,
    pub u_out: f64,
    /// Final appearance profile (constant for the Chan–Vese methods).
    pub profile: Option<Profile>,
    /// Final level set on the image grid.
    pub levelset: ScalarField,
    pub mask: BinaryMask,
    pub trace: Vec<EnergyTerms>,
    pub converged: bool,
    pub iterations: usize,
}

impl SegmentationResult {
    pub fn final_energy(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.total)
    }
}

/// Parameter groups, each with its own trust radius.
#[derive(Clone, Copy)]
enum Group {
    Translation,
    Rotation,
    Scale,
    Shape,
    Appearance,
}

const GROUPS: [Group; 5] = [
    Group::Translation,
    Group::Rotation,
    Group::Scale,
    Group::Shape,
    Group::Appearance,
];

fn group_of(g: &super::Gradient, group: Group) -> &[f64] {
    match group {
        Group::Translation => &g.pose[0..2],
        Group::Rotation => &g.pose[2..3],
        Group::Scale => &g.pose[3..4],
        Group::Shape => &g.shape,
        Group::Appearance => &g.appearance,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn largest(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

struct Stepper {
    radius: [f64; 5],
    /// Largest gradient norm seen so far per group.
    seen: [f64; 5],
}

impl Stepper {
    fn new(prior: &Prior, config: &EnergyConfig) -> Self {
        Self {
            radius: [
                config.step_translation,
                config.step_rotation,
                config.step_scale,
                config.step_shape * largest(prior.shape_sigmas()),
                config.step_appearance * largest(prior.appearance_sigmas()),
            ],
            seen: [0.0; 5],
        }
    }

    /// Descent step `−δt_g ∂E/∂a` per group, with `δt_g` chosen so that the
    /// steepest gradient met so far moves the group by its trust radius.
    fn direction(&mut self, g: &super::Gradient) -> super::Gradient {
        let mut step = super::Gradient {
            pose: [0.0; POSE_DIM],
            shape: vec![0.0; g.shape.len()],
            appearance: vec![0.0; g.appearance.len()],
        };
        for (k, &group) in GROUPS.iter().enumerate() {
            let gv = group_of(g, group);
            let n = norm(gv);
            self.seen[k] = self.seen[k].max(n);
            if n == 0.0 || self.radius[k] == 0.0 {
                continue;
            }
            let dt = self.radius[k] / self.seen[k];
            let out: &mut [f64] = match group {
                Group::Translation => &mut step.pose[0..2],
                Group::Rotation => &mut step.pose[2..3],
                Group::Scale => &mut step.pose[3..4],
                Group::Shape => &mut step.shape,
                Group::Appearance => &mut step.appearance,
            };
            for (o, x) in out.iter_mut().zip(gv) {
                *o = -dt * x;
            }
        }
        step
    }
}

fn clamp_weights(w: &mut [f64], sigmas: &[f64], bound: f64) {
    for (x, s) in w.iter_mut().zip(sigmas) {
        let b = bound * s;
        *x = x.clamp(-b, b);
    }
}

fn apply_step(
    prior: &Prior,
    params: &Params,
    pose: &Pose,
    step: &super::Gradient,
    scale: f64,
    config: &EnergyConfig,
) -> (Params, Pose) {
    let mut p = pose.to_array();
    for (a, d) in p.iter_mut().zip(&step.pose) {
        *a += scale * d;
    }
    let mut next = params.clone();
    for (a, d) in next.w.iter_mut().zip(&step.shape) {
        *a += scale * d;
    }
    for (a, d) in next.v.iter_mut().zip(&step.appearance) {
        *a += scale * d;
    }
    clamp_weights(&mut next.w, prior.shape_sigmas(), config.weight_bound);
    clamp_weights(&mut next.v, prior.appearance_sigmas(), config.weight_bound);
    (next, Pose::from_array(p).normalized())
}

/// Gradient descent on all parameter groups at once, with backtracking so
/// that every accepted step lowers the energy. `u_out` (and the τ
/// normalizer) are refreshed at the start of every iteration.
pub fn minimize(
    image: &ScalarField,
    prior: &Prior,
    init: (Params, Pose),
    config: &EnergyConfig,
) -> Result<SegmentationResult> {
    config.validate()?;
    if image.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image"));
    }
    let (mut params, pose0) = init;
    let mut pose = pose0.normalized();
    clamp_weights(&mut params.w, prior.shape_sigmas(), config.weight_bound);
    clamp_weights(&mut params.v, prior.appearance_sigmas(), config.weight_bound);

    let mut frozen = freeze(image, prior, &params, &pose, config)?;
    let mut current = energy_with(image, prior, &params, &pose, &frozen, config)?;
    let tolerance = config.energy_tolerance * current.total.abs();
    let mut trace = vec![current];
    let mut stepper = Stepper::new(prior, config);
    let mut multiplier = 1.0;
    let mut stalled = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        refresh(image, prior, &params, &pose, config, &mut frozen, &mut current)?;

        let g = gradient(image, prior, &params, &pose, &frozen, config)?;
        let step = stepper.direction(&g);

        let mut accepted = None;
        let mut scale = multiplier;
        for halvings in 0..=MAX_HALVINGS {
            let (p, q) = apply_step(prior, &params, &pose, &step, scale, config);
            match energy_with(image, prior, &p, &q, &frozen, config) {
                Ok(e) if e.total < current.total => {
                    accepted = Some((p, q, e, halvings));
                    break;
                }
                Ok(_) | Err(Error::DegenerateRegion { .. }) => scale *= 0.5,
                Err(e) => return Err(e),
            }
        }

        let decrease = match accepted {
            Some((p, q, e, halvings)) => {
                let d = current.total - e.total;
                params = p;
                pose = q;
                current = e;
                multiplier = (scale * if halvings == 0 { 1.25 } else { 2.0 }).min(1.0);
                d
            }
            None => {
                debug!("no descent step found at iteration {iterations}");
                trace.push(current);
                converged = true;
                break;
            }
        };
        trace.push(current);
        if decrease < tolerance {
            stalled += 1;
            if stalled >= STALL_ITERATIONS {
                converged = true;
                break;
            }
        } else {
            stalled = 0;
        }
    }

    let (w, h) = image.dims();
    let levelset = warp_field(&prior.shape_field(&params)?, &pose, w, h);
    Ok(SegmentationResult {
        profile: Some(prior.appearance_profile(&params, frozen.u_in)?),
        mask: mask_from_levelset(&levelset),
        levelset,
        params,
        pose,
        u_out: frozen.u_out,
        trace,
        converged,
        iterations,
    })
}

/// Re-estimates the frozen quantities, keeping only changes that do not
/// raise the energy.
fn refresh(
    image: &ScalarField,
    prior: &Prior,
    params: &Params,
    pose: &Pose,
    config: &EnergyConfig,
    frozen: &mut Frozen,
    current: &mut EnergyTerms,
) -> Result<()> {
    let fresh = freeze(image, prior, params, pose, config)?;
    let means_only = Frozen {
        normalizer: frozen.normalizer,
        ..fresh
    };
    for candidate in [fresh, means_only] {
        let e = energy_with(image, prior, params, pose, &candidate, config)?;
        if e.total <= current.total {
            *frozen = candidate;
            *current = e;
            break;
        }
    }
    Ok(())
}

/// Chan–Vese with a shape prior: piecewise-constant intensities inside and
/// outside, minimized over shape weights and pose. `inside_mean` fixes the
/// interior intensity; otherwise it is re-estimated every iteration.
pub fn chan_vese_shape(
    image: &ScalarField,
    shape: &ShapeModel,
    inside_mean: Option<f64>,
    init: (Params, Pose),
    config: &EnergyConfig,
) -> Result<SegmentationResult> {
    let prior = Prior::ShapeOnly { shape, inside_mean };
    minimize(image, &prior, init, config)
}
