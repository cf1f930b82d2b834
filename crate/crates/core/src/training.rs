//! From labeled samples to shape, appearance and coupled models.

use crate::error::{Error, Result};
use crate::levelset::{align_shapes, signed_distance, BinaryMask, SignedDistanceField};
use crate::methods::ModelSet;
use crate::models::{
    train_appearance, train_coupled, train_shape, AppearanceModel, CoupledModel, ShapeModel,
};
use crate::photogeom::{extract_profile, PhotoGeomProfile, DEFAULT_BINS};
use crate::pose::Pose;
use crate::synth::Sample;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub shape_modes: usize,
    pub appearance_modes: usize,
    pub coupled_modes: usize,
    pub bins: usize,
    /// Align the shapes before PCA; off keeps them as given.
    pub align: bool,
    pub block_weight: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            shape_modes: 4,
            appearance_modes: 4,
            coupled_modes: 4,
            bins: DEFAULT_BINS,
            align: true,
            block_weight: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModels {
    pub shape: ShapeModel,
    pub appearance: AppearanceModel,
    pub coupled: CoupledModel,
    /// Pose taking each training shape into the model frame.
    pub poses: Vec<Pose>,
    pub profiles: Vec<PhotoGeomProfile>,
}

/// Signed distance fields of `masks`, aligned first if asked.
pub fn model_frame_sdfs(masks: &[BinaryMask], align: bool) -> Result<(Vec<SignedDistanceField>, Vec<Pose>)> {
    if align {
        let a = align_shapes(masks)?;
        Ok((a.sdfs, a.poses))
    } else {
        let sdfs = masks.iter().map(signed_distance).collect::<Result<Vec<_>>>()?;
        Ok((sdfs, vec![Pose::identity(); masks.len()]))
    }
}

pub fn train(samples: &[Sample], config: &TrainConfig) -> Result<TrainedModels> {
    if samples.len() < 2 {
        return Err(Error::invalid("training needs at least two samples"));
    }
    let masks: Vec<BinaryMask> = samples.iter().map(|s| s.mask.clone()).collect();
    let (aligned, poses) = model_frame_sdfs(&masks, config.align)?;
    // profiles are pose invariant, so they come from the original frames
    let profiles = samples
        .iter()
        .map(|s| extract_profile(&s.image, &signed_distance(&s.mask)?, config.bins))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedModels {
        shape: train_shape(&aligned, config.shape_modes)?,
        appearance: train_appearance(&profiles, config.appearance_modes)?,
        coupled: train_coupled(&aligned, &profiles, config.coupled_modes, config.block_weight)?,
        poses,
        profiles,
    })
}

/// Which models a training run produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Shape,
    Appearance,
    Decoupled,
    Coupled,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shape" => Ok(TrainMode::Shape),
            "appearance" => Ok(TrainMode::Appearance),
            "decoupled" => Ok(TrainMode::Decoupled),
            "coupled" => Ok(TrainMode::Coupled),
            _ => Err(Error::invalid(format!(
                "unknown training mode '{s}' (shape, appearance, decoupled, coupled)"
            ))),
        }
    }
}

/// Trains only the models `mode` asks for, so unused mode counts are not
/// checked against the sample count.
pub fn train_models(samples: &[Sample], config: &TrainConfig, mode: TrainMode) -> Result<ModelSet> {
    if samples.len() < 2 {
        return Err(Error::invalid("training needs at least two samples"));
    }
    let wants_shape = matches!(mode, TrainMode::Shape | TrainMode::Decoupled | TrainMode::Coupled);
    let wants_profiles = mode != TrainMode::Shape;
    let aligned = if wants_shape {
        let masks: Vec<BinaryMask> = samples.iter().map(|s| s.mask.clone()).collect();
        Some(model_frame_sdfs(&masks, config.align)?.0)
    } else {
        None
    };
    let profiles = if wants_profiles {
        Some(
            samples
                .iter()
                .map(|s| extract_profile(&s.image, &signed_distance(&s.mask)?, config.bins))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let mut out = ModelSet::default();
    match mode {
        TrainMode::Shape => {
            out.shape = Some(train_shape(aligned.as_ref().expect("shapes"), config.shape_modes)?)
        }
        TrainMode::Appearance => {
            out.appearance = Some(train_appearance(
                profiles.as_ref().expect("profiles"),
                config.appearance_modes,
            )?)
        }
        TrainMode::Decoupled => {
            out.shape = Some(train_shape(aligned.as_ref().expect("shapes"), config.shape_modes)?);
            out.appearance = Some(train_appearance(
                profiles.as_ref().expect("profiles"),
                config.appearance_modes,
            )?);
        }
        TrainMode::Coupled => {
            out.coupled = Some(train_coupled(
                aligned.as_ref().expect("shapes"),
                profiles.as_ref().expect("profiles"),
                config.coupled_modes,
                config.block_weight,
            )?)
        }
    }
    Ok(out)
}
