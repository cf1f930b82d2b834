//! The four segmentation methods behind one entry point, and frame-to-frame
//! tracking.

use std::fmt;
use std::str::FromStr;

use log::warn;

use crate::energy::{
    chan_vese, minimize, ChanVeseConfig, EnergyConfig, Params, Prior, SegmentationResult,
};
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::levelset::{mask_from_levelset, BinaryMask};
use crate::models::{AppearanceModel, CoupledModel, ShapeModel};
use crate::pose::{warp_field, Pose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Chan–Vese without a prior.
    Cv,
    /// Chan–Vese with a shape prior.
    CvS,
    /// Shape and appearance priors, trained separately.
    ESAd,
    /// Coupled shape-appearance prior.
    ESAc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cv, Method::CvS, Method::ESAd, Method::ESAc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cv => "cv",
            Method::CvS => "cvs",
            Method::ESAd => "esad",
            Method::ESAc => "esac",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown algorithm '{s}' (cv, cvs, esad, esac)")))
    }
}

/// Whatever models a model file provides.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelSet {
    pub shape: Option<ShapeModel>,
    pub appearance: Option<AppearanceModel>,
    pub coupled: Option<CoupledModel>,
}

impl ModelSet {
    /// Prior used by `method`; `None` for plain Chan–Vese.
    pub fn prior(&self, method: Method, inside_mean: Option<f64>) -> Result<Option<Prior<'_>>> {
        let missing = |what: &str| Error::invalid(format!("{method} needs a {what} model"));
        Ok(match method {
            Method::Cv => None,
            Method::CvS => Some(Prior::ShapeOnly {
                shape: self.shape.as_ref().ok_or_else(|| missing("shape"))?,
                inside_mean,
            }),
            Method::ESAd => {
                let shape = self.shape.as_ref().ok_or_else(|| missing("shape"))?;
                let appearance = self.appearance.as_ref().ok_or_else(|| missing("appearance"))?;
                Some(Prior::Decoupled { shape, appearance })
            }
            Method::ESAc => Some(Prior::Coupled(self.coupled.as_ref().ok_or_else(|| missing("coupled"))?)),
        })
    }

    /// Mean shape of whichever shape model is present.
    fn mean_shape(&self) -> Option<&ScalarField> {
        self.shape
            .as_ref()
            .map(|s| &s.mean)
            .or(self.coupled.as_ref().map(|c| &c.shape_mean))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentConfig {
    pub energy: EnergyConfig,
    pub chan_vese: ChanVeseConfig,
    /// Fixed interior intensity for CV-S; re-estimated when `None`.
    pub inside_mean: Option<f64>,
}

/// Where a run starts. Missing weights start at zero; a missing mask (for
/// Chan–Vese) is the model mean shape at `pose`, or a centered disc.
#[derive(Clone, Debug, Default)]
pub struct Start {
    pub params: Option<Params>,
    pub pose: Pose,
    pub mask: Option<BinaryMask>,
}

fn default_mask(models: &ModelSet, pose: &Pose, width: usize, height: usize) -> Result<BinaryMask> {
    if let Some(mean) = models.mean_shape() {
        let mask = mask_from_levelset(&warp_field(mean, pose, width, height));
        if !mask.is_degenerate() {
            return Ok(mask);
        }
    }
    let r = width.min(height) as f64 / 4.0;
    let c = [(width as f64 - 1.0) / 2.0 + pose.tx, (height as f64 - 1.0) / 2.0 + pose.ty];
    BinaryMask::from_fn(width, height, |x, y| (x as f64 - c[0]).hypot(y as f64 - c[1]) < r)
}

pub fn segment(
    image: &ScalarField,
    models: &ModelSet,
    method: Method,
    start: &Start,
    config: &SegmentConfig,
) -> Result<SegmentationResult> {
    match models.prior(method, config.inside_mean)? {
        None => {
            let (w, h) = image.dims();
            let mask = match &start.mask {
                Some(m) => m.clone(),
                None => default_mask(models, &start.pose, w, h)?,
            };
            chan_vese(image, &mask, &config.chan_vese)
        }
        Some(prior) => {
            let params = start.params.clone().unwrap_or_else(|| prior.zero_params());
            minimize(image, &prior, (params, start.pose), &config.energy)
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrackFrame {
    pub result: Option<SegmentationResult>,
    pub error: Option<String>,
}

/// Segments `frames` in order, starting each frame from the final estimate
/// of the last frame that succeeded. Frame 0 starts from `start`.
pub fn track(
    frames: &[ScalarField],
    models: &ModelSet,
    method: Method,
    start: &Start,
    config: &SegmentConfig,
) -> Result<Vec<TrackFrame>> {
    if frames.is_empty() {
        return Err(Error::invalid("tracking needs at least one frame"));
    }
    let mut current = start.clone();
    let mut out = Vec::with_capacity(frames.len());
    for (k, frame) in frames.iter().enumerate() {
        match segment(frame, models, method, &current, config) {
            Ok(r) => {
                current = Start {
                    params: Some(r.params.clone()),
                    pose: r.pose,
                    mask: Some(r.mask.clone()),
                };
                out.push(TrackFrame {
                    result: Some(r),
                    error: None,
                });
            }
            Err(e @ Error::InvalidArgument(_)) | Err(e @ Error::DimensionMismatch { .. }) => {
                return Err(e)
            }
            Err(e) => {
                warn!("frame {k}: {e}");
                out.push(TrackFrame {
                    result: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    Ok(out)
}
