//! The three experiment protocols on generated data: occluded textured
//! fighters, a K sweep with a dislocated shape model, and tracking.

use rayon::prelude::*;

use crate::energy::{EnergyTerms, SegmentationResult};
use crate::error::{Error, Result};
use crate::levelset::signed_distance;
use crate::methods::{segment, track, Method, ModelSet, SegmentConfig, Start};
use crate::metrics::{dice, segmentation_error};
use crate::models::{train_shape, AppearanceModel};
use crate::photogeom::{extract_profile, DEFAULT_BINS};
use crate::pose::Pose;
use crate::synth::{
    beetle_set, generate, low_contrast_sequence, moving_disc_sequence, Dataset, Sequence, SynthSpec,
};
use crate::training::{train, TrainConfig};

#[derive(Clone, Debug)]
pub struct OcclusionConfig {
    pub synth: SynthSpec,
    pub train: TrainConfig,
    /// Offset pose the mean shape starts from.
    pub init: Pose,
    pub segment: SegmentConfig,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            synth: SynthSpec::default(),
            train: TrainConfig::default(),
            init: Pose {
                tx: 6.0,
                ty: -5.0,
                theta: 0.1,
                scale: 1.05,
            },
            segment: SegmentConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MethodRun {
    pub method: Method,
    pub result: SegmentationResult,
    pub dice: f64,
    pub seg_error: usize,
}

#[derive(Clone, Debug)]
pub struct OcclusionReport {
    pub data: Dataset,
    pub models: ModelSet,
    pub runs: Vec<MethodRun>,
}

impl OcclusionReport {
    pub fn run(&self, method: Method) -> &MethodRun {
        self.runs.iter().find(|r| r.method == method).expect("every method runs")
    }
}

/// Trains on the generated set and segments the occluded noisy test image
/// with all four methods from the same start.
pub fn occlusion_experiment(config: &OcclusionConfig) -> Result<OcclusionReport> {
    let data = generate(&config.synth)?;
    let trained = train(&data.training, &config.train)?;
    let models = ModelSet {
        shape: Some(trained.shape),
        appearance: Some(trained.appearance),
        coupled: Some(trained.coupled),
    };
    let start = Start {
        pose: config.init,
        ..Start::default()
    };
    let runs = Method::ALL
        .par_iter()
        .map(|&method| {
            let result = segment(&data.test.image, &models, method, &start, &config.segment)?;
            Ok(MethodRun {
                method,
                dice: dice(&result.mask, &data.test.mask)?,
                seg_error: segmentation_error(&result.mask, &data.test.mask)?,
                result,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OcclusionReport { data, models, runs })
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub size: usize,
    pub ks: Vec<usize>,
    /// Shifts (pixels, both axes) and rotations (radians) of the true shape
    /// that make up the shape set.
    pub shifts: Vec<f64>,
    pub angles: Vec<f64>,
    pub noise_variance: f64,
    pub bins: usize,
    pub seed: u64,
    pub segment: SegmentConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let a = 16f64.to_radians();
        Self {
            size: 128,
            ks: vec![1, 3, 10, 30],
            shifts: vec![-4.0, 0.0, 4.0],
            angles: vec![-a, -a / 2.0, 0.0, a / 2.0, a],
            noise_variance: 15.0,
            bins: DEFAULT_BINS,
            seed: 3,
            segment: SegmentConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub method: Method,
    pub seg_error: usize,
    pub energy: f64,
    /// Final energy divided by the final energy of the smallest K.
    pub relative_energy: f64,
    pub trace: Vec<EnergyTerms>,
}

/// Segments the beetle-like image with CV-S and with E-SA (appearance fixed
/// to the true object's profile) for each K, using an unaligned shape model
/// built from shifted and rotated copies of the true shape.
pub fn sweep_k(config: &SweepConfig) -> Result<Vec<SweepRow>> {
    if config.ks.is_empty() {
        return Err(Error::invalid("sweep needs at least one K"));
    }
    let set = beetle_set(config.size, &config.shifts, &config.angles, config.noise_variance, config.seed)?;
    let n = set.shapes.len();
    if let Some(&k) = config.ks.iter().find(|&&k| k == 0 || k >= n) {
        return Err(Error::invalid(format!("K = {k} outside 1..{} for {n} shapes", n - 1)));
    }
    let sdfs = set.shapes.iter().map(signed_distance).collect::<Result<Vec<_>>>()?;
    let truth = &set.truth;
    let profile = extract_profile(&truth.image, &signed_distance(&truth.mask)?, config.bins)?;
    let appearance = AppearanceModel::fixed(profile.profile);

    let jobs: Vec<(usize, Method)> = config
        .ks
        .iter()
        .flat_map(|&k| [(k, Method::CvS), (k, Method::ESAd)])
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(k, method)| {
            let models = ModelSet {
                shape: Some(train_shape(&sdfs, k)?),
                appearance: Some(appearance.clone()),
                coupled: None,
            };
            let r = segment(&truth.image, &models, method, &Start::default(), &config.segment)?;
            Ok((k, method, segmentation_error(&r.mask, &truth.mask)?, r.final_energy(), r.trace))
        })
        .collect::<Result<Vec<_>>>()?;

    let k0 = *config.ks.iter().min().expect("non-empty");
    let base = |m: Method| runs.iter().find(|r| r.0 == k0 && r.1 == m).map(|r| r.3).expect("smallest K ran");
    Ok(runs
        .iter()
        .map(|(k, method, seg_error, energy, trace)| SweepRow {
            k: *k,
            method: *method,
            seg_error: *seg_error,
            energy: *energy,
            relative_energy: energy / base(*method),
            trace: trace.clone(),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SequenceKind {
    MovingDisc,
    LowContrast,
}

#[derive(Clone, Debug)]
pub struct TrackingConfig {
    pub kind: SequenceKind,
    pub size: usize,
    pub frames: usize,
    pub noise_variance: f64,
    pub modes: usize,
    pub seed: u64,
    pub segment: SegmentConfig,
}

impl TrackingConfig {
    pub fn new(kind: SequenceKind) -> Self {
        Self {
            kind,
            size: 128,
            frames: match kind {
                SequenceKind::MovingDisc => 10,
                SequenceKind::LowContrast => 20,
            },
            noise_variance: 15.0,
            modes: 3,
            seed: 7,
            segment: SegmentConfig::default(),
        }
    }

    pub fn sequence(&self) -> Result<Sequence> {
        match self.kind {
            SequenceKind::MovingDisc => {
                moving_disc_sequence(self.size, self.frames, 2.0, self.noise_variance, self.seed)
            }
            SequenceKind::LowContrast => {
                low_contrast_sequence(self.size, self.frames, self.noise_variance, self.seed)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrackingRun {
    pub method: Method,
    /// Per-frame Dice; failed frames score 0.
    pub dice: Vec<f64>,
    pub poses: Vec<Option<Pose>>,
    /// Energy trace per frame; empty for failed frames.
    pub traces: Vec<Vec<EnergyTerms>>,
}

impl TrackingRun {
    pub fn mean_dice(&self) -> f64 {
        self.dice.iter().sum::<f64>() / self.dice.len() as f64
    }
}

/// Trains on the sequence's training samples (without alignment, so the
/// model frame is the image frame) and tracks every frame with `methods`.
pub fn tracking_experiment(config: &TrackingConfig, methods: &[Method]) -> Result<Vec<TrackingRun>> {
    let seq = config.sequence()?;
    let m = config.modes.min(seq.training.len() - 1);
    let trained = train(
        &seq.training,
        &TrainConfig {
            shape_modes: m,
            appearance_modes: m,
            coupled_modes: m,
            align: false,
            ..TrainConfig::default()
        },
    )?;
    let models = ModelSet {
        shape: Some(trained.shape),
        appearance: Some(trained.appearance),
        coupled: Some(trained.coupled),
    };
    let frames: Vec<_> = seq.frames.iter().map(|f| f.image.clone()).collect();
    let start = Start {
        pose: seq.start,
        ..Start::default()
    };
    methods
        .par_iter()
        .map(|&method| {
            let out = track(&frames, &models, method, &start, &config.segment)?;
            let dice = out
                .iter()
                .zip(&seq.frames)
                .map(|(f, s)| f.result.as_ref().map_or(Ok(0.0), |r| dice(&r.mask, &s.mask)))
                .collect::<Result<Vec<_>>>()?;
            Ok(TrackingRun {
                method,
                dice,
                poses: out.iter().map(|f| f.result.as_ref().map(|r| r.pose)).collect(),
                traces: out
                    .iter()
                    .map(|f| f.result.as_ref().map_or_else(Vec::new, |r| r.trace.clone()))
                    .collect(),
            })
        })
        .collect()
}
