//! Flat `key = value` settings with defaults, file loading and overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use isoseg::energy::{ChanVeseConfig, EnergyConfig};
use isoseg::methods::SegmentConfig;
use isoseg::pose::Pose;
use isoseg::training::TrainConfig;
use isoseg::{Error, Result};

pub const ENERGY_KEYS: &[&str] = &[
    "alpha",
    "beta",
    "dirac_width",
    "max_iterations",
    "energy_tolerance",
    "step_translation",
    "step_rotation",
    "step_scale",
    "step_shape",
    "step_appearance",
    "weight_bound",
    "cv_curvature_weight",
    "cv_max_iterations",
    "cv_max_step",
    "cv_reinit_interval",
    "cvs_inside_mean",
];
pub const POSE_KEYS: &[&str] = &["tx", "ty", "theta", "scale"];
pub const TRAIN_KEYS: &[&str] = &["shape_modes", "appearance_modes", "coupled_modes", "bins", "align", "block_weight"];
pub const SYNTH_KEYS: &[&str] = &["family", "count", "size", "frames", "noise_variance", "occlusion", "test_index", "seed"];
pub const SWEEP_KEYS: &[&str] = &["size", "ks", "noise_variance", "bins", "seed"];

fn default_value(key: &str) -> Option<String> {
    let e = EnergyConfig::default();
    let c = ChanVeseConfig::default();
    let t = TrainConfig::default();
    let v = match key {
        "alpha" => e.alpha.to_string(),
        "beta" => e.beta.to_string(),
        "dirac_width" => e.dirac_width.to_string(),
        "max_iterations" => e.max_iterations.to_string(),
        "energy_tolerance" => e.energy_tolerance.to_string(),
        "step_translation" => e.step_translation.to_string(),
        "step_rotation" => e.step_rotation.to_string(),
        "step_scale" => e.step_scale.to_string(),
        "step_shape" => e.step_shape.to_string(),
        "step_appearance" => e.step_appearance.to_string(),
        "weight_bound" => e.weight_bound.to_string(),
        "cv_curvature_weight" => c.curvature_weight.to_string(),
        "cv_max_iterations" => c.max_iterations.to_string(),
        "cv_max_step" => c.max_step.to_string(),
        "cv_reinit_interval" => c.reinit_interval.to_string(),
        "cvs_inside_mean" => "auto".into(),
        "tx" | "ty" | "theta" => "0".into(),
        "scale" => "1".into(),
        "shape_modes" => t.shape_modes.to_string(),
        "appearance_modes" => t.appearance_modes.to_string(),
        "coupled_modes" => t.coupled_modes.to_string(),
        "bins" => t.bins.to_string(),
        "align" => t.align.to_string(),
        "block_weight" => "auto".into(),
        "family" => "fighters".into(),
        "count" => "12".into(),
        "size" => "128".into(),
        "frames" => "20".into(),
        "noise_variance" => "15".into(),
        "occlusion" => "0.3".into(),
        "test_index" => "0".into(),
        "seed" => "1".into(),
        "ks" => "1,3,10,30".into(),
        _ => return None,
    };
    Some(v)
}

/// Settings for one command: the keys it understands, with values.
#[derive(Clone, Debug)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn new(groups: &[&[&str]]) -> Self {
        let values = groups
            .iter()
            .flat_map(|g| g.iter())
            .map(|k| (k.to_string(), default_value(k).expect("every key has a default")))
            .collect();
        Self { values }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.to_string();
                Ok(())
            }
            None => Err(Error::InvalidArgument(format!(
                "unknown setting '{key}' (known: {})",
                self.values.keys().cloned().collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// `key=value` as given on the command line.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got '{pair}'")))?;
        self.set(k.trim(), v.trim())
    }

    /// Reads `key = value` lines; `#` starts a comment.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.into(),
            source,
        })?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply_override(line).map_err(|e| {
                Error::InvalidArgument(format!("{}:{}: {e}", path.display(), n + 1))
            })?;
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            writeln!(out, "# {k} = {v}").unwrap();
        }
        out
    }

    fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key registered for this command")
    }

    fn bad(&self, key: &str, what: &str) -> Error {
        Error::InvalidArgument(format!("setting '{key}' = '{}' is not {what}", self.raw(key)))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.raw(key)
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.bad(key, "a finite number"))
    }

    /// `auto` means `None`.
    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        if self.raw(key).eq_ignore_ascii_case("auto") {
            Ok(None)
        } else {
            self.f64(key).map(Some)
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.raw(key).parse().map_err(|_| self.bad(key, "a non-negative integer"))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.raw(key).parse().map_err(|_| self.bad(key, "a non-negative integer"))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key).to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(self.bad(key, "a boolean")),
        }
    }

    pub fn str(&self, key: &str) -> &str {
        self.raw(key)
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.raw(key)
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| self.bad(key, "a comma-separated list of integers")))
            .collect()
    }

    pub fn segment_config(&self) -> Result<SegmentConfig> {
        let energy = EnergyConfig {
            alpha: self.f64("alpha")?,
            beta: self.f64("beta")?,
            dirac_width: self.f64("dirac_width")?,
            max_iterations: self.usize("max_iterations")?,
            energy_tolerance: self.f64("energy_tolerance")?,
            step_translation: self.f64("step_translation")?,
            step_rotation: self.f64("step_rotation")?,
            step_scale: self.f64("step_scale")?,
            step_shape: self.f64("step_shape")?,
            step_appearance: self.f64("step_appearance")?,
            weight_bound: self.f64("weight_bound")?,
        };
        energy.validate()?;
        let chan_vese = ChanVeseConfig {
            curvature_weight: self.f64("cv_curvature_weight")?,
            max_iterations: self.usize("cv_max_iterations")?,
            max_step: self.f64("cv_max_step")?,
            reinit_interval: self.usize("cv_reinit_interval")?,
            energy_tolerance: energy.energy_tolerance,
            dirac_width: energy.dirac_width,
        };
        chan_vese.validate()?;
        Ok(SegmentConfig {
            energy,
            chan_vese,
            inside_mean: self.opt_f64("cvs_inside_mean")?,
        })
    }

    pub fn pose(&self) -> Result<Pose> {
        Pose::new(self.f64("tx")?, self.f64("ty")?, self.f64("theta")?, self.f64("scale")?)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            shape_modes: self.usize("shape_modes")?,
            appearance_modes: self.usize("appearance_modes")?,
            coupled_modes: self.usize("coupled_modes")?,
            bins: self.usize("bins")?,
            align: self.bool("align")?,
            block_weight: self.opt_f64("block_weight")?,
        })
    }
}
