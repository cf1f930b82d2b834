//! Image files, the text model format, and result files.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::energy::{EnergyTerms, SegmentationResult};
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::levelset::BinaryMask;
use crate::methods::ModelSet;
use crate::models::{AppearanceModel, CoupledModel, ShapeModel};
use crate::photogeom::Profile;

pub const MODEL_MAGIC: &str = "isoseg-model";
pub const MODEL_VERSION: u32 = 1;

/// Reads a grayscale image (PGM, PNG or anything else the decoder knows).
/// 16-bit images are scaled to the 8-bit range.
pub fn read_image(path: impl AsRef<Path>) -> Result<ScalarField> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = match img {
        DynamicImage::ImageLuma16(g) => g.into_raw().into_iter().map(|v| v as f64 / 257.0).collect(),
        other => other.into_luma8().into_raw().into_iter().map(f64::from).collect(),
    };
    ScalarField::new(w, h, values)
}

fn to_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
}

fn write_gray(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(bytes, width as u32, height as u32, ExtendedColorType::L8)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
}

/// Writes a binary (P5) PGM, rounding and clamping to `[0, 255]`.
pub fn write_pgm(path: impl AsRef<Path>, image: &ScalarField) -> Result<()> {
    let bytes = to_bytes(image.values().iter().copied());
    write_gray(path.as_ref(), image.width(), image.height(), &bytes)
}

/// Object pixels 255, background 0.
pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    let bytes: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_gray(path.as_ref(), mask.width(), mask.height(), &bytes)
}

/// Any pixel at or above half the range counts as object.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let img = read_image(path)?;
    let (w, h) = img.dims();
    BinaryMask::new(w, h, img.values().iter().map(|&v| v >= 128.0).collect())
}

/// The image with the mask boundary painted white, or black on bright
/// pixels.
pub fn write_overlay(path: impl AsRef<Path>, image: &ScalarField, mask: &BinaryMask) -> Result<()> {
    if image.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: image.dims(),
            found: mask.dims(),
        });
    }
    let mut bytes = to_bytes(image.values().iter().copied());
    for (x, y) in mask.boundary() {
        let k = y * image.width() + x;
        bytes[k] = if bytes[k] > 200 { 0 } else { 255 };
    }
    write_gray(path.as_ref(), image.width(), image.height(), &bytes)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn energy_csv(trace: &[EnergyTerms]) -> String {
    let mut out = String::from("iteration,E_in,E_out,E\n");
    for (k, t) in trace.iter().enumerate() {
        writeln!(out, "{k},{},{},{}", t.e_in, t.e_out, t.total).unwrap();
    }
    out
}

pub fn write_energy_csv(path: impl AsRef<Path>, trace: &[EnergyTerms]) -> Result<()> {
    write_text(path.as_ref(), &energy_csv(trace))
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Final pose, weights and run statistics as `key value` lines.
pub fn params_text(result: &SegmentationResult) -> String {
    let p = &result.pose;
    let mut out = String::new();
    writeln!(out, "tx {}", p.tx).unwrap();
    writeln!(out, "ty {}", p.ty).unwrap();
    writeln!(out, "theta {}", p.theta).unwrap();
    writeln!(out, "scale {}", p.scale).unwrap();
    writeln!(out, "w {}", join(&result.params.w)).unwrap();
    writeln!(out, "v {}", join(&result.params.v)).unwrap();
    writeln!(out, "u_out {}", result.u_out).unwrap();
    writeln!(out, "energy {}", result.final_energy()).unwrap();
    writeln!(out, "iterations {}", result.iterations).unwrap();
    writeln!(out, "converged {}", result.converged).unwrap();
    out
}

pub fn write_params(path: impl AsRef<Path>, result: &SegmentationResult) -> Result<()> {
    write_text(path.as_ref(), &params_text(result))
}

pub fn profile_csv(profile: &Profile) -> String {
    let mut out = String::from("tau,value\n");
    for (t, v) in profile.tau_grid().iter().zip(profile.values()) {
        writeln!(out, "{t},{v}").unwrap();
    }
    out
}

/// Line chart of the profile over `τ ∈ [−1, 0]`: black curve and axes on
/// white, y range padded around the data.
pub fn profile_plot(profile: &Profile, width: usize, height: usize) -> Result<ScalarField> {
    if width < 16 || height < 16 {
        return Err(Error::invalid("plot must be at least 16x16"));
    }
    let v = profile.values();
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let pad = ((hi - lo) * 0.1).max(1.0);
    let (lo, hi) = (lo - pad, hi + pad);
    let margin = 4.0;
    let (pw, ph) = (width as f64 - 2.0 * margin, height as f64 - 2.0 * margin);
    let to_px = |t: f64, y: f64| [margin + (t + 1.0) * pw, margin + (hi - y) / (hi - lo) * ph];
    let mut pixels = vec![255.0; width * height];
    let mut plot = |x: f64, y: f64| {
        let (xi, yi) = (x.round() as isize, y.round() as isize);
        if xi >= 0 && yi >= 0 && (xi as usize) < width && (yi as usize) < height {
            pixels[yi as usize * width + xi as usize] = 0.0;
        }
    };
    for x in 0..width {
        plot(x as f64, height as f64 - margin);
    }
    for y in 0..height {
        plot(margin, y as f64);
    }
    let samples = 4 * width;
    for s in 0..=samples {
        let t = -1.0 + s as f64 / samples as f64;
        let [x, y] = to_px(t, profile.evaluate(t));
        plot(x, y);
    }
    for (t, &y) in profile.tau_grid().iter().zip(v) {
        let [x, y] = to_px(*t, y);
        plot(x, y);
    }
    ScalarField::new(width, height, pixels)
}

/// Writes `<stem>.csv` and `<stem>.pgm` for a profile.
pub fn write_profile(dir: impl AsRef<Path>, stem: &str, profile: &Profile) -> Result<()> {
    let dir = dir.as_ref();
    write_text(&dir.join(format!("{stem}.csv")), &profile_csv(profile))?;
    write_pgm(dir.join(format!("{stem}.pgm")), &profile_plot(profile, 256, 128)?)
}

/// Mask, overlay, energy trace, parameters and (if any) the final profile.
pub fn write_result(
    dir: impl AsRef<Path>,
    image: &ScalarField,
    result: &SegmentationResult,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_mask(dir.join("mask.pgm"), &result.mask)?;
    write_overlay(dir.join("overlay.pgm"), image, &result.mask)?;
    write_energy_csv(dir.join("energy.csv"), &result.trace)?;
    write_params(dir.join("params.txt"), result)?;
    if let Some(p) = &result.profile {
        write_profile(dir, "profile", p)?;
    }
    Ok(())
}

/// Text model file. One `key values...` record per line; numbers use the
/// shortest representation that reads back to the same `f64`.
pub fn model_to_string(models: &ModelSet) -> Result<String> {
    let dims = models
        .shape
        .as_ref()
        .map(|s| s.dims())
        .or(models.coupled.as_ref().map(|c| c.dims()));
    let bins = models
        .appearance
        .as_ref()
        .map(|a| a.bins())
        .or(models.coupled.as_ref().map(|c| c.appearance_mean.len()));
    if dims.is_none() && bins.is_none() {
        return Err(Error::invalid("model set is empty"));
    }
    let mut out = format!("{MODEL_MAGIC} {MODEL_VERSION}\n");
    if let Some((w, h)) = dims {
        writeln!(out, "dims {w} {h}").unwrap();
    }
    if let Some(b) = bins {
        writeln!(out, "bins {b}").unwrap();
        writeln!(out, "tau {}", join(&crate::photogeom::tau_grid(b))).unwrap();
    }
    if let Some(s) = &models.shape {
        writeln!(out, "shape {}", s.num_components()).unwrap();
        writeln!(out, "mean {}", join(s.mean.values())).unwrap();
        writeln!(out, "sigmas {}", join(&s.singular_values)).unwrap();
        for c in &s.eigenshapes {
            writeln!(out, "mode {}", join(c.values())).unwrap();
        }
    }
    if let Some(a) = &models.appearance {
        writeln!(out, "appearance {}", a.num_components()).unwrap();
        writeln!(out, "mean {}", join(a.mean.values())).unwrap();
        writeln!(out, "sigmas {}", join(&a.singular_values)).unwrap();
        for c in &a.eigenprofiles {
            writeln!(out, "mode {}", join(c.values())).unwrap();
        }
    }
    if let Some(c) = &models.coupled {
        writeln!(out, "coupled {} {}", c.num_components(), c.block_weight).unwrap();
        writeln!(out, "shape_mean {}", join(c.shape_mean.values())).unwrap();
        writeln!(out, "appearance_mean {}", join(c.appearance_mean.values())).unwrap();
        writeln!(out, "sigmas {}", join(&c.singular_values)).unwrap();
        for (s, a) in c.shape_components.iter().zip(&c.appearance_components) {
            writeln!(out, "shape_mode {}", join(s.values())).unwrap();
            writeln!(out, "appearance_mode {}", join(a.values())).unwrap();
        }
    }
    out.push_str("end\n");
    Ok(out)
}

struct Lines<'a> {
    iter: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::ModelFormat {
            line: self.line,
            message: message.into(),
        }
    }

    /// Next non-blank line as `(key, rest)`.
    fn next(&mut self) -> Result<(&'a str, Vec<&'a str>)> {
        loop {
            let Some((k, text)) = self.iter.next() else {
                return Err(self.err("unexpected end of file"));
            };
            self.line = k + 1;
            let mut words = text.split_whitespace();
            if let Some(key) = words.next() {
                return Ok((key, words.collect()));
            }
        }
    }

    fn expect(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let (k, rest) = self.next()?;
        if k != key {
            return Err(self.err(format!("expected '{key}', found '{k}'")));
        }
        Ok(rest)
    }

    fn numbers(&mut self, key: &str, count: usize) -> Result<Vec<f64>> {
        let words = self.expect(key)?;
        if words.len() != count {
            return Err(self.err(format!("'{key}' needs {count} values, found {}", words.len())));
        }
        let values = words
            .iter()
            .map(|w| w.parse::<f64>().map_err(|_| self.err(format!("bad number '{w}'"))))
            .collect::<Result<Vec<_>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(self.err(format!("non-finite value in '{key}'")));
        }
        Ok(values)
    }

    fn integer(&self, word: Option<&&str>, what: &str) -> Result<usize> {
        word.and_then(|w| w.parse().ok())
            .ok_or_else(|| self.err(format!("missing or invalid {what}")))
    }
}

pub fn model_from_str(text: &str) -> Result<ModelSet> {
    let mut lines = Lines {
        iter: text.lines().enumerate().peekable(),
        line: 0,
    };
    let header = lines.expect(MODEL_MAGIC)?;
    if header.first().and_then(|v| v.parse::<u32>().ok()) != Some(MODEL_VERSION) {
        return Err(lines.err(format!("unsupported model version (expected {MODEL_VERSION})")));
    }
    let mut dims: Option<(usize, usize)> = None;
    let mut bins: Option<usize> = None;
    let mut models = ModelSet::default();
    fn field(lines: &mut Lines, key: &str, dims: Option<(usize, usize)>) -> Result<ScalarField> {
        let (w, h) = dims.ok_or_else(|| lines.err("'dims' must precede shape data"))?;
        ScalarField::new(w, h, lines.numbers(key, w * h)?)
    }
    fn profile(lines: &mut Lines, key: &str, bins: Option<usize>) -> Result<Profile> {
        let b = bins.ok_or_else(|| lines.err("'bins' must precede appearance data"))?;
        Profile::new(lines.numbers(key, b)?)
    }
    loop {
        let (key, rest) = lines.next()?;
        match key {
            "end" => break,
            "dims" => {
                let w = lines.integer(rest.first(), "width")?;
                let h = lines.integer(rest.get(1), "height")?;
                dims = Some((w, h));
            }
            "bins" => bins = Some(lines.integer(rest.first(), "bin count")?),
            "tau" => {
                let b = bins.ok_or_else(|| lines.err("'bins' must precede 'tau'"))?;
                let grid = crate::photogeom::tau_grid(b);
                let ok = rest.len() == b
                    && rest
                        .iter()
                        .zip(&grid)
                        .all(|(w, t)| w.parse::<f64>().is_ok_and(|v| (v - t).abs() < 1e-12));
                if !ok {
                    return Err(lines.err("tau grid does not match the bin count"));
                }
            }
            "shape" => {
                let k = lines.integer(rest.first(), "component count")?;
                let mean = field(&mut lines, "mean", dims)?;
                let singular_values = lines.numbers("sigmas", k)?;
                let eigenshapes = (0..k)
                    .map(|_| field(&mut lines, "mode", dims))
                    .collect::<Result<_>>()?;
                models.shape = Some(ShapeModel {
                    mean,
                    eigenshapes,
                    singular_values,
                });
            }
            "appearance" => {
                let l = lines.integer(rest.first(), "component count")?;
                let mean = profile(&mut lines, "mean", bins)?;
                let singular_values = lines.numbers("sigmas", l)?;
                let eigenprofiles = (0..l)
                    .map(|_| profile(&mut lines, "mode", bins))
                    .collect::<Result<_>>()?;
                models.appearance = Some(AppearanceModel {
                    mean,
                    eigenprofiles,
                    singular_values,
                });
            }
            "coupled" => {
                let m = lines.integer(rest.first(), "component count")?;
                let block_weight = rest
                    .get(1)
                    .and_then(|w| w.parse::<f64>().ok())
                    .filter(|b| b.is_finite() && *b > 0.0)
                    .ok_or_else(|| lines.err("missing or invalid block weight"))?;
                let shape_mean = field(&mut lines, "shape_mean", dims)?;
                let appearance_mean = profile(&mut lines, "appearance_mean", bins)?;
                let singular_values = lines.numbers("sigmas", m)?;
                let mut shape_components = Vec::with_capacity(m);
                let mut appearance_components = Vec::with_capacity(m);
                for _ in 0..m {
                    shape_components.push(field(&mut lines, "shape_mode", dims)?);
                    appearance_components.push(profile(&mut lines, "appearance_mode", bins)?);
                }
                models.coupled = Some(CoupledModel {
                    shape_mean,
                    shape_components,
                    appearance_mean,
                    appearance_components,
                    singular_values,
                    block_weight,
                });
            }
            other => return Err(lines.err(format!("unknown record '{other}'"))),
        }
    }
    if models.shape.is_none() && models.appearance.is_none() && models.coupled.is_none() {
        return Err(lines.err("model file holds no model"));
    }
    Ok(models)
}

pub fn write_model(path: impl AsRef<Path>, models: &ModelSet) -> Result<()> {
    write_text(path.as_ref(), &model_to_string(models)?)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text)
}
