mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use isoseg::experiments::{sweep_k, SweepConfig};
use isoseg::io;
use isoseg::levelset::BinaryMask;
use isoseg::methods::{segment, track, Method, Start};
use isoseg::metrics::{dice, segmentation_error};
use isoseg::synth::{self, Family, Sample, SynthSpec};
use isoseg::training::{train_models, TrainMode};
use isoseg::{Error, Result};

use config::{Settings, ENERGY_KEYS, POSE_KEYS, SWEEP_KEYS, SYNTH_KEYS, TRAIN_KEYS};

#[derive(Parser)]
#[command(name = "isoseg", version, about = "Segmentation with shape and iso-contour appearance priors")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SettingArgs {
    /// File of `key = value` settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set beta=0.2`.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic data set.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: SettingArgs,
    },
    /// Train models from NAME.pgm / NAME_mask.pgm pairs in a directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// shape, appearance, decoupled or coupled.
        #[arg(long, default_value = "coupled")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: SettingArgs,
    },
    /// Segment one image.
    Segment {
        #[arg(long)]
        image: PathBuf,
        /// Model file (not needed for cv).
        #[arg(long)]
        model: Option<PathBuf>,
        /// cv, cvs, esad or esac.
        #[arg(long, default_value = "esac")]
        algorithm: String,
        /// Initial mask for cv; defaults to the model mean shape at the
        /// initial pose, or a centered disc.
        #[arg(long)]
        init_mask: Option<PathBuf>,
        /// Ground-truth mask; Dice and segmentation error are reported.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: SettingArgs,
    },
    /// Segment a sequence of frames, each starting from the previous result.
    Track {
        /// Directory of frames; NAME_mask files are used as ground truth.
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "esac")]
        algorithm: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: SettingArgs,
    },
    /// Compare a predicted mask with the ground truth.
    Eval {
        #[arg(long)]
        predicted: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Segmentation error and relative final energy against the number of
    /// shape modes, with a shape model of dislocated copies of the truth.
    #[command(name = "sweep-k")]
    SweepK {
        /// CSV output; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        settings: SettingArgs,
    },
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_degenerate() {
        3
    } else {
        2
    }
}

fn settings(groups: &[&[&str]], args: &SettingArgs) -> Result<Settings> {
    let mut s = Settings::new(groups);
    if let Some(path) = &args.config {
        s.load(path)?;
    }
    for o in &args.overrides {
        s.apply_override(o)?;
    }
    eprint!("{}", s.describe());
    Ok(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.into(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { out, settings: a } => synth_cmd(&out, &settings(&[SYNTH_KEYS], &a)?),
        Command::Train {
            data,
            mode,
            out,
            settings: a,
        } => {
            let s = settings(&[TRAIN_KEYS], &a)?;
            let mode: TrainMode = mode.parse()?;
            let samples = load_pairs(&data)?;
            if samples.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "{}: need at least two image/mask pairs, found {}",
                    data.display(),
                    samples.len()
                )));
            }
            let models = train_models(&samples, &s.train_config()?, mode)?;
            io::write_model(&out, &models)?;
            info!("trained {mode:?} model on {} samples", samples.len());
            Ok(())
        }
        Command::Segment {
            image,
            model,
            algorithm,
            init_mask,
            truth,
            out,
            settings: a,
        } => {
            let s = settings(&[ENERGY_KEYS, POSE_KEYS], &a)?;
            let method: Method = algorithm.parse()?;
            let img = io::read_image(&image)?;
            let models = load_models(model.as_deref(), method)?;
            let start = Start {
                params: None,
                pose: s.pose()?,
                mask: init_mask.map(io::read_mask).transpose()?,
            };
            let result = segment(&img, &models, method, &start, &s.segment_config()?)?;
            io::write_result(&out, &img, &result)?;
            println!("energy {}", result.final_energy());
            println!("iterations {}", result.iterations);
            println!("converged {}", result.converged);
            if let Some(t) = truth {
                let t = io::read_mask(t)?;
                println!("dice {}", dice(&result.mask, &t)?);
                println!("seg_error {}", segmentation_error(&result.mask, &t)?);
            }
            Ok(())
        }
        Command::Track {
            frames,
            model,
            algorithm,
            out,
            settings: a,
        } => track_cmd(&frames, model.as_deref(), &algorithm, &out, &settings(&[ENERGY_KEYS, POSE_KEYS], &a)?),
        Command::Eval { predicted, truth } => {
            let p = io::read_mask(predicted)?;
            let t = io::read_mask(truth)?;
            println!("seg_error {}", segmentation_error(&p, &t)?);
            println!("dice {}", dice(&p, &t)?);
            Ok(())
        }
        Command::SweepK { out, settings: a } => {
            let s = settings(&[SWEEP_KEYS, ENERGY_KEYS], &a)?;
            let config = SweepConfig {
                size: s.usize("size")?,
                ks: s.usize_list("ks")?,
                noise_variance: s.f64("noise_variance")?,
                bins: s.usize("bins")?,
                seed: s.u64("seed")?,
                segment: s.segment_config()?,
                ..SweepConfig::default()
            };
            let rows = sweep_k(&config)?;
            let mut csv = String::from("k,method,seg_error,energy,relative_energy\n");
            for r in rows {
                writeln!(csv, "{},{},{},{},{}", r.k, r.method, r.seg_error, r.energy, r.relative_energy).unwrap();
            }
            match out {
                Some(path) => write_text(&path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}

fn load_models(path: Option<&Path>, method: Method) -> Result<isoseg::methods::ModelSet> {
    match path {
        Some(p) => io::read_model(p),
        None if method == Method::Cv => Ok(Default::default()),
        None => Err(Error::InvalidArgument(format!("{method} needs --model"))),
    }
}

const IMAGE_EXTENSIONS: &[&str] = &["pgm", "png", "pnm"];

/// Image files in `dir` that are not masks, sorted by name, each with its
/// `_mask` companion if there is one.
fn list_images(dir: &Path) -> Result<Vec<(PathBuf, Option<PathBuf>)>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.into(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    let is_mask = |p: &Path| p.file_stem().and_then(|s| s.to_str()).is_some_and(|s| s.ends_with("_mask"));
    Ok(files
        .iter()
        .filter(|p| !is_mask(p))
        .map(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let mask = IMAGE_EXTENSIONS
                .iter()
                .map(|e| p.with_file_name(format!("{stem}_mask.{e}")))
                .find(|m| m.exists());
            (p.clone(), mask)
        })
        .collect())
}

fn load_pairs(dir: &Path) -> Result<Vec<Sample>> {
    list_images(dir)?
        .into_iter()
        .filter_map(|(img, mask)| mask.map(|m| (img, m)))
        .map(|(img, m)| {
            Ok(Sample {
                image: io::read_image(img)?,
                mask: io::read_mask(m)?,
            })
        })
        .collect()
}

fn write_samples(dir: &Path, prefix: &str, samples: &[Sample]) -> Result<()> {
    create_dir(dir)?;
    for (k, s) in samples.iter().enumerate() {
        io::write_pgm(dir.join(format!("{prefix}_{k:03}.pgm")), &s.image)?;
        io::write_mask(dir.join(format!("{prefix}_{k:03}_mask.pgm")), &s.mask)?;
    }
    Ok(())
}

fn synth_cmd(out: &Path, s: &Settings) -> Result<()> {
    create_dir(out)?;
    let size = s.usize("size")?;
    let seed = s.u64("seed")?;
    let noise = s.f64("noise_variance")?;
    match s.str("family") {
        "fighters" | "discs" => {
            let spec = SynthSpec {
                family: if s.str("family") == "fighters" {
                    Family::Fighters
                } else {
                    Family::Discs
                },
                count: s.usize("count")?,
                width: size,
                height: size,
                noise_variance: noise,
                occlusion: s.f64("occlusion")?,
                test_index: s.usize("test_index")?,
                seed,
            };
            let data = synth::generate(&spec)?;
            write_samples(&out.join("train"), "train", &data.training)?;
            io::write_pgm(out.join("test.pgm"), &data.test.image)?;
            io::write_mask(out.join("test_mask.pgm"), &data.test.mask)?;
            io::write_pgm(out.join("test_clean.pgm"), &data.clean_test)?;
        }
        family @ ("moving-disc" | "low-contrast") => {
            let frames = s.usize("frames")?;
            let seq = if family == "moving-disc" {
                synth::moving_disc_sequence(size, frames, 2.0, noise, seed)?
            } else {
                synth::low_contrast_sequence(size, frames, noise, seed)?
            };
            write_samples(&out.join("frames"), "frame", &seq.frames)?;
            write_samples(&out.join("train"), "train", &seq.training)?;
            let p = seq.start;
            write_text(
                &out.join("start.txt"),
                &format!("tx = {}\nty = {}\ntheta = {}\nscale = {}\n", p.tx, p.ty, p.theta, p.scale),
            )?;
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown family '{other}' (fighters, discs, moving-disc, low-contrast)"
            )))
        }
    }
    Ok(())
}

fn track_cmd(frames_dir: &Path, model: Option<&Path>, algorithm: &str, out: &Path, s: &Settings) -> Result<()> {
    let method: Method = algorithm.parse()?;
    let models = load_models(model, method)?;
    let listed = list_images(frames_dir)?;
    if listed.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: no frames", frames_dir.display())));
    }
    let frames = listed
        .iter()
        .map(|(p, _)| io::read_image(p))
        .collect::<Result<Vec<_>>>()?;
    let truths = listed
        .iter()
        .map(|(_, m)| m.as_ref().map(io::read_mask).transpose())
        .collect::<Result<Vec<Option<BinaryMask>>>>()?;
    let start = Start {
        pose: s.pose()?,
        ..Start::default()
    };
    let results = track(&frames, &models, method, &start, &s.segment_config()?)?;
    create_dir(out)?;
    let mut csv = String::from("frame,dice,energy,iterations,status\n");
    let mut failures = 0;
    for (k, ((frame, res), truth)) in frames.iter().zip(&results).zip(&truths).enumerate() {
        match &res.result {
            Some(r) => {
                io::write_result(out.join(format!("frame_{k:03}")), frame, r)?;
                let d = truth.as_ref().map(|t| dice(&r.mask, t)).transpose()?;
                writeln!(
                    csv,
                    "{k},{},{},{},ok",
                    d.map_or(String::new(), |d| d.to_string()),
                    r.final_energy(),
                    r.iterations
                )
                .unwrap();
            }
            None => {
                failures += 1;
                let msg = res.error.as_deref().unwrap_or("failed").replace(',', ";");
                writeln!(csv, "{k},,,,failed: {msg}").unwrap();
            }
        }
    }
    write_text(&out.join("summary.csv"), &csv)?;
    print!("{csv}");
    if failures == frames.len() {
        return Err(Error::DegenerateShape("every frame failed".into()));
    }
    Ok(())
}
