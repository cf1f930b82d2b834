//! Procedural test data: fighter-like silhouettes, discs, a beetle-like
//! silhouette and short tracking sequences, rendered with a depth-shaded,
//! spotted texture. Everything is deterministic for a given seed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::levelset::{signed_distance, BinaryMask};
use crate::pose::Pose;

pub const DEFAULT_SIZE: usize = 128;

/// An image with its ground-truth object mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: ScalarField,
    pub mask: BinaryMask,
}

type Polygon = Vec<[f64; 2]>;

fn inside_polygon(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1])
            && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0]
        {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Rasterizes a union of polygons given in object coordinates (origin at
/// the grid center) after applying `pose`.
fn rasterize(parts: &[Polygon], width: usize, height: usize, pose: &Pose) -> Result<BinaryMask> {
    let c = [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0];
    BinaryMask::from_fn(width, height, |x, y| {
        let p = pose.apply_inverse([x as f64 - c[0], y as f64 - c[1]]);
        parts.iter().any(|poly| inside_polygon(poly, p))
    })
}

fn mirrored(half: &[[f64; 2]]) -> Polygon {
    let mut poly: Polygon = half.to_vec();
    poly.extend(half.iter().rev().map(|p| [-p[0], p[1]]));
    poly
}

/// Dimensions of a fighter-like silhouette, nose pointing up, in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FighterParams {
    pub length: f64,
    pub fuselage_width: f64,
    pub nose_length: f64,
    pub wing_span: f64,
    /// Offset of the wing root leading edge from the center, along the body.
    pub wing_position: f64,
    pub wing_sweep: f64,
    pub root_chord: f64,
    pub tip_chord: f64,
    pub tail_span: f64,
    pub tail_chord: f64,
}

impl FighterParams {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            length: rng.random_range(92.0..104.0),
            fuselage_width: rng.random_range(16.0..21.0),
            nose_length: rng.random_range(18.0..26.0),
            wing_span: rng.random_range(78.0..100.0),
            wing_position: rng.random_range(-10.0..2.0),
            wing_sweep: rng.random_range(14.0..28.0),
            root_chord: rng.random_range(34.0..44.0),
            tip_chord: rng.random_range(6.0..12.0),
            tail_span: rng.random_range(34.0..48.0),
            tail_chord: rng.random_range(10.0..16.0),
        }
    }

    fn parts(&self) -> Vec<Polygon> {
        let l = self.length / 2.0;
        let f = self.fuselage_width / 2.0;
        let fuselage = mirrored(&[
            [0.0, -l],
            [0.45 * f, -l + 0.4 * self.nose_length],
            [f, -l + self.nose_length],
            [f, l - 3.0],
            [0.8 * f, l],
        ]);
        let s = self.wing_span / 2.0;
        let y0 = self.wing_position;
        let wing = mirrored(&[
            [0.0, y0],
            [s, y0 + self.wing_sweep],
            [s, y0 + self.wing_sweep + self.tip_chord],
            [0.0, y0 + self.root_chord],
        ]);
        let t = self.tail_span / 2.0;
        let ty = l - self.tail_chord - 4.0;
        let tail = mirrored(&[
            [0.0, ty - 4.0],
            [t, ty + 0.5 * self.tail_chord],
            [t, ty + self.tail_chord],
            [0.0, ty + self.tail_chord + 2.0],
        ]);
        vec![fuselage, wing, tail]
    }

    pub fn mask(&self, width: usize, height: usize, pose: &Pose) -> Result<BinaryMask> {
        rasterize(&self.parts(), width, height, pose)
    }
}

/// A beetle-like silhouette: oval abdomen, pronotum, head and six legs.
pub fn beetle_mask(width: usize, height: usize, pose: &Pose) -> Result<BinaryMask> {
    let ellipse = |cx: f64, cy: f64, a: f64, b: f64, n: usize| -> Polygon {
        (0..n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                [cx + a * t.cos(), cy + b * t.sin()]
            })
            .collect()
    };
    let leg = |x0: f64, y0: f64, x1: f64, y1: f64, x2: f64, y2: f64| -> Polygon {
        let w = 2.2;
        vec![
            [x0, y0 - w],
            [x1, y1 - w],
            [x2, y2 - w * 0.6],
            [x2, y2 + w * 0.6],
            [x1, y1 + w],
            [x0, y0 + w],
        ]
    };
    let mut parts = vec![
        ellipse(0.0, 12.0, 22.0, 30.0, 64),
        ellipse(0.0, -22.0, 17.0, 11.0, 48),
        ellipse(0.0, -36.0, 9.0, 7.0, 32),
    ];
    for side in [-1.0, 1.0] {
        parts.push(leg(0.0, -18.0, side * 26.0, -26.0, side * 32.0, -40.0));
        parts.push(leg(0.0, -6.0, side * 30.0, -2.0, side * 40.0, -10.0));
        parts.push(leg(0.0, 10.0, side * 28.0, 24.0, side * 36.0, 42.0));
    }
    rasterize(&parts, width, height, pose)
}

pub fn disc_mask(width: usize, height: usize, cx: f64, cy: f64, radius: f64) -> Result<BinaryMask> {
    BinaryMask::from_fn(width, height, |x, y| {
        (x as f64 - cx).hypot(y as f64 - cy) < radius
    })
}

/// Leopard-like rosettes: a field in `[0, 1]` that is 1 on the spots.
pub fn leopard_spots(width: usize, height: usize, rng: &mut impl Rng) -> Result<ScalarField> {
    let mut spots = vec![0.0f64; width * height];
    let count = width * height / 110;
    let mut stamp = |cx: f64, cy: f64, r: f64, strength: f64| {
        let x0 = (cx - r - 1.0).floor().max(0.0) as usize;
        let y0 = (cy - r - 1.0).floor().max(0.0) as usize;
        let x1 = ((cx + r + 1.0).ceil() as usize).min(width - 1);
        let y1 = ((cy + r + 1.0).ceil() as usize).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = (x as f64 - cx).hypot(y as f64 - cy);
                let v = strength * (1.0 - ((d - r + 0.5).max(0.0))).clamp(0.0, 1.0);
                let s = &mut spots[y * width + x];
                *s = s.max(v);
            }
        }
    };
    for _ in 0..count {
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let ring = rng.random_range(2.8..4.2);
        let blobs = rng.random_range(4..7);
        let phase = rng.random_range(0.0..2.0 * PI);
        for b in 0..blobs {
            let a = phase + 2.0 * PI * b as f64 / blobs as f64 + rng.random_range(-0.3..0.3);
            stamp(
                cx + ring * a.cos(),
                cy + ring * a.sin(),
                rng.random_range(1.0..1.8),
                1.0,
            );
        }
        stamp(cx, cy, rng.random_range(0.8..1.6), 0.4);
    }
    ScalarField::new(width, height, spots)
}

/// How object pixels are shaded: intensity goes from `rim` at the boundary
/// to `core` deep inside (with length scale `depth` pixels), minus
/// `spot_gain` on texture spots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectStyle {
    pub rim: f64,
    pub core: f64,
    pub depth: f64,
    pub spot_gain: f64,
}

impl ObjectStyle {
    pub fn intensity(&self, psi: f64, spot: f64) -> f64 {
        let t = 1.0 - (psi.min(0.0) / self.depth).exp();
        self.rim + (self.core - self.rim) * t - self.spot_gain * spot
    }
}

/// Renders `mask` with `style` over `background`; `texture` (in `[0, 1]`)
/// modulates object pixels only.
pub fn render(
    mask: &BinaryMask,
    style: &ObjectStyle,
    texture: Option<&ScalarField>,
    background: &ScalarField,
) -> Result<ScalarField> {
    let (w, h) = mask.dims();
    if background.dims() != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            found: background.dims(),
        });
    }
    let sdf = signed_distance(mask)?;
    ScalarField::from_fn(w, h, |x, y| {
        if mask.get(x, y) {
            let spot = texture.map_or(0.0, |t| t.get(x, y));
            style.intensity(sdf.field.get(x, y), spot)
        } else {
            background.get(x, y)
        }
    })
}

pub fn add_noise(image: &ScalarField, variance: f64, rng: &mut impl Rng) -> Result<ScalarField> {
    if !(variance.is_finite() && variance >= 0.0) {
        return Err(Error::invalid("noise variance must be non-negative"));
    }
    if variance == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let values = image.values().iter().map(|v| v + normal.sample(rng)).collect();
    ScalarField::new(image.width(), image.height(), values)
}

/// Paints the top `fraction` of rows with `gray`.
pub fn occlude_top(image: &ScalarField, fraction: f64, gray: f64) -> Result<ScalarField> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("occlusion fraction must lie in [0, 1]"));
    }
    let rows = occluded_rows(image.height(), fraction);
    ScalarField::from_fn(image.width(), image.height(), |x, y| {
        if y < rows {
            gray
        } else {
            image.get(x, y)
        }
    })
}

pub fn occluded_rows(height: usize, fraction: f64) -> usize {
    (fraction * height as f64).round() as usize
}

/// Slowly varying background clutter: `base` plus a few broad blobs of
/// amplitude up to `amplitude`.
pub fn clutter(
    width: usize,
    height: usize,
    base: f64,
    amplitude: f64,
    rng: &mut impl Rng,
) -> Result<ScalarField> {
    let blobs: Vec<(f64, f64, f64, f64)> = (0..8)
        .map(|_| {
            (
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
                rng.random_range(8.0..18.0),
                rng.random_range(-1.0..1.0) * amplitude,
            )
        })
        .collect();
    ScalarField::from_fn(width, height, |x, y| {
        base + blobs
            .iter()
            .map(|&(cx, cy, r, a)| {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                a * (-d2 / (2.0 * r * r)).exp()
            })
            .sum::<f64>()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Fighters,
    Discs,
}

/// Parameters of a training set plus occluded, noisy test image.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub family: Family,
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub noise_variance: f64,
    pub occlusion: f64,
    /// Training sample reused for the test image.
    pub test_index: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            family: Family::Fighters,
            count: 12,
            width: DEFAULT_SIZE,
            height: DEFAULT_SIZE,
            noise_variance: 15.0,
            occlusion: 0.3,
            test_index: 0,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub training: Vec<Sample>,
    /// Test image and the true (unoccluded) object mask.
    pub test: Sample,
    /// Test image before noise was added.
    pub clean_test: ScalarField,
    pub background: f64,
}

pub const FIGHTER_STYLE: ObjectStyle = ObjectStyle {
    rim: 185.0,
    core: 95.0,
    depth: 4.0,
    spot_gain: 55.0,
};
pub const FIGHTER_BACKGROUND: f64 = 130.0;

/// Training samples rendered on a uniform background, and a test image
/// made by superposing one of them on the background gray, painting the
/// top rows with that gray and adding zero-mean Gaussian noise.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    if spec.count < 2 {
        return Err(Error::invalid("need at least two training samples"));
    }
    if spec.test_index >= spec.count {
        return Err(Error::invalid("test index out of range"));
    }
    if spec.width < 32 || spec.height < 32 {
        return Err(Error::invalid("synthetic images must be at least 32x32"));
    }
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let texture = leopard_spots(w, h, &mut rng)?;
    let background = FIGHTER_BACKGROUND;
    let flat = ScalarField::filled(w, h, background)?;
    let unit = w.min(h) as f64 / DEFAULT_SIZE as f64;

    let mut training = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let pose = Pose::new(
            rng.random_range(-4.0..4.0) * unit,
            rng.random_range(-4.0..4.0) * unit,
            rng.random_range(-0.12..0.12),
            unit,
        )?;
        let mask = match spec.family {
            Family::Fighters => FighterParams::random(&mut rng).mask(w, h, &pose)?,
            Family::Discs => {
                let r = rng.random_range(14.0..22.0) * unit;
                let c = [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0];
                disc_mask(w, h, c[0] + pose.tx, c[1] + pose.ty, r)?
            }
        };
        if mask.is_degenerate() {
            return Err(Error::DegenerateShape("generated shape left the canvas".into()));
        }
        let image = render(&mask, &FIGHTER_STYLE, Some(&texture), &flat)?;
        training.push(Sample { image, mask });
    }

    let source = &training[spec.test_index];
    let clean = occlude_top(&source.image, spec.occlusion, background)?;
    let noisy = add_noise(&clean, spec.noise_variance, &mut rng)?;
    Ok(Dataset {
        test: Sample {
            image: noisy,
            mask: source.mask.clone(),
        },
        clean_test: clean,
        training,
        background,
    })
}

/// A noisy shape set built by shifting and rotating one true shape, as
/// used for the K-sweep: the true shape, its image, and the dislocated
/// masks.
#[derive(Clone, Debug)]
pub struct NoisyShapeSet {
    pub truth: Sample,
    pub shapes: Vec<BinaryMask>,
}

pub const BEETLE_STYLE: ObjectStyle = ObjectStyle {
    rim: 105.0,
    core: 215.0,
    depth: 5.0,
    spot_gain: 0.0,
};

/// Beetle-like object on a cluttered background; the shape set holds the
/// true silhouette shifted by `shifts` × `shifts` and rotated by each of
/// `angles`.
pub fn beetle_set(
    size: usize,
    shifts: &[f64],
    angles: &[f64],
    noise_variance: f64,
    seed: u64,
) -> Result<NoisyShapeSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth_mask = beetle_mask(size, size, &Pose::identity())?;
    let bg = clutter(size, size, 110.0, 45.0, &mut rng)?;
    let clean = render(&truth_mask, &BEETLE_STYLE, None, &bg)?;
    let image = add_noise(&clean, noise_variance, &mut rng)?;
    let mut shapes = Vec::new();
    for &dy in shifts {
        for &dx in shifts {
            for &a in angles {
                shapes.push(beetle_mask(size, size, &Pose::new(dx, dy, a, 1.0)?)?);
            }
        }
    }
    Ok(NoisyShapeSet {
        truth: Sample {
            image,
            mask: truth_mask,
        },
        shapes,
    })
}

/// Frames with ground truth, plus training samples for the tracker.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub frames: Vec<Sample>,
    pub training: Vec<Sample>,
    /// Pose of the object in the first frame relative to the grid center.
    pub start: Pose,
}

pub const DISC_STYLE: ObjectStyle = ObjectStyle {
    rim: 170.0,
    core: 120.0,
    depth: 5.0,
    spot_gain: 0.0,
};

/// A shaded disc moving right by `speed` pixels per frame over a uniform
/// background. Training discs are centered with radii around the tracked
/// one.
pub fn moving_disc_sequence(
    size: usize,
    frames: usize,
    speed: f64,
    noise_variance: f64,
    seed: u64,
) -> Result<Sequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = ScalarField::filled(size, size, 90.0)?;
    let c = (size as f64 - 1.0) / 2.0;
    let radius = 0.14 * size as f64;
    let x0 = c - speed * (frames as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let mask = disc_mask(size, size, x0 + speed * f as f64, c, radius)?;
        let clean = render(&mask, &DISC_STYLE, None, &bg)?;
        out.push(Sample {
            image: add_noise(&clean, noise_variance, &mut rng)?,
            mask,
        });
    }
    let training = [0.85, 0.92, 1.0, 1.08, 1.15]
        .iter()
        .map(|s| {
            let mask = disc_mask(size, size, c, c, radius * s)?;
            let image = render(&mask, &DISC_STYLE, None, &bg)?;
            Ok(Sample { image, mask })
        })
        .collect::<Result<_>>()?;
    Ok(Sequence {
        frames: out,
        training,
        start: Pose::translation(x0 - c, 0.0),
    })
}

/// Swimmer-like silhouette whose arms swing with `phase`.
pub fn swimmer_mask(size: usize, phase: f64, pose: &Pose) -> Result<BinaryMask> {
    let s = size as f64 / DEFAULT_SIZE as f64;
    let body: Polygon = (0..48)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / 48.0;
            [13.0 * s * t.cos(), 26.0 * s * t.sin()]
        })
        .collect();
    let head: Polygon = (0..32)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / 32.0;
            [8.0 * s * t.cos(), -32.0 * s + 8.0 * s * t.sin()]
        })
        .collect();
    let arm = |side: f64| -> Polygon {
        let a = side * (0.9 + 0.35 * phase.sin());
        let (sa, ca) = a.sin_cos();
        let (len, half) = (30.0 * s, 4.5 * s);
        let root = [side * 8.0 * s, -16.0 * s];
        let tip = [root[0] + len * sa, root[1] - len * ca];
        let n = [ca * half, sa * half];
        vec![
            [root[0] - n[0], root[1] - n[1]],
            [tip[0] - n[0], tip[1] - n[1]],
            [tip[0] + n[0], tip[1] + n[1]],
            [root[0] + n[0], root[1] + n[1]],
        ]
    };
    rasterize(&[body, head, arm(-1.0), arm(1.0)], size, size, pose)
}

pub const SWIMMER_STYLE: ObjectStyle = ObjectStyle {
    rim: 98.0,
    core: 142.0,
    depth: 5.0,
    spot_gain: 0.0,
};

/// Low-contrast tracking sequence: a swimmer-like object about 20 gray
/// levels brighter than a cluttered background, drifting diagonally while
/// its arms swing. Training samples are frames rendered at other phases.
pub fn low_contrast_sequence(
    size: usize,
    frames: usize,
    noise_variance: f64,
    seed: u64,
) -> Result<Sequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = clutter(size, size, 100.0, 18.0, &mut rng)?;
    let step = [1.0, 0.5];
    let start = Pose::translation(-step[0] * frames as f64 / 2.0, -step[1] * frames as f64 / 2.0);
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let pose = Pose::translation(start.tx + step[0] * f as f64, start.ty + step[1] * f as f64);
        let mask = swimmer_mask(size, 0.4 * f as f64, &pose)?;
        let clean = render(&mask, &SWIMMER_STYLE, None, &bg)?;
        out.push(Sample {
            image: add_noise(&clean, noise_variance, &mut rng)?,
            mask,
        });
    }
    let flat = ScalarField::filled(size, size, 100.0)?;
    let training = (0..4)
        .map(|k| {
            let mask = swimmer_mask(size, 0.4 * (3 * k) as f64 + 0.2, &Pose::identity())?;
            let image = render(&mask, &SWIMMER_STYLE, None, &flat)?;
            Ok(Sample { image, mask })
        })
        .collect::<Result<_>>()?;
    Ok(Sequence {
        frames: out,
        training,
        start,
    })
}
