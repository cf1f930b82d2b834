//! Checks shared by the integration tests and the acceptance run. Every
//! check returns whether it passed and a one-line summary of what it saw.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use isoseg::energy::{
    energy_with, freeze, gradient, EnergyConfig, EnergyTerms, Gradient, Params, Pose, Prior,
};
use isoseg::grid::{curve_integral, region_integral, ScalarField, Side};
use isoseg::levelset::{signed_distance, BinaryMask};
use isoseg::models::{pca, train_appearance, train_shape, AppearanceModel, ShapeModel};
use isoseg::photogeom::{extract_profile, tau_grid, DEFAULT_BINS};
use isoseg::synth::{leopard_spots, render, FighterParams, FIGHTER_BACKGROUND, FIGHTER_STYLE};

pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    pub fn assert(self) {
        assert!(self.pass, "{}", self.detail);
    }
}

pub fn is_descending(trace: &[EnergyTerms]) -> bool {
    trace.windows(2).all(|w| w[1].total <= w[0].total)
}

// ---------------------------------------------------------------- gradients

const N: usize = 64;

fn ellipse(a: f64, b: f64, cx: f64, cy: f64) -> BinaryMask {
    BinaryMask::from_fn(N, N, |x, y| {
        let dx = (x as f64 - cx) / a;
        let dy = (y as f64 - cy) / b;
        dx * dx + dy * dy < 1.0
    })
    .unwrap()
}

/// Interior brightens with depth and carries stripes; flat background.
fn shaded(mask: &BinaryMask, rng: &mut ChaCha8Rng) -> ScalarField {
    let sdf = signed_distance(mask).unwrap();
    let gain = rng.random_range(3.0..5.0);
    let freq = rng.random_range(0.2..0.4);
    ScalarField::from_fn(N, N, |x, y| {
        let d = sdf.field.get(x, y);
        if d < 0.0 {
            160.0 - gain * d + 20.0 * (freq * x as f64).sin()
        } else {
            90.0
        }
    })
    .unwrap()
}

pub struct GradientInstance {
    pub image: ScalarField,
    pub shape: ShapeModel,
    pub appearance: AppearanceModel,
    pub params: Params,
    pub pose: Pose,
}

/// A random 64×64 problem with K = L = 2 and a random state near the models.
pub fn gradient_instance(seed: u64) -> GradientInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = (N as f64 - 1.0) / 2.0;
    let mut sdfs = Vec::new();
    let mut profiles = Vec::new();
    for _ in 0..5 {
        let m = ellipse(rng.random_range(12.0..18.0), rng.random_range(9.0..14.0), c, c);
        let img = shaded(&m, &mut rng);
        let sdf = signed_distance(&m).unwrap();
        profiles.push(extract_profile(&img, &sdf, 16).unwrap());
        sdfs.push(sdf);
    }
    let truth = ellipse(
        rng.random_range(12.0..18.0),
        rng.random_range(9.0..14.0),
        c + rng.random_range(-3.0..3.0),
        c + rng.random_range(-3.0..3.0),
    );
    let clean = shaded(&truth, &mut rng);
    let noisy: Vec<f64> = clean.values().iter().map(|v| v + rng.random_range(-5.0..5.0)).collect();
    let shape = train_shape(&sdfs, 2).unwrap();
    let appearance = train_appearance(&profiles, 2).unwrap();
    let params = Params {
        w: shape.singular_values.iter().map(|s| rng.random_range(-0.5..0.5) * s).collect(),
        v: appearance.singular_values.iter().map(|s| rng.random_range(-0.5..0.5) * s).collect(),
    };
    let pose = Pose::new(
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-0.2..0.2),
        rng.random_range(0.9..1.1),
    )
    .unwrap();
    GradientInstance {
        image: ScalarField::new(N, N, noisy).unwrap(),
        shape,
        appearance,
        params,
        pose,
    }
}

fn shifted(params: &Params, pose: &Pose, dir: &Gradient, s: f64) -> (Params, Pose) {
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
    (p, Pose::from_array(q))
}

fn zero_like(g: &Gradient) -> Gradient {
    Gradient {
        pose: [0.0; 4],
        shape: vec![0.0; g.shape.len()],
        appearance: vec![0.0; g.appearance.len()],
    }
}

fn dot(g: &Gradient, d: &Gradient) -> f64 {
    let p: f64 = g.pose.iter().zip(&d.pose).map(|(a, b)| a * b).sum();
    let s: f64 = g.shape.iter().zip(&d.shape).map(|(a, b)| a * b).sum();
    let a: f64 = g.appearance.iter().zip(&d.appearance).map(|(a, b)| a * b).sum();
    p + s + a
}

pub struct GradientReport {
    /// Relative errors per instance for pose, shape, appearance.
    pub errors: Vec<[f64; 3]>,
    /// Cosine between the analytic and the finite-difference appearance
    /// gradient, per instance.
    pub cosines: Vec<f64>,
}

pub fn gradient_report(instances: usize) -> GradientReport {
    let config = EnergyConfig::default();
    let mut errors = Vec::new();
    let mut cosines = Vec::new();
    for seed in 0..instances as u64 {
        let fx = gradient_instance(1000 + seed);
        let prior = Prior::Decoupled {
            shape: &fx.shape,
            appearance: &fx.appearance,
        };
        let frozen = freeze(&fx.image, &prior, &fx.params, &fx.pose, &config).unwrap();
        let g = gradient(&fx.image, &prior, &fx.params, &fx.pose, &frozen, &config).unwrap();
        let fd = |dir: &Gradient, h: f64| {
            let e = |s: f64| {
                let (p, q) = shifted(&fx.params, &fx.pose, dir, s);
                energy_with(&fx.image, &prior, &p, &q, &frozen, &config).unwrap().total
            };
            (e(h) - e(-h)) / (2.0 * h)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rel = [0.0; 3];
        for (group, r) in rel.iter_mut().enumerate() {
            let mut d = zero_like(&g);
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
                    for (x, s) in d.shape.iter_mut().zip(&fx.shape.singular_values) {
                        *x = rng.random_range(-0.1..0.1) * s;
                    }
                }
                _ => {
                    for (x, s) in d.appearance.iter_mut().zip(&fx.appearance.singular_values) {
                        *x = rng.random_range(-0.1..0.1) * s;
                    }
                }
            }
            let analytic = dot(&g, &d);
            let numeric = fd(&d, 1e-3);
            *r = (analytic - numeric).abs() / numeric.abs().max(1e-9);
        }
        errors.push(rel);

        let numeric: Vec<f64> = (0..g.appearance.len())
            .map(|j| {
                let mut d = zero_like(&g);
                d.appearance[j] = 1.0;
                fd(&d, 1e-2)
            })
            .collect();
        let ab: f64 = g.appearance.iter().zip(&numeric).map(|(a, b)| a * b).sum();
        let aa: f64 = g.appearance.iter().map(|a| a * a).sum();
        let bb: f64 = numeric.iter().map(|b| b * b).sum();
        cosines.push(ab / (aa.sqrt() * bb.sqrt()));
    }
    GradientReport { errors, cosines }
}

pub fn check_gradients(instances: usize) -> Check {
    let r = gradient_report(instances);
    let n = r.errors.len();
    let within: Vec<usize> = (0..3).map(|g| r.errors.iter().filter(|e| e[g] <= 0.05).count()).collect();
    let min_cos = r.cosines.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = within.iter().all(|&w| w * 10 >= n * 9) && min_cos >= 0.999;
    Check::new(
        pass,
        format!(
            "within 5%: pose {}/{n}, shape {}/{n}, appearance {}/{n}; min appearance cosine {min_cos:.6}",
            within[0], within[1], within[2]
        ),
    )
}

// ------------------------------------------------------------------ oracles

/// Signed distance to the nearest midpoint between 4-connected object and
/// background pixels, by exhaustive search.
pub fn boundary_midpoint_distance(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = mask.dims();
    let mut midpoints = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w && mask.get(x, y) != mask.get(x + 1, y) {
                midpoints.push((x as f64 + 0.5, y as f64));
            }
            if y + 1 < h && mask.get(x, y) != mask.get(x, y + 1) {
                midpoints.push((x as f64, y as f64 + 0.5));
            }
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let d = midpoints
                .iter()
                .map(|&(u, v)| (u - x as f64).hypot(v - y as f64))
                .fold(f64::INFINITY, f64::min);
            out.push(if mask.get(x, y) { -d } else { d });
        }
    }
    out
}

fn random_blobs(size: usize, seed: u64) -> BinaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let s = size as f64;
            (
                rng.random_range(0.25 * s..0.75 * s),
                rng.random_range(0.25 * s..0.75 * s),
                rng.random_range(3.0..0.2 * s),
                rng.random_range(3.0..0.2 * s),
            )
        })
        .collect();
    BinaryMask::from_fn(size, size, |x, y| {
        blobs.iter().any(|&(cx, cy, a, b)| {
            let dx = (x as f64 - cx) / a;
            let dy = (y as f64 - cy) / b;
            dx * dx + dy * dy < 1.0
        })
    })
    .unwrap()
}

pub fn check_sdf_oracle() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mask = random_blobs(40, seed);
        let sdf = signed_distance(&mask).unwrap();
        for (a, b) in sdf.field.values().iter().zip(boundary_midpoint_distance(&mask)) {
            worst = worst.max((a - b).abs());
        }
    }
    Check::new(worst <= 1.0, format!("max |SDF - brute force| = {worst:.3} px"))
}

/// A fighter on a leopard texture, its mask and the image.
pub fn leopard_fighter(seed: u64) -> (ScalarField, BinaryMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fighter = FighterParams::random(&mut rng);
    let mask = fighter.mask(128, 128, &Pose::identity()).unwrap();
    let spots = leopard_spots(128, 128, &mut rng).unwrap();
    let background = ScalarField::filled(128, 128, FIGHTER_BACKGROUND).unwrap();
    let image = render(&mask, &FIGHTER_STYLE, Some(&spots), &background).unwrap();
    (image, mask)
}

/// Mean intensity near each iso-contour of the object, weighting interior
/// pixels by a raised-cosine kernel in distance times the gradient norm.
pub fn smoothed_dirac_profile(image: &ScalarField, psi: &ScalarField, nodes: usize, eps: f64) -> Vec<f64> {
    let (w, h) = psi.dims();
    let depth = -psi.min();
    let grad = |x: usize, y: usize| {
        let at = |x: usize, y: usize| psi.get(x, y);
        let gx = (at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y))
            / ((x + 1).min(w - 1) - x.saturating_sub(1)) as f64;
        let gy = (at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1)))
            / ((y + 1).min(h - 1) - y.saturating_sub(1)) as f64;
        gx.hypot(gy)
    };
    tau_grid(nodes)
        .into_iter()
        .map(|tau| {
            let level = tau * depth;
            let (mut num, mut den) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let p = psi.get(x, y);
                    let t = p - level;
                    if p >= 0.0 || t.abs() >= eps {
                        continue;
                    }
                    let k = 0.5 * (1.0 + (PI * t / eps).cos()) * grad(x, y);
                    num += k * image.get(x, y);
                    den += k;
                }
            }
            num / den
        })
        .collect()
}

pub fn relative_l2(a: &[f64], reference: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(reference).map(|(x, y)| (x - y).powi(2)).sum();
    let r: f64 = reference.iter().map(|y| y * y).sum();
    (d / r).sqrt()
}

pub fn relative_linf(a: &[f64], reference: &[f64]) -> f64 {
    let d = a.iter().zip(reference).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    d / reference.iter().map(|y| y.abs()).fold(0.0, f64::max)
}

pub fn check_profile_oracle() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let (image, mask) = leopard_fighter(seed);
        let sdf = signed_distance(&mask).unwrap();
        let p = extract_profile(&image, &sdf, DEFAULT_BINS).unwrap();
        let oracle = smoothed_dirac_profile(&image, &sdf.field, DEFAULT_BINS, 1.0);
        worst = worst.max(relative_l2(p.samples(), &oracle));
    }
    Check::new(worst <= 0.02, format!("profile vs smoothed-Dirac oracle: L2 {:.2}%", 100.0 * worst))
}

pub fn check_disc_integrals() -> Check {
    let mut worst_area = 0.0f64;
    let mut worst_perimeter = 0.0f64;
    for &(cx, cy, r) in &[(63.5, 63.5, 20.0), (60.2, 70.7, 12.5), (64.0, 61.3, 35.0)] {
        let psi = ScalarField::from_fn(128, 128, |x, y| (x as f64 - cx).hypot(y as f64 - cy) - r).unwrap();
        let one = ScalarField::filled(128, 128, 1.0).unwrap();
        let area = region_integral(&one, &psi, Side::Inside, 1.5).unwrap();
        let perimeter = curve_integral(&one, &psi, 1.5).unwrap();
        worst_area = worst_area.max((area - PI * r * r).abs() / (PI * r * r));
        worst_perimeter = worst_perimeter.max((perimeter - 2.0 * PI * r).abs() / (2.0 * PI * r));
    }
    Check::new(
        worst_area <= 0.02 && worst_perimeter <= 0.03,
        format!(
            "disc area error {:.3}%, perimeter error {:.3}%",
            100.0 * worst_area,
            100.0 * worst_perimeter
        ),
    )
}

// --------------------------------------------------------------- invariance

fn rotate_quarter_and_shift<T: Copy>(values: &[T], n: usize, dx: isize, dy: isize, fill: T) -> Vec<T> {
    // new(x, y) = old(y, n-1-x) before the shift
    let mut out = vec![fill; n * n];
    for y in 0..n {
        for x in 0..n {
            let (sx, sy) = (x as isize - dx, y as isize - dy);
            if sx < 0 || sy < 0 || sx >= n as isize || sy >= n as isize {
                continue;
            }
            let (ox, oy) = (sy as usize, n - 1 - sx as usize);
            out[y * n + x] = values[oy * n + ox];
        }
    }
    out
}

/// Fighter with intensity tied to normalized depth plus a texture fixed in
/// object coordinates, drawn at `scale` on a `size` canvas.
fn scaled_fighter(fighter: &FighterParams, size: usize, scale: f64) -> (ScalarField, BinaryMask) {
    let pose = Pose::new(0.0, 0.0, 0.0, scale).unwrap();
    let mask = fighter.mask(size, size, &pose).unwrap();
    let sdf = signed_distance(&mask).unwrap();
    let depth = -sdf.min_value;
    let c = (size as f64 - 1.0) / 2.0;
    let image = ScalarField::from_fn(size, size, |x, y| {
        let psi = sdf.field.get(x, y);
        if psi >= 0.0 {
            return 130.0;
        }
        let u = pose.apply_inverse([x as f64 - c, y as f64 - c]);
        110.0 + 60.0 * (-psi / depth) + 15.0 * (u[0] / 4.0).sin() * (u[1] / 6.0).cos()
    })
    .unwrap();
    (image, mask)
}

pub fn check_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let fighter = FighterParams::random(&mut rng);

    let n = 160;
    let (image, mask) = scaled_fighter(&fighter, n, 1.0);
    let base = extract_profile(&image, &signed_distance(&mask).unwrap(), DEFAULT_BINS).unwrap();
    let rot_image = rotate_quarter_and_shift(image.values(), n, 9, -6, 130.0);
    let rot_mask = rotate_quarter_and_shift(mask.data(), n, 9, -6, false);
    let rot_image = ScalarField::new(n, n, rot_image).unwrap();
    let rot_mask = BinaryMask::new(n, n, rot_mask).unwrap();
    let rotated = extract_profile(&rot_image, &signed_distance(&rot_mask).unwrap(), DEFAULT_BINS).unwrap();
    let linf = relative_linf(rotated.samples(), base.samples());

    let (small_image, small_mask) = scaled_fighter(&fighter, 128, 1.0);
    let (big_image, big_mask) = scaled_fighter(&fighter, 256, 2.0);
    let small = extract_profile(&small_image, &signed_distance(&small_mask).unwrap(), DEFAULT_BINS).unwrap();
    let big = extract_profile(&big_image, &signed_distance(&big_mask).unwrap(), DEFAULT_BINS).unwrap();
    let l2 = relative_l2(big.samples(), small.samples());

    Check::new(
        linf <= 0.02 && l2 <= 0.03,
        format!(
            "rotated+translated L-inf {:.3}%, 2x scaled L2 {:.3}%",
            100.0 * linf,
            100.0 * l2
        ),
    )
}

// ---------------------------------------------------------------------- PCA

pub fn check_pca() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 15;
    let dim = 60;
    // a few strong directions plus small isotropic noise
    let basis: Vec<Vec<f64>> = (0..4).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let vectors: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let coeffs: Vec<f64> = (0..4).map(|k| rng.random_range(-1.0..1.0) * (4 - k) as f64).collect();
            (0..dim)
                .map(|i| {
                    5.0 + basis.iter().zip(&coeffs).map(|(b, c)| b[i] * c).sum::<f64>()
                        + rng.random_range(-0.05..0.05)
                })
                .collect()
        })
        .collect();

    let full = pca(&vectors, n - 1).unwrap();
    let mut ortho = 0.0f64;
    for (i, a) in full.components.iter().enumerate() {
        for (j, b) in full.components.iter().enumerate() {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let expected = if i == j { 1.0 } else { 0.0 };
            ortho = ortho.max((d - expected).abs());
        }
    }
    let mut recon = 0.0f64;
    for v in &vectors {
        let r = full.reconstruct(&full.project(v));
        for (a, b) in r.iter().zip(v) {
            recon = recon.max((a - b).abs());
        }
    }
    let errors: Vec<f64> = (0..n)
        .map(|k| {
            let model = pca(&vectors, k).unwrap();
            vectors
                .iter()
                .map(|v| {
                    let r = model.reconstruct(&model.project(v));
                    r.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                })
                .sum()
        })
        .collect();
    let monotone = errors.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
    Check::new(
        ortho <= 1e-8 && recon <= 1e-9 && monotone,
        format!("orthonormality {ortho:.1e}, full-rank reconstruction {recon:.1e}, monotone error {monotone}"),
    )
}
