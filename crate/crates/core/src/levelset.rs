//! Binary masks, exact signed distance fields and shape alignment.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{heaviside, ScalarField};
use crate::pose::{warp_field, Pose, POSE_DIM};

/// Per-pixel object membership (`true` = object).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "expected {} mask entries for {width}x{height}, got {}",
                width * height,
                data.len()
            )));
        }
        if width < 3 || height < 3 {
            return Err(Error::invalid("mask must be at least 3x3"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_degenerate(&self) -> bool {
        let a = self.area();
        a == 0 || a == self.data.len()
    }

    /// Centroid of the object pixels in pixel coordinates.
    pub fn centroid(&self) -> Option<[f64; 2]> {
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut n = 0usize;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| [sx / n as f64, sy / n as f64])
    }

    /// Pixels where the object touches the background through a 4-neighbor.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                let differs = (x > 0 && self.get(x - 1, y) != v)
                    || (x + 1 < self.width && self.get(x + 1, y) != v)
                    || (y > 0 && self.get(x, y - 1) != v)
                    || (y + 1 < self.height && self.get(x, y + 1) != v);
                if v && differs {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Signed Euclidean distance to an object boundary; negative inside.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedDistanceField {
    pub field: ScalarField,
    pub min_value: f64,
}

impl SignedDistanceField {
    pub fn from_field(field: ScalarField) -> Self {
        let min_value = field.min();
        Self { field, min_value }
    }
}

const FAR: f64 = 1e20;

/// One-dimensional squared distance transform of a sampled function
/// (lower envelope of parabolas).
fn squared_dt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        loop {
            let p = v[k];
            let pf = p as f64;
            let s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf));
            if s <= z[k] {
                if k == 0 {
                    // the new parabola dominates everything so far
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let d = qf - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Two-pass squared Euclidean distance transform of a grid whose zero
/// entries are the features.
fn squared_dt_2d(values: &mut [f64], width: usize, height: usize) {
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..width {
        for y in 0..height {
            f[y] = values[y * width + x];
        }
        squared_dt_1d(&f[..height], &mut out[..height], &mut v, &mut z);
        for y in 0..height {
            values[y * width + x] = out[y];
        }
    }
    for y in 0..height {
        let row = &mut values[y * width..(y + 1) * width];
        f[..width].copy_from_slice(row);
        squared_dt_1d(&f[..width], &mut out[..width], &mut v, &mut z);
        row.copy_from_slice(&out[..width]);
    }
}

/// Exact signed distance to the object boundary, where the boundary runs
/// through the midpoints between 4-connected object/background pixel pairs.
pub fn signed_distance(mask: &BinaryMask) -> Result<SignedDistanceField> {
    if mask.is_degenerate() {
        return Err(Error::DegenerateShape(
            "mask needs both object and background pixels".into(),
        ));
    }
    let (w, h) = mask.dims();
    // Doubled grid: pixel (x, y) sits at (2x, 2y), midpoints at odd offsets.
    let fw = 2 * w - 1;
    let fh = 2 * h - 1;
    let mut fine = vec![FAR; fw * fh];
    for y in 0..h {
        for x in 0..w {
            let v = mask.get(x, y);
            if x + 1 < w && mask.get(x + 1, y) != v {
                fine[2 * y * fw + 2 * x + 1] = 0.0;
            }
            if y + 1 < h && mask.get(x, y + 1) != v {
                fine[(2 * y + 1) * fw + 2 * x] = 0.0;
            }
        }
    }
    squared_dt_2d(&mut fine, fw, fh);
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let d = 0.5 * fine[2 * y * fw + 2 * x].sqrt();
            values.push(if mask.get(x, y) { -d } else { d });
        }
    }
    Ok(SignedDistanceField::from_field(ScalarField::from_parts(w, h, values)))
}

/// Object region `{levelset < 0}`; may be empty.
pub fn mask_from_levelset(field: &ScalarField) -> BinaryMask {
    BinaryMask {
        width: field.width(),
        height: field.height(),
        data: field.values().iter().map(|&v| v < 0.0).collect(),
    }
}

/// Jaccard index of two masks; 1 when both are empty.
pub fn jaccard(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &q) in a.data.iter().zip(&b.data) {
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Result of [`align_shapes`]. Pose `i` maps shape `i` into the frame of the
/// first shape; `sdfs[i]` is the signed distance field of the mapped shape.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub poses: Vec<Pose>,
    pub sdfs: Vec<SignedDistanceField>,
    /// Pairwise Jaccard sum after alignment.
    pub score: f64,
    /// Pairwise Jaccard sum with every pose at identity.
    pub initial_score: f64,
    /// False when the search hit its iteration cap; the result is still the
    /// best found.
    pub converged: bool,
}

const ALIGN_SOFT_WIDTH: f64 = 1.0;
const ALIGN_MAX_ITERS: usize = 400;
const ALIGN_SWEEPS: usize = 3;
const ALIGN_STEP: [f64; POSE_DIM] = [1.0, 1.0, 0.05, 0.03];
const ALIGN_MIN_STEP: [f64; POSE_DIM] = [0.02, 0.02, 1e-3, 5e-4];
const ALIGN_PROBE: [f64; POSE_DIM] = [0.25, 0.25, 0.01, 0.005];

fn soft_membership(sdf: &ScalarField, pose: &Pose) -> Vec<f64> {
    warp_field(sdf, pose, sdf.width(), sdf.height())
        .values()
        .iter()
        .map(|&v| heaviside(-v, ALIGN_SOFT_WIDTH))
        .collect()
}

fn soft_jaccard(a: &[f64], b: &[f64]) -> f64 {
    let mut inter = 0.0;
    let mut union = 0.0;
    for (&p, &q) in a.iter().zip(b) {
        inter += p.min(q);
        union += p.max(q);
    }
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Coordinate-wise ascent using central-difference probes for the search
/// direction. Returns the best pose, its objective and whether all step
/// sizes shrank below their floor.
fn coordinate_ascent(objective: impl Fn(&Pose) -> f64, start: Pose) -> (Pose, f64, bool) {
    let mut best = start.to_array();
    let mut best_val = objective(&start);
    let mut step = ALIGN_STEP;
    let eval = |a: [f64; POSE_DIM]| objective(&Pose::from_array(a).normalized());
    for _ in 0..ALIGN_MAX_ITERS {
        if (0..POSE_DIM).all(|k| step[k] < ALIGN_MIN_STEP[k]) {
            return (Pose::from_array(best).normalized(), best_val, true);
        }
        for k in 0..POSE_DIM {
            if step[k] < ALIGN_MIN_STEP[k] {
                continue;
            }
            let mut plus = best;
            let mut minus = best;
            plus[k] += ALIGN_PROBE[k];
            minus[k] -= ALIGN_PROBE[k];
            let slope = eval(plus) - eval(minus);
            let dirs: &[f64] = if slope > 0.0 {
                &[1.0]
            } else if slope < 0.0 {
                &[-1.0]
            } else {
                &[1.0, -1.0]
            };
            let mut improved = false;
            for &d in dirs {
                let mut trial = best;
                trial[k] += d * step[k];
                let val = eval(trial);
                if val > best_val {
                    best = Pose::from_array(trial).normalized().to_array();
                    best_val = val;
                    improved = true;
                    break;
                }
            }
            if improved {
                step[k] = (step[k] * 1.5).min(4.0 * ALIGN_STEP[k]);
            } else {
                step[k] *= 0.5;
            }
        }
    }
    (Pose::from_array(best).normalized(), best_val, false)
}

fn centered(p: [f64; 2], field: &ScalarField) -> [f64; 2] {
    let c = field.center();
    [p[0] - c[0], p[1] - c[1]]
}

fn hard_score(sdfs: &[SignedDistanceField], poses: &[Pose]) -> f64 {
    let masks: Vec<BinaryMask> = sdfs
        .iter()
        .zip(poses)
        .map(|(s, p)| mask_from_levelset(&warp_field(&s.field, p, s.field.width(), s.field.height())))
        .collect();
    let mut total = 0.0;
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            total += jaccard(&masks[i], &masks[j]);
        }
    }
    total
}

/// Aligns every shape to the first one by maximizing the summed pairwise
/// overlap (Jaccard index) of the mapped regions. Each pose is searched by
/// coordinate ascent from four rotation starts (0°, 90°, 180°, 270°)
/// seeded with centroid and area matching, then refined against all other
/// shapes in a few Gauss–Seidel sweeps.
pub fn align_shapes(masks: &[BinaryMask]) -> Result<Alignment> {
    if masks.len() < 2 {
        return Err(Error::invalid("alignment needs at least two masks"));
    }
    let dims = masks[0].dims();
    if let Some(m) = masks.iter().find(|m| m.dims() != dims) {
        return Err(Error::DimensionMismatch {
            expected: dims,
            found: m.dims(),
        });
    }
    let sdfs = masks.iter().map(signed_distance).collect::<Result<Vec<_>>>()?;
    let n = masks.len();
    let identity = vec![Pose::identity(); n];
    let initial_score = hard_score(&sdfs, &identity);

    let reference = soft_membership(&sdfs[0].field, &Pose::identity());
    let ref_centroid = centered(masks[0].centroid().expect("non-degenerate"), &sdfs[0].field);
    let ref_area = masks[0].area() as f64;

    // Phase 1: pairwise against the reference, shapes independent.
    let phase1: Vec<(Pose, bool)> = (1..n)
        .into_par_iter()
        .map(|i| {
            let field = &sdfs[i].field;
            let objective = |p: &Pose| soft_jaccard(&soft_membership(field, p), &reference);
            let c = centered(masks[i].centroid().expect("non-degenerate"), field);
            let scale = (ref_area / masks[i].area() as f64).sqrt().clamp(0.5, 2.0);
            let mut starts = vec![Pose::identity()];
            for k in 0..4 {
                let theta = k as f64 * std::f64::consts::FRAC_PI_2;
                let probe = Pose {
                    tx: 0.0,
                    ty: 0.0,
                    theta,
                    scale,
                };
                let moved = probe.apply(c);
                starts.push(Pose {
                    tx: ref_centroid[0] - moved[0],
                    ty: ref_centroid[1] - moved[1],
                    ..probe
                });
            }
            let mut best: Option<(Pose, f64, bool)> = None;
            for s in starts {
                let r = coordinate_ascent(objective, s.normalized());
                if best.as_ref().is_none_or(|b| r.1 > b.1) {
                    best = Some(r);
                }
            }
            let (pose, _, conv) = best.expect("at least one start");
            (pose, conv)
        })
        .collect();

    let mut poses = identity.clone();
    let mut converged = true;
    for (i, (p, c)) in phase1.into_iter().enumerate() {
        poses[i + 1] = p;
        converged &= c;
    }

    // Phase 2: refine each pose against all other mapped shapes.
    let mut soft: Vec<Vec<f64>> = sdfs
        .iter()
        .zip(&poses)
        .map(|(s, p)| soft_membership(&s.field, p))
        .collect();
    for _ in 0..ALIGN_SWEEPS {
        let mut moved = false;
        for i in 1..n {
            let field = &sdfs[i].field;
            let others: Vec<&Vec<f64>> = (0..n).filter(|&j| j != i).map(|j| &soft[j]).collect();
            let objective = |p: &Pose| {
                let m = soft_membership(field, p);
                others.iter().map(|o| soft_jaccard(&m, o)).sum::<f64>()
            };
            let (p, _, conv) = coordinate_ascent(objective, poses[i]);
            converged &= conv;
            if p != poses[i] {
                moved = true;
                poses[i] = p;
                soft[i] = soft_membership(field, &p);
            }
        }
        if !moved {
            break;
        }
    }

    let mut score = hard_score(&sdfs, &poses);
    if score < initial_score {
        poses = identity;
        score = initial_score;
    }
    if !converged {
        log::warn!("shape alignment stopped at the iteration cap; using best poses found");
    }

    let aligned = sdfs
        .iter()
        .zip(&poses)
        .map(|(s, p)| {
            let warped = warp_field(&s.field, p, dims.0, dims.1);
            signed_distance(&mask_from_levelset(&warped))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Alignment {
        poses,
        sdfs: aligned,
        score,
        initial_score,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| (x as f64 - cx).hypot(y as f64 - cy) < r).unwrap()
    }

    /// ± distance to the nearest boundary midpoint, by exhaustive search.
    fn brute_force_sdf(mask: &BinaryMask) -> Vec<f64> {
        let (w, h) = mask.dims();
        let mut mids = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w && mask.get(x, y) != mask.get(x + 1, y) {
                    mids.push((x as f64 + 0.5, y as f64));
                }
                if y + 1 < h && mask.get(x, y) != mask.get(x, y + 1) {
                    mids.push((x as f64, y as f64 + 0.5));
                }
            }
        }
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let d = mids
                    .iter()
                    .map(|&(mx, my)| (mx - x as f64).hypot(my - y as f64))
                    .fold(f64::INFINITY, f64::min);
                out.push(if mask.get(x, y) { -d } else { d });
            }
        }
        out
    }

    #[test]
    fn disc_sdf_matches_brute_force() {
        let mask = disc(128, 128, 64.0, 64.0, 20.0);
        let sdf = signed_distance(&mask).unwrap();
        let oracle = brute_force_sdf(&mask);
        for (a, b) in sdf.field.values().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
        assert!((sdf.field.get(64, 64) + 19.5).abs() <= 1.0);
        let corner = 64.0f64.hypot(64.0) - 20.0;
        assert!((sdf.field.get(0, 0) - corner).abs() <= 1.0);
        assert!(sdf.min_value < 0.0);
    }

    #[test]
    fn irregular_mask_matches_brute_force() {
        let mask = BinaryMask::from_fn(23, 17, |x, y| {
            ((x * 7 + y * 3) % 11 < 4) || (x > 12 && y > 5 && y < 12)
        })
        .unwrap();
        let sdf = signed_distance(&mask).unwrap();
        for (a, b) in sdf.field.values().iter().zip(brute_force_sdf(&mask)) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn half_plane_is_linear_in_x() {
        let mask = BinaryMask::from_fn(40, 20, |x, _| x < 20).unwrap();
        let sdf = signed_distance(&mask).unwrap();
        for y in 0..20 {
            for x in 0..40 {
                // boundary between columns 19 and 20
                let expected = x as f64 - 19.5;
                assert!((sdf.field.get(x, y) - expected).abs() <= 0.5);
            }
        }
    }

    #[test]
    fn thin_object_and_degenerate_masks() {
        let row = BinaryMask::from_fn(30, 9, |_, y| y == 4).unwrap();
        assert!(signed_distance(&row).unwrap().min_value >= -1.0);
        let empty = BinaryMask::from_fn(8, 8, |_, _| false).unwrap();
        let full = BinaryMask::from_fn(8, 8, |_, _| true).unwrap();
        assert!(matches!(signed_distance(&empty), Err(Error::DegenerateShape(_))));
        assert!(matches!(signed_distance(&full), Err(Error::DegenerateShape(_))));
    }

    #[test]
    fn boundary_pixels_are_half_a_pixel_away() {
        let mask = BinaryMask::from_fn(31, 29, |x, y| (x * x + 3 * y) % 17 < 9).unwrap();
        let sdf = signed_distance(&mask).unwrap();
        for (x, y) in mask.boundary() {
            assert!(sdf.field.get(x, y).abs() <= 1.0);
        }
    }

    #[test]
    fn levelset_round_trips() {
        let mask = disc(64, 64, 30.0, 33.0, 12.0);
        let sdf = signed_distance(&mask).unwrap();
        assert_eq!(mask_from_levelset(&sdf.field), mask);
        let again = signed_distance(&mask_from_levelset(&sdf.field)).unwrap();
        assert_eq!(again, sdf);
        let pos = ScalarField::filled(8, 8, 1.0).unwrap();
        assert_eq!(mask_from_levelset(&pos).area(), 0);
    }

    #[test]
    fn align_recovers_translation() {
        let a = disc(96, 96, 40.0, 48.0, 14.0);
        let b = disc(96, 96, 50.0, 48.0, 14.0);
        let out = align_shapes(&[a, b]).unwrap();
        assert_eq!(out.poses[0], Pose::identity());
        assert!((out.poses[1].tx + 10.0).abs() < 0.5, "{:?}", out.poses[1]);
        assert!(out.poses[1].ty.abs() < 0.5);
        assert!(out.score >= out.initial_score);
        assert!(out.score > 0.95);
    }

    #[test]
    fn align_identical_shapes_stays_at_identity() {
        let m = BinaryMask::from_fn(64, 64, |x, y| {
            (x > 20 && x < 44 && y > 28 && y < 36) || (x > 28 && x < 36 && y > 12 && y < 50)
        })
        .unwrap();
        let out = align_shapes(&[m.clone(), m.clone(), m.clone(), m]).unwrap();
        for p in &out.poses {
            assert_eq!(*p, Pose::identity());
        }
        assert!((out.score - 6.0).abs() < 1e-6);
    }

    #[test]
    fn align_recovers_scale() {
        let a = disc(96, 96, 47.5, 47.5, 15.0);
        let b = disc(96, 96, 47.5, 47.5, 18.0);
        let out = align_shapes(&[a, b]).unwrap();
        let s = out.poses[1].scale;
        assert!((s - 1.0 / 1.2).abs() / (1.0 / 1.2) < 0.05, "scale {s}");
    }
}
