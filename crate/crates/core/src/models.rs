//! Linear (PCA) priors over shapes, appearance profiles, and the two
//! stacked together.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::levelset::SignedDistanceField;
use crate::photogeom::{PhotoGeomProfile, Profile};

/// Mean, principal directions and singular values of a set of vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
}

impl Pca {
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(v).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, w) in self.components.iter().zip(weights) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += w * ci;
            }
        }
        out
    }
}

/// Principal component analysis of `vectors` keeping the `keep` leading
/// directions. Each component is signed so that its largest-magnitude entry
/// is positive. Directions whose singular value is zero to working
/// precision are returned as zero vectors with singular value 0.
pub fn pca(vectors: &[Vec<f64>], keep: usize) -> Result<Pca> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two vectors"));
    }
    if keep > n - 1 {
        return Err(Error::invalid(format!(
            "cannot keep {keep} components from {n} vectors (at most {})",
            n - 1
        )));
    }
    let dim = vectors[0].len();
    if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::invalid("PCA vectors must share a non-zero length"));
    }
    if vectors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input"));
    }

    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    // Eigen-decomposition of the n×n Gram matrix: n is small and this is
    // far more accurate than a direct SVD when the data is rank deficient.
    let centered = DMatrix::from_fn(dim, n, |r, c| vectors[c][r] - mean[r]);
    let gram = centered.transpose() * &centered;
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let sigma_max = eig.eigenvalues[order[0]].max(0.0).sqrt();
    let tol = 1e-7 * sigma_max;

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(keep);
    let mut singular_values = Vec::with_capacity(keep);
    for &j in order.iter().take(keep) {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        if s <= tol || s == 0.0 {
            components.push(vec![0.0; dim]);
            singular_values.push(0.0);
            continue;
        }
        let mut col: Vec<f64> = (&centered * eig.eigenvectors.column(j)).iter().copied().collect();
        // re-orthogonalize against the directions already accepted
        for prev in &components {
            let d = dot(&col, prev);
            col.iter_mut().zip(prev).for_each(|(c, p)| *c -= d * p);
        }
        let norm = dot(&col, &col).sqrt();
        col.iter_mut().for_each(|v| *v /= norm);
        let lead = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(col);
        singular_values.push(s);
    }
    Ok(Pca {
        mean,
        components,
        singular_values,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_weights(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::invalid(format!(
            "expected {expected} weights, got {got}"
        )));
    }
    Ok(())
}

fn combine_fields(mean: &ScalarField, comps: &[ScalarField], w: &[f64]) -> Result<ScalarField> {
    check_weights(comps.len(), w.len())?;
    let mut out = mean.values().to_vec();
    for (c, wi) in comps.iter().zip(w) {
        if *wi == 0.0 {
            continue;
        }
        for (o, ci) in out.iter_mut().zip(c.values()) {
            *o += wi * ci;
        }
    }
    ScalarField::new(mean.width(), mean.height(), out)
}

fn combine_profiles(mean: &Profile, comps: &[Profile], w: &[f64]) -> Result<Profile> {
    check_weights(comps.len(), w.len())?;
    let mut out = mean.values().to_vec();
    for (c, wi) in comps.iter().zip(w) {
        for (o, ci) in out.iter_mut().zip(c.values()) {
            *o += wi * ci;
        }
    }
    Profile::new(out)
}

/// `Φ(x; w) = Φ̄(x) + Σ wᵢ Φᵢ(x)`
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeModel {
    pub mean: ScalarField,
    pub eigenshapes: Vec<ScalarField>,
    pub singular_values: Vec<f64>,
}

impl ShapeModel {
    pub fn dims(&self) -> (usize, usize) {
        self.mean.dims()
    }

    pub fn num_components(&self) -> usize {
        self.eigenshapes.len()
    }

    pub fn evaluate(&self, w: &[f64]) -> Result<ScalarField> {
        combine_fields(&self.mean, &self.eigenshapes, w)
    }

    /// Inner products of `field − Φ̄` with each eigenshape.
    pub fn project(&self, field: &ScalarField) -> Result<Vec<f64>> {
        self.mean.ensure_same_dims(field)?;
        let diff: Vec<f64> = field
            .values()
            .iter()
            .zip(self.mean.values())
            .map(|(a, b)| a - b)
            .collect();
        Ok(self.eigenshapes.iter().map(|c| dot(c.values(), &diff)).collect())
    }
}

/// `F(τ; v) = F̄(τ) + Σ vᵢ Fᵢ(τ)`
#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceModel {
    pub mean: Profile,
    pub eigenprofiles: Vec<Profile>,
    pub singular_values: Vec<f64>,
}

impl AppearanceModel {
    /// A model with no free parameters.
    pub fn fixed(profile: Profile) -> Self {
        Self {
            mean: profile,
            eigenprofiles: Vec::new(),
            singular_values: Vec::new(),
        }
    }

    pub fn num_components(&self) -> usize {
        self.eigenprofiles.len()
    }

    pub fn bins(&self) -> usize {
        self.mean.len()
    }

    pub fn evaluate(&self, v: &[f64]) -> Result<Profile> {
        combine_profiles(&self.mean, &self.eigenprofiles, v)
    }

    pub fn project(&self, profile: &Profile) -> Result<Vec<f64>> {
        if profile.len() != self.mean.len() {
            return Err(Error::invalid("profile length does not match the model"));
        }
        let diff: Vec<f64> = profile
            .values()
            .iter()
            .zip(self.mean.values())
            .map(|(a, b)| a - b)
            .collect();
        Ok(self.eigenprofiles.iter().map(|c| dot(c.values(), &diff)).collect())
    }
}

/// Joint model: one weight vector drives both the shape and the appearance
/// part. The stacked vectors `[Φᵢ; block_weight·Fᵢ]` are orthonormal.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledModel {
    pub shape_mean: ScalarField,
    pub shape_components: Vec<ScalarField>,
    pub appearance_mean: Profile,
    pub appearance_components: Vec<Profile>,
    pub singular_values: Vec<f64>,
    pub block_weight: f64,
}

impl CoupledModel {
    pub fn dims(&self) -> (usize, usize) {
        self.shape_mean.dims()
    }

    pub fn num_components(&self) -> usize {
        self.shape_components.len()
    }

    pub fn evaluate_shape(&self, w: &[f64]) -> Result<ScalarField> {
        combine_fields(&self.shape_mean, &self.shape_components, w)
    }

    pub fn evaluate_appearance(&self, w: &[f64]) -> Result<Profile> {
        combine_profiles(&self.appearance_mean, &self.appearance_components, w)
    }

    /// Weights of the stacked vector `[field; block_weight·profile]`.
    pub fn project(&self, field: &ScalarField, profile: &Profile) -> Result<Vec<f64>> {
        self.shape_mean.ensure_same_dims(field)?;
        if profile.len() != self.appearance_mean.len() {
            return Err(Error::invalid("profile length does not match the model"));
        }
        let b2 = self.block_weight * self.block_weight;
        Ok(self
            .shape_components
            .iter()
            .zip(&self.appearance_components)
            .map(|(s, a)| {
                let shape: f64 = s
                    .values()
                    .iter()
                    .zip(field.values().iter().zip(self.shape_mean.values()))
                    .map(|(c, (x, m))| c * (x - m))
                    .sum();
                let app: f64 = a
                    .values()
                    .iter()
                    .zip(profile.values().iter().zip(self.appearance_mean.values()))
                    .map(|(c, (x, m))| c * (x - m))
                    .sum();
                shape + b2 * app
            })
            .collect())
    }

    /// Shape part as a standalone model (same components, not orthonormal
    /// on their own).
    pub fn shape_part(&self) -> ShapeModel {
        ShapeModel {
            mean: self.shape_mean.clone(),
            eigenshapes: self.shape_components.clone(),
            singular_values: self.singular_values.clone(),
        }
    }

    pub fn appearance_part(&self) -> AppearanceModel {
        AppearanceModel {
            mean: self.appearance_mean.clone(),
            eigenprofiles: self.appearance_components.clone(),
            singular_values: self.singular_values.clone(),
        }
    }
}

fn common_dims(sdfs: &[SignedDistanceField]) -> Result<(usize, usize)> {
    let first = sdfs
        .first()
        .ok_or_else(|| Error::invalid("no training shapes"))?;
    let dims = first.field.dims();
    for s in sdfs {
        if s.field.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: s.field.dims(),
            });
        }
    }
    Ok(dims)
}

fn common_bins(profiles: &[PhotoGeomProfile]) -> Result<usize> {
    let first = profiles
        .first()
        .ok_or_else(|| Error::invalid("no training profiles"))?;
    let bins = first.profile.len();
    if profiles.iter().any(|p| p.profile.len() != bins) {
        return Err(Error::invalid("training profiles use different tau grids"));
    }
    Ok(bins)
}

pub fn train_shape(aligned: &[SignedDistanceField], k: usize) -> Result<ShapeModel> {
    let (w, h) = common_dims(aligned)?;
    let vectors: Vec<Vec<f64>> = aligned.iter().map(|s| s.field.values().to_vec()).collect();
    let p = pca(&vectors, k)?;
    Ok(ShapeModel {
        mean: ScalarField::new(w, h, p.mean)?,
        eigenshapes: p
            .components
            .into_iter()
            .map(|c| ScalarField::new(w, h, c))
            .collect::<Result<_>>()?,
        singular_values: p.singular_values,
    })
}

pub fn train_appearance(profiles: &[PhotoGeomProfile], l: usize) -> Result<AppearanceModel> {
    common_bins(profiles)?;
    let vectors: Vec<Vec<f64>> = profiles.iter().map(|p| p.samples().to_vec()).collect();
    let p = pca(&vectors, l)?;
    Ok(AppearanceModel {
        mean: Profile::new(p.mean)?,
        eigenprofiles: p
            .components
            .into_iter()
            .map(Profile::new)
            .collect::<Result<_>>()?,
        singular_values: p.singular_values,
    })
}

fn total_variance(vectors: &[&[f64]]) -> f64 {
    let n = vectors.len() as f64;
    let dim = vectors[0].len();
    let mut total = 0.0;
    for d in 0..dim {
        let mean = vectors.iter().map(|v| v[d]).sum::<f64>() / n;
        total += vectors.iter().map(|v| (v[d] - mean).powi(2)).sum::<f64>() / n;
    }
    total
}

/// Appearance-block scaling that gives both blocks equal total variance.
pub fn default_block_weight(
    aligned: &[SignedDistanceField],
    profiles: &[PhotoGeomProfile],
) -> Result<f64> {
    if aligned.is_empty() || aligned.len() != profiles.len() {
        return Err(Error::invalid("need one profile per training shape"));
    }
    let shapes: Vec<&[f64]> = aligned.iter().map(|s| s.field.values()).collect();
    let apps: Vec<&[f64]> = profiles.iter().map(|p| p.samples()).collect();
    let s = total_variance(&shapes);
    let a = total_variance(&apps);
    if s <= 0.0 || a <= 0.0 {
        return Ok(1.0);
    }
    Ok((s / a).sqrt())
}

/// PCA on stacked `[vec(ψⱼ); block_weight·fⱼ]` vectors. The de-stacked
/// appearance components are divided by `block_weight` so that evaluation
/// needs no weighting.
pub fn train_coupled(
    aligned: &[SignedDistanceField],
    profiles: &[PhotoGeomProfile],
    m: usize,
    block_weight: Option<f64>,
) -> Result<CoupledModel> {
    let (w, h) = common_dims(aligned)?;
    let bins = common_bins(profiles)?;
    if aligned.len() != profiles.len() {
        return Err(Error::invalid(format!(
            "{} shapes but {} profiles",
            aligned.len(),
            profiles.len()
        )));
    }
    let bw = match block_weight {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(b) => return Err(Error::invalid(format!("block weight must be positive, got {b}"))),
        None => default_block_weight(aligned, profiles)?,
    };
    let vectors: Vec<Vec<f64>> = aligned
        .iter()
        .zip(profiles)
        .map(|(s, p)| {
            let mut v = s.field.values().to_vec();
            v.extend(p.samples().iter().map(|x| bw * x));
            v
        })
        .collect();
    let p = pca(&vectors, m)?;
    let split = w * h;
    let unstack_app = |v: &[f64]| Profile::new(v[split..].iter().map(|x| x / bw).collect());
    debug_assert_eq!(p.mean.len(), split + bins);
    Ok(CoupledModel {
        shape_mean: ScalarField::new(w, h, p.mean[..split].to_vec())?,
        shape_components: p
            .components
            .iter()
            .map(|c| ScalarField::new(w, h, c[..split].to_vec()))
            .collect::<Result<_>>()?,
        appearance_mean: unstack_app(&p.mean)?,
        appearance_components: p
            .components
            .iter()
            .map(|c| unstack_app(c))
            .collect::<Result<_>>()?,
        singular_values: p.singular_values,
        block_weight: bw,
    })
}
