//! Overlap scores between a segmentation and the ground truth.

use crate::error::{Error, Result};
use crate::levelset::BinaryMask;

fn check(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    Ok(())
}

/// `2|A∩B| / (|A| + |B|)`; 1 when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check(a, b)?;
    let both = a.data().iter().zip(b.data()).filter(|(x, y)| **x && **y).count();
    let total = a.area() + b.area();
    Ok(if total == 0 { 1.0 } else { 2.0 * both as f64 / total as f64 })
}

/// Number of pixels on which the masks disagree.
pub fn segmentation_error(a: &BinaryMask, b: &BinaryMask) -> Result<usize> {
    check(a, b)?;
    Ok(a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count())
}
