use crate::tensor::ShapeError;

fn counts(a: &[bool], b: &[bool]) -> Result<(usize, usize, usize), ShapeError> {
    if a.len() != b.len() {
        return Err(ShapeError::Mismatch {
            op: "mask comparison",
            detail: alloc::format!("{} vs {} pixels", a.len(), b.len()),
        });
    }
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let na = a.iter().filter(|x| **x).count();
    let nb = b.iter().filter(|x| **x).count();
    Ok((inter, na, nb))
}

/// Region similarity 𝒥 = |A∩B| / |A∪B|; 1 when both are empty.
pub fn region_similarity(pred: &[bool], gt: &[bool]) -> Result<f64, ShapeError> {
    let (i, a, b) = counts(pred, gt)?;
    let u = a + b - i;
    Ok(if u == 0 { 1.0 } else { i as f64 / u as f64 })
}

/// Dice = 2|A∩B| / (|A| + |B|); 1 when both are empty.
pub fn dice(pred: &[bool], gt: &[bool]) -> Result<f64, ShapeError> {
    let (i, a, b) = counts(pred, gt)?;
    Ok(if a + b == 0 { 1.0 } else { 2.0 * i as f64 / (a + b) as f64 })
}

/// Threshold logits at 0 (probability 0.5).
pub fn binarize_logits(logits: &[f64]) -> alloc::vec::Vec<bool> {
    logits.iter().map(|&z| z > 0.0).collect()
}
