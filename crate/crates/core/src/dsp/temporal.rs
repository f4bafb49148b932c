use super::DspError;

/// Fraction of adjacent sample pairs whose product is strictly negative.
///
/// Exact zeros never count as a crossing, so digital silence always yields 0.
pub fn zero_crossing_rate(frame: &[f64]) -> Result<f64, DspError> {
    if frame.len() < 2 {
        return Err(DspError::Degenerate(format!(
            "zero-crossing rate needs at least 2 samples, got {}",
            frame.len()
        )));
    }
    let crossings = frame.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    Ok(crossings as f64 / (frame.len() - 1) as f64)
}

/// Mean-square amplitude of the frame.
pub fn short_time_energy(frame: &[f64]) -> Result<f64, DspError> {
    if frame.is_empty() {
        return Err(DspError::Degenerate("short-time energy of an empty frame".into()));
    }
    Ok(frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64)
}
