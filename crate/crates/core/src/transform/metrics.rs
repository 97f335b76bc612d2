use serde::Serialize;

use super::{MemoryImage, SlotTag, TransformError};

/// Dispersion of monitor slots over the physical image.
///
/// Gaps are circular: the run after the last monitor slot wraps to the first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomogeneityReport {
    pub total_slots: usize,
    pub monitor_slots: usize,
    /// Longest run of consecutive physical slots with no monitor slot.
    pub max_gap: usize,
    pub mean_gap: f64,
    /// Pearson chi-square of monitor counts over `bins` equal-width bins.
    pub chi_square: f64,
    pub bins: usize,
}

pub fn homogeneity_report(img: &MemoryImage) -> Result<HomogeneityReport, TransformError> {
    let positions = img.positions_of(SlotTag::Monitor);
    let bins = img.n() as usize;
    gap_report(&positions, img.len(), bins)
}

pub(crate) fn gap_report(positions: &[usize], total: usize, bins: usize) -> Result<HomogeneityReport, TransformError> {
    let count = positions.len();
    if count == 0 {
        return Err(TransformError::NoMonitors);
    }
    let gaps = circular_gaps(positions, total);
    let max_gap = gaps.iter().copied().max().unwrap_or(0);
    let mean_gap = gaps.iter().sum::<usize>() as f64 / count as f64;

    let bins = bins.clamp(1, total);
    let mut observed = vec![0usize; bins];
    for &p in positions {
        observed[p * bins / total] += 1;
    }
    let expected = count as f64 / bins as f64;
    let chi_square = observed.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();

    Ok(HomogeneityReport { total_slots: total, monitor_slots: count, max_gap, mean_gap, chi_square, bins })
}

/// Gap after each sorted position, the last one wrapping around.
pub(crate) fn circular_gaps(sorted: &[usize], total: usize) -> Vec<usize> {
    let mut gaps: Vec<usize> = sorted.windows(2).map(|w| w[1] - w[0] - 1).collect();
    if let (Some(&first), Some(&last)) = (sorted.first(), sorted.last()) {
        gaps.push(total - last - 1 + first);
    }
    gaps
}
