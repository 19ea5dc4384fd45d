use crate::error::{Error, Result};

use super::Sample;

/// Pixel-level dataset statistics: global class proportions, per-sample
/// moraine coverage and its histogram.
#[derive(Debug, Clone)]
pub struct DatasetStats {
    pub background_pixels: u64,
    pub moraine_pixels: u64,
    /// (background, moraine) proportions; they sum to 1.
    pub proportions: (f64, f64),
    pub per_sample_fraction: Vec<f64>,
    /// Histogram of coverage fractions over [0,1].
    pub histogram: Vec<u64>,
}

impl DatasetStats {
    pub fn total_pixels(&self) -> u64 {
        self.background_pixels + self.moraine_pixels
    }
}

pub fn compute_stats(samples: &[Sample], bins: usize) -> Result<DatasetStats> {
    if samples.is_empty() {
        return Err(Error::Data("compute_stats: no samples".into()));
    }
    if bins == 0 {
        return Err(Error::Data(
            "compute_stats: need at least one histogram bin".into(),
        ));
    }
    let mut moraine = 0u64;
    let mut total = 0u64;
    let mut fractions = Vec::with_capacity(samples.len());
    let mut histogram = vec![0u64; bins];
    for s in samples {
        let ones = s.mask.iter().filter(|v| **v == 1).count() as u64;
        moraine += ones;
        total += s.mask.len() as u64;
        let f = ones as f64 / s.mask.len() as f64;
        fractions.push(f);
        let bin = ((f * bins as f64) as usize).min(bins - 1);
        histogram[bin] += 1;
    }
    let background = total - moraine;
    Ok(DatasetStats {
        background_pixels: background,
        moraine_pixels: moraine,
        proportions: (
            background as f64 / total as f64,
            moraine as f64 / total as f64,
        ),
        per_sample_fraction: fractions,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn sample_with_fraction(id: usize, size: usize, ones: usize) -> Sample {
        let mut mask = vec![0u8; size * size];
        for v in mask.iter_mut().take(ones) {
            *v = 1;
        }
        Sample {
            id: format!("s{id}"),
            image: Tensor::zeros(&[3, size, size]),
            mask,
            geo: None,
        }
    }

    #[test]
    fn all_background_dataset() {
        let stats = compute_stats(&[sample_with_fraction(0, 8, 0)], 10).unwrap();
        assert_eq!(stats.proportions, (1.0, 0.0));
        assert_eq!(stats.moraine_pixels, 0);
    }

    #[test]
    fn exact_ten_percent_dataset() {
        // 8x8 tiles with 6.4 -> use 10 ones of 100 pixels instead.
        let samples: Vec<Sample> = (0..4).map(|i| sample_with_fraction(i, 10, 10)).collect();
        let stats = compute_stats(&samples, 10).unwrap();
        assert_eq!(stats.proportions, (0.9, 0.1));
    }

    #[test]
    fn proportions_sum_to_one_and_histogram_counts_samples() {
        let samples: Vec<Sample> = (0..7)
            .map(|i| sample_with_fraction(i, 9, (i * 13) % 81))
            .collect();
        let stats = compute_stats(&samples, 5).unwrap();
        let sum = stats.proportions.0 + stats.proportions.1;
        assert!((sum - 1.0).abs() <= 1e-9);
        assert_eq!(stats.histogram.iter().sum::<u64>(), 7);
        assert_eq!(stats.per_sample_fraction.len(), 7);
    }
}
