//! Aggregation kernels shared by the on-board built-ins and the off-board
//! averaging step. Generic over the float type; the nodes use `f64`.

use num_traits::Float;

/// Number of bins produced by the built-in histogram.
pub const HISTOGRAM_BINS: usize = 10;

pub fn all_finite<T: Float>(values: &[T]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// Arithmetic mean, `None` for an empty slice.
pub fn mean<T: Float>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().fold(T::zero(), |acc, &v| acc + v);
    Some(sum / T::from(values.len())?)
}

/// Element-wise mean of equal-length vectors.
///
/// Returns `None` when `rows` is empty or the lengths differ.
pub fn elementwise_mean<T: Float>(rows: &[&[T]]) -> Option<Vec<T>> {
    let width = rows.first()?.len();
    if rows.iter().any(|r| r.len() != width) {
        return None;
    }
    let n = T::from(rows.len())?;
    let mut acc = vec![T::zero(); width];
    for row in rows {
        for (slot, &v) in acc.iter_mut().zip(row.iter()) {
            *slot = *slot + v;
        }
    }
    Some(acc.into_iter().map(|s| s / n).collect())
}

/// Equal-width histogram over the observed range of the data.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram<T> {
    pub min: T,
    pub max: T,
    pub counts: [u64; HISTOGRAM_BINS],
}

impl<T: Float> Histogram<T> {
    /// Bins `values` into [`HISTOGRAM_BINS`] equal-width bins spanning
    /// `[min, max]`. Bins are right-open except the last, which also holds
    /// `max`. A degenerate range (all values equal) puts everything in bin 0.
    pub fn from_samples(values: &[T]) -> Option<Self> {
        let first = *values.first()?;
        let (min, max) = values
            .iter()
            .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let mut counts = [0u64; HISTOGRAM_BINS];
        let width = (max - min) / T::from(HISTOGRAM_BINS)?;
        for &v in values {
            let idx = if width > T::zero() {
                ((v - min) / width)
                    .floor()
                    .to_usize()
                    .unwrap_or(0)
                    .min(HISTOGRAM_BINS - 1)
            } else {
                0
            };
            counts[idx] += 1;
        }
        Some(Self { min, max, counts })
    }

    pub fn counts_as<U: Float>(&self) -> Vec<U> {
        self.counts
            .iter()
            .map(|&c| U::from(c).unwrap_or_else(U::zero))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_small_sets() {
        assert_eq!(mean(&[2.0f64, 4.0, 6.0]), Some(4.0));
        assert_eq!(mean(&[1.5f32]), Some(1.5));
        assert_eq!(mean::<f64>(&[]), None);
    }

    #[test]
    fn elementwise_mean_rejects_ragged_rows() {
        let a = [1.0, 2.0];
        let b = [3.0, 4.0];
        assert_eq!(elementwise_mean(&[&a[..], &b[..]]), Some(vec![2.0, 3.0]));
        let c = [1.0];
        assert_eq!(elementwise_mean(&[&a[..], &c[..]]), None);
        assert_eq!(elementwise_mean::<f64>(&[]), None);
    }

    /// Reference binning by explicit edge comparison.
    fn brute_force_bins(values: &[f64]) -> [u64; HISTOGRAM_BINS] {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut out = [0u64; HISTOGRAM_BINS];
        if lo == hi {
            out[0] = values.len() as u64;
            return out;
        }
        let w = (hi - lo) / HISTOGRAM_BINS as f64;
        for &v in values {
            for (i, slot) in out.iter_mut().enumerate() {
                let left = lo + w * i as f64;
                let right = lo + w * (i + 1) as f64;
                let last = i == HISTOGRAM_BINS - 1;
                if v >= left && (v < right || (last && v <= hi)) {
                    *slot += 1;
                    break;
                }
            }
        }
        out
    }

    #[test]
    fn histogram_of_unit_steps_has_one_per_bin() {
        let values: Vec<f64> = (0..10).map(f64::from).collect();
        let h = Histogram::from_samples(&values).unwrap();
        assert_eq!(h.counts, [1; HISTOGRAM_BINS]);
        assert_eq!(brute_force_bins(&values), h.counts);
        assert_eq!(h.counts_as::<f64>(), vec![1.0; 10]);
    }

    #[test]
    fn histogram_matches_edge_oracle_on_irregular_data() {
        let values = [3.3, 7.1, 0.25, 9.75, 5.5, 5.6, 1.05, 2.2, 8.8, 4.4, 6.15];
        let h = Histogram::from_samples(&values).unwrap();
        assert_eq!(h.counts, brute_force_bins(&values));
        assert_eq!(h.counts.iter().sum::<u64>(), values.len() as u64);
    }

    #[test]
    fn histogram_degenerate_range() {
        let h = Histogram::from_samples(&[4.0f64; 5]).unwrap();
        assert_eq!(h.counts[0], 5);
        assert!(Histogram::<f64>::from_samples(&[]).is_none());
    }
}
