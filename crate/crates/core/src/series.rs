//! Rolling-window statistics and time-bucket downsampling over score
//! series.

use alloc::vec::Vec;

/// One rolling-band position: window mean, population standard deviation,
/// and the mean ± k·sigma envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollingBand {
    pub mean: f64,
    pub sigma: f64,
    pub upper: f64,
    pub lower: f64,
}

/// Rolling bands over a sliding window of `n` values with multiplier `k`,
/// emitted from position n−1 onward. Series shorter than the window (or
/// n < 2) produce an empty result.
pub fn rolling_bands(values: &[f64], n: usize, k: f64) -> Vec<RollingBand> {
    if n < 2 || values.len() < n {
        return Vec::new();
    }
    values
        .windows(n)
        .map(|w| {
            let mean = w.iter().sum::<f64>() / n as f64;
            let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let sigma = libm::sqrt(var);
            RollingBand {
                mean,
                sigma,
                upper: mean + k * sigma,
                lower: mean - k * sigma,
            }
        })
        .collect()
}

/// Bucket aggregation function for [`downsample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregator {
    Avg,
    Min,
    Max,
    Count,
}

/// One downsampled bucket; `start` is the bucket's aligned start timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bucket {
    pub start: i64,
    pub value: f64,
}

/// Aggregate `(timestamp, value)` points into buckets of `bucket_ms`
/// aligned to `start`. Points must already be restricted to the query
/// range and sorted ascending; buckets with no points are omitted.
pub fn downsample(points: &[(i64, f64)], start: i64, bucket_ms: i64, agg: Aggregator) -> Vec<Bucket> {
    assert!(bucket_ms >= 1, "bucket_ms must be >= 1");
    let mut out: Vec<Bucket> = Vec::new();
    let mut current: Option<(i64, Vec<f64>)> = None;
    for &(ts, v) in points {
        let idx = (ts - start).div_euclid(bucket_ms);
        let bucket_start = start + idx * bucket_ms;
        match current {
            Some((b, ref mut vals)) if b == bucket_start => vals.push(v),
            _ => {
                if let Some((b, vals)) = current.take() {
                    out.push(Bucket {
                        start: b,
                        value: aggregate(agg, &vals),
                    });
                }
                current = Some((bucket_start, alloc::vec![v]));
            }
        }
    }
    if let Some((b, vals)) = current {
        out.push(Bucket {
            start: b,
            value: aggregate(agg, &vals),
        });
    }
    out
}

fn aggregate(agg: Aggregator, vals: &[f64]) -> f64 {
    match agg {
        Aggregator::Avg => vals.iter().sum::<f64>() / vals.len() as f64,
        Aggregator::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregator::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregator::Count => vals.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn constant_series_has_zero_width_band() {
        let bands = rolling_bands(&[5.0, 5.0, 5.0], 3, 2.0);
        assert_eq!(bands.len(), 1);
        assert_eq!(bands[0].mean, 5.0);
        assert_eq!(bands[0].sigma, 0.0);
        assert_eq!(bands[0].upper, 5.0);
        assert_eq!(bands[0].lower, 5.0);
    }

    #[test]
    fn worked_band_example() {
        // mean 2, population sigma sqrt(2/3), k = 2
        let bands = rolling_bands(&[1.0, 2.0, 3.0], 3, 2.0);
        assert_eq!(bands.len(), 1);
        let sigma = libm::sqrt(2.0 / 3.0);
        assert!((bands[0].sigma - sigma).abs() < 1e-12);
        assert!((bands[0].lower - 0.3670).abs() < 1e-3);
        assert!((bands[0].upper - 3.6330).abs() < 1e-3);
    }

    #[test]
    fn short_series_is_empty() {
        assert!(rolling_bands(&[1.0, 2.0], 3, 2.0).is_empty());
        assert!(rolling_bands(&[1.0, 2.0, 3.0], 1, 2.0).is_empty());
    }

    #[test]
    fn band_count_and_containment() {
        let values: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let bands = rolling_bands(&values, 4, 2.0);
        assert_eq!(bands.len(), 7);
        for b in bands {
            assert!(b.lower <= b.mean && b.mean <= b.upper);
        }
    }

    #[test]
    fn zero_k_collapses_to_mean() {
        for b in rolling_bands(&[1.0, 4.0, 2.0, 8.0], 2, 0.0) {
            assert_eq!(b.upper, b.mean);
            assert_eq!(b.lower, b.mean);
        }
    }

    #[test]
    fn downsample_avg_and_count() {
        let pts = vec![(0, 1.0), (1, 2.0), (2, 3.0)];
        let avg = downsample(&pts, 0, 10, Aggregator::Avg);
        assert_eq!(avg, vec![Bucket { start: 0, value: 2.0 }]);
        let count = downsample(&pts, 0, 10, Aggregator::Count);
        assert_eq!(count, vec![Bucket { start: 0, value: 3.0 }]);
    }

    #[test]
    fn downsample_alignment() {
        let pts = vec![(0, 1.0), (15, 5.0)];
        let out = downsample(&pts, 0, 10, Aggregator::Avg);
        assert_eq!(
            out,
            vec![
                Bucket { start: 0, value: 1.0 },
                Bucket { start: 10, value: 5.0 }
            ]
        );
    }

    #[test]
    fn empty_buckets_omitted() {
        let pts = vec![(0, 1.0), (35, 2.0)];
        let out = downsample(&pts, 0, 10, Aggregator::Max);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].start, 0);
        assert_eq!(out[1].start, 30);
    }

    #[test]
    fn min_max_aggregators() {
        let pts = vec![(0, 3.0), (1, -1.0), (2, 7.0)];
        assert_eq!(downsample(&pts, 0, 10, Aggregator::Min)[0].value, -1.0);
        assert_eq!(downsample(&pts, 0, 10, Aggregator::Max)[0].value, 7.0);
    }
}
