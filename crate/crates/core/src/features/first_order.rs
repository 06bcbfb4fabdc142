//! Intensity-distribution statistics over the pixels of one RoI.

/// Bins used for the histogram-based entropy and uniformity.
pub const HISTOGRAM_BINS: usize = 32;

/// Linear-interpolated percentile of sorted data (the common "linear" rule).
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Equal-width bin index over `[lo, hi]`; a zero-width range maps to bin 0.
pub(crate) fn quantize(v: f64, lo: f64, hi: f64, levels: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * levels as f64).floor() as usize).min(levels - 1)
}

fn histogram_probabilities(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for &v in values {
        counts[quantize(v, lo, hi, HISTOGRAM_BINS)] += 1;
    }
    let n = values.len() as f64;
    counts.into_iter().filter(|&c| c > 0).map(|c| c as f64 / n).collect()
}

/// Slots 1–5: mean, minimum, maximum, pixel count and area (unit pixels).
pub fn basic_features(pixels: &[f64]) -> [f64; 5] {
    assert!(!pixels.is_empty(), "basic features need at least one pixel");
    let n = pixels.len() as f64;
    let (min, max) = pixels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    [pixels.iter().sum::<f64>() / n, min, max, n, n]
}

/// Slots 17–34, in registry order. Skewness and kurtosis are 0 for a
/// zero-variance region; kurtosis is the plain fourth standardised moment.
/// The robust deviation is 0 when no pixel lies within the 10–90 percentile band.
pub fn first_order_features(pixels: &[f64]) -> [f64; 18] {
    assert!(!pixels.is_empty(), "first-order features need at least one pixel");
    let n = pixels.len() as f64;
    let mut sorted = pixels.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let mean = pixels.iter().sum::<f64>() / n;

    let (mut m2, mut m3, mut m4, mut mad, mut energy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &v in pixels {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        mad += d.abs();
        energy += v * v;
    }
    let variance = m2 / n;
    let (skewness, kurtosis) = if variance > 0.0 {
        ((m3 / n) / variance.powf(1.5), (m4 / n) / (variance * variance))
    } else {
        (0.0, 0.0)
    };

    let p10 = percentile(&sorted, 10.0);
    let p90 = percentile(&sorted, 90.0);
    let robust: Vec<f64> = pixels.iter().copied().filter(|&v| v >= p10 && v <= p90).collect();
    let robust_mad = if robust.is_empty() {
        0.0
    } else {
        let m = robust.iter().sum::<f64>() / robust.len() as f64;
        robust.iter().map(|v| (v - m).abs()).sum::<f64>() / robust.len() as f64
    };

    let probs = histogram_probabilities(pixels, min, max);
    let entropy = -probs.iter().map(|p| p * p.log2()).sum::<f64>();
    let uniformity = probs.iter().map(|p| p * p).sum::<f64>();

    [
        p10,
        p90,
        energy,
        energy,
        entropy,
        percentile(&sorted, 75.0) - percentile(&sorted, 25.0),
        kurtosis,
        max,
        mad / n,
        mean,
        percentile(&sorted, 50.0),
        min,
        max - min,
        robust_mad,
        (energy / n).sqrt(),
        skewness,
        uniformity,
        variance,
    ]
}
