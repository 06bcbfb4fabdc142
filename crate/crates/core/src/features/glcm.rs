//! Gray-level co-occurrence statistics.
//!
//! Intensities under the mask are binned into `levels` equal-width bins over
//! the RoI's own range. One co-occurrence matrix is built per neighbour
//! offset (east, south, west, north, distance 1), each normalised to a
//! distribution; the matrix used for the statistics is their average, which
//! is symmetric because opposite offsets are transposes of each other.

use nalgebra::{DMatrix, SymmetricEigen};

use super::first_order::quantize;
use crate::graphio::{GrayImage, Mask};

pub const DEFAULT_LEVELS: usize = 32;

const OFFSETS: [(isize, isize); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// Averaged, normalised co-occurrence matrix (row-major, `levels × levels`),
/// or `None` when no two foreground pixels are neighbours.
pub fn cooccurrence(image: &GrayImage, mask: &Mask, levels: usize) -> Option<Vec<f64>> {
    let inside = |x: isize, y: isize| x >= 0 && y >= 0 && (x as usize) < image.width && (y as usize) < image.height && mask.get(x as usize, y as usize);
    let vals = image.masked(mask);
    if vals.is_empty() {
        return None;
    }
    let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let level = |x: usize, y: usize| quantize(image.get(x, y), lo, hi, levels);

    let mut avg = vec![0.0; levels * levels];
    let mut used = 0;
    for (dx, dy) in OFFSETS {
        let mut counts = vec![0usize; levels * levels];
        let mut total = 0usize;
        for (x, y) in mask.pixels() {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if x < image.width && y < image.height && inside(nx, ny) {
                counts[level(x, y) * levels + level(nx as usize, ny as usize)] += 1;
                total += 1;
            }
        }
        if total > 0 {
            used += 1;
            for (a, c) in avg.iter_mut().zip(counts) {
                *a += c as f64 / total as f64;
            }
        }
    }
    if used == 0 {
        return None;
    }
    avg.iter_mut().for_each(|a| *a /= used as f64);
    Some(avg)
}

fn entropy(p: impl Iterator<Item = f64>) -> f64 {
    -p.filter(|&v| v > 0.0).map(|v| v * v.log2()).sum::<f64>()
}

/// Slots 35–58 from a normalised symmetric co-occurrence matrix, registry order.
/// Gray levels are numbered from 1.
pub fn glcm_statistics(p: &[f64], levels: usize) -> [f64; 24] {
    let ng = levels as f64;
    let at = |i: usize, j: usize| p[i * levels + j];
    let gray = |i: usize| (i + 1) as f64;

    let px: Vec<f64> = (0..levels).map(|i| (0..levels).map(|j| at(i, j)).sum()).collect();
    let py: Vec<f64> = (0..levels).map(|j| (0..levels).map(|i| at(i, j)).sum()).collect();
    let mu_x: f64 = px.iter().enumerate().map(|(i, v)| gray(i) * v).sum();
    let mu_y: f64 = py.iter().enumerate().map(|(j, v)| gray(j) * v).sum();
    let var_x: f64 = px.iter().enumerate().map(|(i, v)| (gray(i) - mu_x).powi(2) * v).sum();
    let var_y: f64 = py.iter().enumerate().map(|(j, v)| (gray(j) - mu_y).powi(2) * v).sum();

    let mut p_sum = vec![0.0; 2 * levels + 1];
    let mut p_diff = vec![0.0; levels];
    let (mut auto, mut prom, mut shade, mut tend, mut contrast) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut id, mut idm, mut idmn, mut idn, mut energy, mut max_p) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0f64);
    let (mut hxy1, mut hxy2) = (0.0, 0.0);
    for i in 0..levels {
        for j in 0..levels {
            let v = at(i, j);
            let (gi, gj) = (gray(i), gray(j));
            let d = (gi - gj).abs();
            let s = gi + gj - mu_x - mu_y;
            p_sum[i + j + 2] += v;
            p_diff[i.abs_diff(j)] += v;
            auto += gi * gj * v;
            prom += s.powi(4) * v;
            shade += s.powi(3) * v;
            tend += s * s * v;
            contrast += d * d * v;
            id += v / (1.0 + d);
            idm += v / (1.0 + d * d);
            idmn += v / (1.0 + d * d / (ng * ng));
            idn += v / (1.0 + d / ng);
            energy += v * v;
            max_p = max_p.max(v);
            let pp = px[i] * py[j];
            if v > 0.0 {
                hxy1 -= v * pp.log2();
            }
            if pp > 0.0 {
                hxy2 -= pp * pp.log2();
            }
        }
    }
    let hxy = entropy(p.iter().copied());
    let hx = entropy(px.iter().copied());
    let hy = entropy(py.iter().copied());

    let correlation = if var_x * var_y > 0.0 { (auto - mu_x * mu_y) / (var_x * var_y).sqrt() } else { 1.0 };
    let diff_avg: f64 = p_diff.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
    let diff_var: f64 = p_diff.iter().enumerate().map(|(k, v)| (k as f64 - diff_avg).powi(2) * v).sum();
    let inv_var: f64 = p_diff.iter().enumerate().skip(1).map(|(k, v)| v / (k * k) as f64).sum();
    let sum_avg: f64 = p_sum.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
    let imc1 = if hx.max(hy) > 0.0 { (hxy - hxy1) / hx.max(hy) } else { 0.0 };
    let imc2 = (1.0 - (-2.0 * (hxy2 - hxy)).exp()).max(0.0).sqrt();
    let sum_squares: f64 = px.iter().enumerate().map(|(i, v)| (gray(i) - mu_x).powi(2) * v).sum();

    [
        auto,
        prom,
        shade,
        tend,
        contrast,
        correlation,
        diff_avg,
        entropy(p_diff.iter().copied()),
        diff_var,
        id,
        idm,
        idmn,
        idn,
        imc1,
        imc2,
        inv_var,
        mu_x,
        energy,
        hxy,
        max_correlation_coefficient(p, &px, levels),
        max_p,
        sum_avg,
        entropy(p_sum.iter().copied()),
        sum_squares,
    ]
}

/// Square root of the second-largest eigenvalue of
/// `Q(i, j) = Σ_k p(i,k) p(j,k) / (px(i) px(k))`, restricted to occupied levels.
/// For symmetric `p`, Q is similar to `A²` with `A = D^-½ P D^-½`, so the
/// eigenvalues come from a symmetric decomposition of `A`.
fn max_correlation_coefficient(p: &[f64], px: &[f64], levels: usize) -> f64 {
    let occupied: Vec<usize> = (0..levels).filter(|&i| px[i] > 0.0).collect();
    if occupied.len() < 2 {
        return 1.0;
    }
    let m = occupied.len();
    let a = DMatrix::from_fn(m, m, |r, c| {
        let (i, j) = (occupied[r], occupied[c]);
        p[i * levels + j] / (px[i] * px[j]).sqrt()
    });
    let mut eig: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().map(|l| l * l).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig[1].max(0.0).sqrt()
}

/// Co-occurrence statistics for one RoI, or `None` without a neighbour pair.
pub fn glcm_features(image: &GrayImage, mask: &Mask, levels: usize) -> Option<[f64; 24]> {
    cooccurrence(image, mask, levels).map(|p| glcm_statistics(&p, levels))
}
