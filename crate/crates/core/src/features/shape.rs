//! 2D shape descriptors of a binary RoI mask.
//!
//! Axis lengths are `4·sqrt(λ)` of the pixel-coordinate covariance. Area and
//! perimeter come from a marching-squares contour through pixel centres, with
//! saddle cells resolved as separated corners. Sphericity is the 2D
//! circularity `2·sqrt(π·A) / P`.

use nalgebra::{Matrix2, SymmetricEigen};

use crate::graphio::Mask;

/// Slots 6–16, in registry order. Masks with fewer than three pixels report 0
/// for elongation and both axis lengths.
pub fn shape_features(mask: &Mask) -> [f64; 11] {
    let pts: Vec<(usize, usize)> = mask.pixels().collect();
    assert!(!pts.is_empty(), "shape features need a non-empty mask");
    let n = pts.len() as f64;

    let (elongation, major, minor) = if pts.len() >= 3 {
        let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x as f64, b + y as f64));
        let (mx, my) = (mx / n, my / n);
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for &(x, y) in &pts {
            let (dx, dy) = (x as f64 - mx, y as f64 - my);
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
        let eig = SymmetricEigen::new(Matrix2::new(sxx / n, sxy / n, sxy / n, syy / n)).eigenvalues;
        let (hi, lo) = (eig[0].max(eig[1]).max(0.0), eig[0].min(eig[1]).max(0.0));
        let elong = if hi > 0.0 { (lo / hi).sqrt() } else { 0.0 };
        (elong, 4.0 * hi.sqrt(), 4.0 * lo.sqrt())
    } else {
        (0.0, 0.0, 0.0)
    };

    let (mut row_diam, mut col_diam) = (0.0f64, 0.0f64);
    let mut row_span: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    let mut col_span: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for &(x, y) in &pts {
        let r = row_span.entry(y).or_insert((x, x));
        *r = (r.0.min(x), r.1.max(x));
        let c = col_span.entry(x).or_insert((y, y));
        *c = (c.0.min(y), c.1.max(y));
    }
    for (lo, hi) in row_span.values() {
        row_diam = row_diam.max((hi - lo) as f64);
    }
    for (lo, hi) in col_span.values() {
        col_diam = col_diam.max((hi - lo) as f64);
    }

    let (area, perimeter) = marching_squares(mask);
    [
        elongation,
        major,
        minor,
        max_diameter(mask, &pts),
        row_diam,
        col_diam,
        area,
        perimeter,
        perimeter / area,
        2.0 * (std::f64::consts::PI * area).sqrt() / perimeter,
        n,
    ]
}

/// Largest centre-to-centre distance; only boundary pixels can attain it.
fn max_diameter(mask: &Mask, pts: &[(usize, usize)]) -> f64 {
    let inside = |x: isize, y: isize| x >= 0 && y >= 0 && mask.get(x as usize, y as usize);
    let boundary: Vec<(f64, f64)> = pts
        .iter()
        .filter(|&&(x, y)| {
            let (x, y) = (x as isize, y as isize);
            !(inside(x - 1, y) && inside(x + 1, y) && inside(x, y - 1) && inside(x, y + 1))
        })
        .map(|&(x, y)| (x as f64, y as f64))
        .collect();
    let mut best = 0.0f64;
    for (i, a) in boundary.iter().enumerate() {
        for b in &boundary[i + 1..] {
            best = best.max((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2));
        }
    }
    best.sqrt()
}

/// Enclosed area and contour length of the iso-0.5 contour through pixel
/// centres, with the mask padded by one background pixel on every side.
fn marching_squares(mask: &Mask) -> (f64, f64) {
    let half_diag = std::f64::consts::SQRT_2 / 2.0;
    let at = |x: isize, y: isize| x >= 0 && y >= 0 && mask.get(x as usize, y as usize);
    let (mut area, mut perim) = (0.0, 0.0);
    for y in -1..mask.height as isize {
        for x in -1..mask.width as isize {
            let c = [at(x, y), at(x + 1, y), at(x + 1, y + 1), at(x, y + 1)];
            let k = c.iter().filter(|&&b| b).count();
            let (a, p) = match k {
                0 => (0.0, 0.0),
                1 => (0.125, half_diag),
                2 if c[0] == c[2] => (0.25, 2.0 * half_diag),
                2 => (0.5, 1.0),
                3 => (0.875, half_diag),
                _ => (1.0, 0.0),
            };
            area += a;
            perim += p;
        }
    }
    (area, perim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphio::rasterize_polygon;
    use proptest::prelude::*;

    fn disc(r: f64, cx: f64, cy: f64) -> Mask {
        let poly: Vec<[f64; 2]> = (0..256)
            .map(|k| {
                let t = k as f64 / 256.0 * std::f64::consts::TAU;
                [cx + r * t.cos(), cy + r * t.sin()]
            })
            .collect();
        rasterize_polygon(&poly, 64, 64)
    }

    fn block(x0: usize, y0: usize, w: usize, h: usize, size: usize) -> Mask {
        let px: Vec<_> = (0..w).flat_map(|i| (0..h).map(move |j| (x0 + i, y0 + j))).collect();
        Mask::from_pixels(size, size, &px)
    }

    #[test]
    fn disc_is_round() {
        let f = shape_features(&disc(10.0, 30.0, 30.0));
        assert!((f[0] - 1.0).abs() < 0.05, "elongation {}", f[0]);
        // circularity of a digitised disc sits near 1
        assert!(f[9] > 0.9 && f[9] <= 1.01, "sphericity {}", f[9]);
    }

    #[test]
    fn bar_is_elongated() {
        let f = shape_features(&block(2, 2, 20, 1, 32));
        assert!(f[1] > 10.0 * f[2].max(1e-9));
        assert!(f[0] < 0.2);
        assert_eq!(f[4], 19.0);
        assert_eq!(f[5], 0.0);
    }

    #[test]
    fn block_diameter_and_area() {
        let f = shape_features(&block(4, 4, 3, 3, 12));
        assert!((f[3] - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(f[10], 9.0);
        // contour through centres of a 3×3 block: 2×2 square plus 4 half-pixel strips
        // and 4 corner triangles
        assert!((f[6] - (4.0 + 4.0 + 0.5)).abs() < 1e-12, "area {}", f[6]);
    }

    #[test]
    fn tiny_masks_have_degenerate_axes() {
        let f = shape_features(&Mask::from_pixels(4, 4, &[(1, 1), (2, 1)]));
        assert_eq!((f[0], f[1], f[2]), (0.0, 0.0, 0.0));
        assert_eq!(f[3], 1.0);
    }

    proptest! {
        #[test]
        fn translation_invariant(px in prop::collection::vec((0usize..10, 0usize..10), 1..40), dx in 0usize..12, dy in 0usize..12) {
            let a = Mask::from_pixels(24, 24, &px);
            let shifted: Vec<_> = px.iter().map(|&(x, y)| (x + dx, y + dy)).collect();
            let b = Mask::from_pixels(24, 24, &shifted);
            let (fa, fb) = (shape_features(&a), shape_features(&b));
            for (x, y) in fa.iter().zip(&fb) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{:?} vs {:?}", fa, fb);
            }
        }
    }
}
