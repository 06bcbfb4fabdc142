//! Binary masks, polygon rasterisation, moment centroids and grayscale I/O.

use std::path::Path;

use super::GraphError;

/// Boolean raster; pixel `(x, y)` is column `x`, row `y`, origin top-left.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: &[(usize, usize)]) -> Self {
        let mut m = Self::new(width, height);
        for &(x, y) in pixels {
            m.set(x, y, true);
        }
        m
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Foreground pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (i % self.width, i / self.width))
    }
}

/// Grayscale image with intensities widened to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl GrayImage {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Intensities under the mask, row-major.
    pub fn masked(&self, mask: &Mask) -> Vec<f64> {
        mask.pixels().filter(|&(x, y)| x < self.width && y < self.height).map(|(x, y)| self.get(x, y)).collect()
    }
}

/// Load an 8- or 16-bit single-channel PGM or PNG.
pub fn load_grayscale(path: &Path) -> Result<GrayImage, GraphError> {
    let img = image::open(path).map_err(|e| GraphError::Image {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let values = match img {
        image::DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(f64::from).collect(),
        image::DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(f64::from).collect(),
        other => {
            return Err(GraphError::Image {
                path: path.display().to_string(),
                reason: format!("expected single-channel grayscale, got {:?}", other.color()),
            })
        }
    };
    Ok(GrayImage { width, height, values })
}

fn point_in_polygon(px: f64, py: f64, poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Rasterise a polygon: pixel `(x, y)` is foreground when its centre
/// `(x + 0.5, y + 0.5)` lies inside (even-odd rule).
pub fn rasterize_polygon(poly: &[[f64; 2]], width: usize, height: usize) -> Mask {
    let mut m = Mask::new(width, height);
    if poly.len() < 3 {
        return m;
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in poly {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let xs = (x0.floor().max(0.0) as usize).min(width);
    let xe = (x1.ceil().max(0.0) as usize).min(width);
    let ys = (y0.floor().max(0.0) as usize).min(height);
    let ye = (y1.ceil().max(0.0) as usize).min(height);
    for y in ys..ye {
        for x in xs..xe {
            if point_in_polygon(x as f64 + 0.5, y as f64 + 0.5, poly) {
                m.set(x, y, true);
            }
        }
    }
    m
}

/// `(M10 / M00, M01 / M00)`: the mean foreground pixel coordinate.
pub fn centroid(mask: &Mask) -> Result<[f64; 2], GraphError> {
    let (mut m00, mut m10, mut m01) = (0.0, 0.0, 0.0);
    for (x, y) in mask.pixels() {
        m00 += 1.0;
        m10 += x as f64;
        m01 += y as f64;
    }
    if m00 == 0.0 {
        return Err(GraphError::EmptyMask);
    }
    Ok([m10 / m00, m01 / m00])
}
