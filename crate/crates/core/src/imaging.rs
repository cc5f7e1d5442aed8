//! Grayscale image grid, preprocessing, patch extraction and valid-mode
//! cross-correlation.
//!
//! [`GrayImage`] carries both intensity images (values in `[0, 1]`) and
//! filter response maps. Response maps are produced by [`xcorr_valid`] and the
//! modules built on it; they reuse the grid type but are exempt from the
//! `[0, 1]` range invariant.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

/// ITU-R BT.601 luma weights.
const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

/// Row-major 2-D grid of real values.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid(format!("zero-sized image {height}x{width}"));
        }
        if data.len() != height * width {
            return invalid(format!(
                "image data length {} does not match {height}x{width}",
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Constant image. Panics on a zero dimension.
    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "zero-sized image");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Builds an image from `f(row, col)`. Panics on a zero dimension.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "zero-sized image");
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Builds an image from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return invalid("ragged rows");
        }
        Self::new(height, width, rows.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Index and value of the maximum; ties go to the lowest row-major index.
    pub fn argmax(&self) -> (usize, usize, f64) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width, self.data[best])
    }

    /// Copies the rectangle `[y0, y0+h) x [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            return invalid(format!(
                "crop {h}x{w} at ({y0},{x0}) outside {}x{}",
                self.height, self.width
            ));
        }
        let mut data = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.row(y)[x0..x0 + w]);
        }
        Self::new(h, w, data)
    }

    /// Copies the window `[y0, y0+m) x [x0, x0+m)` into a patch.
    pub fn patch_at(&self, y0: usize, x0: usize, m: usize) -> Patch {
        let mut data = Vec::with_capacity(m * m);
        for y in y0..y0 + m {
            data.extend_from_slice(&self.row(y)[x0..x0 + m]);
        }
        Patch { side: m, data }
    }

    /// Elementwise map into a new image.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Square `side x side` patch in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    side: usize,
    data: Vec<f64>,
}

impl Patch {
    pub fn new(side: usize, data: Vec<f64>) -> Result<Self> {
        if side == 0 {
            return invalid("patch side must be positive");
        }
        if data.len() != side * side {
            return invalid(format!(
                "patch data length {} does not match side {side}",
                data.len()
            ));
        }
        Ok(Self { side, data })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dot(&self, other: &Patch) -> f64 {
        dot(&self.data, &other.data)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Axis-aligned box with exclusive lower-right corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return invalid(format!("degenerate box ({x0},{y0})-({x1},{y1})"));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn fits_in(&self, height: usize, width: usize) -> bool {
        self.x1 <= width && self.y1 <= height
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1) as f64 / 2.0,
            (self.y0 + self.y1) as f64 / 2.0,
        )
    }
}

/// Luma of one 8-bit RGB triple, scaled to `[0, 1]`.
pub fn luma(r: u8, g: u8, b: u8) -> f64 {
    ((LUMA_R * r as f64 + LUMA_G * g as f64 + LUMA_B * b as f64) / 255.0).clamp(0.0, 1.0)
}

pub fn to_grayscale(rgb: &image::RgbImage) -> Result<GrayImage> {
    let (w, h) = rgb.dimensions();
    if w == 0 || h == 0 {
        return invalid("zero-sized rgb image");
    }
    let data = rgb.pixels().map(|p| luma(p[0], p[1], p[2])).collect();
    GrayImage::new(h as usize, w as usize, data)
}

/// Bilinear resize with pixel-center alignment.
pub fn resize(img: &GrayImage, out_h: usize, out_w: usize) -> Result<GrayImage> {
    if out_h == 0 || out_w == 0 {
        return invalid(format!("resize target {out_h}x{out_w} has a zero dimension"));
    }
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let ys: Vec<(usize, usize, f64)> = axis_weights(img.height, out_h);
    let xs: Vec<(usize, usize, f64)> = axis_weights(img.width, out_w);
    let mut data = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        let (r0, r1) = (img.row(y0), img.row(y1));
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            data.push(top + (bottom - top) * fy);
        }
    }
    GrayImage::new(out_h, out_w, data)
}

fn axis_weights(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    let last = (n_in - 1) as f64;
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Per-image min-max normalization; constant images map to zeros.
pub fn normalize(img: &GrayImage) -> GrayImage {
    let (lo, hi) = img.min_max();
    let range = hi - lo;
    if !(range > 0.0) {
        return img.map(|_| 0.0);
    }
    img.map(|v| ((v - lo) / range).clamp(0.0, 1.0))
}

/// Grayscale, resize and min-max normalize in one step.
pub fn preprocess(img: &GrayImage, out_h: usize, out_w: usize) -> Result<GrayImage> {
    Ok(normalize(&resize(img, out_h, out_w)?))
}

fn check_patch_fits(img: &GrayImage, m: usize) -> Result<()> {
    if m == 0 {
        return invalid("patch side must be positive");
    }
    if m > img.height || m > img.width {
        return invalid(format!(
            "patch side {m} exceeds image {}x{}",
            img.height, img.width
        ));
    }
    Ok(())
}

/// Draws `count` patches at uniformly random top-left positions.
pub fn sample_patches(img: &GrayImage, m: usize, count: usize, rng_seed: u64) -> Result<Vec<Patch>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_patches_with(img, m, count, &mut rng)
}

pub fn sample_patches_with<R: Rng>(
    img: &GrayImage,
    m: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Patch>> {
    check_patch_fits(img, m)?;
    if count == 0 {
        return invalid("patch count must be at least 1");
    }
    let (ny, nx) = (img.height - m + 1, img.width - m + 1);
    Ok((0..count)
        .map(|_| {
            let y = rng.random_range(0..ny);
            let x = rng.random_range(0..nx);
            img.patch_at(y, x, m)
        })
        .collect())
}

/// One stride-1 patch with its raw center intensity and top-left `(row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensePatch {
    pub patch: Patch,
    pub center: f64,
    pub position: (usize, usize),
}

/// Offset from a window's top-left corner to its center pixel.
pub fn center_offset(m: usize) -> usize {
    m / 2
}

/// All overlapping `m x m` patches in row-major scan order.
pub fn dense_patches(img: &GrayImage, m: usize) -> Result<Vec<DensePatch>> {
    check_patch_fits(img, m)?;
    let c = center_offset(m);
    let mut out = Vec::with_capacity((img.height - m + 1) * (img.width - m + 1));
    for y in 0..=img.height - m {
        for x in 0..=img.width - m {
            out.push(DensePatch {
                patch: img.patch_at(y, x, m),
                center: img.get(y + c, x + c),
                position: (y, x),
            });
        }
    }
    Ok(out)
}

/// Valid-mode cross-correlation (no kernel flip). The result is a response
/// map and is not clamped.
pub fn xcorr_valid(img: &GrayImage, kernel: &Patch) -> Result<GrayImage> {
    let m = kernel.side();
    check_patch_fits(img, m)?;
    let (oh, ow) = (img.height - m + 1, img.width - m + 1);
    let mut out = vec![0.0; oh * ow];
    let k = kernel.data();
    for y in 0..oh {
        let out_row = &mut out[y * ow..(y + 1) * ow];
        for ky in 0..m {
            let src = img.row(y + ky);
            for kx in 0..m {
                let w = k[ky * m + kx];
                if w == 0.0 {
                    continue;
                }
                for (o, &s) in out_row.iter_mut().zip(&src[kx..kx + ow]) {
                    *o += w * s;
                }
            }
        }
    }
    GrayImage::new(oh, ow, out)
}

/// Loads a PNG or PGM file as a grayscale image in `[0, 1]`.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let dynimg = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    to_grayscale(&dynimg.to_rgb8())
}

/// Quantizes `[0, 1]` values to 8 bits.
pub fn to_luma8(img: &GrayImage) -> image::GrayImage {
    image::GrayImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let v = img.get(y as usize, x as usize).clamp(0.0, 1.0);
        image::Luma([(v * 255.0).round() as u8])
    })
}

pub fn save_png(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    to_luma8(img).save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
