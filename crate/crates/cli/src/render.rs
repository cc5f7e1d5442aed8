//! PNG rendering for atoms, atom mosaics and detection overlays.

use image::{Rgb, RgbImage};
use stampfeat::imaging::{BoundingBox, GrayImage};

const RED: Rgb<u8> = Rgb([220, 30, 30]);
const BLUE: Rgb<u8> = Rgb([30, 60, 230]);
const FRAME: Rgb<u8> = Rgb([128, 128, 128]);

/// Atom values min-max stretched to 0..=255 and upscaled by `zoom`.
pub fn atom_image(atom: &[f64], side: usize, zoom: usize) -> image::GrayImage {
    let lo = atom.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = atom.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let zoom = zoom.max(1);
    image::GrayImage::from_fn((side * zoom) as u32, (side * zoom) as u32, |x, y| {
        let v = atom[(y as usize / zoom) * side + x as usize / zoom];
        let t = if span > 0.0 { (v - lo) / span } else { 0.5 };
        image::Luma([(t * 255.0).round() as u8])
    })
}

/// Atoms tiled in the given order, `cols` per row. The first `selected`
/// tiles get a red frame, the rest a gray one.
pub fn mosaic(atoms: &[&[f64]], side: usize, selected: usize, cols: usize, zoom: usize) -> RgbImage {
    let cols = cols.max(1);
    let rows = atoms.len().div_ceil(cols);
    let border = 2usize;
    let tile = side * zoom.max(1) + 2 * border;
    let gap = 2usize;
    let w = cols * (tile + gap) + gap;
    let h = rows * (tile + gap) + gap;
    let mut out = RgbImage::from_pixel(w as u32, h as u32, Rgb([255, 255, 255]));
    for (i, atom) in atoms.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        let (ox, oy) = (gap + c * (tile + gap), gap + r * (tile + gap));
        let color = if i < selected { RED } else { FRAME };
        fill_rect(&mut out, ox, oy, tile, tile, color);
        let img = atom_image(atom, side, zoom);
        for (x, y, p) in img.enumerate_pixels() {
            let v = p.0[0];
            out.put_pixel((ox + border) as u32 + x, (oy + border) as u32 + y, Rgb([v, v, v]));
        }
    }
    out
}

/// Grayscale page with the ground-truth box in blue and the estimate in red.
pub fn annotate(page: &GrayImage, truth: Option<&BoundingBox>, estimate: &BoundingBox) -> RgbImage {
    let luma = stampfeat::imaging::to_luma8(page);
    let mut out = RgbImage::from_fn(luma.width(), luma.height(), |x, y| {
        let v = luma.get_pixel(x, y).0[0];
        Rgb([v, v, v])
    });
    if let Some(t) = truth {
        draw_box(&mut out, t, BLUE);
    }
    draw_box(&mut out, estimate, RED);
    out
}

fn fill_rect(img: &mut RgbImage, x0: usize, y0: usize, w: usize, h: usize, color: Rgb<u8>) {
    for y in y0..(y0 + h).min(img.height() as usize) {
        for x in x0..(x0 + w).min(img.width() as usize) {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Two-pixel outline hugging the inside of `b`, clipped to the image.
fn draw_box(img: &mut RgbImage, b: &BoundingBox, color: Rgb<u8>) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (x1, y1) = (b.x1.min(w), b.y1.min(h));
    if b.x0 >= x1 || b.y0 >= y1 {
        return;
    }
    for t in 0..2usize {
        for x in b.x0..x1 {
            for y in [b.y0 + t, y1.saturating_sub(1 + t)] {
                if y < h {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
        for y in b.y0..y1 {
            for x in [b.x0 + t, x1.saturating_sub(1 + t)] {
                if x < w {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atom_stretch() {
        let img = atom_image(&[-1.0, 0.0, 0.0, 1.0], 2, 2);
        assert_eq!(img.dimensions(), (4, 4));
        assert_eq!(img.get_pixel(0, 0).0[0], 0);
        assert_eq!(img.get_pixel(3, 3).0[0], 255);
        assert_eq!(img.get_pixel(2, 0).0[0], 128);
    }

    #[test]
    fn mosaic_marks_selected() {
        let a = [0.0, 1.0, 2.0, 3.0];
        let atoms: Vec<&[f64]> = vec![&a, &a, &a];
        let m = mosaic(&atoms, 2, 1, 2, 1);
        // Tile 0 frame is red, tile 1 frame gray.
        assert_eq!(*m.get_pixel(2, 2), RED);
        assert_eq!(*m.get_pixel(2 + 6 + 2, 2), FRAME);
    }

    #[test]
    fn overlay_colors() {
        let page = GrayImage::filled(20, 30, 1.0);
        let truth = BoundingBox::new(2, 2, 10, 10).unwrap();
        let est = BoundingBox::new(12, 5, 25, 18).unwrap();
        let img = annotate(&page, Some(&truth), &est);
        assert_eq!(*img.get_pixel(2, 5), BLUE);
        assert_eq!(*img.get_pixel(12, 10), RED);
        assert_eq!(*img.get_pixel(5, 5), Rgb([255, 255, 255]));
    }
}
