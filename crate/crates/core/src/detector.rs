//! Stamp localization from averaged rectified filter responses.

use serde::Serialize;

use crate::dictionary::{composed_filters, weight_by_inverted_center, FilterSet, RankedDictionary};
use crate::error::{invalid, Result};
use crate::imaging::{center_offset, BoundingBox, GrayImage};

/// Fixed-point scale for window sums. Integer sums make the summed-area
/// table exact, so equal windows tie exactly.
pub const SUM_SCALE: f64 = (1u64 << 32) as f64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    /// Window height as a fraction of the page height.
    pub window_frac_h: f64,
    /// Window width as a fraction of the page width.
    pub window_frac_w: f64,
    /// Refinement threshold as a fraction of the in-window maximum.
    pub theta: f64,
    /// Restrict the window search to the lower half of the page.
    pub lower_half_only: bool,
    /// Peaks at or below this are reported as "no stamp".
    pub peak_floor: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            window_frac_h: 0.45,
            window_frac_w: 0.55,
            theta: 0.3,
            lower_half_only: false,
            peak_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionResult {
    pub bbox: BoundingBox,
    pub response_peak: f64,
    /// Top-left `(row, col)` of the winning window in response-map coordinates.
    pub window_origin: (usize, usize),
}

impl DetectionResult {
    pub fn has_stamp(&self, floor: f64) -> bool {
        self.response_peak > floor
    }
}

/// Average over filters of `max(0, response) * (1 - center intensity)`.
pub fn response_map_with(img: &GrayImage, filters: &FilterSet) -> Result<GrayImage> {
    let m = filters.side();
    if img.height() <= m || img.width() <= m {
        return invalid(format!(
            "page {}x{} not larger than filter side {m}",
            img.height(),
            img.width()
        ));
    }
    let mut acc: Option<GrayImage> = None;
    for j in 0..filters.len() {
        let mut r = filters.response(img, j)?;
        weight_by_inverted_center(&mut r, img, m);
        match acc.as_mut() {
            None => acc = Some(r),
            Some(a) => a.data_mut().iter_mut().zip(r.data()).for_each(|(x, y)| *x += y),
        }
    }
    let n = filters.len() as f64;
    let mut acc = acc.expect("filter sets are non-empty");
    acc.data_mut().iter_mut().for_each(|v| *v /= n);
    Ok(acc)
}

pub fn response_map(img: &GrayImage, rd: &RankedDictionary) -> Result<GrayImage> {
    response_map_with(img, &composed_filters(rd))
}

fn quantize(v: f64) -> i128 {
    (v * SUM_SCALE).round() as i128
}

/// Summed-area table over fixed-point values with a zero border row/column.
pub struct SummedArea {
    width: usize,
    table: Vec<i128>,
}

impl SummedArea {
    pub fn new(map: &GrayImage) -> Self {
        let (h, w) = (map.height(), map.width());
        let stride = w + 1;
        let mut table = vec![0i128; (h + 1) * stride];
        for y in 0..h {
            let mut row = 0i128;
            for x in 0..w {
                row += quantize(map.get(y, x));
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
            }
        }
        Self { width: w, table }
    }

    /// Fixed-point sum over `[y, y+h) x [x, x+w)`.
    pub fn window_raw(&self, y: usize, x: usize, h: usize, w: usize) -> i128 {
        let s = self.width + 1;
        let t = &self.table;
        t[(y + h) * s + x + w] - t[y * s + x + w] - t[(y + h) * s + x] + t[y * s + x]
    }

    pub fn window(&self, y: usize, x: usize, h: usize, w: usize) -> f64 {
        self.window_raw(y, x, h, w) as f64 / SUM_SCALE
    }
}

/// Window placement and its response sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowHit {
    pub origin: (usize, usize),
    pub height: usize,
    pub width: usize,
    pub sum: f64,
}

/// Finds the `win_h x win_w` window with the largest sum; ties go to the
/// topmost, then leftmost origin. Rows before `min_row` are skipped.
pub fn locate_window_from(map: &GrayImage, win_h: usize, win_w: usize, min_row: usize) -> Result<WindowHit> {
    if win_h == 0 || win_w == 0 || win_h > map.height() || win_w > map.width() {
        return invalid(format!(
            "window {win_h}x{win_w} does not fit map {}x{}",
            map.height(),
            map.width()
        ));
    }
    let last_row = map.height() - win_h;
    let min_row = min_row.min(last_row);
    let sat = SummedArea::new(map);
    let mut best = (min_row, 0);
    let mut best_sum = i128::MIN;
    for y in min_row..=last_row {
        for x in 0..=map.width() - win_w {
            let s = sat.window_raw(y, x, win_h, win_w);
            if s > best_sum {
                best_sum = s;
                best = (y, x);
            }
        }
    }
    Ok(WindowHit {
        origin: best,
        height: win_h,
        width: win_w,
        sum: best_sum as f64 / SUM_SCALE,
    })
}

pub fn locate_window(map: &GrayImage, win_h: usize, win_w: usize) -> Result<WindowHit> {
    locate_window_from(map, win_h, win_w, 0)
}

/// Tight box of pixels above `theta * max` inside the window, mapped from
/// response-map coordinates to image coordinates (window centers sit
/// `side / 2` pixels in from the valid-correlation origin). An empty
/// super-threshold set yields the window itself.
pub fn refine_box(map: &GrayImage, window: &WindowHit, theta: f64, filter_side: usize) -> BoundingBox {
    let (oy, ox) = window.origin;
    let mut peak = f64::NEG_INFINITY;
    for y in oy..oy + window.height {
        for &v in &map.row(y)[ox..ox + window.width] {
            peak = peak.max(v);
        }
    }
    let c = center_offset(filter_side);
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    if peak > 0.0 {
        let cut = theta * peak;
        for y in oy..oy + window.height {
            for (dx, &v) in map.row(y)[ox..ox + window.width].iter().enumerate() {
                if v > cut {
                    let x = ox + dx;
                    bounds = Some(match bounds {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
    }
    let (x0, y0, x1, y1) = bounds.unwrap_or((ox, oy, ox + window.width, oy + window.height));
    BoundingBox {
        x0: x0 + c,
        y0: y0 + c,
        x1: x1 + c,
        y1: y1 + c,
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = a.x1.min(b.x1).saturating_sub(a.x0.max(b.x0));
    let iy = a.y1.min(b.y1).saturating_sub(a.y0.max(b.y0));
    let inter = (ix * iy) as f64;
    let union = (a.area() + b.area()) as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Window size in response-map pixels for a page of the given size.
pub fn window_size(page_h: usize, page_w: usize, map_h: usize, map_w: usize, params: &DetectParams) -> (usize, usize) {
    let h = ((page_h as f64 * params.window_frac_h).round() as usize).clamp(1, map_h);
    let w = ((page_w as f64 * params.window_frac_w).round() as usize).clamp(1, map_w);
    (h, w)
}

pub fn detect_with(img: &GrayImage, filters: &FilterSet, params: &DetectParams) -> Result<DetectionResult> {
    let map = response_map_with(img, filters)?;
    let (wh, ww) = window_size(img.height(), img.width(), map.height(), map.width(), params);
    let min_row = if params.lower_half_only {
        (img.height() / 2).saturating_sub(center_offset(filters.side()))
    } else {
        0
    };
    let hit = locate_window_from(&map, wh, ww, min_row)?;
    let bbox = refine_box(&map, &hit, params.theta, filters.side());
    let (oy, ox) = hit.origin;
    let mut peak = 0.0f64;
    for y in oy..oy + hit.height {
        for &v in &map.row(y)[ox..ox + hit.width] {
            peak = peak.max(v);
        }
    }
    Ok(DetectionResult {
        bbox,
        response_peak: peak,
        window_origin: hit.origin,
    })
}

pub fn detect(img: &GrayImage, rd: &RankedDictionary, params: &DetectParams) -> Result<DetectionResult> {
    detect_with(img, &composed_filters(rd), params)
}
