//! Seeded synthetic document pages with ring-shaped stamps and exact ground
//! truth, plus non-stamp crops and on-disk datasets.
//!
//! Every sample is a pure function of its [`SynthSpec`]; the same spec always
//! renders the same bytes.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::classifier::Label;
use crate::error::{invalid, Error, Result};
use crate::imaging::{resize, save_png, BoundingBox, GrayImage};
use crate::manifest::{write_manifest, ManifestRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StampShape {
    Circle,
    Ellipse,
    DoubleRing,
}

impl StampShape {
    pub const ALL: [StampShape; 3] = [StampShape::Circle, StampShape::Ellipse, StampShape::DoubleRing];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    LowerHalf,
    Anywhere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeKind {
    Text,
    Border,
    Background,
}

/// Page rendering parameters. Ranges are `(low, high)` and sampled per page.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub page_h: usize,
    pub page_w: usize,
    /// `None` picks a shape at random.
    pub shape: Option<StampShape>,
    pub ink: (f64, f64),
    pub background: f64,
    pub text_ink: (f64, f64),
    /// Fraction of text line slots that carry words; 0 disables text.
    pub text_density: f64,
    pub noise_sigma: (f64, f64),
    pub fade: (f64, f64),
    pub diameter: (usize, usize),
    pub placement: Placement,
    /// Downscale-then-upscale factor simulating low-resolution scans.
    pub low_res: Option<usize>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            page_h: 200,
            page_w: 300,
            shape: None,
            ink: (0.05, 0.3),
            background: 0.95,
            text_ink: (0.55, 0.75),
            text_density: 0.5,
            noise_sigma: (0.0, 0.05),
            fade: (0.0, 0.5),
            diameter: (60, 90),
            placement: Placement::LowerHalf,
            low_res: None,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// No text, no noise, no fading.
    pub fn clean(seed: u64) -> Self {
        Self {
            text_density: 0.0,
            noise_sigma: (0.0, 0.0),
            fade: (0.0, 0.0),
            seed,
            ..Self::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if self.page_h < 16 || self.page_w < 16 {
            return invalid(format!("page {}x{} too small", self.page_h, self.page_w));
        }
        let ordered = |r: (f64, f64)| r.0 <= r.1;
        if !ordered(self.ink) || !ordered(self.text_ink) || !ordered(self.noise_sigma) || !ordered(self.fade) {
            return invalid("range with low > high");
        }
        if !(self.ink.1 < self.background) || self.ink.0 < 0.0 || self.background > 1.0 {
            return invalid("stamp ink must be darker than the background");
        }
        if self.fade.0 < 0.0 || self.fade.1 > 1.0 {
            return invalid("fade must lie in [0, 1]");
        }
        if self.noise_sigma.0 < 0.0 {
            return invalid("noise sigma must be non-negative");
        }
        if self.diameter.0 < 8 || self.diameter.0 > self.diameter.1 {
            return invalid("stamp diameter range invalid");
        }
        if matches!(self.low_res, Some(0)) {
            return invalid("low-res factor must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub page: GrayImage,
    pub stamp_box: Option<BoundingBox>,
    pub label: Label,
}

fn uniform<R: Rng>(rng: &mut R, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

/// Light-gray word blocks on regular lines. Each word is a run of
/// character-like vertical strokes.
fn render_text<R: Rng>(page: &mut GrayImage, rows: std::ops::Range<usize>, spec: &SynthSpec, rng: &mut R) {
    if spec.text_density <= 0.0 {
        return;
    }
    let ink = uniform(rng, spec.text_ink);
    let margin = 10.min(page.width() / 8);
    let line_pitch = rng.random_range(12..17);
    let mut top = rows.start + rng.random_range(4..10);
    while top + 7 < rows.end {
        if rng.random::<f64>() < spec.text_density {
            let glyph_h = rng.random_range(5..8);
            let mut x = margin + rng.random_range(0..8);
            let line_end = page.width().saturating_sub(margin + rng.random_range(0..40));
            while x + 6 < line_end {
                let word = rng.random_range(3..9);
                for _ in 0..word {
                    let cw = rng.random_range(1..3);
                    let ascender = usize::from(rng.random::<f64>() < 0.3);
                    for y in top.saturating_sub(ascender)..(top + glyph_h).min(rows.end) {
                        for xx in x..(x + cw).min(line_end) {
                            page.set(y, xx, page.get(y, xx).min(ink));
                        }
                    }
                    x += cw + 1;
                }
                x += rng.random_range(4..9);
            }
        }
        top += line_pitch;
    }
}

/// Stamp geometry centered at `(cy, cx)`: outer radii `(ry, rx)`.
struct Stamp {
    shape: StampShape,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    stroke: f64,
    dots: Vec<(f64, f64)>,
}

impl Stamp {
    fn new<R: Rng>(shape: StampShape, cy: f64, cx: f64, r: f64, rng: &mut R) -> Self {
        let (ry, rx) = match shape {
            StampShape::Ellipse => (r * rng.random_range(0.62..0.78), r),
            _ => (r, r),
        };
        let stroke = rng.random_range(2.5..4.5);
        // Arced lettering between the rings.
        let n = rng.random_range(18..30);
        let start = rng.random::<f64>() * 2.0 * PI;
        let text_r = if shape == StampShape::DoubleRing { 0.83 } else { 0.78 };
        let dots = (0..n)
            .filter_map(|i| {
                if rng.random::<f64>() < 0.15 {
                    return None;
                }
                let a = start + 2.0 * PI * i as f64 / n as f64;
                Some((cy + ry * text_r * a.sin(), cx + rx * text_r * a.cos()))
            })
            .collect();
        Self {
            shape,
            cy,
            cx,
            ry,
            rx,
            stroke,
            dots,
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        // Radial position normalized to the outer ring, scaled to pixels.
        let rho = ((dy / self.ry).powi(2) + (dx / self.rx).powi(2)).sqrt();
        let scale = self.ry.min(self.rx);
        let depth = (1.0 - rho) * scale;
        if (0.0..self.stroke).contains(&depth) {
            return true;
        }
        if self.shape == StampShape::DoubleRing {
            let inner = (0.66 - rho) * scale;
            if (0.0..self.stroke * 0.8).contains(&inner) {
                return true;
            }
        }
        // Central emblem: filled blob with a notch.
        let emblem = 0.2 * scale;
        let d = (dy * dy + dx * dx).sqrt();
        if d <= emblem && !(dy > 0.0 && dx.abs() < emblem * 0.25) {
            return true;
        }
        self.dots
            .iter()
            .any(|&(py, px)| (y - py).powi(2) + (x - px).powi(2) <= 2.2)
    }

    fn extent(&self) -> (usize, usize, usize, usize) {
        let y0 = (self.cy - self.ry - 1.0).floor().max(0.0) as usize;
        let x0 = (self.cx - self.rx - 1.0).floor().max(0.0) as usize;
        let y1 = (self.cy + self.ry + 2.0).ceil() as usize;
        let x1 = (self.cx + self.rx + 2.0).ceil() as usize;
        (y0, x0, y1, x1)
    }
}

fn degrade<R: Rng>(page: &mut GrayImage, spec: &SynthSpec, sigma: f64, rng: &mut R) -> Result<()> {
    if let Some(f) = spec.low_res {
        if f > 1 {
            let small = resize(page, (page.height() / f).max(1), (page.width() / f).max(1))?;
            *page = resize(&small, page.height(), page.width())?;
        }
    }
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
        for v in page.data_mut() {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }
    Ok(())
}

/// Renders a page with one stamp in the placement region.
pub fn gen_stamp_page(spec: &SynthSpec) -> Result<SynthSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.page_h, spec.page_w);
    let mut page = GrayImage::filled(h, w, spec.background);
    render_text(&mut page, 0..h, spec, &mut rng);

    let shape = spec
        .shape
        .unwrap_or_else(|| StampShape::ALL[rng.random_range(0..StampShape::ALL.len())]);
    let diameter = rng.random_range(spec.diameter.0..=spec.diameter.1) as f64;
    let r = diameter / 2.0;
    let (region_top, region_bottom) = match spec.placement {
        Placement::LowerHalf => (h / 2, h),
        Placement::Anywhere => (0, h),
    };
    let pad = 2.0;
    let (cy_lo, cy_hi) = (region_top as f64 + r + pad, region_bottom as f64 - r - pad - 1.0);
    let (cx_lo, cx_hi) = (r + pad, w as f64 - r - pad - 1.0);
    if cy_lo > cy_hi || cx_lo > cx_hi {
        return invalid(format!(
            "stamp diameter {diameter} does not fit the placement region of a {h}x{w} page"
        ));
    }
    let cy = uniform(&mut rng, (cy_lo, cy_hi)).round();
    let cx = uniform(&mut rng, (cx_lo, cx_hi)).round();
    let stamp = Stamp::new(shape, cy, cx, r, &mut rng);

    let ink = uniform(&mut rng, spec.ink);
    let fade = uniform(&mut rng, spec.fade);
    let faded = ink + fade * (spec.background - ink);
    let (ey0, ex0, ey1, ex1) = stamp.extent();
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in ey0..ey1.min(h) {
        for x in ex0..ex1.min(w) {
            if stamp.contains(y as f64, x as f64) {
                page.set(y, x, page.get(y, x).min(faded));
                bounds = Some(match bounds {
                    None => (x, y, x + 1, y + 1),
                    Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x + 1), d.max(y + 1)),
                });
            }
        }
    }
    let (x0, y0, x1, y1) = bounds.expect("stamp renders at least one pixel");
    let sigma = uniform(&mut rng, spec.noise_sigma);
    degrade(&mut page, spec, sigma, &mut rng)?;
    Ok(SynthSample {
        page,
        stamp_box: Some(BoundingBox::new(x0, y0, x1, y1)?),
        label: Label::Stamp,
    })
}

/// Typical crop size of a marked stamp, used to size negative crops.
fn crop_size<R: Rng>(spec: &SynthSpec, rng: &mut R) -> (usize, usize) {
    let d = rng.random_range(spec.diameter.0..=spec.diameter.1) as f64;
    let h = (d * rng.random_range(1.0..1.4)).round() as usize;
    let w = (d * rng.random_range(1.0..1.5)).round() as usize;
    (h.min(spec.page_h / 2).max(16), w.min(spec.page_w).max(16))
}

/// Renders a non-stamp crop of a random kind.
pub fn gen_negative(spec: &SynthSpec) -> Result<SynthSample> {
    let kind = {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6e65_6761_7469_7665);
        match rng.random_range(0..10) {
            0..=5 => NegativeKind::Text,
            6..=7 => NegativeKind::Border,
            _ => NegativeKind::Background,
        }
    };
    gen_negative_kind(spec, kind)
}

/// Non-stamp crop: text from the upper half of a page, a page border with a
/// dark frame line, or near-constant background.
pub fn gen_negative_kind(spec: &SynthSpec, kind: NegativeKind) -> Result<SynthSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.page_h, spec.page_w);
    let (ch, cw) = crop_size(spec, &mut rng);
    let mut page = GrayImage::filled(h, w, spec.background);
    let upper = h / 2;
    let (y0, x0) = match kind {
        NegativeKind::Text => {
            render_text(&mut page, 0..upper, spec, &mut rng);
            (rng.random_range(0..=upper - ch), rng.random_range(0..=w - cw))
        }
        NegativeKind::Border => {
            render_text(&mut page, 0..upper, spec, &mut rng);
            let inset = rng.random_range(3..8);
            let thick = rng.random_range(1..4);
            let ink = uniform(&mut rng, spec.ink);
            for y in 0..h {
                for x in 0..w {
                    let d = y.min(x).min(h - 1 - y).min(w - 1 - x);
                    if (inset..inset + thick).contains(&d) {
                        page.set(y, x, ink);
                    }
                }
            }
            // Anchor the crop at a page edge so the frame line is inside it.
            let y = if rng.random::<bool>() { 0 } else { rng.random_range(0..=upper - ch) };
            let x = if y == 0 && rng.random::<bool>() {
                rng.random_range(0..=w - cw)
            } else if rng.random::<bool>() {
                0
            } else {
                w - cw
            };
            (y, x)
        }
        NegativeKind::Background => (rng.random_range(0..=upper - ch), rng.random_range(0..=w - cw)),
    };
    let sigma = uniform(&mut rng, spec.noise_sigma);
    degrade(&mut page, spec, sigma, &mut rng)?;
    Ok(SynthSample {
        page: page.crop(y0, x0, ch, cw)?,
        stamp_box: None,
        label: Label::NonStamp,
    })
}

/// Emulates a hand-drawn box around the stamp: per-side margins between a
/// slight cut into the stamp and a generous border, clamped to the page.
pub fn marked_crop<R: Rng>(page: &GrayImage, stamp: &BoundingBox, rng: &mut R) -> Result<GrayImage> {
    let (bh, bw) = (stamp.height() as f64, stamp.width() as f64);
    let mut side = |size: f64| (size * rng.random_range(-0.08..0.25)).round() as i64;
    let x0 = (stamp.x0 as i64 - side(bw)).clamp(0, page.width() as i64 - 1) as usize;
    let y0 = (stamp.y0 as i64 - side(bh)).clamp(0, page.height() as i64 - 1) as usize;
    let x1 = (stamp.x1 as i64 + side(bw)).clamp(x0 as i64 + 1, page.width() as i64) as usize;
    let y1 = (stamp.y1 as i64 + side(bh)).clamp(y0 as i64 + 1, page.height() as i64) as usize;
    page.crop(y0, x0, y1 - y0, x1 - x0)
}

/// Per-sample seeds derived from one dataset seed.
fn sample_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Positive pages followed by negative crops, all in memory.
pub fn gen_samples(n_pos: usize, n_neg: usize, template: &SynthSpec, rng_seed: u64) -> Result<Vec<SynthSample>> {
    let seeds = sample_seeds(rng_seed, n_pos + n_neg);
    let mut out = Vec::with_capacity(seeds.len());
    for (i, &s) in seeds.iter().enumerate() {
        let spec = template.with_seed(s);
        out.push(if i < n_pos { gen_stamp_page(&spec)? } else { gen_negative(&spec)? });
    }
    Ok(out)
}

/// Writes `n_pos` stamp pages and `n_neg` non-stamp crops as PNGs plus
/// `manifest.csv` into `out_dir`. Returns the manifest rows.
pub fn gen_dataset(
    n_pos: usize,
    n_neg: usize,
    template: &SynthSpec,
    rng_seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<ManifestRow>> {
    if n_pos == 0 || n_neg == 0 {
        return invalid("dataset needs at least one positive and one negative");
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let samples = gen_samples(n_pos, n_neg, template, rng_seed)?;
    let mut rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = match s.label {
            Label::Stamp => format!("pos_{i:05}.png"),
            Label::NonStamp => format!("neg_{:05}.png", i - n_pos),
        };
        save_png(&s.page, out_dir.join(&name))?;
        rows.push(ManifestRow {
            path: name.into(),
            label: s.label,
            bbox: s.stamp_box,
        });
    }
    write_manifest(out_dir.join("manifest.csv"), &rows)?;
    Ok(rows)
}
