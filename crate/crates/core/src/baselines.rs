//! Comparison filter banks: a Gabor bank and random Gaussian filters.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dictionary::{AtomScores, Dictionary, RankedDictionary};
use crate::error::{invalid, Result};
use crate::whitening::WhiteningTransform;

/// Shortest Gabor wavelength in pixels.
const MIN_WAVELENGTH: f64 = 4.0;
/// Bandwidth in octaves.
const BANDWIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankKind {
    Gabor { scales: usize, orientations: usize },
    Random { seed: u64 },
}

/// Zero-mean, unit-norm filters of side `side`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    kind: BankKind,
    side: usize,
    filters: Vec<Vec<f64>>,
}

impl FilterBank {
    pub fn kind(&self) -> BankKind {
        self.kind
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn filters(&self) -> &[Vec<f64>] {
        &self.filters
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// The bank as a ranked dictionary over pixel space: identity whitening,
    /// all filters selected in bank order.
    pub fn to_ranked_dictionary(&self) -> RankedDictionary {
        let dict = Dictionary::new(self.side, self.filters.clone()).expect("bank filters are valid atoms");
        let scores = AtomScores::from_scores(vec![0.0; self.len()]).expect("bank is non-empty");
        RankedDictionary::new(dict, scores, self.len(), WhiteningTransform::identity(self.side * self.side))
            .expect("dimensions agree")
    }
}

fn zero_mean_unit_norm(mut f: Vec<f64>) -> Vec<f64> {
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    f.iter_mut().for_each(|v| *v -= mean);
    let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        f.iter_mut().for_each(|v| *v /= norm);
    }
    f
}

/// Gaussian envelope width for a given wavelength and octave bandwidth.
fn sigma_for(wavelength: f64) -> f64 {
    let b = 2f64.powf(BANDWIDTH);
    wavelength / PI * (2f64.ln() / 2.0).sqrt() * (b + 1.0) / (b - 1.0)
}

/// Cosine-phase Gabor kernels. Wavelengths run geometrically from 4 px to
/// `m` px over the scales; orientations are uniform over `[0, pi)`.
pub fn gabor_bank(m: usize, n_scales: usize, n_orientations: usize) -> Result<FilterBank> {
    if m < 3 {
        return invalid(format!("Gabor side {m} below 3"));
    }
    if n_scales == 0 || n_orientations == 0 {
        return invalid("Gabor bank needs at least one scale and one orientation");
    }
    let max_wl = (m as f64).max(MIN_WAVELENGTH);
    let center = (m as f64 - 1.0) / 2.0;
    let mut filters = Vec::with_capacity(n_scales * n_orientations);
    for s in 0..n_scales {
        let t = if n_scales == 1 { 0.0 } else { s as f64 / (n_scales - 1) as f64 };
        let wavelength = MIN_WAVELENGTH * (max_wl / MIN_WAVELENGTH).powf(t);
        let sigma = sigma_for(wavelength);
        for o in 0..n_orientations {
            let theta = PI * o as f64 / n_orientations as f64;
            let (sin, cos) = theta.sin_cos();
            let mut k = Vec::with_capacity(m * m);
            for y in 0..m {
                for x in 0..m {
                    let (dx, dy) = (x as f64 - center, y as f64 - center);
                    let xr = dx * cos + dy * sin;
                    let yr = -dx * sin + dy * cos;
                    let env = (-(xr * xr + yr * yr) / (2.0 * sigma * sigma)).exp();
                    k.push(env * (2.0 * PI * xr / wavelength).cos());
                }
            }
            filters.push(zero_mean_unit_norm(k));
        }
    }
    Ok(FilterBank {
        kind: BankKind::Gabor {
            scales: n_scales,
            orientations: n_orientations,
        },
        side: m,
        filters,
    })
}

/// I.i.d. standard-normal filters, zero-meaned and unit-normalized.
pub fn random_bank(m: usize, count: usize, rng_seed: u64) -> Result<FilterBank> {
    if m < 2 {
        return invalid(format!("random filter side {m} below 2"));
    }
    if count == 0 {
        return invalid("random bank needs at least one filter");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let filters = (0..count)
        .map(|_| zero_mean_unit_norm((0..m * m).map(|_| StandardNormal.sample(&mut rng)).collect()))
        .collect();
    Ok(FilterBank {
        kind: BankKind::Random { seed: rng_seed },
        side: m,
        filters,
    })
}
