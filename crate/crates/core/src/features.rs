//! Verification features: filter responses, 1-of-K max-assignment encoding
//! and 4x4 quadrant max pooling.

use crate::dictionary::{composed_filters, FilterSet, RankedDictionary};
use crate::error::{invalid, Result};
use crate::imaging::GrayImage;

/// Pooling grid is `POOL_GRID x POOL_GRID` cells per map.
pub const POOL_GRID: usize = 4;

/// Response maps after max-assignment encoding. At each position at most one
/// map is nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMaps {
    maps: Vec<GrayImage>,
}

impl EncodedMaps {
    pub fn maps(&self) -> &[GrayImage] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// Largest number of nonzero entries found at a single position.
    pub fn max_active_per_position(&self) -> usize {
        let n = self.maps[0].data().len();
        (0..n)
            .map(|i| self.maps.iter().filter(|m| m.data()[i] != 0.0).count())
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Keeps, at each position, only the response attaining the maximum (lowest
/// index on ties). The kept value is the raw response and may be negative.
pub fn max_assign(responses: Vec<GrayImage>) -> Result<EncodedMaps> {
    let Some(first) = responses.first() else {
        return invalid("no response maps to encode");
    };
    let (h, w) = (first.height(), first.width());
    if responses.iter().any(|r| r.height() != h || r.width() != w) {
        return invalid("response maps differ in size");
    }
    let n = h * w;
    let mut winner = vec![0usize; n];
    let mut best: Vec<f64> = first.data().to_vec();
    for (j, r) in responses.iter().enumerate().skip(1) {
        for ((b, win), &v) in best.iter_mut().zip(winner.iter_mut()).zip(r.data()) {
            if v > *b {
                *b = v;
                *win = j;
            }
        }
    }
    let mut maps = responses;
    for (j, map) in maps.iter_mut().enumerate() {
        for (v, &win) in map.data_mut().iter_mut().zip(&winner) {
            if win != j {
                *v = 0.0;
            }
        }
    }
    Ok(EncodedMaps { maps })
}

/// Correlates the filters over the image and max-assign encodes the result.
pub fn encode_with(img: &GrayImage, filters: &FilterSet) -> Result<EncodedMaps> {
    max_assign(filters.responses(img)?)
}

pub fn encode(img: &GrayImage, rd: &RankedDictionary) -> Result<EncodedMaps> {
    encode_with(img, &composed_filters(rd))
}

/// Cell boundaries along one axis: floor split, remainder to trailing cells.
pub fn pool_bounds(len: usize) -> [usize; POOL_GRID + 1] {
    let base = len / POOL_GRID;
    let rem = len % POOL_GRID;
    let mut bounds = [0; POOL_GRID + 1];
    for i in 0..POOL_GRID {
        let extra = usize::from(i >= POOL_GRID - rem);
        bounds[i + 1] = bounds[i] + base + extra;
    }
    bounds
}

/// Per-cell maxima over a 4x4 grid of each map; map-major, then cell rows.
pub fn quadrant_max_pool(maps: &EncodedMaps) -> Result<FeatureVector> {
    let mut values = Vec::with_capacity(POOL_GRID * POOL_GRID * maps.len());
    for map in &maps.maps {
        if map.height() < POOL_GRID || map.width() < POOL_GRID {
            return invalid(format!(
                "map {}x{} smaller than the {POOL_GRID}x{POOL_GRID} pooling grid",
                map.height(),
                map.width()
            ));
        }
        let ys = pool_bounds(map.height());
        let xs = pool_bounds(map.width());
        for cy in 0..POOL_GRID {
            for cx in 0..POOL_GRID {
                let mut m = f64::NEG_INFINITY;
                for y in ys[cy]..ys[cy + 1] {
                    for &v in &map.row(y)[xs[cx]..xs[cx + 1]] {
                        m = m.max(v);
                    }
                }
                values.push(m);
            }
        }
    }
    Ok(FeatureVector { values })
}

pub fn extract_with(img: &GrayImage, filters: &FilterSet) -> Result<FeatureVector> {
    quadrant_max_pool(&encode_with(img, filters)?)
}

pub fn extract(img: &GrayImage, rd: &RankedDictionary) -> Result<FeatureVector> {
    extract_with(img, &composed_filters(rd))
}

pub fn feature_len(v: usize) -> usize {
    POOL_GRID * POOL_GRID * v
}
