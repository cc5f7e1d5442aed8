//! Dictionary learning by K-means over whitened patches, atom ranking by
//! stamp-weighted rectified response, and subset selection.
//!
//! Atoms live in the whitened patch space. To correlate them with raw images
//! each atom is pulled back through the whitening matrix (see
//! [`FilterSet::compose`]): for a window `y` of the raw image,
//! `atom . W (y - mean) = (W^T atom) . y - (W^T atom) . mean`, so a plain
//! cross-correlation with `W^T atom` plus a constant offset reproduces the
//! whitened-space dot product at every position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::imaging::{center_offset, dot, xcorr_valid, GrayImage, Patch};
use crate::whitening::WhiteningTransform;

pub const DEFAULT_K: usize = 64;
pub const DEFAULT_TAU: f64 = 0.33;
pub const DEFAULT_MAX_ITERS: usize = 50;

/// K unit-norm atoms of length `atom_side^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atom_side: usize,
    atoms: Vec<Vec<f64>>,
}

impl Dictionary {
    /// Unit-normalizes each atom. A zero atom becomes the constant unit vector.
    /// Atoms already at unit length are stored unchanged.
    pub fn new(atom_side: usize, atoms: Vec<Vec<f64>>) -> Result<Self> {
        if atom_side == 0 || atoms.is_empty() {
            return invalid("dictionary needs a positive atom side and at least one atom");
        }
        let dim = atom_side * atom_side;
        if atoms.iter().any(|a| a.len() != dim) {
            return invalid(format!("every atom must have length {dim}"));
        }
        if atoms.iter().any(|a| a.iter().any(|v| !v.is_finite())) {
            return invalid("non-finite atom value");
        }
        let atoms = atoms.into_iter().map(unit_normalize).collect();
        Ok(Self { atom_side, atoms })
    }

    pub fn k(&self) -> usize {
        self.atoms.len()
    }

    pub fn atom_side(&self) -> usize {
        self.atom_side
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.atoms[j]
    }
}

fn unit_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // Already unit length: keep the bits so reloading a saved model is exact.
    if (norm - 1.0).abs() <= 1e-12 {
        return v;
    }
    if norm > 1e-12 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        let c = 1.0 / (v.len() as f64).sqrt();
        v.iter_mut().for_each(|x| *x = c);
    }
    v
}

/// Raw Lloyd output before atom normalization.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub sse_history: Vec<f64>,
}

impl KMeansFit {
    pub fn sse(&self) -> f64 {
        *self.sse_history.last().unwrap_or(&0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance from the nearest chosen center.
fn plus_plus_init<R: Rng>(data: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centroids = vec![data[rng.random_range(0..n)].to_vec()];
    let mut nearest: Vec<f64> = data.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = data[pick].to_vec();
        for (d, x) in nearest.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Assigns each point to its nearest centroid (ties to the lower index).
/// Returns whether any assignment changed and the resulting SSE.
fn assign(data: &[&[f64]], centroids: &[Vec<f64>], assignments: &mut [usize], dists: &mut [f64]) -> (bool, f64) {
    let mut changed = false;
    let mut sse = 0.0;
    for ((x, a), dist) in data.iter().zip(assignments.iter_mut()).zip(dists.iter_mut()) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        if *a != best {
            *a = best;
            changed = true;
        }
        *dist = best_d;
        sse += best_d;
    }
    (changed, sse)
}

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are reseeded from
/// the point farthest from its current centroid.
pub fn kmeans_fit(data: &[&[f64]], k: usize, max_iters: usize, rng_seed: u64) -> Result<KMeansFit> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if data.len() < k {
        return invalid(format!("k = {k} exceeds sample count {}", data.len()));
    }
    let dim = data[0].len();
    if dim == 0 || data.iter().any(|x| x.len() != dim) {
        return invalid("samples must be non-empty and share one length");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut centroids = plus_plus_init(data, k, &mut rng);
    let mut assignments = vec![usize::MAX; data.len()];
    let mut dists = vec![0.0; data.len()];
    let mut sse_history = Vec::new();

    for _ in 0..max_iters.max(1) {
        let (changed, sse) = assign(data, &centroids, &mut assignments, &mut dists);
        sse_history.push(sse);
        if !changed {
            break;
        }
        update_centroids(data, &assignments, &mut dists, &mut centroids);
    }
    // If the iteration cap was hit the last update has not been scored yet.
    let (changed, sse) = assign(data, &centroids, &mut assignments, &mut dists);
    if changed || sse != *sse_history.last().unwrap() {
        sse_history.push(sse);
    }
    Ok(KMeansFit {
        centroids,
        assignments,
        sse_history,
    })
}

fn update_centroids(data: &[&[f64]], assignments: &[usize], dists: &mut [f64], centroids: &mut [Vec<f64>]) {
    let dim = data[0].len();
    let mut counts = vec![0usize; centroids.len()];
    for c in centroids.iter_mut() {
        c.iter_mut().for_each(|v| *v = 0.0);
    }
    for (x, &a) in data.iter().zip(assignments) {
        counts[a] += 1;
        for (c, v) in centroids[a].iter_mut().zip(*x) {
            *c += v;
        }
    }
    for (j, c) in centroids.iter_mut().enumerate() {
        if counts[j] > 0 {
            let n = counts[j] as f64;
            c.iter_mut().for_each(|v| *v /= n);
            continue;
        }
        let far = dists
            .iter()
            .enumerate()
            .fold(0, |best, (i, &d)| if d > dists[best] { i } else { best });
        c.copy_from_slice(data[far]);
        debug_assert_eq!(c.len(), dim);
        dists[far] = 0.0;
    }
}

/// Learns a dictionary of `k` unit-norm atoms from whitened patches.
pub fn kmeans(patches: &[Patch], k: usize, max_iters: usize, rng_seed: u64) -> Result<Dictionary> {
    let side = match patches.first() {
        Some(p) => p.side(),
        None => return invalid("no patches"),
    };
    if patches.iter().any(|p| p.side() != side) {
        return invalid("patches have mixed sides");
    }
    let rows: Vec<&[f64]> = patches.iter().map(Patch::data).collect();
    let fit = kmeans_fit(&rows, k, max_iters, rng_seed)?;
    Dictionary::new(side, fit.centroids)
}

/// Per-atom scores and the descending rank permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomScores {
    scores: Vec<f64>,
    rank: Vec<usize>,
}

impl AtomScores {
    /// Ranks descending; ties go to the lower atom index.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return invalid("no scores");
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return invalid("non-finite score");
        }
        let mut rank: Vec<usize> = (0..scores.len()).collect();
        rank.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(Self { scores, rank })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn rank(&self) -> &[usize] {
        &self.rank
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.scores[self.rank[0]]
    }
}

/// Number of atoms scoring at least `tau * max`. Always at least 1.
pub fn select_subset(scores: &AtomScores, tau: f64) -> usize {
    let cut = tau * scores.max();
    scores.scores.iter().filter(|&&s| s >= cut).count().max(1)
}

/// Correlation kernels in raw-pixel space with per-kernel additive offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSet {
    kernels: Vec<Patch>,
    offsets: Vec<f64>,
}

impl FilterSet {
    pub fn new(kernels: Vec<Patch>, offsets: Vec<f64>) -> Result<Self> {
        if kernels.is_empty() || kernels.len() != offsets.len() {
            return invalid("filter set needs one offset per kernel and at least one kernel");
        }
        let side = kernels[0].side();
        if kernels.iter().any(|k| k.side() != side) {
            return invalid("kernels have mixed sides");
        }
        Ok(Self { kernels, offsets })
    }

    /// Pulls whitened-space atoms back to raw-pixel kernels: `W^T atom`, with
    /// offset `-(W^T atom) . mean`.
    pub fn compose<'a>(
        atoms: impl IntoIterator<Item = &'a [f64]>,
        side: usize,
        whitening: &WhiteningTransform,
    ) -> Result<Self> {
        let mut kernels = Vec::new();
        let mut offsets = Vec::new();
        for atom in atoms {
            let k = whitening.transpose_apply(atom)?;
            offsets.push(-dot(&k, whitening.mean()));
            kernels.push(Patch::new(side, k)?);
        }
        Self::new(kernels, offsets)
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn side(&self) -> usize {
        self.kernels[0].side()
    }

    pub fn kernels(&self) -> &[Patch] {
        &self.kernels
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Correlation map of filter `j` including its offset.
    pub fn response(&self, img: &GrayImage, j: usize) -> Result<GrayImage> {
        let off = self.offsets[j];
        let mut map = xcorr_valid(img, &self.kernels[j])?;
        map.data_mut().iter_mut().for_each(|v| *v += off);
        Ok(map)
    }

    pub fn responses(&self, img: &GrayImage) -> Result<Vec<GrayImage>> {
        (0..self.len()).map(|j| self.response(img, j)).collect()
    }

    /// Rectified response weighted by `(1 - center intensity)` of each window.
    pub fn rectified_weighted(&self, img: &GrayImage, j: usize) -> Result<GrayImage> {
        let mut map = self.response(img, j)?;
        weight_by_inverted_center(&mut map, img, self.side());
        Ok(map)
    }
}

/// `map[y][x] = max(0, map[y][x]) * (1 - img[y + c][x + c])`.
pub(crate) fn weight_by_inverted_center(map: &mut GrayImage, img: &GrayImage, side: usize) {
    let c = center_offset(side);
    let (h, w) = (map.height(), map.width());
    let data = map.data_mut();
    for y in 0..h {
        let src = &img.row(y + c)[c..c + w];
        for (v, &p) in data[y * w..(y + 1) * w].iter_mut().zip(src) {
            *v = v.max(0.0) * (1.0 - p);
        }
    }
}

/// Rectified, center-weighted response grid of every atom over the image.
/// Entry `[j]` holds `R_ij` for all window positions `i` in row-major order.
pub fn atom_responses(
    dict: &Dictionary,
    whitening: &WhiteningTransform,
    ranking_image: &GrayImage,
) -> Result<Vec<GrayImage>> {
    let m = dict.atom_side();
    if whitening.dim() != m * m {
        return invalid(format!(
            "whitening dimension {} does not match atom length {}",
            whitening.dim(),
            m * m
        ));
    }
    if ranking_image.height() < m || ranking_image.width() < m {
        return invalid(format!(
            "ranking image {}x{} smaller than atom side {m}",
            ranking_image.height(),
            ranking_image.width()
        ));
    }
    let filters = FilterSet::compose(dict.atoms().iter().map(Vec::as_slice), m, whitening)?;
    (0..filters.len())
        .map(|j| filters.rectified_weighted(ranking_image, j))
        .collect()
}

/// Scores every atom by its maximum rectified, center-weighted response.
pub fn rank_atoms(
    dict: &Dictionary,
    whitening: &WhiteningTransform,
    ranking_image: &GrayImage,
) -> Result<AtomScores> {
    let maps = atom_responses(dict, whitening, ranking_image)?;
    AtomScores::from_scores(maps.iter().map(|m| m.min_max().1.max(0.0)).collect())
}

/// Averages per-atom scores over several ranking images.
pub fn rank_atoms_multi(
    dict: &Dictionary,
    whitening: &WhiteningTransform,
    ranking_images: &[GrayImage],
) -> Result<AtomScores> {
    if ranking_images.is_empty() {
        return invalid("no ranking images");
    }
    let mut total = vec![0.0; dict.k()];
    for img in ranking_images {
        let s = rank_atoms(dict, whitening, img)?;
        for (t, v) in total.iter_mut().zip(s.scores()) {
            *t += v;
        }
    }
    let r = ranking_images.len() as f64;
    AtomScores::from_scores(total.into_iter().map(|t| t / r).collect())
}

/// Dictionary with ranking, selected subset size and its whitening transform.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedDictionary {
    dict: Dictionary,
    scores: AtomScores,
    v: usize,
    whitening: WhiteningTransform,
}

impl RankedDictionary {
    pub fn new(dict: Dictionary, scores: AtomScores, v: usize, whitening: WhiteningTransform) -> Result<Self> {
        if scores.len() != dict.k() {
            return invalid(format!("{} scores for {} atoms", scores.len(), dict.k()));
        }
        if v == 0 || v > dict.k() {
            return invalid(format!("subset size {v} outside 1..={}", dict.k()));
        }
        let m = dict.atom_side();
        if whitening.dim() != m * m {
            return invalid(format!(
                "whitening dimension {} does not match atom length {}",
                whitening.dim(),
                m * m
            ));
        }
        Ok(Self {
            dict,
            scores,
            v,
            whitening,
        })
    }

    pub fn dict(&self) -> &Dictionary {
        &self.dict
    }

    pub fn scores(&self) -> &AtomScores {
        &self.scores
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn whitening(&self) -> &WhiteningTransform {
        &self.whitening
    }

    /// Atom indices of the selected subset, best first.
    pub fn selected(&self) -> &[usize] {
        &self.scores.rank()[..self.v]
    }

    pub fn with_v(&self, v: usize) -> Result<Self> {
        Self::new(self.dict.clone(), self.scores.clone(), v, self.whitening.clone())
    }

    pub fn with_scores(&self, scores: AtomScores, v: usize) -> Result<Self> {
        Self::new(self.dict.clone(), scores, v, self.whitening.clone())
    }
}

/// The selected top-`v` atoms as raw-pixel correlation kernels, best first.
pub fn composed_filters(rd: &RankedDictionary) -> FilterSet {
    FilterSet::compose(
        rd.selected().iter().map(|&j| rd.dict.atom(j)),
        rd.dict.atom_side(),
        &rd.whitening,
    )
    .expect("RankedDictionary dimensions are validated at construction")
}
