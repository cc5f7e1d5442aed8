//! End-to-end wiring: dictionary learning from stamp crops, batch feature
//! extraction, and the four-way verification comparison (ranked subset, full
//! dictionary, Gabor bank, random filters).

use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{gabor_bank, random_bank};
use crate::classifier::{evaluate, split, train_svm, EvalReport, Label, Sample, SvmParams};
use crate::dictionary::{
    composed_filters, kmeans, rank_atoms_multi, select_subset, FilterSet, RankedDictionary, DEFAULT_K,
    DEFAULT_MAX_ITERS, DEFAULT_TAU,
};
use crate::error::{invalid, Result};
use crate::features::{extract_with, FeatureVector};
use crate::detector::{detect, detect_with, DetectParams, DetectionResult};
use crate::imaging::{load_gray, normalize, preprocess, sample_patches_with, GrayImage, Patch};
use crate::manifest::ManifestRow;
use crate::synth::{marked_crop, SynthSample};
use crate::whitening::{fit_zca, DEFAULT_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessConfig {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 96,
            patch: 16,
        }
    }
}

impl PreprocessConfig {
    pub fn apply(&self, img: &GrayImage) -> Result<GrayImage> {
        preprocess(img, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub k: usize,
    /// Total patches drawn across all training stamps.
    pub n_patches: usize,
    pub epsilon: f64,
    pub max_iters: usize,
    pub tau: f64,
    /// Stamps whose scores are averaged for ranking.
    pub ranking_images: usize,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            n_patches: 10_000,
            epsilon: DEFAULT_EPSILON,
            max_iters: DEFAULT_MAX_ITERS,
            tau: DEFAULT_TAU,
            ranking_images: 1,
            seed: 0,
        }
    }
}

/// Picks `count` distinct ranking images with a seeded draw.
pub fn pick_ranking_images(stamps: &[GrayImage], count: usize, seed: u64) -> Vec<&GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6e6b);
    stamps.choose_multiple(&mut rng, count.clamp(1, stamps.len())).collect()
}

/// Whitening, K-means, ranking and subset selection over preprocessed stamps.
pub fn learn_dictionary(stamps: &[GrayImage], patch: usize, cfg: &LearnConfig) -> Result<RankedDictionary> {
    if stamps.is_empty() {
        return invalid("no stamp images to learn from");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_image = cfg.n_patches.div_ceil(stamps.len()).max(1);
    let mut patches: Vec<Patch> = Vec::with_capacity(per_image * stamps.len());
    for img in stamps {
        patches.extend(sample_patches_with(img, patch, per_image, &mut rng)?);
    }
    let whitening = fit_zca(&patches, cfg.epsilon)?;
    let white: Vec<Patch> = patches.iter().map(|p| whitening.apply(p)).collect::<Result<_>>()?;
    let dict = kmeans(&white, cfg.k, cfg.max_iters, rng.random())?;

    let ranking: Vec<GrayImage> = pick_ranking_images(stamps, cfg.ranking_images, cfg.seed)
        .into_iter()
        .cloned()
        .collect();
    let scores = rank_atoms_multi(&dict, &whitening, &ranking)?;
    let v = select_subset(&scores, cfg.tau);
    RankedDictionary::new(dict, scores, v, whitening)
}

/// Re-scores an existing dictionary against new ranking images.
pub fn rerank(rd: &RankedDictionary, ranking: &[GrayImage], tau: f64) -> Result<RankedDictionary> {
    let scores = rank_atoms_multi(rd.dict(), rd.whitening(), ranking)?;
    let v = select_subset(&scores, tau);
    rd.with_scores(scores, v)
}

/// Parallel feature extraction; results are in input order.
pub fn extract_batch(images: &[GrayImage], filters: &FilterSet) -> Result<Vec<FeatureVector>> {
    images.par_iter().map(|img| extract_with(img, filters)).collect()
}

/// Single-threaded extraction with wall-clock time.
pub fn extract_timed(images: &[GrayImage], filters: &FilterSet) -> Result<(Vec<FeatureVector>, f64)> {
    let start = Instant::now();
    let feats = images.iter().map(|img| extract_with(img, filters)).collect::<Result<Vec<_>>>()?;
    Ok((feats, start.elapsed().as_secs_f64()))
}

/// Turns synthetic samples into verification images: stamp pages are cut
/// with an emulated hand-drawn box, negatives are used as they are.
pub fn verification_images(samples: &[SynthSample], cfg: &PreprocessConfig, seed: u64) -> Result<Vec<(GrayImage, Label)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_726b);
    samples
        .iter()
        .map(|s| {
            let raw = match s.stamp_box {
                Some(b) => marked_crop(&s.page, &b, &mut rng)?,
                None => s.page.clone(),
            };
            Ok((cfg.apply(&raw)?, s.label))
        })
        .collect()
}

/// Manifest images as verification inputs, in manifest order. Rows with a
/// box are cut around it the same way as [`verification_images`].
pub fn load_verification(rows: &[ManifestRow], cfg: &PreprocessConfig, seed: u64) -> Result<Vec<(GrayImage, Label)>> {
    let pages: Vec<GrayImage> = rows.par_iter().map(|r| load_gray(&r.path)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_726b);
    pages
        .iter()
        .zip(rows)
        .map(|(page, r)| {
            let raw = match r.bbox {
                Some(b) => {
                    if !b.fits_in(page.height(), page.width()) {
                        return invalid(format!("box of {} lies outside the image", r.path.display()));
                    }
                    marked_crop(page, &b, &mut rng)?
                }
                None => page.clone(),
            };
            Ok((cfg.apply(&raw)?, r.label))
        })
        .collect()
}

/// Detects on every page in parallel; results are in input order.
pub fn detect_batch(pages: &[GrayImage], rd: &RankedDictionary, params: &DetectParams) -> Result<Vec<DetectionResult>> {
    let filters = composed_filters(rd);
    pages
        .par_iter()
        .map(|p| detect_with(&normalize(p), &filters, params))
        .collect()
}

/// Stamp crops among labeled images.
pub fn stamp_images(data: &[(GrayImage, Label)]) -> Vec<GrayImage> {
    data.iter()
        .filter(|(_, l)| *l == Label::Stamp)
        .map(|(i, _)| i.clone())
        .collect()
}

/// Detection on a full page at its native resolution, after min-max
/// normalization.
pub fn detect_page(page: &GrayImage, rd: &RankedDictionary, params: &DetectParams) -> Result<DetectionResult> {
    detect(&normalize(page), rd, params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub preprocess: PreprocessConfig,
    pub learn: LearnConfig,
    pub svm: SvmParams,
    pub train_fraction: f64,
    pub gabor_scales: usize,
    pub gabor_orientations: usize,
    pub random_filters: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            learn: LearnConfig::default(),
            svm: SvmParams::default(),
            train_fraction: 0.7,
            gabor_scales: 8,
            gabor_orientations: 8,
            random_filters: 64,
            seed: 0,
        }
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub n_filters: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// Feature extraction plus SVM scoring over the test set.
    pub test_time_s: f64,
    #[serde(skip)]
    pub extract_time_s: f64,
    #[serde(skip)]
    pub score_time_s: f64,
}

impl BenchRow {
    fn from_report(method: &str, n_filters: usize, report: &EvalReport, extract_time_s: f64) -> Self {
        Self {
            method: method.to_owned(),
            n_filters,
            accuracy: report.accuracy,
            precision: report.precision,
            recall: report.recall,
            test_time_s: extract_time_s + report.test_time_seconds,
            extract_time_s,
            score_time_s: report.test_time_seconds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub rows: Vec<BenchRow>,
    pub ranked: RankedDictionary,
    pub n_train: usize,
    pub n_test: usize,
}

/// Trains and evaluates one filter set on a fixed split.
pub fn evaluate_filters(
    filters: &FilterSet,
    train: &[(GrayImage, Label)],
    test: &[(GrayImage, Label)],
    svm: &SvmParams,
) -> Result<(EvalReport, f64)> {
    let train_imgs: Vec<GrayImage> = train.iter().map(|(i, _)| i.clone()).collect();
    let train_feats = extract_batch(&train_imgs, filters)?;
    let samples: Vec<Sample> = train_feats
        .into_iter()
        .zip(train)
        .map(|(f, (_, l))| Sample::new(f.into_values(), *l))
        .collect();
    let model = train_svm(&samples, svm)?;

    let test_imgs: Vec<GrayImage> = test.iter().map(|(i, _)| i.clone()).collect();
    let (test_feats, extract_time) = extract_timed(&test_imgs, filters)?;
    let test_samples: Vec<Sample> = test_feats
        .into_iter()
        .zip(test)
        .map(|(f, (_, l))| Sample::new(f.into_values(), *l))
        .collect();
    Ok((evaluate(&model, &test_samples)?, extract_time))
}

/// Runs the four-way comparison on preprocessed, labeled images.
pub fn run_bench(data: &[(GrayImage, Label)], cfg: &BenchConfig) -> Result<BenchOutcome> {
    let (train, test) = split(data, cfg.train_fraction, cfg.seed)?;
    if test.is_empty() {
        return invalid("test split is empty");
    }
    let stamps = stamp_images(&train);
    let learn = LearnConfig {
        seed: cfg.seed,
        ..cfg.learn.clone()
    };
    let ranked = learn_dictionary(&stamps, cfg.preprocess.patch, &learn)?;
    let full = ranked.with_v(ranked.dict().k())?;
    let gabor = gabor_bank(cfg.preprocess.patch, cfg.gabor_scales, cfg.gabor_orientations)?;
    let random = random_bank(cfg.preprocess.patch, cfg.random_filters, cfg.seed ^ 0x7266)?;

    let methods: [(&str, FilterSet); 4] = [
        ("K-means (ranked)", composed_filters(&ranked)),
        ("K-means (all)", composed_filters(&full)),
        ("Gabor", composed_filters(&gabor.to_ranked_dictionary())),
        ("RF", composed_filters(&random.to_ranked_dictionary())),
    ];
    let mut rows = Vec::with_capacity(4);
    for (name, filters) in &methods {
        let (report, extract_time) = evaluate_filters(filters, &train, &test, &cfg.svm)?;
        rows.push(BenchRow::from_report(name, filters.len(), &report, extract_time));
    }
    Ok(BenchOutcome {
        rows,
        ranked,
        n_train: train.len(),
        n_test: test.len(),
    })
}
