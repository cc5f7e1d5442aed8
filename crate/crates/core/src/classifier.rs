//! Binary linear SVM for stamp / non-stamp verification and the evaluation
//! metrics reported for it.
//!
//! Training minimizes `1/2 |w|^2 + C * sum_i max(0, 1 - y_i (w . x_i + b))`
//! with an unregularized bias. The solver works on the dual with sequential
//! minimal optimization (maximal-gain pair selection), which reaches the
//! optimum to a KKT tolerance instead of the slow tail of a subgradient
//! method.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::imaging::dot;

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Label {
    Stamp,
    NonStamp,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Stamp => 1.0,
            Label::NonStamp => -1.0,
        }
    }

    pub fn from_margin(margin: f64) -> Self {
        if margin >= 0.0 {
            Label::Stamp
        } else {
            Label::NonStamp
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Stamp => "stamp",
            Label::NonStamp => "nonstamp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "stamp" | "1" | "+1" | "pos" => Some(Label::Stamp),
            "nonstamp" | "non-stamp" | "0" | "-1" | "neg" => Some(Label::NonStamp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Label,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: Label) -> Self {
        Self { features, label }
    }
}

/// Seeded shuffle and split. Stratified by label when every present class
/// has at least two members; otherwise falls back to a plain split.
pub fn split<T: Clone>(items: &[(T, Label)], train_fraction: f64, rng_seed: u64) -> Result<(Vec<(T, Label)>, Vec<(T, Label)>)> {
    if items.is_empty() {
        return invalid("cannot split an empty set");
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return invalid(format!("train fraction {train_fraction} outside (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let classes = [Label::Stamp, Label::NonStamp];
    let groups: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..items.len()).filter(|&i| items[i].1 == c).collect())
        .collect();
    let stratify = groups.iter().all(|g| g.is_empty() || g.len() >= 2);
    if !stratify {
        log::warn!("a class has fewer than 2 members; falling back to an unstratified split");
    }
    let strata: Vec<Vec<usize>> = if stratify {
        groups
    } else {
        vec![(0..items.len()).collect()]
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut idx in strata {
        idx.shuffle(&mut rng);
        let n_train = (train_fraction * idx.len() as f64).round() as usize;
        for (pos, &i) in idx.iter().enumerate() {
            if pos < n_train {
                train.push(items[i].clone());
            } else {
                test.push(items[i].clone());
            }
        }
    }
    Ok((train, test))
}

/// Splits samples; see [`split`].
pub fn split_samples(samples: &[Sample], train_fraction: f64, rng_seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let tagged: Vec<(usize, Label)> = samples.iter().enumerate().map(|(i, s)| (i, s.label)).collect();
    let (tr, te) = split(&tagged, train_fraction, rng_seed)?;
    Ok((
        tr.into_iter().map(|(i, _)| samples[i].clone()).collect(),
        te.into_iter().map(|(i, _)| samples[i].clone()).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    /// Iteration budget, in units of training-set passes.
    pub epochs: usize,
    /// KKT violation tolerance.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            epochs: DEFAULT_EPOCHS,
            tol: DEFAULT_TOL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    weights: Vec<f64>,
    bias: f64,
    c: f64,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, bias: f64, c: f64) -> Result<Self> {
        if weights.is_empty() {
            return invalid("empty weight vector");
        }
        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return invalid("non-finite model parameter");
        }
        Ok(Self { weights, bias, c })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return invalid(format!(
                "feature length {} does not match model dimension {}",
                x.len(),
                self.weights.len()
            ));
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    /// Label and margin; a zero margin is labeled stamp.
    pub fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        let m = self.margin(x)?;
        Ok((Label::from_margin(m), m))
    }

    /// `1/2 |w|^2 + c * sum hinge`.
    pub fn objective(&self, data: &[Sample], c: f64) -> f64 {
        let reg = 0.5 * dot(&self.weights, &self.weights);
        let hinge: f64 = data
            .iter()
            .map(|s| (1.0 - s.label.sign() * (dot(&self.weights, &s.features) + self.bias)).max(0.0))
            .sum();
        reg + c * hinge
    }
}

/// Trains a linear SVM. Labels map to +1 (stamp) and -1 (non-stamp).
pub fn train_svm(train: &[Sample], params: &SvmParams) -> Result<LinearModel> {
    if train.len() < 2 {
        return invalid("SVM training needs at least 2 samples");
    }
    if !train.iter().any(|s| s.label == Label::Stamp) || !train.iter().any(|s| s.label == Label::NonStamp) {
        return invalid("SVM training set must contain both classes");
    }
    if !(params.c > 0.0) {
        return invalid("SVM C must be positive");
    }
    let dim = train[0].features.len();
    if dim == 0 || train.iter().any(|s| s.features.len() != dim) {
        return invalid("training features must be non-empty and share one length");
    }
    if train.iter().any(|s| s.features.iter().any(|v| !v.is_finite())) {
        return invalid("non-finite training feature");
    }

    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed));
    let xs: Vec<&[f64]> = order.iter().map(|&i| train[i].features.as_slice()).collect();
    let ys: Vec<f64> = order.iter().map(|&i| train[i].label.sign()).collect();
    let max_iter = params.epochs.max(1).saturating_mul(xs.len()).saturating_mul(10);
    let (alpha, rho) = smo(&xs, &ys, params.c, params.tol, max_iter);

    let mut w = vec![0.0; dim];
    for ((x, &y), &a) in xs.iter().zip(&ys).zip(&alpha) {
        if a != 0.0 {
            for (wi, &xi) in w.iter_mut().zip(*x) {
                *wi += a * y * xi;
            }
        }
    }
    LinearModel::new(w, -rho, params.c)
}

/// Dual solver for `min 1/2 a^T Q a - e^T a`, `0 <= a <= c`, `y^T a = 0`
/// with `Q_ij = y_i y_j x_i . x_j`. Returns the multipliers and `rho`
/// (decision value is `w . x - rho`).
fn smo(xs: &[&[f64]], ys: &[f64], c: f64, tol: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let n = xs.len();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let k = dot(xs[i], xs[j]);
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
    }
    let q = |i: usize, j: usize| ys[i] * ys[j] * gram[i * n + j];

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];

    for _ in 0..max_iter {
        // First index: maximal violation among the "up" set.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let cand = if ys[t] > 0.0 {
                (alpha[t] < c).then_some(-grad[t])
            } else {
                (alpha[t] > 0.0).then_some(grad[t])
            };
            if let Some(v) = cand {
                if v >= gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let Some(i) = i_sel else { break };

        // Second index: largest objective decrease among the "low" set.
        let mut gmax2 = f64::NEG_INFINITY;
        let mut best_gain = f64::INFINITY;
        let mut j_sel = None;
        for t in 0..n {
            let (in_low, g) = if ys[t] > 0.0 {
                (alpha[t] > 0.0, grad[t])
            } else {
                (alpha[t] < c, -grad[t])
            };
            if !in_low {
                continue;
            }
            gmax2 = gmax2.max(g);
            let diff = gmax + g;
            if diff > 0.0 {
                let quad = gram[i * n + i] + gram[t * n + t] - 2.0 * ys[i] * ys[t] * gram[i * n + t];
                let gain = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if gain <= best_gain {
                    best_gain = gain;
                    j_sel = Some(t);
                }
            }
        }
        if gmax + gmax2 < tol {
            break;
        }
        let Some(j) = j_sel else { break };

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if ys[i] != ys[j] {
            let quad = gram[i * n + i] + gram[j * n + j] + 2.0 * q(i, j);
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = gram[i * n + i] + gram[j * n + j] - 2.0 * q(i, j);
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    // rho from free multipliers, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = ys[t] * grad[t];
        if alpha[t] >= c {
            if ys[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if ys[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    (alpha, rho)
}

/// Confusion counts, percentage metrics and wall-clock scoring time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub test_time_seconds: f64,
    pub n_test: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl EvalReport {
    /// Precision is 100 with no positive predictions; recall is 100 with no
    /// positive samples.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize, test_time_seconds: f64) -> Self {
        let n_test = tp + fp + tn + fn_;
        let pct = |num: usize, den: usize| if den == 0 { 100.0 } else { 100.0 * num as f64 / den as f64 };
        Self {
            accuracy: pct(tp + tn, n_test),
            precision: pct(tp, tp + fp),
            recall: pct(tp, tp + fn_),
            test_time_seconds,
            n_test,
            tp,
            fp,
            tn,
            fn_,
        }
    }

    pub fn from_predictions(pairs: impl IntoIterator<Item = (Label, Label)>, test_time_seconds: f64) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (truth, pred) in pairs {
            match (truth, pred) {
                (Label::Stamp, Label::Stamp) => tp += 1,
                (Label::NonStamp, Label::Stamp) => fp += 1,
                (Label::NonStamp, Label::NonStamp) => tn += 1,
                (Label::Stamp, Label::NonStamp) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_, test_time_seconds)
    }
}

/// Scores the test set single-threaded and reports the metrics.
pub fn evaluate(model: &LinearModel, test: &[Sample]) -> Result<EvalReport> {
    if test.is_empty() {
        return invalid("empty test set");
    }
    let start = Instant::now();
    let preds: Vec<Label> = test
        .iter()
        .map(|s| model.predict(&s.features).map(|(l, _)| l))
        .collect::<Result<_>>()?;
    let elapsed = start.elapsed().as_secs_f64();
    Ok(EvalReport::from_predictions(
        test.iter().map(|s| s.label).zip(preds),
        elapsed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn s(x: &[f64], l: Label) -> Sample {
        Sample::new(x.to_vec(), l)
    }

    fn blobs(seed: u64, n: usize) -> Vec<Sample> {
        // Two clusters separated by a gap of at least 2 along x.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let stamp = i % 2 == 0;
                let x = if stamp { 1.0 + rng.random::<f64>() } else { -1.0 - rng.random::<f64>() };
                let y = rng.random::<f64>() * 4.0 - 2.0;
                s(&[x, y], if stamp { Label::Stamp } else { Label::NonStamp })
            })
            .collect()
    }

    #[test]
    fn one_dimensional_separable() {
        let data = vec![s(&[-1.0], Label::NonStamp), s(&[1.0], Label::Stamp)];
        let m = train_svm(&data, &SvmParams::default()).unwrap();
        assert!(m.weights()[0] > 0.0);
        assert_eq!(m.predict(&[-1.0]).unwrap().0, Label::NonStamp);
        assert_eq!(m.predict(&[1.0]).unwrap().0, Label::Stamp);
        // Max-margin solution is w = 1, b = 0.
        assert!((m.weights()[0] - 1.0).abs() < 1e-6 && m.bias().abs() < 1e-6);
    }

    #[test]
    fn rejects_single_class() {
        let data = vec![s(&[1.0], Label::Stamp), s(&[2.0], Label::Stamp)];
        assert!(train_svm(&data, &SvmParams::default()).is_err());
        assert!(train_svm(&data[..1], &SvmParams::default()).is_err());
    }

    #[test]
    fn blobs_fully_separated() {
        let data = blobs(3, 20);
        let m = train_svm(&data, &SvmParams { c: 10.0, ..Default::default() }).unwrap();
        let hinge: f64 = data
            .iter()
            .map(|d| (1.0 - d.label.sign() * m.margin(&d.features).unwrap()).max(0.0))
            .sum();
        assert!(hinge < 1e-3, "hinge {hinge}");
        assert!(data.iter().all(|d| m.predict(&d.features).unwrap().0 == d.label));
    }

    #[test]
    fn duplication_with_half_c_keeps_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Overlapping classes so the hinge term is active.
        let data: Vec<Sample> = (0..30)
            .map(|i| {
                let l = if i % 2 == 0 { Label::Stamp } else { Label::NonStamp };
                let x = l.sign() * 0.5 + rng.random::<f64>() * 2.0 - 1.0;
                let y = rng.random::<f64>() * 2.0 - 1.0;
                s(&[x, y], l)
            })
            .collect();
        let a = train_svm(&data, &SvmParams { c: 1.0, tol: 1e-9, ..Default::default() }).unwrap();
        let doubled: Vec<Sample> = data.iter().chain(&data).cloned().collect();
        let b = train_svm(&doubled, &SvmParams { c: 0.5, tol: 1e-9, ..Default::default() }).unwrap();
        let unit = |w: &[f64]| {
            let n = dot(w, w).sqrt();
            w.iter().map(|v| v / n).collect::<Vec<_>>()
        };
        let (ua, ub) = (unit(a.weights()), unit(b.weights()));
        assert!(ua.iter().zip(&ub).all(|(p, q)| (p - q).abs() < 1e-3), "{ua:?} {ub:?}");
        assert!((a.objective(&data, 1.0) - b.objective(&doubled, 0.5)).abs() < 1e-6);
    }

    #[test]
    fn objective_not_worse_than_zero_model_and_reproducible() {
        let data = blobs(9, 40);
        let p = SvmParams { c: 0.3, seed: 4, ..Default::default() };
        let m = train_svm(&data, &p).unwrap();
        let zero = LinearModel::new(vec![0.0, 0.0], 0.0, p.c).unwrap();
        assert!(m.objective(&data, p.c) <= zero.objective(&data, p.c));
        assert_eq!(train_svm(&data, &p).unwrap(), m);
    }

    #[test]
    fn predict_conventions() {
        let m = LinearModel::new(vec![0.0, 0.0], 1.0, 1.0).unwrap();
        assert_eq!(m.predict(&[0.0, 0.0]).unwrap(), (Label::Stamp, 1.0));
        let m = LinearModel::new(vec![1.0, 0.0], 0.0, 1.0).unwrap();
        assert_eq!(m.predict(&[-3.0, 7.0]).unwrap(), (Label::NonStamp, -3.0));
        assert_eq!(m.predict(&[0.0, 7.0]).unwrap().0, Label::Stamp);
        assert!(m.predict(&[1.0]).is_err());
    }

    #[test]
    fn metrics_arithmetic() {
        let r = EvalReport::from_counts(48, 0, 47, 5, 0.0);
        assert_eq!(r.precision, 100.0);
        assert!((r.recall - 90.566).abs() < 1e-3);
        assert_eq!(r.accuracy, 95.0);
        let perfect = EvalReport::from_counts(10, 0, 7, 0, 0.0);
        assert_eq!((perfect.accuracy, perfect.precision, perfect.recall), (100.0, 100.0, 100.0));
        let none_pos = EvalReport::from_counts(0, 0, 5, 3, 0.0);
        assert_eq!(none_pos.precision, 100.0);
    }

    #[test]
    fn split_counts() {
        let items: Vec<(usize, Label)> = (0..1839)
            .map(|i| (i, if i < 882 { Label::Stamp } else { Label::NonStamp }))
            .collect();
        let (tr, te) = split(&items, 0.7, 1).unwrap();
        assert!((tr.len() as i64 - 1287).abs() <= 1, "{}", tr.len());
        assert_eq!(tr.len() + te.len(), 1839);
        assert_eq!(split(&items, 0.7, 1).unwrap().0, tr);

        let pair = vec![(0, Label::Stamp), (1, Label::NonStamp)];
        let (tr, te) = split(&pair, 0.5, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 1));
        assert_ne!(tr[0].1, te[0].1);

        assert!(split(&pair, 1.0, 0).is_err());
        assert!(split::<usize>(&[], 0.5, 0).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let items: Vec<(usize, Label)> = (0..100)
            .map(|i| (i, if i < 30 { Label::Stamp } else { Label::NonStamp }))
            .collect();
        let (tr, te) = split(&items, 0.7, 8).unwrap();
        assert_eq!(tr.iter().filter(|t| t.1 == Label::Stamp).count(), 21);
        assert_eq!(te.iter().filter(|t| t.1 == Label::Stamp).count(), 9);
    }

    proptest! {
        #[test]
        fn scaling_model_keeps_labels(w in prop::collection::vec(-5.0f64..5.0, 3), b in -2.0f64..2.0, x in prop::collection::vec(-5.0f64..5.0, 3), c in 0.01f64..100.0) {
            let m = LinearModel::new(w.clone(), b, 1.0).unwrap();
            let scaled = LinearModel::new(w.iter().map(|v| v * c).collect(), b * c, 1.0).unwrap();
            let (l1, m1) = m.predict(&x).unwrap();
            let (l2, _) = scaled.predict(&x).unwrap();
            // A margin within rounding of zero can flip under scaling.
            if m1.abs() > 1e-9 {
                prop_assert_eq!(l1, l2);
            }
        }

        #[test]
        fn report_invariants(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
            prop_assume!(tp + fp + tn + fn_ > 0);
            let r = EvalReport::from_counts(tp, fp, tn, fn_, 0.0);
            prop_assert_eq!(r.accuracy, 100.0 * (tp + tn) as f64 / (tp + fp + tn + fn_) as f64);
            if tp + fp > 0 {
                prop_assert_eq!(r.precision, 100.0 * tp as f64 / (tp + fp) as f64);
            }
            if tp + fn_ > 0 {
                prop_assert_eq!(r.recall, 100.0 * tp as f64 / (tp + fn_) as f64);
            }
        }
    }
}
