use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};

use stampfeat::baselines::{gabor_bank, random_bank};
use stampfeat::classifier::{evaluate, split, train_svm, EvalReport, Label, Sample, SvmParams};
use stampfeat::detector::{iou, DetectParams};
use stampfeat::dictionary::{composed_filters, RankedDictionary};
use stampfeat::imaging::{load_gray, GrayImage};
use stampfeat::manifest::{file_sha256, read_manifest, ManifestRow};
use stampfeat::model::ModelFile;
use stampfeat::pipeline::{
    detect_batch, extract_batch, learn_dictionary, load_verification, pick_ranking_images, rerank, run_bench,
    stamp_images, BenchConfig, BenchRow, LearnConfig, PreprocessConfig,
};
use stampfeat::synth::{gen_dataset, StampShape, SynthSpec};

use crate::render;

#[derive(Args, Debug, Clone)]
pub struct PreArgs {
    /// Resize height for verification images.
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Resize width for verification images.
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    /// Patch (atom) side in pixels.
    #[arg(long, default_value_t = 16)]
    pub patch: usize,
}

impl PreArgs {
    fn config(&self) -> PreprocessConfig {
        PreprocessConfig {
            height: self.height,
            width: self.width,
            patch: self.patch,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct DictArgs {
    /// Number of dictionary atoms.
    #[arg(long, default_value_t = 64)]
    pub k: usize,
    /// Patches sampled across all training stamps.
    #[arg(long, default_value_t = 10_000)]
    pub n_patches: usize,
    /// Whitening regularizer.
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    /// K-means iteration cap.
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    /// Keep atoms scoring at least this fraction of the best score.
    #[arg(long, default_value_t = 0.33)]
    pub tau: f64,
    /// Stamps whose scores are averaged for ranking.
    #[arg(long, default_value_t = 1)]
    pub ranking_images: usize,
}

impl DictArgs {
    fn config(&self, seed: u64) -> LearnConfig {
        LearnConfig {
            k: self.k,
            n_patches: self.n_patches,
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            tau: self.tau,
            ranking_images: self.ranking_images,
            seed,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SvmArgs {
    /// Hinge-loss weight.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Solver budget in passes over the training set.
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Optimality tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

impl SvmArgs {
    fn params(&self, seed: u64) -> SvmParams {
        SvmParams {
            c: self.c,
            epochs: self.epochs,
            tol: self.tol,
            seed,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ShapeArg {
    Circle,
    Ellipse,
    DoubleRing,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory for images and manifest.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub n_pos: usize,
    #[arg(long, default_value_t = 400)]
    pub n_neg: usize,
    #[arg(long, default_value_t = 200)]
    pub page_height: usize,
    #[arg(long, default_value_t = 300)]
    pub page_width: usize,
    /// Largest fade toward the background (0 = crisp, 1 = invisible).
    #[arg(long, default_value_t = 0.5)]
    pub fade_max: f64,
    /// Largest Gaussian noise sigma.
    #[arg(long, default_value_t = 0.05)]
    pub noise_max: f64,
    /// Fraction of text lines that carry words.
    #[arg(long, default_value_t = 0.5)]
    pub text_density: f64,
    /// Downscale-upscale factor simulating low-resolution scans.
    #[arg(long)]
    pub low_res: Option<usize>,
    /// Draw every stamp with this shape instead of a random one.
    #[arg(long, value_enum)]
    pub shape: Option<ShapeArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        page_h: a.page_height,
        page_w: a.page_width,
        fade: (0.0, a.fade_max),
        noise_sigma: (0.0, a.noise_max),
        text_density: a.text_density,
        low_res: a.low_res,
        shape: a.shape.map(|s| match s {
            ShapeArg::Circle => StampShape::Circle,
            ShapeArg::Ellipse => StampShape::Ellipse,
            ShapeArg::DoubleRing => StampShape::DoubleRing,
        }),
        ..SynthSpec::default()
    };
    let rows = gen_dataset(a.n_pos, a.n_neg, &spec, a.seed, &a.out)?;
    println!(
        "wrote {} images and {}",
        rows.len(),
        a.out.join("manifest.csv").display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct LearnArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pre: PreArgs,
    #[command(flatten)]
    pub dict: DictArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn load_rows(manifest: &Path) -> Result<Vec<ManifestRow>> {
    read_manifest(manifest).with_context(|| format!("reading manifest {}", manifest.display()))
}

pub fn learn_dict(a: LearnArgs) -> Result<()> {
    let pre = a.pre.config();
    let rows = load_rows(&a.manifest)?;
    let data = load_verification(&rows, &pre, a.seed)?;
    let stamps = stamp_images(&data);
    if stamps.is_empty() {
        bail!("manifest {} has no stamp rows", a.manifest.display());
    }
    let rd = learn_dictionary(&stamps, pre.patch, &a.dict.config(a.seed))?;
    let mut model = ModelFile::new(pre, rd)?;
    model.provenance.insert("learn_seed".into(), a.seed.to_string());
    model.provenance.insert("learn_manifest_sha256".into(), file_sha256(&a.manifest)?);
    model.provenance.insert("learn_stamps".into(), stamps.len().to_string());
    model.save(&a.out)?;
    let rd = &model.ranked;
    println!(
        "learned {} atoms of length {} from {} stamps; v = {} at tau {}; wrote {}",
        rd.dict().k(),
        pre.patch * pre.patch,
        stamps.len(),
        rd.v(),
        a.dict.tau,
        a.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct RankArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Manifest whose stamp rows supply ranking images.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.33)]
    pub tau: f64,
    #[arg(long, default_value_t = 1)]
    pub ranking_images: usize,
    /// Write the updated model here instead of in place.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn rank(a: RankArgs) -> Result<()> {
    let mut model = ModelFile::load(&a.model)?;
    let rows = load_rows(&a.manifest)?;
    let stamps = stamp_images(&load_verification(&rows, &model.preprocess, a.seed)?);
    if stamps.is_empty() {
        bail!("manifest {} has no stamp rows", a.manifest.display());
    }
    let ranking: Vec<GrayImage> = pick_ranking_images(&stamps, a.ranking_images, a.seed)
        .into_iter()
        .cloned()
        .collect();
    let old_v = model.ranked.v();
    model.ranked = rerank(&model.ranked, &ranking, a.tau)?;
    if model.svm.is_some() && model.ranked.v() != old_v {
        eprintln!("note: v changed from {old_v} to {}; dropping the trained SVM", model.ranked.v());
        model.svm = None;
    }
    model.provenance.insert("rank_seed".into(), a.seed.to_string());
    model.provenance.insert("rank_tau".into(), a.tau.to_string());
    let out = a.out.as_ref().unwrap_or(&a.model);
    model.save(out)?;

    let rd = &model.ranked;
    println!("rank  atom  score       selected");
    for (i, &j) in rd.scores().rank().iter().enumerate() {
        println!(
            "{:>4}  {:>4}  {:<10.6}  {}",
            i + 1,
            j,
            rd.scores().scores()[j],
            if i < rd.v() { "yes" } else { "no" }
        );
    }
    println!("v = {} of {} at tau {}; wrote {}", rd.v(), rd.dict().k(), a.tau, out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output CSV: label, then 16 * v feature columns.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn samples_of(data: &[(GrayImage, Label)], rd: &RankedDictionary) -> Result<Vec<Sample>> {
    let images: Vec<GrayImage> = data.iter().map(|(i, _)| i.clone()).collect();
    let feats = extract_batch(&images, &composed_filters(rd))?;
    Ok(feats
        .into_iter()
        .zip(data)
        .map(|(f, (_, l))| Sample::new(f.into_values(), *l))
        .collect())
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let rows = load_rows(&a.manifest)?;
    let data = load_verification(&rows, &model.preprocess, a.seed)?;
    let samples = samples_of(&data, &model.ranked)?;
    let dim = samples.first().map_or(0, |s| s.features.len());
    let mut w = csv::Writer::from_path(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut header = vec!["label".to_owned()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for s in &samples {
        let mut rec = vec![s.label.as_str().to_owned()];
        rec.extend(s.features.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    println!("wrote {} rows of {dim} features to {}", samples.len(), a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fraction of rows used for training; 1 trains on every row.
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    #[command(flatten)]
    pub svm: SvmArgs,
    /// Write the trained model here instead of in place.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// The (train, test) split used by `train` and `eval`.
fn split_rows(
    data: Vec<(GrayImage, Label)>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<(GrayImage, Label)>, Vec<(GrayImage, Label)>)> {
    if train_fraction == 1.0 {
        return Ok((data, Vec::new()));
    }
    Ok(split(&data, train_fraction, seed)?)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut model = ModelFile::load(&a.model)?;
    let rows = load_rows(&a.manifest)?;
    let data = load_verification(&rows, &model.preprocess, a.seed)?;
    let (train, _) = split_rows(data, a.train_fraction, a.seed)?;
    let samples = samples_of(&train, &model.ranked)?;
    let svm = train_svm(&samples, &a.svm.params(a.seed))?;
    let report = evaluate(&svm, &samples)?;
    model.svm = Some(svm);
    model.provenance.insert("train_seed".into(), a.seed.to_string());
    model.provenance.insert("train_fraction".into(), a.train_fraction.to_string());
    model.provenance.insert("train_manifest_sha256".into(), file_sha256(&a.manifest)?);
    let out = a.out.as_ref().unwrap_or(&a.model);
    model.save(out)?;
    println!(
        "trained on {} samples ({} features); training accuracy {:.2}%; wrote {}",
        samples.len(),
        samples[0].features.len(),
        report.accuracy,
        out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Must match the value given to `train`; the complementary split is scored.
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    /// Score every row instead of the held-out split.
    #[arg(long)]
    pub all: bool,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let svm = model
        .svm
        .as_ref()
        .context("model has no trained SVM; run `train` first")?;
    let rows = load_rows(&a.manifest)?;
    let data = load_verification(&rows, &model.preprocess, a.seed)?;
    let test = if a.all {
        data
    } else {
        let (_, test) = split_rows(data, a.train_fraction, a.seed)?;
        if test.is_empty() {
            bail!("held-out split is empty; use --all to score every row");
        }
        test
    };
    let samples = samples_of(&test, &model.ranked)?;
    let report = evaluate(svm, &samples)?;
    print_eval(&report);
    if let Some(path) = &a.json {
        write_file(path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(())
}

fn print_eval(r: &EvalReport) {
    println!("Samples  Acc.    Prec.   Recall  Scoring time (s)");
    println!(
        "{:<7}  {:<6.2}  {:<6.2}  {:<6.2}  {:.6}",
        r.n_test, r.accuracy, r.precision, r.recall, r.test_time_seconds
    );
    println!("tp {}  fp {}  tn {}  fn {}", r.tp, r.fp, r.tn, r.fn_);
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Pages listed in a manifest; boxes in it are used as ground truth.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Page images, in addition to any manifest rows.
    pub images: Vec<PathBuf>,
    /// CSV of `path,x0,y0,x1,y1,peak`; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for annotated pages (truth in blue, estimate in red).
    #[arg(long)]
    pub annotate: Option<PathBuf>,
    /// Search only the lower half of each page.
    #[arg(long)]
    pub lower_half: bool,
    /// Refinement threshold as a fraction of the in-window maximum.
    #[arg(long, default_value_t = 0.3)]
    pub theta: f64,
    /// Window height as a fraction of the page height.
    #[arg(long, default_value_t = 0.45)]
    pub window_height: f64,
    /// Window width as a fraction of the page width.
    #[arg(long, default_value_t = 0.55)]
    pub window_width: f64,
    /// Report pages whose peak response is at or below this as having no stamp.
    #[arg(long, default_value_t = 0.0)]
    pub peak_floor: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn detect(a: DetectArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let mut rows: Vec<ManifestRow> = match &a.manifest {
        Some(m) => load_rows(m)?,
        None => Vec::new(),
    };
    rows.extend(a.images.iter().map(|p| ManifestRow {
        path: p.clone(),
        label: Label::Stamp,
        bbox: None,
    }));
    if rows.is_empty() {
        bail!("no pages given; pass image paths or --manifest");
    }
    let params = DetectParams {
        window_frac_h: a.window_height,
        window_frac_w: a.window_width,
        theta: a.theta,
        lower_half_only: a.lower_half,
        peak_floor: a.peak_floor,
    };
    if !(params.theta > 0.0 && params.theta < 1.0) {
        bail!("theta {} outside (0, 1)", params.theta);
    }
    if !(params.window_frac_h > 0.0 && params.window_frac_h <= 1.0 && params.window_frac_w > 0.0 && params.window_frac_w <= 1.0) {
        bail!("window fractions must lie in (0, 1]");
    }
    let pages: Vec<GrayImage> = rows.iter().map(|r| load_gray(&r.path)).collect::<Result<_, _>>()?;
    let results = detect_batch(&pages, &model.ranked, &params)?;

    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["path", "x0", "y0", "x1", "y1", "peak"])?;
    if let Some(dir) = &a.annotate {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut ious = Vec::new();
    let mut empty = 0usize;
    for ((row, page), det) in rows.iter().zip(&pages).zip(&results) {
        let b = det.bbox;
        if !det.has_stamp(params.peak_floor) {
            empty += 1;
        }
        w.write_record([
            row.path.display().to_string(),
            b.x0.to_string(),
            b.y0.to_string(),
            b.x1.to_string(),
            b.y1.to_string(),
            det.response_peak.to_string(),
        ])?;
        if let Some(t) = &row.bbox {
            ious.push(iou(t, &b));
        }
        if let Some(dir) = &a.annotate {
            let name = row.path.file_stem().map_or("page".into(), |s| s.to_string_lossy().into_owned());
            let out = dir.join(format!("{name}_detected.png"));
            render::annotate(page, row.bbox.as_ref(), &b)
                .save(&out)
                .with_context(|| format!("writing {}", out.display()))?;
        }
    }
    w.flush()?;
    if !ious.is_empty() {
        let mean = ious.iter().sum::<f64>() / ious.len() as f64;
        eprintln!("mean IoU {mean:.4} over {} annotated pages", ious.len());
    }
    if empty > 0 {
        eprintln!("{empty} page(s) with no stamp response above the floor");
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub pre: PreArgs,
    #[command(flatten)]
    pub dict: DictArgs,
    #[command(flatten)]
    pub svm: SvmArgs,
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 8)]
    pub gabor_scales: usize,
    #[arg(long, default_value_t = 8)]
    pub gabor_orientations: usize,
    #[arg(long, default_value_t = 64)]
    pub random_filters: usize,
    /// Write the rows as JSON here; printed after the table when omitted.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = format!(
        "{:<18}  {:>12}  {:>6}  {:>6}  {:>6}  {:>13}\n",
        "Method", "# of filters", "Acc.", "Prec.", "Recall", "Test time (s)"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<18}  {:>12}  {:>6.2}  {:>6.2}  {:>6.2}  {:>13.3}\n",
            r.method, r.n_filters, r.accuracy, r.precision, r.recall, r.test_time_s
        ));
    }
    s.push_str(&format!("\n{:<18}  {:>14}  {:>11}\n", "Test time split", "Extraction (s)", "Scoring (s)"));
    for r in rows {
        s.push_str(&format!("{:<18}  {:>14.3}  {:>11.6}\n", r.method, r.extract_time_s, r.score_time_s));
    }
    s
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let pre = a.pre.config();
    let rows = load_rows(&a.manifest)?;
    let data = load_verification(&rows, &pre, a.seed)?;
    let cfg = BenchConfig {
        preprocess: pre,
        learn: a.dict.config(a.seed),
        svm: a.svm.params(a.seed),
        train_fraction: a.train_fraction,
        gabor_scales: a.gabor_scales,
        gabor_orientations: a.gabor_orientations,
        random_filters: a.random_filters,
        seed: a.seed,
    };
    let out = run_bench(&data, &cfg)?;
    print!("{}", bench_table(&out.rows));
    println!("train {} / test {} images", out.n_train, out.n_test);
    let json = serde_json::to_string_pretty(&out.rows)?;
    match &a.json {
        Some(p) => write_file(p, json.as_bytes())?,
        None => println!("{json}"),
    }
    Ok(())
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum BankArg {
    Gabor,
    Random,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    /// Model whose atoms to draw.
    #[arg(long, conflicts_with = "bank", required_unless_present = "bank")]
    pub model: Option<PathBuf>,
    /// Draw a baseline filter bank instead of a model.
    #[arg(long, value_enum)]
    pub bank: Option<BankArg>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Filter side for baseline banks.
    #[arg(long, default_value_t = 16)]
    pub patch: usize,
    #[arg(long, default_value_t = 8)]
    pub scales: usize,
    #[arg(long, default_value_t = 8)]
    pub orientations: usize,
    /// Random filter count.
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    /// Pixel magnification.
    #[arg(long, default_value_t = 4)]
    pub zoom: usize,
    /// Mosaic columns.
    #[arg(long, default_value_t = 8)]
    pub columns: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn dump_atoms(a: DumpArgs) -> Result<()> {
    let rd = match (&a.model, a.bank) {
        (Some(m), _) => ModelFile::load(m)?.ranked,
        (None, Some(BankArg::Gabor)) => gabor_bank(a.patch, a.scales, a.orientations)?.to_ranked_dictionary(),
        (None, Some(BankArg::Random)) => random_bank(a.patch, a.count, a.seed)?.to_ranked_dictionary(),
        (None, None) => bail!("give --model or --bank"),
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let side = rd.dict().atom_side();
    for (j, atom) in rd.dict().atoms().iter().enumerate() {
        let p = a.out.join(format!("atom_{j:03}.png"));
        render::atom_image(atom, side, a.zoom)
            .save(&p)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    let ordered: Vec<&[f64]> = rd.scores().rank().iter().map(|&j| rd.dict().atom(j)).collect();
    let p = a.out.join("mosaic.png");
    render::mosaic(&ordered, side, rd.v(), a.columns, a.zoom)
        .save(&p)
        .with_context(|| format!("writing {}", p.display()))?;
    println!(
        "wrote {} atoms and {} ({} selected)",
        rd.dict().k(),
        p.display(),
        rd.v()
    );
    Ok(())
}
