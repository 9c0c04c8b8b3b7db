use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use swallowsense::dataset::{load_manifest, LabelScheme, PatientRecord, SplitConfig};
use swallowsense::features::FEATURE_NAMES;
use swallowsense::model::{
    metrics, permutation_importance, Aggregation, ForestConfig, MaxFeatures, ModelError,
};
use swallowsense::pipeline::{
    self, feature_columns, EvalConfig, EvalReport, SegMode, SegmentationSetup, SlidingConfig,
};
use swallowsense::segmentation::{ParamGrid, SegmentationParams};
use swallowsense::synth::{self, Range, Separability, SynthConfig};

/// Exit status for invalid input, unreadable files and other recoverable
/// failures. Broken internal invariants panic and exit with 101.
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(
    name = "swallowsense",
    version,
    about = "Swallow-sound segmentation and dysphagia risk classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (manifest, WAVs, annotations).
    Synth(SynthArgs),
    /// Segment every recording and score against annotations when present.
    Segment(SegmentArgs),
    /// Search segmentation parameters that maximise mean IoU.
    Gridsearch(GridArgs),
    /// Write the per-swallow feature table.
    Extract(ExtractArgs),
    /// Train a forest on the whole manifest.
    Train(TrainArgs),
    /// Repeated patient-level train/test evaluation.
    Evaluate(EvaluateArgs),
    /// Render a saved evaluation report as a table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Human,
    Fixed,
    Sliding,
}

impl From<ModeArg> for SegMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Human => SegMode::Human,
            ModeArg::Fixed => SegMode::Fixed,
            ModeArg::Sliding => SegMode::Sliding,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Abn,
    Sev,
}

impl From<SchemeArg> for LabelScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Abn => LabelScheme::Abnormality,
            SchemeArg::Sev => LabelScheme::Severity,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregateArg {
    Mean,
    Max,
    Mode,
}

impl From<AggregateArg> for Aggregation {
    fn from(a: AggregateArg) -> Self {
        match a {
            AggregateArg::Mean => Aggregation::Mean,
            AggregateArg::Max => Aggregation::Max,
            AggregateArg::Mode => Aggregation::Mode,
        }
    }
}

#[derive(Args)]
struct SegArgs {
    /// Segmentation source.
    #[arg(long, value_enum, default_value = "fixed")]
    mode: ModeArg,
    /// Silence threshold in dB below the clip's peak RMS.
    #[arg(long, default_value_t = 20.0)]
    top_db: f64,
    /// Segments closer than this many seconds are merged.
    #[arg(long, default_value_t = 0.6)]
    gap_time: f64,
    /// Segments whose peak amplitude is below this are dropped.
    #[arg(long, default_value_t = 0.0)]
    min_amplitude: f64,
    /// Segments whose peak amplitude exceeds this are dropped.
    #[arg(long, default_value_t = 2.0)]
    max_amplitude: f64,
    /// Sliding-window length in seconds.
    #[arg(long, default_value_t = 1.0)]
    window: f64,
    /// Sliding-window overlap fraction.
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
}

impl SegArgs {
    fn setup(&self) -> Result<SegmentationSetup> {
        let params = SegmentationParams::new(
            self.top_db,
            self.gap_time,
            self.min_amplitude,
            self.max_amplitude,
        )?;
        if !(self.window > 0.0 && self.window.is_finite()) || !(0.0..1.0).contains(&self.overlap) {
            bail!("--window must be positive and --overlap in [0, 1)");
        }
        Ok(SegmentationSetup {
            mode: self.mode.into(),
            params,
            sliding: SlidingConfig {
                window_s: self.window,
                overlap: self.overlap,
            },
        })
    }
}

#[derive(Args)]
struct ForestArgs {
    #[arg(long, default_value_t = 100)]
    trees: usize,
    /// Maximum tree depth; unlimited when omitted.
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = 1)]
    min_samples_leaf: usize,
    /// Features scored per split: sqrt, all, or a count.
    #[arg(long, default_value = "sqrt")]
    max_features: MaxFeatures,
    /// Grow trees on one thread (results are identical either way).
    #[arg(long)]
    serial: bool,
}

impl ForestArgs {
    fn config(&self, seed: u64) -> Result<ForestConfig> {
        let cfg = ForestConfig {
            n_trees: self.trees,
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            features_per_split: self.max_features,
            seed,
            parallel: !self.serial,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    patients: usize,
    #[arg(long, default_value_t = 10)]
    swallows_min: usize,
    #[arg(long, default_value_t = 15)]
    swallows_max: usize,
    #[arg(long, default_value_t = 0.5)]
    abnormal_fraction: f64,
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
    /// Let class amplitude ranges overlap (amplitudes given below).
    #[arg(long)]
    overlapping: bool,
    /// Abnormal-class amplitude range as `lo,hi`.
    #[arg(long, value_parser = parse_range)]
    abnormal_amplitude: Option<Range>,
    #[arg(long, env = "SWALLOWSENSE_SEED", default_value_t = 7)]
    seed: u64,
}

fn parse_range(s: &str) -> Result<Range, String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    Ok(Range::new(lo, hi))
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seg: SegArgs,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10,15,20,25,30")]
    top_db: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8")]
    gap_time: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    min_amplitude: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    max_amplitude: Vec<f64>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seg: SegArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "abn")]
    label_scheme: SchemeArg,
    #[command(flatten)]
    seg: SegArgs,
    #[command(flatten)]
    forest: ForestArgs,
    /// Column shuffles per feature for permutation importance (0 disables).
    #[arg(long, default_value_t = 5)]
    importance_repeats: usize,
    #[arg(long, env = "SWALLOWSENSE_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "abn")]
    label_scheme: SchemeArg,
    #[arg(long, value_enum, default_value = "mean")]
    aggregate: AggregateArg,
    #[arg(long, default_value_t = 5)]
    splits: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Use this JSON split plan instead of drawing splits.
    #[arg(long)]
    split_plan: Option<PathBuf>,
    #[command(flatten)]
    seg: SegArgs,
    #[command(flatten)]
    forest: ForestArgs,
    #[arg(long, env = "SWALLOWSENSE_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation report JSON.
    #[arg(long)]
    input: PathBuf,
}

fn manifest(path: &Path) -> Result<Vec<PatientRecord>> {
    load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig {
        n_patients: a.patients,
        swallows_per_patient: (a.swallows_min, a.swallows_max),
        sample_rate: a.sample_rate,
        abnormal_fraction: a.abnormal_fraction,
        seed: a.seed,
        ..Default::default()
    };
    if a.overlapping {
        cfg.separability = Separability::Overlapping;
    }
    if let Some(r) = a.abnormal_amplitude {
        cfg.abnormal.amplitude = r;
    }
    let cohort = synth::generate_cohort(&cfg)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let manifest = synth::write_cohort(&cohort, &a.out)?;
    let n_rec: usize = cohort.patients.iter().map(|p| p.recordings.len()).sum();
    println!(
        "wrote {} patients, {} recordings to {}",
        cohort.patients.len(),
        n_rec,
        manifest.display()
    );
    Ok(())
}

fn cmd_segment(a: SegmentArgs) -> Result<()> {
    let setup = a.seg.setup()?;
    let patients = manifest(&a.manifest)?;
    let report = pipeline::segment_cohort(&patients, &setup)?;
    let path = pipeline::output_path(&a.out, "segments.json")?;
    write(&path, &serde_json::to_string_pretty(&report)?)?;
    for r in &report.recordings {
        println!("{}\t{} segments", r.wav_path, r.segments.len());
    }
    if let Some(s) = report.mean_score {
        println!(
            "mean IoU {:.4}  sensitivity {:.4}  specificity {:.4}",
            s.iou, s.sensitivity, s.specificity
        );
    }
    Ok(())
}

fn cmd_gridsearch(a: GridArgs) -> Result<()> {
    let grid = ParamGrid {
        top_db: a.top_db,
        gap_time: a.gap_time,
        min_amplitude: a.min_amplitude,
        max_amplitude: a.max_amplitude,
    };
    let patients = manifest(&a.manifest)?;
    let result = pipeline::gridsearch(&patients, &grid)?;
    write(
        &pipeline::output_path(&a.out, "gridsearch.csv")?,
        &pipeline::grid_table_csv(&result),
    )?;
    write(
        &a.out.join("best_params.json"),
        &serde_json::to_string_pretty(&result.best)?,
    )?;
    let b = &result.best;
    println!(
        "best top_db {} gap_time {} min {} max {}  mean IoU {:.4}  ({} points)",
        b.params.top_db,
        b.params.gap_time,
        b.params.min_amplitude,
        b.params.max_amplitude,
        b.mean_iou,
        result.table.len()
    );
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    let setup = a.seg.setup()?;
    let patients = manifest(&a.manifest)?;
    let table = pipeline::extract_cohort(&patients, &setup)?;
    let path = pipeline::output_path(&a.out, "features.csv")?;
    write(&path, &pipeline::features_csv(&table))?;
    let n: usize = table.iter().map(|p| p.swallows.len()).sum();
    println!("wrote {n} swallows to {}", path.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let setup = a.seg.setup()?;
    let forest_cfg = a.forest.config(a.seed)?;
    let scheme: LabelScheme = a.label_scheme.into();
    let patients = manifest(&a.manifest)?;
    let table = pipeline::extract_cohort(&patients, &setup)?;
    let forest = pipeline::train_on(&table, scheme, &forest_cfg)?;
    write(
        &pipeline::output_path(&a.out, "model.json")?,
        &forest.to_json(),
    )?;

    if a.importance_repeats > 0 {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for p in &table {
            let class = scheme.label(p.pas).context("PAS outside 1-8")?;
            for s in &p.swallows {
                x.push(s.features.clone());
                y.push(class);
            }
        }
        let n_classes = scheme.n_classes();
        let metric = move |preds: &[swallowsense::model::Prediction], y: &[usize]| {
            let predicted: Vec<usize> = preds.iter().map(|p| p.predicted_class).collect();
            metrics::balanced_accuracy(&predicted, y, n_classes).map_err(ModelError::from)
        };
        let ranked =
            permutation_importance(&forest, &x, &y, &metric, a.importance_repeats, a.seed)?;
        let cols = feature_columns();
        let named: Vec<serde_json::Value> = ranked
            .iter()
            .map(|r| serde_json::json!({ "feature": cols[r.feature], "mean_drop": r.mean_drop }))
            .collect();
        write(
            &a.out.join("importance.json"),
            &serde_json::to_string_pretty(&named)?,
        )?;
        for r in ranked.iter().take(5) {
            println!("{:<16} {:+.4}", cols[r.feature], r.mean_drop);
        }
    }
    println!(
        "trained {} trees on {} features",
        forest.trees.len(),
        FEATURE_NAMES.len() + 1
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = EvalConfig {
        segmentation: a.seg.setup()?,
        label_scheme: a.label_scheme.into(),
        aggregation: a.aggregate.into(),
        splits: SplitConfig {
            n_splits: a.splits,
            test_fraction: a.test_fraction,
            seed: a.seed,
        },
        forest: a.forest.config(a.seed)?,
    };
    if a.splits == 0 || !(a.test_fraction > 0.0 && a.test_fraction < 1.0) {
        bail!("--splits must be >= 1 and --test-fraction in (0, 1)");
    }
    let plan = a
        .split_plan
        .as_deref()
        .map(pipeline::read_split_plan)
        .transpose()?;
    let patients = manifest(&a.manifest)?;
    let report = pipeline::evaluate(&patients, &cfg, plan)?;
    write(
        &pipeline::output_path(&a.out, "report.json")?,
        &report.to_json(),
    )?;
    let text = report.render();
    write(&a.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?;
    print!("{}", EvalReport::from_json(&text)?.render());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Gridsearch(a) => cmd_gridsearch(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // several library errors already include their cause in the message
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
