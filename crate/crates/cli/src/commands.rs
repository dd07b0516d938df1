use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cimle_core::container::{mosaic, read_record, write_layout, write_ppm, write_tensor, Record};
use cimle_core::dataset::{metadata_path, read_metadata, write_metadata, Dataset, ModeLabel};
use cimle_core::datasynth::{gen_gmm_dataset, gen_layout_dataset};
use cimle_core::eval::{
    coverage_of_samples, diversity_score, held_out_metric, interpolate, latent_for, DEFAULT_EVAL_SEED, DEFAULT_INPUTS,
    DEFAULT_PAIRS,
};
use cimle_core::generator::{read_checkpoint, write_checkpoint};
use cimle_core::imle::{train, TrainError};
use cimle_core::rebalance::rarity_scores;
use cimle_core::{Checkpoint, GeneratorState, ImageTensor, Metric, Rng, SemanticLayout};

use crate::config::{ExperimentConfig, Task};
use crate::error::CliError;

pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "epoch,mean_matched_distance,wallclock_ms";
pub const RESOLVED_CONFIG: &str = "config.resolved.txt";
pub const FINAL_CHECKPOINT: &str = "checkpoint.ckpt";
pub const DIAGNOSTIC_CHECKPOINT: &str = "diagnostic.ckpt";
pub const DATASET_FILE: &str = "dataset.ciml";
pub const LAYOUTS_FILE: &str = "layouts.ciml";

const TAG_INIT: u64 = 0x1417;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let file =
        File::open(path).map_err(|e| CliError::Config(format!("cannot open checkpoint {}: {e}", path.display())))?;
    read_checkpoint(&mut BufReader::new(file)).map_err(|e| CliError::reading("checkpoint", path, e))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CliError> {
    let mut out = create(path)?;
    write_checkpoint(&mut out, ckpt)?;
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("dataset {} does not exist", path.display())));
    }
    Dataset::load(path).map_err(|e| CliError::reading("dataset", path, e))
}

/// Mode labels stored next to `dataset`, if any.
pub fn load_metadata(dataset: &Path) -> Result<Option<Vec<ModeLabel>>, CliError> {
    let path = metadata_path(dataset);
    if !path.exists() {
        return Ok(None);
    }
    let file = File::open(&path)?;
    read_metadata(file)
        .map(Some)
        .map_err(|e| CliError::reading("metadata", &path, e))
}

/// The `index`-th label map stored in `path`.
pub fn load_layout(path: &Path, index: usize, num_classes: usize) -> Result<SemanticLayout, CliError> {
    let file = File::open(path).map_err(|e| CliError::Config(format!("cannot open layout {}: {e}", path.display())))?;
    let mut input = BufReader::new(file);
    let mut seen = 0;
    while let Some(record) = read_record(&mut input).map_err(|e| CliError::reading("layout file", path, e))? {
        if let Record::LabelMap { .. } = record {
            if seen == index {
                return record
                    .into_layout(num_classes)
                    .map_err(|e| CliError::Config(format!("layout {index} in {}: {e}", path.display())));
            }
            seen += 1;
        }
    }
    Err(CliError::Config(format!(
        "{} holds {seen} layouts, index {index} requested",
        path.display()
    )))
}

/// Layouts in first-appearance order with duplicates removed.
pub fn distinct_layouts(dataset: &Dataset) -> Vec<SemanticLayout> {
    let mut seen = HashSet::new();
    dataset
        .examples()
        .iter()
        .filter(|ex| seen.insert(ex.layout.raw_labels().to_vec()))
        .map(|ex| ex.layout.clone())
        .collect()
}

fn write_layouts(path: &Path, layouts: &[SemanticLayout]) -> Result<(), CliError> {
    let mut out = create(path)?;
    for x in layouts {
        write_layout(&mut out, x)?;
    }
    out.flush()?;
    Ok(())
}

fn write_dataset(dir: &Path, dataset: &Dataset, labels: Option<&[ModeLabel]>) -> Result<PathBuf, CliError> {
    let path = dir.join(DATASET_FILE);
    dataset.save(&path)?;
    if let Some(labels) = labels {
        let mut out = create(&metadata_path(&path))?;
        write_metadata(&mut out, labels)?;
        out.flush()?;
    }
    write_layouts(&dir.join(LAYOUTS_FILE), &distinct_layouts(dataset))?;
    Ok(path)
}

/// Loads the configured dataset or synthesises one from the task parameters.
fn obtain_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Option<Vec<ModeLabel>>), CliError> {
    if let Some(path) = &cfg.dataset {
        return Ok((load_dataset(path)?, load_metadata(path)?));
    }
    let mut rng = Rng::new(cfg.data_seed);
    Ok(match cfg.task {
        Task::Gmm => {
            let d = gen_gmm_dataset(&cfg.gmm_spec(), &mut rng)?;
            (d.dataset, Some(d.labels))
        }
        Task::Layout => {
            let d = gen_layout_dataset(&cfg.layout_spec(), &mut rng)?;
            (d.dataset, Some(d.labels))
        }
    })
}

/// Writes the synthetic dataset described by `config` into `out`.
pub fn cmd_gen_data(config: &Path, seed: Option<u64>, out: &Path) -> Result<PathBuf, CliError> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.data_seed = s;
    }
    ensure_dir(out)?;
    let (dataset, labels) = obtain_dataset(&cfg)?;
    write_dataset(out, &dataset, labels.as_deref())
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub final_mean_distance: Option<f64>,
}

fn checkpoint_of(state: &GeneratorState, cfg: &ExperimentConfig, metric: &Metric) -> Checkpoint {
    Checkpoint {
        state: state.clone(),
        extractor_seed: cfg.train.extractor_seed,
        lambda: match metric {
            Metric::Perceptual(p) => p.lambda.values().to_vec(),
            Metric::L2 => Vec::new(),
        },
    }
}

/// Runs training as configured. Writes the resolved config, the dataset it
/// trained on, a per-epoch log, periodic and final checkpoints.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary, CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    let (dataset, labels) = obtain_dataset(&cfg)?;
    let (h, w, c) = dataset.image_dims();
    let spec = &mut cfg.generator;
    spec.input_classes = dataset.num_classes();
    (spec.height, spec.width, spec.out_channels) = (h, w, c);
    cfg.validate()?;

    let dir = cfg.out_dir.clone();
    ensure_dir(&dir)?;
    fs::write(dir.join(RESOLVED_CONFIG), cfg.to_text())?;
    write_dataset(&dir, &dataset, labels.as_deref())?;

    let initial = GeneratorState::init(cfg.generator.clone(), &mut Rng::new(cfg.seed).derive(&[TAG_INIT]))?;
    let mut log = create(&dir.join(LOG_FILE))?;
    writeln!(log, "{LOG_HEADER}")?;
    let mut io_error: Option<CliError> = None;
    log::info!("training {} epochs on {} examples", cfg.train.epochs, dataset.len());
    let result = train(initial, &dataset, &cfg.train, |record, state, metric| {
        if io_error.is_some() {
            return;
        }
        let wall = if cfg.log_wallclock {
            record.wallclock_ms.to_string()
        } else {
            "-".to_string()
        };
        let step = (|| -> Result<(), CliError> {
            writeln!(log, "{},{},{wall}", record.epoch, record.mean_matched_distance)?;
            log.flush()?;
            if cfg.checkpoint_every > 0 && record.epoch % cfg.checkpoint_every == 0 {
                let name = format!("checkpoint_epoch_{:05}.ckpt", record.epoch);
                save_checkpoint(&dir.join(name), &checkpoint_of(state, &cfg, metric))?;
            }
            Ok(())
        })();
        if let Err(e) = step {
            io_error = Some(e);
        }
        log::info!(
            "epoch {} mean matched distance {}",
            record.epoch,
            record.mean_matched_distance
        );
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    match result {
        Ok(outcome) => {
            save_checkpoint(
                &dir.join(FINAL_CHECKPOINT),
                &checkpoint_of(&outcome.state, &cfg, &outcome.metric),
            )?;
            Ok(TrainSummary {
                out_dir: dir,
                epochs: outcome.log.len(),
                final_mean_distance: outcome.log.last().map(|r| r.mean_matched_distance),
            })
        }
        Err(TrainError::Setup(e)) => Err(e.into()),
        Err(TrainError::Diverged { epoch, state, source }) => {
            let ckpt = Checkpoint {
                state: *state,
                extractor_seed: cfg.train.extractor_seed,
                lambda: cfg.train.lambda.clone().unwrap_or_default(),
            };
            let path = dir.join(DIAGNOSTIC_CHECKPOINT);
            save_checkpoint(&path, &ckpt)?;
            Err(CliError::Diverged(format!(
                "training diverged in epoch {epoch}: {source}; last finite state saved to {}",
                path.display()
            )))
        }
    }
}

fn zero_padded(index: usize, total: usize) -> String {
    let width = total.saturating_sub(1).to_string().len().max(3);
    format!("{index:0width$}")
}

/// Writes images as PPM files (3 channels) or rows of a CSV (otherwise),
/// plus a raw container with the exact values.
fn export_images(dir: &Path, stem: &str, images: &[ImageTensor], grid: bool) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    if images.is_empty() {
        return Ok(files);
    }
    ensure_dir(dir)?;
    if images[0].channels() == 3 {
        for (i, im) in images.iter().enumerate() {
            let path = dir.join(format!("{stem}_{}.ppm", zero_padded(i, images.len())));
            let mut out = create(&path)?;
            write_ppm(&mut out, im)?;
            out.flush()?;
            files.push(path);
        }
        if grid {
            let path = dir.join(format!("{stem}_mosaic.ppm"));
            let mut out = create(&path)?;
            write_ppm(&mut out, &mosaic(images, None)?)?;
            out.flush()?;
            files.push(path);
        }
    } else {
        let path = dir.join(format!("{stem}s.csv"));
        let mut out = create(&path)?;
        let n = images[0].data().len();
        let header: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        writeln!(out, "index,{}", header.join(","))?;
        for (i, im) in images.iter().enumerate() {
            let row: Vec<String> = im.data().iter().map(f64::to_string).collect();
            writeln!(out, "{i},{}", row.join(","))?;
        }
        out.flush()?;
        files.push(path);
    }
    let path = dir.join(format!("{stem}s.ciml"));
    let mut out = create(&path)?;
    for im in images {
        write_tensor(&mut out, im)?;
    }
    out.flush()?;
    files.push(path);
    Ok(files)
}

#[derive(Debug, Clone)]
pub struct SampleArgs {
    pub checkpoint: PathBuf,
    pub layout: PathBuf,
    pub layout_index: usize,
    pub count: usize,
    pub seed: u64,
    pub out: PathBuf,
}

/// Sample `i` uses latent `latent_for(seed, i)`.
pub fn cmd_sample(args: &SampleArgs) -> Result<Vec<PathBuf>, CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let state = &ckpt.state;
    let x = load_layout(&args.layout, args.layout_index, state.spec().input_classes)?;
    let images = (0..args.count)
        .map(|i| state.generate(&x, &latent_for(state.spec(), args.seed, i as u64)))
        .collect::<cimle_core::Result<Vec<_>>>()?;
    export_images(&args.out, "sample", &images, true)
}

#[derive(Debug, Clone)]
pub struct InterpolateArgs {
    pub checkpoint: PathBuf,
    pub layout: PathBuf,
    pub layout_index: usize,
    pub seed_a: u64,
    pub seed_b: u64,
    pub steps: usize,
    pub out: PathBuf,
}

/// Frames between the first latents of the `seed_a` and `seed_b` streams,
/// i.e. sample 0 of `cmd_sample` with each seed.
pub fn cmd_interpolate(args: &InterpolateArgs) -> Result<Vec<PathBuf>, CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let state = &ckpt.state;
    let x = load_layout(&args.layout, args.layout_index, state.spec().input_classes)?;
    let a = latent_for(state.spec(), args.seed_a, 0);
    let b = latent_for(state.spec(), args.seed_b, 0);
    let frames = interpolate(state, &x, &a, &b, args.steps)?;
    export_images(&args.out, "frame", &frames, false)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    /// Detected from the image shape when absent: 1x1 images mean the GMM task.
    pub task: Option<Task>,
    pub pairs: usize,
    pub inputs: usize,
    pub epsilon: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for EvalArgs {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::new(),
            dataset: PathBuf::new(),
            task: None,
            pairs: DEFAULT_PAIRS,
            inputs: DEFAULT_INPUTS,
            epsilon: None,
            samples: 200,
            seed: DEFAULT_EVAL_SEED,
            out: PathBuf::from("eval"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub diversity: f64,
    /// Per-condition coverage (GMM task only).
    pub coverage: Option<Vec<f64>>,
}

/// Mode centres indexed `[class][mode]`.
pub type ModeCentres = Vec<Vec<Vec<f64>>>;

/// Empirical mode centres and pooled per-coordinate std of labelled examples.
pub fn empirical_modes(dataset: &Dataset, labels: &[ModeLabel]) -> Result<(ModeCentres, f64), CliError> {
    let dim = dataset.get(0).image.data().len();
    let classes = labels.iter().map(|l| l.class + 1).max().unwrap_or(0);
    let modes = labels.iter().map(|l| l.mode + 1).max().unwrap_or(0);
    let mut sums = vec![vec![(vec![0.0; dim], 0usize); modes]; classes];
    for l in labels {
        if l.image >= dataset.len() {
            return Err(CliError::Corrupt(format!(
                "metadata references image {} of {}",
                l.image,
                dataset.len()
            )));
        }
        let (s, n) = &mut sums[l.class][l.mode];
        for (acc, v) in s.iter_mut().zip(dataset.get(l.image).image.data()) {
            *acc += v;
        }
        *n += 1;
    }
    let centres: ModeCentres = sums
        .iter()
        .map(|per_mode| {
            per_mode
                .iter()
                .filter(|(_, n)| *n > 0)
                .map(|(s, n)| s.iter().map(|v| v / *n as f64).collect())
                .collect()
        })
        .collect();
    let mut sq = 0.0;
    let mut count = 0usize;
    for l in labels {
        let centre = &sums[l.class][l.mode];
        for (v, s) in dataset.get(l.image).image.data().iter().zip(&centre.0) {
            let mean = s / centre.1 as f64;
            sq += (v - mean).powi(2);
            count += 1;
        }
    }
    Ok((centres, (sq / count.max(1) as f64).sqrt()))
}

/// Diversity over the dataset's distinct layouts and, for the GMM task,
/// per-condition mode coverage against the labelled mode centres.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalSummary, CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let state = &ckpt.state;
    let dataset = load_dataset(&args.dataset)?;
    let (h, w, c) = dataset.image_dims();
    let spec = state.spec();
    if (dataset.num_classes(), h, w, c) != (spec.input_classes, spec.height, spec.width, spec.out_channels) {
        return Err(CliError::Config("dataset shape does not match the checkpoint".into()));
    }
    let task = args
        .task
        .unwrap_or(if (h, w) == (1, 1) { Task::Gmm } else { Task::Layout });
    ensure_dir(&args.out)?;

    let mut inputs = distinct_layouts(&dataset);
    inputs.truncate(args.inputs.max(1));
    let metric = held_out_metric(args.seed, h, w, c)?;
    let report = diversity_score(state, &inputs, args.pairs, &metric, args.seed)?;
    fs::write(args.out.join("diversity.csv"), report.to_csv())?;

    let mut coverage = None;
    if task == Task::Gmm {
        let labels = load_metadata(&args.dataset)?
            .ok_or_else(|| CliError::Config("mode coverage needs the dataset's .meta.csv".into()))?;
        let (centres, std) = empirical_modes(&dataset, &labels)?;
        let epsilon = args.epsilon.unwrap_or(3.0 * std);
        let mut per = Vec::with_capacity(centres.len());
        let mut csv = String::from("condition,coverage\n");
        for (cond, modes) in centres.iter().enumerate() {
            let x = SemanticLayout::from_labels(1, 1, &[cond], dataset.num_classes())?;
            let samples = (0..args.samples)
                .map(|i| {
                    Ok(state
                        .generate(&x, &latent_for(spec, args.seed, (cond * args.samples + i) as u64))?
                        .into_vec())
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let cov = coverage_of_samples(&samples, modes, epsilon)?;
            csv.push_str(&format!("{cond},{cov}\n"));
            per.push(cov);
        }
        let mean = per.iter().sum::<f64>() / per.len().max(1) as f64;
        csv.push_str(&format!("mean,{mean}\n"));
        fs::write(args.out.join("coverage.csv"), csv)?;
        coverage = Some(per);
    }
    Ok(EvalSummary {
        diversity: report.global_mean,
        coverage,
    })
}

/// Rarity statistics of every present `(category, image)`.
pub fn cmd_rebalance_stats(dataset: &Path) -> Result<String, CliError> {
    let ds = load_dataset(dataset)?;
    Ok(rarity_scores(&ds)?.to_csv())
}
