use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use grasens::csi::{
    read_manifest, read_trace, segment as segment_trace, synthetic_corpus, write_manifest, write_trace, CsiGeometry,
    ManifestEntry, Representation, SegmentSpec, Split, SynthConfig,
};
use grasens::network::{
    argmax, evaluate, fmt_metric, train as train_model, BlockToggles, Checkpoint, Dataset, EpochRecord, Metrics,
    METRICS_HEADER,
};
use grasens::{Dataset64, Error, Model64, Result};
use serde::Serialize;

use crate::run_config::RunConfig;

const THREADS_VAR: &str = "GRASENS_THREADS";

/// Worker threads allowed by `GRASENS_THREADS` (default 1). Every command is
/// single-threaded, so the value only has to be valid.
pub fn thread_budget() -> std::result::Result<usize, String> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(format!("{THREADS_VAR}={v:?} must be a positive integer")),
        },
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Repr {
    Magnitude,
    MagnitudePhaseDiff,
}

impl From<Repr> for Representation {
    fn from(r: Repr) -> Self {
        match r {
            Repr::Magnitude => Representation::Magnitude,
            Repr::MagnitudePhaseDiff => Representation::MagnitudePhaseDiff,
        }
    }
}

// ---- generate --------------------------------------------------------------

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 10)]
    pub traces_per_class: usize,
    /// Antenna and subcarrier counts as NTxNRxNS.
    #[arg(long, default_value = "1x3x30")]
    pub geometry: String,
    #[arg(long, default_value_t = 1000)]
    pub sample_rate: u32,
    /// Packets per trace.
    #[arg(long, default_value_t = 400)]
    pub duration: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let geometry = CsiGeometry::parse(&a.geometry, a.sample_rate)?;
    if a.classes == 0 || a.traces_per_class == 0 {
        return Err(Error::Usage("--classes and --traces-per-class must be positive".into()));
    }
    let cfg = SynthConfig {
        classes: a.classes,
        ..SynthConfig::default()
    };
    let corpus = synthetic_corpus(geometry, &cfg, a.traces_per_class, a.duration, a.seed)?;
    create_dir(&a.out)?;
    let mut entries = Vec::with_capacity(corpus.len());
    for (trace, split) in &corpus {
        let name = format!("{}.gcsi", trace.id);
        write_trace(trace, a.out.join(&name))?;
        entries.push(ManifestEntry {
            path: name.into(),
            label: trace.label.expect("synthetic traces are labelled"),
            split: *split,
        });
    }
    write_manifest(a.out.join("manifest.jsonl"), &entries)?;
    eprintln!("wrote {} traces ({geometry}) to {}", entries.len(), a.out.display());
    Ok(())
}

// ---- segment ---------------------------------------------------------------

#[derive(Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Window length in packets.
    #[arg(long, default_value_t = 200)]
    pub phi: usize,
    /// Hop between window starts in packets.
    #[arg(long, default_value_t = 100)]
    pub upsilon: usize,
    #[arg(long, value_enum, default_value = "magnitude")]
    pub representation: Repr,
    /// Output JSON-lines file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct WindowLine<'a> {
    source: &'a str,
    start: usize,
    label: usize,
    split: Split,
    shape: &'a [usize],
    data: &'a [f64],
}

pub fn segment(a: SegmentArgs) -> Result<()> {
    let spec = SegmentSpec::new(a.phi, a.upsilon)?;
    let entries = read_manifest(&a.manifest)?;
    let mut f = std::io::BufWriter::new(fs::File::create(&a.out).map_err(io_err(&a.out))?);
    let mut count = 0;
    for e in &entries {
        let trace = read_trace(&e.path)?;
        for w in segment_trace::<f64>(&trace, &spec, a.representation.into())? {
            let line = WindowLine {
                source: &w.source,
                start: w.start,
                label: e.label,
                split: e.split,
                shape: w.data.shape(),
                data: w.data.data(),
            };
            serde_json::to_writer(&mut f, &line)?;
            writeln!(f).map_err(io_err(&a.out))?;
            count += 1;
        }
    }
    f.flush().map_err(io_err(&a.out))?;
    eprintln!("wrote {count} windows from {} traces to {}", entries.len(), a.out.display());
    Ok(())
}

// ---- train -----------------------------------------------------------------

#[derive(Args)]
pub struct TrainArgs {
    /// JSON run config; flags given here override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of stacked blocks.
    #[arg(long)]
    pub lambda: Option<usize>,
    /// Channels carried between blocks.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub phi: Option<usize>,
    #[arg(long)]
    pub upsilon: Option<usize>,
    #[arg(long, value_enum)]
    pub representation: Option<Repr>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Seeds both initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated components to disable: gabor, antialias, temporal-att, frequency-att.
    #[arg(long)]
    pub ablate: Option<String>,
    /// Keep the Gabor parameters at their initial grid values.
    #[arg(long)]
    pub gabor_frozen: bool,
    /// Skip the smoothing of the logit vector.
    #[arg(long)]
    pub no_task_blur: bool,
}

impl TrainArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.manifest {
            c.manifest = Some(v.clone());
        }
        if let Some(v) = &self.out {
            c.out = Some(v.clone());
        }
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if let Some(v) = self.width {
            c.block.width = v;
        }
        if let Some(v) = self.phi {
            c.segment.phi = v;
        }
        if let Some(v) = self.upsilon {
            c.segment.upsilon = v;
        }
        if let Some(v) = self.representation {
            c.representation = v.into();
        }
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.train.lr = v;
        }
        if let Some(v) = self.momentum {
            c.train.momentum = v;
        }
        if let Some(v) = self.seed {
            c.train.seed = v;
            c.model_seed = v;
        }
        if let Some(v) = &self.ablate {
            c.block.toggles = BlockToggles::from_ablations(v)?;
        }
        if self.gabor_frozen {
            c.block.gabor_frozen = true;
        }
        if self.no_task_blur {
            c.task_blur = false;
        }
        Ok(c)
    }
}

/// `truth\pred` grid with one row per true class.
fn confusion_csv(m: &Metrics) -> String {
    let k = m.confusion.len();
    let mut s = String::from("truth\\pred");
    for j in 0..k {
        let _ = write!(s, ",{j}");
    }
    s.push('\n');
    for (i, row) in m.confusion.iter().enumerate() {
        let _ = write!(s, "{i}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn class_csv(m: &Metrics) -> String {
    let mut s = String::from("class,support,precision\n");
    for (j, row) in m.confusion.iter().enumerate() {
        let support: usize = row.iter().sum();
        let _ = writeln!(s, "{j},{support},{}", fmt_metric(m.precision[j]));
    }
    s
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.resolve()?;
    let manifest = cfg
        .manifest
        .clone()
        .ok_or_else(|| Error::Usage("no manifest: pass --manifest or set it in --config".into()))?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Usage("no run directory: pass --out or set it in --config".into()))?;
    cfg.train.validate()?;
    let ds: Dataset64 = Dataset::from_manifest(&manifest, cfg.segment, cfg.representation, None)?;
    let model = Model64::new(cfg.model_config(ds.data, ds.classes()))?;

    create_dir(&out)?;
    cfg.save(&out.join("config.json"))?;
    let metrics_path = out.join("metrics.csv");
    let mut metrics_file = fs::File::create(&metrics_path).map_err(io_err(&metrics_path))?;
    writeln!(metrics_file, "{METRICS_HEADER}").map_err(io_err(&metrics_path))?;
    let mut write_err = None;
    let outcome = train_model(model, &ds, &cfg.train, |r: &EpochRecord| {
        eprintln!("{}", r.csv_line());
        if let Err(e) = writeln!(metrics_file, "{}", r.csv_line()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(&metrics_path)(e));
    }

    outcome.best.save(out.join("model.ckpt"))?;
    outcome.last.save(out.join("last.ckpt"))?;
    let best: Model64 = outcome.best.restore()?;
    let scored = if ds.val.is_empty() { &ds.train } else { &ds.val };
    let (_, metrics, _) = evaluate(&best, scored)?;
    write_text(&out.join("confusion.csv"), &confusion_csv(&metrics))?;
    println!(
        "best epoch {} accuracy {:.6} precision_macro {}",
        outcome.best.epoch,
        metrics.accuracy,
        fmt_metric(metrics.precision_macro())
    );
    Ok(())
}

// ---- eval ------------------------------------------------------------------

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Directory for eval_metrics.csv and eval_confusion.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let split: Split = a.split.parse()?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model: Model64 = ckpt.restore()?;
    let data = model
        .config
        .data
        .ok_or_else(|| Error::Config(format!("{}: checkpoint carries no data layout", a.checkpoint.display())))?;
    let ds: Dataset64 = Dataset::from_manifest(&a.manifest, data.segment, data.representation, Some(data.geometry))?;
    let samples = ds.split(split);
    if samples.is_empty() {
        return Err(Error::Empty(format!("{}: no {split} windows", a.manifest.display())));
    }
    let (loss, m, _) = evaluate(&model, samples)?;
    println!("split {split} windows {} loss {loss:.6} accuracy {:.6} precision_macro {}", samples.len(), m.accuracy, fmt_metric(m.precision_macro()));
    print!("{}", class_csv(&m));
    print!("{}", confusion_csv(&m));
    if let Some(dir) = a.out {
        create_dir(&dir)?;
        write_text(&dir.join("eval_metrics.csv"), &class_csv(&m))?;
        write_text(&dir.join("eval_confusion.csv"), &confusion_csv(&m))?;
    }
    Ok(())
}

// ---- infer -----------------------------------------------------------------

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A GCSI trace.
    #[arg(long)]
    pub trace: PathBuf,
    /// Also write the predictions to this CSV file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn infer(a: InferArgs) -> Result<()> {
    let model: Model64 = Checkpoint::load(&a.checkpoint)?.restore()?;
    let data = model
        .config
        .data
        .ok_or_else(|| Error::Config(format!("{}: checkpoint carries no data layout", a.checkpoint.display())))?;
    let trace = read_trace(&a.trace)?;
    let mut csv = String::from("source,start,prediction");
    for j in 0..model.config.classes {
        let _ = write!(csv, ",logit_{j}");
    }
    csv.push('\n');
    for w in data.windows::<f64>(&trace)? {
        let logits = model.logits(&w.data)?;
        let _ = write!(csv, "{},{},{}", w.source, w.start, argmax(logits.data()));
        for v in logits.data() {
            let _ = write!(csv, ",{v:.6}");
        }
        csv.push('\n');
    }
    print!("{csv}");
    if let Some(p) = a.out {
        write_text(&p, &csv)?;
    }
    Ok(())
}

// ---- inspect-filters -------------------------------------------------------

#[derive(Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn inspect_filters(a: InspectArgs) -> Result<()> {
    let model: Model64 = Checkpoint::load(&a.checkpoint)?.restore()?;
    let layers = model.gabor_layers();
    if layers.is_empty() {
        eprintln!("checkpoint has no Gabor layers (trained with the gabor ablation)");
    }
    let kdir = a.out.join("kernels");
    create_dir(&kdir)?;
    let mut params = String::from("block,filter,in_channel,omega,theta,psi,sigma\n");
    for (block, layer) in layers {
        let bank = model_kernels(&model, layer)?;
        let k = layer.kernel_size;
        for f in 0..layer.c_out {
            let mut grid = String::from("in_channel,row");
            for col in 0..k {
                let _ = write!(grid, ",c{col}");
            }
            grid.push('\n');
            for c in 0..layer.c_in {
                let p = layer.params(&model.store, f, c);
                let _ = writeln!(params, "{block},{f},{c},{},{},{},{}", p.omega, p.theta, p.psi, p.sigma);
                let base = (f * layer.c_in + c) * k * k;
                for row in 0..k {
                    let _ = write!(grid, "{c},{row}");
                    for v in &bank[base + row * k..base + (row + 1) * k] {
                        let _ = write!(grid, ",{v}");
                    }
                    grid.push('\n');
                }
            }
            write_text(&kdir.join(format!("block{block}_filter{f:02}.csv")), &grid)?;
        }
    }
    write_text(&a.out.join("params.csv"), &params)
}

fn model_kernels(model: &Model64, layer: &grasens::gabor::GaborLayer) -> Result<Vec<f64>> {
    Ok(layer.kernel_values(&model.store)?.into_data())
}
