//! `vcalc` subcommands: `phantom`, `segment`, `score`, `eval`.
//!
//! Every command goes through the same library calls a caller would make, and
//! every report echoes the full parameter set including defaults.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::calc::{run_pipeline, CalcificationReport, Connectivity2d, MaskSource, MinAreaFilter, PipelineConfig, SliceRange, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::metrics::{self, BCE_EPSILON};
use crate::phantom::{generate, PhantomSpec};
use crate::seg::{import_mask, parse_seed_list, region_grow, Band, Connectivity3d, GrowStatus, RegionGrowOutcome, RegionGrowParams};
use crate::volio::{load_mask, load_volume, save_mask, save_volume, write_atomic, WindowMode};

#[derive(Debug, Parser)]
#[command(name = "vcalc", version, about = "Vascular calcification scoring for CT angiography volumes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom volume with ground-truth masks.
    Phantom(PhantomArgs),
    /// Grow a vascular mask from seeds.
    Segment(SegmentArgs),
    /// Score calcification inside a vascular mask.
    Score(ScoreArgs),
    /// Compare masks or score tables.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Phantom spec (TOML).
    #[arg(long)]
    pub spec: PathBuf,
    /// Writes PREFIX.ct.ctv, PREFIX.vessel.ctv and PREFIX.calcium.ctv.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec's rng_seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct GrowArgs {
    /// Seeds as `x,y,z[;x,y,z...]`, or a file with one `x y z` per line.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Inclusive HU band `LO:HI`.
    #[arg(long, allow_hyphen_values = true)]
    pub band: Option<Band>,
    /// 3-D connectivity, 6 or 26.
    #[arg(long, default_value_t = 6)]
    pub connectivity: u8,
    /// Growth cap (default: every voxel).
    #[arg(long)]
    pub max_voxels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub grow: GrowArgs,
    /// Writes PREFIX.mask.ctv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Vascular mask to import (mutually exclusive with --seeds/--band).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    pub grow: GrowArgs,
    /// `auto` (min-max) or `LEVEL:WIDTH` in HU.
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    pub window: WindowMode,
    /// Calcium is every masked byte strictly greater than this.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: u8,
    /// Drop in-plane components smaller than this many mm².
    #[arg(long)]
    pub min_area: Option<f64>,
    /// In-plane connectivity for --min-area, 4 or 8.
    #[arg(long, default_value_t = 8)]
    pub connectivity_2d: u8,
    /// Inclusive slice range `START:END` (default: all slices).
    #[arg(long)]
    pub range: Option<SliceRange>,
    /// Writes PREFIX.report.json and PREFIX.slices.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted mask (.ctv) or score table (CSV `id,score`).
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference mask (.ctv) or score table (CSV `id,score`).
    #[arg(long)]
    pub truth: PathBuf,
    /// Comma-separated subset of: iou, dice, per-slice-dice, ape, mape, r2, regression.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    /// Also writes PREFIX.eval.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Where `score` gets its vascular mask.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSourceConfig {
    Import(PathBuf),
    RegionGrow(RegionGrowParams),
}

/// Fully resolved `score` invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: PathBuf,
    pub mask_source: MaskSourceConfig,
    pub window: WindowMode,
    pub threshold: u8,
    pub min_area: Option<MinAreaFilter>,
    pub range: Option<SliceRange>,
    pub out_prefix: PathBuf,
}

fn parse_seeds(spec: &str) -> Result<Vec<[usize; 3]>> {
    if spec.contains(',') {
        parse_seed_list(&spec.replace(';', "\n"))
    } else {
        let text = fs::read_to_string(spec).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(spec.into()),
            _ => Error::Io { path: spec.into(), source: e },
        })?;
        parse_seed_list(&text)
    }
}

impl GrowArgs {
    fn is_set(&self) -> bool {
        self.seeds.is_some() || self.band.is_some() || self.max_voxels.is_some()
    }

    fn params(&self) -> Result<RegionGrowParams> {
        let seeds = self
            .seeds
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter("region growing needs --seeds".into()))?;
        let band = self
            .band
            .ok_or_else(|| Error::InvalidParameter("region growing needs --band LO:HI".into()))?;
        let mut params = RegionGrowParams::new(parse_seeds(seeds)?, band.lower_hu, band.upper_hu);
        params.connectivity = Connectivity3d::try_from(self.connectivity)?;
        params.max_voxels = self.max_voxels;
        Ok(params)
    }
}

impl RunConfig {
    pub fn from_args(args: &ScoreArgs) -> Result<Self> {
        let mask_source = match (&args.mask, args.grow.is_set()) {
            (Some(path), false) => MaskSourceConfig::Import(path.clone()),
            (None, true) => MaskSourceConfig::RegionGrow(args.grow.params()?),
            (Some(_), true) => {
                return Err(Error::InvalidParameter(
                    "give either --mask or --seeds/--band, not both".into(),
                ))
            }
            (None, false) => {
                return Err(Error::InvalidParameter(
                    "a mask source is required: --mask or --seeds with --band".into(),
                ))
            }
        };
        let min_area = match args.min_area {
            Some(a) => Some(MinAreaFilter {
                min_area_mm2: a,
                connectivity: Connectivity2d::try_from(args.connectivity_2d)?,
            }),
            None => None,
        };
        Ok(Self {
            input: args.input.clone(),
            mask_source,
            window: args.window,
            threshold: args.threshold,
            min_area,
            range: args.range,
            out_prefix: args.out.clone(),
        })
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Tracks output files so a failed command can remove what it already wrote.
#[derive(Default)]
struct Outputs {
    written: Vec<PathBuf>,
}

impl Outputs {
    fn track(&mut self, path: PathBuf) {
        self.written.push(path);
    }

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        write_atomic(&path, bytes)?;
        self.track(path);
        Ok(())
    }

    fn rollback(self) {
        for p in self.written {
            let _ = fs::remove_file(p);
        }
    }
}

fn ctv_files(header: &Path) -> [PathBuf; 2] {
    [header.to_path_buf(), header.with_extension("raw")]
}

/// Runs `f`, deleting every tracked output if it fails.
fn transactional<T>(f: impl FnOnce(&mut Outputs) -> Result<T>) -> Result<T> {
    let mut outputs = Outputs::default();
    match f(&mut outputs) {
        Ok(v) => Ok(v),
        Err(e) => {
            outputs.rollback();
            Err(e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    use std::fmt::Write as _;
    let mut msg = String::new();
    match cli.command {
        Command::Phantom(args) => {
            let paths = cmd_phantom(&args.spec, &args.out, args.seed)?;
            for p in paths {
                let _ = writeln!(msg, "wrote {}", p.display());
            }
        }
        Command::Segment(args) => {
            let params = args.grow.params()?;
            let (outcome, path) = cmd_segment(&args.input, &params, &args.out)?;
            if outcome.status == GrowStatus::NoSeedInBand {
                eprintln!(
                    "warning: no seed in band [{}, {}] HU; wrote an empty mask",
                    params.lower_hu, params.upper_hu
                );
            }
            let status = serde_json::to_value(outcome.status)?;
            let _ = writeln!(msg, "grown_voxels = {}", outcome.grown_voxels);
            let _ = writeln!(msg, "seeds_in_band = {}", outcome.seeds_in_band);
            let _ = writeln!(msg, "status = {}", status.as_str().unwrap_or_default());
            let _ = writeln!(msg, "wrote {}", path.display());
        }
        Command::Score(args) => {
            let config = RunConfig::from_args(&args)?;
            let out = cmd_score(&config)?;
            let _ = writeln!(msg, "total_count = {}", out.report.total_count);
            let _ = writeln!(msg, "total_volume_mm3 = {}", out.report.total_volume_mm3);
            let _ = writeln!(msg, "wrote {}", out.report_path.display());
            let _ = writeln!(msg, "wrote {}", out.csv_path.display());
        }
        Command::Eval(args) => {
            let report = cmd_eval(&args.pred, &args.truth, &args.metrics)?;
            let text = serde_json::to_string_pretty(&report)?;
            if let Some(prefix) = &args.out {
                write_atomic(&with_suffix(prefix, ".eval.json"), text.as_bytes())?;
            }
            msg.push_str(&text);
            msg.push('\n');
        }
    }
    emit(&msg)
}

// a closed stdout (e.g. piped into `head`) is not a failure
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io { path: "<stdout>".into(), source: e }),
        _ => Ok(()),
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidInput(e.to_string())
    }
}

/// Generates a phantom and writes volume, vessel mask and calcium mask.
pub fn cmd_phantom(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(spec_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(spec_path.into()),
        _ => Error::Io { path: spec_path.into(), source: e },
    })?;
    let mut spec = PhantomSpec::from_toml(&text)?;
    if let Some(s) = seed {
        spec.rng_seed = s;
    }
    let ph = generate(&spec)?;
    let ct = with_suffix(out, ".ct.ctv");
    let vessel = with_suffix(out, ".vessel.ctv");
    let calcium = with_suffix(out, ".calcium.ctv");
    transactional(|outputs| {
        ctv_files(&ct).into_iter().for_each(|p| outputs.track(p));
        save_volume(&ph.volume, &ct)?;
        ctv_files(&vessel).into_iter().for_each(|p| outputs.track(p));
        save_mask(&ph.vessel_mask, &vessel)?;
        ctv_files(&calcium).into_iter().for_each(|p| outputs.track(p));
        save_mask(&ph.calcium_mask, &calcium)?;
        Ok(())
    })?;
    Ok(vec![ct, vessel, calcium])
}

/// Grows a mask and writes it to `PREFIX.mask.ctv`.
pub fn cmd_segment(input: &Path, params: &RegionGrowParams, out: &Path) -> Result<(RegionGrowOutcome, PathBuf)> {
    let vol = load_volume(input)?;
    let outcome = region_grow(&vol, params)?;
    let path = with_suffix(out, ".mask.ctv");
    transactional(|outputs| {
        ctv_files(&path).into_iter().for_each(|p| outputs.track(p));
        save_mask(&outcome.mask, &path)
    })?;
    Ok((outcome, path))
}

#[derive(Debug, Serialize)]
struct GrowRecord<'a> {
    kind: &'static str,
    #[serde(flatten)]
    params: &'a RegionGrowParams,
    max_voxels_effective: usize,
    grown_voxels: usize,
    seeds_in_band: usize,
    status: GrowStatus,
}

#[derive(Debug, Serialize)]
struct ScoreReportFile<'a> {
    #[serde(flatten)]
    report: &'a CalcificationReport,
    input: String,
    mask_source: Value,
}

pub struct ScoreOutput {
    pub report: CalcificationReport,
    pub report_path: PathBuf,
    pub csv_path: PathBuf,
}

/// Scores `config.input` and writes the JSON report and per-slice CSV.
pub fn cmd_score(config: &RunConfig) -> Result<ScoreOutput> {
    let vol = load_volume(&config.input)?;
    let (mask, mask_record) = match &config.mask_source {
        MaskSourceConfig::Import(path) => (
            import_mask(path, vol.dims())?,
            json!({ "kind": "import", "path": path.display().to_string() }),
        ),
        MaskSourceConfig::RegionGrow(params) => {
            let outcome = region_grow(&vol, params)?;
            if outcome.status == GrowStatus::NoSeedInBand {
                eprintln!("warning: no seed in band; vascular mask is empty");
            }
            let record = serde_json::to_value(GrowRecord {
                kind: "region-grow",
                params,
                max_voxels_effective: params.effective_max_voxels(vol.dims()),
                grown_voxels: outcome.grown_voxels,
                seeds_in_band: outcome.seeds_in_band,
                status: outcome.status,
            })?;
            (outcome.mask, record)
        }
    };
    let pipeline = PipelineConfig {
        window: config.window,
        threshold: config.threshold,
        min_area: config.min_area,
        range: config.range,
    };
    let report = run_pipeline(&vol, MaskSource::Provided(&mask), &pipeline)?;
    let file = ScoreReportFile {
        report: &report,
        input: config.input.display().to_string(),
        mask_source: mask_record,
    };
    let text = serde_json::to_string_pretty(&file)?;
    let report_path = with_suffix(&config.out_prefix, ".report.json");
    let csv_path = with_suffix(&config.out_prefix, ".slices.csv");
    transactional(|outputs| {
        outputs.write(report_path.clone(), text.as_bytes())?;
        outputs.write(csv_path.clone(), report.per_slice_csv().as_bytes())
    })?;
    Ok(ScoreOutput {
        report,
        report_path,
        csv_path,
    })
}

const MASK_METRICS: [&str; 3] = ["iou", "dice", "per-slice-dice"];
const SCORE_METRICS: [&str; 4] = ["ape", "mape", "r2", "regression"];

fn is_mask_path(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "ctv")
}

/// Reads a score table with header `id,score`.
pub fn read_score_table(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::FileNotFound(path.into()),
            _ => Error::InvalidInput(format!("{}: {e}", path.display())),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() != 2 || &headers[0] != "id" || &headers[1] != "score" {
        return Err(Error::InvalidInput(format!(
            "{}: expected header `id,score`",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        let score: f64 = rec[1]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("{}: bad score {:?}", path.display(), &rec[1])))?;
        rows.push((rec[0].to_string(), score));
    }
    Ok(rows)
}

/// Pairs score tables by id, in `truth` order. Returns `(ids, truth, pred)`.
fn join_scores(pred: &[(String, f64)], truth: &[(String, f64)]) -> Result<(Vec<String>, Vec<f64>, Vec<f64>)> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let by_id: HashMap<&str, f64> = pred.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    if by_id.len() != pred.len() {
        return Err(Error::InvalidInput("duplicate id in prediction table".into()));
    }
    let mut ids = Vec::new();
    let mut t = Vec::new();
    let mut p = Vec::new();
    for (id, s) in truth {
        let ps = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("id {id:?} missing from prediction table")))?;
        ids.push(id.clone());
        t.push(*s);
        p.push(*ps);
    }
    Ok((ids, t, p))
}

/// Computes the requested metrics (all applicable ones when `selection` is empty).
pub fn cmd_eval(pred: &Path, truth: &Path, selection: &[String]) -> Result<Value> {
    let masks = is_mask_path(pred);
    if masks != is_mask_path(truth) {
        return Err(Error::InvalidInput("compare two masks or two score tables".into()));
    }
    let available: &[&str] = if masks { &MASK_METRICS } else { &SCORE_METRICS };
    let wanted: Vec<String> = if selection.is_empty() {
        available.iter().map(|s| s.to_string()).collect()
    } else {
        selection.iter().map(|s| s.trim().to_ascii_lowercase()).collect()
    };
    if let Some(bad) = wanted.iter().find(|m| !available.contains(&m.as_str())) {
        return Err(Error::InvalidParameter(format!(
            "metric {bad:?} not available for {}; choose from {}",
            if masks { "masks" } else { "score tables" },
            available.join(", ")
        )));
    }
    let mut out = serde_json::Map::new();
    if masks {
        let truth_mask = load_mask(truth)?;
        let pred_mask = import_mask(pred, truth_mask.dims())?;
        let c = metrics::confusion(&pred_mask, &truth_mask)?;
        out.insert("confusion".into(), serde_json::to_value(c)?);
        for m in &wanted {
            let v = match m.as_str() {
                "iou" => json!(metrics::iou(&c)),
                "dice" => json!(metrics::dice(&c)),
                "per-slice-dice" => json!(metrics::per_slice_dice_mean(&pred_mask, &truth_mask)?),
                _ => unreachable!(),
            };
            out.insert(m.clone(), v);
        }
    } else {
        let (ids, t, p) = join_scores(&read_score_table(pred)?, &read_score_table(truth)?)?;
        for m in &wanted {
            let v = match m.as_str() {
                "ape" => {
                    let per: Result<Vec<Value>> = ids
                        .iter()
                        .zip(t.iter().zip(&p))
                        .map(|(id, (&a, &b))| Ok(json!({ "id": id, "truth": a, "pred": b, "ape": metrics::ape(a, b)? })))
                        .collect();
                    Value::Array(per?)
                }
                "mape" => json!(metrics::mape(&t, &p)?),
                "r2" => json!(metrics::r_squared(&t, &p)?),
                "regression" => serde_json::to_value(metrics::regression_fit(&t, &p)?)?,
                _ => unreachable!(),
            };
            out.insert(m.clone(), v);
        }
    }
    Ok(json!({
        "mode": if masks { "masks" } else { "scores" },
        "pred": pred.display().to_string(),
        "truth": truth.display().to_string(),
        "metrics": Value::Object(out),
        "conventions": {
            "empty_overlap": "iou = dice = 1 when both masks are empty",
            "per_slice_dice": "mean over all slices; both empty = 1, one empty = 0",
            "ape": "|truth - pred| / |truth| * 100",
            "regression": "x = truth, y = pred; r is Pearson, r_squared = 1 - RSS/TSS",
            "bce_epsilon": BCE_EPSILON,
            "bce_log": "natural",
        },
    }))
}
