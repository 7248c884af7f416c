//! The `maskgen` command line.
//!
//! Subcommands: `postprocess`, `annotate`, `eval`, `roialign`. Every
//! subcommand also accepts `--config <file>` (flat `key=value` lines, keys
//! are long flag names) and `--dry-run`, which prints the merged settings as a
//! config file and exits. Flags given on the command line override the config.
//!
//! Exit status: 0 on success, 2 on unreadable or invalid input data, 3 on
//! usage or flag errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::annotate::{
    build_annotations, read_annotation_doc, write_annotation_doc, Category, ImageInfo, MaskInput,
    SegmentationMode,
};
use crate::eval::{evaluate, EvalMode};
use crate::pooling::{roi_align, roi_pool, FeatureMap, PoolMode, PoolSpec, Roi};
use crate::postprocess::{class_masks, Connectivity, FilterPolicy};
use crate::tensor_io::{read_mask_pgm, read_score_map, write_mask_pgm, write_tensor};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or mapping files.
    Usage(String),
    /// Unreadable or malformed input data.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "maskgen",
    version,
    about = "Score maps to clean masks, annotations and mAP"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Threshold score maps and write one cleaned PGM mask per present class.
    Postprocess(PostprocessArgs),
    /// Build an annotation document from PGM masks.
    Annotate(AnnotateArgs),
    /// Score predictions against ground truth (AP per class and mAP).
    Eval(EvalArgs),
    /// Run RoIAlign (and optionally RoIPool) over a list of regions.
    Roialign(RoiAlignArgs),
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Flat key=value file supplying defaults for any flag.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Print the merged configuration and exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, clap::Args)]
#[command(args_override_self = true)]
pub struct PostprocessArgs {
    /// MFT score map, or a directory of `.mft` score maps.
    #[arg(long, value_name = "FILE|DIR")]
    pub scores: PathBuf,
    /// Winning scores below this become background.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    #[arg(long, default_value_t = 100)]
    pub min_area: usize,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub keep_largest: Option<u64>,
    #[arg(long, default_value_t = 8, value_parser = parse_connectivity)]
    pub connectivity: u32,
    #[arg(long)]
    pub fill_holes: bool,
    #[arg(long, value_name = "DIR")]
    pub out_masks: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, clap::Args)]
#[command(args_override_self = true)]
pub struct AnnotateArgs {
    /// Directory of `<stem>_c<class>.pgm` masks.
    #[arg(long, value_name = "DIR")]
    pub masks: PathBuf,
    /// CSV lines `stem,file_name,height,width`; image ids follow line order.
    #[arg(long, value_name = "FILE")]
    pub image_meta: PathBuf,
    /// CSV lines `id,name`.
    #[arg(long, value_name = "FILE")]
    pub categories: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Emit outline polygons instead of RLE.
    #[arg(long)]
    pub polygons: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Segm,
    Bbox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolArg {
    Max,
    Avg,
}

#[derive(Debug, Clone, clap::Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    /// Prediction document (annotations carry `score`).
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
    /// Ground-truth document.
    #[arg(long, value_name = "FILE")]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Segm)]
    pub mode: ModeArg,
    /// Also write `{"per_class_ap": {...}, "mAP": v}` here.
    #[arg(long, value_name = "FILE")]
    pub json_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, clap::Args)]
#[command(args_override_self = true)]
pub struct RoiAlignArgs {
    /// MFT feature map (f32, height x width x channels).
    #[arg(long, value_name = "FILE")]
    pub features: PathBuf,
    /// Lines `image_id,x1,y1,x2,y2`.
    #[arg(long, value_name = "FILE")]
    pub rois: PathBuf,
    /// Bins as `HxW`.
    #[arg(long, default_value = "7x7", value_parser = parse_size)]
    pub output_size: (usize, usize),
    #[arg(long, value_enum, default_value_t = PoolArg::Max)]
    pub pool: PoolArg,
    /// Sample points per bin side.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Also write the quantized RoIPool result as `roi<k>_roipool.mft`.
    #[arg(long)]
    pub compare_roipool: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn parse_connectivity(s: &str) -> Result<u32, String> {
    match s {
        "4" => Ok(4),
        "8" => Ok(8),
        _ => Err(format!("connectivity must be 4 or 8, got {s:?}")),
    }
}

pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("expected HxW with positive integers, got {s:?}");
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

/// Flat `key=value` settings. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PipelineConfig {
    pub entries: Vec<(String, String)>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(format!("line {}: empty key", n + 1));
            }
            if entries.iter().any(|(e, _)| e == k) {
                return Err(format!("line {}: duplicate key {k:?}", n + 1));
            }
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(Self { entries })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

impl PostprocessArgs {
    pub fn to_config(&self) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.push("scores", path_str(&self.scores));
        c.push("threshold", self.threshold);
        c.push("min-area", self.min_area);
        if let Some(k) = self.keep_largest {
            c.push("keep-largest", k);
        }
        c.push("connectivity", self.connectivity);
        c.push("fill-holes", self.fill_holes);
        c.push("out-masks", path_str(&self.out_masks));
        c
    }
}

impl AnnotateArgs {
    pub fn to_config(&self) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.push("masks", path_str(&self.masks));
        c.push("image-meta", path_str(&self.image_meta));
        c.push("categories", path_str(&self.categories));
        c.push("out", path_str(&self.out));
        c.push("polygons", self.polygons);
        c
    }
}

impl EvalArgs {
    pub fn to_config(&self) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.push("pred", path_str(&self.pred));
        c.push("gt", path_str(&self.gt));
        c.push("iou", self.iou);
        c.push(
            "mode",
            match self.mode {
                ModeArg::Segm => "segm",
                ModeArg::Bbox => "bbox",
            },
        );
        if let Some(p) = &self.json_out {
            c.push("json-out", path_str(p));
        }
        c
    }
}

impl RoiAlignArgs {
    pub fn to_config(&self) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.push("features", path_str(&self.features));
        c.push("rois", path_str(&self.rois));
        c.push(
            "output-size",
            format!("{}x{}", self.output_size.0, self.output_size.1),
        );
        c.push(
            "pool",
            match self.pool {
                PoolArg::Max => "max",
                PoolArg::Avg => "avg",
            },
        );
        c.push("samples", self.samples);
        c.push("out", path_str(&self.out));
        c.push("compare-roipool", self.compare_roipool);
        c
    }
}

// Splices `--config` entries into argv right after the subcommand name, so
// explicit flags (which come later) override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(sub_name) = args.get(1).and_then(|s| s.to_str()).map(str::to_owned) else {
        return Ok(args);
    };
    let root = Cli::command();
    let Some(sub) = root.find_subcommand(&sub_name) else {
        return Ok(args);
    };
    let mut config_path: Option<PathBuf> = None;
    let mut i = 2;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" {
            config_path = args.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config_path = Some(PathBuf::from(p));
        }
        i += 1;
    }
    let Some(path) = config_path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| {
        CliError::Usage(format!("cannot read config {}: {e}", path.display()))
    })?;
    let config = PipelineConfig::parse(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;

    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in &config.entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .filter(|a| !matches!(a.get_id().as_str(), "config" | "dry_run"))
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "config {}: unknown key {key:?} for `{sub_name}`",
                    path.display()
                ))
            })?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => injected.push(format!("--{key}").into()),
                "false" => {}
                other => {
                    return Err(CliError::Usage(format!(
                        "config {}: {key} must be true or false, got {other:?}",
                        path.display()
                    )))
                }
            }
        } else {
            injected.push(format!("--{key}").into());
            injected.push(value.into());
        }
    }
    let mut out = Vec::with_capacity(args.len() + injected.len());
    out.extend_from_slice(&args[..2]);
    out.extend(injected);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the exit status. Normal output goes to `out`, diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let result = expand_config(args).and_then(|args| match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(cli, out),
        Err(e) => {
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    Ok(())
                }
                _ => Err(CliError::Usage(e.to_string())),
            }
        }
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let msg = e.message().trim_end();
            if msg.starts_with("error:") {
                let _ = writeln!(err, "{msg}");
            } else {
                let _ = writeln!(err, "error: {msg}");
            }
            e.exit_code()
        }
    }
}

/// [`run_with`] on the process's standard streams.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let (dry_run, config) = match &cli.command {
        Command::Postprocess(a) => (a.common.dry_run, a.to_config()),
        Command::Annotate(a) => (a.common.dry_run, a.to_config()),
        Command::Eval(a) => (a.common.dry_run, a.to_config()),
        Command::Roialign(a) => (a.common.dry_run, a.to_config()),
    };
    if dry_run {
        let _ = write!(out, "{}", config.render());
        return Ok(());
    }
    match cli.command {
        Command::Postprocess(a) => cmd_postprocess(&a, out),
        Command::Annotate(a) => cmd_annotate(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Roialign(a) => cmd_roialign(&a, out),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| data_err(dir, e))
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Files in `dir` with extension `ext`, sorted by path.
fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| data_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    files.sort();
    Ok(files)
}

pub fn cmd_postprocess(args: &PostprocessArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(args.threshold.is_finite() && args.threshold >= 0.0) {
        return Err(CliError::Usage(format!(
            "--threshold must be a non-negative number, got {}",
            args.threshold
        )));
    }
    let policy = FilterPolicy {
        min_area: args.min_area,
        keep_largest: args.keep_largest.map(|k| k as usize),
        connectivity: Connectivity::from_neighbors(args.connectivity)
            .expect("validated by the parser"),
        fill_holes: args.fill_holes,
    };
    let inputs = if args.scores.is_dir() {
        list_files(&args.scores, "mft")?
    } else {
        vec![args.scores.clone()]
    };
    let mut results = Vec::with_capacity(inputs.len());
    for path in &inputs {
        let scores = read_score_map(path).map_err(|e| data_err(path, e))?;
        let masks = class_masks(&scores, args.threshold, &policy).map_err(|e| data_err(path, e))?;
        results.push((file_stem(path), masks));
    }
    create_dir(&args.out_masks)?;
    for (stem, masks) in results {
        for (class, mask) in masks {
            let target = args.out_masks.join(format!("{stem}_c{class}.pgm"));
            write_mask_pgm(&mask, &target).map_err(|e| data_err(&target, e))?;
            let _ = writeln!(out, "{}", target.display());
        }
    }
    Ok(())
}

fn csv_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(n, l)| {
        let l = l.trim();
        (!l.is_empty() && !l.starts_with('#')).then(|| (n + 1, l.split(',').map(str::trim).collect()))
    })
}

/// Parses `stem,file_name,height,width` lines into `(stem, ImageInfo)`, ids
/// from 1 in line order.
pub fn parse_image_meta(text: &str) -> Result<Vec<(String, ImageInfo)>, String> {
    let mut out: Vec<(String, ImageInfo)> = Vec::new();
    for (line, fields) in csv_lines(text) {
        let [stem, file_name, h, w] = fields[..] else {
            return Err(format!("line {line}: expected stem,file_name,height,width"));
        };
        let dim = |s: &str| -> Result<usize, String> {
            s.parse::<usize>()
                .ok()
                .filter(|&d| d > 0)
                .ok_or_else(|| format!("line {line}: bad dimension {s:?}"))
        };
        if stem.is_empty() || out.iter().any(|(s, _)| s == stem) {
            return Err(format!("line {line}: empty or duplicate stem {stem:?}"));
        }
        let info = ImageInfo {
            id: out.len() as u64 + 1,
            file_name: file_name.to_string(),
            height: dim(h)?,
            width: dim(w)?,
        };
        out.push((stem.to_string(), info));
    }
    Ok(out)
}

/// Parses `id,name` lines.
pub fn parse_categories(text: &str) -> Result<Vec<Category>, String> {
    let mut out: Vec<Category> = Vec::new();
    for (line, fields) in csv_lines(text) {
        let [id, name] = fields[..] else {
            return Err(format!("line {line}: expected id,name"));
        };
        let id: u64 = id
            .parse()
            .ok()
            .filter(|&i| (1..=255).contains(&i))
            .ok_or_else(|| format!("line {line}: category id must be in 1..=255, got {id:?}"))?;
        if out.iter().any(|c| c.id == id) {
            return Err(format!("line {line}: duplicate category id {id}"));
        }
        out.push(Category {
            id,
            name: name.to_string(),
        });
    }
    Ok(out)
}

/// Splits `<stem>_c<class>` into its parts.
pub fn parse_mask_name(stem: &str) -> Option<(&str, u64)> {
    let (s, c) = stem.rsplit_once("_c")?;
    if s.is_empty() || c.is_empty() || !c.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((s, c.parse().ok()?))
}

pub fn cmd_annotate(args: &AnnotateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let read = |p: &Path| {
        std::fs::read_to_string(p)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
    };
    let meta = parse_image_meta(&read(&args.image_meta)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.image_meta.display())))?;
    let categories = parse_categories(&read(&args.categories)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.categories.display())))?;

    let mut entries = Vec::new();
    for path in list_files(&args.masks, "pgm")? {
        let stem = file_stem(&path);
        let (image_stem, class) = parse_mask_name(&stem).ok_or_else(|| {
            data_err(&path, "mask file name must look like <stem>_c<class>.pgm")
        })?;
        let image = meta
            .iter()
            .find(|(s, _)| s == image_stem)
            .map(|(_, info)| info.id)
            .ok_or_else(|| data_err(&path, format!("no image meta for stem {image_stem:?}")))?;
        entries.push((image_stem.to_string(), class, image, path.clone()));
    }
    // by input stem, then class
    entries.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut inputs = Vec::with_capacity(entries.len());
    for (_, class, image_id, path) in &entries {
        let mask = read_mask_pgm(path).map_err(|e| data_err(path, e))?;
        if !categories.iter().any(|c| c.id == *class) {
            return Err(data_err(path, format!("class {class} is not in the category list")));
        }
        inputs.push((
            path,
            MaskInput {
                image_id: *image_id,
                category_id: *class,
                mask,
            },
        ));
    }
    let images: Vec<ImageInfo> = meta.into_iter().map(|(_, i)| i).collect();
    let mode = if args.polygons {
        SegmentationMode::Polygon
    } else {
        SegmentationMode::Rle
    };
    // build one at a time first so errors name the offending file
    for (path, input) in &inputs {
        build_annotations(&images, &categories, std::slice::from_ref(input), mode)
            .map_err(|e| data_err(path, e))?;
    }
    let masks: Vec<MaskInput> = inputs.into_iter().map(|(_, m)| m).collect();
    let doc = build_annotations(&images, &categories, &masks, mode)
        .map_err(|e| data_err(&args.masks, e))?;
    write_annotation_doc(&doc, &args.out).map_err(|e| data_err(&args.out, e))?;
    let _ = writeln!(
        out,
        "{}: {} images, {} annotations, {} categories",
        args.out.display(),
        doc.images.len(),
        doc.annotations.len(),
        doc.categories.len()
    );
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&args.iou) {
        return Err(CliError::Usage(format!(
            "--iou must lie in [0, 1], got {}",
            args.iou
        )));
    }
    let preds = read_annotation_doc(&args.pred).map_err(|e| data_err(&args.pred, e))?;
    let gt = read_annotation_doc(&args.gt).map_err(|e| data_err(&args.gt, e))?;
    let mode = match args.mode {
        ModeArg::Segm => EvalMode::Segm,
        ModeArg::Bbox => EvalMode::Bbox,
    };
    let result = evaluate(&preds, &gt, args.iou, mode)
        .map_err(|e| CliError::Data(format!("{} vs {}: {e}", args.pred.display(), args.gt.display())))?;
    let mut table = String::new();
    let _ = writeln!(table, "{:<8} {:<20} {:>6}", "class", "name", "AP");
    for (id, ap) in &result.per_class_ap {
        let name = gt
            .categories
            .iter()
            .find(|c| c.id == *id)
            .map_or("", |c| c.name.as_str());
        let _ = writeln!(table, "{id:<8} {name:<20} {ap:>6.4}");
    }
    let _ = writeln!(table, "mAP = {:.4}", result.map_value);
    let _ = write!(out, "{table}");
    if let Some(path) = &args.json_out {
        std::fs::write(path, result.to_json() + "\n").map_err(|e| data_err(path, e))?;
    }
    Ok(())
}

/// Parses `image_id,x1,y1,x2,y2` lines. Errors cite the 1-based line number.
pub fn parse_rois(text: &str) -> Result<Vec<(u64, Roi)>, String> {
    let mut out = Vec::new();
    for (line, fields) in csv_lines(text) {
        let [id, x1, y1, x2, y2] = fields[..] else {
            return Err(format!("line {line}: expected image_id,x1,y1,x2,y2"));
        };
        let id: u64 = id
            .parse()
            .map_err(|_| format!("line {line}: bad image id {id:?}"))?;
        let num = |s: &str| -> Result<f64, String> {
            s.parse::<f64>()
                .map_err(|_| format!("line {line}: bad coordinate {s:?}"))
        };
        let roi = Roi::new(num(x1)?, num(y1)?, num(x2)?, num(y2)?)
            .map_err(|e| format!("line {line}: {e}"))?;
        out.push((id, roi));
    }
    Ok(out)
}

pub fn cmd_roialign(args: &RoiAlignArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let features = read_score_map(&args.features).map_err(|e| data_err(&args.features, e))?;
    let features = FeatureMap::from(&features);
    let text = std::fs::read_to_string(&args.rois).map_err(|e| data_err(&args.rois, e))?;
    let rois = parse_rois(&text).map_err(|e| data_err(&args.rois, e))?;
    let spec = PoolSpec {
        out_h: args.output_size.0,
        out_w: args.output_size.1,
        samples_per_side: args.samples as usize,
        mode: match args.pool {
            PoolArg::Max => PoolMode::Max,
            PoolArg::Avg => PoolMode::Avg,
        },
    };
    create_dir(&args.out)?;
    for (k, (_, roi)) in rois.iter().enumerate() {
        let aligned = roi_align(&features, roi, &spec).map_err(|e| data_err(&args.features, e))?;
        let target = args.out.join(format!("roi{k}.mft"));
        let stored = aligned.to_score_map().map_err(|e| data_err(&target, e))?;
        write_tensor(&stored.into(), &target).map_err(|e| data_err(&target, e))?;
        let _ = writeln!(out, "{}", target.display());
        if args.compare_roipool {
            let pooled = roi_pool(&features, roi, &spec).map_err(|e| data_err(&args.features, e))?;
            let target = args.out.join(format!("roi{k}_roipool.mft"));
            let stored = pooled.to_score_map().map_err(|e| data_err(&target, e))?;
            write_tensor(&stored.into(), &target).map_err(|e| data_err(&target, e))?;
            let _ = writeln!(out, "{}", target.display());
        }
    }
    Ok(())
}
