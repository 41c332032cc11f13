//! Command implementations behind the `visprobe` binary.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use visprobe_core::adapters::{
    load_results, run_trials, Backend, HttpBackend, ModelEndpointConfig, PerfectOracle, ReplayBackend, RunOptions, TemplateOcr, TokenBucket,
};
use visprobe_core::analysis::{
    aggregate_curve, aggregate_heatmap, boundary_csv, boundary_cut_report, convert, curve_csv, heatmap_csv, quantile_slice, score_runs,
    slice_table_csv, svg, AnnotationRecord, ScoredRecord, SliceKey, SliceMode,
};
use visprobe_core::forge::{build_suite, parse_spec_document, read_manifest, write_suite, CellParams, SpecOverrides, SuiteKind, TrialRecord, MANIFEST_FILE};
use visprobe_core::patch::ProfileRegistry;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SCORED_FILE: &str = "scored.jsonl";
pub const REPORT_DIR: &str = "report";

#[derive(Debug, Parser)]
#[command(name = "visprobe", version, about = "Generate, run, and score visual-perception probe suites")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build every suite in a spec and write the manifest and images.
    Generate(GenerateArgs),
    /// Ask a backend every trial of a manifest.
    Run(RunArgs),
    /// Join results to the manifest and score each reply.
    Score(ScoreArgs),
    /// Quantile table of annotated VQA questions.
    Slice(SliceArgs),
    /// Curves, heatmaps, and boundary reports from scored results.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides every suite's profile.
    #[arg(long)]
    pub profile: Option<String>,
    /// Overrides every suite's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra profile definitions (JSON list).
    #[arg(long)]
    pub profiles_file: Option<PathBuf>,
    /// Write the manifest only.
    #[arg(long)]
    pub no_images: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Oracle,
    TemplateOcr,
    Http,
    Replay,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Suite directory holding the manifest; results are written here.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub backend: BackendKind,
    /// Endpoint settings (JSON); the flags below override it.
    #[arg(long)]
    pub endpoint_config: Option<PathBuf>,
    #[arg(long)]
    pub endpoint_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long)]
    pub auth_env: Option<String>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Requests per second across all workers.
    #[arg(long)]
    pub rate_limit: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    /// Replay log: written by `http`, read by `replay`.
    #[arg(long)]
    pub replay_log: Option<PathBuf>,
    /// Results file (default `<out>/results.jsonl`).
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Keep existing results and skip their trials.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnnotationFormat {
    /// Neutral JSONL, one annotation record per line.
    Neutral,
    /// GQA questions JSON; needs `--scene-graphs`.
    Gqa,
    /// TextVQA release JSON with OCR tokens.
    Textvqa,
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_enum, default_value = "neutral")]
    pub format: AnnotationFormat,
    #[arg(long)]
    pub scene_graphs: Option<PathBuf>,
    /// JSON object mapping question id to the model's prediction.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "relative-size")]
    pub key: KeyArg,
    #[arg(long, default_value_t = 5)]
    pub q: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Gqa,
    Textvqa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KeyArg {
    RelativeSize,
    DistractorCount,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// How a command failed; maps onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad input: spec, flags, or files.
    Validation(anyhow::Error),
    /// The command could not finish.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Validation(e) | Failure::Runtime(e) => e,
        }
    }
}

/// A finished command: complete, or done with some trials errored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    Partial(String),
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Complete => 0,
            Outcome::Partial(_) => 3,
        }
    }
}

trait Classify<T> {
    fn invalid(self) -> std::result::Result<T, Failure>;
    fn runtime(self) -> std::result::Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn invalid(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure::Validation(e.into()))
    }

    fn runtime(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

pub fn execute(cli: Cli) -> std::result::Result<Outcome, Failure> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Slice(a) => cmd_slice(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

pub fn cmd_generate(a: &GenerateArgs) -> std::result::Result<Outcome, Failure> {
    let mut registry = ProfileRegistry::builtin();
    if let Some(p) = &a.profiles_file {
        registry.load_file(p).with_context(|| format!("loading profiles from {}", p.display())).invalid()?;
    }
    let text = fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display())).invalid()?;
    let overrides = SpecOverrides { profile: a.profile.clone(), master_seed: a.seed };
    let specs = parse_spec_document(&text, &registry, &overrides).map_err(|e| anyhow!("{}: {e}", a.spec.display())).invalid()?;
    let mut records = Vec::new();
    for spec in &specs {
        records.extend(build_suite(spec).with_context(|| format!("building the {} suite", spec.suite_id())).invalid()?);
    }
    let manifest = a.out.join(MANIFEST_FILE);
    if manifest.exists() {
        let existing = read_manifest(&manifest).runtime()?;
        // same ids with different seeds or params still count as a different suite
        if by_id(&records) != by_id(&existing) {
            return Err(Failure::Validation(anyhow!("{} already holds a different suite; use an empty directory", a.out.display())));
        }
    }
    write_suite(&a.out, &records, !a.no_images).runtime()?;
    eprintln!("wrote {} trials to {}", records.len(), manifest.display());
    Ok(Outcome::Complete)
}

fn by_id(records: &[TrialRecord]) -> BTreeMap<&str, serde_json::Value> {
    records.iter().map(|r| (r.trial_id.as_str(), serde_json::to_value(r).expect("trial records serialise"))).collect()
}

fn endpoint_config(a: &RunArgs) -> Result<ModelEndpointConfig> {
    let mut cfg = match &a.endpoint_config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => ModelEndpointConfig::default(),
    };
    if let Some(u) = &a.endpoint_url {
        cfg.base_url = u.clone();
    }
    if let Some(m) = &a.model {
        cfg.model_name = m.clone();
    }
    if let Some(v) = &a.auth_env {
        cfg.auth_token_env = Some(v.clone());
    }
    if let Some(p) = a.parallelism {
        cfg.parallelism = p;
    }
    if let Some(r) = a.rate_limit {
        cfg.rate_limit = Some(r);
    }
    if let Some(r) = a.max_retries {
        cfg.max_retries = r;
    }
    if let Some(t) = a.timeout_secs {
        cfg.timeout_secs = t;
    }
    if let Some(l) = &a.replay_log {
        cfg.replay_log = Some(l.clone());
    }
    cfg.validate().map_err(|e| anyhow!(e))?;
    Ok(cfg)
}

fn backend(a: &RunArgs) -> Result<Box<dyn Backend>> {
    Ok(match a.backend {
        BackendKind::Oracle => Box::new(PerfectOracle),
        BackendKind::TemplateOcr => Box::new(TemplateOcr),
        BackendKind::Http => {
            let cfg = endpoint_config(a)?;
            let limiter = cfg.rate_limit.and_then(|r| TokenBucket::new(r, 1)).map(Arc::new);
            let mut b = HttpBackend::new(cfg).map_err(|e| anyhow!(e))?;
            if let Some(l) = limiter {
                b = b.with_limiter(l);
            }
            Box::new(b)
        }
        BackendKind::Replay => {
            let log = a.replay_log.as_ref().ok_or_else(|| anyhow!("--backend replay needs --replay-log"))?;
            Box::new(ReplayBackend::load(log).with_context(|| format!("loading {}", log.display()))?)
        }
    })
}

pub fn cmd_run(a: &RunArgs) -> std::result::Result<Outcome, Failure> {
    if a.parallelism == Some(0) {
        return Err(Failure::Validation(anyhow!("--parallelism must be at least 1")));
    }
    if let Some(r) = a.rate_limit {
        if !(r.is_finite() && r > 0.0) {
            return Err(Failure::Validation(anyhow!("--rate-limit must be positive")));
        }
    }
    let records = read_manifest(&a.out.join(MANIFEST_FILE)).invalid()?;
    let backend = backend(a).invalid()?;
    let results = a.results.clone().unwrap_or_else(|| a.out.join(RESULTS_FILE));
    let parallelism = a.parallelism.unwrap_or(if a.backend == BackendKind::Http { ModelEndpointConfig::default().parallelism } else { 1 });
    let opts = RunOptions { results: results.clone(), image_root: Some(a.out.clone()), parallelism, resume: a.resume };
    let s = run_trials(&records, backend.as_ref(), &opts).runtime()?;
    eprintln!("{}: {} asked, {} skipped, {} errored -> {}", backend.id(), s.attempted, s.skipped, s.errored, results.display());
    if s.errored > 0 {
        return Ok(Outcome::Partial(format!("{} of {} trials errored", s.errored, s.attempted)));
    }
    Ok(Outcome::Complete)
}

pub fn cmd_score(a: &ScoreArgs) -> std::result::Result<Outcome, Failure> {
    let trials = read_manifest(&a.out.join(MANIFEST_FILE)).invalid()?;
    let results = a.results.clone().unwrap_or_else(|| a.out.join(RESULTS_FILE));
    let runs = load_results(&results).invalid()?;
    let outcome = score_runs(&trials, &runs);
    let mut text = String::new();
    for r in &outcome.scored {
        text.push_str(&serde_json::to_string(r).expect("scored records serialise"));
        text.push('\n');
    }
    atomic_write(&a.out.join(SCORED_FILE), text.as_bytes()).runtime()?;
    let errored = outcome.scored.iter().filter(|r| r.errored()).count();
    let mut problems = Vec::new();
    for (what, ids) in [("results for unknown trials", &outcome.unknown_results), ("trials without results", &outcome.unanswered), ("trials answered twice", &outcome.duplicate_results)] {
        if !ids.is_empty() {
            eprintln!("{} {what}, e.g. {}", ids.len(), ids[0]);
            problems.push(format!("{} {what}", ids.len()));
        }
    }
    if errored > 0 {
        problems.push(format!("{errored} errored trials"));
    }
    let mean = outcome.scored.iter().map(|r| r.score.gpm).sum::<f64>() / outcome.scored.len().max(1) as f64;
    eprintln!("scored {} trials, mean GPM {mean:.4}", outcome.scored.len());
    if problems.is_empty() {
        Ok(Outcome::Complete)
    } else {
        Ok(Outcome::Partial(problems.join("; ")))
    }
}

fn read_predictions(path: Option<&Path>) -> Result<HashMap<String, String>> {
    match path {
        None => Ok(HashMap::new()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("{}: expected an object of question id to prediction", p.display()))
        }
    }
}

pub fn load_annotations(a: &SliceArgs) -> Result<Vec<AnnotationRecord>> {
    let text = fs::read_to_string(&a.annotations).with_context(|| format!("reading {}", a.annotations.display()))?;
    let preds = read_predictions(a.predictions.as_deref())?;
    let mut recs = match a.format {
        AnnotationFormat::Neutral => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", a.annotations.display(), i + 1)))
            .collect::<Result<Vec<AnnotationRecord>>>()?,
        AnnotationFormat::Gqa => {
            let sg = a.scene_graphs.as_ref().ok_or_else(|| anyhow!("--format gqa needs --scene-graphs"))?;
            let scenes = fs::read_to_string(sg).with_context(|| format!("reading {}", sg.display()))?;
            convert::gqa_records(&text, &scenes, &preds)?
        }
        AnnotationFormat::Textvqa => convert::textvqa_records(&text, &preds)?,
    };
    if a.format == AnnotationFormat::Neutral {
        for r in &mut recs {
            if let Some(p) = preds.get(&r.question_id) {
                r.prediction = p.clone();
            }
        }
    }
    Ok(recs)
}

pub fn cmd_slice(a: &SliceArgs) -> std::result::Result<Outcome, Failure> {
    let recs = load_annotations(a).invalid()?;
    let mode = match a.mode {
        ModeArg::Gqa => SliceMode::Gqa,
        ModeArg::Textvqa => SliceMode::TextVqa,
    };
    let (key, name) = match a.key {
        KeyArg::RelativeSize => (SliceKey::RelativeSize, "relative_size"),
        KeyArg::DistractorCount => (SliceKey::DistractorCount, "distractor_count"),
    };
    let buckets = quantile_slice(&recs, mode, key, a.q).invalid()?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display())).runtime()?;
    let path = a.out.join(format!("slice_{name}.csv"));
    atomic_write(&path, slice_table_csv(&buckets).as_bytes()).runtime()?;
    eprintln!("{} questions in {} buckets -> {}", recs.len(), buckets.len(), path.display());
    Ok(Outcome::Complete)
}

pub fn load_scored(path: &Path) -> Result<Vec<ScoredRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

/// Every report artifact for `scored`, keyed by file name. Suites are told
/// apart by kind and canvas size, so one file set covers one sweep geometry.
pub fn report_files(scored: &[ScoredRecord], seed: u64) -> Result<BTreeMap<String, String>> {
    let mut groups: BTreeMap<(SuiteKind, (u32, u32)), Vec<ScoredRecord>> = BTreeMap::new();
    for r in scored {
        groups.entry((r.suite, r.params.canvas)).or_default().push(r.clone());
    }
    let mut files = BTreeMap::new();
    for ((kind, (w, h)), recs) in groups {
        let stem = format!("{kind}_{w}x{h}");
        let curve = aggregate_curve(&recs, seed);
        files.insert(format!("{stem}_curve.csv"), curve_csv(&curve));
        files.insert(format!("{stem}_curve.svg"), svg::curve_svg(&curve, &format!("{kind} ({w}x{h}): mean GPM")));
        match kind {
            SuiteKind::Location => {
                let cells = aggregate_heatmap(&recs)?;
                files.insert(format!("{stem}_heatmap.csv"), heatmap_csv(&cells));
                let grid = recs.iter().find_map(|r| match r.params.cell {
                    CellParams::Location { grid, .. } => Some(grid),
                    _ => None,
                });
                let (rows, cols) = grid.unwrap_or((1, 1));
                let mut variants: Vec<u32> = cells.iter().map(|c| c.distractors).collect();
                variants.dedup();
                for v in variants {
                    let sub: Vec<_> = cells.iter().filter(|c| c.distractors == v).cloned().collect();
                    files.insert(format!("{stem}_heatmap_d{v}.svg"), svg::heatmap_svg(&sub, rows, cols, &format!("location, {v} distractors")));
                }
            }
            SuiteKind::BoundaryCut => {
                files.insert(format!("{stem}_report.csv"), boundary_csv(&boundary_cut_report(&recs)));
            }
            _ => {}
        }
    }
    Ok(files)
}

pub fn cmd_report(a: &ReportArgs) -> std::result::Result<Outcome, Failure> {
    let scored = load_scored(&a.out.join(SCORED_FILE)).invalid()?;
    if scored.is_empty() {
        return Err(Failure::Validation(anyhow!("{} has no scored trials", a.out.join(SCORED_FILE).display())));
    }
    let files = report_files(&scored, a.seed).invalid()?;
    let dir = a.out.join(REPORT_DIR);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())).runtime()?;
    for (name, body) in &files {
        atomic_write(&dir.join(name), body.as_bytes()).runtime()?;
    }
    eprintln!("wrote {} report files to {}", files.len(), dir.display());
    Ok(Outcome::Complete)
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| anyhow!("{} is not a file path", path.display()))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))
}
