//! Command-line front end. [`run`] never exits the process; it returns the
//! status the binary should exit with: 0 on success, 1 for bad input or
//! usage, 2 when the machine itself fails.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{histogram, run_pipeline, FilterConfig, ValidityReport};
use crate::metrics::{diversity, fidelity, EmbeddingSpace, MetricValue};
use crate::planner::{load_plan, save_plan, select_clustered_with, select_rarest, ClusteredOptions, Strategy};
use crate::ranking::{rank_comparisons, rank_ratings, BtOptions, NeitherPolicy, TiePolicy};
use crate::report::{ablation_runs, build_report, evaluate_runs, load_report_config, FullReport, ReportFormat};
use crate::sampler::{render_generation_prompt, sample_batch, SampleMode};
use crate::store::{load_comparisons, load_image_set, load_ratings, load_runs, load_vocabulary, read_json, write_json};

#[derive(Debug, Parser)]
#[command(name = "stylekit", version, about = "Token planning, identity sampling, metrics, filtering and reports for style-consistent character generation")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, env = "STYLEKIT_SEED")]
    seed: Option<u64>,
    /// Base directory for relative paths.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Choose the shared and per-character tokens.
    Plan(PlanArgs),
    /// Draw generation identities.
    Sample(SampleArgs),
    /// Fidelity and Diversity of a generated set.
    Metrics(MetricsArgs),
    /// Run the validity filter.
    Filter(FilterArgs),
    /// Rank methods from human judgments.
    Rank(RankArgs),
    /// Filter, measure and tabulate every run.
    Report(ReportArgs),
    /// Report restricted to the four ablation variants.
    Ablate(ReportArgs),
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// Number of characters.
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    #[arg(long, default_value = crate::planner::DEFAULT_CLASS)]
    class: String,
    #[arg(long, default_value_t = crate::planner::DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(long, default_value_t = crate::planner::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Cluster only this many of the rarest candidate tokens.
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the clustering diagnostics.
    #[arg(long)]
    clustering_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Rarest,
    Clustered,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Token,
    Univar,
    Multivar,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Defaults to the vocabulary recorded in the plan.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    count: u64,
    /// First sample index; lets batches be split without changing draws.
    #[arg(long, default_value_t = 0)]
    start: u64,
    /// Fit the Gaussian on every token, assigned ones included.
    #[arg(long)]
    stats_include_assigned: bool,
    /// JSON lines output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write one prompt descriptor per identity.
    #[arg(long)]
    prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SpaceArg {
    Style,
    Clip,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Embedding space for both metrics.
    #[arg(long, value_enum, default_value = "style")]
    space: SpaceArg,
    /// Keep only images marked valid in this filter report.
    #[arg(long)]
    valid_from: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    copy_threshold: f64,
    #[arg(long)]
    defective_threshold: f64,
    #[arg(long, default_value_t = crate::filter::DEFAULT_DUPLICATE_THRESHOLD)]
    duplicate_threshold: f64,
    #[arg(long)]
    subject_counts: Option<PathBuf>,
    #[arg(long)]
    manual_overrides: Option<PathBuf>,
    /// JSON report.
    #[arg(long)]
    out: PathBuf,
    /// Per-image CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Print score histograms with this many bins.
    #[arg(long)]
    histogram: Option<usize>,
}

#[derive(Debug, Args)]
#[group(id = "input", required = true, multiple = false)]
struct RankInput {
    #[arg(long, group = "input")]
    comparisons: Option<PathBuf>,
    #[arg(long, group = "input")]
    ratings: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TieArg {
    HalfWin,
    Drop,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NeitherArg {
    Drop,
    AsTie,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Md,
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[command(flatten)]
    input: RankInput,
    #[arg(long, value_enum, default_value = "half-win")]
    tie_policy: TieArg,
    #[arg(long, value_enum, default_value = "drop")]
    neither_policy: NeitherArg,
    #[arg(long, default_value_t = crate::ranking::DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, default_value_t = crate::ranking::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, value_enum, default_value = "md")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    runs: PathBuf,
    /// Per-dataset references and thresholds.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "md")]
    format: FormatArg,
    /// Overrides the configured number of decimals.
    #[arg(long)]
    decimals: Option<usize>,
    /// Write files here instead of printing.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write each run's filter CSV under `<out-dir>/filter/`.
    #[arg(long, requires = "out_dir")]
    filter_reports: bool,
}

struct Ctx<'a> {
    seed: Option<u64>,
    workdir: Option<PathBuf>,
    out: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn path(&self, p: &Path) -> PathBuf {
        match &self.workdir {
            Some(w) if p.is_relative() => w.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn print(&mut self, text: &str) -> Result<()> {
        self.out
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(rendered.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(rendered.as_bytes());
                    1
                }
            };
        }
    };
    let mut ctx = Ctx {
        seed: cli.seed,
        workdir: cli.workdir,
        out,
    };
    match dispatch(cli.command, &mut ctx) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, ctx: &mut Ctx) -> Result<()> {
    match cmd {
        Command::Plan(a) => plan(a, ctx),
        Command::Sample(a) => sample(a, ctx),
        Command::Metrics(a) => metrics(a, ctx),
        Command::Filter(a) => filter(a, ctx),
        Command::Rank(a) => rank(a, ctx),
        Command::Report(a) => report(a, ctx, false),
        Command::Ablate(a) => report(a, ctx, true),
    }
}

fn plan(a: PlanArgs, ctx: &mut Ctx) -> Result<()> {
    let vocab_path = ctx.path(&a.vocab);
    let vocab = load_vocabulary(&vocab_path)?;
    let (mut plan, clustering) = match a.strategy {
        StrategyArg::Rarest => (select_rarest(&vocab, a.n)?, None),
        StrategyArg::Clustered => {
            let opts = ClusteredOptions {
                seed: ctx.seed(),
                restarts: a.restarts,
                max_iter: a.max_iter,
                pool_size: a.pool_size,
            };
            select_clustered_with(&vocab, a.n, opts)?
        }
    };
    plan.class_descriptor = a.class;
    plan.seed = ctx.seed();
    plan.vocab = Some(absolute(&vocab_path).to_string_lossy().into_owned());
    plan.validate()?;
    save_plan(&plan, ctx.path(&a.out))?;
    if let Some(p) = a.clustering_out {
        let Some(c) = clustering else {
            return Err(Error::Usage("--clustering-out needs --strategy clustered".into()));
        };
        write_json(&ctx.path(&p), &c)?;
    }
    let strategy = match plan.strategy {
        Strategy::Rarest => "rarest",
        Strategy::Clustered => "clustered",
    };
    ctx.print(&format!(
        "planned {} characters ({strategy}): shared {}\n",
        plan.specific_ids.len(),
        plan.shared_id
    ))
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn sample(a: SampleArgs, ctx: &mut Ctx) -> Result<()> {
    let plan_path = ctx.path(&a.plan);
    let plan = load_plan(&plan_path)?;
    let vocab_path = match (&a.vocab, &plan.vocab) {
        (Some(v), _) => ctx.path(v),
        (None, Some(v)) => crate::store::resolve(&plan_path, v),
        (None, None) => return Err(Error::Usage("the plan records no vocabulary; pass --vocab".into())),
    };
    let vocab = load_vocabulary(vocab_path)?;
    let mode = match a.mode {
        ModeArg::Token => SampleMode::Token,
        ModeArg::Univar => SampleMode::Univar,
        ModeArg::Multivar => SampleMode::Multivar,
    };
    let assigned = plan.assigned_tokens();
    let exclude = if a.stats_include_assigned && mode != SampleMode::Token {
        HashSet::new()
    } else {
        assigned
    };
    let seed = ctx.seed.unwrap_or(plan.seed);
    let batch = sample_batch(&vocab, &exclude, mode, seed, a.start, a.count)?;
    let mut lines = String::new();
    for p in &batch {
        lines.push_str(&serde_json::to_string(p).expect("payload serializes"));
        lines.push('\n');
    }
    if let Some(path) = &a.prompts {
        let mut prompts = String::new();
        for p in &batch {
            let d = render_generation_prompt(p, &plan.shared_id)?;
            prompts.push_str(&serde_json::to_string(&d).expect("descriptor serializes"));
            prompts.push('\n');
        }
        write_text(&ctx.path(path), &prompts)?;
    }
    match &a.out {
        Some(path) => {
            write_text(&ctx.path(path), &lines)?;
            ctx.print(&format!("wrote {} {mode} identities\n", batch.len()))
        }
        None => ctx.print(&lines),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct MetricsOutput {
    fidelity: MetricValue,
    diversity: MetricValue,
}

fn metrics(a: MetricsArgs, ctx: &mut Ctx) -> Result<()> {
    let gen = load_image_set(ctx.path(&a.generated))?;
    let refs = load_image_set(ctx.path(&a.reference))?;
    let (space, g, r) = match a.space {
        SpaceArg::Style => (EmbeddingSpace::StyleAdapted, gen.style()?, refs.style()?),
        SpaceArg::Clip => (EmbeddingSpace::ClipIdentity, gen.clip()?, refs.clip()?),
    };
    let g = match &a.valid_from {
        Some(p) => {
            let report: ValidityReport = read_json(&ctx.path(p))?;
            if report.image_ids != gen.image_ids {
                return Err(Error::InvalidArgument("filter report lists different images".into()));
            }
            let valid = report.valid_indices();
            if valid.is_empty() {
                return Err(Error::EmptySet);
            }
            g.select_rows(&valid)?
        }
        None => g.clone(),
    };
    let out = MetricsOutput {
        fidelity: fidelity(&g, r, space)?,
        diversity: diversity(&g, space),
    };
    emit_json(ctx, a.out.as_deref(), &out)
}

fn emit_json<T: Serialize>(ctx: &mut Ctx, out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(&ctx.path(p), value),
        None => {
            let text = serde_json::to_string_pretty(value).expect("serializable output") + "\n";
            ctx.print(&text)
        }
    }
}

fn filter(a: FilterArgs, ctx: &mut Ctx) -> Result<()> {
    let gen = load_image_set(ctx.path(&a.generated))?;
    let refs = load_image_set(ctx.path(&a.reference))?;
    let config = FilterConfig {
        copy_threshold: a.copy_threshold,
        defective_threshold: a.defective_threshold,
        duplicate_threshold: a.duplicate_threshold,
        subject_counts_path: a.subject_counts.map(|p| ctx.path(&p)),
        manual_overrides_path: a.manual_overrides.map(|p| ctx.path(&p)),
    };
    let report = run_pipeline(&gen, &refs, &config)?;
    write_json(&ctx.path(&a.out), &report)?;
    if let Some(p) = &a.csv {
        report.write_csv(&ctx.path(p))?;
    }
    let c = report.counts;
    let mut text = format!(
        "{} images: {} valid, {} copy, {} defective, {} multiple subjects, {} duplicate\n",
        c.total, c.valid, c.copy, c.defective, c.multiple_subjects, c.duplicate
    );
    if let Some(bins) = a.histogram {
        let near: Vec<f64> = report.scores.iter().map(|s| s.nearest_ref_sim).collect();
        let fid: Vec<f64> = report.scores.iter().map(|s| s.per_image_fidelity).collect();
        for (name, values) in [("nearest_ref_sim", near), ("per_image_fidelity", fid)] {
            text.push_str(&format!("\n{name}\n"));
            for b in histogram(&values, bins) {
                text.push_str(&format!("  [{:.4}, {:.4}] {:>6} {}\n", b.lo, b.hi, b.count, "#".repeat(b.count.min(60))));
            }
        }
    }
    ctx.print(&text)
}

fn rank(a: RankArgs, ctx: &mut Ctx) -> Result<()> {
    let report = match (&a.input.comparisons, &a.input.ratings) {
        (Some(p), _) => {
            let opts = BtOptions {
                tie_policy: match a.tie_policy {
                    TieArg::HalfWin => TiePolicy::HalfWin,
                    TieArg::Drop => TiePolicy::Drop,
                },
                neither_policy: match a.neither_policy {
                    NeitherArg::Drop => NeitherPolicy::Drop,
                    NeitherArg::AsTie => NeitherPolicy::AsTie,
                },
                max_iter: a.max_iter,
                tol: a.tol,
                initial: None,
            };
            rank_comparisons(&load_comparisons(ctx.path(p))?, &opts)?
        }
        (None, Some(p)) => rank_ratings(&load_ratings(ctx.path(p))?)?,
        (None, None) => unreachable!("clap requires one input"),
    };
    match a.format {
        FormatArg::Json => emit_json(ctx, a.out.as_deref(), &report),
        FormatArg::Md => emit_text(ctx, a.out.as_deref(), &report.to_markdown()),
        FormatArg::Csv => Err(Error::Usage("rank supports --format md or json".into())),
    }
}

fn emit_text(ctx: &mut Ctx, out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(&ctx.path(p), text),
        None => ctx.print(text),
    }
}

fn report(a: ReportArgs, ctx: &mut Ctx, ablation: bool) -> Result<()> {
    let mut runs = load_runs(ctx.path(&a.runs))?;
    if ablation {
        runs = ablation_runs(&runs)?;
    }
    if runs.is_empty() {
        return Err(Error::EmptySet);
    }
    let config = load_report_config(ctx.path(&a.config))?;
    let evaluated = evaluate_runs(&runs, &config)?;
    let results: Vec<_> = evaluated.iter().map(|(r, _)| r.clone()).collect();
    let full = build_report(&results, a.decimals.unwrap_or(config.decimals))?;
    let title = if ablation { "# Ablation report\n\n" } else { "# Report\n\n" };
    let format = match a.format {
        FormatArg::Md => ReportFormat::Markdown,
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
    };
    let files = render_report(&full, format, title);
    match &a.out_dir {
        Some(dir) => {
            let dir = ctx.path(dir);
            for (name, text) in &files {
                write_text(&dir.join(name), text)?;
            }
            if a.filter_reports {
                for (r, rep) in &evaluated {
                    let name = format!(
                        "{}_{}_{}_{}.csv",
                        r.run.dataset_id, r.run.training_method, r.run.generation_method, r.run.copy_index
                    );
                    write_text(&dir.join("filter").join(name), &rep.to_csv_string())?;
                }
            }
            let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
            ctx.print(&format!("wrote {} for {} runs\n", names.join(", "), runs.len()))
        }
        None => {
            let text: Vec<&str> = files.iter().map(|(_, t)| t.as_str()).collect();
            ctx.print(&text.join("\n"))
        }
    }
}

/// File name and content of every output for `format`.
fn render_report(full: &FullReport, format: ReportFormat, title: &str) -> Vec<(String, String)> {
    match format {
        ReportFormat::Markdown => vec![("report.md".into(), format!("{title}{}", full.to_markdown()))],
        ReportFormat::Csv => vec![
            ("breakdown.csv".into(), full.breakdown.to_csv()),
            ("metrics.csv".into(), full.metrics.to_csv()),
        ],
        ReportFormat::Json => vec![(
            "report.json".into(),
            serde_json::to_string_pretty(full).expect("serializable report") + "\n",
        )],
    }
}
