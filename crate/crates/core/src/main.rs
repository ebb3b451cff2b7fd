use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use teleoscale::config::Config;
use teleoscale::experiment::{datasets_from_rows, leave_one_out_prior};
use teleoscale::metrics::{self, Cell, CellTable, MetricKind, MetricNormalization, MetricSet, RawMetrics, SummaryRow};
use teleoscale::model::{ModelDocument, NigParams, PriorKind};
use teleoscale::optimizer::{curve_csv, delay_sweep, model_curve, table_curve, Criterion, ScaleGrid};
use teleoscale::session::server::SessionServer;
use teleoscale::session::store::{find_logs, write_atomic};
use teleoscale::session::{run_headless_experiment, SessionManager};
use teleoscale::stats;
use teleoscale::trial_log;
use teleoscale::TrialConfig;

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

/// Motion-scaling experiments for delayed teleoperation.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort and write logs, models, curves and statistics.
    Run(RunArgs),
    /// Serve live sessions over TCP.
    Serve(ServeArgs),
    /// Fit per-operator models from trial logs.
    Fit(FitArgs),
    /// Optimal-scale curve of a saved model, or of measured cell means.
    Optimize(OptimizeArgs),
    /// Paired t-tests and two-way ANOVA over a summary table.
    Stats(StatsArgs),
    /// Heatmaps from a summary table and curves from saved models.
    Export(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    operators: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    weight: Option<f64>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    bind: Option<String>,
    /// Directory that receives session directories.
    #[arg(long)]
    root: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Directory searched recursively for `*.log` files.
    #[arg(long)]
    logs: PathBuf,
    #[arg(long, default_value = "fit")]
    out: PathBuf,
    /// Metrics to model; defaults to the configured list.
    #[arg(long, value_delimiter = ',')]
    metric: Vec<MetricKind>,
    /// Use the noninformative prior for every operator.
    #[arg(long)]
    flat: bool,
    /// Include practice trials.
    #[arg(long)]
    practice: bool,
}

#[derive(Args)]
struct GridArgs {
    /// Search the experiment's six scales instead of the fine grid.
    #[arg(long)]
    coarse: bool,
    /// Pessimistic criterion at this predictive quantile.
    #[arg(long)]
    quantile: Option<f64>,
    #[arg(long)]
    max_delay: Option<f64>,
    #[arg(long)]
    delay_step: Option<f64>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long, required_unless_present = "summary", conflicts_with = "summary")]
    model: Option<PathBuf>,
    /// Summary table; picks the best measured scale per delay instead.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Metric to optimize with --summary.
    #[arg(long, default_value = "weighted_performance")]
    metric: MetricKind,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    summary: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    metric: Vec<MetricKind>,
    #[arg(long)]
    reference_scale: Option<f64>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Directory searched recursively for model documents.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long, default_value = "export")]
    out: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn curve_settings(cfg: &Config, g: &GridArgs) -> (ScaleGrid, Criterion, Vec<f64>) {
    let a = &cfg.analysis;
    let grid = if g.coarse { ScaleGrid::experiment() } else { a.grid() };
    let criterion = g.quantile.map_or(a.criterion(), Criterion::Quantile);
    let delays = delay_sweep(g.max_delay.unwrap_or(a.max_delay_s), g.delay_step.unwrap_or(a.delay_step_s));
    (grid, criterion, delays)
}

fn run(cfg: &Config, args: RunArgs) -> Result<()> {
    let mut h = cfg.headless()?;
    if let Some(n) = args.operators {
        h.cohort.size = n;
    }
    if let Some(s) = args.seed {
        h.cohort.seed = s;
    }
    if let Some(w) = args.weight {
        h.weight = w;
    }
    let report = run_headless_experiment(&h, &args.out)?;
    println!(
        "{} operators, {} trials, {} notices -> {}",
        report.records.len(),
        report.trial_count(),
        report.notices.len(),
        args.out.display()
    );
    Ok(())
}

fn serve(cfg: &Config, args: ServeArgs) -> Result<()> {
    let s = &cfg.server;
    let root = args.root.unwrap_or_else(|| s.root.clone());
    let manager = Arc::new(SessionManager::new(root, s.weight, s.normalization()));
    let server = SessionServer::bind(args.bind.as_deref().unwrap_or(&s.bind), manager)?;
    println!("listening on {}", server.local_addr()?);
    server.run()?;
    Ok(())
}

/// Reads every log below `dir` into summary rows, one group per operator,
/// with weighted performance normalized over each operator's own trials.
fn rows_from_logs(
    dir: &Path,
    weight: f64,
    practice: bool,
) -> Result<(Vec<SummaryRow>, BTreeMap<String, MetricNormalization>)> {
    let mut by_operator: BTreeMap<String, Vec<(TrialConfig, RawMetrics)>> = BTreeMap::new();
    for path in find_logs(dir)? {
        let (header, log) = trial_log::from_str(&fs::read_to_string(&path)?)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        if header.practice && !practice {
            continue;
        }
        let operator = header.operator.clone().unwrap_or_else(|| {
            path.parent()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        let raw = RawMetrics::from_log(&log).map_err(|e| format!("{}: {e}", path.display()))?;
        by_operator.entry(operator).or_default().push((log.config, raw));
    }
    let mut rows = Vec::new();
    let mut norms_by_operator = BTreeMap::new();
    for (user, trials) in by_operator {
        let norms = MetricNormalization::from_reference(trials.iter().map(|(_, r)| r))?;
        norms_by_operator.insert(user.clone(), norms);
        for (cfg, raw) in trials {
            rows.push(SummaryRow {
                user: user.clone(),
                cell: Cell::of(&cfg),
                metrics: MetricSet::new(raw, weight, &norms)?,
            });
        }
    }
    Ok((rows, norms_by_operator))
}

fn fit(cfg: &Config, args: FitArgs) -> Result<()> {
    let h = cfg.headless()?;
    let (rows, norms) = rows_from_logs(&args.logs, h.weight, args.practice)?;
    if rows.is_empty() {
        return Err(format!("no trial logs under {}", args.logs.display()).into());
    }
    write_text(&args.out.join("summary.csv"), &metrics::summary_csv(&rows))?;
    let kinds = if args.metric.is_empty() { h.model_metrics.clone() } else { args.metric };
    for kind in kinds {
        let data = datasets_from_rows(&rows, kind, h.transform);
        for (i, d) in data.iter().enumerate() {
            let (prior, prior_kind) = if args.flat || data.len() < 2 {
                if !args.flat {
                    log::warn!("{kind} {}: single operator, using the noninformative prior", d.operator);
                }
                (NigParams::noninformative(), PriorKind::Noninformative)
            } else {
                (leave_one_out_prior(&data, i, &h.prior_search)?.prior, PriorKind::Informative)
            };
            match ModelDocument::fit(d, prior, prior_kind) {
                Ok(mut doc) => {
                    if kind == MetricKind::WeightedPerformance {
                        doc.normalization = norms.get(&d.operator).copied();
                    }
                    write_text(
                        &args.out.join("models").join(kind.name()).join(format!("{}.json", d.operator)),
                        &doc.to_json(),
                    )?
                }
                Err(e) => log::warn!("{kind} {}: not fitted ({e})", d.operator),
            }
        }
    }
    Ok(())
}

fn optimize(cfg: &Config, args: OptimizeArgs) -> Result<()> {
    let Some(model) = &args.model else {
        let table = summary_table(args.summary.as_deref().expect("clap requires one source"))?;
        return emit(args.out.as_deref(), &curve_csv(&table_curve(&table, args.metric)));
    };
    let doc = ModelDocument::from_json(&fs::read_to_string(model)?)?;
    let (grid, criterion, delays) = curve_settings(cfg, &args.grid);
    let curve = model_curve(&doc, &delays, &grid, criterion)?;
    emit(args.out.as_deref(), &curve_csv(&curve))
}

fn stats_cmd(cfg: &Config, args: StatsArgs) -> Result<()> {
    let rows = metrics::parse_summary(&fs::read_to_string(&args.summary)?)?;
    let kinds = if args.metric.is_empty() { MetricKind::ALL.to_vec() } else { args.metric };
    let reference = args.reference_scale.unwrap_or(cfg.analysis.reference_scale);
    let report = stats::battery(&rows, &kinds, reference);
    emit(args.out.as_deref(), &stats::report_csv(&report))
}

fn summary_table(path: &Path) -> Result<CellTable> {
    let rows = metrics::parse_summary(&fs::read_to_string(path)?)?;
    let configs: Vec<TrialConfig> = rows
        .iter()
        .map(|r| TrialConfig::default().with_cell(r.cell.scale, r.cell.delay_s))
        .collect();
    Ok(metrics::summarize(configs.iter().zip(rows.iter().map(|r| &r.metrics)))?)
}

fn export(cfg: &Config, args: ExportArgs) -> Result<()> {
    if args.summary.is_none() && args.models.is_none() {
        return Err("export needs --summary and/or --models".into());
    }
    if let Some(path) = &args.summary {
        let table = summary_table(path)?;
        for kind in MetricKind::ALL {
            write_text(&args.out.join("heatmaps").join(format!("{}.csv", kind.name())), &table.heatmap_csv(kind))?;
        }
    }
    if let Some(dir) = &args.models {
        let (grid, criterion, delays) = curve_settings(cfg, &args.grid);
        let mut paths = Vec::new();
        let mut stack = vec![dir.clone()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d)? {
                let p = e?.path();
                if p.is_dir() {
                    stack.push(p);
                } else if p.extension().is_some_and(|x| x == "json") {
                    paths.push(p);
                }
            }
        }
        paths.sort();
        for p in paths {
            let doc = ModelDocument::from_json(&fs::read_to_string(&p)?).map_err(|e| format!("{}: {e}", p.display()))?;
            let rel = p.strip_prefix(dir)?.with_extension("csv");
            let curve = model_curve(&doc, &delays, &grid, criterion)?;
            write_text(&args.out.join("curves").join(rel), &curve_csv(&curve))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = (|| -> Result<()> {
        let cfg = match &cli.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        match cli.command {
            Command::Run(a) => run(&cfg, a),
            Command::Serve(a) => serve(&cfg, a),
            Command::Fit(a) => fit(&cfg, a),
            Command::Optimize(a) => optimize(&cfg, a),
            Command::Stats(a) => stats_cmd(&cfg, a),
            Command::Export(a) => export(&cfg, a),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
