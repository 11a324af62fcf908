//! The `pt` command line: `synth`, `run` and `compare`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{clean_and_return, read_csv, synth_generate, write_csv, ReturnTable, SynthConfig};
use crate::error::{Error, Result};
use crate::metrics::{
    compute_metrics, rolling_sharpe, run_backtest, write_series_csv, EquityCurve, MetricsReport, METRIC_NAMES,
};
use crate::model::AllocationNetwork;
use crate::objective::CostModel;
use crate::training::{
    walk_forward, write_trials_csv, HyperparamSpace, Strategy, WalkForwardConfig, WalkForwardResult,
};

/// Package version plus `git describe` output when built from a checkout.
pub const VERSION: &str = env!("PT_BUILD_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pt", version = VERSION, about = "Attention-based portfolio allocation and walk-forward backtesting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic price file.
    Synth(SynthArgs),
    /// Walk-forward backtest of one strategy.
    Run(RunArgs),
    /// Walk-forward backtests of several strategies side by side.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub assets: u64,
    /// Number of trading days (price rows).
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub days: u64,
    #[arg(long, env = "PT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Coefficient on each asset's trailing mean return.
    #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
    pub momentum: f64,
    #[arg(long, default_value = "2014-01-01")]
    pub start: NaiveDate,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone, Serialize)]
pub struct BacktestArgs {
    /// Price CSV: `date,<TICKER>...`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, env = "PT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Proportional cost per unit of turnover.
    #[arg(long, default_value_t = 0.0002)]
    pub cost: f64,
    /// First calendar year traded out of sample; later complete years follow.
    #[arg(long)]
    pub first_test_year: i32,
    /// Fixes the number of periodic time-encoding components.
    #[arg(long)]
    pub k: Option<usize>,
    /// Days per encoder and decoder window.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(2..))]
    pub window: u64,
    /// Encoder and decoder layers of the transformer.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub layers: u64,
    /// TOML hyperparameter space.
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// Search budget per split (overrides the space file).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Parallel search trials.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    /// Maximum training epochs per trial.
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub patience: u64,
    /// Search only at the first split and reuse the winning hyperparameters.
    #[arg(long)]
    pub search_once: bool,
    /// Mean-variance estimation window in days.
    #[arg(long, default_value_t = 50)]
    pub mv_lookback: usize,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
    /// Output directory for metrics, curves, weights and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// One of pt, lstm, mlp, mv, equal_weight.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Strategy,
    #[command(flatten)]
    pub common: BacktestArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated strategies, at least two.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy, num_args = 1.., required = true)]
    pub strategies: Vec<Strategy>,
    #[command(flatten)]
    pub common: BacktestArgs,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| match e {
        Error::Config(m) => m,
        other => other.to_string(),
    })
}

/// Exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_USAGE,
        Error::Numeric(_) | Error::Shape { .. } | Error::Contract(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are printed to stderr as one line.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Run(a) => cmd_run(a).map(|m| {
            println!("{}", m.to_json().unwrap_or_default());
        }),
        Command::Compare(a) => cmd_compare(a).map(|t| print!("{}", t.render_text())),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_assets: args.assets as usize,
        n_days: args.days as usize,
        seed: args.seed,
        start_date: args.start,
        momentum: args.momentum,
        ..SynthConfig::default()
    };
    write_csv(&synth_generate(&cfg)?, &args.out)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

struct LoadedData {
    table: ReturnTable,
    sha256: String,
}

fn load_returns(path: &Path) -> Result<LoadedData> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let table = clean_and_return(&read_csv(&bytes[..])?)?;
    Ok(LoadedData {
        table,
        sha256: sha256_hex(&bytes),
    })
}

fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = !dir.is_dir() || std::fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(Error::Config(format!(
                "output {} already exists; pass --force to replace it",
                dir.display()
            )));
        }
        if occupied {
            if dir.is_dir() {
                std::fs::remove_dir_all(dir)?;
            } else {
                std::fs::remove_file(dir)?;
            }
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn walk_config(strategy: Strategy, a: &BacktestArgs) -> Result<WalkForwardConfig> {
    let mut space = match &a.space {
        Some(path) => HyperparamSpace::from_toml(
            &std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read space file {}: {e}", path.display())))?,
        )?,
        None => HyperparamSpace::default(),
    };
    if let Some(k) = a.k {
        space.t2v_k = vec![k];
    }
    if let Some(t) = a.trials {
        space.budget = t;
    }
    if strategy.is_trained() {
        space.validate()?;
    }
    let mut cfg = WalkForwardConfig::new(strategy, a.first_test_year);
    cfg.window = a.window as usize;
    cfg.n_layers = a.layers as usize;
    cfg.space = space;
    cfg.train.max_epochs = a.epochs;
    cfg.train.patience = a.patience as usize;
    cfg.train.costs = CostModel::new(a.cost)?;
    cfg.mv.lookback = a.mv_lookback;
    cfg.seed = a.seed;
    cfg.jobs = a.jobs as usize;
    cfg.search_every_split = !a.search_once;
    Ok(cfg)
}

#[derive(Serialize)]
struct DataRecord<'a> {
    path: &'a Path,
    sha256: &'a str,
    first_date: Option<NaiveDate>,
    last_date: Option<NaiveDate>,
    tickers: &'a [String],
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    command: &'a str,
    seed: u64,
    data: DataRecord<'a>,
    args: &'a BacktestArgs,
    config: serde_json::Value,
}

fn write_manifest(
    dir: &Path,
    command: &str,
    args: &BacktestArgs,
    data: &LoadedData,
    config: serde_json::Value,
) -> Result<()> {
    let manifest = Manifest {
        version: VERSION,
        command,
        seed: args.seed,
        data: DataRecord {
            path: &args.data,
            sha256: &data.sha256,
            first_date: data.table.dates().first().copied(),
            last_date: data.table.dates().last().copied(),
            tickers: data.table.tickers(),
        },
        args,
        config,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

/// Runs one strategy and writes every per-strategy artifact into `dir`.
fn backtest_into(
    dir: &Path,
    table: &ReturnTable,
    cfg: &WalkForwardConfig,
) -> Result<(WalkForwardResult, EquityCurve, MetricsReport)> {
    let result = walk_forward(table, cfg)?;
    let curve = run_backtest(&result.weights, table, cfg.train.costs)?;
    let metrics = compute_metrics(&curve)?;
    std::fs::write(dir.join("metrics.json"), metrics.to_json()? + "\n")?;
    write_series_csv(
        dir.join("equity.csv"),
        "value",
        curve.dates().iter().copied().zip(curve.cumulative().iter().copied()),
    )?;
    let rolling = if curve.len() >= 252 {
        rolling_sharpe(&curve, 252)?
    } else {
        Vec::new()
    };
    write_series_csv(dir.join("rolling_sharpe.csv"), "value", rolling)?;
    write_weights_csv(&dir.join("weights.csv"), &result, table.tickers())?;
    let trials: Vec<_> = result
        .splits
        .iter()
        .flat_map(|o| o.trials.iter().map(|t| (o.split.test_year, t.clone())))
        .collect();
    write_trials_csv(dir.join("trials.csv"), &trials)?;
    let models: Vec<_> = result
        .splits
        .iter()
        .filter_map(|o| o.model.as_ref().map(|m| (o.split.test_year, m)))
        .collect();
    if !models.is_empty() {
        let ckpt_dir = dir.join("checkpoints");
        std::fs::create_dir_all(&ckpt_dir)?;
        for (year, model) in models {
            model
                .to_checkpoint()
                .save(ckpt_dir.join(format!("{}_{year}.ckpt", cfg.strategy)))?;
        }
    }
    Ok((result, curve, metrics))
}

fn write_weights_csv(path: &Path, result: &WalkForwardResult, tickers: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["decision_date".to_string()];
    header.extend(tickers.iter().cloned());
    w.write_record(&header)?;
    for (d, row) in result.weights.dates.iter().zip(&result.weights.weights) {
        let mut rec = vec![d.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> Result<MetricsReport> {
    let a = &args.common;
    let cfg = walk_config(args.strategy, a)?;
    let data = load_returns(&a.data)?;
    prepare_out_dir(&a.out, a.force)?;
    write_manifest(&a.out, "run", a, &data, serde_json::to_value(&cfg)?)?;
    let (_, _, metrics) = backtest_into(&a.out, &data.table, &cfg)?;
    Ok(metrics)
}

/// One row of metrics per strategy.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<(Strategy, MetricsReport)>,
}

impl ComparisonTable {
    /// Row index of the best value in each metric column.
    pub fn best_rows(&self) -> [usize; 7] {
        std::array::from_fn(|col| {
            let higher = MetricsReport::higher_is_better(METRIC_NAMES[col]);
            let mut best = 0;
            for (i, (_, m)) in self.rows.iter().enumerate() {
                let (v, b) = (m.values()[col], self.rows[best].1.values()[col]);
                if (higher && v > b) || (!higher && v < b) {
                    best = i;
                }
            }
            best
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("strategy,{}\n", METRIC_NAMES.join(","));
        for (strategy, m) in &self.rows {
            let cells: Vec<String> = m.values().iter().map(f64::to_string).collect();
            let _ = writeln!(s, "{strategy},{}", cells.join(","));
        }
        s
    }

    /// Fixed-width table; `*` marks the best value in each column.
    pub fn render_text(&self) -> String {
        let best = self.best_rows();
        let mut s = format!("{:<14}", "strategy");
        for name in METRIC_NAMES {
            let _ = write!(s, "{name:>14}");
        }
        s.push('\n');
        for (i, (strategy, m)) in self.rows.iter().enumerate() {
            let _ = write!(s, "{:<14}", strategy.name());
            for (col, v) in m.values().iter().enumerate() {
                let mark = if best[col] == i { "*" } else { " " };
                let _ = write!(s, "{:>13}{mark}", format!("{v:.4}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn cmd_compare(args: &CompareArgs) -> Result<ComparisonTable> {
    let a = &args.common;
    let mut strategies = Vec::new();
    for s in &args.strategies {
        if !strategies.contains(s) {
            strategies.push(*s);
        }
    }
    if strategies.len() < 2 {
        return Err(Error::Config("compare needs at least two distinct strategies".into()));
    }
    let configs = strategies
        .iter()
        .map(|s| walk_config(*s, a))
        .collect::<Result<Vec<_>>>()?;
    let data = load_returns(&a.data)?;
    prepare_out_dir(&a.out, a.force)?;
    write_manifest(&a.out, "compare", a, &data, serde_json::to_value(&configs)?)?;

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for cfg in &configs {
        let dir = a.out.join(cfg.strategy.name());
        std::fs::create_dir_all(&dir)?;
        let (_, curve, metrics) = backtest_into(&dir, &data.table, cfg)?;
        rows.push((cfg.strategy, metrics));
        curves.push(curve);
    }
    let table = ComparisonTable { rows };
    std::fs::write(a.out.join("comparison.csv"), table.to_csv())?;
    std::fs::write(a.out.join("comparison.txt"), table.render_text())?;

    let mut w = csv::Writer::from_path(a.out.join("equity.csv"))?;
    let mut header = vec!["date".to_string()];
    header.extend(strategies.iter().map(|s| s.name().to_string()));
    w.write_record(&header)?;
    for (k, d) in curves[0].dates().iter().enumerate() {
        let mut rec = vec![d.to_string()];
        for c in &curves {
            if c.dates().get(k) != Some(d) {
                return Err(Error::Alignment { date: d.to_string() });
            }
            rec.push(c.cumulative()[k].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(sharpe: f64, vol: f64) -> MetricsReport {
        MetricsReport {
            returns: 0.1,
            vol,
            sharpe,
            sortino: 1.0,
            mdd: vol / 2.0,
            calmar: 1.0,
            pct_positive: 0.5,
        }
    }

    #[test]
    fn best_flags_follow_polarity() {
        let t = ComparisonTable {
            rows: vec![
                (Strategy::Pt, report(2.0, 0.3)),
                (Strategy::EqualWeight, report(1.0, 0.1)),
            ],
        };
        let best = t.best_rows();
        assert_eq!(best[2], 0);
        assert_eq!(best[1], 1);
        assert_eq!(best[4], 1);
        assert_eq!(best[0], 0);
        let text = t.render_text();
        assert_eq!(text.lines().count(), 3);
        assert!(t
            .to_csv()
            .starts_with("strategy,returns,vol,sharpe,sortino,mdd,calmar,pct_positive\n"));
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(
            run_cli(["pt", "synth", "--assets", "0", "--days", "10", "--out", "x.csv"]),
            EXIT_USAGE
        );
        assert_eq!(run_cli(["pt", "bogus"]), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Numeric("x".into())), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::Data("x".into())), EXIT_DATA);
    }

    #[test]
    fn sha256_matches_known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
