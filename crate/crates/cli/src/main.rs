use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use pfmpc::config::{Config, Variant};
use pfmpc::sim::{self, ScenarioSpec, SimMetrics};

#[derive(Parser)]
#[command(
    name = "pfmpc",
    version,
    about = "Potential-field MPC safety controller simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario or every scenario in a suite directory.
    Run(RunArgs),
    /// Run a suite under several controller variants and tabulate mean scores.
    Compare(CompareArgs),
}

#[derive(Args)]
struct Common {
    /// Config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Leave wall-clock times out of the metrics records.
    #[arg(long)]
    no_timestamps: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "suite", required_unless_present = "suite")]
    scenario: Option<PathBuf>,
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long, default_value = "mpc-pf", value_parser = parse_variant)]
    controller: Variant,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    suite: PathBuf,
    /// Comma-separated variants.
    #[arg(long, value_delimiter = ',', default_value = "tracking-pid,mpc,mpc-pf", value_parser = parse_variant)]
    controller: Vec<Variant>,
    #[command(flatten)]
    common: Common,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown controller {s:?} (tracking-pid, mpc, mpc-pf)"))
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(Config::default()),
    }
}

fn load_suite(dir: &Path) -> Result<Vec<(PathBuf, ScenarioSpec)>> {
    let entries = fs::read_dir(dir).with_context(|| format!("reading suite {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("suite {} contains no .toml scenarios", dir.display());
    }
    let mut out: Vec<(PathBuf, ScenarioSpec)> = paths
        .into_iter()
        .map(|p| {
            let s = ScenarioSpec::load(&p)?;
            Ok((p, s))
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.1.name.cmp(&b.1.name));
    Ok(out)
}

fn run_one(
    spec: &ScenarioSpec,
    variant: Variant,
    cfg: &Config,
    seed: u64,
    out: &Path,
    timestamps: bool,
) -> Result<SimMetrics> {
    let start = Instant::now();
    let mut controller = variant.build(cfg);
    let outcome = sim::run(spec, controller.as_mut(), cfg, seed, variant.as_str())?;
    let mut metrics = outcome.metrics;
    if timestamps {
        metrics.wall_time_s = Some(start.elapsed().as_secs_f64());
    }
    let stem = format!("{}.{}", spec.name, variant.as_str());
    let log_path = out.join(format!("{stem}.log.csv"));
    let file =
        fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    sim::write_log_csv(&outcome.log, std::io::BufWriter::new(file))?;
    let json = serde_json::to_string_pretty(&metrics)?;
    fs::write(out.join(format!("{stem}.metrics.json")), json + "\n")?;
    Ok(metrics)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |d| format!("{d:.3}"))
}

fn summary_table(rows: &[SimMetrics]) -> String {
    let mut s = String::from("name,controller,rc,is,ds,collisions,deadlock,min_distance,valid\n");
    for m in rows {
        s += &format!(
            "{},{},{:.4},{:.4},{:.4},{},{},{},{}\n",
            m.name,
            m.controller,
            m.route_completion,
            m.infraction_score,
            m.driving_score,
            m.collisions(),
            m.deadlock,
            fmt_opt(m.min_obstacle_distance),
            m.valid
        );
    }
    s
}

fn cmd_run(args: RunArgs) -> Result<bool> {
    let cfg = load_config(args.common.config.as_deref())?;
    let scenarios = match (&args.scenario, &args.suite) {
        (Some(p), _) => {
            let spec = ScenarioSpec::load(p)?;
            vec![(p.clone(), spec)]
        }
        (None, Some(dir)) => load_suite(dir)?,
        (None, None) => bail!("pass --scenario or --suite"),
    };
    let out = &args.common.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let timestamps = !args.common.no_timestamps;
    let results: Vec<SimMetrics> = scenarios
        .par_iter()
        .map(|(_, spec)| {
            run_one(
                spec,
                args.controller,
                &cfg,
                args.common.seed,
                out,
                timestamps,
            )
        })
        .collect::<Result<_>>()?;
    let table = summary_table(&results);
    if args.suite.is_some() {
        fs::write(
            out.join(format!("summary.{}.csv", args.controller.as_str())),
            &table,
        )?;
    }
    print!("{table}");
    report_aborts(&results)
}

fn report_aborts(results: &[SimMetrics]) -> Result<bool> {
    let mut ok = true;
    for m in results.iter().filter(|m| !m.valid) {
        ok = false;
        eprintln!(
            "run {} / {} aborted: {}",
            m.name,
            m.controller,
            m.abort_reason.as_deref().unwrap_or("unknown")
        );
    }
    Ok(ok)
}

fn cmd_compare(args: CompareArgs) -> Result<bool> {
    let cfg = load_config(args.common.config.as_deref())?;
    let scenarios = load_suite(&args.suite)?;
    let out = &args.common.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut variants = args.controller.clone();
    variants.dedup();
    let jobs: Vec<(Variant, &ScenarioSpec)> = variants
        .iter()
        .flat_map(|&v| scenarios.iter().map(move |(_, s)| (v, s)))
        .collect();
    let timestamps = !args.common.no_timestamps;
    let results: Vec<SimMetrics> = jobs
        .par_iter()
        .map(|&(v, s)| run_one(s, v, &cfg, args.common.seed, out, timestamps))
        .collect::<Result<_>>()?;

    fs::write(out.join("runs.csv"), summary_table(&results))?;
    let mut table = String::from("controller,runs,mean_rc,mean_is,mean_ds,collisions,deadlocks\n");
    for v in &variants {
        let rows: Vec<&SimMetrics> = results
            .iter()
            .filter(|m| m.controller == v.as_str())
            .collect();
        let n = rows.len() as f64;
        let mean = |f: fn(&SimMetrics) -> f64| rows.iter().map(|m| f(m)).sum::<f64>() / n;
        table += &format!(
            "{},{},{:.4},{:.4},{:.4},{},{}\n",
            v.as_str(),
            rows.len(),
            mean(|m| m.route_completion),
            mean(|m| m.infraction_score),
            mean(|m| m.driving_score),
            rows.iter().map(|m| m.collisions()).sum::<usize>(),
            rows.iter().filter(|m| m.deadlock).count(),
        );
    }
    fs::write(out.join("compare.csv"), &table)?;
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(table.as_bytes())?;
    report_aborts(&results)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
