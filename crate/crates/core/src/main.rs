use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mhekit::bench::certify::{analyze, certificate_for};
use mhekit::bench::{self, output, BenchError, ExperimentConfig, ExperimentResult, RunOptions};
use mhekit::stochastics::write_instances_csv;
use mhekit::systems::verify_certificate_empirically;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_UNCONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "mhekit", version, about = "Moving-horizon estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the Monte-Carlo instances and write instances.csv.
    Simulate(Common),
    /// Run every configured estimator on the instances.
    Estimate(Common),
    /// Like `estimate`, plus the configured parameter sweeps.
    Bench(Common),
    /// Minimal moving horizon per optimization-based estimator.
    Horizon(Common),
    /// Empirical certificate check and arrival-cost admissibility.
    CheckStability(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Use the full instance count instead of the desk-scale one.
    #[arg(long)]
    full: bool,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON instead of key=value lines.
    #[arg(long)]
    json: bool,
    /// Exit with status 3 if any solve did not converge.
    #[arg(long)]
    strict: bool,
}

impl Common {
    fn run_options(&self) -> RunOptions {
        RunOptions {
            full: self.full,
            seed: self.seed,
            out: self.out.clone(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("mhekit: {e}");
            ExitCode::from(if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_FAILURE
            })
        }
    }
}

fn run(command: Command) -> Result<u8, BenchError> {
    match command {
        Command::Simulate(c) => simulate(&c),
        Command::Estimate(c) => estimate(&c, false),
        Command::Bench(c) => estimate(&c, true),
        Command::Horizon(c) => horizon(&c),
        Command::CheckStability(c) => check_stability(&c),
    }
}

fn simulate(c: &Common) -> Result<u8, BenchError> {
    let cfg = ExperimentConfig::load(&c.config)?;
    let (_, instances) = bench::generate(&cfg, &c.run_options())?;
    match &c.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let file = std::fs::File::create(dir.join("instances.csv"))?;
            write_instances_csv(&instances, std::io::BufWriter::new(file))?;
            println!("instances={} written={}", instances.len(), dir.join("instances.csv").display());
        }
        None => write_instances_csv(&instances, std::io::stdout().lock())?,
    }
    Ok(0)
}

fn estimate(c: &Common, sweep: bool) -> Result<u8, BenchError> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if cfg.estimators.is_empty() {
        return Err(BenchError::Config("no estimators configured".into()));
    }
    if !sweep {
        cfg.experiment.sweep.clear();
    }
    let result = bench::run_experiment(&cfg, &c.run_options())?;
    report(&result, c.json)?;
    if c.strict && result.metrics.total_unconverged() > 0 {
        return Ok(EXIT_UNCONVERGED);
    }
    Ok(0)
}

fn report(result: &ExperimentResult, json: bool) -> Result<(), BenchError> {
    let mut out = std::io::stdout().lock();
    if json {
        let body = serde_json::json!({
            "estimators": result.metrics.estimators,
            "sweep": result.metrics.sweep,
            "unconverged_total": result.metrics.total_unconverged(),
        });
        writeln!(out, "{body:#}")?;
    } else {
        output::write_summary(&result.metrics, &mut out)?;
    }
    Ok(())
}

fn horizon(c: &Common) -> Result<u8, BenchError> {
    let cfg = ExperimentConfig::load(&c.config)?;
    let reports = cfg
        .estimators
        .iter()
        .filter(|e| e.spec.is_optimization())
        .map(|e| analyze(&cfg, e))
        .collect::<Result<Vec<_>, _>>()?;
    if reports.is_empty() {
        return Err(BenchError::Config("no optimization-based estimator to certify".into()));
    }
    let mut out = std::io::stdout().lock();
    if c.json {
        let body: Vec<_> = reports
            .iter()
            .map(|r| {
                serde_json::json!({
                    "estimator": r.estimator,
                    "eta": r.horizon.eta,
                    "s_bar": r.horizon.s_bar,
                    "T_min": r.horizon.t_min.finite(),
                    "margin": r.horizon.margin,
                    "term_shares": r.horizon.term_shares,
                    "assumptions": r.horizon.assumptions,
                })
            })
            .collect();
        writeln!(out, "{:#}", serde_json::Value::Array(body))?;
    } else {
        for r in &reports {
            let h = &r.horizon;
            writeln!(out, "estimator={}", r.estimator)?;
            writeln!(out, "eta={}", h.eta)?;
            writeln!(out, "s_bar={}", h.s_bar)?;
            writeln!(out, "T_min={}", h.t_min)?;
            writeln!(out, "margin={}", h.margin)?;
            for (i, share) in h.term_shares.iter().enumerate() {
                writeln!(out, "term{i}={share}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(0)
}

fn check_stability(c: &Common) -> Result<u8, BenchError> {
    let cfg = ExperimentConfig::load(&c.config)?;
    let model = cfg.model.build()?;
    let seed = c.seed.unwrap_or(cfg.experiment.seed);
    let cert = cfg.model.certificate()?;
    let empirical = verify_certificate_empirically(
        &model,
        &cert,
        cfg.stability.pairs,
        cfg.stability.horizon,
        seed,
    );
    let mut rows = Vec::new();
    for est in cfg.estimators.iter().filter(|e| e.spec.is_optimization()) {
        let cost = est.spec.cost().expect("optimization estimators carry a cost");
        let (loosened, id) = certificate_for(&cfg, cost)?;
        let check = mhekit::stability::check_arrival_admissible(&loosened, &cost.arrival)
            .map_err(|e| BenchError::Config(format!("`{}`: {e}", est.name)))?;
        let range = mhekit::stability::admissible_b2_range(&loosened, cost.arrival.a2);
        rows.push((est.name.clone(), id, check, range));
    }
    let passed = empirical.passed && rows.iter().all(|r| r.2.admissible);
    let mut out = std::io::stdout().lock();
    if c.json {
        let body = serde_json::json!({
            "certificate": {
                "model": cfg.model.id(),
                "pairs": empirical.pairs_checked,
                "max_violation": empirical.max_violation,
                "passed": empirical.passed,
            },
            "estimators": rows.iter().map(|(name, id, check, range)| serde_json::json!({
                "estimator": name,
                "certificate": id,
                "admissible": check.admissible,
                "margin": check.margin,
                "b2_range": range,
            })).collect::<Vec<_>>(),
            "passed": passed,
        });
        writeln!(out, "{body:#}")?;
    } else {
        writeln!(out, "certificate={}", cfg.model.id())?;
        writeln!(out, "pairs={}", empirical.pairs_checked)?;
        writeln!(out, "max_violation={}", empirical.max_violation)?;
        writeln!(out, "certificate_passed={}", empirical.passed)?;
        for (name, id, check, range) in &rows {
            writeln!(
                out,
                "estimator={name} certificate={id} admissible={} margin={} b2_range={}{},{}{}",
                check.admissible,
                check.margin,
                if range.lower_closed { "[" } else { "(" },
                range.lower,
                range.upper,
                if range.upper_closed { "]" } else { ")" },
            )?;
        }
        writeln!(out, "passed={passed}")?;
    }
    if let Some(dir) = &c.out {
        write_json(dir, "stability.json", &serde_json::json!({ "passed": passed }))?;
    }
    Ok(if passed { 0 } else { EXIT_FAILURE })
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), format!("{value:#}\n"))?;
    Ok(())
}
