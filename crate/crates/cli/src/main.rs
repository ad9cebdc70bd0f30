use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tapesim::analytics::{end_to_end_estimate, library_queue_params, sizing_table, LqForm};
use tapesim::config::{parse_config_with_overrides, SimConfig, SECONDS_PER_DAY};
use tapesim::export::{write_rail, write_run};
use tapesim::sweep::{format_sweep, run_sweep, Selector, SweepSpec};
use tapesim::{compute_kpis, run_rail, simulate};

/// Tape-library storage simulator.
#[derive(Parser, Debug)]
#[command(name = "tapesim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a single library and write its trace and report.
    Run(RunArgs),
    /// Simulate a RAIL array of libraries.
    Rail(RailArgs),
    /// Sweep one config key and summarise an output per value.
    Sweep(SweepArgs),
    /// Print the closed-form queueing estimate over a range of request rates.
    Analyze(AnalyzeArgs),
    /// Check a config and print its derived quantities.
    Validate(ConfigArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML config file.
    config: PathBuf,
    /// Override a config key, e.g. `--set sim_duration=24`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Retrieval protocol.
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
    /// Failure-protocol timeout in steps.
    #[arg(long)]
    threshold: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated hours.
    #[arg(long)]
    hours: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProtocolArg {
    Redundant,
    Failure,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output directory.
    #[arg(long, env = "TAPESIM_OUT_DIR", default_value = "tapesim-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct RailArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Number of libraries (overrides `num_libraries`).
    #[arg(long)]
    libraries: Option<u32>,
    /// Simulate the libraries on separate threads.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Config key to vary.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    values: Vec<String>,
    /// Repetitions per value.
    #[arg(long, default_value_t = 1)]
    runs: u32,
    /// Output to summarise.
    #[arg(long, default_value = "mean_last_byte")]
    selector: String,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Object requests per day to evaluate (comma-separated). Defaults to
    /// 0.25…2.0 times the configured rate.
    #[arg(long, value_delimiter = ',')]
    rates: Vec<f64>,
    /// `L_q` expression.
    #[arg(long, value_enum, default_value = "erlang-c")]
    form: FormArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormArg {
    ErlangC,
    PowerOfRho,
}

fn load_config(args: &ConfigArgs) -> Result<SimConfig> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut overrides = args.set.clone();
    if let Some(p) = args.protocol {
        overrides.push(format!(
            "protocol={}",
            if matches!(p, ProtocolArg::Failure) {
                "failure"
            } else {
                "redundant"
            }
        ));
    }
    if let Some(t) = args.threshold {
        overrides.push(format!("failure_threshold_steps={t}"));
    }
    if let Some(s) = args.seed {
        overrides.push(format!("rng_seed={s}"));
    }
    if let Some(h) = args.hours {
        overrides.push(format!("sim_duration={h}"));
    }
    let cfg =
        parse_config_with_overrides(&text, &overrides).with_context(|| format!("loading {}", args.config.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_latency(l: Option<f64>) -> String {
    l.map_or("no data".to_string(), |v| format!("{v:.1}s"))
}

fn warn_if_unstable(cfg: &SimConfig) {
    let (robots, drives) = library_queue_params(cfg);
    for (name, q) in [("robot", robots), ("drive", drives)] {
        if q.rho() >= 1.0 {
            eprintln!(
                "warning: estimated {name} utilisation {:.2} >= 1; queues will grow without bound",
                q.rho()
            );
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    if cfg.num_libraries > 1 {
        bail!("config describes {} libraries; use `tapesim rail`", cfg.num_libraries);
    }
    warn_if_unstable(&cfg);
    let out = simulate(&cfg)?;
    let kpis = compute_kpis(&out);
    let written = write_run(&out, &kpis, &args.out.out)?;
    println!(
        "objects {} completed {} in-flight {} | last-byte mean {} | NoT {} | read errors {} | files {} in {}",
        kpis.objects_arrived,
        kpis.objects_completed,
        kpis.objects_in_flight,
        fmt_latency(kpis.last_byte.as_ref().map(|l| l.mean)),
        kpis.objects_touched,
        kpis.read_errors,
        written.len(),
        args.out.out.display()
    );
    Ok(())
}

fn cmd_rail(args: RailArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(n) = args.libraries {
        cfg.num_libraries = n;
        cfg.validate()?;
    }
    warn_if_unstable(&SimConfig {
        objects_touched_per_day: Some(
            tapesim::rail::LibraryLoadModel::new(&cfg).inflated_rate * SECONDS_PER_DAY / cfg.step_seconds,
        ),
        code_n: 1,
        code_k: 1,
        dispatch_count: None,
        ..cfg.clone()
    });
    let out = run_rail(&cfg, args.parallel)?;
    let written = write_rail(&out, &args.out.out)?;
    let r = &out.report;
    println!(
        "libraries {} | objects {} completed {} failed {} | latency mean {} sd {} | files {} in {}",
        cfg.num_libraries,
        r.objects_arrived,
        r.objects_completed,
        r.objects_failed,
        fmt_latency(r.latency.as_ref().map(|l| l.mean)),
        fmt_latency(r.latency.as_ref().map(|l| l.stddev)),
        written.len(),
        args.out.out.display()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let selector: Selector = args.selector.parse().map_err(anyhow::Error::msg)?;
    let spec = SweepSpec {
        parameter: args.param,
        values: args.values,
        runs: args.runs,
        selector,
    };
    let rows = run_sweep(&cfg, &spec, args.threads)?;
    let csv = format_sweep(&rows);
    match args.output {
        Some(path) => write_text(&path, &csv)?,
        None => print!("{csv}"),
    }
    for r in rows.iter().filter(|r| !r.errors.is_empty()) {
        eprintln!("warning: value {}: {}", r.value, r.errors.join("; "));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let form = match args.form {
        FormArg::ErlangC => LqForm::ErlangC,
        FormArg::PowerOfRho => LqForm::PowerOfRho,
    };
    let (robots, drives) = library_queue_params(&cfg);
    let per_object = |rate_per_day: f64| {
        let c = SimConfig {
            objects_touched_per_day: Some(rate_per_day),
            ..cfg.clone()
        };
        library_queue_params(&c).0.lambda
    };
    let configured = tapesim::config::derive_arrival_rate(&cfg) * SECONDS_PER_DAY / cfg.step_seconds;
    let rates = if args.rates.is_empty() {
        (1..=8).map(|i| configured * f64::from(i) / 4.0).collect()
    } else {
        args.rates
    };
    let lambdas: Vec<f64> = rates.iter().map(|&r| per_object(r)).collect();
    println!(
        "objects_per_day,fragment_rate_per_s,rho_robots,rho_drives,robot_wait_s,drive_wait_s,end_to_end_s,unstable"
    );
    for (rate, row) in rates.iter().zip(sizing_table(robots, drives, &lambdas, form)) {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        println!(
            "{rate},{},{:.4},{:.4},{},{},{},{}",
            row.lambda,
            row.rho_robots,
            row.rho_drives,
            f(row.robot_wait),
            f(row.drive_wait),
            f(row.end_to_end),
            row.unstable.unwrap_or_default()
        );
    }
    Ok(())
}

fn cmd_validate(args: ConfigArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let grid = tapesim::geometry::MotionTimeModel::from_config(&cfg)?;
    let rate = tapesim::config::derive_arrival_rate(&cfg) * SECONDS_PER_DAY / cfg.step_seconds;
    println!("ok: {}", args.config.display());
    println!("grid                {} x {}", cfg.vertical_dim, cfg.horizontal_dim());
    println!("object requests     {rate:.3} per day");
    println!("mean object size    {:.3} MB", cfg.mean_object_size());
    println!("mean exchange       {:.4} s", grid.mean_exchange_motion_seconds() * 4.0);
    println!("horizon             {} steps", cfg.horizon_steps());
    let (robots, drives) = library_queue_params(&cfg);
    println!(
        "utilisation         robots {:.4}, drives {:.4}",
        robots.rho(),
        drives.rho()
    );
    match end_to_end_estimate(&robots, &drives, LqForm::ErlangC) {
        Ok(e) => println!("access estimate     {:.2} s", e.total),
        Err(e) => println!("access estimate     {e}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Rail(a) => cmd_rail(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
