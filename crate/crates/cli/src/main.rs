mod config;
mod exit;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridprobe::bench::{generate_episode, run_suite, RegimeSpec, Span, Suite};
use gridprobe::pipeline::BackendPool;
use gridprobe::probe::Regime;
use gridprobe::{run, PipelineConfig, Strategy, Trace};
use tracing::info;
use tracing_subscriber::EnvFilter;

use crate::config::ConfigFlags;
use crate::exit::CliError;
use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(
    name = "gridprobe",
    version,
    about = "Posterior-probing frame selection for video QA"
)]
struct Cli {
    /// Log filter for stderr, e.g. `info` or `gridprobe=debug`.
    #[arg(long, global = true, default_value = "warn", env = "GRIDPROBE_LOG")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Answer one question from a manifest.
    Run {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Directory for the trace JSON.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Run strategies over a synthetic suite and write reports.
    Bench {
        #[arg(long, value_name = "FILE")]
        suite: PathBuf,
        /// Comma-separated strategies.
        #[arg(long, value_delimiter = ',', default_value = "auto,monolithic,uniform")]
        strategies: Vec<Strategy>,
        /// Also write every trace to traces.jsonl.
        #[arg(long)]
        traces: bool,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Generate one synthetic episode as JSON.
    Episode {
        #[arg(long, value_parser = parse_regime)]
        regime: Regime,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        k: usize,
        #[arg(long, default_value_t = 8)]
        labels: usize,
        /// Localized only: exact number of evidence atoms (1-3).
        #[arg(long)]
        atoms: Option<usize>,
        /// Output file; stdout when absent.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    Regime::ALL
        .into_iter()
        .find(|r| r.as_str() == s.replace('-', "_"))
        .ok_or_else(|| {
            let names: Vec<_> = Regime::ALL.iter().map(|r| r.as_str()).collect();
            format!("unknown regime {s:?}; expected one of {}", names.join(", "))
        })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_new(&cli.log).unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Run {
            manifest,
            out,
            flags,
        } => cmd_run(&manifest, out.as_deref(), &flags),
        Command::Bench {
            suite,
            strategies,
            traces,
            out,
            flags,
        } => cmd_bench(&suite, &strategies, traces, &out, &flags),
        Command::Episode {
            regime,
            seed,
            k,
            labels,
            atoms,
            out,
        } => cmd_episode(regime, seed, k, labels, atoms, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gridprobe: {e}");
            e.code()
        }
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, body)
        .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Internal(e.to_string()))
}

fn summary_line(trace: &Trace) -> String {
    let mut parts = vec![
        format!("item={}", trace.item_id),
        format!("strategy={}", trace.strategy),
    ];
    if let Some(a) = &trace.answer {
        parts.push(format!("answer={a}"));
    }
    if let Some(c) = trace.correct {
        parts.push(format!("correct={c}"));
    }
    if let Some(m) = trace.m_eff {
        parts.push(format!("m_eff={m}"));
    }
    if let Some(s) = &trace.shape {
        parts.push(format!("sigma={:.6}", s.sigma));
    }
    if let Some(c) = &trace.cost {
        parts.push(format!("total_flops={:.6e}", c.total_flops));
        parts.push(format!("probe_flops={:.6e}", c.probe_flops));
        parts.push(format!("focused_flops={:.6e}", c.focused_flops));
    }
    if trace.retries > 0 {
        parts.push(format!("retries={}", trace.retries));
    }
    parts.join(" ")
}

fn cmd_run(manifest_path: &Path, out: Option<&Path>, flags: &ConfigFlags) -> Result<(), CliError> {
    let manifest = RunManifest::load(manifest_path)?;
    let mut cfg: PipelineConfig = flags.resolve(manifest.config.clone())?;
    let item = manifest.item(&mut cfg, flags.k.is_some())?;
    let backends = BackendPool::new(&cfg)?.for_item(&item)?;
    info!(item = %item.id, mode = %cfg.mode, k = cfg.k, "running");
    let trace = run(&cfg, &item, &backends)?;
    if let Some(dir) = out {
        let path = dir.join(format!("trace-{}.json", sanitize(&trace.item_id)));
        write_file(&path, &(to_json(&trace)? + "\n"))?;
        info!(path = %path.display(), "trace written");
    }
    if let Some(f) = &trace.failure {
        return Err(CliError::from_failure(&trace.item_id, f));
    }
    println!("{}", summary_line(&trace));
    Ok(())
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cmd_bench(
    suite_path: &Path,
    strategies: &[Strategy],
    write_traces: bool,
    out: &Path,
    flags: &ConfigFlags,
) -> Result<(), CliError> {
    let suite = Suite::load(suite_path)?;
    let mut cfg = flags.resolve(None)?;
    if flags.k.is_none() {
        if let Some(k) = suite.k {
            cfg.k = k;
        }
    }
    if strategies.is_empty() {
        return Err(CliError::Config("no strategies requested".into()));
    }
    if suite.episode_count() == 0 {
        return Err(CliError::Config(format!(
            "suite {} has no episodes",
            suite_path.display()
        )));
    }
    let episodes = suite.generate(cfg.k)?;
    info!(
        episodes = episodes.len(),
        strategies = strategies.len(),
        "bench start"
    );
    let bench = run_suite(strategies, &episodes, &cfg)?;
    let report = bench.report();
    report.write_to(out)?;
    if write_traces {
        let mut body = String::new();
        for item in bench.results.iter().flatten() {
            body.push_str(
                &serde_json::to_string(item).map_err(|e| CliError::Internal(e.to_string()))?,
            );
            body.push('\n');
        }
        write_file(&out.join("traces.jsonl"), &body)?;
    }
    for s in &report.strategies {
        println!(
            "strategy={} items={} failures={} accuracy={:.4} mean_m_eff={:.2} mean_flops={:.6e} relative_flops={}",
            s.strategy,
            s.items,
            s.failures,
            s.accuracy,
            s.mean_m_eff,
            s.mean_flops,
            s.relative_flops.map_or("na".into(), |r| format!("{r:.4}")),
        );
    }
    let failed = bench.results.iter().flatten().find_map(|r| {
        r.trace
            .failure
            .as_ref()
            .map(|f| (r.item_id.clone(), f.clone()))
    });
    match failed {
        Some((id, f)) => Err(CliError::from_failure(&id, &f)),
        None => Ok(()),
    }
}

fn cmd_episode(
    regime: Regime,
    seed: u64,
    k: usize,
    labels: usize,
    atoms: Option<usize>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut spec = RegimeSpec {
        labels,
        ..RegimeSpec::for_regime(regime)
    };
    if let Some(n) = atoms {
        spec.atoms = Span::new(n, n);
    }
    let episode = generate_episode(&spec, k, seed)?;
    let body = to_json(&episode)? + "\n";
    match out {
        Some(path) => write_file(path, &body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}
