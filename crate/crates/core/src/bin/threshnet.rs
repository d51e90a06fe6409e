use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use threshnet::experiment::{self, emit_curve, merge_raw, parse_config, read_raw_csv, ExperimentConfig, MetricsReport, Scenario};
use threshnet::io;
use threshnet::network_model::{SampleOracle, SamplingMode};
use threshnet::stats_core::RngSeed;

#[derive(Parser)]
#[command(name = "threshnet", version, about = "Planted threshold networks and their recovery")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the planted network and a dataset drawn from it.
    Gen,
    /// One-by-one landscape recovery.
    Landscape,
    /// Simultaneous landscape recovery.
    Simul,
    /// Refine a perturbed direction on slabs.
    Refine,
    /// Learn an intersection of halfspaces end to end.
    Halfspaces,
    /// Scan candidate directions with delta correlations.
    DeltaScan,
    /// Recover binary supports from the pair-correlation graph.
    Corrgraph,
    /// Penalized ascent for exponential units.
    ExpAscent,
    /// Fourth-Hermite recovery for even activations.
    Even,
    /// Summarize report files, or merge raw sweep files into one curve.
    Report {
        /// `report.json` or `curve_raw.csv` files.
        files: Vec<PathBuf>,
    },
}

fn load(g: &Global, scenario: Option<Scenario>) -> Result<ExperimentConfig, String> {
    let text = match &g.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => {
            let s = scenario.ok_or("gen needs --config")?;
            format!("scenario = \"{}\"\n[network]\n", s.name())
        }
    };
    let mut cfg = parse_config(&text).map_err(|e| e.to_string())?.config;
    if let Some(s) = scenario {
        if cfg.scenario != s {
            eprintln!("note: config scenario {} replaced by {}", cfg.scenario.name(), s.name());
            cfg.scenario = s;
        }
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(n) = g.samples {
        cfg.samples = n;
    }
    if let Some(o) = &g.out {
        cfg.out = o.to_string_lossy().into_owned();
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn summarize(r: &MetricsReport) {
    println!("scenario {}  seed {}  config {}", r.scenario, r.seed, &r.config_hash[..12]);
    for (k, v) in &r.metrics {
        println!("  {k:<24} {v:.6}");
    }
    for c in &r.checks {
        println!("  check {} = {} ({} {}): {}", c.metric, c.value, if c.kind == "max" { "<=" } else { ">=" }, c.bound, if c.passed { "ok" } else { "FAILED" });
    }
    println!("  elapsed {:.1}s  {}", r.elapsed_seconds, if r.passed { "PASS" } else { "FAIL" });
}

fn gen(cfg: &ExperimentConfig) -> Result<(), String> {
    let net = cfg.build_network().map_err(|e| e.to_string())?;
    let out = PathBuf::from(&cfg.out);
    io::save_network(&out.join("network.txt"), &net).map_err(|e| e.to_string())?;
    let oracle = SampleOracle::new(net).with_noise(cfg.network.noise_std).map_err(|e| e.to_string())?;
    let data = oracle.sample_batch(&SamplingMode::Plain, cfg.samples, RngSeed(cfg.seed)).map_err(|e| e.to_string())?;
    io::save_dataset(&out.join("data.bin"), &data).map_err(|e| e.to_string())?;
    io::write_atomic(&out.join("config.toml"), cfg.to_toml().as_bytes()).map_err(|e| e.to_string())?;
    println!("wrote {} samples to {}", data.len(), out.display());
    Ok(())
}

fn report(files: &[PathBuf], out: Option<&PathBuf>) -> Result<bool, String> {
    if files.is_empty() {
        return Err("report needs at least one file".into());
    }
    let mut raw = Vec::new();
    let mut names = None;
    let mut all_passed = true;
    for f in files {
        let text = std::fs::read_to_string(f).map_err(|e| format!("{}: {e}", f.display()))?;
        if f.extension().is_some_and(|e| e == "csv") {
            let (x, m, mut r) = read_raw_csv(&text).map_err(|e| format!("{}: {e}", f.display()))?;
            if names.get_or_insert((x.clone(), m.clone())) != &(x, m) {
                return Err(format!("{}: columns differ from the first curve", f.display()));
            }
            raw.append(&mut r);
        } else {
            let r: MetricsReport = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", f.display()))?;
            summarize(&r);
            all_passed &= r.passed;
        }
    }
    if let Some((x, m)) = names {
        let curve = emit_curve(&x, &m, &merge_raw(&raw));
        match out {
            Some(dir) => io::write_atomic(&dir.join("curve.csv"), curve.as_bytes()).map_err(|e| e.to_string())?,
            None => print!("{curve}"),
        }
    }
    Ok(all_passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let scenario = match &cli.cmd {
        Cmd::Gen | Cmd::Report { .. } => None,
        Cmd::Landscape => Some(Scenario::LandscapeObo),
        Cmd::Simul => Some(Scenario::LandscapeSimul),
        Cmd::Refine => Some(Scenario::Refine),
        Cmd::Halfspaces => Some(Scenario::Halfspaces),
        Cmd::DeltaScan => Some(Scenario::DeltaScan),
        Cmd::Corrgraph => Some(Scenario::Corrgraph),
        Cmd::ExpAscent => Some(Scenario::ExpAscent),
        Cmd::Even => Some(Scenario::Even),
    };
    let result = match &cli.cmd {
        Cmd::Report { files } => report(files, cli.global.out.as_ref()),
        Cmd::Gen => load(&cli.global, None).and_then(|c| gen(&c)).map(|_| true),
        _ => load(&cli.global, scenario).and_then(|c| {
            let r = experiment::run_experiment(&c).map_err(|e| e.to_string())?;
            summarize(&r);
            println!("  report written to {}", PathBuf::from(&c.out).join("report.json").display());
            Ok(r.passed)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
