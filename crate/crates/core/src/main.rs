use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};

use gravclust::harness::{parse_config_text, run_experiment, write_report, ExperimentConfig, KEYS};
use gravclust::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn help_for(key: &str) -> &'static str {
    match key {
        "experiment" => "single | distributed | convergence | timing | demo-fig1",
        "dataset" => "data1 | data2",
        "noise" => "gaussian | laplace",
        "contamination" => "none | chi2:P | gaussian:P",
        "mode" => "both | estimates | non-coop",
        "runs" => "Monte-Carlo runs",
        "seed" => "master seed",
        "out" => "output directory",
        "workers" => "worker threads (results do not depend on it)",
        "dmax" => "force cutoff distance, or inf",
        "p" => "adaptive | const | const:P",
        "max-step" => "per-step travel limit in merge radii, or inf",
        "node-contamination" => "comma-separated outlier probability per node",
        "sigmas" => "comma-separated emission spreads (convergence)",
        _ => "",
    }
}

fn cli() -> Command {
    let run = Command::new("run")
        .about("Run one experiment and write CSV results")
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value config file; flags override it"),
        )
        .args(KEYS.iter().map(|k| {
            Arg::new(*k)
                .long(*k)
                .value_name("VALUE")
                .help(help_for(k))
        }));
    Command::new("gravclust")
        .about("Gravitational cluster enumeration experiments")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(run)
}

fn collect(m: &ArgMatches) -> Result<BTreeMap<String, String>, Error> {
    let mut pairs = match m.get_one::<String>("config") {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {path}: {e}")))?;
            parse_config_text(&text)?
        }
        None => BTreeMap::new(),
    };
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k) {
            pairs.insert(k.to_string(), v.clone());
        }
    }
    Ok(pairs)
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let Some(("run", m)) = matches.subcommand() else {
        return ExitCode::from(EXIT_USAGE);
    };

    let cfg = match collect(m).and_then(|p| ExperimentConfig::from_pairs(&p)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    let result = run_experiment(&cfg).and_then(|r| write_report(&r, &out).map(|f| (r, f)));
    match result {
        Ok((report, files)) => {
            // a closed stdout (e.g. piped into head) is not a failure
            let mut out = std::io::stdout().lock();
            let s = &report.summary;
            let show = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "{} runs={} rmse_k={} p_correct={} centroid_rmse={}",
                cfg.kind,
                cfg.runs,
                show(s.rmse_k),
                show(s.p_correct),
                show(s.centroid_rmse)
            );
            for c in &s.convergence {
                let _ = writeln!(out, "sigma={} mean_steps={}", c.sigma, show(c.mean_steps()));
            }
            if let Some(d) = s.demo_successes {
                let _ = writeln!(out, "demo transitions={d}/{}", cfg.runs);
            }
            for f in files {
                let _ = writeln!(out, "wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
