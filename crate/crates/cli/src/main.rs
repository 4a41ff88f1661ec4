use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Arg, ArgAction, Command as ClapCommand};
use formhom_cli::config::KEYS;
use formhom_cli::{output, run, Command, ExperimentConfig, RawConfig, RunError};
use serde_json::json;

fn help(key: &str) -> &'static str {
    match key {
        "d" => "Dimension (default 2)",
        "r" => "Form degree of the coefficient, 1..=d (default 1)",
        "m" => "Cube level, side 3^m (default 3)",
        "m_max" => "Largest level for sequences, rate and os-calibrate (default 4)",
        "ensemble" => "constant:c[,..] | iid-spd | checkerboard2:c1,c2 | laminate:axis,c1,c2",
        "lambda" => "Ellipticity constant (default 0.25)",
        "nsamples" => "Monte Carlo samples per level (default 100)",
        "seed" => "Master seed (default 0)",
        "refine" => "Mesh cells per coefficient cell along each axis (default 1)",
        "tol" => "Relative CG tolerance (default 1e-10)",
        "preconditioner" => "auto | jacobi",
        "threads" => "Worker threads; overrides FORMHOM_THREADS",
        "out" => "Output directory (default .)",
        "eps" => "Comma separated scales for two-scale, e.g. 1/9,1/27",
        "p" => "Coefficients of p (default the first basis form)",
        "q" => "Coefficients of q (default the dual of the first basis form)",
        "n_min" => "First level used in rate fits (default 1)",
        "s" => "Exponent of the O_s calibration (default 1)",
        "fraction" => "Relative side of the inner cube for Caccioppoli ratios (default 1/3)",
        "probes" => "Probe solutions for Caccioppoli ratios (default 100)",
        "sample" => "Sample index for sample-env and dirichlet (default 0)",
        _ => "",
    }
}

fn cli() -> ClapCommand {
    let commands: Vec<&str> = Command::ALL.iter().map(|c| c.name()).collect();
    let mut cmd = ClapCommand::new("formhom")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Monte Carlo homogenization experiments for random differential forms")
        .args_override_self(true)
        .after_help(format!(
            "Commands: {}\n\nEvery option may also be given as `key = value` in a config file; \
             flags override the file. FORMHOM_THREADS sets the default thread count.",
            commands.join(", ")
        ))
        .arg(Arg::new("command").value_name("COMMAND").help("Experiment to run"))
        .arg(Arg::new("config").long("config").value_name("FILE").help("Flat key = value config file"))
        .arg(
            Arg::new("allow_large")
                .long("allow-large")
                .action(ArgAction::SetTrue)
                .help("Lift the limits d <= 4 and m <= 7"),
        );
    for &key in KEYS {
        if key == "command" || key == "allow_large" {
            continue;
        }
        cmd = cmd.arg(
            Arg::new(key)
                .long(key.replace('_', "-"))
                .value_name("VALUE")
                .help(help(key))
                .allow_hyphen_values(true),
        );
    }
    cmd
}

fn configure() -> Result<ExperimentConfig, RunError> {
    let matches = cli().get_matches();
    let mut raw = match matches.get_one::<String>("config") {
        Some(path) => RawConfig::load(&PathBuf::from(path))?,
        None => RawConfig::default(),
    };
    let mut flags = RawConfig::default();
    for &key in KEYS {
        if key == "allow_large" {
            if matches.get_flag(key) {
                flags.set(key, "true")?;
            }
        } else if let Some(v) = matches.get_one::<String>(key) {
            flags.set(key, v.clone())?;
        }
    }
    raw.merge(&flags);
    Ok(ExperimentConfig::from_raw(&raw)?)
}

fn main() -> ExitCode {
    let started = Instant::now();
    let outcome = configure().and_then(|cfg| {
        let results = run(&cfg)?;
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let metadata = json!({
            "timestamp_unix": timestamp,
            "elapsed_seconds": started.elapsed().as_secs_f64(),
            "threads": cfg.threads,
            "out": cfg.out.display().to_string(),
        });
        output::write(&cfg.out, &cfg, &results, metadata)?;
        Ok(cfg.out.join("results.json"))
    });
    match outcome {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("formhom: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
