use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use formhom::env::{Ensemble, EnsembleSpec, DEFAULT_LAMBDA};
use formhom::exterior::AltForm;
use formhom::linalg::CgOptions;
use formhom::solver::{Preconditioning, SolverOptions};
use sha2::{Digest, Sha256};

/// Largest `d` and `m` accepted without `allow_large`.
pub const MAX_DIM: usize = 4;
pub const MAX_LEVEL: u32 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    SampleEnv,
    EstimateAhom,
    Sequences,
    Rate,
    Duality,
    Dykhne,
    Flatness,
    Dirichlet,
    TwoScale,
    Diagnostics,
    OsCalibrate,
}

impl Command {
    pub const ALL: [Command; 11] = [
        Command::SampleEnv,
        Command::EstimateAhom,
        Command::Sequences,
        Command::Rate,
        Command::Duality,
        Command::Dykhne,
        Command::Flatness,
        Command::Dirichlet,
        Command::TwoScale,
        Command::Diagnostics,
        Command::OsCalibrate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::SampleEnv => "sample-env",
            Command::EstimateAhom => "estimate-ahom",
            Command::Sequences => "sequences",
            Command::Rate => "rate",
            Command::Duality => "duality",
            Command::Dykhne => "dykhne",
            Command::Flatness => "flatness",
            Command::Dirichlet => "dirichlet",
            Command::TwoScale => "two-scale",
            Command::Diagnostics => "diagnostics",
            Command::OsCalibrate => "os-calibrate",
        }
    }
}

impl FromStr for Command {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| ConfigError(format!("unknown command '{s}'")))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Keys accepted in config files and as `--key` flags (underscores become
/// dashes on the command line).
pub const KEYS: &[&str] = &[
    "command",
    "d",
    "r",
    "m",
    "m_max",
    "ensemble",
    "lambda",
    "nsamples",
    "seed",
    "refine",
    "tol",
    "preconditioner",
    "threads",
    "out",
    "eps",
    "p",
    "q",
    "n_min",
    "s",
    "fraction",
    "probes",
    "sample",
    "allow_large",
];

/// Keys that do not change results and stay out of the config hash.
const UNHASHED: &[&str] = &["threads", "out"];

/// Flat `key = value` settings; later sources override earlier ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig(BTreeMap<String, String>);

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key = value", i + 1)))?;
            let key = k.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError(format!("line {}: unknown key '{}'", i + 1, k.trim())));
            }
            map.insert(key, v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        let key = key.replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError(format!("unknown key '{key}'")));
        }
        self.0.insert(key, value.into());
        Ok(())
    }

    pub fn merge(&mut self, other: &RawConfig) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub command: Command,
    pub d: usize,
    pub r: usize,
    pub m: u32,
    pub m_max: u32,
    pub ensemble: Ensemble,
    pub lambda: f64,
    pub nsamples: usize,
    pub seed: u64,
    pub refine: usize,
    pub tol: f64,
    pub preconditioning: Preconditioning,
    pub threads: usize,
    pub out: PathBuf,
    pub eps: Vec<f64>,
    pub p: Option<Vec<f64>>,
    pub q: Option<Vec<f64>>,
    pub n_min: usize,
    pub s: f64,
    pub fraction: f64,
    pub probes: usize,
    pub sample: u64,
    pub allow_large: bool,
    /// Every effective key except those in `UNHASHED`, as written to outputs.
    pub effective: BTreeMap<String, String>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError(format!("invalid value '{value}' for {key}")))
}

/// A number written as a decimal or as a fraction `a/b`.
fn parse_ratio(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v = match value.split_once('/') {
        Some((a, b)) => parse::<f64>(key, a.trim())? / parse::<f64>(key, b.trim())?,
        None => parse::<f64>(key, value)?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError(format!("invalid value '{value}' for {key}")))
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value.split(',').map(|t| parse_ratio(key, t.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError(format!("invalid value '{value}' for {key}"))),
    }
}

fn default_threads() -> String {
    std::env::var("FORMHOM_THREADS").ok().filter(|v| !v.trim().is_empty()).unwrap_or_else(|| "1".into())
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let mut eff: BTreeMap<String, String> = BTreeMap::new();
        let defaults: [(&str, String); 22] = [
            ("d", "2".into()),
            ("r", "1".into()),
            ("m", "3".into()),
            ("m_max", "4".into()),
            ("ensemble", "checkerboard2:1,4".into()),
            ("lambda", DEFAULT_LAMBDA.to_string()),
            ("nsamples", "100".into()),
            ("seed", "0".into()),
            ("refine", "1".into()),
            ("tol", format!("{:e}", CgOptions::default().tol)),
            ("preconditioner", "auto".into()),
            ("threads", default_threads()),
            ("out", ".".into()),
            ("eps", "1/9,1/27,1/81".into()),
            ("p", String::new()),
            ("q", String::new()),
            ("n_min", "1".into()),
            ("s", "1".into()),
            ("fraction", "1/3".into()),
            ("probes", "100".into()),
            ("sample", "0".into()),
            ("allow_large", "false".into()),
        ];
        for (k, v) in defaults {
            eff.insert(k.to_string(), raw.get(k).map(str::to_string).unwrap_or(v));
        }
        let command: Command = raw.get("command").ok_or_else(|| ConfigError("no command given".into()))?.parse()?;
        eff.insert("command".into(), command.name().into());
        let g = |k: &str| eff[k].clone();

        let allow_large = parse_bool("allow_large", &g("allow_large"))?;
        let d: usize = parse("d", &g("d"))?;
        let r: usize = parse("r", &g("r"))?;
        let max_dim = if allow_large { formhom::exterior::MAX_DIM } else { MAX_DIM };
        if d == 0 || d > max_dim {
            return Err(ConfigError(format!("d = {d} outside 1..={max_dim}")));
        }
        if r == 0 || r > d {
            return Err(ConfigError(format!("r = {r} outside 1..={d}")));
        }
        let m: u32 = parse("m", &g("m"))?;
        let m_max: u32 = parse("m_max", &g("m_max"))?;
        let max_level = if allow_large { 12 } else { MAX_LEVEL };
        if m > max_level || m_max > max_level {
            return Err(ConfigError(format!("levels above {max_level} need allow_large")));
        }
        let lambda: f64 = parse("lambda", &g("lambda"))?;
        let ensemble: Ensemble = g("ensemble").parse().map_err(|e| ConfigError(format!("ensemble: {e}")))?;
        EnsembleSpec::new(ensemble.clone(), d, r, lambda).map_err(|e| ConfigError(format!("ensemble: {e}")))?;
        let nsamples: usize = parse("nsamples", &g("nsamples"))?;
        if nsamples == 0 {
            return Err(ConfigError("nsamples must be positive".into()));
        }
        let threads: usize = parse("threads", &g("threads"))?;
        if threads == 0 {
            return Err(ConfigError("threads must be positive".into()));
        }
        let refine: usize = parse("refine", &g("refine"))?;
        if refine == 0 {
            return Err(ConfigError("refine must be positive".into()));
        }
        let tol: f64 = parse("tol", &g("tol"))?;
        if !(tol > 0.0 && tol < 1.0) {
            return Err(ConfigError(format!("tol = {tol} outside (0, 1)")));
        }
        let preconditioning = match g("preconditioner").as_str() {
            "auto" => Preconditioning::Auto,
            "jacobi" => Preconditioning::Jacobi,
            v => return Err(ConfigError(format!("invalid preconditioner '{v}'"))),
        };
        let form = |key: &str, degree: usize| -> Result<Option<Vec<f64>>, ConfigError> {
            let v = g(key);
            if v.is_empty() {
                return Ok(None);
            }
            let c = parse_list(key, &v)?;
            AltForm::from_coeffs(d, degree, c.clone()).map_err(|e| ConfigError(format!("{key}: {e}")))?;
            Ok(Some(c))
        };
        let fraction = parse_ratio("fraction", &g("fraction"))?;
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(ConfigError(format!("fraction = {fraction} outside (0, 1)")));
        }
        let s = parse_ratio("s", &g("s"))?;
        if !(s > 0.0) {
            return Err(ConfigError("s must be positive".into()));
        }
        let cfg = Self {
            command,
            d,
            r,
            m,
            m_max,
            lambda,
            nsamples,
            seed: parse("seed", &g("seed"))?,
            refine,
            tol,
            preconditioning,
            threads,
            out: PathBuf::from(g("out")),
            eps: parse_list("eps", &g("eps"))?,
            p: form("p", r)?,
            q: form("q", d - r)?,
            n_min: parse("n_min", &g("n_min"))?,
            s,
            fraction,
            probes: parse("probes", &g("probes"))?,
            sample: parse("sample", &g("sample"))?,
            allow_large,
            ensemble,
            effective: eff.into_iter().filter(|(k, _)| !UNHASHED.contains(&k.as_str())).collect(),
        };
        Ok(cfg)
    }

    pub fn spec(&self) -> EnsembleSpec {
        EnsembleSpec::new(self.ensemble.clone(), self.d, self.r, self.lambda).expect("validated")
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            cg: CgOptions { tol: self.tol, ..CgOptions::default() },
            refine: self.refine,
            preconditioning: self.preconditioning,
        }
    }

    /// SHA-256 of the effective settings, excluding threads and output paths.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.effective {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(text: &str) -> RawConfig {
        RawConfig::parse(text).unwrap()
    }

    #[test]
    fn file_then_flags() {
        let mut r = raw("command = estimate-ahom\n# comment\nm = 2\nseed=5\n");
        let mut flags = RawConfig::default();
        flags.set("m", "4").unwrap();
        r.merge(&flags);
        let c = ExperimentConfig::from_raw(&r).unwrap();
        assert_eq!((c.m, c.seed, c.command), (4, 5, Command::EstimateAhom));
    }

    #[test]
    fn hash_ignores_threads_and_out() {
        let a = ExperimentConfig::from_raw(&raw("command=rate\nthreads=1\nout=a")).unwrap();
        let b = ExperimentConfig::from_raw(&raw("command=rate\nthreads=8\nout=b")).unwrap();
        let c = ExperimentConfig::from_raw(&raw("command=rate\nseed=1")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn ranges_enforced() {
        assert!(ExperimentConfig::from_raw(&raw("command=rate\nd=5")).is_err());
        assert!(ExperimentConfig::from_raw(&raw("command=rate\nd=5\nr=1\nallow_large=true")).is_ok());
        assert!(ExperimentConfig::from_raw(&raw("command=rate\nm=8")).is_err());
        assert!(ExperimentConfig::from_raw(&raw("command=rate\nr=3")).is_err());
        assert!(ExperimentConfig::from_raw(&raw("command=nope")).is_err());
        assert!(ExperimentConfig::from_raw(&raw("d=2")).is_err());
        assert!(RawConfig::parse("colour = red").is_err());
        assert!(ExperimentConfig::from_raw(&raw("command=rate\np=1,2,3")).is_err());
    }

    #[test]
    fn fractions_and_lists() {
        let c = ExperimentConfig::from_raw(&raw("command=two-scale\neps=1/9, 1/27\nfraction=0.5")).unwrap();
        assert_eq!(c.eps, vec![1.0 / 9.0, 1.0 / 27.0]);
        assert_eq!(c.fraction, 0.5);
    }
}
