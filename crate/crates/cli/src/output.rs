use std::fmt::Display;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::RunError;

/// One scalar observable: a row of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub experiment: String,
    pub n_or_eps: String,
    pub quantity: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Results {
    pub rows: Vec<Row>,
    pub data: serde_json::Map<String, Value>,
}

impl Results {
    pub fn row(&mut self, experiment: &str, n: impl Display, quantity: impl Into<String>, value: f64, stderr: Option<f64>) {
        self.rows.push(Row {
            experiment: experiment.to_string(),
            n_or_eps: n.to_string(),
            quantity: quantity.into(),
            value,
            stderr,
        });
    }

    pub fn insert(&mut self, key: &str, value: impl Serialize) {
        self.data.insert(key.to_string(), serde_json::to_value(value).expect("serializable"));
    }
}

/// The deterministic part of `results.json`.
pub fn body(cfg: &ExperimentConfig, results: &Results) -> Value {
    json!({
        "command": cfg.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": cfg.hash(),
        "config": cfg.effective,
        "seed": cfg.seed,
        "lambda": cfg.lambda,
        "d": cfg.d,
        "r": cfg.r,
        "m": cfg.m,
        "m_max": cfg.m_max,
        "nsamples": cfg.nsamples,
        "results": Value::Object(results.data.clone()),
    })
}

pub fn write(dir: &Path, cfg: &ExperimentConfig, results: &Results, metadata: Value) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(RunError::io)?;
    let doc = json!({ "body": body(cfg, results), "metadata": metadata });
    let text = serde_json::to_string_pretty(&doc).map_err(RunError::io)?;
    fs::write(dir.join("results.json"), text + "\n").map_err(RunError::io)?;

    let mut w = csv::Writer::from_path(dir.join("results.csv")).map_err(RunError::io)?;
    w.write_record(["experiment", "n_or_eps", "quantity", "value", "stderr"]).map_err(RunError::io)?;
    for r in &results.rows {
        let stderr = r.stderr.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([&r.experiment, &r.n_or_eps, &r.quantity, &r.value.to_string(), &stderr])
            .map_err(RunError::io)?;
    }
    w.flush().map_err(RunError::io)?;
    Ok(())
}
