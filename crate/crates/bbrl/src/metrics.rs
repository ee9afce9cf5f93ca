//! Line-delimited JSON metric logs.
//!
//! Every line is a standalone object with sorted keys. Iteration records
//! carry `"record": "iteration"`; a seed that hits a hard error ends with a
//! `"record": "fault"` line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use bbrl_core::erl::IterationRecord;
use bbrl_core::steprl::PpoIterationRecord;
use serde_json::{json, Map, Value};

use crate::error::{RunError, RunResult};

pub struct MetricsLog {
    path: PathBuf,
    file: File,
}

impl MetricsLog {
    /// Start a fresh log, replacing any previous file.
    pub fn create(path: &Path) -> RunResult<Self> {
        let file = File::create(path).map_err(|e| RunError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append_to(path: &Path) -> RunResult<Self> {
        let file = OpenOptions::new()
            .append(true)
            .create(true)
            .open(path)
            .map_err(|e| RunError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn write(&mut self, record: &Value) -> RunResult<()> {
        let mut line = serde_json::to_string(record).expect("json values serialize");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| RunError::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Non-finite floats become `null` rather than invalid JSON.
fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn erl_record(r: &IterationRecord, seed: u64, metric_name: &str) -> Value {
    let mut m = Map::new();
    m.insert("record".into(), json!("iteration"));
    m.insert("seed".into(), json!(seed));
    m.insert("iteration".into(), json!(r.iteration));
    m.insert("env_steps".into(), json!(r.env_steps));
    m.insert("batch_return".into(), num(r.batch_return));
    m.insert("batch_metric".into(), num(r.batch_metric));
    m.insert("batch_faults".into(), json!(r.batch_faults));
    m.insert("eval_return".into(), num(r.eval.mean_return));
    m.insert(metric_name.into(), num(r.eval.mean_metric));
    m.insert("success_rate".into(), num(r.eval.success_rate));
    m.insert("control_cost".into(), num(r.eval.mean_control_cost));
    m.insert("eval_faults".into(), json!(r.eval.faults));
    m.insert("value_loss".into(), r.value_loss.map_or(Value::Null, num));
    m.insert("loss_initial".into(), num(r.update.initial_loss));
    m.insert("loss_final".into(), num(r.update.final_loss));
    m.insert("penalty".into(), num(r.update.penalty));
    m.insert("ratio_mean".into(), num(r.update.ratio_mean));
    m.insert("ratio_min".into(), num(r.update.ratio_min));
    m.insert("ratio_max".into(), num(r.update.ratio_max));
    m.insert("max_mean_kl".into(), num(r.update.max_mean_kl));
    m.insert("max_cov_kl".into(), num(r.update.max_cov_kl));
    m.insert("mean_std".into(), num(r.mean_std));
    Value::Object(m)
}

pub fn ppo_record(r: &PpoIterationRecord, seed: u64, metric_name: &str) -> Value {
    let mut m = Map::new();
    m.insert("record".into(), json!("iteration"));
    m.insert("seed".into(), json!(seed));
    m.insert("iteration".into(), json!(r.iteration));
    m.insert("env_steps".into(), json!(r.env_steps));
    m.insert("batch_return".into(), num(r.batch_return));
    m.insert("batch_metric".into(), num(r.batch_metric));
    m.insert("batch_success".into(), num(r.batch_success));
    m.insert("eval_return".into(), num(r.eval.mean_return));
    m.insert(metric_name.into(), num(r.eval.mean_metric));
    m.insert("success_rate".into(), num(r.eval.success_rate));
    m.insert("policy_loss".into(), num(r.stats.policy_loss));
    m.insert("value_loss".into(), num(r.stats.value_loss));
    m.insert("clip_fraction".into(), num(r.stats.clip_fraction));
    m.insert("ratio_mean".into(), num(r.stats.ratio_mean));
    Value::Object(m)
}

pub fn fault_record(seed: u64, iteration: usize, env_steps: u64, err: &RunError) -> Value {
    json!({
        "record": "fault",
        "seed": seed,
        "iteration": iteration,
        "env_steps": env_steps,
        "category": err.category(),
        "message": err.to_string(),
    })
}

pub fn read_log(path: &Path) -> RunResult<Vec<Value>> {
    let f = File::open(path).map_err(|e| RunError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| RunError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| RunError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

/// Value of `metric` in the last iteration record of a log, or `None` when
/// the log has no iteration records or ends in a fault.
pub fn final_metric(records: &[Value], metric: &str) -> Option<f64> {
    let last = records.last()?;
    if last.get("record")?.as_str()? != "iteration" {
        return None;
    }
    last.get(metric)?.as_f64()
}
