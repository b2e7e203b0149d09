//! Subprocess black boxes: one JSON request on stdin, one JSON response on stdout.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::EvalError;

#[derive(Debug, Serialize)]
pub struct Request<'a> {
    pub task: &'a str,
    pub x: &'a [f64],
}

/// A value is a JSON number or a string such as "NaN" or "inf".
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Value {
    Number(f64),
    Text(String),
}

#[derive(Debug, Deserialize)]
struct Response {
    values: BTreeMap<String, Value>,
}

/// Run `command` through `sh -c` and return one value per entry of `functions`.
///
/// Non-finite values are passed through; the scheduler's observe contract rejects them.
pub fn evaluate_external(task: &str, x: &[f64], command: &str, functions: &[String], timeout: Duration) -> Result<Vec<f64>, EvalError> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| EvalError::Spawn(format!("{command}: {e}")))?;
    let request = serde_json::to_string(&Request { task, x }).expect("request serializes");
    if let Some(mut stdin) = child.stdin.take() {
        // A black box that ignores its input may close stdin early.
        let _ = writeln!(stdin, "{request}");
    }
    let mut stdout = child.stdout.take().expect("piped");
    let mut stderr = child.stderr.take().expect("piped");
    let out_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    let err_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });
    let status = match child.wait_timeout(timeout).map_err(|e| EvalError::Spawn(e.to_string()))? {
        Some(s) => s,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(EvalError::Timeout(timeout.as_secs_f64()));
        }
    };
    let out = out_reader.join().unwrap_or_default();
    let err = err_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(EvalError::NonZeroExit { code: status.code().unwrap_or(-1), stderr: err.trim().to_string() });
    }
    let line = out.lines().find(|l| !l.trim().is_empty()).ok_or_else(|| EvalError::Malformed("empty output".into()))?;
    let resp: Response = serde_json::from_str(line).map_err(|e| EvalError::Malformed(e.to_string()))?;
    functions
        .iter()
        .map(|name| match resp.values.get(name) {
            None => Err(EvalError::MissingKey(name.clone())),
            Some(Value::Number(v)) => Ok(*v),
            Some(Value::Text(t)) => t.trim().parse::<f64>().map_err(|_| EvalError::Malformed(format!("'{t}' is not a number"))),
        })
        .collect()
}

/// Evaluate with one retry after a failure.
pub fn evaluate_with_retry(task: &str, x: &[f64], command: &str, functions: &[String], timeout: Duration) -> (Result<Vec<f64>, EvalError>, usize) {
    match evaluate_external(task, x, command, functions, timeout) {
        Ok(v) => (Ok(v), 1),
        Err(_) => (evaluate_external(task, x, command, functions, timeout), 2),
    }
}
