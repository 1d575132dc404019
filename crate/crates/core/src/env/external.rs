//! Adapter for real servers: render a config file, cycle the service, run a
//! benchmark command and scrape the throughput from its output.

use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Capabilities, EnvError, Environment};
use crate::model::{Configuration, Schema, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifecycleCommand {
    /// Shell command line, run through `sh -c`.
    pub command: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_on() -> String {
    "ON".into()
}

fn default_off() -> String {
    "OFF".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalEnvSpec {
    /// Config file template; `{{OptionName}}` placeholders are substituted.
    pub template: String,
    pub write_path: PathBuf,
    #[serde(default)]
    pub stop: Option<LifecycleCommand>,
    #[serde(default)]
    pub start: Option<LifecycleCommand>,
    #[serde(default)]
    pub reload: Option<LifecycleCommand>,
    pub benchmark: LifecycleCommand,
    /// Regular expression with exactly one capture group holding the throughput.
    pub output_pattern: String,
    #[serde(default)]
    pub warmup_secs: f64,
    /// Spelling of binary values in the rendered file.
    #[serde(default = "default_on")]
    pub binary_on: String,
    #[serde(default = "default_off")]
    pub binary_off: String,
}

#[derive(Debug)]
pub struct ExternalEnv {
    spec: ExternalEnvSpec,
    pattern: Regex,
    placeholder: Regex,
}

impl ExternalEnv {
    pub fn new(spec: ExternalEnvSpec, schema: &Schema) -> Result<Self, EnvError> {
        let pattern = Regex::new(&spec.output_pattern)
            .map_err(|e| EnvError::Spec(format!("output_pattern: {e}")))?;
        if pattern.captures_len() != 2 {
            return Err(EnvError::Spec(format!(
                "output_pattern must have exactly one capture group, found {}",
                pattern.captures_len() - 1
            )));
        }
        let placeholder =
            Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").expect("static pattern");
        for cap in placeholder.captures_iter(&spec.template) {
            let name = &cap[1];
            if schema.index_of(name).is_none() {
                return Err(EnvError::Spec(format!(
                    "template placeholder `{name}` is not a schema option"
                )));
            }
        }
        Ok(Self {
            spec,
            pattern,
            placeholder,
        })
    }

    pub fn render(&self, config: &Configuration) -> Result<String, EnvError> {
        let mut out = String::with_capacity(self.spec.template.len());
        let mut last = 0;
        for cap in self.placeholder.captures_iter(&self.spec.template) {
            let whole = cap.get(0).expect("group 0");
            let name = &cap[1];
            let value = config
                .get(name)
                .ok_or_else(|| EnvError::Render(format!("unknown placeholder `{name}`")))?;
            out.push_str(&self.spec.template[last..whole.start()]);
            match value {
                Value::On => out.push_str(&self.spec.binary_on),
                Value::Off => out.push_str(&self.spec.binary_off),
                Value::Int(v) => out.push_str(&v.to_string()),
            }
            last = whole.end();
        }
        out.push_str(&self.spec.template[last..]);
        Ok(out)
    }

    pub fn parse_output(&self, output: &str) -> Result<f64, EnvError> {
        let cap = self
            .pattern
            .captures(output)
            .ok_or_else(|| EnvError::Parse(format!("pattern `{}` not found", self.pattern)))?;
        let text = cap
            .get(1)
            .ok_or_else(|| EnvError::Parse("capture group did not participate".into()))?
            .as_str();
        let value: f64 = text
            .trim()
            .parse()
            .map_err(|_| EnvError::Parse(format!("`{text}` is not a number")))?;
        if !(value.is_finite() && value >= 0.0) {
            return Err(EnvError::Parse(format!(
                "throughput {value} is not a valid reading"
            )));
        }
        Ok(value)
    }
}

/// Runs `sh -c command` and returns its stdout, enforcing the timeout.
fn run_phase(phase: &str, cmd: &LifecycleCommand) -> Result<String, EnvError> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&cmd.command)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| EnvError::Lifecycle {
            phase: phase.into(),
            message: format!("spawn failed: {e}"),
        })?;
    let mut stdout = child.stdout.take().expect("piped");
    let mut stderr = child.stderr.take().expect("piped");
    let out_reader = thread::spawn(move || {
        let mut buf = String::new();
        let _ = stdout.read_to_string(&mut buf);
        buf
    });
    let err_reader = thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr.read_to_string(&mut buf);
        buf
    });
    let deadline = Instant::now() + Duration::from_secs_f64(cmd.timeout_secs.max(0.0));
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(EnvError::Timeout {
                    phase: phase.into(),
                    seconds: cmd.timeout_secs,
                });
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(EnvError::Io(e.to_string())),
        }
    };
    let out = out_reader.join().unwrap_or_default();
    let err = err_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(EnvError::Lifecycle {
            phase: phase.into(),
            message: format!("{status}: {}", err.trim()),
        });
    }
    Ok(out)
}

impl Environment for ExternalEnv {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            parallel_evaluation: false,
        }
    }

    fn evaluate(&self, config: &Configuration) -> Result<f64, EnvError> {
        let rendered = self.render(config)?;
        std::fs::write(&self.spec.write_path, rendered).map_err(|e| {
            EnvError::Io(format!("writing {}: {e}", self.spec.write_path.display()))
        })?;
        if let Some(reload) = &self.spec.reload {
            run_phase("reload", reload)?;
        } else {
            if let Some(stop) = &self.spec.stop {
                run_phase("stop", stop)?;
            }
            if let Some(start) = &self.spec.start {
                run_phase("start", start)?;
            }
        }
        if self.spec.warmup_secs > 0.0 {
            thread::sleep(Duration::from_secs_f64(self.spec.warmup_secs));
        }
        let output = run_phase("benchmark", &self.spec.benchmark)?;
        self.parse_output(&output)
    }
}
