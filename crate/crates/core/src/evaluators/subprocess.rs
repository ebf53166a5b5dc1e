//! External solver driven through `in.json` / `out.json` files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{EvaluationRequest, EvaluationResult, Evaluator};
use crate::error::{Error, Result};

/// `in.json` as written for the external solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub run_id: String,
    pub h_mm: f64,
    pub l_mm: f64,
    pub s_mm: f64,
}

/// `out.json` as expected back from the external solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    #[serde(rename = "t_mean_K")]
    pub t_mean_k: f64,
    pub nox_massfrac: f64,
    #[serde(default)]
    pub wall_time_s: Option<f64>,
    pub mesh_cells: u64,
    pub converged: bool,
}

const POLL_INTERVAL: Duration = Duration::from_millis(5);
const TAIL_BYTES: usize = 2000;

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

fn tail(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap_or_default();
    let text = text.trim();
    let mut start = text.len().saturating_sub(TAIL_BYTES);
    while !text.is_char_boundary(start) {
        start += 1;
    }
    text[start..].to_string()
}

fn child_output(dir: &Path) -> String {
    format!(
        "stdout: {:?}; stderr: {:?}",
        tail(&dir.join("stdout.log")),
        tail(&dir.join("stderr.log"))
    )
}

/// Runs one external evaluation in `workdir/<run_id>`.
///
/// `command_template` is handed to `sh -c` after substituting `{IN}`,
/// `{OUT}` and `{WORKDIR}` with quoted absolute paths. The returned
/// `wall_time` is the measured child duration.
pub fn subprocess_evaluate(
    req: &EvaluationRequest,
    command_template: &str,
    workdir: &Path,
    timeout: Duration,
) -> Result<EvaluationResult> {
    if req.run_id.is_empty() || req.run_id.contains(['/', '\\']) || req.run_id == ".." {
        return Err(Error::Protocol {
            reason: format!("run_id {:?} is not a valid directory name", req.run_id),
        });
    }
    fs::create_dir_all(workdir)?;
    let dir: PathBuf = fs::canonicalize(workdir)?.join(&req.run_id);
    fs::create_dir_all(&dir)?;
    let in_path = dir.join("in.json");
    let out_path = dir.join("out.json");
    if out_path.exists() {
        fs::remove_file(&out_path)?;
    }
    let input = InputFile {
        run_id: req.run_id.clone(),
        h_mm: req.h,
        l_mm: req.l,
        s_mm: req.s,
    };
    fs::write(&in_path, serde_json::to_vec_pretty(&input)?)?;

    let command = command_template
        .replace("{IN}", &shell_quote(&in_path))
        .replace("{OUT}", &shell_quote(&out_path))
        .replace("{WORKDIR}", &shell_quote(&dir));
    let started = Instant::now();
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .current_dir(&dir)
        .stdin(Stdio::null())
        .stdout(fs::File::create(dir.join("stdout.log"))?)
        .stderr(fs::File::create(dir.join("stderr.log"))?)
        .spawn()?;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if started.elapsed() >= timeout {
            // already-exited races are harmless here
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::Timeout {
                seconds: timeout.as_secs_f64(),
            });
        }
        thread::sleep(POLL_INTERVAL);
    };
    let wall_time = started.elapsed().as_secs_f64();

    if !status.success() {
        return Err(Error::Protocol {
            reason: format!("command exited with {status}; {}", child_output(&dir)),
        });
    }
    let raw = fs::read(&out_path).map_err(|e| Error::Protocol {
        reason: format!("cannot read out.json: {e}; {}", child_output(&dir)),
    })?;
    let out: OutputFile = serde_json::from_slice(&raw).map_err(|e| Error::Protocol {
        reason: format!("malformed out.json: {e}; {}", child_output(&dir)),
    })?;
    Ok(EvaluationResult {
        t_mean: out.t_mean_k,
        nox: out.nox_massfrac,
        wall_time,
        mesh_cells: out.mesh_cells,
        converged: out.converged,
        message: None,
        reported_wall_time: out.wall_time_s,
    })
}

/// Evaluator that shells out to an external solver wrapper.
#[derive(Debug, Clone)]
pub struct SubprocessEvaluator {
    pub command: String,
    pub workdir: PathBuf,
    pub timeout: Duration,
}

impl SubprocessEvaluator {
    pub fn new(command: impl Into<String>, workdir: impl Into<PathBuf>, timeout: Duration) -> Self {
        Self {
            command: command.into(),
            workdir: workdir.into(),
            timeout,
        }
    }
}

impl Evaluator for SubprocessEvaluator {
    fn evaluate(&self, req: &EvaluationRequest) -> EvaluationResult {
        let started = Instant::now();
        match subprocess_evaluate(req, &self.command, &self.workdir, self.timeout) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("evaluation {} failed: {e}", req.run_id);
                EvaluationResult::failed(e.to_string(), started.elapsed().as_secs_f64())
            }
        }
    }

    fn name(&self) -> &'static str {
        "subprocess"
    }
}
