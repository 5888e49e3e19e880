//! File-protocol adapter for an external simulator.
//!
//! For each batch the evaluator writes `input.csv` (`x1,...,xp`, one row per
//! point, header unless `no_header`), runs `command... <input> <output>` and
//! reads back one `z,y1,...,yq` row per input row, in order. A header line in
//! the output is tolerated. Rows with `z = 0` may leave the responses empty.
//! A run that exceeds `timeout_secs` is killed and the whole batch is reported
//! infeasible, the same as a simulation that fails to converge in time.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BenchError, Evaluator, Outcome, Problem};

fn default_timeout() -> f64 {
    3600.0
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalEvaluatorSpec {
    /// Program followed by fixed arguments; the input and output paths are appended.
    pub command: Vec<String>,
    pub p: usize,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// The command tolerates concurrent invocations.
    #[serde(default)]
    pub batch_safe: bool,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub no_header: bool,
}

#[derive(Debug)]
struct ExternalEvaluator {
    spec: ExternalEvaluatorSpec,
    serial: Mutex<()>,
}

/// Formats a real with 17 significant digits.
pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

impl ExternalEvaluator {
    fn q(&self) -> usize {
        self.spec.targets.len()
    }

    fn run(&self, xs: &[Vec<f64>]) -> Result<Vec<Outcome>, BenchError> {
        let dir = tempfile::tempdir()?;
        let input = dir.path().join("input.csv");
        let output = dir.path().join("output.csv");
        let stderr_path = dir.path().join("stderr.log");
        {
            let mut f = fs::File::create(&input)?;
            if !self.spec.no_header {
                let header: Vec<String> = (1..=self.spec.p).map(|i| format!("x{i}")).collect();
                writeln!(f, "{}", header.join(","))?;
            }
            for x in xs {
                let row: Vec<String> = x.iter().map(|v| fmt_real(*v)).collect();
                writeln!(f, "{}", row.join(","))?;
            }
        }
        let (program, args) = self
            .spec
            .command
            .split_first()
            .ok_or_else(|| BenchError::InvalidArgument("empty evaluator command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .arg(&input)
            .arg(&output)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(fs::File::create(&stderr_path)?)
            .spawn()
            .map_err(|e| BenchError::Evaluation(format!("could not start {program}: {e}")))?;

        let deadline = Instant::now() + Duration::from_secs_f64(self.spec.timeout_secs.max(0.0));
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                log::warn!("external evaluator timed out after {}s; batch marked infeasible", self.spec.timeout_secs);
                return Ok(vec![Outcome::Infeasible; xs.len()]);
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        if !status.success() {
            let tail = fs::read_to_string(&stderr_path).unwrap_or_default();
            let tail: String = tail.chars().rev().take(500).collect::<Vec<_>>().into_iter().rev().collect();
            return Err(BenchError::Evaluation(format!("evaluator exited with {status}: {}", tail.trim())));
        }
        parse_output(&output, xs.len(), self.q())
    }
}

fn parse_output(path: &Path, rows: usize, q: usize) -> Result<Vec<Outcome>, BenchError> {
    let text = fs::read_to_string(path)
        .map_err(|e| BenchError::Format(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::with_capacity(rows);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let z = match fields[0].parse::<f64>() {
            Ok(z) => z,
            Err(_) if lineno == 0 => continue,
            Err(_) => return Err(BenchError::Format(format!("line {}: bad feasibility flag {:?}", lineno + 1, fields[0]))),
        };
        if z == 0.0 {
            out.push(Outcome::Infeasible);
            continue;
        }
        if z != 1.0 {
            return Err(BenchError::Format(format!("line {}: feasibility flag must be 0 or 1", lineno + 1)));
        }
        if fields.len() != q + 1 {
            return Err(BenchError::Format(format!(
                "line {}: expected {} columns, found {}",
                lineno + 1,
                q + 1,
                fields.len()
            )));
        }
        let y = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| BenchError::Format(format!("line {}: non-numeric response", lineno + 1)))?;
        out.push(Outcome::Feasible(y));
    }
    if out.len() != rows {
        return Err(BenchError::Format(format!("expected {rows} output rows, found {}", out.len())));
    }
    Ok(out)
}

impl Evaluator for ExternalEvaluator {
    fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Outcome>, BenchError> {
        if self.spec.batch_safe && self.spec.workers > 1 && xs.len() > 1 {
            let chunk = xs.len().div_ceil(self.spec.workers);
            let chunks: Vec<&[Vec<f64>]> = xs.chunks(chunk).collect();
            let parts = crate::par::try_map(&chunks, |c| self.run(c))?;
            return Ok(parts.into_iter().flatten().collect());
        }
        let _guard = self.serial.lock().unwrap_or_else(|e| e.into_inner());
        self.run(xs)
    }
}

pub fn external_problem(spec: ExternalEvaluatorSpec) -> Result<Problem, BenchError> {
    if spec.command.is_empty() {
        return Err(BenchError::InvalidArgument("external evaluator needs a command".into()));
    }
    if !(spec.timeout_secs > 0.0) {
        return Err(BenchError::InvalidArgument("timeout must be positive".into()));
    }
    let name = format!("external:{}", spec.command[0]);
    let (p, targets, weights) = (spec.p, spec.targets.clone(), spec.weights.clone());
    Problem::new(name, p, targets, weights, Arc::new(ExternalEvaluator { spec, serial: Mutex::new(()) }))
}
