//! Objectives implemented by an external command.
//!
//! The command runs under `sh -c` with `--budget <b>` appended. It reads the
//! configuration as one JSON object on stdin and reports the loss as the last
//! non-empty line of stdout. Anything on stderr passes through.

use std::io::{ErrorKind, Read, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use boss_core::{Configuration, EvalError};

const POLL: Duration = Duration::from_millis(5);

pub fn run_external_objective(
    command: &str,
    config: &Configuration,
    budget: f64,
    timeout: Option<Duration>,
) -> Result<f64, EvalError> {
    let input = serde_json::to_string(config).map_err(|e| EvalError::new(format!("cannot encode configuration: {e}")))?;
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(format!("{command} --budget {budget}"))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| EvalError::new(format!("cannot start `{command}`: {e}")))?;

    if let Some(mut stdin) = child.stdin.take() {
        // A command that ignores its input may exit before reading it.
        if let Err(e) = stdin.write_all(input.as_bytes()).and_then(|_| stdin.write_all(b"\n")) {
            if e.kind() != ErrorKind::BrokenPipe {
                let _ = child.kill();
                let _ = child.wait();
                return Err(EvalError::new(format!("cannot write to `{command}`: {e}")));
            }
        }
    }

    // Drain stdout on its own thread so a chatty command cannot block on a full pipe.
    let mut stdout = child.stdout.take().expect("stdout is piped");
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut buf = Vec::new();
        let res = stdout.read_to_end(&mut buf).map(|_| buf);
        let _ = tx.send(res);
    });

    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {}
            Err(e) => return Err(EvalError::new(format!("waiting for `{command}`: {e}"))),
        }
        if let Some(limit) = timeout {
            if start.elapsed() >= limit {
                let _ = child.kill();
                let _ = child.wait();
                return Err(EvalError::new(format!("`{command}` timed out after {:.3}s", limit.as_secs_f64())));
            }
        }
        thread::sleep(POLL);
    };
    if !status.success() {
        return Err(EvalError::new(format!("`{command}` failed with {status}")));
    }

    // Background processes may keep stdout open past the command's exit.
    let wait = timeout.map_or(Duration::from_secs(5), |t| t.saturating_sub(start.elapsed()).max(POLL));
    let out = match rx.recv_timeout(wait) {
        Ok(Ok(buf)) => buf,
        Ok(Err(e)) => return Err(EvalError::new(format!("reading output of `{command}`: {e}"))),
        Err(_) => return Err(EvalError::new(format!("output of `{command}` was not closed"))),
    };
    parse_loss(&String::from_utf8_lossy(&out))
}

/// The last non-empty line, as a finite decimal.
pub fn parse_loss(output: &str) -> Result<f64, EvalError> {
    let line = output
        .lines()
        .map(str::trim)
        .rfind(|l| !l.is_empty())
        .ok_or_else(|| EvalError::new("objective printed nothing"))?;
    match line.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(EvalError::new(format!("last output line `{line}` is not a finite number"))),
    }
}
