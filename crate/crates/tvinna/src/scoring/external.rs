//! Bridges to scorers living outside this process.
//!
//! Both speak the same JSONL protocol: request `{"id", "text"}`, response
//! `{"id", "logprob", "tokens"}`, where `id` is the SHA-256 hex digest of
//! the UTF-8 text. The live bridge pipes requests through a child process,
//! one response line per request line, strictly in order. The precomputed
//! bridge reads a file of response lines up front; captured backend output
//! therefore scores identically when replayed from a file.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{sha256_hex, Score, Scorer, ScoringError};

#[derive(Serialize)]
struct Request<'a> {
    id: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct Response {
    id: String,
    logprob: f64,
    tokens: u64,
}

fn validate_response(resp: &Response, expected_id: &str) -> Result<Score, ScoringError> {
    if resp.id != expected_id {
        return Err(ScoringError::Protocol {
            reason: format!("response id '{}' does not match request", resp.id),
        });
    }
    if !resp.logprob.is_finite() {
        return Err(ScoringError::NonFinite {
            id: resp.id.clone(),
        });
    }
    if resp.tokens == 0 {
        return Err(ScoringError::Protocol {
            reason: format!("response for id '{}' reports zero tokens", resp.id),
        });
    }
    Ok(Score {
        logprob: resp.logprob,
        tokens: resp.tokens,
    })
}

struct ProcessIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for ProcessIo {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Scores by round-tripping texts through a child process. One request is
/// in flight at a time; a garbled response fails that text only, since the
/// line-per-line framing keeps the stream aligned.
pub struct ExternalProcessScorer {
    io: Mutex<ProcessIo>,
}

impl ExternalProcessScorer {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, ScoringError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| ScoringError::Backend {
                reason: format!("failed to start '{program}': {e}"),
            })?;
        let stdin = child.stdin.take().expect("stdin was piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout was piped"));
        Ok(ExternalProcessScorer {
            io: Mutex::new(ProcessIo {
                child,
                stdin,
                stdout,
            }),
        })
    }

    pub fn from_executable(path: &Path) -> Result<Self, ScoringError> {
        // Resolve before spawning: a bare file name would otherwise go
        // through PATH lookup instead of naming the validated file.
        let resolved = path.canonicalize().map_err(|source| ScoringError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::spawn(&resolved.to_string_lossy(), &[])
    }
}

impl Scorer for ExternalProcessScorer {
    fn score(&self, text: &str) -> Result<Score, ScoringError> {
        if text.is_empty() {
            return Err(ScoringError::EmptyText);
        }
        let id = sha256_hex(text.as_bytes());
        let request = serde_json::to_string(&Request { id: &id, text }).expect("request is json");
        let mut io = self.io.lock().expect("scorer mutex is never poisoned");
        io.stdin
            .write_all(request.as_bytes())
            .and_then(|_| io.stdin.write_all(b"\n"))
            .and_then(|_| io.stdin.flush())
            .map_err(|e| ScoringError::Backend {
                reason: format!("write to backend failed: {e}"),
            })?;
        let mut line = String::new();
        let n = io
            .stdout
            .read_line(&mut line)
            .map_err(|e| ScoringError::Backend {
                reason: format!("read from backend failed: {e}"),
            })?;
        if n == 0 {
            return Err(ScoringError::Backend {
                reason: "backend closed its output".to_string(),
            });
        }
        let resp: Response = serde_json::from_str(line.trim_end()).map_err(|e| {
            ScoringError::Protocol {
                reason: format!("unparsable response line: {e}"),
            }
        })?;
        validate_response(&resp, &id)
    }
}

/// Scores from a file of protocol responses, keyed by text digest.
#[derive(Debug)]
pub struct PrecomputedScorer {
    scores: BTreeMap<String, Score>,
}

impl PrecomputedScorer {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScoringError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScoringError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut scores = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let resp: Response =
                serde_json::from_str(line).map_err(|e| ScoringError::BadScoreFile {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
            let score = validate_response(&resp, &resp.id.clone()).map_err(|e| {
                ScoringError::BadScoreFile {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason: e.to_string(),
                }
            })?;
            scores.insert(resp.id, score);
        }
        Ok(PrecomputedScorer { scores })
    }

    /// Render scores for `texts` as protocol response lines, the format
    /// [`load`] reads back.
    pub fn capture(
        texts: &[String],
        scorer: &dyn Scorer,
    ) -> Result<String, ScoringError> {
        let mut out = String::new();
        for text in texts {
            let score = scorer.score(text)?;
            let id = sha256_hex(text.as_bytes());
            let line = serde_json::json!({
                "id": id,
                "logprob": score.logprob,
                "tokens": score.tokens,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        Ok(out)
    }
}

impl Scorer for PrecomputedScorer {
    fn score(&self, text: &str) -> Result<Score, ScoringError> {
        if text.is_empty() {
            return Err(ScoringError::EmptyText);
        }
        let id = sha256_hex(text.as_bytes());
        self.scores
            .get(&id)
            .copied()
            .ok_or(ScoringError::Missing { id })
    }
}

/// Open a scorer from a path: an executable becomes a live process bridge,
/// anything else is read as a precomputed score file.
pub fn external_scorer(path: &Path) -> Result<Box<dyn Scorer>, ScoringError> {
    let meta = std::fs::metadata(path).map_err(|source| ScoringError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let executable = {
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            meta.is_file() && meta.permissions().mode() & 0o111 != 0
        }
        #[cfg(not(unix))]
        {
            false
        }
    };
    if executable {
        Ok(Box::new(ExternalProcessScorer::from_executable(path)?))
    } else {
        Ok(Box::new(PrecomputedScorer::load(path)?))
    }
}
