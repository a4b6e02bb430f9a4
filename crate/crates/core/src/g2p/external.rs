//! External phonemizer processes.
//!
//! In [`Protocol::LineProtocol`] mode each child receives one line on stdin
//! and must answer with exactly one line on stdout before the next request.
//! Children are pooled: a request checks a child out, so no two workers
//! ever talk to the same process. [`Protocol::OneShot`] spawns a fresh
//! process per line, for tools that buffer their output (espeak-ng does).

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use super::G2pError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Protocol {
    LineProtocol,
    #[default]
    OneShot,
}

impl Protocol {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "line" | "line-protocol" => Some(Self::LineProtocol),
            "oneshot" | "one-shot" => Some(Self::OneShot),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LineProtocol => "line",
            Self::OneShot => "oneshot",
        }
    }
}

/// espeak-ng invocation producing IPA for one language. `{lang}` in any
/// argument is replaced by the backend language tag.
pub fn default_command() -> Vec<String> {
    ["espeak-ng", "-q", "--ipa", "-v", "{lang}"].iter().map(|s| s.to_string()).collect()
}

struct LiveChild {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for LiveChild {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct ExternalPool {
    program: String,
    args: Vec<String>,
    protocol: Protocol,
    idle: Mutex<Vec<LiveChild>>,
}

impl std::fmt::Debug for ExternalPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalPool")
            .field("program", &self.program)
            .field("args", &self.args)
            .field("protocol", &self.protocol)
            .finish()
    }
}

impl ExternalPool {
    pub fn new(command: &[String], language: &str, protocol: Protocol) -> Result<Self, G2pError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| G2pError::InvalidSpec("external command is empty".into()))?;
        let args = args.iter().map(|a| a.replace("{lang}", language)).collect();
        let pool = Self {
            program: program.clone(),
            args,
            protocol,
            idle: Mutex::new(Vec::new()),
        };
        // fail early if the program cannot be started at all
        if protocol == Protocol::LineProtocol {
            let child = pool.spawn()?;
            pool.idle.lock().expect("pool lock").push(child);
        } else {
            Command::new(&pool.program)
                .arg("--version")
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .status()
                .map_err(|e| G2pError::BackendUnavailable(format!("{}: {e}", pool.program)))?;
        }
        Ok(pool)
    }

    pub fn command_line(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// First line of `<program> --version`, or `unknown`.
    pub fn version(&self) -> String {
        Command::new(&self.program)
            .arg("--version")
            .stdin(Stdio::null())
            .stderr(Stdio::null())
            .output()
            .ok()
            .and_then(|o| String::from_utf8(o.stdout).ok())
            .and_then(|s| s.lines().next().map(|l| l.trim().to_string()))
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| "unknown".to_string())
    }

    fn spawn(&self) -> Result<LiveChild, G2pError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| G2pError::BackendUnavailable(format!("{}: {e}", self.program)))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(LiveChild { child, stdin, stdout })
    }

    /// Raw output for one input line, whitespace collapsed.
    pub fn request(&self, line: &str) -> Result<String, G2pError> {
        let raw = match self.protocol {
            Protocol::LineProtocol => self.request_pooled(line)?,
            Protocol::OneShot => self.request_oneshot(line)?,
        };
        Ok(raw.split_whitespace().collect::<Vec<_>>().join(" "))
    }

    fn request_pooled(&self, line: &str) -> Result<String, G2pError> {
        let checked_out = self.idle.lock().expect("pool lock").pop();
        let mut child = match checked_out {
            Some(c) => c,
            None => self.spawn()?,
        };
        let failed = |e: std::io::Error| G2pError::ExternalFailed(format!("{}: {e}", self.program));
        writeln!(child.stdin, "{line}").map_err(failed)?;
        child.stdin.flush().map_err(failed)?;
        let mut answer = String::new();
        let n = child.stdout.read_line(&mut answer).map_err(failed)?;
        if n == 0 {
            return Err(G2pError::ExternalFailed(format!("{} closed its output", self.program)));
        }
        self.idle.lock().expect("pool lock").push(child);
        Ok(answer)
    }

    fn request_oneshot(&self, line: &str) -> Result<String, G2pError> {
        let failed = |e: std::io::Error| G2pError::ExternalFailed(format!("{}: {e}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| G2pError::BackendUnavailable(format!("{}: {e}", self.program)))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            stdin.write_all(line.as_bytes()).map_err(failed)?;
            stdin.write_all(b"\n").map_err(failed)?;
        }
        let output = child.wait_with_output().map_err(failed)?;
        if !output.status.success() {
            return Err(G2pError::ExternalFailed(format!("{} exited with {}", self.program, output.status)));
        }
        String::from_utf8(output.stdout)
            .map_err(|_| G2pError::ExternalFailed(format!("{} produced invalid UTF-8", self.program)))
    }

    pub fn live_children(&self) -> usize {
        self.idle.lock().expect("pool lock").len()
    }
}
