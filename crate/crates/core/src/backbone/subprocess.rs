use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backbone, BackboneOutput, Prompt};
use crate::dataset::Labels;
use crate::error::{Error, Result};

#[derive(Serialize)]
struct Request<'a> {
    context: Vec<Vec<f64>>,
    labels: &'a [usize],
    query: Vec<f64>,
}

#[derive(Deserialize)]
struct Response {
    probs: Vec<f64>,
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// External backbone speaking newline-delimited JSON on its standard
/// streams: one request `{context, labels, query}` per line, answered by one
/// line `{probs}`. Requests are serialized through a single child process.
pub struct SubprocessBackbone {
    name: String,
    n_classes: usize,
    timeout: Duration,
    channel: Mutex<Option<Channel>>,
}

impl SubprocessBackbone {
    pub fn spawn(program: &str, args: &[String], n_classes: usize, timeout: Duration) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Backbone(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(SubprocessBackbone {
            name: format!("subprocess:{program}"),
            n_classes,
            timeout,
            channel: Mutex::new(Some(Channel { child, stdin, lines })),
        })
    }

    fn exchange(&self, request: &str) -> Result<String> {
        let mut guard = self.channel.lock().map_err(|_| Error::Backbone("backbone channel poisoned".into()))?;
        let ch = guard.as_mut().ok_or_else(|| Error::Backbone("backbone process is no longer available".into()))?;
        let sent = writeln!(ch.stdin, "{request}").and_then(|_| ch.stdin.flush());
        let reply = match sent {
            Err(e) => Err(Error::Backbone(format!("write failed: {e}"))),
            Ok(()) => match ch.lines.recv_timeout(self.timeout) {
                Ok(Ok(line)) => Ok(line),
                Ok(Err(e)) => Err(Error::Backbone(format!("read failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    Err(Error::Backbone(format!("no response within {:?}", self.timeout)))
                }
                Err(RecvTimeoutError::Disconnected) => Err(Error::Backbone("process closed its output".into())),
            },
        };
        if reply.is_err() {
            // A late or partial answer would desynchronize later requests.
            if let Some(mut ch) = guard.take() {
                let _ = ch.child.kill();
                let _ = ch.child.wait();
            }
        }
        reply
    }
}

impl Backbone for SubprocessBackbone {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, prompt: &Prompt) -> Result<BackboneOutput> {
        prompt.validate()?;
        let Labels::Class(labels) = &prompt.context_labels else {
            return Err(Error::Backbone("subprocess backbones support classification only".into()));
        };
        let request = Request {
            context: prompt.context.outer_iter().map(|r| r.to_vec()).collect(),
            labels,
            query: prompt.query.to_vec(),
        };
        let line = self.exchange(&serde_json::to_string(&request)?)?;
        let response: Response =
            serde_json::from_str(&line).map_err(|e| Error::Backbone(format!("malformed response: {e}")))?;
        let p = response.probs;
        if p.len() != self.n_classes {
            return Err(Error::Backbone(format!("expected {} probabilities, got {}", self.n_classes, p.len())));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Backbone("response is not a probability vector".into()));
        }
        Ok(BackboneOutput::Probs(p))
    }
}

impl Drop for SubprocessBackbone {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.channel.lock() {
            if let Some(mut ch) = guard.take() {
                drop(ch.stdin);
                let _ = ch.child.kill();
                let _ = ch.child.wait();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn prompt() -> Prompt {
        Prompt::new(array![[0.0], [1.0]], Labels::Class(vec![0, 1]), array![0.2]).unwrap()
    }

    fn sh(script: &str, timeout_ms: u64) -> SubprocessBackbone {
        SubprocessBackbone::spawn("sh", &["-c".into(), script.into()], 2, Duration::from_millis(timeout_ms)).unwrap()
    }

    #[test]
    fn well_formed_response_is_accepted() {
        let b = sh(r#"while read line; do echo '{"probs":[0.25,0.75]}'; done"#, 5000);
        assert_eq!(b.predict(&prompt()).unwrap(), BackboneOutput::Probs(vec![0.25, 0.75]));
        assert_eq!(b.predict(&prompt()).unwrap(), BackboneOutput::Probs(vec![0.25, 0.75]));
    }

    #[test]
    fn malformed_responses_are_backbone_errors() {
        for reply in ["not json", r#"{"probs":[0.5]}"#, r#"{"probs":[0.9,0.9]}"#, r#"{"probs":[-0.5,1.5]}"#] {
            let b = sh(&format!("while read line; do echo '{reply}'; done"), 5000);
            assert!(matches!(b.predict(&prompt()), Err(Error::Backbone(_))), "{reply}");
        }
    }

    #[test]
    fn silence_times_out() {
        let b = sh("sleep 5", 200);
        assert!(matches!(b.predict(&prompt()), Err(Error::Backbone(_))));
        assert!(matches!(b.predict(&prompt()), Err(Error::Backbone(_))));
    }

    #[test]
    fn missing_program_is_reported() {
        let r = SubprocessBackbone::spawn("/nonexistent/backbone", &[], 2, Duration::from_secs(1));
        assert!(matches!(r, Err(Error::Backbone(_))));
    }
}
