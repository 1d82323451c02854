//! Line-delimited JSON bridge to an external verifier process.
//!
//! Each step the harness writes one line `{"tokens": [...], "parents": [...]}`
//! (parents are indices into `tokens`, `null` for children of the root; an
//! empty draft has empty arrays) and reads one line back:
//! `{"accepted": k, "next_token": t}` plus `"last_index": i` naming the final
//! accepted node whenever several draft nodes sit at depth `k`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::Drafter;
use crate::token_tree::{DraftMessage, DraftSequence};
use crate::{Error, Result, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierReply {
    pub accepted: usize,
    pub next_token: Token,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_index: Option<usize>,
}

pub fn parse_reply(line: &str) -> Result<VerifierReply> {
    serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Protocol(format!("bad reply {line:?}: {e}")))
}

/// Tokens on the accepted root path named by `reply`.
pub fn resolve_accepted(draft: &DraftSequence, reply: &VerifierReply) -> Result<Vec<Token>> {
    if reply.accepted == 0 {
        if reply.last_index.is_some() {
            return Err(Error::Protocol(
                "last_index given with zero accepted tokens".into(),
            ));
        }
        return Ok(Vec::new());
    }
    let depths: Vec<usize> = draft
        .parents
        .iter()
        .scan(Vec::<usize>::new(), |seen, p| {
            let d = p.map_or(1, |i| seen[i] + 1);
            seen.push(d);
            Some(d)
        })
        .collect();
    let at_depth: Vec<usize> = (0..depths.len())
        .filter(|&i| depths[i] == reply.accepted)
        .collect();
    let last = match (reply.last_index, at_depth.as_slice()) {
        (_, []) => {
            return Err(Error::Protocol(format!(
                "accepted {} exceeds draft depth {}",
                reply.accepted,
                depths.iter().max().copied().unwrap_or(0)
            )))
        }
        (Some(i), _) if at_depth.contains(&i) => i,
        (Some(i), _) => {
            return Err(Error::Protocol(format!(
                "last_index {i} is not a draft node at depth {}",
                reply.accepted
            )))
        }
        (None, [only]) => *only,
        (None, _) => {
            return Err(Error::Protocol(format!(
                "{} draft nodes at depth {}; last_index required",
                at_depth.len(),
                reply.accepted
            )))
        }
    };
    let mut path = Vec::with_capacity(reply.accepted);
    let mut cur = Some(last);
    while let Some(i) = cur {
        path.push(draft.tokens[i]);
        cur = draft.parents[i];
    }
    path.reverse();
    Ok(path)
}

pub struct ExternalVerifier {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

impl ExternalVerifier {
    /// Starts `command` with piped stdin/stdout. Its stderr is inherited.
    pub fn spawn(mut command: Command, timeout: Duration) -> Result<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Protocol(format!("cannot start verifier: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, replies) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ExternalVerifier {
            child,
            stdin,
            replies,
            timeout,
        })
    }

    pub fn verify(&mut self, draft: &DraftSequence) -> Result<VerifierReply> {
        let mut line = serde_json::to_string(&DraftMessage::from(draft))
            .map_err(|e| Error::Protocol(e.to_string()))?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::Protocol(format!("verifier stopped reading: {e}")))?;
        match self.replies.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => parse_reply(&reply),
            Ok(Err(e)) => Err(Error::Protocol(format!("reading reply: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Protocol(format!(
                "no reply within {:?}",
                self.timeout
            ))),
            Err(RecvTimeoutError::Disconnected) => {
                Err(Error::Protocol("verifier closed its output".into()))
            }
        }
    }
}

impl Drop for ExternalVerifier {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationStep {
    pub matched_n: Option<usize>,
    pub drafted: usize,
    pub accepted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Generation {
    /// Tokens produced after the prompt.
    pub tokens: Vec<Token>,
    pub steps: Vec<GenerationStep>,
}

/// Drafts, verifies and extends until at least `max_new_tokens` tokens
/// follow the prompt.
pub fn generate(
    drafter: &dyn Drafter,
    verifier: &mut ExternalVerifier,
    prompt: &[Token],
    max_new_tokens: usize,
) -> Result<Generation> {
    let mut text = prompt.to_vec();
    let mut steps = Vec::new();
    while text.len() - prompt.len() < max_new_tokens {
        let draft = drafter.draft(&text)?;
        let seq = draft
            .as_ref()
            .map(|d| d.sequence())
            .unwrap_or_else(empty_sequence);
        let reply = verifier.verify(&seq)?;
        let accepted = resolve_accepted(&seq, &reply)?;
        steps.push(GenerationStep {
            matched_n: draft.as_ref().map(|d| d.matched_n),
            drafted: seq.tokens.len(),
            accepted: accepted.len(),
        });
        text.extend(accepted);
        text.push(reply.next_token);
    }
    Ok(Generation {
        tokens: text.split_off(prompt.len()),
        steps,
    })
}

fn empty_sequence() -> DraftSequence {
    crate::token_tree::TokenTree::default().flatten()
}
