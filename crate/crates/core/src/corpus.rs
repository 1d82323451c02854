//! Corpus ingestion, flattening and sampling.
//!
//! The canonical interchange format is *token-json*: one conversation per
//! line, each line a JSON array of turns, each turn an array of token ids.
//! A whitespace tokenizer (`plain-text`) exists for demos and tests.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::fnv::Fnv1a;
use crate::{Error, Result, Token};

/// An ordered sequence of non-empty turns.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Conversation {
    turns: Vec<Vec<Token>>,
}

impl Conversation {
    pub fn new(turns: Vec<Vec<Token>>) -> Result<Self> {
        if turns.is_empty() {
            return Err(Error::Argument("conversation has no turns".into()));
        }
        if turns.iter().any(Vec::is_empty) {
            return Err(Error::Argument("conversation has an empty turn".into()));
        }
        Ok(Conversation { turns })
    }

    /// Single-turn conversation.
    pub fn from_tokens(tokens: Vec<Token>) -> Result<Self> {
        Self::new(vec![tokens])
    }

    pub fn turns(&self) -> &[Vec<Token>] {
        &self.turns
    }

    pub fn token_count(&self) -> usize {
        self.turns.iter().map(Vec::len).sum()
    }

    /// Turns concatenated in order.
    pub fn tokens(&self) -> Vec<Token> {
        self.turns.concat()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    TokenJson,
    PlainText,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token-json" => Ok(CorpusFormat::TokenJson),
            "plain-text" => Ok(CorpusFormat::PlainText),
            other => Err(Error::Argument(format!(
                "unknown corpus format `{other}` (expected token-json or plain-text)"
            ))),
        }
    }
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<Conversation>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, format)
}

/// Parses corpus text. Blank lines are skipped; line numbers in errors are
/// 1-based and count blank lines.
pub fn parse_corpus(text: &str, format: CorpusFormat) -> Result<Vec<Conversation>> {
    match format {
        CorpusFormat::TokenJson => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| parse_token_json_line(l, i + 1))
            .collect(),
        CorpusFormat::PlainText => Ok(tokenize_plain_text(text).0),
    }
}

/// Parses one token-json line into a conversation.
pub fn parse_token_json_line(line: &str, line_no: usize) -> Result<Conversation> {
    let parse_err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    let Value::Array(turns) = value else {
        return Err(parse_err("expected an array of turns".into()));
    };
    let mut out = Vec::with_capacity(turns.len());
    for turn in turns {
        let Value::Array(ids) = turn else {
            return Err(parse_err(
                "expected each turn to be an array of token ids".into(),
            ));
        };
        let mut tokens = Vec::with_capacity(ids.len());
        for id in ids {
            tokens.push(token_from_json(&id, line_no)?);
        }
        out.push(tokens);
    }
    Conversation::new(out).map_err(|e| match e {
        Error::Argument(m) => parse_err(m),
        other => other,
    })
}

fn token_from_json(value: &Value, line: usize) -> Result<Token> {
    let Value::Number(n) = value else {
        return Err(Error::Parse {
            line,
            message: format!("token id `{value}` is not a number"),
        });
    };
    if let Some(v) = n.as_u64() {
        return Token::try_from(v).map_err(|_| Error::TokenRange {
            line,
            value: v.to_string(),
        });
    }
    // Integers beyond u64 arrive as floats.
    match n.as_f64() {
        Some(f) if f.is_finite() && f >= 0.0 && f.fract() == 0.0 => Err(Error::TokenRange {
            line,
            value: n.to_string(),
        }),
        _ => Err(Error::Parse {
            line,
            message: format!("token id `{n}` is not a non-negative integer"),
        }),
    }
}

/// Parses a comma-separated token id list such as `"12, 7,9"`.
pub fn parse_token_list(text: &str) -> Result<Vec<Token>> {
    if text.trim().is_empty() {
        return Err(Error::Argument("empty token list".into()));
    }
    text.split(',')
        .map(|part| {
            let part = part.trim();
            part.parse::<Token>()
                .map_err(|e| Error::Argument(format!("bad token id `{part}` in `{text}`: {e}")))
        })
        .collect()
}

/// Whitespace tokenizer. Each non-blank line becomes a single-turn
/// conversation; word ids are assigned in first-occurrence order.
pub fn tokenize_plain_text(text: &str) -> (Vec<Conversation>, HashMap<String, Token>) {
    let mut vocab: HashMap<String, Token> = HashMap::new();
    let mut conversations = Vec::new();
    for line in text.lines() {
        let tokens: Vec<Token> = line
            .split_whitespace()
            .map(|w| {
                let next = vocab.len() as Token;
                *vocab.entry(w.to_owned()).or_insert(next)
            })
            .collect();
        if !tokens.is_empty() {
            conversations.push(Conversation {
                turns: vec![tokens],
            });
        }
    }
    (conversations, vocab)
}

/// Writes conversations in token-json format.
pub fn write_token_json<W: Write>(conversations: &[Conversation], mut out: W) -> Result<()> {
    for c in conversations {
        serde_json::to_writer(&mut out, &c.turns).map_err(|e| Error::RawIo(e.into()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// All conversations concatenated, with the start offset of each.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FlattenedDataset {
    tokens: Vec<Token>,
    boundaries: Vec<usize>,
}

impl FlattenedDataset {
    /// Builds a dataset from raw parts, checking the boundary invariants.
    pub fn from_parts(tokens: Vec<Token>, boundaries: Vec<usize>) -> Result<Self> {
        if tokens.is_empty() {
            if !boundaries.is_empty() {
                return Err(Error::Argument(
                    "boundaries given for an empty dataset".into(),
                ));
            }
        } else {
            if boundaries.first() != Some(&0) {
                return Err(Error::Argument("first boundary must be 0".into()));
            }
            if boundaries.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Argument(
                    "boundaries must be strictly increasing".into(),
                ));
            }
            if *boundaries.last().unwrap() >= tokens.len() {
                return Err(Error::Argument("last boundary must precede the end".into()));
            }
        }
        Ok(FlattenedDataset { tokens, boundaries })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn conversation_count(&self) -> usize {
        self.boundaries.len()
    }

    /// Token range of each conversation, in order.
    pub fn conversation_ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        let total = self.tokens.len();
        self.boundaries
            .iter()
            .enumerate()
            .map(move |(i, &start)| start..self.boundaries.get(i + 1).copied().unwrap_or(total))
    }

    pub fn conversations(&self) -> impl Iterator<Item = &[Token]> + '_ {
        self.conversation_ranges().map(|r| &self.tokens[r])
    }

    /// Order-independent content hash: the wrapping sum of per-conversation
    /// FNV-1a hashes, mixed with the conversation count.
    pub fn content_hash(&self) -> u64 {
        let sum = self.conversations().fold(0u64, |acc, conv| {
            let mut h = Fnv1a::default();
            h.write(&(conv.len() as u64).to_le_bytes());
            h.write_tokens(conv);
            acc.wrapping_add(h.finish())
        });
        let mut h = Fnv1a::default();
        h.write(&(self.conversation_count() as u64).to_le_bytes());
        h.write(&sum.to_le_bytes());
        h.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Order {
    #[default]
    FileOrder,
    Shuffled(u64),
}

pub fn flatten(dataset: &[Conversation], order: Order) -> FlattenedDataset {
    let mut refs: Vec<&Conversation> = dataset.iter().collect();
    if let Order::Shuffled(seed) = order {
        refs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let total = refs.iter().map(|c| c.token_count()).sum();
    let mut tokens = Vec::with_capacity(total);
    let mut boundaries = Vec::with_capacity(refs.len());
    for c in refs {
        boundaries.push(tokens.len());
        for turn in &c.turns {
            tokens.extend_from_slice(turn);
        }
    }
    FlattenedDataset { tokens, boundaries }
}

/// Picks `ceil(fraction * N)` whole conversations uniformly without
/// replacement. The sample keeps the input order.
pub fn sample_fraction(
    dataset: &[Conversation],
    fraction: f64,
    seed: u64,
) -> Result<Vec<Conversation>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!(
            "sample fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n = dataset.len();
    // Tolerate representation error such as 0.07 * 100 = 7.000000000000001.
    let k = ((fraction * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    if k == n {
        return Ok(dataset.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| dataset[i].clone()).collect())
}

/// Splits conversations into disjoint (train, eval) sets. The eval size is
/// `round(holdout_fraction * N)`, kept within `[1, N-1]` when `N >= 2`.
pub fn split_holdout(
    dataset: &[Conversation],
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<Conversation>, Vec<Conversation>)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "holdout fraction must be in (0, 1), got {holdout_fraction}"
        )));
    }
    let n = dataset.len();
    let eval_count = if n < 2 {
        0
    } else {
        ((holdout_fraction * n as f64).round() as usize).clamp(1, n - 1)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_eval = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, eval_count) {
        is_eval[i] = true;
    }
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (c, e) in dataset.iter().zip(is_eval) {
        if e {
            eval.push(c.clone());
        } else {
            train.push(c.clone());
        }
    }
    Ok((train, eval))
}
