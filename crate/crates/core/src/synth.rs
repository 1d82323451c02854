//! Seeded synthetic corpora with Zipfian n-gram statistics.
//!
//! Tokens follow a Zipf law over the vocabulary. Most tokens are not drawn
//! independently though: a token may instead be picked from a short,
//! Zipf-ranked successor list owned by the previous one, two or three tokens. Successor lists are themselves filled from the base
//! distribution, so the unigram marginal keeps its heavy tail while frequent
//! contexts get skewed, partly predictable continuations. On top of that, a
//! library of fixed phrases with Zipf-distributed popularity is spliced in
//! verbatim, so longer contexts are sometimes highly predictive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::corpus::Conversation;
use crate::fnv::hash_tokens;
use crate::{Error, Result, Token};

#[derive(Debug, Clone, PartialEq)]
pub struct ZipfCorpusConfig {
    pub vocab: u32,
    pub conversations: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Exponent of the base unigram law.
    pub exponent: f64,
    /// Length of each context's successor list.
    pub successors: u32,
    /// Exponent of the rank law inside a successor list.
    pub successor_exponent: f64,
    /// `context_probs[k]` is the probability that the next token comes from
    /// the successor list of the previous `k + 1` tokens.
    pub context_probs: [f64; 3],
    /// Number of distinct phrases in the library; 0 disables phrases.
    pub phrases: u32,
    pub phrase_min_len: usize,
    pub phrase_max_len: usize,
    /// Exponent of the phrase popularity law.
    pub phrase_exponent: f64,
    /// Probability of starting a phrase at any position.
    pub p_phrase: f64,
    /// Maximum number of turns each conversation is split into.
    pub max_turns: usize,
    pub seed: u64,
}

impl Default for ZipfCorpusConfig {
    fn default() -> Self {
        ZipfCorpusConfig {
            vocab: 4096,
            conversations: 2000,
            min_len: 200,
            max_len: 800,
            exponent: 1.1,
            successors: 8,
            successor_exponent: 2.0,
            context_probs: [0.1, 0.3, 0.5],
            phrases: 20_000,
            phrase_min_len: 4,
            phrase_max_len: 24,
            phrase_exponent: 1.0,
            p_phrase: 0.03,
            max_turns: 4,
            seed: 0x5eed,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Inverse-CDF sampler for the base law.
struct BaseLaw {
    cdf: Vec<f64>,
}

impl BaseLaw {
    fn new(vocab: u32, exponent: f64) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (1..=vocab)
            .map(|k| {
                acc += (k as f64).powf(-exponent);
                acc
            })
            .collect();
        for c in &mut cdf {
            *c /= acc;
        }
        BaseLaw { cdf }
    }

    fn token(&self, u: f64) -> Token {
        let i = self.cdf.partition_point(|&c| c <= u);
        i.min(self.cdf.len() - 1) as Token
    }

    fn token_from_hash(&self, h: u64) -> Token {
        self.token((h >> 11) as f64 / (1u64 << 53) as f64)
    }
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn zipf_corpus(cfg: &ZipfCorpusConfig) -> Result<Vec<Conversation>> {
    if cfg.vocab < 2
        || cfg.min_len == 0
        || cfg.min_len > cfg.max_len
        || cfg.max_turns == 0
        || cfg.successors == 0
        || !(cfg.exponent > 0.0)
        || cfg.context_probs.iter().any(|p| !(*p >= 0.0))
        || cfg.context_probs.iter().sum::<f64>() > 1.0
        || !(0.0..=1.0).contains(&cfg.p_phrase)
        || (cfg.phrases > 0 && (cfg.phrase_min_len == 0 || cfg.phrase_min_len > cfg.phrase_max_len))
    {
        return Err(Error::Argument(format!(
            "invalid synthetic corpus config {cfg:?}"
        )));
    }
    let base = BaseLaw::new(cfg.vocab, cfg.exponent);
    let rank = Zipf::new(f64::from(cfg.successors), cfg.successor_exponent)
        .map_err(|e| Error::Argument(format!("successor law: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let library: Vec<Vec<Token>> = (0..cfg.phrases)
        .map(|_| {
            let len = rng.random_range(cfg.phrase_min_len..=cfg.phrase_max_len);
            (0..len).map(|_| base.token(rng.random())).collect()
        })
        .collect();
    let popularity = if library.is_empty() {
        None
    } else {
        Some(
            Zipf::new(library.len() as f64, cfg.phrase_exponent)
                .map_err(|e| Error::Argument(format!("phrase law: {e}")))?,
        )
    };
    let mut out = Vec::with_capacity(cfg.conversations);
    for _ in 0..cfg.conversations {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut tokens: Vec<Token> = Vec::with_capacity(len);
        while tokens.len() < len {
            if let Some(pop) = &popularity {
                if rng.random_bool(cfg.p_phrase) {
                    let phrase = &library[pop.sample(&mut rng) as usize - 1];
                    let take = phrase.len().min(len - tokens.len());
                    tokens.extend_from_slice(&phrase[..take]);
                    continue;
                }
            }
            let i = tokens.len();
            let mut roll: f64 = rng.random();
            let mut state = None;
            for (k, p) in cfg.context_probs.iter().enumerate().rev() {
                if roll < *p {
                    if i > k {
                        state = Some(hash_tokens(&tokens[i - k - 1..i]).rotate_left(17 * k as u32));
                    }
                    break;
                }
                roll -= p;
            }
            let t = match state {
                Some(state) => {
                    let r = rank.sample(&mut rng) as u64;
                    base.token_from_hash(splitmix(state ^ r.wrapping_mul(0x2545_f491_4f6c_dd1d)))
                }
                None => base.token(rng.random()),
            };
            tokens.push(t);
        }
        let turns = rng.random_range(1..=cfg.max_turns.min(len));
        let mut cuts: Vec<usize> = (0..turns - 1).map(|_| rng.random_range(1..len)).collect();
        cuts.sort_unstable();
        cuts.dedup();
        let mut pieces = Vec::with_capacity(cuts.len() + 1);
        let mut start = 0;
        for c in cuts.into_iter().chain([len]) {
            pieces.push(tokens[start..c].to_vec());
            start = c;
        }
        out.push(Conversation::new(pieces)?);
    }
    Ok(out)
}
