//! Drafters over both datastores and the ground-truth replay verifier.
//!
//! Replay walks each held-out conversation left to right. At every step the
//! drafter sees the tokens so far; the draft is accepted along the longest
//! root path matching the true next tokens, and the cursor advances past the
//! accepted tokens plus the one token the target would have produced itself.

pub mod experiment;
pub mod external;

use std::time::{Duration, Instant};

pub use experiment::{
    compare_experiment, load_experiment_config, write_latency_csv, write_metrics_csv,
    DraftingConfig, ExperimentConfig, ExperimentOutput, LatencyRow, MetricsRow, ReplayConfig,
    StoreKind,
};

use crate::corpus::Conversation;
use crate::crest_store::CrestStore;
use crate::suffix_store::{DescentParams, SuffixStore};
use crate::token_tree::{build_tree, DraftSequence, TokenTree};
use crate::{Result, Token};

/// A drafted tree and the context length that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draft {
    pub matched_n: usize,
    pub tree: TokenTree,
}

impl Draft {
    pub fn sequence(&self) -> DraftSequence {
        self.tree.flatten()
    }
}

pub trait Drafter: Sync {
    /// Draft for the text generated so far; `None` when nothing matches.
    fn draft(&self, generated: &[Token]) -> Result<Option<Draft>>;
}

/// Longest-suffix drafting over a suffix store.
#[derive(Debug, Clone, Copy)]
pub struct RestDrafter<'a> {
    store: &'a SuffixStore,
    params: DescentParams,
    cap: usize,
}

impl<'a> RestDrafter<'a> {
    pub fn new(store: &'a SuffixStore) -> Self {
        RestDrafter {
            store,
            params: DescentParams::default(),
            cap: crate::DEFAULT_TREE_CAP,
        }
    }

    pub fn with_params(store: &'a SuffixStore, params: DescentParams, cap: usize) -> Self {
        RestDrafter { store, params, cap }
    }
}

impl Drafter for RestDrafter<'_> {
    fn draft(&self, generated: &[Token]) -> Result<Option<Draft>> {
        let Some(hit) = self.store.longest_suffix_match(generated, &self.params)? else {
            return Ok(None);
        };
        let tree = build_tree(&hit.continuations, self.cap);
        Ok((!tree.is_empty()).then_some(Draft {
            matched_n: hit.n,
            tree,
        }))
    }
}

/// Exact-key drafting over a compacted store: the longest stored suffix of
/// the generated text wins.
#[derive(Debug, Clone, Copy)]
pub struct CrestDrafter<'a> {
    store: &'a CrestStore,
    min_n: usize,
}

impl<'a> CrestDrafter<'a> {
    pub fn new(store: &'a CrestStore) -> Self {
        Self::with_min_n(store, 1)
    }

    pub fn with_min_n(store: &'a CrestStore, min_n: usize) -> Self {
        CrestDrafter {
            store,
            min_n: min_n.max(1),
        }
    }
}

impl Drafter for CrestDrafter<'_> {
    fn draft(&self, generated: &[Token]) -> Result<Option<Draft>> {
        let top = self.store.max_n().min(generated.len());
        for n in (self.min_n..=top).rev() {
            if let Some(tree) = self.store.lookup(&generated[generated.len() - n..])? {
                return Ok(Some(Draft { matched_n: n, tree }));
            }
        }
        Ok(None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayStep {
    pub conversation: usize,
    pub position: usize,
    pub matched_n: Option<usize>,
    pub accepted: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LatencyStats {
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[Duration]) -> Self {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        let mut us: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e6).collect();
        us.sort_by(f64::total_cmp);
        let pick = |q: f64| us[((us.len() - 1) as f64 * q).round() as usize];
        LatencyStats {
            mean_us: us.iter().sum::<f64>() / us.len() as f64,
            p50_us: pick(0.5),
            p99_us: pick(0.99),
            max_us: *us.last().unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayResult {
    pub steps: Vec<ReplayStep>,
    /// Draft latency per step, parallel to `steps`.
    pub latencies: Vec<Duration>,
}

impl ReplayResult {
    pub fn drafted_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.matched_n.is_some()).count()
    }

    pub fn accepted_total(&self) -> usize {
        self.steps.iter().map(|s| s.accepted).sum()
    }

    /// Mean accepted length over steps that produced a draft.
    pub fn mean_accepted_length(&self) -> f64 {
        ratio(self.accepted_total(), self.drafted_steps())
    }

    /// Mean accepted length over every step.
    pub fn mean_accepted_all_steps(&self) -> f64 {
        ratio(self.accepted_total(), self.steps.len())
    }

    pub fn draft_hit_rate(&self) -> f64 {
        ratio(self.drafted_steps(), self.steps.len())
    }

    pub fn latency(&self) -> LatencyStats {
        LatencyStats::from_samples(&self.latencies)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn replay_conversation(
    drafter: &dyn Drafter,
    index: usize,
    tokens: &[Token],
    max_steps: usize,
    steps: &mut Vec<ReplayStep>,
    latencies: &mut Vec<Duration>,
) -> Result<()> {
    let mut p = 0;
    let mut taken = 0;
    while p < tokens.len() && taken < max_steps {
        let start = Instant::now();
        let draft = drafter.draft(&tokens[..p])?;
        latencies.push(start.elapsed());
        let (matched_n, accepted) = match &draft {
            Some(d) => (Some(d.matched_n), d.tree.accepted_length(&tokens[p..])),
            None => (None, 0),
        };
        steps.push(ReplayStep {
            conversation: index,
            position: p,
            matched_n,
            accepted,
        });
        p += accepted + 1;
        taken += 1;
    }
    Ok(())
}

/// Replays every eval conversation against `drafter`, taking at most
/// `max_steps` steps per conversation.
pub fn replay_benchmark(
    drafter: &dyn Drafter,
    eval: &[Conversation],
    max_steps: usize,
) -> Result<ReplayResult> {
    let mut steps = Vec::new();
    let mut latencies = Vec::new();
    for (i, conv) in eval.iter().enumerate() {
        replay_conversation(
            drafter,
            i,
            &conv.tokens(),
            max_steps,
            &mut steps,
            &mut latencies,
        )?;
    }
    Ok(ReplayResult { steps, latencies })
}

/// [`replay_benchmark`] with conversations spread over `threads` workers.
/// Steps come back in the same order; latencies are noisier.
pub fn replay_benchmark_parallel(
    drafter: &dyn Drafter,
    eval: &[Conversation],
    max_steps: usize,
    threads: usize,
) -> Result<ReplayResult> {
    let threads = threads.max(1).min(eval.len().max(1));
    if threads == 1 {
        return replay_benchmark(drafter, eval, max_steps);
    }
    let per = eval.len().div_ceil(threads);
    let parts: Vec<Result<ReplayResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = eval
            .chunks(per)
            .enumerate()
            .map(|(k, part)| {
                scope.spawn(move || {
                    let mut steps = Vec::new();
                    let mut latencies = Vec::new();
                    for (j, conv) in part.iter().enumerate() {
                        replay_conversation(
                            drafter,
                            k * per + j,
                            &conv.tokens(),
                            max_steps,
                            &mut steps,
                            &mut latencies,
                        )?;
                    }
                    Ok(ReplayResult { steps, latencies })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replay worker panicked"))
            .collect()
    });
    let mut out = ReplayResult {
        steps: Vec::new(),
        latencies: Vec::new(),
    };
    for part in parts {
        let part = part?;
        out.steps.extend(part.steps);
        out.latencies.extend(part.latencies);
    }
    Ok(out)
}
