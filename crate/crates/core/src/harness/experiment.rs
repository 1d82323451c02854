use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Deserialize;

use super::{replay_benchmark, replay_benchmark_parallel, CrestDrafter, RestDrafter};
use crate::corpus::{flatten, load_corpus, sample_fraction, split_holdout, CorpusFormat, Order};
use crate::crest_store::{build_crest_store, BuildParams, CrestStore};
use crate::ngram_select::top_t_combined;
use crate::suffix_store::{DescentParams, SuffixStore};
use crate::{Error, Result, Token};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub split: SplitConfig,
    pub rest: RestConfig,
    pub crest: CrestConfig,
    #[serde(default)]
    pub drafting: DraftingConfig,
    #[serde(default)]
    pub replay: ReplayConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub path: PathBuf,
    pub format: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub holdout_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestConfig {
    pub chunk_size: usize,
    /// Fractions of the training conversations, each in (0, 1].
    pub fractions: Vec<f64>,
    pub sample_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrestConfig {
    pub max_n: usize,
    pub per_n_budgets: Vec<usize>,
    #[serde(default)]
    pub exhaustive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DraftingConfig {
    pub cap: usize,
    pub max_matches: usize,
    pub continuation_len: usize,
    pub rest_max_n: usize,
    pub rest_min_n: usize,
    pub crest_min_n: usize,
}

impl Default for DraftingConfig {
    fn default() -> Self {
        let d = DescentParams::default();
        DraftingConfig {
            cap: crate::DEFAULT_TREE_CAP,
            max_matches: d.max_matches,
            continuation_len: d.continuation_len,
            rest_max_n: d.max_n,
            rest_min_n: d.min_n,
            crest_min_n: 1,
        }
    }
}

impl DraftingConfig {
    fn descent(&self) -> DescentParams {
        DescentParams {
            max_n: self.rest_max_n,
            min_n: self.rest_min_n,
            max_matches: self.max_matches,
            continuation_len: self.continuation_len,
        }
    }

    fn build_params(&self, exhaustive: bool) -> BuildParams {
        let p = BuildParams {
            cap: self.cap,
            max_matches: self.max_matches,
            continuation_len: self.continuation_len,
        };
        if exhaustive {
            p.exhaustive()
        } else {
            p
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    /// Steps per eval conversation; absent means unlimited.
    pub max_steps: Option<usize>,
    pub threads: usize,
    /// When false, latency columns are left empty so the CSVs are
    /// byte-for-byte reproducible.
    pub record_latency: bool,
    /// Probe queries per store for the latency-scaling rows.
    pub latency_probes: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            max_steps: None,
            threads: 1,
            record_latency: true,
            latency_probes: 2000,
        }
    }
}

/// Reads and validates a TOML experiment config. Relative paths are resolved
/// against the config file's directory.
pub fn load_experiment_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    if cfg.corpus.path.is_relative() {
        cfg.corpus.path = base.join(&cfg.corpus.path);
    }
    if cfg.output_dir.is_relative() {
        cfg.output_dir = base.join(&cfg.output_dir);
    }
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.corpus
            .format
            .parse::<CorpusFormat>()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.split.holdout_fraction > 0.0 && self.split.holdout_fraction < 1.0) {
            return bad(format!(
                "split.holdout_fraction must be in (0, 1), got {}",
                self.split.holdout_fraction
            ));
        }
        if self.rest.chunk_size < 2 {
            return bad("rest.chunk_size must be at least 2".into());
        }
        if let Some(f) = self
            .rest
            .fractions
            .iter()
            .find(|f| !(**f > 0.0 && **f <= 1.0))
        {
            return bad(format!("rest.fractions entries must be in (0, 1], got {f}"));
        }
        if self.crest.max_n == 0 || self.crest.max_n > u8::MAX as usize {
            return bad(format!(
                "crest.max_n must be in 1..=255, got {}",
                self.crest.max_n
            ));
        }
        if self.crest.per_n_budgets.contains(&0) {
            return bad("crest.per_n_budgets entries must be positive".into());
        }
        let d = &self.drafting;
        if d.cap == 0 || d.max_matches == 0 || d.continuation_len == 0 {
            return bad("drafting.cap, max_matches and continuation_len must be positive".into());
        }
        if d.rest_min_n == 0 || d.rest_min_n > d.rest_max_n || d.crest_min_n == 0 {
            return bad("drafting gram bounds must satisfy 1 <= rest_min_n <= rest_max_n and crest_min_n >= 1".into());
        }
        if self.replay.threads == 0 {
            return bad("replay.threads must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreKind {
    Rest,
    Crest,
}

impl fmt::Display for StoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StoreKind::Rest => "rest",
            StoreKind::Crest => "crest",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub store_label: String,
    pub kind: StoreKind,
    pub bytes: u64,
    /// Tokens for suffix stores, entries for compact stores.
    pub keys_or_tokens: u64,
    pub mean_accepted_length: f64,
    pub draft_hit_rate: f64,
    pub mean_draft_latency_us: Option<f64>,
    pub mean_accepted_all_steps: f64,
}

/// Per-store query cost. `mean_work` counts suffix comparisons for suffix
/// stores and scanned bucket entries for compact stores.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRow {
    pub store_label: String,
    pub kind: StoreKind,
    pub keys_or_tokens: u64,
    pub longest_chunk: u64,
    pub probes: usize,
    pub mean_work: f64,
    pub mean_query_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub metrics: Vec<MetricsRow>,
    pub latency: Vec<LatencyRow>,
    pub metrics_path: PathBuf,
    pub latency_path: PathBuf,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "store_label,kind,bytes,keys_or_tokens,mean_accepted_length,draft_hit_rate,mean_draft_latency_us,mean_accepted_length_all_steps"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{},{:.6}",
            r.store_label,
            r.kind,
            r.bytes,
            r.keys_or_tokens,
            r.mean_accepted_length,
            r.draft_hit_rate,
            opt(r.mean_draft_latency_us),
            r.mean_accepted_all_steps
        )?;
    }
    Ok(())
}

pub fn write_latency_csv<W: Write>(rows: &[LatencyRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "store_label,kind,keys_or_tokens,longest_chunk,probes,mean_work,mean_query_us"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.6},{}",
            r.store_label,
            r.kind,
            r.keys_or_tokens,
            r.longest_chunk,
            r.probes,
            r.mean_work,
            opt(r.mean_query_us)
        )?;
    }
    Ok(())
}

fn percent_label(fraction: f64) -> String {
    let pct = fraction * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as u64)
    } else {
        format!("{pct}")
    }
}

/// Evenly spaced bigram contexts from the eval split, used to probe suffix
/// store search cost.
fn rest_probes(eval_tokens: &[Vec<Token>], count: usize) -> Vec<Vec<Token>> {
    let all: Vec<&[Token]> = eval_tokens.iter().flat_map(|c| c.windows(2)).collect();
    if all.is_empty() || count == 0 {
        return Vec::new();
    }
    let step = (all.len() / count).max(1);
    all.iter()
        .step_by(step)
        .take(count)
        .map(|w| w.to_vec())
        .collect()
}

fn rest_latency(
    label: &str,
    store: &SuffixStore,
    probes: &[Vec<Token>],
    max_matches: usize,
    timed: bool,
) -> Result<LatencyRow> {
    let start = Instant::now();
    let mut work = 0u64;
    for p in probes {
        work += store.find_matches(p, max_matches)?.comparisons;
    }
    let elapsed = start.elapsed();
    let n = probes.len().max(1) as f64;
    Ok(LatencyRow {
        store_label: label.to_owned(),
        kind: StoreKind::Rest,
        keys_or_tokens: store.token_count() as u64,
        longest_chunk: store.chunks().iter().map(|c| c.len()).max().unwrap_or(0) as u64,
        probes: probes.len(),
        mean_work: work as f64 / n,
        mean_query_us: timed.then(|| elapsed.as_secs_f64() * 1e6 / n),
    })
}

fn crest_latency(label: &str, store: &CrestStore, count: usize, timed: bool) -> Result<LatencyRow> {
    let entries = store.entries()?;
    let step = (entries.len() / count.max(1)).max(1);
    let keys: Vec<&[Token]> = entries
        .iter()
        .step_by(step)
        .take(count)
        .map(|e| e.key.as_slice())
        .collect();
    let start = Instant::now();
    let mut work = 0u64;
    for k in &keys {
        work += store.lookup_traced(k)?.scanned as u64;
    }
    let elapsed = start.elapsed();
    let n = keys.len().max(1) as f64;
    Ok(LatencyRow {
        store_label: label.to_owned(),
        kind: StoreKind::Crest,
        keys_or_tokens: store.entry_count(),
        longest_chunk: 0,
        probes: keys.len(),
        mean_work: work as f64 / n,
        mean_query_us: timed.then(|| elapsed.as_secs_f64() * 1e6 / n),
    })
}

/// Builds every configured store over the training split, replays the
/// holdout against each and writes `metrics.csv` and `latency.csv` into the
/// output directory.
pub fn compare_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if !cfg.corpus.path.is_file() {
        return Err(Error::Config(format!(
            "corpus file {} does not exist",
            cfg.corpus.path.display()
        )));
    }
    let format: CorpusFormat = cfg.corpus.format.parse()?;
    let corpus = load_corpus(&cfg.corpus.path, format)?;
    if corpus.len() < 2 {
        return Err(Error::Config(
            "corpus needs at least two conversations to hold one out".into(),
        ));
    }
    let (train, eval) = split_holdout(&corpus, cfg.split.holdout_fraction, cfg.split.seed)?;
    let eval_tokens: Vec<Vec<Token>> = eval.iter().map(|c| c.tokens()).collect();
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;

    let d = cfg.drafting;
    let max_steps = cfg.replay.max_steps.unwrap_or(usize::MAX);
    let timed = cfg.replay.record_latency;
    let replay = |drafter: &dyn super::Drafter| {
        if cfg.replay.threads > 1 {
            replay_benchmark_parallel(drafter, &eval, max_steps, cfg.replay.threads)
        } else {
            replay_benchmark(drafter, &eval, max_steps)
        }
    };
    let probes = rest_probes(&eval_tokens, cfg.replay.latency_probes);
    let mut metrics = Vec::new();
    let mut latency = Vec::new();

    for &fraction in &cfg.rest.fractions {
        let label = format!("rest-{}pct", percent_label(fraction));
        let subset = sample_fraction(&train, fraction, cfg.rest.sample_seed)?;
        let store = SuffixStore::build(&flatten(&subset, Order::FileOrder), cfg.rest.chunk_size)?;
        let path = cfg.output_dir.join(format!("{label}.rsds"));
        store.save(&path)?;
        let bytes = fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
        let result = replay(&RestDrafter::with_params(&store, d.descent(), d.cap))?;
        log::info!(
            "{label}: mean accepted {:.4}",
            result.mean_accepted_length()
        );
        metrics.push(MetricsRow {
            store_label: label.clone(),
            kind: StoreKind::Rest,
            bytes,
            keys_or_tokens: store.token_count() as u64,
            mean_accepted_length: result.mean_accepted_length(),
            draft_hit_rate: result.draft_hit_rate(),
            mean_draft_latency_us: timed.then(|| result.latency().mean_us),
            mean_accepted_all_steps: result.mean_accepted_all_steps(),
        });
        latency.push(rest_latency(&label, &store, &probes, d.max_matches, timed)?);
    }

    if !cfg.crest.per_n_budgets.is_empty() {
        let train_flat = flatten(&train, Order::FileOrder);
        let source = SuffixStore::build(&train_flat, cfg.rest.chunk_size)?;
        let params = d.build_params(cfg.crest.exhaustive);
        for &budget in &cfg.crest.per_n_budgets {
            let label = format!("crest-n{}-t{budget}", cfg.crest.max_n);
            let selection = top_t_combined(&train_flat, cfg.crest.max_n, budget)?;
            let path = cfg.output_dir.join(format!("{label}.crst"));
            build_crest_store(&selection, &source, &params, &path)?;
            let store = CrestStore::open(&path)?;
            let result = replay(&CrestDrafter::with_min_n(&store, d.crest_min_n))?;
            log::info!(
                "{label}: mean accepted {:.4}",
                result.mean_accepted_length()
            );
            metrics.push(MetricsRow {
                store_label: label.clone(),
                kind: StoreKind::Crest,
                bytes: store.byte_len(),
                keys_or_tokens: store.entry_count(),
                mean_accepted_length: result.mean_accepted_length(),
                draft_hit_rate: result.draft_hit_rate(),
                mean_draft_latency_us: timed.then(|| result.latency().mean_us),
                mean_accepted_all_steps: result.mean_accepted_all_steps(),
            });
            latency.push(crest_latency(
                &label,
                &store,
                cfg.replay.latency_probes,
                timed,
            )?);
        }
    }

    let metrics_path = cfg.output_dir.join("metrics.csv");
    let latency_path = cfg.output_dir.join("latency.csv");
    let mut buf = Vec::new();
    write_metrics_csv(&metrics, &mut buf)?;
    fs::write(&metrics_path, &buf).map_err(|e| Error::io(&metrics_path, e))?;
    buf.clear();
    write_latency_csv(&latency, &mut buf)?;
    fs::write(&latency_path, &buf).map_err(|e| Error::io(&latency_path, e))?;
    Ok(ExperimentOutput {
        metrics,
        latency,
        metrics_path,
        latency_path,
    })
}
