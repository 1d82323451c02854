use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crest_core::corpus::{
    flatten, load_corpus, parse_token_list, write_token_json, CorpusFormat, Order,
};
use crest_core::crest_store::{self, build_crest_store, BuildParams, CrestStore};
use crest_core::harness::external::{generate, ExternalVerifier};
use crest_core::harness::{
    compare_experiment, load_experiment_config, CrestDrafter, Drafter, RestDrafter,
};
use crest_core::ngram_select::{frequency_report, top_t_combined, write_frequency_csv};
use crest_core::suffix_store::{self, DescentParams, SuffixStore};
use crest_core::synth::{zipf_corpus, ZipfCorpusConfig};
use crest_core::token_tree::{build_tree, TokenTree};
use crest_core::Error;

#[derive(Parser)]
#[command(
    name = "crest",
    version,
    about = "Build, inspect and benchmark n-gram drafting datastores"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a suffix-array store from a corpus.
    BuildRest(BuildRestArgs),
    /// Build a compact n-gram store, computing trees through a suffix store.
    BuildCrest(BuildCrestArgs),
    /// Write the n-gram frequency report as CSV.
    Analyze(AnalyzeArgs),
    /// Run a TOML-configured comparison experiment.
    Bench(BenchArgs),
    /// Print the draft tree stored for an exact context.
    Query(QueryArgs),
    /// Generate a seeded synthetic corpus in token-json format.
    Synth(SynthArgs),
    /// Draft against a store and verify with an external process.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// token-json or plain-text
    #[arg(long, default_value = "token-json")]
    format: CorpusFormat,
}

impl CorpusArgs {
    fn load(&self) -> crest_core::Result<Vec<crest_core::corpus::Conversation>> {
        load_corpus(&self.corpus, self.format)
    }
}

#[derive(Args)]
struct BuildRestArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    out: PathBuf,
    /// Maximum tokens per chunk.
    #[arg(long, default_value_t = 1 << 24)]
    chunk_size: usize,
    /// Shuffle conversations with this seed before flattening.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BuildCrestArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Suffix store built from the same corpus.
    #[arg(long)]
    rest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    max_n: usize,
    #[arg(long)]
    per_n_budget: usize,
    #[arg(long, default_value_t = crest_core::DEFAULT_TREE_CAP)]
    cap: usize,
    #[arg(long, default_value_t = crest_core::DEFAULT_MAX_MATCHES)]
    max_matches: usize,
    #[arg(long, default_value_t = crest_core::DEFAULT_CONTINUATION_LEN)]
    continuation_len: usize,
    /// Use every occurrence of each key instead of the first max-matches.
    #[arg(long)]
    exhaustive: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = 4)]
    max_n: usize,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    /// A .rsds or .crst store; the kind is detected from the file header.
    #[arg(long)]
    store: PathBuf,
    /// Comma-separated token ids.
    #[arg(long)]
    context: String,
    #[arg(long, default_value_t = crest_core::DEFAULT_TREE_CAP)]
    cap: usize,
    #[arg(long, default_value_t = crest_core::DEFAULT_MAX_MATCHES)]
    max_matches: usize,
    #[arg(long, default_value_t = crest_core::DEFAULT_CONTINUATION_LEN)]
    continuation_len: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    conversations: usize,
    #[arg(long, default_value_t = 4096)]
    vocab: u32,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    store: PathBuf,
    /// Comma-separated prompt token ids.
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = 64)]
    max_new_tokens: usize,
    /// Milliseconds to wait for each verifier reply.
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
    /// Verifier program and its arguments.
    #[arg(last = true, required = true)]
    verifier: Vec<String>,
}

enum Store {
    Rest(SuffixStore),
    Crest(CrestStore),
}

fn open_store(path: &Path) -> crest_core::Result<Store> {
    let mut magic = [0u8; 4];
    let mut file = File::open(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    file.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: file too short", path.display())))?;
    match &magic {
        m if m == suffix_store::MAGIC => Ok(Store::Rest(SuffixStore::load(path)?)),
        m if m == crest_store::MAGIC => Ok(Store::Crest(CrestStore::open(path)?)),
        _ => Err(Error::Format(format!(
            "{}: unknown store magic {magic:?}",
            path.display()
        ))),
    }
}

fn build_rest(a: &BuildRestArgs) -> anyhow::Result<()> {
    let convs = a.corpus.load()?;
    let order = a.seed.map_or(Order::FileOrder, Order::Shuffled);
    let flat = flatten(&convs, order);
    let store = SuffixStore::build(&flat, a.chunk_size)?;
    store.save(&a.out)?;
    println!("conversations: {}", flat.conversation_count());
    println!("tokens: {}", store.token_count());
    println!("chunks: {}", store.chunks().len());
    println!("bytes: {}", store.encoded_len());
    Ok(())
}

fn build_crest(a: &BuildCrestArgs) -> anyhow::Result<()> {
    let convs = a.corpus.load()?;
    let flat = flatten(&convs, Order::FileOrder);
    let source = SuffixStore::load(&a.rest)?;
    let (corpus, store) = (flat.content_hash(), source.content_hash());
    if corpus != store {
        return Err(Error::CorpusMismatch { corpus, store }.into());
    }
    let selection = top_t_combined(&flat, a.max_n, a.per_n_budget)?;
    let params = BuildParams {
        cap: a.cap,
        max_matches: a.max_matches,
        continuation_len: a.continuation_len,
    };
    let params = if a.exhaustive {
        params.exhaustive()
    } else {
        params
    };
    let report = build_crest_store(&selection, &source, &params, &a.out)?;
    println!(
        "{:>3} {:>10} {:>10} {:>10} {:>10}",
        "n", "selected", "kept", "empty", "absent"
    );
    for (n, c) in &report.per_n {
        println!(
            "{n:>3} {:>10} {:>10} {:>10} {:>10}",
            c.selected, c.kept, c.dropped_empty, c.absent
        );
    }
    println!("entries: {}", report.entries);
    println!("bytes: {}", report.bytes);
    println!("mean tree size: {:.2}", report.mean_tree_size);
    let label = a
        .out
        .file_stem()
        .map_or_else(|| "store".into(), |s| s.to_string_lossy().into_owned());
    CrestStore::open(&a.out)?
        .stats()?
        .write_table(&label, io::stdout().lock())?;
    Ok(())
}

fn analyze(a: &AnalyzeArgs) -> anyhow::Result<()> {
    let flat = flatten(&a.corpus.load()?, Order::FileOrder);
    let rows = frequency_report(&flat, a.max_n)?;
    match &a.out {
        Some(path) => {
            let file =
                File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(file);
            write_frequency_csv(&rows, &mut w)?;
            w.flush()?;
        }
        None => write_frequency_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn bench(a: &BenchArgs) -> anyhow::Result<()> {
    let cfg = load_experiment_config(&a.config)?;
    let out = compare_experiment(&cfg)?;
    print!("{}", fs::read_to_string(&out.metrics_path)?);
    eprintln!(
        "wrote {} and {}",
        out.metrics_path.display(),
        out.latency_path.display()
    );
    Ok(())
}

fn print_tree(n: usize, tree: &TokenTree, mut w: impl Write) -> io::Result<()> {
    writeln!(w, "matched n={n} nodes={}", tree.size())?;
    writeln!(
        w,
        "{:>5} {:>10} {:>6} {:>8}",
        "index", "token", "parent", "weight"
    )?;
    for (i, node) in tree.nodes().iter().enumerate().skip(1) {
        writeln!(
            w,
            "{i:>5} {:>10} {:>6} {:>8}",
            node.token, node.parent, node.weight
        )?;
    }
    Ok(())
}

fn query(a: &QueryArgs) -> anyhow::Result<()> {
    let context = parse_token_list(&a.context)?;
    let tree = match open_store(&a.store)? {
        Store::Rest(store) => {
            let matches = store.find_matches(&context, a.max_matches)?;
            build_tree(
                store.retrieve_continuations(&matches, a.continuation_len),
                a.cap,
            )
        }
        Store::Crest(store) => {
            if context.len() > store.max_n() {
                TokenTree::default()
            } else {
                store.lookup(&context)?.unwrap_or_default()
            }
        }
    };
    if tree.is_empty() {
        println!("no match");
    } else {
        print_tree(context.len(), &tree, io::stdout().lock())?;
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> anyhow::Result<()> {
    let cfg = ZipfCorpusConfig {
        conversations: a.conversations,
        vocab: a.vocab,
        seed: a.seed,
        ..ZipfCorpusConfig::default()
    };
    let convs = zipf_corpus(&cfg)?;
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    write_token_json(&convs, &mut w)?;
    w.flush()?;
    let tokens: usize = convs.iter().map(|c| c.token_count()).sum();
    println!("conversations: {}", convs.len());
    println!("tokens: {tokens}");
    Ok(())
}

fn run_generate(a: &GenerateArgs) -> anyhow::Result<()> {
    let prompt = parse_token_list(&a.prompt)?;
    let store = open_store(&a.store)?;
    let rest;
    let crest;
    let drafter: &dyn Drafter = match &store {
        Store::Rest(s) => {
            rest =
                RestDrafter::with_params(s, DescentParams::default(), crest_core::DEFAULT_TREE_CAP);
            &rest
        }
        Store::Crest(s) => {
            crest = CrestDrafter::new(s);
            &crest
        }
    };
    let Some((program, args)) = a.verifier.split_first() else {
        bail!("missing verifier command");
    };
    let mut cmd = Command::new(program);
    cmd.args(args);
    let mut verifier = ExternalVerifier::spawn(cmd, Duration::from_millis(a.timeout_ms))?;
    let out = generate(drafter, &mut verifier, &prompt, a.max_new_tokens)?;
    let ids: Vec<String> = out.tokens.iter().map(ToString::to_string).collect();
    println!("tokens: {}", ids.join(","));
    let accepted: usize = out.steps.iter().map(|s| s.accepted).sum();
    println!("steps: {}", out.steps.len());
    println!(
        "mean accepted length: {:.4}",
        accepted as f64 / out.steps.len().max(1) as f64
    );
    Ok(())
}

/// Error chain joined with ": ", skipping causes already spelled out by
/// the message above them.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        let io_err = match c.downcast_ref::<Error>() {
            Some(Error::RawIo(e)) => Some(e),
            _ => c.downcast_ref::<io::Error>(),
        };
        io_err.is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
    })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_usage() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::BuildRest(a) => build_rest(a),
        Cmd::BuildCrest(a) => build_crest(a),
        Cmd::Analyze(a) => analyze(a),
        Cmd::Bench(a) => bench(a),
        Cmd::Query(a) => query(a),
        Cmd::Synth(a) => synth(a),
        Cmd::Generate(a) => run_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
