//! End-to-end acceptance suite. Run with
//! `cargo test -p crest-core --test acceptance`; prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.

use std::collections::HashSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crest_core::corpus::{
    flatten, sample_fraction, split_holdout, Conversation, FlattenedDataset, Order,
};
use crest_core::crest_store::{
    build_crest_store, compute_entries, encode_store, encoded_store_len, rest_tree, BuildParams,
    CrestEntry, CrestStore,
};
use crest_core::harness::{replay_benchmark, CrestDrafter, Draft, Drafter, RestDrafter};
use crest_core::ngram_select::{count_ngrams, top_t_from_counts, top_t_single, NGramCounts};
use crest_core::suffix_store::{build_suffix_array, DescentParams, SuffixStore};
use crest_core::synth::{zipf_corpus, ZipfCorpusConfig};
use crest_core::token_tree::{build_tree, TokenTree};
use crest_core::{Result, Token};

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        {
            let ok: bool = $cond;
            if !ok {
                return Err(format!($($fmt)+));
            }
        }
    };
}

fn ok<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// Shared fixtures

const HOLDOUT: f64 = 0.2;
const SPLIT_SEED: u64 = 7;
const SAMPLE_SEED: u64 = 1;
const REST_CHUNK: usize = 1 << 20;

struct Zipf {
    train: Vec<Conversation>,
    eval: Vec<Conversation>,
    flat: FlattenedDataset,
    full: SuffixStore,
    counts: Vec<NGramCounts>,
}

impl Zipf {
    fn new() -> Self {
        let corpus = zipf_corpus(&ZipfCorpusConfig::default()).unwrap();
        let (train, eval) = split_holdout(&corpus, HOLDOUT, SPLIT_SEED).unwrap();
        let flat = flatten(&train, Order::FileOrder);
        let full = SuffixStore::build(&flat, REST_CHUNK).unwrap();
        let counts = (1..=3).map(|n| count_ngrams(&flat, n).unwrap()).collect();
        Zipf {
            train,
            eval,
            flat,
            full,
            counts,
        }
    }

    fn combined(&self, t: usize) -> Vec<CrestEntry> {
        let sel = top_t_from_counts(&self.counts, t).unwrap();
        compute_entries(&sel, &self.full, &BuildParams::default())
            .unwrap()
            .0
    }
}

#[derive(Default)]
struct Shared {
    zipf: Option<Zipf>,
    /// Compact stores built for the size comparison, kept for the cap audit.
    matched_stores: Vec<(String, Vec<CrestEntry>)>,
}

impl Shared {
    fn zipf(&mut self) -> &Zipf {
        self.zipf.get_or_insert_with(Zipf::new)
    }
}

fn open(entries: &[CrestEntry], max_n: usize) -> CrestStore {
    CrestStore::from_bytes(encode_store(entries, max_n, 0).unwrap()).unwrap()
}

/// Drafter wrapper recording the largest drafted tree.
struct Audited<'a, D> {
    inner: &'a D,
    largest: AtomicUsize,
}

impl<'a, D: Drafter> Audited<'a, D> {
    fn new(inner: &'a D) -> Self {
        Audited {
            inner,
            largest: AtomicUsize::new(0),
        }
    }
}

impl<D: Drafter> Drafter for Audited<'_, D> {
    fn draft(&self, generated: &[Token]) -> Result<Option<Draft>> {
        let d = self.inner.draft(generated)?;
        if let Some(d) = &d {
            self.largest.fetch_max(d.tree.size(), Ordering::Relaxed);
        }
        Ok(d)
    }
}

// ---------------------------------------------------------------------------
// Independent oracles

fn naive_suffix_array(s: &[Token]) -> Vec<u32> {
    let mut sa: Vec<u32> = (0..s.len() as u32).collect();
    sa.sort_by(|&a, &b| s[a as usize..].cmp(&s[b as usize..]));
    sa
}

/// Valid occurrences of `ctx`, scanning every window: the window must lie in
/// one chunk and one conversation. Within a chunk, occurrences are ordered by
/// their suffix.
fn scan_matches(
    tokens: &[Token],
    conv_ends: &[usize],
    chunk_size: usize,
    ctx: &[Token],
    cap: usize,
) -> (Vec<(u32, u32)>, bool) {
    let n = ctx.len();
    let mut all = Vec::new();
    for (ci, chunk) in tokens.chunks(chunk_size).enumerate() {
        let base = ci * chunk_size;
        let mut here: Vec<usize> = (0..chunk.len())
            .filter(|&p| {
                let g = base + p;
                let conv_end = *conv_ends.iter().find(|&&e| e > g).unwrap();
                p + n <= chunk.len() && g + n <= conv_end && &chunk[p..p + n] == ctx
            })
            .collect();
        here.sort_by(|&a, &b| chunk[a..].cmp(&chunk[b..]));
        all.extend(here.into_iter().map(|p| (ci as u32, p as u32)));
    }
    let truncated = all.len() > cap;
    all.truncate(cap);
    (all, truncated)
}

fn brute_accept(tree: &TokenTree, gt: &[Token]) -> usize {
    let nodes = tree.nodes();
    (1..nodes.len())
        .filter_map(|i| {
            let mut path = Vec::new();
            let mut cur = i;
            while cur != 0 {
                path.push(nodes[cur].token);
                cur = nodes[cur].parent as usize;
            }
            path.reverse();
            (path.len() <= gt.len() && path[..] == gt[..path.len()]).then_some(path.len())
        })
        .max()
        .unwrap_or(0)
}

fn fnv1a(key: &[Token]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.iter().flat_map(|t| t.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Compact store size from the layout: header, bucket directory, a count
/// per used bucket, then per entry a key length byte, the key, a blob length
/// and the blob.
fn crest_layout_len(entries: &[CrestEntry]) -> u64 {
    let buckets = (entries.len().max(1) as u64).next_power_of_two();
    let used: HashSet<u64> = entries.iter().map(|e| fnv1a(&e.key) % buckets).collect();
    let body: u64 = entries
        .iter()
        .map(|e| 1 + 4 * e.key.len() as u64 + 4 + 2 + 10 * e.tree.size() as u64)
        .sum();
    36 + 8 * buckets + 4 * used.len() as u64 + body
}

/// Suffix store size from the layout: magic, version, chunk count, then per
/// chunk its length, tokens, suffix array and conversation ends.
fn rest_layout_len(store: &SuffixStore) -> u64 {
    12 + store
        .chunks()
        .iter()
        .map(|c| 8 + 8 * c.len() as u64 + 4 + 4 * c.conversation_ends().len() as u64)
        .sum::<u64>()
}

fn random_tree(rng: &mut ChaCha8Rng) -> TokenTree {
    let alphabet = rng.random_range(1..=5u32);
    let count = rng.random_range(0..=40);
    let conts: Vec<Vec<Token>> = (0..count)
        .map(|_| {
            let len = rng.random_range(1..=10);
            (0..len).map(|_| rng.random_range(0..alphabet)).collect()
        })
        .collect();
    build_tree(&conts, rng.random_range(1..=64))
}

// ---------------------------------------------------------------------------
// Criteria

fn sequences() -> Vec<Vec<Token>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa11ce);
    (0..1000)
        .map(|_| {
            let len = rng.random_range(1..=2000);
            let alphabet = rng.random_range(1..=16u32);
            (0..len).map(|_| rng.random_range(0..alphabet)).collect()
        })
        .collect()
}

fn c1_suffix_array(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    for (i, s) in sequences().iter().enumerate() {
        ensure!(
            build_suffix_array(s) == naive_suffix_array(s),
            "sequence {i} differs"
        );
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("1000 sequences in {secs:.1}s"))
}

fn c2_matches(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb0b);
    let caps = [1, 2, 5, 50, usize::MAX];
    let mut checked = 0u64;
    let mut nonempty = 0u64;
    for (i, s) in sequences().iter().enumerate() {
        let mut cuts: Vec<usize> = (0..rng.random_range(0..5))
            .map(|_| rng.random_range(1..=s.len()))
            .collect();
        cuts.push(s.len());
        cuts.sort_unstable();
        cuts.dedup();
        let mut convs = Vec::new();
        let mut at = 0;
        for &c in &cuts {
            convs.push(Conversation::from_tokens(s[at..c].to_vec()).unwrap());
            at = c;
        }
        let chunk_size = rng.random_range(2..=s.len().max(2) + 1);
        let store = SuffixStore::build(&flatten(&convs, Order::FileOrder), chunk_size).unwrap();
        let alphabet = s.iter().max().unwrap() + 2;
        for _ in 0..500 {
            let n = rng.random_range(1..=6);
            let ctx: Vec<Token> = if rng.random_bool(0.5) && s.len() >= n {
                let p = rng.random_range(0..=s.len() - n);
                s[p..p + n].to_vec()
            } else {
                (0..n).map(|_| rng.random_range(0..alphabet)).collect()
            };
            let cap = *caps.choose(&mut rng).unwrap();
            let got = ok(store.find_matches(&ctx, cap))?;
            let (want, truncated) = scan_matches(s, &cuts, chunk_size, &ctx, cap);
            let got_occ: Vec<(u32, u32)> =
                got.occurrences.iter().map(|o| (o.chunk, o.pos)).collect();
            ensure!(
                got_occ == want && got.truncated == truncated,
                "sequence {i}, context {ctx:?}, cap {cap}: got {got_occ:?} (truncated {}), want {want:?} (truncated {truncated})",
                got.truncated
            );
            checked += 1;
            nonempty += u64::from(!want.is_empty());
        }
    }
    Ok(format!("{checked} queries, {nonempty} with matches"))
}

fn c3_accept(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
    let mut total = 0;
    for i in 0..10_000 {
        let tree = random_tree(&mut rng);
        ensure!(tree.size() <= 64, "tree {i} has {} nodes", tree.size());
        let mut gt: Vec<Token> = Vec::new();
        if !tree.is_empty() && rng.random_bool(0.7) {
            // Start along a random root path, then diverge.
            let mut cur = rng.random_range(1..tree.nodes().len());
            while cur != 0 {
                gt.push(tree.nodes()[cur].token);
                cur = tree.nodes()[cur].parent as usize;
            }
            gt.reverse();
        }
        for _ in 0..rng.random_range(0..6) {
            gt.push(rng.random_range(0..6));
        }
        let want = brute_accept(&tree, &gt);
        let got = tree.accepted_length(&gt);
        ensure!(got == want, "pair {i}: got {got}, want {want} for {gt:?}");
        total += got;
    }
    Ok(format!(
        "10000 pairs, mean accepted {:.3}",
        total as f64 / 10_000.0
    ))
}

fn c4_equivalence(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let cfg = ZipfCorpusConfig {
        conversations: 200,
        seed: 44,
        ..ZipfCorpusConfig::default()
    };
    let flat = flatten(&ok(zipf_corpus(&cfg))?, Order::FileOrder);
    let source = ok(SuffixStore::build(&flat, 32_768))?;
    let params = BuildParams::default();
    let counts: Vec<NGramCounts> = (1..=3).map(|n| count_ngrams(&flat, n).unwrap()).collect();
    let sel = ok(top_t_from_counts(&counts, 200))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("eq.crst");
    let report = ok(build_crest_store(&sel, &source, &params, &path))?;
    let store = ok(CrestStore::open(&path))?;
    let entries = ok(store.entries())?;
    ensure!(
        entries.len() == report.entries,
        "report says {} entries, file holds {}",
        report.entries,
        entries.len()
    );
    let stored: HashSet<&[Token]> = entries.iter().map(|e| e.key.as_slice()).collect();
    for (key, _) in sel.iter() {
        let expected = ok(rest_tree(&source, key, &params))?;
        let n = key.len();
        let descent = DescentParams {
            max_n: n,
            min_n: n,
            ..DescentParams::default()
        };
        let drafted = ok(RestDrafter::with_params(&source, descent, params.cap).draft(key))?;
        match ok(store.lookup(key))? {
            Some(tree) => {
                ensure!(
                    tree == expected,
                    "key {key:?}: stored tree differs from recomputed tree"
                );
                ensure!(
                    drafted.as_ref().map(|d| &d.tree) == Some(&tree),
                    "key {key:?}: suffix-store drafter disagrees"
                );
            }
            None => ensure!(
                expected.is_empty() && drafted.is_none() && !stored.contains(key.as_slice()),
                "key {key:?} missing although it has a nonempty tree"
            ),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 300.0, "took {secs:.1}s");
    Ok(format!(
        "{} tokens, {} of {} keys stored, all identical, {secs:.1}s",
        flat.len(),
        entries.len(),
        sel.len()
    ))
}

fn c5_trend(shared: &mut Shared) -> Outcome {
    let start = Instant::now();
    let z = shared.zipf();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    let mut matched = Vec::new();
    for fraction in [0.25, 0.5, 1.0] {
        let subset = ok(sample_fraction(&z.train, fraction, SAMPLE_SEED))?;
        let rest = ok(SuffixStore::build(
            &flatten(&subset, Order::FileOrder),
            REST_CHUNK,
        ))?;
        let rest_bytes = rest.encoded_len();
        let r = ok(replay_benchmark(
            &RestDrafter::new(&rest),
            &z.eval,
            usize::MAX,
        ))?;

        // Largest per-n budget whose store is no larger than the suffix store.
        let umax = z.counts.iter().map(NGramCounts::unique).max().unwrap();
        let (mut lo, mut hi) = (1, umax);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if encoded_store_len(&z.combined(mid)) <= rest_bytes {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let entries = z.combined(lo);
        let crest_bytes = encoded_store_len(&entries);
        let store = open(&entries, 3);
        let c = ok(replay_benchmark(
            &CrestDrafter::new(&store),
            &z.eval,
            usize::MAX,
        ))?;
        let line = format!(
            "{:>3}%: suffix {rest_bytes} B -> {:.4} ({:.4} all steps) | compact t={lo} {crest_bytes} B -> {:.4} ({:.4} all steps)",
            fraction * 100.0,
            r.mean_accepted_length(),
            r.mean_accepted_all_steps(),
            c.mean_accepted_length(),
            c.mean_accepted_all_steps()
        );
        if c.mean_accepted_length() < r.mean_accepted_length()
            || c.mean_accepted_all_steps() < r.mean_accepted_all_steps()
        {
            failures.push(line.clone());
        }
        lines.push(line);
        matched.push((format!("compact-{}pct", fraction * 100.0), entries));
    }
    shared.matched_stores = matched;
    for l in &lines {
        println!("    {l}");
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(
        failures.is_empty(),
        "compact store behind at: {}",
        failures.join("; ")
    );
    ensure!(secs < 900.0, "took {secs:.1}s");
    Ok(format!("compact >= suffix at all 3 sizes, {secs:.1}s"))
}

/// Accepted tokens and steps per (n, budget) for single-size stores; the
/// all-steps mean is their ratio.
const SINGLE_N_GOLDEN: [[(usize, usize); 4]; 3] = [
    [
        (50949, 146094),
        (80058, 117030),
        (92130, 104983),
        (94728, 102388),
    ],
    [
        (70450, 126620),
        (88079, 109031),
        (92170, 104947),
        (92717, 104400),
    ],
    [
        (54195, 142843),
        (70189, 126878),
        (74651, 122425),
        (75534, 121541),
    ],
];

fn c6_shape(shared: &mut Shared) -> Outcome {
    let start = Instant::now();
    let z = shared.zipf();
    let grid = [0.01, 0.1, 0.5, 1.0];
    let mut problems = Vec::new();
    for (ni, counts) in z.counts.iter().enumerate() {
        let n = ni + 1;
        let mut means = Vec::new();
        let mut measured = Vec::new();
        for p in grid {
            let t = (p * counts.unique() as f64).ceil() as usize;
            let sel = ok(top_t_single(counts, t))?;
            let (entries, _) = ok(compute_entries(&sel, &z.full, &BuildParams::default()))?;
            let store = open(&entries, n);
            let r = ok(replay_benchmark(
                &CrestDrafter::new(&store),
                &z.eval,
                usize::MAX,
            ))?;
            means.push(r.mean_accepted_all_steps());
            measured.push((r.accepted_total(), r.steps.len()));
        }
        println!(
            "    n={n}: {}  golden {:?}",
            grid.iter()
                .zip(&means)
                .map(|(p, m)| format!("{:>3}% {m:.4}", p * 100.0))
                .collect::<Vec<_>>()
                .join("  "),
            measured
        );
        let (a, b, c, d) = (means[0], means[1], means[2], means[3]);
        if !(a <= b && b <= c) {
            problems.push(format!("n={n} not nondecreasing up to 50%"));
        }
        if d - c > c - b {
            problems.push(format!(
                "n={n}: 50->100% gain {:.4} exceeds 10->50% gain {:.4}",
                d - c,
                c - b
            ));
        }
        if measured[..] != SINGLE_N_GOLDEN[ni][..] {
            problems.push(format!(
                "n={n} differs from golden {:?}",
                SINGLE_N_GOLDEN[ni]
            ));
        }
    }

    // Mixed-size stores, reported only.
    let umax = z.counts.iter().map(NGramCounts::unique).max().unwrap();
    let mixed: Vec<String> = grid
        .iter()
        .map(|p| {
            let store = open(&z.combined((p * umax as f64).ceil() as usize), 3);
            let r = replay_benchmark(&CrestDrafter::new(&store), &z.eval, usize::MAX).unwrap();
            format!(
                "{:>3}% {:.4}/{:.4}",
                p * 100.0,
                r.mean_accepted_length(),
                r.mean_accepted_all_steps()
            )
        })
        .collect();
    println!(
        "    n<=3 combined (drafted/all steps, informational): {}",
        mixed.join("  ")
    );
    ensure!(problems.is_empty(), "{}", problems.join("; "));
    Ok(format!(
        "single-size curves concave and golden, {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn c7_complexity(shared: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut keys: Vec<Vec<Token>> = Vec::new();
    let mut seen = HashSet::new();
    while keys.len() < 65_536 {
        let k: Vec<Token> = (0..rng.random_range(1..=3))
            .map(|_| rng.random_range(0..50_000))
            .collect();
        if seen.insert(k.clone()) {
            keys.push(k);
        }
    }
    // A full-size tree, like the frequent keys of a real store.
    let conts: Vec<Vec<Token>> = (0..40)
        .map(|_| (0..10).map(|_| rng.random_range(0..6)).collect())
        .collect();
    let tree = build_tree(&conts, 64);
    assert_eq!(tree.size(), 64);
    let mut per_store = Vec::new();
    for e in [4_096usize, 65_536] {
        let entries: Vec<CrestEntry> = keys[..e]
            .iter()
            .map(|k| CrestEntry {
                key: k.clone(),
                tree: tree.clone(),
            })
            .collect();
        let path = dir.path().join(format!("lat{e}.crst"));
        fs::write(&path, ok(encode_store(&entries, 3, 0))?).map_err(|e| e.to_string())?;
        let store = ok(CrestStore::open(&path))?;
        let probes: Vec<&Vec<Token>> = (0..50_000).map(|_| &keys[rng.random_range(0..e)]).collect();
        let mut reps = Vec::new();
        for rep in 0..6 {
            let t = Instant::now();
            for k in &probes {
                assert!(store.lookup(k).unwrap().is_some());
            }
            if rep > 0 {
                reps.push(t.elapsed().as_secs_f64() * 1e9 / probes.len() as f64);
            }
        }
        per_store.push(median(reps));
    }
    let lookup_ratio = per_store[1] / per_store[0];

    let z = shared.zipf();
    let tokens = z.flat.tokens();
    let (short, long) = (1usize << 10, 1usize << 19);
    let single = |len: usize| {
        let f = FlattenedDataset::from_parts(tokens[..len].to_vec(), vec![0]).unwrap();
        SuffixStore::build(&f, len).unwrap()
    };
    let (a, b) = (single(short), single(long));
    let mut cmp = [0u64; 2];
    let probes = 5_000;
    for _ in 0..probes {
        let p = rng.random_range(0..short - 2);
        let ctx = &tokens[p..p + 2];
        cmp[0] += ok(a.find_matches(ctx, usize::MAX))?.comparisons;
        cmp[1] += ok(b.find_matches(ctx, usize::MAX))?.comparisons;
    }
    let observed = cmp[1] as f64 / cmp[0] as f64;
    let predicted = (long as f64).log2() / (short as f64).log2();
    let summary = format!(
        "compact lookup {:.0} ns -> {:.0} ns for 16x entries (x{lookup_ratio:.2}); suffix comparisons x{observed:.3} vs log prediction x{predicted:.3}",
        per_store[0], per_store[1]
    );
    ensure!(lookup_ratio < 2.0, "{summary}");
    ensure!((observed / predicted - 1.0).abs() <= 0.2, "{summary}");
    Ok(summary)
}

fn c8_format(_: &mut Shared) -> Outcome {
    let cfg = ZipfCorpusConfig {
        conversations: 120,
        seed: 88,
        ..ZipfCorpusConfig::default()
    };
    let convs = ok(zipf_corpus(&cfg))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut sizes = Vec::new();
    for chunk in [4_096, 1 << 20] {
        let mut files = Vec::new();
        for run in 0..2 {
            let store = ok(SuffixStore::build(
                &flatten(&convs, Order::FileOrder),
                chunk,
            ))?;
            let path = dir.path().join(format!("r{chunk}-{run}.rsds"));
            ok(store.save(&path))?;
            let bytes = fs::read(&path).map_err(|e| e.to_string())?;
            ensure!(
                ok(SuffixStore::from_bytes(&bytes))?.chunks() == store.chunks(),
                "suffix store round trip differs"
            );
            let formula = rest_layout_len(&store);
            worst = worst.max((bytes.len() as f64 - formula as f64).abs() / formula as f64);
            files.push(bytes);
        }
        ensure!(
            files[0] == files[1],
            "suffix store rebuild with chunk {chunk} differs"
        );
        sizes.push(files[0].len());
    }
    let flat = flatten(&convs, Order::FileOrder);
    let source = ok(SuffixStore::build(&flat, 4_096))?;
    let counts: Vec<NGramCounts> = (1..=3).map(|n| count_ngrams(&flat, n).unwrap()).collect();
    let mut trees = 0;
    for t in [1, 50, 500] {
        let sel = ok(top_t_from_counts(&counts, t))?;
        let mut files = Vec::new();
        for run in 0..2 {
            let path = dir.path().join(format!("c{t}-{run}.crst"));
            ok(build_crest_store(
                &sel,
                &source,
                &BuildParams::default(),
                &path,
            ))?;
            files.push(fs::read(&path).map_err(|e| e.to_string())?);
        }
        ensure!(
            files[0] == files[1],
            "compact store rebuild with t={t} differs"
        );
        let store = ok(CrestStore::from_bytes(files[0].clone()))?;
        let entries = ok(store.entries())?;
        let formula = crest_layout_len(&entries);
        worst = worst.max((files[0].len() as f64 - formula as f64).abs() / formula as f64);
        for e in &entries {
            ensure!(
                ok(TokenTree::decode(&ok(e.tree.encode())?))? == e.tree,
                "tree round trip differs"
            );
            trees += 1;
        }
        sizes.push(files[0].len());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x8);
    for _ in 0..10_000 {
        let t = random_tree(&mut rng);
        ensure!(
            ok(TokenTree::decode(&ok(t.encode())?))? == t,
            "random tree round trip differs"
        );
    }
    ensure!(
        worst <= 0.01,
        "file size off the layout formula by {:.3}%",
        worst * 100.0
    );
    Ok(format!(
        "5 stores rebuilt identically (sizes {sizes:?}), max layout deviation {:.3}%, {} trees round-tripped",
        worst * 100.0,
        trees + 10_000
    ))
}

fn c9_cap(shared: &mut Shared) -> Outcome {
    if shared.matched_stores.is_empty() {
        return Err("size-matched compact stores unavailable".into());
    }
    let z = shared.zipf.as_ref().unwrap();
    let eval = &z.eval[..z.eval.len().min(100)];
    let mut largest = 0;
    let mut table = Vec::new();
    for (label, entries) in &shared.matched_stores {
        largest = largest.max(entries.iter().map(|e| e.tree.size()).max().unwrap_or(0));
        let store = open(entries, 3);
        let drafter = CrestDrafter::new(&store);
        let audited = Audited::new(&drafter);
        ok(replay_benchmark(&audited, eval, usize::MAX))?;
        largest = largest.max(audited.largest.load(Ordering::Relaxed));
        ok(store.stats())?
            .write_table(label, &mut table)
            .map_err(|e| e.to_string())?;
    }
    let rest = RestDrafter::new(&z.full);
    let audited = Audited::new(&rest);
    ok(replay_benchmark(&audited, eval, usize::MAX))?;
    largest = largest.max(audited.largest.load(Ordering::Relaxed));
    for line in String::from_utf8_lossy(&table).lines() {
        println!("    {line}");
    }
    ensure!(largest <= 64, "a tree has {largest} nodes");
    Ok(format!(
        "largest stored or drafted tree has {largest} nodes"
    ))
}

type Criterion = (&'static str, fn(&mut Shared) -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("suffix array equals naive sort", c1_suffix_array),
        ("match sets equal window scan", c2_matches),
        ("accepted length equals path search", c3_accept),
        ("stored trees equal recomputed trees", c4_equivalence),
        ("compact beats suffix store at equal size", c5_trend),
        ("diminishing returns over budget grid", c6_shape),
        ("lookup and search cost scaling", c7_complexity),
        ("deterministic builds and layout sizes", c8_format),
        ("tree cap compliance", c9_cap),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut shared = Shared::default();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&mut shared)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let took = Duration::from_secs_f64(start.elapsed().as_secs_f64());
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail} [{took:.1?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail} [{took:.1?}]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
