//! Disk-native n-gram → token-tree hash file.
//!
//! Layout (little-endian):
//!
//! ```text
//! header   "CRST" u32 version, u32 max_n, u64 bucket_count, u64 entry_count,
//!          u64 corpus_hash
//! buckets  bucket_count x u64 absolute offset of the bucket region (0 = empty)
//! regions  u32 entry count, then per entry:
//!          u8 key length, u32 key tokens, u32 blob length, tree blob
//! ```
//!
//! A key's bucket is its FNV-1a hash modulo the bucket count; the bucket
//! count is the smallest power of two not below the entry count. Lookups
//! read one directory slot and scan one bucket region straight from the
//! memory-mapped file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::ops::Deref;
use std::path::Path;

use memmap2::Mmap;

use crate::fnv::hash_tokens;
use crate::ngram_select::{NGram, NGramSelection};
use crate::suffix_store::{Reader, SuffixStore};
use crate::token_tree::{build_tree, TokenTree};
use crate::{Error, Result, Token};

pub const MAGIC: &[u8; 4] = b"CRST";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 4 + 4 + 4 + 8 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildParams {
    pub cap: usize,
    pub max_matches: usize,
    pub continuation_len: usize,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            cap: crate::DEFAULT_TREE_CAP,
            max_matches: crate::DEFAULT_MAX_MATCHES,
            continuation_len: crate::DEFAULT_CONTINUATION_LEN,
        }
    }
}

impl BuildParams {
    /// Gather every occurrence of each key instead of stopping at the cap.
    pub fn exhaustive(mut self) -> Self {
        self.max_matches = usize::MAX;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrestEntry {
    pub key: NGram,
    pub tree: TokenTree,
}

impl CrestEntry {
    pub fn encoded_len(&self) -> u64 {
        1 + 4 * self.key.len() as u64 + 4 + self.tree.encoded_len() as u64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KeyCounts {
    pub selected: usize,
    pub kept: usize,
    /// Matched, but every continuation was empty.
    pub dropped_empty: usize,
    /// Not found in the source store.
    pub absent: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    pub per_n: BTreeMap<usize, KeyCounts>,
    pub entries: usize,
    pub bytes: u64,
    pub mean_tree_size: f64,
}

/// Tree for one context, computed through the suffix store exactly as a
/// REST query for that context would.
pub fn rest_tree(source: &SuffixStore, key: &[Token], params: &BuildParams) -> Result<TokenTree> {
    let matches = source.find_matches(key, params.max_matches)?;
    let conts = source.retrieve_continuations(&matches, params.continuation_len);
    Ok(build_tree(conts, params.cap))
}

/// Computes the entry for every selected key, dropping keys whose tree is
/// empty.
pub fn compute_entries(
    selection: &NGramSelection,
    source: &SuffixStore,
    params: &BuildParams,
) -> Result<(Vec<CrestEntry>, BuildReport)> {
    if params.cap == 0 || params.cap > u16::MAX as usize {
        return Err(Error::Argument(format!(
            "tree cap must be in 1..=65535, got {}",
            params.cap
        )));
    }
    if params.continuation_len == 0 {
        return Err(Error::Argument(
            "continuation length must be at least 1".into(),
        ));
    }
    let mut report = BuildReport::default();
    let mut entries = Vec::with_capacity(selection.len());
    for (key, _) in selection.iter() {
        let counts = report.per_n.entry(key.len()).or_default();
        counts.selected += 1;
        let matches = source.find_matches(key, params.max_matches)?;
        if matches.is_empty() {
            counts.absent += 1;
            continue;
        }
        let conts = source.retrieve_continuations(&matches, params.continuation_len);
        let tree = build_tree(conts, params.cap);
        if tree.is_empty() {
            counts.dropped_empty += 1;
            continue;
        }
        counts.kept += 1;
        entries.push(CrestEntry {
            key: key.clone(),
            tree,
        });
    }
    let absent: usize = report.per_n.values().map(|c| c.absent).sum();
    if absent > 0 {
        log::warn!("{absent} selected keys do not occur in the source store");
    }
    report.entries = entries.len();
    report.mean_tree_size = mean_size(entries.iter().map(|e| e.tree.size()));
    Ok((entries, report))
}

fn mean_size(sizes: impl Iterator<Item = usize>) -> f64 {
    let (sum, n) = sizes.fold((0usize, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

pub fn bucket_count_for(entries: usize) -> u64 {
    (entries.max(1) as u64).next_power_of_two()
}

pub fn bucket_of(key: &[Token], buckets: u64) -> u64 {
    hash_tokens(key) % buckets
}

/// File size of a store holding `entries`.
pub fn encoded_store_len(entries: &[CrestEntry]) -> u64 {
    let buckets = bucket_count_for(entries.len());
    let mut used = vec![false; buckets as usize];
    let mut body = 0;
    for e in entries {
        used[bucket_of(&e.key, buckets) as usize] = true;
        body += e.encoded_len();
    }
    HEADER_LEN + 8 * buckets + 4 * used.iter().filter(|&&u| u).count() as u64 + body
}

/// Serializes entries into the store layout. Within a bucket entries are
/// ordered by key length, then key.
pub fn encode_store(entries: &[CrestEntry], max_n: usize, corpus_hash: u64) -> Result<Vec<u8>> {
    let buckets = bucket_count_for(entries.len());
    let mut order: Vec<(u64, &CrestEntry)> = entries
        .iter()
        .map(|e| {
            if e.key.is_empty() || e.key.len() > max_n || e.key.len() > u8::MAX as usize {
                return Err(Error::Argument(format!(
                    "key length {} outside 1..={max_n}",
                    e.key.len()
                )));
            }
            Ok((bucket_of(&e.key, buckets), e))
        })
        .collect::<Result<_>>()?;
    order.sort_unstable_by(|a, b| {
        (a.0, a.1.key.len(), &a.1.key).cmp(&(b.0, b.1.key.len(), &b.1.key))
    });
    if order.windows(2).any(|w| w[0].1.key == w[1].1.key) {
        return Err(Error::Argument("duplicate key".into()));
    }

    let mut out = Vec::with_capacity(encoded_store_len(entries) as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(max_n as u32).to_le_bytes());
    out.extend_from_slice(&buckets.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    out.extend_from_slice(&corpus_hash.to_le_bytes());
    let dir_start = out.len();
    out.resize(dir_start + 8 * buckets as usize, 0);

    let mut i = 0;
    while i < order.len() {
        let bucket = order[i].0;
        let end = i + order[i..].iter().take_while(|(b, _)| *b == bucket).count();
        let offset = out.len() as u64;
        let slot = dir_start + 8 * bucket as usize;
        out[slot..slot + 8].copy_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&((end - i) as u32).to_le_bytes());
        for (_, e) in &order[i..end] {
            out.push(e.key.len() as u8);
            out.extend(e.key.iter().flat_map(|t| t.to_le_bytes()));
            out.extend_from_slice(&(e.tree.encoded_len() as u32).to_le_bytes());
            e.tree.encode_into(&mut out)?;
        }
        i = end;
    }
    Ok(out)
}

/// Builds a store from `selection` using trees recomputed through `source`
/// and writes it to `out`.
pub fn build_crest_store(
    selection: &NGramSelection,
    source: &SuffixStore,
    params: &BuildParams,
    out: impl AsRef<Path>,
) -> Result<BuildReport> {
    let out = out.as_ref();
    let (entries, mut report) = compute_entries(selection, source, params)?;
    let max_n = selection
        .max_n()
        .max(entries.iter().map(|e| e.key.len()).max().unwrap_or(0));
    let bytes = encode_store(&entries, max_n.max(1), source.content_hash())?;
    let mut file = fs::File::create(out).map_err(|e| Error::io(out, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(out, e))?;
    report.bytes = bytes.len() as u64;
    Ok(report)
}

enum Backing {
    Mapped(Mmap),
    Owned(Vec<u8>),
}

impl Deref for Backing {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        match self {
            Backing::Mapped(m) => m,
            Backing::Owned(v) => v,
        }
    }
}

/// Outcome of a single lookup, including how many entries were scanned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupTrace {
    pub tree: Option<TokenTree>,
    pub bucket: u64,
    pub scanned: usize,
}

pub struct CrestStore {
    data: Backing,
    max_n: usize,
    buckets: u64,
    entries: u64,
    corpus_hash: u64,
}

impl std::fmt::Debug for CrestStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CrestStore")
            .field("bytes", &self.data.len())
            .field("max_n", &self.max_n)
            .field("buckets", &self.buckets)
            .field("entries", &self.entries)
            .finish()
    }
}

impl CrestStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        if len < HEADER_LEN {
            return Err(Error::Format(format!("{}: file too short", path.display())));
        }
        // SAFETY: the store is treated as immutable once written; every
        // offset read from the mapping is bounds-checked.
        let map = unsafe { Mmap::map(&file) }.map_err(|e| Error::io(path, e))?;
        Self::from_backing(Backing::Mapped(map))
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        Self::from_backing(Backing::Owned(bytes))
    }

    fn from_backing(data: Backing) -> Result<Self> {
        let mut r = Reader {
            bytes: &data,
            pos: 0,
        };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, expected CRST".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let max_n = r.u32()? as usize;
        let buckets = r.u64()?;
        let entries = r.u64()?;
        let corpus_hash = r.u64()?;
        if buckets == 0 {
            return Err(Error::Format("bucket count is zero".into()));
        }
        buckets
            .checked_mul(8)
            .and_then(|d| d.checked_add(HEADER_LEN))
            .filter(|&end| end <= data.len() as u64)
            .ok_or_else(|| Error::Format("bucket directory exceeds file".into()))?;
        Ok(CrestStore {
            data,
            max_n,
            buckets,
            entries,
            corpus_hash,
        })
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn bucket_count(&self) -> u64 {
        self.buckets
    }

    pub fn entry_count(&self) -> u64 {
        self.entries
    }

    pub fn corpus_hash(&self) -> u64 {
        self.corpus_hash
    }

    pub fn byte_len(&self) -> u64 {
        self.data.len() as u64
    }

    fn bucket_offset(&self, bucket: u64) -> u64 {
        let slot = (HEADER_LEN + 8 * bucket) as usize;
        u64::from_le_bytes(self.data[slot..slot + 8].try_into().unwrap())
    }

    /// Walks one bucket region, calling `visit` for each entry until it
    /// returns `Some`.
    fn scan_bucket<T>(
        &self,
        bucket: u64,
        mut visit: impl FnMut(&[u8], &[u8], u64) -> Result<Option<T>>,
    ) -> Result<(Option<T>, usize)> {
        let offset = self.bucket_offset(bucket);
        if offset == 0 {
            return Ok((None, 0));
        }
        let corrupt = |at: u64, message: String| Error::Integrity {
            bucket,
            offset: at,
            message,
        };
        let dir_end = HEADER_LEN + 8 * self.buckets;
        if offset < dir_end || offset >= self.data.len() as u64 {
            return Err(corrupt(
                offset,
                "bucket offset outside the data region".into(),
            ));
        }
        let mut r = Reader {
            bytes: &self.data,
            pos: offset as usize,
        };
        let count = r.u32().map_err(|e| corrupt(offset, e.to_string()))?;
        for i in 0..count as usize {
            let at = r.pos as u64;
            let mut entry = || -> Result<(&[u8], &[u8])> {
                let key_len = r.u8()? as usize;
                let key = r.take(4 * key_len)?;
                let blob_len = r.u32()? as usize;
                let blob = r.take(blob_len)?;
                Ok((key, blob))
            };
            let (key, blob) = entry().map_err(|e| corrupt(at, e.to_string()))?;
            if let Some(found) = visit(key, blob, at)? {
                return Ok((Some(found), i + 1));
            }
        }
        Ok((None, count as usize))
    }

    pub fn lookup(&self, key: &[Token]) -> Result<Option<TokenTree>> {
        Ok(self.lookup_traced(key)?.tree)
    }

    pub fn lookup_traced(&self, key: &[Token]) -> Result<LookupTrace> {
        if key.is_empty() || key.len() > self.max_n {
            return Err(Error::Argument(format!(
                "key length {} outside 1..={}",
                key.len(),
                self.max_n
            )));
        }
        let bucket = bucket_of(key, self.buckets);
        let want: Vec<u8> = key.iter().flat_map(|t| t.to_le_bytes()).collect();
        let (tree, scanned) = self.scan_bucket(bucket, |k, blob, at| {
            if k != want.as_slice() {
                return Ok(None);
            }
            TokenTree::decode(blob)
                .map(Some)
                .map_err(|e| Error::Integrity {
                    bucket,
                    offset: at,
                    message: e.to_string(),
                })
        })?;
        Ok(LookupTrace {
            tree,
            bucket,
            scanned,
        })
    }

    /// Decodes every entry, checking bucket placement, key uniqueness and the
    /// header entry count.
    pub fn entries(&self) -> Result<Vec<CrestEntry>> {
        let mut out = Vec::new();
        for bucket in 0..self.buckets {
            self.scan_bucket(bucket, |k, blob, at| {
                let key: Vec<Token> = k
                    .chunks_exact(4)
                    .map(|b| Token::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                let corrupt = |message: String| Error::Integrity {
                    bucket,
                    offset: at,
                    message,
                };
                if key.is_empty() || key.len() > self.max_n {
                    return Err(corrupt(format!(
                        "key length {} outside 1..={}",
                        key.len(),
                        self.max_n
                    )));
                }
                if bucket_of(&key, self.buckets) != bucket {
                    return Err(corrupt("key hashed to a different bucket".into()));
                }
                let tree = TokenTree::decode(blob).map_err(|e| corrupt(e.to_string()))?;
                out.push(CrestEntry { key, tree });
                Ok(None::<()>)
            })?;
        }
        if out.len() as u64 != self.entries {
            return Err(Error::Format(format!(
                "header declares {} entries, found {}",
                self.entries,
                out.len()
            )));
        }
        let mut keys: Vec<&NGram> = out.iter().map(|e| &e.key).collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Format("duplicate key".into()));
        }
        Ok(out)
    }

    pub fn stats(&self) -> Result<StoreStats> {
        let entries = self.entries()?;
        let mut per_n: BTreeMap<usize, (u64, usize)> = BTreeMap::new();
        for e in &entries {
            let slot = per_n.entry(e.key.len()).or_default();
            slot.0 += 1;
            slot.1 += e.tree.size();
        }
        Ok(StoreStats {
            bytes: self.byte_len(),
            entries: entries.len() as u64,
            per_n: per_n
                .into_iter()
                .map(|(n, (count, nodes))| {
                    (
                        n,
                        PerNStats {
                            entries: count,
                            mean_tree_size: nodes as f64 / count as f64,
                        },
                    )
                })
                .collect(),
            mean_tree_size: mean_size(entries.iter().map(|e| e.tree.size())),
            is_empty: entries.is_empty(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerNStats {
    pub entries: u64,
    pub mean_tree_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreStats {
    pub bytes: u64,
    pub entries: u64,
    pub per_n: BTreeMap<usize, PerNStats>,
    /// Mean non-root node count; 0 for an empty store.
    pub mean_tree_size: f64,
    pub is_empty: bool,
}

impl StoreStats {
    /// Tree-size table: one row per gram size.
    pub fn write_table<W: Write>(&self, label: &str, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "{:<16} {:>3} {:>14} {:>14}",
            "store", "n", "entries", "avg_tokens"
        )?;
        for (n, s) in &self.per_n {
            writeln!(
                out,
                "{label:<16} {n:>3} {:>14} {:>14.2}",
                s.entries, s.mean_tree_size
            )?;
        }
        writeln!(
            out,
            "{label:<16} {:>3} {:>14} {:>14.2}",
            "all", self.entries, self.mean_tree_size
        )
    }
}
