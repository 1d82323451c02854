//! Chunked suffix-array datastore.
//!
//! The flattened corpus is cut into fixed-size chunks and each chunk gets its
//! own suffix array. A query context matches the contiguous suffix-array
//! range whose suffixes start with it; that range is found per chunk with two
//! binary searches. Conversation ends are recorded per chunk so that neither
//! a matched context nor its continuation ever straddles two conversations.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::corpus::FlattenedDataset;
use crate::{Error, Result, Token};

pub const MAGIC: &[u8; 4] = b"RSDS";
pub const FORMAT_VERSION: u32 = 1;

/// Longest context the REST descent starts from.
pub const DEFAULT_MAX_N: usize = 16;
/// Shortest context the REST descent tries.
pub const DEFAULT_MIN_N: usize = 2;

/// Sorts all suffixes of `tokens` by prefix doubling with counting sorts.
///
/// Token ids compare as unsigned integers and a suffix that is a proper
/// prefix of another sorts first.
pub fn build_suffix_array(tokens: &[Token]) -> Vec<u32> {
    let n = tokens.len();
    assert!(
        n <= u32::MAX as usize,
        "chunk too long for 32-bit positions"
    );
    if n == 0 {
        return Vec::new();
    }
    let mut alphabet = tokens.to_vec();
    alphabet.sort_unstable();
    alphabet.dedup();
    let mut rank: Vec<usize> = tokens
        .iter()
        .map(|t| alphabet.binary_search(t).unwrap())
        .collect();
    let mut classes = alphabet.len();

    let mut sa: Vec<usize> = (0..n).collect();
    sa.sort_unstable_by_key(|&i| rank[i]);

    let mut next_rank = vec![0usize; n];
    let mut by_second = Vec::with_capacity(n);
    let mut counts = Vec::new();
    let mut k = 1;
    while classes < n {
        // Order by the rank of the second half; suffixes without one go first.
        by_second.clear();
        by_second.extend(n.saturating_sub(k)..n);
        by_second.extend(sa.iter().filter(|&&p| p >= k).map(|&p| p - k));

        // Stable counting sort by the rank of the first half.
        counts.clear();
        counts.resize(classes + 1, 0);
        for &r in &rank {
            counts[r + 1] += 1;
        }
        for c in 1..counts.len() {
            counts[c] += counts[c - 1];
        }
        for &i in &by_second {
            sa[counts[rank[i]]] = i;
            counts[rank[i]] += 1;
        }

        let key = |i: usize| (rank[i], rank.get(i + k).map_or(-1, |&r| r as isize));
        next_rank[sa[0]] = 0;
        classes = 1;
        for w in 1..n {
            if key(sa[w - 1]) != key(sa[w]) {
                classes += 1;
            }
            next_rank[sa[w]] = classes - 1;
        }
        std::mem::swap(&mut rank, &mut next_rank);
        k *= 2;
    }
    sa.into_iter().map(|p| p as u32).collect()
}

/// One chunk of the flattened corpus with its suffix array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    tokens: Vec<Token>,
    suffix_array: Vec<u32>,
    /// Exclusive end offsets of the conversations whose last token lies in
    /// this chunk, strictly increasing, each in `1..=tokens.len()`.
    conversation_ends: Vec<u32>,
}

impl Chunk {
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn suffix_array(&self) -> &[u32] {
        &self.suffix_array
    }

    pub fn conversation_ends(&self) -> &[u32] {
        &self.conversation_ends
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// End (exclusive) of the conversation segment containing `pos`, clipped
    /// to the chunk.
    pub fn segment_end(&self, pos: usize) -> usize {
        let i = self
            .conversation_ends
            .partition_point(|&e| e as usize <= pos);
        self.conversation_ends
            .get(i)
            .map_or(self.tokens.len(), |&e| e as usize)
    }

    fn compare_at(&self, rank: usize, context: &[Token]) -> Ordering {
        let pos = self.suffix_array[rank] as usize;
        let end = (pos + context.len()).min(self.tokens.len());
        self.tokens[pos..end].cmp(context)
    }

    /// Suffix-array rank range of suffixes starting with `context`, plus the
    /// number of suffix comparisons spent finding it.
    pub fn equal_range(&self, context: &[Token]) -> (std::ops::Range<usize>, u64) {
        let mut comparisons = 0;
        let lower = partition_point(self.len(), &mut comparisons, |r| {
            self.compare_at(r, context) == Ordering::Less
        });
        let upper = partition_point(self.len(), &mut comparisons, |r| {
            self.compare_at(r, context) != Ordering::Greater
        });
        (lower..upper.max(lower), comparisons)
    }
}

fn partition_point(len: usize, probes: &mut u64, mut pred: impl FnMut(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, len);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        *probes += 1;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Occurrence {
    pub chunk: u32,
    pub pos: u32,
}

/// Exact occurrences of a context across all chunks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchSet {
    pub context: Vec<Token>,
    /// In (chunk index, suffix-array rank) order.
    pub occurrences: Vec<Occurrence>,
    /// More valid occurrences existed beyond the cap.
    pub truncated: bool,
    /// Suffix comparisons performed by the binary searches.
    pub comparisons: u64,
}

impl MatchSet {
    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }

    pub fn len(&self) -> usize {
        self.occurrences.len()
    }
}

/// Result of a longest-suffix descent.
#[derive(Debug, Clone)]
pub struct SuffixMatch<'a> {
    pub n: usize,
    pub matches: MatchSet,
    pub continuations: Vec<&'a [Token]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DescentParams {
    pub max_n: usize,
    pub min_n: usize,
    pub max_matches: usize,
    pub continuation_len: usize,
}

impl Default for DescentParams {
    fn default() -> Self {
        DescentParams {
            max_n: DEFAULT_MAX_N,
            min_n: DEFAULT_MIN_N,
            max_matches: crate::DEFAULT_MAX_MATCHES,
            continuation_len: crate::DEFAULT_CONTINUATION_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SuffixStore {
    chunks: Vec<Chunk>,
    chunk_size: usize,
}

impl SuffixStore {
    pub fn build(flat: &FlattenedDataset, chunk_size: usize) -> Result<Self> {
        if chunk_size < 2 {
            return Err(Error::Argument(format!(
                "chunk size must be at least 2 tokens, got {chunk_size}"
            )));
        }
        if chunk_size > u32::MAX as usize {
            return Err(Error::Argument("chunk size must fit in 32 bits".into()));
        }
        let tokens = flat.tokens();
        let mut chunks: Vec<Chunk> = tokens
            .chunks(chunk_size)
            .map(|c| Chunk {
                tokens: c.to_vec(),
                suffix_array: build_suffix_array(c),
                conversation_ends: Vec::new(),
            })
            .collect();
        for range in flat.conversation_ranges() {
            let last = range.end - 1;
            let chunk = last / chunk_size;
            chunks[chunk]
                .conversation_ends
                .push((range.end - chunk * chunk_size) as u32);
        }
        Ok(SuffixStore { chunks, chunk_size })
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    /// Configured chunk size; for a decoded store, the longest chunk.
    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn token_count(&self) -> usize {
        self.chunks.iter().map(Chunk::len).sum()
    }

    /// Reassembles the flattened corpus this store was built from.
    pub fn flattened(&self) -> FlattenedDataset {
        let mut tokens = Vec::with_capacity(self.token_count());
        let mut boundaries = vec![];
        for chunk in &self.chunks {
            let base = tokens.len();
            if base == 0 && !chunk.is_empty() {
                boundaries.push(0);
            }
            boundaries.extend(chunk.conversation_ends.iter().map(|&e| base + e as usize));
            tokens.extend_from_slice(&chunk.tokens);
        }
        boundaries.retain(|&b| b < tokens.len());
        boundaries.dedup();
        FlattenedDataset::from_parts(tokens, boundaries)
            .expect("store boundaries are validated on construction")
    }

    pub fn content_hash(&self) -> u64 {
        self.flattened().content_hash()
    }

    /// Occurrences of `context` whose window stays inside one conversation,
    /// capped at `max_matches`.
    pub fn find_matches(&self, context: &[Token], max_matches: usize) -> Result<MatchSet> {
        if context.is_empty() {
            return Err(Error::Argument(
                "context must contain at least one token".into(),
            ));
        }
        if max_matches == 0 {
            return Err(Error::Argument("max_matches must be at least 1".into()));
        }
        let n = context.len();
        let mut set = MatchSet {
            context: context.to_vec(),
            occurrences: Vec::new(),
            truncated: false,
            comparisons: 0,
        };
        'chunks: for (ci, chunk) in self.chunks.iter().enumerate() {
            let (range, comparisons) = chunk.equal_range(context);
            set.comparisons += comparisons;
            for &pos in &chunk.suffix_array[range] {
                let pos = pos as usize;
                if chunk.segment_end(pos) < pos + n {
                    continue;
                }
                if set.occurrences.len() == max_matches {
                    set.truncated = true;
                    break 'chunks;
                }
                set.occurrences.push(Occurrence {
                    chunk: ci as u32,
                    pos: pos as u32,
                });
            }
        }
        Ok(set)
    }

    /// Up to `continuation_len` tokens after each occurrence, clipped at the
    /// chunk end and the conversation end. Empty continuations are dropped.
    pub fn retrieve_continuations(
        &self,
        matches: &MatchSet,
        continuation_len: usize,
    ) -> Vec<&[Token]> {
        let n = matches.context.len();
        matches
            .occurrences
            .iter()
            .filter_map(|occ| {
                let chunk = &self.chunks[occ.chunk as usize];
                let start = occ.pos as usize + n;
                let end = (start + continuation_len).min(chunk.segment_end(occ.pos as usize));
                (start < end).then(|| &chunk.tokens[start..end])
            })
            .collect()
    }

    /// Tries the last `n` generated tokens for `n` from `max_n` down to
    /// `min_n`; the first `n` with any match wins.
    pub fn longest_suffix_match(
        &self,
        generated: &[Token],
        params: &DescentParams,
    ) -> Result<Option<SuffixMatch<'_>>> {
        if params.min_n == 0 || params.max_n < params.min_n {
            return Err(Error::Argument(format!(
                "need max_n >= min_n >= 1, got max_n={} min_n={}",
                params.max_n, params.min_n
            )));
        }
        let top = params.max_n.min(generated.len());
        for n in (params.min_n..=top).rev() {
            let context = &generated[generated.len() - n..];
            let matches = self.find_matches(context, params.max_matches)?;
            if !matches.is_empty() {
                let continuations = self.retrieve_continuations(&matches, params.continuation_len);
                return Ok(Some(SuffixMatch {
                    n,
                    matches,
                    continuations,
                }));
            }
        }
        Ok(None)
    }

    /// Size of the encoded store in bytes.
    pub fn encoded_len(&self) -> u64 {
        12 + self
            .chunks
            .iter()
            .map(|c| 8 + 8 * c.len() as u64 + 4 + 4 * c.conversation_ends.len() as u64)
            .sum::<u64>()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.chunks.len() as u32).to_le_bytes())?;
        let mut buf = Vec::new();
        for chunk in &self.chunks {
            buf.clear();
            buf.extend_from_slice(&(chunk.len() as u64).to_le_bytes());
            buf.extend(chunk.tokens.iter().flat_map(|t| t.to_le_bytes()));
            buf.extend(chunk.suffix_array.iter().flat_map(|p| p.to_le_bytes()));
            buf.extend_from_slice(&(chunk.conversation_ends.len() as u32).to_le_bytes());
            buf.extend(chunk.conversation_ends.iter().flat_map(|e| e.to_le_bytes()));
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len() as usize);
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Decodes and validates an encoded store.
    ///
    /// Suffix arrays are checked to be permutations; their sort order is
    /// trusted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, expected RSDS".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let chunk_count = r.u32()? as usize;
        let mut chunks = Vec::with_capacity(chunk_count.min(1024));
        let mut chunk_size = 0;
        for ci in 0..chunk_count {
            let len = r.u64()?;
            if len > u32::MAX as u64 || len.saturating_mul(8) > r.remaining() as u64 {
                return Err(Error::Format(format!(
                    "chunk {ci}: length {len} exceeds input"
                )));
            }
            let len = len as usize;
            let tokens = r.u32_array(len)?;
            let suffix_array = r.u32_array(len)?;
            let mut seen = vec![false; len];
            for &p in &suffix_array {
                match seen.get_mut(p as usize) {
                    Some(s) if !*s => *s = true,
                    _ => {
                        return Err(Error::Format(format!(
                            "chunk {ci}: suffix array is not a permutation"
                        )))
                    }
                }
            }
            let end_count = r.u32()? as usize;
            let conversation_ends = r.u32_array(end_count)?;
            let ends_ok = conversation_ends.windows(2).all(|w| w[0] < w[1])
                && conversation_ends
                    .iter()
                    .all(|&e| e >= 1 && e as usize <= len);
            if !ends_ok {
                return Err(Error::Format(format!(
                    "chunk {ci}: invalid conversation ends"
                )));
            }
            chunk_size = chunk_size.max(len);
            chunks.push(Chunk {
                tokens,
                suffix_array,
                conversation_ends,
            });
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        let total: usize = chunks.iter().map(Chunk::len).sum();
        if total > 0 {
            let last_end = chunks
                .iter()
                .rev()
                .find(|c| !c.is_empty())
                .and_then(|c| c.conversation_ends.last().map(|&e| e as usize == c.len()));
            if last_end != Some(true) {
                return Err(Error::Format("final conversation is not terminated".into()));
            }
        }
        Ok(SuffixStore { chunks, chunk_size })
    }
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format(format!(
                "unexpected end of input at offset {} (need {n} bytes)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn u32_array(&mut self, n: usize) -> Result<Vec<u32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("array too long".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}
