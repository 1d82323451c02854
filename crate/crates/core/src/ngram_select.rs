//! N-gram frequency counting and top-t key selection.
//!
//! Windows never cross a conversation boundary. Ranking uses the total order
//! (count desc, n-gram asc) so selections are independent of hash iteration
//! order.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use crate::corpus::FlattenedDataset;
use crate::{Error, Result, Token};

pub type NGram = Vec<Token>;

/// Rank percentiles sampled by [`frequency_report`].
pub const REPORT_PERCENTILES: [u32; 8] = [1, 2, 4, 8, 16, 32, 64, 100];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramCounts {
    n: usize,
    entries: HashMap<NGram, u64>,
}

impl NGramCounts {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &HashMap<NGram, u64> {
        &self.entries
    }

    pub fn unique(&self) -> usize {
        self.entries.len()
    }

    /// Total number of counted windows.
    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn get(&self, gram: &[Token]) -> u64 {
        self.entries.get(gram).copied().unwrap_or(0)
    }

    /// Entries ordered by count descending, then n-gram ascending.
    pub fn ranked(&self) -> Vec<(&NGram, u64)> {
        let mut v: Vec<(&NGram, u64)> = self.entries.iter().map(|(k, &c)| (k, c)).collect();
        v.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }

    /// Fraction of all windows covered by the `t` highest-ranked n-grams.
    pub fn mass_coverage(&self, t: usize) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let top: u64 = self.ranked().iter().take(t).map(|(_, c)| c).sum();
        top as f64 / total as f64
    }
}

pub fn count_ngrams(flat: &FlattenedDataset, n: usize) -> Result<NGramCounts> {
    if n == 0 {
        return Err(Error::Argument("n-gram size must be at least 1".into()));
    }
    let mut entries: HashMap<NGram, u64> = HashMap::new();
    for conv in flat.conversations() {
        for w in conv.windows(n) {
            match entries.get_mut(w) {
                Some(c) => *c += 1,
                None => {
                    entries.insert(w.to_vec(), 1);
                }
            }
        }
    }
    Ok(NGramCounts { n, entries })
}

/// A chosen subset of n-gram keys with their corpus frequencies.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NGramSelection {
    max_n: usize,
    per_n_budget: usize,
    /// Keys per gram size, in rank order.
    keys: BTreeMap<usize, Vec<(NGram, u64)>>,
}

impl NGramSelection {
    /// Selection from explicit keys; frequencies are recorded as given.
    pub fn from_keys(keys: impl IntoIterator<Item = (NGram, u64)>) -> Result<Self> {
        let mut by_n: BTreeMap<usize, Vec<(NGram, u64)>> = BTreeMap::new();
        for (k, c) in keys {
            if k.is_empty() || k.len() > u8::MAX as usize {
                return Err(Error::Argument(format!("invalid key length {}", k.len())));
            }
            by_n.entry(k.len()).or_default().push((k, c));
        }
        for v in by_n.values_mut() {
            v.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            v.dedup_by(|a, b| a.0 == b.0);
        }
        Ok(NGramSelection {
            max_n: by_n.keys().next_back().copied().unwrap_or(0),
            per_n_budget: by_n.values().map(Vec::len).max().unwrap_or(0),
            keys: by_n,
        })
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn per_n_budget(&self) -> usize {
        self.per_n_budget
    }

    pub fn len(&self) -> usize {
        self.keys.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keys of one gram size, in rank order.
    pub fn keys_of(&self, n: usize) -> &[(NGram, u64)] {
        self.keys.get(&n).map_or(&[], Vec::as_slice)
    }

    /// All keys, grouped by ascending gram size.
    pub fn iter(&self) -> impl Iterator<Item = &(NGram, u64)> + '_ {
        self.keys.values().flatten()
    }

    pub fn contains(&self, gram: &[Token]) -> bool {
        self.keys_of(gram.len()).iter().any(|(k, _)| k == gram)
    }
}

/// The `t` most frequent n-grams of a single size.
pub fn top_t_single(counts: &NGramCounts, t: usize) -> Result<NGramSelection> {
    if t == 0 {
        return Err(Error::Argument("t must be at least 1".into()));
    }
    let chosen: Vec<(NGram, u64)> = counts
        .ranked()
        .into_iter()
        .take(t)
        .map(|(k, c)| (k.clone(), c))
        .collect();
    let mut keys = BTreeMap::new();
    if !chosen.is_empty() {
        keys.insert(counts.n, chosen);
    }
    Ok(NGramSelection {
        max_n: counts.n,
        per_n_budget: t,
        keys,
    })
}

/// Union over `n` in `1..=max_n` of the `per_n_budget` most frequent n-grams.
pub fn top_t_combined(
    flat: &FlattenedDataset,
    max_n: usize,
    per_n_budget: usize,
) -> Result<NGramSelection> {
    let counts = (1..=max_n)
        .map(|n| count_ngrams(flat, n))
        .collect::<Result<Vec<_>>>()?;
    top_t_from_counts(&counts, per_n_budget)
}

/// [`top_t_combined`] over precomputed counts, one entry per gram size.
pub fn top_t_from_counts(counts: &[NGramCounts], per_n_budget: usize) -> Result<NGramSelection> {
    if counts.is_empty() {
        return Err(Error::Argument("max_n must be at least 1".into()));
    }
    let mut out = NGramSelection {
        max_n: counts.iter().map(NGramCounts::n).max().unwrap_or(0),
        per_n_budget,
        keys: BTreeMap::new(),
    };
    for c in counts {
        let single = top_t_single(c, per_n_budget)?;
        out.keys.extend(single.keys);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyRow {
    pub n: usize,
    pub unique_count: usize,
    pub percentile: u32,
    pub cumulative_mass_fraction: f64,
}

/// Per-n unique counts and the cumulative occurrence mass held by the top
/// `p`% of ranked n-grams, for each `p` in [`REPORT_PERCENTILES`].
pub fn frequency_report(flat: &FlattenedDataset, max_n: usize) -> Result<Vec<FrequencyRow>> {
    if max_n == 0 {
        return Err(Error::Argument("max_n must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for n in 1..=max_n {
        let counts = count_ngrams(flat, n)?;
        let ranked = counts.ranked();
        let total = counts.total();
        let mut prefix = Vec::with_capacity(ranked.len() + 1);
        prefix.push(0u64);
        for (_, c) in &ranked {
            prefix.push(prefix.last().unwrap() + c);
        }
        for p in REPORT_PERCENTILES {
            let unique = ranked.len();
            let k = (unique as u64 * u64::from(p)).div_ceil(100) as usize;
            let mass = if total == 0 {
                0.0
            } else {
                prefix[k] as f64 / total as f64
            };
            rows.push(FrequencyRow {
                n,
                unique_count: unique,
                percentile: p,
                cumulative_mass_fraction: mass,
            });
        }
    }
    Ok(rows)
}

pub fn write_frequency_csv<W: Write>(rows: &[FrequencyRow], mut out: W) -> Result<()> {
    writeln!(out, "n,unique_count,percentile,cumulative_mass_fraction")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6}",
            r.n, r.unique_count, r.percentile, r.cumulative_mass_fraction
        )?;
    }
    Ok(())
}
