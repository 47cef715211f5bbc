//! Byte-level BPE learned over whitespace-bounded chunks.
//!
//! Merges never span a whitespace/non-whitespace boundary. This keeps the
//! encoding of a word identical wherever it appears, which the mono-word
//! matcher and the commit step of the decoder both rely on: a word matched
//! in running text must re-encode to the same token ids as the standalone
//! word. Runs of whitespace form their own chunks and may merge internally.

use std::collections::HashMap;

use super::{TokenId, TokenizerError, EOT_TOKEN};

#[derive(Debug, Clone)]
pub struct Vocabulary {
    /// entries[0..256] are the single bytes; entries[256 + r] is the byte
    /// string produced by merge r.
    entries: Vec<Vec<u8>>,
    merges: Vec<(TokenId, TokenId)>,
    merge_rank: HashMap<(TokenId, TokenId), u32>,
}

impl Vocabulary {
    /// The 256 single-byte tokens and no merges.
    pub fn byte_base() -> Self {
        Self::from_merges(Vec::new()).expect("byte base is always valid")
    }

    /// Rebuilds a vocabulary from its merge list, validating consistency.
    pub fn from_merges(merges: Vec<(TokenId, TokenId)>) -> Result<Self, TokenizerError> {
        let mut entries: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        for (rank, &(l, r)) in merges.iter().enumerate() {
            let bad = |side: TokenId| {
                TokenizerError::InvalidVocabulary(format!(
                    "merge {rank} refers to id {side} before it exists"
                ))
            };
            if l as usize >= entries.len() {
                return Err(bad(l));
            }
            if r as usize >= entries.len() {
                return Err(bad(r));
            }
            let mut joined = entries[l as usize].clone();
            joined.extend_from_slice(&entries[r as usize]);
            entries.push(joined);
        }
        let merge_rank = merges
            .iter()
            .enumerate()
            .map(|(rank, &pair)| (pair, rank as u32))
            .collect();
        Ok(Self { entries, merges, merge_rank })
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn entry(&self, id: TokenId) -> Result<&[u8], TokenizerError> {
        self.entries
            .get(id as usize)
            .map(Vec::as_slice)
            .ok_or(TokenizerError::TokenOutOfRange(id, self.entries.len()))
    }

    /// Applies merges in rank order within each chunk. Every byte string is
    /// encodable; unseen bytes fall back to their single-byte tokens.
    pub fn encode(&self, text: &[u8]) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(text.len() / 2 + 1);
        let mut memo: HashMap<&[u8], Vec<TokenId>> = HashMap::new();
        for chunk in chunks(text) {
            match memo.get(chunk) {
                Some(ids) => out.extend_from_slice(ids),
                None => {
                    let ids = self.encode_chunk(chunk);
                    out.extend_from_slice(&ids);
                    memo.insert(chunk, ids);
                }
            }
        }
        out
    }

    fn encode_chunk(&self, chunk: &[u8]) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = chunk.iter().map(|&b| b as TokenId).collect();
        loop {
            let mut best: Option<(u32, usize)> = None;
            for (i, pair) in ids.windows(2).enumerate() {
                if let Some(&rank) = self.merge_rank.get(&(pair[0], pair[1])) {
                    if best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((rank, _)) = best else { break };
            let (l, r) = self.merges[rank as usize];
            merge_in_place(&mut ids, l, r, 256 + rank);
        }
        ids
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<u8>, TokenizerError> {
        let mut out = Vec::with_capacity(ids.len() * 2);
        for &id in ids {
            out.extend_from_slice(self.entry(id)?);
        }
        Ok(out)
    }

    /// Grows the entry table with decode-only entries. `encode` never
    /// produces the new ids (they have no merges); `decode` and `entry`
    /// resolve them. The vocabulary-expansion baseline uses this to give
    /// whole words atomic ids in an extended model.
    pub fn with_decode_entries(&self, extra: &[Vec<u8>]) -> Vocabulary {
        let mut entries = self.entries.clone();
        entries.extend(extra.iter().cloned());
        Vocabulary {
            entries,
            merges: self.merges.clone(),
            merge_rank: self.merge_rank.clone(),
        }
    }
}

/// Learns `num_merges` merges from the corpus. Each step merges the most
/// frequent adjacent pair across all chunks; ties break toward the
/// lexicographically smallest merged byte string. Errors if the corpus runs
/// out of adjacent pairs early, since the vocabulary size contract is exact.
pub fn learn_bpe(corpus: &[u8], num_merges: usize) -> Result<Vocabulary, TokenizerError> {
    let mut entries: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut merges: Vec<(TokenId, TokenId)> = Vec::with_capacity(num_merges);

    // Identical chunks recur constantly (words, single spaces), so learning
    // runs over unique chunks with multiplicities.
    let mut chunk_counts: HashMap<&[u8], u64> = HashMap::new();
    for chunk in chunks(corpus) {
        *chunk_counts.entry(chunk).or_insert(0) += 1;
    }
    let mut work: Vec<(Vec<TokenId>, u64)> = chunk_counts
        .into_iter()
        .map(|(chunk, n)| (chunk.iter().map(|&b| b as TokenId).collect(), n))
        .collect();
    work.sort_unstable(); // deterministic iteration independent of hash order

    for rank in 0..num_merges {
        let mut pair_counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        for (ids, n) in &work {
            for pair in ids.windows(2) {
                *pair_counts.entry((pair[0], pair[1])).or_insert(0) += n;
            }
        }
        let best = pair_counts.into_iter().max_by(|a, b| {
            a.1.cmp(&b.1).then_with(|| {
                let joined = |&(l, r): &(TokenId, TokenId)| {
                    let mut s = entries[l as usize].clone();
                    s.extend_from_slice(&entries[r as usize]);
                    s
                };
                // prefer the smaller merged string, so invert for max_by
                joined(&b.0).cmp(&joined(&a.0))
            })
        });
        let Some(((l, r), _)) = best else {
            return Err(TokenizerError::NotEnoughPairs(rank, num_merges));
        };
        let new_id = (256 + rank) as TokenId;
        let mut joined = entries[l as usize].clone();
        joined.extend_from_slice(&entries[r as usize]);
        entries.push(joined);
        merges.push((l, r));
        for (ids, _) in &mut work {
            merge_in_place(ids, l, r, new_id as u32);
        }
    }

    Vocabulary::from_merges(merges)
}

/// Greedy left-to-right replacement of the pair (l, r) by new_id.
fn merge_in_place(ids: &mut Vec<TokenId>, l: TokenId, r: TokenId, new_id: u32) {
    let mut write = 0;
    let mut read = 0;
    while read < ids.len() {
        if read + 1 < ids.len() && ids[read] == l && ids[read + 1] == r {
            ids[write] = new_id;
            read += 2;
        } else {
            ids[write] = ids[read];
            read += 1;
        }
        write += 1;
    }
    ids.truncate(write);
}

/// Splits text into maximal runs of one class: whitespace, the reserved
/// sentinel byte, or anything else. Sentinel bytes always stand alone.
pub(crate) fn chunks(text: &[u8]) -> impl Iterator<Item = &[u8]> {
    ChunkIter { text, pos: 0 }
}

struct ChunkIter<'a> {
    text: &'a [u8],
    pos: usize,
}

fn class(b: u8) -> u8 {
    if b as TokenId == EOT_TOKEN {
        2
    } else if b.is_ascii_whitespace() {
        1
    } else {
        0
    }
}

impl<'a> Iterator for ChunkIter<'a> {
    type Item = &'a [u8];

    fn next(&mut self) -> Option<&'a [u8]> {
        if self.pos >= self.text.len() {
            return None;
        }
        let start = self.pos;
        let c = class(self.text[start]);
        self.pos += 1;
        if c != 2 {
            while self.pos < self.text.len() && class(self.text[self.pos]) == c {
                self.pos += 1;
            }
        }
        Some(&self.text[start..self.pos])
    }
}
