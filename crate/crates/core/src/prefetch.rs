//! First-level prefetchers built on the GHB: PC-localized stride and
//! address-correlated Markov.
//!
//! Both are pure functions over a GHB into which the triggering miss has
//! already been pushed.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::ghb::Ghb;
use crate::trace::BlockAddr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Stride,
    Markov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Miss {
    pub block: BlockAddr,
    pub pc: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefetchSuggestion {
    pub block: BlockAddr,
    pub trigger_block: BlockAddr,
    pub trigger_pc: u64,
    pub origin: Origin,
    /// Position in the emission order; always below the degree.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrideConfig {
    pub degree: usize,
    /// Chained addresses that must be evenly spaced to confirm a stride.
    pub confirm_len: usize,
}

impl Default for StrideConfig {
    fn default() -> Self {
        Self { degree: 2, confirm_len: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovConfig {
    pub degree: usize,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        Self { degree: 4 }
    }
}

/// Confirms a constant nonzero delta over the newest `confirm_len` blocks of
/// the miss PC's chain and emits `A + s, A + 2s, ..., A + degree*s`.
pub fn stride_suggest(ghb: &Ghb, miss: Miss, cfg: &StrideConfig) -> Vec<PrefetchSuggestion> {
    if cfg.confirm_len < 2 {
        return Vec::new();
    }
    let chain = ghb.chain_for(miss.block, miss.pc);
    if chain.len() < cfg.confirm_len {
        return Vec::new();
    }
    let blocks: Vec<i64> =
        chain[..cfg.confirm_len].iter().map(|&i| ghb.entry(i).unwrap().block.0 as i64).collect();
    let stride = blocks[0] - blocks[1];
    if stride == 0 || blocks.windows(2).any(|w| w[0] - w[1] != stride) {
        return Vec::new();
    }
    (1..=cfg.degree as i64)
        .filter_map(|k| miss.block.offset(k * stride))
        .enumerate()
        .map(|(rank, block)| PrefetchSuggestion {
            block,
            trigger_block: miss.block,
            trigger_pc: miss.pc,
            origin: Origin::Stride,
            rank,
        })
        .collect()
}

/// Ranks the successors (next-pushed entries) of every prior occurrence of
/// the miss block. Order: count descending, then most recent successor
/// first, then ascending block address. The trigger block itself is never
/// suggested.
pub fn markov_suggest(ghb: &Ghb, miss: Miss, cfg: &MarkovConfig) -> Vec<PrefetchSuggestion> {
    let chain = ghb.chain_for(miss.block, miss.pc);
    // Skip the just-pushed head.
    let prior = match chain.first() {
        Some(&first) if ghb.distance_from_head(first) == Ok(0) => &chain[1..],
        _ => &chain[..],
    };
    // block -> (count, distance of the most recent successor)
    let mut tally: HashMap<BlockAddr, (usize, usize)> = HashMap::new();
    for &occ in prior {
        let dist = ghb.distance_from_head(occ).expect("chain entries are live");
        if dist == 0 {
            continue;
        }
        let Some(succ) = ghb.at_distance(dist - 1) else { continue };
        if succ.block == miss.block {
            continue;
        }
        let e = tally.entry(succ.block).or_insert((0, usize::MAX));
        e.0 += 1;
        e.1 = e.1.min(dist - 1);
    }
    let mut ranked: Vec<_> = tally.into_iter().collect();
    ranked.sort_by(|(b1, (c1, d1)), (b2, (c2, d2))| c2.cmp(c1).then(d1.cmp(d2)).then(b1.cmp(b2)));
    ranked
        .into_iter()
        .take(cfg.degree)
        .enumerate()
        .map(|(rank, (block, _))| PrefetchSuggestion {
            block,
            trigger_block: miss.block,
            trigger_pc: miss.pc,
            origin: Origin::Markov,
            rank,
        })
        .collect()
}
