//! Brute-force reference models used by the integration tests. Each one is
//! written against plain lists so it shares no code with the simulator.
#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

use ppsim::ghb::GhbKeying;

/// A miss history kept as a plain list, oldest first.
#[derive(Debug, Clone)]
pub struct ListHistory {
    pub capacity: usize,
    pub entries: Vec<(u64, u64)>,
}

impl ListHistory {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: Vec::new() }
    }

    pub fn push(&mut self, block: u64, pc: u64) {
        self.entries.push((block, pc));
        if self.entries.len() > self.capacity {
            self.entries.remove(0);
        }
    }

    /// Blocks, newest first.
    pub fn newest_first(&self) -> Vec<u64> {
        self.entries.iter().rev().map(|&(b, _)| b).collect()
    }

    /// Distances from the newest entry of every entry whose key matches.
    pub fn chain_distances(&self, keying: GhbKeying, key: u64) -> Vec<usize> {
        self.entries
            .iter()
            .rev()
            .enumerate()
            .filter(|(_, &(b, pc))| match keying {
                GhbKeying::Pc => pc == key,
                GhbKeying::Block => b == key,
            })
            .map(|(d, _)| d)
            .collect()
    }
}

/// Successor ranking over a newest-first list whose head is the trigger.
pub fn markov_top_k(newest_first: &[u64], degree: usize) -> Vec<u64> {
    let trigger = newest_first[0];
    let mut count: HashMap<u64, usize> = HashMap::new();
    let mut recent: HashMap<u64, usize> = HashMap::new();
    for d in 1..newest_first.len() {
        if newest_first[d] != trigger {
            continue;
        }
        let succ = newest_first[d - 1];
        if succ == trigger {
            continue;
        }
        *count.entry(succ).or_default() += 1;
        let r = recent.entry(succ).or_insert(usize::MAX);
        *r = (*r).min(d - 1);
    }
    let mut blocks: Vec<u64> = count.keys().copied().collect();
    blocks.sort_by_key(|b| (std::cmp::Reverse(count[b]), recent[b], *b));
    blocks.truncate(degree);
    blocks
}

pub fn distance_feature(newest_first: &[u64], target: u64, capacity: usize) -> usize {
    newest_first.iter().position(|&b| b == target).unwrap_or(capacity)
}

pub fn occurrence_feature(newest_first: &[u64], target: u64) -> usize {
    newest_first.iter().filter(|&&b| b == target).count()
}

/// Transition weight as an exact fraction `(num, den)`.
pub fn transition_feature(newest_first: &[u64], target: u64, window: u32) -> (u64, u64) {
    let trigger = newest_first[0];
    let mut k = 0u64;
    let mut num = 0u64;
    for d in 1..newest_first.len() {
        if newest_first[d] != trigger {
            continue;
        }
        k += 1;
        for m in 1..=window as usize {
            if m <= d && newest_first[d - m] == target {
                num += 2u64.pow(window - m as u32);
            }
        }
    }
    if k == 0 {
        (0, 1)
    } else {
        (num, k * 2u64.pow(window))
    }
}

pub fn same_fraction(a: (u64, u64), b: (u64, u64)) -> bool {
    a.0 as u128 * b.1 as u128 == b.0 as u128 * a.1 as u128
}

pub fn dot(w: &[i8], x: &[i8]) -> i64 {
    let mut s = 0i64;
    for j in 0..w.len() {
        s += w[j] as i64 * x[j] as i64;
    }
    s
}

pub fn train_reference(w: &[i8], x: &[i8], alpha: i64, d: i64, r: i64) -> Vec<i8> {
    w.iter()
        .zip(x)
        .map(|(&wj, &xj)| (wj as i64 + alpha * (d - r) * xj as i64).clamp(-128, 127) as i8)
        .collect()
}

/// Set-associative LRU level: each set is a list, most recent first.
#[derive(Debug, Clone)]
pub struct RefLevel {
    pub sets: Vec<VecDeque<u64>>,
    pub ways: usize,
    pub hits: u64,
    pub misses: u64,
}

impl RefLevel {
    pub fn new(size_bytes: u64, line_bytes: u64, ways: u64) -> Self {
        let sets = (size_bytes / line_bytes / ways) as usize;
        Self { sets: vec![VecDeque::new(); sets], ways: ways as usize, hits: 0, misses: 0 }
    }

    /// Returns whether `block` hit; a miss installs it.
    pub fn access(&mut self, block: u64) -> bool {
        let n = self.sets.len() as u64;
        let set = &mut self.sets[(block % n) as usize];
        if let Some(pos) = set.iter().position(|&b| b == block) {
            set.remove(pos);
            set.push_front(block);
            self.hits += 1;
            true
        } else {
            set.push_front(block);
            set.truncate(self.ways);
            self.misses += 1;
            false
        }
    }
}

/// Non-inclusive hierarchy: look up top-down, fill every missed level.
pub struct RefHierarchy {
    pub levels: Vec<RefLevel>,
}

impl RefHierarchy {
    pub fn access(&mut self, block: u64) {
        for level in &mut self.levels {
            if level.access(block) {
                break;
            }
        }
    }
}
