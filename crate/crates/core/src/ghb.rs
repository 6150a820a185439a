//! Global History Buffer: a FIFO of recent miss block addresses chained by
//! an index table.
//!
//! Each entry links to the previous live entry with the same key. The key is
//! the PC in stride mode and the block address in Markov mode. Links carry the
//! target slot's sequence number so that a slot recycled by a later push is
//! never followed. The modeled hardware link is just the slot index
//! (9 bits for 512 entries); the sequence number is bookkeeping.
//!
//! Storage modeled for a 512-entry buffer: 45-bit block + 9-bit link per entry,
//! 3.375KB in total. The Markov index table is budgeted at about 1KB in
//! hardware but kept unbounded here; `live_keys` reports its occupancy.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::BlockAddr;

pub const DEFAULT_CAPACITY: usize = 512;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GhbError {
    #[error("GHB slot {0} holds no live entry")]
    DeadEntry(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GhbKeying {
    /// Stride mode (PC-localized chains).
    Pc,
    /// Markov mode (address-correlated chains).
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SlotRef {
    index: usize,
    seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GhbEntry {
    pub block: BlockAddr,
    pub pc: u64,
    link: Option<SlotRef>,
}

#[derive(Debug, Clone)]
struct Slot {
    entry: GhbEntry,
    seq: u64,
}

#[derive(Debug, Clone)]
pub struct Ghb {
    slots: Vec<Option<Slot>>,
    keying: GhbKeying,
    /// Number of pushes so far; the head has sequence `pushes - 1`.
    pushes: u64,
    index_table: HashMap<u64, SlotRef>,
}

impl Ghb {
    pub fn new(capacity: usize, keying: GhbKeying) -> Self {
        assert!(capacity > 0, "GHB capacity must be positive");
        Self { slots: vec![None; capacity], keying, pushes: 0, index_table: HashMap::new() }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn keying(&self) -> GhbKeying {
        self.keying
    }

    pub fn len(&self) -> usize {
        (self.pushes as usize).min(self.capacity())
    }

    pub fn is_empty(&self) -> bool {
        self.pushes == 0
    }

    pub fn live_keys(&self) -> usize {
        self.index_table.len()
    }

    fn key_of(&self, block: BlockAddr, pc: u64) -> u64 {
        match self.keying {
            GhbKeying::Pc => pc,
            GhbKeying::Block => block.0,
        }
    }

    fn is_live(&self, r: SlotRef) -> bool {
        matches!(&self.slots[r.index], Some(s) if s.seq == r.seq)
    }

    pub fn push(&mut self, block: BlockAddr, pc: u64) {
        let index = (self.pushes % self.capacity() as u64) as usize;
        if let Some(old) = self.slots[index].take() {
            let old_key = self.key_of(old.entry.block, old.entry.pc);
            if self.index_table.get(&old_key).is_some_and(|r| r.seq == old.seq) {
                self.index_table.remove(&old_key);
            }
        }
        let key = self.key_of(block, pc);
        let link = self.index_table.get(&key).copied();
        debug_assert!(link.is_none_or(|r| self.is_live(r)));
        let seq = self.pushes;
        self.slots[index] = Some(Slot { entry: GhbEntry { block, pc, link }, seq });
        self.index_table.insert(key, SlotRef { index, seq });
        self.pushes += 1;
    }

    pub fn head(&self) -> Option<usize> {
        (self.pushes > 0).then(|| ((self.pushes - 1) % self.capacity() as u64) as usize)
    }

    pub fn entry(&self, index: usize) -> Option<&GhbEntry> {
        self.slots.get(index)?.as_ref().map(|s| &s.entry)
    }

    /// The live entry an entry links to, if any.
    pub fn link(&self, index: usize) -> Option<usize> {
        let link = self.entry(index)?.link?;
        self.is_live(link).then_some(link.index)
    }

    /// Live entries with `key`, newest first.
    pub fn walk_chain(&self, key: u64) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cursor = self.index_table.get(&key).copied().filter(|r| self.is_live(*r));
        while let Some(r) = cursor {
            out.push(r.index);
            cursor = self.slots[r.index].as_ref().and_then(|s| s.entry.link).filter(|l| self.is_live(*l));
        }
        out
    }

    pub fn chain_for(&self, block: BlockAddr, pc: u64) -> Vec<usize> {
        self.walk_chain(self.key_of(block, pc))
    }

    pub fn distance_from_head(&self, index: usize) -> Result<usize, GhbError> {
        match self.slots.get(index) {
            Some(Some(s)) => Ok((self.pushes - 1 - s.seq) as usize),
            _ => Err(GhbError::DeadEntry(index)),
        }
    }

    /// The entry pushed `distance` pushes before the head.
    pub fn at_distance(&self, distance: usize) -> Option<&GhbEntry> {
        if distance >= self.len() {
            return None;
        }
        let seq = self.pushes - 1 - distance as u64;
        self.entry((seq % self.capacity() as u64) as usize)
    }

    /// Blocks of live entries, newest first.
    pub fn blocks_newest_first(&self) -> impl Iterator<Item = BlockAddr> + '_ {
        (0..self.len()).map(move |d| self.at_distance(d).expect("within len").block)
    }

    /// Text listing of live entries, newest first: `index block pc link`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for d in 0..self.len() {
            let seq = self.pushes - 1 - d as u64;
            let index = (seq % self.capacity() as u64) as usize;
            let e = self.entry(index).expect("live");
            let link = self.link(index).map_or_else(|| "-".to_string(), |l| l.to_string());
            writeln!(out, "{index} {:x} {:x} {link}", e.block.0, e.pc).unwrap();
        }
        out
    }

    /// Verifies that links and index-table pointers only reference live,
    /// strictly older entries with the same key.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (index, slot) in self.slots.iter().enumerate() {
            let Some(slot) = slot else { continue };
            if let Some(link) = slot.entry.link {
                if !self.is_live(link) {
                    continue;
                }
                let target = self.slots[link.index].as_ref().unwrap();
                if target.seq >= slot.seq {
                    return Err(format!("slot {index} links to a newer entry"));
                }
                let (k1, k2) = (
                    self.key_of(slot.entry.block, slot.entry.pc),
                    self.key_of(target.entry.block, target.entry.pc),
                );
                if k1 != k2 {
                    return Err(format!("slot {index} links across keys"));
                }
            }
        }
        for (key, r) in &self.index_table {
            if !self.is_live(*r) {
                return Err(format!("index table key {key:#x} points at a dead slot"));
            }
        }
        Ok(())
    }
}
