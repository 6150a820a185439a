//! Trace records, the text trace format, and synthetic trace generators.
//!
//! A trace file is UTF-8 text with one record per line:
//!
//! ```text
//! # comment
//! 401a2b 7fff0040 R
//! 401a2f 7fff0080 W
//! ```
//!
//! Fields are hex without a `0x` prefix (either case), separated by a single
//! space. Gzip-compressed files are detected by their magic bytes and
//! decompressed transparently.
//!
//! Generators draw from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`, so a given `TraceSpec` yields the same trace on every
//! platform.

use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Virtual addresses (instruction and data) are 48 bits wide.
pub const VADDR_BITS: u32 = 48;
pub const VADDR_LIMIT: u64 = 1 << VADDR_BITS;

/// Default line size in bytes.
pub const DEFAULT_LINE_BYTES: u64 = 64;

/// PC assigned to generated accesses; per-stream PCs are offset from it.
pub const GENERATED_PC_BASE: u64 = 0x40_0000;
const GENERATED_PC_STEP: u64 = 0x10;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed trace record on line {line_no}")]
    MalformedLine { line_no: usize },
    #[error("value {value:#x} on line {line_no} exceeds the 48-bit address space")]
    ValueOutOfRange { line_no: usize, value: u64 },
    #[error("invalid trace spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    Read,
    Write,
}

impl AccessKind {
    fn as_char(self) -> char {
        match self {
            AccessKind::Read => 'R',
            AccessKind::Write => 'W',
        }
    }
}

/// One trace record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemoryAccess {
    pub pc: u64,
    pub addr: u64,
    pub kind: AccessKind,
}

impl MemoryAccess {
    pub fn new(pc: u64, addr: u64, kind: AccessKind) -> Result<Self, TraceError> {
        for value in [pc, addr] {
            if value >= VADDR_LIMIT {
                return Err(TraceError::ValueOutOfRange { line_no: 0, value });
            }
        }
        Ok(Self { pc, addr, kind })
    }

    pub fn read(pc: u64, addr: u64) -> Self {
        Self { pc, addr, kind: AccessKind::Read }
    }

    /// Block address for a power-of-two line size.
    pub fn block(&self, line_bytes: u64) -> BlockAddr {
        BlockAddr(self.addr >> line_bytes.trailing_zeros())
    }
}

impl fmt::Display for MemoryAccess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:x} {:x} {}", self.pc, self.addr, self.kind.as_char())
    }
}

/// Cache-line address: the byte address shifted right by log2(line size).
/// With 64-byte lines and 48-bit addresses it fits in 45 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockAddr(pub u64);

impl BlockAddr {
    pub const BITS: u32 = VADDR_BITS - 6;

    pub fn offset(self, delta: i64) -> Option<BlockAddr> {
        let v = (self.0 as i64).checked_add(delta)?;
        if v < 0 || (v as u64) >= (1u64 << Self::BITS) {
            None
        } else {
            Some(BlockAddr(v as u64))
        }
    }
}

impl fmt::Display for BlockAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// Block address of an access with the default 64-byte line.
pub fn block_of(access: &MemoryAccess) -> BlockAddr {
    access.block(DEFAULT_LINE_BYTES)
}

fn parse_line(line: &str, line_no: usize) -> Result<Option<MemoryAccess>, TraceError> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let malformed = || TraceError::MalformedLine { line_no };
    let mut fields = line.split(' ');
    let (Some(pc), Some(addr), Some(kind), None) =
        (fields.next(), fields.next(), fields.next(), fields.next())
    else {
        return Err(malformed());
    };
    let hex = |s: &str| -> Result<u64, TraceError> {
        if s.is_empty() || s.starts_with('+') {
            return Err(malformed());
        }
        let value = u64::from_str_radix(s, 16).map_err(|_| malformed())?;
        if value >= VADDR_LIMIT {
            return Err(TraceError::ValueOutOfRange { line_no, value });
        }
        Ok(value)
    };
    let pc = hex(pc)?;
    let addr = hex(addr)?;
    let kind = match kind {
        "R" => AccessKind::Read,
        "W" => AccessKind::Write,
        _ => return Err(malformed()),
    };
    Ok(Some(MemoryAccess { pc, addr, kind }))
}

/// Streaming parser over a buffered reader. Line numbers are 1-based.
pub struct TraceReader<R> {
    input: R,
    line_no: usize,
    buf: String,
    done: bool,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(input: R) -> Self {
        Self { input, line_no: 0, buf: String::new(), done: false }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<MemoryAccess, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => self.done = true,
                Ok(_) => {
                    self.line_no += 1;
                    let line = self.buf.strip_suffix('\n').unwrap_or(&self.buf);
                    match parse_line(line, self.line_no) {
                        Ok(Some(access)) => return Some(Ok(access)),
                        Ok(None) => continue,
                        Err(e) => {
                            self.done = true;
                            return Some(Err(e));
                        }
                    }
                }
                Err(e) => {
                    self.done = true;
                    // Invalid UTF-8 surfaces as a malformed record.
                    if e.kind() == io::ErrorKind::InvalidData {
                        return Some(Err(TraceError::MalformedLine { line_no: self.line_no + 1 }));
                    }
                    return Some(Err(e.into()));
                }
            }
        }
        None
    }
}

/// Parses a trace from a byte stream, sniffing for gzip.
pub fn parse_trace<R: Read + 'static>(
    input: R,
) -> io::Result<TraceReader<Box<dyn BufRead>>> {
    let mut input = BufReader::new(input);
    let is_gzip = input.fill_buf()?.starts_with(&[0x1f, 0x8b]);
    let reader: Box<dyn BufRead> = if is_gzip {
        Box::new(BufReader::new(flate2::bufread::MultiGzDecoder::new(input)))
    } else {
        Box::new(input)
    };
    Ok(TraceReader::new(reader))
}

/// Parses a whole in-memory trace.
pub fn parse_str(text: &str) -> Result<Vec<MemoryAccess>, TraceError> {
    TraceReader::new(text.as_bytes()).collect()
}

/// Writes records in canonical form: lowercase hex, comments dropped.
pub fn write_trace<'a, W, I>(mut out: W, records: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a MemoryAccess>,
{
    for record in records {
        writeln!(out, "{record}")?;
    }
    Ok(())
}

pub fn serialize(records: &[MemoryAccess]) -> String {
    let mut out = Vec::new();
    write_trace(&mut out, records).expect("writing to a Vec cannot fail");
    String::from_utf8(out).expect("trace text is ASCII")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PcPolicy {
    #[default]
    SinglePc,
    PcPerStream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Generator {
    /// `addr_i = start + i * stride_bytes`.
    Strided { start: u64, stride_bytes: i64, count: usize },
    /// Random walk over `states` (byte addresses) starting at state 0.
    MarkovChain {
        states: Vec<u64>,
        transition_matrix: Vec<Vec<f64>>,
        count: usize,
        seed: u64,
    },
    /// Uniform byte addresses in `[base, base + footprint_bytes)`.
    UniformRandom {
        footprint_bytes: u64,
        count: usize,
        seed: u64,
        #[serde(default)]
        base: u64,
    },
    /// Round-robin over sub-streams, `granularity` records at a time.
    /// Exhausted streams drop out of the rotation.
    Interleaved { streams: Vec<Generator>, granularity: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    pub generator: Generator,
    #[serde(default)]
    pub pc_policy: PcPolicy,
}

const ROW_SUM_TOLERANCE: f64 = 1e-9;

impl Generator {
    pub fn validate(&self) -> Result<(), TraceError> {
        let invalid = |msg: String| Err(TraceError::InvalidSpec(msg));
        match self {
            Generator::Strided { start, stride_bytes, count } => {
                if *count == 0 {
                    return invalid("strided: count must be > 0".into());
                }
                let last = *start as i128 + (*count as i128 - 1) * *stride_bytes as i128;
                if *start >= VADDR_LIMIT || last < 0 || last >= VADDR_LIMIT as i128 {
                    return invalid("strided: addresses leave the 48-bit space".into());
                }
            }
            Generator::MarkovChain { states, transition_matrix, count, .. } => {
                if *count == 0 {
                    return invalid("markov-chain: count must be > 0".into());
                }
                if states.is_empty() {
                    return invalid("markov-chain: no states".into());
                }
                if let Some(a) = states.iter().find(|&&a| a >= VADDR_LIMIT) {
                    return invalid(format!("markov-chain: state address {a:#x} out of range"));
                }
                if transition_matrix.len() != states.len() {
                    return invalid("markov-chain: matrix must have one row per state".into());
                }
                for (i, row) in transition_matrix.iter().enumerate() {
                    if row.len() != states.len() {
                        return invalid(format!("markov-chain: row {i} has wrong length"));
                    }
                    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                        return invalid(format!("markov-chain: row {i} has a negative entry"));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                        return invalid(format!("markov-chain: row {i} sums to {sum}"));
                    }
                }
            }
            Generator::UniformRandom { footprint_bytes, count, base, .. } => {
                if *count == 0 {
                    return invalid("uniform-random: count must be > 0".into());
                }
                if *footprint_bytes == 0 {
                    return invalid("uniform-random: footprint must be > 0".into());
                }
                if base.checked_add(*footprint_bytes).is_none_or(|end| end > VADDR_LIMIT) {
                    return invalid("uniform-random: footprint leaves the 48-bit space".into());
                }
            }
            Generator::Interleaved { streams, granularity } => {
                if streams.is_empty() {
                    return invalid("interleaved: no streams".into());
                }
                if *granularity == 0 {
                    return invalid("interleaved: granularity must be > 0".into());
                }
                for s in streams {
                    s.validate()?;
                }
            }
        }
        Ok(())
    }

    fn leaf_count(&self) -> usize {
        match self {
            Generator::Interleaved { streams, .. } => streams.iter().map(Self::leaf_count).sum(),
            _ => 1,
        }
    }

    /// Yields `(leaf stream id, byte address)`; leaves are numbered depth-first.
    fn stream(&self, first_leaf: usize) -> Box<dyn Iterator<Item = (usize, u64)> + Send> {
        match self.clone() {
            Generator::Strided { start, stride_bytes, count } => Box::new(
                (0..count as i64).map(move |i| (first_leaf, (start as i64 + i * stride_bytes) as u64)),
            ),
            Generator::MarkovChain { states, transition_matrix, count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut state = 0usize;
                Box::new((0..count).map(move |i| {
                    if i > 0 {
                        state = sample_row(&transition_matrix[state], rng.gen::<f64>());
                    }
                    (first_leaf, states[state])
                }))
            }
            Generator::UniformRandom { footprint_bytes, count, seed, base } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Box::new(
                    (0..count).map(move |_| (first_leaf, base + rng.gen_range(0..footprint_bytes))),
                )
            }
            Generator::Interleaved { streams, granularity } => {
                let mut next_leaf = first_leaf;
                let children: Vec<_> = streams
                    .iter()
                    .map(|s| {
                        let it = s.stream(next_leaf);
                        next_leaf += s.leaf_count();
                        it
                    })
                    .collect();
                Box::new(RoundRobin { children, granularity, current: 0, taken: 0 })
            }
        }
    }
}

fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding can leave u just above the accumulated sum.
    row.iter().rposition(|p| *p > 0.0).unwrap_or(row.len() - 1)
}

struct RoundRobin {
    children: Vec<Box<dyn Iterator<Item = (usize, u64)> + Send>>,
    granularity: usize,
    current: usize,
    taken: usize,
}

impl Iterator for RoundRobin {
    type Item = (usize, u64);

    fn next(&mut self) -> Option<Self::Item> {
        while !self.children.is_empty() {
            if self.current >= self.children.len() {
                self.current = 0;
            }
            match self.children[self.current].next() {
                Some(item) => {
                    self.taken += 1;
                    if self.taken == self.granularity {
                        self.taken = 0;
                        self.current += 1;
                    }
                    return Some(item);
                }
                None => {
                    drop(self.children.remove(self.current));
                    self.taken = 0;
                }
            }
        }
        None
    }
}

impl TraceSpec {
    pub fn new(generator: Generator) -> Self {
        Self { generator, pc_policy: PcPolicy::SinglePc }
    }

    pub fn with_pc_policy(mut self, pc_policy: PcPolicy) -> Self {
        self.pc_policy = pc_policy;
        self
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        self.generator.validate()
    }
}

/// Lazily generates the trace described by `spec`.
pub fn generate_trace(
    spec: &TraceSpec,
) -> Result<impl Iterator<Item = MemoryAccess> + Send, TraceError> {
    spec.validate()?;
    let policy = spec.pc_policy;
    Ok(spec.generator.stream(0).map(move |(leaf, addr)| {
        let pc = match policy {
            PcPolicy::SinglePc => GENERATED_PC_BASE,
            PcPolicy::PcPerStream => GENERATED_PC_BASE + GENERATED_PC_STEP * leaf as u64,
        };
        MemoryAccess::read(pc, addr)
    }))
}
