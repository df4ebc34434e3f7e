//! Simulated external memory with exact block-transfer accounting.
//!
//! Every bulk data structure in this crate lives in [`ExtVec`] sequences owned
//! by a [`Session`]. A session is parameterized by an [`IoConfig`] holding the
//! memory budget `M` and the block size `B`, both measured in records. Reading
//! or writing `n` consecutive records of a sequence charges the session one
//! block transfer per distinct block touched, so a range of `n` records costs
//! `ceil(n/B)` transfers plus at most one boundary block per end.
//!
//! In-memory working sets are tracked with [`MemGuard`] reservations; a
//! reservation that would push the resident total past `M` records aborts in
//! debug builds. CPU work is free, matching the cost model.

use std::cell::Cell;
use std::fs::File;
use std::io::{Seek, SeekFrom, Write as _};
use std::marker::PhantomData;
use std::path::PathBuf;
use std::rc::Rc;

use thiserror::Error;

/// Storage word. All records are fixed-width tuples of words.
pub type Word = i64;

/// Environment variable selecting directory-backed mode. When set, every
/// sequence is mirrored to one file of little-endian 64-bit words.
pub const STORE_DIR_ENV: &str = "IOCUT_STORE_DIR";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("invalid I/O configuration: M={memory_words} B={block_words} (need M >= 4B and B >= 2)")]
    BadConfig { memory_words: usize, block_words: usize },
    #[error("range [{from}, {from}+{count}) out of bounds for sequence of {len} records")]
    OutOfBounds { from: usize, count: usize, len: usize },
    #[error("store directory error: {0}")]
    Dir(#[from] std::io::Error),
}

/// Block-model parameters: memory and block capacity, in records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IoConfig {
    /// `M`: number of records the internal memory holds.
    pub memory_words: usize,
    /// `B`: number of records per block.
    pub block_words: usize,
}

impl IoConfig {
    pub fn new(memory_words: usize, block_words: usize) -> Result<Self, IoError> {
        if block_words < 2 || memory_words < 4 * block_words {
            return Err(IoError::BadConfig { memory_words, block_words });
        }
        Ok(IoConfig { memory_words, block_words })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.memory_words
    }

    #[inline]
    pub fn b(&self) -> usize {
        self.block_words
    }

    /// `floor(M/B)`, the number of blocks that fit in memory.
    #[inline]
    pub fn blocks_in_memory(&self) -> usize {
        self.memory_words / self.block_words
    }

    /// `log_{M/B}(n/B)` rounded up, never below zero. The exponent used in all
    /// sort-bound budgets.
    pub fn log_mb(&self, n: usize) -> f64 {
        let base = (self.blocks_in_memory() as f64).max(2.0);
        let arg = ((n as f64) / (self.block_words as f64)).max(1.0);
        (arg.ln() / base.ln()).max(0.0)
    }

    /// The sort bound `(n/B) * (1 + log_{M/B}(n/B))` as a float, used by
    /// budget checks in tests and the CLI.
    pub fn sort_bound(&self, n: usize) -> f64 {
        let nb = (n as f64 / self.block_words as f64).ceil().max(1.0);
        nb * (1.0 + self.log_mb(n))
    }
}

/// Monotone counters of block transfers for one session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IoStats {
    pub block_reads: u64,
    pub block_writes: u64,
}

impl IoStats {
    #[inline]
    pub fn total(&self) -> u64 {
        self.block_reads + self.block_writes
    }

    /// Transfers performed since `earlier` was captured.
    pub fn since(&self, earlier: IoStats) -> IoStats {
        IoStats {
            block_reads: self.block_reads - earlier.block_reads,
            block_writes: self.block_writes - earlier.block_writes,
        }
    }
}

/// Fixed-width record stored in an [`ExtVec`].
pub trait Record: Sized + Clone {
    const WIDTH: usize;
    fn encode(&self, out: &mut [Word]);
    fn decode(words: &[Word]) -> Self;
}

impl Record for Word {
    const WIDTH: usize = 1;
    #[inline]
    fn encode(&self, out: &mut [Word]) {
        out[0] = *self;
    }
    #[inline]
    fn decode(words: &[Word]) -> Self {
        words[0]
    }
}

impl Record for (Word, Word) {
    const WIDTH: usize = 2;
    #[inline]
    fn encode(&self, out: &mut [Word]) {
        out[0] = self.0;
        out[1] = self.1;
    }
    #[inline]
    fn decode(words: &[Word]) -> Self {
        (words[0], words[1])
    }
}

impl Record for (Word, Word, Word) {
    const WIDTH: usize = 3;
    #[inline]
    fn encode(&self, out: &mut [Word]) {
        out[0] = self.0;
        out[1] = self.1;
        out[2] = self.2;
    }
    #[inline]
    fn decode(words: &[Word]) -> Self {
        (words[0], words[1], words[2])
    }
}

/// Typed handle to a sequence of records in a session's store.
pub struct ExtVec<T: Record> {
    id: u32,
    _marker: PhantomData<fn() -> T>,
}

impl<T: Record> Clone for ExtVec<T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<T: Record> Copy for ExtVec<T> {}

impl<T: Record> PartialEq for ExtVec<T> {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
impl<T: Record> Eq for ExtVec<T> {}

impl<T: Record> std::fmt::Debug for ExtVec<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ExtVec#{}", self.id)
    }
}

struct SeqEntry {
    /// Record payload, `width` words per record.
    data: Vec<Word>,
    width: usize,
    records: usize,
    file: Option<File>,
}

/// Tracks resident in-memory records against the budget `M`.
#[derive(Clone)]
pub struct MemTracker {
    used: Rc<Cell<usize>>,
    limit: usize,
}

impl MemTracker {
    fn new(limit: usize) -> Self {
        MemTracker { used: Rc::new(Cell::new(0)), limit }
    }

    /// Reserve `records` in-memory slots. Exceeding `M` aborts in debug
    /// builds; release builds carry on so oversized diagnostics never take
    /// down a production run.
    pub fn reserve(&self, records: usize) -> MemGuard {
        let now = self.used.get() + records;
        self.used.set(now);
        debug_assert!(
            now <= self.limit,
            "in-memory working set {} exceeds M = {} records",
            now,
            self.limit
        );
        MemGuard { used: Rc::clone(&self.used), records }
    }

    pub fn in_use(&self) -> usize {
        self.used.get()
    }
}

/// RAII reservation of in-memory record slots.
pub struct MemGuard {
    used: Rc<Cell<usize>>,
    records: usize,
}

impl Drop for MemGuard {
    fn drop(&mut self) {
        self.used.set(self.used.get() - self.records);
    }
}

/// One accounting domain: a store of sequences plus its transfer counters.
///
/// All mutation is single-threaded through `&mut Session`. Structures built in
/// one session are measured by snapshotting [`Session::stats`] around the
/// phase of interest; diagnostic reads (oracles, dumps) either use their own
/// session or subtract their delta.
pub struct Session {
    cfg: IoConfig,
    stats: IoStats,
    seqs: Vec<SeqEntry>,
    mem: MemTracker,
    dir: Option<PathBuf>,
}

impl Session {
    /// `open_session`: fresh counters, empty store.
    pub fn open(cfg: IoConfig) -> Result<Session, IoError> {
        // Re-validate: IoConfig can be constructed literal-style.
        let cfg = IoConfig::new(cfg.memory_words, cfg.block_words)?;
        let dir = match std::env::var_os(STORE_DIR_ENV) {
            Some(d) if !d.is_empty() => {
                let p = PathBuf::from(d);
                std::fs::create_dir_all(&p)?;
                Some(p)
            }
            _ => None,
        };
        Ok(Session { cfg, stats: IoStats::default(), seqs: Vec::new(), mem: MemTracker::new(cfg.memory_words), dir })
    }

    pub fn config(&self) -> IoConfig {
        self.cfg
    }

    pub fn stats(&self) -> IoStats {
        self.stats
    }

    pub fn mem(&self) -> MemTracker {
        self.mem.clone()
    }

    pub fn create<T: Record>(&mut self) -> ExtVec<T> {
        let id = self.seqs.len() as u32;
        let file = self.dir.as_ref().map(|d| {
            File::create(d.join(format!("seq_{id:06}.words"))).expect("create store file")
        });
        self.seqs.push(SeqEntry { data: Vec::new(), width: T::WIDTH, records: 0, file });
        ExtVec { id, _marker: PhantomData }
    }

    /// Number of records in the sequence. Header metadata, no transfer cost.
    pub fn len<T: Record>(&self, seq: ExtVec<T>) -> usize {
        self.seqs[seq.id as usize].records
    }

    fn charge_reads(&mut self, from: usize, count: usize) {
        if count == 0 {
            return;
        }
        let b = self.cfg.block_words;
        let blocks = (from + count - 1) / b - from / b + 1;
        self.stats.block_reads += blocks as u64;
    }

    fn charge_writes(&mut self, from: usize, count: usize) {
        if count == 0 {
            return;
        }
        let b = self.cfg.block_words;
        let blocks = (from + count - 1) / b - from / b + 1;
        self.stats.block_writes += blocks as u64;
    }

    /// `stream_read`: fetch records `[from, from+n)` into a fresh buffer.
    /// The caller's buffer must fit memory; cost is the blocks touched.
    pub fn read_range<T: Record>(&mut self, seq: ExtVec<T>, from: usize, n: usize) -> Vec<T> {
        let entry = &self.seqs[seq.id as usize];
        assert!(
            from + n <= entry.records,
            "read [{from}, {}) out of bounds (len {})",
            from + n,
            entry.records
        );
        debug_assert!(n <= self.cfg.memory_words, "read buffer of {n} records exceeds M");
        let w = entry.width;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let off = (from + i) * w;
            out.push(T::decode(&entry.data[off..off + w]));
        }
        self.charge_reads(from, n);
        out
    }

    /// Diagnostic whole-sequence read. Charges transfers like any read but
    /// skips the working-set assertion; for dumps, oracles, and tests only —
    /// algorithm code must stream through [`SeqReader`] instead.
    pub fn dump<T: Record>(&mut self, seq: ExtVec<T>) -> Vec<T> {
        let entry = &self.seqs[seq.id as usize];
        let (w, n) = (entry.width, entry.records);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(T::decode(&entry.data[i * w..i * w + w]));
        }
        self.charge_reads(0, n);
        out
    }

    /// Read a single record.
    pub fn read_one<T: Record>(&mut self, seq: ExtVec<T>, at: usize) -> T {
        let entry = &self.seqs[seq.id as usize];
        assert!(at < entry.records, "index {at} out of bounds (len {})", entry.records);
        let w = entry.width;
        let rec = T::decode(&entry.data[at * w..at * w + w]);
        self.charge_reads(at, 1);
        rec
    }

    /// `stream_write`: overwrite records starting at `from` (which may equal
    /// the current length, extending the sequence).
    pub fn write_range<T: Record>(&mut self, seq: ExtVec<T>, from: usize, recs: &[T]) {
        let entry = &mut self.seqs[seq.id as usize];
        assert!(from <= entry.records, "write start {from} beyond end {}", entry.records);
        let w = entry.width;
        let end = from + recs.len();
        if end > entry.records {
            entry.data.resize(end * w, 0);
            entry.records = end;
        }
        for (i, r) in recs.iter().enumerate() {
            let off = (from + i) * w;
            r.encode(&mut entry.data[off..off + w]);
        }
        if entry.file.is_some() && !recs.is_empty() {
            let bytes: Vec<u8> =
                entry.data[from * w..end * w].iter().flat_map(|v| v.to_le_bytes()).collect();
            let f = entry.file.as_mut().unwrap();
            f.seek(SeekFrom::Start((from * w * 8) as u64)).expect("seek store file");
            f.write_all(&bytes).expect("write store file");
        }
        self.charge_writes(from, recs.len());
    }

    /// Append records at the end of the sequence.
    pub fn append<T: Record>(&mut self, seq: ExtVec<T>, recs: &[T]) {
        let from = self.len(seq);
        self.write_range(seq, from, recs);
    }

    /// Drop a sequence's backing memory. Metadata only; freed ids are not
    /// reused. Mirror files are kept for inspection.
    pub fn release<T: Record>(&mut self, seq: ExtVec<T>) {
        let entry = &mut self.seqs[seq.id as usize];
        entry.data = Vec::new();
        entry.records = 0;
    }

    /// Copy a whole sequence into a new one (counts both directions).
    pub fn duplicate<T: Record>(&mut self, seq: ExtVec<T>) -> ExtVec<T> {
        let out = self.create::<T>();
        let n = self.len(seq);
        let b = self.cfg.block_words;
        let mut at = 0;
        while at < n {
            let take = b.min(n - at);
            let chunk = self.read_range(seq, at, take);
            self.append(out, &chunk);
            at += take;
        }
        out
    }
}

/// Buffered sequential reader: one block resident at a time.
pub struct SeqReader<T: Record> {
    seq: ExtVec<T>,
    next: usize,
    end: usize,
    buf: Vec<T>,
    buf_at: usize,
    _guard: Option<MemGuard>,
}

impl<T: Record> SeqReader<T> {
    pub fn new(sess: &Session, seq: ExtVec<T>) -> Self {
        Self::with_range(sess, seq, 0, sess.len(seq))
    }

    pub fn with_range(sess: &Session, seq: ExtVec<T>, from: usize, len: usize) -> Self {
        assert!(from + len <= sess.len(seq));
        let guard = sess.mem().reserve(sess.config().block_words);
        SeqReader { seq, next: from, end: from + len, buf: Vec::new(), buf_at: 0, _guard: Some(guard) }
    }

    /// Records not yet yielded.
    pub fn remaining(&self) -> usize {
        self.end - self.next + (self.buf.len() - self.buf_at)
    }

    fn fill(&mut self, sess: &mut Session) {
        let b = sess.config().block_words;
        // Stop at the next block boundary so each block is fetched once.
        let bound = ((self.next / b) + 1) * b;
        let take = bound.min(self.end) - self.next;
        self.buf = sess.read_range(self.seq, self.next, take);
        self.buf_at = 0;
        self.next += take;
    }

    pub fn peek(&mut self, sess: &mut Session) -> Option<&T> {
        if self.buf_at == self.buf.len() {
            if self.next == self.end {
                return None;
            }
            self.fill(sess);
        }
        Some(&self.buf[self.buf_at])
    }

    pub fn next(&mut self, sess: &mut Session) -> Option<T> {
        if self.peek(sess).is_none() {
            return None;
        }
        let r = self.buf[self.buf_at].clone();
        self.buf_at += 1;
        Some(r)
    }
}

/// Buffered appending writer: flushes whole blocks.
pub struct SeqWriter<T: Record> {
    seq: ExtVec<T>,
    buf: Vec<T>,
    written: usize,
    _guard: MemGuard,
}

impl<T: Record> SeqWriter<T> {
    pub fn new(sess: &mut Session, seq: ExtVec<T>) -> Self {
        let guard = sess.mem().reserve(sess.config().block_words);
        let written = sess.len(seq);
        SeqWriter { seq, buf: Vec::new(), written, _guard: guard }
    }

    pub fn push(&mut self, sess: &mut Session, rec: T) {
        self.buf.push(rec);
        if self.buf.len() == sess.config().block_words {
            self.flush(sess);
        }
    }

    pub fn flush(&mut self, sess: &mut Session) {
        if !self.buf.is_empty() {
            sess.write_range(self.seq, self.written, &self.buf);
            self.written += self.buf.len();
            self.buf.clear();
        }
    }

    /// Flush the tail and return the total records written by this writer.
    pub fn finish(mut self, sess: &mut Session) -> usize {
        self.flush(sess);
        self.written
    }
}
