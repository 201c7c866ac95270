//! Duplicate-tag directory storage, way-group addressing, pending counters,
//! speculative-read bits and the GAD unit.

use thiserror::Error;

use crate::protocol::CoherenceState::{self, *};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DirError {
    #[error("address {0:#x} is not managed by this directory")]
    OutOfRange(u64),
    #[error("cache {0} is not tracked by this directory")]
    UnknownCache(usize),
    #[error("pending counter underflow on way group {0}")]
    Underflow(usize),
    #[error("pending counter overflow on way group {0}")]
    Overflow(usize),
    #[error("speculative read already outstanding on way group {0}")]
    DoubleSpeculation(usize),
    #[error("speculative response for way group {0} with no speculative read recorded")]
    SpecStateMissing(usize),
    #[error("caches {0} and {1} both hold the block in owner states")]
    MultipleOwners(usize, usize),
}

/// Splits physical addresses into block, set, tag and home CCE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddrMap {
    pub block_bytes: usize,
    pub sets: usize,
    pub num_cces: usize,
}

impl AddrMap {
    pub fn new(block_bytes: usize, sets: usize, num_cces: usize) -> Self {
        assert!(block_bytes.is_power_of_two() && sets.is_power_of_two());
        assert!(
            num_cces >= 1 && sets.is_multiple_of(num_cces),
            "sets must divide evenly across CCEs"
        );
        AddrMap {
            block_bytes,
            sets,
            num_cces,
        }
    }

    fn offset_bits(&self) -> u32 {
        self.block_bytes.trailing_zeros()
    }

    fn set_bits(&self) -> u32 {
        self.sets.trailing_zeros()
    }

    pub fn block(&self, addr: u64) -> u64 {
        addr & !(self.block_bytes as u64 - 1)
    }

    pub fn set(&self, addr: u64) -> usize {
        ((addr >> self.offset_bits()) as usize) & (self.sets - 1)
    }

    pub fn tag(&self, addr: u64) -> u64 {
        addr >> (self.offset_bits() + self.set_bits())
    }

    pub fn addr_of(&self, tag: u64, set: usize) -> u64 {
        (tag << (self.offset_bits() + self.set_bits())) | ((set as u64) << self.offset_bits())
    }

    /// Home CCE: low set-index bits, round robin.
    pub fn cce_of(&self, addr: u64) -> usize {
        self.set(addr) % self.num_cces
    }

    pub fn sets_per_cce(&self) -> usize {
        self.sets / self.num_cces
    }

    /// Index of the way group within its home CCE.
    pub fn way_group(&self, addr: u64) -> usize {
        self.set(addr) / self.num_cces
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentConfig {
    pub num_caches: usize,
    pub assoc: usize,
    pub sets_per_cache: usize,
    pub tag_bits: u32,
    pub state_bits: u32,
    pub tag_sets_per_row: usize,
}

impl SegmentConfig {
    pub fn new(num_caches: usize, assoc: usize, sets_per_cache: usize) -> Self {
        SegmentConfig {
            num_caches,
            assoc,
            sets_per_cache,
            tag_bits: 28,
            state_bits: 3,
            tag_sets_per_row: 2,
        }
    }

    pub fn rows_per_set(&self) -> usize {
        self.num_caches.div_ceil(self.tag_sets_per_row)
    }

    pub fn entry_bits(&self) -> u32 {
        self.tag_bits + self.state_bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TagSetEntry {
    pub tag: u64,
    pub state: CoherenceState,
}

/// One segment: the tag sets of all caches of one type, for the way groups
/// of one CCE. Cache `c`, local set `s` lives in row
/// `(c / tag_sets_per_row) * local_sets + s`, column `c % tag_sets_per_row`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectorySegment {
    cfg: SegmentConfig,
    local_sets: usize,
    rows: Vec<Vec<Vec<TagSetEntry>>>,
}

impl DirectorySegment {
    pub fn new(cfg: SegmentConfig, local_sets: usize) -> Self {
        assert!(cfg.tag_sets_per_row.is_power_of_two());
        let rows = vec![
            vec![vec![TagSetEntry::default(); cfg.assoc]; cfg.tag_sets_per_row];
            cfg.rows_per_set() * local_sets
        ];
        DirectorySegment {
            cfg,
            local_sets,
            rows,
        }
    }

    pub fn config(&self) -> &SegmentConfig {
        &self.cfg
    }

    pub fn row_col(&self, cache: usize, local_set: usize) -> (usize, usize) {
        let tsr = self.cfg.tag_sets_per_row;
        ((cache / tsr) * self.local_sets + local_set, cache % tsr)
    }

    pub fn tag_set(&self, cache: usize, local_set: usize) -> &[TagSetEntry] {
        let (r, c) = self.row_col(cache, local_set);
        &self.rows[r][c]
    }

    fn tag_set_mut(&mut self, cache: usize, local_set: usize) -> &mut Vec<TagSetEntry> {
        let (r, c) = self.row_col(cache, local_set);
        &mut self.rows[r][c]
    }

    pub fn storage_entries(&self) -> usize {
        self.rows.iter().flatten().map(|ts| ts.len()).sum()
    }

    pub fn clear_row(&mut self, cache: usize, local_set: usize) {
        let (r, _) = self.row_col(cache, local_set);
        for ts in &mut self.rows[r] {
            ts.fill(TagSetEntry::default());
        }
    }
}

/// Per-cache results of a way-group read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharersVectors {
    pub hits: Vec<bool>,
    pub states: Vec<CoherenceState>,
    pub ways: Vec<usize>,
}

impl SharersVectors {
    pub fn empty(n: usize) -> Self {
        SharersVectors {
            hits: vec![false; n],
            states: vec![I; n],
            ways: vec![0; n],
        }
    }

    pub fn state_of(&self, lce: usize) -> CoherenceState {
        if self.hits[lce] {
            self.states[lce]
        } else {
            I
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LruEntry {
    pub addr: u64,
    pub tag: u64,
    pub state: CoherenceState,
    pub way: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WayGroupRead {
    pub sharers: SharersVectors,
    pub lru: LruEntry,
    pub latency: u64,
}

/// All segments of one CCE. Segments are read in parallel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Directory {
    map: AddrMap,
    cce: usize,
    /// (first LCE id, segment)
    segments: Vec<(usize, DirectorySegment)>,
    num_lces: usize,
}

impl Directory {
    /// `segment_sizes` lists how many caches each segment tracks; LCE ids are
    /// assigned to segments in order.
    pub fn new(
        map: AddrMap,
        cce: usize,
        segment_sizes: &[usize],
        assoc: usize,
        tag_sets_per_row: usize,
    ) -> Self {
        let mut segments = Vec::new();
        let mut first = 0;
        for &n in segment_sizes {
            let mut cfg = SegmentConfig::new(n, assoc, map.sets);
            cfg.tag_sets_per_row = tag_sets_per_row;
            segments.push((first, DirectorySegment::new(cfg, map.sets_per_cce())));
            first += n;
        }
        Directory {
            map,
            cce,
            segments,
            num_lces: first,
        }
    }

    pub fn map(&self) -> &AddrMap {
        &self.map
    }

    pub fn num_lces(&self) -> usize {
        self.num_lces
    }

    pub fn assoc(&self) -> usize {
        self.segments[0].1.cfg.assoc
    }

    pub fn segments(&self) -> impl Iterator<Item = &DirectorySegment> {
        self.segments.iter().map(|(_, s)| s)
    }

    fn locate(&self, lce: usize) -> Result<(usize, usize), DirError> {
        for (i, (first, seg)) in self.segments.iter().enumerate() {
            if lce >= *first && lce < first + seg.cfg.num_caches {
                return Ok((i, lce - first));
            }
        }
        Err(DirError::UnknownCache(lce))
    }

    fn local_set(&self, addr: u64) -> Result<usize, DirError> {
        if self.map.cce_of(addr) != self.cce {
            return Err(DirError::OutOfRange(addr));
        }
        Ok(self.map.way_group(addr))
    }

    pub fn way_group_latency(&self) -> u64 {
        1 + self
            .segments
            .iter()
            .map(|(_, s)| s.cfg.rows_per_set() as u64)
            .max()
            .unwrap_or(0)
    }

    pub fn read_way_group(
        &self,
        addr: u64,
        req_lce: usize,
        lru_way: usize,
    ) -> Result<WayGroupRead, DirError> {
        let ls = self.local_set(addr)?;
        let tag = self.map.tag(addr);
        let mut sv = SharersVectors::empty(self.num_lces);
        for (first, seg) in &self.segments {
            for c in 0..seg.cfg.num_caches {
                for (w, e) in seg.tag_set(c, ls).iter().enumerate() {
                    if e.state.is_valid() && e.tag == tag {
                        sv.hits[first + c] = true;
                        sv.states[first + c] = e.state;
                        sv.ways[first + c] = w;
                    }
                }
            }
        }
        let (si, c) = self.locate(req_lce)?;
        let e = self.segments[si].1.tag_set(c, ls)[lru_way];
        let lru = LruEntry {
            addr: self.map.addr_of(e.tag, self.map.set(addr)),
            tag: e.tag,
            state: e.state,
            way: lru_way,
        };
        Ok(WayGroupRead {
            sharers: sv,
            lru,
            latency: self.way_group_latency(),
        })
    }

    pub fn read_entry(
        &self,
        addr: u64,
        lce: usize,
        way: usize,
    ) -> Result<(TagSetEntry, u64), DirError> {
        let ls = self.local_set(addr)?;
        let (si, c) = self.locate(lce)?;
        Ok((self.segments[si].1.tag_set(c, ls)[way], 2))
    }

    pub fn write_entry(
        &mut self,
        addr: u64,
        lce: usize,
        way: usize,
        tag: u64,
        state: CoherenceState,
    ) -> Result<u64, DirError> {
        let ls = self.local_set(addr)?;
        let (si, c) = self.locate(lce)?;
        self.segments[si].1.tag_set_mut(c, ls)[way] = TagSetEntry { tag, state };
        Ok(1)
    }

    /// Writes the tag of `addr` with `state` at (lce, way).
    pub fn write_block(
        &mut self,
        addr: u64,
        lce: usize,
        way: usize,
        state: CoherenceState,
    ) -> Result<u64, DirError> {
        let tag = self.map.tag(addr);
        self.write_entry(addr, lce, way, tag, state)
    }

    pub fn write_state(
        &mut self,
        addr: u64,
        lce: usize,
        way: usize,
        state: CoherenceState,
    ) -> Result<u64, DirError> {
        let ls = self.local_set(addr)?;
        let (si, c) = self.locate(lce)?;
        self.segments[si].1.tag_set_mut(c, ls)[way].state = state;
        Ok(1)
    }

    pub fn clear_row(&mut self, addr: u64, lce: usize) -> Result<u64, DirError> {
        let ls = self.local_set(addr)?;
        let (si, c) = self.locate(lce)?;
        self.segments[si].1.clear_row(c, ls);
        Ok(1)
    }

    /// Entry for (lce, global set, way), for snapshots.
    pub fn entry_at(&self, lce: usize, set: usize, way: usize) -> TagSetEntry {
        let (si, c) = self.locate(lce).expect("lce tracked");
        self.segments[si].1.tag_set(c, set / self.map.num_cces)[way]
    }

    pub fn owns_set(&self, set: usize) -> bool {
        set % self.map.num_cces == self.cce
    }
}

/// Per-way-group transaction counters; a way group is pending while its
/// counter is non-zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingBits {
    counters: Vec<u8>,
    drains: Vec<u64>,
}

impl PendingBits {
    pub const MAX: u8 = 15;

    pub fn new(way_groups: usize) -> Self {
        PendingBits {
            counters: vec![0; way_groups],
            drains: vec![0; way_groups],
        }
    }

    /// Writes land immediately, so a read later in the same cycle observes
    /// them.
    pub fn read(&self, wg: usize) -> bool {
        self.counters[wg] != 0
    }

    pub fn count(&self, wg: usize) -> u8 {
        self.counters[wg]
    }

    pub fn inc(&mut self, wg: usize) -> Result<(), DirError> {
        if self.counters[wg] >= Self::MAX {
            return Err(DirError::Overflow(wg));
        }
        self.counters[wg] += 1;
        Ok(())
    }

    pub fn dec(&mut self, wg: usize) -> Result<(), DirError> {
        if self.counters[wg] == 0 {
            return Err(DirError::Underflow(wg));
        }
        self.counters[wg] -= 1;
        if self.counters[wg] == 0 {
            self.drains[wg] += 1;
        }
        Ok(())
    }

    pub fn adjust(&mut self, wg: usize, up: bool) -> Result<(), DirError> {
        if up {
            self.inc(wg)
        } else {
            self.dec(wg)
        }
    }

    pub fn clear(&mut self, wg: usize) {
        if self.counters[wg] != 0 {
            self.drains[wg] += 1;
        }
        self.counters[wg] = 0;
    }

    /// Times the counter has returned to zero.
    pub fn drains(&self, wg: usize) -> u64 {
        self.drains[wg]
    }

    pub fn all_clear(&self) -> bool {
        self.counters.iter().all(|c| *c == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SpecEntry {
    pub spec: bool,
    pub squash: bool,
    pub fwd_mod: bool,
    pub state: CoherenceState,
    /// A speculative read has been issued and its response not yet consumed.
    outstanding: bool,
}

/// What the memory-response side does with a speculative response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecOutcome {
    /// Still unresolved; hold the response.
    Wait,
    Squash,
    Forward(Option<CoherenceState>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecBits {
    entries: Vec<SpecEntry>,
}

impl SpecBits {
    pub fn new(way_groups: usize) -> Self {
        SpecBits {
            entries: vec![SpecEntry::default(); way_groups],
        }
    }

    pub fn read(&self, wg: usize) -> SpecEntry {
        self.entries[wg]
    }

    pub fn set(&mut self, wg: usize, state: CoherenceState) -> Result<(), DirError> {
        let e = &mut self.entries[wg];
        if e.spec || e.outstanding {
            return Err(DirError::DoubleSpeculation(wg));
        }
        *e = SpecEntry {
            spec: true,
            squash: false,
            fwd_mod: false,
            state,
            outstanding: true,
        };
        Ok(())
    }

    pub fn squash(&mut self, wg: usize) {
        let e = &mut self.entries[wg];
        e.spec = false;
        e.squash = true;
        e.fwd_mod = false;
    }

    pub fn fwd_mod(&mut self, wg: usize, state: CoherenceState) {
        let e = &mut self.entries[wg];
        e.spec = false;
        e.squash = false;
        e.fwd_mod = true;
        e.state = state;
    }

    pub fn unset(&mut self, wg: usize) {
        let e = &mut self.entries[wg];
        e.spec = false;
        e.squash = false;
        e.fwd_mod = false;
    }

    /// Decides the fate of a speculative response without consuming it.
    pub fn outcome(&self, wg: usize) -> Result<SpecOutcome, DirError> {
        let e = self.entries[wg];
        if !e.outstanding {
            return Err(DirError::SpecStateMissing(wg));
        }
        Ok(if e.spec {
            SpecOutcome::Wait
        } else if e.squash {
            SpecOutcome::Squash
        } else if e.fwd_mod {
            SpecOutcome::Forward(Some(e.state))
        } else {
            SpecOutcome::Forward(None)
        })
    }

    /// Clears the entry once its response has been squashed or forwarded.
    pub fn consume(&mut self, wg: usize) {
        self.entries[wg] = SpecEntry::default();
    }

    pub fn all_clear(&self) -> bool {
        self.entries.iter().all(|e| !e.outstanding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Owner {
    pub lce: usize,
    pub way: usize,
    pub state: CoherenceState,
}

/// Flags and owner information computed from a way-group read.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GadResult {
    pub cached_s: bool,
    pub cached_e: bool,
    pub cached_m: bool,
    pub cached_o: bool,
    pub cached_f: bool,
    pub replacement: bool,
    pub upgrade: bool,
    /// The unique cache in E, M, O or F, the requester included.
    pub owner: Option<Owner>,
    pub req_hit_way: Option<usize>,
    pub req_state: CoherenceState,
    /// Caches other than the requester holding the block in S.
    pub other_sharers: usize,
}

/// Single-cycle GAD. Victims in S or F are dropped silently by the cache, so
/// only E, M and O victims require a replacement.
pub fn gad(
    sv: &SharersVectors,
    lru: &LruEntry,
    req_lce: usize,
    write: bool,
) -> Result<GadResult, DirError> {
    let mut r = GadResult::default();
    for (c, hit) in sv.hits.iter().enumerate() {
        if !hit {
            continue;
        }
        let s = sv.states[c];
        if s.is_owner() {
            if let Some(o) = r.owner {
                return Err(DirError::MultipleOwners(o.lce, c));
            }
            r.owner = Some(Owner {
                lce: c,
                way: sv.ways[c],
                state: s,
            });
        }
        if c == req_lce {
            r.req_hit_way = Some(sv.ways[c]);
            r.req_state = s;
            continue;
        }
        match s {
            S => {
                r.cached_s = true;
                r.other_sharers += 1;
            }
            E => r.cached_e = true,
            M => r.cached_m = true,
            O => r.cached_o = true,
            F => r.cached_f = true,
            I => {}
        }
    }
    r.upgrade = write && matches!(r.req_state, S | O | F);
    r.replacement = r.req_hit_way.is_none() && matches!(lru.state, E | M | O);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dir(c: usize) -> Directory {
        Directory::new(AddrMap::new(64, 64, 1), 0, &[c], 8, 2)
    }

    #[test]
    fn striping_partitions_sets() {
        let m = AddrMap::new(64, 64, 2);
        let addr = m.addr_of(0x1234, 5);
        assert_eq!(m.cce_of(addr), 1);
        assert_eq!(m.way_group(addr), 2);
        let mut seen = std::collections::HashSet::new();
        for set in 0..64 {
            let a = m.addr_of(7, set);
            assert!(seen.insert((m.cce_of(a), m.way_group(a))));
            assert!(m.way_group(a) < m.sets_per_cce());
        }
        assert_eq!(seen.len(), 64);
    }

    #[test]
    fn same_set_same_way_group() {
        let m = AddrMap::new(64, 64, 1);
        assert_eq!(m.way_group(m.addr_of(1, 5)), 5);
        assert_eq!(m.way_group(m.addr_of(1, 5)), m.way_group(m.addr_of(99, 5)));
    }

    #[test]
    fn way_group_latency_by_cache_count() {
        for c in [2usize, 4, 8, 16] {
            assert_eq!(dir(c).way_group_latency(), 1 + c as u64 / 2);
        }
        assert_eq!(dir(8).way_group_latency(), 5);
    }

    #[test]
    fn empty_read() {
        let d = dir(4);
        let r = d.read_way_group(0x8000_0000, 1, 3).unwrap();
        assert!(r.sharers.hits.iter().all(|h| !h));
        assert_eq!(r.lru.state, I);
        assert_eq!(
            d.read_entry(0x8000_0000, 0, 0).unwrap(),
            (TagSetEntry::default(), 2)
        );
    }

    #[test]
    fn clear_row_clears_neighbours() {
        let mut d = dir(4);
        let a = 0x8000_0040;
        d.write_block(a, 2, 1, S).unwrap();
        d.write_block(a, 3, 1, S).unwrap();
        d.write_block(a, 0, 1, S).unwrap();
        d.clear_row(a, 2).unwrap();
        assert_eq!(d.read_entry(a, 2, 1).unwrap().0.state, I);
        assert_eq!(d.read_entry(a, 3, 1).unwrap().0.state, I);
        assert_eq!(d.read_entry(a, 0, 1).unwrap().0.state, S);
    }

    #[test]
    fn back_to_back_writes() {
        let mut d = dir(2);
        let a = 0x8000_0000;
        assert_eq!(d.write_block(a, 0, 0, E).unwrap(), 1);
        assert_eq!(d.write_state(a, 0, 0, M).unwrap(), 1);
        assert_eq!(d.read_entry(a, 0, 0).unwrap().0.state, M);
    }

    #[test]
    fn out_of_range_address() {
        let d = Directory::new(AddrMap::new(64, 64, 2), 0, &[2], 8, 2);
        let m = *d.map();
        assert_eq!(
            d.read_way_group(m.addr_of(1, 1), 0, 0).unwrap_err(),
            DirError::OutOfRange(m.addr_of(1, 1))
        );
    }

    #[test]
    fn rows_cover_every_tag_set_once() {
        for c in [2usize, 3, 8] {
            let seg = DirectorySegment::new(SegmentConfig::new(c, 8, 64), 64);
            let mut seen = std::collections::HashSet::new();
            for cache in 0..c {
                for s in 0..64 {
                    assert!(seen.insert(seg.row_col(cache, s)));
                }
            }
            assert!(seg.storage_entries() >= c * 64 * 8);
        }
    }

    #[test]
    fn two_segments_read_in_parallel() {
        let d = Directory::new(AddrMap::new(64, 64, 1), 0, &[8, 8], 8, 2);
        assert_eq!(d.num_lces(), 16);
        assert_eq!(d.way_group_latency(), 5);
    }

    #[test]
    fn pending_counts() {
        let mut p = PendingBits::new(4);
        p.inc(1).unwrap();
        // Write to read forwarding: the read in the same step sees the increment.
        assert!(p.read(1));
        p.inc(1).unwrap();
        p.dec(1).unwrap();
        assert!(p.read(1));
        p.dec(1).unwrap();
        assert!(!p.read(1));
        assert_eq!(p.dec(1), Err(DirError::Underflow(1)));
        for _ in 0..15 {
            p.inc(2).unwrap();
        }
        assert_eq!(p.inc(2), Err(DirError::Overflow(2)));
        p.clear(2);
        assert!(p.all_clear());
    }

    #[test]
    fn spec_outcomes() {
        let mut sb = SpecBits::new(2);
        assert_eq!(sb.outcome(0), Err(DirError::SpecStateMissing(0)));
        sb.set(0, E).unwrap();
        assert_eq!(sb.set(0, E), Err(DirError::DoubleSpeculation(0)));
        assert_eq!(sb.outcome(0), Ok(SpecOutcome::Wait));
        sb.squash(0);
        assert_eq!(sb.outcome(0), Ok(SpecOutcome::Squash));
        sb.consume(0);
        sb.set(0, E).unwrap();
        sb.fwd_mod(0, M);
        assert_eq!(sb.outcome(0), Ok(SpecOutcome::Forward(Some(M))));
        let e = sb.read(0);
        assert!(e.fwd_mod && !e.squash && e.state == M);
        sb.consume(0);
        sb.set(0, E).unwrap();
        sb.unset(0);
        assert_eq!(sb.outcome(0), Ok(SpecOutcome::Forward(None)));
    }

    fn sv_from(states: &[CoherenceState]) -> SharersVectors {
        SharersVectors {
            hits: states.iter().map(|s| s.is_valid()).collect(),
            states: states.to_vec(),
            ways: (0..states.len()).collect(),
        }
    }

    #[test]
    fn gad_examples() {
        let lru = LruEntry::default();
        let r = gad(&SharersVectors::empty(4), &lru, 0, false).unwrap();
        assert_eq!(r, GadResult::default());

        let r = gad(&sv_from(&[S, S, I, I]), &lru, 0, true).unwrap();
        assert!(r.upgrade && r.cached_s && !r.replacement);

        let lru_e = LruEntry {
            state: E,
            ..LruEntry::default()
        };
        let r = gad(&sv_from(&[I, I, M, I]), &lru_e, 0, false).unwrap();
        assert!(r.cached_m && r.replacement);
        assert_eq!(
            r.owner,
            Some(Owner {
                lce: 2,
                way: 2,
                state: M
            })
        );

        assert_eq!(
            gad(&sv_from(&[O, F, I, I]), &lru, 2, false),
            Err(DirError::MultipleOwners(0, 1))
        );
    }

    fn state_strategy() -> impl Strategy<Value = CoherenceState> {
        prop::sample::select(CoherenceState::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn write_then_read(cache in 0usize..8, way in 0usize..8, tag in 1u64..1000, set in 0usize..64,
                           state in state_strategy()) {
            let mut d = dir(8);
            let addr = d.map().addr_of(tag, set);
            d.write_entry(addr, cache, way, tag, state).unwrap();
            prop_assert_eq!(d.read_entry(addr, cache, way).unwrap().0, TagSetEntry { tag, state });
            let r = d.read_way_group(addr, cache, way).unwrap();
            prop_assert_eq!(r.sharers.hits[cache], state.is_valid());
            if state.is_valid() {
                prop_assert_eq!(r.sharers.states[cache], state);
                prop_assert_eq!(r.sharers.ways[cache], way);
            }
            prop_assert_eq!(r.lru.state, state);
            prop_assert_eq!(r.lru.tag, tag);
        }

        #[test]
        fn gad_matches_linear_scan(states in prop::collection::vec(
                prop::sample::select(vec![I, S, S, S]), 4),
                owner_slot in 0usize..5, owner_state in prop::sample::select(vec![E, M, O, F]),
                req in 0usize..4, write in any::<bool>(), lru_state in state_strategy()) {
            let mut st = states.clone();
            if owner_slot < 4 {
                st[owner_slot] = owner_state;
            }
            let sv = sv_from(&st);
            let lru = LruEntry { state: lru_state, ..LruEntry::default() };
            let r = gad(&sv, &lru, req, write).unwrap();
            let others = |s: CoherenceState| (0..4).any(|c| c != req && st[c] == s);
            prop_assert_eq!(r.cached_s, others(S));
            prop_assert_eq!(r.cached_e, others(E));
            prop_assert_eq!(r.cached_m, others(M));
            prop_assert_eq!(r.cached_o, others(O));
            prop_assert_eq!(r.cached_f, others(F));
            prop_assert_eq!(r.owner.map(|o| o.lce), (0..4).find(|c| st[*c].is_owner()));
            prop_assert_eq!(r.upgrade, write && matches!(st[req], S | O | F));
            prop_assert_eq!(r.replacement, !st[req].is_valid() && matches!(lru_state, E | M | O));
            prop_assert!(!(r.upgrade && r.replacement));
            prop_assert_eq!(r.other_sharers, (0..4).filter(|c| *c != req && st[*c] == S).count());
        }
    }
}
