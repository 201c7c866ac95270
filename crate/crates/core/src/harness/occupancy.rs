//! Single-request occupancy measurement against the closed-form model.

use std::fmt;

use super::config::{EngineKind, SimConfig};
use super::system::{SimError, System};
use crate::cce::{TxnClass, WbKind};
use crate::harness::trace::{TraceKind, TraceOp};
use crate::lce::{Lce, LceConfig, LceKind, OpKind};
use crate::protocol::{CoherenceState, RegionMap};

use CoherenceState::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Row {
    ReadExcl,
    ReadNe,
    ReadS,
    ReadEClean,
    ReadEDirty,
    ReadM,
    ReadOf,
    WriteI,
    WriteS,
    WriteEm,
    WriteOf,
    WriteSS,
    WriteSOf,
    WriteOfOf,
}

impl Row {
    pub const ALL: [Row; 14] = [
        Row::ReadExcl,
        Row::ReadNe,
        Row::ReadS,
        Row::ReadEClean,
        Row::ReadEDirty,
        Row::ReadM,
        Row::ReadOf,
        Row::WriteI,
        Row::WriteS,
        Row::WriteEm,
        Row::WriteOf,
        Row::WriteSS,
        Row::WriteSOf,
        Row::WriteOfOf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Row::ReadExcl => "read-excl",
            Row::ReadNe => "read-ne",
            Row::ReadS => "read",
            Row::ReadEClean => "read",
            Row::ReadEDirty => "read",
            Row::ReadM => "read",
            Row::ReadOf => "read",
            Row::WriteI | Row::WriteS | Row::WriteEm | Row::WriteOf => "write",
            Row::WriteSS | Row::WriteSOf | Row::WriteOfOf => "write",
        }
    }

    pub fn write(self) -> bool {
        self.name() == "write"
    }

    /// Requester state before the request; for O/F rows, the variant.
    fn requester(self, variant: CoherenceState) -> CoherenceState {
        match self {
            Row::WriteSS | Row::WriteSOf => S,
            Row::WriteOfOf => variant,
            _ => I,
        }
    }

    /// Directory column label.
    fn dir_label(self, variant: CoherenceState) -> String {
        match self {
            Row::ReadExcl | Row::ReadNe | Row::WriteI => "I".into(),
            Row::ReadS | Row::WriteS | Row::WriteSS => "S".into(),
            Row::ReadEClean => "E (clean)".into(),
            Row::ReadEDirty => "E (dirty)".into(),
            Row::ReadM => "M".into(),
            _ => variant.to_string(),
        }
    }

    /// Owner-state variants the row covers.
    pub fn variants(self) -> &'static [CoherenceState] {
        match self {
            Row::ReadOf | Row::WriteOf | Row::WriteSOf | Row::WriteOfOf => &[O, F],
            Row::WriteEm => &[E, M],
            _ => &[I],
        }
    }

    /// Sharer counts that can be set up with `c` caches, within 0..c.
    pub fn sharer_range(self, c: usize) -> std::ops::RangeInclusive<usize> {
        match self {
            Row::ReadS | Row::WriteS | Row::WriteSS | Row::WriteSOf => 1..=c - 1,
            Row::ReadOf | Row::WriteOf => 0..=c - 2,
            Row::WriteOfOf => 0..=c - 1,
            _ => 0..=0,
        }
    }

    pub fn allows_replacement(self) -> bool {
        self.requester(O) == I
    }

    /// Busy cycles of the fixed-function engine.
    pub fn fsm_model(self, c: u64, s: u64, n: u64) -> u64 {
        let base = c / 2;
        match self {
            Row::ReadExcl | Row::ReadNe | Row::ReadS | Row::WriteI => 8 + base,
            Row::ReadEClean | Row::ReadM | Row::ReadOf | Row::WriteEm => 9 + base,
            Row::ReadEDirty => 9 + base + n,
            Row::WriteS => 8 + base + 2 * s,
            Row::WriteOf | Row::WriteSOf | Row::WriteOfOf => 9 + base + 2 * s,
            Row::WriteSS => 9 + base + 2 * (s - 1),
        }
    }

    /// Busy cycles of the shipped MOESIF microcode.
    pub fn ucode_model(self, c: u64, s: u64, n: u64) -> u64 {
        let base = c / 2;
        match self {
            Row::ReadExcl => 12 + base,
            Row::ReadNe | Row::ReadS => 26 + base,
            Row::ReadEClean => 36 + base,
            Row::ReadEDirty => 35 + base + n,
            Row::ReadM => 32 + base,
            Row::ReadOf => 27 + base,
            Row::WriteI => 23 + base,
            Row::WriteS => 24 + base + 2 * s,
            Row::WriteEm => 27 + base,
            Row::WriteOf => 28 + base + 2 * s,
            Row::WriteSS => 24 + base + 2 * (s - 1),
            Row::WriteSOf => 30 + base + 2 * s,
            Row::WriteOfOf => 24 + base + 2 * s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scenario {
    pub row: Row,
    pub variant: CoherenceState,
    pub caches: usize,
    pub sharers: usize,
    /// Data beats per block.
    pub beats: usize,
    pub replacement: Option<WbKind>,
}

impl Scenario {
    pub fn model(&self, engine: EngineKind) -> u64 {
        let (c, s, n) = (self.caches as u64, self.sharers as u64, self.beats as u64);
        let (base, clean, dirty) = match engine {
            EngineKind::Fsm => (self.row.fsm_model(c, s, n), 2, 1 + n),
            EngineKind::Ucode => (self.row.ucode_model(c, s, n), 7, 6 + n),
        };
        base + match self.replacement {
            None => 0,
            Some(WbKind::Null) => clean,
            Some(WbKind::Dirty) => dirty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyRow {
    pub engine: EngineKind,
    pub class: &'static str,
    pub lce_state: CoherenceState,
    pub dir_state: String,
    pub caches: usize,
    pub sharers: usize,
    pub beats: usize,
    pub replacement: Option<WbKind>,
    pub measured: u64,
    pub model: u64,
}

impl OccupancyRow {
    pub fn matches(&self) -> bool {
        self.measured == self.model
    }

    pub const CSV_HEADER: &'static str =
        "engine,class,lce_state,dir_state,C,S,N,replacement,measured,model,match";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.engine,
            self.class,
            self.lce_state,
            self.dir_state,
            self.caches,
            self.sharers,
            self.beats,
            match self.replacement {
                None => "none",
                Some(WbKind::Null) => "clean",
                Some(WbKind::Dirty) => "dirty",
            },
            self.measured,
            self.model,
            self.matches()
        )
    }
}

impl fmt::Display for OccupancyRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.csv())
    }
}

/// Set used by every scenario.
const SET: usize = 5;
const BLOCK_BYTES: usize = 64;

fn block(map: &crate::directory::AddrMap, tag_off: u64) -> u64 {
    map.addr_of(map.tag(0x8000_0000) + tag_off, SET)
}

/// Builds the prepared system for `sc`, issues the single request and
/// returns the engine's busy cycles for it.
pub fn measure(engine: EngineKind, sc: &Scenario) -> Result<u64, SimError> {
    let cfg = SimConfig {
        cores: sc.caches,
        sets: 64,
        assoc: 8,
        block_bytes: BLOCK_BYTES,
        beat_bytes: BLOCK_BYTES / sc.beats,
        engine,
        ..SimConfig::default()
    };
    let mut sys = System::new(cfg)?;
    let map = *sys.map();
    let a = block(&map, 0);
    sys.write_memory(a, &[0x5a; BLOCK_BYTES]);
    if sc.row == Row::ReadNe {
        let mut lc = LceConfig::new(0);
        lc.kind = LceKind::Instruction;
        sys.lces[0] = Lce::new(lc, map, RegionMap::default());
    }
    let req_state = sc.row.requester(sc.variant);
    let mut next = 1;
    let owner_state = match sc.row {
        Row::ReadEClean => Some((E, E)),
        Row::ReadEDirty => Some((M, E)),
        Row::ReadM => Some((M, M)),
        Row::ReadOf | Row::WriteOf | Row::WriteSOf | Row::WriteEm => Some((sc.variant, sc.variant)),
        _ => None,
    };
    if let Some((cache, dir)) = owner_state {
        sys.preload(next, a, 0, cache, dir)?;
        next += 1;
    }
    if req_state != I {
        sys.preload(0, a, 2, req_state, req_state)?;
    }
    let others = match sc.row {
        Row::WriteSS | Row::WriteSOf => sc.sharers - 1,
        _ => sc.sharers,
    };
    for _ in 0..others {
        sys.preload(next, a, 1, S, S)?;
        next += 1;
    }
    if let Some(kind) = sc.replacement {
        let st = if kind == WbKind::Dirty { M } else { E };
        for w in 0..8 {
            sys.preload(0, block(&map, 1 + w as u64), w, st, st)?;
        }
    }
    let kind = if sc.row.write() {
        OpKind::Store
    } else {
        OpKind::Load
    };
    sys.load_trace(&[TraceOp {
        lce: 0,
        kind: TraceKind::Op(kind),
        addr: a,
        size: 8,
        data: 0x77,
    }])?;
    sys.run()?;
    let recs = sys.records();
    let rec = recs
        .iter()
        .find(|r| r.lce == 0 && matches!(r.class, TxnClass::Coherent(_)))
        .ok_or_else(|| SimError::Config("scenario produced no coherent request".into()))?;
    if rec.replacement != sc.replacement {
        return Err(SimError::Config(format!(
            "replacement {:?} expected, engine saw {:?}",
            sc.replacement, rec.replacement
        )));
    }
    Ok(rec.busy_cycles)
}

pub fn measure_row(engine: EngineKind, sc: &Scenario) -> Result<OccupancyRow, SimError> {
    let measured = measure(engine, sc)?;
    Ok(OccupancyRow {
        engine,
        class: sc.row.name(),
        lce_state: sc.row.requester(sc.variant),
        dir_state: sc.row.dir_label(sc.variant),
        caches: sc.caches,
        sharers: sc.sharers,
        beats: sc.beats,
        replacement: sc.replacement,
        measured,
        model: sc.model(engine),
    })
}

/// Every scenario for the given cache counts and beat counts.
pub fn scenarios(caches: &[usize], beats: &[usize]) -> Vec<Scenario> {
    let mut out = Vec::new();
    for &c in caches {
        for &n in beats {
            for row in Row::ALL {
                for &variant in row.variants() {
                    let repl: &[Option<WbKind>] = if row.allows_replacement() {
                        &[None, Some(WbKind::Null), Some(WbKind::Dirty)]
                    } else {
                        &[None]
                    };
                    for s in row.sharer_range(c) {
                        for &replacement in repl {
                            out.push(Scenario {
                                row,
                                variant,
                                caches: c,
                                sharers: s,
                                beats: n,
                                replacement,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn sweep(
    engine: EngineKind,
    caches: &[usize],
    beats: &[usize],
) -> Result<Vec<OccupancyRow>, SimError> {
    scenarios(caches, beats)
        .iter()
        .map(|sc| measure_row(engine, sc))
        .collect()
}
