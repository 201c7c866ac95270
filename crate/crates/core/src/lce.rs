//! Blocking cache controller: a set-associative array with a processor port
//! and a coherence port driven by the controller protocol table.

use thiserror::Error;

use crate::directory::AddrMap;
use crate::msg::{
    AtomicKind, CmdKind, CohCommand, CohRequest, CohResponse, Endpoint, FillMsg, Payload, RespKind,
    Way,
};
use crate::protocol::{
    lce_event_action, CoherenceState, LceEvent, LceSend, ProtocolError, RegionMap,
};

use CoherenceState::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LceError {
    #[error("LCE {0} already has an outstanding miss")]
    Busy(usize),
    #[error("LCE {lce}: {source}")]
    Protocol { lce: usize, source: ProtocolError },
    #[error("LCE {lce} received a fill for {addr:#x} with no matching miss")]
    UnexpectedFill { lce: usize, addr: u64 },
    #[error("LCE {lce}: command for {addr:#x} found way {way} holding another block")]
    WrongBlock { lce: usize, addr: u64, way: Way },
    #[error("LCE {lce}: {what} is not supported on address {addr:#x}")]
    Unsupported {
        lce: usize,
        addr: u64,
        what: &'static str,
    },
    #[error("LCE {lce}: fill for {addr:#x} would drop block {victim:#x} held in {state}")]
    LiveVictim {
        lce: usize,
        addr: u64,
        victim: u64,
        state: CoherenceState,
    },
    #[error("LCE {lce}: access at {addr:#x} of {size} bytes is misaligned")]
    Misaligned { lce: usize, addr: u64, size: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LceKind {
    Instruction,
    Data,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LceConfig {
    pub sets: usize,
    pub assoc: usize,
    pub block_bytes: usize,
    pub lce_id: usize,
    pub kind: LceKind,
}

impl LceConfig {
    pub fn new(lce_id: usize) -> Self {
        LceConfig {
            sets: 64,
            assoc: 8,
            block_bytes: 64,
            lce_id,
            kind: LceKind::Data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheLine {
    pub tag: u64,
    pub state: CoherenceState,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Load,
    Store,
    UncachedLoad,
    UncachedStore,
    AmoAdd,
    AmoSwap,
    Lr,
    Sc,
}

impl OpKind {
    pub fn is_store_class(self) -> bool {
        matches!(
            self,
            OpKind::Store | OpKind::AmoAdd | OpKind::AmoSwap | OpKind::Lr | OpKind::Sc
        )
    }

    pub fn is_uncached(self) -> bool {
        matches!(self, OpKind::UncachedLoad | OpKind::UncachedStore)
    }
}

/// A processor access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpuOp {
    pub kind: OpKind,
    pub addr: u64,
    pub size: u8,
    pub value: u64,
}

/// A completed processor access, in perform order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Performed {
    pub lce: usize,
    pub kind: OpKind,
    pub addr: u64,
    pub size: u8,
    /// Value observed by the access, for loads, atomics, LR and SC (0 on
    /// success, 1 on failure).
    pub read: Option<u64>,
    /// Value left in memory, for stores, atomics and successful SC.
    pub written: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Access {
    Hit(Performed),
    Miss(CohRequest),
    /// Posted nothing: an SC that failed locally.
    Failed(Performed),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Outstanding {
    op: CpuOp,
    block: u64,
    way: Way,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LceStats {
    pub hits: u64,
    pub misses: u64,
    pub upgrades: u64,
    pub invalidations: u64,
    pub writebacks: u64,
    pub transfers: u64,
}

#[derive(Debug, Clone)]
pub struct Lce {
    cfg: LceConfig,
    map: AddrMap,
    regions: RegionMap,
    lines: Vec<Vec<CacheLine>>,
    /// Per set, ways ordered from most to least recently used.
    recency: Vec<Vec<Way>>,
    outstanding: Option<Outstanding>,
    reservation: Option<u64>,
    performed: Vec<Performed>,
    pub stats: LceStats,
}

type Out = Vec<(Endpoint, Payload)>;

fn read_le(bytes: &[u8]) -> u64 {
    bytes.iter().rev().fold(0, |v, b| (v << 8) | *b as u64)
}

fn write_le(bytes: &mut [u8], v: u64) {
    for (i, b) in bytes.iter_mut().enumerate() {
        *b = (v >> (8 * i)) as u8;
    }
}

fn mask(size: u8) -> u64 {
    if size >= 8 {
        u64::MAX
    } else {
        (1u64 << (8 * size as u32)) - 1
    }
}

impl Lce {
    pub fn new(cfg: LceConfig, map: AddrMap, regions: RegionMap) -> Self {
        assert!(cfg.sets.is_power_of_two() && cfg.assoc.is_power_of_two());
        assert_eq!(cfg.sets, map.sets);
        assert_eq!(cfg.block_bytes, map.block_bytes);
        let line = CacheLine {
            tag: 0,
            state: I,
            data: vec![0; cfg.block_bytes],
        };
        Lce {
            lines: vec![vec![line; cfg.assoc]; cfg.sets],
            recency: vec![(0..cfg.assoc).collect(); cfg.sets],
            cfg,
            map,
            regions,
            outstanding: None,
            reservation: None,
            performed: Vec::new(),
            stats: LceStats::default(),
        }
    }

    pub fn id(&self) -> usize {
        self.cfg.lce_id
    }

    pub fn config(&self) -> &LceConfig {
        &self.cfg
    }

    pub fn busy(&self) -> bool {
        self.outstanding.is_some()
    }

    pub fn line(&self, set: usize, way: Way) -> &CacheLine {
        &self.lines[set][way]
    }

    pub fn take_performed(&mut self) -> Vec<Performed> {
        std::mem::take(&mut self.performed)
    }

    fn home(&self, addr: u64) -> Endpoint {
        Endpoint::Cce(self.map.cce_of(addr))
    }

    fn find(&self, addr: u64) -> Option<Way> {
        let set = self.map.set(addr);
        let tag = self.map.tag(addr);
        self.lines[set]
            .iter()
            .position(|l| l.state.is_valid() && l.tag == tag)
    }

    pub fn state_of(&self, addr: u64) -> CoherenceState {
        self.find(addr)
            .map(|w| self.lines[self.map.set(addr)][w].state)
            .unwrap_or(I)
    }

    fn touch(&mut self, set: usize, way: Way) {
        let r = &mut self.recency[set];
        r.retain(|w| *w != way);
        r.insert(0, way);
    }

    /// Victim way: the lowest invalid way, else the least recently used one.
    pub fn lru_way(&self, set: usize) -> Way {
        if let Some(w) = self.lines[set].iter().position(|l| !l.state.is_valid()) {
            return w;
        }
        *self.recency[set].last().unwrap()
    }

    /// Back door used to prepare occupancy scenarios.
    pub fn preload(&mut self, addr: u64, way: Way, state: CoherenceState, data: &[u8]) {
        let set = self.map.set(addr);
        self.lines[set][way] = CacheLine {
            tag: self.map.tag(addr),
            state,
            data: data.to_vec(),
        };
        self.touch(set, way);
    }

    fn protocol(
        &self,
        state: CoherenceState,
        ev: LceEvent,
    ) -> Result<crate::protocol::LceAction, LceError> {
        lce_event_action(state, ev).map_err(|source| LceError::Protocol {
            lce: self.cfg.lce_id,
            source,
        })
    }

    /// Issues a processor access. Accesses to non-cacheable addresses are
    /// turned into uncached requests.
    pub fn access(&mut self, mut op: CpuOp) -> Result<Access, LceError> {
        let lce = self.cfg.lce_id;
        if self.outstanding.is_some() {
            return Err(LceError::Busy(lce));
        }
        if op.size == 0
            || op.size > 8
            || !op.size.is_power_of_two()
            || !op.addr.is_multiple_of(op.size as u64)
        {
            return Err(LceError::Misaligned {
                lce,
                addr: op.addr,
                size: op.size,
            });
        }
        if !self.regions.is_cacheable(op.addr) {
            op.kind = match op.kind {
                OpKind::Load | OpKind::UncachedLoad => OpKind::UncachedLoad,
                OpKind::Store | OpKind::UncachedStore => OpKind::UncachedStore,
                _ => {
                    return Err(LceError::Unsupported {
                        lce,
                        addr: op.addr,
                        what: "atomic access",
                    })
                }
            };
        }
        if self.cfg.kind == LceKind::Instruction
            && op.kind != OpKind::Load
            && op.kind != OpKind::UncachedLoad
        {
            return Err(LceError::Unsupported {
                lce,
                addr: op.addr,
                what: "store through an instruction cache",
            });
        }
        let block = self.map.block(op.addr);
        if op.kind.is_uncached() {
            let req = CohRequest {
                addr: op.addr,
                lce,
                lru_way: 0,
                write: op.kind == OpKind::UncachedStore,
                non_exclusive: false,
                uncached: true,
                atomic: None,
                atomic_no_return: false,
                size: op.size,
                data: if op.kind == OpKind::UncachedStore {
                    let mut d = vec![0; op.size as usize];
                    write_le(&mut d, op.value);
                    d
                } else {
                    Vec::new()
                },
            };
            self.outstanding = Some(Outstanding { op, block, way: 0 });
            self.stats.misses += 1;
            return Ok(Access::Miss(req));
        }

        let set = self.map.set(op.addr);
        let hit_way = self.find(op.addr);
        let state = hit_way.map(|w| self.lines[set][w].state).unwrap_or(I);

        if op.kind == OpKind::Sc {
            let ok = self.reservation == Some(block) && state.is_writable();
            self.reservation = None;
            if !ok {
                let p = Performed {
                    lce,
                    kind: op.kind,
                    addr: op.addr,
                    size: op.size,
                    read: Some(1),
                    written: None,
                };
                self.performed.push(p);
                return Ok(Access::Failed(p));
            }
        }

        let ev = if op.kind.is_store_class() {
            LceEvent::Store
        } else {
            LceEvent::Load
        };
        let action = self.protocol(state, ev)?;
        if action.hit {
            let way = hit_way.expect("hit implies a valid way");
            self.lines[set][way].state = action.next_state;
            self.touch(set, way);
            self.stats.hits += 1;
            let p = self.perform(op, set, way);
            return Ok(Access::Hit(p));
        }
        let way = match hit_way {
            Some(w) => {
                self.stats.upgrades += 1;
                w
            }
            None => self.lru_way(set),
        };
        self.stats.misses += 1;
        let write = action.sends.contains(&LceSend::ReqWr);
        let req = CohRequest {
            addr: block,
            lce,
            lru_way: way,
            write,
            non_exclusive: !write && self.cfg.kind == LceKind::Instruction,
            uncached: false,
            atomic: match op.kind {
                OpKind::AmoAdd => Some(AtomicKind::FetchAdd),
                OpKind::AmoSwap => Some(AtomicKind::Swap),
                OpKind::Lr => Some(AtomicKind::LoadReserved),
                _ => None,
            },
            atomic_no_return: false,
            size: op.size,
            data: Vec::new(),
        };
        self.outstanding = Some(Outstanding { op, block, way });
        Ok(Access::Miss(req))
    }

    /// Applies `op` to a line that now has sufficient permission.
    fn perform(&mut self, op: CpuOp, set: usize, way: Way) -> Performed {
        let off = (op.addr as usize) & (self.cfg.block_bytes - 1);
        let range = off..off + op.size as usize;
        let line = &mut self.lines[set][way];
        let old = read_le(&line.data[range.clone()]);
        let m = mask(op.size);
        let (read, written) = match op.kind {
            OpKind::Load => (Some(old), None),
            OpKind::Lr => {
                self.reservation = Some(self.map.block(op.addr));
                (Some(old), None)
            }
            OpKind::Store => (None, Some(op.value & m)),
            OpKind::Sc => (Some(0), Some(op.value & m)),
            OpKind::AmoAdd => (Some(old), Some(old.wrapping_add(op.value) & m)),
            OpKind::AmoSwap => (Some(old), Some(op.value & m)),
            OpKind::UncachedLoad | OpKind::UncachedStore => {
                unreachable!("uncached ops complete at memory")
            }
        };
        if let Some(v) = written {
            debug_assert!(line.state.is_writable());
            line.state = M;
            write_le(&mut line.data[range], v);
        }
        let p = Performed {
            lce: self.cfg.lce_id,
            kind: op.kind,
            addr: op.addr,
            size: op.size,
            read,
            written,
        };
        self.performed.push(p);
        p
    }

    fn drop_reservation_if(&mut self, block: u64, state: CoherenceState) {
        if self.reservation == Some(block) && !state.is_writable() {
            self.reservation = None;
        }
    }

    fn line_for(&self, cmd_addr: u64, way: Way) -> Result<(usize, CoherenceState), LceError> {
        let set = self.map.set(cmd_addr);
        let line = &self.lines[set][way];
        if line.state.is_valid() && line.tag != self.map.tag(cmd_addr) {
            return Err(LceError::WrongBlock {
                lce: self.cfg.lce_id,
                addr: cmd_addr,
                way,
            });
        }
        Ok((set, line.state))
    }

    fn event_of(cmd: &CohCommand) -> Option<LceEvent> {
        Some(match cmd.kind {
            CmdKind::Inv => LceEvent::Inv,
            CmdKind::Data => LceEvent::Data(cmd.state),
            CmdKind::StW => LceEvent::StW(cmd.state),
            CmdKind::Wb => LceEvent::Wb,
            CmdKind::Tr => LceEvent::Tr {
                transfer: cmd.target_state,
            },
            CmdKind::StWb => LceEvent::StWb { set: cmd.state },
            CmdKind::StTr => LceEvent::StTr {
                set: cmd.state,
                transfer: cmd.target_state,
            },
            CmdKind::StTrWb => LceEvent::StTrWb {
                set: cmd.state,
                transfer: cmd.target_state,
            },
            CmdKind::UcData => return None,
        })
    }

    /// Handles a command from a CCE and returns the messages it emits.
    pub fn handle_command(&mut self, cmd: &CohCommand) -> Result<Out, LceError> {
        let Some(ev) = Self::event_of(cmd) else {
            return self.complete_uncached(cmd);
        };
        let block = self.map.block(cmd.addr);
        if matches!(cmd.kind, CmdKind::Data) {
            return self.install(block, cmd.way, cmd.state, &cmd.data, true);
        }
        let (set, state) = self.line_for(cmd.addr, cmd.way)?;
        let action = self.protocol(state, ev)?;
        let mut out = Vec::new();
        let data = self.lines[set][cmd.way].data.clone();
        for send in &action.sends {
            match send {
                LceSend::InvAck => {
                    self.stats.invalidations += 1;
                    out.push(self.response(RespKind::InvAck, block, Vec::new()));
                }
                LceSend::NullWb => {
                    self.stats.writebacks += 1;
                    out.push(self.response(RespKind::NullWb, block, Vec::new()));
                }
                LceSend::DirtyWb => {
                    self.stats.writebacks += 1;
                    out.push(self.response(RespKind::DirtyWb, block, data.clone()));
                }
                LceSend::CohAck => out.push(self.response(RespKind::CohAck, block, Vec::new())),
                LceSend::DataToTarget(s) => {
                    self.stats.transfers += 1;
                    out.push((
                        Endpoint::Lce(cmd.target_lce),
                        Payload::Fill(FillMsg {
                            addr: block,
                            lce: cmd.target_lce,
                            way: cmd.target_way,
                            state: *s,
                            data: data.clone(),
                        }),
                    ))
                }
                LceSend::ReqRd | LceSend::ReqWr => unreachable!("commands never miss"),
            }
        }
        self.lines[set][cmd.way].state = action.next_state;
        self.drop_reservation_if(block, action.next_state);
        if matches!(cmd.kind, CmdKind::StW) {
            let o = self.take_outstanding(block)?;
            self.touch(set, cmd.way);
            self.perform(o.op, set, cmd.way);
        }
        Ok(out)
    }

    /// Installs a block delivered by a cache-to-cache transfer.
    pub fn handle_fill(&mut self, fill: &FillMsg) -> Result<Out, LceError> {
        self.install(
            self.map.block(fill.addr),
            fill.way,
            fill.state,
            &fill.data,
            false,
        )
    }

    fn take_outstanding(&mut self, block: u64) -> Result<Outstanding, LceError> {
        match self.outstanding {
            Some(o) if o.block == block && !o.op.kind.is_uncached() => {
                self.outstanding = None;
                Ok(o)
            }
            _ => Err(LceError::UnexpectedFill {
                lce: self.cfg.lce_id,
                addr: block,
            }),
        }
    }

    fn install(
        &mut self,
        block: u64,
        way: Way,
        state: CoherenceState,
        data: &[u8],
        _from_cce: bool,
    ) -> Result<Out, LceError> {
        let o = self.take_outstanding(block)?;
        // Whatever sat in the way is either invalid or a clean victim that the
        // directory has already forgotten.
        let action = self.protocol(I, LceEvent::Data(state))?;
        let set = self.map.set(block);
        let evicted = self.lines[set][way].clone();
        if evicted.state.is_valid() {
            let victim = self.map.addr_of(evicted.tag, set);
            if matches!(evicted.state, E | M | O) && victim != block {
                return Err(LceError::LiveVictim {
                    lce: self.cfg.lce_id,
                    addr: block,
                    victim,
                    state: evicted.state,
                });
            }
            if self.reservation == Some(victim) {
                self.reservation = None;
            }
        }
        self.lines[set][way] = CacheLine {
            tag: self.map.tag(block),
            state: action.next_state,
            data: data.to_vec(),
        };
        self.touch(set, way);
        debug_assert_eq!(o.way, way);
        if o.op.kind.is_store_class() && !state.is_writable() {
            return Err(LceError::Protocol {
                lce: self.cfg.lce_id,
                source: ProtocolError::ImpossibleTransition {
                    state,
                    event: "DATA for a store".into(),
                },
            });
        }
        self.perform(o.op, set, way);
        Ok(vec![self.response(RespKind::CohAck, block, Vec::new())])
    }

    fn complete_uncached(&mut self, cmd: &CohCommand) -> Result<Out, LceError> {
        match self.outstanding {
            Some(o) if o.op.kind.is_uncached() && o.op.addr == cmd.addr => {
                self.outstanding = None;
                let (read, written) = if o.op.kind == OpKind::UncachedLoad {
                    (Some(read_le(&cmd.data)), None)
                } else {
                    (None, Some(o.op.value & mask(o.op.size)))
                };
                self.performed.push(Performed {
                    lce: self.cfg.lce_id,
                    kind: o.op.kind,
                    addr: o.op.addr,
                    size: o.op.size,
                    read,
                    written,
                });
                Ok(Vec::new())
            }
            _ => Err(LceError::UnexpectedFill {
                lce: self.cfg.lce_id,
                addr: cmd.addr,
            }),
        }
    }

    fn response(&self, kind: RespKind, addr: u64, data: Vec<u8>) -> (Endpoint, Payload) {
        (
            self.home(addr),
            Payload::Response(CohResponse {
                kind,
                addr,
                lce: self.cfg.lce_id,
                data,
            }),
        )
    }

    /// Valid lines as (block address, way, state).
    pub fn valid_lines(&self) -> Vec<(u64, Way, CoherenceState)> {
        let mut v = Vec::new();
        for (set, ways) in self.lines.iter().enumerate() {
            for (w, l) in ways.iter().enumerate() {
                if l.state.is_valid() {
                    v.push((self.map.addr_of(l.tag, set), w, l.state));
                }
            }
        }
        v
    }

    /// Current bytes of a valid block, if cached.
    pub fn block_data(&self, addr: u64) -> Option<&[u8]> {
        let w = self.find(addr)?;
        Some(&self.lines[self.map.set(addr)][w].data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: u64 = 0x8000_0040;

    fn lce() -> Lce {
        Lce::new(
            LceConfig::new(0),
            AddrMap::new(64, 64, 1),
            RegionMap::default(),
        )
    }

    fn op(kind: OpKind, addr: u64, value: u64) -> CpuOp {
        CpuOp {
            kind,
            addr,
            size: 8,
            value,
        }
    }

    fn data_cmd(way: Way, state: CoherenceState, data: Vec<u8>) -> CohCommand {
        let mut c = CohCommand::header(CmdKind::Data, A, 0, way, state);
        c.data = data;
        c
    }

    #[test]
    fn load_hit_in_s() {
        let mut l = lce();
        l.preload(A, 2, S, &[5; 64]);
        match l.access(op(OpKind::Load, A, 0)).unwrap() {
            Access::Hit(p) => assert_eq!(p.read, Some(0x0505_0505_0505_0505)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn store_in_s_upgrades_from_hit_way() {
        let mut l = lce();
        l.preload(A, 2, S, &[0; 64]);
        match l.access(op(OpKind::Store, A, 1)).unwrap() {
            Access::Miss(r) => {
                assert!(r.write);
                assert_eq!(r.lru_way, 2);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(l.access(op(OpKind::Load, A, 0)), Err(LceError::Busy(0)));
        let out = l
            .handle_command(&CohCommand::header(CmdKind::StW, A, 0, 2, M))
            .unwrap();
        assert!(matches!(&out[0].1, Payload::Response(r) if r.kind == RespKind::CohAck));
        assert_eq!(l.state_of(A), M);
        assert_eq!(read_le(&l.block_data(A).unwrap()[0..8]), 1);
    }

    #[test]
    fn store_in_e_silently_dirty() {
        let mut l = lce();
        l.preload(A, 0, E, &[0; 64]);
        assert!(matches!(
            l.access(op(OpKind::Store, A, 9)).unwrap(),
            Access::Hit(_)
        ));
        assert_eq!(l.state_of(A), M);
    }

    #[test]
    fn load_miss_fill_e() {
        let mut l = lce();
        let Access::Miss(r) = l.access(op(OpKind::Load, A + 8, 0)).unwrap() else {
            panic!()
        };
        assert!(!r.write && !r.non_exclusive && r.addr == A);
        let out = l
            .handle_command(&data_cmd(r.lru_way, E, vec![3; 64]))
            .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(l.state_of(A), E);
        let p = l.take_performed();
        assert_eq!(p[0].read, Some(0x0303_0303_0303_0303));
    }

    #[test]
    fn store_miss_applied_after_fill() {
        let mut l = lce();
        let Access::Miss(r) = l
            .access(CpuOp {
                kind: OpKind::Store,
                addr: A + 4,
                size: 4,
                value: 0xdead_beef,
            })
            .unwrap()
        else {
            panic!()
        };
        l.handle_command(&data_cmd(r.lru_way, M, vec![0; 64]))
            .unwrap();
        let d = l.block_data(A).unwrap();
        assert_eq!(read_le(&d[4..8]), 0xdead_beef);
        assert_eq!(l.state_of(A), M);
    }

    #[test]
    fn fetch_add_after_fill() {
        let mut l = lce();
        let Access::Miss(r) = l.access(op(OpKind::AmoAdd, A, 5)).unwrap() else {
            panic!()
        };
        assert_eq!(r.atomic, Some(AtomicKind::FetchAdd));
        let mut block = vec![0; 64];
        write_le(&mut block[0..8], 37);
        l.handle_command(&data_cmd(r.lru_way, M, block)).unwrap();
        let p = l.take_performed();
        assert_eq!(p[0].read, Some(37));
        assert_eq!(p[0].written, Some(42));
        assert_eq!(l.state_of(A), M);
    }

    #[test]
    fn owner_transfer_and_writeback() {
        let mut l = lce();
        l.preload(A, 1, M, &[7; 64]);
        let mut c = CohCommand::header(CmdKind::StTr, A, 0, 1, I);
        c.target_lce = 2;
        c.target_way = 4;
        c.target_state = M;
        let out = l.handle_command(&c).unwrap();
        assert_eq!(out[0].0, Endpoint::Lce(2));
        assert!(
            matches!(&out[0].1, Payload::Fill(f) if f.state == M && f.way == 4 && f.data == vec![7; 64])
        );
        assert_eq!(l.state_of(A), I);

        let mut l = lce();
        l.preload(A, 1, E, &[0; 64]);
        let out = l
            .handle_command(&CohCommand::header(CmdKind::StWb, A, 0, 1, I))
            .unwrap();
        assert!(matches!(&out[0].1, Payload::Response(r) if r.kind == RespKind::NullWb));
        assert_eq!(l.state_of(A), I);
    }

    #[test]
    fn inv_in_s_and_impossible_in_m() {
        let mut l = lce();
        l.preload(A, 0, S, &[0; 64]);
        let out = l
            .handle_command(&CohCommand::header(CmdKind::Inv, A, 0, 0, I))
            .unwrap();
        assert!(matches!(&out[0].1, Payload::Response(r) if r.kind == RespKind::InvAck));
        let mut l = lce();
        l.preload(A, 0, M, &[0; 64]);
        assert!(matches!(
            l.handle_command(&CohCommand::header(CmdKind::Inv, A, 0, 0, I)),
            Err(LceError::Protocol { .. })
        ));
    }

    #[test]
    fn lr_sc() {
        let mut l = lce();
        l.preload(A, 0, E, &[0; 64]);
        assert!(matches!(
            l.access(op(OpKind::Lr, A, 0)).unwrap(),
            Access::Hit(_)
        ));
        let Access::Hit(p) = l.access(op(OpKind::Sc, A, 11)).unwrap() else {
            panic!()
        };
        assert_eq!(p.read, Some(0));
        // Reservation consumed: a second SC fails without a request.
        let Access::Failed(p) = l.access(op(OpKind::Sc, A, 12)).unwrap() else {
            panic!()
        };
        assert_eq!(p.read, Some(1));
        // Losing write permission drops the reservation.
        l.access(op(OpKind::Lr, A, 0)).unwrap();
        let mut c = CohCommand::header(CmdKind::StTr, A, 0, 0, O);
        c.target_lce = 1;
        c.target_state = S;
        l.handle_command(&c).unwrap();
        assert!(matches!(
            l.access(op(OpKind::Sc, A, 1)).unwrap(),
            Access::Failed(_)
        ));
    }

    #[test]
    fn io_accesses_are_uncached() {
        let mut l = lce();
        let Access::Miss(r) = l.access(op(OpKind::Store, 0x1000, 3)).unwrap() else {
            panic!()
        };
        assert!(r.uncached && r.write && r.data.len() == 8);
        l.handle_command(&CohCommand::header(CmdKind::UcData, 0x1000, 0, 0, I))
            .unwrap();
        assert!(!l.busy());
        assert!(l.access(op(OpKind::AmoAdd, 0x1000, 1)).is_err());
    }

    #[test]
    fn instruction_cache_reads_non_exclusive() {
        let mut cfg = LceConfig::new(3);
        cfg.kind = LceKind::Instruction;
        let mut l = Lce::new(cfg, AddrMap::new(64, 64, 1), RegionMap::default());
        let Access::Miss(r) = l.access(op(OpKind::Load, A, 0)).unwrap() else {
            panic!()
        };
        assert!(r.non_exclusive);
    }

    #[test]
    fn lru_examples() {
        let mut l = lce();
        assert_eq!(l.lru_way(1), 0);
        let a = |tag: u64| AddrMap::new(64, 64, 1).addr_of(tag, 1);
        for w in 0..8 {
            l.preload(a(w as u64 + 1), w, S, &[0; 64]);
        }
        assert_eq!(l.lru_way(1), 0);
    }

    proptest! {
        #[test]
        fn lru_matches_recency_list(touches in prop::collection::vec(0usize..8, 1..40)) {
            let mut l = lce();
            let m = AddrMap::new(64, 64, 1);
            for w in 0..8 {
                l.preload(m.addr_of(0x80000 + w as u64, 3), w, S, &[0; 64]);
            }
            let mut oracle: Vec<usize> = (0..8).collect();
            for t in touches {
                l.access(op(OpKind::Load, m.addr_of(0x80000 + t as u64, 3), 0)).unwrap();
                oracle.retain(|w| *w != t);
                oracle.push(t);
            }
            prop_assert_eq!(l.lru_way(3), oracle[0]);
        }
    }
}
