//! State shared by both coherence engines: inbound queues, the directory,
//! pending and speculative bits, the memory-response unit and per-transaction
//! records.

use std::collections::VecDeque;

use thiserror::Error;

use crate::directory::{AddrMap, DirError, Directory, PendingBits, SpecBits, SpecOutcome};
use crate::msg::{
    CmdKind, CohCommand, CohRequest, CohResponse, Endpoint, MemCmd, MemOp, MemResp, Payload,
    RespKind,
};
use crate::network::{NetError, NetKind, NetMessage, Network};
use crate::protocol::{
    AddressClass, CoherenceState, DirRequestKind, Protocol, ProtocolError, RegionMap,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CceError {
    #[error("CCE {cce}: {source}")]
    Dir { cce: usize, source: DirError },
    #[error("CCE {cce}: {source}")]
    Protocol { cce: usize, source: ProtocolError },
    #[error("CCE {cce}: {source}")]
    Net { cce: usize, source: NetError },
    #[error("CCE {cce}: unexpected {what}")]
    Unexpected { cce: usize, what: String },
    #[error("CCE {cce}: illegal instruction at pc {pc}: {text}")]
    IllegalInstruction { cce: usize, pc: usize, text: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CceConfig {
    pub id: usize,
    pub protocol: Protocol,
    pub regions: RegionMap,
    pub map: AddrMap,
    /// Caches tracked by each directory segment, in LCE id order.
    pub segments: Vec<usize>,
    pub assoc: usize,
    pub tag_sets_per_row: usize,
    pub beat_bytes: usize,
}

impl CceConfig {
    /// Single-CCE system with one directory segment of `num_lces` caches.
    pub fn single(num_lces: usize, sets: usize, assoc: usize, block_bytes: usize) -> Self {
        CceConfig {
            id: 0,
            protocol: Protocol::Moesif,
            regions: RegionMap::default(),
            map: AddrMap::new(block_bytes, sets, 1),
            segments: vec![num_lces],
            assoc,
            tag_sets_per_row: 2,
            beat_bytes: 8,
        }
    }

    pub fn num_lces(&self) -> usize {
        self.segments.iter().sum()
    }

    /// Data beats in one block.
    pub fn block_beats(&self) -> u64 {
        self.map.block_bytes.div_ceil(self.beat_bytes) as u64
    }

    pub fn beats(&self, len: usize) -> u64 {
        (len.div_ceil(self.beat_bytes) as u64).max(1)
    }
}

/// Request class as recorded in transaction statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TxnClass {
    Coherent(DirRequestKind),
    UncachedToCacheable,
    UncachedToUncacheable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WbKind {
    Null,
    Dirty,
}

/// One request as seen by an engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnRecord {
    pub class: TxnClass,
    pub addr: u64,
    pub lce: usize,
    pub write: bool,
    pub non_exclusive: bool,
    /// Requester's state in the directory before the request.
    pub lce_state: CoherenceState,
    /// Directory summary state before the request.
    pub dir_state: CoherenceState,
    /// Caches holding the block in S before the request, requester included.
    pub sharers: usize,
    pub replacement: Option<WbKind>,
    pub owner_wb: Option<WbKind>,
    pub start: u64,
    pub end: u64,
    pub busy_cycles: u64,
    /// Cycles waiting on messages or on a pending way group.
    pub stall_cycles: u64,
    /// Cycles blocked by memory-network credits.
    pub backpressure_cycles: u64,
}

impl TxnRecord {
    pub fn new(req: &CohRequest, class: TxnClass, start: u64) -> Self {
        TxnRecord {
            class,
            addr: req.addr,
            lce: req.lce,
            write: req.write || req.atomic.is_some(),
            non_exclusive: req.non_exclusive,
            lce_state: CoherenceState::I,
            dir_state: CoherenceState::I,
            sharers: 0,
            replacement: None,
            owner_wb: None,
            start,
            end: start,
            busy_cycles: 0,
            stall_cycles: 0,
            backpressure_cycles: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CceCounters {
    pub cycles: u64,
    pub busy: u64,
    pub stall: u64,
    pub backpressure: u64,
    pub mem_resp_forwarded: u64,
    pub mem_resp_sunk: u64,
    pub coh_acks: u64,
}

#[derive(Debug, Clone)]
pub struct CceShared {
    pub cfg: CceConfig,
    pub dir: Directory,
    pub pending: PendingBits,
    pub spec: SpecBits,
    req_fifos: Vec<VecDeque<CohRequest>>,
    rr: usize,
    pub resp_q: VecDeque<CohResponse>,
    pub memresp_q: VecDeque<MemResp>,
    mem_unit_busy_until: u64,
    /// Set when the memory-response unit wrote pending or spec bits this cycle.
    pub port_taken: bool,
    pub records: Vec<TxnRecord>,
    pub counters: CceCounters,
}

impl CceShared {
    pub fn new(cfg: CceConfig) -> Self {
        let dir = Directory::new(
            cfg.map,
            cfg.id,
            &cfg.segments,
            cfg.assoc,
            cfg.tag_sets_per_row,
        );
        let wgs = cfg.map.sets_per_cce();
        let n = cfg.num_lces();
        CceShared {
            dir,
            pending: PendingBits::new(wgs),
            spec: SpecBits::new(wgs),
            req_fifos: vec![VecDeque::new(); n],
            rr: 0,
            resp_q: VecDeque::new(),
            memresp_q: VecDeque::new(),
            mem_unit_busy_until: 0,
            port_taken: false,
            records: Vec::new(),
            counters: CceCounters::default(),
            cfg,
        }
    }

    pub fn id(&self) -> usize {
        self.cfg.id
    }

    pub fn endpoint(&self) -> Endpoint {
        Endpoint::Cce(self.cfg.id)
    }

    pub fn dir_err(&self, source: DirError) -> CceError {
        CceError::Dir {
            cce: self.cfg.id,
            source,
        }
    }

    pub fn proto_err(&self, source: ProtocolError) -> CceError {
        CceError::Protocol {
            cce: self.cfg.id,
            source,
        }
    }

    pub fn unexpected(&self, what: impl Into<String>) -> CceError {
        CceError::Unexpected {
            cce: self.cfg.id,
            what: what.into(),
        }
    }

    pub fn wg(&self, addr: u64) -> usize {
        self.cfg.map.way_group(addr)
    }

    pub fn classify(&self, req: &CohRequest) -> AddressClass {
        crate::protocol::classify_request(req.addr, req.uncached, &self.cfg.regions)
    }

    /// Accepts a message delivered by the network. CohAcks are consumed here
    /// and only release the pending counter.
    pub fn receive(&mut self, msg: NetMessage) -> Result<(), CceError> {
        match msg.payload {
            Payload::Request(r) => {
                let lce = r.lce;
                self.req_fifos
                    .get_mut(lce)
                    .ok_or_else(|| CceError::Unexpected {
                        cce: self.cfg.id,
                        what: format!("request from unknown LCE {lce}"),
                    })?
                    .push_back(r)
            }
            Payload::Response(r) if r.kind == RespKind::CohAck => {
                self.counters.coh_acks += 1;
                let wg = self.wg(r.addr);
                self.pending.dec(wg).map_err(|e| self.dir_err(e))?;
            }
            Payload::Response(r) => self.resp_q.push_back(r),
            Payload::MemResp(r) => self.memresp_q.push_back(r),
            other => return Err(self.unexpected(format!("message {other:?}"))),
        }
        Ok(())
    }

    /// LCE whose request the round-robin arbiter would pick next.
    pub fn next_request_lce(&self) -> Option<usize> {
        let n = self.req_fifos.len();
        (0..n)
            .map(|i| (self.rr + i) % n)
            .find(|&l| !self.req_fifos[l].is_empty())
    }

    pub fn has_request(&self) -> bool {
        self.next_request_lce().is_some()
    }

    pub fn pop_request(&mut self) -> Option<CohRequest> {
        let l = self.next_request_lce()?;
        self.rr = (l + 1) % self.req_fifos.len();
        self.req_fifos[l].pop_front()
    }

    /// Head request the arbiter would pick next, without dequeuing it.
    pub fn peek_request(&self) -> Option<&CohRequest> {
        self.next_request_lce()
            .and_then(|l| self.req_fifos[l].front())
    }

    /// Dequeues the head request of one LCE, advancing the arbiter past it.
    pub fn pop_request_from(&mut self, lce: usize) -> Option<CohRequest> {
        let r = self.req_fifos.get_mut(lce)?.pop_front()?;
        self.rr = (lce + 1) % self.req_fifos.len();
        Some(r)
    }

    pub fn queued_requests(&self) -> usize {
        self.req_fifos.iter().map(|f| f.len()).sum()
    }

    /// Sends on a non-credited network.
    pub fn send(
        &self,
        now: u64,
        net: &mut Network,
        dst: Endpoint,
        payload: Payload,
    ) -> Result<(), CceError> {
        net.send(now, NetMessage::new(self.endpoint(), dst, payload))
            .map_err(|source| CceError::Net {
                cce: self.cfg.id,
                source,
            })
    }

    pub fn send_cmd(&self, now: u64, net: &mut Network, cmd: CohCommand) -> Result<(), CceError> {
        self.send(now, net, Endpoint::Lce(cmd.lce), Payload::Command(cmd))
    }

    pub fn can_send_mem(&self, net: &Network) -> bool {
        net.can_send(self.endpoint(), NetKind::MemCmd)
    }

    /// Sends a memory command, incrementing the way group's pending counter
    /// when `wp` is set. The caller checks credits first.
    pub fn send_mem(
        &mut self,
        now: u64,
        net: &mut Network,
        cmd: MemCmd,
        wp: bool,
    ) -> Result<(), CceError> {
        if wp {
            let wg = self.wg(cmd.addr);
            self.pending.inc(wg).map_err(|e| self.dir_err(e))?;
        }
        self.send(now, net, Endpoint::Mem, Payload::MemCmd(cmd))
    }

    /// One cycle of the memory-response unit. Spec responses wait at the head
    /// of the queue until the request engine resolves them.
    pub fn mem_resp_tick(&mut self, now: u64, net: &mut Network) -> Result<(), CceError> {
        self.port_taken = false;
        if now < self.mem_unit_busy_until {
            return Ok(());
        }
        let Some(head) = self.memresp_q.front() else {
            return Ok(());
        };
        let cacheable = self.cfg.regions.is_cacheable(head.addr);
        let wg = self.wg(head.addr);
        let mut state = head.state;
        let forward = if head.spec {
            match self.spec.outcome(wg).map_err(|e| self.dir_err(e))? {
                SpecOutcome::Wait => return Ok(()),
                SpecOutcome::Squash => false,
                SpecOutcome::Forward(s) => {
                    if let Some(s) = s {
                        state = s;
                    }
                    true
                }
            }
        } else {
            head.op != MemOp::Write
        };
        let resp = self.memresp_q.pop_front().unwrap();
        if resp.spec {
            self.spec.consume(wg);
        }
        net.return_credit(self.endpoint());
        if cacheable {
            self.pending.dec(wg).map_err(|e| self.dir_err(e))?;
        }
        self.port_taken = true;
        if !forward {
            self.counters.mem_resp_sunk += 1;
            self.mem_unit_busy_until = now + 1;
            return Ok(());
        }
        self.counters.mem_resp_forwarded += 1;
        let kind = match resp.op {
            MemOp::Read => CmdKind::Data,
            MemOp::UncachedRead | MemOp::UncachedWrite => CmdKind::UcData,
            MemOp::Write => unreachable!(),
        };
        let mut cmd = CohCommand::header(kind, resp.addr, resp.lce, resp.way, state);
        cmd.data = resp.data;
        self.mem_unit_busy_until = now + self.cfg.beats(cmd.data.len());
        self.send_cmd(now, net, cmd)
    }

    /// No queued work and every way group settled.
    pub fn quiescent(&self) -> bool {
        self.queued_requests() == 0
            && self.resp_q.is_empty()
            && self.memresp_q.is_empty()
            && self.pending.all_clear()
            && self.spec.all_clear()
    }
}

/// A coherence engine attached to one CCE.
pub trait Engine {
    fn shared(&self) -> &CceShared;
    fn shared_mut(&mut self) -> &mut CceShared;
    /// Advances the engine one cycle. Inbound messages for `now` have already
    /// been handed to [`CceShared::receive`].
    fn tick(&mut self, now: u64, net: &mut Network) -> Result<(), CceError>;
    /// The request machine is back at its idle point.
    fn at_ready(&self) -> bool;
    /// Sequence number and way group of the request that currently holds a
    /// way group, once it has passed the pending check.
    fn active_txn(&self) -> Option<(u64, usize)>;
}
