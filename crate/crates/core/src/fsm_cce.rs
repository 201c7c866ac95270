//! Fixed-function coherence engine.
//!
//! The request machine is expressed as a queue of steps, each with a fixed
//! cycle cost. Control-flow decisions are folded into the step that precedes
//! them and cost nothing. Per-step costs:
//!
//! | step                          | cycles          |
//! |-------------------------------|-----------------|
//! | ready (dequeue)               | 1               |
//! | pending check / increment     | 1 / 1           |
//! | speculative memory read       | 1               |
//! | way-group read                | 1 + C/2         |
//! | GAD                           | 1               |
//! | write requester next state    | 1               |
//! | replacement ST-WB, WB         | 1, then 1 or N  |
//! | Inv send, InvAck consume      | 1 each          |
//! | owner command, spec squash    | 1, 1            |
//! | owner WB after ST-TR-WB       | 0 or N          |
//! | upgrade: squash, STW          | 1, 1            |
//! | confirm memory (spec resolve) | 1               |
//!
//! Owner and invalidation-target directory entries are written in the same
//! cycle as the command that changes them. Cycles spent waiting on messages
//! or a pending way group are stalls, not busy cycles.

use std::collections::VecDeque;

use crate::cce::{CceConfig, CceError, CceShared, Engine, TxnClass, TxnRecord, WbKind};
use crate::directory::{gad, WayGroupRead};
use crate::msg::{CmdKind, CohCommand, CohRequest, MemCmd, MemOp, RespKind};
use crate::network::Network;
use crate::protocol::{
    dir_summary, AddressClass, CoherenceState, CommandKind, CommandTarget, DirRequestKind, Grant,
    InvalidateSet,
};

use CoherenceState::*;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Step {
    Dequeue,
    PendingCheck,
    PendingInc,
    SpecRead,
    DirRead,
    Gad,
    FlushPlan,
    WriteNext,
    Cmd {
        cmd: CohCommand,
        dir: Option<(usize, usize, CoherenceState)>,
    },
    Inv {
        lce: usize,
        way: usize,
    },
    InvAck,
    Wb {
        lce: usize,
        null_cost: u64,
        replacement: bool,
    },
    SpecSquash,
    SpecResolve(CoherenceState),
    Mem {
        cmd: MemCmd,
        wp: bool,
    },
    PendingDec,
}

enum Started {
    Done(u64),
    Waiting,
    Backpressure,
}

#[derive(Debug, Clone)]
pub struct FsmCce {
    sh: CceShared,
    steps: VecDeque<Step>,
    remaining: u64,
    req: Option<CohRequest>,
    rec: Option<TxnRecord>,
    wg_read: Option<WayGroupRead>,
    grant_state: CoherenceState,
    seq: u64,
    holds_wg: bool,
}

fn cmd_kind(k: CommandKind) -> CmdKind {
    match k {
        CommandKind::StTr => CmdKind::StTr,
        CommandKind::StTrWb => CmdKind::StTrWb,
        CommandKind::Tr => CmdKind::Tr,
        CommandKind::StWb => CmdKind::StWb,
        CommandKind::StW => CmdKind::StW,
    }
}

impl FsmCce {
    pub fn new(cfg: CceConfig) -> Self {
        FsmCce {
            sh: CceShared::new(cfg),
            steps: VecDeque::new(),
            remaining: 0,
            req: None,
            rec: None,
            wg_read: None,
            grant_state: I,
            seq: 0,
            holds_wg: false,
        }
    }

    fn finish(&mut self, now: u64) {
        if let Some(mut rec) = self.rec.take() {
            rec.end = now;
            self.sh.records.push(rec);
        }
        self.req = None;
        self.wg_read = None;
        self.holds_wg = false;
    }

    fn finish_if_done(&mut self, now: u64) {
        if self.remaining == 0 && self.steps.is_empty() {
            self.finish(now + 1);
        }
    }

    fn start(&mut self, step: &Step, now: u64, net: &mut Network) -> Result<Started, CceError> {
        let addr = self.req.as_ref().map_or(0, |r| r.addr);
        let sh = &mut self.sh;
        Ok(match step {
            Step::Dequeue => {
                let Some(req) = sh.pop_request() else {
                    return Ok(Started::Waiting);
                };
                let class = match sh.classify(&req) {
                    AddressClass::CacheableCoherent => {
                        self.steps.extend([
                            Step::PendingCheck,
                            Step::PendingInc,
                            Step::SpecRead,
                            Step::DirRead,
                            Step::Gad,
                        ]);
                        // Refined once the directory has been read.
                        TxnClass::Coherent(DirRequestKind::ReqRd)
                    }
                    AddressClass::UncachedToCacheable => {
                        self.steps.extend([
                            Step::PendingCheck,
                            Step::PendingInc,
                            Step::DirRead,
                            Step::FlushPlan,
                        ]);
                        TxnClass::UncachedToCacheable
                    }
                    AddressClass::UncachedToUncacheable => {
                        self.steps.push_back(Step::Mem {
                            cmd: uncached_cmd(&req),
                            wp: false,
                        });
                        TxnClass::UncachedToUncacheable
                    }
                };
                self.seq += 1;
                self.rec = Some(TxnRecord::new(&req, class, now));
                self.req = Some(req);
                Started::Done(1)
            }
            Step::PendingCheck => {
                if sh.pending.read(sh.wg(addr)) {
                    Started::Waiting
                } else {
                    Started::Done(1)
                }
            }
            Step::PendingInc => {
                let wg = sh.wg(addr);
                sh.pending.inc(wg).map_err(|e| sh.dir_err(e))?;
                self.holds_wg = true;
                Started::Done(1)
            }
            Step::SpecRead => {
                if !sh.can_send_mem(net) {
                    return Ok(Started::Backpressure);
                }
                let req = self.req.as_ref().unwrap();
                let wg = sh.wg(req.addr);
                sh.spec.set(wg, E).map_err(|e| sh.dir_err(e))?;
                let cmd = MemCmd {
                    op: MemOp::Read,
                    addr: req.addr,
                    size: sh.cfg.map.block_bytes as u8,
                    lce: req.lce,
                    way: req.lru_way,
                    state: E,
                    spec: true,
                    data: Vec::new(),
                };
                sh.send_mem(now, net, cmd, true)?;
                Started::Done(1)
            }
            Step::DirRead => {
                let req = self.req.as_ref().unwrap();
                let r = sh
                    .dir
                    .read_way_group(req.addr, req.lce, req.lru_way)
                    .map_err(|e| sh.dir_err(e))?;
                let lat = r.latency;
                self.wg_read = Some(r);
                Started::Done(lat)
            }
            Step::Gad => {
                self.plan()?;
                Started::Done(1)
            }
            Step::FlushPlan => {
                self.flush_plan();
                Started::Done(1)
            }
            Step::WriteNext => {
                let req = self.req.as_ref().unwrap();
                sh.dir
                    .write_block(req.addr, req.lce, req.lru_way, self.grant_state)
                    .map_err(|e| sh.dir_err(e))?;
                Started::Done(1)
            }
            Step::Cmd { cmd, dir } => {
                if let Some((lce, way, state)) = dir {
                    sh.dir
                        .write_state(cmd.addr, *lce, *way, *state)
                        .map_err(|e| sh.dir_err(e))?;
                }
                sh.send_cmd(now, net, cmd.clone())?;
                Started::Done(1)
            }
            Step::Inv { lce, way } => {
                sh.dir
                    .write_state(addr, *lce, *way, I)
                    .map_err(|e| sh.dir_err(e))?;
                sh.send_cmd(
                    now,
                    net,
                    CohCommand::header(CmdKind::Inv, addr, *lce, *way, I),
                )?;
                Started::Done(1)
            }
            Step::InvAck => match sh.resp_q.front() {
                None => Started::Waiting,
                Some(r) if r.kind == RespKind::InvAck => {
                    sh.resp_q.pop_front();
                    Started::Done(1)
                }
                Some(r) => {
                    return Err(sh.unexpected(format!("{:?} while collecting InvAcks", r.kind)))
                }
            },
            Step::Wb {
                lce,
                null_cost,
                replacement,
            } => {
                let Some(r) = sh.resp_q.front() else {
                    return Ok(Started::Waiting);
                };
                if r.lce != *lce || !matches!(r.kind, RespKind::NullWb | RespKind::DirtyWb) {
                    return Err(sh.unexpected(format!(
                        "{:?} from LCE {} while awaiting a writeback",
                        r.kind, r.lce
                    )));
                }
                let kind = if r.kind == RespKind::DirtyWb {
                    if !sh.can_send_mem(net) {
                        return Ok(Started::Backpressure);
                    }
                    WbKind::Dirty
                } else {
                    WbKind::Null
                };
                let r = sh.resp_q.pop_front().unwrap();
                if let Some(rec) = self.rec.as_mut() {
                    if *replacement {
                        rec.replacement = Some(kind);
                    } else {
                        rec.owner_wb = Some(kind);
                    }
                }
                match kind {
                    WbKind::Null => Started::Done(*null_cost),
                    WbKind::Dirty => {
                        let beats = sh.cfg.beats(r.data.len());
                        let cmd = MemCmd {
                            op: MemOp::Write,
                            addr: r.addr,
                            size: r.data.len() as u8,
                            lce: r.lce,
                            way: 0,
                            state: I,
                            spec: false,
                            data: r.data,
                        };
                        sh.send_mem(now, net, cmd, true)?;
                        Started::Done(beats)
                    }
                }
            }
            Step::SpecSquash => {
                let wg = sh.wg(addr);
                sh.spec.squash(wg);
                Started::Done(1)
            }
            Step::SpecResolve(state) => {
                let wg = sh.wg(addr);
                if *state == E {
                    sh.spec.unset(wg);
                } else {
                    sh.spec.fwd_mod(wg, *state);
                }
                Started::Done(1)
            }
            Step::Mem { cmd, wp } => {
                if !sh.can_send_mem(net) {
                    return Ok(Started::Backpressure);
                }
                let beats = sh.cfg.beats(cmd.data.len());
                sh.send_mem(now, net, cmd.clone(), *wp)?;
                Started::Done(beats)
            }
            Step::PendingDec => {
                let wg = sh.wg(addr);
                sh.pending.dec(wg).map_err(|e| sh.dir_err(e))?;
                Started::Done(1)
            }
        })
    }

    /// GAD step: decides every remaining step of a coherent request.
    fn plan(&mut self) -> Result<(), CceError> {
        let sh = &self.sh;
        let req = self.req.clone().unwrap();
        let wr = self.wg_read.as_ref().unwrap();
        let write = req.write || req.atomic.is_some();
        let g = gad(&wr.sharers, &wr.lru, req.lce, write).map_err(|e| sh.dir_err(e))?;
        let summary = dir_summary(wr.sharers.states.iter().copied());
        let kind = DirRequestKind::classify(write, req.non_exclusive, g.req_state);
        let plan = sh
            .cfg
            .protocol
            .plan(summary, kind)
            .map_err(|e| sh.proto_err(e))?;
        if g.upgrade && g.req_hit_way != Some(req.lru_way) {
            return Err(sh.unexpected(format!(
                "upgrade from LCE {} names way {} but the block sits in way {:?}",
                req.lce, req.lru_way, g.req_hit_way
            )));
        }
        let sharers: Vec<(usize, usize)> = (0..wr.sharers.hits.len())
            .filter(|&c| wr.sharers.hits[c] && wr.sharers.states[c] == S)
            .map(|c| (c, wr.sharers.ways[c]))
            .collect();
        if let Some(rec) = self.rec.as_mut() {
            rec.class = TxnClass::Coherent(kind);
            rec.lce_state = g.req_state;
            rec.dir_state = summary;
            rec.sharers = sharers.len();
        }
        self.grant_state = plan.grant_state;
        let mut steps = vec![Step::WriteNext];

        if g.replacement {
            let lru = &wr.lru;
            steps.push(Step::Cmd {
                cmd: CohCommand::header(CmdKind::StWb, lru.addr, req.lce, req.lru_way, I),
                dir: None,
            });
            steps.push(Step::Wb {
                lce: req.lce,
                null_cost: 1,
                replacement: true,
            });
        }

        let mut targets: Vec<(usize, usize)> = match plan.invalidate {
            InvalidateSet::None => Vec::new(),
            _ => sharers
                .iter()
                .copied()
                .filter(|(c, _)| *c != req.lce)
                .collect(),
        };
        if plan.invalidate == InvalidateSet::OtherSharersAndOwner {
            let o = g.owner.expect("owner present");
            targets.push((o.lce, o.way));
        }
        for &(lce, way) in &targets {
            steps.push(Step::Inv { lce, way });
        }
        steps.extend(targets.iter().map(|_| Step::InvAck));

        match plan.command {
            Some(d) if d.target == CommandTarget::Owner => {
                let o = g.owner.expect("owner present");
                if o.lce == req.lce {
                    return Err(
                        sh.unexpected(format!("LCE {} commanded to transfer to itself", o.lce))
                    );
                }
                let mut cmd = CohCommand::header(
                    cmd_kind(d.kind),
                    req.addr,
                    o.lce,
                    o.way,
                    d.set_state.unwrap_or(o.state),
                );
                cmd.target_lce = req.lce;
                cmd.target_way = req.lru_way;
                cmd.target_state = d.transfer_state.expect("transfer state");
                let dir = plan.owner_next_state().map(|s| (o.lce, o.way, s));
                steps.push(Step::Cmd { cmd, dir });
                steps.push(Step::SpecSquash);
                if d.kind == CommandKind::StTrWb {
                    steps.push(Step::Wb {
                        lce: o.lce,
                        null_cost: 0,
                        replacement: false,
                    });
                }
            }
            Some(d) => {
                debug_assert_eq!(d.kind, CommandKind::StW);
                steps.push(Step::SpecSquash);
                steps.push(Step::Cmd {
                    cmd: CohCommand::header(
                        CmdKind::StW,
                        req.addr,
                        req.lce,
                        req.lru_way,
                        plan.grant_state,
                    ),
                    dir: None,
                });
            }
            None => {}
        }
        if plan.grant == Grant::DataFromMemory {
            steps.push(Step::SpecResolve(plan.grant_state));
        }
        self.steps.extend(steps);
        Ok(())
    }

    /// Removes every cached copy ahead of an uncached access to coherent memory.
    fn flush_plan(&mut self) {
        let req = self.req.clone().unwrap();
        let wr = self.wg_read.as_ref().unwrap();
        let mut steps = Vec::new();
        let mut invs = Vec::new();
        let mut acks = 0;
        for c in 0..wr.sharers.hits.len() {
            if !wr.sharers.hits[c] {
                continue;
            }
            let (state, way) = (wr.sharers.states[c], wr.sharers.ways[c]);
            if matches!(state, E | M | O) {
                steps.push(Step::Cmd {
                    cmd: CohCommand::header(
                        CmdKind::StWb,
                        self.sh.cfg.map.block(req.addr),
                        c,
                        way,
                        I,
                    ),
                    dir: Some((c, way, I)),
                });
                steps.push(Step::Wb {
                    lce: c,
                    null_cost: 1,
                    replacement: false,
                });
            } else {
                invs.push(Step::Inv { lce: c, way });
                acks += 1;
            }
        }
        // The owner's writeback completes before any InvAck can reach the queue.
        steps.extend(invs);
        if let Some(rec) = self.rec.as_mut() {
            rec.dir_state = dir_summary(wr.sharers.states.iter().copied());
            rec.sharers = wr.sharers.states.iter().filter(|s| **s == S).count();
        }
        steps.extend((0..acks).map(|_| Step::InvAck));
        steps.push(Step::Mem {
            cmd: uncached_cmd(&req),
            wp: true,
        });
        steps.push(Step::PendingDec);
        self.steps.extend(steps);
    }
}

fn uncached_cmd(req: &CohRequest) -> MemCmd {
    MemCmd {
        op: if req.write {
            MemOp::UncachedWrite
        } else {
            MemOp::UncachedRead
        },
        addr: req.addr,
        size: req.size,
        lce: req.lce,
        way: 0,
        state: I,
        spec: false,
        data: req.data.clone(),
    }
}

impl Engine for FsmCce {
    fn shared(&self) -> &CceShared {
        &self.sh
    }

    fn shared_mut(&mut self) -> &mut CceShared {
        &mut self.sh
    }

    fn tick(&mut self, now: u64, net: &mut Network) -> Result<(), CceError> {
        self.sh.mem_resp_tick(now, net)?;
        self.sh.counters.cycles += 1;
        if self.remaining > 0 {
            self.remaining -= 1;
            self.sh.counters.busy += 1;
            if let Some(rec) = self.rec.as_mut() {
                rec.busy_cycles += 1;
            }
            self.finish_if_done(now);
            return Ok(());
        }
        loop {
            if self.steps.is_empty() {
                self.finish(now);
                self.steps.push_back(Step::Dequeue);
            }
            let step = self.steps.pop_front().unwrap();
            match self.start(&step, now, net)? {
                Started::Done(0) => continue,
                Started::Done(cost) => {
                    self.remaining = cost - 1;
                    self.sh.counters.busy += 1;
                    if let Some(rec) = self.rec.as_mut() {
                        rec.busy_cycles += 1;
                    }
                    self.finish_if_done(now);
                    return Ok(());
                }
                blocked => {
                    self.steps.push_front(step);
                    if let Some(rec) = self.rec.as_mut() {
                        if matches!(blocked, Started::Backpressure) {
                            rec.backpressure_cycles += 1;
                            self.sh.counters.backpressure += 1;
                        } else {
                            rec.stall_cycles += 1;
                            self.sh.counters.stall += 1;
                        }
                    }
                    return Ok(());
                }
            }
        }
    }

    fn active_txn(&self) -> Option<(u64, usize)> {
        let req = self.req.as_ref()?;
        self.holds_wg.then(|| (self.seq, self.sh.wg(req.addr)))
    }

    fn at_ready(&self) -> bool {
        self.remaining == 0 && self.steps.iter().all(|s| *s == Step::Dequeue)
    }
}
