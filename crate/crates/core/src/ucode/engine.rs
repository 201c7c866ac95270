//! Microcode-programmable coherence engine.
//!
//! Timing model of the two-stage pipeline:
//!
//! - every instruction takes one cycle, except `rdw` (the way-group read
//!   latency, 1 + C/2), `rde` (2), a memory push carrying data (one cycle per
//!   beat) and `inv` (2 + 2T for T targets: start, one cycle per Inv sent,
//!   one per InvAck consumed, finish);
//! - a mispredicted branch adds one bubble;
//! - an empty input queue, a missing memory credit or a port lost to the
//!   message unit stalls the instruction, which replays next cycle.
//!
//! A request's busy window runs from the `poph req` that captures it up to the
//! instruction that returns control to the idle point (a `wfq` on `req`, or a
//! `poph req`). Instructions marked `wait` count as stall.

use std::collections::VecDeque;

use super::asm::{render, MicroProgram};
use super::isa::*;
use crate::cce::{CceConfig, CceError, CceShared, Engine, TxnClass, TxnRecord, WbKind};
use crate::directory::{gad, SharersVectors, WayGroupRead};
use crate::msg::{CmdKind, CohCommand, MemCmd, MemOp, RespKind};
use crate::mshr::{Flag, Mshr};
use crate::network::Network;
use crate::protocol::{dir_summary, CoherenceState, DirRequestKind};

use CoherenceState::*;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegFile {
    pub gprs: [u64; 8],
    pub mshr: Mshr,
    pub coh_state_reg: CoherenceState,
    pub auto_fwd: bool,
}

impl Default for RegFile {
    fn default() -> Self {
        RegFile {
            gprs: [0; 8],
            mshr: Mshr::default(),
            coh_state_reg: I,
            auto_fwd: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PipeState {
    pub fetch_pc: usize,
    /// Instruction held in the fetch stage.
    pub fetched: Option<MicroInstr>,
    pub stall: bool,
    /// Set for the bubble cycle that follows a mispredict.
    pub mispredict_redirect: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UcodeStats {
    pub retired: u64,
    pub mispredicts: u64,
    pub replays: u64,
}

#[derive(Debug, Clone)]
struct InvFsm {
    addr: u64,
    to_send: VecDeque<(usize, usize)>,
    acks: usize,
}

enum Exec {
    Done {
        next: usize,
        cost: u64,
        taken: Option<bool>,
    },
    StartInv(InvFsm),
    Stall,
    Backpressure,
    Replay,
}

#[derive(Clone, Copy)]
enum Acct {
    Busy,
    Stall,
    Backpressure,
}

#[derive(Debug, Clone)]
pub struct UcodeCce {
    sh: CceShared,
    prog: MicroProgram,
    pub regs: RegFile,
    pub pipe: PipeState,
    pub stats: UcodeStats,
    pc: usize,
    busy_left: u64,
    busy_is_stall: bool,
    inv: Option<InvFsm>,
    sharers: Option<WayGroupRead>,
    /// LCE whose request header is held in the MSHR.
    captured: Option<usize>,
    rec: Option<TxnRecord>,
    seq: u64,
    holds_wg: bool,
}

fn resp_code(k: RespKind) -> u64 {
    match k {
        RespKind::InvAck => 0,
        RespKind::CohAck => 1,
        RespKind::NullWb => 2,
        RespKind::DirtyWb => 3,
    }
}

fn cmd_kind(k: PushKind) -> CmdKind {
    match k {
        PushKind::Inv => CmdKind::Inv,
        PushKind::StW => CmdKind::StW,
        PushKind::Wb => CmdKind::Wb,
        PushKind::Tr => CmdKind::Tr,
        PushKind::StWb => CmdKind::StWb,
        PushKind::StTr => CmdKind::StTr,
        PushKind::StTrWb => CmdKind::StTrWb,
        PushKind::MemRd | PushKind::MemWr | PushKind::MemUc => unreachable!(),
    }
}

impl UcodeCce {
    pub fn new(cfg: CceConfig, prog: MicroProgram) -> Result<Self, CceError> {
        let mut e = UcodeCce {
            sh: CceShared::new(cfg),
            prog: MicroProgram::default(),
            regs: RegFile::default(),
            pipe: PipeState::default(),
            stats: UcodeStats::default(),
            pc: 0,
            busy_left: 0,
            busy_is_stall: false,
            inv: None,
            sharers: None,
            captured: None,
            rec: None,
            seq: 0,
            holds_wg: false,
        };
        e.load_program(prog)?;
        Ok(e)
    }

    /// Replaces the program and resets the engine.
    pub fn load_program(&mut self, prog: MicroProgram) -> Result<(), CceError> {
        prog.check(IMEM_SIZE)
            .map_err(|e| CceError::IllegalInstruction {
                cce: self.sh.id(),
                pc: 0,
                text: e.to_string(),
            })?;
        self.prog = prog;
        self.reset();
        Ok(())
    }

    pub fn reset(&mut self) {
        self.pc = 0;
        self.regs = RegFile::default();
        self.pipe = PipeState::default();
        self.busy_left = 0;
        self.inv = None;
        self.sharers = None;
        self.captured = None;
        self.rec = None;
        self.holds_wg = false;
    }

    pub fn pc(&self) -> usize {
        self.pc
    }

    pub fn program(&self) -> &MicroProgram {
        &self.prog
    }

    fn illegal(&self, pc: usize, why: &str) -> CceError {
        let text = match self.prog.instrs.get(pc) {
            Some(i) => format!("{} ({why})", render(i, &|t| format!("@{t}"))),
            None => why.to_string(),
        };
        CceError::IllegalInstruction {
            cce: self.sh.id(),
            pc,
            text,
        }
    }

    fn account(&mut self, a: Acct) {
        let c = &mut self.sh.counters;
        match a {
            Acct::Busy => c.busy += 1,
            Acct::Stall => c.stall += 1,
            Acct::Backpressure => c.backpressure += 1,
        }
        if let Some(rec) = self.rec.as_mut() {
            match a {
                Acct::Busy => rec.busy_cycles += 1,
                Acct::Stall => rec.stall_cycles += 1,
                Acct::Backpressure => rec.backpressure_cycles += 1,
            }
        }
    }

    fn is_idle_point(&self, pc: usize) -> bool {
        match self.prog.instrs.get(pc).map(|i| i.op) {
            Some(Op::Wfq { mask }) => mask & (1 << InQueue::Req.code()) != 0,
            Some(Op::Poph {
                q: InQueue::Req, ..
            }) => true,
            _ => false,
        }
    }

    fn close_record(&mut self, now: u64) {
        if let Some(mut rec) = self.rec.take() {
            rec.end = now + 1;
            self.sh.records.push(rec);
        }
        self.holds_wg = false;
    }

    fn retire_done(&mut self, now: u64) {
        if self.is_idle_point(self.pc) {
            self.close_record(now);
        }
        self.pipe.mispredict_redirect = None;
    }

    fn read_reg(&self, r: Reg) -> u64 {
        let m = &self.regs.mshr;
        match r {
            Reg::Gpr(i) => self.regs.gprs[i as usize],
            Reg::Nxt => m.next_state.bits() as u64,
            Reg::Csr => self.regs.coh_state_reg.bits() as u64,
            Reg::Afr => self.regs.auto_fwd as u64,
            Reg::OwnerLce => m.owner_lce as u64,
            Reg::OwnerWay => m.owner_way as u64,
            Reg::OwnerState => m.owner_state.bits() as u64,
            Reg::ReqLce => m.req_lce as u64,
            Reg::NumLce => self.sh.cfg.num_lces() as u64,
        }
    }

    fn write_reg(&mut self, pc: usize, r: Reg, v: u64) -> Result<(), CceError> {
        let state = || u8::try_from(v).ok().and_then(CoherenceState::from_bits);
        match r {
            Reg::Gpr(i) => self.regs.gprs[i as usize] = v,
            Reg::Nxt => {
                self.regs.mshr.next_state =
                    state().ok_or_else(|| self.illegal(pc, "not a state"))?
            }
            Reg::Csr => {
                self.regs.coh_state_reg = state().ok_or_else(|| self.illegal(pc, "not a state"))?
            }
            Reg::Afr => self.regs.auto_fwd = v != 0,
            _ => return Err(self.illegal(pc, "read-only register")),
        }
        Ok(())
    }

    fn addr(&self, a: AddrSel) -> u64 {
        match a {
            AddrSel::Req => self.regs.mshr.paddr,
            AddrSel::Lru => self.regs.mshr.lru_addr,
            AddrSel::Gpr(g) => self.regs.gprs[g as usize],
        }
    }

    fn lce(&self, l: LceSel) -> usize {
        match l {
            LceSel::Req => self.regs.mshr.req_lce,
            LceSel::Owner => self.regs.mshr.owner_lce,
            LceSel::Gpr(g) => self.regs.gprs[g as usize] as usize,
        }
    }

    fn way(&self, w: WaySel) -> usize {
        match w {
            WaySel::Lru => self.regs.mshr.lru_way,
            WaySel::Owner => self.regs.mshr.owner_way,
            WaySel::Gpr(g) => self.regs.gprs[g as usize] as usize,
        }
    }

    fn state(&self, s: StateSel) -> CoherenceState {
        match s {
            StateSel::Imm(s) => s,
            StateSel::Nxt => self.regs.mshr.next_state,
            StateSel::Csr => self.regs.coh_state_reg,
            StateSel::Owner => self.regs.mshr.owner_state,
        }
    }

    /// Uses of the pending-bit write port or the speculative-bit port, which
    /// the memory-response unit wins.
    fn uses_shared_port(op: &Op) -> bool {
        match op {
            Op::Wdp { .. } | Op::Clp { .. } | Op::Specq { .. } => true,
            Op::Pushq(p) => p.wp || p.spec,
            Op::Popq { wp, .. } => *wp,
            _ => false,
        }
    }

    fn classify_record(&mut self, g: &crate::directory::GadResult, sv: &SharersVectors) {
        let m = &self.regs.mshr;
        let write = m.flag(Flag::WriteNotRead);
        let ne = m.flag(Flag::NonExclusive);
        if let Some(rec) = self.rec.as_mut() {
            if let TxnClass::Coherent(_) = rec.class {
                rec.class = TxnClass::Coherent(DirRequestKind::classify(write, ne, g.req_state));
                rec.lce_state = g.req_state;
            }
            rec.dir_state = dir_summary(sv.states.iter().copied());
            rec.sharers = (0..sv.hits.len())
                .filter(|&c| sv.hits[c] && sv.states[c] == S)
                .count();
        }
    }

    fn exec(&mut self, instr: MicroInstr, now: u64, net: &mut Network) -> Result<Exec, CceError> {
        let pc = self.pc;
        let next = pc + 1;
        let done = |cost: u64| Exec::Done {
            next,
            cost,
            taken: None,
        };
        if self.sh.port_taken && Self::uses_shared_port(&instr.op) {
            return Ok(Exec::Replay);
        }
        Ok(match instr.op {
            Op::Sf(f) => {
                self.regs.mshr.flags.set(f, true);
                done(1)
            }
            Op::Sfz(f) => {
                self.regs.mshr.flags.set(f, false);
                done(1)
            }
            Op::FlagLogic { op, a, b, rd } => {
                let (x, y) = (self.regs.mshr.flag(a), self.regs.mshr.flag(b));
                let v = match op {
                    FlagOp::And => x && y,
                    FlagOp::Or => x || y,
                    FlagOp::Nand => !(x && y),
                };
                self.write_reg(pc, rd, v as u64)?;
                done(1)
            }
            Op::Notf { a, rd } => {
                let v = !self.regs.mshr.flag(a);
                self.write_reg(pc, rd, v as u64)?;
                done(1)
            }
            Op::Bf { cond, target, mask } => {
                let set = self.regs.mshr.flags.0 & mask;
                let taken = match cond {
                    FlagBranch::All => set == mask,
                    FlagBranch::None => set == 0,
                    FlagBranch::Any => set != 0,
                    FlagBranch::NotAll => set != mask,
                };
                Exec::Done {
                    next: if taken { target as usize } else { next },
                    cost: 1,
                    taken: Some(taken),
                }
            }
            Op::Rdp { addr } => {
                let p = self.sh.pending.read(self.sh.wg(self.addr(addr)));
                self.regs.mshr.flags.set(Flag::Pending, p);
                done(1)
            }
            Op::Rdw { addr, lce, way } => {
                let (a, l, w) = (self.addr(addr), self.lce(lce), self.way(way));
                let r = self
                    .sh
                    .dir
                    .read_way_group(a, l, w)
                    .map_err(|e| self.sh.dir_err(e))?;
                self.regs.mshr.lru_addr = r.lru.addr;
                self.regs.mshr.lru_state = r.lru.state;
                let lat = r.latency;
                self.sharers = Some(r);
                done(lat)
            }
            Op::Rde { addr, lce, way, rd } => {
                let (a, l, w) = (self.addr(addr), self.lce(lce), self.way(way));
                let (entry, lat) = self
                    .sh
                    .dir
                    .read_entry(a, l, w)
                    .map_err(|e| self.sh.dir_err(e))?;
                let hit = entry.state != I && entry.tag == self.sh.cfg.map.tag(a);
                let st = if hit { entry.state } else { I };
                self.write_reg(pc, rd, st.bits() as u64)?;
                done(lat)
            }
            Op::Wdp { addr, up } => {
                let wg = self.sh.wg(self.addr(addr));
                self.sh
                    .pending
                    .adjust(wg, up)
                    .map_err(|e| self.sh.dir_err(e))?;
                done(1)
            }
            Op::Clp { addr } => {
                let wg = self.sh.wg(self.addr(addr));
                self.sh.pending.clear(wg);
                done(1)
            }
            Op::Clr { addr, lce } => {
                let lat = self
                    .sh
                    .dir
                    .clear_row(self.addr(addr), self.lce(lce))
                    .map_err(|e| self.sh.dir_err(e))?;
                done(lat)
            }
            Op::Wde {
                addr,
                lce,
                way,
                state,
            } => {
                let lat = self
                    .sh
                    .dir
                    .write_block(
                        self.addr(addr),
                        self.lce(lce),
                        self.way(way),
                        self.state(state),
                    )
                    .map_err(|e| self.sh.dir_err(e))?;
                done(lat)
            }
            Op::Wds {
                addr,
                lce,
                way,
                state,
            } => {
                let lat = self
                    .sh
                    .dir
                    .write_state(
                        self.addr(addr),
                        self.lce(lce),
                        self.way(way),
                        self.state(state),
                    )
                    .map_err(|e| self.sh.dir_err(e))?;
                done(lat)
            }
            Op::Gad => {
                let Some(r) = self.sharers.clone() else {
                    return Err(self.illegal(pc, "gad before rdw"));
                };
                let m = &self.regs.mshr;
                let g = gad(&r.sharers, &r.lru, m.req_lce, m.flag(Flag::WriteNotRead))
                    .map_err(|e| self.sh.dir_err(e))?;
                self.regs.mshr.load_gad(&g, &r.lru);
                self.classify_record(&g, &r.sharers);
                done(1)
            }
            Op::Wfq { mask } => {
                let ready = InQueue::ALL.iter().any(|q| {
                    mask & (1 << q.code()) != 0
                        && match q {
                            InQueue::Req => self.sh.has_request(),
                            InQueue::Resp => !self.sh.resp_q.is_empty(),
                            InQueue::MemResp => !self.sh.memresp_q.is_empty(),
                        }
                });
                if ready {
                    done(1)
                } else {
                    Exec::Stall
                }
            }
            Op::Pushq(p) => return self.push(p, now, net),
            Op::Popq { q, wp } => match q {
                InQueue::Req => {
                    let Some(l) = self.captured else {
                        return Err(self.illegal(pc, "no request header captured"));
                    };
                    if self.sh.pop_request_from(l).is_none() {
                        return Err(self.illegal(pc, "captured request vanished"));
                    }
                    self.captured = None;
                    if wp {
                        let wg = self.sh.wg(self.regs.mshr.paddr);
                        self.sh.pending.inc(wg).map_err(|e| self.sh.dir_err(e))?;
                        self.holds_wg = true;
                    }
                    done(1)
                }
                InQueue::Resp => {
                    let Some(r) = self.sh.resp_q.pop_front() else {
                        return Ok(Exec::Stall);
                    };
                    if wp {
                        let wg = self.sh.wg(r.addr);
                        self.sh.pending.dec(wg).map_err(|e| self.sh.dir_err(e))?;
                    }
                    let kind = match r.kind {
                        RespKind::NullWb => Some(WbKind::Null),
                        RespKind::DirtyWb => Some(WbKind::Dirty),
                        _ => None,
                    };
                    if let (Some(kind), Some(rec)) = (kind, self.rec.as_mut()) {
                        let m = &self.regs.mshr;
                        let map = self.sh.cfg.map;
                        if m.flag(Flag::Replacement) && map.block(r.addr) == map.block(m.lru_addr) {
                            rec.replacement = Some(kind);
                        } else {
                            rec.owner_wb = Some(kind);
                        }
                    }
                    done(1)
                }
                InQueue::MemResp => {
                    let Some(r) = self.sh.memresp_q.pop_front() else {
                        return Ok(Exec::Stall);
                    };
                    net.return_credit(self.sh.endpoint());
                    if wp {
                        let wg = self.sh.wg(r.addr);
                        self.sh.pending.dec(wg).map_err(|e| self.sh.dir_err(e))?;
                    }
                    done(1)
                }
            },
            Op::Poph { q, rd } => {
                let v = match q {
                    InQueue::Req => {
                        let Some(req) = self.sh.peek_request().cloned() else {
                            return Ok(Exec::Stall);
                        };
                        let cacheable = self.sh.cfg.regions.is_cacheable(req.addr);
                        self.regs.mshr.load_request(&req, cacheable);
                        let class = match self.sh.classify(&req) {
                            crate::protocol::AddressClass::CacheableCoherent => {
                                TxnClass::Coherent(DirRequestKind::ReqRd)
                            }
                            crate::protocol::AddressClass::UncachedToCacheable => {
                                TxnClass::UncachedToCacheable
                            }
                            crate::protocol::AddressClass::UncachedToUncacheable => {
                                TxnClass::UncachedToUncacheable
                            }
                        };
                        self.close_record(now);
                        self.seq += 1;
                        self.rec = Some(TxnRecord::new(&req, class, now));
                        self.captured = Some(req.lce);
                        self.sharers = None;
                        req.lce as u64
                    }
                    InQueue::Resp => match self.sh.resp_q.front() {
                        Some(r) => resp_code(r.kind),
                        None => return Ok(Exec::Stall),
                    },
                    InQueue::MemResp => match self.sh.memresp_q.front() {
                        Some(r) => r.op as u64,
                        None => return Ok(Exec::Stall),
                    },
                };
                self.write_reg(pc, rd, v)?;
                done(1)
            }
            Op::Specq { op, addr, state } => {
                let wg = self.sh.wg(self.addr(addr));
                match op {
                    SpecOp::Set => self
                        .sh
                        .spec
                        .set(wg, self.state(state))
                        .map_err(|e| self.sh.dir_err(e))?,
                    SpecOp::Unset => self.sh.spec.unset(wg),
                    SpecOp::Squash => self.sh.spec.squash(wg),
                    SpecOp::Fwd => self.sh.spec.fwd_mod(wg, self.state(state)),
                }
                done(1)
            }
            Op::Inv { own, all } => {
                let Some(r) = self.sharers.as_ref() else {
                    return Err(self.illegal(pc, "inv before rdw"));
                };
                let m = &self.regs.mshr;
                let sv = &r.sharers;
                let mut targets: VecDeque<(usize, usize)> = (0..sv.hits.len())
                    .filter(|&c| {
                        let st = sv.states[c];
                        sv.hits[c]
                            && if all {
                                matches!(st, S | F)
                            } else {
                                st == S && c != m.req_lce
                            }
                    })
                    .map(|c| (c, sv.ways[c]))
                    .collect();
                if own
                    && m.owner_state != I
                    && m.owner_lce != m.req_lce
                    && !targets.iter().any(|t| t.0 == m.owner_lce)
                {
                    targets.push_back((m.owner_lce, m.owner_way));
                }
                Exec::StartInv(InvFsm {
                    addr: m.paddr,
                    acks: targets.len(),
                    to_send: targets,
                })
            }
            Op::Alu { op, rd, ra, rb } => {
                let v = op.apply(self.read_reg(ra), self.read_reg(rb));
                self.write_reg(pc, rd, v)?;
                done(1)
            }
            Op::Addi { rd, ra, imm } => {
                let v = self.read_reg(ra).wrapping_add(imm as i64 as u64);
                self.write_reg(pc, rd, v)?;
                done(1)
            }
            Op::Mov { rd, ra } => {
                let v = self.read_reg(ra);
                self.write_reg(pc, rd, v)?;
                done(1)
            }
            Op::Movi { rd, imm } => {
                self.write_reg(pc, rd, imm as i64 as u64)?;
                done(1)
            }
            Op::Beq { ne, ra, rb, target } => {
                let taken = (self.read_reg(ra) == self.read_reg(rb)) != ne;
                Exec::Done {
                    next: if taken { target as usize } else { next },
                    cost: 1,
                    taken: Some(taken),
                }
            }
            Op::Beqi {
                ne,
                ra,
                imm,
                target,
            } => {
                let taken = (self.read_reg(ra) == imm as i64 as u64) != ne;
                Exec::Done {
                    next: if taken { target as usize } else { next },
                    cost: 1,
                    taken: Some(taken),
                }
            }
            Op::Bi { target } => Exec::Done {
                next: target as usize,
                cost: 1,
                taken: Some(true),
            },
        })
    }

    fn push(&mut self, p: Push, now: u64, net: &mut Network) -> Result<Exec, CceError> {
        let pc = self.pc;
        let addr = self.addr(p.addr);
        let lce = self.lce(p.lce);
        let way = self.way(p.way);
        let state = self.state(p.state);
        let m = &self.regs.mshr;
        let sh = &mut self.sh;
        if !p.kind.is_mem() {
            let mut cmd = CohCommand::header(cmd_kind(p.kind), addr, lce, way, state);
            if matches!(p.kind, PushKind::Tr | PushKind::StTr | PushKind::StTrWb) {
                cmd.target_lce = m.req_lce;
                cmd.target_way = m.lru_way;
                cmd.target_state = m.next_state;
            }
            sh.send_cmd(now, net, cmd)?;
            return Ok(Exec::Done {
                next: pc + 1,
                cost: 1,
                taken: None,
            });
        }
        if !sh.can_send_mem(net) {
            return Ok(Exec::Backpressure);
        }
        let cmd = match p.kind {
            PushKind::MemRd => MemCmd {
                op: MemOp::Read,
                addr,
                size: sh.cfg.map.block_bytes as u8,
                lce,
                way,
                state,
                spec: p.spec,
                data: Vec::new(),
            },
            PushKind::MemWr => {
                let Some(r) = sh.resp_q.front() else {
                    return Ok(Exec::Stall);
                };
                if r.kind != RespKind::DirtyWb || sh.cfg.map.block(r.addr) != sh.cfg.map.block(addr)
                {
                    return Err(sh.unexpected(format!(
                        "memory write of {addr:#x} with {:?} for {:#x} at the head of the response queue",
                        r.kind, r.addr
                    )));
                }
                MemCmd {
                    op: MemOp::Write,
                    addr: r.addr,
                    size: r.data.len() as u8,
                    lce: r.lce,
                    way,
                    state: I,
                    spec: false,
                    data: r.data.clone(),
                }
            }
            PushKind::MemUc => MemCmd {
                op: if m.flag(Flag::WriteNotRead) {
                    MemOp::UncachedWrite
                } else {
                    MemOp::UncachedRead
                },
                addr,
                size: m.size,
                lce,
                way,
                state: I,
                spec: false,
                data: m.data.clone(),
            },
            _ => unreachable!(),
        };
        if p.spec {
            let wg = sh.wg(addr);
            sh.spec.set(wg, state).map_err(|e| sh.dir_err(e))?;
        }
        let cost = if cmd.data.is_empty() {
            1
        } else {
            sh.cfg.beats(cmd.data.len())
        };
        sh.send_mem(now, net, cmd, p.wp)?;
        Ok(Exec::Done {
            next: pc + 1,
            cost,
            taken: None,
        })
    }

    /// One cycle of the invalidation state machine.
    fn inv_step(&mut self, now: u64, net: &mut Network) -> Result<(), CceError> {
        let fsm = self.inv.as_mut().unwrap();
        let sh = &mut self.sh;
        if let Some((lce, way)) = fsm.to_send.pop_front() {
            sh.dir
                .write_state(fsm.addr, lce, way, I)
                .map_err(|e| sh.dir_err(e))?;
            sh.send_cmd(
                now,
                net,
                CohCommand::header(CmdKind::Inv, fsm.addr, lce, way, I),
            )?;
            self.account(Acct::Busy);
            return Ok(());
        }
        if fsm.acks > 0 {
            match sh.resp_q.front() {
                None => self.account(Acct::Stall),
                Some(r) if r.kind == RespKind::InvAck => {
                    sh.resp_q.pop_front();
                    fsm.acks -= 1;
                    self.account(Acct::Busy);
                }
                Some(r) => {
                    return Err(sh.unexpected(format!("{:?} while collecting InvAcks", r.kind)))
                }
            }
            return Ok(());
        }
        self.inv = None;
        self.account(Acct::Busy);
        self.retire_done(now);
        Ok(())
    }
}

impl Engine for UcodeCce {
    fn shared(&self) -> &CceShared {
        &self.sh
    }

    fn shared_mut(&mut self) -> &mut CceShared {
        &mut self.sh
    }

    fn tick(&mut self, now: u64, net: &mut Network) -> Result<(), CceError> {
        if self.regs.auto_fwd {
            self.sh.mem_resp_tick(now, net)?;
        } else {
            self.sh.port_taken = false;
        }
        self.sh.counters.cycles += 1;
        self.pipe.stall = false;
        if self.busy_left > 0 {
            self.busy_left -= 1;
            self.account(if self.busy_is_stall {
                Acct::Stall
            } else {
                Acct::Busy
            });
            if self.busy_left == 0 {
                self.retire_done(now);
            }
            return Ok(());
        }
        if self.inv.is_some() {
            return self.inv_step(now, net);
        }
        let pc = self.pc;
        let Some(&instr) = self.prog.instrs.get(pc) else {
            return Err(self.illegal(pc, "pc outside program"));
        };
        match self.exec(instr, now, net)? {
            Exec::Done { next, cost, taken } => {
                self.stats.retired += 1;
                let mispredict = taken.is_some_and(|t| t != instr.predict_taken);
                self.pc = next;
                self.pipe.fetch_pc = next;
                self.pipe.fetched = self.prog.instrs.get(next).copied();
                if mispredict {
                    self.stats.mispredicts += 1;
                    self.pipe.mispredict_redirect = Some(next);
                }
                self.account(if instr.wait { Acct::Stall } else { Acct::Busy });
                self.busy_left = cost - 1 + mispredict as u64;
                self.busy_is_stall = instr.wait;
                if self.busy_left == 0 {
                    self.retire_done(now);
                }
            }
            Exec::StartInv(fsm) => {
                self.stats.retired += 1;
                self.pc += 1;
                self.inv = Some(fsm);
                self.account(Acct::Busy);
            }
            Exec::Stall => {
                self.pipe.stall = true;
                self.account(Acct::Stall);
            }
            Exec::Backpressure => {
                self.pipe.stall = true;
                self.account(Acct::Backpressure);
            }
            Exec::Replay => {
                self.pipe.stall = true;
                self.stats.replays += 1;
                self.account(Acct::Stall);
            }
        }
        Ok(())
    }

    fn at_ready(&self) -> bool {
        self.busy_left == 0 && self.inv.is_none() && self.is_idle_point(self.pc)
    }

    fn active_txn(&self) -> Option<(u64, usize)> {
        self.holds_wg
            .then(|| (self.seq, self.sh.wg(self.regs.mshr.paddr)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msg::CohResponse;
    use crate::network::NetConfig;
    use crate::ucode::asm::assemble;

    const A: u64 = 0x8000_0140;

    fn engine(c: usize, src: &str) -> UcodeCce {
        UcodeCce::new(CceConfig::single(c, 64, 8, 64), assemble(src).unwrap()).unwrap()
    }

    /// Ticks until the engine returns to `end` at an idle point; busy cycles.
    fn run_to(e: &mut UcodeCce, end: usize) -> u64 {
        let mut net = Network::new(NetConfig::default());
        let mut now = 0;
        while e.pc() != end || !e.at_ready() {
            e.tick(now, &mut net).unwrap();
            now += 1;
            assert!(now < 1000, "stuck at pc {}", e.pc());
        }
        e.sh.counters.busy
    }

    #[test]
    fn mispredict_costs_one_bubble() {
        let mut hit = engine(2, "movi r1 1\nbeqi r1 1 end pt\nend: wfq req\n");
        assert_eq!(run_to(&mut hit, 2), 2);
        let mut miss = engine(2, "movi r1 1\nbeqi r1 1 end\nend: wfq req\n");
        assert_eq!(run_to(&mut miss, 2), 3);
        assert_eq!(miss.stats.mispredicts, 1);
        let mut fall = engine(
            2,
            "movi r1 2\nbeqi r1 1 end pt\nnop: movi r2 0\nend: wfq req\n",
        );
        assert_eq!(run_to(&mut fall, 3), 4);
    }

    #[test]
    fn way_group_read_latency() {
        for c in [2usize, 4, 8, 16] {
            let mut e = engine(c, "rdw addr=req lce=req lru_way=lru\nwfq req\n");
            e.regs.mshr.paddr = A;
            assert_eq!(run_to(&mut e, 1), 1 + c as u64 / 2, "C={c}");
        }
    }

    #[test]
    fn entry_read_is_tag_checked() {
        let mut e = engine(2, "rde addr=req lce=r3 way=lru dst=r2\nwfq req\n");
        e.regs.mshr.paddr = A;
        e.regs.mshr.lru_way = 4;
        e.regs.gprs[3] = 1;
        e.sh.dir.write_block(A, 1, 4, O).unwrap();
        assert_eq!(run_to(&mut e, 1), 2);
        assert_eq!(e.regs.gprs[2], O.bits() as u64);
        let mut other = engine(2, "rde addr=req lce=r3 way=lru dst=r2\nwfq req\n");
        other.regs.mshr.paddr = A + 0x1_0000;
        other.regs.mshr.lru_way = 4;
        other.regs.gprs[3] = 1;
        other.regs.gprs[2] = 9;
        other.sh.dir.write_block(A, 1, 4, O).unwrap();
        run_to(&mut other, 1);
        assert_eq!(other.regs.gprs[2], I.bits() as u64);
    }

    #[test]
    fn invalidation_phase_is_two_cycles_per_sharer() {
        for sharers in 1..=3usize {
            let mut e = engine(4, "rdw addr=req lce=req lru_way=lru\ngad\ninv\nwfq req\n");
            e.regs.mshr.paddr = A;
            for l in 1..=sharers {
                e.sh.dir.write_block(A, l, 0, S).unwrap();
                e.sh.resp_q.push_back(CohResponse {
                    kind: RespKind::InvAck,
                    addr: A,
                    lce: l,
                    data: Vec::new(),
                });
            }
            let busy = run_to(&mut e, 3);
            assert_eq!(busy, 3 + 1 + 2 + 2 * sharers as u64, "S={sharers}");
            for l in 1..=sharers {
                assert_eq!(e.sh.dir.read_entry(A, l, 0).unwrap().0.state, I);
            }
            assert!(e.sh.resp_q.is_empty());
        }
    }

    #[test]
    fn empty_queue_stalls_without_busy() {
        let mut e = engine(2, "poph resp r1\nwfq req\n");
        let mut net = Network::new(NetConfig::default());
        for now in 0..5 {
            e.tick(now, &mut net).unwrap();
        }
        assert_eq!(e.pc(), 0);
        assert_eq!((e.sh.counters.busy, e.sh.counters.stall), (0, 5));
    }

    #[test]
    fn wait_bit_counts_as_stall() {
        let mut e = engine(2, "movi r1 0 wait\nwfq req\n");
        run_to(&mut e, 1);
        assert_eq!((e.sh.counters.busy, e.sh.counters.stall), (0, 1));
    }

    #[test]
    fn register_write_errors() {
        let mut net = Network::new(NetConfig::default());
        let mut e = engine(2, "movi nxt 9\nwfq req\n");
        assert!(matches!(
            e.tick(0, &mut net),
            Err(CceError::IllegalInstruction { pc: 0, .. })
        ));
        assert!(assemble("movi olce 1\n").is_err());
        let prog = MicroProgram {
            instrs: vec![MicroInstr::new(Op::Movi {
                rd: Reg::OwnerLce,
                imm: 1,
            })],
            ..Default::default()
        };
        let mut e = UcodeCce::new(CceConfig::single(2, 64, 8, 64), prog).unwrap();
        assert!(e.tick(0, &mut net).is_err());
    }

    #[test]
    fn pending_write_is_seen_by_following_read() {
        let mut e = engine(
            2,
            "wdp addr=req p=1\nrdp addr=req\nbf set pf pt\nbi end\nset: movi r1 7\nend: wfq req\n",
        );
        e.regs.mshr.paddr = A;
        run_to(&mut e, 5);
        assert_eq!(e.regs.gprs[1], 7);
        assert_eq!(e.sh.pending.count(e.sh.wg(A)), 1);
    }

    #[test]
    fn oversized_program_rejected() {
        let src = "movi r0 0\n".repeat(IMEM_SIZE + 1);
        let prog = assemble_with_room(&src);
        assert!(UcodeCce::new(CceConfig::single(2, 64, 8, 64), prog).is_err());
    }

    fn assemble_with_room(src: &str) -> MicroProgram {
        crate::ucode::asm::assemble_with(src, 4 * IMEM_SIZE).unwrap()
    }

    #[test]
    fn reset_restores_defaults() {
        let mut e = engine(2, "movi afr 0\nmovi r1 5\nwfq req\n");
        run_to(&mut e, 2);
        assert!(!e.regs.auto_fwd);
        e.reset();
        assert!(e.regs.auto_fwd);
        assert_eq!((e.pc(), e.regs.gprs[1]), (0, 0));
    }
}
