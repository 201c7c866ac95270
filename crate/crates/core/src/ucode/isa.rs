//! Coherence ISA: instruction set, operand selectors and the 32-bit encoding.
//!
//! Word layout (bit 31 is the MSB):
//!
//! | bits   | field                                    |
//! |--------|------------------------------------------|
//! | 31..26 | opcode                                   |
//! | 25     | predict taken                            |
//! | 24     | wait: cycles spent here count as stall   |
//! | 23..0  | operands, per format below               |
//!
//! Operand formats (field name: bits):
//!
//! - flag ops: `sf/sfz` flag 3..0; `andf/orf/nandf` f1 23..20, f2 19..16, rd 3..0; `notf` f1 23..20, rd 3..0
//! - flag branches: target 23..16, flag mask 13..0
//! - `rdp/clp` addr 23..20; `wdp` addr 23..20, up 0; `clr` addr 23..20, lce 19..16
//! - `rdw` addr 23..20, lce 19..16, way 15..12; `rde` adds rd 11..8
//! - `wde/wds` addr 23..20, lce 19..16, way 15..12, state 11..8
//! - `wfq` queue mask 2..0; `popq` queue 23..21, wp 0; `poph` queue 23..21, rd 3..0
//! - `pushq` memory-side 23, kind 22..19, addr 18..15, lce 14..11, way 10..7, state 6..3, wp 1, spec 0
//! - `specq` op 23..22, addr 19..16, state 3..0; `inv` own 0, all 1
//! - ALU: rd 23..20, ra 19..16, rb 15..12; `addi` imm 15..0; `movi` rd 23..20, imm 19..0
//! - `beq/bne` ra 23..20, rb 19..16, target 7..0; `beqi/bnei` ra 23..20, imm 19..8, target 7..0; `bi` target 7..0
//!
//! Immediates are two's complement.

use std::fmt;

use thiserror::Error;

use crate::mshr::Flag;
use crate::protocol::CoherenceState;

/// Default instruction memory size in words.
pub const IMEM_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unknown opcode {0}")]
    Opcode(u32),
    #[error("bad {field} field {value} in word {word:#010x}")]
    Field {
        field: &'static str,
        value: u32,
        word: u32,
    },
}

/// Register operands: eight GPRs plus special registers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reg {
    Gpr(u8),
    /// MSHR next state.
    Nxt,
    /// Coherence state register.
    Csr,
    /// Auto-forward control.
    Afr,
    OwnerLce,
    OwnerWay,
    OwnerState,
    ReqLce,
    /// Number of caches the directory tracks.
    NumLce,
}

impl Reg {
    pub fn code(self) -> u32 {
        match self {
            Reg::Gpr(i) => i as u32,
            Reg::Nxt => 8,
            Reg::Csr => 9,
            Reg::Afr => 10,
            Reg::OwnerLce => 11,
            Reg::OwnerWay => 12,
            Reg::OwnerState => 13,
            Reg::ReqLce => 14,
            Reg::NumLce => 15,
        }
    }

    pub fn from_code(c: u32) -> Reg {
        match c & 0xf {
            i @ 0..=7 => Reg::Gpr(i as u8),
            8 => Reg::Nxt,
            9 => Reg::Csr,
            10 => Reg::Afr,
            11 => Reg::OwnerLce,
            12 => Reg::OwnerWay,
            13 => Reg::OwnerState,
            14 => Reg::ReqLce,
            _ => Reg::NumLce,
        }
    }

    pub fn writable(self) -> bool {
        matches!(self, Reg::Gpr(_) | Reg::Nxt | Reg::Csr | Reg::Afr)
    }

    pub fn name(self) -> String {
        match self {
            Reg::Gpr(i) => format!("r{i}"),
            Reg::Nxt => "nxt".into(),
            Reg::Csr => "csr".into(),
            Reg::Afr => "afr".into(),
            Reg::OwnerLce => "olce".into(),
            Reg::OwnerWay => "oway".into(),
            Reg::OwnerState => "ostate".into(),
            Reg::ReqLce => "rlce".into(),
            Reg::NumLce => "nlce".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Reg> {
        (0..16).map(Reg::from_code).find(|r| r.name() == s)
    }
}

/// Address select.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AddrSel {
    /// Request address.
    Req,
    /// Address of the requester's LRU victim.
    Lru,
    Gpr(u8),
}

/// LCE select.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LceSel {
    Req,
    Owner,
    Gpr(u8),
}

/// Way select.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WaySel {
    /// Way named by the request (the requester's LRU way).
    Lru,
    Owner,
    Gpr(u8),
}

fn sel_code(gpr: Option<u8>, named: u32) -> u32 {
    gpr.map_or(named, |g| 2 + g as u32)
}

macro_rules! selector {
    ($t:ident, $a:ident = $an:literal, $b:ident = $bn:literal) => {
        impl $t {
            pub fn code(self) -> u32 {
                match self {
                    $t::$a => sel_code(None, 0),
                    $t::$b => sel_code(None, 1),
                    $t::Gpr(g) => sel_code(Some(g), 0),
                }
            }

            pub fn from_code(c: u32) -> Option<$t> {
                match c {
                    0 => Some($t::$a),
                    1 => Some($t::$b),
                    2..=9 => Some($t::Gpr((c - 2) as u8)),
                    _ => None,
                }
            }

            pub fn name(self) -> String {
                match self {
                    $t::$a => $an.into(),
                    $t::$b => $bn.into(),
                    $t::Gpr(g) => format!("r{g}"),
                }
            }

            pub fn parse(s: &str) -> Option<$t> {
                (0..10).filter_map($t::from_code).find(|x| x.name() == s)
            }
        }
    };
}

selector!(AddrSel, Req = "req", Lru = "lru");
selector!(LceSel, Req = "req", Owner = "owner");
selector!(WaySel, Lru = "lru", Owner = "owner");

/// State operand: an immediate or a register-held state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateSel {
    Imm(CoherenceState),
    Nxt,
    Csr,
    Owner,
}

impl StateSel {
    pub fn code(self) -> u32 {
        match self {
            StateSel::Imm(s) => s.bits() as u32,
            StateSel::Nxt => 8,
            StateSel::Csr => 9,
            StateSel::Owner => 10,
        }
    }

    pub fn from_code(c: u32) -> Option<StateSel> {
        match c {
            8 => Some(StateSel::Nxt),
            9 => Some(StateSel::Csr),
            10 => Some(StateSel::Owner),
            _ => CoherenceState::from_bits(c as u8).map(StateSel::Imm),
        }
    }

    pub fn name(self) -> String {
        match self {
            StateSel::Imm(s) => s.to_string(),
            StateSel::Nxt => "nxt".into(),
            StateSel::Csr => "csr".into(),
            StateSel::Owner => "owner".into(),
        }
    }

    pub fn parse(s: &str) -> Option<StateSel> {
        match s {
            "nxt" => Some(StateSel::Nxt),
            "csr" => Some(StateSel::Csr),
            "owner" => Some(StateSel::Owner),
            _ if s.len() == 1 => s.parse().ok().map(StateSel::Imm),
            _ => None,
        }
    }
}

/// Inbound queues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InQueue {
    Req,
    Resp,
    MemResp,
}

impl InQueue {
    pub const ALL: [InQueue; 3] = [InQueue::Req, InQueue::Resp, InQueue::MemResp];

    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(c: u32) -> Option<InQueue> {
        InQueue::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            InQueue::Req => "req",
            InQueue::Resp => "resp",
            InQueue::MemResp => "memresp",
        }
    }

    pub fn parse(s: &str) -> Option<InQueue> {
        InQueue::ALL.into_iter().find(|q| q.name() == s)
    }
}

/// Message kinds `pushq` can build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PushKind {
    Inv,
    StW,
    Wb,
    Tr,
    StWb,
    StTr,
    StTrWb,
    /// Block read.
    MemRd,
    /// Block write with the data of the response at the head of `resp`.
    MemWr,
    /// Uncached access carrying the MSHR's size and data.
    MemUc,
}

impl PushKind {
    pub const ALL: [PushKind; 10] = [
        PushKind::Inv,
        PushKind::StW,
        PushKind::Wb,
        PushKind::Tr,
        PushKind::StWb,
        PushKind::StTr,
        PushKind::StTrWb,
        PushKind::MemRd,
        PushKind::MemWr,
        PushKind::MemUc,
    ];

    pub fn is_mem(self) -> bool {
        matches!(self, PushKind::MemRd | PushKind::MemWr | PushKind::MemUc)
    }

    pub fn code(self) -> u32 {
        PushKind::ALL.iter().position(|k| *k == self).unwrap() as u32
    }

    pub fn name(self) -> &'static str {
        match self {
            PushKind::Inv => "inv",
            PushKind::StW => "stw",
            PushKind::Wb => "wb",
            PushKind::Tr => "tr",
            PushKind::StWb => "stwb",
            PushKind::StTr => "sttr",
            PushKind::StTrWb => "sttrwb",
            PushKind::MemRd => "rd",
            PushKind::MemWr => "wr",
            PushKind::MemUc => "uc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Push {
    pub kind: PushKind,
    pub addr: AddrSel,
    pub lce: LceSel,
    pub way: WaySel,
    pub state: StateSel,
    pub wp: bool,
    pub spec: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpecOp {
    Set,
    Unset,
    Squash,
    Fwd,
}

impl SpecOp {
    pub const ALL: [SpecOp; 4] = [SpecOp::Set, SpecOp::Unset, SpecOp::Squash, SpecOp::Fwd];

    pub fn name(self) -> &'static str {
        match self {
            SpecOp::Set => "set",
            SpecOp::Unset => "unset",
            SpecOp::Squash => "squash",
            SpecOp::Fwd => "fwd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlagOp {
    And,
    Or,
    Nand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlagBranch {
    /// All listed flags set.
    All,
    /// All listed flags clear.
    None,
    /// Any listed flag set.
    Any,
    /// Any listed flag clear.
    NotAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl AluOp {
    pub const ALL: [AluOp; 7] = [
        AluOp::Add,
        AluOp::Sub,
        AluOp::And,
        AluOp::Or,
        AluOp::Xor,
        AluOp::Shl,
        AluOp::Shr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::And => "and",
            AluOp::Or => "or",
            AluOp::Xor => "xor",
            AluOp::Shl => "shl",
            AluOp::Shr => "shr",
        }
    }

    pub fn apply(self, a: u64, b: u64) -> u64 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
            AluOp::Shl => a.wrapping_shl(b as u32),
            AluOp::Shr => a.wrapping_shr(b as u32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Sf(Flag),
    Sfz(Flag),
    FlagLogic {
        op: FlagOp,
        a: Flag,
        b: Flag,
        rd: Reg,
    },
    Notf {
        a: Flag,
        rd: Reg,
    },
    Bf {
        cond: FlagBranch,
        target: u8,
        mask: u16,
    },
    Rdp {
        addr: AddrSel,
    },
    Rdw {
        addr: AddrSel,
        lce: LceSel,
        way: WaySel,
    },
    /// Tag-checked entry read: `rd` gets the entry's state when its tag
    /// matches `addr`, otherwise I.
    Rde {
        addr: AddrSel,
        lce: LceSel,
        way: WaySel,
        rd: Reg,
    },
    Wdp {
        addr: AddrSel,
        up: bool,
    },
    Clp {
        addr: AddrSel,
    },
    Clr {
        addr: AddrSel,
        lce: LceSel,
    },
    Wde {
        addr: AddrSel,
        lce: LceSel,
        way: WaySel,
        state: StateSel,
    },
    Wds {
        addr: AddrSel,
        lce: LceSel,
        way: WaySel,
        state: StateSel,
    },
    Gad,
    Wfq {
        mask: u8,
    },
    Pushq(Push),
    Popq {
        q: InQueue,
        wp: bool,
    },
    Poph {
        q: InQueue,
        rd: Reg,
    },
    Specq {
        op: SpecOp,
        addr: AddrSel,
        state: StateSel,
    },
    /// Invalidates S copies held by caches other than the requester. `all`
    /// widens the set to S and F copies in every cache; `own` adds the owner.
    Inv {
        own: bool,
        all: bool,
    },
    Alu {
        op: AluOp,
        rd: Reg,
        ra: Reg,
        rb: Reg,
    },
    Addi {
        rd: Reg,
        ra: Reg,
        imm: i16,
    },
    Mov {
        rd: Reg,
        ra: Reg,
    },
    Movi {
        rd: Reg,
        imm: i32,
    },
    Beq {
        ne: bool,
        ra: Reg,
        rb: Reg,
        target: u8,
    },
    Beqi {
        ne: bool,
        ra: Reg,
        imm: i16,
        target: u8,
    },
    Bi {
        target: u8,
    },
}

/// One instruction with its static prediction and stall-accounting bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MicroInstr {
    pub op: Op,
    pub predict_taken: bool,
    pub wait: bool,
}

impl MicroInstr {
    pub fn new(op: Op) -> Self {
        MicroInstr {
            op,
            predict_taken: matches!(op, Op::Bi { .. }),
            wait: false,
        }
    }

    pub fn branch_target(&self) -> Option<u8> {
        match self.op {
            Op::Bf { target, .. }
            | Op::Beq { target, .. }
            | Op::Beqi { target, .. }
            | Op::Bi { target } => Some(target),
            _ => None,
        }
    }

    pub fn mnemonic(&self) -> &'static str {
        match self.op {
            Op::Sf(_) => "sf",
            Op::Sfz(_) => "sfz",
            Op::FlagLogic {
                op: FlagOp::And, ..
            } => "andf",
            Op::FlagLogic { op: FlagOp::Or, .. } => "orf",
            Op::FlagLogic {
                op: FlagOp::Nand, ..
            } => "nandf",
            Op::Notf { .. } => "notf",
            Op::Bf { cond, .. } => match cond {
                FlagBranch::All => "bf",
                FlagBranch::None => "bfnot",
                FlagBranch::Any => "bfz",
                FlagBranch::NotAll => "bfnz",
            },
            Op::Rdp { .. } => "rdp",
            Op::Rdw { .. } => "rdw",
            Op::Rde { .. } => "rde",
            Op::Wdp { .. } => "wdp",
            Op::Clp { .. } => "clp",
            Op::Clr { .. } => "clr",
            Op::Wde { .. } => "wde",
            Op::Wds { .. } => "wds",
            Op::Gad => "gad",
            Op::Wfq { .. } => "wfq",
            Op::Pushq(_) => "pushq",
            Op::Popq { .. } => "popq",
            Op::Poph { .. } => "poph",
            Op::Specq { .. } => "specq",
            Op::Inv { .. } => "inv",
            Op::Alu { op, .. } => op.name(),
            Op::Addi { .. } => "addi",
            Op::Mov { .. } => "mov",
            Op::Movi { .. } => "movi",
            Op::Beq { ne: false, .. } => "beq",
            Op::Beq { ne: true, .. } => "bne",
            Op::Beqi { ne: false, .. } => "beqi",
            Op::Beqi { ne: true, .. } => "bnei",
            Op::Bi { .. } => "bi",
        }
    }
}

const OP_SF: u32 = 0;
const OP_SFZ: u32 = 1;
const OP_ANDF: u32 = 2;
const OP_ORF: u32 = 3;
const OP_NANDF: u32 = 4;
const OP_NOTF: u32 = 5;
const OP_BF: u32 = 6; // 6..=9 by condition
const OP_RDP: u32 = 10;
const OP_RDW: u32 = 11;
const OP_RDE: u32 = 12;
const OP_WDP: u32 = 13;
const OP_CLP: u32 = 14;
const OP_CLR: u32 = 15;
const OP_WDE: u32 = 16;
const OP_WDS: u32 = 17;
const OP_GAD: u32 = 18;
const OP_WFQ: u32 = 19;
const OP_PUSHQ: u32 = 20;
const OP_POPQ: u32 = 21;
const OP_POPH: u32 = 22;
const OP_SPECQ: u32 = 23;
const OP_INV: u32 = 24;
const OP_ALU: u32 = 25; // 25..=31 by AluOp
const OP_ADDI: u32 = 32;
const OP_MOV: u32 = 33;
const OP_MOVI: u32 = 34;
const OP_BEQ: u32 = 35;
const OP_BNE: u32 = 36;
const OP_BEQI: u32 = 37;
const OP_BNEI: u32 = 38;
const OP_BI: u32 = 39;

fn field(w: u32, hi: u32, lo: u32) -> u32 {
    (w >> lo) & ((1 << (hi - lo + 1)) - 1)
}

fn sext(v: u32, bits: u32) -> i32 {
    ((v << (32 - bits)) as i32) >> (32 - bits)
}

fn flag_from(i: u32, w: u32) -> Result<Flag, DecodeError> {
    Flag::ALL
        .get(i as usize)
        .copied()
        .ok_or(DecodeError::Field {
            field: "flag",
            value: i,
            word: w,
        })
}

fn flag_idx(f: Flag) -> u32 {
    f as u32
}

pub fn encode(i: &MicroInstr) -> u32 {
    let (opc, body) = match i.op {
        Op::Sf(f) => (OP_SF, flag_idx(f)),
        Op::Sfz(f) => (OP_SFZ, flag_idx(f)),
        Op::FlagLogic { op, a, b, rd } => (
            match op {
                FlagOp::And => OP_ANDF,
                FlagOp::Or => OP_ORF,
                FlagOp::Nand => OP_NANDF,
            },
            flag_idx(a) << 20 | flag_idx(b) << 16 | rd.code(),
        ),
        Op::Notf { a, rd } => (OP_NOTF, flag_idx(a) << 20 | rd.code()),
        Op::Bf { cond, target, mask } => (OP_BF + cond as u32, (target as u32) << 16 | mask as u32),
        Op::Rdp { addr } => (OP_RDP, addr.code() << 20),
        Op::Rdw { addr, lce, way } => (
            OP_RDW,
            addr.code() << 20 | lce.code() << 16 | way.code() << 12,
        ),
        Op::Rde { addr, lce, way, rd } => (
            OP_RDE,
            addr.code() << 20 | lce.code() << 16 | way.code() << 12 | rd.code() << 8,
        ),
        Op::Wdp { addr, up } => (OP_WDP, addr.code() << 20 | up as u32),
        Op::Clp { addr } => (OP_CLP, addr.code() << 20),
        Op::Clr { addr, lce } => (OP_CLR, addr.code() << 20 | lce.code() << 16),
        Op::Wde {
            addr,
            lce,
            way,
            state,
        } => (
            OP_WDE,
            addr.code() << 20 | lce.code() << 16 | way.code() << 12 | state.code() << 8,
        ),
        Op::Wds {
            addr,
            lce,
            way,
            state,
        } => (
            OP_WDS,
            addr.code() << 20 | lce.code() << 16 | way.code() << 12 | state.code() << 8,
        ),
        Op::Gad => (OP_GAD, 0),
        Op::Wfq { mask } => (OP_WFQ, mask as u32),
        Op::Pushq(p) => (
            OP_PUSHQ,
            (p.kind.is_mem() as u32) << 23
                | p.kind.code() << 19
                | p.addr.code() << 15
                | p.lce.code() << 11
                | p.way.code() << 7
                | p.state.code() << 3
                | (p.wp as u32) << 1
                | p.spec as u32,
        ),
        Op::Popq { q, wp } => (OP_POPQ, q.code() << 21 | wp as u32),
        Op::Poph { q, rd } => (OP_POPH, q.code() << 21 | rd.code()),
        Op::Specq { op, addr, state } => (
            OP_SPECQ,
            (op as u32) << 22 | addr.code() << 16 | state.code(),
        ),
        Op::Inv { own, all } => (OP_INV, (all as u32) << 1 | own as u32),
        Op::Alu { op, rd, ra, rb } => (
            OP_ALU + op as u32,
            rd.code() << 20 | ra.code() << 16 | rb.code() << 12,
        ),
        Op::Addi { rd, ra, imm } => (
            OP_ADDI,
            rd.code() << 20 | ra.code() << 16 | (imm as u16 as u32),
        ),
        Op::Mov { rd, ra } => (OP_MOV, rd.code() << 20 | ra.code() << 16),
        Op::Movi { rd, imm } => (OP_MOVI, rd.code() << 20 | (imm as u32 & 0xf_ffff)),
        Op::Beq { ne, ra, rb, target } => (
            if ne { OP_BNE } else { OP_BEQ },
            ra.code() << 20 | rb.code() << 16 | target as u32,
        ),
        Op::Beqi {
            ne,
            ra,
            imm,
            target,
        } => (
            if ne { OP_BNEI } else { OP_BEQI },
            ra.code() << 20 | ((imm as u32) & 0xfff) << 8 | target as u32,
        ),
        Op::Bi { target } => (OP_BI, target as u32),
    };
    opc << 26 | (i.predict_taken as u32) << 25 | (i.wait as u32) << 24 | body
}

pub fn decode(w: u32) -> Result<MicroInstr, DecodeError> {
    let opc = w >> 26;
    let bad = |field: &'static str, value: u32| DecodeError::Field {
        field,
        value,
        word: w,
    };
    let addr = |hi: u32| {
        AddrSel::from_code(field(w, hi, hi - 3)).ok_or_else(|| bad("addr", field(w, hi, hi - 3)))
    };
    let lce = |hi: u32| {
        LceSel::from_code(field(w, hi, hi - 3)).ok_or_else(|| bad("lce", field(w, hi, hi - 3)))
    };
    let way = |hi: u32| {
        WaySel::from_code(field(w, hi, hi - 3)).ok_or_else(|| bad("way", field(w, hi, hi - 3)))
    };
    let state = |hi: u32| {
        StateSel::from_code(field(w, hi, hi - 3)).ok_or_else(|| bad("state", field(w, hi, hi - 3)))
    };
    let reg = |hi: u32| Reg::from_code(field(w, hi, hi - 3));
    let queue =
        || InQueue::from_code(field(w, 23, 21)).ok_or_else(|| bad("queue", field(w, 23, 21)));
    let op = match opc {
        OP_SF => Op::Sf(flag_from(field(w, 3, 0), w)?),
        OP_SFZ => Op::Sfz(flag_from(field(w, 3, 0), w)?),
        OP_ANDF | OP_ORF | OP_NANDF => Op::FlagLogic {
            op: [FlagOp::And, FlagOp::Or, FlagOp::Nand][(opc - OP_ANDF) as usize],
            a: flag_from(field(w, 23, 20), w)?,
            b: flag_from(field(w, 19, 16), w)?,
            rd: reg(3),
        },
        OP_NOTF => Op::Notf {
            a: flag_from(field(w, 23, 20), w)?,
            rd: reg(3),
        },
        6..=9 => {
            let mask = field(w, 13, 0) as u16;
            if mask == 0 || field(w, 15, 14) != 0 {
                return Err(bad("flag mask", mask as u32));
            }
            Op::Bf {
                cond: [
                    FlagBranch::All,
                    FlagBranch::None,
                    FlagBranch::Any,
                    FlagBranch::NotAll,
                ][(opc - OP_BF) as usize],
                target: field(w, 23, 16) as u8,
                mask,
            }
        }
        OP_RDP => Op::Rdp { addr: addr(23)? },
        OP_RDW => Op::Rdw {
            addr: addr(23)?,
            lce: lce(19)?,
            way: way(15)?,
        },
        OP_RDE => Op::Rde {
            addr: addr(23)?,
            lce: lce(19)?,
            way: way(15)?,
            rd: reg(11),
        },
        OP_WDP => Op::Wdp {
            addr: addr(23)?,
            up: field(w, 0, 0) == 1,
        },
        OP_CLP => Op::Clp { addr: addr(23)? },
        OP_CLR => Op::Clr {
            addr: addr(23)?,
            lce: lce(19)?,
        },
        OP_WDE | OP_WDS => {
            let (a, l, wy, s) = (addr(23)?, lce(19)?, way(15)?, state(11)?);
            if opc == OP_WDE {
                Op::Wde {
                    addr: a,
                    lce: l,
                    way: wy,
                    state: s,
                }
            } else {
                Op::Wds {
                    addr: a,
                    lce: l,
                    way: wy,
                    state: s,
                }
            }
        }
        OP_GAD => Op::Gad,
        OP_WFQ => {
            let mask = field(w, 2, 0) as u8;
            if mask == 0 {
                return Err(bad("queue mask", 0));
            }
            Op::Wfq { mask }
        }
        OP_PUSHQ => {
            let kind = *PushKind::ALL
                .get(field(w, 22, 19) as usize)
                .ok_or_else(|| bad("message kind", field(w, 22, 19)))?;
            if kind.is_mem() != (field(w, 23, 23) == 1) {
                return Err(bad("queue", field(w, 23, 23)));
            }
            Op::Pushq(Push {
                kind,
                addr: addr(18)?,
                lce: lce(14)?,
                way: way(10)?,
                state: state(6)?,
                wp: field(w, 1, 1) == 1,
                spec: field(w, 0, 0) == 1,
            })
        }
        OP_POPQ => Op::Popq {
            q: queue()?,
            wp: field(w, 0, 0) == 1,
        },
        OP_POPH => Op::Poph {
            q: queue()?,
            rd: reg(3),
        },
        OP_SPECQ => Op::Specq {
            op: SpecOp::ALL[field(w, 23, 22) as usize],
            addr: addr(19)?,
            state: state(3)?,
        },
        OP_INV => Op::Inv {
            own: field(w, 0, 0) == 1,
            all: field(w, 1, 1) == 1,
        },
        25..=31 => Op::Alu {
            op: AluOp::ALL[(opc - OP_ALU) as usize],
            rd: reg(23),
            ra: reg(19),
            rb: reg(15),
        },
        OP_ADDI => Op::Addi {
            rd: reg(23),
            ra: reg(19),
            imm: field(w, 15, 0) as u16 as i16,
        },
        OP_MOV => Op::Mov {
            rd: reg(23),
            ra: reg(19),
        },
        OP_MOVI => Op::Movi {
            rd: reg(23),
            imm: sext(field(w, 19, 0), 20),
        },
        OP_BEQ | OP_BNE => Op::Beq {
            ne: opc == OP_BNE,
            ra: reg(23),
            rb: reg(19),
            target: field(w, 7, 0) as u8,
        },
        OP_BEQI | OP_BNEI => Op::Beqi {
            ne: opc == OP_BNEI,
            ra: reg(23),
            imm: sext(field(w, 19, 8), 12) as i16,
            target: field(w, 7, 0) as u8,
        },
        OP_BI => Op::Bi {
            target: field(w, 7, 0) as u8,
        },
        other => return Err(DecodeError::Opcode(other)),
    };
    Ok(MicroInstr {
        op,
        predict_taken: field(w, 25, 25) == 1,
        wait: field(w, 24, 24) == 1,
    })
}

/// Flags named in a branch mask, in encoding order.
pub fn mask_flags(mask: u16) -> Vec<Flag> {
    Flag::ALL
        .into_iter()
        .filter(|f| mask & f.bit() != 0)
        .collect()
}

/// Named immediates accepted wherever an immediate is.
pub const SYMBOLS: [(&str, i32); 10] = [
    ("I", 0),
    ("S", 1),
    ("E", 2),
    ("M", 3),
    ("O", 4),
    ("F", 5),
    ("INVACK", 0),
    ("COHACK", 1),
    ("NULLWB", 2),
    ("DIRTYWB", 3),
];

impl fmt::Display for MicroInstr {
    /// Assembly text with branch targets as absolute pcs (`@n`).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::asm::render(self, &|t| format!("@{t}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let samples = [
            MicroInstr::new(Op::Sf(Flag::Pending)),
            MicroInstr {
                op: Op::Bf {
                    cond: FlagBranch::Any,
                    target: 200,
                    mask: Flags(0x3fff).0,
                },
                predict_taken: true,
                wait: true,
            },
            MicroInstr::new(Op::Pushq(Push {
                kind: PushKind::MemRd,
                addr: AddrSel::Req,
                lce: LceSel::Req,
                way: WaySel::Lru,
                state: StateSel::Imm(CoherenceState::E),
                wp: true,
                spec: true,
            })),
            MicroInstr::new(Op::Beqi {
                ne: true,
                ra: Reg::Gpr(3),
                imm: -5,
                target: 17,
            }),
            MicroInstr::new(Op::Movi {
                rd: Reg::Nxt,
                imm: -300_000,
            }),
            MicroInstr::new(Op::Addi {
                rd: Reg::Gpr(1),
                ra: Reg::Gpr(1),
                imm: -1,
            }),
            MicroInstr::new(Op::Wds {
                addr: AddrSel::Gpr(7),
                lce: LceSel::Owner,
                way: WaySel::Owner,
                state: StateSel::Nxt,
            }),
        ];
        for s in samples {
            assert_eq!(decode(encode(&s)).unwrap(), s, "{s:?}");
        }
    }

    use crate::mshr::Flags;

    #[test]
    fn bad_words_rejected() {
        assert!(matches!(decode(63 << 26), Err(DecodeError::Opcode(63))));
        assert!(decode(OP_BF << 26).is_err(), "empty flag mask");
        assert!(decode(OP_RDP << 26 | 12 << 20).is_err());
    }
}
