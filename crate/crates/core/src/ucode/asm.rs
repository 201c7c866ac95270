//! Assembler, disassembler and binary container for microcode programs.
//!
//! Source is line oriented: `label:` definitions, one instruction per line,
//! `#` comments. Instructions may end with `pt` (predict taken) and `wait`
//! (count the instruction's cycles as stall). Pseudo-ops:
//!
//! | pseudo      | expansion          |
//! |-------------|--------------------|
//! | `nop`       | `or r0 r0 r0`      |
//! | `jmp L`     | `bi L`             |
//! | `inc rd`    | `addi rd rd 1`     |
//! | `dec rd`    | `addi rd rd -1`    |
//! | `zero rd`   | `movi rd 0`        |
//!
//! Binary files are `BRUC`, a little-endian u16 version, a u16 of zero, a
//! u32 word count and the instruction words, all little-endian.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use super::isa::*;
use crate::mshr::Flag;

pub const MAGIC: &[u8; 4] = b"BRUC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.msg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
    Diagnostics(Vec<Diagnostic>),
    #[error("program has {len} instructions, instruction memory holds {max}")]
    ProgramTooLarge { len: usize, max: usize },
    #[error("bad binary: {0}")]
    Binary(String),
    #[error("word {index}: {source}")]
    Decode { index: usize, source: DecodeError },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MicroProgram {
    pub instrs: Vec<MicroInstr>,
    pub labels: BTreeMap<String, usize>,
    /// Source line of each instruction; empty for decoded binaries.
    pub source_map: Vec<usize>,
}

impl MicroProgram {
    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn label(&self, name: &str) -> Option<usize> {
        self.labels.get(name).copied()
    }

    pub fn words(&self) -> Vec<u32> {
        self.instrs.iter().map(encode).collect()
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for w in self.words() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<MicroProgram, AsmError> {
        let bin = |m: &str| AsmError::Binary(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bin("missing magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(AsmError::Binary(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bytes.len() != 12 + 4 * count {
            return Err(bin("length does not match word count"));
        }
        let instrs = bytes[12..]
            .chunks_exact(4)
            .enumerate()
            .map(|(index, c)| {
                decode(u32::from_le_bytes(c.try_into().unwrap()))
                    .map_err(|source| AsmError::Decode { index, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let p = MicroProgram {
            instrs,
            ..Default::default()
        };
        p.check(IMEM_SIZE)?;
        Ok(p)
    }

    /// Size and branch-target checks against an instruction memory.
    pub fn check(&self, imem: usize) -> Result<(), AsmError> {
        if self.len() > imem {
            return Err(AsmError::ProgramTooLarge {
                len: self.len(),
                max: imem,
            });
        }
        for (pc, i) in self.instrs.iter().enumerate() {
            if let Some(t) = i.branch_target() {
                if t as usize >= self.len() {
                    return Err(AsmError::Binary(format!(
                        "pc {pc}: branch target {t} outside program"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Renders one instruction; `target` names branch targets.
pub fn render(i: &MicroInstr, target: &dyn Fn(u8) -> String) -> String {
    let flags = |m: u16| {
        mask_flags(m)
            .iter()
            .map(|f| f.mnemonic())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = match i.op {
        Op::Sf(f) | Op::Sfz(f) => format!("{} {}", i.mnemonic(), f),
        Op::FlagLogic { a, b, rd, .. } => format!("{} {a} {b} {}", i.mnemonic(), rd.name()),
        Op::Notf { a, rd } => format!("notf {a} {}", rd.name()),
        Op::Bf {
            target: t, mask, ..
        } => format!("{} {} {}", i.mnemonic(), target(t), flags(mask)),
        Op::Rdp { addr } => format!("rdp addr={}", addr.name()),
        Op::Rdw { addr, lce, way } => format!(
            "rdw addr={} lce={} lru_way={}",
            addr.name(),
            lce.name(),
            way.name()
        ),
        Op::Rde { addr, lce, way, rd } => format!(
            "rde addr={} lce={} way={} dst={}",
            addr.name(),
            lce.name(),
            way.name(),
            rd.name()
        ),
        Op::Wdp { addr, up } => format!("wdp addr={} p={}", addr.name(), up as u8),
        Op::Clp { addr } => format!("clp addr={}", addr.name()),
        Op::Clr { addr, lce } => format!("clr addr={} lce={}", addr.name(), lce.name()),
        Op::Wde {
            addr,
            lce,
            way,
            state,
        }
        | Op::Wds {
            addr,
            lce,
            way,
            state,
        } => format!(
            "{} addr={} lce={} way={} state={}",
            i.mnemonic(),
            addr.name(),
            lce.name(),
            way.name(),
            state.name()
        ),
        Op::Gad => "gad".into(),
        Op::Wfq { mask } => format!(
            "wfq {}",
            InQueue::ALL
                .iter()
                .filter(|q| mask & (1 << q.code()) != 0)
                .map(|q| q.name())
                .collect::<Vec<_>>()
                .join(" ")
        ),
        Op::Pushq(p) => {
            let mut s = format!(
                "pushq {} {} addr={} lce={} way={} state={}",
                if p.kind.is_mem() { "memcmd" } else { "cmd" },
                p.kind.name(),
                p.addr.name(),
                p.lce.name(),
                p.way.name(),
                p.state.name()
            );
            if p.wp {
                s.push_str(" wp");
            }
            if p.spec {
                s.push_str(" spec");
            }
            s
        }
        Op::Popq { q, wp } => format!("popq {}{}", q.name(), if wp { " wp" } else { "" }),
        Op::Poph { q, rd } => format!("poph {} {}", q.name(), rd.name()),
        Op::Specq { op, addr, state } => match op {
            SpecOp::Set | SpecOp::Fwd => format!(
                "specq {} addr={} state={}",
                op.name(),
                addr.name(),
                state.name()
            ),
            _ => format!("specq {} addr={}", op.name(), addr.name()),
        },
        Op::Inv { own, all } => {
            let mut s = String::from("inv");
            if own {
                s.push_str(" own");
            }
            if all {
                s.push_str(" all");
            }
            s
        }
        Op::Alu { rd, ra, rb, .. } => {
            format!("{} {} {} {}", i.mnemonic(), rd.name(), ra.name(), rb.name())
        }
        Op::Addi { rd, ra, imm } => format!("addi {} {} {imm}", rd.name(), ra.name()),
        Op::Mov { rd, ra } => format!("mov {} {}", rd.name(), ra.name()),
        Op::Movi { rd, imm } => format!("movi {} {imm}", rd.name()),
        Op::Beq {
            ra, rb, target: t, ..
        } => format!("{} {} {} {}", i.mnemonic(), ra.name(), rb.name(), target(t)),
        Op::Beqi {
            ra, imm, target: t, ..
        } => format!("{} {} {imm} {}", i.mnemonic(), ra.name(), target(t)),
        Op::Bi { target: t } => format!("bi {}", target(t)),
    };
    let conditional = i.branch_target().is_some() && !matches!(i.op, Op::Bi { .. });
    if conditional && i.predict_taken {
        s.push_str(" pt");
    }
    if i.wait {
        s.push_str(" wait");
    }
    s
}

/// Source text with `L<pc>` labels at every branch target.
pub fn disassemble(p: &MicroProgram) -> String {
    let mut names: HashMap<usize, String> = HashMap::new();
    for (name, &pc) in &p.labels {
        names.entry(pc).or_insert_with(|| name.clone());
    }
    for i in &p.instrs {
        if let Some(t) = i.branch_target() {
            names.entry(t as usize).or_insert_with(|| format!("L{t}"));
        }
    }
    let mut out = String::new();
    for (pc, i) in p.instrs.iter().enumerate() {
        if let Some(n) = names.get(&pc) {
            out.push_str(n);
            out.push_str(":\n");
        }
        let tname = |t: u8| {
            names
                .get(&(t as usize))
                .cloned()
                .unwrap_or_else(|| format!("@{t}"))
        };
        out.push_str("    ");
        out.push_str(&render(i, &tname));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Tok<'a> {
    text: &'a str,
    col: usize,
}

fn tokenize(line: &str) -> Vec<Tok<'_>> {
    let mut toks = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() || ch == ',' {
            if let Some(s) = start.take() {
                toks.push(Tok {
                    text: &line[s..i],
                    col: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        toks.push(Tok {
            text: &line[s..],
            col: s + 1,
        });
    }
    toks
}

struct LineCx<'a> {
    line: usize,
    toks: Vec<Tok<'a>>,
    labels: &'a HashMap<String, usize>,
    /// Column of the mnemonic, for errors about missing operands.
    col: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl<'a> LineCx<'a> {
    fn err(&self, col: usize, msg: impl Into<String>) -> Diagnostic {
        Diagnostic {
            line: self.line,
            col,
            msg: msg.into(),
        }
    }

    fn positional(&self, n: usize, what: &str) -> PResult<Tok<'a>> {
        self.toks
            .iter()
            .filter(|t| !t.text.contains('='))
            .nth(n)
            .copied()
            .ok_or_else(|| self.err(self.col, format!("missing {what}")))
    }

    fn key(&self, key: &str) -> Option<(Tok<'a>, &'a str)> {
        self.toks.iter().find_map(|t| {
            let (k, v) = t.text.split_once('=')?;
            (k == key).then_some((*t, v))
        })
    }

    fn keyed<T>(
        &self,
        key: &str,
        parse: impl Fn(&str) -> Option<T>,
        default: Option<T>,
    ) -> PResult<T> {
        match self.key(key) {
            Some((t, v)) => {
                parse(v).ok_or_else(|| self.err(t.col, format!("bad {key} operand `{v}`")))
            }
            None => default.ok_or_else(|| self.err(self.col, format!("missing {key}="))),
        }
    }

    fn reg(&self, t: Tok<'_>, write: bool) -> PResult<Reg> {
        let r = Reg::parse(t.text)
            .ok_or_else(|| self.err(t.col, format!("bad register `{}`", t.text)))?;
        if write && !r.writable() {
            return Err(self.err(t.col, format!("register `{}` is read-only", t.text)));
        }
        Ok(r)
    }

    fn flag(&self, t: Tok<'_>) -> PResult<Flag> {
        t.text.parse::<Flag>().map_err(|e| self.err(t.col, e))
    }

    fn imm(&self, t: Tok<'_>, bits: u32) -> PResult<i32> {
        let s = t.text;
        let v: Option<i64> = SYMBOLS
            .iter()
            .find(|(n, _)| *n == s)
            .map(|(_, v)| *v as i64)
            .or_else(|| {
                let (neg, body) = s.strip_prefix('-').map_or((false, s), |b| (true, b));
                let v = match body.strip_prefix("0x") {
                    Some(h) => i64::from_str_radix(h, 16).ok(),
                    None => body.parse::<i64>().ok(),
                }?;
                Some(if neg { -v } else { v })
            });
        let v = v.ok_or_else(|| self.err(t.col, format!("bad immediate `{s}`")))?;
        let lim = 1i64 << (bits - 1);
        if v < -lim || v >= lim {
            return Err(self.err(t.col, format!("immediate {v} does not fit in {bits} bits")));
        }
        Ok(v as i32)
    }

    fn target(&self, t: Tok<'_>) -> PResult<u8> {
        let pc = match t.text.strip_prefix('@') {
            Some(n) => n.parse::<usize>().ok(),
            None => self.labels.get(t.text).copied(),
        }
        .ok_or_else(|| self.err(t.col, format!("unresolved label `{}`", t.text)))?;
        u8::try_from(pc)
            .map_err(|_| self.err(t.col, format!("target {pc} beyond instruction memory")))
    }

    fn queue(&self, t: Tok<'_>) -> PResult<InQueue> {
        InQueue::parse(t.text).ok_or_else(|| self.err(t.col, format!("bad queue `{}`", t.text)))
    }

    fn flag_list(&self, from: usize) -> PResult<u16> {
        let mut mask = 0u16;
        for t in self.toks.iter().skip(from) {
            mask |= self.flag(*t)?.bit();
        }
        if mask == 0 {
            return Err(self.err(self.col, "flag branch needs at least one flag"));
        }
        Ok(mask)
    }

    fn expect_len(&self, n: usize) -> PResult<()> {
        if let Some(t) = self.toks.get(n) {
            return Err(self.err(t.col, format!("unexpected operand `{}`", t.text)));
        }
        if self.toks.len() < n {
            return Err(self.err(self.col, format!("expected {} operands", n - 1)));
        }
        Ok(())
    }

    fn only_keys(&self, keys: &[&str], words: &[&str]) -> PResult<()> {
        for t in self.toks.iter().skip(1) {
            let ok = match t.text.split_once('=') {
                Some((k, _)) => keys.contains(&k),
                None => true,
            };
            if !ok {
                return Err(self.err(t.col, format!("unknown operand `{}`", t.text)));
            }
            if !t.text.contains('=') && !words.is_empty() && !words.contains(&t.text) {
                return Err(self.err(t.col, format!("unexpected operand `{}`", t.text)));
            }
        }
        Ok(())
    }
}

fn parse_instr(cx: &LineCx<'_>) -> PResult<Op> {
    let m = cx.toks[0].text;
    let pos = |n: usize, w: &str| cx.positional(n, w);
    let addr = |d: Option<AddrSel>| cx.keyed("addr", AddrSel::parse, d);
    let lce = |d: Option<LceSel>| cx.keyed("lce", LceSel::parse, d);
    let way = |k: &str, d: Option<WaySel>| cx.keyed(k, WaySel::parse, d);
    let state = |d: Option<StateSel>| cx.keyed("state", StateSel::parse, d);
    let alu = AluOp::ALL.iter().find(|a| a.name() == m).copied();
    Ok(match m {
        "sf" | "sfz" => {
            cx.expect_len(2)?;
            let f = cx.flag(pos(1, "flag")?)?;
            if m == "sf" {
                Op::Sf(f)
            } else {
                Op::Sfz(f)
            }
        }
        "andf" | "orf" | "nandf" => {
            cx.expect_len(4)?;
            Op::FlagLogic {
                op: match m {
                    "andf" => FlagOp::And,
                    "orf" => FlagOp::Or,
                    _ => FlagOp::Nand,
                },
                a: cx.flag(pos(1, "flag")?)?,
                b: cx.flag(pos(2, "flag")?)?,
                rd: cx.reg(pos(3, "destination")?, true)?,
            }
        }
        "notf" => {
            cx.expect_len(3)?;
            Op::Notf {
                a: cx.flag(pos(1, "flag")?)?,
                rd: cx.reg(pos(2, "destination")?, true)?,
            }
        }
        "bf" | "bfnot" | "bfz" | "bfnz" => Op::Bf {
            cond: match m {
                "bf" => FlagBranch::All,
                "bfnot" => FlagBranch::None,
                "bfz" => FlagBranch::Any,
                _ => FlagBranch::NotAll,
            },
            target: cx.target(pos(1, "target")?)?,
            mask: cx.flag_list(2)?,
        },
        "rdp" | "clp" => {
            cx.only_keys(&["addr"], &[""])?;
            let a = addr(None)?;
            if m == "rdp" {
                Op::Rdp { addr: a }
            } else {
                Op::Clp { addr: a }
            }
        }
        "rdw" => {
            cx.only_keys(&["addr", "lce", "lru_way"], &[""])?;
            Op::Rdw {
                addr: addr(None)?,
                lce: lce(None)?,
                way: way("lru_way", None)?,
            }
        }
        "rde" => {
            cx.only_keys(&["addr", "lce", "way", "dst"], &[""])?;
            Op::Rde {
                addr: addr(None)?,
                lce: lce(None)?,
                way: way("way", None)?,
                rd: cx.keyed("dst", |s| Reg::parse(s).filter(|r| r.writable()), None)?,
            }
        }
        "wdp" => {
            cx.only_keys(&["addr", "p"], &[""])?;
            Op::Wdp {
                addr: addr(None)?,
                up: cx.keyed(
                    "p",
                    |s| match s {
                        "0" => Some(false),
                        "1" => Some(true),
                        _ => None,
                    },
                    None,
                )?,
            }
        }
        "clr" => {
            cx.only_keys(&["addr", "lce"], &[""])?;
            Op::Clr {
                addr: addr(None)?,
                lce: lce(None)?,
            }
        }
        "wde" | "wds" => {
            cx.only_keys(&["addr", "lce", "way", "state"], &[""])?;
            let (a, l, w, s) = (addr(None)?, lce(None)?, way("way", None)?, state(None)?);
            if m == "wde" {
                Op::Wde {
                    addr: a,
                    lce: l,
                    way: w,
                    state: s,
                }
            } else {
                Op::Wds {
                    addr: a,
                    lce: l,
                    way: w,
                    state: s,
                }
            }
        }
        "gad" => {
            cx.expect_len(1)?;
            Op::Gad
        }
        "wfq" => {
            let mut mask = 0u8;
            for t in cx.toks.iter().skip(1) {
                mask |= 1 << cx.queue(*t)?.code();
            }
            if mask == 0 {
                return Err(cx.err(cx.col, "wfq needs at least one queue"));
            }
            Op::Wfq { mask }
        }
        "pushq" => {
            let qt = pos(1, "queue")?;
            let mem = match qt.text {
                "cmd" => false,
                "memcmd" => true,
                other => return Err(cx.err(qt.col, format!("cannot push to `{other}`"))),
            };
            let kt = pos(2, "message kind")?;
            let kind = PushKind::ALL
                .into_iter()
                .find(|k| k.name() == kt.text && k.is_mem() == mem)
                .ok_or_else(|| cx.err(kt.col, format!("bad {} message `{}`", qt.text, kt.text)))?;
            let mut wp = false;
            let mut spec = false;
            for n in 3.. {
                let Ok(t) = pos(n, "") else { break };
                match t.text {
                    "wp" => wp = true,
                    "spec" => spec = true,
                    other => return Err(cx.err(t.col, format!("unexpected operand `{other}`"))),
                }
            }
            cx.only_keys(&["addr", "lce", "way", "state"], &[])?;
            Op::Pushq(Push {
                kind,
                addr: addr(None)?,
                lce: lce(Some(LceSel::Req))?,
                way: way("way", Some(WaySel::Lru))?,
                state: state(Some(StateSel::Imm(crate::protocol::CoherenceState::I)))?,
                wp,
                spec,
            })
        }
        "popq" => {
            let q = cx.queue(pos(1, "queue")?)?;
            let wp = match cx.toks.get(2) {
                None => false,
                Some(t) if t.text == "wp" => true,
                Some(t) => return Err(cx.err(t.col, format!("unexpected operand `{}`", t.text))),
            };
            if let Some(t) = cx.toks.get(3) {
                return Err(cx.err(t.col, format!("unexpected operand `{}`", t.text)));
            }
            Op::Popq { q, wp }
        }
        "poph" => {
            cx.expect_len(3)?;
            Op::Poph {
                q: cx.queue(pos(1, "queue")?)?,
                rd: cx.reg(pos(2, "destination")?, true)?,
            }
        }
        "specq" => {
            let ot = pos(1, "speculation op")?;
            let op = SpecOp::ALL
                .into_iter()
                .find(|o| o.name() == ot.text)
                .ok_or_else(|| cx.err(ot.col, format!("bad speculation op `{}`", ot.text)))?;
            cx.only_keys(&["addr", "state"], &[ot.text])?;
            let needs_state = matches!(op, SpecOp::Set | SpecOp::Fwd);
            let st = if needs_state {
                state(None)?
            } else {
                if let Some((t, _)) = cx.key("state") {
                    return Err(cx.err(t.col, format!("specq {} takes no state", op.name())));
                }
                StateSel::Imm(crate::protocol::CoherenceState::I)
            };
            Op::Specq {
                op,
                addr: addr(None)?,
                state: st,
            }
        }
        "inv" => {
            let mut own = false;
            let mut all = false;
            for t in cx.toks.iter().skip(1) {
                match t.text {
                    "own" => own = true,
                    "all" => all = true,
                    other => return Err(cx.err(t.col, format!("unexpected operand `{other}`"))),
                }
            }
            Op::Inv { own, all }
        }
        _ if alu.is_some() => {
            cx.expect_len(4)?;
            Op::Alu {
                op: alu.unwrap(),
                rd: cx.reg(pos(1, "destination")?, true)?,
                ra: cx.reg(pos(2, "source")?, false)?,
                rb: cx.reg(pos(3, "source")?, false)?,
            }
        }
        "addi" => {
            cx.expect_len(4)?;
            Op::Addi {
                rd: cx.reg(pos(1, "destination")?, true)?,
                ra: cx.reg(pos(2, "source")?, false)?,
                imm: cx.imm(pos(3, "immediate")?, 16)? as i16,
            }
        }
        "mov" => {
            cx.expect_len(3)?;
            Op::Mov {
                rd: cx.reg(pos(1, "destination")?, true)?,
                ra: cx.reg(pos(2, "source")?, false)?,
            }
        }
        "movi" => {
            cx.expect_len(3)?;
            Op::Movi {
                rd: cx.reg(pos(1, "destination")?, true)?,
                imm: cx.imm(pos(2, "immediate")?, 20)?,
            }
        }
        "beq" | "bne" => {
            cx.expect_len(4)?;
            Op::Beq {
                ne: m == "bne",
                ra: cx.reg(pos(1, "source")?, false)?,
                rb: cx.reg(pos(2, "source")?, false)?,
                target: cx.target(pos(3, "target")?)?,
            }
        }
        "beqi" | "bnei" => {
            cx.expect_len(4)?;
            Op::Beqi {
                ne: m == "bnei",
                ra: cx.reg(pos(1, "source")?, false)?,
                imm: cx.imm(pos(2, "immediate")?, 12)? as i16,
                target: cx.target(pos(3, "target")?)?,
            }
        }
        "bi" => {
            cx.expect_len(2)?;
            Op::Bi {
                target: cx.target(pos(1, "target")?)?,
            }
        }
        other => return Err(cx.err(cx.col, format!("unknown op `{other}`"))),
    })
}

/// Rewrites a pseudo-op line into its machine form.
fn expand_pseudo<'a>(toks: &[Tok<'a>]) -> Vec<Tok<'a>> {
    let t = |text: &'a str, col: usize| Tok { text, col };
    let c = toks[0].col;
    match (toks[0].text, toks.get(1)) {
        ("nop", None) => vec![t("or", c), t("r0", c), t("r0", c), t("r0", c)],
        ("jmp", Some(l)) if toks.len() == 2 => vec![t("bi", c), *l],
        ("inc", Some(r)) if toks.len() == 2 => vec![t("addi", c), *r, *r, t("1", c)],
        ("dec", Some(r)) if toks.len() == 2 => vec![t("addi", c), *r, *r, t("-1", c)],
        ("zero", Some(r)) if toks.len() == 2 => vec![t("movi", c), *r, t("0", c)],
        _ => toks.to_vec(),
    }
}

fn is_label_name(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Assembles source into a program for an instruction memory of `imem` words.
pub fn assemble_with(src: &str, imem: usize) -> Result<MicroProgram, AsmError> {
    let mut diags = Vec::new();
    let mut labels: HashMap<String, usize> = HashMap::new();
    // (line number, tokens) per instruction.
    let mut lines: Vec<(usize, Vec<Tok<'_>>)> = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let code = raw.split('#').next().unwrap();
        let mut toks = tokenize(code);
        while let Some(first) = toks.first() {
            let Some(name) = first.text.strip_suffix(':') else {
                break;
            };
            if !is_label_name(name) {
                diags.push(Diagnostic {
                    line: i + 1,
                    col: first.col,
                    msg: format!("bad label `{name}`"),
                });
            } else if labels.insert(name.to_string(), lines.len()).is_some() {
                diags.push(Diagnostic {
                    line: i + 1,
                    col: first.col,
                    msg: format!("label `{name}` defined twice"),
                });
            }
            toks.remove(0);
        }
        if !toks.is_empty() {
            lines.push((i + 1, toks));
        }
    }
    let mut prog = MicroProgram::default();
    for (line, toks) in &lines {
        let mut toks = expand_pseudo(toks);
        let mut pt = false;
        let mut wait = false;
        while let Some(last) = toks.last() {
            match last.text {
                "pt" if toks.len() > 1 => pt = true,
                "wait" if toks.len() > 1 => wait = true,
                _ => break,
            }
            toks.pop();
        }
        let cx = LineCx {
            line: *line,
            col: toks[0].col,
            toks,
            labels: &labels,
        };
        match parse_instr(&cx) {
            Ok(op) => {
                let mut instr = MicroInstr::new(op);
                if pt {
                    if instr.branch_target().is_none() {
                        diags.push(cx.err(cx.col, "`pt` on a non-branch instruction"));
                    }
                    instr.predict_taken = true;
                }
                instr.wait = wait;
                prog.instrs.push(instr);
                prog.source_map.push(*line);
            }
            Err(d) => diags.push(d),
        }
    }
    if !diags.is_empty() {
        return Err(AsmError::Diagnostics(diags));
    }
    if prog.len() > imem {
        return Err(AsmError::ProgramTooLarge {
            len: prog.len(),
            max: imem,
        });
    }
    prog.labels = labels.into_iter().collect();
    Ok(prog)
}

pub fn assemble(src: &str) -> Result<MicroProgram, AsmError> {
    assemble_with(src, IMEM_SIZE)
}

/// Listing: pc, encoded word and source text per instruction.
pub fn listing(p: &MicroProgram) -> String {
    let dis = disassemble(p);
    let mut out = String::new();
    let mut pc = 0;
    for line in dis.lines() {
        if line.ends_with(':') {
            out.push_str(line);
            out.push('\n');
        } else {
            out.push_str(&format!(
                "{pc:3}  {:08x}  {}\n",
                encode(&p.instrs[pc]),
                line.trim_start()
            ));
            pc += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::CoherenceState;

    #[test]
    fn sf_pending() {
        let p = assemble("sf pf\n").unwrap();
        assert_eq!(p.instrs, vec![MicroInstr::new(Op::Sf(Flag::Pending))]);
    }

    #[test]
    fn flag_branch_predicted_taken() {
        let p = assemble("top: bf miss_lbl rqf pt\nmiss_lbl: gad\n").unwrap();
        let i = p.instrs[0];
        assert!(i.predict_taken);
        assert_eq!(
            i.op,
            Op::Bf {
                cond: FlagBranch::All,
                target: 1,
                mask: Flag::WriteNotRead.bit()
            }
        );
    }

    #[test]
    fn undefined_label_is_diagnosed() {
        match assemble("gad\n  bi nowhere\n") {
            Err(AsmError::Diagnostics(d)) => {
                assert_eq!((d[0].line, d[0].col), (2, 6));
                assert!(d[0].msg.contains("nowhere"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn diagnostics_cover_every_bad_line() {
        let Err(AsmError::Diagnostics(d)) =
            assemble("frob r1\nsf nosuch\nmovi r1 99999999\npushq cmd rd addr=req\n")
        else {
            panic!()
        };
        assert_eq!(
            d.iter().map(|d| d.line).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
    }

    #[test]
    fn size_overflow() {
        let src = "gad\n".repeat(IMEM_SIZE + 1);
        assert!(matches!(
            assemble(&src),
            Err(AsmError::ProgramTooLarge { len: 257, max: 256 })
        ));
    }

    #[test]
    fn empty_and_single() {
        assert_eq!(disassemble(&assemble("").unwrap()), "");
        assert_eq!(disassemble(&assemble("inv\n").unwrap()).trim(), "inv");
    }

    #[test]
    fn pseudo_ops_expand() {
        let p = assemble("nop\ninc r2\nzero nxt\nl: jmp l\n").unwrap();
        assert_eq!(
            p.instrs[1].op,
            Op::Addi {
                rd: Reg::Gpr(2),
                ra: Reg::Gpr(2),
                imm: 1
            }
        );
        assert_eq!(
            p.instrs[2].op,
            Op::Movi {
                rd: Reg::Nxt,
                imm: 0
            }
        );
        assert_eq!(p.instrs[3].op, Op::Bi { target: 3 });
    }

    #[test]
    fn operands_parse() {
        let p = assemble(
            "pushq memcmd rd addr=req state=E wp spec\nspecq fwd addr=req state=nxt\nbeqi r1 DIRTYWB @0 pt\nrdp addr=req wait\n",
        )
        .unwrap();
        match p.instrs[0].op {
            Op::Pushq(q) => {
                assert_eq!(q.kind, PushKind::MemRd);
                assert!(q.wp && q.spec);
                assert_eq!(q.state, StateSel::Imm(CoherenceState::E));
                assert_eq!((q.lce, q.way), (LceSel::Req, WaySel::Lru));
            }
            ref o => panic!("{o:?}"),
        }
        assert_eq!(
            p.instrs[2].op,
            Op::Beqi {
                ne: false,
                ra: Reg::Gpr(1),
                imm: 3,
                target: 0
            }
        );
        assert!(p.instrs[3].wait && !p.instrs[3].predict_taken);
    }

    #[test]
    fn binary_round_trip() {
        let p = assemble("a: rdw addr=req lce=req lru_way=lru\nbfz a csf cof pt\n").unwrap();
        let back = MicroProgram::from_binary(&p.to_binary()).unwrap();
        assert_eq!(back.instrs, p.instrs);
        let mut bad = p.to_binary();
        bad[0] = b'X';
        assert!(MicroProgram::from_binary(&bad).is_err());
    }
}
