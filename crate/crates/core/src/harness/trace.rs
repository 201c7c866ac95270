//! Text trace format: one operation per line,
//! `<lce_id> <OP>[.<size>] <hex addr> [<hex data>]`, `#` comments.
//! Size defaults to 8 bytes.

use std::fmt;

use thiserror::Error;

use crate::lce::{CpuOp, OpKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trace line {line}: {msg}")]
pub struct TraceError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceKind {
    Op(OpKind),
    Fence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceOp {
    pub lce: usize,
    pub kind: TraceKind,
    pub addr: u64,
    pub size: u8,
    pub data: u64,
}

impl TraceOp {
    pub fn cpu_op(&self) -> Option<CpuOp> {
        match self.kind {
            TraceKind::Op(kind) => Some(CpuOp {
                kind,
                addr: self.addr,
                size: self.size,
                value: self.data,
            }),
            TraceKind::Fence => None,
        }
    }
}

fn mnemonic(k: TraceKind) -> &'static str {
    match k {
        TraceKind::Op(OpKind::Load) => "LD",
        TraceKind::Op(OpKind::Store) => "ST",
        TraceKind::Op(OpKind::UncachedLoad) => "LDU",
        TraceKind::Op(OpKind::UncachedStore) => "STU",
        TraceKind::Op(OpKind::AmoAdd) => "AMOADD",
        TraceKind::Op(OpKind::AmoSwap) => "AMOSWAP",
        TraceKind::Op(OpKind::Lr) => "LR",
        TraceKind::Op(OpKind::Sc) => "SC",
        TraceKind::Fence => "FENCE",
    }
}

fn takes_data(k: TraceKind) -> bool {
    matches!(
        k,
        TraceKind::Op(
            OpKind::Store | OpKind::UncachedStore | OpKind::AmoAdd | OpKind::AmoSwap | OpKind::Sc
        )
    )
}

const KINDS: [TraceKind; 9] = [
    TraceKind::Op(OpKind::Load),
    TraceKind::Op(OpKind::Store),
    TraceKind::Op(OpKind::UncachedLoad),
    TraceKind::Op(OpKind::UncachedStore),
    TraceKind::Op(OpKind::AmoAdd),
    TraceKind::Op(OpKind::AmoSwap),
    TraceKind::Op(OpKind::Lr),
    TraceKind::Op(OpKind::Sc),
    TraceKind::Fence,
];

fn hex(s: &str) -> Result<u64, String> {
    let t = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s);
    u64::from_str_radix(t, 16).map_err(|_| format!("bad hex number `{s}`"))
}

impl fmt::Display for TraceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.lce, mnemonic(self.kind))?;
        if self.size != 8 && self.kind != TraceKind::Fence {
            write!(f, ".{}", self.size)?;
        }
        write!(f, " {:#x}", self.addr)?;
        if takes_data(self.kind) {
            write!(f, " {:#x}", self.data)?;
        }
        Ok(())
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceOp>, TraceError> {
    let mut ops = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| TraceError { line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 {
            return Err(err("expected `<lce> <OP> <addr> [<data>]`".into()));
        }
        let lce = fields[0]
            .parse::<usize>()
            .map_err(|_| err(format!("bad LCE id `{}`", fields[0])))?;
        let (name, size) = match fields[1].split_once('.') {
            Some((n, s)) => (
                n,
                s.parse::<u8>()
                    .map_err(|_| err(format!("bad size `{s}`")))?,
            ),
            None => (fields[1], 8),
        };
        let upper = name.to_ascii_uppercase();
        let kind = *KINDS
            .iter()
            .find(|k| mnemonic(**k) == upper)
            .ok_or_else(|| err(format!("unknown op `{name}`")))?;
        if !matches!(size, 1 | 2 | 4 | 8) {
            return Err(err(format!("size {size} is not 1, 2, 4 or 8")));
        }
        let addr = match fields.get(2) {
            Some(a) => hex(a).map_err(err)?,
            None if kind == TraceKind::Fence => 0,
            None => return Err(err("missing address".into())),
        };
        if addr % size as u64 != 0 {
            return Err(err(format!("address {addr:#x} not aligned to {size}")));
        }
        let data = match (takes_data(kind), fields.get(3)) {
            (true, Some(d)) => hex(d).map_err(err)?,
            (true, None) => return Err(err("missing data".into())),
            (false, Some(_)) => return Err(err(format!("{} takes no data", mnemonic(kind)))),
            (false, None) => 0,
        };
        if fields.len() > 4 {
            return Err(err("trailing fields".into()));
        }
        ops.push(TraceOp {
            lce,
            kind,
            addr,
            size,
            data,
        });
    }
    Ok(ops)
}

pub fn write_trace(ops: &[TraceOp]) -> String {
    let mut s = String::new();
    for op in ops {
        s.push_str(&op.to_string());
        s.push('\n');
    }
    s
}
