//! Runtime invariant monitors.

use std::collections::HashMap;
use std::fmt;

use crate::lce::{OpKind, Performed};
use crate::memory::{BackingStore, MemAccess};
use crate::msg::MemOp;
use crate::protocol::CoherenceState::{self, *};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Invariant {
    Swmr,
    DataValue,
    SingleOwner,
    WayGroupSerial,
    DirectoryConsistent,
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Invariant::Swmr => "SWMR",
            Invariant::DataValue => "DataValue",
            Invariant::SingleOwner => "SingleOwner",
            Invariant::WayGroupSerial => "WayGroupSerial",
            Invariant::DirectoryConsistent => "DirectoryConsistent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub cycle: u64,
    pub invariant: Invariant,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated at cycle {}: {}",
            self.invariant, self.cycle, self.detail
        )
    }
}

/// Checks the per-block state invariants over the states every cache holds.
pub fn check_block(states: &[CoherenceState]) -> Option<Invariant> {
    let valid = states.iter().filter(|s| s.is_valid()).count();
    let exclusive = states.iter().filter(|s| matches!(s, E | M)).count();
    if exclusive > 0 && valid > 1 {
        return Some(Invariant::Swmr);
    }
    if states.iter().filter(|s| s.is_owner()).count() > 1 {
        return Some(Invariant::SingleOwner);
    }
    None
}

fn le(bytes: &[u8]) -> u64 {
    bytes.iter().rev().fold(0, |v, b| (v << 8) | *b as u64)
}

#[derive(Debug, Clone)]
pub struct Monitors {
    /// Memory as a serial execution in perform order would leave it.
    pub reference: BackingStore,
    wg_last: HashMap<(usize, usize), (u64, u64)>,
    pub loads_checked: u64,
    pub stores_applied: u64,
}

impl Monitors {
    pub fn new(block_bytes: usize) -> Self {
        Monitors {
            reference: BackingStore::new(block_bytes),
            wg_last: HashMap::new(),
            loads_checked: 0,
            stores_applied: 0,
        }
    }

    fn value_check(
        &mut self,
        cycle: u64,
        lce: usize,
        addr: u64,
        size: u8,
        got: u64,
    ) -> Result<(), Violation> {
        self.loads_checked += 1;
        let want = le(&self.reference.read(addr, size as usize));
        if want != got {
            return Err(Violation {
                cycle,
                invariant: Invariant::DataValue,
                detail: format!("LCE {lce} read {got:#x} at {addr:#x}, latest write is {want:#x}"),
            });
        }
        Ok(())
    }

    fn apply(&mut self, addr: u64, size: u8, v: u64) {
        self.stores_applied += 1;
        let bytes: Vec<u8> = (0..size).map(|i| (v >> (8 * i as u32)) as u8).collect();
        self.reference.write(addr, &bytes);
    }

    /// A cached access as it performed at its cache.
    pub fn on_performed(&mut self, cycle: u64, p: &Performed) -> Result<(), Violation> {
        if p.kind.is_uncached() {
            // Checked where it performs, at memory.
            return Ok(());
        }
        if p.kind != OpKind::Sc {
            if let Some(v) = p.read {
                self.value_check(cycle, p.lce, p.addr, p.size, v)?;
            }
        }
        if let Some(v) = p.written {
            self.apply(p.addr, p.size, v);
        }
        Ok(())
    }

    pub fn on_mem_access(&mut self, cycle: u64, a: &MemAccess) -> Result<(), Violation> {
        match a.op {
            MemOp::UncachedRead => {
                self.value_check(cycle, a.lce, a.addr, a.data.len() as u8, le(&a.data))
            }
            MemOp::UncachedWrite => {
                self.apply(a.addr, a.data.len() as u8, le(&a.data));
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// A transaction holding way group `wg` of `cce`. `drains` counts how
    /// often the way group's pending counter has returned to zero; a new
    /// transaction may only start after the previous one drained it.
    pub fn on_active(
        &mut self,
        cycle: u64,
        cce: usize,
        seq: u64,
        wg: usize,
        drains: u64,
    ) -> Result<(), Violation> {
        match self.wg_last.get(&(cce, wg)) {
            Some(&(prev, d)) if prev != seq && d == drains => Err(Violation {
                cycle,
                invariant: Invariant::WayGroupSerial,
                detail: format!(
                    "CCE {cce} way group {wg}: transaction {seq} started while {prev} was open"
                ),
            }),
            Some(&(prev, _)) if prev == seq => Ok(()),
            _ => {
                self.wg_last.insert((cce, wg), (seq, drains));
                Ok(())
            }
        }
    }

    pub fn check_states(
        &self,
        cycle: u64,
        block: u64,
        states: &[(usize, CoherenceState)],
    ) -> Result<(), Violation> {
        let only: Vec<CoherenceState> = states.iter().map(|(_, s)| *s).collect();
        match check_block(&only) {
            None => Ok(()),
            Some(inv) => Err(Violation {
                cycle,
                invariant: inv,
                detail: format!(
                    "block {block:#x}: {}",
                    states
                        .iter()
                        .filter(|(_, s)| s.is_valid())
                        .map(|(l, s)| format!("LCE {l}={s}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_examples() {
        assert_eq!(check_block(&[M, S]), Some(Invariant::Swmr));
        assert_eq!(check_block(&[O, S, S, S]), None);
        assert_eq!(check_block(&[O, F]), Some(Invariant::SingleOwner));
        assert_eq!(check_block(&[E, I, I]), None);
        assert_eq!(check_block(&[F, S]), None);
    }

    #[test]
    fn stale_read_is_flagged() {
        let mut m = Monitors::new(64);
        let st = Performed {
            lce: 0,
            kind: OpKind::Store,
            addr: 0x8000_0000,
            size: 4,
            read: None,
            written: Some(7),
        };
        m.on_performed(1, &st).unwrap();
        let ld = Performed {
            kind: OpKind::Load,
            read: Some(7),
            written: None,
            ..st
        };
        m.on_performed(2, &ld).unwrap();
        let stale = Performed {
            read: Some(0),
            ..ld
        };
        assert_eq!(
            m.on_performed(3, &stale).unwrap_err().invariant,
            Invariant::DataValue
        );
    }

    #[test]
    fn overlapping_transactions_flagged() {
        let mut m = Monitors::new(64);
        m.on_active(0, 0, 1, 3, 0).unwrap();
        m.on_active(1, 0, 1, 3, 0).unwrap();
        m.on_active(5, 0, 2, 3, 1).unwrap();
        assert!(m.on_active(6, 0, 3, 3, 1).is_err());
    }
}
