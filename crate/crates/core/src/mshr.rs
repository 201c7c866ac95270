//! The per-transaction working record shared by both engines.

use std::fmt;
use std::str::FromStr;

use crate::directory::{GadResult, LruEntry};
use crate::msg::{AtomicKind, CohRequest};
use crate::protocol::CoherenceState;

/// Control flags, in encoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Flag {
    WriteNotRead,
    Uncached,
    NonExclusive,
    Atomic,
    AtomicNoReturn,
    CacheableAddress,
    Pending,
    CachedShared,
    CachedExclusive,
    CachedModified,
    CachedOwned,
    CachedForward,
    Replacement,
    Upgrade,
}

impl Flag {
    pub const ALL: [Flag; 14] = [
        Flag::WriteNotRead,
        Flag::Uncached,
        Flag::NonExclusive,
        Flag::Atomic,
        Flag::AtomicNoReturn,
        Flag::CacheableAddress,
        Flag::Pending,
        Flag::CachedShared,
        Flag::CachedExclusive,
        Flag::CachedModified,
        Flag::CachedOwned,
        Flag::CachedForward,
        Flag::Replacement,
        Flag::Upgrade,
    ];

    pub fn bit(self) -> u16 {
        1 << (self as u16)
    }

    /// Assembly mnemonic.
    pub fn mnemonic(self) -> &'static str {
        match self {
            Flag::WriteNotRead => "rqf",
            Flag::Uncached => "ucf",
            Flag::NonExclusive => "nerf",
            Flag::Atomic => "arf",
            Flag::AtomicNoReturn => "anrf",
            Flag::CacheableAddress => "rcf",
            Flag::Pending => "pf",
            Flag::CachedShared => "csf",
            Flag::CachedExclusive => "cef",
            Flag::CachedModified => "cmf",
            Flag::CachedOwned => "cof",
            Flag::CachedForward => "cff",
            Flag::Replacement => "rf",
            Flag::Upgrade => "uf",
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl FromStr for Flag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Flag::ALL
            .into_iter()
            .find(|f| f.mnemonic() == s)
            .ok_or_else(|| format!("unknown flag `{s}`"))
    }
}

/// Bit set over [`Flag`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Flags(pub u16);

impl Flags {
    pub fn get(self, f: Flag) -> bool {
        self.0 & f.bit() != 0
    }

    pub fn set(&mut self, f: Flag, v: bool) {
        if v {
            self.0 |= f.bit();
        } else {
            self.0 &= !f.bit();
        }
    }

    pub fn from_list(flags: &[Flag]) -> Flags {
        Flags(flags.iter().fold(0, |m, f| m | f.bit()))
    }

    pub fn iter(self) -> impl Iterator<Item = Flag> {
        Flag::ALL.into_iter().filter(move |f| self.get(*f))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Mshr {
    pub paddr: u64,
    pub req_lce: usize,
    pub lru_way: usize,
    pub lru_addr: u64,
    pub lru_state: CoherenceState,
    pub owner_lce: usize,
    pub owner_way: usize,
    pub owner_state: CoherenceState,
    pub next_state: CoherenceState,
    pub size: u8,
    pub atomic: Option<AtomicKind>,
    /// Uncached store payload.
    pub data: Vec<u8>,
    pub flags: Flags,
}

impl Mshr {
    pub fn flag(&self, f: Flag) -> bool {
        self.flags.get(f)
    }

    /// Loads the request-derived fields and flags; directory flags are cleared.
    pub fn load_request(&mut self, req: &CohRequest, cacheable: bool) {
        *self = Mshr {
            paddr: req.addr,
            req_lce: req.lce,
            lru_way: req.lru_way,
            size: req.size,
            atomic: req.atomic,
            data: req.data.clone(),
            ..Mshr::default()
        };
        self.flags
            .set(Flag::WriteNotRead, req.write || req.atomic.is_some());
        self.flags.set(Flag::Uncached, req.uncached || !cacheable);
        self.flags.set(Flag::NonExclusive, req.non_exclusive);
        self.flags.set(Flag::Atomic, req.atomic.is_some());
        self.flags.set(Flag::AtomicNoReturn, req.atomic_no_return);
        self.flags.set(Flag::CacheableAddress, cacheable);
    }

    pub fn load_gad(&mut self, g: &GadResult, lru: &LruEntry) {
        self.flags.set(Flag::CachedShared, g.cached_s);
        self.flags.set(Flag::CachedExclusive, g.cached_e);
        self.flags.set(Flag::CachedModified, g.cached_m);
        self.flags.set(Flag::CachedOwned, g.cached_o);
        self.flags.set(Flag::CachedForward, g.cached_f);
        self.flags.set(Flag::Replacement, g.replacement);
        self.flags.set(Flag::Upgrade, g.upgrade);
        self.lru_addr = lru.addr;
        self.lru_state = lru.state;
        if let Some(o) = g.owner {
            self.owner_lce = o.lce;
            self.owner_way = o.way;
            self.owner_state = o.state;
        } else {
            self.owner_state = CoherenceState::I;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourteen_distinct_flags() {
        let all = Flags::from_list(&Flag::ALL);
        assert_eq!(all.0.count_ones(), 14);
        for f in Flag::ALL {
            assert_eq!(f.mnemonic().parse::<Flag>().unwrap(), f);
        }
    }

    #[test]
    fn atomic_is_write() {
        let req = CohRequest {
            addr: 0x8000_0000,
            lce: 2,
            lru_way: 3,
            write: false,
            non_exclusive: false,
            uncached: false,
            atomic: Some(AtomicKind::FetchAdd),
            atomic_no_return: false,
            size: 8,
            data: vec![],
        };
        let mut m = Mshr::default();
        m.load_request(&req, true);
        assert!(m.flag(Flag::WriteNotRead) && m.flag(Flag::Atomic));
        assert!(m.flag(Flag::CacheableAddress) && !m.flag(Flag::Uncached));
        assert_eq!((m.req_lce, m.lru_way), (2, 3));
    }
}
