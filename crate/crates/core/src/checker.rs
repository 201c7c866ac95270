//! Explicit-state model checker for a single block.
//!
//! The model has N caches, one directory and an unordered network (a multiset
//! of messages delivered in any order). Cache and directory rules are pulled
//! from the protocol tables; seeded mutations edit exactly one rule.
//!
//! Data values are abstracted to a freshness bit per copy: a store makes the
//! writer's copy the only fresh one. Memory reads and writes happen at the
//! directory as it handles a message.

use std::collections::HashMap;
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::str::FromStr;

use thiserror::Error;

use crate::harness::monitors::{check_block, Invariant};
use crate::protocol::CoherenceState::{self, *};
use crate::protocol::{
    dir_summary, lce_event_action, CommandKind, CommandTarget, DirRequestKind, DirectivePlan,
    Grant, InvalidateSet, LceAction, LceEvent, LceSend, Protocol, ProtocolError,
};

pub const MAX_CACHES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("unknown mutation `{0}` (expected one of: {list})", list = Mutation::ids().join(", "))]
    UnknownMutation(String),
    #[error("cache count {0} outside 2..={MAX_CACHES}")]
    Caches(usize),
}

/// Seeded protocol bugs used to show the checker notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mutation {
    /// Writes from I to a shared block skip invalidating the sharers.
    DropInvalidations,
    /// Reads of a shared block are granted E.
    GrantEWithSharers,
    /// A modified block being replaced answers with a clean writeback.
    SkipWriteback,
    /// Reads of a modified block transfer it in M.
    WrongTransferState,
    /// Writes from I to a shared block grant before the InvAcks arrive.
    SkipInvAckWait,
}

impl Mutation {
    pub const ALL: [Mutation; 5] = [
        Mutation::DropInvalidations,
        Mutation::GrantEWithSharers,
        Mutation::SkipWriteback,
        Mutation::WrongTransferState,
        Mutation::SkipInvAckWait,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Mutation::DropInvalidations => "drop-invalidations",
            Mutation::GrantEWithSharers => "grant-E-with-sharers",
            Mutation::SkipWriteback => "skip-writeback",
            Mutation::WrongTransferState => "wrong-transfer-state",
            Mutation::SkipInvAckWait => "skip-inv-ack-wait",
        }
    }

    pub fn ids() -> Vec<&'static str> {
        Self::ALL.iter().map(|m| m.id()).collect()
    }
}

impl FromStr for Mutation {
    type Err = CheckError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| CheckError::UnknownMutation(s.to_string()))
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// What the checker looks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Property {
    Swmr,
    DataValue,
    SingleOwner,
    ImpossibleTransition,
    /// At quiescence the directory records exactly what the caches hold
    /// (E may have become M silently).
    DirectoryConsistent,
    /// No message in flight while the directory still waits for one.
    Deadlock,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Property::Swmr => "SWMR",
            Property::DataValue => "DataValue",
            Property::SingleOwner => "SingleOwner",
            Property::ImpossibleTransition => "ImpossibleTransition",
            Property::DirectoryConsistent => "DirectoryConsistent",
            Property::Deadlock => "Deadlock",
        })
    }
}

// ---------------------------------------------------------------------------
// Rules

/// One directory-table cell as the checker executes it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirRule {
    pub plan: Result<DirectivePlan, ProtocolError>,
    /// Collect every InvAck before granting.
    pub wait_acks: bool,
}

/// The executable rule set: the directory table, the controller table and
/// at most one edited cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    pub protocol: Protocol,
    dir: Vec<DirRule>,
    /// Controller cell whose DirtyWb is replaced by a NullWb.
    clean_wb: Option<(CoherenceState, &'static str)>,
}

fn cell(state: CoherenceState, kind: DirRequestKind) -> usize {
    state.bits() as usize * DirRequestKind::ALL.len() + kind as usize
}

impl RuleSet {
    pub fn new(protocol: Protocol) -> Self {
        let mut dir = Vec::with_capacity(36);
        for s in CoherenceState::ALL {
            for k in DirRequestKind::ALL {
                dir.push(DirRule {
                    plan: protocol.plan(s, k),
                    wait_acks: true,
                });
            }
        }
        RuleSet {
            protocol,
            dir,
            clean_wb: None,
        }
    }

    /// The rule set with `m` applied; differs from the base in one rule.
    pub fn mutated(protocol: Protocol, m: Mutation) -> Self {
        use DirRequestKind::*;
        let mut r = Self::new(protocol);
        let edit = |r: &mut RuleSet, s, k, f: &dyn Fn(&mut DirRule)| f(&mut r.dir[cell(s, k)]);
        match m {
            Mutation::DropInvalidations => edit(&mut r, S, ReqWrFromI, &|d| {
                if let Ok(p) = d.plan.as_mut() {
                    p.invalidate = InvalidateSet::None;
                }
            }),
            Mutation::GrantEWithSharers => edit(&mut r, S, ReqRd, &|d| {
                if let Ok(p) = d.plan.as_mut() {
                    p.grant_state = E;
                    p.next_dir_state = E;
                }
            }),
            Mutation::WrongTransferState => edit(&mut r, M, ReqRd, &|d| {
                if let Ok(p) = d.plan.as_mut() {
                    p.grant_state = M;
                    if let Some(c) = p.command.as_mut() {
                        c.transfer_state = Some(M);
                    }
                }
            }),
            Mutation::SkipInvAckWait => edit(&mut r, S, ReqWrFromI, &|d| d.wait_acks = false),
            Mutation::SkipWriteback => r.clean_wb = Some((M, "ST-WB")),
        }
        r
    }

    pub fn dir(&self, state: CoherenceState, kind: DirRequestKind) -> &DirRule {
        &self.dir[cell(state, kind)]
    }

    pub fn lce(&self, state: CoherenceState, event: LceEvent) -> Result<LceAction, ProtocolError> {
        let mut a = lce_event_action(state, event)?;
        if self.clean_wb == Some((state, event.column())) {
            for s in a.sends.iter_mut() {
                if *s == LceSend::DirtyWb {
                    *s = LceSend::NullWb;
                }
            }
        }
        Ok(a)
    }

    /// Number of rules that differ from `other`.
    pub fn diff(&self, other: &RuleSet) -> usize {
        let dir = self
            .dir
            .iter()
            .zip(&other.dir)
            .filter(|(a, b)| a != b)
            .count();
        dir + usize::from(self.clean_wb != other.clean_wb)
    }
}

// ---------------------------------------------------------------------------
// Abstract state

/// A cache's outstanding request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Want {
    None,
    Rd,
    RdNe,
    Wr,
    /// Fetching some other block into the way that holds this one.
    Evict,
}

impl Want {
    const ALL: [Want; 5] = [Want::None, Want::Rd, Want::RdNe, Want::Wr, Want::Evict];

    fn name(self) -> &'static str {
        match self {
            Want::None => "-",
            Want::Rd => "ReqRd",
            Want::RdNe => "ReqRd-NE",
            Want::Wr => "ReqWr",
            Want::Evict => "Evict",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cache {
    pub state: CoherenceState,
    pub fresh: bool,
    pub want: Want,
}

impl Cache {
    const IDLE: Cache = Cache {
        state: I,
        fresh: false,
        want: Want::None,
    };
}

/// Command sent to a cache. `dest` is the transfer target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cmd {
    Inv,
    Data {
        state: CoherenceState,
        fresh: bool,
    },
    StW(CoherenceState),
    StTr {
        set: CoherenceState,
        tr: CoherenceState,
        dest: u8,
    },
    StTrWb {
        set: CoherenceState,
        tr: CoherenceState,
        dest: u8,
    },
    Tr {
        tr: CoherenceState,
        dest: u8,
    },
    StWb(CoherenceState),
    /// The fill for the other block, which overwrites this one.
    FillOther,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Resp {
    InvAck,
    CohAck,
    NullWb,
    DirtyWb { fresh: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Msg {
    Req { from: u8, want: Want },
    ToCache { to: u8, cmd: Cmd },
    ToDir { from: u8, resp: Resp },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Phase {
    Idle,
    Acks {
        req: u8,
        kind: DirRequestKind,
        row: CoherenceState,
        owner: Option<u8>,
    },
    Wb {
        from: u8,
        /// Requester of a replacement, which gets its fill afterwards.
        evict: Option<u8>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct State {
    n: u8,
    caches: [Cache; MAX_CACHES],
    entries: [CoherenceState; MAX_CACHES],
    mem_fresh: bool,
    pending: u8,
    acks_owed: u8,
    phase: Phase,
    msgs: Vec<Msg>,
}

/// One transition of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    Load { cache: u8, ne: bool },
    Store { cache: u8 },
    Evict { cache: u8 },
    Deliver(Msg),
}

fn st_name(s: CoherenceState) -> char {
    s.letter()
}

impl fmt::Display for Cmd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Cmd::Inv => write!(f, "Inv"),
            Cmd::Data { state, fresh } => write!(
                f,
                "DATA/{}{}",
                st_name(state),
                if fresh { "" } else { " (stale)" }
            ),
            Cmd::StW(s) => write!(f, "STW/{}", st_name(s)),
            Cmd::StTr { set, tr, dest } => {
                write!(f, "ST/{}-TR/{} to cache {dest}", st_name(set), st_name(tr))
            }
            Cmd::StTrWb { set, tr, dest } => {
                write!(
                    f,
                    "ST/{}-TR/{}-WB to cache {dest}",
                    st_name(set),
                    st_name(tr)
                )
            }
            Cmd::Tr { tr, dest } => write!(f, "TR/{} to cache {dest}", st_name(tr)),
            Cmd::StWb(s) => write!(f, "ST/{}-WB", st_name(s)),
            Cmd::FillOther => write!(f, "fill of the other block"),
        }
    }
}

impl fmt::Display for Msg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Msg::Req { from, want } => write!(f, "{} from cache {from}", want.name()),
            Msg::ToCache { to, cmd } => write!(f, "{cmd} at cache {to}"),
            Msg::ToDir { from, resp } => {
                let r = match resp {
                    Resp::InvAck => "InvAck",
                    Resp::CohAck => "CohAck",
                    Resp::NullWb => "NullWB",
                    Resp::DirtyWb { fresh: true } => "DirtyWB",
                    Resp::DirtyWb { fresh: false } => "DirtyWB (stale)",
                };
                write!(f, "{r} from cache {from}")
            }
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Step::Load { cache, ne: false } => write!(f, "cache {cache} loads"),
            Step::Load { cache, ne: true } => write!(f, "cache {cache} fetches (non-exclusive)"),
            Step::Store { cache } => write!(f, "cache {cache} stores"),
            Step::Evict { cache } => write!(f, "cache {cache} replaces the block"),
            Step::Deliver(m @ Msg::Req { .. }) => write!(f, "directory takes {m}"),
            Step::Deliver(m @ Msg::ToDir { .. }) => write!(f, "directory receives {m}"),
            Step::Deliver(m) => write!(f, "deliver {m}"),
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.n as usize;
        for (i, c) in self.caches[..n].iter().enumerate() {
            write!(f, "c{i}={}{}", c.state, if c.fresh { "*" } else { "" })?;
            if c.want != Want::None {
                write!(f, "({})", c.want.name())?;
            }
            f.write_str(" ")?;
        }
        let dir: String = self.entries[..n].iter().map(|s| s.letter()).collect();
        write!(
            f,
            "dir={dir} mem={} pending={}",
            if self.mem_fresh { "fresh" } else { "stale" },
            self.pending
        )?;
        if !self.msgs.is_empty() {
            let m: Vec<String> = self.msgs.iter().map(|m| m.to_string()).collect();
            write!(f, " net=[{}]", m.join("; "))?;
        }
        Ok(())
    }
}

type Fail = (Property, String);

fn impossible(e: ProtocolError) -> Fail {
    (Property::ImpossibleTransition, e.to_string())
}

impl State {
    pub fn initial(n: usize) -> State {
        State {
            n: n as u8,
            caches: [Cache::IDLE; MAX_CACHES],
            entries: [I; MAX_CACHES],
            mem_fresh: true,
            pending: 0,
            acks_owed: 0,
            phase: Phase::Idle,
            msgs: Vec::new(),
        }
    }

    pub fn cache_states(&self) -> Vec<CoherenceState> {
        self.caches[..self.n as usize]
            .iter()
            .map(|c| c.state)
            .collect()
    }

    fn send(&mut self, m: Msg) {
        let at = self.msgs.partition_point(|x| *x < m);
        self.msgs.insert(at, m);
    }

    fn take(&mut self, m: &Msg) {
        let at = self.msgs.binary_search(m).expect("message in flight");
        self.msgs.remove(at);
    }

    fn store(&mut self, i: usize) {
        for (j, c) in self.caches.iter_mut().enumerate() {
            c.fresh = j == i;
        }
        self.mem_fresh = false;
        for m in self.msgs.iter_mut() {
            match m {
                Msg::ToCache {
                    cmd: Cmd::Data { fresh, .. },
                    ..
                }
                | Msg::ToDir {
                    resp: Resp::DirtyWb { fresh },
                    ..
                } => *fresh = false,
                _ => {}
            }
        }
        self.msgs.sort();
    }

    fn check(&self) -> Result<(), Fail> {
        let n = self.n as usize;
        let states = self.cache_states();
        match check_block(&states) {
            Some(Invariant::Swmr) => {
                return Err((Property::Swmr, format!("cache states {states:?}")))
            }
            Some(_) => return Err((Property::SingleOwner, format!("cache states {states:?}"))),
            None => {}
        }
        for (i, c) in self.caches[..n].iter().enumerate() {
            if c.state.is_valid() && !c.fresh {
                return Err((
                    Property::DataValue,
                    format!("cache {i} holds a stale copy in {}", c.state),
                ));
            }
        }
        let mut latest = self.mem_fresh
            || self.caches[..n]
                .iter()
                .any(|c| c.state.is_valid() && c.fresh);
        for m in &self.msgs {
            match *m {
                Msg::ToCache {
                    to,
                    cmd: Cmd::Data { fresh: false, .. },
                } => {
                    return Err((
                        Property::DataValue,
                        format!("stale DATA in flight to cache {to}"),
                    ))
                }
                Msg::ToCache {
                    cmd: Cmd::Data { fresh: true, .. },
                    ..
                }
                | Msg::ToDir {
                    resp: Resp::DirtyWb { fresh: true },
                    ..
                } => latest = true,
                _ => {}
            }
        }
        if !latest {
            return Err((Property::DataValue, "the last stored value is lost".into()));
        }
        if self.msgs.is_empty() {
            if self.phase != Phase::Idle || self.pending != 0 || self.acks_owed != 0 {
                return Err((
                    Property::Deadlock,
                    "directory waits with nothing in flight".into(),
                ));
            }
            for i in 0..n {
                let (d, c) = (self.entries[i], self.caches[i].state);
                if d != c && !(d == E && c == M) {
                    return Err((
                        Property::DirectoryConsistent,
                        format!("directory records {d} for cache {i}, which holds {c}"),
                    ));
                }
            }
        }
        Ok(())
    }

    // ---- canonical form and encoding ------------------------------------

    fn relabel(&self, perm: &[u8]) -> State {
        let p = |i: u8| perm[i as usize];
        let mut s = self.clone();
        for old in 0..self.n as usize {
            s.caches[perm[old] as usize] = self.caches[old];
            s.entries[perm[old] as usize] = self.entries[old];
        }
        s.phase = match self.phase {
            Phase::Idle => Phase::Idle,
            Phase::Acks {
                req,
                kind,
                row,
                owner,
            } => Phase::Acks {
                req: p(req),
                kind,
                row,
                owner: owner.map(p),
            },
            Phase::Wb { from, evict } => Phase::Wb {
                from: p(from),
                evict: evict.map(p),
            },
        };
        for m in s.msgs.iter_mut() {
            *m = match *m {
                Msg::Req { from, want } => Msg::Req {
                    from: p(from),
                    want,
                },
                Msg::ToDir { from, resp } => Msg::ToDir {
                    from: p(from),
                    resp,
                },
                Msg::ToCache { to, cmd } => Msg::ToCache {
                    to: p(to),
                    cmd: match cmd {
                        Cmd::StTr { set, tr, dest } => Cmd::StTr {
                            set,
                            tr,
                            dest: p(dest),
                        },
                        Cmd::StTrWb { set, tr, dest } => Cmd::StTrWb {
                            set,
                            tr,
                            dest: p(dest),
                        },
                        Cmd::Tr { tr, dest } => Cmd::Tr { tr, dest: p(dest) },
                        c => c,
                    },
                },
            };
        }
        s.msgs.sort();
        s
    }

    /// A cache-permuted representative. Caches are ordered by their own
    /// state and the roles they play in messages and the directory phase.
    fn canonical(&self) -> State {
        let n = self.n as usize;
        let mut keys: Vec<(u8, u8, Vec<u16>, usize)> = (0..n)
            .map(|i| {
                (
                    encode_cache(self.caches[i]),
                    self.entries[i].bits(),
                    Vec::new(),
                    i,
                )
            })
            .collect();
        let role = |keys: &mut Vec<(u8, u8, Vec<u16>, usize)>, i: u8, code: u16| {
            keys[i as usize].2.push(code)
        };
        for m in &self.msgs {
            let w = encode_msg(m);
            let body = u16::from_le_bytes([w[1], w[2]]);
            match *m {
                Msg::Req { from, .. } => role(&mut keys, from, body),
                Msg::ToDir { from, .. } => role(&mut keys, from, 0x4000 | body),
                Msg::ToCache { to, cmd } => {
                    // Drop the transfer target from the code so keys do not
                    // depend on the current labelling.
                    let body = body & 0x03ff;
                    role(&mut keys, to, 0x8000 | body);
                    if let Cmd::StTr { dest, .. }
                    | Cmd::StTrWb { dest, .. }
                    | Cmd::Tr { dest, .. } = cmd
                    {
                        role(&mut keys, dest, 0xc000 | body);
                    }
                }
            }
        }
        match self.phase {
            Phase::Idle => {}
            Phase::Acks { req, owner, .. } => {
                role(&mut keys, req, 0xff00);
                if let Some(o) = owner {
                    role(&mut keys, o, 0xff01);
                }
            }
            Phase::Wb { from, evict } => {
                role(&mut keys, from, 0xff02);
                if let Some(r) = evict {
                    role(&mut keys, r, 0xff03);
                }
            }
        }
        for k in keys.iter_mut() {
            k.2.sort_unstable();
        }
        keys.sort();
        let mut perm = [0u8; MAX_CACHES];
        for (new, k) in keys.iter().enumerate() {
            perm[k.3] = new as u8;
        }
        self.relabel(&perm[..n])
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.clear();
        out.push(self.n);
        out.push(self.mem_fresh as u8 | self.pending << 1 | self.acks_owed << 4);
        out.extend_from_slice(&encode_phase(self.phase));
        for i in 0..self.n as usize {
            out.push(encode_cache(self.caches[i]));
            out.push(self.entries[i].bits());
        }
        for m in &self.msgs {
            out.extend_from_slice(&encode_msg(m));
        }
    }

    fn decode(b: &[u8]) -> State {
        let n = b[0] as usize;
        let mut s = State::initial(n);
        s.mem_fresh = b[1] & 1 != 0;
        s.pending = (b[1] >> 1) & 7;
        s.acks_owed = b[1] >> 4;
        s.phase = decode_phase([b[2], b[3], b[4]]);
        for i in 0..n {
            s.caches[i] = decode_cache(b[5 + 2 * i]);
            s.entries[i] = state_of(b[6 + 2 * i]);
        }
        s.msgs = b[5 + 2 * n..]
            .chunks(3)
            .map(|w| decode_msg([w[0], w[1], w[2]]))
            .collect();
        s
    }
}

fn state_of(b: u8) -> CoherenceState {
    CoherenceState::from_bits(b & 7).expect("encoded state")
}

fn encode_cache(c: Cache) -> u8 {
    c.state.bits() | (c.fresh as u8) << 3 | (c.want as u8) << 4
}

fn decode_cache(b: u8) -> Cache {
    Cache {
        state: state_of(b),
        fresh: b & 8 != 0,
        want: Want::ALL[(b >> 4) as usize],
    }
}

const KIND_ALL: [DirRequestKind; 6] = DirRequestKind::ALL;

fn encode_phase(p: Phase) -> [u8; 3] {
    match p {
        Phase::Idle => [0, 0, 0],
        Phase::Acks {
            req,
            kind,
            row,
            owner,
        } => [
            1 | (kind as u8) << 2 | row.bits() << 5,
            req,
            owner.map_or(0xff, |o| o),
        ],
        Phase::Wb { from, evict } => [2, from, evict.map_or(0xff, |o| o)],
    }
}

fn decode_phase(b: [u8; 3]) -> Phase {
    let opt = |v: u8| (v != 0xff).then_some(v);
    match b[0] & 3 {
        0 => Phase::Idle,
        1 => Phase::Acks {
            req: b[1],
            kind: KIND_ALL[((b[0] >> 2) & 7) as usize],
            row: state_of(b[0] >> 5),
            owner: opt(b[2]),
        },
        _ => Phase::Wb {
            from: b[1],
            evict: opt(b[2]),
        },
    }
}

/// Three bytes: tag and cache id, then a 16-bit body.
fn encode_msg(m: &Msg) -> [u8; 3] {
    let (tag, id, body): (u8, u8, u16) = match *m {
        Msg::Req { from, want } => (0, from, want as u16),
        Msg::ToDir { from, resp } => (
            1,
            from,
            match resp {
                Resp::InvAck => 0,
                Resp::CohAck => 1,
                Resp::NullWb => 2,
                Resp::DirtyWb { fresh } => 3 | (fresh as u16) << 2,
            },
        ),
        Msg::ToCache { to, cmd } => {
            let st = |s: CoherenceState| s.bits() as u16;
            let body = match cmd {
                Cmd::Inv => 0,
                Cmd::Data { state, fresh } => 1 | st(state) << 4 | (fresh as u16) << 7,
                Cmd::StW(s) => 2 | st(s) << 4,
                Cmd::StTr { set, tr, dest } => 3 | st(set) << 4 | st(tr) << 7 | (dest as u16) << 10,
                Cmd::StTrWb { set, tr, dest } => {
                    4 | st(set) << 4 | st(tr) << 7 | (dest as u16) << 10
                }
                Cmd::Tr { tr, dest } => 5 | st(tr) << 7 | (dest as u16) << 10,
                Cmd::StWb(s) => 6 | st(s) << 4,
                Cmd::FillOther => 7,
            };
            (2, to, body)
        }
    };
    let [lo, hi] = body.to_le_bytes();
    [tag << 4 | id, lo, hi]
}

fn decode_msg(w: [u8; 3]) -> Msg {
    let id = w[0] & 0xf;
    let body = u16::from_le_bytes([w[1], w[2]]);
    let st = |shift: u16| state_of(((body >> shift) & 7) as u8);
    let dest = ((body >> 10) & 0xf) as u8;
    match w[0] >> 4 {
        0 => Msg::Req {
            from: id,
            want: Want::ALL[body as usize],
        },
        1 => Msg::ToDir {
            from: id,
            resp: match body & 3 {
                0 => Resp::InvAck,
                1 => Resp::CohAck,
                2 => Resp::NullWb,
                _ => Resp::DirtyWb {
                    fresh: body & 4 != 0,
                },
            },
        },
        _ => Msg::ToCache {
            to: id,
            cmd: match body & 0xf {
                0 => Cmd::Inv,
                1 => Cmd::Data {
                    state: st(4),
                    fresh: body >> 7 & 1 != 0,
                },
                2 => Cmd::StW(st(4)),
                3 => Cmd::StTr {
                    set: st(4),
                    tr: st(7),
                    dest,
                },
                4 => Cmd::StTrWb {
                    set: st(4),
                    tr: st(7),
                    dest,
                },
                5 => Cmd::Tr { tr: st(7), dest },
                6 => Cmd::StWb(st(4)),
                _ => Cmd::FillOther,
            },
        },
    }
}

// ---------------------------------------------------------------------------
// Transition relation

pub struct Model {
    pub rules: RuleSet,
    pub caches: usize,
}

impl Model {
    pub fn new(rules: RuleSet, caches: usize) -> Result<Self, CheckError> {
        if !(2..=MAX_CACHES).contains(&caches) {
            return Err(CheckError::Caches(caches));
        }
        Ok(Model { rules, caches })
    }

    pub fn initial(&self) -> State {
        State::initial(self.caches)
    }

    /// Every enabled transition of `s` in a fixed order.
    pub fn successors(&self, s: &State, out: &mut Vec<(Step, Result<State, Fail>)>) {
        out.clear();
        for i in 0..s.n {
            let c = s.caches[i as usize];
            if c.want != Want::None {
                continue;
            }
            let load = self.rules.lce(c.state, LceEvent::Load);
            if matches!(load, Ok(LceAction { hit: false, .. })) {
                for ne in [false, true] {
                    let mut t = s.clone();
                    let want = if ne { Want::RdNe } else { Want::Rd };
                    t.caches[i as usize].want = want;
                    t.send(Msg::Req { from: i, want });
                    out.push((Step::Load { cache: i, ne }, Ok(t)));
                }
            }
            let step = Step::Store { cache: i };
            match self.rules.lce(c.state, LceEvent::Store) {
                Ok(a) if a.hit => {
                    let mut t = s.clone();
                    t.caches[i as usize].state = a.next_state;
                    t.store(i as usize);
                    if t != *s {
                        out.push((step, Ok(t)));
                    }
                }
                Ok(_) => {
                    let mut t = s.clone();
                    t.caches[i as usize].want = Want::Wr;
                    t.send(Msg::Req {
                        from: i,
                        want: Want::Wr,
                    });
                    out.push((step, Ok(t)));
                }
                Err(e) => out.push((step, Err(impossible(e)))),
            }
            if c.state.is_valid() {
                let mut t = s.clone();
                t.caches[i as usize].want = Want::Evict;
                t.send(Msg::Req {
                    from: i,
                    want: Want::Evict,
                });
                out.push((Step::Evict { cache: i }, Ok(t)));
            }
        }
        let mut last = None;
        for m in &s.msgs {
            if last == Some(*m) {
                continue;
            }
            last = Some(*m);
            if matches!(m, Msg::Req { .. }) && (s.phase != Phase::Idle || s.pending != 0) {
                continue;
            }
            let mut t = s.clone();
            t.take(m);
            let r = match *m {
                Msg::Req { from, want } => self.accept(&mut t, from, want),
                Msg::ToCache { to, cmd } => self.at_cache(&mut t, to, cmd),
                Msg::ToDir { from, resp } => self.at_dir(&mut t, from, resp),
            };
            out.push((Step::Deliver(*m), r.map(|_| t)));
        }
    }

    fn accept(&self, s: &mut State, from: u8, want: Want) -> Result<(), Fail> {
        let r = from as usize;
        s.pending += 1;
        let n = s.n as usize;
        if want == Want::Evict {
            let e = s.entries[r];
            if matches!(e, E | M | O) {
                let plan = self
                    .rules
                    .dir(e, DirRequestKind::Replacement)
                    .plan
                    .clone()
                    .map_err(impossible)?;
                let set = plan.command.and_then(|c| c.set_state).unwrap_or(I);
                s.entries[r] = plan.grant_state;
                s.send(Msg::ToCache {
                    to: from,
                    cmd: Cmd::StWb(set),
                });
                s.phase = Phase::Wb {
                    from,
                    evict: Some(from),
                };
            } else {
                s.entries[r] = I;
                s.send(Msg::ToCache {
                    to: from,
                    cmd: Cmd::FillOther,
                });
            }
            return Ok(());
        }
        let kind = DirRequestKind::classify(want == Want::Wr, want == Want::RdNe, s.entries[r]);
        let row = dir_summary(s.entries[..n].iter().copied());
        let rule = self.rules.dir(row, kind);
        let plan = rule.plan.clone().map_err(impossible)?;
        let owner = (0..n).find(|&j| s.entries[j].is_owner()).map(|j| j as u8);
        let mut targets: Vec<u8> = match plan.invalidate {
            InvalidateSet::None => vec![],
            InvalidateSet::AllSharers
            | InvalidateSet::OtherSharers
            | InvalidateSet::OtherSharersAndOwner => (0..n)
                .filter(|&j| j != r && s.entries[j] == S)
                .map(|j| j as u8)
                .collect(),
        };
        if plan.invalidate == InvalidateSet::OtherSharersAndOwner {
            targets.extend(owner.filter(|&o| o != from));
        }
        for &t in &targets {
            s.entries[t as usize] = I;
            s.send(Msg::ToCache {
                to: t,
                cmd: Cmd::Inv,
            });
            s.acks_owed += 1;
        }
        if !targets.is_empty() && rule.wait_acks {
            s.phase = Phase::Acks {
                req: from,
                kind,
                row,
                owner,
            };
            return Ok(());
        }
        self.finish(s, from, &plan, owner)
    }

    fn finish(
        &self,
        s: &mut State,
        req: u8,
        plan: &DirectivePlan,
        owner: Option<u8>,
    ) -> Result<(), Fail> {
        s.phase = Phase::Idle;
        let r = req as usize;
        match plan.grant {
            Grant::DataFromMemory => {
                s.entries[r] = plan.grant_state;
                s.send(Msg::ToCache {
                    to: req,
                    cmd: Cmd::Data {
                        state: plan.grant_state,
                        fresh: s.mem_fresh,
                    },
                });
            }
            Grant::Upgrade => {
                s.entries[r] = plan.grant_state;
                s.send(Msg::ToCache {
                    to: req,
                    cmd: Cmd::StW(plan.grant_state),
                });
            }
            Grant::None => {
                let cmd = plan
                    .command
                    .filter(|c| c.target == CommandTarget::Owner)
                    .ok_or((
                        Property::ImpossibleTransition,
                        "plan without a grant".to_string(),
                    ))?;
                let o = owner.ok_or((
                    Property::ImpossibleTransition,
                    "owner command with no owner".to_string(),
                ))?;
                let tr = cmd.transfer_state.unwrap_or(plan.grant_state);
                s.entries[o as usize] = plan.owner_next_state().unwrap_or(I);
                s.entries[r] = plan.grant_state;
                let set = cmd.set_state.unwrap_or(I);
                let c = match cmd.kind {
                    CommandKind::StTr => Cmd::StTr { set, tr, dest: req },
                    CommandKind::StTrWb => Cmd::StTrWb { set, tr, dest: req },
                    CommandKind::Tr => Cmd::Tr { tr, dest: req },
                    k => {
                        return Err((
                            Property::ImpossibleTransition,
                            format!("{} is not an owner transfer", k.mnemonic()),
                        ))
                    }
                };
                s.send(Msg::ToCache { to: o, cmd: c });
                if cmd.kind == CommandKind::StTrWb {
                    s.phase = Phase::Wb {
                        from: o,
                        evict: None,
                    };
                }
            }
        }
        Ok(())
    }

    fn at_dir(&self, s: &mut State, from: u8, resp: Resp) -> Result<(), Fail> {
        let unexpected = |what: &str| {
            (
                Property::ImpossibleTransition,
                format!("unexpected {what} from cache {from}"),
            )
        };
        match resp {
            Resp::CohAck => {
                if s.pending == 0 {
                    return Err(unexpected("CohAck"));
                }
                s.pending -= 1;
            }
            Resp::InvAck => {
                if s.acks_owed == 0 {
                    return Err(unexpected("InvAck"));
                }
                s.acks_owed -= 1;
                if let (
                    0,
                    Phase::Acks {
                        req,
                        kind,
                        row,
                        owner,
                    },
                ) = (s.acks_owed, s.phase)
                {
                    let plan = self.rules.dir(row, kind).plan.clone().map_err(impossible)?;
                    return self.finish(s, req, &plan, owner);
                }
            }
            Resp::NullWb | Resp::DirtyWb { .. } => {
                let Phase::Wb { from: want, evict } = s.phase else {
                    return Err(unexpected("writeback"));
                };
                if want != from {
                    return Err(unexpected("writeback"));
                }
                if let Resp::DirtyWb { fresh } = resp {
                    s.mem_fresh = fresh;
                }
                s.phase = Phase::Idle;
                if let Some(r) = evict {
                    s.send(Msg::ToCache {
                        to: r,
                        cmd: Cmd::FillOther,
                    });
                }
            }
        }
        Ok(())
    }

    fn at_cache(&self, s: &mut State, i: u8, cmd: Cmd) -> Result<(), Fail> {
        let idx = i as usize;
        let c = s.caches[idx];
        let event = match cmd {
            Cmd::FillOther => {
                s.caches[idx] = Cache::IDLE;
                s.send(Msg::ToDir {
                    from: i,
                    resp: Resp::CohAck,
                });
                return Ok(());
            }
            Cmd::Inv => LceEvent::Inv,
            Cmd::Data { state, .. } => LceEvent::Data(state),
            Cmd::StW(st) => LceEvent::StW(st),
            Cmd::StTr { set, tr, .. } => LceEvent::StTr { set, transfer: tr },
            Cmd::StTrWb { set, tr, .. } => LceEvent::StTrWb { set, transfer: tr },
            Cmd::Tr { tr, .. } => LceEvent::Tr { transfer: tr },
            Cmd::StWb(set) => LceEvent::StWb { set },
        };
        let a = self.rules.lce(c.state, event).map_err(impossible)?;
        let dest = match cmd {
            Cmd::StTr { dest, .. } | Cmd::StTrWb { dest, .. } | Cmd::Tr { dest, .. } => Some(dest),
            _ => None,
        };
        for send in &a.sends {
            let m = match *send {
                LceSend::InvAck => Msg::ToDir {
                    from: i,
                    resp: Resp::InvAck,
                },
                LceSend::CohAck => Msg::ToDir {
                    from: i,
                    resp: Resp::CohAck,
                },
                LceSend::NullWb => Msg::ToDir {
                    from: i,
                    resp: Resp::NullWb,
                },
                LceSend::DirtyWb => Msg::ToDir {
                    from: i,
                    resp: Resp::DirtyWb { fresh: c.fresh },
                },
                LceSend::DataToTarget(st) => Msg::ToCache {
                    to: dest.ok_or((
                        Property::ImpossibleTransition,
                        "transfer without a target".to_string(),
                    ))?,
                    cmd: Cmd::Data {
                        state: st,
                        fresh: c.fresh,
                    },
                },
                LceSend::ReqRd | LceSend::ReqWr => {
                    return Err((
                        Property::ImpossibleTransition,
                        "request issued from a command".into(),
                    ))
                }
            };
            s.send(m);
        }
        let cache = &mut s.caches[idx];
        cache.state = a.next_state;
        if let Cmd::Data { fresh, .. } = cmd {
            cache.fresh = fresh;
        }
        if !cache.state.is_valid() {
            cache.fresh = false;
        }
        if matches!(cmd, Cmd::Data { .. } | Cmd::StW(_)) {
            let want = std::mem::replace(&mut cache.want, Want::None);
            if want == Want::Wr {
                if !cache.state.is_writable() {
                    return Err((
                        Property::ImpossibleTransition,
                        format!("write fill left cache {i} in {}", cache.state),
                    ));
                }
                cache.state = M;
                s.store(idx);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Search

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckConfig {
    pub protocol: Protocol,
    pub caches: usize,
    pub mutation: Option<Mutation>,
    /// Stop after this many distinct states; the result is then bounded.
    pub max_states: Option<usize>,
    pub symmetry: bool,
}

impl CheckConfig {
    pub fn new(protocol: Protocol, caches: usize) -> Self {
        CheckConfig {
            protocol,
            caches,
            mutation: None,
            max_states: None,
            symmetry: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    /// The frontier emptied with no violation.
    Verified,
    /// The state limit was reached first.
    Bounded,
    Violation {
        property: Property,
        detail: String,
        trace: Vec<Step>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub protocol: Protocol,
    pub caches: usize,
    pub mutation: Option<Mutation>,
    pub states: usize,
    pub transitions: u64,
    /// Deepest BFS level reached.
    pub depth: usize,
    pub outcome: Outcome,
}

impl CheckResult {
    pub fn verified(&self) -> bool {
        self.outcome == Outcome::Verified
    }

    pub fn violation(&self) -> Option<(Property, &[Step])> {
        match &self.outcome {
            Outcome::Violation {
                property, trace, ..
            } => Some((*property, trace)),
            _ => None,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self
            .mutation
            .map_or(String::new(), |m| format!(" mutation={m}"));
        let head = format!("{} caches={}{m}", self.protocol, self.caches);
        match &self.outcome {
            Outcome::Verified => writeln!(
                f,
                "Verified: {head} states={} transitions={} depth={}",
                self.states, self.transitions, self.depth
            ),
            Outcome::Bounded => writeln!(
                f,
                "Bounded: {head} states={} transitions={} depth={} (state limit reached, no violation found)",
                self.states, self.transitions, self.depth
            ),
            Outcome::Violation {
                property,
                detail,
                trace,
            } => {
                writeln!(f, "Violation of {property}: {head}: {detail}")?;
                for (k, s) in trace.iter().enumerate() {
                    writeln!(f, "{:3}. {s}", k + 1)?;
                }
                Ok(())
            }
        }
    }
}

struct Visited {
    bytes: Vec<u8>,
    start: Vec<u32>,
    parent: Vec<u32>,
    index: HashMap<u64, u32>,
}

impl Visited {
    fn get(&self, i: usize) -> &[u8] {
        let end = self
            .start
            .get(i + 1)
            .map_or(self.bytes.len(), |e| *e as usize);
        &self.bytes[self.start[i] as usize..end]
    }

    /// Adds `b` unless present; returns its index when new.
    fn insert(&mut self, b: &[u8], parent: u32) -> Option<usize> {
        let mut h = DefaultHasher::new();
        b.hash(&mut h);
        let mut key = h.finish();
        loop {
            match self.index.get(&key) {
                Some(&i) if self.get(i as usize) == b => return None,
                Some(_) => key = key.wrapping_add(1),
                None => break,
            }
        }
        let i = self.start.len();
        self.index.insert(key, i as u32);
        self.start.push(self.bytes.len() as u32);
        self.bytes.extend_from_slice(b);
        self.parent.push(parent);
        Some(i)
    }
}

pub fn explore(cfg: &CheckConfig) -> Result<CheckResult, CheckError> {
    let rules = match cfg.mutation {
        Some(m) => RuleSet::mutated(cfg.protocol, m),
        None => RuleSet::new(cfg.protocol),
    };
    let model = Model::new(rules, cfg.caches)?;
    let canon = |s: &State| {
        if cfg.symmetry {
            s.canonical()
        } else {
            s.clone()
        }
    };
    let mut seen = Visited {
        bytes: Vec::new(),
        start: Vec::new(),
        parent: Vec::new(),
        index: HashMap::new(),
    };
    let mut buf = Vec::new();
    let init = canon(&model.initial());
    init.encode(&mut buf);
    seen.insert(&buf, u32::MAX);

    let mut result = CheckResult {
        protocol: cfg.protocol,
        caches: cfg.caches,
        mutation: cfg.mutation,
        states: 1,
        transitions: 0,
        depth: 0,
        outcome: Outcome::Verified,
    };
    let limit = cfg.max_states.unwrap_or(usize::MAX);
    let mut succ = Vec::new();
    let mut cursor = 0;
    let mut level_end = 1;
    while cursor < seen.start.len() {
        if cursor == level_end {
            result.depth += 1;
            level_end = seen.start.len();
        }
        let s = State::decode(seen.get(cursor));
        model.successors(&s, &mut succ);
        for (_, next) in succ.drain(..) {
            result.transitions += 1;
            let t = match next {
                Ok(t) => t,
                Err((property, detail)) => {
                    result.states = seen.start.len();
                    result.outcome = violation(
                        &model,
                        &seen,
                        cursor,
                        &canon,
                        Err(property),
                        property,
                        detail,
                    );
                    return Ok(result);
                }
            };
            let c = canon(&t);
            c.encode(&mut buf);
            if seen.insert(&buf, cursor as u32).is_none() {
                continue;
            }
            if let Err((property, detail)) = c.check() {
                result.states = seen.start.len();
                result.depth += 1;
                result.outcome =
                    violation(&model, &seen, cursor, &canon, Ok(&buf), property, detail);
                return Ok(result);
            }
            if seen.start.len() >= limit {
                result.states = seen.start.len();
                result.outcome = Outcome::Bounded;
                return Ok(result);
            }
        }
        cursor += 1;
    }
    result.states = seen.start.len();
    Ok(result)
}

/// Rebuilds a trace on concrete (unpermuted) states so cache numbers stay
/// stable from step to step.
fn violation(
    model: &Model,
    seen: &Visited,
    last: usize,
    canon: &dyn Fn(&State) -> State,
    end: Result<&[u8], Property>,
    property: Property,
    detail: String,
) -> Outcome {
    let mut path = vec![last];
    while seen.parent[*path.last().unwrap()] != u32::MAX {
        path.push(seen.parent[*path.last().unwrap()] as usize);
    }
    path.reverse();
    let mut cur = model.initial();
    let mut trace = Vec::new();
    let mut succ = Vec::new();
    let mut buf = Vec::new();
    for &next in &path[1..] {
        model.successors(&cur, &mut succ);
        let (step, t) = succ
            .drain(..)
            .find_map(|(step, r)| {
                let t = r.ok()?;
                canon(&t).encode(&mut buf);
                (buf == seen.get(next)).then_some((step, t))
            })
            .expect("trace step exists");
        trace.push(step);
        cur = t;
    }
    model.successors(&cur, &mut succ);
    let last = succ.drain(..).find_map(|(step, r)| match (r, end) {
        (Err((p, _)), Err(want)) if p == want => Some(step),
        (Ok(t), Ok(want)) => {
            canon(&t).encode(&mut buf);
            (buf == want).then_some(step)
        }
        _ => None,
    });
    trace.extend(last);
    Outcome::Violation {
        property,
        detail,
        trace,
    }
}

/// Replays `trace` from the initial state. Returns the property the final
/// state (or final step) violates, if any.
pub fn replay(cfg: &CheckConfig, trace: &[Step]) -> Result<Option<Property>, String> {
    let rules = match cfg.mutation {
        Some(m) => RuleSet::mutated(cfg.protocol, m),
        None => RuleSet::new(cfg.protocol),
    };
    let model = Model::new(rules, cfg.caches).map_err(|e| e.to_string())?;
    let mut cur = model.initial();
    let mut succ = Vec::new();
    for (k, step) in trace.iter().enumerate() {
        model.successors(&cur, &mut succ);
        let (_, r) = succ
            .drain(..)
            .find(|(s, _)| s == step)
            .ok_or_else(|| format!("step {} ({step}) is not enabled", k + 1))?;
        match r {
            Ok(t) => {
                if let Err((p, _)) = t.check() {
                    if k + 1 < trace.len() {
                        return Err(format!(
                            "violation before the end of the trace at step {}",
                            k + 1
                        ));
                    }
                    return Ok(Some(p));
                }
                cur = t;
            }
            Err((p, _)) => return Ok(Some(p)),
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(p: Protocol, n: usize, m: Option<Mutation>) -> CheckResult {
        let mut cfg = CheckConfig::new(p, n);
        cfg.mutation = m;
        explore(&cfg).unwrap()
    }

    #[test]
    fn base_rules_are_the_tables() {
        for p in [Protocol::Moesif, Protocol::Mesi] {
            let r = RuleSet::new(p);
            for s in CoherenceState::ALL {
                for k in DirRequestKind::ALL {
                    assert_eq!(r.dir(s, k).plan, p.plan(s, k), "{s} {}", k.column());
                    assert!(r.dir(s, k).wait_acks);
                }
            }
        }
    }

    #[test]
    fn each_mutation_edits_one_rule() {
        for p in [Protocol::Moesif, Protocol::Mesi] {
            let base = RuleSet::new(p);
            for m in Mutation::ALL {
                assert_eq!(RuleSet::mutated(p, m).diff(&base), 1, "{m}");
            }
        }
    }

    #[test]
    fn mutation_ids_parse() {
        for m in Mutation::ALL {
            assert_eq!(m.id().parse::<Mutation>().unwrap(), m);
        }
        assert_eq!(
            "nope".parse::<Mutation>(),
            Err(CheckError::UnknownMutation("nope".into()))
        );
    }

    #[test]
    fn cache_count_checked() {
        assert_eq!(
            Model::new(RuleSet::new(Protocol::Mesi), 1).err(),
            Some(CheckError::Caches(1))
        );
        assert_eq!(
            Model::new(RuleSet::new(Protocol::Mesi), 9).err(),
            Some(CheckError::Caches(9))
        );
    }

    #[test]
    fn mesi_two_caches_verified() {
        let r = run(Protocol::Mesi, 2, None);
        assert!(r.verified(), "{r}");
        assert_eq!(r.states, 324);
    }

    #[test]
    fn moesif_three_caches_verified() {
        let r = run(Protocol::Moesif, 3, None);
        assert!(r.verified(), "{r}");
    }

    #[test]
    fn symmetry_reduction_agrees() {
        let mut cfg = CheckConfig::new(Protocol::Moesif, 2);
        cfg.symmetry = false;
        let full = explore(&cfg).unwrap();
        let reduced = run(Protocol::Moesif, 2, None);
        assert!(full.verified() && reduced.verified());
        assert!(reduced.states < full.states);
    }

    #[test]
    fn deterministic() {
        let a = run(Protocol::Moesif, 3, Some(Mutation::SkipWriteback));
        let b = run(Protocol::Moesif, 3, Some(Mutation::SkipWriteback));
        assert_eq!(a, b);
    }

    #[test]
    fn mutations_found_with_replayable_traces() {
        let expect = [
            (Mutation::DropInvalidations, Property::Swmr),
            (Mutation::GrantEWithSharers, Property::Swmr),
            (Mutation::SkipWriteback, Property::DataValue),
            (Mutation::WrongTransferState, Property::Swmr),
            (Mutation::SkipInvAckWait, Property::Swmr),
        ];
        for p in [Protocol::Moesif, Protocol::Mesi] {
            for (m, prop) in expect {
                let r = run(p, 3, Some(m));
                let (found, trace) = r.violation().unwrap_or_else(|| panic!("{p} {m}: {r}"));
                assert_eq!(found, prop, "{p} {m}\n{r}");
                assert!(trace.len() <= 12, "{p} {m}: depth {}", trace.len());
                let mut cfg = CheckConfig::new(p, 3);
                cfg.mutation = Some(m);
                assert_eq!(replay(&cfg, trace), Ok(Some(prop)));
                cfg.mutation = None;
                assert_ne!(
                    replay(&cfg, trace),
                    Ok(Some(prop)),
                    "{p} {m} also fails unmutated"
                );
            }
        }
        let r = run(Protocol::Moesif, 3, Some(Mutation::GrantEWithSharers));
        assert!(r.violation().unwrap().1.len() <= 8);
    }

    #[test]
    fn bounded_marker() {
        let mut cfg = CheckConfig::new(Protocol::Mesi, 3);
        cfg.max_states = Some(50);
        let r = explore(&cfg).unwrap();
        assert_eq!((r.outcome.clone(), r.states), (Outcome::Bounded, 50));
        assert!(r.to_string().starts_with("Bounded"));
    }

    fn arb_state() -> impl Strategy<Value = State> {
        let st = prop::sample::select(CoherenceState::ALL.to_vec());
        let cache = (
            st.clone(),
            any::<bool>(),
            prop::sample::select(Want::ALL.to_vec()),
        )
            .prop_map(|(state, fresh, want)| Cache { state, fresh, want });
        let id = 0u8..4;
        let cmd = prop_oneof![
            Just(Cmd::Inv),
            (st.clone(), any::<bool>()).prop_map(|(state, fresh)| Cmd::Data { state, fresh }),
            st.clone().prop_map(Cmd::StW),
            (st.clone(), st.clone(), id.clone()).prop_map(|(set, tr, dest)| Cmd::StTr {
                set,
                tr,
                dest
            }),
            (st.clone(), st.clone(), id.clone()).prop_map(|(set, tr, dest)| Cmd::StTrWb {
                set,
                tr,
                dest
            }),
            (st.clone(), id.clone()).prop_map(|(tr, dest)| Cmd::Tr { tr, dest }),
            st.clone().prop_map(Cmd::StWb),
            Just(Cmd::FillOther),
        ];
        let resp = prop_oneof![
            Just(Resp::InvAck),
            Just(Resp::CohAck),
            Just(Resp::NullWb),
            any::<bool>().prop_map(|fresh| Resp::DirtyWb { fresh }),
        ];
        let msg = prop_oneof![
            (id.clone(), prop::sample::select(Want::ALL.to_vec()))
                .prop_map(|(from, want)| Msg::Req { from, want }),
            (id.clone(), cmd).prop_map(|(to, cmd)| Msg::ToCache { to, cmd }),
            (id.clone(), resp).prop_map(|(from, resp)| Msg::ToDir { from, resp }),
        ];
        let phase = prop_oneof![
            Just(Phase::Idle),
            (
                id.clone(),
                prop::sample::select(DirRequestKind::ALL.to_vec()),
                st.clone(),
                prop::option::of(id.clone())
            )
                .prop_map(|(req, kind, row, owner)| Phase::Acks {
                    req,
                    kind,
                    row,
                    owner
                }),
            (id.clone(), prop::option::of(id)).prop_map(|(from, evict)| Phase::Wb { from, evict }),
        ];
        (
            prop::collection::vec(cache, 4),
            prop::collection::vec(st, 4),
            any::<bool>(),
            0u8..4,
            0u8..8,
            phase,
            prop::collection::vec(msg, 0..10),
        )
            .prop_map(|(cs, es, mem_fresh, pending, acks_owed, phase, mut msgs)| {
                let mut s = State::initial(4);
                s.caches[..4].copy_from_slice(&cs);
                s.entries[..4].copy_from_slice(&es);
                s.mem_fresh = mem_fresh;
                s.pending = pending;
                s.acks_owed = acks_owed;
                s.phase = phase;
                msgs.sort();
                s.msgs = msgs;
                s
            })
    }

    proptest! {
        #[test]
        fn encoding_round_trips(s in arb_state()) {
            let mut b = Vec::new();
            s.encode(&mut b);
            prop_assert_eq!(State::decode(&b), s);
        }

        #[test]
        fn canonical_form_is_a_permutation(s in arb_state(), perm in Just([0u8, 1, 2, 3]).prop_shuffle()) {
            let c = s.canonical();
            prop_assert_eq!(c.canonical(), c.clone());
            let mut sorted_a = s.cache_states();
            let mut sorted_b = c.cache_states();
            sorted_a.sort();
            sorted_b.sort();
            prop_assert_eq!(sorted_a, sorted_b);
            prop_assert_eq!(c.msgs.len(), s.msgs.len());
            prop_assert_eq!(s.check().map_err(|e| e.0), c.check().map_err(|e| e.0));
            let p = s.relabel(&perm);
            prop_assert_eq!(p.check().is_ok(), s.check().is_ok());
        }
    }
}
