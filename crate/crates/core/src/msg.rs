//! Message formats carried by the coherence and memory networks.

use crate::protocol::CoherenceState;

pub type LceId = usize;
pub type CceId = usize;
pub type Way = usize;

/// A network endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    Lce(LceId),
    Cce(CceId),
    Mem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AtomicKind {
    FetchAdd,
    Swap,
    LoadReserved,
}

/// LCE -> CCE request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohRequest {
    pub addr: u64,
    pub lce: LceId,
    pub lru_way: Way,
    pub write: bool,
    pub non_exclusive: bool,
    pub uncached: bool,
    pub atomic: Option<AtomicKind>,
    pub atomic_no_return: bool,
    /// Access size in bytes for uncached requests.
    pub size: u8,
    /// Uncached store data.
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmdKind {
    Inv,
    Data,
    StW,
    Wb,
    Tr,
    StWb,
    StTr,
    StTrWb,
    /// Uncached load data returned to the requester.
    UcData,
}

/// CCE -> LCE command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohCommand {
    pub kind: CmdKind,
    pub addr: u64,
    pub lce: LceId,
    pub way: Way,
    /// State attached to the command (the "X" state).
    pub state: CoherenceState,
    pub target_lce: LceId,
    pub target_way: Way,
    pub target_state: CoherenceState,
    pub data: Vec<u8>,
}

impl CohCommand {
    pub fn header(kind: CmdKind, addr: u64, lce: LceId, way: Way, state: CoherenceState) -> Self {
        CohCommand {
            kind,
            addr,
            lce,
            way,
            state,
            target_lce: 0,
            target_way: 0,
            target_state: CoherenceState::I,
            data: Vec::new(),
        }
    }
}

/// LCE -> LCE block transfer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FillMsg {
    pub addr: u64,
    pub lce: LceId,
    pub way: Way,
    pub state: CoherenceState,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RespKind {
    InvAck,
    CohAck,
    NullWb,
    DirtyWb,
}

/// LCE -> CCE response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohResponse {
    pub kind: RespKind,
    pub addr: u64,
    pub lce: LceId,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemOp {
    /// Block read on behalf of a coherent request.
    Read,
    /// Block writeback.
    Write,
    UncachedRead,
    UncachedWrite,
}

/// CCE -> memory command. The payload fields (`lce`, `way`, `state`) are
/// echoed in the response so the CCE can forward fills without extra state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemCmd {
    pub op: MemOp,
    pub addr: u64,
    pub size: u8,
    pub lce: LceId,
    pub way: Way,
    pub state: CoherenceState,
    pub spec: bool,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemResp {
    pub op: MemOp,
    pub addr: u64,
    pub size: u8,
    pub lce: LceId,
    pub way: Way,
    pub state: CoherenceState,
    pub spec: bool,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Request(CohRequest),
    Command(CohCommand),
    Fill(FillMsg),
    Response(CohResponse),
    MemCmd(MemCmd),
    MemResp(MemResp),
}

impl Payload {
    pub fn data_len(&self) -> usize {
        match self {
            Payload::Request(m) => m.data.len(),
            Payload::Command(m) => m.data.len(),
            Payload::Fill(m) => m.data.len(),
            Payload::Response(m) => m.data.len(),
            Payload::MemCmd(m) => m.data.len(),
            Payload::MemResp(m) => m.data.len(),
        }
    }

    pub fn addr(&self) -> u64 {
        match self {
            Payload::Request(m) => m.addr,
            Payload::Command(m) => m.addr,
            Payload::Fill(m) => m.addr,
            Payload::Response(m) => m.addr,
            Payload::MemCmd(m) => m.addr,
            Payload::MemResp(m) => m.addr,
        }
    }
}
