//! Protocol tables for the MOESIF directory protocol.
//!
//! Everything here is a pure lookup: the cache-controller table (state x event)
//! and the directory table (directory state x request kind). Both engines, the
//! cache controller model and the model checker consume these functions so the
//! protocol is written down exactly once.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("impossible transition: {event} in state {state}")]
    ImpossibleTransition {
        state: CoherenceState,
        event: String,
    },
    #[error("unknown coherence state `{0}`")]
    UnknownState(String),
}

/// The six stable coherence states. Controllers never hold anything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum CoherenceState {
    #[default]
    I,
    S,
    E,
    M,
    O,
    F,
}

impl CoherenceState {
    pub const ALL: [CoherenceState; 6] = [
        CoherenceState::I,
        CoherenceState::S,
        CoherenceState::E,
        CoherenceState::M,
        CoherenceState::O,
        CoherenceState::F,
    ];

    pub fn is_valid(self) -> bool {
        self != CoherenceState::I
    }

    /// E, M, O and F are responsible for sourcing the block.
    pub fn is_owner(self) -> bool {
        matches!(
            self,
            CoherenceState::E | CoherenceState::M | CoherenceState::O | CoherenceState::F
        )
    }

    pub fn is_writable(self) -> bool {
        matches!(self, CoherenceState::E | CoherenceState::M)
    }

    /// States whose data may differ from memory.
    pub fn may_be_dirty(self) -> bool {
        matches!(
            self,
            CoherenceState::E | CoherenceState::M | CoherenceState::O
        )
    }

    /// 3-bit encoding used by the directory storage and the microcode.
    pub fn bits(self) -> u8 {
        match self {
            CoherenceState::I => 0,
            CoherenceState::S => 1,
            CoherenceState::E => 2,
            CoherenceState::M => 3,
            CoherenceState::O => 4,
            CoherenceState::F => 5,
        }
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        Self::ALL.get(bits as usize).copied()
    }

    pub fn letter(self) -> char {
        match self {
            CoherenceState::I => 'I',
            CoherenceState::S => 'S',
            CoherenceState::E => 'E',
            CoherenceState::M => 'M',
            CoherenceState::O => 'O',
            CoherenceState::F => 'F',
        }
    }
}

impl fmt::Display for CoherenceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for CoherenceState {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" => Ok(CoherenceState::I),
            "S" => Ok(CoherenceState::S),
            "E" => Ok(CoherenceState::E),
            "M" => Ok(CoherenceState::M),
            "O" => Ok(CoherenceState::O),
            "F" => Ok(CoherenceState::F),
            other => Err(ProtocolError::UnknownState(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Permissions {
    pub read: bool,
    pub write: bool,
}

pub fn state_permissions(state: CoherenceState) -> Permissions {
    Permissions {
        read: state.is_valid(),
        write: state.is_writable(),
    }
}

/// An event seen by a cache controller: a processor action or a directory command.
///
/// Commands carry the state the directory wants the block left in (`set`) and,
/// for transfers, the state delivered with the data (`transfer`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LceEvent {
    Load,
    Store,
    Inv,
    Data(CoherenceState),
    StW(CoherenceState),
    Wb,
    Tr {
        transfer: CoherenceState,
    },
    StWb {
        set: CoherenceState,
    },
    StTr {
        set: CoherenceState,
        transfer: CoherenceState,
    },
    StTrWb {
        set: CoherenceState,
        transfer: CoherenceState,
    },
}

impl LceEvent {
    pub fn column(&self) -> &'static str {
        match self {
            LceEvent::Load => "Load",
            LceEvent::Store => "Store",
            LceEvent::Inv => "Inv",
            LceEvent::Data(_) => "DATA",
            LceEvent::StW(_) => "STW",
            LceEvent::Wb => "WB",
            LceEvent::Tr { .. } => "TR",
            LceEvent::StWb { .. } => "ST-WB",
            LceEvent::StTr { .. } => "ST-TR",
            LceEvent::StTrWb { .. } => "ST-TR-WB",
        }
    }

    /// The state a "/X" cell resolves to.
    fn attached(&self) -> Option<CoherenceState> {
        match *self {
            LceEvent::Data(s) | LceEvent::StW(s) => Some(s),
            LceEvent::StWb { set } | LceEvent::StTr { set, .. } | LceEvent::StTrWb { set, .. } => {
                Some(set)
            }
            _ => None,
        }
    }

    fn transfer(&self) -> Option<CoherenceState> {
        match *self {
            LceEvent::Tr { transfer }
            | LceEvent::StTr { transfer, .. }
            | LceEvent::StTrWb { transfer, .. } => Some(transfer),
            _ => None,
        }
    }
}

/// Messages a cache controller emits while handling an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LceSend {
    ReqRd,
    ReqWr,
    InvAck,
    CohAck,
    NullWb,
    DirtyWb,
    /// Cache-to-cache block transfer on the Fill network, in the given state.
    DataToTarget(CoherenceState),
}

impl LceSend {
    pub fn is_fill(&self) -> bool {
        matches!(self, LceSend::DataToTarget(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LceAction {
    pub hit: bool,
    pub sends: Vec<LceSend>,
    pub next_state: CoherenceState,
}

// Cell shapes of the cache-controller table, before X resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Next {
    Fixed(CoherenceState),
    X,
    Same,
}

#[derive(Debug, Clone, Copy)]
enum LceCell {
    Blank,
    Hit(Next),
    Miss(LceSend),
    Respond(&'static [CellSend], Next),
}

#[derive(Debug, Clone, Copy)]
enum CellSend {
    InvAck,
    CohAck,
    NullWb,
    DirtyWb,
    Data,
}

use CoherenceState::{E, F, I, M, O, S};

const LCE_COLUMNS: [&str; 10] = [
    "Load", "Store", "Inv", "DATA", "STW", "WB", "TR", "ST-WB", "ST-TR", "ST-TR-WB",
];

fn column_index(event: &LceEvent) -> usize {
    LCE_COLUMNS
        .iter()
        .position(|c| *c == event.column())
        .expect("every event has a column")
}

// Inv in O and F is not in the reference controller table, but the directory
// table requires invalidating an O/F owner ("Inv other S and Owner"), so those
// two cells answer InvAck/I like S does.
fn lce_cell(state: CoherenceState, col: usize) -> LceCell {
    use CellSend as C;
    use LceCell::*;
    match (state, col) {
        (I, 0) => Miss(LceSend::ReqRd),
        (I, 1) => Miss(LceSend::ReqWr),
        (I, 3) => Respond(&[C::CohAck], Next::X),

        (S, 0) => Hit(Next::Same),
        (S, 1) => Miss(LceSend::ReqWr),
        (S, 2) => Respond(&[C::InvAck], Next::Fixed(I)),
        (S, 4) => Respond(&[C::CohAck], Next::Fixed(M)),

        (E, 0) => Hit(Next::Same),
        (E, 1) => Hit(Next::Fixed(M)),
        (E, 5) => Respond(&[C::NullWb], Next::Fixed(E)),
        (E, 7) => Respond(&[C::NullWb], Next::X),
        (E, 8) => Respond(&[C::Data], Next::X),
        (E, 9) => Respond(&[C::Data, C::NullWb], Next::X),

        (M, 0) | (M, 1) => Hit(Next::Same),
        (M, 5) => Respond(&[C::DirtyWb], Next::Fixed(M)),
        (M, 7) => Respond(&[C::DirtyWb], Next::X),
        (M, 8) => Respond(&[C::Data], Next::X),
        (M, 9) => Respond(&[C::Data, C::DirtyWb], Next::X),

        (O, 0) => Hit(Next::Same),
        (O, 1) => Miss(LceSend::ReqWr),
        (O, 2) => Respond(&[C::InvAck], Next::Fixed(I)),
        (O, 4) => Respond(&[C::CohAck], Next::Fixed(M)),
        (O, 5) => Respond(&[C::DirtyWb], Next::Fixed(O)),
        (O, 6) => Respond(&[C::Data], Next::Fixed(O)),
        (O, 7) => Respond(&[C::DirtyWb], Next::X),
        (O, 8) => Respond(&[C::Data], Next::X),

        (F, 0) => Hit(Next::Same),
        (F, 1) => Miss(LceSend::ReqWr),
        (F, 2) => Respond(&[C::InvAck], Next::Fixed(I)),
        (F, 4) => Respond(&[C::CohAck], Next::Fixed(M)),
        (F, 6) => Respond(&[C::Data], Next::Fixed(F)),
        (F, 8) => Respond(&[C::Data], Next::X),

        _ => Blank,
    }
}

/// Cells of the controller table that were added to make the directory table
/// executable. Everything else matches the reference table exactly.
pub const LCE_TABLE_EXTENSIONS: [(CoherenceState, &str); 2] = [(O, "Inv"), (F, "Inv")];

/// Looks up the controller's reaction to `event` while holding `state`.
pub fn lce_event_action(
    state: CoherenceState,
    event: LceEvent,
) -> Result<LceAction, ProtocolError> {
    let impossible = || ProtocolError::ImpossibleTransition {
        state,
        event: event.column().to_string(),
    };
    let resolve = |next: Next| -> Result<CoherenceState, ProtocolError> {
        match next {
            Next::Fixed(s) => Ok(s),
            Next::Same => Ok(state),
            Next::X => event.attached().ok_or_else(impossible),
        }
    };
    match lce_cell(state, column_index(&event)) {
        LceCell::Blank => Err(impossible()),
        LceCell::Hit(next) => Ok(LceAction {
            hit: true,
            sends: Vec::new(),
            next_state: resolve(next)?,
        }),
        LceCell::Miss(send) => Ok(LceAction {
            hit: false,
            sends: vec![send],
            next_state: state,
        }),
        LceCell::Respond(cell_sends, next) => {
            let mut sends = Vec::with_capacity(cell_sends.len());
            for s in cell_sends {
                sends.push(match s {
                    CellSend::InvAck => LceSend::InvAck,
                    CellSend::CohAck => LceSend::CohAck,
                    CellSend::NullWb => LceSend::NullWb,
                    CellSend::DirtyWb => LceSend::DirtyWb,
                    CellSend::Data => {
                        LceSend::DataToTarget(event.transfer().ok_or_else(impossible)?)
                    }
                });
            }
            Ok(LceAction {
                hit: false,
                sends,
                next_state: resolve(next)?,
            })
        }
    }
}

/// Directory-side request classes (columns of the directory table).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DirRequestKind {
    ReqRd,
    ReqRdNE,
    ReqWrFromI,
    ReqWrFromS,
    ReqWrFromOF,
    Replacement,
}

impl DirRequestKind {
    pub const ALL: [DirRequestKind; 6] = [
        DirRequestKind::ReqRd,
        DirRequestKind::ReqRdNE,
        DirRequestKind::ReqWrFromI,
        DirRequestKind::ReqWrFromS,
        DirRequestKind::ReqWrFromOF,
        DirRequestKind::Replacement,
    ];

    /// Classifies a coherent request by what the directory records for the requester.
    pub fn classify(write: bool, non_exclusive: bool, requester: CoherenceState) -> Self {
        match (write, requester) {
            (false, _) if non_exclusive => DirRequestKind::ReqRdNE,
            (false, _) => DirRequestKind::ReqRd,
            (true, S) => DirRequestKind::ReqWrFromS,
            (true, O) | (true, F) => DirRequestKind::ReqWrFromOF,
            (true, _) => DirRequestKind::ReqWrFromI,
        }
    }

    pub fn column(&self) -> &'static str {
        match self {
            DirRequestKind::ReqRd => "ReqRd",
            DirRequestKind::ReqRdNE => "ReqRd-NE",
            DirRequestKind::ReqWrFromI => "ReqWr from I",
            DirRequestKind::ReqWrFromS => "ReqWr from S",
            DirRequestKind::ReqWrFromOF => "ReqWr from O/F",
            DirRequestKind::Replacement => "Replacement",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InvalidateSet {
    None,
    AllSharers,
    OtherSharers,
    OtherSharersAndOwner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommandKind {
    StTr,
    StTrWb,
    Tr,
    StWb,
    StW,
}

impl CommandKind {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            CommandKind::StTr => "ST-TR",
            CommandKind::StTrWb => "ST-TR-WB",
            CommandKind::Tr => "TR",
            CommandKind::StWb => "ST-WB",
            CommandKind::StW => "STW",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommandTarget {
    Owner,
    Requester,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Directive {
    pub target: CommandTarget,
    pub kind: CommandKind,
    pub set_state: Option<CoherenceState>,
    pub transfer_state: Option<CoherenceState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Grant {
    DataFromMemory,
    /// STW to the requester, which already holds valid data.
    Upgrade,
    /// The block reaches the requester some other way (transfer) or not at all.
    None,
}

/// What the directory does for one (directory state, request) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DirectivePlan {
    pub invalidate: InvalidateSet,
    pub command: Option<Directive>,
    pub grant: Grant,
    /// State the requester ends up in.
    pub grant_state: CoherenceState,
    /// Summary state of the block at the directory after the transaction.
    pub next_dir_state: CoherenceState,
}

impl DirectivePlan {
    /// State the owner is left in, when the plan commands the owner.
    pub fn owner_next_state(&self) -> Option<CoherenceState> {
        let cmd = self.command?;
        if cmd.target != CommandTarget::Owner {
            return None;
        }
        match cmd.kind {
            CommandKind::Tr => Some(self.next_dir_state),
            _ => cmd.set_state,
        }
    }
}

fn data_to_req(state: CoherenceState, invalidate: InvalidateSet) -> DirectivePlan {
    DirectivePlan {
        invalidate,
        command: None,
        grant: Grant::DataFromMemory,
        grant_state: state,
        next_dir_state: state,
    }
}

fn owner_cmd(
    invalidate: InvalidateSet,
    kind: CommandKind,
    set: Option<CoherenceState>,
    transfer: CoherenceState,
    next_dir: CoherenceState,
) -> DirectivePlan {
    DirectivePlan {
        invalidate,
        command: Some(Directive {
            target: CommandTarget::Owner,
            kind,
            set_state: set,
            transfer_state: Some(transfer),
        }),
        grant: Grant::None,
        grant_state: transfer,
        next_dir_state: next_dir,
    }
}

fn upgrade(invalidate: InvalidateSet) -> DirectivePlan {
    DirectivePlan {
        invalidate,
        command: Some(Directive {
            target: CommandTarget::Requester,
            kind: CommandKind::StW,
            set_state: Some(M),
            transfer_state: None,
        }),
        grant: Grant::Upgrade,
        grant_state: M,
        next_dir_state: M,
    }
}

fn writeback_replacement() -> DirectivePlan {
    DirectivePlan {
        invalidate: InvalidateSet::None,
        command: Some(Directive {
            target: CommandTarget::Requester,
            kind: CommandKind::StWb,
            set_state: Some(I),
            transfer_state: None,
        }),
        grant: Grant::None,
        grant_state: I,
        next_dir_state: I,
    }
}

/// Looks up the MOESIF directory table.
pub fn dir_request_plan(
    dir_state: CoherenceState,
    req: DirRequestKind,
) -> Result<DirectivePlan, ProtocolError> {
    use CommandKind::*;
    use DirRequestKind::*;
    use InvalidateSet as Inv;
    let plan = match (dir_state, req) {
        (I, ReqRd) => data_to_req(E, Inv::None),
        (I, ReqRdNE) => data_to_req(S, Inv::None),
        (I, ReqWrFromI) => data_to_req(M, Inv::None),

        (S, ReqRd) | (S, ReqRdNE) => data_to_req(S, Inv::None),
        (S, ReqWrFromI) => data_to_req(M, Inv::AllSharers),
        (S, ReqWrFromS) => upgrade(Inv::OtherSharers),

        (E, ReqRd) | (E, ReqRdNE) => owner_cmd(Inv::None, StTrWb, Some(F), S, F),
        (E, ReqWrFromI) | (M, ReqWrFromI) => owner_cmd(Inv::None, StTr, Some(I), M, M),
        (E, Replacement) | (M, Replacement) | (O, Replacement) => writeback_replacement(),

        (M, ReqRd) | (M, ReqRdNE) => owner_cmd(Inv::None, StTr, Some(O), S, O),

        (O, ReqRd) | (O, ReqRdNE) => owner_cmd(Inv::None, Tr, None, S, O),
        (F, ReqRd) | (F, ReqRdNE) => owner_cmd(Inv::None, Tr, None, S, F),
        (O, ReqWrFromI) | (F, ReqWrFromI) => owner_cmd(Inv::AllSharers, StTr, Some(I), M, M),
        (O, ReqWrFromS) | (F, ReqWrFromS) => upgrade(Inv::OtherSharersAndOwner),
        (O, ReqWrFromOF) | (F, ReqWrFromOF) => upgrade(Inv::AllSharers),

        _ => {
            return Err(ProtocolError::ImpossibleTransition {
                state: dir_state,
                event: req.column().to_string(),
            })
        }
    };
    Ok(plan)
}

/// Protocol family selected for an engine or the model checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Protocol {
    #[default]
    Moesif,
    Mesi,
}

impl Protocol {
    /// Directory plan for this protocol. MESI never creates O or F: reads of an
    /// owned block demote the owner to S and write the block back.
    pub fn plan(
        self,
        dir_state: CoherenceState,
        req: DirRequestKind,
    ) -> Result<DirectivePlan, ProtocolError> {
        match self {
            Protocol::Moesif => dir_request_plan(dir_state, req),
            Protocol::Mesi => match (dir_state, req) {
                (O, _) | (F, _) | (_, DirRequestKind::ReqWrFromOF) => {
                    Err(ProtocolError::ImpossibleTransition {
                        state: dir_state,
                        event: req.column().to_string(),
                    })
                }
                (E, DirRequestKind::ReqRd)
                | (E, DirRequestKind::ReqRdNE)
                | (M, DirRequestKind::ReqRd)
                | (M, DirRequestKind::ReqRdNE) => Ok(owner_cmd(
                    InvalidateSet::None,
                    CommandKind::StTrWb,
                    Some(S),
                    S,
                    S,
                )),
                _ => dir_request_plan(dir_state, req),
            },
        }
    }

    pub fn states(self) -> &'static [CoherenceState] {
        match self {
            Protocol::Moesif => &CoherenceState::ALL,
            Protocol::Mesi => &[I, S, E, M],
        }
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "moesif" => Ok(Protocol::Moesif),
            "mesi" => Ok(Protocol::Mesi),
            other => Err(format!(
                "unknown protocol `{other}` (expected mesi or moesif)"
            )),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Moesif => "moesif",
            Protocol::Mesi => "mesi",
        })
    }
}

/// Directory summary of a block: the owner's state if there is an owner,
/// otherwise S if anyone shares it, otherwise I.
pub fn dir_summary(states: impl IntoIterator<Item = CoherenceState>) -> CoherenceState {
    let mut summary = I;
    for s in states {
        if s.is_owner() {
            return s;
        }
        if s == S {
            summary = S;
        }
    }
    summary
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AddressClass {
    CacheableCoherent,
    UncachedToCacheable,
    UncachedToUncacheable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub start: u64,
    pub end: u64,
    pub cacheable: bool,
}

/// Partition of the physical address space into cacheable and I/O regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMap {
    regions: Vec<Region>,
}

impl RegionMap {
    pub fn new(regions: Vec<Region>) -> Self {
        RegionMap { regions }
    }

    pub fn is_cacheable(&self, addr: u64) -> bool {
        self.regions
            .iter()
            .find(|r| addr >= r.start && addr < r.end)
            .map(|r| r.cacheable)
            .unwrap_or(false)
    }
}

impl Default for RegionMap {
    /// I/O below 2 GiB, cacheable DRAM above it.
    fn default() -> Self {
        RegionMap::new(vec![
            Region {
                start: 0,
                end: 0x8000_0000,
                cacheable: false,
            },
            Region {
                start: 0x8000_0000,
                end: u64::MAX,
                cacheable: true,
            },
        ])
    }
}

pub fn classify_request(addr: u64, uncached: bool, regions: &RegionMap) -> AddressClass {
    match (regions.is_cacheable(addr), uncached) {
        (true, false) => AddressClass::CacheableCoherent,
        (true, true) => AddressClass::UncachedToCacheable,
        (false, _) => AddressClass::UncachedToUncacheable,
    }
}

/// Reference rendering of the reference controller table, one row per
/// state, `|`-separated, blanks empty. `X` marks directory-supplied states.
pub const LCE_TABLE_GOLDEN: &str = "\
State | Load | Store | Inv | DATA | STW | WB | TR | ST-WB | ST-TR | ST-TR-WB
I | ReqRd | ReqWr |  | CohAck/X |  |  |  |  |  |
S | Hit | ReqWr | InvAck/I |  | CohAck/M |  |  |  |  |
E | Hit | Hit/M |  |  |  | NullWB/E |  | NullWB/X | DATA/X | DATA, NullWB/X
M | Hit | Hit |  |  |  | DirtyWB/M |  | DirtyWB/X | DATA/X | DATA, DirtyWB/X
O | Hit | ReqWr |  |  | CohAck/M | DirtyWB/O | DATA/O | DirtyWB/X | DATA/X |
F | Hit | ReqWr |  |  | CohAck/M |  | DATA/F |  | DATA/X |
";

/// Reference rendering of the reference directory table. Superscripts are
/// written as `ST^F-TR^S-WB`.
pub const DIR_TABLE_GOLDEN: &str = "\
Dir State | ReqRd | ReqRd-NE | ReqWr from I | ReqWr from S | ReqWr from O/F | Replacement
I | DATA to Req/E | DATA to Req/S | DATA to Req/M |  |  |
S | DATA to Req/S | DATA to Req/S | Inv all S, DATA to Req/M | Inv other S, STW^M to Req/M |  |
E | ST^F-TR^S-WB to Owner/F | ST^F-TR^S-WB to Owner/F | ST^I-TR^M to Owner/M |  |  | ST^I-WB to Req/I
M | ST^O-TR^S to Owner/O | ST^O-TR^S to Owner/O | ST^I-TR^M to Owner/M |  |  | ST^I-WB to Req/I
O | TR^S to Owner/O | TR^S to Owner/O | Inv all S, ST^I-TR^M to Owner/M | Inv other S and Owner, STW^M to Req/M | Inv all S, STW^M to Req/M | ST^I-WB to Req/I
F | TR^S to Owner/F | TR^S to Owner/F | Inv all S, ST^I-TR^M to Owner/M | Inv other S and Owner, STW^M to Req/M | Inv all S, STW^M to Req/M |
";

/// Renders one controller cell in the reference notation.
pub fn render_lce_cell(state: CoherenceState, column: &str) -> String {
    let col = LCE_COLUMNS
        .iter()
        .position(|c| *c == column)
        .unwrap_or_else(|| panic!("unknown column {column}"));
    let next_text = |next: Next| match next {
        Next::Fixed(s) => format!("/{s}"),
        Next::X => "/X".to_string(),
        Next::Same => String::new(),
    };
    match lce_cell(state, col) {
        LceCell::Blank => String::new(),
        LceCell::Hit(next) => format!("Hit{}", next_text(next)),
        LceCell::Miss(LceSend::ReqRd) => "ReqRd".into(),
        LceCell::Miss(_) => "ReqWr".into(),
        LceCell::Respond(sends, next) => {
            let names: Vec<&str> = sends
                .iter()
                .map(|s| match s {
                    CellSend::InvAck => "InvAck",
                    CellSend::CohAck => "CohAck",
                    CellSend::NullWb => "NullWB",
                    CellSend::DirtyWb => "DirtyWB",
                    CellSend::Data => "DATA",
                })
                .collect();
            format!("{}{}", names.join(", "), next_text(next))
        }
    }
}

fn render_directive(d: &Directive) -> String {
    let sup = |s: Option<CoherenceState>| s.map(|s| format!("^{s}")).unwrap_or_default();
    let name = match d.kind {
        CommandKind::StTr => format!("ST{}-TR{}", sup(d.set_state), sup(d.transfer_state)),
        CommandKind::StTrWb => format!("ST{}-TR{}-WB", sup(d.set_state), sup(d.transfer_state)),
        CommandKind::Tr => format!("TR{}", sup(d.transfer_state)),
        CommandKind::StWb => format!("ST{}-WB", sup(d.set_state)),
        CommandKind::StW => format!("STW{}", sup(d.set_state)),
    };
    let to = match d.target {
        CommandTarget::Owner => "Owner",
        CommandTarget::Requester => "Req",
    };
    format!("{name} to {to}")
}

/// Renders one directory cell in the reference notation.
pub fn render_dir_cell(protocol: Protocol, state: CoherenceState, req: DirRequestKind) -> String {
    let Ok(plan) = protocol.plan(state, req) else {
        return String::new();
    };
    let mut parts = Vec::new();
    match plan.invalidate {
        InvalidateSet::None => {}
        InvalidateSet::AllSharers => parts.push("Inv all S".to_string()),
        InvalidateSet::OtherSharers => parts.push("Inv other S".to_string()),
        InvalidateSet::OtherSharersAndOwner => parts.push("Inv other S and Owner".to_string()),
    }
    if let Some(cmd) = &plan.command {
        parts.push(render_directive(cmd));
    }
    if plan.grant == Grant::DataFromMemory {
        parts.push("DATA to Req".to_string());
    }
    format!("{}/{}", parts.join(", "), plan.next_dir_state)
}

/// Renders the implemented controller table in the golden text layout.
/// Cells listed in [`LCE_TABLE_EXTENSIONS`] are rendered blank so the output
/// is comparable with the reference table.
pub fn render_lce_table() -> String {
    let mut out = String::from("State | ");
    out.push_str(&LCE_COLUMNS.join(" | "));
    out.push('\n');
    for state in CoherenceState::ALL {
        let cells: Vec<String> = LCE_COLUMNS
            .iter()
            .map(|col| {
                if LCE_TABLE_EXTENSIONS.contains(&(state, *col)) {
                    String::new()
                } else {
                    render_lce_cell(state, col)
                }
            })
            .collect();
        out.push_str(format!("{state} | {}", cells.join(" | ")).trim_end());
        out.push('\n');
    }
    out
}

pub fn render_dir_table() -> String {
    let mut out = String::from("Dir State | ");
    let cols: Vec<&str> = DirRequestKind::ALL.iter().map(|k| k.column()).collect();
    out.push_str(&cols.join(" | "));
    out.push('\n');
    for state in CoherenceState::ALL {
        let cells: Vec<String> = DirRequestKind::ALL
            .iter()
            .map(|k| render_dir_cell(Protocol::Moesif, state, *k))
            .collect();
        out.push_str(format!("{state} | {}", cells.join(" | ")).trim_end());
        out.push('\n');
    }
    out
}

/// Checks the coded tables against the embedded golden renderings.
pub fn validate_tables() -> Result<(), String> {
    let lce = render_lce_table();
    if lce != LCE_TABLE_GOLDEN {
        return Err(format!("controller table drift:\n{lce}"));
    }
    let dir = render_dir_table();
    if dir != DIR_TABLE_GOLDEN {
        return Err(format!("directory table drift:\n{dir}"));
    }
    Ok(())
}
