//! Cell-by-cell expectations for both transition tables, written out by hand
//! rather than taken from the library's own rendering.

use bedrock::protocol::{
    lce_event_action, render_dir_cell, render_lce_cell, CoherenceState, DirRequestKind, LceEvent,
    LceSend, Protocol, ProtocolError,
};
use CoherenceState::*;
use DirRequestKind::*;

const REQS: [DirRequestKind; 6] = [
    ReqRd,
    ReqRdNE,
    ReqWrFromI,
    ReqWrFromS,
    ReqWrFromOF,
    Replacement,
];

// Row order I S E M O F, column order as in REQS. Empty = no transition.
const DIR: [[&str; 6]; 6] = [
    [
        "DATA to Req/E",
        "DATA to Req/S",
        "DATA to Req/M",
        "",
        "",
        "",
    ],
    [
        "DATA to Req/S",
        "DATA to Req/S",
        "Inv all S, DATA to Req/M",
        "Inv other S, STW^M to Req/M",
        "",
        "",
    ],
    [
        "ST^F-TR^S-WB to Owner/F",
        "ST^F-TR^S-WB to Owner/F",
        "ST^I-TR^M to Owner/M",
        "",
        "",
        "ST^I-WB to Req/I",
    ],
    [
        "ST^O-TR^S to Owner/O",
        "ST^O-TR^S to Owner/O",
        "ST^I-TR^M to Owner/M",
        "",
        "",
        "ST^I-WB to Req/I",
    ],
    [
        "TR^S to Owner/O",
        "TR^S to Owner/O",
        "Inv all S, ST^I-TR^M to Owner/M",
        "Inv other S and Owner, STW^M to Req/M",
        "Inv all S, STW^M to Req/M",
        "ST^I-WB to Req/I",
    ],
    [
        "TR^S to Owner/F",
        "TR^S to Owner/F",
        "Inv all S, ST^I-TR^M to Owner/M",
        "Inv other S and Owner, STW^M to Req/M",
        "Inv all S, STW^M to Req/M",
        "",
    ],
];

const STATES: [CoherenceState; 6] = [I, S, E, M, O, F];

#[test]
fn directory_cells() {
    let mut checked = 0;
    for (r, state) in STATES.iter().enumerate() {
        for (c, req) in REQS.iter().enumerate() {
            let want = DIR[r][c];
            assert_eq!(
                render_dir_cell(Protocol::Moesif, *state, *req),
                want,
                "{state} {req:?}"
            );
            let plan = Protocol::Moesif.plan(*state, *req);
            if want.is_empty() {
                assert!(
                    matches!(plan, Err(ProtocolError::ImpossibleTransition { .. })),
                    "{state} {req:?} should be impossible"
                );
            } else {
                assert!(plan.is_ok());
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 36);
}

const COLS: [&str; 10] = [
    "Load", "Store", "Inv", "DATA", "STW", "WB", "TR", "ST-WB", "ST-TR", "ST-TR-WB",
];

// Inv in O and F is filled in so owners can be invalidated; see the ledger.
const LCE: [[&str; 10]; 6] = [
    ["ReqRd", "ReqWr", "", "CohAck/X", "", "", "", "", "", ""],
    [
        "Hit", "ReqWr", "InvAck/I", "", "CohAck/M", "", "", "", "", "",
    ],
    [
        "Hit",
        "Hit/M",
        "",
        "",
        "",
        "NullWB/E",
        "",
        "NullWB/X",
        "DATA/X",
        "DATA, NullWB/X",
    ],
    [
        "Hit",
        "Hit",
        "",
        "",
        "",
        "DirtyWB/M",
        "",
        "DirtyWB/X",
        "DATA/X",
        "DATA, DirtyWB/X",
    ],
    [
        "Hit",
        "ReqWr",
        "InvAck/I",
        "",
        "CohAck/M",
        "DirtyWB/O",
        "DATA/O",
        "DirtyWB/X",
        "DATA/X",
        "",
    ],
    [
        "Hit", "ReqWr", "InvAck/I", "", "CohAck/M", "", "DATA/F", "", "DATA/X", "",
    ],
];

fn sample_event(col: &str) -> LceEvent {
    match col {
        "Load" => LceEvent::Load,
        "Store" => LceEvent::Store,
        "Inv" => LceEvent::Inv,
        "DATA" => LceEvent::Data(S),
        "STW" => LceEvent::StW(M),
        "WB" => LceEvent::Wb,
        "TR" => LceEvent::Tr { transfer: S },
        "ST-WB" => LceEvent::StWb { set: I },
        "ST-TR" => LceEvent::StTr {
            set: O,
            transfer: S,
        },
        "ST-TR-WB" => LceEvent::StTrWb {
            set: F,
            transfer: S,
        },
        _ => unreachable!(),
    }
}

#[test]
fn controller_cells() {
    let mut blanks = 0;
    for (r, state) in STATES.iter().enumerate() {
        for (c, col) in COLS.iter().enumerate() {
            let want = LCE[r][c];
            assert_eq!(render_lce_cell(*state, col), want, "{state} {col}");
            let got = lce_event_action(*state, sample_event(col));
            if want.is_empty() {
                blanks += 1;
                assert_eq!(
                    got,
                    Err(ProtocolError::ImpossibleTransition {
                        state: *state,
                        event: col.to_string()
                    })
                );
            } else {
                assert!(got.is_ok(), "{state} {col}: {got:?}");
            }
        }
    }
    assert_eq!(blanks, 27);
}

#[test]
fn directory_supplied_states_resolve() {
    assert_eq!(
        lce_event_action(I, LceEvent::Data(E)).unwrap().next_state,
        E
    );
    let a = lce_event_action(
        M,
        LceEvent::StTrWb {
            set: F,
            transfer: S,
        },
    )
    .unwrap();
    assert_eq!(a.next_state, F);
    assert_eq!(a.sends, vec![LceSend::DataToTarget(S), LceSend::DirtyWb]);
    let a = lce_event_action(E, LceEvent::StWb { set: I }).unwrap();
    assert_eq!(
        (a.sends.as_slice(), a.next_state),
        (&[LceSend::NullWb][..], I)
    );
}
