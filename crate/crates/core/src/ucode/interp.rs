//! Reference interpreter for the register and flag subset of the ISA.
//!
//! Untimed and independent of the pipeline model; used as the oracle in the
//! lockstep tests below.

use super::isa::{AluOp, FlagBranch, FlagOp, MicroInstr, Op, Reg};
use crate::mshr::{Flag, Flags};
use crate::protocol::CoherenceState;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchState {
    pub gprs: [u64; 8],
    pub flags: Flags,
    pub nxt: CoherenceState,
    pub csr: CoherenceState,
    pub afr: bool,
    pub owner: (u64, u64, CoherenceState),
    pub req_lce: u64,
    pub num_lce: u64,
}

impl ArchState {
    pub fn new(num_lce: u64) -> Self {
        ArchState {
            gprs: [0; 8],
            flags: Flags::default(),
            nxt: CoherenceState::I,
            csr: CoherenceState::I,
            afr: true,
            owner: (0, 0, CoherenceState::I),
            req_lce: 0,
            num_lce,
        }
    }

    fn get(&self, r: Reg) -> u64 {
        match r {
            Reg::Gpr(i) => self.gprs[i as usize],
            Reg::Nxt => self.nxt.bits() as u64,
            Reg::Csr => self.csr.bits() as u64,
            Reg::Afr => u64::from(self.afr),
            Reg::OwnerLce => self.owner.0,
            Reg::OwnerWay => self.owner.1,
            Reg::OwnerState => self.owner.2.bits() as u64,
            Reg::ReqLce => self.req_lce,
            Reg::NumLce => self.num_lce,
        }
    }

    fn put(&mut self, r: Reg, v: u64) -> Result<(), String> {
        let st = |v: u64| {
            CoherenceState::ALL
                .into_iter()
                .find(|s| s.bits() as u64 == v)
                .ok_or_else(|| format!("{v} is not a state"))
        };
        match r {
            Reg::Gpr(i) => self.gprs[i as usize] = v,
            Reg::Nxt => self.nxt = st(v)?,
            Reg::Csr => self.csr = st(v)?,
            Reg::Afr => self.afr = v != 0,
            other => return Err(format!("{} is read-only", other.name())),
        }
        Ok(())
    }
}

/// Result of one step: the next pc and, for branches, whether it was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub next: usize,
    pub taken: Option<bool>,
}

/// Executes one instruction at `pc`. `None` for instructions outside the
/// subset.
pub fn step(s: &mut ArchState, pc: usize, i: &MicroInstr) -> Option<Result<Outcome, String>> {
    let next = pc + 1;
    let seq = Outcome { next, taken: None };
    let jump = |c: bool, t: u8| Outcome {
        next: if c { t as usize } else { next },
        taken: Some(c),
    };
    let r = match i.op {
        Op::Sf(f) => {
            s.flags.0 |= 1 << f as u16;
            Ok(seq)
        }
        Op::Sfz(f) => {
            s.flags.0 &= !(1 << f as u16);
            Ok(seq)
        }
        Op::FlagLogic { op, a, b, rd } => {
            let (x, y) = (bit(s.flags, a), bit(s.flags, b));
            let v = match op {
                FlagOp::And => x & y,
                FlagOp::Or => x | y,
                FlagOp::Nand => !(x & y),
            };
            s.put(rd, u64::from(v)).map(|_| seq)
        }
        Op::Notf { a, rd } => {
            let v = !bit(s.flags, a);
            s.put(rd, u64::from(v)).map(|_| seq)
        }
        Op::Bf { cond, target, mask } => {
            let hits = (0..16)
                .filter(|b| mask >> b & 1 == 1 && s.flags.0 >> b & 1 == 1)
                .count();
            let want = mask.count_ones() as usize;
            let c = match cond {
                FlagBranch::All => hits == want,
                FlagBranch::None => hits == 0,
                FlagBranch::Any => hits > 0,
                FlagBranch::NotAll => hits < want,
            };
            Ok(jump(c, target))
        }
        Op::Alu { op, rd, ra, rb } => {
            let (a, b) = (s.get(ra), s.get(rb));
            let v = match op {
                AluOp::Add => a.wrapping_add(b),
                AluOp::Sub => a.wrapping_sub(b),
                AluOp::And => a & b,
                AluOp::Or => a | b,
                AluOp::Xor => a ^ b,
                AluOp::Shl => a << (b % 64),
                AluOp::Shr => a >> (b % 64),
            };
            s.put(rd, v).map(|_| seq)
        }
        Op::Addi { rd, ra, imm } => {
            let v = (s.get(ra) as i128 + imm as i128) as u64;
            s.put(rd, v).map(|_| seq)
        }
        Op::Mov { rd, ra } => {
            let v = s.get(ra);
            s.put(rd, v).map(|_| seq)
        }
        Op::Movi { rd, imm } => s.put(rd, imm as i64 as u64).map(|_| seq),
        Op::Beq { ne, ra, rb, target } => Ok(jump((s.get(ra) == s.get(rb)) ^ ne, target)),
        Op::Beqi {
            ne,
            ra,
            imm,
            target,
        } => Ok(jump((s.get(ra) == imm as i64 as u64) ^ ne, target)),
        Op::Bi { target } => Ok(jump(true, target)),
        _ => return None,
    };
    Some(r)
}

fn bit(f: Flags, flag: Flag) -> bool {
    f.0 >> flag as u16 & 1 == 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cce::{CceConfig, Engine};
    use crate::network::{NetConfig, Network};
    use crate::ucode::asm::MicroProgram;
    use crate::ucode::engine::UcodeCce;
    use crate::ucode::isa::{InQueue, MicroInstr};
    use proptest::prelude::*;

    fn arb_reg(writable: bool) -> impl Strategy<Value = Reg> {
        if writable {
            (0u8..8).prop_map(Reg::Gpr).boxed()
        } else {
            prop_oneof![
                4 => (0u8..8).prop_map(Reg::Gpr),
                1 => (8u32..16).prop_map(Reg::from_code),
            ]
            .boxed()
        }
    }

    fn arb_flag() -> impl Strategy<Value = Flag> {
        prop::sample::select(Flag::ALL.to_vec())
    }

    /// One instruction at `pc` of a `len`-long body; branches only go forward.
    fn arb_instr(pc: usize, len: usize) -> BoxedStrategy<MicroInstr> {
        let tgt = (pc as u8 + 1)..=(len as u8);
        let op =
            prop_oneof![
                arb_flag().prop_map(Op::Sf),
                arb_flag().prop_map(Op::Sfz),
                (0..3usize, arb_flag(), arb_flag(), arb_reg(true)).prop_map(|(o, a, b, rd)| {
                    Op::FlagLogic {
                        op: [FlagOp::And, FlagOp::Or, FlagOp::Nand][o],
                        a,
                        b,
                        rd,
                    }
                }),
                (arb_flag(), arb_reg(true)).prop_map(|(a, rd)| Op::Notf { a, rd }),
                (0..4usize, tgt.clone(), 1u16..(1 << 14)).prop_map(|(c, target, mask)| Op::Bf {
                    cond: [
                        FlagBranch::All,
                        FlagBranch::None,
                        FlagBranch::Any,
                        FlagBranch::NotAll
                    ][c],
                    target,
                    mask
                }),
                (
                    prop::sample::select(AluOp::ALL.to_vec()),
                    arb_reg(true),
                    arb_reg(false),
                    arb_reg(false)
                )
                    .prop_map(|(op, rd, ra, rb)| Op::Alu { op, rd, ra, rb }),
                (arb_reg(true), arb_reg(false), -2048i16..2048)
                    .prop_map(|(rd, ra, imm)| Op::Addi { rd, ra, imm }),
                (arb_reg(true), arb_reg(false)).prop_map(|(rd, ra)| Op::Mov { rd, ra }),
                (arb_reg(true), -(1i32 << 19)..(1 << 19))
                    .prop_map(|(rd, imm)| Op::Movi { rd, imm }),
                (any::<bool>(), arb_reg(false), arb_reg(false), tgt.clone())
                    .prop_map(|(ne, ra, rb, target)| Op::Beq { ne, ra, rb, target }),
                (any::<bool>(), arb_reg(false), -4i16..4, tgt.clone()).prop_map(
                    |(ne, ra, imm, target)| Op::Beqi {
                        ne,
                        ra,
                        imm,
                        target
                    }
                ),
                tgt.prop_map(|target| Op::Bi { target }),
            ];
        (op, any::<bool>())
            .prop_map(|(op, pt)| {
                let mut i = MicroInstr::new(op);
                if i.branch_target().is_some() && !matches!(op, Op::Bi { .. }) {
                    i.predict_taken = pt;
                }
                i
            })
            .boxed()
    }

    fn arb_program() -> impl Strategy<Value = Vec<MicroInstr>> {
        (1usize..40).prop_flat_map(|len| (0..len).map(|pc| arb_instr(pc, len)).collect::<Vec<_>>())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        /// The pipeline model and the interpreter agree on every register, flag
        /// and pc, and the pipeline spends one cycle per instruction plus one
        /// per mispredicted branch.
        #[test]
        fn lockstep_with_pipeline(body in arb_program(), seed in any::<[u64; 8]>()) {
            let end = body.len();
            let mut instrs = body.clone();
            instrs.push(MicroInstr::new(Op::Wfq { mask: 1 << InQueue::Req.code() as u8 }));
            let prog = MicroProgram { instrs, ..Default::default() };
            let cfg = CceConfig::single(4, 64, 8, 64);
            let mut eng = UcodeCce::new(cfg, prog).unwrap();
            eng.regs.gprs = seed;
            let mut net = Network::new(NetConfig::default());

            let mut oracle = ArchState::new(4);
            oracle.gprs = seed;
            let mut pc = 0;
            let mut trace = vec![0];
            let mut mispredicts = 0u64;
            while pc != end {
                let i = &body[pc];
                let out = step(&mut oracle, pc, i).unwrap().unwrap();
                if out.taken.is_some_and(|t| t != i.predict_taken) {
                    mispredicts += 1;
                }
                pc = out.next;
                trace.push(pc);
            }
            let mut seen = vec![0];
            let mut now = 0;
            while eng.pc() != end || !eng.at_ready() {
                let before = eng.pc();
                eng.tick(now, &mut net).unwrap();
                if eng.pc() != before {
                    seen.push(eng.pc());
                }
                now += 1;
                prop_assert!(now < 10_000);
            }
            prop_assert_eq!(&seen, &trace);
            prop_assert_eq!(eng.regs.gprs, oracle.gprs);
            prop_assert_eq!(eng.regs.mshr.flags, oracle.flags);
            prop_assert_eq!(eng.regs.auto_fwd, oracle.afr);
            prop_assert_eq!(eng.stats.retired, (trace.len() - 1) as u64);
            prop_assert_eq!(eng.stats.mispredicts, mispredicts);
            prop_assert_eq!(eng.shared().counters.busy, eng.stats.retired + mispredicts);
        }
    }

    #[test]
    fn flag_branch_conditions() {
        let mut s = ArchState::new(2);
        s.flags.0 = 0b101;
        let br = |cond, mask| {
            MicroInstr::new(Op::Bf {
                cond,
                target: 9,
                mask,
            })
        };
        assert_eq!(
            step(&mut s, 0, &br(FlagBranch::All, 0b101)),
            Some(Ok(Outcome {
                next: 9,
                taken: Some(true)
            }))
        );
        assert_eq!(
            step(&mut s, 0, &br(FlagBranch::All, 0b111)),
            Some(Ok(Outcome {
                next: 1,
                taken: Some(false)
            }))
        );
        assert_eq!(
            step(&mut s, 0, &br(FlagBranch::None, 0b010)),
            Some(Ok(Outcome {
                next: 9,
                taken: Some(true)
            }))
        );
        assert_eq!(
            step(&mut s, 0, &br(FlagBranch::Any, 0b011)),
            Some(Ok(Outcome {
                next: 9,
                taken: Some(true)
            }))
        );
        assert_eq!(
            step(&mut s, 0, &br(FlagBranch::NotAll, 0b101)),
            Some(Ok(Outcome {
                next: 1,
                taken: Some(false)
            }))
        );
    }

    #[test]
    fn read_only_registers_rejected() {
        let mut s = ArchState::new(2);
        let i = MicroInstr::new(Op::Movi {
            rd: Reg::OwnerLce,
            imm: 1,
        });
        assert!(step(&mut s, 0, &i).unwrap().is_err());
        let i = MicroInstr::new(Op::Movi {
            rd: Reg::Nxt,
            imm: 9,
        });
        assert!(step(&mut s, 0, &i).unwrap().is_err());
    }
}
