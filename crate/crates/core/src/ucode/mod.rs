//! Microcode-programmable coherence engine: ISA, assembler and pipeline model.

pub mod asm;
pub mod engine;
pub mod interp;
pub mod isa;

pub use asm::{assemble, assemble_with, disassemble, listing, AsmError, Diagnostic, MicroProgram};
pub use engine::{UcodeCce, UcodeStats};
pub use isa::{decode, encode, DecodeError, MicroInstr, Op, IMEM_SIZE};

use crate::protocol::Protocol;

pub const MOESIF_SOURCE: &str = include_str!("programs/moesif.s");
pub const MESI_SOURCE: &str = include_str!("programs/mesi.s");

/// Source of the program shipped for a protocol.
pub fn shipped_source(protocol: Protocol) -> &'static str {
    match protocol {
        Protocol::Moesif => MOESIF_SOURCE,
        Protocol::Mesi => MESI_SOURCE,
    }
}

/// Assembled program shipped for a protocol.
pub fn shipped_program(protocol: Protocol) -> MicroProgram {
    assemble(shipped_source(protocol)).expect("shipped microcode assembles")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_programs_fit() {
        for p in [Protocol::Moesif, Protocol::Mesi] {
            let prog = shipped_program(p);
            assert!(prog.len() <= IMEM_SIZE);
            prog.check(IMEM_SIZE).unwrap();
        }
        assert_eq!(shipped_program(Protocol::Moesif).len(), 126);
    }

    #[test]
    fn disassembly_reassembles() {
        for p in [Protocol::Moesif, Protocol::Mesi] {
            let prog = shipped_program(p);
            let again = assemble(&disassemble(&prog)).unwrap();
            assert_eq!(again.instrs, prog.instrs);
            let bin = MicroProgram::from_binary(&prog.to_binary()).unwrap();
            assert_eq!(bin.instrs, prog.instrs);
        }
    }
}
