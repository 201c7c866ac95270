//! Seeded random traces.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::trace::{TraceKind, TraceOp};
use crate::lce::OpKind;

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadParams {
    pub lces: usize,
    pub ops: usize,
    /// Distinct blocks touched. Small footprints crowd few way groups.
    pub footprint: usize,
    pub write_ratio: f64,
    /// Probability an access goes to the pool every cache shares rather than
    /// the issuing cache's private slice.
    pub sharing: f64,
    /// Probability an access is an atomic (AMO or LR/SC pair half).
    pub atomic_ratio: f64,
    pub uncached_ratio: f64,
    pub fence_ratio: f64,
    pub block_bytes: usize,
    pub base: u64,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams {
            lces: 2,
            ops: 1000,
            footprint: 256,
            write_ratio: 0.3,
            sharing: 0.5,
            atomic_ratio: 0.02,
            uncached_ratio: 0.01,
            fence_ratio: 0.005,
            block_bytes: 64,
            base: 0x8000_0000,
        }
    }
}

pub fn random_workload(seed: u64, p: &WorkloadParams) -> Vec<TraceOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lces = p.lces.max(1);
    let footprint = p.footprint.max(1);
    let shared = (footprint / 4).max(1);
    let private = ((footprint - shared.min(footprint - 1)) / lces).max(1);
    let words = (p.block_bytes / 8).max(1) as u64;
    let mut out = Vec::with_capacity(p.ops);
    for _ in 0..p.ops {
        let lce = rng.gen_range(0..lces);
        if rng.gen_bool(p.fence_ratio) {
            out.push(TraceOp {
                lce,
                kind: TraceKind::Fence,
                addr: 0,
                size: 8,
                data: 0,
            });
            continue;
        }
        let block = if rng.gen_bool(p.sharing) {
            rng.gen_range(0..shared)
        } else {
            shared + lce * private + rng.gen_range(0..private)
        } as u64;
        let addr = p.base + block * p.block_bytes as u64 + rng.gen_range(0..words) * 8;
        let write = rng.gen_bool(p.write_ratio);
        let kind = if rng.gen_bool(p.atomic_ratio) {
            [OpKind::AmoAdd, OpKind::AmoSwap, OpKind::Lr, OpKind::Sc][rng.gen_range(0..4)]
        } else if rng.gen_bool(p.uncached_ratio) {
            if write {
                OpKind::UncachedStore
            } else {
                OpKind::UncachedLoad
            }
        } else if write {
            OpKind::Store
        } else {
            OpKind::Load
        };
        out.push(TraceOp {
            lce,
            kind: TraceKind::Op(kind),
            addr,
            size: 8,
            data: rng.gen(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        let p = WorkloadParams::default();
        assert_eq!(random_workload(1, &p), random_workload(1, &p));
        assert_ne!(random_workload(1, &p), random_workload(2, &p));
    }

    #[test]
    fn read_only() {
        let p = WorkloadParams {
            write_ratio: 0.0,
            atomic_ratio: 0.0,
            ops: 2000,
            ..Default::default()
        };
        assert!(random_workload(3, &p)
            .iter()
            .all(|o| !matches!(o.kind, TraceKind::Op(OpKind::Store | OpKind::UncachedStore))));
    }

    #[test]
    fn private_slices_do_not_overlap() {
        let p = WorkloadParams {
            lces: 4,
            sharing: 0.0,
            fence_ratio: 0.0,
            ops: 4000,
            ..Default::default()
        };
        let mut owner = std::collections::HashMap::new();
        for o in random_workload(5, &p) {
            let b = o.addr / 64;
            assert_eq!(*owner.entry(b).or_insert(o.lce), o.lce);
            assert_eq!(o.addr % 8, 0);
        }
    }
}
