//! Runs one trace on both engines and diffs the architectural outcome.

use std::collections::BTreeMap;
use std::fmt;

use super::config::{EngineKind, IssueMode, SimConfig};
use super::system::{run_trace, CachedLine, SimError, Snapshot};
use super::trace::TraceOp;

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub ops: usize,
    pub fsm_cycles: u64,
    pub ucode_cycles: u64,
    /// Ucode cycles over FSM cycles; 1.0 when both are zero.
    pub ratio: f64,
    pub mismatches: Vec<String>,
}

impl EquivalenceReport {
    pub fn equivalent(&self) -> bool {
        self.mismatches.is_empty()
    }
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ops: {}", self.ops)?;
        writeln!(f, "fsm cycles: {}", self.fsm_cycles)?;
        writeln!(f, "ucode cycles: {}", self.ucode_cycles)?;
        writeln!(f, "cycle ratio (ucode/fsm): {:.3}", self.ratio)?;
        if self.equivalent() {
            writeln!(f, "equivalent: yes")
        } else {
            writeln!(f, "equivalent: no ({} mismatches)", self.mismatches.len())?;
            for m in &self.mismatches {
                writeln!(f, "  {m}")?;
            }
            Ok(())
        }
    }
}

/// Runs `trace` under both engines with serialized issue, so the outcome does
/// not depend on either engine's timing, and compares memory, cache contents
/// and the quiescent directory. E and M are treated as equal throughout.
pub fn compare_engines(cfg: &SimConfig, trace: &[TraceOp]) -> Result<EquivalenceReport, SimError> {
    let run = |engine| {
        let c = SimConfig {
            engine,
            issue: IssueMode::Serialized,
            ..cfg.clone()
        };
        run_trace(&c, trace)
    };
    let fsm = run(EngineKind::Fsm)?;
    let uc = run(EngineKind::Ucode)?;
    let ratio = if fsm.now == 0 {
        if uc.now == 0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        uc.now as f64 / fsm.now as f64
    };
    Ok(EquivalenceReport {
        ops: trace.len(),
        fsm_cycles: fsm.now,
        ucode_cycles: uc.now,
        ratio,
        mismatches: diff(&fsm.snapshot(), &uc.snapshot()),
    })
}

fn diff_maps<K: Ord + fmt::Debug, V: PartialEq + fmt::Debug>(
    what: &str,
    a: BTreeMap<K, V>,
    mut b: BTreeMap<K, V>,
    out: &mut Vec<String>,
) {
    for (k, va) in a {
        match b.remove(&k) {
            Some(vb) if vb == va => {}
            Some(vb) => out.push(format!("{what} {k:x?}: fsm {va:x?}, ucode {vb:x?}")),
            None => out.push(format!("{what} {k:x?}: only under fsm")),
        }
    }
    for k in b.into_keys() {
        out.push(format!("{what} {k:x?}: only under ucode"));
    }
}

/// Lists every difference between two snapshots.
pub fn diff(a: &Snapshot, b: &Snapshot) -> Vec<String> {
    let mut out = Vec::new();
    // An all-zero block and an untouched block read the same.
    let mem = |s: &Snapshot| -> BTreeMap<u64, Vec<u8>> {
        s.memory
            .iter()
            .filter(|(_, d)| d.iter().any(|x| *x != 0))
            .cloned()
            .collect()
    };
    diff_maps("memory", mem(a), mem(b), &mut out);
    if a.caches.len() != b.caches.len() {
        out.push(format!(
            "cache count: {} vs {}",
            a.caches.len(),
            b.caches.len()
        ));
    }
    for (i, (ca, cb)) in a.caches.iter().zip(&b.caches).enumerate() {
        let lines = |c: &Vec<CachedLine>| -> BTreeMap<u64, _> {
            c.iter()
                .map(|(addr, w, s, d)| (*addr, (*w, *s, d.clone())))
                .collect()
        };
        diff_maps(&format!("lce {i} block"), lines(ca), lines(cb), &mut out);
    }
    let dir = |s: &Snapshot| -> BTreeMap<_, _> {
        s.directory
            .iter()
            .map(|(c, l, set, w, t, st)| ((*c, *l, *set, *w), (*t, *st)))
            .collect()
    };
    diff_maps("directory (cce, lce, set, way)", dir(a), dir(b), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::system::run_trace;
    use crate::harness::trace::parse_trace;
    use crate::harness::workload::{random_workload, WorkloadParams};

    #[test]
    fn empty_trace_is_equivalent_with_unit_ratio() {
        let r = compare_engines(&SimConfig::default(), &[]).unwrap();
        assert!(r.equivalent());
        assert_eq!(r.ratio, 1.0);
    }

    #[test]
    fn random_trace_is_equivalent() {
        let cfg = SimConfig {
            cores: 4,
            ..SimConfig::default()
        };
        let p = WorkloadParams {
            lces: 4,
            ops: 2000,
            ..Default::default()
        };
        let r = compare_engines(&cfg, &random_workload(9, &p)).unwrap();
        assert!(r.equivalent(), "{r}");
        assert!(r.ratio > 1.0, "{r}");
    }

    #[test]
    fn diff_reports_a_changed_block() {
        let trace = parse_trace("0 ST 0x80000000 7\n1 LD 0x80000040\n").unwrap();
        let s = run_trace(&SimConfig::default(), &trace).unwrap().snapshot();
        assert!(diff(&s, &s).is_empty());
        let mut t = s.clone();
        t.caches[0][0].3[0] ^= 1;
        t.directory.pop();
        let d = diff(&s, &t);
        assert_eq!(d.len(), 2, "{d:?}");
        assert!(d[0].starts_with("lce 0 block"));
        assert!(d[1].starts_with("directory"));
    }

    #[test]
    fn invalidations_grow_with_sharing() {
        let cfg = SimConfig {
            cores: 4,
            issue: IssueMode::Serialized,
            ..SimConfig::default()
        };
        let invs = |sharing: f64| -> u64 {
            (0..4)
                .map(|seed| {
                    let p = WorkloadParams {
                        lces: 4,
                        ops: 2000,
                        sharing,
                        uncached_ratio: 0.0,
                        ..Default::default()
                    };
                    let sys = run_trace(&cfg, &random_workload(seed, &p)).unwrap();
                    sys.lces.iter().map(|l| l.stats.invalidations).sum::<u64>()
                })
                .sum()
        };
        let counts: Vec<u64> = [0.0, 0.25, 0.5, 1.0].iter().map(|s| invs(*s)).collect();
        assert_eq!(counts[0], 0);
        assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
    }
}
