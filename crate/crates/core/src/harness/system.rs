//! A complete simulated system: caches, coherence engines, networks and memory.

use std::collections::{BTreeSet, VecDeque};

use thiserror::Error;

use super::config::{EngineKind, IssueMode, SimConfig};
use super::monitors::{Invariant, Monitors, Violation};
use super::trace::TraceOp;
use crate::cce::{CceConfig, CceError, Engine, TxnRecord};
use crate::directory::AddrMap;
use crate::fsm_cce::FsmCce;
use crate::lce::{Access, Lce, LceConfig, LceError, LceKind};
use crate::memory::MemoryController;
use crate::msg::{Endpoint, Payload};
use crate::network::{NetConfig, NetKind, NetMessage, Network};
use crate::protocol::{CoherenceState, RegionMap};
use crate::ucode::{self, MicroProgram, UcodeCce};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Lce(#[from] LceError),
    #[error(transparent)]
    Cce(#[from] CceError),
    #[error("{0}")]
    Monitor(Violation),
    #[error("no progress: simulation hit {0} cycles without draining")]
    Deadlock(u64),
    #[error("trace names LCE {0}, which does not exist")]
    NoSuchLce(usize),
}

/// Builds the engine selected by `cfg` for one CCE.
pub fn build_engine(cfg: &SimConfig, cce: CceConfig) -> Result<Box<dyn Engine>, SimError> {
    Ok(match cfg.engine {
        EngineKind::Fsm => Box::new(FsmCce::new(cce)),
        EngineKind::Ucode => Box::new(UcodeCce::new(cce, load_program(cfg)?)?),
    })
}

/// The configured microcode: a source file, a `BRUC` binary, or the program
/// shipped for the configured protocol.
pub fn load_program(cfg: &SimConfig) -> Result<MicroProgram, SimError> {
    let Some(path) = &cfg.ucode else {
        return Ok(ucode::shipped_program(cfg.protocol));
    };
    let bytes =
        std::fs::read(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
    let prog = if bytes.starts_with(ucode::asm::MAGIC) {
        MicroProgram::from_binary(&bytes)
    } else {
        ucode::assemble(&String::from_utf8_lossy(&bytes))
    };
    prog.map_err(|e| SimError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimStats {
    pub cycles: u64,
    pub ops: u64,
    pub hits: u64,
    pub misses: u64,
    pub sc_failures: u64,
}

/// (block, way, state, data) of one valid cache line.
pub type CachedLine = (u64, usize, CoherenceState, Vec<u8>);

/// Architectural state after a run, for engine comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub memory: Vec<(u64, Vec<u8>)>,
    /// Per LCE: (block, way, state, data), states with E and M merged.
    pub caches: Vec<Vec<CachedLine>>,
    /// (cce, lce, set, way, tag, state) for every valid entry, E and M merged.
    pub directory: Vec<(usize, usize, usize, usize, u64, CoherenceState)>,
}

fn merge_em(s: CoherenceState) -> CoherenceState {
    if s == CoherenceState::M {
        CoherenceState::E
    } else {
        s
    }
}

pub struct System {
    pub cfg: SimConfig,
    pub now: u64,
    pub net: Network,
    pub lces: Vec<Lce>,
    pub cces: Vec<Box<dyn Engine>>,
    pub mem: MemoryController,
    pub monitors: Monitors,
    pub stats: SimStats,
    map: AddrMap,
    programs: Vec<VecDeque<TraceOp>>,
    serial: VecDeque<TraceOp>,
    touched: BTreeSet<u64>,
}

impl System {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate().map_err(SimError::Config)?;
        let map = AddrMap::new(cfg.block_bytes, cfg.sets, cfg.cces);
        let n = cfg.num_lces();
        let lces = (0..n)
            .map(|id| {
                Lce::new(
                    LceConfig {
                        sets: cfg.sets,
                        assoc: cfg.assoc,
                        block_bytes: cfg.block_bytes,
                        lce_id: id,
                        kind: if id >= cfg.cores {
                            LceKind::Instruction
                        } else {
                            LceKind::Data
                        },
                    },
                    map,
                    RegionMap::default(),
                )
            })
            .collect();
        let mut cces = Vec::new();
        for id in 0..cfg.cces {
            let cc = CceConfig {
                id,
                protocol: cfg.protocol,
                regions: RegionMap::default(),
                map,
                segments: cfg.segments(),
                assoc: cfg.assoc,
                tag_sets_per_row: 2,
                beat_bytes: cfg.beat_bytes,
            };
            cces.push(build_engine(&cfg, cc)?);
        }
        let net = Network::new(NetConfig {
            latency: cfg.net_latency,
            beat_bytes: cfg.beat_bytes,
            mem_credits: cfg.mem_credits,
            ordering: cfg.net_order,
        });
        Ok(System {
            mem: MemoryController::new(cfg.block_bytes, cfg.mem_latency),
            monitors: Monitors::new(cfg.block_bytes),
            stats: SimStats::default(),
            programs: vec![VecDeque::new(); n],
            serial: VecDeque::new(),
            touched: BTreeSet::new(),
            cfg,
            now: 0,
            net,
            lces,
            cces,
            map,
        })
    }

    pub fn map(&self) -> &AddrMap {
        &self.map
    }

    /// Writes `bytes` to both backing memory and the reference memory.
    pub fn write_memory(&mut self, addr: u64, bytes: &[u8]) {
        self.mem.store_mut().write(addr, bytes);
        self.monitors.reference.write(addr, bytes);
    }

    pub fn load_image(&mut self, image: &[u8]) -> std::io::Result<usize> {
        let n = self.mem.store_mut().load_image(image)?;
        self.monitors.reference.load_image(image)?;
        Ok(n)
    }

    /// Back door: places `addr` in `lce` at `way` with `cache_state`, and
    /// records `dir_state` for it in the home directory. The block's data is
    /// taken from memory.
    pub fn preload(
        &mut self,
        lce: usize,
        addr: u64,
        way: usize,
        cache_state: CoherenceState,
        dir_state: CoherenceState,
    ) -> Result<(), SimError> {
        let block = self.map.block(addr);
        let data = self.mem.store().read_block(block);
        self.lces[lce].preload(block, way, cache_state, &data);
        let home = self.map.cce_of(block);
        self.cces[home]
            .shared_mut()
            .dir
            .write_block(block, lce, way, dir_state)
            .map_err(|e| SimError::Cce(self.cces[home].shared().dir_err(e)))?;
        Ok(())
    }

    pub fn load_trace(&mut self, ops: &[TraceOp]) -> Result<(), SimError> {
        for op in ops {
            if op.lce >= self.lces.len() {
                return Err(SimError::NoSuchLce(op.lce));
            }
            match self.cfg.issue {
                IssueMode::Concurrent => self.programs[op.lce].push_back(*op),
                IssueMode::Serialized => self.serial.push_back(*op),
            }
        }
        Ok(())
    }

    fn monitor(&self, r: Result<(), Violation>) -> Result<(), SimError> {
        r.map_err(SimError::Monitor)
    }

    fn drain_performed(&mut self, lce: usize) -> Result<(), SimError> {
        for p in self.lces[lce].take_performed() {
            let r = self.monitors.on_performed(self.now, &p);
            self.monitor(r)?;
        }
        Ok(())
    }

    fn send_from_lce(&mut self, lce: usize, out: Vec<(Endpoint, Payload)>) {
        for (dst, p) in out {
            self.net
                .send(self.now, NetMessage::new(Endpoint::Lce(lce), dst, p))
                .expect("cache networks are not credit limited");
        }
    }

    fn issue(&mut self, lce: usize, op: TraceOp) -> Result<(), SimError> {
        self.stats.ops += 1;
        let Some(cpu) = op.cpu_op() else {
            return Ok(());
        };
        match self.lces[lce].access(cpu)? {
            Access::Hit(_) => self.stats.hits += 1,
            Access::Failed(_) => self.stats.sc_failures += 1,
            Access::Miss(req) => {
                self.stats.misses += 1;
                let home = self.map.cce_of(req.addr);
                self.net
                    .send(
                        self.now,
                        NetMessage::new(
                            Endpoint::Lce(lce),
                            Endpoint::Cce(home),
                            Payload::Request(req),
                        ),
                    )
                    .expect("request network is not credit limited");
            }
        }
        self.touched.insert(self.map.block(op.addr));
        self.drain_performed(lce)
    }

    /// Advances the whole system by one cycle.
    pub fn step(&mut self) -> Result<(), SimError> {
        let now = self.now;
        for msg in self.net.deliver(now) {
            match msg.dst {
                Endpoint::Lce(i) => {
                    let block = self.map.block(msg.payload.addr());
                    let out = match &msg.payload {
                        Payload::Command(c) => self.lces[i].handle_command(c)?,
                        Payload::Fill(f) => self.lces[i].handle_fill(f)?,
                        other => unreachable!("LCE {i} received {other:?}"),
                    };
                    self.touched.insert(block);
                    self.send_from_lce(i, out);
                    self.drain_performed(i)?;
                }
                Endpoint::Cce(i) => self.cces[i].shared_mut().receive(msg)?,
                Endpoint::Mem => match msg.payload {
                    Payload::MemCmd(cmd) => self.mem.handle_mem_cmd(now, msg.src, cmd),
                    other => unreachable!("memory received {other:?}"),
                },
            }
        }
        for a in self.mem.take_performed() {
            let r = self.monitors.on_mem_access(now, &a);
            self.monitor(r)?;
        }
        self.mem.tick(now, &mut self.net);
        for (i, cce) in self.cces.iter_mut().enumerate() {
            cce.tick(now, &mut self.net)?;
            if let Some((seq, wg)) = cce.active_txn() {
                let drains = cce.shared().pending.drains(wg);
                let r = self.monitors.on_active(now, i, seq, wg, drains);
                r.map_err(SimError::Monitor)?;
            }
        }
        match self.cfg.issue {
            IssueMode::Concurrent => {
                for lce in 0..self.lces.len() {
                    if self.lces[lce].busy() {
                        continue;
                    }
                    if let Some(op) = self.programs[lce].pop_front() {
                        self.issue(lce, op)?;
                    }
                }
            }
            IssueMode::Serialized => {
                if !self.serial.is_empty() && self.quiescent() {
                    let op = self.serial.pop_front().unwrap();
                    self.issue(op.lce, op)?;
                }
            }
        }
        let touched = std::mem::take(&mut self.touched);
        for block in touched {
            let states: Vec<(usize, CoherenceState)> = self
                .lces
                .iter()
                .map(|l| (l.id(), l.state_of(block)))
                .collect();
            let r = self.monitors.check_states(now, block, &states);
            self.monitor(r)?;
        }
        self.now += 1;
        self.stats.cycles = self.now;
        Ok(())
    }

    /// Nothing in flight anywhere.
    pub fn quiescent(&self) -> bool {
        self.net.in_flight() == 0
            && self.mem.idle()
            && self.lces.iter().all(|l| !l.busy())
            && self
                .cces
                .iter()
                .all(|c| c.at_ready() && c.shared().quiescent())
    }

    pub fn done(&self) -> bool {
        self.serial.is_empty() && self.programs.iter().all(|p| p.is_empty()) && self.quiescent()
    }

    /// Runs until every trace operation has completed and the system drained.
    pub fn run(&mut self) -> Result<(), SimError> {
        while !self.done() {
            if self.now >= self.cfg.max_cycles {
                return Err(SimError::Deadlock(self.now));
            }
            self.step()?;
        }
        self.check_directory()
    }

    /// At quiescence the directory mirrors every cache exactly, except that a
    /// cache may have silently moved from E to M.
    pub fn check_directory(&self) -> Result<(), SimError> {
        for l in &self.lces {
            for set in 0..self.cfg.sets {
                let home = set % self.cfg.cces;
                let dir = &self.cces[home].shared().dir;
                for way in 0..self.cfg.assoc {
                    let line = l.line(set, way);
                    let e = dir.entry_at(l.id(), set, way);
                    let ok = match (line.state, e.state) {
                        (CoherenceState::I, d) => d == CoherenceState::I,
                        (c, d) => {
                            e.tag == line.tag
                                && merge_em(c) == merge_em(d)
                                && (c == d || d == CoherenceState::E)
                        }
                    };
                    if !ok {
                        return Err(SimError::Monitor(Violation {
                            cycle: self.now,
                            invariant: Invariant::DirectoryConsistent,
                            detail: format!(
                                "LCE {} set {set} way {way}: cache {} tag {:#x}, directory {} tag {:#x}",
                                l.id(),
                                line.state,
                                line.tag,
                                e.state,
                                e.tag
                            ),
                        }));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        let caches = self
            .lces
            .iter()
            .map(|l| {
                l.valid_lines()
                    .into_iter()
                    .map(|(a, w, s)| (a, w, merge_em(s), l.block_data(a).unwrap().to_vec()))
                    .collect()
            })
            .collect();
        let mut directory = Vec::new();
        for (c, cce) in self.cces.iter().enumerate() {
            for l in 0..self.lces.len() {
                for set in (c..self.cfg.sets).step_by(self.cfg.cces) {
                    for way in 0..self.cfg.assoc {
                        let e = cce.shared().dir.entry_at(l, set, way);
                        if e.state.is_valid() {
                            directory.push((c, l, set, way, e.tag, merge_em(e.state)));
                        }
                    }
                }
            }
        }
        Snapshot {
            memory: self.mem.store().image(),
            caches,
            directory,
        }
    }

    pub fn records(&self) -> Vec<TxnRecord> {
        self.cces
            .iter()
            .flat_map(|c| c.shared().records.iter().cloned())
            .collect()
    }

    pub fn net_counts(&self) -> Vec<(NetKind, u64)> {
        NetKind::ALL
            .iter()
            .map(|k| (*k, self.net.sent(*k)))
            .collect()
    }
}

/// Runs `trace` on a fresh system built from `cfg`.
pub fn run_trace(cfg: &SimConfig, trace: &[TraceOp]) -> Result<System, SimError> {
    let mut sys = System::new(cfg.clone())?;
    sys.load_trace(trace)?;
    sys.run()?;
    Ok(sys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::trace::parse_trace;

    #[test]
    fn cold_load_is_one_read() {
        let trace = parse_trace("0 LD 0x80000000\n").unwrap();
        let sys = run_trace(&SimConfig::default(), &trace).unwrap();
        let recs = sys.records();
        assert_eq!(recs.len(), 1);
        assert_eq!(sys.lces[0].state_of(0x8000_0000), CoherenceState::E);
        assert_eq!(sys.stats.misses, 1);
    }

    #[test]
    fn ping_pong_stores() {
        let mut text = String::new();
        for i in 0..6u64 {
            text.push_str(&format!(
                "{} ST 0x80000000 {:x}\n{} LD 0x80000000\n",
                i % 2,
                i + 1,
                (i + 1) % 2
            ));
        }
        let cfg = SimConfig {
            issue: IssueMode::Serialized,
            ..SimConfig::default()
        };
        let sys = run_trace(&cfg, &parse_trace(&text).unwrap()).unwrap();
        assert_eq!(sys.monitors.reference.read(0x8000_0000, 1), vec![6]);
        assert!(sys.records().len() >= 6);
    }

    #[test]
    fn fence_is_accepted() {
        let trace = parse_trace("0 ST 0x80000000 1\n0 FENCE\n0 LD 0x80000000\n").unwrap();
        let sys = run_trace(&SimConfig::default(), &trace).unwrap();
        assert_eq!(sys.stats.ops, 3);
    }
}
