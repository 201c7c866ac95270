//! Simulation configuration and its `key = value` file format.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::network::NetOrdering;
use crate::protocol::Protocol;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config line {line}: {msg}")]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum EngineKind {
    #[default]
    Fsm,
    Ucode,
}

impl FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fsm" => Ok(EngineKind::Fsm),
            "ucode" => Ok(EngineKind::Ucode),
            other => Err(format!("unknown engine `{other}` (expected fsm or ucode)")),
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineKind::Fsm => "fsm",
            EngineKind::Ucode => "ucode",
        })
    }
}

/// How trace operations are released to the caches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IssueMode {
    /// Every cache runs its own operations in program order, concurrently.
    #[default]
    Concurrent,
    /// One operation at a time in file order; the next is issued once the
    /// system is quiescent. Makes the outcome independent of engine timing.
    Serialized,
}

impl FromStr for IssueMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concurrent" => Ok(IssueMode::Concurrent),
            "serialized" => Ok(IssueMode::Serialized),
            other => Err(format!("unknown issue mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub cores: usize,
    /// Adds one instruction cache per core, tracked by a second directory segment.
    pub icaches: bool,
    pub sets: usize,
    pub assoc: usize,
    pub block_bytes: usize,
    pub beat_bytes: usize,
    pub cces: usize,
    pub engine: EngineKind,
    /// Microcode source; the shipped program for `protocol` when unset.
    pub ucode: Option<PathBuf>,
    pub protocol: Protocol,
    pub mem_latency: u64,
    pub net_latency: u64,
    pub mem_credits: usize,
    pub net_order: NetOrdering,
    pub seed: u64,
    pub issue: IssueMode,
    pub max_cycles: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cores: 2,
            icaches: false,
            sets: 64,
            assoc: 8,
            block_bytes: 64,
            beat_bytes: 8,
            cces: 1,
            engine: EngineKind::Fsm,
            ucode: None,
            protocol: Protocol::Moesif,
            mem_latency: 20,
            net_latency: 1,
            mem_credits: 8,
            net_order: NetOrdering::Fifo,
            seed: 0,
            issue: IssueMode::Concurrent,
            max_cycles: 50_000_000,
        }
    }
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("bad value `{v}`: {e}"))
}

impl SimConfig {
    pub fn num_lces(&self) -> usize {
        if self.icaches {
            2 * self.cores
        } else {
            self.cores
        }
    }

    /// Caches per directory segment.
    pub fn segments(&self) -> Vec<usize> {
        if self.icaches {
            vec![self.cores, self.cores]
        } else {
            vec![self.cores]
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.cores == 0 {
            return Err("cores must be at least 1".into());
        }
        for (name, v) in [
            ("sets", self.sets),
            ("assoc", self.assoc),
            ("block_bytes", self.block_bytes),
            ("beat_bytes", self.beat_bytes),
        ] {
            if v == 0 || !v.is_power_of_two() {
                return Err(format!("{name} must be a power of two"));
            }
        }
        if self.block_bytes > 128 || self.block_bytes < 8 {
            return Err("block_bytes must be between 8 and 128".into());
        }
        if self.beat_bytes > self.block_bytes {
            return Err("beat_bytes exceeds block_bytes".into());
        }
        if self.cces == 0 || !self.sets.is_multiple_of(self.cces) {
            return Err("cces must divide sets".into());
        }
        if self.mem_credits == 0 || self.net_latency == 0 {
            return Err("mem_credits and net_latency must be positive".into());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "cores" => self.cores = parse(value)?,
            "icaches" => self.icaches = parse(value)?,
            "sets" => self.sets = parse(value)?,
            "assoc" => self.assoc = parse(value)?,
            "block_bytes" => self.block_bytes = parse(value)?,
            "beat_bytes" => self.beat_bytes = parse(value)?,
            "cces" => self.cces = parse(value)?,
            "engine" => self.engine = parse(value)?,
            "ucode" => self.ucode = Some(PathBuf::from(value)),
            "protocol" => self.protocol = parse(value)?,
            "mem_latency" => self.mem_latency = parse(value)?,
            "net_latency" => self.net_latency = parse(value)?,
            "mem_credits" => self.mem_credits = parse(value)?,
            "net_order" => {
                self.net_order = match value {
                    "fifo" => NetOrdering::Fifo,
                    "random" => NetOrdering::RandomPermute(self.seed),
                    other => return Err(format!("unknown net_order `{other}`")),
                }
            }
            "seed" => {
                self.seed = parse(value)?;
                if let NetOrdering::RandomPermute(_) = self.net_order {
                    self.net_order = NetOrdering::RandomPermute(self.seed);
                }
            }
            "issue" => self.issue = parse(value)?,
            "max_cycles" => self.max_cycles = parse(value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<SimConfig, ConfigError> {
        let mut cfg = SimConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError { line: i + 1, msg };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            cfg.set(k.trim(), v.trim()).map_err(err)?;
        }
        cfg.validate().map_err(|msg| ConfigError { line: 0, msg })?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_keys() {
        let cfg = SimConfig::parse(
            "# demo\ncores = 4\nsets=32\nassoc = 4\nblock_bytes = 64\nbeat_bytes = 16\n\
             engine = ucode\nucode = prog.s\nmem_latency = 5\nnet_latency = 2\nseed = 9 # trailing\n",
        )
        .unwrap();
        assert_eq!(
            (cfg.cores, cfg.sets, cfg.assoc, cfg.beat_bytes),
            (4, 32, 4, 16)
        );
        assert_eq!(cfg.engine, EngineKind::Ucode);
        assert_eq!(cfg.ucode, Some(PathBuf::from("prog.s")));
        assert_eq!((cfg.mem_latency, cfg.net_latency, cfg.seed), (5, 2, 9));
    }

    #[test]
    fn reports_line_of_bad_key() {
        let e = SimConfig::parse("cores = 2\nbogus = 1\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(SimConfig::parse("sets = 48\n").is_err());
    }

    #[test]
    fn random_order_follows_seed() {
        let cfg = SimConfig::parse("net_order = random\nseed = 7\n").unwrap();
        assert_eq!(cfg.net_order, NetOrdering::RandomPermute(7));
    }
}
