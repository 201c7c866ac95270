//! Point-to-point message networks with per-channel FIFO ordering, a fixed hop
//! latency, beat serialization and memory-command credits.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::msg::{Endpoint, Payload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetKind {
    Request,
    Command,
    Fill,
    Response,
    MemCmd,
    MemResp,
}

impl NetKind {
    pub const ALL: [NetKind; 6] = [
        NetKind::Request,
        NetKind::Command,
        NetKind::Fill,
        NetKind::Response,
        NetKind::MemCmd,
        NetKind::MemResp,
    ];

    /// Arbitration rank at an endpoint, lower first.
    pub fn priority(self) -> u8 {
        match self {
            NetKind::Response => 0,
            NetKind::Fill => 1,
            NetKind::Command => 2,
            NetKind::Request => 3,
            NetKind::MemResp => 4,
            NetKind::MemCmd => 5,
        }
    }

    pub fn of(payload: &Payload) -> NetKind {
        match payload {
            Payload::Request(_) => NetKind::Request,
            Payload::Command(_) => NetKind::Command,
            Payload::Fill(_) => NetKind::Fill,
            Payload::Response(_) => NetKind::Response,
            Payload::MemCmd(_) => NetKind::MemCmd,
            Payload::MemResp(_) => NetKind::MemResp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetMessage {
    pub net: NetKind,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub payload: Payload,
}

impl NetMessage {
    pub fn new(src: Endpoint, dst: Endpoint, payload: Payload) -> Self {
        NetMessage {
            net: NetKind::of(&payload),
            src,
            dst,
            payload,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetOrdering {
    Fifo,
    /// Random interleaving across channels each cycle; each channel stays FIFO.
    RandomPermute(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub latency: u64,
    pub beat_bytes: usize,
    pub mem_credits: usize,
    pub ordering: NetOrdering,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latency: 1,
            beat_bytes: 8,
            mem_credits: 8,
            ordering: NetOrdering::Fifo,
        }
    }
}

impl NetConfig {
    /// Channel slots a message occupies: header plus first beat share one.
    pub fn slots(&self, data_len: usize) -> u64 {
        self.beats(data_len).max(1) as u64
    }

    pub fn beats(&self, data_len: usize) -> usize {
        data_len.div_ceil(self.beat_bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("backpressure: no memory credit available at {0:?}")]
    Backpressure(Endpoint),
}

#[derive(Debug, Clone)]
struct InFlight {
    deliver_at: u64,
    seq: u64,
    msg: NetMessage,
}

#[derive(Debug, Clone, Default)]
struct Channel {
    free_at: u64,
    queue: VecDeque<InFlight>,
}

type ChannelKey = (Endpoint, Endpoint, NetKind);

#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetConfig,
    channels: BTreeMap<ChannelKey, Channel>,
    credits: HashMap<Endpoint, usize>,
    rng: ChaCha8Rng,
    seq: u64,
    sent: HashMap<NetKind, u64>,
    delivered: HashMap<NetKind, u64>,
}

impl Network {
    pub fn new(cfg: NetConfig) -> Self {
        let seed = match cfg.ordering {
            NetOrdering::RandomPermute(seed) => seed,
            NetOrdering::Fifo => 0,
        };
        Network {
            cfg,
            channels: BTreeMap::new(),
            credits: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seq: 0,
            sent: HashMap::new(),
            delivered: HashMap::new(),
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn credits_available(&self, ep: Endpoint) -> usize {
        *self.credits.get(&ep).unwrap_or(&self.cfg.mem_credits)
    }

    pub fn credits_in_flight(&self, ep: Endpoint) -> usize {
        self.cfg.mem_credits - self.credits_available(ep)
    }

    pub fn can_send(&self, src: Endpoint, net: NetKind) -> bool {
        net != NetKind::MemCmd || self.credits_available(src) > 0
    }

    /// Queues a message. Memory commands consume a credit of the sender.
    pub fn send(&mut self, now: u64, msg: NetMessage) -> Result<(), NetError> {
        if msg.net == NetKind::MemCmd {
            let avail = self.credits_available(msg.src);
            if avail == 0 {
                return Err(NetError::Backpressure(msg.src));
            }
            self.credits.insert(msg.src, avail - 1);
        }
        let slots = self.cfg.slots(msg.payload.data_len());
        let latency = self.cfg.latency;
        let ch = self
            .channels
            .entry((msg.src, msg.dst, msg.net))
            .or_default();
        let start = ch.free_at.max(now);
        ch.free_at = start + slots;
        *self.sent.entry(msg.net).or_default() += 1;
        self.seq += 1;
        ch.queue.push_back(InFlight {
            deliver_at: start + latency + slots - 1,
            seq: self.seq,
            msg,
        });
        Ok(())
    }

    /// Returns one memory credit to `ep` after it consumed a memory response.
    pub fn return_credit(&mut self, ep: Endpoint) {
        let avail = self.credits_available(ep);
        assert!(
            avail < self.cfg.mem_credits,
            "credit returned twice at {ep:?}"
        );
        self.credits.insert(ep, avail + 1);
    }

    /// All messages whose last beat has arrived by `now`, grouped by
    /// destination and ordered by network priority.
    pub fn deliver(&mut self, now: u64) -> Vec<NetMessage> {
        let mut per_channel: Vec<Vec<InFlight>> = Vec::new();
        for ch in self.channels.values_mut() {
            let mut ready = Vec::new();
            while ch.queue.front().is_some_and(|m| m.deliver_at <= now) {
                ready.push(ch.queue.pop_front().unwrap());
            }
            if !ready.is_empty() {
                per_channel.push(ready);
            }
        }
        let mut out: Vec<InFlight> = match self.cfg.ordering {
            NetOrdering::Fifo => {
                let mut all: Vec<InFlight> = per_channel.into_iter().flatten().collect();
                all.sort_by_key(|m| (m.deliver_at, m.seq));
                all
            }
            NetOrdering::RandomPermute(_) => {
                // Random merge that keeps every channel's internal order.
                let mut tickets: Vec<usize> = per_channel
                    .iter()
                    .enumerate()
                    .flat_map(|(i, v)| std::iter::repeat_n(i, v.len()))
                    .collect();
                tickets.shuffle(&mut self.rng);
                let mut iters: Vec<_> = per_channel.into_iter().map(|v| v.into_iter()).collect();
                tickets
                    .into_iter()
                    .map(|i| iters[i].next().unwrap())
                    .collect()
            }
        };
        out.sort_by_key(|m| (m.msg.dst, m.msg.net.priority()));
        for m in &out {
            *self.delivered.entry(m.msg.net).or_default() += 1;
        }
        out.into_iter().map(|m| m.msg).collect()
    }

    pub fn in_flight(&self) -> usize {
        self.channels.values().map(|c| c.queue.len()).sum()
    }

    pub fn sent(&self, net: NetKind) -> u64 {
        *self.sent.get(&net).unwrap_or(&0)
    }

    pub fn delivered(&self, net: NetKind) -> u64 {
        *self.delivered.get(&net).unwrap_or(&0)
    }
}
