//! Backing store and the memory-side responder.
//!
//! The shared L2 of a real system is folded in here: it only buffers memory
//! and never takes part in coherence, so a fixed-latency FIFO responder is
//! enough.

use std::collections::{HashMap, VecDeque};
use std::io::{self, Read};

use crate::msg::{Endpoint, MemCmd, MemOp, MemResp, Payload};
use crate::network::{NetMessage, Network};

/// Sparse byte store keyed by block address. Untouched bytes read as zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BackingStore {
    block_bytes: usize,
    blocks: HashMap<u64, Vec<u8>>,
}

impl BackingStore {
    pub fn new(block_bytes: usize) -> Self {
        assert!(block_bytes.is_power_of_two());
        BackingStore {
            block_bytes,
            blocks: HashMap::new(),
        }
    }

    pub fn block_bytes(&self) -> usize {
        self.block_bytes
    }

    fn block_of(&self, addr: u64) -> u64 {
        addr & !(self.block_bytes as u64 - 1)
    }

    pub fn read(&self, addr: u64, len: usize) -> Vec<u8> {
        (0..len as u64)
            .map(|i| {
                let a = addr + i;
                self.blocks
                    .get(&self.block_of(a))
                    .map(|b| b[(a - self.block_of(a)) as usize])
                    .unwrap_or(0)
            })
            .collect()
    }

    pub fn write(&mut self, addr: u64, bytes: &[u8]) {
        for (i, byte) in bytes.iter().enumerate() {
            let a = addr + i as u64;
            let base = self.block_of(a);
            let block = self
                .blocks
                .entry(base)
                .or_insert_with(|| vec![0; self.block_bytes]);
            block[(a - base) as usize] = *byte;
        }
    }

    pub fn read_block(&self, addr: u64) -> Vec<u8> {
        self.read(self.block_of(addr), self.block_bytes)
    }

    /// Non-zero blocks, sorted by address.
    pub fn image(&self) -> Vec<(u64, Vec<u8>)> {
        let mut v: Vec<(u64, Vec<u8>)> = self
            .blocks
            .iter()
            .filter(|(_, b)| b.iter().any(|x| *x != 0))
            .map(|(a, b)| (*a, b.clone()))
            .collect();
        v.sort_by_key(|(a, _)| *a);
        v
    }

    /// Loads a preload image: repeated little-endian records of
    /// `u64 address`, `u32 length`, then `length` bytes.
    pub fn load_image(&mut self, mut r: impl Read) -> io::Result<usize> {
        let mut count = 0;
        loop {
            let mut addr = [0u8; 8];
            match r.read_exact(&mut addr) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(count),
                Err(e) => return Err(e),
            }
            let mut len = [0u8; 4];
            r.read_exact(&mut len)?;
            let mut bytes = vec![0u8; u32::from_le_bytes(len) as usize];
            r.read_exact(&mut bytes)?;
            self.write(u64::from_le_bytes(addr), &bytes);
            count += 1;
        }
    }
}

pub fn encode_image_record(addr: u64, bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + bytes.len());
    out.extend_from_slice(&addr.to_le_bytes());
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
    out
}

/// A memory access as it performed, for the data-value monitor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemAccess {
    pub op: MemOp,
    pub addr: u64,
    pub data: Vec<u8>,
    pub lce: usize,
}

#[derive(Debug, Clone)]
pub struct MemoryController {
    store: BackingStore,
    latency: u64,
    queue: VecDeque<(u64, Endpoint, MemResp)>,
    performed: Vec<MemAccess>,
    pub commands: u64,
}

impl MemoryController {
    pub fn new(block_bytes: usize, latency: u64) -> Self {
        MemoryController {
            store: BackingStore::new(block_bytes),
            latency,
            queue: VecDeque::new(),
            performed: Vec::new(),
            commands: 0,
        }
    }

    pub fn store(&self) -> &BackingStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut BackingStore {
        &mut self.store
    }

    /// Applies a command and schedules its response `latency` cycles later.
    pub fn handle_mem_cmd(&mut self, now: u64, src: Endpoint, cmd: MemCmd) {
        self.commands += 1;
        let data = match cmd.op {
            MemOp::Read => self.store.read_block(cmd.addr),
            MemOp::UncachedRead => self.store.read(cmd.addr, cmd.size as usize),
            MemOp::Write | MemOp::UncachedWrite => {
                self.store.write(cmd.addr, &cmd.data);
                Vec::new()
            }
        };
        if matches!(cmd.op, MemOp::UncachedRead | MemOp::UncachedWrite) {
            self.performed.push(MemAccess {
                op: cmd.op,
                addr: cmd.addr,
                data: if cmd.op == MemOp::UncachedRead {
                    data.clone()
                } else {
                    cmd.data.clone()
                },
                lce: cmd.lce,
            });
        }
        let resp = MemResp {
            op: cmd.op,
            addr: cmd.addr,
            size: cmd.size,
            lce: cmd.lce,
            way: cmd.way,
            state: cmd.state,
            spec: cmd.spec,
            data,
        };
        self.queue.push_back((now + self.latency, src, resp));
    }

    /// Sends every response that is due, in command order.
    pub fn tick(&mut self, now: u64, net: &mut Network) {
        while self.queue.front().is_some_and(|(t, _, _)| *t <= now) {
            let (_, dst, resp) = self.queue.pop_front().unwrap();
            net.send(
                now,
                NetMessage::new(Endpoint::Mem, dst, Payload::MemResp(resp)),
            )
            .expect("memory responses are not credit limited");
        }
    }

    pub fn take_performed(&mut self) -> Vec<MemAccess> {
        std::mem::take(&mut self.performed)
    }

    pub fn idle(&self) -> bool {
        self.queue.is_empty()
    }
}
