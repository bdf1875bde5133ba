//! Discrete-event broadcast network with random latency and message loss.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub delay_min: f64,
    pub delay_max: f64,
    pub drop_prob: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { delay_min: 0.0, delay_max: 0.05, drop_prob: 0.0, seed: 0 }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.delay_min && self.delay_min <= self.delay_max && self.delay_max.is_finite()) {
            return Err(Error::InvalidConfig("need 0 <= delay_min <= delay_max".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::InvalidConfig("drop_prob must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// A message in flight.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery<M> {
    pub deliver_at: f64,
    pub sent_at: f64,
    pub sender: usize,
    pub recipient: usize,
    /// Insertion counter, the tie-breaker for equal delivery times.
    pub seq: u64,
    pub message: M,
}

struct Pending<M>(Delivery<M>);

impl<M> PartialEq for Pending<M> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<M> Eq for Pending<M> {}

impl<M> PartialOrd for Pending<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M> Ord for Pending<M> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.deliver_at.total_cmp(&self.0.deliver_at).then(other.0.seq.cmp(&self.0.seq))
    }
}

/// Pending deliveries ordered by `(deliver_at, insertion order)`.
pub struct EventQueue<M> {
    heap: BinaryHeap<Pending<M>>,
    next_seq: u64,
    now: f64,
}

impl<M> Default for EventQueue<M> {
    fn default() -> Self {
        EventQueue { heap: BinaryHeap::new(), next_seq: 0, now: 0.0 }
    }
}

impl<M> EventQueue<M> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Delivery time of the next pending event.
    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|p| p.0.deliver_at)
    }

    pub fn push(&mut self, deliver_at: f64, sent_at: f64, sender: usize, recipient: usize, message: M) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Pending(Delivery { deliver_at, sent_at, sender, recipient, seq, message }));
        seq
    }

    /// Pop every event due at or before `until`, in order, and move the clock
    /// to `until`.
    pub fn advance(&mut self, until: f64) -> Vec<Delivery<M>> {
        assert!(until >= self.now, "clock cannot run backwards ({until} < {})", self.now);
        let mut out = Vec::new();
        while self.heap.peek().is_some_and(|p| p.0.deliver_at <= until) {
            out.push(self.heap.pop().expect("peeked").0);
        }
        self.now = until;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Scheduled,
    Dropped,
    Delivered,
}

/// One line of the optional event trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub kind: TraceKind,
    pub time: f64,
    pub sender: usize,
    pub recipient: usize,
    pub sent_at: f64,
    pub seq: Option<u64>,
}

/// Broadcast fan-out over an [`EventQueue`] with seeded latency and loss.
pub struct Network<M> {
    cfg: NetworkConfig,
    n_agents: usize,
    rng: ChaCha8Rng,
    queue: EventQueue<M>,
    trace: Option<Vec<TraceRecord>>,
}

impl<M: Clone> Network<M> {
    pub fn new(cfg: NetworkConfig, n_agents: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Network { cfg, n_agents, rng: ChaCha8Rng::seed_from_u64(cfg.seed), queue: EventQueue::new(), trace: None })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    /// Start recording every scheduling, drop and delivery.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    pub fn write_trace<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in self.trace.iter().flatten() {
            serde_json::to_writer(&mut w, rec)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn now(&self) -> f64 {
        self.queue.now()
    }

    pub fn next_delivery_time(&self) -> Option<f64> {
        self.queue.peek_time()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Send `msg` from `sender` to every other agent. Returns the scheduled
    /// `(deliver_at, recipient)` pairs.
    pub fn broadcast(&mut self, sender: usize, msg: &M, now: f64) -> Vec<(f64, usize)> {
        let mut out = Vec::with_capacity(self.n_agents.saturating_sub(1));
        for recipient in (0..self.n_agents).filter(|r| *r != sender) {
            // always draw both numbers so the stream does not depend on outcomes
            let u: f64 = self.rng.gen();
            let drop: f64 = self.rng.gen();
            let deliver_at = now + self.cfg.delay_min + u * (self.cfg.delay_max - self.cfg.delay_min);
            if drop < self.cfg.drop_prob {
                self.record(TraceKind::Dropped, now, sender, recipient, now, None);
                continue;
            }
            let seq = self.queue.push(deliver_at, now, sender, recipient, msg.clone());
            self.record(TraceKind::Scheduled, now, sender, recipient, now, Some(seq));
            out.push((deliver_at, recipient));
        }
        out
    }

    pub fn advance(&mut self, until: f64) -> Vec<Delivery<M>> {
        let out = self.queue.advance(until);
        if self.trace.is_some() {
            for d in &out {
                self.record(TraceKind::Delivered, d.deliver_at, d.sender, d.recipient, d.sent_at, Some(d.seq));
            }
        }
        out
    }

    fn record(&mut self, kind: TraceKind, time: f64, sender: usize, recipient: usize, sent_at: f64, seq: Option<u64>) {
        if let Some(t) = &mut self.trace {
            t.push(TraceRecord { kind, time, sender, recipient, sent_at, seq });
        }
    }
}
