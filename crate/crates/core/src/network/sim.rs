use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::node::{Node, Outgoing, SubmitError};
use super::Message;
use crate::digest::Digest;
use crate::miner::RoundOutcome;
use crate::storage::StoreError;
use crate::tx::{Transaction, UpdateTx};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkConfig {
    pub delay_ms: u64,
    /// Probability in `[0, 1]` that a message is lost.
    pub drop_rate: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            delay_ms: 10,
            drop_rate: 0.0,
        }
    }
}

#[derive(Debug)]
struct Link {
    config: LinkConfig,
    last_delivery: u64,
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    at: u64,
    seq: u64,
    from: usize,
    to: usize,
    frame: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("no response within {0} ms")]
    Timeout(u64),
}

/// In-process network of [`Node`]s. Time is measured in milliseconds;
/// messages are framed on send and decoded on delivery, each directed link
/// delivering in FIFO order after its delay. Loss is drawn from a seeded
/// generator, so a run is fully determined by its seed and inputs.
pub struct SimNetwork {
    pub nodes: Vec<Node>,
    links: BTreeMap<(usize, usize), Link>,
    queue: BinaryHeap<Reverse<Event>>,
    now: u64,
    seq: u64,
    rng: ChaCha20Rng,
    retry_ms: u64,
    last_poll: u64,
    /// One line per message: tick, sender, receiver, code, frame length and
    /// fate.
    pub trace: Vec<String>,
}

impl SimNetwork {
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            links: BTreeMap::new(),
            queue: BinaryHeap::new(),
            now: 0,
            seq: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
            retry_ms: 200,
            last_poll: 0,
            trace: Vec::new(),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Interval after which unanswered requests are repeated.
    pub fn set_retry_ms(&mut self, ms: u64) {
        self.retry_ms = ms.max(1);
        for n in &mut self.nodes {
            n.set_retry_ms(self.retry_ms);
        }
    }

    pub fn add_node(&mut self, mut node: Node) -> usize {
        node.set_retry_ms(self.retry_ms);
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Connects `a` and `b` in both directions.
    pub fn connect(&mut self, a: usize, b: usize, config: LinkConfig) {
        for key in [(a, b), (b, a)] {
            self.links.insert(
                key,
                Link {
                    config,
                    last_delivery: 0,
                },
            );
        }
    }

    pub fn connect_all(&mut self, config: LinkConfig) {
        for a in 0..self.nodes.len() {
            for b in a + 1..self.nodes.len() {
                self.connect(a, b, config);
            }
        }
    }

    pub fn peers(&self, node: usize) -> Vec<usize> {
        self.links.keys().filter(|(a, _)| *a == node).map(|(_, b)| *b).collect()
    }

    fn send(&mut self, from: usize, to: usize, msg: &Message) {
        let frame = msg.to_frame();
        let Some(link) = self.links.get_mut(&(from, to)) else {
            return;
        };
        let dropped = link.config.drop_rate > 0.0 && self.rng.gen::<f64>() < link.config.drop_rate;
        let fate = if dropped { "dropped" } else { "sent" };
        self.trace.push(format!(
            "{}\t{}\t{}\t{:#04x}\t{}\t{}",
            self.now,
            from,
            to,
            msg.code(),
            frame.len(),
            fate
        ));
        if dropped {
            return;
        }
        let at = (self.now + link.config.delay_ms).max(link.last_delivery);
        link.last_delivery = at;
        self.seq += 1;
        self.queue.push(Reverse(Event {
            at,
            seq: self.seq,
            from,
            to,
            frame,
        }));
    }

    fn route(&mut self, from: usize, out: Outgoing) {
        for (to, msg) in out {
            self.send(from, to, &msg);
        }
    }

    fn deliver(&mut self, ev: Event) {
        self.now = self.now.max(ev.at);
        let msg = match Message::from_frame(&ev.frame) {
            Ok(m) => m,
            Err(_) => return,
        };
        let peers = self.peers(ev.to);
        let out = self.nodes[ev.to].handle(self.now, ev.from, msg, &peers);
        self.route(ev.to, out);
    }

    fn poll_all(&mut self) {
        self.last_poll = self.now;
        for i in 0..self.nodes.len() {
            if self.nodes[i].has_outstanding() {
                let peers = self.peers(i);
                let out = self.nodes[i].poll(self.now, &peers);
                self.route(i, out);
            }
        }
    }

    fn next_poll(&self) -> Option<u64> {
        self.nodes
            .iter()
            .any(Node::has_outstanding)
            .then_some(self.last_poll.max(self.now.saturating_sub(self.retry_ms)) + self.retry_ms)
    }

    /// Delivers every message due up to `until` (inclusive), repeating
    /// stalled requests, and advances the clock to `until`.
    pub fn run_until(&mut self, until: u64) {
        loop {
            let next_msg = self.queue.peek().map(|Reverse(e)| e.at);
            let next_poll = self.next_poll();
            let next = match (next_msg, next_poll) {
                (Some(m), Some(p)) => m.min(p),
                (Some(m), None) => m,
                (None, Some(p)) => p,
                (None, None) => break,
            };
            if next > until {
                break;
            }
            if next_msg == Some(next) {
                let Reverse(ev) = self.queue.pop().expect("peeked");
                self.deliver(ev);
            } else {
                self.now = next;
                self.poll_all();
            }
        }
        self.now = self.now.max(until);
    }

    /// Runs until no message is in flight and no node waits on a request, or
    /// until `limit` ms have passed. Returns whether quiescence was reached.
    pub fn run_until_quiet(&mut self, limit: u64) -> bool {
        let deadline = self.now + limit;
        while self.now < deadline {
            if self.queue.is_empty() && !self.nodes.iter().any(Node::has_outstanding) {
                return true;
            }
            let next = self
                .queue
                .peek()
                .map(|Reverse(e)| e.at)
                .into_iter()
                .chain(self.next_poll())
                .min()
                .unwrap_or(deadline);
            self.run_until(next.min(deadline));
        }
        self.queue.is_empty() && !self.nodes.iter().any(Node::has_outstanding)
    }

    /// Hands `tx` to `node` as a client would and floods it.
    pub fn submit(&mut self, node: usize, tx: Transaction) -> Result<Digest, SubmitError> {
        let peers = self.peers(node);
        let (digest, out) = self.nodes[node].submit(tx, &peers)?;
        self.route(node, out);
        Ok(digest)
    }

    /// Submits `tx` at `origin`, then re-announces it from `origin` up to
    /// `retries` times while some node still lacks it. Returns the number of
    /// other nodes holding it afterwards.
    pub fn broadcast_tx(&mut self, origin: usize, tx: Transaction, retries: u32) -> Result<usize, SubmitError> {
        let body = tx.encode();
        let digest = match self.submit(origin, tx) {
            Ok(d) => d,
            Err(SubmitError::Duplicate) => return Ok(self.holders(origin, &body)),
            Err(e) => return Err(e),
        };
        let settle = self.settle_window();
        self.run_until_quiet(settle);
        for _ in 0..retries {
            if self.nodes.iter().all(|n| !n.online || n.knows_tx(&digest)) {
                break;
            }
            for p in self.peers(origin) {
                self.send(origin, p, &Message::BroadcastTx { body: body.clone() });
            }
            self.run_until_quiet(settle);
        }
        Ok(self.holders(origin, &body))
    }

    fn holders(&self, origin: usize, body: &[u8]) -> usize {
        let Ok(tx) = Transaction::decode(body) else {
            return 0;
        };
        let Some(digest) = crate::miner::digest_of(&tx, &self.nodes[origin].store) else {
            return 0;
        };
        self.nodes
            .iter()
            .enumerate()
            .filter(|(i, n)| *i != origin && n.knows_tx(&digest))
            .count()
    }

    fn settle_window(&self) -> u64 {
        let max_delay = self.links.values().map(|l| l.config.delay_ms).max().unwrap_or(0);
        (max_delay + 1) * (self.nodes.len() as u64 + 2) + self.retry_ms
    }

    /// Runs a mining round on `node` and announces the block.
    pub fn mine(&mut self, node: usize) -> Result<RoundOutcome, StoreError> {
        let peers = self.peers(node);
        let (outcome, out) = self.nodes[node].mine(self.now, &peers)?;
        self.route(node, out);
        Ok(outcome)
    }

    /// Asks `peer` for the UpdateTx with `digest` on behalf of `node` and
    /// waits up to `budget_ms` for the answer.
    pub fn fetch_update_tx(
        &mut self,
        node: usize,
        peer: usize,
        digest: Digest,
        budget_ms: u64,
    ) -> Result<Option<UpdateTx>, FetchError> {
        self.nodes[node].fetched_updates.remove(&digest);
        self.send(node, peer, &Message::ReqUpdateTx { digest });
        let deadline = self.now + budget_ms;
        while self.now <= deadline {
            if let Some(answer) = self.nodes[node].fetched_updates.remove(&digest) {
                return Ok(answer.and_then(|b| match Transaction::decode(&b) {
                    Ok(Transaction::Update(u)) => Some(u),
                    _ => None,
                }));
            }
            let Some(next) = self.queue.peek().map(|Reverse(e)| e.at) else {
                break;
            };
            if next > deadline {
                break;
            }
            let Reverse(ev) = self.queue.pop().expect("peeked");
            self.deliver(ev);
        }
        self.now = self.now.max(deadline);
        Err(FetchError::Timeout(budget_ms))
    }

    /// Has `node` compare tips with its peers and fetch any blocks it lacks.
    pub fn exchange_tips(&mut self, node: usize) {
        let peers = self.peers(node);
        let out = self.nodes[node].request_tips(&peers);
        self.route(node, out);
    }

    /// Brings `node` online and starts its chain download from `peer`.
    pub fn join(&mut self, node: usize, peer: usize) {
        let out = self.nodes[node].start_sync(self.now, peer);
        self.route(node, out);
    }
}
