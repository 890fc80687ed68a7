use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::{debug, warn};
use thiserror::Error;

use super::Message;
use crate::digest::Digest;
use crate::ledger::{self, Block};
use crate::miner::{
    digest_of, import_block, mining_round, Genesis, ImportError, NodeConfig, OpenTxPool, ReplayLedger, RoundOutcome,
};
use crate::storage::{KvRead, Store, StoreError, BUCKET_UPDATE_TX};
use crate::tx::{AggPayload, Transaction, TxKind};

pub type Outgoing = Vec<(usize, Message)>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubmitError {
    #[error("transaction owner is not a known account")]
    UnknownOwner,
    #[error("transaction already known")]
    Duplicate,
    #[error("node is offline")]
    Offline,
}

/// Why a joining node gave up synchronizing.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("sync aborted at height {height}: {reason}")]
pub struct SyncError {
    pub height: u64,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Request {
    Tip,
    Block(u64),
    Body(Digest),
}

/// History download of a joining node: block lists first, then every body,
/// then a sequential replay.
#[derive(Debug)]
struct SyncState {
    peer: usize,
    target: u64,
    next: u64,
    blocks: BTreeMap<u64, (Digest, Block)>,
    bodies: HashMap<Digest, Vec<u8>>,
    wanted: BTreeMap<Digest, TxKind>,
    ledger: ReplayLedger,
    awaiting_tip: bool,
}

/// A miner: storage, open pool and the message handlers that keep it in step
/// with its peers.
pub struct Node {
    pub id: String,
    pub store: Store,
    pub pool: OpenTxPool,
    pub config: NodeConfig,
    /// Offline nodes ignore every message.
    pub online: bool,
    pub sync_error: Option<SyncError>,
    /// Height and tick at which each UpdateTx took effect locally.
    pub applied_updates: BTreeMap<Digest, (u64, u64)>,
    /// Responses to explicit UpdateTx fetches.
    pub fetched_updates: HashMap<Digest, Option<Vec<u8>>>,
    /// Tab-separated validation decisions of own mining rounds.
    pub decision_log: Vec<String>,
    sync: Option<SyncState>,
    pending: BTreeMap<u64, (Block, usize)>,
    bodies: HashMap<Digest, Transaction>,
    requested: HashMap<Request, u64>,
    retry_ms: u64,
    round: u64,
}

impl Node {
    pub fn new(id: impl Into<String>, genesis: &Genesis, config: NodeConfig) -> Result<Self, StoreError> {
        Self::with_store(id, Store::in_memory(), genesis, config)
    }

    pub fn with_store(
        id: impl Into<String>,
        mut store: Store,
        genesis: &Genesis,
        config: NodeConfig,
    ) -> Result<Self, StoreError> {
        if ledger::chain_height(&store).is_none() {
            genesis
                .install(&mut store)
                .map_err(|e| StoreError::Corrupt(format!("genesis: {e}")))?;
        }
        Ok(Self {
            id: id.into(),
            store,
            pool: OpenTxPool::new(),
            config,
            online: true,
            sync_error: None,
            applied_updates: BTreeMap::new(),
            fetched_updates: HashMap::new(),
            decision_log: Vec::new(),
            sync: None,
            pending: BTreeMap::new(),
            bodies: HashMap::new(),
            requested: HashMap::new(),
            retry_ms: 200,
            round: 0,
        })
    }

    pub fn set_retry_ms(&mut self, ms: u64) {
        self.retry_ms = ms.max(1);
    }

    pub fn height(&self) -> u64 {
        ledger::chain_height(&self.store).unwrap_or(0)
    }

    pub fn tip_key(&self) -> Digest {
        ledger::block_key_at(&self.store, self.height()).unwrap_or(Digest::ZERO)
    }

    pub fn is_syncing(&self) -> bool {
        self.sync.is_some()
    }

    /// Whether the node may propose blocks.
    pub fn is_active(&self) -> bool {
        self.online && self.sync.is_none() && self.sync_error.is_none()
    }

    /// True while requests are outstanding that may need repeating.
    pub fn has_outstanding(&self) -> bool {
        self.online && (self.sync.is_some() || !self.pending.is_empty())
    }

    /// Whether `digest` is pending or stored.
    pub fn knows_tx(&self, digest: &Digest) -> bool {
        self.pool.contains(digest) || self.store.read_tx_any(digest).is_some()
    }

    pub fn stored_tx(&self, digest: &Digest) -> Option<Transaction> {
        self.store
            .read_tx_any(digest)
            .and_then(|(_, b)| Transaction::decode(b).ok())
    }

    /// Accepts a transaction from a client into the pool and floods it.
    pub fn submit(&mut self, tx: Transaction, peers: &[usize]) -> Result<(Digest, Outgoing), SubmitError> {
        if !self.online {
            return Err(SubmitError::Offline);
        }
        let digest = digest_of(&tx, &self.store).ok_or(SubmitError::UnknownOwner)?;
        if self.knows_tx(&digest) {
            return Err(SubmitError::Duplicate);
        }
        let body = tx.encode();
        self.pool.insert(digest, tx);
        let out = peers
            .iter()
            .map(|&p| (p, Message::BroadcastTx { body: body.clone() }))
            .collect();
        Ok((digest, out))
    }

    /// Runs a mining round on the local pool and announces the block.
    pub fn mine(&mut self, now: u64, peers: &[usize]) -> Result<(RoundOutcome, Outgoing), StoreError> {
        self.round += 1;
        let outcome = mining_round(&mut self.pool, &mut self.store, &self.config, now / 1000, self.round)?;
        self.decision_log
            .extend(outcome.decisions.iter().map(|d| d.log_line()));
        self.note_updates(&outcome.block, now);
        let out = peers
            .iter()
            .map(|&p| {
                (
                    p,
                    Message::BroadcastBlock {
                        block: outcome.block.clone(),
                    },
                )
            })
            .collect();
        Ok((outcome, out))
    }

    fn note_updates(&mut self, block: &Block, now: u64) {
        for d in &block.txs.update {
            self.applied_updates.entry(*d).or_insert((block.height, now));
        }
    }

    /// Handles one delivered message and returns the replies to send.
    pub fn handle(&mut self, now: u64, from: usize, msg: Message, peers: &[usize]) -> Outgoing {
        if !self.online {
            return Vec::new();
        }
        match msg {
            Message::ReqBlock { height } => {
                let block = ledger::block_key_at(&self.store, height)
                    .and_then(|k| ledger::load_block(&self.store, &k).map(|b| (k, b)));
                vec![(from, Message::ResBlock { height, block })]
            }
            Message::ResBlock { height, block } => {
                let Some((key, block)) = block else {
                    return Vec::new();
                };
                if block.height != height {
                    return Vec::new();
                }
                if self.sync.is_some() {
                    return self.sync_on_block(now, key, block);
                }
                self.pending.entry(height).or_insert((block, from));
                self.advance(now, peers)
            }
            Message::ReqTx { kind, digest } => {
                let body = self
                    .store
                    .read(kind.bucket(), digest.as_bytes())
                    .map(<[u8]>::to_vec)
                    .or_else(|| self.pool.get(&digest).map(Transaction::encode));
                vec![(from, Message::ResTx { digest, body })]
            }
            Message::ReqUpdateTx { digest } => {
                let body = self
                    .store
                    .read(BUCKET_UPDATE_TX, digest.as_bytes())
                    .map(<[u8]>::to_vec)
                    .or_else(|| {
                        self.pool
                            .get(&digest)
                            .filter(|t| t.kind() == TxKind::Update)
                            .map(Transaction::encode)
                    });
                vec![(from, Message::ResUpdateTx { digest, body })]
            }
            Message::ResTx { digest, body } => self.on_body(now, digest, body, peers),
            Message::ResUpdateTx { digest, body } => {
                self.fetched_updates.insert(digest, body.clone());
                self.on_body(now, digest, body, peers)
            }
            Message::BroadcastTx { body } => {
                let Ok(tx) = Transaction::decode(&body) else {
                    return Vec::new();
                };
                let Some(digest) = digest_of(&tx, &self.store) else {
                    return Vec::new();
                };
                if self.knows_tx(&digest) {
                    return Vec::new();
                }
                self.pool.insert(digest, tx);
                let mut out: Outgoing = peers
                    .iter()
                    .filter(|&&p| p != from)
                    .map(|&p| (p, Message::BroadcastTx { body: body.clone() }))
                    .collect();
                if !self.pending.is_empty() && self.sync.is_none() {
                    out.extend(self.advance(now, peers));
                }
                out
            }
            Message::BroadcastBlock { block } => {
                if block.height <= self.height() && self.sync.is_none() {
                    return Vec::new();
                }
                self.pending.entry(block.height).or_insert((block, from));
                if self.sync.is_some() {
                    return Vec::new();
                }
                self.advance(now, peers)
            }
            Message::ReqChainTip => vec![(
                from,
                Message::ResChainTip {
                    height: self.height(),
                    key: self.tip_key(),
                },
            )],
            Message::ResChainTip { height, .. } if self.sync.is_none() => self.catch_up(now, from, height),
            Message::ResChainTip { height, .. } => self.sync_on_tip(now, height, peers),
        }
    }

    fn on_body(&mut self, now: u64, digest: Digest, body: Option<Vec<u8>>, peers: &[usize]) -> Outgoing {
        let Some(body) = body else {
            return Vec::new();
        };
        if self.sync.is_some() {
            return self.sync_on_body(now, digest, body, peers);
        }
        if let Ok(tx) = Transaction::decode(&body) {
            self.bodies.insert(digest, tx);
        }
        self.advance(now, peers)
    }

    fn should_request(&mut self, now: u64, req: Request) -> bool {
        match self.requested.get(&req) {
            Some(&at) if now < at + self.retry_ms => false,
            _ => {
                self.requested.insert(req, now);
                true
            }
        }
    }

    fn body_request(kind: TxKind, digest: Digest) -> Message {
        match kind {
            TxKind::Update => Message::ReqUpdateTx { digest },
            _ => Message::ReqTx { kind, digest },
        }
    }

    /// Imports buffered blocks that extend the tip, asking their sender for
    /// missing bodies or missing predecessors.
    fn advance(&mut self, now: u64, peers: &[usize]) -> Outgoing {
        let mut out = Vec::new();
        loop {
            let tip = self.height();
            self.pending.retain(|h, _| *h > tip);
            let Some((block, source)) = self.pending.get(&(tip + 1)).cloned() else {
                if let Some((&h, &(_, source))) = self.pending.iter().next() {
                    for missing in tip + 1..h {
                        if self.should_request(now, Request::Block(missing)) {
                            out.push((source, Message::ReqBlock { height: missing }));
                        }
                    }
                }
                return out;
            };
            let mut bodies = HashMap::new();
            let mut complete = true;
            for (kind, digest) in block.txs.iter() {
                match self.bodies.get(&digest).or_else(|| self.pool.get(&digest)) {
                    Some(tx) => {
                        bodies.insert(digest, tx.clone());
                    }
                    None => {
                        complete = false;
                        if self.should_request(now, Request::Body(digest)) {
                            out.push((source, Self::body_request(kind, digest)));
                        }
                    }
                }
            }
            if !complete {
                return out;
            }
            self.pending.remove(&(tip + 1));
            match import_block(&mut self.store, &self.config, &block, None, &bodies, None) {
                Ok(_) => {
                    for d in block.digests() {
                        self.pool.remove(&d);
                        self.bodies.remove(&d);
                        self.requested.remove(&Request::Body(d));
                    }
                    self.requested.remove(&Request::Block(block.height));
                    self.note_updates(&block, now);
                    debug!("{} imported block {}", self.id, block.height);
                    out.extend(
                        peers
                            .iter()
                            .filter(|&&p| p != source)
                            .map(|&p| (p, Message::BroadcastBlock { block: block.clone() })),
                    );
                }
                Err(e) => warn!("{} rejected block {} from peer {}: {}", self.id, block.height, source, e),
            }
        }
    }

    /// Re-sends requests that went unanswered for longer than the retry
    /// interval.
    pub fn poll(&mut self, now: u64, peers: &[usize]) -> Outgoing {
        if !self.online {
            return Vec::new();
        }
        match &self.sync {
            Some(s) => {
                let peer = s.peer;
                let mut reqs = Vec::new();
                if s.awaiting_tip {
                    reqs.push((Request::Tip, Message::ReqChainTip));
                } else {
                    if s.next <= s.target {
                        reqs.push((Request::Block(s.next), Message::ReqBlock { height: s.next }));
                    }
                    for (d, k) in &s.wanted {
                        reqs.push((Request::Body(*d), Self::body_request(*k, *d)));
                    }
                }
                reqs.into_iter()
                    .filter(|(r, _)| self.should_request(now, *r))
                    .map(|(_, m)| (peer, m))
                    .collect()
            }
            None => self.advance(now, peers),
        }
    }

    /// Starts downloading and replaying the chain held by `peer`.
    pub fn start_sync(&mut self, now: u64, peer: usize) -> Outgoing {
        self.online = true;
        self.sync_error = None;
        self.sync = Some(SyncState {
            peer,
            target: 0,
            next: 0,
            blocks: BTreeMap::new(),
            bodies: HashMap::new(),
            wanted: BTreeMap::new(),
            ledger: ReplayLedger::default(),
            awaiting_tip: true,
        });
        self.requested.insert(Request::Tip, now);
        vec![(peer, Message::ReqChainTip)]
    }

    /// Asks every peer for its chain tip.
    pub fn request_tips(&self, peers: &[usize]) -> Outgoing {
        if !self.online || self.sync.is_some() {
            return Vec::new();
        }
        peers.iter().map(|&p| (p, Message::ReqChainTip)).collect()
    }

    /// Requests the blocks between the local tip and a peer's higher tip.
    fn catch_up(&mut self, now: u64, peer: usize, height: u64) -> Outgoing {
        let tip = self.height();
        (tip + 1..=height)
            .filter(|&h| !self.pending.contains_key(&h) && self.should_request(now, Request::Block(h)))
            .map(|h| (peer, Message::ReqBlock { height: h }))
            .collect()
    }

    fn sync_on_tip(&mut self, now: u64, height: u64, peers: &[usize]) -> Outgoing {
        let tip = self.height();
        let Some(sync) = self.sync.as_mut() else {
            return Vec::new();
        };
        if !sync.awaiting_tip {
            return Vec::new();
        }
        sync.awaiting_tip = false;
        self.requested.remove(&Request::Tip);
        if height <= tip {
            self.sync = None;
            return self.advance(now, peers);
        }
        sync.target = height;
        sync.next = tip + 1;
        let (peer, next) = (sync.peer, sync.next);
        self.requested.insert(Request::Block(next), now);
        vec![(peer, Message::ReqBlock { height: next })]
    }

    fn sync_on_block(&mut self, now: u64, key: Digest, block: Block) -> Outgoing {
        let Some(sync) = self.sync.as_mut() else {
            return Vec::new();
        };
        if sync.awaiting_tip || block.height != sync.next {
            return Vec::new();
        }
        let mut reqs = Vec::new();
        for (kind, digest) in block.txs.iter() {
            if !sync.bodies.contains_key(&digest) && sync.wanted.insert(digest, kind).is_none() {
                reqs.push((Request::Body(digest), Self::body_request(kind, digest)));
            }
        }
        sync.blocks.insert(block.height, (key, block));
        self.requested.remove(&Request::Block(sync.next));
        sync.next += 1;
        if sync.next <= sync.target {
            reqs.push((Request::Block(sync.next), Message::ReqBlock { height: sync.next }));
        }
        let peer = sync.peer;
        let mut out = Vec::new();
        for (r, m) in reqs {
            self.requested.insert(r, now);
            out.push((peer, m));
        }
        out.extend(self.sync_try_replay(now));
        out
    }

    fn sync_on_body(&mut self, now: u64, digest: Digest, body: Vec<u8>, peers: &[usize]) -> Outgoing {
        let Some(sync) = self.sync.as_mut() else {
            return Vec::new();
        };
        if sync.wanted.remove(&digest).is_none() {
            return Vec::new();
        }
        self.requested.remove(&Request::Body(digest));
        let mut reqs = Vec::new();
        if let Ok(Transaction::Agg(agg)) = Transaction::decode(&body) {
            let kind = match agg.payload {
                AggPayload::Funds { .. } => TxKind::Funds,
                AggPayload::Data { .. } => TxKind::Data,
            };
            for d in agg.aggregated_hashes {
                let stored = self.store.read(kind.bucket(), d.as_bytes()).is_some();
                if !stored && !sync.bodies.contains_key(&d) && sync.wanted.insert(d, kind).is_none() {
                    reqs.push((Request::Body(d), Self::body_request(kind, d)));
                }
            }
        }
        sync.bodies.insert(digest, body);
        let peer = sync.peer;
        let mut out = Vec::new();
        for (r, m) in reqs {
            self.requested.insert(r, now);
            out.push((peer, m));
        }
        let _ = peers;
        out.extend(self.sync_try_replay(now));
        out
    }

    /// Once every block up to the target and every body has arrived, replays
    /// the downloaded history in height order, then asks for the tip again.
    fn sync_try_replay(&mut self, now: u64) -> Outgoing {
        let ready = matches!(&self.sync, Some(s) if !s.awaiting_tip && s.next > s.target && s.wanted.is_empty());
        if !ready {
            return Vec::new();
        }
        let mut sync = self.sync.take().expect("checked");
        match self.replay(&mut sync) {
            Ok(()) => {
                sync.blocks.clear();
                sync.bodies.clear();
                sync.awaiting_tip = true;
                let peer = sync.peer;
                self.sync = Some(sync);
                self.requested.insert(Request::Tip, now);
                vec![(peer, Message::ReqChainTip)]
            }
            Err(e) => {
                warn!("{}: {}", self.id, e);
                self.sync_error = Some(e);
                self.online = false;
                Vec::new()
            }
        }
    }

    fn replay(&mut self, sync: &mut SyncState) -> Result<(), SyncError> {
        let first = sync.blocks.keys().next().copied().unwrap_or(0);
        let abort = |height: u64, reason: String| SyncError { height, reason };
        let mut decoded = HashMap::new();
        for (d, bytes) in &sync.bodies {
            let tx = Transaction::decode(bytes).map_err(|e| abort(first, format!("undecodable body {d}: {e}")))?;
            decoded.insert(*d, tx);
        }
        let listed: BTreeSet<Digest> = sync.blocks.values().flat_map(|(_, b)| b.digests()).collect();
        // Bodies removed from blocks by aggregation are stored up front so
        // that updates replayed before their AggTx can find them.
        let mut prestored = Vec::new();
        for (d, tx) in &decoded {
            if !listed.contains(d) {
                self.store
                    .put(tx.kind().bucket(), d.as_bytes(), &tx.encode())
                    .map_err(|e| abort(first, e.to_string()))?;
                prestored.push((*d, tx.clone()));
            }
        }
        for (height, (key, block)) in &sync.blocks {
            import_block(
                &mut self.store,
                &self.config,
                block,
                Some(*key),
                &decoded,
                Some(&mut sync.ledger),
            )
            .map_err(|e: ImportError| abort(*height, e.to_string()))?;
            self.note_updates(block, 0);
        }
        let last = sync.blocks.keys().last().copied().unwrap_or(first);
        sync.ledger
            .settle(&mut self.store)
            .map_err(|e| abort(last, e.to_string()))?;
        for (d, tx) in prestored {
            if digest_of(&tx, &self.store) != Some(d) {
                return Err(abort(last, format!("aggregated body {d} does not hash to its digest")));
            }
        }
        self.store.flush().map_err(|e| abort(last, e.to_string()))?;
        Ok(())
    }

    /// Silently rewrites a stored body (fault injection): bumps the amount
    /// of a FundsTx, or appends a byte to the data of any other data-bearing
    /// transaction. Returns whether anything was changed.
    pub fn tamper(&mut self, digest: &Digest) -> bool {
        let Some((bucket, bytes)) = self.store.read_tx_any(digest) else {
            return false;
        };
        let Ok(mut tx) = Transaction::decode(bytes) else {
            return false;
        };
        match &mut tx {
            Transaction::Funds(f) => f.amount = f.amount.wrapping_add(1),
            Transaction::Account(t) => t.data.push(0x21),
            Transaction::Data(t) => t.data.push(0x21),
            Transaction::Update(t) => t.data.push(0x21),
            Transaction::Agg(_) => return false,
        }
        self.store.put(bucket, digest.as_bytes(), &tx.encode()).is_ok()
    }
}
