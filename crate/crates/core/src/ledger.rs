//! Blocks, chain links, proof of work, chain validation and transaction
//! aggregation.
//!
//! Blocks hold transaction digests only. Because an update leaves a
//! transaction's chameleon digest unchanged, updates never touch a mined
//! block: the Merkle root recomputed from the rewritten bodies is the one in
//! the header.

use std::collections::HashSet;

use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::digest::{inner_hash, inner_hash_parts, Digest};
use crate::keys::Address;
use crate::storage::{KvRead, KvWrite, StoreError, BUCKET_ACCOUNTS, BUCKET_BLOCKS, BUCKET_META};
use crate::tx::{Account, AggPayload, AggTx, DataTx, FundsTx, Transaction, TxKind};

/// Upper bound on proof-of-work difficulty accepted by the simulator.
pub const MAX_DIFFICULTY: u8 = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConsensusMode {
    /// Leading-zero-bit puzzle over the block hash.
    ProofOfWork,
    /// Fixed proposer rotation, no puzzle.
    RoundRobin,
}

impl std::str::FromStr for ConsensusMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pow" => Ok(ConsensusMode::ProofOfWork),
            "roundrobin" => Ok(ConsensusMode::RoundRobin),
            other => Err(format!("unknown consensus mode {other:?} (expected pow or roundrobin)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConsensusConfig {
    pub mode: ConsensusMode,
    pub difficulty: u8,
}

impl ConsensusConfig {
    pub fn pow(difficulty: u8) -> Self {
        Self {
            mode: ConsensusMode::ProofOfWork,
            difficulty: difficulty.min(MAX_DIFFICULTY),
        }
    }

    pub fn round_robin() -> Self {
        Self {
            mode: ConsensusMode::RoundRobin,
            difficulty: 0,
        }
    }

    /// Difficulty every non-genesis block must carry.
    pub fn block_difficulty(&self) -> u8 {
        match self.mode {
            ConsensusMode::ProofOfWork => self.difficulty,
            ConsensusMode::RoundRobin => 0,
        }
    }
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self::pow(8)
    }
}

/// Digest lists of a block, each kept sorted by digest bytes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TxLists {
    pub account: Vec<Digest>,
    pub funds: Vec<Digest>,
    pub data: Vec<Digest>,
    pub agg: Vec<Digest>,
    pub update: Vec<Digest>,
}

impl TxLists {
    pub fn list(&self, kind: TxKind) -> &Vec<Digest> {
        match kind {
            TxKind::Account => &self.account,
            TxKind::Funds => &self.funds,
            TxKind::Data => &self.data,
            TxKind::Agg => &self.agg,
            TxKind::Update => &self.update,
        }
    }

    pub fn list_mut(&mut self, kind: TxKind) -> &mut Vec<Digest> {
        match kind {
            TxKind::Account => &mut self.account,
            TxKind::Funds => &mut self.funds,
            TxKind::Data => &mut self.data,
            TxKind::Agg => &mut self.agg,
            TxKind::Update => &mut self.update,
        }
    }

    pub fn push(&mut self, kind: TxKind, digest: Digest) {
        self.list_mut(kind).push(digest);
    }

    pub fn canonicalize(&mut self) {
        for kind in TxKind::ALL {
            let l = self.list_mut(kind);
            l.sort_unstable();
            l.dedup();
        }
    }

    /// `(kind, digest)` in canonical block order: account, funds, data, agg,
    /// update.
    pub fn iter(&self) -> impl Iterator<Item = (TxKind, Digest)> + '_ {
        TxKind::ALL
            .into_iter()
            .flat_map(move |k| self.list(k).iter().map(move |d| (k, *d)))
    }

    pub fn len(&self) -> usize {
        TxKind::ALL.iter().map(|k| self.list(*k).len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        TxKind::ALL.iter().any(|k| self.list(*k).contains(digest))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub prev_hash: Digest,
    /// Link to the predecessor that ignores its Merkle root and nonce, so it
    /// survives aggregation pruning the predecessor.
    pub fallback_prev: Digest,
    pub merkle_root: Digest,
    pub nonce: u64,
    pub difficulty: u8,
    pub height: u64,
    pub nr_update_tx: u16,
    pub timestamp: u64,
    /// Set once aggregation removed transactions from this block.
    pub aggregated: bool,
    pub txs: TxLists,
}

/// Binary Merkle tree over digests: pairs hashed as `H(left || right)`, an odd
/// node paired with itself, the empty list hashing to `H("")`.
pub fn merkle_root_of(tx_hashes: &[Digest]) -> Digest {
    if tx_hashes.is_empty() {
        return inner_hash(b"");
    }
    let mut level = tx_hashes.to_vec();
    loop {
        level = level
            .chunks(2)
            .map(|pair| {
                let right = pair.get(1).unwrap_or(&pair[0]);
                inner_hash_parts(&[pair[0].as_bytes(), right.as_bytes()])
            })
            .collect();
        if level.len() == 1 {
            return level[0];
        }
    }
}

impl Block {
    /// Height-0 block listing the founding account transactions.
    pub fn genesis(account_txs: Vec<Digest>, timestamp: u64) -> Self {
        let mut txs = TxLists {
            account: account_txs,
            ..Default::default()
        };
        txs.canonicalize();
        let merkle_root = merkle_root_of(&txs.iter().map(|(_, d)| d).collect::<Vec<_>>());
        Block {
            prev_hash: Digest::ZERO,
            fallback_prev: Digest::ZERO,
            merkle_root,
            nonce: 0,
            difficulty: 0,
            height: 0,
            nr_update_tx: 0,
            timestamp,
            aggregated: false,
            txs,
        }
    }

    /// `H(prev_hash || merkle_root || height || timestamp || difficulty || nonce || nr_update_tx)`
    pub fn hash(&self) -> Digest {
        let mut w = Writer::new();
        w.raw(self.prev_hash.as_bytes())
            .raw(self.merkle_root.as_bytes())
            .u64(self.height)
            .u64(self.timestamp)
            .u8(self.difficulty)
            .u64(self.nonce)
            .u16(self.nr_update_tx);
        inner_hash(w.as_slice())
    }

    /// `H(prev_hash || height || timestamp || difficulty)`
    pub fn fallback_hash(&self) -> Digest {
        let mut w = Writer::new();
        w.raw(self.prev_hash.as_bytes())
            .u64(self.height)
            .u64(self.timestamp)
            .u8(self.difficulty);
        inner_hash(w.as_slice())
    }

    pub fn digests(&self) -> Vec<Digest> {
        self.txs.iter().map(|(_, d)| d).collect()
    }

    pub fn meets_difficulty(&self) -> bool {
        self.hash().leading_zero_bits() >= u32::from(self.difficulty)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(self.prev_hash.as_bytes())
            .raw(self.fallback_prev.as_bytes())
            .raw(self.merkle_root.as_bytes())
            .u64(self.height)
            .u64(self.timestamp)
            .u8(self.difficulty)
            .u64(self.nonce)
            .u16(self.nr_update_tx)
            .u8(u8::from(self.aggregated));
        for kind in TxKind::ALL {
            let list = self.txs.list(kind);
            w.u16(u16::try_from(list.len()).expect("more than 65535 transactions of one kind"));
            for d in list {
                w.raw(d.as_bytes());
            }
        }
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let prev_hash = r.digest("prev_hash")?;
        let fallback_prev = r.digest("fallback_prev")?;
        let merkle_root = r.digest("merkle_root")?;
        let height = r.u64("height")?;
        let timestamp = r.u64("timestamp")?;
        let difficulty = r.u8("difficulty")?;
        let nonce = r.u64("nonce")?;
        let nr_update_tx = r.u16("nr_update_tx")?;
        let aggregated = match r.u8("aggregated")? {
            0 => false,
            1 => true,
            _ => return Err(DecodeError::invalid("aggregated", "flag must be 0 or 1")),
        };
        let mut txs = TxLists::default();
        for kind in TxKind::ALL {
            let n = r.u16("list count")?;
            for _ in 0..n {
                txs.push(kind, r.digest("tx digest")?);
            }
        }
        r.finish()?;
        Ok(Block {
            prev_hash,
            fallback_prev,
            merkle_root,
            nonce,
            difficulty,
            height,
            nr_update_tx,
            timestamp,
            aggregated,
            txs,
        })
    }

    /// Drops the given digests from this block's lists and reseals the
    /// Merkle root. Returns whether anything was removed.
    pub fn prune(&mut self, removed: &HashSet<Digest>) -> bool {
        let before = self.txs.len();
        for kind in [TxKind::Funds, TxKind::Data] {
            self.txs.list_mut(kind).retain(|d| !removed.contains(d));
        }
        if self.txs.len() == before {
            return false;
        }
        self.merkle_root = merkle_root_of(&self.digests());
        self.aggregated = true;
        true
    }
}

/// Assembles a block on top of `prev` and solves its puzzle: the nonce is
/// the first one (counting from 0) whose block hash has `difficulty` leading
/// zero bits.
pub fn mine_block(mut txs: TxLists, prev: &Block, difficulty: u8, timestamp: u64) -> Block {
    assert!(difficulty <= MAX_DIFFICULTY, "difficulty above {MAX_DIFFICULTY}");
    txs.canonicalize();
    let nr_update_tx = u16::try_from(txs.update.len()).expect("too many updates in one block");
    let mut block = Block {
        prev_hash: prev.hash(),
        fallback_prev: prev.fallback_hash(),
        merkle_root: merkle_root_of(&txs.iter().map(|(_, d)| d).collect::<Vec<_>>()),
        nonce: 0,
        difficulty,
        height: prev.height + 1,
        nr_update_tx,
        timestamp,
        aggregated: false,
        txs,
    };
    while !block.meets_difficulty() {
        block.nonce += 1;
    }
    block
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    Height,
    GenesisLink,
    PrevLink,
    FallbackLink,
    Difficulty,
    ProofOfWork,
    UpdateCounter,
    MissingTx(Digest),
    UndecodableTx(Digest),
    WrongBucket(Digest),
    UnknownAccount(Address),
    BadTxHash(Digest),
    MerkleRoot,
    Signature(Digest),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("chain invalid at height {height}: {kind:?}")]
pub struct ChainViolation {
    pub height: u64,
    pub kind: ViolationKind,
}

/// Source of account records during validation.
pub trait AccountLookup {
    fn account(&self, address: &Address) -> Option<Account>;
}

impl<T: KvRead> AccountLookup for T {
    fn account(&self, address: &Address) -> Option<Account> {
        self.read(BUCKET_ACCOUNTS, address.as_bytes())
            .and_then(|b| Account::decode(b).ok())
    }
}

/// Source of transaction bodies by (kind, digest).
pub trait TxSource {
    fn tx_bytes(&self, kind: TxKind, digest: &Digest) -> Option<Vec<u8>>;
}

impl<T: KvRead> TxSource for T {
    fn tx_bytes(&self, kind: TxKind, digest: &Digest) -> Option<Vec<u8>> {
        self.read(kind.bucket(), digest.as_bytes()).map(<[u8]>::to_vec)
    }
}

/// Recomputes a stored transaction's digest from its body and its owner's
/// published parameters, and checks its signature.
pub fn recompute_tx_hash(tx: &Transaction, accounts: &impl AccountLookup) -> Result<(Digest, bool), ViolationKind> {
    match tx {
        Transaction::Agg(_) => Ok((tx.tx_message(), true)),
        Transaction::Account(a) => {
            let h = tx
                .tx_hash(&a.parameters)
                .map_err(|_| ViolationKind::BadTxHash(tx.tx_message()))?;
            let sig_ok = a.issuer_matches_key() && tx.verify_signature(&a.public_key, &a.parameters);
            Ok((h, sig_ok))
        }
        _ => {
            let owner = tx.owner().expect("data-bearing");
            let acc = accounts.account(&owner).ok_or(ViolationKind::UnknownAccount(owner))?;
            let h = tx
                .tx_hash(&acc.chf_parameters)
                .map_err(|_| ViolationKind::BadTxHash(tx.tx_message()))?;
            Ok((h, tx.verify_signature(&acc.signing_public_key, &acc.chf_parameters)))
        }
    }
}

fn validate_block_body(
    block: &Block,
    accounts: &impl AccountLookup,
    txs: &impl TxSource,
) -> Result<(), ViolationKind> {
    let mut recomputed = Vec::with_capacity(block.txs.len());
    let mut bad_sigs = Vec::new();
    for (kind, digest) in block.txs.iter() {
        let bytes = txs.tx_bytes(kind, &digest).ok_or(ViolationKind::MissingTx(digest))?;
        let tx = Transaction::decode(&bytes).map_err(|_| ViolationKind::UndecodableTx(digest))?;
        if tx.kind() != kind {
            return Err(ViolationKind::WrongBucket(digest));
        }
        let (h, sig_ok) = recompute_tx_hash(&tx, accounts)?;
        if !sig_ok {
            bad_sigs.push(digest);
        }
        recomputed.push(h);
    }
    if merkle_root_of(&recomputed) != block.merkle_root {
        return Err(ViolationKind::MerkleRoot);
    }
    if let Some(d) = bad_sigs.first() {
        return Err(ViolationKind::Signature(*d));
    }
    Ok(())
}

/// Checks one block against its predecessor: height, links, difficulty,
/// proof of work, update counter.
pub fn validate_header(block: &Block, prev: Option<&Block>, consensus: &ConsensusConfig) -> Result<(), ViolationKind> {
    match prev {
        None => {
            if block.height != 0 {
                return Err(ViolationKind::Height);
            }
            if block.prev_hash != Digest::ZERO || block.fallback_prev != Digest::ZERO {
                return Err(ViolationKind::GenesisLink);
            }
        }
        Some(prev) => {
            if block.height != prev.height + 1 {
                return Err(ViolationKind::Height);
            }
            // A pruned predecessor hashes differently than when it was sealed;
            // only the fallback link still binds it.
            if !prev.aggregated && block.prev_hash != prev.hash() {
                return Err(ViolationKind::PrevLink);
            }
            if block.fallback_prev != prev.fallback_hash() {
                return Err(ViolationKind::FallbackLink);
            }
            if block.difficulty != consensus.block_difficulty() {
                return Err(ViolationKind::Difficulty);
            }
        }
    }
    if !block.aggregated && !block.meets_difficulty() {
        return Err(ViolationKind::ProofOfWork);
    }
    if usize::from(block.nr_update_tx) != block.txs.update.len() {
        return Err(ViolationKind::UpdateCounter);
    }
    Ok(())
}

/// Full validation: every link, proof of work, and Merkle root recomputed
/// from the chameleon hashes of the stored bodies. Reports the first
/// violation in height order.
pub fn validate_chain(
    blocks: &[Block],
    consensus: &ConsensusConfig,
    accounts: &impl AccountLookup,
    txs: &impl TxSource,
) -> Result<(), ChainViolation> {
    for (i, block) in blocks.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| &blocks[j]);
        let at = |kind| ChainViolation {
            height: block.height,
            kind,
        };
        validate_header(block, prev, consensus).map_err(at)?;
        validate_block_body(block, accounts, txs).map_err(at)?;
    }
    Ok(())
}

const META_TIP: &[u8] = b"tip";

fn height_key(height: u64) -> Vec<u8> {
    let mut k = b"height/".to_vec();
    k.extend_from_slice(&height.to_be_bytes());
    k
}

/// Height of the stored chain tip, `None` before genesis.
pub fn chain_height(kv: &impl KvRead) -> Option<u64> {
    kv.read(BUCKET_META, META_TIP)
        .filter(|v| v.len() == 40)
        .map(|v| u64::from_be_bytes(v[32..40].try_into().unwrap()))
}

/// Storage key of the block at `height`: its hash at sealing time. Pruning
/// rewrites the block under the same key.
pub fn block_key_at(kv: &impl KvRead, height: u64) -> Option<Digest> {
    kv.read(BUCKET_META, &height_key(height)).and_then(Digest::from_slice)
}

pub fn load_block(kv: &impl KvRead, key: &Digest) -> Option<Block> {
    kv.read(BUCKET_BLOCKS, key.as_bytes()).and_then(|b| Block::decode(b).ok())
}

pub fn load_block_at(kv: &impl KvRead, height: u64) -> Option<Block> {
    block_key_at(kv, height).and_then(|k| load_block(kv, &k))
}

/// All stored blocks from genesis to tip.
pub fn load_chain(kv: &impl KvRead) -> Vec<Block> {
    let Some(tip) = chain_height(kv) else {
        return Vec::new();
    };
    (0..=tip).map_while(|h| load_block_at(kv, h)).collect()
}

/// Stores a newly sealed block and advances the tip to it.
pub fn append_block(kv: &mut impl KvWrite, block: &Block) -> Result<Digest, StoreError> {
    let key = block.hash();
    put_block(kv, &key, block)?;
    Ok(key)
}

/// Stores `block` under `key` and advances the tip to it.
pub fn put_block(kv: &mut impl KvWrite, key: &Digest, block: &Block) -> Result<(), StoreError> {
    kv.write(BUCKET_BLOCKS, key.as_bytes(), block.encode())?;
    kv.write(BUCKET_META, &height_key(block.height), key.as_bytes().to_vec())?;
    let mut tip = key.as_bytes().to_vec();
    tip.extend_from_slice(&block.height.to_be_bytes());
    kv.write(BUCKET_META, META_TIP, tip)
}

/// Rewrites a block in place (after pruning) under its original key.
pub fn rewrite_block(kv: &mut impl KvWrite, key: &Digest, block: &Block) -> Result<(), StoreError> {
    kv.write(BUCKET_BLOCKS, key.as_bytes(), block.encode())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregationError {
    #[error("nothing to aggregate")]
    Empty,
    #[error("transactions share neither sender nor receiver")]
    MixedParties,
    #[error("data transactions must share one sender")]
    MixedSenders,
    #[error("data fields differ; aggregating would lose data")]
    DataMismatch,
    #[error("aggregated amount overflows")]
    Overflow,
}

fn dedup_in_order(items: impl Iterator<Item = Address>) -> Vec<Address> {
    let mut seen = HashSet::new();
    items.filter(|a| seen.insert(*a)).collect()
}

/// Folds FundsTx with a common sender (or, failing that, a common receiver)
/// into one AggTx carrying their digests and the summed amount.
pub fn aggregate_funds(txs: &[(FundsTx, Digest)]) -> Result<AggTx, AggregationError> {
    let first = txs.first().ok_or(AggregationError::Empty)?;
    let same_sender = txs.iter().all(|(t, _)| t.from == first.0.from);
    let same_receiver = txs.iter().all(|(t, _)| t.to == first.0.to);
    if !same_sender && !same_receiver {
        return Err(AggregationError::MixedParties);
    }
    let total_amount = txs
        .iter()
        .try_fold(0u64, |acc, (t, _)| acc.checked_add(t.amount))
        .ok_or(AggregationError::Overflow)?;
    Ok(AggTx {
        from_list: dedup_in_order(txs.iter().map(|(t, _)| t.from)),
        to_list: dedup_in_order(txs.iter().map(|(t, _)| t.to)),
        payload: AggPayload::Funds { total_amount },
        aggregated_hashes: txs.iter().map(|(_, d)| *d).collect(),
    })
}

/// Folds DataTx from one sender that carry byte-identical data.
pub fn aggregate_data(txs: &[(DataTx, Digest)]) -> Result<AggTx, AggregationError> {
    let first = txs.first().ok_or(AggregationError::Empty)?;
    if txs.iter().any(|(t, _)| t.from != first.0.from) {
        return Err(AggregationError::MixedSenders);
    }
    if txs.iter().any(|(t, _)| t.data != first.0.data) {
        return Err(AggregationError::DataMismatch);
    }
    Ok(AggTx {
        from_list: vec![first.0.from],
        to_list: dedup_in_order(txs.iter().map(|(t, _)| t.to)),
        payload: AggPayload::Data {
            shared_data: first.0.data.clone(),
        },
        aggregated_hashes: txs.iter().map(|(_, d)| *d).collect(),
    })
}
