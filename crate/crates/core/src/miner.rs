//! Node-side pipeline: the open transaction pool, UpdateTx validation and
//! processing, transaction execution against staged storage, mining rounds
//! and import of blocks sealed by peers.

use std::collections::{BTreeMap, HashMap, HashSet};

use log::info;
use thiserror::Error;

use crate::digest::Digest;
use crate::keys::Address;
use crate::ledger::{
    self, aggregate_data, aggregate_funds, append_block, load_block, merkle_root_of, mine_block, rewrite_block, Block,
    ConsensusConfig, TxLists, ViolationKind,
};
use crate::storage::{KvRead, KvWrite, Staged, Store, StoreError, BUCKET_ACCOUNTS, BUCKET_DATA_TX, BUCKET_FUNDS_TX};
use crate::tx::{Account, AggPayload, AggTx, DataTx, FundsTx, Transaction, TxKind, UpdateTx};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct NodeConfig {
    /// Public networks require a positive fee on every UpdateTx.
    pub public_mode: bool,
    pub consensus: ConsensusConfig,
}

/// Why a transaction was not accepted. The first five variants are the
/// ordered UpdateTx validation steps.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("transaction to update {0} not found in local storage")]
    TargetMissing(Digest),
    #[error("issuer account {0} unknown")]
    IssuerUnknown(Address),
    #[error("signature invalid")]
    BadSignature,
    #[error("issuer does not own the transaction to update")]
    NotOwner,
    #[error("modified transaction does not hash to its digest")]
    HashMismatch,
    #[error("update fee must be positive in public mode")]
    FeeRequired,
    #[error("insufficient balance")]
    InsufficientBalance,
    #[error("transaction already known")]
    Duplicate,
    #[error("transaction counter not above the account's")]
    StaleCounter,
    #[error("unknown account {0}")]
    UnknownAccount(Address),
    #[error("account already exists")]
    AccountExists,
    #[error("invalid account parameters")]
    BadParameters,
    #[error("body does not hash to the announced digest")]
    DigestMismatch,
    #[error("invalid aggregation: {0}")]
    BadAggregation(&'static str),
    #[error("balance overflow")]
    Overflow,
    #[error("storage: {0}")]
    Storage(String),
}

impl Rejection {
    /// Validation step (1 to 5) at which an UpdateTx failed.
    pub fn step(&self) -> Option<u8> {
        match self {
            Rejection::TargetMissing(_) => Some(1),
            Rejection::IssuerUnknown(_) => Some(2),
            Rejection::BadSignature => Some(3),
            Rejection::NotOwner => Some(4),
            Rejection::HashMismatch => Some(5),
            _ => None,
        }
    }

    /// Short stable code for logs and exit reporting.
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::TargetMissing(_) => "target_missing",
            Rejection::IssuerUnknown(_) => "issuer_unknown",
            Rejection::BadSignature => "bad_signature",
            Rejection::NotOwner => "not_owner",
            Rejection::HashMismatch => "hash_mismatch",
            Rejection::FeeRequired => "fee_required",
            Rejection::InsufficientBalance => "insufficient_balance",
            Rejection::Duplicate => "duplicate",
            Rejection::StaleCounter => "stale_counter",
            Rejection::UnknownAccount(_) => "unknown_account",
            Rejection::AccountExists => "account_exists",
            Rejection::BadParameters => "bad_parameters",
            Rejection::DigestMismatch => "digest_mismatch",
            Rejection::BadAggregation(_) => "bad_aggregation",
            Rejection::Overflow => "overflow",
            Rejection::Storage(_) => "storage",
        }
    }
}

impl From<StoreError> for Rejection {
    fn from(e: StoreError) -> Self {
        Rejection::Storage(e.to_string())
    }
}

/// Received but not yet mined transactions, keyed by digest.
#[derive(Clone, Debug, Default)]
pub struct OpenTxPool {
    pending: BTreeMap<Digest, Transaction>,
}

impl OpenTxPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `tx` unless its digest is already pending. Returns whether it was
    /// added.
    pub fn insert(&mut self, digest: Digest, tx: Transaction) -> bool {
        if self.pending.contains_key(&digest) {
            return false;
        }
        self.pending.insert(digest, tx);
        true
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.pending.contains_key(digest)
    }

    pub fn get(&self, digest: &Digest) -> Option<&Transaction> {
        self.pending.get(digest)
    }

    pub fn remove(&mut self, digest: &Digest) -> Option<Transaction> {
        self.pending.remove(digest)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Digest, &Transaction)> {
        self.pending.iter()
    }

    /// Empties the pool, returning its contents in digest order.
    pub fn take_all(&mut self) -> Vec<(Digest, Transaction)> {
        std::mem::take(&mut self.pending).into_iter().collect()
    }
}

/// Digest a node assigns to an incoming transaction, using the owner's
/// published parameters. `None` when the owner is not a known account.
pub fn digest_of(tx: &Transaction, kv: &impl KvRead) -> Option<Digest> {
    ledger::recompute_tx_hash(tx, kv).ok().map(|(d, _)| d)
}

fn account(kv: &impl KvRead, address: &Address) -> Option<Account> {
    kv.read(BUCKET_ACCOUNTS, address.as_bytes())
        .and_then(|b| Account::decode(b).ok())
}

fn put_account(kv: &mut impl KvWrite, acc: &Account) -> Result<(), Rejection> {
    Ok(kv.write(BUCKET_ACCOUNTS, acc.address.as_bytes(), acc.encode())?)
}

/// The ordered UpdateTx checks: target stored, issuer known, signature,
/// issuer owns the target, and the target rewritten with the carried data and
/// check string still hashes to its digest. The first failing step wins.
pub fn validate_update_tx(u: &UpdateTx, kv: &impl KvRead) -> Result<(), Rejection> {
    let (_, target_bytes) = kv
        .read_tx_any(&u.tx_to_update_hash)
        .ok_or(Rejection::TargetMissing(u.tx_to_update_hash))?;
    let issuer = account(kv, &u.issuer).ok_or(Rejection::IssuerUnknown(u.issuer))?;
    let wrapped = Transaction::Update(u.clone());
    if !wrapped.verify_signature(&issuer.signing_public_key, &issuer.chf_parameters) {
        return Err(Rejection::BadSignature);
    }
    let target = Transaction::decode(target_bytes).map_err(|_| Rejection::TargetMissing(u.tx_to_update_hash))?;
    if target.owner() != Some(u.issuer) {
        return Err(Rejection::NotOwner);
    }
    let mut modified = target.clone();
    modified
        .apply_modification(u.tx_to_update_data.clone(), u.tx_to_update_check_string.clone())
        .map_err(|_| Rejection::NotOwner)?;
    let params = target.embedded_parameters().unwrap_or(&issuer.chf_parameters);
    match modified.tx_hash(params) {
        Ok(d) if d == u.tx_to_update_hash => Ok(()),
        _ => Err(Rejection::HashMismatch),
    }
}

/// Copies the update's data and check string into the stored target and
/// rewrites it under the same key. Blocks are not touched.
pub fn process_update_tx(u: &UpdateTx, kv: &mut impl KvWrite) -> Result<Digest, Rejection> {
    let (bucket, bytes) = kv
        .read_tx_any(&u.tx_to_update_hash)
        .ok_or(Rejection::TargetMissing(u.tx_to_update_hash))?;
    let mut target = Transaction::decode(bytes).map_err(|_| Rejection::TargetMissing(u.tx_to_update_hash))?;
    target
        .apply_modification(u.tx_to_update_data.clone(), u.tx_to_update_check_string.clone())
        .map_err(|_| Rejection::NotOwner)?;
    kv.write(bucket, u.tx_to_update_hash.as_bytes(), target.encode())?;
    Ok(u.tx_to_update_hash)
}

/// Sort key fixing the order in which a block's transactions take effect:
/// account creations, then funds and data transfers together by sender and
/// counter, then aggregations, then updates; ties and the rest by digest.
fn execution_key(digest: &Digest, tx: &Transaction) -> (u8, Address, u32, Digest) {
    match tx {
        Transaction::Account(_) => (0, Digest::ZERO, 0, *digest),
        Transaction::Funds(f) => (1, f.from, f.tx_cnt, *digest),
        Transaction::Data(d) => (1, d.from, d.tx_cnt, *digest),
        Transaction::Agg(_) => (2, Digest::ZERO, 0, *digest),
        Transaction::Update(_) => (3, Digest::ZERO, 0, *digest),
    }
}

pub fn execution_order(mut txs: Vec<(Digest, Transaction)>) -> Vec<(Digest, Transaction)> {
    txs.sort_by_key(|(d, t)| execution_key(d, t));
    txs
}

/// Balance and counter effects collected while a joining node replays
/// history. Intermediate balances of a replay may dip below zero because
/// aggregated transactions surface only at their AggTx; the totals are
/// checked once at the end.
#[derive(Clone, Debug, Default)]
pub struct ReplayLedger {
    deltas: BTreeMap<Address, i128>,
    counters: BTreeMap<Address, u32>,
    seen: HashSet<Digest>,
}

impl ReplayLedger {
    fn add(&mut self, address: Address, delta: i128) {
        *self.deltas.entry(address).or_default() += delta;
    }

    fn bump(&mut self, address: Address, tx_cnt: u32) {
        let c = self.counters.entry(address).or_default();
        *c = (*c).max(tx_cnt);
    }

    fn funds(&mut self, digest: Digest, f: &FundsTx) {
        self.add(f.from, -(i128::from(f.amount) + i128::from(f.fee)));
        self.add(f.to, i128::from(f.amount));
        self.bump(f.from, f.tx_cnt);
        self.seen.insert(digest);
    }

    fn data(&mut self, digest: Digest, d: &DataTx) {
        self.add(d.from, -i128::from(d.fee));
        self.bump(d.from, d.tx_cnt);
        self.seen.insert(digest);
    }

    /// Writes the accumulated effects into the account records and starts a
    /// fresh accumulation. Transactions already seen stay remembered.
    pub fn settle(&mut self, kv: &mut impl KvWrite) -> Result<(), Rejection> {
        let addresses: HashSet<_> = self.deltas.keys().chain(self.counters.keys()).copied().collect();
        let mut addresses: Vec<_> = addresses.into_iter().collect();
        addresses.sort();
        for address in addresses {
            let mut acc = account(kv, &address).ok_or(Rejection::UnknownAccount(address))?;
            let balance = i128::from(acc.balance) + self.deltas.get(&address).copied().unwrap_or(0);
            acc.balance = u64::try_from(balance).map_err(|_| Rejection::InsufficientBalance)?;
            acc.tx_cnt = acc.tx_cnt.max(self.counters.get(&address).copied().unwrap_or(0));
            put_account(kv, &acc)?;
        }
        self.deltas.clear();
        self.counters.clear();
        Ok(())
    }
}

/// Applies transactions one at a time to a staged view of a node's store.
/// Live mode enforces balances and counters; replay mode defers them to a
/// [`ReplayLedger`].
pub struct Executor<'s, 'r> {
    pub staged: Staged<'s>,
    config: NodeConfig,
    replay: Option<&'r mut ReplayLedger>,
}

impl<'s, 'r> Executor<'s, 'r> {
    pub fn live(store: &'s Store, config: NodeConfig) -> Self {
        Self {
            staged: Staged::new(store),
            config,
            replay: None,
        }
    }

    pub fn replay(store: &'s Store, config: NodeConfig, ledger: &'r mut ReplayLedger) -> Self {
        Self {
            staged: Staged::new(store),
            config,
            replay: Some(ledger),
        }
    }

    /// Validates `tx` against the current staged state and, when valid,
    /// applies its effects and stores its body under `digest`. A rejected
    /// transaction leaves the staged state untouched.
    pub fn execute(&mut self, digest: Digest, tx: &Transaction) -> Result<(), Rejection> {
        if self.staged.read(tx.kind().bucket(), digest.as_bytes()).is_some() {
            return Err(Rejection::Duplicate);
        }
        match tx {
            Transaction::Account(a) => self.execute_account(digest, tx, a)?,
            Transaction::Funds(f) => self.execute_funds(digest, tx, f)?,
            Transaction::Data(d) => self.execute_data(digest, tx, d)?,
            Transaction::Agg(a) => self.execute_agg(digest, a)?,
            Transaction::Update(u) => self.execute_update(digest, tx, u)?,
        }
        self.staged.put(tx.kind().bucket(), digest.as_bytes(), tx.encode())?;
        Ok(())
    }

    fn check_owned(&self, digest: Digest, tx: &Transaction, owner: &Account) -> Result<(), Rejection> {
        match tx.tx_hash(&owner.chf_parameters) {
            Ok(d) if d == digest => {}
            _ => return Err(Rejection::DigestMismatch),
        }
        if !tx.verify_signature(&owner.signing_public_key, &owner.chf_parameters) {
            return Err(Rejection::BadSignature);
        }
        Ok(())
    }

    fn execute_account(&mut self, digest: Digest, tx: &Transaction, a: &crate::tx::AccountTx) -> Result<(), Rejection> {
        if !a.issuer_matches_key() {
            return Err(Rejection::BadSignature);
        }
        if a.parameters.has_trapdoor() || a.parameters.validate().is_err() {
            return Err(Rejection::BadParameters);
        }
        match tx.tx_hash(&a.parameters) {
            Ok(d) if d == digest => {}
            _ => return Err(Rejection::DigestMismatch),
        }
        if !tx.verify_signature(&a.public_key, &a.parameters) {
            return Err(Rejection::BadSignature);
        }
        if account(&self.staged, &a.issuer).is_some() {
            return Err(Rejection::AccountExists);
        }
        put_account(
            &mut self.staged,
            &Account {
                address: a.issuer,
                signing_public_key: a.public_key,
                balance: 0,
                tx_cnt: 0,
                chf_parameters: a.parameters.clone(),
            },
        )
    }

    fn execute_funds(&mut self, digest: Digest, tx: &Transaction, f: &FundsTx) -> Result<(), Rejection> {
        let from = account(&self.staged, &f.from).ok_or(Rejection::UnknownAccount(f.from))?;
        account(&self.staged, &f.to).ok_or(Rejection::UnknownAccount(f.to))?;
        self.check_owned(digest, tx, &from)?;
        if let Some(ledger) = self.replay.as_deref_mut() {
            ledger.funds(digest, f);
            return Ok(());
        }
        let cost = f.amount.checked_add(f.fee).ok_or(Rejection::Overflow)?;
        self.debit(from, cost, f.tx_cnt)?;
        let mut to = account(&self.staged, &f.to).ok_or(Rejection::UnknownAccount(f.to))?;
        to.balance = to.balance.checked_add(f.amount).ok_or(Rejection::Overflow)?;
        put_account(&mut self.staged, &to)
    }

    fn execute_data(&mut self, digest: Digest, tx: &Transaction, d: &DataTx) -> Result<(), Rejection> {
        let from = account(&self.staged, &d.from).ok_or(Rejection::UnknownAccount(d.from))?;
        account(&self.staged, &d.to).ok_or(Rejection::UnknownAccount(d.to))?;
        self.check_owned(digest, tx, &from)?;
        if let Some(ledger) = self.replay.as_deref_mut() {
            ledger.data(digest, d);
            return Ok(());
        }
        self.debit(from, d.fee, d.tx_cnt)
    }

    fn debit(&mut self, mut from: Account, cost: u64, tx_cnt: u32) -> Result<(), Rejection> {
        if tx_cnt <= from.tx_cnt {
            return Err(Rejection::StaleCounter);
        }
        if cost > from.balance {
            return Err(Rejection::InsufficientBalance);
        }
        from.balance -= cost;
        from.tx_cnt = tx_cnt;
        put_account(&mut self.staged, &from)
    }

    fn execute_agg(&mut self, digest: Digest, a: &AggTx) -> Result<(), Rejection> {
        if Transaction::Agg(a.clone()).tx_message() != digest {
            return Err(Rejection::DigestMismatch);
        }
        let unique: HashSet<_> = a.aggregated_hashes.iter().collect();
        if unique.len() != a.aggregated_hashes.len() {
            return Err(Rejection::BadAggregation("repeated digest"));
        }
        let bodies = self.aggregated_bodies(a)?;
        let rebuilt = match &bodies {
            AggBodies::Funds(list) => aggregate_funds(list),
            AggBodies::Data(list) => aggregate_data(list),
        }
        .map_err(|_| Rejection::BadAggregation("transactions cannot be aggregated"))?;
        if &rebuilt != a {
            return Err(Rejection::BadAggregation("does not match the aggregated transactions"));
        }
        match self.replay.as_deref_mut() {
            Some(ledger) => {
                match bodies {
                    AggBodies::Funds(list) => {
                        for (f, d) in &list {
                            if !ledger.seen.contains(d) {
                                ledger.funds(*d, f);
                            }
                        }
                    }
                    AggBodies::Data(list) => {
                        for (t, d) in &list {
                            if !ledger.seen.contains(d) {
                                ledger.data(*d, t);
                            }
                        }
                    }
                }
                Ok(())
            }
            None => self.prune_sealed(&a.aggregated_hashes),
        }
    }

    fn aggregated_bodies(&self, a: &AggTx) -> Result<AggBodies, Rejection> {
        let missing = Rejection::BadAggregation("aggregated transaction not stored");
        match a.payload {
            AggPayload::Funds { .. } => a
                .aggregated_hashes
                .iter()
                .map(|d| match self.stored(BUCKET_FUNDS_TX, d) {
                    Some(Transaction::Funds(f)) => Ok((f, *d)),
                    _ => Err(missing.clone()),
                })
                .collect::<Result<_, _>>()
                .map(AggBodies::Funds),
            AggPayload::Data { .. } => a
                .aggregated_hashes
                .iter()
                .map(|d| match self.stored(BUCKET_DATA_TX, d) {
                    Some(Transaction::Data(t)) => Ok((t, *d)),
                    _ => Err(missing.clone()),
                })
                .collect::<Result<_, _>>()
                .map(AggBodies::Data),
        }
    }

    fn stored(&self, bucket: &str, digest: &Digest) -> Option<Transaction> {
        self.staged
            .read(bucket, digest.as_bytes())
            .and_then(|b| Transaction::decode(b).ok())
    }

    /// Removes aggregated digests from the sealed blocks listing them. Every
    /// digest must still be listed somewhere.
    fn prune_sealed(&mut self, hashes: &[Digest]) -> Result<(), Rejection> {
        let removed: HashSet<Digest> = hashes.iter().copied().collect();
        let mut found = HashSet::new();
        let Some(tip) = ledger::chain_height(&self.staged) else {
            return Err(Rejection::BadAggregation("no chain"));
        };
        let mut rewrites = Vec::new();
        for h in 0..=tip {
            let key = ledger::block_key_at(&self.staged, h).ok_or(Rejection::Storage("missing block".into()))?;
            let mut block = load_block(&self.staged, &key).ok_or(Rejection::Storage("missing block".into()))?;
            let listed: Vec<_> = block.digests().into_iter().filter(|d| removed.contains(d)).collect();
            if listed.is_empty() {
                continue;
            }
            found.extend(listed);
            block.prune(&removed);
            rewrites.push((key, block));
        }
        if found.len() != removed.len() {
            return Err(Rejection::BadAggregation("transaction not listed in any sealed block"));
        }
        for (key, block) in rewrites {
            rewrite_block(&mut self.staged, &key, &block)?;
        }
        Ok(())
    }

    fn execute_update(&mut self, digest: Digest, tx: &Transaction, u: &UpdateTx) -> Result<(), Rejection> {
        // The target must have been stored before this block.
        if self.staged.base().read_tx_any(&u.tx_to_update_hash).is_none() {
            return Err(Rejection::TargetMissing(u.tx_to_update_hash));
        }
        validate_update_tx(u, &self.staged)?;
        let issuer = account(&self.staged, &u.issuer).ok_or(Rejection::IssuerUnknown(u.issuer))?;
        match tx.tx_hash(&issuer.chf_parameters) {
            Ok(d) if d == digest => {}
            _ => return Err(Rejection::DigestMismatch),
        }
        if self.config.public_mode && u.fee == 0 {
            return Err(Rejection::FeeRequired);
        }
        match self.replay.as_deref_mut() {
            Some(ledger) => ledger.add(u.issuer, -i128::from(u.fee)),
            None => {
                let mut issuer = issuer;
                if u.fee > issuer.balance {
                    return Err(Rejection::InsufficientBalance);
                }
                issuer.balance -= u.fee;
                put_account(&mut self.staged, &issuer)?;
            }
        }
        process_update_tx(u, &mut self.staged)?;
        Ok(())
    }
}

enum AggBodies {
    Funds(Vec<(FundsTx, Digest)>),
    Data(Vec<(DataTx, Digest)>),
}

/// One validation decision of a mining round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decision {
    pub round: u64,
    pub digest: Digest,
    pub kind: TxKind,
    pub verdict: Result<(), Rejection>,
}

impl Decision {
    /// Last validation step reached: the failing step for a rejected
    /// UpdateTx, 5 for an accepted one, 0 for other kinds.
    pub fn step(&self) -> u8 {
        match (&self.verdict, self.kind) {
            (Err(r), _) => r.step().unwrap_or(0),
            (Ok(()), TxKind::Update) => 5,
            _ => 0,
        }
    }

    /// `round<TAB>digest<TAB>step<TAB>verdict`
    pub fn log_line(&self) -> String {
        let verdict = match &self.verdict {
            Ok(()) => "ok".to_string(),
            Err(r) => format!("reject:{}", r.code()),
        };
        format!("{}\t{}\t{}\t{}", self.round, self.digest, self.step(), verdict)
    }
}

#[derive(Clone, Debug)]
pub struct RoundOutcome {
    pub block: Block,
    /// Storage key of the new block (its hash at sealing).
    pub key: Digest,
    pub decisions: Vec<Decision>,
}

impl RoundOutcome {
    pub fn accepted(&self) -> impl Iterator<Item = &Decision> {
        self.decisions.iter().filter(|d| d.verdict.is_ok())
    }

    pub fn rejected(&self) -> impl Iterator<Item = &Decision> {
        self.decisions.iter().filter(|d| d.verdict.is_err())
    }
}

/// Takes every pending transaction, validates and applies the valid ones in
/// execution order, seals a block listing them on top of the stored tip and
/// commits everything. Invalid transactions are dropped with a logged
/// reason. Always produces a block, possibly empty.
pub fn mining_round(
    pool: &mut OpenTxPool,
    store: &mut Store,
    config: &NodeConfig,
    timestamp: u64,
    round: u64,
) -> Result<RoundOutcome, StoreError> {
    let prev = ledger::chain_height(store)
        .and_then(|h| ledger::load_block_at(store, h))
        .ok_or(StoreError::Corrupt("no genesis block".into()))?;
    let candidates = execution_order(pool.take_all());
    let mut exec = Executor::live(store, *config);
    let mut lists = TxLists::default();
    let mut decisions = Vec::with_capacity(candidates.len());
    for (digest, tx) in &candidates {
        let verdict = exec.execute(*digest, tx);
        if verdict.is_ok() {
            lists.push(tx.kind(), *digest);
        }
        let decision = Decision {
            round,
            digest: *digest,
            kind: tx.kind(),
            verdict,
        };
        info!("{}", decision.log_line());
        decisions.push(decision);
    }
    let block = mine_block(lists, &prev, config.consensus.block_difficulty(), timestamp);
    let key = append_block(&mut exec.staged, &block)?;
    let writes = exec.staged.into_writes();
    store.commit(writes)?;
    store.flush()?;
    Ok(RoundOutcome { block, key, decisions })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImportError {
    #[error("block header invalid: {0:?}")]
    Header(ViolationKind),
    #[error("block body for {0} unavailable")]
    MissingBody(Digest),
    #[error("transaction {digest} listed as {listed} but is {actual}")]
    WrongKind {
        digest: Digest,
        listed: TxKind,
        actual: TxKind,
    },
    #[error("transaction {0} rejected: {1}")]
    Rejected(Digest, Rejection),
    #[error("Merkle root mismatch")]
    MerkleRoot,
    #[error("storage: {0}")]
    Store(String),
}

impl From<StoreError> for ImportError {
    fn from(e: StoreError) -> Self {
        ImportError::Store(e.to_string())
    }
}

/// Validates a block sealed by a peer on top of the local tip, executes its
/// transactions and commits it. `bodies` must hold every listed transaction.
/// In replay mode balance effects go to `ledger`; `key` overrides the
/// storage key for blocks that were pruned after sealing.
pub fn import_block(
    store: &mut Store,
    config: &NodeConfig,
    block: &Block,
    key: Option<Digest>,
    bodies: &HashMap<Digest, Transaction>,
    ledger: Option<&mut ReplayLedger>,
) -> Result<Digest, ImportError> {
    let tip_height = ledger::chain_height(store);
    let prev_key = tip_height.and_then(|h| ledger::block_key_at(store, h));
    let prev = prev_key.and_then(|k| load_block(store, &k));
    ledger::validate_header(block, prev.as_ref(), &config.consensus).map_err(ImportError::Header)?;
    if let (Some(prev), Some(prev_key)) = (&prev, prev_key) {
        if prev.aggregated && block.prev_hash != prev_key {
            return Err(ImportError::Header(ViolationKind::PrevLink));
        }
    }
    let key = match key {
        Some(k) if block.aggregated => k,
        Some(k) if k != block.hash() => return Err(ImportError::Header(ViolationKind::PrevLink)),
        _ => block.hash(),
    };
    if merkle_root_of(&block.digests()) != block.merkle_root {
        return Err(ImportError::MerkleRoot);
    }
    let mut txs = Vec::with_capacity(block.txs.len());
    for (kind, digest) in block.txs.iter() {
        let tx = bodies.get(&digest).ok_or(ImportError::MissingBody(digest))?;
        if tx.kind() != kind {
            return Err(ImportError::WrongKind {
                digest,
                listed: kind,
                actual: tx.kind(),
            });
        }
        txs.push((digest, tx.clone()));
    }
    let mut exec = match ledger {
        Some(l) => Executor::replay(store, *config, l),
        None => Executor::live(store, *config),
    };
    for (digest, tx) in execution_order(txs) {
        exec.execute(digest, &tx).map_err(|r| ImportError::Rejected(digest, r))?;
    }
    ledger::put_block(&mut exec.staged, &key, block)?;
    let writes = exec.staged.into_writes();
    store.commit(writes)?;
    store.flush()?;
    Ok(key)
}

/// Founding state: account transactions listed in the genesis block and the
/// balances they start with.
#[derive(Clone, Debug, Default)]
pub struct Genesis {
    pub timestamp: u64,
    pub accounts: Vec<(Transaction, u64)>,
}

impl Genesis {
    /// Writes the founding accounts, their transactions and the genesis block
    /// into an empty store.
    pub fn install(&self, store: &mut Store) -> Result<Block, Rejection> {
        if ledger::chain_height(store).is_some() {
            return Err(Rejection::Storage("store already initialized".into()));
        }
        let mut exec = Executor::live(store, NodeConfig::default());
        let mut digests = Vec::new();
        for (tx, balance) in &self.accounts {
            let Transaction::Account(a) = tx else {
                return Err(Rejection::BadParameters);
            };
            let digest = tx.tx_hash(&a.parameters).map_err(|_| Rejection::BadParameters)?;
            exec.execute(digest, tx)?;
            let mut acc = account(&exec.staged, &a.issuer).ok_or(Rejection::UnknownAccount(a.issuer))?;
            acc.balance = *balance;
            put_account(&mut exec.staged, &acc)?;
            digests.push(digest);
        }
        let block = Block::genesis(digests, self.timestamp);
        append_block(&mut exec.staged, &block)?;
        let writes = exec.staged.into_writes();
        store.commit(writes)?;
        store.flush()?;
        Ok(block)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::ClientKeys;
    use crate::ledger::{load_chain, validate_chain};
    use crate::tx::{make_update, make_update_unchecked, new_data_tx, new_funds_tx, AccountTx};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Fixture {
        rng: ChaCha20Rng,
        store: Store,
        pool: OpenTxPool,
        config: NodeConfig,
        clients: Vec<ClientKeys>,
        round: u64,
    }

    impl Fixture {
        fn new(n: usize) -> Self {
            let mut rng = ChaCha20Rng::seed_from_u64(42);
            let clients: Vec<_> = (0..n).map(|_| ClientKeys::generate(64, &mut rng).unwrap()).collect();
            let genesis = Genesis {
                timestamp: 0,
                accounts: clients
                    .iter()
                    .map(|c| (AccountTx::create(c, 0, Vec::new(), &mut rng).unwrap(), 1_000))
                    .collect(),
            };
            let mut store = Store::in_memory();
            genesis.install(&mut store).unwrap();
            Self {
                rng,
                store,
                pool: OpenTxPool::new(),
                config: NodeConfig {
                    public_mode: false,
                    consensus: ConsensusConfig::pow(4),
                },
                clients,
                round: 0,
            }
        }

        fn submit(&mut self, tx: Transaction) -> Digest {
            let d = digest_of(&tx, &self.store).unwrap();
            self.pool.insert(d, tx);
            d
        }

        fn data_tx(&mut self, from: usize, data: &[u8]) -> Transaction {
            let cnt = account(&self.store, &self.clients[from].address()).unwrap().tx_cnt + 1;
            let to = self.clients[(from + 1) % self.clients.len()].address();
            new_data_tx(&self.clients[from], to, 1, cnt, data.to_vec(), &mut self.rng).unwrap()
        }

        fn mine(&mut self) -> RoundOutcome {
            self.round += 1;
            mining_round(&mut self.pool, &mut self.store, &self.config, self.round, self.round).unwrap()
        }

        fn stored(&self, d: &Digest) -> Transaction {
            Transaction::decode(self.store.read_tx_any(d).unwrap().1).unwrap()
        }
    }

    #[test]
    fn owner_update_passes_all_steps_and_keeps_digest() {
        let mut f = Fixture::new(2);
        let tx = f.data_tx(0, b"{name: Alise}");
        let d = f.submit(tx.clone());
        f.mine();
        let u = make_update(&tx, b"{name: Alice}".to_vec(), b"typo fix".to_vec(), 1, &f.clients[0], &mut f.rng).unwrap();
        assert_eq!(validate_update_tx(&u, &f.store), Ok(()));
        let before = f.store.dump();
        let ud = f.submit(u.into());
        let out = f.mine();
        assert_eq!(out.block.txs.update, vec![ud]);
        assert_eq!(out.block.nr_update_tx, 1);
        assert_eq!(f.stored(&d).data(), Some(&b"{name: Alice}"[..]));
        let acc = account(&f.store, &f.clients[0].address()).unwrap();
        assert_eq!(f.stored(&d).tx_hash(&acc.chf_parameters).unwrap(), d);
        assert_ne!(before, f.store.dump());
        validate_chain(&load_chain(&f.store), &f.config.consensus, &f.store, &f.store).unwrap();
    }

    #[test]
    fn each_step_has_its_own_rejection() {
        let mut f = Fixture::new(3);
        let tx = f.data_tx(0, b"x");
        f.submit(tx.clone());
        f.mine();
        let good = make_update(&tx, b"y".to_vec(), vec![], 1, &f.clients[0], &mut f.rng).unwrap();

        let mut missing = good.clone();
        missing.tx_to_update_hash = Digest([7; 32]);
        assert_eq!(validate_update_tx(&missing, &f.store).unwrap_err().step(), Some(1));

        let stranger = ClientKeys::generate(64, &mut f.rng).unwrap();
        let unknown = make_update(&tx, b"y".to_vec(), vec![], 1, &f.clients[0], &mut f.rng).unwrap();
        let mut unknown = unknown;
        unknown.issuer = stranger.address();
        assert_eq!(validate_update_tx(&unknown, &f.store).unwrap_err().step(), Some(2));

        let mut bad_sig = good.clone();
        bad_sig.signature[0] ^= 1;
        assert_eq!(validate_update_tx(&bad_sig, &f.store), Err(Rejection::BadSignature));

        let target = digest_of(&tx, &f.store).unwrap();
        let foreign =
            make_update_unchecked(&tx, target, b"y".to_vec(), vec![], 1, &f.clients[1], &mut f.rng).unwrap();
        assert_eq!(validate_update_tx(&foreign, &f.store), Err(Rejection::NotOwner));

        let mut forged = good.clone();
        forged.tx_to_update_check_string.s += 1u32;
        let forged = match Transaction::Update(forged).sign(&f.clients[0]).unwrap() {
            Transaction::Update(u) => u,
            _ => unreachable!(),
        };
        assert_eq!(validate_update_tx(&forged, &f.store), Err(Rejection::HashMismatch));
    }

    #[test]
    fn processing_twice_rewrites_identical_bytes() {
        let mut f = Fixture::new(2);
        let tx = f.data_tx(0, b"secret");
        let d = f.submit(tx.clone());
        f.mine();
        let u = make_update(&tx, Vec::new(), b"erase".to_vec(), 1, &f.clients[0], &mut f.rng).unwrap();
        process_update_tx(&u, &mut f.store).unwrap();
        let once = f.store.dump();
        assert_eq!(process_update_tx(&u, &mut f.store).unwrap(), d);
        assert_eq!(f.store.dump(), once);
        assert_eq!(f.stored(&d).data(), Some(&b""[..]));
    }

    #[test]
    fn update_for_target_in_same_round_waits_for_next_round() {
        let mut f = Fixture::new(2);
        let tx = f.data_tx(0, b"a");
        let d = f.submit(tx.clone());
        let u = make_update(&tx, b"b".to_vec(), vec![], 1, &f.clients[0], &mut f.rng).unwrap();
        let ud = f.submit(u.clone().into());
        let first = f.mine();
        assert_eq!(first.block.txs.data, vec![d]);
        let rejected: Vec<_> = first.rejected().collect();
        assert_eq!(rejected.len(), 1);
        assert_eq!(rejected[0].digest, ud);
        assert_eq!(rejected[0].step(), 1);
        assert!(rejected[0].log_line().ends_with("\t1\treject:target_missing"));
        f.submit(u.into());
        let second = f.mine();
        assert_eq!(second.block.txs.update, vec![ud]);
        assert_eq!(f.stored(&d).data(), Some(&b"b"[..]));
    }

    #[test]
    fn funds_and_update_in_one_block() {
        let mut f = Fixture::new(2);
        let tx = f.data_tx(0, b"a");
        f.submit(tx.clone());
        f.mine();
        let u = make_update(&tx, b"b".to_vec(), vec![], 1, &f.clients[0], &mut f.rng).unwrap();
        let funds = new_funds_tx(&f.clients[1], f.clients[0].address(), 5, 1, 1, vec![], &mut f.rng).unwrap();
        let fd = f.submit(funds);
        let ud = f.submit(u.into());
        let out = f.mine();
        assert_eq!(out.block.txs.funds, vec![fd]);
        assert_eq!(out.block.txs.update, vec![ud]);
        assert_eq!(out.block.nr_update_tx, 1);
        assert_eq!(account(&f.store, &f.clients[0].address()).unwrap().balance, 1_000 - 1 - 1 + 5);
        assert_eq!(account(&f.store, &f.clients[1].address()).unwrap().balance, 1_000 - 6);
    }

    #[test]
    fn empty_round_mines_empty_block() {
        let mut f = Fixture::new(1);
        let out = f.mine();
        assert!(out.block.txs.is_empty());
        assert_eq!(out.block.height, 1);
        assert!(out.block.meets_difficulty());
        validate_chain(&load_chain(&f.store), &f.config.consensus, &f.store, &f.store).unwrap();
    }

    #[test]
    fn funds_rules_enforced() {
        let mut f = Fixture::new(2);
        let to = f.clients[1].address();
        let too_much = new_funds_tx(&f.clients[0], to, 1_000, 1, 1, vec![], &mut f.rng).unwrap();
        let a = f.submit(too_much);
        let ok = new_funds_tx(&f.clients[0], to, 10, 1, 2, vec![], &mut f.rng).unwrap();
        let b = f.submit(ok);
        let out = f.mine();
        let verdicts: HashMap<_, _> = out.decisions.iter().map(|d| (d.digest, d.verdict.clone())).collect();
        assert_eq!(verdicts[&a], Err(Rejection::InsufficientBalance));
        assert_eq!(verdicts[&b], Ok(()));
        let replayed = new_funds_tx(&f.clients[0], to, 10, 1, 2, vec![], &mut f.rng).unwrap();
        f.submit(replayed);
        let out = f.mine();
        assert_eq!(out.decisions[0].verdict, Err(Rejection::StaleCounter));
    }

    #[test]
    fn zero_fee_update_rejected_in_public_mode() {
        let mut f = Fixture::new(1);
        f.clients.push(ClientKeys::generate(64, &mut f.rng).unwrap());
        let self_data = new_data_tx(&f.clients[0], f.clients[0].address(), 0, 1, b"a".to_vec(), &mut f.rng).unwrap();
        f.submit(self_data.clone());
        f.mine();
        f.config.public_mode = true;
        let u = make_update(&self_data, b"b".to_vec(), vec![], 0, &f.clients[0], &mut f.rng).unwrap();
        f.submit(u.into());
        let out = f.mine();
        assert_eq!(out.decisions[0].verdict, Err(Rejection::FeeRequired));
    }

    #[test]
    fn aggregation_prunes_sealed_blocks_and_chain_still_validates() {
        let mut f = Fixture::new(3);
        let (b, c) = (f.clients[1].address(), f.clients[2].address());
        let t1 = new_funds_tx(&f.clients[0], b, 5, 0, 1, vec![], &mut f.rng).unwrap();
        let t2 = new_funds_tx(&f.clients[0], c, 7, 0, 2, vec![], &mut f.rng).unwrap();
        let d1 = f.submit(t1.clone());
        let d2 = f.submit(t2.clone());
        f.mine();
        f.mine();
        let agg = aggregate_funds(&[
            (match t1 { Transaction::Funds(x) => x, _ => unreachable!() }, d1),
            (match t2 { Transaction::Funds(x) => x, _ => unreachable!() }, d2),
        ])
        .unwrap();
        assert_eq!(agg.payload, AggPayload::Funds { total_amount: 12 });
        let agg_tx = Transaction::Agg(agg);
        let ad = f.submit(agg_tx.clone());
        let out = f.mine();
        assert_eq!(out.block.txs.agg, vec![ad]);
        let chain = load_chain(&f.store);
        assert!(chain[1].aggregated);
        assert!(chain[1].txs.funds.is_empty());
        validate_chain(&chain, &f.config.consensus, &f.store, &f.store).unwrap();
        f.submit(agg_tx);
        let again = f.mine();
        assert_eq!(again.decisions[0].verdict, Err(Rejection::Duplicate));
    }
}
