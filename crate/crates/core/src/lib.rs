//! Redactable blockchain node library.
//!
//! Transactions are hashed with per-account chameleon hashes, so the owner of
//! a transaction can rewrite its `data` field through an [`tx::UpdateTx`]
//! without changing the transaction digest, the Merkle root of the block that
//! holds it, or any block link after it.

pub mod chf;
pub mod codec;
pub mod digest;
pub mod explorer;
pub mod keys;
pub mod ledger;
pub mod miner;
pub mod network;
pub mod prime;
pub mod storage;
pub mod tx;

pub use chf::{chameleon_hash, find_collision, verify, ChameleonParameters, CheckString, ChfError};
pub use digest::{inner_hash, Digest};
pub use keys::{Address, ClientKeys};
pub use tx::{make_update, Account, Transaction, TxError, TxKind, UpdateTx};
