//! Structured records for inspecting blocks and transactions. Byte strings
//! are hex; `data` and `reason` also appear as text when they are valid
//! UTF-8. Transaction records carry every field, so a record converts back
//! into the exact transaction it was made from.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chf::{ChameleonParameters, CheckString};
use crate::codec::biguint_magnitude;
use crate::digest::Digest;
use crate::ledger::Block;
use crate::tx::{AccountTx, AggPayload, AggTx, DataTx, FundsTx, Transaction, UpdateTx};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("field {0}: invalid hex")]
    Hex(&'static str),
    #[error("field {0}: wrong length")]
    Length(&'static str),
    #[error("aggregation record needs exactly one of total_amount and shared_data")]
    AggPayload,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParametersRecord {
    pub g: String,
    pub p: String,
    pub q: String,
    pub hk: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckStringRecord {
    pub r: String,
    pub s: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountTxRecord {
    pub digest: String,
    pub issuer: String,
    pub public_key: String,
    pub fee: u64,
    pub parameters: ParametersRecord,
    pub check_string: CheckStringRecord,
    pub data: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub data_text: Option<String>,
    pub signature: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FundsTxRecord {
    pub digest: String,
    pub amount: u64,
    pub fee: u64,
    pub tx_cnt: u32,
    pub from: String,
    pub to: String,
    pub data: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub data_text: Option<String>,
    pub check_string: CheckStringRecord,
    pub signature: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataTxRecord {
    pub digest: String,
    pub fee: u64,
    pub tx_cnt: u32,
    pub from: String,
    pub to: String,
    pub data: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub data_text: Option<String>,
    pub check_string: CheckStringRecord,
    pub signature: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateTxRecord {
    pub digest: String,
    pub target_hash: String,
    pub target_check_string: CheckStringRecord,
    pub new_data: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub new_data_text: Option<String>,
    pub issuer: String,
    pub fee: u64,
    pub check_string: CheckStringRecord,
    pub data: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub data_text: Option<String>,
    pub reason: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason_text: Option<String>,
    pub signature: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggTxRecord {
    pub digest: String,
    pub from_list: Vec<String>,
    pub to_list: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub total_amount: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shared_data: Option<String>,
    pub aggregated_hashes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TxRecord {
    Account(AccountTxRecord),
    Funds(FundsTxRecord),
    Data(DataTxRecord),
    Agg(AggTxRecord),
    Update(UpdateTxRecord),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    /// Storage key: the block hash when it was sealed.
    pub key: String,
    pub hash: String,
    pub height: u64,
    pub prev_hash: String,
    pub fallback_prev: String,
    pub merkle_root: String,
    pub nonce: u64,
    pub difficulty: u8,
    pub timestamp: u64,
    pub aggregated: bool,
    pub nr_update_tx: u16,
    pub account_tx_list: Vec<String>,
    pub funds_tx_list: Vec<String>,
    pub data_tx_list: Vec<String>,
    pub agg_tx_list: Vec<String>,
    pub update_tx_list: Vec<String>,
}

fn text(bytes: &[u8]) -> Option<String> {
    if bytes.is_empty() {
        return None;
    }
    std::str::from_utf8(bytes).ok().map(str::to_owned)
}

fn big(v: &BigUint) -> String {
    hex::encode(biguint_magnitude(v))
}

fn cs(c: &CheckString) -> CheckStringRecord {
    CheckStringRecord { r: big(&c.r), s: big(&c.s) }
}

fn hexes(ds: &[Digest]) -> Vec<String> {
    ds.iter().map(Digest::to_hex).collect()
}

fn unhex(field: &'static str, s: &str) -> Result<Vec<u8>, RecordError> {
    hex::decode(s).map_err(|_| RecordError::Hex(field))
}

fn undigest(field: &'static str, s: &str) -> Result<Digest, RecordError> {
    Digest::from_slice(&unhex(field, s)?).ok_or(RecordError::Length(field))
}

fn unbig(field: &'static str, s: &str) -> Result<BigUint, RecordError> {
    Ok(BigUint::from_bytes_be(&unhex(field, s)?))
}

fn uncs(c: &CheckStringRecord) -> Result<CheckString, RecordError> {
    Ok(CheckString {
        r: unbig("check_string.r", &c.r)?,
        s: unbig("check_string.s", &c.s)?,
    })
}

impl TxRecord {
    pub fn from_tx(tx: &Transaction, digest: Digest) -> Self {
        let digest = digest.to_hex();
        match tx {
            Transaction::Account(t) => TxRecord::Account(AccountTxRecord {
                digest,
                issuer: t.issuer.to_hex(),
                public_key: hex::encode(t.public_key),
                fee: t.fee,
                parameters: ParametersRecord {
                    g: big(&t.parameters.g),
                    p: big(&t.parameters.p),
                    q: big(&t.parameters.q),
                    hk: big(&t.parameters.hk),
                },
                check_string: cs(&t.check_string),
                data: hex::encode(&t.data),
                data_text: text(&t.data),
                signature: hex::encode(&t.signature),
            }),
            Transaction::Funds(t) => TxRecord::Funds(FundsTxRecord {
                digest,
                amount: t.amount,
                fee: t.fee,
                tx_cnt: t.tx_cnt,
                from: t.from.to_hex(),
                to: t.to.to_hex(),
                data: hex::encode(&t.data),
                data_text: text(&t.data),
                check_string: cs(&t.check_string),
                signature: hex::encode(&t.signature),
            }),
            Transaction::Data(t) => TxRecord::Data(DataTxRecord {
                digest,
                fee: t.fee,
                tx_cnt: t.tx_cnt,
                from: t.from.to_hex(),
                to: t.to.to_hex(),
                data: hex::encode(&t.data),
                data_text: text(&t.data),
                check_string: cs(&t.check_string),
                signature: hex::encode(&t.signature),
            }),
            Transaction::Agg(t) => {
                let (total_amount, shared_data) = match &t.payload {
                    AggPayload::Funds { total_amount } => (Some(*total_amount), None),
                    AggPayload::Data { shared_data } => (None, Some(hex::encode(shared_data))),
                };
                TxRecord::Agg(AggTxRecord {
                    digest,
                    from_list: hexes(&t.from_list),
                    to_list: hexes(&t.to_list),
                    total_amount,
                    shared_data,
                    aggregated_hashes: hexes(&t.aggregated_hashes),
                })
            }
            Transaction::Update(t) => TxRecord::Update(UpdateTxRecord {
                digest,
                target_hash: t.tx_to_update_hash.to_hex(),
                target_check_string: cs(&t.tx_to_update_check_string),
                new_data: hex::encode(&t.tx_to_update_data),
                new_data_text: text(&t.tx_to_update_data),
                issuer: t.issuer.to_hex(),
                fee: t.fee,
                check_string: cs(&t.check_string),
                data: hex::encode(&t.data),
                data_text: text(&t.data),
                reason: hex::encode(&t.reason),
                reason_text: text(&t.reason),
                signature: hex::encode(&t.signature),
            }),
        }
    }

    pub fn digest(&self) -> &str {
        match self {
            TxRecord::Account(r) => &r.digest,
            TxRecord::Funds(r) => &r.digest,
            TxRecord::Data(r) => &r.digest,
            TxRecord::Agg(r) => &r.digest,
            TxRecord::Update(r) => &r.digest,
        }
    }

    /// Rebuilds the transaction from the hex fields (text fields are
    /// ignored).
    pub fn to_tx(&self) -> Result<Transaction, RecordError> {
        Ok(match self {
            TxRecord::Account(r) => Transaction::Account(AccountTx {
                issuer: undigest("issuer", &r.issuer)?,
                public_key: unhex("public_key", &r.public_key)?
                    .try_into()
                    .map_err(|_| RecordError::Length("public_key"))?,
                fee: r.fee,
                parameters: ChameleonParameters {
                    g: unbig("g", &r.parameters.g)?,
                    p: unbig("p", &r.parameters.p)?,
                    q: unbig("q", &r.parameters.q)?,
                    hk: unbig("hk", &r.parameters.hk)?,
                    tk: None,
                },
                check_string: uncs(&r.check_string)?,
                data: unhex("data", &r.data)?,
                signature: unhex("signature", &r.signature)?,
            }),
            TxRecord::Funds(r) => Transaction::Funds(FundsTx {
                amount: r.amount,
                fee: r.fee,
                tx_cnt: r.tx_cnt,
                from: undigest("from", &r.from)?,
                to: undigest("to", &r.to)?,
                data: unhex("data", &r.data)?,
                check_string: uncs(&r.check_string)?,
                signature: unhex("signature", &r.signature)?,
            }),
            TxRecord::Data(r) => Transaction::Data(DataTx {
                fee: r.fee,
                tx_cnt: r.tx_cnt,
                from: undigest("from", &r.from)?,
                to: undigest("to", &r.to)?,
                data: unhex("data", &r.data)?,
                check_string: uncs(&r.check_string)?,
                signature: unhex("signature", &r.signature)?,
            }),
            TxRecord::Agg(r) => {
                let payload = match (&r.total_amount, &r.shared_data) {
                    (Some(total_amount), None) => AggPayload::Funds {
                        total_amount: *total_amount,
                    },
                    (None, Some(d)) => AggPayload::Data {
                        shared_data: unhex("shared_data", d)?,
                    },
                    _ => return Err(RecordError::AggPayload),
                };
                let digests = |field, list: &[String]| -> Result<Vec<Digest>, RecordError> {
                    list.iter().map(|s| undigest(field, s)).collect()
                };
                Transaction::Agg(AggTx {
                    from_list: digests("from_list", &r.from_list)?,
                    to_list: digests("to_list", &r.to_list)?,
                    payload,
                    aggregated_hashes: digests("aggregated_hashes", &r.aggregated_hashes)?,
                })
            }
            TxRecord::Update(r) => Transaction::Update(UpdateTx {
                tx_to_update_hash: undigest("target_hash", &r.target_hash)?,
                tx_to_update_check_string: uncs(&r.target_check_string)?,
                tx_to_update_data: unhex("new_data", &r.new_data)?,
                issuer: undigest("issuer", &r.issuer)?,
                fee: r.fee,
                check_string: uncs(&r.check_string)?,
                data: unhex("data", &r.data)?,
                reason: unhex("reason", &r.reason)?,
                signature: unhex("signature", &r.signature)?,
            }),
        })
    }
}

impl BlockRecord {
    pub fn from_block(block: &Block, key: Digest) -> Self {
        Self {
            key: key.to_hex(),
            hash: block.hash().to_hex(),
            height: block.height,
            prev_hash: block.prev_hash.to_hex(),
            fallback_prev: block.fallback_prev.to_hex(),
            merkle_root: block.merkle_root.to_hex(),
            nonce: block.nonce,
            difficulty: block.difficulty,
            timestamp: block.timestamp,
            aggregated: block.aggregated,
            nr_update_tx: block.nr_update_tx,
            account_tx_list: hexes(&block.txs.account),
            funds_tx_list: hexes(&block.txs.funds),
            data_tx_list: hexes(&block.txs.data),
            agg_tx_list: hexes(&block.txs.agg),
            update_tx_list: hexes(&block.txs.update),
        }
    }
}

pub fn to_json<T: Serialize>(record: &T) -> String {
    serde_json::to_string_pretty(record).expect("records always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::ClientKeys;
    use crate::tx::{make_update, new_funds_tx};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn sample() -> Vec<Transaction> {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let a = ClientKeys::generate(32, &mut rng).unwrap();
        let b = ClientKeys::generate(32, &mut rng).unwrap();
        let acc = AccountTx::create(&a, 3, b"hello".to_vec(), &mut rng).unwrap();
        let funds = new_funds_tx(&a, b.address(), 5, 1, 1, vec![0xff, 0x00], &mut rng).unwrap();
        let update = make_update(&funds, b"x".to_vec(), b"typo fix".to_vec(), 2, &a, &mut rng).unwrap();
        let agg = Transaction::Agg(AggTx {
            from_list: vec![a.address()],
            to_list: vec![b.address()],
            payload: AggPayload::Data {
                shared_data: b"d".to_vec(),
            },
            aggregated_hashes: vec![Digest([1; 32])],
        });
        vec![acc, funds, update.into(), agg]
    }

    #[test]
    fn records_round_trip_to_message_bytes() {
        for tx in sample() {
            let record = TxRecord::from_tx(&tx, Digest([2; 32]));
            let parsed: TxRecord = serde_json::from_str(&to_json(&record)).unwrap();
            let back = parsed.to_tx().unwrap();
            assert_eq!(back.message_bytes(), tx.message_bytes());
            assert_eq!(back, tx);
        }
    }

    #[test]
    fn update_record_shows_reason_and_fee() {
        let tx = sample().remove(2);
        let json = to_json(&TxRecord::from_tx(&tx, Digest([2; 32])));
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["type"], "update");
        assert_eq!(v["reason_text"], "typo fix");
        assert_eq!(v["new_data_text"], "x");
        assert_eq!(v["fee"], 2);
        let keys: Vec<&str> = json
            .lines()
            .filter_map(|l| l.trim().strip_prefix('"')?.split('"').next())
            .take(4)
            .collect();
        assert_eq!(keys, ["type", "digest", "target_hash", "target_check_string"]);
    }

    #[test]
    fn binary_data_has_no_text_field() {
        let tx = sample().remove(1);
        let v: serde_json::Value = serde_json::from_str(&to_json(&TxRecord::from_tx(&tx, Digest::ZERO))).unwrap();
        assert_eq!(v["data"], "ff00");
        assert!(v.get("data_text").is_none());
    }

    #[test]
    fn block_record_counts_match() {
        let mut b = Block::genesis(vec![Digest([1; 32])], 0);
        b.txs.update = vec![Digest([3; 32]), Digest([4; 32])];
        b.nr_update_tx = 2;
        let r = BlockRecord::from_block(&b, b.hash());
        assert_eq!(usize::from(r.nr_update_tx), r.update_tx_list.len());
        assert_eq!(r.key, r.hash);
    }
}
