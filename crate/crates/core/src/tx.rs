//! Transaction variants, their canonical encoding, chameleon TX hashing and
//! signatures, and the client-side procedure that turns a data modification
//! into an [`UpdateTx`].
//!
//! Canonical form: the header byte, then every field in declaration order as
//! a 4-byte big-endian length followed by the field bytes (integers as
//! fixed-width big-endian). The check string and signature are left out of
//! the hashed message; the wire form appends them with the same rule.

use ed25519_dalek::{Signature, Signer, Verifier, VerifyingKey};
use rand::RngCore;
use thiserror::Error;

use crate::chf::{self, ChameleonParameters, CheckString, ChfError};
use crate::codec::{DecodeError, Reader, Writer};
use crate::digest::{inner_hash, Digest, DIGEST_LEN};
use crate::keys::{address_of, Address, ClientKeys};

pub const HEADER_ACCOUNT: u8 = 0x01;
pub const HEADER_FUNDS: u8 = 0x02;
pub const HEADER_DATA: u8 = 0x03;
pub const HEADER_AGG: u8 = 0x04;
pub const HEADER_UPDATE: u8 = 0x05;

#[derive(Debug, Error)]
pub enum TxError {
    #[error(transparent)]
    Chf(#[from] ChfError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("transaction of kind {0} carries no data field")]
    NotDataBearing(TxKind),
    #[error("transaction {target} is owned by {owner}, not by {client}")]
    NotOwner {
        target: Digest,
        owner: Address,
        client: Address,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TxKind {
    Account,
    Funds,
    Data,
    Agg,
    Update,
}

impl TxKind {
    pub const ALL: [TxKind; 5] = [TxKind::Account, TxKind::Funds, TxKind::Data, TxKind::Agg, TxKind::Update];

    pub fn header(self) -> u8 {
        match self {
            TxKind::Account => HEADER_ACCOUNT,
            TxKind::Funds => HEADER_FUNDS,
            TxKind::Data => HEADER_DATA,
            TxKind::Agg => HEADER_AGG,
            TxKind::Update => HEADER_UPDATE,
        }
    }

    pub fn from_header(h: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.header() == h)
    }

    /// Storage bucket holding bodies of this kind.
    pub fn bucket(self) -> &'static str {
        match self {
            TxKind::Account => "accounttx",
            TxKind::Funds => "fundstx",
            TxKind::Data => "datatx",
            TxKind::Agg => "aggtx",
            TxKind::Update => "updatetx",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TxKind::Account => "account",
            TxKind::Funds => "funds",
            TxKind::Data => "data",
            TxKind::Agg => "agg",
            TxKind::Update => "update",
        }
    }
}

impl std::fmt::Display for TxKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Creates an account and publishes its sanitized chameleon parameters.
/// Self-issued: `issuer` must equal the hash of `public_key`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccountTx {
    pub issuer: Address,
    pub public_key: [u8; 32],
    pub fee: u64,
    pub parameters: ChameleonParameters,
    pub check_string: CheckString,
    pub data: Vec<u8>,
    pub signature: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FundsTx {
    pub amount: u64,
    pub fee: u64,
    pub tx_cnt: u32,
    pub from: Address,
    pub to: Address,
    pub data: Vec<u8>,
    pub check_string: CheckString,
    pub signature: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataTx {
    pub fee: u64,
    pub tx_cnt: u32,
    pub from: Address,
    pub to: Address,
    pub data: Vec<u8>,
    pub check_string: CheckString,
    pub signature: Vec<u8>,
}

/// Carrier for a modification of another transaction's `data` field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateTx {
    pub tx_to_update_hash: Digest,
    pub tx_to_update_check_string: CheckString,
    pub tx_to_update_data: Vec<u8>,
    pub issuer: Address,
    pub fee: u64,
    pub check_string: CheckString,
    pub data: Vec<u8>,
    pub reason: Vec<u8>,
    pub signature: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AggPayload {
    Funds { total_amount: u64 },
    Data { shared_data: Vec<u8> },
}

/// Aggregate of FundsTx (common sender or receiver) or DataTx (common sender
/// and identical data). Hashed with the plain digest, not a chameleon hash.
/// Party lists are deduplicated in first-seen order; one side has exactly one
/// entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggTx {
    pub from_list: Vec<Address>,
    pub to_list: Vec<Address>,
    pub payload: AggPayload,
    pub aggregated_hashes: Vec<Digest>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Transaction {
    Account(AccountTx),
    Funds(FundsTx),
    Data(DataTx),
    Agg(AggTx),
    Update(UpdateTx),
}

impl From<AccountTx> for Transaction {
    fn from(t: AccountTx) -> Self {
        Transaction::Account(t)
    }
}
impl From<FundsTx> for Transaction {
    fn from(t: FundsTx) -> Self {
        Transaction::Funds(t)
    }
}
impl From<DataTx> for Transaction {
    fn from(t: DataTx) -> Self {
        Transaction::Data(t)
    }
}
impl From<AggTx> for Transaction {
    fn from(t: AggTx) -> Self {
        Transaction::Agg(t)
    }
}
impl From<UpdateTx> for Transaction {
    fn from(t: UpdateTx) -> Self {
        Transaction::Update(t)
    }
}

fn write_addresses(w: &mut Writer, list: &[Digest]) {
    let mut flat = Vec::with_capacity(list.len() * DIGEST_LEN);
    for d in list {
        flat.extend_from_slice(d.as_bytes());
    }
    w.bytes(&flat);
}

fn read_addresses(r: &mut Reader<'_>, what: &'static str) -> Result<Vec<Digest>, DecodeError> {
    let flat = r.bytes(what)?;
    if flat.len() % DIGEST_LEN != 0 {
        return Err(DecodeError::invalid(what, "length not a multiple of 32"));
    }
    Ok(flat.chunks(DIGEST_LEN).map(|c| Digest::from_slice(c).unwrap()).collect())
}

fn read_digest(r: &mut Reader<'_>, what: &'static str) -> Result<Digest, DecodeError> {
    Ok(Digest::from_slice(r.fixed_field(DIGEST_LEN, what)?).unwrap())
}

fn read_u64(r: &mut Reader<'_>, what: &'static str) -> Result<u64, DecodeError> {
    Ok(u64::from_be_bytes(r.fixed_field(8, what)?.try_into().unwrap()))
}

fn read_u32(r: &mut Reader<'_>, what: &'static str) -> Result<u32, DecodeError> {
    Ok(u32::from_be_bytes(r.fixed_field(4, what)?.try_into().unwrap()))
}

impl Transaction {
    pub fn kind(&self) -> TxKind {
        match self {
            Transaction::Account(_) => TxKind::Account,
            Transaction::Funds(_) => TxKind::Funds,
            Transaction::Data(_) => TxKind::Data,
            Transaction::Agg(_) => TxKind::Agg,
            Transaction::Update(_) => TxKind::Update,
        }
    }

    pub fn header(&self) -> u8 {
        self.kind().header()
    }

    pub fn is_data_bearing(&self) -> bool {
        !matches!(self, Transaction::Agg(_))
    }

    /// The account whose chameleon parameters hash this transaction and who
    /// alone may modify its data.
    pub fn owner(&self) -> Option<Address> {
        match self {
            Transaction::Account(t) => Some(t.issuer),
            Transaction::Funds(t) => Some(t.from),
            Transaction::Data(t) => Some(t.from),
            Transaction::Update(t) => Some(t.issuer),
            Transaction::Agg(_) => None,
        }
    }

    pub fn fee(&self) -> u64 {
        match self {
            Transaction::Account(t) => t.fee,
            Transaction::Funds(t) => t.fee,
            Transaction::Data(t) => t.fee,
            Transaction::Update(t) => t.fee,
            Transaction::Agg(_) => 0,
        }
    }

    pub fn data(&self) -> Option<&[u8]> {
        match self {
            Transaction::Account(t) => Some(&t.data),
            Transaction::Funds(t) => Some(&t.data),
            Transaction::Data(t) => Some(&t.data),
            Transaction::Update(t) => Some(&t.data),
            Transaction::Agg(_) => None,
        }
    }

    fn data_mut(&mut self) -> Option<&mut Vec<u8>> {
        match self {
            Transaction::Account(t) => Some(&mut t.data),
            Transaction::Funds(t) => Some(&mut t.data),
            Transaction::Data(t) => Some(&mut t.data),
            Transaction::Update(t) => Some(&mut t.data),
            Transaction::Agg(_) => None,
        }
    }

    pub fn check_string(&self) -> Option<&CheckString> {
        match self {
            Transaction::Account(t) => Some(&t.check_string),
            Transaction::Funds(t) => Some(&t.check_string),
            Transaction::Data(t) => Some(&t.check_string),
            Transaction::Update(t) => Some(&t.check_string),
            Transaction::Agg(_) => None,
        }
    }

    fn check_string_mut(&mut self) -> Option<&mut CheckString> {
        match self {
            Transaction::Account(t) => Some(&mut t.check_string),
            Transaction::Funds(t) => Some(&mut t.check_string),
            Transaction::Data(t) => Some(&mut t.check_string),
            Transaction::Update(t) => Some(&mut t.check_string),
            Transaction::Agg(_) => None,
        }
    }

    pub fn signature(&self) -> Option<&[u8]> {
        match self {
            Transaction::Account(t) => Some(&t.signature),
            Transaction::Funds(t) => Some(&t.signature),
            Transaction::Data(t) => Some(&t.signature),
            Transaction::Update(t) => Some(&t.signature),
            Transaction::Agg(_) => None,
        }
    }

    fn signature_mut(&mut self) -> Option<&mut Vec<u8>> {
        match self {
            Transaction::Account(t) => Some(&mut t.signature),
            Transaction::Funds(t) => Some(&mut t.signature),
            Transaction::Data(t) => Some(&mut t.signature),
            Transaction::Update(t) => Some(&mut t.signature),
            Transaction::Agg(_) => None,
        }
    }

    /// The only sanctioned mutation of a sealed transaction: new data plus
    /// the colliding check string that keeps its digest stable.
    pub fn apply_modification(&mut self, data: Vec<u8>, check_string: CheckString) -> Result<(), TxError> {
        let kind = self.kind();
        *self.data_mut().ok_or(TxError::NotDataBearing(kind))? = data;
        *self.check_string_mut().ok_or(TxError::NotDataBearing(kind))? = check_string;
        Ok(())
    }

    /// Copy with `data` replaced and everything else untouched.
    pub fn with_data(&self, data: Vec<u8>) -> Result<Self, TxError> {
        let mut t = self.clone();
        *t.data_mut().ok_or(TxError::NotDataBearing(self.kind()))? = data;
        Ok(t)
    }

    /// Canonical serialization of every field except check string and
    /// signature.
    pub fn message_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.header());
        match self {
            Transaction::Account(t) => {
                w.bytes(t.issuer.as_bytes())
                    .bytes(&t.public_key)
                    .bytes(&t.fee.to_be_bytes())
                    .bytes(&t.parameters.encode())
                    .bytes(&t.data);
            }
            Transaction::Funds(t) => {
                w.bytes(&t.amount.to_be_bytes())
                    .bytes(&t.fee.to_be_bytes())
                    .bytes(&t.tx_cnt.to_be_bytes())
                    .bytes(t.from.as_bytes())
                    .bytes(t.to.as_bytes())
                    .bytes(&t.data);
            }
            Transaction::Data(t) => {
                w.bytes(&t.fee.to_be_bytes())
                    .bytes(&t.tx_cnt.to_be_bytes())
                    .bytes(t.from.as_bytes())
                    .bytes(t.to.as_bytes())
                    .bytes(&t.data);
            }
            Transaction::Update(t) => {
                w.bytes(t.tx_to_update_hash.as_bytes())
                    .bytes(&t.tx_to_update_check_string.encode())
                    .bytes(&t.tx_to_update_data)
                    .bytes(t.issuer.as_bytes())
                    .bytes(&t.fee.to_be_bytes())
                    .bytes(&t.data)
                    .bytes(&t.reason);
            }
            Transaction::Agg(t) => {
                write_addresses(&mut w, &t.from_list);
                write_addresses(&mut w, &t.to_list);
                let mut payload = Writer::new();
                match &t.payload {
                    AggPayload::Funds { total_amount } => {
                        payload.u8(0).u64(*total_amount);
                    }
                    AggPayload::Data { shared_data } => {
                        payload.u8(1).raw(shared_data);
                    }
                }
                w.bytes(payload.as_slice());
                write_addresses(&mut w, &t.aggregated_hashes);
            }
        }
        w.into_bytes()
    }

    /// 32-byte digest of the canonical message; this is the input to the
    /// chameleon hash.
    pub fn tx_message(&self) -> Digest {
        inner_hash(&self.message_bytes())
    }

    /// Transaction digest. Data-bearing variants use the owner's chameleon
    /// parameters; AggTx uses the plain digest of its message.
    pub fn tx_hash(&self, issuer_params: &ChameleonParameters) -> Result<Digest, TxError> {
        match self.check_string() {
            None => Ok(self.tx_message()),
            Some(cs) => Ok(chf::chameleon_hash(issuer_params, cs, self.tx_message().as_bytes())?),
        }
    }

    /// Parameters embedded in the transaction itself (only AccountTx).
    pub fn embedded_parameters(&self) -> Option<&ChameleonParameters> {
        match self {
            Transaction::Account(t) => Some(&t.parameters),
            _ => None,
        }
    }

    /// Sets the signature to an ed25519 signature over `tx_hash`.
    pub fn sign(mut self, keys: &ClientKeys) -> Result<Self, TxError> {
        let params = self.embedded_parameters().cloned().unwrap_or_else(|| keys.chf.clone());
        let digest = self.tx_hash(&params)?;
        let sig = keys.signing.sign(digest.as_bytes()).to_bytes().to_vec();
        if let Some(slot) = self.signature_mut() {
            *slot = sig;
        }
        Ok(self)
    }

    pub fn verify_signature(&self, public_key: &[u8; 32], issuer_params: &ChameleonParameters) -> bool {
        let Some(sig) = self.signature() else {
            return false;
        };
        let Ok(vk) = VerifyingKey::from_bytes(public_key) else {
            return false;
        };
        let Ok(sig) = Signature::from_slice(sig) else {
            return false;
        };
        let Ok(digest) = self.tx_hash(issuer_params) else {
            return false;
        };
        vk.verify(digest.as_bytes(), &sig).is_ok()
    }

    /// Wire form: canonical message, then check string and signature for the
    /// data-bearing variants.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(&self.message_bytes());
        if let (Some(cs), Some(sig)) = (self.check_string(), self.signature()) {
            w.bytes(&cs.encode()).bytes(sig);
        }
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let header = r.u8("header")?;
        let kind = TxKind::from_header(header)
            .ok_or_else(|| DecodeError::invalid("header", format!("unknown header {header:#04x}")))?;
        let tx = match kind {
            TxKind::Account => {
                let issuer = read_digest(&mut r, "issuer")?;
                let public_key = r.fixed_field(32, "public_key")?.try_into().unwrap();
                let fee = read_u64(&mut r, "fee")?;
                let parameters = ChameleonParameters::decode(r.bytes("parameters")?)?;
                let data = r.bytes("data")?.to_vec();
                let check_string = CheckString::decode(r.bytes("check_string")?)?;
                let signature = r.bytes("signature")?.to_vec();
                Transaction::Account(AccountTx {
                    issuer,
                    public_key,
                    fee,
                    parameters,
                    check_string,
                    data,
                    signature,
                })
            }
            TxKind::Funds => {
                let amount = read_u64(&mut r, "amount")?;
                let fee = read_u64(&mut r, "fee")?;
                let tx_cnt = read_u32(&mut r, "tx_cnt")?;
                let from = read_digest(&mut r, "from")?;
                let to = read_digest(&mut r, "to")?;
                let data = r.bytes("data")?.to_vec();
                let check_string = CheckString::decode(r.bytes("check_string")?)?;
                let signature = r.bytes("signature")?.to_vec();
                Transaction::Funds(FundsTx {
                    amount,
                    fee,
                    tx_cnt,
                    from,
                    to,
                    data,
                    check_string,
                    signature,
                })
            }
            TxKind::Data => {
                let fee = read_u64(&mut r, "fee")?;
                let tx_cnt = read_u32(&mut r, "tx_cnt")?;
                let from = read_digest(&mut r, "from")?;
                let to = read_digest(&mut r, "to")?;
                let data = r.bytes("data")?.to_vec();
                let check_string = CheckString::decode(r.bytes("check_string")?)?;
                let signature = r.bytes("signature")?.to_vec();
                Transaction::Data(DataTx {
                    fee,
                    tx_cnt,
                    from,
                    to,
                    data,
                    check_string,
                    signature,
                })
            }
            TxKind::Update => {
                let tx_to_update_hash = read_digest(&mut r, "tx_to_update_hash")?;
                let tx_to_update_check_string = CheckString::decode(r.bytes("tx_to_update_check_string")?)?;
                let tx_to_update_data = r.bytes("tx_to_update_data")?.to_vec();
                let issuer = read_digest(&mut r, "issuer")?;
                let fee = read_u64(&mut r, "fee")?;
                let data = r.bytes("data")?.to_vec();
                let reason = r.bytes("reason")?.to_vec();
                let check_string = CheckString::decode(r.bytes("check_string")?)?;
                let signature = r.bytes("signature")?.to_vec();
                Transaction::Update(UpdateTx {
                    tx_to_update_hash,
                    tx_to_update_check_string,
                    tx_to_update_data,
                    issuer,
                    fee,
                    check_string,
                    data,
                    reason,
                    signature,
                })
            }
            TxKind::Agg => {
                let from_list = read_addresses(&mut r, "from_list")?;
                let to_list = read_addresses(&mut r, "to_list")?;
                let mut p = Reader::new(r.bytes("payload")?);
                let payload = match p.u8("payload kind")? {
                    0 => {
                        let total_amount = p.u64("total_amount")?;
                        p.finish()?;
                        AggPayload::Funds { total_amount }
                    }
                    1 => {
                        let rest = p.remaining();
                        AggPayload::Data {
                            shared_data: p.take(rest, "shared_data")?.to_vec(),
                        }
                    }
                    other => {
                        return Err(DecodeError::invalid("payload", format!("unknown kind {other}")));
                    }
                };
                let aggregated_hashes = read_addresses(&mut r, "aggregated_hashes")?;
                Transaction::Agg(AggTx {
                    from_list,
                    to_list,
                    payload,
                    aggregated_hashes,
                })
            }
        };
        r.finish()?;
        Ok(tx)
    }
}

impl AccountTx {
    /// Self-issued account creation carrying sanitized parameters, signed.
    pub fn create(keys: &ClientKeys, fee: u64, data: Vec<u8>, rng: &mut impl RngCore) -> Result<Transaction, TxError> {
        let tx = AccountTx {
            issuer: keys.address(),
            public_key: keys.verifying_key().to_bytes(),
            fee,
            parameters: keys.chf.sanitize(),
            check_string: CheckString::random(&keys.chf, rng),
            data,
            signature: Vec::new(),
        };
        Transaction::Account(tx).sign(keys)
    }

    /// True when `issuer` is derived from `public_key`.
    pub fn issuer_matches_key(&self) -> bool {
        VerifyingKey::from_bytes(&self.public_key)
            .map(|vk| address_of(&vk) == self.issuer)
            .unwrap_or(false)
    }
}

/// Builds and signs a FundsTx from `keys`' account.
pub fn new_funds_tx(
    keys: &ClientKeys,
    to: Address,
    amount: u64,
    fee: u64,
    tx_cnt: u32,
    data: Vec<u8>,
    rng: &mut impl RngCore,
) -> Result<Transaction, TxError> {
    Transaction::Funds(FundsTx {
        amount,
        fee,
        tx_cnt,
        from: keys.address(),
        to,
        data,
        check_string: CheckString::random(&keys.chf, rng),
        signature: Vec::new(),
    })
    .sign(keys)
}

pub fn new_data_tx(
    keys: &ClientKeys,
    to: Address,
    fee: u64,
    tx_cnt: u32,
    data: Vec<u8>,
    rng: &mut impl RngCore,
) -> Result<Transaction, TxError> {
    Transaction::Data(DataTx {
        fee,
        tx_cnt,
        from: keys.address(),
        to,
        data,
        check_string: CheckString::random(&keys.chf, rng),
        signature: Vec::new(),
    })
    .sign(keys)
}

/// Owner-side modification: computes the trapdoor collision that lets
/// `original` carry `new_data` under the same digest, and wraps it in a signed
/// UpdateTx. An empty `new_data` is an erasure.
pub fn make_update(
    original: &Transaction,
    new_data: Vec<u8>,
    reason: Vec<u8>,
    fee: u64,
    keys: &ClientKeys,
    rng: &mut impl RngCore,
) -> Result<UpdateTx, TxError> {
    if !original.is_data_bearing() {
        return Err(TxError::NotDataBearing(original.kind()));
    }
    if !keys.chf.has_trapdoor() {
        return Err(ChfError::MissingTrapdoor.into());
    }
    let owner_params = original.embedded_parameters().unwrap_or(&keys.chf);
    let target = original.tx_hash(owner_params)?;
    let owner = original.owner().expect("data-bearing");
    if owner != keys.address() {
        return Err(TxError::NotOwner {
            target,
            owner,
            client: keys.address(),
        });
    }
    make_update_unchecked(original, target, new_data, reason, fee, keys, rng)
}

/// Same as [`make_update`] without the ownership check, for a caller that
/// already knows the target digest. Running it with someone else's keys
/// yields an UpdateTx whose collision does not reproduce `target`; miners
/// reject it.
pub fn make_update_unchecked(
    original: &Transaction,
    target: Digest,
    new_data: Vec<u8>,
    reason: Vec<u8>,
    fee: u64,
    keys: &ClientKeys,
    rng: &mut impl RngCore,
) -> Result<UpdateTx, TxError> {
    let old_check = original
        .check_string()
        .ok_or(TxError::NotDataBearing(original.kind()))?;
    // A foreign check string may exceed this client's q.
    let old_check = CheckString {
        r: &old_check.r % &keys.chf.q,
        s: &old_check.s % &keys.chf.q,
    };
    let old_message = original.tx_message();
    let new_message = original.with_data(new_data.clone())?.tx_message();
    let collision = chf::find_collision(
        &keys.chf,
        old_message.as_bytes(),
        &old_check,
        new_message.as_bytes(),
        rng,
    )?;
    let update = UpdateTx {
        tx_to_update_hash: target,
        tx_to_update_check_string: collision,
        tx_to_update_data: new_data,
        issuer: keys.address(),
        fee,
        check_string: CheckString::random(&keys.chf, rng),
        data: Vec::new(),
        reason,
        signature: Vec::new(),
    };
    match Transaction::Update(update).sign(keys)? {
        Transaction::Update(u) => Ok(u),
        _ => unreachable!(),
    }
}

/// On-chain account state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Account {
    pub address: Address,
    pub signing_public_key: [u8; 32],
    pub balance: u64,
    pub tx_cnt: u32,
    pub chf_parameters: ChameleonParameters,
}

impl Account {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(self.address.as_bytes())
            .raw(&self.signing_public_key)
            .u64(self.balance)
            .u32(self.tx_cnt)
            .bytes(&self.chf_parameters.sanitize().encode());
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let address = r.digest("address")?;
        let signing_public_key = r.take(32, "signing_public_key")?.try_into().unwrap();
        let balance = r.u64("balance")?;
        let tx_cnt = r.u32("tx_cnt")?;
        let chf_parameters = ChameleonParameters::decode(r.bytes("chf_parameters")?)?;
        r.finish()?;
        Ok(Self {
            address,
            signing_public_key,
            balance,
            tx_cnt,
            chf_parameters,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn keys(seed: u64) -> ClientKeys {
        ClientKeys::generate(64, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
    }

    fn funds(k: &ClientKeys, amount: u64, rng: &mut ChaCha20Rng) -> Transaction {
        new_funds_tx(k, Digest([9; 32]), amount, 1, 1, b"hello".to_vec(), rng).unwrap()
    }

    #[test]
    fn message_ignores_check_string_but_not_amount() {
        let k = keys(1);
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let a = funds(&k, 5, &mut rng);
        let mut b = a.clone();
        if let Transaction::Funds(f) = &mut b {
            f.check_string = CheckString::random(&k.chf, &mut rng);
        }
        assert_eq!(a.tx_message(), b.tx_message());
        let c = funds(&k, 7, &mut rng);
        assert_ne!(a.tx_message(), c.tx_message());
    }

    #[test]
    fn signature_round_trip_and_mismatch() {
        let a = keys(1);
        let b = keys(2);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let tx = funds(&a, 5, &mut rng);
        let pk = a.verifying_key().to_bytes();
        assert!(tx.verify_signature(&pk, &a.chf));
        assert!(!tx.verify_signature(&b.verifying_key().to_bytes(), &a.chf));

        let mut flipped = tx.clone();
        if let Transaction::Funds(f) = &mut flipped {
            f.signature[3] ^= 0x01;
        }
        assert!(!flipped.verify_signature(&pk, &a.chf));

        let other = funds(&a, 6, &mut rng);
        let mut swapped = other.clone();
        if let (Transaction::Funds(s), Some(sig)) = (&mut swapped, tx.signature()) {
            s.signature = sig.to_vec();
        }
        assert!(!swapped.verify_signature(&pk, &a.chf));
    }

    #[test]
    fn update_keeps_hash_and_signature() {
        let k = keys(3);
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let original = new_data_tx(&k, Digest([1; 32]), 1, 1, b"{name: Alise}".to_vec(), &mut rng).unwrap();
        let before = original.tx_hash(&k.chf).unwrap();
        let u = make_update(&original, b"{name: Alice}".to_vec(), b"typo".to_vec(), 1, &k, &mut rng).unwrap();
        assert_eq!(u.tx_to_update_hash, before);

        let mut updated = original.clone();
        updated
            .apply_modification(u.tx_to_update_data.clone(), u.tx_to_update_check_string.clone())
            .unwrap();
        assert_eq!(updated.data(), Some(&b"{name: Alice}"[..]));
        assert_eq!(updated.tx_hash(&k.chf).unwrap(), before);
        assert!(updated.verify_signature(&k.verifying_key().to_bytes(), &k.chf));

        let u = Transaction::Update(u);
        assert!(u.verify_signature(&k.verifying_key().to_bytes(), &k.chf));
    }

    #[test]
    fn erasure_is_empty_data() {
        let k = keys(4);
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let original = funds(&k, 5, &mut rng);
        let u = make_update(&original, Vec::new(), b"erase".to_vec(), 1, &k, &mut rng).unwrap();
        let mut t = original.clone();
        t.apply_modification(Vec::new(), u.tx_to_update_check_string).unwrap();
        assert_eq!(t.tx_hash(&k.chf).unwrap(), original.tx_hash(&k.chf).unwrap());
    }

    #[test]
    fn foreign_update_is_refused_and_forced_one_misses() {
        let a = keys(5);
        let b = keys(6);
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let original = funds(&a, 5, &mut rng);
        let target = original.tx_hash(&a.chf).unwrap();
        assert!(matches!(
            make_update(&original, b"x".to_vec(), vec![], 1, &b, &mut rng),
            Err(TxError::NotOwner { .. })
        ));
        let forced = make_update_unchecked(&original, target, b"x".to_vec(), vec![], 1, &b, &mut rng).unwrap();
        let mut t = original.clone();
        t.apply_modification(b"x".to_vec(), forced.tx_to_update_check_string)
            .unwrap();
        assert_ne!(t.tx_hash(&a.chf).ok(), Some(target));
    }

    #[test]
    fn update_requires_trapdoor_and_data_field() {
        let k = keys(7);
        let mut rng = ChaCha20Rng::seed_from_u64(15);
        let original = funds(&k, 5, &mut rng);
        let mut public_only = k.clone();
        public_only.chf = k.chf.sanitize();
        assert!(matches!(
            make_update(&original, vec![], vec![], 1, &public_only, &mut rng),
            Err(TxError::Chf(ChfError::MissingTrapdoor))
        ));
        let agg = Transaction::Agg(AggTx {
            from_list: vec![k.address()],
            to_list: vec![],
            payload: AggPayload::Funds { total_amount: 0 },
            aggregated_hashes: vec![],
        });
        assert!(matches!(
            make_update(&agg, vec![], vec![], 1, &k, &mut rng),
            Err(TxError::NotDataBearing(TxKind::Agg))
        ));
    }

    #[test]
    fn account_tx_is_sanitized_and_self_signed() {
        let k = keys(8);
        let mut rng = ChaCha20Rng::seed_from_u64(16);
        let tx = AccountTx::create(&k, 0, b"{name: Alise}".to_vec(), &mut rng).unwrap();
        let Transaction::Account(a) = &tx else { panic!() };
        assert!(a.parameters.tk.is_none());
        assert!(a.issuer_matches_key());
        assert!(tx.verify_signature(&a.public_key, &a.parameters));
        let tk = k.chf.tk.as_ref().unwrap().to_bytes_be();
        assert!(!tx.encode().windows(tk.len()).any(|w| w == tk.as_slice()));
    }

    #[test]
    fn decode_rejects_unknown_header_and_trailing() {
        assert!(Transaction::decode(&[0x09]).is_err());
        let k = keys(9);
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let mut bytes = funds(&k, 1, &mut rng).encode();
        bytes.push(0);
        assert!(matches!(Transaction::decode(&bytes), Err(DecodeError::Trailing(1))));
    }

    #[test]
    fn account_record_round_trip() {
        let k = keys(10);
        let acc = Account {
            address: k.address(),
            signing_public_key: k.verifying_key().to_bytes(),
            balance: 42,
            tx_cnt: 3,
            chf_parameters: k.chf.sanitize(),
        };
        assert_eq!(Account::decode(&acc.encode()).unwrap(), acc);
    }

    #[test]
    fn client_keys_file_round_trip() {
        let k = keys(11);
        let back = ClientKeys::decode_secret(&k.encode_secret().unwrap()).unwrap();
        assert_eq!(back.chf, k.chf);
        assert_eq!(back.address(), k.address());
    }
}
