//! Simulated peer-to-peer layer: the message codec, node behavior, an
//! in-process network with per-link delay and loss, and a scenario runner.

mod node;
mod scenario;
mod sim;

pub use node::{Node, SubmitError, SyncError};
pub use scenario::{run_scenario, NodeReport, Scenario, ScenarioError, ScenarioReport, UpdateReport};
pub use sim::{FetchError, LinkConfig, SimNetwork};

use crate::codec::{DecodeError, Reader, Writer};
use crate::digest::Digest;
use crate::ledger::Block;
use crate::tx::TxKind;

pub const REQ_BLOCK: u8 = 0x10;
pub const RES_BLOCK: u8 = 0x11;
pub const REQ_TX: u8 = 0x12;
pub const RES_TX: u8 = 0x13;
pub const REQ_UPDATE_TX: u8 = 0x14;
pub const RES_UPDATE_TX: u8 = 0x15;
pub const BROADCAST_TX: u8 = 0x16;
pub const BROADCAST_BLOCK: u8 = 0x17;
pub const REQ_CHAIN_TIP: u8 = 0x18;
pub const RES_CHAIN_TIP: u8 = 0x19;

/// A peer-to-peer message. Transaction bodies travel as their wire bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    ReqBlock { height: u64 },
    /// The block at `height` and its storage key, absent when unknown.
    ResBlock { height: u64, block: Option<(Digest, Block)> },
    ReqTx { kind: TxKind, digest: Digest },
    ResTx { digest: Digest, body: Option<Vec<u8>> },
    ReqUpdateTx { digest: Digest },
    ResUpdateTx { digest: Digest, body: Option<Vec<u8>> },
    BroadcastTx { body: Vec<u8> },
    BroadcastBlock { block: Block },
    ReqChainTip,
    ResChainTip { height: u64, key: Digest },
}

fn optional(w: &mut Writer, body: &Option<Vec<u8>>) {
    match body {
        Some(b) => w.u8(1).bytes(b),
        None => w.u8(0),
    };
}

fn read_optional(r: &mut Reader) -> Result<Option<Vec<u8>>, DecodeError> {
    match r.u8("presence")? {
        0 => Ok(None),
        1 => Ok(Some(r.bytes("body")?.to_vec())),
        other => Err(DecodeError::invalid("presence", format!("flag {other}"))),
    }
}

impl Message {
    pub fn code(&self) -> u8 {
        match self {
            Message::ReqBlock { .. } => REQ_BLOCK,
            Message::ResBlock { .. } => RES_BLOCK,
            Message::ReqTx { .. } => REQ_TX,
            Message::ResTx { .. } => RES_TX,
            Message::ReqUpdateTx { .. } => REQ_UPDATE_TX,
            Message::ResUpdateTx { .. } => RES_UPDATE_TX,
            Message::BroadcastTx { .. } => BROADCAST_TX,
            Message::BroadcastBlock { .. } => BROADCAST_BLOCK,
            Message::ReqChainTip => REQ_CHAIN_TIP,
            Message::ResChainTip { .. } => RES_CHAIN_TIP,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Message::ReqBlock { height } => {
                w.u64(*height);
            }
            Message::ResBlock { height, block } => {
                w.u64(*height);
                match block {
                    Some((key, b)) => w.u8(1).raw(key.as_bytes()).bytes(&b.encode()),
                    None => w.u8(0),
                };
            }
            Message::ReqTx { kind, digest } => {
                w.u8(kind.header()).raw(digest.as_bytes());
            }
            Message::ResTx { digest, body } | Message::ResUpdateTx { digest, body } => {
                w.raw(digest.as_bytes());
                optional(&mut w, body);
            }
            Message::ReqUpdateTx { digest } => {
                w.raw(digest.as_bytes());
            }
            Message::BroadcastTx { body } => {
                w.raw(body);
            }
            Message::BroadcastBlock { block } => {
                w.raw(&block.encode());
            }
            Message::ReqChainTip => {}
            Message::ResChainTip { height, key } => {
                w.u64(*height).raw(key.as_bytes());
            }
        }
        w.into_bytes()
    }

    /// `code (1 byte) || payload length (4 bytes, big-endian) || payload`
    pub fn to_frame(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut w = Writer::new();
        w.u8(self.code()).bytes(&payload);
        w.into_bytes()
    }

    pub fn from_frame(frame: &[u8]) -> Result<Self, DecodeError> {
        let mut outer = Reader::new(frame);
        let code = outer.u8("code")?;
        let payload = outer.bytes("payload")?;
        outer.finish()?;
        let mut r = Reader::new(payload);
        let msg = match code {
            REQ_BLOCK => Message::ReqBlock {
                height: r.u64("height")?,
            },
            RES_BLOCK => {
                let height = r.u64("height")?;
                let block = match r.u8("presence")? {
                    0 => None,
                    1 => {
                        let key = r.digest("key")?;
                        Some((key, Block::decode(r.bytes("block")?)?))
                    }
                    other => return Err(DecodeError::invalid("presence", format!("flag {other}"))),
                };
                Message::ResBlock { height, block }
            }
            REQ_TX => {
                let h = r.u8("kind")?;
                let kind = TxKind::from_header(h).ok_or_else(|| DecodeError::invalid("kind", format!("{h:#04x}")))?;
                Message::ReqTx {
                    kind,
                    digest: r.digest("digest")?,
                }
            }
            RES_TX => Message::ResTx {
                digest: r.digest("digest")?,
                body: read_optional(&mut r)?,
            },
            REQ_UPDATE_TX => Message::ReqUpdateTx {
                digest: r.digest("digest")?,
            },
            RES_UPDATE_TX => Message::ResUpdateTx {
                digest: r.digest("digest")?,
                body: read_optional(&mut r)?,
            },
            BROADCAST_TX => Message::BroadcastTx {
                body: r.take(r.remaining(), "body")?.to_vec(),
            },
            BROADCAST_BLOCK => Message::BroadcastBlock {
                block: Block::decode(r.take(r.remaining(), "block")?)?,
            },
            REQ_CHAIN_TIP => Message::ReqChainTip,
            RES_CHAIN_TIP => Message::ResChainTip {
                height: r.u64("height")?,
                key: r.digest("key")?,
            },
            other => return Err(DecodeError::invalid("code", format!("{other:#04x}"))),
        };
        r.finish()?;
        Ok(msg)
    }
}
