//! Pending transactions waiting for the next `mine`, kept in a file next to
//! the store as a sequence of length-prefixed encoded transactions.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use redchain::Transaction;

pub struct PoolFile {
    path: PathBuf,
}

impl PoolFile {
    pub fn for_store(store: &Path) -> Self {
        let mut name = store.as_os_str().to_owned();
        name.push(".pool");
        Self { path: name.into() }
    }

    pub fn load(&self) -> io::Result<Vec<Transaction>> {
        let bytes = match fs::read(&self.path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut txs = Vec::new();
        let mut rest = bytes.as_slice();
        while !rest.is_empty() {
            let bad = || io::Error::new(io::ErrorKind::InvalidData, "corrupt pool file");
            let (len, tail) = rest.split_first_chunk::<4>().ok_or_else(bad)?;
            let len = u32::from_be_bytes(*len) as usize;
            let body = tail.get(..len).ok_or_else(bad)?;
            txs.push(Transaction::decode(body).map_err(|_| bad())?);
            rest = &tail[len..];
        }
        Ok(txs)
    }

    pub fn save(&self, txs: &[Transaction]) -> io::Result<()> {
        let mut out = Vec::new();
        for tx in txs {
            let body = tx.encode();
            out.extend_from_slice(&(body.len() as u32).to_be_bytes());
            out.extend_from_slice(&body);
        }
        fs::write(&self.path, out)
    }

    pub fn push(&self, tx: Transaction) -> io::Result<()> {
        let mut txs = self.load()?;
        txs.push(tx);
        self.save(&txs)
    }
}
