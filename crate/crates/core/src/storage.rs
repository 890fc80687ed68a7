//! Bucketed key-value store backing a node: TX bodies by digest, blocks,
//! accounts and chain metadata.
//!
//! On disk the store is one append-only file: an 8-byte magic followed by
//! records `[name_len u8][name][key][value_len u32][value]`. Keys are 32 bytes
//! in every bucket except `meta`, where they carry a 2-byte length prefix. The
//! in-memory index is rebuilt on open; later records win. `close` compacts the
//! file down to one record per live key.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::codec::{Reader, Writer};
use crate::digest::{inner_hash, Digest, DIGEST_LEN};
use crate::tx::TxKind;

pub const BUCKET_ACCOUNT_TX: &str = "accounttx";
pub const BUCKET_FUNDS_TX: &str = "fundstx";
pub const BUCKET_DATA_TX: &str = "datatx";
pub const BUCKET_AGG_TX: &str = "aggtx";
pub const BUCKET_UPDATE_TX: &str = "updatetx";
pub const BUCKET_BLOCKS: &str = "blocks";
pub const BUCKET_ACCOUNTS: &str = "accounts";
pub const BUCKET_META: &str = "meta";

pub const BUCKETS: [&str; 8] = [
    BUCKET_ACCOUNT_TX,
    BUCKET_FUNDS_TX,
    BUCKET_DATA_TX,
    BUCKET_AGG_TX,
    BUCKET_UPDATE_TX,
    BUCKET_BLOCKS,
    BUCKET_ACCOUNTS,
    BUCKET_META,
];

/// Buckets searched when resolving a transaction digest.
pub const TX_BUCKETS: [&str; 5] = [
    BUCKET_ACCOUNT_TX,
    BUCKET_FUNDS_TX,
    BUCKET_DATA_TX,
    BUCKET_AGG_TX,
    BUCKET_UPDATE_TX,
];

const MAGIC: &[u8; 8] = b"RCHSTOR1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown bucket {0:?}")]
    UnknownBucket(String),
    #[error("bucket {bucket} expects {expected}-byte keys, got {got}")]
    KeyWidth {
        bucket: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("store file corrupt: {0}")]
    Corrupt(String),
    #[error("store file ends in a partial record")]
    TornRecord,
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn bucket_name(name: &str) -> Result<&'static str, StoreError> {
    BUCKETS
        .iter()
        .copied()
        .find(|b| *b == name)
        .ok_or_else(|| StoreError::UnknownBucket(name.to_string()))
}

fn key_width(bucket: &str) -> Option<usize> {
    (bucket != BUCKET_META).then_some(DIGEST_LEN)
}

fn check_key(bucket: &'static str, key: &[u8]) -> Result<(), StoreError> {
    match key_width(bucket) {
        Some(w) if key.len() != w => Err(StoreError::KeyWidth {
            bucket,
            expected: w,
            got: key.len(),
        }),
        None if key.len() > u16::MAX as usize => Err(StoreError::KeyWidth {
            bucket,
            expected: u16::MAX as usize,
            got: key.len(),
        }),
        _ => Ok(()),
    }
}

fn encode_record(out: &mut Writer, bucket: &str, key: &[u8], value: &[u8]) {
    out.u8(bucket.len() as u8).raw(bucket.as_bytes());
    if key_width(bucket).is_none() {
        out.u16(key.len() as u16);
    }
    out.raw(key).bytes(value);
}

#[derive(Debug, Default)]
pub struct Store {
    path: Option<PathBuf>,
    buckets: HashMap<&'static str, HashMap<Vec<u8>, Vec<u8>>>,
    unflushed: Writer,
}

impl Store {
    /// Store that never touches disk; `flush` and `close` are no-ops.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) the store file at `path` and rebuilds the index.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut store = Store {
            path: Some(path.clone()),
            ..Default::default()
        };
        match File::open(&path) {
            Ok(mut f) => {
                let mut bytes = Vec::new();
                f.read_to_end(&mut bytes)?;
                store.load(&bytes)?;
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir)?;
                }
                let mut f = File::create(&path)?;
                f.write_all(MAGIC)?;
                f.sync_all()?;
            }
            Err(e) => return Err(e.into()),
        }
        Ok(store)
    }

    fn load(&mut self, bytes: &[u8]) -> Result<(), StoreError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(StoreError::Corrupt("bad magic".into()));
        }
        let mut r = Reader::new(&bytes[MAGIC.len()..]);
        while r.remaining() > 0 {
            let record = (|| -> Result<(&'static str, Vec<u8>, Vec<u8>), StoreError> {
                let corrupt = |e: crate::codec::DecodeError| match e {
                    crate::codec::DecodeError::Truncated(_) => StoreError::TornRecord,
                    other => StoreError::Corrupt(other.to_string()),
                };
                let len = r.u8("bucket name length").map_err(corrupt)? as usize;
                let name = r.take(len, "bucket name").map_err(corrupt)?;
                let bucket = bucket_name(&String::from_utf8_lossy(name))?;
                let key_len = match key_width(bucket) {
                    Some(w) => w,
                    None => r.u16("key length").map_err(corrupt)? as usize,
                };
                let key = r.take(key_len, "key").map_err(corrupt)?.to_vec();
                let value = r.bytes("value").map_err(corrupt)?.to_vec();
                Ok((bucket, key, value))
            })();
            match record {
                Ok((bucket, key, value)) => {
                    self.buckets.entry(bucket).or_default().insert(key, value);
                }
                Err(StoreError::TornRecord) => {
                    // Torn final write: everything before it was flushed whole.
                    log::warn!("dropping truncated tail record in store file");
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Inserts or overwrites. Durable once [`flush`](Self::flush) returns.
    pub fn put(&mut self, bucket: &str, key: &[u8], value: &[u8]) -> Result<(), StoreError> {
        let bucket = bucket_name(bucket)?;
        check_key(bucket, key)?;
        if self.path.is_some() {
            encode_record(&mut self.unflushed, bucket, key, value);
        }
        self.buckets
            .entry(bucket)
            .or_default()
            .insert(key.to_vec(), value.to_vec());
        Ok(())
    }

    /// Exact-match lookup; a missing key is `Ok(None)`.
    pub fn get(&self, bucket: &str, key: &[u8]) -> Result<Option<&[u8]>, StoreError> {
        let bucket = bucket_name(bucket)?;
        Ok(self
            .buckets
            .get(bucket)
            .and_then(|b| b.get(key))
            .map(Vec::as_slice))
    }

    /// Resolves a transaction digest across all TX buckets.
    pub fn get_tx_any(&self, digest: &Digest) -> Option<(&'static str, &[u8])> {
        TX_BUCKETS.iter().find_map(|&b| {
            self.buckets
                .get(b)
                .and_then(|m| m.get(digest.as_bytes().as_slice()))
                .map(|v| (b, v.as_slice()))
        })
    }

    pub fn tx_bucket_for(kind: TxKind) -> &'static str {
        kind.bucket()
    }

    pub fn contains(&self, bucket: &str, key: &[u8]) -> bool {
        matches!(self.get(bucket, key), Ok(Some(_)))
    }

    pub fn len(&self, bucket: &str) -> usize {
        self.buckets.get(bucket).map_or(0, HashMap::len)
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.values().all(HashMap::is_empty)
    }

    /// Entries of one bucket in ascending key order.
    pub fn entries(&self, bucket: &str) -> Vec<(&[u8], &[u8])> {
        let mut out: Vec<(&[u8], &[u8])> = self
            .buckets
            .get(bucket)
            .map(|m| m.iter().map(|(k, v)| (k.as_slice(), v.as_slice())).collect())
            .unwrap_or_default();
        out.sort_unstable_by(|a, b| a.0.cmp(b.0));
        out
    }

    /// Appends pending records to the file and syncs it.
    pub fn flush(&mut self) -> Result<(), StoreError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        if self.unflushed.as_slice().is_empty() {
            return Ok(());
        }
        let mut f = OpenOptions::new().append(true).open(path)?;
        f.write_all(self.unflushed.as_slice())?;
        f.sync_all()?;
        self.unflushed = Writer::new();
        Ok(())
    }

    /// Flushes, then rewrites the file with exactly one record per live key
    /// so overwritten values no longer exist on disk.
    pub fn close(mut self) -> Result<(), StoreError> {
        self.compact()
    }

    pub fn compact(&mut self) -> Result<(), StoreError> {
        self.flush()?;
        let Some(path) = self.path.clone() else {
            return Ok(());
        };
        let mut w = Writer::new();
        w.raw(MAGIC);
        for bucket in BUCKETS {
            for (k, v) in self.entries(bucket) {
                encode_record(&mut w, bucket, k, v);
            }
        }
        let tmp = path.with_extension("compact");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(w.as_slice())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Every bucket as `bucket<TAB>key-hex<TAB>value-hex` lines, buckets in
    /// fixed order and keys ascending.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for bucket in BUCKETS {
            for (k, v) in self.entries(bucket) {
                out.push_str(bucket);
                out.push('\t');
                out.push_str(&hex::encode(k));
                out.push('\t');
                out.push_str(&hex::encode(v));
                out.push('\n');
            }
        }
        out
    }

    pub fn dump_digest(&self) -> Digest {
        inner_hash(self.dump().as_bytes())
    }
}

/// Writes staged on top of a store, readable through, applied atomically by
/// [`commit`](Self::commit). Block import validates against a `Staged` view
/// and only commits when the whole block checks out.
pub struct Staged<'a> {
    base: &'a Store,
    writes: BTreeMap<(&'static str, Vec<u8>), Vec<u8>>,
}

impl<'a> Staged<'a> {
    pub fn new(base: &'a Store) -> Self {
        Self {
            base,
            writes: BTreeMap::new(),
        }
    }

    pub fn base(&self) -> &'a Store {
        self.base
    }

    pub fn get(&self, bucket: &str, key: &[u8]) -> Result<Option<&[u8]>, StoreError> {
        let b = bucket_name(bucket)?;
        if let Some(v) = self.writes.get(&(b, key.to_vec())) {
            return Ok(Some(v));
        }
        self.base.get(b, key)
    }

    pub fn put(&mut self, bucket: &str, key: &[u8], value: Vec<u8>) -> Result<(), StoreError> {
        let b = bucket_name(bucket)?;
        check_key(b, key)?;
        self.writes.insert((b, key.to_vec()), value);
        Ok(())
    }

    pub fn get_tx_any(&self, digest: &Digest) -> Option<(&'static str, &[u8])> {
        TX_BUCKETS.iter().find_map(|&b| {
            self.get(b, digest.as_bytes())
                .ok()
                .flatten()
                .map(|v| (b, v))
        })
    }

    pub fn into_writes(self) -> Vec<(&'static str, Vec<u8>, Vec<u8>)> {
        self.writes.into_iter().map(|((b, k), v)| (b, k, v)).collect()
    }
}

/// Read access shared by [`Store`] and [`Staged`].
pub trait KvRead {
    fn read(&self, bucket: &str, key: &[u8]) -> Option<&[u8]>;

    fn read_tx_any(&self, digest: &Digest) -> Option<(&'static str, &[u8])> {
        TX_BUCKETS
            .iter()
            .find_map(|&b| self.read(b, digest.as_bytes()).map(|v| (b, v)))
    }
}

pub trait KvWrite: KvRead {
    fn write(&mut self, bucket: &str, key: &[u8], value: Vec<u8>) -> Result<(), StoreError>;
}

impl KvRead for Store {
    fn read(&self, bucket: &str, key: &[u8]) -> Option<&[u8]> {
        self.get(bucket, key).ok().flatten()
    }
}

impl KvWrite for Store {
    fn write(&mut self, bucket: &str, key: &[u8], value: Vec<u8>) -> Result<(), StoreError> {
        self.put(bucket, key, &value)
    }
}

impl KvRead for Staged<'_> {
    fn read(&self, bucket: &str, key: &[u8]) -> Option<&[u8]> {
        self.get(bucket, key).ok().flatten()
    }
}

impl KvWrite for Staged<'_> {
    fn write(&mut self, bucket: &str, key: &[u8], value: Vec<u8>) -> Result<(), StoreError> {
        self.put(bucket, key, value)
    }
}

impl Store {
    pub fn commit(&mut self, writes: Vec<(&'static str, Vec<u8>, Vec<u8>)>) -> Result<(), StoreError> {
        for (b, k, v) in writes {
            self.put(b, &k, &v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(n: u8) -> [u8; 32] {
        [n; 32]
    }

    #[test]
    fn put_get_overwrite() {
        let mut s = Store::in_memory();
        s.put(BUCKET_FUNDS_TX, &key(1), b"a").unwrap();
        assert_eq!(s.get(BUCKET_FUNDS_TX, &key(1)).unwrap(), Some(&b"a"[..]));
        s.put(BUCKET_FUNDS_TX, &key(1), b"b").unwrap();
        assert_eq!(s.get(BUCKET_FUNDS_TX, &key(1)).unwrap(), Some(&b"b"[..]));
        assert_eq!(s.get(BUCKET_FUNDS_TX, &key(2)).unwrap(), None);
    }

    #[test]
    fn errors_for_unknown_bucket_and_bad_key() {
        let mut s = Store::in_memory();
        assert!(matches!(s.put("nope", &key(1), b""), Err(StoreError::UnknownBucket(_))));
        assert!(matches!(s.get("nope", &key(1)), Err(StoreError::UnknownBucket(_))));
        assert!(matches!(
            s.put(BUCKET_BLOCKS, b"short", b""),
            Err(StoreError::KeyWidth { expected: 32, got: 5, .. })
        ));
        s.put(BUCKET_META, b"tip", b"x").unwrap();
    }

    #[test]
    fn get_tx_any_searches_tx_buckets() {
        let mut s = Store::in_memory();
        s.put(BUCKET_DATA_TX, &key(1), b"d").unwrap();
        s.put(BUCKET_UPDATE_TX, &key(2), b"u").unwrap();
        s.put(BUCKET_BLOCKS, &key(3), b"b").unwrap();
        assert_eq!(s.get_tx_any(&Digest(key(1))), Some((BUCKET_DATA_TX, &b"d"[..])));
        assert_eq!(s.get_tx_any(&Digest(key(2))), Some((BUCKET_UPDATE_TX, &b"u"[..])));
        assert_eq!(s.get_tx_any(&Digest(key(3))), None);
    }

    #[test]
    fn reopen_after_flush_and_compaction() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("node.db");
        let mut s = Store::open(&path).unwrap();
        s.put(BUCKET_FUNDS_TX, &key(1), b"first").unwrap();
        s.put(BUCKET_META, b"tip", &key(9)).unwrap();
        s.flush().unwrap();
        s.put(BUCKET_FUNDS_TX, &key(1), b"second").unwrap();
        s.flush().unwrap();
        let dump = s.dump();

        let reopened = Store::open(&path).unwrap();
        assert_eq!(reopened.dump(), dump);
        let raw = fs::read(&path).unwrap();
        assert!(raw.windows(5).any(|w| w == b"first"));

        s.close().unwrap();
        let raw = fs::read(&path).unwrap();
        assert!(!raw.windows(5).any(|w| w == b"first"));
        assert_eq!(Store::open(&path).unwrap().dump(), dump);
    }

    #[test]
    fn unflushed_writes_are_lost() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("node.db");
        let mut s = Store::open(&path).unwrap();
        s.put(BUCKET_FUNDS_TX, &key(1), b"v").unwrap();
        drop(s);
        assert_eq!(Store::open(&path).unwrap().len(BUCKET_FUNDS_TX), 0);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("node.db");
        let mut s = Store::open(&path).unwrap();
        s.put(BUCKET_FUNDS_TX, &key(1), b"v").unwrap();
        s.flush().unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[7, b'f', b'u']).unwrap();
        let s = Store::open(&path).unwrap();
        assert_eq!(s.get(BUCKET_FUNDS_TX, &key(1)).unwrap(), Some(&b"v"[..]));
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("node.db");
        fs::write(&path, b"garbage!").unwrap();
        assert!(matches!(Store::open(&path), Err(StoreError::Corrupt(_))));
    }

    #[test]
    fn dump_is_ordered() {
        let mut s = Store::in_memory();
        s.put(BUCKET_META, b"b", b"2").unwrap();
        s.put(BUCKET_META, b"a", b"1").unwrap();
        s.put(BUCKET_ACCOUNT_TX, &key(5), b"x").unwrap();
        let dump = s.dump();
        let lines: Vec<_> = dump.lines().collect();
        assert!(lines[0].starts_with("accounttx\t"));
        assert_eq!(lines[1], "meta\t61\t31");
        assert_eq!(lines[2], "meta\t62\t32");
    }

    #[test]
    fn staged_reads_through_and_commits() {
        let mut s = Store::in_memory();
        s.put(BUCKET_FUNDS_TX, &key(1), b"old").unwrap();
        let mut st = Staged::new(&s);
        st.put(BUCKET_FUNDS_TX, &key(1), b"new".to_vec()).unwrap();
        st.put(BUCKET_FUNDS_TX, &key(2), b"two".to_vec()).unwrap();
        assert_eq!(st.get(BUCKET_FUNDS_TX, &key(1)).unwrap(), Some(&b"new"[..]));
        assert_eq!(st.get_tx_any(&Digest(key(2))).map(|x| x.1), Some(&b"two"[..]));
        let writes = st.into_writes();
        assert_eq!(s.get(BUCKET_FUNDS_TX, &key(1)).unwrap(), Some(&b"old"[..]));
        s.commit(writes).unwrap();
        assert_eq!(s.get(BUCKET_FUNDS_TX, &key(2)).unwrap(), Some(&b"two"[..]));
    }
}
