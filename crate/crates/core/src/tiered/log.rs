use std::fs::{File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use super::TieredError;

pub const LOG_MAGIC: [u8; 4] = *b"NBVL";
pub const LOG_VERSION: u32 = 1;
pub const LOG_HEADER_LEN: u64 = 8;
pub const RECORD_HEADER_LEN: usize = 12;

/// A decoded value-log record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Record<'a> {
    pub key: u64,
    pub value: &'a [u8],
}

impl Record<'_> {
    pub fn encoded_len(&self) -> usize {
        RECORD_HEADER_LEN + self.value.len()
    }
}

pub fn encode_record(key: u64, value: &[u8], out: &mut Vec<u8>) {
    out.extend_from_slice(&key.to_le_bytes());
    out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    out.extend_from_slice(value);
}

/// Decodes one record from the front of `buf`.
pub fn decode_record(buf: &[u8]) -> Result<Record<'_>, TieredError> {
    let header = buf
        .get(..RECORD_HEADER_LEN)
        .ok_or(TieredError::Truncated { need: RECORD_HEADER_LEN, have: buf.len() })?;
    let key = u64::from_le_bytes(header[..8].try_into().unwrap());
    let len = u32::from_le_bytes(header[8..].try_into().unwrap()) as usize;
    let need = RECORD_HEADER_LEN.saturating_add(len);
    let value = buf
        .get(RECORD_HEADER_LEN..need)
        .ok_or(TieredError::Truncated { need, have: buf.len() })?;
    Ok(Record { key, value })
}

pub fn encode_header() -> [u8; LOG_HEADER_LEN as usize] {
    let mut h = [0; LOG_HEADER_LEN as usize];
    h[..4].copy_from_slice(&LOG_MAGIC);
    h[4..].copy_from_slice(&LOG_VERSION.to_le_bytes());
    h
}

pub fn decode_header(buf: &[u8]) -> Result<(), TieredError> {
    match buf.get(..LOG_HEADER_LEN as usize) {
        Some(h) if h[..4] == LOG_MAGIC && h[4..] == LOG_VERSION.to_le_bytes() => Ok(()),
        Some(_) => Err(TieredError::BadHeader),
        None => Err(TieredError::Truncated { need: LOG_HEADER_LEN as usize, have: buf.len() }),
    }
}

/// Decodes a whole log image: header then records back to back.
pub fn decode_log(buf: &[u8]) -> Result<Vec<(u64, Record<'_>)>, TieredError> {
    decode_header(buf)?;
    let mut at = LOG_HEADER_LEN as usize;
    let mut out = Vec::new();
    while at < buf.len() {
        let r = decode_record(&buf[at..])?;
        out.push((at as u64, r));
        at += r.encoded_len();
    }
    Ok(out)
}

/// Append-only value file. Appends come from a single writer; reads may run
/// concurrently from any thread.
#[derive(Debug)]
pub struct ValueLog {
    file: File,
    path: PathBuf,
    head: AtomicU64,
    max_record: AtomicUsize,
    value_reads: AtomicU64,
}

impl ValueLog {
    pub fn create(path: &Path) -> Result<Self, TieredError> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?;
        file.write_all_at(&encode_header(), 0)?;
        Ok(ValueLog {
            file,
            path: path.to_owned(),
            head: AtomicU64::new(LOG_HEADER_LEN),
            max_record: AtomicUsize::new(RECORD_HEADER_LEN),
            value_reads: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Bytes written so far, header included.
    pub fn len(&self) -> u64 {
        self.head.load(Ordering::Acquire)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == LOG_HEADER_LEN
    }

    pub fn value_reads(&self) -> u64 {
        self.value_reads.load(Ordering::Relaxed)
    }

    /// Appends records in one write and returns their offsets.
    pub fn append_batch<'a>(&self, records: impl IntoIterator<Item = (u64, &'a [u8])>) -> Result<Vec<u64>, TieredError> {
        let start = self.len();
        let mut buf = Vec::new();
        let mut offsets = Vec::new();
        let mut max = 0;
        for (key, value) in records {
            offsets.push(start + buf.len() as u64);
            max = max.max(RECORD_HEADER_LEN + value.len());
            encode_record(key, value, &mut buf);
        }
        if buf.is_empty() {
            return Ok(offsets);
        }
        self.file.write_all_at(&buf, start)?;
        self.max_record.fetch_max(max, Ordering::AcqRel);
        self.head.store(start + buf.len() as u64, Ordering::Release);
        Ok(offsets)
    }

    pub fn append(&self, key: u64, value: &[u8]) -> Result<u64, TieredError> {
        Ok(self.append_batch([(key, value)])?[0])
    }

    /// Reads the record at `offset` with a single positional read and checks
    /// that it belongs to `key`.
    pub fn read(&self, offset: u64, key: u64) -> Result<Vec<u8>, TieredError> {
        let head = self.len();
        if offset < LOG_HEADER_LEN || offset >= head {
            return Err(TieredError::Corruption { key, offset });
        }
        let want = (self.max_record.load(Ordering::Acquire) as u64).min(head - offset) as usize;
        let mut buf = vec![0; want];
        self.value_reads.fetch_add(1, Ordering::Relaxed);
        let n = self.file.read_at(&mut buf, offset)?;
        let rec = decode_record(&buf[..n]).map_err(|_| TieredError::Corruption { key, offset })?;
        if rec.key != key {
            return Err(TieredError::Corruption { key, offset });
        }
        let len = rec.value.len();
        buf.truncate(RECORD_HEADER_LEN + len);
        buf.drain(..RECORD_HEADER_LEN);
        Ok(buf)
    }

    /// Encoded size of the record at `offset`, read without touching the
    /// value-read counter.
    pub fn record_len(&self, offset: u64) -> Result<u64, TieredError> {
        let mut h = [0u8; RECORD_HEADER_LEN];
        self.file.read_exact_at(&mut h, offset)?;
        Ok((RECORD_HEADER_LEN + u32::from_le_bytes(h[8..].try_into().unwrap()) as usize) as u64)
    }

    /// Overwrites bytes in place. Only for fault-injection tests.
    #[doc(hidden)]
    pub fn scribble(&self, offset: u64, bytes: &[u8]) -> io::Result<()> {
        self.file.write_all_at(bytes, offset)
    }
}
