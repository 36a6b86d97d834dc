//! `NBSH` shard files: a fixed header followed by `{key, len, bytes}` records.
//!
//! ```text
//! magic "NBSH" | version u32 = 1 | table_id u64 | version_id u64 |
//! shard_index u32 | shard_count u32 | entry_count u64 | records...
//! ```
//!
//! All integers little-endian. A record is `key u64 | len u32 | len bytes`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use thiserror::Error;

pub const SHARD_MAGIC: [u8; 4] = *b"NBSH";
pub const SHARD_FORMAT_VERSION: u32 = 1;
pub const SHARD_HEADER_LEN: u64 = 40;
pub const SHARD_RECORD_OVERHEAD: u64 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShardHeader {
    pub table_id: u64,
    pub version_id: u64,
    pub shard_index: u32,
    pub shard_count: u32,
    pub entry_count: u64,
}

#[derive(Debug, Error)]
pub enum ShardFileError {
    #[error("shard file: {reason} at byte {at}")]
    Format { at: u64, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn format_err(at: u64, reason: impl Into<String>) -> ShardFileError {
    ShardFileError::Format {
        at,
        reason: reason.into(),
    }
}

/// Size on disk of one record holding `value_len` bytes.
pub fn record_size(value_len: usize) -> u64 {
    SHARD_RECORD_OVERHEAD + value_len as u64
}

impl ShardHeader {
    pub fn encode(&self) -> [u8; SHARD_HEADER_LEN as usize] {
        let mut h = [0u8; SHARD_HEADER_LEN as usize];
        h[0..4].copy_from_slice(&SHARD_MAGIC);
        h[4..8].copy_from_slice(&SHARD_FORMAT_VERSION.to_le_bytes());
        h[8..16].copy_from_slice(&self.table_id.to_le_bytes());
        h[16..24].copy_from_slice(&self.version_id.to_le_bytes());
        h[24..28].copy_from_slice(&self.shard_index.to_le_bytes());
        h[28..32].copy_from_slice(&self.shard_count.to_le_bytes());
        h[32..40].copy_from_slice(&self.entry_count.to_le_bytes());
        h
    }

    pub fn decode(buf: &[u8]) -> Result<Self, ShardFileError> {
        let h = buf
            .get(..SHARD_HEADER_LEN as usize)
            .ok_or_else(|| format_err(buf.len() as u64, "truncated header"))?;
        if h[0..4] != SHARD_MAGIC {
            return Err(format_err(0, "bad magic"));
        }
        let version = u32::from_le_bytes(h[4..8].try_into().unwrap());
        if version != SHARD_FORMAT_VERSION {
            return Err(format_err(4, format!("unsupported format version {version}")));
        }
        let header = ShardHeader {
            table_id: u64::from_le_bytes(h[8..16].try_into().unwrap()),
            version_id: u64::from_le_bytes(h[16..24].try_into().unwrap()),
            shard_index: u32::from_le_bytes(h[24..28].try_into().unwrap()),
            shard_count: u32::from_le_bytes(h[28..32].try_into().unwrap()),
            entry_count: u64::from_le_bytes(h[32..40].try_into().unwrap()),
        };
        if header.shard_count == 0 || header.shard_index >= header.shard_count {
            return Err(format_err(24, "shard_index out of range"));
        }
        Ok(header)
    }
}

/// Records borrowed from a shard file image.
pub type ShardRecords<'a> = Vec<(u64, &'a [u8])>;

/// Decodes an in-memory shard file image.
pub fn decode_shard(buf: &[u8]) -> Result<(ShardHeader, ShardRecords<'_>), ShardFileError> {
    let header = ShardHeader::decode(buf)?;
    let mut at = SHARD_HEADER_LEN as usize;
    let mut records = Vec::new();
    while at < buf.len() {
        let rest = &buf[at..];
        if rest.len() < SHARD_RECORD_OVERHEAD as usize {
            return Err(format_err(at as u64, "truncated record header"));
        }
        let key = u64::from_le_bytes(rest[..8].try_into().unwrap());
        let len = u32::from_le_bytes(rest[8..12].try_into().unwrap()) as usize;
        let value = rest
            .get(12..12 + len)
            .ok_or_else(|| format_err(at as u64, "truncated record value"))?;
        records.push((key, value));
        at += 12 + len;
    }
    if records.len() as u64 != header.entry_count {
        return Err(format_err(
            at as u64,
            format!("header promises {} records, found {}", header.entry_count, records.len()),
        ));
    }
    Ok((header, records))
}

/// Streams records into a shard file; the entry count is patched on finish.
pub struct ShardWriter {
    out: BufWriter<File>,
    header: ShardHeader,
    bytes: u64,
}

impl ShardWriter {
    pub fn create(path: &Path, mut header: ShardHeader) -> Result<Self, ShardFileError> {
        header.entry_count = 0;
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&header.encode())?;
        Ok(ShardWriter {
            out,
            header,
            bytes: SHARD_HEADER_LEN,
        })
    }

    pub fn append(&mut self, key: u64, value: &[u8]) -> Result<(), ShardFileError> {
        let len = u32::try_from(value.len()).map_err(|_| format_err(self.bytes, "value longer than u32::MAX"))?;
        self.out.write_all(&key.to_le_bytes())?;
        self.out.write_all(&len.to_le_bytes())?;
        self.out.write_all(value)?;
        self.header.entry_count += 1;
        self.bytes += record_size(value.len());
        Ok(())
    }

    /// Bytes written so far, header included.
    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn finish(mut self) -> Result<(ShardHeader, u64), ShardFileError> {
        self.out.seek(SeekFrom::Start(32))?;
        self.out.write_all(&self.header.entry_count.to_le_bytes())?;
        let file = self.out.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        Ok((self.header, self.bytes))
    }
}

/// Writes a whole shard file.
pub fn write_shard<'a>(
    path: &Path,
    header: ShardHeader,
    records: impl IntoIterator<Item = (u64, &'a [u8])>,
) -> Result<(ShardHeader, u64), ShardFileError> {
    let mut w = ShardWriter::create(path, header)?;
    for (k, v) in records {
        w.append(k, v)?;
    }
    w.finish()
}

/// Streaming reader over a shard file on disk.
pub struct ShardReader {
    input: BufReader<File>,
    header: ShardHeader,
    pos: u64,
    remaining: u64,
}

impl ShardReader {
    pub fn open(path: &Path) -> Result<Self, ShardFileError> {
        let mut input = BufReader::new(File::open(path)?);
        let mut h = [0u8; SHARD_HEADER_LEN as usize];
        let got = read_full(&mut input, &mut h)?;
        let header = ShardHeader::decode(&h[..got])?;
        Ok(ShardReader {
            input,
            header,
            pos: SHARD_HEADER_LEN,
            remaining: header.entry_count,
        })
    }

    pub fn header(&self) -> &ShardHeader {
        &self.header
    }

    /// Next record, or `None` after the last one. Fails if the file holds
    /// fewer or more records than its header says.
    pub fn next_record(&mut self) -> Result<Option<(u64, Vec<u8>)>, ShardFileError> {
        if self.remaining == 0 {
            let mut probe = [0u8; 1];
            return match read_full(&mut self.input, &mut probe)? {
                0 => Ok(None),
                _ => Err(format_err(self.pos, "data past the last record")),
            };
        }
        let mut h = [0u8; SHARD_RECORD_OVERHEAD as usize];
        if read_full(&mut self.input, &mut h)? != h.len() {
            return Err(format_err(self.pos, "truncated record header"));
        }
        let key = u64::from_le_bytes(h[..8].try_into().unwrap());
        let len = u32::from_le_bytes(h[8..].try_into().unwrap()) as usize;
        let mut value = Vec::new();
        let got = (&mut self.input).take(len as u64).read_to_end(&mut value)?;
        if got != len {
            return Err(format_err(self.pos, "truncated record value"));
        }
        self.pos += record_size(len);
        self.remaining -= 1;
        Ok(Some((key, value)))
    }
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..])? {
            0 => break,
            k => n += k,
        }
    }
    Ok(n)
}
