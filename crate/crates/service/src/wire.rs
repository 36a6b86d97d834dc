//! Little-endian framed query protocol.
//!
//! Every message travels as `{len: u32, body}`. Bodies start with the magic
//! `NBQ1` and a one-byte message type:
//!
//! | type | message | body after magic and type |
//! |---|---|---|
//! | 1 | batch request | table_id u64, flags u8, pinned u64 (iff flags bit 0), n u32, n keys u64 |
//! | 2 | batch response | status u8, served_version u64, shard_count u32, m u8, m versions u64, then for status OK: ceil(n/8) hit-bitmap bytes (LSB first) and `len u32 + bytes` per hit |
//! | 3 | health request | empty |
//! | 4 | health response | UTF-8 `key=value` lines |
//! | 5 | activate request | UTF-8 path of a shard file to load and activate |
//! | 6 | activate response | ok u8, version u64, UTF-8 message |
//! | 7 | retire request | version u64 (0 = the previous version) |
//! | 8 | retire response | ok u8, version u64, UTF-8 message |
//!
//! A batch response does not repeat the key count; the decoder takes it from
//! the request it answers.

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"NBQ1";
pub const MAX_FRAME: usize = 256 << 20;

pub const MSG_REQUEST: u8 = 1;
pub const MSG_RESPONSE: u8 = 2;
pub const MSG_HEALTH_REQUEST: u8 = 3;
pub const MSG_HEALTH_RESPONSE: u8 = 4;
pub const MSG_ACTIVATE_REQUEST: u8 = 5;
pub const MSG_ACTIVATE_RESPONSE: u8 = 6;
pub const MSG_RETIRE_REQUEST: u8 = 7;
pub const MSG_RETIRE_RESPONSE: u8 = 8;

pub const FLAG_PINNED: u8 = 1;
/// Reserved for value compression; not supported, rejected when set.
pub const FLAG_COMPRESSED: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    VersionUnavailable = 1,
    Malformed = 2,
}

impl Status {
    fn from_u8(b: u8) -> Option<Status> {
        match b {
            0 => Some(Status::Ok),
            1 => Some(Status::VersionUnavailable),
            2 => Some(Status::Malformed),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated at byte {at}: need {need} more")]
    Truncated { at: usize, need: usize },
    #[error("bad magic")]
    BadMagic,
    #[error("unexpected message type {0}")]
    UnexpectedType(u8),
    #[error("unknown status {0}")]
    BadStatus(u8),
    #[error("unsupported flags {0:#04x}")]
    BadFlags(u8),
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("too many versions ({0})")]
    TooManyVersions(usize),
    #[error("hit bitmap has bits set past the key count")]
    BadBitmap,
    #[error("text payload is not UTF-8")]
    BadText,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchRequest {
    pub table_id: u64,
    pub pinned_version: Option<u64>,
    pub keys: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchResponse {
    pub status: Status,
    pub served_version: u64,
    pub shard_count: u32,
    pub available_versions: Vec<u64>,
    /// One entry per requested key when `status` is OK, empty otherwise.
    pub results: Vec<Option<Vec<u8>>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdminReply {
    pub ok: bool,
    pub version: u64,
    pub message: String,
}

/// Any message a peer may send.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Request(BatchRequest),
    /// A batch response kept encoded until the key count is known.
    Response(Vec<u8>),
    HealthRequest,
    HealthResponse(String),
    ActivateRequest(String),
    ActivateResponse(AdminReply),
    RetireRequest(u64),
    RetireResponse(AdminReply),
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, at: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(WireError::Truncated {
            at: self.at,
            need: n.saturating_sub(self.buf.len() - self.at),
        })?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.at..];
        self.at = self.buf.len();
        s
    }

    fn header(&mut self) -> Result<u8, WireError> {
        if self.take(4)? != MAGIC {
            return Err(WireError::BadMagic);
        }
        self.u8()
    }

    fn finish(&self) -> Result<(), WireError> {
        match self.buf.len() - self.at {
            0 => Ok(()),
            n => Err(WireError::Trailing(n)),
        }
    }
}

fn header(out: &mut Vec<u8>, msg_type: u8) {
    out.extend_from_slice(&MAGIC);
    out.push(msg_type);
}

pub fn encode_request(req: &BatchRequest, out: &mut Vec<u8>) {
    header(out, MSG_REQUEST);
    out.extend_from_slice(&req.table_id.to_le_bytes());
    match req.pinned_version {
        Some(v) => {
            out.push(FLAG_PINNED);
            out.extend_from_slice(&v.to_le_bytes());
        }
        None => out.push(0),
    }
    out.extend_from_slice(&(req.keys.len() as u32).to_le_bytes());
    for k in &req.keys {
        out.extend_from_slice(&k.to_le_bytes());
    }
}

fn request_body(r: &mut Reader<'_>) -> Result<BatchRequest, WireError> {
    let table_id = r.u64()?;
    let flags = r.u8()?;
    if flags & !FLAG_PINNED != 0 {
        return Err(WireError::BadFlags(flags));
    }
    let pinned_version = if flags & FLAG_PINNED != 0 { Some(r.u64()?) } else { None };
    let n = r.u32()? as usize;
    let raw = r.take(n.checked_mul(8).ok_or(WireError::Truncated { at: r.at, need: usize::MAX })?)?;
    let keys = raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(BatchRequest {
        table_id,
        pinned_version,
        keys,
    })
}

pub fn decode_request(body: &[u8]) -> Result<BatchRequest, WireError> {
    let mut r = Reader::new(body);
    match r.header()? {
        MSG_REQUEST => {
            let req = request_body(&mut r)?;
            r.finish()?;
            Ok(req)
        }
        t => Err(WireError::UnexpectedType(t)),
    }
}

fn response_prefix(status: Status, served_version: u64, shard_count: u32, available_versions: &[u64], out: &mut Vec<u8>) {
    header(out, MSG_RESPONSE);
    out.push(status as u8);
    out.extend_from_slice(&served_version.to_le_bytes());
    out.extend_from_slice(&shard_count.to_le_bytes());
    debug_assert!(available_versions.len() <= u8::MAX as usize);
    out.push(available_versions.len() as u8);
    for v in available_versions {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_response(resp: &BatchResponse, out: &mut Vec<u8>) {
    if resp.status != Status::Ok {
        response_prefix(resp.status, resp.served_version, resp.shard_count, &resp.available_versions, out);
        return;
    }
    let mut values = ResponseValues::begin(resp.served_version, resp.shard_count, &resp.available_versions, resp.results.len(), out);
    for r in &resp.results {
        values.push(r.as_deref());
    }
    values.finish();
}

/// Streams the values of an OK response straight into the output buffer.
/// Exactly one value (or miss) must be pushed per key.
pub struct ResponseValues<'a> {
    out: &'a mut Vec<u8>,
    bitmap_at: usize,
    next: usize,
    key_count: usize,
}

impl<'a> ResponseValues<'a> {
    pub fn begin(served_version: u64, shard_count: u32, available_versions: &[u64], key_count: usize, out: &'a mut Vec<u8>) -> Self {
        response_prefix(Status::Ok, served_version, shard_count, available_versions, out);
        let bitmap_at = out.len();
        out.resize(bitmap_at + key_count.div_ceil(8), 0);
        ResponseValues {
            out,
            bitmap_at,
            next: 0,
            key_count,
        }
    }

    pub fn push(&mut self, value: Option<&[u8]>) {
        assert!(self.next < self.key_count, "more values than keys");
        if let Some(v) = value {
            self.out[self.bitmap_at + self.next / 8] |= 1 << (self.next % 8);
            self.out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            self.out.extend_from_slice(v);
        }
        self.next += 1;
    }

    pub fn finish(self) {
        assert_eq!(self.next, self.key_count, "fewer values than keys");
    }
}

/// Decodes a batch response to a request of `key_count` keys.
pub fn decode_response(body: &[u8], key_count: usize) -> Result<BatchResponse, WireError> {
    let mut r = Reader::new(body);
    match r.header()? {
        MSG_RESPONSE => {}
        t => return Err(WireError::UnexpectedType(t)),
    }
    let status_byte = r.u8()?;
    let status = Status::from_u8(status_byte).ok_or(WireError::BadStatus(status_byte))?;
    let served_version = r.u64()?;
    let shard_count = r.u32()?;
    let m = r.u8()? as usize;
    let available_versions = (0..m).map(|_| r.u64()).collect::<Result<_, _>>()?;
    let mut results = Vec::new();
    if status == Status::Ok {
        let bitmap = r.take(key_count.div_ceil(8))?;
        results.reserve(key_count);
        for i in 0..key_count {
            results.push(if bitmap[i / 8] >> (i % 8) & 1 == 1 {
                let len = r.u32()? as usize;
                Some(r.take(len)?.to_vec())
            } else {
                None
            });
        }
        if !key_count.is_multiple_of(8) && bitmap[key_count / 8] >> (key_count % 8) != 0 {
            return Err(WireError::BadBitmap);
        }
    }
    r.finish()?;
    Ok(BatchResponse {
        status,
        served_version,
        shard_count,
        available_versions,
        results,
    })
}

pub fn encode_health_request(out: &mut Vec<u8>) {
    header(out, MSG_HEALTH_REQUEST);
}

pub fn encode_health_response(text: &str, out: &mut Vec<u8>) {
    header(out, MSG_HEALTH_RESPONSE);
    out.extend_from_slice(text.as_bytes());
}

pub fn encode_activate_request(path: &str, out: &mut Vec<u8>) {
    header(out, MSG_ACTIVATE_REQUEST);
    out.extend_from_slice(path.as_bytes());
}

pub fn encode_retire_request(version: u64, out: &mut Vec<u8>) {
    header(out, MSG_RETIRE_REQUEST);
    out.extend_from_slice(&version.to_le_bytes());
}

pub fn encode_admin_reply(msg_type: u8, reply: &AdminReply, out: &mut Vec<u8>) {
    header(out, msg_type);
    out.push(reply.ok as u8);
    out.extend_from_slice(&reply.version.to_le_bytes());
    out.extend_from_slice(reply.message.as_bytes());
}

fn text(b: &[u8]) -> Result<String, WireError> {
    String::from_utf8(b.to_vec()).map_err(|_| WireError::BadText)
}

fn admin_reply(r: &mut Reader<'_>) -> Result<AdminReply, WireError> {
    Ok(AdminReply {
        ok: r.u8()? != 0,
        version: r.u64()?,
        message: text(r.rest())?,
    })
}

/// Decodes any message body. Batch responses are only checked for magic
/// and type; decode them with [`decode_response`].
pub fn decode_message(body: &[u8]) -> Result<Message, WireError> {
    let mut r = Reader::new(body);
    let msg = match r.header()? {
        MSG_REQUEST => Message::Request(request_body(&mut r)?),
        MSG_RESPONSE => Message::Response(body.to_vec()),
        MSG_HEALTH_REQUEST => Message::HealthRequest,
        MSG_HEALTH_RESPONSE => Message::HealthResponse(text(r.rest())?),
        MSG_ACTIVATE_REQUEST => Message::ActivateRequest(text(r.rest())?),
        MSG_ACTIVATE_RESPONSE => Message::ActivateResponse(admin_reply(&mut r)?),
        MSG_RETIRE_REQUEST => Message::RetireRequest(r.u64()?),
        MSG_RETIRE_RESPONSE => Message::RetireResponse(admin_reply(&mut r)?),
        t => return Err(WireError::UnexpectedType(t)),
    };
    if !matches!(msg, Message::Response(_)) {
        r.finish()?;
    }
    Ok(msg)
}

/// Prepends the 4-byte length to an encoded body.
pub fn frame(body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
    out
}

/// Splits one frame off the front of `buf`: `Ok(None)` if more bytes are
/// needed, otherwise the body and the total bytes consumed.
pub fn split_frame(buf: &[u8]) -> Result<Option<(&[u8], usize)>, WireError> {
    let Some(len) = buf.get(..4) else {
        return Ok(None);
    };
    let len = u32::from_le_bytes(len.try_into().unwrap()) as usize;
    if len > MAX_FRAME {
        return Err(WireError::FrameTooLarge(len));
    }
    Ok(buf.get(4..4 + len).map(|b| (b, 4 + len)))
}
