/// Number of bits in the chain-offset code.
pub const OFFSET_BITS: u32 = 12;
/// Number of payload bits.
pub const PAYLOAD_BITS: u32 = 64 - OFFSET_BITS;
/// Largest representable payload plus one.
pub const PAYLOAD_LIMIT: u64 = 1 << PAYLOAD_BITS;
pub const PAYLOAD_MASK: u64 = PAYLOAD_LIMIT - 1;
/// Most negative encodable chain offset.
pub const MIN_OFFSET: isize = -2047;
/// Most positive encodable chain offset.
pub const MAX_OFFSET: isize = 2048;

/// A value word: 12-bit chain offset code in bits 63..52, payload in 51..0.
///
/// Code 0 terminates the chain. Codes `1..=2048` decode to the same positive
/// offset, codes `2049..=4095` decode to `code - 4096` (i.e. `-2047..=-1`).
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct PackedSlot(u64);

impl PackedSlot {
    pub const EMPTY: PackedSlot = PackedSlot(0);

    /// Packs a code and a payload. The payload is truncated to 52 bits.
    #[inline]
    pub const fn new(offset_code: u16, payload: u64) -> Self {
        PackedSlot(((offset_code as u64 & 0xfff) << PAYLOAD_BITS) | (payload & PAYLOAD_MASK))
    }

    #[inline]
    pub const fn from_raw(raw: u64) -> Self {
        PackedSlot(raw)
    }

    #[inline]
    pub const fn raw(self) -> u64 {
        self.0
    }

    #[inline(always)]
    pub const fn offset_code(self) -> u16 {
        (self.0 >> PAYLOAD_BITS) as u16
    }

    #[inline(always)]
    pub const fn payload(self) -> u64 {
        self.0 & PAYLOAD_MASK
    }

    /// Relative bucket offset to the next chain node, if any.
    #[inline(always)]
    pub const fn offset(self) -> Option<isize> {
        match self.offset_code() {
            0 => None,
            code => Some(decode_offset(code)),
        }
    }

    #[inline]
    pub const fn with_payload(self, payload: u64) -> Self {
        PackedSlot((self.0 & !PAYLOAD_MASK) | (payload & PAYLOAD_MASK))
    }

    #[inline]
    pub const fn with_code(self, offset_code: u16) -> Self {
        PackedSlot::new(offset_code, self.payload())
    }
}

impl std::fmt::Debug for PackedSlot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PackedSlot")
            .field("offset", &self.offset())
            .field("payload", &self.payload())
            .finish()
    }
}

/// Decodes a nonzero offset code.
#[inline(always)]
pub const fn decode_offset(code: u16) -> isize {
    let c = code as isize;
    if c > MAX_OFFSET {
        c - 4096
    } else {
        c
    }
}

/// Encodes a relative offset, or `None` if it is zero or out of range.
#[inline]
pub const fn encode_offset(offset: isize) -> Option<u16> {
    if offset == 0 || offset < MIN_OFFSET || offset > MAX_OFFSET {
        None
    } else if offset > 0 {
        Some(offset as u16)
    } else {
        Some((offset + 4096) as u16)
    }
}
