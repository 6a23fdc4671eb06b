//! 64-bit cell encoding shared by every K-CAS managed word.
//!
//! The low two bits carry a type tag, the upper 62 bits the payload. A
//! payload is either a plain value or a reference to a per-thread descriptor
//! (thread slot plus sequence stamp).

use std::fmt;

use crate::error::KcasError;

pub(crate) const TAG_BITS: u32 = 2;
const TAG_MASK: u64 = (1 << TAG_BITS) - 1;

/// Largest payload a word can carry.
pub const MAX_PAYLOAD: u64 = (1 << 62) - 1;

/// Bits of a descriptor reference payload that hold the owning thread slot.
pub(crate) const SLOT_BITS: u32 = 10;
/// Maximum number of threads that can hold a descriptor slot at once.
pub const MAX_THREADS: usize = 1 << SLOT_BITS;
pub(crate) const SEQ_BITS: u32 = 62 - SLOT_BITS;
pub(crate) const SEQ_MASK: u64 = (1 << SEQ_BITS) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Tag {
    Value = 0b00,
    KcasRef = 0b01,
    RdcssRef = 0b10,
}

/// A raw 64-bit table or timestamp cell.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaggedWord(u64);

impl TaggedWord {
    /// The all-zero word: tag `Value`, payload 0.
    pub const ZERO: TaggedWord = TaggedWord(0);

    /// Encodes a plain value. Fails if `v` does not fit in 62 bits.
    pub fn value(v: u64) -> Result<Self, KcasError> {
        if v > MAX_PAYLOAD {
            return Err(KcasError::ValueOutOfRange(v));
        }
        Ok(TaggedWord(v << TAG_BITS))
    }

    /// Reinterprets a raw cell. Tag `11` is never produced and is rejected.
    pub fn from_raw(raw: u64) -> Result<Self, KcasError> {
        if raw & TAG_MASK == TAG_MASK {
            return Err(KcasError::InvalidTag(raw));
        }
        Ok(TaggedWord(raw))
    }

    #[inline]
    pub(crate) const fn from_raw_unchecked(raw: u64) -> Self {
        TaggedWord(raw)
    }

    #[inline]
    pub const fn raw(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn tag(self) -> Tag {
        match self.0 & TAG_MASK {
            0b00 => Tag::Value,
            0b01 => Tag::KcasRef,
            0b10 => Tag::RdcssRef,
            _ => unreachable!("tag 11 is never constructed"),
        }
    }

    #[inline]
    pub const fn payload(self) -> u64 {
        self.0 >> TAG_BITS
    }

    #[inline]
    pub const fn is_value(self) -> bool {
        self.0 & TAG_MASK == 0
    }

    #[inline]
    pub fn as_value(self) -> Option<u64> {
        self.is_value().then_some(self.payload())
    }

    #[inline]
    pub(crate) fn descriptor(tag: Tag, r: DescRef) -> Self {
        debug_assert!(tag != Tag::Value);
        TaggedWord((r.pack() << TAG_BITS) | tag as u64)
    }

    #[inline]
    pub(crate) fn desc_ref(self) -> DescRef {
        DescRef::unpack(self.payload())
    }
}

impl fmt::Debug for TaggedWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tag() {
            Tag::Value => write!(f, "Value({})", self.payload()),
            Tag::KcasRef => write!(f, "KcasRef({:?})", self.desc_ref()),
            Tag::RdcssRef => write!(f, "RdcssRef({:?})", self.desc_ref()),
        }
    }
}

/// Identifies one use of a reusable descriptor: the owning slot and the
/// sequence stamp it had when the reference was published.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DescRef {
    pub slot: usize,
    pub seq: u64,
}

impl DescRef {
    fn pack(self) -> u64 {
        debug_assert!(self.slot < MAX_THREADS);
        ((self.seq & SEQ_MASK) << SLOT_BITS) | self.slot as u64
    }

    fn unpack(payload: u64) -> Self {
        DescRef {
            slot: (payload & (MAX_THREADS as u64 - 1)) as usize,
            seq: payload >> SLOT_BITS,
        }
    }
}
