//! Byte-level tokenizer with atomic template markers.
//!
//! Ids 0..=255 are raw bytes. The template markers are recognised in text by
//! their glyphs and always map to a single reserved id. `[BOS]`, `[EOS]` and
//! `[PAD]` are never produced from text; the encoder wrapper inserts them.

use crate::error::{Error, Result};

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const PAD: u32 = 258;
pub const INSTRUCT: u32 = 259;
pub const QUERY: u32 = 260;
pub const RESPONSE: u32 = 261;

/// Byte alphabet plus the six reserved ids.
pub const VOCAB_SIZE: usize = 262;

pub const INSTRUCT_GLYPH: &str = "⟨Instruct⟩";
pub const QUERY_GLYPH: &str = "⟨query⟩";
pub const RESPONSE_GLYPH: &str = "⟨response⟩";

const MARKERS: [(&str, u32); 3] = [
    (INSTRUCT_GLYPH, INSTRUCT),
    (QUERY_GLYPH, QUERY),
    (RESPONSE_GLYPH, RESPONSE),
];

pub fn is_special(id: u32) -> bool {
    id >= 256
}

pub fn is_marker(id: u32) -> bool {
    matches!(id, INSTRUCT | QUERY | RESPONSE)
}

/// Printable form of a reserved id.
pub fn special_glyph(id: u32) -> Option<&'static str> {
    match id {
        BOS => Some("[BOS]"),
        EOS => Some("[EOS]"),
        PAD => Some("[PAD]"),
        INSTRUCT => Some(INSTRUCT_GLYPH),
        QUERY => Some(QUERY_GLYPH),
        RESPONSE => Some(RESPONSE_GLYPH),
        _ => None,
    }
}

/// Token ids with a parallel padding mask (`true` = padding).
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub pad_mask: Vec<bool>,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>) -> Self {
        let pad_mask = ids.iter().map(|&id| id == PAD).collect();
        Self { ids, pad_mask }
    }

    pub fn with_mask(ids: Vec<u32>, pad_mask: Vec<bool>) -> Result<Self> {
        if ids.len() != pad_mask.len() {
            return Err(Error::shape("pad mask length differs from ids"));
        }
        Ok(Self { ids, pad_mask })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn last_non_pad(&self) -> Option<usize> {
        self.pad_mask.iter().rposition(|&p| !p)
    }

    /// `[BOS] ids [EOS]`, the form every encoder input takes.
    pub fn wrap_for_encoder(&self) -> Self {
        let mut ids = Vec::with_capacity(self.ids.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(&self.ids);
        ids.push(EOS);
        let mut pad_mask = Vec::with_capacity(ids.len());
        pad_mask.push(false);
        pad_mask.extend_from_slice(&self.pad_mask);
        pad_mask.push(false);
        Self { ids, pad_mask }
    }

    /// Right-pads to `len` with `[PAD]`.
    pub fn padded_to(&self, len: usize) -> Self {
        let mut out = self.clone();
        while out.ids.len() < len {
            out.ids.push(PAD);
            out.pad_mask.push(true);
        }
        out
    }
}

pub fn tokenize(text: &str) -> TokenSeq {
    tokenize_bytes(text.as_bytes())
}

pub fn tokenize_bytes(bytes: &[u8]) -> TokenSeq {
    let mut ids = Vec::with_capacity(bytes.len());
    let mut i = 0;
    'outer: while i < bytes.len() {
        // Every glyph starts with the multi-byte bracket, so ASCII skips the scan.
        if bytes[i] >= 0x80 {
            for (glyph, id) in MARKERS {
                if bytes[i..].starts_with(glyph.as_bytes()) {
                    ids.push(id);
                    i += glyph.len();
                    continue 'outer;
                }
            }
        }
        ids.push(bytes[i] as u32);
        i += 1;
    }
    TokenSeq {
        pad_mask: vec![false; ids.len()],
        ids,
    }
}

pub fn detokenize_bytes(seq: &TokenSeq) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(seq.ids.len());
    for &id in &seq.ids {
        if id < 256 {
            out.push(id as u8);
        } else if let Some(glyph) = special_glyph(id) {
            out.extend_from_slice(glyph.as_bytes());
        } else {
            return Err(Error::Vocab {
                id,
                vocab_size: VOCAB_SIZE,
            });
        }
    }
    Ok(out)
}

pub fn detokenize(seq: &TokenSeq) -> Result<String> {
    let bytes = detokenize_bytes(seq)?;
    String::from_utf8(bytes).map_err(|e| Error::Data(format!("detokenized bytes are not UTF-8: {e}")))
}

/// Largest `n <= want` such that cutting `field` after `n` tokens does not
/// split a multi-byte UTF-8 character.
pub fn char_safe_cut(field: &[u32], want: usize) -> usize {
    let mut n = want.min(field.len());
    while n > 0 && n < field.len() && (0x80..0xC0).contains(&field[n]) {
        n -= 1;
    }
    n
}
