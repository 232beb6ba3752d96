//! Byte-level tokenizer. Ids `0..=255` are raw bytes; two reserved ids past
//! the byte range separate prompt from completion and end a completion.

use crate::error::{Error, Result};

pub const BYTE_VOCAB: usize = 256;
pub const SEP: usize = 256;
pub const EOS: usize = 257;
pub const VOCAB_SIZE: usize = 258;

pub fn encode_bytes(bytes: &[u8]) -> Vec<usize> {
    bytes.iter().map(|&b| b as usize).collect()
}

pub fn tokenize(text: &str) -> Vec<usize> {
    encode_bytes(text.as_bytes())
}

/// Inverse of [`encode_bytes`]. Reserved ids are not payload.
pub fn decode_bytes(ids: &[usize]) -> Result<Vec<u8>> {
    ids.iter()
        .map(|&id| match id {
            0..=255 => Ok(id as u8),
            SEP | EOS => Err(Error::Encoding(format!("reserved id {id} inside payload"))),
            _ => Err(Error::Encoding(format!("id {id} outside the byte vocabulary"))),
        })
        .collect()
}

pub fn detokenize(ids: &[usize]) -> Result<String> {
    String::from_utf8(decode_bytes(ids)?)
        .map_err(|e| Error::Encoding(format!("decoded bytes are not UTF-8: {e}")))
}

/// `prompt` bytes followed by the separator.
pub fn prompt_ids(prompt: &str) -> Vec<usize> {
    let mut ids = tokenize(prompt);
    ids.push(SEP);
    ids
}

/// `completion` bytes followed by end-of-sequence.
pub fn completion_ids(completion: &str) -> Vec<usize> {
    let mut ids = tokenize(completion);
    ids.push(EOS);
    ids
}
