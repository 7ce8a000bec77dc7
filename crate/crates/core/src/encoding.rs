//! Residue alphabet, fixed-length sequence encoding and label vectors.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The 20 standard amino acids followed by the six IUPAC extensions.
pub const DEFAULT_SYMBOLS: &str = "ACDEFGHIKLMNPQRSTVWYBJOUXZ";
pub const ALPHABET_SIZE: usize = 26;
pub const DEFAULT_MAX_LEN: usize = 1000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Alphabet {
    symbols: Vec<u8>,
    index_of: [u8; 256],
}

const NOT_IN_ALPHABET: u8 = u8::MAX;

impl Alphabet {
    pub fn new(symbols: &str) -> Result<Self> {
        let bytes = symbols.as_bytes();
        if bytes.len() != ALPHABET_SIZE || !bytes.iter().all(u8::is_ascii_uppercase) {
            return Err(Error::Config(format!(
                "alphabet must be {ALPHABET_SIZE} uppercase ASCII letters, got {symbols:?}"
            )));
        }
        let mut index_of = [NOT_IN_ALPHABET; 256];
        for (i, &b) in bytes.iter().enumerate() {
            if index_of[b as usize] != NOT_IN_ALPHABET {
                return Err(Error::Config(format!(
                    "alphabet symbol {:?} repeated",
                    b as char
                )));
            }
            index_of[b as usize] = i as u8;
        }
        Ok(Alphabet {
            symbols: bytes.to_vec(),
            index_of,
        })
    }

    pub fn symbols(&self) -> &str {
        std::str::from_utf8(&self.symbols).expect("ascii")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn pad_index(&self) -> u8 {
        self.symbols.len() as u8
    }

    /// Rows needed in an embedding table: every symbol plus padding.
    pub fn table_rows(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn index_of(&self, c: char) -> Option<u8> {
        if !c.is_ascii() {
            return None;
        }
        match self.index_of[c as usize] {
            NOT_IN_ALPHABET => None,
            i => Some(i),
        }
    }

    pub fn symbol(&self, index: u8) -> Option<char> {
        self.symbols.get(index as usize).map(|&b| b as char)
    }

    pub fn contains_all(&self, seq: &str) -> bool {
        seq.chars().all(|c| self.index_of(c).is_some())
    }

    /// First 16 hex digits of SHA-256 over the symbol string.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(&self.symbols);
        hex::encode(&digest[..8])
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Alphabet::new(DEFAULT_SYMBOLS).expect("default alphabet is valid")
    }
}

impl TryFrom<String> for Alphabet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Alphabet::new(&s)
    }
}

impl From<Alphabet> for String {
    fn from(a: Alphabet) -> String {
        a.symbols().to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSequence {
    pub indices: Vec<u8>,
    pub mask: Vec<u8>,
    pub true_length: usize,
}

impl EncodedSequence {
    pub fn max_len(&self) -> usize {
        self.indices.len()
    }

    /// Inverse table lookup over the unpadded positions.
    pub fn decode(&self, alphabet: &Alphabet) -> String {
        self.indices
            .iter()
            .zip(&self.mask)
            .take_while(|(_, &m)| m == 1)
            .map(|(&i, _)| alphabet.symbol(i).expect("encoded index in range"))
            .collect()
    }
}

/// Keeps the N-terminal `max_len` residues and right-pads the rest.
pub fn encode_sequence(seq: &str, alphabet: &Alphabet, max_len: usize) -> Result<EncodedSequence> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    if seq.is_empty() {
        return Err(Error::Ingestion("empty sequence".into()));
    }
    let mut indices = vec![alphabet.pad_index(); max_len];
    let mut mask = vec![0u8; max_len];
    let mut true_length = 0;
    for (position, c) in seq.chars().enumerate() {
        let idx = alphabet
            .index_of(c)
            .ok_or(Error::Encoding { position, character: c })?;
        if position < max_len {
            indices[position] = idx;
            mask[position] = 1;
        }
        true_length += 1;
    }
    Ok(EncodedSequence {
        indices,
        mask,
        true_length,
    })
}

/// `max_len × alphabet.len()` row-major matrix; padded rows are all zero.
pub fn one_hot(enc: &EncodedSequence, alphabet: &Alphabet) -> Vec<Vec<f32>> {
    enc.indices
        .iter()
        .zip(&enc.mask)
        .map(|(&i, &m)| {
            let mut row = vec![0.0; alphabet.len()];
            if m == 1 {
                row[i as usize] = 1.0;
            }
            row
        })
        .collect()
}

pub fn encode_labels(indices: &BTreeSet<usize>, size: usize) -> Result<Vec<u8>> {
    let mut out = vec![0u8; size];
    for &i in indices {
        if i >= size {
            return Err(Error::LabelRange { index: i, size });
        }
        out[i] = 1;
    }
    Ok(out)
}

pub fn decode_labels(vector: &[u8]) -> BTreeSet<usize> {
    vector
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(i, _)| i)
        .collect()
}
