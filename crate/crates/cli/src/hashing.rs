use serde::Serialize;
use sha2::{Digest, Sha256};

use factlab_core::microlm::Tokenizer;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a value's compact JSON form.
pub fn json_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serialisable"))
}

pub fn tokenizer_hash(tok: &Tokenizer) -> String {
    sha256_hex(tok.vocab().join("\n").as_bytes())
}
