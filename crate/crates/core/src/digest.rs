use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a value's compact JSON form. Callers must only pass types whose
/// serialization is order-stable (structs, `BTreeMap`, `Vec`).
pub fn json_digest<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes to JSON");
    sha256_hex(&bytes)
}

/// Short, path-safe identifier derived from a digest.
pub fn short_id(prefix: &str, digest: &str) -> String {
    format!("{prefix}-{}", &digest[..16.min(digest.len())])
}
