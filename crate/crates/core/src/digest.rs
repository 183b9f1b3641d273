use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Canonical JSON: object keys sorted, no insignificant whitespace.
///
/// `serde_json::Value` keeps objects in a `BTreeMap`, so a round trip through
/// `Value` sorts every nested key.
pub fn canonical_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    serde_json::to_string(&value)
}

pub fn digest_json<T: Serialize>(value: &T) -> String {
    let canonical = canonical_json(value).expect("serializable value");
    sha256_hex(canonical.as_bytes())
}
