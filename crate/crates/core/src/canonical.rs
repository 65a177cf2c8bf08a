//! Canonical text records: JSON with lexicographically sorted keys, no
//! insignificant whitespace, shortest round-trip float formatting.

use serde::Serialize;
use serde_json::Value;

/// Serializes `value` canonically. Object keys come out sorted because
/// `serde_json::Map` is a `BTreeMap` in this build.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

pub fn to_canonical_value<T: Serialize + ?Sized>(value: &T) -> Result<Value, serde_json::Error> {
    serde_json::to_value(value)
}
