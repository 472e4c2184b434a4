//! Canonical JSON encoding.
//!
//! Every value that is hashed or signed goes through [`canonical_bytes`]:
//! object keys in byte-wise order, no insignificant whitespace, UTF-8, and
//! integers only. Decimal workflow values travel as strings, so a float in
//! the document is a programming error and is refused.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value as Json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CanonicalizationError {
    #[error("floating point number at {path} is not representable canonically")]
    Float { path: String },
    #[error("value is not representable as canonical JSON: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Encodes `value` as canonical JSON bytes.
pub fn canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalizationError> {
    let json = serde_json::to_value(value)?;
    canonical_json_bytes(&json)
}

/// Encodes an already-built JSON document.
///
/// `serde_json::Map` is ordered by `String`'s `Ord`, which for UTF-8 is the
/// byte-wise order we need; compact output supplies the rest.
pub fn canonical_json_bytes(json: &Json) -> Result<Vec<u8>, CanonicalizationError> {
    reject_floats(json, &mut String::from("$"))?;
    Ok(serde_json::to_vec(json)?)
}

/// Parses canonical bytes back into a typed value.
pub fn from_canonical<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, serde_json::Error> {
    serde_json::from_slice(bytes)
}

fn reject_floats(json: &Json, path: &mut String) -> Result<(), CanonicalizationError> {
    match json {
        Json::Number(n) if !(n.is_i64() || n.is_u64()) => {
            Err(CanonicalizationError::Float { path: path.clone() })
        }
        Json::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                let len = path.len();
                path.push_str(&format!("[{i}]"));
                reject_floats(item, path)?;
                path.truncate(len);
            }
            Ok(())
        }
        Json::Object(map) => {
            for (k, v) in map {
                let len = path.len();
                path.push('.');
                path.push_str(k);
                reject_floats(v, path)?;
                path.truncate(len);
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn empty_mapping() {
        let bytes = canonical_bytes(&json!({})).unwrap();
        assert_eq!(bytes, b"{}");
    }

    #[test]
    fn keys_sorted() {
        let bytes = canonical_bytes(&json!({"b": 1, "a": 2})).unwrap();
        assert_eq!(bytes, br#"{"a":2,"b":1}"#);
    }

    #[test]
    fn nested_keys_sorted_bytewise() {
        // 'Z' (0x5a) sorts before 'a' (0x61)
        let bytes = canonical_bytes(&json!({"x": {"a": [1, {"d": true, "Z": null}]}})).unwrap();
        assert_eq!(bytes, br#"{"x":{"a":[1,{"Z":null,"d":true}]}}"#);
    }

    #[test]
    fn floats_refused() {
        let err = canonical_bytes(&json!({"a": [1, 2.5]})).unwrap_err();
        match err {
            CanonicalizationError::Float { path } => assert_eq!(path, "$.a[1]"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_string_keys_refused() {
        let mut m = std::collections::BTreeMap::new();
        m.insert(vec![1u8], 1);
        assert!(canonical_bytes(&m).is_err());
    }

    #[test]
    fn large_integers_have_no_leading_zeros() {
        let bytes = canonical_bytes(&json!({"n": u64::MAX, "m": -7})).unwrap();
        assert_eq!(bytes, br#"{"m":-7,"n":18446744073709551615}"#);
    }
}
