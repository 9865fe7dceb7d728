//! Canonical JSON serialization for signing.
//!
//! Signatures are computed over a deterministic byte form: JSON with
//! lexicographically sorted object keys, no insignificant whitespace, UTF-8.
//! `serde_json`'s default map is a BTreeMap, so converting any serializable
//! value to `serde_json::Value` and compact-printing it yields exactly that
//! form. Signed payloads carry a domain tag so a signature over one structure
//! type can never validate as another.

use serde::Serialize;
use serde_json::{json, Value};

/// Serialize to the canonical byte form (sorted keys, compact, UTF-8).
pub fn to_canonical_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("value serializes to JSON");
    serde_json::to_string(&v).expect("JSON value prints").into_bytes()
}

/// Bytes a signature covers: every field of `value` except `signature`,
/// wrapped with a structure-type domain tag.
pub fn signing_bytes<T: Serialize>(domain: &str, value: &T) -> Vec<u8> {
    let mut v = serde_json::to_value(value).expect("value serializes to JSON");
    if let Value::Object(map) = &mut v {
        map.remove("signature");
    }
    to_canonical_bytes(&json!({ "domain": domain, "payload": v }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Serialize;

    #[derive(Serialize)]
    struct Unordered {
        zebra: u32,
        alpha: &'static str,
        mid: Vec<u32>,
    }

    #[test]
    fn keys_are_sorted_and_compact() {
        let bytes = to_canonical_bytes(&Unordered { zebra: 1, alpha: "x", mid: vec![2, 3] });
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            r#"{"alpha":"x","mid":[2,3],"zebra":1}"#
        );
    }

    #[test]
    fn signing_bytes_exclude_signature_and_bind_domain() {
        #[derive(Serialize)]
        struct Signed {
            a: u32,
            signature: &'static str,
        }
        let one = signing_bytes("thing", &Signed { a: 1, signature: "xxx" });
        let two = signing_bytes("thing", &Signed { a: 1, signature: "yyy" });
        assert_eq!(one, two);
        let other_domain = signing_bytes("other", &Signed { a: 1, signature: "xxx" });
        assert_ne!(one, other_domain);
    }
}
