//! Golden files produced by independent tools (Python `json` + `hashlib`,
//! and the `cryptography` package's Ed25519) and frozen in `tests/golden`.

use std::fs;
use std::path::PathBuf;

use chainflow_core::canon::canonical_bytes;
use chainflow_core::crypto::{digest, try_verify, NodeIdentity, PublicKey, Signature};
use chainflow_core::testkit::ExampleChain;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn read(name: &str) -> String {
    fs::read_to_string(golden(name)).unwrap_or_else(|e| panic!("{name}: {e}")).trim().to_string()
}

/// Regenerates the pretty-printed input given to the oracle script.
#[test]
#[ignore]
fn write_fixture_block() {
    let chain = ExampleChain::build(8);
    let pretty = serde_json::to_string_pretty(chain.block("1")).unwrap();
    fs::write(golden("f1_block.pretty.json"), pretty).unwrap();
}

#[test]
fn fixture_block_matches_external_canonicalization() {
    let chain = ExampleChain::build(8);
    let block = chain.block("1");
    let pretty: serde_json::Value = serde_json::from_str(&read("f1_block.pretty.json")).unwrap();
    assert_eq!(serde_json::to_value(block).unwrap(), pretty, "fixture drifted from the frozen input");

    let ours = canonical_bytes(block).unwrap();
    assert_eq!(String::from_utf8(ours.clone()).unwrap(), read("f1_block.canonical.json"));
    assert_eq!(digest(&ours).to_hex(), read("f1_block.sha256"));
    assert_eq!(block.block_hash.to_hex(), read("f1_block_content.sha256"));
}

#[test]
fn ed25519_vector_from_independent_implementation() {
    let lines: Vec<String> = read("ed25519_vector.txt").lines().map(str::to_string).collect();
    let field = |k: &str| {
        let line = lines.iter().find(|l| l.starts_with(&format!("{k}="))).unwrap();
        hex::decode(&line[k.len() + 1..]).unwrap()
    };
    let seed: [u8; 32] = field("seed").try_into().unwrap();
    let public: [u8; 32] = field("public").try_into().unwrap();
    let message = field("message");
    let sig = Signature::from_slice(&field("signature")).unwrap();

    let id = NodeIdentity::from_seed("oracle", "", seed);
    assert_eq!(id.public_key(), PublicKey(public));
    assert_eq!(id.sign(&message), sig, "Ed25519 signatures are deterministic");
    assert!(try_verify(&PublicKey(public), &message, &sig).is_ok());
    let mut altered = message.clone();
    altered[0] ^= 1;
    assert!(try_verify(&PublicKey(public), &altered, &sig).is_err());
}
