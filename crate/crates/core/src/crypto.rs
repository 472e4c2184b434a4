//! Hashing, signing and node identity.

use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// A SHA-256 value, rendered as 64 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }

    /// Number of leading zero bits, used as the proof-of-work measure.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut bits = 0;
        for byte in self.0 {
            if byte == 0 {
                bits += 8;
            } else {
                bits += byte.leading_zeros();
                break;
            }
        }
        bits
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid digest: {0}")]
pub struct DigestParseError(String);

impl FromStr for Digest {
    type Err = DigestParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 64 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(DigestParseError(s.to_string()));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| DigestParseError(s.to_string()))?;
        Ok(Digest(out))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// SHA-256 of `bytes`.
pub fn digest(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerificationError {
    #[error("malformed public key")]
    MalformedKey,
    #[error("malformed signature")]
    MalformedSignature,
    #[error("signature does not verify")]
    BadSignature,
}

/// An Ed25519 verifying key; base64 on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn to_base64(&self) -> String {
        B64.encode(self.0)
    }

    pub fn from_base64(s: &str) -> Result<Self, VerificationError> {
        let raw = B64.decode(s).map_err(|_| VerificationError::MalformedKey)?;
        let bytes: [u8; 32] = raw.try_into().map_err(|_| VerificationError::MalformedKey)?;
        Ok(PublicKey(bytes))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_base64())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_base64())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        PublicKey::from_base64(&s).map_err(serde::de::Error::custom)
    }
}

/// Raw 64-byte Ed25519 signature; base64 on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);

impl Signature {
    pub fn to_base64(&self) -> String {
        B64.encode(self.0)
    }

    pub fn from_base64(s: &str) -> Result<Self, VerificationError> {
        let raw = B64.decode(s).map_err(|_| VerificationError::MalformedSignature)?;
        Self::from_slice(&raw)
    }

    pub fn from_slice(raw: &[u8]) -> Result<Self, VerificationError> {
        let bytes: [u8; 64] = raw.try_into().map_err(|_| VerificationError::MalformedSignature)?;
        Ok(Signature(bytes))
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..6]))
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_base64())
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Signature::from_base64(&s).map_err(serde::de::Error::custom)
    }
}

/// A node's name, signing key and network address.
#[derive(Clone)]
pub struct NodeIdentity {
    pub name: String,
    pub address: String,
    key: SigningKey,
}

impl NodeIdentity {
    pub fn from_seed(name: impl Into<String>, address: impl Into<String>, seed: [u8; 32]) -> Self {
        Self { name: name.into(), address: address.into(), key: SigningKey::from_bytes(&seed) }
    }

    pub fn generate<R: rand::RngCore + rand::CryptoRng>(
        name: impl Into<String>,
        address: impl Into<String>,
        rng: &mut R,
    ) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(name, address, seed)
    }

    /// Deterministic identity for simulations and fixtures.
    pub fn for_name(name: &str) -> Self {
        let seed = digest(format!("chainflow-test-key:{name}").as_bytes()).0;
        Self::from_seed(name, format!("sim://{name}"), seed)
    }

    pub fn seed(&self) -> [u8; 32] {
        self.key.to_bytes()
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.key.verifying_key().to_bytes())
    }

    pub fn sign(&self, bytes: &[u8]) -> Signature {
        Signature(self.key.sign(bytes).to_bytes())
    }
}

impl fmt::Debug for NodeIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NodeIdentity")
            .field("name", &self.name)
            .field("address", &self.address)
            .field("public_key", &self.public_key())
            .finish()
    }
}

/// Checks `signature` over `bytes`; malformed inputs are errors, never panics.
pub fn try_verify(key: &PublicKey, bytes: &[u8], signature: &Signature) -> Result<(), VerificationError> {
    let vk = VerifyingKey::from_bytes(&key.0).map_err(|_| VerificationError::MalformedKey)?;
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    vk.verify(bytes, &sig).map_err(|_| VerificationError::BadSignature)
}

pub fn verify(key: &PublicKey, bytes: &[u8], signature: &Signature) -> bool {
    try_verify(key, bytes, signature).is_ok()
}

/// Canonical payload bytes plus the signer's name and signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedEnvelope {
    pub payload: Vec<u8>,
    pub signer: String,
    pub signature: Signature,
}

impl SignedEnvelope {
    pub fn seal(identity: &NodeIdentity, payload: Vec<u8>) -> Self {
        let signature = identity.sign(&payload);
        Self { payload, signer: identity.name.clone(), signature }
    }

    pub fn verify(&self, key: &PublicKey) -> Result<(), VerificationError> {
        try_verify(key, &self.payload, &self.signature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_input_vector() {
        assert_eq!(
            digest(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn single_bit_flips_change_digest() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let len = rng.gen_range(1..200);
            let mut data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let before = digest(&data);
            assert_eq!(before, digest(&data));
            let bit = rng.gen_range(0..len * 8);
            data[bit / 8] ^= 1 << (bit % 8);
            assert_ne!(before, digest(&data));
        }
    }

    #[test]
    fn digest_hex_round_trip_and_case() {
        let d = digest(b"abc");
        assert_eq!(d.to_hex().parse::<Digest>().unwrap(), d);
        assert!(d.to_hex().to_uppercase().parse::<Digest>().is_err());
        assert!("abc".parse::<Digest>().is_err());
    }

    #[test]
    fn leading_zero_bits() {
        let mut d = [0u8; 32];
        d[0] = 0;
        d[1] = 0b0001_0000;
        assert_eq!(Digest(d).leading_zero_bits(), 11);
        assert_eq!(Digest::ZERO.leading_zero_bits(), 256);
        assert_eq!(Digest([0xff; 32]).leading_zero_bits(), 0);
    }

    #[test]
    fn sign_verify_round_trip() {
        let id = NodeIdentity::for_name("n1");
        let msg = b"fire transition A";
        let sig = id.sign(msg);
        assert!(verify(&id.public_key(), msg, &sig));
    }

    #[test]
    fn altered_message_or_wrong_key_rejected() {
        let id = NodeIdentity::for_name("n1");
        let other = NodeIdentity::for_name("n2");
        let msg = b"fire transition A".to_vec();
        let sig = id.sign(&msg);
        let mut altered = msg.clone();
        altered[0] ^= 1;
        assert!(!verify(&id.public_key(), &altered, &sig));
        assert!(!verify(&other.public_key(), &msg, &sig));
    }

    #[test]
    fn malformed_inputs_are_errors() {
        assert_eq!(PublicKey::from_base64("AAAA"), Err(VerificationError::MalformedKey));
        assert_eq!(Signature::from_base64("!!"), Err(VerificationError::MalformedSignature));
        assert_eq!(Signature::from_slice(&[0u8; 10]), Err(VerificationError::MalformedSignature));
    }

    #[test]
    fn envelope_seal_and_verify() {
        let id = NodeIdentity::for_name("n1");
        let env = SignedEnvelope::seal(&id, b"{}".to_vec());
        assert_eq!(env.signer, "n1");
        assert!(env.verify(&id.public_key()).is_ok());
        let mut tampered = env.clone();
        tampered.payload.push(b' ');
        assert_eq!(tampered.verify(&id.public_key()), Err(VerificationError::BadSignature));
    }
}
