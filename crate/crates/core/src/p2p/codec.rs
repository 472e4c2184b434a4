use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use thiserror::Error;

use super::Message;
use crate::canon::{canonical_json_bytes, CanonicalizationError};
use crate::crypto::{try_verify, Digest, NodeIdentity, PublicKey, Signature};

/// Largest accepted frame body.
pub const MAX_FRAME: usize = 16 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("frame is truncated")]
    Truncated,
    #[error("frame of {0} bytes exceeds the limit")]
    Oversize(usize),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("unknown sender `{0}`")]
    UnknownSender(String),
    #[error("signature does not verify")]
    BadSignature,
    #[error("cannot encode: {0}")]
    Encode(#[from] CanonicalizationError),
}

/// A decoded, signature-checked message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedMessage {
    pub sender: String,
    pub message: Message,
    pub signature: Signature,
}

fn signing_bytes(kind: &str, sender: &str, payload: &Json) -> Result<Vec<u8>, CanonicalizationError> {
    canonical_json_bytes(&json!({"type": kind, "sender": sender, "payload": payload}))
}

fn split(message: &Message) -> Result<(String, Json), ProtocolError> {
    let mut v = serde_json::to_value(message).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let obj = v.as_object_mut().ok_or_else(|| ProtocolError::Malformed("not an object".into()))?;
    let kind = obj.remove("type").and_then(|t| t.as_str().map(str::to_string)).unwrap_or_default();
    let payload = obj.remove("payload").unwrap_or_else(|| json!({}));
    Ok((kind, payload))
}

/// Canonical body `{payload, sender, signature, type}` without the length prefix.
pub fn frame_body(message: &Message, identity: &NodeIdentity) -> Result<Vec<u8>, ProtocolError> {
    let (kind, payload) = split(message)?;
    let signature = identity.sign(&signing_bytes(&kind, &identity.name, &payload)?);
    let body = canonical_json_bytes(&json!({
        "type": kind,
        "sender": identity.name,
        "payload": payload,
        "signature": signature.to_base64(),
    }))?;
    if body.len() > MAX_FRAME {
        return Err(ProtocolError::Oversize(body.len()));
    }
    Ok(body)
}

/// Length-prefixed frame: 4-byte big-endian body length, then the body.
pub fn encode_message(message: &Message, identity: &NodeIdentity) -> Result<Vec<u8>, ProtocolError> {
    let body = frame_body(message, identity)?;
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Strictly parses and verifies a frame body. `key_of` resolves configured
/// senders; unknown senders are refused before the payload is examined.
pub fn decode_body(body: &[u8], key_of: impl Fn(&str) -> Option<PublicKey>) -> Result<SignedMessage, ProtocolError> {
    let v: Json = serde_json::from_slice(body).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let obj = v.as_object().ok_or_else(|| ProtocolError::Malformed("body is not an object".into()))?;
    if obj.len() != 4 || !["type", "sender", "payload", "signature"].iter().all(|k| obj.contains_key(*k)) {
        return Err(ProtocolError::Malformed("expected exactly type, sender, payload, signature".into()));
    }
    let field = |k: &str| obj[k].as_str().ok_or_else(|| ProtocolError::Malformed(format!("`{k}` must be a string")));
    let kind = field("type")?;
    let sender = field("sender")?;
    if !Message::TYPES.contains(&kind) {
        return Err(ProtocolError::UnknownType(kind.to_string()));
    }
    let signature = Signature::from_base64(field("signature")?).map_err(|_| ProtocolError::BadSignature)?;
    let key = key_of(sender).ok_or_else(|| ProtocolError::UnknownSender(sender.to_string()))?;
    let payload = &obj["payload"];
    let bytes = signing_bytes(kind, sender, payload)?;
    try_verify(&key, &bytes, &signature).map_err(|_| ProtocolError::BadSignature)?;
    let message: Message = serde_json::from_value(json!({"type": kind, "payload": payload}))
        .map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    Ok(SignedMessage { sender: sender.to_string(), message, signature })
}

/// Decodes exactly one complete frame.
pub fn decode_frame(frame: &[u8], key_of: impl Fn(&str) -> Option<PublicKey>) -> Result<SignedMessage, ProtocolError> {
    if frame.len() < 4 {
        return Err(ProtocolError::Truncated);
    }
    let len = u32::from_be_bytes(frame[..4].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME {
        return Err(ProtocolError::Oversize(len));
    }
    if frame.len() < 4 + len {
        return Err(ProtocolError::Truncated);
    }
    if frame.len() > 4 + len {
        return Err(ProtocolError::Malformed("trailing bytes after frame".into()));
    }
    decode_body(&frame[4..], key_of)
}

/// Incremental splitter for a byte stream of frames.
#[derive(Debug, Default)]
pub struct FrameReader {
    buf: Vec<u8>,
}

impl FrameReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame body, if buffered.
    pub fn next_body(&mut self) -> Result<Option<Vec<u8>>, ProtocolError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes(self.buf[..4].try_into().expect("4 bytes")) as usize;
        if len > MAX_FRAME {
            return Err(ProtocolError::Oversize(len));
        }
        if self.buf.len() < 4 + len {
            return Ok(None);
        }
        let body = self.buf[4..4 + len].to_vec();
        self.buf.drain(..4 + len);
        Ok(Some(body))
    }
}

/// Connection opener exchanged once per TCP connection, before any message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Handshake {
    pub network_id: String,
    pub genesis: Digest,
    pub node: String,
    pub protocol_version: u32,
    pub design: crate::engine::Design,
}

impl Handshake {
    pub const PROTOCOL_VERSION: u32 = 1;

    /// Framed and signed like a message, with type `Hello`.
    pub fn encode(&self, identity: &NodeIdentity) -> Result<Vec<u8>, ProtocolError> {
        let payload = serde_json::to_value(self).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let signature = identity.sign(&signing_bytes("Hello", &identity.name, &payload)?);
        let body = canonical_json_bytes(&json!({
            "type": "Hello", "sender": identity.name, "payload": payload, "signature": signature.to_base64(),
        }))?;
        let mut out = (body.len() as u32).to_be_bytes().to_vec();
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn decode(body: &[u8], key_of: impl Fn(&str) -> Option<PublicKey>) -> Result<Self, ProtocolError> {
        let v: Json = serde_json::from_slice(body).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let kind = v.get("type").and_then(Json::as_str).unwrap_or_default();
        if kind != "Hello" {
            return Err(ProtocolError::UnknownType(kind.to_string()));
        }
        let sender = v.get("sender").and_then(Json::as_str).ok_or_else(|| ProtocolError::Malformed("sender".into()))?;
        let sig = v.get("signature").and_then(Json::as_str).ok_or_else(|| ProtocolError::Malformed("signature".into()))?;
        let signature = Signature::from_base64(sig).map_err(|_| ProtocolError::BadSignature)?;
        let key = key_of(sender).ok_or_else(|| ProtocolError::UnknownSender(sender.to_string()))?;
        let payload = v.get("payload").cloned().unwrap_or(Json::Null);
        try_verify(&key, &signing_bytes("Hello", sender, &payload)?, &signature).map_err(|_| ProtocolError::BadSignature)?;
        let hello: Handshake = serde_json::from_value(payload).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        if hello.node != sender {
            return Err(ProtocolError::Malformed("handshake node differs from sender".into()));
        }
        Ok(hello)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Block;

    fn keys(name: &str) -> Option<PublicKey> {
        Some(NodeIdentity::for_name(name).public_key())
    }

    #[test]
    fn peers_request_body_shape() {
        let id = NodeIdentity::for_name("n1");
        let frame = encode_message(&Message::PeersRequest {}, &id).unwrap();
        let body = std::str::from_utf8(&frame[4..]).unwrap();
        assert!(body.starts_with(r#"{"payload":{},"sender":"n1","signature":""#), "{body}");
        assert!(body.ends_with(r#"","type":"PeersRequest"}"#));
        assert_eq!(u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize, frame.len() - 4);
    }

    #[test]
    fn round_trip_and_tamper() {
        let id = NodeIdentity::for_name("n1");
        let msg = Message::BlockSend { block: Block::genesis("x") };
        let frame = encode_message(&msg, &id).unwrap();
        let back = decode_frame(&frame, keys).unwrap();
        assert_eq!(back.message, msg);
        assert_eq!(back.sender, "n1");

        assert!(matches!(decode_frame(&frame[..frame.len() - 1], keys), Err(ProtocolError::Truncated)));
        let mut tampered = frame.clone();
        let pos = tampered.windows(6).position(|w| w == b"height").unwrap();
        tampered[pos + 8] = b'7';
        assert!(matches!(decode_frame(&tampered, keys), Err(ProtocolError::BadSignature)));
        assert!(matches!(decode_frame(&frame, |_| None), Err(ProtocolError::UnknownSender(_))));
    }

    #[test]
    fn unknown_type_is_refused() {
        let body = br#"{"payload":{},"sender":"n1","signature":"AA==","type":"Gossip"}"#;
        assert!(matches!(decode_body(body, keys), Err(ProtocolError::UnknownType(_))));
    }

    #[test]
    fn reader_splits_stream() {
        let id = NodeIdentity::for_name("n1");
        let a = encode_message(&Message::PeersRequest {}, &id).unwrap();
        let b = encode_message(&Message::TransactionPoolRequest {}, &id).unwrap();
        let mut r = FrameReader::new();
        let all = [a.clone(), b].concat();
        r.push(&all[..a.len() + 3]);
        assert!(r.next_body().unwrap().is_some());
        assert!(r.next_body().unwrap().is_none());
        r.push(&all[a.len() + 3..]);
        let body = r.next_body().unwrap().unwrap();
        assert_eq!(decode_body(&body, keys).unwrap().message, Message::TransactionPoolRequest {});
    }

    #[test]
    fn handshake_round_trip() {
        let id = NodeIdentity::for_name("n2");
        let h = Handshake {
            network_id: "net".into(),
            genesis: Block::genesis("net").block_hash,
            node: "n2".into(),
            protocol_version: Handshake::PROTOCOL_VERSION,
            design: crate::engine::Design::States,
        };
        let frame = h.encode(&id).unwrap();
        assert_eq!(Handshake::decode(&frame[4..], keys).unwrap(), h);
    }
}
