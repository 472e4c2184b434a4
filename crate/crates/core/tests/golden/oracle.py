"""Independent oracle for the golden files.

Canonical form: keys sorted, no whitespace, UTF-8. Digests via hashlib.
Ed25519 vector via the `cryptography` package.
"""
import hashlib
import json
import pathlib

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives import serialization

here = pathlib.Path(__file__).parent


def canonical(value):
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


block = json.loads((here / "f1_block.pretty.json").read_text())
full = canonical(block)
(here / "f1_block.canonical.json").write_bytes(full)
(here / "f1_block.sha256").write_text(hashlib.sha256(full).hexdigest() + "\n")
content = {k: v for k, v in block.items() if k != "block_hash"}
(here / "f1_block_content.sha256").write_text(hashlib.sha256(canonical(content)).hexdigest() + "\n")

seed = hashlib.sha256(b"independent ed25519 oracle").digest()
key = Ed25519PrivateKey.from_private_bytes(seed)
public = key.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
message = canonical({"greeting": "hello", "n": 42})
signature = key.sign(message)
(here / "ed25519_vector.txt").write_text(
    f"seed={seed.hex()}\npublic={public.hex()}\nmessage={message.hex()}\nsignature={signature.hex()}\n"
)
