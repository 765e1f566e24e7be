"""
ECDSA on secp256r1 with SHA-256 over the label payloads.

The signed message is the Payload A digits (ASCII), a 0x1F separator and the
product information (Latin-1). Signatures are DER blobs of 70 to 72 bytes.
Keys are kept in PEM files (PKCS#8 private, SubjectPublicKeyInfo public).
"""

import logging
from pathlib import Path
from typing import NamedTuple, Optional, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    Prehashed,
    decode_dss_signature,
)

from .payload import PayloadA


logger = logging.getLogger(__name__)

CURVE = ec.SECP256R1()
CURVE_ORDER = int(
    "ffffffff00000000ffffffffffffffffbce6faada7179e84f3b9cac2fc632551", 16
)
SCALAR_BYTES = 32
SEPARATOR = b"\x1f"
SIGNATURE_LENGTHS = range(70, 73)
PREHASHED_ECDSA = ec.ECDSA(Prehashed(hashes.SHA256()))
MAX_SIGNING_ATTEMPTS = 64


class KeyGenerationError(ValueError):
    pass


class SigningError(ValueError):
    pass


class KeyPair(NamedTuple):
    private_key: ec.EllipticCurvePrivateKey
    public_key: ec.EllipticCurvePublicKey

    @property
    def private_scalar(self) -> int:
        return self.private_key.private_numbers().private_value

    @property
    def public_bytes(self) -> bytes:
        """Uncompressed SEC1 point, 65 bytes."""
        return self.public_key.public_bytes(
            serialization.Encoding.X962,
            serialization.PublicFormat.UncompressedPoint,
        )


def _digits(payload_a: Union[PayloadA, str]) -> str:
    if isinstance(payload_a, PayloadA):
        return payload_a.digits
    return payload_a


def sha256(data: bytes) -> bytes:
    digest = hashes.Hash(hashes.SHA256())
    digest.update(data)
    return digest.finalize()


def signed_message(
    payload_a: Union[PayloadA, str], product_info: str
) -> bytes:
    return (
        _digits(payload_a).encode("ascii")
        + SEPARATOR
        + product_info.encode("latin-1")
    )


def message_digest(
    payload_a: Union[PayloadA, str], product_info: str
) -> bytes:
    return sha256(signed_message(payload_a, product_info))


def keygen(seed: Optional[Union[bytes, str, int]] = None) -> KeyPair:
    """
    New secp256r1 key pair.

    Without a seed the key comes from the system's random source. A seed
    derives the scalar as SHA-256(seed) mod (n - 1) + 1, which is never 0.
    """
    try:
        if seed is None:
            private_key = ec.generate_private_key(CURVE)
        else:
            if isinstance(seed, int):
                seed = str(seed)
            if isinstance(seed, str):
                seed = seed.encode("utf-8")
            scalar = int.from_bytes(sha256(seed), "big")
            scalar = scalar % (CURVE_ORDER - 1) + 1
            private_key = ec.derive_private_key(scalar, CURVE)
    except (OSError, ValueError) as error:
        raise KeyGenerationError(f"Key generation failed: {error}") from error

    return KeyPair(private_key, private_key.public_key())


def _check_private_key(key) -> ec.EllipticCurvePrivateKey:
    if isinstance(key, KeyPair):
        key = key.private_key
    if not isinstance(key, ec.EllipticCurvePrivateKey):
        raise SigningError(f"Not an elliptic curve private key: {type(key)}")
    if key.curve.name != CURVE.name:
        raise SigningError(
            f"Key is on {key.curve.name}, expected {CURVE.name}"
        )
    return key


def sign(
    payload_a: Union[PayloadA, str],
    product_info: str,
    private_key: ec.EllipticCurvePrivateKey,
) -> bytes:
    """
    DER signature of the payload message.

    DER drops leading zero bytes of r and s, so a rare signature is shorter
    than 70 bytes; such signatures are re-drawn.
    """
    private_key = _check_private_key(private_key)
    try:
        digest = message_digest(payload_a, product_info)
    except UnicodeEncodeError as error:
        raise SigningError(f"Message is not encodable: {error}") from error

    for attempt in range(1, MAX_SIGNING_ATTEMPTS + 1):
        blob = private_key.sign(digest, PREHASHED_ECDSA)
        if len(blob) in SIGNATURE_LENGTHS:
            return blob
        logger.debug(
            "Signature attempt %d gave %d bytes, retrying", attempt, len(blob)
        )

    raise SigningError(
        f"No signature within {SIGNATURE_LENGTHS.start}-"
        f"{SIGNATURE_LENGTHS.stop - 1} bytes after "
        f"{MAX_SIGNING_ATTEMPTS} attempts"
    )


def verify_signature(
    payload_a: Union[PayloadA, str],
    product_info: str,
    blob: bytes,
    public_key: ec.EllipticCurvePublicKey,
) -> bool:
    """True iff 'blob' signs exactly this message under 'public_key'."""
    if isinstance(public_key, KeyPair):
        public_key = public_key.public_key
    try:
        digest = message_digest(payload_a, product_info)
        public_key.verify(bytes(blob), digest, PREHASHED_ECDSA)
    except (InvalidSignature, ValueError, TypeError, AttributeError):
        return False
    return True


def raw_signature(blob: bytes) -> bytes:
    """Fixed-width r || s (64 bytes) of a DER signature."""
    r, s = decode_dss_signature(blob)
    return r.to_bytes(SCALAR_BYTES, "big") + s.to_bytes(SCALAR_BYTES, "big")


def public_point(public_key: ec.EllipticCurvePublicKey) -> tuple[int, int]:
    numbers = public_key.public_numbers()
    return numbers.x, numbers.y


def save_private_key(key: ec.EllipticCurvePrivateKey, path: Path):
    pem = _check_private_key(key).private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )
    Path(path).write_bytes(pem)


def save_public_key(key: ec.EllipticCurvePublicKey, path: Path):
    pem = key.public_bytes(
        serialization.Encoding.PEM,
        serialization.PublicFormat.SubjectPublicKeyInfo,
    )
    Path(path).write_bytes(pem)


def load_private_key(path: Path) -> ec.EllipticCurvePrivateKey:
    key = serialization.load_pem_private_key(
        Path(path).read_bytes(), password=None
    )
    if not isinstance(key, ec.EllipticCurvePrivateKey):
        raise ValueError(f"{path} does not hold an elliptic curve key")
    if key.curve.name != CURVE.name:
        raise ValueError(f"{path} holds a {key.curve.name} key")
    return key


def load_public_key(path: Path) -> ec.EllipticCurvePublicKey:
    key = serialization.load_pem_public_key(Path(path).read_bytes())
    if not isinstance(key, ec.EllipticCurvePublicKey):
        raise ValueError(f"{path} does not hold an elliptic curve key")
    if key.curve.name != CURVE.name:
        raise ValueError(f"{path} holds a {key.curve.name} key")
    return key
