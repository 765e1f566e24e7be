from .labels import LabelKind, PointCloud, generate_reference
from .payload import decode_payload_a, encode_payload_a
from .signing import keygen, sign, verify_signature
from .verification import VerifyConfig, authenticate, verify
from .version import __version__


__all__ = [
    "LabelKind",
    "PointCloud",
    "VerifyConfig",
    "__version__",
    "authenticate",
    "decode_payload_a",
    "encode_payload_a",
    "generate_reference",
    "keygen",
    "sign",
    "verify",
    "verify_signature",
]
