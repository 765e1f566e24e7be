"""
Payloads of the two QR codes printed next to a label.

Payload A (QR numeric mode) carries the reference point cloud:

    header  4 digits point count p, 1 digit kind flag (0 beads, 1 rods)
    point   x(6) y(6) z(5) sx(2) sy(2) sz(2), 23 digits, repeated p times

Payload B (QR byte mode, ISO/IEC 8859-1) carries the product information
and the DER signature:

    2 bytes big-endian length z | z bytes Latin-1 text | 70-72 bytes DER
"""

import re
from enum import Enum
from typing import NamedTuple, Optional, Union

import numpy as np
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
)

from .labels import LabelKind, PointCloud


COUNT_DIGITS = 4
HEADER_DIGITS = COUNT_DIGITS + 1
FIELD_WIDTHS = (6, 6, 5, 2, 2, 2)
POINT_DIGITS = sum(FIELD_WIDTHS)
MAX_POINTS = 10**COUNT_DIGITS - 1
KIND_FLAGS = {LabelKind.BEADS: "0", LabelKind.RODS: "1"}

LENGTH_PREFIX_BYTES = 2
MAX_INFO_CHARS = 900
SIGNATURE_LENGTHS = range(70, 73)

POINTS_PER_CM = 60
INFO_CHARS_PER_CM = 500
READABLE_POINTS_PER_CM = 100
READABLE_INFO_CHARS_PER_CM = 800
SINGLE_CODE_POINTS_PER_CM = 10
MIN_SIDE_CM = 1.0

NUMERIC_PATTERN = re.compile(r"[0-9]*")
NON_DIGIT_PATTERN = re.compile(r"[^0-9]")


class PayloadRangeError(ValueError):
    pass


class PayloadEncodingError(ValueError):
    pass


class PayloadParseError(ValueError):
    """Malformed payload; 'offset' points at the offending position."""

    def __init__(
        self,
        message: str,
        offset: Optional[int] = None,
        expected: Optional[int] = None,
        actual: Optional[int] = None,
    ):
        super().__init__(message)
        self.offset = offset
        self.expected = expected
        self.actual = actual


class QrMode(str, Enum):
    NUMERIC = "numeric"
    BYTE = "byte"


class PayloadA(NamedTuple):
    digits: str
    point_count: int


class PayloadB(NamedTuple):
    data: bytes
    product_info: str
    signature: bytes


def _field_offsets() -> list[tuple[int, int]]:
    bounds = np.cumsum((0,) + FIELD_WIDTHS)
    return list(zip(bounds[:-1], bounds[1:]))


def encode_payload_a(cloud: PointCloud) -> PayloadA:
    """
    Fixed-width digit string of a reference cloud.

    Raises
    ------
    PayloadRangeError
        If the cloud is too small or too large, a coordinate is not a whole
        nanometre or does not fit its field.
    """
    count = len(cloud)
    if count < 3:
        raise PayloadRangeError(f"Need at least 3 points, got {count}")
    if count > MAX_POINTS:
        raise PayloadRangeError(
            f"At most {MAX_POINTS} points fit the header, got {count}"
        )

    points = cloud.points
    if not np.array_equal(points, np.rint(points)):
        raise PayloadRangeError("Coordinates must be whole nanometres")

    limits = 10 ** np.array(FIELD_WIDTHS[:3])
    outside = np.argwhere((points < 0) | (points >= limits))
    if len(outside):
        row, axis = outside[0]
        raise PayloadRangeError(
            f"Coordinate {points[row, axis]:.0f} of point {row} "
            f"is outside [0, {limits[axis]})"
        )

    values = np.hstack([points.astype(np.int64), cloud.radii])
    body = "".join(
        "{:06d}{:06d}{:05d}{:02d}{:02d}{:02d}".format(*row)
        for row in values.tolist()
    )
    header = f"{count:0{COUNT_DIGITS}d}{KIND_FLAGS[cloud.kind]}"
    return PayloadA(header + body, count)


def decode_payload_a(payload: Union[PayloadA, str]) -> PointCloud:
    """Inverse of encode_payload_a."""
    digits = payload.digits if isinstance(payload, PayloadA) else payload

    bad = NON_DIGIT_PATTERN.search(digits)
    if bad:
        raise PayloadParseError(
            f"Non-digit character {bad.group()!r} at offset {bad.start()}",
            offset=bad.start(),
        )
    if len(digits) < HEADER_DIGITS:
        raise PayloadParseError(
            f"Payload too short: expected at least {HEADER_DIGITS} digits, "
            f"got {len(digits)}",
            offset=len(digits),
            expected=HEADER_DIGITS,
            actual=len(digits),
        )

    count = int(digits[:COUNT_DIGITS])
    expected = HEADER_DIGITS + POINT_DIGITS * count
    if len(digits) != expected:
        raise PayloadParseError(
            f"Payload length mismatch: expected {expected} digits for "
            f"{count} points, got {len(digits)}",
            offset=min(len(digits), expected),
            expected=expected,
            actual=len(digits),
        )

    flags = {flag: kind for kind, flag in KIND_FLAGS.items()}
    flag = digits[COUNT_DIGITS]
    if flag not in flags:
        raise PayloadParseError(
            f"Unknown kind flag {flag!r} at offset {COUNT_DIGITS}",
            offset=COUNT_DIGITS,
        )
    if count < 3:
        raise PayloadParseError(
            f"Need at least 3 points, header says {count}", offset=0
        )

    body = np.frombuffer(digits[HEADER_DIGITS:].encode("ascii"), np.uint8)
    body = (body - ord("0")).astype(np.int64).reshape(count, POINT_DIGITS)
    fields = np.column_stack(
        [
            body[:, start:stop] @ 10 ** np.arange(stop - start - 1, -1, -1)
            for start, stop in _field_offsets()
        ]
    )

    zeros = np.argwhere(fields[:, 3:] == 0)
    if len(zeros):
        row, axis = zeros[0]
        start, _ = _field_offsets()[3 + axis]
        raise PayloadParseError(
            f"Zero error radius of point {row}",
            offset=HEADER_DIGITS + row * POINT_DIGITS + start,
        )

    return PointCloud(flags[flag], fields[:, :3], fields[:, 3:])


def _check_signature(signature: bytes, error: type):
    if len(signature) not in SIGNATURE_LENGTHS:
        raise error(
            f"Signature must be {SIGNATURE_LENGTHS.start}-"
            f"{SIGNATURE_LENGTHS.stop - 1} bytes, got {len(signature)}"
        )
    try:
        decode_dss_signature(signature)
    except ValueError as parse_error:
        raise error(f"Malformed DER signature: {parse_error}") from parse_error


def _check_info_length(length: int, error: type):
    if not 1 <= length <= MAX_INFO_CHARS:
        raise error(
            f"Product info must have 1-{MAX_INFO_CHARS} characters, "
            f"got {length}"
        )


def encode_payload_b(product_info: str, signature: bytes) -> PayloadB:
    """
    Frame product information and signature for the byte-mode code.

    Raises
    ------
    PayloadEncodingError
        If the text is not Latin-1, empty or too long, or the signature is
        not a 70-72 byte DER blob.
    """
    _check_info_length(len(product_info), PayloadEncodingError)
    try:
        info = product_info.encode("latin-1")
    except UnicodeEncodeError as error:
        raise PayloadEncodingError(
            f"Product info is not Latin-1 encodable: {error}"
        ) from error
    signature = bytes(signature)
    _check_signature(signature, PayloadEncodingError)

    data = len(info).to_bytes(LENGTH_PREFIX_BYTES, "big") + info + signature
    return PayloadB(data, product_info, signature)


def decode_payload_b(data: bytes) -> PayloadB:
    data = bytes(data)
    if len(data) < LENGTH_PREFIX_BYTES:
        raise PayloadParseError(
            "Payload B is missing its length prefix",
            offset=len(data),
            expected=LENGTH_PREFIX_BYTES,
            actual=len(data),
        )
    length = int.from_bytes(data[:LENGTH_PREFIX_BYTES], "big")
    _check_info_length(length, PayloadParseError)

    end = LENGTH_PREFIX_BYTES + length
    if len(data) < end:
        raise PayloadParseError(
            f"Product info truncated: expected {length} bytes",
            offset=len(data),
            expected=end,
            actual=len(data),
        )
    signature = data[end:]
    _check_signature(signature, PayloadParseError)

    info = data[LENGTH_PREFIX_BYTES:end].decode("latin-1")
    return PayloadB(data, info, signature)


def is_numeric_mode(text: str) -> bool:
    return NUMERIC_PATTERN.fullmatch(text) is not None


def qr_mode(payload: Union[PayloadA, PayloadB]) -> QrMode:
    if isinstance(payload, PayloadA):
        return QrMode.NUMERIC
    if isinstance(payload, PayloadB):
        return QrMode.BYTE
    raise TypeError(f"Not a payload: {type(payload)}")


def qr_data_bits(payload: Union[PayloadA, PayloadB]) -> int:
    """
    Data segment length in bits: numeric mode packs 3 digits into 10 bits
    (7 and 4 bits for a 2 and 1 digit tail), byte mode uses 8 bits a byte.
    """
    if qr_mode(payload) is QrMode.NUMERIC:
        groups, tail = divmod(len(payload.digits), 3)
        return 10 * groups + (0, 4, 7)[tail]
    return 8 * len(payload.data)


def recommended_print_side_cm(payload: Union[PayloadA, PayloadB]) -> float:
    """Printed side length of a code that reads reliably: p/60 or z/500."""
    if qr_mode(payload) is QrMode.NUMERIC:
        side = payload.point_count / POINTS_PER_CM
    else:
        side = len(payload.product_info) / INFO_CHARS_PER_CM
    return max(side, MIN_SIDE_CM)


def minimum_print_side_cm(payload: Union[PayloadA, PayloadB]) -> float:
    """Smallest side that is still readable at all: p/100 or z/800."""
    if qr_mode(payload) is QrMode.NUMERIC:
        return payload.point_count / READABLE_POINTS_PER_CM
    return len(payload.product_info) / READABLE_INFO_CHARS_PER_CM


def single_code_side_cm(point_count: int) -> float:
    """Side of one byte-mode code carrying all label data."""
    return point_count / SINGLE_CODE_POINTS_PER_CM
