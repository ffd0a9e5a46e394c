"""Bit-exact packing of message fields, MSB first.

Bit strings are plain ``str`` objects over ``"0"``/``"1"``; that keeps
slicing, length checks and test oracles trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..proto_model import MessageSchema, ProtocolSpec

RRC_CR_WIDTHS = (40, 4, 1)  # UE-Identity, EstablishmentCause, spare


class DecodeError(ValueError):
    """Structural decode failure (wrong length or non-binary symbols)."""


def _check_bits(bits: str) -> None:
    if any(c not in "01" for c in bits):
        raise DecodeError("bit string contains symbols other than 0/1")


def encode_fields(widths, values) -> str:
    if len(widths) != len(values):
        raise ValueError("one value per field required")
    out = []
    for w, v in zip(widths, values):
        if not isinstance(v, int) or not 0 <= v < (1 << w):
            raise ValueError(f"value {v!r} out of range for a {w}-bit field")
        out.append(format(v, f"0{w}b"))
    return "".join(out)


def decode_fields(widths, bits: str) -> list[int]:
    _check_bits(bits)
    total = sum(widths)
    if len(bits) != total:
        raise DecodeError(f"expected {total} bits, got {len(bits)}")
    out, pos = [], 0
    for w in widths:
        out.append(int(bits[pos:pos + w], 2))
        pos += w
    return out


def encode_rrc_connection_request(ue_identity: int, cause: int, spare: int) -> str:
    return encode_fields(RRC_CR_WIDTHS, (ue_identity, cause, spare))


def decode_rrc_connection_request(bits: str) -> tuple[int, int, int]:
    ue_identity, cause, spare = decode_fields(RRC_CR_WIDTHS, bits)
    return ue_identity, cause, spare


def bits_to_hex(bits: str) -> str:
    """``<length>:<hex>`` so that leading zeros and odd lengths survive."""
    if not bits:
        return "0:"
    return f"{len(bits)}:{int(bits, 2):0{(len(bits) + 3) // 4}x}"


def hex_to_bits(text: str) -> str:
    length, _, digits = text.partition(":")
    n = int(length)
    return format(int(digits, 16), f"0{n}b") if n else ""


@dataclass(frozen=True)
class WireMessage:
    schema: str
    bits: str
    fields: dict = field(default_factory=dict, compare=False)

    def to_json(self) -> dict:
        return {"schema": self.schema, "bits": bits_to_hex(self.bits)}


def widths(spec: ProtocolSpec, msg: MessageSchema) -> list[int]:
    return [spec.identifier(f).bit_width for f in msg.fields]


def encode_message(spec: ProtocolSpec, msg: MessageSchema, values: dict[str, int]) -> WireMessage:
    vals = [values[f] for f in msg.fields]
    return WireMessage(msg.name, encode_fields(widths(spec, msg), vals), dict(zip(msg.fields, vals)))


def decode_message(spec: ProtocolSpec, msg: MessageSchema, bits: str) -> WireMessage:
    vals = decode_fields(widths(spec, msg), bits)
    return WireMessage(msg.name, bits, dict(zip(msg.fields, vals)))


def splice_field(spec: ProtocolSpec, msg: MessageSchema, values: dict[str, int], field_name: str, field_bits: str) -> str:
    """Encode a message with one field replaced by raw bits of arbitrary length."""
    parts = []
    for f in msg.fields:
        ident = spec.identifier(f)
        parts.append(field_bits if f == field_name else format(values[f], f"0{ident.bit_width}b"))
    return "".join(parts)
