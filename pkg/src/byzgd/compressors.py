"""Gradient compressors with exact wire encodings and bit accounting.

Every compressor maps a dense float64 vector ``x`` to a :class:`CompressedMsg`
whose decoded value ``Q(x)`` satisfies ``||Q(x) - x||^2 <= (1 - delta) ||x||^2``
for the kind's compression factor ``delta`` (in expectation for QSGD). The
``sign`` kind is the raw signSGD message and carries no such guarantee.

In-process messages keep their payload in 64-bit precision so that decoding is
exact; :func:`to_wire` / :func:`from_wire` implement the little-endian byte
layout with 32-bit floats that the bit counts describe.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from byzgd.errors import DecodeError, InvalidInput, InvalidSpec

KINDS = ("none", "topk", "qsgd", "l1qsgd", "sign")
FLOAT_BITS = 32

_ALIASES = {
    "none": "none",
    "identity": "none",
    "topk": "topk",
    "top_k": "topk",
    "qsgd": "qsgd",
    "l1qsgd": "l1qsgd",
    "l1_qsgd": "l1qsgd",
    "sign": "sign",
    "signsgd": "sign",
}


@dataclass(frozen=True)
class CompressorSpec:
    kind: str = "none"
    k: int | None = None
    s: int | None = None

    def __post_init__(self):
        kind = _ALIASES.get(str(self.kind).lower().replace("-", "_"))
        if kind is None:
            raise InvalidSpec(f"unknown compressor kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "topk":
            if self.k is None or int(self.k) != self.k or self.k < 1:
                raise InvalidSpec("topk compressor requires an integer k >= 1")
        if kind == "qsgd":
            if self.s is None or int(self.s) != self.s or self.s < 1:
                raise InvalidSpec("qsgd compressor requires an integer s >= 1")

    def check_dim(self, d: int) -> None:
        if d < 1:
            raise InvalidInput(f"dimension must be positive, got {d}")
        if self.kind == "topk" and self.k > d:
            raise InvalidInput(f"topk requires k <= d, got k={self.k}, d={d}")

    @property
    def level_bits(self) -> int:
        """Width of one QSGD level field, ceil(log2(s + 1))."""
        return int(self.s).bit_length() if self.kind == "qsgd" else 0


NONE = CompressorSpec("none")


@dataclass(frozen=True, eq=False)
class CompressedMsg:
    """One worker-to-center message.

    Only the fields relevant to ``kind`` are populated: ``values`` (none, and
    topk together with ``indices``), ``signs`` (sign, l1qsgd, qsgd; True means
    +1), ``scale`` (l1 scale for l1qsgd, l2 norm for qsgd) and ``levels`` (qsgd).
    """

    kind: str
    d: int
    bits: int
    reported_norm: float | None = None
    values: np.ndarray | None = None
    indices: np.ndarray | None = None
    signs: np.ndarray | None = None
    levels: np.ndarray | None = None
    scale: float | None = None
    s: int | None = None
    k: int | None = None
    _decoded: list = field(default_factory=list, repr=False)

    def decode(self) -> np.ndarray:
        """Dense ``Q(x)``; cached because the center may need it twice."""
        if not self._decoded:
            self._decoded.append(_decode(self))
        return self._decoded[0].copy()

    def with_norm(self, norm: float, extra_bits: int = FLOAT_BITS) -> CompressedMsg:
        return CompressedMsg(
            self.kind, self.d, self.bits + extra_bits, float(norm), self.values, self.indices,
            self.signs, self.levels, self.scale, self.s, self.k,
        )


def _as_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInput(f"expected a 1-d vector, got shape {x.shape}")
    return x


def _sign_bits(x: np.ndarray) -> np.ndarray:
    # sign(0) := +1
    return x >= 0


def _l1_scale(x: np.ndarray) -> float:
    a = np.abs(x)
    # Equal magnitudes have their common value as exact mean; this keeps Q(Q(x)) == Q(x).
    if a.size and np.all(a == a[0]):
        return float(a[0])
    return math.fsum(a) / a.size


def topk_indices(x: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest |x_i|, ties to the lowest index, returned ascending."""
    order = np.lexsort((np.arange(x.size), -np.abs(x)))
    return np.sort(order[:k])


def compress(spec: CompressorSpec, x, rng: np.random.Generator | None = None,
             *, with_norm: bool = False) -> CompressedMsg:
    """Compress ``x``; ``rng`` is required for QSGD and ignored otherwise.

    With ``with_norm`` the message also reports ``||x||_2`` and its bit count
    grows by one float.
    """
    x = _as_vector(x)
    d = x.size
    spec.check_dim(d)
    bits = message_bits(spec, d)
    kind = spec.kind
    if kind == "none":
        msg = CompressedMsg(kind, d, bits, values=x.copy())
    elif kind == "sign":
        msg = CompressedMsg(kind, d, bits, signs=_sign_bits(x))
    elif kind == "l1qsgd":
        msg = CompressedMsg(kind, d, bits, signs=_sign_bits(x), scale=_l1_scale(x))
    elif kind == "topk":
        idx = topk_indices(x, spec.k)
        msg = CompressedMsg(kind, d, bits, values=x[idx].copy(), indices=idx, k=spec.k)
    else:
        if rng is None:
            raise InvalidInput("qsgd compression needs an explicit random generator")
        norm = float(np.linalg.norm(x))
        if norm == 0.0:
            levels = np.zeros(d, dtype=np.int64)
        else:
            ratio = np.abs(x) / norm * spec.s
            lower = np.minimum(np.floor(ratio), spec.s)
            levels = (lower + (rng.random(d) < ratio - lower)).astype(np.int64)
        msg = CompressedMsg(kind, d, bits, signs=_sign_bits(x), levels=levels, scale=norm, s=spec.s)
    if with_norm:
        msg = msg.with_norm(float(np.linalg.norm(x)))
    return msg


def _decode(msg: CompressedMsg) -> np.ndarray:
    kind, d = msg.kind, msg.d
    if kind == "none":
        if msg.values is None or msg.values.shape != (d,):
            raise DecodeError("dense payload has the wrong length")
        return np.array(msg.values, dtype=np.float64)
    if kind in ("sign", "l1qsgd", "qsgd"):
        if msg.signs is None or msg.signs.shape != (d,):
            raise DecodeError("sign payload has the wrong length")
        pm = np.where(msg.signs, 1.0, -1.0)
        if kind == "sign":
            return pm
        if msg.scale is None or not msg.scale >= 0:
            raise DecodeError("scale must be a nonnegative float")
        if kind == "l1qsgd":
            return msg.scale * pm
        if msg.levels is None or msg.levels.shape != (d,):
            raise DecodeError("level payload has the wrong length")
        if msg.levels.min(initial=0) < 0 or msg.levels.max(initial=0) > msg.s:
            raise DecodeError(f"qsgd level outside [0, {msg.s}]")
        return msg.scale * pm * (msg.levels / msg.s)
    if kind == "topk":
        if msg.indices is None or msg.values is None or msg.indices.shape != msg.values.shape:
            raise DecodeError("topk payload needs matching indices and values")
        if msg.indices.size and (msg.indices.min() < 0 or msg.indices.max() >= d):
            raise DecodeError("topk index out of range")
        out = np.zeros(d)
        out[msg.indices] = msg.values
        return out
    raise DecodeError(f"unknown message kind {kind!r}")


def decompress(spec: CompressorSpec, msg: CompressedMsg) -> np.ndarray:
    if msg.kind != spec.kind:
        raise DecodeError(f"message kind {msg.kind!r} does not match compressor {spec.kind!r}")
    return msg.decode()


def stated_delta(spec: CompressorSpec, d: int, x=None) -> float | None:
    """Compression factor the kind guarantees.

    ``l1qsgd`` is input dependent and needs ``x``; QSGD returns the
    in-expectation factor; ``sign`` has none and returns None.
    """
    if spec.kind == "none":
        return 1.0
    if spec.kind == "topk":
        return spec.k / d
    if spec.kind == "qsgd":
        return 1.0 - min(d / spec.s**2, math.sqrt(d) / spec.s)
    if spec.kind == "l1qsgd":
        if x is None:
            raise InvalidInput("l1qsgd delta depends on the input vector")
        x = _as_vector(x)
        sq = float(x @ x)
        return 1.0 if sq == 0.0 else float(np.abs(x).sum() ** 2 / (d * sq))
    return None


def measured_delta(spec: CompressorSpec, x, rng: np.random.Generator | None = None) -> float:
    """1 - ||Q(x) - x||^2 / ||x||^2, clipped to [0, 1]; 1 for the zero vector."""
    x = _as_vector(x)
    sq = float(x @ x)
    if sq == 0.0:
        return 1.0
    q = compress(spec, x, rng).decode()
    r = q - x
    return min(1.0, max(0.0, 1.0 - float(r @ r) / sq))


def message_bits(spec: CompressorSpec, d: int, with_norm: bool = False) -> int:
    kind = spec.kind
    if kind == "none":
        bits = FLOAT_BITS * d
    elif kind == "sign":
        bits = d
    elif kind == "l1qsgd":
        bits = d + FLOAT_BITS
    elif kind == "qsgd":
        bits = FLOAT_BITS + d + d * spec.level_bits
    else:
        bits = spec.k * ((d - 1).bit_length() + FLOAT_BITS)
    return bits + (FLOAT_BITS if with_norm else 0)


def padding_bits(spec: CompressorSpec, d: int) -> int:
    """Wire bits that carry no information: byte-fill and unused index bits."""
    fill = lambda nbits: 8 * math.ceil(nbits / 8) - nbits  # noqa: E731
    if spec.kind in ("sign", "l1qsgd"):
        return fill(d)
    if spec.kind == "qsgd":
        return fill(d) + fill(d * spec.level_bits)
    if spec.kind == "topk":
        return spec.k * (32 - (d - 1).bit_length())
    return 0


_TOPK_RECORD = np.dtype([("index", "<u4"), ("value", "<f4")])


def _pack(flags: np.ndarray) -> bytes:
    return np.packbits(flags.astype(np.uint8), bitorder="little").tobytes()


def _unpack(data: bytes, count: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=count, bitorder="little").astype(bool)


def to_wire(msg: CompressedMsg) -> bytes:
    """Serialize the payload (without the reported norm) to its byte layout."""
    kind = msg.kind
    if kind == "none":
        return msg.values.astype("<f4").tobytes()
    if kind == "sign":
        return _pack(msg.signs)
    if kind == "l1qsgd":
        return struct.pack("<f", msg.scale) + _pack(msg.signs)
    if kind == "qsgd":
        width = int(msg.s).bit_length()
        level_bits = ((msg.levels[:, None] >> np.arange(width)) & 1).ravel()
        return struct.pack("<f", msg.scale) + _pack(msg.signs) + _pack(level_bits)
    records = np.empty(msg.indices.size, dtype=_TOPK_RECORD)
    records["index"] = msg.indices
    records["value"] = msg.values
    return records.tobytes()


def from_wire(spec: CompressorSpec, d: int, data: bytes,
              reported_norm: float | None = None) -> CompressedMsg:
    """Parse bytes produced by :func:`to_wire`; floats come back widened from float32."""
    spec.check_dim(d)
    kind = spec.kind
    nsign = math.ceil(d / 8)
    expected = {
        "none": 4 * d,
        "sign": nsign,
        "l1qsgd": 4 + nsign,
        "qsgd": 4 + nsign + math.ceil(d * spec.level_bits / 8),
        "topk": _TOPK_RECORD.itemsize * (spec.k or 0),
    }[kind]
    if len(data) != expected:
        raise DecodeError(f"{kind} payload for d={d} must be {expected} bytes, got {len(data)}")
    bits = message_bits(spec, d, with_norm=reported_norm is not None)
    if kind == "none":
        vals = np.frombuffer(data, dtype="<f4").astype(np.float64)
        msg = CompressedMsg(kind, d, bits, reported_norm, values=vals)
    elif kind == "sign":
        msg = CompressedMsg(kind, d, bits, reported_norm, signs=_unpack(data, d))
    elif kind == "l1qsgd":
        (scale,) = struct.unpack("<f", data[:4])
        msg = CompressedMsg(kind, d, bits, reported_norm, signs=_unpack(data[4:], d), scale=scale)
    elif kind == "qsgd":
        (scale,) = struct.unpack("<f", data[:4])
        signs = _unpack(data[4:4 + nsign], d)
        width = spec.level_bits
        flat = _unpack(data[4 + nsign:], d * width).reshape(d, width).astype(np.int64)
        levels = (flat << np.arange(width)).sum(axis=1)
        msg = CompressedMsg(kind, d, bits, reported_norm, signs=signs, levels=levels,
                            scale=scale, s=spec.s)
    else:
        records = np.frombuffer(data, dtype=_TOPK_RECORD)
        msg = CompressedMsg(kind, d, bits, reported_norm, values=records["value"].astype(np.float64),
                            indices=records["index"].astype(np.int64), k=spec.k)
    msg.decode()  # validates ranges eagerly
    return msg
