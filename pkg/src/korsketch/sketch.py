"""The clean GF(2)-linear sketch and the public weight table."""
from __future__ import annotations

import math
import struct
from typing import Iterable, Mapping

import numpy as np

from korsketch.errors import (
    CorruptHeader,
    CorruptPayload,
    DuplicateElement,
    InvalidWeight,
    LengthMismatch,
    ParamsMismatch,
    UnknownElement,
)
from korsketch.hashing import HashOracle, check_weights
from korsketch.params import HEADER, SketchParams


class WeightTable:
    """Public, fixed weights in (0, 1] for element ids.

    Ids without an explicit entry fall back to ``default``; with
    ``default=None`` looking them up raises :class:`UnknownElement`.
    """

    def __init__(self, weights: Mapping[int, float] | None = None, default: float | None = None):
        items = dict(weights or {})
        ids = np.fromiter(items.keys(), dtype=np.uint64, count=len(items))
        values = np.fromiter(items.values(), dtype=np.float64, count=len(items))
        self._set(ids, values, default)

    def _set(self, ids, values, default):
        check_weights(values)
        if default is not None and not 0 < default <= 1:
            raise InvalidWeight(f"default weight {default!r} is outside (0, 1]")
        order = np.argsort(ids, kind="stable")
        self._ids = ids[order]
        self._values = values[order]
        if len(self._ids) > 1 and np.any(self._ids[1:] == self._ids[:-1]):
            raise DuplicateElement("weight table lists an id twice")
        self.default = default
        top = [float(self._values.max())] if len(self._values) else []
        if default is not None:
            top.append(float(default))
        self.max_weight = max(top, default=0.0)

    @classmethod
    def unweighted(cls) -> "WeightTable":
        return cls(default=1.0)

    @classmethod
    def from_arrays(cls, ids, weights, default: float | None = None) -> "WeightTable":
        ids = np.asarray(ids, dtype=np.uint64)
        weights = np.asarray(weights, dtype=np.float64)
        if ids.shape != weights.shape:
            raise ValueError("ids and weights must have the same shape")
        table = cls.__new__(cls)
        table._set(ids.ravel(), weights.ravel(), default)
        return table

    def __len__(self):
        return len(self._ids)

    def __contains__(self, j) -> bool:
        if self.default is not None:
            return True
        pos = np.searchsorted(self._ids, np.uint64(j))
        return bool(pos < len(self._ids) and self._ids[pos] == j)

    def __getitem__(self, j) -> float:
        return float(self.lookup(np.array([j], dtype=np.uint64))[0])

    def lookup(self, ids) -> np.ndarray:
        """Vectorised weight lookup."""
        ids = np.asarray(ids, dtype=np.uint64)
        if len(self._ids) == 0:
            if self.default is None:
                if ids.size:
                    raise UnknownElement(f"element {int(ids.flat[0])} has no weight")
                return np.zeros(ids.shape)
            return np.full(ids.shape, self.default)
        pos = np.searchsorted(self._ids, ids)
        pos_clipped = np.minimum(pos, len(self._ids) - 1)
        found = self._ids[pos_clipped] == ids
        out = np.where(found, self._values[pos_clipped], self.default or 0.0)
        if self.default is None and not np.all(found):
            missing = ids[~found]
            raise UnknownElement(f"element {int(missing.flat[0])} has no weight")
        return out

    def total(self, ids) -> float:
        """||w_A||_1 for the set ``ids``."""
        return float(np.sum(self.lookup(ids)))


# ---------------------------------------------------------------- bit packing

def words_per_row(n: int) -> int:
    return (n + 63) // 64


def pack_rows(bits: np.ndarray) -> np.ndarray:
    """(L, n) boolean matrix -> (L, ceil(n/64)) uint64 words, bucket k at bit k % 64."""
    levels, n = bits.shape
    padded = np.zeros((levels, words_per_row(n) * 64), dtype=np.uint8)
    padded[:, :n] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    return packed.view("<u8").astype(np.uint64, copy=False).reshape(levels, -1)


def unpack_rows(words: np.ndarray, n: int) -> np.ndarray:
    raw = np.ascontiguousarray(words, dtype="<u8").view(np.uint8)
    bits = np.unpackbits(raw, axis=1, bitorder="little")
    return bits[:, :n].astype(bool)


def _as_ids(elements) -> np.ndarray:
    arr = np.asarray(elements if isinstance(elements, np.ndarray) else list(elements))
    if arr.size == 0:
        return np.zeros(0, dtype=np.uint64)
    if arr.dtype.kind not in "iu":
        raise ValueError("element ids must be integers")
    if arr.dtype.kind == "i" and arr.min() < 1:
        raise UnknownElement(f"element {int(arr.min())} is outside the universe")
    return arr.astype(np.uint64).ravel()


def _check_range(ids: np.ndarray, params: SketchParams) -> None:
    if ids.size and (ids.min() < 1 or ids.max() > params.universe_size):
        bad = ids[(ids < 1) | (ids > params.universe_size)][0]
        raise UnknownElement(f"element {int(bad)} is outside [1, {params.universe_size}]")


def cell_parity(params: SketchParams, levels: np.ndarray, buckets: np.ndarray) -> np.ndarray:
    """Parity of hits per (level, bucket) cell as packed words."""
    keep = levels >= 0
    flat = levels[keep] * params.buckets_per_level + buckets[keep].astype(np.int64)
    counts = np.bincount(flat, minlength=params.sketch_bits)
    odd = (counts & 1).astype(bool).reshape(params.num_levels, params.buckets_per_level)
    return pack_rows(odd)


class KorSketch:
    """L x n bit matrix over GF(2), bound to the parameter family that built it."""

    def __init__(self, params: SketchParams, words: np.ndarray | None = None):
        self.params = params
        self.params_digest = params.digest
        shape = (params.num_levels, words_per_row(params.buckets_per_level))
        if words is None:
            words = np.zeros(shape, dtype=np.uint64)
        elif words.shape != shape:
            raise ValueError(f"word matrix has shape {words.shape}, expected {shape}")
        self.words = words

    @classmethod
    def zeros(cls, params: SketchParams) -> "KorSketch":
        return cls(params)

    def bits(self) -> np.ndarray:
        """Unpacked (L, n) boolean matrix."""
        return unpack_rows(self.words, self.params.buckets_per_level)

    def copy(self):
        return type(self)(self.params, self.words.copy())

    def toggle(self, j: int, weights: WeightTable) -> bool:
        """Flip element j's cell in place; returns whether j is sampled at all."""
        ids = _as_ids([j])
        _check_range(ids, self.params)
        w = weights.lookup(ids)
        levels, buckets = HashOracle.for_params(self.params).locate(ids, w)
        if levels[0] < 0:
            return False
        k = int(buckets[0])
        self.words[int(levels[0]), k // 64] ^= np.uint64(1 << (k % 64))
        return True

    def hamming(self, other: "KorSketch") -> int:
        _require_same_family(self, other)
        return int(np.bitwise_count(self.words ^ other.words).sum())

    def __xor__(self, other):
        return xor(self, other)

    def __eq__(self, other):
        if not isinstance(other, KorSketch):
            return NotImplemented
        return self.params_digest == other.params_digest and np.array_equal(self.words, other.words)

    def __repr__(self):
        ones = int(np.bitwise_count(self.words).sum())
        p = self.params
        return f"KorSketch(L={p.num_levels}, n={p.buckets_per_level}, ones={ones})"


def _require_same_family(a, b) -> None:
    if a.params_digest != b.params_digest:
        raise ParamsMismatch("sketches belong to different parameter families")


def build(elements: Iterable[int], weights: WeightTable, params: SketchParams) -> KorSketch:
    """Sketch of a duplicate-free set of element ids."""
    ids = _as_ids(elements)
    _check_range(ids, params)
    if ids.size > 1:
        ordered = np.sort(ids)
        dup = ordered[1:] == ordered[:-1]
        if np.any(dup):
            raise DuplicateElement(f"element {int(ordered[1:][dup][0])} occurs twice")
    w = weights.lookup(ids)
    levels, buckets = HashOracle.for_params(params).locate(ids, w)
    return KorSketch(params, cell_parity(params, levels, buckets))


def xor(a: KorSketch, b: KorSketch) -> KorSketch:
    """Entrywise GF(2) sum; a sketch of the symmetric difference of the inputs."""
    _require_same_family(a, b)
    return KorSketch(a.params, a.words ^ b.words)


def update(sketch: KorSketch, j: int, weights: WeightTable) -> KorSketch:
    """New sketch with element j's membership toggled."""
    out = KorSketch(sketch.params, sketch.words.copy())
    out.toggle(j, weights)
    return out


NOISE_BLOCK = struct.Struct("<BddI")
CLEAN, NOISY = 0, 1


def serialize(sketch) -> bytes:
    """Header, noise-state block, then the bits packed little-endian, level-major."""
    params = sketch.params
    noise = getattr(sketch, "noise", None)
    if noise is None:
        block = NOISE_BLOCK.pack(CLEAN, 0.0, math.inf, 0)
    else:
        block = NOISE_BLOCK.pack(NOISY, noise.p_eff, noise.epsilon_eff, noise.merge_count)
    bits = unpack_rows(sketch.words, params.buckets_per_level).ravel()
    payload = np.packbits(bits, bitorder="little").tobytes()
    return params.to_header() + block + payload


def deserialize(data: bytes):
    """Inverse of :func:`serialize`; returns a :class:`KorSketch` or a noisy sketch."""
    from korsketch.privacy import NoiseState, NoisySketch

    data = bytes(data)
    params = SketchParams.from_header(data)
    offset = HEADER.size
    if len(data) < offset + NOISE_BLOCK.size:
        raise LengthMismatch("file ends inside the noise-state block")
    flag, p_eff, eps_eff, merges = NOISE_BLOCK.unpack_from(data, offset)
    if flag not in (CLEAN, NOISY):
        raise CorruptHeader(f"unknown noise flag {flag}")
    offset += NOISE_BLOCK.size
    tau = params.sketch_bits
    expected = (tau + 7) // 8
    if len(data) - offset != expected:
        raise LengthMismatch(f"payload has {len(data) - offset} bytes, expected {expected}")
    raw = np.frombuffer(data, dtype=np.uint8, offset=offset)
    bits = np.unpackbits(raw, bitorder="little")
    if bits[tau:].any():
        raise CorruptPayload("nonzero pad bits after the last sketch bit")
    words = pack_rows(bits[:tau].reshape(params.num_levels, params.buckets_per_level).astype(bool))
    if flag == CLEAN:
        return KorSketch(params, words)
    if not 0 <= p_eff < 0.5:
        raise CorruptHeader(f"noise flip probability {p_eff} out of range")
    return NoisySketch(params, words, NoiseState(p_eff, eps_eff, merges))


def read_ids(path, allow_repeats: bool = False) -> np.ndarray:
    """Decimal element ids, one per line; blank lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        ids = [int(line) for line in fh if line.strip()]
    out = np.array(ids, dtype=np.uint64)
    if not allow_repeats and np.unique(out).size != out.size:
        raise DuplicateElement(f"{path} lists an element twice")
    return out


def read_weights(path=None, default: float = 1.0) -> WeightTable:
    """TSV ``id<TAB>weight`` lines; ids not listed get ``default``."""
    if path is None:
        return WeightTable(default=default)
    ids, values = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            j, w = line.rstrip("\n").split("\t")
            ids.append(int(j))
            values.append(float(w))
    return WeightTable.from_arrays(np.array(ids, dtype=np.uint64), np.array(values), default)
