"""Attribute Range Vectors.

An ARV describes a numeric value range by the set of equal-width segments of
the attribute's bounded domain that the range touches.  The domain is halved
recursively, so a vector at ``level`` L has ``2**L`` bits; bit 0 stands for the
lowest-value segment.

Bits are held in a Python ``int`` (bit ``i`` of the int is segment ``i``), which
keeps AND/OR/XOR cheap even at the 65 536-bit depth cap.  Halving and doubling
use the usual shift-and-mask bit interleaving tricks, so they cost
``O(level)`` big-int operations instead of a Python loop per bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional

DEFAULT_MAX_LEVEL = 16
MAX_LEVEL_LIMIT = 16


class ArvError(ValueError):
    """Base class for ARV errors."""


class DomainError(ArvError):
    """A value range does not fit inside its attribute's domain limit."""


class ConfigError(ArvError):
    """Invalid ARV construction parameters."""


@dataclass(frozen=True)
class ValueInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise DomainError(f"interval endpoints must be finite: {self.lo!r}, {self.hi!r}")
        if self.lo > self.hi:
            raise DomainError(f"interval lo > hi: [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, other: "ValueInterval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def __str__(self):
        return f"[{self.lo:g},{self.hi:g}]"


@dataclass(frozen=True)
class DomainLimit:
    """System-wide bounds for one attribute."""

    min: float
    max: float

    def __post_init__(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise DomainError("domain limits must be finite")
        if not self.min < self.max:
            raise DomainError(f"domain limit needs min < max, got [{self.min}, {self.max}]")

    @property
    def span(self) -> float:
        return self.max - self.min

    def segment_index(self, x: float, level: int) -> int:
        """Index of the level-``level`` segment holding ``x``.

        Segments are half-open ``[lo, hi)`` except the last, which is closed at
        ``max``; a boundary point therefore belongs to the upper segment.
        """
        n = 1 << level
        i = int((x - self.min) * n / self.span)
        return min(max(i, 0), n - 1)

    def segment_bounds(self, i: int, level: int):
        w = self.span / (1 << level)
        return self.min + i * w, self.min + (i + 1) * w


@dataclass(frozen=True)
class ArvConfig:
    """ARV construction parameters.

    ``force_level`` bypasses the accuracy test and builds every vector at that
    level (then simplifies it); used for equal-resolution experiments.
    """

    alpha: float = 0.9
    max_level: int = DEFAULT_MAX_LEVEL
    force_level: Optional[int] = None

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}")
        if not (0 <= self.max_level <= MAX_LEVEL_LIMIT):
            raise ConfigError(f"max_level must be in [0, {MAX_LEVEL_LIMIT}], got {self.max_level}")
        if self.force_level is not None and not (0 <= self.force_level <= self.max_level):
            raise ConfigError(f"force_level must be in [0, max_level], got {self.force_level}")


# --- bit plumbing -----------------------------------------------------------


@lru_cache(maxsize=None)
def _block_mask(width: int, s: int) -> int:
    """``width``-bit mask of alternating runs: ``s`` ones (at the LSB end), ``s`` zeros."""
    period = 2 * s
    reps = max(width // period, 1)
    return ((1 << s) - 1) * (((1 << (period * reps)) - 1) // ((1 << period) - 1))


def _even_bits(x: int, n: int) -> int:
    """Gather bits 0, 2, 4, ... of an ``n``-bit value into an ``n//2``-bit value."""
    x &= _block_mask(n, 1)
    s = 1
    while s < n // 2:
        x = (x | (x >> s)) & _block_mask(n, 2 * s)
        s *= 2
    return x


def _spread(x: int, n: int) -> int:
    """Place bit ``i`` of an ``n``-bit value at position ``2i`` (inverse of ``_even_bits``)."""
    s = n // 2
    while s >= 1:
        x = (x | (x << s)) & _block_mask(2 * n, s)
        s //= 2
    return x


def _double(x: int, n: int) -> int:
    y = _spread(x, n)
    return y | (y << 1)


def _range_mask(first: int, last: int) -> int:
    return ((1 << (last + 1)) - 1) ^ ((1 << first) - 1)


# --- the vector ---------------------------------------------------------------


@dataclass(frozen=True)
class ARV:
    """Level-tagged bit vector; ``mask`` bit ``i`` is segment ``i``.

    ``saturated`` marks vectors that hit the depth cap before reaching the
    accuracy threshold.  It is bookkeeping only and takes no part in equality.
    """

    level: int
    mask: int
    saturated: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not (0 <= self.level <= MAX_LEVEL_LIMIT):
            raise ArvError(f"ARV level out of range: {self.level}")
        if self.mask <= 0:
            raise ArvError("ARV must have at least one bit set")
        if self.mask >> self.size:
            raise ArvError(f"mask wider than 2**{self.level} bits")

    @property
    def size(self) -> int:
        return 1 << self.level

    @classmethod
    def from_str(cls, bits: str) -> "ARV":
        n = len(bits)
        if n == 0 or n & (n - 1):
            raise ArvError(f"bit string length must be a power of two, got {n}")
        if set(bits) - {"0", "1"}:
            raise ArvError(f"not a bit string: {bits!r}")
        return cls(n.bit_length() - 1, int(bits[::-1], 2))

    def __str__(self):
        return format(self.mask, f"0{self.size}b")[::-1]

    def __repr__(self):
        text = str(self)
        if len(text) > 64:
            text = text[:61] + "..."
        return f"ARV({text!r})"

    def bit(self, i: int) -> bool:
        return bool((self.mask >> i) & 1)

    def popcount(self) -> int:
        return bin(self.mask).count("1")

    def is_canonical(self) -> bool:
        return not _halvable(self.mask, self.level)

    def to_bytes(self) -> bytes:
        """Level byte, then the bits MSB-first (segment 0 = top bit of byte 0)."""
        n = self.size
        nbytes = (n + 7) // 8
        padded = str(self).ljust(nbytes * 8, "0")
        return bytes([self.level]) + int(padded, 2).to_bytes(nbytes, "big")

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0):
        """Decode one ARV at ``offset``; returns ``(arv, new_offset)``."""
        if offset >= len(data):
            raise ArvError(f"truncated ARV at offset {offset}")
        level = data[offset]
        if level > MAX_LEVEL_LIMIT:
            raise ArvError(f"bad ARV level {level} at offset {offset}")
        n = 1 << level
        nbytes = (n + 7) // 8
        end = offset + 1 + nbytes
        if end > len(data):
            raise ArvError(f"truncated ARV body at offset {offset + 1}")
        bits = format(int.from_bytes(data[offset + 1:end], "big"), f"0{nbytes * 8}b")
        if "1" in bits[n:]:
            raise ArvError(f"nonzero ARV padding at offset {offset + 1}")
        mask = int(bits[:n][::-1], 2)
        if mask == 0:
            raise ArvError(f"empty ARV at offset {offset}")
        return cls(level, mask), end


def encoded_size(level: int) -> int:
    return 1 + ((1 << level) + 7) // 8


def _halvable(mask: int, level: int) -> bool:
    if level == 0:
        return False
    n = 1 << level
    return ((mask ^ (mask >> 1)) & _block_mask(n, 1)) == 0


# --- the five operations --------------------------------------------------------


def simplify(v: ARV) -> ARV:
    """Halve the vector while every aligned bit pair agrees."""
    level, mask = v.level, v.mask
    while _halvable(mask, level):
        mask = _even_bits(mask, 1 << level)
        level -= 1
    if level == v.level:
        return v
    return ARV(level, mask, v.saturated)


def extend(v: ARV, target_level: int) -> ARV:
    """Repeat every bit ``2**(target_level - level)`` times.  Not re-simplified."""
    if target_level < v.level:
        raise ArvError(f"cannot extend level {v.level} down to {target_level}")
    if target_level > MAX_LEVEL_LIMIT:
        raise ArvError(f"target level {target_level} above cap")
    return ARV(target_level, _extended_mask(v.mask, v.level, target_level), v.saturated)


@lru_cache(maxsize=1 << 16)
def _extended_mask(mask: int, level: int, target_level: int) -> int:
    while level < target_level:
        mask = _double(mask, 1 << level)
        level += 1
    return mask


def _common(a: ARV, b: ARV):
    level = max(a.level, b.level)
    am = a.mask if a.level == level else _extended_mask(a.mask, a.level, level)
    bm = b.mask if b.level == level else _extended_mask(b.mask, b.level, level)
    return level, am, bm


def merge(a: ARV, b: ARV) -> ARV:
    level, am, bm = _common(a, b)
    return simplify(ARV(level, am | bm, a.saturated or b.saturated))


def arv_match(p: ARV, s: ARV) -> bool:
    """True iff every segment set in ``p`` is also set in ``s``.

    This is the ``(P AND S) XOR P == 0`` test at the finer of the two levels.
    """
    _, pm, sm = _common(p, s)
    return ((pm & sm) ^ pm) == 0


def overlaps(a: ARV, b: ARV) -> bool:
    _, am, bm = _common(a, b)
    return (am & bm) != 0


def build_arv(rng: ValueInterval, limit: DomainLimit, cfg: ArvConfig = ArvConfig()) -> ARV:
    """Encode ``rng`` at the shallowest level whose selected segments fit it.

    The fitting ratio is ``width(rng) / width(union of segments touched)``.
    Point values never pass the ratio test and go straight to
    ``cfg.max_level``.
    """
    if rng.lo < limit.min or rng.hi > limit.max:
        raise DomainError(f"range {rng} outside domain [{limit.min:g},{limit.max:g}]")

    def select(level: int):
        first = limit.segment_index(rng.lo, level)
        last = limit.segment_index(rng.hi, level)
        return first, last

    saturated = False
    if cfg.force_level is not None:
        level = cfg.force_level
        first, last = select(level)
    elif rng.lo == rng.hi:
        level = cfg.max_level
        first, last = select(level)
    else:
        width = rng.width
        for level in range(cfg.max_level + 1):
            first, last = select(level)
            union = limit.segment_bounds(last, level)[1] - limit.segment_bounds(first, level)[0]
            if width >= cfg.alpha * union * (1.0 - 1e-12):
                break
        else:
            saturated = True
    return simplify(ARV(level, _range_mask(first, last), saturated))


def coverage(v: ARV, limit: DomainLimit) -> List[ValueInterval]:
    """Maximal disjoint intervals covered by the set bits, lowest first."""
    out = []
    n = v.size
    w = limit.span / n
    mask = v.mask
    while mask:
        i = (mask & -mask).bit_length() - 1
        run = mask >> i
        k = ((~run) & (run + 1)).bit_length() - 1  # length of the run of ones
        end = i + k
        hi = limit.max if end == n else limit.min + end * w
        out.append(ValueInterval(limit.min + i * w, hi))
        mask &= ~(((1 << k) - 1) << i)
    return out


def coverage_width(v: ARV, limit: DomainLimit) -> float:
    return sum(iv.width for iv in coverage(v, limit))
