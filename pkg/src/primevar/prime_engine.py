"""Exact prime counts in half-open integer windows.

The fast path is an odd-only segmented sieve compiled with numba. Windows
that tile a contiguous span are all counted from one pass over the span.
``count_primes_oracle`` is an unrelated slow path (per-integer
Miller-Rabin) kept for cross-validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvalidArgument

# Window ends must stay well inside int64 for the compiled kernel.
MAX_WINDOW_END = 2**62

# Odd candidates per segment; 128 KiB of uint8 flags sits in L2.
SEGMENT_ODDS = 1 << 17


@dataclass(frozen=True)
class Window:
    """Half-open window ``[start, start + length)``."""

    start: int
    length: int

    def __post_init__(self):
        if self.start < 0 or self.length < 0:
            raise InvalidArgument(f"window must be non-negative, got {self}")
        if self.start + self.length > MAX_WINDOW_END:
            raise InvalidArgument(f"window end {self.end} exceeds {MAX_WINDOW_END}")

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class BasePrimeTable:
    limit: int
    primes: np.ndarray

    def covers(self, end: int) -> bool:
        """True if every composite below ``end`` has a factor in the table."""
        return self.limit * self.limit >= end

    def __len__(self):
        return len(self.primes)


def build_base_primes(limit: int) -> BasePrimeTable:
    """Classic sieve of Eratosthenes over ``[2, limit]``."""
    limit = int(limit)
    if limit < 2:
        raise InvalidArgument(f"base-prime limit must be >= 2, got {limit}")
    is_prime = np.ones(limit + 1, dtype=bool)
    is_prime[:2] = False
    is_prime[4::2] = False
    for p in range(3, math.isqrt(limit) + 1, 2):
        if is_prime[p]:
            is_prime[p * p :: 2 * p] = False
    primes = np.flatnonzero(is_prime).astype(np.int64)
    primes.flags.writeable = False
    return BasePrimeTable(limit=limit, primes=primes)


def table_for(end: int) -> BasePrimeTable:
    """Smallest adequate table for windows ending at or before ``end``."""
    return build_base_primes(max(2, math.isqrt(max(end, 0)) + 1))


@numba.njit(cache=True)
def _tiled_counts(lo, h, m, primes, seg_odds):
    counts = np.zeros(m, np.int64)
    if m == 0 or h == 0:
        return counts
    hi = lo + h * m
    if lo <= 2 and 2 < hi:
        counts[(2 - lo) // h] += 1
    first = lo if lo % 2 == 1 else lo + 1
    if first < 3:
        first = 3
    if hi <= first:
        return counts
    n_odds = (hi - first + 1) // 2
    flags = np.empty(seg_odds, np.uint8)
    done = 0
    while done < n_odds:
        seg_len = min(seg_odds, n_odds - done)
        seg_lo = first + 2 * done
        seg_last = seg_lo + 2 * (seg_len - 1)
        flags[:seg_len] = 1
        for j in range(1, primes.shape[0]):
            p = primes[j]
            pp = p * p
            if pp > seg_last:
                break
            if pp >= seg_lo:
                s = pp
            else:
                s = ((seg_lo + p - 1) // p) * p
                if s % 2 == 0:
                    s += p
            k = (s - seg_lo) // 2
            while k < seg_len:
                flags[k] = 0
                k += p
        # walk window by window to avoid a division per candidate
        k = 0
        while k < seg_len:
            n = seg_lo + 2 * k
            win = (n - lo) // h
            win_end = lo + (win + 1) * h
            stop = min(seg_len, (win_end - seg_lo + 1) // 2)
            c = 0
            while k < stop:
                c += flags[k]
                k += 1
            counts[win] += c
        done += seg_len
    return counts


def _check_table(end: int, table: BasePrimeTable):
    if not table.covers(end):
        raise InvalidArgument(
            f"base-prime table limit {table.limit} too small for window end {end}; "
            f"need limit >= {math.isqrt(end - 1) + 1}"
        )


def count_tiled(start: int, length: int, count: int, table: BasePrimeTable) -> np.ndarray:
    """Prime counts of ``count`` contiguous windows of ``length`` from ``start``.

    Returns an int64 array; entry ``i`` counts primes in
    ``[start + i*length, start + (i+1)*length)``.
    """
    if count < 0:
        raise InvalidArgument("window count must be non-negative")
    Window(start, length * count)
    _check_table(start + length * count, table)
    return _tiled_counts(start, length, count, table.primes, SEGMENT_ODDS)


def count_primes(window: Window, table: BasePrimeTable) -> int:
    """Exact number of primes ``p`` with ``start <= p < start + length``."""
    if window.length == 0:
        return 0
    return int(count_tiled(window.start, window.length, 1, table)[0])


# --- oracle ---------------------------------------------------------------

_SMALL_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)

# (bound, bases): bases are a deterministic witness set for every n < bound.
_MR_BASES = (
    (2_047, (2,)),
    (1_373_653, (2, 3)),
    (25_326_001, (2, 3, 5)),
    (3_215_031_751, (2, 3, 5, 7)),
    (2_152_302_898_747, (2, 3, 5, 7, 11)),
    (3_474_749_660_383, (2, 3, 5, 7, 11, 13)),
    (341_550_071_728_321, (2, 3, 5, 7, 11, 13, 17)),
    (3_825_123_056_546_413_051, (2, 3, 5, 7, 11, 13, 17, 19, 23)),
    (318_665_857_834_031_151_167_461, _SMALL_PRIMES),
)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for ``n < 3.18e23``."""
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    if n < 41 * 41:
        return True
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for bound, bases in _MR_BASES:
        if n < bound:
            break
    else:
        raise InvalidArgument(f"{n} is beyond the deterministic Miller-Rabin range")
    for a in bases:
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def count_primes_oracle(window: Window) -> int:
    """Slow independent count by testing every integer in the window."""
    return sum(1 for n in range(window.start, window.end) if is_prime(n))
