"""Bitmask machinery for the subset lattice of n sources.

Subsets of the sources are encoded as integer masks: bit i set <=> source i
(0-based) belongs to the subset.  A set function over n sources is stored as
an array of length 2**n indexed by mask, so index 0 is the empty set and
(1 << n) - 1 is the full set.  Everything here is pure and cached per n.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import permutations

import numpy as np

# 2**n values are stored densely; beyond this the representation is unusable.
MAX_SOURCES = 24
# n! permutation expansions are only materialized up to here.
MAX_LCS_SOURCES = 8


def check_n(n: int) -> int:
    n = int(n)
    if not 1 <= n <= MAX_SOURCES:
        raise ValueError(f"number of sources must be in 1..{MAX_SOURCES}, got {n}")
    return n


def full_mask(n: int) -> int:
    return (1 << n) - 1


@lru_cache(maxsize=None)
def cardinality(n: int) -> np.ndarray:
    """Popcount of every mask 0..2**n-1."""
    card = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        lo = 1 << i
        card[lo : 2 * lo] = card[:lo] + 1
    return card


@lru_cache(maxsize=None)
def membership(n: int) -> np.ndarray:
    """Boolean (2**n, n) matrix: membership[mask, i] <=> source i in mask."""
    masks = np.arange(1 << n, dtype=np.int64)
    return ((masks[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)


@lru_cache(maxsize=None)
def singleton_masks(n: int) -> np.ndarray:
    return (1 << np.arange(n)).astype(np.int64)


@lru_cache(maxsize=None)
def delta_masks(n: int) -> np.ndarray:
    """Masks of cardinality >= 2 in ascending mask order (2**n - n - 1 of them)."""
    card = cardinality(n)
    return np.flatnonzero(card >= 2).astype(np.int64)


@lru_cache(maxsize=None)
def delta_index(n: int) -> np.ndarray:
    """Inverse of delta_masks: position of each mask in the delta array, -1 elsewhere."""
    idx = np.full(1 << n, -1, dtype=np.int64)
    idx[delta_masks(n)] = np.arange(len(delta_masks(n)))
    return idx


def children_of(mask: int) -> list[int]:
    """Immediate children (one source removed) of a mask, in removed-bit order."""
    return [mask ^ (1 << i) for i in range(mask.bit_length()) if (mask >> i) & 1]


@lru_cache(maxsize=None)
def levels(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Lattice levels for cardinality 2..n, ascending.

    Each level is (masks, children) with masks shape (m_k,) and children shape
    (m_k, k) listing the immediate (cardinality k-1) children of each mask.
    """
    card = cardinality(n)
    out = []
    for k in range(2, n + 1):
        masks = np.flatnonzero(card == k).astype(np.int64)
        ch = np.array([children_of(int(m)) for m in masks], dtype=np.int64)
        out.append((masks, ch))
    return tuple(out)


@lru_cache(maxsize=None)
def perm_prefix_masks(n: int) -> tuple[tuple[tuple[int, ...], ...], np.ndarray]:
    """All n! orders with their prefix masks.

    Returns (orders, prefix) where orders[p] is a tuple of source indices and
    prefix[p, j] is the mask of the first j+1 sources in that order.
    """
    if n > MAX_LCS_SOURCES:
        raise ValueError(
            f"permutation expansion limited to n <= {MAX_LCS_SOURCES} (n! blow-up), got {n}"
        )
    orders = tuple(permutations(range(n)))
    prefix = np.zeros((len(orders), n), dtype=np.int64)
    for p, order in enumerate(orders):
        mask = 0
        for j, src in enumerate(order):
            mask |= 1 << src
            prefix[p, j] = mask
    return orders, prefix


def iter_submasks(mask: int):
    """All submasks of mask, including 0 and mask itself."""
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask
