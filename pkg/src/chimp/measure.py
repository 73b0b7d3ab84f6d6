"""Fuzzy measures (capacities) on n sources and their Mobius representation.

A measure assigns a nonnegative value to every subset of the sources, is zero
on the empty set, and never decreases when a subset grows.  Values are stored
as a dense array indexed by subset bitmask (see lattice.py).  Normalization
g(X) = 1 is deliberately not part of the type; it is an optional validation
flag, since the learning code does not pin the top of the lattice.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import lattice

#: Monotonicity deficits at or below this are treated as float noise.
DEFAULT_TOL = 1e-12


class Violation(NamedTuple):
    kind: str  # "boundary" | "monotonicity" | "normalization"
    subset: int
    superset: int | None
    gap: float


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def _check_values(n: int, values, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (1 << n,):
        raise ValueError(f"{name} must have length 2**n = {1 << n}, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} contains non-finite entries")
    return values


@dataclass(frozen=True)
class FuzzyMeasure:
    """Capacity over n sources; values[mask] = g(subset encoded by mask).

    The constructor only enforces structure (length, finiteness).  Whether the
    values actually form a capacity is the job of :func:`validate`, because
    intermediate objects (e.g. a Zeta transform of arbitrary coefficients) may
    legitimately violate monotonicity.
    """

    n: int
    values: np.ndarray

    def __post_init__(self):
        n = lattice.check_n(self.n)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "values", _freeze(_check_values(n, self.values, "values")))

    @property
    def total(self) -> float:
        """g(X), the value of the full set."""
        return float(self.values[-1])

    def violations(self, tol: float = DEFAULT_TOL, require_normalized: bool = False):
        return validate(self, tol=tol, require_normalized=require_normalized)

    def scaled_to_unit(self) -> "FuzzyMeasure":
        """Measure rescaled so g(X) = 1 (for scale-free comparisons)."""
        if self.total <= 0:
            raise ValueError("cannot rescale: g(X) must be positive")
        return FuzzyMeasure(self.n, self.values / self.total)


@dataclass(frozen=True)
class MobiusMeasure:
    """Mobius coefficients of a set function; coeffs[0] must be 0."""

    n: int
    coeffs: np.ndarray

    def __post_init__(self):
        n = lattice.check_n(self.n)
        object.__setattr__(self, "n", n)
        coeffs = _check_values(n, self.coeffs, "coeffs")
        if coeffs[0] != 0.0:
            raise ValueError(f"coeffs[0] (empty set) must be 0, got {coeffs[0]}")
        object.__setattr__(self, "coeffs", _freeze(coeffs))

    @property
    def total(self) -> float:
        """Sum of all coefficients, equal to g(X) of the corresponding measure."""
        return float(self.coeffs.sum())


def validate(g: FuzzyMeasure, tol: float = DEFAULT_TOL, require_normalized: bool = False):
    """All boundary/monotonicity violations of g; empty list <=> valid capacity.

    Checks the n * 2**(n-1) single-element-superset pairs, which is sufficient
    for full monotonicity.  Deficits of at most ``tol`` are absorbed as float
    noise.  Negative values surface through the (empty set, singleton) pairs.
    """
    out: list[Violation] = []
    v = g.values
    if abs(v[0]) > tol:
        out.append(Violation("boundary", 0, None, abs(float(v[0]))))
    masks = np.arange(1 << g.n)
    for i in range(g.n):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        gap = v[without] - v[without | bit]
        for a, d in zip(without[gap > tol], gap[gap > tol]):
            out.append(Violation("monotonicity", int(a), int(a) | bit, float(d)))
    if require_normalized and abs(g.total - 1.0) > tol:
        out.append(Violation("normalization", (1 << g.n) - 1, None, abs(g.total - 1.0)))
    return out


def _zeta_inplace(values: np.ndarray, n: int) -> None:
    w = values.reshape((2,) * n)
    for axis in range(n):
        hi = [slice(None)] * n
        lo = [slice(None)] * n
        hi[axis], lo[axis] = 1, 0
        w[tuple(hi)] += w[tuple(lo)]


def _mobius_inplace(values: np.ndarray, n: int) -> None:
    w = values.reshape((2,) * n)
    for axis in range(n):
        hi = [slice(None)] * n
        lo = [slice(None)] * n
        hi[axis], lo[axis] = 1, 0
        w[tuple(hi)] -= w[tuple(lo)]


def mobius(g: FuzzyMeasure) -> MobiusMeasure:
    """Mobius transform: coeffs[A] = sum over B subseteq A of (-1)^|A\\B| g(B)."""
    if g.values[0] != 0.0:
        raise ValueError("mobius transform requires g(empty set) = 0")
    coeffs = g.values.copy()
    _mobius_inplace(coeffs, g.n)
    return MobiusMeasure(g.n, coeffs)


def zeta(m: MobiusMeasure) -> FuzzyMeasure:
    """Zeta transform: values[A] = sum over B subseteq A of coeffs[B].

    Inverse of :func:`mobius`.  The result may violate monotonicity for
    arbitrary coefficients; it is returned anyway and carries its violation
    list via :meth:`FuzzyMeasure.violations`.
    """
    values = m.coeffs.copy()
    _zeta_inplace(values, m.n)
    return FuzzyMeasure(m.n, values)


def make_special(kind: str, n: int, weights=None) -> FuzzyMeasure:
    """Measures recovering the classic operators: max, min, mean, los(weights).

    los builds the cardinality-symmetric measure g(A) = w_1 + ... + w_|A|, the
    order-statistic aggregation with weight w_j on the j-th largest input.
    """
    n = lattice.check_n(n)
    card = lattice.cardinality(n)
    if kind == "max":
        values = np.ones(1 << n)
        values[0] = 0.0
    elif kind == "min":
        values = np.zeros(1 << n)
        values[-1] = 1.0
    elif kind == "mean":
        values = card / n
    elif kind == "los":
        if weights is None:
            raise ValueError("los measure needs a weight vector")
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise ValueError(f"los weights must have length {n}, got shape {w.shape}")
        if np.any(w < 0) or not np.isfinite(w).all():
            raise ValueError("los weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"los weights must sum to 1, got {w.sum()!r}")
        cum = np.concatenate([[0.0], np.cumsum(w)])
        values = cum[card]
    else:
        raise ValueError(f"unknown special measure kind {kind!r}")
    return FuzzyMeasure(n, values)


def k_truncate(m: MobiusMeasure, k: int) -> MobiusMeasure:
    """Zero out Mobius coefficients above cardinality k (k-additive restriction)."""
    if not 1 <= k <= m.n:
        raise ValueError(f"k must be in 1..{m.n}, got {k}")
    coeffs = m.coeffs.copy()
    coeffs[lattice.cardinality(m.n) > k] = 0.0
    return MobiusMeasure(m.n, coeffs)


# --- JSON round trip (bit-faithful: repr of a double is shortest-exact) ---

def to_json_dict(obj: FuzzyMeasure | MobiusMeasure) -> dict:
    if isinstance(obj, FuzzyMeasure):
        return {"n": obj.n, "values": obj.values.tolist()}
    return {"n": obj.n, "coeffs": obj.coeffs.tolist()}


def from_json_dict(d: dict) -> FuzzyMeasure | MobiusMeasure:
    if "values" in d:
        return FuzzyMeasure(int(d["n"]), np.asarray(d["values"], dtype=float))
    if "coeffs" in d:
        return MobiusMeasure(int(d["n"]), np.asarray(d["coeffs"], dtype=float))
    raise ValueError("measure JSON needs a 'values' or 'coeffs' field")


def save_measure(obj: FuzzyMeasure | MobiusMeasure, path) -> None:
    Path(path).write_text(json.dumps(to_json_dict(obj)) + "\n")


def load_measure(path) -> FuzzyMeasure | MobiusMeasure:
    return from_json_dict(json.loads(Path(path).read_text()))
