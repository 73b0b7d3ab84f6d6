"""The trainable Choquet network: raw weights to monotone measure to output.

Raw parameters live in all of R.  A ReLU turns each density weight into a
singleton value, and every larger subset is the max of its immediate children
plus a ReLU'd increment, so any parameter vector whatsoever materializes into
a valid capacity.  The integrand side has no weights at all; the output is a
single dot product of measure values with subset weights o(A).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import lattice
from .integral import SortPermutation, _check_obs, _max_inside, _min_inside, sort_observation
from .measure import FuzzyMeasure


@dataclass(frozen=True)
class ChimpParams:
    """Learnable raw weights: one density per source, one increment per tuple.

    raw_delta is indexed by ascending bitmask over the subsets of cardinality
    >= 2 (see lattice.delta_masks); 2**n - 1 raw scalars in total.
    """

    n: int
    raw_density: np.ndarray
    raw_delta: np.ndarray

    def __post_init__(self):
        n = lattice.check_n(self.n)
        object.__setattr__(self, "n", n)
        dens = np.array(self.raw_density, dtype=float, copy=True)
        delt = np.array(self.raw_delta, dtype=float, copy=True)
        if dens.shape != (n,):
            raise ValueError(f"raw_density must have shape ({n},), got {dens.shape}")
        want = (1 << n) - n - 1
        if delt.shape != (want,):
            raise ValueError(f"raw_delta must have shape ({want},), got {delt.shape}")
        if not (np.isfinite(dens).all() and np.isfinite(delt).all()):
            raise ValueError("raw parameters must be finite")
        dens.setflags(write=False)
        delt.setflags(write=False)
        object.__setattr__(self, "raw_density", dens)
        object.__setattr__(self, "raw_delta", delt)

    @classmethod
    def random(cls, n, low=0.1, high=0.2, rng=None) -> "ChimpParams":
        """Uniform init in [low, high); the training default keeps ReLUs alive."""
        rng = np.random.default_rng(rng)
        n = lattice.check_n(n)
        return cls(n, rng.uniform(low, high, n), rng.uniform(low, high, (1 << n) - n - 1))

    @classmethod
    def from_measure(cls, g: FuzzyMeasure) -> "ChimpParams":
        """Raw weights that materialize exactly to a given valid capacity."""
        if g.violations():
            raise ValueError("from_measure needs a valid capacity")
        flat = np.empty(1 << g.n)
        flat[lattice.singleton_masks(g.n)] = g.values[lattice.singleton_masks(g.n)]
        for masks, children in lattice.levels(g.n):
            flat[masks] = g.values[masks] - g.values[children].max(axis=1)
        dm = lattice.delta_masks(g.n)
        return cls(g.n, flat[lattice.singleton_masks(g.n)], flat[dm])


def flat_raw(p: ChimpParams) -> np.ndarray:
    """Raw parameters spread over the full 2**n lattice (index 0 unused)."""
    flat = np.zeros(1 << p.n)
    flat[lattice.singleton_masks(p.n)] = p.raw_density
    flat[lattice.delta_masks(p.n)] = p.raw_delta
    return flat


def params_from_flat(n: int, flat: np.ndarray) -> ChimpParams:
    return ChimpParams(n, flat[lattice.singleton_masks(n)], flat[lattice.delta_masks(n)])


def materialize_flat(raw: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Measure values and child-max auxiliaries for flat raw weights.

    raw has shape (..., 2**n); leading axes are independent parameter vectors.
    Returns (g, gm) of the same shape; gm is meaningful for cardinality >= 2.
    Works level by level so children always exist before their parents.
    """
    g = np.zeros_like(raw)
    singles = lattice.singleton_masks(n)
    g[..., singles] = np.maximum(raw[..., singles], 0.0)
    gm = np.zeros_like(raw)
    for masks, children in lattice.levels(n):
        level_max = g[..., children].max(axis=-1)
        gm[..., masks] = level_max
        g[..., masks] = level_max + np.maximum(raw[..., masks], 0.0)
    return g, gm


@dataclass(frozen=True)
class MaterializedMeasure:
    """A measure built from raw weights, with the bookkeeping backprop needs.

    gmax_aux[A] = max over the immediate children of A (cardinality >= 2);
    argmax_children[A] = the full set of children attaining that max, so ties
    can split gradient equally.
    """

    g: FuzzyMeasure
    gmax_aux: np.ndarray
    argmax_children: dict[int, tuple[int, ...]]


def materialize(p: ChimpParams) -> MaterializedMeasure:
    """Raw weights -> valid capacity.  Total function: any input is legal."""
    gv, gm = materialize_flat(flat_raw(p), p.n)
    argmax: dict[int, tuple[int, ...]] = {}
    for masks, children in lattice.levels(p.n):
        child_vals = gv[children]
        ties = child_vals == gm[masks][:, None]
        for row, mask in enumerate(masks):
            argmax[int(mask)] = tuple(sorted(int(c) for c in children[row][ties[row]]))
    return MaterializedMeasure(FuzzyMeasure(p.n, gv), gm, argmax)


def normalize_option(mm: MaterializedMeasure) -> FuzzyMeasure:
    """Optional post-hoc clip of the measure at 1 (upper boundary condition).

    Off by default everywhere: learning does not require g(X) = 1, and the
    clip is only for consumers that do.  Monotonicity survives the clip.
    """
    return FuzzyMeasure(mm.g.n, np.minimum(mm.g.values, 1.0))


@dataclass(frozen=True)
class IntegrandVector:
    """Subset weights o(A) for one observation plus reusable sort metadata.

    o is indexed by mask with o[0] = 0.  min_inside / max_outside are the
    per-subset min/max terms whose argmins/argmaxes the input gradients need.
    """

    n: int
    o: np.ndarray
    min_inside: np.ndarray
    max_outside: np.ndarray
    sort: SortPermutation


def integrand_rows(rows) -> np.ndarray:
    """Integrand weights o for every row of an (M, n) array, shape (M, 2**n).

    Batch form of :func:`integrand` without the per-row sort metadata; this is
    what the training loops precompute, since the integrand has no weights.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2:
        raise ValueError(f"rows must be 2-D (M, n), got shape {rows.shape}")
    m, n = rows.shape
    lattice.check_n(n)
    size = 1 << n
    masks = np.arange(size)
    min_in = np.full((m, size), np.inf)
    max_in = np.full((m, size), -np.inf)
    for i in range(n):
        has = ((masks >> i) & 1) == 1
        min_in[:, has] = np.minimum(min_in[:, has], rows[:, i : i + 1])
        max_in[:, has] = np.maximum(max_in[:, has], rows[:, i : i + 1])
    o = np.maximum(0.0, min_in - max_in[:, masks ^ (size - 1)])
    o[:, 0] = 0.0
    o[:, -1] = min_in[:, -1]
    return o


def integrand(h, n: int | None = None) -> IntegrandVector:
    """Evaluate the weight-free integrand network at one observation."""
    h = np.asarray(h, dtype=float)
    n = h.shape[0] if n is None else n
    h = _check_obs(n, h)
    full = lattice.full_mask(n)
    min_in = _min_inside(h, n)
    max_out = _max_inside(h, n)[np.arange(1 << n) ^ full]
    o = np.maximum(0.0, min_in - max_out)
    o[0] = 0.0
    o[full] = min_in[full]
    return IntegrandVector(n, o, min_in, max_out, sort_observation(h))


@dataclass(frozen=True)
class ForwardCache:
    """Everything the backward pass reuses from one forward evaluation."""

    h: np.ndarray
    raw: np.ndarray  # flat copy, for staleness checks and ReLU activity
    measure: MaterializedMeasure
    iv: IntegrandVector
    relu_density: np.ndarray
    relu_delta: np.ndarray
    y: float


def forward(p: ChimpParams, h) -> tuple[float, ForwardCache]:
    """Network output y = sum over A of g(A) o(A), with a backward cache."""
    h = _check_obs(p.n, h)
    mm = materialize(p)
    iv = integrand(h, p.n)
    y = float(mm.g.values @ iv.o)
    cache = ForwardCache(
        h=h.copy(),
        raw=flat_raw(p),
        measure=mm,
        iv=iv,
        relu_density=p.raw_density > 0.0,
        relu_delta=p.raw_delta > 0.0,
        y=y,
    )
    return y, cache


class FlopCount(NamedTuple):
    o_cost: int  # exact elementary-op count of the integrand network
    g_cost: int  # upper bound for the measure network
    dot_cost: int  # combine step


def flop_count(n: int) -> FlopCount:
    """Elementary-operation counts of the three network stages.

    A min/max over k elements costs k, a subtraction 1, a ReLU 2 (max against
    zero).  The integrand count is exact: (2**n - 2)(n + 3) + n.  The measure
    count is the 2**n (n + 1) bound; the dot product is 2n.
    """
    n = lattice.check_n(n)
    return FlopCount(
        o_cost=((1 << n) - 2) * (n + 3) + n,
        g_cost=(1 << n) * (n + 1),
        dot_cost=2 * n,
    )


class OpCounter:
    """Tallies elementary operations while mirroring the network computation.

    Counting convention matches flop_count: reductions cost their arity,
    subtraction costs 1, and max-against-zero costs 2.
    """

    def __init__(self):
        self.ops = 0

    def min(self, values):
        self.ops += len(values)
        return min(values)

    def max(self, values):
        self.ops += len(values)
        return max(values)

    def sub(self, a, b):
        self.ops += 1
        return a - b

    def relu(self, x):
        self.ops += 2
        return max(x, 0.0)


def count_integrand_ops(h, counter: OpCounter | None = None) -> int:
    """Run the integrand computation through counted primitives; returns ops.

    The computed o values are checked against :func:`integrand` so the count
    certifies the real computation rather than an idle formula.
    """
    h = np.asarray(h, dtype=float)
    n = len(h)
    c = OpCounter() if counter is None else counter
    ref = integrand(h, n).o
    full = lattice.full_mask(n)
    for mask in range(1, full):
        inside = [h[i] for i in range(n) if (mask >> i) & 1]
        outside = [h[i] for i in range(n) if not (mask >> i) & 1]
        o = c.relu(c.sub(c.min(inside), c.max(outside)))
        if o != ref[mask]:
            raise AssertionError(f"counted integrand mismatch at mask {mask}")
    if c.min([h[i] for i in range(n)]) != ref[full]:
        raise AssertionError("counted integrand mismatch at the full set")
    return c.ops


def count_measure_ops(p: ChimpParams, counter: OpCounter | None = None) -> int:
    """Counted materialization; must stay within the flop_count g bound."""
    c = OpCounter() if counter is None else counter
    flat = flat_raw(p)
    ref = materialize(p).g.values
    g = np.zeros(1 << p.n)
    for mask in lattice.singleton_masks(p.n):
        g[mask] = c.relu(flat[mask])
    for masks, children in lattice.levels(p.n):
        for row, mask in enumerate(masks):
            g[mask] = c.max([g[ch] for ch in children[row]]) + c.relu(flat[mask])
    if not np.array_equal(g, ref):
        raise AssertionError("counted materialization mismatch")
    return c.ops


# --- params JSON (raw_delta keyed by mask for order independence) ---

def params_to_json_dict(p: ChimpParams) -> dict:
    dm = lattice.delta_masks(p.n)
    return {
        "n": p.n,
        "raw_density": p.raw_density.tolist(),
        "raw_delta": {str(int(m)): float(v) for m, v in zip(dm, p.raw_delta)},
    }


def params_from_json_dict(d: dict) -> ChimpParams:
    n = int(d["n"])
    dm = lattice.delta_masks(n)
    delta_map = {int(k): float(v) for k, v in d["raw_delta"].items()}
    missing = [m for m in dm.tolist() if m not in delta_map]
    if missing:
        raise ValueError(f"raw_delta is missing masks {missing[:5]}")
    extra = set(delta_map) - set(dm.tolist())
    if extra:
        raise ValueError(f"raw_delta has unexpected masks {sorted(extra)[:5]}")
    return ChimpParams(n, np.asarray(d["raw_density"], dtype=float),
                       np.array([delta_map[int(m)] for m in dm]))


def save_params(p: ChimpParams, path) -> None:
    Path(path).write_text(json.dumps(params_to_json_dict(p)) + "\n")


def load_params(path) -> ChimpParams:
    return params_from_json_dict(json.loads(Path(path).read_text()))
