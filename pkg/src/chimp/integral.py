"""Four equivalent evaluators of the Choquet integral plus the LCS expansion.

The sorted-difference form (`chi_sort`) is the reference evaluator and the
oracle everything else is tested against.  Observations are plain float
arrays h of length n (h[i] = input from source i); inputs may be negative,
which the max/min decomposition form supports as well.

Tie rule: when several inputs are equal, the integral is evaluated for every
sort order compatible with the ties and the results are averaged.  For a
valid capacity all compatible orders give the same value, so this only
matters for non-monotone value vectors (which occur mid-training).
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations, product
from math import factorial

import numpy as np

from . import lattice
from .measure import FuzzyMeasure, MobiusMeasure

#: Averaging over tied sort orders enumerates per-group permutations; groups
#: larger than this are rejected instead of exploding factorially.
MAX_TIE_GROUP = 6

Observation = np.ndarray


def _check_obs(n: int, h) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.shape != (n,):
        raise ValueError(f"observation must have length {n}, got shape {h.shape}")
    if not np.all(np.isfinite(h)):
        raise ValueError("observation contains non-finite entries")
    return h


@dataclass(frozen=True)
class SortPermutation:
    """Stable descending order of an observation with its tie structure.

    order: source indices sorted by decreasing input (original index order
    within ties).  tie_groups: consecutive runs of equal inputs, as tuples of
    source indices; singleton runs included.
    """

    order: tuple[int, ...]
    tie_groups: tuple[tuple[int, ...], ...]

    @property
    def has_ties(self) -> bool:
        return any(len(grp) > 1 for grp in self.tie_groups)


def sort_observation(h) -> SortPermutation:
    h = np.asarray(h, dtype=float)
    order = np.argsort(-h, kind="stable")
    groups: list[tuple[int, ...]] = []
    start = 0
    for j in range(1, len(order) + 1):
        if j == len(order) or h[order[j]] != h[order[start]]:
            groups.append(tuple(int(s) for s in order[start:j]))
            start = j
    return SortPermutation(tuple(int(s) for s in order), tuple(groups))


def iter_compatible_orders(sp: SortPermutation, tie_limit: int = MAX_TIE_GROUP):
    """All descending sort orders compatible with the tie structure."""
    for grp in sp.tie_groups:
        if len(grp) > tie_limit:
            raise ValueError(
                f"tie group of size {len(grp)} exceeds limit {tie_limit}; "
                "observation is too degenerate to enumerate sort orders"
            )
    for combo in product(*(permutations(grp) for grp in sp.tie_groups)):
        yield tuple(src for grp in combo for src in grp)


def _chi_for_order(values: np.ndarray, h: np.ndarray, order) -> float:
    total = 0.0
    mask = 0
    prev = 0.0
    for src in order:
        mask |= 1 << src
        g_cur = values[mask]
        total += h[src] * (g_cur - prev)
        prev = g_cur
    return total


def chi_sort(g: FuzzyMeasure, h) -> float:
    """Choquet integral in sorted-difference form (the oracle evaluator)."""
    h = _check_obs(g.n, h)
    sp = sort_observation(h)
    if not sp.has_ties:
        return _chi_for_order(g.values, h, sp.order)
    total = 0.0
    count = 0
    for order in iter_compatible_orders(sp):
        total += _chi_for_order(g.values, h, order)
        count += 1
    return total / count


def chi_sort_batch(g: FuzzyMeasure, rows) -> np.ndarray:
    """chi_sort over the rows of an (M, n) array, one stable sort order per row.

    Skips tie averaging, which is exact for valid capacities (tied inputs make
    the compatible orders agree); do not use on non-monotone value vectors.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != g.n:
        raise ValueError(f"rows must have shape (M, {g.n}), got {rows.shape}")
    order = np.argsort(-rows, axis=1, kind="stable")
    prefix = np.bitwise_or.accumulate(1 << order, axis=1)
    gv = g.values[prefix]
    gprev = np.concatenate([np.zeros((len(rows), 1)), gv[:, :-1]], axis=1)
    sorted_h = np.take_along_axis(rows, order, axis=1)
    return np.einsum("mj,mj->m", sorted_h, gv - gprev)


def chi_mobius(m: MobiusMeasure, h) -> float:
    """Choquet integral from Mobius coefficients: sum of m(A) * min over A."""
    h = _check_obs(m.n, h)
    min_in = _min_inside(h, m.n)
    return float(m.coeffs[1:] @ min_in[1:])


def chi_k_additive(m: MobiusMeasure, k: int, h) -> float:
    """Mobius-form integral restricted to coefficients of cardinality <= k."""
    if not 1 <= k <= m.n:
        raise ValueError(f"k must be in 1..{m.n}, got {k}")
    h = _check_obs(m.n, h)
    min_in = _min_inside(h, m.n)
    keep = np.flatnonzero(lattice.cardinality(m.n)[1:] <= k) + 1
    return float(m.coeffs[keep] @ min_in[keep])


def _min_inside(h: np.ndarray, n: int) -> np.ndarray:
    """min of h over each subset; +inf at the empty set."""
    size = 1 << n
    masks = np.arange(size)
    out = np.full(size, np.inf)
    for i in range(n):
        has = (masks >> i) & 1 == 1
        out[has] = np.minimum(out[has], h[i])
    return out


def _max_inside(h: np.ndarray, n: int) -> np.ndarray:
    """max of h over each subset; -inf at the empty set."""
    size = 1 << n
    masks = np.arange(size)
    out = np.full(size, -np.inf)
    for i in range(n):
        has = (masks >> i) & 1 == 1
        out[has] = np.maximum(out[has], h[i])
    return out


def integrand_values(h, n: int) -> np.ndarray:
    """Weight o(A) of each subset in the max/min decomposition of the integral.

    o(A) = max(0, min over A - max outside A) for proper nonempty subsets and
    o(X) = min over all inputs; o(empty) = 0.  At most n entries are nonzero:
    the nested chain of the descending sort order.
    """
    h = _check_obs(n, h)
    full = lattice.full_mask(n)
    min_in = _min_inside(h, n)
    max_out = _max_inside(h, n)[np.arange(1 << n) ^ full]
    o = np.maximum(0.0, min_in - max_out)
    o[0] = 0.0
    o[full] = min_in[full]
    return o


def chi_maxmin(g: FuzzyMeasure, h) -> float:
    """Choquet integral as the dot product of g with the subset weights o(A).

    Accepts non-monotone value vectors (needed mid-training); agreement with
    chi_sort is only guaranteed for valid capacities.
    """
    return float(g.values @ integrand_values(h, g.n))


@dataclass(frozen=True)
class LcsWeights:
    """All n! linear-convex-sum weight vectors hidden inside a measure.

    weights[p, j] = g(first j+1 sources of orders[p]) - g(first j), the
    coefficient applied to the (j+1)-th largest input when the data sorts
    according to orders[p].  n * n! scalars expand from 2**n measure values.
    """

    n: int
    orders: tuple[tuple[int, ...], ...]
    weights: np.ndarray


def lcs_expand(g: FuzzyMeasure) -> LcsWeights:
    orders, prefix = lattice.perm_prefix_masks(g.n)
    gv = g.values[prefix]
    gprev = np.concatenate([np.zeros((len(orders), 1)), gv[:, :-1]], axis=1)
    return LcsWeights(g.n, orders, gv - gprev)


def chimp_select_forward(g: FuzzyMeasure, h) -> float:
    """Selection-network evaluation: n! LCS branches gated by the sort order.

    Every branch computes its dot product with the correspondingly-ordered
    inputs; the gate passes the branch whose order matches the data, averaging
    the gated branches when ties make several orders compatible.
    """
    h = _check_obs(g.n, h)
    lcs = lcs_expand(g)
    orders = np.array(lcs.orders, dtype=np.int64)
    branch_inputs = h[orders]  # (n!, n) inputs as each branch consumes them
    dots = np.einsum("pj,pj->p", branch_inputs, lcs.weights)
    compatible = np.all(branch_inputs[:, :-1] >= branch_inputs[:, 1:], axis=1)
    return float(dots[compatible].sum() / compatible.sum())


def lcs_count(n: int) -> int:
    """Number of scalar weights in the full LCS expansion (n * n!)."""
    return n * factorial(n)
