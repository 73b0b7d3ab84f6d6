"""Introspection indices for a learned measure and its training data.

Four families: per-source quality (Shapley), pairwise interaction
(complementarity vs redundancy), learned-operator identity (distance of the
measure to max/min/mean and to its nearest order-statistic), and data support
(which sort orders and measure variables the training data actually visited,
plus a per-observation trust score).  Since the learner does not pin g(X) to
1, the scale-sensitive indices are reported both raw and rescaled by g(X).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import lattice
from .integral import iter_compatible_orders, sort_observation
from .measure import FuzzyMeasure, validate


def shapley(g: FuzzyMeasure) -> np.ndarray:
    """Average marginal contribution of each source over all coalitions.

    Components sum to g(X) (the efficiency property), so they sum to 1 on a
    normalized measure.
    """
    _require_valid(g)
    n, v = g.n, g.values
    card = lattice.cardinality(n)
    fact = np.array([math.factorial(k) for k in range(n + 1)], dtype=float)
    masks = np.arange(1 << n)
    out = np.empty(n)
    for i in range(n):
        bit = 1 << i
        rest = masks[(masks & bit) == 0]
        w = fact[n - card[rest] - 1] * fact[card[rest]] / fact[n]
        out[i] = float(w @ (v[rest | bit] - v[rest]))
    return out


def interaction(g: FuzzyMeasure) -> np.ndarray:
    """Pairwise interaction matrix: +1 full complementarity, -1 full redundancy.

    Symmetric with an unset (NaN) diagonal.  Zero everywhere for additive
    measures.
    """
    if g.n < 2:
        raise ValueError("interaction needs at least two sources")
    _require_valid(g)
    n, v = g.n, g.values
    card = lattice.cardinality(n)
    fact = np.array([math.factorial(k) for k in range(n + 1)], dtype=float)
    masks = np.arange(1 << n)
    out = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(i + 1, n):
            bi, bj = 1 << i, 1 << j
            rest = masks[(masks & (bi | bj)) == 0]
            w = fact[n - card[rest] - 2] * fact[card[rest]] / fact[n - 1]
            val = float(w @ (v[rest | bi | bj] - v[rest | bi] - v[rest | bj] + v[rest]))
            out[i, j] = out[j, i] = val
    return out


def operator_distances(g: FuzzyMeasure, normalized: bool = False) -> dict[str, float]:
    """RMS distance of the measure to the classic-operator measures.

    Computed over the interior of the lattice (empty and full set excluded,
    where all normalized capacities agree).  The "los" entry is the distance
    to the measure's own per-cardinality average, its nearest
    cardinality-symmetric (order statistic) measure.  With normalized=True the
    measure is first rescaled to g(X) = 1 for scale-free comparison.
    """
    if g.n < 2:
        raise ValueError("operator distances need at least two sources")
    _require_valid(g)
    if normalized:
        g = g.scaled_to_unit()
    from .measure import make_special

    n = g.n
    interior = slice(1, (1 << n) - 1)
    v = g.values[interior]
    card = lattice.cardinality(n)[interior]
    denom = (1 << n) - 2
    out = {}
    for kind in ("max", "min", "mean"):
        t = make_special(kind, n).values[interior]
        out[kind] = float(np.sqrt(np.sum((v - t) ** 2) / denom))
    layer_avg = np.array([v[card == k].mean() for k in range(1, n)])
    out["los"] = float(np.sqrt(np.sum((v - layer_avg[card - 1]) ** 2) / denom))
    return out


def _require_valid(g: FuzzyMeasure) -> None:
    bad = validate(g)
    if bad:
        raise ValueError(f"measure is not a valid capacity ({len(bad)} violations)")


@dataclass(frozen=True)
class WalkStats:
    """Which sort orders (walks) and measure variables the data visited.

    Observations with tied inputs contribute fractional counts, split equally
    over their compatible walks.  variable_counts includes the full set (every
    walk ends there); variable_coverage is over the 2**n - 2 interior
    variables only, so it stays in [0, 1].
    """

    n: int
    m: int
    observed_walks: dict[tuple[int, ...], float]
    walk_coverage: float
    variable_counts: dict[int, float]
    variable_coverage: float
    dominant_walk: tuple[tuple[int, ...], float] | None


def walk_stats(data, dominant_threshold: float = 0.5) -> WalkStats:
    """Tally the nested-subset chains induced by each observation's sort order."""
    rows = np.asarray(data.rows if hasattr(data, "rows") else data, dtype=float)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("walk statistics need a nonempty (M, n) array of observations")
    m, n = rows.shape
    walks: dict[tuple[int, ...], float] = {}
    var_counts: dict[int, float] = {}
    for h in rows:
        orders = list(iter_compatible_orders(sort_observation(h)))
        frac = 1.0 / len(orders)
        for order in orders:
            walks[order] = walks.get(order, 0.0) + frac
            mask = 0
            for src in order:
                mask |= 1 << src
                var_counts[mask] = var_counts.get(mask, 0.0) + frac
    full = lattice.full_mask(n)
    interior_total = (1 << n) - 2
    interior_visited = sum(1 for mask in var_counts if mask != full)
    best = max(walks.items(), key=lambda kv: kv[1])
    share = best[1] / m
    return WalkStats(
        n=n,
        m=m,
        observed_walks=walks,
        walk_coverage=len(walks) / math.factorial(n),
        variable_counts=var_counts,
        variable_coverage=interior_visited / interior_total if interior_total else 1.0,
        dominant_walk=(best[0], share) if share > dominant_threshold else None,
    )


def trust(stats: WalkStats, h) -> float:
    """Fraction of the walk's n measure variables seen in training.

    A query whose chain of nested subsets was fully visited during training
    scores 1; chains through never-visited variables score lower.  Ties
    average over the compatible walks.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (stats.n,):
        raise ValueError(f"observation must have length {stats.n}, got shape {h.shape}")
    orders = list(iter_compatible_orders(sort_observation(h)))
    scores = []
    for order in orders:
        mask = 0
        supported = 0
        for src in order:
            mask |= 1 << src
            if stats.variable_counts.get(mask, 0.0) > 0.0:
                supported += 1
        scores.append(supported / stats.n)
    return float(np.mean(scores))


@dataclass(frozen=True)
class XaiReport:
    n: int
    shapley: np.ndarray
    shapley_normalized: np.ndarray
    interaction: np.ndarray
    interaction_normalized: np.ndarray
    distances: dict[str, float]
    distances_normalized: dict[str, float]
    support: WalkStats
    trust: np.ndarray


def build_report(g: FuzzyMeasure, data, query_rows=None,
                 dominant_threshold: float = 0.5) -> XaiReport:
    """Full introspection report for a measure and its training data.

    trust is evaluated on query_rows when given, otherwise on the training
    rows themselves (where it is 1 by construction).
    """
    stats = walk_stats(data, dominant_threshold=dominant_threshold)
    if stats.n != g.n:
        raise ValueError("measure and data disagree on the number of sources")
    rows = np.asarray(query_rows if query_rows is not None else
                      (data.rows if hasattr(data, "rows") else data), dtype=float)
    phi = shapley(g)
    inter = interaction(g) if g.n >= 2 else np.full((g.n, g.n), np.nan)
    scale = g.total if g.total > 0 else np.nan
    return XaiReport(
        n=g.n,
        shapley=phi,
        shapley_normalized=phi / scale,
        interaction=inter,
        interaction_normalized=inter / scale,
        distances=operator_distances(g),
        distances_normalized=operator_distances(g, normalized=True) if g.total > 0 else {},
        support=stats,
        trust=np.array([trust(stats, h) for h in rows]),
    )


def _walk_key(order: tuple[int, ...]) -> str:
    return ">".join(str(src + 1) for src in order)


def report_to_json_dict(r: XaiReport) -> dict:
    s = r.support
    return {
        "n": r.n,
        "shapley": r.shapley.tolist(),
        "shapley_normalized": r.shapley_normalized.tolist(),
        "interaction": [[None if np.isnan(x) else x for x in row] for row in r.interaction],
        "interaction_normalized": [
            [None if np.isnan(x) else x for x in row] for row in r.interaction_normalized
        ],
        "distances": r.distances,
        "distances_normalized": r.distances_normalized,
        "support": {
            "m": s.m,
            "observed_walks": {_walk_key(k): v for k, v in sorted(s.observed_walks.items())},
            "walk_coverage": s.walk_coverage,
            "variable_counts": {str(k): v for k, v in sorted(s.variable_counts.items())},
            "variable_coverage": s.variable_coverage,
            "dominant_walk": None if s.dominant_walk is None else {
                "order": _walk_key(s.dominant_walk[0]),
                "share": s.dominant_walk[1],
            },
        },
        "trust": r.trust.tolist(),
    }


def render_report(r: XaiReport) -> str:
    """Plain-text summary table of a report."""
    lines = [f"sources: {r.n}"]
    lines.append("shapley (raw | normalized):")
    for i, (a, b) in enumerate(zip(r.shapley, r.shapley_normalized)):
        lines.append(f"  source {i + 1}: {a:.6f} | {b:.6f}")
    lines.append("interaction (normalized):")
    for i in range(r.n):
        row = " ".join(
            "   .   " if i == j else f"{r.interaction_normalized[i, j]:+.4f}"
            for j in range(r.n)
        )
        lines.append(f"  {row}")
    lines.append("operator distances (raw | normalized):")
    for kind in ("max", "min", "mean", "los"):
        rawd = r.distances.get(kind, float("nan"))
        normd = r.distances_normalized.get(kind, float("nan"))
        lines.append(f"  {kind:>4}: {rawd:.6f} | {normd:.6f}")
    s = r.support
    lines.append(
        f"support: {s.m} observations, walk coverage {s.walk_coverage:.4f}, "
        f"variable coverage {s.variable_coverage:.4f}"
    )
    if s.dominant_walk is not None:
        lines.append(
            f"dominant walk: {_walk_key(s.dominant_walk[0])} (share {s.dominant_walk[1]:.3f})"
        )
    else:
        lines.append("dominant walk: none")
    if len(r.trust):
        lines.append(f"trust: mean {r.trust.mean():.4f}, min {r.trust.min():.4f}")
    return "\n".join(lines)


def shapley_svg(r: XaiReport, width: int = 420, height: int = 220) -> str:
    """Tiny standalone SVG bar chart of the normalized Shapley values."""
    values = r.shapley_normalized
    n = len(values)
    pad, base = 30, height - 30
    bar_w = (width - 2 * pad) / max(n, 1)
    top = max(float(values.max()), 1e-9)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<line x1="{pad}" y1="{base}" x2="{width - pad}" y2="{base}" stroke="black"/>',
    ]
    for i, val in enumerate(values):
        bh = (height - 60) * float(val) / top
        x = pad + i * bar_w
        parts.append(
            f'<rect x="{x + 3:.1f}" y="{base - bh:.1f}" width="{bar_w - 6:.1f}" '
            f'height="{bh:.1f}" fill="#4878a8"/>'
        )
        parts.append(
            f'<text x="{x + bar_w / 2:.1f}" y="{base + 14}" font-size="11" '
            f'text-anchor="middle">{i + 1}</text>'
        )
        parts.append(
            f'<text x="{x + bar_w / 2:.1f}" y="{base - bh - 4:.1f}" font-size="10" '
            f'text-anchor="middle">{float(val):.3f}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
