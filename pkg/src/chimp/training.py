"""Analytic gradients, SGD fitting, and finite-difference verification.

The objective is squared error E = 1/2 sum_k (l_k - y_k)^2 with per-sample
signal e_k = y_k - l_k.  Gradients flow through three kinds of kink, each
handled with the normalized-indicator rule (ties split the derivative
equally): the ReLU on every raw weight (strict, zero gradient at 0), the max
over children inside the measure lattice, and the min/max/clip structure of
the integrand.  The SGD engine below runs any number of independent fits in
lockstep as one batched numpy computation; a single fit is the B = 1 case.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lattice
from .integral import _check_obs
from .network import (
    ChimpParams,
    ForwardCache,
    flat_raw,
    forward,
    integrand,
    integrand_rows,
    materialize,
    materialize_flat,
    params_from_flat,
)


class NumericError(RuntimeError):
    """Optimization produced a non-finite loss."""


def loss(labels, outputs) -> float:
    """Squared-error objective E = 1/2 sum (l - y)^2."""
    labels = np.asarray(labels, dtype=float)
    outputs = np.asarray(outputs, dtype=float)
    if labels.shape != outputs.shape:
        raise ValueError(f"labels {labels.shape} and outputs {outputs.shape} differ in shape")
    return float(0.5 * np.sum((labels - outputs) ** 2))


def error_signals(labels, outputs) -> np.ndarray:
    """Per-sample signal e_k = y_k - l_k (the dE/dy of each sample)."""
    labels = np.asarray(labels, dtype=float)
    outputs = np.asarray(outputs, dtype=float)
    if labels.shape != outputs.shape:
        raise ValueError(f"labels {labels.shape} and outputs {outputs.shape} differ in shape")
    return outputs - labels


def mse(labels, outputs) -> float:
    labels = np.asarray(labels, dtype=float)
    outputs = np.asarray(outputs, dtype=float)
    if labels.shape != outputs.shape:
        raise ValueError(f"labels {labels.shape} and outputs {outputs.shape} differ in shape")
    return float(np.mean((labels - outputs) ** 2))


def max_derivative_weights(values) -> np.ndarray:
    """Normalized argmax indicators: 1/|ties| on each maximizer, 0 elsewhere."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("cannot take the max derivative of an empty list")
    w = (values == values.max()).astype(float)
    return w / w.sum()


def min_derivative_weights(values) -> np.ndarray:
    """Normalized argmin indicators (same rule on the min side)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("cannot take the min derivative of an empty list")
    w = (values == values.min()).astype(float)
    return w / w.sum()


@dataclass
class GradientBundle:
    d_raw_density: np.ndarray
    d_raw_delta: np.ndarray
    loss: float
    d_inputs: np.ndarray | None = None


def _backprop_lattice(dg: np.ndarray, g: np.ndarray, gm: np.ndarray, n: int) -> np.ndarray:
    """Fold dE/dg(A) of every subset into its argmax children, in place.

    dg, g, gm have shape (B, 2**n).  Levels are processed top-down so each
    subset's gradient is complete before it is distributed; ties in the child
    max split the gradient equally.
    """
    rows = np.arange(dg.shape[0])[:, None, None]
    for masks, children in reversed(lattice.levels(n)):
        child_vals = g[:, children]  # (B, m_k, k)
        w = (child_vals == gm[:, masks][:, :, None]).astype(float)
        w /= w.sum(axis=-1, keepdims=True)
        np.add.at(dg, (rows, children[None, :, :]), w * dg[:, masks][:, :, None])
    return dg


def _check_cache(p: ChimpParams, h: np.ndarray, cache: ForwardCache) -> None:
    if not np.array_equal(cache.h, h) or not np.array_equal(cache.raw, flat_raw(p)):
        raise ValueError("stale cache: forward() was run on different (params, observation)")


def backward_params(p: ChimpParams, h, label, cache: ForwardCache) -> GradientBundle:
    """dE/d(raw weights) for one observation, by the lattice chain rule.

    dE/dg(A) collects the direct term e * o(A) plus every ancestor whose
    child-max chain passes through A; the raw gradients then gate through the
    ReLU activity indicators.  For three sources this reduces to the explicit
    per-variable formulas tested in tests/reference_n3.py.
    """
    h = _check_obs(p.n, h)
    _check_cache(p, h, cache)
    e = cache.y - float(label)
    dg = (e * cache.iv.o)[None, :].copy()
    _backprop_lattice(dg, cache.measure.g.values[None, :], cache.measure.gmax_aux[None, :], p.n)
    d_flat = dg[0] * (cache.raw > 0.0)
    return GradientBundle(
        d_raw_density=d_flat[lattice.singleton_masks(p.n)],
        d_raw_delta=d_flat[lattice.delta_masks(p.n)],
        loss=0.5 * e * e,
    )


def backward_inputs(p: ChimpParams, h, label, cache: ForwardCache) -> np.ndarray:
    """dE/dh_i for one observation: e * sum over A of g(A) do(A)/dh_i.

    do(A)/dh_i follows the indicator products of the integrand structure: the
    clip gate (1 above zero, 1/2 at zero, 0 below), the argmin inside A, and
    the argmax outside A, all ties split equally.
    """
    h = _check_obs(p.n, h)
    _check_cache(p, h, cache)
    e = cache.y - float(label)
    n = p.n
    gv = cache.measure.g.values
    iv = cache.iv
    member = lattice.membership(n)
    full = lattice.full_mask(n)
    dy = np.zeros(n)
    for mask in range(1, full):
        diff = iv.min_inside[mask] - iv.max_outside[mask]
        if diff < 0.0:
            continue
        gate = 1.0 if diff > 0.0 else 0.5
        inside = np.flatnonzero(member[mask])
        outside = np.flatnonzero(~member[mask])
        mins = inside[h[inside] == iv.min_inside[mask]]
        maxs = outside[h[outside] == iv.max_outside[mask]]
        dy[mins] += gv[mask] * gate / len(mins)
        dy[maxs] -= gv[mask] * gate / len(maxs)
    mins = np.flatnonzero(h == iv.min_inside[full])
    dy[mins] += gv[full] / len(mins)
    return e * dy


# --- configuration and the lockstep SGD engine ---

@dataclass
class TrainConfig:
    """Optimization settings.

    momentum is the heavy-ball coefficient on the raw-weight updates
    (v <- momentum * v + grad; raw <- raw - lr * v).  At 0 the update is the
    plain raw <- raw - lr * grad step; the 0.9 default is what reaches the
    reference accuracy regime at the canonical lr/epoch settings, since plain
    constant-step descent measurably cannot (see the training docs).
    """

    learning_rate: float = 0.001
    epochs: int = 1000
    batch_mode: str = "per-sample"  # or "full-batch"
    momentum: float = 0.9
    init_low: float = 0.1
    init_high: float = 0.2
    seed: int = 0
    trials: int = 20

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.init_low > self.init_high:
            raise ValueError("init_low must not exceed init_high")
        if self.batch_mode not in ("per-sample", "full-batch"):
            raise ValueError(f"unknown batch_mode {self.batch_mode!r}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")


@dataclass
class EngineResult:
    raw: np.ndarray  # (B, 2**n) final flat raw weights (nan rows failed)
    history: np.ndarray  # (B, epochs) training MSE after each epoch
    failures: list = field(default_factory=list)  # (batch_row, epoch, step)


def run_sgd_flat(o_pool, ids, labels, raw0, n, lr, epochs, batch_mode="per-sample",
                 momentum=0.0):
    """Run B independent SGD fits in lockstep.

    o_pool: (R, 2**n) integrand rows of the global observation pool.
    ids: (B, M) indices into o_pool, already in per-fit visit order.
    labels: (B, M) targets aligned with ids.
    raw0: (B, 2**n) initial flat raw weights.

    A fit whose loss turns non-finite is poisoned to NaN and recorded in
    failures; the remaining fits continue unaffected.
    """
    raw = np.array(raw0, dtype=float, copy=True)
    nbatch, m = ids.shape
    o_train = o_pool[ids]  # (B, M, 2**n)
    g, gm = materialize_flat(raw, n)
    vel = np.zeros_like(raw)
    history = np.empty((nbatch, epochs))
    active = np.ones(nbatch, dtype=bool)
    failures: list[tuple[int, int, int]] = []

    def record_bad(bad, epoch, step):
        for b in np.flatnonzero(bad):
            failures.append((int(b), epoch, step))
        active[bad] = False
        raw[bad] = np.nan

    # poisoned (NaN) rows keep flowing through the batch arithmetic on purpose
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        return _engine_loop(o_train, labels, raw, g, gm, vel, history, active,
                            failures, record_bad, n, lr, epochs, batch_mode, momentum)


def _engine_loop(o_train, labels, raw, g, gm, vel, history, active, failures,
                 record_bad, n, lr, epochs, batch_mode, momentum):
    nbatch, m = labels.shape
    if batch_mode == "per-sample":
        for epoch in range(epochs):
            for i in range(m):
                o = o_train[:, i, :]
                y = np.einsum("bs,bs->b", g, o)
                e = y - labels[:, i]
                bad = ~np.isfinite(e) & active
                if bad.any():
                    record_bad(bad, epoch, i)
                dg = e[:, None] * o
                _backprop_lattice(dg, g, gm, n)
                vel *= momentum
                vel += dg * (raw > 0.0)
                vel[~active] = 0.0
                raw -= lr * vel
                g, gm = materialize_flat(raw, n)
            yhat = np.einsum("bs,bms->bm", g, o_train)
            history[:, epoch] = np.mean((yhat - labels) ** 2, axis=1)
    else:  # full-batch: one update per epoch from the summed gradient
        for epoch in range(epochs):
            yhat = np.einsum("bs,bms->bm", g, o_train)
            esig = yhat - labels
            bad = ~np.isfinite(esig).all(axis=1) & active
            if bad.any():
                record_bad(bad, epoch, -1)
            dg = np.einsum("bm,bms->bs", esig, o_train)
            _backprop_lattice(dg, g, gm, n)
            vel *= momentum
            vel += dg * (raw > 0.0)
            vel[~active] = 0.0
            raw -= lr * vel
            g, gm = materialize_flat(raw, n)
            yhat = np.einsum("bs,bms->bm", g, o_train)
            history[:, epoch] = np.mean((yhat - labels) ** 2, axis=1)
    return EngineResult(raw=raw, history=history, failures=failures)


def init_flat_raw(n: int, cfg: TrainConfig, rng) -> np.ndarray:
    """Uniform [init_low, init_high) raw weights on the full flat lattice."""
    flat = np.zeros(1 << n)
    count = (1 << n) - 1
    draw = rng.uniform(cfg.init_low, cfg.init_high, count)
    flat[lattice.singleton_masks(n)] = draw[:n]
    flat[lattice.delta_masks(n)] = draw[n:]
    return flat


def sgd_fit(data, cfg: TrainConfig):
    """Fit the network to a dataset; returns (params, per-epoch MSE history).

    Initialization and the one-time visit-order shuffle both derive from
    cfg.seed.  In per-sample mode every observation triggers an update; in
    full-batch mode the summed gradient gives one update per epoch.
    """
    rows = np.asarray(data.rows, dtype=float)
    labels = np.asarray(data.labels, dtype=float)
    if not np.all(np.isfinite(labels)):
        raise ValueError("labels must be finite")
    n = data.n
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    raw0 = init_flat_raw(n, cfg, rng)
    order = rng.permutation(len(rows))
    o_pool = integrand_rows(rows)
    res = run_sgd_flat(
        o_pool,
        order[None, :],
        labels[order][None, :],
        raw0[None, :],
        n,
        cfg.learning_rate,
        cfg.epochs,
        batch_mode=cfg.batch_mode,
        momentum=cfg.momentum,
    )
    if res.failures:
        _, epoch, step = res.failures[0]
        where = f"sample position {step} (row {order[step]})" if step >= 0 else "batch update"
        raise NumericError(f"non-finite loss at epoch {epoch}, {where}")
    return params_from_flat(n, res.raw[0]), res.history[0]


# --- finite-difference verification ---

@dataclass
class GradCheckResult:
    max_rel_err: float
    worst: tuple | None  # ("raw_density" | "raw_delta" | "input", index-or-mask)
    checked: int
    skipped: list


def _kink_signature(p: ChimpParams, h: np.ndarray):
    """Discrete activity pattern of every kink the network contains.

    Two points with equal signatures lie in the same smooth (polynomial)
    region, so a central difference between them is trustworthy.
    """
    flat = flat_raw(p)
    mm = materialize(p)
    iv = integrand(h, p.n)
    member = lattice.membership(p.n)
    full = lattice.full_mask(p.n)
    parts = []
    for mask in range(1, full):
        diff = iv.min_inside[mask] - iv.max_outside[mask]
        gate = 1 if diff > 0 else (0 if diff == 0 else -1)
        inside = np.flatnonzero(member[mask])
        outside = np.flatnonzero(~member[mask])
        parts.append((
            gate,
            tuple(inside[h[inside] == iv.min_inside[mask]].tolist()),
            tuple(outside[h[outside] == iv.max_outside[mask]].tolist()),
        ))
    return (
        tuple(bool(x) for x in (flat > 0.0)),
        tuple(sorted(mm.argmax_children.items())),
        tuple(parts),
        tuple(np.flatnonzero(h == iv.min_inside[full]).tolist()),
    )


def grad_check(p: ChimpParams, h, label, eps: float = 1e-6, rel_floor: float = 1e-4):
    """Central-difference check of every raw-parameter and input gradient.

    Coordinates whose +/- eps stencil straddles a kink (ReLU zero, lattice
    max tie, sort tie, clip boundary) are skipped and reported, not checked.
    Relative error uses max(|analytic|, |numeric|, rel_floor) to keep
    float-noise near-zero gradients from registering as failures.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    h = _check_obs(p.n, h)
    label = float(label)
    y, cache = forward(p, h)
    bundle = backward_params(p, h, label, cache)
    d_inputs = backward_inputs(p, h, label, cache)

    def objective(pp: ChimpParams, hh: np.ndarray) -> float:
        out, _ = forward(pp, hh)
        return 0.5 * (out - label) ** 2

    flat = flat_raw(p)
    singles = lattice.singleton_masks(p.n)
    deltas = lattice.delta_masks(p.n)
    coords = (
        [("raw_density", int(i), int(m)) for i, m in enumerate(singles)]
        + [("raw_delta", int(i), int(m)) for i, m in enumerate(deltas)]
        + [("input", int(i), None) for i in range(p.n)]
    )
    max_rel = 0.0
    worst = None
    checked = 0
    skipped = []
    for kind, idx, mask in coords:
        if kind == "input":
            h_plus, h_minus = h.copy(), h.copy()
            h_plus[idx] += eps
            h_minus[idx] -= eps
            if _kink_signature(p, h_plus) != _kink_signature(p, h_minus):
                skipped.append((kind, idx))
                continue
            numeric = (objective(p, h_plus) - objective(p, h_minus)) / (2 * eps)
            analytic = d_inputs[idx]
        else:
            f_plus, f_minus = flat.copy(), flat.copy()
            f_plus[mask] += eps
            f_minus[mask] -= eps
            p_plus = params_from_flat(p.n, f_plus)
            p_minus = params_from_flat(p.n, f_minus)
            if _kink_signature(p_plus, h) != _kink_signature(p_minus, h):
                skipped.append((kind, idx))
                continue
            numeric = (objective(p_plus, h) - objective(p_minus, h)) / (2 * eps)
            analytic = bundle.d_raw_density[idx] if kind == "raw_density" else bundle.d_raw_delta[idx]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), rel_floor)
        checked += 1
        if rel > max_rel:
            max_rel = rel
            worst = (kind, idx)
    return GradCheckResult(max_rel_err=max_rel, worst=worst, checked=checked, skipped=skipped)
