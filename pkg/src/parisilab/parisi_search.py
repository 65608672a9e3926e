"""Minimization of the Parisi functional over r-level order parameters.

The ordered sequences are mapped to unconstrained coordinates: the r + 1 gaps
of ``0 < zeta_0 < ... < zeta_{r-1} < 1`` and the r gaps of
``0 = q_0 < ... < q_r = 1`` are softmax images of free logits, each gap
floored at a small multiple of the separation ``DELTA_SEP``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ._mc import as_generator
from .errors import ConfigError, NumericError
from .mixture import MixtureSpec
from .order_parameter import DELTA_SEP, FunctionalOrderParameter
from .parisi_recursion import LOG2, QuadratureSpec, annealed_value, parisi_value

__all__ = ["SearchOptions", "SearchResult", "encode", "decode", "minimize_fixed_r", "refine_r"]

GAP_FLOOR = 10 * DELTA_SEP


@dataclass(frozen=True)
class SearchOptions:
    starts: int = 8
    fatol: float = 1e-6
    xatol: float = 1e-3
    max_iter: int = 2000
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)


@dataclass(frozen=True)
class SearchResult:
    best_fop: FunctionalOrderParameter
    best_value: float
    trace: list  # (iteration, best value so far) of the winning start
    r_used: int
    values_by_r: dict = field(default_factory=dict)


def _gaps(logits: np.ndarray, n: int) -> np.ndarray:
    full = np.concatenate([[0.0], logits])
    w = np.exp(full - full.max())
    w /= w.sum()
    return GAP_FLOOR + (1.0 - n * GAP_FLOOR) * w


def decode(x: np.ndarray, r: int) -> FunctionalOrderParameter:
    x = np.asarray(x, dtype=float)
    zg = _gaps(x[:r], r + 1)
    qg = _gaps(x[r:], r)
    zetas = np.cumsum(zg)[:-1]
    qs = np.concatenate([[0.0], np.cumsum(qg)])
    qs[-1] = 1.0
    return FunctionalOrderParameter(tuple(zetas), tuple(qs))


def _logits(gaps: np.ndarray) -> np.ndarray:
    n = gaps.size
    w = (np.asarray(gaps) - GAP_FLOOR) / (1.0 - n * GAP_FLOOR)
    w = np.clip(w, 1e-12, None)
    return np.log(w[1:]) - np.log(w[0])


def encode(fop: FunctionalOrderParameter) -> np.ndarray:
    """Inverse of :func:`decode`; gaps at or below the floor map to large negative logits."""
    zg = np.diff(np.concatenate([[0.0], fop.zetas, [1.0]]))
    qg = np.diff(np.asarray(fop.qs))
    return np.concatenate([_logits(zg), _logits(qg)])


def _objective(m: MixtureSpec, r: int, quad: QuadratureSpec):
    def f(x):
        fop = decode(x, r)
        try:
            return parisi_value(m, fop, quad)
        except NumericError as exc:
            raise NumericError(f"{exc} at parameters {list(np.round(x, 12))}", "parisi_search") from exc

    return f


def _run_start(f, x0: np.ndarray, opts: SearchOptions):
    trace = []
    best = [np.inf]

    def record(xk):
        # the callback only sees the best vertex; re-evaluation is cached below
        v = cache.get(tuple(xk))
        if v is None:
            v = f(xk)
        best[0] = min(best[0], v)
        trace.append((len(trace) + 1, best[0]))

    cache = {}

    def cached(x):
        key = tuple(x)
        if key not in cache:
            cache[key] = f(x)
        return cache[key]

    if x0.size == 0:
        return x0, cached(x0), [(1, cached(x0))]
    res = minimize(
        cached,
        x0,
        method="Nelder-Mead",
        callback=record,
        options={"fatol": opts.fatol, "xatol": opts.xatol, "maxiter": opts.max_iter, "adaptive": x0.size > 2},
    )
    return res.x, float(res.fun), trace or [(1, float(res.fun))]


def minimize_fixed_r(
    m: MixtureSpec,
    r: int,
    opts: SearchOptions | None = None,
    rng=None,
    seed_fop: FunctionalOrderParameter | None = None,
) -> SearchResult:
    """Best-found r-level order parameter from ``opts.starts`` Nelder-Mead runs.

    Start 0 is ``seed_fop`` when given, otherwise equal gaps; the remaining
    starts are random logits. Ties go to the lowest start index.
    """
    if r < 1:
        raise ConfigError(f"r must be >= 1, got {r}")
    opts = opts or SearchOptions()
    if opts.starts < 1:
        raise ConfigError("need at least one start")
    rng = as_generator(0 if rng is None else rng)
    dim = 2 * r - 1
    starts = [encode(seed_fop) if seed_fop is not None else np.zeros(dim)]
    for _ in range(opts.starts - 1):
        starts.append(rng.normal(0.0, 1.5, size=dim))
    if m.is_zero:
        fop = decode(starts[0], r)
        return SearchResult(fop, parisi_value(m, fop, opts.quad), [(1, LOG2)], r, {r: LOG2})
    f = _objective(m, r, opts.quad)
    best = None
    for x0 in starts:
        x, val, trace = _run_start(f, np.asarray(x0, dtype=float), opts)
        if best is None or val < best[1]:
            best = (x, val, trace)
    x, val, trace = best
    bound = annealed_value(m)
    if val > bound + 1e-9:
        # allow for the discretization error of the winner itself
        slack = abs(parisi_value(m, decode(x, r), opts.quad.refined()) - val)
        if val > bound + 1e-9 + 10.0 * slack:
            raise NumericError(f"best value {val} exceeds the annealed bound {bound}", "parisi_search")
    return SearchResult(decode(x, r), val, trace, r, {r: val})


def _split_largest_gap(fop: FunctionalOrderParameter) -> FunctionalOrderParameter:
    gaps = np.diff(fop.qs)
    k = int(np.argmax(gaps))
    q_new = 0.5 * (fop.qs[k] + fop.qs[k + 1])
    return fop.insert_level(q_new, k, gap=2 * GAP_FLOOR)


def refine_r(
    m: MixtureSpec, r_max: int, tol: float = 1e-6, opts: SearchOptions | None = None, rng=None
) -> SearchResult:
    """Search r = 1, 2, ... warm-starting each level from the previous minimizer.

    Stops once a level improves by less than ``tol`` or at ``r_max``.
    """
    if r_max < 1:
        raise ConfigError(f"r_max must be >= 1, got {r_max}")
    if not tol > 0:
        raise ConfigError("tol must be positive")
    opts = opts or SearchOptions()
    rng = as_generator(0 if rng is None else rng)
    gens = rng.spawn(r_max)
    current = minimize_fixed_r(m, 1, opts, gens[0])
    values = {1: current.best_value}
    for r in range(2, r_max + 1):
        seed = _split_largest_gap(current.best_fop)
        nxt = minimize_fixed_r(m, r, opts, gens[r - 1], seed_fop=seed)
        values[r] = nxt.best_value
        improvement = current.best_value - nxt.best_value
        if nxt.best_value < current.best_value:
            current = nxt
        if improvement < tol:
            break
    return SearchResult(current.best_fop, current.best_value, current.trace, current.r_used, values)
