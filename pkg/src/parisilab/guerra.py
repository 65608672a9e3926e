"""Guerra interpolation between a finite system and a cascade.

For t in [0, 1] and one draw of (disorder, tree, fields)

    phi_t = (1/N) log sum_{sigma, alpha} v_alpha exp(-sqrt(t) beta H_N(sigma)
              - sqrt(1 - t) sum_i z_i(alpha) sigma_i - sqrt(t) sum_i y_i(alpha))

with N independent copies z_i (covariance xi'(q)) and y_i (covariance
theta(q)) of the absorbed mixture. phi(t) = E phi_t is non-increasing in t
for convex xi, and for any fixed tree, so truncation does not affect it.
All grid points reuse the same draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._mc import as_generator, map_draws, mean_se
from .cascades import cascade_field, sample_cascade
from .errors import CapacityError, ConfigError
from .finite_gibbs import SystemParams, _energy, _check_enum, free_energy, spin_configurations
from .mixture import absorb_beta
from .order_parameter import FunctionalOrderParameter
from .parisi_recursion import QuadratureSpec, evaluate

__all__ = ["InterpolationPoint", "GuerraRun", "GapEstimate", "default_t_grid", "phi", "phi_grid", "guerra_gap"]

DEFAULT_BUDGET = 2 ** 22


@dataclass(frozen=True)
class InterpolationPoint:
    t: float
    phi: float
    se: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ConfigError(f"t must lie in [0, 1], got {self.t}")
        if self.se < 0:
            raise ConfigError("se must be non-negative")


@dataclass(frozen=True)
class GuerraRun:
    points: tuple[InterpolationPoint, ...]
    step_diffs: np.ndarray  # phi(t_{k+1}) - phi(t_k), paired over draws
    step_se: np.ndarray
    draws: np.ndarray  # (n_mc, len(ts)) per-draw phi_t
    log_z: np.ndarray  # (1/N) log Z_N per draw
    y_term: np.ndarray  # (1/N) log sum_alpha v exp(-sum_i y_i) per draw
    z_term: np.ndarray  # (1/N) log sum_alpha v prod_i 2cosh(z_i) per draw

    def monotone_within(self, k: float = 3.0) -> bool:
        return bool(np.all(self.step_diffs <= k * self.step_se))


@dataclass(frozen=True)
class GapEstimate:
    gap: float
    se: float
    parisi_value: float
    parisi_error: float
    free_energy: float
    free_energy_se: float


def default_t_grid(n: int = 5) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def _log_2cosh(x):
    a = np.abs(x)
    return a + np.log1p(np.exp(-2.0 * a))


def _one_draw(params: SystemParams, fop, K, ts, g):
    sys = params.sample(g)
    m = absorb_beta(params.mixture, params.beta)
    tree = sample_cascade(fop, K, g)
    N = params.N
    z = cascade_field(tree, m.xi_prime, g, copies=N)  # (N, L)
    y = cascade_field(tree, m.theta, g, copies=N).sum(axis=0)
    S = spin_configurations(N)
    bh = params.beta * _energy(sys, S)  # (2^N,)
    sz = S @ z  # (2^N, L)
    out = np.empty(len(ts))
    for k, t in enumerate(ts):
        lw = tree.log_v[None, :] - np.sqrt(t) * bh[:, None] - np.sqrt(1.0 - t) * sz - np.sqrt(t) * y[None, :]
        out[k] = logsumexp(lw) / N
    log_z = logsumexp(-bh) / N
    y_term = logsumexp(tree.log_v - y) / N
    z_term = logsumexp(tree.log_v + _log_2cosh(z).sum(axis=0)) / N
    return out, log_z, y_term, z_term


def phi_grid(
    ts, params: SystemParams, fop: FunctionalOrderParameter, K: int, n_mc: int, rng, budget: int = DEFAULT_BUDGET
) -> GuerraRun:
    ts = np.asarray(ts, dtype=float)
    if ts.ndim != 1 or ts.size < 1 or np.any((ts < 0) | (ts > 1)):
        raise ConfigError("t grid must be a non-empty list of values in [0, 1]")
    if params.s:
        raise ConfigError("interpolation runs on the unperturbed system")
    _check_enum(params.N)
    size = 2 ** params.N * K ** fop.r
    if size > budget:
        raise CapacityError(f"(sigma, alpha) sum has {size} terms, budget is {budget}")
    if n_mc < 2:
        raise ConfigError("n_mc must be >= 2")
    res = map_draws(lambda g: _one_draw(params, fop, K, ts, g), n_mc, rng)
    draws = np.array([r[0] for r in res])
    log_z, y_term, z_term = (np.array([r[i] for r in res]) for i in (1, 2, 3))
    points = tuple(InterpolationPoint(float(t), *mean_se(draws[:, k])) for k, t in enumerate(ts))
    diffs = np.diff(draws, axis=1)
    step = [mean_se(diffs[:, k]) for k in range(diffs.shape[1])]
    return GuerraRun(
        points,
        np.array([s[0] for s in step]),
        np.array([s[1] for s in step]),
        draws,
        log_z,
        y_term,
        z_term,
    )


def phi(t: float, params: SystemParams, fop: FunctionalOrderParameter, K: int, n_mc: int, rng) -> InterpolationPoint:
    return phi_grid([t], params, fop, K, n_mc, rng).points[0]


def guerra_gap(
    params: SystemParams,
    fop: FunctionalOrderParameter,
    n_disorder: int,
    rng,
    quad: QuadratureSpec | None = None,
) -> GapEstimate:
    """P(zeta) from the recursion minus the exact-enumeration free energy."""
    m = absorb_beta(params.mixture, params.beta)
    p = evaluate(m, fop, quad)
    f = free_energy(params, n_disorder, as_generator(rng))
    se = float(np.hypot(p.error_estimate, f.se))
    return GapEstimate(p.value - f.value, se, p.value, p.error_estimate, f.value, f.se)
