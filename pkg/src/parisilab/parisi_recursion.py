"""Parisi functional by backward recursion on a one-dimensional field grid.

X_r(y) = log cosh(y) with y the cumulative cavity field; each level applies

    X_l(y) = (1/zeta_l) log E exp(zeta_l X_{l+1}(y + z sqrt(D_l))),
    D_l = xi'(q_{l+1}) - xi'(q_l),

and the leading field of variance xi'(0) is integrated out as a plain
expectation. All mixtures passed here have the inverse temperature absorbed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import logsumexp

from .errors import ConfigError, NumericError
from .mixture import MixtureSpec
from .order_parameter import FunctionalOrderParameter

__all__ = [
    "QuadratureSpec",
    "ParisiValue",
    "evaluate",
    "parisi_value",
    "recursion_levels",
    "recursion_step",
    "derivative_beta_p",
    "annealed_value",
]

LOG2 = float(np.log(2.0))


@dataclass(frozen=True)
class QuadratureSpec:
    grid_halfwidth: float = 8.0
    grid_points: int = 801
    gh_nodes: int = 40

    def __post_init__(self):
        if self.grid_points < 64:
            raise ConfigError(f"grid_points must be >= 64, got {self.grid_points}")
        if self.gh_nodes < 8:
            raise ConfigError(f"gh_nodes must be >= 8, got {self.gh_nodes}")
        if not self.grid_halfwidth > 0:
            raise ConfigError("grid_halfwidth must be positive")

    def refined(self) -> "QuadratureSpec":
        return replace(self, grid_points=2 * self.grid_points, gh_nodes=2 * self.gh_nodes)


@dataclass(frozen=True)
class ParisiValue:
    value: float
    error_estimate: float


@lru_cache(maxsize=32)
def _gauss_hermite(n: int):
    # Probabilists' nodes: E f(Z) = sum_k w_k f(x_k) for Z ~ N(0, 1).
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / np.sqrt(2.0 * np.pi)


def _log_cosh(y):
    a = np.abs(y)
    return a + np.log1p(np.exp(-2.0 * a)) - LOG2


class _GridFunction:
    """Cubic spline on a symmetric grid, extended with slope +-1 outside.

    Every X_l grows like |y| + const, so the linear tails are accurate far out.
    """

    def __init__(self, grid: np.ndarray, values: np.ndarray):
        self.grid = grid
        self.values = values
        self.lo, self.hi = grid[0], grid[-1]
        self._spline = CubicSpline(grid, values, bc_type=((1, -1.0), (1, 1.0)))

    def __call__(self, y: np.ndarray) -> np.ndarray:
        out = self._spline(np.clip(y, self.lo, self.hi))
        out = out + np.where(y > self.hi, y - self.hi, 0.0) + np.where(y < self.lo, self.lo - y, 0.0)
        return out


def recursion_step(f, grid: np.ndarray, zeta: float, variance: float, gh_nodes: int) -> np.ndarray:
    """(1/zeta) log E exp(zeta f(y + sqrt(variance) Z)) on ``grid``.

    ``zeta = 0`` means the plain expectation E f(y + sqrt(variance) Z).
    """
    if variance <= 0.0:
        return f(grid)
    x, w = _gauss_hermite(gh_nodes)
    shifted = grid[:, None] + np.sqrt(variance) * x[None, :]
    vals = f(shifted)
    if zeta == 0.0:
        return vals @ w
    return logsumexp(zeta * vals, b=w[None, :], axis=1) / zeta


def _grid(m: MixtureSpec, quad: QuadratureSpec) -> np.ndarray:
    scale = float(np.sqrt(m.xi_prime(1.0)))
    return np.linspace(-quad.grid_halfwidth * scale, quad.grid_halfwidth * scale, quad.grid_points)


def recursion_levels(m: MixtureSpec, fop: FunctionalOrderParameter, quad: QuadratureSpec | None = None):
    """Return ``(grid, [X_0, ..., X_r])`` sampled on the grid."""
    quad = quad or QuadratureSpec()
    grid = _grid(m, quad)
    qs = np.asarray(fop.qs)
    dprime = m.xi_prime(qs)
    levels = [_log_cosh(grid)]
    f = _GridFunction(grid, levels[0])
    for l in range(fop.r - 1, -1, -1):
        var = float(dprime[l + 1] - dprime[l])
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            try:
                vals = recursion_step(f, grid, fop.zetas[l], var, quad.gh_nodes)
            except FloatingPointError as exc:
                raise NumericError(f"floating point failure at level {l}: {exc}", "parisi_recursion", l) from exc
        if not np.all(np.isfinite(vals)):
            raise NumericError(f"non-finite recursion values at level {l}", "parisi_recursion", l)
        levels.insert(0, vals)
        f = _GridFunction(grid, vals)
    return grid, levels


def parisi_value(m: MixtureSpec, fop: FunctionalOrderParameter, quad: QuadratureSpec | None = None) -> float:
    """Single-resolution value of the Parisi functional."""
    quad = quad or QuadratureSpec()
    qs = np.asarray(fop.qs)
    th = m.theta(qs)
    correction = 0.5 * float(np.dot(fop.zetas, np.diff(th)))
    if m.xi_prime(1.0) == 0.0:
        return LOG2 - correction
    grid, levels = recursion_levels(m, fop, quad)
    x0 = _GridFunction(grid, levels[0])
    lead = float(m.xi_prime(0.0))
    ex0 = float(recursion_step(x0, np.zeros(1), 0.0, lead, quad.gh_nodes)[0])
    if not np.isfinite(ex0):
        raise NumericError("non-finite leading expectation", "parisi_recursion", -1)
    return LOG2 + ex0 - correction


def evaluate(m: MixtureSpec, fop: FunctionalOrderParameter, quad: QuadratureSpec | None = None) -> ParisiValue:
    """Value at ``quad.refined()`` with the change from ``quad`` as error estimate."""
    quad = quad or QuadratureSpec()
    coarse = parisi_value(m, fop, quad)
    fine = parisi_value(m, fop, quad.refined())
    return ParisiValue(fine, abs(fine - coarse))


def annealed_value(m: MixtureSpec) -> float:
    """log 2 + xi(1)/2, the Jensen upper bound on every Parisi value."""
    return LOG2 + 0.5 * float(m.xi(1.0))


def derivative_beta_p(
    m: MixtureSpec,
    fop: FunctionalOrderParameter,
    p: int,
    h_fd: float,
    quad: QuadratureSpec | None = None,
    minimize=None,
) -> float:
    """Central difference of P in the coefficient beta_p of the absorbed mixture.

    With ``minimize=None`` the fop is held fixed. Otherwise ``minimize`` is a
    callable ``mixture -> value`` (e.g. a wrapped search) applied on both sides.
    """
    if not h_fd > 0:
        raise ConfigError(f"finite-difference step must be positive, got {h_fd}")
    b = m.coefficient(p)
    if b - h_fd < 0:
        # One-sided at the boundary; the value is even in beta_p anyway.
        lo = m.with_coefficient(p, abs(b - h_fd))
    else:
        lo = m.with_coefficient(p, b - h_fd)
    hi = m.with_coefficient(p, b + h_fd)
    if minimize is None:
        f_hi, f_lo = parisi_value(hi, fop, quad), parisi_value(lo, fop, quad)
    else:
        f_hi, f_lo = minimize(hi), minimize(lo)
    return (f_hi - f_lo) / (2.0 * h_fd)
