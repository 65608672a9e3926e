"""Mixed p-spin covariance function xi(x) = sum_p beta_p^2 x^p and friends."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DomainError

__all__ = ["MixtureSpec", "xi", "xi_prime", "theta", "absorb_beta", "sk"]


def _check_domain(x):
    arr = np.asarray(x, dtype=float)
    if np.any(np.abs(arr) > 1.0):
        raise DomainError(f"overlap argument outside [-1, 1]: {x!r}")
    return arr


@dataclass(frozen=True)
class MixtureSpec:
    """Coefficients ``coeffs[k] = beta_{k+1}`` of a finite mixture.

    The all-zero mixture must be requested explicitly through
    :meth:`MixtureSpec.zero` (or ``allow_zero=True``).
    """

    coeffs: tuple[float, ...]
    allow_zero: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        object.__setattr__(self, "coeffs", coeffs)
        if len(coeffs) < 1:
            raise ConfigError("mixture needs p_max >= 1")
        if any(not np.isfinite(c) or c < 0 for c in coeffs):
            raise ConfigError(f"mixture coefficients must be finite and non-negative: {coeffs}")
        if not self.allow_zero and not any(c > 0 for c in coeffs):
            raise ConfigError("all mixture coefficients vanish; use MixtureSpec.zero()")

    @classmethod
    def zero(cls, p_max: int = 2) -> "MixtureSpec":
        return cls((0.0,) * p_max, allow_zero=True)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]]) -> "MixtureSpec":
        """Build from ``(p, beta_p)`` pairs as stored in run configs."""
        pairs = [(int(p), float(b)) for p, b in pairs]
        if not pairs:
            raise ConfigError("empty mixture")
        if any(p < 1 for p, _ in pairs):
            raise ConfigError("mixture powers must be >= 1")
        p_max = max(p for p, _ in pairs)
        coeffs = [0.0] * p_max
        for p, b in pairs:
            coeffs[p - 1] = b
        return cls(tuple(coeffs), allow_zero=all(b == 0 for _, b in pairs))

    def to_pairs(self) -> list[list[float]]:
        return [[p, b] for p, b in enumerate(self.coeffs, start=1) if b != 0.0] or [[1, 0.0]]

    @property
    def p_max(self) -> int:
        return len(self.coeffs)

    @property
    def is_zero(self) -> bool:
        return not any(c > 0 for c in self.coeffs)

    @property
    def powers(self) -> np.ndarray:
        return np.arange(1, self.p_max + 1)

    @property
    def weights(self) -> np.ndarray:
        """beta_p^2 for p = 1..p_max."""
        return np.asarray(self.coeffs) ** 2

    def coefficient(self, p: int) -> float:
        return self.coeffs[p - 1] if 1 <= p <= self.p_max else 0.0

    def xi(self, x):
        x = _check_domain(x)
        return np.polynomial.polynomial.polyval(x, np.concatenate([[0.0], self.weights]))

    def xi_prime(self, x):
        x = _check_domain(x)
        c = self.powers * self.weights
        return np.polynomial.polynomial.polyval(x, c)

    def xi_second(self, x):
        x = _check_domain(x)
        p = self.powers
        c = (p * (p - 1) * self.weights)[1:]
        if c.size == 0:
            return np.zeros_like(x)
        return np.polynomial.polynomial.polyval(x, c)

    def theta(self, x):
        # x xi'(x) - xi(x) = sum_p (p - 1) beta_p^2 x^p
        x = _check_domain(x)
        c = np.concatenate([[0.0], (self.powers - 1) * self.weights])
        return np.polynomial.polynomial.polyval(x, c)

    def absorb_beta(self, beta: float) -> "MixtureSpec":
        return absorb_beta(self, beta)

    def with_coefficient(self, p: int, value: float) -> "MixtureSpec":
        coeffs = list(self.coeffs) + [0.0] * max(0, p - self.p_max)
        coeffs[p - 1] = value
        return MixtureSpec(tuple(coeffs), allow_zero=True)


def xi(m: MixtureSpec, x):
    return m.xi(x)


def xi_prime(m: MixtureSpec, x):
    return m.xi_prime(x)


def theta(m: MixtureSpec, x):
    return m.theta(x)


def absorb_beta(m: MixtureSpec, beta: float) -> MixtureSpec:
    """Fold the inverse temperature into the coefficients, so xi -> beta^2 xi."""
    beta = float(beta)
    if not np.isfinite(beta) or beta < 0:
        raise ConfigError(f"inverse temperature must be non-negative, got {beta}")
    return MixtureSpec(tuple(beta * c for c in m.coeffs), allow_zero=True)


def sk(beta: float = 1.0) -> MixtureSpec:
    """Absorbed SK mixture, xi(x) = beta^2 x^2."""
    return absorb_beta(MixtureSpec((0.0, 1.0)), beta)
