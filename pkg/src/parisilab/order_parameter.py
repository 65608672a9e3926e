"""Discrete functional order parameters.

A fop with ``r`` levels is the pair of sequences

    0 < zeta_0 < ... < zeta_{r-1} < 1,      0 = q_0 < q_1 < ... < q_r = 1,

describing the overlap law with atoms ``q_p`` of weight ``zeta_p - zeta_{p-1}``
(``zeta_{-1} = 0``, ``zeta_r = 1``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import OrderParameterError

__all__ = ["DELTA_SEP", "FunctionalOrderParameter", "validate", "moment", "sample_overlap_value"]

DELTA_SEP = 1e-9
_ENDPOINT_TOL = 1e-12


def validate(zetas: Sequence[float], qs: Sequence[float], delta_sep: float = DELTA_SEP) -> None:
    """Raise :class:`OrderParameterError` naming the first offending index."""
    zetas = [float(z) for z in zetas]
    qs = [float(q) for q in qs]
    r = len(zetas)
    if r < 1:
        raise OrderParameterError("need at least one zeta (r >= 1)", "zeta", 0)
    if len(qs) != r + 1:
        raise OrderParameterError(f"expected {r + 1} q values for r={r}, got {len(qs)}", "q", len(qs))
    if not all(np.isfinite(zetas)) or not all(np.isfinite(qs)):
        raise OrderParameterError("non-finite entry in fop", "zeta")
    if abs(qs[0]) > _ENDPOINT_TOL:
        raise OrderParameterError(f"q_0 must be 0, got {qs[0]}", "q", 0)
    if abs(qs[-1] - 1.0) > _ENDPOINT_TOL:
        raise OrderParameterError(f"q_r must be 1, got {qs[-1]}", "q", r)
    padded = [0.0] + zetas + [1.0]
    for i in range(1, len(padded)):
        if padded[i] - padded[i - 1] <= delta_sep:
            idx = min(i - 1, r - 1)
            raise OrderParameterError(
                f"zeta not strictly increasing in (0, 1) at index {idx}: {zetas}", "zeta", idx
            )
    for i in range(1, r + 1):
        if qs[i] - qs[i - 1] <= delta_sep:
            raise OrderParameterError(f"q not strictly increasing at index {i}: {qs}", "q", i)


@dataclass(frozen=True)
class FunctionalOrderParameter:
    zetas: tuple[float, ...]
    qs: tuple[float, ...]

    def __post_init__(self):
        validate(self.zetas, self.qs)
        object.__setattr__(self, "zetas", tuple(float(z) for z in self.zetas))
        qs = [float(q) for q in self.qs]
        qs[0], qs[-1] = 0.0, 1.0
        object.__setattr__(self, "qs", tuple(qs))

    @property
    def r(self) -> int:
        return len(self.zetas)

    @property
    def atom_weights(self) -> np.ndarray:
        """zeta({q_p}) for p = 0..r."""
        return np.diff(np.concatenate([[0.0], self.zetas, [1.0]]))

    def moment(self, p: int) -> float:
        return float(np.dot(self.atom_weights, np.asarray(self.qs) ** p))

    def sample_overlap_value(self, rng: np.random.Generator, size=None):
        return rng.choice(np.asarray(self.qs), size=size, p=self.atom_weights)

    def insert_level(self, q_new: float, after: int, gap: float = 2 * DELTA_SEP) -> "FunctionalOrderParameter":
        """Split step ``after`` at ``q_new`` with a new atom of weight ``gap``.

        The new level is ``zeta_after + gap`` (or halfway to the next zeta when
        that is closer), which leaves the Parisi functional unchanged up to
        O(gap).
        """
        zetas = list(self.zetas)
        qs = list(self.qs)
        if not 0 <= after < self.r:
            raise OrderParameterError(f"split step index {after} out of range", "q", after)
        if not qs[after] < q_new < qs[after + 1]:
            raise OrderParameterError("inserted q must lie strictly inside the split step", "q", after + 1)
        upper = zetas[after + 1] if after + 1 < self.r else 1.0
        zetas.insert(after + 1, zetas[after] + min(gap, 0.5 * (upper - zetas[after])))
        qs.insert(after + 1, q_new)
        return FunctionalOrderParameter(tuple(zetas), tuple(qs))

    def to_config(self) -> dict:
        return {"r": self.r, "zeta": list(self.zetas), "q": list(self.qs)}

    @classmethod
    def from_config(cls, cfg: Mapping) -> "FunctionalOrderParameter":
        fop = cls(tuple(cfg["zeta"]), tuple(cfg["q"]))
        if "r" in cfg and int(cfg["r"]) != fop.r:
            raise OrderParameterError(f"declared r={cfg['r']} but zeta has {fop.r} entries", "r")
        return fop

    @classmethod
    def one_step(cls, zeta0: float) -> "FunctionalOrderParameter":
        """r = 1: atoms at 0 (weight zeta0) and 1."""
        return cls((zeta0,), (0.0, 1.0))


def moment(fop: FunctionalOrderParameter, p: int) -> float:
    return fop.moment(p)


def sample_overlap_value(fop: FunctionalOrderParameter, rng: np.random.Generator, size=None):
    return fop.sample_overlap_value(rng, size)
