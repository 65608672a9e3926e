"""Truncated Ruelle probability cascades.

A depth-``r`` tree keeps the ``K`` largest points of every vertex's Poisson
process. Points of a process with intensity ``zeta x^{-1-zeta} dx`` listed in
decreasing order are ``Gamma_n^{-1/zeta}`` with ``Gamma_n`` the arrival times of
a unit-rate Poisson process, so the kept top-K points are exact samples.

Leaves are indexed in row-major order of their path ``(n_1, ..., n_r)``.
Points ``h_alpha`` are never built; only ``q_{alpha ^ beta}`` is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import erfc, logsumexp, ndtri

from ._mc import as_generator, map_draws, mean_se
from .errors import ConfigError, OrderParameterError
from .mixture import MixtureSpec
from .order_parameter import FunctionalOrderParameter
from .parisi_recursion import LOG2

__all__ = [
    "CascadeTree",
    "OverlapSampleSet",
    "CascadeEstimate",
    "sample_cascade",
    "overlap_of_leaves",
    "sample_replicas",
    "sample_cascade_replicas",
    "gaussian_field",
    "cascade_field",
    "coupled_fields",
    "parisi_via_cascade",
    "decoupled_cavity_term",
    "truncation_shift",
]


@dataclass(frozen=True)
class CascadeTree:
    fop: FunctionalOrderParameter
    K: int
    log_u: tuple[np.ndarray, ...]  # log_u[p] has shape (K,) * (p + 1), sorted decreasing on the last axis
    log_v: np.ndarray  # flat, length K**r
    captured_mass_proxy: float

    @property
    def r(self) -> int:
        return self.fop.r

    @property
    def n_leaves(self) -> int:
        return self.K ** self.r

    @property
    def u(self) -> tuple[np.ndarray, ...]:
        return tuple(np.exp(a) for a in self.log_u)

    @property
    def v(self) -> np.ndarray:
        return np.exp(self.log_v)

    def leaf_paths(self, leaves) -> np.ndarray:
        """Path coordinates (0-based) of flat leaf indices, shape (..., r)."""
        leaves = np.asarray(leaves)
        if np.any(leaves < 0) or np.any(leaves >= self.n_leaves):
            raise IndexError(f"leaf index out of range [0, {self.n_leaves})")
        return np.stack(np.unravel_index(leaves, (self.K,) * self.r), axis=-1)

    def cluster_masses(self, depth: int) -> np.ndarray:
        """v-mass of every depth-``depth`` vertex, shape (K,) * depth."""
        v = self.v.reshape((self.K,) * self.r)
        return v.sum(axis=tuple(range(depth, self.r))) if depth < self.r else v

    def overlap_law(self) -> np.ndarray:
        """P(R_{1,2} = q_k | tree) for k = 0..r, computed exactly from v."""
        at_least = [1.0] + [float(np.sum(self.cluster_masses(d) ** 2)) for d in range(1, self.r + 1)]
        at_least.append(0.0)
        return np.diff(-np.asarray(at_least))


@dataclass
class OverlapSampleSet:
    """Overlap matrices of i.i.d. replicas, one ``(n, n)`` matrix per draw.

    ``groups`` labels draws sharing one random measure (tree or disorder draw);
    bootstrap resampling works on groups.
    """

    overlaps: np.ndarray
    source: str
    seed: dict = field(default_factory=dict)
    groups: np.ndarray | None = None

    def __post_init__(self):
        self.overlaps = np.asarray(self.overlaps, dtype=float)
        if self.overlaps.ndim != 3 or self.overlaps.shape[1] != self.overlaps.shape[2]:
            raise ConfigError("overlaps must have shape (n_draws, n, n)")
        if self.groups is None:
            self.groups = np.arange(self.overlaps.shape[0])
        self.groups = np.asarray(self.groups, dtype=int)

    @property
    def n_replicas(self) -> int:
        return self.overlaps.shape[1]

    @property
    def n_draws(self) -> int:
        return self.overlaps.shape[0]

    def check(self, atol: float = 1e-12) -> None:
        R = self.overlaps
        if not np.allclose(R, np.swapaxes(R, 1, 2), atol=atol):
            raise ConfigError("overlap matrices not symmetric")
        if np.any(np.abs(R) > 1 + atol):
            raise ConfigError("overlap entries outside [-1, 1]")
        if not np.all(np.diagonal(R, axis1=1, axis2=2) == 1.0):
            raise ConfigError("overlap diagonal must be exactly 1")

    def permuted(self, perm) -> "OverlapSampleSet":
        perm = np.asarray(perm)
        R = self.overlaps[:, perm][:, :, perm]
        return OverlapSampleSet(R, self.source, dict(self.seed), self.groups.copy())

    def upper_triangle(self) -> tuple[list[str], np.ndarray]:
        n = self.n_replicas
        iu = np.triu_indices(n, 1)
        names = [f"R_{i + 1}_{j + 1}" for i, j in zip(*iu)]
        return names, self.overlaps[:, iu[0], iu[1]]

    def csv_text(self) -> str:
        names, vals = self.upper_triangle()
        seed = ";".join(f"{k}:{v}" for k, v in sorted(self.seed.items()))
        lines = [f"# source={self.source} n_replicas={self.n_replicas} seed={seed}", ",".join(["draw", "group"] + names)]
        for i, row in enumerate(vals):
            lines.append(",".join([str(i), str(self.groups[i])] + [repr(float(x)) for x in row]))
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.csv_text())

    @classmethod
    def from_csv(cls, path) -> "OverlapSampleSet":
        source, seed = "unknown", {}
        with open(path) as fh:
            first = fh.readline()
            if first.startswith("#"):
                for tok in first[1:].split():
                    if tok.startswith("source="):
                        source = tok.split("=", 1)[1]
                    elif tok.startswith("seed=") and len(tok) > 5:
                        seed = dict(_parse_seed_item(item) for item in tok[5:].split(";"))
                header = fh.readline().strip().split(",")
            else:
                header = first.strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        cols = header[2:]
        pairs = [tuple(int(t) - 1 for t in c.split("_")[1:]) for c in cols]
        n = max(max(p) for p in pairs) + 1
        R = np.repeat(np.eye(n)[None], data.shape[0], axis=0)
        for k, (i, j) in enumerate(pairs):
            R[:, i, j] = R[:, j, i] = data[:, 2 + k]
        return cls(R, source, seed, data[:, 1].astype(int))


def _parse_seed_item(item: str):
    key, _, value = item.partition(":")
    for cast in (int, float):
        try:
            return key, cast(value)
        except ValueError:
            pass
    return key, value


def _check_zetas(fop: FunctionalOrderParameter) -> None:
    for p, z in enumerate(fop.zetas):
        if not 0.0 < z < 1.0:
            raise OrderParameterError(f"cascade needs zeta_{p} strictly inside (0, 1), got {z}", "zeta", p)


def sample_cascade(fop: FunctionalOrderParameter, K: int, rng) -> CascadeTree:
    _check_zetas(fop)
    if int(K) < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    K = int(K)
    rng = as_generator(rng)
    r = fop.r
    log_u = []
    log_w = np.zeros(())
    for p in range(r):
        shape = (K,) * (p + 1)
        gammas = np.cumsum(rng.standard_exponential(shape), axis=-1)
        lu = -np.log(gammas) / fop.zetas[p]
        log_u.append(lu)
        log_w = log_w[..., None] + lu
    log_w = log_w.reshape(-1)
    log_v = log_w - logsumexp(log_w)
    if K >= 2:
        half = (slice(0, K // 2),) * r
        kept = logsumexp(log_w.reshape((K,) * r)[half]) - logsumexp(log_w)
        proxy = float(np.exp(kept))
    else:
        proxy = 1.0
    return CascadeTree(fop, K, tuple(log_u), log_v, proxy)


def overlap_of_leaves(tree: CascadeTree, a, b):
    """q at the depth of the longest common path prefix of leaves ``a`` and ``b``."""
    pa, pb = tree.leaf_paths(a), tree.leaf_paths(b)
    same = np.cumprod(pa == pb, axis=-1)
    depth = same.sum(axis=-1)
    out = np.asarray(tree.fop.qs)[depth]
    return float(out) if np.ndim(out) == 0 else out


def _replica_overlaps(tree: CascadeTree, leaves: np.ndarray) -> np.ndarray:
    # leaves: (n_draws, n) -> (n_draws, n, n)
    paths = tree.leaf_paths(leaves)
    eq = paths[:, :, None, :] == paths[:, None, :, :]
    depth = np.cumprod(eq, axis=-1).sum(axis=-1)
    return np.asarray(tree.fop.qs)[depth]


def sample_replicas(tree: CascadeTree, n: int, n_draws: int, rng) -> OverlapSampleSet:
    if n < 2:
        raise ConfigError("need at least two replicas")
    rng = as_generator(rng)
    leaves = rng.choice(tree.n_leaves, size=(n_draws, n), p=_normalized(tree.v))
    return OverlapSampleSet(_replica_overlaps(tree, leaves), "cascade", {"K": tree.K})


def _normalized(v):
    return v / v.sum()


def sample_cascade_replicas(
    fop: FunctionalOrderParameter, K: int, n: int, n_trees: int, draws_per_tree: int, rng
) -> OverlapSampleSet:
    """Replica overlaps pooled over ``n_trees`` independent cascades."""

    def one(g):
        tree = sample_cascade(fop, K, g)
        return sample_replicas(tree, n, draws_per_tree, g).overlaps

    mats = map_draws(one, n_trees, rng)
    groups = np.repeat(np.arange(n_trees), draws_per_tree)
    return OverlapSampleSet(np.concatenate(mats), "cascade", {"K": K, "n_trees": n_trees}, groups)


def cascade_field(tree: CascadeTree, cov: Callable[[np.ndarray], np.ndarray], rng, copies: int | None = None) -> np.ndarray:
    """Gaussian leaf field with E f(a) f(b) = cov(q_{a ^ b}).

    ``cov`` must be non-decreasing on the q grid. The amount ``cov(q_0)`` is
    carried by one root variable shared by all leaves. With ``copies`` the
    result has a leading axis of independent copies.
    """
    rng = as_generator(rng)
    c = np.asarray(cov(np.asarray(tree.fop.qs)), dtype=float)
    inc = np.diff(c)
    if np.any(inc < -1e-14) or c[0] < -1e-14:
        raise ConfigError("field covariance must be non-negative and non-decreasing in q")
    inc = np.clip(inc, 0.0, None)
    lead = () if copies is None else (int(copies),)
    K, r = tree.K, tree.r
    total = np.zeros(lead + (1,) * r)
    if c[0] > 0:
        total = total + np.sqrt(c[0]) * rng.standard_normal(lead + (1,) * r)
    for p in range(1, r + 1):
        shape = lead + (K,) * p + (1,) * (r - p)
        total = total + np.sqrt(inc[p - 1]) * rng.standard_normal(shape)
    total = np.broadcast_to(total, lead + (K,) * r)
    return total.reshape(lead + (K ** r,))


def gaussian_field(tree: CascadeTree, p: int, rng) -> np.ndarray:
    """g_p(h_alpha): sum over the path of eta_beta (q_|beta|^p - q_{|beta|-1}^p)^{1/2}."""
    if p < 1:
        raise ConfigError("field power p must be >= 1")
    return cascade_field(tree, lambda q: q ** p, rng)


def _log_2cosh(x):
    a = np.abs(x)
    return a + np.log1p(np.exp(-2.0 * a))


class CascadeEstimate(NamedTuple):
    value: float
    se: float


def _folded_normal_score(e):
    # Increasing function of |e| that is again N(0, 1).
    tail = np.clip(erfc(np.abs(e) / np.sqrt(2.0)), 1e-300, 1.0 - 1e-16)
    return -ndtri(tail)


def coupled_fields(tree: CascadeTree, m: MixtureSpec, rng, copies: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Leaf fields ``z`` (covariance xi') and ``y`` (covariance theta), shape (copies, leaves).

    Each has the correct Gaussian law on its own. They are driven by the same
    vertex normals so that exp(y) tracks 2cosh(z): the first level with
    variance uses a monotone transform of |eta|, and deeper levels flip eta
    by the sign of the parent's partial z. Both maps send an N(0, 1) variable
    independent of the ancestors to another such variable.
    """
    rng = as_generator(rng)
    qs = np.asarray(tree.fop.qs)
    cz, cy = m.xi_prime(qs), m.theta(qs)
    dz, dy = np.clip(np.diff(cz), 0.0, None), np.clip(np.diff(cy), 0.0, None)
    K, r = tree.K, tree.r
    lead = (int(copies),)
    z = np.sqrt(max(float(cz[0]), 0.0)) * rng.standard_normal(lead + (1,) * r)
    y = np.zeros(lead + (1,) * r)
    started = bool(cz[0] > 0)
    for p in range(1, r + 1):
        e = rng.standard_normal(lead + (K,) * p + (1,) * (r - p))
        z_next = np.sqrt(dz[p - 1]) * e
        z_next += z
        # in place on e: it becomes the y increment
        if started:
            e *= np.where(z >= 0, np.sqrt(dy[p - 1]), -np.sqrt(dy[p - 1]))
        else:
            e = np.sqrt(dy[p - 1]) * _folded_normal_score(e)
        e += y
        z, y = z_next, e
        started = started or dz[p - 1] > 0
    shape = lead + (K ** r,)
    return np.broadcast_to(z, lead + (K,) * r).reshape(shape), np.broadcast_to(y, lead + (K,) * r).reshape(shape)


def _cascade_terms(m, fop, K, copies, g):
    tree = sample_cascade(fop, K, g)
    z, y = coupled_fields(tree, m, g, copies)
    # Shifted exponentials contracted with v; log 2 is pulled out so the zero
    # mixture returns it exactly.
    v = np.exp(tree.log_v)
    sz = np.max(np.abs(z), axis=1, keepdims=True)
    sy = np.max(y, axis=1, keepdims=True)
    up = np.subtract(z, sz)
    np.exp(up, out=up)
    down = np.negative(z)
    down -= sz
    np.exp(down, out=down)
    a = np.log((up @ v + down @ v) / 2.0) + sz[:, 0]
    ey = np.subtract(y, sy)
    np.exp(ey, out=ey)
    b = np.log(ey @ v) + sy[:, 0]
    return LOG2 + float(np.mean(a - b))


def parisi_via_cascade(
    m: MixtureSpec, fop: FunctionalOrderParameter, K: int, n_mc: int, rng, field_copies: int = 8
) -> CascadeEstimate:
    """E log sum v 2cosh(z) - E log sum v exp(y) over ``n_mc`` independent trees.

    ``z`` has covariance xi'(q) and ``y`` has covariance theta(q) of the
    absorbed mixture. The two expectations are separate, so coupling the
    fields and averaging ``field_copies`` draws per tree leaves the mean
    unchanged and only lowers the variance.
    """
    if int(n_mc) < 2:
        raise ConfigError("n_mc must be >= 2 for a standard error")
    if int(field_copies) < 1:
        raise ConfigError("field_copies must be >= 1")
    vals = map_draws(lambda g: _cascade_terms(m, fop, K, field_copies, g), int(n_mc), rng)
    return CascadeEstimate(*mean_se(vals))


def decoupled_cavity_term(
    m: MixtureSpec, fop: FunctionalOrderParameter, K: int, n_copies: int, n_mc: int, rng
) -> CascadeEstimate:
    """(1/n) E log sum_alpha v_alpha prod_{i<=n} 2cosh(z_i(alpha)) with i.i.d. copies z_i."""

    def one(g):
        tree = sample_cascade(fop, K, g)
        z = cascade_field(tree, m.xi_prime, g, copies=n_copies)
        return logsumexp(tree.log_v + _log_2cosh(z).sum(axis=0)) / n_copies

    return CascadeEstimate(*mean_se(map_draws(one, n_mc, rng)))


def truncation_shift(m: MixtureSpec, fop: FunctionalOrderParameter, K: int, n_mc: int, rng) -> dict:
    """Compare cascade values at K and 2K; flags when the shift exceeds 3 combined se."""
    rng = as_generator(rng)
    g1, g2 = rng.spawn(2)
    a = parisi_via_cascade(m, fop, K, n_mc, g1)
    b = parisi_via_cascade(m, fop, 2 * K, n_mc, g2)
    combined = float(np.hypot(a.se, b.se))
    shift = b.value - a.value
    return {
        "K": K,
        "value_K": a.value,
        "se_K": a.se,
        "value_2K": b.value,
        "se_2K": b.se,
        "shift": shift,
        "combined_se": combined,
        "flagged": bool(abs(shift) > 3 * combined),
    }
