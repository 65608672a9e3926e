"""Statistical checks of overlap structure: ultrametricity, positivity,
Ghirlanda-Guerra identities, stochastic stability, and the exact law of
overlap patterns implied by the identities.

Estimators over replicas average over every injective assignment of sample
replicas to the labels 1..n+1 (sorted before summing), so they do not depend
on how replicas are numbered.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from ._mc import as_generator, map_draws
from .cascades import OverlapSampleSet, gaussian_field, sample_cascade
from .errors import ConfigError
from .order_parameter import FunctionalOrderParameter

__all__ = [
    "TestReport",
    "ConstraintMatrix",
    "ultrametricity_violation",
    "positivity_check",
    "gg_delta",
    "constant_one",
    "overlap_power",
    "joint_overlap_probability",
    "joint_overlap_probability_exact",
    "ultrametric_patterns",
    "pattern_frequencies",
    "ac_stability_test",
    "invariance_check",
    "bootstrap_se",
]

N_BOOT = 1000
K_SIGMA = 3.0


@dataclass(frozen=True)
class TestReport:
    statistic: float
    tolerance: float
    n_samples: int
    verdict: str
    details: str = ""

    def __post_init__(self):
        expected = "pass" if abs(self.statistic) <= self.tolerance else "fail"
        if self.verdict != expected:
            raise ConfigError(f"verdict {self.verdict!r} inconsistent with |{self.statistic}| vs {self.tolerance}")

    @classmethod
    def make(cls, statistic: float, tolerance: float, n_samples: int, details: str = "") -> "TestReport":
        verdict = "pass" if abs(statistic) <= tolerance else "fail"
        return cls(float(statistic), float(tolerance), int(n_samples), verdict, details)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "tolerance": self.tolerance,
            "n_samples": self.n_samples,
            "verdict": self.verdict,
            "details": self.details,
        }


# ---------------------------------------------------------------- bootstrap


def bootstrap_se(
    per_draw: np.ndarray,
    statistic: Callable[[np.ndarray], float],
    groups: np.ndarray | None = None,
    n_boot: int = N_BOOT,
    rng=None,
) -> float:
    """Standard error of ``statistic(column means)`` by resampling groups of rows.

    Rows sharing a group label (one tree or disorder draw) move together.
    """
    per_draw = np.asarray(per_draw, dtype=float)
    if per_draw.ndim == 1:
        per_draw = per_draw[:, None]
    rng = as_generator(12345 if rng is None else rng)
    if groups is None:
        groups = np.arange(per_draw.shape[0])
    _, inv = np.unique(groups, return_inverse=True)
    G = inv.max() + 1
    sums = np.zeros((G, per_draw.shape[1]))
    np.add.at(sums, inv, per_draw)
    sizes = np.bincount(inv, minlength=G).astype(float)
    out = np.empty(n_boot)
    for b in range(n_boot):
        counts = np.bincount(rng.integers(G, size=G), minlength=G).astype(float)
        out[b] = statistic((counts @ sums) / (counts @ sizes))
    return float(out.std(ddof=1))


def _exact_mean(x: np.ndarray) -> float:
    return math.fsum(np.sort(np.asarray(x, dtype=float).ravel())) / x.size


def _sorted_row_mean(x: np.ndarray) -> np.ndarray:
    # (D, L) -> (D,), summation order fixed by value
    return np.sort(x, axis=1).sum(axis=1) / x.shape[1]


def _labelings(m: int, k: int, limit: int | None = None) -> np.ndarray:
    perms = np.array(list(itertools.permutations(range(m), k)), dtype=int)
    if limit is not None and len(perms) > limit:
        raise ConfigError(f"{len(perms)} replica labelings exceed limit {limit}; subsample replicas first")
    return perms


def _offdiag(samples: OverlapSampleSet) -> np.ndarray:
    n = samples.n_replicas
    iu = np.triu_indices(n, 1)
    return samples.overlaps[:, iu[0], iu[1]]


# ---------------------------------------------------------------- structure


def ultrametricity_violation(samples: OverlapSampleSet, tolerance: float = 0.0) -> TestReport:
    """max over triples of min(R_ab, R_ac) - R_bc, clipped below at 0."""
    n = samples.n_replicas
    if n < 3:
        raise ConfigError("ultrametricity needs at least three replicas")
    R = samples.overlaps
    worst = 0.0
    for a, b, c in itertools.permutations(range(n), 3):
        v = np.minimum(R[:, a, b], R[:, a, c]) - R[:, b, c]
        worst = max(worst, float(v.max()))
    return TestReport.make(max(worst, 0.0), tolerance, samples.n_draws, f"source={samples.source}")


def positivity_check(samples: OverlapSampleSet, tolerance: float = 0.0) -> TestReport:
    """Statistic max(0, -min off-diagonal overlap)."""
    if samples.n_replicas < 2:
        raise ConfigError("positivity needs at least two replicas")
    low = float(_offdiag(samples).min())
    return TestReport.make(max(0.0, -low), tolerance, samples.n_draws, f"min overlap {low:.6g}")


# ---------------------------------------------------------------- GG identities


def constant_one(R: np.ndarray) -> np.ndarray:
    return np.ones(R.shape[0])


def overlap_power(i: int, j: int, power: int = 1) -> Callable[[np.ndarray], np.ndarray]:
    """f(R) = R_{i,j}^power with 1-based replica labels."""

    def f(R):
        return R[:, i - 1, j - 1] ** power

    f.__name__ = f"R{i}{j}^{power}"
    return f


def gg_delta(
    samples: OverlapSampleSet,
    f: Callable[[np.ndarray], np.ndarray],
    n: int,
    p: int,
    n_boot: int = N_BOOT,
    rng=None,
    k_sigma: float = K_SIGMA,
) -> TestReport:
    """|E<f R_{1,n+1}^p> - E<f> E<R_{1,2}^p>/n - sum_{l=2}^n E<f R_{1,l}^p>/n|.

    ``f`` maps a stack of n x n overlap matrices (replicas 1..n) to values.
    The tolerance is ``k_sigma`` bootstrap standard errors over sample groups.
    """
    if n < 1 or p < 1:
        raise ConfigError("need n >= 1 and p >= 1")
    m = samples.n_replicas
    if m < n + 1:
        raise ConfigError(f"gg_delta with n={n} needs {n + 1} replicas, samples have {m}")
    R = samples.overlaps
    labs = _labelings(m, n + 1, limit=5040)
    fv, a, b = [], [], []
    c = [[] for _ in range(n - 1)]
    for lab in labs:
        sub = R[:, lab][:, :, lab]
        fl = np.asarray(f(sub[:, :n, :n]), dtype=float)
        fv.append(fl)
        a.append(fl * sub[:, 0, n] ** p)
        b.append(sub[:, 0, 1] ** p)
        for l in range(1, n):
            c[l - 1].append(fl * sub[:, 0, l] ** p)
    cols = [_sorted_row_mean(np.stack(x, axis=1)) for x in [a, fv, b] + c]
    per_draw = np.stack(cols, axis=1)
    means = [_exact_mean(col) for col in cols]
    ea, ef, eb, ec = means[0], means[1], means[2], means[3:]
    stat = math.fsum([ea] * n + [-ef * eb] + [-x for x in ec]) / n

    def signed(mu):
        return (n * mu[0] - mu[1] * mu[2] - mu[3:].sum()) / n

    se = bootstrap_se(per_draw, signed, samples.groups, n_boot, rng)
    name = getattr(f, "__name__", "f")
    return TestReport.make(
        abs(stat), k_sigma * se, samples.n_draws, f"f={name} n={n} p={p} signed={stat:.6g} boot_se={se:.3g}"
    )


# ---------------------------------------------------------------- overlap patterns


@dataclass(frozen=True)
class ConstraintMatrix:
    """Symmetric n x n matrix of atom indices k (overlap q_k); diagonal is r."""

    levels: tuple[tuple[int, ...], ...]
    r: int

    def __post_init__(self):
        L = np.asarray(self.levels)
        if L.ndim != 2 or L.shape[0] != L.shape[1] or L.shape[0] < 1:
            raise ConfigError("constraint matrix must be square and non-empty")
        if not np.array_equal(L, L.T):
            raise ConfigError("constraint matrix must be symmetric")
        if np.any(np.diag(L) != self.r):
            raise ConfigError("constraint diagonal must be the top atom q_r")
        if np.any(L < 0) or np.any(L > self.r):
            raise ConfigError(f"constraint levels must lie in 0..{self.r}")

    @property
    def n(self) -> int:
        return len(self.levels)

    @classmethod
    def from_values(cls, fop: FunctionalOrderParameter, Q, atol: float = 1e-12) -> "ConstraintMatrix":
        Q = np.asarray(Q, dtype=float)
        qs = np.asarray(fop.qs)
        idx = np.abs(Q[..., None] - qs).argmin(axis=-1)
        if np.any(np.abs(qs[idx] - Q) > atol):
            raise ConfigError("constraint entries must belong to the fop atom set")
        return cls(tuple(tuple(int(v) for v in row) for row in idx), fop.r)

    @classmethod
    def from_pairs(cls, n: int, r: int, pairs: dict) -> "ConstraintMatrix":
        L = np.full((n, n), r, dtype=int)
        for (i, j), k in pairs.items():
            L[i, j] = L[j, i] = k
        return cls(tuple(map(tuple, L)), r)

    def values(self, fop: FunctionalOrderParameter) -> np.ndarray:
        return np.asarray(fop.qs)[np.asarray(self.levels)]

    def is_ultrametric(self) -> bool:
        L = np.asarray(self.levels)
        n = self.n
        for a, b, c in itertools.permutations(range(n), 3):
            if L[b, c] < min(L[a, b], L[a, c]):
                return False
        return True


def _classes(members: list[int], L: np.ndarray, level: int) -> int:
    """Number of classes of ``members`` under L[i, j] >= level (an equivalence when ultrametric)."""
    seen, count = set(), 0
    for i in members:
        if i in seen:
            continue
        count += 1
        seen.update(j for j in members if L[i, j] >= level)
    return count


def _pattern_probability(L: np.ndarray, zetas: Sequence):
    """Probability of the ultrametric level pattern ``L`` for weights ``zetas``.

    Removes the last replica b. With k* its largest level to the others and a
    a replica achieving it, the identities give

        P(b in the level-k cluster of a | rest) = (|C_k(a)| - zeta_{k-1}) / n,

    C_k(a) being the remaining replicas at level >= k from a. Subtracting the
    level-(k*+1) clusters already occupied leaves (m zeta_{k*} - zeta_{k*-1}) / n
    with m the number of such clusters, and (|C_r(a)| - zeta_{r-1}) / n at the top.
    """
    one = zetas[0] * 0 + 1
    n_total = L.shape[0]
    r = len(zetas)
    z = lambda k: zetas[k] if k >= 0 else 0 * one  # noqa: E731
    prob = one
    for size in range(n_total, 1, -1):
        b = size - 1
        rest = list(range(b))
        row = L[b, :b]
        k = int(row.max())
        a = int(np.argmax(row))
        n = size - 1
        if k == r:
            count = sum(1 for l in rest if L[a, l] >= r)
            factor = (count - z(r - 1)) / n
        else:
            cluster = [l for l in rest if L[a, l] >= k]
            m = _classes(cluster, L, k + 1)
            factor = (m * z(k) - z(k - 1)) / n
        prob = prob * factor
    return prob


def _check_pattern(fop: FunctionalOrderParameter, Q) -> ConstraintMatrix:
    if isinstance(Q, ConstraintMatrix):
        if Q.r != fop.r:
            raise ConfigError(f"constraint matrix built for r={Q.r}, fop has r={fop.r}")
        return Q
    return ConstraintMatrix.from_values(fop, Q)


def joint_overlap_probability(fop: FunctionalOrderParameter, Q) -> float:
    """P(R_{l,l'} = q_{l,l'} for all l < l') under the identities; 0 if not ultrametric."""
    cm = _check_pattern(fop, Q)
    if not cm.is_ultrametric():
        return 0.0
    return float(_pattern_probability(np.asarray(cm.levels), list(fop.zetas)))


def joint_overlap_probability_exact(fop: FunctionalOrderParameter, Q, zetas: Sequence[Fraction] | None = None) -> Fraction:
    """Rational version; ``zetas`` defaults to the exact binary values of the fop's."""
    cm = _check_pattern(fop, Q)
    if not cm.is_ultrametric():
        return Fraction(0)
    zs = [Fraction(z) for z in (zetas if zetas is not None else fop.zetas)]
    return _pattern_probability(np.asarray(cm.levels), zs)


def ultrametric_patterns(n: int, r: int) -> list[ConstraintMatrix]:
    """Every ultrametric level pattern on n labelled replicas with atoms 0..r."""
    iu = list(zip(*np.triu_indices(n, 1)))
    out = []
    for combo in itertools.product(range(r + 1), repeat=len(iu)):
        cm = ConstraintMatrix.from_pairs(n, r, dict(zip(iu, combo)))
        if cm.is_ultrametric():
            out.append(cm)
    return out


def pattern_frequencies(samples: OverlapSampleSet, fop: FunctionalOrderParameter, n: int | None = None) -> dict:
    """Empirical frequency of each level pattern over the first ``n`` replicas."""
    n = samples.n_replicas if n is None else n
    R = samples.overlaps[:, :n, :n]
    qs = np.asarray(fop.qs)
    idx = np.abs(R[..., None] - qs).argmin(axis=-1)
    iu = np.triu_indices(n, 1)
    keys, counts = np.unique(idx[:, iu[0], iu[1]], axis=0, return_counts=True)
    return {tuple(int(v) for v in k): c / R.shape[0] for k, c in zip(keys, counts)}


# ---------------------------------------------------------------- stochastic stability


def _zscore(d: np.ndarray, target: float = 0.0) -> float:
    mean = float(d.mean())
    se = float(d.std(ddof=1) / np.sqrt(d.size)) if d.size > 1 else 0.0
    if se == 0.0:
        return 0.0 if mean == target else math.inf
    return (mean - target) / se


def _tree_panel(log_v: np.ndarray, K: int, r: int) -> np.ndarray:
    v = np.exp(log_v)
    V = v.reshape((K,) * r)
    at_least = [1.0] + [float(np.sum(V.sum(axis=tuple(range(d, r))) ** 2)) for d in range(1, r)] + [float(np.sum(v * v))]
    law = -np.diff(np.asarray(at_least + [0.0]))
    return np.concatenate([[v.max(), np.sum(v * v)], law[:-1]])


def ac_stability_test(
    fop: FunctionalOrderParameter, K: int, p: int, t: float, n_mc: int, rng, k_sigma: float = K_SIGMA
) -> TestReport:
    """Compare weights before and after reweighting v_a -> v_a exp(t g_p(a)) / norm.

    Panel per tree: largest weight, sum of squared weights, and law of R_{1,2}
    (from cluster masses), as paired differences; plus the field shift
    E<g_p>' = t (1 - E<R_{1,2}^p>). Statistic is the largest |z|.
    """
    if p < 1:
        raise ConfigError("p must be >= 1")
    if n_mc < 2:
        raise ConfigError("n_mc must be >= 2")
    b_p = 1.0 - fop.moment(p)

    def one(g):
        tree = sample_cascade(fop, K, g)
        field = gaussian_field(tree, p, g)
        lw = tree.log_v + t * field
        lw = lw - np.logaddexp.reduce(lw)
        before = _tree_panel(tree.log_v, K, tree.r)
        after = _tree_panel(lw, K, tree.r)
        return np.concatenate([after - before, [np.exp(lw) @ field]])

    rows = np.asarray(map_draws(one, n_mc, rng))
    names = ["max_v", "sum_v2"] + [f"P(R=q{k})" for k in range(fop.r)]
    zs = [_zscore(rows[:, i]) for i in range(len(names))]
    zs.append(_zscore(rows[:, -1], b_p * t))
    names.append("shift")
    worst = int(np.argmax(np.abs(zs)))
    detail = ", ".join(f"{nm}={z:.2f}" for nm, z in zip(names, zs))
    return TestReport.make(zs[worst], k_sigma, n_mc, f"p={p} t={t} z: {detail}")


def invariance_check(
    fop: FunctionalOrderParameter,
    K: int,
    q_threshold: float,
    t: float,
    n: int,
    n_mc: int,
    rng,
    n_boot: int = N_BOOT,
    k_sigma: float = K_SIGMA,
) -> TestReport:
    """Compare E<1_A> with E<1_A exp(t gamma) / (W_1 e^t + 1 - W_1)^n>.

    W_1 is the exact cascade mass within overlap >= q of replica 1, A the event
    that replicas 2..n fall outside it, and gamma = E<1(R_{1,2} >= q)>. Both
    sides are computed per tree by summing over the clusters at that level.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    if not 0.0 < q_threshold <= 1.0:
        raise ConfigError("q_threshold must lie in (0, 1]")
    qs = np.asarray(fop.qs)
    k_star = int(np.argmax(qs >= q_threshold - 1e-15))

    def one(g):
        tree = sample_cascade(fop, K, g)
        W = tree.cluster_masses(k_star).ravel()
        outside = (1.0 - W) ** (n - 1)
        left = float(np.sum(W * outside))
        gamma = float(np.sum(W * W))
        h = float(np.sum(W * outside / (W * math.exp(t) + 1.0 - W) ** n))
        return left, gamma, h

    g_draws, g_boot = as_generator(rng).spawn(2)
    rows = np.asarray(map_draws(one, n_mc, g_draws))

    def signed(mu):
        return mu[0] - math.exp(t * mu[1]) * mu[2]

    stat = signed(rows.mean(axis=0))
    se = bootstrap_se(rows, signed, None, n_boot, g_boot)
    return TestReport.make(
        stat, k_sigma * se, n_mc, f"q={q_threshold} level={k_star} t={t} n={n} boot_se={se:.3g}"
    )
