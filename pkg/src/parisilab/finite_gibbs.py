"""Exact finite-N mixed p-spin systems by enumerating all 2^N configurations.

H_N(sigma) = sum_p beta_p N^{-(p-1)/2} sum_{i_1..i_p} g_{i_1..i_p} sigma_{i_1}...sigma_{i_p}

with dense i.i.d. couplings (all index tuples, diagonal included), so that
E H(s1) H(s2) = N xi(R_{1,2}). Gibbs weights are exp(-beta H + s g(sigma))
where the optional perturbation g is stored separately and normalized by
N^{-p/2} so that E g(sigma)^2 = sum_p 4^{-p} x_p^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import logsumexp

from ._mc import as_generator, map_draws, mean_se
from .cascades import OverlapSampleSet
from .errors import CapacityError, ConfigError
from .mixture import MixtureSpec

__all__ = [
    "MAX_ENUM_N",
    "GAUSSIAN",
    "RADEMACHER",
    "DisorderModel",
    "Perturbation",
    "SpinSystem",
    "SystemParams",
    "Estimate",
    "sample_system",
    "hamiltonian",
    "perturbation_field",
    "log_weights",
    "exact_log_partition",
    "free_energy",
    "log_partition_draws",
    "ass_increment",
    "ass_telescoping",
    "sample_gibbs_replicas",
    "gibbs_replicas_over_disorder",
    "perturbed_system",
    "spin_configurations",
    "UniversalityGap",
    "universality_gap",
]

MAX_ENUM_N = 24
MAX_P = 3
_CHUNK_BITS = 14


@dataclass(frozen=True)
class DisorderModel:
    """Law of the i.i.d. couplings.

    ``custom`` models supply ``sampler(rng, shape)`` and declare their first
    three absolute moments, which must be (0, 1, finite).
    """

    kind: str = "gaussian"
    sampler: Callable | None = field(default=None, compare=False)
    mean: float = 0.0
    variance: float = 1.0
    third_abs_moment: float = float(np.sqrt(8.0 / np.pi))

    def __post_init__(self):
        if self.kind not in ("gaussian", "rademacher", "custom"):
            raise ConfigError(f"unknown disorder kind {self.kind!r}")
        if self.kind == "custom":
            if self.sampler is None:
                raise ConfigError("custom disorder needs a sampler")
            if abs(self.mean) > 1e-12 or abs(self.variance - 1.0) > 1e-12:
                raise ConfigError("custom disorder must have mean 0 and variance 1")
            if not np.isfinite(self.third_abs_moment):
                raise ConfigError("custom disorder needs a finite third absolute moment")

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_normal(shape)
        if self.kind == "rademacher":
            # signs of the same normals a Gaussian model would draw, so equal seeds pair the two laws
            return np.where(rng.standard_normal(shape) < 0, -1.0, 1.0)
        return np.asarray(self.sampler(rng, shape), dtype=float)


GAUSSIAN = DisorderModel("gaussian")
RADEMACHER = DisorderModel("rademacher", third_abs_moment=1.0)


@dataclass(frozen=True)
class Perturbation:
    s: float
    x: tuple[float, ...]  # x_p for p = 1..len(x)
    couplings: dict = field(compare=False, repr=False)

    @property
    def variance(self) -> float:
        return float(sum(4.0 ** -(p + 1) * x * x for p, x in enumerate(self.x)))


@dataclass(frozen=True)
class SpinSystem:
    N: int
    mixture: MixtureSpec
    beta: float
    couplings: dict = field(compare=False, repr=False)  # p -> array of shape (N,) * p
    disorder_model: DisorderModel = GAUSSIAN
    perturbation: Perturbation | None = None

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if self.beta < 0 or not np.isfinite(self.beta):
            raise ConfigError("beta must be finite and non-negative")


@dataclass(frozen=True)
class SystemParams:
    """Everything needed to draw a disorder realization."""

    N: int
    mixture: MixtureSpec
    beta: float
    disorder_model: DisorderModel = GAUSSIAN
    s: float = 0.0
    x: tuple[float, ...] = ()

    def with_N(self, N: int) -> "SystemParams":
        return replace(self, N=N)

    def sample(self, rng) -> SpinSystem:
        sys = sample_system(self.N, self.mixture, self.beta, self.disorder_model, rng)
        if self.s != 0.0 and any(self.x):
            sys = perturbed_system(sys, self.s, self.x, rng)
        return sys


class Estimate(NamedTuple):
    value: float
    se: float


def _draw_couplings(N, powers, model: DisorderModel, rng) -> dict:
    return {p: model.draw(rng, (N,) * p) for p in powers}


def sample_system(N: int, mixture: MixtureSpec, beta: float, disorder_model: DisorderModel = GAUSSIAN, rng=None) -> SpinSystem:
    if mixture.p_max > MAX_P and any(mixture.coefficient(p) for p in range(MAX_P + 1, mixture.p_max + 1)):
        raise CapacityError(f"dense couplings limited to p <= {MAX_P}")
    rng = as_generator(rng)
    powers = [p for p in mixture.powers if mixture.coefficient(p) > 0]
    return SpinSystem(int(N), mixture, float(beta), _draw_couplings(int(N), powers, disorder_model, rng), disorder_model)


def _contract(g: np.ndarray, S: np.ndarray) -> np.ndarray:
    """sum_{i_1..i_p} g[i_1..i_p] S[:, i_1]...S[:, i_p] for every row of S."""
    p = g.ndim
    if p == 1:
        return S @ g
    if p == 2:
        return np.einsum("cj,cj->c", S @ g, S)
    if p == 3:
        N = g.shape[0]
        T = (S @ g.reshape(N, N * N)).reshape(-1, N, N)
        return np.einsum("cjk,cj,ck->c", T, S, S, optimize=True)
    raise CapacityError(f"contraction implemented for p <= {MAX_P}")


def _energy(sys: SpinSystem, S: np.ndarray) -> np.ndarray:
    N = sys.N
    out = np.zeros(S.shape[0])
    for p, g in sys.couplings.items():
        b = sys.mixture.coefficient(p)
        if b:
            out += b * N ** (-(p - 1) / 2.0) * _contract(g, S)
    return out


def _pert_field(pert: Perturbation, N: int, S: np.ndarray) -> np.ndarray:
    out = np.zeros(S.shape[0])
    for p, g in pert.couplings.items():
        out += 2.0 ** -p * pert.x[p - 1] * N ** (-p / 2.0) * _contract(g, S)
    return out


def _as_spins(sys: SpinSystem, sigma) -> np.ndarray:
    S = np.asarray(sigma, dtype=float)
    single = S.ndim == 1
    S = np.atleast_2d(S)
    if S.shape[1] != sys.N:
        raise ConfigError(f"spin vector has length {S.shape[1]}, system has N={sys.N}")
    if np.any(np.abs(S) != 1.0):
        raise ConfigError("spins must be +-1")
    return S, single


def hamiltonian(sys: SpinSystem, sigma):
    """H_N(sigma) for one spin vector or a stack of them (no beta, no perturbation)."""
    S, single = _as_spins(sys, sigma)
    e = _energy(sys, S)
    return float(e[0]) if single else e


def perturbation_field(sys: SpinSystem, sigma):
    S, single = _as_spins(sys, sigma)
    e = np.zeros(S.shape[0]) if sys.perturbation is None else _pert_field(sys.perturbation, sys.N, S)
    return float(e[0]) if single else e


def spin_configurations(N: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Rows sigma for integer codes ``start..stop-1``; bit i set means sigma_i = -1."""
    stop = 2 ** N if stop is None else stop
    codes = np.arange(start, stop, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(N, dtype=np.int64)) & 1
    return 1.0 - 2.0 * bits


def _check_enum(N: int) -> None:
    if N > MAX_ENUM_N:
        raise CapacityError(f"exact enumeration limited to N <= {MAX_ENUM_N}, got {N}")


def _chunks(N: int):
    size = 2 ** min(N, _CHUNK_BITS)
    for start in range(0, 2 ** N, size):
        yield spin_configurations(N, start, start + size)


def _chunk_log_weights(sys: SpinSystem, S: np.ndarray) -> np.ndarray:
    lw = -sys.beta * _energy(sys, S) if sys.beta else np.zeros(S.shape[0])
    if sys.perturbation is not None and sys.perturbation.s:
        lw = lw + sys.perturbation.s * _pert_field(sys.perturbation, sys.N, S)
    return lw


def log_weights(sys: SpinSystem) -> np.ndarray:
    """Unnormalized log Gibbs weights of all 2^N configurations, in code order."""
    _check_enum(sys.N)
    return np.concatenate([_chunk_log_weights(sys, S) for S in _chunks(sys.N)])


def exact_log_partition(sys: SpinSystem) -> float:
    _check_enum(sys.N)
    if sys.beta == 0.0 and (sys.perturbation is None or sys.perturbation.s == 0.0):
        return sys.N * float(np.log(2.0))
    parts = [logsumexp(_chunk_log_weights(sys, S)) for S in _chunks(sys.N)]
    return float(logsumexp(parts))


def log_partition_draws(params: SystemParams, n_disorder: int, rng) -> np.ndarray:
    """log Z_N for ``n_disorder`` independent disorder draws (child streams of ``rng``)."""
    _check_enum(params.N)
    if params.N == 0:
        return np.zeros(n_disorder)
    return np.asarray(map_draws(lambda g: exact_log_partition(params.sample(g)), n_disorder, rng))


def free_energy(params: SystemParams, n_disorder: int, rng) -> Estimate:
    """(1/N) E log Z_N by averaging exact log partitions over disorder draws."""
    if n_disorder < 2:
        raise ConfigError("need at least two disorder draws")
    return Estimate(*mean_se(log_partition_draws(params, n_disorder, rng) / params.N))


def _cavity_terms(params: SystemParams, j: int, g: np.random.Generator) -> float:
    m, beta = params.mixture, params.beta
    b1, b2 = m.coefficient(1), m.coefficient(2)
    if j == 0:
        z0 = beta * b1 * g.standard_normal()
        return float(np.logaddexp(z0, -z0))
    N = j
    c = np.sqrt(N + 1.0)
    S = spin_configurations(N)
    gm = g.standard_normal((N, N))
    h = b2 / c * np.einsum("cj,cj->c", S @ gm, S)
    if b1:
        h = h + b1 * (S @ g.standard_normal(N))
    cross = g.standard_normal((2, N)).sum(axis=0)  # g_{i,N+1} + g_{N+1,i}
    z = b2 / c * (S @ cross) + (b1 * g.standard_normal() if b1 else 0.0)
    gy = g.standard_normal((N, N))
    y = b2 / np.sqrt(N * (N + 1.0)) * np.einsum("cj,cj->c", S @ gy, S)
    lw = -beta * h
    bz = beta * z
    first = logsumexp(lw + np.logaddexp(bz, -bz))
    second = logsumexp(lw - beta * y)
    return float(first - second)


def ass_increment(j: int, params: SystemParams, n_disorder: int, rng, mode: str = "direct") -> Estimate:
    """Estimate A_j = E log Z_{j+1} - E log Z_j.

    ``direct`` uses independent draws at sizes j + 1 and j. ``cavity`` writes
    H_{j+1}(sigma, eps) = H'(sigma) + eps z(sigma) + const and compares with
    H_j =d H' + y on one shared H'; it needs Gaussian disorder and no p > 2.
    """
    if j < 0 or j + 1 > MAX_ENUM_N:
        raise ConfigError(f"cavity index j must satisfy 0 <= j <= {MAX_ENUM_N - 1}")
    if n_disorder < 2:
        raise ConfigError("need at least two disorder draws")
    rng = as_generator(rng)
    if mode == "direct":
        g_hi, g_lo = rng.spawn(2)
        hi = log_partition_draws(params.with_N(j + 1), n_disorder, g_hi)
        if j == 0:
            return Estimate(*mean_se(hi))
        lo = log_partition_draws(params.with_N(j), n_disorder, g_lo)
        m_hi, s_hi = mean_se(hi)
        m_lo, s_lo = mean_se(lo)
        return Estimate(m_hi - m_lo, float(np.hypot(s_hi, s_lo)))
    if mode == "cavity":
        m = params.mixture
        if any(m.coefficient(p) for p in range(3, m.p_max + 1)):
            raise ConfigError("cavity mode supports mixtures with p <= 2 only")
        if params.disorder_model.kind != "gaussian" or params.s:
            raise ConfigError("cavity mode needs unperturbed Gaussian disorder")
        vals = map_draws(lambda g: _cavity_terms(params, j, g), n_disorder, rng)
        return Estimate(*mean_se(vals))
    raise ConfigError(f"unknown mode {mode!r}; expected 'direct' or 'cavity'")


def ass_telescoping(params: SystemParams, n_disorder: int, rng) -> dict:
    """Increments A_j from one shared set of mean log Z_j estimates, j < N.

    Returns per-size means ``L`` (L_0 = 0) with their standard errors,
    increments, and F_N = L_N / N; the increments add up to L_N by construction.
    """
    rng = as_generator(rng)
    gens = rng.spawn(params.N)
    L, L_se = [0.0], [0.0]
    for n, g in zip(range(1, params.N + 1), gens):
        mu, se = mean_se(log_partition_draws(params.with_N(n), n_disorder, g))
        L.append(mu)
        L_se.append(se)
    L = np.asarray(L)
    inc = np.diff(L)
    return {
        "L": L,
        "L_se": np.asarray(L_se),
        "increments": inc,
        "free_energy": L[-1] / params.N,
        "mean_increment": float(np.sum(inc) / params.N),
    }


def _overlaps_from_spins(S: np.ndarray) -> np.ndarray:
    # S: (draws, n, N)
    R = np.einsum("dai,dbi->dab", S, S) / S.shape[-1]
    idx = np.arange(S.shape[1])
    R[:, idx, idx] = 1.0
    return R


def sample_gibbs_replicas(sys: SpinSystem, n: int, n_draws: int, rng) -> OverlapSampleSet:
    """i.i.d. replicas from the exact Gibbs measure of one disorder realization."""
    if n < 2:
        raise ConfigError("need at least two replicas")
    rng = as_generator(rng)
    lw = log_weights(sys)
    p = np.exp(lw - logsumexp(lw))
    codes = rng.choice(p.size, size=(n_draws, n), p=p / p.sum())
    bits = (codes[..., None] >> np.arange(sys.N, dtype=np.int64)) & 1
    S = 1.0 - 2.0 * bits
    return OverlapSampleSet(_overlaps_from_spins(S), "gibbs", {"N": sys.N, "beta": sys.beta})


def gibbs_replicas_over_disorder(params: SystemParams, n: int, n_disorder: int, draws_per: int, rng) -> OverlapSampleSet:
    """Replica overlaps pooled over disorder draws; ``groups`` holds the draw index."""
    mats = map_draws(lambda g: sample_gibbs_replicas(params.sample(g), n, draws_per, g).overlaps, n_disorder, rng)
    groups = np.repeat(np.arange(n_disorder), draws_per)
    return OverlapSampleSet(np.concatenate(mats), "gibbs", {"N": params.N, "n_disorder": n_disorder}, groups)


def perturbed_system(sys: SpinSystem, s: float, x_params, rng=None) -> SpinSystem:
    """Add s * sum_p 2^{-p} x_p g_p(sigma) with fresh Gaussian couplings for g_p."""
    x = tuple(float(v) for v in x_params)
    if s < 0 or not np.isfinite(s):
        raise ConfigError("perturbation strength s must be finite and non-negative")
    if any(not 0.0 <= v <= 3.0 for v in x):
        raise ConfigError(f"perturbation parameters x_p must lie in [0, 3], got {x}")
    if len(x) > MAX_P:
        raise CapacityError(f"perturbation limited to p <= {MAX_P}")
    if s == 0.0 or not any(x):
        return sys
    rng = as_generator(rng)
    couplings = {p: rng.standard_normal((sys.N,) * p) for p in range(1, len(x) + 1) if x[p - 1]}
    return replace(sys, perturbation=Perturbation(float(s), x, couplings))


@dataclass(frozen=True)
class UniversalityGap:
    N: int
    gaussian: Estimate
    rademacher: Estimate
    diff: float  # gaussian minus rademacher free energy
    diff_se: float
    plain_diff: float  # same difference without control variates
    plain_diff_se: float


def _log_cosh(x):
    a = np.abs(x)
    return a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)


def _pair_log_cosh_mean(model: DisorderModel, k: float) -> float:
    """E log cosh(k (g + g')) for two independent couplings of the law."""
    if model.kind == "rademacher":
        return 0.5 * float(_log_cosh(2.0 * k))
    x, w = hermegauss(80)
    return float(np.sum(w * _log_cosh(k * np.sqrt(2.0) * x)) / np.sqrt(2.0 * np.pi))


def _sk_draw_terms(N: int, k: float, model: DisorderModel, g) -> tuple[float, float, float, float]:
    """log Z with its exactly known pieces removed, plus two mean-zero loop sums."""
    G = model.draw(g, (N, N))
    J = G + G.T
    S = spin_configurations(N)
    log_z = float(logsumexp(-k * np.einsum("cj,cj->c", S @ G, S)))
    iu = np.triu_indices(N, 1)
    resid = log_z + k * float(np.trace(G)) - float(np.sum(_log_cosh(k * J[iu])))
    T = np.tanh(k * J)
    np.fill_diagonal(T, 0.0)
    T2 = T @ T
    c3 = float(np.trace(T2 @ T)) / 6.0
    c4 = (float(np.sum(T2 * T2.T)) - 2.0 * float(np.sum(np.diag(T2) ** 2)) + float(np.sum(T ** 4))) / 8.0
    return log_z, resid, c3, c4


def _adjusted(resid: np.ndarray, loops: np.ndarray) -> np.ndarray:
    X = np.column_stack([np.ones(len(resid)), loops])
    coef, *_ = np.linalg.lstsq(X, resid, rcond=None)
    return resid - loops @ coef[1:]


def universality_gap(N: int, beta: float, n_disorder: int, rng, b2: float = 1.0) -> UniversalityGap:
    """Gaussian minus Rademacher free energy of the SK model at size N.

    Both laws are driven by the same child streams, so the Rademacher
    couplings are the signs of the Gaussian ones and the difference is
    paired. Each per-draw log Z has the diagonal constant and the pairwise
    log cosh sum replaced by its mean, and is regressed on the triangle and
    square loop sums of tanh couplings, which have mean zero under both laws.
    """
    if n_disorder < 4:
        raise ConfigError("need at least four disorder draws")
    if N < 2:
        raise ConfigError("universality comparison needs N >= 2")
    _check_enum(N)
    k = beta * b2 / np.sqrt(N)
    rng = as_generator(rng)
    seeds = [c.bit_generator.seed_seq for c in rng.spawn(n_disorder)]
    out = {}
    for model in (GAUSSIAN, RADEMACHER):
        rows = np.array([_sk_draw_terms(N, k, model, np.random.default_rng(s)) for s in seeds])
        pairs = N * (N - 1) / 2.0 * _pair_log_cosh_mean(model, k)
        adjusted = (_adjusted(rows[:, 1], rows[:, 2:]) + pairs) / N
        out[model.kind] = (rows[:, 0] / N, adjusted)
    plain = out["gaussian"][0] - out["rademacher"][0]
    adj = out["gaussian"][1] - out["rademacher"][1]
    d, d_se = mean_se(adj)
    pd, pd_se = mean_se(plain)
    return UniversalityGap(
        N, Estimate(*mean_se(out["gaussian"][1])), Estimate(*mean_se(out["rademacher"][1])), d, d_se, pd, pd_se
    )
