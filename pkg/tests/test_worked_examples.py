"""Small worked cases with known answers, one or two per operation."""

import numpy as np
import pytest
from scipy import stats

from parisilab.cascades import (
    OverlapSampleSet,
    decoupled_cavity_term,
    gaussian_field,
    overlap_of_leaves,
    sample_cascade,
    sample_cascade_replicas,
)
from parisilab.diagnostics import (
    ConstraintMatrix,
    ac_stability_test,
    constant_one,
    gg_delta,
    invariance_check,
    joint_overlap_probability,
    positivity_check,
    ultrametricity_violation,
)
from parisilab.errors import OrderParameterError
from parisilab.finite_gibbs import (
    GAUSSIAN,
    SpinSystem,
    SystemParams,
    exact_log_partition,
    free_energy,
    hamiltonian,
    sample_gibbs_replicas,
    sample_system,
    spin_configurations,
)
from parisilab.guerra import guerra_gap, phi_grid
from parisilab.mixture import MixtureSpec, absorb_beta, sk
from parisilab.order_parameter import FunctionalOrderParameter, validate
from parisilab.parisi_recursion import LOG2, QuadratureSpec, annealed_value, derivative_beta_p, parisi_value, recursion_step
from parisilab.parisi_search import SearchOptions, minimize_fixed_r, refine_r

QUICK = SearchOptions(starts=2, quad=QuadratureSpec(8.0, 301, 24))


# ---------------------------------------------------------------- mixture


@pytest.mark.parametrize(
    "coeffs, x, xi, theta",
    [((0.0, 1.0), 0.5, 0.25, 0.25), ((1.0, 1.0), -0.3, -0.21, 0.09), ((0.0, 0.0, 1.0), 0.5, 0.125, 0.25), ((0.3, 0.7), 0.0, 0.0, 0.0)],
)
def test_mixture_values(coeffs, x, xi, theta):
    m = MixtureSpec(coeffs)
    assert m.xi(x) == pytest.approx(xi)
    assert m.theta(x) == pytest.approx(theta)


def test_absorb_beta_cases():
    m = MixtureSpec((0.0, 1.0))
    assert absorb_beta(m, 2.0).coeffs == (0.0, 2.0)
    assert absorb_beta(m, 2.0).xi(0.5) == pytest.approx(1.0)
    assert absorb_beta(m, 0.0).is_zero
    assert absorb_beta(m, 1.0) == m


# ---------------------------------------------------------------- order parameter


def test_fop_examples():
    validate([0.5], [0, 1])
    with pytest.raises(OrderParameterError) as exc:
        validate([0.5, 0.5], [0, 0.5, 1])
    assert exc.value.index == 1
    with pytest.raises(OrderParameterError):
        validate([0.5], [0, 1.2])
    assert FunctionalOrderParameter.one_step(0.5).moment(1) == 0.5
    assert FunctionalOrderParameter((0.3, 0.7), (0, 0.5, 1)).moment(2) == pytest.approx(0.4)
    tiny = FunctionalOrderParameter((0.3, 0.7), (0, 1e-6, 1))
    assert tiny.moment(3) == pytest.approx(1 - 0.7, abs=1e-6)


def test_overlap_values_binomial(rng):
    fop = FunctionalOrderParameter.one_step(0.5)
    x = fop.sample_overlap_value(rng, 100000)
    assert abs(np.mean(x == 0.0) - 0.5) <= 3 * np.sqrt(0.25 / 1e5)
    two = FunctionalOrderParameter((0.3, 0.7), (0, 0.5, 1))
    y = two.sample_overlap_value(rng, 100000)
    assert abs(y.mean() - two.moment(1)) <= 3 * y.std() / np.sqrt(1e5)
    near_one = FunctionalOrderParameter.one_step(1 - 1e-6)
    assert np.mean(near_one.sample_overlap_value(rng, 10000) == 0.0) > 0.999


# ---------------------------------------------------------------- recursion


def test_step_continuous_at_zeta_one():
    grid = np.linspace(-5, 5, 101)
    f = lambda y: np.log(np.cosh(y))  # noqa: E731
    a = recursion_step(f, grid, 1 - 1e-9, 0.8, 40)
    b = np.log(recursion_step(lambda y: np.exp(f(y)), grid, 0.0, 0.8, 40))
    assert np.max(np.abs(a - b)) <= 1e-8


def test_derivative_vanishes_at_zero_coupling():
    fop = FunctionalOrderParameter.one_step(0.5)
    assert derivative_beta_p(MixtureSpec.zero(), fop, 2, 1e-3) == 0.0


def test_small_coupling_derivative_for_fixed_fop():
    # to second order, P = log 2 + beta^2 (1 - zeta_0 / 2) for r = 1, q = (0, 1)
    beta, zeta = 0.02, 0.5
    d = derivative_beta_p(sk(beta), FunctionalOrderParameter.one_step(zeta), 2, 1e-4)
    assert d == pytest.approx(beta * (2 - zeta), abs=4 * beta**3)


def test_derivative_formula_at_replica_symmetric_point():
    # all mass at q = 0: dP/dbeta_2 = beta_2 (1 - moment_2) = beta_2
    d = derivative_beta_p(sk(0.3), FunctionalOrderParameter.one_step(1 - 1e-7), 2, 1e-3)
    assert d == pytest.approx(0.3, abs=1e-5)


# ---------------------------------------------------------------- search


def _grid_min(m, quad):
    vals = [parisi_value(m, FunctionalOrderParameter.one_step(z), quad) for z in np.linspace(0.02, 0.999, 60)]
    return min(vals)


def _two_step_grid_min(m, quad):
    grid = np.linspace(0.1, 0.9, 9)
    return min(
        parisi_value(m, FunctionalOrderParameter((a, b), (0.0, q, 1.0)), quad)
        for a in grid
        for b in grid
        if b > a
        for q in (0.3, 0.5, 0.7)
    )


def test_high_temperature_search_against_grid():
    m = sk(0.3)
    res = minimize_fixed_r(m, 1, QUICK, rng=0)
    assert res.best_value == pytest.approx(LOG2 + 0.045, abs=1e-3)
    assert res.best_value <= _grid_min(m, QUICK.quad) + 1e-7


def test_low_temperature_gap_against_grid():
    # with q_r = 1 the one-level functional is minimised at zeta_0 -> 1, so the
    # gap below the annealed value needs an interior overlap level
    m = sk(1.0)
    coarse = _two_step_grid_min(m, QUICK.quad)
    assert coarse < LOG2 + 0.5 - 1e-3
    assert minimize_fixed_r(m, 2, QUICK, rng=0).best_value <= coarse + 1e-7


def test_refine_r_examples():
    zero = refine_r(MixtureSpec.zero(), 3, 1e-6, QUICK)
    assert zero.r_used == 1 and zero.best_value == LOG2
    hot = refine_r(sk(0.3), 3, 1e-6, QUICK, rng=1)
    assert hot.r_used in (1, 2) and hot.best_value == pytest.approx(LOG2 + 0.045, abs=1e-3)
    cold = refine_r(sk(1.5), 2, 1e-6, QUICK, rng=2)
    assert cold.values_by_r[2] <= cold.values_by_r[1]


# ---------------------------------------------------------------- cascades


def test_single_leaf():
    tree = sample_cascade(FunctionalOrderParameter.one_step(0.5), 1, 0)
    assert tree.v.tolist() == [1.0]


def test_ordering_in_many_trees(rng):
    fop = FunctionalOrderParameter((0.3, 0.7), (0, 0.5, 1))
    for g in rng.spawn(1000):
        tree = sample_cascade(fop, 5, g)
        assert all(np.all(np.diff(u, axis=-1) < 0) for u in tree.u)


def test_collision_frequency(rng):
    fop = FunctionalOrderParameter.one_step(0.5)
    vals = [float(np.sum(sample_cascade(fop, 200, g).v ** 2)) for g in rng.spawn(10000)]
    assert np.mean(vals) == pytest.approx(0.5, abs=0.02)


def test_leaf_overlap_cases():
    tree = sample_cascade(FunctionalOrderParameter((0.3, 0.7), (0, 0.5, 1)), 3, 0)
    assert overlap_of_leaves(tree, 4, 4) == 1.0
    assert overlap_of_leaves(tree, 0, 3) == 0.0
    assert overlap_of_leaves(tree, 3, 5) == 0.5


def test_replica_labels_exchangeable():
    fop = FunctionalOrderParameter((0.3, 0.7), (0, 0.5, 1))
    ss = sample_cascade_replicas(fop, 50, 3, 2000, 2, 4)
    a = ss.overlaps[:, 0, 1]
    b = ss.permuted([2, 1, 0]).overlaps[:, 0, 1]
    assert stats.ks_2samp(a, b).pvalue > 0.001


def test_field_covariances_and_independence(rng):
    tree = sample_cascade(FunctionalOrderParameter((0.3, 0.7), (0, 0.5, 1)), 2, rng)
    gens = rng.spawn(10000)
    f1 = np.stack([gaussian_field(tree, 1, g) for g in gens])
    f2 = np.stack([gaussian_field(tree, 2, g) for g in gens])
    np.testing.assert_allclose(f1.var(axis=0), 1.0, atol=0.06)
    q = overlap_of_leaves(tree, 0, 1)
    assert np.cov(f2[:, 0], f2[:, 1])[0, 1] == pytest.approx(q**2, abs=0.06)
    assert abs(np.corrcoef(f1[:, 0], f2[:, 0])[0, 1]) < 3 / np.sqrt(10000)


def test_decoupling_over_copies():
    m = sk(1.0)
    fop = FunctionalOrderParameter((0.3, 0.7), (0, 0.5, 1))
    three = decoupled_cavity_term(m, fop, 50, 3, 1500, 1)
    one = decoupled_cavity_term(m, fop, 50, 1, 1500, 2)
    assert abs(three.value - one.value) < 3 * np.hypot(three.se, one.se)


# ---------------------------------------------------------------- finite systems


def test_single_spin():
    sys = sample_system(1, sk(1.0), 0.7, GAUSSIAN, 3)
    g = sys.couplings[2][0, 0]
    assert hamiltonian(sys, [1]) == pytest.approx(g)
    assert exact_log_partition(sys) == pytest.approx(LOG2 - 0.7 * g)


def test_two_spins_hand_built():
    g = np.array([[0.3, -1.2], [0.5, 0.8]])
    sys = SpinSystem(2, MixtureSpec((0.0, 1.0)), 1.0, {2: g})
    terms = []
    for s in ([1, 1], [1, -1], [-1, 1], [-1, -1]):
        e = sum(g[i, j] * s[i] * s[j] for i in range(2) for j in range(2)) / np.sqrt(2)
        terms.append(np.exp(-e))
    assert exact_log_partition(sys) == pytest.approx(np.log(sum(terms)))


def test_energy_second_moments(rng):
    N = 8
    sigma = np.ones(N)
    tau = np.array([1, 1, 1, 1, 1, 1, -1, -1.0])  # overlap 0.5
    h = np.array([hamiltonian(sample_system(N, sk(1.0), 1.0, GAUSSIAN, g), np.stack([sigma, tau])) for g in rng.spawn(10000)])
    se_sq = np.std(h[:, 0] ** 2) / 100
    assert abs(np.mean(h[:, 0] ** 2) - N) < 3 * se_sq
    prod = h[:, 0] * h[:, 1]
    assert abs(prod.mean() - N * 0.25) < 3 * prod.std() / 100


def test_free_energy_examples():
    one = free_energy(SystemParams(1, sk(1.0), 1.0), 4000, 1)
    assert abs(one.value - LOG2) < 3 * one.se
    f = free_energy(SystemParams(6, sk(1.0), 1.2), 200, 2)
    assert f.value <= annealed_value(sk(1.2)) + 3 * f.se


def test_gibbs_overlap_examples(rng):
    hot = sample_gibbs_replicas(sample_system(16, sk(1.0), 0.0, GAUSSIAN, rng), 2, 20000, rng)
    r = hot.overlaps[:, 0, 1]
    assert abs(r.mean()) < 3 * r.std() / np.sqrt(r.size)
    assert r.var() == pytest.approx(1 / 16, rel=0.05)
    single = sample_gibbs_replicas(sample_system(1, sk(1.0), 0.0, GAUSSIAN, rng), 2, 4000, rng)
    assert set(np.unique(single.overlaps[:, 0, 1])) == {-1.0, 1.0}
    warm = sample_gibbs_replicas(sample_system(8, sk(1.0), 2.0, GAUSSIAN, 11), 2, 2000, rng)
    cold = sample_gibbs_replicas(sample_system(8, sk(1.0), 60.0, GAUSSIAN, 11), 2, 2000, rng)
    assert np.abs(cold.overlaps[:, 0, 1]).mean() > max(0.95, np.abs(warm.overlaps[:, 0, 1]).mean())


def test_perturbation_shift_bounds():
    base = SystemParams(6, sk(1.0), 1.0)
    pert = SystemParams(6, sk(1.0), 1.0, s=1.5, x=(1.0, 2.0))
    a = free_energy(base, 400, 5)
    b = free_energy(pert, 400, 5)
    # same streams for the base couplings, so the difference is paired
    shift = b.value - a.value
    bound = 1.5**2 / (2 * 6) * (0.25 + 0.25)
    assert -3 * np.hypot(a.se, b.se) <= shift <= bound + 3 * np.hypot(a.se, b.se)


# ---------------------------------------------------------------- interpolation


def test_interpolation_endpoints_and_order():
    params = SystemParams(8, sk(1.0), 1.0)
    fop = FunctionalOrderParameter((0.3, 0.7), (0, 0.5, 1))
    run = phi_grid([0.0, 1.0], params, fop, 50, 100, 0)
    d = run.draws[:, 1] - run.draws[:, 0]
    assert d.mean() <= 3 * d.std() / np.sqrt(d.size)


def test_gap_examples():
    fop = FunctionalOrderParameter((0.3, 0.7), (0, 0.5, 1))
    assert guerra_gap(SystemParams(4, sk(1.0), 0.0), fop, 10, 0).gap == 0.0
    near_min = FunctionalOrderParameter((0.45,), (0.0, 1.0))
    g4 = guerra_gap(SystemParams(4, sk(1.0), 1.0), near_min, 1000, 1)
    g12 = guerra_gap(SystemParams(12, sk(1.0), 1.0), near_min, 300, 2)
    assert g12.gap < g4.gap and g12.gap > -3 * g12.se


# ---------------------------------------------------------------- diagnostics


def test_adversarial_ultrametricity():
    R = np.array([[[1.0, 0.5, 0.5], [0.5, 1.0, 0.2], [0.5, 0.2, 1.0]]])
    assert ultrametricity_violation(OverlapSampleSet(R, "toy")).statistic == pytest.approx(0.3)


def test_finite_size_measurements(rng):
    params = SystemParams(8, sk(1.0), 1.5)
    from parisilab.finite_gibbs import gibbs_replicas_over_disorder

    ss = gibbs_replicas_over_disorder(params, 3, 20, 50, rng)
    rep = ultrametricity_violation(ss)
    assert rep.statistic >= 0.0
    free = gibbs_replicas_over_disorder(SystemParams(8, sk(1.0), 0.0), 2, 5, 200, rng)
    assert not positivity_check(free).passed
    assert gg_delta(ss, constant_one, 2, 1, n_boot=100, rng=1).statistic == pytest.approx(0.0, abs=1e-12)


def test_joint_pattern_examples():
    fop = FunctionalOrderParameter((0.3, 0.7), (0, 0.5, 1))
    ok = ConstraintMatrix.from_pairs(3, 2, {(0, 1): 1, (0, 2): 0, (1, 2): 0})
    bad = ConstraintMatrix.from_pairs(3, 2, {(0, 1): 1, (0, 2): 1, (1, 2): 0})
    assert ok.is_ultrametric() and joint_overlap_probability(fop, ok) > 0
    assert joint_overlap_probability(fop, bad) == 0.0


def test_stability_examples():
    fop = FunctionalOrderParameter.one_step(0.5)
    assert ac_stability_test(fop, 200, 1, 0.0, 50, 0).passed
    assert ac_stability_test(fop, 200, 1, 0.5, 1000, 1).passed


def test_invariance_examples():
    fop = FunctionalOrderParameter.one_step(0.5)
    assert invariance_check(fop, 200, 0.999, 0.0, 3, 50, 0, n_boot=50).statistic == pytest.approx(0.0, abs=1e-15)
    assert invariance_check(fop, 200, 0.999, 1.0, 3, 1000, 1).passed
    assert invariance_check(fop, 200, 0.999, 1.0, 1, 1000, 2).passed
