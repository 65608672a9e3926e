import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp

from parisilab.cascades import (
    OverlapSampleSet,
    cascade_field,
    coupled_fields,
    decoupled_cavity_term,
    gaussian_field,
    overlap_of_leaves,
    parisi_via_cascade,
    sample_cascade,
    sample_cascade_replicas,
    sample_replicas,
    truncation_shift,
)
from parisilab.errors import ConfigError
from parisilab.mixture import MixtureSpec, sk
from parisilab.order_parameter import FunctionalOrderParameter
from parisilab.parisi_recursion import LOG2, evaluate

TWO = FunctionalOrderParameter((0.3, 0.7), (0.0, 0.6, 1.0))


@given(st.integers(1, 40), st.integers(0, 2**31))
def test_tree_structure(K, seed):
    tree = sample_cascade(TWO, K, seed)
    assert tree.n_leaves == K**2 and tree.log_v.shape == (K**2,)
    assert logsumexp(tree.log_v) == pytest.approx(0.0, abs=1e-12)
    for lu in tree.log_u:
        assert np.all(np.diff(lu, axis=-1) <= 0)
    assert 0.0 < tree.captured_mass_proxy <= 1.0
    law = tree.overlap_law()
    assert law.sum() == pytest.approx(1.0) and np.all(law >= -1e-15)


def test_cluster_masses_sum_to_one(rng):
    tree = sample_cascade(TWO, 20, rng)
    for d in range(3):
        assert tree.cluster_masses(d).sum() == pytest.approx(1.0)
    assert tree.cluster_masses(1).shape == (20,)


def test_largest_atom_mass_matches_poisson_dirichlet(rng):
    # for one level, E sum_a v_a^2 = 1 - zeta
    for zeta in (0.3, 0.5):
        fop = FunctionalOrderParameter.one_step(zeta)
        vals = [sample_cascade(fop, 200, g).overlap_law()[1] for g in rng.spawn(3000)]
        se = np.std(vals) / np.sqrt(len(vals))
        assert abs(np.mean(vals) - (1 - zeta)) < 4 * se + 0.005


def test_leaf_paths_and_overlaps():
    tree = sample_cascade(TWO, 5, 0)
    assert tree.leaf_paths(7).tolist() == [1, 2]
    assert overlap_of_leaves(tree, 7, 7) == 1.0
    assert overlap_of_leaves(tree, 7, 8) == 0.6
    assert overlap_of_leaves(tree, 7, 12) == 0.0
    with pytest.raises(IndexError):
        tree.leaf_paths(25)


def _empirical_cov(samples):
    c = samples - samples.mean(axis=0)
    return c.T @ c / samples.shape[0]


def test_cascade_field_covariance(rng):
    tree = sample_cascade(TWO, 2, rng)
    f = cascade_field(tree, lambda q: 0.5 + q**2, rng, copies=40000)
    cov = _empirical_cov(f)
    qs = np.array([[overlap_of_leaves(tree, a, b) for b in range(4)] for a in range(4)])
    np.testing.assert_allclose(cov, 0.5 + qs**2, atol=0.04)


def test_coupled_fields_have_the_right_marginal_laws(rng):
    m = MixtureSpec((0.7, 1.2))
    tree = sample_cascade(TWO, 2, rng)
    z, y = coupled_fields(tree, m, rng, copies=40000)
    qs = np.array([[overlap_of_leaves(tree, a, b) for b in range(4)] for a in range(4)])
    np.testing.assert_allclose(_empirical_cov(z), m.xi_prime(qs), atol=0.06)
    np.testing.assert_allclose(_empirical_cov(y), m.theta(qs), atol=0.06)
    np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=0.02)
    # fourth moment of a Gaussian
    ys = y[:, 0] / np.sqrt(m.theta(1.0))
    assert np.mean(ys**4) == pytest.approx(3.0, abs=0.15)


def test_gaussian_field_variance(rng):
    tree = sample_cascade(TWO, 3, rng)
    f = np.stack([gaussian_field(tree, 2, g) for g in rng.spawn(20000)])
    np.testing.assert_allclose(f.var(axis=0), 1.0, atol=0.05)
    with pytest.raises(ConfigError):
        gaussian_field(tree, 0, rng)


def test_field_covariance_must_increase(rng):
    tree = sample_cascade(TWO, 2, rng)
    with pytest.raises(ConfigError):
        cascade_field(tree, lambda q: 1.0 - q, rng)


def test_zero_mixture_gives_log_two_exactly():
    est = parisi_via_cascade(MixtureSpec.zero(), TWO, 30, 10, 1)
    assert abs(est.value - LOG2) <= 1e-12
    assert abs(decoupled_cavity_term(MixtureSpec.zero(), TWO, 30, 3, 5, 2).value - LOG2) <= 1e-12


def test_cascade_value_close_to_recursion():
    m = sk(1.0)
    fop = FunctionalOrderParameter.one_step(0.5)
    est = parisi_via_cascade(m, fop, 100, 300, 11)
    ref = evaluate(m, fop).value
    assert abs(est.value - ref) < 4 * est.se + 1e-3


def test_cascade_estimate_is_reproducible():
    a = parisi_via_cascade(sk(1.0), TWO, 20, 20, 5)
    b = parisi_via_cascade(sk(1.0), TWO, 20, 20, 5)
    assert a == b


def test_cascade_argument_checks():
    with pytest.raises(ConfigError):
        parisi_via_cascade(sk(1.0), TWO, 20, 1, 0)
    with pytest.raises(ConfigError):
        parisi_via_cascade(sk(1.0), TWO, 20, 5, 0, field_copies=0)
    with pytest.raises(ConfigError):
        sample_cascade(TWO, 0, 0)


def test_truncation_shift_report():
    rep = truncation_shift(sk(1.0), FunctionalOrderParameter.one_step(0.5), 20, 30, 3)
    assert set(rep) >= {"value_K", "value_2K", "shift", "combined_se", "flagged"}
    assert rep["shift"] == pytest.approx(rep["value_2K"] - rep["value_K"])
    assert rep["flagged"] == (abs(rep["shift"]) > 3 * rep["combined_se"])


def test_replica_samples(rng):
    tree = sample_cascade(TWO, 10, rng)
    ss = sample_replicas(tree, 4, 200, rng)
    ss.check()
    assert set(np.unique(ss.overlaps)) <= set(TWO.qs)
    with pytest.raises(ConfigError):
        sample_replicas(tree, 1, 10, rng)


def test_pooled_samples_carry_groups():
    ss = sample_cascade_replicas(TWO, 10, 3, 7, 5, 0)
    assert ss.n_draws == 35 and ss.groups.tolist() == sorted(ss.groups.tolist())
    assert len(np.unique(ss.groups)) == 7


def test_sample_set_csv_round_trip(tmp_path):
    ss = sample_cascade_replicas(TWO, 10, 4, 6, 3, 1)
    path = tmp_path / "s.csv"
    ss.to_csv(path)
    back = OverlapSampleSet.from_csv(path)
    np.testing.assert_array_equal(back.overlaps, ss.overlaps)
    np.testing.assert_array_equal(back.groups, ss.groups)
    assert back.source == "cascade" and back.seed == ss.seed


def test_sample_set_validation():
    with pytest.raises(ConfigError):
        OverlapSampleSet(np.zeros((3, 2)), "x")
    bad = OverlapSampleSet(np.array([[[1.0, 0.5], [0.2, 1.0]]]), "x")
    with pytest.raises(ConfigError):
        bad.check()


def test_permuted_relabels():
    ss = sample_cascade_replicas(TWO, 10, 3, 4, 4, 2)
    p = ss.permuted([2, 0, 1])
    np.testing.assert_array_equal(p.overlaps[:, 0, 1], ss.overlaps[:, 2, 0])


def test_cascade_value_for_mixed_model():
    m = MixtureSpec((0.0, 0.6, 0.5))
    fop = FunctionalOrderParameter((0.3, 0.5), (0.0, 0.5, 1.0))
    est = parisi_via_cascade(m, fop, 100, 600, 12)
    ref = evaluate(m, fop).value
    assert abs(est.value - ref) < 4 * est.se + 1e-3
