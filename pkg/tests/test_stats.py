import math

import numpy as np
import pytest

from billiard_mme import renewal, stats
from billiard_mme.errors import (InsufficientSamples, NonCentered, ValidationError,
                                 ZeroVariance)

R3_LABELS = (1.0, math.sqrt(2.0), -(1.0 + math.sqrt(2.0)))


def measure(r):
    return renewal.build_measure(renewal.explicit_spec(r))


@pytest.fixture(scope="module")
def m12():
    return measure([1, 2])


@pytest.fixture(scope="module")
def m_param():
    return renewal.build_measure(renewal.parametric_spec(math.e, 4.0))


# -- observables -----------------------------------------------------------


def test_observable_masses_and_moments(m12):
    ind = stats.node_indicator()
    assert ind.mean(m12) == pytest.approx(2 / 3)
    assert ind.variance(m12) == pytest.approx(2 / 9)
    sym = stats.ObservableSpec("symbol", {(1, -1): 1.0, (2, stats.ANY_RETURN): -1.0})
    assert sym.mean(m12) == pytest.approx(1 / 3 - 1 / 3)
    cyl = stats.ObservableSpec("cylinder", {((1, -1), (2, 0)): 6.0}, depth=2)
    assert cyl.mean(m12) == pytest.approx(1.0)


def test_observable_evaluate(m12):
    path = renewal.sample_stationary(m12, 500, seed=0)
    ind = stats.node_indicator().evaluate(path)
    np.testing.assert_array_equal(ind, (path.node == 1).astype(float))
    cyl = stats.ObservableSpec("cylinder", {((1, -1), (2, 1)): 1.0}, depth=2).evaluate(path)
    assert cyl.size == 499
    want = (path.node[:-1] == 1) & ~path.ret[:-1] & path.ret[1:] & (path.label[1:] == 1)
    np.testing.assert_array_equal(cyl, want.astype(float))


def test_observable_validation():
    with pytest.raises(ValidationError):
        stats.ObservableSpec("weird", {})
    with pytest.raises(ValidationError):
        stats.ObservableSpec("cylinder", {((1, -1),): 1.0}, depth=2)
    with pytest.raises(ValidationError):
        stats.ObservableSpec("node", {1: 1.0}, depth=2)
    with pytest.raises(ValidationError):
        stats.base_balanced(measure([2]))


def test_centering(m12, m_param):
    v = stats.node_indicator().centered_for(m12)
    assert abs(v.mean(m12)) < 1e-15 and v.centered
    assert abs(stats.base_balanced(m_param).mean(m_param)) < 1e-12
    with pytest.raises(NonCentered):
        stats.estimate_correlations(m12, stats.node_indicator(), v, [0, 1])


# -- correlations ----------------------------------------------------------


def test_iid_correlations_vanish():
    m = measure([3])
    v = stats.return_labels(R3_LABELS)
    s = stats.estimate_correlations(m, v, v, range(0, 11), total_steps=200_000, seed=1)
    assert s.C[0] == pytest.approx(v.variance(m), abs=4 * s.se[0])
    assert np.all(np.abs(s.C[1:]) <= 4 * s.se[1:])
    assert s.insufficient is False


def test_correlations_match_exact_indicator(m_param):
    v = stats.node_indicator().centered_for(m_param)
    s = stats.estimate_correlations(m_param, v, v, range(0, 9), total_steps=1_000_000,
                                    seed=2)
    exact = stats.indicator_correlations(m_param, 8)
    assert exact[0] == pytest.approx(v.variance(m_param), rel=1e-12)
    assert np.all(np.abs(s.C - exact) <= 4 * s.se)


def test_return_sequence_r12(m12):
    # u_n = P(node 1 at n | node 1 at 0): f_1 = f_2 = 1/2
    u = stats.return_sequence(m12, 6)
    expect = [1.0]
    for n in range(1, 7):
        expect.append(0.5 * expect[n - 1] + (0.5 * expect[n - 2] if n >= 2 else 0.0))
    np.testing.assert_allclose(u, expect, atol=1e-15)


def test_insufficient_samples():
    m = measure([3])
    v = stats.return_labels(R3_LABELS)
    s = stats.estimate_correlations(m, v, v, [5, 6], total_steps=2_000, seed=0, batches=10)
    if s.insufficient:
        with pytest.raises(InsufficientSamples):
            stats.estimate_correlations(m, v, v, [5, 6], total_steps=2_000, seed=0,
                                        batches=10, strict=True)
    with pytest.raises(InsufficientSamples):
        stats.fit_decay_slope(s)


def test_fit_decay_slope_on_exact_power_law():
    n = np.arange(1, 65)
    series = stats.CorrelationSeries(n, 3.0 * n ** -2.0, 0.01 * n ** -2.0, 0, 0)
    fit = stats.fit_decay_slope(series)
    assert fit["slope"] == pytest.approx(-2.0, abs=1e-10)
    assert fit["band"][0] < -2.0 < fit["band"][1]


# -- Green-Kubo and CLT ----------------------------------------------------


def test_green_kubo_full_shift():
    m = measure([2])
    v = stats.return_labels([1.0, -1.0])
    gk = stats.green_kubo_variance(m, v, lag_cutoff=20, total_steps=200_000, seed=0)
    assert gk.sigma2 == pytest.approx(1.0, abs=4 * gk.se)
    assert gk.tail_bound == 0.0


def test_green_kubo_zero_observable(m12):
    v = stats.ObservableSpec("node", {})
    gk = stats.green_kubo_variance(m12, v, lag_cutoff=5, total_steps=10_000)
    assert gk.sigma2 == 0.0
    with pytest.raises(ZeroVariance):
        stats.clt_check(m12, v, n_block=10, replicates=10)


def test_exact_green_kubo_indicator(m12):
    v = stats.node_indicator().centered_for(m12)
    exact = stats.exact_green_kubo_indicator(m12, 60)
    gk = stats.green_kubo_variance(m12, v, lag_cutoff=60, total_steps=400_000, seed=3)
    assert gk.sigma2 == pytest.approx(exact, abs=4 * gk.se)


def test_clt_non_lattice_labels():
    m = measure([3])
    v = stats.return_labels(R3_LABELS)
    rep = stats.clt_check(m, v, n_block=200, replicates=2_000, seed=0, gk_steps=200_000,
                          gk_cutoff=10)
    assert rep.sigma2_gk == pytest.approx(v.variance(m), rel=0.05)
    assert rep.ks_distance < 0.05
    assert rep.variance == pytest.approx(1.0, abs=0.1)


# -- SMB -------------------------------------------------------------------


@pytest.mark.parametrize("k", [2, 5])
def test_smb_full_shift_is_exact(k):
    out = stats.smb_entropy(measure([k]), 20, samples=50)
    assert out["estimate"] == pytest.approx(math.log(k), abs=1e-14)
    assert out["se"] < 1e-14


def test_smb_richardson_removes_bias(m12):
    out = stats.smb_convergence(m12, 50, samples=2_000, seed=0)
    assert out["richardson_consistent"]
    assert abs(out["richardson_error"]) < abs(out["at_n"]["estimate"] - out["target"])


# -- tier report -----------------------------------------------------------


def test_tier_report():
    env = {"plateau": True, "k_n": [2, 3, 3, 3]}
    symbolic = {4.0: {"slope": -2.05, "band": (-2.2, -1.9)},
                6.0: {"slope": -3.0, "band": (-3.2, -2.8)}}
    rep = stats.tier_report(1.0, 0.2, complexity=env, symbolic=symbolic)
    assert [r["holds"] for r in rep.rows[:3]] == [True, True, True]
    assert "super-polynomial" in rep.billiard["tags"]
    assert len(rep.mismatches) == 1 and rep.mismatches[0].startswith("alpha=6.0")
    d = rep.to_dict()
    assert set(d) == {"billiard", "prediction", "symbolic", "rows", "mismatches"}
    low = stats.tier_report(0.1, 0.5)
    assert not any(r["holds"] for r in low.rows)
