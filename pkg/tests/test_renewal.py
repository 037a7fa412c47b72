import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from billiard_mme import renewal
from billiard_mme.errors import (DegenerateSpec, InfiniteS, NoSolution, ParseError,
                                 TruncationTooCoarse, ValidationError)


@pytest.fixture(scope="module")
def m12():
    return renewal.build_measure(renewal.explicit_spec([1, 2]))


@pytest.fixture(scope="module")
def m_param():
    return renewal.build_measure(renewal.parametric_spec(math.e, 4.0))


# -- lambda ----------------------------------------------------------------


@pytest.mark.parametrize("r,lam", [([2], 2.0), ([1, 2], 2.0), ([5], 5.0), ([0, 4], 2.0),
                                   ([1, 1, 1], 1.8392867552141612)])
def test_solve_lambda_examples(r, lam):
    assert renewal.solve_lambda(r) == pytest.approx(lam, rel=1e-14)


@settings(max_examples=50)
@given(st.lists(st.floats(0.0, 5.0), min_size=1, max_size=8).filter(lambda r: sum(r) > 1.01))
def test_solve_lambda_is_a_root(r):
    lam = renewal.solve_lambda(r)
    n = np.arange(1, len(r) + 1)
    assert lam > 1
    assert math.fsum(np.asarray(r) * lam ** (-n)) == pytest.approx(1.0, abs=1e-12)


def test_solve_lambda_errors():
    with pytest.raises(NoSolution):
        renewal.solve_lambda([1])
    with pytest.raises(NoSolution):
        renewal.solve_lambda([0.5, 0.5])
    with pytest.raises(DegenerateSpec):
        renewal.solve_lambda([0, 0])
    with pytest.raises(ValidationError):
        renewal.solve_lambda([1, -2])
    with pytest.raises(ValidationError):
        renewal.solve_lambda([])


# -- measure ---------------------------------------------------------------


def test_measure_r12(m12):
    assert m12.lam == 2.0
    assert m12.S == pytest.approx(1.5, abs=1e-15)
    np.testing.assert_allclose(m12.w, [2 / 3, 1 / 3], atol=1e-15)
    np.testing.assert_allclose(m12.p, [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(m12.stay, [0.5, 0.0], atol=1e-15)
    assert m12.p_check <= 1e-15


@pytest.mark.parametrize("k", [2, 3, 7])
def test_full_shift_measure(k):
    m = renewal.build_measure(renewal.explicit_spec([k]))
    assert m.S == pytest.approx(1.0, abs=1e-15) and m.w[0] == pytest.approx(1.0, abs=1e-15)
    assert m.p[0] == pytest.approx(1 / k, rel=1e-15)
    h, log_lam = renewal.entropy_closed_form(m)
    assert h == pytest.approx(math.log(k), rel=1e-14) and log_lam == pytest.approx(math.log(k))


def test_parametric_measure_is_stochastic(m_param):
    m = renewal.build_measure(renewal.parametric_spec(math.e, 4.0, N=60))
    assert np.max(np.abs(renewal.row_sums(m) - 1)) <= 1e-10
    assert renewal.stationarity_defect(m) <= 1e-12
    assert np.max(np.abs(renewal.row_sums(m_param)[m_param.w > 0] - 1)) <= 1e-10
    assert m_param.lam == math.e


def test_parametric_spec_calibration():
    spec = renewal.parametric_spec(3.0, 3.5, N=200)
    assert abs(spec.residual()) <= 1e-15
    n = np.arange(1, 201)
    np.testing.assert_allclose(spec.r[:-1], (spec.q * 3.0 ** n)[:-1], rtol=1e-12)
    ratio = spec.q[:-1] * n[:-1] ** 3.5
    assert np.ptp(ratio) <= 1e-12 * ratio[0]
    assert spec.tail > 0


def test_parametric_huge_truncation_keeps_q_only():
    spec = renewal.parametric_spec(math.e, 4.0, N=5000)
    assert spec.r is None
    assert spec.r_value(10) == pytest.approx(spec.q[9] * math.e ** 10)


def test_infinite_S():
    with pytest.raises(InfiniteS):
        renewal.default_truncation(2.0)
    with pytest.raises(InfiniteS):
        renewal.build_measure(renewal.parametric_spec(math.e, 1.5, N=100))
    with pytest.raises(ValidationError):
        renewal.parametric_spec(0.9, 4.0)


def test_entropy_closed_form(m12, m_param):
    h, log_lam = renewal.entropy_closed_form(m12)
    assert h == pytest.approx(math.log(2), abs=1e-15)
    h, log_lam = renewal.entropy_closed_form(m_param)
    assert h == pytest.approx(log_lam, abs=1e-10)
    coarse = renewal.build_measure(renewal.parametric_spec(math.e, 4.0, N=20))
    with pytest.raises(TruncationTooCoarse):
        renewal.entropy_closed_form(coarse)


# -- sampling --------------------------------------------------------------


def test_sample_frequencies_match_measure(m12):
    n = 200_000
    path = renewal.sample_stationary(m12, n, seed=0)
    for node, expected in ((1, 2 / 3), (2, 1 / 3)):
        freq = np.mean(path.node == node)
        assert abs(freq - expected) <= 4 * math.sqrt(expected * (1 - expected) / n) * 2
    # consecutive symbols chain along the graph
    nxt = np.where(path.ret[:-1], 1, path.node[:-1] + 1)
    assert np.array_equal(nxt, path.node[1:])
    ret2 = path.ret & (path.node == 1)
    assert set(np.unique(path.label[ret2])) == {0}
    assert set(np.unique(path.label[path.ret & (path.node == 2)])) == {0, 1}


def test_sampling_is_reproducible(m12):
    a = renewal.sample_stationary(m12, 1000, seed=42)
    b = renewal.sample_stationary(m12, 1000, seed=42)
    c = renewal.sample_stationary(m12, 1000, seed=43)
    assert renewal.separation_time(a, b) == math.inf
    assert renewal.separation_time(a, c) < 1000
    assert len(a) == 1000


def test_full_shift_symbols_are_uniform():
    from scipy import stats as sps
    m = renewal.build_measure(renewal.explicit_spec([4]))
    path = renewal.sample_stationary(m, 40_000, seed=1)
    assert np.all(path.ret) and np.all(path.node == 1)
    counts = np.bincount(path.label, minlength=4)
    assert sps.chisquare(counts).pvalue > 1e-4


def test_sample_blocks(m12):
    blocks = renewal.sample_blocks(m12, 50, 4, seed=0)
    assert len(blocks) == 4 and all(len(b) == 50 for b in blocks)
    assert renewal.separation_time(blocks[0], blocks[1]) < 50
    with pytest.raises(ValidationError):
        renewal.sample_stationary(m12, 0)


# -- return times ----------------------------------------------------------


def test_return_time_tail_r12(m12):
    assert [renewal.return_time_tail(m12, n) for n in (1, 2, 3)] == \
        pytest.approx([1.0, 0.5, 0.0])
    with pytest.raises(ValidationError):
        renewal.return_time_tail(m12, 0)


def test_empirical_tail_matches(m12):
    path = renewal.sample_stationary(m12, 100_000, seed=5)
    surv, count = renewal.empirical_return_tail(path, 3)
    assert count > 30_000
    assert surv[0] == 1.0 and abs(surv[1] - 0.5) < 0.01 and surv[2] == 0.0


def test_parametric_tail_exponent(m_param):
    # mu(tau >= n) ~ n^{1 - alpha}
    assert renewal.tail_exponent(m_param) == pytest.approx(-3.0, abs=0.3)


# -- cylinders -------------------------------------------------------------


def test_cylinder_masses_r12(m12):
    assert renewal.cylinder_mass(m12, [(1, -1), (2, 1)]) == pytest.approx(1 / 6, abs=1e-15)
    assert renewal.cylinder_mass(m12, [(1, -1)]) == pytest.approx(1 / 3)
    assert renewal.cylinder_mass(m12, [(2, -1)]) == 0.0
    assert renewal.cylinder_mass(m12, [(1, -1), (1, 0)]) == 0.0
    assert renewal.cylinder_mass(m12, [(2, 5)]) == 0.0
    assert renewal.cylinder_mass(m12, []) == 1.0


def _words(m, k):
    """All admissible words of length k with positive mass."""
    out = [[]]
    for _ in range(k):
        nxt = []
        for w in out:
            nodes = [w[-1][0] + 1 if w[-1][1] == -1 else 1] if w else range(1, m.N + 1)
            for node in nodes:
                syms = [-1] + list(range(int(m.spec.r[node - 1]))) if node <= m.N else []
                nxt.extend(w + [(node, s)] for s in syms)
        out = [w for w in nxt if renewal.cylinder_mass(m, w) > 0]
    return out


@pytest.mark.parametrize("r", [[1, 2], [2, 0, 3], [3]])
def test_cylinder_additivity(r):
    m = renewal.build_measure(renewal.explicit_spec(r))
    for k in (1, 2, 3):
        words = _words(m, k)
        assert math.fsum(renewal.cylinder_mass(m, w) for w in words) == \
            pytest.approx(1.0, abs=1e-14)
        for w in words[:10]:
            ext = [v for v in _words(m, k + 1) if v[:k] == w]
            assert math.fsum(renewal.cylinder_mass(m, v) for v in ext) == \
                pytest.approx(renewal.cylinder_mass(m, w), abs=1e-14)


def test_path_log_masses_match_cylinders(m12):
    paths = renewal.sample_blocks(m12, 8, 5, seed=3)
    got = renewal.path_log_masses(m12, paths, 8)
    for g, p in zip(got, paths):
        # path masses ignore labels, so they sum the r_n equal return cylinders
        assert g == pytest.approx(renewal.cylinder_log_mass(m12, p.symbols(8)))


# -- separation metric -----------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 2**31), st.integers(0, 2**31))
def test_separation_metric(s1, s2, s3):
    m = renewal.build_measure(renewal.explicit_spec([1, 2]))
    x, y, z = (renewal.sample_stationary(m, 30, seed=s) for s in (s1, s2, s3))
    d = renewal.separation_distance
    assert d(x, x) == 0.0
    assert d(x, y) == d(y, x)
    # ultrametric
    assert d(x, z) <= max(d(x, y), d(y, z))


def test_separation_base():
    m = renewal.build_measure(renewal.explicit_spec([2]))
    x = renewal.sample_stationary(m, 10, seed=0)
    with pytest.raises(ValidationError):
        renewal.separation_distance(x, x, base=1.0)


# -- spec files ------------------------------------------------------------


def test_spec_round_trip():
    spec = renewal.explicit_spec([1, 0, 2.5])
    back = renewal.parse_spec(renewal.format_spec(spec))
    np.testing.assert_array_equal(back.r, spec.r)
    assert back.lam == spec.lam
    p = renewal.parametric_spec(math.e, 4.0, N=100)
    back = renewal.parse_spec(renewal.format_spec(p))
    assert back.kind == "parametric" and back.N == 100 and back.alpha == 4.0
    np.testing.assert_array_equal(back.q, p.q)


def test_spec_with_comments():
    spec = renewal.parse_spec("# two returns at depth 2\nr 1 1\n\nr 2 2  # here\n")
    assert spec.lam == pytest.approx(2.0)


@pytest.mark.parametrize("text", ["", "r 1", "r 0 1", "r 1 -1", "r 1 1\nr 1 2", "q 1 1",
                                  "r 1 1\nparametric 2 4", "parametric 2",
                                  "parametric 2 4\nparametric 2 4", "r x 1"])
def test_spec_parse_errors(text):
    with pytest.raises(ParseError):
        renewal.parse_spec(text)


def test_measure_json(m12):
    import json
    d = json.loads(renewal.measure_json(m12))
    assert d["S"] == 1.5 and d["spec"]["r"] == [1.0, 2.0]
