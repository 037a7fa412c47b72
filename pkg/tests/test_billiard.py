import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from billiard_mme import kernels
from billiard_mme.billiard import (Billiard, PhasePoint, derivative, derivative_fd, in_cone,
                                   map_checks, orbit, orbit_arrays, period_two_point, step,
                                   step_inverse)
from billiard_mme.errors import GrazingDerivative, IndexOutOfRange, NumericalTangency
from billiard_mme.table import OPEN_TABLE, REFERENCE_TABLE


@pytest.fixture(scope="module")
def bil():
    return Billiard(REFERENCE_TABLE)


def points(bil, n, seed=0, cos_min=0.05):
    rng = np.random.default_rng(seed)
    d, r, p = bil.sample_invariant(4 * n, rng)
    keep = np.cos(p) > cos_min
    return [PhasePoint(int(a), float(b), float(c)) for a, b, c in
            zip(d[keep][:n], r[keep][:n], p[keep][:n])]


phase = st.tuples(st.integers(0, 1), st.floats(0.0, 1.0), st.floats(-1.45, 1.45))


def test_period_two_orbit(bil):
    x = period_two_point(bil)
    y = step(bil, step(bil, x).next).next
    assert y.scatterer == x.scatterer
    assert abs(y.r - x.r) < 1e-10 and abs(y.phi - x.phi) < 1e-10
    assert step(bil, x).tau == pytest.approx(bil.derived.tau_min, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(phase)
def test_time_reversal(bil, x):
    d, u, phi = x
    x = PhasePoint(d, u * bil.perimeter[d], phi)
    try:
        y = step(bil, x).next
        back = step(bil, y.reflect()).next
    except NumericalTangency:
        return
    ix = bil.normalize(x).reflect()
    assert back.scatterer == ix.scatterer
    dr = (back.r - ix.r + bil.perimeter[d] / 2) % bil.perimeter[d] - bil.perimeter[d] / 2
    assert abs(dr) < 1e-9 and abs(back.phi - ix.phi) < 1e-9


def test_step_inverse_undoes_step(bil):
    for x in points(bil, 200, seed=1):
        y = step(bil, x).next
        z = step_inverse(bil, y).next
        assert z.scatterer == x.scatterer
        assert abs(z.r - x.r) < 1e-9 and abs(z.phi - x.phi) < 1e-9


def round_trip_error(bil, x, n):
    pts, _ = orbit(bil, x, n)
    y = pts[-1]
    for _ in range(n):
        y = step_inverse(bil, y).next
    if y.scatterer != x.scatterer:
        return math.inf
    per = bil.perimeter[x.scatterer]
    return abs((y.r - x.r + per / 2) % per - per / 2) + abs(y.phi - x.phi)


@pytest.mark.parametrize("n,tol", [(10, 10 * 1e-8), (15, 1e-6)])
def test_orbit_round_trip(bil, n, tol):
    # rounding grows like e^{0.8 n} on this table, so round trips are checked
    # at depths where double precision can still resolve them
    errs = [round_trip_error(bil, x, n) for x in points(bil, 40, seed=2, cos_min=0.1)]
    assert max(errs) < tol


def test_orbit_trivial_and_flight_bounds(bil):
    x = points(bil, 1, seed=3)[0]
    pts, taus = orbit(bil, x, 0)
    assert pts == [bil.normalize(x)] and taus.size == 0
    rng = np.random.default_rng(3)
    d, r, p = bil.sample_invariant(2000, rng)
    _, _, _, T, ok = orbit_arrays(bil, d, r, p, 20)
    tau = T[:, ok]
    assert tau.min() >= bil.derived.tau_min - 1e-12
    assert tau.max() <= bil.derived.tau_max + 1e-9


def test_grazing_inputs(bil):
    x = PhasePoint(0, 0.3, math.pi / 2)
    with pytest.raises(NumericalTangency):
        step_inverse(bil, x)
    with pytest.raises(IndexOutOfRange):
        step(bil, PhasePoint(5, 0.0, 0.0))


def test_derivative_matches_finite_differences(bil):
    for x in points(bil, 100, seed=4, cos_min=0.2):
        try:
            D = derivative(bil, x)
            F = derivative_fd(bil, x)
        except (NumericalTangency, GrazingDerivative):
            continue
        assert np.linalg.norm(D - F) / np.linalg.norm(D) < 1e-5


def test_measure_preservation_identity(bil):
    for x in points(bil, 200, seed=5, cos_min=0.2):
        res = step(bil, x)
        if math.cos(res.next.phi) < 0.05:
            continue
        D = derivative(bil, x)
        ratio = abs(np.linalg.det(D)) * math.cos(res.next.phi) / math.cos(x.phi)
        assert ratio == pytest.approx(1.0, abs=1e-6)


def test_grazing_derivative_reports_scale(bil):
    # tilt the head-on period-two ray until it just grazes the opposite disk
    x0 = period_two_point(bil)
    target = step(bil, x0).address
    lo, hi = 0.0, 1.5
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        d, _, _, _, addr, status = bil.step_arrays(np.array([0]), np.array([x0.r]),
                                                   np.array([mid]), tol=0.0)
        if status[0] == kernels.OK and addr[0] == target:
            lo = mid
        else:
            hi = mid
    with pytest.raises(GrazingDerivative) as exc:
        derivative(bil, PhasePoint(0, x0.r, lo))
    assert exc.value.scale > 1e6


def test_cone_preservation_sample(bil):
    lo, hi = bil.derived.cone
    for x in points(bil, 300, seed=7, cos_min=0.05):
        D = derivative(bil, x)
        for slope in (lo, math.sqrt(lo * hi), hi):
            v = D @ np.array([1.0, slope])
            assert in_cone(v, lo, hi, tol=1e-12) or in_cone(-v, lo, hi, tol=1e-12)


def test_in_cone_rejects_vertical_and_outside():
    assert not in_cone(np.array([0.0, 1.0]), 1.0, 2.0)
    assert not in_cone(np.array([1.0, 3.0]), 1.0, 2.0)
    assert in_cone(np.array([[1.0, 1.5]]), 1.0, 2.0)[0]


@pytest.mark.parametrize("cfg", [REFERENCE_TABLE, OPEN_TABLE])
def test_map_checks(cfg):
    b = Billiard(cfg)
    res = map_checks(b, n_points=2000, n_cone=20_000, n_expand=100)
    assert res["reversibility_residual"] <= 1e-9
    assert res["jacobian_defect"] <= 1e-6
    assert res["fd_relative_error"] <= 1e-5
    assert res["period_two_residual"] <= 1e-10
    assert res["cone_fraction"] == 1.0
    assert res["expansion_exponent_min"] >= res["log_lambda"] - 0.01
