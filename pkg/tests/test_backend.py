import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from billiard_mme import _accel, kernels

ROOT = Path(__file__).resolve().parents[1]

PROBE = """
import json, math
import numpy as np
from billiard_mme import _accel, renewal
from billiard_mme.billiard import Billiard, orbit_arrays
from billiard_mme.table import REFERENCE_TABLE
b = Billiard(REFERENCE_TABLE)
d, r, p = b.sample_invariant(500, np.random.default_rng(0))
D, R, P, T, ok = orbit_arrays(b, d, r, p, 5)
m = renewal.build_measure(renewal.parametric_spec(math.e, 4.0, N=500))
path = renewal.sample_stationary(m, 5000, seed=1)
print(json.dumps({"backend": _accel.backend_name(), "D": D.tolist(), "ok": ok.tolist(),
                  "R": R[:, ok].tolist(), "node": path.node.tolist(),
                  "ret": path.ret.tolist()}))
"""


def probe(no_numba):
    env = dict(os.environ)
    env.pop(_accel.NO_NUMBA_ENV, None)
    if no_numba:
        env[_accel.NO_NUMBA_ENV] = "1"
    out = subprocess.run([sys.executable, "-c", PROBE], capture_output=True, text=True,
                         env=env, check=True)
    return json.loads(out.stdout)


def test_backends_agree():
    a, b = probe(False), probe(True)
    assert a["backend"] == "numba" and b["backend"] == "numpy"
    assert a["D"] == b["D"] and a["ok"] == b["ok"]
    np.testing.assert_allclose(a["R"], b["R"], atol=1e-9)
    # sampling consumes random numbers identically on both paths
    assert a["node"] == b["node"] and a["ret"] == b["ret"]


def test_kernel_pairs_agree_in_process():
    rng = np.random.default_rng(0)
    lengths = rng.integers(1, 30, 500).astype(np.int64)
    for first in (1, 4):
        n1, r1 = kernels._expand_nb(first, lengths, 3000)
        n2, r2 = kernels._expand_np(first, lengths, 3000)
        assert np.array_equal(n1, n2) and np.array_equal(r1, r2)
    u = rng.standard_normal(5000)
    lags = np.arange(10, dtype=np.int64)
    np.testing.assert_allclose(kernels._lag_batches_nb(u, u, lags, 4990, 10),
                               kernels._lag_batches_np(u, u, lags, 4990, 10), rtol=1e-12)


def test_benchmark_runs():
    sys.path.insert(0, str(ROOT / "benchmarks"))
    try:
        import bench_kernels
    finally:
        sys.path.pop(0)
    rows = bench_kernels.main(["--n", "2000", "--repeat", "1"])
    assert [r[0] for r in rows] == ["collide", "follow", "expand", "lag_batches"]
    for name, t_nb, t_np, exact, diff in rows:
        assert exact, name
        assert diff < 1e-6


@pytest.mark.parametrize("value,expected", [("1", True), ("yes", True), ("0", False),
                                            ("", False)])
def test_flag_parsing(monkeypatch, value, expected):
    monkeypatch.setenv("X_FLAG", value)
    assert _accel._flag("X_FLAG") is expected
