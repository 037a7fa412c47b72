"""Renewal matrices, concatenation counts and the l1 dichotomy.

R (N x N) has first column r and ones on the superdiagonal, so (R^n)_{1,1}
counts weighted loops at node 1 and satisfies a_n = sum_k r_k a_{n-k}.
Scaling by e^{-h} turns R into R' with column r'_n = r_n e^{-hn}; the l1 norm
then changes by (sum r' - 1) x_1 per step, which gives the decay / critical /
growth trichotomy.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import TruncationLeak, ValidationError


@dataclass(frozen=True)
class CountSequence:
    """a_0 = 1, a_n = sum_{k=1}^{n} r_k a_{n-k}.

    ``exact`` marks Python-integer arithmetic; otherwise ``rel_error`` bounds
    the accumulated floating-point relative error of each term.
    """

    a: list
    exact: bool
    rel_error: np.ndarray = None

    def __len__(self):
        return len(self.a)

    def scaled(self, lam):
        """a_n lambda^{-n} as floats, computed in log space so big integers never overflow."""
        return _scaled(self.a, math.log(lam))


@dataclass(frozen=True)
class TruncatedRenewalMatrix:
    """First column ``r_column`` (r_1..r_N), superdiagonal 1, zeros elsewhere."""

    r_column: tuple

    @property
    def N(self):
        return len(self.r_column)

    def dense(self, dtype=object):
        N = self.N
        zero = 0 if dtype is object else 0.0
        M = np.full((N, N), zero, dtype=dtype)
        for k, v in enumerate(self.r_column):
            M[k, 0] = v
        for k in range(N - 1):
            M[k, k + 1] = 1 if dtype is object else 1.0
        return M

    def apply(self, x):
        """R x without forming R: (R x)_k = r_k x_1 + x_{k+1}."""
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.r_column, dtype=float) * x[0]
        out[:-1] += x[1:]
        return out


def _scaled(a, log_lam):
    return np.array([math.exp(math.log(x) - k * log_lam) if x > 0 else 0.0
                     for k, x in enumerate(a)])


def _is_integral(r):
    return all(float(v) == int(v) for v in r)


def count_sequence(r, n_max):
    """Concatenation counts a_0..a_{n_max}.

    Integral weights use Python integers (never overflow); real weights use
    floats with a first-order running bound on the relative error of each term.
    """
    r = list(r)
    if n_max < 0:
        raise ValidationError("n_max must be >= 0")
    if any(v < 0 for v in r):
        raise ValidationError("weights must be non-negative")
    if _is_integral(r):
        ri = [int(v) for v in r]
        a = [1]
        for n in range(1, n_max + 1):
            a.append(sum(ri[k - 1] * a[n - k] for k in range(1, min(n, len(ri)) + 1)))
        return CountSequence(a, True)
    rf = np.asarray(r, dtype=float)
    a = np.zeros(n_max + 1)
    err = np.zeros(n_max + 1)
    a[0] = 1.0
    eps = np.finfo(float).eps
    for n in range(1, n_max + 1):
        k = np.arange(1, min(n, rf.size) + 1)
        terms = rf[k - 1] * a[n - k]
        a[n] = math.fsum(terms)
        if a[n] > 0:
            err[n] = float(np.sum(terms * (err[n - k] + 2 * eps))) / a[n] + eps
    return CountSequence(a.tolist(), False, err)


def matrix_counts(r, n_max, N=None):
    """(R^n)_{1,1} for n <= n_max from truncated matrix powers (exact for integers)."""
    r = list(r)
    if N is None:
        N = n_max + len(r) + 8
    col = r + [0] * (N - len(r))
    exact = _is_integral(r)
    M = TruncatedRenewalMatrix(tuple(int(v) for v in col) if exact else tuple(col))
    A = M.dense(object if exact else float)
    out = []
    if exact:
        P = np.array([[int(i == j) for j in range(N)] for i in range(N)], dtype=object)
    else:
        P = np.identity(N)
    for n in range(n_max + 1):
        out.append(P[0, 0] if exact else float(P[0, 0]))
        P = P.dot(A)
    return out


def renewal_limit(r, lam=None, n_max=60):
    """a_n lambda^{-n} against its renewal-theorem limit 1/S.

    Returns a dict with the scaled sequence, 1/S and the relative gap at each n.
    """
    from .renewal import solve_lambda
    r = np.asarray(list(r), dtype=float)
    if lam is None:
        lam = solve_lambda(r)
    n = np.arange(1, r.size + 1)
    S = float(np.sum(n * r * lam ** (-n.astype(float))))
    seq = count_sequence(r.tolist(), n_max)
    scaled = seq.scaled(lam)
    gap = np.abs(scaled * S - 1.0)
    return {"lambda": float(lam), "S": S, "limit": 1.0 / S, "scaled": scaled,
            "rel_gap": gap, "final_gap": float(gap[-1])}


def critical_column(r, h):
    """r'_n = r_n e^{-hn}."""
    r = np.asarray(r, dtype=float)
    n = np.arange(1, r.size + 1)
    return r * np.exp(-h * n)


def dichotomy_probe(r_prime, x0, n_steps, tail_mass=0.0, leak_tol=1e-12):
    """l1 norms of (R')^k x0 for k <= n_steps and the verdict.

    x' = x_1 (r'_1, r'_2, ...) + (x_2, x_3, ...).  The truncation is exact for
    finitely supported r'; ``tail_mass`` = sum_{n > N} r'_n accounts for a
    truncated infinite column, and TruncationLeak is raised once the mass
    that would have left the window exceeds leak_tol relative to the norm.
    """
    r_prime = np.asarray(r_prime, dtype=float)
    x = np.asarray(x0, dtype=float)
    if np.any(x < 0) or not np.any(x > 0):
        raise ValidationError("x0 must be non-negative and non-zero")
    if np.any(r_prime < 0):
        raise ValidationError("r' must be non-negative")
    N = max(r_prime.size, x.size)
    col = np.zeros(N)
    col[:r_prime.size] = r_prime
    v = np.zeros(N)
    v[:x.size] = x
    norms = [float(np.sum(v))]
    book = [0.0]
    leaked = 0.0
    total = float(np.sum(col))
    for _ in range(int(n_steps)):
        x1 = v[0]
        new = col * x1
        new[:-1] += v[1:]
        # |R'x|_1 = |x|_1 + (sum r' - 1) x_1
        predicted = norms[-1] + (total - 1.0) * x1
        v = new
        norms.append(float(np.sum(v)))
        book.append(abs(norms[-1] - predicted) / max(predicted, 1e-300))
        leaked += tail_mass * x1
        if leaked > leak_tol * max(norms[-1], 1e-300):
            raise TruncationLeak(
                f"mass {leaked:.3g} left the truncation window after {len(norms) - 1} steps")
    norms = np.array(norms)
    return {"norms": norms, "sum_r_prime": total, "verdict": _verdict(norms, total),
            "bookkeeping_error": float(max(book))}


def _verdict(norms, total, tol=1e-12):
    if abs(total - 1.0) <= tol:
        return "critical"
    return "decay" if total < 1.0 else "growth"


def window_trend(values, frac=0.5):
    """Slope of log(values) over the last ``frac`` of the window."""
    v = np.asarray(values, dtype=float)
    k0 = int(len(v) * (1 - frac))
    y = np.log(np.maximum(v[k0:], 1e-300))
    x = np.arange(k0, len(v))
    return float(np.polyfit(x, y, 1)[0])


def verify_prop_works(r, h_candidate, n_max=60, slope_tol=None):
    """Three-way verdict from a_n e^{-hn} and from the lambda-equation residual.

    ``observed`` comes from the trend of log(a_n e^{-hn}) over the second half
    of the window; ``predicted`` from the sign of sum r_n e^{-hn} - 1.  They
    should agree: a_n e^{-hn} stays bounded exactly when h solves the
    lambda-equation.
    """
    r = list(r)
    seq = count_sequence(r, n_max)
    scaled = _scaled(seq.a, h_candidate)
    rr = np.asarray(r, dtype=float)
    residual = float(np.sum(rr * np.exp(-h_candidate * np.arange(1, rr.size + 1)))) - 1.0
    slope = window_trend(scaled[1:])
    if slope_tol is None:
        slope_tol = 2.0 / max(n_max, 1)
    tail = scaled[n_max // 2:]
    if abs(slope) <= slope_tol:
        observed = "critical"
    else:
        observed = "decay" if slope < 0 else "growth"
    if abs(residual) <= 1e-12:
        predicted = "critical"
    else:
        predicted = "decay" if residual < 0 else "growth"
    return {"h": h_candidate, "residual": residual, "trend": slope,
            "window_min": float(tail.min()), "window_max": float(tail.max()),
            "observed": observed, "predicted": predicted, "agree": observed == predicted}


def conjugation_defect(r, h, x):
    """max |H e^{-h} R x - R' H x| with H = diag(e^{-h k}), truncated at len(x)."""
    x = np.asarray(x, dtype=float)
    N = x.size
    col = np.zeros(N)
    rr = np.asarray(r, dtype=float)[:N]
    col[:rr.size] = rr
    k = np.arange(1, N + 1)
    H = np.exp(-h * k)
    R = TruncatedRenewalMatrix(tuple(col))
    Rp = TruncatedRenewalMatrix(tuple(col * H))
    lhs = H * math.exp(-h) * R.apply(x)
    rhs = Rp.apply(H * x)
    return float(np.max(np.abs(lhs - rhs)))
