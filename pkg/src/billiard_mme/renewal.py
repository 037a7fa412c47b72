"""The renewal shift and its measure of maximal entropy.

Graph: nodes 1, 2, ...; one edge E_n from n to n+1 and r_n return edges from n
to node 1.  With q_n = r_n lambda^{-n} (so that sum q_n = 1) the measure of
maximal entropy is the Markov measure with

    S   = sum_n n q_n
    w_n = S^{-1} sum_{k >= n} q_k          (mass of symbols leaving node n)
    P(E_n | at n) = w_{n+1} / w_n,   P(a given return symbol | at n) = p_n,
    p_n = (w_n - w_{n+1}) / (w_n r_n) = (S lambda^n w_n)^{-1}.

Everything is computed from the normalised weights q_n, which stay in range
for any N; the raw r_n = q_n lambda^n are only formed when they fit a float.
"""
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import defaults, kernels
from .errors import (DegenerateSpec, InfiniteS, NoSolution, ParseError, TruncationTooCoarse,
                     ValidationError)

_LOG_MAX = math.log(np.finfo(float).max) - 1.0


@dataclass(frozen=True, eq=False)
class RenewalSpec:
    """Return weights r_n (n = 1..N) together with the growth rate lambda.

    ``q`` holds r_n lambda^{-n}; ``r`` the raw weights when they fit a float
    (always for explicit specs).  Parametric specs carry ``alpha`` and the
    bound ``tail`` on the mass the untruncated model puts beyond N, for both
    sum q_n and S.
    """

    q: np.ndarray
    lam: float
    r: np.ndarray = None
    alpha: float = None
    tail: float = 0.0
    kind: str = "explicit"

    @property
    def N(self):
        return int(self.q.size)

    @property
    def log_lam(self):
        return math.log(self.lam)

    @property
    def integral(self):
        return self.r is not None and bool(np.all(self.r == np.round(self.r)))

    @property
    def support(self):
        return np.flatnonzero(self.q > 0) + 1

    @property
    def gcd(self):
        return int(np.gcd.reduce(self.support))

    def r_value(self, n):
        if self.r is not None:
            return float(self.r[n - 1])
        return math.exp(math.log(self.q[n - 1]) + n * self.log_lam)

    def residual(self):
        return float(math.fsum(self.q) - 1.0)

    def to_dict(self):
        out = {"kind": self.kind, "lambda": self.lam, "N": self.N, "tail": self.tail}
        if self.kind == "parametric":
            out["alpha"] = self.alpha
        else:
            out["r"] = self.r.tolist()
        return out


def _lambda_sum(r, lam):
    n = np.arange(1, r.size + 1)
    return float(np.sum(r * np.exp(-n * math.log(lam))))


def solve_lambda(r):
    """The unique lambda > 1 with sum_n r_n lambda^{-n} = 1.

    The sum is strictly decreasing in lambda; brentq on a bracket found by
    doubling gives the root to machine precision.
    """
    r = np.asarray(r, dtype=float)
    if r.ndim != 1 or r.size == 0 or np.any(r < 0) or not np.all(np.isfinite(r)):
        raise ValidationError("weights must be a non-empty sequence of non-negative reals")
    if not np.any(r > 0):
        raise DegenerateSpec("all return weights are zero")
    # as lambda -> 1+ the sum tends to sum r_n; a root above 1 needs it to exceed 1
    total = math.fsum(r)
    if total <= 1.0:
        raise NoSolution(f"sum of weights is {total!r} <= 1: no root lambda > 1")
    hi = 2.0
    while _lambda_sum(r, hi) > 1.0:
        hi *= 2.0
    lam = optimize.brentq(lambda x: _lambda_sum(r, x) - 1.0, 1.0, hi, xtol=1e-15,
                          rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(lam)


def explicit_spec(r, lam=None):
    """Spec from explicit weights; lambda is solved for unless given."""
    r = np.asarray(r, dtype=float)
    if lam is None:
        lam = solve_lambda(r)
    n = np.arange(1, r.size + 1)
    q = r * np.exp(-n * math.log(lam))
    return RenewalSpec(q=q, lam=float(lam), r=r.copy(), kind="explicit")


def default_truncation(alpha, tol=defaults.TAIL_TOL):
    """Smallest N whose dropped tail of S = sum n q_n is below tol (c <= 1).

    sum_{n>N} n^{1-alpha} <= N^{2-alpha} / (alpha - 2), which also bounds the
    tail of sum q_n.
    """
    if alpha <= 2:
        raise InfiniteS(f"alpha = {alpha} <= 2: S = sum n q_n diverges")
    return int(math.ceil((tol * (alpha - 2)) ** (-1.0 / (alpha - 2))))


def parametric_spec(lam, alpha, N=None):
    """r_n = c lambda^n n^{-alpha} for n <= N, c calibrated so sum r_n lambda^{-n} = 1.

    The last weight absorbs the rounding residual, so lambda is exactly the
    design value.  ``tail`` bounds what the untruncated model puts past N.
    """
    if lam <= 1:
        raise ValidationError("lambda must exceed 1")
    if alpha <= 1:
        raise ValidationError("alpha must exceed 1 for a summable tail")
    if N is None:
        N = default_truncation(alpha)
    N = int(N)
    if N < 1:
        raise ValidationError("truncation N must be >= 1")
    n = np.arange(1, N + 1, dtype=float)
    base = n ** (-float(alpha))
    # small terms first for an accurate sum
    c = 1.0 / math.fsum(base[::-1])
    q = c * base
    q[-1] += 1.0 - math.fsum(q)
    tail = c * N ** (2.0 - alpha) / (alpha - 2.0) if alpha > 2 else math.inf
    r = None
    if N * math.log(lam) < _LOG_MAX - 50:
        r = q * np.exp(n * math.log(lam))
    return RenewalSpec(q=q, lam=float(lam), r=r, alpha=float(alpha), tail=float(tail),
                       kind="parametric")


@dataclass(frozen=True, eq=False)
class MarkovMeasure:
    """Explicit max-entropy Markov measure of a renewal spec (arrays indexed n - 1)."""

    spec: RenewalSpec
    S: float
    w: np.ndarray
    log_w: np.ndarray
    stay: np.ndarray
    ret: np.ndarray
    log_p: np.ndarray
    p_check: float
    extra: dict = field(default_factory=dict)

    @property
    def lam(self):
        return self.spec.lam

    @property
    def N(self):
        return self.spec.N

    @property
    def p(self):
        """p_n (probability of one particular return symbol at node n)."""
        return np.exp(self.log_p)

    @property
    def mass_E(self):
        """mu[E_n] = w_{n+1}."""
        return np.append(self.w[1:], 0.0)

    @property
    def mass_R(self):
        """mu[one return symbol of R_n] = S^{-1} lambda^{-n}."""
        n = np.arange(1, self.N + 1)
        return np.exp(-math.log(self.S) - n * self.spec.log_lam)

    def one_cylinder(self):
        """Masses of the 1-cylinders, grouped: E_n and all of R_n together."""
        return {"E": self.mass_E, "R_total": self.spec.q / self.S}

    def to_dict(self, max_terms=64):
        k = min(self.N, max_terms)
        return {
            "lambda": self.lam,
            "S": self.S,
            "entropy": self.spec.log_lam,
            "w": self.w[:k].tolist(),
            "p": self.p[:k].tolist(),
            "mass_E": self.mass_E[:k].tolist(),
            "mass_R": self.mass_R[:k].tolist(),
            "truncated_terms": max(0, self.N - k),
            "p_formula_gap": self.p_check,
            "spec": self.spec.to_dict() if self.spec.kind != "parametric" or self.N <= 64
            else {"kind": "parametric", "lambda": self.lam, "alpha": self.spec.alpha,
                  "N": self.N, "tail": self.spec.tail},
        }


def build_measure(spec, check_tol=1e-12):
    """Weights, transition probabilities and 1-cylinder masses of the measure.

    Both expressions for p_n are evaluated; their gap, measured on the
    return probability r_n p_n of each reachable node, must be <= check_tol.
    """
    if spec.kind == "parametric" and not math.isfinite(spec.tail):
        raise InfiniteS("S = sum n lambda^{-n} r_n diverges for alpha <= 2")
    q = spec.q
    if not np.any(q > 0):
        raise DegenerateSpec("all return weights are zero")
    res = spec.residual()
    if abs(res) > 1e-12:
        raise ValidationError(f"sum r_n lambda^(-n) - 1 = {res:.3g}, not normalised")
    n = np.arange(1, q.size + 1, dtype=float)
    S = float(np.sum(n[::-1] * q[::-1]))
    if not math.isfinite(S):
        raise InfiniteS("S is not finite")
    G = np.cumsum(q[::-1])[::-1]
    G = G / G[0]
    w = G / S
    live = w > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        log_w = np.where(live, np.log(w), -np.inf)
        w_next = np.append(w[1:], 0.0)
        stay = np.where(live, w_next / w, 0.0)
        ret = np.where(live, q / (S * w), 0.0)
        # p_n = (S lambda^n w_n)^{-1}, in logs so lambda^n never overflows
        log_p = np.where(live, -math.log(S) - n * spec.log_lam - log_w, -np.inf)
        ret_from_diff = np.where(live, (w - w_next) / w, 0.0)
    gap = float(np.max(np.abs(ret - ret_from_diff))) if q.size else 0.0
    if gap > check_tol:
        raise ValidationError(f"the two p_n formulas disagree by {gap:.3g}")
    m = MarkovMeasure(spec, S, w, log_w, stay, ret, log_p, gap)
    return m


def row_sums(m):
    return m.stay + m.ret


def stationarity_defect(m):
    """Max |one-step push-forward of the node occupancy - occupancy|."""
    w = m.w
    pushed = np.empty_like(w)
    pushed[0] = float(np.sum(w * m.ret))
    pushed[1:] = w[:-1] * m.stay[:-1]
    return float(np.max(np.abs(pushed - w)))


def entropy_closed_form(m, tail_tol=1e-10):
    """(Markov entropy sum, log lambda).

    The sum is -sum_A mu[A] sum_B Pi(A,B) log Pi(A,B) written by node:
    sum_n w_n [ -s_n log s_n - r_n p_n log p_n ], s_n = w_{n+1}/w_n.
    Raises TruncationTooCoarse when the spec's truncation tail exceeds tail_tol.
    """
    if m.spec.tail > tail_tol:
        raise TruncationTooCoarse(
            f"truncation tail {m.spec.tail:.3g} exceeds {tail_tol:.3g}; raise N")
    live = m.w > 0
    s = m.stay[live]
    with np.errstate(divide="ignore", invalid="ignore"):
        h_stay = np.where(s > 0, -s * np.log(np.where(s > 0, s, 1.0)), 0.0)
    h_ret = -m.ret[live] * m.log_p[live]
    terms = m.w[live] * (h_stay + h_ret)
    return float(math.fsum(terms)), m.spec.log_lam


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SamplePath:
    """One-sided symbol path.  Symbol i leaves node ``node[i]``; it is a return
    edge when ``ret[i]`` (then ``label[i]`` is its index in R_n, or -1 when
    r_n is not integral) and the edge E_n otherwise (label -1)."""

    node: np.ndarray
    ret: np.ndarray
    label: np.ndarray
    seed: object = None

    def __len__(self):
        return int(self.node.size)

    def symbols(self, k=None):
        k = len(self) if k is None else k
        return [(int(n), int(lb) if r else -1) for n, r, lb in
                zip(self.node[:k], self.ret[:k], self.label[:k])]

    def first_return_times(self):
        """Lengths of the complete excursions from node 1 back to node 1."""
        starts = np.flatnonzero(self.node == 1)
        return np.diff(starts)


def _survival(m):
    """G_n = w_n / w_1 = P(tau >= n), cached on the measure."""
    if "survival" not in m.extra:
        m.extra["survival"] = m.w / m.w[0]
    return m.extra["survival"]


def _occupancy_cdf(m):
    # cached: sampling many short replicates would otherwise redo an O(N) sum each time
    if "occupancy_cdf" not in m.extra:
        cdf = np.cumsum(m.w)
        m.extra["occupancy_cdf"] = cdf / cdf[-1]
    return m.extra["occupancy_cdf"]


def draw_excursions(m, count, rng):
    """``count`` i.i.d. first-return times, P(tau = n) = (w_n - w_{n+1}) / w_1."""
    G = _survival(m)
    u = 1.0 - rng.random(count)
    # tau = #{n : G_n >= u}; G is non-increasing so search the reversed array
    return G.size - np.searchsorted(G[::-1], u, side="left")


def sample_stationary(m, length, seed=None, labels=True):
    """Stationary path of ``length`` symbols.

    The first symbol's node is drawn from the occupancy w_n, then the rest of
    its excursion from the tail law conditioned on reaching that node, then
    i.i.d. excursions.  Return labels are uniform in [0, r_n) when r_n is
    integral.
    """
    rng = np.random.default_rng(seed)
    length = int(length)
    if length < 1:
        raise ValidationError("path length must be >= 1")
    cdf = _occupancy_cdf(m)
    first = int(min(np.searchsorted(cdf, rng.random(), side="right"), m.N - 1)) + 1
    G = _survival(m)
    u = (1.0 - rng.random()) * G[first - 1]
    partial = int(G.size - np.searchsorted(G[::-1], u, side="left"))
    partial = max(partial, first)
    lengths = [np.array([partial], np.int64)]
    covered = partial - first + 1
    mean = m.S
    while covered < length:
        batch = max(16, int(1.1 * (length - covered) / mean) + 16)
        ex = draw_excursions(m, batch, rng)
        lengths.append(ex)
        covered += int(ex.sum())
    lengths = np.concatenate(lengths)
    node, ret = kernels.expand_excursions(first, lengths, length)
    label = np.full(length, -1, np.int64)
    if labels and m.spec.integral:
        idx = np.flatnonzero(ret)
        r_at = m.spec.r[node[idx] - 1].astype(np.int64)
        label[idx] = (rng.random(idx.size) * r_at).astype(np.int64)
    return SamplePath(node, ret, label, seed)


def sample_blocks(m, n_block, replicates, seed=None):
    """Independent stationary paths (one per replicate), stacked as rows."""
    ss = np.random.SeedSequence(seed)
    paths = [sample_stationary(m, n_block, np.random.default_rng(child))
             for child in ss.spawn(int(replicates))]
    return paths


def return_time_tail(m, n):
    """mu(tau >= n) = w_n / w_1 for the first return time to node 1."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    if n > m.N:
        return 0.0
    return float(m.w[n - 1] / m.w[0])


def empirical_return_tail(path, n_max):
    taus = path.first_return_times()
    counts = np.bincount(taus, minlength=n_max + 2)[1:n_max + 1]
    surv = 1.0 - np.concatenate(([0.0], np.cumsum(counts)[:-1])) / max(taus.size, 1)
    return surv, taus.size


def tail_exponent(m, n_lo=16, n_hi=None):
    """Least-squares slope of log(w_n / w_1) against log n on [n_lo, n_hi]."""
    if n_hi is None:
        n_hi = min(m.N // 4, 4096)
    n = np.unique(np.geomspace(n_lo, n_hi, 40).astype(int))
    y = np.log(m.w[n - 1] / m.w[0])
    return float(np.polyfit(np.log(n), y, 1)[0])


# ---------------------------------------------------------------------------
# cylinders
# ---------------------------------------------------------------------------


def _symbol_logprob(m, node, label_or_E):
    n = int(node)
    if n < 1 or n > m.N or m.w[n - 1] <= 0:
        return -math.inf
    if label_or_E == -1:
        s = m.stay[n - 1]
        return math.log(s) if s > 0 else -math.inf
    if m.spec.integral and not 0 <= label_or_E < m.spec.r[n - 1]:
        return -math.inf
    return float(m.log_p[n - 1])


def cylinder_log_mass(m, prefix):
    """log mu([A_1 ... A_k]) for symbols (node, label) with label -1 for E_node.

    mu[A_1] = w_{node_1} Pi(node_1 -> A_1), then one transition factor per
    symbol; consecutive symbols must chain (E_n ends at n+1, returns at 1).
    """
    if len(prefix) == 0:
        return 0.0
    node0 = int(prefix[0][0])
    if node0 < 1 or node0 > m.N:
        return -math.inf
    total = float(m.log_w[node0 - 1])
    expected = node0
    for node, lab in prefix:
        if int(node) != expected:
            return -math.inf
        total += _symbol_logprob(m, node, lab)
        expected = 1 if lab != -1 else int(node) + 1
    return total


def cylinder_mass(m, prefix):
    return math.exp(cylinder_log_mass(m, prefix))


def path_log_masses(m, paths, n):
    """log mu of the length-n prefix of each path (vectorised over paths)."""
    out = np.empty(len(paths))
    for i, pth in enumerate(paths):
        node = pth.node[:n]
        ret = pth.ret[:n]
        with np.errstate(divide="ignore"):
            lp = np.where(ret, m.log_p[node - 1], np.log(m.stay[node - 1]))
        out[i] = m.log_w[node[0] - 1] + float(np.sum(lp))
    return out


# ---------------------------------------------------------------------------
# separation metric
# ---------------------------------------------------------------------------


def separation_time(x, y):
    """First index where the symbol sequences differ (len of the common
    prefix); the shorter length when one is a prefix of the other and the
    lengths differ, and math.inf for identical sequences."""
    kx, ky = len(x), len(y)
    k = min(kx, ky)
    a = np.stack((x.node[:k], x.ret[:k].astype(np.int64), x.label[:k]))
    b = np.stack((y.node[:k], y.ret[:k].astype(np.int64), y.label[:k]))
    diff = np.flatnonzero(np.any(a != b, axis=0))
    if diff.size:
        return int(diff[0])
    return math.inf if kx == ky else k


def separation_distance(x, y, base=defaults.SEP_BASE):
    """d(x, y) = base^{-s(x, y)}; 0 for identical paths."""
    if base <= 1:
        raise ValidationError("separation base must exceed 1")
    s = separation_time(x, y)
    return 0.0 if s == math.inf else float(base) ** (-s)


# ---------------------------------------------------------------------------
# spec files
# ---------------------------------------------------------------------------

SPEC_GRAMMAR = """\
renewal spec file (one directive per line, '#' starts a comment):
  r <n> <value>                    explicit weight r_n (n >= 1, value >= 0)
  parametric <lambda> <alpha> [N]  r_n = c lambda^n n^-alpha, n <= N
explicit and parametric lines cannot be mixed; unlisted r_n are 0."""

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


def parse_spec(text):
    explicit = {}
    parametric = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0].lower()
        if key == "r":
            if len(parts) != 3 or not re.fullmatch(r"\d+", parts[1]) or \
                    not re.fullmatch(_NUM, parts[2]):
                raise ParseError(f"expected 'r <n> <value>': {raw!r}\n{SPEC_GRAMMAR}", lineno)
            n, val = int(parts[1]), float(parts[2])
            if n < 1 or val < 0:
                raise ParseError(f"need n >= 1 and value >= 0: {raw!r}", lineno)
            if n in explicit:
                raise ParseError(f"r_{n} given twice", lineno)
            explicit[n] = val
        elif key == "parametric":
            if len(parts) not in (3, 4) or not all(re.fullmatch(_NUM, p) for p in parts[1:]):
                raise ParseError(
                    f"expected 'parametric <lambda> <alpha> [N]': {raw!r}\n{SPEC_GRAMMAR}",
                    lineno)
            if parametric is not None:
                raise ParseError("more than one parametric line", lineno)
            parametric = (float(parts[1]), float(parts[2]),
                          int(float(parts[3])) if len(parts) == 4 else None)
        else:
            raise ParseError(f"unknown directive {parts[0]!r}\n{SPEC_GRAMMAR}", lineno)
    if explicit and parametric:
        raise ParseError("explicit and parametric weights cannot be mixed")
    if parametric:
        return parametric_spec(*parametric)
    if not explicit:
        raise ParseError(f"no weights given\n{SPEC_GRAMMAR}")
    r = np.zeros(max(explicit))
    for n, v in explicit.items():
        r[n - 1] = v
    return explicit_spec(r)


def load_spec(path):
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())


def format_spec(spec):
    if spec.kind == "parametric":
        return f"parametric {float(spec.lam)!r} {float(spec.alpha)!r} {spec.N}\n"
    return "".join(f"r {n} {float(v)!r}\n" for n, v in enumerate(spec.r, 1) if v > 0)


def measure_json(m, **kw):
    return json.dumps(m.to_dict(**kw), indent=2)
