"""Monte Carlo checks on the renewal-shift measure and the billiard/symbolic tier report.

Observables are cylinder functions (depend on finitely many future symbols), so
their exact means and variances follow from cylinder masses and every
estimator can be held against an exact oracle.
"""
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sps

from . import defaults, kernels
from .entropy import predict_rates
from .errors import InsufficientSamples, NonCentered, ValidationError, ZeroVariance
from .renewal import (cylinder_mass, path_log_masses, sample_blocks, sample_stationary)

ANY_RETURN = -2  # symbol label matching every return edge of a node
CENTER_TOL = 1e-12


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObservableSpec:
    """A cylinder function on one-sided paths.

    kind "node": value by the node of the first symbol, ``table`` {node: value}.
    kind "symbol": value by the first symbol, ``table`` {(node, label): value},
    label -1 for the edge E_node and ANY_RETURN for every return edge.
    kind "cylinder": value by the first ``depth`` symbols, ``table``
    {((node, label), ...): value}.
    Symbols absent from the table take ``default``.
    """

    kind: str
    table: dict
    depth: int = 1
    default: float = 0.0
    centered: bool = False

    def __post_init__(self):
        if self.kind not in ("node", "symbol", "cylinder"):
            raise ValidationError(f"unknown observable kind {self.kind!r}")
        if self.kind == "cylinder":
            if any(len(k) != self.depth for k in self.table):
                raise ValidationError("cylinder keys must have length depth")
        elif self.depth != 1:
            raise ValidationError(f"{self.kind} observables have depth 1")

    def evaluate(self, path):
        """Values at positions 0 .. len(path) - depth."""
        m = len(path) - self.depth + 1
        if m < 1:
            raise ValidationError("path shorter than the observable depth")
        out = np.full(m, float(self.default))
        node, ret, label = path.node, path.ret, path.label
        if self.kind == "node":
            for n, val in self.table.items():
                out[node[:m] == n] = val
            return out
        keys = self.table.items() if self.kind == "cylinder" else (
            ((k,), v) for k, v in self.table.items())
        for key, val in keys:
            mask = np.ones(m, bool)
            for j, (n, lab) in enumerate(key):
                nd, rt, lb = node[j:j + m], ret[j:j + m], label[j:j + m]
                mask &= nd == n
                if lab == -1:
                    mask &= ~rt
                elif lab == ANY_RETURN:
                    mask &= rt
                else:
                    mask &= rt & (lb == lab)
            out[mask] = val
        return out

    def masses(self, measure):
        """(values, masses) over the table keys plus the remainder carrying ``default``."""
        vals, mass = [], []
        for key, val in self.table.items():
            vals.append(float(val))
            mass.append(_key_mass(measure, self.kind, key))
        rest = max(0.0, 1.0 - math.fsum(mass))
        vals.append(float(self.default))
        mass.append(rest)
        return np.array(vals), np.array(mass)

    def mean(self, measure):
        v, w = self.masses(measure)
        return math.fsum(v * w)

    def variance(self, measure):
        v, w = self.masses(measure)
        mu = math.fsum(v * w)
        return max(0.0, math.fsum((v - mu) ** 2 * w))

    def centered_for(self, measure):
        """The same observable minus its exact mean."""
        mu = self.mean(measure)
        table = {k: v - mu for k, v in self.table.items()}
        return ObservableSpec(self.kind, table, self.depth, self.default - mu, True)


def _key_mass(m, kind, key):
    if kind == "node":
        n = int(key)
        return float(m.w[n - 1]) if 1 <= n <= m.N else 0.0
    if kind == "symbol":
        n, lab = key
        if not 1 <= n <= m.N:
            return 0.0
        if lab == -1:
            return float(m.mass_E[n - 1])
        if lab == ANY_RETURN:
            return float(m.spec.q[n - 1] / m.S)
        return float(m.mass_R[n - 1])
    return cylinder_mass(m, key)


def node_indicator(node=1):
    return ObservableSpec("node", {node: 1.0})


def return_labels(values, node=1):
    """Symbol observable taking ``values[l]`` on return edge l of ``node``."""
    return ObservableSpec("symbol", {(node, l): float(v) for l, v in enumerate(values)})


def base_balanced(measure):
    """Node observable 1/w_1 on node 1 and -1/w_2 on node 2; exact mean zero.

    Each excursion from the base contributes at most 1/w_1 + 1/w_2 whatever
    its length, so block sums avoid the heavy excursion tails that skew the
    node-1 indicator at moderate block lengths.
    """
    if measure.N < 2 or measure.w[1] <= 0:
        raise ValidationError("base_balanced needs a reachable node 2")
    return ObservableSpec("node", {1: 1.0 / float(measure.w[0]), 2: -1.0 / float(measure.w[1])})


def _check_centered(measure, *obs):
    for o in obs:
        mu = o.mean(measure)
        if abs(mu) > CENTER_TOL:
            raise NonCentered(f"observable has mean {mu:.3g}; use centered_for()")


# ---------------------------------------------------------------------------
# correlations
# ---------------------------------------------------------------------------


@dataclass
class CorrelationSeries:
    lags: np.ndarray
    C: np.ndarray
    se: np.ndarray
    samples: int
    batches: int
    insufficient: bool = False

    def to_dict(self):
        return {"lags": self.lags.tolist(), "C": self.C.tolist(), "se": self.se.tolist(),
                "samples": self.samples, "batches": self.batches,
                "insufficient": self.insufficient}

    def rows(self):
        return [(int(n), float(c), float(s)) for n, c, s in zip(self.lags, self.C, self.se)]


def _series_values(measure, u, v, length, seed):
    depth = max(u.depth, v.depth)
    path = sample_stationary(measure, length + depth - 1, seed)
    return u.evaluate(path)[:length], v.evaluate(path)[:length]


def _batch_stats(batch):
    """Mean and batch-means standard error per row, with compensated sums."""
    B = batch.shape[1]
    mean = np.array([math.fsum(row) / B for row in batch])
    se = np.sqrt(np.array([math.fsum((row - mu) ** 2) for row, mu in zip(batch, mean)])
                 / (B * (B - 1)))
    return mean, se


def estimate_correlations(measure, u, v, lags, total_steps=defaults.SAMPLING_STEPS, seed=0,
                          batches=defaults.BATCHES, strict=False):
    """C(n) = E[u . v o sigma^n] from one stationary path, batch-means errors.

    Both observables must be centred.  ``insufficient`` is set (or
    InsufficientSamples raised when ``strict``) if SE > |C| at every lag.
    """
    _check_centered(measure, u, v)
    lags = np.asarray(sorted(set(int(x) for x in lags)), np.int64)
    if lags.size == 0 or lags[0] < 0:
        raise ValidationError("lags must be non-negative")
    length = int(total_steps) + int(lags[-1])
    uu, vv = _series_values(measure, u, v, length, seed)
    batch = kernels.lag_batch_means(uu, vv, lags, batches)
    C, se = _batch_stats(batch)
    bad = bool(np.all(se > np.abs(C)))
    if bad and strict:
        raise InsufficientSamples("standard error exceeds |C(n)| at every requested lag")
    return CorrelationSeries(lags, C, se, int(total_steps), int(batches), bad)


def fit_decay_slope(series, n_lo=8, n_hi=64, keep_ratio=0.5):
    """SE-weighted log-log slope of |C(n)| over [n_lo, n_hi].

    Lags whose SE exceeds keep_ratio |C(n)| are discarded.  Returns the slope
    with its standard error and a 95% band.
    """
    n, C, se = series.lags, series.C, series.se
    sel = (n >= n_lo) & (n <= n_hi) & (n > 0) & (se <= keep_ratio * np.abs(C))
    if sel.sum() < 3:
        raise InsufficientSamples(f"only {int(sel.sum())} lags in [{n_lo}, {n_hi}] are resolved")
    x = np.log(n[sel].astype(float))
    y = np.log(np.abs(C[sel]))
    sig = se[sel] / np.abs(C[sel])
    coef, cov = np.polyfit(x, y, 1, w=1.0 / sig, cov="unscaled")
    err = float(math.sqrt(cov[0, 0]))
    slope = float(coef[0])
    return {"slope": slope, "se": err, "band": (slope - 1.96 * err, slope + 1.96 * err),
            "lags_used": n[sel].tolist(), "window": (n_lo, n_hi)}


def return_sequence(measure, n_max):
    """u_n = P(node at time n is 1 | node at time 0 is 1), n = 0..n_max.

    Renewal equation u_n = sum_k f_k u_{n-k} with f_k = (w_k - w_{k+1}) / w_1.
    """
    w = measure.w
    k = min(n_max + 1, w.size)
    f = np.zeros(n_max + 1)
    w_next = np.append(w[1:k + 1], 0.0) if k + 1 > w.size else w[1:k + 1]
    f[1:k + 1] = ((w[:k] - w_next[:k]) / w[0])[:n_max]
    u = np.zeros(n_max + 1)
    u[0] = 1.0
    for n in range(1, n_max + 1):
        u[n] = math.fsum(f[1:n + 1] * u[n - 1::-1])
    return u


def indicator_correlations(measure, n_max):
    """Exact C(n) of the centred node-1 indicator: w_1 (u_n - w_1)."""
    w1 = float(measure.w[0])
    return w1 * (return_sequence(measure, n_max) - w1)


# ---------------------------------------------------------------------------
# Green-Kubo variance and CLT
# ---------------------------------------------------------------------------


@dataclass
class GreenKubo:
    sigma2: float
    se: float
    cutoff: int
    tail_bound: float
    correlations: CorrelationSeries

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if k != "correlations"}
        d["correlations"] = self.correlations.to_dict()
        return d


def green_kubo_variance(measure, v, lag_cutoff=defaults.GK_CUTOFF,
                        total_steps=defaults.SAMPLING_STEPS, seed=0, batches=defaults.BATCHES):
    """sigma^2 = C(0) + 2 sum_{k=1}^{cutoff} C(k), batch means over one path.

    For a parametric spec with alpha > 3 the neglected tail is bounded by the
    C(k) ~ k^{-(alpha-2)} envelope through the last lag:
    2 |C(cutoff)| cutoff / (alpha - 3).
    """
    _check_centered(measure, v)
    lags = np.arange(lag_cutoff + 1)
    length = int(total_steps) + lag_cutoff
    uu, vv = _series_values(measure, v, v, length, seed)
    batch = kernels.lag_batch_means(uu, vv, lags, batches)
    C, se = _batch_stats(batch)
    weights = np.full(lags.size, 2.0)
    weights[0] = 1.0
    per_batch = weights @ batch
    s2, s2_se = _batch_stats(per_batch[None, :])
    alpha = measure.spec.alpha
    tail = math.nan
    if alpha is not None and alpha > 3:
        tail = 2.0 * abs(C[-1]) * lag_cutoff / (alpha - 3.0)
    elif measure.spec.kind != "parametric":
        tail = 0.0 if measure.N <= lag_cutoff else 2.0 * abs(C[-1])
    series = CorrelationSeries(lags, C, se, int(total_steps), int(batches))
    return GreenKubo(float(s2[0]), float(s2_se[0]), int(lag_cutoff), float(tail), series)


def exact_green_kubo_indicator(measure, cutoff):
    """Green-Kubo sum for the centred node-1 indicator from the exact correlations."""
    C = indicator_correlations(measure, cutoff)
    return float(C[0] + 2.0 * math.fsum(C[1:]))


@dataclass
class CltReport:
    n_block: int
    sigma2_gk: float
    ks_distance: float
    replicates: int
    ks_pvalue: float
    mean: float
    variance: float

    def to_dict(self):
        return asdict(self)


def block_sums(measure, v, n_block, replicates, seed=0):
    """S_{n_block} of v over independent stationary starts."""
    paths = sample_blocks(measure, n_block + v.depth - 1, replicates, seed)
    return np.array([math.fsum(v.evaluate(p)[:n_block]) for p in paths])


def clt_check(measure, v, n_block=1000, replicates=10_000, seed=0, sigma2=None,
              gk_steps=defaults.SAMPLING_STEPS, gk_cutoff=defaults.GK_CUTOFF):
    """KS distance of S_n / (sigma sqrt n) to N(0, 1).

    sigma^2 is the Green-Kubo variance (estimated from a separate path unless
    given).  Raises ZeroVariance for a degenerate observable.
    """
    _check_centered(measure, v)
    if v.variance(measure) == 0.0:
        raise ZeroVariance("observable is constant; the normalised sums are undefined")
    if sigma2 is None:
        ss = np.random.SeedSequence(seed)
        gk_seed = ss.spawn(1)[0]
        sigma2 = green_kubo_variance(measure, v, gk_cutoff, gk_steps,
                                     np.random.default_rng(gk_seed)).sigma2
    if sigma2 <= 0.0:
        raise ZeroVariance(f"Green-Kubo variance {sigma2:.3g} is not positive")
    sums = block_sums(measure, v, n_block, replicates, seed)
    z = sums / math.sqrt(sigma2 * n_block)
    ks = sps.kstest(z, "norm")
    return CltReport(int(n_block), float(sigma2), float(ks.statistic), int(replicates),
                     float(ks.pvalue), float(z.mean()), float(z.var(ddof=1)))


# ---------------------------------------------------------------------------
# Shannon-McMillan-Breiman
# ---------------------------------------------------------------------------


def smb_entropy(measure, n, samples=10_000, seed=0):
    """Mean of -(1/n) log mu[x_0 .. x_{n-1}] over independent stationary paths."""
    paths = sample_blocks(measure, n, samples, seed)
    vals = -path_log_masses(measure, paths, n) / n
    return {"n": int(n), "estimate": float(vals.mean()),
            "se": float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0,
            "samples": int(samples), "target": measure.spec.log_lam}


def smb_convergence(measure, n, samples=10_000, seed=0):
    """SMB estimates at n and 2n and their Richardson combination 2 est(2n) - est(n).

    For a Markov measure -(1/n) log mu[x_0..x_{n-1}] has mean h + (H_1 - h)/n
    exactly, with H_1 the entropy of the initial 1-cylinder, so est(n) and
    est(2n) differ by a deterministic (H_1 - h)/(2n) that eventually exceeds
    any SE.  The Richardson combination removes that term.
    """
    ss = np.random.SeedSequence(seed)
    s1, s2 = (int(x.generate_state(1)[0]) for x in ss.spawn(2))
    a = smb_entropy(measure, n, samples, s1)
    b = smb_entropy(measure, 2 * n, samples, s2)
    se_diff = math.hypot(a["se"], b["se"])
    rich = 2.0 * b["estimate"] - a["estimate"]
    rich_se = math.hypot(2.0 * b["se"], a["se"])
    target = measure.spec.log_lam
    return {"n": int(n), "at_n": a, "at_2n": b, "difference": b["estimate"] - a["estimate"],
            "difference_se": se_diff, "richardson": rich, "richardson_se": rich_se,
            "richardson_error": rich - target, "target": target,
            "raw_consistent": abs(b["estimate"] - a["estimate"]) <= 3.0 * se_diff,
            "richardson_consistent": abs(rich - target) <= 3.0 * rich_se}


# ---------------------------------------------------------------------------
# tier report
# ---------------------------------------------------------------------------


@dataclass
class TierReport:
    billiard: dict
    prediction: dict
    symbolic: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    mismatches: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def tier_report(h_hat, s0_hat, complexity=None, symbolic=None, h_prime=None, eps=0.0):
    """Merge the billiard-side estimates with symbolic-side decay measurements.

    ``complexity`` is a linear_envelope() result; ``symbolic`` maps alpha to a
    fit_decay_slope() result measured on the parametric spec with that alpha.
    Disagreements are listed, never reconciled.
    """
    pred = predict_rates(h_hat, s0_hat, h_prime=h_prime, eps=eps)
    rows = [
        {"claim": "sparse recurrence (h > s0 log 2)", "holds": pred["tiers"]["log2"],
         "margin": pred["margins"]["log2"]},
        {"claim": "polynomial decay of correlations (h > s0 log 4)",
         "holds": pred["tiers"]["log4"], "margin": pred["margins"]["log4"],
         "predicted_exponent": pred["decay_exponent"]},
        {"claim": "ASIP (h > s0 log 8)", "holds": pred["tiers"]["log8"],
         "margin": pred["margins"]["log8"], "p_threshold": pred["asip_p_threshold"]},
    ]
    tags = []
    if complexity is not None and complexity.get("plateau"):
        tags.append("super-polynomial")
        rows.append({"claim": "super-polynomial decay (bounded complexity)", "holds": True,
                     "evidence": complexity.get("k_n")})
    mismatches = []
    for alpha, fit in (symbolic or {}).items():
        target = -(float(alpha) - 2.0)
        lo, hi = fit["band"]
        consistent = lo <= target <= hi
        rows.append({"claim": f"symbolic decay slope at alpha={alpha}", "target": target,
                     "measured": fit["slope"], "band": list(fit["band"]),
                     "holds": consistent})
        if not consistent:
            mismatches.append(f"alpha={alpha}: measured slope {fit['slope']:.3f} band "
                              f"[{lo:.3f}, {hi:.3f}] excludes {target:.3f}")
    billiard = {"h_hat": h_hat, "s0_hat": s0_hat, "s0_is_lower_bound": True,
                "margins": pred["margins"], "complexity": complexity, "tags": tags}
    return TierReport(billiard, pred, {str(k): v for k, v in (symbolic or {}).items()},
                      rows, mismatches)
