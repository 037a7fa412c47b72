"""Table-level estimators: topological entropy h, sparse recurrence s_0, complexity K_n.

Also the constructive (n0, phi0) suggestion and the decay-rate predictions
that follow from measured (h, s_0).
"""
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import curves, defaults, kernels
from .billiard import orbit_arrays
from .errors import (BudgetExhausted, InsufficientData, InsufficientGrowth, ResolutionWarning,
                     ValidationError)

LOG2 = math.log(2.0)


# ---------------------------------------------------------------------------
# topological entropy
# ---------------------------------------------------------------------------


@dataclass
class EntropyEstimate:
    h_hat: float
    window: tuple
    per_seed: list
    spread: float
    counts: list = field(default_factory=list)
    lengths: list = field(default_factory=list)
    density: float = 1.0

    def to_dict(self):
        return asdict(self)


def default_window(n_max):
    """Upper half of 0..n_max."""
    return (n_max - n_max // 2, n_max)


def fit_growth_rate(counts, window=None):
    """Least-squares slope of log counts[n] against n over ``window`` (inclusive)."""
    counts = np.asarray(counts, dtype=float)
    n_max = counts.size - 1
    lo, hi = window if window is not None else default_window(n_max)
    if hi > n_max or lo < 0 or hi - lo < 1:
        raise InsufficientData(f"window {(lo, hi)} does not fit counts for n <= {n_max}")
    seg = counts[lo:hi + 1]
    if np.any(seg <= 0):
        raise InsufficientGrowth("non-positive counts inside the fit window")
    n = np.arange(lo, hi + 1)
    return float(np.polyfit(n, np.log(seg), 1)[0])


def relative_spread(values):
    """Sample standard deviation over mean."""
    v = np.asarray(values, dtype=float)
    return float(np.std(v, ddof=1) / abs(np.mean(v))) if v.size > 1 else 0.0


def entropy_from_counts(counts_per_seed, window=None, min_seeds=3, min_top_count=8):
    """h_hat from precomputed leaf-count sequences (one per seed curve)."""
    counts_per_seed = [np.asarray(c) for c in counts_per_seed]
    if len(counts_per_seed) < min_seeds:
        raise InsufficientData(f"need at least {min_seeds} seed curves")
    n_max = min(c.size for c in counts_per_seed) - 1
    if window is None:
        window = default_window(n_max)
    per_seed = []
    for c in counts_per_seed:
        if c[window[1]] < min_top_count or c[window[1]] <= c[window[0]]:
            raise InsufficientGrowth(
                f"leaf counts {c[window[0]]}..{c[window[1]]} too small to fit a rate")
        per_seed.append(fit_growth_rate(c[:n_max + 1], window))
    return EntropyEstimate(float(np.mean(per_seed)), tuple(window), per_seed,
                           relative_spread(per_seed),
                           [np.asarray(c).tolist() for c in counts_per_seed])


def estimate_h(billiard, seeds=None, n_max=12, window=None, density=1.0, **kw):
    """Entropy estimate from #G_n(W) over several seed curves.

    Each seed is evolved with the streaming leaf counter, the per-seed rate is
    the slope of log #G_n over the upper half of 0..n_max, and h_hat is the mean.
    """
    if n_max < 8:
        raise InsufficientData("estimate_h needs n_max >= 8")
    if seeds is None:
        seeds = curves.default_seeds(billiard)
    counts, lengths = [], []
    for seed in seeds:
        c, L = curves.count_leaves(billiard, seed, n_max, density=density, **kw)
        counts.append(c)
        lengths.append(L.tolist())
    est = entropy_from_counts(counts, window)
    est.lengths = lengths
    est.density = density
    return est


def itinerary_growth(billiard, n_max, grid=(400, 400)):
    """Distinct n-step itineraries over a product grid in (r, sin phi) on every scatterer.

    A lower-bound proxy for #M_n: each distinct symbolic itinerary hit by the
    grid lies in a different element of the partition.  Returns the counts for
    n = 0..n_max and the fitted slope over the upper half.
    """
    nr, nphi = grid
    disks, rs, phis = [], [], []
    for i in range(billiard.n_scatterers):
        r = (np.arange(nr) + 0.5) / nr * billiard.perimeter[i]
        phi = np.arcsin((np.arange(nphi) + 0.5) / nphi * 2.0 - 1.0)
        R, P = np.meshgrid(r, phi, indexing="ij")
        rs.append(R.ravel())
        phis.append(P.ravel())
        disks.append(np.full(R.size, i, np.int64))
    d = np.concatenate(disks)
    r = np.concatenate(rs)
    p = np.concatenate(phis)
    code = d.astype(np.int64)
    mult = np.int64(1_000_003)
    counts = [billiard.n_scatterers]
    ok = np.ones(d.size, bool)
    with np.errstate(over="ignore"):
        for _ in range(n_max):
            d, r, p, _, addr, status = billiard.step_arrays(d, r, p)
            ok &= status == kernels.OK
            d = np.where(ok, d, 0)
            r = np.where(ok, r, 0.0)
            p = np.where(ok, p, 0.0)
            code = code * mult + addr + 1
            counts.append(int(np.unique(code[ok]).size))
    counts = np.array(counts)
    return counts, fit_growth_rate(counts)


# ---------------------------------------------------------------------------
# sparse recurrence
# ---------------------------------------------------------------------------


@dataclass
class SparseRecurrenceEstimate:
    phi0: float
    n0: int
    s0_hat: float
    sample_size: int
    failed_orbits: int
    argmax: tuple
    h_hat: float = None
    margin_log2: float = None
    margin_log4: float = None
    margin_log8: float = None
    lower_bound: bool = True

    def to_dict(self):
        return asdict(self)


def sparse_fraction(phis, phi0, n0):
    """Max over orbits and windows of #{|phi| > phi0}/n0 on fixed orbit data.

    ``phis`` has shape (orbit_len, n_orbits).  Returns (s0, (orbit, start), windows).
    """
    phis = np.asarray(phis)
    L = phis.shape[0]
    if n0 > L:
        raise ValidationError(f"window n0={n0} longer than orbit length {L}")
    hits = (np.abs(phis) > phi0).astype(np.int64)
    cs = np.vstack([np.zeros((1, phis.shape[1]), np.int64), np.cumsum(hits, axis=0)])
    win = cs[n0:] - cs[:-n0]
    k = int(np.argmax(win))
    start, orb = np.unravel_index(k, win.shape)
    return win.flat[k] / n0, (int(orb), int(start)), int(win.size)


def sample_orbit_angles(billiard, n_points, orbit_len, seed=0):
    """Collision angles phi_1..phi_L of orbits started from cos(phi) dr dphi.

    Orbits that hit a numerical tangency are dropped; their number is returned.
    """
    rng = np.random.default_rng(seed)
    d, r, p = billiard.sample_invariant(n_points, rng)
    _, _, P, _, ok = orbit_arrays(billiard, d, r, p, orbit_len)
    return P[1:, ok], int((~ok).sum())


def estimate_s0(billiard, phi0, n0, n_points=2000, orbit_len=200, seed=0, h_hat=None,
                angles=None):
    """Sampled lower bound for s_0(phi0, n0).

    ``angles`` may carry precomputed ``sample_orbit_angles`` output so that a
    ladder of phi0 values is evaluated on identical data.
    """
    if not 0.0 < phi0 < math.pi / 2:
        raise ValidationError("phi0 must lie in (0, pi/2)")
    if n0 < 1:
        raise ValidationError("n0 must be >= 1")
    phis, failed = angles if angles is not None else sample_orbit_angles(
        billiard, n_points, orbit_len, seed)
    s0, argmax, size = sparse_fraction(phis, phi0, n0)
    est = SparseRecurrenceEstimate(float(phi0), int(n0), float(s0), size, failed, argmax)
    if h_hat is not None:
        est.h_hat = float(h_hat)
        est.margin_log2 = h_hat - s0 * math.log(2)
        est.margin_log4 = h_hat - s0 * math.log(4)
        est.margin_log8 = h_hat - s0 * math.log(8)
    return est


def suggest_n0(k_bound, eps0):
    """Smallest integer n0 >= 1 with k_bound / n0 < eps0."""
    if k_bound <= 0 or eps0 <= 0:
        raise ValidationError("k_bound and eps0 must be positive")
    n0 = max(1, math.ceil(k_bound / eps0))
    while k_bound / n0 >= eps0:
        n0 += 1
    while n0 > 1 and k_bound / (n0 - 1) < eps0:
        n0 -= 1
    return n0


def suggest_sparse_params(k_bound, eps0, billiard=None, ladder=defaults.PHI0_LADDER,
                          n_points=2000, orbit_len=200, seed=0):
    """n0 from the complexity bound, then a phi0 ladder checked against sampled s_0.

    Without a billiard only n0 and the ladder are returned.  With one, phi0 is
    raised rung by rung until s0_hat < eps0; BudgetExhausted carries the history
    if the ladder ends first.
    """
    n0 = suggest_n0(k_bound, eps0)
    out = {"k_bound": k_bound, "eps0": eps0, "n0": n0, "phi0_ladder": list(ladder)}
    if billiard is None:
        return out
    angles = sample_orbit_angles(billiard, n_points, max(orbit_len, n0), seed)
    history = []
    for phi0 in ladder:
        est = estimate_s0(billiard, phi0, n0, angles=angles)
        history.append(est.to_dict())
        if est.s0_hat < eps0:
            out.update(phi0=phi0, s0_hat=est.s0_hat, estimate=est.to_dict(), history=history)
            return out
    raise BudgetExhausted(f"phi0 ladder ended with s0_hat >= {eps0}", history)


# ---------------------------------------------------------------------------
# complexity K_n
# ---------------------------------------------------------------------------


@dataclass
class ComplexityEstimate:
    n: int
    k_n_hat: int
    curve_count: int
    clustering_radius: float
    samples_per_curve: int
    witness: tuple = None

    def to_dict(self):
        return asdict(self)


def _ray(billiard, d, r, p):
    """Launch position (relative to the disk centre) and unit direction."""
    rho = billiard.radius[d]
    th = -r / rho
    n = np.stack([np.cos(th), np.sin(th)], axis=-1)
    cp, sp = np.cos(p), np.sin(p)
    v = np.stack([cp * n[:, 0] + sp * n[:, 1], cp * n[:, 1] - sp * n[:, 0]], axis=-1)
    return rho[:, None] * n, v


def _tangent_foot(billiard, d, r, p, addr):
    """Grazing point on candidate ``addr`` of the ray leaving (d, r, p)."""
    g = billiard.geom
    P, v = _ray(billiard, d, r, p)
    C = np.stack([g.cand_x[d, addr], g.cand_y[d, addr]], axis=-1)
    R = g.cand_r[d, addr]
    w = P - C
    wp = w - np.sum(w * v, axis=1)[:, None] * v
    nrm = wp / np.linalg.norm(wp, axis=1)[:, None]
    th = np.arctan2(nrm[:, 1], nrm[:, 0])
    per = 2.0 * math.pi * R
    rf = (-th * R) % per
    t = np.stack([np.sin(th), -np.cos(th)], axis=-1)
    pf = np.where(np.sum(v * t, axis=1) >= 0, math.pi / 2, -math.pi / 2)
    return g.cand_disk[d, addr], rf, pf


def _propagate(billiard, d, r, p, n):
    """n steps with zero tangency tolerance; returns stacked states and addresses."""
    D = np.empty((n + 1, d.size), np.int64)
    Rr = np.empty((n + 1, d.size))
    P = np.empty((n + 1, d.size))
    A = np.empty((n, d.size), np.int64)
    D[0], Rr[0], P[0] = d, r, p
    for k in range(n):
        dk, rk, pk, _, ak, _ = billiard.step_arrays(D[k], Rr[k], P[k], tol=0.0)
        D[k + 1], Rr[k + 1], P[k + 1], A[k] = dk, rk, pk, ak
    return D, Rr, P, A


def _first_diff(A, B):
    """Index of the first differing row between address columns, or -1."""
    diff = A != B
    anyd = diff.any(axis=0)
    return np.where(anyd, np.argmax(diff, axis=0), -1)


def singularity_points(billiard, n, samples_per_curve=4096, bisect_iter=60):
    """Sampled points of T^k S_0 for k <= n, labelled by continuity piece.

    S_0 = {phi = +-pi/2}.  Its images are sampled on a nested grid, every
    itinerary change between neighbouring samples is bracketed by bisection,
    and both one-sided endpoints are added.  On the side that grazes, the
    endpoint is snapped to the exact tangency point and propagated from there,
    so endpoints of different pieces coincide to rounding rather than to the
    square root of the bisection tolerance.

    Returns arrays (k, disk, r, phi, label).
    """
    per = billiard.perimeter
    M = int(samples_per_curve)
    src_d, src_r, src_p, src_c = [], [], [], []
    for i in range(billiard.n_scatterers):
        for c, sgn in enumerate((1.0, -1.0)):
            src_r.append(np.arange(M) / M * per[i])
            src_d.append(np.full(M, i, np.int64))
            src_p.append(np.full(M, sgn * math.pi / 2))
            src_c.append(np.full(M, 2 * i + c, np.int64))
    d0 = np.concatenate(src_d)
    r0 = np.concatenate(src_r)
    p0 = np.concatenate(src_p)
    curve = np.concatenate(src_c)
    D, R, P, A = _propagate(billiard, d0, r0, p0, n)

    # neighbours along each closed source curve
    nxt = np.arange(d0.size) + 1
    nxt[M - 1::M] -= M
    j = _first_diff(A, A[:, nxt])
    cut = np.flatnonzero(j >= 0)
    lo_r = r0[cut].copy()
    hi_r = r0[nxt[cut]].copy()
    hi_r = np.where(hi_r < lo_r, hi_r + per[d0[cut]], hi_r)
    dc, pc, jc = d0[cut], p0[cut], j[cut]
    Aref = A[:, cut]
    for _ in range(bisect_iter):
        mid = 0.5 * (lo_r + hi_r)
        _, _, _, Am = _propagate(billiard, dc, mid % per[dc], pc, n)
        jm = _first_diff(Am, Aref)
        same = (jm < 0) | (jm > jc)
        lo_r = np.where(same, mid, lo_r)
        hi_r = np.where(same, hi_r, mid)
    lo_r %= per[dc]
    hi_r %= per[dc]
    ends = [_endpoint_orbits(billiard, dc, lo_r, pc, jc, n),
            _endpoint_orbits(billiard, dc, hi_r, pc, jc, n)]
    blocks = [(D, R, P, A, curve)]
    for Dm, Rm, Pm, Am in ends:
        blocks.append((Dm, Rm, Pm, Am, curve[cut]))
    ks, ds, rs, ps, labels = [], [], [], [], []
    for Db, Rb, Pb, Ab, cb in blocks:
        h = cb.astype(np.int64)
        with np.errstate(over="ignore"):
            for k in range(n + 1):
                if k > 0:
                    h = h * np.int64(1_000_003) + Ab[k - 1] + 2
                ks.append(np.full(cb.size, k, np.int64))
                ds.append(Db[k])
                rs.append(Rb[k])
                ps.append(Pb[k])
                # S_0 itself: one curve per (disk, sign), labelled apart from its images
                labels.append(np.where(k == 0, -(cb + 1), h))
    return (np.concatenate(ks), np.concatenate(ds), np.concatenate(rs),
            np.concatenate(ps), np.concatenate(labels))


def _endpoint_orbits(billiard, d, r, p, j, n):
    """Orbits of bracket points; the grazing collision at step j is snapped exactly."""
    D, R, P, A = _propagate(billiard, d, r, p, n)
    m = d.size
    cols = np.arange(m)
    # the state leaving the collision before the cut
    dj, rj, pj = D[j, cols], R[j, cols], P[j, cols]
    aj = A[j, cols]
    gd, gr, gp = _tangent_foot(billiard, dj, rj, pj, aj)
    # decide which side grazes: the foot must be the collision actually registered
    graze = (gd == D[j + 1, cols]) & (np.abs(np.abs(P[j + 1, cols]) - math.pi / 2) < 1e-3)
    for k in np.unique(j[graze]):
        sel = np.flatnonzero(graze & (j == k))
        Ds, Rs, Ps, As = _propagate(billiard, gd[sel], gr[sel], gp[sel], n - k - 1)
        D[k + 1:, sel] = Ds
        R[k + 1:, sel] = Rs
        P[k + 1:, sel] = Ps
        A[k + 1:, sel] = As[:n - k - 1] if n - k - 1 > 0 else A[k + 1:, sel]
    return D, R, P, A


def multiplicity(disk, r, phi, label, billiard, radius):
    """Max number of distinct labels inside a ball of ``radius`` in one (r, phi) chart.

    Points within ``radius`` of phi = +-pi/2 also count the S_0 curve of that sign.
    Returns (k, witness) with witness = (disk, r, phi) of a maximising point.
    """
    best, witness = (1 if disk.size else 0), None
    for i in range(billiard.n_scatterers):
        sel = np.flatnonzero(disk == i)
        if sel.size == 0:
            continue
        per = billiard.perimeter[i]
        lab = label[sel].copy()
        ph = phi[sel]
        # S_0 membership by proximity
        s0 = np.abs(np.abs(ph) - math.pi / 2) <= radius
        s0_lab = -(2 * i + np.where(ph > 0, 0, 1) + 1)
        # a lone point on S_0 already sits on two curves
        single = np.flatnonzero(s0 & (lab != s0_lab))
        if single.size and best < 2:
            best = 2
            q = sel[single[0]]
            witness = (i, float(r[q]), float(phi[q]))
        pts = np.stack([r[sel] % per, ph + math.pi / 2], axis=1)
        tree = cKDTree(pts, boxsize=[per, math.pi + 4 * radius + 1.0])
        pairs = tree.query_pairs(radius, output_type="ndarray")
        if pairs.size == 0:
            continue
        nbrs = {}
        for a, b in pairs.tolist():
            nbrs.setdefault(a, [a]).append(b)
            nbrs.setdefault(b, [b]).append(a)
        for a, group in nbrs.items():
            g = np.array(group)
            labs = set(lab[g].tolist())
            labs.update(s0_lab[g[s0[g]]].tolist())
            if len(labs) > best:
                best = len(labs)
                q = sel[a]
                witness = (i, float(r[q]), float(phi[q]))
    return best, witness


def complexity_profile(billiard, n_max, samples_per_curve=4096,
                       clustering_radius=defaults.CLUSTERING_RADIUS):
    """ComplexityEstimate for every n = 1..n_max from one trace of S_0's images.

    The curves traced are those of S_{-n} = U_{k<=n} T^k S_0.  Time reversal
    maps them onto S_n (T^{-1} = I T I and I S_0 = S_0) and preserves
    multiplicities, so the same numbers describe S_n.
    """
    k, d, r, p, lab = singularity_points(billiard, n_max, samples_per_curve)
    out = []
    for n in range(1, n_max + 1):
        sel = k <= n
        kn, wit = multiplicity(d[sel], r[sel], p[sel], lab[sel], billiard, clustering_radius)
        out.append(ComplexityEstimate(n, int(kn), int(np.unique(lab[sel]).size),
                                      clustering_radius, int(samples_per_curve), wit))
    return out


def estimate_Kn(billiard, n, samples_per_curve=4096, clustering_radius=defaults.CLUSTERING_RADIUS,
                check_resolution=True):
    """k_n_hat at depth n; warns with ResolutionWarning if doubling the samples changes it."""
    est = complexity_profile(billiard, n, samples_per_curve, clustering_radius)[-1]
    if check_resolution:
        fine = complexity_profile(billiard, n, 2 * samples_per_curve, clustering_radius)[-1]
        if fine.k_n_hat != est.k_n_hat:
            warnings.warn(f"k_{n}_hat changed from {est.k_n_hat} to {fine.k_n_hat} when "
                          f"samples_per_curve doubled", ResolutionWarning, stacklevel=2)
    return est


def linear_envelope(k_values, fit_upto=None):
    """Envelope K_fit = max k_n/n over n <= fit_upto, then checked on every n.

    ``k_values[n-1]`` is k_n.  Fitting on the lower half and testing on the
    whole range makes the envelope an out-of-sample check.  Also reports
    whether the sequence plateaus over its upper half (no increase there).
    """
    k = np.asarray(k_values, dtype=float)
    n = np.arange(1, k.size + 1)
    if fit_upto is None:
        fit_upto = max(1, k.size // 2)
    K_fit = float(np.max(k[:fit_upto] / n[:fit_upto]))
    holds = bool(np.all(k <= K_fit * n))
    upper = k[k.size // 2:]
    return {"K_fit": K_fit, "fit_upto": int(fit_upto), "envelope_holds": holds,
            "k_n": k.astype(int).tolist(), "plateau": bool(np.all(upper == upper[0])),
            "max_ratio": float(np.max(k / n))}


# ---------------------------------------------------------------------------
# rate predictions
# ---------------------------------------------------------------------------


def predict_rates(h, s0, h_prime=None, eps=0.0):
    """Decay and ASIP exponents implied by (h, s_0), with tier flags.

    ratio = h / (s0 log 2).  Tiers: h > s0 log 2 (sparse recurrence condition),
    h > s0 log 4 (polynomial decay), h > s0 log 8 (ASIP).  Decay bound exponent
    ratio - 2 - eps; ASIP rate threshold p > 1/(ratio - 1).  With h' < h the
    tail exponent alpha = (h - h') / (s0 log 2) is reported as well.
    """
    if h <= 0 or s0 < 0:
        raise ValidationError("need h > 0 and s0 >= 0")
    ratio = math.inf if s0 == 0 else h / (s0 * LOG2)
    tiers = {f"log{b}": ratio > math.log2(b) for b in (2, 4, 8)}
    flags = [f"TierNotMet: h <= s0 log {b}" for b in (2, 4, 8) if not tiers[f"log{b}"]]
    out = {
        "h": h, "s0": s0, "ratio": ratio, "tiers": tiers, "flags": flags,
        "decay_exponent": ratio - 2.0 - eps,
        "asip_p_threshold": 0.0 if math.isinf(ratio) else (
            1.0 / (ratio - 1.0) if ratio > 1 else math.inf),
        "margins": {f"log{b}": h - s0 * math.log(b) for b in (2, 4, 8)},
        "super_polynomial": s0 == 0,
    }
    if h_prime is not None:
        out["alpha"] = math.inf if s0 == 0 else (h - h_prime) / (s0 * LOG2)
    return out
