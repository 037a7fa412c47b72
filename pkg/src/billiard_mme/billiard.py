"""The collision map T on M = U_i S_i x [-pi/2, pi/2], its inverse and derivative."""
import math
from dataclasses import dataclass

import numpy as np

from . import defaults, kernels
from .errors import (FlightBudgetExceeded, GrazingDerivative, IndexOutOfRange,
                     NumericalTangency, OrbitError)
from .table import validate_table


@dataclass(frozen=True)
class PhasePoint:
    scatterer: int
    r: float
    phi: float

    def reflect(self):
        """Time-reversal involution I(r, phi) = (r, -phi)."""
        return PhasePoint(self.scatterer, self.r, -self.phi)


@dataclass(frozen=True)
class CollisionResult:
    next: PhasePoint
    tau: float
    grazing_flag: bool
    address: int = -1


class Billiard:
    """A validated table bundled with its derived constants and kernel geometry."""

    def __init__(self, config, derived=None, **validate_kw):
        self.config = config
        self.derived = derived if derived is not None else validate_table(config, **validate_kw)
        self.geom = config.geometry
        self.radius = self.geom.radius
        self.perimeter = 2.0 * math.pi * self.radius
        self.curvature = 1.0 / self.radius

    @property
    def n_scatterers(self):
        return len(self.config.scatterers)

    def normalize(self, x):
        if not 0 <= x.scatterer < self.n_scatterers:
            raise IndexOutOfRange(f"scatterer index {x.scatterer} out of range")
        per = self.perimeter[x.scatterer]
        return PhasePoint(x.scatterer, x.r % per, x.phi)

    # -- batched interface -------------------------------------------------
    def step_arrays(self, disk, r, phi, tol=defaults.GEOM_TOL, with_margin=False):
        return kernels.collide(self.geom, disk, r, phi, tol, with_margin)

    def follow_arrays(self, disk, r, phi, addrs):
        return kernels.follow(self.geom, disk, r, phi, addrs)

    def sample_invariant(self, n, rng):
        """Draw n phase points from the normalised measure cos(phi) dr dphi."""
        weights = self.perimeter / self.perimeter.sum()
        disk = rng.choice(self.n_scatterers, size=n, p=weights)
        r = rng.random(n) * self.perimeter[disk]
        phi = np.arcsin(2.0 * rng.random(n) - 1.0)
        return disk.astype(np.int64), r, phi


def _check_input(billiard, x, allow_grazing):
    x = billiard.normalize(x)
    if abs(x.phi) > math.pi / 2 + defaults.GEOM_TOL:
        raise ValueError(f"phi={x.phi} outside [-pi/2, pi/2]")
    if not allow_grazing and math.cos(x.phi) < defaults.GRAZING_TOL:
        raise NumericalTangency(f"grazing input (cos phi = {math.cos(x.phi):.3g})")
    return x


def _unpack(billiard, out, k=0):
    disk, r, phi, tau, addr, status = out
    if status[k] == kernels.NO_HIT:
        raise FlightBudgetExceeded(
            f"no collision within horizon budget {billiard.config.horizon_budget}")
    if status[k] == kernels.TANGENCY:
        raise NumericalTangency("next collision is within tolerance of a tangency")
    p = PhasePoint(int(disk[k]), float(r[k]), float(phi[k]))
    return CollisionResult(p, float(tau[k]), math.cos(p.phi) < defaults.GRAZING_TOL, int(addr[k]))


def step(billiard, x, allow_grazing=True):
    """Follow the outgoing ray from x to the next collision and reflect."""
    x = _check_input(billiard, x, allow_grazing)
    out = billiard.step_arrays(np.array([x.scatterer]), np.array([x.r]), np.array([x.phi]))
    return _unpack(billiard, out)


def step_inverse(billiard, x):
    """T^{-1} = I T I.  Grazing inputs have no well-defined preimage and raise."""
    x = _check_input(billiard, x, allow_grazing=False)
    res = step(billiard, x.reflect())
    return CollisionResult(res.next.reflect(), res.tau, res.grazing_flag, res.address)


def derivative_arrays(billiard, disk, r, phi, disk1, phi1, tau):
    """Analytic DT in (r, phi) coordinates, shape (n, 2, 2)."""
    k0 = billiard.curvature[disk]
    k1 = billiard.curvature[disk1]
    c0 = np.cos(phi)
    c1 = np.cos(phi1)
    out = np.empty(np.shape(tau) + (2, 2))
    out[..., 0, 0] = tau * k0 + c0
    out[..., 0, 1] = tau
    out[..., 1, 0] = tau * k0 * k1 + k0 * c1 + k1 * c0
    out[..., 1, 1] = tau * k1 + c1
    out *= (-1.0 / c1)[..., None, None]
    return out


def derivative(billiard, x, cos_tol=defaults.DERIVATIVE_COS_TOL):
    """DT(x) from the standard dispersing-billiard formula.

    Raises GrazingDerivative when cos(phi') < cos_tol; the entries scale like
    1/cos(phi').  The check comes before the kernel's tangency flag, which
    covers the same near-grazing band.
    """
    x = _check_input(billiard, x, allow_grazing=True)
    d1, _, p1, tau, _, status = billiard.step_arrays(
        np.array([x.scatterer]), np.array([x.r]), np.array([x.phi]))
    if status[0] == kernels.NO_HIT:
        raise FlightBudgetExceeded(
            f"no collision within horizon budget {billiard.config.horizon_budget}")
    c1 = math.cos(p1[0])
    if c1 < cos_tol:
        raise GrazingDerivative(f"cos(phi') = {c1:.3g}", scale=1.0 / max(c1, 1e-300))
    if status[0] == kernels.TANGENCY:
        raise NumericalTangency("next collision is within tolerance of a tangency")
    return derivative_arrays(billiard, x.scatterer, x.r, x.phi, int(d1[0]), p1[0], tau[0])


def derivative_fd(billiard, x, h=1e-6):
    """Central finite-difference DT, columns d/dr and d/dphi."""
    x = billiard.normalize(x)
    base = step(billiard, x).next
    per = billiard.perimeter[base.scatterer]
    cols = []
    for dr, dp in ((h, 0.0), (0.0, h)):
        plus = step(billiard, PhasePoint(x.scatterer, x.r + dr, x.phi + dp)).next
        minus = step(billiard, PhasePoint(x.scatterer, x.r - dr, x.phi - dp)).next
        if plus.scatterer != base.scatterer or minus.scatterer != base.scatterer:
            raise NumericalTangency("finite-difference stencil crosses a singularity")
        d_r = ((plus.r - minus.r + per / 2) % per - per / 2) / (2 * h)
        d_phi = (plus.phi - minus.phi) / (2 * h)
        cols.append((d_r, d_phi))
    return np.array(cols).T


def in_cone(v, lo, hi, tol=0.0):
    """Unstable-cone test on the slope dphi/dr; v may be (2,) or (n, 2)."""
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = v[..., 1] / v[..., 0]
    return (v[..., 0] != 0) & (slope >= lo - tol) & (slope <= hi + tol)


def orbit(billiard, x, n):
    """n applications of T; returns (points, flight times).

    Raises OrbitError carrying the index of the failing step.
    """
    pts = [billiard.normalize(x)]
    taus = []
    for k in range(n):
        try:
            res = step(billiard, pts[-1])
        except (FlightBudgetExceeded, NumericalTangency) as exc:
            raise OrbitError(f"orbit failed at step {k}: {exc}", k, exc) from exc
        pts.append(res.next)
        taus.append(res.tau)
    return pts, np.array(taus)


def orbit_arrays(billiard, disk, r, phi, n):
    """Vectorised orbits of many points.

    Returns arrays of shape (n+1, m) for disk, r, phi, (n, m) for tau, and a
    boolean mask of orbits that stayed clear of tangency/escape.
    """
    m = len(disk)
    D = np.empty((n + 1, m), np.int64)
    Rr = np.empty((n + 1, m))
    P = np.empty((n + 1, m))
    T = np.empty((n, m))
    ok = np.ones(m, bool)
    D[0], Rr[0], P[0] = disk, r, phi
    for k in range(n):
        d, rr, pp, tau, _, status = billiard.step_arrays(D[k], Rr[k], P[k])
        bad = status != kernels.OK
        ok &= ~bad
        # park failed orbits on a harmless point so the batch keeps going
        d = np.where(bad, 0, d)
        rr = np.where(bad, 0.0, rr)
        pp = np.where(bad, 0.0, pp)
        D[k + 1], Rr[k + 1], P[k + 1], T[k] = d, rr, pp, tau
    return D, Rr, P, T, ok


def period_two_point(billiard, i=0, j=1):
    """Point of scatterer i on the common normal to the nearest translate of j, phi = 0."""
    geom = billiard.geom
    sel = np.flatnonzero(geom.cand_disk[i, :geom.n_cand[i]] == j)
    m = sel[np.argmin(np.hypot(geom.cand_x[i, sel], geom.cand_y[i, sel]))]
    th = math.atan2(geom.cand_y[i, m], geom.cand_x[i, m])
    r = (-th * billiard.radius[i]) % billiard.perimeter[i]
    return PhasePoint(i, r, 0.0)


def _derivative_batch(billiard, d, r, p):
    d1, r1, p1, tau, _, status = billiard.step_arrays(d, r, p)
    return derivative_arrays(billiard, d, r, p, d1, p1, tau), (d1, r1, p1, status)


def map_checks(billiard, n_points=10_000, seed=0, n_fd=200, n_cone=100_000, n_expand=200,
               expand_steps=50, grazing_cut=0.1):
    """Map-level self-checks on random phase points.

    * reversibility: max |I T I T x - x| over n_points;
    * Jacobian: max | |det DT| cos phi' / cos phi - 1 | with cos phi, cos phi' > grazing_cut;
    * analytic vs central finite-difference DT (relative Frobenius error);
    * period-two orbit fixed by T^2;
    * cone preservation: fraction of cone vectors mapped into the cone;
    * expansion: min over orbits of (1/n) log of the p-metric growth cos phi |dr|
      of a cone vector after expand_steps steps, compared with log Lambda.
    """
    rng = np.random.default_rng(seed)
    out = {}
    d, r, p = billiard.sample_invariant(n_points, rng)
    d1, r1, p1, _, _, st1 = billiard.step_arrays(d, r, p)
    d2, r2, p2, _, _, st2 = billiard.step_arrays(d1, r1, -p1)
    ok = (st1 == kernels.OK) & (st2 == kernels.OK)
    per = billiard.perimeter[d]
    dr = np.abs((r2 - r + per / 2) % per - per / 2)
    res = np.maximum(np.where(d2 == d, dr, np.inf), np.abs(-p2 - p))
    out["reversibility_residual"] = float(res[ok].max())
    out["reversibility_points"] = int(ok.sum())

    J, (dd1, _, pp1, st) = _derivative_batch(billiard, d, r, p)
    sel = (st == kernels.OK) & (np.cos(p) > grazing_cut) & (np.cos(pp1) > grazing_cut)
    det = np.abs(np.linalg.det(J[sel]))
    out["jacobian_defect"] = float(np.max(np.abs(det * np.cos(pp1[sel]) / np.cos(p[sel]) - 1)))

    errs = []
    for k in np.flatnonzero(sel)[:n_fd]:
        x = PhasePoint(int(d[k]), float(r[k]), float(p[k]))
        try:
            fd = derivative_fd(billiard, x)
        except NumericalTangency:
            continue
        errs.append(np.linalg.norm(fd - J[k]) / np.linalg.norm(J[k]))
    out["fd_relative_error"] = float(max(errs))
    out["fd_points"] = len(errs)

    x0 = period_two_point(billiard)
    x2 = step(billiard, step(billiard, x0).next).next
    per0 = billiard.perimeter[x0.scatterer]
    out["period_two_residual"] = float(max(abs((x2.r - x0.r + per0 / 2) % per0 - per0 / 2),
                                           abs(x2.phi - x0.phi))) if x2.scatterer == x0.scatterer \
        else math.inf

    lo, hi = billiard.derived.cone
    d, r, p = billiard.sample_invariant(n_cone, rng)
    J, (_, _, _, st) = _derivative_batch(billiard, d, r, p)
    slope = lo + (hi - lo) * rng.random(n_cone)
    v = np.stack([np.ones(n_cone), slope], axis=1)
    w = np.einsum("nij,nj->ni", J, v)
    good = st == kernels.OK
    out["cone_fraction"] = float(in_cone(w[good], lo, hi, tol=1e-9).mean())
    out["cone_samples"] = int(good.sum())

    d, r, p = billiard.sample_invariant(n_expand, rng)
    v = np.stack([np.ones(n_expand), np.full(n_expand, math.sqrt(lo * hi))], axis=1)
    log_growth = np.log(np.cos(p) * np.abs(v[:, 0]))
    alive = np.ones(n_expand, bool)
    for _ in range(expand_steps):
        J, (d, r, p, st) = _derivative_batch(billiard, d, r, p)
        alive &= st == kernels.OK
        d, r, p = np.where(alive, d, 0), np.where(alive, r, 0.0), np.where(alive, p, 0.0)
        v = np.einsum("nij,nj->ni", J, v)
        norm = np.linalg.norm(v, axis=1)
        log_growth -= np.log(norm)
        v /= norm[:, None]
    final = np.log(np.cos(p) * np.abs(v[:, 0]))
    # undo the renormalisations: log |DT^n v|_p - log |v|_p
    expo = (final - log_growth) / expand_steps
    out["expansion_exponent_min"] = float(expo[alive].min())
    out["log_lambda"] = float(math.log(billiard.derived.lambda_hyp))
    return out
