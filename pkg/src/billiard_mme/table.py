"""Finite-horizon dispersing tables: circular scatterers on the unit torus."""
import math
from dataclasses import dataclass, field
from functools import cached_property
from math import gcd

import numpy as np

from . import defaults, kernels
from .errors import (EmptyTable, HorizonNotCertified, IndexOutOfRange, OverlappingScatterers,
                     ParseError, ValidationError)


@dataclass(frozen=True)
class ScattererDisk:
    cx: float
    cy: float
    radius: float

    def __post_init__(self):
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValidationError(f"scatterer radius must be positive, got {self.radius}")
        if not (math.isfinite(self.cx) and math.isfinite(self.cy)):
            raise ValidationError("scatterer centre must be finite")
        # x % 1.0 rounds to 1.0 for tiny negative x
        object.__setattr__(self, "cx", self.cx % 1.0 % 1.0)
        object.__setattr__(self, "cy", self.cy % 1.0 % 1.0)

    @property
    def curvature(self):
        return 1.0 / self.radius

    @property
    def perimeter(self):
        return 2.0 * math.pi * self.radius


@dataclass(frozen=True)
class TableConfig:
    scatterers: tuple
    horizon_budget: float = defaults.HORIZON_BUDGET

    def __post_init__(self):
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        if not self.horizon_budget > 0:
            raise ValidationError("horizon_budget must be positive")

    def __len__(self):
        return len(self.scatterers)

    @property
    def perimeters(self):
        return np.array([d.perimeter for d in self.scatterers])

    @property
    def boundary_length(self):
        return float(self.perimeters.sum())

    @cached_property
    def geometry(self):
        return FlightGeometry.build(self)


@dataclass
class TableDerived:
    tau_min: float
    tau_max: float
    k_min: float
    k_max: float
    lambda_hyp: float
    finite_horizon_certified: bool
    report: dict = field(default_factory=dict)

    @property
    def cone(self):
        """Slope band (dphi/dr) of the unstable cone."""
        return self.k_min, self.k_max + 1.0 / self.tau_min

    def as_dict(self):
        return {
            "tau_min": self.tau_min,
            "tau_max": self.tau_max,
            "k_min": self.k_min,
            "k_max": self.k_max,
            "lambda_hyp": self.lambda_hyp,
            "finite_horizon_certified": self.finite_horizon_certified,
            "cone": list(self.cone),
            "report": self.report,
        }


# Nearly touching disks: every scatterer sees few others, so leaf counts grow
# like e^{1.0 n} and stay tractable up to n = 12.
REFERENCE_TABLE = TableConfig(
    (ScattererDisk(0.0, 0.0, 0.47), ScattererDisk(0.5, 0.5, 0.23)),
    horizon_budget=defaults.HORIZON_BUDGET,
)

# Wider gaps and a larger growth rate (about e^{1.65 n}); cheap map-level checks only.
OPEN_TABLE = TableConfig(
    (ScattererDisk(0.0, 0.0, 0.40), ScattererDisk(0.5, 0.5, 0.22)),
    horizon_budget=defaults.HORIZON_BUDGET,
)


class FlightGeometry:
    """Padded per-scatterer candidate lists of lattice translates for the kernels."""

    def __init__(self, radius, cand_x, cand_y, cand_r, cand_disk, cand_shift, n_cand):
        self.radius = radius
        self.cand_x = cand_x
        self.cand_y = cand_y
        self.cand_r = cand_r
        self.cand_disk = cand_disk
        self.cand_shift = cand_shift
        self.n_cand = n_cand
        self.max_cand = cand_x.shape[1]

    @classmethod
    def build(cls, config):
        disks = config.scatterers
        n = len(disks)
        rmax = max(d.radius for d in disks)
        reach = config.horizon_budget + 2.0 * rmax
        span = int(math.ceil(reach)) + 1
        rows = []
        for i, src in enumerate(disks):
            row = []
            for j, dst in enumerate(disks):
                for a in range(-span, span + 1):
                    for b in range(-span, span + 1):
                        if i == j and a == 0 and b == 0:
                            continue
                        dx = dst.cx + a - src.cx
                        dy = dst.cy + b - src.cy
                        dist = math.hypot(dx, dy)
                        if dist - dst.radius - src.radius <= config.horizon_budget:
                            row.append((dist, dx, dy, dst.radius, j, a, b))
            row.sort()
            rows.append(row)
        width = max(len(r) for r in rows)
        cand_x = np.zeros((n, width))
        cand_y = np.zeros((n, width))
        cand_r = np.zeros((n, width))
        cand_disk = np.zeros((n, width), np.int64)
        cand_shift = np.zeros((n, width, 2), np.int64)
        n_cand = np.zeros(n, np.int64)
        for i, row in enumerate(rows):
            n_cand[i] = len(row)
            for m, (_, dx, dy, rad, j, a, b) in enumerate(row):
                cand_x[i, m] = dx
                cand_y[i, m] = dy
                cand_r[i, m] = rad
                cand_disk[i, m] = j
                cand_shift[i, m] = (a, b)
        radius = np.array([d.radius for d in disks])
        return cls(radius, cand_x, cand_y, cand_r, cand_disk, cand_shift, n_cand)


def _check_config(config):
    if len(config.scatterers) == 0:
        raise EmptyTable("table has no scatterers")


def boundary_gaps(config):
    """Minimum boundary gap for every ordered scatterer pair over lattice translates."""
    _check_config(config)
    disks = config.scatterers
    out = {}
    for i, a in enumerate(disks):
        for j, b in enumerate(disks):
            if j < i:
                continue
            dx = (b.cx - a.cx + 0.5) % 1.0 - 0.5
            dy = (b.cy - a.cy + 0.5) % 1.0 - 0.5
            best = math.inf
            for s in range(-2, 3):
                for t in range(-2, 3):
                    if i == j and s == 0 and t == 0:
                        continue
                    best = min(best, math.hypot(dx + s, dy + t) - a.radius - b.radius)
            out[(i, j)] = best
    return out


def corridor_scan(config, qmax=defaults.CORRIDOR_QMAX):
    """Look for open corridors along rational directions (q, p), |p|, |q| <= qmax.

    Lines of direction (q, p) close up after length L = sqrt(p^2 + q^2) and their
    perpendicular offsets live on a circle of circumference 1/L.  Each disk
    shadows an arc of width 2*radius there; a corridor is an uncovered gap.
    Returns (open corridors, smallest coverage margin over blocked directions).
    """
    corridors = []
    margin = math.inf
    for q in range(0, qmax + 1):
        for p in range(-qmax, qmax + 1):
            if (q == 0 and p <= 0) or gcd(q, abs(p)) != 1:
                continue
            L = math.hypot(p, q)
            period = 1.0 / L
            nx, ny = -p / L, q / L
            width = max(2.0 * d.radius for d in config.scatterers)
            if width >= period:
                margin = min(margin, width - period)
                continue
            # split wrapped arcs so everything lives on [0, period]
            arcs = []
            wrapped = False
            for d in config.scatterers:
                lo = (nx * d.cx + ny * d.cy - d.radius) % period
                hi = lo + 2.0 * d.radius
                if hi > period:
                    arcs.append((lo, period))
                    arcs.append((0.0, hi - period))
                    wrapped = True
                else:
                    arcs.append((lo, hi))
            arcs.sort()
            reach = arcs[0][1]
            gap = -math.inf
            for lo, hi in arcs[1:]:
                gap = max(gap, lo - reach)
                reach = max(reach, hi)
            if not wrapped:
                gap = max(gap, arcs[0][0] + period - reach)
            if gap > 0:
                corridors.append({"direction": [q, p], "width": gap, "length": L})
            else:
                margin = min(margin, -gap)
    return corridors, margin


def _sweep_rays(config, disk_index, alpha, u):
    """Flights of rays leaving scatterer ``disk_index`` in direction alpha at offset u*radius."""
    d = config.scatterers[disk_index]
    # the ray leaves from the boundary point with normal angle alpha + asin(u)
    # and phi = asin(u)
    phi = np.arcsin(np.clip(u, -1.0, 1.0))
    r = np.mod(-(alpha + phi) * d.radius, d.perimeter)
    disk = np.full(r.shape, disk_index, np.int64)
    tau = np.empty(r.shape)
    status = np.empty(r.shape, np.int64)
    step = 1 << 18
    for s in range(0, r.size, step):
        _, _, _, t, _, st = kernels.collide(config.geometry, disk[s:s + step], r[s:s + step],
                                            phi[s:s + step], 0.0)
        tau[s:s + step] = t
        status[s:s + step] = st
    return tau, status


def flight_sweep(config, resolution=defaults.SWEEP_RESOLUTION, offsets=defaults.SWEEP_OFFSETS):
    """Escape check over a direction sweep.

    For each direction on a grid of step ``resolution`` and each scatterer,
    rays leave the scatterer at ``offsets`` evenly spaced perpendicular offsets.
    Returns (max flight seen, number of rays with no collision inside the budget).
    """
    n_dir = max(8, int(math.ceil(2 * math.pi / resolution)))
    alpha = (np.arange(n_dir) + 0.5) * (2 * math.pi / n_dir)
    u = (np.arange(offsets) + 0.5) / offsets * 2.0 - 1.0
    A, U = np.meshgrid(alpha, u, indexing="ij")
    best = 0.0
    escaped = 0
    for i in range(len(config.scatterers)):
        tau, status = _sweep_rays(config, i, A.ravel(), U.ravel())
        escaped += int((status == kernels.NO_HIT).sum())
        fin = tau[np.isfinite(tau)]
        if fin.size:
            best = max(best, float(fin.max()))
    return best, escaped


def _tangent_flights(config, i, theta):
    """Free length of the line tangent to scatterer i at normal angle theta.

    The line is followed both ways from the tangency point: forward is the
    grazing ray phi = pi/2, backward the grazing ray phi = -pi/2.
    """
    d = config.scatterers[i]
    r = np.mod(-theta * d.radius, d.perimeter)
    disk = np.full(r.shape, i, np.int64)
    total = np.zeros(r.shape)
    escaped = 0
    for sign in (1.0, -1.0):
        _, _, _, t, _, st = kernels.collide(config.geometry, disk, r,
                                            np.full(r.shape, sign * math.pi / 2), 0.0)
        escaped += int((st == kernels.NO_HIT).sum())
        total += np.where(st == kernels.OK, t, np.inf if sign > 0 else 0.0)
    return total, escaped


def tangent_line_sup(config, resolution=defaults.SWEEP_RESOLUTION,
                     refine_top=defaults.SWEEP_REFINE_TOP,
                     refine_rounds=defaults.SWEEP_REFINE_ROUNDS):
    """Supremum of free flight, located on lines tangent to a scatterer.

    At a fixed direction the length of a free chord between two disks is a
    convex function of its perpendicular offset, so it has no interior
    maximum: the supremum is approached as the chord becomes tangent to some
    scatterer.  Every such chord lies on a tangent line, whose free length
    through the tangency point bounds it.  Tangent lines are scanned on a
    grid of normal angles, and the ``refine_top`` longest are re-searched on
    shrinking local grids.  Returns (sup estimate, escaped tangent rays).
    """
    n = max(8, int(math.ceil(2 * math.pi / resolution)))
    h0 = 2 * math.pi / n
    theta = np.arange(n) * h0
    grid = np.linspace(-1.0, 1.0, 17)
    best = 0.0
    escaped = 0
    for i in range(len(config.scatterers)):
        L, esc = _tangent_flights(config, i, theta)
        escaped += esc
        if not np.isfinite(L).all():
            return math.inf, escaped
        best = max(best, float(L.max()))
        k = min(refine_top, L.size)
        for t0 in theta[np.argpartition(-L, k - 1)[:k]]:
            h = h0
            for _ in range(refine_rounds):
                tt = t0 + h * grid
                Lr, esc = _tangent_flights(config, i, tt)
                escaped += esc
                j = int(np.argmax(Lr))
                best = max(best, float(Lr[j]))
                t0, h = tt[j], h / 4
    return best, escaped


def validate_table(config, qmax=defaults.CORRIDOR_QMAX, resolution=defaults.SWEEP_RESOLUTION,
                   offsets=defaults.SWEEP_OFFSETS, raise_on_horizon=True):
    """Check disjointness and finite horizon; compute the derived constants."""
    _check_config(config)
    gaps = boundary_gaps(config)
    for (i, j), g in gaps.items():
        if g <= defaults.GEOM_TOL:
            raise OverlappingScatterers(
                f"scatterers {i} and {j} overlap or touch (boundary gap {g:.6g})")
    tau_min = min(gaps.values())
    radii = [d.radius for d in config.scatterers]
    k_min = 1.0 / max(radii)
    k_max = 1.0 / min(radii)
    corridors, margin = corridor_scan(config, qmax)
    sweep_max, escaped = flight_sweep(config, resolution, offsets)
    tangent_max, tangent_escaped = tangent_line_sup(config, resolution)
    escaped += tangent_escaped
    tau_max = max(sweep_max, tangent_max)
    certified = not corridors and escaped == 0 and tau_max < config.horizon_budget
    report = {
        "open_corridors": corridors,
        "corridor_margin": margin if math.isfinite(margin) else None,
        "escaped_rays": escaped,
        "sweep_flight_max": sweep_max,
        "tangent_line_sup": tangent_max,
        "sweep_resolution": resolution,
        "sweep_offsets": offsets,
        "qmax": qmax,
        "horizon_budget": config.horizon_budget,
        "tau_max_residual": config.horizon_budget - tau_max,
    }
    derived = TableDerived(tau_min, tau_max, k_min, k_max, 1.0 + 2.0 * k_min * tau_min,
                           certified, report)
    if not certified and raise_on_horizon:
        if corridors:
            c = corridors[0]
            msg = f"open corridor along {tuple(c['direction'])} of width {c['width']:.4g}"
        else:
            msg = f"free flight exceeds the horizon budget {config.horizon_budget}"
        raise HorizonNotCertified(msg, report=derived.as_dict())
    return derived


def boundary_point(config, scatterer_index, r):
    """Torus point on scatterer ``scatterer_index`` at arc length r, and the outward normal.

    r runs clockwise from the point on the positive x axis and is taken modulo
    the perimeter.
    """
    if not 0 <= scatterer_index < len(config.scatterers):
        raise IndexOutOfRange(f"scatterer index {scatterer_index} out of range")
    d = config.scatterers[scatterer_index]
    r = math.fmod(r, d.perimeter)
    if r < 0:
        r += d.perimeter
    th = -r / d.radius
    normal = np.array([math.cos(th), math.sin(th)])
    point = np.array([d.cx, d.cy]) + d.radius * normal
    return point, normal


# ---------------------------------------------------------------------------
# table files
# ---------------------------------------------------------------------------

TABLE_GRAMMAR = """\
table file grammar (one statement per line, '#' starts a comment):
    disk <cx> <cy> <radius>        circular scatterer, centre in torus units
    horizon_budget <length>        optional, default 3.0
at least one disk is required; anything else on a line is an error."""


def _floats(tokens, lineno, n):
    if len(tokens) != n:
        raise ParseError(f"expected {n} numbers, got {len(tokens)}", lineno)
    try:
        vals = [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise ParseError("non-finite number", lineno)
    return vals


def parse_table(text):
    disks = []
    budget = defaults.HORIZON_BUDGET
    seen_budget = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        if key == "disk":
            cx, cy, rad = _floats(rest, lineno, 3)
            if rad <= 0:
                raise ParseError("radius must be positive", lineno)
            disks.append(ScattererDisk(cx, cy, rad))
        elif key == "horizon_budget":
            if seen_budget:
                raise ParseError("horizon_budget given twice", lineno)
            (budget,) = _floats(rest, lineno, 1)
            if budget <= 0:
                raise ParseError("horizon_budget must be positive", lineno)
            seen_budget = True
        else:
            raise ParseError(f"unknown statement {key!r}", lineno)
    if not disks:
        raise EmptyTable("table file defines no disks")
    return TableConfig(tuple(disks), budget)


def load_table(path):
    with open(path) as fh:
        return parse_table(fh.read())


def format_table(config):
    lines = [f"disk {d.cx!r} {d.cy!r} {d.radius!r}" for d in config.scatterers]
    lines.append(f"horizon_budget {config.horizon_budget!r}")
    return "\n".join(lines) + "\n"
