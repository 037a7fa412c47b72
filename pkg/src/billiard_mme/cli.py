"""Command-line front end.

Every subcommand prints its report to stdout.  With ``--out`` (or the
BILLIARD_MME_OUT environment variable) the report and any CSV series are also
written to files, each first as ``<name>.partial`` and renamed once complete,
together with a run manifest carrying input and output digests.
"""
import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import time
import warnings
from importlib import resources

import numpy as np

from . import __version__, _accel, defaults
from .errors import NumericalBudgetError, ParseError, ValidationError

OUT_ENV = "BILLIARD_MME_OUT"
EXIT_OK, EXIT_VALIDATION, EXIT_BUDGET = 0, 2, 3
COMMANDS = ("table-check", "map-test", "leaves", "entropy", "sparse", "complexity",
            "renewal", "operator", "correlate", "clt", "tiers")


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become the strings 'inf', '-inf', 'nan'."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj):
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def load_schema(name):
    text = resources.files("billiard_mme").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate_json(doc, name):
    import jsonschema
    jsonschema.validate(doc, load_schema(name))


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def sha256(data):
    return hashlib.sha256(data.encode() if isinstance(data, str) else data).hexdigest()


def write_atomic(path, text):
    """Write to ``path.partial`` and rename, so an interrupted run leaves only flagged files."""
    tmp = path + ".partial"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# helpers for the subcommands
# ---------------------------------------------------------------------------


def _floats(text, name):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"--{name} expects comma-separated numbers, got {text!r}") from None


def _ints(text, name):
    vals = _floats(text, name)
    if any(v != int(v) for v in vals):
        raise ValidationError(f"--{name} expects integers, got {text!r}")
    return [int(v) for v in vals]


def _table(args):
    from .table import REFERENCE_TABLE, load_table
    return load_table(args.table) if args.table else REFERENCE_TABLE


def _billiard(args):
    from .billiard import Billiard
    return Billiard(_table(args))


def _spec(args):
    from .renewal import explicit_spec, load_spec, parametric_spec
    given = [x is not None for x in (args.r, args.spec, args.alpha)]
    if sum(given) != 1:
        raise ValidationError("give exactly one of --r, --spec, --alpha")
    if args.r is not None:
        return explicit_spec(_floats(args.r, "r"))
    if args.spec is not None:
        return load_spec(args.spec)
    return parametric_spec(args.lam, args.alpha, args.N)


def _measure(args):
    from .renewal import build_measure
    return build_measure(_spec(args))


def _observable(args, m):
    from . import stats
    kind = args.observable
    if kind == "indicator":
        obs = stats.node_indicator(1)
    elif kind == "labels":
        if not m.spec.integral or m.spec.r[0] < 3:
            raise ValidationError("--observable labels needs an integral spec with r_1 >= 3")
        obs = stats.return_labels([1.0, math.sqrt(2.0), -(1.0 + math.sqrt(2.0))])
    elif kind == "pm1":
        if not m.spec.integral or m.spec.r[0] < 2:
            raise ValidationError("--observable pm1 needs an integral spec with r_1 >= 2")
        obs = stats.return_labels([1.0, -1.0])
    elif kind == "balanced":
        obs = stats.base_balanced(m)
    else:
        raise ValidationError(f"unknown observable {kind!r}")
    return obs.centered_for(m)


def _seeds(args):
    return [args.seed]


# ---------------------------------------------------------------------------
# subcommands: each returns (result dict, {name: (header, rows)})
# ---------------------------------------------------------------------------


def cmd_table_check(args):
    from .table import validate_table
    derived = validate_table(_table(args))
    d = derived.as_dict()
    rows = [(k, v) for k, v in d.items() if isinstance(v, (int, float, bool))]
    return d, {"constants": (("name", "value"), rows)}


def cmd_map_test(args):
    from .billiard import map_checks
    res = map_checks(_billiard(args), n_points=args.points, seed=args.seed)
    return res, {"checks": (("check", "value"), sorted(res.items()))}


def cmd_leaves(args):
    from . import curves
    b = _billiard(args)
    seeds = curves.default_seeds(b, args.seeds)
    per_seed, rows = [], []
    for sd in seeds:
        counts, lengths = curves.count_leaves(b, sd, args.n, density=args.density)
        per_seed.append({"curve_id": sd.curve_id, "scatterer": sd.scatterer,
                         "counts": counts, "lengths": lengths})
        rows.extend((sd.curve_id, n, int(c), float(L)) for n, (c, L) in
                    enumerate(zip(counts, lengths)))
    series = {"counts": (("curve_id", "n", "leaf_count", "total_length"), rows)}
    if args.atlas:
        ls = curves.evolve(b, seeds[0], args.atlas_n, density=args.density)
        atlas = []
        ptr = ls.leaf_ptr
        for k in range(len(ls)):
            a, e = ptr[k], ptr[k + 1] - 1
            atlas.append((ls.n, k, int(ls.parent[k]), int(ls.disk[a]), float(ls.r[a]),
                          float(ls.phi[a]), float(ls.r[e]), float(ls.phi[e]), float(ls.length[k])))
        series["atlas"] = (("generation", "leaf_id", "parent_id", "scatterer", "r_start",
                            "phi_start", "r_end", "phi_end", "length"), atlas)
    return {"n": args.n, "density": args.density, "seeds": per_seed}, series


def cmd_entropy(args):
    from . import curves, entropy
    b = _billiard(args)
    window = tuple(_ints(args.window, "window")) if args.window else None
    est = entropy.estimate_h(b, curves.default_seeds(b, args.seeds), args.n, window=window,
                             density=args.density)
    res = est.to_dict()
    if args.itinerary_n:
        counts, slope = entropy.itinerary_growth(b, args.itinerary_n)
        res["itinerary_proxy"] = {"counts": counts, "slope": slope, "lower_bound": True}
    rows = [(k, n, int(c), math.log(c)) for k, cs in enumerate(est.counts)
            for n, c in enumerate(cs)]
    return res, {"log_counts": (("curve_id", "n", "leaf_count", "log_count"), rows)}


def cmd_sparse(args):
    from . import entropy
    b = _billiard(args)
    if args.phi0 is not None:
        est = entropy.estimate_s0(b, args.phi0, args.n0, args.points, args.orbit_len,
                                  args.seed, h_hat=args.h)
        return est.to_dict(), {}
    res = entropy.suggest_sparse_params(args.k_bound, args.eps0, b, n_points=args.points,
                                        orbit_len=args.orbit_len, seed=args.seed)
    if args.h is not None:
        s0 = res["s0_hat"]
        res["margins"] = {f"log{k}": args.h - s0 * math.log(k) for k in (2, 4, 8)}
    rows = [(h["phi0"], h["n0"], h["s0_hat"]) for h in res["history"]]
    return res, {"ladder": (("phi0", "n0", "s0_hat"), rows)}


def cmd_complexity(args):
    from . import entropy
    b = _billiard(args)
    prof = entropy.complexity_profile(b, args.n, args.samples, args.radius)
    env = entropy.linear_envelope([p.k_n_hat for p in prof])
    res = {"profile": [p.to_dict() for p in prof], "envelope": env}
    if args.check_resolution:
        fine = entropy.complexity_profile(b, args.n, 2 * args.samples, args.radius)
        res["resolution_changed"] = [p.n for p, q in zip(prof, fine) if p.k_n_hat != q.k_n_hat]
    rows = [(p.n, p.k_n_hat, p.curve_count) for p in prof]
    return res, {"k_n": (("n", "k_n_hat", "curve_count"), rows)}


def cmd_renewal(args):
    from .renewal import entropy_closed_form
    m = _measure(args)
    res = m.to_dict(max_terms=args.terms)
    res["lambda_residual"] = m.spec.residual()
    if args.report:
        total, log_lam = entropy_closed_form(m)
        res["entropy_sum"] = total
        res["entropy_gap"] = abs(total - log_lam)
    rows = [(n, w, p) for n, (w, p) in enumerate(zip(res["w"], res["p"]), 1)]
    return res, {"weights": (("n", "w_n", "p_n"), rows)}


def cmd_operator(args):
    from . import renewal_operator as op
    spec = _spec(args)
    if spec.r is None:
        raise ValidationError("operator needs finite weights r_n")
    r = spec.r.tolist()
    seq = op.count_sequence(r, args.n)
    scaled = seq.scaled(spec.lam)
    h = args.h if args.h is not None else spec.log_lam
    verdict = op.verify_prop_works(r, h, args.n)
    col = op.critical_column(r, spec.log_lam) * args.scale
    x0 = np.zeros(len(r))
    x0[0] = 1.0
    probe = op.dichotomy_probe(col, x0, args.steps)
    res = {"lambda": spec.lam, "exact": seq.exact, "a": [int(a) if seq.exact else a
                                                         for a in seq.a],
           "scaled": scaled, "verdict": verdict,
           "dichotomy": {"scale": args.scale, "verdict": probe["verdict"],
                         "norms": probe["norms"], "bookkeeping_error": probe["bookkeeping_error"]}}
    rows = [(n, str(a), float(s)) for n, (a, s) in enumerate(zip(seq.a, scaled))]
    return res, {"counts": (("n", "a_n", "a_n_lambda_pow_minus_n"), rows)}


def cmd_correlate(args):
    from . import stats
    m = _measure(args)
    obs = _observable(args, m)
    lags = range(0, args.max_lag + 1)
    series = stats.estimate_correlations(m, obs, obs, lags, args.steps, args.seed)
    res = {"series": series.to_dict(), "observable": args.observable}
    if args.fit:
        lo, hi = _ints(args.fit, "fit")
        res["fit"] = stats.fit_decay_slope(series, lo, hi)
    return res, {"correlations": (("lag", "C", "se"), series.rows())}


def cmd_clt(args):
    from . import stats
    m = _measure(args)
    obs = _observable(args, m)
    rep = stats.clt_check(m, obs, args.n_block, args.replicates, args.seed,
                          gk_steps=args.steps, gk_cutoff=args.cutoff)
    res = rep.to_dict()
    res["observable"] = args.observable
    return res, {}


def cmd_tiers(args):
    from . import stats
    symbolic = {}
    if args.alpha_measured is not None:
        from .renewal import build_measure, parametric_spec
        m = build_measure(parametric_spec(args.lam, args.alpha_measured))
        obs = stats.node_indicator(1).centered_for(m)
        series = stats.estimate_correlations(m, obs, obs, range(0, 65), args.steps, args.seed)
        symbolic[args.alpha_measured] = stats.fit_decay_slope(series)
    complexity = None
    if args.k_n:
        from .entropy import linear_envelope
        complexity = linear_envelope(_ints(args.k_n, "k-n"))
    rep = stats.tier_report(args.h, args.s0, complexity, symbolic, h_prime=args.h_prime)
    rows = [(r["claim"], r["holds"]) for r in rep.rows]
    return rep.to_dict(), {"tiers": (("claim", "holds"), rows)}


HANDLERS = {
    "table-check": cmd_table_check, "map-test": cmd_map_test, "leaves": cmd_leaves,
    "entropy": cmd_entropy, "sparse": cmd_sparse, "complexity": cmd_complexity,
    "renewal": cmd_renewal, "operator": cmd_operator, "correlate": cmd_correlate,
    "clt": cmd_clt, "tiers": cmd_tiers,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so main() owns the exit codes."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}", self.format_usage())


class _UsageError(Exception):
    def __init__(self, message, usage):
        super().__init__(message)
        self.usage = usage


def _add_table(p):
    p.add_argument("--table", help="table file (default: built-in reference table)")


def _add_spec(p):
    g = p.add_argument_group("renewal spec (exactly one)")
    g.add_argument("--r", help="explicit weights r_1,r_2,...")
    g.add_argument("--spec", help="renewal spec file")
    g.add_argument("--alpha", type=float, help="parametric tail exponent")
    g.add_argument("--lam", type=float, default=math.e, help="parametric lambda (default e)")
    g.add_argument("--N", type=int, help="parametric truncation (default: from the tail)")


def _add_observable(p, default):
    p.add_argument("--observable", default=default,
                   choices=("indicator", "labels", "pm1", "balanced"),
                   help="centred cylinder observable")


GLOBAL_DEFAULTS = {"seed": 0, "out": None, "format": "json", "threads": 1}


def _add_globals(p, default):
    # registered on the main parser and on every subparser, so the flags may
    # appear before or after the subcommand; subparsers must not overwrite
    # values given earlier, hence SUPPRESS there
    d = (lambda k: GLOBAL_DEFAULTS[k]) if default else (lambda k: argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=d("seed"), help="master RNG seed (default 0)")
    p.add_argument("--out", default=d("out"),
                   help=f"output directory (default ${OUT_ENV}; none: stdout only)")
    p.add_argument("--format", choices=("json", "csv"), default=d("format"),
                   help="stdout format; files are always written in both")
    p.add_argument("--threads", type=int, default=d("threads"),
                   help="worker cap; results do not depend on it")


def build_parser():
    p = _Parser(prog="billiard-mme",
                description="Dispersing billiards and renewal-shift measures of maximal entropy.")
    _add_globals(p, True)
    common = argparse.ArgumentParser(add_help=False)
    _add_globals(common, False)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    _orig_add = sub.add_parser
    sub.add_parser = lambda name, **kw: _orig_add(name, parents=[common], **kw)

    s = sub.add_parser("table-check", help="validate a table and print derived constants")
    _add_table(s)

    s = sub.add_parser("map-test", help="reversibility, Jacobian, cone and expansion checks")
    _add_table(s)
    s.add_argument("--points", type=int, default=10_000)

    s = sub.add_parser("leaves", help="leaf counts #G_n(W) for the default seed curves")
    _add_table(s)
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--density", type=float, default=1.0)
    s.add_argument("--atlas", action="store_true", help="also export the leaf atlas of seed 0")
    s.add_argument("--atlas-n", type=int, default=4)

    s = sub.add_parser("entropy", help="topological entropy estimate from leaf counts")
    _add_table(s)
    s.add_argument("--n", type=int, default=12)
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--density", type=float, default=1.0)
    s.add_argument("--window", help="fit window lo,hi (default: upper half)")
    s.add_argument("--itinerary-n", type=int, default=0,
                   help="also count distinct itineraries up to this depth")

    s = sub.add_parser("sparse", help="sparse-recurrence estimate or (n0, phi0) suggestion")
    _add_table(s)
    s.add_argument("--phi0", type=float)
    s.add_argument("--n0", type=int, default=31)
    s.add_argument("--k-bound", type=float, default=3.0)
    s.add_argument("--eps0", type=float, default=0.1)
    s.add_argument("--points", type=int, default=2000)
    s.add_argument("--orbit-len", type=int, default=200)
    s.add_argument("--h", type=float, help="entropy value for the margins")

    s = sub.add_parser("complexity", help="singularity multiplicity k_n for n = 1..N")
    _add_table(s)
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--samples", type=int, default=4096)
    s.add_argument("--radius", type=float, default=defaults.CLUSTERING_RADIUS)
    s.add_argument("--check-resolution", action="store_true")

    s = sub.add_parser("renewal", help="explicit max-entropy measure of a renewal spec")
    _add_spec(s)
    s.add_argument("--report", action="store_true", help="include the entropy check")
    s.add_argument("--terms", type=int, default=64, help="array entries to print")

    s = sub.add_parser("operator", help="counts a_n, renewal limit and the l1 dichotomy")
    _add_spec(s)
    s.add_argument("--n", type=int, default=30)
    s.add_argument("--h", type=float, help="candidate entropy (default log lambda)")
    s.add_argument("--scale", type=float, default=1.0, help="factor on the critical column")
    s.add_argument("--steps", type=int, default=200)

    s = sub.add_parser("correlate", help="correlation decay C(n) on the renewal shift")
    _add_spec(s)
    _add_observable(s, "indicator")
    s.add_argument("--steps", type=int, default=defaults.SAMPLING_STEPS)
    s.add_argument("--max-lag", type=int, default=64)
    s.add_argument("--fit", help="slope fit window lo,hi")

    s = sub.add_parser("clt", help="KS distance of normalised block sums")
    _add_spec(s)
    _add_observable(s, "balanced")
    s.add_argument("--n-block", type=int, default=1000)
    s.add_argument("--replicates", type=int, default=10_000)
    s.add_argument("--steps", type=int, default=defaults.SAMPLING_STEPS,
                   help="path length for the Green-Kubo variance")
    s.add_argument("--cutoff", type=int, default=defaults.GK_CUTOFF)

    s = sub.add_parser("tiers", help="tier report from (h, s0) and symbolic decay fits")
    s.add_argument("--h", type=float, required=True)
    s.add_argument("--s0", type=float, required=True)
    s.add_argument("--h-prime", type=float)
    s.add_argument("--k-n", help="measured k_1,...,k_N for the complexity evidence")
    s.add_argument("--alpha-measured", type=float,
                   help="measure the decay slope on the parametric spec with this alpha")
    s.add_argument("--lam", type=float, default=math.e)
    s.add_argument("--steps", type=int, default=defaults.SAMPLING_STEPS)
    return p


# ---------------------------------------------------------------------------
# manifest and main
# ---------------------------------------------------------------------------


def versions():
    import scipy
    out = {"artifact": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
           "python": platform.python_version(), "backend": _accel.backend_name()}
    try:
        import numba
        out["numba"] = numba.__version__
    except ImportError:  # pragma: no cover
        pass
    return out


def _config_digest(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "format", "threads")}
    return sha256(json.dumps(to_jsonable(cfg), sort_keys=True))


def _input_digests(args):
    out = {}
    for key in ("table", "spec"):
        path = getattr(args, key, None)
        if path:
            with open(path, "rb") as fh:
                out[key] = sha256(fh.read())
    return out


def run(args, argv):
    t0 = time.perf_counter()
    if args.threads < 1:
        raise ValidationError("--threads must be >= 1")
    if _accel.USE_NUMBA:
        import numba
        with warnings.catch_warnings():
            # numba reports an old TBB on import of its threading layer; the
            # kernels do not use it
            warnings.simplefilter("ignore")
            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    result, series = HANDLERS[args.command](args)
    doc = to_jsonable({"schema_version": 1, "command": args.command, "seed": args.seed,
                       "result": result})
    validate_json(doc, "report")
    report = dumps(doc)
    csvs = {name: csv_text(h, rows) for name, (h, rows) in series.items()}
    if args.format == "json":
        sys.stdout.write(report)
    else:
        first = next(iter(csvs.values()), None)
        sys.stdout.write(first if first is not None else csv_text(
            ("key", "value"), [(k, json.dumps(v)) for k, v in doc["result"].items()]))
    out_dir = args.out or os.environ.get(OUT_ENV)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        stem = args.command.replace("-", "_")
        files = {f"{stem}.json": report}
        files.update({f"{stem}_{name}.csv": text for name, text in csvs.items()})
        outputs = []
        for name, text in files.items():
            write_atomic(os.path.join(out_dir, name), text)
            outputs.append({"path": name, "sha256": sha256(text)})
        manifest = {"schema_version": 1, "command": args.command, "argv": list(argv),
                    "config_digest": _config_digest(args), "input_digests": _input_digests(args),
                    "seeds": _seeds(args), "versions": versions(),
                    "wall_time": time.perf_counter() - t0, "outputs": outputs}
        validate_json(manifest, "manifest")
        write_atomic(os.path.join(out_dir, f"{stem}.manifest.json"), dumps(manifest))
    return EXIT_OK


def _grammar_for(args):
    from .renewal import SPEC_GRAMMAR
    from .table import TABLE_GRAMMAR
    text = SPEC_GRAMMAR if getattr(args, "spec", None) else TABLE_GRAMMAR
    return text if text.endswith("\n") else text + "\n"


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_help(sys.stderr)
        return EXIT_VALIDATION
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        sys.stderr.write(exc.usage + str(exc) + "\n")
        return EXIT_VALIDATION
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_VALIDATION
    try:
        return run(args, argv)
    except ParseError as exc:
        grammar = _grammar_for(args)
        extra = "" if grammar.strip() in str(exc) else "\n" + grammar
        sys.stderr.write(f"error: {exc}\n{extra}")
        return EXIT_VALIDATION
    except ValidationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except NumericalBudgetError as exc:
        sys.stderr.write(f"numerical budget exceeded: {exc}\n")
        return EXIT_BUDGET


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
