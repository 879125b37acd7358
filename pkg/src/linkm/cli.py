"""
Command-line entry point.

    linkm lk      --preset borromean
    linkm m       --preset torus_2_2k(2) --budget 65536 --seed 7 --out m.json
    linkm suite   --level quick
    linkm trace   --field tubes.json --x0 1,0,0.02 --T 40 [--y0 ...] [--csv cesaro.csv]
    linkm ergodic --field tubes.json --triples 16 --budget 8192

Exit codes: 0 pass, 1 check failure, 2 usage or schema error, 3 non-convergence.
Reports are JSON objects with a ``body`` that is byte-identical for a fixed
seed and configuration and a separate ``timing`` section.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

import numpy as np

from . import __version__

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_UNCONVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def make_report(command: str, body: dict, timing: dict) -> dict:
    return {"body": {"tool": "linkm", "version": __version__, "command": command, **body},
            "timing": {"wall_time_s": timing.pop("wall", None), **timing,
                       "finished": time.strftime("%Y-%m-%dT%H:%M:%S")}}


# ---------------------------------------------------------------- inputs

def load_config(args):
    from .config import FULL, QUICK, Config

    base = {"quick": QUICK, "full": FULL}.get(getattr(args, "level", None) or "", Config())
    if getattr(args, "config", None):
        try:
            base = Config.load(args.config)
        except (OSError, ValueError, TypeError) as exc:
            raise UsageError(f"config {args.config}: {exc}") from None
    kw = {}
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    if getattr(args, "budget", None) is not None:
        if args.budget < 1024:
            raise UsageError("--budget must be at least 1024")
        kw["volume_budget"] = kw["pair_budget"] = args.budget
    return base.with_(**kw) if kw else base


def load_link(args):
    from .curves import CurveError, Link3, preset

    if bool(args.preset) == bool(args.link):
        raise UsageError("give exactly one of --preset and --link")
    try:
        if args.preset:
            return preset(args.preset)
        return Link3.load(args.link)
    except (CurveError, OSError) as exc:
        raise UsageError(str(exc)) from None


def load_field(args):
    from .fieldlines import FieldError, FieldSystem

    if not args.field:
        raise UsageError("--field is required")
    try:
        return FieldSystem.load(args.field)
    except (FieldError, OSError) as exc:
        raise UsageError(str(exc)) from None


def _vector(text: str, name: str):
    try:
        v = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise UsageError(f"{name} must be three comma-separated numbers") from None
    if v.shape != (3,):
        raise UsageError(f"{name} must be three comma-separated numbers")
    return v


# ---------------------------------------------------------------- commands

def cmd_lk(args):
    from .linking import linking_matrix

    link = load_link(args)
    cfg = load_config(args)
    t0 = time.perf_counter()
    lk = linking_matrix(link, tol=cfg.lk_tol, n_max=cfg.lk_max_nodes, crossing=True)
    agree = bool(np.array_equal(lk.lk, lk.crossing))
    body = {"link": link.name, "linking": lk.to_dict(),
            "checks": [{"name": "gauss and crossing-sign routes agree", "passed": agree}]}
    return make_report("lk", body, {"wall": time.perf_counter() - t0}), EXIT_OK if agree else EXIT_FAIL


def cmd_m(args):
    from .linking import linking_matrix
    from .terms import assemble_M

    link = load_link(args)
    cfg = load_config(args)
    t0 = time.perf_counter()
    lk = linking_matrix(link, tol=cfg.lk_tol, n_max=cfg.lk_max_nodes)
    br = assemble_M(link, cfg, cfg.seed)
    diag = {str(i): {"sum": v, "stderr": e} for i, (v, e) in br.diagonal_identity.items()}
    body = {"link": link.name, "config": cfg.to_dict(), "seed": cfg.seed, "linking": lk.to_dict(),
            "terms": br.to_dict(timings=False), "diagonal_identity": diag}
    code = EXIT_OK if br.M.converged else EXIT_UNCONVERGED
    return make_report("m", body, {"wall": time.perf_counter() - t0}), code


def cmd_suite(args):
    from . import suite

    cfg = load_config(args)
    level = args.level or "quick"
    t0 = time.perf_counter()
    checks, ctx = suite.run(level, cfg.seed, cfg=cfg if (args.config or args.budget) else None,
                            echo=lambda s: print(s, file=sys.stderr))
    passed = all(c.passed for c in checks)
    body = {"level": level, "seed": ctx.seed, "config": ctx.cfg.to_dict(),
            "checks": [c.to_dict() for c in checks],
            "summary": {"passed": sum(c.passed for c in checks), "failed": sum(not c.passed for c in checks)}}
    timing = {"wall": time.perf_counter() - t0, **ctx.timings,
              "timed_checks": {c.name: c.measured for c in checks if c.timed}}
    return make_report("suite", body, timing), EXIT_OK if passed else EXIT_FAIL


def write_csv(path, checkpoints, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "value"])
        for t, v in zip(checkpoints, values):
            w.writerow([repr(float(t)), repr(float(v))])


def cmd_trace(args):
    from .fieldlines import FieldError, asymptotic_linking, trace

    fs = load_field(args)
    x0 = _vector(args.x0, "--x0")
    t0 = time.perf_counter()
    try:
        if args.y0:
            ce = asymptotic_linking(fs, x0, _vector(args.y0, "--y0"), args.T, args.checkpoints, tol=args.tol)
            if args.csv:
                write_csv(args.csv, ce.checkpoints, ce.values)
            body = {"asymptotic_linking": ce.to_dict()}
        else:
            res = trace(fs, x0, args.T, args.tol, stop_at_closure=args.stop_at_closure)
            body = {"trace": {"tube": res.tube + 1, "closed": res.closed, "period": res.period,
                              "n_transits": res.n_transits,
                              "closure_error": res.closure_error if res.closed else None,
                              "stream_drift": res.drift, "n_points": len(res.times)}}
            if args.csv:
                with open(args.csv, "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["t", "x", "y", "z"])
                    for t, p in zip(res.times, res.points):
                        w.writerow([repr(float(t))] + [repr(float(c)) for c in p])
    except FieldError as exc:
        raise UsageError(str(exc)) from None
    return make_report("trace", body, {"wall": time.perf_counter() - t0}), EXIT_OK


def cmd_ergodic(args):
    from .fieldlines import FieldError, ReturnConditionError, ergodic_M

    fs = load_field(args)
    cfg = load_config(args)
    t0 = time.perf_counter()
    try:
        res = ergodic_M(fs, args.triples, cfg.seed, cfg, weighting=args.weighting)
    except ReturnConditionError as exc:
        body = {"error": str(exc), "seed": cfg.seed}
        return make_report("ergodic", body, {"wall": time.perf_counter() - t0}), EXIT_FAIL
    except FieldError as exc:
        raise UsageError(str(exc)) from None
    d = res.to_dict()
    d["estimate"].pop("wall_time", None)
    body = {"config": cfg.to_dict(), "seed": cfg.seed, "ergodic_M": d}
    return make_report("ergodic", body, {"wall": time.perf_counter() - t0}), EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linkm", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("--version", action="version", version=f"linkm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, link=True, budget=True):
        if link:
            sp.add_argument("--preset", help="named link, e.g. borromean or torus_2_2k(2)")
            sp.add_argument("--link", help="linkm-curve-v1 JSON file")
        if budget:
            sp.add_argument("--budget", type=int, help="samples per Monte Carlo term")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--level", choices=("quick", "full"))
        sp.add_argument("--out", help="write the report here instead of stdout")
        sp.add_argument("--body-only", action="store_true", help="print only the deterministic body")

    common(sub.add_parser("lk", help="pairwise linking matrix"), budget=False)
    common(sub.add_parser("m", help="the invariant M with its term breakdown"))
    common(sub.add_parser("suite", help="acceptance suite"), link=False)
    for name in ("trace", "ergodic"):
        sp = sub.add_parser(name, help="field lines" if name == "trace" else "ergodic M over line triples")
        common(sp, link=False)
        sp.add_argument("--field", help="linkm-field-v1 JSON file")
        sp.add_argument("--csv", help="CSV output (trace points, or Cesaro checkpoints T,value)")
        if name == "trace":
            sp.add_argument("--x0", required=True, help="start point x,y,z")
            sp.add_argument("--y0", help="second start point: estimate asymptotic linking")
            sp.add_argument("--T", type=float, required=True, help="time horizon")
            sp.add_argument("--tol", type=float, default=1e-11)
            sp.add_argument("--checkpoints", type=int, default=8)
            sp.add_argument("--stop-at-closure", action="store_true")
        else:
            sp.add_argument("--triples", type=int, default=16)
            sp.add_argument("--weighting", choices=("flux", "period"), default="flux")
    return p


COMMANDS = {"lk": cmd_lk, "m": cmd_m, "suite": cmd_suite, "trace": cmd_trace, "ergodic": cmd_ergodic}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report, code = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"linkm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = dumps(report["body"] if args.body_only else report)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
