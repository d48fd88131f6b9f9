"""Command-line interface: ``gaussojourn <group> <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys


from . import asymptotics as asy
from .berman import (
    BermanQuery, BermanTable, DomainError, DriftSpec, build_berman_table, check_scaling_identity,
    estimate_berman_curve,
)
from .harness import ConfigError, estimate_ruin_crude, estimate_ruin_is, load_config, run_config, write_json, write_rows_csv
from .kernels import KernelSpec, ParameterError, validate_s1, validate_s2, validate_tail
from .sampler import GridSpec, draw_paths, draw_risk_x
from .sojourn import LEBESGUE, WeightSpec

log = logging.getLogger("gaussojourn")


def parse_kernel(text):
    """A kernel from a JSON file, an inline JSON object, or ``FAMILY:k=v,k=v``."""
    if os.path.exists(text):
        with open(text) as fh:
            return KernelSpec.from_dict(json.load(fh))
    if text.lstrip().startswith("{"):
        return KernelSpec.from_dict(json.loads(text))
    fam, _, rest = text.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        k, _, v = item.partition("=")
        params[k.strip()] = float(v)
    return KernelSpec(fam.strip(), params)


def floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def parse_drift(text):
    """``coef:exponent`` terms separated by commas; empty or ``0`` is the zero drift."""
    if text in ("", "0", "zero"):
        return DriftSpec.zero()
    terms = []
    for item in text.split(","):
        c, _, e = item.partition(":")
        terms.append((float(c), float(e)))
    return DriftSpec(tuple(terms))


def _out(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _emit(args, name, obj):
    path = _out(args, name)
    write_json(path, obj)
    print(path)


# ---------------------------------------------------------------------------

def cmd_kernels_validate(args):
    spec = parse_kernel(args.spec)
    reports = [validate_s1(spec, tol=args.s1_tol), validate_s2(spec, tol=args.s2_tol), validate_tail(spec, tol=args.s2_tol)]
    for r in reports:
        print(r.summary())
    _emit(args, "validation.json", {"spec": spec.to_dict(), "reports": [r.to_dict() for r in reports]})
    return 0 if all(r.passed for r in reports) else 1


def cmd_sample(args):
    spec = parse_kernel(args.spec)
    if args.risk:
        batch = draw_risk_x(spec, GridSpec(0.0, 1.0, args.n_points), args.n_paths, args.seed, args.threads)
    else:
        batch = draw_paths(spec, GridSpec(0.0, args.t_end, args.n_points), args.n_paths, args.seed, args.threads)
    batch.to_binary(_out(args, "paths.bin"))
    if batch.n_paths <= 1000:
        batch.to_csv(_out(args, "paths.csv"))
    _emit(args, "sample.json", batch.header())
    return 0


def _query(args, x):
    zeta = None if args.zeta in ("zero", "0", "ZERO") else parse_kernel(args.zeta)
    weight = LEBESGUE if args.weight_exponent is None else WeightSpec.power(args.weight_exponent)
    T = None if args.T in ("inf", "infinity") else float(args.T)
    return BermanQuery(zeta, parse_drift(args.drift), x=x, T=T, weight=weight, delta=args.delta,
                       n_paths=args.n_paths, seed=args.seed, normalized=not args.raw, method=args.method,
                       extrapolate=args.extrapolate, threads=args.threads)


def cmd_berman_estimate(args):
    xs = floats(args.x)
    ests = estimate_berman_curve(_query(args, xs[0]), xs)
    for e in ests:
        print(f"x={e.x:g}  value={e.value:.6g}  se={e.std_error:.2g}")
    _emit(args, "berman_estimate.json", {"estimates": [e.to_dict() for e in ests]})
    return 0


def cmd_berman_table(args):
    path = _out(args, args.name)
    table = build_berman_table(floats(args.kappas), floats(args.x), T=args.T, delta=args.delta,
                               n_paths=args.n_paths, seed=args.seed, extrapolate=not args.no_extrapolate,
                               threads=args.threads, path=path)
    for w in table.metadata["warnings"]:
        print("warning:", w, file=sys.stderr)
    print(path)
    return 0


def cmd_berman_scaling(args):
    rep = check_scaling_identity(parse_kernel(args.spec), floats(args.x), T=args.T, delta=args.delta,
                                 n_paths=args.n_paths, seed=args.seed, threads=args.threads)
    for r in rep.rows:
        print(f"x={r.x:g}  ratio={r.ratio:.4f} +- {r.ratio_se:.4f}  z={r.z:+.2f}  {'ok' if r.passed else 'FAIL'}")
    _emit(args, "scaling_check.json", rep.to_dict())
    return 0 if rep.passed else 1


def _regime_input(args):
    return asy.RegimeInput.from_kernel(parse_kernel(args.spec), d=args.d, gamma=args.gamma, L=args.L,
                                       epsilon=args.epsilon, a=args.a, b=args.b)


def cmd_asym_classify(args):
    inp = _regime_input(args)
    regs = asy.classify(inp)
    for r in regs:
        print(r.to_json())
    _emit(args, "regimes.json", {"input": inp.to_dict(), "regimes": [r.to_dict() for r in regs]})
    return 0


def cmd_asym_constant(args):
    table = BermanTable.load(args.table) if args.table else None
    budget = {"delta": args.delta, "n_paths": args.n_paths, "seed": args.seed, "threads": args.threads}
    if args.example:
        res = asy.example_constant(args.example, L=args.L, d=args.d, alpha=args.alpha, kappa=args.kappa,
                                   a=args.weight_a, epsilon=args.epsilon, berman=table)
        out = {"example": res.example, "p": res.p, "lu_exponent": res.lu_exponent, "c": res.c,
               "theorem_c": res.theorem_c, "consistent": res.consistent, "notes": res.notes,
               "query": None if res.query is None else _query_dict(res.query)}
        if res.query is not None and args.estimate:
            q = res.query
            est = estimate_berman_curve(BermanQuery(q.zeta, q.drift, q.x, None, normalized=False, **budget), [q.x])[0]
            out["c"], out["c_error"] = est.value, est.std_error
        print(json.dumps(out, sort_keys=True))
        _emit(args, "constant.json", out)
        return 0
    if not args.spec:
        raise DomainError("give a kernel spec or --example")
    inp = _regime_input(args)
    regs = asy.classify(inp)
    out = []
    for r in regs:
        if r.case is asy.Case.UNCOVERED:
            out.append(r.to_dict())
            continue
        try:
            out.append(asy.constant(inp, r, table, **budget).to_dict())
        except DomainError as e:
            d = r.to_dict()
            d["note"] = str(e)
            out.append(d)
    for d in out:
        print(json.dumps({k: d[k] for k in ("case", "p", "lu_exponent", "c", "c_error", "note") if d.get(k) != ""}, sort_keys=True))
    _emit(args, "constant.json", {"input": inp.to_dict(), "regimes": out})
    return 0


def _query_dict(q):
    return {"zeta": None if q.zeta is None else q.zeta.to_dict(), "drift": q.drift.to_dict(), "x": q.x}


def _ruin(args, fn):
    cfg = load_config(args.config, args.out_dir)
    cfg.seed = args.seed if args.seed_given else cfg.seed
    cfg.threads = args.threads
    rep = fn(cfg)
    for r in rep.rows:
        print(f"u={r.u:g}  L_u={r.L_u:.4g}  p={r.estimate:.4g}  [{r.ci_low:.4g}, {r.ci_high:.4g}]  hits={r.n_hits}")
    _emit(args, "report.json", rep.to_dict())
    write_rows_csv(_out(args, "estimates.csv"), rep.rows)
    write_json(_out(args, "runtime.json"), rep.runtime)
    return 0


def cmd_experiment_run(args):
    out = run_config(args.config, out_dir=args.out_dir if args.out_dir_given else None, threads=args.threads,
                     seed=args.seed if args.seed_given else None)
    print(out)
    return 0


# ---------------------------------------------------------------------------

class _Tracked(argparse.Action):
    def __call__(self, parser, ns, values, option_string=None):
        setattr(ns, self.dest, values)
        setattr(ns, self.dest + "_given", True)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, action=_Tracked)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out-dir", default=os.environ.get("GAUSSOJOURN_OUT_DIR", "."), action=_Tracked)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gaussojourn", description="Sojourn-time asymptotics for self-similar Gaussian processes")
    groups = p.add_subparsers(dest="group", required=True)

    g = groups.add_parser("kernels").add_subparsers(dest="cmd", required=True)
    c = g.add_parser("validate", parents=[common], help="check scaling and local-increment structure")
    c.add_argument("spec")
    c.add_argument("--s1-tol", type=float, default=1e-10)
    c.add_argument("--s2-tol", type=float, default=0.02)
    c.set_defaults(fn=cmd_kernels_validate)

    c = groups.add_parser("sample", parents=[common], help="draw paths on a uniform grid")
    c.add_argument("spec")
    c.add_argument("--n-points", type=int, default=257)
    c.add_argument("--t-end", type=float, default=1.0)
    c.add_argument("--n-paths", type=int, default=100)
    c.add_argument("--risk", action="store_true", help="sample X(t) = Y(1) - Y(t) on [0, 1]")
    c.set_defaults(fn=cmd_sample)

    g = groups.add_parser("berman").add_subparsers(dest="cmd", required=True)
    c = g.add_parser("estimate", parents=[common])
    c.add_argument("--zeta", default="FBM:kappa=1", help="kernel spec or 'zero'")
    c.add_argument("--drift", default="", help="terms coef:exponent, comma separated")
    c.add_argument("--x", default="0")
    c.add_argument("--T", default="50", help="horizon, or 'inf' for the half-line")
    c.add_argument("--delta", type=float, default=0.01)
    c.add_argument("--n-paths", type=int, default=10_000)
    c.add_argument("--method", choices=("tilted", "direct"), default="tilted")
    c.add_argument("--weight-exponent", type=float, default=None)
    c.add_argument("--raw", action="store_true", help="do not divide by T")
    c.add_argument("--extrapolate", action="store_true")
    c.set_defaults(fn=cmd_berman_estimate)
    c = g.add_parser("table", parents=[common])
    c.add_argument("--kappas", default="1,2")
    c.add_argument("--x", default="0,0.25,0.5,1,1.5,2,3,4")
    c.add_argument("--T", type=float, default=50.0)
    c.add_argument("--delta", type=float, default=0.02)
    c.add_argument("--n-paths", type=int, default=20_000)
    c.add_argument("--no-extrapolate", action="store_true")
    c.add_argument("--name", default="berman_table.csv")
    c.set_defaults(fn=cmd_berman_table)
    c = g.add_parser("scaling-check", parents=[common])
    c.add_argument("spec")
    c.add_argument("--x", default="0,0.5")
    c.add_argument("--T", type=float, default=25.0)
    c.add_argument("--delta", type=float, default=0.01)
    c.add_argument("--n-paths", type=int, default=10_000)
    c.set_defaults(fn=cmd_berman_scaling)

    g = groups.add_parser("asymptotics").add_subparsers(dest="cmd", required=True)
    for name, fn in (("classify", cmd_asym_classify), ("constant", cmd_asym_constant)):
        c = g.add_parser(name, parents=[common])
        c.add_argument("spec", nargs="?" if name == "constant" else None)
        c.add_argument("--d", type=float, default=0.0)
        c.add_argument("--gamma", type=float, default=None)
        c.add_argument("--L", type=float, default=0.0)
        c.add_argument("--epsilon", type=float, default=None)
        c.add_argument("--a", type=float, default=None, help="correlation scale (default 1/2)")
        c.add_argument("--b", type=float, default=None, help="variance-decay constant (default R/2)")
        c.set_defaults(fn=fn)
        if name == "constant":
            c.add_argument("--example", choices=("3.1", "3.2", "3.3", "3.4", "3.5", "3.6", "3.7"))
            c.add_argument("--alpha", type=float)
            c.add_argument("--kappa", type=float)
            c.add_argument("--weight-a", type=float, help="parameter a of the weighted fBm example")
            c.add_argument("--table", help="Berman table CSV for cases I and II")
            c.add_argument("--estimate", action="store_true", help="Monte Carlo for examples stated as Berman constants")
            c.add_argument("--delta", type=float, default=0.01)
            c.add_argument("--n-paths", type=int, default=10_000)

    g = groups.add_parser("ruin").add_subparsers(dest="cmd", required=True)
    for name, fn in (("crude", estimate_ruin_crude), ("is", estimate_ruin_is)):
        c = g.add_parser(name, parents=[common])
        c.add_argument("config")
        c.set_defaults(fn=lambda a, fn=fn: _ruin(a, fn))

    g = groups.add_parser("experiment").add_subparsers(dest="cmd", required=True)
    c = g.add_parser("run", parents=[common])
    c.add_argument("config")
    c.set_defaults(fn=cmd_experiment_run)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for flag in ("seed", "out_dir"):
        if not hasattr(args, flag + "_given"):
            setattr(args, flag + "_given", False)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ParameterError, ConfigError, DomainError, ValueError, FileNotFoundError) as e:
        print(f"gaussojourn: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
