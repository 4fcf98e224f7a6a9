"""Command-line entry point ``netabs``.

Exit codes: 0 when every check passes, 2 on a certification failure,
1 on usage errors (bad arguments, unreadable or invalid scenario files).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import casestudy as cs
from .errors import ConditionsNotCertified, NetAbsError

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _emit(obj, out):
    text = json.dumps(obj, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _load(path):
    try:
        return cs.Scenario.load(path)
    except OSError as exc:
        raise _UsageError(f"cannot read scenario: {exc}") from exc


def _cmd_certify(args):
    scen = _load(args.scenario)
    systems, results, _ = cs.synthesize(scen)
    reports = cs.certify(scen, systems, results)
    ok = all(r.passed for r in reports)
    _emit({"passed": ok, "subsystems": [r.to_dict() for r in reports]}, args.out)
    return EXIT_OK if ok else EXIT_FAILED


def _cmd_synthesize(args):
    scen = _load(args.scenario)
    _, results, _ = cs.synthesize(scen)
    _emit({"abstractions": [r.to_dict() for r in results]}, args.out)
    return EXIT_OK


def _cmd_compose(args):
    scen = _load(args.scenario)
    _, comp = cs.compose(scen)
    _emit(comp.to_dict(), args.out)
    return EXIT_OK if comp.passed else EXIT_FAILED


def _report_run(art, outdir):
    s = art.summary
    print(f"passed: {s['passed']}  max error: {s['max_error']:.3e}  "
          f"max bound: {s['max_bound']:.3e}  violations: {s['bound_violations']}")
    if outdir:
        print(f"artifacts written to {outdir}")
    return EXIT_OK if art.passed else EXIT_FAILED


def _cmd_simulate(args):
    scen = _load(args.scenario)
    return _report_run(cs.run_case_study(scen, args.out), args.out)


def _cmd_casestudy(args):
    try:
        partition = [int(k) for k in args.partition.split(",")] if args.partition else None
    except ValueError as exc:
        raise _UsageError(f"bad partition {args.partition!r}") from exc
    if partition is None:
        partition = [args.n // 3] * 3 if args.n % 3 == 0 else [args.n]
    sim = {"T": args.T, "dt": args.dt, "seed": args.seed}
    if args.V0 > 0:
        sim.update(x0_policy="perturbed", V0=args.V0)
    scen = cs.Scenario(coupling={"type": "complete", "n": args.n}, partition=partition,
                       lam=args.lam, simulation=sim, verification={"samples": args.samples, "seed": args.seed})
    return _report_run(cs.run_case_study(scen, args.out), args.out)


def _cmd_smallgain(args):
    _emit(cs.small_gain_compare(args.n, args.lam), None)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="netabs", description="Dissipativity-based abstractions of control networks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn, helptext in [("certify", _cmd_certify, "check every subsystem certificate"),
                               ("synthesize", _cmd_synthesize, "construct the abstractions"),
                               ("compose", _cmd_compose, "check the interconnection conditions")]:
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("scenario")
        sp.add_argument("--out", help="write JSON here instead of stdout")
        sp.set_defaults(func=fn)
    sp = sub.add_parser("simulate", help="full run with artifacts")
    sp.add_argument("scenario")
    sp.add_argument("--out", help="artifact directory")
    sp.set_defaults(func=_cmd_simulate)
    sp = sub.add_parser("casestudy", help="complete-graph aggregation study")
    sp.add_argument("--n", type=int, default=9)
    sp.add_argument("--partition", default="3,3,3")
    sp.add_argument("--lambda", dest="lam", type=float, default=2.0)
    sp.add_argument("--T", type=float, default=10.0)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--V0", type=float, default=0.0, help="initial storage value (0: matched start)")
    sp.add_argument("--samples", type=int, default=10_000)
    sp.add_argument("--out", help="artifact directory")
    sp.set_defaults(func=_cmd_casestudy)
    sp = sub.add_parser("smallgain", help="small-gain vs dissipativity on a complete graph")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    sp.set_defaults(func=_cmd_smallgain)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"netabs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConditionsNotCertified as exc:
        print(f"netabs: certification failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except NetAbsError as exc:
        if isinstance(exc, ValueError):
            print(f"netabs: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"netabs: certification failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except ValueError as exc:
        print(f"netabs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
