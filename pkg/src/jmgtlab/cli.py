"""Command line interface: ``jmgtlab {simulate,extract,invert,verify,report}``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import JMGTError, VerificationFailure

log = logging.getLogger("jmgtlab")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="JSON config file or bundled name (default: built-in defaults)")
    common.add_argument("--out", metavar="DIR", help="output directory for CSV/JSON artifacts")
    common.add_argument("--seed", type=int, metavar="N", help="override the config seed")
    common.add_argument("--modes", type=int, metavar="M", help="override the number of retained modes")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")

    p = argparse.ArgumentParser(prog="jmgtlab", description="Switched JMGT simulation and "
                                "nonlinearity-parameter tomography toolkit.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="forward run; writes trajectory.csv")
    sub.add_parser("extract", parents=[common], help="residues of the observed trace after switch-off")
    sub.add_parser("invert", parents=[common], help="reconstruct the configured perturbation")
    v = sub.add_parser("verify", parents=[common], help="run invariant suites and acceptance criteria")
    v.add_argument("suite", nargs="?", default="all",
                   choices=["spectral", "solver", "residue", "inversion", "all"])
    r = sub.add_parser("report", parents=[common], help="run all stages and write report.json")
    r.add_argument("--suite", default=None,
                   choices=["spectral", "solver", "residue", "inversion", "all"],
                   help="also attach verification results for this suite")
    return p


def _emit(args, payload):
    if not args.quiet:
        print(json.dumps(payload, indent=1, default=_default))


def _default(o):
    from .pipeline import _json_default
    return _json_default(o)


def main(argv=None):
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except JMGTError as exc:
        print(f"jmgtlab {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


def _dispatch(args):
    from . import checks, pipeline

    if args.command == "verify":
        show = None if args.quiet else (lambda r: print(r.line(), flush=True))
        results = checks.verify(args.suite, progress=show)
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / f"verify_{args.suite}.json").write_text(
                json.dumps([r.to_dict() for r in results], indent=1))
        failed = [r.key for r in results if not r.passed]
        if failed:
            raise VerificationFailure(f"failed checks: {', '.join(failed)}")
        return 0

    cfg = pipeline.load_config(args.config, seed=args.seed, modes=args.modes)
    out = args.out
    if args.command == "report":
        rep = pipeline.run(cfg, out=out)
        if args.suite:
            rep.attach_checks(checks.verify(args.suite))
            if out:
                rep.save(Path(out) / "report.json")
        _emit(args, rep.to_dict())
        failed = rep.failed
        if failed:
            raise VerificationFailure(f"failed checks: {', '.join(failed)}")
        return 0

    setup = pipeline.build(cfg)
    if args.command == "simulate":
        _, summary = pipeline.simulate_stage(setup, out)
    elif args.command == "extract":
        _, _, summary = pipeline.extract_stage(setup, None, out)
    else:
        _, summary = pipeline.invert_stage(setup, out)
    _emit(args, summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
