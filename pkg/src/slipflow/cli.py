"""Command-line front end: ``slipflow {solve,verify,sweep,inequalities,carrier-check}``.

Exit codes: 0 when every requested verdict passes (Inconclusive allowed
unless the scenario forbids it), 1 on any Fail, 2 on invalid config or a
solver error.
"""

from __future__ import annotations

import argparse
import os
import sys

COMMANDS = ("solve", "verify", "sweep", "inequalities", "carrier-check")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser():
    ap = argparse.ArgumentParser(prog="slipflow", description="Channel flow with Navier slip: solve and verify.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="scenario JSON file")
    ap.add_argument("--out", default=None, help="output directory (default runs/<name>)")
    ap.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    ap.add_argument("--threads", type=int, default=1, help="BLAS threads (results are identical for any value)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    # must be set before numpy loads its BLAS
    for var in _THREAD_VARS:
        os.environ.setdefault(var, str(args.threads))

    from .errors import ConfigInvalid, SlipflowError
    from . import scenario

    try:
        cfg = scenario.load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigInvalid("seed", "must be >= 0")
            cfg["seed"] = args.seed
        out = args.out or scenario.default_out(cfg)
        if args.command == "sweep":
            code, report = scenario.sweep(cfg, out)
        else:
            code, report = scenario.run(cfg, out, args.command)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SlipflowError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for name, verdict in report["verdicts"].items():
        print(f"{name}: {verdict}")
    print(f"report: {os.path.join(out, 'report.json')}")
    return code


if __name__ == "__main__":
    sys.exit(main())
