"""Command line entry point: ``fenepoly simulate|selftest|check-energy``."""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from .config import (Config, ParseError, ValidationError, config_to_dict, load_config, parse_config,
                     serialize_config)
from .output import DIAG_HEADER, read_diagnostics, read_field_dump, write_diagnostics, write_field_dump
from .scheme import PicardDiverged

__all__ = ["Config", "ParseError", "ValidationError", "parse_config", "serialize_config", "config_to_dict",
           "load_config", "write_diagnostics", "read_diagnostics", "write_field_dump", "read_field_dump",
           "DIAG_HEADER", "main"]


def _cmd_simulate(args) -> int:
    from .runner import run_config
    try:
        config = load_config(args.config)
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    threshold = config.output.pass_threshold if args.threshold is None else args.threshold

    def progress(state, rep):
        if args.verbose:
            print(f"step {state.step:6d} t={state.t:.6g} total={rep.total:.12g} "
                  f"residual={rep.residual:.3e} picard={state.picard_iters}")

    try:
        run_dir = run_config(config, args.out, progress)
    except PicardDiverged as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 1
    summary = json.loads((Path(run_dir) / "summary.json").read_text())
    print(f"{run_dir}: {summary['steps']} steps, pass fraction {summary['pass_fraction']:.4f}")
    return 0 if summary["completed"] and summary["pass_fraction"] >= threshold else 1


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest
    results = run_selftest(seed=args.seed, quick=args.quick)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


def _cmd_check_energy(args) -> int:
    from .runner import check_energy
    rep = check_energy(args.run_dir, rtol=args.rtol)
    print(f"checked {rep['steps_checked']} steps, {len(rep['mismatches'])} mismatches, "
          f"pass fraction {rep['pass_fraction']:.4f}")
    for m in rep["mismatches"][:20]:
        print(f"  step {m['step']} {m['term']}: recomputed {m['recomputed']!r} recorded {m['recorded']!r}")
    return 0 if rep["ok"] and rep["pass_fraction"] >= args.threshold else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fenepoly", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run a simulation from a YAML config")
    s.add_argument("config")
    s.add_argument("--out", default=None, help="run directory (default: output.prefix)")
    s.add_argument("--threshold", type=float, default=None, help="required fraction of passing energy steps")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=_cmd_simulate)
    t = sub.add_parser("selftest", help="run the invariant suite")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--quick", action="store_true")
    t.set_defaults(func=_cmd_selftest)
    c = sub.add_parser("check-energy", help="re-verify energy reports from field dumps")
    c.add_argument("run_dir")
    c.add_argument("--rtol", type=float, default=1e-9)
    c.add_argument("--threshold", type=float, default=0.99)
    c.set_defaults(func=_cmd_check_energy)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
