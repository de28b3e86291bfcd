"""Command line entry point: ``expertcompare <subcommand>``.

Exit codes: 0 success, 2 config error, 3 io error, 4 check failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .comparison import TEST_IDS
from .crosscalib import run_cross_calibration
from .experiments import PRESETS, ConfigError, load_config, preset, run
from .forecasting import STRATEGY_IDS, UnknownStrategyError, strategy_from_id

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CHECK = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="expertcompare", description="Compare two sequential probabilistic forecasters.")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("config")
    r.add_argument("--out")
    r.add_argument("--check", action="store_true", help="exit 4 unless the config's expect block holds")
    pr = sub.add_parser("preset", help="run a bundled scenario")
    pr.add_argument("name", help=", ".join(sorted(PRESETS)))
    pr.add_argument("--out")
    pr.add_argument("--check", action="store_true")
    pr.add_argument("--print-config", action="store_true", help="print the config and exit")
    sub.add_parser("list-strategies")
    sub.add_parser("list-tests")
    sub.add_parser("list-presets")
    cc = sub.add_parser("cross-calib", help="run the cross-calibration test and print the CSV report")
    cc.add_argument("--truth", required=True)
    cc.add_argument("--experts", required=True, help="comma separated strategy ids")
    cc.add_argument("--N", type=int, required=True)
    cc.add_argument("--T", type=int, required=True)
    cc.add_argument("--seed", type=int, required=True)
    cc.add_argument("--m-min", type=int, default=30)
    cc.add_argument("--delta", type=float, default=0.01)
    return p


def _split_ids(text: str) -> list[str]:
    # table paths may contain commas only if escaped; ids are separated by top-level commas
    # except inside iid:p0,p1,... which we keep together by re-joining numeric fragments
    out: list[str] = []
    for piece in text.split(","):
        if out and _is_number(piece) and out[-1].startswith("iid:"):
            out[-1] += "," + piece
        else:
            out.append(piece)
    return out


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _run(cfg, out, check) -> int:
    manifest = run(cfg, out)
    print(json.dumps({"kind": manifest.kind, "files": manifest.files, "check": manifest.check}, sort_keys=True))
    if check:
        if not manifest.check:
            print("no expect block to check", file=sys.stderr)
            return EXIT_CHECK
        failed = [k for k, ok in manifest.check.items() if not ok]
        if failed:
            print("check failed: " + ", ".join(failed), file=sys.stderr)
            return EXIT_CHECK
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "list-strategies":
            for k, v in STRATEGY_IDS.items():
                print(f"{k}\t{v}")
            return EXIT_OK
        if args.cmd == "list-tests":
            for k, v in TEST_IDS.items():
                print(f"{k}\t{v}")
            return EXIT_OK
        if args.cmd == "list-presets":
            for k in sorted(PRESETS):
                print(k)
            return EXIT_OK
        if args.cmd == "run":
            return _run(load_config(args.config), args.out, args.check)
        if args.cmd == "preset":
            cfg = preset(args.name)
            if args.print_config:
                print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
                return EXIT_OK
            return _run(cfg, args.out, args.check)
        if args.cmd == "cross-calib":
            truth = strategy_from_id(args.truth)
            experts = [strategy_from_id(s) for s in _split_ids(args.experts)]
            rep = run_cross_calibration(truth, experts, args.T, args.N, seed=args.seed, m_min=args.m_min, delta=args.delta)
            sys.stdout.write(rep.to_csv())
            return EXIT_OK
    except (ConfigError, UnknownStrategyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
