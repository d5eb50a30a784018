"""Command line: ``rsergodic run|list|validate``.

Exit codes: 0 when every verdict passes, 2 when a verdict fails, 1 on an
execution error.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import errors, experiments


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rsergodic", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None, help="output directory")
    sub.add_parser("list", help="list the available experiments")
    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("--config", required=True)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        for e in experiments.list_experiments():
            print(f"{e['name']:<18} {e['description']}  [{e['anchor']}]")
        return 0
    try:
        cfg = experiments.load_config(args.config)
        if args.command == "validate":
            full = experiments.resolve_config(cfg)
            print(f"ok: {full['experiment']} (config hash {experiments.config_hash(full)[:12]})")
            return 0
        rep = experiments.run(cfg, seed=args.seed, out=args.out)
    except errors.RSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name, v in rep.verdicts.items():
        status = "PASS" if v["passed"] else "FAIL"
        print(f"{status} {rep.experiment}:{name} value={json.dumps(v['value'], default=str)} "
              f"threshold={json.dumps(v['threshold'], default=str)} ({v['tolerance']})")
    return 0 if rep.passed else 2


if __name__ == "__main__":
    sys.exit(main())
