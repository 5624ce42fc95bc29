"""Run every shipped config through the CLI and summarise the exit codes.

Usage: python scripts/run_experiments.py [--out results] [names ...]

Without names all configs in ``configs/`` with a runnable ``kind`` are run.
Reports land in ``<out>/<config name>/``.
"""

import argparse
import subprocess
import sys
import time
from pathlib import Path

import yaml

ROOT = Path(__file__).resolve().parent.parent
SUBCOMMAND = {
    "converge": "converge",
    "decouple": "decouple",
    "classical_table": "classical",
    "riccati_report": "riccati",
    "morawetz_report": "morawetz",
    "envelope_diag": "envelope",
}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("names", nargs="*")
    args = ap.parse_args()
    paths = sorted((ROOT / "configs").glob("*.yaml"))
    if args.names:
        paths = [p for p in paths if p.stem in args.names]
    worst = 0
    for path in paths:
        kind = (yaml.safe_load(path.read_text()) or {}).get("kind")
        if kind not in SUBCOMMAND:
            continue
        t = time.perf_counter()
        code = subprocess.call(["semiscatter", SUBCOMMAND[kind], "--config", str(path),
                                "--out", str(Path(args.out) / path.stem)], stdout=subprocess.DEVNULL)
        print(f"{path.stem:28s} exit {code}  {time.perf_counter() - t:7.1f} s")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
