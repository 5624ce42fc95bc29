"""Run the acceptance suite and print its PASS/FAIL lines.

Usage: python scripts/run_acceptance.py [--fast]

``--fast`` skips the criteria marked slow.  The exit code is pytest's.
"""

import argparse
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fast", action="store_true", help="skip slow criteria")
    args = ap.parse_args()
    cmd = [sys.executable, "-m", "pytest", "-q", str(ROOT / "tests" / "test_acceptance.py")]
    if args.fast:
        cmd += ["-m", "not slow"]
    proc = subprocess.run(cmd, cwd=ROOT, capture_output=True, text=True)
    lines = [ln for ln in proc.stdout.splitlines() if ln.startswith(("PASS ", "FAIL "))]
    print("\n".join(lines))
    print(proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr)
    return proc.returncode


if __name__ == "__main__":
    sys.exit(main())
