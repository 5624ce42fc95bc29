"""Command line entry point ``semiscatter``.

Exit status: 0 when every target in the config is met, 1 when the run finished
with failed targets, 2 on any execution error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, config_from_dict, load_config
from .report import emit_report

SUBCOMMANDS = {
    "converge": "converge",
    "decouple": "decouple",
    "classical": "classical_table",
    "riccati": "riccati_report",
    "morawetz": "morawetz_report",
    "envelope": "envelope_diag",
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="semiscatter", description="Semiclassical wave-packet scattering experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, kind in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run a {kind} experiment")
        p.add_argument("--config", required=True, help="YAML or JSON experiment file")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    p = sub.add_parser("semiclassical", help="one semiclassical error run")
    p.add_argument("--config", default=None, help="base config; flags below override it")
    p.add_argument("--eps", type=float, action="append", help="semiclassical parameter (repeatable)")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--T", type=float, default=None, help="start the window at -T")
    p.add_argument("--grid", default=None, help="N,L")
    p.add_argument("--potential", default=None, help="YAML/JSON file with the potential section")
    p.add_argument("--out", default=None)
    return ap


def _read_mapping(path: str) -> dict:
    text = Path(path).read_text()
    if path.lower().endswith(".json"):
        return json.loads(text)
    import yaml

    return yaml.safe_load(text)


def semiclassical_config(args) -> ExperimentConfig:
    data = {} if args.config is None else load_config(args.config).to_dict()
    data["kind"] = "semiclassical"
    if args.dim is not None:
        data["dim"] = args.dim
    dim = int(data.get("dim", 1))
    if args.potential:
        pot = _read_mapping(args.potential)
        data["potential"] = pot.get("potential", pot)
    data.setdefault("potential", {})
    data["potential"] = dict(data["potential"], dim=dim)
    if not data.get("packets"):
        data["packets"] = [{"q": [0.0] * dim, "p": [1.0] + [0.0] * (dim - 1)}]
    if args.eps:
        data["eps"] = args.eps
    if not data.get("eps"):
        raise ValueError("--eps is required without a config providing eps")
    if args.alpha is not None:
        data["alpha"] = args.alpha
    if args.sigma is not None:
        data["sigma"] = args.sigma
    if args.T is not None:
        data.setdefault("time", {})
        data["time"] = dict(data["time"], T=args.T)
    if args.grid:
        n, L = args.grid.split(",")
        data["grid"] = {"N": int(n), "L": float(L)}
    data.pop("output_dir", None)
    return config_from_dict(data)


def _run(args) -> int:
    from .experiments import run_experiment

    if args.command == "semiclassical":
        cfg = semiclassical_config(args)
    else:
        cfg = load_config(args.config)
        want = SUBCOMMANDS[args.command]
        if cfg.kind != want:
            raise ValueError(f"config kind {cfg.kind!r} does not match subcommand {args.command!r} "
                             f"(expected kind {want!r})")
    out = args.out or cfg.output_dir
    report = run_experiment(cfg)
    stem = "error_report" if args.command == "semiclassical" else cfg.kind
    paths = emit_report(report, out, stem)
    if args.command == "classical":
        sys.stdout.write(json.dumps(report.to_dict()["summary"], sort_keys=True, indent=2) + "\n")
    else:
        status = "met" if report.passed else "FAILED"
        sys.stdout.write(f"{args.command}: targets {status}; wrote {paths['json']} and {paths['csv']}\n")
    return 0 if report.passed else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit status 2
        sys.stderr.write(f"semiscatter: error: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
