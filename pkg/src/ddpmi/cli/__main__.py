"""``python -m ddpmi.cli`` entry point.

Exit codes: 0 ran (converged or not), 2 invalid scenario or arguments,
3 file I/O failure, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from ddpmi.cli.config import ConfigError, parse_scenario
from ddpmi.cli.runner import run_scenario, run_sweep

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_INTERNAL = 4

log = logging.getLogger("ddpmi.cli")


def canned_dir():
    return resources.files("ddpmi.cli") / "scenarios"


def canned_scenarios() -> dict[str, object]:
    return {p.name[: -len(".json")]: p for p in sorted(canned_dir().iterdir(), key=lambda p: p.name) if p.name.endswith(".json")}


def read_scenario_text(ref: str) -> str:
    """Scenario text from a path, or from a canned scenario name."""
    path = Path(ref)
    if path.exists():
        return path.read_text(encoding="utf-8")
    canned = canned_scenarios()
    if ref in canned:
        return canned[ref].read_text(encoding="utf-8")
    raise FileNotFoundError(f"no scenario file or canned scenario named {ref!r}")


def _load(ref: str):
    return parse_scenario(read_scenario_text(ref))


def cmd_run(args) -> int:
    cfg = _load(args.scenario)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer", "seed")
        cfg = cfg.with_seed(args.seed)
    res = run_scenario(cfg, args.out)
    status = "converged" if res.result.converged else "did not converge"
    print(f"{cfg.name}: {status} after {res.result.steps} steps, final error {res.result.final_error:.4g}")
    return EXIT_OK


def _parse_values(text: str) -> list[float]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    try:
        return [float(t) for t in items]
    except ValueError as exc:
        raise ConfigError(f"--values: {exc}", "sweep.values") from exc


def cmd_sweep(args) -> int:
    cfg = _load(args.scenario)
    param = args.param or (cfg.sweep.param if cfg.sweep else None)
    if args.values is not None:
        values = _parse_values(args.values)
    elif cfg.sweep is not None and args.param in (None, cfg.sweep.param):
        values = list(cfg.sweep.values)
    else:
        values = []
    if param is None:
        raise ConfigError("no sweep parameter given (use --param)", "sweep.param")
    rows = run_sweep(cfg, param, values, args.out, workers=args.workers)
    for r in rows:
        state = r["error"] or ("converged" if r["converged"] else "not converged")
        print(f"{param}={r['value']:g}: {state}, steps {r['steps']}")
    return EXIT_OK


def cmd_list(args) -> int:
    for name, path in canned_scenarios().items():
        data = json.loads(path.read_text(encoding="utf-8"))
        print(f"{name:28s} {data.get('description', '')}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args.scenario)
    print(f"{cfg.name}: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ddpmi", description="Data-driven continuum manipulator control scenarios.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("--scenario", required=True, help="scenario file or canned scenario name")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a scenario once per parameter value")
    p.add_argument("--scenario", required=True)
    p.add_argument("--param", choices=("beta", "j_init_scale", "radius_px"))
    p.add_argument("--values", help="comma-separated values (default: the scenario's sweep block)")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: one per CPU)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("list-scenarios", help="list canned scenarios")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # anything else is a bug
        log.exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
