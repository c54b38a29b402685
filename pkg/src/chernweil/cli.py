"""Command line entry point: ``chernweil run | convergence | list``.

Exit codes: 0 when every enabled check passes, 2 when a check fails, 3 on
invalid configuration and 4 when a run is refused for its resource budget.
Errors print one ``key=value`` line on standard error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .scenarios import (
    SCENARIOS,
    BudgetError,
    ConfigError,
    ScenarioConfig,
    convergence_study,
    list_scenarios,
    run_scenario,
)

SCHEMA_VERSION = "chernweil.report/1"
CSV_HEADER = ("level", "resolution", "balance_error", "identity_residual", "ratio")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BUDGET = 0, 2, 3, 4
CONFIG_KEYS = {"scenario", "resolution", "eps", "quad_nodes", "phi", "seed", "params", "enable_4d", "jobs"}


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors with the configuration exit code."""

    def error(self, message):
        raise ConfigError(message)


def _eps(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad radius list {text!r}") from exc
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chernweil", description="Residues of characteristic forms at singularities of bundle maps.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--scenario", choices=sorted(SCENARIOS))
        sp.add_argument("--config", type=Path, help="JSON file with run parameters")
        sp.add_argument("--resolution", type=int)
        sp.add_argument("--eps", type=_eps, help="comma-separated sphere radii")
        sp.add_argument("--quad-nodes", type=int, default=48)
        sp.add_argument("--phi", help="c1, c2, ch1, ch2, p1, L1, ...")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", type=Path)
        sp.add_argument("--enable-4d", action="store_true")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--json", action="store_true", help="print the machine-readable result")
        sp.add_argument("--k", type=int, help="line_zeros: degree of the line bundle")
        sp.add_argument("--d", type=int, help="riemann_hurwitz: degree of z -> z^d")
        sp.add_argument("--profile", choices=["rotational", "gradient"], help="hopf: vector field")
        sp.add_argument("--variant", choices=["collapse", "surjective"], help="surjective_demo: map")

    common(sub.add_parser("run", help="run one scenario"))
    conv = sub.add_parser("convergence", help="refinement study on nested grids")
    common(conv)
    conv.add_argument("--levels", type=int, default=3)
    lst = sub.add_parser("list", help="list scenarios")
    lst.add_argument("--json", action="store_true")
    return p


def config_from_dict(data: dict) -> ScenarioConfig:
    """Validated configuration from a JSON object; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
    if "scenario" not in data:
        raise ConfigError("configuration needs a scenario")
    kw = dict(data)
    if kw.get("eps") is not None:
        kw["eps"] = tuple(float(e) for e in kw["eps"])
    kw["params"] = dict(kw.get("params") or {})
    try:
        return ScenarioConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _config(args) -> ScenarioConfig:
    data: dict = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        data = dict(data)
    if args.scenario is not None:
        data["scenario"] = args.scenario
    params = dict(data.get("params") or {})
    for flag, key in (("k", "k"), ("d", "d"), ("profile", "profile"), ("variant", "variant")):
        val = getattr(args, flag)
        if val is not None:
            params[key] = val
    data["params"] = params
    for key in ("resolution", "eps", "phi"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    data.setdefault("quad_nodes", args.quad_nodes)
    data.setdefault("seed", args.seed)
    data.setdefault("jobs", args.jobs)
    data["enable_4d"] = bool(data.get("enable_4d", False) or args.enable_4d)
    if "scenario" not in data:
        raise ConfigError("--scenario is required")
    return config_from_dict(data)


def _report_document(result) -> dict:
    doc = result.to_dict()
    doc["schema_version"] = SCHEMA_VERSION
    doc["package_version"] = __version__
    return doc


def _write(path: Path | None, text: str) -> None:
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def _fail(kind: str, message: str, code: int) -> int:
    reason = " ".join(str(message).split())
    print(f"error={kind} code={code} reason={reason}", file=sys.stderr)
    return code


def cmd_run(args) -> int:
    cfg = _config(args)
    result = run_scenario(cfg)
    doc = _report_document(result)
    text = json.dumps(doc, indent=2, sort_keys=True)
    _write(args.out, text + "\n")
    if args.json:
        print(text)
    else:
        rep = result.report
        print(f"scenario {rep.scenario}  phi {rep.phi}  resolution {result.config.resolution or 'default'}")
        for rec in rep.residues:
            print(f"  residue at {rec.chart}{tuple(rec.point)}: {rec.residue:+.6f}  "
                  f"spread {rec.spread:.2e}  ({rec.method})")
        print(f"  lhs {rep.lhs:+.6f}  residue sum {rep.residue_sum:+.6f}  balance {rep.balance:+.2e}")
        print(f"  identity residual {rep.identity_residual:.3e}  runtime {result.runtime:.2f}s")
        for name, chk in result.checks.items():
            note = "" if chk.get("gating", True) else " (informational)"
            print(f"  [{'PASS' if chk['pass'] else 'FAIL'}] {name}{note}")
    return EXIT_OK if result.passed else EXIT_FAIL


def convergence_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.level, r.resolution, repr(float(r.balance_error)), repr(float(r.identity_residual)),
                    repr(float(r.ratio))])
    return buf.getvalue()


def convergence_passes(rows, floor: float = 1e-10, min_ratio: float = 3.0) -> bool:
    """Residuals at the roundoff floor pass; otherwise ratios after the first level must reach ``min_ratio``."""
    if all(r.identity_residual <= floor and r.balance_error <= floor for r in rows):
        return True
    for r in rows[1:]:
        if r.identity_residual > floor and not (r.ratio >= min_ratio):
            return False
    bal = [r.balance_error for r in rows]
    return all(b1 <= b0 or b1 <= floor for b0, b1 in zip(bal, bal[1:]))


def cmd_convergence(args) -> int:
    cfg = _config(args)
    if args.levels < 2:
        raise ConfigError("--levels must be at least 2")
    rows = convergence_study(cfg, levels=args.levels)
    text = convergence_csv(rows)
    _write(args.out, text)
    if args.json:
        print(json.dumps({"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(),
                          "rows": [dict(zip(CSV_HEADER, r.as_tuple())) for r in rows]}, indent=2))
    else:
        sys.stdout.write(text)
    return EXIT_OK if convergence_passes(rows) else EXIT_FAIL


def cmd_list(args) -> int:
    rows = list_scenarios()
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        for r in rows:
            params = ", ".join(f"{k}={v}" for k, v in r["params"].items()) or "-"
            print(f"{r['id']:<16} phi={r['phi']:<3} params: {params:<22} expect: {r['expect']}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        handler = {"run": cmd_run, "convergence": cmd_convergence, "list": cmd_list}[args.command]
        return handler(args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except BudgetError as exc:
        return _fail("budget", exc, EXIT_BUDGET)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
