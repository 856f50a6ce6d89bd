"""Command-line entry point.

Subcommands
-----------
solve     eigenvalues only (``eigen.csv``)
check     eigenvalues, functionals and inequality checks (CSV files)
converge  convergence table over the config's ``levels``
report    everything from ``check`` plus ``summary.md`` (and the
          convergence table when ``levels`` is set)

Exit status: 0 when every evaluated inequality holds, 2 when one fails
(with ``--strict`` only failures outside the ``as_stated`` mode count),
1 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from ._csv import write_csv
from .eigensolve import ConvergenceError
from .geometry import DomainError
from .pipeline import (
    ConfigError,
    RunConfig,
    ReportBundle,
    convergence_study,
    emit_report,
    load_config,
    run_pipeline,
)

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clampedlab", description="Clamped fourth-order eigenvalue laboratory.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("solve", "compute the low spectrum"),
        ("check", "evaluate functionals and inequalities"),
        ("converge", "grid convergence study"),
        ("report", "full run with markdown summary"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--strict", action="store_true", default=None, help="as_stated failures are not fatal")
        sp.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
    return p


def _run(args) -> int:
    given = {"out": args.out, "strict": args.strict, "seed": args.seed}
    cfg: RunConfig = load_config(args.config).with_overrides(**{k: v for k, v in given.items() if v is not None})
    out = cfg["out"]
    comment = f"config_sha256: {cfg.sha256}"
    if args.command == "converge":
        if not cfg["levels"]:
            raise ConfigError("converge needs a 'levels' list in the config")
        table = convergence_study(cfg, cfg["levels"])
        Path(out).mkdir(parents=True, exist_ok=True)
        write_csv(Path(out) / "convergence.csv", table.header(), list(table.rows()), comment)
        return EXIT_OK
    if args.command == "solve":
        cfg = cfg.with_overrides(inequalities=[], levels=None)
        bundle = run_pipeline(cfg)
        emit_report(bundle, out, formats=("csv",))
        return EXIT_OK
    if args.command == "check":
        bundle: ReportBundle = run_pipeline(cfg.with_overrides(levels=None))
        emit_report(bundle, out, formats=("csv",))
    else:
        bundle = run_pipeline(cfg)
        emit_report(bundle, out)
    for r in bundle.failures:
        tag = " (as_stated)" if r.mode == "as_stated" else ""
        print(f"FAIL {r.name}{tag} k={r.k}: lhs={r.lhs:.6g} rhs={r.rhs:.6g}", file=sys.stderr)
    return bundle.exit_code()


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, DomainError, ConvergenceError, ValueError, OSError) as exc:
        print(f"clampedlab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
