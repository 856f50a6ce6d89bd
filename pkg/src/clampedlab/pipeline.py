"""Run configuration and the solve, functionals, bounds pipeline.

A run is described by one flat JSON document::

    {"domain": "square", "N": 64, "tensor": "identity", "k": 6}

Recognized keys and their defaults are listed in :data:`DEFAULTS`.
Tensor components ``a``, ``b`` and ``theta`` are numbers; an optional
``a_grad`` (etc.) list makes the component affine, ``c + g . x``.
Geometric constants may be overridden with top-level ``S_0``, ``T_star``,
``T_0``, ``I_0``, ``H_0`` or ``m`` keys.  An ``eigenvalues`` list skips
the solver and evaluates only the spectrum-level inequalities.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from ._csv import write_csv
from .bounds import (
    BOUNDS_COLUMNS,
    CLASSICAL_NAMES,
    SWEEP,
    BoundResult,
    SpectrumInput,
    check_ab,
    check_ab1,
    check_cc,
    check_cc1,
    check_theorem1,
    check_theorem2,
    check_theorem3,
    classical_checks,
    delta_optimum,
    theorem3_sweep,
    write_bounds_csv,
)
from .discretize import Operators, discretize
from .eigensolve import EigenSystem, lobpcg, write_eigen_csv
from .functionals import (
    DIMENSIONAL_AUDIT,
    FunctionalSet,
    all_quantities,
    proposition_check,
    trial_functions,
    write_functional_csv,
)
from .geometry import (
    GeometricConstants,
    GridDomain,
    TensorField,
    affine,
    build_disk,
    build_interval,
    build_rectangle,
    geometric_constants,
)

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "ALL_INEQUALITIES",
    "RunConfig",
    "ReportBundle",
    "ConvergenceTable",
    "load_config",
    "build_problem",
    "run_pipeline",
    "convergence_study",
    "emit_report",
]


class ConfigError(ValueError):
    """Invalid or unparsable run configuration."""


DOMAIN_KINDS = ("interval", "square", "rectangle", "disk")
TENSOR_KINDS = ("identity", "diagonal", "rotated")
HASH_EXCLUDED = ("out", "strict")
CONST_KEYS = ("S_0", "T_star", "T_0", "I_0", "H_0", "m")
ALL_INEQUALITIES = (
    "theorem1",
    "theorem2",
    "theorem3",
    "cc",
    "cc1",
    "ab",
    "ab1",
    *CLASSICAL_NAMES,
    "prop5",
    "prop6",
    "prop7",
)
NEEDS_FUNCTIONALS = {"theorem1", "theorem2", "prop5", "prop6", "prop7"}

DEFAULTS: dict[str, Any] = {
    "domain": "square",
    "N": 32,
    "length": 1.0,
    "Lx": 1.0,
    "Ly": 1.0,
    "radius": 1.0,
    "tensor": "identity",
    "a": 1.0,
    "b": 1.0,
    "theta": 0.0,
    "a_grad": None,
    "b_grad": None,
    "theta_grad": None,
    "k": 4,
    "tol": 1e-9,
    "max_iter": 500,
    "seed": 0,
    "precond": "factor",
    "delta": "auto",
    "inequalities": list(ALL_INEQUALITIES),
    "h_axis": 0,
    "levels": None,
    "strict": False,
    "out": "clampedlab-out",
    "eigenvalues": None,
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration (see module docstring for keys)."""

    values: Mapping[str, Any]

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(raw, Mapping):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - set(DEFAULTS) - set(CONST_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        v = {**DEFAULTS, **raw}
        if v["domain"] not in DOMAIN_KINDS:
            raise ConfigError(f"unknown domain kind {v['domain']!r}; expected one of {DOMAIN_KINDS}")
        if v["tensor"] not in TENSOR_KINDS:
            raise ConfigError(f"unknown tensor kind {v['tensor']!r}; expected one of {TENSOR_KINDS}")
        if not isinstance(v["k"], int) or isinstance(v["k"], bool) or v["k"] < 1:
            raise ConfigError(f"k must be an integer >= 1, got {v['k']!r}")
        if not isinstance(v["N"], int) or v["N"] < 1:
            raise ConfigError(f"N must be a positive integer, got {v['N']!r}")
        tol = v["tol"]
        if not isinstance(tol, (int, float)) or not 0 < tol <= 1e-2:
            raise ConfigError(f"tol must lie in (0, 1e-2], got {tol!r}")
        d = v["delta"]
        if not (d in ("auto", "sweep") or (isinstance(d, (int, float)) and not isinstance(d, bool) and d > 0)):
            raise ConfigError(f"delta must be 'auto', 'sweep' or a positive number, got {d!r}")
        sel = v["inequalities"]
        if not isinstance(sel, list) or any(s not in ALL_INEQUALITIES for s in sel):
            raise ConfigError(f"inequalities must be a list drawn from {ALL_INEQUALITIES}")
        if len(set(sel)) != len(sel):
            raise ConfigError("inequalities list has duplicates")
        seed = v["seed"]
        if not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
        if v["eigenvalues"] is not None:
            ev = v["eigenvalues"]
            if not isinstance(ev, list) or len(ev) < 2:
                raise ConfigError("eigenvalues override needs at least two values")
        if v["levels"] is not None and not isinstance(v["levels"], list):
            raise ConfigError("levels must be a list of grid sizes")
        return cls(v)

    def with_overrides(self, **kw) -> "RunConfig":
        """A copy with the given keys replaced (``None`` resets a key to its default)."""
        upd = {key: (DEFAULTS[key] if val is None and key in DEFAULTS else val) for key, val in kw.items()}
        return RunConfig.from_dict({**self.values, **upd})

    def canonical_json(self) -> str:
        """Sorted compact JSON of every key that affects computed numbers."""
        content = {key: val for key, val in self.values.items() if key not in HASH_EXCLUDED}
        return json.dumps(content, sort_keys=True, separators=(",", ":"))

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @property
    def overrides(self) -> dict:
        return {key: self.values[key] for key in CONST_KEYS if key in self.values}


def load_config(path) -> RunConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_dict(raw)


def _component(cfg: RunConfig, name: str):
    c = cfg[name]
    g = cfg[f"{name}_grad"]
    if not isinstance(c, (int, float)):
        raise ConfigError(f"{name} must be a number")
    return affine(float(c), g) if g is not None else float(c)


def build_problem(cfg: RunConfig, N: int | None = None) -> tuple[GridDomain, TensorField]:
    """Domain and coefficient field described by ``cfg`` (optionally at another ``N``)."""
    N = cfg["N"] if N is None else N
    kind = cfg["domain"]
    if kind == "interval":
        dom = build_interval(cfg["length"], N)
    elif kind == "square":
        dom = build_rectangle(1.0, 1.0, N, N)
    elif kind == "rectangle":
        Lx, Ly = cfg["Lx"], cfg["Ly"]
        Ny = N * Ly / Lx
        if abs(Ny - round(Ny)) > 1e-9:
            raise ConfigError(f"N * Ly / Lx = {Ny} is not an integer")
        dom = build_rectangle(Lx, Ly, N, int(round(Ny)))
    else:
        dom = build_disk(cfg["radius"], N)
    t = cfg["tensor"]
    if t == "identity":
        fld = TensorField.identity(dim=dom.dim)
    elif t == "diagonal":
        fld = TensorField.diagonal(_component(cfg, "a"), _component(cfg, "b"), dim=dom.dim)
    else:
        if dom.dim != 2:
            raise ConfigError("rotated tensors need a 2D domain")
        fld = TensorField.rotated(_component(cfg, "theta"), _component(cfg, "a"), _component(cfg, "b"))
    return dom, fld.with_fd_step(dom.h / 4)


@dataclass(frozen=True)
class ConvergenceTable:
    """Eigenvalues on doubling grids with observed order and extrapolation.

    ``order[j] = log2((l_h - l_h/2) / (l_h/2 - l_h/4))`` from the three
    finest levels; ``richardson[j] = l_f + (l_f - l_c) / 3`` from the two
    finest (second-order assumption).
    """

    levels: tuple[int, ...]
    h: tuple[float, ...]
    eigenvalues: np.ndarray  # shape (len(levels), k)
    order: np.ndarray
    richardson: np.ndarray

    def rows(self):
        k = self.eigenvalues.shape[1]
        for j in range(k):
            yield [j + 1, *self.eigenvalues[:, j], self.order[j], self.richardson[j]]

    def header(self):
        return ["index", *[f"N{N}" for N in self.levels], "order", "richardson"]


@dataclass(eq=False)
class ReportBundle:
    """Everything one pipeline run produces."""

    config: RunConfig
    system: EigenSystem | None
    eigenvalues: np.ndarray
    functionals: FunctionalSet | None
    bounds: list[BoundResult]
    consts: GeometricConstants | None
    audits: dict = field(default_factory=dict)
    convergence: ConvergenceTable | None = None

    @property
    def failures(self) -> list[BoundResult]:
        return [r for r in self.bounds if not r.holds]

    def exit_code(self, strict: bool | None = None) -> int:
        """0 if every check holds, 2 otherwise.

        Under the strict policy failures of ``as_stated`` checks are
        reported but not fatal.
        """
        strict = self.config["strict"] if strict is None else strict
        fatal = [r for r in self.failures if not (strict and r.mode == "as_stated")]
        return 2 if fatal else 0


def _solve(cfg: RunConfig, dom: GridDomain, fld: TensorField, k: int):
    ops = discretize(dom, fld)
    sys = lobpcg(
        ops.A,
        k,
        tol=cfg["tol"],
        max_iter=cfg["max_iter"],
        seed=cfg["seed"],
        precond=cfg["precond"],
        weight=dom.cell_weight,
    )
    return ops, sys


def _delta_results(fn, spec: SpectrumInput, mode):
    """One row per ``k``: closed-form optimum, fixed value, or worst sweep point."""
    if mode != "sweep":
        return fn(spec, mode)
    rows = [fn(spec, float(d)) for d in SWEEP]
    worst = min(rows, key=lambda r: r.slack)
    if all(r.holds for r in rows):
        return worst
    return BoundResult(worst.name, worst.k, worst.lhs, worst.rhs, worst.delta, note="fails on sweep")


def _proposition_rows(trial_cache, sys, k, selected):
    trial = trial_cache(k)
    g = sys.eigenvalues[k] - sys.eigenvalues[:k]
    sw = float(np.sum(g * g * trial.w))
    sq = float(np.sum(g * trial.q_norm2))
    sp = float(np.sum(g * trial.p_norm2))
    rows = []
    base = proposition_check(trial, sys, 1.0)
    if "prop5" in selected:
        rows.append(BoundResult("prop5", k, base.lhs5, base.rhs5))
    for name, P in (("prop6", sw), ("prop7", sp)):
        if name not in selected:
            continue
        d = delta_optimum(P, sq)[0] if P > 0 and sq > 0 else 1.0
        res = proposition_check(trial, sys, d)
        lhs, rhs = (res.lhs6, res.rhs6) if name == "prop6" else (res.lhs7, res.rhs7)
        rows.append(BoundResult(name, k, lhs, rhs, d))
    return rows


def evaluate_bounds(
    spectrum: SpectrumInput,
    selected: Sequence[str],
    delta="auto",
    sys: EigenSystem | None = None,
    trial_cache=None,
) -> list[BoundResult]:
    """Every selected inequality once per ``k = 1 .. K`` (``ab1`` only at ``k = 1``).

    ``ab`` and ``ab1`` contribute one row per mode.
    """
    out: list[BoundResult] = []
    have_fs = spectrum.functionals is not None
    for k in range(1, spectrum.k + 1):
        sp = spectrum.truncated(k)
        classical = {r.name: r for r in classical_checks(sp.eigenvalues, sp.n)}
        props = [s for s in selected if s.startswith("prop")]
        for name in selected:
            if name in NEEDS_FUNCTIONALS and not have_fs:
                continue
            if name == "theorem1":
                out.append(_delta_results(check_theorem1, sp, delta))
            elif name == "theorem2":
                out.append(_delta_results(check_theorem2, sp, delta))
            elif name == "theorem3":
                out.append(_delta_results(check_theorem3, sp, delta))
            elif name == "cc":
                out.append(check_cc(sp))
            elif name == "cc1":
                out.append(check_cc1(sp))
            elif name == "ab":
                out += [check_ab(sp, "as_stated"), check_ab(sp, "rederived")]
            elif name == "ab1":
                if k == 1:
                    out += [check_ab1(sp, "as_stated"), check_ab1(sp, "rederived")]
            elif name in classical:
                out.append(classical[name])
            elif name == props[0]:
                out += _proposition_rows(trial_cache, sys, k, props)
    return out


def run_pipeline(config: RunConfig) -> ReportBundle:
    """Solve, evaluate functionals and check the selected inequalities.

    With an ``eigenvalues`` override no operator is built and only the
    spectrum-level inequalities are evaluated.
    """
    cfg = config
    selected = list(cfg["inequalities"])
    if cfg["eigenvalues"] is not None:
        lam = np.asarray(cfg["eigenvalues"], dtype=float)
        dim = 1 if cfg["domain"] == "interval" else 2
        consts = None
        if cfg.overrides:
            base = dict(n=dim, m=dim, S_0=0.0, T_star=1.0, T_0=0.0, I_0=0.0, H_0=0.0)
            consts = GeometricConstants(**{**base, **cfg.overrides})
        spectrum = SpectrumInput(lam, dim, consts)
        bounds = evaluate_bounds(spectrum, selected, cfg["delta"])
        return ReportBundle(cfg, None, lam, None, bounds, consts, {"source": "eigenvalue override"})

    dom, fld = build_problem(cfg)
    k = cfg["k"]
    ops, sys = _solve(cfg, dom, fld, k)
    consts = geometric_constants(dom, fld, cfg.overrides)
    fs = all_quantities(sys, dom, fld, consts, ops=ops) if k >= 2 else None
    audits = {
        "symmetry_defect": ops.A.symmetry_defect,
        "max_residual": float(sys.residuals.max()),
        "residual_floor": float(sys.info.get("residual_floor", math.nan)),
        "iterations": sys.iterations,
        "order": sys.order,
        "h": dom.h,
    }
    bounds: list[BoundResult] = []
    if k >= 2:
        spectrum = SpectrumInput(sys.eigenvalues, dom.dim, consts, fs)
        cache: dict[int, Any] = {}

        def trial_cache(kk):
            if kk not in cache:
                cache[kk] = trial_functions(sys, dom, fld, cfg["h_axis"], k=kk, ops=ops)
            return cache[kk]

        bounds = evaluate_bounds(spectrum, selected, cfg["delta"], sys, trial_cache)
        if cfg["delta"] == "auto" and "theorem3" in selected:
            audits["theorem3_sweep_all_hold"] = all(
                r.holds for kk in range(1, k) for r in theorem3_sweep(spectrum.truncated(kk))
            )
    bundle = ReportBundle(cfg, sys, sys.eigenvalues, fs, bounds, consts, audits)
    if cfg["levels"]:
        bundle.convergence = convergence_study(cfg, cfg["levels"])
    return bundle


def convergence_study(config: RunConfig, levels: Sequence[int]) -> ConvergenceTable:
    """Solve on each grid size in ``levels`` (at least 3, each doubling the last)."""
    levels = [int(N) for N in levels]
    if len(levels) < 3:
        raise ConfigError("convergence study needs at least 3 levels")
    if any(b != 2 * a for a, b in zip(levels, levels[1:])):
        raise ConfigError(f"levels must double: {levels}")
    k = config["k"]
    lam = []
    hs = []
    for N in levels:
        dom, fld = build_problem(config, N)
        _, sys = _solve(config, dom, fld, k)
        lam.append(sys.eigenvalues)
        hs.append(dom.h)
    lam = np.array(lam)
    c, m, f = lam[-3], lam[-2], lam[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        order = np.log2((c - m) / (m - f))
    return ConvergenceTable(tuple(levels), tuple(hs), lam, order, f + (f - m) / 3.0)


# ---------------------------------------------------------------------------
# output


def _fmt_num(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isinf(x) or math.isnan(x):
        return str(x)
    return f"{x:.6g}"


def markdown_summary(bundle: ReportBundle) -> str:
    cfg = bundle.config
    lines = [
        "# clampedlab report",
        "",
        f"config sha256: `{cfg.sha256}`",
        "",
        f"domain: {cfg['domain']}, N = {cfg['N']}, tensor: {cfg['tensor']}, k = {cfg['k']}",
        "",
        "## Eigenvalues",
        "",
        "| i | eigenvalue |",
        "|---|---|",
    ]
    lines += [f"| {i + 1} | {_fmt_num(v)} |" for i, v in enumerate(bundle.eigenvalues)]
    lines += ["", "## Audits", ""]
    for key in sorted(bundle.audits):
        val = bundle.audits[key]
        lines.append(f"- {key}: {_fmt_num(val) if isinstance(val, float) else val}")
    fs = bundle.functionals
    if fs is not None:
        lines += ["", "## Functional notes", ""]
        lines += [f"- {note}" for note in DIMENSIONAL_AUDIT]
        if fs.E_exact is not None:
            over = int(np.sum(fs.E_exact > fs.E_bound * (1 + 1e-3)))
            lines.append(f"- E_exact above its majorant for {over} of {fs.k} eigenfunctions")
        if fs.B is not None and fs.D is not None:
            lines.append(f"- D_i below B_i for {int(np.sum(fs.D < fs.B))} of {fs.k} eigenfunctions")
    ab1 = {r.mode: r for r in bundle.bounds if r.name == "ab1"}
    if ab1:
        lines += [
            "",
            "## lambda_2 / lambda_1 bound, both modes",
            "",
            "| mode | lambda_2 | bound | holds |",
            "|---|---|---|---|",
        ]
        for mode in ("as_stated", "rederived"):
            if mode in ab1:
                r = ab1[mode]
                lines.append(f"| {mode} | {_fmt_num(r.lhs)} | {_fmt_num(r.rhs)} | {'yes' if r.holds else 'NO'} |")
    lines += ["", "## Inequalities", "", "| name | mode | k | delta | lhs | rhs | slack | holds |", "|---|---|---|---|---|---|---|---|"]
    for r in bundle.bounds:
        lines.append(
            f"| {r.name} | {r.mode} | {r.k} | {_fmt_num(r.delta)} | {_fmt_num(r.lhs)} | {_fmt_num(r.rhs)} "
            f"| {_fmt_num(r.slack)} | {'yes' if r.holds else 'NO'} |"
        )
    if bundle.convergence is not None:
        ct = bundle.convergence
        lines += ["", "## Convergence", "", "| " + " | ".join(ct.header()) + " |", "|" + "---|" * len(ct.header())]
        for row in ct.rows():
            lines.append("| " + " | ".join([str(row[0])] + [_fmt_num(v) for v in row[1:]]) + " |")
    n_fail = len(bundle.failures)
    lines += ["", f"failures: {n_fail}; exit code {bundle.exit_code()}", ""]
    return "\n".join(lines)


def emit_report(bundle: ReportBundle, out_dir, formats: Sequence[str] = ("csv", "markdown")) -> list[Path]:
    """Write the bundle to ``out_dir``; returns the written paths.

    CSV files start with a ``# config_sha256: ...`` comment line.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    comment = f"config_sha256: {bundle.config.sha256}"
    written = []
    if "csv" in formats:
        if bundle.system is not None:
            written.append(write_eigen_csv(bundle.system, out / "eigen.csv", comment))
        else:
            rows = [(i + 1, v, "") for i, v in enumerate(bundle.eigenvalues)]
            written.append(write_csv(out / "eigen.csv", ("index", "eigenvalue", "residual"), rows, comment))
        if bundle.functionals is not None:
            written.append(write_functional_csv(bundle.functionals, out / "functionals.csv", comment))
        written.append(write_bounds_csv(bundle.bounds, out / "bounds.csv", comment))
        if bundle.convergence is not None:
            ct = bundle.convergence
            written.append(write_csv(out / "convergence.csv", ct.header(), list(ct.rows()), comment))
    if "markdown" in formats:
        path = out / "summary.md"
        path.write_text(markdown_summary(bundle), encoding="utf-8", newline="\n")
        written.append(path)
    return written


__all__ += ["evaluate_bounds", "markdown_summary", "BOUNDS_COLUMNS"]
