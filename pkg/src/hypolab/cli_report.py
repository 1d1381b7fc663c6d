"""Command-line surface: problem ingestion, run orchestration, reports.

Subcommands: triangularize, diagnose, solve, perturb, examples. Exit codes
separate pipeline failures from mathematical ones so scripted sweeps can
tell them apart: 0 for a completed run (an Inconclusive verdict is still a
completed run), 1 for usage, parsing, or I/O problems, 2 for a mathematical
precondition failure (flagged branch crossings, no smooth pivot,
eigensolver breakdown, fixed-point stall). Errors print a JSON detail line
on standard error.

report.json depends only on the resolved configuration, never on wall
clocks; timings go to a separate timings.json so identical configs produce
byte-identical reports.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .params import DEFAULT_ALPHA_MAX, DEFAULT_EPSILON_MAX, DEFAULT_T_GRID, DEFAULT_TOL, Tolerances
from .symbol_algebra import (
    ExprSyntaxError,
    InsufficientData,
    Lattice,
    MatrixSymbol,
    TrigPolynomial,
    parse_spatial_expr,
)
from .fourier_tools import ModeTable, classify_decay
from .triangularization import (
    BranchCrossingError,
    EigenSolverFailure,
    NoPivot,
    NotCommuting,
    eigen_field,
    smooth_triangularize,
    verify_strong_conditions,
)
from .diagnostics import (
    FitResidualTooLarge,
    GH_CONSISTENT,
    INCONCLUSIVE,
    NONGH_RESONANT,
    diagnose_dt_plus_Q,
    diagnose_variable,
    perturbation_track,
)
from .mode_solver import NoConvergence, Resonant, solve_full

__all__ = [
    "ConfigError",
    "GridMismatch",
    "ProblemConfig",
    "RunReport",
    "main",
]

DEFAULT_RADIUS = 64
TRACKS_ROW_CAP = 300_000


class ConfigError(ValueError):
    """Malformed problem file or command-line parameters."""


class GridMismatch(ValueError):
    """Right-hand-side data sampled on a different lattice or t grid."""


_USAGE_ERRORS = (ConfigError, GridMismatch, ExprSyntaxError, OSError, json.JSONDecodeError)
_MATH_ERRORS = (
    NoPivot,
    BranchCrossingError,
    EigenSolverFailure,
    NotCommuting,
    NoConvergence,
    Resonant,
    FitResidualTooLarge,
    InsufficientData,
)


def claim(value, operation: str, tol_name: str, tol_value: float) -> dict:
    """A numeric report entry that names what produced it."""
    return {
        "value": value,
        "operation": operation,
        "tolerance": f"{tol_name}={tol_value:g}",
    }


@dataclass
class ProblemConfig:
    """Fully resolved run parameters; the echo makes reruns reproducible."""

    symbol: MatrixSymbol
    radius: int
    t_count: int
    alpha_max: int
    tol: Tolerances
    epsilons: list
    out_dir: str
    label: str
    perturbation: Optional[MatrixSymbol] = None

    def lattice(self) -> Lattice:
        return Lattice(self.symbol.n, self.radius, t_count=self.t_count)

    def resolved(self) -> dict:
        return {
            "problem": self.symbol.to_json_dict(),
            "perturbation": self.perturbation.to_json_dict() if self.perturbation else None,
            "radius": self.radius,
            "t_count": self.t_count,
            "alpha_max": self.alpha_max,
            "tol": asdict(self.tol),
            "epsilons": list(self.epsilons),
            "out_dir": self.out_dir,
            "label": self.label,
        }


@dataclass
class RunReport:
    command: str
    config: dict
    results: dict
    manifest: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "results": self.results,
            "manifest": list(self.manifest),
            "warnings": list(self.warnings),
        }

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "report.json"
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out / "timings.json", "w") as fh:
            json.dump(self.timings, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def _tol_overrides(tol: Tolerances, pairs) -> Tolerances:
    known = {f.name for f in fields(Tolerances)}
    out = tol
    for spec in pairs or []:
        name, sep, value = str(spec).partition("=")
        if not sep or name not in known:
            raise ConfigError(
                f"unknown tolerance override {spec!r}; names: {', '.join(sorted(known))}"
            )
        try:
            out = replace(out, **{name: float(value)})
        except ValueError:
            raise ConfigError(f"tolerance {name} needs a numeric value, got {value!r}") from None
    return out


def _default_epsilons() -> list:
    return [float(e) for e in np.linspace(-DEFAULT_EPSILON_MAX, DEFAULT_EPSILON_MAX, 9)]


def load_config(args) -> ProblemConfig:
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: problem file must be a JSON object")
    try:
        problem = raw["problem"] if "problem" in raw else raw
        symbol = MatrixSymbol.from_json_dict(problem)
        perturbation = None
        if raw.get("perturbation") is not None:
            perturbation = MatrixSymbol.from_json_dict(raw["perturbation"])
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ExprSyntaxError):
            raise
        raise ConfigError(f"{path}: bad problem payload ({e})") from None
    run = raw.get("run", {})
    if not isinstance(run, dict):
        raise ConfigError(f"{path}: 'run' must be an object")

    radius = args.radius if args.radius is not None else int(run.get("radius", DEFAULT_RADIUS))
    t_count = args.tgrid if args.tgrid is not None else int(run.get("t_count", DEFAULT_T_GRID))
    alpha_max = (
        args.alpha_max if args.alpha_max is not None else int(run.get("alpha_max", DEFAULT_ALPHA_MAX))
    )
    if radius < 1:
        raise ConfigError("radius must be a positive integer")

    tol = _tol_overrides(DEFAULT_TOL, [f"{k}={v}" for k, v in run.get("tol", {}).items()])
    tol = _tol_overrides(tol, args.tol)

    if getattr(args, "epsilon", None):
        epsilons = [float(x) for x in str(args.epsilon).split(",") if x.strip()]
    elif run.get("epsilons") is not None:
        epsilons = [float(x) for x in run["epsilons"]]
    else:
        epsilons = _default_epsilons()

    label = str(run.get("label", path.stem))
    out_dir = args.out if args.out is not None else str(run.get("out_dir", path.parent / f"{label}_out"))
    return ProblemConfig(
        symbol, radius, t_count, alpha_max, tol, epsilons, str(out_dir), label, perturbation
    )


def _write_tracks_csv(form, path) -> bool:
    """Eigenvalue tracks for plotting; skipped when the table would be huge."""
    T, N, m = form.Lam.shape
    if T * N * m > TRACKS_ROW_CAP:
        return False
    import csv

    lattice = form.lattice
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"xi{i + 1}" for i in range(lattice.n)] + ["t_index", "branch", "re", "im"])
        for i in range(N):
            base = [int(v) for v in lattice.points[i]]
            for j in range(T):
                for k in range(m):
                    z = form.Lam[j, i, k]
                    w.writerow(base + [j, k, repr(float(z.real)), repr(float(z.imag))])
    return True


# ------------------------------------------------------------------ commands


def cmd_triangularize(cfg: ProblemConfig) -> tuple[RunReport, int]:
    t0 = time.perf_counter()
    lattice = cfg.lattice()
    field_ = eigen_field(cfg.symbol, lattice, cfg.tol)
    form = smooth_triangularize(field_, cfg.symbol, cfg.tol)
    cond = verify_strong_conditions(form, field_, cfg.tol, cfg.alpha_max)
    elapsed = time.perf_counter() - t0

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest, warnings = [], []
    form.export_json(out / "triangular_form.json")
    manifest.append("triangular_form.json")
    with open(out / "condition_report.json", "w") as fh:
        json.dump(cond.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.append("condition_report.json")
    if _write_tracks_csv(form, out / "eigenvalue_tracks.csv"):
        manifest.append("eigenvalue_tracks.csv")
    else:
        warnings.append("eigenvalue_tracks.csv skipped: table exceeds the row cap")

    results = {
        "summary": form.summary(),
        "reconstruction_residual": claim(
            form.residual, "smooth_triangularize reconstruction", "resid_tol", cfg.tol.resid_tol
        ),
        "B_max": claim(
            float(np.abs(form.B).max()),
            "sup of the conjugation remainder B over the lattice",
            "eig_tol",
            cfg.tol.eig_tol,
        ),
        "B_exact_zero": form.b_is_exact_zero,
        "strong_conditions_ok": cond.strong_ok,
        "condition_report": cond.to_json_dict(),
    }
    report = RunReport(
        "triangularize", cfg.resolved(), results, manifest, warnings, {"seconds": elapsed}
    )
    return report, 0


def cmd_diagnose(cfg: ProblemConfig) -> tuple[RunReport, int]:
    t0 = time.perf_counter()
    lattice = cfg.lattice()
    if cfg.symbol.is_t_constant:
        verdict = diagnose_dt_plus_Q(cfg.symbol, lattice, cfg.tol)
    else:
        verdict = diagnose_variable(cfg.symbol, lattice, cfg.tol, cfg.alpha_max)
    elapsed = time.perf_counter() - t0

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    verdict.write_json(out / "verdict.json")
    verdict.write_annuli_csv(out / "annulus_minima.csv")
    manifest = ["verdict.json", "annulus_minima.csv"]

    results = {
        "verdict": verdict.verdict,
        "provenance": verdict.provenance,
        "m_hat": claim(
            verdict.m_hat,
            "diophantine_fit loss exponent over dyadic annuli",
            "fit_tol",
            cfg.tol.fit_tol,
        ),
        "witness_count": len(verdict.witnesses),
        "detail": verdict.to_json_dict(),
    }
    report = RunReport(
        "diagnose", cfg.resolved(), results, manifest, list(verdict.notes), {"seconds": elapsed}
    )
    return report, 0


def _read_rhs(paths, lattice: Lattice, m: int):
    if len(paths) != m:
        raise ConfigError(f"the symbol has {m} components; got {len(paths)} --rhs file(s)")
    tables = []
    for p in paths:
        try:
            tables.append(ModeTable.read_csv(p, lattice))
        except ValueError as e:
            raise GridMismatch(f"{p}: {e}") from None
    return tables if m > 1 else tables[0]


def cmd_solve(cfg: ProblemConfig, rhs_paths) -> tuple[RunReport, int]:
    lattice = cfg.lattice()
    f = _read_rhs(rhs_paths, lattice, cfg.symbol.m)
    t0 = time.perf_counter()
    sol = solve_full(cfg.symbol, f, tol=cfg.tol)
    elapsed = time.perf_counter() - t0

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for k, tab in enumerate(sol.v):
        name = f"solution_{k}.csv"
        tab.write_csv(out / name)
        manifest.append(name)
    sol.write_json(out / "solution.json")
    manifest.append("solution.json")

    solved = ~np.isnan(sol.residual)
    decay = []
    if solved.any():
        sub = lattice.restricted(solved)
        for tab in sol.v:
            try:
                decay.append(classify_decay(ModeTable(sub, tab.data[solved]), cfg.alpha_max, cfg.tol).category)
            except InsufficientData:
                decay.append("Unclassified")
    else:
        decay = ["Unclassified"] * sol.m
    warnings = [f"{p}: {r}" for p, r in sorted(sol.skip_reasons.items())]

    results = {
        "residual": claim(
            sol.max_residual(),
            "solve_full residual against the original system",
            "ode_tol",
            cfg.tol.ode_tol,
        ),
        "n_solved": int(solved.sum()),
        "skipped": [list(p) for p in sol.skipped],
        "decay": decay,
        "formula_counts": sol.to_json_dict()["formula_counts"],
    }
    report = RunReport("solve", cfg.resolved(), results, manifest, warnings, {"seconds": elapsed})
    return report, 0


def cmd_perturb(cfg: ProblemConfig) -> tuple[RunReport, int]:
    if cfg.perturbation is None:
        raise ConfigError("the perturb command needs a 'perturbation' symbol in the problem file")
    lattice = cfg.lattice()
    t0 = time.perf_counter()
    fit, verdict = perturbation_track(
        cfg.symbol, cfg.perturbation, np.asarray(cfg.epsilons, dtype=float), lattice, cfg.tol
    )
    elapsed = time.perf_counter() - t0

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fit.write_json(out / "perturbation_fit.json")
    verdict.write_json(out / "verdict.json")
    manifest = ["perturbation_fit.json", "verdict.json"]

    results = {
        "fit_residual": claim(
            fit.residual, "perturbation series least-squares misfit", "res_tol", cfg.tol.res_tol
        ),
        "commuting": fit.commuting,
        "degree": fit.degree,
        "verdict": verdict.verdict,
        "provenance": verdict.provenance,
        "m_hat": verdict.m_hat,
    }
    report = RunReport(
        "perturb", cfg.resolved(), results, manifest, list(verdict.notes), {"seconds": elapsed}
    )
    return report, 0


# -------------------------------------------------------------------- examples

_ONE = parse_spatial_expr("1")
_XI = parse_spatial_expr("xi1")


def _zero_t():
    return TrigPolynomial.constant(0.0)


def _transport_pair(b0: float) -> MatrixSymbol:
    """[[sin t, b0 xi], [b0 xi, sin t]]: branches sin t +- b0 xi."""
    a = TrigPolynomial.sine(1, 1.0)
    b = TrigPolynomial.constant(b0)
    return MatrixSymbol(2, 1, [[(a, _ONE), (b, _XI)], [(b, _XI), (a, _ONE)]])


def _wave_companion(alpha: float, beta: float) -> MatrixSymbol:
    return MatrixSymbol(
        2,
        1,
        [
            [(_zero_t(), _ONE), (TrigPolynomial.constant(1.0), _ONE)],
            [
                (TrigPolynomial.constant(-(beta**2)), parse_spatial_expr("abs_xi^2")),
                (TrigPolynomial.constant(2.0 * alpha), parse_spatial_expr("abs_xi")),
            ],
        ],
    )


def _example_closed_form(tol) -> tuple[bool, str]:
    b0 = np.sqrt(2.0)
    # xi = 0 is degenerate (both branches collapse to sin t), so the closed
    # form S = [[1, 0], [s, 1]] with |s| = 1 is asserted away from it
    pts = [(x,) for x in range(-64, 65) if x != 0]
    lattice = Lattice.from_points(1, pts, 64)
    Q = _transport_pair(b0)
    field_ = eigen_field(Q, lattice, tol)
    form = smooth_triangularize(field_, Q, tol)
    b_max = float(np.abs(form.B).max())
    xi = lattice.points[:, 0].astype(float)
    n12 = np.abs(form.N_mat[:, :, 0, 1])
    n12_err = float(np.abs(n12 - np.abs(b0 * xi)[None, :]).max())
    s_unit = float(np.abs(np.abs(form.S[:, :, 1, 0]) - 1.0).max())
    s_shape = float(
        max(
            np.abs(form.S[:, :, 0, 0] - 1.0).max(),
            np.abs(form.S[:, :, 0, 1]).max(),
            np.abs(form.S[:, :, 1, 1] - 1.0).max(),
        )
    )
    ok = (
        form.residual < 1e-12
        and b_max < 1e-12
        and n12_err < 1e-12
        and s_unit < 1e-12
        and s_shape < 1e-12
    )
    return ok, (
        f"residual {form.residual:.2e}, B_max {b_max:.1e}, "
        f"|N12 - b0 xi| {n12_err:.1e}, unit-slope error {s_unit:.1e}"
    )


def _example_wave_gh(tol) -> tuple[bool, str]:
    v = diagnose_dt_plus_Q(_wave_companion(1.0, 2.0), Lattice(1, 64, t_count=64), tol)
    return v.verdict == GH_CONSISTENT, f"verdict {v.verdict} ({v.provenance})"


def _example_resonant(tol) -> tuple[bool, str]:
    v = diagnose_variable(_transport_pair(1.0), Lattice(1, 16, t_count=64), tol)
    ok = v.verdict == NONGH_RESONANT and len(v.witnesses) > 0
    return ok, f"verdict {v.verdict}, {len(v.witnesses)} witnesses"


def _example_sqrt2_sweep(tol, radius: int) -> tuple[bool, str]:
    v = diagnose_variable(_transport_pair(np.sqrt(2.0)), Lattice(1, radius, t_count=64), tol)
    ok = v.verdict == GH_CONSISTENT and v.m_hat is not None and 0.8 <= v.m_hat <= 1.2
    return ok, f"verdict {v.verdict}, m_hat {v.m_hat}"


def _example_perturbation(tol) -> tuple[bool, str]:
    pts = [(l,) for l in range(1, 41)]
    lattice = Lattice.from_points(1, pts, 8)
    ell = np.array([p[0] for p in pts], dtype=float)
    N = len(ell)
    L = np.zeros((N, 2, 2), dtype=complex)
    L[:, 0, 0] = ell
    L[:, 1, 1] = -ell
    q = 1.0 / (1.0 + ell)
    Qp = np.zeros((N, 2, 2), dtype=complex)
    Qp[:, 0, 1] = q
    Qp[:, 1, 0] = q
    fit, _ = perturbation_track(L, Qp, np.linspace(-0.1, 0.1, 9), lattice, tol)
    want = -(q**2) / (2.0 * ell)  # second-order shift of the lower branch
    k = np.argmin(np.abs(fit.sigma[:, :, 0].real + ell[:, None]), axis=1)
    got = fit.sigma[np.arange(N), k, 2].real
    rel = float(np.max(np.abs(got - want) / np.abs(want)))
    return rel < 1e-4, f"sigma2 relative error {rel:.2e} over {N} points"


def _example_small_lattice(tol) -> tuple[bool, str]:
    v = diagnose_variable(_transport_pair(np.sqrt(2.0)), Lattice(1, 4, t_count=64), tol)
    ok = v.verdict in (GH_CONSISTENT, INCONCLUSIVE)
    return ok, f"verdict {v.verdict} (degraded data must not fake a NonGH call)"


def cmd_examples(args) -> tuple[RunReport, int]:
    tol = _tol_overrides(DEFAULT_TOL, args.tol)
    radius = args.radius if args.radius is not None else 2048
    rows = [
        ("closed-form-triangularization", lambda: _example_closed_form(tol)),
        ("wave-system-consistent", lambda: _example_wave_gh(tol)),
        ("integer-transport-resonant", lambda: _example_resonant(tol)),
        ("irrational-transport-sweep", lambda: _example_sqrt2_sweep(tol, radius)),
        ("two-level-perturbation-series", lambda: _example_perturbation(tol)),
        ("small-lattice-degradation", lambda: _example_small_lattice(tol)),
    ]
    matrix = []
    timings = {}
    all_ok = True
    for name, run in rows:
        t0 = time.perf_counter()
        try:
            ok, detail = run()
        except Exception as e:  # a crash is a failed row, not a dead matrix
            ok, detail = False, f"{type(e).__name__}: {e}"
        timings[name] = time.perf_counter() - t0
        matrix.append({"name": name, "ok": ok, "detail": detail})
        all_ok = all_ok and ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:34s} {detail}")

    report = RunReport(
        "examples",
        {"radius": radius, "tol": asdict(tol)},
        {"matrix": matrix, "all_ok": all_ok},
        [],
        [],
        timings,
    )
    if args.out:
        report.write(args.out)
    return report, 0 if all_ok else 1


# ------------------------------------------------------------------- plumbing


class _Parser(argparse.ArgumentParser):
    # usage problems must exit 1, not argparse's default 2 (2 is reserved
    # for mathematical precondition failures)
    def error(self, message):
        self.exit(1, json.dumps({"error": "usage", "detail": message}) + "\n")


def _add_common(p, config_required=True):
    if config_required:
        p.add_argument("--config", required=True, help="problem JSON file")
    p.add_argument("--radius", type=int, default=None, help="lattice radius")
    p.add_argument("--tgrid", type=int, default=None, help="time samples per period")
    p.add_argument("--alpha-max", type=int, default=None, dest="alpha_max")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hypolab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("triangularize", help="smooth triangular form + condition report")
    _add_common(p)

    p = sub.add_parser("diagnose", help="full pipeline to a verdict")
    _add_common(p)

    p = sub.add_parser("solve", help="solve D_t u + Q u = f from ModeTable CSV data")
    _add_common(p)
    p.add_argument("--rhs", action="append", required=True, metavar="CSV",
                   help="one file per component, repeatable")

    p = sub.add_parser("perturb", help="perturbation series and perturbed verdict")
    _add_common(p)
    p.add_argument("--epsilon", default=None, help="comma-separated epsilon grid")

    p = sub.add_parser("examples", help="run the bundled example matrix")
    p.add_argument("--radius", type=int, default=None, help="radius for the sweep row")
    p.add_argument("--out", default=None)
    p.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE")
    return parser


def _fail(code: int, exc: BaseException) -> int:
    detail = {"error": type(exc).__name__, "detail": str(exc)}
    if isinstance(exc, BranchCrossingError):
        detail["witnesses"] = [[list(p), list(span)] for p, span in exc.flags[:32]]
    print(json.dumps(detail), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0

    try:
        if args.command == "examples":
            report, code = cmd_examples(args)
            return code
        cfg = load_config(args)
        if args.command == "triangularize":
            report, code = cmd_triangularize(cfg)
        elif args.command == "diagnose":
            report, code = cmd_diagnose(cfg)
        elif args.command == "solve":
            report, code = cmd_solve(cfg, args.rhs)
        else:
            report, code = cmd_perturb(cfg)
    except _USAGE_ERRORS as e:
        return _fail(1, e)
    except _MATH_ERRORS as e:
        return _fail(2, e)
    except ValueError as e:
        return _fail(1, e)

    path = report.write(cfg.out_dir)
    if "verdict" in report.results:
        print(f"verdict: {report.results['verdict']}")
    print(f"report: {path}")
    for w in report.warnings[:8]:
        print(f"warning: {w}")
    if len(report.warnings) > 8:
        print(f"warning: ... {len(report.warnings) - 8} more")
    return code


if __name__ == "__main__":
    sys.exit(main())
