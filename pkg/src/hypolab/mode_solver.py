"""Explicit periodic mode solves, back-substitution, and counterexamples.

The scalar mode equation D_t v + lam(t) v = g(t) (with D_t = -i d/dt) on one
period inverts in closed form whenever the time average lam0 of lam stays
away from the integers: conjugating by exp(i A(t)), A an antiderivative of
lam, reduces the equation to division by lam0 + k on Fourier coefficients.
The forward and backward integral representations found in the derivation
collapse to this single spectral expression; solutions still carry a
forward/backward label recording which of the two integrals would have been
admissible without the imaginary-part centering performed here.

Triangular systems are solved bottom row first, each solved component
feeding the right-hand sides above it. Full systems conjugate back through
the smooth triangularization, with the rapidly-decaying remainder handled
by a per-frequency fixed-point correction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .params import DEFAULT_TOL, Tolerances
from .symbol_algebra import Lattice, MatrixSymbol
from .fourier_tools import (
    SMOOTH,
    ModeTable,
    classify_decay,
    mean_removed_antiderivative,
    spectral_derivative,
)
from .triangularization import BranchCrossingError, eigen_field, smooth_triangularize
from .diagnostics import siegel_distance

__all__ = [
    "Resonant",
    "NoConvergence",
    "EmptyWitnessList",
    "ModeSolution",
    "solve_periodic_mode",
    "mode_residual",
    "back_substitute",
    "solve_full",
    "build_nonsmooth_solution",
]

FORWARD = "forward"
BACKWARD = "backward"


class Resonant(ArithmeticError):
    """The branch average sits on an integer: the periodic inverse is
    singular and no particular solution exists for generic data."""

    def __init__(self, lam0, xi=None):
        self.lam0 = complex(lam0)
        self.xi = xi
        where = f" at xi = {xi}" if xi is not None else ""
        super().__init__(
            f"resonant mode{where}: time average {self.lam0} is an integer within res_tol"
        )


class NoConvergence(RuntimeError):
    """The remainder-correction fixed point made no progress anywhere."""


class EmptyWitnessList(ValueError):
    """A counterexample needs at least one witness frequency."""


def mode_residual(lam, v, g):
    """max over the grid of |D_t v + lam v - g|, derivative in Fourier.

    Works on (T,) vectors or batched (..., T) arrays along the last axis.
    """
    r = -1j * spectral_derivative(np.asarray(v, complex), 1, axis=-1)
    r = r + np.asarray(lam, complex) * v - np.asarray(g, complex)
    return np.max(np.abs(r), axis=-1)


def _solve_rows(lam, g, tol):
    """Vectorized scalar solves on (R, T) sample rows.

    Returns (v, lam0, ok, reasons, labels): v holds NaN on failed rows,
    reasons maps failed row index -> text, labels is the forward/backward
    admissibility tag per row.
    """
    lam = np.asarray(lam, dtype=complex)
    g = np.asarray(g, dtype=complex)
    R, T = lam.shape
    t = np.linspace(0.0, 2.0 * np.pi, T, endpoint=False)
    k = np.fft.fftfreq(T, d=1.0 / T)

    A, lam0 = mean_removed_antiderivative(lam, axis=1)
    dist = siegel_distance(lam0)
    resonant = dist <= tol.res_tol

    imA = A.imag
    center = 0.5 * (imA.max(axis=1) + imA.min(axis=1))
    half_range = imA.max(axis=1) - center
    overflow = half_range > tol.exp_cap

    run = lam0.imag[:, None] * t[None, :] + (imA - imA[:, :1])
    labels = np.where(run.min(axis=1) >= -tol.exp_cap, FORWARD, BACKWARD)

    ok = ~(resonant | overflow)
    v = np.full((R, T), np.nan, dtype=complex)
    if ok.any():
        idx = np.nonzero(ok)[0]
        Ac = A[idx] - 1j * center[idx, None]
        w = np.exp(1j * Ac) * g[idx]
        what = np.fft.fft(w, axis=1)
        vhat = what / (lam0[idx, None] + k[None, :])
        v[idx] = np.exp(-1j * Ac) * np.fft.ifft(vhat, axis=1)

    reasons = {}
    for i in np.nonzero(resonant)[0]:
        reasons[int(i)] = f"resonant: branch average {lam0[i]:.6g} is integer within res_tol"
    for i in np.nonzero(overflow & ~resonant)[0]:
        reasons[int(i)] = (
            f"overflow: imaginary antiderivative half-range {half_range[i]:.3g} "
            f"exceeds exp_cap = {tol.exp_cap:g}"
        )
    return v, lam0, ok, reasons, labels


def solve_periodic_mode(lam, g, tol: Tolerances = DEFAULT_TOL):
    """Periodic solution of D_t v + lam(t) v = g(t) on the uniform grid.

    lam and g are (T,) complex samples, T a power of two. The average lam0
    must keep siegel_distance(lam0) > res_tol, otherwise Resonant is raised.
    The imaginary part of the antiderivative of lam is centered before
    exponentiating; if even the centered range exceeds exp_cap the solve
    would be pure overflow and a ValueError is raised instead of garbage.
    """
    lam = np.asarray(lam, dtype=complex)
    g = np.asarray(g, dtype=complex)
    if lam.ndim != 1 or lam.shape != g.shape:
        raise ValueError("lam and g must be matching 1-d sample vectors")
    v, lam0, ok, reasons, _ = _solve_rows(lam[None, :], g[None, :], tol)
    if not ok[0]:
        if reasons[0].startswith("resonant"):
            raise Resonant(lam0[0])
        raise ValueError(reasons[0])
    return v[0]


# -------------------------------------------------------------- ModeSolution


@dataclass
class ModeSolution:
    """Solution tables with the bookkeeping a verdict can be audited by.

    v holds one ModeTable per component (a single table for scalar
    problems); residual is the per-frequency equation residual relative to
    1 + sup|g| (NaN where skipped); skipped lists frequencies the solver
    refused (resonant branch, overflow, flagged crossing, no convergence)
    with the reason kept in skip_reasons; formula records per frequency
    whether the forward or the backward integral form was admissible
    (backward wins the label when any component needed it).
    """

    v: list
    residual: np.ndarray
    skipped: list
    formula: dict
    skip_reasons: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def lattice(self) -> Lattice:
        return self.v[0].lattice

    @property
    def m(self) -> int:
        return len(self.v)

    def table(self, k: int = 0) -> ModeTable:
        return self.v[k]

    def max_residual(self) -> float:
        good = self.residual[~np.isnan(self.residual)]
        return float(good.max()) if good.size else 0.0

    def to_json_dict(self) -> dict:
        labels = list(self.formula.values())
        return {
            "m": self.m,
            "n_points": len(self.lattice),
            "n_solved": int(np.sum(~np.isnan(self.residual))),
            "max_residual": self.max_residual(),
            "skipped": [list(p) for p in self.skipped],
            "skip_reasons": {str(p): r for p, r in sorted(self.skip_reasons.items())},
            "formula_counts": {
                FORWARD: labels.count(FORWARD),
                BACKWARD: labels.count(BACKWARD),
            },
            "notes": list(self.notes),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _coerce_modes(g, lattice=None):
    """Accept a ModeTable, a list of them, or a (T, N, m) array.

    Returns (arr, lattice) with arr shaped (T, N, m).
    """
    if isinstance(g, ModeTable):
        g = [g]
    if isinstance(g, (list, tuple)) and g and isinstance(g[0], ModeTable):
        lattice = g[0].lattice
        for tab in g[1:]:
            if tab.lattice is not lattice and not np.array_equal(
                tab.lattice.points, lattice.points
            ):
                raise ValueError("component tables must share one lattice")
        arr = np.stack([tab.data.T for tab in g], axis=2)  # (T, N, m)
        return arr, lattice
    arr = np.asarray(g, dtype=complex)
    if lattice is None:
        raise ValueError("array data needs an explicit lattice")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[:2] != (lattice.t.size, len(lattice)):
        raise ValueError(
            f"data must be (T, N, m) = ({lattice.t.size}, {len(lattice)}, m), got {arr.shape}"
        )
    return arr, lattice


def back_substitute(
    Lam,
    N_mat,
    g,
    lattice: Lattice = None,
    tol: Tolerances = DEFAULT_TOL,
) -> ModeSolution:
    """Solve the triangular system (D_t + Lam + N) v = g row by row.

    Lam is (T, N, m) diagonal samples, N_mat (T, N, m, m) strictly upper
    (None for a decoupled system), g a ModeTable / list of ModeTables /
    (T, N, m) array. Row m has no coupling and is solved first; each solved
    component is folded into the right-hand sides above it. A frequency
    where any branch average is resonant is skipped whole and listed: the
    triangular structure would push the singularity into every row above.
    """
    g_arr, lattice = _coerce_modes(g, lattice)
    T, N, m = g_arr.shape
    Lam = np.asarray(Lam, dtype=complex)
    if Lam.shape != (T, N, m):
        raise ValueError(f"Lam must have shape {(T, N, m)}, got {Lam.shape}")
    if N_mat is None:
        N_mat = np.zeros((T, N, m, m), dtype=complex)
    N_mat = np.asarray(N_mat, dtype=complex)
    if N_mat.shape != (T, N, m, m):
        raise ValueError(f"N must have shape {(T, N, m, m)}, got {N_mat.shape}")
    low = np.abs(np.tril(N_mat)).max() if m > 1 else float(np.abs(N_mat).max())
    if low > 0.0:
        raise ValueError("N must be strictly upper triangular")

    active = np.ones(N, dtype=bool)
    skip_reasons = {}
    labels = np.full((N, m), "", dtype=object)
    v = np.full((T, N, m), np.nan, dtype=complex)

    for k in range(m - 1, -1, -1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        rhs = g_arr[:, idx, k].copy()
        for j in range(k + 1, m):
            rhs -= N_mat[:, idx, k, j] * v[:, idx, j]
        vk, _, ok, reasons, labs = _solve_rows(Lam[:, idx, k].T, rhs.T, tol)
        v[:, idx, k] = vk.T
        labels[idx, k] = labs
        if not ok.all():
            bad = idx[~ok]
            for r, i in zip(np.nonzero(~ok)[0], bad):
                skip_reasons[lattice.point_tuple(int(i))] = f"branch {k}: {reasons[int(r)]}"
            active[bad] = False
            v[:, bad, :] = np.nan

    residual = np.full(N, np.nan)
    if active.any():
        idx = np.nonzero(active)[0]
        coupled = Lam[:, idx, :] * v[:, idx, :] + np.einsum(
            "tnab,tnb->tna", N_mat[:, idx], v[:, idx]
        )
        r = -1j * spectral_derivative(v[:, idx, :], 1, axis=0) + coupled - g_arr[:, idx, :]
        size = 1.0 + np.abs(g_arr[:, idx, :]).max(axis=(0, 2))
        residual[idx] = np.abs(r).max(axis=(0, 2)) / size

    skipped = sorted(skip_reasons)
    formula = {
        lattice.point_tuple(int(i)): (
            BACKWARD if BACKWARD in labels[i] else FORWARD
        )
        for i in np.nonzero(active)[0]
    }
    notes = []
    if skipped:
        notes.append(f"{len(skipped)} of {N} frequencies skipped")
    tables = [ModeTable(lattice, v[:, :, k].T) for k in range(m)]
    return ModeSolution(tables, residual, skipped, formula, skip_reasons, notes)


def solve_full(
    Q: MatrixSymbol,
    f,
    lattice: Lattice = None,
    tol: Tolerances = DEFAULT_TOL,
) -> ModeSolution:
    """Solve D_t u + Q(t, D_x) u = f through the smooth triangular form.

    f is a ModeTable (or list of m of them, or a (T, N, m) array with an
    explicit lattice). The symbol is triangularized, v solves
    (D_t + Lam + N) v = S^-1 f - B v by fixed-point iteration on the
    rapidly-decaying remainder B, and u = S v is returned with the residual
    measured against the original system, not the triangular one.

    Frequencies with flagged branch crossings are skipped (the reduction is
    not trusted there); a frequency whose correction loop stalls is skipped
    with NoConvergence raised only when no frequency converged at all.
    """
    f_arr, lattice = _coerce_modes(f, lattice)
    T, N, m = f_arr.shape
    if Q.m != m:
        raise ValueError(f"symbol has {Q.m} components, data has {m}")
    if lattice.t.size != T:
        raise ValueError("data grid does not match the lattice t grid")

    field = eigen_field(Q, lattice, tol)
    lat = lattice
    crossing_skips = []
    if field.flags:
        crossing_skips = sorted(field.flagged_points())
        keep = ~field.flagged_mask()
        if not keep.any():
            raise BranchCrossingError(field.flags)
        lat = lattice.restricted(keep)
        field = eigen_field(Q, lat, tol)
        if field.flags:
            raise BranchCrossingError(field.flags)

    sel = np.array([lattice.index_of(tuple(p)) for p in lat.points])
    form = smooth_triangularize(field, Q, tol)
    g_arr = np.einsum("tnab,tnb->tna", form.S_inv, f_arr[:, sel, :])

    B = form.B
    b_zero = form.b_is_exact_zero or float(np.abs(B).max()) == 0.0
    sol = back_substitute(form.Lam, form.N_mat, g_arr, lat, tol)
    v_arr = np.stack([tab.data.T for tab in sol.v], axis=2)
    stalled = {}
    if not b_zero:
        solved = ~np.isnan(sol.residual)
        converged = np.zeros(len(lat), dtype=bool)
        for _ in range(tol.fp_maxiter):
            rhs = g_arr - np.einsum("tnab,tnb->tna", B, v_arr)
            sol = back_substitute(form.Lam, form.N_mat, rhs, lat, tol)
            new = np.stack([tab.data.T for tab in sol.v], axis=2)
            du = np.abs(new - v_arr).max(axis=(0, 2))
            size = 1.0 + np.abs(v_arr).max(axis=(0, 2))
            with np.errstate(invalid="ignore"):
                converged = du / size < tol.fp_tol
            v_arr = new
            solved = ~np.isnan(sol.residual)
            if bool(np.all(converged | ~solved)):
                break
        if solved.any() and not (converged & solved).any():
            raise NoConvergence(
                f"remainder correction made no frequency converge in {tol.fp_maxiter} steps"
            )
        for i in np.nonzero(solved & ~converged)[0]:
            p = lat.point_tuple(int(i))
            stalled[p] = f"remainder correction did not converge in {tol.fp_maxiter} steps"
            v_arr[:, i, :] = np.nan

    u_sub = np.einsum("tnab,tnb->tna", form.S, v_arr)
    Qv, _ = Q.values(lat)
    r = (
        -1j * spectral_derivative(u_sub, 1, axis=0)
        + np.einsum("tnab,tnb->tna", Qv, u_sub)
        - f_arr[:, sel, :]
    )
    size = 1.0 + np.abs(f_arr[:, sel, :]).max(axis=(0, 2))
    res_sub = np.abs(r).max(axis=(0, 2)) / size

    u_full = np.full((T, N, m), np.nan, dtype=complex)
    residual = np.full(N, np.nan)
    u_full[:, sel, :] = u_sub
    residual[sel] = res_sub

    skip_reasons = dict(sol.skip_reasons)
    skip_reasons.update(stalled)
    for p in crossing_skips:
        skip_reasons[p] = "flagged branch crossing; triangular reduction not trusted"
    skipped = sorted(skip_reasons)
    for p in skipped:
        i = lattice.index_of(p)
        u_full[:, i, :] = np.nan
        residual[i] = np.nan

    notes = list(sol.notes)
    if crossing_skips:
        notes.append(f"{len(crossing_skips)} frequencies dropped for flagged crossings")
    if b_zero:
        notes.append("remainder B vanished; no correction loop needed")
    tables = [ModeTable(lattice, u_full[:, :, k].T) for k in range(m)]
    return ModeSolution(tables, residual, skipped, sol.formula, skip_reasons, notes)


# ----------------------------------------------------------- counterexamples


def build_nonsmooth_solution(
    lam,
    witnesses,
    lattice: Lattice,
    tol: Tolerances = DEFAULT_TOL,
):
    """Homogeneous-mode counterexample data from a resonant branch.

    lam is the (T, N) sample table of one eigenvalue branch; witnesses the
    frequencies carrying the construction (typically a verdict's witness
    list). Each witness mode gets u_hat = kappa exp(-i (r t + osc)) with r
    the nearest integer to the branch average, osc the periodic part of the
    antiderivative of lam, and kappa normalizing sup_t |u_hat| = 1; the
    data mode is f_hat = i (lam0 - r) u_hat, which vanishes in the exact
    resonance case and decays rapidly for superpolynomial witnesses. Every
    mode satisfies D_t u_hat + lam u_hat = -i f_hat to quadrature accuracy.

    Returns (u, f) as ModeTables. Raises EmptyWitnessList without witnesses
    and ValueError if the result still classifies as smooth (witnesses
    clustered near the origin cannot exhibit non-smoothness).
    """
    wit = [tuple(int(c) for c in np.atleast_1d(w)) for w in witnesses]
    if not wit:
        raise EmptyWitnessList("no witness frequencies to build on")
    lam = np.asarray(lam, dtype=complex)
    T = lattice.t.size
    if lam.shape != (T, len(lattice)):
        raise ValueError(f"lam must be (T, N) = {(T, len(lattice))}, got {lam.shape}")
    t = lattice.t

    u_data = np.zeros((len(lattice), T), dtype=complex)
    f_data = np.zeros((len(lattice), T), dtype=complex)
    for p in wit:
        i = lattice.index_of(p)
        A, lam0 = mean_removed_antiderivative(lam[:, i])
        osc = A - A[0]
        r = float(np.round(lam0.real))
        if 2.0 * abs(r) >= T:
            raise ValueError(
                f"witness {p} carries the integer phase {int(r)}, beyond the "
                f"Nyquist limit of t_count = {T}; enlarge the time grid"
            )
        expo = -1j * (r * t + osc)
        expo -= expo.real.max()  # normalize before exponentiating: sup = 1
        u_hat = np.exp(expo)
        u_data[i] = u_hat
        f_data[i] = 1j * (lam0 - r) * u_hat

    u = ModeTable(lattice, u_data)
    f = ModeTable(lattice, f_data)

    # the construction promises D_t u + lam u = -i f mode by mode
    res = mode_residual(lam.T, u.data, -1j * f.data)
    worst = float(res.max()) if res.size else 0.0
    if worst > tol.ode_tol:
        raise ValueError(f"construction residual {worst:.3e} exceeds ode_tol")

    report = classify_decay(u, tol=tol)
    if report.category == SMOOTH:
        raise ValueError(
            "witness modes classify as smooth on this lattice; they are too "
            "sparse or clustered near the origin to exhibit non-smoothness"
        )
    return u, f
