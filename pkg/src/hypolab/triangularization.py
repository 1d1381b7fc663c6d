"""Eigenvalue fields, Schur forms, and smooth triangularization of symbols.

The main pipeline: sample Q(t, xi) on the grid, extract eigenvalue and
eigenvector branches tracked continuously in t, then conjugate by explicit
unit-column stage matrices so that S^-1 Q S = Lambda + N with N strictly
upper triangular, and measure B = S^-1 D_t S. All claims about the result
(reconstruction residual, inverse pairing, decay of B) are checked on the
samples, never assumed.

Convention: D_t = -i d/dt throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import schur as _scipy_schur
from scipy.optimize import linear_sum_assignment

from .fourier_tools import spectral_derivative
from .params import DEFAULT_ALPHA_MAX, DEFAULT_TOL, MAX_SYSTEM_SIZE, Tolerances
from .symbol_algebra import (
    InsufficientData,
    Lattice,
    MatrixSymbol,
    OrderFit,
    estimate_order,
)

__all__ = [
    "EigenField",
    "TriangularForm",
    "ConditionReport",
    "EigenSolverFailure",
    "BranchCrossingError",
    "NoPivot",
    "NotCommuting",
    "eigen_field",
    "schur_constant",
    "simultaneous_schur",
    "smooth_step",
    "smooth_triangularize",
    "verify_strong_conditions",
    "branch_sort_key",
]


class EigenSolverFailure(RuntimeError):
    pass


class BranchCrossingError(RuntimeError):
    def __init__(self, flags):
        self.flags = list(flags)
        preview = ", ".join(str(f[0]) for f in self.flags[:4])
        super().__init__(
            f"{len(self.flags)} frequencies have flagged eigenvalue crossings (e.g. {preview}); "
            "restrict the lattice before triangularizing"
        )


class NoPivot(RuntimeError):
    def __init__(self, stage, best_ratio, witness):
        self.stage = stage
        self.best_ratio = best_ratio
        self.witness = witness
        super().__init__(
            f"stage {stage}: no eigenvector component stays away from zero "
            f"(best min ratio {best_ratio:.3e} at {witness})"
        )


class NotCommuting(RuntimeError):
    def __init__(self, i, j, rel):
        self.pair = (i, j)
        self.rel = rel
        super().__init__(f"matrices {i} and {j} do not commute (relative commutator {rel:.3e})")


def branch_sort_key(lam: np.ndarray, quantum: float = 0.0) -> np.ndarray:
    """Order indices for eigenvalues: by |lam|, ties by (Re, Im).

    quantum > 0 buckets each key to that resolution first; without it a
    symmetric pair like +-1 computed with last-bit noise never actually
    ties on |lam| and the Re tiebreak goes dead."""
    lam = np.asarray(lam)
    keys = [lam.imag, lam.real, np.abs(lam)]
    if quantum > 0.0:
        keys = [np.round(k / quantum) for k in keys]
    return np.lexsort(tuple(keys))


# ---------------------------------------------------------------- eigen field


@dataclass
class EigenField:
    """Branch-ordered eigenvalue/eigenvector samples of a symbol.

    lam[t, i, k] is branch k at time t and lattice point i; vec[t, i, :, k]
    the matching eigenvector, scaled so one fixed component (per branch and
    point) equals 1, which removes the solver's arbitrary per-sample phase.
    flags lists (xi, (t_lo, t_hi)) where branch tracking was ambiguous.
    """

    lattice: Lattice
    lam: np.ndarray  # (T, N, m)
    vec: np.ndarray  # (T, N, m, m)
    scale: np.ndarray  # (N,) max_t Frobenius norm of Q
    flags: list
    Q_values: np.ndarray  # (T, N, m, m)
    metadata: dict = dc_field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.lam.shape[2]

    @property
    def t(self) -> np.ndarray:
        return self.lattice.t

    def flagged_points(self) -> set:
        return {f[0] for f in self.flags}

    def flagged_mask(self) -> np.ndarray:
        bad = self.flagged_points()
        return np.array([self.lattice.point_tuple(i) in bad for i in range(len(self.lattice))])


def _track_branches_2(lam, vec):
    """Vectorized nearest-neighbor tracking for m = 2. Returns reordered
    (lam, vec) plus per-step arrays d1, d2 (match and runner-up gaps)."""
    T = lam.shape[0]
    d1 = np.zeros((T - 1, lam.shape[1], 2))
    d2 = np.zeros_like(d1)
    for j in range(1, T):
        prev = lam[j - 1]
        cur = lam[j]
        stay0 = np.abs(prev[:, 0] - cur[:, 0])
        stay1 = np.abs(prev[:, 1] - cur[:, 1])
        swap0 = np.abs(prev[:, 0] - cur[:, 1])
        swap1 = np.abs(prev[:, 1] - cur[:, 0])
        do_swap = (swap0 + swap1) < (stay0 + stay1)
        lam[j, do_swap] = lam[j, do_swap][:, ::-1]
        vec[j, do_swap] = vec[j, do_swap][:, :, ::-1]
        d1[j - 1, :, 0] = np.where(do_swap, swap0, stay0)
        d1[j - 1, :, 1] = np.where(do_swap, swap1, stay1)
        d2[j - 1, :, 0] = np.where(do_swap, stay0, swap0)
        d2[j - 1, :, 1] = np.where(do_swap, stay1, swap1)
    return d1, d2


def _same_time_gaps(lam):
    """Per (t, point, branch): distance to the nearest other branch at the
    same time sample. This is what decides 'coincident' (no flag), as opposed
    to the cross-time matching distances that decide 'ambiguous'."""
    T, N, m = lam.shape
    if m == 1:
        return np.full((T, N, 1), np.inf)
    diff = np.abs(lam[:, :, :, None] - lam[:, :, None, :])
    idx = np.arange(m)
    diff[:, :, idx, idx] = np.inf
    return diff.min(axis=3)


def _track_branches_general(lam, vec):
    """Per-point assignment tracking for m >= 3. Mutates lam/vec in place,
    returns d1, d2 arrays shaped (T-1, N, m)."""
    T, N, m = lam.shape
    d1 = np.zeros((T - 1, N, m))
    d2 = np.zeros_like(d1)
    for i in range(N):
        for j in range(1, T):
            cost = np.abs(lam[j - 1, i][:, None] - lam[j, i][None, :])
            rows, cols = linear_sum_assignment(cost)
            lam[j, i] = lam[j, i, cols]
            vec[j, i] = vec[j, i][:, cols]
            matched = cost[rows, cols]
            masked = cost.copy()
            masked[rows, cols] = np.inf
            d1[j - 1, i] = matched
            d2[j - 1, i] = masked[rows].min(axis=1)
    return d1, d2


def eigen_field(
    Q: MatrixSymbol,
    lattice: Lattice,
    tol: Tolerances = DEFAULT_TOL,
    values: Optional[np.ndarray] = None,
) -> EigenField:
    """Eigen-decompose Q(t, xi) on the grid with branch tracking in t.

    Branches are ordered by (|lam|, Re, Im) at t = 0 and then followed by
    nearest-neighbor matching across consecutive time samples. A step where
    the runner-up distance is within a factor 2 of the matched distance is
    flagged as a crossing, except when the branches are indistinguishable
    altogether (gap below eig_tol * scale), which is a harmless degeneracy.
    """
    if Q.m > MAX_SYSTEM_SIZE:
        raise ValueError(f"system size {Q.m} exceeds the supported maximum {MAX_SYSTEM_SIZE}")
    if values is None:
        values, errors = Q.values(lattice)
        if errors:
            (jk, xi, reason) = errors[0]
            raise EigenSolverFailure(
                f"symbol entry {jk} is singular at xi={xi}: {reason} "
                f"({len(errors)} singular samples total)"
            )
    values = np.asarray(values, dtype=complex)
    T, N, m, _ = values.shape
    scale = np.maximum(np.linalg.norm(values, axis=(2, 3)).max(axis=0), 1e-300)

    if m == 1:
        lam = values[:, :, 0, 0].copy().reshape(T, N, 1)
        vec = np.ones((T, N, 1, 1), dtype=complex)
        return EigenField(lattice, lam, vec, scale, [], values)

    try:
        lam, vec = np.linalg.eig(values)
    except np.linalg.LinAlgError as e:
        raise EigenSolverFailure(f"dense eigensolver failed: {e}") from None

    # residual contract, per sample and branch
    resid = values @ vec - vec * lam[:, :, None, :]
    worst = np.abs(resid).max(axis=2) / scale[None, :, None]
    if worst.max() > tol.eig_tol:
        t_i, x_i, b_i = np.unravel_index(np.argmax(worst), worst.shape)
        raise EigenSolverFailure(
            f"eigen residual {worst.max():.3e} exceeds eig_tol at "
            f"t index {t_i}, xi {lattice.point_tuple(x_i)}, branch {b_i}"
        )

    # branch order at t = 0, applied pointwise
    for i in range(N):
        order = branch_sort_key(lam[0, i], quantum=tol.eig_tol * max(1.0, scale[i]))
        lam[:, i] = lam[:, i][:, order]  # same initial order at every t, then tracked
        vec[:, i] = vec[:, i][:, :, order]

    floor = tol.eig_tol * scale  # (N,)
    if m == 2:
        d1, d2 = _track_branches_2(lam, vec)
    else:
        d1, d2 = _track_branches_general(lam, vec)

    flags = []
    gaps = _same_time_gaps(lam)  # (T, N, m)
    fl = floor[None, :, None]
    coincident = (gaps[:-1] <= fl) & (gaps[1:] <= fl)  # degenerate on both ends
    ambiguous = (~coincident) & (d2 < 2.0 * d1)
    for j, i in zip(*np.nonzero(ambiguous.any(axis=2))):
        flags.append((lattice.point_tuple(i), (float(lattice.t[j]), float(lattice.t[j + 1]))))

    # periodic closure: the wrap-around step t_{T-1} -> t_0 + 2pi must match
    # branches identically, else the tracked field is not periodic in t
    cost = np.abs(lam[T - 1, :, :, None] - lam[0, :, None, :])  # (N, m, m)
    idx = np.arange(m)
    d1c = cost[:, idx, idx]
    off = cost.copy()
    off[:, idx, idx] = np.inf
    d2c = off.min(axis=2)
    co_c = (gaps[T - 1] <= floor[:, None]) & (gaps[0] <= floor[:, None])
    bad = (~co_c) & (d2c < 2.0 * d1c)
    for i in np.nonzero(bad.any(axis=1))[0]:
        flags.append((lattice.point_tuple(i), (float(lattice.t[T - 1]), float(2 * np.pi))))

    # fix one pivot component per (point, branch) and rescale so it equals 1
    for i in range(N):
        for k in range(m):
            comps = np.abs(vec[:, i, :, k])  # (T, m)
            p = int(np.argmax(comps.min(axis=0)))
            piv = vec[:, i, p, k]
            if np.min(np.abs(piv)) > 1e-300:
                vec[:, i, :, k] = vec[:, i, :, k] / piv[:, None]
                vec[:, i, p, k] = 1.0  # z/z can miss 1.0 by an ulp

    return EigenField(lattice, lam, vec, scale, flags, values)


# ------------------------------------------------------------ constant Schur


def _swap_adjacent(Tm: np.ndarray, S: np.ndarray, i: int) -> None:
    """Unitary swap of diagonal entries i, i+1 of upper-triangular Tm,
    updating S in place (A = S Tm S* is preserved)."""
    a = Tm[i, i]
    b = Tm[i + 1, i + 1]
    c = Tm[i, i + 1]
    x = np.array([c, b - a], dtype=complex)
    nx = np.linalg.norm(x)
    if nx == 0:
        return  # equal eigenvalues, nothing to reorder
    x /= nx
    G = np.array([[x[0], -np.conj(x[1])], [x[1], np.conj(x[0])]], dtype=complex)
    Tm[i : i + 2, :] = G.conj().T @ Tm[i : i + 2, :]
    Tm[:, i : i + 2] = Tm[:, i : i + 2] @ G
    S[:, i : i + 2] = S[:, i : i + 2] @ G
    Tm[i + 1, i] = 0.0


def schur_constant(A: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Unitary S and upper-triangular Tm with S* A S = Tm, diagonal ordered
    by the branch convention (|lam| ascending, ties by Re then Im)."""
    A = np.asarray(A, dtype=complex)
    m = A.shape[0]
    if A.shape != (m, m):
        raise ValueError("A must be square")
    if m > MAX_SYSTEM_SIZE:
        raise ValueError(f"system size {m} exceeds the supported maximum {MAX_SYSTEM_SIZE}")
    try:
        Tm, S = _scipy_schur(A, output="complex")
    except Exception as e:  # scipy raises LinAlgError subclasses
        raise EigenSolverFailure(f"Schur decomposition failed: {e}") from None

    # bubble the diagonal into branch order with adjacent unitary swaps
    q = tol.eig_tol * max(1.0, np.linalg.norm(A))

    def key(z):
        return (round(abs(z) / q), round(z.real / q), round(z.imag / q))

    for _ in range(m):
        swapped = False
        for i in range(m - 1):
            if key(Tm[i + 1, i + 1]) < key(Tm[i, i]):
                _swap_adjacent(Tm, S, i)
                swapped = True
        if not swapped:
            break

    Tm = np.triu(Tm)
    scale = max(np.linalg.norm(A), 1e-300)
    if np.linalg.norm(S @ S.conj().T - np.eye(m)) > tol.inv_tol:
        raise EigenSolverFailure("Schur basis lost unitarity during reordering")
    if np.linalg.norm(S @ Tm @ S.conj().T - A) > tol.resid_tol * scale:
        raise EigenSolverFailure("Schur reconstruction residual above resid_tol")
    return S, Tm


def simultaneous_schur(family: Sequence[np.ndarray], tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """One unitary S triangularizing every member of a commuting family."""
    mats = [np.asarray(A, dtype=complex) for A in family]
    if not mats:
        raise ValueError("family must be non-empty")
    m = mats[0].shape[0]
    for A in mats:
        if A.shape != (m, m):
            raise ValueError("family members must share one square shape")

    norms = [max(np.linalg.norm(A), 1e-300) for A in mats]
    for i in range(len(mats)):
        for j in range(i + 1, len(mats)):
            comm = np.linalg.norm(mats[i] @ mats[j] - mats[j] @ mats[i])
            if comm > tol.comm_tol * norms[i] * norms[j]:
                raise NotCommuting(i, j, comm / (norms[i] * norms[j]))

    S = _simultaneous_schur_recurse(mats, tol)

    for idx, A in enumerate(mats):
        M = S.conj().T @ A @ S
        low = np.linalg.norm(np.tril(M, -1))
        if low > tol.resid_tol * (1 + norms[idx]):
            raise EigenSolverFailure(
                f"simultaneous triangularization residual {low:.3e} on matrix {idx}"
            )
    return S


def _simultaneous_schur_recurse(mats: list[np.ndarray], tol: Tolerances) -> np.ndarray:
    m = mats[0].shape[0]
    if m == 1:
        return np.eye(1, dtype=complex)
    v = _common_eigenvector(mats, tol)
    # unitary with first column v
    U = np.linalg.qr(np.column_stack([v, np.eye(m, dtype=complex)]))[0][:, :m]
    phase = U[:, 0].conj() @ v
    U[:, 0] *= phase / abs(phase)
    reduced = [(U.conj().T @ A @ U)[1:, 1:] for A in mats]
    S_rest = _simultaneous_schur_recurse(reduced, tol)
    S = np.eye(m, dtype=complex)
    S[1:, 1:] = S_rest
    return U @ S


def _common_eigenvector(mats: list[np.ndarray], tol: Tolerances) -> np.ndarray:
    """Deterministic common eigenvector of a commuting family: recurse into
    the branch-minimal eigenspace of the first non-scalar member."""
    m = mats[0].shape[0]
    for A in mats:
        scale = max(np.linalg.norm(A), 1e-300)
        if np.linalg.norm(A - (np.trace(A) / m) * np.eye(m)) <= 1e-12 * scale:
            continue  # scalar on this subspace, no information
        lam, vec = np.linalg.eig(A)
        order = branch_sort_key(lam, quantum=1e-8 * (1 + scale))
        target = lam[order[0]]
        cluster = np.abs(lam - target) <= 1e-8 * (1 + scale)
        basis = vec[:, cluster]
        # orthonormal basis of the cluster span
        u, s, _ = np.linalg.svd(basis, full_matrices=False)
        basis = u[:, s > 1e-10 * s[0]]
        if basis.shape[1] == 1:
            return basis[:, 0]
        reduced = [basis.conj().T @ B @ basis for B in mats]
        w = _common_eigenvector(reduced, tol)
        return basis @ w
    e = np.zeros(m, dtype=complex)
    e[0] = 1.0  # every member is scalar here; anything is an eigenvector
    return e


# ------------------------------------------------------- smooth construction


def smooth_step(
    A: np.ndarray,
    lam: np.ndarray,
    h: np.ndarray,
    tol: Tolerances = DEFAULT_TOL,
    stage: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One elimination stage: conjugate the sampled field A (shape
    (T, N, r, r)) so the eigen-branch (lam, h) occupies the leading diagonal
    entry with zeros below it. Returns (S, S_inv, E) with E the trailing
    (r-1) x (r-1) block of S^-1 A S.

    The stage matrix has one non-identity column, built from h scaled so a
    chosen pivot component equals 1; its inverse is the same column with
    flipped signs, so the pair is exact by construction. One pivot component
    serving every sample is preferred (it keeps closed forms canonical), but
    when branch identity swaps across frequencies no global component exists;
    the pivot is then chosen per frequency, still fixed in t so S stays
    smooth where smoothness is asserted.
    """
    A = np.asarray(A, dtype=complex)
    h = np.asarray(h, dtype=complex)
    T, N, r, _ = A.shape
    if r == 1:
        ones = np.ones((T, N, 1, 1), dtype=complex)
        return ones, ones.copy(), np.zeros((T, N, 0, 0), dtype=complex)

    norms = np.linalg.norm(h, axis=2)  # (T, N)
    ratios = np.abs(h) / np.maximum(norms[:, :, None], 1e-300)
    per_comp = ratios.reshape(-1, r).min(axis=0)  # worst over samples, per component
    if per_comp.max() >= tol.pivot_tol:
        pivots = np.full(N, int(np.argmax(per_comp)))
    else:
        per_xi = ratios.min(axis=0)  # (N, r) worst over t only
        pivots = per_xi.argmax(axis=1)
        worst_xi = per_xi[np.arange(N), pivots]
        if worst_xi.min() < tol.pivot_tol:
            x_i = int(np.argmin(worst_xi))
            t_i = int(np.argmin(ratios[:, x_i, pivots[x_i]]))
            raise NoPivot(stage, float(worst_xi.min()), (t_i, x_i))

    cols = np.arange(N)
    idx = np.tile(np.arange(r), (N, 1))
    idx[cols, 0] = pivots
    idx[cols, pivots] = 0
    g = h[:, cols[:, None], idx]  # pivot component moved to the front
    g = g / g[:, :, 0:1]

    eye = np.broadcast_to(np.eye(r, dtype=complex), (T, N, r, r)).copy()
    S1 = eye.copy()
    S1[:, :, :, 0] = g
    S1_inv = eye
    S1_inv[:, :, 1:, 0] = -g[:, :, 1:]

    # undo the component swap: permute rows of S1, columns of its inverse
    S = np.take_along_axis(S1, idx[None, :, :, None], axis=2)
    S_inv = np.take_along_axis(S1_inv, idx[None, :, None, :], axis=3)

    M = S_inv @ A @ S
    scale = np.maximum(np.abs(A).reshape(T, N, -1).max(axis=2), 1.0)
    below = np.abs(M[:, :, 1:, 0]).max(axis=2) / scale
    on_diag = np.abs(M[:, :, 0, 0] - lam) / scale
    worst = max(below.max(), on_diag.max())
    if worst > tol.resid_tol:
        raise EigenSolverFailure(
            f"stage {stage}: eliminated column residual {worst:.3e} exceeds resid_tol "
            "(branch eigenvector inconsistent with the field)"
        )
    return S, S_inv, M[:, :, 1:, 1:]


@dataclass
class TriangularForm:
    """Sampled S, S^-1, Lambda, N, B with the measured reconstruction residual."""

    lattice: Lattice
    S: np.ndarray  # (T, N, m, m)
    S_inv: np.ndarray
    Lam: np.ndarray  # (T, N, m) diagonal entries, branch ordered
    N_mat: np.ndarray  # (T, N, m, m) strictly upper
    B: np.ndarray  # (T, N, m, m)
    residual: float
    b_is_exact_zero: bool = False
    condition_report: Optional["ConditionReport"] = None

    @property
    def m(self) -> int:
        return self.Lam.shape[2]

    @property
    def t(self) -> np.ndarray:
        return self.lattice.t

    def Lam_matrix(self) -> np.ndarray:
        T, N, m = self.Lam.shape
        out = np.zeros((T, N, m, m), dtype=complex)
        idx = np.arange(m)
        out[:, :, idx, idx] = self.Lam
        return out

    def transformed_symbol(self) -> np.ndarray:
        return self.Lam_matrix() + self.N_mat + self.B

    def summary(self) -> dict:
        return {
            "m": self.m,
            "n_points": len(self.lattice),
            "t_count": int(self.t.size),
            "residual": self.residual,
            "B_max": float(np.abs(self.B).max()),
            "B_exact_zero": self.b_is_exact_zero,
            "N_max": float(np.abs(self.N_mat).max()),
        }

    def export_json(self, path) -> None:
        import json

        def dump(arr):
            return [np.round(arr.real, 15).tolist(), np.round(arr.imag, 15).tolist()]

        payload = {
            "points": self.lattice.points.tolist(),
            "t": self.t.tolist(),
            "S": dump(self.S),
            "S_inv": dump(self.S_inv),
            "Lambda": dump(self.Lam),
            "N": dump(self.N_mat),
            "B": dump(self.B),
            "residual": self.residual,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")


def smooth_triangularize(
    field: EigenField,
    Q: Optional[MatrixSymbol] = None,
    tol: Tolerances = DEFAULT_TOL,
) -> TriangularForm:
    """Compose the stage matrices into S with S^-1 Q S = Lambda + N.

    Stage k pushes branch k's eigenvector through the inverses accumulated so
    far, projects onto the trailing block, and eliminates below the diagonal
    there. Refuses fields with flagged crossings: the construction needs
    branches that stay separated. Q is accepted for symmetry with eigen_field
    but the samples stored on the field are what gets conjugated.
    """
    if field.flags:
        raise BranchCrossingError(field.flags)
    Qv = field.Q_values
    T, N, m, _ = Qv.shape
    lattice = field.lattice

    eye = np.broadcast_to(np.eye(m, dtype=complex), (T, N, m, m)).copy()
    S_total = eye.copy()
    S_inv_total = eye.copy()
    E = Qv
    for k in range(m - 1):
        h_full = np.einsum("tnab,tnb->tna", S_inv_total, field.vec[:, :, :, k])
        h_proj = h_full[:, :, k:]
        S_blk, S_inv_blk, E = smooth_step(E, field.lam[:, :, k], h_proj, tol, stage=k)
        S_k = eye.copy()
        S_k[:, :, k:, k:] = S_blk
        S_k_inv = eye.copy()
        S_k_inv[:, :, k:, k:] = S_inv_blk
        S_total = S_total @ S_k
        S_inv_total = S_k_inv @ S_inv_total

    M = S_inv_total @ Qv @ S_total
    scale = np.maximum(field.scale, 1.0)[None, :, None, None]

    inv_err = np.abs(S_total @ S_inv_total - eye).max()
    if inv_err > tol.inv_tol:
        raise EigenSolverFailure(f"S * S^-1 deviates from identity by {inv_err:.3e}")

    idx = np.arange(m)
    diag_err = np.abs(M[:, :, idx, idx] - field.lam) / scale[:, :, :, 0]
    lower_err = np.abs(np.tril(M, -1)) / scale
    residual = float(max(diag_err.max(), lower_err.max(), 0.0))
    if residual > tol.resid_tol:
        raise EigenSolverFailure(
            f"triangular reconstruction residual {residual:.3e} exceeds resid_tol"
        )

    N_mat = np.triu(M, 1)

    constant_in_t = bool(np.all(S_total == S_total[0:1]))
    if constant_in_t:
        B = np.zeros_like(S_total)
    else:
        B = -1j * (S_inv_total @ spectral_derivative(S_total, 1, axis=0))

    return TriangularForm(
        lattice, S_total, S_inv_total, field.lam.copy(), N_mat, B, residual, constant_in_t
    )


# ----------------------------------------------------------- condition checks


@dataclass
class ConditionReport:
    """Finite-lattice evidence for the strong-form bounds: polynomial growth
    of the conjugators, rapid decay of B, and per-branch eigenvalue bounds.
    Everything is a fit over dyadic annuli, labeled evidence, not proof."""

    gamma_hat: float
    S_fits: list[OrderFit]
    S_inv_fits: list[OrderFit]
    B_fits: list[OrderFit]
    b3_ok: bool
    theta_hat: list[float]  # per branch: -min Im lam (lower deficit)
    theta_hat_upper: list[float]  # per branch: max Im lam (mirrored deficit)
    b4_ok: list[bool]
    b4_side: list[str]  # 'lower', 'upper', 'both', or 'neither'
    mu_hat: list[float]  # per branch growth of sup_t |d_t^a lam|
    kappa_hat: list[float]  # lower envelope order of sup_t |h|
    delta_hat: list[float]  # upper envelope order of sup_t |h|
    h_derivative_fits: list[list[OrderFit]]
    excluded: list
    alpha_max: int
    notes: list[str] = dc_field(default_factory=list)

    @property
    def b2_ok(self) -> bool:
        fits = self.S_fits + self.S_inv_fits
        return all(f.verdict in ("polynomial", "rapid_decay") for f in fits)

    @property
    def strong_ok(self) -> bool:
        return self.b2_ok and self.b3_ok

    def to_json_dict(self) -> dict:
        return {
            "gamma_hat": self.gamma_hat,
            "S_fits": [f.to_json_dict() for f in self.S_fits],
            "S_inv_fits": [f.to_json_dict() for f in self.S_inv_fits],
            "B_fits": [f.to_json_dict() for f in self.B_fits],
            "b2_ok": self.b2_ok,
            "b3_ok": self.b3_ok,
            "theta_hat": self.theta_hat,
            "theta_hat_upper": self.theta_hat_upper,
            "b4_ok": self.b4_ok,
            "b4_side": self.b4_side,
            "mu_hat": self.mu_hat,
            "kappa_hat": self.kappa_hat,
            "delta_hat": self.delta_hat,
            "h_derivative_fits": [[f.to_json_dict() for f in fits] for fits in self.h_derivative_fits],
            "excluded": [list(x) for x in self.excluded],
            "alpha_max": self.alpha_max,
            "notes": self.notes,
        }


def _sup_t_norm(field_arr: np.ndarray, alpha: int) -> np.ndarray:
    """sup_t of the Frobenius norm of d_t^alpha of a (T, N, m, m) field."""
    arr = field_arr if alpha == 0 else spectral_derivative(field_arr, alpha, axis=0)
    return np.linalg.norm(arr, axis=(2, 3)).max(axis=0)


def _bounded_fit(values: np.ndarray, lattice: Lattice, tol: Tolerances) -> tuple[bool, OrderFit]:
    """Is a nonnegative sample family bounded in |xi|? Evidence: rapid decay
    or polynomial fit with slope <= 0.1."""
    fit = estimate_order(values, lattice, tol)
    ok = fit.verdict == "rapid_decay" or (fit.verdict == "polynomial" and fit.slope <= 0.1)
    return ok, fit


def verify_strong_conditions(
    form: TriangularForm,
    field: EigenField,
    tol: Tolerances = DEFAULT_TOL,
    alpha_max: int = DEFAULT_ALPHA_MAX,
) -> ConditionReport:
    """Fit the growth/decay exponents behind each strong-form condition.

    Conjugator growth (gamma_hat) must be polynomial; B and its t-derivatives
    must decay rapidly; each branch needs Im lam bounded on one side; branch
    derivative growth (mu_hat) and eigenvector envelopes (kappa, delta) are
    reported for the record.
    """
    lattice = form.lattice
    zeros_note = []

    def fit_series(vals):
        return estimate_order(vals, lattice, tol)

    # below this the samples are eigensolver noise, not signal
    noise_floor = tol.eig_tol * np.maximum(1.0, field.scale)
    clamped = [0]
    # spectral d_t^alpha multiplies mode k by (ik)^alpha, so roundoff in the
    # samples can be inflated by up to (T/2)^alpha before it reaches the fit
    nyquist = max(1.0, lattice.t_count / 2.0)

    def fit_above_noise(vals, alpha=0):
        floor = noise_floor * nyquist**alpha
        keep = vals > floor
        clamped[0] += int(np.size(vals) - keep.sum())
        return fit_series(np.where(keep, vals, 0.0))

    S_fits = [fit_series(_sup_t_norm(form.S, a)) for a in range(alpha_max + 1)]
    S_inv_fits = [fit_series(_sup_t_norm(form.S_inv, a)) for a in range(alpha_max + 1)]
    finite = [f.slope for f in S_fits + S_inv_fits if np.isfinite(f.slope)]
    gamma_hat = float(max(finite)) if finite else 0.0

    if form.b_is_exact_zero:
        B_fits = [fit_series(np.zeros(len(lattice))) for _ in range(alpha_max + 1)]
        zeros_note.append("B vanishes identically on the samples")
    else:
        B_fits = [fit_above_noise(_sup_t_norm(form.B, a), a) for a in range(alpha_max + 1)]
    b3_ok = all(f.verdict == "rapid_decay" for f in B_fits)

    m = form.m
    theta_hat, theta_hat_upper, b4_ok, b4_side = [], [], [], []
    mu_hat, kappa_hat, delta_hat, h_fits = [], [], [], []
    for k in range(m):
        im = field.lam[:, :, k].imag
        low = -im.min(axis=0)  # per point lower deficit
        up = im.max(axis=0)
        low = np.where(low > noise_floor, low, 0.0)
        up = np.where(up > noise_floor, up, 0.0)
        theta_hat.append(float(low.max()))
        theta_hat_upper.append(float(up.max()))
        ok_low, _ = _bounded_fit(low, lattice, tol)
        ok_up, _ = _bounded_fit(up, lattice, tol)
        b4_ok.append(bool(ok_low or ok_up))
        b4_side.append(
            {(True, True): "both", (True, False): "lower", (False, True): "upper"}.get(
                (ok_low, ok_up), "neither"
            )
        )

        lam_k = field.lam[:, :, k][:, :, None, None]  # reuse matrix helper
        mu_fits = [fit_series(_sup_t_norm(lam_k, a)) for a in range(alpha_max + 1)]
        mu_finite = [f.slope for f in mu_fits if np.isfinite(f.slope)]
        mu_hat.append(float(max(mu_finite)) if mu_finite else float("-inf"))

        h_norm = np.linalg.norm(field.vec[:, :, :, k], axis=2).max(axis=0)
        delta_hat.append(float(estimate_order(h_norm, lattice, tol).slope))
        kappa_hat.append(float(estimate_order(h_norm, lattice, tol, statistic="min").slope))
        h_k = field.vec[:, :, :, k][:, :, :, None]
        h_fits.append([fit_above_noise(_sup_t_norm(h_k, a), a) for a in range(1, alpha_max + 1)])

    report = ConditionReport(
        gamma_hat=gamma_hat,
        S_fits=S_fits,
        S_inv_fits=S_inv_fits,
        B_fits=B_fits,
        b3_ok=b3_ok,
        theta_hat=theta_hat,
        theta_hat_upper=theta_hat_upper,
        b4_ok=b4_ok,
        b4_side=b4_side,
        mu_hat=mu_hat,
        kappa_hat=kappa_hat,
        delta_hat=delta_hat,
        h_derivative_fits=h_fits,
        excluded=sorted(field.flagged_points()),
        alpha_max=alpha_max,
        notes=zeros_note
        + (
            [f"{clamped[0]} samples under the eigensolver noise floor treated as zero"]
            if clamped[0]
            else []
        )
        + [
            "smoothness in t checked on the sample grid only",
            "all exponents are finite-lattice fits, evidence not proof",
        ],
    )
    form.condition_report = report
    return report
