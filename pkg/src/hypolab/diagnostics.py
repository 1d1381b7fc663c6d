"""Verdicts on global hypoellipticity from finite lattice sweeps.

A periodic operator D_t + Q(t, D_x) is globally hypoelliptic when every
forced mode inverts with at most polynomial loss in the frequency. After
smooth reduction to triangular form that becomes a scalar question: how
close do eigenvalue time-averages come to the integers, and how fast may
that distance shrink as |xi| grows? This module measures those distances
on a lattice, fits their dyadic decay order, confirms suspected resonances
in exact rational arithmetic, and wraps the evidence in a verdict:

- ``GH_consistent``: every branch distance admits a polynomial lower bound
  over the swept range; no obstruction visible.
- ``NonGH_resonant``: exact integer hits beyond the exceptional radius.
- ``NonGH_superpolynomial``: distances collapse faster than any polynomial.
- ``Inconclusive``: the lattice was too small, a fit too irregular, or a
  hypothesis (smooth triangularization, imaginary-part control) unverified.

Every verdict is finite-resolution evidence, never a proof.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .fourier_tools import periodic_quadrature
from .params import (
    DEFAULT_ALPHA_MAX,
    DEFAULT_EPSILON_MAX,
    DEFAULT_PERTURB_DEGREE,
    DEFAULT_TOL,
    MAX_SYSTEM_SIZE,
    Tolerances,
)
from .symbol_algebra import (
    InsufficientData,
    Lattice,
    MatrixSymbol,
    OrderFit,
    SpatialExpr,
    TrigPolynomial,
    _LOG_FLOOR,
    _coerce_values,
    estimate_order,
    order_fit_from_stats,
    parse_spatial_expr,
    superpolynomial_decay,
)
from .triangularization import (
    BranchCrossingError,
    _same_time_gaps,
    _track_branches_2,
    _track_branches_general,
    branch_sort_key,
    eigen_field,
    simultaneous_schur,
    smooth_triangularize,
    verify_strong_conditions,
)

GH_CONSISTENT = "GH_consistent"
NONGH_RESONANT = "NonGH_resonant"
NONGH_SUPERPOLYNOMIAL = "NonGH_superpolynomial"
INCONCLUSIVE = "Inconclusive"

# precedence when branches disagree: a confirmed obstruction outranks a
# missing fit, which outranks a clean bill
_SEVERITY = {
    GH_CONSISTENT: 0,
    INCONCLUSIVE: 1,
    NONGH_SUPERPOLYNOMIAL: 2,
    NONGH_RESONANT: 3,
}

_SQRT_EPS = float(np.sqrt(np.finfo(float).eps))


class FitResidualTooLarge(RuntimeError):
    """Perturbation expansion does not represent the data on the grid."""

    def __init__(self, residual, threshold):
        self.residual = float(residual)
        self.threshold = float(threshold)
        super().__init__(
            f"perturbation fit residual {self.residual:.3e} exceeds {self.threshold:.3e}; "
            "shrink the epsilon range or raise the fit degree"
        )


# ------------------------------------------------------------- distances


def min_tau_distance(kappa):
    """Distance of -kappa to the nearest integer time frequency.

    A mode at (tau, xi) divides by tau + kappa(xi); minimizing over integer
    tau gives hypot(dist(Re kappa, Z), Im kappa). Scalars in, scalar out;
    arrays map elementwise.
    """
    k = np.asarray(kappa, dtype=complex)
    d = np.hypot(k.real - np.round(k.real), k.imag)
    return float(d) if d.ndim == 0 else d


def siegel_distance(lam0):
    """min(|1 - e^{2 pi i lam0}|, |1 - e^{-2 pi i lam0}|).

    This is the multiplier separating a periodic mode from resonance; the
    real part enters only mod 1, so it is reduced before exponentiating.
    That keeps the value exact (0.0) at integers and avoids the argument
    blowup of exp at large |Re lam0|.
    """
    z = np.asarray(lam0, dtype=complex)
    frac = z.real - np.round(z.real)
    with np.errstate(over="ignore"):
        e_plus = np.exp(2j * np.pi * frac - 2.0 * np.pi * z.imag)
        e_minus = np.exp(-2j * np.pi * frac + 2.0 * np.pi * z.imag)
        d = np.minimum(np.abs(1.0 - e_plus), np.abs(1.0 - e_minus))
    return float(d) if d.ndim == 0 else d


def _coerce_complex(values, lattice: Lattice) -> np.ndarray:
    if isinstance(values, Mapping):
        out = np.full(len(lattice), np.nan, dtype=complex)
        for xi, v in values.items():
            out[lattice.index_of(xi)] = v
        return out
    arr = np.asarray(values, dtype=complex)
    if arr.shape != (len(lattice),):
        raise ValueError(f"expected {len(lattice)} values aligned with the lattice")
    return arr


def resonance_set(lam0, lattice: Lattice, tol: Tolerances = DEFAULT_TOL) -> list:
    """Lattice points where lam0 sits on an integer within res_tol.

    Both conditions must hold: |Re lam0 - round(Re lam0)| <= res_tol and
    |Im lam0| <= res_tol. NaN entries (domain errors upstream) never match.
    """
    z = _coerce_complex(lam0, lattice)
    hit = (np.abs(z.real - np.round(z.real)) <= tol.res_tol) & (np.abs(z.imag) <= tol.res_tol)
    return [lattice.point_tuple(i) for i in np.nonzero(hit)[0]]


# ------------------------------------------------------- Diophantine fits


@dataclass
class DiophantineFit:
    """Decay-order fit of a nonnegative distance family over a sweep.

    m_hat is the fitted loss order (distance >= C |xi|^-m_hat), inf when the
    distances collapse entirely. zeros lists frequencies where the distance
    vanishes exactly; they are removed before fitting and counted against
    the exceptional radius separately.
    """

    m_hat: float
    verdict: str
    fit: Optional[OrderFit]
    zeros: list
    zeros_beyond_exceptional: int
    notes: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return _plain(
            {
                "m_hat": self.m_hat,
                "verdict": self.verdict,
                "fit": self.fit.to_json_dict() if self.fit else None,
                "zeros": [list(z) for z in self.zeros],
                "zeros_beyond_exceptional": self.zeros_beyond_exceptional,
                "notes": list(self.notes),
            }
        )


def _distance_verdict(fit: Optional[OrderFit], zeros_beyond: int, tol: Tolerances):
    """Shared classification: exact hits first, then the fitted order."""
    notes = []
    if fit is None or fit.slope == float("-inf"):
        m_hat = float("inf")
    else:
        m_hat = max(0.0, -float(fit.slope))

    if zeros_beyond:
        verdict = NONGH_RESONANT
        notes.append(f"{zeros_beyond} exact integer hits beyond |xi| = {tol.R_exc:g}")
    elif fit is None:
        verdict = INCONCLUSIVE
    elif superpolynomial_decay(fit, tol):
        verdict = NONGH_SUPERPOLYNOMIAL
    elif fit.verdict == "polynomial" and fit.slope >= -tol.M_cap:
        verdict = GH_CONSISTENT
    elif fit.verdict == "polynomial":
        verdict = INCONCLUSIVE
        notes.append(f"fitted loss {m_hat:.2f} exceeds the certification cap {tol.M_cap:g}")
    elif fit.verdict == "rapid_decay":
        verdict = INCONCLUSIVE
        notes.append(
            "tail decay steeper than the probe order but not accelerating; "
            "cannot separate a steep power law from the onset of collapse"
        )
    else:
        verdict = INCONCLUSIVE
        notes.append("distance fit is irregular on this lattice")
    return verdict, m_hat, notes


def diophantine_fit(
    d,
    lattice: Lattice,
    tol: Tolerances = DEFAULT_TOL,
    min_annuli: int = 4,
) -> DiophantineFit:
    """Fit the decay order of a distance family d(xi) >= 0 on the lattice.

    Exact zeros are split off and reported (only hits beyond R_exc force the
    resonant verdict: finitely many resonances inside a ball are harmless).
    The fit itself runs on per-annulus minima, the quantity a lower bound
    has to control. Raises InsufficientData when fewer than ``min_annuli``
    dyadic annuli survive and there are no zeros to report either.
    """
    vals = _coerce_values(d, lattice)
    finite = vals[~np.isnan(vals)]
    if finite.size and finite.min() < 0:
        raise ValueError("distances must be nonnegative")

    zero_mask = ~np.isnan(vals) & (vals <= _LOG_FLOOR)
    zero_idx = np.nonzero(zero_mask)[0]
    zeros = [lattice.point_tuple(i) for i in zero_idx]
    beyond = int(np.sum(lattice.norms[zero_idx] > tol.R_exc))

    work = np.where(zero_mask, np.nan, vals)
    notes = []
    # an annulus cut off by the sweep radius holds the minimum of a partial
    # sample, which biases a lower-bound fit upward; drop such annuli
    cut = (2 ** (lattice.annulus + 1) - 1) > lattice.radius
    if (cut & ~np.isnan(work)).any():
        work = np.where(cut, np.nan, work)
        notes.append("annuli truncated by the sweep radius were dropped from the fit")
    fit = None
    try:
        fit = estimate_order(work, lattice, tol, statistic="min", min_annuli=min_annuli)
    except InsufficientData:
        if not zeros:
            raise
        notes.append("exact zeros exhausted the sweep; no fit on the remainder")

    verdict, m_hat, vnotes = _distance_verdict(fit, beyond, tol)
    return DiophantineFit(m_hat, verdict, fit, zeros, beyond, notes + vnotes)


def _plain(x):
    """Recursively strip numpy scalars/arrays and non-finite floats so the
    result survives strict json.dumps. Complex becomes a [re, im] pair."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, set)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        if x.imag == 0:
            return _plain(float(x.real))
        return [_plain(float(x.real)), _plain(float(x.imag))]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        f = float(x)
        return f if math.isfinite(f) else repr(f)
    return x


def scan_scalar_distance(
    fn: Callable[[np.ndarray], np.ndarray],
    radius: int,
    tol: Tolerances = DEFAULT_TOL,
    chunk: int = 1 << 20,
    min_annuli: int = 4,
    zero_cap: int = 10000,
) -> DiophantineFit:
    """Streaming version of diophantine_fit for one-dimensional sweeps.

    fn maps a signed int64 array of frequencies to nonnegative distances.
    Only per-annulus minima (with the attaining |xi|) and the exact zero
    set are kept, so radii like 2**25 run in constant memory where a
    Lattice would need gigabytes. The fit and verdict logic is shared with
    diophantine_fit.
    """
    radius = int(radius)
    if radius < 1:
        raise ValueError("radius must be >= 1")
    chunk = max(int(chunk), 1)

    stats = []
    zeros = []
    beyond = 0
    truncated = False

    def consume(pts, best):
        nonlocal beyond, truncated
        dvals = np.asarray(fn(pts), dtype=float)
        if dvals.shape != pts.shape:
            raise ValueError("fn must return one distance per frequency")
        good = ~np.isnan(dvals)
        if (dvals[good] < 0).any():
            raise ValueError("distances must be nonnegative")
        zm = good & (dvals <= _LOG_FLOOR)
        if zm.any():
            hits = pts[zm]
            beyond += int(np.sum(np.abs(hits) > tol.R_exc))
            room = zero_cap - len(zeros)
            if room > 0:
                zeros.extend((int(v),) for v in hits[:room])
            if hits.size > max(room, 0):
                truncated = True
        live = good & ~zm
        if live.any():
            sub = dvals[live]
            i = int(np.argmin(sub))
            if sub[i] < best[0]:
                best[0] = float(sub[i])
                best[1] = float(abs(int(pts[live][i])))

    d0 = np.asarray(fn(np.zeros(1, dtype=np.int64)), dtype=float)[0]
    if not np.isnan(d0) and d0 <= _LOG_FLOOR:
        zeros.append((0,))
    a = 0
    while 2**a <= radius:
        lo, hi = 2**a, min(2 ** (a + 1) - 1, radius)
        best = [math.inf, float(lo)]
        start = lo
        while start <= hi:
            stop = min(start + chunk - 1, hi)
            xs = np.arange(start, stop + 1, dtype=np.int64)
            consume(xs, best)
            consume(-xs, best)
            start = stop + 1
        # a truncated top annulus still gets scanned for zeros but its
        # partial minimum would bias the lower-bound fit; leave it out
        if best[0] < math.inf and hi == 2 ** (a + 1) - 1:
            stats.append((best[1], best[0]))
        a += 1

    notes = []
    if truncated:
        notes.append(f"zero list truncated at {zero_cap} entries")
    fit = None
    try:
        fit = order_fit_from_stats(stats, tol, statistic="min", min_annuli=min_annuli)
    except InsufficientData:
        if not zeros:
            raise
        notes.append("exact zeros exhausted the sweep; no fit on the remainder")

    verdict, m_hat, vnotes = _distance_verdict(fit, beyond, tol)
    return DiophantineFit(m_hat, verdict, fit, zeros, beyond, notes + vnotes)


# ---------------------------------------------------------------- verdicts


@dataclass
class GHVerdict:
    """One verdict with the evidence that produced it.

    branches holds one dict per eigenvalue branch (fitted loss order,
    per-annulus minima, witnesses); witnesses is the union of resonant
    frequencies; provenance names the criterion that decided the verdict;
    excluded lists frequencies dropped before fitting (flagged crossings,
    singular samples). A resonant verdict always carries witnesses.
    """

    verdict: str
    provenance: str
    branches: list = field(default_factory=list)
    witnesses: list = field(default_factory=list)
    m_hat: Optional[float] = None
    notes: list = field(default_factory=list)
    excluded: list = field(default_factory=list)
    condition_report: Optional[dict] = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict not in _SEVERITY:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict == NONGH_RESONANT and not self.witnesses:
            raise ValueError("a resonant verdict needs a non-empty witness list")

    def to_json_dict(self) -> dict:
        return _plain(
            {
                "verdict": self.verdict,
                "provenance": self.provenance,
                "m_hat": self.m_hat,
                "branches": self.branches,
                "witnesses": [list(w) for w in self.witnesses],
                "notes": list(self.notes),
                "excluded": [list(x) for x in self.excluded],
                "condition_report": self.condition_report,
                "extras": self.extras,
            }
        )

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_annuli_csv(self, path) -> None:
        """Per-annulus minima, one row per (branch, annulus)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["branch", "radius", "min_distance"])
            for b in self.branches:
                fit = b.get("fit")
                if not fit:
                    continue
                for r, v in fit["annuli"]:
                    w.writerow([b["branch"], repr(float(r)), repr(float(v))])


def _worst(verdicts) -> str:
    return max(verdicts, key=_SEVERITY.__getitem__)


def _branch_evidence(k: int, dfit: Optional[DiophantineFit]) -> dict:
    if dfit is None:
        return {
            "branch": k,
            "verdict": INCONCLUSIVE,
            "m_hat": None,
            "fit": None,
            "worst_annulus": None,
            "witnesses": [],
            "zeros_beyond_exceptional": 0,
            "notes": ["no distance fit (insufficient data)"],
        }
    worst = None
    if dfit.fit and dfit.fit.annuli:
        worst = min(dfit.fit.annuli, key=lambda rv: rv[1])
    return {
        "branch": k,
        "verdict": dfit.verdict,
        "m_hat": _plain(dfit.m_hat),
        "fit": dfit.fit.to_json_dict() if dfit.fit else None,
        "worst_annulus": _plain(worst),
        "witnesses": [list(z) for z in dfit.zeros],
        "zeros_beyond_exceptional": dfit.zeros_beyond_exceptional,
        "notes": list(dfit.notes),
    }


def _headline_m_hat(branches) -> Optional[float]:
    vals = [
        b["m_hat"]
        for b in branches
        if isinstance(b["m_hat"], (int, float)) and math.isfinite(b["m_hat"])
    ]
    return max(vals) if vals else None


# --------------------------------------------- constant-symbol machinery


def _constant_values(sym, lattice: Lattice):
    """(N, m, m) samples of a t-constant symbol plus a domain-error list.

    Accepts a precomputed (N, m, m) array as-is. Singular samples (division
    by zero and friends) come back as NaN rows and are reported, never
    dropped silently.
    """
    if isinstance(sym, np.ndarray):
        arr = np.asarray(sym, dtype=complex)
        if arr.ndim != 3 or arr.shape[0] != len(lattice) or arr.shape[1] != arr.shape[2]:
            raise ValueError(
                f"sample array must have shape (N, m, m) with N = {len(lattice)}"
            )
        bad = np.nonzero(~np.isfinite(arr).all(axis=(1, 2)))[0]
        return arr, [(lattice.point_tuple(int(i)), "non-finite sample") for i in bad]
    if not sym.is_t_constant:
        raise ValueError("symbol depends on t; this diagnosis needs a time-constant one")
    N = len(lattice)
    out = np.zeros((N, sym.m, sym.m), dtype=complex)
    problems = []
    for j in range(sym.m):
        for k in range(sym.m):
            trig, expr = sym.entries[j][k]
            c = complex(trig.coeffs.get(0, 0.0))
            if c == 0:
                continue
            q, errs = expr.evaluate(lattice.points)
            out[:, j, k] = c * np.asarray(q, dtype=complex)
            problems += [(lattice.point_tuple(i), reason) for i, reason in errs]
    return out, problems


def _eig_sorted(vals: np.ndarray, tol: Tolerances) -> np.ndarray:
    """Eigenvalues per lattice point, branch-ordered by the quantized
    (|lam|, Re, Im) key. Rows containing NaN stay all-NaN."""
    N, m, _ = vals.shape
    if m == 1:
        return vals[:, 0, 0].reshape(N, 1).copy()
    lam = np.full((N, m), np.nan, dtype=complex)
    ok = ~np.isnan(vals).any(axis=(1, 2))
    if ok.any():
        rows = np.nonzero(ok)[0]
        eigs = np.linalg.eigvals(vals[rows])
        scale = np.linalg.norm(vals[rows], axis=(1, 2))
        for r, row in enumerate(rows):
            order = branch_sort_key(eigs[r], tol.eig_tol * max(1.0, float(scale[r])))
            lam[row] = eigs[r][order]
    return lam


def _exact_shifted_singular(A: np.ndarray, r: int) -> bool:
    """True iff det(A - r*I) == 0 exactly over the Gaussian rationals.

    Fraction(float) is lossless, so this decides singularity of the sampled
    floating matrix itself, immune to eigensolver error (which is what makes
    defective near-integer branches trustworthy witnesses or not).
    """
    m = A.shape[0]
    M = [
        [
            [
                Fraction(float(A[i, j].real)) - (Fraction(r) if i == j else 0),
                Fraction(float(A[i, j].imag)),
            ]
            for j in range(m)
        ]
        for i in range(m)
    ]
    for col in range(m):
        piv = None
        for row in range(col, m):
            if M[row][col][0] or M[row][col][1]:
                piv = row
                break
        if piv is None:
            return True
        M[col], M[piv] = M[piv], M[col]
        pr, pi = M[col][col]
        den = pr * pr + pi * pi
        for row in range(col + 1, m):
            ar, ai = M[row][col]
            if not (ar or ai):
                continue
            fr = (ar * pr + ai * pi) / den
            fi = (ai * pr - ar * pi) / den
            for j in range(col, m):
                br, bi = M[col][j]
                M[row][j][0] -= fr * br - fi * bi
                M[row][j][1] -= fr * bi + fi * br
    return False


def _candidate_net(vals: np.ndarray, tol: Tolerances) -> np.ndarray:
    """Per-point candidate width for resonance promotion.

    Defective branches carry eigensolver error on the order of
    sqrt(eps) * scale, far above res_tol, so the net widens with the matrix
    norm; it is capped below 1/2 to keep the nearest integer unambiguous.
    Everything caught in the net faces the exact rational recheck, so a
    generous net costs time, not correctness.
    """
    scale = np.linalg.norm(np.nan_to_num(vals), axis=(1, 2))
    return np.minimum(0.49, np.maximum(tol.res_tol, 64.0 * _SQRT_EPS * (1.0 + scale)))


def _promote_resonances(vals, lam_k, d, net, lattice, round_free=False):
    """Confirm candidate integer hits exactly; demote floating flukes.

    Candidates (distance within the net) whose matrix is exactly singular
    after the integer shift become exact zeros of d. A candidate at float
    distance 0.0 that fails the recheck is eigensolver coincidence: it is
    excluded (NaN) rather than reported as either a zero or a sample.
    """
    d = d.copy()
    details = []
    rejected = 0
    for i in np.nonzero(~np.isnan(d) & (d <= net))[0]:
        r = 0 if round_free else int(np.round(float(lam_k[i].real)))
        if _exact_shifted_singular(vals[i], r):
            d[i] = 0.0
            details.append((lattice.point_tuple(i), r))
        elif d[i] <= _LOG_FLOOR:
            d[i] = np.nan
            rejected += 1
    return d, details, rejected


# ----------------------------------------------------- constant diagnoses

_PROV_FULL = {
    GH_CONSISTENT: "every eigenvalue branch modulus admits a polynomial lower bound over the sweep",
    NONGH_RESONANT: "exactly singular symbol points confirmed beyond the exceptional radius",
    NONGH_SUPERPOLYNOMIAL: "an eigenvalue branch modulus collapses faster than any polynomial",
    INCONCLUSIVE: "branch modulus fits were irregular or the lattice too small",
}

_PROV_DT = {
    GH_CONSISTENT: "every Schur branch keeps polynomial distance to the integers over the sweep",
    NONGH_RESONANT: "integer eigenvalues confirmed in exact arithmetic beyond the exceptional radius",
    NONGH_SUPERPOLYNOMIAL: "a Schur branch approaches the integers faster than any polynomial",
    INCONCLUSIVE: "branch distance fits were irregular or the lattice too small",
}


def _branch_distance_sweep(Q, lattice, tol, distance, round_free):
    """Common skeleton for the two constant-symbol diagnoses: sample,
    eigen-sort, promote exact resonances per branch, fit per branch."""
    vals, problems = _constant_values(Q, lattice)
    lam = _eig_sorted(vals, tol)
    net = _candidate_net(vals, tol)

    branches, witnesses, details_all = [], [], []
    rejected = 0
    for k in range(Q.m):
        d = distance(lam[:, k])
        d, details, rej = _promote_resonances(vals, lam[:, k], d, net, lattice, round_free)
        rejected += rej
        dfit = None
        try:
            dfit = diophantine_fit(d, lattice, tol)
        except InsufficientData:
            pass
        branches.append(_branch_evidence(k, dfit))
        if dfit:
            witnesses += dfit.zeros
        details_all += details

    notes = []
    if problems:
        notes.append(f"{len(problems)} lattice points had singular symbol entries and were skipped")
    if rejected:
        notes.append(f"{rejected} floating integer hits failed the exact recheck and were excluded")
    return vals, lam, branches, witnesses, details_all, notes, problems


def diagnose_constant_full(L: MatrixSymbol, lattice: Lattice, tol: Tolerances = DEFAULT_TOL) -> GHVerdict:
    """Verdict for a fully time-constant system L(D): solvability with
    polynomial loss needs each eigenvalue branch modulus |lam_j(eta)| to
    stay polynomially away from zero.

    Near-singular candidates are settled by an exact rational rank test, so
    a defective or badly conditioned sample cannot fake (or mask) a
    resonance. The determinant modulus is fitted as corroboration: a
    polynomial lower bound on |det| is sufficient on its own, but the
    branch fits drive the verdict.
    """
    vals, lam, branches, witnesses, details, notes, problems = _branch_distance_sweep(
        L, lattice, tol, distance=lambda z: np.abs(z), round_free=True
    )

    verdict = _worst(b["verdict"] for b in branches)
    extras = {"witness_details": [{"eta": list(x), "integer": r} for x, r in details]}

    det_info = None
    ok_rows = ~np.isnan(vals).any(axis=(1, 2))
    dd = np.full(len(lattice), np.nan)
    if ok_rows.any():
        dd[ok_rows] = np.abs(np.linalg.det(vals[ok_rows]))
    try:
        det_fit = estimate_order(
            np.where(dd <= _LOG_FLOOR, np.nan, dd), lattice, tol, statistic="min"
        )
        det_info = {
            "fit": det_fit.to_json_dict(),
            "polynomial_lower_bound": bool(
                det_fit.verdict == "polynomial" and det_fit.slope >= -tol.M_cap
            ),
        }
    except InsufficientData:
        pass
    extras["det_corroboration"] = det_info

    return GHVerdict(
        verdict=verdict,
        provenance=_PROV_FULL[verdict],
        branches=branches,
        witnesses=sorted(set(witnesses)),
        m_hat=_headline_m_hat(branches),
        notes=notes,
        excluded=sorted({x for x, _ in problems}),
        extras=extras,
    )


def diagnose_dt_plus_Q(Q: MatrixSymbol, lattice: Lattice, tol: Tolerances = DEFAULT_TOL) -> GHVerdict:
    """Verdict for P = D_t + Q(D_x) with Q constant in time.

    The mode at (tau, xi) divides by tau + kappa_j(xi) over the Schur
    branches kappa_j, so the decisive quantity is each branch's distance to
    the integers. Candidates inside a conditioning-widened net are promoted
    to witnesses only when det(Q(xi) - r*I) vanishes exactly over the
    rationals; this keeps defective branches (eigensolver error of order
    sqrt(eps) * |Q|) honest in both directions.
    """
    _, lam, branches, witnesses, details, notes, problems = _branch_distance_sweep(
        Q, lattice, tol, distance=min_tau_distance, round_free=False
    )

    verdict = _worst(b["verdict"] for b in branches)
    extras = {"witness_details": [{"xi": list(x), "integer": r} for x, r in details]}

    return GHVerdict(
        verdict=verdict,
        provenance=_PROV_DT[verdict],
        branches=branches,
        witnesses=sorted(set(witnesses)),
        m_hat=_headline_m_hat(branches),
        notes=notes,
        excluded=sorted({x for x, _ in problems}),
        extras=extras,
    )


# ------------------------------------------------------ variable diagnosis


def _sign_change_check(field, tol: Tolerances) -> list:
    """Per branch: does Im lam keep one sign in t at every frequency?

    Values inside the eigensolver noise floor count as zero, so a branch
    with Im lam == 0 (real symbol) passes cleanly.
    """
    floor = tol.eig_tol * np.maximum(1.0, field.scale)
    out = []
    for k in range(field.m):
        im = field.lam[:, :, k].imag
        has_pos = (im > floor[None, :]).any(axis=0)
        has_neg = (im < -floor[None, :]).any(axis=0)
        bad = has_pos & has_neg
        out.append(
            {
                "branch": k,
                "ok": not bool(bad.any()),
                "violations": [field.lattice.point_tuple(i) for i in np.nonzero(bad)[0][:20]],
            }
        )
    return out


def diagnose_variable(
    Q: MatrixSymbol,
    lattice: Lattice,
    tol: Tolerances = DEFAULT_TOL,
    alpha_max: int = DEFAULT_ALPHA_MAX,
) -> GHVerdict:
    """Full pipeline verdict for P = D_t + Q(t, D_x).

    Eigen-decompose with branch tracking, drop flagged crossings (listed on
    the verdict, never silently healed), triangularize smoothly, fit the
    strong-form growth/decay conditions, then test the branch time-averages
    lam0_k: the periodic mode at frequency xi inverts with loss controlled
    by the distance of e^{2 pi i lam0_k} from 1, so integer resonances and
    the Diophantine decay of that distance decide the verdict.

    Gates: missing or negative condition fits downgrade any verdict to
    Inconclusive (the triangular reduction itself is then unverified), and
    a consistent verdict additionally needs imaginary-part control on each
    branch: either one-signed Im lam or a verified two-sided bound. The
    failed hypothesis is always named.
    """
    field = eigen_field(Q, lattice, tol)
    excluded = []
    lat = lattice
    if field.flags:
        excluded = sorted(field.flagged_points())
        keep = ~field.flagged_mask()
        if not keep.any():
            return GHVerdict(
                INCONCLUSIVE,
                "every lattice frequency had a flagged branch crossing",
                excluded=excluded,
            )
        lat = lattice.restricted(keep)
        field = eigen_field(Q, lat, tol)
        if field.flags:
            # flags are per frequency so one restriction clears them; this
            # is a safety net, not an expected path
            return GHVerdict(
                INCONCLUSIVE,
                "branch crossings persisted after restricting the lattice",
                excluded=sorted(set(excluded) | field.flagged_points()),
            )

    form = smooth_triangularize(field, Q, tol)

    problems = []
    report = None
    try:
        report = verify_strong_conditions(form, field, tol, alpha_max=alpha_max)
    except InsufficientData as e:
        problems.append(f"strong-condition fits: {e}")

    lam0 = periodic_quadrature(field.lam, axis=0)
    branches, witnesses, nu_hat = [], [], []
    for k in range(field.m):
        avg = lam0[:, k]
        wits = resonance_set(avg, lat, tol)
        d = siegel_distance(avg)
        for w in wits:
            d[lat.index_of(w)] = 0.0
        dfit = None
        try:
            dfit = diophantine_fit(d, lat, tol)
        except InsufficientData as e:
            problems.append(f"branch {k} distance fit: {e}")
        branches.append(_branch_evidence(k, dfit))
        witnesses += wits
        try:
            nu_hat.append(float(estimate_order(np.abs(avg), lat, tol).slope))
        except InsufficientData:
            nu_hat.append(None)
    field.metadata["nu_hat"] = nu_hat

    sign_check = _sign_change_check(field, tol)
    base = _worst(b["verdict"] for b in branches)

    notes = []
    extras = {
        "sign_check": sign_check,
        "nu_hat": nu_hat,
        "triangularization_residual": form.residual,
    }

    verdict = base
    provenance = {
        NONGH_RESONANT: "a branch time-average sits on the integers beyond the exceptional radius",
        NONGH_SUPERPOLYNOMIAL: "a branch time-average approaches the integers faster than any polynomial",
        INCONCLUSIVE: "a branch distance fit was irregular on this lattice",
        GH_CONSISTENT: "",
    }[base]

    if problems:
        verdict = INCONCLUSIVE
        provenance = "insufficient lattice data: " + "; ".join(problems)
        if base != verdict:
            extras["ungated_verdict"] = base
    elif report is not None and not report.strong_ok:
        failed = [
            name
            for name, ok in (
                ("conjugator growth (B2)", report.b2_ok),
                ("commutator decay (B3)", report.b3_ok),
            )
            if not ok
        ]
        verdict = INCONCLUSIVE
        provenance = "smooth triangular reduction unverified on this lattice"
        notes.append("StrongTriangularizationUnverified: " + " and ".join(failed) + " fits failed")
        if base != verdict:
            extras["ungated_verdict"] = base
    elif base == GH_CONSISTENT:
        sign_ok = all(s["ok"] for s in sign_check)
        b4_all = bool(report and all(report.b4_ok))
        if sign_ok:
            provenance = (
                "branch-average distances fit polynomial lower bounds "
                "and each branch's imaginary part keeps one sign"
            )
        elif b4_all:
            provenance = (
                "branch-average distances fit polynomial lower bounds "
                "and two-sided imaginary-part bounds were verified"
            )
        else:
            verdict = INCONCLUSIVE
            provenance = "no imaginary-part control on some branch"
            notes.append(
                "imaginary-part hypothesis unverified: a branch changes sign in t "
                "and its deficit fits are unbounded"
            )
            extras["ungated_verdict"] = base

    return GHVerdict(
        verdict=verdict,
        provenance=provenance,
        branches=branches,
        witnesses=sorted(set(witnesses)),
        m_hat=_headline_m_hat(branches),
        notes=notes,
        excluded=excluded,
        condition_report=report.to_json_dict() if report else None,
        extras=extras,
    )


# --------------------------------------------------------- perturbations


@dataclass
class PerturbationFit:
    """Polynomial-in-epsilon model of the perturbed eigenvalue branches.

    sigma[i, j, p] is the coefficient of epsilon^p for branch j at lattice
    point i, so sigma[..., 0] is the unperturbed branch and sigma[..., 1]
    the first-order shift. residual is the worst absolute misfit over the
    sampled grid. commuting marks the exact path (simultaneous
    triangularization, coefficients beyond linear identically zero).
    """

    eps_grid: list
    degree: int
    sigma: np.ndarray
    residual: float
    commuting: bool
    lattice: Lattice

    def sigma_at(self, eps: float) -> np.ndarray:
        powers = float(eps) ** np.arange(self.sigma.shape[2])
        return self.sigma @ powers

    def to_json_dict(self) -> dict:
        return _plain(
            {
                "eps_grid": list(self.eps_grid),
                "degree": self.degree,
                "residual": self.residual,
                "commuting": self.commuting,
                "sigma": [
                    {
                        "point": list(self.lattice.point_tuple(i)),
                        "coefficients": self.sigma[i],
                    }
                    for i in range(self.sigma.shape[0])
                ],
            }
        )

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _track_across_eps(lams, eps, anchor, scale, lattice, tol):
    """Follow branches outward from eps = 0 on both half-grids.

    Reuses the time-tracking helpers with epsilon in place of t. Ambiguous
    steps (runner-up within a factor two of the match, branches not
    coincident) abort with BranchCrossingError: a crossed fit would splice
    two analytic branches into one polynomial.
    """
    E, N, m = lams.shape
    tracked = lams.copy()
    if m == 1:
        return tracked
    flags = []
    fl = tol.eig_tol * np.maximum(1.0, scale)[None, :, None]

    def follow(idxs):
        if len(idxs) < 2:
            return
        seq = tracked[idxs].copy()
        dummy = np.zeros(seq.shape + (m,), dtype=complex)
        track = _track_branches_2 if m == 2 else _track_branches_general
        d1, d2 = track(seq, dummy)
        gaps = _same_time_gaps(seq)
        coincident = (gaps[:-1] <= fl) & (gaps[1:] <= fl)
        ambiguous = (~coincident) & (d2 < 2.0 * d1)
        for step, i, _k in zip(*np.nonzero(ambiguous)):
            span = (float(eps[idxs[step]]), float(eps[idxs[step + 1]]))
            flags.append((lattice.point_tuple(i), span))
        tracked[idxs] = seq

    follow(list(range(anchor, E)))
    follow(list(range(anchor, -1, -1)))
    if flags:
        raise BranchCrossingError(flags)
    return tracked


def perturbation_track(
    L: MatrixSymbol,
    Qp: MatrixSymbol,
    eps_grid,
    lattice: Lattice,
    tol: Tolerances = DEFAULT_TOL,
    degree: int = DEFAULT_PERTURB_DEGREE,
    epsilon: Optional[float] = None,
    eps_max: float = DEFAULT_EPSILON_MAX,
    residual_cap: Optional[float] = None,
):
    """Track the eigenvalues of L + eps * Qp and test the perturbed family.

    Both symbols must be time-constant (precomputed (N, m, m) sample arrays
    are accepted in place of symbols) and the grid symmetric about 0 with
    |eps| <= eps_max. When L and Qp commute at every lattice point the
    expansion is exact and linear (one simultaneous triangularization per
    point); otherwise branches are tracked outward from eps = 0 and fitted
    by least squares in eps/max|eps| up to ``degree``. By construction the
    order-zero coefficients reproduce the unperturbed branches within the
    fit residual.

    Returns (PerturbationFit, GHVerdict); the verdict tests the fitted
    branches at ``epsilon`` (default: the largest grid value) against the
    integer lattice. Fitted values carry fit error, so witnesses there are
    threshold hits, not exact confirmations.

    Raises BranchCrossingError when branches collide across the grid and
    FitResidualTooLarge when the polynomial cannot represent the data.
    """
    eps = np.unique(np.concatenate([np.asarray(eps_grid, dtype=float).ravel(), [0.0]]))
    if not np.allclose(eps, -eps[::-1], atol=1e-12):
        raise ValueError("epsilon grid must be symmetric about 0")
    if np.max(np.abs(eps)) > eps_max + 1e-12:
        raise ValueError(f"epsilon grid exceeds eps_max = {eps_max:g}")
    s = float(np.max(np.abs(eps)))
    if s == 0.0:
        raise ValueError("epsilon grid needs a nonzero sample")
    if len(eps) < degree + 1:
        raise InsufficientData(
            f"{len(eps)} epsilon samples cannot determine a degree-{degree} fit"
        )

    Lv, probL = _constant_values(L, lattice)
    Qv, probQ = _constant_values(Qp, lattice)
    if probL or probQ:
        where = (probL + probQ)[0]
        raise ValueError(f"singular symbol samples, first at {where[0]}: {where[1]}")
    if Lv.shape != Qv.shape:
        raise ValueError("L and Qp must share one system size")
    N, m, _ = Lv.shape

    scale = np.linalg.norm(Lv, axis=(1, 2))
    nl = np.maximum(scale, 1e-300)
    nq = np.maximum(np.linalg.norm(Qv, axis=(1, 2)), 1e-300)
    comm = np.linalg.norm(Lv @ Qv - Qv @ Lv, axis=(1, 2))
    commuting = bool(np.all(comm <= tol.comm_tol * nl * nq))

    E = len(eps)
    A_all = (Lv[None] + eps[:, None, None, None] * Qv[None]).reshape(E * N, m, m)
    # Hermitian pencils get the symmetric eigensolver: its eigenvalues are
    # accurate to the last ulp here, and the generic solver's extra error
    # is visible in the fitted high-order coefficients after the 1/eps^p
    # unscaling.
    if np.array_equal(Lv, np.conj(np.swapaxes(Lv, 1, 2))) and np.array_equal(
        Qv, np.conj(np.swapaxes(Qv, 1, 2))
    ):
        lams = np.linalg.eigvalsh(A_all).astype(complex).reshape(E, N, m)
    else:
        lams = np.linalg.eigvals(A_all).reshape(E, N, m)
    amp = float(np.max(np.abs(lams)))

    if commuting:
        sigma = np.zeros((N, m, degree + 1), dtype=complex)
        for i in range(N):
            S = simultaneous_schur([Lv[i], Qv[i]], tol)
            sigma[i, :, 0] = np.diag(S.conj().T @ Lv[i] @ S)
            sigma[i, :, 1] = np.diag(S.conj().T @ Qv[i] @ S)
        residual = 0.0
        for j, e in enumerate(eps):
            pred = np.sort(sigma[:, :, 0] + e * sigma[:, :, 1], axis=1)
            got = np.sort(lams[j], axis=1)
            residual = max(residual, float(np.max(np.abs(pred - got))))
    else:
        anchor = int(np.searchsorted(eps, 0.0))
        for i in range(N):
            order = branch_sort_key(lams[anchor, i], tol.eig_tol * max(1.0, float(scale[i])))
            lams[anchor, i] = lams[anchor, i][order]
        tracked = _track_across_eps(lams, eps, anchor, scale, lattice, tol)
        V = np.vander(eps / s, degree + 1, increasing=True)
        flat = tracked.reshape(E, N * m)
        coeff, *_ = np.linalg.lstsq(V, flat, rcond=None)
        residual = float(np.max(np.abs(V @ coeff - flat)))
        sigma = np.moveaxis(coeff.reshape(degree + 1, N, m), 0, 2)
        sigma = sigma / (s ** np.arange(degree + 1))[None, None, :]

    threshold = residual_cap if residual_cap is not None else 1e-6 * (1.0 + amp)
    if residual > threshold:
        raise FitResidualTooLarge(residual, threshold)

    fit = PerturbationFit(
        eps_grid=[float(e) for e in eps],
        degree=degree,
        sigma=sigma,
        residual=residual,
        commuting=commuting,
        lattice=lattice,
    )

    e_val = float(epsilon) if epsilon is not None else s
    lam_eps = fit.sigma_at(e_val)
    promote = max(tol.res_tol, residual)
    branches, witnesses = [], []
    for k in range(m):
        d = min_tau_distance(lam_eps[:, k])
        d = np.where(d <= promote, 0.0, d)
        dfit = None
        try:
            dfit = diophantine_fit(d, lattice, tol)
        except InsufficientData:
            pass
        branches.append(_branch_evidence(k, dfit))
        if dfit:
            witnesses += dfit.zeros

    verdict = _worst(b["verdict"] for b in branches)
    prov = {
        GH_CONSISTENT: "fitted perturbed branches keep polynomial distance to the integers",
        NONGH_RESONANT: "fitted perturbed branches hit the integers beyond the exceptional radius",
        NONGH_SUPERPOLYNOMIAL: "a fitted perturbed branch approaches the integers faster than any polynomial",
        INCONCLUSIVE: "perturbed branch distance fits were irregular or the lattice too small",
    }[verdict]
    gh = GHVerdict(
        verdict=verdict,
        provenance=prov + f" (evaluated from the expansion at epsilon = {e_val:g}; evidence only)",
        branches=branches,
        witnesses=sorted(set(witnesses)),
        m_hat=_headline_m_hat(branches),
        notes=["witness promotion threshold max(res_tol, fit residual); no exact recheck on fitted values"],
        extras={"epsilon": e_val, "commuting": commuting, "fit_residual": residual},
    )
    return fit, gh


# ------------------------------------------------------- order reduction


def reduce_higher_order(q: Sequence[Union[str, SpatialExpr]], n: Optional[int] = None) -> MatrixSymbol:
    """Companion symbol of the scalar equation
    D_t^m u + q_1(D_x) D_t^{m-1} u + ... + q_m(D_x) u = f.

    The first-order system carries ones on the superdiagonal and
    (-q_m, ..., -q_1) in the last row; its eigenvalues are the roots of the
    scalar time-frequency polynomial, and the integer-distance verdict is
    even in those roots, so the sign convention tying the system back to
    the scalar equation cannot change a diagnosis.
    """
    exprs = [parse_spatial_expr(e) if isinstance(e, str) else e for e in q]
    m = len(exprs)
    if m < 1:
        raise ValueError("need at least one coefficient")
    if m > MAX_SYSTEM_SIZE:
        raise ValueError(f"order {m} exceeds the supported maximum {MAX_SYSTEM_SIZE}")
    if n is None:
        n = max(1, max(e.max_xi_index() for e in exprs))

    one = TrigPolynomial.constant(1.0)
    zero = TrigPolynomial.constant(0.0)
    neg = TrigPolynomial.constant(-1.0)
    unit = parse_spatial_expr("1")

    entries = []
    for i in range(m - 1):
        entries.append([(one if j == i + 1 else zero, unit) for j in range(m)])
    entries.append([(neg, exprs[m - 1 - j]) for j in range(m)])
    return MatrixSymbol(m, n, entries)
