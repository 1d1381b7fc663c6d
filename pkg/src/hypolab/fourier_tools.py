"""Spectral calculus on the uniform period grid, and decay classification.

Everything here works on samples over t_j = 2 pi j / T with T a power of
two. Quadrature and differentiation are exact for trigonometric polynomials
of degree below T/2, which is what keeps the downstream residual checks at
1e-10 honest instead of drowning in O(h^2) quadrature error.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .params import DEFAULT_ALPHA_MAX, DEFAULT_TOL, Tolerances
from .symbol_algebra import (
    Lattice,
    OrderFit,
    estimate_order,
    superpolynomial_growth,
)

__all__ = [
    "spectral_derivative",
    "periodic_quadrature",
    "mean_removed_antiderivative",
    "ModeTable",
    "DecayReport",
    "classify_decay",
    "SMOOTH",
    "DISTRIBUTION_ONLY",
    "DIVERGENT",
]

SMOOTH = "Smooth"
DISTRIBUTION_ONLY = "DistributionOnly"
DIVERGENT = "DivergentSeries"


def _mode_numbers(T: int) -> np.ndarray:
    return np.fft.fftfreq(T, d=1.0 / T)


def spectral_derivative(samples: np.ndarray, alpha: int = 1, axis: int = 0) -> np.ndarray:
    """alpha-th derivative in t of periodic samples, computed in Fourier.

    The Nyquist mode is zeroed for odd alpha (its sign is ambiguous on the
    grid), which keeps derivatives of real signals real.
    """
    samples = np.asarray(samples, dtype=complex)
    T = samples.shape[axis]
    k = _mode_numbers(T)
    mult = (1j * k) ** alpha
    if alpha % 2 == 1 and T % 2 == 0:
        mult[T // 2] = 0.0
    shape = [1] * samples.ndim
    shape[axis] = T
    hat = np.fft.fft(samples, axis=axis)
    return np.fft.ifft(hat * mult.reshape(shape), axis=axis)


def periodic_quadrature(samples: np.ndarray, axis: int = 0) -> np.ndarray:
    """Average over one period: the trapezoid rule on a uniform periodic grid
    collapses to the plain mean, exact for trig polynomials of degree < T."""
    return np.mean(np.asarray(samples), axis=axis)


def mean_removed_antiderivative(samples: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Split f = mean + osc and antidifferentiate the oscillating part.

    Returns (A, mean) with A the zero-mean periodic antiderivative of osc, so
    that int_0^t f ds = mean * t + A(t) - A(0). The linear term is left to
    the caller because it is not periodic.
    """
    samples = np.asarray(samples, dtype=complex)
    T = samples.shape[axis]
    k = _mode_numbers(T)
    inv = np.zeros(T, dtype=complex)
    nz = k != 0
    inv[nz] = 1.0 / (1j * k[nz])
    if T % 2 == 0:
        inv[T // 2] = 0.0
    shape = [1] * samples.ndim
    shape[axis] = T
    hat = np.fft.fft(samples, axis=axis)
    mean = np.take(hat, 0, axis=axis) / T
    A = np.fft.ifft(hat * inv.reshape(shape), axis=axis)
    return A, mean


# ---------------------------------------------------------------- ModeTable


class ModeTable:
    """Per-frequency time traces: one complex vector over the t grid for each
    lattice point. This is the working representation of a partial Fourier
    decomposition u(t, x) = sum_xi data[xi](t) e^{i x.xi}."""

    def __init__(self, lattice: Lattice, data: np.ndarray):
        data = np.asarray(data, dtype=complex)
        if data.shape != (len(lattice), lattice.t.size):
            raise ValueError(
                f"data must be (n_points, t_count) = ({len(lattice)}, {lattice.t.size}), got {data.shape}"
            )
        self.lattice = lattice
        self.data = data
        self._dcache: dict[int, np.ndarray] = {}

    @property
    def t(self) -> np.ndarray:
        return self.lattice.t

    @classmethod
    def from_function(cls, lattice: Lattice, fn: Callable) -> "ModeTable":
        """fn(t_row, points) -> (N, T); t_row has shape (1, T), points (N, n)."""
        data = fn(lattice.t[None, :], lattice.points)
        return cls(lattice, np.broadcast_to(np.asarray(data, complex), (len(lattice), lattice.t.size)))

    @classmethod
    def zeros(cls, lattice: Lattice) -> "ModeTable":
        return cls(lattice, np.zeros((len(lattice), lattice.t.size), dtype=complex))

    def derivative(self, alpha: int) -> np.ndarray:
        if alpha == 0:
            return self.data
        if alpha not in self._dcache:
            self._dcache[alpha] = spectral_derivative(self.data, alpha, axis=1)
        return self._dcache[alpha]

    def sup_t(self, alpha: int = 0) -> np.ndarray:
        """sup over the t grid of |d_t^alpha data|, one value per lattice point."""
        return np.max(np.abs(self.derivative(alpha)), axis=1)

    def trace(self, xi) -> np.ndarray:
        return self.data[self.lattice.index_of(xi)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"xi{i + 1}" for i in range(self.lattice.n)] + ["t_index", "re", "im"])
            for i in range(len(self.lattice)):
                base = [int(v) for v in self.lattice.points[i]]
                for j in range(self.lattice.t.size):
                    z = self.data[i, j]
                    w.writerow(base + [j, repr(float(z.real)), repr(float(z.imag))])

    @classmethod
    def read_csv(cls, path, lattice: Optional[Lattice] = None) -> "ModeTable":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            n = sum(1 for name in header if name.startswith("xi"))
            rows = [(tuple(int(v) for v in row[:n]), int(row[n]), complex(float(row[n + 1]), float(row[n + 2])))
                    for row in r if row]
        t_count = 1 + max(j for _, j, _ in rows)
        if lattice is None:
            lattice = Lattice.from_points(n, [p for p, _, _ in rows], t_count)
        elif lattice.n != n or lattice.t.size != t_count:
            raise ValueError(
                f"grid mismatch: file has n={n}, T={t_count}; lattice has n={lattice.n}, T={lattice.t.size}"
            )
        data = np.zeros((len(lattice), t_count), dtype=complex)
        seen = np.zeros(len(lattice), dtype=bool)
        for p, j, z in rows:
            if p in lattice:
                i = lattice.index_of(p)
                data[i, j] = z
                seen[i] = True
        if not seen.all():
            missing = lattice.point_tuple(int(np.nonzero(~seen)[0][0]))
            raise ValueError(f"file does not cover the lattice, e.g. missing {missing}")
        return cls(lattice, data)


# ---------------------------------------------------------------- classifier


@dataclass
class DecayReport:
    """Verdict on a field of Fourier modes: does the candidate solution live
    in C^infinity, merely in distributions, or nowhere at all."""

    category: str
    fits: list[OrderFit]
    alpha_max: int
    witness: Optional[tuple] = None
    witness_annuli: list = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def m_hat(self, alpha: int) -> float:
        return self.fits[alpha].slope

    def to_json_dict(self) -> dict:
        return {
            "category": self.category,
            "alpha_max": self.alpha_max,
            "witness": list(self.witness) if self.witness is not None else None,
            "witness_annuli": [[r, v] for r, v in self.witness_annuli],
            "fits": [f.to_json_dict() for f in self.fits],
            "notes": self.notes,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def classify_decay(
    table: ModeTable,
    alpha_max: int = DEFAULT_ALPHA_MAX,
    tol: Tolerances = DEFAULT_TOL,
) -> DecayReport:
    """Classify the mode table by the growth/decay of sup_t |d_t^alpha u|.

    Smooth requires rapid decay at every probed derivative order; a single
    order with superpolynomial growth makes the series divergent even as a
    distribution; everything in between is DistributionOnly.
    """
    mags = [table.sup_t(a) for a in range(alpha_max + 1)]
    fits = [estimate_order(m, table.lattice, tol) for m in mags]

    notes = []
    driver = 0
    if any(superpolynomial_growth(f, tol) for f in fits):
        category = DIVERGENT
        driver = next(i for i, f in enumerate(fits) if superpolynomial_growth(f, tol))
        notes.append(
            f"order-{driver} amplitudes grow faster than every probed polynomial"
        )
    elif all(f.verdict == "rapid_decay" for f in fits):
        category = SMOOTH
    else:
        category = DISTRIBUTION_ONLY
        driver = next(i for i, f in enumerate(fits) if f.verdict != "rapid_decay")
        finite = [f.slope for f in fits if f.slope != float("-inf")]
        if finite:
            notes.append(f"tempered but not rapidly decaying (worst order {max(finite):.3g})")

    lattice = table.lattice
    outer = lattice.annulus == max(lattice.annuli())
    m0 = np.where(np.isnan(mags[0]), -np.inf, mags[0])
    masked = np.where(outer, m0, -np.inf)
    witness = lattice.point_tuple(int(np.argmax(masked))) if outer.any() else None
    return DecayReport(category, fits, alpha_max, witness, fits[driver].annuli, notes)
