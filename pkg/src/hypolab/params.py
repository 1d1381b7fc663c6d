"""Shared numeric policy: tolerances and fixed algorithm parameters.

Every tolerance used anywhere in the package lives here, so that reports can
name the knob that justified a claim and the CLI can override any of them
with ``--tol NAME=VALUE``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # eigenvalue residual, relative to the matrix norm
    eig_tol: float = 1e-10
    # smallest acceptable pivot component |<h, e_j>| / ||h|| in a reduction step
    pivot_tol: float = 1e-8
    # |average eigenvalue - nearest integer| below this counts as a resonance
    res_tol: float = 1e-9
    # relative reconstruction / back-substitution residual
    resid_tol: float = 1e-9
    # relative residual required from the periodic mode solver
    ode_tol: float = 1e-8
    # commutator norm bound (relative) for the simultaneous reduction
    comm_tol: float = 1e-10
    # inverse-pair check ||S S^-1 - I||
    inv_tol: float = 1e-9
    # exponent bound: fitted loss orders beyond this are not treated as tame
    M_cap: float = 12.0
    # resonances with |xi| <= R_exc never decide a verdict by themselves
    R_exc: float = 8.0
    # rapid-decay probe exponent: tail slopes steeper than -N_probe count as
    # faster-than-polynomial
    N_probe: float = 8.0
    # log-log fit residual above this marks the fit Irregular
    fit_tol: float = 2.0
    # largest tolerated exponent inside the oscillatory integral weights
    exp_cap: float = 30.0
    # relative update threshold and iteration cap for the coupling fixed point
    fp_tol: float = 1e-10
    fp_maxiter: int = 50

    def replace(self, **kw: float) -> "Tolerances":
        return dataclasses.replace(self, **kw)

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]


DEFAULT_TOL = Tolerances()

# defaults that are sizes, not tolerances
DEFAULT_T_GRID = 64
DEFAULT_ALPHA_MAX = 4
DEFAULT_PERTURB_DEGREE = 4
DEFAULT_EPSILON_MAX = 0.1
MAX_SYSTEM_SIZE = 8
