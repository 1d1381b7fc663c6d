import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypolab.params import DEFAULT_TOL
from hypolab.symbol_algebra import (
    InsufficientData,
    Lattice,
    MatrixSymbol,
    TrigPolynomial,
    parse_spatial_expr,
)
from hypolab.triangularization import BranchCrossingError
from hypolab.diagnostics import (
    FitResidualTooLarge,
    GHVerdict,
    diagnose_constant_full,
    diagnose_dt_plus_Q,
    diagnose_variable,
    diophantine_fit,
    min_tau_distance,
    perturbation_track,
    reduce_higher_order,
    resonance_set,
    scan_scalar_distance,
    siegel_distance,
)

ONE = parse_spatial_expr("1")
XI = parse_spatial_expr("xi1")
ZERO_T = TrigPolynomial.constant(0.0)

SQRT2 = np.sqrt(2.0)
SQRT3 = np.sqrt(3.0)


def const(c):
    return TrigPolynomial.constant(c)


def diag_symbol(pairs, n=1):
    """Diagonal m x m symbol from [(trig, expr_src), ...]."""
    m = len(pairs)
    entries = [
        [
            (pairs[j][0], parse_spatial_expr(pairs[j][1])) if j == k else (ZERO_T, ONE)
            for k in range(m)
        ]
        for j in range(m)
    ]
    return MatrixSymbol(m, n, entries)


def wave_companion(alpha, beta, scale_trig=None):
    """[[0, 1], [-beta^2 xi^2, 2 alpha |xi|]] times an optional scalar c(t).

    Eigenvalues c(t) (alpha +- i sqrt(beta^2 - alpha^2)) |xi|; purely real
    iff beta <= alpha.
    """
    c = scale_trig if scale_trig is not None else const(1.0)
    return MatrixSymbol(
        2,
        1,
        [
            [(ZERO_T, ONE), (c, ONE)],
            [
                (c.scaled(-(beta**2)), parse_spatial_expr("abs_xi^2")),
                (c.scaled(2.0 * alpha), parse_spatial_expr("abs_xi")),
            ],
        ],
    )


def sqrt2_distances(lattice):
    return min_tau_distance(SQRT2 * lattice.points[:, 0])


class TestScalarDistances:
    def test_min_tau_reference_values(self):
        assert min_tau_distance(0.5) == 0.5
        assert min_tau_distance(3.0) == 0.0
        assert min_tau_distance(2.0 + 0.3j) == pytest.approx(0.3)
        got = min_tau_distance(np.array([0.25, -0.25, 7.0]))
        assert np.allclose(got, [0.25, 0.25, 0.0])

    def test_siegel_reference_values(self):
        # real integers land exactly on the multiplier 1
        assert siegel_distance(7.0) == 0.0
        assert siegel_distance(-12345.0) == 0.0
        assert siegel_distance(0.5) == pytest.approx(2.0)
        # purely imaginary: min(|1-e^{-2pi}|, |1-e^{2pi}|) = 1 - e^{-2pi}
        assert siegel_distance(1j) == pytest.approx(1.0 - np.exp(-2.0 * np.pi))

    def test_siegel_no_overflow_at_huge_imaginary_part(self):
        # one branch overflows to inf, the other decays to 1
        d = siegel_distance(0.25 + 1e6j)
        assert np.isfinite(d) and d == pytest.approx(1.0)

    @given(
        st.floats(min_value=-0.49, max_value=0.49),
        st.integers(min_value=-100, max_value=100),
    )
    @settings(max_examples=200, deadline=None)
    def test_integer_shift_invariance(self, x, k):
        assert min_tau_distance(x + k) == pytest.approx(min_tau_distance(x), abs=1e-12)
        assert siegel_distance(x + k) == pytest.approx(siegel_distance(x), abs=1e-9)

    @given(
        st.floats(min_value=-1e3, max_value=1e3),
        st.floats(min_value=-2.0, max_value=2.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_conjugation_symmetry(self, re, im):
        z = complex(re, im)
        assert min_tau_distance(np.conj(z)) == min_tau_distance(z)
        assert siegel_distance(np.conj(z)) == siegel_distance(z)

    @given(st.floats(min_value=-1e3, max_value=1e3))
    @settings(max_examples=200, deadline=None)
    def test_real_bridge_between_the_two_distances(self, x):
        # |1 - e^{2 pi i x}| = 2 sin(pi dist(x, Z)) and 2 theta/pi <= sin
        # theta <= theta pins the ratio between 4 and 2 pi
        mt = min_tau_distance(x)
        sg = siegel_distance(x)
        assert 4.0 * mt - 1e-12 <= sg <= 2.0 * np.pi * mt + 1e-12


class TestResonanceSet:
    def test_half_integer_multiplier_hits_even_frequencies(self):
        lat = Lattice(1, 8, t_count=8)
        lam0 = 0.5 * lat.points[:, 0].astype(float)
        got = resonance_set(lam0, lat)
        assert got == [(xi,) for xi in range(-8, 9, 2)]

    def test_irrational_multiplier_hits_only_origin(self):
        lat = Lattice(1, 64, t_count=8)
        assert resonance_set(SQRT2 * lat.points[:, 0], lat) == [(0,)]

    def test_mapping_input_missing_points_never_match(self):
        lat = Lattice(1, 1, t_count=8)
        got = resonance_set({(0,): 0.0, (1,): 0.3}, lat)
        assert got == [(0,)]

    def test_imaginary_part_blocks_the_hit(self):
        lat = Lattice(1, 4, t_count=8)
        lam0 = lat.points[:, 0] + 0.5j
        assert resonance_set(lam0, lat) == []


class TestDiophantineFit:
    def test_sqrt2_sweep_fits_loss_one(self):
        lat = Lattice(1, 2**14, t_count=8)
        out = diophantine_fit(sqrt2_distances(lat), lat)
        assert out.verdict == "GH_consistent"
        assert 0.8 <= out.m_hat <= 1.2
        assert out.zeros == [(0,)]
        assert out.zeros_beyond_exceptional == 0
        # the top annulus only reaches the sweep radius, so it is dropped;
        # the last surviving one is [8192, 16383], its minimum attained at
        # the denominator 13860 of a convergent of sqrt2
        assert any("truncated" in n for n in out.notes)
        assert max(r for r, _ in out.fit.annuli) == 13860.0

    def test_constant_distance_means_zero_loss(self):
        lat = Lattice(1, 256, t_count=8)
        out = diophantine_fit(np.ones(len(lat)), lat)
        assert out.verdict == "GH_consistent"
        assert out.m_hat == 0.0

    def test_growing_distance_clamps_loss_at_zero(self):
        lat = Lattice(1, 256, t_count=8)
        out = diophantine_fit(1.0 + lat.norms, lat)
        assert out.verdict == "GH_consistent"
        assert out.m_hat == 0.0

    def test_zeros_beyond_exceptional_radius_force_resonant(self):
        lat = Lattice(1, 1024, t_count=8)
        d = 1.0 / (1.0 + lat.norms)
        d[lat.index_of((512,))] = 0.0
        d[lat.index_of((-512,))] = 0.0
        out = diophantine_fit(d, lat)
        assert out.verdict == "NonGH_resonant"
        assert out.zeros_beyond_exceptional == 2
        assert (512,) in out.zeros and (-512,) in out.zeros
        assert out.fit is not None  # the fit on the remainder survives

    def test_zeros_inside_exceptional_radius_are_harmless(self):
        lat = Lattice(1, 1024, t_count=8)
        d = 1.0 / (1.0 + lat.norms)
        d[lat.index_of((2,))] = 0.0
        d[lat.index_of((-2,))] = 0.0
        out = diophantine_fit(d, lat)
        assert out.verdict == "GH_consistent"
        assert out.zeros == [(-2,), (2,)]
        assert out.zeros_beyond_exceptional == 0

    def test_superpolynomial_collapse_detected(self):
        lat = Lattice(1, 64, t_count=8)
        out = diophantine_fit(np.exp(-lat.norms), lat)
        assert out.verdict == "NonGH_superpolynomial"
        # the fitted order is whatever the window reached, beyond the cap
        assert out.m_hat > DEFAULT_TOL.M_cap

    def test_negative_distances_rejected(self):
        lat = Lattice(1, 8, t_count=8)
        with pytest.raises(ValueError):
            diophantine_fit(-np.ones(len(lat)), lat)

    def test_tiny_radius_is_insufficient(self):
        # radius 4 leaves two complete annuli, below the fit minimum
        lat = Lattice(1, 4, t_count=8)
        with pytest.raises(InsufficientData):
            diophantine_fit(np.ones(len(lat)), lat)


class TestScanScalarDistance:
    def test_matches_the_lattice_path_exactly(self):
        lat = Lattice(1, 1024, t_count=8)
        ref = diophantine_fit(sqrt2_distances(lat), lat)
        scan = scan_scalar_distance(lambda xi: min_tau_distance(SQRT2 * xi), 1024)
        assert scan.verdict == ref.verdict
        assert scan.m_hat == pytest.approx(ref.m_hat)
        assert scan.zeros == ref.zeros
        assert scan.fit.annuli == ref.fit.annuli

    def test_chunking_does_not_change_the_answer(self):
        f = lambda xi: min_tau_distance(SQRT2 * xi)
        a = scan_scalar_distance(f, 500)
        b = scan_scalar_distance(f, 500, chunk=7)
        assert a.fit.annuli == b.fit.annuli
        assert a.m_hat == b.m_hat

    def test_dyadic_rational_caught_at_large_radius(self):
        # b0 = 2^-1 + 2^-2 + 2^-6 + 2^-24: b0 * 2^24 is an integer, so the
        # first resonance beyond the origin sits at |xi| = 2^24
        b0 = 2.0**-1 + 2.0**-2 + 2.0**-6 + 2.0**-24
        out = scan_scalar_distance(lambda xi: min_tau_distance(b0 * xi), 2**24)
        assert out.verdict == "NonGH_resonant"
        assert set(out.zeros) == {(0,), (2**24,), (-(2**24),)}
        assert out.zeros_beyond_exceptional == 2

    def test_negative_values_rejected(self):
        with pytest.raises(ValueError):
            scan_scalar_distance(lambda xi: -np.ones_like(xi, dtype=float), 64)


class TestDiagnoseConstantFull:
    def test_elliptic_family_is_consistent(self):
        L = diag_symbol([(const(1.0), "1"), (const(1.0), "1 + abs_xi^2")])
        v = diagnose_constant_full(L, Lattice(1, 64, t_count=8))
        assert v.verdict == "GH_consistent"
        assert v.m_hat == 0.0
        det = v.extras["det_corroboration"]
        assert det is not None and det["polynomial_lower_bound"]

    def test_rapidly_vanishing_branch_is_superpolynomial(self):
        L = diag_symbol([(const(1.0), "exp(-abs_xi)"), (const(1.0), "1")])
        v = diagnose_constant_full(L, Lattice(1, 64, t_count=8))
        assert v.verdict == "NonGH_superpolynomial"

    def test_singular_line_in_two_variables(self):
        # det vanishes on the whole line eta1 = 0, far beyond any ball
        L = diag_symbol([(const(1.0), "xi1"), (const(1.0), "1")], n=2)
        v = diagnose_constant_full(L, Lattice(2, 32, t_count=8))
        assert v.verdict == "NonGH_resonant"
        assert all(w[0] == 0 for w in v.witnesses)
        assert len(v.witnesses) == 65
        assert all(d["eta"][0] == 0 for d in v.extras["witness_details"])

    def test_time_dependent_symbol_rejected(self):
        L = diag_symbol([(TrigPolynomial.sine(1, 1.0), "1"), (const(1.0), "1")])
        with pytest.raises(ValueError, match="time-constant"):
            diagnose_constant_full(L, Lattice(1, 16, t_count=8))


class TestDiagnoseDtPlusQ:
    def test_wave_with_damping_is_consistent(self):
        # roots alpha |xi| +- i sqrt(3) |xi|: the imaginary part keeps every
        # average a fixed distance from the integers
        Q = wave_companion(1.0, 2.0)
        v = diagnose_dt_plus_Q(Q, Lattice(1, 128, t_count=8))
        assert v.verdict == "GH_consistent"
        assert v.m_hat == 0.0
        assert v.witnesses == [(0,)]

    def test_degenerate_wave_resonates_everywhere(self):
        # alpha = beta = 1: double root |xi|, an integer at every frequency
        Q = wave_companion(1.0, 1.0)
        v = diagnose_dt_plus_Q(Q, Lattice(1, 128, t_count=8))
        assert v.verdict == "NonGH_resonant"
        assert len(v.witnesses) == len(Lattice(1, 128, t_count=8))
        det = v.extras["witness_details"]
        assert all(w["integer"] == abs(w["xi"][0]) for w in det)

    def test_scalar_badly_approximable_loss_one(self):
        Q = diag_symbol([(const(SQRT2), "xi1")])
        v = diagnose_dt_plus_Q(Q, Lattice(1, 4096, t_count=8))
        assert v.verdict == "GH_consistent"
        assert 0.8 <= v.m_hat <= 1.2

    def test_unitary_conjugation_leaves_the_verdict_alone(self):
        lat = Lattice(1, 512, t_count=8)
        plain = diag_symbol([(const(SQRT2), "xi1"), (const(SQRT3), "xi1")])
        c, s = 3.0 / 5.0, 4.0 / 5.0
        a11 = float(SQRT2 * c * c + SQRT3 * s * s)
        a22 = float(SQRT2 * s * s + SQRT3 * c * c)
        a12 = float((SQRT2 - SQRT3) * c * s)
        rotated = MatrixSymbol(
            2,
            1,
            [
                [(const(1.0), parse_spatial_expr(f"{a11!r} * xi1")),
                 (const(1.0), parse_spatial_expr(f"{a12!r} * xi1"))],
                [(const(1.0), parse_spatial_expr(f"{a12!r} * xi1")),
                 (const(1.0), parse_spatial_expr(f"{a22!r} * xi1"))],
            ],
        )
        va = diagnose_dt_plus_Q(plain, lat)
        vb = diagnose_dt_plus_Q(rotated, lat)
        assert va.verdict == vb.verdict == "GH_consistent"
        assert vb.m_hat == pytest.approx(va.m_hat, abs=1e-3)


class TestDiagnoseVariable:
    def test_separated_transport_pair_is_consistent(self):
        # branch means sqrt2 and 4 + sqrt3; the ranges [0.41, 2.41] |xi| and
        # 5.73 |xi| never meet, so tracking is clean
        a = const(SQRT2) + TrigPolynomial.sine(1, 1.0)
        Q = MatrixSymbol(
            2,
            1,
            [
                [(a, XI), (TrigPolynomial.cosine(1, 1.0), ONE)],
                [(ZERO_T, ONE), (const(4.0 + SQRT3), XI)],
            ],
        )
        v = diagnose_variable(Q, Lattice(1, 1024, t_count=64))
        assert v.verdict == "GH_consistent"
        assert 0.7 <= v.m_hat <= 1.3
        assert "keeps one sign" in v.provenance
        assert v.excluded == []

    def test_integer_mean_resonates(self):
        b = const(1.0) + TrigPolynomial.sine(1, 1.0)
        Q = MatrixSymbol(1, 1, [[(b, XI)]])
        v = diagnose_variable(Q, Lattice(1, 64, t_count=64))
        assert v.verdict == "NonGH_resonant"
        assert len(v.witnesses) == 129

    def test_separable_factor_matches_the_constant_companion(self):
        # c(t) > 0 with mean 1 multiplying a consistent companion must not
        # change the verdict: the time average is the constant-case value
        c = const(1.0) + TrigPolynomial.cosine(1, 0.5)
        lat = Lattice(1, 128, t_count=64)
        vc = diagnose_dt_plus_Q(wave_companion(1.0, 2.0), lat)
        vv = diagnose_variable(wave_companion(1.0, 2.0, scale_trig=c), lat)
        assert vv.verdict == vc.verdict == "GH_consistent"
        assert vv.m_hat == pytest.approx(vc.m_hat, abs=1e-6)
        rep = vv.condition_report
        assert rep["b2_ok"] and rep["b3_ok"]

    def test_branch_crossings_flag_frequencies_not_the_whole_run(self):
        # 10 + sqrt3 sits inside [0.41, 2.41] |xi| only for xi in [5, 28]:
        # those frequencies are dropped, the rest still decide the verdict
        a = const(SQRT2) + TrigPolynomial.sine(1, 1.0)
        Q = MatrixSymbol(
            2,
            1,
            [
                [(a, XI), (ZERO_T, ONE)],
                [(ZERO_T, ONE), (const(10.0 + SQRT3), ONE)],
            ],
        )
        v = diagnose_variable(Q, Lattice(1, 64, t_count=64))
        assert v.verdict == "GH_consistent"
        # the exact coincidence range, plus near misses the tracker cannot
        # tell apart; nothing outside a narrow margin of it
        assert {(xi,) for xi in range(5, 29)} <= set(v.excluded)
        assert all(4 <= xi <= 32 for (xi,) in v.excluded)

    def test_everything_flagged_degrades_to_inconclusive(self):
        # diag(sin t, 2 sin t) xi: branches meet at every frequency
        Q = diag_symbol(
            [(TrigPolynomial.sine(1, 1.0), "xi1"), (TrigPolynomial.sine(1, 2.0), "xi1")]
        )
        v = diagnose_variable(Q, Lattice(1, 16, t_count=64))
        assert v.verdict == "Inconclusive"
        assert "insufficient" in v.provenance
        assert len(v.excluded) == 32

    def test_tiny_radius_is_inconclusive_not_wrong(self):
        Q = MatrixSymbol(1, 1, [[(const(SQRT2), XI)]])
        v = diagnose_variable(Q, Lattice(1, 4, t_count=32))
        assert v.verdict == "Inconclusive"
        assert "insufficient" in v.provenance

    def test_bounded_two_sided_imaginary_part_passes_without_a_sign(self):
        # lam = sqrt2 + i sin t: the imaginary part changes sign but its
        # envelope is bounded, so the two-sided route certifies
        c = const(SQRT2) + TrigPolynomial.sine(1, 1.0).scaled(1j)
        Q = MatrixSymbol(1, 1, [[(c, ONE)]])
        v = diagnose_variable(Q, Lattice(1, 64, t_count=64))
        assert v.verdict == "GH_consistent"
        assert "two-sided" in v.provenance
        assert not v.extras["sign_check"][0]["ok"]

    def test_unbounded_sign_changing_imaginary_part_is_inconclusive(self):
        # lam = (sqrt2 + i sin t) xi: the deficit grows like |xi| on both
        # sides, so neither imaginary-part hypothesis can be verified
        c = const(SQRT2) + TrigPolynomial.sine(1, 1.0).scaled(1j)
        Q = MatrixSymbol(1, 1, [[(c, XI)]])
        v = diagnose_variable(Q, Lattice(1, 64, t_count=64))
        assert v.verdict == "Inconclusive"
        assert "imaginary" in v.provenance
        assert v.extras["ungated_verdict"] == "GH_consistent"


class TestPerturbationTrack:
    def _oracle(self):
        """diag(l, -l) with symmetric coupling q = 1/(1+l) at xi = (l,)."""
        lat = Lattice.from_points(1, [(l,) for l in range(1, 41)], t_count=8)
        ls = lat.points[:, 0].astype(float)
        N = len(lat)
        L = np.zeros((N, 2, 2), complex)
        Qp = np.zeros((N, 2, 2), complex)
        L[:, 0, 0] = ls
        L[:, 1, 1] = -ls
        Qp[:, 0, 1] = Qp[:, 1, 0] = 1.0 / (1.0 + ls)
        return lat, ls, L, Qp

    def test_second_order_coefficient_matches_the_exact_series(self):
        lat, ls, L, Qp = self._oracle()
        eps = np.linspace(-0.1, 0.1, 9)
        fit, verdict = perturbation_track(L, Qp, eps, lat)
        assert not fit.commuting
        q = 1.0 / (1.0 + ls)
        # branch tracking -l: sigma = -l + 0 eps - q^2/(2l) eps^2 + ...
        k = np.argmin(np.abs(fit.sigma[:, :, 0].real + ls[:, None]), axis=1)
        got = fit.sigma[np.arange(len(ls)), k, :]
        assert np.abs(got[:, 0] + ls).max() < 1e-9
        assert np.abs(got[:, 1]).max() < 1e-9
        want2 = -(q**2) / (2.0 * ls)
        assert np.max(np.abs(got[:, 2] - want2) / np.abs(want2)) < 1e-6
        # distance at eps = 0.1 behaves like q^2/(2l) ~ l^-3
        assert verdict.verdict == "GH_consistent"
        assert 2.0 <= verdict.m_hat <= 4.0
        assert "evidence only" in verdict.provenance

    def test_commuting_pair_uses_the_exact_linear_law(self):
        lat, ls, _, _ = self._oracle()
        N = len(lat)
        L = np.tile(np.diag([3.0, 1.0]).astype(complex), (N, 1, 1))
        Qp = np.tile(np.diag([0.5, 2.0]).astype(complex), (N, 1, 1))
        fit, _ = perturbation_track(L, Qp, np.linspace(-0.1, 0.1, 9), lat)
        assert fit.commuting
        assert fit.residual < 1e-12
        assert np.abs(fit.sigma[:, :, 2:]).max() == 0.0
        got = np.sort(fit.sigma[0, :, 0].real)
        assert np.allclose(got, [1.0, 3.0])

    def test_zero_perturbation_has_zero_slope(self):
        lat, ls, L, _ = self._oracle()
        fit, _ = perturbation_track(L, np.zeros_like(L), np.linspace(-0.1, 0.1, 9), lat)
        assert fit.commuting
        assert np.abs(fit.sigma[:, :, 1:]).max() == 0.0

    def test_colliding_branches_raise(self):
        # L nilpotent, Qp its transpose: eigenvalues +- sqrt(eps) collide
        # at 0 and the two continuations are indistinguishable
        lat, _, _, _ = self._oracle()
        N = len(lat)
        L = np.tile(np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex), (N, 1, 1))
        Qp = np.tile(np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex), (N, 1, 1))
        with pytest.raises(BranchCrossingError) as exc:
            perturbation_track(L, Qp, np.linspace(-0.1, 0.1, 9), lat)
        assert exc.value.flags

    def test_residual_cap_enforced(self):
        lat, _, L, Qp = self._oracle()
        with pytest.raises(FitResidualTooLarge):
            perturbation_track(L, Qp, np.linspace(-0.1, 0.1, 9), lat, residual_cap=1e-18)

    def test_asymmetric_grid_rejected(self):
        lat, _, L, Qp = self._oracle()
        with pytest.raises(ValueError, match="symmetric"):
            perturbation_track(L, Qp, np.array([0.0, 0.05, 0.1]), lat)

    def test_grid_beyond_eps_max_rejected(self):
        lat, _, L, Qp = self._oracle()
        with pytest.raises(ValueError, match="eps_max"):
            perturbation_track(L, Qp, np.linspace(-0.5, 0.5, 9), lat)

    def test_too_few_samples_for_the_degree(self):
        lat, _, L, Qp = self._oracle()
        with pytest.raises(InsufficientData):
            perturbation_track(L, Qp, np.array([-0.1, 0.0, 0.1]), lat, degree=4)


class TestReduceHigherOrder:
    def test_first_order_scalar(self):
        comp = reduce_higher_order(["xi1"])
        assert comp.m == 1
        assert comp.eval_entry(0, 0, 0.0, (7,)) == -7.0

    def test_wave_equation_companion(self):
        comp = reduce_higher_order(["-(2 * abs_xi)", "4 * abs_xi^2"])
        A = np.array(
            [[comp.eval_entry(j, k, 0.0, (-3,)) for k in range(2)] for j in range(2)]
        )
        assert np.allclose(A, [[0.0, 1.0], [-36.0, 6.0]])
        got = np.linalg.eigvals(A)
        want = np.array([3.0 + 3.0 * SQRT3 * 1j, 3.0 - 3.0 * SQRT3 * 1j])
        assert np.abs(got[:, None] - want[None, :]).min(axis=0).max() < 1e-9

    def test_roots_match_the_characteristic_polynomial(self):
        comp = reduce_higher_order(["3 * xi1", "-(2 * xi1^2)"])
        for xi in (2, 3, 5):
            A = np.array(
                [[comp.eval_entry(j, k, 0.0, (xi,)) for k in range(2)] for j in range(2)]
            )
            got = np.sort_complex(np.linalg.eigvals(A))
            want = np.sort_complex(np.roots([1.0, 3.0 * xi, -2.0 * xi**2]))
            assert np.abs(got - want).max() < 1e-9

    def test_dimension_inferred_from_the_coefficients(self):
        comp = reduce_higher_order(["xi3^2", "0"])
        assert comp.n == 3

    def test_system_size_capped(self):
        with pytest.raises(ValueError):
            reduce_higher_order(["0"] * 9)

    def test_empty_coefficients_rejected(self):
        with pytest.raises(ValueError):
            reduce_higher_order([])


class TestVerdictObject:
    def test_resonant_requires_witnesses(self):
        with pytest.raises(ValueError, match="witness"):
            GHVerdict(verdict="NonGH_resonant", provenance="x")

    def test_unknown_verdict_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            GHVerdict(verdict="maybe", provenance="x")

    def test_json_and_csv_round_trip(self, tmp_path):
        L = diag_symbol([(const(1.0), "1"), (const(1.0), "1 + abs_xi^2")])
        v = diagnose_constant_full(L, Lattice(1, 64, t_count=8))
        jpath = tmp_path / "verdict.json"
        cpath = tmp_path / "annuli.csv"
        v.write_json(jpath)
        v.write_annuli_csv(cpath)
        loaded = json.loads(jpath.read_text())
        assert loaded["verdict"] == v.verdict
        assert loaded["m_hat"] == v.m_hat
        lines = cpath.read_text().strip().splitlines()
        assert lines[0] == "branch,radius,min_distance"
        assert len(lines) > 2
        # cells are repr floats, safe to eval back
        b, r, d = lines[1].split(",")
        assert float(r) >= 1.0 and float(d) >= 0.0
