import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypolab.params import DEFAULT_TOL
from hypolab.symbol_algebra import (
    AbsXi,
    BinOp,
    Call,
    EvalDomainError,
    ExprSyntaxError,
    InsufficientData,
    Lattice,
    MatrixSymbol,
    Neg,
    Num,
    Pow,
    TrigPolynomial,
    UnknownIdentifier,
    Xi,
    estimate_order,
    parse_spatial_expr,
    superpolynomial_decay,
    superpolynomial_growth,
    time_average,
    time_derivative,
)


# ---------------------------------------------------------------- parser


def test_parse_linear_combination():
    e = parse_spatial_expr("2*xi1 + 0.5*xi2")
    vals, errs = e.evaluate(np.array([[3, 4], [0, 0], [-1, 2]]))
    assert errs == []
    assert vals.tolist() == [8.0, 0.0, -1.0]


def test_parse_left_associativity():
    e = parse_spatial_expr("xi1 - xi2 - 1")
    assert e.evaluate_point((10, 3)) == 6.0
    e = parse_spatial_expr("8 / xi1 / xi2")
    assert e.evaluate_point((2, 2)) == 2.0


def test_unary_minus_binds_before_power():
    # the grammar makes '-' part of the atom, so -xi1^2 squares the negation
    e = parse_spatial_expr("-xi1^2")
    assert e.evaluate_point((3,)) == 9.0
    e = parse_spatial_expr("-(xi1^2)")
    assert e.evaluate_point((3,)) == -9.0


def test_fractional_exponent_and_abs():
    e = parse_spatial_expr("abs_xi^0.5")
    assert e.evaluate_point((9, 0)) == pytest.approx(3.0)
    e = parse_spatial_expr("sqrt(abs_xi^2 + 1)")
    assert e.evaluate_point((2, 2)) == pytest.approx(3.0)


def test_syntax_error_carries_byte_offset():
    with pytest.raises(ExprSyntaxError) as ei:
        parse_spatial_expr("xi1 + ")
    assert ei.value.offset == 6
    with pytest.raises(ExprSyntaxError) as ei:
        parse_spatial_expr("(xi1 + 2")
    assert ei.value.offset == 8
    with pytest.raises(ExprSyntaxError) as ei:
        parse_spatial_expr("xi1 ^ xi2")
    assert ei.value.offset == 6
    with pytest.raises(ExprSyntaxError):
        parse_spatial_expr("2 @ 3")


def test_unknown_identifier():
    for src, off in [("foo(2)", 0), ("xi1 + bar", 6), ("xi0", 0), ("xi12", 0)]:
        with pytest.raises(UnknownIdentifier) as ei:
            parse_spatial_expr(src)
        assert ei.value.offset == off


def test_pretty_round_trip_corpus():
    corpus = [
        "1 - xi1 - xi2",
        "sqrt(abs_xi^2 + 1)",
        "xi1/(xi2 - 1)",
        "-(xi1^2) + 2^0.5 * abs_xi",
        "exp(-(abs_xi^2))",
        "(xi1 + xi2) * (xi1 - xi2)",
        "1e-06 * xi1",
        "-xi1^2",
    ]
    for src in corpus:
        e = parse_spatial_expr(src)
        s1 = e.pretty()
        e2 = parse_spatial_expr(s1)
        assert e2.root == e.root
        assert e2.pretty() == s1


_exponents = st.sampled_from([0.0, 0.5, 1.0, 2.0, 3.0])
_numbers = st.floats(min_value=0, max_value=1e6, allow_nan=False)


def _ast_strategy():
    leaves = st.one_of(
        _numbers.map(Num),
        st.integers(1, 3).map(Xi),
        st.just(AbsXi()),
    )

    def extend(children):
        return st.one_of(
            children.map(Neg),
            st.tuples(st.sampled_from("+-*/"), children, children).map(
                lambda t: BinOp(*t)
            ),
            st.tuples(children, _exponents).map(lambda t: Pow(*t)),
            st.tuples(st.sampled_from(["sqrt", "exp"]), children).map(
                lambda t: Call(*t)
            ),
        )

    return st.recursive(leaves, extend, max_leaves=12)


@given(_ast_strategy())
@settings(max_examples=200, deadline=None)
def test_pretty_parse_inverse_on_random_asts(node):
    from hypolab.symbol_algebra import SpatialExpr

    src = SpatialExpr(node, "<generated>").pretty()
    assert parse_spatial_expr(src).root == node


def test_domain_errors_reported_not_skipped():
    e = parse_spatial_expr("1/xi1")
    vals, errs = e.evaluate(np.array([[0], [2], [4]]))
    assert np.isnan(vals[0]) and vals[1] == 0.5
    assert errs == [(0, "division by zero")]

    e = parse_spatial_expr("sqrt(1 - xi1^2)")
    vals, errs = e.evaluate(np.array([[0], [2]]))
    assert vals[0] == 1.0 and np.isnan(vals[1])
    assert errs[0][1] == "sqrt of a negative number"

    with pytest.raises(EvalDomainError):
        parse_spatial_expr("1/xi1").evaluate_point((0,))


# ---------------------------------------------------------------- trig


def test_trig_sampling_matches_closed_forms():
    t = 2 * np.pi * np.arange(16) / 16
    c = TrigPolynomial.cosine(1)
    s = TrigPolynomial.sine(1)
    np.testing.assert_allclose(c.sample(t), np.cos(t), atol=1e-14)
    np.testing.assert_allclose(s.sample(t), np.sin(t), atol=1e-14)


def test_time_average_is_exact_on_coefficients():
    two_plus_cos = TrigPolynomial.constant(2) + TrigPolynomial.cosine(1)
    assert time_average(two_plus_cos) == 2
    # sin^2 t = 1/2 - cos(2t)/2
    sin_sq = TrigPolynomial.from_pairs([(0, 0.5), (2, -0.25), (-2, -0.25)])
    assert time_average(sin_sq) == 0.5


def test_time_derivative():
    t = 2 * np.pi * np.arange(32) / 32
    c = TrigPolynomial.cosine(3)
    np.testing.assert_allclose(
        time_derivative(c).sample(t), -3 * np.sin(3 * t), atol=1e-13
    )
    np.testing.assert_allclose(
        time_derivative(c, 2).sample(t), -9 * np.cos(3 * t), atol=1e-13
    )


@given(
    st.dictionaries(
        st.integers(-6, 6),
        st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
        max_size=6,
    )
)
def test_derivative_of_average_free_part(coeffs):
    trig = TrigPolynomial(coeffs)
    assert time_average(time_derivative(trig)) == 0


def test_trig_is_real():
    assert TrigPolynomial.cosine(2).is_real()
    assert TrigPolynomial.sine(1).is_real(tol=1e-15)
    assert not TrigPolynomial({1: 1.0}).is_real()


# ---------------------------------------------------------------- symbols


def _wave_symbol(alpha=1.0, beta=2.0):
    one = TrigPolynomial.constant(1.0)
    return MatrixSymbol(
        2,
        1,
        [
            [(TrigPolynomial.constant(0.0), parse_spatial_expr("1")), (one, parse_spatial_expr("1"))],
            [
                (one, parse_spatial_expr(f"-({beta * beta} * xi1^2)")),
                (one, parse_spatial_expr(f"{2 * alpha} * xi1")),
            ],
        ],
    )


def test_matrix_symbol_values_shape_and_content():
    sym = _wave_symbol()
    lat = Lattice(1, 4, 8)
    vals, errors = sym.values(lat)
    assert vals.shape == (8, 9, 2, 2)
    assert errors == []
    i = lat.index_of(3)
    np.testing.assert_allclose(vals[0, i], [[0, 1], [-36, 6]])


def test_matrix_symbol_eval_entry_error_context():
    sym = MatrixSymbol(
        1, 1, [[(TrigPolynomial.constant(1.0), parse_spatial_expr("1/xi1"))]]
    )
    with pytest.raises(EvalDomainError) as ei:
        sym.eval_entry(0, 0, 0.0, (0,))
    assert ei.value.entry == (0, 0)
    assert ei.value.xi == (0,)


def test_matrix_symbol_json_round_trip():
    sym = _wave_symbol(alpha=0.5, beta=1.5)
    d = sym.to_json_dict()
    sym2 = MatrixSymbol.from_json_dict(d)
    lat = Lattice(1, 3, 8)
    v1, _ = sym.values(lat)
    v2, _ = sym2.values(lat)
    np.testing.assert_allclose(v1, v2)


def test_matrix_symbol_negated():
    sym = _wave_symbol()
    lat = Lattice(1, 3, 8)
    v, _ = sym.values(lat)
    vn, _ = sym.negated().values(lat)
    np.testing.assert_allclose(vn, -v)


def test_matrix_symbol_validates_dimension():
    with pytest.raises(ValueError):
        MatrixSymbol(
            1, 1, [[(TrigPolynomial.constant(1.0), parse_spatial_expr("xi2"))]]
        )


# ---------------------------------------------------------------- lattice


def test_lattice_full_box_low_dim():
    lat = Lattice(1, 16, 8)
    assert len(lat) == 33
    assert (0,) in lat and (16,) in lat and (-16,) in lat
    lat2 = Lattice(2, 5, 8)
    assert len(lat2) == 11 * 11


def test_lattice_high_dim_subsample():
    lat = Lattice(3, 16, 8)
    assert (0, 0, 0) in lat
    # dyadic rays survive out to the radius
    assert (16, 16, 16) in lat and (-8, 0, 8) in lat
    assert len(lat) < 33**3
    # every dyadic annulus up to the radius is populated
    assert lat.annuli() == [0, 1, 2, 3, 4]


def test_lattice_is_deterministic():
    a = Lattice(3, 8, 8)
    b = Lattice(3, 8, 8)
    np.testing.assert_array_equal(a.points, b.points)


def test_lattice_validates_inputs():
    with pytest.raises(ValueError):
        Lattice(1, 8, 12)  # t grid must be a power of two
    with pytest.raises(ValueError):
        Lattice(0, 8, 8)
    with pytest.raises(ValueError):
        Lattice(1, 0, 8)


def test_lattice_annulus_indexing():
    lat = Lattice(1, 16, 8)
    i = lat.index_of(5)
    assert lat.annulus[i] == 2  # 4 <= 5 < 8
    assert lat.annulus[lat.index_of(0)] == -1


# ---------------------------------------------------------------- order fit


@pytest.mark.parametrize("p", [0, 1, 2, 3])
def test_monomial_order_recovery(p):
    lat = Lattice(1, 64, 8)
    vals = lat.norms**p
    fit = estimate_order(vals, lat)
    assert fit.verdict == "polynomial"
    assert abs(fit.slope - p) <= 0.05


def test_negative_order_recovery():
    lat = Lattice(1, 64, 8)
    with np.errstate(divide="ignore"):
        vals = np.where(lat.norms > 0, lat.norms**-3.0, np.nan)
    fit = estimate_order({tuple(p): v for p, v in zip(map(tuple, lat.points), vals) if not np.isnan(v)}, lat)
    assert fit.verdict == "polynomial"
    assert abs(fit.slope + 3) <= 0.05


def test_rapid_decay_detected():
    lat = Lattice(1, 64, 8)
    fit = estimate_order(np.exp(-lat.norms), lat)
    assert fit.verdict == "rapid_decay"
    assert superpolynomial_decay(fit)


def test_zero_data_is_rapid_decay():
    lat = Lattice(1, 64, 8)
    fit = estimate_order(np.zeros(len(lat)), lat)
    assert fit.verdict == "rapid_decay"
    assert fit.slope == float("-inf")


def test_superpolynomial_growth_probe():
    lat = Lattice(1, 64, 8)
    fit = estimate_order(np.exp(lat.norms), lat)
    assert superpolynomial_growth(fit)
    assert not superpolynomial_decay(fit)
    poly = estimate_order(lat.norms**2, lat)
    assert not superpolynomial_growth(poly)
    assert not superpolynomial_decay(poly)


def test_insufficient_annuli():
    lat = Lattice(1, 4, 8)  # annuli 0, 1, 2 only
    with pytest.raises(InsufficientData):
        estimate_order(np.ones(len(lat)), lat)


def test_irregular_fit_flagged():
    lat = Lattice(1, 64, 8)
    rng = np.random.default_rng(0)
    vals = lat.norms**2 * np.exp(rng.uniform(-6, 6, len(lat)))
    fit = estimate_order(vals, lat, DEFAULT_TOL.replace(fit_tol=0.5))
    assert fit.verdict == "irregular"
