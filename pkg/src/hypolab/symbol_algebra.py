"""Symbols of periodic operators and the lattice they are sampled on.

A matrix symbol Q(t, xi) has separable entries c(t) * q(xi): a trigonometric
polynomial in the periodic variable t times a closed-form expression in the
integer frequency vector xi. This module provides both factors, the m x m
symbol built from them, the finite frequency lattice used by every sweep, and
the dyadic log-log fitter that turns sampled magnitudes into growth or decay
orders.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .params import DEFAULT_TOL, DEFAULT_T_GRID, Tolerances

__all__ = [
    "TrigPolynomial",
    "SpatialExpr",
    "MatrixSymbol",
    "Lattice",
    "OrderFit",
    "ExprSyntaxError",
    "UnknownIdentifier",
    "EvalDomainError",
    "InsufficientData",
    "parse_spatial_expr",
    "time_average",
    "time_derivative",
    "estimate_order",
    "superpolynomial_growth",
    "superpolynomial_decay",
]


class ExprSyntaxError(SyntaxError):
    """Malformed expression source. ``offset`` is the 0-based byte position."""

    def __init__(self, message: str, source: str, offset: int):
        super().__init__(f"{message} (at byte {offset}: {source[offset:offset + 12]!r})")
        self.source = source
        self.offset = offset


class UnknownIdentifier(ExprSyntaxError):
    """Identifier outside the grammar (not xi<d>, abs_xi, sqrt, exp)."""


class EvalDomainError(ValueError):
    """A symbol entry hit a singular point (division by zero, sqrt of a
    negative number, ...). Carries enough context to point at the sample."""

    def __init__(self, reason: str, entry=None, t=None, xi=None):
        self.reason = reason
        self.entry = entry
        self.t = t
        self.xi = xi
        where = []
        if entry is not None:
            where.append(f"entry {entry}")
        if t is not None:
            where.append(f"t={t}")
        if xi is not None:
            where.append(f"xi={xi}")
        suffix = (" at " + ", ".join(where)) if where else ""
        super().__init__(f"{reason}{suffix}")


class InsufficientData(ValueError):
    """Fewer populated dyadic annuli than the fit requires."""


# ---------------------------------------------------------------------------
# trigonometric polynomials


class TrigPolynomial:
    """Finite Fourier sum c(t) = sum_k c_k e^{ikt} on [0, 2pi)."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs: Mapping[int, complex]):
        clean = {}
        for k, c in coeffs.items():
            if not isinstance(k, (int, np.integer)):
                raise TypeError(f"frequency {k!r} is not an integer")
            c = complex(c)
            if c != 0:
                clean[int(k)] = c
        self.coeffs = clean

    @classmethod
    def constant(cls, c: complex) -> "TrigPolynomial":
        return cls({0: c})

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, complex]]) -> "TrigPolynomial":
        out: dict[int, complex] = {}
        for k, c in pairs:
            out[int(k)] = out.get(int(k), 0.0) + complex(c)
        return cls(out)

    @classmethod
    def cosine(cls, k: int, amp: complex = 1.0) -> "TrigPolynomial":
        return cls({k: amp / 2, -k: amp / 2})

    @classmethod
    def sine(cls, k: int, amp: complex = 1.0) -> "TrigPolynomial":
        return cls({k: amp / (2j), -k: -amp / (2j)})

    def sample(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for k, c in self.coeffs.items():
            out += c * np.exp(1j * k * t)
        return out

    def derivative(self, alpha: int = 1) -> "TrigPolynomial":
        if alpha < 0:
            raise ValueError("derivative order must be >= 0")
        return TrigPolynomial({k: (1j * k) ** alpha * c for k, c in self.coeffs.items()})

    def average(self) -> complex:
        """Exact mean over one period: the k = 0 coefficient."""
        return self.coeffs.get(0, 0.0 + 0.0j)

    def degree(self) -> int:
        return max((abs(k) for k in self.coeffs), default=0)

    @property
    def is_constant(self) -> bool:
        return self.degree() == 0

    def is_real(self, tol: float = 0.0) -> bool:
        for k, c in self.coeffs.items():
            if abs(c - np.conj(self.coeffs.get(-k, 0.0))) > tol:
                return False
        return True

    def scaled(self, s: complex) -> "TrigPolynomial":
        return TrigPolynomial({k: s * c for k, c in self.coeffs.items()})

    def __add__(self, other: "TrigPolynomial") -> "TrigPolynomial":
        out = dict(self.coeffs)
        for k, c in other.coeffs.items():
            out[k] = out.get(k, 0.0) + c
        return TrigPolynomial(out)

    def __eq__(self, other) -> bool:
        return isinstance(other, TrigPolynomial) and self.coeffs == other.coeffs

    def __hash__(self):
        return hash(frozenset(self.coeffs.items()))

    def __repr__(self) -> str:
        items = ", ".join(f"{k}: {c}" for k, c in sorted(self.coeffs.items()))
        return f"TrigPolynomial({{{items}}})"

    def to_pairs(self) -> list[list]:
        return [[k, [c.real, c.imag]] for k, c in sorted(self.coeffs.items())]


def time_average(trig: TrigPolynomial) -> complex:
    """Mean of c(t) over one period, exact on the coefficient table."""
    return trig.average()


def time_derivative(trig: TrigPolynomial, alpha: int = 1) -> TrigPolynomial:
    """alpha-th t-derivative, (ik)^alpha on each coefficient."""
    return trig.derivative(alpha)


# ---------------------------------------------------------------------------
# spatial expressions: grammar
#
#   expr   := term (('+'|'-') term)*
#   term   := factor (('*'|'/') factor)*
#   factor := atom ('^' number)?
#   atom   := number | 'xi'<digit> | 'abs_xi' | func '(' expr ')'
#           | '(' expr ')' | '-' atom
#   func   := 'sqrt' | 'exp'
#
# Note the precedence pitfall the grammar forces: unary minus is part of the
# atom, so "-xi1^2" parses as (-xi1)^2. Write "-(xi1^2)" to negate a square.

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)

_XI_RE = re.compile(r"^xi([1-9])$")
_FUNCS = ("sqrt", "exp")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Xi:
    index: int  # 1-based component of xi


@dataclass(frozen=True)
class AbsXi:
    pass


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: float


@dataclass(frozen=True)
class Call:
    func: str  # sqrt | exp
    arg: "Node"


Node = Union[Num, Xi, AbsXi, Neg, BinOp, Pow, Call]


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.end() == m.start():
            stripped = src[pos:].lstrip()
            if not stripped:
                break
            at = len(src) - len(stripped)
            raise ExprSyntaxError("unexpected character", src, at)
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, text, off = self.peek()
        if kind != "op" or text != op:
            raise ExprSyntaxError(f"expected {op!r}", self.src, off)
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"trailing input {text!r}", self.src, off)
        return node

    def expr(self) -> Node:
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                node = BinOp(text, node, self.term())
            else:
                return node

    def term(self) -> Node:
        node = self.factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                node = BinOp(text, node, self.factor())
            else:
                return node

    def factor(self) -> Node:
        node = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            nkind, ntext, noff = self.peek()
            if nkind != "num":
                raise ExprSyntaxError("exponent must be a number literal", self.src, noff)
            self.advance()
            node = Pow(node, float(ntext))
        return node

    def atom(self) -> Node:
        kind, text, off = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "op" and text == "-":
            return Neg(self.atom())
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if kind == "ident":
            if text == "abs_xi":
                return AbsXi()
            m = _XI_RE.match(text)
            if m:
                return Xi(int(m.group(1)))
            if text in _FUNCS:
                self.expect_op("(")
                node = self.expr()
                self.expect_op(")")
                return Call(text, node)
            raise UnknownIdentifier(f"unknown identifier {text!r}", self.src, off)
        raise ExprSyntaxError(f"unexpected token {text!r}", self.src, off)


def _fmt_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _pretty(node: Node, level: int) -> str:
    # levels: 1 additive, 2 multiplicative, 3 atom position
    if isinstance(node, Num):
        return _fmt_number(node.value)
    if isinstance(node, Xi):
        return f"xi{node.index}"
    if isinstance(node, AbsXi):
        return "abs_xi"
    if isinstance(node, Call):
        return f"{node.func}({_pretty(node.arg, 1)})"
    if isinstance(node, Neg):
        inner = _pretty(node.arg, 3)
        if not isinstance(node.arg, (Num, Xi, AbsXi, Call, Neg)):
            inner = f"({inner})"
        return f"-{inner}"  # '-' atom is itself an atom, never needs parens
    if isinstance(node, Pow):
        base = _pretty(node.base, 3)
        if isinstance(node.base, (BinOp, Pow)):
            base = f"({base})"
        return f"{base}^{_fmt_number(node.exponent)}"
    if isinstance(node, BinOp):
        mylevel = 1 if node.op in "+-" else 2
        left = _pretty(node.left, mylevel)
        if _level_of(node.left) < mylevel:
            left = f"({left})"
        right = _pretty(node.right, mylevel)
        if _level_of(node.right) <= mylevel and isinstance(node.right, BinOp):
            # keep left association explicit: a - (b + c), a / (b * c)
            right = f"({right})"
        return f"{left} {node.op} {right}"
    raise TypeError(f"not an expression node: {node!r}")


def _level_of(node: Node) -> int:
    if isinstance(node, BinOp):
        return 1 if node.op in "+-" else 2
    return 3


def _eval_node(node: Node, pts: np.ndarray, reasons: np.ndarray) -> np.ndarray:
    """Vectorized evaluation over pts (N, n). Domain violations get NaN plus a
    reason recorded at the first offending operation."""

    def mark(mask, why):
        fresh = mask & (reasons == None)  # noqa: E711  (object array)
        reasons[fresh] = why

    if isinstance(node, Num):
        return np.full(pts.shape[0], node.value, dtype=float)
    if isinstance(node, Xi):
        if node.index > pts.shape[1]:
            raise EvalDomainError(f"xi{node.index} exceeds dimension n={pts.shape[1]}")
        return pts[:, node.index - 1].astype(float)
    if isinstance(node, AbsXi):
        return np.sqrt((pts.astype(float) ** 2).sum(axis=1))
    if isinstance(node, Neg):
        return -_eval_node(node.arg, pts, reasons)
    if isinstance(node, Call):
        arg = _eval_node(node.arg, pts, reasons)
        if node.func == "sqrt":
            bad = arg < 0
            mark(bad, "sqrt of a negative number")
            with np.errstate(invalid="ignore"):
                out = np.sqrt(np.where(bad, np.nan, arg))
            return out
        with np.errstate(over="ignore"):
            return np.exp(arg)
    if isinstance(node, Pow):
        base = _eval_node(node.base, pts, reasons)
        p = node.exponent
        integral = float(p).is_integer()
        bad = np.zeros(base.shape, dtype=bool)
        if not integral:
            bad |= base < 0
            mark(base < 0, "fractional power of a negative number")
        if p < 0:
            zero = base == 0
            bad |= zero
            mark(zero, "zero raised to a negative power")
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            out = np.where(bad, np.nan, base) ** p
        return out
    if isinstance(node, BinOp):
        a = _eval_node(node.left, pts, reasons)
        b = _eval_node(node.right, pts, reasons)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        zero = b == 0
        mark(zero, "division by zero")
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(zero, np.nan, a) / np.where(zero, 1.0, b)
    raise TypeError(f"not an expression node: {node!r}")


@dataclass(frozen=True)
class SpatialExpr:
    """Parsed closed-form symbol factor q(xi), real-valued where defined."""

    root: Node
    source: str
    declared_order: Optional[float] = None

    def pretty(self) -> str:
        return _pretty(self.root, 1)

    def __str__(self) -> str:
        return self.pretty()

    def max_xi_index(self) -> int:
        def walk(n: Node) -> int:
            if isinstance(n, Xi):
                return n.index
            if isinstance(n, Neg):
                return walk(n.arg)
            if isinstance(n, Call):
                return walk(n.arg)
            if isinstance(n, Pow):
                return walk(n.base)
            if isinstance(n, BinOp):
                return max(walk(n.left), walk(n.right))
            return 0

        return walk(self.root)

    def evaluate(self, points: np.ndarray) -> tuple[np.ndarray, list[tuple[int, str]]]:
        """Evaluate on an (N, n) integer array. Returns (values, errors) where
        errors lists (row, reason) for every singular point; those rows hold
        NaN. Singular points are reported, never dropped."""
        pts = np.atleast_2d(np.asarray(points))
        reasons = np.full(pts.shape[0], None, dtype=object)
        vals = _eval_node(self.root, pts, reasons)
        errors = [(int(i), str(reasons[i])) for i in np.nonzero(reasons != None)[0]]  # noqa: E711
        return vals, errors

    def evaluate_point(self, xi: Union[int, Sequence[int]]) -> float:
        pt = np.atleast_1d(np.asarray(xi, dtype=float))
        vals, errors = self.evaluate(pt.reshape(1, -1))
        if errors:
            raise EvalDomainError(errors[0][1], xi=tuple(int(v) for v in pt))
        return float(vals[0])

    def negated(self) -> "SpatialExpr":
        return SpatialExpr(Neg(self.root), f"-({self.source})", self.declared_order)


def parse_spatial_expr(source: str, declared_order: Optional[float] = None) -> SpatialExpr:
    """Parse q(xi) source text. Raises ExprSyntaxError (with a byte offset)
    on malformed input and UnknownIdentifier on names outside the grammar."""
    root = _Parser(source).parse()
    return SpatialExpr(root, source, declared_order)


_CONST_ONE = parse_spatial_expr("1")


# ---------------------------------------------------------------------------
# matrix symbols


class MatrixSymbol:
    """m x m symbol with separable entries c_jk(t) * q_jk(xi)."""

    def __init__(self, m: int, n: int, entries: Sequence[Sequence[tuple[TrigPolynomial, SpatialExpr]]]):
        if m < 1:
            raise ValueError("m must be >= 1")
        if not 1 <= n <= 9:
            raise ValueError("spatial dimension n must be in 1..9")
        if len(entries) != m or any(len(row) != m for row in entries):
            raise ValueError("entries must form an m x m array")
        for j, row in enumerate(entries):
            for k, (trig, expr) in enumerate(row):
                if expr.max_xi_index() > n:
                    raise ValueError(
                        f"entry ({j}, {k}) uses xi{expr.max_xi_index()} but n={n}"
                    )
        self.m = m
        self.n = n
        self.entries = tuple(tuple(row) for row in entries)

    @classmethod
    def scalar(cls, trig: TrigPolynomial, expr: SpatialExpr, n: int = 1) -> "MatrixSymbol":
        return cls(1, n, [[(trig, expr)]])

    @property
    def is_t_constant(self) -> bool:
        return all(trig.is_constant for row in self.entries for trig, _ in row)

    def max_time_degree(self) -> int:
        return max(trig.degree() for row in self.entries for trig, _ in row)

    def eval_entry(self, j: int, k: int, t, xi) -> complex:
        """Value of entry (j, k) at time t and frequency xi. Raises
        EvalDomainError tagged with (j, k, t, xi) at singular points."""
        trig, expr = self.entries[j][k]
        xi_t = (xi,) if isinstance(xi, (int, np.integer)) else tuple(int(v) for v in xi)
        try:
            q = expr.evaluate_point(xi_t)
        except EvalDomainError as e:
            raise EvalDomainError(e.reason, entry=(j, k), t=t, xi=xi_t) from None
        c = trig.sample(np.asarray(t, dtype=float))
        return c * q if c.ndim else complex(c) * q

    def values(self, lattice: "Lattice") -> tuple[np.ndarray, list]:
        """Sample the full symbol on the lattice.

        Returns (vals, errors): vals has shape (T, N, m, m); errors is a list
        of ((j, k), xi_tuple, reason) for singular samples, which hold NaN.
        """
        T = lattice.t.size
        N = lattice.points.shape[0]
        vals = np.zeros((T, N, self.m, self.m), dtype=complex)
        errors = []
        for j in range(self.m):
            for k in range(self.m):
                trig, expr = self.entries[j][k]
                q, errs = expr.evaluate(lattice.points)
                for row, reason in errs:
                    errors.append(((j, k), lattice.point_tuple(row), reason))
                c = trig.sample(lattice.t)
                vals[:, :, j, k] = c[:, None] * q[None, :]
        return vals, errors

    def negated(self) -> "MatrixSymbol":
        return MatrixSymbol(
            self.m,
            self.n,
            [[(trig.scaled(-1.0), expr) for trig, expr in row] for row in self.entries],
        )

    def to_json_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "entries": [
                [
                    {"time": {"fourier": trig.to_pairs()}, "space": expr.pretty()}
                    for trig, expr in row
                ]
                for row in self.entries
            ],
        }

    @classmethod
    def from_json_dict(cls, d: Mapping) -> "MatrixSymbol":
        m = int(d["m"])
        n = int(d["n"])
        rows = []
        for row in d["entries"]:
            out_row = []
            for cell in row:
                pairs = [(int(k), complex(re_, im_)) for k, (re_, im_) in cell["time"]["fourier"]]
                trig = TrigPolynomial.from_pairs(pairs)
                expr = parse_spatial_expr(cell["space"], cell.get("order"))
                out_row.append((trig, expr))
            rows.append(out_row)
        return cls(m, n, rows)


# ---------------------------------------------------------------------------
# the frequency lattice


def _is_power_of_two(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


class Lattice:
    """Finite deterministic sample of Z^n plus the uniform t grid.

    Full box [-R, R]^n for n <= 2; for n >= 3 a dyadic directional subsample
    (core box plus scaled sign patterns) keeps every annulus populated without
    exploding the point count. xi = 0 is always present. Iteration order is
    lexicographic, so runs are reproducible byte for byte.
    """

    def __init__(self, n: int, radius: int, t_count: int = DEFAULT_T_GRID):
        if n < 1 or n > 9:
            raise ValueError("n must be in 1..9")
        if radius < 1:
            raise ValueError("radius must be a positive integer")
        if not _is_power_of_two(t_count):
            raise ValueError("t grid size must be a power of two")
        self.n = n
        self.radius = int(radius)
        self.t = 2.0 * np.pi * np.arange(t_count) / t_count

        if n <= 2:
            pts = self._box_points(n, radius)
        else:
            pts = self._ray_points(n, radius)
        self._finalize(pts)

    @staticmethod
    def _box_points(n, radius):
        axes = [np.arange(-radius, radius + 1)] * n
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @staticmethod
    def _ray_points(n, radius):
        core = min(radius, 2)
        axes = [np.arange(-core, core + 1)] * n
        grids = np.meshgrid(*axes, indexing="ij")
        pts = {tuple(p) for p in np.stack([g.ravel() for g in grids], axis=1)}
        signs = [np.arange(-1, 2)] * n
        sgrids = np.meshgrid(*signs, indexing="ij")
        dirs = [d for d in np.stack([g.ravel() for g in sgrids], axis=1) if np.any(d)]
        k = 0
        while 2**k <= radius:
            for d in dirs:
                p = tuple(int(v) for v in (2**k) * d)
                if max(abs(v) for v in p) <= radius:
                    pts.add(p)
            k += 1
        return np.array(sorted(pts), dtype=np.int64)

    def _finalize(self, pts):
        pts = np.asarray(pts, dtype=np.int64)
        order = np.lexsort(pts.T[::-1])
        self.points = np.ascontiguousarray(pts[order])
        self.norms = np.sqrt((self.points.astype(float) ** 2).sum(axis=1))
        with np.errstate(divide="ignore"):
            ann = np.floor(np.log2(np.where(self.norms > 0, self.norms, 1.0)))
        self.annulus = np.where(self.norms > 0, ann, -1).astype(int)
        self._index = {tuple(int(v) for v in p): i for i, p in enumerate(self.points)}

    @classmethod
    def from_points(cls, n: int, points, t_count: int = DEFAULT_T_GRID) -> "Lattice":
        """Lattice over an explicit point set (deduplicated, sorted). Used to
        restrict sweeps, e.g. dropping frequencies with flagged crossings."""
        if not _is_power_of_two(t_count):
            raise ValueError("t grid size must be a power of two")
        pts = np.asarray(sorted({tuple(int(v) for v in p) for p in points}), dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] != n:
            raise ValueError(f"points must have {n} components each")
        obj = cls.__new__(cls)
        obj.n = n
        obj.radius = int(np.max(np.abs(pts))) if pts.size else 0
        obj.t = 2.0 * np.pi * np.arange(t_count) / t_count
        obj._finalize(pts)
        return obj

    def restricted(self, keep_mask) -> "Lattice":
        return Lattice.from_points(self.n, self.points[np.asarray(keep_mask, bool)], self.t.size)

    @property
    def t_count(self) -> int:
        return self.t.size

    def __len__(self) -> int:
        return self.points.shape[0]

    def point_tuple(self, i: int) -> tuple:
        return tuple(int(v) for v in self.points[i])

    def index_of(self, xi) -> int:
        key = (int(xi),) if isinstance(xi, (int, np.integer)) else tuple(int(v) for v in xi)
        return self._index[key]

    def __contains__(self, xi) -> bool:
        key = (int(xi),) if isinstance(xi, (int, np.integer)) else tuple(int(v) for v in xi)
        return key in self._index

    def annuli(self) -> list[int]:
        return sorted(int(a) for a in set(self.annulus) if a >= 0)


# ---------------------------------------------------------------------------
# dyadic order estimation

_LOG_FLOOR = 1e-300


@dataclass
class OrderFit:
    """Least-squares order of |values| against |xi| on dyadic annuli.

    verdict is one of 'polynomial', 'rapid_decay', 'irregular'. slope is the
    fitted exponent (values ~ |xi|^slope); for identically-zero data it is
    -inf and the verdict is 'rapid_decay'.
    """

    slope: float
    intercept: float
    residual: float
    verdict: str
    annuli: list[tuple[float, float]] = field(default_factory=list)  # (radius, stat)
    windowed: list[float] = field(default_factory=list)
    statistic: str = "max"

    @property
    def order(self) -> float:
        return self.slope

    def to_json_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "verdict": self.verdict,
            "annuli": [[r, v] for r, v in self.annuli],
            "windowed_slopes": self.windowed,
            "statistic": self.statistic,
        }


def _coerce_values(values, lattice: Lattice) -> np.ndarray:
    if isinstance(values, Mapping):
        out = np.full(len(lattice), np.nan)
        for xi, v in values.items():
            out[lattice.index_of(xi)] = v
        return out
    arr = np.asarray(values, dtype=float)
    if arr.shape != (len(lattice),):
        raise ValueError(f"expected {len(lattice)} values aligned with the lattice")
    return arr


def annulus_statistic(values, lattice: Lattice, statistic: str = "max") -> list[tuple[float, float]]:
    """Per-annulus (radius, stat) pairs. radius is the |xi| of the sample
    attaining the statistic, so pure monomials (growing or decaying) fit
    their exponent exactly. xi = 0 and NaN samples are excluded."""
    vals = _coerce_values(values, lattice)
    out = []
    for a in lattice.annuli():
        mask = (lattice.annulus == a) & ~np.isnan(vals)
        if not mask.any():
            continue
        sub = vals[mask]
        i = int(np.argmax(sub) if statistic == "max" else np.argmin(sub))
        out.append((float(lattice.norms[mask][i]), float(sub[i])))
    return out


def estimate_order(
    values,
    lattice: Lattice,
    tol: Tolerances = DEFAULT_TOL,
    statistic: str = "max",
    min_annuli: int = 4,
) -> OrderFit:
    """Fit log(stat) against log(radius) over the dyadic annuli.

    Needs at least ``min_annuli`` populated annuli (InsufficientData below
    that). 'rapid_decay' means the tail windowed slopes are steeper than
    -N_probe; 'irregular' flags a fit whose worst deviation exceeds fit_tol
    in log units.
    """
    stats = annulus_statistic(values, lattice, statistic)
    return order_fit_from_stats(stats, tol, statistic, min_annuli)


def order_fit_from_stats(
    stats: list[tuple[float, float]],
    tol: Tolerances = DEFAULT_TOL,
    statistic: str = "max",
    min_annuli: int = 4,
) -> OrderFit:
    """Same fit on precomputed (radius, stat) pairs, one per annulus, for
    sweeps too large to hold as a Lattice (streaming scans keep only the
    per-annulus statistic)."""
    if len(stats) < min_annuli:
        raise InsufficientData(
            f"need {min_annuli} populated dyadic annuli, found {len(stats)}"
        )
    radii = np.array([r for r, _ in stats])
    vals = np.array([v for _, v in stats])

    if np.all(vals <= _LOG_FLOOR):
        return OrderFit(float("-inf"), 0.0, 0.0, "rapid_decay", stats, [], statistic)

    # a tail of exact zeros means the family died beyond resolution; that is
    # decay faster than any measurable rate, provided it was falling before
    died = vals[-1] <= _LOG_FLOOR
    last_nz = int(np.nonzero(vals > _LOG_FLOOR)[0][-1])
    falling_before = last_nz == 0 or vals[last_nz] <= vals[0]

    x = np.log(radii)
    y = np.log(np.maximum(vals, _LOG_FLOOR))
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.max(np.abs(y - (slope * x + intercept))))
    windowed = list(np.diff(y) / np.diff(x))

    if died and falling_before:
        verdict = "rapid_decay"
    elif len(windowed) >= 2 and all(w <= -tol.N_probe for w in windowed[-2:]):
        verdict = "rapid_decay"
    elif residual <= tol.fit_tol:
        verdict = "polynomial"
    else:
        verdict = "irregular"
    return OrderFit(float(slope), float(intercept), residual, verdict, stats, windowed, statistic)


def superpolynomial_growth(fit: OrderFit, tol: Tolerances = DEFAULT_TOL) -> bool:
    """Tail slopes increase and the last one beats every probed polynomial."""
    w = fit.windowed
    if len(w) < 3:
        return False
    a, b, c = w[-3:]
    return a < b < c and c > tol.N_probe


def superpolynomial_decay(fit: OrderFit, tol: Tolerances = DEFAULT_TOL) -> bool:
    """Tail slopes keep falling past -M_cap: decay faster than any fixed
    polynomial loss, the signature of a non-tame lower bound."""
    if fit.slope == float("-inf"):
        return True
    w = fit.windowed
    if len(w) < 3:
        return False
    a, b, c = w[-3:]
    return a > b > c and c < -tol.M_cap
