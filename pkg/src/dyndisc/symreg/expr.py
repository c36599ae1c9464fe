"""Expression trees: evaluation, complexity, printing, parsing and algebraic
structure comparison.

Trees are immutable; mutation operators in the search rebuild the path from
the changed node to the root.  The operator set is deliberately small
(add, sub, mul, div and the unary inverse) so every expression is a
rational function of its inputs, which makes exact structure comparison
tractable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: denominators smaller than this poison a candidate (its loss becomes +inf)
DIV_GUARD = 1e-12

BINARY_OPS = ("add", "sub", "mul", "div")
UNARY_OPS = ("inv",)


class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    index: int


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    child: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


def add(a, b):
    return Binary("add", a, b)


def sub(a, b):
    return Binary("sub", a, b)


def mul(a, b):
    return Binary("mul", a, b)


def div(a, b):
    return Binary("div", a, b)


def inv(a):
    return Unary("inv", a)


def evaluate(e: Expr, X: np.ndarray) -> np.ndarray:
    """Evaluate on an (n, k) input matrix, returning an (n,) vector.

    Division (and inverse) by a value with magnitude below ``DIV_GUARD``
    yields +inf at that point rather than raising, so a candidate touching
    a singularity gets an infinite loss instead of crashing the search.
    """
    if isinstance(e, Const):
        return np.full(X.shape[0], e.value)
    if isinstance(e, Var):
        return X[:, e.index].astype(float, copy=True)
    with np.errstate(all="ignore"):
        if isinstance(e, Unary):
            c = evaluate(e.child, X)
            return np.where(np.abs(c) < DIV_GUARD, np.inf, 1.0 / c)
        a = evaluate(e.left, X)
        b = evaluate(e.right, X)
        if e.op == "add":
            return a + b
        if e.op == "sub":
            return a - b
        if e.op == "mul":
            return a * b
        if e.op == "div":
            return np.where(np.abs(b) < DIV_GUARD, np.inf, a / b)
    raise ValueError(f"unknown operator {e.op!r}")


def complexity(e: Expr, constant_complexity: int = 2) -> int:
    """Node-count complexity: operators and variables cost 1, constants
    cost ``constant_complexity``."""
    if isinstance(e, Const):
        return constant_complexity
    if isinstance(e, Var):
        return 1
    if isinstance(e, Unary):
        return 1 + complexity(e.child, constant_complexity)
    return 1 + complexity(e.left, constant_complexity) + complexity(e.right, constant_complexity)


def node_count(e: Expr) -> int:
    if isinstance(e, (Const, Var)):
        return 1
    if isinstance(e, Unary):
        return 1 + node_count(e.child)
    return 1 + node_count(e.left) + node_count(e.right)


def iter_paths(e: Expr, prefix: tuple = ()):
    """Yield (path, node) for every node; path entries are child slots."""
    yield prefix, e
    if isinstance(e, Unary):
        yield from iter_paths(e.child, prefix + (0,))
    elif isinstance(e, Binary):
        yield from iter_paths(e.left, prefix + (0,))
        yield from iter_paths(e.right, prefix + (1,))


def get_node(e: Expr, path: tuple) -> Expr:
    for slot in path:
        e = e.child if isinstance(e, Unary) else (e.left if slot == 0 else e.right)
    return e


def replace_node(e: Expr, path: tuple, new: Expr) -> Expr:
    if not path:
        return new
    slot, rest = path[0], path[1:]
    if isinstance(e, Unary):
        return Unary(e.op, replace_node(e.child, rest, new))
    if slot == 0:
        return Binary(e.op, replace_node(e.left, rest, new), e.right)
    return Binary(e.op, e.left, replace_node(e.right, rest, new))


def constant_paths(e: Expr) -> list[tuple]:
    return [p for p, n in iter_paths(e) if isinstance(n, Const)]


def constants(e: Expr) -> list[float]:
    return [n.value for _, n in iter_paths(e) if isinstance(n, Const)]


def with_constants(e: Expr, values) -> Expr:
    values = list(values)

    def go(node):
        if isinstance(node, Const):
            return Const(float(values.pop(0)))
        if isinstance(node, Var):
            return node
        if isinstance(node, Unary):
            return Unary(node.op, go(node.child))
        return Binary(node.op, go(node.left), go(node.right))

    out = go(e)
    if values:
        raise ValueError("more values than constants")
    return out


def fold_constants(e: Expr) -> Expr:
    """Collapse constant-only subtrees into single constants (skipping any
    fold that would produce a non-finite value)."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Unary):
        c = fold_constants(e.child)
        if isinstance(c, Const) and abs(c.value) >= DIV_GUARD:
            return Const(1.0 / c.value)
        return Unary(e.op, c)
    a, b = fold_constants(e.left), fold_constants(e.right)
    if isinstance(a, Const) and isinstance(b, Const):
        if e.op == "add":
            v = a.value + b.value
        elif e.op == "sub":
            v = a.value - b.value
        elif e.op == "mul":
            v = a.value * b.value
        elif abs(b.value) >= DIV_GUARD:
            v = a.value / b.value
        else:
            return Binary(e.op, a, b)
        if np.isfinite(v):
            return Const(v)
    return Binary(e.op, a, b)


# --------------------------------------------------------------------------
# printing and parsing (parenthesized infix, inv(x), full-precision constants)


def to_infix(e: Expr, var_names) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return var_names[e.index]
    if isinstance(e, Unary):
        return f"inv({to_infix(e.child, var_names)})"
    sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[e.op]
    return f"({to_infix(e.left, var_names)} {sym} {to_infix(e.right, var_names)})"


class _Parser:
    def __init__(self, text: str, var_names):
        self.text = text
        self.pos = 0
        self.vars = {name: i for i, name in enumerate(var_names)}

    def _skip(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek(self):
        self._skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _expect(self, ch):
        if self._peek() != ch:
            raise ValueError(f"expected {ch!r} at position {self.pos} in {self.text!r}")
        self.pos += 1

    def parse(self) -> Expr:
        e = self._expr()
        self._skip()
        if self.pos != len(self.text):
            raise ValueError(f"trailing input at position {self.pos} in {self.text!r}")
        return e

    def _expr(self) -> Expr:
        # addition level
        node = self._term()
        while self._peek() in "+-":
            op = "add" if self._peek() == "+" else "sub"
            self.pos += 1
            node = Binary(op, node, self._term())
        return node

    def _term(self) -> Expr:
        node = self._factor()
        while self._peek() in "*/":
            op = "mul" if self._peek() == "*" else "div"
            self.pos += 1
            node = Binary(op, node, self._factor())
        return node

    def _factor(self) -> Expr:
        ch = self._peek()
        if ch == "(":
            self.pos += 1
            node = self._expr()
            self._expect(")")
            return node
        if ch == "-":
            self.pos += 1
            f = self._factor()
            if isinstance(f, Const):
                return Const(-f.value)
            return Binary("sub", Const(0.0), f)
        # identifier or number
        start = self.pos
        if ch.isalpha() or ch == "_":
            while self.pos < len(self.text) and (self.text[self.pos].isalnum()
                                                 or self.text[self.pos] == "_"):
                self.pos += 1
            name = self.text[start:self.pos]
            if name == "inv":
                self._expect("(")
                node = self._expr()
                self._expect(")")
                return Unary("inv", node)
            if name not in self.vars:
                raise ValueError(f"unknown variable {name!r}")
            return Var(self.vars[name])
        while self.pos < len(self.text) and (self.text[self.pos].isdigit()
                                             or self.text[self.pos] in ".eE"
                                             or (self.text[self.pos] in "+-"
                                                 and self.text[self.pos - 1] in "eE")):
            self.pos += 1
        token = self.text[start:self.pos]
        try:
            return Const(float(token))
        except ValueError:
            raise ValueError(f"bad number {token!r} at position {start}") from None


def parse_expression(text: str, var_names) -> Expr:
    """Parse the infix grammar produced by :func:`to_infix`."""
    return _Parser(text, var_names).parse()


# --------------------------------------------------------------------------
# algebraic structure comparison
#
# Every expression is a rational function, so build (numerator, denominator)
# as multivariate polynomials (dict of exponent tuple -> coefficient,
# no cancellation) and compare two expressions by cross-multiplying:
# n1/d1 == n2/d2 exactly when n1*d2 == n2*d1 as polynomials.  Constants that
# differ within a relative tolerance leave coefficient-wise differences of
# the same order, which is what the tolerance below bounds.

_POLY_TERM_LIMIT = 400


class _PolyOverflow(Exception):
    pass


def _poly_add(p, q, sign=1.0):
    out = dict(p)
    for mono, c in q.items():
        out[mono] = out.get(mono, 0.0) + sign * c
    return out


def _poly_mul(p, q):
    out = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            mono = tuple(a + b for a, b in zip(m1, m2))
            out[mono] = out.get(mono, 0.0) + c1 * c2
    if len(out) > _POLY_TERM_LIMIT:
        raise _PolyOverflow
    return out


def _to_rational(e: Expr, n_vars: int):
    one = {(0,) * n_vars: 1.0}
    if isinstance(e, Const):
        return {(0,) * n_vars: float(e.value)}, dict(one)
    if isinstance(e, Var):
        mono = tuple(1 if i == e.index else 0 for i in range(n_vars))
        return {mono: 1.0}, dict(one)
    if isinstance(e, Unary):
        n, d = _to_rational(e.child, n_vars)
        return d, n
    n1, d1 = _to_rational(e.left, n_vars)
    n2, d2 = _to_rational(e.right, n_vars)
    if e.op == "add":
        return _poly_add(_poly_mul(n1, d2), _poly_mul(n2, d1)), _poly_mul(d1, d2)
    if e.op == "sub":
        return _poly_add(_poly_mul(n1, d2), _poly_mul(n2, d1), -1.0), _poly_mul(d1, d2)
    if e.op == "mul":
        return _poly_mul(n1, n2), _poly_mul(d1, d2)
    if e.op == "div":
        return _poly_mul(n1, d2), _poly_mul(d1, n2)
    raise ValueError(f"unknown operator {e.op!r}")


def _poly_clean(p):
    if not p:
        return {}
    biggest = max(abs(c) for c in p.values())
    if biggest == 0.0:
        return {}
    return {m: c for m, c in p.items() if abs(c) > 1e-9 * biggest}


def _max_index(e: Expr) -> int:
    return max((n.index for _, n in iter_paths(e) if isinstance(n, Var)), default=-1)


def canonical_rational(e: Expr, n_vars: int | None = None):
    """(numerator, denominator) polynomial dicts with tiny coefficients
    dropped; raises ValueError if the expansion blows past a size limit."""
    if n_vars is None:
        n_vars = _max_index(e) + 1
    try:
        n, d = _to_rational(e, n_vars)
    except _PolyOverflow:
        raise ValueError("expression expands past the polynomial size limit") from None
    return _poly_clean(n), _poly_clean(d)


def structure_match(e: Expr, reference: Expr, rel_tol: float = 0.05) -> bool:
    """True when ``e`` is algebraically the same rational function as
    ``reference`` with constants within ``rel_tol`` relative.

    Both sides are expanded to numerator/denominator polynomials and
    compared after cross-multiplication, so different but equivalent tree
    shapes (and common factors) do not matter.  Coefficients that are
    products of k constants compound the tolerance accordingly.
    """
    n_vars = max(_max_index(e), _max_index(reference)) + 1
    if n_vars == 0:
        n_vars = 1
    try:
        n1, d1 = canonical_rational(e, n_vars)
        n2, d2 = canonical_rational(reference, n_vars)
    except ValueError:
        return False
    try:
        lhs = _poly_clean(_poly_mul(n1, d2))
        rhs = _poly_clean(_poly_mul(n2, d1))
    except _PolyOverflow:
        return False
    if not lhs and not rhs:
        return True
    if set(lhs) != set(rhs):
        return False
    for mono, c2 in rhs.items():
        c1 = lhs[mono]
        if abs(c1 - c2) > rel_tol * max(abs(c1), abs(c2)):
            return False
    return True


def polynomial_support(e: Expr) -> set:
    """Monomial support of the numerator when the denominator is constant,
    else of the cross-multiplied form; used to test for term presence."""
    n, d = canonical_rational(e)
    return set(n)


def denominator_constant_ratio(e: Expr, var_index: int):
    """For expressions whose denominator cleans to ``a*x_i + b`` return
    b / a, else None.  Recovers the inner constant of saturation terms."""
    try:
        _, d = canonical_rational(e)
    except ValueError:
        return None
    if not d:
        return None
    n_vars = len(next(iter(d)))
    lin = tuple(1 if i == var_index else 0 for i in range(n_vars))
    const = (0,) * n_vars
    if set(d) != {lin, const} or d[lin] == 0.0:
        return None
    return d[const] / d[lin]
