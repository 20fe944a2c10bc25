"""Expression trees for ODE right-hand sides.

Nodes are immutable and hashable. State and parameter references carry a
0-based index into the enclosing model's state/parameter lists; names live
on the model, so rendering takes the name lists as arguments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

UNARY_OPS = ("neg", "exp", "log", "sqrt", "sin", "cos")
BINARY_OPS = ("add", "sub", "mul", "div", "pow")
FUNCTIONS = ("exp", "log", "sqrt", "sin", "cos")

_NP_UNARY = {
    "neg": np.negative,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "sin": np.sin,
    "cos": np.cos,
}
_NP_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "pow": np.power,
}


class Expr:
    """Base class of all expression nodes."""

    __slots__ = ()

    def __add__(self, other):
        return Binary("add", self, as_expr(other))

    def __radd__(self, other):
        return Binary("add", as_expr(other), self)

    def __sub__(self, other):
        return Binary("sub", self, as_expr(other))

    def __rsub__(self, other):
        return Binary("sub", as_expr(other), self)

    def __mul__(self, other):
        return Binary("mul", self, as_expr(other))

    def __rmul__(self, other):
        return Binary("mul", as_expr(other), self)

    def __truediv__(self, other):
        return Binary("div", self, as_expr(other))

    def __rtruediv__(self, other):
        return Binary("div", as_expr(other), self)

    def __pow__(self, other):
        return Binary("pow", self, as_expr(other))

    def __neg__(self):
        return Unary("neg", self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True, eq=True)
class StateRef(Expr):
    index: int


@dataclass(frozen=True, eq=True)
class ParamRef(Expr):
    index: int


@dataclass(frozen=True, eq=True)
class TimeRef(Expr):
    pass


@dataclass(frozen=True, eq=True)
class Unary(Expr):
    op: str
    arg: Expr

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise ValueError(f"unknown unary op {self.op!r}")


@dataclass(frozen=True, eq=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ValueError(f"unknown binary op {self.op!r}")


Variable = Union[StateRef, ParamRef]

ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return Const(float(value))


def children(e: Expr) -> tuple:
    if isinstance(e, Unary):
        return (e.arg,)
    if isinstance(e, Binary):
        return (e.left, e.right)
    return ()


def max_indices(e: Expr) -> tuple[int, int]:
    """Largest state and parameter index referenced (-1 when none)."""
    if isinstance(e, StateRef):
        return e.index, -1
    if isinstance(e, ParamRef):
        return -1, e.index
    s, p = -1, -1
    for c in children(e):
        cs, cp = max_indices(c)
        s, p = max(s, cs), max(p, cp)
    return s, p


def depends_on(e: Expr, var: Expr) -> bool:
    if e == var:
        return True
    return any(depends_on(c, var) for c in children(e))


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------


def evaluate(e: Expr, state, params, t: float = 0.0) -> float:
    """Evaluate ``e`` with IEEE semantics: non-finite results propagate."""
    with np.errstate(all="ignore"):
        return float(_eval(e, state, params, np.float64(t)))


def _eval(e, state, params, t):
    if isinstance(e, Const):
        return np.float64(e.value)
    if isinstance(e, StateRef):
        return np.float64(state[e.index])
    if isinstance(e, ParamRef):
        return np.float64(params[e.index])
    if isinstance(e, TimeRef):
        return t
    if isinstance(e, Unary):
        return _NP_UNARY[e.op](_eval(e.arg, state, params, t))
    if isinstance(e, Binary):
        return _NP_BINARY[e.op](
            _eval(e.left, state, params, t), _eval(e.right, state, params, t)
        )
    raise TypeError(f"not an expression: {e!r}")


# --------------------------------------------------------------------------
# simplification
# --------------------------------------------------------------------------


def _is_const(e, value=None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def _fold(op: str, *values: float) -> Const:
    with np.errstate(all="ignore"):
        if len(values) == 1:
            return Const(float(_NP_UNARY[op](np.float64(values[0]))))
        a, b = (np.float64(v) for v in values)
        return Const(float(_NP_BINARY[op](a, b)))


def _simplify_once(e: Expr) -> Expr:
    if isinstance(e, Unary):
        a = _simplify_once(e.arg)
        if isinstance(a, Const):
            return _fold(e.op, a.value)
        if e.op == "neg" and isinstance(a, Unary) and a.op == "neg":
            return a.arg
        return Unary(e.op, a)

    if not isinstance(e, Binary):
        return e

    a, b = _simplify_once(e.left), _simplify_once(e.right)
    op = e.op
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold(op, a.value, b.value)

    if op == "add":
        if _is_const(a, 0.0):
            return b
        if _is_const(b, 0.0):
            return a
        if isinstance(b, Unary) and b.op == "neg":
            return Binary("sub", a, b.arg)
    elif op == "sub":
        if _is_const(b, 0.0):
            return a
        if _is_const(a, 0.0):
            return Unary("neg", b)
        if isinstance(b, Unary) and b.op == "neg":
            return Binary("add", a, b.arg)
    elif op == "mul":
        if _is_const(a, 0.0) or _is_const(b, 0.0):
            return ZERO
        if _is_const(a, 1.0):
            return b
        if _is_const(b, 1.0):
            return a
        if _is_const(a, -1.0):
            return Unary("neg", b)
        if _is_const(b, -1.0):
            return Unary("neg", a)
        # constants to the left, then merge c1*(c2*e)
        if isinstance(b, Const):
            a, b = b, a
        if (
            isinstance(a, Const)
            and isinstance(b, Binary)
            and b.op == "mul"
            and isinstance(b.left, Const)
        ):
            return Binary("mul", _fold("mul", a.value, b.left.value), b.right)
    elif op == "div":
        if _is_const(b, 1.0):
            return a
        if _is_const(a, 0.0):
            return ZERO
    elif op == "pow":
        if _is_const(b, 1.0):
            return a
        if _is_const(b, 0.0):
            return ONE
    return Binary(op, a, b)


def simplify(e: Expr) -> Expr:
    """Constant folding plus local identity rewrites, iterated to a fixpoint."""
    prev = None
    while prev != e:
        prev, e = e, _simplify_once(e)
    return e


# --------------------------------------------------------------------------
# differentiation
# --------------------------------------------------------------------------


def differentiate(e: Expr, wrt: Variable) -> Expr:
    """Exact symbolic partial derivative of ``e`` with respect to ``wrt``."""
    if not isinstance(wrt, (StateRef, ParamRef)):
        raise TypeError("can only differentiate with respect to a state or parameter")
    return simplify(_diff(e, wrt))


def _diff(e: Expr, v: Variable) -> Expr:
    if isinstance(e, (Const, TimeRef)):
        return ZERO
    if isinstance(e, (StateRef, ParamRef)):
        return ONE if e == v else ZERO
    if isinstance(e, Unary):
        a = e.arg
        da = simplify(_diff(a, v))
        if _is_const(da, 0.0):
            return ZERO
        if e.op == "neg":
            return Unary("neg", da)
        if e.op == "exp":
            return Binary("mul", Unary("exp", a), da)
        if e.op == "log":
            return Binary("div", da, a)
        if e.op == "sqrt":
            return Binary("div", da, Binary("mul", Const(2.0), Unary("sqrt", a)))
        if e.op == "sin":
            return Binary("mul", Unary("cos", a), da)
        if e.op == "cos":
            return Unary("neg", Binary("mul", Unary("sin", a), da))
    if isinstance(e, Binary):
        a, b = e.left, e.right
        da, db = simplify(_diff(a, v)), simplify(_diff(b, v))
        if e.op == "add":
            return Binary("add", da, db)
        if e.op == "sub":
            return Binary("sub", da, db)
        if e.op == "mul":
            return Binary("add", Binary("mul", da, b), Binary("mul", a, db))
        if e.op == "div":
            return Binary(
                "div",
                Binary("sub", Binary("mul", da, b), Binary("mul", a, db)),
                Binary("pow", b, Const(2.0)),
            )
        if e.op == "pow":
            if _is_const(db, 0.0):
                # power rule; exponent does not vary with v
                return Binary(
                    "mul",
                    Binary("mul", b, Binary("pow", a, Binary("sub", b, ONE))),
                    da,
                )
            # a^b = exp(b*log a); defined for a > 0 only
            g = Unary("exp", Binary("mul", b, Unary("log", a)))
            inner = Binary(
                "add",
                Binary("mul", db, Unary("log", a)),
                Binary("div", Binary("mul", b, da), a),
            )
            return Binary("mul", g, inner)
    raise TypeError(f"not an expression: {e!r}")


# --------------------------------------------------------------------------
# rendering / code generation
# --------------------------------------------------------------------------

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_SYM = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


def _fmt_const(v: float) -> str:
    if np.isnan(v):
        return "(0/0)"
    if np.isinf(v):
        return "(1/0)" if v > 0 else "(-1/0)"
    return repr(float(v))


def render(e: Expr, state_names: Sequence[str], param_names: Sequence[str]) -> str:
    """Render in the model-file expression syntax (re-parseable)."""
    return _render(e, state_names, param_names, pow_sym="^")


def to_source(e: Expr, x: str = "x", p: str = "p", t: str = "t") -> str:
    """Python/numba source for ``e`` using ``np.*`` functions and ``**``."""
    states = _IndexNames(x)
    params = _IndexNames(p)
    return _render(e, states, params, pow_sym="**", tname=t, fn_prefix="np.")


class _IndexNames:
    def __init__(self, base):
        self.base = base

    def __getitem__(self, i):
        return f"{self.base}[{i}]"


def _render(e, sn, pn, pow_sym, tname="t", fn_prefix=""):
    def r(node, parent_prec=0, right_of=None):
        if isinstance(node, Const):
            s = _fmt_const(node.value)
            if node.value < 0 or s.startswith("("):
                return f"({s})"
            return s
        if isinstance(node, StateRef):
            return sn[node.index]
        if isinstance(node, ParamRef):
            return pn[node.index]
        if isinstance(node, TimeRef):
            return tname
        if isinstance(node, Unary):
            if node.op == "neg":
                s = "-" + r(node.arg, _PREC["neg"])
                return f"({s})" if parent_prec >= _PREC["neg"] else s
            return f"{fn_prefix}{node.op}({r(node.arg)})"
        prec = _PREC[node.op]
        if node.op == "pow":
            # right-assoc: parenthesize a pow on the left
            s = f"{r(node.left, prec + 1)}{pow_sym}{r(node.right, prec)}"
        else:
            s = f"{r(node.left, prec)} {_SYM[node.op]} {r(node.right, prec + 1)}"
        return f"({s})" if prec < parent_prec else s

    return r(e)
