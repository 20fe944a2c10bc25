"""Text DSL for ODE models.

A model file looks like::

    name: lotka_volterra
    states: x1, x2
    params: psi1, psi2, psi3, psi4
    init: x1 = 100, x2 = 120, psi1 = 0.6     # optional default guesses
    fixed: psi4 = 1.1                         # optional known values
    x1' = psi2*psi3*x1*x2 - psi4*x1
    x2' = psi1*x2 - psi2*x1*x2

Operator precedence, tightest first: ``^`` (right-assoc), unary minus,
``* /``, ``+ -``.  ``t`` is reserved for time.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping

from .expr import (
    FUNCTIONS,
    Binary,
    Const,
    Expr,
    ParamRef,
    StateRef,
    TimeRef,
    Unary,
    differentiate,
    evaluate,
    max_indices,
    render,
)

RESERVED = {"t", *FUNCTIONS}
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class ModelError(ValueError):
    """Semantic problem in a model definition."""


class ModelSyntaxError(ModelError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


# --------------------------------------------------------------------------
# tokenizer / expression parser
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    col: int  # 1-based


@dataclass(frozen=True)
class _Name(Expr):
    """Unresolved identifier; replaced by a state/param/time reference."""

    name: str
    col: int


def _tokenize(text: str, line: int, col0: int) -> list[_Tok]:
    toks, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ModelSyntaxError(f"unexpected character {text[pos]!r}", line, col0 + pos)
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, m.group(), col0 + pos))
        pos = m.end()
    toks.append(_Tok("end", "", col0 + len(text)))
    return toks


class _ExprParser:
    def __init__(self, text: str, line: int, col0: int = 1):
        self.toks = _tokenize(text, line, col0)
        self.i = 0
        self.line = line

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, tok: _Tok, what: str):
        where = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ModelSyntaxError(f"{what}, found {where}", self.line, tok.col)

    def parse(self) -> Expr:
        e = self.additive()
        if self.peek().kind != "end":
            self.fail(self.peek(), "expected operator")
        return e

    def additive(self):
        e = self.term()
        while self.peek().text in ("+", "-") and self.peek().kind == "op":
            op = "add" if self.take().text == "+" else "sub"
            e = Binary(op, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.peek().text in ("*", "/") and self.peek().kind == "op":
            op = "mul" if self.take().text == "*" else "div"
            e = Binary(op, e, self.unary())
        return e

    def unary(self):
        tok = self.peek()
        if tok.kind == "op" and tok.text in ("-", "+"):
            self.take()
            arg = self.unary()
            return Unary("neg", arg) if tok.text == "-" else arg
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.take()
            return Binary("pow", base, self.unary())
        return base

    def primary(self):
        tok = self.take()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "ident":
            if tok.text in FUNCTIONS:
                if not (self.peek().kind == "op" and self.peek().text == "("):
                    self.fail(self.peek(), f"expected '(' after {tok.text}")
                self.take()
                arg = self.additive()
                self.expect(")")
                return Unary(tok.text, arg)
            return _Name(tok.text, tok.col)
        if tok.kind == "op" and tok.text == "(":
            e = self.additive()
            self.expect(")")
            return e
        self.fail(tok, "expected number, name or '('")

    def expect(self, text):
        tok = self.take()
        if not (tok.kind == "op" and tok.text == text):
            self.fail(tok, f"expected {text!r}")


def parse_expression(text: str, line: int = 1, col0: int = 1) -> Expr:
    """Parse an expression; identifiers stay unresolved (see ``resolve``)."""
    return _ExprParser(text, line, col0).parse()


def resolve(e: Expr, states: Mapping[str, int], params: Mapping[str, int], line: int = 0) -> Expr:
    if isinstance(e, _Name):
        if e.name == "t":
            return TimeRef()
        if e.name in states:
            return StateRef(states[e.name])
        if e.name in params:
            return ParamRef(params[e.name])
        raise ModelError(f"line {line}, column {e.col}: undeclared name {e.name!r}")
    if isinstance(e, Unary):
        return Unary(e.op, resolve(e.arg, states, params, line))
    if isinstance(e, Binary):
        return Binary(
            e.op,
            resolve(e.left, states, params, line),
            resolve(e.right, states, params, line),
        )
    return e


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------


def _table(n: int, fn):
    return tuple(fn(i) for i in range(n))


@dataclass(frozen=True, eq=False)
class OdeModel:
    """An ODE system ``x' = F(x, psi, t)`` with cached symbolic partials.

    ``eta = (xi, psi)`` orders initial values before rate parameters.
    Derivative tables are nested tuples indexed ``[j][k]`` (and
    ``[j][k][l]``) where ``j`` is the RHS component.
    """

    name: str
    states: tuple[str, ...]
    params: tuple[str, ...]
    rhs: tuple[Expr, ...]
    init: Mapping[str, float] = field(default_factory=dict)
    fixed: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "rhs", tuple(self.rhs))
        object.__setattr__(self, "init", dict(self.init))
        object.__setattr__(self, "fixed", dict(self.fixed))
        if not self.states:
            raise ModelError("model declares no states")
        if len(self.rhs) != len(self.states):
            raise ModelError("one right-hand side per state is required")
        names = self.states + self.params
        if len(set(names)) != len(names):
            raise ModelError("state and parameter names must be unique")
        for nm in names:
            if not _IDENT.match(nm) or nm in RESERVED:
                raise ModelError(f"invalid name {nm!r}")
        for j, e in enumerate(self.rhs):
            s, p = max_indices(e)
            if s >= self.d or p >= self.p:
                raise ModelError(f"rhs of {self.states[j]!r} references an index out of range")
        for key in (*self.init, *self.fixed):
            if key not in names:
                raise ModelError(f"unknown name {key!r} in init/fixed")

    @property
    def d(self) -> int:
        return len(self.states)

    @property
    def p(self) -> int:
        return len(self.params)

    @property
    def eta_names(self) -> tuple[str, ...]:
        return self.states + self.params

    @property
    def theta_names(self) -> tuple[str, ...]:
        return tuple(f"sigma2_{s}" for s in self.states) + self.eta_names

    # derivative cache --------------------------------------------------

    @cached_property
    def dF_dx(self):
        return _table(self.d, lambda j: _table(self.d, lambda k: differentiate(self.rhs[j], StateRef(k))))

    @cached_property
    def dF_dpsi(self):
        return _table(self.d, lambda j: _table(self.p, lambda a: differentiate(self.rhs[j], ParamRef(a))))

    @cached_property
    def d2F_dx2(self):
        return _table(
            self.d,
            lambda j: _table(self.d, lambda k: _table(self.d, lambda l: differentiate(self.dF_dx[j][k], StateRef(l)))),
        )

    @cached_property
    def d2F_dxdpsi(self):
        return _table(
            self.d,
            lambda j: _table(self.d, lambda k: _table(self.p, lambda a: differentiate(self.dF_dx[j][k], ParamRef(a)))),
        )

    @cached_property
    def d2F_dpsi2(self):
        return _table(
            self.d,
            lambda j: _table(self.p, lambda a: _table(self.p, lambda b: differentiate(self.dF_dpsi[j][a], ParamRef(b)))),
        )

    # convenience ---------------------------------------------------------

    def eval_rhs(self, state, params, t: float = 0.0) -> list[float]:
        return [evaluate(e, state, params, t) for e in self.rhs]

    def render(self) -> str:
        lines = [
            f"name: {self.name}",
            f"states: {', '.join(self.states)}",
        ]
        if self.params:
            lines.append(f"params: {', '.join(self.params)}")
        if self.init:
            lines.append("init: " + ", ".join(f"{k} = {v!r}" for k, v in self.init.items()))
        if self.fixed:
            lines.append("fixed: " + ", ".join(f"{k} = {v!r}" for k, v in self.fixed.items()))
        for s, e in zip(self.states, self.rhs):
            lines.append(f"{s}' = {render(e, self.states, self.params)}")
        return "\n".join(lines) + "\n"

    @cached_property
    def kernel(self):
        from .integrator import compile_kernel

        return compile_kernel(self)

    def __getstate__(self):
        # compiled kernels and cached derivative tables are rebuilt on demand
        keep = ("name", "states", "params", "rhs", "init", "fixed")
        return {k: self.__dict__[k] for k in keep}

    def __setstate__(self, state):
        self.__dict__.update(state)


# --------------------------------------------------------------------------
# file parser
# --------------------------------------------------------------------------

_HEADER = re.compile(r"^\s*(name|states|params|init|fixed)\s*:(.*)$")
_RHS = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*'\s*=(.*)$")


def _ident_list(body: str, lineno: int, col0: int) -> list[str]:
    body = body.strip()
    if not body:
        return []
    out = []
    for item in body.split(","):
        item = item.strip()
        if not _IDENT.match(item):
            raise ModelSyntaxError(f"invalid identifier {item!r}", lineno, col0)
        out.append(item)
    return out


def _assignments(body: str, lineno: int, col0: int) -> dict[str, float]:
    out = {}
    for item in filter(None, (s.strip() for s in body.split(","))):
        name, eq, value = item.partition("=")
        name = name.strip()
        if not eq or not _IDENT.match(name):
            raise ModelSyntaxError(f"expected NAME = VALUE, found {item!r}", lineno, col0)
        try:
            out[name] = float(value)
        except ValueError:
            raise ModelSyntaxError(f"bad number {value.strip()!r}", lineno, col0) from None
    return out


def parse_model(text: str) -> OdeModel:
    """Parse model-file text into an :class:`OdeModel`."""
    name = "model"
    states: list[str] | None = None
    params: list[str] = []
    init: dict[str, float] = {}
    fixed: dict[str, float] = {}
    raw_rhs: dict[str, tuple[Expr, int]] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        m = _RHS.match(line)
        if m:
            target = m.group(1)
            col0 = m.start(2) + 1
            e = parse_expression(m.group(2), lineno, col0)
            if target in raw_rhs:
                raise ModelError(f"line {lineno}: duplicate right-hand side for {target!r}")
            raw_rhs[target] = (e, lineno)
            continue
        m = _HEADER.match(line)
        if m:
            key, body, col0 = m.group(1), m.group(2), m.start(2) + 1
            if key == "name":
                name = body.strip() or name
            elif key == "states":
                states = _ident_list(body, lineno, col0)
            elif key == "params":
                params = _ident_list(body, lineno, col0)
            elif key == "init":
                init.update(_assignments(body, lineno, col0))
            else:
                fixed.update(_assignments(body, lineno, col0))
            continue
        col = len(line) - len(line.lstrip()) + 1
        raise ModelSyntaxError("expected a header or a `state' = expression` line", lineno, col)

    if states is None:
        raise ModelError("missing `states:` header")
    s_index = {s: i for i, s in enumerate(states)}
    p_index = {p: i for i, p in enumerate(params)}
    for target, (_, lineno) in raw_rhs.items():
        if target not in s_index:
            raise ModelError(f"line {lineno}: right-hand side for undeclared state {target!r}")
    missing = [s for s in states if s not in raw_rhs]
    if missing:
        raise ModelError(f"no right-hand side for state(s): {', '.join(missing)}")
    rhs = [resolve(raw_rhs[s][0], s_index, p_index, raw_rhs[s][1]) for s in states]
    return OdeModel(name, tuple(states), tuple(params), tuple(rhs), init, fixed)


def load_model(path) -> OdeModel:
    return parse_model(Path(path).read_text(encoding="utf-8"))


def bundled_model_names() -> list[str]:
    """Names of the model files shipped with the package."""
    from importlib.resources import files

    root = files("odesel") / "data" / "models"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ode"))


def bundled_model(name: str) -> OdeModel:
    """Load a shipped model file by name (without the ``.ode`` suffix)."""
    from importlib.resources import files

    path = files("odesel") / "data" / "models" / f"{name}.ode"
    if not path.is_file():
        raise ModelError(f"no bundled model {name!r}; available: {', '.join(bundled_model_names())}")
    return parse_model(path.read_text(encoding="utf-8"))
