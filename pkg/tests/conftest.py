import os

import mpmath
import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from odesel.expr import Binary, Const, ParamRef, StateRef, TimeRef, Unary

settings.register_profile(
    "odesel", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "odesel"))

mpmath.mp.dps = 40

D, P = 2, 3  # dimensions used by random expressions


_MP_UNARY = {
    "neg": lambda a: -a,
    "exp": mpmath.exp,
    "log": mpmath.log,
    "sqrt": mpmath.sqrt,
    "sin": mpmath.sin,
    "cos": mpmath.cos,
}
_MP_BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "pow": lambda a, b: a**b,
}


def mp_eval(e, x, p, t=0):
    """High-precision evaluator written independently of the package."""
    if isinstance(e, Const):
        return mpmath.mpf(e.value)
    if isinstance(e, StateRef):
        return x[e.index]
    if isinstance(e, ParamRef):
        return p[e.index]
    if isinstance(e, TimeRef):
        return t
    if isinstance(e, Unary):
        return _MP_UNARY[e.op](mp_eval(e.arg, x, p, t))
    if isinstance(e, Binary):
        return _MP_BINARY[e.op](mp_eval(e.left, x, p, t), mp_eval(e.right, x, p, t))
    raise TypeError(e)


def mp_partial(e, x, p, t, wrt):
    """Numerical partial derivative at 40 digits; ``wrt`` = ('x'|'p', i)."""
    kind, i = wrt
    x = [mpmath.mpf(v) for v in x]
    p = [mpmath.mpf(v) for v in p]

    def f(v):
        xx, pp = list(x), list(p)
        (xx if kind == "x" else pp)[i] = v
        return mp_eval(e, xx, pp, mpmath.mpf(t))

    return mpmath.diff(f, (x if kind == "x" else p)[i])


# leaves and smooth operators; log/sqrt only see exp(...) > 0 arguments
_leaf = st.one_of(
    st.floats(-3, 3, allow_nan=False).map(lambda v: Const(round(v, 3))),
    st.integers(0, D - 1).map(StateRef),
    st.integers(0, P - 1).map(ParamRef),
    st.just(TimeRef()),
)


def _extend(children):
    return st.one_of(
        st.tuples(st.sampled_from(["add", "sub", "mul"]), children, children).map(lambda a: Binary(*a)),
        st.tuples(children, children).map(lambda a: Binary("div", a[0], Binary("add", Const(2.0), Unary("cos", a[1])))),
        st.tuples(st.sampled_from(["sin", "cos", "neg"]), children).map(lambda a: Unary(*a)),
        children.map(lambda c: Unary("exp", Unary("sin", c))),
        children.map(lambda c: Unary("log", Binary("add", Const(1.5), Unary("sin", c)))),
        children.map(lambda c: Unary("sqrt", Binary("add", Const(1.5), Unary("cos", c)))),
        st.tuples(children, st.integers(0, 3)).map(lambda a: Binary("pow", a[0], Const(float(a[1])))),
        children.map(lambda c: Binary("pow", Binary("add", Const(2.0), Unary("sin", c)), Unary("cos", c))),
    )


expressions = st.recursive(_leaf, _extend, max_leaves=8)
points = st.tuples(
    st.lists(st.floats(-1.5, 1.5), min_size=D, max_size=D),
    st.lists(st.floats(-1.5, 1.5), min_size=P, max_size=P),
    st.floats(0, 2),
)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod._line(k, *mod.RESULTS[k]))
